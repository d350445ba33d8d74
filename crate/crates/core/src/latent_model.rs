//! Quantized latents, scale partitions, histograms and discrete pmf tables.
//!
//! Side latents (the hyper-latent `z`) are held in a [`SymbolTensor`] and coded
//! channel by channel with a learned per-channel [`PmfTable`]. Main latents are
//! held in a [`GaussianLatentSet`]: mean-centred integer symbols, each tagged
//! with the index of its winning scale in a [`ScaleSet`]. Every element that
//! shares a scale index is coded with the same discretized zero-mean Gaussian.

use std::f64::consts::SQRT_2;

use thiserror::Error;

/// Smallest probability any table may assign to a symbol (2^-20).
pub const PMF_FLOOR: f64 = 1.0 / 1_048_576.0;

/// Tolerance on the total mass of a [`PmfTable`].
pub const PMF_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatentError {
    #[error("channel {channel} out of range (tensor has {channels} channels)")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("scale group {scale_index} has no members")]
    EmptyGroup { scale_index: usize },
    #[error("scale must be positive and finite, got {0}")]
    NonPositiveScale(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("symbol {symbol} outside alphabet [{lo}, {hi}]")]
    SymbolOutOfAlphabet { symbol: i32, lo: i32, hi: i32 },
    #[error("invalid alphabet [{lo}, {hi}]: need lo < hi and lo <= 0 <= hi")]
    InvalidAlphabet { lo: i32, hi: i32 },
    #[error("invalid scale set: {0}")]
    InvalidScaleSet(String),
    #[error("invalid pmf table: {0}")]
    InvalidPmf(String),
}

/// Inclusive integer symbol range `[lo, hi]`. Zero is always representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Alphabet {
    lo: i32,
    hi: i32,
}

impl Alphabet {
    pub fn new(lo: i32, hi: i32) -> Result<Self, LatentError> {
        if lo >= hi || lo > 0 || hi < 0 {
            return Err(LatentError::InvalidAlphabet { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// Symmetric alphabet `[-radius, radius]`.
    pub fn symmetric(radius: i32) -> Result<Self, LatentError> {
        Self::new(-radius, radius)
    }

    pub fn lo(&self) -> i32 {
        self.lo
    }

    pub fn hi(&self) -> i32 {
        self.hi
    }

    pub fn size(&self) -> usize {
        (i64::from(self.hi) - i64::from(self.lo) + 1) as usize
    }

    pub fn contains(&self, symbol: i32) -> bool {
        self.lo <= symbol && symbol <= self.hi
    }

    pub fn clamp(&self, symbol: i64) -> i32 {
        symbol.clamp(i64::from(self.lo), i64::from(self.hi)) as i32
    }

    pub fn check(&self, symbol: i32) -> Result<(), LatentError> {
        if self.contains(symbol) {
            Ok(())
        } else {
            Err(LatentError::SymbolOutOfAlphabet {
                symbol,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }

    /// Position of `symbol` in a table indexed from `lo`.
    #[inline]
    pub fn offset(&self, symbol: i32) -> usize {
        (i64::from(symbol) - i64::from(self.lo)) as usize
    }
}

/// Integer side-latent grid of shape `height × width × channels`.
///
/// Symbols are stored channel-major so that each channel slice is contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolTensor {
    height: usize,
    width: usize,
    channels: usize,
    alphabet: Alphabet,
    symbols: Vec<i32>,
}

impl SymbolTensor {
    /// Builds a tensor from channel-major symbols.
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        alphabet: Alphabet,
        symbols: Vec<i32>,
    ) -> Result<Self, LatentError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(LatentError::Shape(format!(
                "tensor dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if symbols.len() != expected {
            return Err(LatentError::Shape(format!(
                "expected {expected} symbols for {height}x{width}x{channels}, got {}",
                symbols.len()
            )));
        }
        for &s in &symbols {
            alphabet.check(s)?;
        }
        Ok(Self {
            height,
            width,
            channels,
            alphabet,
            symbols,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn slice_len(&self) -> usize {
        self.height * self.width
    }

    pub fn symbols(&self) -> &[i32] {
        &self.symbols
    }

    /// Row-major `height × width` slice of one channel.
    pub fn channel(&self, channel: usize) -> Result<&[i32], LatentError> {
        if channel >= self.channels {
            return Err(LatentError::ChannelOutOfRange {
                channel,
                channels: self.channels,
            });
        }
        let n = self.slice_len();
        Ok(&self.symbols[channel * n..(channel + 1) * n])
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> i32 {
        self.symbols[channel * self.slice_len() + row * self.width + col]
    }
}

/// Strictly increasing predefined Gaussian scales `σ_1 < … < σ_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSet {
    scales: Vec<f64>,
}

impl ScaleSet {
    pub fn new(scales: Vec<f64>) -> Result<Self, LatentError> {
        if scales.is_empty() {
            return Err(LatentError::InvalidScaleSet("no scales".into()));
        }
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(LatentError::InvalidScaleSet(
                "scales must be positive and finite".into(),
            ));
        }
        if scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LatentError::InvalidScaleSet(
                "scales must be strictly increasing".into(),
            ));
        }
        Ok(Self { scales })
    }

    /// `count` scales spaced geometrically from `min` to `max` inclusive.
    pub fn geometric(min: f64, max: f64, count: usize) -> Result<Self, LatentError> {
        if count == 1 {
            return Self::new(vec![min]);
        }
        let (a, b) = (min.ln(), max.ln());
        let step = (b - a) / (count - 1) as f64;
        Self::new((0..count).map(|i| (a + step * i as f64).exp()).collect())
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn get(&self, index: usize) -> f64 {
        self.scales[index]
    }

    /// Index of the smallest scale `>= predicted`, clamped to the largest scale.
    pub fn assign(&self, predicted: f64) -> usize {
        self.scales
            .partition_point(|&s| s < predicted)
            .min(self.scales.len() - 1)
    }
}

/// Mean-centred main-latent symbols with their winning-scale indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaussianLatentSet {
    alphabet: Alphabet,
    symbols: Vec<i32>,
    scale_index: Vec<u16>,
}

impl GaussianLatentSet {
    pub fn new(
        alphabet: Alphabet,
        symbols: Vec<i32>,
        scale_index: Vec<u16>,
    ) -> Result<Self, LatentError> {
        if symbols.len() != scale_index.len() {
            return Err(LatentError::Shape(format!(
                "{} symbols but {} scale indices",
                symbols.len(),
                scale_index.len()
            )));
        }
        for &s in &symbols {
            alphabet.check(s)?;
        }
        Ok(Self {
            alphabet,
            symbols,
            scale_index,
        })
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[i32] {
        &self.symbols
    }

    pub fn scale_index(&self) -> &[u16] {
        &self.scale_index
    }

    pub fn max_scale_index(&self) -> Option<usize> {
        self.scale_index.iter().max().map(|&c| c as usize)
    }

    /// Symbols of every element whose winning scale is `scale_index`, in order.
    pub fn group(&self, scale_index: usize) -> Vec<i32> {
        self.symbols
            .iter()
            .zip(&self.scale_index)
            .filter(|(_, &c)| c as usize == scale_index)
            .map(|(&s, _)| s)
            .collect()
    }

    /// Member count of every group `0..scale_count`.
    pub fn group_sizes(&self, scale_count: usize) -> Vec<usize> {
        let mut sizes = vec![0; scale_count];
        for &c in &self.scale_index {
            if let Some(n) = sizes.get_mut(c as usize) {
                *n += 1;
            }
        }
        sizes
    }
}

/// Symbol counts over an alphabet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelHistogram {
    alphabet: Alphabet,
    counts: Vec<u64>,
    total: u64,
}

impl ChannelHistogram {
    pub fn from_symbols(alphabet: Alphabet, symbols: &[i32]) -> Result<Self, LatentError> {
        let mut counts = vec![0u64; alphabet.size()];
        for &s in symbols {
            alphabet.check(s)?;
            counts[alphabet.offset(s)] += 1;
        }
        Self::from_counts(alphabet, counts)
    }

    pub fn from_counts(alphabet: Alphabet, counts: Vec<u64>) -> Result<Self, LatentError> {
        if counts.len() != alphabet.size() {
            return Err(LatentError::Shape(format!(
                "histogram has {} bins for an alphabet of {} symbols",
                counts.len(),
                alphabet.size()
            )));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(LatentError::Shape("histogram is empty".into()));
        }
        Ok(Self {
            alphabet,
            counts,
            total,
        })
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn alphabet_lo(&self) -> i32 {
        self.alphabet.lo()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, symbol: i32) -> u64 {
        if self.alphabet.contains(symbol) {
            self.counts[self.alphabet.offset(symbol)]
        } else {
            0
        }
    }

    /// Normalized frequency of `symbol`.
    pub fn frequency(&self, symbol: i32) -> f64 {
        self.count(symbol) as f64 / self.total as f64
    }

    /// Normalized frequencies over the whole alphabet (zeros included).
    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// `(symbol, count)` for every symbol that occurs.
    pub fn support(&self) -> impl Iterator<Item = (i32, u64)> + '_ {
        let lo = self.alphabet.lo();
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(move |(i, &c)| (lo + i as i32, c))
    }

    /// Shannon entropy of the normalized histogram, in bits.
    pub fn entropy_bits(&self) -> f64 {
        let n = self.total as f64;
        self.support()
            .map(|(_, c)| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.support().map(|(v, c)| v as f64 * c as f64).sum::<f64>() / self.total as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.support()
            .map(|(v, c)| (v as f64 - m).powi(2) * c as f64)
            .sum::<f64>()
            / self.total as f64
    }
}

/// Discrete probability table over `[alphabet_lo, alphabet_lo + len)`.
///
/// Every probability is at least [`PMF_FLOOR`] and the table sums to one, so a
/// range coder never meets a symbol it cannot represent.
#[derive(Debug, Clone, PartialEq)]
pub struct PmfTable {
    alphabet_lo: i32,
    probabilities: Vec<f64>,
}

impl PmfTable {
    /// Wraps an already valid table.
    pub fn new(alphabet_lo: i32, probabilities: Vec<f64>) -> Result<Self, LatentError> {
        if probabilities.is_empty() {
            return Err(LatentError::InvalidPmf("empty table".into()));
        }
        // The floor is compared with a relative slack so that tables read back
        // from disk after a float round trip still validate.
        let floor = PMF_FLOOR * (1.0 - 1e-9);
        if let Some((i, p)) = probabilities
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p >= floor))
        {
            return Err(LatentError::InvalidPmf(format!(
                "probability {p} of symbol {} is below the floor",
                alphabet_lo as i64 + i as i64
            )));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > PMF_SUM_TOLERANCE {
            return Err(LatentError::InvalidPmf(format!("probabilities sum to {sum}")));
        }
        Ok(Self {
            alphabet_lo,
            probabilities,
        })
    }

    /// Normalizes non-negative masses, lifts every entry to [`PMF_FLOOR`] and
    /// redistributes the remaining mass proportionally over the rest.
    pub fn from_masses(alphabet_lo: i32, masses: &[f64]) -> Result<Self, LatentError> {
        let n = masses.len();
        if n == 0 {
            return Err(LatentError::InvalidPmf("empty table".into()));
        }
        if n as f64 * PMF_FLOOR >= 1.0 {
            return Err(LatentError::InvalidPmf(format!(
                "alphabet of {n} symbols cannot be floored at 2^-20"
            )));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(LatentError::InvalidPmf("masses must be finite and >= 0".into()));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(LatentError::InvalidPmf("masses sum to zero".into()));
        }

        let mut probabilities = masses.to_vec();
        floor_in_place(&mut probabilities, &mut Vec::new());
        Ok(Self {
            alphabet_lo,
            probabilities,
        })
    }

    pub fn alphabet_lo(&self) -> i32 {
        self.alphabet_lo
    }

    pub fn alphabet_hi(&self) -> i32 {
        self.alphabet_lo + self.probabilities.len() as i32 - 1
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn contains(&self, symbol: i32) -> bool {
        symbol >= self.alphabet_lo && symbol <= self.alphabet_hi()
    }

    /// Probability of `symbol`, or `None` outside the table.
    pub fn probability(&self, symbol: i32) -> Option<f64> {
        if self.contains(symbol) {
            Some(self.probabilities[(symbol - self.alphabet_lo) as usize])
        } else {
            None
        }
    }

    /// Shannon entropy in bits.
    pub fn entropy_bits(&self) -> f64 {
        self.probabilities.iter().map(|&p| -p * p.log2()).sum()
    }
}

/// `P(X > z)` for a standard normal `X`.
#[inline]
fn upper_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / SQRT_2)
}

/// Per-symbol masses of `N(mean, sigma)` discretized on unit bins, with both
/// open tails folded into the boundary symbols.
///
/// Each bin boundary is evaluated once, on the tail that keeps it away from
/// the bulk. This keeps far-tail masses accurate and makes mirror-image bins
/// bit-identical.
/// Water-fills validated `masses` in place: entries that would fall below
/// [`PMF_FLOOR`] are pinned to it and the rest are rescaled to fill the
/// remaining mass. `floored` is scratch space.
pub(crate) fn floor_in_place(masses: &mut [f64], floored: &mut Vec<bool>) {
    floored.clear();
    floored.resize(masses.len(), false);
    let mut floored_count = 0usize;
    let scale = loop {
        let free_mass = 1.0 - floored_count as f64 * PMF_FLOOR;
        let free_sum: f64 = masses
            .iter()
            .zip(floored.iter())
            .filter(|(_, &f)| !f)
            .map(|(m, _)| m)
            .sum();
        let scale = free_mass / free_sum;
        let mut changed = false;
        for (m, f) in masses.iter().zip(floored.iter_mut()) {
            if !*f && m * scale < PMF_FLOOR {
                *f = true;
                floored_count += 1;
                changed = true;
            }
        }
        if !changed {
            break scale;
        }
    };
    for (m, &f) in masses.iter_mut().zip(floored.iter()) {
        *m = if f { PMF_FLOOR } else { *m * scale };
    }
}

pub(crate) fn discretized_gaussian_masses_into(
    mean: f64,
    sigma: f64,
    alphabet: Alphabet,
    out: &mut Vec<f64>,
) {
    let lo = alphabet.lo() as f64;
    let n = alphabet.size();
    out.clear();
    // (tail mass, true if it is the upper tail P(X > b)) for the left edge.
    let mut left = (0.0, false);
    for i in 0..n {
        let right = if i + 1 == n {
            (0.0, true)
        } else {
            let b = lo + i as f64 + 0.5;
            if b > mean {
                (upper_tail((b - mean) / sigma), true)
            } else {
                (upper_tail((mean - b) / sigma), false)
            }
        };
        let m = match (left.1, right.1) {
            (true, _) => left.0 - right.0,
            (false, false) => right.0 - left.0,
            (false, true) => 1.0 - left.0 - right.0,
        };
        out.push(m.max(0.0));
        left = right;
    }
}

pub(crate) fn discretized_gaussian_masses(mean: f64, sigma: f64, alphabet: Alphabet) -> Vec<f64> {
    let mut out = Vec::with_capacity(alphabet.size());
    discretized_gaussian_masses_into(mean, sigma, alphabet, &mut out);
    out
}

/// Discretized zero-mean Gaussian pmf `N̂(·; 0, scale)` over `[lo, hi]`.
pub fn gaussian_pmf(scale: f64, alphabet_lo: i32, alphabet_hi: i32) -> Result<PmfTable, LatentError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(LatentError::NonPositiveScale(scale));
    }
    if alphabet_lo >= alphabet_hi {
        return Err(LatentError::InvalidAlphabet {
            lo: alphabet_lo,
            hi: alphabet_hi,
        });
    }
    let alphabet = Alphabet {
        lo: alphabet_lo,
        hi: alphabet_hi,
    };
    PmfTable::from_masses(alphabet_lo, &discretized_gaussian_masses(0.0, scale, alphabet))
}

/// Round half away from zero.
#[inline]
pub fn quantize(value: f64) -> i64 {
    value.round() as i64
}

/// Mean-centres and quantizes raw main latents and assigns each element its
/// winning scale (smallest predefined scale not below the predicted one).
pub fn center_and_assign(
    raw: &[f64],
    means: &[f64],
    predicted_scales: &[f64],
    scales: &ScaleSet,
    alphabet: Alphabet,
) -> Result<GaussianLatentSet, LatentError> {
    if raw.len() != means.len() || raw.len() != predicted_scales.len() {
        return Err(LatentError::Shape(format!(
            "raw/means/scales lengths differ: {}/{}/{}",
            raw.len(),
            means.len(),
            predicted_scales.len()
        )));
    }
    if scales.len() > usize::from(u16::MAX) + 1 {
        return Err(LatentError::InvalidScaleSet("more than 65536 scales".into()));
    }
    let mut symbols = Vec::with_capacity(raw.len());
    let mut scale_index = Vec::with_capacity(raw.len());
    for ((&y, &mu), &sigma) in raw.iter().zip(means).zip(predicted_scales) {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(LatentError::NonPositiveScale(sigma));
        }
        symbols.push(alphabet.clamp(quantize(y - mu)));
        scale_index.push(scales.assign(sigma) as u16);
    }
    GaussianLatentSet::new(alphabet, symbols, scale_index)
}

pub fn build_channel_histogram(
    tensor: &SymbolTensor,
    channel: usize,
) -> Result<ChannelHistogram, LatentError> {
    ChannelHistogram::from_symbols(tensor.alphabet(), tensor.channel(channel)?)
}

/// Histogram of the elements whose winning scale is `scale_index`.
pub fn build_group_histogram(
    latents: &GaussianLatentSet,
    scale_index: usize,
) -> Result<ChannelHistogram, LatentError> {
    let alphabet = latents.alphabet();
    let mut counts = vec![0u64; alphabet.size()];
    let mut total = 0u64;
    for (&s, &c) in latents.symbols.iter().zip(&latents.scale_index) {
        if c as usize == scale_index {
            counts[alphabet.offset(s)] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(LatentError::EmptyGroup { scale_index });
    }
    Ok(ChannelHistogram {
        alphabet,
        counts,
        total,
    })
}
