//! Parametric replacements for learned pmf tables.
//!
//! Side channels are refitted with a truncated Gaussian mixture of `K`
//! components, main-latent scale groups with a truncated zero-mean Gaussian.
//! Every parameter travels as a 10-bit index on a fixed grid:
//!
//! | parameter          | range                          |
//! |--------------------|--------------------------------|
//! | component mean     | alphabet bounds                |
//! | log sigma          | `[ln 0.05, ln 64]`             |
//! | stick-breaking weight fraction | `[0, 1]`           |
//!
//! A factorized code holds `K` means, `K` log-sigmas and `K - 1` weight
//! fractions, so it costs `10 (3K - 1)` bits; a zero-mean code is one index.
//! Fits maximize the likelihood of the *discretized, floored* pmf that the
//! coder will actually use, evaluated on the quantized grid.

use thiserror::Error;

use crate::bits::{BitReader, BitString, BitsExhausted};
use crate::latent_model::{
    discretized_gaussian_masses_into, floor_in_place, Alphabet, ChannelHistogram, LatentError, PmfTable,
};

/// Bits per quantized parameter.
pub const PARAM_BITS: u32 = 10;
/// Grid levels per parameter (`2^10`).
pub const LEVELS: u16 = 1 << PARAM_BITS;
const MAX_INDEX: f64 = (LEVELS - 1) as f64;

pub const SIGMA_MIN: f64 = 0.05;
pub const SIGMA_MAX: f64 = 64.0;

/// Largest supported mixture size; the code length `3K - 1` must fit the
/// bitstream header.
pub const MAX_MIXTURES: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("mixture size {0} outside 1..={MAX_MIXTURES}")]
    MixtureSize(usize),
    #[error("malformed parameter code: {0}")]
    Format(String),
    #[error(transparent)]
    Bits(#[from] BitsExhausted),
    #[error(transparent)]
    Latent(#[from] LatentError),
}

/// Quantization ranges shared by encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRanges {
    pub mean_lo: f64,
    pub mean_hi: f64,
    pub log_sigma_lo: f64,
    pub log_sigma_hi: f64,
}

impl ParamRanges {
    /// Ranges tied to bitstream format version 1.
    pub fn for_alphabet(alphabet: Alphabet) -> Self {
        Self {
            mean_lo: alphabet.lo() as f64,
            mean_hi: alphabet.hi() as f64,
            log_sigma_lo: SIGMA_MIN.ln(),
            log_sigma_hi: SIGMA_MAX.ln(),
        }
    }

    pub fn levels(&self) -> u16 {
        LEVELS
    }

    pub fn mean(&self, index: u16) -> f64 {
        dequantize_unit(index, self.mean_lo, self.mean_hi)
    }

    pub fn sigma(&self, index: u16) -> f64 {
        dequantize_unit(index, self.log_sigma_lo, self.log_sigma_hi).exp()
    }
}

/// `round((value - lo) / (hi - lo) · 1023)`, clamped to the grid.
pub fn quantize_unit(value: f64, lo: f64, hi: f64) -> u16 {
    let t = (value - lo) / (hi - lo) * MAX_INDEX;
    if t.is_nan() {
        return 0;
    }
    // t >= 0 after clamping, so round() is round-half-away-from-zero.
    t.clamp(0.0, MAX_INDEX).round() as u16
}

pub fn dequantize_unit(index: u16, lo: f64, hi: f64) -> f64 {
    lo + f64::from(index) / MAX_INDEX * (hi - lo)
}

/// Truncated Gaussian mixture over an alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub alphabet: Alphabet,
}

impl MixtureParams {
    pub fn k(&self) -> usize {
        self.weights.len()
    }
}

/// Truncated zero-mean Gaussian over an alphabet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroMeanParams {
    pub sigma: f64,
    pub alphabet: Alphabet,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReparamParams {
    Mixture(MixtureParams),
    ZeroMean(ZeroMeanParams),
}

impl ReparamParams {
    pub fn alphabet(&self) -> Alphabet {
        match self {
            ReparamParams::Mixture(m) => m.alphabet,
            ReparamParams::ZeroMean(z) => z.alphabet,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodeKind {
    Factorized { k: u8 },
    Hyper,
}

impl CodeKind {
    /// Number of 10-bit indices in a code of this kind.
    pub fn param_count(self) -> usize {
        match self {
            CodeKind::Factorized { k } => 3 * k as usize - 1,
            CodeKind::Hyper => 1,
        }
    }

    pub fn bit_len(self) -> usize {
        self.param_count() * PARAM_BITS as usize
    }
}

/// 10-bit indices of a reparameterization. Factorized layout:
/// `[mean_1..mean_K, log_sigma_1..log_sigma_K, fraction_1..fraction_{K-1}]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QuantizedParamCode {
    indices: Vec<u16>,
    kind_k: u8,
}

impl QuantizedParamCode {
    pub fn new(kind: CodeKind, indices: Vec<u16>) -> Result<Self, FitError> {
        if let CodeKind::Factorized { k } = kind {
            if k == 0 || k as usize > MAX_MIXTURES {
                return Err(FitError::MixtureSize(k as usize));
            }
        }
        if indices.len() != kind.param_count() {
            return Err(FitError::Format(format!(
                "expected {} indices, got {}",
                kind.param_count(),
                indices.len()
            )));
        }
        if let Some(i) = indices.iter().find(|&&i| i >= LEVELS) {
            return Err(FitError::Format(format!("index {i} exceeds 10 bits")));
        }
        Ok(Self {
            indices,
            kind_k: match kind {
                CodeKind::Factorized { k } => k,
                CodeKind::Hyper => 0,
            },
        })
    }

    pub fn kind(&self) -> CodeKind {
        match self.kind_k {
            0 => CodeKind::Hyper,
            k => CodeKind::Factorized { k },
        }
    }

    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    pub fn bit_len(&self) -> usize {
        self.kind().bit_len()
    }

    pub fn write_bits(&self, out: &mut BitString) {
        for &i in &self.indices {
            out.push_bits(u32::from(i), PARAM_BITS);
        }
    }

    pub fn read_bits(kind: CodeKind, reader: &mut BitReader<'_>) -> Result<Self, FitError> {
        let indices = (0..kind.param_count())
            .map(|_| reader.read_bits(PARAM_BITS).map(|v| v as u16))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(kind, indices)
    }
}

pub fn quantize_params(params: &ReparamParams, ranges: &ParamRanges) -> QuantizedParamCode {
    match params {
        ReparamParams::ZeroMean(z) => QuantizedParamCode {
            indices: vec![quantize_unit(
                z.sigma.ln(),
                ranges.log_sigma_lo,
                ranges.log_sigma_hi,
            )],
            kind_k: 0,
        },
        ReparamParams::Mixture(m) => {
            let k = m.k();
            let mut indices = Vec::with_capacity(3 * k - 1);
            indices.extend(
                m.means
                    .iter()
                    .map(|&mu| quantize_unit(mu, ranges.mean_lo, ranges.mean_hi)),
            );
            indices.extend(
                m.sigmas
                    .iter()
                    .map(|&s| quantize_unit(s.ln(), ranges.log_sigma_lo, ranges.log_sigma_hi)),
            );
            let mut remaining = 1.0;
            for &w in &m.weights[..k - 1] {
                let fraction = if remaining > 0.0 { (w / remaining).clamp(0.0, 1.0) } else { 0.0 };
                indices.push(quantize_unit(fraction, 0.0, 1.0));
                remaining -= w;
            }
            QuantizedParamCode {
                indices,
                kind_k: k as u8,
            }
        }
    }
}

pub fn dequantize_params(
    code: &QuantizedParamCode,
    ranges: &ParamRanges,
    alphabet: Alphabet,
) -> ReparamParams {
    let idx = &code.indices;
    match code.kind() {
        CodeKind::Hyper => ReparamParams::ZeroMean(ZeroMeanParams {
            sigma: ranges.sigma(idx[0]),
            alphabet,
        }),
        CodeKind::Factorized { k } => {
            let k = k as usize;
            let means = idx[..k].iter().map(|&i| ranges.mean(i)).collect();
            let sigmas = idx[k..2 * k].iter().map(|&i| ranges.sigma(i)).collect();
            let mut weights = Vec::with_capacity(k);
            let mut remaining = 1.0f64;
            for &i in &idx[2 * k..] {
                let w = remaining * dequantize_unit(i, 0.0, 1.0);
                weights.push(w);
                remaining -= w;
            }
            weights.push(remaining.max(0.0));
            ReparamParams::Mixture(MixtureParams {
                weights,
                means,
                sigmas,
                alphabet,
            })
        }
    }
}

/// Discretized, tail-folded, floored pmf of a reparameterization.
pub fn reparam_pmf(params: &ReparamParams) -> PmfTable {
    let mut scratch = Vec::new();
    let mut masses = Vec::new();
    reparam_masses(params, &mut scratch, &mut masses);
    PmfTable::from_masses(params.alphabet().lo(), &masses)
        .expect("mixture masses are finite, non-negative and sum to one")
}

fn reparam_masses(params: &ReparamParams, scratch: &mut Vec<f64>, out: &mut Vec<f64>) {
    match params {
        ReparamParams::ZeroMean(z) => {
            discretized_gaussian_masses_into(0.0, z.sigma, z.alphabet, out);
        }
        ReparamParams::Mixture(m) => {
            out.clear();
            out.resize(m.alphabet.size(), 0.0);
            for ((&w, &mu), &s) in m.weights.iter().zip(&m.means).zip(&m.sigmas) {
                if w <= 0.0 {
                    continue;
                }
                discretized_gaussian_masses_into(mu, s, m.alphabet, scratch);
                for (o, x) in out.iter_mut().zip(scratch.iter()) {
                    *o += w * x;
                }
            }
        }
    }
}

/// `Σ count(v) · log2 p(v)` (non-positive).
pub fn log_likelihood(hist: &ChannelHistogram, pmf: &PmfTable) -> f64 {
    likelihood_of(hist, pmf.alphabet_lo(), pmf.probabilities())
}

fn likelihood_of(hist: &ChannelHistogram, lo: i32, probs: &[f64]) -> f64 {
    hist.support()
        .map(|(v, c)| c as f64 * probs[(v - lo) as usize].log2())
        .sum()
}

/// A fitted reparameterization together with its code and its likelihood
/// under the quantized parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub params: ReparamParams,
    pub code: QuantizedParamCode,
    pub pmf: PmfTable,
    pub log_likelihood: f64,
}

/// Evaluates codes against one histogram, reusing buffers.
struct Scorer<'a> {
    hist: &'a ChannelHistogram,
    ranges: ParamRanges,
    scratch: Vec<f64>,
    masses: Vec<f64>,
    floored: Vec<bool>,
}

impl<'a> Scorer<'a> {
    fn new(hist: &'a ChannelHistogram, ranges: ParamRanges) -> Self {
        Self {
            hist,
            ranges,
            scratch: Vec::new(),
            masses: Vec::new(),
            floored: Vec::new(),
        }
    }

    /// Same value as `log_likelihood(hist, &reparam_pmf(..))` without the
    /// table allocation.
    fn score(&mut self, code: &QuantizedParamCode) -> f64 {
        let params = dequantize_params(code, &self.ranges, self.hist.alphabet());
        reparam_masses(&params, &mut self.scratch, &mut self.masses);
        floor_in_place(&mut self.masses, &mut self.floored);
        likelihood_of(self.hist, self.hist.alphabet_lo(), &self.masses)
    }

    fn finish(self, code: QuantizedParamCode) -> Fit {
        let params = dequantize_params(&code, &self.ranges, self.hist.alphabet());
        let pmf = reparam_pmf(&params);
        let log_likelihood = log_likelihood(self.hist, &pmf);
        Fit {
            params,
            code,
            pmf,
            log_likelihood,
        }
    }
}

/// Better likelihood wins; equal likelihood goes to the lower code.
fn improves(ll: f64, code: &[u16], best_ll: f64, best: &[u16]) -> bool {
    ll > best_ll || (ll == best_ll && code < best)
}

/// Zero-mean fit: exhaustive over all 1024 log-sigma levels.
pub fn fit_zero_mean(hist: &ChannelHistogram, ranges: &ParamRanges) -> Fit {
    let mut scorer = Scorer::new(hist, *ranges);
    let mut best = (f64::NEG_INFINITY, 0u16);
    for level in 0..LEVELS {
        let code = QuantizedParamCode {
            indices: vec![level],
            kind_k: 0,
        };
        let ll = scorer.score(&code);
        if ll > best.0 {
            best = (ll, level);
        }
    }
    scorer.finish(QuantizedParamCode {
        indices: vec![best.1],
        kind_k: 0,
    })
}

const EM_MAX_ITERATIONS: usize = 100;
const EM_TOLERANCE: f64 = 1e-8;

/// Continuous EM on the count-weighted histogram. Each symbol stands for a
/// unit bin, so the component variances carry the 1/12 bin-width term.
fn em_mixture(hist: &ChannelHistogram, k: usize) -> MixtureParams {
    let support: Vec<(f64, f64)> = hist.support().map(|(v, c)| (v as f64, c as f64)).collect();
    let total = hist.total() as f64;
    let var0 = hist.variance() + 1.0 / 12.0;
    let sigma0 = var0.sqrt().max(SIGMA_MIN);

    // Components start at equally spaced quantiles of the histogram.
    let mut means = Vec::with_capacity(k);
    for j in 0..k {
        let target = (j as f64 + 0.5) / k as f64 * total;
        let mut acc = 0.0;
        let mut q = support.last().map_or(0.0, |s| s.0);
        for &(v, c) in &support {
            acc += c;
            if acc >= target {
                q = v;
                break;
            }
        }
        means.push(q);
    }
    let mut sigmas = vec![sigma0; k];
    let mut weights = vec![1.0 / k as f64; k];

    let mut resp = vec![0.0; support.len() * k];
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..EM_MAX_ITERATIONS {
        // E-step.
        let mut ll = 0.0;
        for (i, &(v, c)) in support.iter().enumerate() {
            let row = &mut resp[i * k..(i + 1) * k];
            let mut sum = 0.0;
            for j in 0..k {
                let z = (v - means[j]) / sigmas[j];
                let d = weights[j] * (-0.5 * z * z).exp() / sigmas[j];
                row[j] = d;
                sum += d;
            }
            if sum > 0.0 && sum.is_finite() {
                row.iter_mut().for_each(|r| *r /= sum);
                ll += c * sum.ln();
            } else {
                // Every component has underflowed: hand the point to the nearest mean.
                let nearest = (0..k)
                    .min_by(|&a, &b| {
                        (v - means[a]).abs().total_cmp(&(v - means[b]).abs())
                    })
                    .unwrap();
                row.iter_mut().enumerate().for_each(|(j, r)| *r = (j == nearest) as u8 as f64);
                ll += c * f64::MIN_POSITIVE.ln();
            }
        }
        // M-step.
        for j in 0..k {
            let mut n = 0.0;
            let mut s1 = 0.0;
            for (i, &(v, c)) in support.iter().enumerate() {
                let r = c * resp[i * k + j];
                n += r;
                s1 += r * v;
            }
            if n <= 0.0 {
                weights[j] = 0.0;
                continue;
            }
            let mu = s1 / n;
            let mut s2 = 0.0;
            for (i, &(v, c)) in support.iter().enumerate() {
                s2 += c * resp[i * k + j] * (v - mu).powi(2);
            }
            means[j] = mu;
            sigmas[j] = (s2 / n + 1.0 / 12.0).sqrt().max(SIGMA_MIN);
            weights[j] = n / total;
        }
        if (ll - prev_ll).abs() <= EM_TOLERANCE * ll.abs().max(1.0) {
            break;
        }
        prev_ll = ll;
    }
    // Point masses should collapse all the way to the sigma floor.
    if support.len() == 1 {
        sigmas.iter_mut().for_each(|s| *s = SIGMA_MIN);
    }
    MixtureParams {
        weights,
        means,
        sigmas,
        alphabet: hist.alphabet(),
    }
}

/// Mixture fit: EM on the histogram, snap to the grid, then a pattern search
/// over grid indices on the exact discretized likelihood.
pub fn fit_mixture(hist: &ChannelHistogram, k: usize, ranges: &ParamRanges) -> Result<Fit, FitError> {
    if k == 0 || k > MAX_MIXTURES {
        return Err(FitError::MixtureSize(k));
    }
    let em = em_mixture(hist, k);
    let start = quantize_params(&ReparamParams::Mixture(em), ranges);
    let mut scorer = Scorer::new(hist, *ranges);
    let mut best_ll = scorer.score(&start);
    let mut best = start;
    let dims = best.indices.len();

    for step in [64i32, 16, 4, 1] {
        loop {
            let mut moved = false;
            for d in 0..dims {
                for dir in [-step, step] {
                    let Some(cand) = shifted(&best, &[(d, dir)]) else { continue };
                    moved |= try_code(&mut scorer, &mut best, &mut best_ll, cand);
                }
            }
            if step == 1 {
                for a in 0..dims {
                    for b in a + 1..dims {
                        for (da, db) in [(-1, -1), (-1, 1), (1, -1), (1, 1)] {
                            let Some(cand) = shifted(&best, &[(a, da), (b, db)]) else { continue };
                            moved |= try_code(&mut scorer, &mut best, &mut best_ll, cand);
                        }
                    }
                }
                // A single component has only two coordinates; sweep each one
                // fully so that ridges in the likelihood cannot strand the search.
                if k == 1 && !moved {
                    for d in 0..dims {
                        for level in 0..LEVELS {
                            if level == best.indices[d] {
                                continue;
                            }
                            let mut cand = best.clone();
                            cand.indices[d] = level;
                            moved |= try_code(&mut scorer, &mut best, &mut best_ll, cand);
                        }
                    }
                    if !moved {
                        moved = trace_ridge(&mut scorer, &mut best, &mut best_ll);
                    }
                }
            }
            if !moved {
                break;
            }
        }
    }
    Ok(scorer.finish(best))
}

/// How far below the incumbent the mean profile may fall before a ridge
/// trace stops, in bits.
const RIDGE_MARGIN_BITS: f64 = 1.0;

/// Single component: walks the sigma levels outwards from the incumbent,
/// re-optimizing the mean at each level from the neighbouring level's mean.
/// Follows curved ridges (two-symbol alphabets make the whole curve
/// `p(lo) = const` optimal) that axis and diagonal moves cannot.
fn trace_ridge(scorer: &mut Scorer<'_>, best: &mut QuantizedParamCode, best_ll: &mut f64) -> bool {
    let (m0, s0) = (best.indices[0], best.indices[1]);
    let mut moved = false;
    for dir in [-1i32, 1] {
        let mut m = m0;
        let mut s = i32::from(s0) + dir;
        while (0..i32::from(LEVELS)).contains(&s) {
            let (mm, ll) = climb_mean(scorer, m, s as u16);
            m = mm;
            let cand = QuantizedParamCode {
                indices: vec![m, s as u16],
                kind_k: 1,
            };
            moved |= try_code(scorer, best, best_ll, cand);
            if ll < *best_ll - RIDGE_MARGIN_BITS {
                break;
            }
            s += dir;
        }
    }
    moved
}

/// Best mean index for a fixed sigma index by galloping hill climbing.
fn climb_mean(scorer: &mut Scorer<'_>, start: u16, sigma: u16) -> (u16, f64) {
    let mut score = |m: i32| {
        scorer.score(&QuantizedParamCode {
            indices: vec![m as u16, sigma],
            kind_k: 1,
        })
    };
    let mut m = i32::from(start);
    let mut ll = score(m);
    for dir in [1i32, -1] {
        let mut step = 1;
        loop {
            let cand = m + dir * step;
            let c = if (0..i32::from(LEVELS)).contains(&cand) {
                score(cand)
            } else {
                f64::NEG_INFINITY
            };
            if c > ll {
                m = cand;
                ll = c;
                step *= 2;
            } else if step == 1 {
                break;
            } else {
                step /= 2;
            }
        }
    }
    (m as u16, ll)
}

/// Scores `cand` and adopts it when it improves on `best`.
fn try_code(
    scorer: &mut Scorer<'_>,
    best: &mut QuantizedParamCode,
    best_ll: &mut f64,
    cand: QuantizedParamCode,
) -> bool {
    let ll = scorer.score(&cand);
    if improves(ll, &cand.indices, *best_ll, &best.indices) {
        *best = cand;
        *best_ll = ll;
        true
    } else {
        false
    }
}

fn shifted(code: &QuantizedParamCode, moves: &[(usize, i32)]) -> Option<QuantizedParamCode> {
    let mut out = code.clone();
    for &(d, delta) in moves {
        let v = i32::from(out.indices[d]) + delta;
        if !(0..i32::from(LEVELS)).contains(&v) {
            return None;
        }
        out.indices[d] = v as u16;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_model::gaussian_pmf;
    use proptest::prelude::*;

    fn alphabet16() -> Alphabet {
        Alphabet::symmetric(16).unwrap()
    }

    /// Histogram proportional to a discretized Gaussian, `n` samples.
    fn gaussian_hist(mean: f64, sigma: f64, n: f64, alphabet: Alphabet) -> ChannelHistogram {
        let masses = crate::latent_model::discretized_gaussian_masses(mean, sigma, alphabet);
        let counts = masses.iter().map(|m| (m * n).round() as u64).collect();
        ChannelHistogram::from_counts(alphabet, counts).unwrap()
    }

    #[test]
    fn quantizer_endpoints_and_midpoint() {
        let r = ParamRanges::for_alphabet(alphabet16());
        assert_eq!(quantize_unit(0.0, r.mean_lo, r.mean_hi), 512);
        assert_eq!(quantize_unit(-16.0, r.mean_lo, r.mean_hi), 0);
        assert_eq!(quantize_unit(16.0, r.mean_lo, r.mean_hi), 1023);
        assert_eq!(quantize_unit(99.0, r.mean_lo, r.mean_hi), 1023);
        assert_eq!(r.mean(0), -16.0);
        assert_eq!(r.mean(1023), 16.0);
        assert!((r.sigma(0) - SIGMA_MIN).abs() < 1e-12);
        assert!((r.sigma(1023) - SIGMA_MAX).abs() < 1e-9);
    }

    #[test]
    fn dequantize_then_quantize_is_identity_on_codes() {
        let a = alphabet16();
        let r = ParamRanges::for_alphabet(a);
        for k in 1..=3u8 {
            let kind = CodeKind::Factorized { k };
            for seed in 0..50u16 {
                let indices = (0..kind.param_count())
                    .map(|i| (seed.wrapping_mul(97).wrapping_add(i as u16 * 331)) % LEVELS)
                    .collect();
                let code = QuantizedParamCode::new(kind, indices).unwrap();
                let back = quantize_params(&dequantize_params(&code, &r, a), &r);
                // Fractions after a zero remainder are not recoverable; compare
                // only codes whose weights are all positive.
                if let ReparamParams::Mixture(m) = dequantize_params(&code, &r, a) {
                    if m.weights.iter().all(|&w| w > 0.0) {
                        assert_eq!(back, code);
                    }
                }
            }
        }
        for level in 0..LEVELS {
            let code = QuantizedParamCode::new(CodeKind::Hyper, vec![level]).unwrap();
            assert_eq!(quantize_params(&dequantize_params(&code, &r, a), &r), code);
        }
    }

    #[test]
    fn code_validation() {
        assert!(QuantizedParamCode::new(CodeKind::Factorized { k: 1 }, vec![1, 2]).is_ok());
        assert!(QuantizedParamCode::new(CodeKind::Factorized { k: 1 }, vec![1]).is_err());
        assert!(QuantizedParamCode::new(CodeKind::Hyper, vec![1024]).is_err());
        assert_eq!(CodeKind::Factorized { k: 2 }.bit_len(), 50);
        assert_eq!(CodeKind::Factorized { k: 1 }.bit_len(), 20);
    }

    #[test]
    fn code_bits_round_trip() {
        let code = QuantizedParamCode::new(CodeKind::Factorized { k: 2 }, vec![0, 1023, 5, 512, 77])
            .unwrap();
        let mut bits = BitString::new();
        code.write_bits(&mut bits);
        assert_eq!(bits.len(), 50);
        assert_eq!(&bits.to_string()[..20], "00000000001111111111");
        let back = QuantizedParamCode::read_bits(code.kind(), &mut bits.reader()).unwrap();
        assert_eq!(back, code);
    }

    #[test]
    fn single_component_matches_gaussian_pmf() {
        let a = alphabet16();
        let m = ReparamParams::Mixture(MixtureParams {
            weights: vec![1.0],
            means: vec![0.0],
            sigmas: vec![1.0],
            alphabet: a,
        });
        let p = reparam_pmf(&m);
        let g = gaussian_pmf(1.0, -16, 16).unwrap();
        for (x, y) in p.probabilities().iter().zip(g.probabilities()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_bimodal_pmf_is_symmetric() {
        let m = ReparamParams::Mixture(MixtureParams {
            weights: vec![0.5, 0.5],
            means: vec![-4.0, 4.0],
            sigmas: vec![0.5, 0.5],
            alphabet: alphabet16(),
        });
        let p = reparam_pmf(&m);
        for v in 1..=16 {
            assert!((p.probability(v).unwrap() - p.probability(-v).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn point_mass_drives_sigma_to_floor() {
        let a = alphabet16();
        let r = ParamRanges::for_alphabet(a);
        let mut counts = vec![0; a.size()];
        counts[a.offset(0)] = 500;
        let hist = ChannelHistogram::from_counts(a, counts).unwrap();
        let fit = fit_mixture(&hist, 1, &r).unwrap();
        let ReparamParams::Mixture(m) = &fit.params else { panic!() };
        // Every mean that rounds to 0 scores the same up to float noise.
        assert!(m.means[0].abs() < 0.5);
        assert_eq!(fit.code.indices()[1], 0);
        assert!((m.sigmas[0] - SIGMA_MIN).abs() < 1e-12);

        let z = fit_zero_mean(&hist, &r);
        assert_eq!(z.code.indices(), &[0]);
    }

    #[test]
    fn zero_mean_refit_recovers_sigma() {
        let a = alphabet16();
        let r = ParamRanges::for_alphabet(a);
        let hist = gaussian_hist(0.0, 2.0, 1e6, a);
        let fit = fit_zero_mean(&hist, &r);
        let step = (r.log_sigma_hi - r.log_sigma_lo) / 1023.0;
        let ReparamParams::ZeroMean(z) = fit.params else { panic!() };
        assert!((z.sigma.ln() - 2f64.ln()).abs() <= step);
    }

    #[test]
    fn uniform_histogram_prefers_a_broad_scale() {
        let a = alphabet16();
        let r = ParamRanges::for_alphabet(a);
        let hist = ChannelHistogram::from_counts(a, vec![10; a.size()]).unwrap();
        let fit = fit_zero_mean(&hist, &r);
        // Tails fold into the edge symbols, so very wide scales overweight
        // them; the optimum is a broad but finite scale.
        let ReparamParams::ZeroMean(z) = fit.params else { panic!() };
        assert!(z.sigma > 8.0 && z.sigma < 16.0, "{}", z.sigma);
    }

    #[test]
    fn zero_mean_is_exactly_grid_optimal() {
        let a = Alphabet::symmetric(8).unwrap();
        let r = ParamRanges::for_alphabet(a);
        let hist = ChannelHistogram::from_counts(a, (0..17).map(|i| (i * 7 % 5) as u64 + 1).collect())
            .unwrap();
        let fit = fit_zero_mean(&hist, &r);
        for level in 0..LEVELS {
            let pmf = gaussian_pmf(r.sigma(level), -8, 8).unwrap();
            assert!(log_likelihood(&hist, &pmf) <= fit.log_likelihood);
        }
    }

    #[test]
    fn bimodal_k2_recovers_both_modes() {
        let a = alphabet16();
        let r = ParamRanges::for_alphabet(a);
        let left = crate::latent_model::discretized_gaussian_masses(-4.0, 1.0, a);
        let right = crate::latent_model::discretized_gaussian_masses(4.0, 1.0, a);
        let counts = left
            .iter()
            .zip(&right)
            .map(|(l, r)| ((l + r) * 50_000.0).round() as u64)
            .collect();
        let hist = ChannelHistogram::from_counts(a, counts).unwrap();
        let fit = fit_mixture(&hist, 2, &r).unwrap();
        let ReparamParams::Mixture(m) = &fit.params else { panic!() };
        let mut modes: Vec<(f64, f64)> = m.means.iter().copied().zip(m.weights.iter().copied()).collect();
        modes.sort_by(|x, y| x.0.total_cmp(&y.0));
        assert!((modes[0].0 + 4.0).abs() < 0.2, "{modes:?}");
        assert!((modes[1].0 - 4.0).abs() < 0.2, "{modes:?}");
        assert!((modes[0].1 - 0.5).abs() < 0.05 && (modes[1].1 - 0.5).abs() < 0.05);
    }

    #[test]
    fn mixture_size_is_validated() {
        let a = alphabet16();
        let hist = ChannelHistogram::from_counts(a, vec![1; a.size()]).unwrap();
        let r = ParamRanges::for_alphabet(a);
        assert_eq!(fit_mixture(&hist, 0, &r), Err(FitError::MixtureSize(0)));
    }

    proptest! {
        #[test]
        fn quantizer_is_monotone(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize_unit(lo, -16.0, 16.0) <= quantize_unit(hi, -16.0, 16.0));
        }

        #[test]
        fn quantizer_error_is_half_a_step(v in -16.0f64..=16.0) {
            let back = dequantize_unit(quantize_unit(v, -16.0, 16.0), -16.0, 16.0);
            prop_assert!((back - v).abs() <= 32.0 / 2046.0 + 1e-12);
        }

        #[test]
        fn reparam_pmfs_are_normalized(
            k in 1usize..4,
            seed in prop::collection::vec(0u16..1024, 8),
        ) {
            let a = alphabet16();
            let r = ParamRanges::for_alphabet(a);
            let kind = CodeKind::Factorized { k: k as u8 };
            let code = QuantizedParamCode::new(kind, seed[..kind.param_count()].to_vec()).unwrap();
            let pmf = reparam_pmf(&dequantize_params(&code, &r, a));
            let sum: f64 = pmf.probabilities().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn fitted_model_never_beats_empirical_entropy(
            counts in prop::collection::vec(0u64..50, 9),
            k in 1usize..3,
        ) {
            let mut counts = counts;
            counts[4] += 1;
            let a = Alphabet::symmetric(4).unwrap();
            let hist = ChannelHistogram::from_counts(a, counts).unwrap();
            let r = ParamRanges::for_alphabet(a);
            let limit = crate::bit_accounting::histogram_limit_bits(&hist);
            let fit = fit_mixture(&hist, k, &r).unwrap();
            prop_assert!(limit <= -fit.log_likelihood + 1e-9);
            let z = fit_zero_mean(&hist, &r);
            prop_assert!(limit <= -z.log_likelihood + 1e-9);
        }
    }
}
