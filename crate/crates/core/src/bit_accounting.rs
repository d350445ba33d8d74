//! Expected bitlengths under learned models, empirical-entropy limits, and the
//! gap/saving ratios built from them.
//!
//! All lengths are in bits (base-2 logarithms). Ratios are fractions; callers
//! format them as percentages.

use thiserror::Error;

use crate::latent_model::{
    build_channel_histogram, gaussian_pmf, ChannelHistogram, GaussianLatentSet, LatentError,
    PmfTable, ScaleSet, SymbolTensor,
};
use crate::FrameKind;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BitError {
    #[error("symbol {symbol} not covered by pmf table [{lo}, {hi}]")]
    Alphabet { symbol: i32, lo: i32, hi: i32 },
    #[error("expected {expected} pmf tables, got {got}")]
    TableCount { expected: usize, got: usize },
    #[error("metric undefined: baseline is {0} bits")]
    UndefinedMetric(f64),
    #[error("limit {limit} exceeds baseline {baseline}")]
    LimitAboveBaseline { limit: f64, baseline: f64 },
    #[error("invalid frame budget: {0}")]
    Budget(String),
    #[error(transparent)]
    Latent(#[from] LatentError),
}

/// Bits per channel (or per scale group) and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct BitReport {
    per_channel_bits: Vec<f64>,
    total_bits: f64,
}

impl BitReport {
    pub fn new(per_channel_bits: Vec<f64>) -> Self {
        let total_bits = per_channel_bits.iter().sum();
        Self {
            per_channel_bits,
            total_bits,
        }
    }

    pub fn per_channel_bits(&self) -> &[f64] {
        &self.per_channel_bits
    }

    pub fn total_bits(&self) -> f64 {
        self.total_bits
    }
}

/// `-Σ log2 p(v)` over `symbols`.
pub fn cross_entropy_bits(symbols: &[i32], pmf: &PmfTable) -> Result<f64, BitError> {
    let mut bits = 0.0;
    for &s in symbols {
        let p = pmf.probability(s).ok_or(BitError::Alphabet {
            symbol: s,
            lo: pmf.alphabet_lo(),
            hi: pmf.alphabet_hi(),
        })?;
        bits -= p.log2();
    }
    Ok(bits)
}

/// `-Σ count(v) log2 p(v)`; symbols that never occur cost nothing.
pub fn histogram_cross_entropy_bits(
    hist: &ChannelHistogram,
    pmf: &PmfTable,
) -> Result<f64, BitError> {
    let mut bits = 0.0;
    for (v, c) in hist.support() {
        let p = pmf.probability(v).ok_or(BitError::Alphabet {
            symbol: v,
            lo: pmf.alphabet_lo(),
            hi: pmf.alphabet_hi(),
        })?;
        bits -= c as f64 * p.log2();
    }
    Ok(bits)
}

/// Bits of a histogram coded with its own normalized frequencies
/// (`total × entropy`, with `0·log 0 = 0`).
pub fn histogram_limit_bits(hist: &ChannelHistogram) -> f64 {
    let n = hist.total() as f64;
    hist.support()
        .map(|(_, c)| {
            let c = c as f64;
            -c * (c / n).log2()
        })
        .sum()
}

/// Expected side-information bits, one entry per channel.
pub fn expected_bits_factorized(
    tensor: &SymbolTensor,
    pmfs: &[PmfTable],
) -> Result<BitReport, BitError> {
    if pmfs.len() != tensor.channels() {
        return Err(BitError::TableCount {
            expected: tensor.channels(),
            got: pmfs.len(),
        });
    }
    let bits = pmfs
        .iter()
        .enumerate()
        .map(|(c, pmf)| cross_entropy_bits(tensor.channel(c)?, pmf))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BitReport::new(bits))
}

/// Expected main-information bits, one entry per predefined scale. Empty
/// groups contribute zero.
pub fn expected_bits_hyper(
    latents: &GaussianLatentSet,
    scales: &ScaleSet,
) -> Result<BitReport, BitError> {
    let alphabet = latents.alphabet();
    let pmfs = scales
        .scales()
        .iter()
        .map(|&s| gaussian_pmf(s, alphabet.lo(), alphabet.hi()))
        .collect::<Result<Vec<_>, _>>()?;
    expected_bits_hyper_with(latents, &pmfs)
}

/// Main-information bits when scale group `c` is coded with `pmfs[c]`.
pub fn expected_bits_hyper_with(
    latents: &GaussianLatentSet,
    pmfs: &[PmfTable],
) -> Result<BitReport, BitError> {
    let alphabet = latents.alphabet();
    let mut hists = vec![vec![0u64; alphabet.size()]; pmfs.len()];
    for (&s, &c) in latents.symbols().iter().zip(latents.scale_index()) {
        let row = hists.get_mut(c as usize).ok_or_else(|| {
            BitError::Latent(LatentError::Shape(format!(
                "scale index {c} outside a set of {} scales",
                pmfs.len()
            )))
        })?;
        row[alphabet.offset(s)] += 1;
    }
    let mut bits = Vec::with_capacity(pmfs.len());
    for (counts, pmf) in hists.into_iter().zip(pmfs) {
        if counts.iter().all(|&n| n == 0) {
            bits.push(0.0);
            continue;
        }
        let hist = ChannelHistogram::from_counts(alphabet, counts)?;
        bits.push(histogram_cross_entropy_bits(&hist, pmf)?);
    }
    Ok(BitReport::new(bits))
}

/// Theoretical limit of the side information: each channel coded with its own
/// normalized histogram.
pub fn limit_bits_factorized(tensor: &SymbolTensor) -> BitReport {
    BitReport::new(
        (0..tensor.channels())
            .map(|c| {
                let hist = build_channel_histogram(tensor, c).expect("channel in range");
                histogram_limit_bits(&hist)
            })
            .collect(),
    )
}

/// Theoretical limit of the main information, one entry per scale index up to
/// the largest index present.
pub fn limit_bits_hyper(latents: &GaussianLatentSet) -> BitReport {
    let groups = latents.max_scale_index().map_or(0, |m| m + 1);
    let alphabet = latents.alphabet();
    let mut hists = vec![vec![0u64; alphabet.size()]; groups];
    for (&s, &c) in latents.symbols().iter().zip(latents.scale_index()) {
        hists[c as usize][alphabet.offset(s)] += 1;
    }
    BitReport::new(
        hists
            .into_iter()
            .map(|counts| match ChannelHistogram::from_counts(alphabet, counts) {
                Ok(h) => histogram_limit_bits(&h),
                Err(_) => 0.0,
            })
            .collect(),
    )
}

/// Amortization gap `1 - limit/baseline`.
pub fn gap(baseline_bits: f64, limit_bits: f64) -> Result<f64, BitError> {
    if baseline_bits.is_nan() || baseline_bits <= 0.0 {
        return Err(BitError::UndefinedMetric(baseline_bits));
    }
    if limit_bits > baseline_bits * (1.0 + 1e-12) {
        return Err(BitError::LimitAboveBaseline {
            limit: limit_bits,
            baseline: baseline_bits,
        });
    }
    Ok((1.0 - limit_bits / baseline_bits).max(0.0))
}

/// Saving `1 - achieved/baseline`; negative when the achieved stream is larger.
pub fn saving(baseline_bits: f64, achieved_bits: f64) -> Result<f64, BitError> {
    if baseline_bits.is_nan() || baseline_bits <= 0.0 {
        return Err(BitError::UndefinedMetric(baseline_bits));
    }
    Ok(1.0 - achieved_bits / baseline_bits)
}

/// Baseline, limit and achieved bits of one information type.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ComponentBits {
    pub baseline: f64,
    pub limit: f64,
    pub achieved: f64,
}

impl ComponentBits {
    pub fn new(baseline: f64, limit: f64, achieved: f64) -> Self {
        Self {
            baseline,
            limit,
            achieved,
        }
    }

    fn validate(&self, name: &str) -> Result<(), BitError> {
        let ComponentBits {
            baseline,
            limit,
            achieved,
        } = *self;
        if [baseline, limit, achieved]
            .iter()
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return Err(BitError::Budget(format!("{name}: negative or non-finite bits")));
        }
        if limit > baseline * (1.0 + 1e-9) + 1e-9 {
            return Err(BitError::Budget(format!(
                "{name}: limit {limit} exceeds baseline {baseline}"
            )));
        }
        Ok(())
    }
}

impl std::ops::Add for ComponentBits {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            baseline: self.baseline + rhs.baseline,
            limit: self.limit + rhs.limit,
            achieved: self.achieved + rhs.achieved,
        }
    }
}

/// Bit budget of one frame split over the four information types.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBudget {
    kind: FrameKind,
    motion_side: Option<ComponentBits>,
    motion_main: Option<ComponentBits>,
    residual_side: ComponentBits,
    residual_main: ComponentBits,
}

impl FrameBudget {
    pub fn new(
        kind: FrameKind,
        motion: Option<(ComponentBits, ComponentBits)>,
        residual_side: ComponentBits,
        residual_main: ComponentBits,
    ) -> Result<Self, BitError> {
        if kind == FrameKind::Intra && motion.is_some() {
            return Err(BitError::Budget("I frames carry no motion information".into()));
        }
        if let Some((side, main)) = &motion {
            side.validate("motion side")?;
            main.validate("motion main")?;
        }
        residual_side.validate("residual side")?;
        residual_main.validate("residual main")?;
        Ok(Self {
            kind,
            motion_side: motion.map(|m| m.0),
            motion_main: motion.map(|m| m.1),
            residual_side,
            residual_main,
        })
    }

    pub fn kind(&self) -> FrameKind {
        self.kind
    }

    pub fn motion_side(&self) -> Option<ComponentBits> {
        self.motion_side
    }

    pub fn motion_main(&self) -> Option<ComponentBits> {
        self.motion_main
    }

    pub fn residual_side(&self) -> ComponentBits {
        self.residual_side
    }

    pub fn residual_main(&self) -> ComponentBits {
        self.residual_main
    }
}

/// `(l_b, l*, l_o)`: baseline, limit and achieved totals of the present parts.
pub fn frame_totals(budget: &FrameBudget) -> (f64, f64, f64) {
    let sum = [budget.motion_side, budget.motion_main]
        .into_iter()
        .flatten()
        .fold(budget.residual_side + budget.residual_main, |acc, c| acc + c);
    (sum.baseline, sum.limit, sum.achieved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_model::{Alphabet, PMF_FLOOR};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(lo: i32, n: usize) -> PmfTable {
        PmfTable::new(lo, vec![1.0 / n as f64; n]).unwrap()
    }

    /// Entropy oracle written independently of the histogram types.
    fn oracle_entropy_bits(symbols: &[i32]) -> f64 {
        let mut sorted = symbols.to_vec();
        sorted.sort_unstable();
        let n = sorted.len() as f64;
        sorted
            .chunk_by(|a, b| a == b)
            .map(|run| {
                let c = run.len() as f64;
                -c * (c / n).log2()
            })
            .sum()
    }

    #[test]
    fn uniform_over_four_costs_two_bits() {
        let a = Alphabet::new(-1, 2).unwrap();
        let t = SymbolTensor::new(4, 4, 1, a, vec![0; 16]).unwrap();
        let r = expected_bits_factorized(&t, &[uniform(-1, 4)]).unwrap();
        assert!((r.total_bits() - 32.0).abs() < 1e-12);
    }

    #[test]
    fn zeros_under_uniform_three() {
        let a = Alphabet::symmetric(1).unwrap();
        let t = SymbolTensor::new(4, 4, 1, a, vec![0; 16]).unwrap();
        let r = expected_bits_factorized(&t, &[uniform(-1, 3)]).unwrap();
        assert!((r.total_bits() - 16.0 * 3f64.log2()).abs() < 1e-12);
        assert!((r.total_bits() - 25.3594).abs() < 1e-4);
    }

    #[test]
    fn factorized_bits_match_per_symbol_oracle() {
        let a = Alphabet::symmetric(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let symbols: Vec<i32> = (0..64).map(|_| rng.gen_range(-5..=5)).collect();
        let masses: Vec<f64> = (0..11).map(|_| rng.gen_range(0.01..1.0)).collect();
        let pmf = PmfTable::from_masses(-5, &masses).unwrap();
        let t = SymbolTensor::new(8, 8, 1, a, symbols.clone()).unwrap();
        let got = expected_bits_factorized(&t, std::slice::from_ref(&pmf)).unwrap().total_bits();
        let mut oracle = 0.0;
        for s in symbols {
            oracle += -(pmf.probabilities()[(s + 5) as usize]).ln() / std::f64::consts::LN_2;
        }
        assert!(((got - oracle) / oracle).abs() < 1e-9);
    }

    #[test]
    fn table_count_and_alphabet_errors() {
        let a = Alphabet::symmetric(2).unwrap();
        let t = SymbolTensor::new(1, 2, 1, a, vec![2, 0]).unwrap();
        assert!(matches!(
            expected_bits_factorized(&t, &[]),
            Err(BitError::TableCount { .. })
        ));
        assert!(matches!(
            expected_bits_factorized(&t, &[uniform(-1, 3)]),
            Err(BitError::Alphabet { symbol: 2, .. })
        ));
    }

    #[test]
    fn hyper_single_zero_at_unit_scale() {
        let a = Alphabet::symmetric(16).unwrap();
        let set = GaussianLatentSet::new(a, vec![0], vec![0]).unwrap();
        let scales = ScaleSet::new(vec![1.0, 2.0]).unwrap();
        let r = expected_bits_hyper(&set, &scales).unwrap();
        // erf(0.5/sqrt 2) = 0.38292492254802624, rescaled for the symbols
        // lifted to the floor: masses from direct erfc differences.
        let cdf = |x: f64| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
        let masses: Vec<f64> = (-16..=16)
            .map(|v| {
                let hi = if v == 16 { 1.0 } else { cdf(v as f64 + 0.5) };
                let lo = if v == -16 { 0.0 } else { cdf(v as f64 - 0.5) };
                hi - lo
            })
            .collect();
        let floored = masses.iter().filter(|&&m| m < PMF_FLOOR).count() as f64;
        let kept: f64 = masses.iter().filter(|&&m| m >= PMF_FLOOR).sum();
        let p0 = 0.382_924_922_548_026_24 * (1.0 - floored * PMF_FLOOR) / kept;
        let oracle = -p0.log2();
        assert!((r.per_channel_bits()[0] - oracle).abs() < 1e-9, "{r:?} {oracle}");
        assert!((r.total_bits() - 1.38490).abs() < 1e-4);
        assert_eq!(r.per_channel_bits()[1], 0.0);
    }

    #[test]
    fn hyper_near_certain_zeros_cost_almost_nothing() {
        let a = Alphabet::new(0, 1).unwrap();
        let set = GaussianLatentSet::new(a, vec![0; 1000], vec![0; 1000]).unwrap();
        let scales = ScaleSet::new(vec![0.01]).unwrap();
        let r = expected_bits_hyper(&set, &scales).unwrap();
        assert!(r.total_bits() <= 1000.0 * 1.5e-6);
    }

    #[test]
    fn limit_closed_forms() {
        let a = Alphabet::symmetric(1).unwrap();
        let t = SymbolTensor::new(2, 2, 2, a, vec![0, 0, 0, 0, 0, 0, 1, 1]).unwrap();
        let r = limit_bits_factorized(&t);
        assert_eq!(r.per_channel_bits(), &[0.0, 4.0]);

        let set = GaussianLatentSet::new(a, vec![1, 0, 0, 1, 1], vec![0, 1, 1, 1, 1]).unwrap();
        let r = limit_bits_hyper(&set);
        assert_eq!(r.per_channel_bits(), &[0.0, 4.0]);
    }

    #[test]
    fn limit_matches_entropy_oracle() {
        let a = Alphabet::symmetric(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let symbols: Vec<i32> = (0..3 * 100).map(|_| rng.gen_range(-6..=6) / 2).collect();
        let index: Vec<u16> = (0..300).map(|_| rng.gen_range(0..3)).collect();
        let t = SymbolTensor::new(10, 10, 3, a, symbols.clone()).unwrap();
        let r = limit_bits_factorized(&t);
        for c in 0..3 {
            let oracle = oracle_entropy_bits(&symbols[c * 100..(c + 1) * 100]);
            assert!(((r.per_channel_bits()[c] - oracle) / oracle).abs() < 1e-9);
        }
        let set = GaussianLatentSet::new(a, symbols.clone(), index.clone()).unwrap();
        let mut oracle = 0.0;
        for c in 0..3 {
            let members: Vec<i32> = symbols
                .iter()
                .zip(&index)
                .filter(|(_, &g)| g == c)
                .map(|(&s, _)| s)
                .collect();
            oracle += oracle_entropy_bits(&members);
        }
        let got = limit_bits_hyper(&set).total_bits();
        assert!(((got - oracle) / oracle).abs() < 1e-9);
    }

    #[test]
    fn gap_and_saving_arithmetic() {
        assert!((gap(100.0, 77.9).unwrap() - 0.221).abs() < 1e-12);
        assert_eq!(gap(50.0, 50.0).unwrap(), 0.0);
        assert_eq!(gap(25.36, 0.0).unwrap(), 1.0);
        assert!(matches!(gap(0.0, 0.0), Err(BitError::UndefinedMetric(_))));
        assert!(matches!(gap(1.0, 2.0), Err(BitError::LimitAboveBaseline { .. })));

        assert!((saving(100.0, 98.0).unwrap() - 0.02).abs() < 1e-12);
        assert_eq!(saving(7.0, 7.0).unwrap(), 0.0);
        assert!((saving(50.0, 45.0).unwrap() - 0.1).abs() < 1e-12);
        assert!(saving(0.0, 1.0).is_err());
    }

    #[test]
    fn frame_totals_add_present_components() {
        let c = ComponentBits::new;
        let p = FrameBudget::new(
            FrameKind::Predicted,
            Some((c(10.0, 8.0, 9.0), c(20.0, 19.0, 19.5))),
            c(5.0, 4.0, 4.2),
            c(65.0, 64.0, 64.5),
        )
        .unwrap();
        let (b, l, o) = frame_totals(&p);
        assert!((b - 100.0).abs() < 1e-9 && (l - 95.0).abs() < 1e-9 && (o - 97.2).abs() < 1e-9);

        let i = FrameBudget::new(FrameKind::Intra, None, c(5.0, 4.0, 4.2), c(65.0, 64.0, 64.5))
            .unwrap();
        let (b, l, o) = frame_totals(&i);
        assert!((b - 70.0).abs() < 1e-9 && (l - 68.0).abs() < 1e-9 && (o - 68.7).abs() < 1e-9);

        let zero = FrameBudget::new(
            FrameKind::Predicted,
            Some((c(0.0, 0.0, 0.0), c(0.0, 0.0, 0.0))),
            c(5.0, 4.0, 4.2),
            c(65.0, 64.0, 64.5),
        )
        .unwrap();
        assert_eq!(frame_totals(&zero), frame_totals(&i));

        assert!(FrameBudget::new(
            FrameKind::Intra,
            Some((c(1.0, 1.0, 1.0), c(1.0, 1.0, 1.0))),
            c(1.0, 1.0, 1.0),
            c(1.0, 1.0, 1.0)
        )
        .is_err());
        assert!(FrameBudget::new(FrameKind::Intra, None, c(1.0, 2.0, 1.0), c(1.0, 1.0, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn limit_never_exceeds_expected(
            seed in any::<u64>(), radius in 1i32..12, n in 1usize..400,
        ) {
            let a = Alphabet::symmetric(radius).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let size = a.size();
            let masses: Vec<f64> = (0..size).map(|_| rng.gen_range(0.0..1.0)).collect();
            let pmf = PmfTable::from_masses(-radius, &masses).unwrap();
            let symbols: Vec<i32> = (0..n).map(|_| rng.gen_range(-radius..=radius)).collect();
            let t = SymbolTensor::new(1, n, 1, a, symbols).unwrap();
            let e = expected_bits_factorized(&t, &[pmf]).unwrap().total_bits();
            let l = limit_bits_factorized(&t).total_bits();
            prop_assert!(l <= e + 1e-9 * e.max(1.0));
        }

        #[test]
        fn limit_is_permutation_invariant(seed in any::<u64>(), n in 2usize..200) {
            let a = Alphabet::symmetric(4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut symbols: Vec<i32> = (0..n).map(|_| rng.gen_range(-4..=4)).collect();
            let before = limit_bits_factorized(&SymbolTensor::new(1, n, 1, a, symbols.clone()).unwrap());
            symbols.reverse();
            symbols.rotate_left(seed as usize % n);
            let after = limit_bits_factorized(&SymbolTensor::new(1, n, 1, a, symbols).unwrap());
            prop_assert!((before.total_bits() - after.total_bits()).abs() <= 1e-9 * before.total_bits().max(1.0));
        }

        #[test]
        fn histogram_model_reproduces_limit(seed in any::<u64>(), n in 1usize..300) {
            let a = Alphabet::symmetric(5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let symbols: Vec<i32> = (0..n).map(|_| rng.gen_range(-5..=5)).collect();
            let hist = ChannelHistogram::from_symbols(a, &symbols).unwrap();
            let freqs = hist.frequencies();
            let via_model: f64 = symbols.iter().map(|&s| -freqs[a.offset(s)].log2()).sum();
            let limit = histogram_limit_bits(&hist);
            prop_assert!((via_model - limit).abs() <= 1e-9 * limit.max(1.0));
        }

        #[test]
        fn ratios_are_scale_invariant(b in 1.0f64..1e6, frac in 0.0f64..1.0, k in 1e-3f64..1e3) {
            let l = b * frac;
            let g1 = gap(b, l).unwrap();
            let g2 = gap(b * k, l * k).unwrap();
            prop_assert!((g1 - g2).abs() < 1e-9);
            let s1 = saving(b, l).unwrap();
            let s2 = saving(b * k, l * k).unwrap();
            prop_assert!((s1 - s2).abs() < 1e-9);
        }
    }
}
