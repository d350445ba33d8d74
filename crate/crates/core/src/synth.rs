//! Deterministic synthetic latent containers with controllable model mismatch.
//!
//! Learned side pmfs are discretized Gaussians with per-channel mean and scale
//! (the "training" distribution). Side symbols are drawn from a shifted and
//! rescaled version of that distribution. Main latents get a predicted scale
//! inside the interval of their winning scale `σ_c`; their symbols come from a
//! zero-mean Gaussian of scale `main_sigma_ratio · σ_c`. Raw values
//! `μ + v + jitter` are run through [`center_and_assign`], so the container
//! holds exactly what a codec following that convention would emit.
//!
//! With [`Sampling::Stratified`] every channel and scale group receives the
//! largest-remainder apportionment of its pmf (positions shuffled), so frames
//! without temporal drift have identical histograms.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::container_io::{
    LatentContainer, LatentFrame, MainModel, ModelTables, SideModel, StreamData, StreamModel,
};
use crate::latent_model::{
    center_and_assign, discretized_gaussian_masses, Alphabet, GaussianLatentSet, LatentError,
    PmfTable, ScaleSet, SymbolTensor,
};
use crate::{FrameKind, StreamKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synth configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Latent(#[from] LatentError),
}

/// Frame-kind sequence presets.
pub const GOP_PRESETS: [&str; 3] = ["ssf", "lhbdc", "aivc"];

/// Named configurations shipped with the tool.
pub const PRESETS: [&str; 3] = ["matched", "drifted-sigma", "drifted-side"];

/// Parses a GOP preset name or a pattern of `I`/`P`/`B` letters.
///
/// - `ssf`: I followed by 15 P frames,
/// - `lhbdc`: I followed by 15 B frames,
/// - `aivc`: I, 14 B frames, then a closing P frame.
pub fn parse_gop(pattern: &str) -> Result<Vec<FrameKind>, SynthError> {
    let mut kinds = match pattern.to_ascii_lowercase().as_str() {
        "ssf" => vec![FrameKind::Predicted; 15],
        "lhbdc" => vec![FrameKind::Bidirectional; 15],
        "aivc" => {
            let mut v = vec![FrameKind::Bidirectional; 14];
            v.push(FrameKind::Predicted);
            v
        }
        _ => {
            return pattern
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(|c| c.to_string().parse::<FrameKind>().map_err(SynthError::Config))
                .collect::<Result<Vec<_>, _>>()
                .and_then(|v| {
                    if v.is_empty() {
                        Err(SynthError::Config("empty GOP pattern".into()))
                    } else {
                        Ok(v)
                    }
                });
        }
    };
    kinds.insert(0, FrameKind::Intra);
    Ok(kinds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Exact largest-remainder counts, shuffled positions.
    Stratified,
    /// Independent draws.
    Iid,
}

/// Sizes and alphabets of one information type (motion or residual).
#[derive(Debug, Clone, PartialEq)]
pub struct StreamShapeConfig {
    pub side_channels: usize,
    pub side_height: usize,
    pub side_width: usize,
    pub side_radius: i32,
    pub main_len: usize,
    pub main_radius: i32,
    /// Geometric scale table: `(min, max, count)`.
    pub scales: (f64, f64, usize),
}

impl StreamShapeConfig {
    fn validate(&self, name: &str) -> Result<(), SynthError> {
        if self.side_channels == 0 || self.side_height == 0 || self.side_width == 0 {
            return Err(SynthError::Config(format!("{name}: side dimensions must be positive")));
        }
        if self.side_radius < 1 || self.main_radius < 1 {
            return Err(SynthError::Config(format!("{name}: alphabet radius must be at least 1")));
        }
        if self.scales.2 == 0 || self.scales.2 > 1 << 16 {
            return Err(SynthError::Config(format!("{name}: scale count outside 1..=65536")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub gop: Vec<FrameKind>,
    pub seed: u64,
    pub residual: StreamShapeConfig,
    /// Motion streams for P and B frames; `None` leaves them out.
    pub motion: Option<StreamShapeConfig>,
    /// Side mean shift in units of each channel's learned scale.
    pub side_shift: f64,
    /// True side scale over learned side scale.
    pub side_sigma_ratio: f64,
    /// True main scale over the winning predefined scale.
    pub main_sigma_ratio: f64,
    /// Per-frame increment added to the side shift and to the main ratio.
    pub temporal_drift: f64,
    pub sampling: Sampling,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            gop: parse_gop("ssf").expect("preset"),
            seed: 0,
            residual: StreamShapeConfig {
                side_channels: 16,
                side_height: 16,
                side_width: 16,
                side_radius: 16,
                main_len: 16_384,
                main_radius: 64,
                scales: (0.25, 16.0, 16),
            },
            motion: Some(StreamShapeConfig {
                side_channels: 8,
                side_height: 16,
                side_width: 16,
                side_radius: 16,
                main_len: 4096,
                main_radius: 64,
                scales: (0.25, 16.0, 16),
            }),
            side_shift: 0.0,
            side_sigma_ratio: 1.0,
            main_sigma_ratio: 1.0,
            temporal_drift: 0.0,
            sampling: Sampling::Stratified,
        }
    }
}

impl SynthConfig {
    /// Looks up a named preset.
    ///
    /// - `matched`: latents follow the learned models.
    /// - `drifted-sigma`: predicted main scales are twice the true ones;
    ///   I + 15 P with 10^5 residual main symbols per frame.
    /// - `drifted-side`: side means shifted by one learned scale.
    pub fn preset(name: &str) -> Result<Self, SynthError> {
        let base = Self::default();
        match name {
            "matched" => Ok(base),
            "drifted-sigma" => Ok(Self {
                main_sigma_ratio: 0.5,
                residual: StreamShapeConfig {
                    main_len: 100_000,
                    ..base.residual.clone()
                },
                ..base
            }),
            "drifted-side" => Ok(Self {
                side_shift: 1.0,
                side_sigma_ratio: 0.7,
                ..base
            }),
            other => Err(SynthError::Config(format!(
                "unknown preset {other:?}; expected one of {PRESETS:?}"
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.gop.is_empty() {
            return Err(SynthError::Config("GOP has no frames".into()));
        }
        self.residual.validate("residual")?;
        if let Some(m) = &self.motion {
            m.validate("motion")?;
        }
        let finite = [self.side_shift, self.side_sigma_ratio, self.main_sigma_ratio, self.temporal_drift];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(SynthError::Config("mismatch knobs must be finite".into()));
        }
        if self.side_sigma_ratio <= 0.0 || self.main_sigma_ratio <= 0.0 {
            return Err(SynthError::Config("sigma ratios must be positive".into()));
        }
        Ok(())
    }
}

/// Largest-remainder split of `n` items proportional to `masses` (sum 1);
/// ties go to the lower index.
pub fn apportion(masses: &[f64], n: usize) -> Vec<usize> {
    let quotas: Vec<f64> = masses.iter().map(|m| m * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..masses.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn draw(rng: &mut ChaCha8Rng, masses: &[f64], lo: i32, n: usize, sampling: Sampling) -> Vec<i32> {
    match sampling {
        Sampling::Stratified => {
            let mut out: Vec<i32> = apportion(masses, n)
                .into_iter()
                .enumerate()
                .flat_map(|(i, c)| std::iter::repeat_n(lo + i as i32, c))
                .collect();
            out.shuffle(rng);
            out
        }
        Sampling::Iid => {
            let mut cdf = Vec::with_capacity(masses.len());
            let mut acc = 0.0;
            for m in masses {
                acc += m;
                cdf.push(acc);
            }
            (0..n)
                .map(|_| {
                    let u = rng.gen::<f64>() * acc;
                    lo + cdf.partition_point(|&c| c <= u).min(masses.len() - 1) as i32
                })
                .collect()
        }
    }
}

/// Learned side model and per-channel `(mean, sigma)` of the training
/// distribution.
struct SideTruth {
    model: SideModel,
    params: Vec<(f64, f64)>,
}

fn side_truth(rng: &mut ChaCha8Rng, shape: &StreamShapeConfig) -> Result<SideTruth, SynthError> {
    let alphabet = Alphabet::symmetric(shape.side_radius)?;
    let mut params = Vec::with_capacity(shape.side_channels);
    let mut pmfs = Vec::with_capacity(shape.side_channels);
    for _ in 0..shape.side_channels {
        let mean = rng.gen_range(-2.0..=2.0);
        let sigma = (rng.gen_range(0.5f64.ln()..=4f64.ln())).exp();
        pmfs.push(PmfTable::from_masses(
            alphabet.lo(),
            &discretized_gaussian_masses(mean, sigma, alphabet),
        )?);
        params.push((mean, sigma));
    }
    Ok(SideTruth {
        model: SideModel::new(alphabet, pmfs)?,
        params,
    })
}

fn side_frame(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    shape: &StreamShapeConfig,
    truth: &SideTruth,
    t: usize,
) -> Result<SymbolTensor, SynthError> {
    let alphabet = truth.model.alphabet();
    let n = shape.side_height * shape.side_width;
    let shift = cfg.side_shift + cfg.temporal_drift * t as f64;
    let mut symbols = Vec::with_capacity(n * shape.side_channels);
    for &(mean, sigma) in &truth.params {
        let masses = discretized_gaussian_masses(mean + shift * sigma, sigma * cfg.side_sigma_ratio, alphabet);
        symbols.extend(draw(rng, &masses, alphabet.lo(), n, cfg.sampling));
    }
    Ok(SymbolTensor::new(shape.side_height, shape.side_width, shape.side_channels, alphabet, symbols)?)
}

fn main_frame(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    shape: &StreamShapeConfig,
    model: &MainModel,
    t: usize,
) -> Result<GaussianLatentSet, SynthError> {
    let scales = model.scales();
    let alphabet = model.alphabet();
    let ratio = (cfg.main_sigma_ratio + cfg.temporal_drift * t as f64).max(1e-3);
    // Equal share per scale group.
    let share = vec![1.0 / scales.len() as f64; scales.len()];
    let group_sizes = apportion(&share, shape.main_len);

    let mut symbols = Vec::with_capacity(shape.main_len);
    let mut predicted = Vec::with_capacity(shape.main_len);
    for (c, &size) in group_sizes.iter().enumerate() {
        let sigma_c = scales.get(c);
        let below = if c == 0 { sigma_c / 2.0 } else { scales.get(c - 1) };
        let masses = discretized_gaussian_masses(0.0, ratio * sigma_c, alphabet);
        symbols.extend(draw(rng, &masses, alphabet.lo(), size, cfg.sampling));
        for _ in 0..size {
            // Predicted scale in (σ_{c-1}, σ_c], so the winning scale is σ_c.
            let u: f64 = rng.gen();
            predicted.push(sigma_c - u * (sigma_c - below));
        }
    }
    let mut order: Vec<usize> = (0..symbols.len()).collect();
    order.shuffle(rng);
    let mut raw = Vec::with_capacity(order.len());
    let mut means = Vec::with_capacity(order.len());
    let mut pred = Vec::with_capacity(order.len());
    for i in order {
        let mu: f64 = rng.gen_range(-4.0..4.0);
        let jitter: f64 = rng.gen_range(-0.45..0.45);
        raw.push(mu + f64::from(symbols[i]) + jitter);
        means.push(mu);
        pred.push(predicted[i]);
    }
    Ok(center_and_assign(&raw, &means, &pred, scales, alphabet)?)
}

fn main_model(shape: &StreamShapeConfig) -> Result<MainModel, SynthError> {
    let (lo, hi, count) = shape.scales;
    let scales = if count == 1 {
        ScaleSet::new(vec![lo])?
    } else {
        ScaleSet::geometric(lo, hi, count)?
    };
    Ok(MainModel::new(Alphabet::symmetric(shape.main_radius)?, scales)?)
}

/// Builds a container from `cfg`. Identical configurations give identical
/// containers.
pub fn generate(cfg: &SynthConfig) -> Result<LatentContainer, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let residual_side = side_truth(&mut rng, &cfg.residual)?;
    let residual_main = main_model(&cfg.residual)?;
    let motion = match &cfg.motion {
        Some(shape) if cfg.gop.iter().any(|k| k.is_inter()) => {
            Some((shape, side_truth(&mut rng, shape)?, main_model(shape)?))
        }
        _ => None,
    };

    let mut models = ModelTables::new()
        .with(StreamKind::ResidualSide, StreamModel::Side(residual_side.model.clone()))?
        .with(StreamKind::ResidualMain, StreamModel::Main(residual_main.clone()))?;
    if let Some((_, side, main)) = &motion {
        models = models
            .with(StreamKind::MotionSide, StreamModel::Side(side.model.clone()))?
            .with(StreamKind::MotionMain, StreamModel::Main(main.clone()))?;
    }

    let mut frames = Vec::with_capacity(cfg.gop.len());
    for (t, &kind) in cfg.gop.iter().enumerate() {
        let mut frame = LatentFrame::new(kind);
        if let (true, Some((shape, side, main))) = (kind.is_inter(), &motion) {
            frame = frame
                .with(StreamKind::MotionSide, StreamData::Side(side_frame(&mut rng, cfg, shape, side, t)?))
                .with(StreamKind::MotionMain, StreamData::Main(main_frame(&mut rng, cfg, shape, main, t)?));
        }
        frame = frame
            .with(
                StreamKind::ResidualSide,
                StreamData::Side(side_frame(&mut rng, cfg, &cfg.residual, &residual_side, t)?),
            )
            .with(
                StreamKind::ResidualMain,
                StreamData::Main(main_frame(&mut rng, cfg, &cfg.residual, &residual_main, t)?),
            );
        frames.push(frame);
    }
    Ok(LatentContainer::new(models, frames)?)
}
