//! Random containers for the integration tests.
//!
//! Learned tables are arbitrary floored pmfs (not only Gaussians) and the
//! symbols come from a mix of matched, mismatched, constant and uniform
//! sources, so every selector branch and every coder edge gets traffic.

#![allow(dead_code)]

use nvgap::codec::EncoderConfig;
use nvgap::container_io::{
    LatentContainer, LatentFrame, MainModel, ModelTables, SideModel, StreamData, StreamModel,
};
use nvgap::latent_model::{gaussian_pmf, Alphabet, GaussianLatentSet, PmfTable, ScaleSet, SymbolTensor};
use nvgap::{FrameKind, StreamKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_alphabet(rng: &mut ChaCha8Rng, max_radius: i32) -> Alphabet {
    loop {
        let lo = rng.gen_range(-max_radius..=0);
        let hi = rng.gen_range(0..=max_radius);
        if let Ok(a) = Alphabet::new(lo, hi) {
            return a;
        }
    }
}

/// Floored pmf over `alphabet`: a Gaussian with random centre and scale, or
/// random spiky masses.
pub fn random_pmf(rng: &mut ChaCha8Rng, alphabet: Alphabet) -> PmfTable {
    let n = alphabet.size();
    let masses: Vec<f64> = if rng.gen_bool(0.5) {
        let mu = rng.gen_range(alphabet.lo() as f64..=alphabet.hi() as f64);
        let sigma = rng.gen_range(0.2..(n as f64).max(1.0));
        (0..n)
            .map(|i| {
                let x = (alphabet.lo() + i as i32) as f64 - mu;
                (-0.5 * (x / sigma).powi(2)).exp()
            })
            .collect()
    } else {
        (0..n).map(|_| rng.gen::<f64>().powi(4)).collect()
    };
    PmfTable::from_masses(alphabet.lo(), &masses).expect("positive masses")
}

pub fn sample(rng: &mut ChaCha8Rng, pmf: &PmfTable) -> i32 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in pmf.probabilities().iter().enumerate() {
        acc += p;
        if u < acc {
            return pmf.alphabet_lo() + i as i32;
        }
    }
    pmf.alphabet_hi()
}

fn random_symbols(rng: &mut ChaCha8Rng, n: usize, alphabet: Alphabet, model: &PmfTable) -> Vec<i32> {
    match rng.gen_range(0..4) {
        0 => (0..n).map(|_| sample(rng, model)).collect(),
        1 => {
            let other = random_pmf(rng, alphabet);
            (0..n).map(|_| sample(rng, &other)).collect()
        }
        2 => vec![rng.gen_range(alphabet.lo()..=alphabet.hi()); n],
        _ => (0..n).map(|_| rng.gen_range(alphabet.lo()..=alphabet.hi())).collect(),
    }
}

fn random_side_model(rng: &mut ChaCha8Rng) -> SideModel {
    let alphabet = random_alphabet(rng, 12);
    let channels = rng.gen_range(1..=10);
    let pmfs = (0..channels).map(|_| random_pmf(rng, alphabet)).collect();
    SideModel::new(alphabet, pmfs).unwrap()
}

fn random_main_model(rng: &mut ChaCha8Rng) -> MainModel {
    let alphabet = random_alphabet(rng, 40);
    let count = rng.gen_range(1..=10);
    let lo = rng.gen_range(0.1..1.0);
    let hi = lo * rng.gen_range(1.5..40.0);
    MainModel::new(alphabet, ScaleSet::geometric(lo, hi, count).unwrap()).unwrap()
}

fn random_side_data(rng: &mut ChaCha8Rng, model: &SideModel) -> SymbolTensor {
    let h = rng.gen_range(1..=6);
    let w = rng.gen_range(1..=6);
    let mut syms = Vec::with_capacity(h * w * model.channels());
    for pmf in model.pmfs() {
        syms.extend(random_symbols(rng, h * w, model.alphabet(), pmf));
    }
    SymbolTensor::new(h, w, model.channels(), model.alphabet(), syms).unwrap()
}

fn random_main_data(rng: &mut ChaCha8Rng, model: &MainModel) -> GaussianLatentSet {
    let n = if rng.gen_bool(0.05) { 0 } else { rng.gen_range(1..=300) };
    let a = model.alphabet();
    let count = model.scales().len();
    // A few scales per stream so that some groups stay empty.
    let used: Vec<u16> = (0..rng.gen_range(1..=count)).map(|_| rng.gen_range(0..count) as u16).collect();
    let ratio = rng.gen_range(0.3..2.0);
    let uniform = rng.gen_bool(0.1);
    let mut syms = Vec::with_capacity(n);
    let mut idx = Vec::with_capacity(n);
    for _ in 0..n {
        let c = used[rng.gen_range(0..used.len())];
        let s = if uniform {
            rng.gen_range(a.lo()..=a.hi())
        } else {
            let pmf = gaussian_pmf(ratio * model.scales().get(c as usize), a.lo(), a.hi()).unwrap();
            sample(rng, &pmf)
        };
        syms.push(s);
        idx.push(c);
    }
    GaussianLatentSet::new(a, syms, idx).unwrap()
}

/// A valid container with 1 to 4 frames. Intra frames never carry motion.
pub fn random_container(rng: &mut ChaCha8Rng) -> LatentContainer {
    let frames = rng.gen_range(1..=4);
    let kinds: Vec<FrameKind> = (0..frames)
        .map(|i| {
            if i == 0 && rng.gen_bool(0.7) {
                FrameKind::Intra
            } else {
                FrameKind::ALL[rng.gen_range(0..3)]
            }
        })
        .collect();
    let with_motion = kinds.iter().any(|k| k.is_inter()) && rng.gen_bool(0.9);
    let mut models = ModelTables::new();
    for kind in StreamKind::ALL {
        if kind.is_motion() && !with_motion {
            continue;
        }
        let model = if kind.is_side() {
            StreamModel::Side(random_side_model(rng))
        } else {
            StreamModel::Main(random_main_model(rng))
        };
        models = models.with(kind, model).unwrap();
    }
    let mut out = Vec::with_capacity(frames);
    for kind in kinds {
        let mut frame = LatentFrame::new(kind);
        for s in StreamKind::ALL {
            if s.is_motion() && !kind.is_inter() {
                continue;
            }
            let Some(model) = models.get(s) else { continue };
            if !rng.gen_bool(0.85) {
                continue;
            }
            let data = match model {
                StreamModel::Side(m) => StreamData::Side(random_side_data(rng, m)),
                StreamModel::Main(m) => StreamData::Main(random_main_data(rng, m)),
            };
            frame = frame.with(s, data);
        }
        out.push(frame);
    }
    LatentContainer::new(models, out).unwrap()
}

pub fn random_config(rng: &mut ChaCha8Rng) -> EncoderConfig {
    const S: [usize; 3] = [0, 4, 8];
    EncoderConfig {
        mixtures: rng.gen_range(1..=3),
        top_s_factorized: S[rng.gen_range(0..3)],
        top_s_hyper: S[rng.gen_range(0..3)],
    }
}
