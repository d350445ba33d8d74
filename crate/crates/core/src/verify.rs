//! Invariant checks over a container and its encoding: Gibbs' inequality per
//! channel and scale group, the per-stream overhead bound, and lossless
//! round trip.

use crate::bit_accounting::{
    expected_bits_factorized, expected_bits_hyper_with, limit_bits_factorized, limit_bits_hyper,
};
use crate::codec::{encode_container, verify_round_trip, CodecError, EncodeSummary, EncoderConfig};
use crate::container_io::{LatentContainer, StreamData};
use crate::selector::learned_hyper_pmfs;
use crate::StreamKind;

/// Coder slack allowed per stream on top of the mask bits.
pub const FLUSH_SLACK_BITS: usize = 32;

/// Relative tolerance of the Gibbs comparison.
const GIBBS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsViolation {
    pub frame: usize,
    pub stream: StreamKind,
    /// Channel or scale group.
    pub table: usize,
    pub expected_bits: f64,
    pub limit_bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverheadViolation {
    pub frame: usize,
    /// `None` for the whole-frame check.
    pub stream: Option<StreamKind>,
    pub achieved_bits: usize,
    pub allowed_bits: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub tables_checked: usize,
    pub streams_checked: usize,
    pub gibbs: Vec<GibbsViolation>,
    pub overhead: Vec<OverheadViolation>,
    /// First frame that failed to reconstruct, if any.
    pub round_trip_failure: Option<usize>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.gibbs.is_empty() && self.overhead.is_empty() && self.round_trip_failure.is_none()
    }
}

/// `limit <= expected` for every channel and non-empty scale group.
pub fn check_gibbs(container: &LatentContainer) -> Result<(Vec<GibbsViolation>, usize), CodecError> {
    let models = container.models();
    let mut hyper_tables: [Option<Vec<_>>; 4] = Default::default();
    for kind in StreamKind::ALL {
        if let Some(m) = models.main(kind) {
            hyper_tables[kind as usize] = Some(learned_hyper_pmfs(m.scales(), m.alphabet())?);
        }
    }
    let mut out = Vec::new();
    let mut checked = 0;
    for (i, frame) in container.frames().iter().enumerate() {
        for (kind, data) in frame.present() {
            let (expected, limit) = match data {
                StreamData::Side(t) => {
                    let side = models.side(kind).expect("validated container");
                    (expected_bits_factorized(t, side.pmfs())?, limit_bits_factorized(t))
                }
                StreamData::Main(s) => {
                    let pmfs = hyper_tables[kind as usize].as_ref().expect("validated container");
                    (expected_bits_hyper_with(s, pmfs)?, limit_bits_hyper(s))
                }
            };
            for (table, (&e, &l)) in expected
                .per_channel_bits()
                .iter()
                .zip(limit.per_channel_bits())
                .enumerate()
            {
                checked += 1;
                if l > e * (1.0 + GIBBS_TOLERANCE) + GIBBS_TOLERANCE {
                    out.push(GibbsViolation {
                        frame: i,
                        stream: kind,
                        table,
                        expected_bits: e,
                        limit_bits: l,
                    });
                }
            }
        }
    }
    Ok((out, checked))
}

/// Per stream: `achieved <= baseline + 2 S + 32` with `S` the stream's
/// eligible slot count. Per frame: `achieved <= baseline + 2 S_f + 2 S_h +
/// 32` per present stream.
pub fn check_overhead(summary: &EncodeSummary, container: &LatentContainer) -> Vec<OverheadViolation> {
    let cfg = summary.config;
    let models = container.models();
    let slots = |kind: StreamKind| -> usize {
        if let Some(m) = models.side(kind) {
            cfg.top_s_factorized.min(m.channels())
        } else if let Some(m) = models.main(kind) {
            cfg.top_s_hyper.min(m.scales().len())
        } else {
            0
        }
    };
    let mut out = Vec::new();
    for (i, frame) in summary.frames.iter().enumerate() {
        for s in &frame.streams {
            let allowed = s.coded_baseline_bits + 2 * slots(s.kind) + FLUSH_SLACK_BITS;
            if s.achieved_bits() > allowed {
                out.push(OverheadViolation {
                    frame: i,
                    stream: Some(s.kind),
                    achieved_bits: s.achieved_bits(),
                    allowed_bits: allowed,
                });
            }
        }
        let allowed = frame.coded_baseline_bits()
            + 2 * cfg.top_s_factorized
            + 2 * cfg.top_s_hyper
            + FLUSH_SLACK_BITS * frame.streams.len();
        if frame.achieved_bits() > allowed {
            out.push(OverheadViolation {
                frame: i,
                stream: None,
                achieved_bits: frame.achieved_bits(),
                allowed_bits: allowed,
            });
        }
    }
    out
}

/// Runs every check on `container` encoded with `config`.
pub fn verify_container(container: &LatentContainer, config: &EncoderConfig) -> Result<VerifyReport, CodecError> {
    let (gibbs, tables_checked) = check_gibbs(container)?;
    let (bitstream, summary) = encode_container(container, config)?;
    let overhead = check_overhead(&summary, container);
    let round_trip_failure = verify_round_trip(&bitstream, container)?;
    Ok(VerifyReport {
        tables_checked,
        streams_checked: summary.frames.iter().map(|f| f.streams.len()).sum(),
        gibbs,
        overhead,
        round_trip_failure,
    })
}
