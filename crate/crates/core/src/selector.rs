//! Per-channel replace / reuse / keep decisions with a temporal parameter
//! memory, for both factorized (side) and hyperprior (main) streams.
//!
//! For each of the first `S` eligible tables the encoder fits a parametric
//! candidate, measures the gain `G` (bits under the learned table minus bits
//! under the candidate) and takes exactly one branch, tested in this order:
//!
//! | # | condition                                   | parameter bits     | pmf used  |
//! |---|---------------------------------------------|--------------------|-----------|
//! | 1 | no previous params and `G <= cost`           | `1`                | learned   |
//! | 2 | new code equals previous code and `G > 0`   | `1`                | previous  |
//! | 3 | `G > cost`                                  | `0 1` + code       | new       |
//! | 4 | otherwise                                   | `0 0`              | learned   |
//!
//! `cost` is `10 (3K - 1)` bits for a `K`-component mixture and 10 bits for a
//! zero-mean Gaussian. Branches 1 and 4 clear the slot, branch 3 stores the
//! new code, branch 2 leaves it untouched. The decoder reads a temporal bit:
//! `1` means "previous params, or the learned table if there are none"; `0`
//! is followed by a replacement bit and, when set, the code itself.
//!
//! `G` is measured with the coder's fixed-point tables, so a replacement is
//! only taken when the range coder will actually realize more than its
//! signalling cost.

use thiserror::Error;

use crate::bit_accounting::{cross_entropy_bits, BitError};
use crate::bits::{BitReader, BitString, BitsExhausted};
use crate::entropy_coder::{pmf_to_freq, CoderError, FrequencyTable};
use crate::latent_model::{
    build_channel_histogram, build_group_histogram, gaussian_pmf, Alphabet, ChannelHistogram,
    GaussianLatentSet, LatentError, PmfTable, ScaleSet, SymbolTensor,
};
use crate::reparam_fit::{
    dequantize_params, fit_mixture, fit_zero_mean, reparam_pmf, CodeKind, FitError, ParamRanges,
    QuantizedParamCode, MAX_MIXTURES,
};

/// Signalling cost of a hyperprior (zero-mean) code in bits.
pub const HYPER_PARAM_COST: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectError {
    #[error("temporal state has {got} slots, expected {expected}")]
    StateSize { expected: usize, got: usize },
    #[error("{slots} slots requested but only {available} tables exist")]
    TooManySlots { slots: usize, available: usize },
    #[error("expected {expected} learned tables, got {got}")]
    TableCount { expected: usize, got: usize },
    #[error("parameter bitstream: {0}")]
    Truncated(#[from] BitsExhausted),
    #[error("stored code kind {stored:?} does not match stream kind {expected:?}")]
    CodeKind { stored: CodeKind, expected: CodeKind },
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Coder(#[from] CoderError),
    #[error(transparent)]
    Bits(#[from] BitError),
}

/// Parameters of the previous frame in the same temporal chain, one slot per
/// eligible table.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TemporalState {
    slots: Vec<Option<QuantizedParamCode>>,
}

impl TemporalState {
    pub fn new(slots: usize) -> Self {
        Self {
            slots: vec![None; slots],
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[Option<QuantizedParamCode>] {
        &self.slots
    }

    fn expect_len(&self, expected: usize) -> Result<(), SelectError> {
        if self.slots.len() == expected {
            Ok(())
        } else {
            Err(SelectError::StateSize {
                expected,
                got: self.slots.len(),
            })
        }
    }
}

/// Outcome for one table.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelDecision {
    /// Beyond the top `S`, or an empty scale group: no bits, learned table.
    Ineligible,
    /// Branch 1: temporal bit `1` with an empty slot.
    TemporalKeep { gain: f64 },
    /// Branch 2: temporal bit `1`, previous parameters reused.
    ReuseTemporal { code: QuantizedParamCode, gain: f64 },
    /// Branch 3: bits `0 1` followed by the new code.
    ReplaceNew { code: QuantizedParamCode, gain: f64 },
    /// Branch 4: bits `0 0`.
    KeepLearned { gain: f64 },
}

impl ChannelDecision {
    /// Algorithm branch number (1-4), `None` when not eligible.
    pub fn branch(&self) -> Option<u8> {
        match self {
            ChannelDecision::Ineligible => None,
            ChannelDecision::TemporalKeep { .. } => Some(1),
            ChannelDecision::ReuseTemporal { .. } => Some(2),
            ChannelDecision::ReplaceNew { .. } => Some(3),
            ChannelDecision::KeepLearned { .. } => Some(4),
        }
    }

    pub fn gain(&self) -> Option<f64> {
        match *self {
            ChannelDecision::Ineligible => None,
            ChannelDecision::TemporalKeep { gain }
            | ChannelDecision::KeepLearned { gain }
            | ChannelDecision::ReuseTemporal { gain, .. }
            | ChannelDecision::ReplaceNew { gain, .. } => Some(gain),
        }
    }

    /// Temporal and replacement mask bits.
    pub fn mask_bits(&self) -> usize {
        match self.branch() {
            None => 0,
            Some(1) | Some(2) => 1,
            Some(_) => 2,
        }
    }

    /// Explicit parameter bits.
    pub fn payload_bits(&self) -> usize {
        match self {
            ChannelDecision::ReplaceNew { code, .. } => code.bit_len(),
            _ => 0,
        }
    }

    /// Whether the coded table is a reparameterization.
    pub fn uses_reparam(&self) -> bool {
        matches!(
            self,
            ChannelDecision::ReuseTemporal { .. } | ChannelDecision::ReplaceNew { .. }
        )
    }
}

/// Encoder output for one stream of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSelection {
    /// Indexed by channel (factorized) or scale index (hyperprior).
    pub decisions: Vec<ChannelDecision>,
    /// Table each channel or scale group is coded with.
    pub pmfs: Vec<PmfTable>,
    pub param_bits: BitString,
    pub state: TemporalState,
}

/// Decoder output for one stream of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSelection {
    pub pmfs: Vec<PmfTable>,
    pub branches: Vec<Option<u8>>,
    pub state: TemporalState,
}

/// Channel permutation by descending learned-table entropy; ties keep the
/// lower channel first.
pub fn order_channels_by_entropy(pmfs: &[PmfTable]) -> Vec<usize> {
    let entropy: Vec<f64> = pmfs.iter().map(PmfTable::entropy_bits).collect();
    let mut order: Vec<usize> = (0..pmfs.len()).collect();
    order.sort_by(|&a, &b| entropy[b].total_cmp(&entropy[a]).then(a.cmp(&b)));
    order
}

/// `G` in floating point: bits under `learned` minus bits under `candidate`.
pub fn compute_gain(
    slice_symbols: &[i32],
    learned: &PmfTable,
    candidate: &PmfTable,
) -> Result<f64, BitError> {
    Ok(cross_entropy_bits(slice_symbols, learned)? - cross_entropy_bits(slice_symbols, candidate)?)
}

/// `G` under the coder's fixed-point tables.
pub fn coded_gain(hist: &ChannelHistogram, learned: &FrequencyTable, candidate: &FrequencyTable) -> f64 {
    hist.support()
        .map(|(v, c)| {
            let a = learned.cost_bits(v).expect("histogram within learned alphabet");
            let b = candidate.cost_bits(v).expect("histogram within candidate alphabet");
            c as f64 * (a - b)
        })
        .sum()
}

/// Signalling cost of a `K`-component mixture code: `10 (3K - 1)` bits.
pub fn factorized_param_cost(k: usize) -> f64 {
    CodeKind::Factorized { k: k as u8 }.bit_len() as f64
}

struct Candidate {
    code: QuantizedParamCode,
    pmf: PmfTable,
    gain: f64,
}

/// Applies the four branches for one slot, writing its bits.
fn resolve(
    prev: &Option<QuantizedParamCode>,
    cand: Candidate,
    cost: f64,
    learned: &PmfTable,
    bits: &mut BitString,
) -> (ChannelDecision, PmfTable, Option<QuantizedParamCode>) {
    let gain = cand.gain;
    if prev.is_none() && gain <= cost {
        bits.push(true);
        (ChannelDecision::TemporalKeep { gain }, learned.clone(), None)
    } else if prev.as_ref() == Some(&cand.code) && gain > 0.0 {
        bits.push(true);
        let code = cand.code;
        (
            ChannelDecision::ReuseTemporal {
                code: code.clone(),
                gain,
            },
            cand.pmf,
            Some(code),
        )
    } else if gain > cost {
        bits.push(false);
        bits.push(true);
        cand.code.write_bits(bits);
        let code = cand.code;
        (
            ChannelDecision::ReplaceNew {
                code: code.clone(),
                gain,
            },
            cand.pmf,
            Some(code),
        )
    } else {
        bits.push(false);
        bits.push(false);
        (ChannelDecision::KeepLearned { gain }, learned.clone(), None)
    }
}

/// Mirrors [`resolve`]: reads one slot's bits and returns its table.
fn read_slot(
    reader: &mut BitReader<'_>,
    prev: &Option<QuantizedParamCode>,
    kind: CodeKind,
    ranges: &ParamRanges,
    alphabet: Alphabet,
    learned: &PmfTable,
) -> Result<(u8, PmfTable, Option<QuantizedParamCode>), SelectError> {
    if reader.read_bit()? {
        return match prev {
            None => Ok((1, learned.clone(), None)),
            Some(code) => {
                if code.kind() != kind {
                    return Err(SelectError::CodeKind {
                        stored: code.kind(),
                        expected: kind,
                    });
                }
                let pmf = reparam_pmf(&dequantize_params(code, ranges, alphabet));
                Ok((2, pmf, Some(code.clone())))
            }
        };
    }
    if reader.read_bit()? {
        let code = QuantizedParamCode::read_bits(kind, reader)?;
        let pmf = reparam_pmf(&dequantize_params(&code, ranges, alphabet));
        Ok((3, pmf, Some(code)))
    } else {
        Ok((4, learned.clone(), None))
    }
}

fn check_slots(slots: usize, available: usize, state: &TemporalState) -> Result<(), SelectError> {
    if slots > available {
        return Err(SelectError::TooManySlots { slots, available });
    }
    state.expect_len(slots)
}

fn check_mixtures(k: usize) -> Result<(), SelectError> {
    if k == 0 || k > MAX_MIXTURES {
        return Err(FitError::MixtureSize(k).into());
    }
    Ok(())
}

/// Runs the branch table over the `slots` highest-entropy channels of a side
/// latent tensor.
pub fn encode_factorized_frame(
    tensor: &SymbolTensor,
    learned: &[PmfTable],
    slots: usize,
    k: usize,
    state: &TemporalState,
) -> Result<FrameSelection, SelectError> {
    if learned.len() != tensor.channels() {
        return Err(SelectError::TableCount {
            expected: tensor.channels(),
            got: learned.len(),
        });
    }
    check_slots(slots, tensor.channels(), state)?;
    check_mixtures(k)?;
    let alphabet = tensor.alphabet();
    let ranges = ParamRanges::for_alphabet(alphabet);
    let cost = factorized_param_cost(k);

    let mut decisions = vec![ChannelDecision::Ineligible; tensor.channels()];
    let mut pmfs = learned.to_vec();
    let mut bits = BitString::new();
    let mut next = TemporalState::new(slots);

    let order = order_channels_by_entropy(learned);
    for (slot, &channel) in order.iter().take(slots).enumerate() {
        let hist = build_channel_histogram(tensor, channel)?;
        let fit = fit_mixture(&hist, k, &ranges)?;
        let gain = coded_gain(&hist, &pmf_to_freq(&learned[channel])?, &pmf_to_freq(&fit.pmf)?);
        let cand = Candidate {
            code: fit.code,
            pmf: fit.pmf,
            gain,
        };
        let (decision, pmf, code) =
            resolve(&state.slots[slot], cand, cost, &learned[channel], &mut bits);
        decisions[channel] = decision;
        pmfs[channel] = pmf;
        next.slots[slot] = code;
    }
    Ok(FrameSelection {
        decisions,
        pmfs,
        param_bits: bits,
        state: next,
    })
}

pub fn decode_factorized_decisions(
    reader: &mut BitReader<'_>,
    learned: &[PmfTable],
    alphabet: Alphabet,
    slots: usize,
    k: usize,
    state: &TemporalState,
) -> Result<DecodedSelection, SelectError> {
    check_slots(slots, learned.len(), state)?;
    check_mixtures(k)?;
    let ranges = ParamRanges::for_alphabet(alphabet);
    let kind = CodeKind::Factorized { k: k as u8 };
    let mut pmfs = learned.to_vec();
    let mut branches = vec![None; learned.len()];
    let mut next = TemporalState::new(slots);
    for (slot, &channel) in order_channels_by_entropy(learned).iter().take(slots).enumerate() {
        let (branch, pmf, code) =
            read_slot(reader, &state.slots[slot], kind, &ranges, alphabet, &learned[channel])?;
        branches[channel] = Some(branch);
        pmfs[channel] = pmf;
        next.slots[slot] = code;
    }
    Ok(DecodedSelection {
        pmfs,
        branches,
        state: next,
    })
}

/// Learned hyperprior tables `N̂(·; 0, σ_c)` for every predefined scale.
pub fn learned_hyper_pmfs(scales: &ScaleSet, alphabet: Alphabet) -> Result<Vec<PmfTable>, SelectError> {
    scales
        .scales()
        .iter()
        .map(|&s| gaussian_pmf(s, alphabet.lo(), alphabet.hi()).map_err(Into::into))
        .collect()
}

/// Runs the branch table over the first `slots` scale groups (ascending
/// scale). Empty groups are skipped without bits and keep their slot.
pub fn encode_hyper_frame(
    latents: &GaussianLatentSet,
    scales: &ScaleSet,
    slots: usize,
    state: &TemporalState,
) -> Result<FrameSelection, SelectError> {
    let learned = learned_hyper_pmfs(scales, latents.alphabet())?;
    encode_hyper_frame_with(latents, &learned, slots, state)
}

/// [`encode_hyper_frame`] with precomputed learned tables.
pub fn encode_hyper_frame_with(
    latents: &GaussianLatentSet,
    learned: &[PmfTable],
    slots: usize,
    state: &TemporalState,
) -> Result<FrameSelection, SelectError> {
    check_slots(slots, learned.len(), state)?;
    if let Some(max) = latents.max_scale_index() {
        if max >= learned.len() {
            return Err(LatentError::Shape(format!(
                "scale index {max} outside a set of {} scales",
                learned.len()
            ))
            .into());
        }
    }
    let ranges = ParamRanges::for_alphabet(latents.alphabet());
    let mut decisions = vec![ChannelDecision::Ineligible; learned.len()];
    let mut pmfs = learned.to_vec();
    let mut bits = BitString::new();
    let mut next = state.clone();
    for slot in 0..slots {
        let hist = match build_group_histogram(latents, slot) {
            Ok(h) => h,
            Err(LatentError::EmptyGroup { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let fit = fit_zero_mean(&hist, &ranges);
        let gain = coded_gain(&hist, &pmf_to_freq(&learned[slot])?, &pmf_to_freq(&fit.pmf)?);
        let cand = Candidate {
            code: fit.code,
            pmf: fit.pmf,
            gain,
        };
        let (decision, pmf, code) =
            resolve(&state.slots[slot], cand, HYPER_PARAM_COST, &learned[slot], &mut bits);
        decisions[slot] = decision;
        pmfs[slot] = pmf;
        next.slots[slot] = code;
    }
    Ok(FrameSelection {
        decisions,
        pmfs,
        param_bits: bits,
        state: next,
    })
}

/// Decoder mirror of [`encode_hyper_frame`]. `group_sizes[c]` is the number
/// of elements assigned to scale `c` in this frame.
pub fn decode_hyper_decisions(
    reader: &mut BitReader<'_>,
    learned: &[PmfTable],
    alphabet: Alphabet,
    group_sizes: &[usize],
    slots: usize,
    state: &TemporalState,
) -> Result<DecodedSelection, SelectError> {
    check_slots(slots, learned.len(), state)?;
    let ranges = ParamRanges::for_alphabet(alphabet);
    let mut pmfs = learned.to_vec();
    let mut branches = vec![None; learned.len()];
    let mut next = state.clone();
    for slot in 0..slots {
        if group_sizes.get(slot).copied().unwrap_or(0) == 0 {
            continue;
        }
        let (branch, pmf, code) = read_slot(
            reader,
            &state.slots[slot],
            CodeKind::Hyper,
            &ranges,
            alphabet,
            &learned[slot],
        )?;
        branches[slot] = Some(branch);
        pmfs[slot] = pmf;
        next.slots[slot] = code;
    }
    Ok(DecodedSelection {
        pmfs,
        branches,
        state: next,
    })
}
