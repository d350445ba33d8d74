//! Whole-container encode and decode.
//!
//! Each stream of each frame runs the selector, then range-codes its symbols
//! with the chosen tables. Side streams are coded channel-major, main streams
//! in element order with the table of each element's scale group. Temporal
//! state is kept per stream kind, separately for intra and inter frames, so
//! the inter chain of motion and residual streams survives intervening I
//! frames.

use thiserror::Error;

use crate::bit_accounting::{
    expected_bits_factorized, expected_bits_hyper_with, limit_bits_factorized, limit_bits_hyper,
    saving, BitError,
};
use crate::container_io::{
    BitstreamContainer, BitstreamFrame, BitstreamHeader, FormatError, LatentContainer,
    LatentFrame, ModelTables, StreamData, StreamModel, StreamPayload, StreamShape,
    PARAM_RANGES_TAG,
};
use crate::entropy_coder::{pmf_to_freq, CoderError, FrequencyTable, RangeDecoder, RangeEncoder};
use crate::latent_model::{Alphabet, GaussianLatentSet, LatentError, PmfTable, SymbolTensor};
use crate::reparam_fit::MAX_MIXTURES;
use crate::selector::{
    decode_factorized_decisions, decode_hyper_decisions, encode_factorized_frame,
    encode_hyper_frame_with, learned_hyper_pmfs, ChannelDecision, FrameSelection, SelectError,
    TemporalState,
};
use crate::{FrameKind, StreamKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bitstream does not match the model tables: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Coder(#[from] CoderError),
    #[error(transparent)]
    Bits(#[from] BitError),
    #[error(transparent)]
    Latent(#[from] LatentError),
}

/// Encoder settings; all three are written to the bitstream header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Mixture components `K` for side-stream refits.
    pub mixtures: usize,
    /// Eligible channels per side stream.
    pub top_s_factorized: usize,
    /// Eligible scale groups per main stream.
    pub top_s_hyper: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            mixtures: 1,
            top_s_factorized: 8,
            top_s_hyper: 8,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.mixtures == 0 || self.mixtures > MAX_MIXTURES {
            return Err(CodecError::Config(format!(
                "mixture count {} outside 1..={MAX_MIXTURES}",
                self.mixtures
            )));
        }
        for (name, s) in [("top-S factorized", self.top_s_factorized), ("top-S hyper", self.top_s_hyper)] {
            if s > usize::from(u16::MAX) {
                return Err(CodecError::Config(format!("{name} {s} exceeds 65535")));
            }
        }
        Ok(())
    }

    fn header(&self, models: &ModelTables) -> BitstreamHeader {
        let mut alphabets = [None; 4];
        for kind in StreamKind::ALL {
            alphabets[kind as usize] = models.get(kind).map(StreamModel::alphabet);
        }
        BitstreamHeader {
            mixtures: self.mixtures as u8,
            top_s_factorized: self.top_s_factorized as u16,
            top_s_hyper: self.top_s_hyper as u16,
            ranges_tag: PARAM_RANGES_TAG,
            alphabets,
        }
    }

    fn from_header(header: &BitstreamHeader) -> Self {
        Self {
            mixtures: usize::from(header.mixtures),
            top_s_factorized: usize::from(header.top_s_factorized),
            top_s_hyper: usize::from(header.top_s_hyper),
        }
    }
}

/// Learned tables of one stream kind in both float and fixed-point form.
struct CachedModel {
    alphabet: Alphabet,
    pmfs: Vec<PmfTable>,
    freqs: Vec<FrequencyTable>,
    slots: usize,
}

struct ModelCache {
    models: [Option<CachedModel>; 4],
}

impl ModelCache {
    fn new(models: &ModelTables, config: &EncoderConfig) -> Result<Self, CodecError> {
        let mut out: [Option<CachedModel>; 4] = Default::default();
        for kind in StreamKind::ALL {
            let Some(model) = models.get(kind) else { continue };
            let (pmfs, slots) = match model {
                StreamModel::Side(m) => (m.pmfs().to_vec(), config.top_s_factorized.min(m.channels())),
                StreamModel::Main(m) => (
                    learned_hyper_pmfs(m.scales(), m.alphabet())?,
                    config.top_s_hyper.min(m.scales().len()),
                ),
            };
            let freqs = pmfs.iter().map(pmf_to_freq).collect::<Result<Vec<_>, _>>()?;
            out[kind as usize] = Some(CachedModel {
                alphabet: model.alphabet(),
                pmfs,
                freqs,
                slots,
            });
        }
        Ok(Self { models: out })
    }

    fn get(&self, kind: StreamKind) -> Result<&CachedModel, CodecError> {
        self.models[kind as usize]
            .as_ref()
            .ok_or_else(|| CodecError::Mismatch(format!("no model for {kind}")))
    }
}

/// Temporal state per stream kind for the intra and the inter chain.
struct Chains {
    intra: [TemporalState; 4],
    inter: [TemporalState; 4],
}

impl Chains {
    fn new(cache: &ModelCache) -> Self {
        let states: [TemporalState; 4] = std::array::from_fn(|k| {
            TemporalState::new(cache.models[k].as_ref().map_or(0, |m| m.slots))
        });
        Self {
            intra: states.clone(),
            inter: states,
        }
    }

    fn get_mut(&mut self, frame: FrameKind, stream: StreamKind) -> &mut TemporalState {
        let chain = if frame.is_inter() { &mut self.inter } else { &mut self.intra };
        &mut chain[stream as usize]
    }
}

/// Bits of one stream of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamReport {
    pub kind: StreamKind,
    pub symbols: usize,
    /// Floating-point bits under the learned tables.
    pub estimated_baseline_bits: f64,
    /// Empirical-entropy limit.
    pub limit_bits: f64,
    /// Floating-point bits under the chosen tables plus parameter bits.
    pub estimated_achieved_bits: f64,
    /// Range-coded size with the learned tables.
    pub coded_baseline_bits: usize,
    pub param_bits: usize,
    pub latent_bits: usize,
    /// Indexed by channel or scale group.
    pub decisions: Vec<ChannelDecision>,
}

impl StreamReport {
    /// Payload bits actually written for this stream.
    pub fn achieved_bits(&self) -> usize {
        self.param_bits + self.latent_bits
    }

    pub fn mask_bits(&self) -> usize {
        self.decisions.iter().map(ChannelDecision::mask_bits).sum()
    }

    /// Explicit parameter bits written for replaced tables.
    pub fn payload_param_bits(&self) -> usize {
        self.decisions.iter().map(ChannelDecision::payload_bits).sum()
    }

    pub fn branch_count(&self, branch: u8) -> usize {
        self.decisions.iter().filter(|d| d.branch() == Some(branch)).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameReport {
    pub kind: FrameKind,
    pub streams: Vec<StreamReport>,
}

impl FrameReport {
    pub fn stream(&self, kind: StreamKind) -> Option<&StreamReport> {
        self.streams.iter().find(|s| s.kind == kind)
    }

    pub fn coded_baseline_bits(&self) -> usize {
        self.streams.iter().map(|s| s.coded_baseline_bits).sum()
    }

    pub fn achieved_bits(&self) -> usize {
        self.streams.iter().map(StreamReport::achieved_bits).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeSummary {
    pub config: EncoderConfig,
    pub frames: Vec<FrameReport>,
}

impl EncodeSummary {
    pub fn coded_baseline_bits(&self) -> usize {
        self.frames.iter().map(FrameReport::coded_baseline_bits).sum()
    }

    pub fn achieved_bits(&self) -> usize {
        self.frames.iter().map(FrameReport::achieved_bits).sum()
    }

    /// `1 - achieved/baseline` from coded sizes.
    pub fn saving(&self) -> Result<f64, BitError> {
        saving(self.coded_baseline_bits() as f64, self.achieved_bits() as f64)
    }
}

fn encode_side_symbols(t: &SymbolTensor, tables: &[&FrequencyTable]) -> Result<Vec<u8>, CoderError> {
    let mut enc = RangeEncoder::new();
    for (c, table) in tables.iter().enumerate() {
        for &s in t.channel(c).expect("one table per channel") {
            enc.encode(s, table)?;
        }
    }
    Ok(enc.finish().bytes)
}

fn encode_main_symbols(set: &GaussianLatentSet, tables: &[&FrequencyTable]) -> Result<Vec<u8>, CoderError> {
    let mut enc = RangeEncoder::new();
    for (&s, &c) in set.symbols().iter().zip(set.scale_index()) {
        enc.encode(s, tables[usize::from(c)])?;
    }
    Ok(enc.finish().bytes)
}

/// Fixed-point tables for a selection: refitted tables are converted, the
/// rest borrow the learned ones.
fn chosen_tables<'a>(
    sel_pmfs: &[PmfTable],
    reparam: impl Iterator<Item = bool>,
    learned: &'a [FrequencyTable],
    own: &'a mut Vec<Option<FrequencyTable>>,
) -> Result<Vec<&'a FrequencyTable>, CoderError> {
    *own = reparam
        .zip(sel_pmfs)
        .map(|(r, p)| r.then(|| pmf_to_freq(p)).transpose())
        .collect::<Result<_, _>>()?;
    Ok(own
        .iter()
        .zip(learned)
        .map(|(o, l)| o.as_ref().unwrap_or(l))
        .collect())
}

fn report(
    kind: StreamKind,
    symbols: usize,
    sel: &FrameSelection,
    (estimated_baseline_bits, limit_bits, estimated_chosen_bits): (f64, f64, f64),
    coded_baseline: &[u8],
    latent: &[u8],
) -> StreamReport {
    StreamReport {
        kind,
        symbols,
        estimated_baseline_bits,
        limit_bits,
        estimated_achieved_bits: estimated_chosen_bits + sel.param_bits.len() as f64,
        coded_baseline_bits: 8 * coded_baseline.len(),
        param_bits: sel.param_bits.len(),
        latent_bits: 8 * latent.len(),
        decisions: sel.decisions.clone(),
    }
}

fn encode_stream(
    kind: StreamKind,
    data: &StreamData,
    model: &CachedModel,
    mixtures: usize,
    state: &TemporalState,
) -> Result<(StreamPayload, StreamReport, TemporalState), CodecError> {
    let mut own = Vec::new();
    let learned: Vec<&FrequencyTable> = model.freqs.iter().collect();
    let (sel, shape, latent, baseline, rep) = match data {
        StreamData::Side(t) => {
            let sel = encode_factorized_frame(t, &model.pmfs, model.slots, mixtures, state)?;
            let tables = chosen_tables(&sel.pmfs, sel.decisions.iter().map(|d| d.uses_reparam()), &model.freqs, &mut own)?;
            let latent = encode_side_symbols(t, &tables)?;
            let baseline = encode_side_symbols(t, &learned)?;
            let est = (
                expected_bits_factorized(t, &model.pmfs)?.total_bits(),
                limit_bits_factorized(t).total_bits(),
                expected_bits_factorized(t, &sel.pmfs)?.total_bits(),
            );
            let shape = StreamShape::Side {
                height: t.height(),
                width: t.width(),
            };
            (sel, shape, latent, baseline, (t.symbols().len(), est))
        }
        StreamData::Main(s) => {
            let sel = encode_hyper_frame_with(s, &model.pmfs, model.slots, state)?;
            let tables = chosen_tables(&sel.pmfs, sel.decisions.iter().map(|d| d.uses_reparam()), &model.freqs, &mut own)?;
            let latent = encode_main_symbols(s, &tables)?;
            let baseline = encode_main_symbols(s, &learned)?;
            let est = (
                expected_bits_hyper_with(s, &model.pmfs)?.total_bits(),
                limit_bits_hyper(s).total_bits(),
                expected_bits_hyper_with(s, &sel.pmfs)?.total_bits(),
            );
            (sel, StreamShape::Main { len: s.len() }, latent, baseline, (s.len(), est))
        }
    };
    let (symbols, est) = rep;
    let rep = report(kind, symbols, &sel, est, &baseline, &latent);
    log::debug!(
        "{kind}: {} symbols, baseline {} bits, achieved {} bits",
        symbols,
        rep.coded_baseline_bits,
        rep.achieved_bits()
    );
    let payload = StreamPayload {
        kind,
        shape,
        param_bits: sel.param_bits,
        latent_bytes: latent,
    };
    Ok((payload, rep, sel.state))
}

/// Encodes every frame of `container`.
pub fn encode_container(
    container: &LatentContainer,
    config: &EncoderConfig,
) -> Result<(BitstreamContainer, EncodeSummary), CodecError> {
    config.validate()?;
    let cache = ModelCache::new(container.models(), config)?;
    let mut chains = Chains::new(&cache);
    let mut frames = Vec::with_capacity(container.frames().len());
    let mut reports = Vec::with_capacity(container.frames().len());
    for (i, frame) in container.frames().iter().enumerate() {
        let mut streams = Vec::new();
        let mut stream_reports = Vec::new();
        for (kind, data) in frame.present() {
            let state = chains.get_mut(frame.kind(), kind);
            let (payload, rep, next) = encode_stream(kind, data, cache.get(kind)?, config.mixtures, state)?;
            *state = next;
            streams.push(payload);
            stream_reports.push(rep);
        }
        log::info!("frame {i} ({}) encoded", frame.kind());
        frames.push(BitstreamFrame {
            kind: frame.kind(),
            streams,
        });
        reports.push(FrameReport {
            kind: frame.kind(),
            streams: stream_reports,
        });
    }
    Ok((
        BitstreamContainer {
            header: config.header(container.models()),
            frames,
        },
        EncodeSummary {
            config: *config,
            frames: reports,
        },
    ))
}

/// What the decoder knows without reading the bitstream: the model tables
/// and, per frame, the scale index of every main-latent element (in a full
/// codec these come out of the hyper-decoder).
pub struct DecoderSideInfo<'a> {
    models: &'a ModelTables,
    scale_index: Vec<[Option<&'a [u16]>; 4]>,
}

impl<'a> DecoderSideInfo<'a> {
    pub fn from_container(container: &'a LatentContainer) -> Self {
        let scale_index = container
            .frames()
            .iter()
            .map(|f| std::array::from_fn(|k| f.main(StreamKind::ALL[k]).map(|s| s.scale_index())))
            .collect();
        Self {
            models: container.models(),
            scale_index,
        }
    }
}

fn decode_stream(
    payload: &StreamPayload,
    model: &CachedModel,
    mixtures: usize,
    state: &TemporalState,
    scale_index: Option<&[u16]>,
) -> Result<(StreamData, TemporalState), CodecError> {
    let kind = payload.kind;
    let mut reader = payload.param_bits.reader();
    let mut own = Vec::new();
    let data = match (payload.shape, scale_index) {
        (StreamShape::Side { height, width }, _) => {
            let dec = decode_factorized_decisions(&mut reader, &model.pmfs, model.alphabet, model.slots, mixtures, state)?;
            let tables = chosen_tables(&dec.pmfs, dec.branches.iter().map(|b| matches!(b, Some(2 | 3))), &model.freqs, &mut own)?;
            let per_channel = height
                .checked_mul(width)
                .ok_or_else(|| CodecError::Mismatch(format!("{kind} shape overflows")))?;
            let mut symbols = Vec::with_capacity(per_channel.saturating_mul(tables.len()).min(1 << 26));
            let mut rd = RangeDecoder::new(&payload.latent_bytes)?;
            for table in &tables {
                for _ in 0..per_channel {
                    symbols.push(rd.decode(table)?);
                }
            }
            rd.finish()?;
            let t = SymbolTensor::new(height, width, tables.len(), model.alphabet, symbols)?;
            (StreamData::Side(t), dec.state)
        }
        (StreamShape::Main { len }, Some(index)) => {
            if index.len() != len {
                return Err(CodecError::Mismatch(format!(
                    "{kind} has {len} coded symbols but {} scale indices",
                    index.len()
                )));
            }
            if let Some(&bad) = index.iter().find(|&&c| usize::from(c) >= model.pmfs.len()) {
                return Err(CodecError::Mismatch(format!("{kind} scale index {bad} out of range")));
            }
            let mut sizes = vec![0usize; model.pmfs.len()];
            for &c in index {
                sizes[usize::from(c)] += 1;
            }
            let dec = decode_hyper_decisions(&mut reader, &model.pmfs, model.alphabet, &sizes, model.slots, state)?;
            let tables = chosen_tables(&dec.pmfs, dec.branches.iter().map(|b| matches!(b, Some(2 | 3))), &model.freqs, &mut own)?;
            let mut rd = RangeDecoder::new(&payload.latent_bytes)?;
            let symbols = index
                .iter()
                .map(|&c| rd.decode(tables[usize::from(c)]))
                .collect::<Result<Vec<_>, _>>()?;
            rd.finish()?;
            let set = GaussianLatentSet::new(model.alphabet, symbols, index.to_vec())?;
            (StreamData::Main(set), dec.state)
        }
        (StreamShape::Main { .. }, None) => {
            return Err(CodecError::Mismatch(format!("no scale indices for {kind}")));
        }
    };
    if reader.remaining() != 0 {
        return Err(CodecError::Mismatch(format!(
            "{kind}: {} unread parameter bits",
            reader.remaining()
        )));
    }
    Ok(data)
}

/// Reconstructs every frame. With `expected` set, a header whose `K` or `S`
/// values differ is rejected as a version error.
pub fn decode_bitstream(
    bitstream: &BitstreamContainer,
    side: &DecoderSideInfo<'_>,
    expected: Option<&EncoderConfig>,
) -> Result<Vec<LatentFrame>, CodecError> {
    let header = &bitstream.header;
    if let Some(cfg) = expected {
        let checks = [
            ("mixture count", cfg.mixtures, usize::from(header.mixtures)),
            ("top-S factorized", cfg.top_s_factorized, usize::from(header.top_s_factorized)),
            ("top-S hyper", cfg.top_s_hyper, usize::from(header.top_s_hyper)),
        ];
        for (field, want, found) in checks {
            if want != found {
                return Err(FormatError::Version {
                    field,
                    expected: want as u32,
                    found: found as u32,
                }
                .into());
            }
        }
    }
    let config = EncoderConfig::from_header(header);
    config.validate()?;
    for kind in StreamKind::ALL {
        let have = side.models.get(kind).map(StreamModel::alphabet);
        if have != header.alphabets[kind as usize] {
            return Err(CodecError::Mismatch(format!("{kind} alphabet or presence differs")));
        }
    }
    if side.scale_index.len() != bitstream.frames.len() {
        return Err(CodecError::Mismatch(format!(
            "{} coded frames but side information for {}",
            bitstream.frames.len(),
            side.scale_index.len()
        )));
    }
    let cache = ModelCache::new(side.models, &config)?;
    let mut chains = Chains::new(&cache);
    let mut out = Vec::with_capacity(bitstream.frames.len());
    for (frame, index) in bitstream.frames.iter().zip(&side.scale_index) {
        let mut latent = LatentFrame::new(frame.kind);
        for payload in &frame.streams {
            let state = chains.get_mut(frame.kind, payload.kind);
            let (data, next) = decode_stream(
                payload,
                cache.get(payload.kind)?,
                config.mixtures,
                state,
                index[payload.kind as usize],
            )?;
            *state = next;
            latent = latent.with(payload.kind, data);
        }
        out.push(latent);
    }
    Ok(out)
}

/// Decodes `bitstream` and compares against the frames of `reference`.
/// Returns the index of the first differing frame, if any.
pub fn verify_round_trip(
    bitstream: &BitstreamContainer,
    reference: &LatentContainer,
) -> Result<Option<usize>, CodecError> {
    let decoded = decode_bitstream(bitstream, &DecoderSideInfo::from_container(reference), None)?;
    Ok(decoded
        .iter()
        .zip(reference.frames())
        .position(|(a, b)| a != b)
        .or((decoded.len() != reference.frames().len()).then_some(decoded.len())))
}

/// Parameter bits of a whole bitstream.
pub fn total_param_bits(bitstream: &BitstreamContainer) -> usize {
    bitstream
        .frames
        .iter()
        .flat_map(|f| &f.streams)
        .map(|s| s.param_bits.len())
        .sum()
}
