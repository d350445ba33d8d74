//! On-disk formats: the latent interchange container (`.nvl`) and the encoded
//! bitstream container (`.nvb`).
//!
//! Both are little-endian, start with a four-byte magic and a `u16` version,
//! and end with a CRC-32 of every preceding byte.
//!
//! `.nvl` layout:
//!
//! ```text
//! "NVL1" u16 version
//! u8 model mask                       bit k set: model for StreamKind k present
//! per present model, in stream order:
//!   i32 lo, i32 hi                    alphabet
//!   side: u32 channels, f64 pmf[channels][hi - lo + 1]
//!   main: u32 scales,   f64 scale[scales]
//! u32 frame count
//! per frame:
//!   u8 kind (0 I, 1 P, 2 B), u8 stream mask
//!   side: u32 height, u32 width, i32 symbols[channels][height * width]
//!   main: u32 n, i32 symbols[n], u16 scale_index[n]
//! u32 crc32
//! ```
//!
//! `.nvb` layout:
//!
//! ```text
//! "NVB1" u16 version
//! u8 K, u16 S_factorized, u16 S_hyper, u8 parameter-range tag
//! u8 model mask, per present model: i32 lo, i32 hi
//! u32 frame count
//! per frame:
//!   u8 kind, u8 stream mask
//!   per present stream:
//!     side: u32 height, u32 width | main: u32 n
//!     u32 pb bit length, pb bytes (MSB-first, zero padded)
//!     u32 lb byte length, lb bytes
//! u32 crc32
//! ```
//!
//! Learned pmfs and scale sets are model weights: they live in the `.nvl`
//! only, and decoding a `.nvb` needs the matching `.nvl` for them.

use thiserror::Error;

use crate::bits::BitString;
use crate::latent_model::{Alphabet, GaussianLatentSet, LatentError, PmfTable, ScaleSet, SymbolTensor};
use crate::{FrameKind, StreamKind};

pub const LATENT_MAGIC: [u8; 4] = *b"NVL1";
pub const BITSTREAM_MAGIC: [u8; 4] = *b"NVB1";
pub const LATENT_VERSION: u16 = 1;
pub const BITSTREAM_VERSION: u16 = 1;
/// Identifies the fixed 10-bit parameter grid of the fitting module.
pub const PARAM_RANGES_TAG: u8 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("truncated at byte {offset} while reading {field}")]
    Truncated { offset: usize, field: &'static str },
    #[error("unsupported {field}: expected {expected}, found {found}")]
    Version {
        field: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("invalid {field} at byte {offset}: {reason}")]
    Invariant {
        offset: usize,
        field: &'static str,
        reason: String,
    },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("{count} trailing bytes after checksum at byte {offset}")]
    TrailingBytes { offset: usize, count: usize },
}

fn invariant(offset: usize, field: &'static str, reason: impl ToString) -> FormatError {
    FormatError::Invariant {
        offset,
        field,
        reason: reason.to_string(),
    }
}

/// Learned per-channel tables of a side stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SideModel {
    alphabet: Alphabet,
    pmfs: Vec<PmfTable>,
}

impl SideModel {
    pub fn new(alphabet: Alphabet, pmfs: Vec<PmfTable>) -> Result<Self, LatentError> {
        if pmfs.is_empty() {
            return Err(LatentError::Shape("side model needs at least one channel".into()));
        }
        for (c, p) in pmfs.iter().enumerate() {
            if p.alphabet_lo() != alphabet.lo() || p.alphabet_hi() != alphabet.hi() {
                return Err(LatentError::Shape(format!(
                    "pmf of channel {c} covers [{}, {}], alphabet is [{}, {}]",
                    p.alphabet_lo(),
                    p.alphabet_hi(),
                    alphabet.lo(),
                    alphabet.hi()
                )));
            }
        }
        Ok(Self { alphabet, pmfs })
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn pmfs(&self) -> &[PmfTable] {
        &self.pmfs
    }

    pub fn channels(&self) -> usize {
        self.pmfs.len()
    }
}

/// Predefined scales of a main stream.
#[derive(Debug, Clone, PartialEq)]
pub struct MainModel {
    alphabet: Alphabet,
    scales: ScaleSet,
}

impl MainModel {
    pub fn new(alphabet: Alphabet, scales: ScaleSet) -> Result<Self, LatentError> {
        if scales.len() > usize::from(u16::MAX) + 1 {
            return Err(LatentError::InvalidScaleSet("more than 65536 scales".into()));
        }
        Ok(Self { alphabet, scales })
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn scales(&self) -> &ScaleSet {
        &self.scales
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamModel {
    Side(SideModel),
    Main(MainModel),
}

impl StreamModel {
    pub fn alphabet(&self) -> Alphabet {
        match self {
            StreamModel::Side(m) => m.alphabet,
            StreamModel::Main(m) => m.alphabet,
        }
    }
}

/// The shared model tables, at most one per stream kind.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelTables {
    models: [Option<StreamModel>; 4],
}

impl ModelTables {
    pub fn new() -> Self {
        Self::default()
    }

    /// Installs a model; side kinds need a side model, main kinds a main model.
    pub fn with(mut self, kind: StreamKind, model: StreamModel) -> Result<Self, LatentError> {
        if kind.is_side() != matches!(model, StreamModel::Side(_)) {
            return Err(LatentError::Shape(format!("{kind} cannot use this model type")));
        }
        self.models[kind as usize] = Some(model);
        Ok(self)
    }

    pub fn get(&self, kind: StreamKind) -> Option<&StreamModel> {
        self.models[kind as usize].as_ref()
    }

    pub fn side(&self, kind: StreamKind) -> Option<&SideModel> {
        match self.get(kind) {
            Some(StreamModel::Side(m)) => Some(m),
            _ => None,
        }
    }

    pub fn main(&self, kind: StreamKind) -> Option<&MainModel> {
        match self.get(kind) {
            Some(StreamModel::Main(m)) => Some(m),
            _ => None,
        }
    }

    pub fn mask(&self) -> u8 {
        StreamKind::ALL
            .iter()
            .filter(|k| self.get(**k).is_some())
            .fold(0, |m, k| m | k.mask_bit())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamData {
    Side(SymbolTensor),
    Main(GaussianLatentSet),
}

impl StreamData {
    pub fn symbol_count(&self) -> usize {
        match self {
            StreamData::Side(t) => t.symbols().len(),
            StreamData::Main(s) => s.len(),
        }
    }
}

/// One frame's latents.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFrame {
    kind: FrameKind,
    streams: [Option<StreamData>; 4],
}

impl LatentFrame {
    pub fn new(kind: FrameKind) -> Self {
        Self {
            kind,
            streams: Default::default(),
        }
    }

    /// Adds a stream section. Shape checks against the models happen when the
    /// frame is put into a [`LatentContainer`].
    pub fn with(mut self, kind: StreamKind, data: StreamData) -> Self {
        self.streams[kind as usize] = Some(data);
        self
    }

    pub fn kind(&self) -> FrameKind {
        self.kind
    }

    pub fn stream(&self, kind: StreamKind) -> Option<&StreamData> {
        self.streams[kind as usize].as_ref()
    }

    pub fn side(&self, kind: StreamKind) -> Option<&SymbolTensor> {
        match self.stream(kind) {
            Some(StreamData::Side(t)) => Some(t),
            _ => None,
        }
    }

    pub fn main(&self, kind: StreamKind) -> Option<&GaussianLatentSet> {
        match self.stream(kind) {
            Some(StreamData::Main(s)) => Some(s),
            _ => None,
        }
    }

    pub fn mask(&self) -> u8 {
        StreamKind::ALL
            .iter()
            .filter(|k| self.stream(**k).is_some())
            .fold(0, |m, k| m | k.mask_bit())
    }

    pub fn present(&self) -> impl Iterator<Item = (StreamKind, &StreamData)> {
        StreamKind::ALL
            .into_iter()
            .filter_map(|k| self.stream(k).map(|d| (k, d)))
    }
}

/// Validated latent container: models plus frames that only reference
/// models present in it.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentContainer {
    models: ModelTables,
    frames: Vec<LatentFrame>,
}

impl LatentContainer {
    pub fn new(models: ModelTables, frames: Vec<LatentFrame>) -> Result<Self, LatentError> {
        for (i, f) in frames.iter().enumerate() {
            check_frame(&models, f).map_err(|e| LatentError::Shape(format!("frame {i}: {e}")))?;
        }
        Ok(Self { models, frames })
    }

    pub fn models(&self) -> &ModelTables {
        &self.models
    }

    pub fn frames(&self) -> &[LatentFrame] {
        &self.frames
    }

    pub fn into_parts(self) -> (ModelTables, Vec<LatentFrame>) {
        (self.models, self.frames)
    }
}

fn check_frame(models: &ModelTables, frame: &LatentFrame) -> Result<(), String> {
    if frame.kind == FrameKind::Intra && frame.present().any(|(k, _)| k.is_motion()) {
        return Err("intra frame carries a motion stream".into());
    }
    for (kind, data) in frame.present() {
        match (data, models.get(kind)) {
            (_, None) => return Err(format!("{kind} has no model")),
            (StreamData::Side(t), Some(StreamModel::Side(m))) => {
                if t.alphabet() != m.alphabet {
                    return Err(format!("{kind} alphabet differs from its model"));
                }
                if t.channels() != m.channels() {
                    return Err(format!(
                        "{kind} has {} channels, model has {}",
                        t.channels(),
                        m.channels()
                    ));
                }
            }
            (StreamData::Main(s), Some(StreamModel::Main(m))) => {
                if s.alphabet() != m.alphabet {
                    return Err(format!("{kind} alphabet differs from its model"));
                }
                if let Some(max) = s.max_scale_index() {
                    if max >= m.scales.len() {
                        return Err(format!(
                            "{kind} scale index {max} outside {} scales",
                            m.scales.len()
                        ));
                    }
                }
            }
            _ => return Err(format!("{kind} data does not match its model type")),
        }
    }
    Ok(())
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: [u8; 4], version: u16) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(&magic);
        w.u16(version);
        w
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn len32(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("length fits in u32"));
    }

    fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn alphabet(&mut self, a: Alphabet) {
        self.i32(a.lo());
        self.i32(a.hi());
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], magic: [u8; 4], version: u16) -> Result<Self, FormatError> {
        if bytes.len() < 4 || bytes[..4] != magic {
            return Err(FormatError::BadMagic {
                expected: magic,
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        let mut r = Self { bytes, pos: 4 };
        let found = r.u16("version")?;
        if found != version {
            return Err(FormatError::Version {
                field: "format version",
                expected: version.into(),
                found: found.into(),
            });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(FormatError::Truncated {
                offset: self.pos,
                field,
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, field: &'static str) -> Result<[u8; N], FormatError> {
        Ok(self.take(N, field)?.try_into().unwrap())
    }

    fn u8(&mut self, field: &'static str) -> Result<u8, FormatError> {
        Ok(self.array::<1>(field)?[0])
    }

    fn u16(&mut self, field: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array(field)?))
    }

    fn u32(&mut self, field: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array(field)?))
    }

    fn i32(&mut self, field: &'static str) -> Result<i32, FormatError> {
        Ok(i32::from_le_bytes(self.array(field)?))
    }

    /// `count` elements of `width` bytes, checked against the remaining input
    /// before anything is allocated.
    fn block(&mut self, count: usize, width: usize, field: &'static str) -> Result<&'a [u8], FormatError> {
        let n = count.checked_mul(width).ok_or(FormatError::Truncated {
            offset: self.pos,
            field,
        })?;
        self.take(n, field)
    }

    fn i32s(&mut self, count: usize, field: &'static str) -> Result<Vec<i32>, FormatError> {
        let raw = self.block(count, 4, field)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u16s(&mut self, count: usize, field: &'static str) -> Result<Vec<u16>, FormatError> {
        let raw = self.block(count, 2, field)?;
        Ok(raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f64s(&mut self, count: usize, field: &'static str) -> Result<Vec<f64>, FormatError> {
        let raw = self.block(count, 8, field)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn alphabet(&mut self) -> Result<Alphabet, FormatError> {
        let at = self.pos;
        let lo = self.i32("alphabet lo")?;
        let hi = self.i32("alphabet hi")?;
        Alphabet::new(lo, hi).map_err(|e| invariant(at, "alphabet", e))
    }

    fn frame_kind(&mut self) -> Result<FrameKind, FormatError> {
        let at = self.pos;
        let code = self.u8("frame kind")?;
        FrameKind::from_code(code).ok_or_else(|| invariant(at, "frame kind", format!("unknown code {code}")))
    }

    fn mask(&mut self, field: &'static str) -> Result<u8, FormatError> {
        let at = self.pos;
        let m = self.u8(field)?;
        if m & !0x0f != 0 {
            return Err(invariant(at, field, format!("reserved bits set in {m:#04x}")));
        }
        Ok(m)
    }

    /// Reads and checks the trailing CRC; nothing may follow it.
    fn finish(mut self) -> Result<(), FormatError> {
        let body = self.pos;
        let stored = self.u32("checksum")?;
        let computed = crc32fast::hash(&self.bytes[..body]);
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed });
        }
        if self.pos != self.bytes.len() {
            return Err(FormatError::TrailingBytes {
                offset: self.pos,
                count: self.bytes.len() - self.pos,
            });
        }
        Ok(())
    }
}

fn usize_from(v: u32) -> usize {
    v as usize
}

pub fn write_latent_container(container: &LatentContainer) -> Vec<u8> {
    let mut w = Writer::new(LATENT_MAGIC, LATENT_VERSION);
    let models = &container.models;
    w.u8(models.mask());
    for kind in StreamKind::ALL {
        match models.get(kind) {
            None => {}
            Some(StreamModel::Side(m)) => {
                w.alphabet(m.alphabet);
                w.len32(m.pmfs.len());
                for p in &m.pmfs {
                    for &v in p.probabilities() {
                        w.f64(v);
                    }
                }
            }
            Some(StreamModel::Main(m)) => {
                w.alphabet(m.alphabet);
                w.len32(m.scales.len());
                for &s in m.scales.scales() {
                    w.f64(s);
                }
            }
        }
    }
    w.len32(container.frames.len());
    for f in &container.frames {
        w.u8(f.kind.code());
        w.u8(f.mask());
        for (_, data) in f.present() {
            match data {
                StreamData::Side(t) => {
                    w.len32(t.height());
                    w.len32(t.width());
                    for &s in t.symbols() {
                        w.i32(s);
                    }
                }
                StreamData::Main(s) => {
                    w.len32(s.len());
                    for &v in s.symbols() {
                        w.i32(v);
                    }
                    for &c in s.scale_index() {
                        w.u16(c);
                    }
                }
            }
        }
    }
    w.finish()
}

pub fn read_latent_container(bytes: &[u8]) -> Result<LatentContainer, FormatError> {
    let mut r = Reader::new(bytes, LATENT_MAGIC, LATENT_VERSION)?;
    let model_mask = r.mask("model mask")?;
    let mut models = ModelTables::new();
    for kind in StreamKind::ALL {
        if model_mask & kind.mask_bit() == 0 {
            continue;
        }
        let alphabet = r.alphabet()?;
        let model = if kind.is_side() {
            let at = r.pos;
            let channels = usize_from(r.u32("channel count")?);
            if channels == 0 {
                return Err(invariant(at, "channel count", "zero channels"));
            }
            let mut pmfs = Vec::with_capacity(channels.min(1 << 16));
            for _ in 0..channels {
                let at = r.pos;
                let probs = r.f64s(alphabet.size(), "learned pmf")?;
                pmfs.push(PmfTable::new(alphabet.lo(), probs).map_err(|e| invariant(at, "learned pmf", e))?);
            }
            StreamModel::Side(SideModel::new(alphabet, pmfs).map_err(|e| invariant(at, "side model", e))?)
        } else {
            let at = r.pos;
            let count = usize_from(r.u32("scale count")?);
            let scales = r.f64s(count, "scales")?;
            let scales = ScaleSet::new(scales).map_err(|e| invariant(at, "scales", e))?;
            StreamModel::Main(MainModel::new(alphabet, scales).map_err(|e| invariant(at, "scales", e))?)
        };
        models = models.with(kind, model).expect("model type follows stream kind");
    }

    let frame_count = usize_from(r.u32("frame count")?);
    let mut frames = Vec::with_capacity(frame_count.min(1 << 16));
    for _ in 0..frame_count {
        let frame_at = r.pos;
        let kind = r.frame_kind()?;
        let mask_at = r.pos;
        let mask = r.mask("stream mask")?;
        let mut frame = LatentFrame::new(kind);
        for stream in StreamKind::ALL {
            if mask & stream.mask_bit() == 0 {
                continue;
            }
            if kind == FrameKind::Intra && stream.is_motion() {
                return Err(invariant(mask_at, "stream mask", "intra frame carries a motion stream"));
            }
            let Some(model) = models.get(stream) else {
                return Err(invariant(mask_at, "stream mask", format!("{stream} has no model")));
            };
            let data = match model {
                StreamModel::Side(m) => {
                    let at = r.pos;
                    let h = usize_from(r.u32("height")?);
                    let w = usize_from(r.u32("width")?);
                    let n = h
                        .checked_mul(w)
                        .and_then(|hw| hw.checked_mul(m.channels()))
                        .ok_or_else(|| invariant(at, "side shape", "size overflows"))?;
                    let syms_at = r.pos;
                    let symbols = r.i32s(n, "side symbols")?;
                    let t = SymbolTensor::new(h, w, m.channels(), m.alphabet, symbols)
                        .map_err(|e| invariant(syms_at, "side symbols", e))?;
                    StreamData::Side(t)
                }
                StreamModel::Main(m) => {
                    let n = usize_from(r.u32("main length")?);
                    let syms_at = r.pos;
                    let symbols = r.i32s(n, "main symbols")?;
                    let idx_at = r.pos;
                    let index = r.u16s(n, "scale indices")?;
                    if let Some(&bad) = index.iter().find(|&&c| usize::from(c) >= m.scales.len()) {
                        return Err(invariant(
                            idx_at,
                            "scale indices",
                            format!("index {bad} outside {} scales", m.scales.len()),
                        ));
                    }
                    let s = GaussianLatentSet::new(m.alphabet, symbols, index)
                        .map_err(|e| invariant(syms_at, "main symbols", e))?;
                    StreamData::Main(s)
                }
            };
            frame = frame.with(stream, data);
        }
        check_frame(&models, &frame).map_err(|e| invariant(frame_at, "frame", e))?;
        frames.push(frame);
    }
    r.finish()?;
    Ok(LatentContainer { models, frames })
}

/// Dimensions of a coded stream, enough to size the decoder's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamShape {
    Side { height: usize, width: usize },
    Main { len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamPayload {
    pub kind: StreamKind,
    pub shape: StreamShape,
    /// Parameter bitstream: masks and quantized parameters.
    pub param_bits: BitString,
    /// Latent bitstream: range-coded symbols.
    pub latent_bytes: Vec<u8>,
}

impl StreamPayload {
    pub fn payload_bits(&self) -> usize {
        self.param_bits.len() + 8 * self.latent_bytes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitstreamFrame {
    pub kind: FrameKind,
    /// Present streams in [`StreamKind`] order.
    pub streams: Vec<StreamPayload>,
}

impl BitstreamFrame {
    pub fn payload_bits(&self) -> usize {
        self.streams.iter().map(StreamPayload::payload_bits).sum()
    }

    pub fn stream(&self, kind: StreamKind) -> Option<&StreamPayload> {
        self.streams.iter().find(|s| s.kind == kind)
    }
}

/// Everything a decoder must agree on before reading frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub mixtures: u8,
    pub top_s_factorized: u16,
    pub top_s_hyper: u16,
    pub ranges_tag: u8,
    pub alphabets: [Option<Alphabet>; 4],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitstreamContainer {
    pub header: BitstreamHeader,
    pub frames: Vec<BitstreamFrame>,
}

impl BitstreamContainer {
    pub fn payload_bits(&self) -> usize {
        self.frames.iter().map(BitstreamFrame::payload_bits).sum()
    }
}

pub fn write_bitstream(container: &BitstreamContainer) -> Vec<u8> {
    let h = &container.header;
    let mut w = Writer::new(BITSTREAM_MAGIC, BITSTREAM_VERSION);
    w.u8(h.mixtures);
    w.u16(h.top_s_factorized);
    w.u16(h.top_s_hyper);
    w.u8(h.ranges_tag);
    let mask = StreamKind::ALL
        .iter()
        .filter(|k| h.alphabets[**k as usize].is_some())
        .fold(0, |m, k| m | k.mask_bit());
    w.u8(mask);
    for a in h.alphabets.iter().flatten() {
        w.alphabet(*a);
    }
    w.len32(container.frames.len());
    for f in &container.frames {
        w.u8(f.kind.code());
        w.u8(f.streams.iter().fold(0, |m, s| m | s.kind.mask_bit()));
        for s in &f.streams {
            match s.shape {
                StreamShape::Side { height, width } => {
                    w.len32(height);
                    w.len32(width);
                }
                StreamShape::Main { len } => w.len32(len),
            }
            w.len32(s.param_bits.len());
            w.buf.extend_from_slice(s.param_bits.as_bytes());
            w.len32(s.latent_bytes.len());
            w.buf.extend_from_slice(&s.latent_bytes);
        }
    }
    w.finish()
}

pub fn read_bitstream(bytes: &[u8]) -> Result<BitstreamContainer, FormatError> {
    let mut r = Reader::new(bytes, BITSTREAM_MAGIC, BITSTREAM_VERSION)?;
    let mixtures = r.u8("mixture count")?;
    let top_s_factorized = r.u16("top-S factorized")?;
    let top_s_hyper = r.u16("top-S hyper")?;
    let ranges_tag = r.u8("parameter range tag")?;
    if ranges_tag != PARAM_RANGES_TAG {
        return Err(FormatError::Version {
            field: "parameter range tag",
            expected: PARAM_RANGES_TAG.into(),
            found: ranges_tag.into(),
        });
    }
    let model_mask = r.mask("model mask")?;
    let mut alphabets = [None; 4];
    for kind in StreamKind::ALL {
        if model_mask & kind.mask_bit() != 0 {
            alphabets[kind as usize] = Some(r.alphabet()?);
        }
    }
    let frame_count = usize_from(r.u32("frame count")?);
    let mut frames = Vec::with_capacity(frame_count.min(1 << 16));
    for _ in 0..frame_count {
        let kind = r.frame_kind()?;
        let mask_at = r.pos;
        let mask = r.mask("stream mask")?;
        let mut streams = Vec::new();
        for stream in StreamKind::ALL {
            if mask & stream.mask_bit() == 0 {
                continue;
            }
            if kind == FrameKind::Intra && stream.is_motion() {
                return Err(invariant(mask_at, "stream mask", "intra frame carries a motion stream"));
            }
            if alphabets[stream as usize].is_none() {
                return Err(invariant(mask_at, "stream mask", format!("{stream} has no alphabet")));
            }
            let shape = if stream.is_side() {
                StreamShape::Side {
                    height: usize_from(r.u32("height")?),
                    width: usize_from(r.u32("width")?),
                }
            } else {
                StreamShape::Main {
                    len: usize_from(r.u32("main length")?),
                }
            };
            let pb_len = usize_from(r.u32("pb length")?);
            let pb_at = r.pos;
            let pb = r.take(pb_len.div_ceil(8), "pb bytes")?.to_vec();
            let param_bits =
                BitString::from_bytes(pb, pb_len).ok_or_else(|| invariant(pb_at, "pb bytes", "nonzero padding bits"))?;
            let lb_len = usize_from(r.u32("lb length")?);
            let latent_bytes = r.take(lb_len, "lb bytes")?.to_vec();
            streams.push(StreamPayload {
                kind: stream,
                shape,
                param_bits,
                latent_bytes,
            });
        }
        frames.push(BitstreamFrame { kind, streams });
    }
    r.finish()?;
    Ok(BitstreamContainer {
        header: BitstreamHeader {
            mixtures,
            top_s_factorized,
            top_s_hyper,
            ranges_tag,
            alphabets,
        },
        frames,
    })
}
