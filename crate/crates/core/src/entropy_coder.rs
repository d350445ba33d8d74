//! Static-model range coder with 16-bit probabilities.
//!
//! The coder keeps a 64-bit `low`/`range` pair and renormalizes a byte at a
//! time whenever `range` drops below 2^56, so every symbol costs within
//! 2^-40 of its fixed-point ideal. Carries are propagated into the bytes
//! already written. `finish` rounds `low` up to a multiple of 2^32 and writes
//! exactly four bytes; the decoder treats the four bytes past the end as zero.
//!
//! Probabilities cross the encoder/decoder boundary only as integer
//! [`FrequencyTable`]s produced by [`pmf_to_freq`].

use thiserror::Error;

use crate::latent_model::PmfTable;

pub const PRECISION_BITS: u32 = 16;
/// Sum of every frequency table.
pub const TOTAL_FREQ: u32 = 1 << PRECISION_BITS;

const RENORM_THRESHOLD: u64 = 1 << 56;
const FLUSH_BYTES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoderError {
    #[error("alphabet of {0} symbols exceeds the 65536 slots of a frequency table")]
    Capacity(usize),
    #[error("symbol {symbol} outside table alphabet [{lo}, {hi}]")]
    Alphabet { symbol: i32, lo: i32, hi: i32 },
    #[error("stream truncated at byte {position}")]
    Truncated { position: usize },
    #[error("corrupt stream at byte {position}: {reason}")]
    Corrupt { position: usize, reason: &'static str },
    #[error("{symbols} symbols but {tables} tables in the schedule")]
    Schedule { symbols: usize, tables: usize },
}

/// Integer cumulative frequencies summing to 2^16, every symbol at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    alphabet_lo: i32,
    /// `len + 1` entries from 0 to [`TOTAL_FREQ`].
    cumulative: Vec<u32>,
    /// Symbols that may actually be coded; a widened one-symbol table carries
    /// one extra phantom entry.
    symbols: usize,
}

impl FrequencyTable {
    pub fn alphabet_lo(&self) -> i32 {
        self.alphabet_lo
    }

    pub fn alphabet_hi(&self) -> i32 {
        self.alphabet_lo + self.symbols as i32 - 1
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    /// Number of codable symbols.
    pub fn len(&self) -> usize {
        self.symbols
    }

    pub fn is_empty(&self) -> bool {
        self.symbols == 0
    }

    pub fn frequency(&self, symbol: i32) -> Option<u32> {
        let i = self.index(symbol)?;
        Some(self.cumulative[i + 1] - self.cumulative[i])
    }

    pub fn frequencies(&self) -> Vec<u32> {
        self.cumulative.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Fixed-point code length of `symbol` in bits.
    pub fn cost_bits(&self, symbol: i32) -> Option<f64> {
        self.frequency(symbol)
            .map(|f| f64::from(PRECISION_BITS) - f64::from(f).log2())
    }

    #[inline]
    fn index(&self, symbol: i32) -> Option<usize> {
        let i = i64::from(symbol) - i64::from(self.alphabet_lo);
        (0..self.symbols as i64).contains(&i).then_some(i as usize)
    }

    fn check(&self, symbol: i32) -> Result<usize, CoderError> {
        self.index(symbol).ok_or(CoderError::Alphabet {
            symbol,
            lo: self.alphabet_lo,
            hi: self.alphabet_hi(),
        })
    }
}

/// Largest-remainder apportionment of 2^16 slots, one guaranteed slot per
/// symbol. Ties go to the lower symbol.
pub fn pmf_to_freq(pmf: &PmfTable) -> Result<FrequencyTable, CoderError> {
    let probs = pmf.probabilities();
    let symbols = probs.len();
    if symbols > TOTAL_FREQ as usize {
        return Err(CoderError::Capacity(symbols));
    }
    if symbols == 1 {
        return Ok(FrequencyTable {
            alphabet_lo: pmf.alphabet_lo(),
            cumulative: vec![0, TOTAL_FREQ - 1, TOTAL_FREQ],
            symbols: 1,
        });
    }
    let spare = i64::from(TOTAL_FREQ) - symbols as i64;
    let sum: f64 = probs.iter().sum();
    let mut freqs = Vec::with_capacity(symbols);
    let mut remainders = Vec::with_capacity(symbols);
    let mut assigned = 0i64;
    for (i, &p) in probs.iter().enumerate() {
        let quota = p / sum * spare as f64;
        let base = quota.floor() as i64;
        freqs.push(1 + base);
        remainders.push((quota - base as f64, i));
        assigned += base;
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = spare - assigned;
    for &(_, i) in remainders.iter().cycle() {
        if left == 0 {
            break;
        }
        if left > 0 {
            freqs[i] += 1;
            left -= 1;
        } else if freqs[i] > 1 {
            freqs[i] -= 1;
            left += 1;
        }
    }
    let mut cumulative = Vec::with_capacity(symbols + 1);
    let mut acc = 0u32;
    cumulative.push(0);
    for f in freqs {
        acc += f as u32;
        cumulative.push(acc);
    }
    debug_assert_eq!(acc, TOTAL_FREQ);
    Ok(FrequencyTable {
        alphabet_lo: pmf.alphabet_lo(),
        cumulative,
        symbols,
    })
}

/// Range-coded bytes and the number of symbols they hold.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncodedStream {
    pub bytes: Vec<u8>,
    pub symbol_count: usize,
}

impl EncodedStream {
    pub fn bit_len(&self) -> usize {
        self.bytes.len() * 8
    }
}

pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
    count: usize,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u64::MAX,
            out: Vec::new(),
            count: 0,
        }
    }

    pub fn encode(&mut self, symbol: i32, table: &FrequencyTable) -> Result<(), CoderError> {
        let i = table.check(symbol)?;
        let start = u64::from(table.cumulative[i]);
        let freq = u64::from(table.cumulative[i + 1]) - start;
        let r = self.range >> PRECISION_BITS;
        let (low, carry) = self.low.overflowing_add(r * start);
        self.low = low;
        if carry {
            self.propagate_carry();
        }
        self.range = r * freq;
        while self.range < RENORM_THRESHOLD {
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
        self.count += 1;
        Ok(())
    }

    fn propagate_carry(&mut self) {
        for byte in self.out.iter_mut().rev() {
            let (v, overflow) = byte.overflowing_add(1);
            *byte = v;
            if !overflow {
                return;
            }
        }
        unreachable!("carry out of the first byte");
    }

    pub fn finish(mut self) -> EncodedStream {
        const MASK: u64 = (1 << 32) - 1;
        let (v, carry) = self.low.overflowing_add(MASK);
        if carry {
            self.propagate_carry();
        }
        let v = v & !MASK;
        self.out.extend_from_slice(&v.to_be_bytes()[..FLUSH_BYTES]);
        EncodedStream {
            bytes: self.out,
            symbol_count: self.count,
        }
    }
}

pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u64,
    range: u64,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self, CoderError> {
        let mut dec = Self {
            bytes,
            pos: 0,
            code: 0,
            range: u64::MAX,
        };
        for _ in 0..8 {
            dec.code = (dec.code << 8) | u64::from(dec.next_byte()?);
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u8, CoderError> {
        let b = match self.bytes.get(self.pos) {
            Some(&b) => b,
            None if self.pos < self.bytes.len() + FLUSH_BYTES => 0,
            None => return Err(CoderError::Truncated { position: self.pos }),
        };
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, table: &FrequencyTable) -> Result<i32, CoderError> {
        let r = self.range >> PRECISION_BITS;
        let target = self.code / r;
        if target >= u64::from(TOTAL_FREQ) {
            return Err(CoderError::Corrupt {
                position: self.pos,
                reason: "code value outside the coding interval",
            });
        }
        let target = target as u32;
        let i = table.cumulative.partition_point(|&c| c <= target) - 1;
        if i >= table.symbols {
            return Err(CoderError::Corrupt {
                position: self.pos,
                reason: "decoded a phantom symbol",
            });
        }
        let start = u64::from(table.cumulative[i]);
        let freq = u64::from(table.cumulative[i + 1]) - start;
        self.code -= r * start;
        self.range = r * freq;
        while self.range < RENORM_THRESHOLD {
            self.code = (self.code << 8) | u64::from(self.next_byte()?);
            self.range <<= 8;
        }
        Ok(table.alphabet_lo + i as i32)
    }

    /// Checks that exactly the encoder's bytes were consumed.
    pub fn finish(self) -> Result<(), CoderError> {
        if self.pos != self.bytes.len() + FLUSH_BYTES {
            return Err(CoderError::Corrupt {
                position: self.pos.min(self.bytes.len()),
                reason: "stream length does not match the decoded symbols",
            });
        }
        Ok(())
    }
}

/// Encodes `symbols[i]` with `tables[i]`.
pub fn range_encode(
    symbols: &[i32],
    tables: &[&FrequencyTable],
) -> Result<EncodedStream, CoderError> {
    if symbols.len() != tables.len() {
        return Err(CoderError::Schedule {
            symbols: symbols.len(),
            tables: tables.len(),
        });
    }
    let mut enc = RangeEncoder::new();
    for (&s, t) in symbols.iter().zip(tables) {
        enc.encode(s, t)?;
    }
    Ok(enc.finish())
}

/// Decodes one symbol per table in `tables`.
pub fn range_decode(
    stream: &EncodedStream,
    tables: &[&FrequencyTable],
) -> Result<Vec<i32>, CoderError> {
    if stream.symbol_count != tables.len() {
        return Err(CoderError::Schedule {
            symbols: stream.symbol_count,
            tables: tables.len(),
        });
    }
    let mut dec = RangeDecoder::new(&stream.bytes)?;
    let out = tables
        .iter()
        .map(|t| dec.decode(t))
        .collect::<Result<Vec<_>, _>>()?;
    dec.finish()?;
    Ok(out)
}

/// `-Σ log2(freq_i / 2^16)` over the schedule.
pub fn ideal_bits(symbols: &[i32], tables: &[&FrequencyTable]) -> Result<f64, CoderError> {
    symbols
        .iter()
        .zip(tables)
        .map(|(&s, t)| {
            t.cost_bits(s).ok_or(CoderError::Alphabet {
                symbol: s,
                lo: t.alphabet_lo,
                hi: t.alphabet_hi(),
            })
        })
        .sum()
}
