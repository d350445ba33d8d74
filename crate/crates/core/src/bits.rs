//! MSB-first bit strings for the parameter bitstream.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bit source exhausted at bit {position} (length {len})")]
pub struct BitsExhausted {
    pub position: usize,
    pub len: usize,
}

/// A sequence of bits packed MSB-first into bytes; trailing pad bits are zero.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reinterprets `bytes` as a string of `len` bits. Pad bits must be zero.
    pub fn from_bytes(bytes: Vec<u8>, len: usize) -> Option<Self> {
        if bytes.len() != len.div_ceil(8) {
            return None;
        }
        let pad = bytes.len() * 8 - len;
        if pad > 0 && bytes.last().is_some_and(|b| b & ((1u8 << pad) - 1) != 0) {
            return None;
        }
        Some(Self { bytes, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u32, width: u32) {
        for i in (0..width).rev() {
            self.push((value >> i) & 1 == 1);
        }
    }

    pub fn extend(&mut self, other: &BitString) {
        for bit in other.iter() {
            self.push(bit);
        }
    }

    pub fn get(&self, index: usize) -> Option<bool> {
        (index < self.len).then(|| self.bytes[index / 8] & (0x80 >> (index % 8)) != 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.bytes[i / 8] & (0x80 >> (i % 8)) != 0)
    }

    pub fn reader(&self) -> BitReader<'_> {
        BitReader { bits: self, pos: 0 }
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString(\"{self}\")")
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for bit in self.iter() {
            f.write_str(if bit { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl std::str::FromStr for BitString {
    type Err = char;

    fn from_str(s: &str) -> Result<Self, char> {
        let mut bits = BitString::new();
        for ch in s.chars() {
            match ch {
                '0' => bits.push(false),
                '1' => bits.push(true),
                '_' | ' ' => {}
                other => return Err(other),
            }
        }
        Ok(bits)
    }
}

pub struct BitReader<'a> {
    bits: &'a BitString,
    pos: usize,
}

impl BitReader<'_> {
    pub fn read_bit(&mut self) -> Result<bool, BitsExhausted> {
        let bit = self.bits.get(self.pos).ok_or(BitsExhausted {
            position: self.pos,
            len: self.bits.len,
        })?;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, width: u32) -> Result<u32, BitsExhausted> {
        let mut v = 0;
        for _ in 0..width {
            v = (v << 1) | u32::from(self.read_bit()?);
        }
        Ok(v)
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bits.len - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_first_packing() {
        let mut b = BitString::new();
        b.push(true);
        b.push_bits(0b0110, 4);
        assert_eq!(b.as_bytes(), &[0b1011_0000]);
        assert_eq!(b.to_string(), "10110");
        b.push_bits(0x3FF, 10);
        assert_eq!(b.as_bytes(), &[0b1011_0111, 0b1111_1110]);
        assert_eq!(b.len(), 15);
    }

    #[test]
    fn reader_reports_exhaustion() {
        let b: BitString = "101".parse().unwrap();
        let mut r = b.reader();
        assert_eq!(r.read_bits(3).unwrap(), 0b101);
        assert_eq!(r.read_bit(), Err(BitsExhausted { position: 3, len: 3 }));
    }

    #[test]
    fn from_bytes_rejects_dirty_padding() {
        assert!(BitString::from_bytes(vec![0b1010_0000], 3).is_some());
        assert!(BitString::from_bytes(vec![0b1010_0001], 3).is_none());
        assert!(BitString::from_bytes(vec![0, 0], 3).is_none());
    }
}
