//! Bit-level encodings for public keys and signature vectors.
//!
//! Both streams are little-endian at the bit level: the first value occupies
//! the least significant bits of the first byte.

use super::params::MODULUS;

/// Largest absolute coefficient value accepted in a compressed vector.
pub const MAX_COEFF: u32 = 840;

struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    bits: u32,
}

impl BitWriter {
    fn with_capacity(cap: usize) -> Self {
        BitWriter { out: Vec::with_capacity(cap), acc: 0, bits: 0 }
    }

    fn push(&mut self, value: u32, width: u32) {
        self.acc |= (value as u64) << self.bits;
        self.bits += width;
        while self.bits >= 8 {
            self.out.push(self.acc as u8);
            self.acc >>= 8;
            self.bits -= 8;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.bits > 0 {
            self.out.push(self.acc as u8);
        }
        self.out
    }
}

struct BitReader<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(src: &'a [u8]) -> Self {
        BitReader { src, pos: 0 }
    }

    fn bit(&mut self) -> Option<u32> {
        let byte = *self.src.get(self.pos / 8)?;
        let b = (byte >> (self.pos % 8)) & 1;
        self.pos += 1;
        Some(b as u32)
    }

    fn bits(&mut self, width: u32) -> Option<u32> {
        let mut v = 0;
        for i in 0..width {
            v |= self.bit()? << i;
        }
        Some(v)
    }

    /// Number of whole bytes touched so far and whether the remaining bits
    /// (up to the end of the input) are all zero.
    fn rest_is_zero(&self) -> bool {
        let byte_idx = self.pos / 8;
        let bit_off = self.pos % 8;
        if bit_off != 0 && self.src[byte_idx] >> bit_off != 0 {
            return false;
        }
        let tail_start = if bit_off == 0 { byte_idx } else { byte_idx + 1 };
        self.src[tail_start.min(self.src.len())..].iter().all(|&b| b == 0)
    }
}

/// Packs `n` residues modulo q on 14 bits each.
pub fn encode_modq(coeffs: &[u16]) -> Vec<u8> {
    let mut w = BitWriter::with_capacity(coeffs.len() * 14 / 8);
    for &c in coeffs {
        debug_assert!((c as u32) < MODULUS);
        w.push(c as u32, 14);
    }
    w.finish()
}

/// Inverse of [`encode_modq`]; rejects out-of-range residues and wrong lengths.
pub fn decode_modq(src: &[u8], n: usize) -> Option<Vec<u16>> {
    if src.len() != (14 * n).div_ceil(8) {
        return None;
    }
    let mut r = BitReader::new(src);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let v = r.bits(14)?;
        if v >= MODULUS {
            return None;
        }
        out.push(v as u16);
    }
    r.rest_is_zero().then_some(out)
}

/// Golomb-Rice style compression: sign bit, seven low bits of the magnitude,
/// then the high part in unary (zeros terminated by a one). The output is
/// zero-padded to exactly `out_len` bytes; `None` if it does not fit or a
/// coefficient exceeds [`MAX_COEFF`].
pub fn compress(values: &[i16], out_len: usize) -> Option<Vec<u8>> {
    let mut w = BitWriter::with_capacity(out_len);
    for &v in values {
        let mag = (v as i32).unsigned_abs();
        if mag > MAX_COEFF {
            return None;
        }
        let sign = u32::from(v < 0);
        w.push(sign | ((mag & 0x7f) << 1), 8);
        let high = mag >> 7;
        w.push(1 << high, high + 1);
    }
    let mut out = w.finish();
    if out.len() > out_len {
        return None;
    }
    out.resize(out_len, 0);
    Some(out)
}

/// Inverse of [`compress`]. Rejects negative zero, oversized magnitudes,
/// truncated streams and any nonzero padding bit.
pub fn decompress(src: &[u8], n: usize) -> Option<Vec<i16>> {
    let mut r = BitReader::new(src);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let sign = r.bit()?;
        let low = r.bits(7)?;
        let mut high = 0;
        while r.bit()? == 0 {
            high += 1;
            if (high << 7) > MAX_COEFF {
                return None;
            }
        }
        let mag = (high << 7) | low;
        if mag > MAX_COEFF || (sign == 1 && mag == 0) {
            return None;
        }
        let v = if sign == 1 { -(mag as i32) } else { mag as i32 };
        out.push(v as i16);
    }
    r.rest_is_zero().then_some(out)
}
