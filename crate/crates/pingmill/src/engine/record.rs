//! Row schema contract and the binary codec used for shuffle spill files.
//!
//! Key bytes are canonical and order-preserving: sorting aggregates by the
//! encoded key equals sorting by the natural value order, which is what
//! makes parallel runs byte-identical to sequential ones.

use crate::error::{Error, Result};

/// Semantic type of a schema field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Str,
    I64,
    F64,
}

/// A named field with its semantic type.
pub type FieldDef = (&'static str, FieldKind);

/// A row type that can flow through shuffles and keyed reductions.
pub trait Record: Clone + Send + Sync + 'static {
    /// Field name to semantic type map for this record type.
    fn schema() -> &'static [FieldDef];

    /// Append the canonical byte encoding of one field; false if the field
    /// does not exist on this record type.
    fn key_bytes(&self, field: &str, out: &mut Vec<u8>) -> bool;

    /// Spill encoding. Must round-trip through `decode`.
    fn encode(&self, out: &mut Vec<u8>);

    fn decode(input: &mut ByteReader<'_>) -> Result<Self>;

    fn has_field(field: &str) -> bool {
        Self::schema().iter().any(|(name, _)| *name == field)
    }
}

/// Require a field to exist on `T`, as a schema error otherwise.
pub fn require_field<T: Record>(field: &str) -> Result<()> {
    if T::has_field(field) {
        Ok(())
    } else {
        let known: Vec<&str> = T::schema().iter().map(|(n, _)| *n).collect();
        Err(Error::Schema(format!(
            "unknown key field '{field}' (schema: {})",
            known.join(", ")
        )))
    }
}

// --- canonical key encodings -------------------------------------------

pub fn key_str(value: &str, out: &mut Vec<u8>) {
    out.extend_from_slice(value.as_bytes());
}

/// Order-preserving big-endian encoding (sign bit flipped).
pub fn key_i64(value: i64, out: &mut Vec<u8>) {
    out.extend_from_slice(&((value as u64) ^ (1 << 63)).to_be_bytes());
}

/// Order-preserving encoding for finite floats.
pub fn key_f64(value: f64, out: &mut Vec<u8>) {
    let bits = value.to_bits();
    let flipped = if bits >> 63 == 1 { !bits } else { bits | (1 << 63) };
    out.extend_from_slice(&flipped.to_be_bytes());
}

/// Composite key separator. Never appears in UTF-8 text.
pub const KEY_SEP: u8 = 0xFF;

// --- spill codec ---------------------------------------------------------

pub fn put_u32(v: u32, out: &mut Vec<u8>) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_i64(v: i64, out: &mut Vec<u8>) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f64(v: f64, out: &mut Vec<u8>) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_str(v: &str, out: &mut Vec<u8>) {
    put_u32(v.len() as u32, out);
    out.extend_from_slice(v.as_bytes());
}

pub fn put_opt_f64(v: Option<f64>, out: &mut Vec<u8>) {
    match v {
        Some(x) => {
            out.push(1);
            put_f64(x, out);
        }
        None => out.push(0),
    }
}

/// Cursor over an encoded byte slice.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Ingest(format!(
                "truncated spill record at byte {} (wanted {n})",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Ingest("invalid utf-8 in spill record".into()))
    }

    pub fn opt_f64(&mut self) -> Result<Option<f64>> {
        match self.take(1)?[0] {
            0 => Ok(None),
            _ => Ok(Some(self.f64()?)),
        }
    }
}

/// FNV-1a 64-bit. Stable across runs and platforms, unlike the std hasher.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i64_key_order_matches_numeric_order() {
        let vals = [-5i64, -1, 0, 1, 42, i64::MIN, i64::MAX];
        let mut encoded: Vec<(Vec<u8>, i64)> = vals
            .iter()
            .map(|&v| {
                let mut b = Vec::new();
                key_i64(v, &mut b);
                (b, v)
            })
            .collect();
        encoded.sort();
        let sorted: Vec<i64> = encoded.iter().map(|(_, v)| *v).collect();
        let mut expect = vals.to_vec();
        expect.sort();
        assert_eq!(sorted, expect);
    }

    #[test]
    fn f64_key_order_matches_numeric_order() {
        let vals = [-3.5f64, -0.0, 0.0, 1.25, 1e9, -1e9];
        let mut encoded: Vec<(Vec<u8>, f64)> = vals
            .iter()
            .map(|&v| {
                let mut b = Vec::new();
                key_f64(v, &mut b);
                (b, v)
            })
            .collect();
        encoded.sort_by(|a, b| a.0.cmp(&b.0));
        for pair in encoded.windows(2) {
            assert!(pair[0].1 <= pair[1].1);
        }
    }

    #[test]
    fn codec_round_trips() {
        let mut buf = Vec::new();
        put_str("user-1", &mut buf);
        put_i64(-42, &mut buf);
        put_f64(3.25, &mut buf);
        put_opt_f64(None, &mut buf);
        put_opt_f64(Some(9.5), &mut buf);
        let mut r = ByteReader::new(&buf);
        assert_eq!(r.str().unwrap(), "user-1");
        assert_eq!(r.i64().unwrap(), -42);
        assert_eq!(r.f64().unwrap(), 3.25);
        assert_eq!(r.opt_f64().unwrap(), None);
        assert_eq!(r.opt_f64().unwrap(), Some(9.5));
        assert!(r.is_empty());
    }

    #[test]
    fn truncated_read_is_an_error() {
        let mut r = ByteReader::new(&[1, 2]);
        assert!(r.u32().is_err());
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
