//! Little-endian weight container.
//!
//! ```text
//! "EXNW"  u32 version  u32 count
//! count × { u16 name_len, name (UTF-8), u8 rank, rank × u32 dim, numel × f32 }
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"EXNW";
pub const VERSION: u32 = 1;

/// Serializes every tensor in name order; values are written as 32-bit floats.
pub fn encode_weights<T: Scalar>(params: &ParamStore<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        let len = u16::try_from(name.len()).map_err(|_| Error::Malformed(format!("name too long: {name}")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Malformed(format!("rank too large: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Malformed(format!("dimension too large: {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Truncated(format!("{what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parses a weight container. Tensors come back with `requires_grad = false`.
pub fn decode_weights<T: Scalar>(buf: &[u8]) -> Result<ParamStore<T>> {
    let mut r = Reader { buf, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion { found: version, expected: VERSION });
    }
    let count = r.u32("entry count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&format!("dims of `{name}`"))? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| Error::Malformed(format!("`{name}` is too large")))?;
        let bytes = r.take(numel.saturating_mul(4), &format!("data of `{name}`"))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Malformed(format!("`{name}`: {e}")))?;
        if store.contains(&name) {
            return Err(Error::Malformed(format!("duplicate tensor `{name}`")));
        }
        store.insert(name, t);
    }
    if r.pos != buf.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(store)
}

pub fn save_weights<T: Scalar>(params: &ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = encode_weights(params)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_weights<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_store() -> ParamStore<f32> {
        let mut p = ParamStore::new();
        p.insert("a.weight", Tensor::from_fn([2, 3, 1, 1], |i| i as f32 * -0.25));
        p.insert("b", Tensor::new([1], vec![f32::MIN_POSITIVE]).unwrap());
        p
    }

    #[test]
    fn header_layout() {
        let bytes = encode_weights(&sample_store()).unwrap();
        assert_eq!(&bytes[..4], b"EXNW");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        // first entry: name "a.weight"
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 8);
        assert_eq!(&bytes[14..22], b"a.weight");
        assert_eq!(bytes[22], 4);
    }

    #[test]
    fn distinct_errors_for_corruption() {
        let bytes = encode_weights(&sample_store()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_weights::<f32>(&bad), Err(Error::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_weights::<f32>(&bad), Err(Error::UnsupportedVersion { found: 9, .. })));
        assert!(matches!(decode_weights::<f32>(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
        assert!(matches!(decode_weights::<f32>(&bytes[..2]), Err(Error::Truncated(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_weights::<f32>(&long), Err(Error::Malformed(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in prop::collection::vec(any::<u32>(), 1..64), rows in 1usize..4) {
            let data: Vec<f32> = values.iter().map(|&b| f32::from_bits(b)).filter(|v| !v.is_nan()).collect();
            prop_assume!(!data.is_empty() && data.len().is_multiple_of(rows));
            let mut p = ParamStore::new();
            p.insert("x", Tensor::new([rows, data.len() / rows], data.clone()).unwrap());
            let back: ParamStore<f32> = decode_weights(&encode_weights(&p).unwrap()).unwrap();
            let got: Vec<u32> = back.get("x").unwrap().data().iter().map(|v| v.to_bits()).collect();
            let want: Vec<u32> = data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, want);
            prop_assert_eq!(back.get("x").unwrap().shape(), p.get("x").unwrap().shape());
        }
    }
}
