//! Bank files and sketch dumps, little-endian throughout.
//!
//! ```text
//! bank:   "LSHB" | u32 version | u32 depth | u32 width | u64 seed | u32 input_dim
//!         | f64 coefficients in (row, bit, coord) order
//! sketch: "SKCH" | u8 kind | u32 depth | u32 width | payload
//!         kind 0 binary:    ceil(depth*b/8) bytes, bit row*b+j at byte /8, LSB first
//!         kind 1 classical: depth x u32 bucket
//!         kind 2 counts:    u64 n_items | depth*width x f64
//! ```
//!
//! Sketch dumps do not carry the bank seed or input dimension; readers
//! supply the [`BankId`] they expect and the dims are checked against it.

use std::io::{Read, Write};

use super::{BankId, BinarySketch, ClassicalSketch, CountSketch, HyperplaneBank, SketchSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const BANK_MAGIC: &[u8; 4] = b"LSHB";
pub const BANK_VERSION: u32 = 1;
pub const SKETCH_MAGIC: &[u8; 4] = b"SKCH";

const KIND_BINARY: u8 = 0;
const KIND_CLASSICAL: u8 = 1;
const KIND_COUNTS: u8 = 2;

fn u32_field(v: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

pub fn write_bank<T: Scalar, W: Write>(bank: &HyperplaneBank<T>, mut sink: W) -> Result<()> {
    let spec = bank.spec();
    let mut buf = Vec::with_capacity(28 + 8 * bank.normals().len());
    buf.extend_from_slice(BANK_MAGIC);
    buf.extend_from_slice(&BANK_VERSION.to_le_bytes());
    buf.extend_from_slice(&u32_field(spec.depth, "depth")?);
    buf.extend_from_slice(&u32_field(spec.width, "width")?);
    buf.extend_from_slice(&spec.seed.to_le_bytes());
    buf.extend_from_slice(&u32_field(bank.input_dim(), "input_dim")?);
    for v in bank.normals() {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    sink.write_all(&buf)?;
    Ok(())
}

pub fn read_bank<T: Scalar, R: Read>(mut source: R) -> Result<HyperplaneBank<T>> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut r = Reader::new(&buf, BANK_MAGIC)?;
    let version = r.u32()?;
    if version != BANK_VERSION {
        return Err(Error::Format(format!("unsupported bank version {version}")));
    }
    let depth = r.u32()? as usize;
    let width = r.u32()? as usize;
    let seed = r.u64()?;
    let input_dim = r.u32()? as usize;
    let spec = SketchSpec::new(depth, width, seed)?;
    let n = depth * spec.bits_per_row() * input_dim;
    let normals = (0..n).map(|_| r.f64().map(T::of)).collect::<Result<Vec<T>>>()?;
    r.finish()?;
    HyperplaneBank::from_parts(spec, input_dim, normals)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if !buf.starts_with(magic) {
            return Err(Error::Format(format!(
                "missing magic {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(Reader { buf, pos: 4 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }

    fn header(&mut self, kind: u8, bank: &BankId) -> Result<()> {
        let got = self.u8()?;
        if got != kind {
            return Err(Error::Format(format!("sketch kind {got}, expected {kind}")));
        }
        let depth = self.u32()? as usize;
        let width = self.u32()? as usize;
        if depth != bank.spec.depth || width != bank.spec.width {
            return Err(Error::MixedBank);
        }
        Ok(())
    }
}

fn header(kind: u8, spec: &SketchSpec, payload: usize) -> Vec<u8> {
    let mut buf = Vec::with_capacity(13 + payload);
    buf.extend_from_slice(SKETCH_MAGIC);
    buf.push(kind);
    buf.extend_from_slice(&(spec.depth as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.width as u32).to_le_bytes());
    buf
}

impl BinarySketch {
    /// 13-byte header plus `ceil(depth * b / 8)` payload bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n_bytes = self.len().div_ceil(8);
        let mut buf = header(KIND_BINARY, &self.bank().spec, n_bytes);
        let bytes = self.words().iter().flat_map(|w| w.to_le_bytes());
        buf.extend(bytes.take(n_bytes));
        buf
    }

    pub fn from_bytes(bytes: &[u8], bank: BankId) -> Result<Self> {
        let mut r = Reader::new(bytes, SKETCH_MAGIC)?;
        r.header(KIND_BINARY, &bank)?;
        let total = bank.spec.total_bits();
        let payload = r.take(total.div_ceil(8))?;
        r.finish()?;
        let mut words = vec![0u64; total.div_ceil(64)];
        for (i, &byte) in payload.iter().enumerate() {
            words[i / 8] |= (byte as u64) << (8 * (i % 8));
        }
        let tail = total % 64;
        if tail != 0 && words.last().is_some_and(|w| w >> tail != 0) {
            return Err(Error::Format("padding bits set in binary sketch".into()));
        }
        Ok(BinarySketch::from_words(bank, words))
    }
}

impl ClassicalSketch {
    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.bank().spec;
        let mut buf = header(KIND_CLASSICAL, &spec, 4 * spec.depth);
        for b in self.buckets() {
            buf.extend_from_slice(&b.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], bank: BankId) -> Result<Self> {
        let mut r = Reader::new(bytes, SKETCH_MAGIC)?;
        r.header(KIND_CLASSICAL, &bank)?;
        let buckets = (0..bank.spec.depth).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        ClassicalSketch::from_buckets(bank, buckets)
    }
}

impl<T: Scalar> CountSketch<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.bank().spec;
        let mut buf = header(KIND_COUNTS, &spec, 8 + 8 * spec.depth * spec.width);
        buf.extend_from_slice(&(self.n_items() as u64).to_le_bytes());
        for v in self.counts().as_slice() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], bank: BankId) -> Result<Self> {
        let mut r = Reader::new(bytes, SKETCH_MAGIC)?;
        r.header(KIND_COUNTS, &bank)?;
        let n_items = r.u64()? as usize;
        let (d, w) = (bank.spec.depth, bank.spec.width);
        let data = (0..d * w).map(|_| r.f64().map(T::of)).collect::<Result<Vec<T>>>()?;
        r.finish()?;
        Ok(CountSketch::from_parts(bank, Matrix::from_vec(d, w, data)?, n_items))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{aggregate, build_bank};
    use super::*;
    use proptest::prelude::*;

    fn bank() -> HyperplaneBank<f64> {
        build_bank(SketchSpec::new(128, 512, 21).unwrap(), 6).unwrap()
    }

    #[test]
    fn binary_dump_size_at_full_dims() {
        let s = bank().sketch_binary(&[1.0, -2.0, 0.5, 3.0, 0.0, 1.0]).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), 13 + 144);
        assert!(bytes.len() <= 128 * 9 / 8 + 16);
    }

    #[test]
    fn bank_file_round_trip() {
        let b = bank();
        let mut buf = Vec::new();
        write_bank(&b, &mut buf).unwrap();
        assert_eq!(&buf[..4], BANK_MAGIC);
        let back: HyperplaneBank<f64> = read_bank(&buf[..]).unwrap();
        assert_eq!(back, b);
        buf.pop();
        assert!(read_bank::<f64, _>(&buf[..]).is_err());
    }

    #[test]
    fn dump_dims_must_match_bank() {
        let b = bank();
        let s = b.sketch_classical(&[1.0; 6]).unwrap();
        let other = BankId {
            spec: SketchSpec::new(64, 512, 21).unwrap(),
            input_dim: 6,
        };
        assert!(matches!(
            ClassicalSketch::from_bytes(&s.to_bytes(), other),
            Err(Error::MixedBank)
        ));
    }

    proptest! {
        #[test]
        fn sketch_dumps_round_trip(xs in proptest::collection::vec(-5.0f64..5.0, 6 * 5)) {
            let b = bank();
            let mut classical = Vec::new();
            for x in xs.chunks(6) {
                if x.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let s = b.sketch_binary(x).unwrap();
                prop_assert_eq!(&BinarySketch::from_bytes(&s.to_bytes(), b.id()).unwrap(), &s);
                let c = s.to_classical();
                prop_assert_eq!(&ClassicalSketch::from_bytes(&c.to_bytes(), b.id()).unwrap(), &c);
                classical.push(c);
            }
            if !classical.is_empty() {
                let cs: CountSketch<f64> = aggregate(&classical).unwrap();
                prop_assert_eq!(CountSketch::from_bytes(&cs.to_bytes(), b.id()).unwrap(), cs);
            }
        }
    }
}
