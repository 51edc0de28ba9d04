//! Random-hyperplane sketches.
//!
//! Each of the `depth` rows of a sketch owns `b = log2(width)` hyperplanes
//! through the origin. A vector's sign pattern against a row's hyperplanes
//! is its binarized row (`b` bits); read as a `b`-bit integer, most
//! significant bit first, it is the row's bucket in the classical one-hot
//! `depth x width` sketch. Both views are therefore the same bits.
//!
//! User-level representations sum classical sketches into a
//! [`CountSketch`], then normalize each row to unit L2 norm and flatten.

mod io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::counter_normal;
use crate::scalar::{dot, l2_norm, Scalar};

pub use io::{read_bank, write_bank, BANK_MAGIC, BANK_VERSION, SKETCH_MAGIC};

const MAX_BITS_PER_ROW: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SketchSpec {
    pub depth: usize,
    /// Buckets per row; must be a power of two, at least 2.
    pub width: usize,
    pub seed: u64,
}

impl SketchSpec {
    pub fn new(depth: usize, width: usize, seed: u64) -> Result<Self> {
        let spec = SketchSpec { depth, width, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Spec("sketch depth must be >= 1".into()));
        }
        if self.width < 2 || !self.width.is_power_of_two() {
            return Err(Error::Spec(format!(
                "sketch width must be a power of two >= 2, got {}",
                self.width
            )));
        }
        if self.bits_per_row() > MAX_BITS_PER_ROW {
            return Err(Error::Spec(format!(
                "sketch width 2^{} exceeds 2^{MAX_BITS_PER_ROW}",
                self.bits_per_row()
            )));
        }
        Ok(())
    }

    /// `b = log2(width)`.
    pub fn bits_per_row(&self) -> usize {
        self.width.trailing_zeros() as usize
    }

    pub fn total_bits(&self) -> usize {
        self.depth * self.bits_per_row()
    }
}

/// Identifies the bank a sketch was produced with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BankId {
    pub spec: SketchSpec,
    pub input_dim: usize,
}

/// `depth x b x input_dim` standard-normal hyperplane normals, no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperplaneBank<T> {
    spec: SketchSpec,
    input_dim: usize,
    /// Flattened in (row, bit, coordinate) order.
    normals: Vec<T>,
}

/// Builds the bank. Coefficient `(row, bit, coord)` is
/// [`counter_normal`]`(seed, row, bit, coord)`, so the layout is reproducible
/// independent of generation order.
pub fn build_bank<T: Scalar>(spec: SketchSpec, input_dim: usize) -> Result<HyperplaneBank<T>> {
    spec.validate()?;
    if input_dim == 0 {
        return Err(Error::Spec("bank input_dim must be >= 1".into()));
    }
    let b = spec.bits_per_row();
    let plane_len = input_dim;
    let mut normals = vec![T::zero(); spec.depth * b * input_dim];
    normals
        .par_chunks_mut(plane_len)
        .enumerate()
        .for_each(|(plane, out)| {
            let (row, bit) = ((plane / b) as u64, (plane % b) as u64);
            for (coord, v) in out.iter_mut().enumerate() {
                *v = T::of(counter_normal(spec.seed, row, bit, coord as u64));
            }
        });
    Ok(HyperplaneBank {
        spec,
        input_dim,
        normals,
    })
}

impl<T: Scalar> HyperplaneBank<T> {
    pub(crate) fn from_parts(spec: SketchSpec, input_dim: usize, normals: Vec<T>) -> Result<Self> {
        spec.validate()?;
        let want = spec.depth * spec.bits_per_row() * input_dim;
        if normals.len() != want {
            return Err(Error::dim("bank coefficients", normals.len(), want));
        }
        Ok(HyperplaneBank {
            spec,
            input_dim,
            normals,
        })
    }

    pub fn spec(&self) -> SketchSpec {
        self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn id(&self) -> BankId {
        BankId {
            spec: self.spec,
            input_dim: self.input_dim,
        }
    }

    pub fn normals(&self) -> &[T] {
        &self.normals
    }

    /// Normal of hyperplane `bit` in row `row`.
    pub fn normal(&self, row: usize, bit: usize) -> &[T] {
        let plane = row * self.spec.bits_per_row() + bit;
        &self.normals[plane * self.input_dim..(plane + 1) * self.input_dim]
    }

    fn check_input(&self, vector: &[T]) -> Result<()> {
        if vector.len() != self.input_dim {
            return Err(Error::dim("sketch input", vector.len(), self.input_dim));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sketch input".into()));
        }
        if vector.iter().all(|v| v.is_zero()) {
            return Err(Error::MissingInput);
        }
        Ok(())
    }

    /// Bit `(i, j)` is set iff `dot(normal(i, j), vector) >= 0`.
    pub fn sketch_binary(&self, vector: &[T]) -> Result<BinarySketch> {
        self.check_input(vector)?;
        let total = self.spec.total_bits();
        let mut words = vec![0u64; total.div_ceil(64)];
        for (plane, normal) in self.normals.chunks_exact(self.input_dim).enumerate() {
            if dot(normal, vector) >= T::zero() {
                words[plane / 64] |= 1 << (plane % 64);
            }
        }
        Ok(BinarySketch {
            bank: self.id(),
            words,
        })
    }

    pub fn sketch_classical(&self, vector: &[T]) -> Result<ClassicalSketch> {
        Ok(self.sketch_binary(vector)?.to_classical())
    }

    /// Sketches a batch in parallel; output order follows input order.
    pub fn sketch_binary_batch<V: AsRef<[T]> + Sync>(&self, vectors: &[V]) -> Vec<Result<BinarySketch>> {
        vectors
            .par_iter()
            .map(|v| self.sketch_binary(v.as_ref()))
            .collect()
    }
}

/// Sign bits, `depth x b`, bit-packed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinarySketch {
    bank: BankId,
    /// Bit `row * b + j` at word `/ 64`, position `% 64`.
    words: Vec<u64>,
}

impl BinarySketch {
    pub(crate) fn from_words(bank: BankId, words: Vec<u64>) -> Self {
        BinarySketch { bank, words }
    }

    pub fn bank(&self) -> BankId {
        self.bank
    }

    pub fn depth(&self) -> usize {
        self.bank.spec.depth
    }

    pub fn bits_per_row(&self) -> usize {
        self.bank.spec.bits_per_row()
    }

    pub fn len(&self) -> usize {
        self.bank.spec.total_bits()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bit(&self, row: usize, j: usize) -> bool {
        let idx = row * self.bits_per_row() + j;
        self.words[idx / 64] >> (idx % 64) & 1 == 1
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    /// Flips every bit.
    pub fn complement(&self) -> BinarySketch {
        let total = self.len();
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        let tail = total % 64;
        if tail != 0 {
            *words.last_mut().expect("nonempty") &= (1u64 << tail) - 1;
        }
        BinarySketch {
            bank: self.bank,
            words,
        }
    }

    pub fn hamming(&self, other: &BinarySketch) -> Result<usize> {
        if self.bank != other.bank {
            return Err(Error::MixedBank);
        }
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    pub fn to_classical(&self) -> ClassicalSketch {
        let b = self.bits_per_row();
        let buckets = (0..self.depth())
            .map(|row| (0..b).fold(0u32, |acc, j| (acc << 1) | self.bit(row, j) as u32))
            .collect();
        ClassicalSketch {
            bank: self.bank,
            buckets,
        }
    }

    /// Row-major `depth * b` reals in {0, 1}.
    pub fn flatten<T: Scalar>(&self) -> Vec<T> {
        (0..self.len())
            .map(|i| {
                if self.words[i / 64] >> (i % 64) & 1 == 1 {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect()
    }
}

/// One bucket per row, each in `[0, width)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassicalSketch {
    bank: BankId,
    buckets: Vec<u32>,
}

impl ClassicalSketch {
    pub(crate) fn from_buckets(bank: BankId, buckets: Vec<u32>) -> Result<Self> {
        if buckets.len() != bank.spec.depth {
            return Err(Error::dim("classical sketch rows", buckets.len(), bank.spec.depth));
        }
        if let Some(b) = buckets.iter().find(|&&b| b as usize >= bank.spec.width) {
            return Err(Error::Format(format!("bucket {b} >= width {}", bank.spec.width)));
        }
        Ok(ClassicalSketch { bank, buckets })
    }

    pub fn bank(&self) -> BankId {
        self.bank
    }

    pub fn buckets(&self) -> &[u32] {
        &self.buckets
    }

    /// `depth x width` with exactly one 1 per row.
    pub fn materialize_onehot<T: Scalar>(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.bank.spec.depth, self.bank.spec.width);
        for (row, &b) in self.buckets.iter().enumerate() {
            m.set(row, b as usize, T::one());
        }
        m
    }

    pub fn flatten<T: Scalar>(&self) -> Vec<T> {
        self.materialize_onehot::<T>().into_vec()
    }
}

/// Summed classical sketches.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSketch<T> {
    bank: BankId,
    counts: Matrix<T>,
    n_items: usize,
}

impl<T: Scalar> CountSketch<T> {
    pub fn empty(bank: BankId) -> Self {
        CountSketch {
            bank,
            counts: Matrix::zeros(bank.spec.depth, bank.spec.width),
            n_items: 0,
        }
    }

    pub(crate) fn from_parts(bank: BankId, counts: Matrix<T>, n_items: usize) -> Self {
        CountSketch {
            bank,
            counts,
            n_items,
        }
    }

    pub fn bank(&self) -> BankId {
        self.bank
    }

    pub fn counts(&self) -> &Matrix<T> {
        &self.counts
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn add(&mut self, sketch: &ClassicalSketch) -> Result<()> {
        if sketch.bank != self.bank {
            return Err(Error::MixedBank);
        }
        for (row, &b) in sketch.buckets.iter().enumerate() {
            let c = self.counts.get(row, b as usize);
            self.counts.set(row, b as usize, c + T::one());
        }
        self.n_items += 1;
        Ok(())
    }

    /// Elementwise sum of two count sketches over the same bank.
    pub fn merge(&self, other: &CountSketch<T>) -> Result<CountSketch<T>> {
        if self.bank != other.bank {
            return Err(Error::MixedBank);
        }
        let mut counts = self.counts.clone();
        for (a, b) in counts.as_mut_slice().iter_mut().zip(other.counts.as_slice()) {
            *a += *b;
        }
        Ok(CountSketch {
            bank: self.bank,
            counts,
            n_items: self.n_items + other.n_items,
        })
    }
}

/// Sums classical sketches: `counts[i][c]` is the number of sketches whose
/// row-`i` bucket is `c`.
pub fn aggregate<T: Scalar>(sketches: &[ClassicalSketch]) -> Result<CountSketch<T>> {
    let first = sketches
        .first()
        .ok_or_else(|| Error::Spec("cannot aggregate an empty sketch list".into()))?;
    let mut acc = CountSketch::empty(first.bank);
    for s in sketches {
        acc.add(s)?;
    }
    Ok(acc)
}

/// Divides each row by its L2 norm; all-zero rows stay zero.
pub fn normalize_rows<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = l2_norm(row);
        if norm > T::zero() {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Width-wise L2 normalization of an aggregated sketch.
pub fn normalize_widthwise<T: Scalar>(cs: &CountSketch<T>) -> Matrix<T> {
    normalize_rows(&cs.counts)
}

/// Row-major flattening.
pub fn flatten<T: Scalar>(m: &Matrix<T>) -> Vec<T> {
    m.as_slice().to_vec()
}

/// `pi * mismatches / (depth * b)`.
pub fn estimate_angle(a: &BinarySketch, b: &BinarySketch) -> Result<f64> {
    let mismatches = a.hamming(b)?;
    let theta = std::f64::consts::PI * mismatches as f64 / a.len() as f64;
    Ok(theta.clamp(0.0, std::f64::consts::PI))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bank(depth: usize, width: usize, dim: usize, seed: u64) -> HyperplaneBank<f64> {
        build_bank(SketchSpec::new(depth, width, seed).unwrap(), dim).unwrap()
    }

    fn vector(dim: usize, seed: u64) -> Vec<f64> {
        (0..dim)
            .map(|i| counter_normal(seed ^ 0xabcdef, 9, 9, i as u64))
            .collect()
    }

    #[test]
    fn full_sized_bank() {
        let b = bank(128, 512, 16, 1);
        assert_eq!(b.spec().bits_per_row(), 9);
        assert_eq!(b.normals().len(), 128 * 9 * 16);
    }

    #[test]
    fn bank_is_deterministic() {
        let a = bank(8, 64, 32, 5);
        let b = bank(8, 64, 32, 5);
        assert!(a
            .normals()
            .iter()
            .zip(b.normals())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a, bank(8, 64, 32, 6));
    }

    #[test]
    fn width_must_be_power_of_two() {
        assert!(matches!(SketchSpec::new(128, 500, 0), Err(Error::Spec(_))));
        assert!(SketchSpec::new(128, 1, 0).is_err());
        assert!(SketchSpec::new(0, 512, 0).is_err());
        assert!(build_bank::<f64>(SketchSpec { depth: 2, width: 500, seed: 0 }, 3).is_err());
    }

    #[test]
    fn zero_vector_is_missing_input() {
        let b = bank(4, 8, 3, 0);
        assert!(matches!(b.sketch_binary(&[0.0; 3]), Err(Error::MissingInput)));
        assert!(matches!(b.sketch_binary(&[1.0; 4]), Err(Error::Dim { .. })));
        assert!(matches!(b.sketch_binary(&[1.0, f64::NAN, 0.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn bucket_encoding_extremes() {
        let id = BankId { spec: SketchSpec::new(2, 512, 0).unwrap(), input_dim: 1 };
        // row 0 all zeros, row 1 all ones
        let words = vec![((1u64 << 9) - 1) << 9];
        let s = BinarySketch::from_words(id, words);
        assert_eq!(s.to_classical().buckets(), &[0, 511]);
    }

    #[test]
    fn msb_is_first_hyperplane() {
        let id = BankId { spec: SketchSpec::new(1, 8, 0).unwrap(), input_dim: 1 };
        assert_eq!(BinarySketch::from_words(id, vec![0b001]).to_classical().buckets(), &[4]);
        assert_eq!(BinarySketch::from_words(id, vec![0b100]).to_classical().buckets(), &[1]);
    }

    #[test]
    fn tie_maps_to_one() {
        // x orthogonal to every normal only in 1-D if the normal is zero; build
        // a bank by hand with a zero normal
        let spec = SketchSpec::new(1, 2, 0).unwrap();
        let b = HyperplaneBank::from_parts(spec, 2, vec![0.0f64, 0.0]).unwrap();
        assert!(b.sketch_binary(&[1.0, -1.0]).unwrap().bit(0, 0));
    }

    #[test]
    fn negation_complements_bits() {
        let b = bank(16, 64, 24, 3);
        let x = vector(24, 1);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let s = b.sketch_binary(&x).unwrap();
        assert_eq!(b.sketch_binary(&neg).unwrap(), s.complement());
    }

    #[test]
    fn identical_vectors_identical_buckets() {
        let b = bank(32, 128, 10, 4);
        let x = vector(10, 2);
        assert_eq!(b.sketch_classical(&x).unwrap(), b.sketch_classical(&x.clone()).unwrap());
    }

    #[test]
    fn flatten_lengths() {
        let x = vector(4, 0);
        for (d, w, len) in [(128, 512, 65_536), (210, 512, 107_520)] {
            let s = bank(d, w, 4, 0).sketch_classical(&x).unwrap();
            assert_eq!(s.flatten::<f64>().len(), len);
        }
        let s = bank(128, 512, 4, 0).sketch_binary(&x).unwrap();
        let flat = s.flatten::<f64>();
        assert_eq!(flat.len(), 1152);
        assert!(flat.iter().all(|v| *v == 0.0 || *v == 1.0));
        assert_eq!(flat[9 * 3 + 2] == 1.0, s.bit(3, 2));
    }

    #[test]
    fn aggregate_single_and_twenty() {
        let b = bank(8, 16, 6, 9);
        let sketches: Vec<ClassicalSketch> =
            (0..20).map(|i| b.sketch_classical(&vector(6, i)).unwrap()).collect();
        let one: CountSketch<f64> = aggregate(&sketches[..1]).unwrap();
        assert_eq!(one.counts(), &sketches[0].materialize_onehot::<f64>());
        let all: CountSketch<f64> = aggregate(&sketches).unwrap();
        assert_eq!(all.n_items(), 20);
        for row in all.counts().iter_rows() {
            assert_eq!(row.iter().sum::<f64>(), 20.0);
        }
        let split = aggregate::<f64>(&sketches[..7])
            .unwrap()
            .merge(&aggregate(&sketches[7..]).unwrap())
            .unwrap();
        assert_eq!(split, all);
    }

    #[test]
    fn aggregate_rejects_mixed_banks() {
        let x = vector(6, 0);
        let a = bank(8, 16, 6, 1).sketch_classical(&x).unwrap();
        let c = bank(8, 16, 6, 2).sketch_classical(&x).unwrap();
        assert!(matches!(aggregate::<f64>(&[a.clone(), c]), Err(Error::MixedBank)));
        assert!(aggregate::<f64>(&[]).is_err());
        let d = bank(8, 16, 6, 1).sketch_binary(&x).unwrap();
        let e = bank(8, 32, 6, 1).sketch_binary(&x).unwrap();
        assert!(matches!(estimate_angle(&d, &e), Err(Error::MixedBank)));
    }

    #[test]
    fn three_four_five_row() {
        let mut m = Matrix::zeros(2, 4);
        m.set(0, 0, 3.0);
        m.set(0, 1, 4.0);
        let n = normalize_rows(&m);
        assert_eq!(n.row(0), &[0.6, 0.8, 0.0, 0.0]);
        assert_eq!(n.row(1), &[0.0; 4]);
    }

    #[test]
    fn one_hot_rows_unchanged_by_normalization() {
        let b = bank(8, 16, 6, 9);
        let s = b.sketch_classical(&vector(6, 1)).unwrap();
        let cs: CountSketch<f64> = aggregate(&[s.clone()]).unwrap();
        assert_eq!(normalize_widthwise(&cs), s.materialize_onehot());
    }

    #[test]
    fn angle_extremes() {
        let b = bank(16, 32, 5, 2);
        let s = b.sketch_binary(&vector(5, 3)).unwrap();
        assert_eq!(estimate_angle(&s, &s).unwrap(), 0.0);
        assert_eq!(estimate_angle(&s, &s.complement()).unwrap(), std::f64::consts::PI);
    }

    #[test]
    fn batch_matches_sequential() {
        let b = bank(16, 32, 5, 2);
        let xs: Vec<Vec<f64>> = (0..50).map(|i| vector(5, i)).collect();
        let batch = b.sketch_binary_batch(&xs);
        for (x, s) in xs.iter().zip(batch) {
            assert_eq!(s.unwrap(), b.sketch_binary(x).unwrap());
        }
    }

    #[test]
    fn f32_and_f64_banks_agree_on_signs() {
        let spec = SketchSpec::new(16, 64, 8).unwrap();
        let b64 = build_bank::<f64>(spec, 12).unwrap();
        let b32 = build_bank::<f32>(spec, 12).unwrap();
        let x = vector(12, 4);
        let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let h = b64
            .sketch_binary(&x)
            .unwrap()
            .flatten::<f64>()
            .iter()
            .zip(b32.sketch_binary(&x32).unwrap().flatten::<f64>())
            .filter(|(a, b)| **a != *b)
            .count();
        // only projections within f32 rounding of zero could differ
        assert!(h <= 1, "{h}");
    }

    proptest! {
        #[test]
        fn positive_scaling_preserves_sketch(seed in 0u64..1000, alpha in 1e-3f64..1e3) {
            let b = bank(8, 32, 7, 77);
            let x = vector(7, seed);
            let y: Vec<f64> = x.iter().map(|v| v * alpha).collect();
            prop_assert_eq!(b.sketch_binary(&x).unwrap(), b.sketch_binary(&y).unwrap());
            prop_assert_eq!(b.sketch_classical(&x).unwrap(), b.sketch_classical(&y).unwrap());
        }

        #[test]
        fn normalization_is_idempotent(vals in proptest::collection::vec(0.0f64..50.0, 24)) {
            let m = Matrix::from_vec(3, 8, vals).unwrap();
            let once = normalize_rows(&m);
            let twice = normalize_rows(&once);
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }
    }
}
