//! Dense linear algebra and the deterministic random stream everything else
//! is built on.
//!
//! The random stream is SplitMix64 used in counter mode: draw `n` of a stream
//! with key `k` is `mix(k + n * 0x9E3779B97F4A7C15)`, where `mix` is the
//! SplitMix64 finalizer. Uniform reals take the top 53 bits of a draw, and
//! normals come from Box–Muller on pairs of uniforms. Sub-streams are derived
//! with [`RngStream::fork`], which hashes the parent key with a stream id.
//! Nothing in the stream depends on the platform or on a third-party crate.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

pub type Vector = Vec<f64>;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Fills row by row from the normal stream.
    pub fn standard_normal(rows: usize, cols: usize, rng: &mut RngStream) -> Self {
        let data = (0..rows * cols).map(|_| rng.normal()).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vector> {
        if v.len() != self.cols {
            return Err(Error::shape("matvec", self.shape_str(), v.len()));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    /// `selfᵀ · v`, accumulated row by row.
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vector> {
        if v.len() != self.rows {
            return Err(Error::shape("matvec_t", self.shape_str(), v.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &s) in v.iter().enumerate() {
            if s != 0.0 {
                axpy(s, self.row(r), &mut out);
            }
        }
        Ok(out)
    }

    /// `self += a ⊗ b`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) -> Result<()> {
        if a.len() != self.rows || b.len() != self.cols {
            return Err(Error::shape(
                "add_outer",
                self.shape_str(),
                format!("{}x{}", a.len(), b.len()),
            ));
        }
        for (r, &s) in a.iter().enumerate() {
            if s != 0.0 {
                let cols = self.cols;
                axpy(s, b, &mut self.data[r * cols..(r + 1) * cols]);
            }
        }
        Ok(())
    }
}

/// Standard matrix product, summing over the inner dimension in ascending order.
pub fn gemm(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape("gemm", a.shape_str(), b.shape_str()));
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out = &mut c.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            axpy(a.data[i * a.cols + k], b.row(k), out);
        }
    }
    Ok(c)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += s * x`.
#[inline]
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Normal density with mean 0 and standard deviation `alpha`.
pub fn gaussian_pdf(x: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!(
            "gaussian width must be positive, got {alpha}"
        )));
    }
    Ok(gaussian_pdf_unchecked(x, alpha))
}

#[inline]
pub(crate) fn gaussian_pdf_unchecked(x: f64, alpha: f64) -> f64 {
    let z = x / alpha;
    INV_SQRT_2PI / alpha * (-0.5 * z * z).exp()
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based SplitMix64 stream. See the module docs for the exact recipe.
#[derive(Clone, Debug, PartialEq)]
pub struct RngStream {
    key: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            key: seed,
            counter: 0,
            spare_normal: None,
        }
    }

    /// Independent child stream; the parent is left untouched.
    pub fn fork(&self, stream: u64) -> RngStream {
        RngStream::new(mix64(self.key ^ mix64(stream.wrapping_add(GOLDEN_GAMMA))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (Lemire multiply-shift with rejection).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Box–Muller; the second value of each pair is cached for the next call.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

pub fn draw_standard_normal(rng: &mut RngStream, n: usize) -> Result<Vector> {
    if n == 0 {
        return Err(Error::Domain("cannot draw zero normal samples".into()));
    }
    Ok((0..n).map(|_| rng.normal()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_product(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                c.set(i, j, s);
            }
        }
        c
    }

    #[test]
    fn identity_is_neutral() {
        let mut rng = RngStream::new(3);
        let m = Matrix::standard_normal(3, 3, &mut rng);
        assert_eq!(gemm(&Matrix::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn small_hand_product() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[&[1.0], &[1.0]]).unwrap();
        assert_eq!(gemm(&a, &b).unwrap().as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn gemm_matches_triple_loop() {
        let mut rng = RngStream::new(11);
        let a = Matrix::standard_normal(5, 7, &mut rng);
        let b = Matrix::standard_normal(7, 3, &mut rng);
        // Same summation order, so equality is exact.
        assert_eq!(gemm(&a, &b).unwrap(), naive_product(&a, &b));
    }

    #[test]
    fn gemm_shape_error_names_both_shapes() {
        let err = gemm(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "{msg}");
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn pdf_closed_forms() {
        assert!((gaussian_pdf(0.0, 1.0).unwrap() - 0.398_942_280_4).abs() < 1e-10);
        assert!((gaussian_pdf(0.0, 4.0).unwrap() - 0.099_735_570_1).abs() < 1e-10);
        assert!(gaussian_pdf(1.0, 0.0).is_err());
        assert!(gaussian_pdf(1.0, -2.0).is_err());
    }

    #[test]
    fn pdf_integrates_to_one() {
        // Trapezoid rule over ±12 widths.
        let alpha = 0.3;
        let (lo, hi, n) = (-12.0 * alpha, 12.0 * alpha, 200_000);
        let h = (hi - lo) / n as f64;
        let mut s = 0.5 * (gaussian_pdf(lo, alpha).unwrap() + gaussian_pdf(hi, alpha).unwrap());
        for k in 1..n {
            s += gaussian_pdf(lo + k as f64 * h, alpha).unwrap();
        }
        assert!((s * h - 1.0).abs() < 1e-9);
        // gaussian_pdf(1, 0.3) against the explicit formula.
        let expect = (-(1.0f64 / 0.3).powi(2) / 2.0).exp() / (0.3 * (2.0 * PI).sqrt());
        assert!((gaussian_pdf(1.0, 0.3).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn normal_draws() {
        let mut rng = RngStream::new(1);
        assert!(draw_standard_normal(&mut rng, 0).is_err());
        let one = draw_standard_normal(&mut rng, 1).unwrap();
        assert!(one[0].is_finite());

        let mut rng = RngStream::new(2024);
        let xs = draw_standard_normal(&mut rng, 1_000_000).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = RngStream::new(77);
        let mut b = RngStream::new(77);
        let da = draw_standard_normal(&mut a, 100).unwrap();
        let db = draw_standard_normal(&mut b, 100).unwrap();
        assert_eq!(
            da.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            db.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(RngStream::new(77).fork(1).next_u64(), RngStream::new(77).fork(2).next_u64());
    }

    #[test]
    fn stream_is_pinned() {
        // SplitMix64 reference output for seed 0.
        let mut rng = RngStream::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = RngStream::new(9);
        let mut seen = [0usize; 7];
        for _ in 0..7000 {
            seen[rng.below(7)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 800));
    }

    fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-3.0f64..3.0, rows * cols)
            .prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn gemm_is_associative(
            (a, b, c) in (1usize..=8, 1usize..=8, 1usize..=8, 1usize..=8).prop_flat_map(|(m, n, p, q)| {
                (small_matrix(m, n), small_matrix(n, p), small_matrix(p, q))
            })
        ) {
            let left = gemm(&gemm(&a, &b).unwrap(), &c).unwrap();
            let right = gemm(&a, &gemm(&b, &c).unwrap()).unwrap();
            let abs = |m: &Matrix| Matrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|v| v.abs()).collect()).unwrap();
            let bound = gemm(&gemm(&abs(&a), &abs(&b)).unwrap(), &abs(&c)).unwrap();
            for ((l, r), s) in left.as_slice().iter().zip(right.as_slice()).zip(bound.as_slice()) {
                prop_assert!((l - r).abs() <= 1e-12 * s);
            }
        }

        #[test]
        fn pdf_is_even(x in -50.0f64..50.0, alpha in 0.01f64..10.0) {
            prop_assert_eq!(gaussian_pdf(x, alpha).unwrap(), gaussian_pdf(-x, alpha).unwrap());
        }
    }
}
