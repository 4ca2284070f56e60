//! Dense row-major `f64` matrices and the loss kernels built on them.
//!
//! All reductions run in a fixed loop order so that reruns are bit-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix with finite entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        let m = Matrix { rows, cols, data };
        m.ensure_finite("Matrix::new")?;
        Ok(m)
    }

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

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::shape(
                "Matrix::from_rows",
                format!("row {bad} has {} entries, expected {cols}", rows[bad].len()),
            ));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    /// Builds a matrix from a generator. Panics if the generator yields a
    /// non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let v = f(r, c);
                assert!(v.is_finite(), "Matrix::from_fn produced {v} at ({r}, {c})");
                data.push(v);
            }
        }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        assert!(r < self.rows && c < self.cols, "index ({r}, {c}) out of bounds");
        self.data[r * self.cols + c]
    }

    /// Panics on a non-finite value.
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        assert!(r < self.rows && c < self.cols, "index ({r}, {c}) out of bounds");
        assert!(v.is_finite(), "refusing to store {v}");
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
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

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |r, c| f(self.data[r * self.cols + c]))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    /// `self += s * other`
    pub fn scaled_add_assign(&mut self, s: f64, other: &Matrix) -> Result<()> {
        self.same_shape(other, "scaled_add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        self.ensure_finite("scaled_add_assign")
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(())
    }

    pub(crate) fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(op))
        }
    }
}

/// Standard product `a * b`, accumulated in i-k-j order.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    out.ensure_finite("matmul")?;
    Ok(out)
}

/// `a^T * b` without materialising the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::shape(
            "matmul_tn",
            format!("{:?}^T x {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let a_row = a.row(k);
        let b_row = b.row(k);
        for (i, &aki) in a_row.iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aki * bv;
            }
        }
    }
    out.ensure_finite("matmul_tn")?;
    Ok(out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Row-wise `log(softmax(m))`, stable for any finite input.
pub fn log_softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

fn check_labels(rows: usize, cols: usize, labels: &[usize], op: &'static str) -> Result<()> {
    if rows != labels.len() {
        return Err(Error::shape(
            op,
            format!("{rows} rows but {} labels", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= cols) {
        return Err(Error::Label {
            label: bad,
            num_classes: cols,
        });
    }
    Ok(())
}

/// Mean negative log-likelihood of the labelled entries.
///
/// Probabilities are floored at the smallest positive normal so the loss
/// stays finite.
pub fn cross_entropy(probabilities: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(probabilities.rows, probabilities.cols, labels, "cross_entropy")?;
    if labels.is_empty() {
        return Err(Error::Degenerate("cross_entropy of an empty batch".into()));
    }
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        total -= probabilities.get(r, y).max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Cross-entropy of `softmax(logits)` together with its gradient with
/// respect to the logits, `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    check_labels(logits.rows, logits.cols, labels, "softmax_cross_entropy")?;
    if labels.is_empty() {
        return Err(Error::Degenerate("cross_entropy of an empty batch".into()));
    }
    let batch = labels.len() as f64;
    let log_p = log_softmax_rows(logits);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        loss -= log_p.get(r, y);
    }
    let mut grad = log_p.map(f64::exp);
    for (r, &y) in labels.iter().enumerate() {
        grad.data[r * grad.cols + y] -= 1.0;
    }
    for v in grad.data.iter_mut() {
        *v /= batch;
    }
    Ok((loss / batch, grad))
}

pub fn l2_normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for r in 0..m.rows {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Degenerate(format!("row {r} has zero norm")));
        }
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    Ok(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn normalize(v: &mut [f64]) -> Result<()> {
    let norm = dot(v, v).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Degenerate("cannot normalise a zero vector".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| r.random_range(-scale..scale))
    }

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Vec<Vec<f64>> {
        (0..a.rows())
            .map(|i| {
                (0..b.cols())
                    .map(|j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn identity_is_neutral() {
        let m = Matrix::from_rows(&[vec![1.0, -2.0, 3.5], vec![0.25, 4.0, -1.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let p = matmul(&a, &b).unwrap();
        assert_eq!(p.as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut r = rng::stream(11, &[]);
        let a = random_matrix(&mut r, 7, 5, 2.0);
        let b = random_matrix(&mut r, 5, 3, 2.0);
        let p = matmul(&a, &b).unwrap();
        let oracle = naive_matmul(&a, &b);
        for i in 0..7 {
            for j in 0..3 {
                assert!((p.get(i, j) - oracle[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_tn_matches_explicit_transpose() {
        let mut r = rng::stream(12, &[]);
        let a = random_matrix(&mut r, 6, 4, 1.0);
        let b = random_matrix(&mut r, 6, 3, 1.0);
        let direct = matmul(&a.transpose(), &b).unwrap();
        assert!(matmul_tn(&a, &b).unwrap().max_abs_diff(&direct) < 1e-14);
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn matrix_rejects_non_finite() {
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn softmax_symmetric_row() {
        let p = softmax_rows(&Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap());
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_extreme_row_does_not_overflow() {
        let p = softmax_rows(&Matrix::from_rows(&[vec![1000.0, 0.0]]).unwrap());
        assert!((p.get(0, 0) - 1.0).abs() < 1e-300_f64.max(f64::EPSILON));
        assert!(p.get(0, 1) >= 0.0 && p.get(0, 1) < 1e-300);
    }

    #[test]
    fn softmax_matches_extended_precision_values() {
        // exp(k) / (e + e^2 + e^3), k = 1, 2, 3, evaluated with 50-digit arithmetic.
        let expected = [
            0.090_030_573_170_380_459_f64,
            0.244_728_471_054_797_64,
            0.665_240_955_774_821_9,
        ];
        let p = softmax_rows(&Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
        for (got, want) in p.as_slice().iter().zip(expected) {
            assert!(((got - want) / want).abs() <= 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn cross_entropy_perfect_and_uniform() {
        let perfect = Matrix::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(cross_entropy(&perfect, &[1]).unwrap(), 0.0);
        let n = 7;
        let uniform = Matrix::from_fn(3, n, |_, _| 1.0 / n as f64);
        let loss = cross_entropy(&uniform, &[0, 3, 6]).unwrap();
        assert!((loss - (n as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_scalar_loop() {
        let mut r = rng::stream(13, &[]);
        let p = softmax_rows(&random_matrix(&mut r, 4, 5, 3.0));
        let labels = [4, 0, 2, 2];
        let mut oracle = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            oracle += -p.get(i, y).ln();
        }
        oracle /= 4.0;
        assert!((cross_entropy(&p, &labels).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let p = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            cross_entropy(&p, &[2]),
            Err(Error::Label { label: 2, .. })
        ));
    }

    #[test]
    fn softmax_ce_gradient_matches_finite_differences() {
        let mut r = rng::stream(14, &[]);
        let logits = random_matrix(&mut r, 5, 4, 2.0);
        let labels = [0, 3, 1, 1, 2];
        let (loss, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let direct = cross_entropy(&softmax_rows(&logits), &labels).unwrap();
        assert!((loss - direct).abs() < 1e-12);
        let h = 1e-5;
        for i in 0..5 {
            for j in 0..4 {
                let mut plus = logits.clone();
                plus.set(i, j, logits.get(i, j) + h);
                let mut minus = logits.clone();
                minus.set(i, j, logits.get(i, j) - h);
                let fd = (cross_entropy(&softmax_rows(&plus), &labels).unwrap()
                    - cross_entropy(&softmax_rows(&minus), &labels).unwrap())
                    / (2.0 * h);
                let g = grad.get(i, j);
                assert!((fd - g).abs() <= 1e-4 * g.abs().max(1e-3), "{fd} vs {g}");
            }
        }
    }

    #[test]
    fn normalize_three_four_five() {
        let n = l2_normalize_rows(&Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap()).unwrap();
        assert!((n.get(0, 0) - 0.6).abs() < 1e-15 && (n.get(0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_random_rows_have_unit_norm() {
        let mut r = rng::stream(15, &[]);
        let n = l2_normalize_rows(&random_matrix(&mut r, 5, 8, 4.0)).unwrap();
        for i in 0..5 {
            let norm = dot(n.row(i), n.row(i)).sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(l2_normalize_rows(&m), Err(Error::Degenerate(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one_under_extremes() {
        let mut r = rng::stream(16, &[]);
        let m = Matrix::from_fn(10_000, 6, |_, _| {
            if r.random_bool(0.2) {
                r.random_range(-1000.0..1000.0)
            } else {
                r.random_range(-5.0..5.0)
            }
        });
        let p = softmax_rows(&m);
        for i in 0..p.rows() {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(p.row(i).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    proptest! {
        #[test]
        fn matmul_is_associative(seed in any::<u64>(), n in 1usize..5, k in 1usize..5, l in 1usize..5, m in 1usize..5) {
            let mut r = rng::stream(seed, &[]);
            let a = random_matrix(&mut r, n, k, 1.0);
            let b = random_matrix(&mut r, k, l, 1.0);
            let c = random_matrix(&mut r, l, m, 1.0);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let denom = left.frobenius_norm().max(1e-12);
            prop_assert!(left.sub(&right).unwrap().frobenius_norm() / denom <= 1e-9);
        }

        #[test]
        fn normalization_is_idempotent(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..9) {
            let mut r = rng::stream(seed, &[]);
            let m = Matrix::from_fn(rows, cols, |_, _| r.random_range(0.1..2.0));
            let once = l2_normalize_rows(&m).unwrap();
            let twice = l2_normalize_rows(&once).unwrap();
            prop_assert!(once.max_abs_diff(&twice) <= 1e-12);
        }
    }
}
