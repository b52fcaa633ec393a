//! Singular value decomposition of the hour-by-day matrix and its rank-p
//! truncations.
//!
//! The decomposition is a one-sided (Hestenes) Jacobi SVD: plane rotations are
//! applied to the columns of the taller orientation of `A` until every pair is
//! orthogonal to working precision. Column norms are then the singular values.
//! The method is sequential and deterministic, so a fixed input always yields a
//! bit-identical decomposition.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CellFlag, DayMatrix};

/// Default truncation rank.
pub const DEFAULT_RANK: usize = 2;

const MAX_SWEEPS: usize = 80;

#[derive(Debug, Error, PartialEq)]
pub enum LowRankError {
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },
    #[error("matrix has no entries")]
    EmptyMatrix,
    #[error("rank {p} outside 1..={rank}")]
    RankOutOfRange { p: usize, rank: usize },
    #[error("shape mismatch: matrix is {matrix:?}, model is {model:?}")]
    ShapeMismatch {
        matrix: (usize, usize),
        model: (usize, usize),
    },
    #[error("Jacobi sweeps did not converge after {0} sweeps")]
    NoConvergence(usize),
}

/// Dense real matrix stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// # Panics
    /// If `data.len() != rows * cols`.
    pub fn from_column_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Self { rows, cols, data }
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

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.rows + row]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[col * self.rows + row] = value;
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.data[col * self.rows..(col + 1) * self.rows]
    }

    pub fn column_mut(&mut self, col: usize) -> &mut [f64] {
        &mut self.data[col * self.rows..(col + 1) * self.rows]
    }

    pub fn as_column_major(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape());
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Matrix {
        let mut g = Matrix::zeros(self.cols, self.cols);
        for i in 0..self.cols {
            for j in i..self.cols {
                let v = dot(self.column(i), self.column(j));
                g.set(i, j, v);
                g.set(j, i, v);
            }
        }
        g
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(m: &mut Matrix, i: usize, j: usize, c: f64, s: f64) {
    let rows = m.rows;
    let (lo, hi) = m.data.split_at_mut(j * rows);
    let ci = &mut lo[i * rows..(i + 1) * rows];
    let cj = &mut hi[..rows];
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Orthogonalizes the columns of `work` (rows >= cols) in place and returns the
/// accumulated rotation, so that `work_in · Z = work_out`.
fn jacobi_sweeps(work: &mut Matrix) -> Result<Matrix, LowRankError> {
    let n = work.cols;
    let tol = f64::EPSILON * work.rows as f64;
    let mut z = Matrix::identity(n);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n.saturating_sub(1) {
            for j in i + 1..n {
                let alpha = dot(work.column(i), work.column(i));
                let beta = dot(work.column(j), work.column(j));
                let gamma = dot(work.column(i), work.column(j));
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(work, i, j, c, s);
                rotate(&mut z, i, j, c, s);
            }
        }
        if !rotated {
            return Ok(z);
        }
    }
    Err(LowRankError::NoConvergence(MAX_SWEEPS))
}

/// Replaces the columns flagged in `empty` with unit vectors orthogonal to
/// every other column.
fn complete_basis(m: &mut Matrix, empty: &[bool]) {
    let rows = m.rows;
    let mut candidate = 0;
    for k in 0..m.cols {
        if !empty[k] {
            continue;
        }
        loop {
            assert!(candidate < rows, "basis completion ran out of candidates");
            let mut v = vec![0.0; rows];
            v[candidate] = 1.0;
            candidate += 1;
            // two Gram-Schmidt passes
            for _ in 0..2 {
                for other in 0..m.cols {
                    if other == k || (empty[other] && other > k) {
                        continue;
                    }
                    let col = m.column(other);
                    let proj = dot(&v, col);
                    for (x, c) in v.iter_mut().zip(col) {
                        *x -= proj * c;
                    }
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 0.5 {
                for (dst, x) in m.column_mut(k).iter_mut().zip(&v) {
                    *dst = x / norm;
                }
                break;
            }
        }
    }
}

/// `A = U · diag(σ) · Vᵀ` with `r = min(rows, cols)` retained terms.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    u: Matrix,
    singular_values: Vec<f64>,
    v: Matrix,
}

impl SpectralDecomposition {
    /// Daily profiles, one per column.
    pub fn u(&self) -> &Matrix {
        &self.u
    }

    /// Per-day amplitudes, one per column.
    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.u.rows, self.v.rows)
    }

    /// Entry magnitude below which a reconstruction difference is rounding noise.
    pub fn resolution(&self) -> f64 {
        let (h, d) = self.shape();
        let sigma_max = self.singular_values.first().copied().unwrap_or(0.0);
        sigma_max * h.max(d) as f64 * f64::EPSILON
    }

    /// Sum of the leading `p` rank-one terms.
    pub fn reconstruct(&self, p: usize) -> Matrix {
        let (h, d) = self.shape();
        let mut out = Matrix::zeros(h, d);
        for k in 0..p.min(self.rank()) {
            let sigma = self.singular_values[k];
            let uk = self.u.column(k);
            for j in 0..d {
                let coef = sigma * self.v.get(j, k);
                for (dst, u) in out.column_mut(j).iter_mut().zip(uk) {
                    *dst += coef * u;
                }
            }
        }
        out
    }
}

/// Full SVD of `a`. Singular vectors follow the nonnegative-mean convention on
/// the columns of `U`.
pub fn decompose(a: &Matrix) -> Result<SpectralDecomposition, LowRankError> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Err(LowRankError::EmptyMatrix);
    }
    for j in 0..cols {
        for i in 0..rows {
            if !a.get(i, j).is_finite() {
                return Err(LowRankError::NonFiniteInput { row: i, col: j });
            }
        }
    }
    let wide = rows <= cols;
    let mut work = if wide { a.transpose() } else { a.clone() };
    let z = jacobi_sweeps(&mut work)?;
    let r = work.cols;

    let norms: Vec<f64> = (0..r).map(|k| dot(work.column(k), work.column(k)).sqrt()).collect();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));

    let sigma_max = norms[order[0]];
    let floor = sigma_max * work.rows.max(r) as f64 * f64::EPSILON;
    let mut singular_values = Vec::with_capacity(r);
    let mut left = Matrix::zeros(work.rows, r);
    let mut right = Matrix::zeros(r, r);
    let mut empty = vec![false; r];
    for (k, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        right.column_mut(k).copy_from_slice(z.column(src));
        if sigma <= floor || sigma == 0.0 {
            singular_values.push(0.0);
            empty[k] = true;
        } else {
            singular_values.push(sigma);
            for (dst, x) in left.column_mut(k).iter_mut().zip(work.column(src)) {
                *dst = x / sigma;
            }
        }
    }
    if empty.iter().any(|e| *e) {
        complete_basis(&mut left, &empty);
    }

    let (mut u, mut v) = if wide { (right, left) } else { (left, right) };
    for k in 0..r {
        let mean: f64 = u.column(k).iter().sum::<f64>() / u.rows as f64;
        if mean < 0.0 {
            u.column_mut(k).iter_mut().for_each(|x| *x = -*x);
            v.column_mut(k).iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(SpectralDecomposition {
        u,
        singular_values,
        v,
    })
}

/// Rank-p truncation of a decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct RankPModel {
    pub p: usize,
    pub approximation: Matrix,
    /// `‖A − A_p‖_F`, from the discarded singular values.
    pub frobenius_error: f64,
    pub spectrum_tail: Vec<f64>,
    pub resolution: f64,
}

pub fn truncate(dec: &SpectralDecomposition, p: usize) -> Result<RankPModel, LowRankError> {
    if p == 0 || p > dec.rank() {
        return Err(LowRankError::RankOutOfRange { p, rank: dec.rank() });
    }
    let spectrum_tail = dec.singular_values[p..].to_vec();
    let frobenius_error = spectrum_tail.iter().map(|s| s * s).sum::<f64>().sqrt();
    Ok(RankPModel {
        p,
        approximation: dec.reconstruct(p),
        frobenius_error,
        spectrum_tail,
        resolution: dec.resolution(),
    })
}

/// Signed residuals `A − A_p` in hour order, paired with the cell mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    values: Vec<f64>,
    mask: Vec<CellFlag>,
}

impl ResidualSeries {
    pub fn new(values: Vec<f64>, mask: Vec<CellFlag>) -> Self {
        assert_eq!(values.len(), mask.len(), "mask length must match values");
        Self { values, mask }
    }

    /// All cells flagged observed.
    pub fn observed(values: Vec<f64>) -> Self {
        let mask = vec![CellFlag::Observed; values.len()];
        Self { values, mask }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn signed(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[CellFlag] {
        &self.mask
    }

    pub fn absolute(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.abs()).collect()
    }

    /// Absolute residuals of observed (non-imputed) cells, in hour order.
    pub fn observed_absolute(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.mask)
            .filter(|(_, f)| **f == CellFlag::Observed)
            .map(|(r, _)| r.abs())
            .collect()
    }

    pub fn imputed_count(&self) -> usize {
        self.mask.iter().filter(|f| **f == CellFlag::Imputed).count()
    }
}

/// Residuals of a day matrix against its rank-p model. Differences at or below
/// the decomposition's rounding resolution are reported as exact zeros.
pub fn residual_series(
    matrix: &DayMatrix,
    model: &RankPModel,
) -> Result<ResidualSeries, LowRankError> {
    let a = matrix.values();
    if a.shape() != model.approximation.shape() {
        return Err(LowRankError::ShapeMismatch {
            matrix: a.shape(),
            model: model.approximation.shape(),
        });
    }
    let values = a
        .as_column_major()
        .iter()
        .zip(model.approximation.as_column_major())
        .map(|(x, y)| {
            let r = x - y;
            if r.abs() <= model.resolution {
                0.0
            } else {
                r
            }
        })
        .collect();
    Ok(ResidualSeries::new(values, matrix.mask().to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub year: i32,
    pub k: usize,
    pub sigma: f64,
    pub sigma_normalized: f64,
}

/// Year x k singular-value table.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpectrumTable {
    pub rows: Vec<SpectrumRow>,
}

impl SpectrumTable {
    pub fn year(&self, year: i32) -> impl Iterator<Item = &SpectrumRow> {
        self.rows.iter().filter(move |r| r.year == year)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["year", "k", "sigma", "sigma_normalized"])?;
        for r in &self.rows {
            w.write_record([
                r.year.to_string(),
                r.k.to_string(),
                r.sigma.to_string(),
                r.sigma_normalized.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the spectrum table from per-year singular values (k is 1-based).
pub fn spectrum_report<'a, I>(spectra: I) -> SpectrumTable
where
    I: IntoIterator<Item = (i32, &'a [f64])>,
{
    let mut rows = Vec::new();
    for (year, sigma) in spectra {
        let lead = sigma.first().copied().unwrap_or(0.0);
        for (k, s) in sigma.iter().enumerate() {
            rows.push(SpectrumRow {
                year,
                k: k + 1,
                sigma: *s,
                sigma_normalized: if lead > 0.0 { s / lead } else { 0.0 },
            });
        }
    }
    SpectrumTable { rows }
}

/// Writes `k,hour,u_value` for the leading `p` profiles.
pub fn write_profiles_csv<W: Write>(
    dec: &SpectralDecomposition,
    p: usize,
    writer: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "hour", "u_value"])?;
    for k in 0..p.min(dec.rank()) {
        for (hour, u) in dec.u.column(k).iter().enumerate() {
            w.write_record([(k + 1).to_string(), hour.to_string(), u.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `k,day,v_value` for the leading `p` amplitude vectors.
pub fn write_amplitudes_csv<W: Write>(
    dec: &SpectralDecomposition,
    p: usize,
    writer: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "day", "v_value"])?;
    for k in 0..p.min(dec.rank()) {
        for (day, v) in dec.v.column(k).iter().enumerate() {
            w.write_record([(k + 1).to_string(), day.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_orthonormal_deviation(m: &Matrix) -> f64 {
        let g = m.gram();
        let mut worst: f64 = 0.0;
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - target).abs());
            }
        }
        worst
    }

    #[test]
    fn rank_one_outer_product() {
        let u: Vec<f64> = (0..6).map(|i| 1.0 + i as f64).collect();
        let v: Vec<f64> = (0..9).map(|j| 0.5 + (j as f64).sqrt()).collect();
        let a = Matrix::from_fn(6, 9, |i, j| u[i] * v[j]);
        let dec = decompose(&a).unwrap();
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((dec.singular_values()[0] - nu * nv).abs() <= 1e-12 * nu * nv);
        assert!(dec.singular_values()[1..].iter().all(|s| *s == 0.0));
        assert!(max_orthonormal_deviation(dec.u()) <= 1e-12);
        assert!(max_orthonormal_deviation(dec.v()) <= 1e-12);
        // positive data gives a positive leading profile
        assert!(dec.u().column(0).iter().all(|x| *x > 0.0));
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let dec = decompose(&Matrix::identity(3)).unwrap();
        for s in dec.singular_values() {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_matrix_still_orthonormal() {
        let dec = decompose(&Matrix::zeros(4, 7)).unwrap();
        assert!(dec.singular_values().iter().all(|s| *s == 0.0));
        assert!(max_orthonormal_deviation(dec.u()) <= 1e-14);
        assert!(max_orthonormal_deviation(dec.v()) <= 1e-14);
    }

    #[test]
    fn tall_and_wide_agree() {
        let a = Matrix::from_fn(5, 8, |i, j| ((i * 7 + j * 3) % 11) as f64 - 4.0);
        let s1 = decompose(&a).unwrap().singular_values().to_vec();
        let s2 = decompose(&a.transpose()).unwrap().singular_values().to_vec();
        for (x, y) in s1.iter().zip(&s2) {
            assert!((x - y).abs() <= 1e-12 * s1[0]);
        }
    }

    #[test]
    fn non_finite_is_located() {
        let mut a = Matrix::zeros(3, 4);
        a.set(2, 1, f64::NAN);
        assert_eq!(
            decompose(&a).unwrap_err(),
            LowRankError::NonFiniteInput { row: 2, col: 1 }
        );
        assert_eq!(decompose(&Matrix::zeros(0, 3)).unwrap_err(), LowRankError::EmptyMatrix);
    }

    #[test]
    fn truncation_bounds() {
        let a = Matrix::from_fn(4, 6, |i, j| (i as f64 - j as f64).sin());
        let dec = decompose(&a).unwrap();
        assert!(matches!(truncate(&dec, 0), Err(LowRankError::RankOutOfRange { .. })));
        assert!(matches!(truncate(&dec, 5), Err(LowRankError::RankOutOfRange { .. })));
        let full = truncate(&dec, 4).unwrap();
        assert_eq!(full.frobenius_error, 0.0);
        assert!(full.spectrum_tail.is_empty());
        assert!(a.sub(&full.approximation).frobenius_norm() <= 1e-12 * a.frobenius_norm());
    }

    #[test]
    fn full_rank_model_leaves_zero_residuals() {
        let hourly: Vec<f64> = (0..24 * 365).map(|i| ((i * 37) % 101) as f64 - 20.0).collect();
        let m = DayMatrix::from_hourly(2015, hourly).unwrap();
        let dec = decompose(m.values()).unwrap();
        let model = truncate(&dec, dec.rank()).unwrap();
        let res = residual_series(&m, &model).unwrap();
        assert!(res.signed().iter().all(|r| *r == 0.0));
    }

    #[test]
    fn single_spike_is_contracted() {
        // rank-2 grid plus a +10 spike at one cell
        let a = |h: usize, d: usize| {
            (1.0 + (h as f64 / 4.0).cos()) * (2.0 + (d as f64 / 50.0).sin())
                + (h as f64 / 24.0) * (d as f64 / 365.0)
        };
        let mut hourly = Vec::new();
        for d in 0..365 {
            for h in 0..24 {
                hourly.push(a(h, d) + if (h, d) == (7, 100) { 10.0 } else { 0.0 });
            }
        }
        let m = DayMatrix::from_hourly(2015, hourly).unwrap();
        let model = truncate(&decompose(m.values()).unwrap(), 2).unwrap();
        let res = residual_series(&m, &model).unwrap();
        let max = res.absolute().into_iter().fold(0.0, f64::max);
        let energy: f64 = res.signed().iter().map(|r| r * r).sum();
        assert!(max <= 10.0 + 1e-9, "{max}");
        assert!(energy <= 100.0 + 1e-9, "{energy}");
        assert!(max > 5.0);
    }

    #[test]
    fn shape_mismatch() {
        let m = DayMatrix::from_hourly(2015, vec![1.0; 24 * 365]).unwrap();
        let model = truncate(&decompose(&Matrix::identity(3)).unwrap(), 1).unwrap();
        assert!(matches!(
            residual_series(&m, &model),
            Err(LowRankError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn spectrum_table_normalizes() {
        let rank_one = Matrix::from_fn(3, 5, |i, j| (i + 1) as f64 * (j + 2) as f64);
        let dec = decompose(&rank_one).unwrap();
        let table = spectrum_report([(2016, dec.singular_values())]);
        let normalized: Vec<f64> = table.rows.iter().map(|r| r.sigma_normalized).collect();
        assert_eq!(normalized, vec![1.0, 0.0, 0.0]);

        let twice = spectrum_report([
            (2015, dec.singular_values()),
            (2016, dec.singular_values()),
        ]);
        let a: Vec<_> = twice.year(2015).map(|r| (r.k, r.sigma)).collect();
        let b: Vec<_> = twice.year(2016).map(|r| (r.k, r.sigma)).collect();
        assert_eq!(a, b);
    }
}
