//! Truncated-SVD denoising of trace batches.
//!
//! A batch of `n` traces of length `m` is treated as an `n x m` matrix. Keeping
//! the first `cp` singular triplets (the cutting point) removes the part of
//! the batch that is not shared across traces, which is mostly noise.

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Label, TraceMatrix};

/// Number of leading singular components kept. Always at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct CuttingPoint(usize);

impl CuttingPoint {
    pub fn new(cp: usize) -> Result<Self> {
        if cp == 0 {
            return Err(Error::InvalidParameter("cutting point must be >= 1".into()));
        }
        Ok(CuttingPoint(cp))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for CuttingPoint {
    type Error = Error;
    fn try_from(v: usize) -> Result<Self> {
        CuttingPoint::new(v)
    }
}

impl From<CuttingPoint> for usize {
    fn from(cp: CuttingPoint) -> usize {
        cp.0
    }
}

impl std::fmt::Display for CuttingPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Thin SVD `A = U diag(sigma) V^T` with singular values in descending order.
///
/// Only `sigma` and `V^T` are kept; the left factor is recovered as
/// `A V = U diag(sigma)` when a projection is taken.
#[derive(Debug, Clone)]
pub struct SvdDecomposition {
    rows: usize,
    cols: usize,
    rank: usize,
    /// The decomposed matrix, row-major.
    data: Vec<f64>,
    sigma: Vec<f64>,
    /// `r x cols`, row-major, with `r = min(rows, cols)`.
    vt: Vec<f64>,
}

/// Rank-`r` factors of a truncated reconstruction.
///
/// `coords` is `rows x rank` (left vectors scaled by sigma) and `basis` is
/// `rank x cols` with orthonormal rows, so the reconstruction is
/// `coords * basis`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub rank: usize,
    pub rows: usize,
    pub cols: usize,
    pub coords: Vec<f64>,
    pub basis: Vec<f64>,
}

impl Projection {
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            let row = &mut out[i * self.cols..(i + 1) * self.cols];
            for j in 0..self.rank {
                let c = self.coords[i * self.rank + j];
                if c == 0.0 {
                    continue;
                }
                let b = &self.basis[j * self.cols..(j + 1) * self.cols];
                for (o, v) in row.iter_mut().zip(b) {
                    *o += c * v;
                }
            }
        }
        out
    }

    pub fn coord_row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.rank..(i + 1) * self.rank]
    }

    /// Coordinates of `x` in the basis and the norm of what the basis misses.
    pub fn embed(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        if x.len() != self.cols {
            return Err(Error::Dimension {
                expected: self.cols,
                got: x.len(),
            });
        }
        let mut residual = x.to_vec();
        let mut coords = Vec::with_capacity(self.rank);
        for j in 0..self.rank {
            let b = &self.basis[j * self.cols..(j + 1) * self.cols];
            coords.push(dot(b, x));
        }
        for (j, &c) in coords.iter().enumerate() {
            let b = &self.basis[j * self.cols..(j + 1) * self.cols];
            for (r, v) in residual.iter_mut().zip(b) {
                *r -= c * v;
            }
        }
        let res = dot(&residual, &residual).sqrt();
        Ok((coords, res))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SvdDecomposition {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.sigma
    }

    /// Number of singular values above the numerical noise floor.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Truncation to the first `min(cp, rank)` components.
    pub fn projection(&self, cp: CuttingPoint) -> Projection {
        let r = self.sigma.len();
        let keep = cp.get().min(self.rank).max(1).min(r);
        let (rows, cols) = (self.rows, self.cols);
        let a = Mat::<f64>::from_fn(rows, cols, |i, j| self.data[i * cols + j]);
        let v = Mat::<f64>::from_fn(cols, keep, |i, j| self.vt[j * cols + i]);
        let c = &a * &v;
        let mut coords = Vec::with_capacity(rows * keep);
        for i in 0..rows {
            coords.extend((0..keep).map(|j| c[(i, j)]));
        }
        Projection {
            rank: keep,
            rows,
            cols,
            coords,
            basis: self.vt[..keep * cols].to_vec(),
        }
    }

    pub fn reconstruct(&self, cp: CuttingPoint) -> Vec<f64> {
        self.projection(cp).reconstruct()
    }
}

/// Matrices whose smaller side reaches this size are decomposed through the
/// eigendecomposition of their Gram matrix.
const GRAM_SVD_MIN: usize = 256;

/// Thin SVD of a trace matrix. Needs at least two rows and finite samples.
///
/// Large matrices go through the Gram matrix, which resolves singular values
/// down to about `sigma_0 * sqrt(n * eps)`; smaller ones are reported as 0
/// and fall outside the rank.
pub fn svd_decompose(m: &TraceMatrix) -> Result<SvdDecomposition> {
    let (rows, cols) = m.shape();
    if rows < 2 {
        return Err(Error::InvalidInput(format!(
            "SVD needs at least 2 rows, got {rows}"
        )));
    }
    if cols == 0 {
        return Err(Error::InvalidInput(
            "SVD of a matrix with no columns".into(),
        ));
    }
    if !m.is_finite() {
        return Err(Error::Numerical(
            "matrix contains non-finite samples".into(),
        ));
    }
    let data = m.data();
    let a = Mat::<f64>::from_fn(rows, cols, |i, j| data[i * cols + j]);
    let (sigma, vt, rank) = if rows.min(cols) >= GRAM_SVD_MIN {
        gram_svd(&a)?
    } else {
        thin_svd(&a)?
    };
    if sigma.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite singular value".into()));
    }
    Ok(SvdDecomposition {
        rows,
        cols,
        rank,
        data: data.to_vec(),
        sigma,
        vt,
    })
}

type Factors = (Vec<f64>, Vec<f64>, usize);

fn thin_svd(a: &Mat<f64>) -> Result<Factors> {
    let (rows, cols) = a.shape();
    let svd = a
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let (s, v) = (svd.S().column_vector(), svd.V());
    let r = rows.min(cols);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let sigma: Vec<f64> = order.iter().map(|&j| s[j].max(0.0)).collect();
    let mut vt = vec![0.0; r * cols];
    for (jj, &j) in order.iter().enumerate() {
        for l in 0..cols {
            vt[jj * cols + l] = v[(l, j)];
        }
    }
    let tol = sigma[0] * rows.max(cols) as f64 * f64::EPSILON;
    let rank = sigma.iter().filter(|&&x| x > tol).count();
    Ok((sigma, vt, rank))
}

fn gram_svd(a: &Mat<f64>) -> Result<Factors> {
    let (rows, cols) = a.shape();
    let r = rows.min(cols);
    let tall = rows >= cols;
    let g = if tall {
        a.transpose() * a
    } else {
        a * a.transpose()
    };
    let evd = g
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition did not converge: {e:?}")))?;
    let (lambda, vecs) = (evd.S().column_vector(), evd.U());
    // Eigenvalues come in ascending order.
    let top = lambda[r - 1].max(0.0);
    let floor = top * rows.max(cols) as f64 * f64::EPSILON;
    let mut sigma = Vec::with_capacity(r);
    for j in (0..r).rev() {
        let l = lambda[j];
        sigma.push(if l > floor { l.sqrt() } else { 0.0 });
    }
    let rank = sigma.iter().filter(|&&x| x > 0.0).count();
    let mut vt = vec![0.0; r * cols];
    if tall {
        for jj in 0..r {
            let j = r - 1 - jj;
            for l in 0..cols {
                vt[jj * cols + l] = vecs[(l, j)];
            }
        }
    } else {
        // Right vectors from left ones: v_j = A^T u_j / sigma_j. Past the rank
        // they are never used and stay zero.
        let u = Mat::<f64>::from_fn(rows, rank, |i, jj| vecs[(i, r - 1 - jj)]);
        let v = a.transpose() * &u;
        for jj in 0..rank {
            let norm = (0..cols)
                .map(|l| v[(l, jj)] * v[(l, jj)])
                .sum::<f64>()
                .sqrt();
            for l in 0..cols {
                vt[jj * cols + l] = v[(l, jj)] / norm;
            }
        }
    }
    Ok((sigma, vt, rank))
}

/// Rank-`cp` reconstruction of the batch; `cp` larger than the rank keeps all
/// of it. Labels and metadata are carried over.
pub fn reconstruct_with_cutting_point(m: &TraceMatrix, cp: CuttingPoint) -> Result<TraceMatrix> {
    let svd = svd_decompose(m)?;
    m.with_data(svd.reconstruct(cp))
}

pub fn denoise_batch(m: &TraceMatrix, cp: CuttingPoint) -> Result<TraceMatrix> {
    reconstruct_with_cutting_point(m, cp)
}

/// Knee of the singular spectrum: the index `i` maximising
/// `sigma[i-1] / sigma[i]`. Drops past the numerical rank are ignored.
pub fn traditional_cutting_point(sigma: &[f64]) -> CuttingPoint {
    let floor = sigma.first().copied().unwrap_or(0.0) * 1e-12;
    let mut best = (1usize, f64::NEG_INFINITY);
    for i in 1..sigma.len() {
        if sigma[i] <= floor {
            break;
        }
        let ratio = sigma[i - 1] / sigma[i];
        if ratio > best.1 {
            best = (i, ratio);
        }
    }
    CuttingPoint(best.0)
}

pub const FORMULA_SCALE: f64 = 9.7915;
pub const FORMULA_RATE: f64 = 0.0916;
pub const FORMULA_RANGE_DB: (f64, f64) = (-10.0, 10.0);

/// `9.7915 * exp(0.0916 * snr)` before rounding.
pub fn formula_value(snr_db: f64) -> f64 {
    FORMULA_SCALE * (FORMULA_RATE * snr_db).exp()
}

/// Cutting point from the exponential fit of best cutting point against SNR,
/// rounded half up and clamped to at least 1.
pub fn formula_cutting_point(snr_db: f64) -> Result<CuttingPoint> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "snr_db must be finite, got {snr_db}"
        )));
    }
    let v = (formula_value(snr_db) + 0.5).floor();
    Ok(CuttingPoint(if v < 1.0 { 1 } else { v as usize }))
}

/// True when `snr_db` lies outside the range the fit was made on.
pub fn formula_extrapolates(snr_db: f64) -> bool {
    snr_db < FORMULA_RANGE_DB.0 || snr_db > FORMULA_RANGE_DB.1
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceResult {
    pub best: CuttingPoint,
    pub best_auc: f64,
    /// `(cp, auc)` for every candidate, in ascending `cp`.
    pub curve: Vec<(usize, f64)>,
}

/// Searches `candidates` for the cutting point whose AUC on `validation` is
/// highest. The same cutting point denoises training and validation batches.
/// Ties go to the smaller cutting point.
pub fn brute_force_cutting_point(
    train: &TraceMatrix,
    validation: &TraceMatrix,
    k: usize,
    candidates: &[usize],
) -> Result<BruteForceResult> {
    let pos = validation.count(Label::Anomalous);
    if pos == 0 || pos == validation.rows() {
        return Err(Error::Evaluation(
            "validation cohort must contain both benign and anomalous traces".into(),
        ));
    }
    let mut cands: Vec<usize> = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    if cands.is_empty() || cands[0] == 0 {
        return Err(Error::InvalidParameter(
            "candidates must be non-empty and >= 1".into(),
        ));
    }
    let train_svd = svd_decompose(train)?;
    let val_svd = svd_decompose(validation)?;
    let labels: Vec<bool> = validation
        .labels()
        .iter()
        .map(|l| l.is_anomalous())
        .collect();

    let mut curve = Vec::with_capacity(cands.len());
    let mut best: Option<(usize, f64)> = None;
    for &c in &cands {
        let cp = CuttingPoint(c);
        let model = crate::detector::fingerprint_with_svd(train, &train_svd, cp, k)?;
        let cohort = validation.with_data(val_svd.reconstruct(cp))?;
        let scores: Vec<f64> = crate::detector::transduce_denoised(&model, &cohort)?
            .iter()
            .map(|d| d.strangeness)
            .collect();
        let auc = crate::eval::roc_auc(&scores, &labels)?;
        curve.push((c, auc));
        if best.is_none_or(|(_, b)| auc > b) {
            best = Some((c, auc));
        }
    }
    let (c, auc) = best.expect("non-empty candidates");
    Ok(BruteForceResult {
        best: CuttingPoint(c),
        best_auc: auc,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: Vec<Vec<f64>>) -> TraceMatrix {
        let n = rows.len();
        TraceMatrix::from_rows(rows, vec![Label::Benign; n]).unwrap()
    }

    /// Low-rank signal plus small deterministic "noise".
    fn structured(rows: usize, cols: usize, rank: usize, noise: f64) -> Mat<f64> {
        Mat::from_fn(rows, cols, |i, j| {
            let mut x = 0.0;
            for r in 0..rank {
                let w = (r + 1) as f64;
                x += (w * 0.37 * i as f64).sin() * (w * 0.11 * j as f64 + w).cos() * 10.0 / w;
            }
            x + noise * ((i * 7919 + j * 104_729) % 1000) as f64 / 1000.0
        })
    }

    fn projector(vt: &[f64], cols: usize, k: usize) -> Vec<f64> {
        let mut p = vec![0.0; cols * cols];
        for j in 0..k {
            let v = &vt[j * cols..(j + 1) * cols];
            for a in 0..cols {
                for b in 0..cols {
                    p[a * cols + b] += v[a] * v[b];
                }
            }
        }
        p
    }

    #[test]
    fn gram_path_matches_thin_svd() {
        for (rows, cols, rank, noise) in
            [(300, 260, 4, 0.5), (260, 300, 4, 0.5), (300, 280, 3, 0.0)]
        {
            let a = structured(rows, cols, rank, noise);
            let (s1, v1, r1) = thin_svd(&a).unwrap();
            let (s2, v2, r2) = gram_svd(&a).unwrap();
            let k = rank;
            for j in 0..k {
                assert!(
                    (s1[j] - s2[j]).abs() <= 1e-9 * s1[0],
                    "sigma {j}: {} vs {}",
                    s1[j],
                    s2[j]
                );
            }
            // Singular vectors are defined up to sign; compare the subspaces.
            let (p1, p2) = (projector(&v1, cols, k), projector(&v2, cols, k));
            let diff = p1
                .iter()
                .zip(&p2)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-7, "subspace differs by {diff}");
            if noise == 0.0 {
                assert_eq!(r1, rank);
                assert_eq!(r2, rank);
                assert!(s2[rank..].iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn identical_rows_are_rank_one() {
        let m = mat(vec![vec![1.0, 2.0, 3.0, 4.0]; 3]);
        let svd = svd_decompose(&m).unwrap();
        assert_eq!(svd.rank(), 1);
        let rec = svd.reconstruct(CuttingPoint::new(1).unwrap());
        for (a, b) in rec.iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        let m = mat(vec![
            vec![1.0, 0.5, -2.0],
            vec![0.0, 3.0, 1.0],
            vec![4.0, -1.0, 0.25],
            vec![2.0, 2.0, 2.0],
        ]);
        let svd = svd_decompose(&m).unwrap();
        let rec = svd.reconstruct(CuttingPoint::new(10).unwrap());
        for (a, b) in rec.iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sorted_descending() {
        let m = mat(vec![vec![0.0, 5.0], vec![1.0, 0.0], vec![0.0, 0.0]]);
        let s = svd_decompose(&m).unwrap().singular_values().to_vec();
        assert!((s[0] - 5.0).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            svd_decompose(&mat(vec![vec![1.0, 2.0]])),
            Err(Error::InvalidInput(_))
        ));
        let m = mat(vec![vec![1.0, f64::NAN], vec![0.0, 1.0]]);
        assert!(matches!(svd_decompose(&m), Err(Error::Numerical(_))));
        assert!(CuttingPoint::new(0).is_err());
    }

    #[test]
    fn knee_examples() {
        assert_eq!(traditional_cutting_point(&[100.0, 10.0, 9.0, 8.0]).get(), 1);
        assert_eq!(
            traditional_cutting_point(&[100.0, 90.0, 80.0, 5.0, 4.0]).get(),
            3
        );
        assert_eq!(traditional_cutting_point(&[3.0]).get(), 1);
        assert_eq!(traditional_cutting_point(&[5.0, 4.0, 0.0]).get(), 1);
    }

    #[test]
    fn formula_points() {
        assert_eq!(formula_cutting_point(0.0).unwrap().get(), 10);
        assert_eq!(formula_cutting_point(5.0).unwrap().get(), 15);
        assert_eq!(formula_cutting_point(-5.0).unwrap().get(), 6);
        assert_eq!(formula_cutting_point(-10.0).unwrap().get(), 4);
        assert_eq!(formula_cutting_point(-100.0).unwrap().get(), 1);
        assert!(formula_extrapolates(20.0));
        assert!(!formula_extrapolates(10.0));
        assert!(formula_cutting_point(f64::INFINITY).is_err());
    }

    #[test]
    fn embedding_recovers_residual() {
        let m = mat(vec![
            vec![1.0, 0.0, 0.0],
            vec![2.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ]);
        let p = svd_decompose(&m)
            .unwrap()
            .projection(CuttingPoint::new(1).unwrap());
        let (c, r) = p.embed(&[0.0, 0.0, 2.0]).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c[0].abs() < 1e-12 && (r - 2.0).abs() < 1e-12);
    }
}
