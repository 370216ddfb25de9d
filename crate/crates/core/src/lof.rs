//! Local Outlier Factor.
//!
//! Neighborhoods are k-distance neighborhoods, so every point at exactly the
//! k-distance is included. Baseline scores are leave-one-out: a point is never
//! its own neighbor.
//!
//! Duplicated points give a zero reachability sum and an infinite local
//! reachability density. The LOF of such a point is 1. A point with finite
//! density that has an infinitely dense neighbor gets `+inf`.

mod kdtree;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use kdtree::KdTree;

#[derive(Debug, Clone)]
pub struct NeighborIndex {
    n: usize,
    dim: usize,
    k: usize,
    points: Vec<f64>,
    kdist: Vec<f64>,
    lrd: Vec<f64>,
    scores: Vec<f64>,
    /// Distances at or below this are treated as exact duplicates.
    tol: f64,
    tree: Option<KdTree>,
}

/// Relative size, against the largest point norm, below which two points
/// count as the same point. Absorbs round-off from upstream linear algebra.
pub const DUPLICATE_TOLERANCE: f64 = 1e-12;

/// Up to this dimension neighbours come from a k-d tree.
const KD_MAX_DIM: usize = 8;
/// Largest set whose full table of squared distances is kept (about 1.2 GB).
const FULL_TABLE_MAX: usize = 12_288;
/// From this dimension on, squared distances are screened through a blocked
/// single-precision Gram product and only candidate neighbours are evaluated
/// exactly.
const GRAM_MIN_DIM: usize = 65;
const GRAM_BLOCK: usize = 1024;

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for t in 0..4 {
            let d = x[t] - y[t];
            acc[t] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = x - y;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn snap(d: f64, tol: f64) -> f64 {
    if d <= tol {
        0.0
    } else {
        d
    }
}

fn to_mat32(points: &[f64], rows: usize, dim: usize) -> Mat<f32> {
    Mat::from_fn(rows, dim, |i, j| points[i * dim + j] as f32)
}

fn sq_norms(points: &[f64], dim: usize) -> Vec<f64> {
    points
        .chunks(dim)
        .map(|r| r.iter().map(|x| x * x).sum())
        .collect()
}

/// Inner products of every row of `base` with rows `start..start + len` of
/// `x`. Column `a` of the result holds row `start + a` against all of `base`.
fn gram_block(base: MatRef<'_, f32>, x: &Mat<f32>, start: usize, len: usize) -> Mat<f32> {
    let bt = x.subrows(start, len).transpose().to_owned();
    base * bt
}

fn column(g: &Mat<f32>, a: usize) -> &[f32] {
    g.col(a)
        .try_as_col_major()
        .expect("owned matrix is column-major")
        .as_slice()
}

/// Error bound for keys `|a|^2 + |b|^2 - 2 a.b` whose inner product was
/// rounded to single precision: `rel |a| |b| + abs (|a|^2 + |b|^2)`.
#[derive(Debug, Clone, Copy)]
struct Slack {
    rel: f64,
    abs: f64,
}

impl Slack {
    const EXACT: Slack = Slack { rel: 0.0, abs: 0.0 };

    /// Twice the worst-case bound for a `dim`-term single-precision dot
    /// product of rounded inputs, applied to `2 a.b`.
    fn single(dim: usize) -> Slack {
        Slack {
            rel: 4.0 * (dim as f64 + 4.0) * f32::EPSILON as f64,
            abs: 8.0 * f64::EPSILON,
        }
    }
}

/// Norms of one side of a distance computation.
struct Norms {
    sq: Vec<f64>,
    root: Vec<f64>,
}

impl Norms {
    fn new(points: &[f64], dim: usize) -> Norms {
        let sq = sq_norms(points, dim);
        let root = sq.iter().map(|v| v.sqrt()).collect();
        Norms { sq, root }
    }
}

/// Keys from `a` to every point of `b` (`b` rows of `b_norms`): squared
/// distances up to the slack.
fn gram_keys(g: &[f32], a_sq: f64, b_sq: &[f64], out: &mut [f64]) {
    for ((o, &gj), &nj) in out.iter_mut().zip(g).zip(b_sq) {
        *o = a_sq + nj - 2.0 * gj as f64;
    }
}

/// Symmetric table of keys with an infinite diagonal, filled from the upper
/// triangle of blocked Gram products.
fn gram_table(points: &[f64], norms: &Norms, n: usize, dim: usize) -> Vec<f64> {
    let x = to_mat32(points, n, dim);
    let mut t = vec![0.0; n * n];
    for start in (0..n).step_by(GRAM_BLOCK) {
        let len = GRAM_BLOCK.min(n - start);
        let g = gram_block(x.subrows(start, n - start), &x, start, len);
        for a in 0..len {
            let i = start + a;
            let gi = &column(&g, a)[a + 1..];
            gram_keys(
                gi,
                norms.sq[i],
                &norms.sq[i + 1..],
                &mut t[i * n + i + 1..(i + 1) * n],
            );
            t[i * n + i] = f64::INFINITY;
        }
    }
    mirror_upper(&mut t, n);
    t
}

/// Copies the strict upper triangle onto the lower one, tile by tile.
fn mirror_upper(t: &mut [f64], n: usize) {
    const TILE: usize = 64;
    for bi in (0..n).step_by(TILE) {
        for bj in (bi..n).step_by(TILE) {
            for i in bi..(bi + TILE).min(n) {
                for j in bj.max(i + 1)..(bj + TILE).min(n) {
                    t[j * n + i] = t[i * n + j];
                }
            }
        }
    }
}

/// Keys from one point to every other, served row by row. The entry for the
/// point itself is `+inf` so it never enters its own neighborhood.
enum RowKeys {
    /// The whole symmetric matrix.
    Table { n: usize, t: Vec<f64> },
    /// Wide points: one block of rows at a time through the Gram product.
    Blocked {
        x: Mat<f32>,
        g: Mat<f32>,
        start: usize,
        len: usize,
        buf: Vec<f64>,
    },
    /// Narrow points: exact squared distances.
    Direct { dim: usize, buf: Vec<f64> },
}

impl RowKeys {
    fn new(points: &[f64], norms: &Norms, n: usize, dim: usize, table_max: usize) -> (Self, Slack) {
        let wide = dim >= GRAM_MIN_DIM;
        let slack = if wide {
            Slack::single(dim)
        } else {
            Slack::EXACT
        };
        if n <= table_max {
            if wide {
                return (
                    RowKeys::Table {
                        n,
                        t: gram_table(points, norms, n, dim),
                    },
                    slack,
                );
            }
            let row = |i: usize| &points[i * dim..(i + 1) * dim];
            let mut t = vec![0.0; n * n];
            for i in 0..n {
                t[i * n + i] = f64::INFINITY;
                for j in i + 1..n {
                    t[i * n + j] = sq_dist(row(i), row(j));
                }
            }
            mirror_upper(&mut t, n);
            return (RowKeys::Table { n, t }, slack);
        }
        let keys = if wide {
            RowKeys::Blocked {
                x: to_mat32(points, n, dim),
                g: Mat::new(),
                start: 0,
                len: 0,
                buf: vec![0.0; n],
            }
        } else {
            RowKeys::Direct {
                dim,
                buf: vec![0.0; n],
            }
        };
        (keys, slack)
    }

    fn row(&mut self, i: usize, points: &[f64], norms: &Norms) -> &[f64] {
        match self {
            RowKeys::Table { n, t } => &t[i * *n..(i + 1) * *n],
            RowKeys::Blocked {
                x,
                g,
                start,
                len,
                buf,
            } => {
                let n = x.nrows();
                if i < *start || i >= *start + *len {
                    *start = i - i % GRAM_BLOCK;
                    *len = GRAM_BLOCK.min(n - *start);
                    *g = gram_block(x.as_ref(), x, *start, *len);
                }
                gram_keys(column(g, i - *start), norms.sq[i], &norms.sq, buf);
                buf[i] = f64::INFINITY;
                buf
            }
            RowKeys::Direct { dim, buf } => {
                let d = *dim;
                let a = &points[i * d..(i + 1) * d];
                for (o, p) in buf.iter_mut().zip(points.chunks(d)) {
                    *o = sq_dist(a, p);
                }
                buf[i] = f64::INFINITY;
                buf
            }
        }
    }
}

/// One side of a neighbour search: `keys[j]` approximates the squared
/// distance from the point to candidate `j` within the slack, `+inf` excludes
/// `j`, and `exact(j)` evaluates the squared distance itself.
struct Search<'a, F> {
    keys: &'a [f64],
    slack: Slack,
    sq: f64,
    root: f64,
    norms: &'a Norms,
    exact: F,
    tol: f64,
}

/// k-distance and k-distance neighborhood. Every candidate whose key could
/// reach the k-th smallest upper bound is evaluated exactly, so the result
/// matches a search over exact distances.
fn neighborhood<F: Fn(usize) -> f64>(
    s: &Search<'_, F>,
    k: usize,
    scratch: &mut Vec<f64>,
) -> (f64, Vec<(usize, f64)>) {
    let margin =
        |j: usize| s.slack.rel * s.root * s.norms.root[j] + s.slack.abs * (s.sq + s.norms.sq[j]);

    // Sorted k smallest upper bounds; most keys fail the first comparison.
    scratch.clear();
    for (j, &key) in s.keys.iter().enumerate() {
        let ub = key + margin(j);
        if scratch.len() == k {
            if ub >= scratch[k - 1] {
                continue;
            }
            scratch.pop();
        }
        let at = scratch.partition_point(|&v| v <= ub);
        scratch.insert(at, ub);
    }
    let bound = scratch[k - 1];

    let cand: Vec<(usize, f64)> = s
        .keys
        .iter()
        .enumerate()
        .filter(|&(j, &key)| key - margin(j) <= bound)
        .map(|(j, _)| (j, snap((s.exact)(j).sqrt(), s.tol)))
        .collect();
    scratch.clear();
    scratch.extend(cand.iter().map(|c| c.1));
    let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
    let kd = *kth;
    (kd, cand.into_iter().filter(|&(_, d)| d <= kd).collect())
}

#[derive(Default)]
struct TreeScratch {
    best: Vec<f64>,
    found: Vec<(usize, f64)>,
}

/// [`neighborhood`] through the tree, for a point at `q` other than `skip`.
fn tree_neighborhood(
    tree: &KdTree,
    points: &[f64],
    q: &[f64],
    k: usize,
    skip: Option<usize>,
    tol: f64,
    scratch: &mut TreeScratch,
) -> (f64, Vec<(usize, f64)>) {
    let kd = snap(
        tree.kth_sq(points, q, k, skip, &mut scratch.best).sqrt(),
        tol,
    );
    let r = if kd == 0.0 { tol } else { kd };
    // A slightly wider ball, then the exact test on rounded distances.
    tree.within(points, q, r * r * (1.0 + 1e-12), skip, &mut scratch.found);
    let nb = scratch
        .found
        .iter()
        .map(|&(j, d2)| (j, snap(d2.sqrt(), tol)))
        .filter(|&(_, d)| d <= kd)
        .collect();
    (kd, nb)
}

fn density(nb: &[(usize, f64)], kdist: &[f64]) -> f64 {
    let sum: f64 = nb.iter().map(|&(o, d)| kdist[o].max(d)).sum();
    if sum == 0.0 {
        f64::INFINITY
    } else {
        nb.len() as f64 / sum
    }
}

fn factor(own: f64, nb: &[(usize, f64)], lrd: &[f64]) -> f64 {
    if own.is_infinite() {
        return 1.0;
    }
    let mean = nb.iter().map(|&(o, _)| lrd[o]).sum::<f64>() / nb.len() as f64;
    mean / own
}

impl NeighborIndex {
    /// Builds the index over `points` (row-major, `dim` columns) and computes
    /// the leave-one-out LOF of every point.
    pub fn new(points: Vec<f64>, dim: usize, k: usize) -> Result<Self> {
        Self::build(points, dim, k, FULL_TABLE_MAX)
    }

    fn build(points: Vec<f64>, dim: usize, k: usize, table_max: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput(
                "points must have at least one dimension".into(),
            ));
        }
        if !points.len().is_multiple_of(dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: points.len() % dim,
            });
        }
        let n = points.len() / dim;
        if k == 0 || k >= n {
            return Err(Error::InvalidK { k, points: n });
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "points contain non-finite values".into(),
            ));
        }

        let norms = Norms::new(&points, dim);
        let scale = norms.root.iter().copied().fold(0.0, f64::max);
        let tol = scale * DUPLICATE_TOLERANCE;
        let mut kdist = vec![0.0; n];
        let mut hoods = Vec::with_capacity(n);
        let mut scratch = Vec::with_capacity(n);
        let tree = (dim <= KD_MAX_DIM).then(|| KdTree::new(&points, dim));
        if let Some(tree) = &tree {
            let mut ts = TreeScratch::default();
            for i in 0..n {
                let p = &points[i * dim..(i + 1) * dim];
                let (kd, nb) = tree_neighborhood(tree, &points, p, k, Some(i), tol, &mut ts);
                kdist[i] = kd;
                hoods.push(nb);
            }
        } else {
            let (mut source, slack) = RowKeys::new(&points, &norms, n, dim, table_max);
            for i in 0..n {
                let keys = source.row(i, &points, &norms);
                let p = &points[i * dim..(i + 1) * dim];
                let search = Search {
                    keys,
                    slack,
                    sq: norms.sq[i],
                    root: norms.root[i],
                    norms: &norms,
                    exact: |j: usize| {
                        if slack.rel == 0.0 {
                            keys[j]
                        } else {
                            sq_dist(p, &points[j * dim..(j + 1) * dim])
                        }
                    },
                    tol,
                };
                let (kd, nb) = neighborhood(&search, k, &mut scratch);
                kdist[i] = kd;
                hoods.push(nb);
            }
        }
        let lrd: Vec<f64> = hoods.iter().map(|nb| density(nb, &kdist)).collect();
        let scores = hoods
            .iter()
            .zip(&lrd)
            .map(|(nb, &own)| factor(own, nb, &lrd))
            .collect();
        Ok(NeighborIndex {
            n,
            dim,
            k,
            points,
            kdist,
            lrd,
            scores,
            tol,
            tree,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], k: usize) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: bad.len(),
            });
        }
        NeighborIndex::new(rows.concat(), dim, k)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Leave-one-out LOF of every indexed point.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn k_distances(&self) -> &[f64] {
        &self.kdist
    }

    pub fn densities(&self) -> &[f64] {
        &self.lrd
    }

    /// LOF of a new point against the indexed points. The index is unchanged.
    pub fn score_query(&self, q: &[f64]) -> Result<f64> {
        if q.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: q.len(),
            });
        }
        if q.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "query contains non-finite values".into(),
            ));
        }
        if let Some(tree) = &self.tree {
            let mut ts = TreeScratch::default();
            let (_, nb) = tree_neighborhood(tree, &self.points, q, self.k, None, self.tol, &mut ts);
            return Ok(self.lof_of(&nb));
        }
        let keys: Vec<f64> = self
            .points
            .chunks(self.dim)
            .map(|p| sq_dist(q, p))
            .collect();
        let norms = Norms {
            sq: vec![0.0; self.n],
            root: vec![0.0; self.n],
        };
        let search = Search {
            keys: &keys,
            slack: Slack::EXACT,
            sq: 0.0,
            root: 0.0,
            norms: &norms,
            exact: |j: usize| keys[j],
            tol: self.tol,
        };
        Ok(self.score_from(&search, &mut Vec::with_capacity(self.n)))
    }

    fn score_from<F: Fn(usize) -> f64>(
        &self,
        search: &Search<'_, F>,
        scratch: &mut Vec<f64>,
    ) -> f64 {
        let (_, nb) = neighborhood(search, self.k, scratch);
        self.lof_of(&nb)
    }

    fn lof_of(&self, nb: &[(usize, f64)]) -> f64 {
        let own = density(nb, &self.kdist);
        factor(own, nb, &self.lrd)
    }

    /// [`score_query`](Self::score_query) for many row-major queries at once.
    pub fn score_queries(&self, queries: &[f64]) -> Result<Vec<f64>> {
        if !queries.len().is_multiple_of(self.dim) {
            return Err(Error::Dimension {
                expected: self.dim,
                got: queries.len() % self.dim,
            });
        }
        if self.dim < GRAM_MIN_DIM {
            return queries
                .chunks(self.dim)
                .map(|q| self.score_query(q))
                .collect();
        }
        if queries.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "query contains non-finite values".into(),
            ));
        }
        let nq = queries.len() / self.dim;
        let base = to_mat32(&self.points, self.n, self.dim);
        let qm = to_mat32(queries, nq, self.dim);
        let base_norms = Norms::new(&self.points, self.dim);
        let q_norms = Norms::new(queries, self.dim);
        let slack = Slack::single(self.dim);
        let mut out = Vec::with_capacity(nq);
        let mut keys = vec![0.0; self.n];
        let mut scratch = Vec::with_capacity(self.n);
        for start in (0..nq).step_by(GRAM_BLOCK) {
            let len = GRAM_BLOCK.min(nq - start);
            let g = gram_block(base.as_ref(), &qm, start, len);
            for a in 0..len {
                let qi = start + a;
                let q = &queries[qi * self.dim..(qi + 1) * self.dim];
                gram_keys(column(&g, a), q_norms.sq[qi], &base_norms.sq, &mut keys);
                let search = Search {
                    keys: &keys,
                    slack,
                    sq: q_norms.sq[qi],
                    root: q_norms.root[qi],
                    norms: &base_norms,
                    exact: |j: usize| sq_dist(q, &self.points[j * self.dim..(j + 1) * self.dim]),
                    tol: self.tol,
                };
                out.push(self.score_from(&search, &mut scratch));
            }
        }
        Ok(out)
    }
}

/// Leave-one-out LOF scores of a point set.
pub fn lof_scores(rows: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    Ok(NeighborIndex::from_rows(rows, k)?.scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streamed_rows_match_table() {
        for dim in [20, 80] {
            let n = GRAM_BLOCK + 37;
            let mut pts: Vec<f64> = (0..n * dim)
                .map(|i| ((i * 2_654_435_761) % 10_007) as f64 / 1000.0)
                .collect();
            // A duplicate pair exercises the snap.
            let (a, b) = pts.split_at_mut(dim);
            b[..dim].copy_from_slice(a);
            let table = NeighborIndex::build(pts.clone(), dim, 4, usize::MAX).unwrap();
            let streamed = NeighborIndex::build(pts, dim, 4, 0).unwrap();
            for (x, y) in table.scores().iter().zip(streamed.scores()) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
            }
        }
    }

    fn grid() -> Vec<Vec<f64>> {
        let mut pts = Vec::new();
        for x in 0..3 {
            for y in 0..3 {
                pts.push(vec![x as f64, y as f64]);
            }
        }
        pts
    }

    #[test]
    fn grid_center_is_one() {
        // Edge points have density 3 / (1 + 2 sqrt 2), the centre density 1.
        let s = lof_scores(&grid(), 3).unwrap();
        let expected = 3.0 / (1.0 + 2.0 * 2f64.sqrt());
        assert!((s[4] - expected).abs() < 1e-12, "{}", s[4]);
    }

    #[test]
    fn far_query_is_outlier() {
        let idx = NeighborIndex::from_rows(&grid(), 3).unwrap();
        assert!(idx.score_query(&[10.0, 10.0]).unwrap() > 2.0);
        assert!(idx.score_query(&[1.0, 1.0]).unwrap() < 1.5);
    }

    #[test]
    fn duplicates_are_one() {
        let rows = vec![vec![0.0, 0.0]; 5];
        let s = lof_scores(&rows, 2).unwrap();
        assert!(s.iter().all(|&v| v == 1.0));
        let idx = NeighborIndex::from_rows(&rows, 2).unwrap();
        assert_eq!(idx.score_query(&[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(idx.score_query(&[1.0, 0.0]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn k_validation() {
        assert!(matches!(
            lof_scores(&grid(), 0),
            Err(Error::InvalidK { .. })
        ));
        assert!(matches!(
            lof_scores(&grid(), 9),
            Err(Error::InvalidK { .. })
        ));
        let idx = NeighborIndex::from_rows(&grid(), 2).unwrap();
        assert!(matches!(
            idx.score_query(&[1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn tie_neighbors_included() {
        // Centre of a plus shape has four neighbours at distance 1.
        let rows = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ];
        let idx = NeighborIndex::from_rows(&rows, 1).unwrap();
        assert_eq!(idx.k_distances()[0], 1.0);
        // Centre density from all four tied neighbours: each reach-dist is
        // max(kdist(o) = 1, 1) = 1.
        assert_eq!(idx.densities()[0], 1.0);
    }

    #[test]
    fn kernel_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.7).collect();
        let b: Vec<f64> = (0..11).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!((sq_dist(&a, &b) - naive).abs() < 1e-12);
    }
}
