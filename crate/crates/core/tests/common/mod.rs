#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight transcription of the LOF definition. O(n^2 d), no shortcuts.
pub struct NaiveLof {
    pub points: Vec<Vec<f64>>,
    pub k: usize,
    pub kdist: Vec<f64>,
    pub lrd: Vec<f64>,
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

fn kth(mut d: Vec<f64>, k: usize) -> f64 {
    d.sort_by(f64::total_cmp);
    d[k - 1]
}

fn lrd_of(neigh: &[(usize, f64)], kdist: &[f64]) -> f64 {
    let s: f64 = neigh.iter().map(|&(o, d)| kdist[o].max(d)).sum();
    if s == 0.0 {
        f64::INFINITY
    } else {
        neigh.len() as f64 / s
    }
}

fn lof_of(own: f64, neigh: &[(usize, f64)], lrd: &[f64]) -> f64 {
    if own.is_infinite() {
        return 1.0;
    }
    neigh.iter().map(|&(o, _)| lrd[o]).sum::<f64>() / neigh.len() as f64 / own
}

impl NaiveLof {
    pub fn new(points: Vec<Vec<f64>>, k: usize) -> Self {
        let n = points.len();
        let others = |i: usize| -> Vec<(usize, f64)> {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, dist(&points[i], &points[j])))
                .collect()
        };
        let kdist: Vec<f64> = (0..n)
            .map(|i| kth(others(i).iter().map(|p| p.1).collect(), k))
            .collect();
        let lrd = (0..n)
            .map(|i| {
                let nb: Vec<(usize, f64)> =
                    others(i).into_iter().filter(|p| p.1 <= kdist[i]).collect();
                lrd_of(&nb, &kdist)
            })
            .collect();
        NaiveLof {
            points,
            k,
            kdist,
            lrd,
        }
    }

    pub fn scores(&self) -> Vec<f64> {
        (0..self.points.len())
            .map(|i| {
                let nb: Vec<(usize, f64)> = (0..self.points.len())
                    .filter(|&j| j != i)
                    .map(|j| (j, dist(&self.points[i], &self.points[j])))
                    .filter(|p| p.1 <= self.kdist[i])
                    .collect();
                lof_of(self.lrd[i], &nb, &self.lrd)
            })
            .collect()
    }

    pub fn query(&self, q: &[f64]) -> f64 {
        let all: Vec<(usize, f64)> = self
            .points
            .iter()
            .enumerate()
            .map(|(j, p)| (j, dist(q, p)))
            .collect();
        let kd = kth(all.iter().map(|p| p.1).collect(), self.k);
        let nb: Vec<(usize, f64)> = all.into_iter().filter(|p| p.1 <= kd).collect();
        lof_of(lrd_of(&nb, &self.kdist), &nb, &self.lrd)
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random point set; every fourth instance sits on a small integer grid so
/// that distance ties and duplicates occur.
pub fn random_points(r: &mut ChaCha8Rng, n: usize, d: usize, gridded: bool) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    if gridded {
                        r.random_range(0..3) as f64
                    } else {
                        r.random_range(-5.0..5.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// Relative closeness suited to LOF values near 1.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub fn pairwise_auc(scores: &[f64], anomalous: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        if !anomalous[i] {
            continue;
        }
        for j in 0..scores.len() {
            if anomalous[j] {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / den
}
