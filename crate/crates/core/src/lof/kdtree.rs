//! Exact k-d tree for narrow points.
//!
//! Pruning compares a plane gap against squared distances evaluated by
//! [`sq_dist`]. Rounding is monotone, so a computed gap never exceeds the
//! computed distance of a point beyond the plane and no candidate is lost.

use super::sq_dist;

const LEAF: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub(super) struct KdTree {
    dim: usize,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub(super) fn new(points: &[f64], dim: usize) -> KdTree {
        let n = points.len() / dim;
        let mut tree = KdTree {
            dim,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        tree.split(points, 0, n);
        tree
    }

    fn coord(&self, points: &[f64], i: usize, axis: usize) -> f64 {
        points[i * self.dim + axis]
    }

    /// Builds the subtree over `order[start..end]` and returns its node index.
    fn split(&mut self, points: &[f64], start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF {
            return id;
        }
        let mut axis = 0;
        let mut spread = 0.0;
        for a in 0..self.dim {
            let (lo, hi) = self.order[start..end]
                .iter()
                .map(|&i| self.coord(points, i, a))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            if hi - lo > spread {
                spread = hi - lo;
                axis = a;
            }
        }
        if spread == 0.0 {
            return id;
        }
        let mid = (end - start) / 2;
        let dim = self.dim;
        self.order[start..end].select_nth_unstable_by(mid, |&a, &b| {
            points[a * dim + axis].total_cmp(&points[b * dim + axis])
        });
        let value = self.coord(points, self.order[start + mid], axis);
        let left = self.split(points, start, start + mid);
        let right = self.split(points, start + mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn point<'p>(&self, points: &'p [f64], i: usize) -> &'p [f64] {
        &points[i * self.dim..(i + 1) * self.dim]
    }

    /// k-th smallest squared distance from `q`, skipping point `skip`.
    /// `best` is scratch space.
    pub(super) fn kth_sq(
        &self,
        points: &[f64],
        q: &[f64],
        k: usize,
        skip: Option<usize>,
        best: &mut Vec<f64>,
    ) -> f64 {
        best.clear();
        self.knn(0, points, q, k, skip, best);
        best[k - 1]
    }

    fn knn(
        &self,
        node: usize,
        points: &[f64],
        q: &[f64],
        k: usize,
        skip: Option<usize>,
        best: &mut Vec<f64>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &j in &self.order[start..end] {
                    if Some(j) == skip {
                        continue;
                    }
                    let d2 = sq_dist(q, self.point(points, j));
                    if best.len() == k {
                        if d2 >= best[k - 1] {
                            continue;
                        }
                        best.pop();
                    }
                    let at = best.partition_point(|&v| v <= d2);
                    best.insert(at, d2);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let gap = q[axis] - value;
                let (near, far) = if gap <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn(near, points, q, k, skip, best);
                if best.len() < k || gap * gap <= best[k - 1] {
                    self.knn(far, points, q, k, skip, best);
                }
            }
        }
    }

    /// Every point other than `skip` within squared distance `r2` of `q`.
    pub(super) fn within(
        &self,
        points: &[f64],
        q: &[f64],
        r2: f64,
        skip: Option<usize>,
        out: &mut Vec<(usize, f64)>,
    ) {
        out.clear();
        self.range(0, points, q, r2, skip, out);
    }

    fn range(
        &self,
        node: usize,
        points: &[f64],
        q: &[f64],
        r2: f64,
        skip: Option<usize>,
        out: &mut Vec<(usize, f64)>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &j in &self.order[start..end] {
                    if Some(j) == skip {
                        continue;
                    }
                    let d2 = sq_dist(q, self.point(points, j));
                    if d2 <= r2 {
                        out.push((j, d2));
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let gap = q[axis] - value;
                let (near, far) = if gap <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.range(near, points, q, r2, skip, out);
                if gap * gap <= r2 {
                    self.range(far, points, q, r2, skip, out);
                }
            }
        }
    }
}
