//! Exact k-nearest-neighbour search.
//!
//! Results are always sorted by `(distance, index)` so that equidistant
//! candidates resolve to the lower index. The kd-tree and the brute-force
//! routine return identical neighbour lists.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Node count above which graph construction switches to the kd-tree.
pub const KD_TREE_THRESHOLD: usize = 2000;

/// A candidate neighbour: distance and point index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbour {
    pub distance: f64,
    pub index: usize,
}

impl Neighbour {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.index.cmp(&other.index))
    }
}

impl Eq for Neighbour {}

impl PartialOrd for Neighbour {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbour {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

/// Brute-force k nearest candidates among `candidates`, by a caller-supplied distance.
pub fn brute_force<I, D>(candidates: I, k: usize, mut distance: D) -> Vec<Neighbour>
where
    I: IntoIterator<Item = usize>,
    D: FnMut(usize) -> f64,
{
    let mut all: Vec<Neighbour> = candidates
        .into_iter()
        .map(|index| Neighbour {
            distance: distance(index),
            index,
        })
        .collect();
    all.sort_unstable_by(Neighbour::key_cmp);
    all.truncate(k);
    all
}

#[derive(Debug)]
struct KdNode {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Static balanced kd-tree over points in Euclidean space.
#[derive(Debug)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    nodes: Vec<KdNode>,
    root: Option<usize>,
}

impl KdTree {
    /// Builds the tree from a flat row-major coordinate buffer.
    pub fn new(coords: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0 && coords.len() % dim == 0);
        let n = coords.len() / dim;
        let mut tree = KdTree {
            dim,
            coords,
            nodes: Vec::with_capacity(n),
            root: None,
        };
        let mut idx: Vec<usize> = (0..n).collect();
        tree.root = tree.build(&mut idx, 0);
        tree
    }

    fn coord(&self, point: usize, axis: usize) -> f64 {
        self.coords[point * self.dim + axis]
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % self.dim;
        let mid = idx.len() / 2;
        {
            let coords = &self.coords;
            let dim = self.dim;
            idx.select_nth_unstable_by(mid, |&a, &b| {
                coords[a * dim + axis]
                    .total_cmp(&coords[b * dim + axis])
                    .then(a.cmp(&b))
            });
        }
        let point = idx[mid];
        let (lo, rest) = idx.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = self.build(lo, depth + 1);
        let right = self.build(hi, depth + 1);
        self.nodes.push(KdNode {
            point,
            axis,
            left,
            right,
        });
        Some(self.nodes.len() - 1)
    }

    fn sq_dist(&self, point: usize, query: &[f64]) -> f64 {
        let p = &self.coords[point * self.dim..(point + 1) * self.dim];
        p.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// k nearest points to `query` accepted by `filter`, sorted by
    /// `(euclidean distance, index)`.
    pub fn nearest<F>(&self, query: &[f64], k: usize, filter: F) -> Vec<Neighbour>
    where
        F: Fn(usize) -> bool,
    {
        assert_eq!(query.len(), self.dim);
        if k == 0 {
            return Vec::new();
        }
        // max-heap of current best, keyed on squared distance
        let mut heap: BinaryHeap<Neighbour> = BinaryHeap::with_capacity(k + 1);
        if let Some(root) = self.root {
            self.search(root, query, k, &filter, &mut heap);
        }
        let mut out: Vec<Neighbour> = heap
            .into_iter()
            .map(|n| Neighbour {
                distance: n.distance.sqrt(),
                index: n.index,
            })
            .collect();
        out.sort_unstable_by(Neighbour::key_cmp);
        out
    }

    fn search<F>(
        &self,
        node: usize,
        query: &[f64],
        k: usize,
        filter: &F,
        heap: &mut BinaryHeap<Neighbour>,
    ) where
        F: Fn(usize) -> bool,
    {
        let n = &self.nodes[node];
        if filter(n.point) {
            let cand = Neighbour {
                distance: self.sq_dist(n.point, query),
                index: n.point,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("heap is full") {
                heap.pop();
                heap.push(cand);
            }
        }
        let diff = query[n.axis] - self.coord(n.point, n.axis);
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if let Some(c) = near {
            self.search(c, query, k, filter, heap);
        }
        if let Some(c) = far {
            // Equal bounds are still searched so that lower-index ties are found.
            let bound = diff * diff;
            if heap.len() < k || bound <= heap.peek().expect("heap is full").distance {
                self.search(c, query, k, filter, heap);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn euclid(coords: &[f64], dim: usize, a: usize, q: &[f64]) -> f64 {
        coords[a * dim..(a + 1) * dim]
            .iter()
            .zip(q)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn kd_tree_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in 1..=3 {
            let n = 300;
            // coarse lattice values create plenty of exact ties
            let coords: Vec<f64> = (0..n * dim)
                .map(|_| f64::from(rng.random_range(0..12)) * 0.25)
                .collect();
            let tree = KdTree::new(coords.clone(), dim);
            for q in 0..40 {
                let query: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..3.0)).collect();
                let limit = 5 + q * 7;
                let k = 1 + q % 9;
                let got = tree.nearest(&query, k, |i| i < limit);
                let want = brute_force(0..limit.min(n), k, |i| euclid(&coords, dim, i, &query));
                let gi: Vec<usize> = got.iter().map(|n| n.index).collect();
                let wi: Vec<usize> = want.iter().map(|n| n.index).collect();
                assert_eq!(gi, wi, "dim {dim} query {q}");
            }
        }
    }

    #[test]
    fn brute_force_breaks_ties_by_index() {
        let d = [1.0, 0.5, 1.0, 0.5];
        let got = brute_force(0..4, 3, |i| d[i]);
        let idx: Vec<usize> = got.iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![1, 3, 0]);
    }
}
