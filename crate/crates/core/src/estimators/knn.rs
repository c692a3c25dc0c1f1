//! Exact k-nearest-neighbour search: a brute-force reference and a k-d tree.
//!
//! Both paths compute squared distances with the same summation order and rank
//! candidates by `(squared distance, index)`, so they return identical neighbour
//! lists, not merely equal distances.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

const LEAF_SIZE: usize = 16;

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub sq_dist: f64,
}

impl Neighbor {
    pub fn dist(&self) -> f64 {
        self.sq_dist.sqrt()
    }
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sq_dist.total_cmp(&other.sq_dist).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `k` nearest points of `points` (row-major, `dim` columns) to `query`,
/// ascending, skipping index `exclude`.
pub fn brute_force_neighbors(points: &[f64], dim: usize, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = points
        .chunks_exact(dim)
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(index, p)| Neighbor { index, sq_dist: sq_dist(p, query) })
        .collect();
    all.sort_unstable();
    all.truncate(k);
    all
}

#[derive(Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static k-d tree over a borrowed point set.
#[derive(Debug)]
pub struct KdTree<'a> {
    points: &'a [f64],
    dim: usize,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [f64], dim: usize) -> Self {
        assert!(dim > 0 && points.len().is_multiple_of(dim));
        let n = points.len() / dim;
        let mut tree = Self { points, dim, order: (0..n).collect(), nodes: Vec::new() };
        if n > 0 {
            tree.build_node(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn coord(&self, i: usize, axis: usize) -> f64 {
        self.points[i * self.dim + axis]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // Split on the axis of widest spread at the median.
        let axis = (0..self.dim)
            .map(|a| {
                let (lo, hi) = self.order[start..end].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = self.coord(i, a);
                    (lo.min(v), hi.max(v))
                });
                (a, hi - lo)
            })
            .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)))
            .map(|(a, _)| a)
            .unwrap_or(0);
        let mid = start + (end - start) / 2;
        let (points, dim) = (self.points, self.dim);
        self.order[start..end].select_nth_unstable_by(mid - start, |&i, &j| points[i * dim + axis].total_cmp(&points[j * dim + axis]));
        let value = self.coord(self.order[mid], axis);
        self.nodes.push(Node::Leaf { start, end }); // placeholder
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// The `k` nearest points to `query`, ascending by `(distance, index)`,
    /// skipping index `exclude`. Returns fewer than `k` only if the tree is smaller.
    pub fn nearest(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, query, k, exclude, &mut heap);
        }
        heap.into_sorted_vec()
    }

    fn search(&self, node: usize, query: &[f64], k: usize, exclude: Option<usize>, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    if Some(index) == exclude {
                        continue;
                    }
                    let p = &self.points[index * self.dim..(index + 1) * self.dim];
                    let cand = Neighbor { index, sq_dist: sq_dist(p, query) };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, exclude, heap);
                // Points across the plane are at least |diff| away; equal bounds are
                // still visited so index tie-breaks match the brute-force order.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().sq_dist {
                    self.search(far, query, k, exclude, heap);
                }
            }
        }
    }
}

/// k-th neighbour (within the same set, self excluded) of every point.
pub fn self_knn(points: &[f64], dim: usize, k: usize) -> Vec<Vec<Neighbor>> {
    let tree = KdTree::build(points, dim);
    points.par_chunks_exact(dim).enumerate().map(|(i, q)| tree.nearest(q, k, Some(i))).collect()
}

/// Brute-force counterpart of [`self_knn`].
pub fn self_knn_brute(points: &[f64], dim: usize, k: usize) -> Vec<Vec<Neighbor>> {
    points.par_chunks_exact(dim).enumerate().map(|(i, q)| brute_force_neighbors(points, dim, q, k, Some(i))).collect()
}

/// k nearest points of `reference` to every point in `queries`.
pub fn cross_knn(queries: &[f64], reference: &[f64], dim: usize, k: usize) -> Vec<Vec<Neighbor>> {
    let tree = KdTree::build(reference, dim);
    queries.par_chunks_exact(dim).map(|q| tree.nearest(q, k, None)).collect()
}
