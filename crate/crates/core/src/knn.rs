//! Exact k-nearest-neighbor search.
//!
//! Metrics that are Minkowski norms (euclidean, cityblock/manhattan,
//! chebyshev) are served by a kd-tree whose nodes carry tight bounding boxes;
//! canberra and braycurtis fall back to a linear scan. Both strategies rank
//! candidates by `(distance, row id)`, so their answers are identical,
//! including under ties.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::dataset::Points;
use crate::error::{Error, Result};
use crate::metrics::MetricId;

const LEAF_SIZE: usize = 16;
const NO_CHILD: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Tree,
    Linear,
}

/// The `k` nearest rows of a query, closest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl Neighborhood {
    /// Distance to the farthest of the `k` neighbors: the k-vicinity radius.
    pub fn radius(&self) -> f64 {
        self.distances.last().copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Node {
    start: u32,
    end: u32,
    left: u32,
    right: u32,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.left == NO_CHILD
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist: f64,
    id: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.id.cmp(&other.id))
    }
}

/// Bounded max-heap keeping the `k` best candidates seen so far.
struct Best {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl Best {
    fn new(k: usize) -> Self {
        Best {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn worst(&self) -> Option<f64> {
        if self.heap.len() < self.k {
            None
        } else {
            self.heap.peek().map(|c| c.dist)
        }
    }

    #[inline]
    fn offer(&mut self, cand: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(cand);
        } else if let Some(mut top) = self.heap.peek_mut() {
            if cand < *top {
                *top = cand;
            }
        }
    }

    fn into_neighborhood(self) -> Neighborhood {
        let sorted = self.heap.into_sorted_vec();
        Neighborhood {
            indices: sorted.iter().map(|c| c.id as usize).collect(),
            distances: sorted.iter().map(|c| c.dist).collect(),
        }
    }
}

/// Immutable k-NN index over a copy of the training points.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    metric: MetricId,
    strategy: Strategy,
    dim: usize,
    /// Points stored in tree (leaf) order.
    coords: Vec<f64>,
    /// Original row id of each stored slot.
    ids: Vec<u32>,
    nodes: Vec<Node>,
    /// Per node: `dim` lower corners then `dim` upper corners.
    boxes: Vec<f64>,
}

impl KnnIndex {
    /// Builds with the default strategy for `metric`.
    pub fn build(points: &Points, metric: MetricId) -> Result<Self> {
        let strategy = if metric.supports_box_bound() {
            Strategy::Tree
        } else {
            Strategy::Linear
        };
        KnnIndex::with_strategy(points, metric, strategy)
    }

    /// Builds with an explicit strategy. A tree over a metric without box
    /// bounds is still exact, it just never prunes.
    pub fn with_strategy(points: &Points, metric: MetricId, strategy: Strategy) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::EmptyTable);
        }
        if n > u32::MAX as usize - 1 {
            return Err(Error::InvalidParams("too many points for the index".into()));
        }
        let dim = points.dim();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut index = KnnIndex {
            metric,
            strategy,
            dim,
            coords: Vec::new(),
            ids: Vec::new(),
            nodes: Vec::new(),
            boxes: Vec::new(),
        };
        if strategy == Strategy::Tree {
            index.split(points, &mut order, 0);
        }
        index.coords = Vec::with_capacity(n * dim);
        for &id in &order {
            index.coords.extend_from_slice(points.row(id as usize));
        }
        index.ids = order;
        Ok(index)
    }

    /// Recursively partitions `order[offset..offset + order.len()]`, returns
    /// the node id.
    fn split(&mut self, points: &Points, order: &mut [u32], offset: usize) -> u32 {
        let dim = self.dim;
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &id in order.iter() {
            for (j, &v) in points.row(id as usize).iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let node_id = self.nodes.len() as u32;
        self.nodes.push(Node {
            start: offset as u32,
            end: (offset + order.len()) as u32,
            left: NO_CHILD,
            right: NO_CHILD,
        });
        self.boxes.extend_from_slice(&lo);
        self.boxes.extend_from_slice(&hi);

        let (axis, spread) = (0..dim)
            .map(|j| (j, hi[j] - lo[j]))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        if order.len() <= LEAF_SIZE || spread <= 0.0 {
            return node_id;
        }
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            points.row(a as usize)[axis]
                .total_cmp(&points.row(b as usize)[axis])
                .then(a.cmp(&b))
        });
        let (left_part, right_part) = order.split_at_mut(mid);
        let left = self.split(points, left_part, offset);
        let right = self.split(points, right_part, offset + mid);
        let node = &mut self.nodes[node_id as usize];
        node.left = left;
        node.right = right;
        node_id
    }

    pub fn metric(&self) -> MetricId {
        self.metric
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn slot(&self, s: usize) -> &[f64] {
        &self.coords[s * self.dim..(s + 1) * self.dim]
    }

    #[inline]
    fn node_bound(&self, node: usize, q: &[f64]) -> f64 {
        let base = node * 2 * self.dim;
        let lo = &self.boxes[base..base + self.dim];
        let hi = &self.boxes[base + self.dim..base + 2 * self.dim];
        self.metric.box_lower_bound(q, lo, hi)
    }

    /// The `k` rows closest to `q`, ties broken by lower row id. `exclude`
    /// removes one row from consideration (a training tuple's own vicinity).
    pub fn knn(&self, q: &[f64], k: usize, exclude: Option<usize>) -> Result<Neighborhood> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: q.len(),
            });
        }
        if let Some(ex) = exclude {
            if ex >= self.len() {
                return Err(Error::InvalidParams(format!(
                    "excluded row {ex} out of range for {} rows",
                    self.len()
                )));
            }
        }
        let max = self.len() - usize::from(exclude.is_some());
        if k == 0 || k > max {
            return Err(Error::KOutOfRange { k, max });
        }
        let excluded = exclude.map(|e| e as u32).unwrap_or(u32::MAX);
        let mut best = Best::new(k);
        match self.strategy {
            Strategy::Linear => self.scan(0, self.len(), q, excluded, &mut best),
            Strategy::Tree => {
                let root_bound = self.node_bound(0, q);
                self.descend(0, root_bound, q, excluded, &mut best);
            }
        }
        Ok(best.into_neighborhood())
    }

    /// The k-vicinity radius of `q`.
    pub fn kvicinity_radius(&self, q: &[f64], k: usize, exclude: Option<usize>) -> Result<f64> {
        Ok(self.knn(q, k, exclude)?.radius())
    }

    #[inline]
    fn scan(&self, start: usize, end: usize, q: &[f64], excluded: u32, best: &mut Best) {
        for s in start..end {
            let id = self.ids[s];
            if id == excluded {
                continue;
            }
            let dist = self.metric.eval(q, self.slot(s));
            best.offer(Candidate { dist, id });
        }
    }

    fn descend(&self, node: usize, bound: f64, q: &[f64], excluded: u32, best: &mut Best) {
        // Strict comparison: a box at exactly the current worst distance may
        // still hold an equally distant row with a lower id.
        if best.worst().is_some_and(|w| bound > w) {
            return;
        }
        let n = &self.nodes[node];
        if n.is_leaf() {
            self.scan(n.start as usize, n.end as usize, q, excluded, best);
            return;
        }
        let (l, r) = (n.left as usize, n.right as usize);
        let (bl, br) = (self.node_bound(l, q), self.node_bound(r, q));
        if bl <= br {
            self.descend(l, bl, q, excluded, best);
            self.descend(r, br, q, excluded, best);
        } else {
            self.descend(r, br, q, excluded, best);
            self.descend(l, bl, q, excluded, best);
        }
    }
}
