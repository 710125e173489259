//! Superpixel region-adjacency graph with Gaussian edge weights.

use crate::error::{Error, Result};
use crate::superpixel::{NodeLabel, Segmentation};
use crate::tensor::Tensor;

/// Default kernel temperature for edge weights.
pub const DEFAULT_GAMMA: f64 = 0.2;

/// Sorted, symmetric, irreflexive neighbor lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighbors(Vec<Vec<usize>>);

impl Neighbors {
    /// Symmetrizes and deduplicates arbitrary lists, dropping self-loops.
    pub fn from_lists(lists: Vec<Vec<usize>>) -> Result<Self> {
        let n = lists.len();
        let mut out = vec![Vec::new(); n];
        for (i, l) in lists.iter().enumerate() {
            for &j in l {
                if j >= n {
                    return Err(Error::shape("neighbors", format!("node {j} out of range")));
                }
                if i != j {
                    out[i].push(j);
                    out[j].push(i);
                }
            }
        }
        for l in &mut out {
            l.sort_unstable();
            l.dedup();
        }
        Ok(Self(out))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.0[i]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.0[i].binary_search(&j).is_ok()
    }

    /// Unordered edges `(i, j)` with `i < j`, lexicographic.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.0.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// 0/1 indicator of the relation (zero diagonal).
    pub fn mask(&self) -> Tensor {
        let n = self.len();
        let mut m = Tensor::zeros(n, n);
        for (i, l) in self.0.iter().enumerate() {
            for &j in l {
                m.set(i, j, 1.0);
            }
        }
        m
    }
}

/// Superpixels are neighbors iff they share at least one pair of 4-adjacent
/// pixels.
pub fn spatial_neighbors(seg: &Segmentation) -> Neighbors {
    let (h, w) = (seg.height(), seg.width());
    let a = seg.assignment();
    let mut lists = vec![Vec::new(); seg.len()];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w && a[p] != a[p + 1] {
                lists[a[p]].push(a[p + 1]);
            }
            if y + 1 < h && a[p] != a[p + w] {
                lists[a[p]].push(a[p + w]);
            }
        }
    }
    Neighbors::from_lists(lists).expect("ids come from the segmentation")
}

/// `A_ij = exp(-gamma·‖x_i − x_j‖²)` on neighbor pairs, 0 elsewhere.
pub fn adjacency(x: &Tensor, neighbors: &Neighbors, gamma: f64) -> Result<Tensor> {
    if !(gamma > 0.0) {
        return Err(Error::Param(format!("gamma must be > 0, got {gamma}")));
    }
    if x.rows() != neighbors.len() {
        return Err(Error::shape(
            "adjacency",
            format!("{} feature rows for {} nodes", x.rows(), neighbors.len()),
        ));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite { op: "adjacency" });
    }
    let n = x.rows();
    let mut a = Tensor::zeros(n, n);
    for (i, j) in neighbors.edges() {
        let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(p, q)| (p - q) * (p - q)).sum();
        let v = (-gamma * d2).exp();
        a.set(i, j, v);
        a.set(j, i, v);
    }
    Ok(a)
}

/// Node features, neighbor relation, weighted adjacency and labels.
#[derive(Clone, Debug)]
pub struct SuperGraph {
    pub features: Tensor,
    pub neighbors: Neighbors,
    pub adjacency: Tensor,
    pub labels: Vec<NodeLabel>,
}

impl SuperGraph {
    pub fn new(features: Tensor, neighbors: Neighbors, gamma: f64, labels: Vec<NodeLabel>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::shape("super_graph", "one label entry per node required"));
        }
        let adjacency = adjacency(&features, &neighbors, gamma)?;
        Ok(Self {
            features,
            neighbors,
            adjacency,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    /// Indices of nodes carrying a training label, ascending.
    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i].is_labeled()).collect()
    }

    /// Training classes of [`SuperGraph::labeled_nodes`], in the same order.
    pub fn labeled_classes(&self) -> Vec<u16> {
        self.labels.iter().filter_map(|l| l.train).collect()
    }
}
