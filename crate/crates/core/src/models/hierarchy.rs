//! Graph coarsening by greedy heavy-edge matching.

use crate::error::{Error, Result};
use crate::graph::Neighbors;
use crate::tensor::Tensor;

/// One coarsening step: fine node `i` belongs to hyper-node `mapping[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub mapping: Vec<usize>,
    pub size: usize,
    /// Hyper-nodes adjacent when any of their children are.
    pub support: Neighbors,
    /// `MᵀAM` with the diagonal zeroed.
    pub adjacency: Tensor,
    /// Degree-weighted mean of the children's features.
    pub features: Tensor,
}

impl Level {
    /// 0/1 assignment matrix (fine × coarse).
    pub fn mapping_matrix(&self) -> Tensor {
        let mut m = Tensor::zeros(self.mapping.len(), self.size);
        for (i, &p) in self.mapping.iter().enumerate() {
            m.set(i, p, 1.0);
        }
        m
    }

    /// Mean pooling (coarse × fine): `diag(1/|children|) Mᵀ`.
    pub fn pooling_matrix(&self) -> Tensor {
        let sizes = self.child_counts();
        let mut p = Tensor::zeros(self.size, self.mapping.len());
        for (i, &c) in self.mapping.iter().enumerate() {
            p.set(c, i, 1.0 / sizes[c] as f64);
        }
        p
    }

    pub fn child_counts(&self) -> Vec<usize> {
        let mut s = vec![0; self.size];
        for &c in &self.mapping {
            s[c] += 1;
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hierarchy {
    base_len: usize,
    levels: Vec<Level>,
}

impl Hierarchy {
    pub fn base_len(&self) -> usize {
        self.base_len
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    #[cfg(test)]
    pub(crate) fn levels_mut(&mut self) -> &mut [Level] {
        &mut self.levels
    }

    /// Node count per level, starting with the input graph.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.base_len)
            .chain(self.levels.iter().map(|l| l.size))
            .collect()
    }
}

/// Pairs every unmatched node (in index order) with its unmatched neighbor
/// of largest weight, ties to the smaller index. Returns the mapping and the
/// coarse node count; hyper-node ids follow their first child.
pub fn heavy_edge_matching(adjacency: &Tensor, support: &Neighbors) -> (Vec<usize>, usize) {
    let n = support.len();
    let mut mapping = vec![usize::MAX; n];
    let mut next = 0;
    for i in 0..n {
        if mapping[i] != usize::MAX {
            continue;
        }
        let mut best: Option<usize> = None;
        for &j in support.of(i) {
            if mapping[j] != usize::MAX {
                continue;
            }
            if best.is_none_or(|b| adjacency.get(i, j) > adjacency.get(i, b)) {
                best = Some(j);
            }
        }
        mapping[i] = next;
        if let Some(j) = best {
            mapping[j] = next;
        }
        next += 1;
    }
    (mapping, next)
}

fn coarsen(adjacency: &Tensor, support: &Neighbors, features: &Tensor) -> Level {
    let (mapping, size) = heavy_edge_matching(adjacency, support);
    let n = mapping.len();
    let mut coarse = Tensor::zeros(size, size);
    let mut lists = vec![Vec::new(); size];
    for i in 0..n {
        for &j in support.of(i) {
            let (a, b) = (mapping[i], mapping[j]);
            if a != b {
                coarse.set(a, b, coarse.get(a, b) + adjacency.get(i, j));
                lists[a].push(b);
            }
        }
    }
    let support = Neighbors::from_lists(lists).expect("coarse ids are in range");

    let mut pooled = Tensor::zeros(size, features.cols());
    let mut weight = vec![0.0; size];
    for i in 0..n {
        let deg = 1.0 + adjacency.row(i).iter().sum::<f64>();
        let c = mapping[i];
        weight[c] += deg;
        for (dst, &src) in pooled.row_mut(c).iter_mut().zip(features.row(i)) {
            *dst += deg * src;
        }
    }
    for (c, w) in weight.iter().enumerate() {
        for v in pooled.row_mut(c) {
            *v /= w;
        }
    }
    Level {
        mapping,
        size,
        support,
        adjacency: coarse,
        features: pooled,
    }
}

/// `levels` rounds of heavy-edge matching on a view's adjacency values.
/// `support` is the structural neighbor relation (view weights may be 0 on
/// real edges after rescaling).
pub fn build_hierarchy(adjacency: &Tensor, support: &Neighbors, features: &Tensor, levels: usize) -> Result<Hierarchy> {
    let n = support.len();
    if levels == 0 {
        return Err(Error::Config("hierarchy needs at least one level".into()));
    }
    if n < 2 {
        return Err(Error::Contract(format!("hierarchy needs at least 2 nodes, got {n}")));
    }
    if adjacency.shape() != (n, n) || features.rows() != n {
        return Err(Error::shape("build_hierarchy", "adjacency/features do not match the support"));
    }
    let mut out = Vec::with_capacity(levels);
    let mut adj = adjacency.clone();
    let mut sup = support.clone();
    let mut x = features.clone();
    for _ in 0..levels {
        let level = coarsen(&adj, &sup, &x);
        adj = level.adjacency.clone();
        sup = level.support.clone();
        x = level.features.clone();
        out.push(level);
    }
    Ok(Hierarchy {
        base_len: n,
        levels: out,
    })
}
