//! Two-view graph augmentation.
//!
//! Spatial level: every sampled neighbor edge is emphasized or weakened by
//! a piecewise function of a learned Mahalanobis distance, then the edge
//! weights are min-max rescaled to [0, 1] over the neighbor entries.
//!
//! Spectral level: adjacent nodes swap feature dimensions, visited in order
//! of decreasing edge weight with every node exchanging at most once.
//! Dimension `h` is swapped with probability `1 - p_h`, where `p_h` is the
//! normalized mutual information between dimension `h` and the class labels,
//! so informative bands move rarely.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::SuperGraph;
use crate::tensor::{Tape, Tensor, Var};

pub use crate::tensor::edge_adjust_value as edge_adjust;

/// Guard inside the square root of the Mahalanobis distance.
pub const DISTANCE_EPS: f64 = 1e-12;
/// Default histogram bin count for the mutual information estimate.
pub const DEFAULT_MI_BINS: usize = 16;
/// Largest projection rank of `W_D`.
pub const MAX_PROJECTION_RANK: usize = 32;

/// `sqrt((x_i − x_j)ᵀ W W ᵀ (x_i − x_j) + eps)`.
pub fn mahalanobis_distance(xi: &[f64], xj: &[f64], w_d: &Tensor) -> Result<f64> {
    if xi.len() != xj.len() || w_d.rows() != xi.len() {
        return Err(Error::shape("mahalanobis_distance", "feature/projection size mismatch"));
    }
    let mut s = 0.0;
    for c in 0..w_d.cols() {
        let proj: f64 = (0..xi.len()).map(|k| (xi[k] - xj[k]) * w_d.get(k, c)).sum();
        s += proj * proj;
    }
    Ok((s + DISTANCE_EPS).sqrt())
}

/// Initial projection: first `min(d, 32)` columns of the identity, scaled
/// by 0.1.
pub fn init_projection(d: usize) -> Tensor {
    let r = d.min(MAX_PROJECTION_RANK);
    let mut w = Tensor::zeros(d, r);
    for k in 0..r {
        w.set(k, k, 0.1);
    }
    w
}

/// Median Mahalanobis distance over the graph's edges; `None` without edges.
pub fn median_edge_distance(graph: &SuperGraph, w_d: &Tensor) -> Result<Option<f64>> {
    let mut d = graph
        .neighbors
        .edges()
        .into_iter()
        .map(|(i, j)| mahalanobis_distance(graph.features.row(i), graph.features.row(j), w_d))
        .collect::<Result<Vec<_>>>()?;
    if d.is_empty() {
        return Ok(None);
    }
    d.sort_by(f64::total_cmp);
    let m = d.len() / 2;
    Ok(Some(if d.len() % 2 == 1 { d[m] } else { 0.5 * (d[m - 1] + d[m]) }))
}

/// Mahalanobis distances between all node pairs, recorded on the tape.
pub fn distance_matrix(tape: &mut Tape, x: Var, w_d: Var) -> Result<Var> {
    let proj = tape.matmul(x, w_d)?;
    let sq = tape.pairwise_sq_dist(proj)?;
    tape.sqrt_eps(sq, DISTANCE_EPS)
}

/// Symmetric Bernoulli mask with unit diagonal; one draw per unordered pair
/// in lexicographic order.
pub fn sample_mask(n: usize, p_sample: f64, seed: u64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&p_sample) {
        return Err(Error::Param(format!("p_sample must be in [0, 1], got {p_sample}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Tensor::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p_sample {
                m.set(i, j, 1.0);
                m.set(j, i, 1.0);
            }
        }
    }
    Ok(m)
}

/// Min-max rescale of the entries selected by `support` (zero elsewhere).
/// A constant selection maps to all ones.
fn rescale_on_support(tape: &mut Tape, a: Var, support: &Tensor) -> Result<Var> {
    if support.data().iter().all(|&v| v == 0.0) {
        return tape.constant(Tensor::zeros(support.rows(), support.cols()));
    }
    let lo = tape.masked_min(a, support)?;
    let hi = tape.masked_max(a, support)?;
    if tape.value(hi).item()? - tape.value(lo).item()? <= 0.0 {
        return tape.constant(support.clone());
    }
    let shifted = tape.sub(a, lo)?;
    let range = tape.sub(hi, lo)?;
    let scaled = tape.div(shifted, range)?;
    let keep = tape.constant(support.clone())?;
    tape.mul(scaled, keep)
}

/// Base adjacency rescaled to [0, 1] over its neighbor entries.
pub fn normalized_base(graph: &SuperGraph) -> Result<Tensor> {
    let mut tape = Tape::new();
    let a = tape.constant(graph.adjacency.clone())?;
    let v = rescale_on_support(&mut tape, a, &graph.neighbors.mask())?;
    Ok(tape.value(v).clone())
}

/// Trainable handles of the spatial augmentation.
#[derive(Clone, Copy, Debug)]
pub struct SpatialVars {
    pub w_d: Var,
    pub log_tau: Var,
}

/// `Ã = A + A' ∘ R̃` on neighbor pairs, rescaled to [0, 1] over the neighbor
/// entries. Gradients reach `W_D` and `log τ` through `A'`; the mask is a
/// constant.
pub fn apply_spatial_aug(tape: &mut Tape, graph: &SuperGraph, vars: SpatialVars, mask: &Tensor) -> Result<Var> {
    let n = graph.len();
    if mask.shape() != (n, n) {
        return Err(Error::shape("apply_spatial_aug", "mask must be n×n"));
    }
    let support = graph.neighbors.mask();
    let mut active = support.clone();
    for (a, m) in active.data_mut().iter_mut().zip(mask.data()) {
        *a *= m;
    }
    let base = tape.constant(graph.adjacency.clone())?;
    let adjusted = if active.data().iter().any(|&v| v != 0.0) {
        let x = tape.constant(graph.features.clone())?;
        let dist = distance_matrix(tape, x, vars.w_d)?;
        let tau = tape.exp(vars.log_tau)?;
        let delta = tape.edge_adjust(dist, tau, &active)?;
        tape.add(base, delta)?
    } else {
        base
    };
    rescale_on_support(tape, adjusted, &support)
}

/// Plug-in mutual information (natural log) between a feature column cut
/// into `bins` equal-width bins over its range and 1-based class labels.
/// Probabilities are counts over the sample size; a constant column gives 0.
pub fn mutual_info(column: &[f64], classes: &[u16], bins: usize) -> Result<f64> {
    if column.len() != classes.len() {
        return Err(Error::shape("mutual_info", "feature and label lengths differ"));
    }
    if column.len() < 2 {
        return Err(Error::Param("mutual_info needs at least 2 samples".into()));
    }
    if bins < 2 {
        return Err(Error::Param("mutual_info needs at least 2 bins".into()));
    }
    let c = usize::from(*classes.iter().max().unwrap_or(&0));
    let idx = bin_indices(column, bins);
    let mut joint = vec![0usize; bins * (c + 1)];
    let mut px = vec![0usize; bins];
    let mut py = vec![0usize; c + 1];
    for (&b, &y) in idx.iter().zip(classes) {
        let y = usize::from(y);
        joint[b * (c + 1) + y] += 1;
        px[b] += 1;
        py[y] += 1;
    }
    let total = column.len() as f64;
    let mut mi = 0.0;
    for b in 0..bins {
        for y in 0..=c {
            let nij = joint[b * (c + 1) + y];
            if nij == 0 {
                continue;
            }
            let pij = nij as f64 / total;
            let pxy = (px[b] as f64 / total) * (py[y] as f64 / total);
            mi += pij * (pij / pxy).ln();
        }
    }
    Ok(mi.max(0.0))
}

/// Equal-width bin of every value; the maximum falls in the last bin.
pub fn bin_indices(column: &[f64], bins: usize) -> Vec<usize> {
    let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    column
        .iter()
        .map(|&v| {
            if range > 0.0 {
                (((v - lo) / range * bins as f64) as usize).min(bins - 1)
            } else {
                0
            }
        })
        .collect()
}

/// Per-dimension importance in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralAugProbs {
    pub p: Vec<f64>,
}

impl SpectralAugProbs {
    pub fn uniform(d: usize, p: f64) -> Self {
        Self { p: vec![p; d] }
    }

    /// Probability that dimension `h` is exchanged.
    pub fn exchange_probability(&self, h: usize) -> f64 {
        1.0 - self.p[h]
    }
}

/// Min-max normalized mutual information of each feature dimension with the
/// labels of the labeled nodes. All-equal scores map to 0.5.
pub fn spectral_probs(x_labeled: &Tensor, classes: &[u16], bins: usize) -> Result<SpectralAugProbs> {
    if x_labeled.rows() != classes.len() {
        return Err(Error::shape("spectral_probs", "one class per labeled row required"));
    }
    let scores = (0..x_labeled.cols())
        .map(|h| {
            let col: Vec<f64> = (0..x_labeled.rows()).map(|r| x_labeled.get(r, h)).collect();
            mutual_info(&col, classes, bins)
        })
        .collect::<Result<Vec<_>>>()?;
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p = if hi > lo {
        scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; scores.len()]
    };
    Ok(SpectralAugProbs { p })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Exchange {
    pub i: usize,
    pub j: usize,
    pub dims: Vec<usize>,
}

/// Feature swaps of one view, in the order they were planned.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExchangePlan {
    pub swaps: Vec<Exchange>,
}

impl ExchangePlan {
    pub fn is_empty(&self) -> bool {
        self.swaps.is_empty()
    }
}

/// Visits edges by decreasing weight (ties lexicographic). An edge whose
/// endpoints are both still free is accepted and both endpoints become used;
/// each dimension is then drawn with probability `1 − p_h` and the pair
/// enters the plan when at least one dimension was drawn.
pub fn plan_exchanges(graph: &SuperGraph, probs: &SpectralAugProbs, seed: u64) -> Result<ExchangePlan> {
    if probs.p.len() != graph.dims() {
        return Err(Error::shape("plan_exchanges", "one probability per feature dimension required"));
    }
    let mut edges = graph.neighbors.edges();
    let a = &graph.adjacency;
    edges.sort_by(|&(i1, j1), &(i2, j2)| {
        a.get(i2, j2)
            .total_cmp(&a.get(i1, j1))
            .then((i1, j1).cmp(&(i2, j2)))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = vec![false; graph.len()];
    let mut swaps = Vec::new();
    for (i, j) in edges {
        if used[i] || used[j] {
            continue;
        }
        used[i] = true;
        used[j] = true;
        let dims: Vec<usize> = (0..probs.p.len())
            .filter(|&h| rng.gen::<f64>() < probs.exchange_probability(h))
            .collect();
        if !dims.is_empty() {
            swaps.push(Exchange { i, j, dims });
        }
    }
    Ok(ExchangePlan { swaps })
}

/// Swaps the planned entries; everything else is copied unchanged.
pub fn apply_spectral_aug(x: &Tensor, plan: &ExchangePlan) -> Result<Tensor> {
    let mut out = x.clone();
    for s in &plan.swaps {
        if s.i >= x.rows() || s.j >= x.rows() || s.dims.iter().any(|&h| h >= x.cols()) {
            return Err(Error::shape("apply_spectral_aug", "plan refers outside the feature matrix"));
        }
        for &h in &s.dims {
            let (a, b) = (out.get(s.i, h), out.get(s.j, h));
            out.set(s.i, h, b);
            out.set(s.j, h, a);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub p_sample: f64,
    pub spatial: bool,
    pub spectral: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_sample: 0.5,
            spatial: true,
            spectral: true,
        }
    }
}

/// Seeds for one view's edge mask and exchange plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ViewSeeds {
    pub mask: u64,
    pub exchange: u64,
}

/// One augmented graph fed to an encoder branch.
#[derive(Clone, Debug)]
pub struct GraphView {
    /// Augmented adjacency on the tape, entries in [0, 1].
    pub adjacency: Var,
    pub features: Tensor,
    pub seeds: ViewSeeds,
    pub plan: ExchangePlan,
}

fn make_view(
    tape: &mut Tape,
    graph: &SuperGraph,
    vars: SpatialVars,
    probs: &SpectralAugProbs,
    config: &AugmentConfig,
    seeds: ViewSeeds,
) -> Result<GraphView> {
    let adjacency = if config.spatial && config.p_sample > 0.0 {
        let mask = sample_mask(graph.len(), config.p_sample, seeds.mask)?;
        apply_spatial_aug(tape, graph, vars, &mask)?
    } else {
        tape.constant(normalized_base(graph)?)?
    };
    let plan = if config.spectral {
        plan_exchanges(graph, probs, seeds.exchange)?
    } else {
        ExchangePlan::default()
    };
    let features = apply_spectral_aug(&graph.features, &plan)?;
    Ok(GraphView {
        adjacency,
        features,
        seeds,
        plan,
    })
}

/// Two independent views: the first feeds the localized branch, the second
/// the hierarchical branch. Both share `W_D` and `τ`.
pub fn make_views(
    tape: &mut Tape,
    graph: &SuperGraph,
    vars: SpatialVars,
    probs: &SpectralAugProbs,
    config: &AugmentConfig,
    seeds: [ViewSeeds; 2],
) -> Result<(GraphView, GraphView)> {
    if !(0.0..=1.0).contains(&config.p_sample) {
        return Err(Error::Param(format!("p_sample must be in [0, 1], got {}", config.p_sample)));
    }
    let first = make_view(tape, graph, vars, probs, config, seeds[0])?;
    let second = make_view(tape, graph, vars, probs, config, seeds[1])?;
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Neighbors;
    use crate::superpixel::NodeLabel;

    fn path_graph(weights: &[f64]) -> SuperGraph {
        let n = weights.len() + 1;
        let lists = (0..n).map(|i| if i + 1 < n { vec![i + 1] } else { vec![] }).collect();
        let nb = Neighbors::from_lists(lists).unwrap();
        let x = Tensor::new(n, 2, (0..2 * n).map(|v| v as f64 * 0.1).collect()).unwrap();
        let labels = vec![NodeLabel { eval: 0, train: None }; n];
        let mut g = SuperGraph::new(x, nb, 0.2, labels).unwrap();
        for (k, &w) in weights.iter().enumerate() {
            g.adjacency.set(k, k + 1, w);
            g.adjacency.set(k + 1, k, w);
        }
        g
    }

    #[test]
    fn euclidean_special_case() {
        let w = Tensor::identity(2);
        let d = mahalanobis_distance(&[3.0, 4.0], &[0.0, 0.0], &w).unwrap();
        assert!((d - 5.0).abs() < 1e-12);
        let same = mahalanobis_distance(&[1.0, 2.0], &[1.0, 2.0], &w).unwrap();
        assert!(same <= DISTANCE_EPS.sqrt() * 1.0001);
        let w = Tensor::from_rows(&[[0.3, -1.0], [2.0, 0.5]]).unwrap();
        let a = mahalanobis_distance(&[0.1, 0.7], &[-0.4, 1.2], &w).unwrap();
        let b = mahalanobis_distance(&[-0.4, 1.2], &[0.1, 0.7], &w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn edge_adjust_landmarks() {
        let tau = 0.7f64;
        assert!(edge_adjust(tau, tau).abs() < 1e-15);
        assert!((edge_adjust(0.0, tau) - (tau.exp() - 1.0)).abs() < 1e-15);
        assert_eq!(edge_adjust(2.0 * tau, tau), 1.0 - tau.exp());
        assert_eq!(edge_adjust(9.0, tau), 1.0 - tau.exp());
    }

    #[test]
    fn mask_extremes_and_symmetry() {
        let m0 = sample_mask(5, 0.0, 3).unwrap();
        assert_eq!(m0, Tensor::identity(5));
        let m1 = sample_mask(5, 1.0, 3).unwrap();
        assert_eq!(m1, Tensor::ones(5, 5));
        let m = sample_mask(20, 0.4, 9).unwrap();
        assert_eq!(m, m.transpose());
        assert_eq!(m, sample_mask(20, 0.4, 9).unwrap());
        assert!(sample_mask(3, 1.5, 0).is_err());
    }

    #[test]
    fn mask_rate_is_binomial() {
        let n = 200;
        let m = sample_mask(n, 0.3, 11).unwrap();
        let off: f64 = m.sum() - n as f64;
        let mean = off / (n * n - n) as f64;
        assert!((0.27..=0.33).contains(&mean), "{mean}");
    }

    #[test]
    fn mutual_information_perfect_binary_feature() {
        let col = [0.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let y = [1, 1, 2, 2, 1, 2];
        let mi = mutual_info(&col, &y, 2).unwrap();
        assert!((mi - 2f64.ln()).abs() < 1e-12);
        assert_eq!(mutual_info(&[3.0; 6], &y, 4).unwrap(), 0.0);
        assert!(mutual_info(&[1.0], &[1], 2).is_err());
    }

    #[test]
    fn spectral_probability_endpoints() {
        let x = Tensor::from_rows(&[[5.0, 0.0], [5.0, 0.0], [5.0, 1.0], [5.0, 1.0]]).unwrap();
        let p = spectral_probs(&x, &[1, 1, 2, 2], 2).unwrap();
        assert_eq!(p.p, vec![0.0, 1.0]);
        assert_eq!(p.exchange_probability(0), 1.0);
        let flat = spectral_probs(&Tensor::filled(3, 2, 1.0), &[1, 2, 1], 2).unwrap();
        assert_eq!(flat.p, vec![0.5, 0.5]);
    }

    #[test]
    fn path_graph_exchanges_at_most_once() {
        // A01 > A12: (0, 1) is taken first and blocks (1, 2)
        let g = path_graph(&[0.9, 0.4]);
        let plan = plan_exchanges(&g, &SpectralAugProbs::uniform(2, 0.0), 1).unwrap();
        assert_eq!(plan.swaps, vec![Exchange { i: 0, j: 1, dims: vec![0, 1] }]);
        let none = plan_exchanges(&g, &SpectralAugProbs::uniform(2, 1.0), 1).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn single_swap_moves_two_scalars() {
        let x = Tensor::new(3, 3, (0..9).map(f64::from).collect()).unwrap();
        let plan = ExchangePlan {
            swaps: vec![Exchange { i: 0, j: 2, dims: vec![2] }],
        };
        let y = apply_spectral_aug(&x, &plan).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0, 8.0, 3.0, 4.0, 5.0, 6.0, 7.0, 2.0]);
        assert_eq!(apply_spectral_aug(&x, &ExchangePlan::default()).unwrap(), x);
    }

    #[test]
    fn spatial_view_without_sampling_is_rescaled_base() {
        let g = path_graph(&[0.9, 0.4, 0.6]);
        let mut tape = Tape::new();
        let w_d = tape.leaf(init_projection(2)).unwrap();
        let log_tau = tape.leaf(Tensor::scalar(0.0)).unwrap();
        let vars = SpatialVars { w_d, log_tau };
        let v = apply_spatial_aug(&mut tape, &g, vars, &Tensor::identity(4)).unwrap();
        let a = tape.value(v);
        assert!((a.get(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(a.get(1, 2), 0.0);
        assert!((a.get(2, 3) - 0.4).abs() < 1e-12);
        assert_eq!(a, &normalized_base(&g).unwrap());
    }

    #[test]
    fn views_share_support_and_shapes() {
        let g = path_graph(&[0.9, 0.4, 0.6, 0.2]);
        let mut tape = Tape::new();
        let w_d = tape.leaf(init_projection(2)).unwrap();
        let log_tau = tape.leaf(Tensor::scalar(0.0)).unwrap();
        let seeds = [ViewSeeds { mask: 1, exchange: 2 }, ViewSeeds { mask: 3, exchange: 4 }];
        let cfg = AugmentConfig { p_sample: 0.7, ..Default::default() };
        let probs = SpectralAugProbs::uniform(2, 0.5);
        let (a, b) = make_views(&mut tape, &g, SpatialVars { w_d, log_tau }, &probs, &cfg, seeds).unwrap();
        for v in [&a, &b] {
            let adj = tape.value(v.adjacency);
            assert_eq!(adj.shape(), (5, 5));
            assert_eq!(v.features.shape(), (5, 2));
            for i in 0..5 {
                for j in 0..5 {
                    assert_eq!(adj.get(i, j) != 0.0 || g.neighbors.contains(i, j), g.neighbors.contains(i, j));
                }
            }
        }
        let cfg0 = AugmentConfig { p_sample: 0.0, spatial: true, spectral: false };
        let (c, d) = make_views(&mut tape, &g, SpatialVars { w_d, log_tau }, &probs, &cfg0, seeds).unwrap();
        assert_eq!(tape.value(c.adjacency), tape.value(d.adjacency));
        assert_eq!(c.features, d.features);
    }
}
