//! Contrastive, generative and cross-entropy objectives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Neighbors;
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_LAMBDA_SSC: f64 = 0.1;
pub const DEFAULT_LAMBDA_G2: f64 = 0.01;
pub const DEFAULT_NEG_RATIO: usize = 1;
/// Probability floor inside the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

fn same_shape(tape: &Tape, a: Var, b: Var, op: &'static str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(op, "local and global embeddings differ in shape"));
    }
    Ok(())
}

/// `Σ_i [lse_j S_ij − S_ii]` with `S = A Bᵀ`, restricted by `mask` in the
/// positive term when given.
fn nce_direction(tape: &mut Tape, a: Var, b: Var, positives: Option<&Tensor>) -> Result<Var> {
    let bt = tape.transpose(b)?;
    let s = tape.matmul(a, bt)?;
    let all = tape.row_logsumexp(s, None)?;
    let pos = match positives {
        Some(m) => tape.row_logsumexp(s, Some(m.clone()))?,
        None => {
            let n = tape.shape(s).0;
            let diag = tape.constant(Tensor::identity(n))?;
            let d = tape.mul(s, diag)?;
            tape.sum_rows(d)?
        }
    };
    let gap = tape.sub(all, pos)?;
    tape.sum(gap)
}

/// Cross-view InfoNCE with the same node as the only positive, both
/// directions, scaled by `1/(2n)`.
pub fn unsup_contrastive(tape: &mut Tape, z_local: Var, z_global: Var) -> Result<Var> {
    same_shape(tape, z_local, z_global, "unsup_contrastive")?;
    let n = tape.shape(z_local).0;
    if n == 0 {
        return Err(Error::shape("unsup_contrastive", "no nodes"));
    }
    let fwd = nce_direction(tape, z_local, z_global, None)?;
    let bwd = nce_direction(tape, z_global, z_local, None)?;
    let both = tape.add(fwd, bwd)?;
    tape.scale(both, 1.0 / (2 * n) as f64)
}

/// Cross-view contrast over labeled nodes where every same-class node
/// (itself included) is a positive, both directions, scaled by `1/(2l)`.
/// Without labeled nodes the term is a constant 0.
pub fn sup_contrastive(tape: &mut Tape, z_local: Var, z_global: Var, labeled: &[usize], classes: &[u16]) -> Result<Var> {
    same_shape(tape, z_local, z_global, "sup_contrastive")?;
    if labeled.len() != classes.len() {
        return Err(Error::shape("sup_contrastive", "one class per labeled node required"));
    }
    let l = labeled.len();
    if l == 0 {
        return tape.constant(Tensor::scalar(0.0));
    }
    let mut same = Tensor::zeros(l, l);
    for i in 0..l {
        for k in 0..l {
            if classes[i] == classes[k] {
                same.set(i, k, 1.0);
            }
        }
    }
    let a = tape.gather_rows(z_local, labeled.to_vec())?;
    let b = tape.gather_rows(z_global, labeled.to_vec())?;
    let fwd = nce_direction(tape, a, b, Some(&same))?;
    let bwd = nce_direction(tape, b, a, Some(&same))?;
    let both = tape.add(fwd, bwd)?;
    tape.scale(both, 1.0 / (2 * l) as f64)
}

/// Ordered node pairs that are not edges, `neg_ratio` per ordered edge,
/// drawn uniformly with rejection. A complete graph yields none.
pub fn sample_negatives(neighbors: &Neighbors, neg_ratio: usize, seed: u64) -> Vec<(usize, usize)> {
    let n = neighbors.len();
    let want = 2 * neighbors.edge_count() * neg_ratio;
    let non_edges = n * n.saturating_sub(1) - 2 * neighbors.edge_count();
    if want == 0 || non_edges == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(want);
    while out.len() < want {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i != j && !neighbors.contains(i, j) {
            out.push((i, j));
        }
    }
    out
}

/// Negative mean log-likelihood of the edge model
/// `σ([z_i^local, z_j^global]·w)`: edges in both orientations are
/// positives, `negatives` are scored as non-edges.
pub fn generative_loss(
    tape: &mut Tape,
    z_local: Var,
    z_global: Var,
    w: Var,
    neighbors: &Neighbors,
    negatives: &[(usize, usize)],
) -> Result<Var> {
    same_shape(tape, z_local, z_global, "generative_loss")?;
    let (n, c) = tape.shape(z_local);
    if tape.shape(w) != (2 * c, 1) {
        return Err(Error::shape("generative_loss", "w must be a 2c×1 column"));
    }
    if neighbors.len() != n {
        return Err(Error::shape("generative_loss", "graph and embeddings differ in node count"));
    }
    let edges = neighbors.edges();
    if edges.is_empty() {
        return Err(Error::Contract("generative loss needs at least one edge".into()));
    }
    let w_local = tape.gather_rows(w, (0..c).collect())?;
    let w_global = tape.gather_rows(w, (c..2 * c).collect())?;
    let a = tape.matmul(z_local, w_local)?;
    let b = tape.matmul(z_global, w_global)?;

    let (src, dst): (Vec<usize>, Vec<usize>) = edges
        .iter()
        .flat_map(|&(i, j)| [(i, j), (j, i)])
        .unzip();
    let pos = pair_scores(tape, a, b, src, dst)?;
    let neg_pos = tape.scale(pos, -1.0)?;
    let pos_terms = tape.softplus(neg_pos)?;
    let mut total = tape.sum(pos_terms)?;
    let mut count = 2 * edges.len();
    if !negatives.is_empty() {
        let (src, dst) = negatives.iter().copied().unzip();
        let neg = pair_scores(tape, a, b, src, dst)?;
        let neg_terms = tape.softplus(neg)?;
        let s = tape.sum(neg_terms)?;
        total = tape.add(total, s)?;
        count += negatives.len();
    }
    tape.scale(total, 1.0 / count as f64)
}

fn pair_scores(tape: &mut Tape, a: Var, b: Var, src: Vec<usize>, dst: Vec<usize>) -> Result<Var> {
    let left = tape.gather_rows(a, src)?;
    let right = tape.gather_rows(b, dst)?;
    tape.add(left, right)
}

/// `−Σ Y ∘ ln softmax(logits)` over the labeled rows, with probabilities
/// floored at [`PROB_FLOOR`]. `y` is the l×c one-hot matrix aligned with
/// `labeled`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labeled: &[usize], y: &Tensor) -> Result<Var> {
    let c = tape.shape(logits).1;
    if y.shape() != (labeled.len(), c) {
        return Err(Error::shape("cross_entropy", "label matrix must be l×c"));
    }
    if labeled.is_empty() {
        return tape.constant(Tensor::scalar(0.0));
    }
    let lse = tape.row_logsumexp(logits, None)?;
    let logp = tape.sub(logits, lse)?;
    let rows = tape.gather_rows(logp, labeled.to_vec())?;
    let floored = tape.clamp_min(rows, PROB_FLOOR.ln())?;
    let yv = tape.constant(y.clone())?;
    let picked = tape.mul(floored, yv)?;
    let s = tape.sum(picked)?;
    tape.scale(s, -1.0)
}

/// Term weights and ablation switches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_ssc: f64,
    pub lambda_g2: f64,
    pub closs: bool,
    pub gloss: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ssc: DEFAULT_LAMBDA_SSC,
            lambda_g2: DEFAULT_LAMBDA_G2,
            closs: true,
            gloss: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_ssc", self.lambda_ssc), ("lambda_g2", self.lambda_g2)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Weight actually applied to the contrastive terms.
    pub fn ssc(&self) -> f64 {
        if self.closs {
            self.lambda_ssc
        } else {
            0.0
        }
    }

    pub fn g2(&self) -> f64 {
        if self.gloss {
            self.lambda_g2
        } else {
            0.0
        }
    }
}

/// Scalar value of every term of one objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub ssc_unsup: f64,
    pub ssc_sup: f64,
    pub gen: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `ce + λ_ssc (uc + sc) + λ_g2 gen`.
    pub fn assemble(ce: f64, ssc_unsup: f64, ssc_sup: f64, gen: f64, weights: &LossWeights) -> Result<Self> {
        weights.validate()?;
        let total = ce + weights.ssc() * (ssc_unsup + ssc_sup) + weights.g2() * gen;
        let b = Self {
            ce,
            ssc_unsup,
            ssc_sup,
            gen,
            total,
        };
        if ![ce, ssc_unsup, ssc_sup, gen, total].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "total_loss" });
        }
        Ok(b)
    }
}

/// Tape handles of the individual terms; disabled terms are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub ce: Var,
    pub ssc_unsup: Option<Var>,
    pub ssc_sup: Option<Var>,
    pub gen: Option<Var>,
}

/// Weighted sum on the tape plus its scalar breakdown.
pub fn total_loss(tape: &mut Tape, terms: &LossTerms, weights: &LossWeights) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    let val = |tape: &Tape, v: Option<Var>| v.map_or(Ok(0.0), |v| tape.value(v).item());
    let breakdown = LossBreakdown::assemble(
        tape.value(terms.ce).item()?,
        val(tape, terms.ssc_unsup)?,
        val(tape, terms.ssc_sup)?,
        val(tape, terms.gen)?,
        weights,
    )?;
    let mut total = terms.ce;
    let ssc = match (terms.ssc_unsup, terms.ssc_sup) {
        (Some(u), Some(s)) => Some(tape.add(u, s)?),
        (u, s) => u.or(s),
    };
    if let (Some(ssc), true) = (ssc, weights.ssc() > 0.0) {
        let t = tape.scale(ssc, weights.ssc())?;
        total = tape.add(total, t)?;
    }
    if let (Some(g), true) = (terms.gen, weights.g2() > 0.0) {
        let t = tape.scale(g, weights.g2())?;
        total = tape.add(total, t)?;
    }
    Ok((total, breakdown))
}
