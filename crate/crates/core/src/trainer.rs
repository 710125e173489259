//! Training loop, optimizer and inference.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{make_views, median_edge_distance, normalized_base, spectral_probs, AugmentConfig, SpatialVars, SpectralAugProbs, ViewSeeds, DEFAULT_MI_BINS};
use crate::data::label_matrix;
use crate::error::{Error, Result};
use crate::graph::SuperGraph;
use crate::losses::{self, LossBreakdown, LossTerms, LossWeights, DEFAULT_NEG_RATIO};
use crate::models::{self, build_hierarchy, Hierarchy, ModelConfig, AUG_LOG_TAU, AUG_W_D, GEN_W};
use crate::tensor::{backward, Bindings, Gradients, ParamStore, Tape, Tensor, Var};

pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_ITERS: usize = 4000;
pub const VALIDATION_EVERY: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub iters: usize,
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub augment: AugmentConfig,
    pub mi_bins: usize,
    pub neg_ratio: usize,
    /// Start τ at the median projected distance over graph edges instead of 1.
    pub adaptive_tau: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            iters: DEFAULT_ITERS,
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            augment: AugmentConfig::default(),
            mi_bins: DEFAULT_MI_BINS,
            neg_ratio: DEFAULT_NEG_RATIO,
            adaptive_tau: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.iters == 0 {
            return Err(Error::Config("iteration count must be at least 1".into()));
        }
        if self.mi_bins < 2 {
            return Err(Error::Config("mutual information needs at least 2 bins".into()));
        }
        if !(0.0..=1.0).contains(&self.augment.p_sample) {
            return Err(Error::Config(format!(
                "p_sample must be in [0, 1], got {}",
                self.augment.p_sample
            )));
        }
        self.model.validate()?;
        self.weights.validate()
    }
}

/// Adam moments for every parameter of a store, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    let g = grads.values();
    if g.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape("adam_step", "gradient/state count differs from parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (k, p) in params.values_mut().iter_mut().enumerate() {
        if g[k].shape() != p.shape() {
            return Err(Error::shape("adam_step", "gradient shape differs from its parameter"));
        }
        let (m, v) = (state.m[k].data_mut(), state.v[k].data_mut());
        for (i, x) in p.data_mut().iter_mut().enumerate() {
            let gi = g[k].data()[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            *x -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Random draws of one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IterationSeeds {
    pub views: [ViewSeeds; 2],
    pub negatives: u64,
}

impl IterationSeeds {
    pub fn draw(rng: &mut impl RngCore) -> Self {
        let mut next = || rng.next_u64();
        let views = [
            ViewSeeds { mask: next(), exchange: next() },
            ViewSeeds { mask: next(), exchange: next() },
        ];
        Self {
            views,
            negatives: next(),
        }
    }
}

pub struct Objective {
    pub loss: Var,
    pub breakdown: LossBreakdown,
    pub hierarchy: Hierarchy,
}

/// Records one full evaluation of the training objective. The hierarchy is
/// rebuilt from the second view unless `fixed_hierarchy` is given.
pub fn objective(
    tape: &mut Tape,
    graph: &SuperGraph,
    params: &Bindings,
    probs: &SpectralAugProbs,
    config: &TrainConfig,
    seeds: &IterationSeeds,
    fixed_hierarchy: Option<&Hierarchy>,
) -> Result<Objective> {
    let vars = SpatialVars {
        w_d: params.get(AUG_W_D)?,
        log_tau: params.get(AUG_LOG_TAU)?,
    };
    let (v1, v2) = make_views(tape, graph, vars, probs, &config.augment, seeds.views)?;
    let hierarchy = match fixed_hierarchy {
        Some(h) => h.clone(),
        None => build_hierarchy(tape.value(v2.adjacency), &graph.neighbors, &v2.features, config.model.levels)?,
    };
    let out = models::forward(
        tape,
        params,
        &config.model,
        (v1.adjacency, &v1.features),
        (v2.adjacency, &v2.features),
        &hierarchy,
    )?;
    let classes = tape.shape(out.logits).1;
    let labeled = graph.labeled_nodes();
    let labeled_classes = graph.labeled_classes();
    let y = label_matrix(&labeled_classes, classes)?;
    let ce = losses::cross_entropy(tape, out.logits, &labeled, &y)?;
    let (ssc_unsup, ssc_sup) = if config.weights.closs {
        let u = losses::unsup_contrastive(tape, out.z_local, out.z_global)?;
        let s = losses::sup_contrastive(tape, out.z_local, out.z_global, &labeled, &labeled_classes)?;
        (Some(u), Some(s))
    } else {
        (None, None)
    };
    let gen = if config.weights.gloss && graph.neighbors.edge_count() > 0 {
        let negatives = losses::sample_negatives(&graph.neighbors, config.neg_ratio, seeds.negatives);
        let w = params.get(GEN_W)?;
        Some(losses::generative_loss(tape, out.z_local, out.z_global, w, &graph.neighbors, &negatives)?)
    } else {
        None
    };
    let terms = LossTerms {
        ce,
        ssc_unsup,
        ssc_sup,
        gen,
    };
    let (loss, breakdown) = losses::total_loss(tape, &terms, &config.weights)?;
    Ok(Objective {
        loss,
        breakdown,
        hierarchy,
    })
}

/// Spectral exchange importance from the training-labeled nodes; uniform
/// 0.5 when fewer than two nodes are labeled.
pub fn exchange_probs(graph: &SuperGraph, bins: usize) -> Result<SpectralAugProbs> {
    let labeled = graph.labeled_nodes();
    if labeled.len() < 2 {
        return Ok(SpectralAugProbs::uniform(graph.dims(), 0.5));
    }
    let mut x = Tensor::zeros(labeled.len(), graph.dims());
    for (r, &i) in labeled.iter().enumerate() {
        x.row_mut(r).copy_from_slice(graph.features.row(i));
    }
    spectral_probs(&x, &graph.labeled_classes(), bins)
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub ce: f64,
    pub ssc_unsup: f64,
    pub ssc_sup: f64,
    pub gen: f64,
    pub total: f64,
}

impl TrainRecord {
    pub fn new(iter: usize, b: &LossBreakdown) -> Self {
        Self {
            iter,
            ce: b.ce,
            ssc_unsup: b.ssc_unsup,
            ssc_sup: b.ssc_sup,
            gen: b.gen,
            total: b.total,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub iter: usize,
    pub oa: f64,
}

/// Held-out pixels as (superpixel node, true class) pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationSet {
    pub nodes: Vec<usize>,
    pub classes: Vec<u16>,
}

impl ValidationSet {
    /// Fraction of pixels whose node prediction matches.
    pub fn accuracy(&self, node_class: &[u16]) -> Option<f64> {
        if self.nodes.is_empty() {
            return None;
        }
        let hits = self
            .nodes
            .iter()
            .zip(&self.classes)
            .filter(|(&n, &k)| node_class[n] == k)
            .count();
        Some(hits as f64 / self.nodes.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub log: Vec<TrainRecord>,
    pub validation: Vec<ValidationRecord>,
}

/// Fresh parameters for `graph` under `config`.
pub fn initial_params(graph: &SuperGraph, classes: usize, config: &TrainConfig) -> Result<ParamStore> {
    let mut params = models::init_params(graph.dims(), classes, &config.model, config.seed)?;
    if config.adaptive_tau {
        let w_d = params.get(AUG_W_D).expect("initialized above").clone();
        if let Some(m) = median_edge_distance(graph, &w_d)?.filter(|&m| m > 0.0) {
            *params.get_mut(AUG_LOG_TAU).expect("initialized above") = Tensor::scalar(m.ln());
        }
    }
    Ok(params)
}

/// Runs `config.iters` Adam iterations from freshly initialized parameters.
/// `on_record` sees every log record as soon as it exists.
pub fn train(
    graph: &SuperGraph,
    classes: usize,
    config: &TrainConfig,
    validation: Option<&ValidationSet>,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if graph.len() < 2 {
        return Err(Error::Contract(format!("training needs at least 2 nodes, got {}", graph.len())));
    }
    for k in 1..=classes {
        if !graph.labeled_classes().contains(&(k as u16)) {
            return Err(Error::Contract(format!("class {k} has no labeled superpixel")));
        }
    }
    let mut params = initial_params(graph, classes, config)?;
    let probs = exchange_probs(graph, config.mi_bins)?;
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut log = Vec::with_capacity(config.iters);
    let mut val_log = Vec::new();
    let mut tape = Tape::new();
    for iter in 1..=config.iters {
        let seeds = IterationSeeds::draw(&mut rng);
        tape.reset();
        let diverged = |e: Error| match e {
            Error::NonFinite { .. } => Error::Divergence { iter },
            other => other,
        };
        let bound = params.bind(&mut tape)?;
        let obj = objective(&mut tape, graph, &bound, &probs, config, &seeds, None).map_err(diverged)?;
        let grads = backward(&mut tape, obj.loss, &bound).map_err(diverged)?;
        if !grads.all_finite() {
            return Err(Error::Divergence { iter });
        }
        adam_step(&mut params, &grads, &mut adam, config.lr)?;
        if params.iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Divergence { iter });
        }
        let record = TrainRecord::new(iter, &obj.breakdown);
        on_record(&record);
        log.push(record);
        if let Some(v) = validation {
            if iter % VALIDATION_EVERY == 0 || iter == config.iters {
                let pred = predict(graph, &params, &config.model)?;
                if let Some(oa) = v.accuracy(&pred.node_class) {
                    val_log.push(ValidationRecord { iter, oa });
                }
            }
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        validation: val_log,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Softmax class probabilities per node.
    pub probs: Tensor,
    /// 1-based class per node.
    pub node_class: Vec<u16>,
}

impl Prediction {
    /// Broadcasts node classes to pixels through a superpixel assignment.
    pub fn pixel_map(&self, assignment: &[usize]) -> Vec<u16> {
        assignment.iter().map(|&s| self.node_class[s]).collect()
    }
}

/// Inference on the clean graph: rescaled base adjacency for both branches,
/// no feature exchange.
pub fn predict(graph: &SuperGraph, params: &ParamStore, model: &ModelConfig) -> Result<Prediction> {
    let base = normalized_base(graph)?;
    let hierarchy = build_hierarchy(&base, &graph.neighbors, &graph.features, model.levels)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let a = tape.constant(base)?;
    let out = models::forward(
        &mut tape,
        &bound,
        model,
        (a, &graph.features),
        (a, &graph.features),
        &hierarchy,
    )?;
    let lp = models::log_softmax(&mut tape, out.logits)?;
    let probs = tape.exp(lp)?;
    let probs = tape.value(probs).clone();
    let node_class = models::argmax_rows(&probs).into_iter().map(|k| (k + 1) as u16).collect();
    Ok(Prediction { probs, node_class })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Neighbors;
    use crate::superpixel::NodeLabel;

    fn toy_graph() -> SuperGraph {
        // two clusters of three nodes joined by one bridge edge
        let x = Tensor::from_rows(&[
            [0.1, 0.9, 0.2],
            [0.15, 0.85, 0.1],
            [0.05, 0.95, 0.3],
            [0.9, 0.1, 0.7],
            [0.85, 0.2, 0.8],
            [0.95, 0.05, 0.6],
        ])
        .unwrap();
        let nb = Neighbors::from_lists(vec![vec![1, 2], vec![2], vec![3], vec![4, 5], vec![5], vec![]]).unwrap();
        let lab = |eval: u16, train: Option<u16>| NodeLabel { eval, train };
        let labels = vec![lab(1, Some(1)), lab(1, None), lab(1, None), lab(2, None), lab(2, Some(2)), lab(2, None)];
        SuperGraph::new(x, nb, 0.2, labels).unwrap()
    }

    fn small_config(iters: usize) -> TrainConfig {
        TrainConfig {
            iters,
            model: ModelConfig { hidden: 8, levels: 2, lambda_local: 0.5 },
            ..Default::default()
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::filled(2, 2, 0.3));
        let before = p.clone();
        let mut tape = Tape::new();
        let b = p.bind(&mut tape).unwrap();
        let zero = tape.constant(Tensor::scalar(0.0)).unwrap();
        let g = backward(&mut tape, zero, &b).unwrap();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.01).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_rows(&[[1.0, -2.0, 0.5]]).unwrap());
        let mut tape = Tape::new();
        let b = p.bind(&mut tape).unwrap();
        let w = b.get("w").unwrap();
        let coef = tape.constant(Tensor::from_rows(&[[3.0, -0.25, 1e-3]]).unwrap()).unwrap();
        let prod = tape.mul(w, coef).unwrap();
        let loss = tape.sum(prod).unwrap();
        let g = backward(&mut tape, loss, &b).unwrap();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.01).unwrap();
        let expect = [(1.0, 3.0), (-2.0, -0.25), (0.5, 1e-3)];
        for (k, (w0, gk)) in expect.iter().enumerate() {
            let step = 0.01 * gk / (f64::abs(*gk) + 1e-8);
            assert!((p.require("w").unwrap().data()[k] - (w0 - step)).abs() < 1e-15);
        }
        for (m, v) in s.m[0].data().iter().zip(s.v[0].data()) {
            assert!(m.abs() <= 3.0 && *v <= 9.0);
        }
    }

    #[test]
    fn single_iteration_moves_parameters() {
        let g = toy_graph();
        let cfg = small_config(1);
        let out = train(&g, 2, &cfg, None, |_| {}).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.log[0].iter, 1);
        assert_ne!(out.params, initial_params(&g, 2, &cfg).unwrap());
    }

    #[test]
    fn training_is_reproducible_and_lowers_loss() {
        let g = toy_graph();
        let cfg = small_config(60);
        let a = train(&g, 2, &cfg, None, |_| {}).unwrap();
        let b = train(&g, 2, &cfg, None, |_| {}).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
        assert!(a.log[59].ce < a.log[0].ce);
        let pred = predict(&g, &a.params, &cfg.model).unwrap();
        assert_eq!(pred.node_class, vec![1, 1, 1, 2, 2, 2]);
        assert_eq!(pred, predict(&g, &a.params, &cfg.model).unwrap());
    }

    #[test]
    fn disabled_terms_are_logged_as_zero() {
        let g = toy_graph();
        let mut cfg = small_config(3);
        cfg.weights.closs = false;
        cfg.weights.gloss = false;
        cfg.augment.spatial = false;
        cfg.augment.spectral = false;
        let out = train(&g, 2, &cfg, None, |_| {}).unwrap();
        for r in &out.log {
            assert_eq!((r.ssc_unsup, r.ssc_sup, r.gen), (0.0, 0.0, 0.0));
            assert_eq!(r.total, r.ce);
        }
    }

    #[test]
    fn invalid_configs_fail_before_training() {
        let g = toy_graph();
        let mut cfg = small_config(1);
        cfg.weights.lambda_ssc = -1.0;
        let mut called = false;
        assert!(matches!(train(&g, 2, &cfg, None, |_| called = true), Err(Error::Config(_))));
        assert!(!called);
        let zero_iters = TrainConfig { iters: 0, ..small_config(1) };
        assert!(train(&g, 2, &zero_iters, None, |_| {}).is_err());
        assert!(matches!(train(&g, 3, &small_config(1), None, |_| {}), Err(Error::Contract(_))));
    }

    #[test]
    fn log_line_fields() {
        let r = TrainRecord { iter: 4, ce: 1.0, ssc_unsup: 0.5, ssc_sup: 0.25, gen: 0.7, total: 1.2 };
        let v: serde_json::Value = serde_json::from_str(&r.to_json_line()).unwrap();
        for key in ["iter", "ce", "ssc_unsup", "ssc_sup", "gen", "total"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(!r.to_json_line().contains('\n'));
    }

    #[test]
    fn pixels_inherit_node_class() {
        let p = Prediction {
            probs: Tensor::from_rows(&[[0.9, 0.1], [0.2, 0.8]]).unwrap(),
            node_class: vec![1, 2],
        };
        assert_eq!(p.pixel_map(&[0, 0, 1, 1, 0]), vec![1, 1, 2, 2, 1]);
    }
}
