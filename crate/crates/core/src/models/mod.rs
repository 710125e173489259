//! Localized and hierarchical graph convolution branches and their fusion.

mod checkpoint;
mod hierarchy;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::init_projection;
use crate::error::{Error, Result};
use crate::tensor::{Bindings, ParamStore, Tape, Tensor, Var};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use hierarchy::{build_hierarchy, Hierarchy, Level};

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_LEVELS: usize = 2;
pub const DEFAULT_LAMBDA_LOCAL: f64 = 0.5;

pub const LOCAL_W0: &str = "local.w0";
pub const LOCAL_W1: &str = "local.w1";
pub const GEN_W: &str = "gen.w";
pub const AUG_W_D: &str = "aug.w_d";
pub const AUG_LOG_TAU: &str = "aug.log_tau";

pub fn hier_down(level: usize) -> String {
    format!("hier.down{level}")
}

pub fn hier_up(level: usize) -> String {
    format!("hier.up{level}")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub levels: usize,
    pub lambda_local: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            levels: DEFAULT_LEVELS,
            lambda_local: DEFAULT_LAMBDA_LOCAL,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if self.levels == 0 {
            return Err(Error::Config("hierarchy needs at least one level".into()));
        }
        if !(self.lambda_local > 0.0 && self.lambda_local < 1.0) {
            return Err(Error::Config(format!(
                "lambda_local must lie strictly inside (0, 1), got {}",
                self.lambda_local
            )));
        }
        Ok(())
    }

    /// Expected `(name, rows, cols)` of every parameter.
    pub fn param_shapes(&self, d: usize, c: usize) -> Vec<(String, usize, usize)> {
        let h = self.hidden;
        let mut s = vec![
            (LOCAL_W0.to_string(), d, h),
            (LOCAL_W1.to_string(), h, c),
            (hier_down(0), d, h),
        ];
        for k in 1..=self.levels {
            s.push((hier_down(k), h, h));
        }
        for k in 1..=self.levels {
            s.push((hier_up(k), h, if k == 1 { c } else { h }));
        }
        let w_d = init_projection(d);
        s.push((GEN_W.to_string(), 2 * c, 1));
        s.push((AUG_W_D.to_string(), d, w_d.cols()));
        s.push((AUG_LOG_TAU.to_string(), 1, 1));
        s
    }
}

/// Uniform Glorot sample for a `rows×cols` weight.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-a..=a)).collect())
        .expect("length matches shape")
}

/// Fresh parameters: Glorot weights, `W_D` scaled identity columns, `τ = 1`.
pub fn init_params(d: usize, c: usize, config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    if d == 0 || c == 0 {
        return Err(Error::Config("feature and class counts must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, r, k) in config.param_shapes(d, c) {
        let value = match name.as_str() {
            AUG_W_D => init_projection(d),
            AUG_LOG_TAU => Tensor::scalar(0.0),
            _ => glorot(r, k, &mut rng),
        };
        store.insert(name, value);
    }
    Ok(store)
}

/// Checks that `store` holds exactly the parameters of `config` for `d`
/// features and `c` classes.
pub fn check_params(store: &ParamStore, d: usize, c: usize, config: &ModelConfig) -> Result<()> {
    let expected = config.param_shapes(d, c);
    if store.len() != expected.len() {
        return Err(Error::Param(format!(
            "expected {} parameters, found {}",
            expected.len(),
            store.len()
        )));
    }
    for (name, r, k) in expected {
        let t = store.require(&name)?;
        if t.shape() != (r, k) {
            return Err(Error::Param(format!(
                "{name} has shape {:?}, expected ({r}, {k})",
                t.shape()
            )));
        }
    }
    Ok(())
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` on the tape.
pub fn normalize_adjacency(tape: &mut Tape, a: Var) -> Result<Var> {
    let (n, m) = tape.shape(a);
    if n != m {
        return Err(Error::shape("normalize_adjacency", "adjacency must be square"));
    }
    let eye = tape.constant(Tensor::identity(n))?;
    let with_loops = tape.add(a, eye)?;
    let deg = tape.sum_rows(with_loops)?;
    let dinv = tape.powf(deg, -0.5)?;
    let dinv_t = tape.transpose(dinv)?;
    let scale = tape.matmul(dinv, dinv_t)?;
    tape.mul(with_loops, scale)
}

/// Value-only [`normalize_adjacency`].
pub fn normalized_adjacency_value(a: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(a.clone())?;
    let out = normalize_adjacency(&mut tape, v)?;
    Ok(tape.value(out).clone())
}

/// `Â relu(Â X W0) W1` given the already normalized `Â`.
pub fn gcn_forward(tape: &mut Tape, a_hat: Var, x: Var, w0: Var, w1: Var) -> Result<Var> {
    let ax = tape.matmul(a_hat, x)?;
    let h = tape.matmul(ax, w0)?;
    let h = tape.relu(h)?;
    let ah = tape.matmul(a_hat, h)?;
    tape.matmul(ah, w1)
}

/// Down path: GCN layer then mean pooling per level. Up path: copy
/// unpooling, skip-add of the same level's down activation, GCN layer. The
/// last refining layer maps to class scores without a nonlinearity.
pub fn hgcn_forward(tape: &mut Tape, hierarchy: &Hierarchy, a0: Var, x: Var, params: &Bindings) -> Result<Var> {
    let levels = hierarchy.levels().len();
    if tape.shape(a0).0 != hierarchy.base_len() || tape.shape(x).0 != hierarchy.base_len() {
        return Err(Error::shape("hgcn_forward", "hierarchy built for a different graph"));
    }
    let mut adj = vec![normalize_adjacency(tape, a0)?];
    let mut coarse = a0;
    for level in hierarchy.levels() {
        let m = tape.constant(level.mapping_matrix())?;
        let mt = tape.transpose(m)?;
        let prod = tape.matmul(mt, coarse)?;
        let prod = tape.matmul(prod, m)?;
        let mut hollow = Tensor::ones(level.size, level.size);
        for i in 0..level.size {
            hollow.set(i, i, 0.0);
        }
        let off_diag = tape.constant(hollow)?;
        coarse = tape.mul(prod, off_diag)?;
        adj.push(normalize_adjacency(tape, coarse)?);
    }

    let mut down = Vec::with_capacity(levels + 1);
    let ax = tape.matmul(adj[0], x)?;
    let h = tape.matmul(ax, params.get(&hier_down(0))?)?;
    down.push(tape.relu(h)?);
    for (k, level) in hierarchy.levels().iter().enumerate() {
        let pool = tape.constant(level.pooling_matrix())?;
        let pooled = tape.matmul(pool, down[k])?;
        let ap = tape.matmul(adj[k + 1], pooled)?;
        let h = tape.matmul(ap, params.get(&hier_down(k + 1))?)?;
        down.push(tape.relu(h)?);
    }

    let mut cur = down[levels];
    for k in (1..=levels).rev() {
        let level = &hierarchy.levels()[k - 1];
        let m = tape.constant(level.mapping_matrix())?;
        let unpooled = tape.matmul(m, cur)?;
        let u = tape.add(unpooled, down[k - 1])?;
        let au = tape.matmul(adj[k - 1], u)?;
        let h = tape.matmul(au, params.get(&hier_up(k))?)?;
        cur = if k > 1 { tape.relu(h)? } else { h };
    }
    Ok(cur)
}

/// `λ Z_local + (1 − λ) Z_global`, before the softmax.
pub fn fuse_logits(tape: &mut Tape, z_local: Var, z_global: Var, lambda_local: f64) -> Result<Var> {
    if !(lambda_local > 0.0 && lambda_local < 1.0) {
        return Err(Error::Config(format!(
            "lambda_local must lie strictly inside (0, 1), got {lambda_local}"
        )));
    }
    let a = tape.scale(z_local, lambda_local)?;
    let b = tape.scale(z_global, 1.0 - lambda_local)?;
    tape.add(a, b)
}

/// Row-wise log-softmax.
pub fn log_softmax(tape: &mut Tape, logits: Var) -> Result<Var> {
    let lse = tape.row_logsumexp(logits, None)?;
    tape.sub(logits, lse)
}

/// Fused class probabilities: row softmax of [`fuse_logits`].
pub fn fuse_outputs(tape: &mut Tape, z_local: Var, z_global: Var, lambda_local: f64) -> Result<Var> {
    let logits = fuse_logits(tape, z_local, z_global, lambda_local)?;
    let lp = log_softmax(tape, logits)?;
    tape.exp(lp)
}

/// Branch outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    pub z_local: Var,
    pub z_global: Var,
    pub logits: Var,
}

/// Both branches and the fused logits. `a1`/`a2` are the raw view
/// adjacencies; normalization happens here.
pub fn forward(
    tape: &mut Tape,
    params: &Bindings,
    config: &ModelConfig,
    view1: (Var, &Tensor),
    view2: (Var, &Tensor),
    hierarchy: &Hierarchy,
) -> Result<Outputs> {
    let a_hat = normalize_adjacency(tape, view1.0)?;
    let x1 = tape.constant(view1.1.clone())?;
    let z_local = gcn_forward(tape, a_hat, x1, params.get(LOCAL_W0)?, params.get(LOCAL_W1)?)?;
    let x2 = tape.constant(view2.1.clone())?;
    let z_global = hgcn_forward(tape, hierarchy, view2.0, x2, params)?;
    let logits = fuse_logits(tape, z_local, z_global, config.lambda_local)?;
    Ok(Outputs {
        z_local,
        z_global,
        logits,
    })
}

/// Index of the largest entry of each row; ties go to the smallest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
