//! Acceptance checks. Each criterion prints one PASS/FAIL line. Failures are
//! reported but only turn into a non-zero exit with `ACCEPTANCE_STRICT=1`.

use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use congcn::augment::{
    apply_spatial_aug, apply_spectral_aug, edge_adjust, mutual_info, plan_exchanges, sample_mask, SpatialVars,
    SpectralAugProbs,
};
use congcn::graph::{adjacency, Neighbors, SuperGraph};
use congcn::losses::{sup_contrastive, unsup_contrastive};
use congcn::metrics::ConfusionMatrix;
use congcn::models::{ModelConfig, AUG_LOG_TAU, AUG_W_D};
use congcn::pipeline::{build_scene, evaluate, train_scene, GraphConfig};
use congcn::superpixel::NodeLabel;
use congcn::synth::{self, BlobSpec};
use congcn::tensor::{finite_diff_check, ParamStore, Tape, Tensor};
use congcn::trainer::{exchange_probs, initial_params, objective, IterationSeeds, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(r: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

/// Ring plus random chords, so every node has a neighbor.
fn random_neighbors(r: &mut impl Rng, n: usize, chord_p: f64) -> Neighbors {
    let mut lists = vec![Vec::new(); n];
    for i in 0..n {
        if n > 1 {
            lists[i].push((i + 1) % n);
        }
        for j in (i + 2)..n {
            if r.gen::<f64>() < chord_p {
                lists[i].push(j);
            }
        }
    }
    Neighbors::from_lists(lists).unwrap()
}

fn random_graph(r: &mut impl Rng, n: usize, d: usize, classes: u16, labeled_per_class: usize) -> SuperGraph {
    let x = random_tensor(r, n, d, 0.0, 1.0);
    let nb = random_neighbors(r, n, 0.2);
    let mut labels: Vec<NodeLabel> = (0..n)
        .map(|i| NodeLabel {
            eval: (i % classes as usize) as u16 + 1,
            train: None,
        })
        .collect();
    for (i, l) in labels.iter_mut().enumerate() {
        if i / (classes as usize) < labeled_per_class {
            l.train = Some(l.eval);
        }
    }
    SuperGraph::new(x, nb, 0.2, labels).unwrap()
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut r = rng(11);
    let graph = random_graph(&mut r, 12, 8, 3, 2);
    let config = TrainConfig {
        model: ModelConfig {
            hidden: 6,
            levels: 2,
            lambda_local: 0.5,
        },
        adaptive_tau: false,
        seed: 5,
        ..TrainConfig::default()
    };
    let mut params = initial_params(&graph, 3, &config).unwrap();
    // spread projected distances around tau = 1 so both edge_adjust pieces occur
    *params.get_mut(AUG_W_D).unwrap() = random_tensor(&mut r, 8, 8, -0.6, 0.6);
    let probs = exchange_probs(&graph, config.mi_bins).unwrap();
    let seeds = IterationSeeds::draw(&mut r);
    let hierarchy = {
        let mut tape = Tape::new();
        let b = params.bind(&mut tape).unwrap();
        objective(&mut tape, &graph, &b, &probs, &config, &seeds, None).unwrap().hierarchy
    };
    let report = finite_diff_check(
        |tape, b| Ok(objective(tape, &graph, b, &probs, &config, &seeds, Some(&hierarchy))?.loss),
        &params,
        1e-5,
    )
    .unwrap();
    let elapsed = start.elapsed();
    outcome(
        report.max_rel_error <= 1e-4 && elapsed < Duration::from_secs(60) && report.checked > 0,
        format!(
            "{} params, {} entries checked, {} kink-excluded, max rel err {:.2e} at {:?}, {:.1}s; {}",
            params.len(),
            report.checked,
            report.excluded,
            report.max_rel_error,
            report.worst,
            elapsed.as_secs_f64(),
            report
                .per_param
                .iter()
                .map(|(n, c, e)| format!("{n} {c}/{}", c + e))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn adjacency_oracle() -> Outcome {
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    while pairs < 1000 {
        let d = r.gen_range(1..12);
        let x = random_tensor(&mut r, 2, d, -1.0, 1.0);
        let nb = Neighbors::from_lists(vec![vec![1], vec![]]).unwrap();
        let a = adjacency(&x, &nb, 0.2).unwrap();
        let mut sq = 0.0;
        for k in 0..d {
            let diff = x.get(0, k) - x.get(1, k);
            sq += diff * diff;
        }
        worst = worst.max((a.get(0, 1) - (-0.2 * sq).exp()).abs());
        pairs += 1;
    }
    let mut violations = 0;
    for _ in 0..500 {
        let n = r.gen_range(2..30);
        let d = r.gen_range(1..10);
        let x = random_tensor(&mut r, n, d, 0.0, 1.0);
        let chord_p = r.gen_range(0.0..0.5);
        let nb = random_neighbors(&mut r, n, chord_p);
        let a = adjacency(&x, &nb, 0.2).unwrap();
        for i in 0..n {
            for j in 0..n {
                let v = a.get(i, j);
                let ok = v == a.get(j, i) && (nb.contains(i, j) == (v > 0.0)) && v <= 1.0 && (i != j || v == 0.0);
                if !ok {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        worst <= 1e-12 && violations == 0,
        format!("max |A - scalar| {worst:.1e} over {pairs} pairs, {violations} symmetry/support violations over 500 graphs"),
    )
}

fn edge_adjust_shape() -> Outcome {
    let mut r = rng(2);
    let (mut cont, mut top, mut floor) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let tau = r.gen_range(1e-3..5.0);
        let left = edge_adjust(tau, tau);
        let right = edge_adjust(tau * (1.0 + 1e-15), tau);
        cont = cont.max((left - right).abs());
        top = top.max((edge_adjust(0.0, tau) - (tau.exp() - 1.0)).abs());
        let d = 2.0 * tau + r.gen_range(0.0..10.0);
        floor = floor.max((edge_adjust(d, tau) - (1.0 - tau.exp())).abs());
    }
    outcome(
        cont <= 1e-12 && top <= 1e-12 && floor <= 1e-12,
        format!("continuity gap {cont:.1e}, D=0 err {top:.1e}, D>=2tau err {floor:.1e} over 1000 cases"),
    )
}

/// Plug-in MI with a loop over feature bins, classes and samples.
fn mi_triple_loop(col: &[f64], classes: &[u16], bins: usize) -> f64 {
    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bin_of = |v: f64| {
        if hi > lo {
            (((v - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1)
        } else {
            0
        }
    };
    let n = col.len() as f64;
    let max_class = *classes.iter().max().unwrap();
    let mut mi = 0.0;
    for b in 0..bins {
        for k in 0..=max_class {
            let mut joint = 0usize;
            let mut in_bin = 0usize;
            let mut in_class = 0usize;
            for s in 0..col.len() {
                let sb = bin_of(col[s]) == b;
                let sk = classes[s] == k;
                joint += usize::from(sb && sk);
                in_bin += usize::from(sb);
                in_class += usize::from(sk);
            }
            if joint > 0 {
                let p = joint as f64 / n;
                mi += p * (p / ((in_bin as f64 / n) * (in_class as f64 / n))).ln();
            }
        }
    }
    mi
}

fn mi_estimator() -> Outcome {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.gen_range(2..40);
        let c = r.gen_range(1..5u16);
        let bins = r.gen_range(2..20);
        let col: Vec<f64> = (0..n).map(|_| (r.gen_range(0..12) as f64) * 0.1).collect();
        let classes: Vec<u16> = (0..n).map(|_| r.gen_range(1..=c)).collect();
        let got = mutual_info(&col, &classes, bins).unwrap();
        worst = worst.max((got - mi_triple_loop(&col, &classes, bins)).abs());
    }
    let ln2 = mutual_info(&[0.0, 1.0], &[1, 2], 16).unwrap();
    let ln2_err = (ln2 - 2f64.ln()).abs();
    outcome(
        worst <= 1e-12 && ln2_err <= 1e-12,
        format!("max err {worst:.1e} over 100 datasets, ln2 case err {ln2_err:.1e}"),
    )
}

fn augmentation_conservation() -> Outcome {
    let mut r = rng(4);
    let (mut sum_err, mut multi, mut range_bad, mut support_bad) = (0.0f64, 0, 0, 0);
    for _ in 0..1000 {
        let n = r.gen_range(2..20);
        let d = r.gen_range(1..8);
        let graph = random_graph(&mut r, n, d, 1, 0);
        let probs = SpectralAugProbs {
            p: (0..d).map(|_| r.gen()).collect(),
        };
        let plan = plan_exchanges(&graph, &probs, r.next_u64()).unwrap();
        let x2 = apply_spectral_aug(&graph.features, &plan).unwrap();
        for h in 0..d {
            let before: f64 = (0..n).map(|i| graph.features.get(i, h)).sum();
            let after: f64 = (0..n).map(|i| x2.get(i, h)).sum();
            sum_err = sum_err.max((before - after).abs());
        }
        let mut seen = vec![0; n];
        for s in &plan.swaps {
            seen[s.i] += 1;
            seen[s.j] += 1;
        }
        multi += seen.iter().filter(|&&k| k > 1).count();

        let mut params = ParamStore::new();
        params.insert(AUG_W_D, random_tensor(&mut r, d, d.min(32), -1.0, 1.0));
        params.insert(AUG_LOG_TAU, Tensor::scalar(r.gen_range(-2.0..1.0)));
        let mut tape = Tape::new();
        let b = params.bind(&mut tape).unwrap();
        let vars = SpatialVars {
            w_d: b.get(AUG_W_D).unwrap(),
            log_tau: b.get(AUG_LOG_TAU).unwrap(),
        };
        let mask = sample_mask(n, r.gen(), r.next_u64()).unwrap();
        let v = apply_spatial_aug(&mut tape, &graph, vars, &mask).unwrap();
        let a = tape.value(v);
        for i in 0..n {
            for j in 0..n {
                let val = a.get(i, j);
                if !(0.0..=1.0).contains(&val) {
                    range_bad += 1;
                }
                if !graph.neighbors.contains(i, j) && val != 0.0 {
                    support_bad += 1;
                }
            }
        }
    }
    outcome(
        sum_err <= 1e-12 && multi == 0 && range_bad == 0 && support_bad == 0,
        format!(
            "column-sum drift {sum_err:.1e}, {multi} nodes in >1 exchange, {range_bad} out-of-range, \
             {support_bad} off-support entries over 1000 trials"
        ),
    )
}

fn dot(a: &Tensor, i: usize, b: &Tensor, k: usize) -> f64 {
    a.row(i).iter().zip(b.row(k)).map(|(p, q)| p * q).sum()
}

/// Both directions of the same-node InfoNCE, computed with plain exp/ln.
fn naive_unsup(zl: &Tensor, zg: &Tensor) -> f64 {
    let n = zl.rows();
    let mut total = 0.0;
    for (a, b) in [(zl, zg), (zg, zl)] {
        for i in 0..n {
            let mut denom = 0.0;
            for k in 0..n {
                denom += dot(a, i, b, k).exp();
            }
            total -= (dot(a, i, b, i).exp() / denom).ln();
        }
    }
    total / (2 * n) as f64
}

fn naive_sup(zl: &Tensor, zg: &Tensor, labeled: &[usize], classes: &[u16]) -> f64 {
    let l = labeled.len();
    let mut total = 0.0;
    for (a, b) in [(zl, zg), (zg, zl)] {
        for (ii, &i) in labeled.iter().enumerate() {
            let (mut num, mut denom) = (0.0, 0.0);
            for (kk, &k) in labeled.iter().enumerate() {
                let e = dot(a, i, b, k).exp();
                denom += e;
                if classes[ii] == classes[kk] {
                    num += e;
                }
            }
            total -= (num / denom).ln();
        }
    }
    total / (2 * l) as f64
}

fn contrastive_brute_force() -> Outcome {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = r.gen_range(1..=20);
        let c = r.gen_range(1..6);
        let zl = random_tensor(&mut r, n, c, -2.0, 2.0);
        let zg = random_tensor(&mut r, n, c, -2.0, 2.0);
        let l = r.gen_range(1..=n.min(10));
        let mut nodes: Vec<usize> = (0..n).collect();
        for k in 0..l {
            let j = r.gen_range(k..n);
            nodes.swap(k, j);
        }
        let labeled: Vec<usize> = nodes[..l].to_vec();
        let classes: Vec<u16> = (0..l).map(|_| r.gen_range(1..4)).collect();

        let mut tape = Tape::new();
        let a = tape.constant(zl.clone()).unwrap();
        let b = tape.constant(zg.clone()).unwrap();
        let u = unsup_contrastive(&mut tape, a, b).unwrap();
        let s = sup_contrastive(&mut tape, a, b, &labeled, &classes).unwrap();
        let eu = (tape.value(u).item().unwrap() - naive_unsup(&zl, &zg)).abs();
        let es = (tape.value(s).item().unwrap() - naive_sup(&zl, &zg, &labeled, &classes)).abs();
        worst = worst.max(eu).max(es);
    }
    outcome(worst <= 1e-9, format!("max |log-space - naive| {worst:.1e} over 200 instances"))
}

fn metrics_oracle() -> Outcome {
    let mut cases = 0;
    let mut mismatches = 0;
    for code in 0..6u64.pow(4) {
        let (a, b, c, d) = (code % 6, code / 6 % 6, code / 36 % 6, code / 216);
        cases += 1;
        let m = ConfusionMatrix::from_counts(&[vec![a, b], vec![c, d]]).unwrap();
        let n = a + b + c + d;
        if n == 0 {
            if m.overall_accuracy().is_ok() || m.average_accuracy().is_ok() || m.kappa().is_ok() {
                mismatches += 1;
            }
            continue;
        }
        let nf = n as f64;
        let oa = (a + d) as f64 / nf;
        let recalls: Vec<f64> = [(a, a + b), (d, c + d)]
            .iter()
            .filter(|(_, r)| *r > 0)
            .map(|&(hit, r)| hit as f64 / r as f64)
            .collect();
        let aa = recalls.iter().sum::<f64>() / recalls.len() as f64;
        let pe = ((a + b) as f64 * (a + c) as f64 + (c + d) as f64 * (b + d) as f64) / (nf * nf);
        let kappa = if pe >= 1.0 {
            if oa == 1.0 {
                1.0
            } else {
                0.0
            }
        } else {
            (oa - pe) / (1.0 - pe)
        };
        if m.overall_accuracy().unwrap() != oa || m.average_accuracy().unwrap() != aa || m.kappa().unwrap() != kappa {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches over {cases} matrices"))
}

struct RunResult {
    oa: f64,
    params: ParamStore,
    first_loss: f64,
    last_loss: f64,
}

fn run_blobs(separation: f64, seed: u64, edit: impl Fn(&mut TrainConfig)) -> RunResult {
    let spec = BlobSpec {
        separation,
        seed,
        ..BlobSpec::default()
    };
    let (cube, labels) = synth::blobs(&spec).unwrap();
    let manifest = synth::manifest("blobs", spec.classes, 10);
    let gc = GraphConfig::for_scene(&cube, spec.classes);
    let scene = build_scene(&cube, &labels, &manifest, seed, &gc).unwrap();
    let mut cfg = TrainConfig {
        iters: 500,
        seed,
        ..TrainConfig::default()
    };
    edit(&mut cfg);
    let out = train_scene(&scene, &cfg, |_| {}).unwrap();
    let ev = evaluate(&scene, &labels, &out.params, &cfg.model).unwrap();
    RunResult {
        oa: ev.report.oa,
        first_loss: out.log.first().unwrap().total,
        last_loss: out.log.last().unwrap().total,
        params: out.params,
    }
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let a = run_blobs(3.0, 0, |_| {});
    let elapsed = start.elapsed();
    let b = run_blobs(3.0, 0, |_| {});
    let deterministic = a.params == b.params && a.oa == b.oa;
    outcome(
        a.oa >= 0.95 && elapsed < Duration::from_secs(300) && deterministic,
        format!(
            "OA {:.4} (loss {:.3} -> {:.3}), {:.1}s per run, repeat run identical: {deterministic}",
            a.oa,
            a.first_loss,
            a.last_loss,
            elapsed.as_secs_f64()
        ),
    )
}

fn ablation_direction() -> Outcome {
    let seeds = 0..5u64;
    let mean = |edit: &dyn Fn(&mut TrainConfig)| -> (f64, Vec<f64>) {
        let oas: Vec<f64> = seeds.clone().map(|s| run_blobs(1.5, s, edit).oa).collect();
        (oas.iter().sum::<f64>() / oas.len() as f64, oas)
    };
    let (full, full_oas) = mean(&|_| {});
    let (no_aug, no_aug_oas) = mean(&|c| {
        c.augment.spatial = false;
        c.augment.spectral = false;
    });
    let (no_closs, no_closs_oas) = mean(&|c| c.weights.closs = false);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    outcome(
        full >= no_aug && full >= no_closs,
        format!(
            "mean OA full {full:.4} [{}], no aug {no_aug:.4} [{}], no closs {no_closs:.4} [{}]",
            fmt(&full_oas),
            fmt(&no_aug_oas),
            fmt(&no_closs_oas)
        ),
    )
}

fn main() {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient_integrity", gradient_integrity),
        ("adjacency_kernel", adjacency_oracle),
        ("edge_adjust_shape", edge_adjust_shape),
        ("mutual_information", mi_estimator),
        ("augmentation_conservation", augmentation_conservation),
        ("contrastive_brute_force", contrastive_brute_force),
        ("metrics_exhaustive", metrics_oracle),
        ("end_to_end_blobs", end_to_end),
        ("ablation_direction", ablation_direction),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let o = check();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
