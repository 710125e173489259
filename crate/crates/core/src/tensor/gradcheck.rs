//! Central finite-difference verification of tape gradients.

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::{Bindings, ParamStore, Tape, Var};

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Entries skipped because a kink lies within one step of them.
    pub excluded: usize,
    /// `(name, checked, excluded)` per parameter, in store order.
    pub per_param: Vec<(String, usize, usize)>,
}

struct Probe {
    value: f64,
    signature: u64,
}

fn evaluate<F>(f: &F, params: &ParamStore) -> Result<(Tape, Bindings, Var, Probe)>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let loss = f(&mut tape, &bound)?;
    let value = tape.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "finite_diff_check" });
    }
    let signature = tape.branch_signature();
    Ok((tape, bound, loss, Probe { value, signature }))
}

/// Compares reverse-mode gradients of `f` with central differences of
/// step `step` for every scalar in `params`.
///
/// Relative error per entry is `|a - n| / max(|a|, |n|, 1e-8)`. An entry is
/// excluded when the probes at `+step`, `-step` and the base point do not all
/// share one branch signature, i.e. some relu, clamp, min/max or piecewise
/// edge weight switches pieces inside the probe interval.
pub fn finite_diff_check<F>(f: F, params: &ParamStore, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var> + Sync,
{
    if !(step > 0.0) {
        return Err(Error::Param(format!("step must be > 0, got {step}")));
    }
    let (mut tape, bound, loss, base) = evaluate(&f, params)?;
    tape.backward(loss)?;
    let analytic = bound.gradients(&tape);

    let entries: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, (_, t))| (0..t.len()).map(move |k| (p, k)))
        .collect();

    let results = entries
        .par_iter()
        .map(|&(p, k)| -> Result<Option<f64>> {
            let probe = |delta: f64| -> Result<Probe> {
                let mut shifted = params.clone();
                shifted.values_mut()[p].data_mut()[k] += delta;
                evaluate(&f, &shifted).map(|(_, _, _, probe)| probe)
            };
            let plus = probe(step)?;
            let minus = probe(-step)?;
            if plus.signature != base.signature || minus.signature != base.signature {
                return Ok(None);
            }
            let numeric = (plus.value - minus.value) / (2.0 * step);
            let a = analytic.values()[p].data()[k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            Ok(Some((a - numeric).abs() / denom))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = GradCheckReport {
        per_param: params.names().iter().map(|n| (n.clone(), 0, 0)).collect(),
        ..Default::default()
    };
    for (&(p, k), r) in entries.iter().zip(results) {
        match r {
            None => {
                report.excluded += 1;
                report.per_param[p].2 += 1;
            }
            Some(err) => {
                report.checked += 1;
                report.per_param[p].1 += 1;
                if report.worst.is_none() || err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = Some((params.names()[p].clone(), k));
                }
            }
        }
    }
    Ok(report)
}
