//! Finite-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BranchLog, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Denominator floor for relative errors; gradients below this magnitude are
/// compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Anything that owns parameter stores.
pub trait Parameterized<T> {
    fn stores(&self) -> Vec<&ParamStore<T>>;
    fn stores_mut(&mut self) -> Vec<&mut ParamStore<T>>;
}

impl<T> Parameterized<T> for ParamStore<T> {
    fn stores(&self) -> Vec<&ParamStore<T>> {
        vec![self]
    }
    fn stores_mut(&mut self) -> Vec<&mut ParamStore<T>> {
        vec![self]
    }
}

impl<T> Parameterized<T> for Vec<ParamStore<T>> {
    fn stores(&self) -> Vec<&ParamStore<T>> {
        self.iter().collect()
    }
    fn stores_mut(&mut self) -> Vec<&mut ParamStore<T>> {
        self.iter_mut().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub store: usize,
    pub param: String,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    /// Distinct store indices that were probed.
    pub fn stores_probed(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.probes.iter().map(|p| p.store).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn eval<M, F>(model: &M, f: &F, branches: &BranchLog) -> Result<f64>
where
    M: Parameterized<f64>,
    F: Fn(&M, &mut Tape<f64>) -> Result<Var>,
{
    let mut tape = Tape::replaying(branches);
    let loss = f(model, &mut tape)?;
    let v = tape.value(loss).item();
    if !v.is_finite() {
        return Err(Error::NonFiniteLoss {
            term: "grad_check objective".into(),
            step: 0,
        });
    }
    Ok(v)
}

/// Compares reverse-mode gradients of the scalar `f` against central finite
/// differences at `n_probes` random coordinates, spread round-robin over the
/// model's non-empty stores. Returns the per-probe report.
///
/// Perturbed evaluations replay the kink branches of the unperturbed pass
/// (see [`BranchLog`]), so a step that crosses a ReLU or L1 kink still
/// differentiates the piece the analytic gradient belongs to.
pub fn grad_check<M, F>(model: &mut M, f: F, n_probes: usize, eps_fd: f64, seed: u64) -> Result<GradCheckReport>
where
    M: Parameterized<f64>,
    F: Fn(&M, &mut Tape<f64>) -> Result<Var>,
{
    for s in model.stores_mut() {
        s.zero_grad();
    }
    let grads = {
        let mut tape = Tape::with_trainable(model.stores());
        let loss = f(model, &mut tape)?;
        if !tape.value(loss).item().is_finite() {
            return Err(Error::NonFiniteLoss {
                term: "grad_check objective".into(),
                step: 0,
            });
        }
        tape.backward(loss)?
    };
    for s in model.stores_mut() {
        grads.accumulate_into(s);
    }

    let candidates: Vec<usize> = model
        .stores()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.numel() > 0)
        .map(|(i, _)| i)
        .collect();
    let mut report = GradCheckReport::default();
    if candidates.is_empty() {
        return Ok(report);
    }
    let branches = {
        let mut tape = Tape::recording_branches();
        f(model, &mut tape)?;
        tape.take_branches().unwrap_or_default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in 0..n_probes {
        let si = candidates[p % candidates.len()];
        let (pi, offset, analytic, name) = {
            let store = model.stores()[si];
            let mut flat = rng.random_range(0..store.numel());
            let mut pi = 0;
            while flat >= store.value(pi).numel() {
                flat -= store.value(pi).numel();
                pi += 1;
            }
            (pi, flat, store.grad(pi).data()[flat], store.name(pi).to_string())
        };
        let orig = model.stores()[si].value(pi).data()[offset];
        model.stores_mut()[si].value_mut(pi).data_mut()[offset] = orig + eps_fd;
        let up = eval(model, &f, &branches);
        model.stores_mut()[si].value_mut(pi).data_mut()[offset] = orig - eps_fd;
        let down = eval(model, &f, &branches);
        model.stores_mut()[si].value_mut(pi).data_mut()[offset] = orig;
        let numeric = (up? - down?) / (2.0 * eps_fd);
        let rel_error = relative_error(analytic, numeric);
        report.max_rel_error = report.max_rel_error.max(rel_error);
        report.probes.push(Probe {
            store: si,
            param: name,
            offset,
            analytic,
            numeric,
            rel_error,
        });
    }
    Ok(report)
}
