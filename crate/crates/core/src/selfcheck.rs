//! Built-in verification suite: architecture conformance, AdaIN moments,
//! gradient correctness of the proposed objective, and loss identities.

use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::Result;
use crate::losses::{
    adversarial_value, cycle_loss_baseline, l1_mean, proposed_generator_objective, total_proposed, LossWeights,
    ProposedComponents,
};
use crate::models::{sample_prior, table1_conformance, ModelPair};
use crate::netblocks::{adain, grad_check, AffineVars, Tape, Tensor};
use crate::seeding::stream;

pub const ADAIN_MEAN_TOL: f64 = 1e-3;
pub const ADAIN_STD_TOL: f64 = 1e-2;
pub const GRAD_REL_TOL: f64 = 1e-3;
pub const GRAD_FD_STEP: f64 = 1e-5;
pub const IDENTITY_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    /// Per-item rows, e.g. one per architecture table entry.
    pub lines: Vec<String>,
    pub elapsed: Duration,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {} ({:.2}s): {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )?;
        for l in &self.lines {
            write!(f, "\n    {l}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct SelfCheckReport {
    pub checks: Vec<CheckOutcome>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for SelfCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        write!(f, "selfcheck: {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SelfCheckOptions {
    pub seed: u64,
    pub grad_probes: usize,
    pub adain_trials: usize,
}

impl Default for SelfCheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            grad_probes: 200,
            adain_trials: 32,
        }
    }
}

fn timed(name: &'static str, f: impl FnOnce(&mut Vec<String>) -> Result<(bool, String)>) -> CheckOutcome {
    let t0 = Instant::now();
    let mut lines = Vec::new();
    let (pass, detail) = match f(&mut lines) {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckOutcome {
        name,
        pass,
        detail,
        lines,
        elapsed: t0.elapsed(),
    }
}

/// Every layer, dense width and shape trace of both model halves.
pub fn check_conformance(seed: u64) -> CheckOutcome {
    timed("architecture", |lines| {
        let pair = ModelPair::<f32>::new(&mut stream(seed, "selfcheck/conformance"))?;
        let rep = table1_conformance(&pair);
        for r in &rep.rows {
            let mark = if r.pass { "ok" } else { "MISMATCH" };
            lines.push(format!("{mark:8} {} {}: expected {} got {}", r.network, r.item, r.expected, r.actual));
        }
        let n_fail = rep.failures().count();
        Ok((
            rep.passed() && !rep.rows.is_empty(),
            format!("{} rows, {n_fail} mismatches", rep.rows.len()),
        ))
    })
}

/// Worst deviation of AdaIN output moments from `(beta, |gamma|)` over
/// random inputs and affine parameters. Returns `(mean_err, std_err)`.
pub fn adain_moment_errors(rng: &mut impl Rng, trials: usize) -> Result<(f64, f64)> {
    let (mut mean_err, mut std_err) = (0.0f64, 0.0f64);
    let shapes = [(2, 4, 20, 5), (1, 8, 20, 80), (3, 16, 5, 5), (2, 128, 20, 5)];
    for trial in 0..trials {
        let (bn, c, h, w) = shapes[trial % shapes.len()];
        let scale = Uniform::new(0.2, 5.0).expect("valid range").sample(rng);
        let offset = Uniform::new(-3.0, 3.0).expect("valid range").sample(rng);
        let noise = Normal::new(offset, scale).expect("finite");
        let x: Vec<f64> = (0..bn * c * h * w).map(|_| noise.sample(rng)).collect();
        let aff = Uniform::new(-2.0, 2.0).expect("valid range");
        let gamma: Vec<f64> = (0..bn * c).map(|_| aff.sample(rng)).collect();
        let beta: Vec<f64> = (0..bn * c).map(|_| aff.sample(rng)).collect();

        let mut tape = Tape::<f64>::new();
        let xv = tape.input(Tensor::from_vec(&[bn, c, h, w], x)?);
        let g = tape.input(Tensor::from_vec(&[bn, c], gamma.clone())?);
        let b = tape.input(Tensor::from_vec(&[bn, c], beta.clone())?);
        let y = adain(&mut tape, xv, AffineVars { gamma: g, beta: b })?;
        let y = tape.value(y).data();
        let plane = h * w;
        for k in 0..bn * c {
            let ch = &y[k * plane..(k + 1) * plane];
            let m = ch.iter().sum::<f64>() / plane as f64;
            let s = (ch.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / plane as f64).sqrt();
            mean_err = mean_err.max((m - beta[k]).abs());
            std_err = std_err.max((s - gamma[k].abs()).abs());
        }
    }
    Ok((mean_err, std_err))
}

pub fn check_adain(seed: u64, trials: usize) -> CheckOutcome {
    timed("adain_moments", |_| {
        let (me, se) = adain_moment_errors(&mut stream(seed, "selfcheck/adain"), trials)?;
        Ok((
            me <= ADAIN_MEAN_TOL && se <= ADAIN_STD_TOL,
            format!("{trials} trials, max |mean - beta| {me:.2e}, max |std - |gamma|| {se:.2e}"),
        ))
    })
}

/// Central-difference check of the proposed generator total in f64 on a
/// batch of two random segments. Decoder AdaIN heads are randomized so
/// the domain path carries gradient.
pub fn check_gradients(seed: u64, n_probes: usize) -> CheckOutcome {
    timed("gradients", |_| {
        let mut rng = stream(seed, "selfcheck/grad");
        let mut pair = ModelPair::<f64>::new(&mut rng)?;
        for d in &mut pair.dec {
            d.randomize_head(&mut rng, 0.05);
        }
        let xa = sample_prior::<f64>(&mut rng, 400).reshape(&[2, 1, 20, 80])?;
        let xb = sample_prior::<f64>(&mut rng, 400).reshape(&[2, 1, 20, 80])?;
        let (za, zb) = (sample_prior::<f64>(&mut rng, 2), sample_prior::<f64>(&mut rng, 2));
        let w = LossWeights::default();
        let rep = grad_check(
            &mut pair,
            |m, t| {
                let x = [t.input(xa.clone()), t.input(xb.clone())];
                let z = [t.input(za.clone()), t.input(zb.clone())];
                Ok(proposed_generator_objective(t, m, x, z, &w)?.total)
            },
            n_probes,
            GRAD_FD_STEP,
            rng.random(),
        )?;
        let stores = rep.stores_probed().len();
        let mut detail = format!(
            "{} probes over {stores} networks, max relative error {:.3e}",
            rep.probes.len(),
            rep.max_rel_error
        );
        if let Some(p) = rep.worst() {
            detail.push_str(&format!(" at store {} {}[{}]", p.store, p.param, p.offset));
        }
        Ok((stores == 8 && rep.max_rel_error < GRAD_REL_TOL, detail))
    })
}

pub fn check_loss_identities(seed: u64) -> CheckOutcome {
    timed("loss_identities", |_| {
        let mut rng = stream(seed, "selfcheck/losses");
        let x: Vec<f64> = sample_prior::<f64>(&mut rng, 200).data().to_vec();
        let cyc = cycle_loss_baseline(&x, &x)?;
        let feat = l1_mean(&x, &x)?;
        let taped = {
            let mut t = Tape::<f64>::new();
            let a = t.input(Tensor::from_vec(&[1600], x.clone())?);
            let b = t.input(Tensor::from_vec(&[1600], x)?);
            let l = t.l1_mean(a, b)?;
            t.value(l).item()
        };
        let half = vec![0.5; 8];
        let adv = adversarial_value(&half, &half)?;
        let adv_err = (adv + 2.0 * std::f64::consts::LN_2).abs();
        let unit = ProposedComponents {
            adv: 1.0,
            cyc: 1.0,
            feat: [1.0; 2],
            cont: [1.0; 2],
            dom: [1.0; 2],
        };
        let total = total_proposed(&unit, &LossWeights::default())?;
        let pass = cyc == 0.0 && feat == 0.0 && taped == 0.0 && adv_err <= IDENTITY_TOL && (total - 16.0).abs() <= IDENTITY_TOL;
        Ok((
            pass,
            format!("cycle {cyc}, feature {feat}, taped l1 {taped}, adversarial(0.5) {adv:.9}, unit total {total}"),
        ))
    })
}

pub fn run_selfcheck(opts: &SelfCheckOptions) -> SelfCheckReport {
    SelfCheckReport {
        checks: vec![
            check_conformance(opts.seed),
            check_adain(opts.seed, opts.adain_trials),
            check_loss_identities(opts.seed),
            check_gradients(opts.seed, opts.grad_probes),
        ],
    }
}
