use super::adam::optimizer_update;
use super::state::{Nets, TrainState};
use crate::error::{Error, Result};
use crate::features::MelSegment;
use crate::losses::{
    cyclegan_discriminator_objective, cyclegan_generator_objective, proposed_discriminator_objective,
    proposed_generator_objective, LossBundle,
};
use crate::models::{sample_prior, segments_to_tensor};
use crate::netblocks::{Gradients, Parameterized, Tape, Tensor, Var};

fn scalar(tape: &Tape<f32>, v: Var) -> f64 {
    tape.value(v).item() as f64
}

fn non_finite(term: impl Into<String>, step: u64) -> Error {
    Error::NonFiniteLoss {
        term: term.into(),
        step,
    }
}

fn batch_tensors(a: &[MelSegment], b: &[MelSegment]) -> Result<[Tensor<f32>; 2]> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("unequal batches: {} A vs {} B segments", a.len(), b.len())));
    }
    Ok([segments_to_tensor(a)?, segments_to_tensor(b)?])
}

/// Applies `grads` to the stores in `range`, after checking every gradient
/// is finite so a failing step leaves the state untouched.
fn apply(state: &mut TrainState, grads: &Gradients<f32>, range: std::ops::Range<usize>) -> Result<()> {
    let lr = state.config.learning_rate;
    let step = state.step;
    let names = state.nets.store_names();
    let mut stores = state.nets.stores_mut();
    for i in range.clone() {
        stores[i].zero_grad();
        grads.accumulate_into(stores[i]);
        let s = &*stores[i];
        if !(0..s.len()).all(|k| s.grad(k).is_finite()) {
            return Err(non_finite(format!("grad {}", names[i]), step));
        }
    }
    for i in range {
        optimizer_update(stores[i], &mut state.moments[i], lr)?;
    }
    Ok(())
}

/// Discriminator update with generators frozen; returns `[d_loss_A, d_loss_B]`.
pub fn d_phase(state: &mut TrainState, a: &[MelSegment], b: &[MelSegment]) -> Result<[f64; 2]> {
    let x = batch_tensors(a, b)?;
    let n = a.len();
    let n_gen = state.nets.n_generator_stores();
    let n_all = state.nets.store_names().len();
    let mut d = [0.0; 2];
    for _ in 0..state.config.d_steps_per_g_step {
        let stores = state.nets.stores();
        let mut tape = Tape::with_trainable(stores[n_gen..].iter().copied());
        let xv = [tape.input(x[0].clone()), tape.input(x[1].clone())];
        let (per, sum) = match &state.nets {
            Nets::Proposed(pair) => {
                let z0 = sample_prior(&mut state.prior_rng, n);
                let z1 = sample_prior(&mut state.prior_rng, n);
                let z = [tape.input(z0), tape.input(z1)];
                proposed_discriminator_objective(&mut tape, pair, xv, z)?
            }
            Nets::Baseline(nets) => cyclegan_discriminator_objective(&mut tape, nets, xv)?,
        };
        d = [scalar(&tape, per[0]), scalar(&tape, per[1])];
        for (name, v) in [("d_loss_A", d[0]), ("d_loss_B", d[1])] {
            if !v.is_finite() {
                return Err(non_finite(name, state.step));
            }
        }
        let grads = tape.backward(sum)?;
        apply(state, &grads, n_gen..n_all)?;
    }
    Ok(d)
}

/// Generator update with discriminators frozen. `d_loss_*` are left at 0.
pub fn g_phase(state: &mut TrainState, a: &[MelSegment], b: &[MelSegment]) -> Result<LossBundle> {
    let x = batch_tensors(a, b)?;
    let n = a.len();
    let n_gen = state.nets.n_generator_stores();
    let w = state.config.weights;
    let stores = state.nets.stores();
    let mut tape = Tape::with_trainable(stores[..n_gen].iter().copied());
    let xv = [tape.input(x[0].clone()), tape.input(x[1].clone())];
    let mut bundle = LossBundle::default();
    let total = match &state.nets {
        Nets::Proposed(pair) => {
            let z0 = sample_prior(&mut state.prior_rng, n);
            let z1 = sample_prior(&mut state.prior_rng, n);
            let z = [tape.input(z0), tape.input(z1)];
            let t = proposed_generator_objective(&mut tape, pair, xv, z, &w)?;
            bundle.adv_a = scalar(&tape, t.adv[0]);
            bundle.adv_b = scalar(&tape, t.adv[1]);
            bundle.cyc_a = scalar(&tape, t.cyc[0]);
            bundle.cyc_b = scalar(&tape, t.cyc[1]);
            bundle.recon_feat_a = scalar(&tape, t.feat[0]);
            bundle.recon_feat_b = scalar(&tape, t.feat[1]);
            bundle.recon_c_a = scalar(&tape, t.cont[0]);
            bundle.recon_c_b = scalar(&tape, t.cont[1]);
            bundle.recon_d_a = scalar(&tape, t.dom[0]);
            bundle.recon_d_b = scalar(&tape, t.dom[1]);
            t.total
        }
        Nets::Baseline(nets) => {
            let t = cyclegan_generator_objective(&mut tape, nets, xv, w.lambda_cyc)?;
            bundle.adv_a = scalar(&tape, t.adv[0]);
            bundle.adv_b = scalar(&tape, t.adv[1]);
            bundle.cyc_a = scalar(&tape, t.cyc[0]);
            bundle.cyc_b = scalar(&tape, t.cyc[1]);
            t.total
        }
    };
    bundle.check_finite(state.step)?;
    bundle.total = bundle.recomputed_total(&w).map_err(|e| match e {
        Error::NonFiniteLoss { term, .. } => non_finite(term, state.step),
        other => other,
    })?;
    let grads = tape.backward(total)?;
    apply(state, &grads, 0..n_gen)?;
    Ok(bundle)
}

/// One D phase followed by one G phase on the given unpaired batches, each
/// with fresh prior samples. A failing phase leaves its own stores and the
/// step counter untouched.
pub fn train_step(state: &mut TrainState, a: &[MelSegment], b: &[MelSegment]) -> Result<LossBundle> {
    let d = d_phase(state, a, b)?;
    let mut bundle = g_phase(state, a, b)?;
    bundle.d_loss_a = d[0];
    bundle.d_loss_b = d[1];
    state.step += 1;
    Ok(bundle)
}
