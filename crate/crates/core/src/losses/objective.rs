//! Loss graphs recorded on a tape.

use super::LossWeights;
use crate::error::Result;
use crate::models::{ModelPair, Side, UNetGenerators};
use crate::netblocks::{Scalar, Tape, Var};

/// Loss vars of the proposed model's generator phase, indexed by
/// [`Side::index`]. `adv[t]` and `dom[t]` come from the translation into
/// domain `t`; `cyc[s]`, `cont[s]` and `feat[s]` belong to source domain `s`.
#[derive(Clone, Copy, Debug)]
pub struct ProposedTerms {
    pub adv: [Var; 2],
    pub cyc: [Var; 2],
    pub feat: [Var; 2],
    pub cont: [Var; 2],
    pub dom: [Var; 2],
    pub total: Var,
}

fn g_adv<T: Scalar>(tape: &mut Tape<T>, p_fake: Var) -> Result<Var> {
    let l = tape.log_prob(p_fake, false);
    let m = tape.mean(l);
    tape.weighted_sum(&[(m, -1.0)])
}

fn d_loss<T: Scalar>(tape: &mut Tape<T>, p_real: Var, p_fake: Var) -> Result<Var> {
    let lr = tape.log_prob(p_real, false);
    let lr = tape.mean(lr);
    let lf = tape.log_prob(p_fake, true);
    let lf = tape.mean(lf);
    tape.weighted_sum(&[(lr, -1.0), (lf, -1.0)])
}

/// Records every generator-side term for real batches `x[A], x[B]` and
/// prior-sampled target codes `z[A], z[B]`:
///
/// - `x_st = Dec_t(Enc_s^c(x_s), z_t)`
/// - `adv[t] = -mean ln D_t(x_st)`
/// - `cyc[s] = |Dec_s(Enc_t^c(x_st), Enc_s^d(x_s)) - x_s|`
/// - `feat[s] = |Dec_s(Enc_s^c(x_s), Enc_s^d(x_s)) - x_s|`
/// - `cont[s] = |Enc_t^c(x_st) - Enc_s^c(x_s)|`
/// - `dom[t] = |Enc_t^d(x_st) - z_t|`
pub fn proposed_generator_objective<T: Scalar>(
    tape: &mut Tape<T>,
    pair: &ModelPair<T>,
    x: [Var; 2],
    z: [Var; 2],
    w: &LossWeights,
) -> Result<ProposedTerms> {
    let mut c = Vec::with_capacity(2);
    let mut d = Vec::with_capacity(2);
    let mut feat = Vec::with_capacity(2);
    for s in Side::BOTH {
        let i = s.index();
        let ci = pair.enc_c[i].forward(tape, x[i])?;
        let di = pair.enc_d[i].forward(tape, x[i])?;
        let rec = pair.dec[i].forward(tape, ci, di)?;
        feat.push(tape.l1_mean(rec, x[i])?);
        c.push(ci);
        d.push(di);
    }
    let mut adv = [feat[0]; 2];
    let mut dom = [feat[0]; 2];
    let mut cyc = [feat[0]; 2];
    let mut cont = [feat[0]; 2];
    for s in Side::BOTH {
        let (i, t) = (s.index(), s.other().index());
        let x_st = pair.dec[t].forward(tape, c[i], z[t])?;
        let p = pair.disc[t].forward(tape, x_st)?;
        adv[t] = g_adv(tape, p)?;
        let d_st = pair.enc_d[t].forward(tape, x_st)?;
        dom[t] = tape.l1_mean(d_st, z[t])?;
        let c_st = pair.enc_c[t].forward(tape, x_st)?;
        cont[i] = tape.l1_mean(c_st, c[i])?;
        let back = pair.dec[i].forward(tape, c_st, d[i])?;
        cyc[i] = tape.l1_mean(back, x[i])?;
    }
    let feat = [feat[0], feat[1]];
    let total = tape.weighted_sum(&[
        (adv[0], 1.0),
        (adv[1], 1.0),
        (cyc[0], w.lambda_cyc),
        (cyc[1], w.lambda_cyc),
        (feat[0], w.lambda_feat),
        (feat[1], w.lambda_feat),
        (cont[0], w.lambda_cont),
        (cont[1], w.lambda_cont),
        (dom[0], w.lambda_dom),
        (dom[1], w.lambda_dom),
    ])?;
    Ok(ProposedTerms {
        adv,
        cyc,
        feat,
        cont,
        dom,
        total,
    })
}

/// `d_loss[t] = -(mean ln D_t(x_t) + mean ln(1 - D_t(x_st)))` with
/// `x_st = Dec_t(Enc_s^c(x_s), z_t)`. Returns the per-domain losses and
/// their sum.
pub fn proposed_discriminator_objective<T: Scalar>(
    tape: &mut Tape<T>,
    pair: &ModelPair<T>,
    x: [Var; 2],
    z: [Var; 2],
) -> Result<([Var; 2], Var)> {
    let mut out = [x[0]; 2];
    for s in Side::BOTH {
        let (i, t) = (s.index(), s.other().index());
        let c = pair.enc_c[i].forward(tape, x[i])?;
        let fake = pair.dec[t].forward(tape, c, z[t])?;
        let p_real = pair.disc[t].forward(tape, x[t])?;
        let p_fake = pair.disc[t].forward(tape, fake)?;
        out[t] = d_loss(tape, p_real, p_fake)?;
    }
    let sum = tape.weighted_sum(&[(out[0], 1.0), (out[1], 1.0)])?;
    Ok((out, sum))
}

/// Baseline generator terms. `adv[t]` scores `G(x_s)` with `D_t`;
/// `cyc[s] = |G_ts(G_st(x_s)) - x_s|`.
#[derive(Clone, Copy, Debug)]
pub struct CycleGanTerms {
    pub adv: [Var; 2],
    pub cyc: [Var; 2],
    pub total: Var,
}

pub fn cyclegan_generator_objective<T: Scalar>(
    tape: &mut Tape<T>,
    nets: &UNetGenerators<T>,
    x: [Var; 2],
    lambda_cyc: f64,
) -> Result<CycleGanTerms> {
    let mut adv = [x[0]; 2];
    let mut cyc = [x[0]; 2];
    for s in Side::BOTH {
        let (i, t) = (s.index(), s.other().index());
        let fake = nets.g[i].forward(tape, x[i])?;
        let p = nets.disc[t].forward(tape, fake)?;
        adv[t] = g_adv(tape, p)?;
        let back = nets.g[t].forward(tape, fake)?;
        cyc[i] = tape.l1_mean(back, x[i])?;
    }
    let total = tape.weighted_sum(&[
        (adv[0], 1.0),
        (adv[1], 1.0),
        (cyc[0], lambda_cyc),
        (cyc[1], lambda_cyc),
    ])?;
    Ok(CycleGanTerms { adv, cyc, total })
}

pub fn cyclegan_discriminator_objective<T: Scalar>(
    tape: &mut Tape<T>,
    nets: &UNetGenerators<T>,
    x: [Var; 2],
) -> Result<([Var; 2], Var)> {
    let mut out = [x[0]; 2];
    for s in Side::BOTH {
        let (i, t) = (s.index(), s.other().index());
        let fake = nets.g[i].forward(tape, x[i])?;
        let p_real = nets.disc[t].forward(tape, x[t])?;
        let p_fake = nets.disc[t].forward(tape, fake)?;
        out[t] = d_loss(tape, p_real, p_fake)?;
    }
    let sum = tape.weighted_sum(&[(out[0], 1.0), (out[1], 1.0)])?;
    Ok((out, sum))
}
