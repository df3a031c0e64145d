//! Adversarial, cycle and reconstruction losses, their weighted totals, and
//! the tape objectives used by training.

mod objective;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netblocks::PROB_CLAMP;

pub use objective::{
    cyclegan_discriminator_objective, cyclegan_generator_objective, proposed_discriminator_objective,
    proposed_generator_objective, CycleGanTerms, ProposedTerms,
};

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_probs(ps: &[f64]) -> Result<()> {
    if ps.is_empty() {
        return Err(Error::shape("empty probability batch"));
    }
    match ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(p) => Err(Error::DomainError(*p)),
        None => Ok(()),
    }
}

fn mean(it: impl Iterator<Item = f64>, n: usize) -> f64 {
    it.sum::<f64>() / n as f64
}

/// `mean(ln D(real)) + mean(ln(1 - D(fake)))`, the quantity the
/// discriminator maximizes. Probabilities are clamped to
/// `[1e-7, 1 - 1e-7]`; values outside `[0, 1]` are rejected.
pub fn adversarial_value(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    check_probs(d_real)?;
    check_probs(d_fake)?;
    Ok(mean(d_real.iter().map(|p| clamp(*p).ln()), d_real.len())
        + mean(d_fake.iter().map(|p| (1.0 - clamp(*p)).ln()), d_fake.len()))
}

pub fn d_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    Ok(-adversarial_value(d_real, d_fake)?)
}

/// Non-saturating generator loss `-mean(ln D(fake))`.
pub fn g_adv_loss(d_fake: &[f64]) -> Result<f64> {
    check_probs(d_fake)?;
    Ok(-mean(d_fake.iter().map(|p| clamp(*p).ln()), d_fake.len()))
}

/// Element-mean absolute difference.
pub fn l1_mean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!("l1: {} vs {} elements", a.len(), b.len())));
    }
    Ok(mean(a.iter().zip(b).map(|(x, y)| (x - y).abs()), a.len()))
}

pub fn cycle_loss_baseline(x: &[f64], x_cycled: &[f64]) -> Result<f64> {
    l1_mean(x_cycled, x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub lambda_feat: f64,
    pub lambda_cont: f64,
    pub lambda_dom: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cyc: 1.0,
            lambda_feat: 1.0,
            lambda_cont: 1.0,
            lambda_dom: 5.0,
        }
    }
}

impl LossWeights {
    /// Weights for speaker-gender adaptation.
    pub fn gender() -> Self {
        Self {
            lambda_dom: 10.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_feat", self.lambda_feat),
            ("lambda_cont", self.lambda_cont),
            ("lambda_dom", self.lambda_dom),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// The eight terms entering the proposed model's total, with the
/// adversarial and cycle terms already summed over both domains.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProposedComponents {
    pub adv: f64,
    pub cyc: f64,
    pub feat: [f64; 2],
    pub cont: [f64; 2],
    pub dom: [f64; 2],
}

impl ProposedComponents {
    fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("adv", self.adv),
            ("cyc", self.cyc),
            ("recon_feat_A", self.feat[0]),
            ("recon_feat_B", self.feat[1]),
            ("recon_c_A", self.cont[0]),
            ("recon_c_B", self.cont[1]),
            ("recon_d_A", self.dom[0]),
            ("recon_d_B", self.dom[1]),
        ]
    }
}

fn first_non_finite<'a>(terms: impl IntoIterator<Item = (&'a str, f64)>, step: u64) -> Result<()> {
    match terms.into_iter().find(|(_, v)| !v.is_finite()) {
        Some((term, _)) => Err(Error::NonFiniteLoss {
            term: term.to_string(),
            step,
        }),
        None => Ok(()),
    }
}

/// `L_adv + l_cyc L_cyc + l_feat (L_feat_A + L_feat_B)
///  + l_cont (L_c_A + L_c_B) + l_dom (L_d_A + L_d_B)`.
pub fn total_proposed(c: &ProposedComponents, w: &LossWeights) -> Result<f64> {
    first_non_finite(c.named(), 0)?;
    Ok(c.adv
        + w.lambda_cyc * c.cyc
        + w.lambda_feat * (c.feat[0] + c.feat[1])
        + w.lambda_cont * (c.cont[0] + c.cont[1])
        + w.lambda_dom * (c.dom[0] + c.dom[1]))
}

/// `adv_XY + adv_YX + lambda_cyc * cyc`.
pub fn total_cyclegan(adv_xy: f64, adv_yx: f64, cyc: f64, lambda_cyc: f64) -> Result<f64> {
    first_non_finite([("adv_XY", adv_xy), ("adv_YX", adv_yx), ("cyc", cyc)], 0)?;
    Ok(adv_xy + adv_yx + lambda_cyc * cyc)
}

/// Named loss terms of one training step. For the baseline only the
/// adversarial and cycle terms are populated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    #[serde(rename = "adv_A")]
    pub adv_a: f64,
    #[serde(rename = "adv_B")]
    pub adv_b: f64,
    #[serde(rename = "cyc_A")]
    pub cyc_a: f64,
    #[serde(rename = "cyc_B")]
    pub cyc_b: f64,
    #[serde(rename = "recon_feat_A")]
    pub recon_feat_a: f64,
    #[serde(rename = "recon_feat_B")]
    pub recon_feat_b: f64,
    #[serde(rename = "recon_c_A")]
    pub recon_c_a: f64,
    #[serde(rename = "recon_c_B")]
    pub recon_c_b: f64,
    #[serde(rename = "recon_d_A")]
    pub recon_d_a: f64,
    #[serde(rename = "recon_d_B")]
    pub recon_d_b: f64,
    pub total: f64,
    #[serde(rename = "d_loss_A")]
    pub d_loss_a: f64,
    #[serde(rename = "d_loss_B")]
    pub d_loss_b: f64,
}

impl LossBundle {
    pub fn components(&self) -> ProposedComponents {
        ProposedComponents {
            adv: self.adv_a + self.adv_b,
            cyc: self.cyc_a + self.cyc_b,
            feat: [self.recon_feat_a, self.recon_feat_b],
            cont: [self.recon_c_a, self.recon_c_b],
            dom: [self.recon_d_a, self.recon_d_b],
        }
    }

    /// Total recomputed from the components.
    pub fn recomputed_total(&self, w: &LossWeights) -> Result<f64> {
        total_proposed(&self.components(), w)
    }

    pub fn named(&self) -> [(&'static str, f64); 13] {
        [
            ("adv_A", self.adv_a),
            ("adv_B", self.adv_b),
            ("cyc_A", self.cyc_a),
            ("cyc_B", self.cyc_b),
            ("recon_feat_A", self.recon_feat_a),
            ("recon_feat_B", self.recon_feat_b),
            ("recon_c_A", self.recon_c_a),
            ("recon_c_B", self.recon_c_b),
            ("recon_d_A", self.recon_d_a),
            ("recon_d_B", self.recon_d_b),
            ("total", self.total),
            ("d_loss_A", self.d_loss_a),
            ("d_loss_B", self.d_loss_b),
        ]
    }

    /// Fails with the first non-finite term.
    pub fn check_finite(&self, step: u64) -> Result<()> {
        first_non_finite(self.named(), step)
    }
}

/// One line of the JSON-lines loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    #[serde(flatten)]
    pub losses: LossBundle,
}

impl LossRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("loss records are plain numbers")
    }
}

#[cfg(test)]
mod tests;
