use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::models::{sample_prior, ModelPair};
use crate::netblocks::{Parameterized, Tape, Tensor};

const LN2: f64 = std::f64::consts::LN_2;

#[test]
fn adversarial_value_at_half() {
    let half = [0.5; 4];
    assert!((adversarial_value(&half, &half).unwrap() + 2.0 * LN2).abs() < 1e-12);
    assert!((d_loss(&half, &half).unwrap() - 2.0 * LN2).abs() < 1e-12);
    assert!((g_adv_loss(&half).unwrap() - LN2).abs() < 1e-12);
}

#[test]
fn adversarial_limits_and_clamp() {
    let v = adversarial_value(&[1.0 - 1e-9], &[1e-9]).unwrap();
    assert!(v <= 0.0 && v > -1e-6);
    assert!(d_loss(&[1.0], &[0.0]).unwrap() < 1e-6);
    assert!(g_adv_loss(&[1.0]).unwrap() < 1e-6);
    let v = adversarial_value(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
    assert!(v.is_finite());
    assert!(matches!(adversarial_value(&[1.5], &[0.5]), Err(Error::DomainError(_))));
    assert!(matches!(g_adv_loss(&[f64::NAN]), Err(Error::DomainError(_))));
}

#[test]
fn generator_and_discriminator_are_coupled() {
    let real = [0.7, 0.8];
    let mut prev: Option<(f64, f64)> = None;
    for k in 1..20 {
        let f = k as f64 / 20.0;
        let (g, d) = (g_adv_loss(&[f, f]).unwrap(), d_loss(&real, &[f, f]).unwrap());
        if let Some((pg, pd)) = prev {
            assert!(g < pg && d > pd);
        }
        prev = Some((g, d));
    }
}

#[test]
fn cycle_loss_cases() {
    assert_eq!(cycle_loss_baseline(&[1.0, -1.0], &[2.0, -2.0]).unwrap(), 1.0);
    assert_eq!(cycle_loss_baseline(&[0.3, 4.0], &[0.3, 4.0]).unwrap(), 0.0);
    let x = [0.5, -2.0, 3.0];
    let up: Vec<f64> = x.iter().map(|v| v + 0.25).collect();
    let down: Vec<f64> = x.iter().map(|v| v - 0.25).collect();
    assert_eq!(cycle_loss_baseline(&x, &up).unwrap(), cycle_loss_baseline(&x, &down).unwrap());
    assert!(matches!(l1_mean(&[1.0], &[1.0, 2.0]), Err(Error::ShapeMismatch(_))));
}

fn unit() -> ProposedComponents {
    ProposedComponents {
        adv: 1.0,
        cyc: 1.0,
        feat: [1.0; 2],
        cont: [1.0; 2],
        dom: [1.0; 2],
    }
}

#[test]
fn total_proposed_by_hand() {
    assert_eq!(total_proposed(&unit(), &LossWeights::default()).unwrap(), 16.0);
    assert_eq!(total_proposed(&unit(), &LossWeights::gender()).unwrap(), 26.0);
    assert_eq!(total_proposed(&ProposedComponents::default(), &LossWeights::default()).unwrap(), 0.0);
    let bad = ProposedComponents {
        cont: [1.0, f64::NAN],
        ..unit()
    };
    match total_proposed(&bad, &LossWeights::default()) {
        Err(Error::NonFiniteLoss { term, .. }) => assert_eq!(term, "recon_c_B"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn total_proposed_is_linear_in_each_component() {
    let w = LossWeights {
        lambda_cyc: 2.0,
        lambda_feat: 3.0,
        lambda_cont: 0.5,
        lambda_dom: 7.0,
    };
    let expected = [1.0, 2.0, 3.0, 3.0, 0.5, 0.5, 7.0, 7.0];
    for (k, slope) in expected.iter().enumerate() {
        let at = |v: f64| {
            let mut c = unit();
            match k {
                0 => c.adv = v,
                1 => c.cyc = v,
                2 | 3 => c.feat[k - 2] = v,
                4 | 5 => c.cont[k - 4] = v,
                _ => c.dom[k - 6] = v,
            }
            total_proposed(&c, &w).unwrap()
        };
        assert!(((at(3.0) - at(1.0)) / 2.0 - slope).abs() < 1e-12);
    }
}

#[test]
fn total_cyclegan_by_hand() {
    assert_eq!(total_cyclegan(1.0, 1.0, 1.0, 1.0).unwrap(), 3.0);
    assert_eq!(total_cyclegan(0.0, 0.0, 0.0, 1.0).unwrap(), 0.0);
    assert_eq!(total_cyclegan(0.0, 0.0, 0.5, 10.0).unwrap(), 5.0);
    assert!(total_cyclegan(f64::INFINITY, 0.0, 0.0, 1.0).is_err());
}

#[test]
fn loss_record_json_fields() {
    let b = LossBundle {
        adv_a: 1.0,
        d_loss_b: 2.0,
        ..Default::default()
    };
    let line = LossRecord { step: 7, losses: b }.to_json_line();
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    for key in [
        "step", "adv_A", "adv_B", "cyc_A", "cyc_B", "recon_feat_A", "recon_feat_B", "recon_c_A", "recon_c_B",
        "recon_d_A", "recon_d_B", "total", "d_loss_A", "d_loss_B",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["step"], 7);
    assert_eq!(v["adv_A"], 1.0);
    let back: LossRecord = serde_json::from_str(&line).unwrap();
    assert_eq!(back.losses, b);
}

/// `E|Z - c|` for standard normal `Z` by trapezoidal integration.
fn expected_abs_dev(c: f64) -> f64 {
    let (lo, hi, n) = (-12.0, 12.0, 200_000);
    let h = (hi - lo) / n as f64;
    (0..=n)
        .map(|i| {
            let z = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * (z - c).abs() * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
        })
        .sum::<f64>()
        * h
}

#[test]
fn domain_reconstruction_against_constant_encoder_matches_oracle() {
    let c0 = [0.0, 0.5, -1.0, 2.0, 0.25, -0.3, 1.5, -2.5];
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let z: Tensor<f64> = sample_prior(&mut rng, n);
    let consts = Tensor::from_vec(&[n, 8], c0.iter().cycle().take(n * 8).copied().collect()).unwrap();
    let mut tape = Tape::new();
    let (a, b) = (tape.input(consts), tape.input(z));
    let l = tape.l1_mean(a, b).unwrap();
    let got = tape.value(l).item();
    let oracle = c0.iter().map(|c| expected_abs_dev(*c)).sum::<f64>() / 8.0;
    assert!((got - oracle).abs() / oracle < 0.02, "{got} vs {oracle}");
}

fn batch(n: usize, seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    sample_prior::<f64>(&mut r, n * 200).reshape(&[n, 1, 20, 80]).unwrap()
}

fn small_pair(seed: u64) -> ModelPair<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelPair::<f64>::new(&mut r).unwrap();
    for d in &mut p.dec {
        d.randomize_head(&mut r, 0.05);
    }
    p
}

#[test]
fn constant_domain_encoder_gives_direct_l1_term() {
    let mut p = small_pair(3);
    let c0 = [0.1, -0.2, 0.3, -0.4, 0.5, -0.6, 0.7, -0.8];
    let enc = &mut p.enc_d[0].store;
    for i in 0..enc.len() {
        enc.value_mut(i).fill(0.0);
    }
    enc.get_mut("dense.3.b").unwrap().data_mut().copy_from_slice(&c0);
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let z = [sample_prior::<f64>(&mut r, 2), sample_prior::<f64>(&mut r, 2)];
    let mut tape = Tape::new();
    let xa = tape.input(batch(2, 5));
    let xb = tape.input(batch(2, 6));
    let za = tape.input(z[0].clone());
    let zb = tape.input(z[1].clone());
    let terms = proposed_generator_objective(&mut tape, &p, [xa, xb], [za, zb], &LossWeights::default()).unwrap();
    let consts: Vec<f64> = c0.iter().cycle().take(16).copied().collect();
    let direct = l1_mean(&consts, z[0].data()).unwrap();
    assert!((tape.value(terms.dom[0]).item() - direct).abs() < 1e-12);
}

#[test]
fn logged_total_matches_recomputed_sum() {
    let p = small_pair(8);
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let w = LossWeights::gender();
    let mut tape = Tape::new();
    let xa = tape.input(batch(2, 10));
    let xb = tape.input(batch(2, 11));
    let za = tape.input(sample_prior(&mut r, 2));
    let zb = tape.input(sample_prior(&mut r, 2));
    let t = proposed_generator_objective(&mut tape, &p, [xa, xb], [za, zb], &w).unwrap();
    let v = |x| tape.value(x).item();
    let c = ProposedComponents {
        adv: v(t.adv[0]) + v(t.adv[1]),
        cyc: v(t.cyc[0]) + v(t.cyc[1]),
        feat: [v(t.feat[0]), v(t.feat[1])],
        cont: [v(t.cont[0]), v(t.cont[1])],
        dom: [v(t.dom[0]), v(t.dom[1])],
    };
    assert!((total_proposed(&c, &w).unwrap() - v(t.total)).abs() < 1e-9);
    for x in [t.cyc, t.feat, t.cont, t.dom].concat() {
        assert!(v(x) >= 0.0);
    }
}

#[test]
fn cycle_gradient_reaches_both_decoders_and_context_encoders() {
    let mut p = small_pair(12);
    let mut r = ChaCha8Rng::seed_from_u64(13);
    let (za, zb) = (sample_prior::<f64>(&mut r, 2), sample_prior::<f64>(&mut r, 2));
    let grads = {
        let mut tape = Tape::with_trainable(p.stores());
        let xa = tape.input(batch(2, 14));
        let xb = tape.input(batch(2, 15));
        let za = tape.input(za);
        let zb = tape.input(zb);
        let t = proposed_generator_objective(&mut tape, &p, [xa, xb], [za, zb], &LossWeights::default()).unwrap();
        tape.backward(t.cyc[0]).unwrap()
    };
    for s in p.stores_mut() {
        grads.accumulate_into(s);
    }
    let norm = |s: &crate::netblocks::ParamStore<f64>| -> f64 {
        (0..s.len()).map(|i| s.grad(i).data().iter().map(|g| g * g).sum::<f64>()).sum()
    };
    for s in [&p.dec[0].store, &p.dec[1].store, &p.enc_c[0].store, &p.enc_c[1].store] {
        assert!(norm(s) > 0.0);
    }
    // discriminators are not on the cycle path
    assert_eq!(norm(&p.disc[0].store), 0.0);
}
