use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sda_core::losses::{
    cyclegan_discriminator_objective, cyclegan_generator_objective, proposed_discriminator_objective,
    proposed_generator_objective, LossWeights,
};
use sda_core::models::{sample_prior, ModelPair, UNetGenerators};
use sda_core::netblocks::{grad_check, Padding, ParamStore, Tape, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn batch(n: usize, seed: u64) -> Tensor<f64> {
    sample_prior::<f64>(&mut rng(seed), n * 200).reshape(&[n, 1, 20, 80]).unwrap()
}

fn pair(seed: u64) -> ModelPair<f64> {
    let mut r = rng(seed);
    let mut p = ModelPair::<f64>::new(&mut r).unwrap();
    for d in &mut p.dec {
        d.randomize_head(&mut r, 0.05);
    }
    p
}

#[test]
fn quadratic_is_exact() {
    let mut store = ParamStore::<f64>::new();
    store
        .insert("w", Tensor::from_vec(&[5], vec![0.3, -1.2, 2.0, 0.01, -0.7]).unwrap())
        .unwrap();
    let rep = grad_check(
        &mut store,
        |s, t| {
            let w = t.param(s, 0);
            // sum w^2 = |w * w| via channel affine on a 1x5x1x1 map
            let x = t.reshape(w, &[1, 5, 1, 1])?;
            let g = t.reshape(w, &[1, 5])?;
            let zero = t.input(Tensor::zeros(&[1, 5]));
            let y = t.channel_affine(x, g, zero)?;
            let m = t.mean(y);
            t.weighted_sum(&[(m, 5.0)])
        },
        5,
        1e-5,
        1,
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-7, "{rep:?}");
}

#[test]
fn constant_objective_has_zero_gradient() {
    let mut store = ParamStore::<f64>::new();
    store.insert("w", Tensor::full(&[3], 0.5)).unwrap();
    let rep = grad_check(&mut store, |_, t| Ok(t.input(Tensor::scalar(4.0))), 3, 1e-5, 2).unwrap();
    for p in &rep.probes {
        assert_eq!(p.analytic, 0.0);
        assert!(p.numeric.abs() <= 1e-9);
    }
}

#[test]
fn small_conv_net_with_l1() {
    let mut r = rng(3);
    let mut store = ParamStore::<f64>::new();
    let w1 = sda_core::netblocks::he_truncated_normal(&[4, 1, 3, 3], 9, &mut r);
    let w2 = sda_core::netblocks::he_truncated_normal(&[2, 4, 3, 3], 36, &mut r);
    store.insert("w1", w1).unwrap();
    store.insert("b1", Tensor::full(&[4], 0.1)).unwrap();
    store.insert("w2", w2).unwrap();
    store.insert("b2", Tensor::full(&[2], -0.1)).unwrap();
    let x = sample_prior::<f64>(&mut r, 2 * 64 / 8).reshape(&[2, 1, 8, 8]).unwrap();
    let target = sample_prior::<f64>(&mut r, 2 * 2 * 16 / 8).reshape(&[2, 2, 4, 4]).unwrap();
    let rep = grad_check(
        &mut store,
        |s, t| {
            let x = t.input(x.clone());
            let tg = t.input(target.clone());
            let (w1, b1, w2, b2) = (t.param(s, 0), t.param(s, 1), t.param(s, 2), t.param(s, 3));
            let h = t.conv2d(x, w1, b1, (2, 2), Padding::Zero)?;
            let h = t.leaky_relu(h, 0.2);
            let y = t.conv2d(h, w2, b2, (1, 1), Padding::Replicate)?;
            t.l1_mean(y, tg)
        },
        40,
        1e-5,
        4,
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-3, "{:?}", rep.worst());
}

#[test]
fn proposed_total_gradients_span_all_networks() {
    let mut p = pair(21);
    let (xa, xb) = (batch(2, 22), batch(2, 23));
    let mut r = rng(24);
    let (za, zb) = (sample_prior::<f64>(&mut r, 2), sample_prior::<f64>(&mut r, 2));
    let w = LossWeights::default();
    let t0 = std::time::Instant::now();
    let rep = grad_check(
        &mut p,
        |m, t| {
            let x = [t.input(xa.clone()), t.input(xb.clone())];
            let z = [t.input(za.clone()), t.input(zb.clone())];
            let g = proposed_generator_objective(t, m, x, z, &w)?;
            let (_, d) = proposed_discriminator_objective(t, m, x, z)?;
            t.weighted_sum(&[(g.total, 1.0), (d, 1.0)])
        },
        48,
        1e-5,
        25,
    )
    .unwrap();
    eprintln!("48 probes in {:?}, worst {:?}", t0.elapsed(), rep.worst());
    assert_eq!(rep.stores_probed(), (0..8).collect::<Vec<_>>());
    assert!(rep.max_rel_error < 1e-3, "{:?}", rep.worst());
}

#[test]
fn cyclegan_gradients() {
    let mut u = UNetGenerators::<f64>::new(&mut rng(31)).unwrap();
    let (xa, xb) = (batch(2, 32), batch(2, 33));
    let rep = grad_check(
        &mut u,
        |m, t| {
            let x = [t.input(xa.clone()), t.input(xb.clone())];
            let g = cyclegan_generator_objective(t, m, x, 10.0)?;
            let (_, d) = cyclegan_discriminator_objective(t, m, x)?;
            t.weighted_sum(&[(g.total, 1.0), (d, 1.0)])
        },
        24,
        1e-5,
        34,
    )
    .unwrap();
    assert_eq!(rep.stores_probed(), vec![0, 1, 2, 3]);
    assert!(rep.max_rel_error < 1e-3, "{:?}", rep.worst());
}

#[test]
fn frozen_tape_leaves_other_stores_untouched() {
    let mut p = pair(41);
    let (xa, xb) = (batch(2, 42), batch(2, 43));
    let mut r = rng(44);
    let (za, zb) = (sample_prior::<f64>(&mut r, 2), sample_prior::<f64>(&mut r, 2));
    let grads = {
        let mut t = Tape::with_trainable(p.discriminator_stores());
        let x = [t.input(xa), t.input(xb)];
        let z = [t.input(za), t.input(zb)];
        let (_, d) = proposed_discriminator_objective(&mut t, &p, x, z).unwrap();
        t.backward(d).unwrap()
    };
    use sda_core::netblocks::Parameterized;
    for s in p.stores_mut() {
        grads.accumulate_into(s);
    }
    for (i, s) in p.stores().into_iter().enumerate() {
        let n: f64 = (0..s.len()).map(|k| s.grad(k).data().iter().map(|g| g.abs()).sum::<f64>()).sum();
        if i < 6 {
            assert_eq!(n, 0.0, "store {i}");
        } else {
            assert!(n > 0.0, "store {i}");
        }
    }
}
