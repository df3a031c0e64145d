use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::data::{BatchSampler, ToyBands};
use crate::features::{MelSegment, MelSpectrogram, NormStats};
use crate::losses::LossBundle;
use crate::netblocks::Parameterized;
use crate::seeding;

fn corpus(seed: u64, n: usize) -> Vec<MelSpectrogram> {
    let mut rng = seeding::stream(seed, "corpus");
    (0..n)
        .map(|_| {
            let values = (0..30 * 80).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
            MelSpectrogram::new(30, 80, values, true).unwrap()
        })
        .collect()
}

fn stats() -> NormStats {
    NormStats::new(vec![-3.0; 80], vec![2.0; 80]).unwrap()
}

fn cfg(model: ModelKind) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        total_steps: 4,
        seed: 5,
        checkpoint_every: 0,
        model,
        ..TrainConfig::default()
    }
}

fn data(batch: usize) -> TrainData {
    TrainData {
        sampler: BatchSampler::new(corpus(1, 4), corpus(2, 4), batch).unwrap(),
        eval: None,
    }
}

fn batch(state: &mut TrainState, d: &TrainData) -> (Vec<MelSegment>, Vec<MelSegment>) {
    d.sampler.sample_batch(&mut state.data_rng)
}

fn snapshot(nets: &Nets) -> Vec<Vec<f32>> {
    nets.stores()
        .iter()
        .map(|s| (0..s.len()).flat_map(|i| s.value(i).data().to_vec()).collect())
        .collect()
}

#[test]
fn model_kind_round_trips() {
    for k in [ModelKind::Proposed, ModelKind::CycleganBaseline] {
        assert_eq!(k.to_string().parse::<ModelKind>().unwrap(), k);
    }
    assert!("gan".parse::<ModelKind>().is_err());
}

#[test]
fn config_validation() {
    TrainConfig::default().validate().unwrap();
    for bad in [
        TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { d_steps_per_g_step: 0, ..TrainConfig::default() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
    }
}

#[test]
fn phases_only_touch_their_own_side() {
    for kind in [ModelKind::Proposed, ModelKind::CycleganBaseline] {
        let d = data(2);
        let mut s = TrainState::init(&cfg(kind), stats()).unwrap();
        let n_gen = s.nets.n_generator_stores();
        let (a, b) = batch(&mut s, &d);
        let before = snapshot(&s.nets);
        d_phase(&mut s, &a, &b).unwrap();
        let mid = snapshot(&s.nets);
        assert_eq!(before[..n_gen], mid[..n_gen], "{kind}: D phase moved a generator");
        assert!(before[n_gen..].iter().zip(&mid[n_gen..]).all(|(x, y)| x != y));
        g_phase(&mut s, &a, &b).unwrap();
        let after = snapshot(&s.nets);
        assert_eq!(mid[n_gen..], after[n_gen..], "{kind}: G phase moved a discriminator");
        assert!(mid[..n_gen].iter().zip(&after[..n_gen]).all(|(x, y)| x != y));
        assert!(s.all_finite());
    }
}

#[test]
fn zero_learning_rate_is_a_pure_evaluation() {
    let d = data(2);
    let mut s = TrainState::init(&cfg(ModelKind::Proposed), stats()).unwrap();
    s.config.learning_rate = 0.0;
    let (a, b) = batch(&mut s, &d);
    let before = snapshot(&s.nets);
    let prior = s.prior_rng.clone();
    let first = train_step(&mut s, &a, &b).unwrap();
    assert_eq!(before, snapshot(&s.nets));
    s.prior_rng = prior;
    let second = train_step(&mut s, &a, &b).unwrap();
    assert_eq!(first, second);
}

#[test]
fn logged_total_is_the_weighted_sum() {
    let d = data(2);
    let mut s = TrainState::init(&cfg(ModelKind::Proposed), stats()).unwrap();
    for _ in 0..2 {
        let (a, b) = batch(&mut s, &d);
        let l = train_step(&mut s, &a, &b).unwrap();
        assert!((l.total - l.recomputed_total(&s.config.weights).unwrap()).abs() <= 1e-6);
        assert!(l.total > 0.0 && l.d_loss_a > 0.0 && l.d_loss_b > 0.0);
    }
    let mut s = TrainState::init(&cfg(ModelKind::CycleganBaseline), stats()).unwrap();
    let (a, b) = batch(&mut s, &d);
    let l = train_step(&mut s, &a, &b).unwrap();
    assert_eq!(l.total, l.adv_a + l.adv_b + (l.cyc_a + l.cyc_b));
    assert_eq!((l.recon_feat_a, l.recon_c_b, l.recon_d_a), (0.0, 0.0, 0.0));
}

#[test]
fn same_seed_same_losses() {
    let run = || {
        let d = data(2);
        let mut s = TrainState::init(&cfg(ModelKind::Proposed), stats()).unwrap();
        (0..3)
            .map(|_| {
                let (a, b) = batch(&mut s, &d);
                train_step(&mut s, &a, &b).unwrap()
            })
            .collect::<Vec<LossBundle>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_loss_names_the_term_and_leaves_step() {
    let d = data(2);
    let mut s = TrainState::init(&cfg(ModelKind::Proposed), stats()).unwrap();
    let disc_b = &mut s.nets.stores_mut()[7];
    disc_b.value_mut(0).data_mut()[0] = f32::NAN;
    let (a, b) = batch(&mut s, &d);
    match train_step(&mut s, &a, &b) {
        Err(Error::NonFiniteLoss { term, step }) => {
            assert_eq!(term, "d_loss_B");
            assert_eq!(step, 0);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(s.step, 0);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let d = data(2);
    let mut s = TrainState::init(&cfg(ModelKind::Proposed), stats()).unwrap();
    let (a, b) = batch(&mut s, &d);
    train_step(&mut s, &a, &b).unwrap();
    s.domain_means = compute_domain_means(&s.nets, [d.sampler.corpus(0), d.sampler.corpus(1)]).unwrap();
    let bytes = encode_checkpoint(&s).unwrap();
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back.step, 1);
    assert_eq!(snapshot(&back.nets), snapshot(&s.nets));
    assert_eq!(back.moments, s.moments);
    assert_eq!(back.domain_means, s.domain_means);
    assert_eq!(back.norm_stats, s.norm_stats);
    assert_eq!(back.config, s.config);
    assert_eq!(seeding::position(&back.data_rng), seeding::position(&s.data_rng));
    assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    assert_eq!(&bytes[..4], b"SDAC");
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let s = TrainState::init(&cfg(ModelKind::CycleganBaseline), stats()).unwrap();
    let bytes = encode_checkpoint(&s).unwrap();
    for cut in [0, 10, 100, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))), "cut {cut}");
    }
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 1;
    assert!(matches!(decode_checkpoint(&flipped), Err(Error::CorruptCheckpoint(_))));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode_checkpoint(&magic), Err(Error::CorruptCheckpoint(_))));
    let mut version = bytes[..bytes.len() - 16].to_vec();
    version[4..8].copy_from_slice(&2u32.to_le_bytes());
    let trailer = <sha2::Sha256 as sha2::Digest>::digest(&version);
    version.extend_from_slice(&trailer[..16]);
    assert!(matches!(
        decode_checkpoint(&version),
        Err(Error::VersionError { found: 2, expected: 1 })
    ));
}

fn read_log(dir: &std::path::Path) -> String {
    std::fs::read_to_string(dir.join(LOSS_LOG)).unwrap()
}

#[test]
fn zero_steps_write_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let c = TrainConfig {
        total_steps: 0,
        ..cfg(ModelKind::Proposed)
    };
    let s = train_loop(TrainState::init(&c, stats()).unwrap(), &data(2), dir.path(), |_| {}).unwrap();
    assert_eq!(s.step, 0);
    let files: Vec<_> = std::fs::read_dir(dir.path().join(CHECKPOINT_DIR)).unwrap().collect();
    assert_eq!(files.len(), 1);
    assert!(checkpoint_path(dir.path(), 0).exists());
    assert_eq!(read_log(dir.path()), "");
}

#[test]
fn resume_matches_uninterrupted_run() {
    let d = data(2);
    let full_dir = tempfile::tempdir().unwrap();
    let c = TrainConfig {
        total_steps: 4,
        checkpoint_every: 2,
        ..cfg(ModelKind::Proposed)
    };
    let full = train_loop(TrainState::init(&c, stats()).unwrap(), &d, full_dir.path(), |_| {}).unwrap();

    let part_dir = tempfile::tempdir().unwrap();
    let short = TrainConfig { total_steps: 2, ..c.clone() };
    train_loop(TrainState::init(&short, stats()).unwrap(), &d, part_dir.path(), |_| {}).unwrap();
    let mut resumed = load_checkpoint(&checkpoint_path(part_dir.path(), 2)).unwrap();
    resumed.config.total_steps = 4;
    let resumed = train_loop(resumed, &d, part_dir.path(), |_| {}).unwrap();

    assert_eq!(read_log(full_dir.path()), read_log(part_dir.path()));
    assert_eq!(read_log(full_dir.path()).lines().count(), 4);
    assert_eq!(snapshot(&full.nets), snapshot(&resumed.nets));
    assert_eq!(
        std::fs::read(checkpoint_path(full_dir.path(), 4)).unwrap(),
        std::fs::read(checkpoint_path(part_dir.path(), 4)).unwrap()
    );
}

#[test]
fn divergence_writes_a_postmortem_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = TrainState::init(&cfg(ModelKind::CycleganBaseline), stats()).unwrap();
    s.nets.stores_mut()[2].value_mut(0).data_mut()[3] = f32::INFINITY;
    let err = train_loop(s, &data(2), dir.path(), |_| {}).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { step: 0, .. }), "{err}");
    assert!(postmortem_path(dir.path(), 0).exists());
}

fn eval_set() -> ToyEvalSet {
    let raw = |seed| {
        let mut m = corpus(seed, 2);
        for x in &mut m {
            x.normalized = false;
        }
        m
    };
    let (noisy, clean) = (raw(3), raw(4));
    ToyEvalSet {
        pairs: noisy.into_iter().zip(clean).collect(),
        bands: ToyBands {
            noise: (50..70).collect(),
            harmonic: (5..40).collect(),
        },
    }
}

#[test]
fn identity_and_oracle_conversions() {
    let ev = eval_set();
    let id = evaluate_conversion(&ev, |x| Ok(x.clone())).unwrap();
    assert_eq!(id.l1_to_reference, id.identity_l1);
    assert!((id.noise_band_energy_ratio - 1.0).abs() < 1e-12);
    let mut k = 0;
    let oracle = evaluate_conversion(&ev, |_| {
        k += 1;
        Ok(ev.pairs[k - 1].1.clone())
    })
    .unwrap();
    assert_eq!(oracle.l1_to_reference, 0.0);
    assert!((oracle.harmonic_correlation - 1.0).abs() < 1e-12);
    let empty = ToyEvalSet { pairs: vec![], bands: ev.bands.clone() };
    assert!(matches!(evaluate_conversion(&empty, |x| Ok(x.clone())), Err(Error::EmptyEvalSet)));
}

#[test]
fn evaluate_toy_preserves_frame_counts() {
    let d = data(2);
    let mut s = TrainState::init(&cfg(ModelKind::Proposed), stats()).unwrap();
    assert!(evaluate_toy(&s, &eval_set()).is_err());
    s.domain_means = compute_domain_means(&s.nets, [d.sampler.corpus(0), d.sampler.corpus(1)]).unwrap();
    let m = evaluate_toy(&s, &eval_set()).unwrap();
    assert!(m.l1_to_reference.is_finite() && m.harmonic_correlation.abs() <= 1.0);
    let s = TrainState::init(&cfg(ModelKind::CycleganBaseline), stats()).unwrap();
    assert!(evaluate_toy(&s, &eval_set()).unwrap().noise_band_energy_ratio > 0.0);
}
