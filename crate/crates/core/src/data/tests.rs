use std::collections::HashSet;
use std::path::Path;

use super::toy::{band_noise, render_pair, HarmonicSource};
use super::*;
use crate::error::Error;
use crate::features::melf::{read_melf, write_melf};
use crate::features::{MelConfig, MelSpectrogram};
use crate::seeding;

fn mel(n_frames: usize, n_mels: usize, base: f32) -> MelSpectrogram {
    let values = (0..n_frames * n_mels).map(|i| base + i as f32 * 1e-3).collect();
    MelSpectrogram::new(n_frames, n_mels, values, false).unwrap()
}

fn small_toy() -> ToyConfig {
    ToyConfig {
        n_train_utts: 3,
        n_eval_utts: 2,
        duration_s: 0.5,
        seed: 11,
        ..ToyConfig::default()
    }
}

#[test]
fn empty_and_comment_only_manifests_are_empty_corpora() {
    let p = Path::new("/x/m.tsv");
    assert!(matches!(parse_manifest("", p), Err(Error::EmptyCorpus)));
    assert!(matches!(parse_manifest("# nothing\n\n", p), Err(Error::EmptyCorpus)));
}

#[test]
fn entries_keep_order_and_resolve_relative_paths() {
    let text = "# domain: B\nu2\tf/2.melf\n# c\nu0\t/abs/0.melf\nu1\tf/1.melf\tref/1.melf\n";
    let m = parse_manifest(text, Path::new("/data/m.tsv")).unwrap();
    assert_eq!(m.domain, Some(crate::models::Side::B));
    let ids: Vec<&str> = m.entries.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, ["u2", "u0", "u1"]);
    assert_eq!(m.entries[0].path, Path::new("/data/f/2.melf"));
    assert_eq!(m.entries[1].path, Path::new("/abs/0.melf"));
    assert_eq!(m.entries[2].reference.as_deref(), Some(Path::new("/data/ref/1.melf")));
    assert!(!m.is_paired());
}

#[test]
fn parse_errors_carry_line_numbers() {
    let p = Path::new("m.tsv");
    match parse_manifest("a\tx.melf\nonly-one-column\n", p) {
        Err(Error::ParseError { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    match parse_manifest("a\tx\n# c\na\ty\n", p) {
        Err(Error::ParseError { line, reason, .. }) => {
            assert_eq!(line, 3);
            assert!(reason.contains("duplicate"));
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_manifest("# domain: C\n", p), Err(Error::ParseError { line: 1, .. })));
}

#[test]
fn load_validates_headers() {
    let dir = tempfile::tempdir().unwrap();
    write_melf(&dir.path().join("a.melf"), &mel(30, 80, 0.0)).unwrap();
    write_melf(&dir.path().join("b.melf"), &mel(30, 40, 0.0)).unwrap();
    let good = dir.path().join("good.tsv");
    std::fs::write(&good, "u\ta.melf\n").unwrap();
    assert_eq!(load_manifest(&good, 80).unwrap().len(), 1);
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "u\ta.melf\nv\tb.melf\n").unwrap();
    assert!(matches!(load_manifest(&bad, 80), Err(Error::HeaderMismatch { .. })));
    let missing = dir.path().join("missing.tsv");
    std::fs::write(&missing, "u\tnope.melf\n").unwrap();
    assert!(matches!(load_manifest(&missing, 80), Err(Error::MissingFile(_))));
    assert!(matches!(load_manifest(&dir.path().join("no.tsv"), 80), Err(Error::MissingFile(_))));
}

#[test]
fn render_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    write_melf(&dir.path().join("a.melf"), &mel(30, 80, 0.0)).unwrap();
    write_melf(&dir.path().join("c.melf"), &mel(30, 80, 1.0)).unwrap();
    let m = CorpusManifest {
        domain: Some(crate::models::Side::A),
        entries: vec![ManifestEntry {
            id: "x".into(),
            path: dir.path().join("a.melf"),
            reference: Some(dir.path().join("c.melf")),
        }],
    };
    let p = dir.path().join("m.tsv");
    m.write(&p).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "# domain: A\nx\ta.melf\tc.melf\n");
    assert_eq!(load_manifest(&p, 80).unwrap(), m);
    let pairs = m.load_pairs().unwrap();
    assert_eq!(pairs[0].1, mel(30, 80, 1.0));
}

fn sampler(n_utts: usize, batch: usize) -> BatchSampler {
    let a = (0..n_utts).map(|i| mel(25 + i % 7, 80, i as f32)).collect();
    let b = (0..n_utts).map(|i| mel(40, 80, -(i as f32))).collect();
    BatchSampler::new(a, b, batch).unwrap()
}

#[test]
fn batch_shapes_and_determinism() {
    let s = sampler(10, 16);
    let (a, b) = s.sample_batch(&mut seeding::stream(1, "data"));
    assert_eq!((a.len(), b.len()), (16, 16));
    assert!(a.iter().chain(&b).all(|x| x.values().len() == 20 * 80));
    let again = s.sample_batch(&mut seeding::stream(1, "data"));
    assert_eq!((a, b), again);
}

#[test]
fn crops_are_slices_of_their_utterance() {
    let s = sampler(5, 1);
    let mut rng = seeding::stream(2, "data");
    for _ in 0..50 {
        let (u, start, seg) = s.draw(0, &mut rng);
        let m = &s.corpus(0)[u];
        assert!(start + 20 <= m.n_frames);
        assert_eq!(seg.get(0, 3), m.get(start, 3));
        assert_eq!(seg.get(19, 79), m.get(start + 19, 79));
    }
}

#[test]
fn every_utterance_is_drawn() {
    let s = sampler(100, 1);
    let mut rng = seeding::stream(3, "data");
    let mut seen = HashSet::new();
    for _ in 0..10_000 {
        seen.insert(s.draw(0, &mut rng).0);
    }
    assert_eq!(seen.len(), 100);
}

#[test]
fn short_utterances_are_padded_with_last_frame() {
    let short = mel(7, 80, 0.5);
    let s = BatchSampler::new(vec![short.clone()], vec![mel(20, 80, 0.0)], 2).unwrap();
    let (_, _, seg) = s.draw(0, &mut seeding::stream(4, "data"));
    assert_eq!(seg.get(3, 10), short.get(3, 10));
    for t in 7..20 {
        assert_eq!(seg.get(t, 10), short.get(6, 10));
    }
    assert!(matches!(
        BatchSampler::new(vec![], vec![mel(20, 80, 0.0)], 2),
        Err(Error::EmptyCorpus)
    ));
}

#[test]
fn full_band_covers_every_bin() {
    let cfg = MelConfig::default();
    assert_eq!(band_to_bins((0.0, 8000.0), &cfg).unwrap(), (0..80).collect::<Vec<_>>());
}

#[test]
fn zero_width_band_at_a_peak() {
    let cfg = MelConfig::default();
    let fb = crate::features::mel_filterbank(&cfg).unwrap();
    for m in [0, 17, 79] {
        let f = fb.centers_hz[m];
        assert_eq!(band_to_bins((f, f), &cfg).unwrap(), vec![m]);
    }
    assert!(matches!(band_to_bins((10.0, 10.0), &cfg), Err(Error::EmptyBand { .. })));
    assert!(matches!(band_to_bins((100.0, 9000.0), &cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn noise_band_bins_match_brute_force_scan() {
    // Independent Slaney centers: 81 equal mel steps up to mel(8000).
    let mel_of = |hz: f64| {
        if hz < 1000.0 {
            hz * 3.0 / 200.0
        } else {
            15.0 + 27.0 * (hz / 1000.0).ln() / 6.4f64.ln()
        }
    };
    let hz_of = |m: f64| {
        if m < 15.0 {
            m * 200.0 / 3.0
        } else {
            1000.0 * ((m - 15.0) * 6.4f64.ln() / 27.0).exp()
        }
    };
    let step = mel_of(8000.0) / 81.0;
    let brute: Vec<usize> = (0..80)
        .filter(|&m| {
            let f = hz_of(step * (m + 1) as f64);
            (2000.0..=6000.0).contains(&f)
        })
        .collect();
    let bins = band_to_bins((2000.0, 6000.0), &MelConfig::default()).unwrap();
    assert_eq!(bins, brute);
    assert!(bins.windows(2).all(|w| w[1] == w[0] + 1));
    let (first, last) = (bins[0], *bins.last().unwrap());
    assert!(hz_of(step * first as f64) < 2000.0 && hz_of(step * (first + 1) as f64) >= 2000.0);
    assert!(hz_of(step * (last + 1) as f64) <= 6000.0 && hz_of(step * (last + 2) as f64) > 6000.0);
}

#[test]
fn toy_bands_are_disjoint() {
    let b = ToyBands::new(&ToyConfig::default(), &MelConfig::default()).unwrap();
    assert!(b.harmonic.iter().all(|m| !b.noise.contains(m)));
    assert!(!b.harmonic.is_empty() && !b.noise.is_empty());
}

#[test]
fn eval_pairs_differ_only_by_noise() {
    let cfg = small_toy();
    let src = HarmonicSource::draw(&cfg, &mut seeding::stream(5, "x"));
    let mut rng = seeding::stream(5, "y");
    let (clean, noisy) = render_pair(&src, &cfg, 16_000, &mut rng);
    assert_eq!(clean, src.render(cfg.n_samples(16_000), 16_000));
    let mut rng = seeding::stream(5, "y");
    let power = clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64;
    let noise = band_noise(clean.len(), 16_000, cfg.noise_band, power, &mut rng);
    for ((c, n), y) in clean.iter().zip(&noise).zip(&noisy) {
        assert_eq!(c + n, *y);
    }
}

#[test]
fn toy_corpus_layout_and_determinism() {
    let cfg = small_toy();
    let mel_cfg = MelConfig::default();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let c1 = generate_toy_corpus(&cfg, &mel_cfg, d1.path()).unwrap();
    let c2 = generate_toy_corpus(&cfg, &mel_cfg, d2.path()).unwrap();
    let a = load_manifest(&c1.train_a, 80).unwrap();
    let b = load_manifest(&c1.train_b, 80).unwrap();
    assert_eq!((a.len(), b.len()), (3, 3));
    assert!(a.ids().is_disjoint(&b.ids()));
    let ev = load_manifest(c1.eval_pairs.as_ref().unwrap(), 80).unwrap();
    assert!(ev.is_paired());
    assert_eq!(read_melf(&a.entries[0].path).unwrap().n_frames, 48);
    for sub in ["A/a0001.melf", "B/b0002.melf", "eval/noisy0001.melf", "eval/clean0000.melf"] {
        let x = std::fs::read(d1.path().join("melf").join(sub)).unwrap();
        let y = std::fs::read(d2.path().join("melf").join(sub)).unwrap();
        assert_eq!(x, y, "{sub}");
    }
    assert_eq!(c1.bands, c2.bands);
}

#[test]
fn no_eval_manifest_without_eval_utterances() {
    let cfg = ToyConfig {
        n_eval_utts: 0,
        ..small_toy()
    };
    let d = tempfile::tempdir().unwrap();
    let c = generate_toy_corpus(&cfg, &MelConfig::default(), d.path()).unwrap();
    assert!(c.eval_pairs.is_none());
    assert!(!d.path().join(toy::EVAL_MANIFEST).exists());
}

fn eval_pairs(snr_db: f64) -> (Vec<(MelSpectrogram, MelSpectrogram)>, ToyBands) {
    let cfg = ToyConfig {
        n_train_utts: 1,
        n_eval_utts: 4,
        snr_db,
        ..small_toy()
    };
    let d = tempfile::tempdir().unwrap();
    let c = generate_toy_corpus(&cfg, &MelConfig::default(), d.path()).unwrap();
    let m = load_manifest(c.eval_pairs.as_ref().unwrap(), 80).unwrap();
    (m.load_pairs().unwrap(), c.bands)
}

#[test]
fn high_snr_noisy_features_match_clean() {
    let (pairs, _) = eval_pairs(60.0);
    let (mut sum, mut n) = (0.0f64, 0usize);
    for (noisy, clean) in &pairs {
        for (x, y) in noisy.values.iter().zip(&clean.values) {
            sum += (x - y).abs() as f64;
            n += 1;
        }
    }
    assert!(sum / (n as f64) < 0.1, "mean L1 {}", sum / n as f64);
}

#[test]
fn noise_raises_noise_band_energy() {
    let (pairs, bands) = eval_pairs(0.0);
    let band_mean = |m: &MelSpectrogram| {
        let mut s = 0.0f64;
        for t in 0..m.n_frames {
            for &k in &bands.noise {
                s += m.get(t, k) as f64;
            }
        }
        s / (m.n_frames * bands.noise.len()) as f64
    };
    for (noisy, clean) in &pairs {
        let gap = band_mean(noisy) - band_mean(clean);
        assert!(gap > 3.0, "gap {gap}");
    }
}
