//! Layer-by-layer comparison of a [`ModelPair`] against the reference
//! architecture table and the shape traces it implies.

use std::fmt;

use super::nets::Trace;
use super::{ModelPair, Side};
use crate::features::{SEGMENT_FRAMES, SEGMENT_MELS};
use crate::netblocks::{DenseChain, LayerSpec, Scalar, Tape, Tensor};

type Row3 = ((usize, usize), usize, (usize, usize));

const CONTEXT_ROWS: [Row3; 4] = [((1, 6), 16, (1, 2)), ((1, 6), 32, (1, 2)), ((1, 6), 64, (1, 2)), ((1, 6), 128, (1, 2))];
const DOMAIN_ROWS: [Row3; 4] = [((1, 6), 8, (1, 2)), ((1, 6), 16, (1, 2)), ((1, 6), 32, (1, 2)), ((1, 3), 64, (1, 2))];
const DECODER_ROWS: [Row3; 4] = [((1, 3), 8, (1, 2)), ((1, 3), 16, (1, 2)), ((1, 6), 16, (1, 2)), ((1, 6), 16, (1, 2))];
const DISC_ROWS: [Row3; 4] = [((6, 6), 8, (2, 2)), ((6, 6), 16, (2, 2)), ((1, 6), 32, (1, 2)), ((1, 3), 64, (1, 2))];

const DOMAIN_WIDTHS: [usize; 5] = [256, 128, 32, 16, 8];
const DECODER_WIDTHS: [usize; 5] = [8, 16, 32, 64, 128];
const DISC_WIDTHS: [usize; 5] = [1600, 512, 256, 64, 1];

const CONTEXT_TRACE: [(&str, [usize; 3]); 4] = [
    ("conv0", [16, 20, 40]),
    ("conv1", [32, 20, 20]),
    ("conv2", [64, 20, 10]),
    ("conv3", [128, 20, 5]),
];
const DOMAIN_TRACE: [(&str, &[usize]); 6] = [
    ("conv0", &[8, 20, 40]),
    ("conv1", &[16, 20, 20]),
    ("conv2", &[32, 20, 10]),
    ("conv3", &[64, 20, 5]),
    ("pool", &[256]),
    ("code", &[8]),
];
const DECODER_TRACE: [(&str, &[usize]); 12] = [
    ("adain_params", &[3072]),
    ("res0", &[128, 20, 5]),
    ("res1", &[128, 20, 5]),
    ("res2", &[128, 20, 5]),
    ("res3", &[128, 20, 5]),
    ("res4", &[128, 20, 5]),
    ("res5", &[128, 20, 5]),
    ("up0", &[8, 20, 10]),
    ("up1", &[16, 20, 20]),
    ("up2", &[16, 20, 40]),
    ("up3", &[16, 20, 80]),
    ("out", &[1, 20, 80]),
];
const DISC_TRACE: [(&str, &[usize]); 6] = [
    ("conv0", &[8, 10, 40]),
    ("conv1", &[16, 5, 20]),
    ("conv2", &[32, 5, 10]),
    ("conv3", &[64, 5, 5]),
    ("flatten", &[1600]),
    ("prob", &[1]),
];

#[derive(Clone, Debug, PartialEq)]
pub struct ConformanceRow {
    pub network: String,
    pub item: String,
    pub expected: String,
    pub actual: String,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConformanceReport {
    pub rows: Vec<ConformanceRow>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConformanceRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn find(&self, network: &str, item: &str) -> Option<&ConformanceRow> {
        self.rows.iter().find(|r| r.network == network && r.item == item)
    }

    fn push(&mut self, network: &str, item: impl Into<String>, expected: String, actual: String) {
        let pass = expected == actual;
        self.rows.push(ConformanceRow {
            network: network.into(),
            item: item.into(),
            expected,
            actual,
            pass,
        });
    }

    fn layers(&mut self, network: &str, prefix: &str, expected: &[Row3], specs: &[LayerSpec]) {
        for (i, row) in expected.iter().enumerate() {
            let actual = specs
                .get(i)
                .map(|s| fmt_row(&(s.kernel, s.channels_out, s.stride)))
                .unwrap_or_else(|| "missing".into());
            self.push(network, format!("{prefix}{i}"), fmt_row(row), actual);
        }
        if specs.len() != expected.len() {
            self.push(network, format!("{prefix} count"), expected.len().to_string(), specs.len().to_string());
        }
    }

    fn widths(&mut self, network: &str, item: &str, expected: &[usize], chain: &DenseChain) {
        self.push(network, item, join(expected), join(&chain.widths));
    }

    fn trace(&mut self, network: &str, expected: &[(&str, &[usize])], got: std::result::Result<Trace, String>) {
        let got = match got {
            Ok(t) => t,
            Err(e) => {
                self.push(network, "forward", "ok".into(), e);
                return;
            }
        };
        for (name, tail) in expected {
            let want = format!("1x{}", join_x(tail));
            let actual = got
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, s)| join_x(s))
                .unwrap_or_else(|| "missing".into());
            self.push(network, format!("shape {name}"), want, actual);
        }
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rows {
            writeln!(
                f,
                "{} {:<8} {:<14} expected {:<16} got {}",
                if r.pass { "PASS" } else { "FAIL" },
                r.network,
                r.item,
                r.expected,
                r.actual
            )?;
        }
        Ok(())
    }
}

fn fmt_row(r: &Row3) -> String {
    format!("{}x{}/{}/{}x{}", r.0 .0, r.0 .1, r.1, r.2 .0, r.2 .1)
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

fn join_x(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn probe<T: Scalar>(
    f: impl FnOnce(&mut Tape<T>, &mut Trace) -> crate::Result<crate::netblocks::Var>,
) -> std::result::Result<Trace, String> {
    let mut tape = Tape::new();
    let mut trace = Trace::new();
    f(&mut tape, &mut trace).map_err(|e| e.to_string())?;
    Ok(trace)
}

/// Checks every layer's kernel, channels and stride, every dense chain's
/// widths, and every intermediate shape of a batch-1 forward pass.
pub fn table1_conformance<T: Scalar>(pair: &ModelPair<T>) -> ConformanceReport {
    let mut rep = ConformanceReport::default();
    let seg = || Tensor::<T>::zeros(&[1, 1, SEGMENT_FRAMES, SEGMENT_MELS]);
    for side in Side::BOTH {
        let i = side.index();
        let name = |n: &str| format!("{n}_{side}");

        let n = name("enc_c");
        rep.layers(&n, "conv", &CONTEXT_ROWS, &pair.enc_c[i].convs);
        let t = probe(|tape, tr| {
            let x = tape.input(seg());
            pair.enc_c[i].forward_traced(tape, x, tr)
        });
        let ctx: Vec<(&str, &[usize])> = CONTEXT_TRACE.iter().map(|(a, b)| (*a, &b[..])).collect();
        rep.trace(&n, &ctx, t);

        let n = name("enc_d");
        rep.layers(&n, "conv", &DOMAIN_ROWS, &pair.enc_d[i].convs);
        rep.widths(&n, "dense", &DOMAIN_WIDTHS, &pair.enc_d[i].dense);
        let t = probe(|tape, tr| {
            let x = tape.input(seg());
            pair.enc_d[i].forward_traced(tape, x, tr)
        });
        rep.trace(&n, &DOMAIN_TRACE, t);

        let n = name("dec");
        rep.widths(&n, "mlp", &DECODER_WIDTHS, &pair.dec[i].mlp);
        rep.layers(&n, "up", &DECODER_ROWS, &pair.dec[i].tconvs);
        let t = probe(|tape, tr| {
            let c = tape.input(Tensor::zeros(&[1, 128, 20, 5]));
            let d = tape.input(Tensor::zeros(&[1, 8]));
            pair.dec[i].forward_traced(tape, c, d, tr)
        });
        rep.trace(&n, &DECODER_TRACE, t);

        let n = name("disc");
        rep.layers(&n, "conv", &DISC_ROWS, &pair.disc[i].convs);
        rep.widths(&n, "dense", &DISC_WIDTHS, &pair.disc[i].dense);
        let t = probe(|tape, tr| {
            let x = tape.input(seg());
            pair.disc[i].forward_traced(tape, x, tr)
        });
        rep.trace(&n, &DISC_TRACE, t);
    }
    rep
}
