//! Reverse-mode autodiff over a recorded sequence of operations.
//!
//! A [`Tape`] records every intermediate value. Parameters are bound from
//! [`ParamStore`]s; only stores registered as trainable on the tape receive
//! gradients, so a frozen network still propagates gradients to its inputs
//! without touching its own buffers.

use std::collections::{HashMap, HashSet};

use super::conv::{col2im, im2col, ConvGeom, Padding};
use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom },
    TConv { x: Var, w: Var, b: Var, geom: ConvGeom },
    Dense { x: Var, w: Var, b: Var },
    InstanceNorm { x: Var, inv_std: Vec<T> },
    ChannelAffine { x: Var, gamma: Var, beta: Var },
    LeakyRelu { x: Var, slope: T },
    Sigmoid { x: Var },
    Tanh { x: Var },
    LogProb { x: Var, complement: bool },
    Add { a: Var, b: Var },
    AddConst { x: Var },
    Reshape { x: Var },
    Concat { a: Var, b: Var },
    SliceCols { x: Var, start: usize },
    AdaptivePool { x: Var },
    L1Mean { a: Var, b: Var },
    Mean { x: Var },
    WeightedSum { terms: Vec<(Var, T)> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    trainable: HashSet<u64>,
    bound: HashMap<(u64, usize), Var>,
    branches: Option<BranchLog>,
}

/// Which side of every kink (ReLU-type activations, absolute values,
/// probability clamps) a forward pass took, in op order.
///
/// A tape replaying a log evaluates the same smooth piece of the objective
/// as the recording pass, even where a small perturbation would cross a
/// kink. Finite differences taken on replaying tapes therefore match the
/// one-sided derivative the backward pass computes.
#[derive(Clone, Debug, Default)]
pub struct BranchLog {
    masks: Vec<Vec<i8>>,
    cursor: usize,
    replay: bool,
}

impl BranchLog {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

impl<T: Scalar> Tape<T> {
    /// A tape on which no parameter store is trainable.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            trainable: HashSet::new(),
            bound: HashMap::new(),
            branches: None,
        }
    }

    /// A tape that records the branch taken at every kink.
    pub fn recording_branches() -> Self {
        Self {
            branches: Some(BranchLog::default()),
            ..Self::new()
        }
    }

    /// A tape that follows the branches of an earlier recording.
    pub fn replaying(log: &BranchLog) -> Self {
        Self {
            branches: Some(BranchLog {
                masks: log.masks.clone(),
                cursor: 0,
                replay: true,
            }),
            ..Self::new()
        }
    }

    pub fn take_branches(&mut self) -> Option<BranchLog> {
        self.branches.take()
    }

    fn branch(&mut self, natural: Vec<i8>) -> Vec<i8> {
        match &mut self.branches {
            None => natural,
            Some(b) if b.replay => {
                let m = match b.masks.get(b.cursor) {
                    Some(m) if m.len() == natural.len() => m.clone(),
                    _ => natural,
                };
                b.cursor += 1;
                m
            }
            Some(b) => {
                b.masks.push(natural.clone());
                natural
            }
        }
    }

    /// A tape that accumulates gradients for the given stores.
    pub fn with_trainable<'a>(stores: impl IntoIterator<Item = &'a ParamStore<T>>) -> Self {
        let mut tape = Self::new();
        tape.trainable = stores.into_iter().map(ParamStore::id).collect();
        tape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input whose gradient is retained by [`Tape::backward`].
    pub fn input_with_grad(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds parameter `idx` of `store`. Repeated binds return the same var.
    pub fn param(&mut self, store: &ParamStore<T>, idx: usize) -> Var {
        let key = (store.id(), idx);
        if let Some(&v) = self.bound.get(&key) {
            return v;
        }
        let needs_grad = self.trainable.contains(&store.id());
        self.nodes.push(Node {
            value: store.value(idx).clone(),
            op: Op::Leaf,
            needs_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.bound.insert(key, v);
        v
    }

    /// Binds a parameter by name.
    pub fn param_named(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::shape(format!("unknown parameter `{name}`")))?;
        Ok(self.param(store, idx))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: (usize, usize), padding: Padding) -> Result<Var> {
        let (bn, c, h, wd) = self.value(x).dims4()?;
        let (c_out, c_in, kh, kw) = self.value(w).dims4()?;
        if c != c_in || self.value(b).numel() != c_out {
            return Err(Error::shape(format!(
                "conv2d: input {:?}, weight {:?}, bias {:?}",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let geom = ConvGeom::same(c, (h, wd), c_out, (kh, kw), stride, padding);
        let maps = geom.index_maps();
        let (p_in, p_out, k) = (geom.in_plane(), geom.out_plane(), geom.k());
        let n = bn * p_out;
        let xs = self.value(x).data();
        let mut cols = vec![T::zero(); k * n];
        for s in 0..bn {
            im2col(&xs[s * c * p_in..(s + 1) * c * p_in], &geom, &maps, &mut cols, s * p_out, n);
        }
        let mut mat = vec![T::zero(); c_out * n];
        T::gemm(c_out, k, n, T::one(), self.value(w).data(), false, &cols, false, T::zero(), &mut mat);
        let bias = self.value(b).data();
        let mut y = vec![T::zero(); bn * c_out * p_out];
        for s in 0..bn {
            for co in 0..c_out {
                let src = &mat[co * n + s * p_out..co * n + (s + 1) * p_out];
                let dst = &mut y[(s * c_out + co) * p_out..(s * c_out + co + 1) * p_out];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d = *v + bias[co];
                }
            }
        }
        let value = Tensor::from_vec(&[bn, c_out, geom.h_out, geom.w_out], y)?;
        Ok(self.push(value, Op::Conv { x, w, b, geom }, &[x, w, b]))
    }

    /// Transposed convolution, the exact adjoint of [`Tape::conv2d`] with the
    /// same weights (up to bias). Weight shape is `c_in x c_out x kh x kw`;
    /// output spatial size is `input * stride`.
    pub fn tconv2d(&mut self, x: Var, w: Var, b: Var, stride: (usize, usize), padding: Padding) -> Result<Var> {
        let (bn, c, h, wd) = self.value(x).dims4()?;
        let (c_in, c_out, kh, kw) = self.value(w).dims4()?;
        if c != c_in || self.value(b).numel() != c_out {
            return Err(Error::shape(format!(
                "tconv2d: input {:?}, weight {:?}, bias {:?}",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        // The forward conv this op transposes maps (c_out, h*sh, w*sw) -> (c_in, h, w).
        let geom = ConvGeom::same(c_out, (h * stride.0, wd * stride.1), c_in, (kh, kw), stride, padding);
        debug_assert_eq!((geom.h_out, geom.w_out), (h, wd));
        let maps = geom.index_maps();
        let (p_small, p_big, k) = (geom.out_plane(), geom.in_plane(), geom.k());
        let n = bn * p_small;
        let xmat = gather_channels_major(self.value(x).data(), bn, c_in, p_small);
        let mut cols = vec![T::zero(); k * n];
        T::gemm(k, c_in, n, T::one(), self.value(w).data(), true, &xmat, false, T::zero(), &mut cols);
        let mut y = vec![T::zero(); bn * c_out * p_big];
        for s in 0..bn {
            col2im(&cols, &geom, &maps, s * p_small, n, &mut y[s * c_out * p_big..(s + 1) * c_out * p_big]);
        }
        let bias = self.value(b).data();
        for s in 0..bn {
            for co in 0..c_out {
                y[(s * c_out + co) * p_big..(s * c_out + co + 1) * p_big]
                    .iter_mut()
                    .for_each(|v| *v += bias[co]);
            }
        }
        let value = Tensor::from_vec(&[bn, c_out, geom.h_in, geom.w_in], y)?;
        Ok(self.push(value, Op::TConv { x, w, b, geom }, &[x, w, b]))
    }

    /// `y = x w^T + b` with `x: batch x in`, `w: out x in`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (bn, n_in) = self.value(x).dims2()?;
        let (n_out, w_in) = self.value(w).dims2()?;
        if n_in != w_in || self.value(b).numel() != n_out {
            return Err(Error::shape(format!(
                "dense: input {:?}, weight {:?}",
                self.value(x).shape(),
                self.value(w).shape()
            )));
        }
        let mut y = vec![T::zero(); bn * n_out];
        T::gemm(bn, n_in, n_out, T::one(), self.value(x).data(), false, self.value(w).data(), true, T::zero(), &mut y);
        let bias = self.value(b).data();
        for row in y.chunks_exact_mut(n_out) {
            for (v, bb) in row.iter_mut().zip(bias) {
                *v += *bb;
            }
        }
        let value = Tensor::from_vec(&[bn, n_out], y)?;
        Ok(self.push(value, Op::Dense { x, w, b }, &[x, w, b]))
    }

    /// Per-sample, per-channel normalization over the spatial axes, no affine.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (bn, c, h, w) = self.value(x).dims4()?;
        let plane = h * w;
        let eps = T::from_f64_lossy(eps);
        let inv_n = T::one() / T::from_usize(plane).unwrap();
        let xs = self.value(x).data();
        let mut y = vec![T::zero(); xs.len()];
        let mut inv_std = Vec::with_capacity(bn * c);
        for (src, dst) in xs.chunks_exact(plane).zip(y.chunks_exact_mut(plane)) {
            let mean = src.iter().copied().sum::<T>() * inv_n;
            let var = src.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_n;
            let r = T::one() / (var + eps).sqrt();
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (*s - mean) * r;
            }
            inv_std.push(r);
        }
        let value = Tensor::from_vec(&[bn, c, h, w], y)?;
        Ok(self.push(value, Op::InstanceNorm { x, inv_std }, &[x]))
    }

    /// `y[s, c] = gamma[s, c] * x[s, c] + beta[s, c]` with per-sample
    /// `batch x channels` modulation.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (bn, c, h, w) = self.value(x).dims4()?;
        if self.value(gamma).shape() != [bn, c] || self.value(beta).shape() != [bn, c] {
            return Err(Error::shape(format!(
                "channel_affine: features {:?}, gamma {:?}, beta {:?}",
                self.value(x).shape(),
                self.value(gamma).shape(),
                self.value(beta).shape()
            )));
        }
        let plane = h * w;
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let y: Vec<T> = self
            .value(x)
            .data()
            .chunks_exact(plane)
            .enumerate()
            .flat_map(|(i, src)| src.iter().map(move |v| g[i] * *v + be[i]))
            .collect();
        let value = Tensor::from_vec(&[bn, c, h, w], y)?;
        Ok(self.push(value, Op::ChannelAffine { x, gamma, beta }, &[x, gamma, beta]))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let slope = T::from_f64_lossy(slope);
        let data = if self.branches.is_none() {
            self.value(x)
                .data()
                .iter()
                .map(|&v| if v > T::zero() { v } else { v * slope })
                .collect()
        } else {
            let natural = self.value(x).data().iter().map(|&v| (v > T::zero()) as i8).collect();
            let mask = self.branch(natural);
            self.value(x)
                .data()
                .iter()
                .zip(mask)
                .map(|(&v, m)| if m == 1 { v } else { v * slope })
                .collect()
        };
        let src = self.value(x);
        let value = Tensor::from_vec(src.shape(), data).expect("same shape");
        self.push(value, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    /// Logistic function; outputs stay within `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let raw: Vec<T> = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        let data = self.clamp_probs(raw);
        let src = self.value(x);
        let value = Tensor::from_vec(src.shape(), data).expect("same shape");
        self.push(value, Op::Sigmoid { x }, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::from_vec(src.shape(), data).expect("same shape");
        self.push(value, Op::Tanh { x }, &[x])
    }

    /// `ln(clamp(p))`, or `ln(clamp(1 - p))` when `complement` is set.
    pub fn log_prob(&mut self, x: Var, complement: bool) -> Var {
        let clamped = self.clamp_probs(self.value(x).data().to_vec());
        let src = self.value(x);
        let data = clamped
            .into_iter()
            .map(|p| {
                if complement {
                    (T::one() - p).ln()
                } else {
                    p.ln()
                }
            })
            .collect();
        let value = Tensor::from_vec(src.shape(), data).expect("same shape");
        self.push(value, Op::LogProb { x, complement }, &[x])
    }

    fn clamp_probs(&mut self, ps: Vec<T>) -> Vec<T> {
        if self.branches.is_none() {
            return ps.into_iter().map(clamp_prob).collect();
        }
        let lo = T::from_f64_lossy(PROB_CLAMP);
        let hi = T::one() - lo;
        let natural = ps
            .iter()
            .map(|&p| if p < lo { -1 } else if p > hi { 1 } else { 0 })
            .collect();
        let mask = self.branch(natural);
        ps.into_iter()
            .zip(mask)
            .map(|(p, m)| match m {
                -1 => lo,
                1 => hi,
                _ => p,
            })
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let value = Tensor::from_vec(self.value(a).shape(), data)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64_lossy(c);
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v + c).collect();
        let value = Tensor::from_vec(src.shape(), data).expect("same shape");
        self.push(value, Op::AddConst { x }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Concatenates two feature maps along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (bn, ca, h, w) = self.value(a).dims4()?;
        let (bn2, cb, h2, w2) = self.value(b).dims4()?;
        if (bn, h, w) != (bn2, h2, w2) {
            return Err(Error::shape(format!(
                "concat: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let (pa, pb) = (ca * h * w, cb * h * w);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut y = Vec::with_capacity(bn * (pa + pb));
        for s in 0..bn {
            y.extend_from_slice(&da[s * pa..(s + 1) * pa]);
            y.extend_from_slice(&db[s * pb..(s + 1) * pb]);
        }
        let value = Tensor::from_vec(&[bn, ca + cb, h, w], y)?;
        Ok(self.push(value, Op::Concat { a, b }, &[a, b]))
    }

    /// Columns `start..start + len` of a `batch x n` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (bn, n) = self.value(x).dims2()?;
        if start + len > n {
            return Err(Error::shape(format!("slice {start}+{len} out of {n} columns")));
        }
        let data = self
            .value(x)
            .data()
            .chunks_exact(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let value = Tensor::from_vec(&[bn, len], data)?;
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    /// Adaptive average pooling of the spatial axes to `out_h x out_w`, with
    /// bin `i` covering `[floor(i n / out), ceil((i + 1) n / out))`.
    pub fn adaptive_avg_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (bn, c, h, w) = self.value(x).dims4()?;
        if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
            return Err(Error::shape(format!("adaptive pool {h}x{w} -> {out_h}x{out_w}")));
        }
        let (hb, wb) = (pool_bins(h, out_h), pool_bins(w, out_w));
        let xs = self.value(x).data();
        let mut y = Vec::with_capacity(bn * c * out_h * out_w);
        for plane in xs.chunks_exact(h * w) {
            for &(h0, h1) in &hb {
                for &(w0, w1) in &wb {
                    let mut acc = T::zero();
                    for i in h0..h1 {
                        for j in w0..w1 {
                            acc += plane[i * w + j];
                        }
                    }
                    y.push(acc / T::from_usize((h1 - h0) * (w1 - w0)).unwrap());
                }
            }
        }
        let value = Tensor::from_vec(&[bn, c, out_h, out_w], y)?;
        Ok(self.push(value, Op::AdaptivePool { x }, &[x]))
    }

    /// Mean absolute difference over all elements.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "l1: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let n = T::from_usize(self.value(a).numel()).unwrap();
        let s = if self.branches.is_none() {
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| (*x - *y).abs())
                .sum::<T>()
        } else {
            let natural = self
                .value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| if *x > *y { 1 } else if *x < *y { -1 } else { 0 })
                .collect();
            let sign = self.branch(natural);
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .zip(sign)
                .map(|((x, y), sg)| (*x - *y) * T::from_i8(sg).unwrap())
                .sum::<T>()
        };
        Ok(self.push(Tensor::scalar(s / n), Op::L1Mean { a, b }, &[a, b]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().copied().sum::<T>() / T::from_usize(t.numel()).unwrap();
        self.push(Tensor::scalar(m), Op::Mean { x }, &[x])
    }

    /// `sum_i c_i * x_i` over scalar vars.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc = T::zero();
        let mut conv = Vec::with_capacity(terms.len());
        for &(v, c) in terms {
            if self.value(v).numel() != 1 {
                return Err(Error::shape("weighted_sum expects scalar terms"));
            }
            let c = T::from_f64_lossy(c);
            acc += c * self.value(v).item();
            conv.push((v, c));
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(Tensor::scalar(acc), Op::WeightedSum { terms: conv }, &inputs))
    }

    /// Back-propagates from scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape("backward expects a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads)?;
        }
        Ok(Gradients {
            grads,
            bound: self.bound.iter().map(|(&k, &v)| (k, v)).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let xv = self.value(*x);
                let (bn, c_in, _, _) = xv.dims4()?;
                let (p_in, p_out, k, c_out) = (geom.in_plane(), geom.out_plane(), geom.k(), geom.c_out);
                let n = bn * p_out;
                let dy = gather_channels_major(gd, bn, c_out, p_out);
                if self.wants(*b) {
                    self.accumulate(grads, *b, Tensor::from_vec(&[c_out], row_sums(&dy, c_out, n))?);
                }
                let maps = geom.index_maps();
                if self.wants(*w) {
                    let mut cols = vec![T::zero(); k * n];
                    for s in 0..bn {
                        im2col(&xv.data()[s * c_in * p_in..(s + 1) * c_in * p_in], geom, &maps, &mut cols, s * p_out, n);
                    }
                    let mut dw = vec![T::zero(); c_out * k];
                    T::gemm(c_out, n, k, T::one(), &dy, false, &cols, true, T::zero(), &mut dw);
                    self.accumulate(grads, *w, Tensor::from_vec(self.value(*w).shape(), dw)?);
                }
                if self.wants(*x) {
                    let mut dcols = vec![T::zero(); k * n];
                    T::gemm(k, c_out, n, T::one(), self.value(*w).data(), true, &dy, false, T::zero(), &mut dcols);
                    let mut dx = vec![T::zero(); xv.numel()];
                    for s in 0..bn {
                        col2im(&dcols, geom, &maps, s * p_out, n, &mut dx[s * c_in * p_in..(s + 1) * c_in * p_in]);
                    }
                    self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), dx)?);
                }
            }
            Op::TConv { x, w, b, geom } => {
                let xv = self.value(*x);
                let (bn, c_in, _, _) = xv.dims4()?;
                let (p_small, p_big, k, c_out) = (geom.out_plane(), geom.in_plane(), geom.k(), geom.c_in);
                let n = bn * p_small;
                if self.wants(*b) {
                    let mut db = vec![T::zero(); c_out];
                    for (i, plane) in gd.chunks_exact(p_big).enumerate() {
                        db[i % c_out] += plane.iter().copied().sum::<T>();
                    }
                    self.accumulate(grads, *b, Tensor::from_vec(&[c_out], db)?);
                }
                let maps = geom.index_maps();
                let mut dcols = vec![T::zero(); k * n];
                for s in 0..bn {
                    im2col(&gd[s * c_out * p_big..(s + 1) * c_out * p_big], geom, &maps, &mut dcols, s * p_small, n);
                }
                if self.wants(*w) {
                    let xmat = gather_channels_major(xv.data(), bn, c_in, p_small);
                    let mut dw = vec![T::zero(); c_in * k];
                    T::gemm(c_in, n, k, T::one(), &xmat, false, &dcols, true, T::zero(), &mut dw);
                    self.accumulate(grads, *w, Tensor::from_vec(self.value(*w).shape(), dw)?);
                }
                if self.wants(*x) {
                    let mut dxm = vec![T::zero(); c_in * n];
                    T::gemm(c_in, k, n, T::one(), self.value(*w).data(), false, &dcols, false, T::zero(), &mut dxm);
                    let dx = scatter_channels_major(&dxm, bn, c_in, p_small);
                    self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), dx)?);
                }
            }
            Op::Dense { x, w, b } => {
                let (bn, n_in) = self.value(*x).dims2()?;
                let (n_out, _) = self.value(*w).dims2()?;
                if self.wants(*b) {
                    let mut db = vec![T::zero(); n_out];
                    for row in gd.chunks_exact(n_out) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += *v;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_vec(&[n_out], db)?);
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); n_out * n_in];
                    T::gemm(n_out, bn, n_in, T::one(), gd, true, self.value(*x).data(), false, T::zero(), &mut dw);
                    self.accumulate(grads, *w, Tensor::from_vec(&[n_out, n_in], dw)?);
                }
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); bn * n_in];
                    T::gemm(bn, n_out, n_in, T::one(), gd, false, self.value(*w).data(), false, T::zero(), &mut dx);
                    self.accumulate(grads, *x, Tensor::from_vec(&[bn, n_in], dx)?);
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                let (_, _, h, w) = node.value.dims4()?;
                let plane = h * w;
                let inv_n = T::one() / T::from_usize(plane).unwrap();
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                for (((dst, gy), yy), r) in dx
                    .chunks_exact_mut(plane)
                    .zip(gd.chunks_exact(plane))
                    .zip(y.chunks_exact(plane))
                    .zip(inv_std)
                {
                    let mg = gy.iter().copied().sum::<T>() * inv_n;
                    let mgy = gy.iter().zip(yy).map(|(a, b)| *a * *b).sum::<T>() * inv_n;
                    for ((d, a), b) in dst.iter_mut().zip(gy).zip(yy) {
                        *d = *r * (*a - mg - *b * mgy);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(node.value.shape(), dx)?);
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let xv = self.value(*x);
                let (bn, c, h, w) = xv.dims4()?;
                let plane = h * w;
                if self.wants(*gamma) || self.wants(*beta) {
                    let mut dg = vec![T::zero(); bn * c];
                    let mut db = vec![T::zero(); bn * c];
                    for (i, (gy, xx)) in gd.chunks_exact(plane).zip(xv.data().chunks_exact(plane)).enumerate() {
                        dg[i] = gy.iter().zip(xx).map(|(a, b)| *a * *b).sum();
                        db[i] = gy.iter().copied().sum();
                    }
                    self.accumulate(grads, *gamma, Tensor::from_vec(&[bn, c], dg)?);
                    self.accumulate(grads, *beta, Tensor::from_vec(&[bn, c], db)?);
                }
                if self.wants(*x) {
                    let gm = self.value(*gamma).data();
                    let dx = gd
                        .chunks_exact(plane)
                        .enumerate()
                        .flat_map(|(i, gy)| gy.iter().map(move |v| *v * gm[i]))
                        .collect();
                    self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), dx)?);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let dx = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, v)| if *v > T::zero() { *g } else { *g * *slope })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), dx)?);
            }
            Op::Sigmoid { x } => {
                let dx = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| *g * *y * (T::one() - *y))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), dx)?);
            }
            Op::Tanh { x } => {
                let dx = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| *g * (T::one() - *y * *y))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), dx)?);
            }
            Op::LogProb { x, complement } => {
                let lo = T::from_f64_lossy(PROB_CLAMP);
                let hi = T::one() - lo;
                let dx = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, p)| {
                        if *p < lo || *p > hi {
                            T::zero()
                        } else if *complement {
                            -*g / (T::one() - *p)
                        } else {
                            *g / *p
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), dx)?);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddConst { x } => self.accumulate(grads, *x, g.clone()),
            Op::Reshape { x } => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.clone().reshape(&shape)?);
            }
            Op::Concat { a, b } => {
                let (bn, ca, h, w) = self.value(*a).dims4()?;
                let (_, cb, _, _) = self.value(*b).dims4()?;
                let (pa, pb) = (ca * h * w, cb * h * w);
                let mut ga = Vec::with_capacity(bn * pa);
                let mut gb = Vec::with_capacity(bn * pb);
                for s in 0..bn {
                    let base = s * (pa + pb);
                    ga.extend_from_slice(&gd[base..base + pa]);
                    gb.extend_from_slice(&gd[base + pa..base + pa + pb]);
                }
                self.accumulate(grads, *a, Tensor::from_vec(&[bn, ca, h, w], ga)?);
                self.accumulate(grads, *b, Tensor::from_vec(&[bn, cb, h, w], gb)?);
            }
            Op::SliceCols { x, start } => {
                let (bn, n) = self.value(*x).dims2()?;
                let len = g.shape()[1];
                let mut dx = vec![T::zero(); bn * n];
                for (row, gr) in dx.chunks_exact_mut(n).zip(gd.chunks_exact(len)) {
                    row[*start..*start + len].copy_from_slice(gr);
                }
                self.accumulate(grads, *x, Tensor::from_vec(&[bn, n], dx)?);
            }
            Op::AdaptivePool { x } => {
                let (_, _, h, w) = self.value(*x).dims4()?;
                let (_, _, oh, ow) = node.value.dims4()?;
                let (hb, wb) = (pool_bins(h, oh), pool_bins(w, ow));
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (plane, gp) in dx.chunks_exact_mut(h * w).zip(gd.chunks_exact(oh * ow)) {
                    for (bi, &(h0, h1)) in hb.iter().enumerate() {
                        for (bj, &(w0, w1)) in wb.iter().enumerate() {
                            let share = gp[bi * ow + bj] / T::from_usize((h1 - h0) * (w1 - w0)).unwrap();
                            for i in h0..h1 {
                                for j in w0..w1 {
                                    plane[i * w + j] += share;
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(self.value(*x).shape(), dx)?);
            }
            Op::L1Mean { a, b } => {
                let av = self.value(*a);
                let scale = gd[0] / T::from_usize(av.numel()).unwrap();
                let sign: Vec<T> = av
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(x, y)| {
                        let d = *x - *y;
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if self.wants(*b) {
                    let neg = sign.iter().map(|v| -*v).collect();
                    self.accumulate(grads, *b, Tensor::from_vec(av.shape(), neg)?);
                }
                self.accumulate(grads, *a, Tensor::from_vec(av.shape(), sign)?);
            }
            Op::Mean { x } => {
                let xv = self.value(*x);
                let v = gd[0] / T::from_usize(xv.numel()).unwrap();
                self.accumulate(grads, *x, Tensor::full(xv.shape(), v));
            }
            Op::WeightedSum { terms } => {
                for &(v, c) in terms {
                    self.accumulate(grads, v, Tensor::scalar(c * gd[0]));
                }
            }
        }
        Ok(())
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    bound: Vec<((u64, usize), Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf (input or parameter), if one reached it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Adds this tape's gradients for `store` into its gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &((id, idx), v) in &self.bound {
            if id != store.id() {
                continue;
            }
            if let Some(g) = &self.grads[v.0] {
                store.grad_mut(idx).add_assign(g);
            }
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// NaN passes through so a diverged network shows up as a NaN loss.
fn clamp_prob<T: Scalar>(p: T) -> T {
    if p.is_nan() {
        return p;
    }
    let lo = T::from_f64_lossy(PROB_CLAMP);
    p.max(lo).min(T::one() - lo)
}

fn pool_bins(n: usize, out: usize) -> Vec<(usize, usize)> {
    (0..out)
        .map(|i| ((i * n) / out, ((i + 1) * n).div_ceil(out)))
        .collect()
}

/// `(batch, channels, plane)` -> `(channels, batch * plane)`.
fn gather_channels_major<T: Scalar>(x: &[T], bn: usize, c: usize, plane: usize) -> Vec<T> {
    let n = bn * plane;
    let mut out = vec![T::zero(); c * n];
    for s in 0..bn {
        for ch in 0..c {
            out[ch * n + s * plane..ch * n + (s + 1) * plane]
                .copy_from_slice(&x[(s * c + ch) * plane..(s * c + ch + 1) * plane]);
        }
    }
    out
}

/// Inverse of [`gather_channels_major`].
fn scatter_channels_major<T: Scalar>(m: &[T], bn: usize, c: usize, plane: usize) -> Vec<T> {
    let n = bn * plane;
    let mut out = vec![T::zero(); c * n];
    for s in 0..bn {
        for ch in 0..c {
            out[(s * c + ch) * plane..(s * c + ch + 1) * plane]
                .copy_from_slice(&m[ch * n + s * plane..ch * n + (s + 1) * plane]);
        }
    }
    out
}

fn row_sums<T: Scalar>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    (0..rows).map(|r| m[r * cols..(r + 1) * cols].iter().copied().sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_bins_overlap_like_adaptive_pooling() {
        assert_eq!(pool_bins(5, 4), vec![(0, 2), (1, 3), (2, 4), (3, 5)]);
        assert_eq!(pool_bins(20, 1), vec![(0, 20)]);
        assert_eq!(pool_bins(4, 4), vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
    }

    #[test]
    fn frozen_store_gets_no_gradient_but_input_does() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::from_vec(&[1, 2], vec![2.0, -1.0]).unwrap()).unwrap();
        store.insert("b", Tensor::zeros(&[1])).unwrap();
        let mut tape = Tape::new();
        let x = tape.input_with_grad(Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap());
        let w = tape.param(&store, 0);
        let b = tape.param(&store, 1);
        let y = tape.dense(x, w, b).unwrap();
        let loss = tape.mean(y);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(w).is_none());
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, -1.0]);
        grads.accumulate_into(&mut store);
        assert!(store.grad(0).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn repeated_param_binds_share_a_var() {
        let mut store = ParamStore::<f32>::new();
        store.insert("w", Tensor::zeros(&[3])).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&store, 0);
        let b = tape.param(&store, 0);
        assert_eq!(a, b);
    }

    #[test]
    fn log_prob_is_finite_at_zero_and_one() {
        let mut tape = Tape::<f64>::new();
        let p = tape.input(Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap());
        let l = tape.log_prob(p, false);
        let lc = tape.log_prob(p, true);
        assert!(tape.value(l).is_finite());
        assert!(tape.value(lc).is_finite());
    }
}
