//! Geometry and lowering kernels for 2-D convolution.
//!
//! A convolution is lowered to a matrix product by `im2col`; its adjoint
//! (used both for the input gradient and for transposed convolution) scatters
//! back with `col2im`. Both kernels share one index map, so the two are exact
//! transposes of each other for either padding mode.

use serde::{Deserialize, Serialize};

use super::Scalar;

/// How out-of-range taps are filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Zero,
    /// Edge replication; a per-channel constant offset on the input becomes a
    /// per-channel constant offset on the output.
    Replicate,
}

/// Output length and leading pad for same-style padding:
/// `out = ceil(n / stride)`.
pub fn same_padding(n: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = n.div_ceil(stride);
    let total = ((out.saturating_sub(1)) * stride + kernel).saturating_sub(n);
    (out, total / 2)
}

/// Shape bookkeeping of a forward convolution `(c_in, h_in, w_in) -> (c_out, h_out, w_out)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub padding: Padding,
}

impl ConvGeom {
    pub fn same(
        c_in: usize,
        (h_in, w_in): (usize, usize),
        c_out: usize,
        (kh, kw): (usize, usize),
        (sh, sw): (usize, usize),
        padding: Padding,
    ) -> Self {
        let (h_out, ph) = same_padding(h_in, kh, sh);
        let (w_out, pw) = same_padding(w_in, kw, sw);
        Self {
            c_in,
            h_in,
            w_in,
            c_out,
            h_out,
            w_out,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
            padding,
        }
    }

    /// Rows of the lowered matrix.
    pub fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn in_plane(&self) -> usize {
        self.h_in * self.w_in
    }

    pub fn out_plane(&self) -> usize {
        self.h_out * self.w_out
    }

    fn axis_map(n_in: usize, n_out: usize, k: usize, s: usize, pad: usize, mode: Padding) -> Vec<isize> {
        let mut map = Vec::with_capacity(k * n_out);
        for tap in 0..k {
            for o in 0..n_out {
                let i = (o * s + tap) as isize - pad as isize;
                let idx = if (0..n_in as isize).contains(&i) {
                    i
                } else {
                    match mode {
                        Padding::Zero => -1,
                        Padding::Replicate => i.clamp(0, n_in as isize - 1),
                    }
                };
                map.push(idx);
            }
        }
        map
    }

    pub(crate) fn index_maps(&self) -> (Vec<isize>, Vec<isize>) {
        (
            Self::axis_map(self.h_in, self.h_out, self.kh, self.sh, self.ph, self.padding),
            Self::axis_map(self.w_in, self.w_out, self.kw, self.sw, self.pw, self.padding),
        )
    }
}

/// Lowers one sample `x` (`c_in x h_in x w_in`) into columns
/// `[col0, col0 + out_plane)` of `cols`, a `k x ld` row-major matrix.
pub(crate) fn im2col<T: Scalar>(
    x: &[T],
    g: &ConvGeom,
    maps: &(Vec<isize>, Vec<isize>),
    cols: &mut [T],
    col0: usize,
    ld: usize,
) {
    let (hmap, wmap) = maps;
    let plane = g.in_plane();
    let mut row = 0;
    for c in 0..g.c_in {
        let xc = &x[c * plane..(c + 1) * plane];
        for i in 0..g.kh {
            let hm = &hmap[i * g.h_out..(i + 1) * g.h_out];
            for j in 0..g.kw {
                let wm = &wmap[j * g.w_out..(j + 1) * g.w_out];
                let dst = &mut cols[row * ld + col0..row * ld + col0 + g.out_plane()];
                for (oh, &ih) in hm.iter().enumerate() {
                    let out = &mut dst[oh * g.w_out..(oh + 1) * g.w_out];
                    if ih < 0 {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &xc[ih as usize * g.w_in..(ih as usize + 1) * g.w_in];
                    for (v, &iw) in out.iter_mut().zip(wm) {
                        *v = if iw < 0 { T::zero() } else { src[iw as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into one sample `dx`.
pub(crate) fn col2im<T: Scalar>(
    cols: &[T],
    g: &ConvGeom,
    maps: &(Vec<isize>, Vec<isize>),
    col0: usize,
    ld: usize,
    dx: &mut [T],
) {
    let (hmap, wmap) = maps;
    let plane = g.in_plane();
    let mut row = 0;
    for c in 0..g.c_in {
        let xc = &mut dx[c * plane..(c + 1) * plane];
        for i in 0..g.kh {
            let hm = &hmap[i * g.h_out..(i + 1) * g.h_out];
            for j in 0..g.kw {
                let wm = &wmap[j * g.w_out..(j + 1) * g.w_out];
                let src = &cols[row * ld + col0..row * ld + col0 + g.out_plane()];
                for (oh, &ih) in hm.iter().enumerate() {
                    if ih < 0 {
                        continue;
                    }
                    let dst = &mut xc[ih as usize * g.w_in..(ih as usize + 1) * g.w_in];
                    for (v, &iw) in src[oh * g.w_out..(oh + 1) * g.w_out].iter().zip(wm) {
                        if iw >= 0 {
                            dst[iw as usize] += *v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}
