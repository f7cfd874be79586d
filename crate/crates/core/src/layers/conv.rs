//! 3×3 (or general k×k) convolution with dilation and zero padding.
//!
//! `out(b, o, i, j) = bias(o) + Σ_{c,s,t} w(o, c, s, t) · x(b, c, i + d·s − pad, j + d·t − pad)`
//! with out-of-range input reads treated as zero. With `pad = d` and a 3×3
//! kernel the spatial size is preserved.

use crate::error::{Error, Result};
use crate::layers::tape::{LayerId, Saved, Tape};
use crate::par;
use crate::tensor::{Real, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    /// `(out_c, in_c, kh, kw)`
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
    pub dilation: usize,
    pub pad: usize,
}

impl<T: Real> ConvParams<T> {
    /// Same-padding parameters (`pad = dilation`).
    pub fn new(weight: Tensor4<T>, bias: Vec<T>, dilation: usize) -> Result<Self> {
        Self::with_pad(weight, bias, dilation, dilation)
    }

    pub fn with_pad(weight: Tensor4<T>, bias: Vec<T>, dilation: usize, pad: usize) -> Result<Self> {
        if dilation == 0 {
            return Err(Error::InvalidArgument("dilation must be >= 1".into()));
        }
        if bias.len() != weight.n() {
            return Err(Error::InvalidArgument(format!(
                "bias has {} entries for {} output channels",
                bias.len(),
                weight.n()
            )));
        }
        Ok(Self {
            weight,
            bias,
            dilation,
            pad,
        })
    }

    /// Zero weights and bias.
    pub fn zeros(out_c: usize, in_c: usize, k: usize, dilation: usize) -> Result<Self> {
        Self::new(
            Tensor4::zeros(out_c, in_c, k, k)?,
            vec![T::zero(); out_c],
            dilation,
        )
    }

    pub fn out_c(&self) -> usize {
        self.weight.n()
    }

    pub fn in_c(&self) -> usize {
        self.weight.c()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let span_h = self.dilation * (self.weight.h() - 1);
        let span_w = self.dilation * (self.weight.w() - 1);
        let oh = (h + 2 * self.pad).checked_sub(span_h).filter(|&v| v > 0);
        let ow = (w + 2 * self.pad).checked_sub(span_w).filter(|&v| v > 0);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::InvalidDims(format!(
                "{h}x{w} input too small for dilation {} and pad {}",
                self.dilation, self.pad
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T = f32> {
    pub grad_x: Tensor4<T>,
    pub grad_w: Tensor4<T>,
    pub grad_b: Vec<T>,
}

/// Valid output range `[lo, hi)` along one axis for a tap at input offset `off`.
#[inline]
fn tap_range(off: isize, out_len: usize, in_len: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (in_len as isize - off).clamp(0, out_len as isize) as usize;
    (lo, hi.max(lo))
}

pub fn conv2d_fwd<T: Real>(
    x: &Tensor4<T>,
    p: &ConvParams<T>,
    id: LayerId,
    tape: Option<&mut Tape<T>>,
) -> Result<Tensor4<T>> {
    let [n, c, h, w] = x.shape();
    if c != p.in_c() {
        return Err(Error::InvalidArgument(format!(
            "conv expects {} input channels, got {c}",
            p.in_c()
        )));
    }
    let (oh, ow) = p.out_size(h, w)?;
    let (kh, kw, d, pad) = (
        p.weight.h(),
        p.weight.w(),
        p.dilation as isize,
        p.pad as isize,
    );
    let oc = p.out_c();
    let mut out = Tensor4::zeros(n, oc, oh, ow)?;
    par::for_each_chunk_mut(out.data_mut(), oh * ow, |plane, dst| {
        let (b, o) = (plane / oc, plane % oc);
        dst.iter_mut().for_each(|v| *v = p.bias[o]);
        for ch in 0..c {
            let src = x.plane(b, ch);
            for s in 0..kh {
                let di = s as isize * d - pad;
                let (i0, i1) = tap_range(di, oh, h);
                for t in 0..kw {
                    let wv = p.weight.at(o, ch, s, t);
                    if wv == T::zero() {
                        continue;
                    }
                    let dj = t as isize * d - pad;
                    let (j0, j1) = tap_range(dj, ow, w);
                    for i in i0..i1 {
                        let row_in = (i as isize + di) as usize * w;
                        let row_out = i * ow;
                        let src_row = &src[(row_in as isize + j0 as isize + dj) as usize..];
                        for (dv, &sv) in dst[row_out + j0..row_out + j1].iter_mut().zip(src_row) {
                            *dv += wv * sv;
                        }
                    }
                }
            }
        }
    });
    if let Some(tape) = tape {
        tape.push(id, Saved::Conv { input: x.clone() });
    }
    Ok(out)
}

pub fn conv2d_bwd<T: Real>(
    grad_out: &Tensor4<T>,
    p: &ConvParams<T>,
    id: LayerId,
    tape: &mut Tape<T>,
) -> Result<ConvGrads<T>> {
    let x = match tape.pop(id, "conv")? {
        Saved::Conv { input } => input,
        _ => unreachable!("kind checked by Tape::pop"),
    };
    let [n, c, h, w] = x.shape();
    let (oh, ow) = p.out_size(h, w)?;
    let oc = p.out_c();
    if grad_out.shape() != [n, oc, oh, ow] {
        return Err(Error::ShapeMismatch {
            expected: [n, oc, oh, ow],
            got: grad_out.shape(),
        });
    }
    let (kh, kw, d, pad) = (
        p.weight.h(),
        p.weight.w(),
        p.dilation as isize,
        p.pad as isize,
    );

    let mut grad_x = x.zeros_like();
    par::for_each_chunk_mut(grad_x.data_mut(), h * w, |plane, dst| {
        let (b, ch) = (plane / c, plane % c);
        for o in 0..oc {
            let g = grad_out.plane(b, o);
            for s in 0..kh {
                let di = s as isize * d - pad;
                let (i0, i1) = tap_range(di, oh, h);
                for t in 0..kw {
                    let wv = p.weight.at(o, ch, s, t);
                    if wv == T::zero() {
                        continue;
                    }
                    let dj = t as isize * d - pad;
                    let (j0, j1) = tap_range(dj, ow, w);
                    for i in i0..i1 {
                        let row_in = ((i as isize + di) as usize * w) as isize + dj;
                        let g_row = &g[i * ow + j0..i * ow + j1];
                        let dst_row = &mut dst[(row_in + j0 as isize) as usize..];
                        for (dv, &gv) in dst_row.iter_mut().zip(g_row) {
                            *dv += wv * gv;
                        }
                    }
                }
            }
        }
    });

    let per_o = c * kh * kw;
    let mut grad_w = p.weight.zeros_like();
    par::for_each_chunk_mut(grad_w.data_mut(), per_o, |o, dst| {
        for ch in 0..c {
            for s in 0..kh {
                let di = s as isize * d - pad;
                let (i0, i1) = tap_range(di, oh, h);
                for t in 0..kw {
                    let dj = t as isize * d - pad;
                    let (j0, j1) = tap_range(dj, ow, w);
                    let mut acc = T::zero();
                    for b in 0..n {
                        let g = grad_out.plane(b, o);
                        let src = x.plane(b, ch);
                        for i in i0..i1 {
                            let row_in = ((i as isize + di) as usize * w) as isize + dj;
                            let src_row = &src[(row_in + j0 as isize) as usize..];
                            for (&gv, &sv) in g[i * ow + j0..i * ow + j1].iter().zip(src_row) {
                                acc += gv * sv;
                            }
                        }
                    }
                    dst[(ch * kh + s) * kw + t] = acc;
                }
            }
        }
    });

    let grad_b = (0..oc)
        .map(|o| {
            (0..n)
                .map(|b| grad_out.plane(b, o).iter().copied().sum::<T>())
                .sum()
        })
        .collect();
    Ok(ConvGrads {
        grad_x,
        grad_w,
        grad_b,
    })
}
