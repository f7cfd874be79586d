//! Non-overlapping 2×2 sum pooling and its low-band-only inverse.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Real, Tensor4};

/// 2×2 block sums; the Haar LL subband.
pub fn sum_pool2<T: Real>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidDims(format!(
            "sum pooling needs even dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros(n, c, oh, ow)?;
    par::for_each_chunk_mut(out.data_mut(), oh * ow, |k, dst| {
        let src = &x.data()[k * h * w..(k + 1) * h * w];
        for i in 0..oh {
            let (r0, r1) = (2 * i * w, (2 * i + 1) * w);
            for j in 0..ow {
                // same association order as the Haar LL filter
                dst[i * ow + j] =
                    src[r0 + 2 * j] + src[r0 + 2 * j + 1] + src[r1 + 2 * j] + src[r1 + 2 * j + 1];
            }
        }
    });
    Ok(out)
}

/// Replicates each value over its 2×2 block with weight `scale`.
pub fn upsample2<T: Real>(x: &Tensor4<T>, scale: T) -> Result<Tensor4<T>> {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor4::zeros(n, c, oh, ow)?;
    par::for_each_chunk_mut(out.data_mut(), oh * ow, |k, dst| {
        let src = &x.data()[k * h * w..(k + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = src[(i / 2) * w + j / 2] * scale;
            }
        }
    });
    Ok(out)
}

/// Inverse Haar transform fed only the LL band: `x(p) = x1(block(p)) / 4`.
pub fn sum_unpool2<T: Real>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    upsample2(x, T::of(0.25))
}
