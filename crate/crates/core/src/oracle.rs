//! Brute-force f64 references the fast paths are checked against.
//!
//! Nothing here shares code with the kernels in [`crate::layers`] or
//! [`crate::wavelet`]: convolution is a literal loop over the dilated lattice,
//! the Haar transform is the four block formulas written out by hand, and
//! gradients come from central differences.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};
use crate::wavelet::SubbandQuad;

const MAX_BATCH: usize = 2;
const MAX_CHANNELS: usize = 4;
const MAX_SIDE: usize = 16;

/// Elements where both gradients are below this are not compared.
pub const BOTH_SMALL: f64 = 1e-6;

fn guard(shape: [usize; 4], what: &str) -> Result<()> {
    let [n, c, h, w] = shape;
    if n > MAX_BATCH || c > MAX_CHANNELS || h > MAX_SIDE || w > MAX_SIDE {
        return Err(Error::InvalidArgument(format!(
            "{what} {shape:?} exceeds the oracle limit of {MAX_BATCH}x{MAX_CHANNELS}x{MAX_SIDE}x{MAX_SIDE}"
        )));
    }
    Ok(())
}

/// Literal dilated convolution:
/// `out(b,o,i,j) = bias(o) + Σ_{c,s,t} x(b, c, i − pad + d·s, j − pad + d·t) · w(o,c,s,t)`,
/// reads outside the image contribute zero.
pub fn direct_conv2d_ref(
    x: &Tensor4<f64>,
    w: &Tensor4<f64>,
    bias: &[f64],
    dilation: usize,
    pad: usize,
) -> Result<Tensor4<f64>> {
    guard(x.shape(), "input")?;
    let [oc, ic, kh, kw] = w.shape();
    guard([1, oc.max(ic), kh, kw], "kernel")?;
    let [n, c, h, wd] = x.shape();
    if ic != c || bias.len() != oc {
        return Err(Error::InvalidArgument(
            "kernel/bias shape does not match input".into(),
        ));
    }
    let d = dilation as i64;
    let oh = h as i64 + 2 * pad as i64 - d * (kh as i64 - 1);
    let ow = wd as i64 + 2 * pad as i64 - d * (kw as i64 - 1);
    if oh < 1 || ow < 1 {
        return Err(Error::InvalidDims(
            "reference conv output would be empty".into(),
        ));
    }
    let (oh, ow) = (oh as usize, ow as usize);
    let mut out = Tensor4::zeros(n, oc, oh, ow)?;
    for b in 0..n {
        for o in 0..oc {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias[o];
                    for ch in 0..c {
                        for s in 0..kh {
                            for t in 0..kw {
                                let p = i as i64 - pad as i64 + d * s as i64;
                                let q = j as i64 - pad as i64 + d * t as i64;
                                if p >= 0 && q >= 0 && (p as usize) < h && (q as usize) < wd {
                                    acc += x.at(b, ch, p as usize, q as usize) * w.at(o, ch, s, t);
                                }
                            }
                        }
                    }
                    out.set(b, o, i, j, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Haar subbands from the four 2×2 block formulas. With 0-based `(i, j)` and
/// the block `[[a, b], [c, d]]` anchored at `(2i, 2j)`:
///
/// ```text
/// x1 =  a + b + c + d
/// x2 = −a − b + c + d
/// x3 = −a + b − c + d
/// x4 =  a − b − c + d
/// ```
pub fn dwt2_ref(x: &Tensor4<f64>) -> Result<SubbandQuad<f64>> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidDims(format!("odd dims {h}x{w}")));
    }
    let mut bands: [Tensor4<f64>; 4] =
        std::array::from_fn(|_| Tensor4::zeros(n, c, h / 2, w / 2).expect("valid"));
    for b in 0..n {
        for ch in 0..c {
            for i in 0..h / 2 {
                for j in 0..w / 2 {
                    let a = x.at(b, ch, 2 * i, 2 * j);
                    let bb = x.at(b, ch, 2 * i, 2 * j + 1);
                    let cc = x.at(b, ch, 2 * i + 1, 2 * j);
                    let d = x.at(b, ch, 2 * i + 1, 2 * j + 1);
                    bands[0].set(b, ch, i, j, a + bb + cc + d);
                    bands[1].set(b, ch, i, j, -a - bb + cc + d);
                    bands[2].set(b, ch, i, j, -a + bb - cc + d);
                    bands[3].set(b, ch, i, j, a - bb - cc + d);
                }
            }
        }
    }
    SubbandQuad::new(bands)
}

/// Signs `(s1, s2, s3, s4)` such that the pixel at offset `phase` inside each
/// 2×2 block equals `(s1·x1 + s2·x2 + s3·x3 + s4·x4) / 4`.
pub fn haar_phase_signs(phase: (usize, usize)) -> [f64; 4] {
    match phase {
        (0, 0) => [1.0, -1.0, -1.0, 1.0],
        (0, 1) => [1.0, -1.0, 1.0, -1.0],
        (1, 0) => [1.0, 1.0, -1.0, -1.0],
        _ => [1.0, 1.0, 1.0, 1.0],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivReport {
    /// Max |LHS − RHS| for phases (0,0), (0,1), (1,0), (1,1).
    pub max_abs: [f64; 4],
    pub positions: usize,
    pub tolerance: f64,
}

impl EquivReport {
    pub fn passed(&self) -> bool {
        self.max_abs.iter().all(|&e| e < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.max_abs.iter().copied().fold(0.0, f64::max)
    }
}

/// Checks that a 3×3 dilation-2 convolution of `x`, sampled on one phase of
/// the 2×2 grid, equals a plain 3×3 convolution of the matching signed
/// combination of Haar subbands divided by four. Compared on subband
/// positions at least one pixel from the border.
pub fn dilated_equiv_check(x: &Tensor4<f64>, k: &Tensor4<f64>) -> Result<EquivReport> {
    let [n, c, h, w] = x.shape();
    if n != 1 || c != 1 || k.shape() != [1, 1, 3, 3] {
        return Err(Error::InvalidArgument(
            "equivalence check takes a 1x1xHxW image and a 3x3 kernel".into(),
        ));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidDims(format!("odd dims {h}x{w}")));
    }
    let (sh, sw) = (h / 2, w / 2);
    if sh < 3 || sw < 3 {
        return Err(Error::InvalidDims(
            "no interior positions for a 3x3 kernel".into(),
        ));
    }
    let dilated = direct_conv2d_ref(x, k, &[0.0], 2, 2)?;
    let q = dwt2_ref(x)?;
    let mut max_abs = [0.0f64; 4];
    for (p, phase) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
        let s = haar_phase_signs(phase);
        let combined = Tensor4::from_fn([1, 1, sh, sw], |_, _, i, j| {
            (0..4)
                .map(|b| s[b] * q.bands[b].at(0, 0, i, j))
                .sum::<f64>()
                / 4.0
        })?;
        let rhs = direct_conv2d_ref(&combined, k, &[0.0], 1, 1)?;
        for i in 1..sh - 1 {
            for j in 1..sw - 1 {
                let lhs = dilated.at(0, 0, 2 * i + phase.0, 2 * j + phase.1);
                max_abs[p] = max_abs[p].max((lhs - rhs.at(0, 0, i, j)).abs());
            }
        }
    }
    Ok(EquivReport {
        max_abs,
        positions: (sh - 2) * (sw - 2),
        tolerance: 1e-5,
    })
}

/// Central differences `(f(θ + h·e_i) − f(θ − h·e_i)) / 2h` with
/// `h = step · max(1, |θ_i|)`.
pub fn finite_diff_grad(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    theta: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let h = step * theta[i].abs().max(1.0);
        probe[i] = theta[i] + h;
        let up = f(&probe)?;
        probe[i] = theta[i] - h;
        let down = f(&probe)?;
        probe[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
    pub compared: usize,
    pub exempt: usize,
}

impl GradReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Elementwise relative error `|a − n| / max(|a|, |n|)`, skipping elements
/// where both magnitudes are below [`BOTH_SMALL`].
pub fn check_gradient<T: Real>(analytic: &[T], numeric: &[f64]) -> GradReport {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst_index: None,
        compared: 0,
        exempt: 0,
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let a = a.to_f64_lossy();
        if a.abs() < BOTH_SMALL && n.abs() < BOTH_SMALL {
            report.exempt += 1;
            continue;
        }
        report.compared += 1;
        let rel = (a - n).abs() / a.abs().max(n.abs());
        if !(rel <= report.max_rel_err) {
            report.max_rel_err = if rel.is_nan() { f64::INFINITY } else { rel };
            report.worst_index = Some(i);
        }
    }
    report
}
