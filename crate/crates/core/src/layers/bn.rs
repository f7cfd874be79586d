//! Batch normalization over `(n, h, w)` per channel.

use crate::error::{Error, Result};
use crate::layers::tape::{LayerId, Saved, Tape};
use crate::par;
use crate::tensor::{Real, Tensor4};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnParams<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Real> BnParams<T> {
    /// `gamma = 1`, `beta = 0`, running statistics `(0, 1)`.
    pub fn new(c: usize) -> Self {
        Self {
            gamma: vec![T::one(); c],
            beta: vec![T::zero(); c],
            running_mean: vec![T::zero(); c],
            running_var: vec![T::one(); c],
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}

#[derive(Clone, Debug)]
pub struct BnGrads<T = f32> {
    pub grad_x: Tensor4<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
}

fn channel_sum<T: Real>(x: &Tensor4<T>, ch: usize, f: impl Fn(T) -> T) -> T {
    (0..x.n())
        .map(|b| x.plane(b, ch).iter().map(|&v| f(v)).sum::<T>())
        .sum()
}

/// Per-channel `(mean, biased variance)` of one training batch.
pub type BatchStats<T> = Vec<(T, T)>;

/// Train mode standardizes with batch statistics and updates the running
/// estimates (unbiased variance); eval mode uses the running estimates.
pub fn bn_fwd<T: Real>(
    x: &Tensor4<T>,
    p: &mut BnParams<T>,
    mode: Mode,
    id: LayerId,
    tape: Option<&mut Tape<T>>,
) -> Result<Tensor4<T>> {
    let (out, stats) = bn_apply(x, p, mode, id, tape)?;
    if let Some(stats) = stats {
        p.update_running(&stats, x.n() * x.plane_len());
    }
    Ok(out)
}

impl<T: Real> BnParams<T> {
    /// Folds one batch's statistics into the running estimates.
    pub fn update_running(&mut self, stats: &BatchStats<T>, count: usize) {
        let mom = T::of(self.momentum);
        let unbias = T::of(count as f64 / (count as f64 - 1.0));
        for (ch, &(mu, var)) in stats.iter().enumerate() {
            self.running_mean[ch] = (T::one() - mom) * self.running_mean[ch] + mom * mu;
            self.running_var[ch] = (T::one() - mom) * self.running_var[ch] + mom * var * unbias;
        }
    }
}

/// Like [`bn_fwd`] but leaves `p` untouched, returning the batch statistics
/// (train mode) for the caller to fold in.
pub fn bn_apply<T: Real>(
    x: &Tensor4<T>,
    p: &BnParams<T>,
    mode: Mode,
    id: LayerId,
    tape: Option<&mut Tape<T>>,
) -> Result<(Tensor4<T>, Option<BatchStats<T>>)> {
    let [n, c, h, w] = x.shape();
    if c != p.channels() {
        return Err(Error::InvalidArgument(format!(
            "batch norm expects {} channels, got {c}",
            p.channels()
        )));
    }
    let count = n * h * w;
    let eps = T::of(p.eps);
    let mut batch = None;
    let (mean, inv_std): (Vec<T>, Vec<T>) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::InvalidArgument(
                    "batch norm in train mode needs more than one value per channel".into(),
                ));
            }
            let m = T::of(count as f64);
            let stats = par::map_indices(c, |ch| {
                let mu = channel_sum(x, ch, |v| v) / m;
                let var = channel_sum(x, ch, |v| (v - mu) * (v - mu)) / m;
                (mu, var)
            });
            let out = stats
                .iter()
                .map(|&(mu, var)| (mu, T::one() / (var + eps).sqrt()))
                .unzip();
            batch = Some(stats);
            out
        }
        Mode::Eval => (
            p.running_mean.clone(),
            p.running_var
                .iter()
                .map(|&v| T::one() / (v + eps).sqrt())
                .collect(),
        ),
    };

    let plane = h * w;
    let mut xhat = x.zeros_like();
    par::for_each_chunk_mut(xhat.data_mut(), plane, |k, dst| {
        let ch = k % c;
        let src = &x.data()[k * plane..(k + 1) * plane];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mean[ch]) * inv_std[ch];
        }
    });
    let mut out = xhat.zeros_like();
    par::for_each_chunk_mut(out.data_mut(), plane, |k, dst| {
        let ch = k % c;
        let src = &xhat.data()[k * plane..(k + 1) * plane];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = p.gamma[ch] * s + p.beta[ch];
        }
    });
    if let Some(tape) = tape {
        let saved = match mode {
            Mode::Train => Saved::BnTrain { xhat, inv_std },
            Mode::Eval => Saved::BnEval { xhat, inv_std },
        };
        tape.push(id, saved);
    }
    Ok((out, batch))
}

pub fn bn_bwd<T: Real>(
    grad_out: &Tensor4<T>,
    p: &BnParams<T>,
    id: LayerId,
    tape: &mut Tape<T>,
) -> Result<BnGrads<T>> {
    let saved = tape.pop(id, "bn")?;
    let [n, c, h, w] = grad_out.shape();
    if c != p.channels() {
        return Err(Error::InvalidArgument(format!(
            "batch norm expects {} channels, got {c}",
            p.channels()
        )));
    }
    let plane = h * w;
    let grad_beta: Vec<T> = (0..c).map(|ch| channel_sum(grad_out, ch, |v| v)).collect();
    let (xhat, inv_std, batch_stats) = match saved {
        Saved::BnTrain { xhat, inv_std } => (xhat, inv_std, true),
        Saved::BnEval { xhat, inv_std } => (xhat, inv_std, false),
        _ => unreachable!("kind checked by Tape::pop"),
    };
    xhat.same_shape(grad_out)?;
    let grad_gamma: Vec<T> = par::map_indices(c, |ch| {
        (0..n)
            .map(|b| {
                grad_out
                    .plane(b, ch)
                    .iter()
                    .zip(xhat.plane(b, ch))
                    .map(|(&g, &xh)| g * xh)
                    .sum::<T>()
            })
            .sum()
    });
    let m = T::of((n * h * w) as f64);
    let mut grad_x = grad_out.zeros_like();
    par::for_each_chunk_mut(grad_x.data_mut(), plane, |k, dst| {
        let ch = k % c;
        let g = &grad_out.data()[k * plane..(k + 1) * plane];
        if batch_stats {
            let scale = p.gamma[ch] * inv_std[ch] / m;
            let xh = &xhat.data()[k * plane..(k + 1) * plane];
            for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(xh) {
                *d = scale * (m * gv - grad_beta[ch] - xv * grad_gamma[ch]);
            }
        } else {
            // running statistics are constants
            let scale = p.gamma[ch] * inv_std[ch];
            for (d, &gv) in dst.iter_mut().zip(g) {
                *d = scale * gv;
            }
        }
    });
    Ok(BnGrads {
        grad_x,
        grad_gamma,
        grad_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{check_gradient, finite_diff_grad};
    use crate::tensor::{randn, Rng};

    fn channel_stats(y: &Tensor4<f64>, ch: usize) -> (f64, f64) {
        let vals: Vec<f64> = (0..y.n()).flat_map(|b| y.plane(b, ch).to_vec()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn train_mode_standardizes() {
        let x: Tensor4<f64> = randn(&mut Rng::new(1), 3, 2, 5, 5, 4.0)
            .unwrap()
            .map(|v| v + 7.0);
        let mut p = BnParams::new(2);
        let y = bn_fwd(&x, &mut p, Mode::Train, LayerId(0), None).unwrap();
        for ch in 0..2 {
            let (m, v) = channel_stats(&y, ch);
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-3);
        }
        assert!(p.running_var.iter().all(|&v| v >= 0.0));
        assert!(p.running_mean.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn affine_after_standardizing() {
        let x: Tensor4<f64> = randn(&mut Rng::new(2), 4, 1, 6, 6, 1.0).unwrap();
        let mut p = BnParams::new(1);
        p.gamma = vec![2.0];
        p.beta = vec![3.0];
        let y = bn_fwd(&x, &mut p, Mode::Train, LayerId(0), None).unwrap();
        let (m, v) = channel_stats(&y, 0);
        assert!((m - 3.0).abs() < 1e-5);
        assert!((v.sqrt() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn eval_identity_with_default_stats() {
        let x: Tensor4<f32> = randn(&mut Rng::new(3), 2, 3, 4, 4, 1.0).unwrap();
        let mut p = BnParams::new(3);
        p.eps = 0.0;
        let y = bn_fwd(&x, &mut p, Mode::Eval, LayerId(0), None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn errors() {
        let x = Tensor4::<f32>::zeros(1, 2, 1, 1).unwrap();
        assert!(bn_fwd(&x, &mut BnParams::new(2), Mode::Train, LayerId(0), None).is_err());
        assert!(bn_fwd(&x, &mut BnParams::new(3), Mode::Eval, LayerId(0), None).is_err());
        assert!(bn_fwd(&x, &mut BnParams::new(2), Mode::Eval, LayerId(0), None).is_ok());
    }

    #[test]
    fn beta_grad_and_constant_grad_out() {
        let mut rng = Rng::new(4);
        let x: Tensor4<f64> = randn(&mut rng, 2, 2, 3, 3, 1.0).unwrap();
        let mut p = BnParams::new(2);
        p.gamma = vec![1.5, -0.5];
        let mut tape = Tape::new();
        bn_fwd(&x, &mut p, Mode::Train, LayerId(1), Some(&mut tape)).unwrap();
        let go = Tensor4::full(x.shape(), 0.7).unwrap();
        let g = bn_bwd(&go, &p, LayerId(1), &mut tape).unwrap();
        for ch in 0..2 {
            assert!((g.grad_beta[ch] - 0.7 * 18.0).abs() < 1e-12);
            let s: f64 = (0..2)
                .map(|b| g.grad_x.plane(b, ch).iter().sum::<f64>())
                .sum();
            assert!(s.abs() < 1e-12, "channel {ch} grad_x sums to {s}");
        }
    }

    #[test]
    fn finite_difference_check() {
        let mut rng = Rng::new(5);
        let x: Tensor4<f64> = randn(&mut rng, 1, 2, 6, 6, 2.0).unwrap();
        let proj: Tensor4<f64> = randn(&mut rng, 1, 2, 6, 6, 1.0).unwrap();
        let base = BnParams {
            gamma: vec![1.3, 0.8],
            beta: vec![0.1, -0.4],
            ..BnParams::new(2)
        };
        let loss = |x: &Tensor4<f64>, gamma: &[f64], beta: &[f64]| -> f64 {
            let mut p = BnParams {
                gamma: gamma.to_vec(),
                beta: beta.to_vec(),
                ..base.clone()
            };
            let y = bn_fwd(x, &mut p, Mode::Train, LayerId(0), None).unwrap();
            y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
        };
        let mut p = base.clone();
        let mut tape = Tape::new();
        bn_fwd(&x, &mut p, Mode::Train, LayerId(0), Some(&mut tape)).unwrap();
        let g = bn_bwd(&proj, &base, LayerId(0), &mut tape).unwrap();

        let nx = finite_diff_grad(
            |v| {
                Ok(loss(
                    &Tensor4::from_vec(x.shape(), v.to_vec()).unwrap(),
                    &base.gamma,
                    &base.beta,
                ))
            },
            x.data(),
            1e-3,
        )
        .unwrap();
        assert!(check_gradient(g.grad_x.data(), &nx).passed(1e-3));
        let ng = finite_diff_grad(|v| Ok(loss(&x, v, &base.beta)), &base.gamma, 1e-3).unwrap();
        assert!(check_gradient(&g.grad_gamma, &ng).passed(1e-3));
        let nb = finite_diff_grad(|v| Ok(loss(&x, &base.gamma, v)), &base.beta, 1e-3).unwrap();
        assert!(check_gradient(&g.grad_beta, &nb).passed(1e-3));
    }
}
