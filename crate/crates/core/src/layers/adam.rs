//! Bias-corrected ADAM over a flat list of parameter buffers.

use crate::error::{Error, Result};
use crate::tensor::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments for buffers of the given lengths.
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }

    /// One update of every buffer in `params` with the matching gradient.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[Vec<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "adam tracks {} buffers, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[k].len() || g.len() != self.m[k].len() {
                return Err(Error::InvalidArgument(format!(
                    "buffer {k}: state {} vs param {} vs grad {}",
                    self.m[k].len(),
                    p.len(),
                    g.len()
                )));
            }
        }
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powf(self.t as f64));
        let c2 = T::of(1.0 - self.beta2.powf(self.t as f64));
        let (lr, eps) = (T::of(lr), T::of(self.eps));
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [0.3f64, -2.0, 1e-3, 50.0] {
            let mut s = AdamState::<f64>::new(&[2]);
            let mut p = [1.0, -1.0];
            s.step(&mut [&mut p[..]], &[vec![g, g]], 1e-3).unwrap();
            for &x in &[p[0] - 1.0, p[1] + 1.0] {
                assert!((x + 1e-3 * g.signum()).abs() < 1e-6, "delta {x} for g {g}");
            }
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = AdamState::<f32>::new(&[3]);
        let mut p = vec![0.5f32, -0.25, 3.0];
        for _ in 0..100 {
            s.step(&mut [&mut p[..]], &[vec![0.0; 3]], 1e-2).unwrap();
        }
        assert_eq!(p, vec![0.5, -0.25, 3.0]);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut s = AdamState::<f32>::new(&[4]);
            let mut p = vec![0.1f32, 0.2, 0.3, 0.4];
            for t in 0..50 {
                let g: Vec<f32> = p.iter().map(|x| x * x - 0.01 * t as f32).collect();
                s.step(&mut [&mut p[..]], &[g], 1e-3).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::<f32>::new(&[2]);
        let mut p = [0.0f32; 3];
        assert!(s.step(&mut [&mut p[..]], &[vec![0.0; 3]], 1e-3).is_err());
        assert!(s.step(&mut [], &[], 1e-3).is_err());
    }
}
