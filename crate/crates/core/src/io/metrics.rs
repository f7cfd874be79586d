//! PSNR and SSIM with the peak fixed at 255.

use crate::error::{Error, Result};
use crate::io::pnm::ImageU8;
use crate::tensor::{Real, Tensor4};

pub const PEAK: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// `10 · log10(255² / MSE)`; identical inputs give `f64::INFINITY`.
pub fn psnr_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "psnr over {} vs {} samples",
            a.len(),
            b.len()
        )));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    })
}

pub fn psnr<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<f64> {
    a.same_shape(b)?;
    let cv = |t: &Tensor4<T>| {
        t.data()
            .iter()
            .map(|v| v.to_f64_lossy())
            .collect::<Vec<_>>()
    };
    psnr_slices(&cv(a), &cv(b))
}

pub fn psnr_u8(a: &ImageU8, b: &ImageU8) -> Result<f64> {
    if (a.h, a.w, a.channels) != (b.h, b.w, b.channels) {
        return Err(Error::InvalidArgument(
            "psnr of differently sized images".into(),
        ));
    }
    let cv = |i: &ImageU8| i.samples.iter().map(|&v| v as f64).collect::<Vec<_>>();
    psnr_slices(&cv(a), &cv(b))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|k| (-(k as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-region Gaussian filter of an `h × w` plane.
fn blur(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..k).map(|t| g[t] * x[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|s| g[s] * rows[(i + s) * ow + j]).sum();
        }
    }
    out
}

/// Mean local SSIM of two gray `h × w` planes.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::InvalidArgument(
            "ssim planes do not match their dims".into(),
        ));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidDims(format!(
            "{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let g = gaussian_window();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (mu_a, mu_b) = (blur(a, h, w, &g), blur(b, h, w, &g));
    let (saa, sbb, sab) = (
        blur(&prod(a, a), h, w, &g),
        blur(&prod(b, b), h, w, &g),
        blur(&prod(a, b), h, w, &g),
    );
    let (c1, c2) = ((K1 * PEAK).powi(2), (K2 * PEAK).powi(2));
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|k| {
            let (ma, mb) = (mu_a[k], mu_b[k]);
            let va = saa[k] - ma * ma;
            let vb = sbb[k] - mb * mb;
            let cov = sab[k] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

pub fn ssim_u8(a: &ImageU8, b: &ImageU8) -> Result<f64> {
    if a.channels != 1 || b.channels != 1 || (a.h, a.w) != (b.h, b.w) {
        return Err(Error::InvalidArgument(
            "ssim needs two gray images of equal size".into(),
        ));
    }
    if a.samples == b.samples && a.h >= SSIM_WINDOW && a.w >= SSIM_WINDOW {
        return Ok(1.0);
    }
    let cv = |i: &ImageU8| i.samples.iter().map(|&v| v as f64).collect::<Vec<_>>();
    ssim_plane(&cv(a), &cv(b), a.h, a.w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    fn random_gray(rng: &mut Rng, h: usize, w: usize) -> ImageU8 {
        ImageU8::gray(h, w, (0..h * w).map(|_| rng.below(256) as u8).collect()).unwrap()
    }

    /// Direct per-window evaluation with the 2-D window written out.
    fn ssim_brute(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
        let r = 5.0;
        let mut win = [[0.0; 11]; 11];
        let mut s = 0.0;
        for (i, row) in win.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (-((i as f64 - r).powi(2) + (j as f64 - r).powi(2)) / 4.5).exp();
                s += *v;
            }
        }
        let (c1, c2) = (6.5025, 58.5225);
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..=h - 11 {
            for j in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for s_ in 0..11 {
                    for t in 0..11 {
                        let wt = win[s_][t] / s;
                        let (p, q) = (a[(i + s_) * w + j + t], b[(i + s_) * w + j + t]);
                        ma += wt * p;
                        mb += wt * q;
                        saa += wt * p * p;
                        sbb += wt * q * q;
                        sab += wt * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn psnr_closed_forms() {
        let a = vec![10.0; 64];
        assert_eq!(psnr_slices(&a, &a).unwrap(), f64::INFINITY);
        let b: Vec<f64> = a
            .iter()
            .enumerate()
            .map(|(k, v)| if k % 2 == 0 { v + 1.0 } else { v - 1.0 })
            .collect();
        assert!((psnr_slices(&a, &b).unwrap() - 48.1308).abs() < 1e-4);
        let zeros = vec![0.0; 16];
        let full = vec![255.0; 16];
        assert!(psnr_slices(&zeros, &full).unwrap().abs() < 1e-12);
        assert!(psnr_slices(&zeros, &full[..8]).is_err());
    }

    #[test]
    fn psnr_decreases_with_amplitude() {
        let a = vec![100.0; 100];
        let mut last = f64::INFINITY;
        for amp in 1..40 {
            let b: Vec<f64> = a.iter().map(|v| v + amp as f64).collect();
            let p = psnr_slices(&a, &b).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let mut rng = Rng::new(5);
        let img = random_gray(&mut rng, 24, 20);
        assert_eq!(ssim_u8(&img, &img).unwrap(), 1.0);
        let checker = ImageU8::gray(
            16,
            16,
            (0..256)
                .map(|k| if (k / 16 + k % 16) % 2 == 0 { 0 } else { 255 })
                .collect(),
        )
        .unwrap();
        let inv = ImageU8::gray(16, 16, checker.samples.iter().map(|v| 255 - v).collect()).unwrap();
        let s = ssim_u8(&checker, &inv).unwrap();
        assert!(s < 0.0, "{s}");
        let cv = |i: &ImageU8| i.samples.iter().map(|&v| v as f64).collect::<Vec<_>>();
        assert!((s - ssim_brute(&cv(&checker), &cv(&inv), 16, 16)).abs() < 1e-9);
    }

    #[test]
    fn ssim_errors() {
        let small = ImageU8::gray(10, 30, vec![0; 300]).unwrap();
        assert!(ssim_u8(&small, &small).is_err());
        let other = ImageU8::gray(10, 30, vec![1; 300]).unwrap();
        assert!(ssim_u8(&small, &other).is_err());
        let big = ImageU8::gray(12, 12, vec![0; 144]).unwrap();
        assert!(ssim_u8(&small, &big).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn ssim_matches_brute_force_and_is_symmetric(seed in any::<u64>(), h in 11usize..20, w in 11usize..20) {
            let mut rng = Rng::new(seed);
            let a = random_gray(&mut rng, h, w);
            let b = random_gray(&mut rng, h, w);
            let s = ssim_u8(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert_eq!(s, ssim_u8(&b, &a).unwrap());
            let cv = |i: &ImageU8| i.samples.iter().map(|&v| v as f64).collect::<Vec<_>>();
            prop_assert!((s - ssim_brute(&cv(&a), &cv(&b), h, w)).abs() < 1e-9);
        }
    }
}
