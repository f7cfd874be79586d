//! Training images: PNM directories and a seeded synthetic generator.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::pnm::{read_pnm, ImageU8};
use crate::tensor::{Rng, Tensor4};

const EXTENSIONS: [&str; 4] = ["pgm", "ppm", "pnm", "pbm"];

/// Every PNM file directly inside `dir`, sorted by file name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Gray tensors for every image in `dir`, in file-name order.
pub fn load_corpus_dir(dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, Tensor4<f32>)>> {
    let dir = dir.as_ref();
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no PNM images in {}",
            dir.display()
        )));
    }
    paths
        .into_iter()
        .map(|p| {
            let t = read_pnm(&p)?.to_luma().to_tensor();
            Ok((p, t))
        })
        .collect()
}

/// Piecewise-smooth gray scenes: a shaded background with rectangles, discs
/// and a striped patch. Same `(count, h, w, seed)` → same images.
pub fn synthetic_corpus(count: usize, h: usize, w: usize, seed: u64) -> Vec<ImageU8> {
    let root = Rng::new(seed);
    (0..count)
        .map(|k| synthetic_image(&mut root.fork(k as u64), h, w))
        .collect()
}

fn synthetic_image(rng: &mut Rng, h: usize, w: usize) -> ImageU8 {
    let (hf, wf) = (h as f64, w as f64);
    let base = 40.0 + 120.0 * rng.unit();
    let (gy, gx) = (60.0 * (rng.unit() - 0.5), 60.0 * (rng.unit() - 0.5));
    let mut img: Vec<f64> = (0..h * w)
        .map(|k| base + gy * (k / w) as f64 / hf + gx * (k % w) as f64 / wf)
        .collect();

    for _ in 0..2 + rng.below(4) {
        let (t, l) = (rng.unit() * hf, rng.unit() * wf);
        let (bh, bw) = (
            (0.15 + 0.4 * rng.unit()) * hf,
            (0.15 + 0.4 * rng.unit()) * wf,
        );
        let v = 255.0 * rng.unit();
        for i in 0..h {
            for j in 0..w {
                let (y, x) = (i as f64, j as f64);
                if y >= t && y < t + bh && x >= l && x < l + bw {
                    img[i * w + j] = v;
                }
            }
        }
    }
    for _ in 0..1 + rng.below(3) {
        let (cy, cx) = (rng.unit() * hf, rng.unit() * wf);
        let r = (0.08 + 0.2 * rng.unit()) * hf.min(wf);
        let v = 255.0 * rng.unit();
        for i in 0..h {
            for j in 0..w {
                let (dy, dx) = (i as f64 - cy, j as f64 - cx);
                if dy * dy + dx * dx <= r * r {
                    img[i * w + j] = v;
                }
            }
        }
    }
    let (t, l) = (rng.unit() * hf * 0.6, rng.unit() * wf * 0.6);
    let (sh, sw) = (0.3 * hf, 0.3 * wf);
    let period = 4.0 + 8.0 * rng.unit();
    let angle = std::f64::consts::PI * rng.unit();
    let (ca, sa) = (angle.cos(), angle.sin());
    for i in 0..h {
        for j in 0..w {
            let (y, x) = (i as f64, j as f64);
            if y >= t && y < t + sh && x >= l && x < l + sw {
                let phase = 2.0 * std::f64::consts::PI * (x * ca + y * sa) / period;
                img[i * w + j] = 128.0 + 90.0 * phase.sin();
            }
        }
    }
    let samples = img.into_iter().map(crate::io::pnm::quantize).collect();
    ImageU8::gray(h, w, samples).expect("generator dims are nonzero")
}
