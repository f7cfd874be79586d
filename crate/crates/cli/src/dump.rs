//! Subband dumps: one 8-bit preview per WPT leaf, a manifest with the
//! preview scaling, and the exact coefficients in `coeffs.f32`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use mwcnn::io::{parse_kv, quantize, read_pnm, write_pnm, ImageU8, PnmFormat};
use mwcnn::wavelet::{wpt_decompose, wpt_reconstruct, BankKind, FilterBank, WptTree};
use mwcnn::Tensor4;

const MANIFEST: &str = "manifest.txt";
const COEFFS: &str = "coeffs.f32";

fn leaf_name(k: usize) -> String {
    format!("leaf_{k:03}.pgm")
}

pub fn decompose(input: &Path, out_dir: &Path, bank: BankKind, levels: usize) -> Result<ExitCode> {
    let img = read_pnm(input)?.to_luma();
    let x: Tensor4<f64> = img.to_tensor();
    let tree = wpt_decompose(&x, &FilterBank::by_kind(bank), levels)?;
    fs::create_dir_all(out_dir)?;

    let mut manifest = String::new();
    writeln!(manifest, "bank = {bank}")?;
    writeln!(manifest, "levels = {levels}")?;
    writeln!(manifest, "height = {}", img.h)?;
    writeln!(manifest, "width = {}", img.w)?;
    writeln!(manifest, "leaves = {}", tree.leaves.len())?;
    let mut raw = Vec::new();
    for (k, leaf) in tree.leaves.iter().enumerate() {
        let lo = leaf.data().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = leaf
            .data()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        // preview pixel p stands for offset + p * scale
        let scale = if hi > lo { (hi - lo) / 255.0 } else { 1.0 };
        let samples = leaf
            .data()
            .iter()
            .map(|&v| quantize((v - lo) / scale))
            .collect();
        write_pnm(
            &ImageU8::gray(leaf.h(), leaf.w(), samples)?,
            out_dir.join(leaf_name(k)),
            PnmFormat::Binary,
        )?;
        writeln!(manifest, "leaf.{k} = {} {lo:?} {scale:?}", leaf_name(k))?;
        raw.extend(leaf.data().iter().flat_map(|&v| (v as f32).to_le_bytes()));
    }
    fs::write(out_dir.join(MANIFEST), manifest)?;
    fs::write(out_dir.join(COEFFS), raw)?;
    println!(
        "{} leaves of {}x{} written to {}",
        tree.leaves.len(),
        img.h >> levels,
        img.w >> levels,
        out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn field<T: std::str::FromStr>(map: &mwcnn::io::KvMap, key: &str) -> Result<T> {
    map.get(key)
        .with_context(|| format!("manifest lacks {key:?}"))?
        .parse()
        .map_err(|_| anyhow::anyhow!("manifest {key:?} is malformed"))
}

/// Prefers the exact coefficients and falls back to the 8-bit previews.
pub fn reconstruct(in_dir: &Path, output: &Path) -> Result<ExitCode> {
    let map = parse_kv(&fs::read_to_string(in_dir.join(MANIFEST))?)?;
    let bank: BankKind = field::<String>(&map, "bank")?.parse()?;
    let levels: usize = field(&map, "levels")?;
    let (h, w): (usize, usize) = (field(&map, "height")?, field(&map, "width")?);
    let count: usize = field(&map, "leaves")?;
    let (lh, lw) = (h >> levels, w >> levels);
    if count != 1 << (2 * levels) {
        bail!("{count} leaves do not match {levels} levels");
    }
    let coeffs = in_dir.join(COEFFS);
    let leaves = if coeffs.exists() {
        let raw = fs::read(&coeffs)?;
        if raw.len() != 4 * count * lh * lw {
            bail!(
                "{} has {} bytes, expected {}",
                coeffs.display(),
                raw.len(),
                4 * count * lh * lw
            );
        }
        let vals: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        vals.chunks(lh * lw)
            .map(|c| Tensor4::from_vec([1, 1, lh, lw], c.to_vec()))
            .collect::<mwcnn::Result<Vec<_>>>()?
    } else {
        (0..count)
            .map(|k| -> Result<Tensor4<f64>> {
                let entry: String = field(&map, &format!("leaf.{k}"))?;
                let parts: Vec<&str> = entry.split_whitespace().collect();
                let [file, lo, scale] = parts[..] else {
                    bail!("manifest leaf.{k} is malformed");
                };
                let (lo, scale): (f64, f64) = (lo.parse()?, scale.parse()?);
                let img = read_pnm(in_dir.join(file))?;
                if (img.h, img.w) != (lh, lw) {
                    bail!("{file} is {}x{}, expected {lh}x{lw}", img.h, img.w);
                }
                let vals = img.samples.iter().map(|&p| lo + p as f64 * scale).collect();
                Ok(Tensor4::from_vec([1, 1, lh, lw], vals)?)
            })
            .collect::<Result<Vec<_>>>()?
    };
    let x = wpt_reconstruct(&WptTree { levels, leaves }, &FilterBank::by_kind(bank))?;
    write_pnm(&ImageU8::from_tensor(&x)?, output, PnmFormat::Binary)?;
    Ok(ExitCode::SUCCESS)
}
