use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use mwcnn::io::{psnr_u8, read_pnm, ssim_u8, write_pnm, ImageU8, PnmFormat, RunConfig};
use mwcnn::model::{build, Downsampler};
use mwcnn::par;
use mwcnn::train::corpus::list_images;
use mwcnn::train::{
    ablation, add_gaussian_noise, border_for, load_checkpoint, load_corpus_dir, save_checkpoint,
    synthetic_corpus, Trainer, ABLATION_HEADER, LOG_HEADER,
};
use mwcnn::{Rng, Tensor4};

type Images = Vec<Tensor4<f32>>;

fn split_corpus(dir: &Path, val_images: usize) -> Result<(Images, Images)> {
    let mut all: Images = load_corpus_dir(dir)?.into_iter().map(|(_, t)| t).collect();
    if all.len() <= val_images {
        bail!(
            "{} holds {} images; need more than val_images = {val_images}",
            dir.display(),
            all.len()
        );
    }
    let val = all.split_off(all.len() - val_images);
    Ok((all, val))
}

pub fn train(
    config: &Path,
    corpus: &Path,
    out: &Path,
    log: Option<&Path>,
    resume: Option<&Path>,
) -> Result<ExitCode> {
    let run = RunConfig::load(config).with_context(|| format!("reading {}", config.display()))?;
    let (train_set, val_set) = split_corpus(corpus, run.train.val_images)?;
    let mut trainer = match resume {
        Some(p) => {
            let ck = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            ck.ensure_compatible(&run.model)?;
            let mut t = Trainer::from_checkpoint(ck)?;
            t.cfg = run.train.clone();
            t
        }
        None => Trainer::new(&run.model, &run.train)?,
    };
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".log");
        PathBuf::from(p)
    });
    let mut log_file = if resume.is_some() {
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?
    } else {
        let mut f = File::create(&log_path)?;
        writeln!(f, "{LOG_HEADER}")?;
        f
    };
    println!("{LOG_HEADER}");
    while trainer.epoch < trainer.cfg.epochs {
        let line = trainer.run_epoch(&train_set, &val_set)?;
        println!("{line}");
        writeln!(log_file, "{line}")?;
        save_checkpoint(&trainer.checkpoint(), out)?;
    }
    if trainer.cfg.epochs == 0 {
        save_checkpoint(&trainer.checkpoint(), out)?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn denoise(checkpoint: &Path, input: &Path, output: &Path, ascii: bool) -> Result<ExitCode> {
    let ck =
        load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let noisy: Tensor4 = read_pnm(input)?.to_luma().to_tensor();
    let restored = ck.model.infer_padded(&noisy)?;
    let format = if ascii {
        PnmFormat::Ascii
    } else {
        PnmFormat::Binary
    };
    write_pnm(&ImageU8::from_tensor(&restored)?, output, format)?;
    Ok(ExitCode::SUCCESS)
}

fn crop_u8(img: &ImageU8, border: usize) -> Result<ImageU8> {
    if img.h <= 2 * border || img.w <= 2 * border {
        return Ok(img.clone());
    }
    let (h, w) = (img.h - 2 * border, img.w - 2 * border);
    let samples = (0..h)
        .flat_map(|i| {
            let start = (i + border) * img.w + border;
            img.samples[start..start + w].iter().copied()
        })
        .collect();
    Ok(ImageU8::gray(h, w, samples)?)
}

pub fn eval(checkpoint: &Path, clean_dir: &Path, sigma: f64, seed: u64) -> Result<ExitCode> {
    let ck =
        load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let paths = list_images(clean_dir)?;
    if paths.is_empty() {
        bail!("no PNM images in {}", clean_dir.display());
    }
    let border = border_for(ck.model.config());
    let base = Rng::new(seed);
    let model = &ck.model;
    let rows = par::map_indices(paths.len(), |k| -> Result<(f64, f64)> {
        let clean = read_pnm(&paths[k])?.to_luma();
        let noisy = add_gaussian_noise(&clean.to_tensor::<f32>(), sigma, &mut base.fork(k as u64))?;
        let restored = ImageU8::from_tensor(&model.infer_padded(&noisy)?)?;
        let (a, b) = (crop_u8(&restored, border)?, crop_u8(&clean, border)?);
        Ok((psnr_u8(&a, &b)?, ssim_u8(&a, &b)?))
    });
    println!("# sigma={sigma} seed={seed} border_crop={border}");
    let (mut sp, mut ss) = (0.0, 0.0);
    for (path, row) in paths.iter().zip(rows) {
        let (p, s) = row.with_context(|| format!("evaluating {}", path.display()))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy())
            .unwrap_or_default();
        println!("{name}\t{p:.4}\t{s:.4}");
        sp += p;
        ss += s;
    }
    let n = paths.len() as f64;
    println!("# mean\t{:.4}\t{:.4}", sp / n, ss / n);
    Ok(ExitCode::SUCCESS)
}

pub struct RfmaskOpts {
    pub config: Option<PathBuf>,
    pub variant: Option<Downsampler>,
    pub levels: Option<usize>,
    pub chain_depth: Option<usize>,
    pub chain_dilation: Option<usize>,
    pub size: usize,
    pub pixel: Option<String>,
    pub output: PathBuf,
}

fn parse_pixel(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once(',').context("pixel must be row,col")?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

pub fn rfmask(o: RfmaskOpts) -> Result<ExitCode> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?.model,
        None => Default::default(),
    };
    if let Some(v) = o.variant {
        cfg.downsampler = v;
    }
    if let Some(l) = o.levels {
        cfg.levels = l;
        if cfg.widths.len() != l {
            cfg.widths = (0..l).map(|k| 16 << k).collect();
        }
    }
    if let Some(d) = o.chain_depth {
        cfg.chain_depth = d;
    }
    if let Some(d) = o.chain_dilation {
        cfg.chain_dilation = d;
    }
    let pixel = match &o.pixel {
        Some(p) => parse_pixel(p)?,
        None => (o.size / 2, o.size / 2),
    };
    let model = build(&cfg, &mut Rng::new(0))?;
    let mask = model.receptive_field_mask(o.size, o.size, pixel)?;
    let samples = mask.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_pnm(
        &ImageU8::gray(o.size, o.size, samples)?,
        &o.output,
        PnmFormat::Binary,
    )?;
    let bbox = mask
        .bbox()
        .map(|(t, l, b, r)| format!("rows {t}..={b} cols {l}..={r}"))
        .unwrap_or_else(|| "empty".into());
    println!(
        "{} conv layers; support {} px; bbox {bbox}; holes {}",
        model.conv_layers(),
        mask.count(),
        mask.holes()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn selfcheck(seed: u64) -> Result<ExitCode> {
    let lines = mwcnn::selfcheck::run_all(seed);
    let passed = lines.iter().filter(|l| l.passed).count();
    for l in &lines {
        println!("{l}");
    }
    println!("{passed}/{} checks passed", lines.len());
    Ok(if passed == lines.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

pub fn ablate(config: &Path, corpus: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let run = RunConfig::load(config)?;
    let (train_set, val_set) = split_corpus(corpus, run.train.val_images)?;
    if val_set.is_empty() {
        bail!("ablate needs val_images >= 1");
    }
    let rows = ablation(&run.model, &run.train, &train_set, &val_set, |v, l| {
        eprintln!("{v} {l}")
    })?;
    let mut table = format!("{ABLATION_HEADER}\n");
    for r in &rows {
        table.push_str(&format!("{r}\n"));
    }
    print!("{table}");
    if let Some(p) = out {
        fs::write(p, &table)?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn corpus(dir: &Path, count: usize, h: usize, w: usize, seed: u64) -> Result<ExitCode> {
    fs::create_dir_all(dir)?;
    for (k, img) in synthetic_corpus(count, h, w, seed).iter().enumerate() {
        let path = dir.join(format!("img_{k:03}.pgm"));
        let mut f = BufWriter::new(File::create(&path)?);
        f.write_all(&mwcnn::io::encode_pnm(img, PnmFormat::Binary))?;
    }
    println!("wrote {count} images to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}
