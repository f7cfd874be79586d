//! Gaussian-denoising training harness.

pub mod checkpoint;
pub mod corpus;

use std::fmt;

use crate::error::{Error, Result};
use crate::io::metrics::psnr;
use crate::layers::{AdamState, Mode, Tape};
use crate::model::{build, Downsampler, ModelGraph, MwcnnConfig};
use crate::tensor::{Real, Rng, Tensor4};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use corpus::{load_corpus_dir, synthetic_corpus};

const INIT_SALT: u64 = 1;
const SAMPLE_SALT: u64 = 2;
const VAL_SALT: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Noise standard deviation on the 0–255 scale.
    pub sigma: f64,
    pub patch: usize,
    pub batch: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub augment: bool,
    pub seed: u64,
    /// Images held out of the corpus for validation.
    pub val_images: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sigma: 25.0,
            patch: 48,
            batch: 24,
            epochs: 40,
            steps_per_epoch: 50,
            lr_start: 1e-3,
            lr_end: 1e-4,
            augment: true,
            seed: 0,
            val_images: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &MwcnnConfig) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::Config(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        let m = model.spatial_multiple();
        if self.patch == 0 || !self.patch.is_multiple_of(m) {
            return Err(Error::Config(format!(
                "patch {} is not a positive multiple of {m}",
                self.patch
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) {
            return Err(Error::Config(format!(
                "need lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        if self.epochs > 0 {
            lr_schedule(0, self)?;
        }
        Ok(())
    }
}

/// Eq. 1 objective `(1/2N) Σ ‖pred_i − target_i‖²` and its gradient
/// `(pred − target) / N`.
pub fn loss<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    pred.same_shape(target)?;
    let n = pred.n() as f64;
    let diff = pred.sub(target)?;
    let l = diff
        .data()
        .iter()
        .map(|v| {
            let v = v.to_f64_lossy();
            v * v
        })
        .sum::<f64>()
        / (2.0 * n);
    Ok((l, diff.scale(T::of(1.0 / n))))
}

/// `x + n` with `n ~ N(0, sigma²)` i.i.d., no clipping.
pub fn add_gaussian_noise<T: Real>(
    x: &Tensor4<T>,
    sigma: f64,
    rng: &mut Rng,
) -> Result<Tensor4<T>> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let data = x
        .data()
        .iter()
        .map(|v| T::of(v.to_f64_lossy() + sigma * rng.standard_normal()))
        .collect();
    Tensor4::from_vec(x.shape(), data)
}

/// `count` uniformly placed `patch × patch` crops from uniformly chosen images.
pub fn sample_patches(
    corpus: &[Tensor4<f32>],
    patch: usize,
    count: usize,
    rng: &mut Rng,
) -> Result<Tensor4<f32>> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    if let Some(small) = corpus.iter().find(|t| t.h() < patch || t.w() < patch) {
        return Err(Error::InvalidDims(format!(
            "{}x{} image is smaller than patch {patch}",
            small.h(),
            small.w()
        )));
    }
    let items = (0..count)
        .map(|_| {
            let img = &corpus[rng.below(corpus.len())];
            let top = rng.below(img.h() - patch + 1);
            let left = rng.below(img.w() - patch + 1);
            img.item(0).crop(top, left, patch, patch)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor4::stack(&items)
}

/// Element `k` of the dihedral group: optional horizontal flip (`k >= 4`)
/// followed by `k mod 4` counter-clockwise quarter turns.
pub fn dihedral<T: Real>(x: &Tensor4<T>, k: usize) -> Result<Tensor4<T>> {
    if k >= 8 {
        return Err(Error::InvalidArgument(format!(
            "dihedral element {k} out of 0..8"
        )));
    }
    let [n, c, h, w] = x.shape();
    let turns = k % 4;
    if turns % 2 == 1 && h != w {
        return Err(Error::InvalidDims(format!(
            "quarter turn of non-square {h}x{w} input"
        )));
    }
    let flip = k >= 4;
    Tensor4::from_fn([n, c, h, w], |b, ch, i, j| {
        // undo the turns: a counter-clockwise turn maps in(i, j) to out(w - 1 - j, i)
        let (si, mut sj) = match turns {
            0 => (i, j),
            1 => (j, w - 1 - i),
            2 => (h - 1 - i, w - 1 - j),
            _ => (h - 1 - j, i),
        };
        if flip {
            sj = w - 1 - sj;
        }
        x.at(b, ch, si, sj)
    })
}

/// Applies a uniformly chosen dihedral element to each batch item.
pub fn augment<T: Real>(x: &Tensor4<T>, rng: &mut Rng) -> Result<Tensor4<T>> {
    let items = (0..x.n())
        .map(|b| dihedral(&x.item(b), rng.below(8)))
        .collect::<Result<Vec<_>>>()?;
    Tensor4::stack(&items)
}

/// `lr_start · (lr_end / lr_start)^(e / (epochs − 1))`, with both endpoints exact.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if cfg.epochs < 2 {
        if cfg.lr_start != cfg.lr_end {
            return Err(Error::Config(format!(
                "a decaying schedule needs at least 2 epochs, got {}",
                cfg.epochs
            )));
        }
        return Ok(cfg.lr_start);
    }
    if epoch >= cfg.epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} of {}",
            cfg.epochs
        )));
    }
    if epoch + 1 == cfg.epochs {
        return Ok(cfg.lr_end);
    }
    let t = epoch as f64 / (cfg.epochs - 1) as f64;
    Ok(cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(t))
}

/// One line of the training log: `epoch step lr loss val_psnr`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLine {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub lr: f64,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub val_psnr: f64,
}

pub const LOG_HEADER: &str = "# epoch step lr loss val_psnr";

impl fmt::Display for LogLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {:.6e} {:.6} {:.4}",
            self.epoch, self.step, self.lr, self.loss, self.val_psnr
        )
    }
}

/// Pixels trimmed from each side before scoring: `2^levels` for every
/// variant, so ablation rows are scored on the same pixels.
pub fn border_for(cfg: &MwcnnConfig) -> usize {
    1 << cfg.levels
}

fn crop_border(t: &Tensor4<f32>, border: usize) -> Result<Tensor4<f32>> {
    if t.h() <= 2 * border || t.w() <= 2 * border {
        return Ok(t.clone());
    }
    t.crop(border, border, t.h() - 2 * border, t.w() - 2 * border)
}

/// Mean PSNR of noisy inputs and of model outputs on held-out images.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValStats {
    pub noisy_psnr: f64,
    pub output_psnr: f64,
}

/// Scores `model` on `clean` images with noise drawn from a stream fixed by
/// `seed`, so every call sees the same noisy inputs.
pub fn validate(
    model: &ModelGraph<f32>,
    clean: &[Tensor4<f32>],
    sigma: f64,
    seed: u64,
) -> Result<ValStats> {
    if clean.is_empty() {
        return Ok(ValStats {
            noisy_psnr: f64::NAN,
            output_psnr: f64::NAN,
        });
    }
    let border = border_for(model.config());
    let base = Rng::new(seed).fork(VAL_SALT);
    let (mut noisy_sum, mut out_sum) = (0.0, 0.0);
    for (k, x) in clean.iter().enumerate() {
        let y = add_gaussian_noise(x, sigma, &mut base.fork(k as u64))?;
        let out = model.infer_padded(&y)?;
        let cx = crop_border(x, border)?;
        noisy_sum += psnr(&crop_border(&y, border)?, &cx)?;
        out_sum += psnr(&crop_border(&out, border)?, &cx)?;
    }
    let n = clean.len() as f64;
    Ok(ValStats {
        noisy_psnr: noisy_sum / n,
        output_psnr: out_sum / n,
    })
}

/// Training state: model, optimizer, counters and the sampling stream.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: ModelGraph<f32>,
    pub adam: AdamState<f32>,
    pub cfg: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    rng: Rng,
}

impl Trainer {
    /// Fresh model initialized from `cfg.seed`.
    pub fn new(model_cfg: &MwcnnConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate(model_cfg)?;
        let root = Rng::new(cfg.seed);
        let model = build(model_cfg, &mut root.fork(INIT_SALT))?;
        Ok(Self::with_model(model, cfg.clone(), root.fork(SAMPLE_SALT)))
    }

    fn with_model(model: ModelGraph<f32>, cfg: TrainConfig, rng: Rng) -> Self {
        let adam = AdamState::new(&model.param_sizes());
        Self {
            model,
            adam,
            cfg,
            epoch: 0,
            step: 0,
            rng,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.train.validate(ck.model.config())?;
        Ok(Self {
            rng: Rng::from_state(ck.rng),
            model: ck.model,
            adam: ck.adam,
            cfg: ck.train,
            epoch: ck.epoch as usize,
            step: ck.step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            adam: self.adam.clone(),
            train: self.cfg.clone(),
            epoch: self.epoch as u64,
            step: self.step,
            rng: self.rng.state(),
        }
    }

    /// sample → augment → noise → forward → loss → backward → ADAM.
    /// Returns the batch loss.
    pub fn train_step(&mut self, corpus: &[Tensor4<f32>], lr: f64) -> Result<f64> {
        let mut clean = sample_patches(corpus, self.cfg.patch, self.cfg.batch, &mut self.rng)?;
        if self.cfg.augment {
            clean = augment(&clean, &mut self.rng)?;
        }
        let noisy = add_gaussian_noise(&clean, self.cfg.sigma, &mut self.rng)?;
        let mut tape = Tape::new();
        let step = self.step;
        let diverged = |grad_norm: f64, msg: String| Error::Diverged {
            step,
            lr,
            grad_norm,
            msg,
        };
        let pred = self
            .model
            .forward(&noisy, Mode::Train, Some(&mut tape))
            .map_err(|e| diverged(f64::NAN, e.to_string()))?;
        let (l, grad) = loss(&pred, &clean)?;
        let grads = self.model.backward(&mut tape, &grad)?;
        let norm = grads.norm();
        if !l.is_finite() || !norm.is_finite() {
            return Err(diverged(norm, format!("loss {l}")));
        }
        self.adam
            .step(&mut self.model.params_mut(), &grads.params, lr)?;
        self.step += 1;
        Ok(l)
    }

    /// Runs the next epoch and scores it on `val`.
    pub fn run_epoch(&mut self, corpus: &[Tensor4<f32>], val: &[Tensor4<f32>]) -> Result<LogLine> {
        let lr = lr_schedule(self.epoch, &self.cfg)?;
        let mut total = 0.0;
        for _ in 0..self.cfg.steps_per_epoch {
            total += self.train_step(corpus, lr)?;
        }
        let stats = validate(&self.model, val, self.cfg.sigma, self.cfg.seed)?;
        let line = LogLine {
            epoch: self.epoch,
            step: self.step,
            lr,
            loss: total / self.cfg.steps_per_epoch.max(1) as f64,
            val_psnr: stats.output_psnr,
        };
        self.epoch += 1;
        Ok(line)
    }

    /// Runs the remaining epochs, reporting each log line as it completes.
    pub fn run(
        &mut self,
        corpus: &[Tensor4<f32>],
        val: &[Tensor4<f32>],
        mut on_epoch: impl FnMut(&LogLine),
    ) -> Result<Vec<LogLine>> {
        let mut log = Vec::new();
        while self.epoch < self.cfg.epochs {
            let line = self.run_epoch(corpus, val)?;
            on_epoch(&line);
            log.push(line);
        }
        Ok(log)
    }
}

/// Trains `model` for `cfg.epochs` epochs from a fresh optimizer.
pub fn train_epochs(
    model: ModelGraph<f32>,
    corpus: &[Tensor4<f32>],
    val: &[Tensor4<f32>],
    cfg: &TrainConfig,
) -> Result<(ModelGraph<f32>, Vec<LogLine>)> {
    cfg.validate(model.config())?;
    let mut t = Trainer::with_model(model, cfg.clone(), Rng::new(cfg.seed).fork(SAMPLE_SALT));
    let log = t.run(corpus, val, |_| {})?;
    Ok((t.model, log))
}

/// One variant's result in an ablation run.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Downsampler,
    pub conv_layers: usize,
    pub params: usize,
    pub noisy_psnr: f64,
    pub output_psnr: f64,
}

impl AblationRow {
    pub fn gain(&self) -> f64 {
        self.output_psnr - self.noisy_psnr
    }
}

pub const ABLATION_HEADER: &str = "variant\tconv_layers\tparams\tnoisy_psnr\tval_psnr\tgain";

impl fmt::Display for AblationRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:+.4}",
            self.variant,
            self.conv_layers,
            self.params,
            self.noisy_psnr,
            self.output_psnr,
            self.gain()
        )
    }
}

/// Trains the DWT network and its sum-pooling and dilated-chain
/// counterparts with identical data, seed and step budget. The chain uses
/// `2 · levels · block_depth` layers of width `widths[0]`.
pub fn ablation(
    model: &MwcnnConfig,
    cfg: &TrainConfig,
    corpus: &[Tensor4<f32>],
    val: &[Tensor4<f32>],
    mut on_epoch: impl FnMut(Downsampler, &LogLine),
) -> Result<Vec<AblationRow>> {
    [
        Downsampler::Dwt,
        Downsampler::SumPool,
        Downsampler::DilatedChain,
    ]
    .into_iter()
    .map(|variant| Ok(train_variant(model, variant, cfg, corpus, val, |l| on_epoch(variant, l))?.2))
    .collect()
}

/// Trains one ablation variant of `model` from scratch.
pub fn train_variant(
    model: &MwcnnConfig,
    variant: Downsampler,
    cfg: &TrainConfig,
    corpus: &[Tensor4<f32>],
    val: &[Tensor4<f32>],
    on_epoch: impl FnMut(&LogLine),
) -> Result<(Trainer, Vec<LogLine>, AblationRow)> {
    let mcfg = MwcnnConfig {
        downsampler: variant,
        chain_depth: 0,
        ..model.clone()
    };
    let mut t = Trainer::new(&mcfg, cfg)?;
    let log = t.run(corpus, val, on_epoch)?;
    let stats = validate(&t.model, val, cfg.sigma, cfg.seed)?;
    let row = AblationRow {
        variant,
        conv_layers: t.model.conv_layers(),
        params: t.model.param_count(),
        noisy_psnr: stats.noisy_psnr,
        output_psnr: stats.output_psnr,
    };
    Ok((t, log, row))
}
