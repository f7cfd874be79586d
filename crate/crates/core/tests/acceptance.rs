//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mwcnn::layers::sum_pool2;
use mwcnn::model::{build, dilated_chain_variant, Downsampler, MwcnnConfig};
use mwcnn::oracle::dilated_equiv_check;
use mwcnn::selfcheck::{layer_gradients, GRAD_TOL};
use mwcnn::tensor::randn;
use mwcnn::train::checkpoint::encode_checkpoint;
use mwcnn::train::{
    add_gaussian_noise, loss, sample_patches, synthetic_corpus, train_variant, AblationRow,
    TrainConfig, ABLATION_HEADER,
};
use mwcnn::wavelet::{dwt2, haar_bank, wpt_decompose, wpt_reconstruct, BankKind, FilterBank};
use mwcnn::{Result, Rng, Tensor4};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn elapsed(t: Instant) -> String {
    format!("{:.1}s", t.elapsed().as_secs_f64())
}

fn perfect_reconstruction() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = Rng::new(101);
    let (mut w32, mut w64): (f64, f64) = (0.0, 0.0);
    let mut cases = 0;
    for kind in [BankKind::Haar, BankKind::Db2] {
        let bank = FilterBank::by_kind(kind);
        for levels in 1..=3 {
            let m = 1usize << levels;
            let min_blocks = if kind == BankKind::Db2 { 2 } else { 1 };
            for _ in 0..100 {
                let mut side = || m * (min_blocks + rng.below(64 / m - min_blocks + 1));
                let (h, w) = (side(), side());
                let x64: Tensor4<f64> = randn(&mut rng, 1, 1, h, w, 1.0)?;
                let x32: Tensor4<f32> = x64.cast();
                let r64 = wpt_reconstruct(&wpt_decompose(&x64, &bank, levels)?, &bank)?;
                let r32 = wpt_reconstruct(&wpt_decompose(&x32, &bank, levels)?, &bank)?;
                w64 = w64.max(r64.max_abs_diff(&x64)?);
                w32 = w32.max(r32.max_abs_diff(&x32)?);
                cases += 1;
            }
        }
    }
    let fast = start.elapsed() < Duration::from_secs(5);
    outcome(
        w32 < 1e-5 && w64 < 1e-10 && fast,
        format!(
            "{cases} cases, max err f32 {w32:.2e} f64 {w64:.2e}, {}",
            elapsed(start)
        ),
    )
}

fn sum_pool_identity() -> Result<Outcome> {
    let mut rng = Rng::new(202);
    let bank = haar_bank();
    let mut differ = 0;
    for _ in 0..100 {
        let (h, w) = (2 * (1 + rng.below(32)), 2 * (1 + rng.below(32)));
        let x = Tensor4::from_fn([1, 1, h, w], |_, _, _, _| rng.below(256) as f32)?;
        let ll = dwt2(&x, &bank)?.bands[0].clone();
        let pool = sum_pool2(&x)?;
        if ll
            .data()
            .iter()
            .zip(pool.data())
            .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            differ += 1;
        }
    }
    outcome(
        differ == 0,
        format!("{differ} of 100 integer images differ bitwise"),
    )
}

fn dilated_equivalence() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = Rng::new(303);
    let mut worst = [0.0f64; 4];
    let mut failed = 0;
    for _ in 0..100 {
        let (h, w) = (2 * (4 + rng.below(5)), 2 * (4 + rng.below(5)));
        let x = randn(&mut rng, 1, 1, h, w, 1.0)?;
        let k = randn(&mut rng, 1, 1, 3, 3, 1.0)?;
        let rep = dilated_equiv_check(&x, &k)?;
        failed += usize::from(!rep.passed());
        for p in 0..4 {
            worst[p] = worst[p].max(rep.max_abs[p]);
        }
    }
    let fast = start.elapsed() < Duration::from_secs(10);
    outcome(
        failed == 0 && fast,
        format!(
            "{failed} of 100 pairs fail; worst per phase {:.1e} {:.1e} {:.1e} {:.1e}; {}",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            elapsed(start)
        ),
    )
}

fn gradients() -> Result<Outcome> {
    let lines = layer_gradients(404)?;
    let failing: Vec<String> = lines
        .iter()
        .filter(|l| !l.passed)
        .map(|l| l.name.clone())
        .collect();
    let worst = lines
        .iter()
        .filter_map(|l| {
            l.detail
                .split_whitespace()
                .nth(3)
                .and_then(|v| v.parse::<f64>().ok())
        })
        .fold(0.0, f64::max);
    outcome(
        failing.is_empty(),
        format!(
            "{} checks incl. end-to-end levels=1 width 2 8x8, worst rel err {worst:.2e} (tol {GRAD_TOL:e}){}",
            lines.len(),
            if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
        ),
    )
}

fn wpt_degeneration() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for levels in 1..=3 {
        let cfg = MwcnnConfig {
            levels,
            widths: vec![8; levels],
            ..MwcnnConfig::default()
        };
        let mut g = build(&cfg, &mut Rng::new(levels as u64))?;
        g.set_identity_blocks(true);
        let y: Tensor4 = randn(&mut Rng::new(50 + levels as u64), 2, 1, 48, 40, 1.0)?;
        worst = worst.max(g.infer(&y)?.max_abs_diff(&y)?);
    }
    outcome(
        worst < 1e-5,
        format!("max abs err {worst:.2e} over levels 1-3"),
    )
}

fn architecture() -> Result<Outcome> {
    let g = build(&MwcnnConfig::default(), &mut Rng::new(6))?;
    let layers = g.conv_layers();
    let mut rng = Rng::new(7);
    let mut shapes_ok = true;
    for (n, h, w) in [(1, 8, 8), (1, 32, 32), (2, 24, 40), (3, 64, 16)] {
        let y: Tensor4 = randn(&mut rng, n, 1, h, w, 30.0)?;
        shapes_ok &= g.infer(&y)?.shape() == y.shape();
    }
    outcome(
        layers == 24 && shapes_ok,
        format!("{layers} conv layers; shapes preserved: {shapes_ok}"),
    )
}

fn gridding() -> Result<Outcome> {
    let chain =
        dilated_chain_variant(3, 8, &mut Rng::new(0))?.receptive_field_mask(33, 33, (16, 16))?;
    let cfg = MwcnnConfig {
        levels: 1,
        widths: vec![8],
        ..MwcnnConfig::default()
    };
    let mw = build(&cfg, &mut Rng::new(0))?.receptive_field_mask(64, 64, (32, 32))?;
    outcome(
        chain.holes() > 0 && mw.holes() == 0 && mw.count() > 0,
        format!(
            "3-layer d=2 chain: {} holes in bbox {:?}; mwcnn level 1: {} holes, {} px support",
            chain.holes(),
            chain.bbox(),
            mw.holes(),
            mw.count()
        ),
    )
}

fn smoke_model() -> MwcnnConfig {
    MwcnnConfig {
        levels: 2,
        widths: vec![8, 16],
        ..MwcnnConfig::default()
    }
}

fn smoke_train() -> TrainConfig {
    TrainConfig {
        sigma: 25.0,
        patch: 32,
        batch: 24,
        epochs: 10,
        steps_per_epoch: 50,
        lr_start: 0.01,
        lr_end: 0.001,
        augment: true,
        seed: 2024,
        val_images: 4,
    }
}

fn smoke_corpus() -> (Vec<Tensor4>, Vec<Tensor4>) {
    let mut all: Vec<Tensor4> = synthetic_corpus(28, 64, 64, 99)
        .iter()
        .map(|i| i.to_tensor())
        .collect();
    let val = all.split_off(24);
    (all, val)
}

/// Checkpoint bytes and log text of one smoke run.
type RunArtifacts = (Vec<u8>, String);

fn denoising_smoke(first: &mut Option<RunArtifacts>) -> Result<Outcome> {
    let start = Instant::now();
    let (train, val) = smoke_corpus();
    let (mcfg, tcfg) = (smoke_model(), smoke_train());
    let mut rows: Vec<AblationRow> = Vec::new();
    for variant in [
        Downsampler::Dwt,
        Downsampler::SumPool,
        Downsampler::DilatedChain,
    ] {
        let (trainer, log, row) = train_variant(&mcfg, variant, &tcfg, &train, &val, |_| {})?;
        if variant == Downsampler::Dwt {
            let text: String = log.iter().map(|l| format!("{l}\n")).collect();
            *first = Some((encode_checkpoint(&trainer.checkpoint()), text));
        }
        rows.push(row);
    }
    let total = start.elapsed();
    println!("    {ABLATION_HEADER}");
    for r in &rows {
        println!("    {r}");
    }
    let mw = &rows[0];
    let steps = tcfg.epochs * tcfg.steps_per_epoch;
    let others_beat = rows[1..].iter().all(|r| r.gain() > 0.0);
    outcome(
        mw.gain() >= 2.0 && others_beat && total < Duration::from_secs(15 * 60),
        format!(
            "{steps} steps, {} train / {} held-out images: noisy {:.2} dB -> mwcnn {:.2} dB ({:+.2} dB); sum_pool {:+.2}, dilated_chain {:+.2}; {}",
            train.len(),
            val.len(),
            mw.noisy_psnr,
            mw.output_psnr,
            mw.gain(),
            rows[1].gain(),
            rows[2].gain(),
            elapsed(start)
        ),
    )
}

fn initial_loss() -> Result<Outcome> {
    let (mcfg, tcfg) = (smoke_model(), TrainConfig::default());
    let g = build(&mcfg, &mut Rng::new(9))?;
    let corpus: Vec<Tensor4> = synthetic_corpus(8, 96, 96, 11)
        .iter()
        .map(|i| i.to_tensor())
        .collect();
    let mut rng = Rng::new(12);
    let clean = sample_patches(&corpus, tcfg.patch, tcfg.batch, &mut rng)?;
    let noisy = add_gaussian_noise(&clean, 25.0, &mut rng)?;
    let (l, _) = loss(&g.infer(&noisy)?, &clean)?;
    let pixels = (tcfg.patch * tcfg.patch) as f64;
    let mse = 2.0 * l / pixels;
    outcome(
        (mse / 625.0 - 1.0).abs() < 0.03,
        format!(
            "per-pixel MSE {mse:.2} vs 625 ({:+.2}%), summed loss {l:.0} vs {:.0}",
            100.0 * (mse / 625.0 - 1.0),
            625.0 * pixels / 2.0
        ),
    )
}

fn determinism(first: &Option<RunArtifacts>) -> Result<Outcome> {
    let Some((ck1, log1)) = first else {
        return outcome(false, "criterion 8 produced no run to compare".into());
    };
    let (train, val) = smoke_corpus();
    let (trainer, log, _) = train_variant(
        &smoke_model(),
        Downsampler::Dwt,
        &smoke_train(),
        &train,
        &val,
        |_| {},
    )?;
    let ck2 = encode_checkpoint(&trainer.checkpoint());
    let log2: String = log.iter().map(|l| format!("{l}\n")).collect();
    outcome(
        *ck1 == ck2 && *log1 == log2,
        format!(
            "checkpoints {} ({} bytes), logs {}",
            if *ck1 == ck2 { "identical" } else { "differ" },
            ck2.len(),
            if *log1 == log2 { "identical" } else { "differ" }
        ),
    )
}

fn main() -> ExitCode {
    mwcnn::par::init_from_env();
    let mut first_run = None;
    let mut failures = 0;
    let mut report = |n: usize, name: &str, r: Result<Outcome>| {
        let o = r.unwrap_or_else(|e| Outcome {
            passed: false,
            detail: format!("error: {e}"),
        });
        failures += usize::from(!o.passed);
        println!(
            "criterion {n:>2} {} {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    };
    report(1, "perfect reconstruction", perfect_reconstruction());
    report(2, "haar LL is sum pooling", sum_pool_identity());
    report(3, "dilated filtering equivalence", dilated_equivalence());
    report(4, "gradient correctness", gradients());
    report(5, "WPT degeneration", wpt_degeneration());
    report(6, "architecture arithmetic", architecture());
    report(7, "gridding effect", gridding());
    report(
        8,
        "denoising smoke experiment",
        denoising_smoke(&mut first_run),
    );
    report(9, "initial loss scale", initial_loss());
    report(10, "determinism", determinism(&first_run));
    if failures == 0 {
        println!("acceptance: all 10 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria fail");
        ExitCode::FAILURE
    }
}
