//! The oracle suite behind `mwcnn selfcheck`.
//!
//! Every check runs on small seeded instances and reports one line.

use std::fmt;

use crate::error::Result;
use crate::layers::{
    bn_bwd, bn_fwd, conv2d_bwd, conv2d_fwd, relu_bwd, relu_fwd, sum_pool2, sum_unpool2, upsample2,
    BnParams, ConvParams, LayerId, Mode, Tape,
};
use crate::model::{build, dilated_chain_variant, gradient_check, MwcnnConfig};
use crate::oracle::{
    check_gradient, dilated_equiv_check, direct_conv2d_ref, dwt2_ref, finite_diff_grad, GradReport,
};
use crate::tensor::{randn, Rng, Tensor4};
use crate::wavelet::{
    dwt2, dwt2_adjoint, haar_bank, iwt2, iwt2_adjoint, wpt_decompose, wpt_reconstruct, BankKind,
    FilterBank, SubbandQuad,
};

pub const CASES: usize = 100;
pub const GRAD_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<28} {}", self.name, self.detail)
    }
}

fn line(name: &str, passed: bool, detail: String) -> CheckLine {
    CheckLine {
        name: name.to_owned(),
        passed,
        detail,
    }
}

fn from_result(name: &str, r: Result<CheckLine>) -> CheckLine {
    r.unwrap_or_else(|e| line(name, false, format!("error: {e}")))
}

fn even(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    2 * (lo / 2 + rng.below((hi - lo) / 2 + 1))
}

/// Fast convolution against the literal lattice sum, dilation 1 and 2.
pub fn conv_vs_oracle(seed: u64) -> Result<CheckLine> {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for k in 0..CASES {
        let d = 1 + k % 2;
        let (n, c, o) = (1 + rng.below(2), 1 + rng.below(4), 1 + rng.below(4));
        let (h, w) = (3 + rng.below(12), 3 + rng.below(12));
        let x: Tensor4<f64> = randn(&mut rng, n, c, h, w, 1.0)?;
        let wt: Tensor4<f64> = randn(&mut rng, o, c, 3, 3, 1.0)?;
        let b: Vec<f64> = (0..o).map(|_| rng.standard_normal()).collect();
        let fast = conv2d_fwd(
            &x,
            &ConvParams::new(wt.clone(), b.clone(), d)?,
            LayerId(0),
            None,
        )?;
        worst = worst.max(fast.max_abs_diff(&direct_conv2d_ref(&x, &wt, &b, d, d)?)?);
    }
    Ok(line(
        "conv2d vs direct",
        worst < 1e-6,
        format!("max abs err {worst:.2e} over {CASES} cases"),
    ))
}

/// Haar `dwt2` against the hand-written block formulas.
pub fn dwt_vs_oracle(seed: u64) -> Result<CheckLine> {
    let mut rng = Rng::new(seed);
    let bank = haar_bank();
    let mut worst: f64 = 0.0;
    for _ in 0..CASES {
        let (h, w) = (even(&mut rng, 2, 16), even(&mut rng, 2, 16));
        let c = 1 + rng.below(3);
        let x: Tensor4<f64> = randn(&mut rng, 1, c, h, w, 10.0)?;
        let (a, b) = (dwt2(&x, &bank)?, dwt2_ref(&x)?);
        for k in 0..4 {
            worst = worst.max(a.bands[k].max_abs_diff(&b.bands[k])?);
        }
    }
    Ok(line(
        "haar dwt2 vs formulas",
        worst < 1e-6,
        format!("max abs err {worst:.2e} over {CASES} cases"),
    ))
}

/// Haar LL equals 2×2 sum pooling, bitwise, on integer images.
pub fn sum_pool_identity(seed: u64) -> Result<CheckLine> {
    let mut rng = Rng::new(seed);
    let bank = haar_bank();
    let mut mismatches = 0;
    for _ in 0..CASES {
        let (h, w) = (even(&mut rng, 2, 32), even(&mut rng, 2, 32));
        let x = Tensor4::from_fn([1, 1, h, w], |_, _, _, _| rng.below(256) as f32)?;
        let ll = dwt2(&x, &bank)?.bands[0].clone();
        let pooled = sum_pool2(&x)?;
        let same = ll
            .data()
            .iter()
            .zip(pooled.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        mismatches += usize::from(!same);
    }
    Ok(line(
        "haar LL == sum_pool2",
        mismatches == 0,
        format!("{mismatches} of {CASES} cases differ"),
    ))
}

/// Dilated conv at each 2×2 phase equals the signed subband combination
/// convolved at d=1.
pub fn dilated_equivalence(seed: u64) -> Result<CheckLine> {
    let mut rng = Rng::new(seed);
    let mut worst = [0.0f64; 4];
    let mut failed = 0;
    for _ in 0..CASES {
        let (h, w) = (even(&mut rng, 8, 16), even(&mut rng, 8, 16));
        let x = randn(&mut rng, 1, 1, h, w, 1.0)?;
        let k = randn(&mut rng, 1, 1, 3, 3, 1.0)?;
        let rep = dilated_equiv_check(&x, &k)?;
        for p in 0..4 {
            worst[p] = worst[p].max(rep.max_abs[p]);
        }
        failed += usize::from(!rep.passed());
    }
    Ok(line(
        "dilated = subband conv",
        failed == 0,
        format!(
            "phase max err {:.1e} {:.1e} {:.1e} {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    ))
}

/// `reconstruct(decompose(x)) = x` for both banks, levels 1–3, f32 and f64.
pub fn perfect_reconstruction(seed: u64) -> Result<CheckLine> {
    let mut rng = Rng::new(seed);
    let (mut w32, mut w64): (f64, f64) = (0.0, 0.0);
    for k in 0..CASES {
        let kind = if k % 2 == 0 {
            BankKind::Haar
        } else {
            BankKind::Db2
        };
        let bank = FilterBank::by_kind(kind);
        let levels = 1 + k % 3;
        let m: usize = 1 << levels;
        // DB2 needs every level's input to be at least 4 pixels
        let min = if kind == BankKind::Db2 { 2 * m } else { m };
        let side = |rng: &mut Rng| m * (min.div_ceil(m) + rng.below(64 / m - min.div_ceil(m) + 1));
        let (h, w) = (side(&mut rng), side(&mut rng));
        let x: Tensor4<f64> = randn(&mut rng, 1, 1, h, w, 50.0)?;
        let r64 = wpt_reconstruct(&wpt_decompose(&x, &bank, levels)?, &bank)?;
        w64 = w64.max(r64.max_abs_diff(&x)? / 50.0);
        let x32: Tensor4<f32> = x.map(|v| v / 50.0).cast();
        let r32 = wpt_reconstruct(&wpt_decompose(&x32, &bank, levels)?, &bank)?;
        w32 = w32.max(r32.max_abs_diff(&x32)?);
    }
    Ok(line(
        "perfect reconstruction",
        w32 < 1e-5 && w64 < 1e-10,
        format!("f32 {w32:.1e}, f64 {w64:.1e} (unit-scale inputs)"),
    ))
}

fn grad_line(name: &str, report: &GradReport) -> CheckLine {
    line(
        name,
        report.passed(GRAD_TOL),
        format!(
            "max rel err {:.2e} ({} compared, {} exempt)",
            report.max_rel_err, report.compared, report.exempt
        ),
    )
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Finite-difference checks of every layer's backward pass.
pub fn layer_gradients(seed: u64) -> Result<Vec<CheckLine>> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    let step = 1e-6;

    for d in [1usize, 2] {
        let x = randn(&mut rng, 2, 2, 6, 6, 1.0)?;
        let w = randn(&mut rng, 3, 2, 3, 3, 1.0)?;
        let b: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
        let r = randn(&mut rng, 2, 3, 6, 6, 1.0)?;
        let p = ConvParams::new(w.clone(), b.clone(), d)?;
        let mut tape = Tape::new();
        conv2d_fwd(&x, &p, LayerId(0), Some(&mut tape))?;
        let g = conv2d_bwd(&r, &p, LayerId(0), &mut tape)?;
        let mut analytic = g.grad_x.data().to_vec();
        analytic.extend_from_slice(g.grad_w.data());
        analytic.extend_from_slice(&g.grad_b);
        let mut theta = x.data().to_vec();
        theta.extend_from_slice(w.data());
        theta.extend_from_slice(&b);
        let (nx, nw) = (x.len(), w.len());
        let num = finite_diff_grad(
            |th| {
                let xx = Tensor4::from_vec(x.shape(), th[..nx].to_vec())?;
                let ww = Tensor4::from_vec(w.shape(), th[nx..nx + nw].to_vec())?;
                let pp = ConvParams::new(ww, th[nx + nw..].to_vec(), d)?;
                Ok(dot(&conv2d_fwd(&xx, &pp, LayerId(0), None)?, &r))
            },
            &theta,
            step,
        )?;
        out.push(grad_line(
            &format!("grad conv d={d}"),
            &check_gradient(&analytic, &num),
        ));
    }

    for mode in [Mode::Train, Mode::Eval] {
        let x = randn(&mut rng, 2, 3, 4, 4, 2.0)?;
        let r = randn(&mut rng, 2, 3, 4, 4, 1.0)?;
        let mut p = BnParams::<f64>::new(3);
        p.gamma = (0..3).map(|_| 1.0 + 0.3 * rng.standard_normal()).collect();
        p.beta = (0..3).map(|_| rng.standard_normal()).collect();
        p.running_mean = (0..3).map(|_| rng.standard_normal()).collect();
        p.running_var = (0..3).map(|_| 0.5 + rng.unit()).collect();
        let mut tape = Tape::new();
        bn_fwd(&x, &mut p.clone(), mode, LayerId(1), Some(&mut tape))?;
        let g = bn_bwd(&r, &p, LayerId(1), &mut tape)?;
        let mut analytic = g.grad_x.data().to_vec();
        analytic.extend_from_slice(&g.grad_gamma);
        analytic.extend_from_slice(&g.grad_beta);
        let mut theta = x.data().to_vec();
        theta.extend_from_slice(&p.gamma);
        theta.extend_from_slice(&p.beta);
        let nx = x.len();
        let num = finite_diff_grad(
            |th| {
                let xx = Tensor4::from_vec(x.shape(), th[..nx].to_vec())?;
                let mut pp = p.clone();
                pp.gamma = th[nx..nx + 3].to_vec();
                pp.beta = th[nx + 3..].to_vec();
                Ok(dot(&bn_fwd(&xx, &mut pp, mode, LayerId(1), None)?, &r))
            },
            &theta,
            step,
        )?;
        let name = if mode == Mode::Train {
            "grad bn train"
        } else {
            "grad bn eval"
        };
        out.push(grad_line(name, &check_gradient(&analytic, &num)));
    }

    {
        // keep samples away from the kink so central differences are exact
        let x = randn(&mut rng, 1, 2, 5, 5, 1.0)?
            .map(|v: f64| if v.abs() < 0.05 { v + 0.1 } else { v });
        let r = randn(&mut rng, 1, 2, 5, 5, 1.0)?;
        let mut tape = Tape::new();
        relu_fwd(&x, LayerId(2), Some(&mut tape));
        let g = relu_bwd(&r, LayerId(2), &mut tape)?;
        let num = finite_diff_grad(
            |th| {
                Ok(dot(
                    &relu_fwd(
                        &Tensor4::from_vec(x.shape(), th.to_vec())?,
                        LayerId(2),
                        None,
                    ),
                    &r,
                ))
            },
            x.data(),
            step,
        )?;
        out.push(grad_line("grad relu", &check_gradient(g.data(), &num)));
    }

    for kind in [BankKind::Haar, BankKind::Db2] {
        let bank = FilterBank::by_kind(kind);
        let x = randn(&mut rng, 1, 1, 8, 8, 1.0)?;
        let r = SubbandQuad::new([
            randn(&mut rng, 1, 1, 4, 4, 1.0)?,
            randn(&mut rng, 1, 1, 4, 4, 1.0)?,
            randn(&mut rng, 1, 1, 4, 4, 1.0)?,
            randn(&mut rng, 1, 1, 4, 4, 1.0)?,
        ])?;
        let analytic = dwt2_adjoint(&r, &bank)?;
        let num = finite_diff_grad(
            |th| {
                let q = dwt2(&Tensor4::from_vec(x.shape(), th.to_vec())?, &bank)?;
                Ok(dot(&q.stack(), &r.stack()))
            },
            x.data(),
            step,
        )?;
        out.push(grad_line(
            &format!("grad dwt {kind}"),
            &check_gradient(analytic.data(), &num),
        ));

        let q = SubbandQuad::unstack(&randn(&mut rng, 1, 4, 4, 4, 1.0)?)?;
        let r = randn(&mut rng, 1, 1, 8, 8, 1.0)?;
        let analytic = iwt2_adjoint(&r, &bank)?.stack();
        let num = finite_diff_grad(
            |th| {
                let qq = SubbandQuad::unstack(&Tensor4::from_vec([1, 4, 4, 4], th.to_vec())?)?;
                Ok(dot(&iwt2(&qq, &bank)?, &r))
            },
            q.stack().data(),
            step,
        )?;
        out.push(grad_line(
            &format!("grad iwt {kind}"),
            &check_gradient(analytic.data(), &num),
        ));
    }

    {
        let x = randn(&mut rng, 1, 2, 6, 6, 1.0)?;
        let r = randn(&mut rng, 1, 2, 3, 3, 1.0)?;
        let analytic = upsample2(&r, 1.0)?;
        let num = finite_diff_grad(
            |th| {
                Ok(dot(
                    &sum_pool2(&Tensor4::from_vec(x.shape(), th.to_vec())?)?,
                    &r,
                ))
            },
            x.data(),
            step,
        )?;
        out.push(grad_line(
            "grad sum_pool2",
            &check_gradient(analytic.data(), &num),
        ));

        let r6 = randn(&mut rng, 1, 2, 6, 6, 1.0)?;
        let analytic = sum_pool2(&r6)?.scale(0.25);
        let num = finite_diff_grad(
            |th| {
                Ok(dot(
                    &sum_unpool2(&Tensor4::from_vec(r.shape(), th.to_vec())?)?,
                    &r6,
                ))
            },
            r.data(),
            step,
        )?;
        out.push(grad_line(
            "grad sum_unpool2",
            &check_gradient(analytic.data(), &num),
        ));
    }

    let tiny = MwcnnConfig {
        levels: 1,
        widths: vec![2],
        ..MwcnnConfig::default()
    };
    out.push(grad_line(
        "grad model levels=1 w=2",
        &gradient_check(&tiny, 8, seed)?,
    ));
    Ok(out)
}

/// Identity blocks turn the network into a plain multi-level transform.
pub fn wpt_degeneration(seed: u64) -> Result<CheckLine> {
    let mut worst: f64 = 0.0;
    for levels in 1..=3 {
        let cfg = MwcnnConfig {
            levels,
            widths: vec![4; levels],
            ..MwcnnConfig::default()
        };
        let mut g = build(&cfg, &mut Rng::new(seed))?;
        g.set_identity_blocks(true);
        let y: Tensor4 = randn(&mut Rng::new(seed + levels as u64), 1, 1, 32, 32, 1.0)?;
        worst = worst.max(g.infer(&y)?.max_abs_diff(&y)?);
    }
    Ok(line(
        "identity blocks -> WPT",
        worst < 1e-5,
        format!("max abs err {worst:.1e}, levels 1-3"),
    ))
}

pub fn architecture() -> Result<CheckLine> {
    let g = build(&MwcnnConfig::default(), &mut Rng::new(0))?;
    let y: Tensor4 = randn(&mut Rng::new(1), 1, 1, 32, 48, 1.0)?;
    let shape_ok = g.infer(&y)?.shape() == y.shape();
    let n = g.conv_layers();
    Ok(line(
        "default depth",
        n == 24 && shape_ok,
        format!("{n} conv layers, {} parameters", g.param_count()),
    ))
}

pub fn gridding() -> Result<CheckLine> {
    let chain =
        dilated_chain_variant(3, 8, &mut Rng::new(0))?.receptive_field_mask(33, 33, (16, 16))?;
    let cfg = MwcnnConfig {
        levels: 1,
        widths: vec![8],
        ..MwcnnConfig::default()
    };
    let mw = build(&cfg, &mut Rng::new(0))?.receptive_field_mask(64, 64, (32, 32))?;
    Ok(line(
        "gridding holes",
        chain.holes() > 0 && mw.holes() == 0,
        format!(
            "dilated chain {} holes in a {}-px box, mwcnn level 1 {} holes over {} px",
            chain.holes(),
            chain.count() + chain.holes(),
            mw.holes(),
            mw.count()
        ),
    ))
}

/// Runs every check; a check that errors counts as a failure.
pub fn run_all(seed: u64) -> Vec<CheckLine> {
    let mut lines = vec![
        from_result("conv2d vs direct", conv_vs_oracle(seed)),
        from_result("haar dwt2 vs formulas", dwt_vs_oracle(seed + 1)),
        from_result("haar LL == sum_pool2", sum_pool_identity(seed + 2)),
        from_result("dilated = subband conv", dilated_equivalence(seed + 3)),
        from_result("perfect reconstruction", perfect_reconstruction(seed + 4)),
    ];
    match layer_gradients(seed + 5) {
        Ok(l) => lines.extend(l),
        Err(e) => lines.push(line("gradients", false, format!("error: {e}"))),
    }
    lines.push(from_result(
        "identity blocks -> WPT",
        wpt_degeneration(seed + 6),
    ));
    lines.push(from_result("default depth", architecture()));
    lines.push(from_result("gridding holes", gridding()));
    lines
}
