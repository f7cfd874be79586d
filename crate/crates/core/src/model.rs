//! The MWCNN graph and its ablation variants.
//!
//! Contracting path, level `l = 0..L`: downsample (DWT, channels ×4), then a
//! CNN block reducing to `widths[l]`. Expanding path, `l = L-1..=0`: a CNN
//! block expanding to `4 · widths[l-1]` (or `4 · in_channels` at `l = 0`),
//! then IWT, then an elementwise sum with the contracting block output of
//! level `l-1`. Each block layer is conv → BN → ReLU except the very last
//! conv of the network, which predicts the residual and is zero-initialized.
//! With `global_residual` on, the output is `input + residual`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{
    bn_apply, bn_bwd, conv2d_bwd, conv2d_fwd, he_init, relu_bwd, relu_fwd, sum_pool2, upsample2,
    BatchStats, BnParams, ConvParams, LayerId, Mode, Saved, Tape,
};
use crate::oracle::{check_gradient, finite_diff_grad, GradReport};
use crate::tensor::{randn, Real, Rng, Tensor4};
use crate::wavelet::{dwt2, dwt2_adjoint, iwt2, iwt2_adjoint, BankKind, FilterBank, SubbandQuad};

pub const MAX_LEVELS: usize = 4;
const KERNEL: usize = 3;
const MARKER_BASE: usize = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Downsampler {
    Dwt,
    SumPool,
    DilatedChain,
}

impl fmt::Display for Downsampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Downsampler::Dwt => "dwt",
            Downsampler::SumPool => "sum_pool",
            Downsampler::DilatedChain => "dilated_chain",
        })
    }
}

impl FromStr for Downsampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dwt" => Ok(Downsampler::Dwt),
            "sum_pool" => Ok(Downsampler::SumPool),
            "dilated_chain" => Ok(Downsampler::DilatedChain),
            other => Err(Error::Config(format!("unknown downsampler {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MwcnnConfig {
    pub in_channels: usize,
    pub levels: usize,
    /// Conv layers per CNN block.
    pub block_depth: usize,
    /// Output channels of the contracting block at each level.
    pub widths: Vec<usize>,
    /// Contracting-path bank.
    pub bank: BankKind,
    /// Expanding-path bank.
    pub bank_expand: BankKind,
    /// Must be set to pair different banks; such a network is not invertible.
    pub allow_mixed_banks: bool,
    pub downsampler: Downsampler,
    pub global_residual: bool,
    /// Dilated-chain depth; 0 means `2 · levels · block_depth`.
    pub chain_depth: usize,
    pub chain_dilation: usize,
}

impl Default for MwcnnConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            levels: 3,
            block_depth: 4,
            widths: vec![16, 32, 64],
            bank: BankKind::Haar,
            bank_expand: BankKind::Haar,
            allow_mixed_banks: false,
            downsampler: Downsampler::Dwt,
            global_residual: true,
            chain_depth: 0,
            chain_dilation: 2,
        }
    }
}

impl MwcnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be >= 1".into()));
        }
        if self.levels == 0 || self.levels > MAX_LEVELS {
            return Err(Error::Config(format!(
                "levels must be in 1..={MAX_LEVELS}, got {}",
                self.levels
            )));
        }
        if self.block_depth == 0 {
            return Err(Error::Config("block_depth must be >= 1".into()));
        }
        if self.widths.len() != self.levels {
            return Err(Error::Config(format!(
                "{} widths given for {} levels",
                self.widths.len(),
                self.levels
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("widths must be nonzero".into()));
        }
        if self.bank != self.bank_expand && !self.allow_mixed_banks {
            return Err(Error::Config(format!(
                "contracting bank {} differs from expanding bank {}; set allow_mixed_banks to build a non-invertible network",
                self.bank, self.bank_expand
            )));
        }
        if self.chain_dilation == 0 {
            return Err(Error::Config("chain_dilation must be >= 1".into()));
        }
        Ok(())
    }

    pub fn effective_chain_depth(&self) -> usize {
        if self.chain_depth > 0 {
            self.chain_depth
        } else {
            2 * self.levels * self.block_depth
        }
    }

    /// Input height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        match self.downsampler {
            Downsampler::DilatedChain => 1,
            _ => 1 << self.levels,
        }
    }

    fn channel_factor(&self) -> usize {
        match self.downsampler {
            Downsampler::Dwt => 4,
            _ => 1,
        }
    }
}

/// One conv layer, optionally followed by BN and ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct Unit<T = f32> {
    pub conv: ConvParams<T>,
    pub bn: Option<BnParams<T>>,
    index: usize,
    slot: usize,
}

impl<T: Real> Unit<T> {
    fn conv_id(&self) -> LayerId {
        LayerId(3 * self.index)
    }

    fn bn_id(&self) -> LayerId {
        LayerId(3 * self.index + 1)
    }

    fn relu_id(&self) -> LayerId {
        LayerId(3 * self.index + 2)
    }

    fn buffers(&self) -> usize {
        if self.bn.is_some() {
            4
        } else {
            2
        }
    }

    fn cast<U: Real>(&self) -> Unit<U> {
        let cv = |v: &[T]| {
            v.iter()
                .map(|&x| U::of(x.to_f64_lossy()))
                .collect::<Vec<U>>()
        };
        Unit {
            conv: ConvParams {
                weight: self.conv.weight.cast(),
                bias: cv(&self.conv.bias),
                dilation: self.conv.dilation,
                pad: self.conv.pad,
            },
            bn: self.bn.as_ref().map(|b| BnParams {
                gamma: cv(&b.gamma),
                beta: cv(&b.beta),
                running_mean: cv(&b.running_mean),
                running_var: cv(&b.running_var),
                momentum: b.momentum,
                eps: b.eps,
            }),
            index: self.index,
            slot: self.slot,
        }
    }
}

/// A stack of units applied in sequence.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Block<T = f32> {
    pub units: Vec<Unit<T>>,
}

type StatUpdates<T> = Vec<(usize, BatchStats<T>, usize)>;

impl<T: Real> Block<T> {
    pub fn param_count(&self) -> usize {
        self.units
            .iter()
            .map(|u| u.conv.param_count() + u.bn.as_ref().map_or(0, |b| b.param_count()))
            .sum()
    }

    fn run(
        &self,
        mut x: Tensor4<T>,
        mode: Mode,
        mut tape: Option<&mut Tape<T>>,
        updates: &mut StatUpdates<T>,
    ) -> Result<Tensor4<T>> {
        for u in &self.units {
            x = conv2d_fwd(&x, &u.conv, u.conv_id(), tape.as_deref_mut())?;
            if let Some(bn) = &u.bn {
                let (y, stats) = bn_apply(&x, bn, mode, u.bn_id(), tape.as_deref_mut())?;
                if let Some(stats) = stats {
                    updates.push((u.index, stats, x.n() * x.h() * x.w()));
                }
                x = relu_fwd(&y, u.relu_id(), tape.as_deref_mut());
            }
        }
        Ok(x)
    }

    fn backward(
        &self,
        mut g: Tensor4<T>,
        tape: &mut Tape<T>,
        grads: &mut [Vec<T>],
    ) -> Result<Tensor4<T>> {
        for u in self.units.iter().rev() {
            if let Some(bn) = &u.bn {
                g = relu_bwd(&g, u.relu_id(), tape)?;
                let bg = bn_bwd(&g, bn, u.bn_id(), tape)?;
                grads[u.slot + 2] = bg.grad_gamma;
                grads[u.slot + 3] = bg.grad_beta;
                g = bg.grad_x;
            }
            let cg = conv2d_bwd(&g, &u.conv, u.conv_id(), tape)?;
            grads[u.slot] = cg.grad_w.into_vec();
            grads[u.slot + 1] = cg.grad_b;
            g = cg.grad_x;
        }
        Ok(g)
    }

    fn cast<U: Real>(&self) -> Block<U> {
        Block {
            units: self.units.iter().map(Unit::cast).collect(),
        }
    }
}

/// Gradients of every parameter buffer (in [`ModelGraph::params_mut`] order)
/// and of the network input.
#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    pub params: Vec<Vec<T>>,
    pub input: Tensor4<T>,
}

impl<T: Real> Gradients<T> {
    pub fn norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| {
                let v = v.to_f64_lossy();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// How [`build_with`] fills conv weights.
enum WeightInit<'a> {
    He(&'a mut Rng),
    /// Positive weights `1 / fan_in`, used by the receptive-field surrogate.
    Uniform,
}

/// Instantiated network: configuration plus parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph<T = f32> {
    cfg: MwcnnConfig,
    analysis: FilterBank,
    synthesis: FilterBank,
    pub encoders: Vec<Block<T>>,
    pub decoders: Vec<Block<T>>,
    pub chain: Block<T>,
    identity_blocks: bool,
}

struct UnitFactory<'a, T> {
    init: WeightInit<'a>,
    next_index: usize,
    next_slot: usize,
    _t: std::marker::PhantomData<T>,
}

impl<T: Real> UnitFactory<'_, T> {
    fn make(
        &mut self,
        in_c: usize,
        out_c: usize,
        dilation: usize,
        with_bn: bool,
        zero: bool,
    ) -> Result<Unit<T>> {
        let shape = [out_c, in_c, KERNEL, KERNEL];
        let weight = if zero {
            Tensor4::zeros(out_c, in_c, KERNEL, KERNEL)?
        } else {
            match &mut self.init {
                WeightInit::He(rng) => he_init(rng, shape)?,
                WeightInit::Uniform => {
                    Tensor4::full(shape, T::of(1.0 / (in_c * KERNEL * KERNEL) as f64))?
                }
            }
        };
        let conv = ConvParams::new(weight, vec![T::zero(); out_c], dilation)?;
        let bn = with_bn.then(|| BnParams::new(out_c));
        let unit = Unit {
            conv,
            bn,
            index: self.next_index,
            slot: self.next_slot,
        };
        self.next_index += 1;
        self.next_slot += unit.buffers();
        Ok(unit)
    }
}

fn build_with<T: Real>(cfg: &MwcnnConfig, init: WeightInit<'_>) -> Result<ModelGraph<T>> {
    cfg.validate()?;
    let surrogate = matches!(init, WeightInit::Uniform);
    let mut f = UnitFactory::<T> {
        init,
        next_index: 0,
        next_slot: 0,
        _t: std::marker::PhantomData,
    };
    let (mut encoders, mut decoders, mut chain) = (Vec::new(), Vec::new(), Block::default());
    let c0 = cfg.in_channels;
    match cfg.downsampler {
        Downsampler::DilatedChain => {
            let (depth, width, d) = (
                cfg.effective_chain_depth(),
                cfg.widths[0],
                cfg.chain_dilation,
            );
            for k in 0..depth {
                let in_c = if k == 0 { c0 } else { width };
                let last = k + 1 == depth;
                let out_c = if last { c0 } else { width };
                chain
                    .units
                    .push(f.make(in_c, out_c, d, !last, last && !surrogate)?);
            }
        }
        _ => {
            let factor = cfg.channel_factor();
            let prev = |l: usize| if l == 0 { c0 } else { cfg.widths[l - 1] };
            for l in 0..cfg.levels {
                let mut block = Block::default();
                for k in 0..cfg.block_depth {
                    let in_c = if k == 0 {
                        factor * prev(l)
                    } else {
                        cfg.widths[l]
                    };
                    block
                        .units
                        .push(f.make(in_c, cfg.widths[l], 1, true, false)?);
                }
                encoders.push(block);
            }
            // Built deepest-first so unit indices follow execution order.
            let mut rev = Vec::new();
            for l in (0..cfg.levels).rev() {
                let mut block = Block::default();
                for k in 0..cfg.block_depth {
                    let last = k + 1 == cfg.block_depth;
                    let out_c = if last {
                        factor * prev(l)
                    } else {
                        cfg.widths[l]
                    };
                    let is_final = last && l == 0;
                    block.units.push(f.make(
                        cfg.widths[l],
                        out_c,
                        1,
                        !is_final,
                        is_final && !surrogate,
                    )?);
                }
                rev.push(block);
            }
            rev.reverse();
            decoders = rev;
        }
    }
    Ok(ModelGraph {
        cfg: cfg.clone(),
        analysis: FilterBank::by_kind(cfg.bank),
        synthesis: FilterBank::by_kind(cfg.bank_expand),
        encoders,
        decoders,
        chain,
        identity_blocks: false,
    })
}

/// He-initialized network with a zero final conv, so that with the global
/// residual the untrained model is exactly the identity.
pub fn build(cfg: &MwcnnConfig, rng: &mut Rng) -> Result<ModelGraph<f32>> {
    build_with(cfg, WeightInit::He(rng))
}

/// Plain chain of `depth` dilation-2 convs with BN+ReLU between and a
/// residual output.
pub fn dilated_chain_variant(depth: usize, width: usize, rng: &mut Rng) -> Result<ModelGraph<f32>> {
    if depth == 0 {
        return Err(Error::Config("chain depth must be >= 1".into()));
    }
    let cfg = MwcnnConfig {
        levels: 1,
        widths: vec![width],
        downsampler: Downsampler::DilatedChain,
        chain_depth: depth,
        chain_dilation: 2,
        ..MwcnnConfig::default()
    };
    build(&cfg, rng)
}

/// Binary receptive-field mask over the input plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RfMask {
    pub h: usize,
    pub w: usize,
    pub mask: Vec<bool>,
}

impl RfMask {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.w + j]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Inclusive bounding box `(top, left, bottom, right)` of the support.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for i in 0..self.h {
            for j in 0..self.w {
                if self.get(i, j) {
                    bb = Some(match bb {
                        None => (i, j, i, j),
                        Some((t, l, b, r)) => (t.min(i), l.min(j), b.max(i), r.max(j)),
                    });
                }
            }
        }
        bb
    }

    /// Zeros strictly inside the support's bounding box.
    pub fn holes(&self) -> usize {
        match self.bbox() {
            None => 0,
            Some((t, l, b, r)) => (t..=b)
                .flat_map(|i| (l..=r).map(move |j| (i, j)))
                .filter(|&(i, j)| !self.get(i, j))
                .count(),
        }
    }
}

impl<T: Real> ModelGraph<T> {
    pub fn config(&self) -> &MwcnnConfig {
        &self.cfg
    }

    /// Test hook: every CNN block becomes the identity and the skip sums and
    /// global residual are dropped, leaving the bare multi-level transform.
    pub fn set_identity_blocks(&mut self, on: bool) {
        self.identity_blocks = on;
    }

    fn units(&self) -> impl Iterator<Item = &Unit<T>> {
        self.encoders
            .iter()
            .chain(&self.decoders)
            .chain(std::iter::once(&self.chain))
            .flat_map(|b| b.units.iter())
    }

    fn units_mut(&mut self) -> impl Iterator<Item = &mut Unit<T>> {
        self.encoders
            .iter_mut()
            .chain(self.decoders.iter_mut())
            .chain(std::iter::once(&mut self.chain))
            .flat_map(|b| b.units.iter_mut())
    }

    fn units_in_slot_order(&self) -> Vec<&Unit<T>> {
        let mut v: Vec<&Unit<T>> = self.units().collect();
        v.sort_by_key(|u| u.slot);
        v
    }

    pub fn conv_layers(&self) -> usize {
        self.units().count()
    }

    /// Number of trainable scalars (conv weights and biases, BN scale and shift).
    pub fn param_count(&self) -> usize {
        self.encoders
            .iter()
            .chain(&self.decoders)
            .chain(std::iter::once(&self.chain))
            .map(Block::param_count)
            .sum()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        for u in self.units_in_slot_order() {
            sizes.push(u.conv.weight.len());
            sizes.push(u.conv.bias.len());
            if let Some(bn) = &u.bn {
                sizes.push(bn.gamma.len());
                sizes.push(bn.beta.len());
            }
        }
        sizes
    }

    /// Trainable buffers in slot order: per unit `weight, bias[, gamma, beta]`.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut units: Vec<&mut Unit<T>> = self.units_mut().collect();
        units.sort_by_key(|u| u.slot);
        let mut out = Vec::new();
        for u in units {
            out.push(u.conv.weight.data_mut());
            out.push(&mut u.conv.bias[..]);
            if let Some(bn) = &mut u.bn {
                out.push(&mut bn.gamma[..]);
                out.push(&mut bn.beta[..]);
            }
        }
        out
    }

    fn unit_name(&self, u: &Unit<T>) -> String {
        let find = |blocks: &[Block<T>], tag: &str| {
            blocks.iter().enumerate().find_map(|(l, b)| {
                b.units
                    .iter()
                    .position(|x| x.index == u.index)
                    .map(|k| format!("{tag}{l}.{k}"))
            })
        };
        find(&self.encoders, "enc")
            .or_else(|| find(&self.decoders, "dec"))
            .or_else(|| find(std::slice::from_ref(&self.chain), "chain"))
            .expect("unit belongs to the graph")
    }

    /// Every stored buffer, trainable or not, with a stable name and shape.
    pub fn state_buffers(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::new();
        for u in self.units_in_slot_order() {
            let name = self.unit_name(u);
            out.push((
                format!("{name}.conv.weight"),
                u.conv.weight.shape().to_vec(),
                u.conv.weight.data(),
            ));
            out.push((
                format!("{name}.conv.bias"),
                vec![u.conv.bias.len()],
                &u.conv.bias[..],
            ));
            if let Some(bn) = &u.bn {
                let c = vec![bn.gamma.len()];
                out.push((format!("{name}.bn.gamma"), c.clone(), &bn.gamma[..]));
                out.push((format!("{name}.bn.beta"), c.clone(), &bn.beta[..]));
                out.push((
                    format!("{name}.bn.running_mean"),
                    c.clone(),
                    &bn.running_mean[..],
                ));
                out.push((format!("{name}.bn.running_var"), c, &bn.running_var[..]));
            }
        }
        out
    }

    /// Mutable view matching [`ModelGraph::state_buffers`] order.
    pub fn state_buffers_mut(&mut self) -> Vec<&mut [T]> {
        let mut units: Vec<&mut Unit<T>> = self.units_mut().collect();
        units.sort_by_key(|u| u.slot);
        let mut out = Vec::new();
        for u in units {
            out.push(u.conv.weight.data_mut());
            out.push(&mut u.conv.bias[..]);
            if let Some(bn) = &mut u.bn {
                out.push(&mut bn.gamma[..]);
                out.push(&mut bn.beta[..]);
                out.push(&mut bn.running_mean[..]);
                out.push(&mut bn.running_var[..]);
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> ModelGraph<U> {
        ModelGraph {
            cfg: self.cfg.clone(),
            analysis: self.analysis.clone(),
            synthesis: self.synthesis.clone(),
            encoders: self.encoders.iter().map(Block::cast).collect(),
            decoders: self.decoders.iter().map(Block::cast).collect(),
            chain: self.chain.cast(),
            identity_blocks: self.identity_blocks,
        }
    }

    fn check_input(&self, y: &Tensor4<T>) -> Result<()> {
        if y.c() != self.cfg.in_channels {
            return Err(Error::InvalidArgument(format!(
                "model expects {} channels, got {}",
                self.cfg.in_channels,
                y.c()
            )));
        }
        let m = self.cfg.spatial_multiple();
        if !y.h().is_multiple_of(m) || !y.w().is_multiple_of(m) {
            return Err(Error::InvalidDims(format!(
                "{}x{} input is not divisible by {m}",
                y.h(),
                y.w()
            )));
        }
        Ok(())
    }

    fn down(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self.cfg.downsampler {
            Downsampler::Dwt => Ok(dwt2(x, &self.analysis)?.stack()),
            _ => sum_pool2(x),
        }
    }

    fn down_backward(&self, g: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self.cfg.downsampler {
            Downsampler::Dwt => dwt2_adjoint(&SubbandQuad::unstack(g)?, &self.analysis),
            _ => upsample2(g, T::one()),
        }
    }

    fn up(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self.cfg.downsampler {
            Downsampler::Dwt => iwt2(&SubbandQuad::unstack(x)?, &self.synthesis),
            _ => upsample2(x, T::of(0.25)),
        }
    }

    fn up_backward(&self, g: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self.cfg.downsampler {
            Downsampler::Dwt => Ok(iwt2_adjoint(g, &self.synthesis)?.stack()),
            _ => Ok(sum_pool2(g)?.scale(T::of(0.25))),
        }
    }

    fn run_block(
        &self,
        block: &Block<T>,
        x: Tensor4<T>,
        mode: Mode,
        tape: Option<&mut Tape<T>>,
        updates: &mut StatUpdates<T>,
    ) -> Result<Tensor4<T>> {
        if self.identity_blocks {
            Ok(x)
        } else {
            block.run(x, mode, tape, updates)
        }
    }

    fn run(
        &self,
        y: &Tensor4<T>,
        mode: Mode,
        mut tape: Option<&mut Tape<T>>,
        updates: &mut StatUpdates<T>,
    ) -> Result<Tensor4<T>> {
        self.check_input(y)?;
        let residual_on = self.cfg.global_residual && !self.identity_blocks;
        let r = match self.cfg.downsampler {
            Downsampler::DilatedChain => {
                self.run_block(&self.chain, y.clone(), mode, tape, updates)?
            }
            _ => {
                let levels = self.cfg.levels;
                let mut h = y.clone();
                let mut skips = Vec::with_capacity(levels);
                for l in 0..levels {
                    h = self.down(&h)?;
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(LayerId(MARKER_BASE + 2 * l), Saved::Marker);
                    }
                    h = self.run_block(&self.encoders[l], h, mode, tape.as_deref_mut(), updates)?;
                    if l + 1 < levels {
                        skips.push(h.clone());
                    }
                }
                for l in (0..levels).rev() {
                    h = self.run_block(&self.decoders[l], h, mode, tape.as_deref_mut(), updates)?;
                    h = self.up(&h)?;
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(LayerId(MARKER_BASE + 2 * l + 1), Saved::Marker);
                    }
                    if l > 0 && !self.identity_blocks {
                        h.add_assign(&skips[l - 1])?;
                    }
                }
                h
            }
        };
        let out = if residual_on { y.add(&r)? } else { r };
        out.ensure_finite("model output")
    }

    /// `F(y; Θ)`. Train mode uses batch statistics and folds them into the
    /// BN running estimates.
    pub fn forward(
        &mut self,
        y: &Tensor4<T>,
        mode: Mode,
        tape: Option<&mut Tape<T>>,
    ) -> Result<Tensor4<T>> {
        let mut updates = Vec::new();
        let out = self.run(y, mode, tape, &mut updates)?;
        if !updates.is_empty() {
            for u in self.units_mut() {
                if let Some((_, stats, count)) = updates.iter().find(|(idx, _, _)| *idx == u.index)
                {
                    let bn = u.bn.as_mut().expect("stats come from BN units");
                    bn.update_running(stats, *count);
                }
            }
        }
        Ok(out)
    }

    /// Eval-mode forward that leaves the graph untouched.
    pub fn infer(&self, y: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.run(y, Mode::Eval, None, &mut Vec::new())
    }

    /// [`ModelGraph::infer`] on inputs of any size: the bottom and right edges
    /// are padded by mirror reflection up to the next valid size, and the
    /// output is cropped back.
    pub fn infer_padded(&self, y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let m = self.cfg.spatial_multiple();
        let [n, c, h, w] = y.shape();
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        if (ph, pw) == (h, w) {
            return self.infer(y);
        }
        let reflect = |k: usize, len: usize| {
            let period = 2 * len.max(2) - 2;
            let r = if len == 1 { 0 } else { k % period };
            if r < len {
                r
            } else {
                period - r
            }
        };
        let padded = Tensor4::from_fn([n, c, ph, pw], |b, ch, i, j| {
            y.at(b, ch, reflect(i, h), reflect(j, w))
        })?;
        self.infer(&padded)?.crop(0, 0, h, w)
    }

    /// Reverse pass for the most recent forward recorded on `tape`.
    pub fn backward(&self, tape: &mut Tape<T>, grad_out: &Tensor4<T>) -> Result<Gradients<T>> {
        if tape.is_empty() && !self.identity_blocks {
            return Err(Error::Tape(
                "backward called without a recorded forward".into(),
            ));
        }
        let mut grads: Vec<Vec<T>> = self
            .param_sizes()
            .into_iter()
            .map(|n| vec![T::zero(); n])
            .collect();
        let residual_on = self.cfg.global_residual && !self.identity_blocks;
        let block_bwd =
            |b: &Block<T>, g: Tensor4<T>, tape: &mut Tape<T>, grads: &mut Vec<Vec<T>>| {
                if self.identity_blocks {
                    Ok(g)
                } else {
                    b.backward(g, tape, grads)
                }
            };
        let mut g = match self.cfg.downsampler {
            Downsampler::DilatedChain => {
                block_bwd(&self.chain, grad_out.clone(), tape, &mut grads)?
            }
            _ => {
                let levels = self.cfg.levels;
                let mut g = grad_out.clone();
                let mut skip_grads: Vec<Option<Tensor4<T>>> = vec![None; levels];
                for l in 0..levels {
                    if l > 0 && !self.identity_blocks {
                        skip_grads[l - 1] = Some(g.clone());
                    }
                    tape.pop(LayerId(MARKER_BASE + 2 * l + 1), "marker")?;
                    g = self.up_backward(&g)?;
                    g = block_bwd(&self.decoders[l], g, tape, &mut grads)?;
                }
                for l in (0..levels).rev() {
                    if let Some(sg) = skip_grads[l].take() {
                        g.add_assign(&sg)?;
                    }
                    g = block_bwd(&self.encoders[l], g, tape, &mut grads)?;
                    tape.pop(LayerId(MARKER_BASE + 2 * l), "marker")?;
                    g = self.down_backward(&g)?;
                }
                g
            }
        };
        if residual_on {
            g.add_assign(grad_out)?;
        }
        Ok(Gradients {
            params: grads,
            input: g,
        })
    }

    /// Input pixels that can influence output pixel `pixel` of an `h × w`
    /// input, found by backpropagating an indicator through a surrogate with
    /// positive weights, identity BN and absolute-valued filter banks.
    pub fn receptive_field_mask(
        &self,
        h: usize,
        w: usize,
        pixel: (usize, usize),
    ) -> Result<RfMask> {
        if pixel.0 >= h || pixel.1 >= w {
            return Err(Error::InvalidArgument(format!(
                "pixel {pixel:?} outside {h}x{w}"
            )));
        }
        let mut sur: ModelGraph<f64> = build_with(&self.cfg, WeightInit::Uniform)?;
        sur.analysis = self.analysis.abs();
        sur.synthesis = self.synthesis.abs();
        sur.identity_blocks = self.identity_blocks;
        for u in sur.units_mut() {
            if let Some(bn) = &mut u.bn {
                bn.eps = 0.0;
            }
        }
        let c = self.cfg.in_channels;
        let input = Tensor4::full([1, c, h, w], 1.0)?;
        let mut tape = Tape::new();
        sur.forward(&input, Mode::Eval, Some(&mut tape))?;
        let mut ind = Tensor4::zeros(1, c, h, w)?;
        ind.set(0, 0, pixel.0, pixel.1, 1.0);
        let g = sur.backward(&mut tape, &ind)?;
        let mask = (0..h * w)
            .map(|k| (0..c).any(|ch| g.input.plane(0, ch)[k] > 0.0))
            .collect();
        Ok(RfMask { h, w, mask })
    }
}

/// Finite-difference check of `d/dθ Σ F(x; θ) · r` over every trainable
/// scalar and every input pixel, in f64 with train-mode BN. Zero-initialized
/// weights are re-drawn first so every path carries signal.
pub fn gradient_check(cfg: &MwcnnConfig, side: usize, seed: u64) -> Result<GradReport> {
    let mut rng = Rng::new(seed);
    let mut g: ModelGraph<f64> = build(cfg, &mut rng)?.cast();
    for u in g.units_mut() {
        if u.conv.weight.data().iter().all(|&v| v == 0.0) {
            u.conv.weight = he_init(&mut rng, u.conv.weight.shape())?;
        }
        for b in u.conv.bias.iter_mut() {
            *b = 0.1 * rng.standard_normal();
        }
    }
    let c = cfg.in_channels;
    let x: Tensor4<f64> = randn(&mut rng, 1, c, side, side, 1.0)?;
    let r: Tensor4<f64> = randn(&mut rng, 1, c, side, side, 1.0)?;

    let mut tape = Tape::new();
    g.clone().forward(&x, Mode::Train, Some(&mut tape))?;
    let grads = g.backward(&mut tape, &r)?;
    let mut analytic: Vec<f64> = grads.params.concat();
    analytic.extend_from_slice(grads.input.data());

    let mut theta: Vec<f64> = g
        .params_mut()
        .iter()
        .flat_map(|b| b.iter().copied())
        .collect();
    let n_params = theta.len();
    theta.extend_from_slice(x.data());
    let objective = |th: &[f64]| -> Result<f64> {
        let mut probe = g.clone();
        let mut k = 0;
        for buf in probe.params_mut() {
            let len = buf.len();
            buf.copy_from_slice(&th[k..k + len]);
            k += len;
        }
        let input = Tensor4::from_vec(x.shape(), th[n_params..].to_vec())?;
        let out = probe.forward(&input, Mode::Train, None)?;
        Ok(out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    };
    let numeric = finite_diff_grad(objective, &theta, 1e-6)?;
    Ok(check_gradient(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::{wpt_decompose, wpt_reconstruct};

    fn tiny(levels: usize, widths: &[usize]) -> MwcnnConfig {
        MwcnnConfig {
            levels,
            widths: widths.to_vec(),
            block_depth: 2,
            ..MwcnnConfig::default()
        }
    }

    #[test]
    fn default_depth_is_24() {
        let g = build(&MwcnnConfig::default(), &mut Rng::new(0)).unwrap();
        assert_eq!(g.conv_layers(), 24);
        let bn_free: Vec<_> = g.units().filter(|u| u.bn.is_none()).collect();
        assert_eq!(bn_free.len(), 1);
    }

    #[test]
    fn init_is_identity_and_shape_preserving() {
        let g = build(&MwcnnConfig::default(), &mut Rng::new(3)).unwrap();
        let y: Tensor4 = randn(&mut Rng::new(4), 2, 1, 32, 32, 50.0).unwrap();
        let out = g.infer(&y).unwrap();
        assert_eq!(out, y);
        let mut g2 = g.clone();
        let out2 = g2.forward(&y, Mode::Train, None).unwrap();
        assert_eq!(out2, y);
    }

    #[test]
    fn every_variant_preserves_shape() {
        let mut rng = Rng::new(9);
        for ds in [
            Downsampler::Dwt,
            Downsampler::SumPool,
            Downsampler::DilatedChain,
        ] {
            for levels in 1..=3 {
                let cfg = MwcnnConfig {
                    levels,
                    widths: vec![4; levels],
                    block_depth: 2,
                    downsampler: ds,
                    ..MwcnnConfig::default()
                };
                let mut g = build(&cfg, &mut rng).unwrap();
                for u in g.units_mut() {
                    u.conv.weight = he_init(&mut rng, u.conv.weight.shape()).unwrap();
                }
                let y: Tensor4 = randn(&mut rng, 1, 1, 16, 24, 1.0).unwrap();
                let out = g.infer(&y).unwrap();
                assert_eq!(out.shape(), y.shape(), "{ds} levels={levels}");
                assert!(out.is_finite());
                assert_eq!(out, g.infer(&y).unwrap());
            }
        }
    }

    #[test]
    fn config_errors() {
        let mut cfg = MwcnnConfig::default();
        cfg.levels = 5;
        cfg.widths = vec![8; 5];
        assert!(build(&cfg, &mut Rng::new(0)).is_err());
        let mut cfg = MwcnnConfig::default();
        cfg.widths[1] = 0;
        assert!(build(&cfg, &mut Rng::new(0)).is_err());
        let mut cfg = MwcnnConfig::default();
        cfg.widths.pop();
        assert!(build(&cfg, &mut Rng::new(0)).is_err());
        let mut cfg = MwcnnConfig::default();
        cfg.bank_expand = BankKind::Db2;
        assert!(build(&cfg, &mut Rng::new(0)).is_err());
        cfg.allow_mixed_banks = true;
        assert!(build(&cfg, &mut Rng::new(0)).is_ok());
        assert!(dilated_chain_variant(0, 8, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn forward_input_errors() {
        let g = build(&MwcnnConfig::default(), &mut Rng::new(0)).unwrap();
        assert!(g.infer(&Tensor4::zeros(1, 1, 20, 32).unwrap()).is_err());
        assert!(g.infer(&Tensor4::zeros(1, 3, 32, 32).unwrap()).is_err());
        let mut tape = Tape::new();
        assert!(g
            .backward(&mut tape, &Tensor4::zeros(1, 1, 32, 32).unwrap())
            .is_err());
    }

    #[test]
    fn identity_blocks_degenerate_to_wpt() {
        for bank in [BankKind::Haar, BankKind::Db2] {
            for levels in 1..=3 {
                let cfg = MwcnnConfig {
                    levels,
                    widths: vec![4; levels],
                    bank,
                    bank_expand: bank,
                    ..MwcnnConfig::default()
                };
                let mut g = build(&cfg, &mut Rng::new(1)).unwrap();
                g.set_identity_blocks(true);
                let y: Tensor4 = randn(&mut Rng::new(2), 1, 1, 32, 32, 1.0).unwrap();
                let out = g.infer(&y).unwrap();
                assert!(
                    out.max_abs_diff(&y).unwrap() < 1e-5,
                    "{bank} levels={levels}"
                );
                let fb = FilterBank::by_kind(bank);
                let wpt = wpt_reconstruct(&wpt_decompose(&y, &fb, levels).unwrap(), &fb).unwrap();
                assert!(out.max_abs_diff(&wpt).unwrap() < 1e-5);
            }
        }
    }

    #[test]
    fn end_to_end_gradients() {
        let report = gradient_check(&tiny(1, &[2]), 8, 11).unwrap();
        assert!(report.passed(1e-3), "{report:?}");
        assert!(report.compared > 100);
        let full_depth = MwcnnConfig {
            levels: 1,
            widths: vec![2],
            ..MwcnnConfig::default()
        };
        assert!(gradient_check(&full_depth, 8, 12).unwrap().passed(1e-3));
    }

    #[test]
    fn gradients_through_skips_and_variants() {
        assert!(gradient_check(&tiny(2, &[2, 3]), 8, 5)
            .unwrap()
            .passed(1e-3));
        let db2 = MwcnnConfig {
            bank: BankKind::Db2,
            bank_expand: BankKind::Db2,
            ..tiny(1, &[2])
        };
        assert!(gradient_check(&db2, 8, 6).unwrap().passed(1e-3));
        let pool = MwcnnConfig {
            downsampler: Downsampler::SumPool,
            ..tiny(2, &[2, 2])
        };
        assert!(gradient_check(&pool, 8, 7).unwrap().passed(1e-3));
        let chain = MwcnnConfig {
            downsampler: Downsampler::DilatedChain,
            chain_depth: 3,
            ..tiny(1, &[2])
        };
        assert!(gradient_check(&chain, 8, 8).unwrap().passed(1e-3));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = Rng::new(4);
        let mut g: ModelGraph<f64> = build(&tiny(2, &[2, 2]), &mut rng).unwrap().cast();
        let y = randn(&mut rng, 2, 1, 8, 8, 1.0).unwrap();
        let mut tape = Tape::new();
        g.forward(&y, Mode::Train, Some(&mut tape)).unwrap();
        let grads = g
            .backward(&mut tape, &Tensor4::zeros(2, 1, 8, 8).unwrap())
            .unwrap();
        assert!(tape.is_empty());
        assert_eq!(grads.norm(), 0.0);
        assert_eq!(grads.input.sum_sq(), 0.0);
    }

    #[test]
    fn train_forward_moves_running_stats_only() {
        let mut g = build(&tiny(1, &[2]), &mut Rng::new(0)).unwrap();
        let before = g.clone();
        let y: Tensor4 = randn(&mut Rng::new(1), 2, 1, 8, 8, 1.0).unwrap();
        g.infer(&y).unwrap();
        assert_eq!(g, before);
        g.forward(&y, Mode::Train, None).unwrap();
        assert_ne!(g, before);
    }

    #[test]
    fn param_count_arithmetic() {
        let chain = MwcnnConfig {
            downsampler: Downsampler::DilatedChain,
            chain_depth: 1,
            widths: vec![8],
            levels: 1,
            ..MwcnnConfig::default()
        };
        // one conv 1→1 without BN
        assert_eq!(build(&chain, &mut Rng::new(0)).unwrap().param_count(), 10);
        let two = MwcnnConfig {
            chain_depth: 2,
            ..chain
        };
        // 1→8 with BN, then 8→1
        assert_eq!(
            build(&two, &mut Rng::new(0)).unwrap().param_count(),
            80 + 16 + 73
        );

        let conv_params = |scale: usize| {
            let cfg = MwcnnConfig {
                widths: vec![16 * scale, 32 * scale, 64 * scale],
                ..MwcnnConfig::default()
            };
            let g = build(&cfg, &mut Rng::new(0)).unwrap();
            g.units().map(|u| u.conv.param_count()).sum::<usize>() as f64
        };
        let ratio = conv_params(2) / conv_params(1);
        assert!((3.8..4.0).contains(&ratio), "{ratio}");
        let g = build(&MwcnnConfig::default(), &mut Rng::new(0)).unwrap();
        assert_eq!(g.param_sizes().iter().sum::<usize>(), g.param_count());
        assert_eq!(
            g.state_buffers()
                .iter()
                .map(|(_, _, b)| b.len())
                .sum::<usize>(),
            g.param_count()
                + g.units()
                    .filter_map(|u| u.bn.as_ref())
                    .map(|b| 2 * b.channels())
                    .sum::<usize>()
        );
    }

    #[test]
    fn buffer_names_are_unique() {
        let g = build(&MwcnnConfig::default(), &mut Rng::new(0)).unwrap();
        let names: std::collections::BTreeSet<_> =
            g.state_buffers().into_iter().map(|(n, _, _)| n).collect();
        assert_eq!(names.len(), g.state_buffers().len());
        assert!(names.contains("enc0.0.conv.weight"));
        assert!(names.contains("dec0.3.conv.bias"));
        assert!(!names.contains("dec0.3.bn.gamma"));
    }

    #[test]
    fn single_conv_mask_is_3x3() {
        let cfg = MwcnnConfig {
            downsampler: Downsampler::DilatedChain,
            chain_depth: 1,
            chain_dilation: 1,
            levels: 1,
            widths: vec![1],
            ..MwcnnConfig::default()
        };
        let g = build(&cfg, &mut Rng::new(0)).unwrap();
        let m = g.receptive_field_mask(9, 9, (4, 4)).unwrap();
        assert_eq!(m.count(), 9);
        assert_eq!(m.bbox(), Some((3, 3, 5, 5)));
        assert!(g.receptive_field_mask(9, 9, (9, 0)).is_err());
    }

    #[test]
    fn dilated_chain_mask_has_holes() {
        let g = dilated_chain_variant(3, 8, &mut Rng::new(0)).unwrap();
        let m = g.receptive_field_mask(33, 33, (16, 16)).unwrap();
        assert_eq!(m.bbox(), Some((10, 10, 22, 22)));
        assert!(m.holes() > 0);
        // only the even-offset lattice is reachable
        assert_eq!(m.count(), 49);
        assert!(!m.get(16, 17));
    }

    #[test]
    fn mwcnn_level1_mask_is_dense() {
        let cfg = MwcnnConfig {
            levels: 1,
            widths: vec![8],
            ..MwcnnConfig::default()
        };
        let g = build(&cfg, &mut Rng::new(0)).unwrap();
        for px in [(16, 16), (17, 16), (16, 17), (17, 17)] {
            let m = g.receptive_field_mask(32, 32, px).unwrap();
            assert_eq!(m.holes(), 0, "{px:?}");
            assert!(m.count() > 100);
        }
    }
}
