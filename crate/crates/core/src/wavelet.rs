//! 2-D discrete wavelet transform as four stride-2 subband correlations, its
//! exact inverse, and the recursive wavelet packet transform (WPT).
//!
//! Subband `k` of a plane `x` is
//!
//! ```text
//! x_k(i, j) = Σ_{r,s < tap} f_k(r, s) · x((2i + r) mod h, (2j + s) mod w)
//! ```
//!
//! i.e. a correlation (no filter flip) anchored at the top-left pixel of each
//! 2×2 block, with periodic wrap for taps that run past the edge (only
//! possible for DB2). The inverse is `synth_gain` times the transposed
//! operator: the unnormalized Haar bank satisfies `AᵀA = 4I`, the orthonormal
//! DB2 bank `AᵀA = I`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Real, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BankKind {
    Haar,
    Db2,
}

impl fmt::Display for BankKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BankKind::Haar => "haar",
            BankKind::Db2 => "db2",
        })
    }
}

impl FromStr for BankKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "haar" => Ok(BankKind::Haar),
            "db2" => Ok(BankKind::Db2),
            other => Err(Error::InvalidArgument(format!(
                "unknown filter bank {other:?}"
            ))),
        }
    }
}

/// The four 2-D analysis filters plus the synthesis gain.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub kind: BankKind,
    pub tap: usize,
    /// `[f_LL, f_LH, f_HL, f_HH]`, each `tap × tap` row-major.
    pub filters: [Vec<f64>; 4],
    pub synth_gain: f64,
}

fn outer(col: &[f64], row: &[f64]) -> Vec<f64> {
    col.iter()
        .flat_map(|&a| row.iter().map(move |&b| a * b))
        .collect()
}

fn separable(kind: BankKind, low: &[f64], high: &[f64], synth_gain: f64) -> FilterBank {
    // LH is high-pass down the rows and low-pass across the columns.
    FilterBank {
        kind,
        tap: low.len(),
        filters: [
            outer(low, low),
            outer(high, low),
            outer(low, high),
            outer(high, high),
        ],
        synth_gain,
    }
}

/// Unnormalized Haar: all entries ±1, LL gain 4, synthesis gain 1/4.
pub fn haar_bank() -> FilterBank {
    separable(BankKind::Haar, &[1.0, 1.0], &[-1.0, 1.0], 0.25)
}

/// Orthonormal Daubechies-2 (D4) low- and high-pass taps.
pub fn db2_taps() -> ([f64; 4], [f64; 4]) {
    let s3 = 3f64.sqrt();
    let d = 4.0 * 2f64.sqrt();
    let h = [
        (1.0 + s3) / d,
        (3.0 + s3) / d,
        (3.0 - s3) / d,
        (1.0 - s3) / d,
    ];
    let g = [h[3], -h[2], h[1], -h[0]];
    (h, g)
}

/// Separable 4-tap Daubechies-2 bank with periodic boundary.
pub fn db2_bank() -> FilterBank {
    let (h, g) = db2_taps();
    separable(BankKind::Db2, &h, &g, 1.0)
}

impl FilterBank {
    pub fn by_kind(kind: BankKind) -> Self {
        match kind {
            BankKind::Haar => haar_bank(),
            BankKind::Db2 => db2_bank(),
        }
    }

    pub fn ll(&self) -> &[f64] {
        &self.filters[0]
    }

    pub fn lh(&self) -> &[f64] {
        &self.filters[1]
    }

    pub fn hl(&self) -> &[f64] {
        &self.filters[2]
    }

    pub fn hh(&self) -> &[f64] {
        &self.filters[3]
    }

    /// Entrywise absolute value. Used by the receptive-field surrogate, where
    /// sign cancellations must not hide a connection.
    pub fn abs(&self) -> Self {
        let mut out = self.clone();
        for f in &mut out.filters {
            for v in f.iter_mut() {
                *v = v.abs();
            }
        }
        out
    }

    fn check_input(&self, h: usize, w: usize) -> Result<()> {
        if !h.is_multiple_of(2) || !w.is_multiple_of(2) {
            return Err(Error::InvalidDims(format!(
                "DWT needs even spatial dims, got {h}x{w}"
            )));
        }
        if self.tap > h || self.tap > w {
            return Err(Error::InvalidDims(format!(
                "{} filters ({} taps) do not fit a {h}x{w} image",
                self.kind, self.tap
            )));
        }
        Ok(())
    }
}

/// The four half-resolution subbands `x1..x4` (LL, LH, HL, HH).
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandQuad<T = f32> {
    pub bands: [Tensor4<T>; 4],
}

impl<T: Real> SubbandQuad<T> {
    pub fn new(bands: [Tensor4<T>; 4]) -> Result<Self> {
        let s = bands[0].shape();
        for b in &bands[1..] {
            if b.shape() != s {
                return Err(Error::ShapeMismatch {
                    expected: s,
                    got: b.shape(),
                });
            }
        }
        Ok(Self { bands })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.bands[0].shape()
    }

    pub fn x1(&self) -> &Tensor4<T> {
        &self.bands[0]
    }

    pub fn x2(&self) -> &Tensor4<T> {
        &self.bands[1]
    }

    pub fn x3(&self) -> &Tensor4<T> {
        &self.bands[2]
    }

    pub fn x4(&self) -> &Tensor4<T> {
        &self.bands[3]
    }

    /// Channel-stacks the quad as `[x1 | x2 | x3 | x4]`, all channels of `x1`
    /// first.
    pub fn stack(&self) -> Tensor4<T> {
        let [n, c, h, w] = self.shape();
        let per = c * h * w;
        let mut data = Vec::with_capacity(4 * n * per);
        for b in 0..n {
            for band in &self.bands {
                data.extend_from_slice(&band.data()[b * per..(b + 1) * per]);
            }
        }
        Tensor4::from_vec([n, 4 * c, h, w], data).expect("stacked shape is valid")
    }

    /// Inverse of [`SubbandQuad::stack`].
    pub fn unstack(t: &Tensor4<T>) -> Result<Self> {
        let [n, c4, h, w] = t.shape();
        if c4 % 4 != 0 {
            return Err(Error::InvalidDims(format!(
                "channel count {c4} is not a multiple of 4"
            )));
        }
        let c = c4 / 4;
        let per = c * h * w;
        let mut parts: [Vec<T>; 4] = Default::default();
        for b in 0..n {
            for (k, part) in parts.iter_mut().enumerate() {
                let start = (b * 4 + k) * per;
                part.extend_from_slice(&t.data()[start..start + per]);
            }
        }
        let bands = parts.map(|d| Tensor4::from_vec([n, c, h, w], d).expect("valid band shape"));
        Ok(Self { bands })
    }
}

/// Forward transform of one `h × w` plane into four `h/2 × w/2` planes.
fn analyze_plane<T: Real>(bank: &FilterBank, x: &[T], h: usize, w: usize, out: [&mut [T]; 4]) {
    let (oh, ow, tap) = (h / 2, w / 2, bank.tap);
    let filters: [Vec<T>; 4] =
        std::array::from_fn(|k| bank.filters[k].iter().map(|&v| T::of(v)).collect());
    let [o1, o2, o3, o4] = out;
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = [T::zero(); 4];
            for r in 0..tap {
                let row = ((2 * i + r) % h) * w;
                for s in 0..tap {
                    let v = x[row + (2 * j + s) % w];
                    let t = r * tap + s;
                    for k in 0..4 {
                        acc[k] += filters[k][t] * v;
                    }
                }
            }
            let o = i * ow + j;
            o1[o] = acc[0];
            o2[o] = acc[1];
            o3[o] = acc[2];
            o4[o] = acc[3];
        }
    }
}

/// Transposed analysis for one plane, scaled by `gain`.
fn synthesize_plane<T: Real>(
    bank: &FilterBank,
    bands: [&[T]; 4],
    h: usize,
    w: usize,
    gain: f64,
    out: &mut [T],
) {
    let (oh, ow, tap) = (h / 2, w / 2, bank.tap);
    let filters: [Vec<T>; 4] =
        std::array::from_fn(|k| bank.filters[k].iter().map(|&v| T::of(v)).collect());
    out.iter_mut().for_each(|v| *v = T::zero());
    for i in 0..oh {
        for j in 0..ow {
            let o = i * ow + j;
            let coef = [bands[0][o], bands[1][o], bands[2][o], bands[3][o]];
            for r in 0..tap {
                let row = ((2 * i + r) % h) * w;
                for s in 0..tap {
                    let t = r * tap + s;
                    let mut acc = T::zero();
                    for k in 0..4 {
                        acc += filters[k][t] * coef[k];
                    }
                    out[row + (2 * j + s) % w] += acc;
                }
            }
        }
    }
    if gain != 1.0 {
        let g = T::of(gain);
        out.iter_mut().for_each(|v| *v *= g);
    }
}

/// Single-level 2-D DWT.
///
/// For Haar and 0-based `(i, j)` this is exactly the block formula
/// `x1(i,j) = x(2i,2j) + x(2i,2j+1) + x(2i+1,2j) + x(2i+1,2j+1)` (the
/// 1-based `(2i−1, 2j−1)` anchor shifted down by one), and analogously for
/// `x2..x4` with the signs of the LH/HL/HH filters.
pub fn dwt2<T: Real>(x: &Tensor4<T>, bank: &FilterBank) -> Result<SubbandQuad<T>> {
    let [n, c, h, w] = x.shape();
    bank.check_input(h, w)?;
    let (oh, ow) = (h / 2, w / 2);
    let planes = par::map_indices(n * c, |p| {
        let mut bufs: [Vec<T>; 4] = std::array::from_fn(|_| vec![T::zero(); oh * ow]);
        let [b1, b2, b3, b4] = &mut bufs;
        analyze_plane(bank, x.plane(p / c, p % c), h, w, [b1, b2, b3, b4]);
        bufs
    });
    let mut parts: [Vec<T>; 4] = std::array::from_fn(|_| Vec::with_capacity(n * c * oh * ow));
    for bufs in planes {
        for (part, buf) in parts.iter_mut().zip(bufs) {
            part.extend_from_slice(&buf);
        }
    }
    let bands = parts.map(|d| Tensor4::from_vec([n, c, oh, ow], d).expect("valid band shape"));
    Ok(SubbandQuad { bands })
}

fn transpose_with_gain<T: Real>(
    q: &SubbandQuad<T>,
    bank: &FilterBank,
    gain: f64,
) -> Result<Tensor4<T>> {
    let [n, c, oh, ow] = q.shape();
    let (h, w) = (2 * oh, 2 * ow);
    bank.check_input(h, w)?;
    let mut out = Tensor4::zeros(n, c, h, w)?;
    let plane = h * w;
    par::for_each_chunk_mut(out.data_mut(), plane, |p, dst| {
        let (b, ch) = (p / c, p % c);
        let bands = [
            q.bands[0].plane(b, ch),
            q.bands[1].plane(b, ch),
            q.bands[2].plane(b, ch),
            q.bands[3].plane(b, ch),
        ];
        synthesize_plane(bank, bands, h, w, gain, dst);
    });
    Ok(out)
}

/// Inverse DWT: `synth_gain · Aᵀ`. For Haar this reproduces, e.g.,
/// `x(2i,2j) = (x1 − x2 − x3 + x4)(i,j) / 4` (0-based).
pub fn iwt2<T: Real>(q: &SubbandQuad<T>, bank: &FilterBank) -> Result<Tensor4<T>> {
    SubbandQuad::new(q.bands.clone())?;
    transpose_with_gain(q, bank, bank.synth_gain)
}

/// Adjoint of [`dwt2`] (the plain transpose `Aᵀ`), used to backpropagate
/// through a DWT layer.
pub fn dwt2_adjoint<T: Real>(g: &SubbandQuad<T>, bank: &FilterBank) -> Result<Tensor4<T>> {
    transpose_with_gain(g, bank, 1.0)
}

/// Adjoint of [`iwt2`]: `synth_gain · A`.
pub fn iwt2_adjoint<T: Real>(g: &Tensor4<T>, bank: &FilterBank) -> Result<SubbandQuad<T>> {
    let mut q = dwt2(g, bank)?;
    if bank.synth_gain != 1.0 {
        let s = T::of(bank.synth_gain);
        for b in &mut q.bands {
            *b = b.scale(s);
        }
    }
    Ok(q)
}

/// Leaves of a multi-level wavelet packet decomposition.
///
/// Leaves are ordered depth-first: leaf `k` has base-4 digits
/// `(d_1, ..., d_L)`, most significant first, where `d_l` selects the
/// subband taken at level `l`. Leaf 0 is LL∘LL∘…∘LL.
#[derive(Clone, Debug, PartialEq)]
pub struct WptTree<T = f32> {
    pub levels: usize,
    pub leaves: Vec<Tensor4<T>>,
}

pub fn wpt_decompose<T: Real>(
    x: &Tensor4<T>,
    bank: &FilterBank,
    levels: usize,
) -> Result<WptTree<T>> {
    if levels == 0 {
        return Err(Error::InvalidArgument(
            "WPT needs at least one level".into(),
        ));
    }
    let div = 1usize
        .checked_shl(levels as u32)
        .ok_or_else(|| Error::InvalidArgument(format!("{levels} levels is too deep")))?;
    if !x.h().is_multiple_of(div) || !x.w().is_multiple_of(div) {
        return Err(Error::InvalidDims(format!(
            "{}x{} is not divisible by 2^{levels}",
            x.h(),
            x.w()
        )));
    }
    fn descend<T: Real>(
        x: &Tensor4<T>,
        bank: &FilterBank,
        depth: usize,
        out: &mut Vec<Tensor4<T>>,
    ) -> Result<()> {
        if depth == 0 {
            out.push(x.clone());
            return Ok(());
        }
        let q = dwt2(x, bank)?;
        for band in &q.bands {
            descend(band, bank, depth - 1, out)?;
        }
        Ok(())
    }
    let mut leaves = Vec::with_capacity(4usize.pow(levels as u32));
    descend(x, bank, levels, &mut leaves)?;
    Ok(WptTree { levels, leaves })
}

pub fn wpt_reconstruct<T: Real>(t: &WptTree<T>, bank: &FilterBank) -> Result<Tensor4<T>> {
    if t.levels == 0 {
        return Err(Error::InvalidArgument("WPT tree has zero levels".into()));
    }
    let expected = 4usize
        .checked_pow(t.levels as u32)
        .ok_or_else(|| Error::InvalidArgument("tree too deep".into()))?;
    if t.leaves.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "{} levels need {expected} leaves, got {}",
            t.levels,
            t.leaves.len()
        )));
    }
    let s = t.leaves[0].shape();
    if let Some(bad) = t.leaves.iter().find(|l| l.shape() != s) {
        return Err(Error::ShapeMismatch {
            expected: s,
            got: bad.shape(),
        });
    }
    let mut level: Vec<Tensor4<T>> = t.leaves.clone();
    while level.len() > 1 {
        level = level
            .chunks(4)
            .map(|q| {
                let quad =
                    SubbandQuad::new([q[0].clone(), q[1].clone(), q[2].clone(), q[3].clone()])?;
                iwt2(&quad, bank)
            })
            .collect::<Result<_>>()?;
    }
    Ok(level.pop().expect("one root"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{randn, Rng};

    fn img(h: usize, w: usize, v: &[f32]) -> Tensor4 {
        Tensor4::from_vec([1, 1, h, w], v.to_vec()).unwrap()
    }

    #[test]
    fn haar_filters_match_the_printed_matrices() {
        let b = haar_bank();
        assert_eq!(b.ll(), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(b.lh(), &[-1.0, -1.0, 1.0, 1.0]);
        assert_eq!(b.hl(), &[-1.0, 1.0, -1.0, 1.0]);
        assert_eq!(b.hh(), &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(b.lh().iter().sum::<f64>(), 0.0);
        assert_eq!(b.synth_gain, 0.25);
    }

    #[test]
    fn db2_taps_are_orthonormal() {
        let (h, g) = db2_taps();
        let hh: f64 = h.iter().map(|v| v * v).sum();
        let hg: f64 = h.iter().zip(&g).map(|(a, b)| a * b).sum();
        assert!((hh - 1.0).abs() < 1e-7);
        assert!(hg.abs() < 1e-7);
        // even shifts are orthogonal too
        assert!((h[0] * h[2] + h[1] * h[3]).abs() < 1e-12);
    }

    #[test]
    fn haar_on_2x2() {
        let q = dwt2(&img(2, 2, &[1.0, 2.0, 3.0, 4.0]), &haar_bank()).unwrap();
        let v: Vec<f32> = q.bands.iter().map(|b| b.data()[0]).collect();
        assert_eq!(v, vec![10.0, 4.0, 2.0, 0.0]);
        let back = iwt2(&q, &haar_bank()).unwrap();
        assert_eq!(back.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn haar_constant_image() {
        let x = Tensor4::full([1, 1, 6, 4], 3.0f32).unwrap();
        let q = dwt2(&x, &haar_bank()).unwrap();
        assert!(q.x1().data().iter().all(|&v| v == 12.0));
        for b in &q.bands[1..] {
            assert!(b.data().iter().all(|&v| v == 0.0));
        }
        let back = iwt2(&q, &haar_bank()).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn rejects_odd_and_tiny_inputs() {
        assert!(dwt2(&Tensor4::<f32>::zeros(1, 1, 3, 4).unwrap(), &haar_bank()).is_err());
        assert!(dwt2(&Tensor4::<f32>::zeros(1, 1, 2, 2).unwrap(), &db2_bank()).is_err());
        assert!(dwt2(&Tensor4::<f32>::zeros(1, 1, 4, 4).unwrap(), &db2_bank()).is_ok());
    }

    #[test]
    fn iwt_rejects_inconsistent_quad() {
        let a = Tensor4::<f32>::zeros(1, 1, 2, 2).unwrap();
        let b = Tensor4::<f32>::zeros(1, 1, 2, 3).unwrap();
        let q = SubbandQuad {
            bands: [a.clone(), a.clone(), a, b],
        };
        assert!(iwt2(&q, &haar_bank()).is_err());
    }

    #[test]
    fn roundtrips() {
        let mut rng = Rng::new(3);
        let x: Tensor4 = randn(&mut rng, 2, 3, 16, 16, 1.0).unwrap();
        let r = iwt2(&dwt2(&x, &haar_bank()).unwrap(), &haar_bank()).unwrap();
        assert!(r.max_abs_diff(&x).unwrap() < 1e-6);
        let x8: Tensor4 = randn(&mut rng, 1, 1, 8, 8, 1.0).unwrap();
        let r = iwt2(&dwt2(&x8, &db2_bank()).unwrap(), &db2_bank()).unwrap();
        assert!(r.max_abs_diff(&x8).unwrap() < 1e-5);
    }

    #[test]
    fn stack_order_is_band_major() {
        let mk = |v: f32| Tensor4::full([1, 2, 1, 1], v).unwrap();
        let q = SubbandQuad::new([mk(1.0), mk(2.0), mk(3.0), mk(4.0)]).unwrap();
        let s = q.stack();
        assert_eq!(s.data(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        assert_eq!(SubbandQuad::unstack(&s).unwrap(), q);
    }

    #[test]
    fn wpt_examples() {
        let mut rng = Rng::new(5);
        let x: Tensor4 = randn(&mut rng, 1, 1, 8, 8, 1.0).unwrap();
        let one = wpt_decompose(&x, &haar_bank(), 1).unwrap();
        assert_eq!(one.leaves, dwt2(&x, &haar_bank()).unwrap().bands.to_vec());
        let two = wpt_decompose(&x, &haar_bank(), 2).unwrap();
        assert_eq!(two.leaves.len(), 16);
        assert!(two.leaves.iter().all(|l| l.shape() == [1, 1, 2, 2]));

        let c = Tensor4::full([1, 1, 8, 8], 2.0f32).unwrap();
        let t = wpt_decompose(&c, &haar_bank(), 2).unwrap();
        assert!(t.leaves[0].data().iter().all(|&v| v == 32.0));
        assert!(t.leaves[1..]
            .iter()
            .all(|l| l.data().iter().all(|&v| v == 0.0)));

        let zero = WptTree {
            levels: 2,
            leaves: vec![Tensor4::<f32>::zeros(1, 1, 2, 2).unwrap(); 16],
        };
        assert!(wpt_reconstruct(&zero, &haar_bank())
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn wpt_level1_reconstruct_equals_iwt() {
        let mut rng = Rng::new(6);
        let x: Tensor4 = randn(&mut rng, 1, 2, 8, 8, 1.0).unwrap();
        let t = wpt_decompose(&x, &haar_bank(), 1).unwrap();
        let q = dwt2(&x, &haar_bank()).unwrap();
        assert_eq!(
            wpt_reconstruct(&t, &haar_bank()).unwrap(),
            iwt2(&q, &haar_bank()).unwrap()
        );
    }

    #[test]
    fn wpt_errors() {
        let x = Tensor4::<f32>::zeros(1, 1, 12, 12).unwrap();
        assert!(wpt_decompose(&x, &haar_bank(), 3).is_err());
        assert!(wpt_decompose(&x, &haar_bank(), 0).is_err());
        let bad = WptTree {
            levels: 2,
            leaves: vec![Tensor4::<f32>::zeros(1, 1, 2, 2).unwrap(); 15],
        };
        assert!(wpt_reconstruct(&bad, &haar_bank()).is_err());
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        let mut rng = Rng::new(11);
        for bank in [haar_bank(), db2_bank()] {
            let x: Tensor4<f64> = randn(&mut rng, 1, 2, 8, 8, 1.0).unwrap();
            let g: Tensor4<f64> = randn(&mut rng, 1, 8, 4, 4, 1.0).unwrap();
            let gq = SubbandQuad::unstack(&g).unwrap();
            let ax = dwt2(&x, &bank).unwrap().stack();
            let lhs: f64 = ax.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let at = dwt2_adjoint(&gq, &bank).unwrap();
            let rhs: f64 = at.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));

            let y = iwt2(&gq, &bank).unwrap();
            let lhs: f64 = y.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
            let adj = iwt2_adjoint(&x, &bank).unwrap().stack();
            let rhs: f64 = adj.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }

    mod props {
        use super::*;
        use crate::tensor::Rng;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn wpt_perfect_reconstruction(seed in 0u64..10_000, levels in 1usize..=4, k in 1usize..=3, db2 in any::<bool>()) {
                let bank = if db2 { db2_bank() } else { haar_bank() };
                // DB2 needs the deepest DWT input to be at least 4 wide
                let side = (1usize << levels) * if db2 { k + 1 } else { k };
                let x: Tensor4<f64> = randn(&mut Rng::new(seed), 1, 1, side, side, 1.0).unwrap();
                let t = wpt_decompose(&x, &bank, levels).unwrap();
                let r = wpt_reconstruct(&t, &bank).unwrap();
                prop_assert!(r.max_abs_diff(&x).unwrap() < 1e-10);
            }

            #[test]
            fn dwt_is_linear(seed in 0u64..10_000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
                let mut rng = Rng::new(seed);
                let x: Tensor4<f64> = randn(&mut rng, 1, 1, 8, 8, 1.0).unwrap();
                let y: Tensor4<f64> = randn(&mut rng, 1, 1, 8, 8, 1.0).unwrap();
                for bank in [haar_bank(), db2_bank()] {
                    let mix = x.scale(alpha).add(&y.scale(beta)).unwrap();
                    let lhs = dwt2(&mix, &bank).unwrap().stack();
                    let rhs = dwt2(&x, &bank).unwrap().stack().scale(alpha)
                        .add(&dwt2(&y, &bank).unwrap().stack().scale(beta)).unwrap();
                    prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
                }
            }

            #[test]
            fn batched_equals_per_slab(seed in 0u64..10_000) {
                let x: Tensor4 = randn(&mut Rng::new(seed), 2, 3, 8, 8, 1.0).unwrap();
                let bank = haar_bank();
                let all = dwt2(&x, &bank).unwrap();
                for b in 0..2 {
                    for c in 0..3 {
                        let slab = Tensor4::from_vec([1, 1, 8, 8], x.plane(b, c).to_vec()).unwrap();
                        let one = dwt2(&slab, &bank).unwrap();
                        for k in 0..4 {
                            prop_assert_eq!(one.bands[k].data(), all.bands[k].plane(b, c));
                        }
                        let back = iwt2(&one, &bank).unwrap();
                        let full = iwt2(&all, &bank).unwrap();
                        prop_assert_eq!(back.data(), full.plane(b, c));
                    }
                }
            }
        }
    }
}
