//! Two-layer shared-weight convolutional predictor with an SLP head and a
//! DP head, trained by momentum gradient descent on `L_SLP + lambda * L_DP`.
//!
//! ```text
//! a1 = tanh(conv_k(x; W1) + b1)          C -> H channels
//! a2 = tanh(conv_k(a1; W2) + b2)         H -> H channels
//! y_hat = sigmoid(v . a2 + c)            per cell
//! w_hat = softmax(U a2 + d)              per cell, M bins
//! ```
//!
//! Convolutions use zero padding and keep the grid size. The flat
//! parameter vector is laid out as `W1 [H][C][k][k]`, `b1 [H]`,
//! `W2 [H][H][k][k]`, `b2 [H]`, `v [H]`, `c`, `U [M][H]`, `d [M]`.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directional::{dp_loss_grad, nll_dp, DirField, DEFAULT_BINS};
use crate::error::{DslpError, Result};
use crate::field::{GridField, LayeredWorld};
use crate::objective::{alpha_ib_soft, clamp_pred, nll_slp, slp_loss_soft, Alpha};

pub const MODEL_MAGIC: &[u8; 4] = b"DSLP";
const MODEL_VERSION: u32 = 1;

/// Shape of the fixed architecture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub in_channels: usize,
    pub hidden: usize,
    /// Odd kernel side.
    pub kernel: usize,
    pub bins: usize,
}

impl ArchSpec {
    pub fn new(in_channels: usize, hidden: usize, kernel: usize, bins: usize) -> Result<Self> {
        if in_channels == 0 || hidden == 0 || kernel % 2 == 0 || bins < 4 {
            return Err(DslpError::InvalidArgument(format!(
                "architecture C={in_channels} H={hidden} k={kernel} M={bins}"
            )));
        }
        Ok(Self {
            in_channels,
            hidden,
            kernel,
            bins,
        })
    }

    /// Three input channels, 32 hidden units, 5x5 kernels, 16 bins.
    pub fn default_for(in_channels: usize) -> Self {
        Self {
            in_channels,
            hidden: 32,
            kernel: 5,
            bins: DEFAULT_BINS,
        }
    }

    pub fn layout(&self) -> ParamLayout {
        let (c, h, k2, m) = (self.in_channels, self.hidden, self.kernel * self.kernel, self.bins);
        let w1 = 0;
        let b1 = w1 + h * c * k2;
        let w2 = b1 + h;
        let b2 = w2 + h * h * k2;
        let v = b2 + h;
        let c0 = v + h;
        let u = c0 + 1;
        let d = u + m * h;
        ParamLayout {
            w1,
            b1,
            w2,
            b2,
            v,
            c: c0,
            u,
            d,
            total: d + m,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub v: usize,
    pub c: usize,
    pub u: usize,
    pub d: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    arch: ArchSpec,
    params: Vec<f64>,
}

/// Activations kept for the backward pass.
struct Cache {
    w: usize,
    h: usize,
    x: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    y: Vec<f64>,
    /// cell-major
    wd: Vec<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Channels copied into zero-padded planes of width `w + 2r`. With this
/// layout every kernel tap is a fixed offset, so a convolution becomes one
/// long contiguous pass per tap over the "wide" index `t = j * (w + 2r) + i`.
struct Padded {
    data: Vec<f64>,
    pw: usize,
    plane: usize,
    r: usize,
}

impl Padded {
    fn new(input: &[f64], channels: usize, k: usize, w: usize, h: usize) -> Self {
        let r = k / 2;
        let (pw, ph) = (w + 2 * r, h + 2 * r);
        let plane = pw * ph;
        let mut data = vec![0.0; channels * plane];
        for c in 0..channels {
            for j in 0..h {
                let dst = c * plane + (j + r) * pw + r;
                data[dst..dst + w].copy_from_slice(&input[(c * h + j) * w..(c * h + j + 1) * w]);
            }
        }
        Self { data, pw, plane, r }
    }

    fn zeros(channels: usize, k: usize, w: usize, h: usize) -> Self {
        let r = k / 2;
        let (pw, ph) = (w + 2 * r, h + 2 * r);
        Self {
            data: vec![0.0; channels * pw * ph],
            pw,
            plane: pw * ph,
            r,
        }
    }

    /// Plane `c` from the tap offset `(kx, ky)` on, `len` values.
    fn tap(&self, c: usize, kx: usize, ky: usize, len: usize) -> &[f64] {
        let lo = c * self.plane + ky * self.pw + kx;
        &self.data[lo..lo + len]
    }
}

/// Length of the wide index range covering every output cell.
fn wide_len(pw: usize, w: usize, h: usize) -> usize {
    (h - 1) * pw + w
}

#[inline]
fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Dot product with four interleaved partial sums, which lets the compiler
/// vectorize it; the summation order is fixed, so results are reproducible.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for q in 0..4 {
            acc[q] += x[q] * y[q];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out[o] += sum_c W[o][c] * shift(input[c])` with zero padding.
#[allow(clippy::too_many_arguments)]
fn conv_accumulate(input: &[f64], cin: usize, weights: &[f64], cout: usize, k: usize, w: usize, h: usize, out: &mut [f64]) {
    let src = Padded::new(input, cin, k, w, h);
    let n = w * h;
    let m = wide_len(src.pw, w, h);
    let mut wide = vec![0.0; m];
    for o in 0..cout {
        wide.fill(0.0);
        for c in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    let wt = weights[((o * cin + c) * k + ky) * k + kx];
                    if wt != 0.0 {
                        axpy(&mut wide, wt, src.tap(c, kx, ky, m));
                    }
                }
            }
        }
        let dst = &mut out[o * n..(o + 1) * n];
        for j in 0..h {
            axpy(&mut dst[j * w..(j + 1) * w], 1.0, &wide[j * src.pw..j * src.pw + w]);
        }
    }
}

/// Weight gradient and (optionally) input gradient of a convolution.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    cin: usize,
    weights: &[f64],
    dz: &[f64],
    cout: usize,
    k: usize,
    w: usize,
    h: usize,
    dweights: &mut [f64],
    dinput: Option<&mut [f64]>,
) {
    let src = Padded::new(input, cin, k, w, h);
    let pw = src.pw;
    let m = wide_len(pw, w, h);
    let mut din = dinput.as_ref().map(|_| Padded::zeros(cin, k, w, h));
    let mut g = vec![0.0; m];
    for o in 0..cout {
        // wide copy of dz[o]; the padding columns stay zero
        for j in 0..h {
            g[j * pw..j * pw + w].copy_from_slice(&dz[(o * h + j) * w..(o * h + j + 1) * w]);
        }
        for c in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    let idx = ((o * cin + c) * k + ky) * k + kx;
                    dweights[idx] += dot(&g, src.tap(c, kx, ky, m));
                    if let Some(d) = din.as_mut() {
                        let lo = c * d.plane + ky * pw + kx;
                        axpy(&mut d.data[lo..lo + m], weights[idx], &g);
                    }
                }
            }
        }
    }
    if let (Some(d), Some(out)) = (din, dinput) {
        let r = d.r;
        for c in 0..cin {
            for j in 0..h {
                let lo = c * d.plane + (j + r) * pw + r;
                axpy(&mut out[(c * h + j) * w..(c * h + j + 1) * w], 1.0, &d.data[lo..lo + w]);
            }
        }
    }
}

impl Predictor {
    pub fn zeros(arch: ArchSpec) -> Self {
        Self {
            arch,
            params: vec![0.0; arch.param_count()],
        }
    }

    /// Gaussian weights scaled by `1/sqrt(fan_in)`, zero biases.
    pub fn init(arch: ArchSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = arch.layout();
        let mut p = vec![0.0; l.total];
        let k2 = (arch.kernel * arch.kernel) as f64;
        let fill = |slot: &mut [f64], scale: f64, rng: &mut ChaCha8Rng| {
            for v in slot {
                let z: f64 = StandardNormal.sample(rng);
                *v = z * scale;
            }
        };
        fill(&mut p[l.w1..l.b1], 1.0 / (arch.in_channels as f64 * k2).sqrt(), &mut rng);
        fill(&mut p[l.w2..l.b2], 1.0 / (arch.hidden as f64 * k2).sqrt(), &mut rng);
        fill(&mut p[l.v..l.c], 1.0 / (arch.hidden as f64).sqrt(), &mut rng);
        fill(&mut p[l.u..l.d], 1.0 / (arch.hidden as f64).sqrt(), &mut rng);
        Self { arch, params: p }
    }

    pub fn from_params(arch: ArchSpec, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(DslpError::DimensionMismatch(format!(
                "{} parameters for an architecture of {}",
                params.len(),
                arch.param_count()
            )));
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> ArchSpec {
        self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_world(&self, world: &LayeredWorld) -> Result<()> {
        if world.channel_count() != self.arch.in_channels {
            return Err(DslpError::ChannelMismatch {
                expected: self.arch.in_channels,
                got: world.channel_count(),
            });
        }
        Ok(())
    }

    fn forward_cache(&self, world: &LayeredWorld) -> Result<Cache> {
        self.check_world(world)?;
        let (w, h) = world.dims();
        let n = w * h;
        let a = self.arch;
        let l = a.layout();
        let p = &self.params;
        let (hid, k, m) = (a.hidden, a.kernel, a.bins);
        let x = world.stacked();

        let mut a1 = vec![0.0; hid * n];
        for o in 0..hid {
            a1[o * n..(o + 1) * n].fill(p[l.b1 + o]);
        }
        conv_accumulate(&x, a.in_channels, &p[l.w1..l.b1], hid, k, w, h, &mut a1);
        a1.iter_mut().for_each(|v| *v = v.tanh());

        let mut a2 = vec![0.0; hid * n];
        for o in 0..hid {
            a2[o * n..(o + 1) * n].fill(p[l.b2 + o]);
        }
        conv_accumulate(&a1, hid, &p[l.w2..l.b2], hid, k, w, h, &mut a2);
        a2.iter_mut().for_each(|v| *v = v.tanh());

        let mut zy = vec![p[l.c]; n];
        for q in 0..hid {
            let vq = p[l.v + q];
            for (z, s) in zy.iter_mut().zip(&a2[q * n..(q + 1) * n]) {
                *z += vq * s;
            }
        }
        let y: Vec<f64> = zy.iter().map(|&z| clamp_pred(sigmoid(z))).collect();

        let mut zw = vec![0.0; m * n];
        for b in 0..m {
            let plane = &mut zw[b * n..(b + 1) * n];
            plane.fill(p[l.d + b]);
            for q in 0..hid {
                let u = p[l.u + b * hid + q];
                for (z, s) in plane.iter_mut().zip(&a2[q * n..(q + 1) * n]) {
                    *z += u * s;
                }
            }
        }
        let mut wd = vec![0.0; n * m];
        for cell in 0..n {
            let mx = (0..m).map(|b| zw[b * n + cell]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for b in 0..m {
                let e = (zw[b * n + cell] - mx).exp();
                wd[cell * m + b] = e;
                z += e;
            }
            for b in 0..m {
                wd[cell * m + b] /= z;
            }
        }
        Ok(Cache { w, h, x, a1, a2, y, wd })
    }

    /// Predicted SLP map and DP field (defined everywhere).
    pub fn forward(&self, world: &LayeredWorld) -> Result<(GridField, DirField)> {
        let c = self.forward_cache(world)?;
        self.outputs(&c, world.cell_size())
    }

    fn outputs(&self, c: &Cache, cell_size: f64) -> Result<(GridField, DirField)> {
        let y = GridField::from_values(c.w, c.h, cell_size, c.y.clone())?;
        let mut d = DirField::undefined(self.arch.bins, c.w, c.h, cell_size)?;
        let (probs, defined) = d.raw_mut();
        probs.copy_from_slice(&c.wd);
        defined.fill(true);
        Ok((y, d))
    }

    /// Parameter gradient given `dL/dy_hat` (per cell) and `dL/dw_hat` (cell-major).
    fn backward(&self, c: &Cache, gy: &[f64], gw: &[f64]) -> Vec<f64> {
        let a = self.arch;
        let l = a.layout();
        let p = &self.params;
        let (w, h) = (c.w, c.h);
        let n = w * h;
        let (hid, k, m) = (a.hidden, a.kernel, a.bins);
        let mut g = vec![0.0; l.total];

        let dzy: Vec<f64> = gy.iter().zip(&c.y).map(|(&g, &y)| g * y * (1.0 - y)).collect();
        let mut dzw = vec![0.0; m * n];
        for cell in 0..n {
            let wd = &c.wd[cell * m..(cell + 1) * m];
            let gc = &gw[cell * m..(cell + 1) * m];
            let dotp: f64 = wd.iter().zip(gc).map(|(a, b)| a * b).sum();
            for b in 0..m {
                dzw[b * n + cell] = wd[b] * (gc[b] - dotp);
            }
        }

        g[l.c] = dzy.iter().sum();
        let mut da2 = vec![0.0; hid * n];
        for q in 0..hid {
            let a2q = &c.a2[q * n..(q + 1) * n];
            g[l.v + q] = dzy.iter().zip(a2q).map(|(a, b)| a * b).sum();
            let vq = p[l.v + q];
            let dst = &mut da2[q * n..(q + 1) * n];
            for (d, z) in dst.iter_mut().zip(&dzy) {
                *d += vq * z;
            }
        }
        for b in 0..m {
            let plane = &dzw[b * n..(b + 1) * n];
            g[l.d + b] = plane.iter().sum();
            for q in 0..hid {
                let a2q = &c.a2[q * n..(q + 1) * n];
                g[l.u + b * hid + q] = plane.iter().zip(a2q).map(|(a, b)| a * b).sum();
                let u = p[l.u + b * hid + q];
                let dst = &mut da2[q * n..(q + 1) * n];
                for (d, z) in dst.iter_mut().zip(plane) {
                    *d += u * z;
                }
            }
        }

        let dz2: Vec<f64> = da2.iter().zip(&c.a2).map(|(&d, &a)| d * (1.0 - a * a)).collect();
        for o in 0..hid {
            g[l.b2 + o] = dz2[o * n..(o + 1) * n].iter().sum();
        }
        let mut da1 = vec![0.0; hid * n];
        {
            let (gw2, _) = g[l.w2..].split_at_mut(l.b2 - l.w2);
            conv_backward(&c.a1, hid, &p[l.w2..l.b2], &dz2, hid, k, w, h, gw2, Some(&mut da1));
        }
        let dz1: Vec<f64> = da1.iter().zip(&c.a1).map(|(&d, &a)| d * (1.0 - a * a)).collect();
        for o in 0..hid {
            g[l.b1 + o] = dz1[o * n..(o + 1) * n].iter().sum();
        }
        {
            let (gw1, _) = g[l.w1..].split_at_mut(l.b1 - l.w1);
            conv_backward(&c.x, a.in_channels, &p[l.w1..l.b1], &dz1, hid, k, w, h, gw1, None);
        }
        g
    }

    /// Loss parts and the exact parameter gradient of `L_SLP + lambda * L_DP`
    /// on one sample. A sample without direction targets contributes no DP term.
    pub fn loss_and_grad(&self, sample: &TrainSample, alpha: Alpha, lambda: f64) -> Result<(LossParts, Vec<f64>)> {
        let c = self.forward_cache(&sample.input)?;
        let (y, d) = self.outputs(&c, sample.input.cell_size())?;
        let slp = slp_loss_soft(&sample.labels, &sample.region, &y, alpha)?;
        let (dp, mut gw) = match dp_loss_grad(&sample.dir_target, &d) {
            Ok(v) => v,
            Err(DslpError::NoDirectionalSupervision) => (0.0, vec![0.0; c.wd.len()]),
            Err(e) => return Err(e),
        };
        gw.iter_mut().for_each(|v| *v *= lambda);
        let grad = self.backward(&c, slp.grad.values(), &gw);
        Ok((
            LossParts {
                slp: slp.loss,
                dp,
                total: slp.loss + lambda * dp,
                alpha: slp.alpha,
            },
            grad,
        ))
    }

    /// Scalar loss only (used by finite-difference checks).
    pub fn loss(&self, sample: &TrainSample, alpha: Alpha, lambda: f64) -> Result<f64> {
        let (y, d) = self.forward(&sample.input)?;
        let slp = slp_loss_soft(&sample.labels, &sample.region, &y, alpha)?.loss;
        let dp = match dp_loss_grad(&sample.dir_target, &d) {
            Ok(v) => v.0,
            Err(DslpError::NoDirectionalSupervision) => 0.0,
            Err(e) => return Err(e),
        };
        Ok(slp + lambda * dp)
    }

    /// `DSLP`, `u32` version, `u32` C, H, k, M, `u32` parameter count, `f32` parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 4 * self.params.len());
        out.extend_from_slice(MODEL_MAGIC);
        for v in [
            MODEL_VERSION,
            self.arch.in_channels as u32,
            self.arch.hidden as u32,
            self.arch.kernel as u32,
            self.arch.bins as u32,
            self.params.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &p in &self.params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 28 || &bytes[..4] != MODEL_MAGIC {
            return Err(DslpError::Format("not a DSLP model file".into()));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().expect("4 bytes")) as usize;
        if word(0) != MODEL_VERSION as usize {
            return Err(DslpError::Format(format!("unsupported model version {}", word(0))));
        }
        let arch = ArchSpec::new(word(1), word(2), word(3), word(4))?;
        let count = word(5);
        if count != arch.param_count() || bytes.len() != 28 + 4 * count {
            return Err(DslpError::Format("parameter block does not match the architecture".into()));
        }
        let params = bytes[28..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Self::from_params(arch, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub slp: f64,
    pub dp: f64,
    pub total: f64,
    pub alpha: f64,
}

/// One supervised training world.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    /// Predictor input (after completion/augmentation).
    pub input: LayeredWorld,
    /// Soft or hard lane labels in `[0, 1]`.
    pub labels: GridField,
    /// Supervised cells.
    pub region: GridField,
    /// Direction targets (defined on observed cells).
    pub dir_target: DirField,
}

impl TrainSample {
    pub fn alpha_ib(&self) -> Result<f64> {
        alpha_ib_soft(&self.labels, &self.region)
    }
}

/// Held-out world scored against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutSample {
    pub input: LayeredWorld,
    pub lane_raster: GridField,
    pub road: GridField,
    pub dir_true: DirField,
}

/// How the balance weight is chosen during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "kebab-case")]
pub enum AlphaMode {
    /// Per-sample information-balance ratio.
    Auto,
    Constant(f64),
    /// Mean ratio over the training set, held fixed.
    DatasetMean,
}

impl std::str::FromStr for AlphaMode {
    type Err = DslpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(AlphaMode::Auto),
            "mean" | "dataset-mean" => Ok(AlphaMode::DatasetMean),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| DslpError::InvalidArgument(format!("alpha `{other}`: expected auto, mean or a number")))?;
                match Alpha::constant(v)? {
                    Alpha::Constant(c) => Ok(AlphaMode::Constant(c)),
                    Alpha::Auto => unreachable!(),
                }
            }
        }
    }
}

impl AlphaMode {
    pub fn name(&self) -> String {
        match self {
            AlphaMode::Auto => "auto".into(),
            AlphaMode::Constant(c) => format!("{c}"),
            AlphaMode::DatasetMean => "mean".into(),
        }
    }
}

/// Learning-rate schedule over the training steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate to zero at the last step.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, step: usize, steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => 0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / steps.max(1) as f64).cos()),
        }
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = DslpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(DslpError::InvalidArgument(format!("schedule `{other}`: expected constant or cosine"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub alpha: AlphaMode,
    pub seed: u64,
    pub arch: ArchSpec,
    /// Held-out evaluation period in steps (0 = only at the end).
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn new(arch: ArchSpec) -> Self {
        Self {
            learning_rate: 0.05,
            schedule: LrSchedule::Constant,
            momentum: 0.9,
            steps: 300,
            batch_size: 4,
            lambda: 1.0,
            alpha: AlphaMode::Auto,
            seed: 0,
            arch,
            eval_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.lambda >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(DslpError::Config(format!(
                "learning rate {} must be > 0, lambda {} >= 0, momentum {} in [0, 1)",
                self.learning_rate, self.lambda, self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(DslpError::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean held-out NLLs per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldOutMetrics {
    pub nll_slp: f64,
    pub nll_dp: f64,
}

impl HeldOutMetrics {
    pub fn combined(&self) -> f64 {
        self.nll_slp + self.nll_dp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub loss: f64,
    pub heldout: Option<HeldOutMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub trace: Vec<TraceEntry>,
    /// Constant alpha used when the mode is not auto.
    pub alpha_used: Option<f64>,
    pub final_heldout: Option<HeldOutMetrics>,
}

/// Summed SLP NLL over road cells and DP NLL over lane cells, averaged over samples.
pub fn heldout_metrics(pred: &Predictor, heldout: &[HeldOutSample], jobs: usize) -> Result<HeldOutMetrics> {
    if heldout.is_empty() {
        return Err(DslpError::EmptyDataset);
    }
    let per = run_indexed(heldout.len(), jobs, |k| {
        let s = &heldout[k];
        let (y, d) = pred.forward(&s.input)?;
        Ok((nll_slp(&s.lane_raster, &y, &s.road)?, nll_dp(&s.dir_true, &d, &s.lane_raster)?))
    })?;
    let n = heldout.len() as f64;
    Ok(HeldOutMetrics {
        nll_slp: per.iter().map(|p| p.0).sum::<f64>() / n,
        nll_dp: per.iter().map(|p| p.1).sum::<f64>() / n,
    })
}

/// Evaluates `f(0..n)` on `jobs` workers; results come back in index order.
pub fn run_indexed<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if jobs <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| DslpError::Config(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

/// Momentum gradient descent over shuffled mini-batches. Per-sample
/// gradients are summed in batch order, so any worker count reproduces the
/// single-worker parameters bit for bit.
pub fn train(
    train_set: &[TrainSample],
    heldout: &[HeldOutSample],
    config: &TrainConfig,
    jobs: usize,
) -> Result<(Predictor, TrainOutcome)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(DslpError::EmptyDataset);
    }
    for s in train_set {
        if s.input.channel_count() != config.arch.in_channels {
            return Err(DslpError::ChannelMismatch {
                expected: config.arch.in_channels,
                got: s.input.channel_count(),
            });
        }
    }
    let (alpha, alpha_used) = match config.alpha {
        AlphaMode::Auto => (Alpha::Auto, None),
        AlphaMode::Constant(c) => (Alpha::constant(c)?, Some(c)),
        AlphaMode::DatasetMean => {
            let mut ratios = train_set.iter().map(|s| s.alpha_ib()).collect::<Result<Vec<_>>>()?;
            ratios.sort_by(f64::total_cmp);
            let m = ratios.iter().sum::<f64>() / ratios.len() as f64;
            (Alpha::Constant(m), Some(m))
        }
    };

    let mut pred = Predictor::init(config.arch, config.seed);
    let mut velocity = vec![0.0; pred.params.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0F_BA7C);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();
    let mut trace = Vec::new();
    let pool = if jobs > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| DslpError::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let results: Vec<(LossParts, Vec<f64>)> = {
            let per = |k: usize| pred.loss_and_grad(&train_set[batch[k]], alpha, config.lambda);
            match &pool {
                Some(p) => p.install(|| (0..batch.len()).into_par_iter().map(per).collect::<Result<Vec<_>>>())?,
                None => (0..batch.len()).map(per).collect::<Result<Vec<_>>>()?,
            }
        };
        let inv = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; pred.params.len()];
        let mut loss = 0.0;
        for (parts, g) in &results {
            loss += parts.total;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        loss *= inv;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(DslpError::Diverged {
                step,
                detail: format!("loss {loss}"),
            });
        }
        let lr = config.schedule.rate(config.learning_rate, step, config.steps);
        for ((p, v), g) in pred.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
            *v = config.momentum * *v - lr * g * inv;
            *p += *v;
        }
        let last = step + 1 == config.steps;
        let eval = !heldout.is_empty() && (last || (config.eval_every > 0 && (step + 1) % config.eval_every == 0));
        let heldout_m = if eval {
            Some(heldout_metrics(&pred, heldout, jobs)?)
        } else {
            None
        };
        trace.push(TraceEntry {
            step: step + 1,
            loss,
            heldout: heldout_m,
        });
    }
    let final_heldout = trace.last().and_then(|t| t.heldout);
    Ok((
        pred,
        TrainOutcome {
            trace,
            alpha_used,
            final_heldout,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(w: usize, h: usize, seed: u64, channels: usize) -> LayeredWorld {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chans = (0..channels)
            .map(|c| {
                let f = GridField::from_fn(w, h, 1.0, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z
                })
                .unwrap();
                (format!("c{c}"), f)
            })
            .collect();
        LayeredWorld::new(chans, GridField::filled(w, h, 1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn zero_parameters_give_half_and_uniform() {
        let p = Predictor::zeros(ArchSpec::new(3, 4, 3, 16).unwrap());
        let (y, d) = p.forward(&world(8, 8, 0, 3)).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.5));
        for c in 0..64 {
            assert!(d.dist_at(c).unwrap().iter().all(|&v| (v - 1.0 / 16.0).abs() < 1e-15));
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let p = Predictor::zeros(ArchSpec::new(2, 4, 3, 16).unwrap());
        assert!(matches!(
            p.forward(&world(8, 8, 0, 3)),
            Err(DslpError::ChannelMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn outputs_are_distributions() {
        let p = Predictor::init(ArchSpec::new(3, 6, 3, 16).unwrap(), 4);
        let (y, d) = p.forward(&world(12, 9, 1, 3)).unwrap();
        assert!(y.values().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(d.max_normalization_error() < 1e-6);
    }

    #[test]
    fn model_bytes_round_trip() {
        let p = Predictor::init(ArchSpec::new(3, 4, 3, 8).unwrap(), 2);
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"DSLP");
        let q = Predictor::from_bytes(&bytes).unwrap();
        assert_eq!(q.to_bytes(), bytes);
        assert!(Predictor::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn alpha_mode_parsing() {
        assert_eq!("auto".parse::<AlphaMode>().unwrap(), AlphaMode::Auto);
        assert_eq!("mean".parse::<AlphaMode>().unwrap(), AlphaMode::DatasetMean);
        assert_eq!("0.1".parse::<AlphaMode>().unwrap(), AlphaMode::Constant(0.1));
        assert!("1.5".parse::<AlphaMode>().is_err());
        assert!("often".parse::<AlphaMode>().is_err());
    }
}
