//! Per-cell categorical direction distributions.
//!
//! Bin `m` of an `M`-bin distribution covers `[2*pi*m/M, 2*pi*(m+1)/M)` and
//! is represented by its center `2*pi*(m + 0.5)/M`. Angles are measured in
//! the `(i, j)` frame: `theta = atan2(dj, di)`.

use std::f64::consts::{FRAC_PI_4, TAU};

use crate::dgf::DgfFile;
use crate::error::{DslpError, Result};
use crate::field::{for_each_segment_cell, GridField, Polyline};

pub const DEFAULT_BINS: usize = 16;
pub const DEFAULT_KAPPA: f64 = 4.0;
/// Lower clamp applied to predicted probabilities before any logarithm.
pub const PROB_FLOOR: f64 = 1e-7;
/// Minimum mode mass for a secondary ground-truth mode to count in accuracy.
pub const ACCURACY_MODE_MASS: f64 = 0.2;

/// `M x I x J` direction distributions with an explicit per-cell defined flag.
#[derive(Debug, Clone, PartialEq)]
pub struct DirField {
    bins: usize,
    width: usize,
    height: usize,
    cell_size: f64,
    // cell-major: cell * bins + m
    probs: Vec<f64>,
    defined: Vec<bool>,
}

impl DirField {
    /// Field with every cell undefined.
    pub fn undefined(bins: usize, width: usize, height: usize, cell_size: f64) -> Result<Self> {
        check_bins(bins)?;
        GridField::zeros(width, height, cell_size)?;
        Ok(Self {
            bins,
            width,
            height,
            cell_size,
            probs: vec![0.0; bins * width * height],
            defined: vec![false; width * height],
        })
    }

    /// Field with every cell defined and uniform.
    pub fn uniform(bins: usize, width: usize, height: usize, cell_size: f64) -> Result<Self> {
        let mut f = Self::undefined(bins, width, height, cell_size)?;
        f.probs.fill(1.0 / bins as f64);
        f.defined.fill(true);
        Ok(f)
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn is_defined(&self, i: usize, j: usize) -> bool {
        self.defined[j * self.width + i]
    }

    pub fn defined_at(&self, cell: usize) -> bool {
        self.defined[cell]
    }

    pub fn defined_count(&self) -> usize {
        self.defined.iter().filter(|&&d| d).count()
    }

    /// Distribution at a row-major cell index, `None` when undefined.
    pub fn dist_at(&self, cell: usize) -> Option<&[f64]> {
        self.defined[cell].then(|| &self.probs[cell * self.bins..(cell + 1) * self.bins])
    }

    pub fn dist(&self, i: usize, j: usize) -> Option<&[f64]> {
        self.dist_at(j * self.width + i)
    }

    /// Stores a distribution (or clears the cell with `None`).
    pub fn set(&mut self, i: usize, j: usize, dist: Option<&[f64]>) -> Result<()> {
        let cell = j * self.width + i;
        let slot = &mut self.probs[cell * self.bins..(cell + 1) * self.bins];
        match dist {
            Some(d) => {
                if d.len() != self.bins {
                    return Err(DslpError::DimensionMismatch(format!(
                        "{} bins into a {}-bin field",
                        d.len(),
                        self.bins
                    )));
                }
                slot.copy_from_slice(d);
                self.defined[cell] = true;
            }
            None => {
                slot.fill(0.0);
                self.defined[cell] = false;
            }
        }
        Ok(())
    }

    pub(crate) fn raw_mut(&mut self) -> (&mut [f64], &mut [bool]) {
        (&mut self.probs, &mut self.defined)
    }

    /// Mask of defined cells.
    pub fn defined_mask(&self) -> GridField {
        GridField::from_values(
            self.width,
            self.height,
            self.cell_size,
            self.defined.iter().map(|&d| if d { 1.0 } else { 0.0 }).collect(),
        )
        .expect("dims validated at construction")
    }

    /// Largest deviation of any defined cell's sum from 1.
    pub fn max_normalization_error(&self) -> f64 {
        (0..self.cells())
            .filter_map(|c| self.dist_at(c))
            .map(|d| (d.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &DirField) -> bool {
        self.bins == other.bins && self.width == other.width && self.height == other.height
    }

    fn ensure_same_shape(&self, other: &DirField) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(DslpError::DimensionMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.bins, self.width, self.height, other.bins, other.width, other.height
            )))
        }
    }

    /// Appends `{prefix}0..{prefix}{M-1}` and `{prefix}defined` channels.
    pub fn push_to_dgf(&self, file: &mut DgfFile, prefix: &str) -> Result<()> {
        for m in 0..self.bins {
            let plane = GridField::from_values(
                self.width,
                self.height,
                self.cell_size,
                (0..self.cells()).map(|c| self.probs[c * self.bins + m]).collect(),
            )?;
            file.push_field(format!("{prefix}{m}"), &plane)?;
        }
        file.push_field(format!("{prefix}defined"), &self.defined_mask())
    }

    /// Reads a field written by [`DirField::push_to_dgf`] with the same prefix.
    pub fn from_dgf(file: &DgfFile, prefix: &str) -> Result<Self> {
        let mut bins = 0;
        while file.has(&format!("{prefix}{bins}")) {
            bins += 1;
        }
        let defined = file.field(&format!("{prefix}defined"))?;
        let (w, h) = defined.dims();
        let mut out = Self::undefined(bins, w, h, defined.cell_size())?;
        for m in 0..bins {
            let plane = file.field(&format!("{prefix}{m}"))?;
            for (c, v) in plane.values().iter().enumerate() {
                out.probs[c * bins + m] = *v;
            }
        }
        for (c, v) in defined.values().iter().enumerate() {
            out.defined[c] = *v > 0.5;
            if !out.defined[c] {
                out.probs[c * bins..(c + 1) * bins].fill(0.0);
            }
        }
        Ok(out)
    }
}

fn check_bins(bins: usize) -> Result<()> {
    if bins < 4 {
        Err(DslpError::InsufficientResolution(bins))
    } else {
        Ok(())
    }
}

/// Mean direction and concentration of a von Mises distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VonMisesSpec {
    mu: f64,
    kappa: f64,
}

impl VonMisesSpec {
    pub fn new(mu: f64, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) || !mu.is_finite() {
            return Err(DslpError::InvalidArgument(format!(
                "von Mises needs finite mu and kappa >= 0, got mu={mu}, kappa={kappa}"
            )));
        }
        Ok(Self {
            mu: normalize_angle(mu),
            kappa,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

/// Wraps an angle into `[0, 2*pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Absolute angular difference in `[0, pi]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = normalize_angle(a - b);
    d.min(TAU - d)
}

pub fn bin_center(m: usize, bins: usize) -> f64 {
    TAU * (m as f64 + 0.5) / bins as f64
}

/// Bin containing an angle.
pub fn bin_of(theta: f64, bins: usize) -> usize {
    ((normalize_angle(theta) / TAU * bins as f64).floor() as usize).min(bins - 1)
}

/// Discrete von Mises: `exp(kappa * cos(theta_m - mu))` at bin centers, normalized.
pub fn encode_von_mises(spec: VonMisesSpec, bins: usize) -> Result<Vec<f64>> {
    check_bins(bins)?;
    let mut out: Vec<f64> = (0..bins)
        .map(|m| (spec.kappa * ((bin_center(m, bins) - spec.mu).cos() - 1.0)).exp())
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    Ok(out)
}

/// Elementwise sum renormalized to 1; `None` (undefined) for an empty input.
pub fn superimpose<D: AsRef<[f64]>>(dists: &[D]) -> Option<Vec<f64>> {
    let first = dists.first()?.as_ref();
    let mut acc = vec![0.0; first.len()];
    for d in dists {
        for (a, v) in acc.iter_mut().zip(d.as_ref()) {
            *a += v;
        }
    }
    normalize(acc)
}

/// Weighted superposition; weights must be non-negative with a positive sum.
pub fn superimpose_weighted<D: AsRef<[f64]>>(dists: &[(f64, D)]) -> Option<Vec<f64>> {
    let first = dists.first()?.1.as_ref();
    let mut acc = vec![0.0; first.len()];
    for (w, d) in dists {
        for (a, v) in acc.iter_mut().zip(d.as_ref()) {
            *a += w * v;
        }
    }
    normalize(acc)
}

fn normalize(mut acc: Vec<f64>) -> Option<Vec<f64>> {
    let z: f64 = acc.iter().sum();
    if !(z > 0.0) {
        return None;
    }
    acc.iter_mut().for_each(|v| *v /= z);
    Some(acc)
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0)
}

/// `KL(w || w_hat)` with the prediction clamped.
pub fn kl_divergence(w: &[f64], w_hat: &[f64]) -> f64 {
    w.iter()
        .zip(w_hat)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * (p / clamp_prob(q)).ln())
        .sum()
}

/// Cross-entropy `-sum w log w_hat` with the prediction clamped.
pub fn cross_entropy(w: &[f64], w_hat: &[f64]) -> f64 {
    -w.iter()
        .zip(w_hat)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * clamp_prob(q).ln())
        .sum::<f64>()
}

pub fn entropy(w: &[f64]) -> f64 {
    -w.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

fn predicted<'a>(w_hat: &'a DirField, cell: usize) -> Result<&'a [f64]> {
    w_hat
        .dist_at(cell)
        .ok_or_else(|| DslpError::InvalidField(format!("prediction undefined at supervised cell {cell}")))
}

/// Mean KL divergence over the cells where `w` is defined.
pub fn dp_loss(w: &DirField, w_hat: &DirField) -> Result<f64> {
    Ok(dp_loss_grad(w, w_hat)?.0)
}

/// [`dp_loss`] together with its derivative with respect to every predicted
/// probability (cell-major, zero on undefined cells and clamped entries).
pub fn dp_loss_grad(w: &DirField, w_hat: &DirField) -> Result<(f64, Vec<f64>)> {
    w.ensure_same_shape(w_hat)?;
    let n = w.defined_count();
    if n == 0 {
        return Err(DslpError::NoDirectionalSupervision);
    }
    let inv = 1.0 / n as f64;
    let mut grad = vec![0.0; w.probs.len()];
    let mut total = 0.0;
    for cell in 0..w.cells() {
        let Some(target) = w.dist_at(cell) else { continue };
        let pred = predicted(w_hat, cell)?;
        total += kl_divergence(target, pred);
        let g = &mut grad[cell * w.bins..(cell + 1) * w.bins];
        for ((g, &p), &q) in g.iter_mut().zip(target).zip(pred) {
            if p > 0.0 && q > PROB_FLOOR {
                *g = -p / q * inv;
            }
        }
    }
    Ok((total * inv, grad))
}

/// Summed categorical NLL over `mask` cells where `w` is defined.
pub fn nll_dp(w: &DirField, w_hat: &DirField, mask: &GridField) -> Result<f64> {
    w.ensure_same_shape(w_hat)?;
    check_mask(w, mask)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (cell, &m) in mask.values().iter().enumerate() {
        if m <= 0.5 {
            continue;
        }
        let Some(target) = w.dist_at(cell) else { continue };
        total += cross_entropy(target, predicted(w_hat, cell)?);
        n += 1;
    }
    if n == 0 {
        return Err(DslpError::EmptyMask);
    }
    Ok(total)
}

fn check_mask(w: &DirField, mask: &GridField) -> Result<()> {
    if mask.dims() != w.dims() {
        return Err(DslpError::DimensionMismatch(format!(
            "mask {}x{} vs field {}x{}",
            mask.width(),
            mask.height(),
            w.width,
            w.height
        )));
    }
    Ok(())
}

pub fn argmax(d: &[f64]) -> usize {
    let mut best = 0;
    for (m, &v) in d.iter().enumerate() {
        if v > d[best] {
            best = m;
        }
    }
    best
}

/// Half-width, in bins, of the +-45 degree window used for mode mass.
fn mode_half_window(bins: usize) -> usize {
    bins / 8
}

/// Circular local maxima whose mass within +-45 degrees exceeds `min_mass`,
/// as `(bin, mass)` in bin order. Plateaus report their first bin.
pub fn modes(d: &[f64], min_mass: f64) -> Vec<(usize, f64)> {
    let n = d.len();
    let hw = mode_half_window(n);
    let mut out = Vec::new();
    for m in 0..n {
        let prev = d[(m + n - 1) % n];
        let next = d[(m + 1) % n];
        if d[m] > prev && d[m] >= next {
            let mass: f64 = (0..=2 * hw).map(|k| d[(m + n + k - hw) % n]).sum();
            if mass > min_mass {
                out.push((m, mass));
            }
        }
    }
    out
}

/// `1 - |sum_m w_m e^{i theta_m}|`.
pub fn circular_variance(d: &[f64]) -> f64 {
    let n = d.len();
    let (mut c, mut s) = (0.0, 0.0);
    for (m, &p) in d.iter().enumerate() {
        let t = bin_center(m, n);
        c += p * t.cos();
        s += p * t.sin();
    }
    1.0 - (c * c + s * s).sqrt()
}

/// Whether the predicted argmax lies within 45 degrees of the ground-truth
/// argmax or of any ground-truth mode heavier than [`ACCURACY_MODE_MASS`].
pub fn direction_correct(truth: &[f64], pred: &[f64]) -> bool {
    let bins = truth.len();
    let p = bin_center(argmax(pred), bins);
    let tol = FRAC_PI_4 + 1e-12;
    if angular_distance(p, bin_center(argmax(truth), bins)) <= tol {
        return true;
    }
    modes(truth, ACCURACY_MODE_MASS)
        .iter()
        .any(|&(m, _)| angular_distance(p, bin_center(m, bins)) <= tol)
}

/// Fraction of `mask` cells (with defined truth) whose prediction is within 45 degrees.
pub fn directional_accuracy(w_true: &DirField, w_hat: &DirField, mask: &GridField) -> Result<f64> {
    w_true.ensure_same_shape(w_hat)?;
    check_mask(w_true, mask)?;
    let mut hits = 0usize;
    let mut n = 0usize;
    for (cell, &m) in mask.values().iter().enumerate() {
        if m <= 0.5 {
            continue;
        }
        let Some(truth) = w_true.dist_at(cell) else { continue };
        n += 1;
        if direction_correct(truth, predicted(w_hat, cell)?) {
            hits += 1;
        }
    }
    if n == 0 {
        return Err(DslpError::EmptyMask);
    }
    Ok(hits as f64 / n as f64)
}

/// Direction targets from observed trajectories: every cell a trajectory
/// touches receives one von Mises encoding of the first segment heading
/// through it; passes of distinct trajectories are superimposed with equal weight.
pub fn encode_trajectories(
    trajectories: &[Polyline],
    width: usize,
    height: usize,
    cell_size: f64,
    bins: usize,
    kappa: f64,
) -> Result<DirField> {
    let mut out = DirField::undefined(bins, width, height, cell_size)?;
    let cells = width * height;
    let mut acc = vec![0.0; cells * bins];
    let mut count = vec![0u32; cells];
    let mut stamp = vec![usize::MAX; cells];
    let mut cache: Option<(f64, Vec<f64>)> = None;
    for (t, traj) in trajectories.iter().enumerate() {
        for seg in traj.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            if a == b {
                continue;
            }
            let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
            let enc = match &cache {
                Some((h, e)) if *h == heading => e.clone(),
                _ => {
                    let e = encode_von_mises(VonMisesSpec::new(heading, kappa)?, bins)?;
                    cache = Some((heading, e.clone()));
                    e
                }
            };
            for_each_segment_cell(a, b, width, height, |i, j| {
                let c = j * width + i;
                if stamp[c] != t {
                    stamp[c] = t;
                    count[c] += 1;
                    for (dst, v) in acc[c * bins..(c + 1) * bins].iter_mut().zip(&enc) {
                        *dst += v;
                    }
                }
            });
        }
    }
    let (probs, defined) = out.raw_mut();
    for c in 0..cells {
        if count[c] > 0 {
            let z: f64 = acc[c * bins..(c + 1) * bins].iter().sum();
            for (dst, v) in probs[c * bins..(c + 1) * bins].iter_mut().zip(&acc[c * bins..(c + 1) * bins]) {
                *dst = v / z;
            }
            defined[c] = true;
        }
    }
    Ok(out)
}
