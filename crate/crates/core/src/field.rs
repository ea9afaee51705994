//! Grid containers shared by every other module.
//!
//! Coordinates are continuous cell coordinates: cell `(i, j)` covers the
//! half-open square `[i, i+1) x [j, j+1)`, with the origin at the field
//! corner. Values are stored row-major with `j` outer and `i` inner.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{DslpError, Result};

/// Smallest accepted grid side, in cells.
pub const MIN_SIDE: usize = 8;

/// A point in continuous cell coordinates `[x, y]`, `x` along `i`, `y` along `j`.
pub type Point = [f64; 2];

/// An ordered list of points in cell coordinates.
pub type Polyline = Vec<Point>;

/// Single-channel `I x J` scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    width: usize,
    height: usize,
    cell_size: f64,
    values: Vec<f64>,
}

impl GridField {
    pub fn filled(width: usize, height: usize, cell_size: f64, value: f64) -> Result<Self> {
        check_dims(width, height, cell_size)?;
        Ok(Self {
            width,
            height,
            cell_size,
            values: vec![value; width * height],
        })
    }

    pub fn zeros(width: usize, height: usize, cell_size: f64) -> Result<Self> {
        Self::filled(width, height, cell_size, 0.0)
    }

    pub fn from_values(width: usize, height: usize, cell_size: f64, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height, cell_size)?;
        if values.len() != width * height {
            return Err(DslpError::DimensionMismatch(format!(
                "{} values for a {}x{} field",
                values.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            cell_size,
            values,
        })
    }

    /// Builds a field by evaluating `f(i, j)` on every cell.
    pub fn from_fn(
        width: usize,
        height: usize,
        cell_size: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(width, height, cell_size)?;
        let mut values = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                values.push(f(i, j));
            }
        }
        Ok(Self {
            width,
            height,
            cell_size,
            values,
        })
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

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    /// Value of the cell containing the continuous point, or `None` off-grid.
    pub fn sample_cell(&self, p: Point) -> Option<f64> {
        let (i, j) = cell_of(p)?;
        (i < self.width && j < self.height).then(|| self.get(i, j))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            cell_size: self.cell_size,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_dims(other)?;
        Ok(Self {
            width: self.width,
            height: self.height,
            cell_size: self.cell_size,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Sum in row-major order.
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Number of cells with value > 0.5.
    pub fn count_set(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.5).count()
    }

    pub fn is_probability(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn same_dims(&self, other: &GridField) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_same_dims(&self, other: &GridField) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(DslpError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Binary mask of cells with value > `threshold`.
    pub fn threshold(&self, threshold: f64) -> Self {
        self.map(|v| if v > threshold { 1.0 } else { 0.0 })
    }
}

fn check_dims(width: usize, height: usize, cell_size: f64) -> Result<()> {
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(DslpError::InvalidField(format!(
            "grid {width}x{height} is smaller than {MIN_SIDE}x{MIN_SIDE}"
        )));
    }
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(DslpError::InvalidField(format!("cell size {cell_size} must be positive")));
    }
    Ok(())
}

/// Debug-build check that a probability-valued field stayed inside `[0, 1]`.
#[inline]
pub fn debug_assert_probability(field: &GridField, what: &str) {
    debug_assert!(field.is_probability(), "{what} left [0, 1]");
}

/// Cell containing a continuous point, if both coordinates are non-negative.
pub fn cell_of(p: Point) -> Option<(usize, usize)> {
    if !(p[0] >= 0.0 && p[1] >= 0.0) || !p[0].is_finite() || !p[1].is_finite() {
        return None;
    }
    Some((p[0].floor() as usize, p[1].floor() as usize))
}

/// Named stack of channels plus the mask of cells with known context.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredWorld {
    channels: Vec<(String, GridField)>,
    observation_mask: GridField,
}

impl LayeredWorld {
    pub fn new(channels: Vec<(String, GridField)>, observation_mask: GridField) -> Result<Self> {
        for (name, ch) in &channels {
            if !ch.same_dims(&observation_mask) || ch.cell_size() != observation_mask.cell_size() {
                return Err(DslpError::DimensionMismatch(format!(
                    "channel `{name}` does not match the observation mask"
                )));
            }
        }
        Ok(Self {
            channels,
            observation_mask,
        })
    }

    pub fn channels(&self) -> &[(String, GridField)] {
        &self.channels
    }

    pub fn channel(&self, name: &str) -> Option<&GridField> {
        self.channels.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn observation_mask(&self) -> &GridField {
        &self.observation_mask
    }

    pub fn dims(&self) -> (usize, usize) {
        self.observation_mask.dims()
    }

    pub fn cell_size(&self) -> f64 {
        self.observation_mask.cell_size()
    }

    /// Channels packed plane after plane (`c`, then `j`, then `i`).
    pub fn stacked(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.channels.len() * self.observation_mask.len());
        for (_, ch) in &self.channels {
            out.extend_from_slice(ch.values());
        }
        out
    }
}

/// Observed traversals burned into the grid: positives, negatives and the raw polylines.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub pos_mask: GridField,
    pub neg_mask: GridField,
    pub trajectories: Vec<Polyline>,
}

impl ObservationSet {
    pub fn pos_count(&self) -> usize {
        self.pos_mask.count_set()
    }

    pub fn neg_count(&self) -> usize {
        self.neg_mask.count_set()
    }

    /// `pos_mask + neg_mask`, the supervised region.
    pub fn region(&self) -> GridField {
        self.pos_mask
            .zip_map(&self.neg_mask, |a, b| a + b)
            .expect("observation masks share dimensions")
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pos_mask.dims()
    }
}

/// Every cell whose half-open square is touched by the polyline, sorted by
/// row-major index. Off-grid cells are dropped.
pub fn rasterize_trajectory(polyline: &[Point], width: usize, height: usize) -> Result<Vec<(usize, usize)>> {
    if polyline.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(DslpError::DegenerateTrajectory);
    }
    let mut pts: Vec<Point> = Vec::with_capacity(polyline.len());
    for &p in polyline {
        if pts.last() != Some(&p) {
            pts.push(p);
        }
    }
    if pts.len() < 2 {
        return Err(DslpError::DegenerateTrajectory);
    }
    let mut cells = BTreeSet::new();
    for seg in pts.windows(2) {
        for_each_segment_cell(seg[0], seg[1], width, height, |i, j| {
            cells.insert((j, i));
        });
    }
    Ok(cells.into_iter().map(|(j, i)| (i, j)).collect())
}

const SNAP: f64 = 1e-9;

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

/// Splits the segment at every integer crossing; each breakpoint and each
/// open piece between breakpoints lies in exactly one cell.
/// Cells may be reported more than once.
pub(crate) fn for_each_segment_cell(a: Point, b: Point, width: usize, height: usize, mut f: impl FnMut(usize, usize)) {
    let mut ts = vec![0.0, 1.0];
    for axis in 0..2 {
        let (p, q) = (a[axis], b[axis]);
        let d = q - p;
        if d == 0.0 {
            continue;
        }
        let lo = p.min(q).floor() as i64 + 1;
        let hi = p.max(q).ceil() as i64 - 1;
        for k in lo..=hi {
            let t = (k as f64 - p) / d;
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|x, y| (*x - *y).abs() < 1e-12);

    let at = |t: f64| -> Point { [snap(a[0] + t * (b[0] - a[0])), snap(a[1] + t * (b[1] - a[1]))] };
    let mut push = |p: Point| {
        if let Some((i, j)) = cell_of(p) {
            if i < width && j < height {
                f(i, j);
            }
        }
    };
    for w in ts.windows(2) {
        push(at(w[0]));
        let mid = 0.5 * (w[0] + w[1]);
        let m = [a[0] + mid * (b[0] - a[0]), a[1] + mid * (b[1] - a[1])];
        push(m);
    }
    push(at(*ts.last().expect("non-empty breakpoints")));
}

/// Positives are trajectory cells inside the region; negatives are the rest of the region.
/// Degenerate trajectories contribute no cells.
pub fn build_observation_set(trajectories: Vec<Polyline>, region: &GridField) -> ObservationSet {
    let (w, h) = region.dims();
    let mut pos = region.map(|_| 0.0);
    for traj in &trajectories {
        if let Ok(cells) = rasterize_trajectory(traj, w, h) {
            for (i, j) in cells {
                if region.get(i, j) > 0.5 {
                    let k = pos.index(i, j);
                    pos.values_mut()[k] = 1.0;
                }
            }
        }
    }
    let neg = region
        .zip_map(&pos, |r, p| if r > 0.5 && p == 0.0 { 1.0 } else { 0.0 })
        .expect("same dims");
    ObservationSet {
        pos_mask: pos,
        neg_mask: neg,
        trajectories,
    }
}

/// Serializable polyline bundle used by sidecar files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrajectoryRecord {
    pub points: Polyline,
}
