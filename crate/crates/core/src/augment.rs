//! Geometric augmentation: rigid motion followed by an independent quadratic
//! warp per axis, applied jointly to dense channels and trajectories.
//!
//! Per axis the warp maps a warped coordinate `u` back to the original
//! coordinate `x = a0*u^2 + a1*u + a2`. The coefficients fix both grid edges
//! (`0 -> 0`, `L -> L`) and move the midpoint by `delta`
//! (`L/2 -> L/2 + delta`), which gives
//! `a0 = -4 delta / L^2`, `a1 = 1 + 4 delta / L`, `a2 = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DslpError, Result};
use crate::field::{build_observation_set, GridField, LayeredWorld, ObservationSet, Point, Polyline};

pub const MAX_REJECTIONS: usize = 100;
/// Augmented copies per sample.
pub const DEFAULT_COUNT: usize = 20;

/// Quadratic warp along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisWarp {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub delta: f64,
    pub extent: f64,
}

impl AxisWarp {
    pub fn identity(extent: f64) -> Self {
        Self {
            a0: 0.0,
            a1: 1.0,
            a2: 0.0,
            delta: 0.0,
            extent,
        }
    }

    /// Coefficients from the two fixed edges and the midpoint displacement.
    pub fn from_displacement(delta: f64, extent: f64) -> Self {
        Self {
            a0: -4.0 * delta / (extent * extent),
            a1: 1.0 + 4.0 * delta / extent,
            a2: 0.0,
            delta,
            extent,
        }
    }

    /// Warped coordinate to original coordinate.
    #[inline]
    pub fn to_original(&self, u: f64) -> f64 {
        (self.a0 * u + self.a1) * u + self.a2
    }

    /// Original coordinate to warped coordinate (the monotone root).
    #[inline]
    pub fn to_warped(&self, x: f64) -> f64 {
        let c = x - self.a2;
        let disc = self.a1 * self.a1 + 4.0 * self.a0 * c;
        if disc <= 0.0 {
            // outside the invertible range: continue linearly from the edge slope
            return c / self.a1;
        }
        2.0 * c / (self.a1 + disc.sqrt())
    }

    pub fn derivative(&self, u: f64) -> f64 {
        2.0 * self.a0 * u + self.a1
    }

    /// Derivative positive over `[0, extent]`; linear in `u`, so the edges suffice.
    pub fn is_monotone(&self) -> bool {
        self.derivative(0.0) > 0.0 && self.derivative(self.extent) > 0.0
    }

    /// Residuals of the three boundary conditions.
    pub fn boundary_residuals(&self) -> [f64; 3] {
        let l = self.extent;
        [
            self.to_original(0.0),
            self.to_original(l) - l,
            self.to_original(0.5 * l) - (0.5 * l + self.delta),
        ]
    }
}

/// Full augmentation: rotation about the grid center, translation, then the axis warps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpSpec {
    pub x: AxisWarp,
    pub y: AxisWarp,
    pub rotation: f64,
    pub translation: [f64; 2],
    pub seed: u64,
}

impl WarpSpec {
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            x: AxisWarp::identity(width as f64),
            y: AxisWarp::identity(height as f64),
            rotation: 0.0,
            translation: [0.0, 0.0],
            seed: 0,
        }
    }

    fn center(&self) -> [f64; 2] {
        [0.5 * self.x.extent, 0.5 * self.y.extent]
    }

    /// Original point to warped point.
    pub fn forward(&self, p: Point) -> Point {
        let q = if self.rotation == 0.0 {
            // no re-centering, so the identity spec maps points to themselves bit for bit
            [p[0] + self.translation[0], p[1] + self.translation[1]]
        } else {
            let c = self.center();
            let (s, co) = self.rotation.sin_cos();
            let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
            [
                c[0] + co * dx - s * dy + self.translation[0],
                c[1] + s * dx + co * dy + self.translation[1],
            ]
        };
        [self.x.to_warped(q[0]), self.y.to_warped(q[1])]
    }

    /// Warped point to original point.
    pub fn inverse(&self, p: Point) -> Point {
        let c = self.center();
        let q = [self.x.to_original(p[0]), self.y.to_original(p[1])];
        if self.rotation == 0.0 {
            return [q[0] - self.translation[0], q[1] - self.translation[1]];
        }
        let (s, co) = self.rotation.sin_cos();
        let (dx, dy) = (q[0] - self.translation[0] - c[0], q[1] - self.translation[1] - c[1]);
        [c[0] + co * dx + s * dy, c[1] - s * dx + co * dy]
    }

    pub fn is_monotone(&self) -> bool {
        self.x.is_monotone() && self.y.is_monotone()
    }
}

/// Sampling ranges for [`sample_warp`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpParams {
    /// Midpoint displacement drawn from `Uniform(-d, d)` cells per axis.
    pub max_mid_displacement: f64,
    /// Rotation drawn from `Uniform(0, max_rotation)` radians.
    pub max_rotation: f64,
    /// Translation drawn from `Uniform(-t, t)` cells per axis.
    pub max_translation: f64,
}

impl WarpParams {
    /// `d = I/16`, full rotation, translation within `I/8`.
    pub fn for_grid(width: usize) -> Self {
        Self {
            max_mid_displacement: width as f64 / 16.0,
            max_rotation: std::f64::consts::TAU,
            max_translation: width as f64 / 8.0,
        }
    }

    pub fn none() -> Self {
        Self {
            max_mid_displacement: 0.0,
            max_rotation: 0.0,
            max_translation: 0.0,
        }
    }
}

fn uniform_sym(rng: &mut ChaCha8Rng, d: f64) -> f64 {
    if d > 0.0 {
        rng.random_range(-d..d)
    } else {
        0.0
    }
}

fn sample_axis(rng: &mut ChaCha8Rng, d: f64, extent: f64) -> Result<AxisWarp> {
    for _ in 0..MAX_REJECTIONS {
        let w = AxisWarp::from_displacement(uniform_sym(rng, d), extent);
        if w.is_monotone() {
            return Ok(w);
        }
    }
    Err(DslpError::WarpRejected(MAX_REJECTIONS))
}

/// Draws a monotone warp; deterministic per seed.
pub fn sample_warp(seed: u64, params: &WarpParams, width: usize, height: usize) -> Result<WarpSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = sample_axis(&mut rng, params.max_mid_displacement, width as f64)?;
    let y = sample_axis(&mut rng, params.max_mid_displacement, height as f64)?;
    let rotation = if params.max_rotation > 0.0 {
        rng.random_range(0.0..params.max_rotation)
    } else {
        0.0
    };
    let translation = [
        uniform_sym(&mut rng, params.max_translation),
        uniform_sym(&mut rng, params.max_translation),
    ];
    Ok(WarpSpec {
        x,
        y,
        rotation,
        translation,
        seed,
    })
}

/// Dense inverse map: for every warped cell, the source position in index
/// coordinates (cell `(u, v)` has its center at `(u + 0.5, v + 0.5)`).
#[derive(Debug, Clone, PartialEq)]
pub struct WarpMap {
    pub width: usize,
    pub height: usize,
    pub source: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
}

const MAP_TOL: f64 = 1e-9;

pub fn build_warp_maps(spec: &WarpSpec, width: usize, height: usize) -> WarpMap {
    let mut source = Vec::with_capacity(width * height);
    let mut valid = Vec::with_capacity(width * height);
    let (umax, vmax) = ((width - 1) as f64, (height - 1) as f64);
    for j in 0..height {
        for i in 0..width {
            let p = spec.inverse([i as f64 + 0.5, j as f64 + 0.5]);
            let (u, v) = (p[0] - 0.5, p[1] - 0.5);
            let ok = (-MAP_TOL..=umax + MAP_TOL).contains(&u) && (-MAP_TOL..=vmax + MAP_TOL).contains(&v);
            source.push([u.clamp(0.0, umax), v.clamp(0.0, vmax)]);
            valid.push(ok);
        }
    }
    WarpMap {
        width,
        height,
        source,
        valid,
    }
}

impl WarpMap {
    pub fn bilinear(&self, field: &GridField) -> GridField {
        let (w, h) = field.dims();
        let vals = field.values();
        let out = self
            .source
            .iter()
            .zip(&self.valid)
            .map(|(&[u, v], &ok)| {
                if !ok {
                    return 0.0;
                }
                let u0 = (u.floor() as usize).min(w - 2);
                let v0 = (v.floor() as usize).min(h - 2);
                let (fu, fv) = (u - u0 as f64, v - v0 as f64);
                let k = v0 * w + u0;
                (1.0 - fu) * (1.0 - fv) * vals[k]
                    + fu * (1.0 - fv) * vals[k + 1]
                    + (1.0 - fu) * fv * vals[k + w]
                    + fu * fv * vals[k + w + 1]
            })
            .collect();
        GridField::from_values(self.width, self.height, field.cell_size(), out).expect("map dims")
    }

    pub fn nearest(&self, field: &GridField) -> GridField {
        let out = self
            .source
            .iter()
            .zip(&self.valid)
            .map(|(&[u, v], &ok)| {
                if ok {
                    field.get(u.round() as usize, v.round() as usize)
                } else {
                    0.0
                }
            })
            .collect();
        GridField::from_values(self.width, self.height, field.cell_size(), out).expect("map dims")
    }

    pub fn valid_mask(&self, cell_size: f64) -> GridField {
        GridField::from_values(
            self.width,
            self.height,
            cell_size,
            self.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        )
        .expect("map dims")
    }
}

pub fn warp_polyline(spec: &WarpSpec, line: &[Point]) -> Polyline {
    line.iter().map(|&p| spec.forward(p)).collect()
}

/// Transforms dense channels (bilinear), masks (nearest) and trajectories
/// (forward map, then re-rasterized) with the same warp. Cells whose source
/// falls off-grid lose context and supervision.
pub fn warp_world(world: &LayeredWorld, obs: &ObservationSet, spec: &WarpSpec) -> Result<(LayeredWorld, ObservationSet)> {
    let (w, h) = world.dims();
    if obs.dims() != (w, h) {
        return Err(DslpError::DimensionMismatch("observations do not match the world".into()));
    }
    let map = build_warp_maps(spec, w, h);
    let channels = world
        .channels()
        .iter()
        .map(|(name, ch)| (name.clone(), map.bilinear(ch)))
        .collect();
    let mask = map.nearest(world.observation_mask());
    let warped = LayeredWorld::new(channels, mask)?;
    let region = map.nearest(&obs.region());
    let trajectories = obs.trajectories.iter().map(|t| warp_polyline(spec, t)).collect();
    Ok((warped, build_observation_set(trajectories, &region)))
}

/// Intersection over union of two binary masks (1 for two empty masks).
pub(crate) fn mask_iou(a: &GridField, b: &GridField) -> f64 {
    let (mut inter, mut uni) = (0usize, 0usize);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        let (x, y) = (x > 0.5, y > 0.5);
        inter += (x && y) as usize;
        uni += (x || y) as usize;
    }
    if uni == 0 {
        1.0
    } else {
        inter as f64 / uni as f64
    }
}

/// Agreement between the mask-warped positives and the re-rasterized warped
/// trajectories, over cells valid in both.
pub fn joint_transform_iou(obs: &ObservationSet, warped: &ObservationSet, spec: &WarpSpec) -> f64 {
    let (w, h) = obs.dims();
    let map = build_warp_maps(spec, w, h);
    let valid = map.valid_mask(obs.pos_mask.cell_size());
    let only_valid = |f: &GridField| f.zip_map(&valid, |a, v| a * v).expect("same dims");
    mask_iou(&only_valid(&map.nearest(&obs.pos_mask)), &only_valid(&warped.pos_mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_parameters_give_identity() {
        let spec = sample_warp(3, &WarpParams::none(), 64, 64).unwrap();
        assert_eq!(spec.x, AxisWarp::identity(64.0));
        assert_eq!(spec.y, AxisWarp::identity(64.0));
        assert_eq!(spec.rotation, 0.0);
        assert_eq!(spec.translation, [0.0, 0.0]);
    }

    #[test]
    fn boundary_conditions_hold() {
        let w = AxisWarp::from_displacement(8.0, 256.0);
        for r in w.boundary_residuals() {
            assert!(r.abs() < 1e-9, "{r}");
        }
        assert!(w.is_monotone());
        let folded = AxisWarp::from_displacement(70.0, 256.0);
        assert!(!folded.is_monotone());
    }

    #[test]
    fn impossible_displacement_is_rejected() {
        let p = WarpParams {
            max_mid_displacement: 1e6,
            max_rotation: 0.0,
            max_translation: 0.0,
        };
        assert!(matches!(sample_warp(1, &p, 64, 64), Err(DslpError::WarpRejected(_))));
    }

    #[test]
    fn seeded_sampling_is_bit_identical() {
        let p = WarpParams::for_grid(128);
        let a = sample_warp(42, &p, 128, 128).unwrap();
        let b = sample_warp(42, &p, 128, 128).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert!(a.is_monotone());
        assert_ne!(a, sample_warp(43, &p, 128, 128).unwrap());
    }

    #[test]
    fn identity_map_is_index_map() {
        let map = build_warp_maps(&WarpSpec::identity(16, 12), 16, 12);
        for j in 0..12 {
            for i in 0..16 {
                assert_eq!(map.source[j * 16 + i], [i as f64, j as f64]);
                assert!(map.valid[j * 16 + i]);
            }
        }
    }

    #[test]
    fn quarter_turn_is_transpose_and_flip() {
        let n = 16;
        let mut spec = WarpSpec::identity(n, n);
        spec.rotation = FRAC_PI_2;
        let map = build_warp_maps(&spec, n, n);
        for j in 0..n {
            for i in 0..n {
                let [u, v] = map.source[j * n + i];
                assert!((u - j as f64).abs() < 1e-9 && (v - (n - 1 - i) as f64).abs() < 1e-9);
                assert!(map.valid[j * n + i]);
            }
        }
    }

    #[test]
    fn forward_inverse_round_trip() {
        let p = WarpParams::for_grid(64);
        for seed in 0..20 {
            let spec = sample_warp(seed, &p, 64, 64).unwrap();
            for j in 0..64 {
                for i in 0..64 {
                    let q = [i as f64 + 0.5, j as f64 + 0.5];
                    let back = spec.forward(spec.inverse(q));
                    assert!((back[0] - q[0]).abs() < 0.5 && (back[1] - q[1]).abs() < 0.5);
                }
            }
        }
    }

    #[test]
    fn identity_warp_is_bit_exact() {
        let f = GridField::from_fn(16, 16, 1.0, |i, j| ((i * 7 + j * 13) % 11) as f64 / 10.3).unwrap();
        let mask = GridField::from_fn(16, 16, 1.0, |i, _| (i % 2) as f64).unwrap();
        let world = LayeredWorld::new(vec![("a".into(), f.clone())], mask.clone()).unwrap();
        let region = GridField::filled(16, 16, 1.0, 1.0).unwrap();
        let obs = build_observation_set(vec![vec![[0.5, 3.5], [15.5, 3.5]]], &region);
        let (ww, wo) = warp_world(&world, &obs, &WarpSpec::identity(16, 16)).unwrap();
        assert_eq!(ww.channel("a").unwrap(), &f);
        assert_eq!(ww.observation_mask(), &mask);
        assert_eq!(wo.pos_mask, obs.pos_mask);
    }

    #[test]
    fn translation_shifts_trajectory_cells() {
        let mut spec = WarpSpec::identity(32, 32);
        spec.translation = [3.0, 2.0];
        let region = GridField::filled(32, 32, 1.0, 1.0).unwrap();
        let line = vec![[4.25, 10.5], [20.75, 10.5]];
        let obs = build_observation_set(vec![line.clone()], &region);
        let world = LayeredWorld::new(vec![], GridField::filled(32, 32, 1.0, 1.0).unwrap()).unwrap();
        let (_, wo) = warp_world(&world, &obs, &spec).unwrap();
        let before = crate::field::rasterize_trajectory(&line, 32, 32).unwrap();
        let after = crate::field::rasterize_trajectory(&wo.trajectories[0], 32, 32).unwrap();
        let shifted: Vec<_> = before.iter().map(|&(i, j)| (i + 3, j + 2)).collect();
        assert_eq!(after, shifted);
        for (i, j) in shifted {
            assert_eq!(wo.pos_mask.get(i, j), 1.0);
        }
    }
}
