//! Synthetic road layouts with known traversal and direction fields.
//!
//! Every route is one quadratic Bezier from a boundary entry to a boundary
//! exit. Two-way roads carry right-hand lanes offset `lane_width / 2` from
//! the road axis; one-way roads (fork, merge) run on the axis.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::directional::{encode_von_mises, superimpose_weighted, DirField, VonMisesSpec, DEFAULT_BINS, DEFAULT_KAPPA};
use crate::error::{DslpError, Result};
use crate::field::{build_observation_set, for_each_segment_cell, GridField, LayeredWorld, ObservationSet, Point, Polyline, MIN_SIDE};
use crate::geom::{self, Side};
use crate::graphgen::{GraphEdge, GraphNode, LaneGraph, NodeKind};

/// Peak of the lateral traversal profile.
pub const PROFILE_PEAK: f64 = 0.95;
/// `p_true` above which a cell carries a defined ground-truth direction.
pub const DIR_DEFINED_THRESHOLD: f64 = 0.05;
/// Channel names of a generated world, in predictor input order.
pub const CHANNELS: [&str; 3] = ["road", "marking", "appearance"];

const ROUTE_SPACING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    Straight,
    Curve,
    TIntersection,
    FourWay,
    Fork,
    Merge,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 6] = [
        TemplateKind::Straight,
        TemplateKind::Curve,
        TemplateKind::TIntersection,
        TemplateKind::FourWay,
        TemplateKind::Fork,
        TemplateKind::Merge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::Straight => "straight",
            TemplateKind::Curve => "curve",
            TemplateKind::TIntersection => "t-intersection",
            TemplateKind::FourWay => "fourway",
            TemplateKind::Fork => "fork",
            TemplateKind::Merge => "merge",
        }
    }

    fn default_lanes(self) -> usize {
        match self {
            TemplateKind::Fork | TemplateKind::Merge => 1,
            _ => 2,
        }
    }

    /// Arms (before rotation) and ordered route pairs for a lane count.
    fn layout(self, lanes: usize) -> (Vec<Side>, Vec<(Side, Side)>) {
        use Side::*;
        let two_way = lanes == 2;
        match self {
            TemplateKind::Straight if two_way => (vec![West, East], vec![(West, East), (East, West)]),
            TemplateKind::Straight => (vec![West, East], vec![(West, East)]),
            TemplateKind::Curve if two_way => (vec![West, South], vec![(West, South), (South, West)]),
            TemplateKind::Curve => (vec![West, South], vec![(West, South)]),
            TemplateKind::TIntersection => {
                let arms = vec![West, East, South];
                (arms.clone(), ordered_pairs(&arms))
            }
            TemplateKind::FourWay => {
                let arms = vec![East, North, West, South];
                (arms.clone(), ordered_pairs(&arms))
            }
            TemplateKind::Fork => (vec![West, East, South], vec![(West, East), (West, South)]),
            TemplateKind::Merge => (vec![West, East, South], vec![(West, East), (South, East)]),
        }
    }
}

fn ordered_pairs(arms: &[Side]) -> Vec<(Side, Side)> {
    let mut out = Vec::new();
    for &a in arms {
        for &b in arms {
            if a != b {
                out.push((a, b));
            }
        }
    }
    out
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemplateKind {
    type Err = DslpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "straight" => Ok(TemplateKind::Straight),
            "curve" => Ok(TemplateKind::Curve),
            "t" | "t-intersection" | "tintersection" | "tjunction" => Ok(TemplateKind::TIntersection),
            "fourway" | "4-way" | "4way" | "four-way" => Ok(TemplateKind::FourWay),
            "fork" => Ok(TemplateKind::Fork),
            "merge" => Ok(TemplateKind::Merge),
            other => Err(DslpError::InvalidArgument(format!("unknown template `{other}`"))),
        }
    }
}

/// Layout parameters of one synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldTemplate {
    pub kind: TemplateKind,
    /// 1 (one-way) or 2 (two-way, opposing lanes).
    pub lane_count: usize,
    /// Lane width in cells.
    pub lane_width: f64,
    /// Extra road surface on each side of the lane corridors, in cells.
    pub margin: f64,
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    /// Maximum shift of the layout center along each axis, in cells.
    pub center_jitter: f64,
    /// Rotate the layout by a random multiple of a quarter turn.
    pub randomize_orientation: bool,
    /// Cut rectangular observation holes.
    pub occlusion: bool,
}

impl WorldTemplate {
    /// 128 x 128 cells of 0.4 m with 3.5 m lanes.
    pub fn new(kind: TemplateKind) -> Self {
        Self::scaled(kind, 128, 8.75)
    }

    /// Square grid of `side` cells with the given lane width.
    pub fn scaled(kind: TemplateKind, side: usize, lane_width: f64) -> Self {
        Self {
            kind,
            lane_count: kind.default_lanes(),
            lane_width,
            margin: 2.25 * lane_width,
            width: side,
            height: side,
            cell_size: 0.4,
            center_jitter: lane_width / 2.0,
            randomize_orientation: true,
            occlusion: true,
        }
    }

    pub fn two_way(&self) -> bool {
        self.lane_count == 2
    }

    /// Offset of a lane center from its road axis.
    pub fn lane_offset(&self) -> f64 {
        if self.two_way() {
            self.lane_width / 2.0
        } else {
            0.0
        }
    }

    /// Half width of the paved road around its axis.
    pub fn road_half_width(&self) -> f64 {
        self.lane_offset() + self.lane_width / 2.0 + self.margin
    }

    pub fn profile_sigma(&self) -> f64 {
        self.lane_width / 3.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < MIN_SIDE || self.height < MIN_SIDE || !(self.cell_size > 0.0) {
            return Err(DslpError::InvalidArgument(format!(
                "grid {}x{} with cell size {}",
                self.width, self.height, self.cell_size
            )));
        }
        if !(self.lane_width >= 1.0 && self.lane_width.is_finite()) {
            return Err(DslpError::InvalidArgument(format!("lane width {}", self.lane_width)));
        }
        if !(self.margin >= 0.0 && self.center_jitter >= 0.0) {
            return Err(DslpError::InvalidArgument("negative margin or jitter".into()));
        }
        let allowed = match self.kind {
            TemplateKind::Straight | TemplateKind::Curve => self.lane_count == 1 || self.lane_count == 2,
            TemplateKind::TIntersection | TemplateKind::FourWay => self.lane_count == 2,
            TemplateKind::Fork | TemplateKind::Merge => self.lane_count == 1,
        };
        if !allowed {
            return Err(DslpError::InvalidArgument(format!(
                "{} does not support {} lanes",
                self.kind, self.lane_count
            )));
        }
        let need = self.road_half_width() + self.center_jitter + 1.0;
        let room = self.width.min(self.height) as f64 / 2.0;
        if need > room {
            return Err(DslpError::TemplateOutOfBounds(format!(
                "{} needs {need:.2} cells from the center, grid offers {room:.2}",
                self.kind
            )));
        }
        Ok(())
    }
}

/// One plausible route through a world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub entry_side: Side,
    pub exit_side: Side,
    /// Bezier control points `[entry, control, exit]`.
    pub control: [Point; 3],
    /// Dense samples roughly equidistant in arc length.
    pub polyline: Polyline,
}

/// Evaluation targets of a generated world.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub p_true: GridField,
    pub dir_true: DirField,
    pub lane_graph_true: LaneGraph,
    pub lane_raster_true: GridField,
    /// The world without occlusion holes.
    pub complete: LayeredWorld,
    pub routes: Vec<Route>,
    pub lane_width: f64,
}

impl GroundTruth {
    /// Road surface, which is also the supervised region.
    pub fn road(&self) -> &GridField {
        self.complete.channel("road").expect("generated worlds carry a road channel")
    }

    pub fn dims(&self) -> (usize, usize) {
        self.p_true.dims()
    }

    pub fn route_count(&self) -> usize {
        self.routes.len()
    }
}

/// Generates the occluded world and its ground truth; pure in `(template, seed)`.
pub fn generate_world(template: &WorldTemplate, seed: u64) -> Result<(LayeredWorld, GroundTruth)> {
    template.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h, cs) = (template.width, template.height, template.cell_size);
    let turns = if template.randomize_orientation {
        rng.random_range(0..4usize)
    } else {
        0
    };
    let jitter = template.center_jitter;
    let mut center = [w as f64 / 2.0, h as f64 / 2.0];
    if jitter > 0.0 {
        center[0] += rng.random_range(-jitter..=jitter);
        center[1] += rng.random_range(-jitter..=jitter);
    }

    let (arms, pairs) = template.kind.layout(template.lane_count);
    let arms: Vec<Side> = arms.iter().map(|s| s.rotated(turns)).collect();
    let routes: Vec<Route> = pairs
        .iter()
        .map(|&(a, b)| build_route(template, center, a.rotated(turns), b.rotated(turns)))
        .collect::<Result<_>>()?;

    let sigma = template.profile_sigma();
    let bins = DEFAULT_BINS;
    let cells = w * h;
    let mut nearest = vec![(f64::INFINITY, 0.0f64); cells * routes.len()];
    for j in 0..h {
        for i in 0..w {
            let c = [i as f64 + 0.5, j as f64 + 0.5];
            for (r, route) in routes.iter().enumerate() {
                let (d, k) = geom::point_polyline(c, &route.polyline);
                let th = geom::heading(route.polyline[k], route.polyline[k + 1]);
                nearest[(j * w + i) * routes.len() + r] = (d, th);
            }
        }
    }

    let mut p_true = GridField::zeros(w, h, cs)?;
    let mut road = GridField::zeros(w, h, cs)?;
    let mut dir_true = DirField::undefined(bins, w, h, cs)?;
    let road_reach = template.lane_width / 2.0 + template.margin;
    for cell in 0..cells {
        let per = &nearest[cell * routes.len()..(cell + 1) * routes.len()];
        let weights: Vec<f64> = per.iter().map(|&(d, _)| profile(d, sigma)).collect();
        let p = weights.iter().cloned().fold(0.0, f64::max);
        p_true.values_mut()[cell] = p;
        if per.iter().any(|&(d, _)| d <= road_reach) {
            road.values_mut()[cell] = 1.0;
        }
        if p > DIR_DEFINED_THRESHOLD {
            let parts: Vec<(f64, Vec<f64>)> = per
                .iter()
                .zip(&weights)
                .filter(|(_, &wt)| wt > 0.0)
                .map(|(&(_, th), &wt)| Ok((wt, encode_von_mises(VonMisesSpec::new(th, DEFAULT_KAPPA)?, bins)?)))
                .collect::<Result<_>>()?;
            let d = superimpose_weighted(&parts).expect("positive weight");
            dir_true.set(cell % w, cell / w, Some(&d))?;
        }
    }
    let lane_raster_true = p_true.map(|p| if p > 0.5 { 1.0 } else { 0.0 });

    let marking = markings(template, center, &arms, &road)?;
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    let appearance = GridField::from_values(
        w,
        h,
        cs,
        road.values()
            .iter()
            .map(|&r| {
                let base: f64 = if r > 0.5 { 0.3 } else { 0.7 };
                (base + noise.sample(&mut rng)).clamp(0.0, 1.0)
            })
            .collect(),
    )?;
    let full_mask = GridField::filled(w, h, cs, 1.0)?;
    let complete = LayeredWorld::new(
        vec![
            (CHANNELS[0].to_string(), road),
            (CHANNELS[1].to_string(), marking),
            (CHANNELS[2].to_string(), appearance),
        ],
        full_mask.clone(),
    )?;
    let mask = if template.occlusion {
        occlusion_mask(&mut rng, w, h, cs)?
    } else {
        full_mask
    };
    let partial = LayeredWorld::new(
        complete
            .channels()
            .iter()
            .map(|(n, f)| (n.clone(), f.zip_map(&mask, |v, m| v * m).expect("same dims")))
            .collect(),
        mask,
    )?;

    let gt = GroundTruth {
        p_true,
        dir_true,
        lane_graph_true: route_graph(&routes),
        lane_raster_true,
        complete,
        routes,
        lane_width: template.lane_width,
    };
    check_invariants(&gt)?;
    Ok((partial, gt))
}

#[inline]
fn profile(d: f64, sigma: f64) -> f64 {
    PROFILE_PEAK * (-d * d / (2.0 * sigma * sigma)).exp()
}

fn right_of(u: Point) -> Point {
    [u[1], -u[0]]
}

fn boundary_point(side: Side, center: Point, w: f64, h: f64) -> Point {
    match side {
        Side::East => [w, center[1]],
        Side::West => [0.0, center[1]],
        Side::North => [center[0], h],
        Side::South => [center[0], 0.0],
    }
}

fn build_route(t: &WorldTemplate, center: Point, entry: Side, exit: Side) -> Result<Route> {
    let (w, h) = (t.width as f64, t.height as f64);
    let o = t.lane_offset();
    let din = geom::scale(entry.outward(), -1.0);
    let dout = exit.outward();
    let p0 = geom::add(boundary_point(entry, center, w, h), geom::scale(right_of(din), o));
    let p2 = geom::add(boundary_point(exit, center, w, h), geom::scale(right_of(dout), o));
    let c = geom::line_intersection(p0, din, p2, dout).unwrap_or_else(|| geom::scale(geom::add(p0, p2), 0.5));
    let inside = |p: Point| p[0] >= 0.0 && p[0] <= w && p[1] >= 0.0 && p[1] <= h;
    if !(inside(p0) && inside(c) && inside(p2)) {
        return Err(DslpError::TemplateOutOfBounds(format!("{entry:?}->{exit:?} leaves the grid")));
    }
    let rough = geom::dist(p0, c) + geom::dist(c, p2);
    let dense = geom::sample_bezier(p0, c, p2, ((rough / 0.05).ceil() as usize).max(8));
    Ok(Route {
        entry_side: entry,
        exit_side: exit,
        control: [p0, c, p2],
        polyline: geom::resample_spacing(&dense, ROUTE_SPACING),
    })
}

/// Road edges and outer lane lines at 0.5, dividers of two-way arms at 1.0.
fn markings(t: &WorldTemplate, center: Point, arms: &[Side], road: &GridField) -> Result<GridField> {
    let (w, h) = road.dims();
    let mut out = GridField::zeros(w, h, road.cell_size())?;
    for j in 0..h {
        for i in 0..w {
            if road.get(i, j) < 0.5 {
                continue;
            }
            let edge = (i > 0 && road.get(i - 1, j) < 0.5)
                || (i + 1 < w && road.get(i + 1, j) < 0.5)
                || (j > 0 && road.get(i, j - 1) < 0.5)
                || (j + 1 < h && road.get(i, j + 1) < 0.5);
            if edge {
                let k = out.index(i, j);
                out.values_mut()[k] = 0.5;
            }
        }
    }
    // painted lines stop where the lane corridors of crossing arms begin
    let corridor = t.lane_offset() + t.lane_width / 2.0;
    let stop = if t.kind == TemplateKind::Straight { 0.0 } else { corridor };
    let mut lines: Vec<(f64, f64)> = vec![(corridor, 0.5), (-corridor, 0.5)];
    if t.two_way() {
        lines.push((0.0, 1.0));
    }
    for &arm in arms {
        let out_dir = arm.outward();
        let side = [-out_dir[1], out_dir[0]];
        let b = boundary_point(arm, center, w as f64, h as f64);
        let inner = geom::add(center, geom::scale(out_dir, stop));
        for &(offset, value) in &lines {
            let shift = geom::scale(side, offset);
            for_each_segment_cell(geom::add(b, shift), geom::add(inner, shift), w, h, |i, j| {
                let k = j * w + i;
                if out.values()[k] < value {
                    out.values_mut()[k] = value;
                }
            });
        }
    }
    Ok(out)
}

/// One or two rectangles jointly covering 10-30% of the grid; 1 = visible.
fn occlusion_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, cs: f64) -> Result<GridField> {
    let total = (w * h) as f64;
    let mut last = None;
    for _ in 0..32 {
        let target: f64 = rng.random_range(0.1..0.3);
        let holes = rng.random_range(1..=2usize);
        let mut mask = vec![1.0; w * h];
        for _ in 0..holes {
            let area = target * total / holes as f64;
            let aspect: f64 = rng.random_range(0.5..2.0);
            let rw = ((area * aspect).sqrt().round() as usize).clamp(1, w);
            let rh = ((area / rw as f64).round() as usize).clamp(1, h);
            let x0 = rng.random_range(0..=w - rw);
            let y0 = rng.random_range(0..=h - rh);
            for j in y0..y0 + rh {
                mask[j * w + x0..j * w + x0 + rw].fill(0.0);
            }
        }
        let covered = mask.iter().filter(|&&m| m == 0.0).count() as f64 / total;
        let ok = (0.1..=0.3).contains(&covered);
        last = Some(mask);
        if ok {
            break;
        }
    }
    GridField::from_values(w, h, cs, last.expect("at least one attempt"))
}

fn route_graph(routes: &[Route]) -> LaneGraph {
    let mut graph = LaneGraph::default();
    let node = |graph: &mut LaneGraph, p: Point, kind: NodeKind| -> usize {
        if let Some(k) = graph.nodes.iter().position(|n| n.kind == kind && n.x == p[0] && n.y == p[1]) {
            return k;
        }
        graph.nodes.push(GraphNode { x: p[0], y: p[1], kind });
        graph.nodes.len() - 1
    };
    for r in routes {
        let from = node(&mut graph, r.control[0], NodeKind::Entry);
        let to = node(&mut graph, r.control[2], NodeKind::Exit);
        graph.edges.push(GraphEdge {
            from,
            to,
            polyline: r.polyline.clone(),
            nll: 0.0,
        });
    }
    graph
}

fn check_invariants(gt: &GroundTruth) -> Result<()> {
    for (k, &p) in gt.p_true.values().iter().enumerate() {
        if (p > 0.5) != (gt.lane_raster_true.values()[k] > 0.5) {
            return Err(DslpError::InvalidField("lane raster disagrees with p_true".into()));
        }
        if (p > DIR_DEFINED_THRESHOLD) && !gt.dir_true.defined_at(k) {
            return Err(DslpError::InvalidField("dir_true undefined on a traversed cell".into()));
        }
    }
    Ok(())
}

/// Trajectory sampling knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationParams {
    /// Fraction of routes that produce trajectories, in `(0, 1]`.
    pub rho: f64,
    pub trajectories_per_route: usize,
    /// Lateral offset standard deviation in cells; `None` means `lane_width / 6`.
    pub lateral_noise: Option<f64>,
    /// Wavelength of the lateral drift in cells; `None` means `10 * lane_width`.
    pub wavelength: Option<f64>,
}

impl Default for ObservationParams {
    fn default() -> Self {
        Self {
            rho: 0.3,
            trajectories_per_route: 4,
            lateral_noise: None,
            wavelength: None,
        }
    }
}

/// Observations plus the ids of the routes that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledObservations {
    pub obs: ObservationSet,
    pub observed_routes: Vec<usize>,
}

/// Number of routes observed at coverage `rho`.
pub fn observed_route_count(rho: f64, routes: usize) -> usize {
    // tolerance keeps e.g. 0.3 * 10 at 3 rather than 4
    ((rho * routes as f64 - 1e-9).ceil() as usize).clamp(1, routes)
}

pub fn sample_observations(gt: &GroundTruth, params: &ObservationParams, seed: u64) -> Result<ObservationSet> {
    Ok(sample_observations_detailed(gt, params, seed)?.obs)
}

/// Picks `ceil(rho * R)` routes uniformly and drives noisy trajectories along them.
/// The lateral offset `sigma_n * (z0 cos(2 pi s / L + phi) + z1 sin(...))` is
/// smooth along the route and exactly `N(0, sigma_n^2)` at every arc length.
pub fn sample_observations_detailed(
    gt: &GroundTruth,
    params: &ObservationParams,
    seed: u64,
) -> Result<SampledObservations> {
    let r = gt.routes.len();
    if r == 0 {
        return Err(DslpError::NoSupervision);
    }
    if !(params.rho > 0.0 && params.rho <= 1.0) {
        return Err(DslpError::InvalidArgument(format!("route coverage {} outside (0, 1]", params.rho)));
    }
    let sigma_n = params.lateral_noise.unwrap_or(gt.lane_width / 6.0);
    let wavelength = params.wavelength.unwrap_or(10.0 * gt.lane_width);
    if !(sigma_n >= 0.0) || !(wavelength > 0.0) {
        return Err(DslpError::InvalidArgument("lateral noise must be >= 0, wavelength > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = observed_route_count(params.rho, r);
    let mut chosen: Vec<usize> = sample_indices(&mut rng, r, k).into_vec();
    chosen.sort_unstable();

    let mut trajectories = Vec::with_capacity(k * params.trajectories_per_route);
    for &id in &chosen {
        let line = &gt.routes[id].polyline;
        for _ in 0..params.trajectories_per_route {
            let z0: f64 = StandardNormal.sample(&mut rng);
            let z1: f64 = StandardNormal.sample(&mut rng);
            let phi = rng.random_range(0.0..TAU);
            trajectories.push(offset_polyline(line, |s| {
                let a = TAU * s / wavelength + phi;
                sigma_n * (z0 * a.cos() + z1 * a.sin())
            }));
        }
    }
    Ok(SampledObservations {
        obs: build_observation_set(trajectories, gt.road()),
        observed_routes: chosen,
    })
}

/// Shifts each vertex along the left normal by `offset(arc_length)`.
fn offset_polyline(line: &[Point], offset: impl Fn(f64) -> f64) -> Polyline {
    let n = line.len();
    let mut s = 0.0;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            s += geom::dist(line[k - 1], line[k]);
        }
        let (a, b) = if k + 1 < n { (line[k], line[k + 1]) } else { (line[k - 1], line[k]) };
        let t = geom::sub(b, a);
        let len = geom::norm(t);
        let normal = [-t[1] / len, t[0] / len];
        out.push(geom::add(line[k], geom::scale(normal, offset(s))));
    }
    out
}

/// How occlusion holes are filled before prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CompletionMode {
    Oracle,
    Noisy { sigma: f64 },
    Passthrough,
}

impl CompletionMode {
    pub fn name(&self) -> String {
        match self {
            CompletionMode::Oracle => "oracle".into(),
            CompletionMode::Noisy { sigma } => format!("noisy:{sigma}"),
            CompletionMode::Passthrough => "passthrough".into(),
        }
    }
}

impl FromStr for CompletionMode {
    type Err = DslpError;

    /// `oracle`, `passthrough`, `noisy` (sigma 0.1) or `noisy:<sigma>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "oracle" => return Ok(CompletionMode::Oracle),
            "passthrough" => return Ok(CompletionMode::Passthrough),
            "noisy" => return Ok(CompletionMode::Noisy { sigma: 0.1 }),
            _ => {}
        }
        if let Some(rest) = lower.strip_prefix("noisy:") {
            if let Ok(sigma) = rest.parse::<f64>() {
                if sigma >= 0.0 {
                    return Ok(CompletionMode::Noisy { sigma });
                }
            }
        }
        Err(DslpError::UnknownMode(s.to_string()))
    }
}

/// Fills occlusion holes. `Oracle` copies the ground truth, `Noisy` adds
/// Gaussian channel noise (clamped to `[0, 1]`) to it, `Passthrough`
/// returns the input untouched.
pub fn complete_world(partial: &LayeredWorld, gt: &GroundTruth, mode: CompletionMode, seed: u64) -> Result<LayeredWorld> {
    if mode == CompletionMode::Passthrough {
        return Ok(partial.clone());
    }
    if partial.dims() != gt.complete.dims() {
        return Err(DslpError::DimensionMismatch("partial world and ground truth differ".into()));
    }
    let sigma = match mode {
        CompletionMode::Noisy { sigma } if sigma >= 0.0 && sigma.is_finite() => sigma,
        CompletionMode::Noisy { sigma } => return Err(DslpError::InvalidArgument(format!("noise sigma {sigma}"))),
        _ => 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = partial.observation_mask();
    let mut channels = Vec::with_capacity(partial.channel_count());
    for (name, field) in partial.channels() {
        let truth = gt
            .complete
            .channel(name)
            .ok_or_else(|| DslpError::MissingGroundTruth(format!("channel `{name}`")))?;
        let mut values = field.values().to_vec();
        for (k, v) in values.iter_mut().enumerate() {
            if mask.values()[k] > 0.5 {
                continue;
            }
            let t = truth.values()[k];
            *v = if sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                (t + sigma * z).clamp(0.0, 1.0)
            } else {
                t
            };
        }
        channels.push((name.clone(), GridField::from_values(field.width(), field.height(), field.cell_size(), values)?));
    }
    LayeredWorld::new(channels, mask.map(|_| 1.0))
}
