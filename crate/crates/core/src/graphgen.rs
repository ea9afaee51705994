//! Maximum-likelihood lane graphs fitted to a predicted field pair.
//!
//! Endpoints come from non-maximum suppression on the outer band of the
//! SLP map, classified by the DP modes there. Every entry/exit pair is
//! connected by the best of a set of sampled quadratic splines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directional::{bin_center, bin_of, circular_variance, modes, DirField, ACCURACY_MODE_MASS, PROB_FLOOR};
use crate::error::{DslpError, Result};
use crate::field::{for_each_segment_cell, GridField, Point, Polyline};
use crate::geom::{self, Side};
use crate::objective::clamp_pred;

/// Cells with a lower SLP value may not be traversed by a graph edge.
pub const MIN_TRAVERSABLE: f64 = 0.05;
/// Circular variance below which a boundary run counts as coherent.
pub const COHERENT_VARIANCE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Entry,
    Exit,
    Waypoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub x: f64,
    pub y: f64,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
    pub polyline: Polyline,
    pub nll: f64,
}

/// Directed lane graph in cell coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LaneGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl LaneGraph {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: LaneGraph = serde_json::from_str(s)?;
        for e in &g.edges {
            if e.from >= g.nodes.len() || e.to >= g.nodes.len() {
                return Err(DslpError::Format(format!("edge {}->{} references a missing node", e.from, e.to)));
            }
        }
        Ok(g)
    }

    pub fn node_pos(&self, k: usize) -> Point {
        [self.nodes[k].x, self.nodes[k].y]
    }
}

/// A boundary point with the direction that classified it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub pos: Point,
    pub side: Side,
    /// Direction of the supporting DP mode, radians.
    pub heading: f64,
    /// Found by NMS (`true`) or by the coherent-run fallback.
    pub from_nms: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EndpointSet {
    pub entries: Vec<Endpoint>,
    pub exits: Vec<Endpoint>,
}

impl EndpointSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.exits.is_empty()
    }
}

/// Graph fitting knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub nms_window: usize,
    pub slp_threshold: f64,
    /// Depth of the boundary band in cells.
    pub band: usize,
    pub n_samples: usize,
    pub eval_points: usize,
    /// Maximum mean per-point NLL of an accepted edge.
    pub nll_accept_threshold: f64,
    /// Same-side entry/exit pairs closer than this are u-turns.
    pub uturn_distance: f64,
    pub seed: u64,
}

impl GraphConfig {
    pub fn for_lane_width(lane_width: f64) -> Self {
        Self {
            nms_window: 5,
            slp_threshold: 0.3,
            band: 1,
            n_samples: 64,
            eval_points: 32,
            nll_accept_threshold: 3.0,
            uturn_distance: 2.0 * lane_width,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DslpError::InvalidArgument(format!("graph config: {m}")));
        if self.nms_window == 0 {
            return bad("nms_window must be >= 1");
        }
        if !(self.slp_threshold > 0.0 && self.slp_threshold < 1.0) {
            return bad("slp_threshold must lie in (0, 1)");
        }
        if self.n_samples == 0 {
            return bad("n_samples must be >= 1");
        }
        if self.eval_points < 2 {
            return bad("eval_points must be >= 2");
        }
        if !(self.nll_accept_threshold > 0.0) || !(self.uturn_distance >= 0.0) {
            return bad("thresholds must be positive");
        }
        Ok(())
    }
}

/// Cells along one side, walking in increasing coordinate; `depth` steps inward.
fn side_cell(side: Side, k: usize, depth: usize, w: usize, h: usize) -> (usize, usize) {
    match side {
        Side::West => (depth, k),
        Side::East => (w - 1 - depth, k),
        Side::South => (k, depth),
        Side::North => (k, h - 1 - depth),
    }
}

fn side_len(side: Side, w: usize, h: usize) -> usize {
    match side {
        Side::West | Side::East => h,
        Side::South | Side::North => w,
    }
}

/// Inward/outward classification of every DP mode at a boundary cell.
fn classify(side: Side, d: &[f64]) -> (Option<f64>, Option<f64>) {
    let inward = geom::scale(side.outward(), -1.0);
    let bins = d.len();
    let mut entry: Option<(f64, f64)> = None;
    let mut exit: Option<(f64, f64)> = None;
    for (m, mass) in modes(d, ACCURACY_MODE_MASS) {
        let th = bin_center(m, bins);
        let c = geom::dot([th.cos(), th.sin()], inward);
        let slot = if c > 0.1 {
            &mut entry
        } else if c < -0.1 {
            &mut exit
        } else {
            continue;
        };
        if slot.is_none_or(|(best, _)| mass > best) {
            *slot = Some((mass, th));
        }
    }
    (entry.map(|e| e.1), exit.map(|e| e.1))
}

/// NMS along the boundary band plus coherent-run fallback endpoints.
pub fn find_endpoints(y_hat: &GridField, w_hat: &DirField, nms_window: usize, slp_threshold: f64) -> Result<EndpointSet> {
    find_endpoints_band(y_hat, w_hat, nms_window, slp_threshold, 1)
}

pub fn find_endpoints_band(
    y_hat: &GridField,
    w_hat: &DirField,
    nms_window: usize,
    slp_threshold: f64,
    band: usize,
) -> Result<EndpointSet> {
    if y_hat.dims() != w_hat.dims() {
        return Err(DslpError::DimensionMismatch("SLP and DP fields differ".into()));
    }
    let (w, h) = y_hat.dims();
    let band = band.clamp(1, w.min(h) / 2);
    let r = nms_window / 2;
    let mut out = EndpointSet::default();
    for side in [Side::West, Side::South, Side::East, Side::North] {
        let n = side_len(side, w, h);
        let prof: Vec<f64> = (0..n)
            .map(|k| {
                (0..band)
                    .map(|d| {
                        let (i, j) = side_cell(side, k, d, w, h);
                        y_hat.get(i, j)
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let mut nms_hits = vec![false; n];
        for k in 0..n {
            if prof[k] < slp_threshold {
                continue;
            }
            let lo = k.saturating_sub(r);
            let hi = (k + r).min(n - 1);
            // ties resolve to the lowest index
            let is_max = (lo..k).all(|q| prof[q] < prof[k]) && (k + 1..=hi).all(|q| prof[q] <= prof[k]);
            if is_max {
                nms_hits[k] = true;
                push_endpoint(&mut out, side, k, w, h, w_hat, true);
            }
        }

        // runs of direction-coherent cells that NMS missed
        let coherent: Vec<bool> = (0..n)
            .map(|k| {
                let (i, j) = side_cell(side, k, 0, w, h);
                w_hat.dist(i, j).is_some_and(|d| circular_variance(d) < COHERENT_VARIANCE)
            })
            .collect();
        let mut k = 0;
        while k < n {
            if !coherent[k] {
                k += 1;
                continue;
            }
            let start = k;
            while k < n && coherent[k] {
                k += 1;
            }
            let run = start..k;
            let mean = prof[run.clone()].iter().sum::<f64>() / run.len() as f64;
            if run.len() >= nms_window.max(1) && mean > slp_threshold / 2.0 && !nms_hits[run.clone()].iter().any(|&x| x) {
                push_endpoint(&mut out, side, (start + k - 1) / 2, w, h, w_hat, false);
            }
        }
    }
    Ok(out)
}

fn push_endpoint(out: &mut EndpointSet, side: Side, k: usize, w: usize, h: usize, w_hat: &DirField, from_nms: bool) {
    let (i, j) = side_cell(side, k, 0, w, h);
    let Some(d) = w_hat.dist(i, j) else {
        return;
    };
    let pos = [i as f64 + 0.5, j as f64 + 0.5];
    let (entry, exit) = classify(side, d);
    if let Some(heading) = entry {
        out.entries.push(Endpoint {
            pos,
            side,
            heading,
            from_nms,
        });
    }
    if let Some(heading) = exit {
        out.exits.push(Endpoint {
            pos,
            side,
            heading,
            from_nms,
        });
    }
}

/// Best spline between two endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCandidate {
    pub control: Point,
    /// Evaluation points, equidistant in arc length.
    pub polyline: Polyline,
    /// Summed NLL over the evaluation points.
    pub nll: f64,
    /// Index of the winning candidate; 0 is the straight line.
    pub index: usize,
}

impl PathCandidate {
    pub fn mean_nll(&self) -> f64 {
        self.nll / self.polyline.len() as f64
    }
}

fn clamp_cell(p: Point, w: usize, h: usize) -> (usize, usize) {
    let i = (p[0].floor().max(0.0) as usize).min(w - 1);
    let j = (p[1].floor().max(0.0) as usize).min(h - 1);
    (i, j)
}

fn spline_points(a: Point, c: Point, b: Point, eval_points: usize) -> (Polyline, Polyline) {
    let rough = geom::dist(a, c) + geom::dist(c, b);
    let dense = geom::sample_bezier(a, c, b, ((rough / 0.1).ceil() as usize).max(16));
    let pts = geom::resample_count(&dense, eval_points.max(2));
    (dense, pts)
}

/// Every cell the dense spline passes has `y_hat >= MIN_TRAVERSABLE`.
fn traversable(dense: &[Point], y_hat: &GridField) -> bool {
    let (w, h) = y_hat.dims();
    let mut ok = true;
    for seg in dense.windows(2) {
        for_each_segment_cell(seg[0], seg[1], w, h, |i, j| {
            if y_hat.get(i, j) < MIN_TRAVERSABLE {
                ok = false;
            }
        });
        if !ok {
            return false;
        }
    }
    true
}

/// Summed `-log y_hat - log w_hat[bin(tangent)]` over the evaluation points.
/// Undefined DP cells score as uniform.
pub fn path_nll(points: &[Point], y_hat: &GridField, w_hat: &DirField) -> f64 {
    let (w, h) = y_hat.dims();
    let bins = w_hat.bins();
    let n = points.len();
    let mut total = 0.0;
    for k in 0..n {
        let (i, j) = clamp_cell(points[k], w, h);
        let (a, b) = match k {
            0 => (points[0], points[1]),
            _ if k + 1 == n => (points[n - 2], points[n - 1]),
            _ => (points[k - 1], points[k + 1]),
        };
        let m = bin_of(geom::heading(a, b), bins);
        let q = w_hat.dist(i, j).map_or(1.0 / bins as f64, |d| d[m]);
        total += -clamp_pred(y_hat.get(i, j)).ln() - q.max(PROB_FLOOR).ln();
    }
    total
}

/// Straight line first, then `n_samples` control points drawn around the
/// midpoint with `sigma = 0.25 * |exit - entry|`. Candidates leaving the grid
/// or crossing a cell below `MIN_TRAVERSABLE` are rejected; the lowest NLL
/// wins and ties keep the earlier candidate.
pub fn sample_path(
    entry: Point,
    exit: Point,
    y_hat: &GridField,
    w_hat: &DirField,
    n_samples: usize,
    eval_points: usize,
    seed: u64,
) -> Result<PathCandidate> {
    let span = geom::dist(entry, exit);
    if !(span > 1e-9) {
        return Err(DslpError::DegenerateEndpoints);
    }
    if n_samples == 0 {
        return Err(DslpError::InvalidArgument("n_samples must be >= 1".into()));
    }
    let (w, h) = (y_hat.width() as f64, y_hat.height() as f64);
    let mid = geom::scale(geom::add(entry, exit), 0.5);
    let normal = Normal::new(0.0, 0.25 * span).expect("positive sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<PathCandidate> = None;
    for index in 0..=n_samples {
        let c = if index == 0 {
            mid
        } else {
            [mid[0] + normal.sample(&mut rng), mid[1] + normal.sample(&mut rng)]
        };
        if !(c[0] >= 0.0 && c[0] <= w && c[1] >= 0.0 && c[1] <= h) {
            continue;
        }
        let (dense, pts) = spline_points(entry, c, exit, eval_points);
        if !traversable(&dense, y_hat) {
            continue;
        }
        let nll = path_nll(&pts, y_hat, w_hat);
        if best.as_ref().is_none_or(|b| nll < b.nll - 1e-12) {
            best = Some(PathCandidate {
                control: c,
                polyline: pts,
                nll,
                index,
            });
        }
    }
    best.ok_or(DslpError::NoValidPath)
}

/// Derives an independent seed per entry/exit pair.
fn pair_seed(seed: u64, a: usize, b: usize) -> u64 {
    let mut z = seed ^ ((a as u64) << 32 | b as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// True when an entry/exit pair is a u-turn between neighbouring lanes.
pub fn is_uturn(entry: &Endpoint, exit: &Endpoint, uturn_distance: f64) -> bool {
    entry.side == exit.side && geom::dist(entry.pos, exit.pos) < uturn_distance
}

/// Connects every entry to every exit; nodes list entries then exits.
pub fn build_graph(endpoints: &EndpointSet, y_hat: &GridField, w_hat: &DirField, config: &GraphConfig) -> LaneGraph {
    let mut graph = LaneGraph::default();
    for e in &endpoints.entries {
        graph.nodes.push(GraphNode {
            x: e.pos[0],
            y: e.pos[1],
            kind: NodeKind::Entry,
        });
    }
    for x in &endpoints.exits {
        graph.nodes.push(GraphNode {
            x: x.pos[0],
            y: x.pos[1],
            kind: NodeKind::Exit,
        });
    }
    let ne = endpoints.entries.len();
    let pairs: Vec<(usize, usize)> = (0..ne)
        .flat_map(|a| (0..endpoints.exits.len()).map(move |b| (a, b)))
        .filter(|&(a, b)| {
            let (e, x) = (&endpoints.entries[a], &endpoints.exits[b]);
            e.pos != x.pos && !is_uturn(e, x, config.uturn_distance)
        })
        .collect();
    let mut edges: Vec<GraphEdge> = pairs
        .par_iter()
        .filter_map(|&(a, b)| {
            let (e, x) = (&endpoints.entries[a], &endpoints.exits[b]);
            let path = sample_path(
                e.pos,
                x.pos,
                y_hat,
                w_hat,
                config.n_samples,
                config.eval_points,
                pair_seed(config.seed, a, b),
            )
            .ok()?;
            (path.mean_nll() < config.nll_accept_threshold).then(|| GraphEdge {
                from: a,
                to: ne + b,
                polyline: path.polyline,
                nll: path.nll,
            })
        })
        .collect();
    edges.sort_by_key(|e| (e.from, e.to));
    graph.edges = edges;
    graph
}

/// Endpoints, then graph, with one config.
pub fn fit_graph(y_hat: &GridField, w_hat: &DirField, config: &GraphConfig) -> Result<LaneGraph> {
    config.validate()?;
    let ends = find_endpoints_band(y_hat, w_hat, config.nms_window, config.slp_threshold, config.band)?;
    Ok(build_graph(&ends, y_hat, w_hat, config))
}
