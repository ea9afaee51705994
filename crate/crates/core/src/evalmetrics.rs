//! Evaluation of predicted fields and fitted graphs against ground truth.

use serde::{Deserialize, Serialize};

use crate::directional::{directional_accuracy, nll_dp, DirField};
use crate::error::{DslpError, Result};
use crate::field::{for_each_segment_cell, GridField};
use crate::geom;
use crate::graphgen::LaneGraph;
use crate::objective::nll_slp;
use crate::synthworld::GroundTruth;

/// Binary raster of all edges: the cells each polyline touches plus every
/// cell whose center lies closer than `width_cells / 2` to it.
pub fn rasterize_graph(graph: &LaneGraph, width_cells: f64, width: usize, height: usize, cell_size: f64) -> Result<GridField> {
    let mut out = GridField::zeros(width, height, cell_size)?;
    let r = width_cells / 2.0;
    let vals = out.values_mut();
    for e in &graph.edges {
        let segs: Vec<[[f64; 2]; 2]> = match e.polyline.len() {
            0 => continue,
            1 => vec![[e.polyline[0], e.polyline[0]]],
            _ => e.polyline.windows(2).map(|s| [s[0], s[1]]).collect(),
        };
        for [a, b] in segs {
            for_each_segment_cell(a, b, width, height, |i, j| vals[j * width + i] = 1.0);
            if r <= 0.0 {
                continue;
            }
            let i0 = (a[0].min(b[0]) - r - 1.0).floor().max(0.0) as usize;
            let j0 = (a[1].min(b[1]) - r - 1.0).floor().max(0.0) as usize;
            let i1 = ((a[0].max(b[0]) + r + 1.0).ceil().max(0.0) as usize).min(width);
            let j1 = ((a[1].max(b[1]) + r + 1.0).ceil().max(0.0) as usize).min(height);
            for j in j0..j1 {
                for i in i0..i1 {
                    let (d, _) = geom::point_segment([i as f64 + 0.5, j as f64 + 0.5], a, b);
                    if d < r {
                        vals[j * width + i] = 1.0;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `(|A and B| / |A or B|, 2|A and B| / (|A| + |B|))`; both are 1 for two empty rasters.
pub fn iou_f1(pred: &GridField, truth: &GridField) -> Result<(f64, f64)> {
    pred.ensure_same_dims(truth)?;
    let (mut inter, mut union, mut np, mut nt) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.values().iter().zip(truth.values()) {
        let (p, t) = (p > 0.5, t > 0.5);
        inter += (p && t) as usize;
        union += (p || t) as usize;
        np += p as usize;
        nt += t as usize;
    }
    if union == 0 {
        return Ok((1.0, 1.0));
    }
    Ok((inter as f64 / union as f64, 2.0 * inter as f64 / (np + nt) as f64))
}

/// The six scalar metrics of one sample (or their aggregate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub nll_slp: f64,
    pub nll_dp: f64,
    pub nll_total: f64,
    pub dir_acc: f64,
    pub iou: f64,
    pub f1: f64,
}

impl Metrics {
    fn fields(&self) -> [f64; 6] {
        [self.nll_slp, self.nll_dp, self.nll_total, self.dir_acc, self.iou, self.f1]
    }

    fn from_fields(v: [f64; 6]) -> Self {
        Self {
            nll_slp: v[0],
            nll_dp: v[1],
            nll_total: v[2],
            dir_acc: v[3],
            iou: v[4],
            f1: v[5],
        }
    }
}

/// Mean metrics, their population standard deviations and the per-sample list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub nll_slp: f64,
    pub nll_dp: f64,
    pub nll_total: f64,
    pub dir_acc: f64,
    pub iou: f64,
    pub f1: f64,
    pub std: Metrics,
    pub samples: Vec<Metrics>,
}

impl EvalReport {
    pub fn mean(&self) -> Metrics {
        Metrics {
            nll_slp: self.nll_slp,
            nll_dp: self.nll_dp,
            nll_total: self.nll_total,
            dir_acc: self.dir_acc,
            iou: self.iou,
            f1: self.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Graph raster width in cells; `None` uses the ground-truth lane width.
    pub raster_width: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { raster_width: None }
    }
}

/// Metrics of one prediction: SLP NLL over road cells against the lane
/// raster, DP NLL and accuracy over lane cells, graph IoU/F1.
pub fn evaluate(y_hat: &GridField, w_hat: &DirField, graph: &LaneGraph, gt: &GroundTruth, config: &EvalConfig) -> Result<Metrics> {
    if y_hat.dims() != gt.dims() || w_hat.dims() != gt.dims() {
        return Err(DslpError::DimensionMismatch("prediction and ground truth differ".into()));
    }
    if gt.lane_raster_true.count_set() == 0 {
        return Err(DslpError::MissingGroundTruth("empty lane raster".into()));
    }
    let lanes = &gt.lane_raster_true;
    let nll_s = nll_slp(lanes, y_hat, gt.road())?;
    let nll_d = nll_dp(&gt.dir_true, w_hat, lanes)?;
    let dir_acc = directional_accuracy(&gt.dir_true, w_hat, lanes)?;
    let (w, h) = gt.dims();
    let raster = rasterize_graph(
        graph,
        config.raster_width.unwrap_or(gt.lane_width),
        w,
        h,
        y_hat.cell_size(),
    )?;
    let (iou, f1) = iou_f1(&raster, lanes)?;
    Ok(Metrics {
        nll_slp: nll_s,
        nll_dp: nll_d,
        nll_total: nll_s + nll_d,
        dir_acc,
        iou,
        f1,
    })
}

/// Order-independent mean and standard deviation: values are sorted before summing.
pub fn aggregate(samples: &[Metrics]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(DslpError::EmptyDataset);
    }
    let n = samples.len() as f64;
    let mut mean = [0.0; 6];
    let mut std = [0.0; 6];
    for f in 0..6 {
        let mut v: Vec<f64> = samples.iter().map(|s| s.fields()[f]).collect();
        v.sort_by(f64::total_cmp);
        let m = v.iter().sum::<f64>() / n;
        let mut dev: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
        dev.sort_by(f64::total_cmp);
        mean[f] = m;
        std[f] = (dev.iter().sum::<f64>() / n).sqrt();
    }
    mean[2] = mean[0] + mean[1];
    let m = Metrics::from_fields(mean);
    Ok(EvalReport {
        nll_slp: m.nll_slp,
        nll_dp: m.nll_dp,
        nll_total: m.nll_total,
        dir_acc: m.dir_acc,
        iou: m.iou,
        f1: m.f1,
        std: Metrics::from_fields(std),
        samples: samples.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphgen::{GraphEdge, GraphNode, NodeKind};

    fn edge_graph(line: Vec<[f64; 2]>) -> LaneGraph {
        LaneGraph {
            nodes: vec![
                GraphNode {
                    x: line[0][0],
                    y: line[0][1],
                    kind: NodeKind::Entry,
                },
                GraphNode {
                    x: line[line.len() - 1][0],
                    y: line[line.len() - 1][1],
                    kind: NodeKind::Exit,
                },
            ],
            edges: vec![GraphEdge {
                from: 0,
                to: 1,
                polyline: line,
                nll: 0.0,
            }],
        }
    }

    #[test]
    fn empty_graph_rasterizes_to_zero() {
        let r = rasterize_graph(&LaneGraph::default(), 3.0, 10, 10, 1.0).unwrap();
        assert_eq!(r.count_set(), 0);
    }

    #[test]
    fn unit_width_equals_touched_cells() {
        let g = edge_graph(vec![[2.5, 5.5], [6.5, 5.5]]);
        let r = rasterize_graph(&g, 1.0, 10, 10, 1.0).unwrap();
        let cells = crate::field::rasterize_trajectory(&g.edges[0].polyline, 10, 10).unwrap();
        assert_eq!(r.count_set(), cells.len());
        for (i, j) in cells {
            assert_eq!(r.get(i, j), 1.0);
        }
    }

    #[test]
    fn closed_form_overlaps() {
        let a = GridField::from_fn(20, 10, 1.0, |i, _| if i < 10 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(iou_f1(&a, &a).unwrap(), (1.0, 1.0));
        let b = a.map(|v| 1.0 - v);
        assert_eq!(iou_f1(&a, &b).unwrap(), (0.0, 0.0));
        let c = GridField::from_fn(20, 10, 1.0, |i, _| if (5..15).contains(&i) { 1.0 } else { 0.0 }).unwrap();
        let (iou, f1) = iou_f1(&a, &c).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-15);
        assert!((f1 - 0.5).abs() < 1e-15);
        let z = GridField::zeros(20, 10, 1.0).unwrap();
        assert_eq!(iou_f1(&z, &z).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn aggregate_keeps_total_exact() {
        let s = [
            Metrics {
                nll_slp: 1.1,
                nll_dp: 2.2,
                nll_total: 3.3,
                dir_acc: 0.5,
                iou: 0.4,
                f1: 0.6,
            },
            Metrics {
                nll_slp: 0.7,
                nll_dp: 0.1,
                nll_total: 0.8,
                dir_acc: 1.0,
                iou: 0.2,
                f1: 0.3,
            },
        ];
        let r = aggregate(&s).unwrap();
        assert_eq!(r.nll_total, r.nll_slp + r.nll_dp);
        let mut rev = s;
        rev.reverse();
        assert_eq!(aggregate(&rev).unwrap().mean(), r.mean());
        assert!(aggregate(&[]).is_err());
    }
}
