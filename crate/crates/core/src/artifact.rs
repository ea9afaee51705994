//! On-disk artifacts of the command-line tools and the run manifest that
//! stamps them.
//!
//! Every grid artifact is a `DGF1` file plus a JSON sidecar next to it
//! (`x.dgf` -> `x.json`) carrying metadata, trajectories and graphs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dgf::DgfFile;
use crate::directional::DirField;
use crate::error::{DslpError, Result};
use crate::field::{GridField, LayeredWorld, ObservationSet, Polyline};
use crate::graphgen::LaneGraph;
use crate::synthworld::{GroundTruth, Route};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const MASK: &str = "mask";
const OBS_POS: &str = "obs_pos";
const OBS_NEG: &str = "obs_neg";
const GT_P: &str = "gt_p_true";
const GT_LANES: &str = "gt_lane_raster";
const GT_DIR: &str = "gt_dir_";
const GT_WORLD: &str = "gt_world_";
const PRED_SLP: &str = "slp";
const PRED_DIR: &str = "dir_";

/// Provenance record of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// SHA-256 of each input file, in `inputs` order.
    pub input_digests: Vec<String>,
    pub tool_version: String,
    pub wall_clock_ms: u128,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        Self {
            command: command.into(),
            config,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
            input_digests: Vec::new(),
            tool_version: TOOL_VERSION.into(),
            wall_clock_ms: 0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.input_digests.push(sha256_hex(&bytes));
        self.inputs.push(path.to_path_buf());
        Ok(())
    }

    /// Digest of everything but paths and wall-clock time, so relocating a
    /// run or re-running it later keeps the hash.
    pub fn hash(&self) -> String {
        let stable = serde_json::json!({
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "input_digests": self.input_digests,
            "tool_version": self.tool_version,
        });
        sha256_hex(stable.to_string().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Sidecar path of a grid artifact.
pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&s)?)
}

/// Ground truth metadata that does not fit in grid channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthMeta {
    pub lane_width: f64,
    pub routes: Vec<Route>,
    pub lane_graph: LaneGraph,
    pub observed_routes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldMeta {
    pub manifest_hash: String,
    /// Template name, or the source template for augmented copies.
    pub template: String,
    pub seed: u64,
    /// Names of the predictor input channels, in order.
    pub channels: Vec<String>,
    pub trajectories: Vec<Polyline>,
    pub truth: Option<TruthMeta>,
}

/// A predictor input with its observations and, for generated worlds, the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldArtifact {
    pub meta: WorldMeta,
    pub input: LayeredWorld,
    pub obs: ObservationSet,
    pub gt: Option<GroundTruth>,
}

impl WorldArtifact {
    pub fn write(&self, path: &Path) -> Result<()> {
        let (w, h) = self.input.dims();
        let mut f = DgfFile::new(w, h, self.input.cell_size());
        for (name, ch) in self.input.channels() {
            f.push_field(name.as_str(), ch)?;
        }
        f.push_field(MASK, self.input.observation_mask())?;
        f.push_field(OBS_POS, &self.obs.pos_mask)?;
        f.push_field(OBS_NEG, &self.obs.neg_mask)?;
        if let Some(gt) = &self.gt {
            f.push_field(GT_P, &gt.p_true)?;
            f.push_field(GT_LANES, &gt.lane_raster_true)?;
            for (name, ch) in gt.complete.channels() {
                f.push_field(format!("{GT_WORLD}{name}"), ch)?;
            }
            gt.dir_true.push_to_dgf(&mut f, GT_DIR)?;
        }
        f.write(path)?;
        write_json(&sidecar(path), &self.meta)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = DgfFile::read(path)?;
        let meta: WorldMeta = read_json(&sidecar(path))?;
        let channels = meta
            .channels
            .iter()
            .map(|n| Ok((n.clone(), f.field(n)?)))
            .collect::<Result<Vec<_>>>()?;
        let input = LayeredWorld::new(channels, f.field(MASK)?)?;
        let obs = ObservationSet {
            pos_mask: f.field(OBS_POS)?,
            neg_mask: f.field(OBS_NEG)?,
            trajectories: meta.trajectories.clone(),
        };
        let gt = match &meta.truth {
            None => None,
            Some(t) => {
                let complete = meta
                    .channels
                    .iter()
                    .map(|n| Ok((n.clone(), f.field(&format!("{GT_WORLD}{n}"))?)))
                    .collect::<Result<Vec<_>>>()?;
                let mask = GridField::filled(f.width as usize, f.height as usize, f.cell_size as f64, 1.0)?;
                Some(GroundTruth {
                    p_true: f.field(GT_P)?,
                    dir_true: DirField::from_dgf(&f, GT_DIR)?,
                    lane_graph_true: t.lane_graph.clone(),
                    lane_raster_true: f.field(GT_LANES)?,
                    complete: LayeredWorld::new(complete, mask)?,
                    routes: t.routes.clone(),
                    lane_width: t.lane_width,
                })
            }
        };
        Ok(Self { meta, input, obs, gt })
    }

    pub fn truth(&self) -> Result<&GroundTruth> {
        self.gt
            .as_ref()
            .ok_or_else(|| DslpError::MissingGroundTruth("world file carries no ground truth".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMeta {
    pub manifest_hash: String,
    /// Lane width of the source world, when known; graph fitting scales with it.
    pub lane_width: Option<f64>,
}

/// Predicted SLP map and DP field.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionArtifact {
    pub meta: PredictionMeta,
    pub slp: GridField,
    pub dir: DirField,
}

impl PredictionArtifact {
    pub fn write(&self, path: &Path) -> Result<()> {
        let (w, h) = self.slp.dims();
        let mut f = DgfFile::new(w, h, self.slp.cell_size());
        f.push_field(PRED_SLP, &self.slp)?;
        self.dir.push_to_dgf(&mut f, PRED_DIR)?;
        f.write(path)?;
        write_json(&sidecar(path), &self.meta)
    }

    /// Reads a prediction; a missing sidecar is allowed.
    pub fn read(path: &Path) -> Result<Self> {
        let f = DgfFile::read(path)?;
        let side = sidecar(path);
        let meta = if side.exists() {
            read_json(&side)?
        } else {
            PredictionMeta {
                manifest_hash: String::new(),
                lane_width: None,
            }
        };
        Ok(Self {
            meta,
            slp: f.field(PRED_SLP)?,
            dir: DirField::from_dgf(&f, PRED_DIR)?,
        })
    }
}

/// Lane graph JSON with its manifest hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphArtifact {
    pub manifest_hash: String,
    #[serde(flatten)]
    pub graph: LaneGraph,
}

impl GraphArtifact {
    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        let v: serde_json::Value = serde_json::from_str(&s)?;
        let graph = LaneGraph::from_json(&s)?;
        let manifest_hash = v.get("manifest_hash").and_then(|h| h.as_str()).unwrap_or_default().to_string();
        Ok(Self { manifest_hash, graph })
    }
}

/// Removes every registered output on drop unless [`OutputGuard::commit`]
/// ran, so a failing command leaves no partial artifacts behind.
#[derive(Debug, Default)]
pub struct OutputGuard {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `path` (before writing it) and returns it.
    pub fn add(&mut self, path: impl Into<PathBuf>) -> PathBuf {
        let p = path.into();
        self.paths.push(p.clone());
        p
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.paths)
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in self.paths.iter().rev() {
            if p.is_dir() {
                let _ = std::fs::remove_dir(p);
            } else {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}
