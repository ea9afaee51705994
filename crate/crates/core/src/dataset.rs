//! Turns generated worlds into training and held-out samples.

use serde::{Deserialize, Serialize};

use crate::augment::{sample_warp, warp_world, WarpParams};
use crate::directional::{encode_trajectories, DEFAULT_BINS, DEFAULT_KAPPA};
use crate::error::Result;
use crate::field::{LayeredWorld, ObservationSet};
use crate::synthworld::{
    complete_world, generate_world, sample_observations_detailed, CompletionMode, GroundTruth, ObservationParams,
    SampledObservations, TemplateKind, WorldTemplate,
};
use crate::trainer::{HeldOutSample, TrainSample};

/// Everything needed to build a suite of worlds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub templates: Vec<TemplateKind>,
    /// Grid side in cells.
    pub side: usize,
    pub cell_size: f64,
    pub lane_width: f64,
    /// Road margin in cells; `None` keeps the template default.
    pub margin: Option<f64>,
    pub observation: ObservationParams,
    pub completion: CompletionMode,
    /// Warped copies added per training world (0 disables augmentation).
    pub augment_copies: usize,
    /// Warp ranges; `None` uses the grid defaults.
    pub warp: Option<WarpParams>,
}

impl SuiteConfig {
    pub fn template(&self, kind: TemplateKind) -> WorldTemplate {
        let mut t = WorldTemplate::scaled(kind, self.side, self.lane_width);
        t.cell_size = self.cell_size;
        if let Some(m) = self.margin {
            t.margin = m;
        }
        t
    }

    pub fn warp_params(&self) -> WarpParams {
        self.warp.unwrap_or_else(|| WarpParams::for_grid(self.side))
    }
}

/// A generated world with its observations and completed predictor input.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldBundle {
    pub kind: TemplateKind,
    pub seed: u64,
    pub partial: LayeredWorld,
    pub gt: GroundTruth,
    pub sampled: SampledObservations,
    pub input: LayeredWorld,
}

/// Seeds of the generator, the observation sampler and the completion stub
/// are decorrelated from one world seed.
pub fn make_world(config: &SuiteConfig, kind: TemplateKind, seed: u64) -> Result<WorldBundle> {
    let template = config.template(kind);
    let (partial, gt) = generate_world(&template, seed)?;
    let sampled = sample_observations_detailed(&gt, &config.observation, seed.wrapping_mul(31).wrapping_add(7))?;
    let input = complete_world(&partial, &gt, config.completion, seed.wrapping_mul(17).wrapping_add(3))?;
    Ok(WorldBundle {
        kind,
        seed,
        partial,
        gt,
        sampled,
        input,
    })
}

/// Template `k % templates.len()` with seed `base + k` for `k in 0..count`.
pub fn make_worlds(config: &SuiteConfig, base_seed: u64, count: usize) -> Result<Vec<WorldBundle>> {
    (0..count)
        .map(|k| {
            let kind = config.templates[k % config.templates.len()];
            make_world(config, kind, base_seed.wrapping_add(k as u64))
        })
        .collect()
}

pub fn train_sample(input: &LayeredWorld, obs: &ObservationSet) -> Result<TrainSample> {
    let (w, h) = input.dims();
    Ok(TrainSample {
        input: input.clone(),
        labels: obs.pos_mask.clone(),
        region: obs.region(),
        dir_target: encode_trajectories(&obs.trajectories, w, h, input.cell_size(), DEFAULT_BINS, DEFAULT_KAPPA)?,
    })
}

/// The world itself plus `augment_copies` warped copies.
pub fn training_samples(config: &SuiteConfig, bundle: &WorldBundle) -> Result<Vec<TrainSample>> {
    let mut out = vec![train_sample(&bundle.input, &bundle.sampled.obs)?];
    let params = config.warp_params();
    let (w, h) = bundle.input.dims();
    for c in 0..config.augment_copies {
        let spec = sample_warp(bundle.seed.wrapping_mul(1000).wrapping_add(c as u64 + 1), &params, w, h)?;
        let (world, obs) = warp_world(&bundle.input, &bundle.sampled.obs, &spec)?;
        if obs.region().count_set() == 0 {
            continue;
        }
        out.push(train_sample(&world, &obs)?);
    }
    Ok(out)
}

pub fn heldout_sample(bundle: &WorldBundle) -> HeldOutSample {
    HeldOutSample {
        input: bundle.input.clone(),
        lane_raster: bundle.gt.lane_raster_true.clone(),
        road: bundle.gt.road().clone(),
        dir_true: bundle.gt.dir_true.clone(),
    }
}
