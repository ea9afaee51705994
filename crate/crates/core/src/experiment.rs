//! Train/evaluate runs on generated suites, shared by the `pipeline`
//! command and the ablation harness.

use serde::{Deserialize, Serialize};

use crate::dataset::{heldout_sample, make_worlds, training_samples, SuiteConfig, WorldBundle};
use crate::error::{DslpError, Result};
use crate::field::GridField;
use crate::geom;
use crate::synthworld::{CompletionMode, ObservationParams, TemplateKind};
use crate::trainer::{heldout_metrics, train, ArchSpec, HeldOutMetrics, HeldOutSample, Predictor, TrainConfig, TrainOutcome, TrainSample};

/// One train/held-out experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub suite: SuiteConfig,
    pub train: TrainConfig,
    pub train_worlds: usize,
    pub heldout_worlds: usize,
    /// Seed of the world suite; training seeds live in `train.seed`.
    pub seed: u64,
}

impl ExperimentConfig {
    /// 40 x 40 worlds with 4-cell lanes over the five non-trivial templates
    /// and a small predictor; a run takes seconds on one core.
    pub fn small(seed: u64) -> Self {
        let suite = SuiteConfig {
            templates: vec![
                TemplateKind::Curve,
                TemplateKind::TIntersection,
                TemplateKind::FourWay,
                TemplateKind::Fork,
                TemplateKind::Merge,
            ],
            side: 40,
            cell_size: 0.4,
            lane_width: 4.0,
            margin: None,
            observation: ObservationParams::default(),
            completion: CompletionMode::Oracle,
            augment_copies: 1,
            warp: None,
        };
        let mut train = TrainConfig::new(ArchSpec {
            in_channels: 3,
            hidden: 8,
            kernel: 5,
            bins: crate::directional::DEFAULT_BINS,
        });
        train.learning_rate = 0.1;
        train.batch_size = 8;
        train.steps = 300;
        train.schedule = crate::trainer::LrSchedule::Cosine;
        train.seed = seed;
        Self {
            suite,
            train,
            train_worlds: 50,
            heldout_worlds: 10,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.suite.templates.is_empty() {
            return Err(DslpError::Config("no templates".into()));
        }
        if self.train_worlds == 0 || self.heldout_worlds == 0 {
            return Err(DslpError::Config("train and held-out world counts must be >= 1".into()));
        }
        self.train.validate()
    }

    fn train_base(&self) -> u64 {
        self.seed.wrapping_mul(1_000_003)
    }

    fn heldout_base(&self) -> u64 {
        self.train_base().wrapping_add(500_000)
    }
}

pub struct Datasets {
    pub train_bundles: Vec<WorldBundle>,
    pub train: Vec<TrainSample>,
    pub heldout_bundles: Vec<WorldBundle>,
    pub heldout: Vec<HeldOutSample>,
}

pub fn build_datasets(config: &ExperimentConfig) -> Result<Datasets> {
    config.validate()?;
    let train_bundles = make_worlds(&config.suite, config.train_base(), config.train_worlds)?;
    let heldout_bundles = make_worlds(&config.suite, config.heldout_base(), config.heldout_worlds)?;
    let mut train = Vec::new();
    for b in &train_bundles {
        train.extend(training_samples(&config.suite, b)?);
    }
    let heldout = heldout_bundles.iter().map(heldout_sample).collect();
    Ok(Datasets {
        train_bundles,
        train,
        heldout_bundles,
        heldout,
    })
}

/// Lane cells farther than half a lane width from every observed route:
/// the false negatives of the world's observations.
pub fn unobserved_lane_cells(bundle: &WorldBundle) -> Result<GridField> {
    let gt = &bundle.gt;
    let half = gt.lane_width / 2.0;
    let observed: Vec<_> = bundle.sampled.observed_routes.iter().map(|&r| &gt.routes[r].polyline).collect();
    let (w, h) = gt.dims();
    GridField::from_fn(w, h, gt.p_true.cell_size(), |i, j| {
        if gt.lane_raster_true.get(i, j) <= 0.5 {
            return 0.0;
        }
        let c = [i as f64 + 0.5, j as f64 + 0.5];
        if observed.iter().all(|line| geom::point_polyline(c, line).0 >= half) {
            1.0
        } else {
            0.0
        }
    })
}

/// Mean `|y_hat - p_true|` pooled over the unobserved lane cells of `bundles`.
pub fn unobserved_bias(pred: &Predictor, bundles: &[WorldBundle]) -> Result<f64> {
    let (mut acc, mut n) = (0.0, 0usize);
    for b in bundles {
        let mask = unobserved_lane_cells(b)?;
        if mask.count_set() == 0 {
            continue;
        }
        let (y, _) = pred.forward(&b.input)?;
        for ((&m, &p), &t) in mask.values().iter().zip(y.values()).zip(b.gt.p_true.values()) {
            if m > 0.5 {
                acc += (p - t).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(DslpError::EmptyMask);
    }
    Ok(acc / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub alpha: String,
    pub alpha_used: Option<f64>,
    pub heldout: HeldOutMetrics,
    /// See [`unobserved_bias`]; `None` when every route was observed.
    pub unobserved_bias: Option<f64>,
}

pub struct RunResult {
    pub predictor: Predictor,
    pub outcome: TrainOutcome,
    pub summary: RunSummary,
}

/// Trains on `data` and scores the result.
pub fn run(config: &ExperimentConfig, data: &Datasets, jobs: usize) -> Result<RunResult> {
    let (predictor, outcome) = train(&data.train, &[], &config.train, jobs)?;
    let heldout = heldout_metrics(&predictor, &data.heldout, jobs)?;
    let bias = match unobserved_bias(&predictor, &data.train_bundles) {
        Ok(b) => Some(b),
        Err(DslpError::EmptyMask) => None,
        Err(e) => return Err(e),
    };
    let summary = RunSummary {
        alpha: config.train.alpha.name(),
        alpha_used: outcome.alpha_used,
        heldout,
        unobserved_bias: bias,
    };
    Ok(RunResult {
        predictor,
        outcome,
        summary,
    })
}
