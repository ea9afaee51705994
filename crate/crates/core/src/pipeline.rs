//! The end-to-end run behind the `pipeline` command: generate, train,
//! infer, fit graphs, evaluate, render, and optionally an ablation grid.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::{write_json, GraphArtifact, OutputGuard, PredictionArtifact, PredictionMeta, RunManifest};
use crate::error::Result;
use crate::evalmetrics::{aggregate, evaluate, EvalConfig, EvalReport, Metrics};
use crate::experiment::{build_datasets, run, ExperimentConfig, RunSummary};
use crate::graphgen::{fit_graph, GraphConfig};
use crate::render::render;
use crate::synthworld::CompletionMode;
use crate::trainer::{AlphaMode, TraceEntry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub experiment: ExperimentConfig,
    /// `None` derives the defaults from the lane width.
    #[serde(default)]
    pub graph: Option<GraphConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub render: bool,
    #[serde(default)]
    pub ablation: bool,
}

impl PipelineConfig {
    /// Small enough for a smoke run in seconds.
    pub fn demo(seed: u64) -> Self {
        let mut experiment = ExperimentConfig::small(seed);
        experiment.train_worlds = 10;
        experiment.heldout_worlds = 3;
        experiment.train.steps = 60;
        Self {
            experiment,
            graph: None,
            eval: EvalConfig::default(),
            render: true,
            ablation: false,
        }
    }

    pub fn graph_config(&self) -> GraphConfig {
        self.graph
            .clone()
            .unwrap_or_else(|| GraphConfig::for_lane_width(self.experiment.suite.lane_width))
    }
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub alpha: String,
    pub completion: String,
    pub augment: bool,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub manifest_hash: String,
    #[serde(flatten)]
    pub eval: EvalReport,
    pub train: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    manifest_hash: String,
    alpha_used: Option<f64>,
    trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AblationFile {
    manifest_hash: String,
    rows: Vec<AblationRow>,
}

pub struct PipelineOutput {
    pub report: PipelineReport,
    pub ablation: Option<Vec<AblationRow>>,
    pub manifest: RunManifest,
}

/// Runs the whole chain into `out_dir`. All files except `manifest.json`
/// depend only on the configuration; on error everything written so far is
/// removed.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path, jobs: usize) -> Result<PipelineOutput> {
    let started = std::time::Instant::now();
    config.experiment.validate()?;
    let mut manifest = RunManifest::new(
        "pipeline",
        serde_json::to_value(config)?,
        vec![config.experiment.seed, config.experiment.train.seed],
    );
    let hash = manifest.hash();
    let mut guard = OutputGuard::new();
    if !out_dir.exists() {
        std::fs::create_dir_all(out_dir)?;
        guard.add(out_dir);
    }

    let data = build_datasets(&config.experiment)?;
    let result = run(&config.experiment, &data, jobs)?;
    let model_path = guard.add(out_dir.join("model.bin"));
    result.predictor.save(&model_path)?;
    write_json(
        &guard.add(out_dir.join("model.json")),
        &ModelMeta {
            manifest_hash: hash.clone(),
            alpha_used: result.outcome.alpha_used,
            trace: result.outcome.trace.clone(),
        },
    )?;

    let graph_cfg = config.graph_config();
    let fitted = crate::trainer::run_indexed(data.heldout_bundles.len(), jobs, |k| {
        let b = &data.heldout_bundles[k];
        let (y, w) = result.predictor.forward(&b.input)?;
        let mut gc = graph_cfg.clone();
        gc.seed = graph_cfg.seed.wrapping_add(k as u64);
        let graph = fit_graph(&y, &w, &gc)?;
        let metrics = evaluate(&y, &w, &graph, &b.gt, &config.eval)?;
        Ok((y, w, graph, metrics))
    })?;
    let mut samples: Vec<Metrics> = Vec::with_capacity(fitted.len());
    for (k, (y, w, graph, metrics)) in fitted.into_iter().enumerate() {
        let stem = format!("heldout_{k:03}");
        let pred = PredictionArtifact {
            meta: PredictionMeta {
                manifest_hash: hash.clone(),
                lane_width: Some(data.heldout_bundles[k].gt.lane_width),
            },
            slp: y,
            dir: w,
        };
        let pred_path = guard.add(out_dir.join(format!("{stem}_pred.dgf")));
        guard.add(crate::artifact::sidecar(&pred_path));
        pred.write(&pred_path)?;
        write_json(
            &guard.add(out_dir.join(format!("{stem}_graph.json"))),
            &GraphArtifact {
                manifest_hash: hash.clone(),
                graph: graph.clone(),
            },
        )?;
        if config.render {
            let img = render(&pred.slp, Some(&pred.dir), Some(&graph))?;
            let path = guard.add(out_dir.join(format!("{stem}.ppm")));
            std::fs::write(&path, img.to_ppm_stamped(&hash))?;
        }
        samples.push(metrics);
    }
    let report = PipelineReport {
        manifest_hash: hash.clone(),
        eval: aggregate(&samples)?,
        train: result.summary.clone(),
    };
    write_json(&guard.add(out_dir.join("report.json")), &report)?;

    let ablation = if config.ablation {
        let rows = ablation_grid(&config.experiment, jobs)?;
        write_json(
            &guard.add(out_dir.join("ablation.json")),
            &AblationFile {
                manifest_hash: hash.clone(),
                rows: rows.clone(),
            },
        )?;
        std::fs::write(guard.add(out_dir.join("ablation.md")), ablation_table(&rows, &hash))?;
        Some(rows)
    } else {
        None
    };

    let manifest_path = guard.add(out_dir.join("manifest.json"));
    manifest.outputs = guard.paths().to_vec();
    manifest.wall_clock_ms = started.elapsed().as_millis();
    write_json(&manifest_path, &manifest)?;
    guard.commit();
    Ok(PipelineOutput {
        report,
        ablation,
        manifest,
    })
}

/// alpha in {auto, 0.1, mean} x completion in {oracle, passthrough} x
/// augmentation on/off, each trained from the same seeds.
pub fn ablation_grid(base: &ExperimentConfig, jobs: usize) -> Result<Vec<AblationRow>> {
    let copies = base.suite.augment_copies.max(1);
    let mut rows = Vec::new();
    for completion in [CompletionMode::Oracle, CompletionMode::Passthrough] {
        for augment in [true, false] {
            let mut cfg = base.clone();
            cfg.suite.completion = completion;
            cfg.suite.augment_copies = if augment { copies } else { 0 };
            let data = build_datasets(&cfg)?;
            for alpha in [AlphaMode::Auto, AlphaMode::Constant(0.1), AlphaMode::DatasetMean] {
                cfg.train.alpha = alpha;
                let r = run(&cfg, &data, jobs)?;
                rows.push(AblationRow {
                    alpha: alpha.name(),
                    completion: completion.name(),
                    augment,
                    summary: r.summary,
                });
            }
        }
    }
    Ok(rows)
}

/// Markdown table of an ablation grid.
pub fn ablation_table(rows: &[AblationRow], hash: &str) -> String {
    let mut s = format!("<!-- manifest {hash} -->\n");
    s.push_str("| alpha | completion | aug | NLL_SLP | NLL_DP | NLL | bias (unobserved) |\n");
    s.push_str("|---|---|---|---:|---:|---:|---:|\n");
    for r in rows {
        let h = &r.summary.heldout;
        let bias = r.summary.unobserved_bias.map_or("-".to_string(), |b| format!("{b:.4}"));
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.3} | {:.3} | {:.3} | {} |",
            r.alpha,
            r.completion,
            if r.augment { "on" } else { "off" },
            h.nll_slp,
            h.nll_dp,
            h.combined(),
            bias
        );
    }
    s
}
