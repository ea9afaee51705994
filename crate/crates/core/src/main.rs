use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dslp::artifact::{
    read_json, sidecar, write_json, GraphArtifact, OutputGuard, PredictionArtifact, PredictionMeta, RunManifest, TruthMeta,
    WorldArtifact, WorldMeta,
};
use dslp::augment::{sample_warp, warp_world, WarpParams, DEFAULT_COUNT};
use dslp::dataset::train_sample;
use dslp::evalmetrics::{aggregate, evaluate, EvalConfig};
use dslp::graphgen::{fit_graph, GraphConfig};
use dslp::pipeline::{ablation_table, run_pipeline, PipelineConfig};
use dslp::render::render;
use dslp::synthworld::{
    complete_world, generate_world, sample_observations_detailed, CompletionMode, ObservationParams, TemplateKind,
    WorldTemplate,
};
use dslp::trainer::{heldout_metrics, train, AlphaMode, ArchSpec, HeldOutSample, LrSchedule, Predictor, TrainConfig};
use dslp::{DslpError, Result};

#[derive(Parser)]
#[command(name = "dslp", version, about = "Directional soft lane probability fields from partial observations")]
struct Cli {
    /// Worker threads for per-sample work; 1 is the reproducibility reference.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world with observations and ground truth.
    Gen(GenArgs),
    /// Write randomly warped copies of a world.
    Augment(AugmentArgs),
    /// Train a predictor on a directory of worlds.
    Train(TrainArgs),
    /// Predict SLP and DP fields for a world.
    Infer(InferArgs),
    /// Fit a lane graph to predicted fields.
    Graph(GraphArgs),
    /// Score fields and a graph against ground truth.
    Eval(EvalArgs),
    /// Render fields and/or a graph as a binary PPM.
    Render(RenderArgs),
    /// Run generate, train, infer, graph, eval and render from one config.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    template: TemplateKind,
    #[arg(long, env = "DSLP_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.3)]
    rho: f64,
    #[arg(long, default_value_t = 128)]
    side: usize,
    /// Lane width in cells.
    #[arg(long, default_value_t = 8.75)]
    lane_width: f64,
    #[arg(long, default_value_t = 0.4)]
    cell_size: f64,
    #[arg(long, default_value_t = 4)]
    trajectories: usize,
    /// oracle, passthrough or noisy[:sigma].
    #[arg(long, default_value = "oracle")]
    completion: CompletionMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, env = "DSLP_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_COUNT)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of world files (`*.dgf` with sidecars).
    #[arg(long)]
    data: PathBuf,
    /// Directory of generated worlds scored during training.
    #[arg(long)]
    heldout: Option<PathBuf>,
    /// JSON training config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<AlphaMode>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// constant or cosine.
    #[arg(long)]
    schedule: Option<LrSchedule>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long, env = "DSLP_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    field: PathBuf,
    #[arg(long, env = "DSLP_SEED", default_value_t = 0)]
    seed: u64,
    /// Overrides the lane width recorded with the prediction.
    #[arg(long)]
    lane_width: Option<f64>,
    /// JSON graph config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// World file carrying ground truth.
    #[arg(long)]
    gt: PathBuf,
    /// Graph raster width in cells (default: lane width).
    #[arg(long)]
    raster_width: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Prediction file; a world file renders its ground truth.
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Canvas size `WxH` when only a graph is rendered.
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the suite and training seeds.
    #[arg(long, env = "DSLP_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    ablation: bool,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.jobs.max(1);
    let res = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Train(a) => cmd_train(a, jobs),
        Command::Infer(a) => cmd_infer(a),
        Command::Graph(a) => cmd_graph(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Render(a) => cmd_render(a),
        Command::Pipeline(a) => cmd_pipeline(a, jobs),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn world_meta(hash: &str, template: &str, seed: u64, input: &dslp::field::LayeredWorld) -> WorldMeta {
    WorldMeta {
        manifest_hash: hash.into(),
        template: template.into(),
        seed,
        channels: input.channels().iter().map(|(n, _)| n.clone()).collect(),
        trajectories: Vec::new(),
        truth: None,
    }
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let mut template = WorldTemplate::scaled(a.template, a.side, a.lane_width);
    template.cell_size = a.cell_size;
    let params = ObservationParams {
        rho: a.rho,
        trajectories_per_route: a.trajectories,
        ..ObservationParams::default()
    };
    let config = serde_json::json!({ "template": template, "observation": params, "completion": a.completion });
    let manifest = RunManifest::new("gen", config, vec![a.seed]);
    let hash = manifest.hash();

    let (partial, gt) = generate_world(&template, a.seed)?;
    let sampled = sample_observations_detailed(&gt, &params, a.seed.wrapping_mul(31).wrapping_add(7))?;
    let input = complete_world(&partial, &gt, a.completion, a.seed.wrapping_mul(17).wrapping_add(3))?;
    let mut meta = world_meta(&hash, a.template.name(), a.seed, &input);
    meta.trajectories = sampled.obs.trajectories.clone();
    meta.truth = Some(TruthMeta {
        lane_width: gt.lane_width,
        routes: gt.routes.clone(),
        lane_graph: gt.lane_graph_true.clone(),
        observed_routes: sampled.observed_routes.clone(),
    });
    let world = WorldArtifact {
        meta,
        input,
        obs: sampled.obs,
        gt: Some(gt),
    };
    let mut guard = OutputGuard::new();
    guard.add(&a.out);
    guard.add(sidecar(&a.out));
    world.write(&a.out)?;
    guard.commit();
    Ok(())
}

fn cmd_augment(a: AugmentArgs) -> Result<()> {
    let mut manifest = RunManifest::new("augment", serde_json::json!({ "count": a.count }), vec![a.seed]);
    manifest.add_input(&a.input)?;
    let hash = manifest.hash();
    let src = WorldArtifact::read(&a.input)?;
    let (w, h) = src.input.dims();
    let params = WarpParams::for_grid(w);
    let mut guard = OutputGuard::new();
    if !a.out.exists() {
        std::fs::create_dir_all(&a.out)?;
        guard.add(&a.out);
    }
    let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("world");
    for k in 0..a.count {
        let seed = a.seed.wrapping_mul(1000).wrapping_add(k as u64);
        let spec = sample_warp(seed, &params, w, h)?;
        let (input, obs) = warp_world(&src.input, &src.obs, &spec)?;
        let mut meta = world_meta(&hash, &src.meta.template, seed, &input);
        meta.trajectories = obs.trajectories.clone();
        let out = guard.add(a.out.join(format!("{stem}_aug{k:03}.dgf")));
        guard.add(sidecar(&out));
        WorldArtifact {
            meta,
            input,
            obs,
            gt: None,
        }
        .write(&out)?;
    }
    guard.commit();
    Ok(())
}

/// World files of a directory in name order.
fn world_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "dgf") && sidecar(p).exists())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(DslpError::EmptyDataset);
    }
    Ok(files)
}

fn cmd_train(a: TrainArgs, jobs: usize) -> Result<()> {
    let files = world_files(&a.data)?;
    let worlds = files.iter().map(|p| WorldArtifact::read(p)).collect::<Result<Vec<_>>>()?;
    let samples = worlds
        .iter()
        .map(|w| train_sample(&w.input, &w.obs))
        .collect::<Result<Vec<_>>>()?;
    let channels = worlds[0].input.channel_count();
    let mut cfg = match &a.config {
        Some(p) => read_json::<TrainConfig>(p)?,
        None => TrainConfig::new(ArchSpec::default_for(channels)),
    };
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.schedule {
        cfg.schedule = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let hidden = a.hidden.unwrap_or(cfg.arch.hidden);
    let kernel = a.kernel.unwrap_or(cfg.arch.kernel);
    cfg.arch = ArchSpec::new(channels, hidden, kernel, cfg.arch.bins)?;

    let heldout_files = match &a.heldout {
        Some(d) => world_files(d)?,
        None => Vec::new(),
    };
    let heldout = heldout_files
        .iter()
        .map(|p| {
            let w = WorldArtifact::read(p)?;
            let gt = w.truth()?;
            Ok(HeldOutSample {
                input: w.input.clone(),
                lane_raster: gt.lane_raster_true.clone(),
                road: gt.road().clone(),
                dir_true: gt.dir_true.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = RunManifest::new("train", serde_json::to_value(&cfg)?, vec![cfg.seed]);
    for p in files.iter().chain(&heldout_files) {
        manifest.add_input(p)?;
    }
    let hash = manifest.hash();
    let (pred, outcome) = train(&samples, &heldout, &cfg, jobs)?;
    let final_heldout = match outcome.final_heldout {
        Some(m) => Some(m),
        None if !heldout.is_empty() => Some(heldout_metrics(&pred, &heldout, jobs)?),
        None => None,
    };
    let mut guard = OutputGuard::new();
    guard.add(&a.out);
    pred.save(&a.out)?;
    write_json(
        &guard.add(sidecar(&a.out)),
        &serde_json::json!({
            "manifest_hash": hash,
            "config": cfg,
            "alpha_used": outcome.alpha_used,
            "final_heldout": final_heldout,
            "trace": outcome.trace,
        }),
    )?;
    guard.commit();
    Ok(())
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let mut manifest = RunManifest::new("infer", serde_json::Value::Null, vec![]);
    manifest.add_input(&a.model)?;
    manifest.add_input(&a.world)?;
    let hash = manifest.hash();
    let pred = Predictor::load(&a.model)?;
    let world = WorldArtifact::read(&a.world)?;
    let (slp, dir) = pred.forward(&world.input)?;
    let out = PredictionArtifact {
        meta: PredictionMeta {
            manifest_hash: hash,
            lane_width: world.meta.truth.as_ref().map(|t| t.lane_width),
        },
        slp,
        dir,
    };
    let mut guard = OutputGuard::new();
    guard.add(&a.out);
    guard.add(sidecar(&a.out));
    out.write(&a.out)?;
    guard.commit();
    Ok(())
}

fn cmd_graph(a: GraphArgs) -> Result<()> {
    let pred = PredictionArtifact::read(&a.field)?;
    let mut cfg = match &a.config {
        Some(p) => read_json::<GraphConfig>(p)?,
        None => {
            let lw = a.lane_width.or(pred.meta.lane_width).ok_or_else(|| {
                DslpError::InvalidArgument("lane width unknown: pass --lane-width or --config".into())
            })?;
            GraphConfig::for_lane_width(lw)
        }
    };
    if let (Some(lw), Some(_)) = (a.lane_width, &a.config) {
        cfg.uturn_distance = 2.0 * lw;
    }
    cfg.seed = a.seed;
    let mut manifest = RunManifest::new("graph", serde_json::to_value(&cfg)?, vec![a.seed]);
    manifest.add_input(&a.field)?;
    let graph = fit_graph(&pred.slp, &pred.dir, &cfg)?;
    let mut guard = OutputGuard::new();
    write_json(
        &guard.add(&a.out),
        &GraphArtifact {
            manifest_hash: manifest.hash(),
            graph,
        },
    )?;
    guard.commit();
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = EvalConfig {
        raster_width: a.raster_width,
    };
    let mut manifest = RunManifest::new("eval", serde_json::to_value(&cfg)?, vec![]);
    for p in [&a.pred, &a.graph, &a.gt] {
        manifest.add_input(p)?;
    }
    let pred = PredictionArtifact::read(&a.pred)?;
    let graph = GraphArtifact::read(&a.graph)?.graph;
    let world = WorldArtifact::read(&a.gt)?;
    let metrics = evaluate(&pred.slp, &pred.dir, &graph, world.truth()?, &cfg)?;
    let report = aggregate(&[metrics])?;
    let mut value = serde_json::to_value(&report)?;
    value["manifest_hash"] = manifest.hash().into();
    let mut guard = OutputGuard::new();
    write_json(&guard.add(&a.out), &value)?;
    guard.commit();
    Ok(())
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || DslpError::InvalidArgument(format!("size `{s}`: expected WxH"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    Ok((w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?))
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let mut manifest = RunManifest::new("render", serde_json::Value::Null, vec![]);
    for p in a.field.iter().chain(&a.graph) {
        manifest.add_input(p)?;
    }
    let graph = a.graph.as_deref().map(GraphArtifact::read).transpose()?.map(|g| g.graph);
    let img = match (&a.field, &a.size) {
        (Some(path), _) => {
            let file = dslp::dgf::DgfFile::read(path)?;
            if file.has("slp") {
                let p = PredictionArtifact::read(path)?;
                render(&p.slp, Some(&p.dir), graph.as_ref())?
            } else if file.has("gt_p_true") {
                let w = WorldArtifact::read(path)?;
                let gt = w.truth()?;
                render(&gt.p_true, Some(&gt.dir_true), graph.as_ref())?
            } else {
                return Err(DslpError::Format(format!(
                    "{}: neither a prediction nor a world file",
                    path.display()
                )));
            }
        }
        (None, Some(size)) if graph.is_some() => {
            let (w, h) = parse_size(size)?;
            render(&dslp::field::GridField::zeros(w, h, 1.0)?, None, graph.as_ref())?
        }
        _ => return Err(DslpError::InvalidArgument("render needs --field, or --graph with --size".into())),
    };
    let mut guard = OutputGuard::new();
    std::fs::write(guard.add(&a.out), img.to_ppm_stamped(&manifest.hash()))?;
    guard.commit();
    Ok(())
}

fn cmd_pipeline(a: PipelineArgs, jobs: usize) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<PipelineConfig>(p)?,
        None => PipelineConfig::demo(0),
    };
    if let Some(s) = a.seed {
        cfg.experiment.seed = s;
        cfg.experiment.train.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.experiment.train.steps = s;
    }
    if a.ablation {
        cfg.ablation = true;
    }
    let out = run_pipeline(&cfg, &a.out, jobs)?;
    let r = &out.report.eval;
    println!(
        "nll_slp {:.4}  nll_dp {:.4}  nll {:.4}  dir_acc {:.4}  iou {:.4}  f1 {:.4}",
        r.nll_slp, r.nll_dp, r.nll_total, r.dir_acc, r.iou, r.f1
    );
    if let Some(rows) = &out.ablation {
        print!("{}", ablation_table(rows, &out.report.manifest_hash));
    }
    Ok(())
}
