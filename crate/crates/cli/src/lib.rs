//! Batch entry points behind the `artps` binary.

pub mod eval;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use artps_core::curiosity::{fit_model, parse_lambda_sweep, sweep_lambda, CuriosityModel, SweepResult, TrainResult, TrainingExample};
use artps_core::synth::{generate_scene, SceneBundle, SceneSpec};
use artps_core::{decode_frame, frame_id, run_pipeline, Error as CoreError, PipelineConfig, RunReport};
use serde::{Deserialize, Serialize};

pub use eval::{cmd_eval, EvalSummary};

/// Loads a config file, pointing at the schema on failure.
pub fn load_config(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    match PipelineConfig::load(path) {
        Ok(cfg) => Ok(cfg),
        Err(CoreError::Config(msg)) => bail!(
            "config {} does not match the schema: {msg} (run `artps schema` for the full schema)",
            path.display()
        ),
        Err(e) => Err(e).with_context(|| format!("reading config {}", path.display())),
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub config: Option<PathBuf>,
    pub image: PathBuf,
    pub depth: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: PathBuf,
    pub no_timings: bool,
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

/// Runs the pipeline on one frame and writes the report and image artifacts to `out`.
pub fn cmd_run(args: &RunArgs) -> anyhow::Result<RunReport> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(m) = &args.model {
        let text = std::fs::read_to_string(m).with_context(|| format!("reading model {}", m.display()))?;
        cfg.curiosity.model = CuriosityModel::from_json(&text).with_context(|| format!("model {}", m.display()))?;
        cfg.validate()?;
    }
    if args.no_timings {
        cfg.io.timings = false;
    }
    let image = read(&args.image)?;
    let depth = args.depth.as_deref().map(read).transpose()?;
    let frame = decode_frame(&image, depth.as_deref(), &cfg).context("decoding frame")?;
    let id = frame_id(&image, depth.as_deref());
    let out = run_pipeline(&frame, &cfg, &id, None)?;
    out.write_artifacts(&args.out, cfg.io.write_components)
        .with_context(|| format!("writing artifacts to {}", args.out.display()))?;
    for w in &out.report.warnings {
        log::warn!("{w}");
    }
    log::info!("frame {id}: {} region(s)", out.report.regions.len());
    Ok(out.report)
}

/// One region's raw features, as exported by `eval --export` and read by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub frame: String,
    pub region_id: u32,
    pub features: artps_core::curiosity::RegionFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub frame: String,
    pub region_id: u32,
    /// Grade on the 0-3 scale.
    pub relevance: f64,
}

#[derive(Debug, Clone)]
pub enum Regularization {
    Fixed(f64),
    /// `a:b:n` sweep spec.
    Sweep(String),
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub features: PathBuf,
    pub labels: PathBuf,
    pub regularization: Regularization,
    pub out: PathBuf,
    pub val_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub model: CuriosityModel,
    pub examples: usize,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepResult>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Joins feature and label records on (frame, region id).
pub fn join_examples(features: &[FeatureRecord], labels: &[LabelRecord]) -> anyhow::Result<Vec<TrainingExample>> {
    if labels.is_empty() {
        bail!("labels file is empty");
    }
    let mut out = Vec::with_capacity(labels.len());
    for l in labels {
        if !(0.0..=artps_core::curiosity::RELEVANCE_MAX).contains(&l.relevance) {
            bail!("relevance {} of {}#{} is outside 0-3", l.relevance, l.frame, l.region_id);
        }
        let f = features
            .iter()
            .find(|f| f.frame == l.frame && f.region_id == l.region_id)
            .with_context(|| format!("no features for labeled region {}#{}", l.frame, l.region_id))?;
        out.push(TrainingExample {
            frame: l.frame.clone(),
            region_id: l.region_id,
            features: f.features,
            relevance: l.relevance,
        });
    }
    Ok(out)
}

/// Fits curiosity weights, optionally choosing lambda by held-out nDCG, and writes the model.
pub fn cmd_train(args: &TrainArgs) -> anyhow::Result<TrainOutcome> {
    let features: Vec<FeatureRecord> = read_json(&args.features)?;
    let labels: Vec<LabelRecord> = read_json(&args.labels)?;
    let examples = join_examples(&features, &labels)?;
    let (lambda, sweep) = match &args.regularization {
        Regularization::Fixed(l) => (*l, None),
        Regularization::Sweep(spec) => {
            let lambdas = parse_lambda_sweep(spec)?;
            let s = sweep_lambda(&examples, &lambdas, args.val_fraction, args.seed)?;
            (s.best_lambda, Some(s))
        }
    };
    let (model, TrainResult { iterations, converged, .. }) = fit_model(&examples, lambda)?;
    if !converged {
        log::warn!("weight fit stopped at the iteration cap");
    }
    let mut text = serde_json::to_string_pretty(&model)?;
    text.push('\n');
    std::fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(TrainOutcome {
        model,
        examples: examples.len(),
        iterations,
        converged,
        sweep,
    })
}

/// Generates the scene described by the spec file and writes the bundle to `out`.
pub fn cmd_synth(spec: &Path, out: &Path) -> anyhow::Result<SceneBundle> {
    let spec: SceneSpec = read_json(spec)?;
    let bundle = generate_scene(&spec)?;
    bundle
        .write_to(out)
        .with_context(|| format!("writing bundle to {}", out.display()))?;
    if bundle.truth.placement_warnings > 0 {
        log::warn!("{} primitive(s) could not be placed", bundle.truth.placement_warnings);
    }
    Ok(bundle)
}

#[derive(Debug, Clone)]
pub struct ServeArgs {
    pub addr: String,
    pub config: Option<PathBuf>,
    pub store: PathBuf,
}

/// Binds, prints the listening address on stdout, and serves until `shutdown` resolves.
pub async fn cmd_serve(
    args: &ServeArgs,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let state = artps_service::AppState::new(artps_service::ServiceOptions {
        store_dir: args.store.clone(),
        default_config: cfg,
    })
    .with_context(|| format!("creating frame store {}", args.store.display()))?;
    let listener = tokio::net::TcpListener::bind(&args.addr)
        .await
        .with_context(|| format!("binding {}", args.addr))?;
    println!("artps service listening on http://{}", listener.local_addr()?);
    artps_service::serve(listener, state, shutdown).await?;
    Ok(())
}
