//! End-to-end run: perception network, controller, composition, `μ`
//! search over the abstraction, per-region verification at the largest
//! passing `μ`, and a Monte-Carlo cross-check of the closed loop.
//!
//! Stages run one after another. Each writes its artifacts under
//! `<output_dir>/artifacts`; a trained controller is reused on the next run
//! when its cache key (a hash of everything that shapes training) matches.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::abstraction::{unsafe_cells_from_state_box, Abstraction, AbstractionError, Partition};
use crate::camera::{AircraftState, GeometryError};
use crate::chart::{StateBox, WorkingChart};
use crate::checker::{mu_search, BoundedSpec, CheckerError, MuSearchOutcome, SpecKind};
use crate::config::{ConfigError, PipelineConfig};
use crate::dynamics::{simulate_trajectory, Termination};
use crate::network::{Activation, Layer, LayeredReluNetwork, NetworkError};
use crate::perception::{assemble_perception_network, build_augmented_network, PerceptionModel};
use crate::report::{
    emit_report, AbstractionSummary, ControllerSummary, MonteCarloReport, PipelineReport, RegionSummary,
    StageTiming, Timings,
};
use crate::training::{train_controller_bc, TrainingError, TrainingReport};
use crate::verifier::{
    aggregate, verify_lifted, AggregateStatus, ChartLift, ControlEnvelope, RegionReport, VerifierError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("network: {0}")]
    Network(#[from] NetworkError),
    #[error("training: {0}")]
    Training(#[from] TrainingError),
    #[error("abstraction: {0}")]
    Abstraction(#[from] AbstractionError),
    #[error("checker: {0}")]
    Checker(#[from] CheckerError),
    #[error("verifier: {0}")]
    Verifier(#[from] VerifierError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
}

impl PipelineError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Geometry(_) => "geometry",
            PipelineError::Network(NetworkError::Parse { .. }) => "parse",
            PipelineError::Network(_) => "network",
            PipelineError::Training(_) => "training",
            PipelineError::Abstraction(_) => "abstraction",
            PipelineError::Checker(_) => "checker",
            PipelineError::Verifier(_) => "verifier",
            PipelineError::Io { .. } => "io",
            PipelineError::Artifact { .. } => "artifact",
        }
    }
}

/// Body of `error.json`, written when a run fails.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub status: &'static str,
    pub kind: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl ErrorReport {
    pub fn of(e: &PipelineError) -> Self {
        Self {
            status: "ERROR",
            kind: e.kind(),
            message: e.to_string(),
            exit_code: 1,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Independent stream seed for one stage.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    let mut x = seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Network mapping any input to `u`.
pub fn constant_controller(inputs: usize, u: f64) -> LayeredReluNetwork {
    let layer = Layer::dense(1, inputs, vec![0.0; inputs], vec![u], Activation::Identity)
        .expect("constant layer is well formed");
    LayeredReluNetwork::new(inputs, vec![layer]).expect("constant network is well formed")
}

pub fn artifacts_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.output_dir.join("artifacts")
}

pub fn load_network(path: &Path) -> Result<LayeredReluNetwork> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(LayeredReluNetwork::from_weights_str(&text)?)
}

pub fn save_network(net: &LayeredReluNetwork, path: &Path) -> Result<()> {
    write_file(path, &net.to_weights_string())
}

#[derive(Serialize, Deserialize)]
struct ControllerMeta {
    key: String,
    training: TrainingReport,
}

/// Cache key of a trained controller.
fn training_key(cfg: &PipelineConfig) -> String {
    let train = cfg.controller.train.as_ref().expect("training source");
    let key = serde_json::json!({
        "scenario": cfg.scenario,
        "perception": cfg.perception,
        "partition": cfg.partition,
        "training": train,
    });
    sha256_hex(key.to_string().as_bytes())
}

pub struct ControllerOutcome {
    pub network: LayeredReluNetwork,
    pub summary: ControllerSummary,
    pub from_cache: bool,
}

/// Loads, builds or trains the controller named by the config. A trained
/// controller is stored as `controller.json` with its training report in
/// `controller.meta.json`.
pub fn obtain_controller(cfg: &PipelineConfig, perception: &PerceptionModel) -> Result<ControllerOutcome> {
    let pixels = perception.network.output_dim();
    let dir = artifacts_dir(cfg);
    let c = &cfg.controller;
    let (network, source, training, from_cache) = if let Some(path) = &c.weights {
        (load_network(path)?, "weights", None, false)
    } else if let Some(u) = c.constant {
        (constant_controller(pixels, u), "constant", None, false)
    } else {
        let train = c.train.as_ref().expect("validated config has a source");
        let key = training_key(cfg);
        let (wpath, mpath) = (dir.join("controller.json"), dir.join("controller.meta.json"));
        let cached = std::fs::read_to_string(&mpath)
            .ok()
            .and_then(|t| serde_json::from_str::<ControllerMeta>(&t).ok())
            .filter(|m| m.key == key)
            .and_then(|m| load_network(&wpath).ok().map(|n| (n, m.training)));
        match cached {
            Some((net, report)) => (net, "train", Some(report), true),
            None => {
                let chart = cfg.chart()?;
                let p = &cfg.partition;
                let out = train_controller_bc(
                    &chart,
                    p.lower,
                    p.upper,
                    &cfg.scenario.dynamics,
                    train,
                    Some(perception),
                )?;
                save_network(&out.network, &wpath)?;
                let meta = ControllerMeta {
                    key,
                    training: out.report.clone(),
                };
                let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
                write_file(&mpath, &text)?;
                (out.network, "train", Some(out.report), false)
            }
        }
    };
    if network.input_dim() != pixels || network.output_dim() != 1 {
        return Err(NetworkError::DimensionMismatch {
            expected: pixels,
            actual: network.input_dim(),
            context: "controller must map the q×q image to one pitch rate".into(),
        }
        .into());
    }
    let summary = ControllerSummary {
        source: source.into(),
        sha256: sha256_hex(network.to_weights_string().as_bytes()),
        widths: network.widths(),
        relu_count: network.relu_count(),
        training,
    };
    Ok(ControllerOutcome {
        network,
        summary,
        from_cache,
    })
}

/// Initial cells and goal cells (unsafe for an invariant, target for a
/// reach spec) of the configured specification.
pub fn spec_cells(
    cfg: &PipelineConfig,
    chart: &WorkingChart,
    partition: &Partition,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let initial = partition.cells_intersecting_box(cfg.spec.initial_lower, cfg.spec.initial_upper);
    let goal = match &cfg.spec.goal {
        Some(g) => unsafe_cells_from_state_box(chart, partition, &g.state_box(cfg.scenario.lateral_offset))?,
        None => Vec::new(),
    };
    Ok((initial, goal))
}

pub fn bounded_spec(cfg: &PipelineConfig, abs: &Abstraction, initial: Vec<usize>, goal: Vec<usize>) -> BoundedSpec {
    match cfg.spec.kind {
        SpecKind::Invariant => {
            let mut bad = goal;
            if cfg.abstraction.sink_is_unsafe {
                bad.push(abs.sink());
            }
            BoundedSpec::invariant(cfg.spec.horizon, initial, bad)
        }
        SpecKind::Reach => BoundedSpec::reach(cfg.spec.horizon, initial, goal),
    }
}

/// Verifies `|NN_aug − u_cell| ≤ μ` over each cell, where `u_cell` is the
/// control at the cell's anchor. Cells run one at a time so that the
/// per-cell times add up to the stage time.
pub fn verify_cells(
    aug: &LayeredReluNetwork,
    abs: &Abstraction,
    cells: &[usize],
    mu: f64,
    cfg: &PipelineConfig,
    perception_layers: usize,
) -> Result<Vec<RegionReport>> {
    let lift = ChartLift { chart: &abs.chart };
    let base = stage_seed(cfg.seed, 3);
    cells
        .iter()
        .map(|&id| {
            let start = Instant::now();
            let control = abs.cells[id].control.ok_or_else(|| {
                PipelineError::Abstraction(AbstractionError::Invalid(format!("cell {id} has no nominal control")))
            })?;
            let (lo, hi) = abs.partition.cell_box(id);
            let env = ControlEnvelope {
                center: vec![control],
                radius: mu,
            };
            let opts = cfg.verification.options(stage_seed(base, id as u64), perception_layers);
            let mut verdict = verify_lifted(aug, &lift, &lo, &hi, &env, &opts)?;
            verdict.millis = start.elapsed().as_secs_f64() * 1e3;
            Ok(RegionReport {
                region_id: id,
                center: abs.partition.center(id).to_vec(),
                verdict,
            })
        })
        .collect()
}

/// Closed-loop rollouts from uniformly drawn points of the initial working
/// box, checked against `goal`.
pub fn monte_carlo(
    cfg: &PipelineConfig,
    chart: &WorkingChart,
    aug: &LayeredReluNetwork,
    goal: Option<&StateBox>,
) -> MonteCarloReport {
    let n = cfg.monte_carlo.trajectories;
    let steps = cfg.monte_carlo_steps();
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.seed, 4));
    let (lo, hi) = (cfg.spec.initial_lower, cfg.spec.initial_upper);
    let mut starts = Vec::with_capacity(n);
    let mut rejected = 0;
    while starts.len() < n && rejected < 100 * n.max(1) {
        let w: [f64; 3] = std::array::from_fn(|a| {
            if hi[a] > lo[a] {
                rng.gen_range(lo[a]..=hi[a])
            } else {
                lo[a]
            }
        });
        match chart.state_at(w) {
            Ok(s) => starts.push(s),
            Err(_) => rejected += 1,
        }
    }
    let p = &cfg.partition;
    let on_grid = |s: &AircraftState| {
        chart
            .working_coords(s)
            .map(|w| (0..3).all(|a| p.lower[a] <= w[a] && w[a] <= p.upper[a]))
            .unwrap_or(false)
    };
    let runs: Vec<(Termination, bool, bool)> = starts
        .par_iter()
        .map(|s| {
            let t = simulate_trajectory(s, aug, &chart.geometry, &cfg.scenario.dynamics, steps, false);
            let hit = goal.is_some_and(|g| t.records.iter().any(|r| g.contains(&r.state)));
            let left = t.records.iter().any(|r| !on_grid(&r.state));
            (t.termination, hit, left)
        })
        .collect();
    let count = |f: &dyn Fn(&(Termination, bool, bool)) -> bool| runs.iter().filter(|r| f(r)).count();
    MonteCarloReport {
        trajectories: starts.len(),
        steps,
        rejected_starts: rejected,
        completed: count(&|r| r.0 == Termination::Completed),
        geometry_terminated: count(&|r| matches!(r.0, Termination::Geometry(_))),
        non_finite: count(&|r| r.0 == Termination::NonFinite),
        goal_hits: count(&|r| r.1),
        left_grid: count(&|r| r.2),
    }
}

#[derive(Debug)]
pub struct PipelineRun {
    pub report: PipelineReport,
    pub timings: Timings,
}

struct Clock {
    start: Instant,
    stages: Vec<StageTiming>,
}

impl Clock {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.stages.push(StageTiming {
            stage: stage.into(),
            millis: t.elapsed().as_secs_f64() * 1e3,
        });
        out
    }
}

/// Runs every stage and writes reports and artifacts under the config's
/// output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let mut clock = Clock {
        start: Instant::now(),
        stages: Vec::new(),
    };
    let dir = artifacts_dir(cfg);
    let chart = cfg.chart()?;
    let partition = Partition::new(cfg.partition)?;

    let model = clock.time("perception", || assemble_perception_network(&cfg.perception_spec()))?;
    save_network(&model.network, &dir.join("perception.json"))?;
    let controller = clock.time("controller", || obtain_controller(cfg, &model))?;
    let aug = clock.time("compose", || build_augmented_network(&model.network, &controller.network))?;
    save_network(&aug, &dir.join("augmented.json"))?;

    let abs = clock.time("abstraction", || {
        Abstraction::prepare(&chart, &partition, &aug, &cfg.scenario.dynamics, cfg.abstraction.eta)
    })?;
    let cells_json = serde_json::to_string_pretty(&abs.cells).expect("cells serialize");
    write_file(&dir.join("cells.json"), &cells_json)?;
    let (initial, goal) = spec_cells(cfg, &chart, &partition)?;
    let spec = bounded_spec(cfg, &abs, initial.clone(), goal.clone());
    let unsafe_cells = if cfg.spec.kind == SpecKind::Invariant { goal.clone() } else { Vec::new() };

    let mut fsm_texts = Vec::new();
    let search: MuSearchOutcome = clock.time("mu_search", || {
        mu_search(&cfg.search.mu_values, &spec, cfg.search.exhaustive, |mu| {
            let fsm = abs.fsm(mu, &unsafe_cells);
            fsm_texts.push((mu, fsm.to_text()));
            fsm
        })
    })?;
    for (mu, text) in &fsm_texts {
        write_file(&dir.join(format!("fsm_mu_{mu}.txt")), text)?;
    }

    let traversable = abs.traversable_cells();
    let mut notes = Vec::new();
    let (status, regions, region_summary, mc) = match search.mu_max {
        None => {
            notes.push(format!(
                "the specification fails already at the smallest mu = {}",
                cfg.search.mu_values[0]
            ));
            (AggregateStatus::NoFeasibleMu, Vec::new(), None, None)
        }
        Some(mu_max) => {
            let perception_layers = model.network.layers().len();
            let regions = clock.time("verification", || {
                verify_cells(&aug, &abs, &traversable, mu_max, cfg, perception_layers)
            })?;
            let status = aggregate(&regions);
            let goal_box = cfg.spec.goal.map(|g| g.state_box(cfg.scenario.lateral_offset));
            let mc = clock.time("monte_carlo", || monte_carlo(cfg, &chart, &aug, goal_box.as_ref()));
            let summary = RegionSummary::of(&regions);
            (status, regions, Some(summary), Some(mc))
        }
    };
    let skipped = abs.cells.len() - traversable.len();
    if skipped > 0 {
        notes.push(format!(
            "{skipped} cells hold no usable chart state; they lead to the sink and are not verified"
        ));
    }
    if status == AggregateStatus::UnsafeEnvelope {
        notes.push(
            "a VIOLATED region means the network leaves the control envelope the abstraction assumed; \
             it does not by itself show that the closed loop is unsafe"
                .into(),
        );
    }
    if let (Some(m), SpecKind::Invariant) = (&mc, cfg.spec.kind) {
        if m.goal_hits > 0 && status == AggregateStatus::Safe {
            notes.push(format!(
                "{} simulated trajectories entered the unsafe box despite a SAFE verdict",
                m.goal_hits
            ));
        }
    }

    let region_millis: Vec<(usize, f64)> = regions.iter().map(|r| (r.region_id, r.verdict.millis)).collect();
    let report = PipelineReport {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        status,
        exit_code: status.exit_code(),
        mu_max: search.mu_max,
        perception: model.manifest(),
        controller: controller.summary,
        abstraction: AbstractionSummary {
            cells: abs.cells.len(),
            traversable: traversable.len(),
            eta: abs.eta,
            sink_is_unsafe: cfg.abstraction.sink_is_unsafe,
            initial_cells: initial,
            goal_cells: goal,
        },
        region_summary,
        regions,
        monte_carlo: mc,
        notes,
        config: cfg.clone(),
        mu_search: search,
    };
    let timings = Timings {
        total_millis: clock.start.elapsed().as_secs_f64() * 1e3,
        stages: clock.stages,
        controller_from_cache: controller.from_cache,
        regions: region_millis,
        mu_steps: report.mu_search.steps.iter().map(|s| (s.mu, s.millis)).collect(),
    };
    emit_report(&cfg.output_dir, &report, &timings).map_err(io_err(&cfg.output_dir))?;
    Ok(PipelineRun { report, timings })
}
