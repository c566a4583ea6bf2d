//! `lander`: command-line front end.
//!
//! Exit codes: 0 SAFE (or success), 2 UNSAFE-ENVELOPE, 3 UNKNOWN,
//! 4 NO-FEASIBLE-MU, 1 error. `check-fsm` exits 0 when the property holds
//! and 2 when it fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lander_core::abstraction::{Abstraction, Fsm, Partition};
use lander_core::checker::{check, export_cnf, BoundedSpec, SpecKind};
use lander_core::config::PipelineConfig;
use lander_core::dynamics::simulate_trajectory;
use lander_core::network::NetworkError;
use lander_core::perception::{assemble_perception_network, build_augmented_network};
use lander_core::pipeline::{
    artifacts_dir, load_network, run_pipeline, save_network, spec_cells, verify_cells,
    ErrorReport, PipelineError,
};
use lander_core::report::{write_regions_csv, RegionSummary};
use lander_core::training::{train_controller_bc, TrainingConfig};
use lander_core::verifier::aggregate;
use lander_core::MonoImage;

type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Parser)]
#[command(name = "lander", version, about = "Verify a vision-based landing controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the camera image of a state as ASCII.
    Render {
        #[arg(long)]
        config: PathBuf,
        /// Pitch, height and distance: `theta,y,z`.
        #[arg(long, value_parser = parse_triple)]
        state: [f64; 3],
        /// Also evaluate this perception network and compare.
        #[arg(long)]
        network: Option<PathBuf>,
    },
    /// Build the perception network and write its weights.
    BuildPerception {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<output_dir>/artifacts/perception.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compose perception and controller into the augmented network.
    Compose {
        #[arg(long)]
        perception: PathBuf,
        #[arg(long)]
        controller: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the closed loop from one state and print the trajectory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Augmented network weights.
        #[arg(long)]
        network: PathBuf,
        #[arg(long, value_parser = parse_triple)]
        state: [f64; 3],
        #[arg(long, default_value_t = 20)]
        steps: usize,
        /// Include ASCII images in the output.
        #[arg(long)]
        images: bool,
    },
    /// Build the finite-state abstraction at one `mu` and write it as text.
    Abstract {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a bounded property on an FSM file.
    CheckFsm {
        #[arg(long)]
        fsm: PathBuf,
        #[arg(long, value_enum, default_value = "invariant")]
        kind: Kind,
        #[arg(long)]
        horizon: usize,
        /// Comma-separated initial states.
        #[arg(long, value_delimiter = ',', required = true)]
        initial: Vec<usize>,
        /// Comma-separated unsafe (invariant) or target (reach) states.
        #[arg(long, value_delimiter = ',')]
        goal: Vec<usize>,
        /// Treat the sink state as unsafe as well.
        #[arg(long)]
        sink_unsafe: bool,
        /// Also write the DIMACS encoding here.
        #[arg(long)]
        cnf: Option<PathBuf>,
    },
    /// Verify the control envelope of every traversable cell at one `mu`.
    VerifyRegions {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        mu: f64,
        /// Restrict to these cells.
        #[arg(long, value_delimiter = ',')]
        cells: Vec<usize>,
        /// CSV output; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage and write the report.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the controller by behavioral cloning.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Kind {
    Invariant,
    Reach,
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated numbers".to_string())
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    Ok(PipelineConfig::load(path)?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.into(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.into(),
        source,
    })
}

fn json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Render { config, state, network } => {
            let cfg = load_config(&config)?;
            let chart = cfg.chart()?;
            let s = chart.state(state[0], state[1], state[2]);
            let image = chart.geometry.render(&s)?;
            println!("{}", image.to_ascii());
            if let Some(path) = network {
                let net = load_network(&path)?;
                let soft = net.evaluate(&chart.geometry.network_input(&s)?)?;
                let q = image.q();
                let t = cfg.perception_spec().lit_threshold();
                let bits: Vec<bool> = soft.iter().map(|&v| v > t).collect();
                if bits.len() != q * q {
                    return Err(NetworkError::DimensionMismatch {
                        expected: q * q,
                        actual: bits.len(),
                        context: "perception output".into(),
                    }
                    .into());
                }
                let net_image = MonoImage::from_bits(q, bits);
                let diff = image.bits().iter().zip(net_image.bits()).filter(|(a, b)| a != b).count();
                println!("{}", net_image.to_ascii());
                println!("pixels differing from the oracle: {diff}");
            }
            Ok(0)
        }
        Command::BuildPerception { config, out } => {
            let cfg = load_config(&config)?;
            let model = assemble_perception_network(&cfg.perception_spec())?;
            let out = out.unwrap_or_else(|| artifacts_dir(&cfg).join("perception.json"));
            save_network(&model.network, &out)?;
            print!("{}", json(&model.manifest()));
            Ok(0)
        }
        Command::Compose { perception, controller, out } => {
            let p = load_network(&perception)?;
            let c = load_network(&controller)?;
            let aug = build_augmented_network(&p, &c)?;
            save_network(&aug, &out)?;
            println!("{aug}");
            Ok(0)
        }
        Command::Simulate { config, network, state, steps, images } => {
            let cfg = load_config(&config)?;
            let chart = cfg.chart()?;
            let net = load_network(&network)?;
            let s = chart.state(state[0], state[1], state[2]);
            let t = simulate_trajectory(&s, &net, &chart.geometry, &cfg.scenario.dynamics, steps, images);
            print!("{}", json(&t));
            if images {
                for r in &t.records {
                    if let Some(img) = &r.image {
                        println!("step {}\n{}", r.step, img.to_ascii());
                    }
                }
            }
            Ok(0)
        }
        Command::Abstract { config, network, mu, out } => {
            let cfg = load_config(&config)?;
            let chart = cfg.chart()?;
            let net = load_network(&network)?;
            let partition = Partition::new(cfg.partition)?;
            let abs = Abstraction::prepare(&chart, &partition, &net, &cfg.scenario.dynamics, cfg.abstraction.eta)?;
            let (_, goal) = spec_cells(&cfg, &chart, &partition)?;
            let unsafe_cells = if cfg.spec.kind == SpecKind::Invariant { goal } else { Vec::new() };
            let fsm = abs.fsm(mu, &unsafe_cells);
            fsm.save(&out)?;
            println!(
                "{} states, {} transitions, {} traversable cells",
                fsm.num_states(),
                fsm.num_transitions(),
                abs.traversable_cells().len()
            );
            Ok(0)
        }
        Command::CheckFsm { fsm, kind, horizon, initial, goal, sink_unsafe, cnf } => {
            let fsm = Fsm::load(&fsm)?;
            let spec = match kind {
                Kind::Invariant => {
                    let mut bad = goal;
                    if sink_unsafe {
                        bad.extend(fsm.sink());
                    }
                    BoundedSpec::invariant(horizon, initial, bad)
                }
                Kind::Reach => BoundedSpec::reach(horizon, initial, goal),
            };
            let result = check(&fsm, &spec)?;
            if let Some(path) = cnf {
                write(&path, &export_cnf(&fsm, &spec)?)?;
            }
            print!("{}", json(&result));
            Ok(if result.holds() { 0 } else { 2 })
        }
        Command::VerifyRegions { config, network, mu, cells, out } => {
            let cfg = load_config(&config)?;
            let chart = cfg.chart()?;
            let net = load_network(&network)?;
            let partition = Partition::new(cfg.partition)?;
            let abs = Abstraction::prepare(&chart, &partition, &net, &cfg.scenario.dynamics, cfg.abstraction.eta)?;
            let traversable = abs.traversable_cells();
            let cells = if cells.is_empty() {
                traversable
            } else {
                cells.into_iter().filter(|c| traversable.contains(c)).collect()
            };
            let perception_layers = assemble_perception_network(&cfg.perception_spec())?.network.layers().len();
            let regions = verify_cells(&net, &abs, &cells, mu, &cfg, perception_layers)?;
            let mut buf = Vec::new();
            write_regions_csv(&mut buf, &regions).expect("in-memory csv");
            let text = String::from_utf8(buf).expect("csv is utf-8");
            match out {
                Some(path) => write(&path, &text)?,
                None => print!("{text}"),
            }
            let s = RegionSummary::of(&regions);
            eprintln!("{} regions: {} proved, {} violated, {} unknown", s.total, s.proved, s.violated, s.unknown);
            Ok(aggregate(&regions).exit_code())
        }
        Command::Pipeline { config } => {
            let cfg = load_config(&config)?;
            match run_pipeline(&cfg) {
                Ok(run) => {
                    print!("{}", lander_core::report::summary_text(&run.report));
                    Ok(run.report.exit_code)
                }
                Err(e) => {
                    let _ = write(&cfg.output_dir.join("error.json"), &json(&ErrorReport::of(&e)));
                    Err(e)
                }
            }
        }
        Command::Train { config, out, report } => {
            let cfg = load_config(&config)?;
            let chart = cfg.chart()?;
            let train = cfg.controller.train.clone().unwrap_or_else(TrainingConfig::default);
            let model = assemble_perception_network(&cfg.perception_spec())?;
            let p = &cfg.partition;
            let trained =
                train_controller_bc(&chart, p.lower, p.upper, &cfg.scenario.dynamics, &train, Some(&model))?;
            save_network(&trained.network, &out)?;
            if let Some(path) = report {
                write(&path, &json(&trained.report))?;
            }
            eprintln!(
                "held-out mse {:.5}, within 0.1 rad/s: {:.1}%",
                trained.report.held_out_mse,
                100.0 * trained.report.held_out_within_0_1
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&ErrorReport::of(&e)).expect("error report serializes"));
            ExitCode::from(1)
        }
    }
}
