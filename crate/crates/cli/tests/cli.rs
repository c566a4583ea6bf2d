use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lander_core::pipeline::constant_controller;

fn config_text(out: &Path, controller: &str) -> String {
    format!(
        r#"schema_version = 1
seed = 3
output_dir = "{out}"

[scenario]
lines = 2
runway = {{ lx = -20.0, lz = 0.0, rw = 40.0, rl = 3000.0 }}
camera = {{ f = 0.4, w = 0.016, h = 0.016, wp = 8, hp = 8 }}

[partition]
lower = [0.0, 0.0, 0.0]
upper = [8.0, 8.0, 8.0]
cell_side = 1.0

[search]
mu_values = [0.1, 1.1]

[spec]
kind = "invariant"
horizon = 10
initial_lower = [0.0, 0.0, 0.0]
initial_upper = [4.0, 8.0, 4.0]

[controller]
{controller}

[verification]
max_splits = 100

[monte_carlo]
trajectories = 20
"#,
        out = out.display()
    )
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(controller: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let text = config_text(&dir.path().join("out"), controller);
        std::fs::write(dir.path().join("run.toml"), text).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_lander")).args(args).output().unwrap()
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn every_subcommand_runs_from_cached_artifacts() {
    let f = Fixture::new("constant = 0.0");
    let cfg = f.s("run.toml");
    constant_controller(64, 0.0).save_weights(f.path("ctrl.json")).unwrap();

    let o = f.run(&["build-perception", "--config", &cfg, "--out", &f.s("perception.json")]);
    assert_eq!(code(&o), 0, "{o:?}");
    let manifest: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(manifest["gadget"], 68 * 64 * 2);

    let o = f.run(&["compose", "--perception", &f.s("perception.json"), "--controller", &f.s("ctrl.json"), "--out", &f.s("aug.json")]);
    assert_eq!(code(&o), 0, "{o:?}");

    let o = f.run(&["render", "--config", &cfg, "--state", "1.2,0,1600", "--network", &f.s("perception.json")]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).contains("pixels differing from the oracle: 0"), "{}", stdout(&o));

    let o = f.run(&["simulate", "--config", &cfg, "--network", &f.s("aug.json"), "--state", "1.2,0,1600", "--steps", "5"]);
    assert_eq!(code(&o), 0, "{o:?}");
    serde_json::from_slice::<serde_json::Value>(&o.stdout).unwrap();

    let o = f.run(&["abstract", "--config", &cfg, "--network", &f.s("aug.json"), "--mu", "0.5", "--out", &f.s("fsm.txt")]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).starts_with("513 states"));

    let o = f.run(&["check-fsm", "--fsm", &f.s("fsm.txt"), "--horizon", "5", "--initial", "0,1", "--cnf", &f.s("q.cnf")]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(std::fs::read_to_string(f.path("q.cnf")).unwrap().contains("p cnf"));
    let o = f.run(&["check-fsm", "--fsm", &f.s("fsm.txt"), "--horizon", "5", "--initial", "0", "--goal", "0"]);
    assert_eq!(code(&o), 2, "{o:?}");

    let o = f.run(&["verify-regions", "--config", &cfg, "--network", &f.s("aug.json"), "--mu", "1.1", "--cells", "0,1,2", "--out", &f.s("r.csv")]);
    assert_eq!(code(&o), 0, "{o:?}");
    let csv = std::fs::read_to_string(f.path("r.csv")).unwrap();
    assert!(csv.starts_with("region_id,center,verdict,splits,millis\n"));
    assert!(csv.lines().skip(1).all(|l| l.contains(",PROVED,")));

    let o = f.run(&["pipeline", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).contains("SAFE"));
    assert!(f.path("out/report.json").is_file());
}

#[test]
fn train_writes_a_loadable_controller() {
    let f = Fixture::new("train = { hidden = [8], epochs = 2, initial_states = 40, rollout_steps = 2 }");
    let o = f.run(&["train", "--config", &f.s("run.toml"), "--out", &f.s("ctrl.json"), "--report", &f.s("train.json")]);
    assert_eq!(code(&o), 0, "{o:?}");
    let net = lander_core::network::LayeredReluNetwork::load_weights(f.path("ctrl.json")).unwrap();
    assert_eq!((net.input_dim(), net.output_dim()), (64, 1));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.path("train.json")).unwrap()).unwrap();
    assert_eq!(report["loss"].as_array().unwrap().len(), 3);
}

#[test]
fn corrupted_weights_fail_with_a_parse_error() {
    let f = Fixture::new("weights = \"ctrl.json\"");
    let text = constant_controller(64, 0.0).to_weights_string();
    std::fs::write(f.path("ctrl.json"), text.replace("\"layers\"", "\"layers\" ]")).unwrap();
    let o = f.run(&["pipeline", "--config", &f.s("run.toml")]);
    assert_eq!(code(&o), 1);
    let err: serde_json::Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["kind"], "parse");
    assert_eq!(err["status"], "ERROR");
    let written: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.path("out/error.json")).unwrap()).unwrap();
    assert_eq!(written, err);
}

#[test]
fn usage_errors_exit_with_one() {
    let f = Fixture::new("constant = 0.0");
    assert_eq!(code(&f.run(&["pipeline"])), 1);
    assert_eq!(code(&f.run(&["no-such-command"])), 1);
    assert_eq!(code(&f.run(&["--help"])), 0);
    assert_eq!(code(&f.run(&["pipeline", "--config", &f.s("missing.toml")])), 1);
}
