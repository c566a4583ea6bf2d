//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use lander_core::abstraction::{Abstraction, Fsm, Partition, PartitionSpec, StateLabel};
use lander_core::camera::{AircraftState, CameraIntrinsics, RunwaySpec};
use lander_core::chart::{Geometry, PitchBranch, WorkingChart};
use lander_core::checker::{BoundedSpec, SpecKind};
use lander_core::dynamics::{step, DynamicsParams};
use lander_core::perception::{assemble_perception_network, build_augmented_network, PerceptionBuildSpec};
use lander_core::network::{Activation, Layer, LayeredReluNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn runway() -> RunwaySpec {
    RunwaySpec {
        lx: -20.0,
        lz: 0.0,
        rw: 40.0,
        rl: 3000.0,
    }
}

pub fn chart(q: usize) -> WorkingChart {
    let geometry = Geometry {
        runway: runway(),
        camera: CameraIntrinsics::square(q, 0.4, 0.016 * q as f64 / 8.0),
        lines: 2,
    };
    WorkingChart::new(geometry, 0.0, PitchBranch::NonNegative).unwrap()
}

/// Uniform working point of `[lo, hi]` that is a chart point, with its state.
pub fn chart_sample<R: Rng>(chart: &WorkingChart, lo: [f64; 3], hi: [f64; 3], rng: &mut R) -> ([f64; 3], AircraftState) {
    loop {
        let w: [f64; 3] = std::array::from_fn(|a| rng.gen_range(lo[a]..hi[a]));
        if let Ok(s) = chart.state_at(w) {
            return (w, s);
        }
    }
}

pub fn random_fsm<R: Rng>(rng: &mut R, n: usize, max_out: usize) -> Fsm {
    let successors = (0..n)
        .map(|_| {
            let k = rng.gen_range(1..=max_out);
            (0..k).map(|_| rng.gen_range(0..n)).collect()
        })
        .collect();
    Fsm::new(successors, vec![StateLabel::Normal; n]).unwrap()
}

pub fn random_spec<R: Rng>(rng: &mut R, n: usize, horizon: usize) -> BoundedSpec {
    let pick = |rng: &mut R, k: usize| -> Vec<usize> {
        let mut v: Vec<usize> = (0..k).map(|_| rng.gen_range(0..n)).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let k = rng.gen_range(1..=3);
    let initial = pick(rng, k);
    let k = rng.gen_range(1..=3);
    let goal = pick(rng, k);
    if rng.gen_bool(0.5) {
        BoundedSpec::invariant(horizon, initial, goal)
    } else {
        BoundedSpec::reach(horizon, initial, goal)
    }
}

type BoolMatrix = Vec<Vec<bool>>;

fn bool_mul(a: &BoolMatrix, b: &BoolMatrix) -> BoolMatrix {
    let n = a.len();
    let mut c = vec![vec![false; n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] {
                for j in 0..n {
                    c[i][j] |= b[k][j];
                }
            }
        }
    }
    c
}

/// `(I ∨ A)^T` by repeated squaring: entry `(i, j)` is set iff `j` is
/// reachable from `i` in at most `T` steps.
pub fn reach_within(fsm: &Fsm, horizon: usize) -> BoolMatrix {
    let n = fsm.num_states();
    let mut base: BoolMatrix = (0..n)
        .map(|i| (0..n).map(|j| i == j || fsm.successors(i).contains(&j)).collect())
        .collect();
    let mut acc: BoolMatrix = (0..n).map(|i| (0..n).map(|j| i == j).collect()).collect();
    let mut e = horizon;
    while e > 0 {
        if e & 1 == 1 {
            acc = bool_mul(&acc, &base);
        }
        base = bool_mul(&base, &base);
        e >>= 1;
    }
    acc
}

/// Matrix-power verdict: true iff the spec holds.
pub fn matrix_power_holds(fsm: &Fsm, spec: &BoundedSpec) -> bool {
    let r = reach_within(fsm, spec.horizon);
    match spec.kind {
        SpecKind::Invariant => !spec.initial.iter().any(|&i| spec.goal.iter().any(|&g| r[i][g])),
        SpecKind::Reach => spec.initial.iter().all(|&i| spec.goal.iter().any(|&g| r[i][g])),
    }
}

pub fn parse_dimacs(text: &str) -> (usize, Vec<Vec<i64>>) {
    let mut vars = 0;
    let mut clauses = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('c') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("p cnf") {
            vars = rest.split_whitespace().next().unwrap().parse().unwrap();
            continue;
        }
        for tok in line.split_whitespace() {
            let lit: i64 = tok.parse().unwrap();
            if lit == 0 {
                clauses.push(std::mem::take(&mut current));
            } else {
                current.push(lit);
            }
        }
    }
    (vars, clauses)
}

/// Plain DPLL with unit propagation. Returns a model when satisfiable.
pub fn dpll(vars: usize, clauses: &[Vec<i64>]) -> Option<Vec<bool>> {
    let mut assign = vec![0i8; vars + 1];
    if solve(clauses, &mut assign) {
        Some(assign.iter().map(|&a| a > 0).collect())
    } else {
        None
    }
}

fn value(assign: &[i8], lit: i64) -> i8 {
    let a = assign[lit.unsigned_abs() as usize];
    if lit > 0 {
        a
    } else {
        -a
    }
}

fn solve(clauses: &[Vec<i64>], assign: &mut Vec<i8>) -> bool {
    let mut trail = Vec::new();
    loop {
        let mut unit = None;
        for c in clauses {
            let mut unassigned = None;
            let mut free = 0;
            let mut sat = false;
            for &l in c {
                match value(assign, l) {
                    1 => {
                        sat = true;
                        break;
                    }
                    0 => {
                        free += 1;
                        unassigned = Some(l);
                    }
                    _ => {}
                }
            }
            if sat {
                continue;
            }
            if free == 0 {
                for v in trail {
                    assign[v] = 0;
                }
                return false;
            }
            if free == 1 {
                unit = unassigned;
                break;
            }
        }
        match unit {
            Some(l) => {
                let v = l.unsigned_abs() as usize;
                assign[v] = if l > 0 { 1 } else { -1 };
                trail.push(v);
            }
            None => break,
        }
    }
    let branch = clauses
        .iter()
        .filter(|c| !c.iter().any(|&l| value(assign, l) == 1))
        .flat_map(|c| c.iter())
        .find(|&&l| value(assign, l) == 0)
        .copied();
    let Some(l) = branch else {
        return true;
    };
    let v = l.unsigned_abs() as usize;
    for choice in [l > 0, l <= 0] {
        assign[v] = if choice { 1 } else { -1 };
        if solve(clauses, assign) {
            return true;
        }
    }
    assign[v] = 0;
    for v in trail {
        assign[v] = 0;
    }
    false
}

pub fn random_net<R: Rng>(rng: &mut R, inputs: usize, hidden: &[usize]) -> LayeredReluNetwork {
    let mut dims = vec![inputs];
    dims.extend_from_slice(hidden);
    dims.push(1);
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (cols, rows) = (w[0], w[1]);
            let act = if i + 2 == dims.len() { Activation::Identity } else { Activation::Relu };
            let scale = 1.0 / (cols as f64).sqrt();
            Layer::dense(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5) * scale).collect(),
                (0..rows).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                act,
            )
            .unwrap()
        })
        .collect();
    LayeredReluNetwork::new(inputs, layers).unwrap()
}

/// Global Lipschitz constant of a network in the `∞` norm: product of the
/// largest absolute row sums.
pub fn lipschitz_inf(net: &LayeredReluNetwork) -> f64 {
    net.layers()
        .iter()
        .map(|l| {
            let (rows, cols) = (l.rows(), l.cols());
            let d = l.to_dense();
            (0..rows)
                .map(|r| (0..cols).map(|c| d[r * cols + c].abs()).sum::<f64>())
                .fold(0.0, f64::max)
        })
        .product()
}

/// Largest `|f(x) − c|` over a regular grid with `n` points per axis, and
/// the point attaining it.
pub fn grid_max_deviation(net: &LayeredReluNetwork, lo: &[f64], hi: &[f64], c: f64, n: usize) -> (f64, Vec<f64>) {
    let d = lo.len();
    let mut idx = vec![0usize; d];
    let mut best = (f64::NEG_INFINITY, Vec::new());
    loop {
        let x: Vec<f64> = (0..d)
            .map(|a| lo[a] + (hi[a] - lo[a]) * idx[a] as f64 / (n - 1) as f64)
            .collect();
        let dev = (net.forward(&x)[0] - c).abs();
        if dev > best.0 {
            best = (dev, x);
        }
        let mut a = 0;
        while a < d {
            idx[a] += 1;
            if idx[a] < n {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
        if a == d {
            return best;
        }
    }
}

/// Config text for a small end-to-end run in `dir`.
pub fn small_config(dir: &std::path::Path, controller: &str, goal: Option<&str>) -> String {
    let goal = goal.map_or(String::new(), |g| format!("goal = {g}\n"));
    format!(
        r#"schema_version = 1
seed = 11
output_dir = "{out}"

[scenario]
lines = 2
lateral_offset = 0.0
runway = {{ lx = -20.0, lz = 0.0, rw = 40.0, rl = 3000.0 }}
camera = {{ f = 0.4, w = 0.016, h = 0.016, wp = 8, hp = 8 }}

[partition]
lower = [0.0, 0.0, 0.0]
upper = [8.0, 8.0, 8.0]
cell_side = 1.0

[search]
mu_values = [0.1, 0.3, 1.1]

[spec]
kind = "invariant"
horizon = 20
initial_lower = [0.0, 0.0, 0.0]
initial_upper = [4.0, 8.0, 4.0]
{goal}
[controller]
{controller}

[verification]
max_splits = 200

[monte_carlo]
trajectories = 100
"#,
        out = dir.join("out").display(),
    )
}

/// Violations of the δ-FC bound over `pairs` random pairs.
pub fn delta_fc_violations(chart: &WorkingChart, params: &DynamicsParams, pairs: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = params.bounds();
    let mut violations = 0;
    let mut done = 0;
    while done < pairs {
        let (w, s) = chart_sample(chart, [0.0; 3], [8.0; 3], &mut rng);
        let eps: f64 = rng.gen_range(0.0..1.0);
        let w2: [f64; 3] = std::array::from_fn(|a| w[a] + rng.gen_range(-eps..=eps));
        let Ok(s2) = chart.state_at(w2) else { continue };
        let mu: f64 = rng.gen_range(0.0..1.1);
        let u: f64 = rng.gen_range(-1.0..1.0);
        let u2 = u + rng.gen_range(-mu..=mu);
        let (Ok(n1), Ok(n2)) = (
            chart.working_coords(&step(&s, u, params)),
            chart.working_coords(&step(&s2, u2, params)),
        ) else {
            continue;
        };
        done += 1;
        let dist = (0..3).map(|a| (n1[a] - n2[a]).abs()).fold(0.0, f64::max);
        if dist > bounds.beta(&[eps; 3], params.tau) + bounds.gamma(mu, params.tau) {
            violations += 1;
        }
    }
    violations
}

/// Concrete one-step successors that the abstraction misses.
pub fn containment_violations(abs: &Abstraction, mu: f64, samples: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = abs.traversable_cells();
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut violations = 0;
    let mut done = 0;
    while done < samples {
        let id = cells[rng.gen_range(0..cells.len())];
        let (lo, hi) = abs.partition.cell_box(id);
        let w: [f64; 3] = std::array::from_fn(|a| rng.gen_range(lo[a]..=hi[a]));
        let Ok(s) = abs.chart.state_at(w) else { continue };
        done += 1;
        let u = abs.cells[id].control.unwrap() + rng.gen_range(-mu..=mu);
        let next = step(&s, u, &abs.params);
        let succ = abs.successors(id, mu);
        let target = if !(0.0..half_pi).contains(&next.theta) {
            None
        } else {
            abs.chart.working_coords(&next).ok().and_then(|v| abs.partition.locate(v))
        };
        let ok = match target {
            Some(c) => succ.contains(&c),
            None => succ.contains(&abs.sink()),
        };
        if !ok {
            violations += 1;
        }
    }
    violations
}

pub fn desk_abstraction(seed: u64) -> Abstraction {
    let chart = chart(8);
    let model = assemble_perception_network(&PerceptionBuildSpec::new(8, 2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctrl = random_net(&mut rng, 64, &[16, 16]);
    let aug = build_augmented_network(&model.network, &ctrl).unwrap();
    let partition = Partition::new(PartitionSpec::cube(0.0, 8.0, 1.0)).unwrap();
    Abstraction::prepare(&chart, &partition, &aug, &DynamicsParams::default(), None).unwrap()
}
