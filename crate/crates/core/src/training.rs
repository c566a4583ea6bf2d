//! Behavioral cloning of a scripted glide-slope teacher.
//!
//! The teacher commands a pitch rate
//!
//! ```text
//! u = clip(−k1·(θ − θ_ref(y, z)), ±u_max),   θ_ref = atan(s) + k2·(s + y/z)
//! ```
//!
//! where `s` is the target glide slope and `−y/z` the observed one. Pairs of
//! oracle images and teacher commands are collected along teacher rollouts
//! from seeded initial states on the working chart, and a `2 × 128` ReLU
//! network is fit by mean-squared error with Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::AircraftState;
use crate::chart::WorkingChart;
use crate::dynamics::{step, DynamicsParams};
use crate::network::{Activation, Layer, LayeredReluNetwork, NetworkError};
use crate::perception::PerceptionModel;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training configuration: {0}")]
    Invalid(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("no training samples could be generated from the initial region")]
    NoData,
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherGains {
    pub k1: f64,
    pub k2: f64,
    /// Target glide slope (height over distance).
    pub glide_slope: f64,
    pub u_max: f64,
}

impl Default for TeacherGains {
    fn default() -> Self {
        Self {
            k1: 0.15,
            k2: 1.0,
            glide_slope: 0.05,
            u_max: 0.3,
        }
    }
}

impl TeacherGains {
    pub fn theta_ref(&self, y: f64, z: f64) -> f64 {
        self.glide_slope.atan() + self.k2 * (self.glide_slope + y / z)
    }

    pub fn command(&self, s: &AircraftState) -> f64 {
        (-self.k1 * (s.theta - self.theta_ref(s.y, s.z))).clamp(-self.u_max, self.u_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// L1 penalty on every weight; keeps the influence of single pixels
    /// small, which is what makes the controller verifiable.
    pub l1: f64,
    /// Initial states drawn uniformly from the working box.
    pub initial_states: usize,
    /// Teacher steps recorded after each initial state.
    pub rollout_steps: usize,
    /// Fraction of initial states held out for evaluation.
    pub held_out: f64,
    pub teacher: TeacherGains,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            epochs: 60,
            batch_size: 64,
            learning_rate: 1e-3,
            l1: 3e-6,
            initial_states: 2000,
            rollout_steps: 5,
            held_out: 0.1,
            teacher: TeacherGains::default(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: &str| Err(TrainingError::Invalid(m.into()));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.held_out) {
            return bad("held_out must be in [0, 1)");
        }
        if !(self.l1 >= 0.0 && self.l1.is_finite()) {
            return bad("l1 must be non-negative");
        }
        if !(self.teacher.u_max > 0.0) {
            return bad("teacher u_max must be positive");
        }
        Ok(())
    }
}

/// One `(image, command)` pair plus the state it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: AircraftState,
    pub image: Vec<f64>,
    pub u: f64,
}

/// Teacher rollouts from uniformly drawn working points of `[lo, hi]`.
/// Rollouts stop when the state leaves the chart or the box.
pub fn generate_samples(
    chart: &WorkingChart,
    lo: [f64; 3],
    hi: [f64; 3],
    params: &DynamicsParams,
    teacher: &TeacherGains,
    starts: usize,
    rollout_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<Sample>> {
    let mut out = Vec::with_capacity(starts);
    let mut attempts = 0;
    while out.len() < starts && attempts < starts * 50 {
        attempts += 1;
        let w: [f64; 3] = std::array::from_fn(|d| rng.gen_range(lo[d]..=hi[d]));
        let Ok(mut state) = chart.state_at(w) else { continue };
        let mut trace = Vec::new();
        for _ in 0..=rollout_steps {
            let inside = chart
                .working_coords(&state)
                .is_ok_and(|c| (0..3).all(|d| lo[d] <= c[d] && c[d] <= hi[d]));
            if !inside || !chart.branch.contains(state.theta) {
                break;
            }
            let Ok(image) = chart.geometry.render(&state) else { break };
            let u = teacher.command(&state);
            trace.push(Sample {
                state,
                image: image.to_f64(),
                u,
            });
            state = step(&state, u, params);
        }
        if !trace.is_empty() {
            out.push(trace);
        }
    }
    out
}

/// Dense MLP with ReLU hidden layers, trained in place.
#[derive(Debug, Clone)]
struct Mlp {
    /// Per layer: row-major `rows × cols` weights and biases.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    dims: Vec<usize>,
}

impl Mlp {
    fn new(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let (cols, rows) = (w[0], w[1]);
            let limit = (6.0 / cols as f64).sqrt();
            weights.push((0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect());
            biases.push(vec![0.0; rows]);
        }
        Self { weights, biases, dims }
    }

    fn layers(&self) -> usize {
        self.weights.len()
    }

    /// Post-activation values of every layer, input first.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for l in 0..self.layers() {
            let (cols, rows) = (self.dims[l], self.dims[l + 1]);
            let prev = &acts[l];
            let last = l + 1 == self.layers();
            let next: Vec<f64> = (0..rows)
                .map(|r| {
                    let row = &self.weights[l][r * cols..(r + 1) * cols];
                    let v = self.biases[l][r] + row.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
                    if last {
                        v
                    } else {
                        v.max(0.0)
                    }
                })
                .collect();
            acts.push(next);
        }
        acts
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.forward(x).last().expect("output layer")[0]
    }

    /// Accumulates the gradient of `½(ŷ − y)²` into `gw`, `gb`.
    fn backward(&self, x: &[f64], y: f64, gw: &mut [Vec<f64>], gb: &mut [Vec<f64>]) -> f64 {
        let acts = self.forward(x);
        let err = acts[self.layers()][0] - y;
        let mut delta = vec![err];
        for l in (0..self.layers()).rev() {
            let cols = self.dims[l];
            let prev = &acts[l];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[l][r] += d;
                for (g, p) in gw[l][r * cols..(r + 1) * cols].iter_mut().zip(prev) {
                    *g += d * p;
                }
            }
            if l == 0 {
                break;
            }
            let mut back = vec![0.0; cols];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (b, w) in back.iter_mut().zip(&self.weights[l][r * cols..(r + 1) * cols]) {
                    *b += d * w;
                }
            }
            for (b, a) in back.iter_mut().zip(prev) {
                if *a <= 0.0 {
                    *b = 0.0;
                }
            }
            delta = back;
        }
        0.5 * err * err
    }

    fn to_network(&self) -> Result<LayeredReluNetwork, NetworkError> {
        let layers = (0..self.layers())
            .map(|l| {
                let act = if l + 1 == self.layers() {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                Layer::dense(
                    self.dims[l + 1],
                    self.dims[l],
                    self.weights[l].clone(),
                    self.biases[l].clone(),
                    act,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        LayeredReluNetwork::new(self.dims[0], layers)
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[&Vec<f64>], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for i in 0..p.len() {
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = B1 * *m + (1.0 - B1) * g[i];
                *v = B2 * *v + (1.0 - B2) * g[i] * g[i];
                p[i] -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub train_samples: usize,
    pub held_out_samples: usize,
    /// Mean squared error per epoch, before the first update at index 0.
    pub loss: Vec<f64>,
    pub held_out_mse: f64,
    /// Fraction of held-out samples within 0.1 rad/s of the teacher.
    pub held_out_within_0_1: f64,
    /// Largest gap between the perception network's soft image and the
    /// oracle image over the training set (only when a model is given).
    pub max_pixel_discrepancy: Option<f64>,
}

pub struct TrainedController {
    pub network: LayeredReluNetwork,
    pub report: TrainingReport,
}

fn mse(net: &Mlp, data: &[&Sample]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    data.iter().map(|s| (net.predict(&s.image) - s.u).powi(2)).sum::<f64>() / data.len() as f64
}

/// Trains a controller on teacher rollouts from the working box `[lo, hi]`.
/// Deterministic given `config.seed`.
pub fn train_controller_bc(
    chart: &WorkingChart,
    lo: [f64; 3],
    hi: [f64; 3],
    params: &DynamicsParams,
    config: &TrainingConfig,
    perception: Option<&PerceptionModel>,
) -> Result<TrainedController, TrainingError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let traces = generate_samples(
        chart,
        lo,
        hi,
        params,
        &config.teacher,
        config.initial_states,
        config.rollout_steps,
        &mut rng,
    );
    if traces.is_empty() {
        return Err(TrainingError::NoData);
    }
    // Hold out whole rollouts so correlated samples do not leak.
    let split = traces.len() - ((traces.len() as f64 * config.held_out).round() as usize).min(traces.len() - 1);
    let train: Vec<&Sample> = traces[..split].iter().flatten().collect();
    let held: Vec<&Sample> = traces[split..].iter().flatten().collect();

    let pixels = train[0].image.len();
    let mut dims = vec![pixels];
    dims.extend(&config.hidden);
    dims.push(1);
    let mut net = Mlp::new(dims, &mut rng);
    let shapes: Vec<usize> = net
        .weights
        .iter()
        .map(Vec::len)
        .chain(net.biases.iter().map(Vec::len))
        .collect();
    let mut adam = Adam::new(&shapes);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut loss = vec![mse(&net, &train)];
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut gw: Vec<Vec<f64>> = net.weights.iter().map(|w| vec![0.0; w.len()]).collect();
            let mut gb: Vec<Vec<f64>> = net.biases.iter().map(|b| vec![0.0; b.len()]).collect();
            for &i in batch {
                net.backward(&train[i].image, train[i].u, &mut gw, &mut gb);
            }
            let scale = 1.0 / batch.len() as f64;
            gw.iter_mut().chain(gb.iter_mut()).flatten().for_each(|g| *g *= scale);
            if config.l1 > 0.0 {
                for (g, w) in gw.iter_mut().flatten().zip(net.weights.iter().flatten()) {
                    *g += config.l1 * w.signum();
                }
            }
            let grads: Vec<&Vec<f64>> = gw.iter().chain(gb.iter()).collect();
            let Mlp { weights, biases, .. } = &mut net;
            let mut ps: Vec<&mut Vec<f64>> = weights.iter_mut().chain(biases.iter_mut()).collect();
            adam.step(&mut ps, &grads, config.learning_rate);
        }
        let l = mse(&net, &train);
        if !l.is_finite() {
            return Err(TrainingError::Diverged { epoch, loss: l });
        }
        loss.push(l);
    }

    let within = if held.is_empty() {
        1.0
    } else {
        held.iter().filter(|s| (net.predict(&s.image) - s.u).abs() <= 0.1).count() as f64 / held.len() as f64
    };
    let max_pixel_discrepancy = perception.map(|model| {
        train
            .iter()
            .filter_map(|s| chart.geometry.network_input(&s.state).ok().map(|x| (x, &s.image)))
            .map(|(x, img)| {
                model
                    .network
                    .forward(&x)
                    .iter()
                    .zip(img.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    });
    let report = TrainingReport {
        train_samples: train.len(),
        held_out_samples: held.len(),
        held_out_mse: mse(&net, &held),
        loss,
        held_out_within_0_1: within,
        max_pixel_discrepancy,
    };
    Ok(TrainedController {
        network: net.to_network()?,
        report,
    })
}
