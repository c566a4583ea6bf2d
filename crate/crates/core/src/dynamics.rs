//! Discrete-time guidance kinematics and the closed loop through the
//! perception and control network.
//!
//! The aircraft keeps its course toward the runway, so only `(θ, y, z)`
//! evolve; the control is the pitch rate.

use serde::{Deserialize, Serialize};

use crate::camera::{zeta_to_state, AircraftState, GeometryError, MonoImage, RunwayLine, ZetaCoords};
use crate::chart::Geometry;
use crate::network::LayeredReluNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsParams {
    /// Ground speed, m/s.
    pub vg: f64,
    /// Sample time, s.
    pub tau: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self { vg: 25.0, tau: 0.1 }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.vg > 0.0 && self.vg.is_finite()) || !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(GeometryError::InvalidConfig(format!(
                "dynamics need vg > 0 and tau >= 0, got vg={} tau={}",
                self.vg, self.tau
            )));
        }
        Ok(())
    }

    pub fn bounds(&self) -> DeltaFcBounds {
        DeltaFcBounds { vg: self.vg }
    }
}

/// One sample of the kinematics under pitch rate `u` (rad/s).
pub fn step(state: &AircraftState, u: f64, params: &DynamicsParams) -> AircraftState {
    let (s, c) = state.theta.sin_cos();
    let d = params.vg * params.tau;
    AircraftState {
        theta: state.theta + u * params.tau,
        x: state.x,
        y: state.y + d * s,
        z: state.z + d * c,
    }
}

/// Incremental forward-completeness bounds of the kinematics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaFcBounds {
    pub vg: f64,
}

impl DeltaFcBounds {
    /// `β(r, τ) = √8·‖r‖₂·e^τ` for a per-dimension deviation vector `r`.
    pub fn beta(&self, radius: &[f64], tau: f64) -> f64 {
        let norm = radius.iter().map(|r| r * r).sum::<f64>().sqrt();
        8f64.sqrt() * norm * tau.exp()
    }

    /// `γ(μ, τ) = √(Vg·(e^{2τ} − 1))·μ`.
    pub fn gamma(&self, mu: f64, tau: f64) -> f64 {
        (self.vg * (2.0 * tau).exp_m1()).sqrt() * mu
    }
}

/// First output of `net` at `input`, the pitch-rate command.
pub fn control(net: &LayeredReluNetwork, input: &[f64]) -> f64 {
    net.forward(input)[0]
}

/// `h(f(h⁻¹(ζ), NN_aug(ζ)))` on the full network input (every line's `ζ`,
/// L first). The state is recovered from line L.
pub fn closed_loop_successor_zeta(
    input: &[f64],
    nn_aug: &LayeredReluNetwork,
    geometry: &Geometry,
    params: &DynamicsParams,
) -> Result<Vec<f64>, GeometryError> {
    if input.len() != geometry.input_dim() || nn_aug.input_dim() != input.len() {
        return Err(GeometryError::InvalidConfig(format!(
            "input has {} components, geometry expects {} and the network {}",
            input.len(),
            geometry.input_dim(),
            nn_aug.input_dim()
        )));
    }
    let zeta = ZetaCoords(input[..5].try_into().expect("five components"));
    let state = zeta_to_state(&zeta, &geometry.runway, &geometry.camera, RunwayLine::Left)?;
    let u = control(nn_aug, input);
    geometry.network_input(&step(&state, u, params))
}

/// One closed-loop step in state space. Returns the successor and the
/// applied control.
pub fn closed_loop_step(
    state: &AircraftState,
    nn_aug: &LayeredReluNetwork,
    geometry: &Geometry,
    params: &DynamicsParams,
) -> Result<(AircraftState, f64), GeometryError> {
    let u = control(nn_aug, &geometry.network_input(state)?);
    Ok((step(state, u, params), u))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub state: AircraftState,
    /// Control applied at this step; absent on the final record.
    pub u: Option<f64>,
    #[serde(skip)]
    pub image: Option<MonoImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "kebab-case")]
pub enum Termination {
    Completed,
    Geometry(String),
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn final_state(&self) -> &AircraftState {
        &self.records.last().expect("trajectory has a first record").state
    }
}

/// Closed-loop rollout `state → ζ → NN_aug → u → step`. A geometry error
/// ends the trace with that reason; the state that caused it is the last
/// record.
pub fn simulate_trajectory(
    state0: &AircraftState,
    nn_aug: &LayeredReluNetwork,
    geometry: &Geometry,
    params: &DynamicsParams,
    steps: usize,
    with_images: bool,
) -> Trajectory {
    let image_of = |s: &AircraftState| if with_images { geometry.render(s).ok() } else { None };
    let mut records = Vec::with_capacity(steps + 1);
    let mut state = *state0;
    let mut termination = Termination::Completed;
    for t in 0..steps {
        let image = image_of(&state);
        match closed_loop_step(&state, nn_aug, geometry, params) {
            Ok((next, u)) => {
                records.push(TrajectoryRecord {
                    step: t,
                    state,
                    u: Some(u),
                    image,
                });
                state = next;
                if !state.is_finite() {
                    termination = Termination::NonFinite;
                    break;
                }
            }
            Err(e) => {
                records.push(TrajectoryRecord {
                    step: t,
                    state,
                    u: None,
                    image,
                });
                return Trajectory {
                    records,
                    termination: Termination::Geometry(e.to_string()),
                };
            }
        }
    }
    records.push(TrajectoryRecord {
        step: records.len(),
        state,
        u: None,
        image: image_of(&state),
    });
    Trajectory { records, termination }
}
