//! Working coordinates for the abstraction.
//!
//! The abstraction grids the first three pixel coordinates `(ζ1, ζ2, ζ3)` of
//! line L. The course is held toward the runway, so the lateral offset `x`
//! never changes and is a scenario constant; together with a fixed pitch sign
//! branch this makes the three working coordinates a chart of the remaining
//! state `(θ, y, z)`. [`WorkingChart`] maps between the two, builds the full
//! network input (`ζ` of every runway line) and encloses that input over a
//! grid cell with interval arithmetic.

use serde::{Deserialize, Serialize};

use crate::camera::{
    project_line, rasterize_segments, state_to_zeta, AircraftState, CameraIntrinsics,
    GeometryError, MonoImage, Result, RunwayLine, RunwaySpec, ZetaCoords,
};
use crate::interval::Interval;

/// Runway, camera and how many runway lines feed the perception network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub runway: RunwaySpec,
    pub camera: CameraIntrinsics,
    pub lines: usize,
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        self.runway.validate()?;
        self.camera.validate()?;
        if !(1..=2).contains(&self.lines) {
            return Err(GeometryError::InvalidConfig(format!(
                "lines must be 1 or 2, got {}",
                self.lines
            )));
        }
        Ok(())
    }

    pub fn line_set(&self) -> &'static [RunwayLine] {
        &RunwayLine::BOTH[..self.lines]
    }

    pub fn input_dim(&self) -> usize {
        5 * self.lines
    }

    /// Concatenated `ζ` of each line, L first.
    pub fn network_input(&self, state: &AircraftState) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.input_dim());
        for &line in self.line_set() {
            let z = state_to_zeta(state, &self.runway, &self.camera, line)?;
            out.extend_from_slice(z.as_slice());
        }
        Ok(out)
    }

    pub fn zeta(&self, state: &AircraftState, line: RunwayLine) -> Result<ZetaCoords> {
        state_to_zeta(state, &self.runway, &self.camera, line)
    }

    /// Oracle image of the lines this geometry uses.
    pub fn render(&self, state: &AircraftState) -> Result<MonoImage> {
        let segments = self
            .line_set()
            .iter()
            .map(|&line| project_line(state, &self.runway, &self.camera, line))
            .collect::<Result<Vec<_>>>()?;
        Ok(rasterize_segments(&segments, self.camera.q()))
    }
}

/// Sign of the pitch angle on the chart's domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PitchBranch {
    #[default]
    NonNegative,
    NonPositive,
}

impl PitchBranch {
    fn sign(self) -> f64 {
        match self {
            PitchBranch::NonNegative => 1.0,
            PitchBranch::NonPositive => -1.0,
        }
    }

    pub fn contains(self, theta: f64) -> bool {
        match self {
            PitchBranch::NonNegative => theta >= 0.0,
            PitchBranch::NonPositive => theta <= 0.0,
        }
    }
}

/// Axis-aligned box of states with the lateral offset held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateBox {
    pub theta: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

impl StateBox {
    pub fn around(center: &AircraftState, half: [f64; 3]) -> Self {
        Self {
            theta: [center.theta - half[0], center.theta + half[0]],
            y: [center.y - half[1], center.y + half[1]],
            z: [center.z - half[2], center.z + half[2]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("theta", self.theta), ("y", self.y), ("z", self.z)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(GeometryError::InvalidConfig(format!(
                    "state box range {name} = {r:?} is invalid"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, s: &AircraftState) -> bool {
        let inside = |r: [f64; 2], v: f64| r[0] <= v && v <= r[1];
        inside(self.theta, s.theta) && inside(self.y, s.y) && inside(self.z, s.z)
    }

    /// State at fractional position `t ∈ [0, 1]³` (θ, y, z order).
    pub fn lerp(&self, t: [f64; 3], x: f64) -> AircraftState {
        let at = |r: [f64; 2], s: f64| r[0] + s * (r[1] - r[0]);
        AircraftState::new(at(self.theta, t[0]), x, at(self.y, t[1]), at(self.z, t[2]))
    }
}

/// Chart between `(θ, y, z)` at a fixed lateral offset and `(ζ1, ζ2, ζ3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkingChart {
    pub geometry: Geometry,
    pub lateral_offset: f64,
    pub branch: PitchBranch,
}

impl WorkingChart {
    pub fn new(geometry: Geometry, lateral_offset: f64, branch: PitchBranch) -> Result<Self> {
        geometry.validate()?;
        let chart = Self {
            geometry,
            lateral_offset,
            branch,
        };
        if chart.k().abs() < 1e-9 || !chart.k().is_finite() {
            return Err(GeometryError::InvalidConfig(
                "lateral offset aligns the camera with line L; the chart is singular".into(),
            ));
        }
        Ok(chart)
    }

    /// Horizontal numerator `fx·(Lx + x)` shared by `ζ1` and `ζ3`.
    fn k(&self) -> f64 {
        self.geometry.camera.fx() * (self.geometry.runway.lx + self.lateral_offset)
    }

    fn right_ratio(&self) -> f64 {
        let r = &self.geometry.runway;
        (r.rx() + self.lateral_offset) / (r.lx + self.lateral_offset)
    }

    pub fn state(&self, theta: f64, y: f64, z: f64) -> AircraftState {
        AircraftState::new(theta, self.lateral_offset, y, z)
    }

    /// `(ζ1, ζ2, ζ3)` of line L.
    pub fn working_coords(&self, state: &AircraftState) -> Result<[f64; 3]> {
        let z = self.geometry.zeta(state, RunwayLine::Left)?;
        Ok([z.0[0], z.0[1], z.0[2]])
    }

    /// Inverse of [`working_coords`](Self::working_coords) on the chart's
    /// pitch branch.
    pub fn state_at(&self, w: [f64; 3]) -> Result<AircraftState> {
        let cam = &self.geometry.camera;
        let runway = &self.geometry.runway;
        let k = self.k();
        let alpha = w[0] - cam.u0();
        let gamma = w[2] - cam.u0();
        if alpha * k <= 0.0 || gamma * k <= 0.0 {
            return Err(GeometryError::DegenerateInverse(format!(
                "working point {w:?} is on the wrong side of the image center"
            )));
        }
        let near = k / alpha;
        let far = k / gamma;
        let cos = (far - near) / runway.rl;
        if !(cos > 0.0 && cos <= 1.0) {
            return Err(GeometryError::DegenerateInverse(format!(
                "working point {w:?} implies cos(theta) = {cos}"
            )));
        }
        let theta = self.branch.sign() * cos.acos();
        let sin = theta.sin();
        let y = -(w[1] - cam.v0()) * near / cam.fy() - runway.lz * sin;
        let z = near - runway.lz * cos;
        Ok(self.state(theta, y, z))
    }

    /// Network input (`ζ` of every line) at a working point.
    pub fn input_at(&self, w: [f64; 3]) -> Result<Vec<f64>> {
        self.geometry.network_input(&self.state_at(w)?)
    }

    /// Column offsets `α = ζ1 − u0` and `γ = ζ3 − u0` of a working box,
    /// clipped to the part that can hold chart states.
    /// `None` when no chart state lies in the box; either offset may still
    /// reach zero (unbounded depth).
    fn columns(&self, lo: [f64; 3], hi: [f64; 3]) -> Option<(Interval, Interval)> {
        let u0 = self.geometry.camera.u0();
        let rl = self.geometry.runway.rl;
        let k = self.k();
        let clip = |iv: Interval| {
            if k > 0.0 {
                (iv.hi > 0.0).then(|| Interval::new(iv.lo.max(0.0), iv.hi))
            } else {
                (iv.lo < 0.0).then(|| Interval::new(iv.lo, iv.hi.min(0.0)))
            }
        };
        let (Some(alpha), Some(gamma)) = (
            clip(Interval::new(lo[0] - u0, hi[0] - u0)),
            clip(Interval::new(lo[2] - u0, hi[2] - u0)),
        ) else {
            return None;
        };
        // Depths `k/α` and `k/γ` must satisfy near < far ≤ near + rl; two
        // rounds of propagation between them, widened slightly for rounding.
        let ak = k.abs();
        let depth = |iv: Interval| {
            let (small, big) = (iv.lo.abs().min(iv.hi.abs()), iv.lo.abs().max(iv.hi.abs()));
            (ak / big, if small > 0.0 { ak / small } else { f64::INFINITY })
        };
        let (mut near, mut far) = (depth(alpha), depth(gamma));
        for _ in 0..2 {
            far.0 = far.0.max(near.0);
            far.1 = far.1.min(near.1 + rl);
            near.0 = near.0.max(far.0 - rl);
            near.1 = near.1.min(far.1);
        }
        if near.0 > near.1 * (1.0 + 1e-12) || far.0 > far.1 * (1.0 + 1e-12) {
            return None;
        }
        let back = |iv: Interval, d: (f64, f64)| {
            // |offset| ∈ [|k|/d.1, |k|/d.0], widened.
            let m_lo = if d.1.is_finite() { ak / d.1 * (1.0 - 1e-12) } else { 0.0 };
            let m_hi = ak / d.0 * (1.0 + 1e-12);
            let span = if k > 0.0 { Interval::new(m_lo, m_hi) } else { Interval::new(-m_hi, -m_lo) };
            iv.intersect(span)
        };
        Some((back(alpha, near)?, back(gamma, far)?))
    }

    /// Shrinks `ζ1` and `ζ3` of a working box to the part that can hold
    /// chart states; `None` when none can.
    pub fn contract(&self, lo: [f64; 3], hi: [f64; 3]) -> Option<([f64; 3], [f64; 3])> {
        let u0 = self.geometry.camera.u0();
        let (a, g) = self.columns(lo, hi)?;
        let (mut lo, mut hi) = (lo, hi);
        lo[0] = lo[0].max(a.lo + u0).min(hi[0]);
        hi[0] = hi[0].min(a.hi + u0).max(lo[0]);
        lo[2] = lo[2].max(g.lo + u0).min(hi[2]);
        hi[2] = hi[2].min(g.hi + u0).max(lo[2]);
        Some((lo, hi))
    }

    /// Interval enclosure of the network input over the physical states whose
    /// working coordinates lie in the box `[lo, hi]`.
    pub fn enclose_input(&self, lo: [f64; 3], hi: [f64; 3]) -> Result<Vec<Interval>> {
        let cam = &self.geometry.camera;
        let runway = &self.geometry.runway;
        let k = self.k();
        let degenerate = |what: &str| GeometryError::DegenerateInverse(format!(
            "cell {lo:?}..{hi:?}: {what}"
        ));
        let (alpha, gamma) = self
            .columns(lo, hi)
            .ok_or_else(|| degenerate("holds no chart states"))?;
        let z1 = alpha.shift(cam.u0());
        let z2 = Interval::new(lo[1], hi[1]);
        let z3 = gamma.shift(cam.u0());
        // ρ = γ/α = near/far with far − near = rl·cosθ ∈ (0, rl].
        let near_min = k.abs() / alpha.lo.abs().max(alpha.hi.abs());
        let rho_floor = Interval::new(near_min / (near_min + runway.rl) * (1.0 - 1e-12), 1.0);
        let (sin_abs, rho) = if alpha.contains_zero() || gamma.contains_zero() {
            // Unbounded depth: fall back to the whole branch.
            (Interval::new(0.0, 1.0), rho_floor)
        } else {
            let inv_alpha = alpha.recip().expect("alpha excludes zero");
            let near = inv_alpha.scale(k);
            let far = gamma.recip().expect("gamma excludes zero").scale(k);
            let cos = (far - near)
                .scale(1.0 / runway.rl)
                .intersect(Interval::new(f64::MIN_POSITIVE, 1.0))
                .ok_or_else(|| degenerate("contains no physical states"))?;
            let sin_abs = (Interval::point(1.0) - cos.square())
                .intersect(Interval::new(0.0, 1.0))
                .ok_or_else(|| degenerate("pitch enclosure is empty"))?
                .sqrt();
            let rho = (gamma * inv_alpha).intersect(rho_floor).unwrap_or(rho_floor);
            (sin_abs, rho)
        };
        let sin = match self.branch {
            PitchBranch::NonNegative => sin_abs,
            PitchBranch::NonPositive => -sin_abs,
        };
        let dv = z2.shift(-cam.v0());
        // ζ4 = v0 − (fy·rl/k)·sinθ·γ + (ζ2 − v0)·γ/α, using 1/b = γ/k and a/b = γ/α.
        let z4 = (sin * gamma).scale(-cam.fy() * runway.rl / k) + dv * rho;
        let z4 = z4.shift(cam.v0());
        let z5 = z1 * z4 - z2 * z3;
        let mut out = vec![z1, z2, z3, z4, z5];
        if self.geometry.lines == 2 {
            let ratio = self.right_ratio();
            let r1 = alpha.scale(ratio).shift(cam.u0());
            let r3 = gamma.scale(ratio).shift(cam.u0());
            let r5 = r1 * z4 - z2 * r3;
            out.extend_from_slice(&[r1, z2, r3, z4, r5]);
        }
        Ok(out)
    }

    /// Enclosure of the pitch over the chart states whose working coordinates
    /// lie in `[lo, hi]`; `None` when the box holds no such state. Boxes that
    /// reach the image center column in both coordinates get the whole branch.
    pub fn pitch_range(&self, lo: [f64; 3], hi: [f64; 3]) -> Option<Interval> {
        let k = self.k();
        let half_pi = std::f64::consts::FRAC_PI_2;
        let whole = match self.branch {
            PitchBranch::NonNegative => Interval::new(0.0, half_pi),
            PitchBranch::NonPositive => Interval::new(-half_pi, 0.0),
        };
        let (alpha, gamma) = self.columns(lo, hi)?;
        if alpha.contains_zero() || gamma.contains_zero() {
            return Some(whole);
        }
        let (ia, ig) = (alpha.recip()?, gamma.recip()?);
        let cos = (ig.scale(k) - ia.scale(k))
            .scale(1.0 / self.geometry.runway.rl)
            .intersect(Interval::new(0.0, 1.0))?;
        if cos.hi <= 0.0 {
            return None;
        }
        let t = Interval::new(cos.hi.acos().next_down().max(0.0), cos.lo.acos().next_up().min(half_pi));
        Some(match self.branch {
            PitchBranch::NonNegative => t,
            PitchBranch::NonPositive => -t,
        })
    }

    /// Interval enclosure of the working coordinates of a state box.
    pub fn enclose_state_box(&self, b: &StateBox) -> Result<[Interval; 3]> {
        b.validate()?;
        let cam = &self.geometry.camera;
        let runway = &self.geometry.runway;
        let theta = Interval::new(b.theta[0], b.theta[1]);
        if theta.lo <= -std::f64::consts::FRAC_PI_2 || theta.hi >= std::f64::consts::FRAC_PI_2 {
            return Err(GeometryError::InvalidConfig(
                "state box pitch must stay inside (-pi/2, pi/2)".into(),
            ));
        }
        let cos = interval_cos(theta);
        let sin = interval_sin(theta);
        let y = Interval::new(b.y[0], b.y[1]);
        let z = Interval::new(b.z[0], b.z[1]);
        let near = cos.scale(runway.lz) + z;
        let far = cos.scale(runway.lz + runway.rl) + z;
        let inv_near = near
            .recip()
            .filter(|_| near.lo > 0.0)
            .ok_or(GeometryError::NonPositiveDepth(near.lo))?;
        let inv_far = far
            .recip()
            .filter(|_| far.lo > 0.0)
            .ok_or(GeometryError::NonPositiveDepth(far.lo))?;
        let k = self.k();
        let w1 = inv_near.scale(k).shift(cam.u0());
        let w2 = ((sin.scale(runway.lz) + y) * inv_near).scale(-cam.fy()).shift(cam.v0());
        let w3 = inv_far.scale(k).shift(cam.u0());
        Ok([w1, w2, w3])
    }
}

fn interval_cos(t: Interval) -> Interval {
    // Valid on (-pi/2, pi/2): increasing then decreasing, peak at 0.
    let (a, b) = (t.lo.cos(), t.hi.cos());
    let hi = if t.contains_zero() { 1.0 } else { a.max(b) };
    Interval::new(a.min(b).next_down(), hi.next_up().min(1.0))
}

fn interval_sin(t: Interval) -> Interval {
    Interval::new(t.lo.sin().next_down(), t.hi.sin().next_up())
}
