//! Pinhole camera geometry for the runway scene.
//!
//! Frames: runway (RCF) → camera (CCF) by a pitch rotation plus the state
//! offset, then camera → pixel (PCF) by the pinhole projection. The change of
//! coordinates [`state_to_zeta`] replaces the aircraft state with the raw pixel
//! projections of one runway line's endpoints plus the cross term
//! `z5 = z1·z4 − z2·z3`, and [`zeta_to_state`] inverts it in closed form.
//!
//! Pixel `(i, j)` (1-based) covers `[i−1, i] × [j−1, j]` in raw pixel
//! coordinates. `i` runs along the raw x axis, `j` along the raw y axis.

use serde::{Deserialize, Serialize};

pub type Point3 = [f64; 3];
pub type Point2 = [f64; 2];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("non-positive projection depth {0}")]
    NonPositiveDepth(f64),
    #[error("degenerate inverse: {0}")]
    DegenerateInverse(String),
    #[error("invalid geometry configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

/// Aircraft pose in the runway frame: pitch `theta` (rad), lateral `x`,
/// altitude `y` and along-runway `z` offsets (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AircraftState {
    pub theta: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl AircraftState {
    pub fn new(theta: f64, x: f64, y: f64, z: f64) -> Self {
        Self { theta, x, y, z }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.theta, self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Two parallel runway edge lines, `L` starting at `(lx, 0, lz)` and `R` at
/// `(lx + rw, 0, lz)`, both of length `rl` along z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunwaySpec {
    pub lx: f64,
    pub lz: f64,
    pub rw: f64,
    pub rl: f64,
}

impl RunwaySpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lx, self.lz, self.rw, self.rl].iter().all(|v| v.is_finite());
        if !finite || self.rw <= 0.0 || self.rl <= 0.0 {
            return Err(GeometryError::InvalidConfig(format!(
                "runway needs finite values with rw > 0 and rl > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn rx(&self) -> f64 {
        self.lx + self.rw
    }

    pub fn rz(&self) -> f64 {
        self.lz
    }

    /// Start and end point of a runway line in the runway frame.
    pub fn endpoints(&self, line: RunwayLine) -> (Point3, Point3) {
        let (x, z) = match line {
            RunwayLine::Left => (self.lx, self.lz),
            RunwayLine::Right => (self.rx(), self.rz()),
        };
        ([x, 0.0, z], [x, 0.0, z + self.rl])
    }

    pub fn line_x(&self, line: RunwayLine) -> f64 {
        match line {
            RunwayLine::Left => self.lx,
            RunwayLine::Right => self.rx(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RunwayLine {
    Left,
    Right,
}

impl RunwayLine {
    pub const BOTH: [RunwayLine; 2] = [RunwayLine::Left, RunwayLine::Right];
}

/// Pinhole intrinsics. `f`, `w`, `h` in meters; `wp`, `hp` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub f: f64,
    pub w: f64,
    pub h: f64,
    pub wp: usize,
    pub hp: usize,
}

impl CameraIntrinsics {
    /// Square `q × q` camera with the given focal length and sensor side.
    pub fn square(q: usize, f: f64, sensor: f64) -> Self {
        Self {
            f,
            w: sensor,
            h: sensor,
            wp: q,
            hp: q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.f, self.w, self.h].iter().all(|v| v.is_finite() && *v > 0.0);
        if !positive || self.wp == 0 || self.hp == 0 {
            return Err(GeometryError::InvalidConfig(format!(
                "camera parameters must be positive, got {self:?}"
            )));
        }
        if self.wp != self.hp {
            return Err(GeometryError::InvalidConfig(format!(
                "images must be square, got {}x{}",
                self.wp, self.hp
            )));
        }
        Ok(())
    }

    pub fn q(&self) -> usize {
        self.wp
    }

    pub fn u0(&self) -> f64 {
        0.5 * self.wp as f64
    }

    pub fn v0(&self) -> f64 {
        0.5 * self.hp as f64
    }

    pub fn rho_w(&self) -> f64 {
        self.wp as f64 / self.w
    }

    pub fn rho_h(&self) -> f64 {
        self.hp as f64 / self.h
    }

    /// Horizontal pixels per unit of `x/z` in the camera frame.
    pub fn fx(&self) -> f64 {
        self.rho_w() * self.f
    }

    /// Vertical pixels per unit of `y/z` in the camera frame.
    pub fn fy(&self) -> f64 {
        self.rho_h() * self.f
    }
}

/// Runway frame → camera frame.
pub fn rcf_to_ccf(p: Point3, state: &AircraftState) -> Point3 {
    let (s, c) = state.theta.sin_cos();
    [
        p[0] + state.x,
        c * p[1] + s * p[2] + state.y,
        -s * p[1] + c * p[2] + state.z,
    ]
}

/// Result of projecting a camera-frame point onto the pixel plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Floor of the raw coordinates.
    pub pixel: (i64, i64),
    pub raw: Point2,
}

pub fn project_to_pcf(p: Point3, cam: &CameraIntrinsics) -> Result<Projection> {
    if !(p[2] > 0.0) {
        return Err(GeometryError::BehindCamera(p[2]));
    }
    let raw = [
        cam.fx() * p[0] / p[2] + cam.u0(),
        -cam.fy() * p[1] / p[2] + cam.v0(),
    ];
    Ok(Projection {
        pixel: (raw[0].floor() as i64, raw[1].floor() as i64),
        raw,
    })
}

/// True iff the raw point lies in `[0, WP) × [0, HP)`.
pub fn is_visible(raw: Point2, cam: &CameraIntrinsics) -> bool {
    (0.0..cam.wp as f64).contains(&raw[0]) && (0.0..cam.hp as f64).contains(&raw[1])
}

/// Pixel-plane coordinates of one runway line: endpoints `(z1, z2)`,
/// `(z3, z4)` and the cross term `z5 = z1·z4 − z2·z3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZetaCoords(pub [f64; 5]);

impl ZetaCoords {
    pub fn from_endpoints(start: Point2, end: Point2) -> Self {
        let [z1, z2] = start;
        let [z3, z4] = end;
        Self([z1, z2, z3, z4, z1 * z4 - z2 * z3])
    }

    pub fn start(&self) -> Point2 {
        [self.0[0], self.0[1]]
    }

    pub fn end(&self) -> Point2 {
        [self.0[2], self.0[3]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `|z5 − (z1·z4 − z2·z3)|` relative to the magnitude of the products.
    pub fn cross_term_residual(&self) -> f64 {
        let [z1, z2, z3, z4, z5] = self.0;
        let scale = (z1 * z4).abs().max((z2 * z3).abs()).max(1.0);
        (z5 - (z1 * z4 - z2 * z3)).abs() / scale
    }
}

/// Change of coordinates for one runway line, written directly in terms of
/// the state (no intermediate camera-frame points).
pub fn state_to_zeta(
    state: &AircraftState,
    runway: &RunwaySpec,
    cam: &CameraIntrinsics,
    line: RunwayLine,
) -> Result<ZetaCoords> {
    let (s, c) = state.theta.sin_cos();
    let lx = runway.line_x(line);
    let lz = match line {
        RunwayLine::Left => runway.lz,
        RunwayLine::Right => runway.rz(),
    };
    let near = lz * c + state.z;
    let far = (lz + runway.rl) * c + state.z;
    for depth in [near, far] {
        if !(depth > 0.0) {
            return Err(GeometryError::NonPositiveDepth(depth));
        }
    }
    let (fx, fy, u0, v0) = (cam.fx(), cam.fy(), cam.u0(), cam.v0());
    let z1 = fx * (lx + state.x) / near + u0;
    let z2 = -fy * (lz * s + state.y) / near + v0;
    let z3 = fx * (lx + state.x) / far + u0;
    let z4 = -fy * ((lz + runway.rl) * s + state.y) / far + v0;
    Ok(ZetaCoords::from_endpoints([z1, z2], [z3, z4]))
}

/// Closed-form inverse of [`state_to_zeta`].
///
/// With `α = z1 − u0`, `γ = z3 − u0` and near/far depths `a`, `b`:
/// `α·a = γ·b`, `b − a = rl·cosθ`, and subtracting the two vertical equations
/// gives `tanθ = −((z4−v0)·α − (z2−v0)·γ) / (fy·(α − γ))`. Depth `a`, then
/// `z`, `x` and `y` follow.
pub fn zeta_to_state(
    zeta: &ZetaCoords,
    runway: &RunwaySpec,
    cam: &CameraIntrinsics,
    line: RunwayLine,
) -> Result<AircraftState> {
    let [z1, z2, z3, z4, _] = zeta.0;
    let (fx, fy, u0, v0) = (cam.fx(), cam.fy(), cam.u0(), cam.v0());
    let alpha = z1 - u0;
    let gamma = z3 - u0;
    let spread = alpha - gamma;
    if spread == 0.0 || !spread.is_finite() {
        return Err(GeometryError::DegenerateInverse(
            "line projects to a vertical point pair (z1 == z3)".into(),
        ));
    }
    let tan = -((z4 - v0) * alpha - (z2 - v0) * gamma) / (fy * spread);
    let cos = 1.0 / (1.0 + tan * tan).sqrt();
    let sin = tan * cos;
    let near = gamma * runway.rl * cos / spread;
    if !(near > 0.0) || !near.is_finite() {
        return Err(GeometryError::DegenerateInverse(format!(
            "recovered depth {near} is not positive"
        )));
    }
    let lz = match line {
        RunwayLine::Left => runway.lz,
        RunwayLine::Right => runway.rz(),
    };
    Ok(AircraftState {
        theta: tan.atan(),
        x: alpha * near / fx - runway.line_x(line),
        y: -(z2 - v0) * near / fy - lz * sin,
        z: near - lz * cos,
    })
}

/// One side of a pixel square in raw pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelEdge {
    pub ax: f64,
    pub ay: f64,
    pub bx: f64,
    pub by: f64,
}

/// Edges `AB, BC, CD, DA` of pixel `(i, j)` with `A = (i−1, j−1)`,
/// `B = (i, j−1)`, `C = (i, j)`, `D = (i−1, j)`.
pub fn pixel_edges(i: usize, j: usize) -> [PixelEdge; 4] {
    let (x0, y0) = (i as f64 - 1.0, j as f64 - 1.0);
    let (x1, y1) = (i as f64, j as f64);
    let corners = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
    std::array::from_fn(|k| {
        let a = corners[k];
        let b = corners[(k + 1) % 4];
        PixelEdge {
            ax: a[0],
            ay: a[1],
            bx: b[0],
            by: b[1],
        }
    })
}

/// Twice the signed area of triangle `(a, b, c)`.
pub fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Strict proper crossing of segments `p–q` and `a–b`: each segment's
/// endpoints lie strictly on opposite sides of the other's supporting line.
/// Touching, collinear overlap and endpoint contact all report `false`.
pub fn segments_cross_strictly(p: Point2, q: Point2, a: Point2, b: Point2) -> bool {
    let o1 = orient(a, b, p);
    let o2 = orient(a, b, q);
    let o3 = orient(p, q, a);
    let o4 = orient(p, q, b);
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// True iff segment `p–q` strictly crosses at least one side of pixel `(i, j)`.
pub fn segment_lights_pixel(p: Point2, q: Point2, i: usize, j: usize) -> bool {
    pixel_edges(i, j)
        .iter()
        .any(|e| segments_cross_strictly(p, q, [e.ax, e.ay], [e.bx, e.by]))
}

/// Binary `q × q` image. `bits[(i−1)·q + (j−1)]` holds pixel `(i, j)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonoImage {
    q: usize,
    bits: Vec<bool>,
}

impl MonoImage {
    pub fn blank(q: usize) -> Self {
        Self {
            q,
            bits: vec![false; q * q],
        }
    }

    pub fn from_bits(q: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), q * q, "image needs q² entries");
        Self { q, bits }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn index(q: usize, i: usize, j: usize) -> usize {
        (i - 1) * q + (j - 1)
    }

    /// Pixel `(i, j)`, 1-based.
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[Self::index(self.q, i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        let k = Self::index(self.q, i, j);
        self.bits[k] = on;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_on(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Pixels as 0/1 values in storage order.
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Rows of `#`/`.` with raw y increasing downward and x to the right.
    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity(self.q * (self.q + 1));
        for j in 1..=self.q {
            for i in 1..=self.q {
                out.push(if self.get(i, j) { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }

    /// Mirror across the vertical centerline (`i ↦ q + 1 − i`).
    pub fn mirrored(&self) -> Self {
        let mut m = Self::blank(self.q);
        for i in 1..=self.q {
            for j in 1..=self.q {
                m.set(self.q + 1 - i, j, self.get(i, j));
            }
        }
        m
    }
}

/// Raw pixel endpoints of one runway line, via the RCF → CCF → PCF pipeline.
pub fn project_line(
    state: &AircraftState,
    runway: &RunwaySpec,
    cam: &CameraIntrinsics,
    line: RunwayLine,
) -> Result<(Point2, Point2)> {
    let (a, b) = runway.endpoints(line);
    let pa = project_to_pcf(rcf_to_ccf(a, state), cam)?;
    let pb = project_to_pcf(rcf_to_ccf(b, state), cam)?;
    Ok((pa.raw, pb.raw))
}

/// Reference rasterizer: a pixel is on iff either projected runway line
/// strictly crosses one of its sides.
pub fn render_image_oracle(
    state: &AircraftState,
    runway: &RunwaySpec,
    cam: &CameraIntrinsics,
) -> Result<MonoImage> {
    let segments = RunwayLine::BOTH
        .iter()
        .map(|&line| project_line(state, runway, cam, line))
        .collect::<Result<Vec<_>>>()?;
    Ok(rasterize_segments(&segments, cam.q()))
}

/// Rasterizes raw pixel-plane segments with the strict crossing rule.
pub fn rasterize_segments(segments: &[(Point2, Point2)], q: usize) -> MonoImage {
    let mut img = MonoImage::blank(q);
    for &(p, r) in segments {
        // Only pixels overlapping the segment's bounding box can be crossed.
        let lo_x = p[0].min(r[0]).floor().max(0.0);
        let hi_x = p[0].max(r[0]).ceil().min(q as f64);
        let lo_y = p[1].min(r[1]).floor().max(0.0);
        let hi_y = p[1].max(r[1]).ceil().min(q as f64);
        if !(lo_x < hi_x && lo_y < hi_y) {
            continue;
        }
        for i in (lo_x as usize + 1)..=(hi_x as usize) {
            for j in (lo_y as usize + 1)..=(hi_y as usize) {
                if !img.get(i, j) && segment_lights_pixel(p, r, i, j) {
                    img.set(i, j, true);
                }
            }
        }
    }
    img
}
