//! Per-region robustness verification of a ReLU network by interval bound
//! propagation and input-space branch and bound.
//!
//! A query asks whether every input of a region maps into the `∞`-ball of
//! radius `μ` around the output at the region's anchor. The verifier splits
//! the region best-first by bound excess, proves leaves whose interval
//! output box fits the envelope, and searches leaves for concrete
//! counterexamples by sampling and coordinate descent.
//!
//! Regions are described through an [`InputLift`]: a low-dimensional
//! parameter box that is split, and a map that encloses the network input
//! over a sub-box. The plain case is the identity on an input box; grid
//! cells of the abstraction use the working chart, which encloses the full
//! network input over a cell of working coordinates.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::WorkingChart;
use crate::interval::Interval;
use crate::network::{Activation, Layer, LayeredReluNetwork};

#[derive(Debug, Error, PartialEq)]
pub enum VerifierError {
    #[error("split budget must be positive")]
    ZeroBudget,
    #[error("invalid query: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, VerifierError> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(VerifierError::Invalid("box needs lower <= upper componentwise".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn from_intervals(iv: &[Interval]) -> Self {
        Self {
            lower: iv.iter().map(|i| i.lo).collect(),
            upper: iv.iter().map(|i| i.hi).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| l <= v && v <= u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlEnvelope {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl ControlEnvelope {
    /// Amount by which `y` leaves the envelope (negative inside).
    pub fn excess(&self, y: &[f64]) -> f64 {
        y.iter()
            .zip(&self.center)
            .map(|(v, c)| (v - c).abs() - self.radius)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest amount by which a box `[lo, hi]` leaves the envelope.
    pub fn box_excess(&self, lo: &[f64], hi: &[f64]) -> f64 {
        (0..self.center.len())
            .map(|k| (hi[k] - self.center[k] - self.radius).max(self.center[k] - self.radius - lo[k]))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Sound output bounds over `[lo, hi]`, with the layer-wise pre-activation
/// bounds when `trace` is given.
fn propagate(
    net: &LayeredReluNetwork,
    lo: &[f64],
    hi: &[f64],
    mut trace: Option<&mut Vec<(Vec<f64>, Vec<f64>)>>,
) -> (Vec<f64>, Vec<f64>) {
    let mut c: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
    let mut r: Vec<f64> = lo.iter().zip(hi).zip(&c).map(|((l, h), m)| (h - m).max(m - l)).collect();
    let mut out_lo = Vec::new();
    let mut out_hi = Vec::new();
    for layer in net.layers() {
        let rows = layer.rows();
        out_lo.clear();
        out_hi.clear();
        out_lo.reserve(rows);
        out_hi.reserve(rows);
        for i in 0..rows {
            let b = layer.bias()[i];
            let (mut mc, mut mr, mut mag, mut nnz) = (b, 0.0, b.abs(), 0usize);
            for (j, w) in layer.row(i) {
                mc += w * c[j];
                let aw = w.abs();
                mr += aw * r[j];
                mag += aw * (c[j].abs() + r[j]);
                nnz += 1;
            }
            // Rounding of the dot products and the final sum/difference.
            let slack = (nnz as f64 + 3.0) * f64::EPSILON * (mag + mr) + f64::MIN_POSITIVE;
            out_lo.push(mc - mr - slack);
            out_hi.push(mc + mr + slack);
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push((out_lo.clone(), out_hi.clone()));
        }
        if layer.activation() == Activation::Relu {
            for k in 0..rows {
                out_lo[k] = out_lo[k].max(0.0);
                out_hi[k] = out_hi[k].max(0.0);
            }
        }
        c = out_lo.iter().zip(&out_hi).map(|(l, h)| 0.5 * (l + h)).collect();
        r = out_lo.iter().zip(&out_hi).zip(&c).map(|((l, h), m)| (h - m).max(m - l)).collect();
    }
    (out_lo, out_hi)
}

/// Symbolic interval propagation: each neuron carries an affine form in the
/// network inputs plus an error interval. Stable neurons keep their form, so
/// exact cancellations (such as `|a+b| − |a| − |b| = 0` for same-sign inputs)
/// survive; an unstable ReLU is replaced by a fresh interval `[0, U]`.
/// Rounding of every form is bounded through a running magnitude and added
/// to the error interval.
///
/// With `restart = Some(k)` the forms are concretized to a box after the
/// first `k` layers and propagation starts afresh from that box. This loses
/// correlation with the inputs but keeps the later layers exact in the
/// concretized values, which is much tighter when only a few of them vary.
fn propagate_symbolic(
    net: &LayeredReluNetwork,
    lo: &[f64],
    hi: &[f64],
    mut trace: Option<&mut Vec<(Vec<f64>, Vec<f64>)>>,
    restart: Option<usize>,
) -> (Vec<f64>, Vec<f64>) {
    let layers = net.layers();
    match restart {
        Some(k) if k > 0 && k < layers.len() => {
            let (mid_lo, mid_hi) = symbolic_segment(&layers[..k], lo, hi, trace.as_deref_mut());
            symbolic_segment(&layers[k..], &mid_lo, &mid_hi, trace)
        }
        _ => symbolic_segment(layers, lo, hi, trace),
    }
}

fn symbolic_segment(
    layers: &[Layer],
    lo: &[f64],
    hi: &[f64],
    mut trace: Option<&mut Vec<(Vec<f64>, Vec<f64>)>>,
) -> (Vec<f64>, Vec<f64>) {
    let n0 = lo.len();
    let xc: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
    let xr: Vec<f64> = lo.iter().zip(hi).zip(&xc).map(|((l, h), m)| (h - m).max(m - l)).collect();
    let identity: Vec<f64> = (0..n0).flat_map(|i| (0..n0).map(move |j| if i == j { 1.0 } else { 0.0 })).collect();
    let mut forms = SymForms {
        lower: Form { coef: identity.clone(), constant: vec![0.0; n0] },
        upper: Form { coef: identity, constant: vec![0.0; n0] },
        mag: lo.iter().zip(hi).map(|(l, h)| l.abs().max(h.abs())).collect(),
    };
    let mut bounds = (Vec::new(), Vec::new());
    for layer in layers {
        let rows = layer.rows();
        let mut next = SymForms::zeros(rows, n0);
        for i in 0..rows {
            let b = layer.bias()[i];
            let (mut mag, mut nnz) = (b.abs(), 0usize);
            let (cl, cu) = (&mut next.lower.constant[i], &mut next.upper.constant[i]);
            *cl = b;
            *cu = b;
            let out_l = &mut next.lower.coef[i * n0..(i + 1) * n0];
            for (j, w) in layer.row(i) {
                let src = if w >= 0.0 { &forms.lower } else { &forms.upper };
                let row = &src.coef[j * n0..(j + 1) * n0];
                for k in 0..n0 {
                    out_l[k] += w * row[k];
                }
                *cl += w * src.constant[j];
                mag += w.abs() * forms.mag[j];
                nnz += 1;
            }
            let out_u = &mut next.upper.coef[i * n0..(i + 1) * n0];
            for (j, w) in layer.row(i) {
                let src = if w >= 0.0 { &forms.upper } else { &forms.lower };
                let row = &src.coef[j * n0..(j + 1) * n0];
                for k in 0..n0 {
                    out_u[k] += w * row[k];
                }
                *cu += w * src.constant[j];
            }
            let slack = (nnz as f64 + 3.0) * f64::EPSILON * mag;
            *cl -= slack;
            *cu += slack;
            next.mag[i] = mag * (1.0 + 4.0 * f64::EPSILON);
        }
        let (pre_lo, pre_hi): (Vec<f64>, Vec<f64>) = (0..rows)
            .map(|i| {
                let s = (n0 as f64 + 4.0) * f64::EPSILON * next.mag[i] + f64::MIN_POSITIVE;
                let (lm, lr) = next.lower.eval(i, &xc, &xr);
                let (um, ur) = next.upper.eval(i, &xc, &xr);
                (lm - lr - s - (n0 as f64 + 4.0) * f64::EPSILON * lr, um + ur + s + (n0 as f64 + 4.0) * f64::EPSILON * ur)
            })
            .unzip();
        if layer.activation() == Activation::Relu {
            for i in 0..rows {
                let (l, u) = (pre_lo[i], pre_hi[i]);
                if l >= 0.0 {
                    continue;
                }
                if u <= 0.0 {
                    next.lower.set_zero(i);
                    next.upper.set_zero(i);
                    next.mag[i] = 0.0;
                    continue;
                }
                if next.form_gap(i, &xc, &xr) > RELAX_GAP * (u - l) {
                    // Loose forms: a fresh interval is tighter than a chord.
                    next.lower.set_zero(i);
                    next.upper.set_zero(i);
                    next.upper.constant[i] = u;
                    next.mag[i] = u;
                    continue;
                }
                // Chord above, `λ·x` or zero below; `λ` rounded up keeps the
                // chord above the ReLU on `[l, u]`.
                let lambda = (u / (u - l)) * (1.0 + 4.0 * f64::EPSILON);
                let row = i * n0..(i + 1) * n0;
                next.upper.coef[row.clone()].iter_mut().for_each(|v| *v *= lambda);
                let shifted = next.upper.constant[i] - l;
                let new_mag = lambda * (next.mag[i] + l.abs()) * (1.0 + 4.0 * f64::EPSILON);
                let s = (n0 as f64 + 4.0) * f64::EPSILON * new_mag;
                next.upper.constant[i] = lambda * shifted + s;
                if u >= -l {
                    let lam_lo = (u / (u - l)).min(1.0);
                    next.lower.coef[row].iter_mut().for_each(|v| *v *= lam_lo);
                    next.lower.constant[i] = lam_lo * next.lower.constant[i] - s;
                } else {
                    next.lower.set_zero(i);
                }
                next.mag[i] = new_mag;
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push((pre_lo.clone(), pre_hi.clone()));
        }
        bounds = (pre_lo, pre_hi);
        if layer.activation() == Activation::Relu {
            for i in 0..rows {
                bounds.0[i] = bounds.0[i].max(0.0);
                bounds.1[i] = bounds.1[i].max(0.0);
            }
        }
        forms = next;
    }
    bounds
}

/// Unstable ReLUs whose incoming forms differ by more than this fraction of
/// the pre-activation range are concretized instead of relaxed.
const RELAX_GAP: f64 = 0.25;

/// Affine forms `coef·x + constant`, one row per neuron.
struct Form {
    coef: Vec<f64>,
    constant: Vec<f64>,
}

impl Form {
    /// Value at the box center and radius of the linear part.
    fn eval(&self, i: usize, xc: &[f64], xr: &[f64]) -> (f64, f64) {
        let n0 = xc.len();
        let row = &self.coef[i * n0..(i + 1) * n0];
        let mut mid = self.constant[i];
        let mut rad = 0.0;
        for k in 0..n0 {
            mid += row[k] * xc[k];
            rad += row[k].abs() * xr[k];
        }
        (mid, rad)
    }

    fn set_zero(&mut self, i: usize) {
        let n0 = self.coef.len() / self.constant.len();
        self.coef[i * n0..(i + 1) * n0].iter_mut().for_each(|v| *v = 0.0);
        self.constant[i] = 0.0;
    }
}

/// Lower and upper linear bounds of every neuron in the network inputs.
struct SymForms {
    lower: Form,
    upper: Form,
    /// Upper bound on the magnitude of every term of either form over the box.
    mag: Vec<f64>,
}

impl SymForms {
    /// Largest value of `upper − lower` over the box.
    fn form_gap(&self, i: usize, xc: &[f64], xr: &[f64]) -> f64 {
        let n0 = xc.len();
        let (lr, ur) = (&self.lower.coef[i * n0..(i + 1) * n0], &self.upper.coef[i * n0..(i + 1) * n0]);
        let mut g = self.upper.constant[i] - self.lower.constant[i];
        for k in 0..n0 {
            let d = ur[k] - lr[k];
            g += d * xc[k] + d.abs() * xr[k];
        }
        g
    }

    fn zeros(rows: usize, n0: usize) -> Self {
        let form = || Form {
            coef: vec![0.0; rows * n0],
            constant: vec![0.0; rows],
        };
        Self {
            lower: form(),
            upper: form(),
            mag: vec![0.0; rows],
        }
    }
}

/// How output bounds over a box are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMethod {
    /// Layer-wise intervals with the center-radius rule.
    Interval,
    /// Affine forms in the inputs through stable neurons.
    #[default]
    Symbolic,
    /// Symbolic, restarted from concrete bounds after the given number of
    /// layers.
    Staged(usize),
}

fn bound_with(
    method: BoundMethod,
    net: &LayeredReluNetwork,
    lo: &[f64],
    hi: &[f64],
    trace: Option<&mut Vec<(Vec<f64>, Vec<f64>)>>,
) -> (Vec<f64>, Vec<f64>) {
    match method {
        BoundMethod::Interval => propagate(net, lo, hi, trace),
        BoundMethod::Symbolic => propagate_symbolic(net, lo, hi, trace, None),
        BoundMethod::Staged(k) => propagate_symbolic(net, lo, hi, trace, Some(k)),
    }
}

/// Sound output bounds by symbolic propagation; never wider than
/// [`interval_bounds`] by more than rounding slack on stable paths.
pub fn symbolic_bounds(net: &LayeredReluNetwork, b: &InputBox) -> InputBox {
    let (lower, upper) = propagate_symbolic(net, &b.lower, &b.upper, None, None);
    InputBox { lower, upper }
}

/// [`symbolic_bounds`] restarted after the first `layers` layers.
pub fn staged_bounds(net: &LayeredReluNetwork, b: &InputBox, layers: usize) -> InputBox {
    let (lower, upper) = propagate_symbolic(net, &b.lower, &b.upper, None, Some(layers));
    InputBox { lower, upper }
}

/// Interval bound propagation: every output of `net` over the box lies in
/// the returned box.
pub fn interval_bounds(net: &LayeredReluNetwork, b: &InputBox) -> InputBox {
    let (lower, upper) = propagate(net, &b.lower, &b.upper, None);
    InputBox { lower, upper }
}

/// Per-input sensitivity `|W_L|·D_{L−1}·…·D_1·|W_1|` summed over outputs,
/// where `D` masks neurons that are provably inactive on the box.
fn sensitivity(method: BoundMethod, net: &LayeredReluNetwork, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let mut trace = Vec::new();
    bound_with(method, net, lo, hi, Some(&mut trace));
    let mut g = vec![1.0; net.output_dim()];
    for (layer, (_, pre_hi)) in net.layers().iter().zip(&trace).rev() {
        if layer.activation() == Activation::Relu {
            for (gi, &h) in g.iter_mut().zip(pre_hi) {
                if h <= 0.0 {
                    *gi = 0.0;
                }
            }
        }
        let mut next = vec![0.0; layer.cols()];
        for (i, &gi) in g.iter().enumerate() {
            if gi == 0.0 {
                continue;
            }
            for (j, w) in layer.row(i) {
                next[j] += w.abs() * gi;
            }
        }
        g = next;
    }
    g
}

/// Network input over a parameter box.
#[derive(Debug, Clone, PartialEq)]
pub enum Lifted {
    /// No admissible input lies in the box.
    Empty,
    Box(InputBox),
    /// The box is admissible in part but has no finite enclosure.
    Unbounded,
}

pub trait InputLift: Sync {
    fn dim(&self) -> usize;
    fn enclose(&self, lo: &[f64], hi: &[f64]) -> Lifted;
    /// Network input at a parameter point, if admissible.
    fn point(&self, p: &[f64]) -> Option<Vec<f64>>;
    /// Sub-box holding every admissible point of `[lo, hi]`; `None` when
    /// there is none.
    fn contract(&self, lo: &[f64], hi: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        Some((lo.to_vec(), hi.to_vec()))
    }
}

/// Parameters are the network inputs themselves.
pub struct IdentityLift {
    pub dim: usize,
}

impl InputLift for IdentityLift {
    fn dim(&self) -> usize {
        self.dim
    }

    fn enclose(&self, lo: &[f64], hi: &[f64]) -> Lifted {
        Lifted::Box(InputBox {
            lower: lo.to_vec(),
            upper: hi.to_vec(),
        })
    }

    fn point(&self, p: &[f64]) -> Option<Vec<f64>> {
        Some(p.to_vec())
    }
}

/// Parameters are working coordinates; inputs are every line's `ζ`.
pub struct ChartLift<'a> {
    pub chart: &'a WorkingChart,
}

impl InputLift for ChartLift<'_> {
    fn dim(&self) -> usize {
        3
    }

    fn enclose(&self, lo: &[f64], hi: &[f64]) -> Lifted {
        let lo: [f64; 3] = lo.try_into().expect("three working coordinates");
        let hi: [f64; 3] = hi.try_into().expect("three working coordinates");
        if self.chart.pitch_range(lo, hi).is_none() {
            return Lifted::Empty;
        }
        match self.chart.enclose_input(lo, hi) {
            Ok(iv) => Lifted::Box(InputBox::from_intervals(&iv)),
            Err(_) => Lifted::Unbounded,
        }
    }

    fn point(&self, p: &[f64]) -> Option<Vec<f64>> {
        self.chart.input_at(p.try_into().ok()?).ok()
    }

    fn contract(&self, lo: &[f64], hi: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let (l, h) = self.chart.contract(lo.try_into().ok()?, hi.try_into().ok()?)?;
        Some((l.to_vec(), h.to_vec()))
    }
}

/// Interval enclosure of the network input over a grid cell.
pub fn region_to_input_box(
    chart: &WorkingChart,
    lo: [f64; 3],
    hi: [f64; 3],
) -> Result<InputBox, crate::camera::GeometryError> {
    Ok(InputBox::from_intervals(&chart.enclose_input(lo, hi)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictStatus {
    Proved,
    Violated,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    /// Parameter point of a counterexample (`Violated` only).
    pub witness: Option<Vec<f64>>,
    /// Network input at the witness.
    pub witness_input: Option<Vec<f64>>,
    /// Amount by which the witness output leaves the envelope.
    pub witness_excess: Option<f64>,
    /// Largest remaining bound excess (`Unknown` only).
    pub bound_gap: Option<f64>,
    pub splits: usize,
    #[serde(skip)]
    pub millis: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    pub max_splits: usize,
    /// Random points tried over the whole region before splitting.
    pub initial_samples: usize,
    /// Coordinate-descent rounds from the best sample.
    pub descent_rounds: usize,
    /// Minimum excess for a counterexample to count.
    pub witness_margin: f64,
    pub seed: u64,
    pub bound: BoundMethod,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            max_splits: 10_000,
            initial_samples: 64,
            descent_rounds: 24,
            witness_margin: 1e-9,
            seed: 0,
            bound: BoundMethod::Symbolic,
        }
    }
}

struct Leaf {
    lo: Vec<f64>,
    hi: Vec<f64>,
    excess: f64,
    /// Proved infeasible to bound (no enclosure); split first.
    unbounded: bool,
}

impl Leaf {
    fn key(&self) -> f64 {
        if self.unbounded {
            f64::INFINITY
        } else {
            self.excess
        }
    }
}

impl PartialEq for Leaf {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Leaf {}
impl PartialOrd for Leaf {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Leaf {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key()
            .total_cmp(&other.key())
            .then_with(|| other.lo.iter().zip(&other.hi).map(|(a, b)| a + b).sum::<f64>().total_cmp(&self.lo.iter().zip(&self.hi).map(|(a, b)| a + b).sum::<f64>()))
    }
}

struct Search<'a, L: InputLift + ?Sized> {
    net: &'a LayeredReluNetwork,
    lift: &'a L,
    env: &'a ControlEnvelope,
    opts: &'a VerifyOptions,
}

impl<L: InputLift + ?Sized> Search<'_, L> {
    fn excess_at(&self, p: &[f64]) -> Option<(Vec<f64>, f64)> {
        let x = self.lift.point(p)?;
        let e = self.env.excess(&self.net.forward(&x));
        Some((x, e))
    }

    fn leaf(&self, lo: Vec<f64>, hi: Vec<f64>) -> Option<Leaf> {
        let (lo, hi) = self.lift.contract(&lo, &hi)?;
        match self.lift.enclose(&lo, &hi) {
            Lifted::Empty => None,
            Lifted::Unbounded => Some(Leaf {
                lo,
                hi,
                excess: f64::INFINITY,
                unbounded: true,
            }),
            Lifted::Box(b) => {
                let (ol, oh) = bound_with(self.opts.bound, self.net, &b.lower, &b.upper, None);
                let excess = self.env.box_excess(&ol, &oh);
                Some(Leaf {
                    lo,
                    hi,
                    excess,
                    unbounded: false,
                })
            }
        }
    }

    /// Maximizes the excess by coordinate moves with shrinking steps.
    fn descend(&self, lo: &[f64], hi: &[f64], start: Vec<f64>, mut best: f64) -> (Vec<f64>, f64) {
        let mut p = start;
        let mut step: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.25 * (h - l)).collect();
        for _ in 0..self.opts.descent_rounds {
            let mut improved = false;
            for d in 0..p.len() {
                for dir in [-1.0, 1.0] {
                    let mut q = p.clone();
                    q[d] = (q[d] + dir * step[d]).clamp(lo[d], hi[d]);
                    if let Some((_, e)) = self.excess_at(&q) {
                        if e > best {
                            best = e;
                            p = q;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                step.iter_mut().for_each(|s| *s *= 0.5);
            }
        }
        (p, best)
    }

    fn witness(&self, p: Vec<f64>) -> Option<Verdict> {
        let (x, e) = self.excess_at(&p)?;
        (e > self.opts.witness_margin).then(|| Verdict {
            status: VerdictStatus::Violated,
            witness: Some(p),
            witness_input: Some(x),
            witness_excess: Some(e),
            bound_gap: None,
            splits: 0,
            millis: 0.0,
        })
    }

    /// Samples plus descent over `[lo, hi]`; returns a validated witness.
    fn hunt(&self, lo: &[f64], hi: &[f64], samples: usize, rng: &mut ChaCha8Rng) -> Option<Verdict> {
        let mut best: Option<(Vec<f64>, f64)> = None;
        let center: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let consider = |p: Vec<f64>, best: &mut Option<(Vec<f64>, f64)>| {
            if let Some((_, e)) = self.excess_at(&p) {
                if best.as_ref().is_none_or(|(_, b)| e > *b) {
                    *best = Some((p, e));
                }
            }
        };
        consider(center, &mut best);
        for _ in 0..samples {
            let p = lo.iter().zip(hi).map(|(l, h)| if l < h { rng.gen_range(*l..=*h) } else { *l }).collect();
            consider(p, &mut best);
        }
        let (p, e) = best?;
        if e > self.opts.witness_margin {
            return self.witness(p);
        }
        let (p, e) = self.descend(lo, hi, p, e);
        if e > self.opts.witness_margin {
            return self.witness(p);
        }
        None
    }

    fn split_dim(&self, leaf: &Leaf) -> usize {
        let widths: Vec<f64> = leaf.lo.iter().zip(&leaf.hi).map(|(l, h)| h - l).collect();
        let widest = (0..widths.len()).max_by(|&a, &b| widths[a].total_cmp(&widths[b])).unwrap_or(0);
        if leaf.unbounded {
            return widest;
        }
        let Lifted::Box(full) = self.lift.enclose(&leaf.lo, &leaf.hi) else {
            return widest;
        };
        let sens = sensitivity(self.opts.bound, self.net, &full.lower, &full.upper);
        let width_of = |b: &InputBox| -> Vec<f64> { b.lower.iter().zip(&b.upper).map(|(l, u)| u - l).collect() };
        let full_w = width_of(&full);
        let mut best = (widest, f64::NEG_INFINITY);
        for d in 0..widths.len() {
            if widths[d] <= 0.0 {
                continue;
            }
            let mid = 0.5 * (leaf.lo[d] + leaf.hi[d]);
            let (mut hi_a, mut lo_b) = (leaf.hi.clone(), leaf.lo.clone());
            hi_a[d] = mid;
            lo_b[d] = mid;
            // Worst child width per input; an empty child shrinks nothing.
            let mut worst = vec![0.0; full_w.len()];
            let mut bounded = true;
            for (clo, chi) in [(&leaf.lo, &hi_a), (&lo_b, &leaf.hi)] {
                match self.lift.enclose(clo, chi) {
                    Lifted::Empty => {}
                    Lifted::Box(b) => worst.iter_mut().zip(width_of(&b)).for_each(|(m, w)| *m = f64::max(*m, w)),
                    Lifted::Unbounded => bounded = false,
                }
            }
            let score = if bounded {
                worst.iter().zip(&full_w).zip(&sens).map(|((w, f), s)| (f - w).max(0.0) * s).sum()
            } else {
                0.0
            };
            if score > best.1 {
                best = (d, score);
            }
        }
        if best.1 <= 0.0 {
            widest
        } else {
            best.0
        }
    }
}

/// Decides whether every admissible input of the parameter box `[lo, hi]`
/// maps into the envelope.
pub fn verify_lifted<L: InputLift + ?Sized>(
    net: &LayeredReluNetwork,
    lift: &L,
    lo: &[f64],
    hi: &[f64],
    envelope: &ControlEnvelope,
    opts: &VerifyOptions,
) -> Result<Verdict, VerifierError> {
    if opts.max_splits == 0 {
        return Err(VerifierError::ZeroBudget);
    }
    if !(envelope.radius >= 0.0) || envelope.center.len() != net.output_dim() {
        return Err(VerifierError::Invalid(format!(
            "envelope needs radius >= 0 and {} center components",
            net.output_dim()
        )));
    }
    if lo.len() != lift.dim() || hi.len() != lift.dim() || lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
        return Err(VerifierError::Invalid("parameter box does not match the lift".into()));
    }
    let start = Instant::now();
    let search = Search {
        net,
        lift,
        env: envelope,
        opts,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let finish = |mut v: Verdict, splits: usize| {
        v.splits = splits;
        v.millis = start.elapsed().as_secs_f64() * 1e3;
        Ok(v)
    };
    let proved = |splits| Verdict {
        status: VerdictStatus::Proved,
        witness: None,
        witness_input: None,
        witness_excess: None,
        bound_gap: None,
        splits,
        millis: 0.0,
    };

    let mut heap = BinaryHeap::new();
    match search.leaf(lo.to_vec(), hi.to_vec()) {
        None => return finish(proved(0), 0),
        Some(root) if !root.unbounded && root.excess <= 0.0 => return finish(proved(0), 0),
        Some(root) => {
            if let Some(v) = search.hunt(&root.lo, &root.hi, opts.initial_samples, &mut rng) {
                return finish(v, 0);
            }
            heap.push(root);
        }
    }
    let mut splits = 0;
    while let Some(leaf) = heap.pop() {
        if splits >= opts.max_splits {
            let gap = heap.iter().map(Leaf::key).fold(leaf.key(), f64::max);
            let v = Verdict {
                status: VerdictStatus::Unknown,
                witness: None,
                witness_input: None,
                witness_excess: None,
                bound_gap: Some(gap),
                splits,
                millis: 0.0,
            };
            return finish(v, splits);
        }
        let d = search.split_dim(&leaf);
        let mid = 0.5 * (leaf.lo[d] + leaf.hi[d]);
        if !(mid > leaf.lo[d] && mid < leaf.hi[d]) {
            // Cannot split further: only a witness could settle this leaf.
            if let Some(v) = search.hunt(&leaf.lo, &leaf.hi, 8, &mut rng) {
                return finish(v, splits);
            }
            let v = Verdict {
                status: VerdictStatus::Unknown,
                witness: None,
                witness_input: None,
                witness_excess: None,
                bound_gap: Some(leaf.key()),
                splits,
                millis: 0.0,
            };
            return finish(v, splits);
        }
        splits += 1;
        let (mut hi_a, mut lo_b) = (leaf.hi.clone(), leaf.lo.clone());
        hi_a[d] = mid;
        lo_b[d] = mid;
        for (clo, chi) in [(leaf.lo.clone(), hi_a), (lo_b, leaf.hi.clone())] {
            let Some(child) = search.leaf(clo, chi) else { continue };
            if !child.unbounded && child.excess <= 0.0 {
                continue;
            }
            let center: Vec<f64> = child.lo.iter().zip(&child.hi).map(|(l, h)| 0.5 * (l + h)).collect();
            if let Some(v) = search.witness(center) {
                return finish(v, splits);
            }
            if splits % 64 == 0 {
                if let Some(v) = search.hunt(&child.lo, &child.hi, 4, &mut rng) {
                    return finish(v, splits);
                }
            }
            heap.push(child);
        }
    }
    finish(proved(splits), splits)
}

/// [`verify_lifted`] on a plain input box.
pub fn verify_region(
    net: &LayeredReluNetwork,
    b: &InputBox,
    envelope: &ControlEnvelope,
    opts: &VerifyOptions,
) -> Result<Verdict, VerifierError> {
    if b.dim() != net.input_dim() {
        return Err(VerifierError::Invalid(format!(
            "box has {} components, network takes {}",
            b.dim(),
            net.input_dim()
        )));
    }
    verify_lifted(net, &IdentityLift { dim: b.dim() }, &b.lower, &b.upper, envelope, opts)
}

/// One region of a batch query.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionQuery {
    pub region_id: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Anchor of the envelope in parameter space.
    pub center: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionReport {
    pub region_id: usize,
    pub center: Vec<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum AggregateStatus {
    Safe,
    UnsafeEnvelope,
    Unknown,
    NoFeasibleMu,
}

impl AggregateStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            AggregateStatus::Safe => 0,
            AggregateStatus::UnsafeEnvelope => 2,
            AggregateStatus::Unknown => 3,
            AggregateStatus::NoFeasibleMu => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AggregateStatus::Safe => "SAFE",
            AggregateStatus::UnsafeEnvelope => "UNSAFE-ENVELOPE",
            AggregateStatus::Unknown => "UNKNOWN",
            AggregateStatus::NoFeasibleMu => "NO-FEASIBLE-MU",
        }
    }
}

/// SAFE iff all proved; any violation makes it UNSAFE-ENVELOPE.
pub fn aggregate(reports: &[RegionReport]) -> AggregateStatus {
    if reports.iter().any(|r| r.verdict.status == VerdictStatus::Violated) {
        AggregateStatus::UnsafeEnvelope
    } else if reports.iter().all(|r| r.verdict.status == VerdictStatus::Proved) {
        AggregateStatus::Safe
    } else {
        AggregateStatus::Unknown
    }
}

/// Verifies each region against the envelope of radius `mu_max` around the
/// network output at its center. Regions run in parallel; reports keep the
/// query order. A region whose center has no admissible input is UNKNOWN.
pub fn batch_verify<L: InputLift + ?Sized>(
    net: &LayeredReluNetwork,
    lift: &L,
    queries: &[RegionQuery],
    mu_max: f64,
    opts: &VerifyOptions,
) -> Result<Vec<RegionReport>, VerifierError> {
    if opts.max_splits == 0 {
        return Err(VerifierError::ZeroBudget);
    }
    queries
        .par_iter()
        .map(|q| {
            let Some(x) = lift.point(&q.center) else {
                return Ok(RegionReport {
                    region_id: q.region_id,
                    center: q.center.clone(),
                    verdict: Verdict {
                        status: VerdictStatus::Unknown,
                        witness: None,
                        witness_input: None,
                        witness_excess: None,
                        bound_gap: Some(f64::INFINITY),
                        splits: 0,
                        millis: 0.0,
                    },
                });
            };
            let env = ControlEnvelope {
                center: net.forward(&x),
                radius: mu_max,
            };
            let local = VerifyOptions {
                seed: opts.seed ^ (q.region_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                ..*opts
            };
            let verdict = verify_lifted(net, lift, &q.lower, &q.upper, &env, &local)?;
            Ok(RegionReport {
                region_id: q.region_id,
                center: q.center.clone(),
                verdict,
            })
        })
        .collect()
}

/// Declarative property for external verifiers: input bounds and the
/// negated envelope (a satisfying input is a counterexample).
pub fn export_property(b: &InputBox, envelope: &ControlEnvelope, comment: &str) -> String {
    let mut out = String::new();
    for line in comment.lines() {
        let _ = writeln!(out, "; {line}");
    }
    for i in 0..b.dim() {
        let _ = writeln!(out, "(declare-const X_{i} Real)");
    }
    for k in 0..envelope.center.len() {
        let _ = writeln!(out, "(declare-const Y_{k} Real)");
    }
    for i in 0..b.dim() {
        let _ = writeln!(out, "(assert (>= X_{i} {:e}))", b.lower[i]);
        let _ = writeln!(out, "(assert (<= X_{i} {:e}))", b.upper[i]);
    }
    out.push_str("(assert (or\n");
    for (k, c) in envelope.center.iter().enumerate() {
        let _ = writeln!(out, "  (<= Y_{k} {:e})", c - envelope.radius);
        let _ = writeln!(out, "  (>= Y_{k} {:e})", c + envelope.radius);
    }
    out.push_str("))\n");
    out
}
