//! Grid partition of the working coordinates and the finite-state
//! abstraction of the closed loop.
//!
//! Each grid cell is one state. A cell's successors are the cells met by the
//! closed `∞`-ball of radius `β(r, τ) + γ(μ, τ) + η` around the nominal
//! successor of the cell's anchor, where `r` is the per-dimension distance
//! from the anchor to the cell boundary. One extra sink state collects every
//! way of leaving the verified domain: the ball leaving the grid, the pitch
//! leaving the chart's branch, or a cell that holds no physical state.
//!
//! A cell's anchor is its center when the center is a chart point and
//! otherwise the chart point nearest the center on a sampling lattice.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::GeometryError;
use crate::chart::{PitchBranch, StateBox, WorkingChart};
use crate::dynamics::{closed_loop_successor_zeta, control, DeltaFcBounds, DynamicsParams};
use crate::interval::Interval;
use crate::network::LayeredReluNetwork;

#[derive(Debug, Error)]
pub enum AbstractionError {
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("fsm text line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid fsm: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AbstractionError>;

/// Regular grid over the working coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    /// Cell side length; the cell radius is half of it.
    pub cell_side: f64,
}

impl PartitionSpec {
    pub fn cube(lower: f64, upper: f64, cell_side: f64) -> Self {
        Self {
            lower: [lower; 3],
            upper: [upper; 3],
            cell_side,
        }
    }

    pub fn radius(&self) -> f64 {
        0.5 * self.cell_side
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Region {
    pub index: usize,
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub spec: PartitionSpec,
    counts: [usize; 3],
}

impl Partition {
    pub fn new(spec: PartitionSpec) -> Result<Self> {
        if !(spec.cell_side > 0.0 && spec.cell_side.is_finite()) {
            return Err(AbstractionError::Partition(format!(
                "cell side must be positive, got {}",
                spec.cell_side
            )));
        }
        let mut counts = [0; 3];
        for d in 0..3 {
            let span = spec.upper[d] - spec.lower[d];
            if !(span > 0.0 && span.is_finite()) {
                return Err(AbstractionError::Partition(format!(
                    "dimension {d}: upper must exceed lower"
                )));
            }
            let ratio = span / spec.cell_side;
            let n = ratio.round();
            if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
                return Err(AbstractionError::Partition(format!(
                    "dimension {d}: span {span} is not a whole number of cells of side {}",
                    spec.cell_side
                )));
            }
            counts[d] = n as usize;
        }
        Ok(Self { spec, counts })
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn num_cells(&self) -> usize {
        self.counts.iter().product()
    }

    fn flat(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.counts[1] + idx[1]) * self.counts[2] + idx[2]
    }

    fn unflat(&self, id: usize) -> [usize; 3] {
        let i2 = id % self.counts[2];
        let rest = id / self.counts[2];
        [rest / self.counts[1], rest % self.counts[1], i2]
    }

    pub fn cell_box(&self, id: usize) -> ([f64; 3], [f64; 3]) {
        let idx = self.unflat(id);
        let s = self.spec.cell_side;
        let lo: [f64; 3] = std::array::from_fn(|d| self.spec.lower[d] + idx[d] as f64 * s);
        let hi: [f64; 3] = std::array::from_fn(|d| self.spec.lower[d] + (idx[d] + 1) as f64 * s);
        (lo, hi)
    }

    pub fn center(&self, id: usize) -> [f64; 3] {
        let (lo, hi) = self.cell_box(id);
        std::array::from_fn(|d| 0.5 * (lo[d] + hi[d]))
    }

    pub fn regions(&self) -> Vec<Region> {
        (0..self.num_cells())
            .map(|index| Region {
                index,
                center: self.center(index),
                radius: self.spec.radius(),
            })
            .collect()
    }

    /// Cell holding `p`; cells are half-open except along the upper face.
    pub fn locate(&self, p: [f64; 3]) -> Option<usize> {
        let mut idx = [0; 3];
        for d in 0..3 {
            if !(p[d] >= self.spec.lower[d] && p[d] <= self.spec.upper[d]) {
                return None;
            }
            let k = ((p[d] - self.spec.lower[d]) / self.spec.cell_side).floor() as usize;
            idx[d] = k.min(self.counts[d] - 1);
        }
        Some(self.flat(idx))
    }

    pub fn contains_box(&self, lo: [f64; 3], hi: [f64; 3]) -> bool {
        (0..3).all(|d| lo[d] >= self.spec.lower[d] && hi[d] <= self.spec.upper[d])
    }

    /// Every closed cell meeting the closed box `[lo, hi]`, in index order.
    /// Ties include both neighbours.
    pub fn cells_intersecting_box(&self, lo: [f64; 3], hi: [f64; 3]) -> Vec<usize> {
        let mut ranges = [(0usize, 0usize); 3];
        for d in 0..3 {
            let s = self.spec.cell_side;
            let a = (lo[d] - self.spec.lower[d]) / s;
            let b = (hi[d] - self.spec.lower[d]) / s;
            let tol = 1e-12 * (a.abs() + b.abs() + 1.0);
            let first = (a - tol - 1.0).ceil().max(0.0);
            let last = (b + tol).floor().min(self.counts[d] as f64 - 1.0);
            if !(first <= last) || lo[d] > hi[d] {
                return Vec::new();
            }
            ranges[d] = (first as usize, last as usize);
        }
        let mut out = Vec::new();
        for i in ranges[0].0..=ranges[0].1 {
            for j in ranges[1].0..=ranges[1].1 {
                for k in ranges[2].0..=ranges[2].1 {
                    out.push(self.flat([i, j, k]));
                }
            }
        }
        out
    }
}

pub fn partition(spec: PartitionSpec) -> Result<Vec<Region>> {
    Ok(Partition::new(spec)?.regions())
}

/// `β(r, τ) + γ(μ, τ)` for a per-dimension deviation `r`.
pub fn delta_zeta(radius: &[f64], mu: f64, tau: f64, bounds: &DeltaFcBounds) -> f64 {
    bounds.beta(radius, tau) + bounds.gamma(mu, tau)
}

/// Chart point representing a cell and the per-dimension distance from it to
/// the far side of the cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Anchor {
    pub point: [f64; 3],
    pub radius: [f64; 3],
}

/// Lattice resolutions tried when the cell center is not a chart point.
const ANCHOR_LATTICES: [usize; 2] = [9, 33];

pub fn find_anchor(chart: &WorkingChart, lo: [f64; 3], hi: [f64; 3]) -> Option<Anchor> {
    let center: [f64; 3] = std::array::from_fn(|d| 0.5 * (lo[d] + hi[d]));
    let anchor_at = |p: [f64; 3]| Anchor {
        point: p,
        radius: std::array::from_fn(|d| (p[d] - lo[d]).max(hi[d] - p[d])),
    };
    if chart.state_at(center).is_ok() {
        return Some(anchor_at(center));
    }
    chart.pitch_range(lo, hi)?;
    for n in ANCHOR_LATTICES {
        let mut best: Option<([f64; 3], f64)> = None;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let t = [a, b, c].map(|k| (k as f64 + 0.5) / n as f64);
                    let p: [f64; 3] = std::array::from_fn(|d| lo[d] + t[d] * (hi[d] - lo[d]));
                    let dist = (0..3).map(|d| (p[d] - center[d]).abs()).fold(0.0, f64::max);
                    if best.is_some_and(|(_, bd)| bd <= dist) {
                        continue;
                    }
                    if chart.state_at(p).is_ok() {
                        best = Some((p, dist));
                    }
                }
            }
        }
        if let Some((p, _)) = best {
            return Some(anchor_at(p));
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateLabel {
    Normal,
    Unsafe,
    Sink,
}

impl StateLabel {
    fn code(self) -> char {
        match self {
            StateLabel::Normal => 'n',
            StateLabel::Unsafe => 'u',
            StateLabel::Sink => 's',
        }
    }

    fn from_code(c: char) -> Option<Self> {
        match c {
            'n' => Some(StateLabel::Normal),
            'u' => Some(StateLabel::Unsafe),
            's' => Some(StateLabel::Sink),
            _ => None,
        }
    }
}

/// Finite transition system with sorted successor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fsm {
    successors: Vec<Vec<usize>>,
    labels: Vec<StateLabel>,
}

impl Fsm {
    pub fn new(mut successors: Vec<Vec<usize>>, labels: Vec<StateLabel>) -> Result<Self> {
        if successors.len() != labels.len() {
            return Err(AbstractionError::Invalid(format!(
                "{} successor lists for {} labels",
                successors.len(),
                labels.len()
            )));
        }
        let n = successors.len();
        for (s, list) in successors.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if let Some(&bad) = list.iter().find(|&&t| t >= n) {
                return Err(AbstractionError::Invalid(format!(
                    "state {s} has successor {bad} outside 0..{n}"
                )));
            }
        }
        Ok(Self { successors, labels })
    }

    pub fn num_states(&self) -> usize {
        self.successors.len()
    }

    pub fn successors(&self, s: usize) -> &[usize] {
        &self.successors[s]
    }

    pub fn labels(&self) -> &[StateLabel] {
        &self.labels
    }

    pub fn label(&self, s: usize) -> StateLabel {
        self.labels[s]
    }

    pub fn sink(&self) -> Option<usize> {
        self.labels.iter().position(|&l| l == StateLabel::Sink)
    }

    pub fn is_total(&self) -> bool {
        self.successors.iter().all(|s| !s.is_empty())
    }

    pub fn num_transitions(&self) -> usize {
        self.successors.iter().map(Vec::len).sum()
    }

    /// Unsafe-labelled states, plus the sink when it counts as unsafe.
    pub fn unsafe_states(&self, sink_is_unsafe: bool) -> Vec<usize> {
        (0..self.num_states())
            .filter(|&s| match self.labels[s] {
                StateLabel::Unsafe => true,
                StateLabel::Sink => sink_is_unsafe,
                StateLabel::Normal => false,
            })
            .collect()
    }

    /// Adjacency text: a header, a `labels:` line with one code per state
    /// (`n`ormal, `u`nsafe, `s`ink) and one `state: succ…` line per state.
    pub fn to_text(&self) -> String {
        let mut out = format!("# fsm states={}\nlabels: ", self.num_states());
        out.extend(self.labels.iter().map(|l| l.code()));
        out.push('\n');
        for (s, list) in self.successors.iter().enumerate() {
            let _ = write!(out, "{s}:");
            for t in list {
                let _ = write!(out, " {t}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut labels: Option<Vec<StateLabel>> = None;
        let mut successors: Vec<Vec<usize>> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |message: String| AbstractionError::Parse { line: n + 1, message };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(codes) = line.strip_prefix("labels:") {
                let parsed = codes
                    .trim()
                    .chars()
                    .map(|c| StateLabel::from_code(c).ok_or_else(|| err(format!("unknown label code {c:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                labels = Some(parsed);
                continue;
            }
            let (head, rest) = line
                .split_once(':')
                .ok_or_else(|| err("expected `state: successors`".into()))?;
            let s: usize = head.trim().parse().map_err(|e| err(format!("state id: {e}")))?;
            if s != successors.len() {
                return Err(err(format!("expected state {}, found {s}", successors.len())));
            }
            let list = rest
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|e| err(format!("successor {t:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            successors.push(list);
        }
        let labels = labels.ok_or(AbstractionError::Parse {
            line: 0,
            message: "missing labels line".into(),
        })?;
        Self::new(successors, labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Result of comparing the transitions of two FSMs over the same states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MonotonicityCheck {
    pub holds: bool,
    /// First state whose successors under the smaller `μ` are not all
    /// successors under the larger one.
    pub witness: Option<usize>,
}

pub fn transition_monotonicity_check(small: &Fsm, large: &Fsm) -> MonotonicityCheck {
    let witness = if small.num_states() != large.num_states() {
        Some(0)
    } else {
        (0..small.num_states()).find(|&s| {
            let big: BTreeSet<_> = large.successors(s).iter().collect();
            small.successors(s).iter().any(|t| !big.contains(t))
        })
    };
    MonotonicityCheck {
        holds: witness.is_none(),
        witness,
    }
}

/// Per-cell data that does not depend on `μ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellNominal {
    pub anchor: Option<Anchor>,
    /// Network input at the anchor.
    #[serde(skip)]
    pub input: Option<Vec<f64>>,
    /// Control at the anchor.
    pub control: Option<f64>,
    /// Working coordinates of the anchor's closed-loop successor.
    pub successor: Option<[f64; 3]>,
    /// Pitch enclosure over the cell.
    pub pitch: Option<[f64; 2]>,
    /// Why the cell routes straight to the sink, if it does.
    pub untraversable: Option<String>,
}

/// Closed-loop abstraction over a partition, ready to produce an FSM for any
/// `μ`.
#[derive(Debug, Clone)]
pub struct Abstraction {
    pub partition: Partition,
    pub chart: WorkingChart,
    pub params: DynamicsParams,
    /// Quantization slack added to every inflation radius.
    pub eta: f64,
    pub cells: Vec<CellNominal>,
}

impl Abstraction {
    /// Evaluates anchors, nominal controls and successors for every cell.
    /// `eta` defaults to the cell radius.
    pub fn prepare(
        chart: &WorkingChart,
        partition: &Partition,
        nn_aug: &LayeredReluNetwork,
        params: &DynamicsParams,
        eta: Option<f64>,
    ) -> Result<Self> {
        params.validate()?;
        if nn_aug.input_dim() != chart.geometry.input_dim() {
            return Err(AbstractionError::Invalid(format!(
                "network takes {} inputs, geometry provides {}",
                nn_aug.input_dim(),
                chart.geometry.input_dim()
            )));
        }
        let cells = (0..partition.num_cells())
            .into_par_iter()
            .map(|id| nominal(chart, partition, nn_aug, params, id))
            .collect();
        Ok(Self {
            partition: partition.clone(),
            chart: *chart,
            params: *params,
            eta: eta.unwrap_or_else(|| partition.spec.radius()),
            cells,
        })
    }

    pub fn sink(&self) -> usize {
        self.partition.num_cells()
    }

    /// Inflation radius of cell `id` at `μ`; `None` for untraversable cells.
    pub fn inflation(&self, id: usize, mu: f64) -> Option<f64> {
        let a = self.cells[id].anchor.as_ref()?;
        Some(delta_zeta(&a.radius, mu, self.params.tau, &self.params.bounds()) + self.eta)
    }

    /// Successor set of one cell at `μ`.
    pub fn successors(&self, id: usize, mu: f64) -> Vec<usize> {
        let sink = self.sink();
        let cell = &self.cells[id];
        let (Some(center), Some(u), Some(pitch), Some(r)) =
            (cell.successor, cell.control, cell.pitch, self.inflation(id, mu))
        else {
            return vec![sink];
        };
        let lo = center.map(|c| c - r);
        let hi = center.map(|c| c + r);
        let mut out = self.partition.cells_intersecting_box(lo, hi);
        let tau = self.params.tau;
        let next_pitch = Interval::new(pitch[0], pitch[1]) + Interval::new(u - mu, u + mu).scale(tau);
        let half_pi = std::f64::consts::FRAC_PI_2;
        let stays_on_branch = match self.chart.branch {
            PitchBranch::NonNegative => next_pitch.lo >= 0.0 && next_pitch.hi < half_pi,
            PitchBranch::NonPositive => next_pitch.hi <= 0.0 && next_pitch.lo > -half_pi,
        };
        if !self.partition.contains_box(lo, hi) || !stays_on_branch {
            out.push(sink);
        }
        out
    }

    /// FSM at `μ`, with the given cells labelled unsafe. The sink is the last
    /// state and loops on itself.
    pub fn fsm(&self, mu: f64, unsafe_cells: &[usize]) -> Fsm {
        let n = self.partition.num_cells();
        let mut successors: Vec<Vec<usize>> =
            (0..n).into_par_iter().map(|id| self.successors(id, mu)).collect();
        successors.push(vec![n]);
        let mut labels = vec![StateLabel::Normal; n + 1];
        for &c in unsafe_cells {
            labels[c] = StateLabel::Unsafe;
        }
        labels[n] = StateLabel::Sink;
        Fsm::new(successors, labels).expect("abstraction produces valid states")
    }

    pub fn traversable_cells(&self) -> Vec<usize> {
        (0..self.cells.len())
            .filter(|&i| self.cells[i].untraversable.is_none())
            .collect()
    }
}

fn nominal(
    chart: &WorkingChart,
    partition: &Partition,
    nn_aug: &LayeredReluNetwork,
    params: &DynamicsParams,
    id: usize,
) -> CellNominal {
    let (lo, hi) = partition.cell_box(id);
    let mut cell = CellNominal {
        anchor: None,
        input: None,
        control: None,
        successor: None,
        pitch: None,
        untraversable: None,
    };
    let Some(anchor) = find_anchor(chart, lo, hi) else {
        cell.untraversable = Some("cell holds no chart state".into());
        return cell;
    };
    cell.anchor = Some(anchor);
    cell.pitch = chart.pitch_range(lo, hi).map(|p| [p.lo, p.hi]);
    let result = chart.input_at(anchor.point).and_then(|input| {
        let next = closed_loop_successor_zeta(&input, nn_aug, &chart.geometry, params)?;
        Ok((input, next))
    });
    match result {
        Ok((input, next)) => {
            cell.control = Some(control(nn_aug, &input));
            cell.input = Some(input);
            cell.successor = Some([next[0], next[1], next[2]]);
        }
        Err(e) => cell.untraversable = Some(e.to_string()),
    }
    cell
}

/// Cells whose closed box meets the working-coordinate image of a state box.
pub fn unsafe_cells_from_state_box(
    chart: &WorkingChart,
    partition: &Partition,
    b: &StateBox,
) -> Result<Vec<usize>> {
    let w = chart.enclose_state_box(b)?;
    Ok(partition.cells_intersecting_box(w.map(|i| i.lo), w.map(|i| i.hi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_grid_has_4096_cells() {
        assert_eq!(partition(PartitionSpec::cube(0.0, 16.0, 1.0)).unwrap().len(), 4096);
    }

    #[test]
    fn one_dimensional_centers() {
        let p = Partition::new(PartitionSpec {
            lower: [0.0, 0.0, 0.0],
            upper: [2.0, 1.0, 1.0],
            cell_side: 1.0,
        })
        .unwrap();
        let centers: Vec<f64> = p.regions().iter().map(|r| r.center[0]).collect();
        assert_eq!(centers, vec![0.5, 1.5]);
    }

    #[test]
    fn non_integral_grid_is_rejected() {
        assert!(Partition::new(PartitionSpec::cube(0.0, 2.5, 1.0)).is_err());
        assert!(Partition::new(PartitionSpec::cube(1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn locate_and_boxes_agree() {
        let p = Partition::new(PartitionSpec::cube(0.0, 4.0, 1.0)).unwrap();
        for id in 0..p.num_cells() {
            assert_eq!(p.locate(p.center(id)), Some(id));
        }
        assert_eq!(p.locate([4.0, 4.0, 4.0]), Some(63));
        assert_eq!(p.locate([4.0001, 0.0, 0.0]), None);
        // A box touching the face between cells 0 and 16 meets both.
        assert_eq!(p.cells_intersecting_box([0.2, 0.2, 0.2], [1.0, 0.8, 0.8]), vec![0, 16]);
        assert!(p.cells_intersecting_box([5.0, 0.0, 0.0], [6.0, 1.0, 1.0]).is_empty());
        assert_eq!(p.cells_intersecting_box([-9.0; 3], [9.0; 3]).len(), 64);
    }

    #[test]
    fn delta_zeta_examples() {
        let b = DynamicsParams::default().bounds();
        let d0 = delta_zeta(&[1.0; 3], 0.0, 0.1, &b);
        assert_eq!(d0, b.beta(&[1.0; 3], 0.1));
        assert!((delta_zeta(&[1.0; 3], 1.0, 0.1, &b) - 7.7670).abs() < 1e-3);
    }

    fn fsm(succ: Vec<Vec<usize>>) -> Fsm {
        let n = succ.len();
        Fsm::new(succ, vec![StateLabel::Normal; n]).unwrap()
    }

    #[test]
    fn monotonicity_witness() {
        let a = fsm(vec![vec![0, 1], vec![1]]);
        let b = fsm(vec![vec![0, 1], vec![0, 1]]);
        assert!(transition_monotonicity_check(&a, &a).holds);
        assert!(transition_monotonicity_check(&a, &b).holds);
        let c = transition_monotonicity_check(&b, &a);
        assert_eq!((c.holds, c.witness), (false, Some(1)));
    }

    #[test]
    fn text_round_trip() {
        let f = Fsm::new(
            vec![vec![1, 2], vec![2], vec![2]],
            vec![StateLabel::Normal, StateLabel::Unsafe, StateLabel::Sink],
        )
        .unwrap();
        let text = f.to_text();
        assert!(text.contains("labels: nus"));
        assert!(text.contains("0: 1 2"));
        assert_eq!(Fsm::from_text(&text).unwrap(), f);
        assert_eq!(f.unsafe_states(false), vec![1]);
        assert_eq!(f.unsafe_states(true), vec![1, 2]);
    }

    #[test]
    fn malformed_text_reports_line() {
        let err = Fsm::from_text("labels: nn\n0: 1\n1: x\n").unwrap_err();
        assert!(matches!(err, AbstractionError::Parse { line: 3, .. }), "{err}");
        assert!(Fsm::from_text("labels: nn\n0: 5\n1: 0\n").is_err());
        assert!(Fsm::from_text("0: 0\n").is_err());
    }
}
