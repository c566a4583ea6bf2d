//! Bounded model checking of an [`Fsm`] by explicit breadth-first search,
//! the backward search for the largest admissible control deviation, and a
//! DIMACS export of the same bounded query.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{transition_monotonicity_check, Fsm};

#[derive(Debug, Error, PartialEq)]
pub enum CheckerError {
    #[error("invalid bounded spec: {0}")]
    InvalidSpec(String),
    #[error("no feasible mu: the specification fails already at mu = {smallest}")]
    NoFeasibleMu { smallest: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpecKind {
    /// No path of at most `horizon` steps meets `goal` (read: unsafe).
    Invariant,
    /// Every initial state reaches `goal` (read: target) within `horizon`.
    Reach,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundedSpec {
    pub kind: SpecKind,
    pub horizon: usize,
    pub initial: Vec<usize>,
    pub goal: Vec<usize>,
}

impl BoundedSpec {
    pub fn invariant(horizon: usize, initial: Vec<usize>, unsafe_states: Vec<usize>) -> Self {
        Self {
            kind: SpecKind::Invariant,
            horizon,
            initial,
            goal: unsafe_states,
        }
    }

    pub fn reach(horizon: usize, initial: Vec<usize>, target: Vec<usize>) -> Self {
        Self {
            kind: SpecKind::Reach,
            horizon,
            initial,
            goal: target,
        }
    }

    pub fn validate(&self, fsm: &Fsm) -> Result<(), CheckerError> {
        let n = fsm.num_states();
        if let Some(bad) = self.initial.iter().chain(&self.goal).find(|&&s| s >= n) {
            return Err(CheckerError::InvalidSpec(format!(
                "state {bad} is outside the fsm's 0..{n}"
            )));
        }
        Ok(())
    }

    fn goal_mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &g in &self.goal {
            m[g] = true;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CheckStatus {
    Holds,
    Fails,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InitialOutcome {
    pub initial: usize,
    pub reached: bool,
    pub witness: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub status: CheckStatus,
    /// Counterexample for a failed invariant; for a reach query that holds,
    /// the witness of the first initial state.
    pub witness: Option<Vec<usize>>,
    /// Reach queries only: one entry per initial state.
    pub per_initial: Vec<InitialOutcome>,
}

impl CheckResult {
    pub fn holds(&self) -> bool {
        self.status == CheckStatus::Holds
    }
}

/// Shortest path from any of `sources` to a `goal` state using at most
/// `horizon` steps.
fn shortest_path(fsm: &Fsm, sources: &[usize], goal: &[bool], horizon: usize) -> Option<Vec<usize>> {
    let n = fsm.num_states();
    let mut parent = vec![usize::MAX; n];
    let mut depth = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for &s in sources {
        if depth[s] == usize::MAX {
            depth[s] = 0;
            queue.push_back(s);
        }
    }
    while let Some(s) = queue.pop_front() {
        if goal[s] {
            let mut path = vec![s];
            let mut cur = s;
            while depth[cur] > 0 {
                cur = parent[cur];
                path.push(cur);
            }
            path.reverse();
            return Some(path);
        }
        if depth[s] == horizon {
            continue;
        }
        for &t in fsm.successors(s) {
            if depth[t] == usize::MAX {
                depth[t] = depth[s] + 1;
                parent[t] = s;
                queue.push_back(t);
            }
        }
    }
    None
}

pub fn check_bounded_safety(fsm: &Fsm, spec: &BoundedSpec) -> Result<CheckResult, CheckerError> {
    if spec.kind != SpecKind::Invariant {
        return Err(CheckerError::InvalidSpec("safety check needs an invariant spec".into()));
    }
    spec.validate(fsm)?;
    let goal = spec.goal_mask(fsm.num_states());
    let witness = shortest_path(fsm, &spec.initial, &goal, spec.horizon);
    Ok(CheckResult {
        status: if witness.is_some() {
            CheckStatus::Fails
        } else {
            CheckStatus::Holds
        },
        witness,
        per_initial: Vec::new(),
    })
}

/// Holds iff each initial state can reach the target within the horizon;
/// checked separately per initial state.
pub fn check_bounded_reach(fsm: &Fsm, spec: &BoundedSpec) -> Result<CheckResult, CheckerError> {
    if spec.kind != SpecKind::Reach {
        return Err(CheckerError::InvalidSpec("reach check needs a reach spec".into()));
    }
    spec.validate(fsm)?;
    let goal = spec.goal_mask(fsm.num_states());
    let per_initial: Vec<InitialOutcome> = spec
        .initial
        .iter()
        .map(|&s| {
            let witness = shortest_path(fsm, &[s], &goal, spec.horizon);
            InitialOutcome {
                initial: s,
                reached: witness.is_some(),
                witness,
            }
        })
        .collect();
    let all = per_initial.iter().all(|o| o.reached);
    Ok(CheckResult {
        status: if all {
            CheckStatus::Holds
        } else {
            CheckStatus::Fails
        },
        witness: if all {
            per_initial.first().and_then(|o| o.witness.clone())
        } else {
            None
        },
        per_initial,
    })
}

pub fn check(fsm: &Fsm, spec: &BoundedSpec) -> Result<CheckResult, CheckerError> {
    match spec.kind {
        SpecKind::Invariant => check_bounded_safety(fsm, spec),
        SpecKind::Reach => check_bounded_reach(fsm, spec),
    }
}

/// True iff consecutive states of `path` are transitions of `fsm`.
pub fn is_valid_path(fsm: &Fsm, path: &[usize]) -> bool {
    path.iter().all(|&s| s < fsm.num_states())
        && path.windows(2).all(|w| fsm.successors(w[0]).binary_search(&w[1]).is_ok())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuStep {
    pub mu: f64,
    pub result: CheckResult,
    pub states: usize,
    pub transitions: usize,
    /// Transitions at the previous `μ` are contained in these.
    pub monotone_with_previous: Option<bool>,
    #[serde(skip)]
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuSearchOutcome {
    /// Largest `μ` of the passing prefix; `None` when the first fails.
    pub mu_max: Option<f64>,
    pub steps: Vec<MuStep>,
    pub pass_set_is_prefix: bool,
    pub monotone: bool,
}

impl MuSearchOutcome {
    pub fn require(&self) -> Result<f64, CheckerError> {
        self.mu_max.ok_or(CheckerError::NoFeasibleMu {
            smallest: self.steps.first().map_or(f64::NAN, |s| s.mu),
        })
    }
}

/// Increases `μ` along `mu_values` while the FSM built for it satisfies the
/// spec. In exhaustive mode every value is checked, so the prefix structure
/// of the pass set can be confirmed; otherwise the search stops at the first
/// failure.
pub fn mu_search(
    mu_values: &[f64],
    spec: &BoundedSpec,
    exhaustive: bool,
    mut build: impl FnMut(f64) -> Fsm,
) -> Result<MuSearchOutcome, CheckerError> {
    if mu_values.is_empty() {
        return Err(CheckerError::InvalidSpec("mu list is empty".into()));
    }
    if mu_values.windows(2).any(|w| !(w[0] < w[1])) || !(mu_values[0] >= 0.0) {
        return Err(CheckerError::InvalidSpec(
            "mu list must be non-negative and strictly ascending".into(),
        ));
    }
    let mut steps = Vec::new();
    let mut previous: Option<Fsm> = None;
    for &mu in mu_values {
        let start = Instant::now();
        let fsm = build(mu);
        let result = check(&fsm, spec)?;
        let monotone_with_previous = previous
            .as_ref()
            .map(|p| transition_monotonicity_check(p, &fsm).holds);
        let passed = result.holds();
        steps.push(MuStep {
            mu,
            result,
            states: fsm.num_states(),
            transitions: fsm.num_transitions(),
            monotone_with_previous,
            millis: start.elapsed().as_secs_f64() * 1e3,
        });
        previous = Some(fsm);
        if !passed && !exhaustive {
            break;
        }
    }
    let passes: Vec<bool> = steps.iter().map(|s| s.result.holds()).collect();
    let prefix_len = passes.iter().take_while(|&&p| p).count();
    let pass_set_is_prefix = passes[prefix_len..].iter().all(|&p| !p);
    let monotone = steps.iter().all(|s| s.monotone_with_previous != Some(false));
    let mu_max = (prefix_len > 0).then(|| steps[prefix_len - 1].mu);
    Ok(MuSearchOutcome {
        mu_max,
        steps,
        pass_set_is_prefix,
        monotone,
    })
}

/// Variable for state `s` at time `t` in the CNF encoding.
pub fn cnf_var(num_states: usize, t: usize, s: usize) -> usize {
    t * num_states + s + 1
}

/// DIMACS CNF satisfiable iff some path of at most `horizon` steps leads
/// from an initial state to a goal state.
///
/// One variable per (time, state) pair; exactly one state per time step
/// (at-least-one clause plus a sequential-counter at-most-one using auxiliary
/// variables numbered after the state variables); each occupied state
/// implies one of its successors at the next step, and goal states may also
/// stay put so shorter paths extend to the full horizon.
pub fn export_cnf(fsm: &Fsm, spec: &BoundedSpec) -> Result<String, CheckerError> {
    spec.validate(fsm)?;
    let n = fsm.num_states();
    let t_max = spec.horizon;
    let goal = spec.goal_mask(n);
    let main_vars = (t_max + 1) * n;
    let aux = |t: usize, i: usize| main_vars + t * n.saturating_sub(1) + i + 1;
    let total_vars = main_vars + (t_max + 1) * n.saturating_sub(1);
    let x = |t: usize, s: usize| cnf_var(n, t, s) as i64;

    let mut clauses: Vec<Vec<i64>> = Vec::new();
    clauses.push(spec.initial.iter().map(|&s| x(0, s)).collect());
    for t in 0..=t_max {
        clauses.push((0..n).map(|s| x(t, s)).collect());
        if n > 1 {
            let a = |i: usize| aux(t, i) as i64;
            clauses.push(vec![-x(t, 0), a(0)]);
            for i in 1..n - 1 {
                clauses.push(vec![-x(t, i), a(i)]);
                clauses.push(vec![-a(i - 1), a(i)]);
                clauses.push(vec![-x(t, i), -a(i - 1)]);
            }
            clauses.push(vec![-x(t, n - 1), -a(n - 2)]);
        }
    }
    for t in 0..t_max {
        for s in 0..n {
            let mut c = vec![-x(t, s)];
            c.extend(fsm.successors(s).iter().map(|&r| x(t + 1, r)));
            if goal[s] && fsm.successors(s).binary_search(&s).is_err() {
                c.push(x(t + 1, s));
            }
            clauses.push(c);
        }
    }
    let mut goal_clause = Vec::new();
    for t in 0..=t_max {
        goal_clause.extend(spec.goal.iter().map(|&s| x(t, s)));
    }
    clauses.push(goal_clause);

    let mut out = String::new();
    let _ = writeln!(out, "c bounded path query: {n} states, horizon {t_max}");
    let _ = writeln!(out, "c state s at time t is variable t*{n} + s + 1 (t = 0..={t_max})");
    let _ = writeln!(
        out,
        "c variables {}..={} are at-most-one counter auxiliaries",
        main_vars + 1,
        total_vars
    );
    let _ = writeln!(out, "p cnf {total_vars} {}", clauses.len());
    for c in &clauses {
        for lit in c {
            let _ = write!(out, "{lit} ");
        }
        out.push_str("0\n");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::StateLabel;

    fn fsm(succ: Vec<Vec<usize>>) -> Fsm {
        let n = succ.len();
        Fsm::new(succ, vec![StateLabel::Normal; n]).unwrap()
    }

    #[test]
    fn unreachable_unsafe_holds() {
        let f = fsm(vec![vec![0], vec![1]]);
        let r = check_bounded_safety(&f, &BoundedSpec::invariant(20, vec![0], vec![1])).unwrap();
        assert!(r.holds());
        assert!(r.witness.is_none());
    }

    #[test]
    fn unsafe_initial_fails_immediately() {
        let f = fsm(vec![vec![0], vec![1]]);
        let r = check_bounded_safety(&f, &BoundedSpec::invariant(5, vec![1], vec![1])).unwrap();
        assert_eq!(r.witness, Some(vec![1]));
    }

    #[test]
    fn counterexample_is_shortest_and_within_horizon() {
        // 0 -> 1 -> 2 -> 3, plus shortcut 0 -> 3 is absent; 3 unsafe.
        let f = fsm(vec![vec![1], vec![2], vec![3], vec![3]]);
        let spec = BoundedSpec::invariant(3, vec![0], vec![3]);
        let r = check_bounded_safety(&f, &spec).unwrap();
        assert_eq!(r.witness, Some(vec![0, 1, 2, 3]));
        assert!(is_valid_path(&f, r.witness.as_ref().unwrap()));
        let short = BoundedSpec::invariant(2, vec![0], vec![3]);
        assert!(check_bounded_safety(&f, &short).unwrap().holds());
    }

    #[test]
    fn reach_examples() {
        let f = fsm(vec![vec![1], vec![1], vec![2]]);
        let same = check_bounded_reach(&f, &BoundedSpec::reach(0, vec![0], vec![0])).unwrap();
        assert!(same.holds());
        assert_eq!(same.witness, Some(vec![0]));
        let cut = check_bounded_reach(&f, &BoundedSpec::reach(10, vec![0, 2], vec![1])).unwrap();
        assert!(!cut.holds());
        assert_eq!(cut.per_initial[1].reached, false);
    }

    #[test]
    fn out_of_range_spec_is_rejected() {
        let f = fsm(vec![vec![0]]);
        assert!(check(&f, &BoundedSpec::invariant(1, vec![0], vec![3])).is_err());
    }

    #[test]
    fn mu_search_examples() {
        let safe = fsm(vec![vec![0], vec![1]]);
        let spec = BoundedSpec::invariant(20, vec![0], vec![1]);
        let mus = [0.1, 0.2, 0.3, 0.6, 0.8, 0.9, 1.1];
        let out = mu_search(&mus, &spec, true, |_| safe.clone()).unwrap();
        assert_eq!(out.mu_max, Some(1.1));
        assert!(out.pass_set_is_prefix && out.monotone);

        let bad = fsm(vec![vec![1], vec![1]]);
        let out = mu_search(&mus, &spec, false, |_| bad.clone()).unwrap();
        assert_eq!(out.mu_max, None);
        assert_eq!(out.steps.len(), 1);
        assert_eq!(out.require(), Err(CheckerError::NoFeasibleMu { smallest: 0.1 }));

        // Transitions grow with mu; 0 -> 1 appears from mu = 0.6 on.
        let out = mu_search(&mus, &spec, true, |mu| {
            if mu < 0.5 {
                fsm(vec![vec![0], vec![1]])
            } else {
                fsm(vec![vec![0, 1], vec![1]])
            }
        })
        .unwrap();
        assert_eq!(out.mu_max, Some(0.3));
        assert!(out.pass_set_is_prefix && out.monotone);
        assert!(mu_search(&[0.2, 0.1], &spec, true, |_| safe.clone()).is_err());
        assert!(mu_search(&[], &spec, true, |_| safe.clone()).is_err());
    }

    #[test]
    fn cnf_header_and_counts() {
        let f = fsm(vec![vec![0]]);
        let cnf = export_cnf(&f, &BoundedSpec::invariant(0, vec![0], vec![0])).unwrap();
        assert!(cnf.contains("p cnf 1 3"));
        assert!(cnf.lines().filter(|l| !l.starts_with('c') && !l.starts_with('p')).all(|l| l.ends_with(" 0")));
        assert_eq!(cnf_var(4, 2, 3), 12);
    }
}
