mod common;

use common::{dpll, matrix_power_holds, parse_dimacs, random_fsm, random_spec};
use lander_core::checker::{check, cnf_var, export_cnf, is_valid_path, SpecKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn explicit_checker_agrees_with_matrix_powers() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..150 {
        let n = rng.gen_range(1..=120);
        let fsm = random_fsm(&mut rng, n, 3);
        let horizon = rng.gen_range(0..=25);
        let spec = random_spec(&mut rng, n, horizon);
        let got = check(&fsm, &spec).unwrap();
        assert_eq!(got.holds(), matrix_power_holds(&fsm, &spec), "n={n} spec={spec:?}");
        if let Some(w) = &got.witness {
            assert!(is_valid_path(&fsm, w));
            assert!(w.len() <= spec.horizon + 1);
            assert!(spec.initial.contains(&w[0]));
            assert!(spec.goal.contains(w.last().unwrap()));
        }
    }
}

#[test]
fn cnf_satisfiability_matches_reachability() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let n = rng.gen_range(2..=12);
        let fsm = random_fsm(&mut rng, n, 2);
        let horizon = rng.gen_range(0..=5);
        let mut spec = random_spec(&mut rng, n, horizon);
        spec.kind = SpecKind::Invariant;
        let (vars, clauses) = parse_dimacs(&export_cnf(&fsm, &spec).unwrap());
        let model = dpll(vars, &clauses);
        let reachable = !matrix_power_holds(&fsm, &spec);
        assert_eq!(model.is_some(), reachable, "n={n} spec={spec:?}");
        if let Some(m) = model {
            // The decoded path is a valid run that visits the goal.
            let path: Vec<usize> = (0..=spec.horizon)
                .map(|t| (0..n).find(|&s| m[cnf_var(n, t, s)]).unwrap())
                .collect();
            assert!(spec.initial.contains(&path[0]));
            assert!(path.iter().any(|s| spec.goal.contains(s)));
            for w in path.windows(2) {
                assert!(fsm.successors(w[0]).contains(&w[1]) || (w[0] == w[1] && spec.goal.contains(&w[0])));
            }
        }
    }
}

#[test]
fn dpll_oracle_sanity() {
    assert!(dpll(1, &[vec![1], vec![-1]]).is_none());
    let m = dpll(2, &[vec![1, 2], vec![-1], vec![-2, 1, 2]]).unwrap();
    assert!(!m[1] && m[2]);
}
