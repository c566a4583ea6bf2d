mod common;

use common::chart;
use lander_core::dynamics::DynamicsParams;
use lander_core::training::{train_controller_bc, TrainingConfig};

fn config() -> TrainingConfig {
    TrainingConfig {
        hidden: vec![32, 32],
        epochs: 25,
        initial_states: 600,
        ..Default::default()
    }
}

#[test]
fn student_tracks_the_teacher_on_held_out_rollouts() {
    let out = train_controller_bc(&chart(8), [0.0; 3], [8.0; 3], &DynamicsParams::default(), &config(), None).unwrap();
    let r = &out.report;
    assert!(r.held_out_samples > 100, "{r:?}");
    assert!(r.held_out_within_0_1 >= 0.9, "{r:?}");
    assert!(r.loss.last().unwrap() < &r.loss[0]);
}

#[test]
fn zero_epochs_leave_the_initial_weights() {
    let p = DynamicsParams::default();
    let a = TrainingConfig { epochs: 0, ..config() };
    let b = TrainingConfig {
        epochs: 0,
        learning_rate: 0.5,
        l1: 1.0,
        ..config()
    };
    let na = train_controller_bc(&chart(8), [0.0; 3], [8.0; 3], &p, &a, None).unwrap();
    let nb = train_controller_bc(&chart(8), [0.0; 3], [8.0; 3], &p, &b, None).unwrap();
    assert_eq!(na.network, nb.network);
    assert_eq!(na.report.loss.len(), 1);
}

#[test]
fn seeds_decide_the_weights() {
    let p = DynamicsParams::default();
    let small = TrainingConfig { epochs: 2, initial_states: 100, ..config() };
    let a = train_controller_bc(&chart(8), [0.0; 3], [8.0; 3], &p, &small, None).unwrap();
    let b = train_controller_bc(&chart(8), [0.0; 3], [8.0; 3], &p, &small, None).unwrap();
    let c = train_controller_bc(&chart(8), [0.0; 3], [8.0; 3], &p, &TrainingConfig { seed: 1, ..small }, None).unwrap();
    assert_eq!(a.network.to_weights_string(), b.network.to_weights_string());
    assert_ne!(a.network, c.network);
}
