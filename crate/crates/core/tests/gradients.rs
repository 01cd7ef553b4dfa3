mod common;

const TRIALS: u64 = 100;

#[test]
fn dqn_loss_gradient_matches_finite_differences() {
    let worst = common::dqn_gradient_suite(TRIALS).unwrap();
    assert!(worst < common::GRAD_TOL);
}

#[test]
fn actor_surrogate_gradient_matches_finite_differences() {
    let worst = common::actor_gradient_suite(TRIALS).unwrap();
    assert!(worst < common::GRAD_TOL);
}

#[test]
fn critic_loss_gradient_matches_finite_differences() {
    let worst = common::critic_gradient_suite(TRIALS).unwrap();
    assert!(worst < common::GRAD_TOL);
}
