mod common;

use common::{builtin, frozen_oracle, random_lambda};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdp_feedback::hermlin::{
    eigh, solve_v_subproblem, SdpCost, SubproblemOptions, VObjective, VSolver,
};
use sdp_feedback::Error;

#[test]
fn zero_multiplier_without_linear_cost_centers_substation_power() {
    let (_, p) = builtin();
    let cost = SdpCost::new(2.0, 0.0, 0.0).unwrap();
    let v = solve_v_subproblem(&[0.0; 10], &p.matrices, &cost, &p.voltage, 1e-7).unwrap();
    // flat voltages carry no current, so zero is attainable
    assert!(p.matrices.substation_power(&v).abs() < 1e-6);
}

#[test]
fn optimal_multiplier_recovers_the_oracle_voltage() {
    let (_, p) = builtin();
    let sol = frozen_oracle();
    let v = solve_v_subproblem(&sol.lambda, &p.matrices, &p.sdp, &p.voltage, 1e-7).unwrap();
    let gap = (&v - &sol.v_matrix().unwrap()).frobenius_norm();
    assert!(gap < 1e-4, "‖V − V*‖ = {gap:e}");
}

#[test]
fn random_multipliers_meet_residual_and_membership() {
    let (_, p) = builtin();
    let opts = SubproblemOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let lambda = random_lambda(&mut rng, 5);
        let sol = VSolver::new(opts)
            .solve(&lambda, &p.matrices, &p.sdp, &p.voltage)
            .unwrap();
        assert!(sol.pg_residual < 1e-7);
        let obj = VObjective::new(&lambda, &p.matrices, &p.sdp).unwrap();
        assert!(obj.pg_residual(&sol.v, &p.voltage, &opts).unwrap() < 1e-7);
        assert!((obj.value(&sol.v) - sol.objective).abs() < 1e-12 * sol.objective.abs().max(1.0));

        assert!(eigh(&sol.v).unwrap().min_eigenvalue() >= -1e-8);
        for i in 0..p.matrices.dim() {
            let d = sol.v.diag(i);
            assert!(d >= p.voltage.vmin_sq - 1e-8 && d <= p.voltage.vmax_sq + 1e-8);
        }
        assert!((sol.v.diag(0) - p.voltage.slack_sq).abs() < 1e-8);
        assert!(sol.polish_trace.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn warm_start_agrees_with_cold_start() {
    let (_, p) = builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let first = random_lambda(&mut rng, 5);
    let second: Vec<f64> = first.iter().map(|x| x + 0.05).collect();
    let mut warm = VSolver::default();
    warm.solve(&first, &p.matrices, &p.sdp, &p.voltage).unwrap();
    let a = warm
        .solve(&second, &p.matrices, &p.sdp, &p.voltage)
        .unwrap();
    let b = VSolver::default()
        .solve(&second, &p.matrices, &p.sdp, &p.voltage)
        .unwrap();
    assert!((&a.v - &b.v).frobenius_norm() < 1e-5);
    assert!((a.objective - b.objective).abs() < 1e-6);
}

#[test]
fn iteration_cap_reports_the_residual() {
    let (_, p) = builtin();
    let mut solver = VSolver::new(SubproblemOptions {
        max_iter: 3,
        ..SubproblemOptions::default()
    });
    match solver.solve(&[3.0; 10], &p.matrices, &p.sdp, &p.voltage) {
        Err(Error::Convergence {
            residual, history, ..
        }) => {
            assert!(residual > 1e-7);
            assert!(!history.is_empty());
        }
        other => panic!("expected a convergence error, got {other:?}"),
    }
}

#[test]
fn non_finite_multiplier_is_a_numerical_error() {
    let (_, p) = builtin();
    let mut lambda = vec![1.0; 10];
    lambda[3] = f64::NAN;
    let err = VSolver::default()
        .solve(&lambda, &p.matrices, &p.sdp, &p.voltage)
        .unwrap_err();
    assert!(matches!(err, Error::Numerical { .. }));
    let err = VSolver::default()
        .solve(&[1.0; 4], &p.matrices, &p.sdp, &p.voltage)
        .unwrap_err();
    assert!(matches!(err, Error::Shape(_)));
}
