mod common;

use common::{builtin, frozen_oracle, random_lambda};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdp_feedback::controller::balance_residual;
use sdp_feedback::hermlin::{dual_evaluate, dual_value, rank1_extract, SubproblemOptions, VSolver};

#[test]
fn concave_along_random_segments() {
    let (_, p) = builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut solver = VSolver::default();
    let mut q = |l: &[f64]| dual_evaluate(l, &p, &mut solver).unwrap().value;
    for _ in 0..10 {
        let a = random_lambda(&mut rng, 5);
        let b = random_lambda(&mut rng, 5);
        let (qa, qb) = (q(&a), q(&b));
        for theta in [0.25, 0.5, 0.75] {
            let mid: Vec<f64> = a
                .iter()
                .zip(&b)
                .map(|(x, y)| theta * x + (1.0 - theta) * y)
                .collect();
            assert!(q(&mid) >= theta * qa + (1.0 - theta) * qb - 1e-6);
        }
    }
}

#[test]
fn finite_differences_match_the_balance_residual() {
    let (_, p) = builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut solver = VSolver::new(SubproblemOptions {
        tol: 1e-9,
        ..SubproblemOptions::default()
    });
    let delta = 1e-5;
    for _ in 0..3 {
        let lambda = random_lambda(&mut rng, 5);
        let at = dual_evaluate(&lambda, &p, &mut solver).unwrap();
        for j in 0..lambda.len() {
            let mut up = lambda.clone();
            up[j] += delta;
            let mut down = lambda.clone();
            down[j] -= delta;
            let fd = (dual_evaluate(&up, &p, &mut solver).unwrap().value
                - dual_evaluate(&down, &p, &mut solver).unwrap().value)
                / (2.0 * delta);
            let g = at.gradient[j];
            assert!(
                (fd - g).abs() <= 1e-4 * g.abs().max(1.0),
                "coordinate {j}: fd {fd} vs {g}"
            );
        }
    }
}

#[test]
fn strong_duality_at_the_optimum() {
    let (_, p) = builtin();
    let sol = frozen_oracle();
    let v = sol.v_matrix().unwrap();
    let primal = p.primal_cost(&v, &sol.u);
    let q = dual_value(&sol.lambda, &p, 1e-7).unwrap();
    assert!((q - primal).abs() < 1e-4, "gap {}", q - primal);
    assert!((primal - sol.cost).abs() < 1e-12);
    let r = balance_residual(&v, &sol.u, &p).unwrap();
    assert!(r.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-5);
}

#[test]
fn optimum_is_rank_one() {
    let sol = frozen_oracle();
    let (v, ratio) = rank1_extract(&sol.v_matrix().unwrap()).unwrap();
    assert!(ratio < 1e-6);
    assert!(v[0].im == 0.0 && v[0].re > 0.0);
}

#[test]
fn value_moves_along_the_gradient() {
    let (_, p) = builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let lambda = random_lambda(&mut rng, 5);
    let mut solver = VSolver::default();
    let at = dual_evaluate(&lambda, &p, &mut solver).unwrap();
    let step: Vec<f64> = (0..10).map(|_| rng.random_range(-1e-3..1e-3)).collect();
    let moved: Vec<f64> = lambda.iter().zip(&step).map(|(l, s)| l + s).collect();
    let q = dual_evaluate(&moved, &p, &mut solver).unwrap().value;
    let linear: f64 = at.gradient.iter().zip(&step).map(|(g, s)| g * s).sum();
    // concavity: q(μ) ≤ q(λ) + ∇q(λ)ᵀ(μ − λ)
    assert!(q <= at.value + linear + 1e-6);
}
