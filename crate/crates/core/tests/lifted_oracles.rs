mod common;

use common::*;
use covad::estimators::{run_coordinate_descent, EstimatorKind, SolverOptions};
use covad::lifted::{generic_rank_bound, l21_group_lasso_oracle, nnls_oracle, vectorize, LiftedMatrix, RANK_REL_THRESHOLD};
use proptest::prelude::*;

fn tight(kind: EstimatorKind) -> SolverOptions {
    SolverOptions {
        tol: Some(1e-12),
        max_sweeps: 200_000,
        ..SolverOptions::new(kind)
    }
}

#[test]
fn nnls_coordinate_descent_agrees_with_projected_gradient() {
    // K below the generic rank bound keeps the problem strictly convex
    let cfg = config(6, 24, 4, 60);
    for seed in 0..5 {
        let (sc, cov) = instance(&cfg, seed);
        let lifted = LiftedMatrix::build(&sc.pilots);
        let oracle = nnls_oracle(&vectorize(cov.matrix()), &lifted, cfg.noise_var, 200_000).unwrap();
        assert!(oracle.converged, "oracle stalled at gradient mapping {:e}", oracle.gradient_mapping_norm);
        let cd = run_coordinate_descent(&cov, &sc.pilots, cfg.noise_var, &tight(EstimatorKind::Nnls)).unwrap();
        let err = linf(&cd.gamma, &oracle.gamma);
        assert!(err < 1e-6, "seed {seed}: |cd - oracle| = {err:e}");
        assert!((cd.diagnostics.final_cost - oracle.cost).abs() <= 1e-9 * oracle.cost.max(1.0));
    }
}

#[test]
fn mmv_matches_group_lasso_on_small_instances() {
    let cfg = config(6, 15, 3, 16);
    for seed in 0..4 {
        let (sc, cov) = instance(&cfg, 40 + seed);
        let lasso = l21_group_lasso_oracle(&sc.observation, &sc.pilots, cfg.noise_var, 500_000).unwrap();
        assert!(lasso.converged);
        let mmv = run_coordinate_descent(&cov, &sc.pilots, cfg.noise_var, &tight(EstimatorKind::Mmv)).unwrap();
        let err = linf(&mmv.gamma, &lasso.row_norms_scaled);
        assert!(err < 1e-4, "seed {seed}: |mmv - lasso| = {err:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lifted_rank_follows_generic_law(d in 2usize..6, extra in 0usize..30, seed in any::<u64>()) {
        let k = 1 + extra;
        let lifted = LiftedMatrix::build(&pilots(d, k, seed));
        prop_assert_eq!(lifted.complex_rank(RANK_REL_THRESHOLD), k.min(generic_rank_bound(d)));
    }

    #[test]
    fn real_gram_is_psd_with_pilot_len_squared_diagonal(d in 1usize..7, k in 1usize..20, seed in any::<u64>()) {
        let g = LiftedMatrix::build(&pilots(d, k, seed)).real_gram();
        for i in 0..k {
            prop_assert!((g[(i, i)] - (d * d) as f64).abs() < 1e-9);
        }
        let min = g.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(min > -1e-9 * (d * d * k) as f64);
    }
}
