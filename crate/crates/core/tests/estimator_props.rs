use eio_core::estimator::{maximize, profile_value, SolveOptions};
use eio_core::model::{gradient, objective, Observation};
use eio_core::penalty::PenaltyConfig;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Problem {
    obs: Observation,
    pen: PenaltyConfig,
    /// Orthogonal `q × q` and `p × p` matrices for the invariance checks.
    rows: DMatrix<f64>,
    cols: DMatrix<f64>,
}

fn orthogonal(v: Vec<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_vec(n, n, v).qr().q()
}

/// Data near a well-conditioned operator so the plug-in start sits in the
/// basin of the global maximizer.
fn problem() -> impl Strategy<Value = Problem> {
    (1usize..4, 0usize..4, 10.0f64..1e3, 0.05f64..2.0).prop_flat_map(|(p, extra, mu2, g2)| {
        let q = p + extra;
        (
            prop::collection::vec(-1.0f64..1.0, p * q),
            prop::collection::vec(-1.0f64..1.0, p),
            prop::collection::vec(-0.3f64..0.3, q + p * q),
            prop::collection::vec(-1.0f64..1.0, q * q),
            prop::collection::vec(-1.0f64..1.0, p * p),
        )
            .prop_map(move |(a, theta, noise, r, c)| {
                let mut a_star = DMatrix::from_row_slice(q, p, &a) * 0.3;
                for j in 0..p {
                    a_star[(j, j)] += 3.0;
                }
                let theta = DVector::from_vec(theta);
                let z = &a_star * &theta + DVector::from_column_slice(&noise[..q]);
                let a_hat = a_star + DMatrix::from_row_slice(q, p, &noise[q..]) / mu2.sqrt();
                Problem {
                    obs: Observation::new(z, a_hat, mu2).unwrap(),
                    pen: PenaltyConfig::ridge(g2),
                    rows: orthogonal(r, q),
                    cols: orthogonal(c, p),
                }
            })
    })
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / (1.0 + b.norm())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fit_is_a_stationary_local_maximum(pr in problem(), dir in prop::collection::vec(-1.0f64..1.0, 64)) {
        let fit = maximize(&pr.obs, &pr.pen, &SolveOptions::default()).unwrap();
        prop_assert!(fit.converged);
        let g = gradient(&pr.obs, &fit.param, &pr.pen).unwrap();
        prop_assert!(g.norm() <= fit.grad_tol);
        let (p, q) = pr.obs.dims();
        let n = p + q + p * q;
        let u = eio_core::model::FullParameter::from_flat(p, q, &DVector::from_column_slice(&dir[..n])).unwrap();
        for t in [1e-3, -1e-3, 1e-2] {
            let moved = objective(&pr.obs, &fit.param.step(t, &u), &pr.pen).unwrap();
            prop_assert!(moved <= fit.objective + 1e-9 * (1.0 + fit.objective.abs()));
        }
    }

    #[test]
    fn profile_agrees_with_joint_maximum(pr in problem()) {
        let fit = maximize(&pr.obs, &pr.pen, &SolveOptions::default()).unwrap();
        let (prof, at) = profile_value(&pr.obs, &fit.param.theta, &pr.pen).unwrap();
        prop_assert!((prof - fit.objective).abs() <= 1e-9 * (1.0 + fit.objective.abs()));
        prop_assert!((&at.a - &fit.param.a).amax() <= 1e-6 * (1.0 + fit.param.a.amax()));
    }

    #[test]
    fn invariant_under_rotation_of_observation_rows(pr in problem()) {
        let base = maximize(&pr.obs, &pr.pen, &SolveOptions::default()).unwrap();
        let turned = Observation::new(&pr.rows * &pr.obs.z_obs, &pr.rows * &pr.obs.a_hat, pr.obs.mu2).unwrap();
        let fit = maximize(&turned, &pr.pen, &SolveOptions::default()).unwrap();
        prop_assert!(rel(&fit.param.theta, &base.param.theta) <= 1e-6);
        prop_assert!((fit.objective - base.objective).abs() <= 1e-8 * (1.0 + base.objective.abs()));
    }

    #[test]
    fn ridge_fit_is_equivariant_under_rotation_of_the_signal(pr in problem()) {
        let base = maximize(&pr.obs, &pr.pen, &SolveOptions::default()).unwrap();
        let turned = Observation::new(pr.obs.z_obs.clone(), &pr.obs.a_hat * &pr.cols, pr.obs.mu2).unwrap();
        let fit = maximize(&turned, &pr.pen, &SolveOptions::default()).unwrap();
        let expected = pr.cols.transpose() * &base.param.theta;
        prop_assert!(rel(&fit.param.theta, &expected) <= 1e-6);
    }

    #[test]
    fn repeated_fits_are_bit_identical(pr in problem()) {
        let a = maximize(&pr.obs, &pr.pen, &SolveOptions::default()).unwrap();
        let b = maximize(&pr.obs, &pr.pen, &SolveOptions::default()).unwrap();
        prop_assert_eq!(a.param.to_flat(), b.param.to_flat());
        prop_assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }
}
