//! Structured closed forms against dense linear algebra on small instances,
//! and the probabilistic bounds against Monte Carlo.

use eio_core::datagen::perturb;
use eio_core::estimator::{population_fit, SolveOptions};
use eio_core::info::EvalPoint;
use eio_core::linalg::min_eig;
use eio_core::model::{score, LocalRegion, TruthSpec};
use eio_core::penalty::{OperatorPenalty, PenaltyConfig, SignalPenalty};
use eio_core::rng::{normal, substream, Component};
use eio_core::theory::{
    appspace_quantities, assemble_info, bias_closed_form, deviation_radius, fisher_leading_term,
    operator_noise_constant, penalty_response, ridge_risk_bound, score_moments, truncation_bias_bound,
    variance_bound, NoiseModel, SpectralProfile,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn instance(p: usize, q: usize) -> TruthSpec {
    let mut a = DMatrix::from_fn(q, p, |i, j| 0.2 * ((i * 7 + j * 3) as f64).sin());
    for j in 0..p {
        a[(j, j)] += 4.0 + j as f64;
    }
    let theta = DVector::from_fn(p, |j, _| 0.8 / (j as f64 + 1.0) * if j % 2 == 0 { 1.0 } else { -1.0 });
    TruthSpec::new(theta, a).unwrap()
}

fn penalty(p: usize, q: usize) -> PenaltyConfig {
    let pen = PenaltyConfig {
        signal: SignalPenalty::Ridge { g2: 0.3 },
        operator: OperatorPenalty::RowScalar {
            k2: (0..q).map(|m| 5.0 * (m as f64 + 1.0)).collect(),
        },
    };
    pen.validate(p, q).unwrap();
    pen
}

/// Flattened `(G²θ*, 0, K²A*)`.
fn penalty_gradient(truth: &TruthSpec, pen: &PenaltyConfig) -> DVector<f64> {
    let (p, q) = truth.dims();
    let mut v = DVector::zeros(p + q + p * q);
    let g2 = pen.g2(p);
    for j in 0..p {
        v[j] = g2[j] * truth.theta_star[j];
    }
    for m in 0..q {
        let k2 = pen.operator.row_weights(m, p);
        for j in 0..p {
            v[p + q + m * p + j] = k2[j] * truth.a_star[(m, j)];
        }
    }
    v
}

#[test]
fn bias_matches_dense_solve() {
    let (p, q, mu2) = (3, 5, 50.0);
    let truth = instance(p, q);
    let pen = penalty(p, q);
    let dense = assemble_info(&truth.as_param(), mu2, &pen, EvalPoint::Truth).unwrap().to_dense();
    let full = dense.clone().lu().solve(&penalty_gradient(&truth, &pen)).unwrap();
    let closed = bias_closed_form(&truth, mu2, &pen, None).unwrap();
    let expected = full.rows(0, p).into_owned();
    assert!((&closed.bias - &expected).amax() <= 1e-10 * (1.0 + expected.amax()), "{} vs {}", closed.bias, expected);

    let info = assemble_info(&truth.as_param(), mu2, &pen, EvalPoint::Truth).unwrap();
    let response = penalty_response(&info, &truth).unwrap().to_flat();
    assert!((&response - &full).amax() <= 1e-10 * (1.0 + full.amax()));
}

#[test]
fn bias_predicts_population_shift_for_small_penalties() {
    let (p, q, mu2) = (3, 5, 1e4);
    let truth = instance(p, q);
    let pen = PenaltyConfig {
        signal: SignalPenalty::Ridge { g2: 0.05 },
        operator: OperatorPenalty::RowScalar { k2: vec![20.0; q] },
    };
    let closed = bias_closed_form(&truth, mu2, &pen, None).unwrap();
    let pop = population_fit(&truth, mu2, &pen, &SolveOptions::default()).unwrap();
    let shift = &pop.param.theta - &truth.theta_star;
    // First order: θ*_G − θ* = −bias + O(‖bias‖²).
    let err = (&shift + &closed.bias).norm();
    assert!(err <= 0.05 * closed.bias.norm(), "err {err:e}, bias {:e}", closed.bias.norm());
}

#[test]
fn semiparametric_block_is_the_dense_schur_complement() {
    let (p, q, mu2) = (3, 4, 20.0);
    let truth = instance(p, q);
    let pen = penalty(p, q);
    let info = assemble_info(&truth.as_param(), mu2, &pen, EvalPoint::Truth).unwrap();
    let dense = info.to_dense();
    let n = dense.nrows();
    let f_tt = dense.view((0, 0), (p, p)).into_owned();
    let f_te = dense.view((0, p), (p, n - p)).into_owned();
    let f_ee = dense.view((p, p), (n - p, n - p)).into_owned();
    let phi = f_tt - &f_te * f_ee.try_inverse().unwrap() * f_te.transpose();
    let block = info.semiparametric_block().unwrap().dense();
    assert!((&block - &phi).amax() <= 1e-9 * phi.amax());
    // Φ⁻¹ is also the leading block of the full inverse.
    let inv = dense.try_inverse().unwrap();
    let lead = inv.view((0, 0), (p, p)).into_owned();
    assert!((phi.try_inverse().unwrap() - lead).amax() <= 1e-9);
}

#[test]
fn fisher_leading_term_matches_dense_solve() {
    let (p, q, mu2) = (3, 5, 30.0);
    let truth = instance(p, q);
    let pen = penalty(p, q);
    let obs = perturb(&truth, mu2, 1.0, 1.0, 11, Some(0)).unwrap();
    let sc = score(&obs, &truth).unwrap();
    let info = assemble_info(&truth.as_param(), mu2, &pen, EvalPoint::Truth).unwrap();
    let lead = fisher_leading_term(&info, &sc).unwrap();
    let dense = info.to_dense().lu().solve(&sc.as_param().to_flat()).unwrap();
    assert!((&lead - dense.rows(0, p)).amax() <= 1e-10 * (1.0 + lead.amax()));
}

#[test]
fn score_moments_match_dense_covariance() {
    let (p, q, mu2) = (2, 4, 40.0);
    let (s_omega, s_u) = (0.7, 1.3);
    let truth = instance(p, q);
    let pen = penalty(p, q);
    let info = assemble_info(&truth.as_param(), mu2, &pen, EvalPoint::Truth).unwrap();
    let region = LocalRegion::from_truth(&truth, mu2, 0.0).unwrap();
    let noise = NoiseModel::homogeneous(s_omega, s_u);
    let mom = score_moments(&info, &region, &noise).unwrap();

    // Var ∇ζ = diag(0, σ_ω² I_q, μ²σ_U² I_pq).
    let n = p + q + p * q;
    let mut sigma = DMatrix::zeros(n, n);
    for k in p..p + q {
        sigma[(k, k)] = s_omega * s_omega;
    }
    for k in p + q..n {
        sigma[(k, k)] = mu2 * s_u * s_u;
    }
    let f_inv = info.to_dense().try_inverse().unwrap();
    let cov = &f_inv * sigma * &f_inv;
    let var_theta = cov.view((0, 0), (p, p)).into_owned();
    assert!((&mom.var_theta - &var_theta).amax() <= 1e-10 * var_theta.amax());
    // tr(𝒟C𝒟) = tr(𝒟²C).
    let trace_b = (region.metric_dense(q) * &cov).trace();
    assert!((mom.trace_b - trace_b).abs() <= 1e-9 * trace_b);
}

#[test]
fn stochastic_term_variance_matches_monte_carlo_and_bound() {
    let (p, q, mu2) = (3, 4, 400.0);
    let truth = instance(p, q);
    let pen = PenaltyConfig::ridge(0.5);
    let info = assemble_info(&truth.as_param(), mu2, &pen, EvalPoint::Truth).unwrap();
    let region = LocalRegion::from_truth(&truth, mu2, 0.0).unwrap();
    let noise = NoiseModel::homogeneous(1.0, 1.0);
    let exact = score_moments(&info, &region, &noise).unwrap().var_theta;

    let draws = 4000;
    let leads: Vec<DVector<f64>> = (0..draws)
        .map(|r| {
            let obs = perturb(&truth, mu2, 1.0, 1.0, 5, Some(r)).unwrap();
            fisher_leading_term(&info, &score(&obs, &truth).unwrap()).unwrap()
        })
        .collect();
    let mean = leads.iter().fold(DVector::zeros(p), |s, v| s + v) / draws as f64;
    let emp = leads.iter().fold(DMatrix::zeros(p, p), |s, v| s + (v - &mean) * (v - &mean).transpose())
        / (draws as f64 - 1.0);
    let rel = (&emp - &exact).norm() / exact.norm();
    assert!(rel < 0.1, "relative covariance error {rel}");

    let c_nu = operator_noise_constant(&noise, mu2, &pen, p, q).unwrap();
    let g2 = DMatrix::from_diagonal(&pen.g2(p));
    let bound = variance_bound(1.0, c_nu, region.delta0, region.kappa, &region.d2, &g2, None).unwrap();
    assert!(min_eig(&(&bound.matrix - &exact)) >= 0.0);
}

#[test]
fn deviation_radius_controls_gaussian_tails() {
    let root = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 0.0, 0.0, 0.6, 0.2, 0.3, 0.0, 0.2]);
    let b = &root * root.transpose();
    let mut rng = substream(99, None, Component::Omega);
    let draws = 20_000;
    let norms: Vec<f64> = (0..draws)
        .map(|_| (&root * DVector::from_fn(3, |_, _| normal(&mut rng))).norm())
        .collect();
    for x in [1.0, 2.0, 3.0] {
        let r = deviation_radius(&b, x).unwrap();
        let freq = norms.iter().filter(|v| **v > r).count() as f64 / draws as f64;
        let nominal = (-x as f64).exp();
        assert!(freq <= nominal + 4.0 * (nominal / draws as f64).sqrt(), "x={x}: {freq} > {nominal}");
    }
}

#[test]
fn ridge_bound_dominates_exact_ridge_risk() {
    let p = 10;
    let profile = SpectralProfile::parametric(p, 15, 1e3, 1.0, 1.0, 1.0).unwrap();
    let theta = DVector::from_fn(p, |j, _| (j as f64 + 1.0).powf(-1.5));
    for g2 in [0.1, 1.0, 10.0, 100.0] {
        let bound = ridge_risk_bound(&profile, &theta, g2, 1.0).unwrap();
        // Known diagonal operator: θ̂_j = (N_jθ_j + √N_j ε_j)/(N_j + g²).
        let exact: f64 = (0..p)
            .map(|j| {
                let n = profile.n_seq[j];
                (n + g2 * g2 * theta[j] * theta[j]) / (n + g2).powi(2)
            })
            .sum();
        assert!(exact <= bound.total, "g2={g2}: {exact} > {}", bound.total);
    }
}

/// `A* = U diag(√N_j)` with orthonormal columns `U`, so `A*ᵀA*` is diagonal.
fn spectral_operator(p: usize, q: usize, v: &[f64]) -> DMatrix<f64> {
    let u = DMatrix::from_vec(q, p, v.to_vec()).qr().q();
    let scale = DVector::from_fn(p, |j, _| (1e3 * (j as f64 + 1.0).powi(-2)).sqrt());
    u * DMatrix::from_diagonal(&scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncation_bound_dominates_exact_bias(
        (p, q, j, m, v, th) in (2usize..5, 0usize..4).prop_flat_map(|(p, extra)| {
            let q = p + extra;
            (Just(p), Just(q), 1..=p, 1..=q, prop::collection::vec(-1.0f64..1.0, p * q), prop::collection::vec(-1.0f64..1.0, p))
        })
    ) {
        let a = spectral_operator(p, q, &v);
        let theta = DVector::from_vec(th);
        let profile = SpectralProfile::from_operator(&a, vec![1.0; p], 1.0, 1.0, 1.0).unwrap();
        let tb = truncation_bias_bound(&profile, &theta, j, m, 2.0).unwrap();
        prop_assume!(tb.applicable && m >= j);
        // Least squares on the first m rows and j columns of noiseless data.
        let block = a.view((0, 0), (m, j)).into_owned();
        let z = a.rows(0, m) * &theta;
        let fit = (block.transpose() * &block).cholesky().unwrap().solve(&(block.transpose() * z));
        let mut err = -theta.clone();
        for k in 0..j {
            err[k] += fit[k];
        }
        prop_assert!(err.norm() <= tb.bound * (1.0 + 1e-10) + 1e-12 * theta.norm(), "{} > {}", err.norm(), tb.bound);

        let space = appspace_quantities(&a, j, m).unwrap();
        if let Some(tr) = space.trace_bound {
            prop_assert!(space.trace_exact <= tr * (1.0 + 1e-10));
        }
    }
}

#[test]
fn truncated_population_fit_approaches_least_squares() {
    let (p, q, j, m) = (4, 6, 3, 5);
    let v: Vec<f64> = (0..p * q).map(|k| ((k * 37 % 11) as f64 - 5.0) / 5.0).collect();
    let a = spectral_operator(p, q, &v);
    let theta = DVector::from_fn(p, |k, _| 1.0 / (k as f64 + 1.0));
    let truth = TruthSpec::new(theta.clone(), a.clone()).unwrap();
    let pop = population_fit(&truth, 1e10, &PenaltyConfig::truncation(j, m), &SolveOptions::default()).unwrap();
    let block = a.view((0, 0), (m, j)).into_owned();
    let z = a.rows(0, m) * &theta;
    let ls = (block.transpose() * &block).cholesky().unwrap().solve(&(block.transpose() * z));
    assert!((pop.param.theta.rows(0, j) - &ls).norm() <= 1e-6 * (1.0 + ls.norm()));
    assert!(pop.param.theta.rows(j, p - j).iter().all(|v| *v == 0.0));
}
