//! Closed-form quantities behind the finite-sample expansions: the penalized
//! information, the efficient score, the penalization bias and the moments of
//! the stochastic term.

mod expansion;
mod spectral;

pub use expansion::{
    deviation_radius, ExpansionItem, ExpansionReport, LeadingTerms, RiskInterval, BoundContext,
    BoundSettings,
};
pub use spectral::{
    appspace_quantities, critical_dimension_check, cutoff_risk_bound, rate_prediction,
    ridge_risk_bound, select_rows, truncation_bias_bound, AppSpace, CriticalDimension,
    RatePrediction, RiskBreakdown, SpectralProfile, TruncationBias,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EioError, Result};
use crate::info::{hessian_blocks, EvalPoint, InfoMatrix, ThetaBlock};
use crate::linalg::{op_norm, select, spd_factor, spd_inverse, symmetrize};
use crate::model::{FullParameter, LocalRegion, ScoreVector, TruthSpec};
use crate::penalty::PenaltyConfig;

/// `𝔽_G` at a supplied point (`υ*_G` by default, `υ*` as an option).
pub fn assemble_info(point: &FullParameter, mu2: f64, pen: &PenaltyConfig, at: EvalPoint) -> Result<InfoMatrix> {
    Ok(hessian_blocks(point, mu2, pen)?.at(at))
}

pub fn semiparametric_block(info: &InfoMatrix) -> Result<ThetaBlock> {
    info.semiparametric_block()
}

/// `(𝔽_G⁻¹∇ζ)_θ`.
pub fn fisher_leading_term(info: &InfoMatrix, score: &ScoreVector) -> Result<DVector<f64>> {
    Ok(info.solve(&score.as_param())?.theta)
}

/// `Φ_G^{1/2} (𝔽_G⁻¹∇ζ)_θ`.
pub fn efficient_score(info: &InfoMatrix, score: &ScoreVector) -> Result<DVector<f64>> {
    let lead = fisher_leading_term(info, score)?;
    Ok(info.semiparametric_block()?.sqrt_apply(&lead))
}

#[derive(Debug, Clone, Serialize)]
pub struct BiasResult {
    /// `(𝔽_G⁻¹𝒢²υ*)_θ`.
    #[serde(serialize_with = "crate::io::ser_vector")]
    pub bias: DVector<f64>,
    #[serde(serialize_with = "crate::io::ser_matrix")]
    pub s_k: DMatrix<f64>,
    /// `‖Q bias‖` (`Q = I` when no map is given).
    pub weighted_norm: f64,
}

/// The operator-penalty correction
/// `S_K = ½ Σ_m A*_m A*_mᵀ K_m² (μ²I + K_m² + ½θ*θ*ᵀ)⁻¹`, with masked rows
/// contributing their limit `½ A*_m A*_mᵀ`.
pub fn operator_bias_matrix(truth: &TruthSpec, mu2: f64, pen: &PenaltyConfig) -> Result<DMatrix<f64>> {
    let (p, q) = truth.dims();
    pen.validate(p, q)?;
    let theta = &truth.theta_star;
    let half_tt = theta * theta.transpose() * 0.5;
    let active = pen.row_active(q);
    let mut s = DMatrix::zeros(p, p);
    for m in 0..q {
        let am = truth.a_star.row(m).transpose();
        let outer = &am * am.transpose();
        if !active[m] {
            s += outer * 0.5;
            continue;
        }
        let k2 = pen.operator.row_weights(m, p);
        if k2.iter().all(|v| *v == 0.0) {
            continue;
        }
        let kmin = k2.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(mu2 + kmin - theta.norm_squared() / 2.0 > 0.0) {
            return Err(EioError::Margin(format!(
                "row {}: mu2 + k2 - |theta*|^2/2 = {:.3e}",
                m + 1,
                mu2 + kmin - theta.norm_squared() / 2.0
            )));
        }
        let sys = DMatrix::identity(p, p) * mu2 + DMatrix::from_diagonal(&k2) + &half_tt;
        let inv = spd_inverse(&sys, &format!("bias row {}", m + 1))?;
        s += outer * DMatrix::from_diagonal(&k2) * inv * 0.5;
    }
    Ok(s)
}

/// `(𝔽_G⁻¹𝒢²υ*)_θ = Φ_G⁻¹(G² − S_K)θ*` with `𝔽` evaluated at `υ*`.
///
/// Truncated signal coordinates are pinned to `θ*`, which is the limit of an
/// infinite penalty; the remaining coordinates absorb the coupling through `Φ`.
pub fn bias_closed_form(
    truth: &TruthSpec,
    mu2: f64,
    pen: &PenaltyConfig,
    q_map: Option<&DMatrix<f64>>,
) -> Result<BiasResult> {
    let (p, _) = truth.dims();
    let s_k = operator_bias_matrix(truth, mu2, pen)?;
    let info = assemble_info(&truth.as_param(), mu2, pen, EvalPoint::Truth)?;
    let all: Vec<usize> = (0..p).collect();
    let phi = info.schur_theta_on(&all, false)?;
    let act = info.active_theta();
    let inact: Vec<usize> = (0..p).filter(|j| !act.contains(j)).collect();
    let theta = &truth.theta_star;
    let g2 = &info.g2;

    let rhs_full = DVector::from_fn(p, |j, _| g2[j] * theta[j]) - &s_k * theta;
    let mut rhs = DVector::from_iterator(act.len(), act.iter().map(|&j| rhs_full[j]));
    if !inact.is_empty() {
        let th_i = DVector::from_iterator(inact.len(), inact.iter().map(|&j| theta[j]));
        rhs -= select(&phi, &act, &inact) * th_i;
    }
    let mut sys = select(&phi, &act, &act);
    for (i, &j) in act.iter().enumerate() {
        sys[(i, i)] += g2[j];
    }
    let x = spd_factor(&sys, "semiparametric block")?.solve(&rhs);
    let mut bias = DVector::zeros(p);
    for (i, &j) in act.iter().enumerate() {
        bias[j] = x[i];
    }
    for &j in &inact {
        bias[j] = theta[j];
    }
    let weighted_norm = match q_map {
        Some(qm) => (qm * &bias).norm(),
        None => bias.norm(),
    };
    Ok(BiasResult {
        bias,
        s_k,
        weighted_norm,
    })
}

/// Full vector `𝔽_G⁻¹𝒢²υ*` over all coordinates, masked ones pinned to `υ*`.
pub fn penalty_response(info: &InfoMatrix, truth: &TruthSpec) -> Result<FullParameter> {
    let star = truth.as_param();
    let (p, q) = (info.p, info.q);
    let mut rhs = FullParameter::zeros(p, q);
    rhs.theta = info.g2.component_mul(&star.theta);
    for m in 0..q {
        let row = info.k2[m].component_mul(&star.a.row(m).transpose());
        rhs.a.set_row(m, &row.transpose());
    }
    info.solve_pinned(&rhs, &star)
}

/// `b_𝒟 = ‖𝒟 𝔽_G⁻¹ 𝒢² υ*‖`.
pub fn bias_metric_norm(info: &InfoMatrix, truth: &TruthSpec, region: &LocalRegion) -> Result<f64> {
    Ok(region.metric_norm(&penalty_response(info, truth)?))
}

/// Covariance model of `(ω, 𝕌)`; rows of `𝕌` are independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    /// `Var ω = σ_ω² I`, `Var 𝕌_m = C_U I`.
    Homogeneous { sigma_omega2: f64, c_u: f64 },
    Full {
        var_omega: Vec<Vec<f64>>,
        var_u_rows: Vec<Vec<Vec<f64>>>,
    },
}

impl NoiseModel {
    pub fn homogeneous(sigma_omega: f64, sigma_u: f64) -> Self {
        NoiseModel::Homogeneous {
            sigma_omega2: sigma_omega * sigma_omega,
            c_u: sigma_u * sigma_u,
        }
    }

    fn var_omega(&self, q: usize) -> Result<DMatrix<f64>> {
        match self {
            NoiseModel::Homogeneous { sigma_omega2, .. } => Ok(DMatrix::identity(q, q) * *sigma_omega2),
            NoiseModel::Full { var_omega, .. } => to_square(var_omega, q, "var_omega"),
        }
    }

    fn var_u_row(&self, m: usize, p: usize) -> Result<DMatrix<f64>> {
        match self {
            NoiseModel::Homogeneous { c_u, .. } => Ok(DMatrix::identity(p, p) * *c_u),
            NoiseModel::Full { var_u_rows, .. } => {
                let rows = var_u_rows
                    .get(m)
                    .ok_or_else(|| EioError::Dimension(format!("missing operator noise row {}", m + 1)))?;
                to_square(rows, p, "var_u_rows")
            }
        }
    }

    /// `(C_ω, C_U)` as operator norms of the covariances.
    pub fn norms(&self, p: usize, q: usize) -> Result<(f64, f64)> {
        let c_omega = op_norm(&self.var_omega(q)?);
        let mut c_u: f64 = 0.0;
        for m in 0..q {
            c_u = c_u.max(op_norm(&self.var_u_row(m, p)?));
        }
        Ok((c_omega, c_u))
    }
}

fn to_square(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(EioError::Dimension(format!("{what} must be {n}x{n}")));
    }
    symmetrize(&DMatrix::from_fn(n, n, |i, j| rows[i][j]), what)
}

fn psd_root(m: &DMatrix<f64>) -> DMatrix<f64> {
    crate::linalg::sym_sqrt(m)
}

/// Second moments of the stochastic term `𝔽_G⁻¹∇ζ`.
#[derive(Debug, Clone, Serialize)]
pub struct ScoreMoments {
    /// `p̄_𝒟 = tr B_𝒟` with `B_𝒟 = Var(𝒟 𝔽_G⁻¹ ∇ζ)`.
    pub trace_b: f64,
    /// `‖B_𝒟‖`.
    pub norm_b: f64,
    /// `Var (𝔽_G⁻¹∇ζ)_θ`.
    #[serde(serialize_with = "crate::io::ser_matrix")]
    pub var_theta: DMatrix<f64>,
}

/// Exact `Var(𝒟 𝔽_G⁻¹ ∇ζ)` summaries for a Gaussian-style noise model, built
/// from one structured solve per noise coordinate.
pub fn score_moments(info: &InfoMatrix, region: &LocalRegion, noise: &NoiseModel) -> Result<ScoreMoments> {
    let (p, q) = (info.p, info.q);
    let root_omega = psd_root(&noise.var_omega(q)?);
    let mu = region.mu;
    let mut cols_d: Vec<DVector<f64>> = Vec::new();
    let mut cols_t: Vec<DVector<f64>> = Vec::new();
    let mut push = |rhs: FullParameter| -> Result<()> {
        let x = info.solve(&rhs)?;
        cols_d.push(region.metric_apply(&x).to_flat());
        cols_t.push(x.theta);
        Ok(())
    };
    for k in 0..q {
        let mut rhs = FullParameter::zeros(p, q);
        rhs.z = root_omega.column(k).into_owned();
        push(rhs)?;
    }
    for m in 0..q {
        if !info.row_active[m] {
            continue;
        }
        // ∇_Aζ = μ𝕌, so its covariance is μ² Var 𝕌.
        let root_u = psd_root(&noise.var_u_row(m, p)?) * mu;
        for k in 0..p {
            let mut rhs = FullParameter::zeros(p, q);
            rhs.a.set_row(m, &root_u.column(k).transpose());
            push(rhs)?;
        }
    }
    let md = DMatrix::from_columns(&cols_d);
    let mt = DMatrix::from_columns(&cols_t);
    let trace_b = md.norm_squared();
    let gram = md.transpose() * &md;
    let norm_b = crate::linalg::max_eig(&gram).max(0.0);
    Ok(ScoreMoments {
        trace_b,
        norm_b,
        var_theta: &mt * mt.transpose(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EffectiveDimension {
    pub p_z: f64,
    pub p_a: f64,
    pub total: f64,
}

/// `p_z ≤ κ⁴ tr Var ω`, `p_A ≤ κ⁴ Σ_m tr{(I + κ²μ⁻²K_m²)^{-1/2} Var 𝕌_m (I + κ²μ⁻²K_m²)^{-1/2}}`;
/// truncated rows contribute nothing.
pub fn effective_dimension(
    noise: &NoiseModel,
    mu2: f64,
    pen: &PenaltyConfig,
    p: usize,
    q: usize,
    kappa: f64,
) -> Result<EffectiveDimension> {
    pen.validate(p, q)?;
    let k4 = kappa.powi(4);
    let p_z = k4 * noise.var_omega(q)?.trace();
    let active = pen.row_active(q);
    let mut p_a = 0.0;
    for m in (0..q).filter(|&m| active[m]) {
        let k2 = pen.operator.row_weights(m, p);
        let shrink = k2.map(|k| 1.0 / (1.0 + kappa * kappa * k / mu2));
        let var = noise.var_u_row(m, p)?;
        p_a += (0..p).map(|j| shrink[j] * var[(j, j)]).sum::<f64>();
    }
    p_a *= k4;
    Ok(EffectiveDimension {
        p_z,
        p_a,
        total: p_z + p_a,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceBound {
    #[serde(serialize_with = "crate::io::ser_matrix")]
    pub matrix: DMatrix<f64>,
    /// `2κ²(C_ω + 4C_νδ₀²) tr{Q (κ⁻²D² + G²)⁻¹ Qᵀ}`.
    pub trace_q: f64,
}

/// `Var (𝔽_G⁻¹∇ζ)_θ ⪯ 2κ²(C_ω + 4C_νδ₀²)(κ⁻²D² + G²)⁻¹`.
pub fn variance_bound(
    c_omega: f64,
    c_nu: f64,
    delta0: f64,
    kappa: f64,
    d2: &DMatrix<f64>,
    g2: &DMatrix<f64>,
    q_map: Option<&DMatrix<f64>>,
) -> Result<VarianceBound> {
    if c_omega < 0.0 || c_nu < 0.0 {
        return Err(EioError::Invalid("variance constants must be nonnegative".into()));
    }
    let base = d2 / (kappa * kappa) + g2;
    let inv = spd_inverse(&symmetrize(&base, "k^-2 D^2 + G^2")?, "k^-2 D^2 + G^2")?;
    let factor = 2.0 * kappa * kappa * (c_omega + 4.0 * c_nu * delta0 * delta0);
    let matrix = &inv * factor;
    let trace_q = match q_map {
        Some(qm) => (qm * &matrix * qm.transpose()).trace(),
        None => matrix.trace(),
    };
    Ok(VarianceBound { matrix, trace_q })
}

/// `C_ν = max_m ‖Var{(I + μ⁻²K_m²)⁻¹ 𝕌_m}‖`.
pub fn operator_noise_constant(noise: &NoiseModel, mu2: f64, pen: &PenaltyConfig, p: usize, q: usize) -> Result<f64> {
    let active = pen.row_active(q);
    let mut c: f64 = 0.0;
    for m in (0..q).filter(|&m| active[m]) {
        let shrink = DMatrix::from_diagonal(&pen.operator.row_weights(m, p).map(|k| 1.0 / (1.0 + k / mu2)));
        c = c.max(op_norm(&(&shrink * noise.var_u_row(m, p)? * &shrink)));
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_s_k() {
        let truth = TruthSpec::new(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let pen = PenaltyConfig {
            signal: crate::penalty::SignalPenalty::None,
            operator: crate::penalty::OperatorPenalty::RowScalar { k2: vec![1.0] },
        };
        let r = bias_closed_form(&truth, 1.0, &pen, None).unwrap();
        assert!((r.s_k[(0, 0)] - 0.25).abs() < 1e-15);
        assert_eq!(r.bias[0], 0.0);
    }

    #[test]
    fn effective_dimension_examples() {
        let noise = NoiseModel::homogeneous(1.0, 1.0);
        let e = effective_dimension(&noise, 1.0, &PenaltyConfig::none(), 3, 10, 2.0).unwrap();
        assert_eq!(e.p_z, 160.0);
        let pen = PenaltyConfig {
            signal: crate::penalty::SignalPenalty::None,
            operator: crate::penalty::OperatorPenalty::RowTruncation { m: 3 },
        };
        let e = effective_dimension(&noise, 1.0, &pen, 5, 7, 2.0).unwrap();
        assert_eq!(e.p_a, 240.0);
    }

    #[test]
    fn scalar_variance_bound() {
        let one = |v| DMatrix::from_element(1, 1, v);
        let b = variance_bound(1.0, 0.0, 0.1, 2.0, &one(4.0), &one(0.0), None).unwrap();
        assert!((b.matrix[(0, 0)] - 8.0).abs() < 1e-14);
    }
}
