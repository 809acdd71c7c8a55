//! Remainder bounds for the Fisher, Wilks, bias, PAC and risk statements,
//! evaluated against a fixed truth and noise model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{assemble_info, penalty_response, score_moments, NoiseModel, ScoreMoments};
use crate::error::{EioError, Result};
use crate::estimator::{population_fit, SolveOptions};
use crate::info::{EvalPoint, InfoMatrix, ThetaBlock};
use crate::linalg::{max_eig, op_norm, symmetrize};
use crate::model::{smoothness_constants, FullParameter, LocalRegion, ScoreVector, TruthSpec};
use crate::penalty::PenaltyConfig;

/// `z(B, x) ≤ √tr B + √(2x‖B‖)`.
pub fn deviation_radius(b: &DMatrix<f64>, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(EioError::Invalid("x must be positive".into()));
    }
    let b = symmetrize(b, "B")?;
    Ok(radius_from(b.trace().max(0.0), max_eig(&b).max(0.0), x))
}

fn radius_from(trace: f64, norm: f64, x: f64) -> f64 {
    trace.sqrt() + (2.0 * x * norm).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionItem {
    Fisher,
    Wilks,
    Bias,
    Pac,
    L2,
    Squared,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionReport {
    pub item: ExpansionItem,
    #[serde(serialize_with = "crate::io::ser_vector")]
    pub leading_term: DVector<f64>,
    pub remainder_bound: f64,
    pub observed_remainder: Option<f64>,
    /// `observed ≤ bound` up to the solver floor; `None` without an observation.
    pub pass: Option<bool>,
    pub applicable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskInterval {
    pub risk_q: f64,
    pub alpha_q: f64,
    /// Interval ends; absent when `α_Q ≥ 1`.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// `α_Q < 1`.
    pub applicable: bool,
    pub observed: Option<f64>,
    pub pass: Option<bool>,
}

/// Per-replicate pieces of the stochastic expansion.
#[derive(Debug, Clone)]
pub struct LeadingTerms {
    /// `𝔽_G⁻¹∇ζ`.
    pub full: FullParameter,
    /// `‖𝒟 𝔽_G⁻¹ ∇ζ‖`.
    pub metric_norm: f64,
    /// `‖𝒟_ηη 𝔽_{G,ηη}⁻¹ ∇_ηζ‖`.
    pub nuisance_norm: f64,
    /// `Φ_G^{1/2}(𝔽_G⁻¹∇ζ)_θ`.
    pub xi_breve: DVector<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundSettings {
    pub x: f64,
    /// Fourth-moment constant of the squared-risk item.
    pub c4: f64,
    /// `𝔽` at `υ*_G` (default) or at `υ*`.
    pub at_truth: bool,
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self {
            x: 3.0,
            c4: 3.0,
            at_truth: false,
        }
    }
}

/// Everything the expansion statements need that does not depend on the sample.
#[derive(Debug, Clone)]
pub struct BoundContext {
    pub truth: TruthSpec,
    pub mu2: f64,
    pub pen: PenaltyConfig,
    pub region: LocalRegion,
    pub settings: BoundSettings,
    /// `υ*_G`.
    pub population: FullParameter,
    pub info: InfoMatrix,
    pub phi: ThetaBlock,
    pub q_map: DMatrix<f64>,
    /// `‖Q D⁻¹‖`.
    pub q_dinv: f64,
    pub tau3: f64,
    pub moments: ScoreMoments,
    pub r_d: f64,
    pub b_d: f64,
    /// `(𝔽_G⁻¹𝒢²υ*)_θ`.
    pub bias_theta: DVector<f64>,
    pub risk_q: f64,
    pub alpha_q: f64,
    pub applicable: bool,
    /// `min{R / (1.5 m), (4/9) / (κ²τ₃ m)}` with `m = r_𝒟 ∨ b_𝒟`.
    pub slack: f64,
}

/// Absolute tolerance for comparing an observed remainder with a bound that
/// may be exactly zero; it only has to absorb solver error.
fn solver_floor(scale: f64) -> f64 {
    1e-7 * (1.0 + scale)
}

impl BoundContext {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        truth: &TruthSpec,
        mu2: f64,
        pen: &PenaltyConfig,
        noise: &NoiseModel,
        region: &LocalRegion,
        q_map: Option<&DMatrix<f64>>,
        settings: &BoundSettings,
        opts: &SolveOptions,
    ) -> Result<Self> {
        let (p, _) = truth.dims();
        if !(settings.x > 0.0) || !(settings.c4 > 0.0) {
            return Err(EioError::Invalid("x and c4 must be positive".into()));
        }
        let q_map = q_map.cloned().unwrap_or_else(|| DMatrix::identity(p, p));
        if q_map.ncols() != p {
            return Err(EioError::Dimension(format!("Q must have {p} columns")));
        }
        let pop = population_fit(truth, mu2, pen, opts)?;
        if !pop.converged {
            return Err(EioError::Infeasible("population fit did not converge".into()));
        }
        let (point, at) = if settings.at_truth {
            (truth.as_param(), EvalPoint::Truth)
        } else {
            (pop.param.clone(), EvalPoint::PopulationFit)
        };
        let info = assemble_info(&point, mu2, pen, at)?;
        let phi = info.semiparametric_block()?;
        let response = penalty_response(&info, truth)?;
        let b_d = region.metric_norm(&response);
        let bias_theta = response.theta;
        let moments = score_moments(&info, region, noise)?;
        let r_d = radius_from(moments.trace_b, moments.norm_b, settings.x);
        let (tau3, _) = smoothness_constants(region.n_eff, region.mu);
        let kappa = region.kappa;
        let worst = r_d.max(b_d);
        let applicable = region.radius >= 1.5 * worst && kappa * kappa * tau3 * worst < 4.0 / 9.0;
        let slack = if worst > 0.0 {
            (region.radius / (1.5 * worst)).min((4.0 / 9.0) / (kappa * kappa * tau3 * worst))
        } else {
            f64::INFINITY
        };
        let q_dinv = op_norm(&(&q_map * &region.d_inv));
        let risk_q = (&q_map * &moments.var_theta * q_map.transpose()).trace() + (&q_map * &bias_theta).norm_squared();
        let scale = q_dinv * 0.75 * kappa * kappa * tau3;
        let alpha_q = if risk_q > 0.0 {
            scale * (settings.c4 * moments.trace_b + b_d * b_d) / risk_q.sqrt()
        } else {
            f64::INFINITY
        };
        Ok(Self {
            truth: truth.clone(),
            mu2,
            pen: pen.clone(),
            region: region.clone(),
            settings: settings.clone(),
            population: pop.param,
            info,
            phi,
            q_map,
            q_dinv,
            tau3,
            moments,
            r_d,
            b_d,
            bias_theta,
            risk_q,
            alpha_q,
            applicable,
            slack,
        })
    }

    /// `‖Q D⁻¹‖ · 3κ²τ₃/4`.
    fn fisher_scale(&self) -> f64 {
        self.q_dinv * 0.75 * self.region.kappa.powi(2) * self.tau3
    }

    pub fn leading(&self, score: &ScoreVector) -> Result<LeadingTerms> {
        let full = self.info.solve(&score.as_param())?;
        let metric_norm = self.region.metric_norm(&full);
        let mut nuisance = self.info.solve_nuisance(&score.as_param())?;
        nuisance.theta.fill(0.0);
        let nuisance_norm = self.region.metric_norm(&nuisance);
        let xi_breve = self.phi.sqrt_apply(&full.theta);
        Ok(LeadingTerms {
            full,
            metric_norm,
            nuisance_norm,
            xi_breve,
        })
    }

    fn report(&self, item: ExpansionItem, lead: DVector<f64>, bound: f64, observed: Option<f64>) -> ExpansionReport {
        let floor = solver_floor((&self.q_map * &self.truth.theta_star).norm());
        ExpansionReport {
            item,
            leading_term: lead,
            remainder_bound: bound,
            observed_remainder: observed,
            pass: observed.map(|o| o <= bound + floor),
            applicable: self.applicable,
        }
    }

    /// `‖Q{θ̃_G − θ*_G − (𝔽_G⁻¹∇ζ)_θ}‖ ≤ ‖QD⁻¹‖(3κ²τ₃/4)‖𝒟𝔽_G⁻¹∇ζ‖²`.
    pub fn fisher(&self, lead: &LeadingTerms, theta_tilde: &DVector<f64>) -> ExpansionReport {
        let resid = theta_tilde - &self.population.theta - &lead.full.theta;
        let observed = (&self.q_map * resid).norm();
        let bound = self.fisher_scale() * lead.metric_norm.powi(2);
        self.report(ExpansionItem::Fisher, lead.full.theta.clone(), bound, Some(observed))
    }

    /// `|2𝕃_G(θ̃_G) − 2𝕃_G(θ*_G) − ‖ξ̆_G‖²| ≤ (τ₃/2)(‖𝒟𝔽_G⁻¹∇ζ‖³ + ‖𝒟_ηη𝔽_{G,ηη}⁻¹∇_ηζ‖³)`,
    /// where `excess` is the profile excess `2𝕃_G(θ̃_G) − 2𝕃_G(θ*_G)`.
    pub fn wilks(&self, lead: &LeadingTerms, excess: f64) -> ExpansionReport {
        let observed = (excess - lead.xi_breve.norm_squared()).abs();
        let bound = 0.5 * self.tau3 * (lead.metric_norm.powi(3) + lead.nuisance_norm.powi(3));
        let mut r = self.report(ExpansionItem::Wilks, lead.xi_breve.clone(), bound, Some(observed));
        // Profile values carry absolute rounding proportional to the objective.
        r.pass = Some(observed <= bound + solver_floor(excess.abs()));
        r
    }

    /// `‖Q{θ*_G − θ* + (𝔽_G⁻¹𝒢²υ*)_θ}‖ ≤ ‖QD⁻¹‖(3κ²τ₃/4) b_𝒟²`.
    pub fn bias(&self) -> ExpansionReport {
        let resid = &self.population.theta - &self.truth.theta_star + &self.bias_theta;
        let observed = (&self.q_map * resid).norm();
        let bound = self.fisher_scale() * self.b_d * self.b_d;
        self.report(ExpansionItem::Bias, -&self.bias_theta, bound, Some(observed))
    }

    /// PAC loss: `‖Q{θ̃_G − θ* − (𝔽_G⁻¹∇ζ)_θ + (𝔽_G⁻¹𝒢²υ*)_θ}‖ ≤ ‖QD⁻¹‖(3κ²τ₃/4)(‖𝒟𝔽_G⁻¹∇ζ‖² + b_𝒟²)`.
    pub fn pac(&self, lead: &LeadingTerms, theta_tilde: &DVector<f64>) -> ExpansionReport {
        let centre = &lead.full.theta - &self.bias_theta;
        let resid = theta_tilde - &self.truth.theta_star - &centre;
        let observed = (&self.q_map * resid).norm();
        let bound = self.fisher_scale() * (lead.metric_norm.powi(2) + self.b_d * self.b_d);
        self.report(ExpansionItem::Pac, centre, bound, Some(observed))
    }

    /// `E‖Q(θ̃_G − θ*)‖ ≤ ℛ_Q^{1/2} + ‖QD⁻¹‖(3κ²τ₃/4)(p̄_𝒟 + b_𝒟²)`; the
    /// reported bound is the full right-hand side.
    pub fn l2(&self, mean_loss: Option<f64>) -> ExpansionReport {
        let bound = self.risk_q.sqrt() + self.fisher_scale() * (self.moments.trace_b + self.b_d * self.b_d);
        self.report(ExpansionItem::L2, -&self.bias_theta, bound, mean_loss)
    }

    /// `(1 ± α_Q)² ℛ_Q` around the squared risk.
    pub fn squared(&self, mean_sq_loss: Option<f64>) -> RiskInterval {
        let applicable = self.alpha_q < 1.0;
        let lower = applicable.then(|| (1.0 - self.alpha_q).powi(2) * self.risk_q);
        let upper = applicable.then(|| (1.0 + self.alpha_q).powi(2) * self.risk_q);
        RiskInterval {
            risk_q: self.risk_q,
            alpha_q: self.alpha_q,
            lower,
            upper,
            applicable,
            observed: mean_sq_loss,
            pass: match (mean_sq_loss, lower, upper) {
                (Some(o), Some(lo), Some(hi)) => Some(lo <= o && o <= hi),
                _ => None,
            },
        }
    }

    /// Dispatches one item. Sample-dependent items need `score` and `theta_tilde`
    /// (`excess` for Wilks); the risk items report their bound alone.
    pub fn expansion_bounds(
        &self,
        item: ExpansionItem,
        score: Option<&ScoreVector>,
        theta_tilde: Option<&DVector<f64>>,
        excess: Option<f64>,
    ) -> Result<ExpansionReport> {
        let need = |what: &str| EioError::Invalid(format!("{item:?} needs {what}"));
        match item {
            ExpansionItem::Bias => Ok(self.bias()),
            ExpansionItem::L2 => Ok(self.l2(None)),
            ExpansionItem::Squared => {
                let iv = self.squared(None);
                Ok(ExpansionReport {
                    item,
                    leading_term: -&self.bias_theta,
                    remainder_bound: self.alpha_q,
                    observed_remainder: None,
                    pass: None,
                    applicable: self.applicable && iv.applicable,
                })
            }
            ExpansionItem::Fisher | ExpansionItem::Pac | ExpansionItem::Wilks => {
                let lead = self.leading(score.ok_or_else(|| need("a score"))?)?;
                match item {
                    ExpansionItem::Wilks => Ok(self.wilks(&lead, excess.ok_or_else(|| need("a profile excess"))?)),
                    ExpansionItem::Fisher => Ok(self.fisher(&lead, theta_tilde.ok_or_else(|| need("an estimate"))?)),
                    _ => Ok(self.pac(&lead, theta_tilde.ok_or_else(|| need("an estimate"))?)),
                }
            }
        }
    }
}
