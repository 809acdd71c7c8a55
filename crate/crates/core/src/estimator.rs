//! Penalized maximum likelihood over `(θ, z, A)` by exact block ascent with
//! damped Newton refinement, plus the reference estimators.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EioError, Result};
use crate::info::hessian_blocks;
use crate::linalg::{select, select_vec, spd_factor};
use crate::model::{
    gradient, objective, region_membership, FullParameter, LocalRegion, Observation,
    RegionDiagnostic, TruthSpec,
};
use crate::penalty::PenaltyConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    Zeros,
    #[default]
    Plugin,
    #[serde(skip)]
    User(FullParameter),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Absolute objective tolerance; `None` means `1e-12 (1 + |L|)`.
    pub obj_tol: Option<f64>,
    /// Absolute gradient tolerance; `None` means `1e-8 (1 + ‖data‖)`.
    pub grad_tol: Option<f64>,
    pub newton_refine: bool,
    pub init: Init,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            obj_tol: None,
            grad_tol: None,
            newton_refine: true,
            init: Init::Plugin,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |t: Option<f64>| t.is_some_and(|v| !(v > 0.0));
        if bad(self.obj_tol) || bad(self.grad_tol) || self.max_iters == 0 {
            return Err(EioError::Invalid("tolerances and max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub param: FullParameter,
    pub objective: f64,
    pub grad_norm: f64,
    pub grad_tol: f64,
    pub iters: usize,
    pub region_diagnostic: Option<RegionDiagnostic>,
    pub converged: bool,
}

/// Scale used by the default gradient tolerance: `‖Z‖ + max(1, μ²)‖Â‖_F`.
pub fn data_scale(obs: &Observation) -> f64 {
    obs.z_obs.norm() + obs.mu2.max(1.0) * obs.a_hat.norm()
}

pub fn block_update_z(obs: &Observation, x: &FullParameter) -> DVector<f64> {
    (&obs.z_obs + &x.a * &x.theta) * 0.5
}

/// `A_m ← (μ²I + θθᵀ + K_m²)⁻¹(μ²Â_m + z_m θ)` on active rows, zero elsewhere.
pub fn block_update_a(obs: &Observation, x: &FullParameter, pen: &PenaltyConfig) -> Result<DMatrix<f64>> {
    let (p, q) = x.dims();
    let active = pen.row_active(q);
    let tt = &x.theta * x.theta.transpose();
    let mut a = DMatrix::zeros(q, p);
    let base = &tt + DMatrix::identity(p, p) * obs.mu2;
    for m in 0..q {
        if !active[m] {
            continue;
        }
        let sys = &base + DMatrix::from_diagonal(&pen.operator.row_weights(m, p));
        let rhs = obs.a_hat.row(m).transpose() * obs.mu2 + &x.theta * x.z[m];
        let row = spd_factor(&sys, &format!("operator row {}", m + 1))?.solve(&rhs);
        a.set_row(m, &row.transpose());
    }
    Ok(a)
}

/// `θ ← (AᵀA + G²)⁻¹Aᵀz` on active coordinates, zero elsewhere.
pub fn block_update_theta(x: &FullParameter, pen: &PenaltyConfig) -> Result<DVector<f64>> {
    let p = x.theta.len();
    let idx: Vec<usize> = (0..p).filter(|&j| pen.theta_active(p)[j]).collect();
    let normal = x.a.transpose() * &x.a + DMatrix::from_diagonal(&pen.g2(p));
    let rhs = x.a.transpose() * &x.z;
    let sol = spd_factor(&select(&normal, &idx, &idx), "normal matrix A'A + G^2 (consider a ridge penalty)")?
        .solve(&select_vec(&rhs, &idx));
    let mut theta = DVector::zeros(p);
    for (i, &j) in idx.iter().enumerate() {
        theta[j] = sol[i];
    }
    Ok(theta)
}

/// `(ÂᵀÂ)⁻¹ÂᵀZ`.
pub fn plugin_lse(z_obs: &DVector<f64>, a_hat: &DMatrix<f64>) -> Result<DVector<f64>> {
    if a_hat.nrows() != z_obs.len() {
        return Err(EioError::Dimension("Z and A_hat row counts differ".into()));
    }
    Ok(spd_factor(&(a_hat.transpose() * a_hat), "A_hat'A_hat")?.solve(&(a_hat.transpose() * z_obs)))
}

/// `(A*ᵀA* + G²)⁻¹A*ᵀZ` on active coordinates.
pub fn benchmark_ridge(z_obs: &DVector<f64>, a_star: &DMatrix<f64>, pen: &PenaltyConfig) -> Result<DVector<f64>> {
    if a_star.nrows() != z_obs.len() {
        return Err(EioError::Dimension("Z and A* row counts differ".into()));
    }
    let p = a_star.ncols();
    let x = FullParameter {
        theta: DVector::zeros(p),
        z: z_obs.clone(),
        a: a_star.clone(),
    };
    let signal_only = PenaltyConfig {
        signal: pen.signal.clone(),
        operator: crate::penalty::OperatorPenalty::None,
    };
    block_update_theta(&x, &signal_only)
}

fn initial_point(obs: &Observation, pen: &PenaltyConfig, init: &Init) -> Result<FullParameter> {
    let (p, q) = obs.dims();
    let mut x = match init {
        Init::User(x0) => {
            if x0.dims() != (p, q) {
                return Err(EioError::Dimension("initial point has wrong dimensions".into()));
            }
            return Ok(x0.clone());
        }
        Init::Zeros => FullParameter::zeros(p, q),
        Init::Plugin => {
            let mut x = FullParameter {
                theta: DVector::zeros(p),
                z: obs.z_obs.clone(),
                a: obs.a_hat.clone(),
            };
            if let Ok(t) = block_update_theta(&x, pen) {
                x.theta = t;
            }
            x
        }
    };
    for (m, on) in pen.row_active(q).iter().enumerate() {
        if !on {
            x.a.row_mut(m).fill(0.0);
        }
    }
    x.z = block_update_z(obs, &x);
    Ok(x)
}

/// One damped Newton step; returns the improved point when the objective rises.
fn newton_step(obs: &Observation, x: &FullParameter, f0: f64, pen: &PenaltyConfig) -> Option<(FullParameter, f64)> {
    let info = hessian_blocks(x, obs.mu2, pen).ok()?;
    let g = gradient(obs, x, pen).ok()?;
    let dir = info.solve(&g).ok()?;
    let mut t = 1.0;
    for _ in 0..30 {
        let cand = x.step(t, &dir);
        if let Ok(f) = objective(obs, &cand, pen) {
            if f >= f0 {
                return Some((cand, f));
            }
        }
        t *= 0.5;
    }
    None
}

fn sweep(obs: &Observation, x: &FullParameter, pen: &PenaltyConfig) -> Result<FullParameter> {
    let mut y = x.clone();
    y.z = block_update_z(obs, &y);
    y.a = block_update_a(obs, &y, pen)?;
    y.theta = block_update_theta(&y, pen)?;
    Ok(y)
}

pub fn maximize(obs: &Observation, pen: &PenaltyConfig, opts: &SolveOptions) -> Result<FitResult> {
    let (p, q) = obs.dims();
    pen.validate(p, q)?;
    opts.validate()?;
    let grad_tol = opts.grad_tol.unwrap_or(1e-8 * (1.0 + data_scale(obs)));
    let mut x = initial_point(obs, pen, &opts.init)?;
    let mut f = objective(obs, &x, pen)?;
    let mut gnorm = gradient(obs, &x, pen)?.norm();
    let mut iters = 0;
    // A start that already meets the scaled tolerance still needs one sweep
    // to confirm the objective has stalled.
    let mut converged = gnorm == 0.0;
    while !converged && iters < opts.max_iters {
        iters += 1;
        let y = sweep(obs, &x, pen)?;
        let fy = objective(obs, &y, pen)?;
        let obj_tol = opts.obj_tol.unwrap_or(1e-12 * (1.0 + fy.abs()));
        let mut gain = fy - f;
        if fy >= f {
            x = y;
            f = fy;
        }
        if opts.newton_refine {
            if let Some((z, fz)) = newton_step(obs, &x, f, pen) {
                gain += fz - f;
                x = z;
                f = fz;
            }
        }
        gnorm = gradient(obs, &x, pen)?.norm();
        let stalled = gain.abs() < obj_tol.max(f64::EPSILON * (1.0 + f.abs()));
        converged = gnorm <= grad_tol && (stalled || gnorm <= grad_tol * 1e-3);
        if !x.is_finite() {
            return Err(EioError::Singular {
                block: "iterate diverged".into(),
            });
        }
    }
    if !converged {
        log::warn!("maximize: {iters} iterations without convergence (grad {gnorm:.3e} > {grad_tol:.3e})");
    }
    Ok(FitResult {
        param: x,
        objective: f,
        grad_norm: gnorm,
        grad_tol,
        iters,
        region_diagnostic: None,
        converged,
    })
}

/// Runs [`maximize`] and attaches region diagnostics, warning when outside `Υ°`.
pub fn maximize_in_region(
    obs: &Observation,
    pen: &PenaltyConfig,
    opts: &SolveOptions,
    region: &LocalRegion,
    truth: &TruthSpec,
) -> Result<FitResult> {
    let mut fit = maximize(obs, pen, opts)?;
    let diag = region_membership(&fit.param, region, truth)?;
    if !diag.inside {
        log::warn!(
            "estimate outside the local region: |D theta| = {:.3e}, |z| = {:.3e}, |(A - A*)D^-1| = {:.3e}",
            diag.theta_stat,
            diag.z_stat,
            diag.a_stat
        );
    }
    fit.region_diagnostic = Some(diag);
    Ok(fit)
}

/// `υ*_G`: the maximizer on the noiseless observation.
pub fn population_fit(truth: &TruthSpec, mu2: f64, pen: &PenaltyConfig, opts: &SolveOptions) -> Result<FitResult> {
    let obs = truth.noiseless(mu2)?;
    let mut o = opts.clone();
    if pen.signal.is_zero() && matches!(pen.operator, crate::penalty::OperatorPenalty::None) {
        o.init = Init::User(truth.as_param());
    }
    maximize(&obs, pen, &o)
}

/// Profile `max_{z, A} L_G(θ, z, A)` at fixed `θ`.
///
/// Substituting the optimal `z = (Z + Aθ)/2` leaves a row-separable quadratic in
/// `A` whose maximizer is `(μ²I + ½θθᵀ + K_m²)⁻¹(μ²Â_m + ½Z_m θ)`.
pub fn profile_value(obs: &Observation, theta: &DVector<f64>, pen: &PenaltyConfig) -> Result<(f64, FullParameter)> {
    let (p, q) = obs.dims();
    if theta.len() != p {
        return Err(EioError::Dimension("theta length does not match observation".into()));
    }
    let active = pen.row_active(q);
    let half = theta * theta.transpose() * 0.5 + DMatrix::identity(p, p) * obs.mu2;
    let mut a = DMatrix::zeros(q, p);
    for m in 0..q {
        if !active[m] {
            continue;
        }
        let sys = &half + DMatrix::from_diagonal(&pen.operator.row_weights(m, p));
        let rhs = obs.a_hat.row(m).transpose() * obs.mu2 + theta * (0.5 * obs.z_obs[m]);
        let row = spd_factor(&sys, &format!("profile row {}", m + 1))?.solve(&rhs);
        a.set_row(m, &row.transpose());
    }
    let mut x = FullParameter {
        theta: theta.clone(),
        z: DVector::zeros(q),
        a,
    };
    x.z = block_update_z(obs, &x);
    Ok((objective(obs, &x, pen)?, x))
}
