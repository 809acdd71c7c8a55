//! The extended model over `(θ, z, A)`: objective, derivatives, score and the
//! local region around the truth.
//!
//! Flattened coordinates are ordered `θ (p)`, `z (q)`, then the rows of `A`
//! one after another, so row `m` occupies `p + q + m·p .. p + q + (m+1)·p`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{EioError, Result};
use crate::linalg::{min_eig, spd_inverse, sym_sqrt, symmetrize};
use crate::penalty::PenaltyConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct FullParameter {
    pub theta: DVector<f64>,
    pub z: DVector<f64>,
    pub a: DMatrix<f64>,
}

impl FullParameter {
    pub fn new(theta: DVector<f64>, z: DVector<f64>, a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != z.len() || a.ncols() != theta.len() {
            return Err(EioError::Dimension(format!(
                "operator is {}x{} but (p, q) = ({}, {})",
                a.nrows(),
                a.ncols(),
                theta.len(),
                z.len()
            )));
        }
        Ok(Self { theta, z, a })
    }

    pub fn zeros(p: usize, q: usize) -> Self {
        Self {
            theta: DVector::zeros(p),
            z: DVector::zeros(q),
            a: DMatrix::zeros(q, p),
        }
    }

    /// `(p, q)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.theta.len(), self.z.len())
    }

    pub fn full_dim(&self) -> usize {
        let (p, q) = self.dims();
        p + q + p * q
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let (p, q) = self.dims();
        let mut v = DVector::zeros(p + q + p * q);
        v.rows_mut(0, p).copy_from(&self.theta);
        v.rows_mut(p, q).copy_from(&self.z);
        for m in 0..q {
            for j in 0..p {
                v[p + q + m * p + j] = self.a[(m, j)];
            }
        }
        v
    }

    pub fn from_flat(p: usize, q: usize, v: &DVector<f64>) -> Result<Self> {
        if v.len() != p + q + p * q {
            return Err(EioError::Dimension(format!(
                "flat vector has length {}, expected {}",
                v.len(),
                p + q + p * q
            )));
        }
        Ok(Self {
            theta: v.rows(0, p).into_owned(),
            z: v.rows(p, q).into_owned(),
            a: DMatrix::from_fn(q, p, |m, j| v[p + q + m * p + j]),
        })
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.theta.dot(&other.theta) + self.z.dot(&other.z) + self.a.dot(&other.a)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self + t·dir`.
    pub fn step(&self, t: f64, dir: &Self) -> Self {
        Self {
            theta: &self.theta + &dir.theta * t,
            z: &self.z + &dir.z * t,
            a: &self.a + &dir.a * t,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(self.z.iter()).chain(self.a.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub z_obs: DVector<f64>,
    pub a_hat: DMatrix<f64>,
    pub mu2: f64,
}

impl Observation {
    pub fn new(z_obs: DVector<f64>, a_hat: DMatrix<f64>, mu2: f64) -> Result<Self> {
        if a_hat.nrows() != z_obs.len() {
            return Err(EioError::Dimension(format!(
                "Z has {} entries but A_hat has {} rows",
                z_obs.len(),
                a_hat.nrows()
            )));
        }
        if !(mu2 >= 0.0) || !mu2.is_finite() {
            return Err(EioError::Invalid(format!("mu2 must be finite and >= 0, got {mu2}")));
        }
        if z_obs.iter().chain(a_hat.iter()).any(|v| !v.is_finite()) {
            return Err(EioError::Invalid("observation contains non-finite entries".into()));
        }
        Ok(Self { z_obs, a_hat, mu2 })
    }

    /// `(p, q)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.a_hat.ncols(), self.a_hat.nrows())
    }

    pub fn mu(&self) -> f64 {
        self.mu2.sqrt()
    }

    fn check(&self, x: &FullParameter) -> Result<()> {
        if x.dims() != self.dims() || x.a.shape() != self.a_hat.shape() {
            return Err(EioError::Dimension(format!(
                "parameter dims {:?} do not match observation dims {:?}",
                x.dims(),
                self.dims()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthSpec {
    pub theta_star: DVector<f64>,
    pub a_star: DMatrix<f64>,
}

impl TruthSpec {
    pub fn new(theta_star: DVector<f64>, a_star: DMatrix<f64>) -> Result<Self> {
        if a_star.ncols() != theta_star.len() {
            return Err(EioError::Dimension("A* columns must match theta* length".into()));
        }
        Ok(Self { theta_star, a_star })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.a_star.ncols(), self.a_star.nrows())
    }

    pub fn image_star(&self) -> DVector<f64> {
        &self.a_star * &self.theta_star
    }

    /// `υ* = (θ*, A*θ*, A*)`.
    pub fn as_param(&self) -> FullParameter {
        FullParameter {
            theta: self.theta_star.clone(),
            z: self.image_star(),
            a: self.a_star.clone(),
        }
    }

    pub fn noiseless(&self, mu2: f64) -> Result<Observation> {
        Observation::new(self.image_star(), self.a_star.clone(), mu2)
    }
}

/// The set `‖Dθ‖ ≤ R, ‖z‖ ≤ R, ‖(A − A*)D⁻¹‖_F ≤ δ₀` with `R = δ₀ μ √N`.
#[derive(Debug, Clone)]
pub struct LocalRegion {
    pub d2: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub d_inv: DMatrix<f64>,
    pub n_eff: f64,
    pub delta0: f64,
    pub radius: f64,
    pub kappa: f64,
    pub mu: f64,
}

pub const DEFAULT_DELTA0: f64 = 0.1;
pub const DEFAULT_KAPPA: f64 = 2.0;

impl LocalRegion {
    pub fn new(d2: &DMatrix<f64>, mu2: f64, delta0: f64, kappa: f64) -> Result<Self> {
        let d2 = symmetrize(d2, "D2")?;
        let n_eff = min_eig(&d2);
        if !(n_eff > 0.0) {
            return Err(EioError::singular("D2 (lambda_min <= 0; add g0^2 I)"));
        }
        if !(delta0 > 0.0) || !(mu2 > 0.0) || !(kappa > 0.0) {
            return Err(EioError::Invalid("delta0, mu2 and kappa must be positive".into()));
        }
        let d = sym_sqrt(&d2);
        let d_inv = spd_inverse(&d, "D")?;
        let mu = mu2.sqrt();
        Ok(Self {
            radius: delta0 * mu * n_eff.sqrt(),
            d2,
            d,
            d_inv,
            n_eff,
            delta0,
            kappa,
            mu,
        })
    }

    /// `D² = A*ᵀA* + g0² I`.
    pub fn from_truth(truth: &TruthSpec, mu2: f64, g0_sq: f64) -> Result<Self> {
        let p = truth.theta_star.len();
        let d2 = truth.a_star.transpose() * &truth.a_star + DMatrix::identity(p, p) * g0_sq;
        Self::new(&d2, mu2, DEFAULT_DELTA0, DEFAULT_KAPPA)
    }

    pub fn with_delta0(mut self, delta0: f64) -> Self {
        self.radius = delta0 * self.mu * self.n_eff.sqrt();
        self.delta0 = delta0;
        self
    }

    /// `‖𝒟u‖` with `𝒟² = diag(D², I_q, μ² I)`.
    pub fn metric_norm(&self, u: &FullParameter) -> f64 {
        let dt = (&self.d * &u.theta).norm_squared();
        (dt + u.z.norm_squared() + self.mu * self.mu * u.a.norm_squared()).sqrt()
    }

    /// Applies `𝒟` to a direction.
    pub fn metric_apply(&self, u: &FullParameter) -> FullParameter {
        FullParameter {
            theta: &self.d * &u.theta,
            z: u.z.clone(),
            a: &u.a * self.mu,
        }
    }

    /// Dense `𝒟²` over flattened coordinates.
    pub fn metric_dense(&self, q: usize) -> DMatrix<f64> {
        let p = self.d2.nrows();
        let n = p + q + p * q;
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (p, p)).copy_from(&self.d2);
        for i in p..p + q {
            m[(i, i)] = 1.0;
        }
        for i in p + q..n {
            m[(i, i)] = self.mu * self.mu;
        }
        m
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionDiagnostic {
    pub theta_stat: f64,
    pub z_stat: f64,
    pub a_stat: f64,
    pub radius: f64,
    pub delta0: f64,
    pub inside: bool,
}

pub fn region_membership(
    x: &FullParameter,
    region: &LocalRegion,
    truth: &TruthSpec,
) -> Result<RegionDiagnostic> {
    if x.dims() != truth.dims() || region.d2.nrows() != x.theta.len() {
        return Err(EioError::Dimension("region, truth and parameter disagree".into()));
    }
    let theta_stat = (&region.d * &x.theta).norm();
    let z_stat = x.z.norm();
    let a_stat = ((&x.a - &truth.a_star) * &region.d_inv).norm();
    let inside = theta_stat <= region.radius && z_stat <= region.radius && a_stat <= region.delta0;
    Ok(RegionDiagnostic {
        theta_stat,
        z_stat,
        a_stat,
        radius: region.radius,
        delta0: region.delta0,
        inside,
    })
}

/// `(τ₃, τ₄) = (4.5 / (μ √N), 3 / (N μ²))`.
pub fn smoothness_constants(n_eff: f64, mu: f64) -> (f64, f64) {
    (4.5 / (n_eff.sqrt() * mu), 3.0 / (n_eff * mu * mu))
}

fn check_dims(obs: &Observation, x: &FullParameter, pen: &PenaltyConfig) -> Result<()> {
    obs.check(x)?;
    let (p, q) = x.dims();
    pen.validate(p, q)?;
    pen.check_feasible(x)
}

/// Penalized objective `L_G(υ)`.
pub fn objective(obs: &Observation, x: &FullParameter, pen: &PenaltyConfig) -> Result<f64> {
    check_dims(obs, x, pen)?;
    let fit = (&obs.z_obs - &x.z).norm_squared();
    let op = (&x.a - &obs.a_hat).norm_squared();
    let structural = (&x.z - &x.a * &x.theta).norm_squared();
    let penalty = crate::penalty::penalty_value(pen, x)?;
    Ok(-0.5 * fit - 0.5 * obs.mu2 * op - 0.5 * structural - penalty)
}

/// Gradient of `L_G`; entries on masked coordinates are reported as zero.
pub fn gradient(obs: &Observation, x: &FullParameter, pen: &PenaltyConfig) -> Result<FullParameter> {
    check_dims(obs, x, pen)?;
    let (p, q) = x.dims();
    let resid = &x.z - &x.a * &x.theta;
    let g2 = pen.g2(p);
    let mut theta = x.a.transpose() * &resid - g2.component_mul(&x.theta);
    let z = &obs.z_obs - &x.z - &resid;
    let mut a = (&obs.a_hat - &x.a) * obs.mu2 + &resid * x.theta.transpose();
    for m in 0..q {
        let k2 = pen.operator.row_weights(m, p);
        for j in 0..p {
            a[(m, j)] -= k2[j] * x.a[(m, j)];
        }
    }
    for (j, on) in pen.theta_active(p).iter().enumerate() {
        if !on {
            theta[j] = 0.0;
        }
    }
    for (m, on) in pen.row_active(q).iter().enumerate() {
        if !on {
            a.row_mut(m).fill(0.0);
        }
    }
    Ok(FullParameter { theta, z, a })
}

/// `uᵀ𝔽(υ)u = ‖h‖² + μ²‖Δ‖² + ‖h − Aα − Δθ‖² − 2(z − Aθ)ᵀΔα` for `u = (α, h, Δ)`.
pub fn hessian_quadratic_form(x: &FullParameter, mu2: f64, u: &FullParameter) -> f64 {
    let resid = &x.z - &x.a * &x.theta;
    let delta_alpha = &u.a * &u.theta;
    let lin = &u.z - &x.a * &u.theta - &u.a * &x.theta;
    u.z.norm_squared() + mu2 * u.a.norm_squared() + lin.norm_squared() - 2.0 * resid.dot(&delta_alpha)
}

/// `−d³/dt³ L(υ + tu)` at `t = 0`, equal to `6 (Aα + Δθ − h)ᵀ Δα`.
pub fn third_directional(x: &FullParameter, u: &FullParameter) -> f64 {
    let delta_alpha = &u.a * &u.theta;
    let lin = &x.a * &u.theta + &u.a * &x.theta - &u.z;
    6.0 * lin.dot(&delta_alpha)
}

/// `−d⁴/dt⁴ L(υ + tu) = 12 ‖Δα‖²`, constant in `υ`.
pub fn fourth_directional(u: &FullParameter) -> f64 {
    12.0 * (&u.a * &u.theta).norm_squared()
}

/// `∇ζ = (0, ω, μ𝕌)` with `ω = Z − A*θ*` and `𝕌 = μ(Â − A*)`.
#[derive(Debug, Clone)]
pub struct ScoreVector {
    pub theta_part: DVector<f64>,
    pub z_part: DVector<f64>,
    /// `μ² (Â − A*)`.
    pub a_part: DMatrix<f64>,
    pub mu: f64,
}

impl ScoreVector {
    /// The standardized operator noise `𝕌`.
    pub fn operator_noise(&self) -> DMatrix<f64> {
        if self.mu == 0.0 {
            return DMatrix::zeros(self.a_part.nrows(), self.a_part.ncols());
        }
        &self.a_part / self.mu
    }

    pub fn as_param(&self) -> FullParameter {
        FullParameter {
            theta: self.theta_part.clone(),
            z: self.z_part.clone(),
            a: self.a_part.clone(),
        }
    }
}

pub fn score(obs: &Observation, truth: &TruthSpec) -> Result<ScoreVector> {
    if obs.dims() != truth.dims() {
        return Err(EioError::Dimension("observation and truth dims differ".into()));
    }
    let (p, _) = obs.dims();
    Ok(ScoreVector {
        theta_part: DVector::zeros(p),
        z_part: &obs.z_obs - truth.image_star(),
        a_part: (&obs.a_hat - &truth.a_star) * obs.mu2,
        mu: obs.mu(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(theta: f64, z: f64, a: f64) -> FullParameter {
        FullParameter {
            theta: DVector::from_element(1, theta),
            z: DVector::from_element(1, z),
            a: DMatrix::from_element(1, 1, a),
        }
    }

    fn obs1(z: f64, a: f64, mu2: f64) -> Observation {
        Observation::new(DVector::from_element(1, z), DMatrix::from_element(1, 1, a), mu2).unwrap()
    }

    #[test]
    fn objective_examples() {
        let none = PenaltyConfig::none();
        let zero = Observation::new(DVector::zeros(2), DMatrix::zeros(2, 3), 1.0).unwrap();
        assert_eq!(objective(&zero, &FullParameter::zeros(3, 2), &none).unwrap(), 0.0);
        let v = objective(&obs1(2.0, 1.0, 4.0), &scalar(2.0, 1.0, 0.5), &none).unwrap();
        assert!((v + 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_example() {
        let g = gradient(&obs1(2.0, 1.0, 1.0), &scalar(0.0, 1.0, 1.0), &PenaltyConfig::none()).unwrap();
        assert_eq!(g.z[0], 0.0);
    }

    #[test]
    fn derivative_examples() {
        let x = scalar(1.0, 0.0, 1.0);
        assert_eq!(hessian_quadratic_form(&x, 1.0, &scalar(1.0, 0.0, 0.0)), 1.0);
        assert_eq!(third_directional(&x, &scalar(1.0, 1.0, 0.0)), 0.0);
        // (Aα + Δθ − h)·Δα = (1 + 1 − 1)·1
        assert_eq!(third_directional(&x, &scalar(1.0, 1.0, 1.0)), 6.0);
        assert_eq!(fourth_directional(&scalar(3.0, 0.0, 2.0)), 432.0);
        assert_eq!(fourth_directional(&scalar(0.0, 1.0, 2.0)), 0.0);
    }

    #[test]
    fn score_example() {
        let truth = TruthSpec::new(DVector::from_element(1, 2.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let s = score(&obs1(3.0, 1.5, 4.0), &truth).unwrap();
        assert_eq!(s.z_part[0], 1.0);
        assert_eq!(s.operator_noise()[(0, 0)], 1.0);
        assert_eq!(s.a_part[(0, 0)], 2.0);
        let quiet = score(&truth.noiseless(4.0).unwrap(), &truth).unwrap();
        assert_eq!(quiet.as_param().norm(), 0.0);
    }

    #[test]
    fn smoothness_example() {
        let (t3, t4) = smoothness_constants(100.0, 3.0);
        assert!((t3 - 0.15).abs() < 1e-15);
        assert!((t4 - 1.0 / 300.0).abs() < 1e-15);
    }

    #[test]
    fn flat_round_trip() {
        let x = FullParameter {
            theta: DVector::from_vec(vec![1.0, 2.0]),
            z: DVector::from_vec(vec![3.0, 4.0, 5.0]),
            a: DMatrix::from_fn(3, 2, |m, j| (10 * m + j) as f64),
        };
        let v = x.to_flat();
        assert_eq!(v[2 + 3 + 2 + 1], 11.0);
        assert_eq!(FullParameter::from_flat(2, 3, &v).unwrap(), x);
    }

    #[test]
    fn region_statistics() {
        let truth = TruthSpec::new(DVector::from_element(1, 0.5), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let region = LocalRegion::from_truth(&truth, 100.0, 0.0).unwrap().with_delta0(0.5);
        // N = 1, mu = 10, R = 5
        let d = region_membership(&truth.as_param(), &region, &truth).unwrap();
        assert!(d.inside);
        let far = scalar(10.0, 0.5, 1.0);
        let d = region_membership(&far, &region, &truth).unwrap();
        assert!(!d.inside && d.theta_stat == 10.0 && d.z_stat <= d.radius);
        let edge = scalar(0.5, 0.5, 1.5);
        assert!(region_membership(&edge, &region, &truth).unwrap().inside);
    }
}
