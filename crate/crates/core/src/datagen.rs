//! Synthetic instances: a direct model with a prescribed spectrum, random-design
//! regression and instrumental-variable regression.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{EioError, Result};
use crate::linalg::spd_solve;
use crate::model::{LocalRegion, Observation, TruthSpec};
use crate::quadrature::integrate_checked;
use crate::rng::{normal, substream, Component};
use crate::theory::SpectralProfile;

/// Relative tolerance of the halved-rule quadrature check.
pub const QUADRATURE_TOL: f64 = 1e-8;
pub const DEFAULT_NODES: usize = 256;

#[derive(Debug, Clone, Serialize)]
pub struct InstanceMeta {
    pub generator: String,
    pub p: usize,
    pub q: usize,
    pub mu2: f64,
    pub seed: u64,
    pub replicate: Option<u64>,
    /// Factor applied to `(Z, Â)` so that the unit-variance objective applies.
    pub scale: f64,
    pub quadrature_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub obs: Observation,
    pub truth: TruthSpec,
    pub meta: InstanceMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectModelSpec {
    pub p: usize,
    pub q: usize,
    pub n1: f64,
    #[serde(default = "one")]
    pub s: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "one")]
    pub c_w: f64,
    #[serde(default = "one")]
    pub sigma_omega: f64,
    #[serde(default = "one")]
    pub sigma_u: f64,
    pub mu2: f64,
}

fn one() -> f64 {
    1.0
}

impl DirectModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q < self.p {
            return Err(EioError::Invalid(format!("direct model needs 1 <= p <= q (p={}, q={})", self.p, self.q)));
        }
        if !(self.mu2 > 0.0) || !(self.sigma_omega >= 0.0) || !(self.sigma_u >= 0.0) {
            return Err(EioError::Invalid("mu2 must be positive and noise levels nonnegative".into()));
        }
        Ok(())
    }

    pub fn profile(&self) -> Result<SpectralProfile> {
        SpectralProfile::parametric(self.p, self.q, self.n1, self.s, self.beta, self.c_w)
    }

    /// `A* = [diag(√N_j); 0]` and `θ*_j ∝ ±j^{−(β+½)}` scaled to `Σ w_j²θ_j² = 1`.
    pub fn truth(&self, seed: u64) -> Result<TruthSpec> {
        self.validate()?;
        let profile = self.profile()?;
        let mut a = DMatrix::zeros(self.q, self.p);
        for j in 0..self.p {
            a[(j, j)] = profile.n_seq[j].sqrt();
        }
        let mut rng = substream(seed, None, Component::Truth);
        let raw = DVector::from_fn(self.p, |j, _| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * ((j + 1) as f64).powf(-(self.beta + 0.5))
        });
        let norm = profile.smoothness_norm(&raw)?.sqrt();
        TruthSpec::new(raw / norm, a)
    }
}

/// `Z = A*θ* + ω`, `Â = A* + 𝕌/μ` with independent Gaussian streams.
pub fn gen_direct(spec: &DirectModelSpec, seed: u64, replicate: Option<u64>) -> Result<(Instance, LocalRegion)> {
    let truth = spec.truth(seed)?;
    let obs = perturb(&truth, spec.mu2, spec.sigma_omega, spec.sigma_u, seed, replicate)?;
    let region = LocalRegion::from_truth(&truth, spec.mu2, 0.0)?;
    let meta = InstanceMeta {
        generator: "direct".into(),
        p: spec.p,
        q: spec.q,
        mu2: spec.mu2,
        seed,
        replicate,
        scale: 1.0,
        quadrature_error: None,
    };
    Ok((Instance { obs, truth, meta }, region))
}

/// Gaussian observation around a fixed truth, drawn from replicate streams.
pub fn perturb(truth: &TruthSpec, mu2: f64, sigma_omega: f64, sigma_u: f64, seed: u64, replicate: Option<u64>) -> Result<Observation> {
    let (p, q) = truth.dims();
    let mut r_omega = substream(seed, replicate, Component::Omega);
    let mut r_u = substream(seed, replicate, Component::Operator);
    let mu = mu2.sqrt();
    let z = truth.image_star() + DVector::from_fn(q, |_, _| sigma_omega * normal(&mut r_omega));
    // Row-major draws keep row m's noise independent of p's column order.
    let mut a = truth.a_star.clone();
    for m in 0..q {
        for j in 0..p {
            a[(m, j)] += sigma_u * normal(&mut r_u) / mu;
        }
    }
    Observation::new(z, a, mu2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Orthonormal shifted Legendre `√(2k+1) P_k(2x − 1)`.
    Legendre,
    /// `1, √2 cos(πkx)`.
    Cosine,
    Monomial,
    Constant,
}

impl Basis {
    pub fn eval(&self, k: usize, x: f64) -> f64 {
        match self {
            Basis::Constant => 1.0,
            Basis::Monomial => x.powi(k as i32),
            Basis::Cosine => {
                if k == 0 {
                    1.0
                } else {
                    std::f64::consts::SQRT_2 * (std::f64::consts::PI * k as f64 * x).cos()
                }
            }
            Basis::Legendre => {
                let t = 2.0 * x - 1.0;
                let (mut p0, mut p1) = (1.0, t);
                let pk = if k == 0 {
                    1.0
                } else {
                    for i in 2..=k {
                        let fi = i as f64;
                        let p2 = ((2.0 * fi - 1.0) * t * p1 - (fi - 1.0) * p0) / fi;
                        p0 = p1;
                        p1 = p2;
                    }
                    p1
                };
                (2.0 * k as f64 + 1.0).sqrt() * pk
            }
        }
    }

    fn all(&self, n: usize, x: f64) -> Vec<f64> {
        (0..n).map(|k| self.eval(k, x)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Design {
    Uniform,
    Beta { a: f64, b: f64 },
    Normal { mean: f64, sd: f64 },
}

impl Design {
    fn density(&self, x: f64) -> Result<f64> {
        match *self {
            Design::Uniform => Ok(1.0),
            Design::Beta { a, b } => {
                if a < 1.0 || b < 1.0 {
                    return Err(EioError::Quadrature(format!("beta({a}, {b}) density is unbounded on [0, 1]")));
                }
                Ok(x.powf(a - 1.0) * (1.0 - x).powf(b - 1.0) / beta_fn(a, b))
            }
            Design::Normal { .. } => Err(EioError::Quadrature("normal design has unbounded support".into())),
        }
    }

    fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match *self {
            Design::Uniform => Ok(rng.random::<f64>()),
            Design::Beta { a, b } => Ok(Beta::new(a, b).map_err(|e| EioError::Invalid(format!("beta design: {e}")))?.sample(rng)),
            Design::Normal { mean, sd } => Ok(Normal::new(mean, sd).map_err(|e| EioError::Invalid(format!("normal design: {e}")))?.sample(rng)),
        }
    }
}

fn beta_fn(a: f64, b: f64) -> f64 {
    (libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Target {
    /// `f = Ψᵀθ`.
    Coefficients { theta: Vec<f64> },
    /// `f(x) = sin(2π k x)`; `θ*` is its projection on `Ψ` under the design.
    Sine { frequency: f64 },
}

impl Target {
    fn value(&self, basis: Basis, x: f64) -> f64 {
        match self {
            Target::Coefficients { theta } => theta.iter().enumerate().map(|(k, t)| t * basis.eval(k, x)).sum(),
            Target::Sine { frequency } => (2.0 * std::f64::consts::PI * frequency * x).sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionSpec {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub psi: Basis,
    pub phi: Basis,
    #[serde(default = "uniform")]
    pub design: Design,
    pub target: Target,
    pub noise_sd: f64,
    /// `μ² = mu2_factor · n`.
    #[serde(default = "one")]
    pub mu2_factor: f64,
    #[serde(default = "nodes")]
    pub quad_nodes: usize,
}

fn uniform() -> Design {
    Design::Uniform
}

fn nodes() -> usize {
    DEFAULT_NODES
}

impl RegressionSpec {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.q == 0 {
            return Err(EioError::Invalid("n, p and q must be positive".into()));
        }
        if !(self.noise_sd > 0.0) || !(self.mu2_factor > 0.0) {
            return Err(EioError::Invalid("noise_sd and mu2_factor must be positive".into()));
        }
        if let Target::Coefficients { theta } = &self.target {
            if theta.len() != self.p {
                return Err(EioError::Dimension(format!("target has {} coefficients, p = {}", theta.len(), self.p)));
            }
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        1.0 / self.noise_sd
    }
}

/// Population moments over the joint law of `(W, X)`; `W = X` for random design.
struct Moments {
    /// `n E[φ(W) ψ(X)ᵀ]`.
    a_star: DMatrix<f64>,
    theta_star: DVector<f64>,
    error: f64,
}

/// Shared quadrature: `map(u, v)` gives `(w, x, density)` for unit-square nodes.
fn moments(spec: &RegressionSpec, two_d: bool, map: impl Fn(f64, f64) -> Result<(f64, f64, f64)>) -> Result<Moments> {
    let (p, q) = (spec.p, spec.q);
    // Layout: q·p cross moments, p·p Gram, p target moments.
    let len = q * p + p * p + p;
    let failure = std::cell::RefCell::new(None);
    let eval = |g: &crate::quadrature::GaussLegendre, out: &mut [f64]| {
        let vs: Vec<(f64, f64)> = if two_d { g.nodes.iter().copied().zip(g.weights.iter().copied()).collect() } else { vec![(0.0, 1.0)] };
        for (u, wu) in g.nodes.iter().zip(&g.weights) {
            for (v, wv) in &vs {
                let (w, x, dens) = match map(*u, *v) {
                    Ok(t) => t,
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        return;
                    }
                };
                let wt = wu * wv * dens;
                let phi = spec.phi.all(q, w);
                let psi = spec.psi.all(p, x);
                let f = spec.target.value(spec.psi, x);
                for m in 0..q {
                    for j in 0..p {
                        out[m * p + j] += wt * phi[m] * psi[j];
                    }
                }
                for i in 0..p {
                    for j in 0..p {
                        out[q * p + i * p + j] += wt * psi[i] * psi[j];
                    }
                    out[q * p + p * p + i] += wt * psi[i] * f;
                }
            }
        }
    };
    let (vals, err) = integrate_checked(spec.quad_nodes, len, eval)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let mag = vals.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    if err > QUADRATURE_TOL * mag {
        return Err(EioError::Quadrature(format!("halved-rule disagreement {err:.3e} exceeds tolerance")));
    }
    let n = spec.n as f64;
    let scale = spec.scale();
    let a_star = DMatrix::from_fn(q, p, |m, j| n * scale * vals[m * p + j]);
    let theta_star = match &spec.target {
        Target::Coefficients { theta } => DVector::from_column_slice(theta),
        Target::Sine { .. } => {
            let gram = DMatrix::from_fn(p, p, |i, j| vals[q * p + i * p + j]);
            let cross = DVector::from_fn(p, |i, _| vals[q * p + p * p + i]);
            spd_solve(&gram, &cross, "design Gram")?
        }
    };
    Ok(Moments {
        a_star,
        theta_star,
        error: err * n * scale,
    })
}

fn assemble(spec: &RegressionSpec, w: &[f64], x: &[f64], y: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let (p, q) = (spec.p, spec.q);
    let scale = spec.scale();
    let mut z = DVector::zeros(q);
    let mut a = DMatrix::zeros(q, p);
    for i in 0..w.len() {
        let phi = spec.phi.all(q, w[i]);
        let psi = spec.psi.all(p, x[i]);
        for m in 0..q {
            z[m] += scale * y[i] * phi[m];
            for j in 0..p {
                a[(m, j)] += scale * phi[m] * psi[j];
            }
        }
    }
    (z, a)
}

fn regression_meta(spec: &RegressionSpec, name: &str, seed: u64, replicate: Option<u64>, err: f64) -> InstanceMeta {
    InstanceMeta {
        generator: name.into(),
        p: spec.p,
        q: spec.q,
        mu2: spec.mu2_factor * spec.n as f64,
        seed,
        replicate,
        scale: spec.scale(),
        quadrature_error: Some(err),
    }
}

/// `Â = Σ Φ(X_i)Ψ(X_i)ᵀ`, `Z_m = Σ Y_i φ_m(X_i)`, both divided by the noise sd.
pub fn gen_random_design(spec: &RegressionSpec, seed: u64, replicate: Option<u64>) -> Result<Instance> {
    spec.validate()?;
    let design = spec.design;
    let mom = moments(spec, false, |u, _| Ok((u, u, design.density(u)?)))?;
    let mut r_x = substream(seed, replicate, Component::Design);
    let mut r_e = substream(seed, replicate, Component::Omega);
    let mut x = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        x.push(design.sample(&mut r_x)?);
    }
    let y: Vec<f64> = x.iter().map(|xi| spec.target.value(spec.psi, *xi) + spec.noise_sd * normal(&mut r_e)).collect();
    let (z, a) = assemble(spec, &x, &x, &y);
    let mu2 = spec.mu2_factor * spec.n as f64;
    Ok(Instance {
        obs: Observation::new(z, a, mu2)?,
        truth: TruthSpec::new(mom.theta_star, mom.a_star)?,
        meta: regression_meta(spec, "random_design", seed, replicate, mom.error),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IvSpec {
    pub base: RegressionSpec,
    /// `X = ρW + (1 − ρ)η`.
    pub rho: f64,
    /// Endogeneity: `ε = γ(η − ½) + σξ`.
    #[serde(default)]
    pub gamma: f64,
}

/// `W, η ~ U(0,1)` independent, so `E[ε | W] = 0` and `W` is a valid instrument.
pub fn gen_iv(spec: &IvSpec, seed: u64, replicate: Option<u64>) -> Result<Instance> {
    let base = &spec.base;
    base.validate()?;
    if base.design != Design::Uniform {
        return Err(EioError::Invalid("instrumental-variable generator uses a uniform instrument".into()));
    }
    if !(0.0..=1.0).contains(&spec.rho) {
        return Err(EioError::Invalid("rho must lie in [0, 1]".into()));
    }
    let rho = spec.rho;
    let mom = if rho == 1.0 {
        moments(base, false, |u, _| Ok((u, u, 1.0)))?
    } else {
        moments(base, true, |u, v| Ok((u, rho * u + (1.0 - rho) * v, 1.0)))?
    };
    let mut r_w = substream(seed, replicate, Component::Design);
    let mut r_e = substream(seed, replicate, Component::Omega);
    let mut r_eta = substream(seed, replicate, Component::Instrument);
    let (mut w, mut x, mut y) = (Vec::with_capacity(base.n), Vec::with_capacity(base.n), Vec::with_capacity(base.n));
    for _ in 0..base.n {
        let wi: f64 = r_w.random();
        let eta: f64 = r_eta.random();
        let xi = rho * wi + (1.0 - rho) * eta;
        let eps = spec.gamma * (eta - 0.5) + base.noise_sd * normal(&mut r_e);
        w.push(wi);
        x.push(xi);
        y.push(base.target.value(base.psi, xi) + eps);
    }
    let (z, a) = assemble(base, &w, &x, &y);
    let mu2 = base.mu2_factor * base.n as f64;
    Ok(Instance {
        obs: Observation::new(z, a, mu2)?,
        truth: TruthSpec::new(mom.theta_star, mom.a_star)?,
        meta: regression_meta(base, "iv", seed, replicate, mom.error),
    })
}

/// Residual of `Σ‖Âᵢ − A‖² = Σ‖Âᵢ − Â‖² + n‖Â − A‖²` with `Â` the mean of `Âᵢ`.
pub fn design_decomposition_check(a_hat_i: &[DMatrix<f64>], a: &DMatrix<f64>) -> Result<f64> {
    let n = a_hat_i.len();
    if n == 0 || a_hat_i.iter().any(|m| m.shape() != a.shape()) {
        return Err(EioError::Dimension("design decomposition needs matrices of one shape".into()));
    }
    let mean = a_hat_i.iter().fold(DMatrix::zeros(a.nrows(), a.ncols()), |s, m| s + m) / n as f64;
    let lhs: f64 = a_hat_i.iter().map(|m| (m - a).norm_squared()).sum();
    let within: f64 = a_hat_i.iter().map(|m| (m - &mean).norm_squared()).sum();
    Ok(lhs - within - n as f64 * (&mean - a).norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decomposition_scalar() {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        assert_eq!(design_decomposition_check(&[m(2.0), m(4.0)], &m(1.0)).unwrap(), 0.0);
    }

    #[test]
    fn legendre_is_orthonormal() {
        let g = crate::quadrature::GaussLegendre::new(32).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let v = g.integrate(|x| Basis::Legendre.eval(i, x) * Basis::Legendre.eval(j, x));
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn beta_function() {
        assert!((beta_fn(2.0, 3.0) - 1.0 / 12.0).abs() < 1e-13);
    }

    #[test]
    fn direct_truth_is_normalized() {
        let spec = DirectModelSpec {
            p: 8,
            q: 12,
            n1: 1e4,
            s: 1.0,
            beta: 1.0,
            c_w: 1.0,
            sigma_omega: 1.0,
            sigma_u: 1.0,
            mu2: 1e4,
        };
        let t = spec.truth(3).unwrap();
        let w = spec.profile().unwrap().smoothness_norm(&t.theta_star).unwrap();
        assert!((w - 1.0).abs() < 1e-12);
    }
}
