//! Spectral calculators: ridge and cut-off risk, approximation spaces and
//! rate predictions driven by the sequences `N_j`, `𝔫_m`, `w_j²`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EioError, Result};
use crate::linalg::{max_eig, min_eig};
use crate::penalty::ridge_cutoff_index;

/// Operator regularity and signal smoothness sequences.
///
/// `tail_seq[k]` stores `𝔫_{k+1}`, so it has `q + 1` entries and ends at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralProfile {
    pub n_seq: Vec<f64>,
    pub tail_seq: Vec<f64>,
    pub w2_seq: Vec<f64>,
    pub s: f64,
    pub beta: f64,
    pub c_w: f64,
    pub n1: f64,
}

impl SpectralProfile {
    /// `N_j = N₁ j^{-2s}`, `w_j² = C_w j^{2β}`, and the tail of the diagonal
    /// operator `[diag(√N_j); 0]`, for which `𝔫_{m+1} = N_{m+1}`.
    pub fn parametric(p: usize, q: usize, n1: f64, s: f64, beta: f64, c_w: f64) -> Result<Self> {
        if p == 0 || q < p {
            return Err(EioError::Invalid(format!("parametric profile needs 1 <= p <= q, got p={p}, q={q}")));
        }
        if !(n1 > 0.0) || !(c_w > 0.0) || !(s >= 0.0) || !(beta >= 0.0) {
            return Err(EioError::Invalid("n1, c_w must be positive and s, beta nonnegative".into()));
        }
        let n_seq: Vec<f64> = (1..=p).map(|j| n1 * (j as f64).powf(-2.0 * s)).collect();
        let w2_seq = (1..=p).map(|j| c_w * (j as f64).powf(2.0 * beta)).collect();
        let tail_seq = (0..=q).map(|k| if k < p { n_seq[k] } else { 0.0 }).collect();
        Ok(Self {
            n_seq,
            tail_seq,
            w2_seq,
            s,
            beta,
            c_w,
            n1,
        })
    }

    /// Sequences read off a given operator; the decay parameters are descriptive only.
    pub fn from_operator(a_star: &DMatrix<f64>, w2_seq: Vec<f64>, s: f64, beta: f64, c_w: f64) -> Result<Self> {
        let (q, p) = a_star.shape();
        if w2_seq.len() != p {
            return Err(EioError::Dimension(format!("w2_seq has {} entries, expected {p}", w2_seq.len())));
        }
        let gram = a_star.transpose() * a_star;
        let n_seq: Vec<f64> = (1..=p).map(|j| min_eig(&gram.view((0, 0), (j, j)).into_owned()).max(0.0)).collect();
        let tail_seq = (0..=q).map(|m| tail_norm(a_star, m)).collect();
        let profile = Self {
            n1: n_seq[0],
            n_seq,
            tail_seq,
            w2_seq,
            s,
            beta,
            c_w,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn p(&self) -> usize {
        self.n_seq.len()
    }

    pub fn q(&self) -> usize {
        self.tail_seq.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.n_seq.len();
        if p == 0 || self.w2_seq.len() != p || self.tail_seq.is_empty() {
            return Err(EioError::Dimension("profile sequences have inconsistent lengths".into()));
        }
        let tol = |a: f64, b: f64| b <= a * (1.0 + 1e-12) + 1e-300;
        if self.n_seq.windows(2).any(|w| !tol(w[0], w[1])) || self.n_seq.iter().any(|v| *v < 0.0) {
            return Err(EioError::Invalid("n_seq must be nonnegative and descending".into()));
        }
        if self.tail_seq.windows(2).any(|w| !tol(w[0], w[1])) || self.tail_seq.iter().any(|v| *v < 0.0) {
            return Err(EioError::Invalid("tail_seq must be nonnegative and descending".into()));
        }
        if self.w2_seq.iter().any(|v| !(*v > 0.0)) {
            return Err(EioError::Invalid("w2_seq must be positive".into()));
        }
        Ok(())
    }

    /// `𝔫_{m+1}`; zero past the end.
    pub fn tail(&self, m: usize) -> f64 {
        self.tail_seq.get(m).copied().unwrap_or(0.0)
    }

    /// `Σ_j w_j² θ_j²`.
    pub fn smoothness_norm(&self, theta: &DVector<f64>) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(theta.iter().zip(&self.w2_seq).map(|(t, w)| w * t * t).sum())
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.p() {
            return Err(EioError::Dimension(format!("theta has {} entries, profile has {}", theta.len(), self.p())));
        }
        Ok(())
    }
}

/// `‖A*ᵀ(I − P_m)A*‖`: the squared top singular value of rows `m..`.
fn tail_norm(a_star: &DMatrix<f64>, m: usize) -> f64 {
    let q = a_star.nrows();
    if m >= q {
        return 0.0;
    }
    let rest = a_star.rows(m, q - m);
    max_eig(&(rest.transpose() * rest)).max(0.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskBreakdown {
    pub variance_term: f64,
    pub bias_term: f64,
    pub total: f64,
    pub kappa: f64,
    pub c_omega: Option<f64>,
    pub c_nu: Option<f64>,
    pub delta0: Option<f64>,
    /// `J_g` for ridge, `J` for cut-off (1-based count).
    pub cutoff_index: usize,
    pub premise_holds: bool,
    pub regime: String,
}

impl RiskBreakdown {
    fn new(variance_term: f64, bias_term: f64, kappa: f64, cutoff_index: usize, premise_holds: bool, regime: &str) -> Self {
        Self {
            variance_term,
            bias_term,
            total: variance_term + bias_term,
            kappa,
            c_omega: None,
            c_nu: None,
            delta0: None,
            cutoff_index,
            premise_holds,
            regime: regime.to_string(),
        }
    }
}

/// Ridge penalty `G² = g²I`: variance `κ⁴Σ_{j≤J_g}N_j⁻¹ + g⁻⁴Σ_{j>J_g}N_j`,
/// bias `(Σ w_j²θ_j²) max_j w_j⁻² / (κ⁻²g⁻²N_j + 1)`.
pub fn ridge_risk_bound(profile: &SpectralProfile, theta_star: &DVector<f64>, g2: f64, kappa: f64) -> Result<RiskBreakdown> {
    profile.validate()?;
    if !(g2 >= 0.0) || !(kappa > 0.0) {
        return Err(EioError::Invalid("ridge needs g2 >= 0 and kappa > 0".into()));
    }
    let smooth = profile.smoothness_norm(theta_star)?;
    let jg = ridge_cutoff_index(&profile.n_seq, kappa, g2)?;
    let k4 = kappa.powi(4);
    let head: f64 = profile.n_seq[..jg].iter().map(|n| 1.0 / n).sum();
    let tail: f64 = profile.n_seq[jg..].iter().filter(|n| **n > 0.0).sum();
    let variance = k4 * head + if tail > 0.0 { tail / (g2 * g2) } else { 0.0 };

    let ratio = |j: usize| {
        let n = profile.n_seq[j];
        let damp = if g2 > 0.0 { n / (kappa * kappa * g2) + 1.0 } else if n > 0.0 { f64::INFINITY } else { 1.0 };
        1.0 / (profile.w2_seq[j] * damp)
    };
    let worst = (0..profile.p()).map(ratio).fold(0.0, f64::max);

    // w_j increasing and w_j N_j decreasing keep the maximum at the cutoff.
    let w: Vec<f64> = profile.w2_seq.iter().map(|v| v.sqrt()).collect();
    let monotone = w.windows(2).all(|p| p[1] >= p[0])
        && (1..w.len()).all(|j| w[j] * profile.n_seq[j] <= w[j - 1] * profile.n_seq[j - 1]);
    let regime = if monotone {
        "ridge"
    } else {
        "phase-transition regime: use cutoff"
    };
    Ok(RiskBreakdown::new(variance, smooth * worst, kappa, jg, monotone, regime))
}

/// Spectral cut-off at `J`: variance `κ⁴Σ_{j≤J}N_j⁻¹`, bias `‖(I − Π_J)θ*‖²`.
pub fn cutoff_risk_bound(profile: &SpectralProfile, theta_star: &DVector<f64>, j: usize, kappa: f64) -> Result<RiskBreakdown> {
    profile.validate()?;
    profile.check_theta(theta_star)?;
    if j == 0 || j > profile.p() {
        return Err(EioError::Invalid(format!("cutoff J={j} outside 1..={}", profile.p())));
    }
    if profile.n_seq[..j].iter().any(|n| *n <= 0.0) {
        return Err(EioError::singular(format!("N_j = 0 within the first {j} coordinates")));
    }
    let variance = kappa.powi(4) * profile.n_seq[..j].iter().map(|n| 1.0 / n).sum::<f64>();
    let bias = theta_star.rows(j, profile.p() - j).norm_squared();
    Ok(RiskBreakdown::new(variance, bias, kappa, j, true, "cutoff"))
}

#[derive(Debug, Clone, Serialize)]
pub struct TruncationBias {
    pub bound: f64,
    pub applicable: bool,
}

/// `‖(I − Π_J)θ*‖ + κ²𝔫_{M+1}/(2N_J) ‖θ*‖`, applicable when `𝔫_{M+1} ≤ N_J/2`.
pub fn truncation_bias_bound(
    profile: &SpectralProfile,
    theta_star: &DVector<f64>,
    j: usize,
    m: usize,
    kappa: f64,
) -> Result<TruncationBias> {
    profile.validate()?;
    profile.check_theta(theta_star)?;
    if j == 0 || j > profile.p() || m == 0 || m > profile.q() {
        return Err(EioError::Invalid(format!("(J, M) = ({j}, {m}) out of range")));
    }
    let n_j = profile.n_seq[j - 1];
    let tail = profile.tail(m);
    let applicable = tail <= n_j / 2.0 && n_j > 0.0;
    let head = theta_star.rows(j, profile.p() - j).norm();
    let bound = if tail == 0.0 {
        head
    } else {
        head + kappa * kappa * tail / (2.0 * n_j) * theta_star.norm()
    };
    Ok(TruncationBias { bound, applicable })
}

#[derive(Debug, Clone, Serialize)]
pub struct AppSpace {
    /// `N_1..N_J`.
    pub n_seq: Vec<f64>,
    pub n_j: f64,
    /// `𝔫_{M+1}`.
    pub tail: f64,
    /// `tr(D_{J,M}⁻²)`, infinite when the reduced operator is rank deficient.
    pub trace_exact: f64,
    /// `Σ_{j≤J} 1/(N_j − 𝔫_{M+1})`, present when the premise holds.
    pub trace_bound: Option<f64>,
    pub applicable: bool,
}

/// Approximation-space summaries for the leading `M × J` block of `A*`.
pub fn appspace_quantities(a_star: &DMatrix<f64>, j: usize, m: usize) -> Result<AppSpace> {
    let (q, p) = a_star.shape();
    if j == 0 || j > p || m == 0 || m > q {
        return Err(EioError::Invalid(format!("(J, M) = ({j}, {m}) out of range for {q}x{p}")));
    }
    let gram = a_star.transpose() * a_star;
    let n_seq: Vec<f64> = (1..=j).map(|k| min_eig(&gram.view((0, 0), (k, k)).into_owned()).max(0.0)).collect();
    let n_j = n_seq[j - 1];
    let tail = tail_norm(a_star, m);
    let block = a_star.view((0, 0), (m, j));
    let d2 = block.transpose() * block;
    let trace_exact = match d2.clone().cholesky() {
        Some(ch) if min_eig(&d2) > 0.0 => ch.inverse().trace(),
        _ => f64::INFINITY,
    };
    let applicable = n_j > 0.0 && tail <= n_j / 2.0;
    let trace_bound = applicable.then(|| n_seq.iter().map(|n| 1.0 / (n - tail)).sum());
    Ok(AppSpace {
        n_seq,
        n_j,
        tail,
        trace_exact,
        trace_bound,
        applicable,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RatePrediction {
    pub j_opt: usize,
    /// `1/(1 + 2β + 2s)`.
    pub j_exponent: f64,
    /// `−2β/(1 + 2β + 2s)`.
    pub risk_exponent: f64,
    pub risk_order: f64,
    pub rho: f64,
}

/// Rate-optimal cutoff `J ≍ (N₁/C_w)^{1/(1+2β+2s)}` and risk order
/// `C_w^{−(2s+1)/(1+2β+2s)} N₁^{−2β/(1+2β+2s)}`.
pub fn rate_prediction(s: f64, beta: f64, c_w: f64, n1: f64) -> Result<RatePrediction> {
    if !(s > 0.5) || !(beta > 0.0) || !(n1 > 0.0) || !(c_w > 0.0) {
        return Err(EioError::Invalid("rate prediction needs s > 1/2, beta > 0, n1 > 0, c_w > 0".into()));
    }
    let denom = 1.0 + 2.0 * beta + 2.0 * s;
    let j_exponent = 1.0 / denom;
    let j_opt = ((n1 / c_w).powf(j_exponent).round() as usize).max(1);
    let risk_exponent = -2.0 * beta / denom;
    let risk_order = c_w.powf(-(2.0 * s + 1.0) / denom) * n1.powf(risk_exponent);
    Ok(RatePrediction {
        j_opt,
        j_exponent,
        risk_exponent,
        risk_order,
        rho: 0.5,
    })
}

/// Smallest `M ≥ 1` with `𝔫_{M+1} ≤ ρ N_J`.
pub fn select_rows(profile: &SpectralProfile, j: usize, rho: f64) -> Result<usize> {
    if j == 0 || j > profile.p() {
        return Err(EioError::Invalid(format!("J={j} outside 1..={}", profile.p())));
    }
    let target = rho * profile.n_seq[j - 1];
    (1..=profile.q())
        .find(|&m| profile.tail(m) <= target)
        .ok_or_else(|| EioError::Infeasible(format!("no M satisfies the tail condition for J={j}")))
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalDimension {
    /// `p M / (N μ²)`.
    pub ratio: f64,
    pub threshold: f64,
    pub consistent: bool,
}

pub fn critical_dimension_check(p: usize, m: usize, mu2: f64, n_eff: f64, threshold: f64) -> Result<CriticalDimension> {
    if !(mu2 > 0.0) || !(n_eff > 0.0) {
        return Err(EioError::Invalid("mu2 and n_eff must be positive".into()));
    }
    let ratio = (p * m) as f64 / (n_eff * mu2);
    Ok(CriticalDimension {
        ratio,
        threshold,
        consistent: ratio < threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(n: &[f64]) -> SpectralProfile {
        SpectralProfile {
            n_seq: n.to_vec(),
            tail_seq: n.iter().cloned().chain([0.0]).collect(),
            w2_seq: vec![1.0; n.len()],
            s: 1.0,
            beta: 1.0,
            c_w: 1.0,
            n1: n[0],
        }
    }

    #[test]
    fn ridge_variance_example() {
        let pr = profile(&[100.0, 25.0, 4.0, 1.0]);
        let r = ridge_risk_bound(&pr, &DVector::zeros(4), 1.0, 2.0).unwrap();
        assert_eq!(r.cutoff_index, 3);
        assert!((r.variance_term - 5.8).abs() < 1e-12);
        assert_eq!(r.total, r.variance_term + r.bias_term);
    }

    #[test]
    fn cutoff_examples() {
        let pr = profile(&[100.0, 25.0, 4.0]);
        let th = DVector::from_vec(vec![0.3, 0.2, 0.1]);
        let r = cutoff_risk_bound(&pr, &th, 2, 2.0).unwrap();
        assert!((r.variance_term - 0.8).abs() < 1e-12);
        assert!((r.bias_term - 0.01).abs() < 1e-15);
        assert_eq!(cutoff_risk_bound(&pr, &th, 3, 2.0).unwrap().bias_term, 0.0);
    }

    #[test]
    fn appspace_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[10.0, 0.0, 0.0, 5.0]);
        let s = appspace_quantities(&a, 2, 1).unwrap();
        assert_eq!(s.n_seq, vec![100.0, 25.0]);
        assert!((s.tail - 25.0).abs() < 1e-10);
        let s = appspace_quantities(&a, 2, 2).unwrap();
        assert_eq!(s.tail, 0.0);
        assert!((s.trace_bound.unwrap() - (0.01 + 0.04)).abs() < 1e-14);
    }

    #[test]
    fn rate_exponents() {
        let r = rate_prediction(1.0, 1.0, 1.0, 1e5).unwrap();
        assert!((r.j_exponent - 0.2).abs() < 1e-15);
        assert!((r.risk_exponent + 0.4).abs() < 1e-15);
        assert_eq!(r.j_opt, 10);
        let js: Vec<usize> = [1e3, 1e4, 1e5, 1e6].iter().map(|n| rate_prediction(1.0, 1.0, 1.0, *n).unwrap().j_opt).collect();
        assert_eq!(js, vec![4, 6, 10, 16]);
    }

    #[test]
    fn critical_dimension() {
        let c = critical_dimension_check(1, 1, 100.0, 100.0, 0.1).unwrap();
        assert!((c.ratio - 1e-4).abs() < 1e-18 && c.consistent);
        assert!(!critical_dimension_check(10, 10, 10.0, 10.0, 0.1).unwrap().consistent);
    }

    #[test]
    fn truncation_bias_trivial() {
        let pr = profile(&[4.0, 1.0]);
        let th = DVector::from_vec(vec![1.0, 0.0]);
        let b = truncation_bias_bound(&pr, &th, 1, 2, 2.0).unwrap();
        assert_eq!(b.bound, 0.0);
        assert!(b.applicable);
    }
}
