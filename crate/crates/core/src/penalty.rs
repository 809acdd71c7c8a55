//! Signal and operator penalties. Truncation is a coordinate mask, never an
//! infinite weight.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EioError, Result};
use crate::model::{FullParameter, Observation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalPenalty {
    #[default]
    None,
    Ridge {
        g2: f64,
    },
    Diagonal {
        g2: Vec<f64>,
    },
    /// `g_j² = w2 · j^{2 beta}` with 1-based `j`.
    Roughness {
        w2: f64,
        beta: f64,
    },
    /// Keeps the first `j` coordinates.
    Truncation {
        j: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorPenalty {
    #[default]
    None,
    /// `k2[m][j]` multiplies `A_{mj}²`.
    Elementwise {
        k2: Vec<Vec<f64>>,
    },
    RowScalar {
        k2: Vec<f64>,
    },
    /// Keeps the first `m` rows.
    RowTruncation {
        m: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    #[serde(default)]
    pub signal: SignalPenalty,
    #[serde(default)]
    pub operator: OperatorPenalty,
}

fn check_weights(w: &[f64], what: &str) -> Result<()> {
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(EioError::Invalid(format!("{what} must be finite and nonnegative")));
    }
    Ok(())
}

impl SignalPenalty {
    pub fn validate(&self, p: usize) -> Result<()> {
        match self {
            SignalPenalty::None => Ok(()),
            SignalPenalty::Ridge { g2 } => check_weights(&[*g2], "ridge g2"),
            SignalPenalty::Diagonal { g2 } => {
                if g2.len() != p {
                    return Err(EioError::Dimension(format!(
                        "diagonal signal penalty has {} weights, expected {p}",
                        g2.len()
                    )));
                }
                check_weights(g2, "diagonal g2")
            }
            SignalPenalty::Roughness { w2, beta } => {
                check_weights(&[*w2], "roughness w2")?;
                if !beta.is_finite() {
                    return Err(EioError::Invalid("roughness beta must be finite".into()));
                }
                Ok(())
            }
            SignalPenalty::Truncation { j } => {
                if *j == 0 || *j > p {
                    return Err(EioError::Invalid(format!("truncation J={j} outside 1..={p}")));
                }
                Ok(())
            }
        }
    }

    /// Diagonal of the finite part of `G²`; zero on truncated coordinates.
    pub fn weights(&self, p: usize) -> Vec<f64> {
        match self {
            SignalPenalty::None | SignalPenalty::Truncation { .. } => vec![0.0; p],
            SignalPenalty::Ridge { g2 } => vec![*g2; p],
            SignalPenalty::Diagonal { g2 } => g2.clone(),
            SignalPenalty::Roughness { w2, beta } => (1..=p)
                .map(|j| w2 * (j as f64).powf(2.0 * beta))
                .collect(),
        }
    }

    pub fn active(&self, p: usize) -> Vec<bool> {
        match self {
            SignalPenalty::Truncation { j } => (0..p).map(|i| i < *j).collect(),
            _ => vec![true; p],
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            SignalPenalty::None => true,
            SignalPenalty::Ridge { g2 } => *g2 == 0.0,
            SignalPenalty::Diagonal { g2 } => g2.iter().all(|v| *v == 0.0),
            SignalPenalty::Roughness { w2, .. } => *w2 == 0.0,
            SignalPenalty::Truncation { .. } => false,
        }
    }
}

impl OperatorPenalty {
    pub fn validate(&self, p: usize, q: usize) -> Result<()> {
        match self {
            OperatorPenalty::None => Ok(()),
            OperatorPenalty::Elementwise { k2 } => {
                if k2.len() != q || k2.iter().any(|r| r.len() != p) {
                    return Err(EioError::Dimension(format!(
                        "elementwise operator penalty must be {q}x{p}"
                    )));
                }
                k2.iter().try_for_each(|r| check_weights(r, "elementwise k2"))
            }
            OperatorPenalty::RowScalar { k2 } => {
                if k2.len() != q {
                    return Err(EioError::Dimension(format!(
                        "row-scalar operator penalty has {} weights, expected {q}",
                        k2.len()
                    )));
                }
                check_weights(k2, "row-scalar k2")
            }
            OperatorPenalty::RowTruncation { m } => {
                if *m == 0 || *m > q {
                    return Err(EioError::Invalid(format!("row truncation M={m} outside 1..={q}")));
                }
                Ok(())
            }
        }
    }

    /// Diagonal of `K_m²` for row `m` (0-based).
    pub fn row_weights(&self, m: usize, p: usize) -> DVector<f64> {
        match self {
            OperatorPenalty::None | OperatorPenalty::RowTruncation { .. } => DVector::zeros(p),
            OperatorPenalty::Elementwise { k2 } => DVector::from_column_slice(&k2[m]),
            OperatorPenalty::RowScalar { k2 } => DVector::from_element(p, k2[m]),
        }
    }

    pub fn active(&self, q: usize) -> Vec<bool> {
        match self {
            OperatorPenalty::RowTruncation { m } => (0..q).map(|i| i < *m).collect(),
            _ => vec![true; q],
        }
    }

    /// True when `‖A‖_K` is invariant under rotations of the image space.
    pub fn basis_free(&self) -> bool {
        match self {
            OperatorPenalty::None => true,
            OperatorPenalty::RowScalar { k2 } => k2.windows(2).all(|w| w[0] == w[1]),
            _ => false,
        }
    }
}

impl PenaltyConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn ridge(g2: f64) -> Self {
        Self {
            signal: SignalPenalty::Ridge { g2 },
            operator: OperatorPenalty::None,
        }
    }

    pub fn truncation(j: usize, m: usize) -> Self {
        Self {
            signal: SignalPenalty::Truncation { j },
            operator: OperatorPenalty::RowTruncation { m },
        }
    }

    pub fn validate(&self, p: usize, q: usize) -> Result<()> {
        self.signal.validate(p)?;
        self.operator.validate(p, q)
    }

    pub fn theta_active(&self, p: usize) -> Vec<bool> {
        self.signal.active(p)
    }

    pub fn row_active(&self, q: usize) -> Vec<bool> {
        self.operator.active(q)
    }

    pub fn g2(&self, p: usize) -> DVector<f64> {
        DVector::from_vec(self.signal.weights(p))
    }

    /// Rejects parameters with nonzero entries on masked coordinates.
    pub fn check_feasible(&self, x: &FullParameter) -> Result<()> {
        let (p, q) = x.dims();
        for (j, on) in self.theta_active(p).iter().enumerate() {
            if !on && x.theta[j] != 0.0 {
                return Err(EioError::Infeasible(format!(
                    "theta[{}] is truncated but equals {}",
                    j + 1,
                    x.theta[j]
                )));
            }
        }
        for (m, on) in self.row_active(q).iter().enumerate() {
            if !on && x.a.row(m).iter().any(|v| *v != 0.0) {
                return Err(EioError::Infeasible(format!(
                    "operator row {} is truncated but nonzero",
                    m + 1
                )));
            }
        }
        Ok(())
    }
}

/// `½‖Gθ‖² + ½‖A‖²_K` over finite-penalty coordinates.
pub fn penalty_value(pen: &PenaltyConfig, x: &FullParameter) -> Result<f64> {
    let (p, q) = x.dims();
    pen.validate(p, q)?;
    pen.check_feasible(x)?;
    let g2 = pen.g2(p);
    let mut v: f64 = (0..p).map(|j| g2[j] * x.theta[j] * x.theta[j]).sum();
    for m in 0..q {
        let k2 = pen.operator.row_weights(m, p);
        v += (0..p).map(|j| k2[j] * x.a[(m, j)] * x.a[(m, j)]).sum::<f64>();
    }
    Ok(0.5 * v)
}

/// Index map between a full problem and its leading `(J, M)` sub-problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TruncationMap {
    pub p: usize,
    pub q: usize,
    pub j: usize,
    pub m: usize,
}

impl TruncationMap {
    pub fn restrict(&self, x: &FullParameter) -> FullParameter {
        FullParameter {
            theta: x.theta.rows(0, self.j).into_owned(),
            z: x.z.rows(0, self.m).into_owned(),
            a: x.a.view((0, 0), (self.m, self.j)).into_owned(),
        }
    }

    /// Zero-pads a reduced parameter back to full dimensions.
    pub fn embed(&self, x: &FullParameter) -> FullParameter {
        let mut theta = DVector::zeros(self.p);
        theta.rows_mut(0, self.j).copy_from(&x.theta);
        let mut z = DVector::zeros(self.q);
        z.rows_mut(0, self.m).copy_from(&x.z);
        let mut a = DMatrix::zeros(self.q, self.p);
        a.view_mut((0, 0), (self.m, self.j)).copy_from(&x.a);
        FullParameter { theta, z, a }
    }

    pub fn embed_theta(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.p);
        out.rows_mut(0, self.j).copy_from(theta);
        out
    }
}

pub fn reduce_truncation(obs: &Observation, j: usize, m: usize) -> Result<(Observation, TruncationMap)> {
    let (p, q) = obs.dims();
    if j == 0 || j > p || m == 0 || m > q {
        return Err(EioError::Invalid(format!(
            "truncation (J,M)=({j},{m}) outside 1..={p} x 1..={q}"
        )));
    }
    let reduced = Observation::new(
        obs.z_obs.rows(0, m).into_owned(),
        obs.a_hat.view((0, 0), (m, j)).into_owned(),
        obs.mu2,
    )?;
    Ok((reduced, TruncationMap { p, q, j, m }))
}

/// `J_g = max{j : N_j ≥ κ²g²}` (1-based count), 0 when no eigenvalue qualifies.
pub fn ridge_cutoff_index(eigs: &[f64], kappa: f64, g2: f64) -> Result<usize> {
    if eigs.windows(2).any(|w| w[1] > w[0]) {
        return Err(EioError::Invalid("eigenvalues must be sorted descending".into()));
    }
    if eigs.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(EioError::Invalid("eigenvalues must be finite and nonnegative".into()));
    }
    if g2 < 0.0 || !g2.is_finite() {
        return Err(EioError::Invalid("g2 must be finite and nonnegative".into()));
    }
    if g2 == 0.0 {
        return Ok(eigs.iter().filter(|v| **v > 0.0).count());
    }
    let level = kappa * kappa * g2;
    Ok(eigs.iter().take_while(|v| **v >= level).count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(theta: &[f64], a: &[f64], q: usize) -> FullParameter {
        let p = theta.len();
        FullParameter {
            theta: DVector::from_column_slice(theta),
            z: DVector::zeros(q),
            a: DMatrix::from_row_slice(q, p, a),
        }
    }

    #[test]
    fn values() {
        let x = param(&[1.0, 2.0], &[0.0; 2], 1);
        assert_eq!(penalty_value(&PenaltyConfig::none(), &x).unwrap(), 0.0);
        assert_eq!(penalty_value(&PenaltyConfig::ridge(4.0), &x).unwrap(), 10.0);
        let pen = PenaltyConfig {
            signal: SignalPenalty::None,
            operator: OperatorPenalty::RowScalar { k2: vec![1.0, 0.0] },
        };
        assert_eq!(penalty_value(&pen, &param(&[0.0], &[2.0, 3.0], 2)).unwrap(), 2.0);
    }

    #[test]
    fn truncated_nonzero_is_infeasible() {
        let pen = PenaltyConfig::truncation(1, 1);
        let x = param(&[1.0, 2.0], &[0.0; 2], 1);
        assert!(matches!(penalty_value(&pen, &x), Err(EioError::Infeasible(_))));
    }

    #[test]
    fn cutoff_examples() {
        let eigs = [100.0, 25.0, 4.0, 1.0];
        assert_eq!(ridge_cutoff_index(&eigs, 2.0, 1.0).unwrap(), 3);
        assert_eq!(ridge_cutoff_index(&[3.0, 1.0, 0.0], 2.0, 0.0).unwrap(), 2);
        assert_eq!(ridge_cutoff_index(&eigs, 2.0, 1e6).unwrap(), 0);
        assert!(ridge_cutoff_index(&[1.0, 2.0], 2.0, 1.0).is_err());
    }

    #[test]
    fn roughness_expands() {
        let w = SignalPenalty::Roughness { w2: 2.0, beta: 1.0 }.weights(3);
        assert_eq!(w, vec![2.0, 8.0, 18.0]);
    }

    #[test]
    fn reduction_blocks() {
        let obs = Observation::new(
            DVector::from_fn(4, |i, _| i as f64),
            DMatrix::from_fn(4, 3, |i, j| (10 * i + j) as f64),
            1.0,
        )
        .unwrap();
        let (r, map) = reduce_truncation(&obs, 2, 2).unwrap();
        assert_eq!(r.a_hat, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 10.0, 11.0]));
        assert_eq!(r.z_obs.as_slice(), &[0.0, 1.0]);
        let (same, _) = reduce_truncation(&obs, 3, 4).unwrap();
        assert_eq!(same.a_hat, obs.a_hat);
        let back = map.embed(&map.restrict(&FullParameter::zeros(3, 4)));
        assert_eq!(back.dims(), (3, 4));
        assert!(reduce_truncation(&obs, 0, 1).is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let ok: PenaltyConfig =
            serde_json::from_str(r#"{"signal":{"kind":"ridge","g2":1.0}}"#).unwrap();
        assert_eq!(ok, PenaltyConfig::ridge(1.0));
        assert!(serde_json::from_str::<PenaltyConfig>(r#"{"signal":{"kind":"ridge","g2":1.0,"x":1}}"#).is_err());
        assert!(serde_json::from_str::<PenaltyConfig>(r#"{"sig":{"kind":"none"}}"#).is_err());
    }
}
