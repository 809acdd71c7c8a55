//! Information matrix `𝔽 = −∇²L` over `(θ, z, A)` stored by blocks.
//!
//! The nuisance part `η = (z, A)` decouples into `q` independent systems, one
//! per image coordinate `m`, over `(z_m, A_m)`. Every solve eliminates those
//! `(1+p)`-dimensional systems first and finishes with the `θ` Schur complement.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::error::{EioError, Result};
use crate::linalg::{select, spd_factor, sym_fn};
use crate::model::FullParameter;
use crate::penalty::PenaltyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPoint {
    PopulationFit,
    Truth,
    Current,
}

#[derive(Debug, Clone)]
pub struct InfoMatrix {
    pub p: usize,
    pub q: usize,
    /// `AᵀA`, without penalty.
    pub theta_theta: DMatrix<f64>,
    /// Diagonal of `F_zz`.
    pub z_diag: DVector<f64>,
    /// `F_θz = −Aᵀ` (p×q).
    pub theta_z: DMatrix<f64>,
    /// `F_{A_m A_m} = θθᵀ + μ²I`, without penalty.
    pub a_rows: Vec<DMatrix<f64>>,
    /// `F_{θ A_m}` (p×p).
    pub theta_a: Vec<DMatrix<f64>>,
    /// The only nonzero row of `F_{z A_m}`, which sits at row `m`.
    pub z_a: Vec<DVector<f64>>,
    /// Diagonal of `G²`.
    pub g2: DVector<f64>,
    /// Diagonals of `K_m²`.
    pub k2: Vec<DVector<f64>>,
    pub theta_active: Vec<bool>,
    pub row_active: Vec<bool>,
    pub penalized: bool,
    pub evaluated_at: EvalPoint,
}

/// Per-row elimination data over the free nuisance coordinates of row `m`.
struct RowElim {
    chol: Cholesky<f64, Dyn>,
    /// Coupling of all `θ` coordinates to the free nuisance coordinates.
    b: DMatrix<f64>,
}

/// `𝔽(υ)` at `x` plus the penalty `block{G², 0, K²}`.
pub fn hessian_blocks(x: &FullParameter, mu2: f64, pen: &PenaltyConfig) -> Result<InfoMatrix> {
    let (p, q) = x.dims();
    pen.validate(p, q)?;
    let resid = &x.z - &x.a * &x.theta;
    let tt = x.theta.clone() * x.theta.transpose();
    let a_rows = (0..q)
        .map(|_| &tt + DMatrix::identity(p, p) * mu2)
        .collect();
    let theta_a = (0..q)
        .map(|m| {
            let am = x.a.row(m).transpose();
            DMatrix::identity(p, p) * (-resid[m]) + &am * x.theta.transpose()
        })
        .collect();
    let z_a = (0..q).map(|_| -x.theta.clone()).collect();
    let penalized = !pen.signal.is_zero()
        || !matches!(pen.operator, crate::penalty::OperatorPenalty::None)
        || pen.theta_active(p).iter().any(|v| !v);
    Ok(InfoMatrix {
        p,
        q,
        theta_theta: x.a.transpose() * &x.a,
        z_diag: DVector::from_element(q, 2.0),
        theta_z: -x.a.transpose(),
        a_rows,
        theta_a,
        z_a,
        g2: pen.g2(p),
        k2: (0..q).map(|m| pen.operator.row_weights(m, p)).collect(),
        theta_active: pen.theta_active(p),
        row_active: pen.row_active(q),
        penalized,
        evaluated_at: EvalPoint::Current,
    })
}

impl InfoMatrix {
    pub fn at(mut self, point: EvalPoint) -> Self {
        self.evaluated_at = point;
        self
    }

    pub fn full_dim(&self) -> usize {
        self.p + self.q + self.p * self.q
    }

    pub fn active_theta(&self) -> Vec<usize> {
        (0..self.p).filter(|&j| self.theta_active[j]).collect()
    }

    /// Flattened indices of all unmasked coordinates.
    pub fn active_indices(&self) -> Vec<usize> {
        let (p, q) = (self.p, self.q);
        let mut idx = self.active_theta();
        idx.extend(p..p + q);
        for m in (0..q).filter(|&m| self.row_active[m]) {
            idx.extend(p + q + m * p..p + q + (m + 1) * p);
        }
        idx
    }

    /// `F_θθ + G²`.
    pub fn theta_theta_g(&self) -> DMatrix<f64> {
        &self.theta_theta + DMatrix::from_diagonal(&self.g2)
    }

    /// `F_{A_m A_m} + K_m²`.
    pub fn a_row_g(&self, m: usize) -> DMatrix<f64> {
        &self.a_rows[m] + DMatrix::from_diagonal(&self.k2[m])
    }

    /// Dense `𝔽_G` over all flattened coordinates (masked ones carry no penalty).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let (p, q) = (self.p, self.q);
        let n = self.full_dim();
        let mut f = DMatrix::zeros(n, n);
        f.view_mut((0, 0), (p, p)).copy_from(&self.theta_theta_g());
        f.view_mut((0, p), (p, q)).copy_from(&self.theta_z);
        f.view_mut((p, 0), (q, p)).copy_from(&self.theta_z.transpose());
        for m in 0..q {
            f[(p + m, p + m)] = self.z_diag[m];
            let off = p + q + m * p;
            f.view_mut((off, off), (p, p)).copy_from(&self.a_row_g(m));
            f.view_mut((0, off), (p, p)).copy_from(&self.theta_a[m]);
            f.view_mut((off, 0), (p, p)).copy_from(&self.theta_a[m].transpose());
            for j in 0..p {
                f[(p + m, off + j)] = self.z_a[m][j];
                f[(off + j, p + m)] = self.z_a[m][j];
            }
        }
        f
    }

    /// `𝔽_G u` over all coordinates.
    pub fn matvec(&self, u: &FullParameter) -> FullParameter {
        let (p, q) = (self.p, self.q);
        let mut theta = self.theta_theta_g() * &u.theta + &self.theta_z * &u.z;
        let mut z = self.theta_z.transpose() * &u.theta + self.z_diag.component_mul(&u.z);
        let mut a = DMatrix::zeros(q, p);
        for m in 0..q {
            let am = u.a.row(m).transpose();
            theta += &self.theta_a[m] * &am;
            z[m] += self.z_a[m].dot(&am);
            let row = self.theta_a[m].transpose() * &u.theta + &self.z_a[m] * u.z[m] + self.a_row_g(m) * &am;
            a.set_row(m, &row.transpose());
        }
        FullParameter { theta, z, a }
    }

    pub fn quad_form(&self, u: &FullParameter) -> f64 {
        u.dot(&self.matvec(u))
    }

    fn eliminate_rows(&self) -> Result<Vec<RowElim>> {
        let p = self.p;
        (0..self.q)
            .map(|m| {
                let free = if self.row_active[m] { 1 + p } else { 1 };
                let mut e = DMatrix::zeros(free, free);
                e[(0, 0)] = self.z_diag[m];
                let mut b = DMatrix::zeros(p, free);
                b.set_column(0, &self.theta_z.column(m));
                if self.row_active[m] {
                    e.view_mut((1, 1), (p, p)).copy_from(&self.a_row_g(m));
                    for j in 0..p {
                        e[(0, 1 + j)] = self.z_a[m][j];
                        e[(1 + j, 0)] = self.z_a[m][j];
                    }
                    b.view_mut((0, 1), (p, p)).copy_from(&self.theta_a[m]);
                }
                let chol = spd_factor(&e, &format!("nuisance row {}", m + 1))?;
                Ok(RowElim { chol, b })
            })
            .collect()
    }

    fn row_rhs(&self, m: usize, z: f64, a: &DMatrix<f64>) -> DVector<f64> {
        if self.row_active[m] {
            let mut r = DVector::zeros(1 + self.p);
            r[0] = z;
            r.rows_mut(1, self.p).copy_from(&a.row(m).transpose());
            r
        } else {
            DVector::from_element(1, z)
        }
    }

    /// `Φ = F_θθ + G² − F_θη F_{G,ηη}⁻¹ F_ηθ` on the given `θ` indices.
    pub fn schur_theta_on(&self, idx: &[usize], with_g2: bool) -> Result<DMatrix<f64>> {
        let rows = self.eliminate_rows()?;
        let base = if with_g2 { self.theta_theta_g() } else { self.theta_theta.clone() };
        let mut phi = select(&base, idx, idx);
        for r in &rows {
            let bt = DMatrix::from_fn(idx.len(), r.b.ncols(), |i, k| r.b[(idx[i], k)]);
            let solved = r.chol.solve(&bt.transpose());
            phi -= &bt * solved;
        }
        Ok((&phi + phi.transpose()) * 0.5)
    }

    /// Solves `𝔽_G x = rhs` with masked coordinates held at the values in `pinned`.
    pub fn solve_pinned(&self, rhs: &FullParameter, pinned: &FullParameter) -> Result<FullParameter> {
        let (p, q) = (self.p, self.q);
        let act: Vec<usize> = self.active_theta();
        let inact: Vec<usize> = (0..p).filter(|&j| !self.theta_active[j]).collect();
        let x_inact = DVector::from_iterator(inact.len(), inact.iter().map(|&j| pinned.theta[j]));

        let ttg = self.theta_theta_g();
        let mut r_theta = DVector::from_iterator(act.len(), act.iter().map(|&j| rhs.theta[j]));
        if !inact.is_empty() {
            r_theta -= select(&ttg, &act, &inact) * &x_inact;
        }
        let rows = self.eliminate_rows()?;
        let mut r_rows = Vec::with_capacity(q);
        for m in 0..q {
            let mut rz = rhs.z[m];
            for (k, &j) in inact.iter().enumerate() {
                rz -= self.theta_z[(j, m)] * x_inact[k];
            }
            let mut r = self.row_rhs(m, rz, &rhs.a);
            if self.row_active[m] {
                if !inact.is_empty() {
                    let cross = select(&self.theta_a[m].transpose(), &(0..p).collect::<Vec<_>>(), &inact);
                    let adj = cross * &x_inact;
                    let mut tail = r.rows_mut(1, p);
                    tail -= adj;
                }
            } else {
                let am = pinned.a.row(m).transpose();
                r[0] -= self.z_a[m].dot(&am);
                let adj = &self.theta_a[m] * &am;
                for (i, &j) in act.iter().enumerate() {
                    r_theta[i] -= adj[j];
                }
            }
            r_rows.push(r);
        }

        let mut phi = select(&ttg, &act, &act);
        let mut r_tilde = r_theta;
        let mut b_act = Vec::with_capacity(q);
        for (m, row) in rows.iter().enumerate() {
            let bt = DMatrix::from_fn(act.len(), row.b.ncols(), |i, k| row.b[(act[i], k)]);
            phi -= &bt * row.chol.solve(&bt.transpose());
            r_tilde -= &bt * row.chol.solve(&r_rows[m]);
            b_act.push(bt);
        }
        let phi = (&phi + phi.transpose()) * 0.5;
        let x_act = spd_factor(&phi, "semiparametric block")?.solve(&r_tilde);

        let mut out = pinned.clone();
        for (i, &j) in act.iter().enumerate() {
            out.theta[j] = x_act[i];
        }
        for (m, row) in rows.iter().enumerate() {
            let y = row.chol.solve(&(&r_rows[m] - b_act[m].transpose() * &x_act));
            out.z[m] = y[0];
            if self.row_active[m] {
                for j in 0..p {
                    out.a[(m, j)] = y[1 + j];
                }
            }
        }
        Ok(out)
    }

    /// Solves `𝔽_G x = rhs` with masked coordinates fixed at zero.
    pub fn solve(&self, rhs: &FullParameter) -> Result<FullParameter> {
        self.solve_pinned(rhs, &FullParameter::zeros(self.p, self.q))
    }

    /// `𝔽_{G,ηη}⁻¹ r` for a nuisance right-hand side; `θ` parts are ignored.
    pub fn solve_nuisance(&self, rhs: &FullParameter) -> Result<FullParameter> {
        let rows = self.eliminate_rows()?;
        let mut out = FullParameter::zeros(self.p, self.q);
        for (m, row) in rows.iter().enumerate() {
            let y = row.chol.solve(&self.row_rhs(m, rhs.z[m], &rhs.a));
            out.z[m] = y[0];
            if self.row_active[m] {
                for j in 0..self.p {
                    out.a[(m, j)] = y[1 + j];
                }
            }
        }
        Ok(out)
    }

    /// `Φ_{G,θθ}` over the active signal coordinates.
    pub fn semiparametric_block(&self) -> Result<ThetaBlock> {
        let indices = self.active_theta();
        let matrix = self.schur_theta_on(&indices, true)?;
        Ok(ThetaBlock {
            p: self.p,
            indices,
            matrix,
        })
    }
}

/// A symmetric matrix acting on a subset of the signal coordinates.
#[derive(Debug, Clone)]
pub struct ThetaBlock {
    pub p: usize,
    pub indices: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

impl ThetaBlock {
    pub fn restrict(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.indices.len(), self.indices.iter().map(|&j| v[j]))
    }

    pub fn embed(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.p);
        for (i, &j) in self.indices.iter().enumerate() {
            out[j] = v[i];
        }
        out
    }

    /// Pseudo-inverse action: solve on the active coordinates, zero elsewhere.
    pub fn solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let x = spd_factor(&self.matrix, "semiparametric block")?.solve(&self.restrict(v));
        Ok(self.embed(&x))
    }

    pub fn sqrt_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let s = sym_fn(&self.matrix, |x| x.max(0.0).sqrt());
        self.embed(&(s * self.restrict(v)))
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.p, self.p);
        for (a, &i) in self.indices.iter().enumerate() {
            for (b, &j) in self.indices.iter().enumerate() {
                out[(i, j)] = self.matrix[(a, b)];
            }
        }
        out
    }
}

pub fn dim_check(info: &InfoMatrix, x: &FullParameter) -> Result<()> {
    if x.dims() != (info.p, info.q) {
        return Err(EioError::Dimension("vector does not match information matrix".into()));
    }
    Ok(())
}
