//! Two- and three-block symmetric matrices: Schur complements, block inversion
//! and positive-definiteness certificates.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{EioError, Result};
use crate::linalg::{
    block_diag, min_eig, op_norm, spd_inverse, sym_inv_sqrt, symmetrize,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    First,
    Second,
}

/// `[[f_aa, f_ab], [f_abᵀ, f_bb]]` with symmetric diagonal blocks.
#[derive(Debug, Clone)]
pub struct BlockSym2 {
    pub f_aa: DMatrix<f64>,
    pub f_ab: DMatrix<f64>,
    pub f_bb: DMatrix<f64>,
}

impl BlockSym2 {
    pub fn new(f_aa: DMatrix<f64>, f_ab: DMatrix<f64>, f_bb: DMatrix<f64>) -> Result<Self> {
        if f_ab.nrows() != f_aa.nrows() || f_ab.ncols() != f_bb.nrows() {
            return Err(EioError::Dimension(format!(
                "cross block {}x{} does not fit diagonal blocks {} and {}",
                f_ab.nrows(),
                f_ab.ncols(),
                f_aa.nrows(),
                f_bb.nrows()
            )));
        }
        Ok(Self {
            f_aa: symmetrize(&f_aa, "F_aa")?,
            f_ab,
            f_bb: symmetrize(&f_bb, "F_bb")?,
        })
    }

    /// Splits a full symmetric matrix after the first `na` coordinates.
    pub fn from_full(m: &DMatrix<f64>, na: usize) -> Result<Self> {
        let m = symmetrize(m, "F")?;
        let n = m.nrows();
        if na > n {
            return Err(EioError::Dimension(format!("split {na} exceeds size {n}")));
        }
        let nb = n - na;
        Self::new(
            m.view((0, 0), (na, na)).into_owned(),
            m.view((0, na), (na, nb)).into_owned(),
            m.view((na, na), (nb, nb)).into_owned(),
        )
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.f_aa.nrows(), self.f_bb.nrows())
    }

    pub fn to_full(&self) -> DMatrix<f64> {
        let (na, nb) = self.dims();
        let mut m = DMatrix::zeros(na + nb, na + nb);
        m.view_mut((0, 0), (na, na)).copy_from(&self.f_aa);
        m.view_mut((0, na), (na, nb)).copy_from(&self.f_ab);
        m.view_mut((na, 0), (nb, na)).copy_from(&self.f_ab.transpose());
        m.view_mut((na, na), (nb, nb)).copy_from(&self.f_bb);
        m
    }

    /// Block-diagonal part `F₀ = diag(F_aa, F_bb)`.
    pub fn diagonal_part(&self) -> DMatrix<f64> {
        block_diag(&[&self.f_aa, &self.f_bb])
    }

    pub fn schur_complement(&self, which: Which) -> Result<DMatrix<f64>> {
        let phi = match which {
            Which::First => {
                let inv = spd_inverse(&self.f_bb, "F_bb")?;
                &self.f_aa - &self.f_ab * inv * self.f_ab.transpose()
            }
            Which::Second => {
                let inv = spd_inverse(&self.f_aa, "F_aa")?;
                &self.f_bb - self.f_ab.transpose() * inv * &self.f_ab
            }
        };
        Ok((&phi + phi.transpose()) * 0.5)
    }

    /// Inverse through `[[I,0],[-F_bb⁻¹F_ba,I]] · diag(Φ_aa⁻¹, F_bb⁻¹) · [[I,-F_abF_bb⁻¹],[0,I]]`.
    pub fn block_invert(&self) -> Result<BlockSym2> {
        let bb_inv = spd_inverse(&self.f_bb, "F_bb")?;
        let phi = self.schur_complement(Which::First)?;
        let phi_inv = spd_inverse(&phi, "Phi_aa")?;
        let gain = &self.f_ab * &bb_inv; // F_ab F_bb⁻¹
        let inv_ab = -(&phi_inv * &gain);
        let inv_bb = &bb_inv + gain.transpose() * &phi_inv * &gain;
        Ok(BlockSym2 {
            f_aa: phi_inv,
            f_ab: inv_ab,
            f_bb: (&inv_bb + inv_bb.transpose()) * 0.5,
        })
    }

    pub fn verify_identities(&self, tol: f64) -> Result<SchurIdentityReport> {
        let aa_inv = spd_inverse(&self.f_aa, "F_aa")?;
        let bb_inv = spd_inverse(&self.f_bb, "F_bb")?;
        let phi_aa_inv = spd_inverse(&self.schur_complement(Which::First)?, "Phi_aa")?;
        let phi_bb_inv = spd_inverse(&self.schur_complement(Which::Second)?, "Phi_bb")?;
        let f_ba = self.f_ab.transpose();

        let rhs_aa = &aa_inv + &aa_inv * &self.f_ab * &phi_bb_inv * &f_ba * &aa_inv;
        let rhs_bb = &bb_inv + &bb_inv * &f_ba * &phi_aa_inv * &self.f_ab * &bb_inv;
        let cross_l = &phi_aa_inv * &self.f_ab * &bb_inv;
        let cross_r = &aa_inv * &self.f_ab * &phi_bb_inv;

        let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let s = a.abs().max().max(b.abs().max()).max(1.0);
            (a - b).abs().max() / s
        };
        let inverse_aa = rel(&phi_aa_inv, &rhs_aa);
        let inverse_bb = rel(&phi_bb_inv, &rhs_bb);
        let cross = rel(&cross_l, &cross_r);
        let max = inverse_aa.max(inverse_bb).max(cross);
        Ok(SchurIdentityReport {
            inverse_aa,
            inverse_bb,
            cross,
            max,
            pass: max <= tol,
        })
    }

    /// `ρ² = ‖F_aa^{-1/2} F_ab F_bb⁻¹ F_ba F_aa^{-1/2}‖` and the eigenvalue checks it implies.
    pub fn sandwich_bounds(&self) -> Result<SandwichReport> {
        let aa_is = sym_inv_sqrt(&self.f_aa, "F_aa")?;
        let bb_inv = spd_inverse(&self.f_bb, "F_bb")?;
        let inner = &aa_is * &self.f_ab * &bb_inv * self.f_ab.transpose() * &aa_is;
        let rho2 = op_norm(&inner);
        let rho = rho2.sqrt();

        let full = self.to_full();
        let f0 = self.diagonal_part();
        let phi = self.schur_complement(Which::First)?;
        let scale = full.abs().max().max(1.0);

        let full_lower = min_eig(&(&full - &f0 * (1.0 - rho))) / scale;
        let full_upper = min_eig(&(&f0 * (1.0 + rho) - &full)) / scale;
        let schur_lower = min_eig(&(&phi - &self.f_aa * (1.0 - rho2))) / scale;
        let schur_upper = min_eig(&(&self.f_aa - &phi)) / scale;

        let applicable = rho < 1.0;
        let tol = -1e-10;
        let pass = full_lower >= tol && full_upper >= tol && schur_lower >= tol && schur_upper >= tol;
        Ok(SandwichReport {
            rho,
            rho2,
            applicable,
            full_lower_margin: full_lower,
            full_upper_margin: full_upper,
            schur_lower_margin: schur_lower,
            schur_upper_margin: schur_upper,
            pass,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SchurIdentityReport {
    pub inverse_aa: f64,
    pub inverse_bb: f64,
    pub cross: f64,
    pub max: f64,
    pub pass: bool,
}

/// Margins are minimal eigenvalues of the differences, relative to `max|F|`.
#[derive(Debug, Clone, Serialize)]
pub struct SandwichReport {
    pub rho: f64,
    pub rho2: f64,
    pub applicable: bool,
    pub full_lower_margin: f64,
    pub full_upper_margin: f64,
    pub schur_lower_margin: f64,
    pub schur_upper_margin: f64,
    pub pass: bool,
}

/// Symmetric matrix with diagonal blocks `xx, yy, tt`.
#[derive(Debug, Clone)]
pub struct BlockSym3 {
    pub f_xx: DMatrix<f64>,
    pub f_yy: DMatrix<f64>,
    pub f_tt: DMatrix<f64>,
    pub f_xy: DMatrix<f64>,
    pub f_xt: DMatrix<f64>,
    pub f_yt: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub enum ThreeBlockMode {
    /// Normalize each coupling by the diagonal blocks themselves.
    Correlation,
    /// Normalize by reference blocks `d = [𝔻_x, 𝔻_y, 𝔻_t]` (square roots, not squares).
    Scaled { d: [DMatrix<f64>; 3], kappa: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct ThreeBlockCertificate {
    pub rho_xy: f64,
    pub rho_xt: f64,
    pub rho_yt: f64,
    /// `λ_min(𝔻⁻¹F𝔻⁻¹)` per diagonal block, scaled mode only.
    pub beta2: Option<[f64; 3]>,
    /// Diagonal multipliers `1 − ρ − ρ'` (correlation) or `(1 − ρ − ρ')β²` (scaled).
    pub coefficients: [f64; 3],
    pub applicable: bool,
    /// Minimal eigenvalue of `F` minus the certified lower bound, relative to `max|F|`.
    pub margin: Option<f64>,
    pub certified: bool,
}

impl BlockSym3 {
    pub fn new(
        f_xx: DMatrix<f64>,
        f_yy: DMatrix<f64>,
        f_tt: DMatrix<f64>,
        f_xy: DMatrix<f64>,
        f_xt: DMatrix<f64>,
        f_yt: DMatrix<f64>,
    ) -> Result<Self> {
        let (nx, ny, nt) = (f_xx.nrows(), f_yy.nrows(), f_tt.nrows());
        let fits = |m: &DMatrix<f64>, r, c| m.nrows() == r && m.ncols() == c;
        if !(fits(&f_xy, nx, ny) && fits(&f_xt, nx, nt) && fits(&f_yt, ny, nt)) {
            return Err(EioError::Dimension(
                "three-block coupling shapes do not match diagonal blocks".into(),
            ));
        }
        Ok(Self {
            f_xx: symmetrize(&f_xx, "F_xx")?,
            f_yy: symmetrize(&f_yy, "F_yy")?,
            f_tt: symmetrize(&f_tt, "F_tt")?,
            f_xy,
            f_xt,
            f_yt,
        })
    }

    pub fn to_full(&self) -> DMatrix<f64> {
        let (nx, ny, nt) = (self.f_xx.nrows(), self.f_yy.nrows(), self.f_tt.nrows());
        let mut m = block_diag(&[&self.f_xx, &self.f_yy, &self.f_tt]);
        m.view_mut((0, nx), (nx, ny)).copy_from(&self.f_xy);
        m.view_mut((nx, 0), (ny, nx)).copy_from(&self.f_xy.transpose());
        m.view_mut((0, nx + ny), (nx, nt)).copy_from(&self.f_xt);
        m.view_mut((nx + ny, 0), (nt, nx)).copy_from(&self.f_xt.transpose());
        m.view_mut((nx, nx + ny), (ny, nt)).copy_from(&self.f_yt);
        m.view_mut((nx + ny, nx), (nt, ny)).copy_from(&self.f_yt.transpose());
        m
    }

    pub fn lower_bound(&self, mode: &ThreeBlockMode) -> Result<ThreeBlockCertificate> {
        match mode {
            ThreeBlockMode::Correlation => self.correlation_bound(),
            ThreeBlockMode::Scaled { d, kappa } => self.scaled_bound(d, *kappa),
        }
    }

    fn correlation_bound(&self) -> Result<ThreeBlockCertificate> {
        let xs = sym_inv_sqrt(&self.f_xx, "F_xx")?;
        let ys = sym_inv_sqrt(&self.f_yy, "F_yy")?;
        let ts = sym_inv_sqrt(&self.f_tt, "F_tt")?;
        let rho_xy = op_norm(&(&xs * &self.f_xy * &ys));
        let rho_xt = op_norm(&(&xs * &self.f_xt * &ts));
        let rho_yt = op_norm(&(&ys * &self.f_yt * &ts));
        let coefficients = [1.0 - rho_xy - rho_xt, 1.0 - rho_xy - rho_yt, 1.0 - rho_xt - rho_yt];
        let applicable = (rho_xy + rho_xt).max(rho_xy + rho_yt).max(rho_xt + rho_yt) <= 1.0;
        let lower = block_diag(&[
            &(&self.f_xx * coefficients[0]),
            &(&self.f_yy * coefficients[1]),
            &(&self.f_tt * coefficients[2]),
        ]);
        Ok(self.certify(rho_xy, rho_xt, rho_yt, None, coefficients, applicable, &lower))
    }

    fn scaled_bound(&self, d: &[DMatrix<f64>; 3], kappa: f64) -> Result<ThreeBlockCertificate> {
        let dims = [self.f_xx.nrows(), self.f_yy.nrows(), self.f_tt.nrows()];
        for (k, blk) in d.iter().enumerate() {
            if blk.nrows() != dims[k] || blk.ncols() != dims[k] {
                return Err(EioError::Dimension(format!("reference block {k} has wrong shape")));
            }
        }
        let inv: Vec<DMatrix<f64>> = d
            .iter()
            .enumerate()
            .map(|(k, m)| spd_inverse(&symmetrize(m, "D")?, &format!("D block {k}")))
            .collect::<Result<_>>()?;
        let a_xy = op_norm(&(&inv[0] * &self.f_xy * &inv[1]));
        let a_xt = op_norm(&(&inv[0] * &self.f_xt * &inv[2]));
        let a_yt = op_norm(&(&inv[1] * &self.f_yt * &inv[2]));
        let b2 = [
            min_eig(&(&inv[0] * &self.f_xx * &inv[0])),
            min_eig(&(&inv[1] * &self.f_yy * &inv[1])),
            min_eig(&(&inv[2] * &self.f_tt * &inv[2])),
        ];
        if b2.iter().any(|&v| !(v > 0.0)) {
            return Err(EioError::singular("scaled diagonal block"));
        }
        let b = b2.map(f64::sqrt);
        let rho_xy = a_xy / (b[0] * b[1]);
        let rho_xt = a_xt / (b[0] * b[2]);
        let rho_yt = a_yt / (b[1] * b[2]);
        let coefficients = [
            b2[0] * (1.0 - rho_xy - rho_xt),
            b2[1] * (1.0 - rho_xy - rho_yt),
            b2[2] * (1.0 - rho_xt - rho_yt),
        ];
        let floor = kappa.powi(-2);
        let applicable = coefficients.iter().all(|&c| c >= floor);
        let d2: Vec<DMatrix<f64>> = d.iter().map(|m| m * m.transpose()).collect();
        let lower = block_diag(&[&d2[0], &d2[1], &d2[2]]) * floor;
        Ok(self.certify(rho_xy, rho_xt, rho_yt, Some(b2), coefficients, applicable, &lower))
    }

    #[allow(clippy::too_many_arguments)]
    fn certify(
        &self,
        rho_xy: f64,
        rho_xt: f64,
        rho_yt: f64,
        beta2: Option<[f64; 3]>,
        coefficients: [f64; 3],
        applicable: bool,
        lower: &DMatrix<f64>,
    ) -> ThreeBlockCertificate {
        let (margin, certified) = if applicable {
            let full = self.to_full();
            let scale = full.abs().max().max(1.0);
            let m = min_eig(&(&full - lower)) / scale;
            (Some(m), m >= -1e-10)
        } else {
            (None, false)
        };
        ThreeBlockCertificate {
            rho_xy,
            rho_xt,
            rho_yt,
            beta2,
            coefficients,
            applicable,
            margin,
            certified,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar2(a: f64, b: f64, c: f64) -> BlockSym2 {
        BlockSym2::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
        )
        .unwrap()
    }

    fn scalar3(d: f64, c: f64) -> BlockSym3 {
        let s = |v| DMatrix::from_element(1, 1, v);
        BlockSym3::new(s(d), s(d), s(d), s(c), s(c), s(c)).unwrap()
    }

    #[test]
    fn scalar_complement() {
        let f = scalar2(4.0, 1.0, 2.0);
        assert!((f.schur_complement(Which::First).unwrap()[(0, 0)] - 3.5).abs() < 1e-15);
        assert!((f.schur_complement(Which::Second).unwrap()[(0, 0)] - 1.75).abs() < 1e-15);
    }

    #[test]
    fn scalar_inverse() {
        let inv = scalar2(4.0, 1.0, 2.0).block_invert().unwrap().to_full();
        let want = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 4.0]) / 7.0;
        assert!((inv - want).abs().max() < 1e-15);
    }

    #[test]
    fn identity_inverse() {
        let f = BlockSym2::from_full(&DMatrix::identity(5, 5), 2).unwrap();
        assert!((f.block_invert().unwrap().to_full() - DMatrix::identity(5, 5)).abs().max() == 0.0);
    }

    #[test]
    fn scalar_identities_and_sandwich() {
        let f = scalar2(4.0, 1.0, 2.0);
        assert!(f.verify_identities(1e-14).unwrap().pass);
        let s = f.sandwich_bounds().unwrap();
        assert!((s.rho2 - 0.125).abs() < 1e-15);
        assert!(s.applicable && s.pass);
        assert!(s.schur_lower_margin.abs() < 1e-14);
    }

    #[test]
    fn singular_block_is_labelled() {
        let f = scalar2(1.0, 0.0, 0.0);
        match f.schur_complement(Which::First) {
            Err(EioError::Singular { block }) => assert_eq!(block, "F_bb"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decoupled_three_block_is_tight() {
        let c = scalar3(1.0, 0.0).lower_bound(&ThreeBlockMode::Correlation).unwrap();
        assert_eq!([c.rho_xy, c.rho_xt, c.rho_yt], [0.0; 3]);
        assert!(c.certified);
        assert!(c.margin.unwrap().abs() < 1e-14);
    }

    #[test]
    fn three_block_premise() {
        let c = scalar3(1.0, 0.2).lower_bound(&ThreeBlockMode::Correlation).unwrap();
        assert!(c.applicable && c.certified);
        assert!((c.coefficients[0] - 0.6).abs() < 1e-14);
        // eigenvalues of the 3x3 matrix with unit diagonal and 0.2 couplings are 1.4, 0.8, 0.8
        assert!((c.margin.unwrap() - 0.2).abs() < 1e-12);
        let c = scalar3(1.0, 0.6).lower_bound(&ThreeBlockMode::Correlation).unwrap();
        assert!(!c.applicable && !c.certified && c.margin.is_none());
    }
}
