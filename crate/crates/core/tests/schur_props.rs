use eio_core::linalg::min_eig;
use eio_core::schur::{BlockSym2, BlockSym3, ThreeBlockMode, Which};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// `MMᵀ + 0.1 I` for a random square `M`: symmetric with `λ_min ≥ 0.1`.
fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
        let m = DMatrix::from_vec(n, n, v);
        &m * m.transpose() + DMatrix::identity(n, n) * 0.1
    })
}

fn split() -> impl Strategy<Value = (DMatrix<f64>, usize)> {
    (1usize..4, 1usize..4).prop_flat_map(|(na, nb)| (spd(na + nb), Just(na)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn block_inverse_equals_dense_inverse((m, na) in split()) {
        let b = BlockSym2::from_full(&m, na).unwrap();
        let inv = b.block_invert().unwrap().to_full();
        let dense = m.clone().try_inverse().unwrap();
        let scale = dense.amax().max(1.0);
        prop_assert!((&inv - &dense).amax() <= 1e-8 * scale);
    }

    #[test]
    fn woodbury_identities_hold((m, na) in split()) {
        let report = BlockSym2::from_full(&m, na).unwrap().verify_identities(1e-8).unwrap();
        prop_assert!(report.pass, "{report:?}");
    }

    #[test]
    fn schur_complement_is_dominated_by_its_block((m, na) in split()) {
        let b = BlockSym2::from_full(&m, na).unwrap();
        let phi = b.schur_complement(Which::First).unwrap();
        // 0 ≺ Φ ⪯ F_aa.
        prop_assert!(min_eig(&phi) > 0.0);
        prop_assert!(min_eig(&(&b.f_aa - &phi)) >= -1e-10 * m.amax());
        // Φ⁻¹ is the leading block of the inverse.
        let dense = m.clone().try_inverse().unwrap();
        let lead = dense.view((0, 0), (na, na)).into_owned();
        let phi_inv = phi.try_inverse().unwrap();
        prop_assert!((&lead - &phi_inv).amax() <= 1e-8 * lead.amax().max(1.0));
    }

    #[test]
    fn sandwich_bounds_are_certified((m, na) in split()) {
        let report = BlockSym2::from_full(&m, na).unwrap().sandwich_bounds().unwrap();
        prop_assert!(report.rho < 1.0 + 1e-12);
        prop_assert!(report.pass, "{report:?}");
    }

    #[test]
    fn three_block_certificate_is_a_lower_bound(m in spd(6)) {
        let blk = |r: usize, c: usize| m.view((2 * r, 2 * c), (2, 2)).into_owned();
        let b3 = BlockSym3::new(blk(0, 0), blk(1, 1), blk(2, 2), blk(0, 1), blk(0, 2), blk(1, 2)).unwrap();
        prop_assert!((b3.to_full() - &m).amax() <= 1e-12 * m.amax());
        let cert = b3.lower_bound(&ThreeBlockMode::Correlation).unwrap();
        if cert.certified {
            prop_assert!(cert.margin.unwrap() >= -1e-10);
        }
        let eye = DMatrix::<f64>::identity(2, 2);
        let scaled = b3
            .lower_bound(&ThreeBlockMode::Scaled { d: [eye.clone(), eye.clone(), eye], kappa: 1.0 })
            .unwrap();
        if scaled.certified {
            prop_assert!(scaled.margin.unwrap() >= -1e-10);
        }
    }
}
