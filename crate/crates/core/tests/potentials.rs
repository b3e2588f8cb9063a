//! Invariants of the polarization tensor over shapes, contrasts and poses.

use std::f64::consts::PI;

use incimg::model::InclusionShape;
use incimg::potentials::{discretize_shape, polarization_tensor, shape_tensor, DerivativeSide};
use nalgebra::{Matrix2, Rotation2};
use proptest::prelude::*;

fn tensor(shape: &InclusionShape, k: f64, n: usize) -> Matrix2<f64> {
    shape_tensor(shape, k, n, DerivativeSide::Inside).unwrap().matrix()
}

fn shapes() -> Vec<InclusionShape> {
    vec![
        InclusionShape::disk(1.0),
        InclusionShape::ellipse(1.0, 0.5),
        InclusionShape::star(1.0, 0.2, 5),
    ]
}

#[test]
fn disk_law_at_every_contrast() {
    for k in [0.1, 0.5, 2.0, 10.0] {
        let m = tensor(&InclusionShape::disk(1.0), k, 256);
        let want = Matrix2::identity() * (2.0 * PI / (k + 1.0));
        assert!((m - want).norm() <= 1e-3 * m.norm(), "k = {k}: {m}");
    }
}

fn refinement_errors(shape: &InclusionShape, k: f64, want: Matrix2<f64>) -> Vec<f64> {
    [16, 32, 64, 128].iter().map(|&n| (tensor(shape, k, n) - want).norm()).collect()
}

fn assert_spectral(errs: &[f64]) {
    for w in errs.windows(2) {
        assert!(w[1] <= w[0] / 10.0 || w[1] < 1e-12, "{errs:?}");
    }
}

#[test]
fn disk_error_drops_with_refinement_to_the_floor() {
    let errs = refinement_errors(&InclusionShape::disk(1.0), 3.0, Matrix2::identity() * (PI / 2.0));
    assert_spectral(&errs);
    assert!(errs[3] < 1e-12, "{errs:?}");
}

#[test]
fn star_converges_spectrally() {
    let star = InclusionShape::star(1.0, 0.2, 5);
    let reference = tensor(&star, 3.0, 1024);
    assert_spectral(&refinement_errors(&star, 3.0, reference));
}

#[test]
fn tensors_are_symmetric_positive_definite() {
    for shape in shapes() {
        for k in [0.1, 0.5, 2.0, 10.0] {
            let t = shape_tensor(&shape, k, 256, DerivativeSide::Inside).unwrap();
            assert!(t.symmetry_defect <= 1e-8, "{:?} k = {k}: {}", shape.kind, t.symmetry_defect);
            assert!(t.eigenvalues()[0] > 0.0, "{:?} k = {k}", shape.kind);
        }
    }
}

#[test]
fn conventions_differ_by_the_contrast_for_a_disk() {
    let b = discretize_shape(&InclusionShape::disk(1.0), 256).unwrap();
    let inside = polarization_tensor(&b, 4.0).unwrap().matrix();
    let outside = shape_tensor(&InclusionShape::disk(1.0), 4.0, 256, DerivativeSide::Outside)
        .unwrap()
        .matrix();
    assert!((outside - inside * 4.0).norm() <= 1e-8 * outside.norm());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rotation_covariance(angle in 0.0f64..(2.0 * PI), k in 0.1f64..10.0, which in 0usize..3) {
        let shape = shapes().swap_remove(which);
        let base = tensor(&shape, k, 256);
        let turned = tensor(&shape.rotated(angle), k, 256);
        let r = Rotation2::new(angle).into_inner();
        let want = r * base * r.transpose();
        prop_assert!((turned - want).norm() <= 1e-6 * want.norm(), "{} vs {}", turned, want);
    }

    #[test]
    fn area_scaling(rho in 0.2f64..5.0, k in 0.1f64..10.0, which in 0usize..3) {
        let shape = shapes().swap_remove(which);
        let base = tensor(&shape, k, 256);
        let big = tensor(&shape.scaled(rho), k, 256);
        prop_assert!((big - base * (rho * rho)).norm() <= 1e-6 * big.norm());
    }

    #[test]
    fn ellipse_stays_positive(a in 0.3f64..3.0, b in 0.3f64..3.0, k in 0.05f64..20.0) {
        let t = shape_tensor(&InclusionShape::ellipse(a, b), k, 256, DerivativeSide::Inside).unwrap();
        prop_assert!(t.symmetry_defect <= 1e-8);
        prop_assert!(t.eigenvalues()[0] > 0.0);
    }
}
