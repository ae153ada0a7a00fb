use proptest::prelude::*;
use spiral_core::model::{HomogeneitySample, MonomialLayer, RemainderSpec, Term, Violation};
use spiral_core::{Error, StratifiedModel};

fn five_dim() -> StratifiedModel {
    StratifiedModel::new(
        vec![1, 1, 2, 3, 3],
        vec![
            MonomialLayer::new(3, 0, 0),
            MonomialLayer::new(4, 1, 0),
            MonomialLayer::new(5, 0, 1),
        ],
        RemainderSpec::empty()
            .with_term(
                4,
                Term {
                    coeff: 0.4,
                    a1: 0,
                    a2: 3,
                },
            )
            .with_term(
                5,
                Term {
                    coeff: -0.6,
                    a1: 2,
                    a2: 1,
                },
            ),
    )
    .expect("valid model")
}

fn violations(m: Result<StratifiedModel, Error>) -> Vec<Violation> {
    match m {
        Err(Error::InvalidModel(r)) => r.violations,
        other => panic!("expected an invalid model, got {other:?}"),
    }
}

#[test]
fn builtin_models_validate() {
    assert!(StratifiedModel::heisenberg().validate().is_ok());
    assert!(StratifiedModel::engel().validate().is_ok());
    assert!(five_dim().validate().is_ok());
    assert_eq!(five_dim().vertical_dim(), 3);
}

#[test]
fn repeated_exponent_pair_is_rejected() {
    let v = violations(StratifiedModel::new(
        vec![1, 1, 2, 3, 3],
        vec![
            MonomialLayer::new(3, 0, 0),
            MonomialLayer::new(4, 0, 1),
            MonomialLayer::new(5, 0, 1),
        ],
        RemainderSpec::empty(),
    ));
    assert!(v.iter().any(|x| matches!(
        x,
        Violation::DuplicatePair {
            first: 4,
            second: 5,
            alpha: 0,
            beta: 1
        }
    )));
}

#[test]
fn degree_mismatch_and_low_degree_remainder_are_rejected() {
    let v = violations(StratifiedModel::new(
        vec![1, 1, 2, 3],
        vec![MonomialLayer::new(3, 0, 0), MonomialLayer::new(4, 2, 0)],
        RemainderSpec::empty().with_term(
            3,
            Term {
                coeff: 1.0,
                a1: 1,
                a2: 0,
            },
        ),
    ));
    assert!(v
        .iter()
        .any(|x| matches!(x, Violation::DegreeMismatch { index: 4, .. })));
    assert!(v
        .iter()
        .any(|x| matches!(x, Violation::RemainderDegree { index: 3, .. })));
}

#[test]
fn weight_violations_are_listed() {
    let v = violations(StratifiedModel::new(
        vec![1, 2, 2],
        vec![MonomialLayer::new(3, 0, 0)],
        RemainderSpec::empty(),
    ));
    assert!(v
        .iter()
        .any(|x| matches!(x, Violation::HorizontalWeight { index: 2, .. })));
    let v = violations(StratifiedModel::new(vec![1, 1], vec![], RemainderSpec::empty()));
    assert!(v.iter().any(|x| matches!(x, Violation::DimensionTooSmall { n: 2 })));
}

#[test]
fn coefficient_adds_remainder() {
    let m = five_dim();
    let (x1, x2) = (0.3, -0.7);
    let expected = x1 * x2 - 0.6 * x1 * x1 * x2;
    assert!((m.coefficient(5, x1, x2).unwrap() - expected).abs() < 1e-15);
    assert!(m.coefficient(6, x1, x2).is_err());
}

#[test]
fn dimension_mismatch_is_an_error() {
    let m = StratifiedModel::engel();
    assert!(matches!(
        m.pseudo_norm(&[1.0, 2.0]),
        Err(Error::DimensionMismatch { expected: 4, got: 2 })
    ));
    assert!(m.dilate(-1.0, &[0.0; 4]).is_err());
}

proptest! {
    #[test]
    fn layers_are_homogeneous(lambda in 0.01f64..20.0, x1 in -3.0f64..3.0, x2 in -3.0f64..3.0) {
        let m = five_dim();
        let samples = [HomogeneitySample { lambda, x1, x2 }];
        for layer in m.layers() {
            prop_assert!(m.check_homogeneity(layer.index, &samples).unwrap() < 1e-13);
        }
    }

    #[test]
    fn pseudo_norm_scales_under_dilation(
        lambda in 0.01f64..20.0,
        x in proptest::collection::vec(-5.0f64..5.0, 5),
    ) {
        let m = five_dim();
        let lhs = m.pseudo_norm(&m.dilate(lambda, &x).unwrap()).unwrap();
        let rhs = lambda * m.pseudo_norm(&x).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
    }

    #[test]
    fn dilations_compose(
        a in 0.1f64..10.0,
        b in 0.1f64..10.0,
        x in proptest::collection::vec(-5.0f64..5.0, 4),
    ) {
        let m = StratifiedModel::engel();
        let two_steps = m.dilate(a, &m.dilate(b, &x).unwrap()).unwrap();
        let one_step = m.dilate(a * b, &x).unwrap();
        for (u, v) in two_steps.iter().zip(&one_step) {
            prop_assert!((u - v).abs() <= 1e-12 * v.abs().max(1e-300));
        }
    }

    #[test]
    fn shift_difference_matches_evaluation(
        c in -2.0f64..2.0,
        a1 in 0u32..5,
        a2 in 0u32..4,
        x1 in -1.0f64..1.0,
        x2 in -1.0f64..1.0,
        shift in -0.5f64..0.5,
    ) {
        let p = spiral_core::model::BivariatePolynomial::new(vec![Term { coeff: c, a1, a2 }]);
        let direct = p.eval(x1 + shift, x2) - p.eval(x1, x2);
        prop_assert!((p.shift_difference(x1, x2, shift) - direct).abs() <= 1e-13);
    }
}
