use spiral_core::calculus::Calculus;
use spiral_core::model::{MonomialLayer, RemainderSpec, Term};
use spiral_core::solver::{self, DeviceParams, EndpointSystem, SolverConfig};
use spiral_core::surgery;
use spiral_core::{Error, Phase, QuadratureConfig, Spiral, StratifiedModel};

fn tight() -> QuadratureConfig {
    QuadratureConfig::new(1e-16, 1e-13, 60).unwrap()
}

fn log_power() -> Spiral {
    Spiral::new(Phase::log_power(2.0, 0.5).unwrap())
}

fn engel_with_remainder() -> StratifiedModel {
    StratifiedModel::engel().with_remainders(
        RemainderSpec::empty()
            .with_term(
                4,
                Term {
                    coeff: 0.5,
                    a1: 3,
                    a2: 0,
                },
            )
            .with_term(
                4,
                Term {
                    coeff: -0.2,
                    a1: 1,
                    a2: 2,
                },
            ),
    )
}

fn five_dim() -> StratifiedModel {
    StratifiedModel::new(
        vec![1, 1, 2, 3, 3],
        vec![
            MonomialLayer::new(3, 0, 0),
            MonomialLayer::new(4, 1, 0),
            MonomialLayer::new(5, 0, 1),
        ],
        RemainderSpec::empty(),
    )
    .unwrap()
}

#[test]
fn jacobian_matches_finite_differences() {
    let s = log_power();
    let calc = Calculus::new(&s, tight());
    let model = engel_with_remainder();
    let params = [DeviceParams { h: 4, eta: 0.5 }, DeviceParams { h: 1, eta: 0.4 }];
    let sys = EndpointSystem::new(calc, &model, 10, &params).unwrap();
    let t: Vec<f64> = params.iter().map(|p| s.t_k_eta(p.h, p.eta).unwrap()).collect();
    let eps = [0.2 * t[0], -0.3 * t[1]];
    let jac = sys.jacobian(&eps).unwrap();
    for j in 0..2 {
        let d = 1e-6 * t[j];
        let mut up = eps;
        let mut down = eps;
        up[j] += d;
        down[j] -= d;
        let (fu, fd) = (sys.assemble_f(&up).unwrap(), sys.assemble_f(&down).unwrap());
        for i in 0..2 {
            let fdq = (fu[i] - fd[i]) / (2.0 * d);
            let scale = jac[(i, j)].abs().max(1e-300);
            assert!(
                (fdq - jac[(i, j)]).abs() <= 1e-6 * scale,
                "d f_{i} / d eps_{j}: {fdq} vs {}",
                jac[(i, j)]
            );
        }
    }
}

#[test]
fn newton_converges_quadratically() {
    let s = log_power();
    let calc = Calculus::new(&s, tight());
    let model = engel_with_remainder();
    let cfg = SolverConfig::default();
    let sel = solver::select_device_params(&calc, &model, &cfg).unwrap();
    let sys = EndpointSystem::new(calc, &model, 8, &sel.params).unwrap();
    let rep = sys.newton_solve(1e-13, 30).unwrap();
    assert!(rep.converged, "{rep:?}");
    assert!(rep.relative_residual <= 1e-13);
    let tr = &rep.trajectory;
    assert!(tr.windows(2).all(|w| w[1] <= w[0]));
    // after the first step the residual roughly squares
    for w in tr.windows(2).skip(1).filter(|w| w[0] > 1e-12 * tr[0]) {
        assert!(w[1] <= 1e3 * w[0] * w[0] / tr[0] + 1e-14 * tr[0], "{tr:?}");
    }
    let set = sys.device_set(&rep.epsilon).unwrap();
    let err = surgery::endpoint_error_direct(&calc, &model, &set, None).unwrap();
    assert!(err.norm() <= 1e-9 * surgery::norm2(sys.rhs()));
}

#[test]
fn selection_meets_its_certificate() {
    for (spiral, model) in [
        (log_power(), StratifiedModel::engel()),
        (log_power(), engel_with_remainder()),
        (Spiral::new(Phase::power(0.5, 1.0).unwrap()), five_dim()),
    ] {
        let calc = Calculus::new(&spiral, tight());
        let sel = solver::select_device_params(&calc, &model, &SolverConfig::default()).unwrap();
        let inner = sel.params.last().unwrap();
        assert_eq!(inner.h, spiral.h_min());
        assert!(sel.params.windows(2).all(|w| w[0].h > w[1].h));
        assert_eq!(sel.epsilon0, 1.0 / (2.0 * model.vertical_dim() as f64));
        for level in &sel.levels {
            assert!(level.dominance_ratio <= sel.epsilon0, "{level:?}");
            assert!(level.det >= 0.5 * level.lead_term, "{level:?}");
        }
        assert!(sel.det != 0.0);
    }
}

#[test]
fn five_dimensional_system_solves() {
    let s = Spiral::new(Phase::power(0.5, 1.0).unwrap());
    let calc = Calculus::new(&s, tight());
    let model = five_dim();
    let sel = solver::select_device_params(&calc, &model, &SolverConfig::default()).unwrap();
    let k = sel.h3() + 4;
    let sys = EndpointSystem::new(calc, &model, k, &sel.params).unwrap();
    let rep = sys.newton_solve(1e-12, 50).unwrap();
    assert!(rep.converged, "{rep:?}");
    let set = sys.device_set(&rep.epsilon).unwrap();
    let err = surgery::endpoint_error_direct(&calc, &model, &set, None).unwrap();
    assert!(err.norm() <= 1e-9 * surgery::norm2(sys.rhs()), "{}", err.norm());
}

#[test]
fn selection_reports_an_exhausted_budget() {
    let s = log_power();
    let calc = Calculus::new(&s, tight());
    let cfg = SolverConfig {
        h_budget: 1,
        ..SolverConfig::default()
    };
    let err = solver::select_device_params(&calc, &StratifiedModel::engel(), &cfg).unwrap_err();
    assert!(matches!(err, Error::NotCertified(_)), "{err:?}");
}

#[test]
fn sweep_ratio_does_not_grow() {
    let s = log_power();
    let calc = Calculus::new(&s, tight());
    let model = StratifiedModel::engel();
    let cfg = SolverConfig::default();
    let sel = solver::select_device_params(&calc, &model, &cfg).unwrap();
    let ks: Vec<u32> = (sel.h3() + 2..sel.h3() + 12).collect();
    let sweep = solver::biba_sweep(&calc, &model, &sel.params, &ks, &cfg).unwrap();
    assert_eq!(sweep.samples.len(), ks.len());
    let head = sweep.samples[..3].iter().map(|s| s.ratio).fold(0.0, f64::max);
    assert!(sweep.max_ratio <= 1.05 * head);
    for smp in &sweep.samples {
        assert!(smp.spire_ratio <= sweep.max_spire_ratio);
    }
}

#[test]
fn biba_ratio_handles_zero_rhs() {
    assert_eq!(solver::biba_ratio(&[1.0], &[0.0]), 0.0);
    assert!((solver::biba_ratio(&[3.0, 4.0], &[1.0, -1.5]) - 2.0).abs() < 1e-15);
}
