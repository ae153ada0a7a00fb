use spiral_core::calculus::Calculus;
use spiral_core::model::{RemainderSpec, Term};
use spiral_core::surgery::{self, DeviceSet, DeviceTriple, IntervalLabel, ModifiedPath, PieceKind};
use spiral_core::{Phase, QuadratureConfig, Spiral, StratifiedModel};

fn tight() -> QuadratureConfig {
    QuadratureConfig::new(1e-16, 1e-13, 60).unwrap()
}

fn log_power() -> Spiral {
    Spiral::new(Phase::log_power(2.0, 0.5).unwrap())
}

fn engel_with_remainder() -> StratifiedModel {
    StratifiedModel::engel().with_remainders(RemainderSpec::empty().with_term(
        4,
        Term {
            coeff: 0.5,
            a1: 3,
            a2: 0,
        },
    ))
}

fn engel_set(spiral: &Spiral, k: u32) -> DeviceSet {
    let t3 = spiral.t_k_eta(4, 0.5).unwrap();
    let t4 = spiral.t_k_eta(1, 0.3).unwrap();
    DeviceSet::new(
        k,
        vec![
            DeviceTriple::new(4, 0.5, 0.2 * t3),
            DeviceTriple::new(1, 0.3, -0.1 * t4),
        ],
    )
    .unwrap()
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|j| f(a + j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + f(b) + inner) * h / 3.0
}

#[test]
fn lift_is_invariant_under_reparametrization() {
    // γ3 over one turn, once in time and once with t = s², by Simpson
    let s = Spiral::new(Phase::power(0.5, 1.0).unwrap());
    let calc = Calculus::new(&s, tight());
    let model = StratifiedModel::heisenberg();
    let (a, b) = (s.t_k(4).unwrap(), s.t_k(3).unwrap());
    let lib = surgery::spiral_lift(&calc, &model, a, b).unwrap()[0].value;
    let oracle = simpson(
        |u| {
            let t = u * u;
            s.point(t).x1 * s.velocity(t).x2 * 2.0 * u
        },
        a.sqrt(),
        b.sqrt(),
        200_000,
    );
    assert!((lib - oracle).abs() <= 1e-8 * lib.abs(), "{lib} vs {oracle}");
}

#[test]
fn path_pieces_cover_the_window_in_order() {
    let s = log_power();
    let set = engel_set(&s, 9);
    let path = ModifiedPath::build(&s, &set).unwrap();
    let labels: Vec<IntervalLabel> = path.pieces().iter().map(|p| p.label).collect();
    assert_eq!(
        labels,
        vec![
            IntervalLabel::Inner,
            IntervalLabel::Cut,
            IntervalLabel::Approach(3),
            IntervalLabel::Device(3),
            IntervalLabel::Approach(4),
            IntervalLabel::Device(4),
            IntervalLabel::Outer,
        ]
    );
    assert!(path.pieces().windows(2).all(|w| w[0].t_hi == w[1].t_lo));
    let cut = &path.pieces()[1];
    assert_eq!(cut.kind, PieceKind::Chord);
    assert_eq!(cut.t_lo, s.t_k(10).unwrap());
    assert_eq!(cut.t_hi, s.t_k(9).unwrap());
    let mid = 0.5 * (cut.t_lo + cut.t_hi);
    assert_eq!(path.point(mid).x2, 0.0);
}

#[test]
fn device_jumps_have_length_epsilon() {
    let s = log_power();
    let calc = Calculus::new(&s, tight());
    let set = engel_set(&s, 9);
    let path = ModifiedPath::build(&s, &set).unwrap();
    let (a, b) = (s.t_k(10).unwrap(), set.final_time(&s).unwrap());
    let jumps: Vec<f64> = path
        .segments(&calc, a, b)
        .unwrap()
        .iter()
        .filter(|seg| {
            seg.jump
                && matches!(
                    path.pieces()[seg.piece].label,
                    IntervalLabel::Approach(_) | IntervalLabel::Device(_)
                )
        })
        .map(|seg| seg.length)
        .collect();
    assert_eq!(jumps.len(), 4);
    for (pair, d) in jumps.chunks(2).zip(&set.devices) {
        for j in pair {
            assert!((j - d.epsilon.abs()).abs() <= 1e-12 * d.epsilon.abs());
        }
    }
}

#[test]
fn endpoint_error_freezes_after_surgery() {
    let s = log_power();
    let calc = Calculus::new(&s, tight());
    let model = engel_with_remainder();
    let set = engel_set(&s, 9);
    let at_end = surgery::endpoint_error_direct(&calc, &model, &set, None).unwrap();
    let later = surgery::endpoint_error_direct_to(&calc, &model, &set, None, 0.45).unwrap();
    for (u, v) in at_end.values.iter().zip(&later.values) {
        assert!((u - v).abs() <= 1e-12 * u.abs(), "{u} vs {v}");
    }
    let deeper = surgery::endpoint_error_direct(&calc, &model, &set, Some(s.t_k(20).unwrap())).unwrap();
    for (u, v) in at_end.values.iter().zip(&deeper.values) {
        assert!((u - v).abs() <= 1e-12 * u.abs());
    }
}

#[test]
fn decomposition_adds_up() {
    let s = log_power();
    let calc = Calculus::new(&s, tight());
    let model = engel_with_remainder();
    let set = engel_set(&s, 12);
    let dec = surgery::endpoint_error_decomposed(&calc, &model, &set).unwrap();
    for i in 0..2 {
        let parts: f64 = dec.devices.iter().map(|d| d[i].delta + d[i].remainder).sum();
        assert!((dec.values[i] - (dec.cut[i] - parts)).abs() <= 1e-15 * dec.cut[i].abs().max(parts.abs()));
    }
    let direct = surgery::endpoint_error_direct(&calc, &model, &set, None).unwrap();
    for (d, c) in direct.values.iter().zip(&dec.values) {
        assert!((d - c).abs() <= 1e-8 * c.abs());
    }
}

#[test]
fn lengths_balance() {
    let s = log_power();
    let calc = Calculus::new(&s, tight());
    let set = engel_set(&s, 9);
    let (a, b) = (s.t_k(10).unwrap(), set.final_time(&s).unwrap());
    let original = s.arc_length(a, b, &tight()).unwrap().value;
    let modified = surgery::modified_length(&calc, &set).unwrap();
    let gain = surgery::length_gain(&calc, &set).unwrap();
    assert!((original - modified - gain).abs() <= 1e-12 * original);
    let book = surgery::length_gain_bookkeeping(&calc, &set).unwrap();
    assert!((book - gain).abs() <= 1e-10 * gain.abs());
}

#[test]
fn invalid_device_sets_are_rejected() {
    let s = log_power();
    let model = StratifiedModel::engel();
    assert!(DeviceSet::new(5, vec![DeviceTriple::new(1, 0.3, 0.0), DeviceTriple::new(2, 0.3, 0.0)]).is_err());
    assert!(DeviceSet::new(5, vec![DeviceTriple::new(5, 0.3, 0.0)]).is_err());
    assert!(DeviceSet::new(5, vec![DeviceTriple::new(2, 0.8, 0.0)]).is_err());
    assert!(DeviceSet::new(5, vec![DeviceTriple::new(2, 0.3, f64::NAN)]).is_err());
    let t = s.t_k_eta(2, 0.3).unwrap();
    let too_big = DeviceSet::new(5, vec![DeviceTriple::new(3, 0.3, 0.0), DeviceTriple::new(2, 0.3, t)]).unwrap();
    assert!(too_big.validate(&s).is_err());
    let one = DeviceSet::new(5, vec![DeviceTriple::new(2, 0.3, 0.0)]).unwrap();
    assert!(one.validate_for(&s, &model).is_err());
}

#[test]
fn samples_are_labelled_and_continuous_within_pieces() {
    let s = log_power();
    let set = engel_set(&s, 9);
    let path = ModifiedPath::build(&s, &set).unwrap();
    let (a, b) = (s.t_k(10).unwrap(), set.final_time(&s).unwrap());
    let pts = path.sample(a, b, 64).unwrap();
    assert!(pts.windows(2).all(|w| w[0].1 <= w[1].1));
    assert_eq!(pts.first().unwrap().0, IntervalLabel::Cut);
    assert_eq!(pts.last().unwrap().0, IntervalLabel::Device(4));
    for w in pts
        .windows(2)
        .filter(|w| w[0].0 == w[1].0 && w[0].0 != IntervalLabel::Cut)
    {
        // one angle step of 2π/64 moves at most about t·(2π/64)·(1 + 1/|tφ'|)
        assert!(w[0].2.dist(&w[1].2) <= 0.2 * w[1].1);
    }
}

#[test]
fn bound_ratios_are_finite() {
    let s = log_power();
    let calc = Calculus::new(&s, tight());
    let model = engel_with_remainder();
    for k in [6u32, 12, 24] {
        let r = surgery::cut_bound_check(&calc, &model, k).unwrap();
        assert!(r.iter().all(|x| x.is_finite() && *x >= 0.0));
    }
    let t = s.t_k_eta(3, 0.4).unwrap();
    let r = surgery::device_remainder_bound_check(&calc, &model, &DeviceTriple::new(3, 0.4, 0.1 * t)).unwrap();
    assert!(r.iter().all(|x| x.is_finite()));
    assert!(surgery::device_remainder_bound_check(&calc, &model, &DeviceTriple::new(3, 0.4, 2.0 * t)).is_err());
}
