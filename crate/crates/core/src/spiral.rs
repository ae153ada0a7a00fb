//! Planar spirals `κ(t) = t·e^{iφ(t)}` and their phase functions.
//!
//! Spirals wind clockwise: the phase decreases in `t` and blows up, together
//! with its derivative, as `t → 0+`. Counterclockwise spirals are the
//! reflection `x2 ↦ -x2` of a clockwise one and are not modeled separately.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quadrature::{integrate_scaled, Estimate, QuadratureConfig};

/// Relative tolerance of the bisection fallback for the inverse phase.
pub const PSI_REL_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x1: f64,
    pub x2: f64,
}

impl PlanarPoint {
    pub const fn new(x1: f64, x2: f64) -> Self {
        PlanarPoint { x1, x2 }
    }

    pub fn norm(&self) -> f64 {
        self.x1.hypot(self.x2)
    }

    pub fn dist(&self, o: &PlanarPoint) -> f64 {
        (self.x1 - o.x1).hypot(self.x2 - o.x2)
    }

    pub fn angle(&self) -> f64 {
        self.x2.atan2(self.x1)
    }
}

/// Phase data as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PhaseSpec {
    /// `φ(t) = t^(-a)`, `0 < a < 1`.
    Power { a: f64, t_max: f64 },
    /// `φ(t) = (-ln t)^q`, `q > 1`.
    LogPower { q: f64, t_max: f64 },
    /// `φ(t) = M ln(-ln t)`.
    ScaledDoubleLog { m: f64, t_max: f64 },
    /// Tabulated `(t, φ, φ')` samples, interpolated piecewise-cubically.
    Custom { t: Vec<f64>, phi: Vec<f64>, dphi: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
enum Family {
    Power { a: f64 },
    LogPower { q: f64 },
    ScaledDoubleLog { m: f64 },
    Tabulated(TabulatedPhase),
}

/// Cubic Hermite interpolant of tabulated phase samples. Slopes are limited
/// (Fritsch-Carlson) so that monotone data gives a monotone phase.
#[derive(Debug, Clone, PartialEq)]
struct TabulatedPhase {
    t: Vec<f64>,
    phi: Vec<f64>,
    slope: Vec<f64>,
}

impl TabulatedPhase {
    fn new(t: Vec<f64>, phi: Vec<f64>, dphi: Vec<f64>) -> Result<Self> {
        if t.len() < 2 || t.len() != phi.len() || t.len() != dphi.len() {
            return Err(Error::InvalidPhase(
                "tabulated phase needs at least two samples and equal column lengths".into(),
            ));
        }
        if t[0] <= 0.0 || t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidPhase(
                "tabulated times must be positive and strictly increasing".into(),
            ));
        }
        if t.iter().chain(&phi).chain(&dphi).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPhase("non-finite tabulated value".into()));
        }
        let mut slope = dphi;
        for j in 0..t.len() - 1 {
            let h = t[j + 1] - t[j];
            let delta = (phi[j + 1] - phi[j]) / h;
            if delta == 0.0 {
                slope[j] = 0.0;
                slope[j + 1] = 0.0;
                continue;
            }
            let a = slope[j] / delta;
            let b = slope[j + 1] / delta;
            if a < 0.0 {
                slope[j] = 0.0;
            }
            if b < 0.0 {
                slope[j + 1] = 0.0;
            }
            let (a, b) = (a.max(0.0), b.max(0.0));
            let r = a * a + b * b;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                slope[j] = tau * a * delta;
                slope[j + 1] = tau * b * delta;
            }
        }
        Ok(TabulatedPhase { t, phi, slope })
    }

    fn segment(&self, t: f64) -> usize {
        match self.t.partition_point(|&x| x <= t) {
            0 => 0,
            p => (p - 1).min(self.t.len() - 2),
        }
    }

    fn eval(&self, t: f64) -> (f64, f64) {
        let j = self.segment(t);
        let h = self.t[j + 1] - self.t[j];
        let s = (t - self.t[j]) / h;
        let (p0, p1, m0, m1) = (self.phi[j], self.phi[j + 1], self.slope[j] * h, self.slope[j + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        let value =
            (2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * p1 + (s3 - s2) * m1;
        let deriv = ((6.0 * s2 - 6.0 * s) * p0
            + (3.0 * s2 - 4.0 * s + 1.0) * m0
            + (-6.0 * s2 + 6.0 * s) * p1
            + (3.0 * s2 - 2.0 * s) * m1)
            / h;
        (value, deriv)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    family: Family,
    t_min: f64,
    t_max: f64,
}

/// Numerical look at the spiral asymptotics on a geometric sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub strictly_decreasing: bool,
    pub phase_grows_towards_center: bool,
    pub slope_grows_towards_center: bool,
    /// Closed-form families are known spirals; tabulated ones are not.
    pub verified: bool,
}

impl AsymptoticsReport {
    pub fn holds(&self) -> bool {
        self.strictly_decreasing && self.phase_grows_towards_center && self.slope_grows_towards_center
    }
}

impl Phase {
    pub fn power(a: f64, t_max: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::InvalidPhase(format!("power exponent a = {a} outside (0, 1)")));
        }
        if !(t_max > 0.0 && t_max <= 1.0) {
            return Err(Error::InvalidPhase(format!("t_max = {t_max} outside (0, 1]")));
        }
        Ok(Phase {
            family: Family::Power { a },
            t_min: 0.0,
            t_max,
        })
    }

    pub fn log_power(q: f64, t_max: f64) -> Result<Self> {
        if !(q > 1.0) || !q.is_finite() {
            return Err(Error::InvalidPhase(format!("log-power exponent q = {q} must exceed 1")));
        }
        if !(t_max > 0.0 && t_max < 1.0) {
            return Err(Error::InvalidPhase(format!("t_max = {t_max} outside (0, 1)")));
        }
        Ok(Phase {
            family: Family::LogPower { q },
            t_min: 0.0,
            t_max,
        })
    }

    pub fn scaled_double_log(m: f64, t_max: f64) -> Result<Self> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::InvalidPhase(format!("scale M = {m} must be positive")));
        }
        if !(t_max > 0.0 && t_max < 1.0) {
            return Err(Error::InvalidPhase(format!("t_max = {t_max} outside (0, 1)")));
        }
        Ok(Phase {
            family: Family::ScaledDoubleLog { m },
            t_min: 0.0,
            t_max,
        })
    }

    /// Tabulated phase. Its asymptotics cannot be checked from finitely many
    /// samples, so [`AsymptoticsReport::verified`] is always false for it.
    pub fn tabulated(t: Vec<f64>, phi: Vec<f64>, dphi: Vec<f64>) -> Result<Self> {
        let table = TabulatedPhase::new(t, phi, dphi)?;
        Ok(Phase {
            t_min: table.t[0],
            t_max: *table.t.last().unwrap(),
            family: Family::Tabulated(table),
        })
    }

    pub fn from_spec(spec: &PhaseSpec) -> Result<Self> {
        match spec {
            PhaseSpec::Power { a, t_max } => Self::power(*a, *t_max),
            PhaseSpec::LogPower { q, t_max } => Self::log_power(*q, *t_max),
            PhaseSpec::ScaledDoubleLog { m, t_max } => Self::scaled_double_log(*m, *t_max),
            PhaseSpec::Custom { t, phi, dphi } => Self::tabulated(t.clone(), phi.clone(), dphi.clone()),
        }
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Lower end of the tabulated range, `0` for closed-form families.
    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn is_tabulated(&self) -> bool {
        matches!(self.family, Family::Tabulated(_))
    }

    /// `φ(t)`, without domain checks.
    pub fn value(&self, t: f64) -> f64 {
        match &self.family {
            Family::Power { a } => t.powf(-a),
            Family::LogPower { q } => (-t.ln()).powf(*q),
            Family::ScaledDoubleLog { m } => m * (-t.ln()).ln(),
            Family::Tabulated(tab) => tab.eval(t).0,
        }
    }

    /// `φ'(t)`, without domain checks.
    pub fn derivative(&self, t: f64) -> f64 {
        match &self.family {
            Family::Power { a } => -a * t.powf(-a - 1.0),
            Family::LogPower { q } => -q * (-t.ln()).powf(q - 1.0) / t,
            Family::ScaledDoubleLog { m } => m / (t * t.ln()),
            Family::Tabulated(tab) => tab.eval(t).1,
        }
    }

    /// Smallest admissible angle `φ(t_max)`.
    pub fn min_angle(&self) -> f64 {
        self.value(self.t_max)
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(t > self.t_min && t <= self.t_max) && !(t == self.t_min && self.t_min > 0.0) {
            return Err(domain("t", t, format!("({}, {}]", self.t_min, self.t_max)));
        }
        if t < f64::MIN_POSITIVE {
            return Err(domain("t", t, "t must be a normal positive float"));
        }
        Ok(())
    }

    /// Inverse phase `ψ(θ)`.
    pub fn inverse(&self, theta: f64) -> Result<f64> {
        let floor = self.min_angle();
        if !theta.is_finite() || theta < floor - 1e-12 * floor.abs().max(1.0) {
            return Err(domain("theta", theta, format!("theta >= phi(t_max) = {floor}")));
        }
        let t = match &self.family {
            Family::Power { a } => theta.powf(-1.0 / a),
            Family::LogPower { q } => (-theta.powf(1.0 / q)).exp(),
            Family::ScaledDoubleLog { m } => (-(theta / m).exp()).exp(),
            Family::Tabulated(_) => invert_decreasing(|t| self.value(t), theta, self.t_min, self.t_max, PSI_REL_TOL)?,
        };
        let t = t.min(self.t_max);
        if !(t >= f64::MIN_POSITIVE) {
            return Err(domain("theta", theta, "psi(theta) underflows double precision"));
        }
        Ok(t)
    }

    /// Samples `t_j = t_max * ratio^j` towards the center and checks that
    /// `φ` decreases and grows towards `0`, and that `|φ'|` grows on the
    /// inner half of the samples.
    pub fn check_asymptotics(&self, samples: usize) -> AsymptoticsReport {
        let lo = if self.t_min > 0.0 { self.t_min } else { 1e-100 };
        let ratio = (lo / self.t_max).powf(1.0 / samples.max(2) as f64);
        let ts: Vec<f64> = (0..=samples.max(2))
            .map(|j| self.t_max * ratio.powi(j as i32))
            .collect();
        let mut strictly_decreasing = true;
        let mut phase_grows = true;
        let mut slope_grows = true;
        let inner_start = ts.len() / 2;
        for (j, w) in ts.windows(2).enumerate() {
            let (t_hi, t_lo) = (w[0], w[1]);
            if !(self.derivative(t_hi) < 0.0) {
                strictly_decreasing = false;
            }
            if !(self.value(t_lo) > self.value(t_hi)) {
                phase_grows = false;
            }
            if j >= inner_start && !(self.derivative(t_lo).abs() > self.derivative(t_hi).abs()) {
                slope_grows = false;
            }
        }
        AsymptoticsReport {
            strictly_decreasing,
            phase_grows_towards_center: phase_grows,
            slope_grows_towards_center: slope_grows,
            verified: !self.is_tabulated(),
        }
    }
}

/// Solves `f(t) = target` for a decreasing `f` on `(lo, hi]`: scans `t`
/// geometrically down from `hi` for a bracket, then bisects to relative
/// tolerance `rel_tol`.
pub fn invert_decreasing<F: Fn(f64) -> f64>(f: F, target: f64, lo: f64, hi: f64, rel_tol: f64) -> Result<f64> {
    let f_hi = f(hi);
    if f_hi >= target {
        return Ok(hi);
    }
    let floor = if lo > 0.0 { lo } else { f64::MIN_POSITIVE };
    let mut upper = hi;
    let mut lower = hi;
    loop {
        let next = (lower * 0.5).max(floor);
        if f(next) >= target {
            lower = next;
            break;
        }
        if next <= floor {
            return Err(domain("theta", target, "no bracket for the inverse phase"));
        }
        upper = next;
        lower = next;
    }
    // f(lower) >= target > f(upper)
    for _ in 0..400 {
        let mid = 0.5 * (lower + upper);
        if (upper - lower) <= rel_tol * lower || mid <= lower || mid >= upper {
            break;
        }
        if f(mid) >= target {
            lower = mid;
        } else {
            upper = mid;
        }
    }
    Ok(0.5 * (lower + upper))
}

/// Sup-distance of the blow-up `κ(λ_n t)/λ_n` to the ray `t·v` on a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupSample {
    pub n: u32,
    pub lambda: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spiral {
    phase: Phase,
}

impl Spiral {
    pub fn new(phase: Phase) -> Self {
        Spiral { phase }
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn t_max(&self) -> f64 {
        self.phase.t_max
    }

    /// `κ(t)` without domain checks.
    pub fn point(&self, t: f64) -> PlanarPoint {
        let (s, c) = self.phase.value(t).sin_cos();
        PlanarPoint::new(t * c, t * s)
    }

    /// `κ'(t)` without domain checks.
    pub fn velocity(&self, t: f64) -> PlanarPoint {
        let (s, c) = self.phase.value(t).sin_cos();
        let w = t * self.phase.derivative(t);
        PlanarPoint::new(c - w * s, s + w * c)
    }

    /// `|κ'(t)| = sqrt(1 + t²φ'²)`.
    pub fn speed(&self, t: f64) -> f64 {
        (t * self.phase.derivative(t)).hypot(1.0)
    }

    pub fn kappa(&self, t: f64) -> Result<PlanarPoint> {
        self.phase.check_time(t)?;
        Ok(self.point(t))
    }

    pub fn kappa_dot(&self, t: f64) -> Result<PlanarPoint> {
        self.phase.check_time(t)?;
        Ok(self.velocity(t))
    }

    pub fn psi(&self, theta: f64) -> Result<f64> {
        self.phase.inverse(theta)
    }

    /// `t_k = ψ(2πk)`, where the spiral crosses the positive `x1` axis.
    pub fn t_k(&self, k: u32) -> Result<f64> {
        self.psi(2.0 * PI * k as f64)
    }

    /// `t_{kη} = ψ(2πk + η)`.
    pub fn t_k_eta(&self, k: u32, eta: f64) -> Result<f64> {
        self.psi(2.0 * PI * k as f64 + eta)
    }

    /// Smallest `h >= 1` with `2πh` inside the range of the phase.
    pub fn h_min(&self) -> u32 {
        let h = (self.phase.min_angle() / (2.0 * PI)).ceil();
        h.max(1.0) as u32
    }

    /// `∫_a^b sqrt(1 + t²φ'²) dt`.
    pub fn arc_length(&self, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<Estimate> {
        if !(a <= b) {
            return Err(Error::Precondition(format!("arc length window [{a}, {b}] is reversed")));
        }
        self.phase.check_time(a)?;
        self.phase.check_time(b)?;
        let e = integrate_scaled(|t| self.speed(t), a, b, cfg);
        if !e.converged {
            return Err(Error::Quadrature {
                achieved: e.error,
                target: cfg.abs_tol.max(cfg.rel_tol * e.value.abs()),
            });
        }
        Ok(e)
    }

    /// For each `n`, `λ_n = ψ(2πn + arg v)` and the sup over `samples`
    /// points of `[a, b]` of `|κ(λ_n t)/λ_n - t v|`.
    pub fn blowup_check(
        &self,
        v: PlanarPoint,
        ns: &[u32],
        window: (f64, f64),
        samples: usize,
    ) -> Result<Vec<BlowupSample>> {
        let (a, b) = window;
        if !(a > 0.0 && a <= b) {
            return Err(Error::Precondition(format!(
                "blow-up window [{a}, {b}] must satisfy 0 < a <= b"
            )));
        }
        if (v.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Precondition("blow-up direction must be a unit vector".into()));
        }
        let arg = v.angle().rem_euclid(2.0 * PI);
        let samples = samples.max(2);
        ns.iter()
            .map(|&n| {
                let lambda = self.psi(2.0 * PI * n as f64 + arg)?;
                self.phase.check_time(lambda * a)?;
                self.phase.check_time(lambda * b)?;
                let mut distance: f64 = 0.0;
                for j in 0..samples {
                    let t = a + (b - a) * j as f64 / (samples - 1) as f64;
                    let p = self.point(lambda * t);
                    let d = PlanarPoint::new(p.x1 / lambda - t * v.x1, p.x2 / lambda - t * v.x2).norm();
                    distance = distance.max(d);
                }
                Ok(BlowupSample { n, lambda, distance })
            })
            .collect()
    }

    /// `sup |tφ'(t)|` over a geometric sample of the domain; finite exactly
    /// when the spiral is Lipschitz.
    pub fn lipschitz_sup(&self, samples: usize) -> f64 {
        let lo = if self.phase.t_min > 0.0 {
            self.phase.t_min
        } else {
            1e-300
        };
        let ratio = (lo / self.t_max()).powf(1.0 / samples.max(2) as f64);
        (0..=samples.max(2))
            .map(|j| {
                let t = self.t_max() * ratio.powi(j as i32);
                (t * self.phase.derivative(t)).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power_half() -> Spiral {
        Spiral::new(Phase::power(0.5, 1.0).unwrap())
    }

    #[test]
    fn modulus_equals_time() {
        let s = power_half();
        for &t in &[1e-6, 1e-3, 0.25, 0.7, 1.0] {
            let p = s.kappa(t).unwrap();
            assert!((p.norm() - t).abs() <= 1e-15 * t);
        }
    }

    #[test]
    fn power_phase_point() {
        let s = power_half();
        let p = s.kappa(0.25).unwrap();
        assert_eq!(s.phase().value(0.25), 2.0);
        assert!((p.x1 - 0.25 * 2f64.cos()).abs() < 1e-16);
        assert!((p.x2 - 0.25 * 2f64.sin()).abs() < 1e-16);
    }

    #[test]
    fn velocity_matches_central_difference() {
        let s = power_half();
        let t = 0.3;
        let h = 1e-6;
        let fd = (s.point(t + h).x2 - s.point(t - h).x2) / (2.0 * h);
        let v = s.kappa_dot(t).unwrap().x2;
        assert!((fd - v).abs() <= 1e-6 * v.abs());
    }

    #[test]
    fn closed_form_inverses() {
        let s = power_half();
        assert!((s.psi(4.0).unwrap() - 1.0 / 16.0).abs() < 1e-16);
        let d = Spiral::new(Phase::scaled_double_log(50.0, 0.5).unwrap());
        let expect = (-(2.0 * PI / 50.0).exp()).exp();
        assert!((d.psi(2.0 * PI).unwrap() - expect).abs() < 1e-16);
        assert!(s.psi(0.5).is_err());
    }

    #[test]
    fn distinguished_times() {
        let s = power_half();
        let t1 = s.t_k(1).unwrap();
        assert!((t1 - (2.0 * PI).powi(-2)).abs() < 1e-17);
        assert!((t1 - 0.025330).abs() < 1e-5);
        let mut prev = f64::INFINITY;
        for k in 1..=50 {
            let tk = s.t_k(k).unwrap();
            assert!(tk < prev);
            assert!(s.point(tk).x2.abs() <= 1e-13 * tk);
            let tke = s.t_k_eta(k, 0.5).unwrap();
            assert!(s.t_k(k + 1).unwrap() < tke && tke < tk);
            prev = tk;
        }
    }

    #[test]
    fn invert_decreasing_matches_closed_form() {
        for phase in [
            Phase::power(0.5, 1.0).unwrap(),
            Phase::log_power(2.0, 0.5).unwrap(),
            Phase::scaled_double_log(50.0, 0.5).unwrap(),
        ] {
            for &theta in &[7.0, 20.0, 100.0] {
                let closed = phase.inverse(theta).unwrap();
                let bis = invert_decreasing(|t| phase.value(t), theta, 0.0, phase.t_max(), PSI_REL_TOL).unwrap();
                assert!((closed - bis).abs() <= 4e-14 * closed, "{closed} vs {bis}");
            }
        }
    }

    #[test]
    fn constant_ray_length_is_chord() {
        let ray = Spiral::new(Phase::tabulated(vec![1e-9, 1.0], vec![0.4, 0.4], vec![0.0, 0.0]).unwrap());
        let cfg = QuadratureConfig::default();
        let l = ray.arc_length(0.2, 0.9, &cfg).unwrap().value;
        assert!((l - 0.7).abs() < 1e-14);
        let report = ray.phase().check_asymptotics(50);
        assert!(!report.verified);
        assert!(!report.holds());
    }

    #[test]
    fn closed_form_families_have_spiral_asymptotics() {
        for phase in [
            Phase::power(0.5, 1.0).unwrap(),
            Phase::log_power(2.0, 0.5).unwrap(),
            Phase::scaled_double_log(50.0, 0.5).unwrap(),
        ] {
            let r = phase.check_asymptotics(200);
            assert!(r.holds() && r.verified, "{r:?}");
        }
    }

    #[test]
    fn tabulated_phase_interpolates_exactly_on_cubic_data() {
        // φ = 1/t on a table; Hermite data is exact at the nodes
        let ts: Vec<f64> = (1..=200).map(|j| 0.005 * j as f64).collect();
        let phi: Vec<f64> = ts.iter().map(|t| 1.0 / t).collect();
        let dphi: Vec<f64> = ts.iter().map(|t| -1.0 / (t * t)).collect();
        let p = Phase::tabulated(ts, phi, dphi).unwrap();
        let t = 0.3123;
        assert!((p.value(t) - 1.0 / t).abs() < 1e-7);
        let theta = 50.0;
        let inv = p.inverse(theta).unwrap();
        assert!((p.value(inv) - theta).abs() <= 1e-12 * theta);
        assert!(p.check_time(0.001).is_err());
    }

    #[test]
    fn lipschitz_diagnostic() {
        let m = 50.0;
        let d = Spiral::new(Phase::scaled_double_log(m, 0.5).unwrap());
        // |tφ'| = M / |ln t| peaks at t_max
        let sup = d.lipschitz_sup(400);
        assert!((sup - m / 2f64.ln()).abs() < 1e-9 * sup);
        assert!(power_half().lipschitz_sup(400) > 1e100);
    }

    #[test]
    fn blowup_is_exact_at_unit_time_along_crossings() {
        let s = power_half();
        let v = PlanarPoint::new(1.0, 0.0);
        let out = s.blowup_check(v, &[3, 7], (1.0, 1.0), 2).unwrap();
        for b in out {
            assert!(b.distance < 1e-12, "{b:?}");
        }
    }
}
