//! Integrals of monomials along the spiral and the identities relating them.
//!
//! For an angle window `ω ≤ η` the time window is `[t_η, t_ω]` with
//! `t_θ = ψ(θ)`. Time-side integrals are split at the quarter turns of the
//! spiral so that every quadrature panel sees at most a quarter oscillation.

use std::f64::consts::FRAC_PI_2;
use std::f64::consts::{FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_scaled, Estimate, QuadratureConfig};
use crate::spiral::Spiral;

/// More quarter-turn breakpoints than this in one window is treated as a
/// misconfiguration rather than silently integrated.
const MAX_BREAKS: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleWindow {
    pub omega: f64,
    pub eta: f64,
}

impl AngleWindow {
    pub fn new(omega: f64, eta: f64) -> Result<Self> {
        if !(omega <= eta) || !omega.is_finite() || !eta.is_finite() {
            return Err(Error::Precondition(format!(
                "angle window [{omega}, {eta}] is not ordered"
            )));
        }
        Ok(AngleWindow { omega, eta })
    }

    /// `[2πk, 2π(k+1)]`, the full turn whose time window is `[t_{k+1}, t_k]`.
    pub fn full_turn(k: u32) -> Self {
        AngleWindow {
            omega: 2.0 * PI * k as f64,
            eta: 2.0 * PI * (k as f64 + 1.0),
        }
    }

    /// `[2πh, 2πh + η]`, the window of a correction device.
    pub fn device(h: u32, eta: f64) -> Self {
        let omega = 2.0 * PI * h as f64;
        AngleWindow {
            omega,
            eta: omega + eta,
        }
    }

    pub fn width(&self) -> f64 {
        self.eta - self.omega
    }
}

/// `cos^(α+1)(ω) sin^(β+1)(ω)`.
pub fn d_term(alpha: u32, beta: u32, omega: f64) -> f64 {
    let (s, c) = omega.sin_cos();
    c.powi(alpha as i32 + 1) * s.powi(beta as i32 + 1)
}

pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

fn converged(e: Estimate, cfg: &QuadratureConfig) -> Result<Estimate> {
    if e.converged {
        Ok(e)
    } else {
        Err(Error::Quadrature {
            achieved: e.error,
            target: cfg.abs_tol.max(cfg.rel_tol * e.value.abs()),
        })
    }
}

/// Both sides of the integration-by-parts identity for `I` and `J`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma5Check {
    /// `(α+β+2) I`
    pub lhs: f64,
    /// `t_ω^m D_ω - t_η^m D_η - (α+1) J`
    pub rhs: f64,
    pub residual: f64,
    /// Largest magnitude among the terms, used to scale the residual.
    pub scale: f64,
    /// Sum of the quadrature error estimates that enter the residual.
    pub error_budget: f64,
}

/// The `j`-value computed as an angle integral and as a time integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JValue {
    pub angle_side: f64,
    pub time_side: f64,
}

impl JValue {
    pub fn value(&self) -> f64 {
        self.angle_side
    }

    pub fn relative_gap(&self) -> f64 {
        let scale = self.angle_side.abs().max(self.time_side.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.angle_side - self.time_side).abs() / scale
        }
    }
}

/// Empirical sandwich constants `c ≤ |I| / j ≤ C` over a parameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichBounds {
    pub alpha: i32,
    pub beta: u32,
    pub lower: f64,
    pub upper: f64,
    pub samples: usize,
}

impl SandwichBounds {
    pub fn contains(&self, ratio: f64) -> bool {
        ratio >= self.lower && ratio <= self.upper
    }
}

/// Integral calculus along one spiral with fixed quadrature settings.
#[derive(Debug, Clone, Copy)]
pub struct Calculus<'a> {
    spiral: &'a Spiral,
    cfg: QuadratureConfig,
}

impl<'a> Calculus<'a> {
    pub fn new(spiral: &'a Spiral, cfg: QuadratureConfig) -> Self {
        Calculus { spiral, cfg }
    }

    pub fn spiral(&self) -> &'a Spiral {
        self.spiral
    }

    pub fn config(&self) -> &QuadratureConfig {
        &self.cfg
    }

    /// Times of the window `[ω, η]`, returned as `(t_η, t_ω)`.
    pub fn window_times(&self, w: &AngleWindow) -> Result<(f64, f64)> {
        Ok((self.spiral.psi(w.eta)?, self.spiral.psi(w.omega)?))
    }

    /// `[a, b]` together with the quarter-turn crossings in between.
    pub fn time_breaks(&self, a: f64, b: f64) -> Result<Vec<f64>> {
        if !(a <= b) {
            return Err(Error::Precondition(format!("time window [{a}, {b}] is reversed")));
        }
        let phase = self.spiral.phase();
        phase.check_time(a)?;
        phase.check_time(b)?;
        let theta_lo = phase.value(b);
        let theta_hi = phase.value(a);
        let first = (theta_lo / FRAC_PI_2).floor() as i64 + 1;
        let last = (theta_hi / FRAC_PI_2).ceil() as i64 - 1;
        let count = (last - first + 1).max(0) as usize;
        if count > MAX_BREAKS {
            return Err(Error::Precondition(format!(
                "time window [{a}, {b}] spans {count} quarter turns"
            )));
        }
        let mut breaks = Vec::with_capacity(count + 2);
        breaks.push(a);
        for j in (first..=last).rev() {
            let t = self.spiral.psi(j as f64 * FRAC_PI_2)?;
            if t > *breaks.last().unwrap() && t < b {
                breaks.push(t);
            }
        }
        if b > a {
            breaks.push(b);
        }
        Ok(breaks)
    }

    /// `∫_a^b f(t) dt` split at quarter turns, with convergence enforced.
    pub fn integrate_time<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<Estimate> {
        if a == b {
            return Ok(Estimate::zero());
        }
        let breaks = self.time_breaks(a, b)?;
        breaks
            .windows(2)
            .map(|w| converged(integrate_scaled(&f, w[0], w[1], &self.cfg), &self.cfg))
            .collect::<Result<Vec<_>>>()
            .map(|pieces| pieces.into_iter().sum())
    }

    /// `∫_ω^η g(θ) dθ` split at multiples of `π/2`.
    pub fn integrate_angle<F: Fn(f64) -> f64>(&self, g: F, w: &AngleWindow) -> Result<Estimate> {
        if w.width() == 0.0 {
            return Ok(Estimate::zero());
        }
        let mut breaks = vec![w.omega];
        let mut j = (w.omega / FRAC_PI_2).floor() + 1.0;
        while j * FRAC_PI_2 < w.eta {
            breaks.push(j * FRAC_PI_2);
            j += 1.0;
        }
        breaks.push(w.eta);
        let mut total = Estimate::zero();
        for p in breaks.windows(2) {
            total = total + converged(integrate_scaled(&g, p[0], p[1], &self.cfg), &self.cfg)?;
        }
        Ok(total)
    }

    /// `∫_{t_lo}^{t_hi} κ1^(α+1) κ2^β κ2' dt`, `α ≥ -1`.
    pub fn i_between(&self, alpha: i32, beta: u32, t_lo: f64, t_hi: f64) -> Result<Estimate> {
        if alpha < -1 {
            return Err(Error::Precondition(format!("alpha = {alpha} must be at least -1")));
        }
        let s = self.spiral;
        self.integrate_time(
            |t| {
                let p = s.point(t);
                let v = s.velocity(t);
                p.x1.powi(alpha + 1) * p.x2.powi(beta as i32) * v.x2
            },
            t_lo,
            t_hi,
        )
    }

    /// `I^{αβ}` over the time window of `w`.
    pub fn i_integral(&self, alpha: i32, beta: u32, w: &AngleWindow) -> Result<Estimate> {
        if w.width() == 0.0 {
            if alpha < -1 {
                return Err(Error::Precondition(format!("alpha = {alpha} must be at least -1")));
            }
            return Ok(Estimate::zero());
        }
        let (t_lo, t_hi) = self.window_times(w)?;
        self.i_between(alpha, beta, t_lo, t_hi)
    }

    /// `J^{αβ} = ∫_ω^η ψ(θ)^(α+β+2) cos^α θ sin^β θ dθ`, `α ≥ 0`.
    pub fn j_integral(&self, alpha: i32, beta: u32, w: &AngleWindow) -> Result<Estimate> {
        if alpha < 0 {
            return Err(Error::Precondition(format!("J needs alpha >= 0, got {alpha}")));
        }
        let floor = self.spiral.phase().min_angle();
        if w.omega < floor {
            return Err(crate::error::domain("omega", w.omega, format!("omega >= {floor}")));
        }
        let m = alpha + beta as i32 + 2;
        let phase = self.spiral.phase();
        self.integrate_angle(
            |theta| {
                // the closed-form inverse never fails inside the checked window
                let t = phase.inverse(theta).unwrap_or(0.0);
                let (s, c) = theta.sin_cos();
                t.powi(m) * c.powi(alpha) * s.powi(beta as i32)
            },
            w,
        )
    }

    /// The same `J` as a time integral `∫ t^m cos^α φ sin^β φ |φ'| dt`.
    pub fn j_integral_time_side(&self, alpha: i32, beta: u32, w: &AngleWindow) -> Result<Estimate> {
        if alpha < 0 {
            return Err(Error::Precondition(format!("J needs alpha >= 0, got {alpha}")));
        }
        let (t_lo, t_hi) = self.window_times(w)?;
        let m = alpha + beta as i32 + 2;
        let phase = self.spiral.phase();
        self.integrate_time(
            |t| {
                let (s, c) = phase.value(t).sin_cos();
                t.powi(m) * c.powi(alpha) * s.powi(beta as i32) * phase.derivative(t).abs()
            },
            t_lo,
            t_hi,
        )
    }

    pub fn lemma5(&self, alpha: u32, beta: u32, w: &AngleWindow) -> Result<Lemma5Check> {
        let m = alpha + beta + 2;
        let i = self.i_integral(alpha as i32, beta, w)?;
        let j = self.j_integral(alpha as i32, beta, w)?;
        let (t_eta, t_omega) = self.window_times(w)?;
        let upper = t_omega.powi(m as i32) * d_term(alpha, beta, w.omega);
        let lower = t_eta.powi(m as i32) * d_term(alpha, beta, w.eta);
        let a1 = (alpha + 1) as f64;
        let lhs = m as f64 * i.value;
        let rhs = upper - lower - a1 * j.value;
        let scale = [lhs.abs(), upper.abs(), lower.abs(), a1 * j.value.abs()]
            .into_iter()
            .fold(0.0, f64::max);
        Ok(Lemma5Check {
            lhs,
            rhs,
            residual: lhs - rhs,
            scale,
            error_budget: m as f64 * i.error + a1 * j.error,
        })
    }

    /// `(α+β+2) I - [boundary terms - (α+1) J]`.
    pub fn lemma5_residual(&self, alpha: u32, beta: u32, w: &AngleWindow) -> Result<f64> {
        Ok(self.lemma5(alpha, beta, w)?.residual)
    }

    fn check_device_angle(eta: f64) -> Result<()> {
        if !(eta > 0.0 && eta < FRAC_PI_4) {
            return Err(crate::error::domain("eta", eta, "(0, pi/4)"));
        }
        Ok(())
    }

    /// `η^β ∫_{2πh}^{2πh+η} ψ(θ)^(α+β+2) dθ` and its time-side form.
    pub fn j_value(&self, alpha: i32, beta: u32, h: u32, eta: f64) -> Result<JValue> {
        Self::check_device_angle(eta)?;
        if alpha < -1 {
            return Err(Error::Precondition(format!("alpha = {alpha} must be at least -1")));
        }
        let w = AngleWindow::device(h, eta);
        let m = alpha + beta as i32 + 2;
        let scale = eta.powi(beta as i32);
        let phase = self.spiral.phase();
        let angle = self.integrate_angle(|theta| phase.inverse(theta).unwrap_or(0.0).powi(m), &w)?;
        let (t_lo, t_hi) = self.window_times(&w)?;
        let time = self.integrate_time(|t| t.powi(m) * phase.derivative(t).abs(), t_lo, t_hi)?;
        Ok(JValue {
            angle_side: scale * angle.value,
            time_side: scale * time.value,
        })
    }

    /// `|I^{αβ}_{2πh, 2πh+η}| / j^{αβ}_{hη}`; zero when `j` vanishes.
    pub fn stingaling_ratio(&self, alpha: i32, beta: u32, h: u32, eta: f64) -> Result<f64> {
        let j = self.j_value(alpha, beta, h, eta)?.value();
        if j == 0.0 {
            return Ok(0.0);
        }
        let i = self.i_integral(alpha, beta, &AngleWindow::device(h, eta))?;
        Ok(i.value.abs() / j)
    }

    /// Minimum and maximum of the sandwich ratio over `hs × etas`.
    pub fn sandwich_bounds(&self, alpha: i32, beta: u32, hs: &[u32], etas: &[f64]) -> Result<SandwichBounds> {
        let mut lower = f64::INFINITY;
        let mut upper: f64 = 0.0;
        let mut samples = 0;
        for &h in hs {
            for &eta in etas {
                let r = self.stingaling_ratio(alpha, beta, h, eta)?;
                lower = lower.min(r);
                upper = upper.max(r);
                samples += 1;
            }
        }
        Ok(SandwichBounds {
            alpha,
            beta,
            lower,
            upper,
            samples,
        })
    }

    /// `I^{-1,β}` over a device window in closed form, using `κ2(t_h) = 0`.
    pub fn i_minus_one(&self, beta: u32, h: u32, eta: f64) -> Result<f64> {
        let t = self.spiral.t_k_eta(h, eta)?;
        Ok(-(t * eta.sin()).powi(beta as i32 + 1) / (beta + 1) as f64)
    }

    /// `I^{i-1,β}` over the device window for `i = 0..=α`. These are the
    /// building blocks of the translation increment and its derivative.
    pub fn device_moments(&self, alpha: u32, beta: u32, h: u32, eta: f64) -> Result<Vec<f64>> {
        let w = AngleWindow::device(h, eta);
        let mut out = Vec::with_capacity(alpha as usize + 1);
        out.push(self.i_minus_one(beta, h, eta)?);
        for i in 1..=alpha {
            out.push(self.i_integral(i as i32 - 1, beta, &w)?.value);
        }
        Ok(out)
    }

    fn check_shift(&self, h: u32, eta: f64, eps: f64) -> Result<()> {
        Self::check_device_angle(eta)?;
        let t = self.spiral.t_k_eta(h, eta)?;
        if !(eps.abs() < t) {
            return Err(Error::Precondition(format!(
                "|epsilon| = {} must be below t_(h,eta) = {t}",
                eps.abs()
            )));
        }
        Ok(())
    }

    /// Increment of `∫ κ1^(α+1) κ2^β κ2'` over the device window when the
    /// curve is translated by `(ε, 0)`, by binomial expansion.
    pub fn delta_monomial(&self, alpha: u32, beta: u32, h: u32, eta: f64, eps: f64) -> Result<f64> {
        self.check_shift(h, eta, eps)?;
        if eps == 0.0 {
            return Ok(0.0);
        }
        let moments = self.device_moments(alpha, beta, h, eta)?;
        Ok(delta_from_moments(alpha, &moments, eps))
    }

    /// The same increment by direct quadrature of the translated integrand.
    pub fn delta_direct(&self, alpha: u32, beta: u32, h: u32, eta: f64, eps: f64) -> Result<Estimate> {
        self.check_shift(h, eta, eps)?;
        let s = self.spiral;
        let (t_lo, t_hi) = self.window_times(&AngleWindow::device(h, eta))?;
        let a = alpha as i32 + 1;
        self.integrate_time(
            |t| {
                let p = s.point(t);
                let v = s.velocity(t);
                ((p.x1 + eps).powi(a) - p.x1.powi(a)) * p.x2.powi(beta as i32) * v.x2
            },
            t_lo,
            t_hi,
        )
    }

    /// `|Δ - (α+1) ε I^{α-1,β}| / ε²`.
    pub fn delta_second_order_ratio(&self, alpha: u32, beta: u32, h: u32, eta: f64, eps: f64) -> Result<f64> {
        self.check_shift(h, eta, eps)?;
        let moments = self.device_moments(alpha, beta, h, eta)?;
        let delta = delta_from_moments(alpha, &moments, eps);
        let linear = (alpha + 1) as f64 * eps * moments[alpha as usize];
        Ok((delta - linear).abs() / (eps * eps))
    }
}

/// `Σ_{i=0}^{α} C(α+1, i) ε^(α+1-i) m_i` with `m_i = I^{i-1,β}`.
pub fn delta_from_moments(alpha: u32, moments: &[f64], eps: f64) -> f64 {
    (0..=alpha)
        .map(|i| binomial(alpha + 1, i) * eps.powi((alpha + 1 - i) as i32) * moments[i as usize])
        .sum()
}

/// Derivative in `ε` of [`delta_from_moments`].
pub fn delta_derivative_from_moments(alpha: u32, moments: &[f64], eps: f64) -> f64 {
    (0..=alpha)
        .map(|i| {
            let p = alpha + 1 - i;
            binomial(alpha + 1, i) * p as f64 * eps.powi(p as i32 - 1) * moments[i as usize]
        })
        .sum()
}
