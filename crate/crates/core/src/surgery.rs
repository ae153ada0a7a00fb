//! Cutting one spire of the spiral and compensating with translation devices.
//!
//! The spire over `F_k = [t_{k+1}, t_k]` is replaced by the chord on the
//! positive `x1` axis. Device `j` translates the arc over
//! `B_j = [t_{h_j η_j}, t_{h_j}]` by `(ε_j, 0)`; the two horizontal segments
//! joining the translated arc to the spiral contribute nothing to the lift
//! and `2|ε_j|` to the length.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::calculus::{AngleWindow, Calculus};
use crate::error::{Error, Result};
use crate::model::{BivariatePolynomial, StratifiedModel};
use crate::quadrature::Estimate;
use crate::spiral::{PlanarPoint, Spiral};

use std::f64::consts::FRAC_PI_4;

/// A translation device: shift by `(epsilon, 0)` over the angle window
/// `[2πh, 2πh + eta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceTriple {
    pub h: u32,
    pub eta: f64,
    pub epsilon: f64,
}

impl DeviceTriple {
    pub fn new(h: u32, eta: f64, epsilon: f64) -> Self {
        DeviceTriple { h, eta, epsilon }
    }

    pub fn window(&self) -> AngleWindow {
        AngleWindow::device(self.h, self.eta)
    }

    /// `(t_{hη}, t_h)`.
    pub fn times(&self, spiral: &Spiral) -> Result<(f64, f64)> {
        Ok((spiral.t_k_eta(self.h, self.eta)?, spiral.t_k(self.h)?))
    }
}

/// Cut index `k` and devices `E_3, ..., E_n` with `h_n < ... < h_3 < k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSet {
    pub k: u32,
    pub devices: Vec<DeviceTriple>,
}

impl DeviceSet {
    pub fn new(k: u32, devices: Vec<DeviceTriple>) -> Result<Self> {
        let set = DeviceSet { k, devices };
        set.check_order()?;
        Ok(set)
    }

    fn check_order(&self) -> Result<()> {
        let mut upper = self.k;
        for (pos, d) in self.devices.iter().enumerate() {
            if d.h >= upper || d.h == 0 {
                return Err(Error::InvalidDevices(format!(
                    "device {} has h = {} but must satisfy 0 < h < {upper}",
                    pos + 3,
                    d.h
                )));
            }
            if !(d.eta > 0.0 && d.eta < FRAC_PI_4) {
                return Err(Error::InvalidDevices(format!(
                    "device {} has eta = {} outside (0, pi/4)",
                    pos + 3,
                    d.eta
                )));
            }
            if !d.epsilon.is_finite() {
                return Err(Error::InvalidDevices(format!(
                    "device {} has non-finite epsilon",
                    pos + 3
                )));
            }
            upper = d.h;
        }
        Ok(())
    }

    /// Checks ordering, the angle range and `|ε_j| < t_{h_j η_j}`.
    pub fn validate(&self, spiral: &Spiral) -> Result<()> {
        self.check_order()?;
        spiral.t_k(self.k + 1)?;
        for (pos, d) in self.devices.iter().enumerate() {
            let (t_eta, _) = d.times(spiral)?;
            if !(d.epsilon.abs() < t_eta) {
                return Err(Error::InvalidDevices(format!(
                    "device {} has |epsilon| = {} not below t_(h,eta) = {t_eta}",
                    pos + 3,
                    d.epsilon.abs()
                )));
            }
        }
        Ok(())
    }

    pub fn validate_for(&self, spiral: &Spiral, model: &StratifiedModel) -> Result<()> {
        if self.devices.len() != model.vertical_dim() {
            return Err(Error::InvalidDevices(format!(
                "{} devices for {} vertical coordinates",
                self.devices.len(),
                model.vertical_dim()
            )));
        }
        self.validate(spiral)
    }

    pub fn epsilons(&self) -> Vec<f64> {
        self.devices.iter().map(|d| d.epsilon).collect()
    }

    pub fn with_epsilons(&self, eps: &[f64]) -> Self {
        let mut out = self.clone();
        for (d, &e) in out.devices.iter_mut().zip(eps) {
            d.epsilon = e;
        }
        out
    }

    /// Final surgery time `t_{h_n}`, or `t_k` without devices.
    pub fn final_time(&self, spiral: &Spiral) -> Result<f64> {
        match self.devices.last() {
            Some(d) => spiral.t_k(d.h),
            None => spiral.t_k(self.k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervalLabel {
    /// Untouched spiral inside the cut.
    Inner,
    /// The replaced spire `F_k`.
    Cut,
    /// Untouched spiral between the cut or a device and device `j`.
    Approach(usize),
    /// Translated arc of device `j`.
    Device(usize),
    /// Untouched spiral after the last device.
    Outer,
}

impl fmt::Display for IntervalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntervalLabel::Inner => write!(f, "inner"),
            IntervalLabel::Cut => write!(f, "cut"),
            IntervalLabel::Approach(j) => write!(f, "approach_{j}"),
            IntervalLabel::Device(j) => write!(f, "device_{j}"),
            IntervalLabel::Outer => write!(f, "outer"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PieceKind {
    /// `κ(t) + (shift, 0)`.
    Spiral { shift: f64 },
    /// `(t, 0)`.
    Chord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPiece {
    pub label: IntervalLabel,
    pub t_lo: f64,
    pub t_hi: f64,
    pub kind: PieceKind,
}

/// One measured stretch of a modified path: a clipped piece, or the
/// horizontal segment after piece `piece` when `jump` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub piece: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub length: f64,
    pub jump: bool,
}

/// The adjusted planar curve, as consecutive pieces covering
/// `(t_min_domain, T]` in increasing `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedPath<'a> {
    spiral: &'a Spiral,
    pieces: Vec<PathPiece>,
}

impl<'a> ModifiedPath<'a> {
    /// The spiral itself, as a path with no surgery.
    pub fn identity(spiral: &'a Spiral) -> Self {
        ModifiedPath {
            spiral,
            pieces: vec![PathPiece {
                label: IntervalLabel::Inner,
                t_lo: spiral.phase().t_min(),
                t_hi: spiral.t_max(),
                kind: PieceKind::Spiral { shift: 0.0 },
            }],
        }
    }

    pub fn build(spiral: &'a Spiral, set: &DeviceSet) -> Result<Self> {
        Self::build_with_cut(spiral, set, true)
    }

    /// With `cut = false` the spire `F_k` is kept and only the devices act.
    pub fn build_with_cut(spiral: &'a Spiral, set: &DeviceSet, cut: bool) -> Result<Self> {
        set.validate(spiral)?;
        let t_k1 = spiral.t_k(set.k + 1)?;
        let t_k = spiral.t_k(set.k)?;
        let mut pieces = vec![PathPiece {
            label: IntervalLabel::Inner,
            t_lo: spiral.phase().t_min(),
            t_hi: t_k1,
            kind: PieceKind::Spiral { shift: 0.0 },
        }];
        pieces.push(PathPiece {
            label: IntervalLabel::Cut,
            t_lo: t_k1,
            t_hi: t_k,
            kind: if cut {
                PieceKind::Chord
            } else {
                PieceKind::Spiral { shift: 0.0 }
            },
        });
        let mut left = t_k;
        for (pos, d) in set.devices.iter().enumerate() {
            let j = pos + 3;
            let (t_eta, t_h) = d.times(spiral)?;
            if !(left < t_eta && t_eta < t_h) {
                return Err(Error::InvalidDevices(format!(
                    "device {j} window [{t_eta}, {t_h}] overlaps the previous interval ending at {left}"
                )));
            }
            pieces.push(PathPiece {
                label: IntervalLabel::Approach(j),
                t_lo: left,
                t_hi: t_eta,
                kind: PieceKind::Spiral { shift: 0.0 },
            });
            pieces.push(PathPiece {
                label: IntervalLabel::Device(j),
                t_lo: t_eta,
                t_hi: t_h,
                kind: PieceKind::Spiral { shift: d.epsilon },
            });
            left = t_h;
        }
        if left < spiral.t_max() {
            pieces.push(PathPiece {
                label: IntervalLabel::Outer,
                t_lo: left,
                t_hi: spiral.t_max(),
                kind: PieceKind::Spiral { shift: 0.0 },
            });
        }
        Ok(ModifiedPath { spiral, pieces })
    }

    pub fn spiral(&self) -> &'a Spiral {
        self.spiral
    }

    pub fn pieces(&self) -> &[PathPiece] {
        &self.pieces
    }

    fn piece_at(&self, t: f64) -> &PathPiece {
        let pos = self.pieces.partition_point(|p| p.t_hi < t);
        &self.pieces[pos.min(self.pieces.len() - 1)]
    }

    fn eval(kind: PieceKind, spiral: &Spiral, t: f64) -> PlanarPoint {
        match kind {
            PieceKind::Spiral { shift } => {
                let p = spiral.point(t);
                PlanarPoint::new(p.x1 + shift, p.x2)
            }
            PieceKind::Chord => PlanarPoint::new(t, 0.0),
        }
    }

    /// Point of the adjusted curve; at piece boundaries the left piece wins.
    pub fn point(&self, t: f64) -> PlanarPoint {
        Self::eval(self.piece_at(t).kind, self.spiral, t)
    }

    /// `γ_i(t_end) - γ_i(t_start)` for every vertical coordinate, with
    /// `γ_i' = a_i(γ1, γ2) γ2'`. Chord pieces have `γ2' = 0` and contribute
    /// nothing.
    pub fn lift(&self, calc: &Calculus, model: &StratifiedModel, t_start: f64, t_end: f64) -> Result<Vec<Estimate>> {
        if !(t_start <= t_end) {
            return Err(Error::Precondition(format!(
                "lift window [{t_start}, {t_end}] is reversed"
            )));
        }
        let phase = self.spiral.phase();
        phase.check_time(t_start)?;
        phase.check_time(t_end)?;
        let mut out = vec![Estimate::zero(); model.vertical_dim()];
        for piece in &self.pieces {
            let a = piece.t_lo.max(t_start);
            let b = piece.t_hi.min(t_end);
            if !(a < b) {
                continue;
            }
            let PieceKind::Spiral { shift } = piece.kind else {
                continue;
            };
            for (slot, pos) in out.iter_mut().zip(0..) {
                let s = self.spiral;
                let e = calc.integrate_time(
                    |t| {
                        let p = s.point(t);
                        model.coefficient_at(pos, p.x1 + shift, p.x2) * s.velocity(t).x2
                    },
                    a,
                    b,
                )?;
                *slot = *slot + e;
            }
        }
        Ok(out)
    }

    /// Lengths of the pieces of the adjusted curve clipped to
    /// `[t_start, t_end]`, together with the horizontal segments that join
    /// consecutive pieces at device ends.
    pub fn segments(&self, calc: &Calculus, t_start: f64, t_end: f64) -> Result<Vec<Segment>> {
        let mut out = Vec::with_capacity(2 * self.pieces.len());
        for (idx, piece) in self.pieces.iter().enumerate() {
            let a = piece.t_lo.max(t_start);
            let b = piece.t_hi.min(t_end);
            if a < b {
                let length = match piece.kind {
                    PieceKind::Chord => {
                        Self::eval(piece.kind, self.spiral, b).dist(&Self::eval(piece.kind, self.spiral, a))
                    }
                    PieceKind::Spiral { .. } => calc.integrate_time(|t| self.spiral.speed(t), a, b)?.value,
                };
                out.push(Segment {
                    piece: idx,
                    t_lo: a,
                    t_hi: b,
                    length,
                    jump: false,
                });
            }
            if let Some(next) = self.pieces.get(idx + 1) {
                let t = piece.t_hi;
                if t >= t_start && t <= t_end {
                    let from = Self::eval(piece.kind, self.spiral, t);
                    let to = Self::eval(next.kind, self.spiral, t);
                    out.push(Segment {
                        piece: idx,
                        t_lo: t,
                        t_hi: t,
                        length: from.dist(&to),
                        jump: true,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Length of the adjusted curve over `[t_start, t_end]`, including the
    /// two horizontal segments of every device lying inside the window.
    pub fn length(&self, calc: &Calculus, t_start: f64, t_end: f64) -> Result<f64> {
        Ok(self.segments(calc, t_start, t_end)?.iter().map(|s| s.length).sum())
    }

    /// Samples every piece inside `[t_start, t_end]` at its endpoints and at
    /// `per_turn` equally spaced angles per turn in between. Pieces are
    /// sampled separately, so device jumps show up as horizontal segments.
    pub fn sample(&self, t_start: f64, t_end: f64, per_turn: usize) -> Result<Vec<(IntervalLabel, f64, PlanarPoint)>> {
        let step = 2.0 * std::f64::consts::PI / per_turn.max(4) as f64;
        let phase = self.spiral.phase();
        let mut out = Vec::new();
        for piece in &self.pieces {
            let a = piece.t_lo.max(t_start);
            let b = piece.t_hi.min(t_end);
            if !(a < b) {
                continue;
            }
            out.push((piece.label, a, piece.point(self.spiral, a)));
            let (theta_lo, theta_hi) = (phase.value(b), phase.value(a));
            let mut j = (theta_hi / step).ceil() - 1.0;
            while j * step > theta_lo {
                let t = self.spiral.psi(j * step)?;
                if t > a && t < b {
                    out.push((piece.label, t, piece.point(self.spiral, t)));
                }
                j -= 1.0;
            }
            out.push((piece.label, b, piece.point(self.spiral, b)));
        }
        Ok(out)
    }
}

impl PathPiece {
    pub fn point(&self, spiral: &Spiral, t: f64) -> PlanarPoint {
        ModifiedPath::eval(self.kind, spiral, t)
    }
}

/// Spiral lift minus modified lift at the final surgery time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointError {
    pub values: Vec<f64>,
    pub error_estimates: Vec<f64>,
    /// Lift of the spiral itself over the same window.
    pub reference: Vec<f64>,
}

impl EndpointError {
    pub fn norm(&self) -> f64 {
        norm2(&self.values)
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `γ_i(t_end) - γ_i(t_start)` along the spiral, split at full turns.
pub fn spiral_lift(calc: &Calculus, model: &StratifiedModel, t_start: f64, t_end: f64) -> Result<Vec<Estimate>> {
    ModifiedPath::identity(calc.spiral()).lift(calc, model, t_start, t_end)
}

/// Endpoint error by lifting both curves from `t_start` (default
/// `t_{k+1}`) to the final surgery time.
pub fn endpoint_error_direct(
    calc: &Calculus,
    model: &StratifiedModel,
    set: &DeviceSet,
    t_start: Option<f64>,
) -> Result<EndpointError> {
    let t_end = set.final_time(calc.spiral())?;
    endpoint_error_direct_to(calc, model, set, t_start, t_end)
}

/// Like [`endpoint_error_direct`] but lifting up to an arbitrary `t_end`
/// past the surgery.
pub fn endpoint_error_direct_to(
    calc: &Calculus,
    model: &StratifiedModel,
    set: &DeviceSet,
    t_start: Option<f64>,
    t_end: f64,
) -> Result<EndpointError> {
    set.validate_for(calc.spiral(), model)?;
    let spiral = calc.spiral();
    let t_start = match t_start {
        Some(t) => t,
        None => spiral.t_k(set.k + 1)?,
    };
    if t_start > spiral.t_k(set.k + 1)? {
        return Err(Error::Precondition(format!(
            "lift must start at or below t_(k+1), got {t_start}"
        )));
    }
    let path = ModifiedPath::build(spiral, set)?;
    let original = spiral_lift(calc, model, t_start, t_end)?;
    let modified = path.lift(calc, model, t_start, t_end)?;
    Ok(EndpointError {
        values: original.iter().zip(&modified).map(|(a, b)| a.value - b.value).collect(),
        error_estimates: original.iter().zip(&modified).map(|(a, b)| a.error + b.error).collect(),
        reference: original.iter().map(|a| a.value).collect(),
    })
}

/// `∫_{B} (r(κ + ε) - r(κ)) κ2' dt` over a device window.
pub fn remainder_shift_integral(calc: &Calculus, r: &BivariatePolynomial, device: &DeviceTriple) -> Result<f64> {
    if device.epsilon == 0.0 || r.is_zero() {
        return Ok(0.0);
    }
    let s = calc.spiral();
    let (t_lo, t_hi) = device.times(s)?;
    let eps = device.epsilon;
    Ok(calc
        .integrate_time(
            |t| {
                let p = s.point(t);
                r.shift_difference(p.x1, p.x2, eps) * s.velocity(t).x2
            },
            t_lo,
            t_hi,
        )?
        .value)
}

/// `∫_{B} ∂1 r(κ + ε) κ2' dt` over a device window.
pub fn remainder_shift_derivative(calc: &Calculus, r: &BivariatePolynomial, device: &DeviceTriple) -> Result<f64> {
    if r.is_zero() {
        return Ok(0.0);
    }
    let s = calc.spiral();
    let (t_lo, t_hi) = device.times(s)?;
    let eps = device.epsilon;
    Ok(calc
        .integrate_time(
            |t| {
                let p = s.point(t);
                r.d1_shifted(p.x1, p.x2, eps) * s.velocity(t).x2
            },
            t_lo,
            t_hi,
        )?
        .value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceContribution {
    /// Monomial increment from the translation.
    pub delta: f64,
    /// Remainder increment `∫_B (r(κ+ε) - r(κ)) κ2'`.
    pub remainder: f64,
}

/// Endpoint error assembled interval by interval. Approach intervals are
/// untouched spiral and contribute nothing by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub values: Vec<f64>,
    /// Cut contribution `∫_{F_k} a_i(κ) κ2'` per coordinate.
    pub cut: Vec<f64>,
    /// `devices[j][i]`: contribution of device `j` to coordinate `i`.
    pub devices: Vec<Vec<DeviceContribution>>,
}

/// `b_i = ∫_{F_k} (p_i + r_i)(κ) κ2' dt`.
pub fn cut_contribution(calc: &Calculus, model: &StratifiedModel, k: u32) -> Result<Vec<f64>> {
    let w = AngleWindow::full_turn(k);
    let s = calc.spiral();
    let (t_lo, t_hi) = calc.window_times(&w)?;
    model
        .layers()
        .iter()
        .map(|layer| {
            let mono = calc.i_integral(layer.alpha as i32, layer.beta, &w)?.value;
            let rem = match model.remainder(layer.index) {
                Some(r) => {
                    calc.integrate_time(
                        |t| {
                            let p = s.point(t);
                            r.eval(p.x1, p.x2) * s.velocity(t).x2
                        },
                        t_lo,
                        t_hi,
                    )?
                    .value
                }
                None => 0.0,
            };
            Ok(mono + rem)
        })
        .collect()
}

/// Contribution of one device to every coordinate.
pub fn device_contribution(
    calc: &Calculus,
    model: &StratifiedModel,
    device: &DeviceTriple,
) -> Result<Vec<DeviceContribution>> {
    model
        .layers()
        .iter()
        .map(|layer| {
            let delta = calc.delta_monomial(layer.alpha, layer.beta, device.h, device.eta, device.epsilon)?;
            let remainder = match model.remainder(layer.index) {
                Some(r) => remainder_shift_integral(calc, r, device)?,
                None => 0.0,
            };
            Ok(DeviceContribution { delta, remainder })
        })
        .collect()
}

pub fn endpoint_error_decomposed(calc: &Calculus, model: &StratifiedModel, set: &DeviceSet) -> Result<Decomposition> {
    set.validate_for(calc.spiral(), model)?;
    let cut = cut_contribution(calc, model, set.k)?;
    let devices = set
        .devices
        .iter()
        .map(|d| device_contribution(calc, model, d))
        .collect::<Result<Vec<_>>>()?;
    let values = (0..cut.len())
        .map(|i| cut[i] - devices.iter().map(|d| d[i].delta + d[i].remainder).sum::<f64>())
        .collect();
    Ok(Decomposition { values, cut, devices })
}

/// `∫_{F_k} x² / (sqrt(1 + x²) + 1) dt - 2 Σ |ε_j|` with `x = tφ'`.
/// Positive means the modified curve is shorter.
pub fn length_gain(calc: &Calculus, set: &DeviceSet) -> Result<f64> {
    set.validate(calc.spiral())?;
    Ok(spire_excess(calc, set.k)? - 2.0 * set.devices.iter().map(|d| d.epsilon.abs()).sum::<f64>())
}

/// Arc length minus chord of the spire over `F_k`, without cancellation.
pub fn spire_excess(calc: &Calculus, k: u32) -> Result<f64> {
    let s = calc.spiral();
    let phase = s.phase();
    let (t_lo, t_hi) = calc.window_times(&AngleWindow::full_turn(k))?;
    Ok(calc
        .integrate_time(
            |t| {
                let x = t * phase.derivative(t);
                x * x / (x.hypot(1.0) + 1.0)
            },
            t_lo,
            t_hi,
        )?
        .value)
}

/// Length of the modified curve over `[t_{k+1}, t̄]`.
pub fn modified_length(calc: &Calculus, set: &DeviceSet) -> Result<f64> {
    let s = calc.spiral();
    let path = ModifiedPath::build(s, set)?;
    path.length(calc, s.t_k(set.k + 1)?, set.final_time(s)?)
}

/// Gain recomputed as spiral length minus modified length over
/// `[t_{k+1}, t̄]`, each curve measured on its own over the same time
/// partition.
pub fn length_gain_bookkeeping(calc: &Calculus, set: &DeviceSet) -> Result<f64> {
    let s = calc.spiral();
    let (a, b) = (s.t_k(set.k + 1)?, set.final_time(s)?);
    let path = ModifiedPath::build(s, set)?;
    let mut gain = 0.0;
    // differences are taken segment by segment so that the long shared
    // stretches do not swamp the gain in rounding
    for seg in path.segments(calc, a, b)? {
        let original = if seg.jump {
            0.0
        } else {
            calc.integrate_time(|t| s.speed(t), seg.t_lo, seg.t_hi)?.value
        };
        gain += original - seg.length;
    }
    Ok(gain)
}

/// `|b_i| / ∫_{F_k} t^{w_i} |φ'| dt` per vertical coordinate.
pub fn cut_bound_check(calc: &Calculus, model: &StratifiedModel, k: u32) -> Result<Vec<f64>> {
    let b = cut_contribution(calc, model, k)?;
    let (t_lo, t_hi) = calc.window_times(&AngleWindow::full_turn(k))?;
    let phase = calc.spiral().phase();
    model
        .layers()
        .iter()
        .zip(&b)
        .map(|(layer, bi)| {
            let w = model.weight(layer.index)? as i32;
            let denom = calc
                .integrate_time(|t| t.powi(w) * phase.derivative(t).abs(), t_lo, t_hi)?
                .value;
            Ok(bi.abs() / denom)
        })
        .collect()
}

/// `|∫_B (r_i(κ) - r_i(κ+ε)) κ2'| / (|ε| ∫_B t^{w_i} |φ'|)` per coordinate.
pub fn device_remainder_bound_check(
    calc: &Calculus,
    model: &StratifiedModel,
    device: &DeviceTriple,
) -> Result<Vec<f64>> {
    let s = calc.spiral();
    let (t_lo, t_hi) = device.times(s)?;
    if !(device.epsilon.abs() < t_lo) {
        return Err(Error::InvalidDevices(format!(
            "|epsilon| = {} not below t_(h,eta) = {t_lo}",
            device.epsilon.abs()
        )));
    }
    let phase = s.phase();
    model
        .layers()
        .iter()
        .map(|layer| {
            let Some(r) = model.remainder(layer.index) else {
                return Ok(0.0);
            };
            if device.epsilon == 0.0 {
                return Ok(0.0);
            }
            let w = model.weight(layer.index)? as i32;
            let num = remainder_shift_integral(calc, r, device)?.abs();
            let denom = calc
                .integrate_time(|t| t.powi(w) * phase.derivative(t).abs(), t_lo, t_hi)?
                .value;
            Ok(num / (device.epsilon.abs() * denom))
        })
        .collect()
}
