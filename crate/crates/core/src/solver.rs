//! The end-point equations `f(ε) = b` and their solution.
//!
//! Row `i` belongs to vertical coordinate `i` (layers in index order),
//! column `j` to device `j` (devices in the order `h_3 > h_4 > ... > h_n`).

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calculus::{delta_derivative_from_moments, delta_from_moments, Calculus};
use crate::error::{Error, Result};
use crate::model::{MonomialLayer, StratifiedModel};
use crate::surgery::{
    cut_contribution, norm2, remainder_shift_derivative, remainder_shift_integral, DeviceSet, DeviceTriple,
};

/// Fraction of `t_{hη}` that Newton iterates may use.
const BOX_FRACTION: f64 = 0.99;

/// Total order on monomial layers: by degree `α + β`, then by `β`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrderKey {
    pub alpha: u32,
    pub beta: u32,
}

impl From<&MonomialLayer> for OrderKey {
    fn from(l: &MonomialLayer) -> Self {
        OrderKey {
            alpha: l.alpha,
            beta: l.beta,
        }
    }
}

impl Ord for OrderKey {
    fn cmp(&self, o: &Self) -> Ordering {
        (self.alpha + self.beta, self.beta).cmp(&(o.alpha + o.beta, o.beta))
    }
}

impl PartialOrd for OrderKey {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Position (in [`StratifiedModel::layers`]) of the minimal layer among `rows`.
pub fn minimal_row(model: &StratifiedModel, rows: &[usize]) -> Option<usize> {
    rows.iter().copied().min_by_key(|&r| OrderKey::from(&model.layers()[r]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub h: u32,
    pub eta: f64,
}

impl DeviceParams {
    pub fn triple(&self, epsilon: f64) -> DeviceTriple {
        DeviceTriple::new(self.h, self.eta, epsilon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Newton stops once `‖f(ε) - b‖ ≤ tol · ‖b‖`.
    pub tol: f64,
    pub max_iter: u32,
    /// Largest `h` the selector may try.
    pub h_budget: u32,
    pub eta_grid: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-12,
            max_iter: 50,
            h_budget: 1 << 20,
            eta_grid: vec![0.7, 0.5, 0.3, 0.2, 0.1, 0.05, 0.02, 0.01],
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || self.h_budget == 0 {
            return Err(Error::Config(
                "solver needs tol > 0, max_iter > 0 and h_budget > 0".into(),
            ));
        }
        if self.eta_grid.is_empty()
            || self
                .eta_grid
                .iter()
                .any(|&e| !(e > 0.0 && e < std::f64::consts::FRAC_PI_4))
        {
            return Err(Error::Config(
                "eta grid must be non-empty with entries in (0, pi/4)".into(),
            ));
        }
        Ok(())
    }
}

/// The moments `I^{i-1,β}` (`i = 0..=α`) of every layer over every device
/// window. They determine the monomial part of `f` and its Jacobian exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceMoments {
    params: Vec<DeviceParams>,
    /// `moments[j][i]`
    moments: Vec<Vec<Vec<f64>>>,
    t_eta: Vec<f64>,
}

impl DeviceMoments {
    pub fn new(calc: &Calculus, model: &StratifiedModel, params: &[DeviceParams]) -> Result<Self> {
        let spiral = calc.spiral();
        let mut moments = Vec::with_capacity(params.len());
        let mut t_eta = Vec::with_capacity(params.len());
        for p in params {
            t_eta.push(spiral.t_k_eta(p.h, p.eta)?);
            moments.push(
                model
                    .layers()
                    .iter()
                    .map(|l| calc.device_moments(l.alpha, l.beta, p.h, p.eta))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(DeviceMoments {
            params: params.to_vec(),
            moments,
            t_eta,
        })
    }

    pub fn params(&self) -> &[DeviceParams] {
        &self.params
    }

    /// `t_{h_j η_j}` per device, the bound on `|ε_j|`.
    pub fn eps_bounds(&self) -> &[f64] {
        &self.t_eta
    }

    /// Jacobian column of device `j` at `ε = 0` for the monomial parts.
    fn monomial_column(&self, model: &StratifiedModel, j: usize) -> Vec<f64> {
        model
            .layers()
            .iter()
            .zip(&self.moments[j])
            .map(|(l, m)| (l.alpha + 1) as f64 * m[l.alpha as usize])
            .collect()
    }
}

/// `f(ε) = b` for a fixed cut index and fixed device parameters.
#[derive(Debug, Clone)]
pub struct EndpointSystem<'a> {
    calc: Calculus<'a>,
    model: &'a StratifiedModel,
    k: u32,
    moments: DeviceMoments,
    b: Vec<f64>,
}

/// `b_i = ∫_{F_k} a_i(κ) κ2' dt`.
pub fn assemble_rhs(calc: &Calculus, model: &StratifiedModel, k: u32) -> Result<Vec<f64>> {
    cut_contribution(calc, model, k)
}

impl<'a> EndpointSystem<'a> {
    pub fn new(calc: Calculus<'a>, model: &'a StratifiedModel, k: u32, params: &[DeviceParams]) -> Result<Self> {
        let moments = DeviceMoments::new(&calc, model, params)?;
        Self::with_moments(calc, model, k, moments)
    }

    /// Reuses moments computed once for a sweep over `k`.
    pub fn with_moments(
        calc: Calculus<'a>,
        model: &'a StratifiedModel,
        k: u32,
        moments: DeviceMoments,
    ) -> Result<Self> {
        if moments.params.len() != model.vertical_dim() {
            return Err(Error::InvalidDevices(format!(
                "{} devices for {} vertical coordinates",
                moments.params.len(),
                model.vertical_dim()
            )));
        }
        DeviceSet::new(k, moments.params.iter().map(|p| p.triple(0.0)).collect())?;
        let b = assemble_rhs(&calc, model, k)?;
        Ok(EndpointSystem {
            calc,
            model,
            k,
            moments,
            b,
        })
    }

    /// Replaces the right-hand side.
    pub fn with_rhs(mut self, b: Vec<f64>) -> Result<Self> {
        if b.len() != self.b.len() {
            return Err(Error::DimensionMismatch {
                expected: self.b.len(),
                got: b.len(),
            });
        }
        self.b = b;
        Ok(self)
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn moments(&self) -> &DeviceMoments {
        &self.moments
    }

    pub fn device_set(&self, eps: &[f64]) -> Result<DeviceSet> {
        DeviceSet::new(
            self.k,
            self.moments.params.iter().zip(eps).map(|(p, &e)| p.triple(e)).collect(),
        )
    }

    fn check_eps(&self, eps: &[f64]) -> Result<()> {
        if eps.len() != self.moments.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.moments.params.len(),
                got: eps.len(),
            });
        }
        for (j, (&e, &t)) in eps.iter().zip(&self.moments.t_eta).enumerate() {
            if !(e.abs() < t) {
                return Err(Error::Precondition(format!(
                    "|epsilon_{}| = {} must be below t_(h,eta) = {t}",
                    j + 3,
                    e.abs()
                )));
            }
        }
        Ok(())
    }

    /// `f_i(ε) = Σ_j [Δ_{ij}(ε_j) + ∫_{B_j} (r_i(κ + ε_j) - r_i(κ)) κ2']`.
    pub fn assemble_f(&self, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_eps(eps)?;
        let layers = self.model.layers();
        let mut f = vec![0.0; layers.len()];
        for (j, p) in self.moments.params.iter().enumerate() {
            let e = eps[j];
            if e == 0.0 {
                continue;
            }
            for (i, layer) in layers.iter().enumerate() {
                f[i] += delta_from_moments(layer.alpha, &self.moments.moments[j][i], e);
                if let Some(r) = self.model.remainder(layer.index) {
                    f[i] += remainder_shift_integral(&self.calc, r, &p.triple(e))?;
                }
            }
        }
        Ok(f)
    }

    /// `f(ε) - b`.
    pub fn residual(&self, eps: &[f64]) -> Result<Vec<f64>> {
        Ok(self.assemble_f(eps)?.iter().zip(&self.b).map(|(f, b)| f - b).collect())
    }

    pub fn jacobian(&self, eps: &[f64]) -> Result<DMatrix<f64>> {
        self.check_eps(eps)?;
        let layers = self.model.layers();
        let m = layers.len();
        let mut a = DMatrix::zeros(m, m);
        for (j, p) in self.moments.params.iter().enumerate() {
            for (i, layer) in layers.iter().enumerate() {
                let mut v = delta_derivative_from_moments(layer.alpha, &self.moments.moments[j][i], eps[j]);
                if let Some(r) = self.model.remainder(layer.index) {
                    v += remainder_shift_derivative(&self.calc, r, &p.triple(eps[j]))?;
                }
                a[(i, j)] = v;
            }
        }
        Ok(a)
    }

    pub fn jacobian_at_zero(&self) -> Result<DMatrix<f64>> {
        self.jacobian(&vec![0.0; self.b.len()])
    }

    /// Newton iteration from `ε = 0` with backtracking and clamping into
    /// `|ε_j| ≤ 0.99 t_{h_j η_j}`.
    pub fn newton_solve(&self, tol: f64, max_iter: u32) -> Result<SolverReport> {
        let m = self.b.len();
        let b_norm = norm2(&self.b);
        let mut eps = vec![0.0; m];
        let det0 = self.jacobian_at_zero()?.determinant();
        let mut report = SolverReport {
            epsilon: eps.clone(),
            residual_norm: b_norm,
            relative_residual: if b_norm == 0.0 { 0.0 } else { 1.0 },
            iterations: 0,
            det_jacobian: det0,
            trajectory: vec![b_norm],
            bound_ratio: 0.0,
            converged: b_norm == 0.0,
        };
        if b_norm == 0.0 {
            return Ok(report);
        }
        let target = tol * b_norm;
        let bounds: Vec<f64> = self.moments.t_eta.iter().map(|t| BOX_FRACTION * t).collect();
        let mut res = self.residual(&eps)?;
        let mut res_norm = norm2(&res);
        for iter in 1..=max_iter {
            let a = self.jacobian(&eps)?;
            let rhs = DVector::from_iterator(m, res.iter().map(|r| -r));
            let step = a
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Solver(format!("singular Jacobian at iteration {iter}")))?;
            let mut lambda = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let trial: Vec<f64> = eps
                    .iter()
                    .zip(step.iter())
                    .zip(&bounds)
                    .map(|((e, s), bd)| (e + lambda * s).clamp(-bd, *bd))
                    .collect();
                let trial_res = self.residual(&trial)?;
                let n = norm2(&trial_res);
                if n < res_norm || n <= target {
                    accepted = Some((trial, trial_res, n));
                    break;
                }
                lambda *= 0.5;
            }
            let Some((e, r, n)) = accepted else {
                report.epsilon = eps;
                report.residual_norm = res_norm;
                report.relative_residual = res_norm / b_norm;
                report.iterations = iter;
                return Err(Error::Solver(format!(
                    "line search stalled at iteration {iter}, residual {res_norm:e}, trajectory {:?}",
                    report.trajectory
                )));
            };
            eps = e;
            res = r;
            res_norm = n;
            report.trajectory.push(n);
            report.iterations = iter;
            if res_norm <= target {
                report.converged = true;
                break;
            }
        }
        report.epsilon = eps;
        report.residual_norm = res_norm;
        report.relative_residual = res_norm / b_norm;
        report.bound_ratio = biba_ratio(&report.epsilon, &self.b);
        if !report.converged {
            return Err(Error::Solver(format!(
                "no convergence in {max_iter} iterations, trajectory {:?}",
                report.trajectory
            )));
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub epsilon: Vec<f64>,
    pub residual_norm: f64,
    /// `‖f(ε) - b‖ / ‖b‖`.
    pub relative_residual: f64,
    pub iterations: u32,
    /// `det A` at `ε = 0`.
    pub det_jacobian: f64,
    /// Residual norm before the first and after every iteration.
    pub trajectory: Vec<f64>,
    /// `|ε| / Σ|b_i|`.
    pub bound_ratio: f64,
    pub converged: bool,
}

/// `|ε|₂ / Σ |b_i|`, zero when `b = 0`.
pub fn biba_ratio(eps: &[f64], b: &[f64]) -> f64 {
    let s: f64 = b.iter().map(|x| x.abs()).sum();
    if s == 0.0 {
        0.0
    } else {
        norm2(eps) / s
    }
}

/// One level of the selector: the device at `position` dominated by row
/// `lead_row`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCertificate {
    /// Device number `j` (3-based).
    pub device: usize,
    /// Coordinate index of the minimal layer at this level.
    pub lead_index: usize,
    pub h: u32,
    pub eta: f64,
    /// `|a_{ι j}| |P_ι|`.
    pub lead_term: f64,
    /// `max_{i ≠ ι} |a_{ij}| |P_i| / lead_term`.
    pub dominance_ratio: f64,
    /// `|det|` of the sub-system solved at this level.
    pub det: f64,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub params: Vec<DeviceParams>,
    /// Innermost level first.
    pub levels: Vec<LevelCertificate>,
    pub det: f64,
    pub epsilon0: f64,
}

impl Selection {
    pub fn h3(&self) -> u32 {
        self.params.first().map_or(0, |p| p.h)
    }
}

fn column(calc: &Calculus, model: &StratifiedModel, p: DeviceParams) -> Result<Vec<f64>> {
    let moments = DeviceMoments::new(calc, model, &[p])?;
    let mut col = moments.monomial_column(model, 0);
    for (i, layer) in model.layers().iter().enumerate() {
        if let Some(r) = model.remainder(layer.index) {
            col[i] += remainder_shift_derivative(calc, r, &p.triple(0.0))?;
        }
    }
    Ok(col)
}

fn sub_det(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() {
        return 1.0;
    }
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| a[(rows[r], cols[c])]).determinant()
}

/// Chooses `(h_j, η_j)` innermost device first. The innermost device sits at
/// the smallest admissible `h`; every further device starts at twice the
/// previous `h`, tries the `η` grid in order and doubles `h` until the
/// minimal remaining layer dominates its column:
/// `|a_{ij}||P_i| ≤ ε0 |a_{ιj}||P_ι|` for all other rows, with
/// `ε0 = 1/(2(n-2))`, and `|det| ≥ ½ |a_{ιj}||P_ι|`.
pub fn select_device_params(calc: &Calculus, model: &StratifiedModel, cfg: &SolverConfig) -> Result<Selection> {
    cfg.validate()?;
    let m = model.vertical_dim();
    if m == 0 {
        return Err(Error::Precondition("model has no vertical coordinates".into()));
    }
    let layers = model.layers();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by_key(|&r| OrderKey::from(&layers[r]));
    let eps0 = 1.0 / (2.0 * m as f64);
    let spiral = calc.spiral();

    let mut a = DMatrix::zeros(m, m);
    let mut params = vec![DeviceParams { h: 0, eta: 0.0 }; m];
    let mut levels = Vec::with_capacity(m);

    for pos in (0..m).rev() {
        let rows = &order[pos..];
        let lead = order[pos];
        let fixed_cols: Vec<usize> = (pos + 1..m).collect();
        let mut h = if pos + 1 == m {
            spiral.h_min()
        } else {
            2 * params[pos + 1].h
        };
        let etas: &[f64] = if pos + 1 == m {
            &cfg.eta_grid[..1]
        } else {
            &cfg.eta_grid
        };
        let mut attempts = 0;
        let mut last = String::from("no attempt");
        let found = 'search: loop {
            if h > cfg.h_budget {
                break 'search None;
            }
            for &eta in etas {
                attempts += 1;
                let p = DeviceParams { h, eta };
                let col = match column(calc, model, p) {
                    Ok(c) => c,
                    Err(e) => {
                        last = format!("h = {h}, eta = {eta}: {e}");
                        break 'search None;
                    }
                };
                for (r, v) in col.iter().enumerate() {
                    a[(r, pos)] = *v;
                }
                let cofactor = |i: usize| {
                    let others: Vec<usize> = rows.iter().copied().filter(|&r| r != i).collect();
                    sub_det(&a, &others, &fixed_cols)
                };
                let lead_term = a[(lead, pos)].abs() * cofactor(lead).abs();
                let worst = rows
                    .iter()
                    .filter(|&&i| i != lead)
                    .map(|&i| a[(i, pos)].abs() * cofactor(i).abs())
                    .fold(0.0, f64::max);
                let cols: Vec<usize> = (pos..m).collect();
                let det = sub_det(&a, rows, &cols).abs();
                let ratio = if lead_term > 0.0 {
                    worst / lead_term
                } else {
                    f64::INFINITY
                };
                last =
                    format!("h = {h}, eta = {eta}: dominance ratio {ratio:e}, |det| {det:e}, lead term {lead_term:e}");
                if lead_term > 0.0 && ratio <= eps0 && det >= 0.5 * lead_term {
                    break 'search Some((
                        p,
                        LevelCertificate {
                            device: pos + 3,
                            lead_index: layers[lead].index,
                            h,
                            eta,
                            lead_term,
                            dominance_ratio: ratio,
                            det,
                            attempts,
                        },
                    ));
                }
            }
            h = match h.checked_mul(2) {
                Some(v) => v,
                None => break 'search None,
            };
        };
        match found {
            Some((p, cert)) => {
                params[pos] = p;
                levels.push(cert);
            }
            None => {
                return Err(Error::NotCertified(format!(
                    "device {} (lead coordinate {}) after {attempts} attempts; last: {last}",
                    pos + 3,
                    layers[lead].index
                )))
            }
        }
    }
    let det = a.determinant();
    Ok(Selection {
        params,
        levels,
        det,
        epsilon0: eps0,
    })
}

/// One entry of a sweep over `k` with fixed device parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BibaSample {
    pub k: u32,
    /// `|ε| / Σ|b_i|`
    pub ratio: f64,
    /// `|ε| / ∫_{F_k} t² |φ'| dt`
    pub spire_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BibaSummary {
    pub samples: Vec<BibaSample>,
    pub max_ratio: f64,
    pub max_spire_ratio: f64,
}

/// Solves at every `k` with the same device parameters and records the two
/// bound ratios.
pub fn biba_sweep(
    calc: &Calculus,
    model: &StratifiedModel,
    params: &[DeviceParams],
    ks: &[u32],
    cfg: &SolverConfig,
) -> Result<BibaSummary> {
    let moments = DeviceMoments::new(calc, model, params)?;
    let phase = calc.spiral().phase();
    let mut samples = Vec::with_capacity(ks.len());
    for &k in ks {
        let sys = EndpointSystem::with_moments(*calc, model, k, moments.clone())?;
        let rep = sys.newton_solve(cfg.tol, cfg.max_iter)?;
        let (lo, hi) = calc.window_times(&crate::calculus::AngleWindow::full_turn(k))?;
        let spire = calc
            .integrate_time(|t| t * t * phase.derivative(t).abs(), lo, hi)?
            .value;
        samples.push(BibaSample {
            k,
            ratio: rep.bound_ratio,
            spire_ratio: norm2(&rep.epsilon) / spire,
        });
    }
    Ok(verify_biba(samples))
}

pub fn verify_biba(samples: Vec<BibaSample>) -> BibaSummary {
    let max_ratio = samples.iter().map(|s| s.ratio).fold(0.0, f64::max);
    let max_spire_ratio = samples.iter().map(|s| s.spire_ratio).fold(0.0, f64::max);
    BibaSummary {
        samples,
        max_ratio,
        max_spire_ratio,
    }
}
