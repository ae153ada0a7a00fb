//! Experiment driver: configuration, the k-scan pipeline, reports and
//! output files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{AngleWindow, Calculus, SandwichBounds};
use crate::error::{Error, Result};
use crate::model::{MonomialLayer, RemainderSpec, StratifiedModel, Term};
use crate::quadrature::QuadratureConfig;
use crate::solver::{select_device_params, DeviceMoments, EndpointSystem, Selection, SolverConfig};
use crate::spiral::{Phase, PhaseSpec, Spiral};
use crate::surgery::{endpoint_error_direct, length_gain, length_gain_bookkeeping, norm2, DeviceSet, ModifiedPath};

pub const SCAN_HEADER: &str = "k,t_k,norm_b,norm_eps,residual,endpoint_err,delta_L,wall_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderTermSpec {
    pub i: usize,
    pub c: f64,
    pub a1: u32,
    pub a2: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Optional; must equal `weights.len()` when given.
    #[serde(default)]
    pub n: Option<usize>,
    pub weights: Vec<u32>,
    pub layers: Vec<MonomialLayer>,
    #[serde(default)]
    pub remainders: Vec<RemainderTermSpec>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<StratifiedModel> {
        if let Some(n) = self.n {
            if n != self.weights.len() {
                return Err(Error::Config(format!(
                    "model.n = {n} but {} weights are given",
                    self.weights.len()
                )));
            }
        }
        let remainders = self.remainders.iter().fold(RemainderSpec::empty(), |acc, r| {
            acc.with_term(
                r.i,
                Term {
                    coeff: r.c,
                    a1: r.a1,
                    a2: r.a2,
                },
            )
        });
        StratifiedModel::new(self.weights.clone(), self.layers.clone(), remainders)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    pub k_min: u32,
    pub k_max: u32,
    /// Evaluate every `k` instead of stopping at the first certified one.
    pub full_scan: bool,
    /// Certificate: `‖E‖ ≤ endpoint_tol · max(1, ‖γ(t̄)‖)`.
    pub endpoint_tol: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            k_min: 10,
            k_max: 40,
            full_scan: false,
            endpoint_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Seed for randomized diagnostics; the pipeline itself is deterministic.
    pub seed: u64,
    /// Record wall-clock times. When false `wall_ms` is written as 0 so that
    /// repeated runs give byte-identical tables.
    pub timings: bool,
    /// Write curve and interval polylines for the certifying `k`.
    pub curves: bool,
    /// Samples per full turn in the polylines.
    pub samples_per_turn: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("lab-out"),
            seed: 1,
            timings: true,
            curves: true,
            samples_per_turn: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub model: ModelSpec,
    pub phase: PhaseSpec,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.name.is_empty() {
            cfg.name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        Ok(cfg)
    }

    /// Builds the model and the spiral and checks every section.
    pub fn validate(&self) -> Result<(StratifiedModel, Spiral)> {
        let model = self.model.build()?;
        let spiral = Spiral::new(Phase::from_spec(&self.phase)?);
        self.quadrature.validate()?;
        self.solver.validate()?;
        if !(self.scan.endpoint_tol > 0.0) {
            return Err(Error::Config("scan.endpoint_tol must be positive".into()));
        }
        if self.scan.k_min <= self.scan.k_max {
            spiral
                .t_k(self.scan.k_max + 1)
                .map_err(|e| Error::Config(format!("scan.k_max = {} leaves the phase domain: {e}", self.scan.k_max)))?;
        }
        Ok((model, spiral))
    }
}

/// Measures of `F_k^+ = {|tφ'| ≥ 1}` and `F_k^-` and the integrals behind
/// the two lower bounds for the spire excess.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitDiagnostics {
    pub measure_plus: f64,
    pub measure_minus: f64,
    /// `∫_{F^±} x²/(sqrt(1+x²)+1)`, `x = tφ'`.
    pub gain_plus: f64,
    pub gain_minus: f64,
    /// `∫_{F^+} t|φ'|`
    pub t_phidot_plus: f64,
    /// `∫_{F^-} t²φ'²`
    pub t2_phidot2_minus: f64,
    /// `∫_{F_k} t²|φ'|`
    pub t2_abs_phidot: f64,
    /// `∫_{F_k} t²φ'²`
    pub t2_phidot2: f64,
    /// `gain_plus / (⅓ ∫_{F^+} t|φ'|)`, at least 1 when defined.
    pub ratio_plus: Option<f64>,
    /// `gain_minus / (⅓ ∫_{F^-} t²φ'²)`, at least 1 when defined.
    pub ratio_minus: Option<f64>,
}

/// Splits `F_k` at the solutions of `|tφ'(t)| = 1` (located by sampling and
/// bisection) and integrates over both parts.
pub fn split_diagnostics(calc: &Calculus, k: u32) -> Result<SplitDiagnostics> {
    let s = calc.spiral();
    let phase = s.phase();
    let (lo, hi) = calc.window_times(&AngleWindow::full_turn(k))?;
    let g = |t: f64| (t * phase.derivative(t)).abs() - 1.0;
    const SAMPLES: usize = 256;
    let mut cuts = vec![lo];
    let mut prev_t = lo;
    let mut prev_g = g(lo);
    for j in 1..=SAMPLES {
        let t = lo + (hi - lo) * j as f64 / SAMPLES as f64;
        let gt = g(t);
        if (prev_g >= 0.0) != (gt >= 0.0) {
            let (mut a, mut b) = (prev_t, t);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                if (g(mid) >= 0.0) == (prev_g >= 0.0) {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            cuts.push(0.5 * (a + b));
        }
        prev_t = t;
        prev_g = gt;
    }
    cuts.push(hi);

    let mut d = SplitDiagnostics {
        measure_plus: 0.0,
        measure_minus: 0.0,
        gain_plus: 0.0,
        gain_minus: 0.0,
        t_phidot_plus: 0.0,
        t2_phidot2_minus: 0.0,
        t2_abs_phidot: 0.0,
        t2_phidot2: 0.0,
        ratio_plus: None,
        ratio_minus: None,
    };
    let excess = |t: f64| {
        let x = t * phase.derivative(t);
        x * x / (x.hypot(1.0) + 1.0)
    };
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(a < b) {
            continue;
        }
        let plus = g(0.5 * (a + b)) >= 0.0;
        let gain = calc.integrate_time(excess, a, b)?.value;
        let t2p2 = calc.integrate_time(|t| (t * phase.derivative(t)).powi(2), a, b)?.value;
        if plus {
            d.measure_plus += b - a;
            d.gain_plus += gain;
            d.t_phidot_plus += calc.integrate_time(|t| (t * phase.derivative(t)).abs(), a, b)?.value;
        } else {
            d.measure_minus += b - a;
            d.gain_minus += gain;
            d.t2_phidot2_minus += t2p2;
        }
        d.t2_phidot2 += t2p2;
        d.t2_abs_phidot += calc.integrate_time(|t| t * t * phase.derivative(t).abs(), a, b)?.value;
    }
    if d.t_phidot_plus > 0.0 {
        d.ratio_plus = Some(d.gain_plus / (d.t_phidot_plus / 3.0));
    }
    if d.t2_phidot2_minus > 0.0 {
        d.ratio_minus = Some(d.gain_minus / (d.t2_phidot2_minus / 3.0));
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureReason {
    /// The cut must lie strictly inside all devices: `k > h_3`.
    CutInsideDevices {
        h3: u32,
    },
    Domain {
        message: String,
    },
    Solver {
        message: String,
    },
    Quadrature {
        message: String,
    },
    EndpointMismatch {
        error: f64,
        tolerance: f64,
    },
    NoLengthGain {
        delta_l: f64,
    },
    DeviceBound {
        device: usize,
        epsilon: f64,
        bound: f64,
    },
}

impl From<Error> for FailureReason {
    fn from(e: Error) -> Self {
        match e {
            Error::Quadrature { .. } => FailureReason::Quadrature { message: e.to_string() },
            Error::Solver(_) => FailureReason::Solver { message: e.to_string() },
            other => FailureReason::Domain {
                message: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRecord {
    pub k: u32,
    pub t_k: Option<f64>,
    pub certified: bool,
    pub failure: Option<FailureReason>,
    pub b: Vec<f64>,
    pub norm_b: Option<f64>,
    pub epsilon: Vec<f64>,
    pub norm_eps: Option<f64>,
    /// `‖f(ε) - b‖ / ‖b‖` at the Newton solution.
    pub residual: Option<f64>,
    pub iterations: Option<u32>,
    pub endpoint_error: Vec<f64>,
    pub endpoint_err: Option<f64>,
    /// `‖E‖ / ‖b‖`: how much of the cut's displacement is left over.
    pub endpoint_err_relative: Option<f64>,
    /// Length gain, positive when the modified curve is shorter.
    pub delta_l: Option<f64>,
    /// The same gain from independent length bookkeeping.
    pub delta_l_bookkeeping: Option<f64>,
    /// `ΔL - ‖E‖`.
    pub slack: Option<f64>,
    pub bound_ratio: Option<f64>,
    pub spire_ratio: Option<f64>,
    pub split: Option<SplitDiagnostics>,
    pub wall_ms: f64,
}

impl KRecord {
    fn empty(k: u32) -> Self {
        KRecord {
            k,
            t_k: None,
            certified: false,
            failure: None,
            b: vec![],
            norm_b: None,
            epsilon: vec![],
            norm_eps: None,
            residual: None,
            iterations: None,
            endpoint_error: vec![],
            endpoint_err: None,
            endpoint_err_relative: None,
            delta_l: None,
            delta_l_bookkeeping: None,
            slack: None,
            bound_ratio: None,
            spire_ratio: None,
            split: None,
            wall_ms: 0.0,
        }
    }

    pub fn device_set(&self, selection: &Selection) -> Result<DeviceSet> {
        DeviceSet::new(
            self.k,
            selection
                .params
                .iter()
                .zip(&self.epsilon)
                .map(|(p, &e)| p.triple(e))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Smallest certified `k`.
    pub k_star: Option<u32>,
    /// Smallest scanned `k` with positive length gain.
    pub first_positive_gain: Option<u32>,
    /// Largest `|ε|/Σ|b_i|` over the solved records.
    pub bound_constant: Option<f64>,
    /// Largest `|ε| / ∫_{F_k} t²|φ'|` over the solved records.
    pub spire_constant: Option<f64>,
    pub certified: bool,
    pub scanned: usize,
    pub lift_start: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub selection: Option<Selection>,
    pub selection_error: Option<String>,
    pub records: Vec<KRecord>,
    pub summary: RunSummary,
}

impl RunReport {
    pub fn record(&self, k: u32) -> Option<&KRecord> {
        self.records.iter().find(|r| r.k == k)
    }
}

struct Context<'a> {
    calc: Calculus<'a>,
    model: &'a StratifiedModel,
    selection: &'a Selection,
    moments: &'a DeviceMoments,
    lift_start: f64,
    scan: &'a ScanConfig,
    solver: &'a SolverConfig,
    timings: bool,
}

fn evaluate_k(ctx: &Context, k: u32) -> KRecord {
    let start = Instant::now();
    let mut rec = KRecord::empty(k);
    if let Err(reason) = fill_record(ctx, k, &mut rec) {
        rec.failure = Some(reason);
        rec.certified = false;
    }
    if ctx.timings {
        rec.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    }
    rec
}

fn fill_record(ctx: &Context, k: u32, rec: &mut KRecord) -> std::result::Result<(), FailureReason> {
    let spiral = ctx.calc.spiral();
    rec.t_k = Some(spiral.t_k(k)?);
    let h3 = ctx.selection.h3();
    if k <= h3 {
        return Err(FailureReason::CutInsideDevices { h3 });
    }
    let system = EndpointSystem::with_moments(ctx.calc, ctx.model, k, ctx.moments.clone())?;
    rec.b = system.rhs().to_vec();
    let norm_b = norm2(&rec.b);
    rec.norm_b = Some(norm_b);
    let split = split_diagnostics(&ctx.calc, k)?;
    rec.split = Some(split);

    let report = system.newton_solve(ctx.solver.tol, ctx.solver.max_iter)?;
    rec.norm_eps = Some(norm2(&report.epsilon));
    rec.residual = Some(report.relative_residual);
    rec.iterations = Some(report.iterations);
    rec.bound_ratio = Some(report.bound_ratio);
    rec.spire_ratio = Some(norm2(&report.epsilon) / split.t2_abs_phidot);
    rec.epsilon = report.epsilon.clone();

    let set = system.device_set(&report.epsilon)?;
    let err = endpoint_error_direct(&ctx.calc, ctx.model, &set, Some(ctx.lift_start))?;
    let err_norm = err.norm();
    rec.endpoint_err = Some(err_norm);
    rec.endpoint_err_relative = Some(if norm_b > 0.0 { err_norm / norm_b } else { 0.0 });
    rec.endpoint_error = err.values.clone();

    let gain = length_gain(&ctx.calc, &set)?;
    rec.delta_l = Some(gain);
    rec.delta_l_bookkeeping = Some(length_gain_bookkeeping(&ctx.calc, &set)?);
    rec.slack = Some(gain - err_norm);

    for (j, (d, &bound)) in set.devices.iter().zip(ctx.moments.eps_bounds()).enumerate() {
        if !(d.epsilon.abs() < bound) {
            return Err(FailureReason::DeviceBound {
                device: j + 3,
                epsilon: d.epsilon,
                bound,
            });
        }
    }
    let tolerance = ctx.scan.endpoint_tol * norm2(&err.reference).max(1.0);
    if !(err_norm <= tolerance) {
        return Err(FailureReason::EndpointMismatch {
            error: err_norm,
            tolerance,
        });
    }
    if !(gain > 0.0) {
        return Err(FailureReason::NoLengthGain { delta_l: gain });
    }
    rec.certified = true;
    Ok(())
}

/// Validate, select device parameters, scan `k` and certify.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunReport> {
    let (model, spiral) = cfg.validate()?;
    let calc = Calculus::new(&spiral, cfg.quadrature);
    let ks: Vec<u32> = if cfg.scan.k_min <= cfg.scan.k_max {
        (cfg.scan.k_min..=cfg.scan.k_max).collect()
    } else {
        Vec::new()
    };
    let mut report = RunReport {
        name: cfg.name.clone(),
        selection: None,
        selection_error: None,
        records: Vec::new(),
        summary: RunSummary {
            k_star: None,
            first_positive_gain: None,
            bound_constant: None,
            spire_constant: None,
            certified: false,
            scanned: 0,
            lift_start: None,
        },
    };
    if ks.is_empty() {
        return Ok(report);
    }
    let selection = match select_device_params(&calc, &model, &cfg.solver) {
        Ok(s) => s,
        Err(e @ Error::NotCertified(_)) => {
            report.selection_error = Some(e.to_string());
            return Ok(report);
        }
        Err(e) => return Err(e),
    };
    let moments = DeviceMoments::new(&calc, &model, &selection.params)?;
    let lift_start = spiral.t_k(cfg.scan.k_max + 1)?;
    let ctx = Context {
        calc,
        model: &model,
        selection: &selection,
        moments: &moments,
        lift_start,
        scan: &cfg.scan,
        solver: &cfg.solver,
        timings: cfg.output.timings,
    };
    let records: Vec<KRecord> = if cfg.scan.full_scan {
        ks.par_iter().map(|&k| evaluate_k(&ctx, k)).collect()
    } else {
        let mut out = Vec::new();
        for &k in &ks {
            let rec = evaluate_k(&ctx, k);
            let done = rec.certified;
            out.push(rec);
            if done {
                break;
            }
        }
        out
    };
    let solved = records.iter().filter(|r| r.bound_ratio.is_some());
    report.summary = RunSummary {
        k_star: records.iter().find(|r| r.certified).map(|r| r.k),
        first_positive_gain: records.iter().find(|r| r.delta_l.is_some_and(|g| g > 0.0)).map(|r| r.k),
        bound_constant: solved.clone().filter_map(|r| r.bound_ratio).reduce(f64::max),
        spire_constant: solved.filter_map(|r| r.spire_ratio).reduce(f64::max),
        certified: records.iter().any(|r| r.certified),
        scanned: records.len(),
        lift_start: Some(lift_start),
    };
    report.selection = Some(selection);
    report.records = records;
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:e}"))
}

/// The per-`k` table.
pub fn scan_table(report: &RunReport) -> String {
    let mut out = String::from(SCAN_HEADER);
    out.push('\n');
    for r in &report.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.k,
            fmt_opt(r.t_k),
            fmt_opt(r.norm_b),
            fmt_opt(r.norm_eps),
            fmt_opt(r.residual),
            fmt_opt(r.endpoint_err),
            fmt_opt(r.delta_l),
            r.wall_ms
        ));
    }
    out
}

/// Polylines of the spiral and the modified curve over `[t_{k+1}, t̄]` as
/// `curve,label,t,x1,x2`, and the interval markers as `label,t_lo,t_hi`.
pub fn curve_tables(spiral: &Spiral, set: &DeviceSet, per_turn: usize) -> Result<(String, String)> {
    let path = ModifiedPath::build(spiral, set)?;
    let (a, b) = (spiral.t_k(set.k + 1)?, set.final_time(spiral)?);
    let mut curves = String::from("curve,label,t,x1,x2\n");
    for (_, t, p) in ModifiedPath::identity(spiral).sample(a, b, per_turn)? {
        curves.push_str(&format!("spiral,spiral,{t:e},{:e},{:e}\n", p.x1, p.x2));
    }
    for (label, t, p) in path.sample(a, b, per_turn)? {
        curves.push_str(&format!("modified,{label},{t:e},{:e},{:e}\n", p.x1, p.x2));
    }
    let mut intervals = String::from("label,t_lo,t_hi\n");
    for piece in path.pieces() {
        let (lo, hi) = (piece.t_lo.max(a), piece.t_hi.min(b));
        if lo < hi {
            intervals.push_str(&format!("{},{lo:e},{hi:e}\n", piece.label));
        }
    }
    Ok((curves, intervals))
}

/// Regression data for a certified run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub name: String,
    pub k_star: u32,
    pub h: Vec<u32>,
    pub eta: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub delta_l: f64,
    pub endpoint_err: f64,
}

pub fn fixture(report: &RunReport) -> Option<Fixture> {
    let sel = report.selection.as_ref()?;
    let rec = report.record(report.summary.k_star?)?;
    Some(Fixture {
        name: report.name.clone(),
        k_star: rec.k,
        h: sel.params.iter().map(|p| p.h).collect(),
        eta: sel.params.iter().map(|p| p.eta).collect(),
        epsilon: rec.epsilon.clone(),
        delta_l: rec.delta_l?,
        endpoint_err: rec.endpoint_err?,
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut f = fs::File::create(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

/// Writes `summary.json`, `scan.csv` and, when a `k` was certified,
/// `curves.csv`, `intervals.csv` and `fixture.json` into `dir`.
pub fn emit_outputs(report: &RunReport, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.to_string()))?;
    written.push(write_file(dir, "summary.json", &json)?);
    written.push(write_file(dir, "scan.csv", &scan_table(report))?);
    if let (Some(sel), Some(k)) = (&report.selection, report.summary.k_star) {
        if cfg.output.curves {
            let (_, spiral) = cfg.validate()?;
            let set = report.record(k).expect("k_star has a record").device_set(sel)?;
            let (curves, intervals) = curve_tables(&spiral, &set, cfg.output.samples_per_turn)?;
            written.push(write_file(dir, "curves.csv", &curves)?);
            written.push(write_file(dir, "intervals.csv", &intervals)?);
        }
        if let Some(fx) = fixture(report) {
            let json = serde_json::to_string_pretty(&fx).map_err(|e| Error::Io(e.to_string()))?;
            written.push(write_file(dir, "fixture.json", &json)?);
        }
    }
    Ok(written)
}

/// Solves at a single `k` (ignoring the scan range) and returns the curve
/// and interval tables.
pub fn dump_curves(cfg: &ExperimentConfig, k: u32) -> Result<(KRecord, String, String)> {
    let (model, spiral) = cfg.validate()?;
    let calc = Calculus::new(&spiral, cfg.quadrature);
    let selection = select_device_params(&calc, &model, &cfg.solver)?;
    let moments = DeviceMoments::new(&calc, &model, &selection.params)?;
    let scan = ScanConfig {
        k_max: k,
        ..cfg.scan.clone()
    };
    let ctx = Context {
        calc,
        model: &model,
        selection: &selection,
        moments: &moments,
        lift_start: spiral.t_k(k + 1)?,
        scan: &scan,
        solver: &cfg.solver,
        timings: false,
    };
    let rec = evaluate_k(&ctx, k);
    if rec.epsilon.is_empty() {
        let why = rec.failure.as_ref().map_or_else(String::new, |f| format!("{f:?}"));
        return Err(Error::Precondition(format!("k = {k} could not be solved: {why}")));
    }
    let set = rec.device_set(&selection)?;
    let (curves, intervals) = curve_tables(&spiral, &set, cfg.output.samples_per_turn)?;
    Ok((rec, curves, intervals))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestCheck {
    pub name: String,
    pub cases: usize,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub checks: Vec<SelftestCheck>,
    pub sandwich: Vec<SandwichBounds>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Seeded consistency suite for the integral calculus on the power phase
/// `φ = t^(-1/2)`: the integration-by-parts identity, the translation
/// increment against direct quadrature, and the sandwich ratios.
pub fn calculus_selftest(seed: u64) -> Result<SelftestReport> {
    let spiral = Spiral::new(Phase::power(0.5, 1.0)?);
    let calc = Calculus::new(&spiral, QuadratureConfig::new(1e-15, 1e-12, 50)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let alpha = rng.gen_range(0..=4u32);
        let beta = rng.gen_range(0..=4u32);
        let omega = rng.gen_range(1.0..80.0);
        let width = rng.gen_range(0.0..4.0 * std::f64::consts::PI);
        let c = calc.lemma5(alpha, beta, &AngleWindow::new(omega, omega + width)?)?;
        if c.scale > 0.0 {
            worst = worst.max(c.residual.abs() / c.scale);
        }
    }
    checks.push(SelftestCheck {
        name: "integration-by-parts identity".into(),
        cases: 200,
        worst,
        tolerance: 1e-8,
        passed: worst <= 1e-8,
    });

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let alpha = rng.gen_range(0..=4u32);
        let beta = rng.gen_range(0..=3u32);
        let h = rng.gen_range(2..=20u32);
        let eta = rng.gen_range(0.05..0.75);
        let t = spiral.t_k_eta(h, eta)?;
        let eps = rng.gen_range(-0.5..0.5) * t;
        let exact = calc.delta_monomial(alpha, beta, h, eta, eps)?;
        let direct = calc.delta_direct(alpha, beta, h, eta, eps)?.value;
        let scale = exact.abs().max(direct.abs());
        if scale > 0.0 {
            worst = worst.max((exact - direct).abs() / scale);
        }
    }
    checks.push(SelftestCheck {
        name: "translation increment vs direct quadrature".into(),
        cases: 100,
        worst,
        tolerance: 1e-9,
        passed: worst <= 1e-9,
    });

    let hs: Vec<u32> = (2..=40).collect();
    let etas: Vec<f64> = (0..=13).map(|j| 0.05 + 0.05 * j as f64).collect();
    let mut sandwich = Vec::new();
    let mut outside = 0usize;
    let mut cases = 0usize;
    for (alpha, beta) in [(0, 0), (1, 0), (0, 1), (2, 1)] {
        let bounds = calc.sandwich_bounds(alpha, beta, &hs, &etas)?;
        for _ in 0..25 {
            let h = rng.gen_range(2..=40u32);
            let eta = rng.gen_range(0.05..0.7);
            let r = calc.stingaling_ratio(alpha, beta, h, eta)?;
            cases += 1;
            if !bounds.contains(r) {
                outside += 1;
            }
        }
        sandwich.push(bounds);
    }
    let positive = sandwich.iter().all(|b| b.lower > 0.0 && b.upper.is_finite());
    checks.push(SelftestCheck {
        name: "sandwich ratio inside measured bounds".into(),
        cases,
        worst: outside as f64,
        tolerance: 0.0,
        passed: outside == 0 && positive,
    });
    Ok(SelftestReport { checks, sandwich })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEISENBERG: &str = r#"
        name = "h"
        [model]
        weights = [1, 1, 2]
        [[model.layers]]
        i = 3
        alpha = 0
        beta = 0
        [phase]
        family = "power"
        a = 0.5
        t_max = 1.0
        [scan]
        k_min = 5
        k_max = 12
    "#;

    #[test]
    fn config_round_trip() {
        let cfg = ExperimentConfig::from_toml_str(HEISENBERG).unwrap();
        assert_eq!(cfg.scan.k_min, 5);
        assert_eq!(cfg.solver, SolverConfig::default());
        let (m, s) = cfg.validate().unwrap();
        assert_eq!(m, StratifiedModel::heisenberg());
        assert_eq!(s.t_max(), 1.0);
    }

    #[test]
    fn bad_config_is_rejected() {
        let bad = HEISENBERG.replace("weights = [1, 1, 2]", "weights = [1, 1, 3]");
        let cfg = ExperimentConfig::from_toml_str(&bad).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::InvalidModel(_))));
        assert!(ExperimentConfig::from_toml_str("model = 3").is_err());
    }

    #[test]
    fn empty_range_gives_empty_report() {
        let mut cfg = ExperimentConfig::from_toml_str(HEISENBERG).unwrap();
        cfg.scan.k_min = 9;
        cfg.scan.k_max = 8;
        let r = run_pipeline(&cfg).unwrap();
        assert!(r.records.is_empty());
        assert!(!r.summary.certified);
        assert_eq!(scan_table(&r), format!("{SCAN_HEADER}\n"));
    }

    #[test]
    fn power_split_threshold() {
        let s = Spiral::new(Phase::power(0.5, 1.0).unwrap());
        let calc = Calculus::new(&s, QuadratureConfig::default());
        let d = split_diagnostics(&calc, 3).unwrap();
        assert_eq!(d.measure_minus, 0.0);
        assert!(d.ratio_minus.is_none());
        assert!(d.ratio_plus.unwrap() >= 1.0);
        // x²/(sqrt(1+x²)+1) against x/3 and x²/3
        for j in 0..1000 {
            let x = 1.0 + j as f64 * 0.05;
            assert!(x * x / (x.hypot(1.0) + 1.0) >= x / 3.0);
            let y = j as f64 / 1000.0;
            assert!(y * y / (y.hypot(1.0) + 1.0) >= y * y / 3.0);
        }
    }

    #[test]
    fn split_with_both_parts() {
        // |tφ'| = M/|ln t| crosses 1 at t = e^{-M}
        let s = Spiral::new(Phase::scaled_double_log(3.0, 0.5).unwrap());
        let calc = Calculus::new(&s, QuadratureConfig::default());
        let k = (0..40).find(|&k| {
            let (lo, hi) = (s.t_k(k + 1), s.t_k(k));
            matches!((lo, hi), (Ok(lo), Ok(hi)) if lo < (-3.0f64).exp() && (-3.0f64).exp() < hi)
        });
        let Some(k) = k else { return };
        let d = split_diagnostics(&calc, k).unwrap();
        assert!(d.measure_plus > 0.0 && d.measure_minus > 0.0);
        assert!(d.ratio_plus.unwrap() >= 1.0 && d.ratio_minus.unwrap() >= 1.0);
    }
}
