//! Data ingestion, single-fit reports, the Monte Carlo study over the test
//! models, and plot-data export.

use std::f64::consts::PI;
use std::io::Read;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{BasisSpec, Family};
use crate::error::{LsError, Result};
use crate::fit::{Estimator, EstimatorKind, FitResult};
use crate::inference::{
    default_grid, pointwise_ci_with, uniform_band, BandConfig, BandMethod, BandResult, HcKind, VarianceModel, WeightLaw,
};
use crate::partition::{data_range, KnotRule, TensorPartition};
use crate::tuning::{dpi_select, rot_select, TuningConfig, TuningReport};

pub const SCHEMA: &str = "lspart/1";
/// Largest tolerated share of failed replications.
const MAX_FAILURE_SHARE: f64 = 0.2;

/// Covariate dimension of a test model.
pub fn model_dims(model: usize) -> Result<usize> {
    match model {
        1..=3 => Ok(1),
        4 | 5 => Ok(2),
        6 | 7 => Ok(3),
        _ => Err(LsError::InvalidModel(model)),
    }
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn tau(v: f64) -> f64 {
    let t = v - 0.5;
    t + 8.0 * t.powi(2) + 6.0 * t.powi(3) - 30.0 * t.powi(4) - 30.0 * t.powi(5)
}

/// Regression function of a test model.
pub fn dgp_eval(model: usize, x: &[f64]) -> Result<f64> {
    let d = model_dims(model)?;
    if x.len() != d {
        return Err(LsError::Config(format!(
            "model {model} takes {d} coordinates, got {}",
            x.len()
        )));
    }
    let v = match model {
        1 => {
            let s = 2.0 * x[0] - 1.0;
            (PI / 2.0 * s).sin() / (1.0 + 2.0 * s * s * (sign(s) + 1.0))
        }
        2 => {
            let s = 2.0 * x[0] - 1.0;
            (3.0 * PI / 2.0 * s).sin() / (1.0 + 18.0 * s * s * (sign(s) + 1.0))
        }
        3 => 2.0 * x[0] - 1.0 + 5.0 * std_normal_pdf(20.0 * x[0] - 10.0),
        4 => (5.0 * x[0]).sin() * (10.0 * x[1]).sin(),
        5 => (1.0 - (4.0 * x[0] - 2.0).powi(2)).powi(2) * (5.0 * x[1]).sin() / 5.0,
        6 => (1.0 - (4.0 * x[0] - 2.0).powi(2)).powi(2) * (2.0 * x[1] - 1.0) * (x[2] - 0.5),
        7 => tau(x[0]) * tau(x[1]) * tau(x[2]),
        _ => unreachable!(),
    };
    Ok(v)
}

/// `n` draws of `x ~ U[0,1]^d`, `y = mu(x) + N(0,1)`.
pub fn dgp_sample(model: usize, n: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let d = model_dims(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let e: f64 = rng.sample(StandardNormal);
        y.push(dgp_eval(model, &xi)? + e);
        x.push(xi);
    }
    Ok((x, y))
}

/// SplitMix64 output for `master + (r + 1) * golden`.
pub fn replication_seed(master: u64, r: usize) -> u64 {
    let mut z = master.wrapping_add((r as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    pub names: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn dims(&self) -> usize {
        self.names.len() - 1
    }
}

/// CSV with a header row; every column but the last is a covariate.
pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| LsError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if names.len() < 2 {
        return Err(LsError::Parse {
            line: 1,
            message: format!(
                "need at least one covariate and a response, header has {} columns",
                names.len()
            ),
        });
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| LsError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != names.len() {
            return Err(LsError::Parse {
                line,
                message: format!("expected {} fields, found {}", names.len(), rec.len()),
            });
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (field, name) in rec.iter().zip(&names) {
            let v: f64 = field.parse().map_err(|_| LsError::Parse {
                line,
                message: format!("column '{name}': '{field}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(LsError::Parse {
                    line,
                    message: format!("column '{name}': non-finite value"),
                });
            }
            vals.push(v);
        }
        y.push(vals.pop().expect("at least two columns"));
        x.push(vals);
    }
    if y.is_empty() {
        return Err(LsError::DegenerateData("no data rows".into()));
    }
    Ok(Dataset { names, x, y })
}

pub fn read_csv_file(path: &std::path::Path) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| LsError::Io(format!("{}: {e}", path.display())))?;
    read_csv(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaChoice {
    Fixed(usize),
    Rot,
    Dpi,
}

impl KappaChoice {
    pub fn name(self) -> &'static str {
        match self {
            KappaChoice::Fixed(_) => "fixed",
            KappaChoice::Rot => "rot",
            KappaChoice::Dpi => "dpi",
        }
    }
}

impl std::str::FromStr for KappaChoice {
    type Err = LsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rot" => Ok(KappaChoice::Rot),
            "dpi" => Ok(KappaChoice::Dpi),
            other => other
                .parse::<usize>()
                .ok()
                .filter(|&k| k >= 1)
                .map(KappaChoice::Fixed)
                .ok_or_else(|| LsError::Config(format!("kappa must be a positive integer, 'rot' or 'dpi', got '{s}'"))),
        }
    }
}

/// Everything that determines a fit or a simulation besides the data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub family: Family,
    pub m: usize,
    /// Defaults to `m + 1`.
    pub m_tilde: Option<usize>,
    pub knots: KnotRule,
    pub kappa: KappaChoice,
    pub kappa_max: Option<usize>,
    /// Derivative multi-index; empty means the function itself.
    pub q: Vec<usize>,
    pub estimators: Vec<Estimator>,
    pub alpha: f64,
    /// `None` skips the uniform band.
    pub band: Option<BandMethod>,
    pub draws: usize,
    /// Points per axis of the band grid.
    pub grid: Option<usize>,
    pub hc: HcKind,
    pub seed: u64,
    /// Pointwise evaluation points; defaults to the quartiles of the support diagonal.
    pub eval_points: Option<Vec<Vec<f64>>>,
    /// Support per axis; defaults to the data range for fits and `[0,1]^d` in simulations.
    pub bounds: Option<Vec<(f64, f64)>>,
    /// Replace every pointwise interval by the whole real line.
    #[serde(skip)]
    pub unbounded_intervals: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            family: Family::BSpline,
            m: 2,
            m_tilde: None,
            knots: KnotRule::EvenlySpaced,
            kappa: KappaChoice::Dpi,
            kappa_max: None,
            q: Vec::new(),
            estimators: Estimator::ALL.to_vec(),
            alpha: 0.05,
            band: Some(BandMethod::Plugin),
            draws: 1000,
            grid: None,
            hc: HcKind::Hc0,
            seed: 0,
            eval_points: None,
            bounds: None,
            unbounded_intervals: false,
        }
    }
}

impl RunConfig {
    pub fn m_tilde(&self) -> usize {
        self.m_tilde.unwrap_or(self.m + 1)
    }

    pub fn q_for(&self, d: usize) -> Vec<usize> {
        if self.q.is_empty() {
            vec![0; d]
        } else {
            self.q.clone()
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(LsError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.estimators.is_empty() {
            return Err(LsError::Config("no estimators requested".into()));
        }
        if self.family == Family::Haar && self.m != 1 {
            return Err(LsError::Config(format!("Haar basis has order 1, got m = {}", self.m)));
        }
        if self.m == 0 {
            return Err(LsError::Config("m must be positive".into()));
        }
        if self.m_tilde() <= self.m {
            return Err(LsError::Config(format!(
                "m-tilde ({}) must exceed m ({})",
                self.m_tilde(),
                self.m
            )));
        }
        if self.family == Family::Haar && self.estimators.contains(&Estimator::PluginBc) {
            return Err(LsError::Config(
                "plug-in bias correction (j = 3) is unavailable for Haar".into(),
            ));
        }
        let q = self.q_for(d);
        if q.len() != d {
            return Err(LsError::Config(format!(
                "q has {} entries but the data have {d} covariates",
                q.len()
            )));
        }
        if q.iter().sum::<usize>() >= self.m {
            return Err(LsError::Config(format!(
                "derivative {q:?} needs m > {}",
                q.iter().sum::<usize>()
            )));
        }
        if self.band.is_some() && self.draws == 0 {
            return Err(LsError::Config("B must be positive".into()));
        }
        if let Some(b) = &self.bounds {
            if b.len() != d {
                return Err(LsError::Config(format!("{} bounds for {d} covariates", b.len())));
            }
        }
        if let Some(pts) = &self.eval_points {
            if pts.iter().any(|p| p.len() != d) {
                return Err(LsError::Config(format!("evaluation points must have {d} coordinates")));
            }
        }
        Ok(())
    }

    fn band_config(&self, method: BandMethod, seed: u64) -> BandConfig {
        BandConfig {
            method,
            draws: self.draws,
            alpha: self.alpha,
            hc: self.hc,
            seed,
            weights: WeightLaw::Rademacher,
        }
    }

    /// The default `kappa_max`: 5 for three or more covariates.
    fn effective_kappa_max(&self, d: usize) -> Option<usize> {
        self.kappa_max.or(if d >= 3 { Some(5) } else { None })
    }
}

fn default_eval_points(bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    [0.25, 0.5, 0.75]
        .iter()
        .map(|t| bounds.iter().map(|(lo, hi)| lo + t * (hi - lo)).collect())
        .collect()
}

/// Number of cells per axis plus the selector diagnostics, if any.
pub fn select_kappa(
    cfg: &RunConfig,
    x: &[Vec<f64>],
    y: &[f64],
    bounds: &[(f64, f64)],
) -> Result<(usize, Option<TuningReport>)> {
    let d = bounds.len();
    match cfg.kappa {
        KappaChoice::Fixed(k) => Ok((k, None)),
        choice => {
            let tc = TuningConfig {
                family: cfg.family,
                m: cfg.m,
                q: cfg.q_for(d),
                rule: cfg.knots,
                bounds: Some(bounds.to_vec()),
                kappa_max: cfg.effective_kappa_max(d),
                hc: cfg.hc,
            };
            let report = if choice == KappaChoice::Rot {
                rot_select(x, y, &tc)?
            } else {
                dpi_select(x, y, &tc)?
            };
            Ok((report.kappa, Some(report)))
        }
    }
}

/// Partition, bases and every estimator at `kappa` cells per axis.
pub fn fit_at(cfg: &RunConfig, x: &[Vec<f64>], y: &[f64], bounds: &[(f64, f64)], kappa: usize) -> Result<FitResult> {
    let d = bounds.len();
    let part = TensorPartition::from_rule(cfg.knots, &vec![kappa; d], Some(bounds), Some(x))?;
    let spec = BasisSpec::new(cfg.family, cfg.m, part)?;
    let kind = EstimatorKind::with_bc_order(spec, cfg.m_tilde())?;
    FitResult::solve(&kind, x, y)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointReport {
    pub x: Vec<f64>,
    pub estimate: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandReport {
    pub method: BandMethod,
    pub draws: usize,
    pub critical_value: f64,
    pub coarse_grid: bool,
    pub grid: Vec<Vec<f64>>,
    pub estimate: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub j: usize,
    pub points: Vec<PointReport>,
    pub band: Option<BandReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub schema: &'static str,
    pub config: RunConfig,
    pub n: usize,
    pub d: usize,
    pub kappa: usize,
    pub tuning: Option<TuningReport>,
    pub knots: Vec<Vec<f64>>,
    pub basis_dim: usize,
    pub estimators: Vec<EstimatorReport>,
    pub warnings: Vec<String>,
    /// Wall-clock time; the only field that varies between identical runs.
    pub runtime_ms: u64,
    #[serde(skip)]
    pub bands: Vec<BandResult>,
}

/// Fit every requested estimator to a dataset and collect intervals and bands.
pub fn run_fit(cfg: &RunConfig, data: &Dataset) -> Result<FitReport> {
    let start = Instant::now();
    let d = data.dims();
    cfg.validate(d)?;
    if data.x.iter().any(|r| r.len() != d) {
        return Err(LsError::DegenerateData("ragged covariate rows".into()));
    }
    let bounds: Vec<(f64, f64)> = match &cfg.bounds {
        Some(b) => b.clone(),
        None => (0..d)
            .map(|l| data_range(&data.x.iter().map(|v| v[l]).collect::<Vec<_>>()))
            .collect::<Result<_>>()?,
    };
    let (kappa, tuning) = select_kappa(cfg, &data.x, &data.y, &bounds)?;
    let fit = fit_at(cfg, &data.x, &data.y, &bounds, kappa)?;
    let q = cfg.q_for(d);
    let points = cfg.eval_points.clone().unwrap_or_else(|| default_eval_points(&bounds));
    let mut warnings = Vec::new();
    if let Some(t) = &tuning {
        if t.fell_back {
            warnings.push("direct plug-in pilot fit failed; used the rule-of-thumb choice".to_string());
        }
        if t.clamped {
            warnings.push(format!("selected number of cells capped at {}", t.kappa));
        }
    }
    let grid = match cfg.band {
        Some(_) => default_grid(fit.kind.main.partition(), cfg.grid)?,
        None => Vec::new(),
    };
    let mut estimators = Vec::new();
    let mut bands = Vec::new();
    for &j in &cfg.estimators {
        let vm = VarianceModel::new(&fit, j, cfg.hc)?;
        let pts = points
            .iter()
            .map(|x| {
                let ci = pointwise_ci_with(&fit, &vm, x, &q, cfg.alpha)?;
                Ok(PointReport {
                    x: x.clone(),
                    estimate: ci.estimate,
                    se: ci.se,
                    lo: ci.lo,
                    hi: ci.hi,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let band = match cfg.band {
            Some(method) => {
                let b = uniform_band(&fit, &grid, &q, j, &cfg.band_config(method, cfg.seed))?;
                if b.coarse_grid && !warnings.iter().any(|w| w.starts_with("band grid")) {
                    warnings.push("band grid is coarser than half the smallest cell".to_string());
                }
                let rep = BandReport {
                    method,
                    draws: cfg.draws,
                    critical_value: b.critical_value,
                    coarse_grid: b.coarse_grid,
                    grid: b.grid.clone(),
                    estimate: b.estimate.clone(),
                    lo: b.lo.clone(),
                    hi: b.hi.clone(),
                };
                bands.push(b);
                Some(rep)
            }
            None => None,
        };
        estimators.push(EstimatorReport {
            j: j.index(),
            points: pts,
            band,
        });
    }
    Ok(FitReport {
        schema: SCHEMA,
        config: cfg.clone(),
        n: data.y.len(),
        d,
        kappa,
        tuning,
        knots: fit.kind.main.partition().all_knots().to_vec(),
        basis_dim: fit.kind.main.dim(),
        estimators,
        warnings,
        runtime_ms: start.elapsed().as_millis() as u64,
        bands,
    })
}

/// Plot data for a band: `x` (or `x1..xd`), `estimate`, `lo`, `hi` and
/// optionally `truth`, with 17 significant digits.
pub fn emit_plotdata(band: &BandResult, truth: Option<&[f64]>) -> String {
    let d = band.grid.first().map_or(1, Vec::len);
    let mut header: Vec<String> = if d == 1 {
        vec!["x".into()]
    } else {
        (1..=d).map(|l| format!("x{l}")).collect()
    };
    header.extend(["estimate", "lo", "hi"].map(String::from));
    if truth.is_some() {
        header.push("truth".into());
    }
    let mut out = header.join(",");
    out.push('\n');
    for (r, x) in band.grid.iter().enumerate() {
        let mut fields: Vec<String> = x.iter().map(|v| format!("{v:.16e}")).collect();
        for v in [band.estimate[r], band.lo[r], band.hi[r]] {
            fields.push(format!("{v:.16e}"));
        }
        if let Some(t) = truth {
            fields.push(format!("{:.16e}", t[r]));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Per-replication results for one estimator.
#[derive(Debug, Clone, PartialEq)]
struct EstimatorOutcome {
    estimate: Vec<f64>,
    se: Vec<f64>,
    covered: Vec<bool>,
    length: Vec<f64>,
    band_covered_at: Vec<bool>,
    band_width: f64,
    band_covered: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct ReplicationOutcome {
    kappa: usize,
    per_estimator: Vec<EstimatorOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSpec {
    pub model: usize,
    pub n: usize,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointMetrics {
    pub x: Vec<f64>,
    pub truth: f64,
    /// Monte Carlo mean of `estimate - truth`.
    pub bias: f64,
    pub rmse: f64,
    /// Monte Carlo variance of the estimate.
    pub variance: f64,
    /// Mean of the squared standard errors.
    pub mean_se2: f64,
    /// Coverage rate of the pointwise interval.
    pub cr: f64,
    /// Mean interval length.
    pub il: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandMetrics {
    /// Share of grid points whose coverage is at least `1 - alpha`.
    pub cp: f64,
    /// Mean absolute deviation of grid-point coverage from `1 - alpha`.
    pub ace: f64,
    /// Mean band width.
    pub aw: f64,
    /// Share of replications covering the whole grid.
    pub ucr: f64,
    /// Smallest coverage over the grid.
    pub min_pointwise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub model: usize,
    pub j: usize,
    pub selector: &'static str,
    pub points: Vec<PointMetrics>,
    pub band: Option<BandMetrics>,
    pub kappa_mean: f64,
    pub kappa_median: f64,
    pub kappa_sd: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub schema: &'static str,
    pub config: RunConfig,
    pub spec: SimulationSpec,
    pub completed: usize,
    pub failures: usize,
    pub rows: Vec<MetricsRow>,
    pub runtime_ms: u64,
}

fn run_replication(
    cfg: &RunConfig,
    spec: &SimulationSpec,
    bounds: &[(f64, f64)],
    points: &[Vec<f64>],
    r: usize,
) -> Result<ReplicationOutcome> {
    let d = bounds.len();
    let seed = replication_seed(cfg.seed, r);
    let (x, y) = dgp_sample(spec.model, spec.n, seed)?;
    let (kappa, _) = select_kappa(cfg, &x, &y, bounds)?;
    let fit = fit_at(cfg, &x, &y, bounds, kappa)?;
    let q = cfg.q_for(d);
    let derivative = q.iter().any(|&v| v > 0);
    let truth_at = |p: &[f64]| -> Result<f64> {
        if derivative {
            numeric_derivative(spec.model, p, &q)
        } else {
            dgp_eval(spec.model, p)
        }
    };
    let truth: Vec<f64> = points.iter().map(|p| truth_at(p)).collect::<Result<_>>()?;
    let grid = match cfg.band {
        Some(_) => default_grid(fit.kind.main.partition(), cfg.grid)?,
        None => Vec::new(),
    };
    let grid_truth: Vec<f64> = grid.iter().map(|p| truth_at(p)).collect::<Result<_>>()?;
    let mut per_estimator = Vec::with_capacity(cfg.estimators.len());
    for &j in &cfg.estimators {
        let vm = VarianceModel::new(&fit, j, cfg.hc)?;
        let mut out = EstimatorOutcome {
            estimate: Vec::new(),
            se: Vec::new(),
            covered: Vec::new(),
            length: Vec::new(),
            band_covered_at: Vec::new(),
            band_width: 0.0,
            band_covered: false,
        };
        for (p, &t) in points.iter().zip(&truth) {
            let ci = pointwise_ci_with(&fit, &vm, p, &q, cfg.alpha)?;
            let (lo, hi) = if cfg.unbounded_intervals {
                (f64::NEG_INFINITY, f64::INFINITY)
            } else {
                (ci.lo, ci.hi)
            };
            out.estimate.push(ci.estimate);
            out.se.push(ci.se);
            out.covered.push(lo <= t && t <= hi);
            out.length.push(hi - lo);
        }
        if let Some(method) = cfg.band {
            let band = uniform_band(&fit, &grid, &q, j, &cfg.band_config(method, seed))?;
            out.band_covered_at = band
                .lo
                .iter()
                .zip(&band.hi)
                .zip(&grid_truth)
                .map(|((l, h), t)| l <= t && t <= h)
                .collect();
            out.band_covered = out.band_covered_at.iter().all(|&c| c);
            out.band_width = band.average_width();
        }
        per_estimator.push(out);
    }
    Ok(ReplicationOutcome { kappa, per_estimator })
}

/// Central difference of the model function for derivative targets.
fn numeric_derivative(model: usize, x: &[f64], q: &[usize]) -> Result<f64> {
    let h: f64 = 1e-3;
    let mut total = 0.0;
    let d = x.len();
    // tensor of one-dimensional central-difference stencils
    let stencils: Vec<Vec<(f64, f64)>> = q
        .iter()
        .map(|&k| match k {
            0 => vec![(0.0, 1.0)],
            1 => vec![(-h, -0.5 / h), (h, 0.5 / h)],
            2 => vec![(-h, 1.0 / (h * h)), (0.0, -2.0 / (h * h)), (h, 1.0 / (h * h))],
            _ => vec![
                (-2.0 * h, -0.5 / h.powi(3)),
                (-h, 1.0 / h.powi(3)),
                (h, -1.0 / h.powi(3)),
                (2.0 * h, 0.5 / h.powi(3)),
            ],
        })
        .collect();
    let sizes: Vec<usize> = stencils.iter().map(Vec::len).collect();
    let count: usize = sizes.iter().product();
    for flat in 0..count {
        let mut rem = flat;
        let mut p = x.to_vec();
        let mut w = 1.0;
        for l in (0..d).rev() {
            let (off, c) = stencils[l][rem % sizes[l]];
            rem /= sizes[l];
            p[l] += off;
            w *= c;
        }
        total += w * dgp_eval(model, &p)?;
    }
    Ok(total)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut k = 0usize;
    for x in v {
        s += x;
        k += 1;
    }
    s / k as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

/// Monte Carlo study over a test model. Replications run in parallel when
/// `parallel` is set; the metrics are identical either way.
pub fn run_simulation_with(cfg: &RunConfig, spec: &SimulationSpec, parallel: bool) -> Result<SimulationReport> {
    let start = Instant::now();
    let d = model_dims(spec.model)?;
    cfg.validate(d)?;
    if spec.reps == 0 {
        return Err(LsError::Config("at least one replication is required".into()));
    }
    if spec.n == 0 {
        return Err(LsError::Config("sample size must be positive".into()));
    }
    let bounds = cfg.bounds.clone().unwrap_or_else(|| vec![(0.0, 1.0); d]);
    let points = cfg.eval_points.clone().unwrap_or_else(|| default_eval_points(&bounds));
    let job = |r: usize| run_replication(cfg, spec, &bounds, &points, r);
    let outcomes: Vec<Result<ReplicationOutcome>> = if parallel {
        (0..spec.reps).into_par_iter().map(job).collect()
    } else {
        (0..spec.reps).map(job).collect()
    };
    let failures = outcomes.iter().filter(|o| o.is_err()).count();
    if failures as f64 > MAX_FAILURE_SHARE * spec.reps as f64 {
        return Err(LsError::TooManyFailures {
            failed: failures,
            total: spec.reps,
        });
    }
    let ok: Vec<&ReplicationOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    if ok.is_empty() {
        return Err(LsError::TooManyFailures {
            failed: failures,
            total: spec.reps,
        });
    }
    let kappas: Vec<f64> = ok.iter().map(|o| o.kappa as f64).collect();
    let kappa_mean = mean(kappas.iter().copied());
    let kappa_sd = if kappas.len() > 1 {
        (kappas.iter().map(|k| (k - kappa_mean).powi(2)).sum::<f64>() / (kappas.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let kappa_median = median(&kappas);
    let truth: Vec<f64> = points
        .iter()
        .map(|p| {
            let q = cfg.q_for(d);
            if q.iter().any(|&v| v > 0) {
                numeric_derivative(spec.model, p, &q)
            } else {
                dgp_eval(spec.model, p)
            }
        })
        .collect::<Result<_>>()?;
    let level = 1.0 - cfg.alpha;
    let mut rows = Vec::new();
    for (e, &j) in cfg.estimators.iter().enumerate() {
        let outs: Vec<&EstimatorOutcome> = ok.iter().map(|o| &o.per_estimator[e]).collect();
        let pts = points
            .iter()
            .enumerate()
            .map(|(p, x)| {
                let est: Vec<f64> = outs.iter().map(|o| o.estimate[p]).collect();
                let m = mean(est.iter().copied());
                let variance = if est.len() > 1 {
                    est.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (est.len() - 1) as f64
                } else {
                    0.0
                };
                PointMetrics {
                    x: x.clone(),
                    truth: truth[p],
                    bias: m - truth[p],
                    rmse: mean(est.iter().map(|v| (v - truth[p]).powi(2))).sqrt(),
                    variance,
                    mean_se2: mean(outs.iter().map(|o| o.se[p] * o.se[p])),
                    cr: mean(outs.iter().map(|o| f64::from(u8::from(o.covered[p])))),
                    il: mean(outs.iter().map(|o| o.length[p])),
                }
            })
            .collect();
        let band = cfg.band.map(|_| {
            let g = outs[0].band_covered_at.len();
            let cov: Vec<f64> = (0..g)
                .map(|k| mean(outs.iter().map(|o| f64::from(u8::from(o.band_covered_at[k])))))
                .collect();
            let m = BandMetrics {
                cp: mean(cov.iter().map(|&c| f64::from(u8::from(c >= level - 1e-12)))),
                ace: mean(cov.iter().map(|c| (c - level).abs())),
                aw: mean(outs.iter().map(|o| o.band_width)),
                ucr: mean(outs.iter().map(|o| f64::from(u8::from(o.band_covered)))),
                min_pointwise: cov.iter().copied().fold(f64::INFINITY, f64::min),
            };
            assert!(
                m.ucr <= m.min_pointwise + 1e-12,
                "uniform coverage above pointwise coverage"
            );
            m
        });
        rows.push(MetricsRow {
            model: spec.model,
            j: j.index(),
            selector: cfg.kappa.name(),
            points: pts,
            band,
            kappa_mean,
            kappa_median,
            kappa_sd,
            failures,
        });
    }
    Ok(SimulationReport {
        schema: SCHEMA,
        config: cfg.clone(),
        spec: spec.clone(),
        completed: ok.len(),
        failures,
        rows,
        runtime_ms: start.elapsed().as_millis() as u64,
    })
}

pub fn run_simulation(cfg: &RunConfig, spec: &SimulationSpec) -> Result<SimulationReport> {
    run_simulation_with(cfg, spec, true)
}

/// One line per (estimator, evaluation point).
pub fn metrics_csv(report: &SimulationReport) -> String {
    let mut out = String::from(
        "model,j,selector,x,truth,bias,rmse,cr,il,cp,ace,aw,ucr,kappa_mean,kappa_median,kappa_sd,failures\n",
    );
    for row in &report.rows {
        for p in &row.points {
            let x: Vec<String> = p.x.iter().map(|v| v.to_string()).collect();
            let band = match &row.band {
                Some(b) => format!("{},{},{},{}", b.cp, b.ace, b.aw, b.ucr),
                None => ",,,".to_string(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                row.model,
                row.j,
                row.selector,
                x.join(";"),
                p.truth,
                p.bias,
                p.rmse,
                p.cr,
                p.il,
                band,
                row.kappa_mean,
                row.kappa_median,
                row.kappa_sd,
                row.failures
            ));
        }
    }
    out
}

/// Serialize a report with the runtime field zeroed, for comparing runs.
pub fn canonical_json<T: Serialize>(report: &T) -> String {
    let mut v = serde_json::to_value(report).expect("report serializes");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("runtime_ms");
    }
    serde_json::to_string(&v).expect("value serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_values() {
        assert_eq!(dgp_eval(1, &[0.5]).unwrap(), 0.0);
        assert!((dgp_eval(3, &[0.5]).unwrap() - 5.0 / (2.0 * PI).sqrt()).abs() < 1e-12);
        assert!((dgp_eval(3, &[0.5]).unwrap() - 1.99471).abs() < 1e-5);
        for x2 in [0.0, 0.3, 0.9] {
            assert_eq!(dgp_eval(4, &[0.0, x2]).unwrap(), 0.0);
        }
        assert_eq!(dgp_eval(7, &[0.5, 0.2, 0.9]).unwrap(), 0.0);
        assert!(matches!(dgp_eval(8, &[0.5]), Err(LsError::InvalidModel(8))));
        assert!(dgp_eval(4, &[0.5]).is_err());
        // left half of model 1 is the plain sine
        assert!((dgp_eval(1, &[0.25]).unwrap() - (-PI / 4.0).sin()).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_seeded() {
        let a = dgp_sample(5, 50, 7).unwrap();
        let b = dgp_sample(5, 50, 7).unwrap();
        let c = dgp_sample(5, 50, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.0.iter().flatten().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn replication_seeds_differ() {
        let s: Vec<u64> = (0..100).map(|r| replication_seed(42, r)).collect();
        let mut u = s.clone();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), 100);
    }

    #[test]
    fn csv_parsing() {
        let d = read_csv("x1,y\n0.1,1\n0.2, 2.5\n".as_bytes()).unwrap();
        assert_eq!(d.x, vec![vec![0.1], vec![0.2]]);
        assert_eq!(d.y, vec![1.0, 2.5]);
        let err = read_csv("x1,y\na,b\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LsError::Parse { line: 2, .. }), "{err:?}");
        let err = read_csv("x1,y\n1,2\n3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LsError::Parse { line: 3, .. }), "{err:?}");
        assert!(read_csv("x1,y\n".as_bytes()).is_err());
    }

    #[test]
    fn kappa_choice_parse() {
        assert_eq!("dpi".parse::<KappaChoice>().unwrap(), KappaChoice::Dpi);
        assert_eq!("7".parse::<KappaChoice>().unwrap(), KappaChoice::Fixed(7));
        assert!("0".parse::<KappaChoice>().is_err());
        assert!("many".parse::<KappaChoice>().is_err());
    }

    #[test]
    fn numeric_derivative_matches_closed_form() {
        // model 4: d/dx2 = 10 sin(5 x1) cos(10 x2)
        let x = [0.3, 0.4];
        let expect = 10.0 * (1.5f64).sin() * (4.0f64).cos();
        // truncation error is about h^2 |f'''| / 6 = 1.7e-4
        assert!((numeric_derivative(4, &x, &[0, 1]).unwrap() - expect).abs() < 5e-4);
    }

    #[test]
    fn constant_response_fit_report() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 199.0]).collect();
        let data = Dataset {
            names: vec!["x1".into(), "y".into()],
            x,
            y: vec![2.5; 200],
        };
        let cfg = RunConfig {
            kappa: KappaChoice::Fixed(4),
            draws: 50,
            ..Default::default()
        };
        let rep = run_fit(&cfg, &data).unwrap();
        for e in &rep.estimators {
            for p in &e.points {
                assert!((p.estimate - 2.5).abs() < 1e-10);
                assert!(p.se < 1e-6);
            }
        }
    }

    #[test]
    fn unbounded_intervals_always_cover() {
        let cfg = RunConfig {
            kappa: KappaChoice::Fixed(5),
            estimators: vec![Estimator::Classical],
            band: None,
            unbounded_intervals: true,
            ..Default::default()
        };
        let spec = SimulationSpec {
            model: 1,
            n: 200,
            reps: 5,
        };
        let rep = run_simulation(&cfg, &spec).unwrap();
        assert!(rep.rows[0].points.iter().all(|p| p.cr == 1.0));
    }

    #[test]
    fn simulation_parallel_equals_serial() {
        let cfg = RunConfig {
            kappa: KappaChoice::Rot,
            estimators: vec![Estimator::Classical, Estimator::LeastSquaresBc],
            draws: 100,
            seed: 3,
            ..Default::default()
        };
        let spec = SimulationSpec {
            model: 2,
            n: 300,
            reps: 8,
        };
        let a = run_simulation_with(&cfg, &spec, true).unwrap();
        let b = run_simulation_with(&cfg, &spec, false).unwrap();
        assert_eq!(canonical_json(&a), canonical_json(&b));
    }

    #[test]
    fn too_many_failures_abort() {
        // far more cells than observations: every replication is rank deficient
        let cfg = RunConfig {
            kappa: KappaChoice::Fixed(400),
            band: None,
            ..Default::default()
        };
        let spec = SimulationSpec {
            model: 1,
            n: 50,
            reps: 4,
        };
        assert!(matches!(
            run_simulation(&cfg, &spec),
            Err(LsError::TooManyFailures { failed: 4, total: 4 })
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate(1).is_ok());
        cfg.alpha = 1.0;
        assert!(matches!(cfg.validate(1), Err(LsError::Config(_))));
        let cfg = RunConfig {
            m_tilde: Some(2),
            ..Default::default()
        };
        assert!(cfg.validate(1).is_err());
        let cfg = RunConfig {
            family: Family::Haar,
            m: 1,
            ..Default::default()
        };
        assert!(cfg.validate(1).is_err());
        let cfg = RunConfig {
            q: vec![0, 0],
            ..Default::default()
        };
        assert!(cfg.validate(1).is_err());
    }

    #[test]
    fn plotdata_format() {
        let band = BandResult {
            grid: vec![vec![0.0], vec![1.0 / 3.0]],
            estimate: vec![1.0, 0.1],
            se: vec![0.1, 0.1],
            lo: vec![0.5, -0.2],
            hi: vec![1.5, 0.4],
            critical_value: 2.5,
            pointwise_critical_value: 1.96,
            coarse_grid: false,
        };
        let s = emit_plotdata(&band, Some(&[1.0, 0.0]));
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "x,estimate,lo,hi,truth");
        assert_eq!(lines.len(), 3);
        let x: f64 = lines[2].split(',').next().unwrap().parse().unwrap();
        assert_eq!(x, 1.0 / 3.0);
    }
}
