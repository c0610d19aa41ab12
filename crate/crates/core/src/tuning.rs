//! Data-driven choice of the number of cells per axis.
//!
//! Both selectors minimize the IMSE approximation
//! `kappa^{-2(m-[q])} B + kappa^{d+2[q]} V / n`, giving
//! `kappa = ceil((2(m-[q]) B / ((d+2[q]) V))^{1/(2m+d)} n^{1/(2m+d)})`.
//! The rule of thumb takes `B` and `V` from a global polynomial fit; the
//! direct plug-in estimates them from a pilot partitioning fit.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::basis::{binomial, monomial_exponents, BasisSpec, Family};
use crate::bias::{gauss_legendre, LeadingErrorModel};
use crate::error::{LsError, Result};
use crate::fit::{Estimator, EstimatorKind, FitResult};
use crate::inference::{HcKind, VarianceModel};
use crate::partition::{data_range, KnotRule, TensorPartition};

/// Extra degree of the global polynomial beyond `m`.
const ROT_EXTRA_DEGREE: usize = 4;
const SIGMA2_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Selector {
    RuleOfThumb,
    DirectPlugIn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningConfig {
    pub family: Family,
    pub m: usize,
    pub q: Vec<usize>,
    pub rule: KnotRule,
    /// Support per axis; defaults to the data range.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub kappa_max: Option<usize>,
    pub hc: HcKind,
}

impl TuningConfig {
    pub fn new(family: Family, m: usize, dims: usize) -> Self {
        Self {
            family,
            m,
            q: vec![0; dims],
            rule: KnotRule::EvenlySpaced,
            bounds: None,
            kappa_max: None,
            hc: HcKind::Hc0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningReport {
    pub selector: Selector,
    pub kappa: usize,
    pub kappa_rot: usize,
    /// Bias constant `B`.
    pub bias_constant: f64,
    /// Variance constant `V`.
    pub variance_constant: f64,
    /// Direct plug-in fell back to the rule of thumb.
    pub fell_back: bool,
    /// The unconstrained choice exceeded `kappa_max`.
    pub clamped: bool,
}

/// `int_{[0,1]^d} shape(u1, s, z) shape(u2, s, z) dz` by tensor Gauss-Legendre.
pub fn eta_constant(model: &LeadingErrorModel, u1: &[usize], u2: &[usize], s: &[usize]) -> Result<f64> {
    let (nodes, weights) = gauss_legendre(20);
    let d = model.dims;
    let total = nodes.len().pow(d as u32);
    let mut sum = 0.0;
    let mut z = vec![0.0; d];
    for flat in 0..total {
        let mut rem = flat;
        let mut w = 1.0;
        for l in (0..d).rev() {
            let i = rem % nodes.len();
            rem /= nodes.len();
            z[l] = nodes[i];
            w *= weights[i];
        }
        sum += w * model.shape_fn(u1, s, &z)? * model.shape_fn(u2, s, &z)?;
    }
    Ok(sum)
}

/// Global polynomial of fixed total degree in coordinates `s = 2z - 1`,
/// `z` the position normalized to `[0, 1]` within the bounds.
#[derive(Debug, Clone)]
pub struct GlobalPoly {
    exponents: Vec<Vec<usize>>,
    bounds: Vec<(f64, f64)>,
    coef: Vec<f64>,
}

impl GlobalPoly {
    fn design(exponents: &[Vec<usize>], bounds: &[(f64, f64)], x: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(x.len(), exponents.len(), |i, k| {
            exponents[k]
                .iter()
                .enumerate()
                .map(|(l, &a)| {
                    let (lo, hi) = bounds[l];
                    let s = 2.0 * (x[i][l] - lo) / (hi - lo) - 1.0;
                    s.powi(a as i32)
                })
                .product()
        })
    }

    /// Least-squares fits of every response in `ys` on a shared design.
    pub fn fit_many(x: &[Vec<f64>], ys: &[&[f64]], degree: usize, bounds: &[(f64, f64)]) -> Result<Vec<Self>> {
        let d = bounds.len();
        let exponents = monomial_exponents(d, degree);
        if x.len() <= exponents.len() {
            return Err(LsError::DegenerateData(format!(
                "global polynomial of degree {degree} needs more than {} observations",
                exponents.len()
            )));
        }
        let a = Self::design(&exponents, bounds, x);
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        ys.iter()
            .map(|y| {
                let b = DVector::from_column_slice(y);
                let coef = svd
                    .solve(&b, 1e-12 * smax)
                    .map_err(|e| LsError::DegenerateData(e.to_string()))?;
                Ok(Self {
                    exponents: exponents.clone(),
                    bounds: bounds.to_vec(),
                    coef: coef.as_slice().to_vec(),
                })
            })
            .collect()
    }

    /// `d^u f` with respect to the normalized coordinates `z`.
    pub fn eval(&self, x: &[f64], u: &[usize]) -> f64 {
        let mut total = 0.0;
        for (alpha, c) in self.exponents.iter().zip(&self.coef) {
            let mut term = *c;
            for l in 0..x.len() {
                let (a, k) = (alpha[l], u[l]);
                if k > a {
                    term = 0.0;
                    break;
                }
                let (lo, hi) = self.bounds[l];
                let s = 2.0 * (x[l] - lo) / (hi - lo) - 1.0;
                let falling: f64 = ((a - k + 1)..=a).map(|v| v as f64).product();
                term *= falling * 2f64.powi(k as i32) * s.powi((a - k) as i32);
            }
            total += term;
        }
        total
    }
}

fn resolve_bounds(x: &[Vec<f64>], cfg: &TuningConfig) -> Result<Vec<(f64, f64)>> {
    match &cfg.bounds {
        Some(b) => Ok(b.clone()),
        None => {
            let d = cfg.q.len();
            (0..d)
                .map(|l| data_range(&x.iter().map(|v| v[l]).collect::<Vec<_>>()))
                .collect()
        }
    }
}

fn check_inputs(x: &[Vec<f64>], y: &[f64], cfg: &TuningConfig) -> Result<()> {
    if x.is_empty() || x.len() != y.len() {
        return Err(LsError::DegenerateData(format!(
            "{} covariate rows but {} responses",
            x.len(),
            y.len()
        )));
    }
    if x[0].len() != cfg.q.len() {
        return Err(LsError::InvalidBasis(format!(
            "derivative has {} coordinates, data has {}",
            cfg.q.len(),
            x[0].len()
        )));
    }
    let qq: usize = cfg.q.iter().sum();
    if qq >= cfg.m {
        return Err(LsError::UnsupportedDerivative {
            deriv: cfg.q.clone(),
            order: cfg.m,
        });
    }
    Ok(())
}

/// `ceil((2(m-[q]) B / ((d+2[q]) V))^{1/(2m+d)} n^{1/(2m+d)})`, clamped to `[1, n]`.
pub fn optimal_kappa(m: usize, q_total: usize, d: usize, n: usize, b: f64, v: f64) -> usize {
    let e = 1.0 / (2 * m + d) as f64;
    let ratio = 2.0 * (m - q_total) as f64 * b / ((d + 2 * q_total) as f64 * v);
    let k = (ratio.powf(e) * (n as f64).powf(e)).ceil();
    if k.is_nan() {
        1
    } else {
        k.clamp(1.0, n.max(1) as f64) as usize
    }
}

fn clamp(kappa: usize, cfg: &TuningConfig) -> (usize, bool) {
    match cfg.kappa_max {
        Some(max) if kappa > max => (max, true),
        _ => (kappa, false),
    }
}

/// Rule-of-thumb choice from a global polynomial of degree `m + 4`.
pub fn rot_select(x: &[Vec<f64>], y: &[f64], cfg: &TuningConfig) -> Result<TuningReport> {
    check_inputs(x, y, cfg)?;
    let d = cfg.q.len();
    let n = y.len();
    let bounds = resolve_bounds(x, cfg)?;
    let y2: Vec<f64> = y.iter().map(|v| v * v).collect();
    let fits = GlobalPoly::fit_many(x, &[y, &y2], cfg.m + ROT_EXTRA_DEGREE, &bounds)?;
    let (mu, mu2) = (&fits[0], &fits[1]);

    let model = LeadingErrorModel::new(cfg.family, cfg.m, d)?;
    let zero = vec![0; d];
    let derivs: Vec<Vec<f64>> = model
        .lambda
        .iter()
        .map(|u| x.iter().map(|xi| mu.eval(xi, u)).collect())
        .collect();
    let mut b = 0.0;
    for (a, u1) in model.lambda.iter().enumerate() {
        for (c, u2) in model.lambda.iter().enumerate() {
            let eta = eta_constant(&model, u1, u2, &zero)?;
            if eta == 0.0 {
                continue;
            }
            let cross = derivs[a].iter().zip(&derivs[c]).map(|(p, q)| p * q).sum::<f64>() / n as f64;
            b += eta * cross;
        }
    }
    let sigma2 = x
        .iter()
        .map(|xi| {
            let m1 = mu.eval(xi, &zero);
            (mu2.eval(xi, &zero) - m1 * m1).max(SIGMA2_FLOOR)
        })
        .sum::<f64>()
        / n as f64;
    let terms = match cfg.family {
        Family::PiecewisePoly => binomial(d + cfg.m - 1, cfg.m - 1),
        _ => 1.0,
    };
    let v = sigma2 * terms;
    let q_total = cfg.q.iter().sum();
    let (kappa, clamped) = clamp(optimal_kappa(cfg.m, q_total, d, n, b, v), cfg);
    Ok(TuningReport {
        selector: Selector::RuleOfThumb,
        kappa,
        kappa_rot: kappa,
        bias_constant: b,
        variance_constant: v,
        fell_back: false,
        clamped,
    })
}

/// Squared-bias and variance averages over `points`:
/// `mean (B_{m,q}(x) - gamma_{q,0}(x)' E_n[p B_{m,0}])^2` and `mean Omega_0(x)`.
pub fn imse_components(fit: &FitResult, points: &[Vec<f64>], q: &[usize], hc: HcKind) -> Result<(f64, f64)> {
    let vm = VarianceModel::new(fit, Estimator::Classical, hc)?;
    let mut bias = 0.0;
    let mut var = 0.0;
    for x in points {
        let b = fit.leading_bias(x, q)? - fit.projected_bias(x, q)?;
        bias += b * b;
        var += vm.omega(&fit.gamma_hat(x, q, Estimator::Classical)?);
    }
    let g = points.len() as f64;
    Ok((bias / g, var / g))
}

fn pilot_fit(x: &[Vec<f64>], y: &[f64], cfg: &TuningConfig, kappa: usize) -> Result<FitResult> {
    let d = cfg.q.len();
    let bounds = resolve_bounds(x, cfg)?;
    let part = TensorPartition::from_rule(cfg.rule, &vec![kappa; d], Some(&bounds), Some(x))?;
    let spec = BasisSpec::new(cfg.family, cfg.m, part)?;
    let kind = EstimatorKind::with_default_bc(spec)?;
    FitResult::solve(&kind, x, y)
}

/// Direct plug-in: estimate the IMSE constants from a pilot fit at the
/// rule-of-thumb partition. Falls back to the rule of thumb when the pilot
/// fit is rank deficient.
pub fn dpi_select(x: &[Vec<f64>], y: &[f64], cfg: &TuningConfig) -> Result<TuningReport> {
    let rot = rot_select(x, y, cfg)?;
    let k0 = rot.kappa;
    let fit = match pilot_fit(x, y, cfg, k0) {
        Ok(f) => f,
        Err(LsError::RankDeficient { .. }) | Err(LsError::DegenerateData(_)) => {
            return Ok(TuningReport {
                selector: Selector::DirectPlugIn,
                fell_back: true,
                ..rot
            })
        }
        Err(e) => return Err(e),
    };
    let d = cfg.q.len();
    let q_total: usize = cfg.q.iter().sum();
    let (bk, vk) = imse_components(&fit, x, &cfg.q, cfg.hc)?;
    let kf = k0 as f64;
    let b = bk * kf.powi(2 * (cfg.m - q_total) as i32);
    let v = vk * kf.powi(-((d + 2 * q_total) as i32));
    let (kappa, clamped) = clamp(optimal_kappa(cfg.m, q_total, d, y.len(), b, v), cfg);
    Ok(TuningReport {
        selector: Selector::DirectPlugIn,
        kappa,
        kappa_rot: k0,
        bias_constant: b,
        variance_constant: v,
        fell_back: false,
        clamped,
    })
}
