//! Heteroskedasticity-robust variance, pointwise intervals and uniform bands.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{LsError, Result};
use crate::fit::{Estimator, FitResult};
use crate::linalg::psd_sqrt;
use crate::partition::TensorPartition;

/// Leverage at or above `1 - LEVERAGE_EPS` aborts HC2/HC3.
const LEVERAGE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HcKind {
    Hc0,
    Hc1,
    Hc2,
    Hc3,
}

impl HcKind {
    pub fn name(self) -> &'static str {
        match self {
            HcKind::Hc0 => "HC0",
            HcKind::Hc1 => "HC1",
            HcKind::Hc2 => "HC2",
            HcKind::Hc3 => "HC3",
        }
    }
}

impl std::str::FromStr for HcKind {
    type Err = LsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HC0" | "0" => Ok(HcKind::Hc0),
            "HC1" | "1" => Ok(HcKind::Hc1),
            "HC2" | "2" => Ok(HcKind::Hc2),
            "HC3" | "3" => Ok(HcKind::Hc3),
            _ => Err(LsError::Config(format!("unknown variance estimator '{s}'"))),
        }
    }
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Leverages `gamma_{0,j}(x_i)' Pi_j(x_i) / n`.
pub fn leverages(fit: &FitResult, j: Estimator) -> Result<Vec<f64>> {
    let n = fit.n();
    let zero = vec![0; fit.dims()];
    (0..n)
        .map(|i| {
            let g = fit.gamma_hat(&fit.x[i], &zero, j)?;
            let (idx, val) = fit.pi_row(j, i);
            let l: f64 = idx.iter().zip(&val).map(|(&k, &v)| g[k] * v).sum::<f64>() / n as f64;
            Ok(l)
        })
        .collect()
}

/// `Sigma_j = (1/n) sum_i w_i e_i^2 Pi_j(x_i) Pi_j(x_i)'` with its HC weights.
#[derive(Debug, Clone)]
pub struct VarianceModel {
    pub estimator: Estimator,
    pub hc: HcKind,
    pub sigma: DMatrix<f64>,
    pub n: usize,
}

impl VarianceModel {
    pub fn new(fit: &FitResult, j: Estimator, hc: HcKind) -> Result<Self> {
        let n = fit.n();
        let k = fit.k_j(j);
        let resid = fit.residuals(j)?;
        let weights: Vec<f64> = match hc {
            HcKind::Hc0 => vec![1.0; n],
            HcKind::Hc1 => {
                if n <= k {
                    return Err(LsError::DegenerateData(format!(
                        "HC1 needs more observations ({n}) than basis terms ({k})"
                    )));
                }
                vec![n as f64 / (n - k) as f64; n]
            }
            HcKind::Hc2 | HcKind::Hc3 => {
                let lev = leverages(fit, j)?;
                let power = if hc == HcKind::Hc2 { 1 } else { 2 };
                lev.iter()
                    .enumerate()
                    .map(|(row, &l)| {
                        if l >= 1.0 - LEVERAGE_EPS {
                            Err(LsError::LeverageOverflow { row, leverage: l })
                        } else {
                            Ok(1.0 / (1.0 - l).powi(power))
                        }
                    })
                    .collect::<Result<_>>()?
            }
        };
        let mut sigma = DMatrix::zeros(k, k);
        for i in 0..n {
            let (idx, val) = fit.pi_row(j, i);
            let w = weights[i] * resid[i] * resid[i];
            if w == 0.0 {
                continue;
            }
            for (a, (&ka, &va)) in idx.iter().zip(&val).enumerate() {
                for (&kb, &vb) in idx[..=a].iter().zip(&val[..=a]) {
                    sigma[(ka, kb)] += w * va * vb;
                }
            }
        }
        // fill the upper triangle from the lower one
        for a in 0..k {
            for b in 0..a {
                let s = sigma[(a, b)] + sigma[(b, a)];
                sigma[(a, b)] = s;
                sigma[(b, a)] = s;
            }
        }
        sigma /= n as f64;
        Ok(Self {
            estimator: j,
            hc,
            sigma,
            n,
        })
    }

    /// `gamma' Sigma gamma`.
    pub fn omega(&self, gamma: &[f64]) -> f64 {
        let g = DVector::from_column_slice(gamma);
        (g.transpose() * &self.sigma * &g)[(0, 0)]
    }
}

pub fn omega_hat(fit: &FitResult, x: &[f64], q: &[usize], j: Estimator, hc: HcKind) -> Result<f64> {
    let vm = VarianceModel::new(fit, j, hc)?;
    Ok(vm.omega(&fit.gamma_hat(x, q, j)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointwiseCi {
    pub estimate: f64,
    /// `sqrt(Omega / n)`.
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Rounding can push `Omega` slightly below zero; anything beyond this
/// fraction of `trace(Sigma) * |gamma|^2` is an error.
const OMEGA_NEG_TOL: f64 = 1e-10;

fn checked_omega(vm: &VarianceModel, gamma: &[f64], x: &[f64]) -> Result<f64> {
    let omega = vm.omega(gamma);
    let scale = vm.sigma.trace() * gamma.iter().map(|g| g * g).sum::<f64>();
    if omega.is_nan() || omega < -OMEGA_NEG_TOL * scale {
        return Err(LsError::NonPositiveVariance {
            value: omega,
            x: x.to_vec(),
        });
    }
    Ok(omega.max(0.0))
}

/// Pointwise interval at `x` with a precomputed variance model.
pub fn pointwise_ci_with(
    fit: &FitResult,
    vm: &VarianceModel,
    x: &[f64],
    q: &[usize],
    alpha: f64,
) -> Result<PointwiseCi> {
    check_alpha(alpha)?;
    let j = vm.estimator;
    let g = fit.gamma_hat(x, q, j)?;
    let estimate: f64 = g.iter().zip(fit.pi_y(j)).map(|(a, b)| a * b).sum();
    let se = (checked_omega(vm, &g, x)? / vm.n as f64).sqrt();
    let z = normal_quantile(1.0 - alpha / 2.0);
    Ok(PointwiseCi {
        estimate,
        se,
        lo: estimate - z * se,
        hi: estimate + z * se,
    })
}

pub fn pointwise_ci(
    fit: &FitResult,
    x: &[f64],
    q: &[usize],
    j: Estimator,
    hc: HcKind,
    alpha: f64,
) -> Result<PointwiseCi> {
    let vm = VarianceModel::new(fit, j, hc)?;
    pointwise_ci_with(fit, &vm, x, q, alpha)
}

/// `(estimate - mu0) / se`.
pub fn t_stat(fit: &FitResult, x: &[f64], q: &[usize], j: Estimator, hc: HcKind, mu0: f64) -> Result<f64> {
    let ci = pointwise_ci(fit, x, q, j, hc, 0.05)?;
    Ok((ci.estimate - mu0) / ci.se)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(LsError::Config(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandMethod {
    /// Gaussian simulation with the estimated covariance.
    Plugin,
    /// Multiplier bootstrap on the residuals.
    Bootstrap,
}

/// Multiplier distribution for the bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightLaw {
    Rademacher,
    /// Every weight is one; draws are identical.
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    pub method: BandMethod,
    pub draws: usize,
    pub alpha: f64,
    pub hc: HcKind,
    pub seed: u64,
    pub weights: WeightLaw,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            method: BandMethod::Plugin,
            draws: 1000,
            alpha: 0.05,
            hc: HcKind::Hc0,
            seed: 0,
            weights: WeightLaw::Rademacher,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandResult {
    pub grid: Vec<Vec<f64>>,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub critical_value: f64,
    /// Pointwise normal critical value for comparison.
    pub pointwise_critical_value: f64,
    /// Grid spacing exceeds half the smallest cell width.
    pub coarse_grid: bool,
}

impl BandResult {
    pub fn covers(&self, truth: &[f64]) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(truth)
            .all(|((l, h), t)| l <= t && t <= h)
    }

    pub fn average_width(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).sum::<f64>() / self.lo.len() as f64
    }
}

/// Evenly spaced evaluation grid over the partition bounds: `per_axis`
/// points per axis, or 100 in one dimension and 20 per axis otherwise.
pub fn default_grid(partition: &TensorPartition, per_axis: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let d = partition.dims();
    let g = per_axis.unwrap_or(if d == 1 { 100 } else { 20 });
    if g < 2 {
        return Err(LsError::InvalidGrid(format!(
            "need at least 2 points per axis, got {g}"
        )));
    }
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|dim| {
            let (lo, hi) = partition.bounds(dim);
            (0..g)
                .map(|i| {
                    if i + 1 == g {
                        hi
                    } else {
                        lo + (hi - lo) * i as f64 / (g - 1) as f64
                    }
                })
                .collect()
        })
        .collect();
    Ok(cartesian(&axes))
}

/// Tensor grid, last coordinate fastest.
pub fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

fn grid_is_coarse(grid: &[Vec<f64>], partition: &TensorPartition) -> bool {
    let d = partition.dims();
    let half = 0.5 * partition.min_width();
    (0..d).any(|dim| {
        let mut vals: Vec<f64> = grid.iter().map(|p| p[dim]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        let (lo, hi) = partition.bounds(dim);
        let mut edges = vec![lo];
        edges.extend(vals);
        edges.push(hi);
        edges.windows(2).any(|w| w[1] - w[0] > half)
    })
}

/// Value at rank `ceil(B (1 - alpha))` of the sorted draws.
pub fn upper_quantile(mut draws: Vec<f64>, alpha: f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let b = draws.len();
    let rank = ((b as f64) * (1.0 - alpha) - 1e-9).ceil().clamp(1.0, b as f64) as usize;
    draws[rank - 1]
}

fn draw_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

/// Uniform confidence band for `d^q mu_j` over `grid`.
pub fn uniform_band(
    fit: &FitResult,
    grid: &[Vec<f64>],
    q: &[usize],
    j: Estimator,
    cfg: &BandConfig,
) -> Result<BandResult> {
    check_alpha(cfg.alpha)?;
    if grid.is_empty() {
        return Err(LsError::InvalidGrid("empty evaluation grid".into()));
    }
    if cfg.draws == 0 {
        return Err(LsError::Config("number of draws must be positive".into()));
    }
    let n = fit.n();
    let k = fit.k_j(j);
    let vm = VarianceModel::new(fit, j, cfg.hc)?;
    let pi_y = fit.pi_y(j);
    let g = grid.len();
    let mut gammas = DMatrix::zeros(g, k);
    let mut estimate = Vec::with_capacity(g);
    let mut se = Vec::with_capacity(g);
    let mut root_omega = Vec::with_capacity(g);
    for (r, x) in grid.iter().enumerate() {
        let gam = fit.gamma_hat(x, q, j)?;
        let om = checked_omega(&vm, &gam, x)?;
        let s = (om / n as f64).sqrt();
        estimate.push(gam.iter().zip(&pi_y).map(|(a, b)| a * b).sum());
        se.push(s);
        root_omega.push(om.sqrt());
        gammas.row_mut(r).copy_from_slice(&gam);
    }
    // zero-variance points contribute nothing to the supremum
    let inv_root = DVector::from_iterator(g, root_omega.iter().map(|&v| if v > 0.0 { 1.0 / v } else { 0.0 }));

    let sups: Vec<f64> = match cfg.method {
        BandMethod::Plugin => {
            let a = (&gammas * psd_sqrt(&vm.sigma)).map_with_location(|r, _, v| v * inv_root[r]);
            (0..cfg.draws)
                .into_par_iter()
                .map(|b| {
                    let mut rng = draw_rng(cfg.seed, b);
                    let z = DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
                    (&a * z).amax()
                })
                .collect()
        }
        BandMethod::Bootstrap => {
            let resid = fit.residuals(j)?;
            let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n).map(|i| fit.pi_row(j, i)).collect();
            let scale = 1.0 / (n as f64).sqrt();
            (0..cfg.draws)
                .into_par_iter()
                .map(|b| {
                    let mut rng = draw_rng(cfg.seed, b);
                    let mut v = DVector::zeros(k);
                    for (i, (idx, val)) in rows.iter().enumerate() {
                        let w = match cfg.weights {
                            WeightLaw::Rademacher => {
                                if rng.random::<bool>() {
                                    1.0
                                } else {
                                    -1.0
                                }
                            }
                            WeightLaw::Ones => 1.0,
                        };
                        let c = w * resid[i] * scale;
                        for (&kk, &p) in idx.iter().zip(val) {
                            v[kk] += p * c;
                        }
                    }
                    // |w| = 1 for both laws, so the variance is unchanged
                    (&gammas * v).component_mul(&inv_root).amax()
                })
                .collect()
        }
    };
    let critical_value = upper_quantile(sups, cfg.alpha);
    let lo = estimate.iter().zip(&se).map(|(e, s)| e - critical_value * s).collect();
    let hi = estimate.iter().zip(&se).map(|(e, s)| e + critical_value * s).collect();
    Ok(BandResult {
        grid: grid.to_vec(),
        estimate,
        se,
        lo,
        hi,
        critical_value,
        pointwise_critical_value: normal_quantile(1.0 - cfg.alpha / 2.0),
        coarse_grid: grid_is_coarse(grid, fit.kind.main.partition()),
    })
}

pub fn band_plugin(
    fit: &FitResult,
    grid: &[Vec<f64>],
    q: &[usize],
    j: Estimator,
    alpha: f64,
    draws: usize,
    hc: HcKind,
    seed: u64,
) -> Result<BandResult> {
    let cfg = BandConfig {
        method: BandMethod::Plugin,
        draws,
        alpha,
        hc,
        seed,
        weights: WeightLaw::Rademacher,
    };
    uniform_band(fit, grid, q, j, &cfg)
}

pub fn band_bootstrap(
    fit: &FitResult,
    grid: &[Vec<f64>],
    q: &[usize],
    j: Estimator,
    alpha: f64,
    draws: usize,
    hc: HcKind,
    seed: u64,
) -> Result<BandResult> {
    let cfg = BandConfig {
        method: BandMethod::Bootstrap,
        draws,
        alpha,
        hc,
        seed,
        weights: WeightLaw::Rademacher,
    };
    uniform_band(fit, grid, q, j, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisSpec, Family};
    use crate::fit::EstimatorKind;
    use crate::partition::KnotRule;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn sample(n: usize, seed: u64, f: impl Fn(f64) -> f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
        let y = x
            .iter()
            .map(|v| f(v[0]) + rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, y)
    }

    fn fit_1d(family: Family, m: usize, kappa: usize, x: &[Vec<f64>], y: &[f64]) -> FitResult {
        let part = TensorPartition::from_rule(KnotRule::EvenlySpaced, &[kappa], Some(&[(0.0, 1.0)]), None).unwrap();
        let spec = BasisSpec::new(family, m, part).unwrap();
        FitResult::solve(&EstimatorKind::with_default_bc(spec).unwrap(), x, y).unwrap()
    }

    #[test]
    fn quantiles() {
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
        let draws: Vec<f64> = (1..=1000).map(|v| v as f64).collect();
        assert_eq!(upper_quantile(draws, 0.05), 950.0);
        assert_eq!(upper_quantile(vec![3.0, 1.0, 2.0], 0.5), 2.0);
    }

    #[test]
    fn hc_parse() {
        assert_eq!("hc3".parse::<HcKind>().unwrap(), HcKind::Hc3);
        assert!("hc4".parse::<HcKind>().is_err());
    }

    #[test]
    fn haar_variance_closed_form() {
        // with Haar, Omega at x is n * sum_{cell} e_i^2 / N_cell^2
        let (x, y) = sample(400, 3, |v| v);
        let fit = fit_1d(Family::Haar, 1, 4, &x, &y);
        let r = fit.residuals(Estimator::Classical).unwrap();
        let xs = [0.6];
        let in_cell: Vec<usize> = (0..400).filter(|&i| x[i][0] >= 0.5 && x[i][0] < 0.75).collect();
        let nc = in_cell.len() as f64;
        let expect = 400.0 * in_cell.iter().map(|&i| r[i] * r[i]).sum::<f64>() / (nc * nc);
        let om = omega_hat(&fit, &xs, &[0], Estimator::Classical, HcKind::Hc0).unwrap();
        assert!((om - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn hc_ordering() {
        let (x, y) = sample(300, 5, |v| (3.0 * v).sin());
        let fit = fit_1d(Family::BSpline, 2, 6, &x, &y);
        let om: Vec<f64> = [HcKind::Hc0, HcKind::Hc1, HcKind::Hc2, HcKind::Hc3]
            .iter()
            .map(|&h| omega_hat(&fit, &[0.4], &[0], Estimator::Classical, h).unwrap())
            .collect();
        assert!(om[0] < om[1] && om[0] < om[2] && om[2] < om[3]);
    }

    #[test]
    fn leverages_sum_to_dimension() {
        let (x, y) = sample(300, 8, |v| v);
        let fit = fit_1d(Family::BSpline, 3, 5, &x, &y);
        let l = leverages(&fit, Estimator::Classical).unwrap();
        let k = fit.k_j(Estimator::Classical) as f64;
        assert!((l.iter().sum::<f64>() - k).abs() < 1e-8);
    }

    #[test]
    fn saturated_haar_overflows() {
        let x = vec![vec![0.1], vec![0.6], vec![0.7]];
        let y = vec![1.0, 2.0, 2.5];
        let part = TensorPartition::from_rule(KnotRule::EvenlySpaced, &[2], Some(&[(0.0, 1.0)]), None).unwrap();
        let spec = BasisSpec::new(Family::Haar, 1, part).unwrap();
        let fit = FitResult::solve(&EstimatorKind::classical(spec), &x, &y).unwrap();
        let err = VarianceModel::new(&fit, Estimator::Classical, HcKind::Hc2).unwrap_err();
        assert!(matches!(err, LsError::LeverageOverflow { row: 0, .. }));
    }

    #[test]
    fn zero_residuals_give_zero_width() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 + 0.5) / 50.0]).collect();
        let y = vec![0.0; 50];
        let fit = fit_1d(Family::BSpline, 2, 3, &x, &y);
        let ci = pointwise_ci(&fit, &[0.5], &[0], Estimator::Classical, HcKind::Hc0, 0.05).unwrap();
        assert_eq!((ci.se, ci.lo, ci.hi), (0.0, 0.0, 0.0));
        let grid = default_grid(fit.kind.main.partition(), Some(10)).unwrap();
        let band = band_plugin(&fit, &grid, &[0], Estimator::LeastSquaresBc, 0.05, 20, HcKind::Hc0, 0).unwrap();
        assert_eq!(band.critical_value, 0.0);
        assert!(band.lo.iter().zip(&band.hi).all(|(l, h)| l == h));
    }

    #[test]
    fn ci_symmetric() {
        let (x, y) = sample(500, 11, |v| v * v);
        let fit = fit_1d(Family::BSpline, 2, 5, &x, &y);
        let ci = pointwise_ci(&fit, &[0.3], &[0], Estimator::PluginBc, HcKind::Hc1, 0.1).unwrap();
        assert!((ci.hi - ci.estimate - (ci.estimate - ci.lo)).abs() < 1e-12);
        assert!((ci.hi - ci.lo - 2.0 * normal_quantile(0.95) * ci.se).abs() < 1e-12);
    }

    #[test]
    fn band_wider_than_pointwise_and_reproducible() {
        let (x, y) = sample(600, 2, |v| (4.0 * v).sin());
        let fit = fit_1d(Family::BSpline, 2, 6, &x, &y);
        let grid = default_grid(fit.kind.main.partition(), None).unwrap();
        for method in [BandMethod::Plugin, BandMethod::Bootstrap] {
            let cfg = BandConfig {
                method,
                draws: 500,
                seed: 9,
                ..Default::default()
            };
            let a = uniform_band(&fit, &grid, &[0], Estimator::LeastSquaresBc, &cfg).unwrap();
            let b = uniform_band(&fit, &grid, &[0], Estimator::LeastSquaresBc, &cfg).unwrap();
            assert_eq!(a, b);
            assert!(a.critical_value > a.pointwise_critical_value);
            assert!(a.critical_value < 5.0);
            assert!(!a.coarse_grid);
        }
    }

    #[test]
    fn bootstrap_with_unit_weights_is_degenerate() {
        let (x, y) = sample(300, 4, |v| v);
        let fit = fit_1d(Family::BSpline, 2, 4, &x, &y);
        let grid = default_grid(fit.kind.main.partition(), Some(30)).unwrap();
        let cfg = BandConfig {
            method: BandMethod::Bootstrap,
            draws: 50,
            weights: WeightLaw::Ones,
            ..Default::default()
        };
        let band = uniform_band(&fit, &grid, &[0], Estimator::Classical, &cfg).unwrap();
        // every draw is the same sup statistic of the residual projection,
        // which is zero because residuals are orthogonal to the basis
        assert!(band.critical_value.abs() < 1e-8);
    }

    #[test]
    fn coarse_grid_flagged() {
        let (x, y) = sample(600, 2, |v| v);
        let fit = fit_1d(Family::BSpline, 2, 20, &x, &y);
        let grid = default_grid(fit.kind.main.partition(), Some(5)).unwrap();
        let band = band_plugin(&fit, &grid, &[0], Estimator::Classical, 0.05, 100, HcKind::Hc0, 1).unwrap();
        assert!(band.coarse_grid);
    }

    #[test]
    fn grid_layout() {
        let part =
            TensorPartition::from_rule(KnotRule::EvenlySpaced, &[2, 2], Some(&[(0.0, 1.0), (2.0, 4.0)]), None).unwrap();
        let g = default_grid(&part, Some(3)).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[1], vec![0.0, 3.0]);
        assert_eq!(g[8], vec![1.0, 4.0]);
        assert!(default_grid(&part, Some(1)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn omega_nonnegative(seed in 0u64..1000, kappa in 2usize..8) {
            let (x, y) = sample(200, seed, |v| v);
            let fit = fit_1d(Family::PiecewisePoly, 2, kappa, &x, &y);
            for j in Estimator::ALL {
                let vm = VarianceModel::new(&fit, j, HcKind::Hc0).unwrap();
                let g = fit.gamma_hat(&[0.37], &[0], j).unwrap();
                prop_assert!(vm.omega(&g) >= 0.0);
            }
        }
    }
}
