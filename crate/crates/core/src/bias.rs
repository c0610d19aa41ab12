//! Leading approximation-error models for each basis family.
//!
//! The leading error of the best approximation on a cell with lower corner
//! `t_l` and side lengths `b` has the product form
//!
//! ```text
//! B_{m,s}(x) = - sum_{u in Lambda_m} d^u mu(x) * b^(u - s) * shape(u, s, (x - t_l) / b)
//! ```
//!
//! where the reference-cell shape folds in the factorial and binomial
//! constants. B-splines (and Haar) use products of Bernoulli polynomials and
//! piecewise polynomials use shifted Legendre polynomials.

use std::sync::OnceLock;

use serde::Serialize;

use crate::basis::{binomial, Family};
use crate::error::{LsError, Result};
use crate::fit::FitResult;
use crate::partition::CellGeometry;

/// Highest polynomial index with a precomputed coefficient table.
pub const MAX_POLY_INDEX: usize = 12;

fn bernoulli_table() -> &'static Vec<Vec<f64>> {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        // coefficients in ascending powers; B_k' = k B_{k-1} and zero mean on [0, 1]
        let mut table: Vec<Vec<f64>> = vec![vec![1.0]];
        for k in 1..=MAX_POLY_INDEX {
            let prev = &table[k - 1];
            let mut c = vec![0.0; k + 1];
            for (p, &a) in prev.iter().enumerate() {
                c[p + 1] = k as f64 * a / (p + 1) as f64;
            }
            let mean: f64 = c.iter().enumerate().skip(1).map(|(p, &a)| a / (p + 1) as f64).sum();
            c[0] = -mean;
            table.push(c);
        }
        table
    })
}

/// Bernoulli polynomial `B_k(z)` for `k <= 12`.
pub fn bernoulli_poly(k: usize, z: f64) -> f64 {
    assert!(k <= MAX_POLY_INDEX, "Bernoulli index {k} exceeds table");
    bernoulli_table()[k].iter().rev().fold(0.0, |acc, &c| acc * z + c)
}

/// Shifted Legendre polynomial `P_k(2z - 1)`, orthogonal on `[0, 1]`.
pub fn shifted_legendre(k: usize, z: f64) -> f64 {
    assert!(k <= MAX_POLY_INDEX, "Legendre index {k} exceeds table");
    let s = 2.0 * z - 1.0;
    let (mut p0, mut p1) = (1.0, s);
    if k == 0 {
        return p0;
    }
    for n in 1..k {
        let p2 = ((2 * n + 1) as f64 * s * p1 - n as f64 * p0) / (n + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 1..n {
                let p2 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p0) / (k + 1) as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let step = p1 / dp;
            z -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            z = 0.0;
            dp = 1.0;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = 0.5 * (1.0 - z);
        nodes[n - 1 - i] = 0.5 * (1.0 + z);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Basis-specific leading-error shapes and the multi-index set `Lambda_m`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeadingErrorModel {
    pub family: Family,
    pub m: usize,
    pub dims: usize,
    pub lambda: Vec<Vec<usize>>,
}

impl LeadingErrorModel {
    pub fn new(family: Family, m: usize, dims: usize) -> Result<Self> {
        if m < 1 || dims < 1 {
            return Err(LsError::InvalidBasis("order and dimension must be positive".into()));
        }
        if family == Family::Haar && m != 1 {
            return Err(LsError::InvalidBasis("Haar basis has order 1".into()));
        }
        if m > MAX_POLY_INDEX {
            return Err(LsError::InvalidBasis(format!("order {m} exceeds {MAX_POLY_INDEX}")));
        }
        let lambda = match family {
            Family::BSpline | Family::Haar => (0..dims)
                .map(|l| {
                    let mut u = vec![0; dims];
                    u[l] = m;
                    u
                })
                .collect(),
            Family::PiecewisePoly => {
                let mut all = Vec::new();
                collect_level(dims, m, &mut vec![0; dims], 0, &mut all);
                all
            }
        };
        Ok(Self {
            family,
            m,
            dims,
            lambda,
        })
    }

    /// Reference-cell shape for `u` and derivative `s` at `z in [0,1]^d`.
    pub fn shape_fn(&self, u: &[usize], s: &[usize], z: &[f64]) -> Result<f64> {
        if self.family == Family::Haar && s.iter().any(|&v| v > 0) {
            return Err(LsError::UnsupportedFamily(
                "Haar leading error has no derivative shapes".into(),
            ));
        }
        if u.iter().zip(s).any(|(&a, &b)| a < b) {
            return Ok(0.0);
        }
        let mut v = 1.0;
        for l in 0..u.len() {
            let k = u[l] - s[l];
            let f = match self.family {
                Family::BSpline | Family::Haar => bernoulli_poly(k, z[l]),
                Family::PiecewisePoly => shifted_legendre(k, z[l]) / binomial(2 * k, k),
            };
            v *= f / factorial(k);
        }
        Ok(v)
    }

    /// `b^(u - s) * shape(u, s, z)` for the cell containing `x`.
    pub fn coefficient(&self, u: &[usize], s: &[usize], x: &[f64], cell: &CellGeometry) -> Result<f64> {
        if u.iter().zip(s).any(|(&a, &b)| a < b) {
            return Ok(0.0);
        }
        let z = cell.to_reference(x);
        let scale: f64 = u
            .iter()
            .zip(s)
            .zip(&cell.b)
            .map(|((&a, &b), &w)| w.powi((a - b) as i32))
            .product();
        Ok(scale * self.shape_fn(u, s, &z)?)
    }
}

fn collect_level(d: usize, remaining: usize, cur: &mut Vec<usize>, pos: usize, out: &mut Vec<Vec<usize>>) {
    if pos == d - 1 {
        cur[pos] = remaining;
        out.push(cur.clone());
        return;
    }
    for v in (0..=remaining).rev() {
        cur[pos] = v;
        collect_level(d, remaining - v, cur, pos + 1, out);
    }
}

/// Estimated leading error `B_{m,q}(x)` using derivatives of the
/// higher-order fit and cell geometry of the main partition.
pub fn leading_bias(fit: &FitResult, x: &[f64], q: &[usize]) -> Result<f64> {
    fit.leading_bias(x, q)
}

/// Least-squares projection `gamma_{q,0}(x)' E_n[p(x_i) B_{m,0}(x_i)]`.
pub fn projected_bias_term(fit: &FitResult, x: &[f64], q: &[usize]) -> Result<f64> {
    fit.projected_bias(x, q)
}
