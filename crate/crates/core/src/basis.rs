//! Locally supported bases on tensor-product partitions.
//!
//! Three families are supported: tensor-product B-splines of order `m`,
//! piecewise polynomials of total degree at most `m - 1` on each cell
//! (generalized regressograms), and Haar indicators (`m = 1`). Evaluation is
//! always sparse: only the basis functions active on the cell containing `x`
//! are returned.

use serde::{Deserialize, Serialize};

use crate::error::{LsError, Result};
use crate::partition::TensorPartition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    BSpline,
    PiecewisePoly,
    Haar,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::BSpline => "bspline",
            Family::PiecewisePoly => "pp",
            Family::Haar => "haar",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = LsError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bspline" | "spline" => Ok(Family::BSpline),
            "pp" | "piecewise" | "piecewisepoly" => Ok(Family::PiecewisePoly),
            "haar" => Ok(Family::Haar),
            other => Err(LsError::Config(format!("unknown basis family '{other}'"))),
        }
    }
}

/// Sparse evaluation of a basis (or one of its derivatives) at a point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BasisEval {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl BasisEval {
    pub fn dot(&self, coef: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&k, &v)| coef[k] * v).sum()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (&k, &v) in self.indices.iter().zip(&self.values) {
            out[k] += v;
        }
        out
    }
}

/// Multi-index identifying one basis function.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BasisIndex {
    /// Per-dimension univariate B-spline indices.
    Spline(Vec<usize>),
    /// Cell multi-index and monomial exponent.
    Poly { cell: Vec<usize>, alpha: Vec<usize> },
    /// Cell multi-index.
    Cell(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    family: Family,
    order: usize,
    partition: TensorPartition,
    /// Extended knot sequences (B-splines only).
    ext_knots: Vec<Vec<f64>>,
    /// Monomial exponents per cell, in basis order (piecewise polynomials only).
    exponents: Vec<Vec<usize>>,
}

/// Binomial coefficient as `f64`.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All exponent tuples of total degree `<= max_degree` in `d` variables,
/// ordered by total degree and then with earlier coordinates first.
pub fn monomial_exponents(d: usize, max_degree: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for total in 0..=max_degree {
        let mut level = Vec::new();
        compositions(d, total, &mut vec![0; d], 0, &mut level);
        out.extend(level);
    }
    out
}

fn compositions(d: usize, remaining: usize, cur: &mut Vec<usize>, pos: usize, out: &mut Vec<Vec<usize>>) {
    if pos == d - 1 {
        cur[pos] = remaining;
        out.push(cur.clone());
        return;
    }
    for v in (0..=remaining).rev() {
        cur[pos] = v;
        compositions(d, remaining - v, cur, pos + 1, out);
    }
    cur[pos] = 0;
}

/// Nonzero B-spline basis values and derivatives on one knot span.
///
/// `span` is the index into `ext` with `ext[span] <= x < ext[span + 1]`
/// (right-closed on the final span). Returns `ders[k][r]`, the `k`-th
/// derivative of basis function `span - p + r`, for `k <= nders`.
fn bspline_ders(ext: &[f64], span: usize, p: usize, x: f64, nders: usize) -> Vec<Vec<f64>> {
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = x - ext[span + 1 - j];
        right[j] = ext[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = vec![vec![0.0; p + 1]; nders + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = vec![vec![0.0; p + 1]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=nders.min(p) {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for k in 1..=nders.min(p) {
        for v in ders[k].iter_mut() {
            *v *= factor;
        }
        factor *= (p - k) as f64;
    }
    ders
}

impl BasisSpec {
    pub fn new(family: Family, order: usize, partition: TensorPartition) -> Result<Self> {
        match family {
            Family::BSpline if order < 1 => {
                return Err(LsError::InvalidBasis("B-spline order must be at least 1".into()))
            }
            Family::PiecewisePoly if order < 1 => {
                return Err(LsError::InvalidBasis("polynomial order must be at least 1".into()))
            }
            Family::Haar if order != 1 => {
                return Err(LsError::InvalidBasis(format!("Haar basis has order 1, got {order}")))
            }
            _ => {}
        }
        let ext_knots = if family == Family::BSpline {
            (0..partition.dims())
                .map(|dim| {
                    let k = partition.knots(dim);
                    let mut ext = vec![k[0]; order];
                    ext.extend_from_slice(&k[1..k.len() - 1]);
                    ext.extend(std::iter::repeat_n(k[k.len() - 1], order));
                    ext
                })
                .collect()
        } else {
            Vec::new()
        };
        let exponents = if family == Family::PiecewisePoly {
            monomial_exponents(partition.dims(), order - 1)
        } else {
            Vec::new()
        };
        Ok(Self {
            family,
            order,
            partition,
            ext_knots,
            exponents,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn partition(&self) -> &TensorPartition {
        &self.partition
    }

    pub fn dims(&self) -> usize {
        self.partition.dims()
    }

    /// Number of univariate B-splines per axis.
    fn axis_sizes(&self) -> Vec<usize> {
        (0..self.dims())
            .map(|d| self.partition.kappa(d) + self.order - 1)
            .collect()
    }

    /// Number of local polynomial terms per cell.
    pub fn terms_per_cell(&self) -> usize {
        match self.family {
            Family::PiecewisePoly => self.exponents.len(),
            _ => 1,
        }
    }

    /// Basis dimension `K`.
    pub fn dim(&self) -> usize {
        match self.family {
            Family::BSpline => self.axis_sizes().iter().product(),
            Family::PiecewisePoly => self.partition.total_cells() * self.exponents.len(),
            Family::Haar => self.partition.total_cells(),
        }
    }

    /// Upper bound on the number of active functions at any point.
    pub fn max_active(&self) -> usize {
        match self.family {
            Family::BSpline => self.order.pow(self.dims() as u32),
            Family::PiecewisePoly => self.exponents.len(),
            Family::Haar => 1,
        }
    }

    /// Whether the span contains polynomials of total degree `degree`.
    pub fn reproduces_degree(&self, degree: usize) -> bool {
        degree < self.order
    }

    fn check_deriv(&self, deriv: &[usize]) -> Result<()> {
        if deriv.len() != self.dims() {
            return Err(LsError::InvalidBasis(format!(
                "derivative multi-index has length {}, expected {}",
                deriv.len(),
                self.dims()
            )));
        }
        if deriv.iter().any(|&s| s >= self.order) {
            return Err(LsError::UnsupportedDerivative {
                deriv: deriv.to_vec(),
                order: self.order,
            });
        }
        Ok(())
    }

    /// Evaluate `d^deriv p(x)` sparsely.
    pub fn eval(&self, x: &[f64], deriv: &[usize]) -> Result<BasisEval> {
        self.check_deriv(deriv)?;
        let cell = self.partition.locate(x)?;
        Ok(self.eval_in_cell(x, &cell, deriv))
    }

    /// Evaluate with a known containing cell (no support check).
    pub fn eval_in_cell(&self, x: &[f64], cell: &[usize], deriv: &[usize]) -> BasisEval {
        match self.family {
            Family::Haar => BasisEval {
                indices: vec![self.partition.flat_cell(cell)],
                values: vec![1.0],
            },
            Family::PiecewisePoly => self.eval_poly(x, cell, deriv),
            Family::BSpline => self.eval_spline(x, cell, deriv),
        }
    }

    fn eval_poly(&self, x: &[f64], cell: &[usize], deriv: &[usize]) -> BasisEval {
        let geom = self.partition.cell(cell);
        let z = geom.to_reference(x);
        let j = self.exponents.len();
        let base = self.partition.flat_cell(cell) * j;
        let mut indices = Vec::with_capacity(j);
        let mut values = Vec::with_capacity(j);
        for (a, alpha) in self.exponents.iter().enumerate() {
            let mut v = 1.0;
            for dim in 0..z.len() {
                let (p, s) = (alpha[dim], deriv[dim]);
                if p < s {
                    v = 0.0;
                    break;
                }
                let falling: f64 = ((p - s + 1)..=p).map(|t| t as f64).product();
                v *= falling * z[dim].powi((p - s) as i32) / geom.b[dim].powi(s as i32);
            }
            indices.push(base + a);
            values.push(v);
        }
        BasisEval { indices, values }
    }

    fn eval_spline(&self, x: &[f64], cell: &[usize], deriv: &[usize]) -> BasisEval {
        let p = self.order - 1;
        let d = self.dims();
        let sizes = self.axis_sizes();
        // per-axis: first active index and the m values of the requested derivative
        let mut axis_vals: Vec<Vec<f64>> = Vec::with_capacity(d);
        for dim in 0..d {
            let span = cell[dim] + p;
            let ders = bspline_ders(&self.ext_knots[dim], span, p, x[dim], deriv[dim]);
            axis_vals.push(ders[deriv[dim]].clone());
        }
        let m = self.order;
        let total = m.pow(d as u32);
        let mut indices = Vec::with_capacity(total);
        let mut values = Vec::with_capacity(total);
        let mut offs = vec![0usize; d];
        for _ in 0..total {
            let mut flat = 0usize;
            let mut v = 1.0;
            for dim in 0..d {
                flat = flat * sizes[dim] + cell[dim] + offs[dim];
                v *= axis_vals[dim][offs[dim]];
            }
            indices.push(flat);
            values.push(v);
            // odometer, last dimension fastest
            for dim in (0..d).rev() {
                offs[dim] += 1;
                if offs[dim] < m {
                    break;
                }
                offs[dim] = 0;
            }
        }
        BasisEval { indices, values }
    }

    /// Map a flat index to its multi-index.
    pub fn multi_index(&self, k: usize) -> BasisIndex {
        let unflatten = |mut flat: usize, sizes: &[usize]| {
            let mut idx = vec![0; sizes.len()];
            for dim in (0..sizes.len()).rev() {
                idx[dim] = flat % sizes[dim];
                flat /= sizes[dim];
            }
            idx
        };
        match self.family {
            Family::BSpline => BasisIndex::Spline(unflatten(k, &self.axis_sizes())),
            Family::Haar => BasisIndex::Cell(unflatten(k, &self.partition.kappas())),
            Family::PiecewisePoly => {
                let j = self.exponents.len();
                BasisIndex::Poly {
                    cell: unflatten(k / j, &self.partition.kappas()),
                    alpha: self.exponents[k % j].clone(),
                }
            }
        }
    }

    /// Inverse of [`BasisSpec::multi_index`].
    pub fn flat_index(&self, idx: &BasisIndex) -> Option<usize> {
        let flatten = |idx: &[usize], sizes: &[usize]| -> Option<usize> {
            if idx.len() != sizes.len() || idx.iter().zip(sizes).any(|(i, s)| i >= s) {
                return None;
            }
            Some(idx.iter().zip(sizes).fold(0, |acc, (i, s)| acc * s + i))
        };
        match (self.family, idx) {
            (Family::BSpline, BasisIndex::Spline(i)) => flatten(i, &self.axis_sizes()),
            (Family::Haar, BasisIndex::Cell(c)) => flatten(c, &self.partition.kappas()),
            (Family::PiecewisePoly, BasisIndex::Poly { cell, alpha }) => {
                let a = self.exponents.iter().position(|e| e == alpha)?;
                Some(flatten(cell, &self.partition.kappas())? * self.exponents.len() + a)
            }
            _ => None,
        }
    }

    /// Inclusive per-axis ranges of cell indices on which basis function `k`
    /// can be nonzero.
    pub fn support(&self, k: usize) -> Vec<(usize, usize)> {
        match self.multi_index(k) {
            BasisIndex::Spline(idx) => idx
                .iter()
                .enumerate()
                .map(|(dim, &i)| {
                    let kappa = self.partition.kappa(dim);
                    (i.saturating_sub(self.order - 1), i.min(kappa - 1))
                })
                .collect(),
            BasisIndex::Poly { cell, .. } | BasisIndex::Cell(cell) => cell.iter().map(|&c| (c, c)).collect(),
        }
    }

    /// The same family and partition at a different order. Haar moves to
    /// B-splines when the order exceeds one.
    pub fn with_order(&self, order: usize) -> Result<Self> {
        let family = match self.family {
            Family::Haar if order > 1 => Family::BSpline,
            f => f,
        };
        Self::new(family, order, self.partition.clone())
    }
}

/// Least-squares check that every monomial of total degree `<= degree` is
/// reproduced (max residual below `1e-8`) on a dense grid over the support.
pub fn polynomial_reproduction_check(spec: &BasisSpec, degree: usize) -> Result<bool> {
    let d = spec.dims();
    let per_axis: Vec<usize> = (0..d)
        .map(|dim| {
            let need = 4 * (spec.partition().kappa(dim) + spec.order()) + 1;
            let cap = if d == 1 { 2000 } else { 60 };
            need.clamp(9, cap)
        })
        .collect();
    let mut points = Vec::new();
    let total: usize = per_axis.iter().product();
    for flat in 0..total {
        let mut rem = flat;
        let mut x = vec![0.0; d];
        for dim in (0..d).rev() {
            let g = per_axis[dim];
            let i = rem % g;
            rem /= g;
            let (lo, hi) = spec.partition().bounds(dim);
            x[dim] = lo + (hi - lo) * (i as f64 + 0.5) / g as f64;
        }
        points.push(x);
    }
    let design = crate::fit::assemble(spec, &points)?;
    let gram = crate::fit::gram(&design, None);
    let chol = crate::linalg::BandedCholesky::factor(&gram, crate::fit::RANK_TOL)?;
    for alpha in monomial_exponents(d, degree) {
        let y: Vec<f64> = points
            .iter()
            .map(|x| x.iter().zip(&alpha).map(|(&v, &a)| v.powi(a as i32)).product())
            .collect();
        let beta = chol.solve(&design.xty(&y));
        let max_resid = (0..points.len())
            .map(|i| (design.row_dot(i, &beta) - y[i]).abs())
            .fold(0.0, f64::max);
        if !(max_resid < 1e-8) {
            return Ok(false);
        }
    }
    Ok(true)
}
