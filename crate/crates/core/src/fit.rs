//! Least-squares fits and the four estimator kinds.
//!
//! Every estimator has the form `d^q mu_j(x) = gamma_{q,j}(x)' E_n[Pi_j(x_i) y_i]`:
//!
//! * `j = 0` classical fit on the main basis `p` of order `m`;
//! * `j = 1` the same regression on the higher-order basis `p~` of order `m~`;
//! * `j = 2` least-squares bias correction, stacked `Pi = (p, p~)`;
//! * `j = 3` plug-in bias correction from the leading-error model, stacked `Pi = (p, p~)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisEval, BasisSpec, Family};
use crate::bias::LeadingErrorModel;
use crate::error::{LsError, Result};
use crate::linalg::{BandedCholesky, BandedSym};

/// Relative pivot threshold for the Gram factorization.
pub const RANK_TOL: f64 = 1e-10;

/// Which of the four estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    Classical,
    HigherOrder,
    LeastSquaresBc,
    PluginBc,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::Classical,
        Estimator::HigherOrder,
        Estimator::LeastSquaresBc,
        Estimator::PluginBc,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(j: usize) -> Result<Self> {
        Self::ALL
            .get(j)
            .copied()
            .ok_or_else(|| LsError::Config(format!("estimator index must be 0..=3, got {j}")))
    }

    pub fn needs_bc(self) -> bool {
        self != Estimator::Classical
    }
}

/// Main basis plus the optional higher-order basis used for bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorKind {
    pub main: BasisSpec,
    pub bc: Option<BasisSpec>,
}

impl EstimatorKind {
    pub fn new(main: BasisSpec, bc: Option<BasisSpec>) -> Result<Self> {
        if let Some(bc) = &bc {
            if bc.order() <= main.order() {
                return Err(LsError::InvalidBasis(format!(
                    "bias-correction order {} must exceed main order {}",
                    bc.order(),
                    main.order()
                )));
            }
            if bc.dims() != main.dims() {
                return Err(LsError::InvalidBasis("bases have different dimensions".into()));
            }
        }
        Ok(Self { main, bc })
    }

    /// Main basis only; only `j = 0` is available.
    pub fn classical(main: BasisSpec) -> Self {
        Self { main, bc: None }
    }

    /// Bias-correction basis of order `m_tilde` on the main partition.
    pub fn with_bc_order(main: BasisSpec, m_tilde: usize) -> Result<Self> {
        let bc = main.with_order(m_tilde)?;
        Self::new(main, Some(bc))
    }

    /// Default `m~ = m + 1` on the same partition.
    pub fn with_default_bc(main: BasisSpec) -> Result<Self> {
        let m = main.order();
        Self::with_bc_order(main, m + 1)
    }

    pub fn supports(&self, j: Estimator) -> bool {
        match j {
            Estimator::Classical => true,
            Estimator::HigherOrder | Estimator::LeastSquaresBc => self.bc.is_some(),
            Estimator::PluginBc => self.bc.is_some() && self.main.family() != Family::Haar,
        }
    }
}

/// Row-compressed design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDesign {
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseDesign {
    fn from_rows(ncols: usize, rows: impl IntoIterator<Item = BasisEval>) -> Self {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for r in rows {
            indices.extend(r.indices);
            values.extend(r.values);
            indptr.push(indices.len());
        }
        Self {
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn row_dot(&self, i: usize, coef: &[f64]) -> f64 {
        let (idx, val) = self.row(i);
        idx.iter().zip(val).map(|(&k, &v)| coef[k] * v).sum()
    }

    /// `E_n[p(x_i) v_i]`.
    pub fn xty(&self, v: &[f64]) -> Vec<f64> {
        let n = self.nrows();
        let mut out = vec![0.0; self.ncols];
        for i in 0..n {
            let (idx, val) = self.row(i);
            for (&k, &p) in idx.iter().zip(val) {
                out[k] += p * v[i];
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        out
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (&k, &v) in self.indices.iter().zip(&self.values) {
            out[k] += v;
        }
        out
    }

    /// Largest index distance between two entries of the same row.
    pub fn bandwidth(&self) -> usize {
        (0..self.nrows())
            .map(|i| {
                let (idx, _) = self.row(i);
                match (idx.iter().min(), idx.iter().max()) {
                    (Some(a), Some(b)) => b - a,
                    _ => 0,
                }
            })
            .max()
            .unwrap_or(0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for i in 0..self.nrows() {
            let (idx, val) = self.row(i);
            for (&k, &v) in idx.iter().zip(val) {
                m[(i, k)] += v;
            }
        }
        m
    }
}

/// Sparse design with row `i` holding `d^deriv p(x_i)`.
pub fn assemble_deriv(spec: &BasisSpec, x: &[Vec<f64>], deriv: &[usize]) -> Result<SparseDesign> {
    let mut rows = Vec::with_capacity(x.len());
    for (i, xi) in x.iter().enumerate() {
        let e = spec.eval(xi, deriv).map_err(|e| match e {
            e @ LsError::OutOfSupport { .. } => LsError::RowOutOfSupport {
                row: i,
                source: Box::new(e),
            },
            other => other,
        })?;
        rows.push(e);
    }
    Ok(SparseDesign::from_rows(spec.dim(), rows))
}

pub fn assemble(spec: &BasisSpec, x: &[Vec<f64>]) -> Result<SparseDesign> {
    assemble_deriv(spec, x, &vec![0; spec.dims()])
}

/// `(1/n) sum_i w_i p(x_i) p(x_i)'` in banded storage.
pub fn gram(design: &SparseDesign, weights: Option<&[f64]>) -> BandedSym {
    let n = design.nrows();
    let mut q = BandedSym::zeros(design.ncols(), design.bandwidth());
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]);
        let (idx, val) = design.row(i);
        for a in 0..idx.len() {
            for b in 0..=a {
                let (ka, kb) = (idx[a], idx[b]);
                let v = w * val[a] * val[b];
                if ka == kb && a != b {
                    // repeated index in one row counts twice
                    q.add(ka, kb, 2.0 * v);
                } else {
                    q.add(ka, kb, v);
                }
            }
        }
    }
    if n > 0 {
        q.scale(1.0 / n as f64);
    }
    q
}

/// `(1/n) sum_i a(x_i) b(x_i)'`.
pub fn cross_gram(a: &SparseDesign, b: &SparseDesign) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(a.ncols(), b.ncols());
    for i in 0..n {
        let (ia, va) = a.row(i);
        let (ib, vb) = b.row(i);
        for (&k, &u) in ia.iter().zip(va) {
            for (&l, &v) in ib.iter().zip(vb) {
                out[(k, l)] += u * v;
            }
        }
    }
    out / n as f64
}

/// A single least-squares regression on one basis.
#[derive(Debug, Clone)]
pub struct LsFit {
    pub spec: BasisSpec,
    pub design: SparseDesign,
    pub gram: BandedSym,
    pub chol: BandedCholesky,
    pub beta: Vec<f64>,
    /// `E_n[p(x_i) y_i]`.
    pub py: Vec<f64>,
}

impl LsFit {
    pub fn new(spec: &BasisSpec, x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let design = assemble(spec, x)?;
        Self::from_design(spec.clone(), design, y)
    }

    pub fn from_design(spec: BasisSpec, design: SparseDesign, y: &[f64]) -> Result<Self> {
        if design.nrows() != y.len() {
            return Err(LsError::DegenerateData(format!(
                "{} covariate rows but {} responses",
                design.nrows(),
                y.len()
            )));
        }
        if y.is_empty() {
            return Err(LsError::DegenerateData("no observations".into()));
        }
        let gram = gram(&design, None);
        let chol = BandedCholesky::factor(&gram, RANK_TOL)?;
        let py = design.xty(y);
        let beta = chol.solve(&py);
        Ok(Self {
            spec,
            design,
            gram,
            chol,
            beta,
            py,
        })
    }

    /// `Q^{-1} d^q p(x)`.
    pub fn gamma(&self, x: &[f64], q: &[usize]) -> Result<Vec<f64>> {
        let e = self.spec.eval(x, q)?;
        Ok(self.chol.solve(&e.to_dense(self.spec.dim())))
    }

    pub fn predict(&self, x: &[f64], q: &[usize]) -> Result<f64> {
        Ok(self.spec.eval(x, q)?.dot(&self.beta))
    }

    pub fn fitted(&self) -> Vec<f64> {
        (0..self.design.nrows())
            .map(|i| self.design.row_dot(i, &self.beta))
            .collect()
    }
}

/// Pieces of the plug-in correction that do not depend on the evaluation point.
#[derive(Debug, Clone)]
struct PluginParts {
    model: LeadingErrorModel,
    /// Per `u`: `E_n[p(x_i) c_u(x_i) d^u p~(x_i)']`, `K x K~`.
    a: Vec<DMatrix<f64>>,
    /// `B_{m,0}(x_i)` at the data.
    bias_at_data: Vec<f64>,
    /// `Q^{-1} E_n[p B_{m,0}]`.
    delta: Vec<f64>,
}

/// Result of fitting every estimator kind a configuration supports.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub kind: EstimatorKind,
    pub main: LsFit,
    pub bc: Option<LsFit>,
    /// `E_n[p p~']`.
    pub cross_gram: Option<DMatrix<f64>>,
    /// `Q^{-1} E_n[p mu_1(x_i)]`.
    ls_delta: Option<Vec<f64>>,
    plugin: Option<PluginParts>,
    residuals: [Option<Vec<f64>>; 4],
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl FitResult {
    pub fn solve(kind: &EstimatorKind, x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(LsError::DegenerateData(format!(
                "{} covariate rows but {} responses",
                x.len(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LsError::DegenerateData("non-finite observations".into()));
        }
        let main = LsFit::new(&kind.main, x, y)?;
        let n = y.len();
        let bc = kind.bc.as_ref().map(|s| LsFit::new(s, x, y)).transpose()?;
        let cross_gram = bc.as_ref().map(|b| cross_gram(&main.design, &b.design));

        let mut residuals: [Option<Vec<f64>>; 4] = Default::default();
        let fit0 = main.fitted();
        residuals[0] = Some(y.iter().zip(&fit0).map(|(a, b)| a - b).collect());

        let mut ls_delta = None;
        let mut plugin = None;
        if let Some(bcfit) = &bc {
            let fit1 = bcfit.fitted();
            residuals[1] = Some(y.iter().zip(&fit1).map(|(a, b)| a - b).collect());
            let delta = main.chol.solve(&main.design.xty(&fit1));
            let fit2: Vec<f64> = (0..n)
                .map(|i| main.design.row_dot(i, &main.beta) - main.design.row_dot(i, &delta) + fit1[i])
                .collect();
            residuals[2] = Some(y.iter().zip(&fit2).map(|(a, b)| a - b).collect());
            ls_delta = Some(delta);

            if kind.supports(Estimator::PluginBc) {
                let parts = Self::plugin_parts(&main, bcfit, x)?;
                let fit3: Vec<f64> = (0..n)
                    .map(|i| {
                        main.design.row_dot(i, &main.beta) + main.design.row_dot(i, &parts.delta)
                            - parts.bias_at_data[i]
                    })
                    .collect();
                residuals[3] = Some(y.iter().zip(&fit3).map(|(a, b)| a - b).collect());
                plugin = Some(parts);
            }
        }

        Ok(Self {
            kind: kind.clone(),
            main,
            bc,
            cross_gram,
            ls_delta,
            plugin,
            residuals,
            x: x.to_vec(),
            y: y.to_vec(),
        })
    }

    fn plugin_parts(main: &LsFit, bc: &LsFit, x: &[Vec<f64>]) -> Result<PluginParts> {
        let spec = &main.spec;
        let model = LeadingErrorModel::new(spec.family(), spec.order(), spec.dims())?;
        let zero = vec![0; spec.dims()];
        let n = x.len();
        let (k, kt) = (spec.dim(), bc.spec.dim());
        let cells: Vec<_> = x.iter().map(|xi| spec.partition().cell_at(xi)).collect::<Result<_>>()?;
        let mut a = Vec::with_capacity(model.lambda.len());
        let mut bias_at_data = vec![0.0; n];
        for u in &model.lambda {
            let du = assemble_deriv(&bc.spec, x, u)?;
            let mut au = DMatrix::zeros(k, kt);
            for i in 0..n {
                let c = model.coefficient(u, &zero, &x[i], &cells[i])?;
                let (pi, pv) = main.design.row(i);
                let (di, dv) = du.row(i);
                for (&r, &p) in pi.iter().zip(pv) {
                    for (&s, &d) in di.iter().zip(dv) {
                        au[(r, s)] += p * c * d;
                    }
                }
                bias_at_data[i] -= c * du.row_dot(i, &bc.beta);
            }
            a.push(au / n as f64);
        }
        let delta = main.chol.solve(&main.design.xty(&bias_at_data));
        Ok(PluginParts {
            model,
            a,
            bias_at_data,
            delta,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dims(&self) -> usize {
        self.kind.main.dims()
    }

    pub fn supports(&self, j: Estimator) -> bool {
        self.kind.supports(j)
    }

    fn require(&self, j: Estimator) -> Result<()> {
        if self.supports(j) {
            Ok(())
        } else if j == Estimator::PluginBc && self.bc.is_some() {
            Err(LsError::UnsupportedFamily(format!(
                "plug-in bias correction is unavailable for the {} basis",
                self.kind.main.family().name()
            )))
        } else {
            Err(LsError::InvalidBasis(format!(
                "estimator {} requires a bias-correction basis",
                j.index()
            )))
        }
    }

    fn bc_fit(&self) -> &LsFit {
        self.bc.as_ref().expect("bias-correction fit present")
    }

    /// Dimension of `Pi_j`.
    pub fn k_j(&self, j: Estimator) -> usize {
        match j {
            Estimator::Classical => self.main.spec.dim(),
            Estimator::HigherOrder => self.bc_fit().spec.dim(),
            _ => self.main.spec.dim() + self.bc_fit().spec.dim(),
        }
    }

    /// Sparse `Pi_j(x_i)` for observation `i`.
    pub fn pi_row(&self, j: Estimator, i: usize) -> (Vec<usize>, Vec<f64>) {
        match j {
            Estimator::Classical => {
                let (a, b) = self.main.design.row(i);
                (a.to_vec(), b.to_vec())
            }
            Estimator::HigherOrder => {
                let (a, b) = self.bc_fit().design.row(i);
                (a.to_vec(), b.to_vec())
            }
            _ => {
                let k = self.main.spec.dim();
                let (a, b) = self.main.design.row(i);
                let (c, d) = self.bc_fit().design.row(i);
                let mut idx = a.to_vec();
                idx.extend(c.iter().map(|&v| v + k));
                let mut val = b.to_vec();
                val.extend_from_slice(d);
                (idx, val)
            }
        }
    }

    /// `E_n[Pi_j(x_i) y_i]`.
    pub fn pi_y(&self, j: Estimator) -> Vec<f64> {
        match j {
            Estimator::Classical => self.main.py.clone(),
            Estimator::HigherOrder => self.bc_fit().py.clone(),
            _ => {
                let mut v = self.main.py.clone();
                v.extend_from_slice(&self.bc_fit().py);
                v
            }
        }
    }

    /// Residuals `y_i - mu_j(x_i)`.
    pub fn residuals(&self, j: Estimator) -> Result<&[f64]> {
        self.require(j)?;
        Ok(self.residuals[j.index()].as_deref().expect("residuals computed"))
    }

    fn check_q(&self, q: &[usize]) -> Result<()> {
        let m = self.kind.main.order();
        if q.len() != self.dims() {
            return Err(LsError::InvalidBasis(format!(
                "derivative multi-index has length {}, expected {}",
                q.len(),
                self.dims()
            )));
        }
        if q.iter().sum::<usize>() >= m {
            return Err(LsError::UnsupportedDerivative {
                deriv: q.to_vec(),
                order: m,
            });
        }
        Ok(())
    }

    /// Evaluation weights `gamma_{q,j}(x)` over `Pi_j`.
    pub fn gamma_hat(&self, x: &[f64], q: &[usize], j: Estimator) -> Result<Vec<f64>> {
        self.require(j)?;
        self.check_q(q)?;
        match j {
            Estimator::Classical => self.main.gamma(x, q),
            Estimator::HigherOrder => self.bc_fit().gamma(x, q),
            Estimator::LeastSquaresBc => {
                let bc = self.bc_fit();
                let g0 = self.main.gamma(x, q)?;
                let g1 = bc.gamma(x, q)?;
                let cross = self.cross_gram.as_ref().expect("cross Gram present");
                let t = bc
                    .chol
                    .solve(cross.tr_mul(&nalgebra::DVector::from_column_slice(&g0)).as_slice());
                let mut out = g0;
                out.extend(g1.iter().zip(&t).map(|(a, b)| a - b));
                Ok(out)
            }
            Estimator::PluginBc => {
                let bc = self.bc_fit();
                let parts = self.plugin.as_ref().expect("plug-in parts present");
                let g0 = self.main.gamma(x, q)?;
                let cell = self.main.spec.partition().cell_at(x)?;
                let g0v = nalgebra::DVector::from_column_slice(&g0);
                let mut second = vec![0.0; bc.spec.dim()];
                for (u, au) in parts.model.lambda.iter().zip(&parts.a) {
                    let c = parts.model.coefficient(u, q, x, &cell)?;
                    if c != 0.0 {
                        let gu = bc.gamma(x, u)?;
                        second.iter_mut().zip(&gu).for_each(|(s, g)| *s += c * g);
                    }
                    let proj = bc.chol.solve(au.tr_mul(&g0v).as_slice());
                    second.iter_mut().zip(&proj).for_each(|(s, p)| *s -= p);
                }
                let mut out = g0;
                out.extend(second);
                Ok(out)
            }
        }
    }

    /// `d^q mu_j(x) = gamma_{q,j}(x)' E_n[Pi_j y]`.
    pub fn estimate(&self, x: &[f64], q: &[usize], j: Estimator) -> Result<f64> {
        let g = self.gamma_hat(x, q, j)?;
        Ok(g.iter().zip(self.pi_y(j)).map(|(a, b)| a * b).sum())
    }

    /// Same value as [`FitResult::estimate`] computed from the coefficients,
    /// without forming `gamma`.
    pub fn predict(&self, x: &[f64], q: &[usize], j: Estimator) -> Result<f64> {
        self.require(j)?;
        self.check_q(q)?;
        let p = self.main.spec.eval(x, q)?;
        match j {
            Estimator::Classical => Ok(p.dot(&self.main.beta)),
            Estimator::HigherOrder => self.bc_fit().predict(x, q),
            Estimator::LeastSquaresBc => {
                let delta = self.ls_delta.as_ref().expect("delta present");
                Ok(p.dot(&self.main.beta) - p.dot(delta) + self.bc_fit().predict(x, q)?)
            }
            Estimator::PluginBc => {
                let parts = self.plugin.as_ref().expect("plug-in parts present");
                Ok(p.dot(&self.main.beta) + p.dot(&parts.delta) - self.leading_bias(x, q)?)
            }
        }
    }

    /// `B_{m,q}(x) = - sum_u d^u mu_1(x) b^(u-q) shape(u, q, .)`.
    pub fn leading_bias(&self, x: &[f64], q: &[usize]) -> Result<f64> {
        let bc = self
            .bc
            .as_ref()
            .ok_or_else(|| LsError::InvalidBasis("leading bias needs a bias-correction fit".into()))?;
        self.check_q(q)?;
        let spec = &self.main.spec;
        let model = match &self.plugin {
            Some(p) => p.model.clone(),
            None => LeadingErrorModel::new(spec.family(), spec.order(), spec.dims())?,
        };
        let cell = spec.partition().cell_at(x)?;
        let mut total = 0.0;
        for u in &model.lambda {
            let c = model.coefficient(u, q, x, &cell)?;
            if c != 0.0 {
                total -= c * bc.predict(x, u)?;
            }
        }
        Ok(total)
    }

    /// `B_{m,0}(x_i)` at every observation.
    pub fn leading_bias_at_data(&self) -> Result<Vec<f64>> {
        if let Some(p) = &self.plugin {
            return Ok(p.bias_at_data.clone());
        }
        let zero = vec![0; self.dims()];
        self.x.iter().map(|xi| self.leading_bias(xi, &zero)).collect()
    }

    /// `gamma_{q,0}(x)' E_n[p(x_i) B_{m,0}(x_i)]`.
    pub fn projected_bias(&self, x: &[f64], q: &[usize]) -> Result<f64> {
        let delta = match &self.plugin {
            Some(p) => p.delta.clone(),
            None => {
                let b0 = self.leading_bias_at_data()?;
                self.main.chol.solve(&self.main.design.xty(&b0))
            }
        };
        self.check_q(q)?;
        Ok(self.main.spec.eval(x, q)?.dot(&delta))
    }
}
