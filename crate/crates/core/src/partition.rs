//! Tensor-product partitions of a rectangular support.
//!
//! A partition stores one strictly increasing knot vector per dimension. Cells
//! are half-open boxes `[t_l, t_{l+1})`, except that the last cell of every
//! axis is closed on the right so the whole closed support is covered.

use serde::{Deserialize, Serialize};

use crate::error::{LsError, Result};

/// How interior knots are placed along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KnotRule {
    EvenlySpaced,
    QuantileSpaced,
}

/// Geometry of a single cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGeometry {
    pub index: Vec<usize>,
    /// Lower corner of the cell.
    pub t_l: Vec<f64>,
    /// Side lengths.
    pub b: Vec<f64>,
    /// Euclidean length of the diagonal.
    pub diameter: f64,
}

impl CellGeometry {
    /// Whether `x` lies in the closed cell.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.t_l.iter().zip(&self.b))
            .all(|(&v, (&lo, &w))| v >= lo && v <= lo + w)
    }

    /// Map `x` to reference coordinates `(x - t_l) / b` in `[0, 1]^d`.
    pub fn to_reference(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.t_l.iter().zip(&self.b))
            .map(|(&v, (&lo, &w))| (v - lo) / w)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeshStats {
    pub h_max: f64,
    pub h_min: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorPartition {
    knots: Vec<Vec<f64>>,
}

/// Build `kappa + 1` knots on `[lo, hi]`.
///
/// Quantile knots take the order statistic of rank `ceil(l * n / kappa)` for
/// the `l`-th interior knot; endpoints are always `lo` and `hi`.
pub fn make_knots(rule: KnotRule, bounds: (f64, f64), data_col: Option<&[f64]>, kappa: usize) -> Result<Vec<f64>> {
    let (lo, hi) = bounds;
    if kappa < 1 {
        return Err(LsError::InvalidKappa(kappa));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(LsError::InvalidPartition(format!(
            "bounds must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    match rule {
        KnotRule::EvenlySpaced => {
            let width = hi - lo;
            let mut knots: Vec<f64> = (0..=kappa).map(|l| lo + (l as f64) * width / (kappa as f64)).collect();
            knots[kappa] = hi;
            Ok(knots)
        }
        KnotRule::QuantileSpaced => {
            let col =
                data_col.ok_or_else(|| LsError::DegenerateData("quantile-spaced knots need a data column".into()))?;
            let mut sorted: Vec<f64> = col.iter().copied().filter(|v| *v >= lo && *v <= hi).collect();
            if sorted.is_empty() {
                return Err(LsError::DegenerateData("no observations inside the support".into()));
            }
            sorted.sort_by(|a, b| a.total_cmp(b));
            let mut distinct = sorted.clone();
            distinct.dedup();
            if distinct.len() < kappa + 1 {
                return Err(LsError::DegenerateData(format!(
                    "{} distinct values cannot support {} quantile cells",
                    distinct.len(),
                    kappa
                )));
            }
            let n = sorted.len();
            let mut knots = Vec::with_capacity(kappa + 1);
            knots.push(lo);
            for l in 1..kappa {
                let rank = (l * n).div_ceil(kappa);
                knots.push(sorted[rank.max(1) - 1]);
            }
            knots.push(hi);
            if knots.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(LsError::DegenerateData(format!(
                    "quantile knots collide for kappa = {kappa}; reduce the number of cells"
                )));
            }
            Ok(knots)
        }
    }
}

impl TensorPartition {
    pub fn new(knots: Vec<Vec<f64>>) -> Result<Self> {
        if knots.is_empty() {
            return Err(LsError::InvalidPartition("at least one dimension required".into()));
        }
        for (dim, k) in knots.iter().enumerate() {
            if k.len() < 2 {
                return Err(LsError::InvalidPartition(format!(
                    "dimension {dim} needs at least two knots"
                )));
            }
            if k.iter().any(|v| !v.is_finite()) {
                return Err(LsError::InvalidPartition(format!(
                    "dimension {dim} has non-finite knots"
                )));
            }
            if k.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(LsError::InvalidPartition(format!(
                    "knots in dimension {dim} must be strictly increasing"
                )));
            }
        }
        Ok(Self { knots })
    }

    /// Same rule and cell count in every dimension.
    ///
    /// `bounds` defaults to per-dimension data min/max; `x` holds observations
    /// row-wise and is only needed for quantile knots or default bounds.
    pub fn from_rule(
        rule: KnotRule,
        kappa: &[usize],
        bounds: Option<&[(f64, f64)]>,
        x: Option<&[Vec<f64>]>,
    ) -> Result<Self> {
        let d = kappa.len();
        if d == 0 {
            return Err(LsError::InvalidPartition("at least one dimension required".into()));
        }
        let mut knots = Vec::with_capacity(d);
        for dim in 0..d {
            let col: Option<Vec<f64>> = x.map(|rows| rows.iter().map(|r| r[dim]).collect());
            let b = match bounds {
                Some(b) => b[dim],
                None => {
                    let c = col
                        .as_ref()
                        .ok_or_else(|| LsError::Config("support bounds or data are required".into()))?;
                    data_range(c)?
                }
            };
            knots.push(make_knots(rule, b, col.as_deref(), kappa[dim])?);
        }
        Self::new(knots)
    }

    pub fn dims(&self) -> usize {
        self.knots.len()
    }

    pub fn knots(&self, dim: usize) -> &[f64] {
        &self.knots[dim]
    }

    pub fn all_knots(&self) -> &[Vec<f64>] {
        &self.knots
    }

    pub fn kappa(&self, dim: usize) -> usize {
        self.knots[dim].len() - 1
    }

    pub fn kappas(&self) -> Vec<usize> {
        (0..self.dims()).map(|d| self.kappa(d)).collect()
    }

    pub fn total_cells(&self) -> usize {
        self.kappas().iter().product()
    }

    pub fn bounds(&self, dim: usize) -> (f64, f64) {
        let k = &self.knots[dim];
        (k[0], k[k.len() - 1])
    }

    /// Cell index along one axis.
    pub fn locate_axis(&self, dim: usize, v: f64) -> Result<usize> {
        let k = &self.knots[dim];
        let (lo, hi) = (k[0], k[k.len() - 1]);
        if !(v >= lo && v <= hi) {
            return Err(LsError::OutOfSupport { dim, value: v, lo, hi });
        }
        // number of knots <= v, minus one, capped at the last cell
        let upper = k.partition_point(|&t| t <= v);
        Ok((upper - 1).min(k.len() - 2))
    }

    pub fn locate(&self, x: &[f64]) -> Result<Vec<usize>> {
        if x.len() != self.dims() {
            return Err(LsError::InvalidPartition(format!(
                "point has {} coordinates, partition has {} dimensions",
                x.len(),
                self.dims()
            )));
        }
        x.iter().enumerate().map(|(dim, &v)| self.locate_axis(dim, v)).collect()
    }

    /// Lexicographic flat cell index, last dimension fastest.
    pub fn flat_cell(&self, index: &[usize]) -> usize {
        index
            .iter()
            .enumerate()
            .fold(0, |acc, (dim, &i)| acc * self.kappa(dim) + i)
    }

    pub fn cell(&self, index: &[usize]) -> CellGeometry {
        let t_l: Vec<f64> = index.iter().enumerate().map(|(dim, &i)| self.knots[dim][i]).collect();
        let b: Vec<f64> = index
            .iter()
            .enumerate()
            .map(|(dim, &i)| self.knots[dim][i + 1] - self.knots[dim][i])
            .collect();
        let diameter = b.iter().map(|w| w * w).sum::<f64>().sqrt();
        CellGeometry {
            index: index.to_vec(),
            t_l,
            b,
            diameter,
        }
    }

    pub fn cell_at(&self, x: &[f64]) -> Result<CellGeometry> {
        Ok(self.cell(&self.locate(x)?))
    }

    pub fn mesh_stats(&self) -> MeshStats {
        // the extreme diameters are attained by combining extreme widths per axis
        let (mut big, mut small) = (0.0, 0.0);
        for k in &self.knots {
            let widths = k.windows(2).map(|w| w[1] - w[0]);
            let (mx, mn) = widths.fold((f64::MIN, f64::MAX), |(a, b), w| (a.max(w), b.min(w)));
            big += mx * mx;
            small += mn * mn;
        }
        let (h_max, h_min) = (f64::sqrt(big), f64::sqrt(small));
        MeshStats {
            h_max,
            h_min,
            ratio: h_max / h_min,
        }
    }

    /// Smallest side length over all axes.
    pub fn min_width(&self) -> f64 {
        self.knots
            .iter()
            .flat_map(|k| k.windows(2).map(|w| w[1] - w[0]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Minimum and maximum of a column; errors if it is empty or constant.
pub fn data_range(col: &[f64]) -> Result<(f64, f64)> {
    let (lo, hi) = col
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(lo < hi) {
        return Err(LsError::DegenerateData("covariate column is empty or constant".into()));
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn even_knots() {
        let k = make_knots(KnotRule::EvenlySpaced, (0.0, 1.0), None, 4).unwrap();
        assert_eq!(k, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let k = make_knots(KnotRule::EvenlySpaced, (0.0, 1.0), None, 1).unwrap();
        assert_eq!(k, vec![0.0, 1.0]);
    }

    #[test]
    fn zero_kappa_rejected() {
        assert_eq!(
            make_knots(KnotRule::EvenlySpaced, (0.0, 1.0), None, 0),
            Err(LsError::InvalidKappa(0))
        );
    }

    #[test]
    fn quantile_knots_track_order_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let k = make_knots(KnotRule::QuantileSpaced, (0.0, 1.0), Some(&data), 4).unwrap();
        let mut sorted = data.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        // ranks 250, 500, 750 (1-based)
        assert_eq!(k[1], sorted[249]);
        assert_eq!(k[2], sorted[499]);
        assert_eq!(k[3], sorted[749]);
        for (l, target) in [(1, 0.25), (2, 0.5), (3, 0.75)] {
            assert!((k[l] - target).abs() < 0.05);
        }
        assert_eq!((k[0], k[4]), (0.0, 1.0));
    }

    #[test]
    fn quantile_knots_collide_on_ties() {
        let data = vec![0.5; 100];
        let err = make_knots(KnotRule::QuantileSpaced, (0.0, 1.0), Some(&data), 3).unwrap_err();
        assert!(matches!(err, LsError::DegenerateData(_)));
        let data = vec![0.1, 0.1, 0.1, 0.1, 0.2, 0.9];
        let err = make_knots(KnotRule::QuantileSpaced, (0.0, 1.0), Some(&data), 3).unwrap_err();
        assert!(matches!(err, LsError::DegenerateData(_)));
    }

    #[test]
    fn locate_half_open_and_closed_right() {
        let p = TensorPartition::new(vec![vec![0.0, 0.5, 1.0]]).unwrap();
        assert_eq!(p.locate(&[0.5]).unwrap(), vec![1]);
        assert_eq!(p.locate(&[1.0]).unwrap(), vec![1]);
        assert_eq!(p.locate(&[0.0]).unwrap(), vec![0]);
        assert!(matches!(
            p.locate(&[1.0000001]),
            Err(LsError::OutOfSupport { dim: 0, .. })
        ));
        assert!(p.locate(&[-0.1]).is_err());
    }

    #[test]
    fn locate_two_dimensional() {
        let p = TensorPartition::new(vec![vec![0.0, 0.25, 0.5, 0.75, 1.0], vec![0.0, 0.5, 1.0]]).unwrap();
        assert_eq!(p.locate(&[0.3, 0.7]).unwrap(), vec![1, 1]);
        assert_eq!(p.flat_cell(&[1, 1]), 3);
    }

    #[test]
    fn mesh_statistics() {
        let p = TensorPartition::from_rule(KnotRule::EvenlySpaced, &[4], Some(&[(0.0, 1.0)]), None).unwrap();
        let s = p.mesh_stats();
        assert!((s.h_max - 0.25).abs() < 1e-15 && (s.h_min - 0.25).abs() < 1e-15);
        assert!((s.ratio - 1.0).abs() < 1e-12);

        let p = TensorPartition::new(vec![vec![0.0, 0.1, 1.0]]).unwrap();
        assert!((p.mesh_stats().ratio - 9.0).abs() < 1e-12);

        let p =
            TensorPartition::from_rule(KnotRule::EvenlySpaced, &[2, 2], Some(&[(0.0, 1.0), (0.0, 1.0)]), None).unwrap();
        assert!((p.mesh_stats().h_max - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_ties() {
        assert!(TensorPartition::new(vec![vec![0.0, 0.5, 0.5, 1.0]]).is_err());
    }

    #[test]
    fn default_bounds_from_data() {
        let x = vec![vec![0.2], vec![0.9], vec![0.4]];
        let p = TensorPartition::from_rule(KnotRule::EvenlySpaced, &[2], None, Some(&x)).unwrap();
        assert_eq!(p.bounds(0), (0.2, 0.9));
    }

    #[test]
    fn every_point_lands_in_its_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = TensorPartition::new(vec![vec![0.0, 0.1, 0.45, 1.0], vec![-1.0, 0.0, 2.0]]).unwrap();
        for _ in 0..2000 {
            let x = vec![rng.random::<f64>(), rng.random_range(-1.0..=2.0)];
            let cell = p.cell_at(&x).unwrap();
            assert!(cell.contains(&x));
            assert!(cell.b.iter().all(|&w| w > 0.0));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn even_knots_are_affine_equivariant(kappa in 1usize..40, shift in -8i32..8, scale_pow in -3i32..4) {
                let base = make_knots(KnotRule::EvenlySpaced, (0.0, 1.0), None, kappa).unwrap();
                let a = 2f64.powi(scale_pow);
                let c = shift as f64;
                let mapped = make_knots(KnotRule::EvenlySpaced, (c, c + a), None, kappa).unwrap();
                for (u, v) in base.iter().zip(&mapped) {
                    prop_assert!((c + a * u - v).abs() <= 1e-12 * (1.0 + c.abs() + a));
                }
            }

            #[test]
            fn even_partitions_have_unit_ratio(k1 in 1usize..30, k2 in 1usize..30) {
                let p = TensorPartition::from_rule(
                    KnotRule::EvenlySpaced, &[k1, k2], Some(&[(0.0, 1.0), (-2.0, 3.0)]), None).unwrap();
                prop_assert!((p.mesh_stats().ratio - 1.0).abs() < 1e-12);
            }
        }
    }
}
