//! Integer lattices of spacing `h` and scalar fields sampled on them.
//!
//! A node with multi-index `i` sits at `x = i * h`. The last axis is the
//! normal coordinate `x_d`, so `x_d = 0` is always a lattice plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lo, hi]` in `R^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl AxisBox {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() || min.is_empty() {
            return Err(Error::Construction(format!(
                "box bounds have mismatched or zero length ({} vs {})",
                min.len(),
                max.len()
            )));
        }
        for (a, b) in min.iter().zip(&max) {
            if !a.is_finite() || !b.is_finite() || a >= b {
                return Err(Error::Construction(format!("degenerate box interval [{a}, {b}]")));
            }
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.extent(k)).product()
    }

    /// Strict membership (open box).
    pub fn contains_open(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(&v, (&a, &b))| v > a && v < b)
    }

    pub fn union(&self, other: &AxisBox) -> AxisBox {
        AxisBox {
            min: self.min.iter().zip(&other.min).map(|(a, b)| a.min(*b)).collect(),
            max: self.max.iter().zip(&other.max).map(|(a, b)| a.max(*b)).collect(),
        }
    }
}

// Slack used when snapping box bounds onto lattice planes.
const SNAP: f64 = 1e-9;

/// Rectangular patch of lattice nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub h: f64,
    pub lo: Vec<i64>,
    pub shape: Vec<usize>,
}

impl Lattice {
    pub fn new(h: f64, lo: Vec<i64>, shape: Vec<usize>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Construction(format!("lattice spacing must be positive, got {h}")));
        }
        if lo.len() != shape.len() || lo.is_empty() {
            return Err(Error::Construction("lattice lo/shape length mismatch".into()));
        }
        if shape.iter().any(|&n| n == 0) {
            return Err(Error::Construction("lattice has an empty axis".into()));
        }
        Ok(Self { h, lo, shape })
    }

    /// Nodes whose coordinates satisfy `min <= x < max` on every axis, i.e. the
    /// lower corners of the `h`-cells tiling the box.
    pub fn half_open_cells(h: f64, region: &AxisBox) -> Result<Self> {
        let mut lo = Vec::with_capacity(region.dim());
        let mut shape = Vec::with_capacity(region.dim());
        for k in 0..region.dim() {
            let first = (region.min[k] / h - SNAP).ceil() as i64;
            let end = (region.max[k] / h - SNAP).ceil() as i64;
            if end <= first {
                return Err(Error::Construction(format!(
                    "box axis {k} holds no nodes at spacing {h}"
                )));
            }
            lo.push(first);
            shape.push((end - first) as usize);
        }
        Self::new(h, lo, shape)
    }

    /// Nodes strictly inside the open box.
    pub fn open_interior(h: f64, region: &AxisBox) -> Result<Self> {
        let mut lo = Vec::with_capacity(region.dim());
        let mut shape = Vec::with_capacity(region.dim());
        for k in 0..region.dim() {
            let first = (region.min[k] / h + SNAP).floor() as i64 + 1;
            let last = (region.max[k] / h - SNAP).ceil() as i64 - 1;
            if last < first {
                return Err(Error::Construction(format!(
                    "open box axis {k} holds no nodes at spacing {h}"
                )));
            }
            lo.push(first);
            shape.push((last - first + 1) as usize);
        }
        Self::new(h, lo, shape)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hi(&self, axis: usize) -> i64 {
        self.lo[axis] + self.shape[axis] as i64 - 1
    }

    /// Row-major strides, last axis fastest.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim()];
        for k in (0..self.dim().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.shape[k + 1];
        }
        s
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<i64> {
        let mut idx = vec![0i64; self.dim()];
        for k in (0..self.dim()).rev() {
            idx[k] = self.lo[k] + (flat % self.shape[k]) as i64;
            flat /= self.shape[k];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[i64]) -> Option<usize> {
        let mut flat = 0usize;
        for k in 0..self.dim() {
            let off = idx[k] - self.lo[k];
            if off < 0 || off >= self.shape[k] as i64 {
                return None;
            }
            flat = flat * self.shape[k] + off as usize;
        }
        Some(flat)
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).into_iter().map(|i| i as f64 * self.h).collect()
    }

    pub fn contains_lattice(&self, other: &Lattice) -> bool {
        same_spacing(self.h, other.h)
            && self.dim() == other.dim()
            && (0..self.dim()).all(|k| other.lo[k] >= self.lo[k] && other.hi(k) <= self.hi(k))
    }

    /// Quadrature weight `h^d` of one node.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }
}

pub(crate) fn same_spacing(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Real function sampled on a lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub lattice: Lattice,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::Input(format!(
                "field has {} values for a lattice of {} nodes",
                values.len(),
                lattice.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("field contains non-finite values".into()));
        }
        Ok(Self { lattice, values })
    }

    pub fn zeros(lattice: Lattice) -> Self {
        let n = lattice.len();
        Self { lattice, values: vec![0.0; n] }
    }

    pub fn from_fn(lattice: Lattice, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..lattice.len()).map(|i| f(&lattice.coords(i))).collect();
        Self { lattice, values }
    }

    /// Weighted inner product with weight `h^d` per node.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        debug_assert_eq!(self.lattice, other.lattice);
        self.lattice.cell_volume()
            * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Node-index bounding box of the entries with `|v| > threshold`.
    pub fn support(&self, threshold: f64) -> Option<(Vec<i64>, Vec<i64>)> {
        let d = self.lattice.dim();
        let mut lo = vec![i64::MAX; d];
        let mut hi = vec![i64::MIN; d];
        let mut any = false;
        for (flat, v) in self.values.iter().enumerate() {
            if v.abs() > threshold {
                any = true;
                let idx = self.lattice.multi_index(flat);
                for k in 0..d {
                    lo[k] = lo[k].min(idx[k]);
                    hi[k] = hi[k].max(idx[k]);
                }
            }
        }
        any.then_some((lo, hi))
    }

    /// Copy onto a larger lattice, zero elsewhere.
    pub fn embed(&self, target: &Lattice) -> Result<ScalarField> {
        if !target.contains_lattice(&self.lattice) {
            return Err(Error::Config("field lattice is not contained in the target lattice".into()));
        }
        let mut out = ScalarField::zeros(target.clone());
        for (flat, &v) in self.values.iter().enumerate() {
            let idx = self.lattice.multi_index(flat);
            let t = target.flat_index(&idx).expect("contained");
            out.values[t] = v;
        }
        Ok(out)
    }

    /// Restriction to a sub-lattice.
    pub fn restrict(&self, target: &Lattice) -> Result<ScalarField> {
        if !self.lattice.contains_lattice(target) {
            return Err(Error::Config("restriction target is not a sub-lattice".into()));
        }
        let values = (0..target.len())
            .map(|t| {
                let idx = target.multi_index(t);
                self.values[self.lattice.flat_index(&idx).expect("contained")]
            })
            .collect();
        Ok(ScalarField { lattice: target.clone(), values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_open_cells_tile_the_reference_region() {
        let omega = AxisBox::new(vec![-0.5, 0.75], vec![0.5, 1.25]).unwrap();
        let lat = Lattice::half_open_cells(1.0 / 32.0, &omega).unwrap();
        assert_eq!(lat.lo, vec![-16, 24]);
        assert_eq!(lat.shape, vec![32, 16]);
        assert!((lat.len() as f64 * lat.cell_volume() - omega.volume()).abs() < 1e-12);
    }

    #[test]
    fn open_interior_drops_boundary_nodes() {
        let b = AxisBox::new(vec![-2.0], vec![2.0]).unwrap();
        let lat = Lattice::open_interior(1.0 / 32.0, &b).unwrap();
        assert_eq!(lat.lo, vec![-63]);
        assert_eq!(lat.shape, vec![127]);
    }

    #[test]
    fn flat_and_multi_index_agree() {
        let lat = Lattice::new(0.5, vec![-2, 3, 0], vec![4, 2, 5]).unwrap();
        for flat in 0..lat.len() {
            assert_eq!(lat.flat_index(&lat.multi_index(flat)), Some(flat));
        }
        assert_eq!(lat.flat_index(&[10, 3, 0]), None);
    }

    #[test]
    fn embed_then_restrict_is_identity() {
        let small = Lattice::new(0.25, vec![1, 2], vec![2, 3]).unwrap();
        let big = Lattice::new(0.25, vec![-3, 0], vec![10, 8]).unwrap();
        let f = ScalarField::from_fn(small.clone(), |x| x[0] + 10.0 * x[1]);
        let back = f.embed(&big).unwrap().restrict(&small).unwrap();
        assert_eq!(back, f);
    }
}
