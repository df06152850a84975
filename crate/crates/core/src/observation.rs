//! Dense discretization of the restricted observation operator between
//! quadrature-weighted Euclidean copies of `L2(Omega)` and `L2(Sigma)`.
//!
//! Rows are ordered lexicographically by `(x', t)`, columns lexicographically
//! by the Omega node coordinates (last axis fastest).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PatchSigma, RegionOmega};
use crate::grid::{same_spacing, Lattice, ScalarField};
use crate::wavefield::{
    solve_backward_flux, solve_even_extension, solve_halfspace_neumann, BoundaryTrace, GridSpec,
    PotentialQ,
};

// Slack for snapping the time window onto the step lattice.
const SNAP: f64 = 1e-9;

/// Quadrature nodes of Omega and Sigma.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingScheme {
    /// Lower corners of the `h`-cells tiling Omega.
    pub omega: Lattice,
    /// Boundary nodes strictly inside the spatial part of Sigma.
    pub sigma_space: Lattice,
    /// Time steps `first_step .. first_step + n_time` lie strictly inside `(t0, t1)`.
    pub first_step: usize,
    pub n_time: usize,
    pub dt: f64,
}

impl SamplingScheme {
    pub fn new(omega: &RegionOmega, sigma: &PatchSigma, h: f64, dt: f64) -> Result<Self> {
        if omega.dim() != sigma.space.dim() + 1 {
            return Err(Error::Config("Omega and Sigma dimensions disagree".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::Config("time step must be positive".into()));
        }
        let omega_nodes = Lattice::half_open_cells(h, &omega.bounds)?;
        let sigma_space = Lattice::open_interior(h, &sigma.space)?;
        let first = (sigma.t0 / dt + SNAP).floor() as usize + 1;
        let last = (sigma.t1 / dt - SNAP).ceil() as i64 - 1;
        if last < first as i64 {
            return Err(Error::Config("Sigma time window holds no time steps".into()));
        }
        Ok(Self {
            omega: omega_nodes,
            sigma_space,
            first_step: first,
            n_time: (last - first as i64 + 1) as usize,
            dt,
        })
    }

    pub fn h(&self) -> f64 {
        self.omega.h
    }

    pub fn n_rows(&self) -> usize {
        self.sigma_space.len() * self.n_time
    }

    pub fn n_cols(&self) -> usize {
        self.omega.len()
    }

    /// `h^d`.
    pub fn w_omega(&self) -> f64 {
        self.omega.cell_volume()
    }

    /// `h^(d-1) dt`.
    pub fn w_sigma(&self) -> f64 {
        self.sigma_space.cell_volume() * self.dt
    }

    pub fn last_step(&self) -> usize {
        self.first_step + self.n_time - 1
    }

    /// Row index of boundary node `node` (flat in `sigma_space`) at step `first_step + k`.
    pub fn row(&self, node: usize, k: usize) -> usize {
        node * self.n_time + k
    }

    /// Same time window with only the steps `first_step + offset .. + len`.
    pub fn time_subwindow(&self, offset: usize, len: usize) -> Result<Self> {
        if len == 0 || offset + len > self.n_time {
            return Err(Error::Config("sub-window is not inside the time window".into()));
        }
        Ok(Self { first_step: self.first_step + offset, n_time: len, ..self.clone() })
    }

    /// Check that the grid records every Sigma sample and contains Omega.
    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if !same_spacing(grid.h(), self.h()) || !same_spacing(grid.dt, self.dt) {
            return Err(Error::Config("sampling scheme and grid use different h or dt".into()));
        }
        if !grid.lattice.contains_lattice(&self.omega) {
            return Err(Error::Config("Omega nodes are outside the grid".into()));
        }
        if !grid.boundary_lattice().contains_lattice(&self.sigma_space) {
            return Err(Error::Config("Sigma nodes are outside the boundary grid".into()));
        }
        if self.last_step() > grid.n_steps {
            return Err(Error::Config(format!(
                "grid horizon {} ends before the Sigma window",
                grid.horizon()
            )));
        }
        Ok(())
    }

    /// Indices into `BoundaryTrace::values` for every row, for a trace whose
    /// spacing and time step are `1/ratio` of the scheme's.
    fn trace_indices_refined(&self, boundary: &Lattice, ratio: usize) -> Vec<usize> {
        let n_b = boundary.len();
        let r = ratio as i64;
        let mut out = Vec::with_capacity(self.n_rows());
        for node in 0..self.sigma_space.len() {
            let idx: Vec<i64> = self.sigma_space.multi_index(node).into_iter().map(|i| r * i).collect();
            let b = boundary.flat_index(&idx).expect("Sigma node inside the boundary lattice");
            for k in 0..self.n_time {
                out.push((self.first_step + k) * ratio * n_b + b);
            }
        }
        out
    }

    fn trace_indices(&self, boundary: &Lattice) -> Vec<usize> {
        self.trace_indices_refined(boundary, 1)
    }

    /// Unweighted trace samples at the Sigma nodes, in row order. The trace may
    /// come from a grid refined by an integer factor in both `h` and `dt`.
    pub fn sample_trace(&self, trace: &BoundaryTrace) -> Result<Vec<f64>> {
        let ratio = (self.h() / trace.xprime.h).round();
        if ratio < 1.0
            || !same_spacing(self.h(), ratio * trace.xprime.h)
            || !same_spacing(self.dt, ratio * trace.dt)
        {
            return Err(Error::Input("trace spacing is not an integer refinement of the scheme".into()));
        }
        let ratio = ratio as usize;
        let r = ratio as i64;
        let b = &trace.xprime;
        let covers = (0..b.dim()).all(|k| {
            b.lo[k] <= r * self.sigma_space.lo[k] && r * self.sigma_space.hi(k) <= b.hi(k)
        });
        if b.dim() != self.sigma_space.dim() || !covers || trace.n_times() <= ratio * self.last_step() {
            return Err(Error::Input("trace does not cover the Sigma nodes".into()));
        }
        Ok(self.trace_indices_refined(b, ratio).into_iter().map(|i| trace.values[i]).collect())
    }

    /// Field on the Omega nodes from Euclidean coefficients `c_j = sqrt(w) v_j`.
    pub fn field_from_coefficients(&self, c: &[f64]) -> Result<ScalarField> {
        let s = 1.0 / self.w_omega().sqrt();
        ScalarField::new(self.omega.clone(), c.iter().map(|x| x * s).collect())
    }

    /// Euclidean coefficients of a field on (a lattice containing) the Omega nodes.
    pub fn coefficients_of(&self, v: &ScalarField) -> Result<Vec<f64>> {
        let s = self.w_omega().sqrt();
        Ok(v.restrict(&self.omega)?.values.into_iter().map(|x| x * s).collect())
    }
}

/// Forward solver used for the columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    /// Ghost-cell half-space solve, one run per column.
    Neumann,
    /// Whole-space even-extension solve, one run per column.
    EvenExtension,
    /// One Neumann run per `x_d` level of Omega, shifted along `x'`; needs `q = 0`.
    ShiftInvariant,
}

/// `A_ij = sqrt(wS) (O v_j)(sigma_i)` with `v_j` the normalized indicator of cell `j`.
#[derive(Clone, Debug)]
pub struct ObservationMatrix {
    pub matrix: DMatrix<f64>,
    pub scheme: SamplingScheme,
}

impl ObservationMatrix {
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// `A^T f / sqrt(wO)`, which approximates the adjoint field `O* g` with `g = f / sqrt(wS)`.
    pub fn transpose_field(&self, f: &[f64]) -> Result<ScalarField> {
        if f.len() != self.nrows() {
            return Err(Error::Input("data length does not match the matrix rows".into()));
        }
        let g = self.matrix.tr_mul(&nalgebra::DVector::from_column_slice(f));
        self.scheme.field_from_coefficients(g.as_slice())
    }

    /// Euclidean data vector `sqrt(wS) u|_Sigma` of a trace.
    pub fn data_from_trace(&self, trace: &BoundaryTrace) -> Result<Vec<f64>> {
        weighted_samples(&self.scheme, trace)
    }
}

/// `sqrt(wS) u|_Sigma` in row order.
pub fn weighted_samples(scheme: &SamplingScheme, trace: &BoundaryTrace) -> Result<Vec<f64>> {
    let s = scheme.w_sigma().sqrt();
    Ok(scheme.sample_trace(trace)?.into_iter().map(|x| x * s).collect())
}

fn basis_field(scheme: &SamplingScheme, j: usize) -> ScalarField {
    let mut v = ScalarField::zeros(scheme.omega.clone());
    v.values[j] = 1.0 / scheme.w_omega().sqrt();
    v
}

/// Assemble the matrix column by column; columns run in parallel and each one
/// writes only its own slot.
pub fn assemble(
    solver: SolverChoice,
    q: &PotentialQ,
    grid: &GridSpec,
    scheme: &SamplingScheme,
) -> Result<ObservationMatrix> {
    scheme.check_grid(grid)?;
    let m = scheme.n_rows();
    let n = scheme.n_cols();
    let columns: Vec<Vec<f64>> = match solver {
        SolverChoice::ShiftInvariant => {
            let shifted = ShiftedTraces::new(q, grid, scheme)?;
            (0..n).into_par_iter().map(|j| shifted.column(j)).collect()
        }
        SolverChoice::Neumann | SolverChoice::EvenExtension => {
            let indices = scheme.trace_indices(&grid.boundary_lattice());
            let s = scheme.w_sigma().sqrt();
            (0..n)
                .into_par_iter()
                .map(|j| {
                    let v = basis_field(scheme, j);
                    let trace = match solver {
                        SolverChoice::Neumann => solve_halfspace_neumann(&v, q, grid),
                        _ => solve_even_extension(&v, q, grid),
                    }
                    .map_err(|e| Error::Column { column: j, source: Box::new(e) })?;
                    Ok(indices.iter().map(|&i| s * trace.values[i]).collect())
                })
                .collect::<Result<_>>()?
        }
    };
    let mut matrix = DMatrix::zeros(m, n);
    for (j, col) in columns.into_iter().enumerate() {
        matrix.column_mut(j).copy_from_slice(&col);
    }
    if matrix.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("assembled matrix has non-finite entries".into()));
    }
    Ok(ObservationMatrix { matrix, scheme: scheme.clone() })
}

/// For `q = 0` the scheme commutes with integer shifts along `x'`, so the
/// trace of a basis cell is a shifted copy of the trace of the cell in the
/// same `x_d` level with the smallest `x'` indices.
pub struct ShiftedTraces {
    scheme: SamplingScheme,
    /// One trace per `x_d` level of Omega, on a boundary lattice widened downwards.
    levels: Vec<Vec<f64>>,
    /// Row `i` reads `levels[..][row_base[i] - col_offset[j]]`.
    row_base: Vec<usize>,
    col_offset: Vec<usize>,
    col_level: Vec<usize>,
    weight: f64,
}

impl ShiftedTraces {
    pub fn new(q: &PotentialQ, grid: &GridSpec, scheme: &SamplingScheme) -> Result<Self> {
        if !q.is_zero() {
            return Err(Error::Config("shift-invariant assembly needs q = 0".into()));
        }
        scheme.check_grid(grid)?;
        let d = grid.d();
        let om = &scheme.omega;

        // widen the x' axes below by the Omega extent so every shifted read stays inside
        let mut lo = grid.lattice.lo.clone();
        let mut shape = grid.lattice.shape.clone();
        for k in 0..d - 1 {
            lo[k] -= om.shape[k] as i64 - 1;
            shape[k] += om.shape[k] - 1;
        }
        let wide = GridSpec::new(Lattice::new(grid.h(), lo, shape)?, grid.dt, grid.n_steps)?;
        let boundary = wide.boundary_lattice();
        let bstrides = boundary.strides();

        let nd = om.shape[d - 1];
        let levels: Vec<Vec<f64>> = (0..nd)
            .into_par_iter()
            .map(|level| {
                let mut idx = om.lo.clone();
                idx[d - 1] += level as i64;
                let single = Lattice::new(grid.h(), idx, vec![1; d])?;
                let v = ScalarField::new(single, vec![1.0 / scheme.w_omega().sqrt()])?;
                solve_halfspace_neumann(&v, q, &wide)
                    .map(|t| t.values)
                    .map_err(|e| Error::Column { column: level, source: Box::new(e) })
            })
            .collect::<Result<_>>()?;

        let row_base = scheme.trace_indices(&boundary);
        let mut col_offset = Vec::with_capacity(om.len());
        let mut col_level = Vec::with_capacity(om.len());
        for j in 0..om.len() {
            let idx = om.multi_index(j);
            let off: usize = (0..d - 1).map(|k| (idx[k] - om.lo[k]) as usize * bstrides[k]).sum();
            col_offset.push(off);
            col_level.push((idx[d - 1] - om.lo[d - 1]) as usize);
        }
        Ok(Self {
            scheme: scheme.clone(),
            levels,
            row_base,
            col_offset,
            col_level,
            weight: scheme.w_sigma().sqrt(),
        })
    }

    pub fn scheme(&self) -> &SamplingScheme {
        &self.scheme
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let t = &self.levels[self.col_level[j]];
        let off = self.col_offset[j];
        self.row_base.iter().map(|&b| self.weight * t[b - off]).collect()
    }

    /// `A c` without forming `A`.
    pub fn apply(&self, c: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.row_base.len()];
        for (j, &cj) in c.iter().enumerate() {
            if cj == 0.0 {
                continue;
            }
            let t = &self.levels[self.col_level[j]];
            let off = self.col_offset[j];
            let a = self.weight * cj;
            for (yi, &b) in y.iter_mut().zip(&self.row_base) {
                *yi += a * t[b - off];
            }
        }
        y
    }

    /// `A^T f` without forming `A`.
    pub fn apply_transpose(&self, f: &[f64]) -> Vec<f64> {
        (0..self.col_offset.len())
            .into_par_iter()
            .map(|j| {
                let t = &self.levels[self.col_level[j]];
                let off = self.col_offset[j];
                self.weight * self.row_base.iter().zip(f).map(|(&b, &fi)| fi * t[b - off]).sum::<f64>()
            })
            .collect()
    }
}

/// Adjoint field `O* g` on the Omega nodes by time reversal, for Euclidean
/// data `f = sqrt(wS) g` on the Sigma nodes.
pub fn apply_adjoint_timereversal(
    f: &[f64],
    q: &PotentialQ,
    grid: &GridSpec,
    scheme: &SamplingScheme,
) -> Result<ScalarField> {
    scheme.check_grid(grid)?;
    if f.len() != scheme.n_rows() {
        return Err(Error::Input("data length does not match the Sigma nodes".into()));
    }
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("data has non-finite entries".into()));
    }
    let boundary = grid.boundary_lattice();
    let mut flux = vec![0.0; boundary.len() * (grid.n_steps + 1)];
    let s = 1.0 / scheme.w_sigma().sqrt();
    for (&i, &fi) in scheme.trace_indices(&boundary).iter().zip(f) {
        flux[i] = s * fi;
    }
    solve_backward_flux(&flux, q, grid, &scheme.omega)
}
