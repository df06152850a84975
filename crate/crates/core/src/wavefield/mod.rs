//! Forward solvers for the half-space problem with zero initial displacement
//! and initial velocity `v`, and the Fourier-side propagators used as oracles.

mod fourier;
mod leapfrog;
mod packet;

pub use fourier::{
    apply_i_pm, halfwave_oracle_trace, halfwave_oracle_trace_with_periods, oracle_periods,
    ComplexTrace,
};
pub use packet::{symbol_check, wave_packet, SymbolCheck, WavePacket};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{same_spacing, AxisBox, Lattice, ScalarField};
use leapfrog::Stepper;

/// Computational lattice (with `x_d = 0` as its lowest plane), time step and horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lattice: Lattice,
    pub dt: f64,
    pub n_steps: usize,
}

impl GridSpec {
    pub fn new(lattice: Lattice, dt: f64, n_steps: usize) -> Result<Self> {
        let d = lattice.dim();
        if d < 2 {
            return Err(Error::Config("grid dimension must be >= 2".into()));
        }
        if lattice.lo[d - 1] != 0 {
            return Err(Error::Config("grid must start at the boundary plane x_d = 0".into()));
        }
        if lattice.shape[d - 1] < 2 {
            return Err(Error::Config("grid needs at least two x_d planes".into()));
        }
        let cfl = lattice.h / (d as f64).sqrt();
        if !(dt > 0.0) || dt > cfl * (1.0 + 1e-12) {
            return Err(Error::Config(format!("CFL violated: dt = {dt} > h/sqrt(d) = {cfl}")));
        }
        Ok(Self { lattice, dt, n_steps })
    }

    /// Grid whose box covers `cover` enlarged by `horizon + 5h` on every side
    /// except the boundary `x_d = 0`.
    pub fn covering(h: f64, dt: f64, horizon: f64, cover: &AxisBox) -> Result<Self> {
        let d = cover.dim();
        let margin = horizon + 5.0 * h;
        let mut lo = Vec::with_capacity(d);
        let mut shape = Vec::with_capacity(d);
        for k in 0..d {
            let a = if k + 1 == d { 0 } else { ((cover.min[k] - margin) / h).floor() as i64 };
            let b = ((cover.max[k] + margin) / h).ceil() as i64;
            lo.push(a);
            shape.push((b - a + 1) as usize);
        }
        let n_steps = (horizon / dt - 1e-9).ceil().max(0.0) as usize;
        Self::new(Lattice::new(h, lo, shape)?, dt, n_steps)
    }

    pub fn d(&self) -> usize {
        self.lattice.dim()
    }

    pub fn h(&self) -> f64 {
        self.lattice.h
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    /// Lattice of boundary nodes `x'`.
    pub fn boundary_lattice(&self) -> Lattice {
        let d = self.d();
        Lattice {
            h: self.h(),
            lo: self.lattice.lo[..d - 1].to_vec(),
            shape: self.lattice.shape[..d - 1].to_vec(),
        }
    }

    /// Same box and horizon at half the spacing and time step.
    pub fn refined(&self) -> Result<Self> {
        let lattice = Lattice::new(
            self.h() / 2.0,
            self.lattice.lo.iter().map(|&i| 2 * i).collect(),
            self.lattice.shape.iter().map(|&n| 2 * n - 1).collect(),
        )?;
        Self::new(lattice, self.dt / 2.0, 2 * self.n_steps)
    }
}

/// Smooth compactly supported potential, or zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialQ {
    Zero,
    Bump { center: Vec<f64>, radius: f64, amplitude: f64 },
}

impl PotentialQ {
    /// `amplitude * exp(1 - 1/(1 - r^2/radius^2))` inside the ball, zero outside.
    pub fn bump(center: Vec<f64>, radius: f64, amplitude: f64) -> Result<Self> {
        let q = PotentialQ::Bump { center, radius, amplitude };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if let PotentialQ::Bump { center, radius, amplitude } = self {
            if !(*radius > 0.0) || !amplitude.is_finite() || center.iter().any(|c| !c.is_finite()) {
                return Err(Error::Construction("bump potential needs radius > 0 and finite data".into()));
            }
            let cd = center[center.len() - 1];
            if cd - radius <= 0.0 {
                return Err(Error::Construction(
                    "potential support must stay strictly inside x_d > 0".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        match self {
            PotentialQ::Zero => true,
            PotentialQ::Bump { amplitude, .. } => *amplitude == 0.0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            PotentialQ::Zero => 0.0,
            PotentialQ::Bump { center, radius, amplitude } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                let s = r2 / (radius * radius);
                if s >= 1.0 {
                    0.0
                } else {
                    amplitude * (1.0 - 1.0 / (1.0 - s)).exp()
                }
            }
        }
    }

    pub fn sample(&self, lattice: &Lattice) -> ScalarField {
        ScalarField::from_fn(lattice.clone(), |x| self.eval(x))
    }

    fn support_box(&self) -> Option<AxisBox> {
        match self {
            PotentialQ::Zero => None,
            PotentialQ::Bump { center, radius, .. } => Some(AxisBox {
                min: center.iter().map(|c| c - radius).collect(),
                max: center.iter().map(|c| c + radius).collect(),
            }),
        }
    }
}

/// Samples of `u` on `{x_d = 0} x [0, T]`, time-major: `values[n * n_x + i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTrace {
    pub xprime: Lattice,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl BoundaryTrace {
    pub fn n_space(&self) -> usize {
        self.xprime.len()
    }

    pub fn n_times(&self) -> usize {
        self.values.len() / self.n_space()
    }

    pub fn at(&self, step: usize, node: usize) -> f64 {
        self.values[step * self.n_space() + node]
    }

    pub fn time_slice(&self, step: usize) -> &[f64] {
        let n = self.n_space();
        &self.values[step * n..(step + 1) * n]
    }

    /// Relative discrete L2 distance `|self - other| / |other|` over all samples.
    pub fn relative_l2(&self, other: &BoundaryTrace) -> f64 {
        let num: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = other.values.iter().map(|b| b * b).sum();
        (num / den).sqrt()
    }
}

fn check_field_spacing(v: &ScalarField, grid: &GridSpec) -> Result<()> {
    if !same_spacing(v.lattice.h, grid.h()) || v.lattice.dim() != grid.d() {
        return Err(Error::Config("field lattice does not match the grid spacing/dimension".into()));
    }
    Ok(())
}

/// Walls must be at least the horizon away from every source of the wave.
fn check_margin(grid: &GridSpec, lo: &[i64], hi: &[i64], what: &str) -> Result<()> {
    let d = grid.d();
    let horizon = grid.horizon();
    let h = grid.h();
    for k in 0..d {
        let upper = (grid.lattice.hi(k) + 1 - hi[k]) as f64 * h;
        let lower = (lo[k] - (grid.lattice.lo[k] - 1)) as f64 * h;
        let near = if k + 1 == d { upper } else { upper.min(lower) };
        if near < horizon - 1e-9 {
            return Err(Error::Config(format!(
                "{what} lies {near:.4} from the grid wall on axis {k}; the wave would reach it before T = {horizon}"
            )));
        }
    }
    Ok(())
}

fn check_potential(q: &PotentialQ, grid: &GridSpec) -> Result<()> {
    q.validate()?;
    if let Some(b) = q.support_box() {
        if b.dim() != grid.d() {
            return Err(Error::Config("potential dimension does not match the grid".into()));
        }
        let h = grid.h();
        let lo: Vec<i64> = b.min.iter().map(|x| (x / h).floor() as i64).collect();
        let hi: Vec<i64> = b.max.iter().map(|x| (x / h).ceil() as i64).collect();
        check_margin(grid, &lo, &hi, "potential support")?;
    }
    Ok(())
}

fn prepare_initial_velocity(v: &ScalarField, grid: &GridSpec) -> Result<ScalarField> {
    check_field_spacing(v, grid)?;
    let d = grid.d();
    if v.lattice.lo[d - 1] < 0 {
        return Err(Error::Config("initial velocity must be sampled on x_d >= 0".into()));
    }
    let embedded = v.embed(&grid.lattice)?;
    let peak = embedded.values.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if let Some((lo, hi)) = embedded.support(SUPPORT_FLOOR * peak) {
        check_margin(grid, &lo, &hi, "initial velocity support")?;
    }
    Ok(embedded)
}

// Samples below this fraction of the peak do not count towards the support
// used in the wall-distance check.
const SUPPORT_FLOOR: f64 = 1e-12;

struct RunOutput {
    trace: Vec<f64>,
    energy: Vec<f64>,
}

/// Leapfrog run with `u^0 = 0`, `u^1 = dt v + dt^3/6 (Laplace - q) v`,
/// recording the `x_d`-plane `record_plane` at every level.
fn run_leapfrog(
    lattice: &Lattice,
    dt: f64,
    n_steps: usize,
    mirror: bool,
    q: Option<&[f64]>,
    v: &[f64],
    record_plane: usize,
    with_energy: bool,
) -> RunOutput {
    let st = Stepper::new(lattice, dt, mirror, q);
    let n_lines = st.boundary_offsets().len();
    let mut trace = Vec::with_capacity((n_steps + 1) * n_lines);
    let mut energy = Vec::new();
    let offsets: Vec<usize> = (0..n_lines).map(|l| st.offset_on_line(l, record_plane)).collect();

    let mut prev = st.zeros();
    let mut cur = st.zeros();
    let mut next = st.zeros();
    st.scatter(v, &mut next);
    let mut lv = st.zeros();
    st.apply_operator(&mut next, &mut lv);
    for (c, (&vi, &li)) in cur.iter_mut().zip(next.iter().zip(&lv)) {
        *c = dt * vi + dt * dt * dt / 6.0 * li;
    }

    trace.extend(std::iter::repeat(0.0).take(n_lines));
    if n_steps >= 1 {
        trace.extend(offsets.iter().map(|&o| cur[o]));
    }
    let cell = lattice.cell_volume();
    if with_energy && n_steps >= 1 {
        energy.push(st.energy(&mut prev, &cur, cell));
    }
    for _ in 1..n_steps {
        st.step(&prev, &mut cur, &mut next, None);
        trace.extend(offsets.iter().map(|&o| next[o]));
        if with_energy {
            energy.push(st.energy(&mut cur, &next, cell));
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }
    RunOutput { trace, energy }
}

/// Ghost-cell leapfrog for the Neumann half-space problem; returns `u(x', 0, t_n)`.
pub fn solve_halfspace_neumann(
    v: &ScalarField,
    q: &PotentialQ,
    grid: &GridSpec,
) -> Result<BoundaryTrace> {
    Ok(halfspace_run(v, q, grid, false)?.0)
}

/// Same run, also returning the discrete energy at every half level.
pub fn solve_halfspace_with_energy(
    v: &ScalarField,
    q: &PotentialQ,
    grid: &GridSpec,
) -> Result<(BoundaryTrace, Vec<f64>)> {
    halfspace_run(v, q, grid, true)
}

fn halfspace_run(
    v: &ScalarField,
    q: &PotentialQ,
    grid: &GridSpec,
    with_energy: bool,
) -> Result<(BoundaryTrace, Vec<f64>)> {
    let v = prepare_initial_velocity(v, grid)?;
    check_potential(q, grid)?;
    let q_samples = (!q.is_zero()).then(|| q.sample(&grid.lattice).values);
    let out = run_leapfrog(
        &grid.lattice,
        grid.dt,
        grid.n_steps,
        true,
        q_samples.as_deref(),
        &v.values,
        0,
        with_energy,
    );
    Ok((BoundaryTrace { xprime: grid.boundary_lattice(), dt: grid.dt, values: out.trace }, out.energy))
}

/// Mirror image `f(x', |x_d|)` of a field sampled on `x_d >= 0` starting at the boundary plane.
pub fn even_extend(f: &ScalarField) -> Result<ScalarField> {
    let d = f.lattice.dim();
    if f.lattice.lo[d - 1] != 0 {
        return Err(Error::Input("even extension needs a field starting at x_d = 0".into()));
    }
    let nd = f.lattice.shape[d - 1];
    let mut lo = f.lattice.lo.clone();
    let mut shape = f.lattice.shape.clone();
    lo[d - 1] = -(nd as i64 - 1);
    shape[d - 1] = 2 * nd - 1;
    let lattice = Lattice::new(f.lattice.h, lo, shape)?;
    let n_lines = f.values.len() / nd;
    let mut values = Vec::with_capacity(n_lines * (2 * nd - 1));
    for line in 0..n_lines {
        let src = &f.values[line * nd..(line + 1) * nd];
        values.extend(src.iter().rev());
        values.extend(&src[1..]);
    }
    Ok(ScalarField { lattice, values })
}

/// Whole-space copy of `v` vanishing on `x_d < 0`; the boundary plane keeps
/// half of its value so that the field plus its mirror image is the even extension.
pub(crate) fn split_zero_extend(f: &ScalarField) -> Result<ScalarField> {
    let mut e = even_extend(f)?;
    let d = e.lattice.dim();
    let n = e.lattice.shape[d - 1];
    let zero_plane = (n - 1) / 2;
    for line in e.values.chunks_mut(n) {
        line[..zero_plane].iter_mut().for_each(|x| *x = 0.0);
        line[zero_plane] *= 0.5;
    }
    Ok(e)
}

/// Whole-space Cauchy solve with the even potential and the zero-extended
/// initial velocity; returns twice the boundary value.
pub fn solve_even_extension(
    v: &ScalarField,
    q: &PotentialQ,
    grid: &GridSpec,
) -> Result<BoundaryTrace> {
    let v = prepare_initial_velocity(v, grid)?;
    check_potential(q, grid)?;
    let vt = split_zero_extend(&v)?;
    let q_whole = if q.is_zero() { None } else { Some(even_extend(&q.sample(&grid.lattice))?.values) };
    let zero_plane = grid.lattice.shape[grid.d() - 1] - 1;
    let out = run_leapfrog(
        &vt.lattice,
        grid.dt,
        grid.n_steps,
        false,
        q_whole.as_deref(),
        &vt.values,
        zero_plane,
        false,
    );
    Ok(BoundaryTrace {
        xprime: grid.boundary_lattice(),
        dt: grid.dt,
        values: out.trace.into_iter().map(|x| 2.0 * x).collect(),
    })
}

/// Time-reversed solve with a boundary flux source: zero data at `t = T`,
/// `d/dx_d w = -f` on the boundary, returning `w(., 0)` on `target`.
///
/// `flux` is time-major on the grid's boundary lattice with `n_steps + 1` levels.
pub(crate) fn solve_backward_flux(
    flux: &[f64],
    q: &PotentialQ,
    grid: &GridSpec,
    target: &Lattice,
) -> Result<ScalarField> {
    check_potential(q, grid)?;
    if !grid.lattice.contains_lattice(target) {
        return Err(Error::Config("adjoint target lattice is outside the grid".into()));
    }
    let q_samples = (!q.is_zero()).then(|| q.sample(&grid.lattice).values);
    let st = Stepper::new(&grid.lattice, grid.dt, true, q_samples.as_deref());
    let boundary = st.boundary_offsets().to_vec();
    let n_b = boundary.len();
    if flux.len() != n_b * (grid.n_steps + 1) {
        return Err(Error::Input("flux samples do not match the boundary grid".into()));
    }
    let scale = 2.0 / grid.h();
    let mut src = st.zeros();
    let mut prev = st.zeros();
    let mut cur = st.zeros();
    let mut next = st.zeros();
    // Reversed time s = T - t; level m carries t_{N - m}.
    for m in 0..grid.n_steps {
        let level = grid.n_steps - m;
        // w^{-1} = w^0 = 0 would double the first kick; zero final velocity needs half of it.
        let kick = if m == 0 { 0.5 * scale } else { scale };
        for (b, &o) in boundary.iter().enumerate() {
            src[o] = kick * flux[level * n_b + b];
        }
        st.step(&prev, &mut cur, &mut next, Some(&src));
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }
    let full = st.gather(&cur);
    ScalarField { lattice: grid.lattice.clone(), values: full }.restrict(target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid(h: f64, horizon: f64) -> GridSpec {
        let cover = AxisBox::new(vec![-1.5, 0.0], vec![1.5, 2.2]).unwrap();
        GridSpec::covering(h, h / 2.0, horizon, &cover).unwrap()
    }

    fn gaussian(grid: &GridSpec, centre: [f64; 2], width: f64) -> ScalarField {
        ScalarField::from_fn(grid.lattice.clone(), |x| {
            let r2 = (x[0] - centre[0]).powi(2) + (x[1] - centre[1]).powi(2);
            let g = (-r2 / (2.0 * width * width)).exp();
            if g < 1e-13 { 0.0 } else { g }
        })
    }

    #[test]
    fn cfl_is_enforced() {
        let lat = Lattice::new(0.1, vec![0, 0], vec![10, 10]).unwrap();
        assert!(matches!(GridSpec::new(lat.clone(), 0.08, 10), Err(Error::Config(_))));
        assert!(GridSpec::new(lat, 0.07, 10).is_ok());
    }

    #[test]
    fn zero_velocity_gives_zero_trace() {
        let grid = small_grid(1.0 / 16.0, 1.0);
        let v = ScalarField::zeros(grid.lattice.clone());
        let t = solve_halfspace_neumann(&v, &PotentialQ::Zero, &grid).unwrap();
        assert!(t.values.iter().all(|&x| x == 0.0));
        assert_eq!(t.n_times(), grid.n_steps + 1);
        let t = solve_even_extension(&v, &PotentialQ::Zero, &grid).unwrap();
        assert!(t.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn margin_violation_is_reported() {
        let grid = small_grid(1.0 / 16.0, 1.0);
        let mut v = ScalarField::zeros(grid.lattice.clone());
        let last = v.values.len() - 1;
        v.values[last] = 1.0;
        assert!(matches!(
            solve_halfspace_neumann(&v, &PotentialQ::Zero, &grid),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn even_extension_examples() {
        let lat = Lattice::new(0.25, vec![-1, 0], vec![3, 4]).unwrap();
        let z = even_extend(&ScalarField::zeros(lat.clone())).unwrap();
        assert!(z.values.iter().all(|&x| x == 0.0));
        assert_eq!(z.lattice.lo, vec![-1, -3]);

        let mut f = ScalarField::zeros(lat.clone());
        f.values[lat.flat_index(&[0, 1]).unwrap()] = 2.5;
        let e = even_extend(&f).unwrap();
        assert_eq!(e.values[e.lattice.flat_index(&[0, 1]).unwrap()], 2.5);
        assert_eq!(e.values[e.lattice.flat_index(&[0, -1]).unwrap()], 2.5);

        let sym = ScalarField::from_fn(lat, |x| x[0] + x[1] * x[1]);
        let once = even_extend(&sym).unwrap();
        let half = Lattice::new(0.25, vec![-1, 0], vec![3, 4]).unwrap();
        assert_eq!(once.restrict(&half).unwrap(), sym);
    }

    #[test]
    fn even_extension_solver_matches_ghost_cells() {
        let grid = small_grid(1.0 / 32.0, 1.5);
        let v = gaussian(&grid, [0.1, 0.7], 0.1);
        let q = PotentialQ::bump(vec![-0.2, 0.9], 0.3, 4.0).unwrap();
        let a = solve_halfspace_neumann(&v, &q, &grid).unwrap();
        let b = solve_even_extension(&v, &q, &grid).unwrap();
        let worst = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-12, "max deviation {worst}");
    }

    #[test]
    fn trace_is_even_for_even_data() {
        let grid = small_grid(1.0 / 32.0, 1.5);
        let v = gaussian(&grid, [0.0, 0.8], 0.12);
        let q = PotentialQ::bump(vec![0.0, 1.0], 0.25, 2.0).unwrap();
        let t = solve_halfspace_neumann(&v, &q, &grid).unwrap();
        let lat = &t.xprime;
        for n in 0..t.n_times() {
            for i in 0..lat.len() {
                let x = lat.multi_index(i)[0];
                if let Some(j) = lat.flat_index(&[-x]) {
                    assert!((t.at(n, i) - t.at(n, j)).abs() <= 1e-13);
                }
            }
        }
    }

    #[test]
    fn solver_is_linear() {
        let grid = small_grid(1.0 / 16.0, 1.0);
        let v1 = gaussian(&grid, [0.1, 0.6], 0.1);
        let v2 = gaussian(&grid, [-0.2, 0.9], 0.15);
        let mix = ScalarField::new(
            grid.lattice.clone(),
            v1.values.iter().zip(&v2.values).map(|(a, b)| 2.0 * a - 0.5 * b).collect(),
        )
        .unwrap();
        let q = PotentialQ::bump(vec![0.0, 0.8], 0.3, 1.0).unwrap();
        let t1 = solve_halfspace_neumann(&v1, &q, &grid).unwrap();
        let t2 = solve_halfspace_neumann(&v2, &q, &grid).unwrap();
        let tm = solve_halfspace_neumann(&mix, &q, &grid).unwrap();
        for ((a, b), m) in t1.values.iter().zip(&t2.values).zip(&tm.values) {
            assert!((2.0 * a - 0.5 * b - m).abs() <= 1e-13);
        }
    }

    #[test]
    fn energy_is_conserved_for_nonnegative_potential() {
        let grid = small_grid(1.0 / 32.0, 1.5);
        let v = gaussian(&grid, [0.0, 0.6], 0.1);
        let q = PotentialQ::bump(vec![0.1, 0.8], 0.3, 5.0).unwrap();
        let (_, energy) = solve_halfspace_with_energy(&v, &q, &grid).unwrap();
        let e0 = energy[0];
        assert!(e0 > 0.0);
        let drift = energy.iter().map(|e| (e - e0).abs() / e0).fold(0.0, f64::max);
        assert!(drift <= 1e-10, "relative energy drift {drift}");
    }

    #[test]
    fn potential_must_avoid_the_boundary() {
        assert!(PotentialQ::bump(vec![0.0, 0.2], 0.3, 1.0).is_err());
        assert!(PotentialQ::bump(vec![0.0, 0.5], 0.3, 1.0).is_ok());
    }
}
