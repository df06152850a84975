//! Fourier-side propagators evaluated on the boundary plane.
//!
//! A whole-space field is transformed on a periodic box large enough that
//! periodic images stay outside the light cone of every observed boundary
//! node up to the horizon. Each time level then needs only a sum over `k_d`
//! (the boundary sits at `x_d = 0`) followed by an inverse transform in `x'`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use super::{check_field_spacing, even_extend, split_zero_extend, GridSpec};
use crate::error::{Error, Result};
use crate::geometry::{Branch, BoundaryEvent, Mollifier};
use crate::grid::{Lattice, ScalarField};

use super::BoundaryTrace;

/// Complex samples on `{x_d = 0} x [0, T]`, time-major like [`BoundaryTrace`].
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTrace {
    pub xprime: Lattice,
    pub dt: f64,
    pub values: Vec<Complex64>,
}

impl ComplexTrace {
    /// `sum a conj(b) h^(d-1) dt`.
    pub fn inner(&self, other: &ComplexTrace) -> Complex64 {
        let w = self.xprime.cell_volume() * self.dt;
        self.values.iter().zip(&other.values).map(|(a, b)| a * b.conj()).sum::<Complex64>() * w
    }

    pub fn norm_sqr(&self) -> f64 {
        self.inner(self).re
    }

    pub fn real_part(&self) -> BoundaryTrace {
        BoundaryTrace {
            xprime: self.xprime.clone(),
            dt: self.dt,
            values: self.values.iter().map(|z| z.re).collect(),
        }
    }
}

// Fourier modes below this fraction of the peak amplitude are dropped.
const MODE_CUTOFF: f64 = 1e-14;

fn fast_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Minimal periodic box (in nodes per axis) that keeps images of the
/// even-extended `v` causally separated from the grid's boundary nodes up to `T`.
fn required_periods(v: &ScalarField, grid: &GridSpec) -> Vec<usize> {
    let d = grid.d();
    let h = grid.h();
    let reach = (grid.horizon() / h).ceil() as i64 + 2;
    (0..d)
        .map(|k| {
            let spread = if k + 1 == d {
                // observation at x_d = 0, sources within |x_d| <= top plane
                v.lattice.hi(k)
            } else {
                let lo = v.lattice.lo[k].min(grid.lattice.lo[k]);
                let hi = v.lattice.hi(k).max(grid.lattice.hi(k));
                hi - lo
            };
            // the whole-space field occupies 2 * top + 1 planes on the x_d axis
            let occupied = if k + 1 == d { 2 * v.lattice.hi(k) + 1 } else { 0 };
            ((spread + reach) as usize).max(occupied as usize)
        })
        .collect()
}

/// Default periodic box used by the oracle: the causal minimum rounded up to a fast FFT size.
pub fn oracle_periods(v: &ScalarField, grid: &GridSpec) -> Vec<usize> {
    required_periods(v, grid).into_iter().map(fast_size).collect()
}

struct Spectrum {
    /// Retained modes grouped by boundary frequency: `(flat k' index, [(|k|, coefficient)])`.
    groups: Vec<(usize, Vec<(f64, Complex64)>)>,
    periods: Vec<usize>,
    norm: f64,
}

fn forward_spectrum(field: &ScalarField, periods: &[usize]) -> Spectrum {
    let d = periods.len();
    let total: usize = periods.iter().product();
    let mut buf = vec![Complex64::new(0.0, 0.0); total];
    let lat = &field.lattice;
    for (flat, &val) in field.values.iter().enumerate() {
        if val == 0.0 {
            continue;
        }
        let idx = lat.multi_index(flat);
        let mut off = 0usize;
        for k in 0..d {
            off = off * periods[k] + idx[k].rem_euclid(periods[k] as i64) as usize;
        }
        buf[off] += val;
    }
    fft_nd(&mut buf, periods, FftDirection::Forward);

    let peak = buf.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let h = lat.h;
    let freq = |k: usize, m: usize| {
        let p = periods[k];
        let signed = if m <= p / 2 { m as f64 } else { m as f64 - p as f64 };
        2.0 * PI * signed / (p as f64 * h)
    };
    let pd = periods[d - 1];
    let n_outer = total / pd;
    let mut groups = Vec::new();
    for outer in 0..n_outer {
        let mut rem = outer;
        let mut kp2 = 0.0;
        for k in (0..d - 1).rev() {
            let f = freq(k, rem % periods[k]);
            kp2 += f * f;
            rem /= periods[k];
        }
        let modes: Vec<(f64, Complex64)> = (0..pd)
            .filter_map(|m| {
                let c = buf[outer * pd + m];
                (c.norm() > MODE_CUTOFF * peak).then(|| {
                    let kd = freq(d - 1, m);
                    ((kp2 + kd * kd).sqrt(), c)
                })
            })
            .collect();
        if !modes.is_empty() {
            groups.push((outer, modes));
        }
    }
    Spectrum { groups, periods: periods.to_vec(), norm: 1.0 / total as f64 }
}

fn fft_nd(buf: &mut [Complex64], periods: &[usize], dir: FftDirection) {
    let mut planner = FftPlanner::new();
    let d = periods.len();
    let total = buf.len();
    let mut stride = 1usize;
    for k in (0..d).rev() {
        let n = periods[k];
        if n > 1 {
            let fft = planner.plan_fft(n, dir);
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            let block = n * stride;
            for base in (0..total).step_by(block) {
                for s in 0..stride {
                    for (m, l) in line.iter_mut().enumerate() {
                        *l = buf[base + s + m * stride];
                    }
                    fft.process(&mut line);
                    for (m, l) in line.iter().enumerate() {
                        buf[base + s + m * stride] = *l;
                    }
                }
            }
        }
        stride *= n;
    }
}

/// Evaluate `F^{-1}[m(t, |k|) F f](x', 0, t)` at the grid's boundary nodes for all levels.
fn boundary_synthesis(
    field: &ScalarField,
    grid: &GridSpec,
    periods: &[usize],
    multiplier: impl Fn(f64, f64) -> Complex64,
) -> ComplexTrace {
    let spec = forward_spectrum(field, periods);
    let d = grid.d();
    let boundary_periods = &spec.periods[..d - 1];
    let n_b: usize = boundary_periods.iter().product();
    let blat = grid.boundary_lattice();
    let pick: Vec<usize> = (0..blat.len())
        .map(|i| {
            let idx = blat.multi_index(i);
            let mut off = 0usize;
            for k in 0..d - 1 {
                off = off * boundary_periods[k] + idx[k].rem_euclid(boundary_periods[k] as i64) as usize;
            }
            off
        })
        .collect();

    let mut values = Vec::with_capacity((grid.n_steps + 1) * blat.len());
    let mut g = vec![Complex64::new(0.0, 0.0); n_b];
    for n in 0..=grid.n_steps {
        let t = n as f64 * grid.dt;
        g.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (outer, modes) in &spec.groups {
            g[*outer] = modes.iter().map(|&(kn, c)| c * multiplier(t, kn)).sum();
        }
        fft_nd(&mut g, boundary_periods, FftDirection::Inverse);
        values.extend(pick.iter().map(|&o| g[o] * spec.norm));
    }
    ComplexTrace { xprime: blat, dt: grid.dt, values }
}

fn validate_periods(v: &ScalarField, grid: &GridSpec, periods: &[usize]) -> Result<()> {
    check_field_spacing(v, grid)?;
    let d = grid.d();
    if v.lattice.lo[d - 1] < 0 {
        return Err(Error::Config("initial velocity must be sampled on x_d >= 0".into()));
    }
    let need = required_periods(v, grid);
    if periods.len() != d {
        return Err(Error::Config("one period per axis is required".into()));
    }
    for k in 0..d {
        if periods[k] < need[k] {
            return Err(Error::Config(format!(
                "insufficient padding on axis {k}: period {} < {} nodes needed for causal separation",
                periods[k], need[k]
            )));
        }
    }
    Ok(())
}

/// Lift a half-space field onto a lattice starting at the boundary plane.
fn from_boundary(v: &ScalarField) -> Result<ScalarField> {
    let d = v.lattice.dim();
    if v.lattice.lo[d - 1] == 0 {
        return Ok(v.clone());
    }
    let mut lo = v.lattice.lo.clone();
    let mut shape = v.lattice.shape.clone();
    shape[d - 1] = (v.lattice.hi(d - 1) + 1) as usize;
    lo[d - 1] = 0;
    v.embed(&Lattice::new(v.lattice.h, lo, shape)?)
}

/// Exact `q = 0` boundary trace: `sin(t|k|)/|k|` applied to the even extension of `v`.
pub fn halfwave_oracle_trace(v: &ScalarField, grid: &GridSpec) -> Result<BoundaryTrace> {
    let periods = oracle_periods(v, grid);
    halfwave_oracle_trace_with_periods(v, grid, &periods)
}

pub fn halfwave_oracle_trace_with_periods(
    v: &ScalarField,
    grid: &GridSpec,
    periods: &[usize],
) -> Result<BoundaryTrace> {
    validate_periods(v, grid, periods)?;
    let ve = even_extend(&from_boundary(v)?)?;
    let trace = boundary_synthesis(&ve, grid, periods, |t, kn| {
        let m = if kn == 0.0 { t } else { (t * kn).sin() / kn };
        Complex64::new(m, 0.0)
    });
    Ok(trace.real_part())
}

/// One-sided propagator `chi * F^{-1}[ +-(2i|k|)^{-1} e^{+-it|k|} F v~ ]` on the boundary,
/// with `v~` the zero extension of `v`. At `k = 0` each branch takes `t/2`.
pub fn apply_i_pm(
    v: &ScalarField,
    branch: Branch,
    chi: Option<&Mollifier>,
    grid: &GridSpec,
) -> Result<ComplexTrace> {
    let periods = oracle_periods(v, grid);
    validate_periods(v, grid, &periods)?;
    let vt = split_zero_extend(&from_boundary(v)?)?;
    let s = branch.sign();
    let mut trace = boundary_synthesis(&vt, grid, &periods, |t, kn| {
        if kn == 0.0 {
            Complex64::new(0.5 * t, 0.0)
        } else {
            // s e^{i s t k} / (2 i k)
            Complex64::from_polar(1.0, s * t * kn) * Complex64::new(0.0, -s / (2.0 * kn))
        }
    });
    if let Some(chi) = chi {
        let n_x = trace.xprime.len();
        let coords: Vec<Vec<f64>> = (0..n_x).map(|i| trace.xprime.coords(i)).collect();
        for (flat, z) in trace.values.iter_mut().enumerate() {
            let e = BoundaryEvent { xprime: coords[flat % n_x].clone(), t: (flat / n_x) as f64 * grid.dt };
            *z *= chi.eval(&e);
        }
    }
    Ok(trace)
}
