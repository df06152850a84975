//! Explicit second-order leapfrog for `u_tt - Laplace(u) + q u = 0` on a box.
//!
//! Arrays carry a one-node halo. Halo nodes stay zero (the box walls never see
//! the wave within the horizon) except, in half-space mode, the `x_d = -h`
//! ghost plane which mirrors `x_d = +h` before every Laplacian evaluation.

use crate::grid::Lattice;

pub(crate) struct Stepper {
    shape: Vec<usize>,
    pstrides: Vec<usize>,
    plen: usize,
    /// Padded offsets of the first interior node of every line along the last axis.
    line_starts: Vec<usize>,
    mirror: bool,
    inv_h2: f64,
    dt: f64,
    q: Option<Vec<f64>>,
}

impl Stepper {
    /// `q` is given on the interior lattice (row-major); `None` means `q = 0`.
    pub fn new(lattice: &Lattice, dt: f64, mirror: bool, q: Option<&[f64]>) -> Self {
        let shape = lattice.shape.clone();
        let d = shape.len();
        let pshape: Vec<usize> = shape.iter().map(|n| n + 2).collect();
        let mut pstrides = vec![1usize; d];
        for k in (0..d - 1).rev() {
            pstrides[k] = pstrides[k + 1] * pshape[k + 1];
        }
        let plen = pshape.iter().product();

        let n_lines: usize = shape[..d - 1].iter().product();
        let mut line_starts = Vec::with_capacity(n_lines);
        for line in 0..n_lines {
            let mut rem = line;
            let mut off = pstrides[d - 1];
            for k in (0..d - 1).rev() {
                off += (rem % shape[k] + 1) * pstrides[k];
                rem /= shape[k];
            }
            line_starts.push(off);
        }

        let mut stepper = Self {
            shape,
            pstrides,
            plen,
            line_starts,
            mirror,
            inv_h2: 1.0 / (lattice.h * lattice.h),
            dt,
            q: None,
        };
        if let Some(q) = q {
            if q.iter().any(|&v| v != 0.0) {
                let mut padded = vec![0.0; plen];
                stepper.scatter(q, &mut padded);
                stepper.q = Some(padded);
            }
        }
        stepper
    }

    pub fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.plen]
    }

    fn nd(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    /// Interior row-major values into a padded array.
    pub fn scatter(&self, interior: &[f64], padded: &mut [f64]) {
        let nd = self.nd();
        for (line, &start) in self.line_starts.iter().enumerate() {
            padded[start..start + nd].copy_from_slice(&interior[line * nd..(line + 1) * nd]);
        }
    }

    pub fn gather(&self, padded: &[f64]) -> Vec<f64> {
        let nd = self.nd();
        let mut out = Vec::with_capacity(self.line_starts.len() * nd);
        for &start in &self.line_starts {
            out.extend_from_slice(&padded[start..start + nd]);
        }
        out
    }

    fn fill_ghost(&self, u: &mut [f64]) {
        if !self.mirror {
            return;
        }
        let s = self.pstrides[self.shape.len() - 1];
        for &start in &self.line_starts {
            u[start - s] = u[start + s];
        }
    }

    /// `out = (Laplace - q) u` on the interior.
    pub fn apply_operator(&self, u: &mut [f64], out: &mut [f64]) {
        self.fill_ghost(u);
        let nd = self.nd();
        let d = self.shape.len();
        for &start in &self.line_starts {
            for i in start..start + nd {
                let mut acc = -2.0 * d as f64 * u[i];
                for &s in &self.pstrides {
                    acc += u[i + s] + u[i - s];
                }
                let mut val = acc * self.inv_h2;
                if let Some(q) = &self.q {
                    val -= q[i] * u[i];
                }
                out[i] = val;
            }
        }
    }

    /// Leapfrog update `next = 2 cur - prev + dt^2 ((Laplace - q) cur + source)`.
    pub fn step(&self, prev: &[f64], cur: &mut [f64], next: &mut [f64], source: Option<&[f64]>) {
        self.fill_ghost(cur);
        let nd = self.nd();
        let d = self.shape.len();
        let dt2 = self.dt * self.dt;
        let centre = -2.0 * d as f64;
        for &start in &self.line_starts {
            for i in start..start + nd {
                let c = cur[i];
                let mut acc = centre * c;
                for &s in &self.pstrides {
                    acc += cur[i + s] + cur[i - s];
                }
                let mut rhs = acc * self.inv_h2;
                if let Some(q) = &self.q {
                    rhs -= q[i] * c;
                }
                if let Some(src) = source {
                    rhs += src[i];
                }
                next[i] = 2.0 * c - prev[i] + dt2 * rhs;
            }
        }
    }

    /// Padded offsets of the `x_d = 0` plane, one per line.
    pub fn boundary_offsets(&self) -> &[usize] {
        &self.line_starts
    }

    /// Offset of the `x_d`-index `j` (0-based, interior) on a given line.
    pub fn offset_on_line(&self, line: usize, j: usize) -> usize {
        self.line_starts[line] + j * self.pstrides[self.shape.len() - 1]
    }

    /// Leapfrog energy `1/2 |(next - cur)/dt|^2 + 1/2 <next, -(Laplace - q) cur>`
    /// in the weighted inner product that makes the operator symmetric
    /// (half weight on the mirrored `x_d = 0` plane).
    pub fn energy(&self, cur: &mut [f64], next: &[f64], cell: f64) -> f64 {
        let mut op = self.zeros();
        self.apply_operator(cur, &mut op);
        let nd = self.nd();
        let mut e = 0.0;
        for &start in &self.line_starts {
            for j in 0..nd {
                let i = start + j;
                let w = if self.mirror && j == 0 { 0.5 } else { 1.0 };
                let vel = (next[i] - cur[i]) / self.dt;
                e += w * (0.5 * vel * vel - 0.5 * next[i] * op[i]);
            }
        }
        e * cell
    }
}
