//! Closed-form phase-space geometry: the boundary hit maps, the audible zone,
//! the smooth cutoff on the observation patch, the principal symbol of the
//! normal operator and the Weyl constant.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::AxisBox;

/// A point `(y, eta)` of the cotangent bundle over the half-space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub y: Vec<f64>,
    pub eta: Vec<f64>,
}

impl PhasePoint {
    pub fn new(y: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        if y.len() != eta.len() || y.len() < 2 {
            return Err(Error::Construction(format!(
                "phase point needs matching dimensions >= 2 (got {} and {})",
                y.len(),
                eta.len()
            )));
        }
        if y.iter().chain(&eta).any(|v| !v.is_finite()) {
            return Err(Error::Construction("phase point has non-finite entries".into()));
        }
        if y[y.len() - 1] <= 0.0 {
            return Err(Error::Construction("phase point must satisfy y_d > 0".into()));
        }
        if eta.iter().all(|&e| e == 0.0) {
            return Err(Error::Construction("phase point covector must be nonzero".into()));
        }
        Ok(Self { y, eta })
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn eta_d(&self) -> f64 {
        self.eta[self.dim() - 1]
    }

    pub fn eta_norm(&self) -> f64 {
        norm(&self.eta)
    }
}

/// A point `(x', t)` of the time-space boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEvent {
    pub xprime: Vec<f64>,
    pub t: f64,
}

/// The region `Omega` where initial data live; its closure stays off the boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionOmega {
    pub bounds: AxisBox,
}

impl RegionOmega {
    pub fn new(bounds: AxisBox) -> Result<Self> {
        if bounds.dim() < 2 {
            return Err(Error::Construction("Omega must have dimension >= 2".into()));
        }
        if bounds.min[bounds.dim() - 1] <= 0.0 {
            return Err(Error::Construction(
                "Omega must be separated from the boundary (yd_min > 0)".into(),
            ));
        }
        Ok(Self { bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn yd_min(&self) -> f64 {
        self.bounds.min[self.dim() - 1]
    }
}

/// Observation patch `Sigma = space_box x (t0, t1)` on the time-space boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSigma {
    pub space: AxisBox,
    pub t0: f64,
    pub t1: f64,
}

impl PatchSigma {
    pub fn new(space: AxisBox, t0: f64, t1: f64) -> Result<Self> {
        if !(t0 > 0.0 && t1 > t0 && t1.is_finite()) {
            return Err(Error::Construction(format!(
                "Sigma time window must satisfy 0 < t0 < t1 < inf (got {t0}, {t1})"
            )));
        }
        Ok(Self { space, t0, t1 })
    }

    /// Open-patch membership.
    pub fn contains(&self, e: &BoundaryEvent) -> bool {
        e.t > self.t0 && e.t < self.t1 && self.space.contains_open(&e.xprime)
    }

    /// Smallest extent over the space axes and the time window.
    pub fn min_extent(&self) -> f64 {
        (0..self.space.dim())
            .map(|k| self.space.extent(k))
            .fold(self.t1 - self.t0, f64::min)
    }
}

/// Sign selecting one of the two half-wave branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

/// Smooth cutoff equal to one on the closed patch and vanishing at distance
/// `delta` from it, built from a quintic smoothstep in every coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mollifier {
    pub patch: PatchSigma,
    pub delta: f64,
}

impl Mollifier {
    pub fn new(patch: PatchSigma, delta: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::Construction(format!("mollifier width must be >= 0, got {delta}")));
        }
        if delta >= patch.t0 {
            return Err(Error::Construction(format!(
                "mollifier width {delta} >= t0 = {} would put support at t <= 0",
                patch.t0
            )));
        }
        Ok(Self { patch, delta })
    }

    /// `min(0.1 * smallest patch extent, t0 / 2)`.
    pub fn default_width(patch: &PatchSigma) -> f64 {
        (0.1 * patch.min_extent()).min(0.5 * patch.t0)
    }

    pub fn with_default_width(patch: PatchSigma) -> Result<Self> {
        let delta = Self::default_width(&patch);
        Self::new(patch, delta)
    }

    pub fn eval(&self, e: &BoundaryEvent) -> f64 {
        let mut value = self.factor(e.t, self.patch.t0, self.patch.t1);
        for (k, &x) in e.xprime.iter().enumerate() {
            if value == 0.0 {
                break;
            }
            value *= self.factor(x, self.patch.space.min[k], self.patch.space.max[k]);
        }
        value
    }

    fn factor(&self, x: f64, lo: f64, hi: f64) -> f64 {
        let dist = (lo - x).max(x - hi).max(0.0);
        if dist == 0.0 {
            1.0
        } else if self.delta == 0.0 || dist >= self.delta {
            0.0
        } else {
            1.0 - smoothstep(dist / self.delta)
        }
    }
}

fn smoothstep(u: f64) -> f64 {
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Signed hit time `y_d |eta| / eta_d` and foot point, shared by `gamma` and `gamma_pm`.
fn hit(p: &PhasePoint) -> Result<(Vec<f64>, f64)> {
    let d = p.dim();
    let eta_d = p.eta_d();
    if eta_d == 0.0 {
        return Err(Error::Domain("gamma undefined on {eta_d = 0}".into()));
    }
    let yd = p.y[d - 1];
    let foot = (0..d - 1).map(|k| p.y[k] - yd * p.eta[k] / eta_d).collect();
    Ok((foot, yd * p.eta_norm() / eta_d))
}

/// Boundary point hit by the line through `y` in direction `eta`, with the hit distance as time.
pub fn gamma(p: &PhasePoint) -> Result<BoundaryEvent> {
    let (xprime, t) = hit(p)?;
    Ok(BoundaryEvent { xprime, t: t.abs() })
}

/// Signed variant: the time component carries the sign of `branch * eta_d`.
pub fn gamma_pm(p: &PhasePoint, branch: Branch) -> Result<BoundaryEvent> {
    let (xprime, t) = hit(p)?;
    Ok(BoundaryEvent { xprime, t: branch.sign() * t })
}

pub fn in_audible_zone(p: &PhasePoint, sigma: &PatchSigma) -> bool {
    match gamma(p) {
        Ok(e) => sigma.contains(&e),
        Err(_) => false,
    }
}

/// `chi(gamma_+)^2 + chi(gamma_-)^2`, zero off `{eta_d != 0}`.
pub fn kappa(p: &PhasePoint, chi: &Mollifier) -> f64 {
    if p.eta_d() == 0.0 {
        return 0.0;
    }
    [Branch::Plus, Branch::Minus]
        .iter()
        .map(|&b| {
            let c = chi.eval(&gamma_pm(p, b).expect("eta_d != 0"));
            c * c
        })
        .sum()
}

pub fn kappa_sigma(p: &PhasePoint, sigma: &PatchSigma) -> f64 {
    if in_audible_zone(p, sigma) {
        1.0
    } else {
        0.0
    }
}

/// Principal symbol of the normal operator of the cut-off observation map.
pub fn principal_symbol_b2(p: &PhasePoint, chi: &Mollifier) -> f64 {
    let eta_d = p.eta_d();
    if eta_d == 0.0 {
        return 0.0;
    }
    kappa(p, chi) / (p.eta_norm() * eta_d.abs())
}

/// Radius `sqrt(t1 / yd_min)` bounding `|eta|` on the support of the Weyl integrand.
pub fn frequency_bound(omega: &RegionOmega, sigma: &PatchSigma) -> f64 {
    (sigma.t1 / omega.yd_min()).sqrt()
}

/// Indicator of `(y, eta) in AZ` and `|eta| |eta_d| < 1`.
pub fn weyl_integrand(y: &[f64], eta: &[f64], sigma: &PatchSigma) -> bool {
    let d = y.len();
    let eta_d = eta[d - 1];
    if eta_d == 0.0 {
        return false;
    }
    let n = norm(eta);
    if n * eta_d.abs() >= 1.0 {
        return false;
    }
    let t = y[d - 1] * n / eta_d.abs();
    if !(t > sigma.t0 && t < sigma.t1) {
        return false;
    }
    (0..d - 1).all(|k| {
        let x = y[k] - y[d - 1] * eta[k] / eta_d;
        x > sigma.space.min[k] && x < sigma.space.max[k]
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMethod {
    Quadrature,
    MonteCarlo,
}

/// Estimate of the Weyl constant; serializes as the `sigma.json` record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub method: SigmaMethod,
    pub value: f64,
    pub stderr: f64,
    pub resolution_or_samples: u64,
    pub seed: Option<u64>,
}

fn check_dims(omega: &RegionOmega, sigma: &PatchSigma) -> Result<usize> {
    let d = omega.dim();
    if sigma.space.dim() + 1 != d {
        return Err(Error::Input(format!(
            "Omega has dimension {d} but Sigma has {} space axes",
            sigma.space.dim()
        )));
    }
    Ok(d)
}

/// Midpoint tensor rule over `Omega x [-R*, R*]^d` with `resolution` nodes per axis.
pub fn sigma_quadrature(
    omega: &RegionOmega,
    sigma: &PatchSigma,
    resolution: usize,
) -> Result<SigmaEstimate> {
    let d = check_dims(omega, sigma)?;
    if resolution < 2 {
        return Err(Error::Input("quadrature resolution must be >= 2".into()));
    }
    let r_star = frequency_bound(omega, sigma);
    let deta = 2.0 * r_star / resolution as f64;
    let dy: Vec<f64> = (0..d).map(|k| omega.bounds.extent(k) / resolution as f64).collect();

    // Directions that survive the |eta||eta_d| < 1 test, stored as
    // (eta'/eta_d, |eta|/|eta_d|) so the inner loop only does the hit test.
    let mut slopes: Vec<f64> = Vec::new();
    let mut stretch: Vec<f64> = Vec::new();
    let mut eta = vec![0.0; d];
    for flat in 0..resolution.pow(d as u32) {
        let mut rem = flat;
        for e in eta.iter_mut() {
            *e = -r_star + (rem % resolution) as f64 * deta + 0.5 * deta;
            rem /= resolution;
        }
        let eta_d = eta[d - 1];
        let n = norm(&eta);
        if eta_d == 0.0 || n * eta_d.abs() >= 1.0 {
            continue;
        }
        slopes.extend((0..d - 1).map(|k| eta[k] / eta_d));
        stretch.push(n / eta_d.abs());
    }

    let n_y = resolution.pow(d as u32);
    let count: u64 = (0..n_y)
        .into_par_iter()
        .map(|flat| {
            let mut y = vec![0.0; d];
            let mut rem = flat;
            for k in 0..d {
                y[k] = omega.bounds.min[k] + ((rem % resolution) as f64 + 0.5) * dy[k];
                rem /= resolution;
            }
            let yd = y[d - 1];
            let mut hits = 0u64;
            'dir: for (j, &s) in stretch.iter().enumerate() {
                let t = yd * s;
                if !(t > sigma.t0 && t < sigma.t1) {
                    continue;
                }
                for k in 0..d - 1 {
                    let x = y[k] - yd * slopes[j * (d - 1) + k];
                    if !(x > sigma.space.min[k] && x < sigma.space.max[k]) {
                        continue 'dir;
                    }
                }
                hits += 1;
            }
            hits
        })
        .sum();

    let cell = dy.iter().product::<f64>() * deta.powi(d as i32);
    Ok(SigmaEstimate {
        method: SigmaMethod::Quadrature,
        value: count as f64 * cell * (2.0 * PI).powi(-(d as i32)),
        stderr: 0.0,
        resolution_or_samples: resolution as u64,
        seed: None,
    })
}

const MC_CHUNK: u64 = 1 << 16;

/// Uniform Monte Carlo over the same box as [`sigma_quadrature`].
///
/// The sample range is cut into fixed chunks, each driven by its own ChaCha
/// stream derived from `seed`, so the result does not depend on the number of
/// worker threads.
pub fn sigma_montecarlo(
    omega: &RegionOmega,
    sigma: &PatchSigma,
    n_samples: u64,
    seed: u64,
) -> Result<SigmaEstimate> {
    let d = check_dims(omega, sigma)?;
    if n_samples == 0 {
        return Err(Error::Input("Monte Carlo needs at least one sample".into()));
    }
    let r_star = frequency_bound(omega, sigma);
    let n_chunks = n_samples.div_ceil(MC_CHUNK);
    let hits: u64 = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let len = MC_CHUNK.min(n_samples - c * MC_CHUNK);
            let mut y = vec![0.0; d];
            let mut eta = vec![0.0; d];
            let mut hits = 0u64;
            for _ in 0..len {
                for k in 0..d {
                    y[k] = omega.bounds.min[k] + omega.bounds.extent(k) * rng.random::<f64>();
                }
                for e in eta.iter_mut() {
                    *e = r_star * (2.0 * rng.random::<f64>() - 1.0);
                }
                hits += weyl_integrand(&y, &eta, sigma) as u64;
            }
            hits
        })
        .sum();

    let volume = omega.bounds.volume() * (2.0 * r_star).powi(d as i32);
    let scale = volume * (2.0 * PI).powi(-(d as i32));
    let n = n_samples as f64;
    let p = hits as f64 / n;
    let stderr = if n_samples > 1 { scale * (p * (1.0 - p) / (n - 1.0)).sqrt() } else { 0.0 };
    Ok(SigmaEstimate {
        method: SigmaMethod::MonteCarlo,
        value: scale * p,
        stderr,
        resolution_or_samples: n_samples,
        seed: Some(seed),
    })
}
