//! Truncated-SVD and Tikhonov solutions of the observation problem and the
//! wave-packet reconstruction study.

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{in_audible_zone, PatchSigma, PhasePoint, RegionOmega};
use crate::grid::{Lattice, ScalarField};
use crate::linalg::Svd;
use crate::observation::{weighted_samples, SamplingScheme};
use crate::wavefield::{solve_halfspace_neumann, wave_packet, GridSpec, PotentialQ};

/// Which terms of the singular series are kept.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruncationRule {
    /// `s_n > lambda`.
    Threshold { lambda: f64 },
    /// `s_n > factor * s_1`.
    Relative { factor: f64 },
    /// `n <= rank`.
    Rank { rank: usize },
}

impl TruncationRule {
    /// Number of leading terms kept.
    pub fn kept_terms(&self, svals: &[f64]) -> Result<usize> {
        match *self {
            TruncationRule::Threshold { lambda } => {
                if !(lambda > 0.0) {
                    return Err(Error::Input(format!("threshold must be positive, got {lambda}")));
                }
                Ok(svals.iter().take_while(|&&s| s > lambda).count())
            }
            TruncationRule::Relative { factor } => {
                if !(factor > 0.0) {
                    return Err(Error::Input(format!("relative threshold must be positive, got {factor}")));
                }
                let lambda = factor * svals.first().copied().unwrap_or(0.0);
                Ok(svals.iter().take_while(|&&s| s > lambda && s > 0.0).count())
            }
            TruncationRule::Rank { rank } => {
                if rank == 0 || rank > svals.len() {
                    return Err(Error::Input(format!("rank must lie in [1, {}], got {rank}", svals.len())));
                }
                Ok(rank)
            }
        }
    }

    /// Numerical pseudo-inverse: every singular value above `eps max(M, N) s_1`.
    pub fn pseudo_inverse(svd: &Svd) -> Self {
        let (m, n) = svd.shape();
        TruncationRule::Relative { factor: f64::EPSILON * m.max(n) as f64 }
    }
}

/// Euclidean coefficients of a regularized solution.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub coefficients: Vec<f64>,
    pub kept_terms: usize,
    /// The rule selected no term; the solution is zero.
    pub empty: bool,
}

fn check_data(svd: &Svd, f: &[f64]) -> Result<()> {
    if f.len() != svd.shape().0 {
        return Err(Error::Input(format!("data has {} entries, expected {}", f.len(), svd.shape().0)));
    }
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("data has non-finite entries".into()));
    }
    Ok(())
}

/// `sum_{kept} s_n^-1 <f, f_n> v_n`.
pub fn truncated_svd_solve(svd: &Svd, f: &[f64], rule: TruncationRule) -> Result<Solution> {
    check_data(svd, f)?;
    let s = &svd.singular_values;
    let kept = rule.kept_terms(s)?;
    if kept == 0 {
        warn!("truncation rule {rule:?} keeps no singular value; returning zero");
        return Ok(Solution { coefficients: vec![0.0; svd.shape().1], kept_terms: 0, empty: true });
    }
    let mut c = svd.left_coefficients(f);
    for (n, cn) in c.iter_mut().enumerate() {
        *cn = if n < kept { *cn / s[n] } else { 0.0 };
    }
    Ok(Solution { coefficients: svd.right_synthesis(&c), kept_terms: kept, empty: false })
}

/// `sum_n s_n / (s_n^2 + alpha) <f, f_n> v_n`.
pub fn tikhonov_solve(svd: &Svd, f: &[f64], alpha: f64) -> Result<Solution> {
    check_data(svd, f)?;
    if !(alpha > 0.0) {
        return Err(Error::Input(format!("Tikhonov parameter must be positive, got {alpha}")));
    }
    let s = &svd.singular_values;
    let mut c = svd.left_coefficients(f);
    for (cn, sn) in c.iter_mut().zip(s) {
        *cn *= sn / (sn * sn + alpha);
    }
    Ok(Solution { coefficients: svd.right_synthesis(&c), kept_terms: s.len(), empty: false })
}

/// `||A v_rec - f||` for the truncated solution keeping `kept` terms:
/// the part of `f` outside the retained left singular vectors.
pub fn truncated_residual(svd: &Svd, f: &[f64], kept: usize) -> Result<f64> {
    check_data(svd, f)?;
    let c = svd.left_coefficients(f);
    let dropped: f64 = c[kept.min(c.len())..].iter().map(|x| x * x).sum();
    Ok((dropped + svd.left_complement_norm_sqr(f)).sqrt())
}

/// Weighted correlation; zero when either side vanishes.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0)
    }
}

/// `||a - b|| / ||b||`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Wave packet used as a reconstruction probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub y: Vec<f64>,
    pub dir: Vec<f64>,
    pub k: f64,
    pub w: f64,
}

impl Probe {
    pub fn phase_point(&self) -> Result<PhasePoint> {
        PhasePoint::new(self.y.clone(), self.dir.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub probe: Probe,
    pub noise: f64,
    pub rule: TruncationRule,
    pub kept_terms: usize,
    pub correlation: f64,
    pub relative_error: f64,
    pub in_audible_zone: bool,
    pub leaked_mass: f64,
}

/// Everything the reconstruction study needs besides the probes.
pub struct Experiment<'a> {
    pub svd: &'a Svd,
    pub scheme: &'a SamplingScheme,
    /// Grid of the assembly; forward data come from its refinement.
    pub grid: &'a GridSpec,
    pub q: &'a PotentialQ,
    pub omega: &'a RegionOmega,
    pub sigma: &'a PatchSigma,
}

/// Probe field and its data.
pub struct ForwardData {
    /// Euclidean coefficients of the probe on the Omega nodes.
    pub truth: Vec<f64>,
    /// Euclidean data on the Sigma nodes, noiseless.
    pub data: Vec<f64>,
    pub leaked_mass: f64,
}

impl Experiment<'_> {
    /// Packet sampled on the Omega cells of the refined grid, propagated by the
    /// solver on that grid and sampled at the assembly's Sigma nodes.
    pub fn forward(&self, probe: &Probe) -> Result<ForwardData> {
        let p = probe.phase_point()?;
        if !self.omega.bounds.contains_open(&p.y) {
            return Err(Error::Input(format!("probe centre {:?} lies outside Omega", p.y)));
        }
        let fine_grid = self.grid.refined()?;
        let fine_omega = Lattice::half_open_cells(fine_grid.h(), &self.omega.bounds)?;
        let packet = wave_packet(&p, probe.w, probe.k, &fine_omega)?;
        let trace = solve_halfspace_neumann(&packet.field, self.q, &fine_grid)?;
        let data = weighted_samples(self.scheme, &trace)?;
        let coarse = subsample(&packet.field, &self.scheme.omega)?;
        let truth = self.scheme.coefficients_of(&coarse)?;
        Ok(ForwardData { truth, data, leaked_mass: packet.leaked_mass })
    }
}

/// Values at the nodes of `coarse`, whose spacing is an integer multiple of the field's.
fn subsample(field: &ScalarField, coarse: &Lattice) -> Result<ScalarField> {
    let r = (coarse.h / field.lattice.h).round() as i64;
    let values = (0..coarse.len())
        .map(|i| {
            let idx: Vec<i64> = coarse.multi_index(i).into_iter().map(|j| r * j).collect();
            field
                .lattice
                .flat_index(&idx)
                .map(|f| field.values[f])
                .ok_or_else(|| Error::Input("coarse node missing from the fine lattice".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    ScalarField::new(coarse.clone(), values)
}

/// `f + level ||f|| / sqrt(M) xi` with standard normal `xi`.
pub fn add_noise(f: &[f64], level: f64, seed: u64, stream: u64) -> Vec<f64> {
    if level == 0.0 {
        return f.to_vec();
    }
    let scale = level * f.iter().map(|x| x * x).sum::<f64>().sqrt() / (f.len() as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    f.iter()
        .map(|x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x + scale * z
        })
        .collect()
}

/// Forward-map, perturb, invert and score every probe; probes centred
/// outside Omega are skipped with a notice.
pub fn audibility_experiment(
    exp: &Experiment,
    probes: &[Probe],
    noise: f64,
    rule: TruncationRule,
    seed: u64,
) -> Result<Vec<ReconstructionReport>> {
    let results: Vec<Option<ReconstructionReport>> = probes
        .par_iter()
        .enumerate()
        .map(|(i, probe)| {
            let p = probe.phase_point()?;
            if !exp.omega.bounds.contains_open(&p.y) {
                info!("skipping probe {i}: centre {:?} lies outside Omega", p.y);
                return Ok(None);
            }
            let fwd = exp.forward(probe)?;
            let f = add_noise(&fwd.data, noise, seed, i as u64);
            let sol = truncated_svd_solve(exp.svd, &f, rule)?;
            Ok(Some(ReconstructionReport {
                probe: probe.clone(),
                noise,
                rule,
                kept_terms: sol.kept_terms,
                correlation: correlation(&sol.coefficients, &fwd.truth),
                relative_error: relative_error(&sol.coefficients, &fwd.truth),
                in_audible_zone: in_audible_zone(&p, exp.sigma),
                leaked_mass: fwd.leaked_mass,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().flatten().collect())
}

/// One point of a truncation sweep (L-curve data).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda_c: f64,
    pub kept_terms: usize,
    pub residual: f64,
    pub solution_norm: f64,
    pub relative_error: f64,
}

/// Truncated solutions for thresholds `factor * s_1`, plus the pseudo-inverse.
pub fn truncation_sweep(
    svd: &Svd,
    f: &[f64],
    truth: &[f64],
    factors: &[f64],
) -> Result<(Vec<SweepPoint>, SweepPoint)> {
    let s1 = svd.singular_values[0];
    let point = |rule: TruncationRule| -> Result<SweepPoint> {
        let sol = truncated_svd_solve(svd, f, rule)?;
        let lambda_c = match rule {
            TruncationRule::Relative { factor } => factor * s1,
            TruncationRule::Threshold { lambda } => lambda,
            TruncationRule::Rank { rank } => svd.singular_values[rank - 1],
        };
        Ok(SweepPoint {
            lambda_c,
            kept_terms: sol.kept_terms,
            residual: truncated_residual(svd, f, sol.kept_terms)?,
            solution_norm: sol.coefficients.iter().map(|x| x * x).sum::<f64>().sqrt(),
            relative_error: relative_error(&sol.coefficients, truth),
        })
    };
    let sweep = factors
        .iter()
        .map(|&factor| point(TruncationRule::Relative { factor }))
        .collect::<Result<Vec<_>>>()?;
    Ok((sweep, point(TruncationRule::pseudo_inverse(svd))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn diag21() -> Svd {
        Svd::new(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0])).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let svd = diag21();
        let v = truncated_svd_solve(&svd, &[2.0, 1.0], TruncationRule::Threshold { lambda: 0.5 }).unwrap();
        assert!((v.coefficients[0] - 1.0).abs() < 1e-15 && (v.coefficients[1] - 1.0).abs() < 1e-15);
        let v = truncated_svd_solve(&svd, &[2.0, 1.0], TruncationRule::Threshold { lambda: 1.5 }).unwrap();
        assert!((v.coefficients[0] - 1.0).abs() < 1e-15 && v.coefficients[1].abs() < 1e-15);
        assert_eq!(v.kept_terms, 1);
    }

    #[test]
    fn empty_rule_returns_zero_with_flag() {
        let svd = diag21();
        let v = truncated_svd_solve(&svd, &[2.0, 1.0], TruncationRule::Threshold { lambda: 5.0 }).unwrap();
        assert!(v.empty && v.coefficients.iter().all(|&x| x == 0.0));
        assert!(truncated_svd_solve(&svd, &[2.0, 1.0], TruncationRule::Rank { rank: 3 }).is_err());
        assert!(truncated_svd_solve(&svd, &[2.0, 1.0], TruncationRule::Threshold { lambda: 0.0 }).is_err());
        assert!(truncated_svd_solve(&svd, &[2.0], TruncationRule::Rank { rank: 1 }).is_err());
    }

    #[test]
    fn exact_data_in_retained_span_is_recovered() {
        let a = DMatrix::from_fn(30, 12, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0 + if i == j { 10.0 } else { 0.0 });
        let svd = Svd::new(&a).unwrap();
        let r = 8;
        let mut c = vec![0.0; 12];
        for (n, cn) in c.iter_mut().enumerate().take(r) {
            *cn = 1.0 + n as f64;
        }
        let v = svd.right_synthesis(&c);
        let f = &a * nalgebra::DVector::from_vec(v.clone());
        let rec = truncated_svd_solve(&svd, f.as_slice(), TruncationRule::Rank { rank: r }).unwrap();
        for (x, y) in rec.coefficients.iter().zip(&v) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn tikhonov_limits() {
        let svd = diag21();
        let exact = [1.0, 1.0];
        for alpha in [1e-4, 1e-6] {
            let v = tikhonov_solve(&svd, &[2.0, 1.0], alpha).unwrap();
            let err = relative_error(&v.coefficients, &exact);
            assert!(err <= 2.0 * alpha, "{alpha}: {err}");
        }
        let v = tikhonov_solve(&svd, &[2.0, 1.0], 1e12).unwrap();
        assert!(v.coefficients.iter().all(|x| x.abs() < 1e-11));
        for s in [1e-3, 1.0, 1e3f64] {
            let filter = s * s / (s * s + 0.3);
            assert!(filter > 0.0 && filter < 1.0);
        }
        assert!(tikhonov_solve(&svd, &[2.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn residual_is_nonincreasing_as_threshold_drops() {
        let a = DMatrix::from_fn(25, 10, |i, j| 1.0 / (1.0 + i as f64 + 2.0 * j as f64));
        let svd = Svd::new(&a).unwrap();
        let f: Vec<f64> = (0..25).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut last = f64::INFINITY;
        for e in 0..14 {
            let rule = TruncationRule::Relative { factor: 10f64.powi(-e) };
            let sol = truncated_svd_solve(&svd, &f, rule).unwrap();
            let direct = (&a * nalgebra::DVector::from_vec(sol.coefficients.clone())
                - nalgebra::DVector::from_vec(f.clone()))
            .norm();
            let formula = truncated_residual(&svd, &f, sol.kept_terms).unwrap();
            // the direct product loses about eps |A| |v_rec| to cancellation
            let vnorm = sol.coefficients.iter().map(|x| x * x).sum::<f64>().sqrt();
            let tol = 1e-12 + 100.0 * f64::EPSILON * a.norm() * vnorm;
            assert!((direct - formula).abs() < tol, "{e}: {direct} {formula}");
            assert!(direct <= last + 1e-12);
            last = direct;
        }
    }

    #[test]
    fn correlation_of_zero_is_zero() {
        assert_eq!(correlation(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert!((correlation(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn noise_is_seeded_and_scaled() {
        let f: Vec<f64> = (0..10_000).map(|i| (i as f64).cos()).collect();
        let a = add_noise(&f, 0.01, 7, 3);
        assert_eq!(a, add_noise(&f, 0.01, 7, 3));
        assert_ne!(a, add_noise(&f, 0.01, 7, 4));
        let rel = relative_error(&a, &f);
        assert!((rel - 0.01).abs() < 0.001, "{rel}");
    }
}
