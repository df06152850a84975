//! Run configuration: one JSON document, validated against every module
//! precondition when loaded.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Mollifier, PatchSigma, RegionOmega};
use crate::grid::AxisBox;
use crate::inversion::{Probe, TruncationRule};
use crate::observation::{SamplingScheme, SolverChoice};
use crate::wavefield::{GridSpec, PotentialQ};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub omega: AxisBox,
    pub sigma_space: AxisBox,
    pub t0: f64,
    pub t1: f64,
    /// Mollifier width; the default width rule applies when absent.
    #[serde(default)]
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub h: f64,
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub d: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub solver: SolverChoice,
    pub sigma_resolution: usize,
    pub sigma_mc_samples: u64,
    /// Fractions of `N` bounding the Weyl fit window.
    pub window: (f64, f64),
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            solver: SolverChoice::Neumann,
            sigma_resolution: 128,
            sigma_mc_samples: 10_000_000,
            window: (0.05, 0.3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionConfig {
    pub probes: Vec<Probe>,
    pub noise: f64,
    pub rule: TruncationRule,
    /// Thresholds (relative to `s_1`) of the truncation sweep.
    pub sweep_factors: Vec<f64>,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            probes: Vec::new(),
            noise: 0.0,
            rule: TruncationRule::Relative { factor: 1e-3 },
            sweep_factors: (1..=8).map(|e| 10f64.powi(-e)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketStudyConfig {
    pub y: Vec<f64>,
    pub dir: Vec<f64>,
    pub width: f64,
    pub frequencies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub sigma_mc: u64,
    pub noise: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { sigma_mc: 2024, noise: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub grid: GridConfig,
    #[serde(default = "zero_potential")]
    pub potential: PotentialQ,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub packet_study: Option<PacketStudyConfig>,
    #[serde(default)]
    pub seeds: Seeds,
    pub output_dir: String,
}

fn zero_potential() -> PotentialQ {
    PotentialQ::Zero
}

fn at<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Config(format!("{path}: {e}")))
}

fn bad(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {msg}"))
}

/// Validated objects derived from a configuration.
pub struct Resolved {
    pub omega: RegionOmega,
    pub sigma: PatchSigma,
    pub chi: Mollifier,
    pub grid: GridSpec,
    pub scheme: SamplingScheme,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Hash of the parts that determine the observation matrix alone, so a
    /// stored matrix can be reused when only the downstream settings change.
    pub fn scheme_hash(&self) -> String {
        let key = serde_json::json!({
            "geometry": self.geometry,
            "grid": self.grid,
            "potential": self.potential,
            "solver": self.sampling.solver,
        });
        hex::encode(Sha256::digest(key.to_string().as_bytes()))
    }

    /// Check every precondition and build the derived objects.
    pub fn resolve(&self) -> Result<Resolved> {
        let g = &self.geometry;
        let omega_box = at("geometry.omega", AxisBox::new(g.omega.min.clone(), g.omega.max.clone()))?;
        let space = at("geometry.sigma_space", AxisBox::new(g.sigma_space.min.clone(), g.sigma_space.max.clone()))?;
        let omega = at("geometry.omega", RegionOmega::new(omega_box))?;
        let sigma = at("geometry.t0/t1", PatchSigma::new(space, g.t0, g.t1))?;
        let chi = match g.delta {
            Some(delta) => at("geometry.delta", Mollifier::new(sigma.clone(), delta))?,
            None => at("geometry.delta", Mollifier::with_default_width(sigma.clone()))?,
        };

        let gr = &self.grid;
        if gr.d < 2 {
            return Err(bad("grid.d", "dimension must be >= 2"));
        }
        if omega.dim() != gr.d {
            return Err(bad("grid.d", format!("Omega has dimension {} but d = {}", omega.dim(), gr.d)));
        }
        if sigma.space.dim() + 1 != gr.d {
            return Err(bad("geometry.sigma_space", format!("needs {} axes", gr.d - 1)));
        }
        if !(gr.h > 0.0 && gr.h.is_finite()) {
            return Err(bad("grid.h", "must be positive"));
        }
        if !(gr.horizon >= g.t1) {
            return Err(bad("grid.T", format!("horizon {} ends before the Sigma window t1 = {}", gr.horizon, g.t1)));
        }
        at("potential", self.potential.validate())?;
        if let PotentialQ::Bump { center, .. } = &self.potential {
            if center.len() != gr.d {
                return Err(bad("potential.center", "dimension does not match the grid"));
            }
        }

        // cover Omega and the boundary part of Sigma
        let mut lo = omega.bounds.min.clone();
        let mut hi = omega.bounds.max.clone();
        for k in 0..gr.d - 1 {
            lo[k] = lo[k].min(sigma.space.min[k]);
            hi[k] = hi[k].max(sigma.space.max[k]);
        }
        lo[gr.d - 1] = 0.0;
        let cover = AxisBox { min: lo, max: hi };
        let grid = at("grid", GridSpec::covering(gr.h, gr.dt, gr.horizon, &cover))?;
        let scheme = at("sampling", SamplingScheme::new(&omega, &sigma, gr.h, gr.dt))?;
        at("sampling", scheme.check_grid(&grid))?;

        let s = &self.sampling;
        if s.solver == SolverChoice::ShiftInvariant && !self.potential.is_zero() {
            return Err(bad("sampling.solver", "shift_invariant assembly needs q = 0"));
        }
        if s.sigma_resolution < 2 {
            return Err(bad("sampling.sigma_resolution", "must be >= 2"));
        }
        if s.sigma_mc_samples < 2 {
            return Err(bad("sampling.sigma_mc_samples", "must be >= 2"));
        }
        let (wl, wh) = s.window;
        if !(0.0 <= wl && wl < wh && wh <= 1.0) {
            return Err(bad("sampling.window", "fractions must satisfy 0 <= lo < hi <= 1"));
        }

        let inv = &self.inversion;
        for (i, p) in inv.probes.iter().enumerate() {
            let path = format!("inversion.probes[{i}]");
            at(&path, p.phase_point())?;
            if p.y.len() != gr.d {
                return Err(bad(&path, "dimension does not match the grid"));
            }
            if !(p.w > 0.0 && p.k >= 0.0) {
                return Err(bad(&path, "needs w > 0 and k >= 0"));
            }
        }
        if !(inv.noise >= 0.0 && inv.noise.is_finite()) {
            return Err(bad("inversion.noise", "must be a finite nonnegative level"));
        }
        match inv.rule {
            TruncationRule::Threshold { lambda } if !(lambda > 0.0) => {
                return Err(bad("inversion.rule", "threshold must be positive"))
            }
            TruncationRule::Relative { factor } if !(factor > 0.0) => {
                return Err(bad("inversion.rule", "relative threshold must be positive"))
            }
            TruncationRule::Rank { rank } if rank == 0 || rank > scheme.n_cols().min(scheme.n_rows()) => {
                return Err(bad("inversion.rule", "rank must lie in [1, min(M, N)]"))
            }
            _ => {}
        }
        if inv.sweep_factors.iter().any(|&f| !(f > 0.0)) {
            return Err(bad("inversion.sweep_factors", "factors must be positive"));
        }
        if let Some(ps) = &self.packet_study {
            at("packet_study", crate::geometry::PhasePoint::new(ps.y.clone(), ps.dir.clone()))?;
            if ps.y.len() != gr.d || !(ps.width > 0.0) || ps.frequencies.iter().any(|&k| !(k > 0.0)) {
                return Err(bad("packet_study", "needs matching dimension, width > 0 and positive frequencies"));
            }
        }
        if self.output_dir.is_empty() {
            return Err(bad("output_dir", "must not be empty"));
        }
        Ok(Resolved { omega, sigma, chi, grid, scheme })
    }

    /// Reference configuration on the given spacing (`dt = h/2`, `T = t1`).
    pub fn reference(h: f64, output_dir: &str) -> Self {
        RunConfig {
            geometry: GeometryConfig {
                omega: AxisBox { min: vec![-0.5, 0.75], max: vec![0.5, 1.25] },
                sigma_space: AxisBox { min: vec![-2.0], max: vec![2.0] },
                t0: 0.25,
                t1: 3.0,
                delta: None,
            },
            grid: GridConfig { h, dt: h / 2.0, horizon: 3.0, d: 2 },
            potential: PotentialQ::Zero,
            sampling: SamplingConfig::default(),
            inversion: InversionConfig {
                probes: vec![
                    Probe { y: vec![0.0, 1.0], dir: vec![0.0, 1.0], k: 16.0, w: 0.12 },
                    Probe { y: vec![0.0, 1.0], dir: vec![1.0, 0.05], k: 16.0, w: 0.12 },
                ],
                ..InversionConfig::default()
            },
            packet_study: Some(PacketStudyConfig {
                y: vec![0.0, 1.0],
                dir: vec![0.0, 1.0],
                width: 0.1,
                frequencies: vec![8.0, 16.0, 32.0],
            }),
            seeds: Seeds::default(),
            output_dir: output_dir.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_resolves() {
        let cfg = RunConfig::reference(1.0 / 32.0, "out");
        let r = cfg.resolve().unwrap();
        assert_eq!(r.scheme.n_cols(), 512);
        assert!((r.chi.delta - 0.125).abs() < 1e-15);
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn violations_name_the_field() {
        let mut cfg = RunConfig::reference(1.0 / 16.0, "out");
        cfg.grid.dt = cfg.grid.h;
        let e = cfg.resolve().err().unwrap().to_string();
        assert!(e.contains("grid") && e.contains("CFL"), "{e}");

        let mut cfg = RunConfig::reference(1.0 / 16.0, "out");
        cfg.grid.horizon = 2.0;
        assert!(cfg.resolve().err().unwrap().to_string().contains("grid.T"));

        let mut cfg = RunConfig::reference(1.0 / 16.0, "out");
        cfg.geometry.delta = Some(0.3);
        assert!(cfg.resolve().err().unwrap().to_string().contains("geometry.delta"));

        let mut cfg = RunConfig::reference(1.0 / 16.0, "out");
        cfg.geometry.omega.min[1] = -0.1;
        assert!(cfg.resolve().err().unwrap().to_string().contains("geometry.omega"));

        let mut cfg = RunConfig::reference(1.0 / 16.0, "out");
        cfg.sampling.solver = SolverChoice::ShiftInvariant;
        cfg.potential = PotentialQ::bump(vec![0.0, 1.0], 0.2, 1.0).unwrap();
        assert!(cfg.resolve().err().unwrap().to_string().contains("sampling.solver"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::reference(0.0625, "o").to_json()).unwrap();
        v["grid"]["spacing"] = serde_json::json!(0.1);
        assert!(RunConfig::from_json(&v.to_string()).is_err());
    }
}
