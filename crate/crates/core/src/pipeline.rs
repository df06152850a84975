//! Stage orchestration: sigma -> trace-check -> assemble -> spectrum -> invert
//! -> packet-study -> full-report. Each stage reads its inputs from the
//! artifacts of upstream stages in the output directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{Resolved, RunConfig};
use crate::error::{Error, Result};
use crate::geometry::{sigma_montecarlo, sigma_quadrature, PhasePoint, SigmaEstimate};
use crate::grid::{AxisBox, Lattice, ScalarField};
use crate::inversion::{
    add_noise, audibility_experiment, truncated_svd_solve, truncation_sweep, Experiment, ReconstructionReport,
    SweepPoint,
};
use crate::io;
use crate::linalg::Svd;
use crate::observation::assemble;
use crate::spectral::{singular_values, SpectralReport};
use crate::wavefield::{
    halfwave_oracle_trace, solve_even_extension, solve_halfspace_neumann, symbol_check, GridSpec, SymbolCheck,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Sigma,
    TraceCheck,
    Assemble,
    Spectrum,
    Invert,
    PacketStudy,
    FullReport,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Sigma,
        Stage::TraceCheck,
        Stage::Assemble,
        Stage::Spectrum,
        Stage::Invert,
        Stage::PacketStudy,
        Stage::FullReport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Sigma => "sigma",
            Stage::TraceCheck => "trace-check",
            Stage::Assemble => "assemble",
            Stage::Spectrum => "spectrum",
            Stage::Invert => "invert",
            Stage::PacketStudy => "packet-study",
            Stage::FullReport => "full-report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

pub const MATRIX_FILE: &str = "A.bin";
pub const SIGMA_FILE: &str = "sigma.json";
pub const STATUS_FILE: &str = "status.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaArtifact {
    pub config_hash: String,
    /// Reference value: the quadrature at the configured resolution.
    pub sigma_ref: f64,
    pub quadrature: SigmaEstimate,
    pub montecarlo: SigmaEstimate,
    /// `|quadrature - montecarlo| / stderr`.
    pub discrepancy_in_stderr: f64,
    /// Quadrature over three resolution doublings ending at the configured one.
    pub convergence: Vec<SigmaEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceCheckArtifact {
    pub config_hash: String,
    pub reference: String,
    pub gaussian_center: Vec<f64>,
    pub gaussian_width: f64,
    pub relative_l2: f64,
    pub max_abs_difference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumArtifact {
    pub config_hash: String,
    pub report: SpectralReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvertArtifact {
    pub config_hash: String,
    pub reports: Vec<ReconstructionReport>,
    /// Truncation sweep on the first probe at the configured noise (L-curve data).
    pub sweep: Vec<SweepPoint>,
    pub pseudo_inverse: Option<SweepPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketStudyArtifact {
    pub config_hash: String,
    pub checks: Vec<SymbolCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "message")]
pub enum StageState {
    Ok,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineStatus {
    pub config_hash: String,
    pub stages: BTreeMap<Stage, StageState>,
}

impl PipelineStatus {
    pub fn succeeded(&self) -> bool {
        self.stages.values().all(|s| *s == StageState::Ok)
    }
}

/// Process exit code: 0 ok, 1 configuration error, 2 stage failure.
pub fn exit_code(outcome: &Result<PipelineStatus>) -> i32 {
    match outcome {
        Ok(s) if s.succeeded() => 0,
        Ok(_) => 2,
        Err(Error::Config(_)) => 1,
        Err(_) => 2,
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    res: Resolved,
    hash: String,
    dir: PathBuf,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn check_hash(&self, found: &str, what: &Path) -> Result<()> {
        if found != self.hash {
            return Err(Error::Input(format!(
                "{} was produced by a different configuration (hash {found})",
                what.display()
            )));
        }
        Ok(())
    }
}

/// Run the requested stages in dependency order. Configuration errors abort
/// before anything runs; a failing stage is recorded and later stages still run.
pub fn run_pipeline(cfg: &RunConfig, stages: &[Stage]) -> Result<PipelineStatus> {
    let res = cfg.resolve()?;
    let dir = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&dir)?;
    let ctx = Ctx { cfg, res, hash: cfg.hash(), dir };
    io::write_json(&ctx.path("config.json"), cfg)?;

    let mut todo: Vec<Stage> = stages.to_vec();
    todo.sort();
    todo.dedup();
    let status_path = ctx.path(STATUS_FILE);
    let mut status = match io::read_json::<PipelineStatus>(&status_path) {
        Ok(s) if s.config_hash == ctx.hash => s,
        _ => PipelineStatus { config_hash: ctx.hash.clone(), stages: BTreeMap::new() },
    };
    for stage in todo {
        let t = std::time::Instant::now();
        let outcome = match stage {
            Stage::Sigma => stage_sigma(&ctx),
            Stage::TraceCheck => stage_trace_check(&ctx),
            Stage::Assemble => stage_assemble(&ctx),
            Stage::Spectrum => stage_spectrum(&ctx),
            Stage::Invert => stage_invert(&ctx),
            Stage::PacketStudy => stage_packet_study(&ctx),
            Stage::FullReport => stage_full_report(&ctx),
        };
        let state = match outcome {
            Ok(()) => {
                info!("stage {stage} finished in {:.2?}", t.elapsed());
                StageState::Ok
            }
            Err(e) => {
                log::error!("stage {stage} failed: {e}");
                StageState::Failed(e.to_string())
            }
        };
        status.stages.insert(stage, state);
        io::write_json(&status_path, &status)?;
    }
    Ok(status)
}

fn stage_sigma(ctx: &Ctx) -> Result<()> {
    let s = &ctx.cfg.sampling;
    let (omega, sigma) = (&ctx.res.omega, &ctx.res.sigma);
    let quadrature = sigma_quadrature(omega, sigma, s.sigma_resolution)?;
    let montecarlo = sigma_montecarlo(omega, sigma, s.sigma_mc_samples, ctx.cfg.seeds.sigma_mc)?;
    let convergence = (0..4)
        .rev()
        .filter_map(|k| {
            let r = s.sigma_resolution >> k;
            (r >= 2).then(|| sigma_quadrature(omega, sigma, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let artifact = SigmaArtifact {
        config_hash: ctx.hash.clone(),
        sigma_ref: quadrature.value,
        discrepancy_in_stderr: (quadrature.value - montecarlo.value).abs() / montecarlo.stderr,
        quadrature,
        montecarlo,
        convergence,
    };
    io::write_json(&ctx.path(SIGMA_FILE), &artifact)
}

fn stage_trace_check(ctx: &Ctx) -> Result<()> {
    let omega = &ctx.res.omega.bounds;
    let grid = &ctx.res.grid;
    let d = omega.dim();
    let center: Vec<f64> = (0..d).map(|k| 0.5 * (omega.min[k] + omega.max[k])).collect();
    let width = (0..d).map(|k| omega.extent(k)).fold(f64::INFINITY, f64::min) / 8.0;
    let v = ScalarField::from_fn(ctx.res.scheme.omega.clone(), |x| {
        let r2: f64 = x.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum();
        (-r2 / (2.0 * width * width)).exp()
    });
    let fd = solve_halfspace_neumann(&v, &ctx.cfg.potential, grid)?;
    let (reference, other) = if ctx.cfg.potential.is_zero() {
        ("fourier_oracle", halfwave_oracle_trace(&v, grid)?)
    } else {
        ("even_extension", solve_even_extension(&v, &ctx.cfg.potential, grid)?)
    };
    let max_abs = fd.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let meta = serde_json::json!({
        "xprime": fd.xprime, "dt": fd.dt, "layout": "time-major: [step][x' node]",
    });
    io::write_array(
        &ctx.path("trace.bin"),
        &fd.values,
        &io::Sidecar::new("boundary_trace", vec![fd.n_times(), fd.n_space()], &ctx.hash, meta),
    )?;
    io::write_json(
        &ctx.path("trace_check.json"),
        &TraceCheckArtifact {
            config_hash: ctx.hash.clone(),
            reference: reference.into(),
            gaussian_center: center,
            gaussian_width: width,
            relative_l2: fd.relative_l2(&other),
            max_abs_difference: max_abs,
        },
    )
}

fn stage_assemble(ctx: &Ctx) -> Result<()> {
    let a = assemble(ctx.cfg.sampling.solver, &ctx.cfg.potential, &ctx.res.grid, &ctx.res.scheme)?;
    let meta = serde_json::json!({
        "solver": ctx.cfg.sampling.solver,
        "grid": ctx.res.grid,
        "potential": ctx.cfg.potential,
        "scheme_hash": ctx.cfg.scheme_hash(),
    });
    io::write_matrix(&ctx.path(MATRIX_FILE), &a, &ctx.hash, meta)
}

fn load_matrix(ctx: &Ctx) -> Result<crate::observation::ObservationMatrix> {
    let path = ctx.path(MATRIX_FILE);
    let (a, side) = io::read_matrix(&path)?;
    if side.meta["scheme_hash"].as_str() != Some(ctx.cfg.scheme_hash().as_str()) {
        ctx.check_hash(&side.config_hash, &path)?;
    }
    Ok(a)
}

fn stage_spectrum(ctx: &Ctx) -> Result<()> {
    let a = load_matrix(ctx)?;
    let sigma_path = ctx.path(SIGMA_FILE);
    let sigma_ref = match io::read_json::<SigmaArtifact>(&sigma_path) {
        Ok(s) => {
            ctx.check_hash(&s.config_hash, &sigma_path)?;
            Some(s.sigma_ref)
        }
        Err(_) => None,
    };
    let svals = singular_values(&a)?;
    let report = SpectralReport::new(svals, ctx.cfg.grid.d, ctx.cfg.sampling.window, sigma_ref)?;
    let header = format!("# config_hash: {}\n", ctx.hash);
    std::fs::write(ctx.path("svals.csv"), header.clone() + &report.svals_csv())?;
    std::fs::write(ctx.path("counting.csv"), header + &report.counting_csv())?;
    io::write_json(&ctx.path("spectrum.json"), &SpectrumArtifact { config_hash: ctx.hash.clone(), report })
}

fn stage_invert(ctx: &Ctx) -> Result<()> {
    let a = load_matrix(ctx)?;
    let svd = Svd::new(&a.matrix)?;
    let inv = &ctx.cfg.inversion;
    let exp = Experiment {
        svd: &svd,
        scheme: &a.scheme,
        grid: &ctx.res.grid,
        q: &ctx.cfg.potential,
        omega: &ctx.res.omega,
        sigma: &ctx.res.sigma,
    };
    let reports = audibility_experiment(&exp, &inv.probes, inv.noise, inv.rule, ctx.cfg.seeds.noise)?;
    let mut sweep = Vec::new();
    let mut pseudo_inverse = None;
    for (i, probe) in inv.probes.iter().enumerate() {
        let Ok(fwd) = exp.forward(probe) else { continue };
        let f = add_noise(&fwd.data, inv.noise, ctx.cfg.seeds.noise, i as u64);
        let rec = truncated_svd_solve(&svd, &f, inv.rule)?;
        let field = a.scheme.field_from_coefficients(&rec.coefficients)?;
        io::write_array(
            &ctx.path(&format!("recon_{i}.bin")),
            &field.values,
            &io::Sidecar::new(
                "reconstruction",
                field.lattice.shape.clone(),
                &ctx.hash,
                serde_json::json!({"lattice": field.lattice, "probe": probe}),
            ),
        )?;
        if sweep.is_empty() {
            let (s, p) = truncation_sweep(&svd, &f, &fwd.truth, &inv.sweep_factors)?;
            sweep = s;
            pseudo_inverse = Some(p);
        }
    }
    io::write_json(
        &ctx.path("invert.json"),
        &InvertArtifact { config_hash: ctx.hash.clone(), reports, sweep, pseudo_inverse },
    )
}

/// Lattice holding `+-6 w` around the packet centre, and a grid over it and Sigma.
pub fn packet_setting(center: &[f64], width: f64, h: f64, dt: f64, horizon: f64, sigma_space: &AxisBox) -> Result<(Lattice, GridSpec)> {
    let d = center.len();
    let r = 6.0 * width;
    let bx = AxisBox::new(center.iter().map(|c| c - r).collect(), center.iter().map(|c| c + r).collect())?;
    let lattice = Lattice::half_open_cells(h, &bx)?;
    let mut lo = bx.min.clone();
    let mut hi = bx.max.clone();
    for k in 0..d - 1 {
        lo[k] = lo[k].min(sigma_space.min[k]);
        hi[k] = hi[k].max(sigma_space.max[k]);
    }
    lo[d - 1] = 0.0;
    let grid = GridSpec::covering(h, dt, horizon, &AxisBox { min: lo, max: hi })?;
    Ok((lattice, grid))
}

fn stage_packet_study(ctx: &Ctx) -> Result<()> {
    let Some(ps) = &ctx.cfg.packet_study else {
        return Err(Error::Config("packet_study is not configured".into()));
    };
    let g = &ctx.cfg.grid;
    let p = PhasePoint::new(ps.y.clone(), ps.dir.clone())?;
    if ps.y[g.d - 1] - 6.0 * ps.width <= 0.0 {
        return Err(Error::Config("packet_study: packet must stay 6 widths above the boundary".into()));
    }
    let (lattice, grid) = packet_setting(&ps.y, ps.width, g.h, g.dt, g.horizon, &ctx.res.sigma.space)?;
    let checks = ps
        .frequencies
        .iter()
        .map(|&k| symbol_check(&p, ps.width, k, &ctx.res.chi, &lattice, &grid))
        .collect::<Result<Vec<_>>>()?;
    io::write_json(&ctx.path("packet_study.json"), &PacketStudyArtifact { config_hash: ctx.hash.clone(), checks })
}

#[derive(Serialize)]
struct FullReport {
    config_hash: String,
    sigma: Option<serde_json::Value>,
    trace_check: Option<serde_json::Value>,
    spectrum: Option<serde_json::Value>,
    invert: Option<serde_json::Value>,
    packet_study: Option<serde_json::Value>,
}

fn stage_full_report(ctx: &Ctx) -> Result<()> {
    let read = |name: &str| -> Result<Option<serde_json::Value>> {
        let path = ctx.path(name);
        let Ok(v) = io::read_json::<serde_json::Value>(&path) else { return Ok(None) };
        ctx.check_hash(v["config_hash"].as_str().unwrap_or_default(), &path)?;
        Ok(Some(v))
    };
    let mut spectrum = read("spectrum.json")?;
    if let Some(s) = spectrum.as_mut() {
        // keep the report small: the full lists live in the CSV files
        if let Some(r) = s["report"].as_object_mut() {
            r.remove("svals");
            r.remove("n_of_lambda");
        }
    }
    let report = FullReport {
        config_hash: ctx.hash.clone(),
        sigma: read(SIGMA_FILE)?,
        trace_check: read("trace_check.json")?,
        spectrum,
        invert: read("invert.json")?,
        packet_study: read("packet_study.json")?,
    };
    io::write_json(&ctx.path("report.json"), &report)
}
