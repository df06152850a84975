//! `audible`: run the pipeline stages from a JSON configuration.
//!
//! Every flag overrides the corresponding configuration path. Exit codes:
//! 0 success, 1 configuration error, 2 stage failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use audible_core::config::RunConfig;
use audible_core::inversion::{Probe, TruncationRule};
use audible_core::io;
use audible_core::pipeline::{exit_code, run_pipeline, Stage, MATRIX_FILE, SIGMA_FILE};
use audible_core::spectral::{singular_values, SpectralReport};
use audible_core::Error;

#[derive(Parser)]
#[command(name = "audible", version, about = "Boundary observation of the half-space wave equation")]
struct Cli {
    /// Worker threads for the parallel stages.
    #[arg(long, global = true, env = "AUDIBLE_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid override, e.g. `h=1/32,dt=1/64,T=3`.
    #[arg(long)]
    grid: Option<String>,
    /// Output directory override.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Weyl constant by quadrature and Monte Carlo.
    Sigma(Common),
    /// Finite-difference trace against the Fourier oracle.
    TraceCheck(Common),
    /// Assemble the observation matrix.
    Assemble {
        #[command(flatten)]
        common: Common,
        /// Copy the matrix (and sidecar) here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Singular values and the Weyl-law fit.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        d: Option<usize>,
        /// Fit window as fractions of N, `lo:hi`.
        #[arg(long)]
        window: Option<String>,
        /// sigma.json holding the reference constant.
        #[arg(long)]
        sigma_ref: Option<PathBuf>,
    },
    /// Reconstruct wave-packet probes by truncated SVD.
    Invert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// `y=0,1 dir=0,1 k=16 w=0.12`; repeat the flag for several probes.
        #[arg(long, num_args = 1..=4, action = clap::ArgAction::Append)]
        probe: Vec<String>,
        #[arg(long)]
        noise: Option<f64>,
        /// `thresh:<factor of s1>`, `abs:<lambda>` or `rank:<r>`.
        #[arg(long)]
        rule: Option<String>,
    },
    /// Wave-packet quadratic forms against the principal symbol.
    PacketStudy(Common),
    /// Every stage followed by the combined report.
    FullReport(Common),
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_number(s: &str) -> Result<f64, Error> {
    let s = s.trim();
    let value = match s.split_once('/') {
        Some((a, b)) => a.trim().parse::<f64>().ok().zip(b.trim().parse::<f64>().ok()).map(|(a, b)| a / b),
        None => s.parse::<f64>().ok(),
    };
    value.filter(|v| v.is_finite()).ok_or_else(|| config_error(format!("cannot parse number {s:?}")))
}

fn parse_list(s: &str) -> Result<Vec<f64>, Error> {
    s.split(',').map(parse_number).collect()
}

fn apply_grid_override(cfg: &mut RunConfig, spec: &str) -> Result<(), Error> {
    for part in spec.split(',') {
        let (key, value) = part.split_once('=').ok_or_else(|| config_error(format!("--grid: bad item {part:?}")))?;
        let v = parse_number(value)?;
        match key.trim() {
            "h" => cfg.grid.h = v,
            "dt" => cfg.grid.dt = v,
            "T" => cfg.grid.horizon = v,
            other => return Err(config_error(format!("--grid: unknown key {other:?}"))),
        }
    }
    Ok(())
}

fn parse_probe(tokens: &[String]) -> Result<Probe, Error> {
    let mut probe = Probe { y: Vec::new(), dir: Vec::new(), k: f64::NAN, w: f64::NAN };
    for tok in tokens.iter().flat_map(|t| t.split_whitespace()) {
        let (key, value) = tok.split_once('=').ok_or_else(|| config_error(format!("--probe: bad item {tok:?}")))?;
        match key {
            "y" => probe.y = parse_list(value)?,
            "dir" => probe.dir = parse_list(value)?,
            "k" => probe.k = parse_number(value)?,
            "w" => probe.w = parse_number(value)?,
            other => return Err(config_error(format!("--probe: unknown key {other:?}"))),
        }
    }
    if probe.y.is_empty() || probe.dir.is_empty() || probe.k.is_nan() || probe.w.is_nan() {
        return Err(config_error("--probe needs y=, dir=, k= and w="));
    }
    Ok(probe)
}

fn parse_rule(s: &str) -> Result<TruncationRule, Error> {
    let (kind, value) = s.split_once(':').ok_or_else(|| config_error(format!("--rule: bad value {s:?}")))?;
    match kind {
        "thresh" => Ok(TruncationRule::Relative { factor: parse_number(value)? }),
        "abs" => Ok(TruncationRule::Threshold { lambda: parse_number(value)? }),
        "rank" => value
            .parse()
            .map(|rank| TruncationRule::Rank { rank })
            .map_err(|_| config_error(format!("--rule: bad rank {value:?}"))),
        other => Err(config_error(format!("--rule: unknown kind {other:?}"))),
    }
}

fn parse_window(s: &str) -> Result<(f64, f64), Error> {
    let (a, b) = s.split_once(':').ok_or_else(|| config_error(format!("--window: expected lo:hi, got {s:?}")))?;
    Ok((parse_number(a)?, parse_number(b)?))
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let path = common.config.as_ref().ok_or_else(|| config_error("--config is required"))?;
    let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let mut cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    if let Some(g) = &common.grid {
        apply_grid_override(&mut cfg, g)?;
    }
    if let Some(dir) = &common.out_dir {
        cfg.output_dir = dir.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn copy_with_sidecar(from: &Path, to: &Path) -> Result<(), Error> {
    if from == to {
        return Ok(());
    }
    std::fs::copy(from, to)?;
    std::fs::copy(io::sidecar_path(from), io::sidecar_path(to))?;
    Ok(())
}

fn run_stages(cfg: &RunConfig, stages: &[Stage]) -> i32 {
    let outcome = run_pipeline(cfg, stages);
    match &outcome {
        Ok(status) => {
            for (stage, state) in &status.stages {
                if stages.contains(stage) {
                    println!("{stage}: {}", serde_json::to_string(state).unwrap_or_default());
                }
            }
        }
        Err(e) => error!("{e}"),
    }
    exit_code(&outcome)
}

/// `spectrum --matrix` without a configuration: everything comes from the flags.
fn standalone_spectrum(
    matrix: &Path,
    d: Option<usize>,
    window: Option<&str>,
    sigma_ref: Option<&Path>,
    out_dir: Option<&Path>,
) -> Result<(), Error> {
    let (a, side) = io::read_matrix(matrix)?;
    let d = d.ok_or_else(|| config_error("--d is required without --config"))?;
    let window = window.map(parse_window).transpose()?.unwrap_or((0.05, 0.3));
    let sigma_ref = match sigma_ref {
        Some(p) => {
            let v: serde_json::Value = io::read_json(p)?;
            Some(v["sigma_ref"].as_f64().ok_or_else(|| config_error(format!("{}: no sigma_ref", p.display())))?)
        }
        None => None,
    };
    let report = SpectralReport::new(singular_values(&a)?, d, window, sigma_ref)?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| matrix.parent().unwrap_or(Path::new(".")).to_path_buf());
    std::fs::create_dir_all(&dir)?;
    let header = format!("# config_hash: {}\n", side.config_hash);
    std::fs::write(dir.join("svals.csv"), header.clone() + &report.svals_csv())?;
    std::fs::write(dir.join("counting.csv"), header + &report.counting_csv())?;
    io::write_json(
        &dir.join("spectrum.json"),
        &serde_json::json!({"config_hash": side.config_hash, "report": report}),
    )?;
    println!(
        "sigma_est {:.6e}  slope {:.4}  window [{}, {}]",
        report.sigma_est, report.slope_est, report.window.first, report.window.last
    );
    Ok(())
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Sigma(c) => Ok(run_stages(&load_config(&c)?, &[Stage::Sigma])),
        Command::TraceCheck(c) => Ok(run_stages(&load_config(&c)?, &[Stage::TraceCheck])),
        Command::PacketStudy(c) => Ok(run_stages(&load_config(&c)?, &[Stage::PacketStudy])),
        Command::FullReport(c) => Ok(run_stages(&load_config(&c)?, &Stage::ALL)),
        Command::Assemble { common, out } => {
            let cfg = load_config(&common)?;
            let code = run_stages(&cfg, &[Stage::Assemble]);
            if code == 0 {
                if let Some(out) = out {
                    copy_with_sidecar(&Path::new(&cfg.output_dir).join(MATRIX_FILE), &out)?;
                }
            }
            Ok(code)
        }
        Command::Spectrum { common, matrix, d, window, sigma_ref } => {
            if common.config.is_none() {
                let matrix = matrix.ok_or_else(|| config_error("--matrix or --config is required"))?;
                standalone_spectrum(&matrix, d, window.as_deref(), sigma_ref.as_deref(), common.out_dir.as_deref())
                    .map_err(|e| match e {
                        Error::Config(_) => e,
                        other => Error::Input(other.to_string()),
                    })?;
                return Ok(0);
            }
            let mut cfg = load_config(&common)?;
            if let Some(d) = d {
                cfg.grid.d = d;
            }
            if let Some(w) = window {
                cfg.sampling.window = parse_window(&w)?;
            }
            let dir = PathBuf::from(&cfg.output_dir);
            std::fs::create_dir_all(&dir)?;
            if let Some(m) = matrix {
                copy_with_sidecar(&m, &dir.join(MATRIX_FILE))?;
            }
            if let Some(s) = sigma_ref {
                std::fs::copy(s, dir.join(SIGMA_FILE))?;
            }
            Ok(run_stages(&cfg, &[Stage::Spectrum]))
        }
        Command::Invert { common, matrix, probe, noise, rule } => {
            let mut cfg = load_config(&common)?;
            if !probe.is_empty() {
                cfg.inversion.probes = vec![parse_probe(&probe)?];
            }
            if let Some(n) = noise {
                cfg.inversion.noise = n;
            }
            if let Some(r) = rule {
                cfg.inversion.rule = parse_rule(&r)?;
            }
            let dir = PathBuf::from(&cfg.output_dir);
            std::fs::create_dir_all(&dir)?;
            if let Some(m) = matrix {
                copy_with_sidecar(&m, &dir.join(MATRIX_FILE))?;
            }
            Ok(run_stages(&cfg, &[Stage::Invert]))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            error!("cannot size the worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            match e {
                Error::Config(_) => 1,
                _ => 2,
            }
        }
    };
    ExitCode::from(code as u8)
}
