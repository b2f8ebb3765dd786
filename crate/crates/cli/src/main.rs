//! `relaythp`: design, simulate and validate robust THP relay transceivers.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 design or
//! simulation failure, 3 failed invariants or validation checks.

mod config;
mod error;
mod output;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use relaythp::channel::{sample_estimated_channel, HopChannel};
use relaythp::design::{
    check_design, design_with_branch, theta_eigenvalues, SystemModel, WaterfillOptions,
};
use relaythp::linalg::CMatrix;
use relaythp::majorization::Branch;
use relaythp::sim::run_sweep;
use relaythp::validate::{run_validation, Fault, ValidationConfig};

use config::{BranchName, Config};
use error::CliError;
use output::{CsvRow, JsonMatrix, RunManifest};

#[derive(Parser)]
#[command(
    name = "relaythp",
    version,
    about = "Robust THP transceivers for multi-hop AF MIMO relays"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, or the SVG path for `plot`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Print only errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Design one transceiver and write its matrices and invariant checks.
    Design,
    /// Run a Monte Carlo BER sweep and write the results CSV.
    Sweep,
    /// Run the property battery and print a PASS/FAIL table.
    Validate(ValidateArgs),
    /// Render a results CSV as an SVG plot.
    Plot(PlotArgs),
}

#[derive(Args)]
struct ValidateArgs {
    /// Number of random systems for the design invariants.
    #[arg(long)]
    systems: Option<usize>,
    /// Reduced sizes for a fast smoke run.
    #[arg(long)]
    quick: bool,
    /// Test hook: scale the first hop's forwarding matrix by this factor.
    #[arg(long, hide = true)]
    inject_fault: Option<f64>,
}

#[derive(Args)]
struct PlotArgs {
    /// Results CSV written by `sweep`.
    csv: PathBuf,
    /// BER drawn for points without errors.
    #[arg(long, default_value_t = plot::DEFAULT_FLOOR)]
    floor: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build_global()
    {
        eprintln!("error: cannot start worker threads: {e}");
        return ExitCode::from(1);
    }
    let result = match &cli.command {
        Command::Design => cmd_design(&cli.global),
        Command::Sweep => cmd_sweep(&cli.global),
        Command::Validate(args) => cmd_validate(&cli.global, args),
        Command::Plot(args) => cmd_plot(&cli.global, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn say(global: &GlobalArgs, message: impl AsRef<str>) {
    if !global.quiet {
        println!("{}", message.as_ref());
    }
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("missing --{flag}")))
}

fn load(global: &GlobalArgs) -> Result<(Config, PathBuf, u64), CliError> {
    let path = require(&global.config, "config")?;
    let config = Config::load(path)?;
    let out = require(&global.out, "out")?.to_path_buf();
    let seed = global.seed.unwrap_or(config.seed);
    Ok((config, out, seed))
}

#[derive(Serialize, Deserialize)]
struct ChannelFile {
    h_bar: Vec<JsonMatrix>,
}

fn design_model(config: &Config, config_path: &Path, seed: u64) -> Result<SystemModel, CliError> {
    let templates = config.hop_templates(None)?;
    let supplied: Option<Vec<CMatrix>> =
        match config.design.as_ref().and_then(|d| d.channels.as_ref()) {
            Some(file) => {
                let path = config_path.parent().unwrap_or(Path::new(".")).join(file);
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    CliError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                let parsed: ChannelFile = serde_json::from_str(&text).map_err(CliError::config)?;
                if parsed.h_bar.len() != templates.len() {
                    return Err(CliError::Config(format!(
                        "{} channel matrices for {} hops",
                        parsed.h_bar.len(),
                        templates.len()
                    )));
                }
                Some(
                    parsed
                        .h_bar
                        .iter()
                        .map(JsonMatrix::to_matrix)
                        .collect::<Result<_, _>>()?,
                )
            }
            None => None,
        };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hops = templates
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let h_bar = match &supplied {
                Some(h) => {
                    if h[k].shape() != (t.n_r, t.n_t) {
                        return Err(CliError::Config(format!(
                            "hop {} channel is {}x{}, the config says {}x{}",
                            k + 1,
                            h[k].nrows(),
                            h[k].ncols(),
                            t.n_r,
                            t.n_t
                        )));
                    }
                    h[k].clone()
                }
                None => sample_estimated_channel(&t.correlation, t.n_r, t.n_t, &mut rng),
            };
            let noise = t.power / 10f64.powf(t.snr_db / 10.0);
            HopChannel::from_spec(&t.correlation, h_bar, noise, t.power).map_err(CliError::config)
        })
        .collect::<Result<Vec<_>, _>>()?;
    SystemModel::new(hops, config.system.streams, config.system.modulation)
        .map_err(CliError::config)
}

#[derive(Serialize)]
struct DesignMatrices {
    h_bar: Vec<JsonMatrix>,
    p: Vec<JsonMatrix>,
    f: Vec<JsonMatrix>,
    q: Vec<JsonMatrix>,
    theta: JsonMatrix,
    l: JsonMatrix,
    b: JsonMatrix,
    c: JsonMatrix,
    g: JsonMatrix,
}

#[derive(Serialize)]
struct DesignSummary {
    branch: Branch,
    objective: relaythp::majorization::ObjectiveSpec,
    predicted_mse: Vec<f64>,
    gamma: Vec<f64>,
    diag_l: Vec<f64>,
    theta_eigenvalues: Vec<f64>,
    effective_gains: Vec<Vec<f64>>,
    stream_amplitudes: Vec<Vec<f64>>,
    waterfill_sweeps: usize,
    waterfill_converged: bool,
    waterfill_objective: f64,
}

fn cmd_design(global: &GlobalArgs) -> Result<(), CliError> {
    let (config, out, seed) = load(global)?;
    let mut manifest = RunManifest::new("design", Some(config.hash()), seed);
    let model = design_model(&config, require(&global.config, "config")?, seed)?;
    let objective = config.objective()?;
    let branch = match config.design.as_ref().and_then(|d| d.branch) {
        Some(BranchName::Convex) => Branch::Convex,
        Some(BranchName::Concave) => Branch::Concave,
        None => objective.default_branch(),
    };
    let result = design_with_branch(&model, &objective, branch, WaterfillOptions::default())?;
    let checks = check_design(&model, &result);

    output::ensure_dir(&out)?;
    let m = |x: &CMatrix| JsonMatrix::from(x);
    let matrices = DesignMatrices {
        h_bar: model.hops().iter().map(|h| m(h.h_bar())).collect(),
        p: result.p_matrices.iter().map(m).collect(),
        f: result.f_matrices.iter().map(m).collect(),
        q: result.q_rotations.iter().map(m).collect(),
        theta: m(&result.theta),
        l: m(&result.l_matrix),
        b: m(result.feedback.b()),
        c: m(result.feedback.c()),
        g: m(&result.g_matrix),
    };
    let summary = DesignSummary {
        branch,
        objective,
        predicted_mse: result.predicted_mse.clone(),
        gamma: result.gamma.clone(),
        diag_l: (0..model.n_streams())
            .map(|i| result.l_matrix[(i, i)].re)
            .collect(),
        theta_eigenvalues: theta_eigenvalues(&result),
        effective_gains: result.h.clone(),
        stream_amplitudes: result.lambda_f.clone(),
        waterfill_sweeps: result.waterfill.sweeps,
        waterfill_converged: result.waterfill.converged,
        waterfill_objective: result.waterfill.objective,
    };
    manifest.write_json(&out, "matrices.json", &matrices)?;
    manifest.write_json(&out, "summary.json", &summary)?;
    manifest.write_json(&out, "invariants.json", &checks)?;
    if !result.waterfill.converged {
        manifest
            .notes
            .push("power allocation stopped at the sweep limit".into());
    }
    manifest.finish(&out)?;

    for c in &checks {
        say(
            global,
            format!(
                "{} {:<36} {:>11.3e} (tolerance {:.1e})",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.tolerance
            ),
        );
    }
    say(
        global,
        format!("predicted per-stream MSE: {:?}", result.predicted_mse),
    );
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| c.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "invariants failed: {}",
            failed.join(", ")
        )))
    }
}

fn cmd_sweep(global: &GlobalArgs) -> Result<(), CliError> {
    let (config, out, seed) = load(global)?;
    let mut manifest = RunManifest::new("sweep", Some(config.hash()), seed);
    let runs = config.sweep_configs(seed)?;
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (params, sweep) in &runs {
        say(
            global,
            format!(
                "sweep sigma_e^2={} rho_t={} rho_r={}: {} points x {} trials",
                params.sigma_e_sq,
                params.rho_t,
                params.rho_r,
                sweep.snr_grid.len() * sweep.schemes.len(),
                sweep.n_trials
            ),
        );
        let result = run_sweep(sweep)?;
        rows.extend(
            result
                .points
                .iter()
                .map(|p| CsvRow::new(p, *params, sweep.n_symbols)),
        );
        results.push(result);
    }
    output::sort_rows(&mut rows);
    output::ensure_dir(&out)?;
    output::write_csv(&out.join("results.csv"), &rows)?;
    manifest.record("results.csv");
    manifest.write_json(&out, "sweep.json", &results)?;
    manifest
        .notes
        .push("estimated channels and estimation errors are redrawn every trial".into());
    manifest
        .notes
        .push("all schemes of a trial share channels, errors, data and noise".into());
    manifest.finish(&out)?;
    for r in &rows {
        say(
            global,
            format!(
                "{:<14} {:>6} dB  BER {:.3e} ± {:.1e}",
                r.scheme, r.hop_snr_db, r.ber, r.ber_stderr
            ),
        );
    }
    Ok(())
}

fn cmd_validate(global: &GlobalArgs, args: &ValidateArgs) -> Result<(), CliError> {
    let mut config = ValidationConfig::default();
    if args.quick {
        config = ValidationConfig {
            systems: 10,
            rotation_draws: 10,
            theta_draws: 20,
            waterfill_instances: 4,
            lmmse_perturbations: 20,
            mse_designs: 1,
            mse_error_draws: 50,
            mse_symbols: 100,
            classifier_trials: 300,
            ..config
        };
    }
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(n) = args.systems {
        config.systems = n;
    }
    if let Some(factor) = args.inject_fault {
        config.fault = Some(Fault::ScaleForwarding { hop: 0, factor });
    }
    let report = run_validation(&config)?;
    say(global, report.table());
    if let Some(out) = &global.out {
        output::ensure_dir(out)?;
        let mut manifest = RunManifest::new("validate", None, config.seed);
        manifest.write_json(out, "validation.json", &report)?;
        manifest.finish(out)?;
    }
    if report.all_pass() {
        say(global, "all checks passed");
        Ok(())
    } else {
        let names: Vec<String> = report
            .failures()
            .map(|r| format!("{}/{}", r.suite, r.check.name))
            .collect();
        Err(CliError::Validation(format!(
            "{} checks failed: {}",
            names.len(),
            names.join(", ")
        )))
    }
}

fn cmd_plot(global: &GlobalArgs, args: &PlotArgs) -> Result<(), CliError> {
    let out = require(&global.out, "out")?;
    if !(args.floor > 0.0 && args.floor < 1.0) {
        return Err(CliError::Config(format!(
            "the floor must lie in (0, 1), got {}",
            args.floor
        )));
    }
    let rows = output::read_csv(&args.csv)?;
    let curves = plot::curves(&rows, args.floor);
    let svg = plot::render_svg(&curves, args.floor);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        output::ensure_dir(parent)?;
    }
    std::fs::write(out, svg).map_err(CliError::io(format!("writing {}", out.display())))?;
    say(
        global,
        format!("{} curves written to {}", curves.len(), out.display()),
    );
    Ok(())
}
