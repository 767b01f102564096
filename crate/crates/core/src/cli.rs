//! Command-line front end.
//!
//! Exit status: 0 on success, 1 for unreadable input (bad JSON syntax,
//! malformed CSV, bad arguments), 2 for invalid configuration or data, 3 for
//! failures while computing or writing results.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::inference::{self, FitMethod};
use crate::io::{self, RunConfig};
use crate::simulate;
use crate::study;

#[derive(Debug, Parser)]
#[command(name = "stgeyer", version, about = "Simulate and fit multi-scale space-time Geyer point processes")]
pub struct Cli {
    /// Worker threads for parallel work (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output location.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace existing outputs.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the birth-death sampler; writes pattern.csv and trace.csv into --out.
    Simulate(Common),
    /// Fit one model to a pattern; writes the fit as JSON to --out.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Pattern CSV.
        #[arg(long)]
        pattern: PathBuf,
    },
    /// Profile pseudo-likelihood over candidate irregular parameters; writes
    /// profile.csv and fit.json into --out.
    Profile {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pattern: PathBuf,
    },
    /// Replicated simulation study; writes report.json, estimates.csv,
    /// rmse.csv, boxplot.csv and boxplot.svg into --out.
    Study(Common),
    /// Monte Carlo GNZ residual check with h = 1; writes JSON to --out.
    GnzCheck(Common),
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse(_) => 1,
        Error::Validation(_) | Error::InvalidParameter(_) | Error::OutsideWindow { .. } => 2,
        _ => 3,
    }
}

fn runtime(e: Error) -> Error {
    match e {
        Error::Io(_) | Error::Estimation(_) | Error::Contract(_) | Error::RankDeficient { .. } => e,
        other => Error::Estimation(other.to_string()),
    }
}

fn prepare_dir(dir: &Path, names: &[&str], overwrite: bool) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
    io::check_outputs(&paths, overwrite)?;
    fs::create_dir_all(dir)?;
    Ok(paths)
}

fn prepare_file(path: &Path, overwrite: bool) -> Result<()> {
    io::check_outputs(&[path.to_path_buf()], overwrite)?;
    if let Some(d) = path.parent() {
        if !d.as_os_str().is_empty() {
            fs::create_dir_all(d)?;
        }
    }
    Ok(())
}

fn cmd_simulate(c: &Common) -> Result<()> {
    let cfg = RunConfig::from_path(&c.config)?;
    let model = cfg.require_model()?;
    let mut mcmc = cfg.require_mcmc()?.clone();
    if let Some(s) = c.seed {
        mcmc.seed = s;
    }
    let paths = prepare_dir(&c.out, &["pattern.csv", "trace.csv"], c.overwrite)?;
    let trace = simulate::run_chain(model, &mcmc).map_err(runtime)?;
    io::atomic_write(&paths[0], io::pattern_csv_string(&trace.final_pattern).as_bytes())?;
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    io::atomic_write(&paths[1], &buf)?;
    eprintln!(
        "simulated {} points; acceptance birth {}/{} death {}/{}",
        trace.final_pattern.len(),
        trace.acceptance.birth_accepted,
        trace.acceptance.birth_proposed,
        trace.acceptance.death_accepted,
        trace.acceptance.death_proposed
    );
    Ok(())
}

fn cmd_fit(c: &Common, pattern: &Path) -> Result<()> {
    let cfg = RunConfig::from_path(&c.config)?;
    let fit = cfg.require_fit()?;
    let irregular = cfg.fit_irregular()?;
    let pat = io::read_pattern_csv(pattern, cfg.model.as_ref().map(|m| m.window))?;
    prepare_file(&c.out, c.overwrite)?;
    let mu = cfg.trend_mu();
    let result = match fit.method {
        FitMethod::Pseudo => inference::fit_pseudo(&pat, &irregular, &mu, fit.grid, &fit.options),
        FitMethod::Logistic => {
            let rho = fit.rho.unwrap_or_else(|| inference::default_rho(&pat));
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed.unwrap_or(fit.seed));
            inference::fit_logistic_likelihood(&pat, &irregular, &mu, rho, &mut rng, &fit.options)
        }
    }
    .map_err(runtime)?;
    if !result.converged() {
        eprintln!("warning: fit did not converge: {}", result.glm.diagnostics.join("; "));
    }
    io::atomic_write(&c.out, io::to_json(&result)?.as_bytes())
}

fn cmd_profile(c: &Common, pattern: &Path) -> Result<()> {
    let cfg = RunConfig::from_path(&c.config)?;
    let prof = cfg.require_profile()?;
    let pat = io::read_pattern_csv(pattern, cfg.model.as_ref().map(|m| m.window))?;
    let paths = prepare_dir(&c.out, &["profile.csv", "fit.json"], c.overwrite)?;
    let r = inference::profile_pseudo(&pat, &prof.candidates, &cfg.trend_mu(), prof.grid, &prof.options)
        .map_err(runtime)?;
    let mut buf = Vec::new();
    r.write_csv(&mut buf)?;
    io::atomic_write(&paths[0], &buf)?;
    io::atomic_write(&paths[1], io::to_json(&r.fit)?.as_bytes())?;
    eprintln!("selected candidate {}: {}", r.best_index, r.best.describe());
    Ok(())
}

fn cmd_study(c: &Common) -> Result<()> {
    let cfg = RunConfig::from_path(&c.config)?;
    let mut sc = cfg.study_config()?;
    if let Some(s) = c.seed {
        sc.master_seed = s;
    }
    let svg = cfg.study.as_ref().is_some_and(|s| s.svg);
    let mut names = vec!["report.json", "estimates.csv", "rmse.csv", "boxplot.csv"];
    if svg {
        names.push("boxplot.svg");
    }
    let paths = prepare_dir(&c.out, &names, c.overwrite)?;
    let report = study::run_study(&sc).map_err(runtime)?;
    let table = study::rmse_table(&report).map_err(runtime)?;

    let mut est = Vec::new();
    study::write_estimates_csv(&report, &mut est)?;
    let mut rmse = Vec::new();
    table.write_csv(&mut rmse)?;
    let mut boxes = Vec::new();
    study::write_boxplot_csv(&report, &mut boxes)?;

    io::atomic_write(&paths[1], &est)?;
    io::atomic_write(&paths[2], &rmse)?;
    io::atomic_write(&paths[3], &boxes)?;
    if svg {
        io::atomic_write(&paths[4], study::boxplot_svg(&report).as_bytes())?;
    }
    // The report goes last so its presence marks a complete run.
    io::atomic_write(&paths[0], io::to_json(&report)?.as_bytes())?;
    print!("{}", table.to_text());
    if !report.comparable {
        eprintln!(
            "warning: more than {:.0}% of replicates failed; results are not comparable",
            100.0 * study::MAX_FAILURE_FRACTION
        );
    }
    Ok(())
}

fn cmd_gnz(c: &Common) -> Result<()> {
    let cfg = RunConfig::from_path(&c.config)?;
    let model = cfg.require_model()?;
    let mcmc = cfg.require_mcmc()?;
    let g = cfg.require_gnz()?;
    let eval = g.eval_model.as_ref().unwrap_or(model);
    prepare_file(&c.out, c.overwrite)?;
    let seed = c.seed.unwrap_or(g.master_seed);
    let summary = study::run_gnz_check(model, eval, mcmc, g.n_patterns, seed, g.grid).map_err(runtime)?;
    io::atomic_write(&c.out, io::to_json(&summary)?.as_bytes())?;
    println!(
        "mean residual {:.4} (standard error {:.4}, z = {:.2}): {}",
        summary.mean,
        summary.std_error,
        summary.z,
        if summary.within_3se { "within 3 SE" } else { "outside 3 SE" }
    );
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Fit { common, pattern } => cmd_fit(common, pattern),
        Command::Profile { common, pattern } => cmd_profile(common, pattern),
        Command::Study(c) => cmd_study(c),
        Command::GnzCheck(c) => cmd_gnz(c),
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
