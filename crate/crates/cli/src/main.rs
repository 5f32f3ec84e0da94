use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use imm_cda::config::{load_config, ConfigOverrides};
use imm_cda::io::{
    read_manifest_json, read_summary_json, write_episode_csv, write_manifest_json,
    write_summary_json, RunManifest,
};
use imm_cda::selfcheck::run_checks;
use imm_cda::sim::{
    episode_seeds, run_episode, run_monte_carlo_traces, MonteCarloSummary, ScenarioConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "imm-cda",
    version,
    about = "IMM tracking and conflict avoidance simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one episode and write its trace as CSV.
    Run(RunArgs),
    /// Simulate a batch of episodes and write a JSON summary.
    MonteCarlo(MonteCarloArgs),
    /// Run the invariant self-test suite.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-run the configuration recorded in a manifest or summary file.
    Replay {
        /// `manifest.json` from `run` or `summary.json` from `monte-carlo`.
        manifest: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    r_safe: Option<f64>,
    /// Turn off conflict detection and avoidance.
    #[arg(long)]
    disable_cda: bool,
    /// Keep the previous estimated mode while the top mode probability is below this.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
}

#[derive(Debug, Args)]
struct MonteCarloArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Also write one CSV per episode.
    #[arg(long)]
    emit_traces: bool,
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<ScenarioConfig> {
        let overrides = ConfigOverrides {
            dt: self.dt,
            steps: self.steps,
            r_safe: self.r_safe,
            seed: self.seed,
            cda_enabled: self.disable_cda.then_some(false),
            mode_threshold: self.threshold,
        };
        Ok(load_config(self.config.as_deref(), &overrides)?)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn episode_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("episode_{seed}.csv"))
}

fn run_single(config: &ScenarioConfig, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let trace = run_episode(config)?;
    let csv = episode_path(out_dir, config.seed);
    write_episode_csv(&trace, &csv)?;
    let manifest = RunManifest::new(
        "run",
        config,
        vec![config.seed],
        vec![csv.display().to_string()],
    );
    let manifest_path = out_dir.join("manifest.json");
    write_manifest_json(&manifest, &manifest_path)?;

    let s = &trace.summary;
    println!("wrote {} and {}", csv.display(), manifest_path.display());
    println!(
        "seed {}: min separation {:.1} m, {} advisories, mode accuracy {:.3}",
        s.seed,
        s.min_separation,
        s.advisory_count,
        s.mode_accuracy()
    );
    Ok(())
}

fn run_batch(
    config: &ScenarioConfig,
    episodes: usize,
    emit_traces: bool,
    out_dir: &Path,
) -> Result<()> {
    create_dir(out_dir)?;
    let traces = run_monte_carlo_traces(config, episodes)?;
    let mut outputs = Vec::new();
    if emit_traces {
        for t in &traces {
            let path = episode_path(out_dir, t.seed);
            write_episode_csv(t, &path)?;
            outputs.push(path.display().to_string());
        }
    }
    let summary_path = out_dir.join("summary.json");
    outputs.push(summary_path.display().to_string());

    let episodes_summary: Vec<_> = traces.iter().map(|t| t.summary.clone()).collect();
    let summary = MonteCarloSummary::from_episodes(&episodes_summary);
    let manifest = RunManifest::new(
        "monte-carlo",
        config,
        episode_seeds(config.seed, episodes),
        outputs,
    );
    write_summary_json(&summary, &manifest, &summary_path)?;

    println!("wrote {}", summary_path.display());
    println!(
        "{} episodes: breach fraction {:.3}, min separation median {:.1} m",
        summary.n_episodes, summary.breach_fraction, summary.min_separation.median
    );
    println!(
        "position RMSE {:.2} m estimated vs {:.2} m measured, mode accuracy {:.3}",
        summary.rmse_position_est, summary.rmse_position_meas, summary.mode_accuracy
    );
    Ok(())
}

fn replay(path: &Path, out_dir: &Path) -> Result<()> {
    let manifest = match read_manifest_json(path) {
        Ok(m) => m,
        Err(_) => read_summary_json(path)?.manifest,
    };
    let config = &manifest.config;
    config.validate()?;
    match manifest.command.as_str() {
        "run" => run_single(config, out_dir),
        "monte-carlo" => {
            let emit_traces = manifest.outputs.iter().any(|o| o.ends_with(".csv"));
            run_batch(config, manifest.seeds.len(), emit_traces, out_dir)
        }
        other => bail!("{}: unknown command `{other}` in manifest", path.display()),
    }
}

fn check(seed: u64) -> Result<()> {
    let outcomes = run_checks(seed);
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!("{status} {}: {} ({})", o.module, o.name, o.detail);
    }
    println!(
        "{} of {} checks passed",
        outcomes.len() - failed,
        outcomes.len()
    );
    if failed > 0 {
        bail!("{failed} invariant checks failed");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => a
            .scenario
            .resolve()
            .and_then(|c| run_single(&c, &a.scenario.out_dir)),
        Command::MonteCarlo(a) => a
            .scenario
            .resolve()
            .and_then(|c| run_batch(&c, a.episodes, a.emit_traces, &a.scenario.out_dir)),
        Command::Check { seed } => check(seed),
        Command::Replay { manifest, out_dir } => replay(&manifest, &out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
