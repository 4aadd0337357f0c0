use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vmgp_harness::config::{ExperimentConfig, Profile, SweepConfig};
use vmgp_harness::{read_results, run_experiment, table_report, verify, HarnessError};

#[derive(Parser)]
#[command(
    name = "vmgp",
    version,
    about = "Train and evaluate few-shot regression meta-learners"
)]
struct Cli {
    /// Seed overriding the config's.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output root for run directories.
    #[arg(long, global = true, env = "VMGP_OUT")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on one environment and evaluate it.
    Run(RunArgs),
    /// Run every model × environment (× seed) combination of a config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        profile: Option<Profile>,
    },
    /// Run the built-in oracle checks.
    Verify,
    /// Merge results.csv files or run directories into one table.
    Report {
        #[arg(long, default_value = "nll")]
        metric: String,
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; flags given alongside override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    profile: Option<Profile>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    n_posterior_samples: Option<usize>,
    #[arg(long)]
    n_test_tasks: Option<usize>,
}

fn base_config(profile: Option<Profile>) -> ExperimentConfig {
    profile.map_or_else(ExperimentConfig::default, ExperimentConfig::with_profile)
}

fn read_text(path: &PathBuf) -> Result<String, HarnessError> {
    fs::read_to_string(path)
        .map_err(|e| HarnessError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn apply_globals(cfg: &mut ExperimentConfig, cli_seed: Option<u64>, out: &Option<PathBuf>) {
    if let Some(s) = cli_seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o.clone();
    }
}

fn run_one(cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    let out = run_experiment(cfg)?;
    println!("{}", out.dir.display());
    for r in &out.rows {
        println!(
            "{} {} {}: {:.4} ± {:.4}",
            r.model, r.environment, r.metric, r.mean, r.std_error
        );
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run(a) => {
            let base = base_config(a.profile);
            let mut cfg = match &a.config {
                Some(p) => ExperimentConfig::from_json(&read_text(p)?, &base)?,
                None => base,
            };
            if a.config.is_none() && (a.model.is_none() || a.env.is_none()) {
                return Err(HarnessError::Usage(
                    "run needs --config or both --model and --env".into(),
                ));
            }
            if let Some(m) = a.model {
                cfg.model = m;
            }
            if let Some(e) = a.env {
                cfg.environment = e;
            }
            cfg.k = a.k.or(cfg.k);
            cfg.q = a.q.or(cfg.q);
            cfg.iterations = a.iterations.unwrap_or(cfg.iterations);
            cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
            cfg.lr = a.lr.unwrap_or(cfg.lr);
            cfg.xi = a.xi.unwrap_or(cfg.xi);
            cfg.n_posterior_samples = a.n_posterior_samples.unwrap_or(cfg.n_posterior_samples);
            cfg.n_test_tasks = a.n_test_tasks.unwrap_or(cfg.n_test_tasks);
            apply_globals(&mut cfg, cli.seed, &cli.out);
            run_one(&cfg)
        }
        Command::Sweep { config, profile } => {
            let mut sweep = SweepConfig::from_json(&read_text(&config)?, &base_config(profile))?;
            if let Some(s) = cli.seed {
                sweep.seeds = vec![s];
            }
            let runs = sweep.expand();
            // Reject bad ids before spending time on any run.
            for cfg in &runs {
                cfg.validate()?;
            }
            for mut cfg in runs {
                apply_globals(&mut cfg, None, &cli.out);
                run_one(&cfg)?;
            }
            Ok(())
        }
        Command::Verify => {
            let checks = verify::run_checks();
            for c in &checks {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                println!("{tag} {}: {}", c.name, c.detail);
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(HarnessError::Runtime(format!("{failed} check(s) failed")));
            }
            Ok(())
        }
        Command::Report { metric, paths } => {
            let rows = read_results(&paths)?;
            print!("{}", table_report(&rows, Some(&metric))?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
