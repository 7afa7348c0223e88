use std::path::PathBuf;
use std::process::ExitCode;

use banditeval::experiment::{self, ExperimentConfig};
use banditeval::numeric::fmt_sig12;
use banditeval::Error;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "banditeval", version, about = "Offline, counterfactual and simulated A/B evaluation of recommenders")]
struct Cli {
    /// TOML experiment configuration; defaults to the built-in preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in preset used when no --config is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,

    /// Overrides the root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train and test datasets.
    Simulate,
    /// Run LOOCV, clipped IPS and the simulated A/B test on every policy.
    Eval,
    /// Clipped IPS estimates across the configured M grid.
    SweepM,
    /// Solve for the click offset that gives the configured baseline CTR.
    CalibrateClick,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => match cli.preset {
            Preset::Desk => ExperimentConfig::desk(),
            Preset::Full => ExperimentConfig::full(),
        },
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    experiment::with_threads(cli.threads, || match cli.command {
        Command::Simulate => {
            let (train, test) = experiment::cmd_simulate(&cfg)?;
            for meta in [train, test] {
                println!(
                    "{}: {} users, {} organic, {} bandit, {} clicks",
                    meta.phase.as_str(),
                    meta.num_users,
                    meta.organic_count,
                    meta.bandit_count,
                    meta.clicks
                );
            }
            println!("wrote {}", cfg.out_dir.display());
            Ok(())
        }
        Command::Eval => {
            let out = experiment::cmd_eval(&cfg)?;
            println!(
                "{:<24} {:>10} {:>10} {:>22} {:>10} {:>5} {:>5} {:>5}",
                "policy", "hr@1", "cips", "cips ci", "ab ctr", "loo", "ucb", "ab"
            );
            for r in &out.comparison.rows {
                println!(
                    "{:<24} {:>10.4} {:>10.5} {:>10.5}-{:<11.5} {:>10.5} {:>5} {:>5} {:>5}",
                    r.policy,
                    r.loocv_hr_at_1.unwrap_or(f64::NAN),
                    r.cips_estimate,
                    r.cips_ci_low,
                    r.cips_ci_high,
                    r.ab_ctr,
                    r.rank_loocv,
                    r.rank_cips_ucb,
                    r.rank_ab
                );
            }
            println!(
                "kendall tau vs a/b: loocv {:.3}, cips-ucb {:.3}",
                out.comparison.kendall_tau_loocv_ab, out.comparison.kendall_tau_ucb_ab
            );
            println!("wrote {}", cfg.out_dir.display());
            Ok(())
        }
        Command::SweepM => {
            let reports = experiment::cmd_sweep_m(&cfg)?;
            println!("wrote {} rows to {}", reports.len(), cfg.out_dir.join(experiment::SWEEP_REPORT).display());
            Ok(())
        }
        Command::CalibrateClick => {
            let res = experiment::cmd_calibrate(&cfg)?;
            println!("click_offset = {}", fmt_sig12(res.click_offset));
            println!("mean_click_probability = {}", fmt_sig12(res.mean_click_probability));
            Ok(())
        }
        Command::ShowConfig => {
            print!("{}", cfg.to_toml_string());
            Ok(())
        }
    })?
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
