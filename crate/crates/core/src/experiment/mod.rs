//! End-to-end pipeline: simulate train/test data, evaluate every policy with
//! LOOCV, clipped IPS and a simulated A/B test, and write the reports.

mod compare;
mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::ab_test::{run_ab_suite, write_abtest_csv, AbTestReport};
use crate::counterfactual_eval::{self, write_cips_csv, EstimateReport, TargetMode};
use crate::error::{Error, Result};
use crate::organic_eval::{run_loocv, write_loocv_csv, HitRateReport};
use crate::policies::{self, Policy, PolicyModel};
use crate::sim_env::{self, ClickCalibration, Dataset, DatasetMeta, Environment, Phase};

pub use compare::{
    compare, kendall_tau, ranking_by, write_agreement_csv, write_comparison_csv,
    ComparisonSummary, PolicyComparison,
};
pub use config::{
    AbTestConfig, CalibrationConfig, CipsSection, ExperimentConfig, LoggingConfig, LoocvConfig,
    UsersConfig,
};

pub const LOOCV_REPORT: &str = "loocv_report.csv";
pub const CIPS_REPORT: &str = "cips_report.csv";
pub const ABTEST_REPORT: &str = "abtest_report.csv";
pub const COMPARISON_REPORT: &str = "comparison.csv";
pub const AGREEMENT_REPORT: &str = "agreement.csv";
pub const SWEEP_REPORT: &str = "clip_sweep.csv";

/// Runs `f` on a dedicated pool of `threads` workers (0 = rayon's default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn environment(cfg: &ExperimentConfig) -> Result<Environment> {
    Environment::new(cfg.env.clone())
}

pub fn logging_policy(cfg: &ExperimentConfig) -> Result<PolicyModel> {
    PolicyModel::logging(cfg.env.num_items, cfg.logging.temperature, cfg.logging_floor())
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn simulate_in_memory(cfg: &ExperimentConfig) -> Result<SimulatedData> {
    cfg.validate()?;
    let env = environment(cfg)?;
    let logger = logging_policy(cfg)?;
    Ok(SimulatedData {
        train: env.generate_dataset(cfg.users.train, &logger, Phase::Train)?,
        test: env.generate_dataset(cfg.users.test, &logger, Phase::Test)?,
    })
}

/// Writes `train/` and `test/` dataset directories under the output directory.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<(DatasetMeta, DatasetMeta)> {
    let data = simulate_in_memory(cfg)?;
    let train = sim_env::write_dataset(&cfg.train_dir(), &data.train, &cfg.env)?;
    let test = sim_env::write_dataset(&cfg.test_dir(), &data.test, &cfg.env)?;
    Ok((train, test))
}

fn load_phase(cfg: &ExperimentConfig, dir: &Path, phase: Phase) -> Result<Dataset> {
    let (data, meta) = sim_env::read_dataset(dir)?;
    if meta.env != cfg.env {
        return Err(Error::Config(format!(
            "{} was generated with a different environment configuration",
            dir.display()
        )));
    }
    if meta.phase != phase {
        return Err(Error::Config(format!(
            "{} holds {} data, expected {}",
            dir.display(),
            meta.phase.as_str(),
            phase.as_str()
        )));
    }
    Ok(data)
}

pub fn load_datasets(cfg: &ExperimentConfig) -> Result<SimulatedData> {
    Ok(SimulatedData {
        train: load_phase(cfg, &cfg.train_dir(), Phase::Train)?,
        test: load_phase(cfg, &cfg.test_dir(), Phase::Test)?,
    })
}

#[derive(Debug, Clone)]
pub struct EvaluationOutputs {
    pub loocv: Vec<HitRateReport>,
    /// One row per configured policy, then the on-policy logging row.
    pub cips: Vec<EstimateReport>,
    pub abtest: Vec<AbTestReport>,
    pub comparison: ComparisonSummary,
}

impl EvaluationOutputs {
    pub fn cips_for(&self, policy: &str) -> Option<&EstimateReport> {
        self.cips.iter().find(|r| r.policy == policy)
    }

    pub fn abtest_for(&self, policy: &str) -> Option<&AbTestReport> {
        self.abtest.iter().find(|r| r.policy == policy)
    }
}

/// Fits every configured policy on the training organic events.
pub fn fit_policies(cfg: &ExperimentConfig, train: &Dataset) -> Result<Vec<PolicyModel>> {
    let hp = cfg.policy_hyperparams();
    cfg.policies
        .iter()
        .map(|&v| policies::fit(v, &train.organic, cfg.env.num_items, &hp))
        .collect()
}

pub fn evaluate(cfg: &ExperimentConfig, data: &SimulatedData) -> Result<EvaluationOutputs> {
    cfg.validate()?;
    let env = environment(cfg)?;
    let num_items = cfg.env.num_items;
    let hp = cfg.policy_hyperparams();

    let loocv = run_loocv(
        &data.train.organic,
        num_items,
        &cfg.policies,
        &hp,
        cfg.loocv.folds,
        cfg.loocv_seed(),
    )?;

    let models = fit_policies(cfg, &data.train)?;
    let cips_cfg = cfg.cips_config(cfg.cips.m);
    let mut cips = models
        .iter()
        .map(|m| counterfactual_eval::cips(&data.test.bandit, m, cfg.cips.target_mode, &cips_cfg))
        .collect::<Result<Vec<_>>>()?;
    let logger = logging_policy(cfg)?;
    cips.push(counterfactual_eval::cips(
        &data.test.bandit,
        &logger,
        TargetMode::Stochastic,
        &cips_cfg,
    )?);

    let arms: Vec<&dyn Policy> = models.iter().map(|m| m as &dyn Policy).collect();
    let abtest = run_ab_suite(
        &env,
        &arms,
        cfg.abtest.users_per_arm,
        cfg.abtest.mode,
        cfg.abtest_seed(),
    );

    let names: Vec<String> = cfg.policies.iter().map(|v| v.to_string()).collect();
    let comparison = compare(&names, &loocv, &cips, &abtest);
    Ok(EvaluationOutputs {
        loocv,
        cips,
        abtest,
        comparison,
    })
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_evaluation(dir: &Path, out: &EvaluationOutputs) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(LOOCV_REPORT), |w| write_loocv_csv(w, &out.loocv))?;
    write_file(&dir.join(CIPS_REPORT), |w| write_cips_csv(w, &out.cips))?;
    write_file(&dir.join(ABTEST_REPORT), |w| write_abtest_csv(w, &out.abtest))?;
    write_file(&dir.join(COMPARISON_REPORT), |w| {
        write_comparison_csv(w, &out.comparison)
    })?;
    write_file(&dir.join(AGREEMENT_REPORT), |w| {
        write_agreement_csv(w, &out.comparison)
    })
}

/// Reads the simulated datasets and writes every evaluation report.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<EvaluationOutputs> {
    let data = load_datasets(cfg)?;
    let out = evaluate(cfg, &data)?;
    write_evaluation(&cfg.out_dir, &out)?;
    Ok(out)
}

pub fn sweep(cfg: &ExperimentConfig, data: &SimulatedData) -> Result<Vec<EstimateReport>> {
    cfg.validate()?;
    let models = fit_policies(cfg, &data.train)?;
    let base = cfg.cips_config(cfg.cips.m);
    let mut out = Vec::new();
    for m in &models {
        out.extend(counterfactual_eval::clip_sweep(
            &data.test.bandit,
            m,
            cfg.cips.target_mode,
            &cfg.cips.m_grid,
            &base,
        )?);
    }
    Ok(out)
}

pub fn cmd_sweep_m(cfg: &ExperimentConfig) -> Result<Vec<EstimateReport>> {
    let data = load_datasets(cfg)?;
    let reports = sweep(cfg, &data)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_file(&cfg.out_dir.join(SWEEP_REPORT), |w| write_cips_csv(w, &reports))?;
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationResult {
    pub click_offset: f64,
    pub mean_click_probability: f64,
}

/// Bisection for the click offset giving the configured CTR under uniformly
/// random recommendations.
pub fn cmd_calibrate(cfg: &ExperimentConfig) -> Result<CalibrationResult> {
    cfg.env.validate()?;
    let env = environment(cfg)?;
    let cal = ClickCalibration::new(&env, cfg.calibration.draws, cfg.seed);
    let click_offset = cal.solve_offset(cfg.calibration.target_ctr)?;
    Ok(CalibrationResult {
        click_offset,
        mean_click_probability: cal.mean_click_probability(click_offset),
    })
}
