//! Off-policy CTR estimation from bandit logs.
//!
//! The clipped IPS estimate of a target policy is
//! `(1/n) Σ δ_i · min(M, π(a_i|x_i) / p_i)` where `p_i` is the logged
//! propensity of the shown action and `δ_i` the click. `M = ∞` is plain IPS.
//! Confidence intervals come from a seeded percentile bootstrap over logs.
//!
//! All sums are compensated and reduced over fixed-size chunks in a fixed
//! order, so results do not depend on the number of worker threads.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{fmt_sig12, sorted_quantile, KahanSum};
use crate::policies::Policy;
use crate::rng::{self, label};
use crate::sim_env::BanditLog;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// One-hot on the policy's top-ranked item.
    Deterministic,
    /// The policy's full action distribution.
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CipsConfig {
    /// Largest allowed importance weight; `f64::INFINITY` gives plain IPS.
    pub clip_m: f64,
    pub bootstrap_samples: usize,
    pub ci_level: f64,
    pub ci_seed: u64,
}

impl Default for CipsConfig {
    fn default() -> Self {
        Self {
            clip_m: 15.0,
            bootstrap_samples: 1000,
            ci_level: 0.95,
            ci_seed: 0,
        }
    }
}

impl CipsConfig {
    pub fn with_clip(&self, clip_m: f64) -> Self {
        Self {
            clip_m,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_m > 0.0) {
            return Err(Error::Config(format!("clip M must be positive, got {}", self.clip_m)));
        }
        if self.bootstrap_samples < 100 {
            return Err(Error::Config(format!(
                "bootstrap_samples must be at least 100, got {}",
                self.bootstrap_samples
            )));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config(format!("ci_level {} outside (0, 1)", self.ci_level)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub policy: String,
    pub estimator: String,
    pub clip_m: f64,
    pub point_estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub effective_sample_size: f64,
    /// Fraction of samples whose raw weight exceeded `clip_m`.
    pub clip_fraction: f64,
}

pub fn validate_logs(logs: &[BanditLog], num_items: usize) -> Result<()> {
    if logs.is_empty() {
        return Err(Error::Estimation("no bandit logs".into()));
    }
    for (i, log) in logs.iter().enumerate() {
        if !(log.propensity > 0.0 && log.propensity < 1.0) {
            return Err(Error::Data(format!(
                "log {i}: propensity {} outside (0, 1); the logging policy must be stochastic with full support",
                log.propensity
            )));
        }
        if log.action >= num_items {
            return Err(Error::Data(format!(
                "log {i}: action {} outside [0, {num_items})",
                log.action
            )));
        }
        if log.context_views.len() != num_items {
            return Err(Error::Data(format!(
                "log {i}: context has length {}, expected {num_items}",
                log.context_views.len()
            )));
        }
    }
    Ok(())
}

/// `π(a_i | x_i)` for every log. Consecutive logs with the same context reuse
/// one policy evaluation.
pub fn target_probabilities(logs: &[BanditLog], target: &dyn Policy, mode: TargetMode) -> Vec<f64> {
    logs.par_chunks(CHUNK)
        .flat_map_iter(|chunk| {
            let mut cached: Option<(&[u32], Vec<f64>, usize)> = None;
            chunk
                .iter()
                .map(|log| {
                    let ctx: &[u32] = &log.context_views;
                    let hit = matches!(&cached, Some((c, _, _)) if std::ptr::eq(*c, ctx) || *c == ctx);
                    if !hit {
                        let (dist, top) = match mode {
                            TargetMode::Stochastic => (target.action_distribution(ctx), 0),
                            TargetMode::Deterministic => (Vec::new(), target.top_action(ctx)),
                        };
                        cached = Some((ctx, dist, top));
                    }
                    let (_, dist, top) = cached.as_ref().expect("filled above");
                    match mode {
                        TargetMode::Stochastic => dist[log.action],
                        TargetMode::Deterministic => (log.action == *top) as u8 as f64,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn chunked_sum(xs: &[f64]) -> f64 {
    let partials: Vec<KahanSum> = xs
        .par_chunks(CHUNK)
        .map(|c| c.iter().copied().collect())
        .collect();
    let mut total = KahanSum::new();
    for p in partials {
        total.merge(p);
    }
    total.value()
}

/// Per-sample terms of the estimator.
#[derive(Debug, Clone)]
pub struct WeightedSamples {
    /// `min(M, π/p)`
    pub weights: Vec<f64>,
    /// `δ · min(M, π/p)`
    pub contributions: Vec<f64>,
    pub clipped: usize,
}

pub fn clipped_weights(
    propensities: &[f64],
    clicks: &[bool],
    target_probs: &[f64],
    clip_m: f64,
) -> WeightedSamples {
    let mut clipped = 0;
    let mut weights = Vec::with_capacity(propensities.len());
    let mut contributions = Vec::with_capacity(propensities.len());
    for ((&p, &click), &pi) in propensities.iter().zip(clicks).zip(target_probs) {
        let raw = pi / p;
        let w = if raw > clip_m {
            clipped += 1;
            clip_m
        } else {
            raw
        };
        weights.push(w);
        contributions.push(if click { w } else { 0.0 });
    }
    WeightedSamples {
        weights,
        contributions,
        clipped,
    }
}

/// Percentile bootstrap of the mean of `contributions`, widened if needed so
/// that it contains `point`.
pub fn bootstrap_interval(contributions: &[f64], point: f64, config: &CipsConfig) -> (f64, f64) {
    let n = contributions.len();
    if n == 0 {
        return (point, point);
    }
    if contributions.iter().all(|&c| c == contributions[0]) {
        return (point, point);
    }
    let mut stats: Vec<f64> = (0..config.bootstrap_samples as u64)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(config.ci_seed, &[label::BOOTSTRAP, b]);
            let mut s = KahanSum::new();
            for _ in 0..n {
                s.add(contributions[r.random_range(0..n)]);
            }
            s.value() / n as f64
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = 1.0 - config.ci_level;
    let lo = sorted_quantile(&stats, alpha / 2.0);
    let hi = sorted_quantile(&stats, 1.0 - alpha / 2.0);
    (lo.min(point), hi.max(point))
}

fn estimator_name(clip_m: f64) -> &'static str {
    if clip_m.is_infinite() {
        "ips"
    } else {
        "cips"
    }
}

/// Clipped IPS from already extracted per-log quantities.
pub fn cips_from_parts(
    policy: &str,
    propensities: &[f64],
    clicks: &[bool],
    target_probs: &[f64],
    config: &CipsConfig,
) -> Result<EstimateReport> {
    config.validate()?;
    let n = propensities.len();
    if n == 0 {
        return Err(Error::Estimation("no bandit logs".into()));
    }
    if clicks.len() != n || target_probs.len() != n {
        return Err(Error::Domain("per-log slices differ in length".into()));
    }
    if let Some(p) = propensities.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Data(format!("propensity {p} outside (0, 1)")));
    }
    let ws = clipped_weights(propensities, clicks, target_probs, config.clip_m);
    let point = chunked_sum(&ws.contributions) / n as f64;
    let (ci_low, ci_high) = bootstrap_interval(&ws.contributions, point, config);
    let sum_w = chunked_sum(&ws.weights);
    let squares: Vec<f64> = ws.weights.iter().map(|w| w * w).collect();
    let sum_w2 = chunked_sum(&squares);
    let effective_sample_size = if sum_w2 > 0.0 { sum_w * sum_w / sum_w2 } else { 0.0 };
    Ok(EstimateReport {
        policy: policy.to_string(),
        estimator: estimator_name(config.clip_m).to_string(),
        clip_m: config.clip_m,
        point_estimate: point,
        ci_low,
        ci_high,
        n,
        effective_sample_size,
        clip_fraction: ws.clipped as f64 / n as f64,
    })
}

fn split_logs(logs: &[BanditLog]) -> (Vec<f64>, Vec<bool>) {
    logs.iter().map(|l| (l.propensity, l.click)).unzip()
}

pub fn cips(
    logs: &[BanditLog],
    target: &dyn Policy,
    mode: TargetMode,
    config: &CipsConfig,
) -> Result<EstimateReport> {
    config.validate()?;
    validate_logs(logs, target.num_items())?;
    let probs = target_probabilities(logs, target, mode);
    let (propensities, clicks) = split_logs(logs);
    cips_from_parts(target.name(), &propensities, &clicks, &probs, config)
}

pub fn ips(
    logs: &[BanditLog],
    target: &dyn Policy,
    mode: TargetMode,
    config: &CipsConfig,
) -> Result<EstimateReport> {
    cips(logs, target, mode, &config.with_clip(f64::INFINITY))
}

pub fn bootstrap_ci(
    logs: &[BanditLog],
    target: &dyn Policy,
    mode: TargetMode,
    config: &CipsConfig,
) -> Result<(f64, f64)> {
    let r = cips(logs, target, mode, config)?;
    Ok((r.ci_low, r.ci_high))
}

/// Policy names by descending upper confidence bound, then descending point
/// estimate, then name.
pub fn rank_by_ucb(reports: &[EstimateReport]) -> Vec<String> {
    let mut order: Vec<&EstimateReport> = reports.iter().collect();
    order.sort_by(|a, b| {
        b.ci_high
            .total_cmp(&a.ci_high)
            .then(b.point_estimate.total_cmp(&a.point_estimate))
            .then(a.policy.cmp(&b.policy))
    });
    order.into_iter().map(|r| r.policy.clone()).collect()
}

/// One report per clipping level; the target is evaluated once.
pub fn clip_sweep(
    logs: &[BanditLog],
    target: &dyn Policy,
    mode: TargetMode,
    m_grid: &[f64],
    config: &CipsConfig,
) -> Result<Vec<EstimateReport>> {
    if m_grid.is_empty() {
        return Err(Error::Config("empty M grid".into()));
    }
    if m_grid.iter().any(|&m| !(m > 0.0)) || m_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("M grid must be positive and strictly ascending".into()));
    }
    config.validate()?;
    validate_logs(logs, target.num_items())?;
    let probs = target_probabilities(logs, target, mode);
    let (propensities, clicks) = split_logs(logs);
    m_grid
        .iter()
        .map(|&m| cips_from_parts(target.name(), &propensities, &clicks, &probs, &config.with_clip(m)))
        .collect()
}

pub fn write_cips_csv<W: Write>(mut w: W, reports: &[EstimateReport]) -> std::io::Result<()> {
    writeln!(w, "policy,estimator,m,estimate,ci_low,ci_high,n,ess,clip_fraction")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.policy,
            r.estimator,
            fmt_sig12(r.clip_m),
            fmt_sig12(r.point_estimate),
            fmt_sig12(r.ci_low),
            fmt_sig12(r.ci_high),
            r.n,
            fmt_sig12(r.effective_sample_size),
            fmt_sig12(r.clip_fraction)
        )?;
    }
    Ok(())
}
