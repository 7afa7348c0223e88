//! Joins the three evaluation schemes into one table and compares their
//! policy rankings.

use std::io::Write;

use crate::ab_test::AbTestReport;
use crate::counterfactual_eval::{rank_by_ucb, EstimateReport};
use crate::numeric::fmt_sig12;
use crate::organic_eval::HitRateReport;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyComparison {
    pub policy: String,
    pub loocv_hr_at_1: Option<f64>,
    pub loocv_std: Option<f64>,
    pub cips_estimate: f64,
    pub cips_ci_low: f64,
    pub cips_ci_high: f64,
    pub ab_ctr: f64,
    pub ab_ci_low: f64,
    pub ab_ci_high: f64,
    /// 1 is best.
    pub rank_loocv: usize,
    pub rank_cips_ucb: usize,
    pub rank_ab: usize,
}

impl PolicyComparison {
    pub fn ucb_agrees_with_ab(&self) -> bool {
        self.rank_cips_ucb == self.rank_ab
    }

    pub fn loocv_agrees_with_ab(&self) -> bool {
        self.rank_loocv == self.rank_ab
    }

    pub fn cips_covers_ab(&self) -> bool {
        self.cips_ci_low <= self.ab_ctr && self.ab_ctr <= self.cips_ci_high
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSummary {
    pub rows: Vec<PolicyComparison>,
    pub kendall_tau_loocv_ab: f64,
    pub kendall_tau_ucb_ab: f64,
}

impl ComparisonSummary {
    pub fn ucb_ranking_matches_ab(&self) -> bool {
        self.rows.iter().all(PolicyComparison::ucb_agrees_with_ab)
    }

    pub fn loocv_ranking_matches_ab(&self) -> bool {
        self.rows.iter().all(PolicyComparison::loocv_agrees_with_ab)
    }

    pub fn row(&self, policy: &str) -> Option<&PolicyComparison> {
        self.rows.iter().find(|r| r.policy == policy)
    }
}

/// Policy names ordered best first by `value` (descending), ties by name.
pub fn ranking_by<T>(items: &[T], name: impl Fn(&T) -> &str, value: impl Fn(&T) -> f64) -> Vec<String> {
    let mut order: Vec<&T> = items.iter().collect();
    order.sort_by(|a, b| value(b).total_cmp(&value(a)).then(name(a).cmp(name(b))));
    order.into_iter().map(|t| name(t).to_string()).collect()
}

fn position(order: &[String], policy: &str) -> usize {
    order
        .iter()
        .position(|p| p == policy)
        .map(|i| i + 1)
        .expect("ranking covers every policy")
}

/// Kendall's tau-a between two orderings of the same names.
pub fn kendall_tau(a: &[String], b: &[String]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let pos_b: Vec<usize> = a.iter().map(|p| position(b, p)).collect();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            // a ranks i before j; check b
            if pos_b[i] < pos_b[j] {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    (concordant - discordant) as f64 / (n * (n - 1) / 2) as f64
}

/// Joins per-scheme reports on policy name. `policies` fixes the row order;
/// every policy must appear in all three report lists.
pub fn compare(
    policies: &[String],
    loocv: &[HitRateReport],
    cips: &[EstimateReport],
    ab: &[AbTestReport],
) -> ComparisonSummary {
    let loocv: Vec<&HitRateReport> = policies
        .iter()
        .map(|p| loocv.iter().find(|r| &r.policy == p).expect("loocv report per policy"))
        .collect();
    let cips: Vec<EstimateReport> = policies
        .iter()
        .map(|p| cips.iter().find(|r| &r.policy == p).expect("cips report per policy").clone())
        .collect();
    let ab: Vec<&AbTestReport> = policies
        .iter()
        .map(|p| ab.iter().find(|r| &r.policy == p).expect("a/b report per policy"))
        .collect();

    let loocv_order = ranking_by(&loocv, |r| &r.policy, |r| r.mean.unwrap_or(f64::NEG_INFINITY));
    let ucb_order = rank_by_ucb(&cips);
    let ab_order = ranking_by(&ab, |r| &r.policy, |r| r.ctr);

    let rows = policies
        .iter()
        .enumerate()
        .map(|(i, p)| PolicyComparison {
            policy: p.clone(),
            loocv_hr_at_1: loocv[i].mean,
            loocv_std: loocv[i].std,
            cips_estimate: cips[i].point_estimate,
            cips_ci_low: cips[i].ci_low,
            cips_ci_high: cips[i].ci_high,
            ab_ctr: ab[i].ctr,
            ab_ci_low: ab[i].ci_low,
            ab_ci_high: ab[i].ci_high,
            rank_loocv: position(&loocv_order, p),
            rank_cips_ucb: position(&ucb_order, p),
            rank_ab: position(&ab_order, p),
        })
        .collect();

    ComparisonSummary {
        rows,
        kendall_tau_loocv_ab: kendall_tau(&loocv_order, &ab_order),
        kendall_tau_ucb_ab: kendall_tau(&ucb_order, &ab_order),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig12).unwrap_or_else(|| "undefined".to_string())
}

pub fn write_comparison_csv<W: Write>(mut w: W, summary: &ComparisonSummary) -> std::io::Result<()> {
    writeln!(
        w,
        "policy,loocv_hr_at_1,loocv_std,cips_estimate,cips_ci_low,cips_ci_high,ab_ctr,ab_ci_low,ab_ci_high,rank_loocv,rank_cips_ucb,rank_ab,ucb_agrees_with_ab,loocv_agrees_with_ab"
    )?;
    for r in &summary.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.policy,
            opt(r.loocv_hr_at_1),
            opt(r.loocv_std),
            fmt_sig12(r.cips_estimate),
            fmt_sig12(r.cips_ci_low),
            fmt_sig12(r.cips_ci_high),
            fmt_sig12(r.ab_ctr),
            fmt_sig12(r.ab_ci_low),
            fmt_sig12(r.ab_ci_high),
            r.rank_loocv,
            r.rank_cips_ucb,
            r.rank_ab,
            r.ucb_agrees_with_ab(),
            r.loocv_agrees_with_ab()
        )?;
    }
    Ok(())
}

pub fn write_agreement_csv<W: Write>(mut w: W, summary: &ComparisonSummary) -> std::io::Result<()> {
    writeln!(w, "schemes,kendall_tau,rankings_identical")?;
    writeln!(
        w,
        "loocv_vs_ab,{},{}",
        fmt_sig12(summary.kendall_tau_loocv_ab),
        summary.loocv_ranking_matches_ab()
    )?;
    writeln!(
        w,
        "cips_ucb_vs_ab,{},{}",
        fmt_sig12(summary.kendall_tau_ucb_ab),
        summary.ucb_ranking_matches_ab()
    )?;
    Ok(())
}
