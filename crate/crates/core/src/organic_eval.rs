//! Leave-one-out cross-validation with hit rate at k.
//!
//! Each fold holds out one uniformly chosen organic event per user with at
//! least two events, refits every model on the remainder and asks whether the
//! held-out item is among the model's top-k for that user's remaining counts.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::{fmt_sig12, mean_std};
use crate::policies::{self, counts_of, Hyperparams, PolicyModel, Variant};
use crate::rng::{self, label};
use crate::sim_env::OrganicEvent;

#[derive(Debug, Clone, PartialEq)]
pub struct HeldOut {
    pub user_id: u64,
    pub event: OrganicEvent,
    /// The user's organic counts without the held-out event.
    pub context: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoocvSplit {
    pub fold_seed: u64,
    pub held_out: Vec<HeldOut>,
    pub training: Vec<OrganicEvent>,
    pub excluded_users: usize,
}

impl LoocvSplit {
    pub fn evaluated_users(&self) -> usize {
        self.held_out.len()
    }
}

/// Holds out one uniformly sampled event per user with at least two events.
/// Users are visited in id order and each draws from its own stream, so the
/// choice for one user does not depend on the others.
pub fn make_split(events: &[OrganicEvent], num_items: usize, fold_seed: u64) -> Result<LoocvSplit> {
    let mut by_user: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (idx, ev) in events.iter().enumerate() {
        if ev.item_id >= num_items {
            return Err(Error::Domain(format!(
                "organic event item {} outside [0, {num_items})",
                ev.item_id
            )));
        }
        by_user.entry(ev.user_id).or_default().push(idx);
    }

    let mut is_held = vec![false; events.len()];
    let mut chosen = Vec::new();
    let mut excluded_users = 0;
    for (&user_id, idxs) in &by_user {
        if idxs.len() < 2 {
            excluded_users += 1;
            continue;
        }
        let mut r = rng::stream(fold_seed, &[label::LOOCV, user_id]);
        let pick = idxs[r.random_range(0..idxs.len())];
        is_held[pick] = true;
        chosen.push((user_id, pick));
    }

    let training: Vec<OrganicEvent> = events
        .iter()
        .zip(&is_held)
        .filter(|(_, &h)| !h)
        .map(|(e, _)| *e)
        .collect();

    let held_out = chosen
        .into_iter()
        .map(|(user_id, pick)| {
            let rest: Vec<OrganicEvent> = by_user[&user_id]
                .iter()
                .filter(|&&i| i != pick)
                .map(|&i| events[i])
                .collect();
            HeldOut {
                user_id,
                event: events[pick],
                context: counts_of(&rest, num_items),
            }
        })
        .collect();

    Ok(LoocvSplit {
        fold_seed,
        held_out,
        training,
        excluded_users,
    })
}

/// Fraction of held-out users whose item is in the model's top `k`.
/// `None` when the split evaluates nobody.
pub fn hit_rate_at_k(model: &PolicyModel, split: &LoocvSplit, k: usize) -> Result<Option<f64>> {
    if split.held_out.is_empty() {
        // still validates k against the catalog
        if k == 0 || k > model.num_items {
            return Err(Error::Domain(format!("k={k} outside [1, {}]", model.num_items)));
        }
        return Ok(None);
    }
    let mut hits = 0usize;
    for h in &split.held_out {
        if model.rank(&h.context, k)?.contains(&h.event.item_id) {
            hits += 1;
        }
    }
    Ok(Some(hits as f64 / split.held_out.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitRateReport {
    pub policy: String,
    pub k_folds: usize,
    /// HR@1 per fold; `None` for folds without evaluated users.
    pub per_fold: Vec<Option<f64>>,
    /// `None` when no fold evaluated any user.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub evaluated_users: usize,
    pub excluded_users: usize,
}

pub fn fold_seed(root_seed: u64, fold: usize) -> u64 {
    root_seed.wrapping_add(fold as u64)
}

/// k-fold LOOCV of every variant. Folds run in parallel; every variant is
/// refitted on each fold's training events.
pub fn run_loocv(
    events: &[OrganicEvent],
    num_items: usize,
    variants: &[Variant],
    hp: &Hyperparams,
    k_folds: usize,
    root_seed: u64,
) -> Result<Vec<HitRateReport>> {
    if k_folds == 0 {
        return Err(Error::Config("k_folds must be at least 1".into()));
    }
    let folds: Vec<(LoocvSplit, Vec<Option<f64>>)> = (0..k_folds)
        .into_par_iter()
        .map(|f| {
            let split = make_split(events, num_items, fold_seed(root_seed, f))?;
            let rates = variants
                .iter()
                .map(|&v| {
                    if split.held_out.is_empty() {
                        return Ok(None);
                    }
                    let model = policies::fit(v, &split.training, num_items, hp)?;
                    hit_rate_at_k(&model, &split, 1)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((split, rates))
        })
        .collect::<Result<_>>()?;

    let (evaluated_users, excluded_users) = folds
        .first()
        .map(|(s, _)| (s.evaluated_users(), s.excluded_users))
        .unwrap_or((0, 0));

    Ok(variants
        .iter()
        .enumerate()
        .map(|(vi, v)| {
            let per_fold: Vec<Option<f64>> = folds.iter().map(|(_, r)| r[vi]).collect();
            let defined: Vec<f64> = per_fold.iter().flatten().copied().collect();
            let (mean, std) = if defined.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&defined);
                (Some(m), Some(s))
            };
            HitRateReport {
                policy: v.to_string(),
                k_folds,
                per_fold,
                mean,
                std,
                evaluated_users,
                excluded_users,
            }
        })
        .collect())
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig12).unwrap_or_else(|| "undefined".to_string())
}

/// Per-fold rows, a blank line, then one summary row per policy. The summary
/// std is taken across folds.
pub fn write_loocv_csv<W: Write>(mut w: W, reports: &[HitRateReport]) -> std::io::Result<()> {
    writeln!(w, "policy,fold,hr_at_1")?;
    for r in reports {
        for (f, hr) in r.per_fold.iter().enumerate() {
            writeln!(w, "{},{},{}", r.policy, f, opt(*hr))?;
        }
    }
    writeln!(w)?;
    writeln!(w, "policy,mean,std,n_users_evaluated")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{}",
            r.policy,
            opt(r.mean),
            opt(r.std),
            r.evaluated_users
        )?;
    }
    Ok(())
}
