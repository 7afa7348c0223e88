//! The six baseline recommenders, all fitted on organic views only.
//!
//! Every model answers two questions for a user context (the user's organic
//! view counts): a full action distribution, used when the model acts as a
//! stochastic logger or target, and a deterministic ranking, used for HR@k and
//! for deterministic targets. Rankings break score ties by ascending item id.

mod matrix;
pub mod svd;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::softmax;
use crate::rng::{self, label};
use crate::sim_env::OrganicEvent;

pub use matrix::InteractionMatrix;
pub(crate) use matrix::counts_of;

/// Anything that can act in the simulator or be evaluated against logs.
pub trait Policy: Send + Sync {
    fn name(&self) -> &str;

    fn num_items(&self) -> usize;

    /// Probability of every action given the context; sums to one.
    fn action_distribution(&self, context: &[u32]) -> Vec<f64>;

    /// The action a deterministic deployment of this policy shows.
    fn top_action(&self, context: &[u32]) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Random,
    Popularity,
    PersonalizedPopularity,
    Svd,
    ItemKnn,
    UserKnn,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Random,
        Variant::Popularity,
        Variant::PersonalizedPopularity,
        Variant::Svd,
        Variant::ItemKnn,
        Variant::UserKnn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Random => "random",
            Variant::Popularity => "popularity",
            Variant::PersonalizedPopularity => "personalized_popularity",
            Variant::Svd => "svd",
            Variant::ItemKnn => "item_knn",
            Variant::UserKnn => "user_knn",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub svd_rank: usize,
    pub svd_iterations: usize,
    pub svd_tolerance: f64,
    pub knn_k: usize,
    /// Softmax temperature for `action_distribution`.
    pub temperature: f64,
    /// Minimum probability of every action in `action_distribution`.
    pub epsilon_floor: f64,
    /// Seeds the random policy's shuffles and the SVD initialization.
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            svd_rank: 10,
            svd_iterations: 50,
            svd_tolerance: 1e-9,
            knn_k: 20,
            temperature: 1.0,
            epsilon_floor: 0.0,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self, num_items: usize) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        let max_floor = 1.0 / num_items as f64;
        if !(self.epsilon_floor >= 0.0 && self.epsilon_floor <= max_floor) {
            return Err(Error::Config(format!(
                "epsilon_floor must lie in [0, 1/P] = [0, {max_floor}]"
            )));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Params {
    Random { seed: u64 },
    Popularity { counts: Vec<f64> },
    PersonalizedPopularity,
    Svd {
        rank: usize,
        singular_values: Vec<f64>,
        /// Item factors, `num_items × rank`, row-major.
        item_factors: Vec<f64>,
    },
    ItemKnn {
        /// For every item, its most similar other items with positive cosine.
        neighbors: Vec<Vec<(usize, f64)>>,
    },
    UserKnn {
        k: usize,
        rows: Vec<Vec<(usize, u32)>>,
        norms: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub name: String,
    pub variant: Variant,
    pub num_items: usize,
    pub temperature: f64,
    pub epsilon_floor: f64,
    pub hyperparams: Hyperparams,
    pub params: Params,
}

fn fit_error(variant: Variant, reason: &str) -> Error {
    Error::Fit {
        variant: variant.to_string(),
        reason: reason.to_string(),
    }
}

/// Fits `variant` on organic events. Bandit logs never enter this function.
pub fn fit(
    variant: Variant,
    organic: &[OrganicEvent],
    num_items: usize,
    hp: &Hyperparams,
) -> Result<PolicyModel> {
    if num_items == 0 {
        return Err(Error::Domain("num_items must be positive".into()));
    }
    hp.validate(num_items)?;
    let matrix = InteractionMatrix::from_events(organic, num_items)?;
    let needs_data = matches!(variant, Variant::Svd | Variant::ItemKnn | Variant::UserKnn);
    if needs_data && matrix.num_users() == 0 {
        return Err(fit_error(variant, "no organic events"));
    }

    let params = match variant {
        Variant::Random => Params::Random {
            seed: rng::derive_seed(hp.seed, &[label::RANDOM_POLICY]),
        },
        Variant::Popularity => Params::Popularity {
            counts: matrix.item_counts(),
        },
        Variant::PersonalizedPopularity => Params::PersonalizedPopularity,
        Variant::Svd => {
            let dense = matrix.to_dense();
            let res = svd::truncated_svd(
                &dense,
                hp.svd_rank,
                hp.svd_iterations,
                hp.svd_tolerance,
                rng::derive_seed(hp.seed, &[label::SVD_INIT]),
            );
            let rank = res.rank();
            let mut item_factors = Vec::with_capacity(num_items * rank);
            for i in 0..num_items {
                for r in 0..rank {
                    item_factors.push(res.v[(i, r)]);
                }
            }
            Params::Svd {
                rank,
                singular_values: res.singular_values,
                item_factors,
            }
        }
        Variant::ItemKnn => {
            let sims = matrix.item_cosine();
            let neighbors = (0..num_items)
                .map(|j| {
                    let row = &sims[j * num_items..(j + 1) * num_items];
                    let mut nb: Vec<(usize, f64)> = row
                        .iter()
                        .enumerate()
                        .filter(|&(i, &s)| i != j && s > 0.0)
                        .map(|(i, &s)| (i, s))
                        .collect();
                    nb.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                    nb.truncate(hp.knn_k);
                    nb
                })
                .collect();
            Params::ItemKnn { neighbors }
        }
        Variant::UserKnn => {
            let rows = matrix.rows().to_vec();
            let norms = rows
                .iter()
                .map(|r| r.iter().map(|&(_, c)| (c as f64).powi(2)).sum::<f64>().sqrt())
                .collect();
            Params::UserKnn {
                k: hp.knn_k,
                rows,
                norms,
            }
        }
    };

    Ok(PolicyModel {
        name: variant.to_string(),
        variant,
        num_items,
        temperature: hp.temperature,
        epsilon_floor: hp.epsilon_floor,
        hyperparams: hp.clone(),
        params,
    })
}

/// FNV-1a over a count vector; keys the random policy's per-context shuffle.
fn context_key(context: &[u32]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &c in context {
        for b in c.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

impl PolicyModel {
    /// The stochastic personalized-popularity logger: softmax over the user's
    /// view counts, mixed with uniform so that every action has at least
    /// `epsilon_floor` probability.
    pub fn logging(num_items: usize, temperature: f64, epsilon_floor: f64) -> Result<Self> {
        let hp = Hyperparams {
            temperature,
            epsilon_floor,
            ..Hyperparams::default()
        };
        let mut model = fit(Variant::PersonalizedPopularity, &[], num_items, &hp)?;
        model.name = "logging".to_string();
        Ok(model)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    fn check_context(&self, context: &[u32]) -> Result<()> {
        if context.len() != self.num_items {
            return Err(Error::Domain(format!(
                "context has length {}, expected {}",
                context.len(),
                self.num_items
            )));
        }
        Ok(())
    }

    pub fn score(&self, context: &[u32]) -> Result<Vec<f64>> {
        self.check_context(context)?;
        Ok(self.score_unchecked(context))
    }

    fn score_unchecked(&self, context: &[u32]) -> Vec<f64> {
        let p = self.num_items;
        match &self.params {
            Params::Random { .. } => vec![0.0; p],
            Params::Popularity { counts } => counts.clone(),
            Params::PersonalizedPopularity => context.iter().map(|&c| c as f64).collect(),
            Params::Svd {
                rank, item_factors, ..
            } => {
                let rank = *rank;
                let mut latent = vec![0.0; rank];
                for (i, &c) in context.iter().enumerate() {
                    if c > 0 {
                        let f = &item_factors[i * rank..(i + 1) * rank];
                        for (l, v) in latent.iter_mut().zip(f) {
                            *l += c as f64 * v;
                        }
                    }
                }
                (0..p)
                    .map(|i| {
                        item_factors[i * rank..(i + 1) * rank]
                            .iter()
                            .zip(&latent)
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect()
            }
            Params::ItemKnn { neighbors } => {
                let mut scores = vec![0.0; p];
                for (j, &c) in context.iter().enumerate() {
                    if c > 0 {
                        for &(i, s) in &neighbors[j] {
                            scores[i] += c as f64 * s;
                        }
                    }
                }
                scores
            }
            Params::UserKnn { k, rows, norms } => {
                let mut scores = vec![0.0; p];
                let ctx_norm = context
                    .iter()
                    .map(|&c| (c as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if ctx_norm == 0.0 {
                    return scores;
                }
                let mut sims: Vec<(usize, f64)> = rows
                    .iter()
                    .zip(norms)
                    .enumerate()
                    .filter(|(_, (_, &n))| n > 0.0)
                    .map(|(u, (row, &n))| {
                        let d: f64 = row.iter().map(|&(i, c)| c as f64 * context[i] as f64).sum();
                        (u, d / (n * ctx_norm))
                    })
                    .filter(|&(_, s)| s > 0.0)
                    .collect();
                sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                sims.truncate(*k);
                for (u, s) in sims {
                    for &(i, c) in &rows[u] {
                        scores[i] += s * c as f64;
                    }
                }
                scores
            }
        }
    }

    pub fn action_distribution(&self, context: &[u32]) -> Result<Vec<f64>> {
        self.check_context(context)?;
        Ok(self.distribution_unchecked(context))
    }

    fn distribution_unchecked(&self, context: &[u32]) -> Vec<f64> {
        let p = self.num_items;
        if let Params::Random { .. } = self.params {
            return vec![1.0 / p as f64; p];
        }
        let scores = self.score_unchecked(context);
        let mut dist = softmax(&scores, self.temperature);
        if self.epsilon_floor > 0.0 {
            let keep = 1.0 - self.epsilon_floor * p as f64;
            for x in &mut dist {
                *x = keep * *x + self.epsilon_floor;
            }
        }
        dist
    }

    /// Top-`n` items by descending score, ties by ascending id. The random
    /// policy returns a prefix of a shuffle keyed by its seed and the context.
    pub fn rank(&self, context: &[u32], n: usize) -> Result<Vec<usize>> {
        self.check_context(context)?;
        if n == 0 || n > self.num_items {
            return Err(Error::Domain(format!(
                "rank length {n} outside [1, {}]",
                self.num_items
            )));
        }
        Ok(self.rank_unchecked(context, n))
    }

    fn rank_unchecked(&self, context: &[u32], n: usize) -> Vec<usize> {
        let mut items: Vec<usize> = (0..self.num_items).collect();
        if let Params::Random { seed } = self.params {
            let mut rng = rng::stream(seed, &[context_key(context)]);
            items.shuffle(&mut rng);
        } else {
            let scores = self.score_unchecked(context);
            let by_score = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
            if n < items.len() {
                items.select_nth_unstable_by(n - 1, by_score);
                items.truncate(n);
            }
            items.sort_by(by_score);
        }
        items.truncate(n);
        items
    }

    pub fn to_json(&self) -> String {
        let stored = StoredModel {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        serde_json::to_string(&stored).expect("policy model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let stored: StoredModel = serde_json::from_str(text)
            .map_err(|e| Error::Data(format!("policy model blob: {e}")))?;
        if stored.format != MODEL_FORMAT || stored.version != MODEL_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported policy model format {} v{}",
                stored.format, stored.version
            )));
        }
        Ok(stored.model)
    }
}

pub const MODEL_FORMAT: &str = "banditeval-policy";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredModel {
    format: String,
    version: u32,
    model: PolicyModel,
}

impl Policy for PolicyModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_items(&self) -> usize {
        self.num_items
    }

    fn action_distribution(&self, context: &[u32]) -> Vec<f64> {
        assert_eq!(context.len(), self.num_items, "context length");
        self.distribution_unchecked(context)
    }

    fn top_action(&self, context: &[u32]) -> usize {
        assert_eq!(context.len(), self.num_items, "context length");
        self.rank_unchecked(context, 1)[0]
    }
}

/// A context-free policy with a fixed action distribution. Its deterministic
/// action is the most probable item (lowest id on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPolicy {
    name: String,
    probs: Vec<f64>,
}

impl FixedPolicy {
    pub fn new(name: impl Into<String>, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Domain("probabilities must be non-negative".into()));
        }
        let total = crate::numeric::compensated_sum(probs.iter().copied());
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self {
            name: name.into(),
            probs,
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

impl Policy for FixedPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_items(&self) -> usize {
        self.probs.len()
    }

    fn action_distribution(&self, _context: &[u32]) -> Vec<f64> {
        self.probs.clone()
    }

    fn top_action(&self, _context: &[u32]) -> usize {
        crate::numeric::argmax(&self.probs)
    }
}

#[cfg(test)]
mod tests;
