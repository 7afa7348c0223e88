//! Drifting-user recommendation simulator.
//!
//! Items carry fixed latent embeddings; each user carries a latent interest
//! vector that performs a Gaussian random walk. Organic views are sampled from
//! a softmax over item/user affinities and clicks on a recommended item from a
//! sigmoid of the same affinity. A user session is one organic block followed
//! by one bandit block, where a logging policy picks the shown item given the
//! user's organic view counts.

mod io;

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, dot, sigmoid, softmax, KahanSum};
use crate::policies::Policy;
use crate::rng::{self, label, StreamRng};

pub use io::{read_dataset, write_dataset, DatasetMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub num_items: usize,
    pub latent_dim: usize,
    pub user_drift_sigma: f64,
    pub click_scale: f64,
    pub click_offset: f64,
    pub organic_events_mean: f64,
    pub bandit_events_mean: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            num_items: 2000,
            latent_dim: 16,
            user_drift_sigma: 0.05,
            click_scale: 0.25,
            click_offset: -5.0,
            organic_events_mean: 20.0,
            bandit_events_mean: 80.0,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.num_items < 2 {
            return bad("num_items must be at least 2");
        }
        if self.latent_dim < 1 {
            return bad("latent_dim must be at least 1");
        }
        if !(self.user_drift_sigma >= 0.0 && self.user_drift_sigma.is_finite()) {
            return bad("user_drift_sigma must be a non-negative finite number");
        }
        if !self.click_scale.is_finite() || !self.click_offset.is_finite() {
            return bad("click_scale and click_offset must be finite");
        }
        if !(self.organic_events_mean > 0.0 && self.organic_events_mean.is_finite()) {
            return bad("organic_events_mean must be positive");
        }
        if !(self.bandit_events_mean > 0.0 && self.bandit_events_mean.is_finite()) {
            return bad("bandit_events_mean must be positive");
        }
        Ok(())
    }
}

/// Item embeddings, `num_items × latent_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemCatalog {
    embeddings: Vec<f64>,
    num_items: usize,
    latent_dim: usize,
}

impl ItemCatalog {
    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn embedding(&self, item: usize) -> &[f64] {
        &self.embeddings[item * self.latent_dim..(item + 1) * self.latent_dim]
    }

    /// FNV-1a over the raw bits of every embedding entry.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for x in &self.embeddings {
            for b in x.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    pub user_id: u64,
    pub omega: Vec<f64>,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrganicEvent {
    pub user_id: u64,
    pub seq_index: u64,
    pub item_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditLog {
    pub user_id: u64,
    pub seq_index: u64,
    /// Organic view counts of the user at log time. Logs of one session share
    /// the same allocation.
    pub context_views: Arc<[u32]>,
    pub action: usize,
    pub propensity: f64,
    pub click: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
}

impl Phase {
    pub fn population(self) -> Population {
        match self {
            Phase::Train => Population::Train,
            Phase::Test => Population::Test,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Test => "test",
        }
    }
}

/// Which family of users a user id refers to. Users with equal ids in
/// different populations are unrelated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Population {
    Train,
    Test,
    Custom(u64),
}

impl Population {
    fn tag(self) -> u64 {
        match self {
            Population::Train => 1,
            Population::Test => 2,
            Population::Custom(t) => rng::derive_seed(3, &[t]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub organic: Vec<OrganicEvent>,
    pub bandit: Vec<BanditLog>,
    pub num_items: usize,
    pub seed: u64,
    pub phase: Phase,
    pub num_users: usize,
}

impl Dataset {
    pub fn empty(num_items: usize, seed: u64, phase: Phase) -> Self {
        Self {
            organic: Vec::new(),
            bandit: Vec::new(),
            num_items,
            seed,
            phase,
            num_users: 0,
        }
    }

    pub fn clicks(&self) -> usize {
        self.bandit.iter().filter(|l| l.click).count()
    }

    pub fn empirical_ctr(&self) -> f64 {
        if self.bandit.is_empty() {
            return 0.0;
        }
        self.clicks() as f64 / self.bandit.len() as f64
    }
}

/// One user's organic block and bandit block together with the click
/// probabilities that generated the bandit clicks.
#[derive(Debug, Clone)]
pub struct UserSession {
    pub organic: Vec<OrganicEvent>,
    pub bandit: Vec<BanditLog>,
    pub click_probabilities: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    catalog: ItemCatalog,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(config.seed, &[label::ITEMS]);
        let embeddings = (0..config.num_items * config.latent_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let catalog = ItemCatalog {
            embeddings,
            num_items: config.num_items,
            latent_dim: config.latent_dim,
        };
        Ok(Self { config, catalog })
    }

    /// Environment over a given row-major `num_items × latent_dim` catalog.
    pub fn with_embeddings(config: EnvConfig, embeddings: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if embeddings.len() != config.num_items * config.latent_dim {
            return Err(Error::Config(format!(
                "catalog has {} entries, expected {} × {}",
                embeddings.len(),
                config.num_items,
                config.latent_dim
            )));
        }
        if embeddings.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("catalog entries must be finite".into()));
        }
        let catalog = ItemCatalog {
            embeddings,
            num_items: config.num_items,
            latent_dim: config.latent_dim,
        };
        Ok(Self { config, catalog })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn catalog(&self) -> &ItemCatalog {
        &self.catalog
    }

    pub fn num_items(&self) -> usize {
        self.config.num_items
    }

    pub fn spawn_user(&self, population: Population, user_id: u64) -> UserState {
        let mut rng = self.user_stream(population, user_id, 0);
        let omega = (0..self.config.latent_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        UserState {
            user_id,
            omega,
            step: 0,
        }
    }

    /// Random stream driving a user's session after the initial state draw.
    pub fn session_rng(&self, population: Population, user_id: u64) -> StreamRng {
        self.user_stream(population, user_id, 1)
    }

    fn user_stream(&self, population: Population, user_id: u64, part: u64) -> StreamRng {
        rng::stream(
            self.config.seed,
            &[label::USERS, population.tag(), user_id, part],
        )
    }

    pub fn drift<R: Rng + ?Sized>(&self, state: &mut UserState, rng: &mut R) {
        let sigma = self.config.user_drift_sigma;
        if sigma > 0.0 {
            for w in &mut state.omega {
                *w += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        state.step += 1;
    }

    pub fn affinities(&self, state: &UserState) -> Vec<f64> {
        (0..self.config.num_items)
            .map(|i| dot(self.catalog.embedding(i), &state.omega))
            .collect()
    }

    pub fn organic_distribution(&self, state: &UserState) -> Vec<f64> {
        softmax(&self.affinities(state), 1.0)
    }

    pub fn click_probability(&self, state: &UserState, action: usize) -> Result<f64> {
        if action >= self.config.num_items {
            return Err(Error::Domain(format!(
                "action {action} outside [0, {})",
                self.config.num_items
            )));
        }
        Ok(self.click_probability_unchecked(state, action))
    }

    fn click_probability_unchecked(&self, state: &UserState, action: usize) -> f64 {
        let affinity = dot(self.catalog.embedding(action), &state.omega);
        sigmoid(self.config.click_scale * affinity + self.config.click_offset)
    }

    fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
        let law = Poisson::new(mean).expect("validated positive mean");
        law.sample(rng) as usize
    }

    /// Samples the organic block of a fresh user; the state is drifted after
    /// every view.
    pub fn organic_block<R: Rng + ?Sized>(
        &self,
        state: &mut UserState,
        rng: &mut R,
    ) -> (Vec<OrganicEvent>, Vec<u32>) {
        let n = Self::poisson_count(self.config.organic_events_mean, rng);
        let mut counts = vec![0u32; self.config.num_items];
        let mut events = Vec::with_capacity(n);
        for seq_index in 0..n as u64 {
            let dist = self.organic_distribution(state);
            let item = sample_categorical(&dist, rng);
            counts[item] += 1;
            events.push(OrganicEvent {
                user_id: state.user_id,
                seq_index,
                item_id: item,
            });
            self.drift(state, rng);
        }
        (events, counts)
    }

    pub fn bandit_block_len<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        Self::poisson_count(self.config.bandit_events_mean, rng)
    }

    /// Simulates one user's full session under `logging`.
    pub fn simulate_session(
        &self,
        population: Population,
        user_id: u64,
        logging: &dyn Policy,
    ) -> Result<UserSession> {
        let mut state = self.spawn_user(population, user_id);
        let mut rng = self.session_rng(population, user_id);
        let (organic, counts) = self.organic_block(&mut state, &mut rng);
        let probs = logging.action_distribution(&counts);
        check_support(&probs, self.config.num_items)?;
        let context: Arc<[u32]> = counts.into();

        let n = self.bandit_block_len(&mut rng);
        let mut bandit = Vec::with_capacity(n);
        let mut click_probabilities = Vec::with_capacity(n);
        let first = organic.len() as u64;
        for j in 0..n as u64 {
            let action = sample_categorical(&probs, &mut rng);
            let q = self.click_probability_unchecked(&state, action);
            let click = rng.random::<f64>() < q;
            bandit.push(BanditLog {
                user_id,
                seq_index: first + j,
                context_views: Arc::clone(&context),
                action,
                propensity: probs[action],
                click,
            });
            click_probabilities.push(q);
            self.drift(&mut state, &mut rng);
        }
        Ok(UserSession {
            organic,
            bandit,
            click_probabilities,
        })
    }

    /// Generates `num_users` sessions of the given phase. Users are simulated
    /// in parallel and merged in user id order.
    pub fn generate_dataset(
        &self,
        num_users: usize,
        logging: &dyn Policy,
        phase: Phase,
    ) -> Result<Dataset> {
        if logging.num_items() != self.config.num_items {
            return Err(Error::Domain(format!(
                "logging policy covers {} items, environment has {}",
                logging.num_items(),
                self.config.num_items
            )));
        }
        let sessions: Vec<UserSession> = (0..num_users as u64)
            .into_par_iter()
            .map(|u| self.simulate_session(phase.population(), u, logging))
            .collect::<Result<_>>()?;
        let mut dataset = Dataset::empty(self.config.num_items, self.config.seed, phase);
        dataset.num_users = num_users;
        for s in sessions {
            dataset.organic.extend(s.organic);
            dataset.bandit.extend(s.bandit);
        }
        Ok(dataset)
    }
}

fn check_support(probs: &[f64], num_items: usize) -> Result<()> {
    debug_assert_eq!(probs.len(), num_items);
    for (action, &probability) in probs.iter().enumerate() {
        if !(probability > 0.0 && probability < 1.0) {
            return Err(Error::Support {
                action,
                probability,
            });
        }
    }
    Ok(())
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u beyond the accumulated mass; fall back to the last
    // item with positive probability
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Fixed Monte-Carlo sample of (user state, uniformly drawn action) affinities
/// used to calibrate the click offset.
pub struct ClickCalibration {
    scaled_affinities: Vec<f64>,
}

impl ClickCalibration {
    pub fn new(env: &Environment, draws: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[label::CALIBRATION, env.config.seed]);
        let k = env.config.latent_dim;
        let mut omega = vec![0.0; k];
        let scaled_affinities = (0..draws)
            .map(|_| {
                for w in omega.iter_mut() {
                    *w = rng.sample(StandardNormal);
                }
                let action = rng.random_range(0..env.config.num_items);
                env.config.click_scale * dot(env.catalog.embedding(action), &omega)
            })
            .collect();
        Self { scaled_affinities }
    }

    pub fn mean_click_probability(&self, offset: f64) -> f64 {
        compensated_sum(self.scaled_affinities.iter().map(|a| sigmoid(a + offset)))
            / self.scaled_affinities.len() as f64
    }

    /// Bisection for the offset whose mean click probability equals `target`.
    pub fn solve_offset(&self, target: f64) -> Result<f64> {
        if !(target > 0.0 && target < 1.0) {
            return Err(Error::Config(format!(
                "target click rate {target} outside (0, 1)"
            )));
        }
        if self.scaled_affinities.is_empty() {
            return Err(Error::Config("calibration needs at least one draw".into()));
        }
        let (mut lo, mut hi) = (-60.0_f64, 60.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.mean_click_probability(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Runs the click-offset calibration for `config` and returns the offset that
/// gives `target_ctr` under uniformly random recommendations.
pub fn calibrate_click_offset(
    config: &EnvConfig,
    target_ctr: f64,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let env = Environment::new(config.clone())?;
    ClickCalibration::new(&env, draws, seed).solve_offset(target_ctr)
}

/// Mean of `click_probability` over logged (state, action) pairs, compensated.
pub fn mean_probability(ps: &[f64]) -> f64 {
    let mut s = KahanSum::new();
    for &p in ps {
        s.add(p);
    }
    if ps.is_empty() {
        0.0
    } else {
        s.value() / ps.len() as f64
    }
}

#[cfg(test)]
mod tests;
