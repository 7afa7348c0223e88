use super::*;
use crate::policies::PolicyModel;

fn small_config(num_items: usize, latent_dim: usize) -> EnvConfig {
    EnvConfig {
        num_items,
        latent_dim,
        seed: 1,
        organic_events_mean: 5.0,
        bandit_events_mean: 10.0,
        ..EnvConfig::default()
    }
}

fn logger(num_items: usize) -> PolicyModel {
    PolicyModel::logging(num_items, 1.0, 1.0 / (10.0 * num_items as f64)).unwrap()
}

#[test]
fn catalog_has_one_row_per_item() {
    let env = Environment::new(EnvConfig {
        num_items: 2000,
        latent_dim: 16,
        seed: 1,
        ..EnvConfig::default()
    })
    .unwrap();
    assert_eq!(env.catalog().num_items(), 2000);
    assert_eq!(env.catalog().embedding(1999).len(), 16);
}

#[test]
fn minimal_environment() {
    let env = Environment::new(small_config(2, 1)).unwrap();
    assert_eq!(env.catalog().num_items(), 2);
    assert_eq!(env.catalog().latent_dim(), 1);
}

#[test]
fn catalog_is_reproducible() {
    let a = Environment::new(small_config(20, 4)).unwrap();
    let b = Environment::new(small_config(20, 4)).unwrap();
    assert_eq!(a.catalog(), b.catalog());
    let c = Environment::new(EnvConfig {
        seed: 2,
        ..small_config(20, 4)
    })
    .unwrap();
    assert_ne!(a.catalog(), c.catalog());
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        EnvConfig {
            num_items: 1,
            ..small_config(2, 1)
        },
        EnvConfig {
            latent_dim: 0,
            ..small_config(2, 1)
        },
        EnvConfig {
            organic_events_mean: 0.0,
            ..small_config(2, 1)
        },
        EnvConfig {
            bandit_events_mean: -1.0,
            ..small_config(2, 1)
        },
        EnvConfig {
            user_drift_sigma: -0.1,
            ..small_config(2, 1)
        },
    ];
    for cfg in bad {
        assert!(matches!(Environment::new(cfg), Err(Error::Config(_))));
    }
}

#[test]
fn spawn_user_is_deterministic_per_id() {
    let env = Environment::new(small_config(5, 3)).unwrap();
    let a = env.spawn_user(Population::Train, 0);
    assert_eq!(a, env.spawn_user(Population::Train, 0));
    assert_ne!(a.omega, env.spawn_user(Population::Train, 1).omega);
    assert_ne!(a.omega, env.spawn_user(Population::Test, 0).omega);
    assert_eq!(a.omega.len(), 3);
    assert!(a.omega.iter().all(|w| w.is_finite()));
    assert_eq!(a.step, 0);
}

#[test]
fn zero_drift_only_advances_step() {
    let env = Environment::new(EnvConfig {
        user_drift_sigma: 0.0,
        ..small_config(5, 3)
    })
    .unwrap();
    let mut s = env.spawn_user(Population::Train, 4);
    let before = s.omega.clone();
    let mut r = env.session_rng(Population::Train, 4);
    for expected_step in 1..=3 {
        env.drift(&mut s, &mut r);
        assert_eq!(s.step, expected_step);
    }
    assert_eq!(s.omega, before);
}

#[test]
fn drift_variance_grows_linearly() {
    // independent Gaussian steps: Var(omega_n - omega_0) = n sigma^2
    let sigma = 0.3;
    let steps = 5;
    let env = Environment::new(EnvConfig {
        user_drift_sigma: sigma,
        ..small_config(3, 2)
    })
    .unwrap();
    let reps = 10_000;
    let mut diffs = Vec::with_capacity(reps);
    for u in 0..reps as u64 {
        let mut s = env.spawn_user(Population::Train, u);
        let start = s.omega[0];
        let mut r = env.session_rng(Population::Train, u);
        for _ in 0..steps {
            env.drift(&mut s, &mut r);
        }
        diffs.push(s.omega[0] - start);
    }
    let (_, sd) = crate::numeric::mean_std(&diffs);
    let expected = steps as f64 * sigma * sigma;
    assert!(((sd * sd) - expected).abs() / expected < 0.05, "{} vs {expected}", sd * sd);
}

#[test]
fn organic_distribution_of_zero_state_is_uniform() {
    let env = Environment::new(small_config(8, 3)).unwrap();
    let s = UserState {
        user_id: 0,
        omega: vec![0.0; 3],
        step: 0,
    };
    for p in env.organic_distribution(&s) {
        assert!((p - 0.125).abs() < 1e-15);
    }
}

#[test]
fn organic_distribution_closed_form() {
    let env = Environment::with_embeddings(small_config(2, 1), vec![3f64.ln(), 0.0]).unwrap();
    let s = UserState {
        user_id: 0,
        omega: vec![1.0],
        step: 0,
    };
    let p = env.organic_distribution(&s);
    assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
}

#[test]
fn organic_distribution_is_normalized() {
    let env = Environment::new(small_config(300, 16)).unwrap();
    for u in 0..50 {
        let p = env.organic_distribution(&env.spawn_user(Population::Test, u));
        assert!((compensated_sum(p.iter().copied()) - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x > 0.0));
    }
}

#[test]
fn click_probability_limits() {
    let flat = Environment::new(EnvConfig {
        click_scale: 0.0,
        click_offset: 0.0,
        ..small_config(4, 2)
    })
    .unwrap();
    let s = flat.spawn_user(Population::Train, 0);
    for a in 0..4 {
        assert_eq!(flat.click_probability(&s, a).unwrap(), 0.5);
    }
    let cold = Environment::new(EnvConfig {
        click_scale: 0.0,
        click_offset: -20.0,
        ..small_config(4, 2)
    })
    .unwrap();
    assert!(cold.click_probability(&s, 1).unwrap() < 1e-8);
    assert!(matches!(flat.click_probability(&s, 4), Err(Error::Domain(_))));
}

#[test]
fn calibrated_offset_hits_target_rate() {
    let cfg = EnvConfig {
        seed: 3,
        num_items: 100,
        ..EnvConfig::default()
    };
    let offset = calibrate_click_offset(&cfg, 0.01, 10_000, 99).unwrap();
    let env = Environment::new(EnvConfig {
        click_offset: offset,
        ..cfg
    })
    .unwrap();
    // fresh draws, independent of the calibration sample
    let mut r = rng::stream(12345, &[]);
    let mut total = KahanSum::new();
    for u in 0..10_000u64 {
        let s = env.spawn_user(Population::Custom(77), u);
        let a = r.random_range(0..env.num_items());
        total.add(env.click_probability(&s, a).unwrap());
    }
    let mean = total.value() / 10_000.0;
    assert!((0.005..=0.03).contains(&mean), "mean click probability {mean}");
}

#[test]
fn calibration_rejects_bad_targets() {
    let env = Environment::new(small_config(4, 2)).unwrap();
    let cal = ClickCalibration::new(&env, 100, 0);
    assert!(cal.solve_offset(0.0).is_err());
    assert!(cal.solve_offset(1.0).is_err());
}

#[test]
fn zero_users_gives_empty_dataset() {
    let env = Environment::new(small_config(6, 2)).unwrap();
    let d = env.generate_dataset(0, &logger(6), Phase::Train).unwrap();
    assert!(d.organic.is_empty() && d.bandit.is_empty());
}

#[test]
fn logged_propensity_is_exact_logging_probability() {
    let env = Environment::new(small_config(12, 3)).unwrap();
    let pol = logger(12);
    let d = env.generate_dataset(40, &pol, Phase::Test).unwrap();
    assert!(!d.bandit.is_empty());
    for log in &d.bandit {
        let dist = pol.action_distribution(&log.context_views).unwrap();
        assert_eq!(log.propensity, dist[log.action]);
        assert!(log.propensity > 0.0 && log.propensity < 1.0);
    }
}

#[test]
fn context_is_the_users_organic_counts() {
    let env = Environment::new(small_config(12, 3)).unwrap();
    let d = env.generate_dataset(30, &logger(12), Phase::Train).unwrap();
    for log in &d.bandit {
        let mut counts = [0u32; 12];
        for e in d.organic.iter().filter(|e| e.user_id == log.user_id) {
            counts[e.item_id] += 1;
        }
        assert_eq!(&counts[..], &log.context_views[..]);
    }
}

#[test]
fn sequences_are_strictly_increasing_per_user() {
    let env = Environment::new(small_config(12, 3)).unwrap();
    let d = env.generate_dataset(30, &logger(12), Phase::Train).unwrap();
    let mut last: std::collections::HashMap<u64, u64> = Default::default();
    for (user, seq) in d
        .organic
        .iter()
        .map(|e| (e.user_id, e.seq_index))
        .chain(d.bandit.iter().map(|l| (l.user_id, l.seq_index)))
    {
        if let Some(prev) = last.insert(user, seq) {
            assert!(seq > prev);
        }
    }
    assert!(d.organic.iter().all(|e| e.item_id < 12));
    assert!(d.bandit.iter().all(|l| l.action < 12));
}

struct Unsupported;

impl Policy for Unsupported {
    fn name(&self) -> &str {
        "unsupported"
    }
    fn num_items(&self) -> usize {
        4
    }
    fn action_distribution(&self, _: &[u32]) -> Vec<f64> {
        vec![0.0, 0.5, 0.25, 0.25]
    }
    fn top_action(&self, _: &[u32]) -> usize {
        1
    }
}

#[test]
fn zero_probability_logger_is_a_support_violation() {
    let env = Environment::new(small_config(4, 2)).unwrap();
    let err = env.generate_dataset(3, &Unsupported, Phase::Train).unwrap_err();
    assert!(matches!(err, Error::Support { action: 0, .. }));
}

#[test]
fn generation_is_reproducible_and_leaves_catalog_untouched() {
    let env = Environment::new(small_config(10, 3)).unwrap();
    let before = env.catalog().fingerprint();
    let a = env.generate_dataset(25, &logger(10), Phase::Train).unwrap();
    let b = env.generate_dataset(25, &logger(10), Phase::Train).unwrap();
    assert_eq!(a, b);
    assert_eq!(env.catalog().fingerprint(), before);
    let t = env.generate_dataset(25, &logger(10), Phase::Test).unwrap();
    assert_ne!(a.organic, t.organic);
}

#[test]
fn generation_does_not_depend_on_thread_count() {
    let env = Environment::new(small_config(10, 3)).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| env.generate_dataset(60, &logger(10), Phase::Test).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn empirical_ctr_matches_click_probabilities() {
    let env = Environment::new(EnvConfig {
        click_scale: 0.5,
        click_offset: -2.0,
        ..small_config(20, 4)
    })
    .unwrap();
    let pol = logger(20);
    let mut clicks = 0usize;
    let mut probs = Vec::new();
    for u in 0..400u64 {
        let s = env.simulate_session(Population::Test, u, &pol).unwrap();
        clicks += s.bandit.iter().filter(|l| l.click).count();
        probs.extend(s.click_probabilities);
    }
    let n = probs.len() as f64;
    let expected = mean_probability(&probs);
    let var: f64 = probs.iter().map(|q| q * (1.0 - q)).sum::<f64>() / (n * n);
    let ctr = clicks as f64 / n;
    assert!((ctr - expected).abs() < 3.0 * var.sqrt(), "{ctr} vs {expected}");
}

#[test]
fn user_without_views_gets_uniform_logging() {
    let pol = logger(5);
    let dist = pol.action_distribution(&[0; 5]).unwrap();
    assert!(dist.iter().all(|&p| (p - 0.2).abs() < 1e-15));
}

#[test]
fn dataset_files_round_trip() {
    let cfg = small_config(7, 2);
    let env = Environment::new(cfg.clone()).unwrap();
    let d = env.generate_dataset(15, &logger(7), Phase::Test).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let meta = write_dataset(dir.path(), &d, &cfg).unwrap();
    assert_eq!(meta.bandit_count, d.bandit.len());
    let (back, meta2) = read_dataset(dir.path()).unwrap();
    assert_eq!(back, d);
    assert_eq!(meta, meta2);
}

#[test]
fn malformed_line_reports_its_number() {
    let cfg = small_config(7, 2);
    let env = Environment::new(cfg.clone()).unwrap();
    let d = env.generate_dataset(3, &logger(7), Phase::Train).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &d, &cfg).unwrap();
    let path = dir.path().join(io::ORGANIC_FILE);
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{not json}\n");
    let line = text.lines().count();
    std::fs::write(&path, text).unwrap();
    match read_dataset(dir.path()) {
        Err(Error::Format { line: l, .. }) => assert_eq!(l, line),
        other => panic!("expected format error, got {other:?}"),
    }
}
