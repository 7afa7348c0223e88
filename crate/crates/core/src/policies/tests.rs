use proptest::prelude::*;

use super::*;
use crate::numeric::{argmax, compensated_sum};

fn ev(user_id: u64, item_id: usize) -> OrganicEvent {
    OrganicEvent {
        user_id,
        seq_index: 0,
        item_id,
    }
}

fn events_from_rows(rows: &[&[u32]]) -> Vec<OrganicEvent> {
    let mut out = Vec::new();
    for (u, row) in rows.iter().enumerate() {
        for (i, &c) in row.iter().enumerate() {
            for _ in 0..c {
                out.push(ev(u as u64, i));
            }
        }
    }
    out
}

fn toy_rows() -> Vec<&'static [u32]> {
    vec![
        &[3, 0, 1, 0, 0],
        &[0, 2, 0, 1, 0],
        &[1, 1, 0, 0, 4],
        &[0, 0, 2, 2, 0],
        &[5, 0, 0, 1, 1],
    ]
}

fn fitted(variant: Variant) -> PolicyModel {
    fit(variant, &events_from_rows(&toy_rows()), 5, &Hyperparams::default()).unwrap()
}

#[test]
fn popularity_ranks_by_global_count() {
    let events = events_from_rows(&[&[5, 3, 2]]);
    let m = fit(Variant::Popularity, &events, 3, &Hyperparams::default()).unwrap();
    assert_eq!(m.rank(&[0, 0, 0], 3).unwrap(), vec![0, 1, 2]);
}

#[test]
fn popularity_ignores_context() {
    let m = fitted(Variant::Popularity);
    assert_eq!(m.score(&[9; 5]).unwrap(), m.score(&[0; 5]).unwrap());
    assert_eq!(m.score(&[0; 5]).unwrap(), vec![9.0, 3.0, 3.0, 4.0, 5.0]);
}

#[test]
fn popularity_without_data_is_uniform() {
    let m = fit(Variant::Popularity, &[], 4, &Hyperparams::default()).unwrap();
    assert_eq!(m.action_distribution(&[0; 4]).unwrap(), vec![0.25; 4]);
    assert_eq!(m.rank(&[0; 4], 4).unwrap(), vec![0, 1, 2, 3]);
}

#[test]
fn personalized_popularity_follows_context() {
    let m = fit(Variant::PersonalizedPopularity, &[], 3, &Hyperparams::default()).unwrap();
    let s = m.score(&[0, 7, 1]).unwrap();
    assert_eq!(argmax(&s), 1);
    assert_eq!(m.rank(&[0, 7, 1], 1).unwrap(), vec![1]);
}

#[test]
fn models_needing_data_refuse_empty_input() {
    for v in [Variant::Svd, Variant::ItemKnn, Variant::UserKnn] {
        assert!(matches!(
            fit(v, &[], 4, &Hyperparams::default()),
            Err(Error::Fit { .. })
        ));
    }
}

#[test]
fn out_of_range_events_are_rejected() {
    assert!(fit(Variant::Popularity, &[ev(0, 7)], 3, &Hyperparams::default()).is_err());
}

#[test]
fn ties_break_by_ascending_id() {
    // scores [0.1, 0.9, 0.9] realized as popularity counts [1, 9, 9]
    let events = events_from_rows(&[&[1, 9, 9]]);
    let m = fit(Variant::Popularity, &events, 3, &Hyperparams::default()).unwrap();
    assert_eq!(m.rank(&[0; 3], 2).unwrap(), vec![1, 2]);
}

#[test]
fn rank_length_is_validated() {
    let m = fitted(Variant::Popularity);
    assert!(m.rank(&[0; 5], 0).is_err());
    assert!(m.rank(&[0; 5], 6).is_err());
    assert!(m.rank(&[0; 4], 1).is_err());
    assert!(m.score(&[0; 6]).is_err());
}

#[test]
fn full_rank_is_a_permutation() {
    for v in Variant::ALL {
        let m = fitted(v);
        let mut r = m.rank(&[1, 0, 2, 0, 1], 5).unwrap();
        r.sort();
        assert_eq!(r, vec![0, 1, 2, 3, 4], "{v}");
    }
}

#[test]
fn random_policy_is_uniform_and_seeded() {
    let m = fitted(Variant::Random);
    assert_eq!(m.action_distribution(&[0; 5]).unwrap(), vec![0.2; 5]);
    let ctx = [1, 0, 2, 0, 1];
    assert_eq!(m.rank(&ctx, 5).unwrap(), m.rank(&ctx, 5).unwrap());
    let other = fit(
        Variant::Random,
        &[],
        5,
        &Hyperparams {
            seed: 99,
            ..Hyperparams::default()
        },
    )
    .unwrap();
    let differs = (0..20u32).any(|c| other.rank(&[c, 0, 0, 0, 0], 5).unwrap() != m.rank(&[c, 0, 0, 0, 0], 5).unwrap());
    assert!(differs);
}

#[test]
fn random_top_item_is_spread_over_contexts() {
    let m = fit(Variant::Random, &[], 4, &Hyperparams::default()).unwrap();
    let mut seen = [0usize; 4];
    for c in 0..400u32 {
        seen[m.top_action(&[c, 1, 0, 0])] += 1;
    }
    assert!(seen.iter().all(|&s| s > 60), "{seen:?}");
}

#[test]
fn uniform_scores_give_uniform_distribution() {
    let m = fit(Variant::PersonalizedPopularity, &[], 4, &Hyperparams::default()).unwrap();
    assert_eq!(m.action_distribution(&[2; 4]).unwrap(), vec![0.25; 4]);
}

#[test]
fn epsilon_floor_bounds_every_action() {
    let m = PolicyModel::logging(10, 1.0, 0.001).unwrap();
    let d = m.action_distribution(&[40, 0, 0, 0, 0, 0, 0, 0, 0, 3]).unwrap();
    assert!(d.iter().all(|&p| p >= 0.001));
    assert!((compensated_sum(d.iter().copied()) - 1.0).abs() < 1e-12);
}

#[test]
fn epsilon_floor_above_uniform_is_rejected() {
    assert!(PolicyModel::logging(10, 1.0, 0.2).is_err());
    assert!(PolicyModel::logging(10, 0.0, 0.01).is_err());
}

#[test]
fn low_temperature_concentrates_on_argmax() {
    let m = PolicyModel::logging(5, 1e-3, 0.0).unwrap();
    let d = m.action_distribution(&[0, 3, 2, 0, 0]).unwrap();
    assert!(d[1] > 0.99);
}

#[test]
fn svd_rank_one_matrix() {
    let rows: Vec<&[u32]> = vec![&[1, 2, 0, 3], &[2, 4, 0, 6], &[3, 6, 0, 9]];
    let hp = Hyperparams {
        svd_rank: 1,
        ..Hyperparams::default()
    };
    let events = events_from_rows(&rows);
    let matrix = InteractionMatrix::from_events(&events, 4).unwrap();
    let dense = matrix.to_dense();
    let res = svd::truncated_svd(&dense, 1, hp.svd_iterations, hp.svd_tolerance, 5);
    assert!((dense - res.reconstruct()).norm() < 1e-8);

    // folding in a training row reconstructs that row
    let m = fit(Variant::Svd, &events, 4, &hp).unwrap();
    let s = m.score(&[2, 4, 0, 6]).unwrap();
    for (a, b) in s.iter().zip([2.0, 4.0, 0.0, 6.0]) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn svd_full_rank_reconstruction_and_ordering() {
    let events = events_from_rows(&toy_rows());
    let dense = InteractionMatrix::from_events(&events, 5).unwrap().to_dense();
    let res = svd::truncated_svd(&dense, 5, 50, 1e-9, 1);
    assert!((&dense - res.reconstruct()).norm() / dense.norm() < 1e-6);
    assert!(res.singular_values.windows(2).all(|w| w[0] >= w[1]));
    assert!(res.singular_values.iter().all(|&s| s >= 0.0));
}

#[test]
fn item_cosine_extremes_and_symmetry() {
    // items 0 and 1 identical columns, item 2 orthogonal to both, item 3 unseen
    let events = events_from_rows(&[&[1, 1, 0, 0], &[2, 2, 0, 0], &[0, 0, 3, 0]]);
    let m = InteractionMatrix::from_events(&events, 4).unwrap();
    let sims = m.item_cosine();
    let at = |i: usize, j: usize| sims[i * 4 + j];
    assert_eq!(at(0, 1), 1.0);
    assert_eq!(at(0, 2), 0.0);
    assert_eq!(at(2, 2), 1.0);
    assert_eq!(at(3, 3), 0.0);

    let m = InteractionMatrix::from_events(&events_from_rows(&toy_rows()), 5).unwrap();
    let sims = m.item_cosine();
    for i in 0..5 {
        assert_eq!(sims[i * 5 + i], 1.0);
        for j in 0..5 {
            assert!((sims[i * 5 + j] - sims[j * 5 + i]).abs() <= 1e-12);
        }
    }
}

#[test]
fn item_knn_scores_neighbors_of_viewed_items() {
    let events = events_from_rows(&[&[1, 1, 0, 0], &[2, 2, 0, 0], &[0, 0, 3, 1]]);
    let m = fit(Variant::ItemKnn, &events, 4, &Hyperparams::default()).unwrap();
    let s = m.score(&[1, 0, 0, 0]).unwrap();
    assert_eq!(argmax(&s), 1);
    assert_eq!(s[2], 0.0);
}

/// Brute force: cosine against every training row, keep the single best.
fn nearest_row(rows: &[&[u32]], ctx: &[u32]) -> Vec<f64> {
    let norm = |v: &[u32]| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let mut best = (f64::NEG_INFINITY, 0);
    for (u, row) in rows.iter().enumerate() {
        let d: f64 = row.iter().zip(ctx).map(|(&a, &b)| a as f64 * b as f64).sum();
        let s = d / (norm(row) * norm(ctx));
        if s > best.0 {
            best = (s, u);
        }
    }
    rows[best.1].iter().map(|&x| x as f64 * best.0).collect()
}

#[test]
fn user_knn_with_one_neighbor_returns_that_row() {
    let rows = toy_rows();
    let hp = Hyperparams {
        knn_k: 1,
        ..Hyperparams::default()
    };
    let m = fit(Variant::UserKnn, &events_from_rows(&rows), 5, &hp).unwrap();
    for (u, row) in rows.iter().enumerate() {
        let s = m.score(row).unwrap();
        let oracle = nearest_row(&rows, row);
        for i in 0..5 {
            assert!((s[i] - oracle[i]).abs() < 1e-12, "user {u}");
            assert!((s[i] - row[i] as f64).abs() < 1e-12, "user {u}");
        }
    }
}

#[test]
fn user_knn_does_not_absorb_query_contexts() {
    let m = fitted(Variant::UserKnn);
    let before = m.clone();
    let _ = m.score(&[0, 0, 9, 9, 9]).unwrap();
    assert_eq!(m, before);
}

#[test]
fn model_json_round_trip_is_bit_stable() {
    let ctx = [2, 0, 1, 3, 0];
    for v in Variant::ALL {
        let m = fitted(v);
        let back = PolicyModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let a: Vec<u64> = m.score(&ctx).unwrap().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = back.score(&ctx).unwrap().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b, "{v}");
    }
}

#[test]
fn model_json_version_is_checked() {
    let text = fitted(Variant::Popularity).to_json().replace("\"version\":1", "\"version\":9");
    assert!(PolicyModel::from_json(&text).is_err());
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
    }
    assert!("nope".parse::<Variant>().is_err());
}

fn context_strategy() -> impl Strategy<Value = Vec<u32>> {
    proptest::collection::vec(0u32..6, 5)
}

proptest! {
    #[test]
    fn distributions_are_normalized(ctx in context_strategy(), floor in 0.0f64..0.2) {
        for v in Variant::ALL {
            let hp = Hyperparams { epsilon_floor: floor, ..Hyperparams::default() };
            let m = fit(v, &events_from_rows(&toy_rows()), 5, &hp).unwrap();
            let d = m.action_distribution(&ctx).unwrap();
            prop_assert_eq!(d.len(), 5);
            prop_assert!((compensated_sum(d.iter().copied()) - 1.0).abs() < 1e-12);
            if floor > 0.0 {
                prop_assert!(d.iter().all(|&p| p > 0.0 && p >= floor * (1.0 - 1e-12)));
            }
        }
    }

    #[test]
    fn rank_is_a_duplicate_free_prefix(ctx in context_strategy(), n in 1usize..=5) {
        for v in Variant::ALL {
            let r = fitted(v).rank(&ctx, n).unwrap();
            prop_assert_eq!(r.len(), n);
            let mut s = r.clone();
            s.sort();
            s.dedup();
            prop_assert_eq!(s.len(), n);
            prop_assert!(r.iter().all(|&i| i < 5));
        }
    }

    #[test]
    fn top_rank_is_distribution_argmax(ctx in context_strategy()) {
        for v in Variant::ALL.into_iter().filter(|&v| v != Variant::Random) {
            let m = fitted(v);
            let s = m.score(&ctx).unwrap();
            let top = argmax(&s);
            if s.iter().filter(|&&x| x == s[top]).count() > 1 {
                continue;
            }
            let d = m.action_distribution(&ctx).unwrap();
            prop_assert_eq!(m.rank(&ctx, 1).unwrap()[0], argmax(&d));
            prop_assert_eq!(m.rank(&ctx, 1).unwrap()[0], top);
        }
    }

    #[test]
    fn floor_mixing_keeps_argmax(ctx in context_strategy()) {
        let hp = Hyperparams { epsilon_floor: 0.1, ..Hyperparams::default() };
        let m = fit(Variant::ItemKnn, &events_from_rows(&toy_rows()), 5, &hp).unwrap();
        let s = m.score(&ctx).unwrap();
        let top = argmax(&s);
        prop_assume!(s.iter().filter(|&&x| x == s[top]).count() == 1);
        prop_assert_eq!(argmax(&m.action_distribution(&ctx).unwrap()), top);
    }
}
