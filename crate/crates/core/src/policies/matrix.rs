use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sim_env::OrganicEvent;

/// Organic view counts, one row per training user (in ascending user id order).
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    user_ids: Vec<u64>,
    /// Sparse rows: `(item, count)` sorted by item.
    rows: Vec<Vec<(usize, u32)>>,
    num_items: usize,
}

impl InteractionMatrix {
    pub fn from_events(events: &[OrganicEvent], num_items: usize) -> Result<Self> {
        let mut by_user: BTreeMap<u64, BTreeMap<usize, u32>> = BTreeMap::new();
        for ev in events {
            if ev.item_id >= num_items {
                return Err(Error::Domain(format!(
                    "organic event item {} outside [0, {num_items})",
                    ev.item_id
                )));
            }
            *by_user
                .entry(ev.user_id)
                .or_default()
                .entry(ev.item_id)
                .or_default() += 1;
        }
        let (user_ids, rows) = by_user
            .into_iter()
            .map(|(u, items)| (u, items.into_iter().collect()))
            .unzip();
        Ok(Self {
            user_ids,
            rows,
            num_items,
        })
    }

    pub fn num_users(&self) -> usize {
        self.rows.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn user_ids(&self) -> &[u64] {
        &self.user_ids
    }

    pub fn row(&self, r: usize) -> &[(usize, u32)] {
        &self.rows[r]
    }

    pub fn rows(&self) -> &[Vec<(usize, u32)>] {
        &self.rows
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.num_users(), self.num_items);
        for (r, row) in self.rows.iter().enumerate() {
            for &(i, c) in row {
                m[(r, i)] = c as f64;
            }
        }
        m
    }

    pub fn item_counts(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.num_items];
        for row in &self.rows {
            for &(i, c) in row {
                counts[i] += c as f64;
            }
        }
        counts
    }

    /// Dense `P × P` cosine similarity between item columns. Columns without
    /// any views have similarity 0 to everything, themselves included.
    pub fn item_cosine(&self) -> Vec<f64> {
        let p = self.num_items;
        let mut gram = vec![0.0; p * p];
        for row in &self.rows {
            for &(i, ci) in row {
                for &(j, cj) in row {
                    gram[i * p + j] += ci as f64 * cj as f64;
                }
            }
        }
        let sq: Vec<f64> = (0..p).map(|i| gram[i * p + i]).collect();
        for i in 0..p {
            for j in 0..p {
                let d = (sq[i] * sq[j]).sqrt();
                gram[i * p + j] = if d > 0.0 { gram[i * p + j] / d } else { 0.0 };
            }
        }
        // exact symmetry regardless of rounding in the division
        for i in 0..p {
            for j in (i + 1)..p {
                gram[j * p + i] = gram[i * p + j];
            }
            if sq[i] > 0.0 {
                gram[i * p + i] = 1.0;
            }
        }
        gram
    }
}

pub(crate) fn counts_of(events: &[OrganicEvent], num_items: usize) -> Vec<u32> {
    let mut counts = vec![0u32; num_items];
    for ev in events {
        counts[ev.item_id] += 1;
    }
    counts
}
