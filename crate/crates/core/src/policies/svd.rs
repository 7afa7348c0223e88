//! Truncated SVD by seeded block power iteration.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::{self, label};

#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// `rows × rank`
    pub u: DMatrix<f64>,
    /// Non-increasing, non-negative.
    pub singular_values: Vec<f64>,
    /// `cols × rank`
    pub v: DMatrix<f64>,
    pub iterations: usize,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Rank-`rank` SVD of `a`. The subspace iteration stops after `max_iters`
/// sweeps or once every Ritz value moved less than `tol` (relative to the
/// leading one).
pub fn truncated_svd(
    a: &DMatrix<f64>,
    rank: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> TruncatedSvd {
    let (m, n) = a.shape();
    let full = m.min(n);
    let rank = rank.min(full);
    if rank == 0 {
        return TruncatedSvd {
            u: DMatrix::zeros(m, 0),
            singular_values: Vec::new(),
            v: DMatrix::zeros(n, 0),
            iterations: 0,
        };
    }
    // a few extra probe vectors speed up convergence of the trailing ones
    let block = (rank + 5).min(full);

    let mut rng = rng::stream(seed, &[label::SVD_INIT]);
    let omega = DMatrix::from_fn(n, block, |_, _| rng.sample::<f64, _>(StandardNormal));
    let at = a.transpose();
    let mut q = orthonormalize(a * omega);

    let mut prev: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut small;
    loop {
        let b = q.transpose() * a;
        small = b.svd(true, true);
        let mut sv: Vec<f64> = small.singular_values.iter().copied().collect();
        sv.sort_by(|x, y| y.total_cmp(x));
        sv.truncate(rank);
        let scale = sv.first().copied().unwrap_or(0.0).max(1.0);
        let converged = prev.len() == sv.len()
            && prev
                .iter()
                .zip(&sv)
                .all(|(p, s)| (p - s).abs() <= tol * scale);
        prev = sv;
        if converged || iterations >= max_iters {
            break;
        }
        let z = orthonormalize(&at * &q);
        q = orthonormalize(a * z);
        iterations += 1;
    }

    let ub = small.u.expect("u requested");
    let vt = small.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..small.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        small.singular_values[j]
            .total_cmp(&small.singular_values[i])
            .then(i.cmp(&j))
    });
    order.truncate(rank);

    let u_full = &q * ub;
    let u = DMatrix::from_fn(m, rank, |r, c| u_full[(r, order[c])]);
    let v = DMatrix::from_fn(n, rank, |r, c| vt[(order[c], r)]);
    let singular_values = order.iter().map(|&i| small.singular_values[i]).collect();
    TruncatedSvd {
        u,
        singular_values,
        v,
        iterations,
    }
}
