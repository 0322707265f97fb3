//! Approximate two-stage initializer.
//!
//! Each lag gets a hard partition of the categories. Partitions are explored
//! by Metropolis split/merge moves scored with the collapsed marginal
//! likelihood of the induced grid, starting from a single class per lag.

use std::collections::BTreeMap;

use rand::Rng;

use crate::model::Hyperparams;
use crate::random::chain_rng;
use crate::seqdata::SequenceData;
use crate::special::ln_dirichlet_multinomial;

/// Hard assignment of categories to classes for one lag. Labels are
/// contiguous: `0..n_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardPartition {
    labels: Vec<usize>,
}

impl HardPartition {
    pub fn single(n_categories: usize) -> Self {
        Self {
            labels: vec![0; n_categories],
        }
    }

    /// Build from arbitrary labels, relabelling to first-appearance order.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut map = BTreeMap::new();
        let labels = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Self { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_of(&self, category: usize) -> usize {
        self.labels[category]
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    fn members(&self, class: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&c| self.labels[c] == class)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveKind {
    Split,
    Merge,
}

/// Propose a split or merge of `part`. A split moves a random nonempty
/// proper subset of one class into a new class; a merge joins two classes.
/// When only one kind is possible it is chosen.
pub fn propose_move<R: Rng + ?Sized>(
    part: &HardPartition,
    rng: &mut R,
) -> (MoveKind, HardPartition) {
    let c0 = part.labels.len();
    let k = part.n_classes();
    let kind = if k <= 1 {
        MoveKind::Split
    } else if k >= c0 {
        MoveKind::Merge
    } else if rng.random_bool(0.5) {
        MoveKind::Split
    } else {
        MoveKind::Merge
    };
    let mut labels = part.labels.clone();
    match kind {
        MoveKind::Split => {
            let splittable: Vec<usize> = (0..k).filter(|&h| part.members(h).len() >= 2).collect();
            let class = splittable[rng.random_range(0..splittable.len())];
            let members = part.members(class);
            let m = members.len();
            // bitmask over members, excluding empty and full
            let mask = rng.random_range(1..(1u64 << m.min(63)) - 1);
            for (b, &c) in members.iter().enumerate() {
                if b < 63 && mask >> b & 1 == 1 {
                    labels[c] = k;
                }
            }
        }
        MoveKind::Merge => {
            let a = rng.random_range(0..k);
            let mut b = rng.random_range(0..k - 1);
            if b >= a {
                b += 1;
            }
            let (keep, drop) = (a.min(b), a.max(b));
            for l in labels.iter_mut() {
                if *l == drop {
                    *l = keep;
                } else if *l > drop {
                    *l -= 1;
                }
            }
        }
    }
    (kind, HardPartition::from_labels(&labels))
}

/// Collapsed marginal log-likelihood of the responses when every cell of the
/// grid induced by `parts` carries its own Dirichlet(`alpha`) kernel.
pub fn partition_marginal_loglik(data: &SequenceData, parts: &[HardPartition], alpha: f64) -> f64 {
    let c0 = data.n_categories();
    let mut cells: BTreeMap<Vec<usize>, Vec<u32>> = BTreeMap::new();
    let mut key = vec![0usize; parts.len()];
    for (i, &y) in data.responses().iter().enumerate() {
        for (j, p) in parts.iter().enumerate() {
            key[j] = p.class_of(data.lag(j)[i]);
        }
        cells.entry(key.clone()).or_insert_with(|| vec![0; c0])[y] += 1;
    }
    cells
        .values()
        .map(|cell| ln_dirichlet_multinomial(cell, alpha))
        .sum()
}

/// Run `n_iter` rounds of split/merge proposals, scanning lags in order, and
/// return the allocations `z[j][i]` and class counts `k` of the final
/// partitions.
pub fn init_two_stage(
    data: &SequenceData,
    hyper: &Hyperparams,
    n_iter: usize,
    seed: u64,
) -> (Vec<Vec<usize>>, Vec<usize>) {
    let parts = search_partitions(data, hyper.alpha, n_iter, seed);
    let z = parts
        .iter()
        .enumerate()
        .map(|(j, p)| data.lag(j).iter().map(|&c| p.class_of(c)).collect())
        .collect();
    let k = parts.iter().map(HardPartition::n_classes).collect();
    (z, k)
}

/// The partition search behind [`init_two_stage`].
pub fn search_partitions(
    data: &SequenceData,
    alpha: f64,
    n_iter: usize,
    seed: u64,
) -> Vec<HardPartition> {
    let c0 = data.n_categories();
    let mut rng = chain_rng(seed);
    let mut parts = vec![HardPartition::single(c0); data.max_order()];
    if c0 < 2 {
        return parts;
    }
    let mut current = partition_marginal_loglik(data, &parts, alpha);
    for _ in 0..n_iter {
        for j in 0..parts.len() {
            let (_, proposal) = propose_move(&parts[j], &mut rng);
            let old = std::mem::replace(&mut parts[j], proposal);
            let cand = partition_marginal_loglik(data, &parts, alpha);
            let accept = cand >= current || rng.random::<f64>() < (cand - current).exp();
            if accept {
                current = cand;
            } else {
                parts[j] = old;
            }
        }
    }
    parts
}
