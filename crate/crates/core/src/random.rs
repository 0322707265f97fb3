//! Random draws used by the samplers.
//!
//! Gamma variates are produced on the log scale so that Dirichlet and beta
//! draws with small concentrations (e.g. `1/C0` with empty clusters) never
//! collapse to all-zero vectors.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma};

use crate::special::log_sum_exp;

/// Generator used for every chain. Seeded once per chain from a user seed.
pub type ChainRng = ChaCha20Rng;

/// Build the chain generator for `seed`.
pub fn chain_rng(seed: u64) -> ChainRng {
    use rand::SeedableRng;
    ChaCha20Rng::seed_from_u64(seed)
}

/// Deterministically derive the seed of sub-task `index` from a master seed
/// (SplitMix64 finalizer over the pair).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw on the open interval (0, 1).
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Log of a Gamma(shape, 1) variate.
pub fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("shape is positive");
        let x: f64 = g.sample(rng);
        x.ln()
    } else {
        // G(a) = G(a + 1) * U^(1/a)
        let g = Gamma::new(shape + 1.0, 1.0).expect("shape is positive");
        let x: f64 = g.sample(rng);
        x.ln() + open_unit(rng).ln() / shape
    }
}

/// Draw from Dirichlet(`conc`) into `out`. A single-component vector is
/// returned as `[1.0]` without consuming randomness.
pub fn dirichlet_into<R: Rng + ?Sized>(conc: &[f64], rng: &mut R, out: &mut Vec<f64>) {
    out.clear();
    if conc.len() == 1 {
        out.push(1.0);
        return;
    }
    out.extend(conc.iter().map(|&a| ln_gamma_variate(a, rng)));
    let lse = log_sum_exp(out);
    for v in out.iter_mut() {
        *v = (*v - lse).exp();
    }
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
}

pub fn dirichlet<R: Rng + ?Sized>(conc: &[f64], rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(conc.len());
    dirichlet_into(conc, rng, &mut out);
    out
}

/// Draw from Beta(a, b).
pub fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let la = ln_gamma_variate(a, rng);
    let lb = ln_gamma_variate(b, rng);
    // a / (a + b) computed as a logistic of the log ratio
    1.0 / (1.0 + (lb - la).exp())
}

/// Sample an index with probability proportional to `exp(log_weights)`.
///
/// Weights are max-shifted, exponentiated and inverted through the cumulative
/// sum; ties resolve toward the smaller index. Panics if every weight is zero.
pub fn categorical_log<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(
        max > f64::NEG_INFINITY,
        "categorical with no positive weight"
    );
    let mut total = 0.0;
    for &lw in log_weights {
        total += (lw - max).exp();
    }
    let u = rng.random::<f64>() * total;
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &lw) in log_weights.iter().enumerate() {
        let w = (lw - max).exp();
        if w > 0.0 {
            last_positive = i;
        }
        cum += w;
        if u < cum {
            return i;
        }
    }
    last_positive
}

/// Sample an index from a normalized probability vector by inverse CDF.
pub fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        cum += p;
        if u < cum {
            return i;
        }
    }
    last_positive
}

/// Inverse-CDF draw against a precomputed cumulative sum (last entry = total).
pub fn categorical_cumulative<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let total = *cumulative.last().expect("nonempty cumulative");
    let u = rng.random::<f64>() * total;
    let idx = cumulative.partition_point(|&c| c <= u);
    idx.min(cumulative.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirichlet_small_concentration_is_normalized() {
        let mut rng = chain_rng(7);
        for _ in 0..1000 {
            let v = dirichlet(&[0.01, 0.01, 0.01], &mut rng);
            let s: f64 = v.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(v.iter().all(|x| x.is_finite() && *x >= 0.0));
        }
    }

    #[test]
    fn beta_mean() {
        let mut rng = chain_rng(3);
        let n = 200_000;
        let m: f64 = (0..n).map(|_| beta(2.0, 6.0, &mut rng)).sum::<f64>() / n as f64;
        // mean 0.25, sd sqrt(ab/((a+b)^2(a+b+1))) = 0.1443
        assert!((m - 0.25).abs() < 3.0 * 0.1443 / (n as f64).sqrt());
    }

    #[test]
    fn categorical_log_frequencies() {
        let mut rng = chain_rng(11);
        let lw = [0.2f64.ln(), 0.5f64.ln(), 0.3f64.ln()];
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[categorical_log(&lw, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.5, 0.3]) {
            let f = *c as f64 / n as f64;
            assert!((f - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt());
        }
    }

    #[test]
    fn categorical_skips_zero_weights() {
        let mut rng = chain_rng(1);
        for _ in 0..1000 {
            assert_eq!(
                categorical_log(&[f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY], &mut rng),
                1
            );
            assert_eq!(categorical(&[0.0, 0.0, 1.0], &mut rng), 2);
            assert_eq!(categorical_cumulative(&[0.0, 0.0, 1.0], &mut rng), 2);
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(42, 0));
    }
}
