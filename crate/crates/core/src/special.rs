//! Log-space numerical helpers.

pub use statrs::function::gamma::ln_gamma;

/// `log(sum(exp(xs)))`, stable for large magnitudes. Returns `-inf` for an
/// empty slice or when every term is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Log of the ascending factorial `x^(m) = x (x+1) ... (x+m-1)` for `x > 0`.
pub fn ln_rising(x: f64, m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    ln_gamma(x + m as f64) - ln_gamma(x)
}

/// Log of the symmetric Dirichlet-multinomial marginal
/// `B(alpha + n_1, ..., alpha + n_C) / B(alpha, ..., alpha)` for one cell.
pub fn ln_dirichlet_multinomial(counts: &[u32], alpha: f64) -> f64 {
    let total: u32 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let c = counts.len() as f64;
    let num: f64 = counts.iter().map(|&n| ln_rising(alpha, n as usize)).sum();
    num - ln_rising(c * alpha, total as usize)
}
