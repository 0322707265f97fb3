//! Collapsed Gibbs sampler.
//!
//! One sweep runs, in order: kernel labels of the grid points, stick
//! fractions, kernels, mixture weights, lag allocations, the number of
//! classes per lag (with the mixture weights integrated out), and finally a
//! resize of the grid-shaped parameters to the new class counts.

use rand::Rng;

use crate::error::{Error, Result};
use crate::inference::{ChainSample, PosteriorChain};
use crate::model::{ln_lag_prior_pmf, GridShape, Hyperparams, LatentState, RatioMode};
use crate::random::{
    beta, categorical, categorical_cumulative, categorical_log, chain_rng, dirichlet,
    dirichlet_into, ChainRng,
};
use crate::seqdata::SequenceData;
use crate::special::{ln_dirichlet_multinomial, ln_gamma, log_sum_exp};

/// Per-lag tables for the class-count update. Depend only on the lag
/// category counts, so they are built once per fit.
#[derive(Debug, Clone, PartialEq)]
pub struct UTable {
    lags: Vec<LagUTable>,
}

#[derive(Debug, Clone, PartialEq)]
struct LagUTable {
    /// `log p0(k) + sum_r [lnG(k g) - lnG(k g + n_r)]`, indexed by `k - 1`.
    ln_terms: Vec<f64>,
    /// `log U(z) = logsumexp(ln_terms[z-1..])`, indexed by `z - 1`.
    ln_u: Vec<f64>,
    /// `log p0(k) - k g sum_{r: n_r > 0} ln n_r`, the Stirling counterpart.
    ln_stirling: Vec<f64>,
}

impl UTable {
    pub fn ln_terms(&self, j: usize) -> &[f64] {
        &self.lags[j].ln_terms
    }

    /// `log U(z)` for lag index `j` and a 1-based class bound `z`.
    pub fn ln_u(&self, j: usize, z: usize) -> f64 {
        self.lags[j].ln_u[z - 1]
    }

    /// Log pmf of `k_j` over `k = max_class..=C0`, where `max_class` is the
    /// 1-based largest occupied class.
    pub fn ln_pmf(&self, j: usize, max_class: usize, mode: RatioMode) -> Vec<f64> {
        let t = &self.lags[j];
        match mode {
            RatioMode::Exact => {
                let norm = t.ln_u[max_class - 1];
                t.ln_terms[max_class - 1..]
                    .iter()
                    .map(|x| x - norm)
                    .collect()
            }
            RatioMode::Stirling => {
                let tail = &t.ln_stirling[max_class - 1..];
                let norm = log_sum_exp(tail);
                tail.iter().map(|x| x - norm).collect()
            }
        }
    }
}

/// Build the class-count tables for every lag.
pub fn precompute_u_tables(data: &SequenceData, hyper: &Hyperparams) -> UTable {
    let c0 = data.n_categories();
    let lags = (0..data.max_order())
        .map(|j| {
            let gamma = hyper.gamma[j];
            let counts = data.lag_counts(j);
            let ln_p0 = ln_lag_prior_pmf(hyper.phi, j + 1, c0);
            let sum_ln_n: f64 = counts
                .iter()
                .filter(|&&n| n > 0)
                .map(|&n| (n as f64).ln())
                .sum();
            let ln_terms: Vec<f64> = (1..=c0)
                .map(|k| {
                    let kg = k as f64 * gamma;
                    let lg = ln_gamma(kg);
                    ln_p0[k - 1]
                        + counts
                            .iter()
                            .map(|&n| lg - ln_gamma(kg + n as f64))
                            .sum::<f64>()
                })
                .collect();
            let ln_u = (0..c0).map(|z| log_sum_exp(&ln_terms[z..])).collect();
            let ln_stirling = (1..=c0)
                .map(|k| ln_p0[k - 1] - k as f64 * gamma * sum_ln_n)
                .collect();
            LagUTable {
                ln_terms,
                ln_u,
                ln_stirling,
            }
        })
        .collect();
    UTable { lags }
}

/// Sufficient statistics consumed by the conditional updates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepStats {
    pub n_categories: usize,
    /// `n_h(y)` flattened as `grid_counts[g * C0 + y]`.
    pub grid_counts: Vec<u32>,
    /// `n*_l`: number of grid points labelled `l`.
    pub cluster_sizes: Vec<usize>,
    /// `n*_l(y)` flattened as `cluster_counts[l * C0 + y]`.
    pub cluster_counts: Vec<u32>,
    /// `n_{j,c}(h)` as `lag_class_counts[j][c][h]`.
    pub lag_class_counts: Vec<Vec<Vec<usize>>>,
}

impl SweepStats {
    pub fn compute(state: &LatentState, data: &SequenceData) -> Self {
        let mut s = Self {
            n_categories: data.n_categories(),
            ..Self::default()
        };
        s.update_grid(state, data);
        s.update_clusters(state);
        s.update_lag_classes(state, data);
        s
    }

    pub fn update_grid(&mut self, state: &LatentState, data: &SequenceData) {
        self.grid_counts = grid_counts(state, data);
    }

    pub fn update_clusters(&mut self, state: &LatentState) {
        let c0 = self.n_categories;
        let l = state.truncation();
        self.cluster_sizes.clear();
        self.cluster_sizes.resize(l, 0);
        self.cluster_counts.clear();
        self.cluster_counts.resize(l * c0, 0);
        for (g, &lab) in state.zstar.iter().enumerate() {
            self.cluster_sizes[lab] += 1;
            for y in 0..c0 {
                self.cluster_counts[lab * c0 + y] += self.grid_counts[g * c0 + y];
            }
        }
    }

    pub fn update_lag_classes(&mut self, state: &LatentState, data: &SequenceData) {
        self.lag_class_counts = (0..data.max_order())
            .map(|j| lag_class_counts(&state.z[j], data.lag(j), state.k[j], data.n_categories()))
            .collect();
    }

    pub fn grid_cell(&self, g: usize) -> &[u32] {
        &self.grid_counts[g * self.n_categories..(g + 1) * self.n_categories]
    }
}

fn lag_class_counts(z: &[usize], w: &[usize], k: usize, c0: usize) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0usize; k]; c0];
    for (&h, &c) in z.iter().zip(w) {
        counts[c][h] += 1;
    }
    counts
}

/// Grid index of every modeled point under the current allocations.
fn point_grid_indices(state: &LatentState, n: usize) -> Vec<usize> {
    let grid = state.grid();
    let mut idx = vec![0usize; n];
    for (zj, &s) in state.z.iter().zip(grid.strides()) {
        for (i, &h) in zj.iter().enumerate() {
            idx[i] += h * s;
        }
    }
    idx
}

/// `n_h(y)` for every grid point `h`, flattened.
pub fn grid_counts(state: &LatentState, data: &SequenceData) -> Vec<u32> {
    let c0 = data.n_categories();
    let mut counts = vec![0u32; state.grid().size() * c0];
    for (g, &y) in point_grid_indices(state, data.n_obs())
        .iter()
        .zip(data.responses())
    {
        counts[g * c0 + y] += 1;
    }
    counts
}

/// Log marginal likelihood of the responses with one Dirichlet(alpha) kernel
/// per grid cell integrated out; `counts` is flattened `[cell * C0 + y]`.
pub fn collapsed_loglik(counts: &[u32], n_categories: usize, alpha: f64) -> f64 {
    counts
        .chunks(n_categories)
        .map(|cell| ln_dirichlet_multinomial(cell, alpha))
        .sum()
}

/// [`collapsed_loglik`] for the allocations of `state`.
pub fn state_loglik(state: &LatentState, data: &SequenceData, alpha: f64) -> f64 {
    collapsed_loglik(&grid_counts(state, data), data.n_categories(), alpha)
}

fn ln_matrix(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().map(|p| p.ln()).collect())
        .collect()
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    p.iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Step 1: kernel label of every grid point.
pub fn step_zstar<R: Rng + ?Sized>(state: &mut LatentState, stats: &SweepStats, rng: &mut R) {
    let c0 = stats.n_categories;
    let l = state.truncation();
    let ln_pi: Vec<f64> = state.pi_star.iter().map(|p| p.ln()).collect();
    let ln_lam = ln_matrix(&state.lambda_star);
    let cum = cumulative(&state.pi_star);
    let mut logw = vec![0.0; l];
    for g in 0..state.zstar.len() {
        let cell = &stats.grid_counts[g * c0..(g + 1) * c0];
        if cell.iter().all(|&n| n == 0) {
            state.zstar[g] = categorical_cumulative(&cum, rng);
            continue;
        }
        for (lab, w) in logw.iter_mut().enumerate() {
            let mut v = ln_pi[lab];
            for (y, &n) in cell.iter().enumerate() {
                if n > 0 {
                    v += n as f64 * ln_lam[lab][y];
                }
            }
            *w = v;
        }
        state.zstar[g] = categorical_log(&logw, rng);
    }
}

/// Stick-breaking weights from stick fractions (last fraction taken as 1).
pub fn sticks_to_weights(sticks: &[f64]) -> Vec<f64> {
    let mut rest = 1.0;
    let last = sticks.len() - 1;
    sticks
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let v = if i == last { 1.0 } else { v };
            let p = v * rest;
            rest *= 1.0 - v;
            p
        })
        .collect()
}

/// Step 2: stick fractions and the induced weights.
pub fn step_sticks<R: Rng + ?Sized>(
    state: &mut LatentState,
    stats: &SweepStats,
    alpha0: f64,
    rng: &mut R,
) {
    let l = state.truncation();
    let mut tail: usize = stats.cluster_sizes.iter().sum();
    for lab in 0..l - 1 {
        let n = stats.cluster_sizes[lab];
        tail -= n;
        state.sticks[lab] = beta(1.0 + n as f64, alpha0 + tail as f64, rng);
    }
    state.sticks[l - 1] = 1.0;
    state.pi_star = sticks_to_weights(&state.sticks);
}

/// Step 3: kernels; empty clusters draw from the prior.
pub fn step_lambda<R: Rng + ?Sized>(
    state: &mut LatentState,
    stats: &SweepStats,
    alpha: f64,
    rng: &mut R,
) {
    let c0 = stats.n_categories;
    let mut conc = vec![0.0; c0];
    for (lab, kernel) in state.lambda_star.iter_mut().enumerate() {
        for (y, a) in conc.iter_mut().enumerate() {
            *a = alpha + stats.cluster_counts[lab * c0 + y] as f64;
        }
        dirichlet_into(&conc, rng, kernel);
    }
}

/// Step 4: mixture weights of every (lag, category) pair.
pub fn step_pi<R: Rng + ?Sized>(
    state: &mut LatentState,
    stats: &SweepStats,
    gamma: &[f64],
    rng: &mut R,
) {
    for (j, per_cat) in state.pi.iter_mut().enumerate() {
        let kj = state.k[j];
        for (c, w) in per_cat.iter_mut().enumerate() {
            let conc: Vec<f64> = (0..kj)
                .map(|h| gamma[j] + stats.lag_class_counts[j][c][h] as f64)
                .collect();
            dirichlet_into(&conc, rng, w);
        }
    }
}

/// Step 5: lag allocations, scanned in increasing `(j, t)`.
pub fn step_z<R: Rng + ?Sized>(state: &mut LatentState, data: &SequenceData, rng: &mut R) {
    let grid = state.grid();
    let strides = grid.strides().to_vec();
    let mut gidx = point_grid_indices(state, data.n_obs());
    let ln_lam = ln_matrix(&state.lambda_star);
    let y = data.responses();
    let kmax = state.k.iter().copied().max().unwrap_or(1);
    let mut logw = vec![0.0; kmax];
    for j in 0..state.max_order() {
        let kj = state.k[j];
        if kj == 1 {
            continue;
        }
        let stride = strides[j];
        let ln_pi = ln_matrix(&state.pi[j]);
        let w = data.lag(j);
        for i in 0..data.n_obs() {
            let base = gidx[i] - state.z[j][i] * stride;
            let wi = &ln_pi[w[i]];
            for (h, lw) in logw[..kj].iter_mut().enumerate() {
                *lw = wi[h] + ln_lam[state.zstar[base + h * stride]][y[i]];
            }
            let h = categorical_log(&logw[..kj], rng);
            state.z[j][i] = h;
            gidx[i] = base + h * stride;
        }
    }
}

/// Step 6: number of classes per lag from its collapsed conditional.
pub fn step_k<R: Rng + ?Sized>(
    state: &mut LatentState,
    data: &SequenceData,
    tables: &UTable,
    mode: RatioMode,
    rng: &mut R,
) -> Result<()> {
    let c0 = data.n_categories();
    for j in 0..state.max_order() {
        let max_class = state.z[j].iter().copied().max().map_or(1, |m| m + 1);
        if max_class > c0 {
            return Err(Error::Consistency(format!(
                "lag {} has class {max_class} beyond C0 = {c0}",
                j + 1
            )));
        }
        state.k[j] = if max_class == c0 {
            c0
        } else {
            let ln_pmf = tables.ln_pmf(j, max_class, mode);
            max_class + categorical_log(&ln_pmf, rng)
        };
    }
    Ok(())
}

/// Bring the mixture weights and the grid labels in line with a new `k`.
///
/// Weights of lags whose class count changed are drawn from
/// `Dir(gamma_j + counts)` in the new dimension. Grid labels at points that
/// existed before are kept; new points draw their label from the
/// stick-breaking weights; points outside the new grid are dropped.
pub fn resize_after_k<R: Rng + ?Sized>(
    state: &mut LatentState,
    data: &SequenceData,
    old_k: &[usize],
    gamma: &[f64],
    rng: &mut R,
) {
    if state.k == old_k {
        return;
    }
    let c0 = data.n_categories();
    for j in 0..state.max_order() {
        if state.k[j] == old_k[j] {
            continue;
        }
        let counts = lag_class_counts(&state.z[j], data.lag(j), state.k[j], c0);
        state.pi[j] = counts
            .iter()
            .map(|row| {
                let conc: Vec<f64> = row.iter().map(|&n| gamma[j] + n as f64).collect();
                dirichlet(&conc, rng)
            })
            .collect();
    }
    let old_grid = GridShape::new(old_k);
    let new_grid = GridShape::new(&state.k);
    let cum = cumulative(&state.pi_star);
    let mut h = vec![0usize; new_grid.dims().len()];
    let mut zstar = Vec::with_capacity(new_grid.size());
    for _ in 0..new_grid.size() {
        let inside = h.iter().zip(old_k).all(|(a, b)| a < b);
        zstar.push(if inside {
            state.zstar[old_grid.index(&h)]
        } else {
            categorical_cumulative(&cum, rng)
        });
        // odometer, last lag fastest
        for d in (0..h.len()).rev() {
            h[d] += 1;
            if h[d] < new_grid.dims()[d] {
                break;
            }
            h[d] = 0;
        }
    }
    state.zstar = zstar;
}

/// One full sweep.
pub fn sweep<R: Rng + ?Sized>(
    state: &mut LatentState,
    data: &SequenceData,
    hyper: &Hyperparams,
    tables: &UTable,
    mode: RatioMode,
    rng: &mut R,
) -> Result<()> {
    let mut stats = SweepStats {
        n_categories: data.n_categories(),
        ..SweepStats::default()
    };
    stats.update_grid(state, data);
    step_zstar(state, &stats, rng);
    stats.update_clusters(state);
    step_sticks(state, &stats, hyper.alpha0, rng);
    step_lambda(state, &stats, hyper.alpha, rng);
    stats.update_lag_classes(state, data);
    step_pi(state, &stats, &hyper.gamma, rng);
    step_z(state, data, rng);
    let old_k = state.k.clone();
    step_k(state, data, tables, mode, rng)?;
    resize_after_k(state, data, &old_k, &hyper.gamma, rng);
    Ok(())
}

/// Sampler start from hard allocations `z` with class counts `k`: each grid
/// point gets its own kernel label (modulo `L`), then sticks, kernels and
/// mixture weights are drawn from their conditionals.
pub fn initial_state<R: Rng + ?Sized>(
    data: &SequenceData,
    hyper: &Hyperparams,
    z: Vec<Vec<usize>>,
    k: Vec<usize>,
    rng: &mut R,
) -> Result<LatentState> {
    let c0 = data.n_categories();
    let q = data.max_order();
    let l = hyper.truncation;
    if z.len() != q || k.len() != q || z.iter().any(|zj| zj.len() != data.n_obs()) {
        return Err(Error::Dimension(
            "initial allocations do not match the data".into(),
        ));
    }
    let grid = GridShape::new(&k);
    let mut state = LatentState {
        pi: k
            .iter()
            .map(|&kj| vec![vec![1.0 / kj as f64; kj]; c0])
            .collect(),
        k,
        z,
        zstar: (0..grid.size()).map(|g| g % l).collect(),
        lambda_star: vec![vec![1.0 / c0 as f64; c0]; l],
        sticks: vec![0.5; l],
        pi_star: Vec::new(),
    };
    state.sticks[l - 1] = 1.0;
    state.pi_star = sticks_to_weights(&state.sticks);
    let stats = SweepStats::compute(&state, data);
    step_sticks(&mut state, &stats, hyper.alpha0, rng);
    step_lambda(&mut state, &stats, hyper.alpha, rng);
    step_pi(&mut state, &stats, &hyper.gamma, rng);
    state.check_invariants()?;
    Ok(state)
}

/// Draw a full state from the prior, allocations included, for the lag
/// design of `data` (responses are ignored).
pub fn prior_draw<R: Rng + ?Sized>(
    data: &SequenceData,
    hyper: &Hyperparams,
    rng: &mut R,
) -> LatentState {
    let c0 = data.n_categories();
    let q = data.max_order();
    let l = hyper.truncation;
    let k: Vec<usize> = (0..q)
        .map(|j| 1 + categorical_log(&ln_lag_prior_pmf(hyper.phi, j + 1, c0), rng))
        .collect();
    let pi: Vec<Vec<Vec<f64>>> = (0..q)
        .map(|j| {
            (0..c0)
                .map(|_| dirichlet(&vec![hyper.gamma[j]; k[j]], rng))
                .collect()
        })
        .collect();
    let mut sticks: Vec<f64> = (0..l).map(|_| beta(1.0, hyper.alpha0, rng)).collect();
    sticks[l - 1] = 1.0;
    let pi_star = sticks_to_weights(&sticks);
    let lambda_star = (0..l)
        .map(|_| dirichlet(&vec![hyper.alpha; c0], rng))
        .collect();
    let grid = GridShape::new(&k);
    let zstar = (0..grid.size())
        .map(|_| categorical(&pi_star, rng))
        .collect();
    let z = (0..q)
        .map(|j| {
            data.lag(j)
                .iter()
                .map(|&c| categorical(&pi[j][c], rng))
                .collect()
        })
        .collect();
    LatentState {
        k,
        z,
        zstar,
        lambda_star,
        sticks,
        pi_star,
        pi,
    }
}

/// Draw responses given allocations, labels and kernels.
pub fn draw_responses<R: Rng + ?Sized>(
    state: &LatentState,
    data: &SequenceData,
    rng: &mut R,
) -> Vec<usize> {
    point_grid_indices(state, data.n_obs())
        .into_iter()
        .map(|g| categorical(&state.lambda_star[state.zstar[g]], rng))
        .collect()
}

/// What to record besides the per-sample summaries.
#[derive(Debug, Clone, Default)]
pub struct ChainOptions {
    pub mode: RatioMode,
    /// Contexts whose transition vectors are stored with every sample.
    pub contexts: Vec<Vec<usize>>,
    /// Store the full dense tensor with every sample (subject to `tensor_cap`).
    pub full_tensor: bool,
    pub tensor_cap: Option<u128>,
    /// Check the state invariants after every sweep.
    pub audit: bool,
}

/// Run the sampler from `init` for the schedule in `hyper`.
pub fn run_chain(
    data: &SequenceData,
    hyper: &Hyperparams,
    init: LatentState,
    seed: u64,
    options: &ChainOptions,
) -> Result<PosteriorChain> {
    let mut rng = chain_rng(seed);
    run_chain_with(data, hyper, init, seed, options, &mut rng)
}

fn run_chain_with(
    data: &SequenceData,
    hyper: &Hyperparams,
    init: LatentState,
    seed: u64,
    options: &ChainOptions,
    rng: &mut ChainRng,
) -> Result<PosteriorChain> {
    hyper.validate(data.max_order())?;
    if init.max_order() != data.max_order() || init.n_categories() != data.n_categories() {
        return Err(Error::Dimension(
            "initial state does not match the data".into(),
        ));
    }
    init.check_invariants()?;
    for ctx in &options.contexts {
        if ctx.len() != data.max_order() || ctx.iter().any(|&c| c >= data.n_categories()) {
            return Err(Error::Dimension(format!(
                "invalid snapshot context {ctx:?}"
            )));
        }
    }
    let cap = options
        .tensor_cap
        .unwrap_or(crate::model::DEFAULT_TENSOR_CAP);
    if options.full_tensor {
        let rows = (data.n_categories() as u128).saturating_pow(data.max_order() as u32);
        if rows > cap {
            return Err(Error::TooLarge { rows, cap });
        }
    }
    let tables = precompute_u_tables(data, hyper);
    let schedule = hyper.schedule;
    let mut state = init;
    let mut samples = Vec::with_capacity(schedule.n_stored());
    for iter in 1..=schedule.n_iter {
        sweep(&mut state, data, hyper, &tables, options.mode, rng)?;
        if options.audit {
            state.check_invariants().map_err(|e| {
                Error::Consistency(format!("after sweep {iter}: {e}; k = {:?}", state.k))
            })?;
        }
        if schedule.is_stored(iter) {
            let transitions = if options.contexts.is_empty() {
                None
            } else {
                Some(
                    options
                        .contexts
                        .iter()
                        .map(|c| state.evaluate_transition(c))
                        .collect::<Result<Vec<_>>>()?,
                )
            };
            let tensor = if options.full_tensor {
                Some(state.materialize_tensor(cap)?.as_slice().to_vec())
            } else {
                None
            };
            samples.push(ChainSample {
                iter,
                k: state.k.clone(),
                ktilde: state.ktilde(),
                loglik: state_loglik(&state, data, hyper.alpha),
                n_kernels: state.occupied_kernels(),
                transitions,
                tensor,
            });
        }
    }
    Ok(PosteriorChain {
        n_categories: data.n_categories(),
        max_order: data.max_order(),
        schedule,
        seed,
        contexts: options.contexts.clone(),
        samples,
    })
}

/// A finished fit: the chain plus the state it ended in.
#[derive(Debug, Clone)]
pub struct Fit {
    pub chain: PosteriorChain,
    pub init_k: Vec<usize>,
}

/// Initialize with the approximate two-stage sampler and run the chain.
///
/// The initializer and the chain use seeds derived from `seed`.
pub fn fit(
    data: &SequenceData,
    hyper: &Hyperparams,
    seed: u64,
    init_iters: usize,
    options: &ChainOptions,
) -> Result<Fit> {
    hyper.validate(data.max_order())?;
    let (z, k) =
        crate::init::init_two_stage(data, hyper, init_iters, crate::random::derive_seed(seed, 0));
    let mut rng = chain_rng(crate::random::derive_seed(seed, 1));
    let init = initial_state(data, hyper, z, k.clone(), &mut rng)?;
    let chain = run_chain_with(data, hyper, init, seed, options, &mut rng)?;
    Ok(Fit { chain, init_k: k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::lag_prior_pmf;
    use crate::random::chain_rng;
    use crate::seqdata::build_lag_design;

    fn toy_data(seed: u64, c0: usize, len: usize, q: usize) -> SequenceData {
        let mut rng = chain_rng(seed);
        let y: Vec<usize> = (0..len).map(|_| rng.random_range(0..c0)).collect();
        build_lag_design(&y, c0, q).unwrap()
    }

    fn toy_state(data: &SequenceData, hyper: &Hyperparams, seed: u64) -> LatentState {
        let mut rng = chain_rng(seed);
        prior_draw(data, hyper, &mut rng)
    }

    #[test]
    fn u_table_without_data_sums_prior_tail() {
        let data = SequenceData::from_design(vec![vec![]], vec![], 3).unwrap();
        let hyper = Hyperparams::defaults(3, 1);
        let t = precompute_u_tables(&data, &hyper);
        let p0 = lag_prior_pmf(0.5, 1, 3);
        for z in 1..=3 {
            let tail: f64 = p0[z - 1..].iter().sum();
            assert!((t.ln_u(0, z).exp() - tail).abs() < 1e-14);
        }
    }

    #[test]
    fn u_table_nonincreasing() {
        let data = toy_data(1, 4, 200, 3);
        let t = precompute_u_tables(&data, &Hyperparams::defaults(4, 3));
        for j in 0..3 {
            for z in 1..4 {
                assert!(t.ln_u(j, z) >= t.ln_u(j, z + 1));
                assert!(t.ln_u(j, z).is_finite());
            }
        }
    }

    #[test]
    fn u_table_two_term_direct_sum() {
        // C0=2, gamma=0.5, counts (3,2), phi=0.5, lag 1. Direct products:
        // k=1: 1/(0.5^(3) 0.5^(2)) ; k=2: 1/(1^(3) 1^(2))
        let data = SequenceData::from_design(vec![vec![0, 0, 0, 1, 1]], vec![0; 5], 2).unwrap();
        let mut hyper = Hyperparams::defaults(2, 1);
        hyper.gamma = vec![0.5];
        let t = precompute_u_tables(&data, &hyper);
        let rise = |x: f64, m: usize| (0..m).map(|i| x + i as f64).product::<f64>();
        let p0 = lag_prior_pmf(0.5, 1, 2);
        let u1 = p0[0] / (rise(0.5, 3) * rise(0.5, 2)) + p0[1] / (rise(1.0, 3) * rise(1.0, 2));
        let u2 = p0[1] / (rise(1.0, 3) * rise(1.0, 2));
        assert!((t.ln_u(0, 1) - u1.ln()).abs() < 1e-12);
        assert!((t.ln_u(0, 2) - u2.ln()).abs() < 1e-12);
    }

    #[test]
    fn zstar_without_data_follows_weights() {
        let data = toy_data(2, 2, 20, 1);
        let hyper = Hyperparams::defaults(2, 1);
        let mut state = toy_state(&data, &hyper, 3);
        state.pi_star = vec![0.2, 0.0, 0.8];
        state.lambda_star.truncate(3);
        state.sticks.truncate(3);
        state.k = vec![1];
        state.zstar = vec![0];
        let stats = SweepStats {
            n_categories: 2,
            grid_counts: vec![0, 0],
            ..SweepStats::default()
        };
        let mut rng = chain_rng(4);
        let n = 100_000;
        let mut hits = [0usize; 3];
        for _ in 0..n {
            step_zstar(&mut state, &stats, &mut rng);
            hits[state.zstar[0]] += 1;
        }
        assert_eq!(hits[1], 0);
        let f = hits[0] as f64 / n as f64;
        assert!((f - 0.2).abs() < 3.0 * (0.2f64 * 0.8 / n as f64).sqrt());
    }

    #[test]
    fn zstar_two_point_posterior() {
        let data = toy_data(2, 2, 20, 1);
        let hyper = Hyperparams::defaults(2, 1);
        let mut state = toy_state(&data, &hyper, 3);
        state.k = vec![1];
        state.zstar = vec![0];
        state.pi_star = vec![0.3, 0.7];
        state.sticks = vec![0.3, 1.0];
        state.lambda_star = vec![vec![0.8, 0.2], vec![0.4, 0.6]];
        let stats = SweepStats {
            n_categories: 2,
            grid_counts: vec![3, 1],
            ..SweepStats::default()
        };
        let a = 0.3 * 0.8f64.powi(3) * 0.2;
        let b = 0.7 * 0.4f64.powi(3) * 0.6;
        let p = a / (a + b);
        let mut rng = chain_rng(5);
        let n = 100_000;
        let mut ones = 0;
        for _ in 0..n {
            step_zstar(&mut state, &stats, &mut rng);
            ones += (state.zstar[0] == 0) as usize;
        }
        let f = ones as f64 / n as f64;
        assert!(
            (f - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt(),
            "{f} vs {p}"
        );
    }

    #[test]
    fn single_kernel_truncation_is_trivial() {
        let data = toy_data(6, 2, 30, 2);
        let hyper = Hyperparams::defaults(2, 2);
        let mut state = toy_state(&data, &hyper, 7);
        state.lambda_star.truncate(1);
        state.sticks = vec![1.0];
        state.pi_star = vec![1.0];
        state.zstar.iter_mut().for_each(|l| *l = 0);
        let stats = SweepStats::compute(&state, &data);
        let mut rng = chain_rng(8);
        step_zstar(&mut state, &stats, &mut rng);
        assert!(state.zstar.iter().all(|&l| l == 0));
    }

    #[test]
    fn sticks_normalize_and_concentrate() {
        let data = toy_data(9, 2, 30, 1);
        let hyper = Hyperparams::defaults(2, 1);
        let mut state = toy_state(&data, &hyper, 10);
        let mut rng = chain_rng(11);
        let mut stats = SweepStats::compute(&state, &data);
        stats.cluster_sizes = vec![0; state.truncation()];
        stats.cluster_sizes[0] = 50;
        let mut mean_v1 = 0.0;
        for _ in 0..2000 {
            step_sticks(&mut state, &stats, 1e-6, &mut rng);
            assert!((state.pi_star.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            mean_v1 += state.sticks[0];
        }
        // Beta(51, ~0): mean 51 / (51 + 1e-6)
        assert!(mean_v1 / 2000.0 > 0.999);
    }

    #[test]
    fn sticks_without_data_match_gem_moments() {
        // E[pi*_1] = 1/(1+a0), E[pi*_2] = a0/(1+a0)^2 under GEM(a0).
        let data = toy_data(12, 2, 10, 1);
        let mut hyper = Hyperparams::defaults(2, 1);
        hyper.alpha0 = 2.0;
        let mut state = toy_state(&data, &hyper, 13);
        let mut stats = SweepStats::compute(&state, &data);
        stats.cluster_sizes = vec![0; state.truncation()];
        let mut rng = chain_rng(14);
        let n = 100_000;
        let (mut s1, mut s1sq, mut s2, mut s2sq) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            step_sticks(&mut state, &stats, hyper.alpha0, &mut rng);
            s1 += state.pi_star[0];
            s1sq += state.pi_star[0].powi(2);
            s2 += state.pi_star[1];
            s2sq += state.pi_star[1].powi(2);
        }
        let nf = n as f64;
        for (sum, sq, expect) in [(s1, s1sq, 1.0 / 3.0), (s2, s2sq, 2.0 / 9.0)] {
            let m = sum / nf;
            let se = ((sq / nf - m * m) / nf).sqrt();
            assert!((m - expect).abs() < 3.0 * se, "{m} vs {expect}");
        }
    }

    #[test]
    fn lambda_posterior_mean_and_prior_moments() {
        let data = toy_data(15, 2, 10, 1);
        let hyper = Hyperparams::defaults(2, 1);
        let mut state = toy_state(&data, &hyper, 16);
        state.lambda_star.truncate(2);
        let stats = SweepStats {
            n_categories: 2,
            cluster_counts: vec![1000, 0, 0, 0],
            ..SweepStats::default()
        };
        let mut rng = chain_rng(17);
        let n = 100_000;
        let (mut m0, mut m1, mut m1sq) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            step_lambda(&mut state, &stats, 0.5, &mut rng);
            for lam in &state.lambda_star {
                assert!((lam.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            m0 += state.lambda_star[0][0];
            m1 += state.lambda_star[1][0];
            m1sq += state.lambda_star[1][0].powi(2);
        }
        let nf = n as f64;
        assert!((m0 / nf - 1000.5 / 1001.0).abs() < 1e-4);
        // empty cluster: Dir(0.5, 0.5), mean 1/2, var 1/8
        let mean = m1 / nf;
        assert!((mean - 0.5).abs() < 3.0 * (0.125 / nf).sqrt());
        let var = m1sq / nf - mean * mean;
        assert!((var - 0.125).abs() < 0.005);
    }

    #[test]
    fn pi_update_moments() {
        let data = toy_data(18, 2, 10, 1);
        let hyper = Hyperparams::defaults(2, 1);
        let mut state = toy_state(&data, &hyper, 19);
        state.k = vec![2];
        state.pi = vec![vec![vec![0.5, 0.5]; 2]];
        let stats = SweepStats {
            n_categories: 2,
            lag_class_counts: vec![vec![vec![5, 0], vec![0, 0]]],
            ..SweepStats::default()
        };
        let mut rng = chain_rng(20);
        let n = 100_000;
        let (mut s, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            step_pi(&mut state, &stats, &[0.5], &mut rng);
            assert!((state.pi[0][0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            s += state.pi[0][0][0];
            sq += state.pi[0][0][0].powi(2);
        }
        let m = s / n as f64;
        let se = ((sq / n as f64 - m * m) / n as f64).sqrt();
        assert!((m - 5.5 / 6.0).abs() < 3.0 * se);

        state.k = vec![1];
        state.pi = vec![vec![vec![1.0]; 2]];
        let stats = SweepStats {
            n_categories: 2,
            lag_class_counts: vec![vec![vec![4], vec![6]]],
            ..SweepStats::default()
        };
        step_pi(&mut state, &stats, &[0.5], &mut rng);
        assert_eq!(state.pi[0], vec![vec![1.0], vec![1.0]]);
    }

    #[test]
    fn z_with_identical_kernels_follows_weights() {
        let data = SequenceData::from_design(vec![vec![0; 200]], vec![1; 200], 2).unwrap();
        let hyper = Hyperparams::defaults(2, 1);
        let mut state = toy_state(&data, &hyper, 21);
        state.k = vec![2];
        state.zstar = vec![0, 1];
        state.lambda_star[0] = vec![0.3, 0.7];
        state.lambda_star[1] = vec![0.3, 0.7];
        state.pi = vec![vec![vec![0.25, 0.75], vec![0.5, 0.5]]];
        state.z = vec![vec![0; 200]];
        let mut rng = chain_rng(22);
        let mut ones = 0usize;
        let reps = 500;
        for _ in 0..reps {
            step_z(&mut state, &data, &mut rng);
            ones += state.z[0].iter().filter(|&&h| h == 1).count();
        }
        let n = (reps * 200) as f64;
        let f = ones as f64 / n;
        assert!((f - 0.75).abs() < 3.0 * (0.75f64 * 0.25 / n).sqrt(), "{f}");
    }

    #[test]
    fn z_two_point_conditional() {
        // q=1, k=2: p(h) ∝ pi_h(w) * lambda*_{zstar[h]}(y)
        let data = SequenceData::from_design(vec![vec![1; 100]], vec![0; 100], 2).unwrap();
        let hyper = Hyperparams::defaults(2, 1);
        let mut state = toy_state(&data, &hyper, 23);
        state.k = vec![2];
        state.zstar = vec![2, 5];
        state.lambda_star[2] = vec![0.9, 0.1];
        state.lambda_star[5] = vec![0.2, 0.8];
        state.pi = vec![vec![vec![0.5, 0.5], vec![0.4, 0.6]]];
        state.z = vec![vec![0; 100]];
        let p = 0.4 * 0.9 / (0.4 * 0.9 + 0.6 * 0.2);
        let mut rng = chain_rng(24);
        let mut zeros = 0usize;
        let reps = 1000;
        for _ in 0..reps {
            step_z(&mut state, &data, &mut rng);
            zeros += state.z[0].iter().filter(|&&h| h == 0).count();
        }
        let n = (reps * 100) as f64;
        let f = zeros as f64 / n;
        assert!((f - p).abs() < 3.0 * (p * (1.0 - p) / n).sqrt());
    }

    #[test]
    fn z_with_one_class_is_fixed() {
        let data = toy_data(25, 3, 40, 2);
        let hyper = Hyperparams::defaults(3, 2);
        let mut state = toy_state(&data, &hyper, 26);
        state.k = vec![1, 1];
        state.zstar = vec![0];
        state.pi = vec![vec![vec![1.0]; 3]; 2];
        state.z = vec![vec![0; data.n_obs()]; 2];
        let mut rng = chain_rng(27);
        step_z(&mut state, &data, &mut rng);
        assert!(state.z.iter().flatten().all(|&h| h == 0));
    }

    #[test]
    fn k_forced_when_all_classes_occupied() {
        let data = toy_data(28, 3, 60, 1);
        let hyper = Hyperparams::defaults(3, 1);
        let tables = precompute_u_tables(&data, &hyper);
        let mut state = toy_state(&data, &hyper, 29);
        state.z[0][0] = 2;
        let mut rng = chain_rng(30);
        for _ in 0..100 {
            step_k(&mut state, &data, &tables, RatioMode::Exact, &mut rng).unwrap();
            assert_eq!(state.k[0], 3);
        }
    }

    #[test]
    fn k_pmf_normalized() {
        let data = toy_data(31, 4, 300, 3);
        let tables = precompute_u_tables(&data, &Hyperparams::defaults(4, 3));
        for j in 0..3 {
            for m in 1..=4 {
                for mode in [RatioMode::Exact, RatioMode::Stirling] {
                    let s: f64 = tables.ln_pmf(j, m, mode).iter().map(|x| x.exp()).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn k_pmf_matches_closed_form_for_three_categories() {
        // C0=3, gamma=1/3, phi=0.5, lag 2, counts (4,3,3), max class 1.
        // p(z | w, k) ∝ prod_r 1 / (k gamma)^(n_r) after dropping k-free factors.
        let w: Vec<usize> = [0; 4].into_iter().chain([1; 3]).chain([2; 3]).collect();
        let data = SequenceData::from_design(vec![vec![0; 10], w], vec![0; 10], 3).unwrap();
        let hyper = Hyperparams::defaults(3, 2);
        let tables = precompute_u_tables(&data, &hyper);
        let rise = |x: f64, m: usize| (0..m).map(|i| x + i as f64).product::<f64>();
        let p0 = lag_prior_pmf(0.5, 2, 3);
        let joint: Vec<f64> = (1..=3)
            .map(|k| {
                let kg = k as f64 / 3.0;
                p0[k - 1] / (rise(kg, 4) * rise(kg, 3) * rise(kg, 3))
            })
            .collect();
        let total: f64 = joint.iter().sum();
        let got = tables.ln_pmf(1, 1, RatioMode::Exact);
        for (g, j) in got.iter().zip(&joint) {
            assert!((g - (j / total).ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn resize_is_identity_when_k_unchanged() {
        let data = toy_data(32, 3, 40, 2);
        let hyper = Hyperparams::defaults(3, 2);
        let mut state = toy_state(&data, &hyper, 33);
        let before = state.clone();
        let k = state.k.clone();
        let mut rng = chain_rng(34);
        resize_after_k(&mut state, &data, &k, &hyper.gamma, &mut rng);
        assert_eq!(state, before);
    }

    #[test]
    fn resize_shrink_projects() {
        let data = toy_data(35, 2, 40, 2);
        let hyper = Hyperparams::defaults(2, 2);
        let mut state = toy_state(&data, &hyper, 36);
        state.k = vec![2, 2];
        state.zstar = vec![7, 8, 9, 10];
        state.z = vec![vec![0; data.n_obs()], vec![0; data.n_obs()]];
        state.pi = vec![vec![vec![0.5, 0.5]; 2]; 2];
        let old = state.k.clone();
        state.k = vec![1, 2];
        let mut rng = chain_rng(37);
        resize_after_k(&mut state, &data, &old, &hyper.gamma, &mut rng);
        // retained entries are those with h_1 = 1 (0-based 0)
        assert_eq!(state.zstar, vec![7, 8]);
        assert_eq!(state.pi[0], vec![vec![1.0]; 2]);
        state.check_invariants().unwrap();
    }

    #[test]
    fn resize_growth_draws_from_weights() {
        let data = toy_data(38, 2, 20, 1);
        let hyper = Hyperparams::defaults(2, 1);
        let mut state = toy_state(&data, &hyper, 39);
        state.pi_star = vec![0.6, 0.0, 0.4];
        state.sticks = vec![0.6, 0.0, 1.0];
        state.lambda_star.truncate(3);
        let mut rng = chain_rng(40);
        let n = 50_000;
        let mut first = 0usize;
        for _ in 0..n {
            state.k = vec![1];
            state.zstar = vec![2];
            state.z = vec![vec![0; data.n_obs()]];
            state.pi = vec![vec![vec![1.0]; 2]];
            state.k = vec![2];
            resize_after_k(&mut state, &data, &[1], &hyper.gamma, &mut rng);
            assert_eq!(state.zstar[0], 2);
            assert_ne!(state.zstar[1], 1);
            first += (state.zstar[1] == 0) as usize;
        }
        let f = first as f64 / n as f64;
        assert!((f - 0.6).abs() < 3.0 * (0.24 / n as f64).sqrt());
    }

    #[test]
    fn loglik_edge_cases() {
        assert_eq!(collapsed_loglik(&[0, 0, 0, 0], 2, 0.5), 0.0);
        let v = collapsed_loglik(&[1, 0, 0, 0], 2, 0.5);
        assert!((v - 0.5f64.ln()).abs() < 1e-14);
        let a = collapsed_loglik(&[3, 1, 0, 2, 5, 5], 2, 0.5);
        let b = collapsed_loglik(&[5, 5, 3, 1, 0, 2], 2, 0.5);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn loglik_invariant_to_class_relabeling() {
        let data = toy_data(41, 3, 80, 2);
        let hyper = Hyperparams::defaults(3, 2);
        let mut rng = chain_rng(42);
        let mut state = prior_draw(&data, &hyper, &mut rng);
        state.k = vec![3, 3];
        state.z = (0..2)
            .map(|_| (0..data.n_obs()).map(|_| rng.random_range(0..3)).collect())
            .collect();
        let a = state_loglik(&state, &data, hyper.alpha);
        let perm = [2usize, 0, 1];
        for h in state.z[1].iter_mut() {
            *h = perm[*h];
        }
        let b = state_loglik(&state, &data, hyper.alpha);
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn schedule_arithmetic_and_determinism() {
        let data = toy_data(43, 2, 60, 3);
        let hyper =
            Hyperparams::defaults(2, 3).with_schedule(crate::model::Schedule::new(10, 5, 5));
        let opts = ChainOptions {
            audit: true,
            contexts: vec![vec![0, 1, 0]],
            ..ChainOptions::default()
        };
        let a = fit(&data, &hyper, 99, 20, &opts).unwrap();
        assert_eq!(a.chain.samples.len(), 1);
        assert_eq!(a.chain.samples[0].iter, 10);
        let b = fit(&data, &hyper, 99, 20, &opts).unwrap();
        assert_eq!(a.chain, b.chain);
    }

    #[test]
    fn invariants_hold_every_sweep() {
        let data = toy_data(44, 3, 150, 4);
        let hyper = Hyperparams::defaults(3, 4);
        let tables = precompute_u_tables(&data, &hyper);
        let mut rng = chain_rng(45);
        let mut state = prior_draw(&data, &hyper, &mut rng);
        for mode in [RatioMode::Exact, RatioMode::Stirling] {
            for _ in 0..200 {
                sweep(&mut state, &data, &hyper, &tables, mode, &mut rng).unwrap();
                state.check_invariants().unwrap();
                for (zj, &kj) in state.z.iter().zip(&state.k) {
                    assert!(zj.iter().all(|&h| h < kj));
                }
            }
        }
    }
}
