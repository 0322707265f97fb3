//! The factorized transition model: hyperparameters, latent state, dense
//! transition tensors and the closed-form quantities built on them.
//!
//! A transition probability is
//!
//! ```text
//! p(y | w_1..w_q) = sum_h [ prod_j pi^(j)_{h_j}(w_j) ] * lambda*_{zstar[h]}(y)
//! ```
//!
//! where `h = (h_1..h_q)` runs over the latent class grid `prod_j k_j` and
//! every grid point is tied to one of `L` shared kernels through `zstar`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_gamma, ln_rising, log_sum_exp};

/// Default cap on the number of context rows of a dense tensor.
pub const DEFAULT_TENSOR_CAP: u128 = 1 << 20; // 4^10

/// Sweep counts of a chain. Iterations are numbered from 1; iteration `i`
/// is stored when `i > n_burn` and `(i - n_burn) % thin == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
}

impl Schedule {
    pub const fn new(n_iter: usize, n_burn: usize, thin: usize) -> Self {
        Self {
            n_iter,
            n_burn,
            thin,
        }
    }

    /// 50,000 sweeps, 10,000 burn-in, every 5th kept.
    pub const fn full() -> Self {
        Self::new(50_000, 10_000, 5)
    }

    /// 10,000 sweeps, 2,000 burn-in, every 5th kept.
    pub const fn desk() -> Self {
        Self::new(10_000, 2_000, 5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.n_burn >= self.n_iter {
            return Err(Error::InvalidParameter(format!(
                "schedule requires 0 <= n_burn < n_iter (got n_iter={}, n_burn={})",
                self.n_iter, self.n_burn
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn is_stored(&self, iter: usize) -> bool {
        iter > self.n_burn && (iter - self.n_burn).is_multiple_of(self.thin)
    }

    pub fn n_stored(&self) -> usize {
        (self.n_iter - self.n_burn) / self.thin
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Self::full()
    }
}

/// Fixed prior constants and the sweep schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Dirichlet concentration of the kernels.
    pub alpha: f64,
    /// Stick-breaking concentration.
    pub alpha0: f64,
    /// Per-lag Dirichlet concentration of the mixture weights.
    pub gamma: Vec<f64>,
    /// Decay of the prior on the number of latent classes per lag.
    pub phi: f64,
    /// Stick-breaking truncation level `L`.
    pub truncation: usize,
    pub schedule: Schedule,
}

impl Hyperparams {
    /// `alpha = 1/C0`, `alpha0 = 1`, `gamma_j = 1/C0`, `phi = 1/2`, `L = 100`.
    pub fn defaults(n_categories: usize, max_order: usize) -> Self {
        let c = n_categories as f64;
        Self {
            alpha: 1.0 / c,
            alpha0: 1.0,
            gamma: vec![1.0 / c; max_order],
            phi: 0.5,
            truncation: 100,
            schedule: Schedule::full(),
        }
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn validate(&self, max_order: usize) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite (got {v})"
                )))
            }
        };
        positive("alpha", self.alpha)?;
        positive("alpha0", self.alpha0)?;
        positive("phi", self.phi)?;
        if self.gamma.len() != max_order {
            return Err(Error::InvalidParameter(format!(
                "gamma has {} entries; expected one per lag ({max_order})",
                self.gamma.len()
            )));
        }
        for &g in &self.gamma {
            positive("gamma", g)?;
        }
        if self.truncation < 2 {
            return Err(Error::InvalidParameter(
                "truncation level must be at least 2".into(),
            ));
        }
        self.schedule.validate()
    }
}

/// How Gamma-function ratios in the class-count computations are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioMode {
    #[default]
    Exact,
    /// `Gamma(n + a) / Gamma(n) ~ n^a`, for moderately large counts.
    Stirling,
}

/// Shape of the latent class grid `k_1 x ... x k_q`, lag 1 slowest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridShape {
    dims: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl GridShape {
    pub fn new(dims: &[usize]) -> Self {
        let mut strides = vec![1usize; dims.len()];
        for j in (0..dims.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * dims[j + 1];
        }
        let size = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            strides,
            size,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn index(&self, h: &[usize]) -> usize {
        h.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }

    pub fn unravel(&self, mut index: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|s| {
                let h = index / s;
                index %= s;
                h
            })
            .collect()
    }
}

/// One full configuration of the sampler. All indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    /// Number of latent classes per lag.
    pub k: Vec<usize>,
    /// `z[j][i]`: class of lag `j` at the `i`-th modeled point.
    pub z: Vec<Vec<usize>>,
    /// Kernel label of each grid point, laid out by [`GridShape`] over `k`.
    pub zstar: Vec<usize>,
    /// `L` kernels, each a probability vector over categories.
    pub lambda_star: Vec<Vec<f64>>,
    /// Stick fractions; the last is fixed at 1.
    pub sticks: Vec<f64>,
    /// Stick-breaking weights.
    pub pi_star: Vec<f64>,
    /// `pi[j][c][h]`: weight of class `h` for lag `j` taking category `c`.
    pub pi: Vec<Vec<Vec<f64>>>,
}

impl LatentState {
    pub fn n_categories(&self) -> usize {
        self.pi
            .first()
            .map_or_else(|| self.lambda_star.first().map_or(0, Vec::len), Vec::len)
    }

    pub fn max_order(&self) -> usize {
        self.k.len()
    }

    pub fn truncation(&self) -> usize {
        self.lambda_star.len()
    }

    pub fn grid(&self) -> GridShape {
        GridShape::new(&self.k)
    }

    /// Number of distinct classes occupied by `z[j]`, per lag.
    pub fn ktilde(&self) -> Vec<usize> {
        self.z
            .iter()
            .map(|zj| crate::inference::ktilde_of(zj))
            .collect()
    }

    /// Number of distinct kernels in use across the grid.
    pub fn occupied_kernels(&self) -> usize {
        let mut seen = vec![false; self.truncation()];
        for &l in &self.zstar {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }

    /// `p(. | context)`, with `context[j]` the value of lag `j+1`.
    pub fn evaluate_transition(&self, context: &[usize]) -> Result<Vec<f64>> {
        let q = self.max_order();
        let c0 = self.n_categories();
        if context.len() != q {
            return Err(Error::Dimension(format!(
                "context has length {}; expected {q}",
                context.len()
            )));
        }
        if let Some(&bad) = context.iter().find(|&&v| v >= c0) {
            return Err(Error::Dimension(format!(
                "context value {bad} outside 0..{c0}"
            )));
        }
        // Outer product of the per-lag weight vectors, lag 1 slowest.
        let mut weights = vec![1.0];
        for (j, &c) in context.iter().enumerate() {
            let w = &self.pi[j][c];
            if w.len() == 1 {
                continue;
            }
            let mut next = Vec::with_capacity(weights.len() * w.len());
            for &a in &weights {
                next.extend(w.iter().map(|&b| a * b));
            }
            weights = next;
        }
        let mut out = vec![0.0; c0];
        for (g, &wg) in weights.iter().enumerate() {
            if wg == 0.0 {
                continue;
            }
            let kernel = &self.lambda_star[self.zstar[g]];
            for (o, &p) in out.iter_mut().zip(kernel) {
                *o += wg * p;
            }
        }
        Ok(out)
    }

    /// Dense tensor over all `C0^q` contexts.
    pub fn materialize_tensor(&self, cap: u128) -> Result<TransitionTensor> {
        TransitionTensor::from_model(self, cap)
    }

    /// Check normalization, class bounds and grid coverage.
    pub fn check_invariants(&self) -> Result<()> {
        const TOL: f64 = 1e-12;
        let c0 = self.n_categories();
        let l = self.truncation();
        let bad = |msg: String| Err(Error::Consistency(msg));
        if self.sticks.len() != l || self.pi_star.len() != l {
            return bad(format!(
                "stick vectors have lengths {}/{}; expected {l}",
                self.sticks.len(),
                self.pi_star.len()
            ));
        }
        let s: f64 = self.pi_star.iter().sum();
        if (s - 1.0).abs() > TOL || self.pi_star.iter().any(|&p| !(p >= 0.0)) {
            return bad(format!("stick-breaking weights sum to {s}"));
        }
        for (i, lam) in self.lambda_star.iter().enumerate() {
            let s: f64 = lam.iter().sum();
            if lam.len() != c0 || (s - 1.0).abs() > TOL || lam.iter().any(|&p| !(p >= 0.0)) {
                return bad(format!("kernel {i} is not a probability vector (sum {s})"));
            }
        }
        for (j, (zj, &kj)) in self.z.iter().zip(&self.k).enumerate() {
            if kj == 0 || kj > c0 {
                return bad(format!("k[{j}] = {kj} outside 1..={c0}"));
            }
            if let Some(&m) = zj.iter().max() {
                if m >= kj {
                    return bad(format!("lag {} has class {} but k = {kj}", j + 1, m + 1));
                }
            }
            for (c, w) in self.pi[j].iter().enumerate() {
                let s: f64 = w.iter().sum();
                if w.len() != kj || (s - 1.0).abs() > TOL || w.iter().any(|&p| !(p >= 0.0)) {
                    return bad(format!(
                        "mixture weights for lag {} category {c} invalid (len {}, sum {s})",
                        j + 1,
                        w.len()
                    ));
                }
            }
        }
        let grid = self.grid();
        if self.zstar.len() != grid.size() {
            return bad(format!(
                "zstar has {} entries; grid has {}",
                self.zstar.len(),
                grid.size()
            ));
        }
        if let Some(&lab) = self.zstar.iter().find(|&&lab| lab >= l) {
            return bad(format!("kernel label {lab} outside 0..{l}"));
        }
        Ok(())
    }
}

/// Anything that yields `p(. | context)` over the full `q`-lag context space.
pub trait TransitionModel {
    fn n_categories(&self) -> usize;
    fn max_order(&self) -> usize;
    fn transition(&self, context: &[usize]) -> Result<Vec<f64>>;
}

impl TransitionModel for LatentState {
    fn n_categories(&self) -> usize {
        LatentState::n_categories(self)
    }
    fn max_order(&self) -> usize {
        LatentState::max_order(self)
    }
    fn transition(&self, context: &[usize]) -> Result<Vec<f64>> {
        self.evaluate_transition(context)
    }
}

/// Dense transition tensor of shape `C0^q x C0`, contexts in lexicographic
/// order with lag 1 the most significant digit.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTensor {
    n_categories: usize,
    max_order: usize,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorRow {
    context: Vec<usize>,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorDoc {
    n_categories: usize,
    max_order: usize,
    rows: Vec<TensorRow>,
}

impl TransitionTensor {
    fn n_rows_checked(n_categories: usize, max_order: usize, cap: u128) -> Result<usize> {
        let rows = (n_categories as u128)
            .checked_pow(max_order as u32)
            .unwrap_or(u128::MAX);
        if rows > cap {
            return Err(Error::TooLarge { rows, cap });
        }
        Ok(rows as usize)
    }

    /// Build from explicit rows (context-major, `C0` entries per row).
    pub fn from_rows(n_categories: usize, max_order: usize, probs: Vec<f64>) -> Result<Self> {
        let rows = Self::n_rows_checked(n_categories, max_order, u128::MAX)?;
        if probs.len() != rows * n_categories {
            return Err(Error::Dimension(format!(
                "expected {} entries, got {}",
                rows * n_categories,
                probs.len()
            )));
        }
        Ok(Self {
            n_categories,
            max_order,
            probs,
        })
    }

    pub fn from_model<M: TransitionModel + ?Sized>(model: &M, cap: u128) -> Result<Self> {
        let (c0, q) = (model.n_categories(), model.max_order());
        let rows = Self::n_rows_checked(c0, q, cap)?;
        let mut probs = Vec::with_capacity(rows * c0);
        for r in 0..rows {
            probs.extend(model.transition(&Self::decode_context(r, c0, q))?);
        }
        Ok(Self {
            n_categories: c0,
            max_order: q,
            probs,
        })
    }

    pub fn n_contexts(&self) -> usize {
        self.probs.len() / self.n_categories
    }

    pub fn context_index(&self, context: &[usize]) -> usize {
        context
            .iter()
            .fold(0, |acc, &c| acc * self.n_categories + c)
    }

    pub fn decode_context(mut index: usize, n_categories: usize, max_order: usize) -> Vec<usize> {
        let mut ctx = vec![0; max_order];
        for slot in ctx.iter_mut().rev() {
            *slot = index % n_categories;
            index /= n_categories;
        }
        ctx
    }

    pub fn row(&self, context: &[usize]) -> &[f64] {
        let i = self.context_index(context);
        &self.probs[i * self.n_categories..(i + 1) * self.n_categories]
    }

    pub fn rows(&self) -> impl Iterator<Item = (Vec<usize>, &[f64])> {
        self.probs
            .chunks(self.n_categories)
            .enumerate()
            .map(|(i, r)| {
                (
                    Self::decode_context(i, self.n_categories, self.max_order),
                    r,
                )
            })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// CSV: one context per row, `w1..wq` then `p1..pC0`; categories 1-based.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (1..=self.max_order)
            .map(|j| format!("w{j}"))
            .chain((1..=self.n_categories).map(|c| format!("p{c}")))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (ctx, row) in self.rows() {
            let fields: Vec<String> = ctx
                .iter()
                .map(|c| (c + 1).to_string())
                .chain(row.iter().map(|p| format!("{p:.17e}")))
                .collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    /// JSON document with the same schema as the CSV (0-based contexts).
    pub fn to_json(&self) -> Result<String> {
        let doc = TensorDoc {
            n_categories: self.n_categories,
            max_order: self.max_order,
            rows: self
                .rows()
                .map(|(context, p)| TensorRow {
                    context,
                    probs: p.to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TensorDoc = serde_json::from_str(text)?;
        let mut t = Self::from_rows(
            doc.n_categories,
            doc.max_order,
            vec![0.0; doc.n_categories.pow(doc.max_order as u32) * doc.n_categories],
        )?;
        for row in doc.rows {
            if row.probs.len() != doc.n_categories {
                return Err(Error::Dimension(
                    "row with wrong number of probabilities".into(),
                ));
            }
            let i = t.context_index(&row.context);
            t.probs[i * doc.n_categories..(i + 1) * doc.n_categories].copy_from_slice(&row.probs);
        }
        Ok(t)
    }
}

impl TransitionModel for TransitionTensor {
    fn n_categories(&self) -> usize {
        self.n_categories
    }
    fn max_order(&self) -> usize {
        self.max_order
    }
    fn transition(&self, context: &[usize]) -> Result<Vec<f64>> {
        if context.len() != self.max_order {
            return Err(Error::Dimension(format!(
                "context has length {}; expected {}",
                context.len(),
                self.max_order
            )));
        }
        Ok(self.row(context).to_vec())
    }
}

/// `(C0 - 1) prod_j k_j + C0 sum_j (k_j - 1)`.
pub fn parameter_count(k: &[usize], n_categories: usize) -> u128 {
    let c = n_categories as u128;
    let core: u128 = k.iter().map(|&x| x as u128).product();
    let weights: u128 = k.iter().map(|&x| x as u128 - 1).sum();
    (c - 1) * core + c * weights
}

/// Parameters of the unrestricted Markov model of order `q`: `(C0-1) C0^q`.
pub fn full_model_parameter_count(n_categories: usize, q: usize) -> u128 {
    let c = n_categories as u128;
    (c - 1) * c.pow(q as u32)
}

/// Log of the prior pmf over `k = 1..=C0` for lag `lag` (1-based):
/// `p(k) ∝ exp(-phi * lag * k)`.
pub fn ln_lag_prior_pmf(phi: f64, lag: usize, n_categories: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n_categories)
        .map(|k| -phi * lag as f64 * k as f64)
        .collect();
    let norm = log_sum_exp(&raw);
    raw.into_iter().map(|x| x - norm).collect()
}

pub fn lag_prior_pmf(phi: f64, lag: usize, n_categories: usize) -> Vec<f64> {
    ln_lag_prior_pmf(phi, lag, n_categories)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Sum over contexts and categories of `|P - P0|`.
pub fn l1_distance(p: &TransitionTensor, p0: &TransitionTensor) -> Result<f64> {
    if p.n_categories != p0.n_categories || p.max_order != p0.max_order {
        return Err(Error::Dimension(format!(
            "tensor shapes differ: ({}, {}) vs ({}, {})",
            p.n_categories, p.max_order, p0.n_categories, p0.max_order
        )));
    }
    Ok(p.probs
        .iter()
        .zip(&p0.probs)
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Average L1 error over paired rows: `sum |P0 - P_hat| / (C0 N)`.
pub fn average_l1_rows(estimate: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    if estimate.is_empty() {
        return Err(Error::Input(
            "average L1 error needs at least one test context".into(),
        ));
    }
    if estimate.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} estimated rows vs {} true rows",
            estimate.len(),
            truth.len()
        )));
    }
    let c0 = truth[0].len();
    let mut total = 0.0;
    for (e, t) in estimate.iter().zip(truth) {
        if e.len() != c0 || t.len() != c0 {
            return Err(Error::Dimension("rows of unequal length".into()));
        }
        total += e.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    Ok(total / (c0 as f64 * estimate.len() as f64))
}

/// Average L1 error of `estimate` against `truth` over the given contexts.
pub fn average_l1_error<E, T>(estimate: &E, truth: &T, contexts: &[Vec<usize>]) -> Result<f64>
where
    E: TransitionModel + ?Sized,
    T: TransitionModel + ?Sized,
{
    if contexts.is_empty() {
        return Err(Error::Input(
            "average L1 error needs at least one test context".into(),
        ));
    }
    let est = contexts
        .iter()
        .map(|c| estimate.transition(c))
        .collect::<Result<Vec<_>>>()?;
    let tru = contexts
        .iter()
        .map(|c| truth.transition(c))
        .collect::<Result<Vec<_>>>()?;
    average_l1_rows(&est, &tru)
}

/// Prior probability that the allocations of lag `lag` (1-based) occupy a
/// single class, given the lag's category counts:
///
/// ```text
/// [prod_r gamma^(n_r)] * sum_k p0(k) k / prod_r (k gamma)^(n_r)
/// ```
pub fn ktilde_prior_prob_one(
    gamma: f64,
    phi: f64,
    lag: usize,
    counts: &[usize],
    n_categories: usize,
    mode: RatioMode,
) -> f64 {
    let ln_p0 = ln_lag_prior_pmf(phi, lag, n_categories);
    let terms: Vec<f64> = (1..=n_categories)
        .map(|k| {
            let kg = k as f64 * gamma;
            let ratio: f64 = counts
                .iter()
                .filter(|&&n| n > 0)
                .map(|&n| match mode {
                    RatioMode::Exact => ln_rising(gamma, n) - ln_rising(kg, n),
                    RatioMode::Stirling => {
                        // Gamma(g+n)/Gamma(kg+n) ~ n^(g - kg)
                        (ln_gamma(kg) - ln_gamma(gamma)) + (gamma - kg) * (n as f64).ln()
                    }
                })
                .sum();
            ln_p0[k - 1] + (k as f64).ln() + ratio
        })
        .collect();
    log_sum_exp(&terms).exp()
}
