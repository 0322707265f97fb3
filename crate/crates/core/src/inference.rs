//! Posterior summaries, lag selection, hypothesis tests and chain
//! diagnostics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ktilde_prior_prob_one, Hyperparams, RatioMode, Schedule};
use crate::seqdata::SequenceData;

/// Number of distinct values in `z`.
pub fn ktilde_of(z: &[usize]) -> usize {
    let mut seen: Vec<usize> = z.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// One stored draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSample {
    pub iter: usize,
    pub k: Vec<usize>,
    pub ktilde: Vec<usize>,
    pub loglik: f64,
    pub n_kernels: usize,
    /// Transition vectors for the chain's snapshot contexts, in order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transitions: Option<Vec<Vec<f64>>>,
    /// Dense transition tensor, rows in lexicographic context order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor: Option<Vec<f64>>,
}

/// Chain-level metadata, stored next to the sample stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub n_categories: usize,
    pub max_order: usize,
    pub schedule: Schedule,
    pub seed: u64,
    pub contexts: Vec<Vec<usize>>,
}

/// Stored samples of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    pub n_categories: usize,
    pub max_order: usize,
    pub schedule: Schedule,
    pub seed: u64,
    /// Contexts whose transitions are recorded in each sample.
    pub contexts: Vec<Vec<usize>>,
    pub samples: Vec<ChainSample>,
}

impl PosteriorChain {
    pub fn meta(&self) -> ChainMeta {
        ChainMeta {
            n_categories: self.n_categories,
            max_order: self.max_order,
            schedule: self.schedule,
            seed: self.seed,
            contexts: self.contexts.clone(),
        }
    }

    pub fn from_parts(meta: ChainMeta, samples: Vec<ChainSample>) -> Result<Self> {
        let chain = Self {
            n_categories: meta.n_categories,
            max_order: meta.max_order,
            schedule: meta.schedule,
            seed: meta.seed,
            contexts: meta.contexts,
            samples,
        };
        chain.validate()?;
        Ok(chain)
    }

    /// Check `1 <= ktilde_j <= k_j <= C0` and vector lengths in every sample.
    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if s.k.len() != self.max_order || s.ktilde.len() != self.max_order {
                return Err(Error::Dimension(format!(
                    "sample {} has wrong order",
                    s.iter
                )));
            }
            for (&kt, &k) in s.ktilde.iter().zip(&s.k) {
                if kt < 1 || kt > k || k > self.n_categories {
                    return Err(Error::Consistency(format!(
                        "sample {}: need 1 <= ktilde <= k <= C0, got {kt}, {k}",
                        s.iter
                    )));
                }
            }
            if let Some(t) = &s.transitions {
                if t.len() != self.contexts.len() {
                    return Err(Error::Dimension(format!(
                        "sample {} has {} transition vectors for {} contexts",
                        s.iter,
                        t.len(),
                        self.contexts.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// One JSON object per line, samples in order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.samples {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(meta: ChainMeta, input: R) -> Result<Self> {
        let mut samples = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: ChainSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            samples.push(s);
        }
        Self::from_parts(meta, samples)
    }

    /// Per-sample traces: `loglik`, `n_kernels`, then `k_j` and `ktilde_j`.
    pub fn traces(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = vec![
            (
                "loglik".to_string(),
                self.samples.iter().map(|s| s.loglik).collect(),
            ),
            (
                "n_kernels".to_string(),
                self.samples.iter().map(|s| s.n_kernels as f64).collect(),
            ),
        ];
        for j in 0..self.max_order {
            out.push((
                format!("k{}", j + 1),
                self.samples.iter().map(|s| s.k[j] as f64).collect(),
            ));
        }
        for j in 0..self.max_order {
            out.push((
                format!("ktilde{}", j + 1),
                self.samples.iter().map(|s| s.ktilde[j] as f64).collect(),
            ));
        }
        out
    }
}

fn require_samples(chain: &PosteriorChain) -> Result<()> {
    if chain.is_empty() {
        Err(Error::Input("chain has no stored samples".into()))
    } else {
        Ok(())
    }
}

/// Per lag, the fraction of samples with `ktilde_j > 1`.
pub fn lag_inclusion(chain: &PosteriorChain) -> Result<Vec<f64>> {
    require_samples(chain)?;
    let n = chain.len() as f64;
    Ok((0..chain.max_order)
        .map(|j| chain.samples.iter().filter(|s| s.ktilde[j] > 1).count() as f64 / n)
        .collect())
}

/// Largest lag with `ktilde_j > 1`, or 0 when there is none.
pub fn maximal_order(ktilde: &[usize]) -> usize {
    ktilde.iter().rposition(|&k| k > 1).map_or(0, |j| j + 1)
}

/// Relative frequencies of the maximal order over `0..=q`.
pub fn maximal_order_distribution(chain: &PosteriorChain) -> Result<Vec<f64>> {
    require_samples(chain)?;
    let mut pmf = vec![0.0; chain.max_order + 1];
    let w = 1.0 / chain.len() as f64;
    for s in &chain.samples {
        pmf[maximal_order(&s.ktilde)] += w;
    }
    Ok(pmf)
}

/// Constraint on the occupied class count of one lag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LagConstraint {
    /// `ktilde_j = 1`: the lag is excluded.
    One,
    /// `ktilde_j > 1`: the lag matters.
    Many,
}

/// Predicate over `ktilde` vectors: a conjunction of per-lag constraints,
/// optionally negated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypothesis {
    /// Lag (1-based) to constraint.
    constraints: BTreeMap<usize, LagConstraint>,
    negated: bool,
}

impl Hypothesis {
    pub fn new(constraints: BTreeMap<usize, LagConstraint>) -> Result<Self> {
        if constraints.is_empty() {
            return Err(Error::InvalidParameter(
                "hypothesis constrains no lag".into(),
            ));
        }
        if constraints.contains_key(&0) {
            return Err(Error::InvalidParameter("lags are numbered from 1".into()));
        }
        Ok(Self {
            constraints,
            negated: false,
        })
    }

    pub fn constraints(&self) -> &BTreeMap<usize, LagConstraint> {
        &self.constraints
    }

    pub fn is_negated(&self) -> bool {
        self.negated
    }

    pub fn complement(&self) -> Self {
        Self {
            constraints: self.constraints.clone(),
            negated: !self.negated,
        }
    }

    pub fn max_lag(&self) -> usize {
        *self.constraints.keys().next_back().expect("nonempty")
    }

    pub fn holds(&self, ktilde: &[usize]) -> bool {
        let all = self.constraints.iter().all(|(&lag, c)| {
            let k = ktilde.get(lag - 1).copied().unwrap_or(1);
            match c {
                LagConstraint::One => k == 1,
                LagConstraint::Many => k > 1,
            }
        });
        all != self.negated
    }

    /// Prior probability from the per-lag occupied-class prior, treating
    /// lags as independent.
    pub fn prior_prob(
        &self,
        data: &SequenceData,
        hyper: &Hyperparams,
        mode: RatioMode,
    ) -> Result<f64> {
        if self.max_lag() > data.max_order() {
            return Err(Error::InvalidParameter(format!(
                "hypothesis refers to lag {} beyond order {}",
                self.max_lag(),
                data.max_order()
            )));
        }
        let p: f64 = self
            .constraints
            .iter()
            .map(|(&lag, c)| {
                let one = ktilde_prior_prob_one(
                    hyper.gamma[lag - 1],
                    hyper.phi,
                    lag,
                    data.lag_counts(lag - 1),
                    data.n_categories(),
                    mode,
                );
                match c {
                    LagConstraint::One => one,
                    LagConstraint::Many => 1.0 - one,
                }
            })
            .product();
        Ok(if self.negated { 1.0 - p } else { p })
    }
}

impl std::fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.negated {
            write!(f, "!")?;
        }
        let terms: Vec<String> = self
            .constraints
            .iter()
            .map(|(lag, c)| match c {
                LagConstraint::One => format!("k{lag}=1"),
                LagConstraint::Many => format!("k{lag}>1"),
            })
            .collect();
        write!(f, "{}", terms.join(" & "))
    }
}

/// A named test of `h0` against `h1`, with optional prior probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisTest {
    pub name: String,
    pub h0: Hypothesis,
    pub h1: Hypothesis,
    /// `(p(H0), p(H1))` when given explicitly.
    pub priors: Option<(f64, f64)>,
}

fn parse_expr(text: &str, line: usize) -> Result<Hypothesis> {
    let err = |message: String| Error::Parse { line, message };
    let text = text.trim();
    let (negated, body) = match text.strip_prefix('!') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let mut constraints = BTreeMap::new();
    for term in body.split('&') {
        let t: String = term.chars().filter(|c| !c.is_whitespace()).collect();
        let rest = t
            .strip_prefix('k')
            .ok_or_else(|| err(format!("expected a term like k3=1 or k3>1, found '{t}'")))?;
        let (lag, c) = if let Some(l) = rest.strip_suffix("=1") {
            (l, LagConstraint::One)
        } else if let Some(l) = rest.strip_suffix(">1") {
            (l, LagConstraint::Many)
        } else {
            return Err(err(format!("expected '=1' or '>1' in '{t}'")));
        };
        let lag: usize = lag
            .parse()
            .map_err(|_| err(format!("invalid lag in '{t}'")))?;
        if lag == 0 {
            return Err(err("lags are numbered from 1".into()));
        }
        if let Some(prev) = constraints.insert(lag, c) {
            if prev != c {
                return Err(err(format!(
                    "lag {lag} is constrained to be both =1 and >1"
                )));
            }
        }
    }
    let mut h = Hypothesis::new(constraints).map_err(|e| err(e.to_string()))?;
    h.negated = negated;
    Ok(h)
}

/// Parse a hypothesis file.
///
/// One test per line: `name: H0 [vs H1] [; prior = p0[, p1]]`, where each
/// side is `[!] term & term ...` and a term is `k<lag>=1` or `k<lag>>1`.
/// Without `vs`, H1 is the complement of H0. Blank lines and `#` comments
/// are skipped.
pub fn parse_hypotheses(text: &str) -> Result<Vec<HypothesisTest>> {
    let mut tests = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let err = |message: String| Error::Parse { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (name, rest) = content
            .split_once(':')
            .ok_or_else(|| err("expected 'name: hypothesis'".into()))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(err("empty hypothesis name".into()));
        }
        let (exprs, prior) = match rest.split_once(';') {
            Some((e, p)) => (e, Some(p)),
            None => (rest, None),
        };
        let (h0, h1) = match exprs.split_once("vs") {
            Some((a, b)) => {
                let h0 = parse_expr(a, line)?;
                let h1 = parse_expr(b, line)?;
                if h0 == h1 {
                    return Err(err("H0 and H1 are identical".into()));
                }
                (h0, h1)
            }
            None => {
                let h0 = parse_expr(exprs, line)?;
                let h1 = h0.complement();
                (h0, h1)
            }
        };
        let priors = match prior {
            None => None,
            Some(p) => {
                let p = p.trim();
                let values = p
                    .strip_prefix("prior")
                    .and_then(|r| r.trim_start().strip_prefix('='))
                    .ok_or_else(|| err(format!("expected 'prior = p0[, p1]', found '{p}'")))?;
                let nums = values
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| err(format!("invalid prior: {e}")))?;
                let pair = match nums[..] {
                    [p0] => (p0, 1.0 - p0),
                    [p0, p1] => (p0, p1),
                    _ => return Err(err("expected one or two prior values".into())),
                };
                for v in [pair.0, pair.1] {
                    if !(v > 0.0 && v < 1.0) {
                        return Err(err(format!("prior {v} not in (0, 1)")));
                    }
                }
                Some(pair)
            }
        };
        tests.push(HypothesisTest {
            name: name.to_string(),
            h0,
            h1,
            priors,
        });
    }
    Ok(tests)
}

/// Fraction of samples satisfying `hyp`.
pub fn posterior_prob(chain: &PosteriorChain, hyp: &Hypothesis) -> Result<f64> {
    require_samples(chain)?;
    Ok(chain
        .samples
        .iter()
        .filter(|s| hyp.holds(&s.ktilde))
        .count() as f64
        / chain.len() as f64)
}

/// A Bayes factor that may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BayesFactor {
    Finite(f64),
    PlusInfinity,
}

impl BayesFactor {
    pub fn value(&self) -> f64 {
        match self {
            Self::Finite(v) => *v,
            Self::PlusInfinity => f64::INFINITY,
        }
    }
}

impl Serialize for BayesFactor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Finite(v) => s.serialize_f64(*v),
            Self::PlusInfinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for BayesFactor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Self::Finite(v)),
            Raw::Str(s) if s == "inf" => Ok(Self::PlusInfinity),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "invalid Bayes factor '{s}'"
            ))),
        }
    }
}

impl std::fmt::Display for BayesFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Finite(v) => write!(f, "{v}"),
            Self::PlusInfinity => write!(f, "inf"),
        }
    }
}

/// `BF_10 = [P(H1|y) / p(H1)] / [P(H0|y) / p(H0)]`.
pub fn bayes_factor_from_probs(
    post0: f64,
    post1: f64,
    prior0: f64,
    prior1: f64,
) -> Result<BayesFactor> {
    for p in [prior0, prior1] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "prior probability {p} not in (0, 1)"
            )));
        }
    }
    if post0 == 0.0 && post1 == 0.0 {
        return Err(Error::UndefinedBayesFactor);
    }
    if post0 == 0.0 {
        return Ok(BayesFactor::PlusInfinity);
    }
    Ok(BayesFactor::Finite((post1 / prior1) / (post0 / prior0)))
}

/// Bayes factor of `h1` against `h0` from the chain's sample frequencies.
pub fn bayes_factor(
    chain: &PosteriorChain,
    h0: &Hypothesis,
    h1: &Hypothesis,
    prior0: f64,
    prior1: f64,
) -> Result<BayesFactor> {
    let post0 = posterior_prob(chain, h0)?;
    let post1 = posterior_prob(chain, h1)?;
    bayes_factor_from_probs(post0, post1, prior0, prior1)
}

/// Outcome of one [`HypothesisTest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub h0: String,
    pub h1: String,
    pub p0: f64,
    pub p1: f64,
    pub post0: f64,
    pub post1: f64,
    pub bf10: Option<BayesFactor>,
}

/// Evaluate a test. Priors come from the test itself or, when absent, from
/// the per-lag occupied-class prior for `data`. An undefined Bayes factor
/// or unusable prior is reported as `bf10 = None`.
pub fn run_test(
    chain: &PosteriorChain,
    test: &HypothesisTest,
    data: &SequenceData,
    hyper: &Hyperparams,
    mode: RatioMode,
) -> Result<TestResult> {
    let (p0, p1) = match test.priors {
        Some(p) => p,
        None => (
            test.h0.prior_prob(data, hyper, mode)?,
            test.h1.prior_prob(data, hyper, mode)?,
        ),
    };
    let post0 = posterior_prob(chain, &test.h0)?;
    let post1 = posterior_prob(chain, &test.h1)?;
    let bf10 = match bayes_factor_from_probs(post0, post1, p0, p1) {
        Ok(bf) => Some(bf),
        Err(Error::UndefinedBayesFactor | Error::InvalidParameter(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(TestResult {
        name: test.name.clone(),
        h0: test.h0.to_string(),
        h1: test.h1.to_string(),
        p0,
        p1,
        post0,
        post1,
        bf10,
    })
}

/// Average of the recorded transition vectors, one per snapshot context.
pub fn posterior_mean_transition(chain: &PosteriorChain) -> Result<Vec<Vec<f64>>> {
    require_samples(chain)?;
    let c0 = chain.n_categories;
    let mut sum = vec![vec![0.0; c0]; chain.contexts.len()];
    for s in &chain.samples {
        let t = s.transitions.as_ref().ok_or_else(|| {
            Error::Config(format!("sample {} has no transition snapshots", s.iter))
        })?;
        for (acc, v) in sum.iter_mut().zip(t) {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
    }
    for row in sum.iter_mut() {
        let total: f64 = row.iter().sum();
        for a in row.iter_mut() {
            *a /= total;
        }
    }
    Ok(sum)
}

/// Average of the recorded dense tensors.
pub fn posterior_mean_tensor(chain: &PosteriorChain) -> Result<Vec<f64>> {
    require_samples(chain)?;
    let mut sum: Vec<f64> = Vec::new();
    for s in &chain.samples {
        let t = s
            .tensor
            .as_ref()
            .ok_or_else(|| Error::Config(format!("sample {} has no tensor snapshot", s.iter)))?;
        if sum.is_empty() {
            sum = vec![0.0; t.len()];
        }
        for (a, x) in sum.iter_mut().zip(t) {
            *a += x;
        }
    }
    let n = chain.len() as f64;
    sum.iter_mut().for_each(|a| *a /= n);
    Ok(sum)
}

/// Index of the largest probability; ties go to the smaller index.
pub fn predict_one_step(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Fraction of positions where `predicted` differs from `observed`.
pub fn classification_error(predicted: &[usize], observed: &[usize]) -> Result<f64> {
    if predicted.len() != observed.len() || predicted.is_empty() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} observations",
            predicted.len(),
            observed.len()
        )));
    }
    let wrong = predicted
        .iter()
        .zip(observed)
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / predicted.len() as f64)
}

/// Monte Carlo standard error of the trace mean by non-overlapping batch
/// means. Trailing values that do not fill a batch are dropped.
pub fn batch_means_mcse(trace: &[f64], batch_len: usize) -> Result<f64> {
    if batch_len == 0 || trace.len() < 2 * batch_len {
        return Err(Error::Input(format!(
            "trace of length {} is too short for batches of {batch_len}",
            trace.len()
        )));
    }
    let means: Vec<f64> = trace
        .chunks_exact(batch_len)
        .map(|b| b.iter().sum::<f64>() / batch_len as f64)
        .collect();
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((var / n).sqrt())
}

/// Empirical quantiles of every prefix of `trace`: entry `[p][n-1]` is the
/// order statistic of rank `ceil(probs[p] * n)` (at least 1) of the first
/// `n` values.
pub fn running_quantiles(trace: &[f64], probs: &[f64]) -> Vec<Vec<f64>> {
    let mut sorted: Vec<f64> = Vec::with_capacity(trace.len());
    let mut out = vec![Vec::with_capacity(trace.len()); probs.len()];
    for &x in trace {
        let pos = sorted.partition_point(|&v| v < x);
        sorted.insert(pos, x);
        let n = sorted.len();
        for (path, &p) in out.iter_mut().zip(probs) {
            let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
            path.push(sorted[rank - 1]);
        }
    }
    out
}

/// JSON summary of a chain and its tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub n_samples: usize,
    pub inclusion: Vec<f64>,
    pub order_pmf: BTreeMap<String, f64>,
    pub tests: Vec<TestResult>,
    /// Batch-means standard errors per trace; absent when the chain is too
    /// short.
    pub mcse: BTreeMap<String, Option<f64>>,
}

/// Build the summary for `chain`, with MCSE from batches of `batch_len`.
pub fn summarize(
    chain: &PosteriorChain,
    tests: Vec<TestResult>,
    batch_len: usize,
) -> Result<SummaryReport> {
    let order = maximal_order_distribution(chain)?;
    let order_pmf = order
        .iter()
        .enumerate()
        .map(|(r, p)| (r.to_string(), *p))
        .collect();
    let mcse = chain
        .traces()
        .into_iter()
        .map(|(name, t)| (name, batch_means_mcse(&t, batch_len).ok()))
        .collect();
    Ok(SummaryReport {
        n_samples: chain.len(),
        inclusion: lag_inclusion(chain)?,
        order_pmf,
        tests,
        mcse,
    })
}

/// Distinct `ktilde` configurations and their frequencies, most frequent
/// first (ties in lexicographic order).
pub fn ktilde_configurations(chain: &PosteriorChain) -> Vec<(Vec<usize>, f64)> {
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for s in &chain.samples {
        *counts.entry(s.ktilde.clone()).or_default() += 1;
    }
    let n = chain.len().max(1) as f64;
    let mut v: Vec<(Vec<usize>, f64)> =
        counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

/// Lags (1-based) whose inclusion proportion is at least `threshold`.
pub fn selected_lags(inclusion: &[f64], threshold: f64) -> BTreeSet<usize> {
    inclusion
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(j, _)| j + 1)
        .collect()
}
