//! Synthetic sparse higher-order chains, a smoothed full-table estimator,
//! and the replicate harness comparing the two on held-out data.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{
    classification_error, posterior_mean_transition, predict_one_step, PosteriorChain,
};
use crate::model::{
    average_l1_rows, Hyperparams, RatioMode, Schedule, TransitionModel, TransitionTensor,
};
use crate::random::{chain_rng, derive_seed};
use crate::sampler::{fit, ChainOptions};
use crate::seqdata::{build_lag_design, contexts_at, SequenceData};

/// Steps simulated and discarded before a chain is recorded.
pub const WARMUP: usize = 200;

/// Map applied to uniforms when building true transition rows.
pub fn shape_fn(u: f64) -> f64 {
    let a = u * u;
    let b = (1.0 - u) * (1.0 - u);
    if a + b == 0.0 {
        0.5
    } else {
        a / (a + b)
    }
}

/// A sparse true process: only the lags in `lags` affect the next value.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueProcess {
    n_categories: usize,
    /// Important lags, 1-based and increasing.
    lags: Vec<usize>,
    max_order: usize,
    /// Rows over important-lag contexts, first listed lag most significant.
    table: TransitionTensor,
}

impl TrueProcess {
    /// Build from explicit rows over the important-lag contexts. The maximal
    /// order is the largest important lag plus two.
    pub fn new(n_categories: usize, lags: Vec<usize>, rows: Vec<f64>) -> Result<Self> {
        let lags = normalize_lags(&lags)?;
        let max_order = lags.last().copied().unwrap_or(0) + 2;
        let table = TransitionTensor::from_rows(n_categories, lags.len(), rows)?;
        for (ctx, r) in table.rows() {
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-12 || r.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::InvalidParameter(format!(
                    "row for {ctx:?} is not a probability vector"
                )));
            }
        }
        Ok(Self {
            n_categories,
            lags,
            max_order,
            table,
        })
    }

    pub fn lags(&self) -> &[usize] {
        &self.lags
    }

    pub fn table(&self) -> &TransitionTensor {
        &self.table
    }

    fn project(&self, context: &[usize]) -> Vec<usize> {
        self.lags.iter().map(|&l| context[l - 1]).collect()
    }

    /// Row for a full `q`-lag context.
    pub fn row(&self, context: &[usize]) -> &[f64] {
        self.table.row(&self.project(context))
    }
}

impl TransitionModel for TrueProcess {
    fn n_categories(&self) -> usize {
        self.n_categories
    }
    fn max_order(&self) -> usize {
        self.max_order
    }
    fn transition(&self, context: &[usize]) -> Result<Vec<f64>> {
        if context.len() != self.max_order || context.iter().any(|&c| c >= self.n_categories) {
            return Err(Error::Dimension(format!("invalid context {context:?}")));
        }
        Ok(self.row(context).to_vec())
    }
}

fn normalize_lags(lags: &[usize]) -> Result<Vec<usize>> {
    let mut v = lags.to_vec();
    v.sort_unstable();
    v.dedup();
    if v.len() != lags.len() || v.contains(&0) {
        return Err(Error::InvalidParameter(format!(
            "lags must be distinct and positive (got {lags:?})"
        )));
    }
    Ok(v)
}

/// Draw a true process: for every important-lag context, `p(c) = f(U_c)` of
/// the probability left over by categories before `c`, the last category
/// taking the remainder.
pub fn generate_true_tensor<R: Rng + ?Sized>(
    n_categories: usize,
    lags: &[usize],
    rng: &mut R,
) -> Result<TrueProcess> {
    if n_categories < 2 {
        return Err(Error::InvalidParameter(
            "need at least two categories".into(),
        ));
    }
    let n_rows = n_categories.pow(lags.len() as u32);
    let mut rows = Vec::with_capacity(n_rows * n_categories);
    for _ in 0..n_rows {
        let mut rest = 1.0;
        for _ in 0..n_categories - 1 {
            let p = shape_fn(rng.random::<f64>()) * rest;
            rows.push(p);
            rest -= p;
        }
        rows.push(rest.max(0.0));
    }
    TrueProcess::new(n_categories, lags.to_vec(), rows)
}

/// Simulate `n_total` values: `q` uniform starting values, [`WARMUP`]
/// discarded steps, then the recorded trajectory.
pub fn simulate_chain<R: Rng + ?Sized>(
    proc: &TrueProcess,
    n_total: usize,
    rng: &mut R,
) -> Vec<usize> {
    let q = proc.max_order;
    let c0 = proc.n_categories;
    let mut y: Vec<usize> = (0..q).map(|_| rng.random_range(0..c0)).collect();
    let mut ctx = vec![0usize; q];
    for _ in 0..WARMUP + n_total {
        let t = y.len();
        for (j, c) in ctx.iter_mut().enumerate() {
            *c = y[t - 1 - j];
        }
        y.push(crate::random::categorical(proc.row(&ctx), rng));
    }
    y.split_off(q + WARMUP)
}

/// Smoothed frequency estimate over the contexts of `lags` (1-based):
/// `(n(ctx, y) + s) / (n(ctx) + C0 s)`.
pub fn mle_oracle(data: &SequenceData, lags: &[usize], smoothing: f64) -> Result<TransitionTensor> {
    let lags = normalize_lags(lags)?;
    if lags.last().is_some_and(|&l| l > data.max_order()) {
        return Err(Error::InvalidParameter(format!(
            "lags {lags:?} exceed the order {}",
            data.max_order()
        )));
    }
    if smoothing < 0.0 || !smoothing.is_finite() {
        return Err(Error::InvalidParameter(
            "smoothing must be nonnegative".into(),
        ));
    }
    let c0 = data.n_categories();
    let mut counts: HashMap<usize, Vec<u32>> = HashMap::new();
    for (i, &y) in data.responses().iter().enumerate() {
        let idx = lags.iter().fold(0, |acc, &l| acc * c0 + data.lag(l - 1)[i]);
        counts.entry(idx).or_insert_with(|| vec![0; c0])[y] += 1;
    }
    let n_rows = c0.pow(lags.len() as u32);
    let mut probs = Vec::with_capacity(n_rows * c0);
    for r in 0..n_rows {
        match counts.get(&r) {
            Some(cell) => {
                let total: u32 = cell.iter().sum();
                let denom = total as f64 + c0 as f64 * smoothing;
                probs.extend(cell.iter().map(|&n| (n as f64 + smoothing) / denom));
            }
            None => probs.extend(std::iter::repeat_n(1.0 / c0 as f64, c0)),
        }
    }
    TransitionTensor::from_rows(c0, lags.len(), probs)
}

/// A simulation case: number of categories and important lags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub label: String,
    pub n_categories: usize,
    pub lags: Vec<usize>,
}

/// Labels of the built-in cases.
pub const CASE_LABELS: [&str; 8] = ["A", "B", "C", "D", "E", "F", "G", "H"];

impl CaseSpec {
    pub fn builtin(label: &str) -> Option<Self> {
        let (c0, lags): (usize, &[usize]) = match label {
            "A" => (4, &[1, 2, 3]),
            "B" => (3, &[1, 2, 3]),
            "C" => (4, &[1, 2, 4]),
            "D" => (3, &[1, 2, 4]),
            "E" => (4, &[1, 3, 5]),
            "F" => (3, &[1, 3, 5]),
            "G" => (3, &[1, 4, 8]),
            "H" => (2, &[1, 4, 8]),
            _ => return None,
        };
        Some(Self {
            label: label.to_string(),
            n_categories: c0,
            lags: lags.to_vec(),
        })
    }

    /// Parse a built-in label (`A`..`H`) or a custom case `[C0,{l1,l2,...}]`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if let Some(c) = Self::builtin(&t.to_ascii_uppercase()) {
            return Ok(c);
        }
        let bad = || {
            Error::InvalidParameter(format!(
                "unknown case '{text}'; use one of {} or [C0,{{lag,...}}]",
                CASE_LABELS.join(", ")
            ))
        };
        let inner: String = t
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(bad)?
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        let (c0, rest) = inner.split_once(',').ok_or_else(bad)?;
        let c0: usize = c0.parse().map_err(|_| bad())?;
        let lags = rest
            .strip_prefix('{')
            .and_then(|s| s.strip_suffix('}'))
            .ok_or_else(bad)?
            .split(',')
            .map(|l| l.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        if c0 < 2 {
            return Err(bad());
        }
        let lags = normalize_lags(&lags)?;
        let label = format!(
            "[{c0},{{{}}}]",
            lags.iter()
                .map(|l| l.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        Ok(Self {
            label,
            n_categories: c0,
            lags,
        })
    }

    pub fn max_order(&self) -> usize {
        self.lags.iter().copied().max().unwrap_or(0) + 2
    }
}

/// Settings of one simulation study.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub case: CaseSpec,
    /// Training length `T`.
    pub t_train: usize,
    /// Held-out length `N`.
    pub n_test: usize,
    pub n_reps: usize,
    pub master_seed: u64,
    pub schedule: Schedule,
    pub mode: RatioMode,
    pub init_iters: usize,
    pub smoothing: f64,
    /// Overrides the default hyperparameters for the case (schedule excluded).
    pub hyper: Option<Hyperparams>,
}

impl ExperimentConfig {
    pub fn new(
        case: CaseSpec,
        t_train: usize,
        n_test: usize,
        n_reps: usize,
        master_seed: u64,
    ) -> Self {
        Self {
            case,
            t_train,
            n_test,
            n_reps,
            master_seed,
            schedule: Schedule::desk(),
            mode: RatioMode::Exact,
            init_iters: 100,
            smoothing: 0.5,
            hyper: None,
        }
    }

    pub fn hyperparams(&self) -> Hyperparams {
        let mut h = self.hyper.clone().unwrap_or_else(|| {
            Hyperparams::defaults(self.case.n_categories, self.case.max_order())
        });
        h.schedule = self.schedule;
        h
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.case.max_order();
        if self.t_train <= q {
            return Err(Error::InsufficientData {
                len: self.t_train,
                order: q,
            });
        }
        if self.n_test == 0 || self.n_reps == 0 {
            return Err(Error::InvalidParameter(
                "need at least one test point and one replicate".into(),
            ));
        }
        self.hyperparams().validate(q)
    }
}

/// One line of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub case: String,
    #[serde(rename = "T")]
    pub t_train: usize,
    pub rep: usize,
    pub seed: u64,
    pub method: String,
    pub avg_l1: f64,
    pub class_err: f64,
    pub wall_secs: f64,
}

pub const METHOD_MODEL: &str = "ctf";
pub const METHOD_ORACLE: &str = "mle_full";

/// Everything produced by one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub rep: usize,
    pub seed: u64,
    pub truth: TrueProcess,
    pub train: SequenceData,
    pub test_contexts: Vec<Vec<usize>>,
    pub test_responses: Vec<usize>,
    pub chain: PosteriorChain,
    pub rows: Vec<MetricRow>,
}

/// Generate, fit and score replicate `rep`.
pub fn run_replicate(cfg: &ExperimentConfig, rep: usize) -> Result<ReplicateOutcome> {
    let seed = derive_seed(cfg.master_seed, rep as u64);
    let case = &cfg.case;
    let q = case.max_order();
    let mut rng = chain_rng(derive_seed(seed, 0));
    let truth = generate_true_tensor(case.n_categories, &case.lags, &mut rng)?;
    let y = simulate_chain(&truth, cfg.t_train + cfg.n_test, &mut rng);
    let train = build_lag_design(&y[..cfg.t_train], case.n_categories, q)?;
    let test_range = cfg.t_train..cfg.t_train + cfg.n_test;
    let test_contexts = contexts_at(&y, q, test_range.clone());
    let test_responses = y[test_range].to_vec();
    let true_rows: Vec<Vec<f64>> = test_contexts
        .iter()
        .map(|c| truth.row(c).to_vec())
        .collect();

    let hyper = cfg.hyperparams();
    let options = ChainOptions {
        mode: cfg.mode,
        contexts: test_contexts.clone(),
        ..ChainOptions::default()
    };
    let start = Instant::now();
    let fitted = fit(
        &train,
        &hyper,
        derive_seed(seed, 1),
        cfg.init_iters,
        &options,
    )?;
    let est_rows = posterior_mean_transition(&fitted.chain)?;
    let model_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let full: Vec<usize> = (1..=q).collect();
    let oracle = mle_oracle(&train, &full, cfg.smoothing)?;
    let oracle_rows: Vec<Vec<f64>> = test_contexts
        .iter()
        .map(|c| oracle.row(c).to_vec())
        .collect();
    let oracle_secs = start.elapsed().as_secs_f64();

    let score = |rows: &[Vec<f64>]| -> Result<(f64, f64)> {
        let pred: Vec<usize> = rows.iter().map(|r| predict_one_step(r)).collect();
        Ok((
            average_l1_rows(rows, &true_rows)?,
            classification_error(&pred, &test_responses)?,
        ))
    };
    let (m_l1, m_err) = score(&est_rows)?;
    let (o_l1, o_err) = score(&oracle_rows)?;
    let row = |method: &str, avg_l1, class_err, wall_secs| MetricRow {
        case: case.label.clone(),
        t_train: cfg.t_train,
        rep,
        seed,
        method: method.to_string(),
        avg_l1,
        class_err,
        wall_secs,
    };
    let rows = vec![
        row(METHOD_MODEL, m_l1, m_err, model_secs),
        row(METHOD_ORACLE, o_l1, o_err, oracle_secs),
    ];
    Ok(ReplicateOutcome {
        rep,
        seed,
        truth,
        train,
        test_contexts,
        test_responses,
        chain: fitted.chain,
        rows,
    })
}

/// Mean and standard error of one metric for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: String,
    pub n: usize,
    pub avg_l1_mean: f64,
    pub avg_l1_se: f64,
    pub class_err_mean: f64,
    pub class_err_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub case: String,
    #[serde(rename = "T")]
    pub t_train: usize,
    #[serde(rename = "N")]
    pub n_test: usize,
    pub n_reps: usize,
    pub master_seed: u64,
    pub methods: Vec<MethodAggregate>,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn aggregate(cfg: &ExperimentConfig, rows: &[MetricRow]) -> ExperimentSummary {
    let methods = [METHOD_MODEL, METHOD_ORACLE]
        .iter()
        .map(|&m| {
            let sel: Vec<&MetricRow> = rows.iter().filter(|r| r.method == m).collect();
            let l1: Vec<f64> = sel.iter().map(|r| r.avg_l1).collect();
            let err: Vec<f64> = sel.iter().map(|r| r.class_err).collect();
            let (avg_l1_mean, avg_l1_se) = mean_se(&l1);
            let (class_err_mean, class_err_se) = mean_se(&err);
            MethodAggregate {
                method: m.to_string(),
                n: sel.len(),
                avg_l1_mean,
                avg_l1_se,
                class_err_mean,
                class_err_se,
            }
        })
        .collect();
    ExperimentSummary {
        case: cfg.case.label.clone(),
        t_train: cfg.t_train,
        n_test: cfg.n_test,
        n_reps: cfg.n_reps,
        master_seed: cfg.master_seed,
        methods,
    }
}

/// Run every replicate (in parallel on the current rayon pool) and return
/// the metric rows in replicate order with their aggregates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Vec<MetricRow>, ExperimentSummary)> {
    cfg.validate()?;
    let outcomes = (0..cfg.n_reps)
        .into_par_iter()
        .map(|rep| run_replicate(cfg, rep).map(|o| o.rows))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<MetricRow> = outcomes.into_iter().flatten().collect();
    let summary = aggregate(cfg, &rows);
    Ok((rows, summary))
}

/// Write metric rows as CSV with a header.
pub fn write_metrics_csv<W: std::io::Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Input(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
