//! The subcommands. Each one resolves and validates its inputs, computes
//! every output in memory, then writes them in one step.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};

use homc_core::inference::{
    batch_means_mcse, parse_hypotheses, posterior_mean_tensor, posterior_mean_transition,
    predict_one_step, run_test, running_quantiles, summarize,
};
use homc_core::model::DEFAULT_TENSOR_CAP;
use homc_core::seqdata::{build_lag_design, contexts_at, load_sequence};
use homc_core::simgen::{run_experiment, write_metrics_csv, CaseSpec, ExperimentConfig};
use homc_core::{
    fit, Alphabet, ChainMeta, ChainOptions, Hyperparams, PosteriorChain, RatioMode, Schedule,
    SequenceData, TransitionTensor,
};

use crate::config::{GammaSpec, Settings};
use crate::failure::Failure;
use crate::output::{log_run, Staged};

pub const CHAIN_FILE: &str = "chain.jsonl";
pub const META_FILE: &str = "chain_meta.json";

/// Input sequence options shared by `fit` and `test`.
#[derive(Debug, Default, Clone, Args)]
pub struct DataFlags {
    /// Sequence file (overrides data.path).
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Maximal order q (overrides data.max_order).
    #[arg(long, value_name = "Q")]
    pub max_order: Option<usize>,
    /// Trailing points withheld for prediction (overrides data.holdout).
    #[arg(long, value_name = "N")]
    pub holdout: Option<usize>,
}

/// Options of `simulate`.
#[derive(Debug, Default, Clone, Args)]
pub struct SimulateFlags {
    /// Case label A..H or a custom case such as "[3,{1,4}]".
    #[arg(long)]
    pub case: Option<String>,
    /// Training length T.
    #[arg(short = 'T', long = "train", value_name = "T")]
    pub train: Option<usize>,
    /// Held-out length N.
    #[arg(short = 'N', long = "test", value_name = "N")]
    pub test: Option<usize>,
    /// Number of replicates.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Pseudo-count of the full-table estimator.
    #[arg(long)]
    pub smoothing: Option<f64>,
}

/// Everything needed besides the chain itself to reuse a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub chain: ChainMeta,
    pub alphabet: Vec<String>,
    pub n_obs: usize,
    pub hyper: Hyperparams,
    pub mode: RatioMode,
    pub init_iters: usize,
    /// Observed next symbol for each snapshot context, when known.
    pub truths: Vec<Option<usize>>,
    pub full_tensor: bool,
}

struct Training {
    alphabet: Alphabet,
    data: SequenceData,
    holdout_contexts: Vec<Vec<usize>>,
    holdout_truths: Vec<usize>,
}

fn load_training(settings: &Settings, flags: &DataFlags) -> Result<Training, Failure> {
    let d = &settings.file.data;
    let path = flags
        .data
        .clone()
        .or_else(|| d.path.as_ref().map(|p| settings.file_path(p)))
        .ok_or_else(|| Failure::validation("no input sequence; set data.path or pass --data"))?;
    let q = flags.max_order.or(d.max_order).ok_or_else(|| {
        Failure::validation("no maximal order; set data.max_order or pass --max-order")
    })?;
    let holdout = flags.holdout.or(d.holdout).unwrap_or(0);
    let seq = load_sequence(&path, settings.data_format()?, settings.alphabet()?)
        .map_err(|e| Failure::from(e).context(path.display()))?;
    let n = seq.len();
    if holdout >= n {
        return Err(Failure::validation(format!(
            "holdout of {holdout} leaves no training data in a sequence of length {n}"
        )));
    }
    let train = n - holdout;
    let data = build_lag_design(&seq.values[..train], seq.n_categories(), q)?;
    if holdout > 0 && train < q {
        return Err(Failure::validation(
            "holdout contexts need at least q training points",
        ));
    }
    Ok(Training {
        holdout_contexts: contexts_at(&seq.values, q, train..n),
        holdout_truths: seq.values[train..].to_vec(),
        alphabet: seq.alphabet,
        data,
    })
}

fn hyperparams(
    settings: &Settings,
    n_categories: usize,
    q: usize,
    schedule: Schedule,
) -> Result<Hyperparams, Failure> {
    let m = &settings.file.model;
    let mut h = Hyperparams::defaults(n_categories, q).with_schedule(schedule);
    if let Some(a) = m.alpha {
        h.alpha = a;
    }
    if let Some(a) = m.alpha0 {
        h.alpha0 = a;
    }
    if let Some(p) = m.phi {
        h.phi = p;
    }
    if let Some(l) = m.truncation {
        h.truncation = l;
    }
    match &m.gamma {
        Some(GammaSpec::Shared(g)) => h.gamma = vec![*g; q],
        Some(GammaSpec::PerLag(g)) => h.gamma = g.clone(),
        None => {}
    }
    h.validate(q)?;
    Ok(h)
}

/// Parse a context file: per line the symbols of lags 1..q separated by
/// whitespace, optionally followed by `-> symbol` giving the observed next
/// value. Blank lines and `#` comments are skipped.
pub fn parse_contexts(
    text: &str,
    alphabet: &Alphabet,
    q: usize,
) -> Result<Vec<(Vec<usize>, Option<usize>)>, Failure> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: String| Failure::validation(format!("line {}: {m}", n + 1));
        let (ctx, truth) = match line.split_once("->") {
            Some((c, t)) => (c, Some(t.trim())),
            None => (line, None),
        };
        let symbols: Vec<&str> = ctx.split_whitespace().collect();
        if symbols.len() != q {
            return Err(err(format!(
                "expected {q} symbols, found {}",
                symbols.len()
            )));
        }
        let code = |s: &str| {
            alphabet
                .code(s)
                .ok_or_else(|| err(format!("unknown symbol '{s}'")))
        };
        let ctx = symbols
            .iter()
            .map(|s| code(s))
            .collect::<Result<Vec<_>, _>>()?;
        let truth = match truth {
            Some(t) if t.split_whitespace().count() == 1 => Some(code(t)?),
            Some(_) => return Err(err("expected one symbol after '->'".into())),
            None => None,
        };
        out.push((ctx, truth));
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn load_chain(dir: &Path) -> Result<(Manifest, PosteriorChain), Failure> {
    let meta_path = dir.join(META_FILE);
    if !meta_path.exists() {
        return Err(Failure::io(format!(
            "no fitted chain in {}; run `homc fit` first",
            dir.display()
        )));
    }
    let manifest: Manifest = serde_json::from_str(&read_text(&meta_path)?)
        .map_err(|e| Failure::io(format!("{}: {e}", meta_path.display())))?;
    let chain_path = dir.join(CHAIN_FILE);
    let file = fs::File::open(&chain_path)
        .map_err(|e| Failure::io(format!("{}: {e}", chain_path.display())))?;
    let chain = PosteriorChain::read_jsonl(manifest.chain.clone(), BufReader::new(file))
        .map_err(|e| Failure::io(format!("{}: {e}", chain_path.display())))?;
    Ok((manifest, chain))
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Failure::runtime(e.to_string());
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r).map_err(fail)?;
    }
    w.into_inner().map_err(|e| Failure::runtime(e.to_string()))
}

fn lag_headers(q: usize) -> impl Iterator<Item = String> {
    (1..=q).map(|j| format!("w{j}"))
}

fn symbol_of(alphabet: &[String], c: usize) -> String {
    alphabet[c].clone()
}

fn traces_csv(chain: &PosteriorChain) -> Result<Vec<u8>, Failure> {
    let traces = chain.traces();
    let header: Vec<String> = std::iter::once("iter".to_string())
        .chain(traces.iter().map(|(n, _)| n.clone()))
        .collect();
    let rows: Vec<Vec<String>> = chain
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            std::iter::once(s.iter.to_string())
                .chain(traces.iter().map(|(_, t)| t[i].to_string()))
                .collect()
        })
        .collect();
    csv_bytes(&header, &rows)
}

fn quantiles_csv(chain: &PosteriorChain, probs: &[f64]) -> Result<Vec<u8>, Failure> {
    let header: Vec<String> = ["iter".to_string(), "trace".to_string()]
        .into_iter()
        .chain(probs.iter().map(|p| format!("q{p}")))
        .collect();
    let mut rows = Vec::new();
    for (name, trace) in chain.traces() {
        let paths = running_quantiles(&trace, probs);
        for (i, s) in chain.samples.iter().enumerate() {
            let mut row = vec![s.iter.to_string(), name.clone()];
            row.extend(paths.iter().map(|p| p[i].to_string()));
            rows.push(row);
        }
    }
    csv_bytes(&header, &rows)
}

fn transitions_csv(
    alphabet: &[String],
    contexts: &[Vec<usize>],
    means: &[Vec<f64>],
) -> Result<Vec<u8>, Failure> {
    let q = contexts.first().map_or(0, Vec::len);
    let header: Vec<String> = lag_headers(q)
        .chain(alphabet.iter().map(|s| format!("p_{s}")))
        .collect();
    let rows: Vec<Vec<String>> = contexts
        .iter()
        .zip(means)
        .map(|(ctx, p)| {
            ctx.iter()
                .map(|&c| symbol_of(alphabet, c))
                .chain(p.iter().map(|v| v.to_string()))
                .collect()
        })
        .collect();
    csv_bytes(&header, &rows)
}

pub fn cmd_fit(
    settings: &Settings,
    flags: &DataFlags,
    contexts_file: Option<PathBuf>,
) -> Result<(), Failure> {
    let start = Instant::now();
    let training = load_training(settings, flags)?;
    let data = &training.data;
    let (c0, q) = (data.n_categories(), data.max_order());
    let hyper = hyperparams(settings, c0, q, settings.schedule(Schedule::full())?)?;
    let batch_len = settings.batch_len(None)?;
    let probs = settings.quantiles()?;

    let mut contexts = training.holdout_contexts.clone();
    let mut truths: Vec<Option<usize>> = training.holdout_truths.iter().map(|&y| Some(y)).collect();
    let extra = contexts_file.or_else(|| {
        settings
            .file
            .snapshots
            .contexts
            .as_ref()
            .map(|p| settings.file_path(p))
    });
    if let Some(path) = extra {
        let parsed = parse_contexts(&read_text(&path)?, &training.alphabet, q)
            .map_err(|f| f.context(path.display()))?;
        for (ctx, truth) in parsed {
            contexts.push(ctx);
            truths.push(truth);
        }
    }
    let snaps = &settings.file.snapshots;
    let full_tensor = snaps.full_tensor.unwrap_or(false);
    let cap = snaps.tensor_cap.map_or(DEFAULT_TENSOR_CAP, u128::from);
    let rows = (c0 as u128).saturating_pow(q as u32);
    if full_tensor && rows > cap {
        return Err(Failure::validation(format!(
            "full tensor has {rows} context rows, above the cap of {cap}"
        )));
    }
    let options = ChainOptions {
        mode: settings.mode,
        contexts,
        full_tensor,
        tensor_cap: Some(cap),
        audit: settings.file.model.audit.unwrap_or(false),
    };

    let result = fit(data, &hyper, settings.seed, settings.init_iters(), &options)?;
    let chain = result.chain;
    if chain.is_empty() {
        return Err(Failure::validation("the schedule stores no samples"));
    }
    let alphabet = training.alphabet.symbols().to_vec();
    let manifest = Manifest {
        chain: chain.meta(),
        alphabet: alphabet.clone(),
        n_obs: data.n_obs(),
        hyper,
        mode: settings.mode,
        init_iters: settings.init_iters(),
        truths,
        full_tensor,
    };
    let summary = summarize(&chain, Vec::new(), batch_len)?;

    let mut staged = Staged::new(&settings.out);
    let mut jsonl = Vec::new();
    chain.write_jsonl(&mut jsonl)?;
    staged.add(CHAIN_FILE, jsonl);
    staged.add_json(META_FILE, &manifest)?;
    staged.add_json("summary.json", &summary)?;
    staged.add("traces.csv", traces_csv(&chain)?);
    staged.add("quantiles.csv", quantiles_csv(&chain, &probs)?);
    if !chain.contexts.is_empty() {
        let means = posterior_mean_transition(&chain)?;
        staged.add(
            "transitions.csv",
            transitions_csv(&alphabet, &chain.contexts, &means)?,
        );
    }
    if full_tensor {
        let mean = posterior_mean_tensor(&chain)?;
        staged.add(
            "tensor.csv",
            TransitionTensor::from_rows(c0, q, mean)?.to_csv(),
        );
    }
    let names = staged.names().join(",");
    staged.commit()?;
    log_run(
        &settings.out,
        &format!(
            "command=fit seed={} wall_secs={:.3} files={names}",
            settings.seed,
            start.elapsed().as_secs_f64()
        ),
    )?;

    println!(
        "fit: {} samples from {} sweeps, initial k = {:?}",
        chain.len(),
        manifest.hyper.schedule.n_iter,
        result.init_k
    );
    for (j, p) in summary.inclusion.iter().enumerate() {
        println!("  lag {:>2}  inclusion {p:.3}", j + 1);
    }
    println!("wrote {}", settings.out.display());
    Ok(())
}

pub fn cmd_test(
    settings: &Settings,
    flags: &DataFlags,
    hypotheses: Option<PathBuf>,
) -> Result<(), Failure> {
    let start = Instant::now();
    let path = hypotheses
        .or_else(|| {
            settings
                .file
                .test
                .hypotheses
                .as_ref()
                .map(|p| settings.file_path(p))
        })
        .ok_or_else(|| {
            Failure::validation("no hypothesis file; set test.hypotheses or pass --hypotheses")
        })?;
    let tests = parse_hypotheses(&read_text(&path)?)
        .map_err(|e| Failure::from(e).context(path.display()))?;
    if tests.is_empty() {
        return Err(Failure::validation(format!(
            "{}: no hypotheses",
            path.display()
        )));
    }
    let (manifest, chain) = load_chain(&settings.out)?;
    let q = chain.max_order;
    for t in &tests {
        let lag = t.h0.max_lag().max(t.h1.max_lag());
        if lag > q {
            return Err(Failure::validation(format!(
                "hypothesis '{}' refers to lag {lag} but the chain has order {q}",
                t.name
            )));
        }
    }
    let data = if tests.iter().any(|t| t.priors.is_none()) {
        let training = load_training(settings, flags)?;
        let d = training.data;
        if d.n_categories() != chain.n_categories
            || d.max_order() != q
            || d.n_obs() != manifest.n_obs
            || training.alphabet.symbols() != manifest.alphabet.as_slice()
        {
            return Err(Failure::validation(
                "the configured data does not match the fitted chain",
            ));
        }
        d
    } else {
        // priors are all explicit, so the design only fixes the dimensions
        SequenceData::from_design(vec![vec![0]; q], vec![0], chain.n_categories)?
    };
    let mode = match settings.mode {
        RatioMode::Stirling => RatioMode::Stirling,
        RatioMode::Exact => manifest.mode,
    };
    let results = tests
        .iter()
        .map(|t| run_test(&chain, t, &data, &manifest.hyper, mode))
        .collect::<Result<Vec<_>, _>>()?;

    let header: Vec<String> = [
        "name", "h0", "h1", "prior_h0", "prior_h1", "post_h0", "post_h1", "bf10",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let bf = |r: &homc_core::inference::TestResult| {
        r.bf10.map_or("undefined".to_string(), |b| b.to_string())
    };
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.name.clone(),
                r.h0.clone(),
                r.h1.clone(),
                r.p0.to_string(),
                r.p1.to_string(),
                r.post0.to_string(),
                r.post1.to_string(),
                bf(r),
            ]
        })
        .collect();
    let mut staged = Staged::new(&settings.out);
    staged.add_json("tests.json", &results)?;
    staged.add("tests.csv", csv_bytes(&header, &rows)?);
    staged.commit()?;
    log_run(
        &settings.out,
        &format!(
            "command=test wall_secs={:.3}",
            start.elapsed().as_secs_f64()
        ),
    )?;

    println!(
        "{:<10} {:>9} {:>9} {:>9} {:>9} {:>12}  hypotheses",
        "name", "p(H0)", "p(H1)", "P(H0|y)", "P(H1|y)", "BF10"
    );
    for r in &results {
        println!(
            "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>12}  H0: {}  H1: {}",
            r.name,
            r.p0,
            r.p1,
            r.post0,
            r.post1,
            r.bf10.map_or("undefined".to_string(), |b| match b {
                homc_core::inference::BayesFactor::Finite(v) => format!("{v:.4}"),
                homc_core::inference::BayesFactor::PlusInfinity => "inf".to_string(),
            }),
            r.h0,
            r.h1
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictionSummary {
    horizon: usize,
    n_predictions: usize,
    n_with_truth: usize,
    classification_error: Option<f64>,
}

pub fn cmd_predict(
    settings: &Settings,
    contexts_file: Option<PathBuf>,
    horizon: Option<usize>,
) -> Result<(), Failure> {
    let start = Instant::now();
    let horizon = horizon.or(settings.file.predict.horizon).unwrap_or(1);
    if horizon != 1 {
        return Err(Failure::validation(format!(
            "only one-step-ahead prediction is supported (horizon = {horizon})"
        )));
    }
    let path = contexts_file.or_else(|| {
        settings
            .file
            .predict
            .contexts
            .as_ref()
            .map(|p| settings.file_path(p))
    });
    let text = path.as_deref().map(read_text).transpose()?;
    let (manifest, chain) = load_chain(&settings.out)?;
    if chain.contexts.is_empty() {
        return Err(Failure::validation(
            "the chain has no transition snapshots; refit with data.holdout or snapshots.contexts set",
        ));
    }
    let alphabet = Alphabet::new(manifest.alphabet.iter().cloned())?;
    let wanted: Vec<(usize, Option<usize>)> = match (&path, text) {
        (Some(path), Some(text)) => {
            let parsed = parse_contexts(&text, &alphabet, chain.max_order)
                .map_err(|f| f.context(path.display()))?;
            parsed
                .into_iter()
                .map(|(ctx, truth)| {
                    let idx = chain
                        .contexts
                        .iter()
                        .position(|c| *c == ctx)
                        .ok_or_else(|| {
                            let shown: Vec<String> = ctx
                                .iter()
                                .map(|&c| symbol_of(&manifest.alphabet, c))
                                .collect();
                            Failure::validation(format!(
                            "no snapshots for context '{}'; add it to snapshots.contexts and refit",
                            shown.join(" ")
                        ))
                        })?;
                    Ok((idx, truth))
                })
                .collect::<Result<_, Failure>>()?
        }
        _ => manifest.truths.iter().copied().enumerate().collect(),
    };
    let means = posterior_mean_transition(&chain)?;
    let with_truth = wanted.iter().any(|(_, t)| t.is_some());

    let symbols = &manifest.alphabet;
    let mut header: Vec<String> = std::iter::once("index".to_string())
        .chain(lag_headers(chain.max_order))
        .chain(std::iter::once("predicted".to_string()))
        .chain(symbols.iter().map(|s| format!("p_{s}")))
        .collect();
    if with_truth {
        header.push("observed".into());
        header.push("correct".into());
    }
    let mut rows = Vec::new();
    let (mut wrong, mut scored) = (0usize, 0usize);
    for (i, (idx, truth)) in wanted.iter().enumerate() {
        let probs = &means[*idx];
        let pred = predict_one_step(probs);
        let mut row: Vec<String> = std::iter::once(i.to_string())
            .chain(chain.contexts[*idx].iter().map(|&c| symbol_of(symbols, c)))
            .chain(std::iter::once(symbol_of(symbols, pred)))
            .chain(probs.iter().map(|p| p.to_string()))
            .collect();
        if with_truth {
            match truth {
                Some(y) => {
                    scored += 1;
                    wrong += usize::from(pred != *y);
                    row.push(symbol_of(symbols, *y));
                    row.push((pred == *y).to_string());
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        rows.push(row);
    }
    let error = (scored > 0).then(|| wrong as f64 / scored as f64);
    let summary = PredictionSummary {
        horizon,
        n_predictions: rows.len(),
        n_with_truth: scored,
        classification_error: error,
    };
    let mut staged = Staged::new(&settings.out);
    staged.add("predictions.csv", csv_bytes(&header, &rows)?);
    staged.add_json("predictions_summary.json", &summary)?;
    staged.commit()?;
    log_run(
        &settings.out,
        &format!(
            "command=predict wall_secs={:.3}",
            start.elapsed().as_secs_f64()
        ),
    )?;

    println!("predicted {} positions", rows.len());
    match error {
        Some(e) => println!("classification error: {e:.4} ({wrong}/{scored})"),
        None => println!("no observed values supplied; classification error not computed"),
    }
    Ok(())
}

pub fn cmd_diagnose(settings: &Settings, batch_len: Option<usize>) -> Result<(), Failure> {
    let start = Instant::now();
    let batch_len = settings.batch_len(batch_len)?;
    let probs = settings.quantiles()?;
    let (_, chain) = load_chain(&settings.out)?;
    if chain.is_empty() {
        return Err(Failure::validation("the chain has no samples"));
    }
    let header: Vec<String> = ["trace", "mean", "mcse", "batch_len", "n"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut stats = Vec::new();
    for (name, trace) in chain.traces() {
        let mean = trace.iter().sum::<f64>() / trace.len() as f64;
        stats.push((
            name,
            mean,
            batch_means_mcse(&trace, batch_len).ok(),
            trace.len(),
        ));
    }
    let rows: Vec<Vec<String>> = stats
        .iter()
        .map(|(name, mean, mcse, n)| {
            vec![
                name.clone(),
                mean.to_string(),
                mcse.map_or(String::new(), |s| s.to_string()),
                batch_len.to_string(),
                n.to_string(),
            ]
        })
        .collect();
    let mut staged = Staged::new(&settings.out);
    staged.add("mcse.csv", csv_bytes(&header, &rows)?);
    staged.add("quantiles.csv", quantiles_csv(&chain, &probs)?);
    staged.commit()?;
    log_run(
        &settings.out,
        &format!(
            "command=diagnose wall_secs={:.3}",
            start.elapsed().as_secs_f64()
        ),
    )?;

    println!("{:<12} {:>12} {:>12}", "trace", "mean", "mcse");
    for (name, mean, mcse, _) in &stats {
        let mcse = mcse.map_or("-".to_string(), |v| format!("{v:.5}"));
        println!("{name:<12} {mean:>12.5} {mcse:>12}");
    }
    if stats.iter().any(|s| s.2.is_none()) {
        println!("(mcse is blank where the chain is shorter than two batches)");
    }
    Ok(())
}

pub fn cmd_simulate(settings: &Settings, flags: &SimulateFlags) -> Result<(), Failure> {
    let start = Instant::now();
    let s = &settings.file.simulate;
    let label = flags
        .case
        .clone()
        .or_else(|| s.case.clone())
        .ok_or_else(|| {
            Failure::validation(
                "no case given; pass --case with one of A, B, C, D, E, F, G, H or [C0,{lag,...}]",
            )
        })?;
    let case = CaseSpec::parse(&label)?;
    let (c0, q) = (case.n_categories, case.max_order());
    let mut cfg = ExperimentConfig::new(
        case,
        flags.train.or(s.train).unwrap_or(500),
        flags.test.or(s.test).unwrap_or(500),
        flags.reps.or(s.reps).unwrap_or(10),
        settings.seed,
    );
    cfg.schedule = settings.schedule(Schedule::desk())?;
    cfg.mode = settings.mode;
    cfg.init_iters = settings.init_iters();
    cfg.smoothing = flags.smoothing.or(s.smoothing).unwrap_or(cfg.smoothing);
    if !(cfg.smoothing.is_finite() && cfg.smoothing > 0.0) {
        return Err(Failure::validation("smoothing must be positive"));
    }
    let m = &settings.file.model;
    if m.alpha.is_some()
        || m.alpha0.is_some()
        || m.gamma.is_some()
        || m.phi.is_some()
        || m.truncation.is_some()
    {
        cfg.hyper = Some(hyperparams(settings, c0, q, cfg.schedule)?);
    }
    cfg.validate()?;

    let (rows, summary) = run_experiment(&cfg)?;
    let mut csv = Vec::new();
    write_metrics_csv(&rows, &mut csv)?;
    let mut staged = Staged::new(&settings.out);
    staged.add("metrics.csv", csv);
    staged.add_json("metrics.json", &summary)?;
    staged.commit()?;
    log_run(
        &settings.out,
        &format!(
            "command=simulate case={} seed={} wall_secs={:.3}",
            summary.case,
            settings.seed,
            start.elapsed().as_secs_f64()
        ),
    )?;

    println!(
        "case {} T={} N={} reps={}",
        summary.case, summary.t_train, summary.n_test, summary.n_reps
    );
    println!(
        "{:<10} {:>12} {:>10} {:>12} {:>10}",
        "method", "avg_l1", "se", "class_err", "se"
    );
    for m in &summary.methods {
        println!(
            "{:<10} {:>12.5} {:>10.5} {:>12.5} {:>10.5}",
            m.method, m.avg_l1_mean, m.avg_l1_se, m.class_err_mean, m.class_err_se
        );
    }
    Ok(())
}
