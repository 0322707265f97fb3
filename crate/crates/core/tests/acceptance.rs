//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a nonzero status if any criterion fails.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use homc_core::inference::{
    batch_means_mcse, lag_inclusion, parse_hypotheses, posterior_prob, PosteriorChain,
};
use homc_core::init::{partition_marginal_loglik, HardPartition};
use homc_core::model::{ktilde_prior_prob_one, Hyperparams, RatioMode, Schedule};
use homc_core::random::{categorical, chain_rng, derive_seed, dirichlet};
use homc_core::sampler::{
    collapsed_loglik, draw_responses, fit, grid_counts, precompute_u_tables, prior_draw,
    state_loglik, sweep, ChainOptions,
};
use homc_core::seqdata::{build_lag_design, SequenceData};
use homc_core::simgen::{run_replicate, CaseSpec, ExperimentConfig, ReplicateOutcome};
use homc_core::special::ln_gamma;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// log p(k) up to a constant: exp(-phi * lag * k) over k = 1..C0.
fn oracle_ln_prior(phi: f64, lag: usize, c0: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..=c0).map(|k| -phi * lag as f64 * k as f64).collect();
    let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = raw.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
    raw.iter().map(|x| x - z).collect()
}

/// Posterior of k given allocations, with the mixture weights integrated
/// out category by category.
fn oracle_k_pmf(z: &[usize], w: &[usize], c0: usize, gamma: f64, phi: f64, lag: usize) -> Vec<f64> {
    let m = z.iter().max().unwrap() + 1;
    let lp = oracle_ln_prior(phi, lag, c0);
    let terms: Vec<f64> = (m..=c0)
        .map(|k| {
            let kg = k as f64 * gamma;
            let mut s = lp[k - 1];
            for r in 0..c0 {
                let mut nl = vec![0usize; k];
                for (&h, &c) in z.iter().zip(w) {
                    if c == r {
                        nl[h] += 1;
                    }
                }
                let nr: usize = nl.iter().sum();
                s += ln_gamma(kg) - k as f64 * ln_gamma(gamma);
                s += nl.iter().map(|&n| ln_gamma(gamma + n as f64)).sum::<f64>();
                s -= ln_gamma(kg + nr as f64);
            }
            s
        })
        .collect();
    let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm = terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln() + mx;
    terms.iter().map(|t| t - norm).collect()
}

fn compositions(n: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![n]];
    }
    (0..=n)
        .flat_map(|first| {
            compositions(n - first, parts - 1)
                .into_iter()
                .map(move |mut rest| {
                    rest.insert(0, first);
                    rest
                })
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let mut rng = chain_rng(1);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for c0 in 1..=3usize {
        for n in 1..=12usize {
            for counts in compositions(n, c0) {
                let w: Vec<usize> = counts
                    .iter()
                    .enumerate()
                    .flat_map(|(r, &nr)| std::iter::repeat_n(r, nr))
                    .collect();
                for m in 1..=c0.min(n) {
                    for (gamma, phi, lag) in
                        [(1.0 / c0 as f64, 0.5, 1), (0.3, 1.0, 2), (2.0, 0.2, 3)]
                    {
                        let mut z: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
                        z[0] = m - 1;
                        let mut lags = vec![vec![0usize; n]; lag];
                        lags[lag - 1] = w.clone();
                        let data = SequenceData::from_design(lags, vec![0; n], c0).unwrap();
                        let mut hyper = Hyperparams::defaults(c0, lag);
                        hyper.gamma = vec![gamma; lag];
                        hyper.phi = phi;
                        let got =
                            precompute_u_tables(&data, &hyper).ln_pmf(lag - 1, m, RatioMode::Exact);
                        let want = oracle_k_pmf(&z, &w, c0, gamma, phi, lag);
                        for (g, o) in got.iter().zip(&want) {
                            worst = worst.max((g - o).abs());
                        }
                        checked += 1;
                    }
                }
            }
        }
    }
    outcome(
        worst <= 1e-10,
        format!("{checked} configurations, max |log-pmf difference| = {worst:.2e} (tol 1e-10)"),
    )
}

fn ln_rising_direct(x: f64, m: u32) -> f64 {
    (0..m).map(|i| (x + i as f64).ln()).sum()
}

fn direct_cell(cell: &[u32], alpha: f64) -> f64 {
    let total: u32 = cell.iter().sum();
    cell.iter()
        .map(|&n| ln_rising_direct(alpha, n))
        .sum::<f64>()
        - ln_rising_direct(cell.len() as f64 * alpha, total)
}

fn criterion_2() -> Outcome {
    let mut rng = chain_rng(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let c0 = rng.random_range(2..=4usize);
        let q = rng.random_range(1..=3usize);
        let len = rng.random_range(q + 1..=q + 40);
        let alpha = rng.random_range(0.05..3.0);
        let y: Vec<usize> = (0..len).map(|_| rng.random_range(0..c0)).collect();
        let data = build_lag_design(&y, c0, q).unwrap();
        let parts: Vec<HardPartition> = (0..q)
            .map(|_| {
                let labels: Vec<usize> = (0..c0).map(|_| rng.random_range(0..c0)).collect();
                HardPartition::from_labels(&labels)
            })
            .collect();
        // direct: tally each combination of classes by brute force
        let mut cells: Vec<(Vec<usize>, Vec<u32>)> = Vec::new();
        for i in 0..data.n_obs() {
            let key: Vec<usize> = (0..q).map(|j| parts[j].class_of(data.lag(j)[i])).collect();
            match cells.iter_mut().find(|(k, _)| *k == key) {
                Some((_, c)) => c[data.responses()[i]] += 1,
                None => {
                    let mut c = vec![0u32; c0];
                    c[data.responses()[i]] = 1;
                    cells.push((key, c));
                }
            }
        }
        let direct: f64 = cells.iter().map(|(_, c)| direct_cell(c, alpha)).sum();
        let a = partition_marginal_loglik(&data, &parts, alpha);
        let flat: Vec<u32> = cells.iter().flat_map(|(_, c)| c.clone()).collect();
        let b = collapsed_loglik(&flat, c0, alpha);
        worst = worst.max((a - direct).abs()).max((b - direct).abs());
    }
    outcome(
        worst <= 1e-10,
        format!("100 configurations, max |difference| = {worst:.2e} (tol 1e-10)"),
    )
}

fn geweke_stats(s: &homc_core::LatentState) -> [f64; 5] {
    let kt = s.ktilde();
    [
        s.k[0] as f64,
        s.k[1] as f64,
        kt[0] as f64,
        kt[1] as f64,
        s.lambda_star[0][0],
    ]
}

fn criterion_3() -> Outcome {
    const N: usize = 10_000;
    let mut rng = chain_rng(3);
    let y: Vec<usize> = (0..30).map(|_| rng.random_range(0..2)).collect();
    let design = build_lag_design(&y, 2, 2).unwrap();
    let mut hyper = Hyperparams::defaults(2, 2);
    hyper.truncation = 5;
    let tables = precompute_u_tables(&design, &hyper);

    let mut marginal = (0..5).map(|_| Vec::with_capacity(N)).collect::<Vec<_>>();
    for _ in 0..N {
        let s = prior_draw(&design, &hyper, &mut rng);
        for (t, v) in marginal.iter_mut().zip(geweke_stats(&s)) {
            t.push(v);
        }
    }
    let mut successive = (0..5).map(|_| Vec::with_capacity(N)).collect::<Vec<_>>();
    let mut state = prior_draw(&design, &hyper, &mut rng);
    let mut data = design
        .with_responses(draw_responses(&state, &design, &mut rng))
        .unwrap();
    for _ in 0..N {
        sweep(
            &mut state,
            &data,
            &hyper,
            &tables,
            RatioMode::Exact,
            &mut rng,
        )
        .unwrap();
        data = design
            .with_responses(draw_responses(&state, &design, &mut rng))
            .unwrap();
        for (t, v) in successive.iter_mut().zip(geweke_stats(&state)) {
            t.push(v);
        }
    }
    let names = ["k1", "k2", "ktilde1", "ktilde2", "lambda1(1)"];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let m1 = marginal[i].iter().sum::<f64>() / N as f64;
        let m2 = successive[i].iter().sum::<f64>() / N as f64;
        let se1 = batch_means_mcse(&marginal[i], 500).unwrap();
        let se2 = batch_means_mcse(&successive[i], 500).unwrap();
        let z = (m1 - m2) / (se1 * se1 + se2 * se2).sqrt();
        pass &= z.abs() <= 2.576;
        parts.push(format!("{name} z={z:+.2}"));
    }
    outcome(
        pass,
        format!("{} (reject if |z| > 2.576)", parts.join(", ")),
    )
}

fn criterion_4() -> Outcome {
    let props: Vec<f64> = (0..10u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = chain_rng(400 + s);
            let y: Vec<usize> = (0..500).map(|_| rng.random_range(0..2)).collect();
            let data = build_lag_design(&y, 2, 5).unwrap();
            let hyper = Hyperparams::defaults(2, 5).with_schedule(Schedule::desk());
            let chain = fit(
                &data,
                &hyper,
                derive_seed(40, s),
                100,
                &ChainOptions::default(),
            )
            .unwrap()
            .chain;
            chain
                .samples
                .iter()
                .filter(|x| x.ktilde.iter().all(|&k| k == 1))
                .count() as f64
                / chain.len() as f64
        })
        .collect();
    let mean = props.iter().sum::<f64>() / props.len() as f64;
    outcome(
        mean > 0.9,
        format!("mean proportion of all-ktilde=1 samples = {mean:.4} (need > 0.9)"),
    )
}

fn run_case(label: &str, master: u64) -> Vec<ReplicateOutcome> {
    let cfg = ExperimentConfig::new(CaseSpec::parse(label).unwrap(), 500, 500, 10, master);
    (0..10)
        .into_par_iter()
        .map(|rep| run_replicate(&cfg, rep).unwrap())
        .collect()
}

fn criterion_5(reps: &[ReplicateOutcome]) -> Outcome {
    let n = reps.len() as f64;
    let l1 = reps.iter().map(|r| r.rows[0].avg_l1).sum::<f64>() / n;
    let err = reps.iter().map(|r| r.rows[0].class_err).sum::<f64>() / n;
    let wins = reps
        .iter()
        .filter(|r| {
            r.rows[0].avg_l1 < r.rows[1].avg_l1 && r.rows[0].class_err < r.rows[1].class_err
        })
        .count();
    outcome(
        l1 <= 0.06 && err <= 0.17 && wins >= 8,
        format!(
            "mean avg-L1 = {l1:.4} (<= 0.06), mean class error = {err:.4} (<= 0.17), beats full-order MLE on both in {wins}/10 (>= 8)"
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_6(reps: &[ReplicateOutcome]) -> Outcome {
    let inc: Vec<Vec<f64>> = reps
        .iter()
        .map(|r| lag_inclusion(&r.chain).unwrap())
        .collect();
    let q = inc[0].len();
    let med: Vec<f64> = (0..q)
        .map(|j| median(inc.iter().map(|v| v[j]).collect()))
        .collect();
    let pass = med.iter().enumerate().all(|(j, &m)| {
        if [1, 4, 8].contains(&(j + 1)) {
            m >= 0.9
        } else {
            m <= 0.2
        }
    });
    let shown: Vec<String> = med.iter().map(|m| format!("{m:.3}")).collect();
    outcome(
        pass,
        format!(
            "median inclusion by lag = [{}] (lags 1,4,8 >= 0.9; others <= 0.2)",
            shown.join(", ")
        ),
    )
}

const CASE_G_HYPOTHESES: &str = "\
a: k4>1
b: k5>1
c: k8>1 & k9=1 & k10=1
d: k1>1 & k2=1 & k3=1 & k4>1 & k5=1 & k6=1 & k7=1 & k8>1 & k9=1 & k10=1
";

fn criterion_7(reps: &[ReplicateOutcome]) -> Outcome {
    let tests = parse_hypotheses(CASE_G_HYPOTHESES).unwrap();
    let chains: Vec<&PosteriorChain> = reps.iter().map(|r| &r.chain).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for t in &tests {
        let m = median(
            chains
                .iter()
                .map(|c| posterior_prob(c, &t.h1).unwrap())
                .collect(),
        );
        let ok = if t.name == "b" { m >= 0.9 } else { m <= 0.1 };
        pass &= ok;
        parts.push(format!("({}) {m:.3}", t.name));
    }
    outcome(
        pass,
        format!(
            "median P(H1): {} ((a),(c),(d) <= 0.1; (b) >= 0.9)",
            parts.join(", ")
        ),
    )
}

fn criterion_8() -> Outcome {
    const DRAWS: usize = 1_000_000;
    let mut cfg_rng = chain_rng(8);
    let configs: Vec<(usize, f64, f64, usize, Vec<usize>)> = (0..20)
        .map(|_| {
            let c0 = cfg_rng.random_range(2..=4usize);
            let gamma = cfg_rng.random_range(0.1..2.0);
            let phi = cfg_rng.random_range(0.1..1.5);
            let lag = cfg_rng.random_range(1..=3usize);
            let mut counts: Vec<usize> =
                (0..c0).map(|_| cfg_rng.random_range(0..=4usize)).collect();
            if counts.iter().all(|&n| n == 0) {
                counts[0] = 1;
            }
            (c0, gamma, phi, lag, counts)
        })
        .collect();
    let results: Vec<(f64, f64, f64)> = configs
        .par_iter()
        .enumerate()
        .map(|(i, (c0, gamma, phi, lag, counts))| {
            let formula = ktilde_prior_prob_one(*gamma, *phi, *lag, counts, *c0, RatioMode::Exact);
            let p0: Vec<f64> = oracle_ln_prior(*phi, *lag, *c0)
                .iter()
                .map(|x| x.exp())
                .collect();
            let mut rng = chain_rng(800 + i as u64);
            let mut hits = 0usize;
            let mut used = vec![false; *c0];
            for _ in 0..DRAWS {
                let k = 1 + categorical(&p0, &mut rng);
                used[..k].iter_mut().for_each(|u| *u = false);
                for &n in counts.iter().filter(|&&n| n > 0) {
                    let pi = dirichlet(&vec![*gamma; k], &mut rng);
                    for _ in 0..n {
                        used[categorical(&pi, &mut rng)] = true;
                    }
                }
                hits += (used[..k].iter().filter(|&&u| u).count() == 1) as usize;
            }
            let mc = hits as f64 / DRAWS as f64;
            let se = (mc * (1.0 - mc) / DRAWS as f64)
                .sqrt()
                .max(1.0 / DRAWS as f64);
            (formula, mc, se)
        })
        .collect();
    let worst = results
        .iter()
        .map(|(f, m, se)| (f - m).abs() / se)
        .fold(0.0, f64::max);
    outcome(
        worst <= 3.0,
        format!("20 configurations, max |formula - Monte Carlo| / SE = {worst:.2} (<= 3)"),
    )
}

fn criterion_9() -> Outcome {
    let mut failures = Vec::new();
    for seed in 0..10u64 {
        let mut rng = chain_rng(900 + seed);
        let c0 = rng.random_range(2..=4usize);
        let q = rng.random_range(1..=4usize);
        let y: Vec<usize> = (0..120).map(|_| rng.random_range(0..c0)).collect();
        let data = build_lag_design(&y, c0, q).unwrap();
        let mut hyper = Hyperparams::defaults(c0, q);
        hyper.truncation = 20;
        let tables = precompute_u_tables(&data, &hyper);
        let mut state = prior_draw(&data, &hyper, &mut rng);
        for it in 0..100 {
            let mode = if it % 2 == 0 {
                RatioMode::Exact
            } else {
                RatioMode::Stirling
            };
            sweep(&mut state, &data, &hyper, &tables, mode, &mut rng).unwrap();
            if let Err(e) = state.check_invariants() {
                failures.push(format!("seed {seed} sweep {it}: {e}"));
            }
            for (zj, &kj) in state.z.iter().zip(&state.k) {
                if zj.iter().any(|&h| h >= kj) {
                    failures.push(format!("seed {seed} sweep {it}: k below max z"));
                }
            }
        }
        let ctx: Vec<usize> = (0..q).map(|_| rng.random_range(0..c0)).collect();
        let p = state.evaluate_transition(&ctx).unwrap();
        if (p.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            failures.push(format!("seed {seed}: transition not normalized"));
        }
        let before = state_loglik(&state, &data, hyper.alpha);
        let counts_before = grid_counts(&state, &data)
            .iter()
            .map(|&c| c as u64)
            .sum::<u64>();
        let kj = state.k[0];
        for h in state.z[0].iter_mut() {
            *h = kj - 1 - *h;
        }
        let after = state_loglik(&state, &data, hyper.alpha);
        if (before - after).abs() > 1e-10 || counts_before != data.n_obs() as u64 {
            failures.push(format!("seed {seed}: loglik not invariant to relabeling"));
        }
        let small = Hyperparams::defaults(c0, q).with_schedule(Schedule::new(30, 10, 2));
        let opts = ChainOptions {
            contexts: vec![ctx],
            audit: true,
            ..ChainOptions::default()
        };
        let a = fit(&data, &small, seed, 20, &opts).unwrap().chain;
        let b = fit(&data, &small, seed, 20, &opts).unwrap().chain;
        if a != b {
            failures.push(format!("seed {seed}: reruns differ"));
        }
    }
    let detail = if failures.is_empty() {
        "normalization, k >= max z + 1, relabeling invariance and rerun determinism hold on 10 random problems".to_string()
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn report(n: usize, name: &str, f: impl FnOnce() -> Outcome, all: &mut bool) {
    let start = Instant::now();
    let o = f();
    *all &= o.pass;
    println!(
        "criterion {n} [{}] {name}: {} ({:.1}s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        start.elapsed().as_secs_f64()
    );
}

fn main() {
    let mut all = true;
    report(
        1,
        "collapsed k-update vs integrated-out oracle",
        criterion_1,
        &mut all,
    );
    report(2, "Dirichlet-multinomial identity", criterion_2, &mut all);
    report(3, "Geweke joint-distribution check", criterion_3, &mut all);
    report(4, "order-0 recovery", criterion_4, &mut all);
    let case_h = run_case("H", 2024);
    report(
        5,
        "case H accuracy vs full-order MLE",
        || criterion_5(&case_h),
        &mut all,
    );
    let case_g = run_case("G", 2025);
    report(6, "case G lag inclusion", || criterion_6(&case_g), &mut all);
    report(
        7,
        "case G hypothesis tests",
        || criterion_7(&case_g),
        &mut all,
    );
    report(
        8,
        "occupied-class prior vs Monte Carlo",
        criterion_8,
        &mut all,
    );
    report(9, "property invariants", criterion_9, &mut all);
    if !all {
        std::process::exit(1);
    }
}
