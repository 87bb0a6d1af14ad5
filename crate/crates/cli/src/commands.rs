use std::path::Path;

use rayon::prelude::*;

use softirl::io::{load_dataset, save_dataset};
use softirl::irl::{run_irl_observed, IrlTrace};
use softirl::metrics::{evaluate_reward, pinsker_chain, regret_bound, IterateAudit, MetricReport};
use softirl::sampling::{empirical_expert_features, generate_expert_dataset, ExpertDataset};
use softirl::solver::{feature_expectation_exact, occupancy, solve_optimal, truncated_feature_expectation, DEFAULT_TOL};
use softirl::verify::{run_suites, Suite};
use softirl::{reward_of, EnvironmentBundle, RewardWeights, RngStream, Simulator};

use crate::config::{ExpertSource, RunConfig};
use crate::output::{ensure_dir, num, opt, write_csv};
use crate::CliError;

/// Stream label for expert data, disjoint from the per-iteration labels of a run.
const DATASET_STREAM: u64 = u64::MAX;

pub fn solve(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let bundle = cfg.build_environment()?;
    let r = cfg.reward_table(&bundle)?;
    let m = &bundle.mdp;
    let (values, pi) = solve_optimal(m, &r, DEFAULT_TOL)?;
    let occ = occupancy(m, &pi)?;
    let sigma = feature_expectation_exact(m, &pi, &bundle.phi)?;
    let (ns, na) = (m.n_states(), m.n_actions());
    ensure_dir(out)?;

    let states: Vec<Vec<String>> = (0..ns)
        .map(|s| vec![s.to_string(), num(values.v[s]), num(occ.nu[s])])
        .collect();
    write_csv(&out.join("values.csv"), &["state", "v", "nu"], &states)?;
    let pairs: Vec<Vec<String>> = (0..ns)
        .flat_map(|s| (0..na).map(move |a| (s, a)))
        .map(|(s, a)| {
            vec![
                s.to_string(),
                a.to_string(),
                num(values.q_value(s, a)),
                num(pi.prob(s, a)),
                num(occ.mu[s * na + a]),
            ]
        })
        .collect();
    write_csv(&out.join("q_policy.csv"), &["state", "action", "q", "pi", "mu"], &pairs)?;
    let feats: Vec<Vec<String>> = sigma.iter().enumerate().map(|(i, x)| vec![i.to_string(), num(*x)]).collect();
    write_csv(&out.join("features.csv"), &["index", "sigma"], &feats)?;
    let objective: f64 = m.initial_dist().iter().zip(&values.v).map(|(p, v)| p * v).sum();
    write_csv(
        &out.join("solve_summary.csv"),
        &["environment", "objective", "residual", "sweeps"],
        &[vec![
            bundle.provenance.clone(),
            num(objective),
            num(values.residual),
            values.iterations.to_string(),
        ]],
    )?;
    println!("J* = {objective}");
    Ok(())
}

fn expert_features(cfg: &RunConfig, bundle: &EnvironmentBundle, seed: u64, out: &Path) -> Result<Vec<f64>, CliError> {
    let e = &cfg.expert;
    let gamma = bundle.mdp.discount();
    match (e.source, &e.path) {
        (ExpertSource::Exact, _) => Ok(truncated_feature_expectation(
            &bundle.mdp,
            &bundle.pi_expert,
            &bundle.phi,
            e.horizon,
        )?),
        (ExpertSource::Dataset, Some(path)) => Ok(empirical_expert_features(&load_dataset(path)?, &bundle.phi, gamma)?),
        (ExpertSource::Dataset, None) => {
            let sim = Simulator::new(&bundle.mdp);
            let stream = RngStream::new(seed).child(DATASET_STREAM);
            let mut d: ExpertDataset =
                generate_expert_dataset(&sim, &bundle.pi_expert, e.trajectories, e.horizon, &stream)?;
            d.seed = Some(seed);
            if e.save_dataset {
                save_dataset(&out.join(format!("dataset_seed{seed}.jsonl")), &d)?;
            }
            Ok(empirical_expert_features(&d, &bundle.phi, gamma)?)
        }
    }
}

struct SeedResult {
    seed: u64,
    eta_w: Option<f64>,
    samples_total: u64,
    w_bar: Option<RewardWeights>,
    metrics: Option<MetricReport>,
    regret: Option<f64>,
    error: Option<CliError>,
}

/// Per-snapshot exact evaluation of the running average `w̄_t`.
struct SnapshotEval {
    t: usize,
    policy_gap: Option<f64>,
    avg_subopt: f64,
    avg_pinsker_lhs: f64,
}

fn snapshot_evals(bundle: &EnvironmentBundle, trace: &IrlTrace, audit: &IterateAudit) -> Result<Vec<SnapshotEval>, CliError> {
    let k = bundle.phi.k();
    let mut sum = vec![0.0; k];
    let mut evals = Vec::new();
    let mut snaps = trace.snapshots.iter().map(|(t, _)| *t).peekable();
    for rec in &trace.records {
        for (a, b) in sum.iter_mut().zip(&rec.w) {
            *a += b;
        }
        if snaps.peek() == Some(&rec.t) {
            snaps.next();
            let avg: Vec<f64> = sum.iter().map(|x| x / (rec.t + 1) as f64).collect();
            let r = reward_of(&RewardWeights::new(avg)?, &bundle.phi)?;
            let rep = pinsker_chain(&bundle.mdp, &r, &bundle.pi_expert)?;
            evals.push(SnapshotEval {
                t: rec.t,
                policy_gap: audit.policy_gaps.iter().find(|(t, _)| *t == rec.t).map(|(_, g)| *g),
                avg_subopt: rep.rhs,
                avg_pinsker_lhs: rep.lhs,
            });
        }
    }
    Ok(evals)
}

fn write_trace(path: &Path, trace: &IrlTrace, evals: Option<&[SnapshotEval]>) -> Result<(), CliError> {
    let mut header = vec!["t", "samples", "samples_total", "grad_linf", "grad_l2_sq", "w_l1"];
    if evals.is_some() {
        header.extend(["policy_gap", "avg_subopt_exact", "avg_pinsker_lhs"]);
    }
    let rows: Vec<Vec<String>> = trace
        .records
        .iter()
        .map(|rec| {
            let mut row = vec![
                rec.t.to_string(),
                rec.samples.to_string(),
                rec.samples_total.to_string(),
                num(rec.grad_linf),
                num(rec.grad_l2_sq),
                num(rec.w.iter().map(|x| x.abs()).sum()),
            ];
            if let Some(evals) = evals {
                match evals.iter().find(|e| e.t == rec.t) {
                    Some(e) => row.extend([opt(e.policy_gap), num(e.avg_subopt), num(e.avg_pinsker_lhs)]),
                    None => row.extend([String::new(), String::new(), String::new()]),
                }
            }
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}

fn run_seed(cfg: &RunConfig, bundle: &EnvironmentBundle, seed: u64, out: &Path) -> SeedResult {
    let mut result = SeedResult {
        seed,
        eta_w: None,
        samples_total: 0,
        w_bar: None,
        metrics: None,
        regret: None,
        error: None,
    };
    if let Err(e) = run_seed_inner(cfg, bundle, seed, out, &mut result) {
        log::error!("seed {seed} failed: {e}");
        result.error = Some(e);
    }
    result
}

fn run_seed_inner(
    cfg: &RunConfig,
    bundle: &EnvironmentBundle,
    seed: u64,
    out: &Path,
    result: &mut SeedResult,
) -> Result<(), CliError> {
    let section = cfg.irl()?;
    let irl_cfg = section.to_config(seed);
    let sigma_e = expert_features(cfg, bundle, seed, out)?;
    let sim = Simulator::new(&bundle.mdp);
    let diagnostics = cfg.evaluation.exact_diagnostics;
    let mut audit = IterateAudit::new(
        &bundle.mdp,
        &bundle.phi,
        &sigma_e,
        if diagnostics { irl_cfg.snapshot_cadence() } else { 0 },
    );
    let run = run_irl_observed(&sim, &bundle.phi, &sigma_e, &irl_cfg, |t, w, pi| {
        if diagnostics {
            audit.observe(t, w, pi);
        }
    });
    let trace_path = out.join(format!("trace_seed{seed}.csv"));
    let trace = match run {
        Ok(trace) => trace,
        Err(failure) => {
            write_trace(&trace_path, &failure.partial, None)?;
            return Err(failure.error.into());
        }
    };
    result.eta_w = Some(trace.eta_w);
    result.samples_total = trace.samples_total();
    let evals = if diagnostics {
        if let Some(e) = audit.error.take() {
            return Err(e.into());
        }
        result.regret = Some(audit.regret()?);
        Some(snapshot_evals(bundle, &trace, &audit)?)
    } else {
        None
    };
    write_trace(&trace_path, &trace, evals.as_deref())?;

    let w_bar = trace.w_bar.clone().expect("completed run has an average");
    let rows: Vec<Vec<String>> = w_bar
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, x)| vec![i.to_string(), num(*x)])
        .collect();
    write_csv(&out.join(format!("w_bar_seed{seed}.csv")), &["index", "w_bar"], &rows)?;
    if cfg.evaluation.final_metrics {
        result.metrics = Some(evaluate_reward(
            &bundle.mdp,
            &bundle.phi,
            &w_bar,
            &bundle.pi_expert,
            bundle.w_true.as_ref(),
        )?);
    }
    result.w_bar = Some(w_bar);
    Ok(())
}

pub fn irl(cfg: &RunConfig, seeds: &[u64], out: &Path) -> Result<(), CliError> {
    let section = cfg.irl()?;
    section.to_config(0).validate()?;
    let bundle = cfg.build_environment()?;
    ensure_dir(out)?;
    let results: Vec<SeedResult> = seeds.par_iter().map(|&seed| run_seed(cfg, &bundle, seed, out)).collect();

    let mut header = vec!["seed", "status", "iterations", "batch_size", "eta_w", "samples_total", "w_bar_l1"];
    if cfg.evaluation.final_metrics {
        header.extend([
            "expert_subopt",
            "tv",
            "ipm",
            "true_gap",
            "pinsker_lhs",
            "pinsker_rhs",
            "vartheta_e",
        ]);
    }
    if cfg.evaluation.exact_diagnostics {
        header.extend(["regret", "regret_bound"]);
    }
    header.push("error");
    let bound = regret_bound(
        bundle.phi.k(),
        section.iterations,
        bundle.phi.sup_norm(),
        bundle.mdp.discount(),
    );
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            let mut row = vec![
                r.seed.to_string(),
                if r.error.is_none() { "ok" } else { "failed" }.to_string(),
                section.iterations.to_string(),
                section.batch_size.to_string(),
                opt(r.eta_w),
                r.samples_total.to_string(),
                opt(r.w_bar.as_ref().map(RewardWeights::l1_norm)),
            ];
            if cfg.evaluation.final_metrics {
                let m = r.metrics.as_ref();
                row.extend([
                    opt(m.map(|m| m.expert_subopt)),
                    opt(m.map(|m| m.tv)),
                    opt(m.map(|m| m.ipm)),
                    opt(m.and_then(|m| m.true_reward_gap)),
                    opt(m.map(|m| m.pinsker.lhs)),
                    opt(m.map(|m| m.pinsker.rhs)),
                    opt(m.map(|m| m.pinsker.vartheta_e)),
                ]);
            }
            if cfg.evaluation.exact_diagnostics {
                row.extend([opt(r.regret), num(bound)]);
            }
            row.push(r.error.as_ref().map(ToString::to_string).unwrap_or_default());
            row
        })
        .collect();
    write_csv(&out.join("summary.csv"), &header, &rows)?;

    let failed: Vec<&SeedResult> = results.iter().filter(|r| r.error.is_some()).collect();
    for r in &results {
        match (&r.error, &r.metrics) {
            (Some(e), _) => eprintln!("seed {}: {e}", r.seed),
            (None, Some(m)) => println!("seed {}: expert_subopt = {}", r.seed, m.expert_subopt),
            (None, None) => println!("seed {}: done", r.seed),
        }
    }
    match failed.first() {
        None => Ok(()),
        Some(first) => Err(match first.error.as_ref().unwrap() {
            CliError::Config(m) => CliError::Config(format!("{} of {} seeds failed; first: {m}", failed.len(), results.len())),
            other => CliError::Numeric(format!("{} of {} seeds failed; first: {other}", failed.len(), results.len())),
        }),
    }
}

pub fn verify(selector: &str, seed: u64, trials: usize, out: &Path) -> Result<(), CliError> {
    let suites = Suite::parse_selector(selector)?;
    if trials == 0 {
        return Err(CliError::Config("--trials must be at least 1".into()));
    }
    ensure_dir(out)?;
    let checks = run_suites(&suites, seed, trials)?;
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            vec![
                c.suite.to_string(),
                c.trial.to_string(),
                c.instance_seed.to_string(),
                c.label.to_string(),
                num(c.value),
                num(c.bound),
                num(c.margin()),
                c.passed().to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("verify_report.csv"),
        &["suite", "trial", "instance_seed", "check", "value", "bound", "margin", "passed"],
        &rows,
    )?;

    let mut failures = 0;
    for suite in &suites {
        let mine: Vec<_> = checks.iter().filter(|c| c.suite == *suite).collect();
        let passed = mine.iter().filter(|c| c.passed()).count();
        let min_margin = mine.iter().map(|c| c.margin()).fold(f64::INFINITY, f64::min);
        println!("{suite}: {passed}/{} checks passed (min margin {min_margin:e})", mine.len());
        for c in mine.iter().filter(|c| !c.passed()) {
            failures += 1;
            eprintln!(
                "FAIL {} trial {} instance_seed {}: {} ({} > {})",
                c.suite, c.trial, c.instance_seed, c.label, c.value, c.bound
            );
        }
    }
    if failures == 0 {
        Ok(())
    } else {
        Err(CliError::Verification(format!("{failures} checks failed")))
    }
}
