use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::net::{CostModel, Dealer, TrafficCounters};
use crate::protocols::{
    learn_approximate, learn_exact, local_statistics, mask_id, plan_learn_approximate,
    plan_learn_exact, LearnOutcome, LocalStatistics, ShareMode,
};
use crate::spn::{
    count_contributions, load_dataset, load_structure, oracle_learn, write_structure, NodeId,
    SpnGraph, SumEdgeCounts,
};

use super::{emit, write_file, HarnessError, RunConfig, Settings, RECONSTRUCT_ALLOWED};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LearnMode {
    /// Plaintext maximum likelihood over the pooled data.
    Oracle,
    /// Shared counts and a secure reciprocal; polynomial shares.
    #[value(alias = "exact-mpc")]
    Exact,
    /// Average of local fractions; additive shares.
    #[value(alias = "approx-mpc")]
    Approx,
}

#[derive(Args, Debug)]
pub struct LearnArgs {
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: LearnMode,
    /// Fix the zero-sum mask of one edge in approx mode:
    /// `NODE:CHILD=r1,r2,...`, one value per party.
    #[arg(long = "mask")]
    pub masks: Vec<String>,
    #[command(flatten)]
    pub run: RunConfig,
}

/// Machine-readable summary written next to the share files.
#[derive(Debug, Serialize)]
pub struct LearnReport {
    pub mode: &'static str,
    pub parties: usize,
    pub degree: usize,
    pub prime: String,
    pub scale: u128,
    pub precision: u128,
    pub rho: u32,
    pub divisor_bound: u128,
    pub exercises: usize,
    pub degenerate: Vec<String>,
    pub predicted_messages: u64,
    pub traffic: TrafficCounters,
}

/// One row set per party; missing parties hold no rows.
pub(super) fn load_partitions(
    spn: &SpnGraph,
    paths: &[PathBuf],
    parties: usize,
) -> Result<Vec<Vec<Vec<bool>>>, HarnessError> {
    if paths.len() > parties {
        return Err(HarnessError::Usage(format!(
            "{} data files for {parties} parties",
            paths.len()
        )));
    }
    let distinct: BTreeSet<&PathBuf> = paths.iter().collect();
    if distinct.len() != paths.len() {
        return Err(HarnessError::Validation(
            "the same data file is given to two parties".into(),
        ));
    }
    let mut parts = paths
        .iter()
        .map(|p| load_dataset(p, Some(spn.num_vars())))
        .collect::<Result<Vec<_>, _>>()?;
    parts.resize(parties, Vec::new());
    Ok(parts)
}

fn parse_mask(
    spn: &SpnGraph,
    text: &str,
    parties: usize,
) -> Result<(NodeId, usize, Vec<u128>), HarnessError> {
    let bad = || HarnessError::Usage(format!("expected NODE:CHILD=r1,r2,..., found {text:?}"));
    let (edge, values) = text.split_once('=').ok_or_else(bad)?;
    let (node, child) = edge.split_once(':').ok_or_else(bad)?;
    let id = spn
        .find(node)
        .ok_or_else(|| HarnessError::Usage(format!("no node named {node:?}")))?;
    let child: usize = child.parse().map_err(|_| bad())?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<u128>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != parties {
        return Err(HarnessError::Usage(format!(
            "mask {text:?} has {} values for {parties} parties",
            values.len()
        )));
    }
    Ok((id, child, values))
}

fn weights_table(spn: &SpnGraph, weights: &BTreeMap<NodeId, Vec<u128>>) -> String {
    let mut out = String::new();
    for (i, ws) in weights {
        let cells: Vec<String> = ws.iter().map(u128::to_string).collect();
        let _ = writeln!(out, "{} {}", spn.node(*i).name, cells.join(" "));
    }
    out
}

pub(super) fn run(
    args: LearnArgs,
    file: RunConfig,
    out: &mut dyn Write,
) -> Result<(), HarnessError> {
    let cfg = args.run.over(file);
    let spn = load_structure(cfg.structure_path()?)?;
    let settings = cfg.resolve(spn.scale())?;
    if args.mode == LearnMode::Oracle {
        return oracle(&spn, &cfg, &settings, out);
    }
    if args.mode == LearnMode::Exact && !args.masks.is_empty() {
        return Err(HarnessError::Usage(
            "--mask only applies to approx mode".into(),
        ));
    }
    if cfg.debug_reconstruct && !RECONSTRUCT_ALLOWED {
        return Err(HarnessError::Usage(
            "--debug-reconstruct is disabled in this build".into(),
        ));
    }
    let n = settings.sharing.parties();
    let distributed = settings.addresses.is_some();
    let (partitions, stats): (Vec<Vec<Vec<bool>>>, Vec<LocalStatistics>) = if distributed {
        if !cfg.data.is_empty() {
            return Err(HarnessError::Usage(
                "members load their own data in a distributed session".into(),
            ));
        }
        (Vec::new(), vec![SumEdgeCounts::zeros(&spn); n])
    } else {
        let partitions = load_partitions(&spn, &cfg.data, n)?;
        let stats = local_statistics(&spn, &partitions)?;
        (partitions, stats)
    };

    let mut session = settings.session();
    let mut fp = settings.fixed;
    let (outcome, exercises, predicted) = match args.mode {
        LearnMode::Exact => {
            if !settings.divisor_bound_given {
                if distributed {
                    return Err(HarnessError::Usage(
                        "a distributed session needs an explicit --divisor-bound".into(),
                    ));
                }
                let rows: usize = partitions.iter().map(Vec::len).sum();
                fp.divisor_bound = fp.scale.max(rows as u128);
            }
            let (plan, _) = plan_learn_exact(&spn, n, &fp)?;
            let predicted = CostModel::new(n).plan_messages(plan.exercises());
            let outcome = learn_exact(&spn, &stats, &session, &fp)?;
            (outcome, plan.exercises().len(), predicted)
        }
        LearnMode::Approx => {
            let mut scripted = BTreeMap::new();
            for m in &args.masks {
                let (i, j, values) = parse_mask(&spn, m, n)?;
                scripted.insert(mask_id(i, j), values);
            }
            if !scripted.is_empty() {
                session.dealer = Dealer::Scripted(scripted);
            }
            let (plan, _) = plan_learn_approximate(&spn, n, spn.scale())?;
            let predicted = CostModel::new(n).plan_messages(plan.exercises());
            let outcome = learn_approximate(&spn, &stats, &session)?;
            (outcome, plan.exercises().len(), predicted)
        }
        LearnMode::Oracle => unreachable!("handled above"),
    };
    let LearnOutcome {
        model,
        degenerate,
        session: result,
    } = outcome;
    for &i in &degenerate {
        tracing::warn!(node = %spn.node(i).name, "sum node has no data, weights are uniform");
    }

    let report = LearnReport {
        mode: match model.mode {
            ShareMode::Polynomial => "exact",
            ShareMode::Additive => "approx",
        },
        parties: n,
        degree: settings.sharing.degree(),
        prime: settings.field.modulus().to_string(),
        scale: fp.scale,
        precision: fp.precision,
        rho: fp.rho,
        divisor_bound: fp.divisor_bound,
        exercises,
        degenerate: degenerate
            .iter()
            .map(|&i| spn.node(i).name.clone())
            .collect(),
        predicted_messages: predicted,
        traffic: result.counters.clone(),
    };
    let mut text = String::new();
    let _ = writeln!(
        text,
        "learned {} sum nodes with {} parties ({} mode, degree {})",
        spn.sum_nodes().count(),
        n,
        report.mode,
        report.degree
    );
    let _ = writeln!(
        text,
        "messages {}, bytes {}, exercises {}, wall time {:.1} ms",
        result.counters.total.messages,
        result.counters.total.bytes,
        exercises,
        result.wall_time.as_secs_f64() * 1e3
    );
    if !report.degenerate.is_empty() {
        let _ = writeln!(text, "degenerate {}", report.degenerate.join(" "));
    }

    if let Some(dir) = &cfg.out {
        for (p, shares) in &model.parties {
            write_file(
                &dir.join(format!("party{}.shares", p.get())),
                &shares.to_text(&spn),
            )?;
        }
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_file(&dir.join("report.json"), &(json + "\n"))?;
        write_file(&dir.join("report.txt"), &result.counters.table())?;
        let _ = writeln!(
            text,
            "wrote {} share files and the traffic report to {}",
            model.parties.len(),
            dir.display()
        );
    }

    let mut mismatch = None;
    if cfg.debug_reconstruct {
        let weights = model.reconstruct(&spn)?;
        let _ = writeln!(text, "reconstructed weights");
        text.push_str(&weights_table(&spn, &weights));
        if args.mode == LearnMode::Exact {
            let pooled: Vec<Vec<bool>> = partitions.concat();
            let counts = count_contributions(&spn, &pooled)
                .map_err(|v| HarnessError::Validation(v.to_string()))?;
            let expected = oracle_learn(&spn, &counts, 0).weights;
            let tau = fp.learning_tolerance();
            let worst = deviation(&weights, &expected);
            let _ = writeln!(
                text,
                "largest deviation from plaintext learning {worst} (tolerance {tau})"
            );
            if worst > tau {
                mismatch = Some(format!("deviation {worst} exceeds tolerance {tau}"));
            }
        }
    }
    emit(out, text)?;
    match mismatch {
        Some(m) => Err(HarnessError::Mismatch(m)),
        None => Ok(()),
    }
}

fn deviation(a: &BTreeMap<NodeId, Vec<u128>>, b: &BTreeMap<NodeId, Vec<u128>>) -> u128 {
    a.iter()
        .flat_map(|(i, ws)| ws.iter().zip(&b[i]).map(|(x, y)| x.abs_diff(*y)))
        .max()
        .unwrap_or(0)
}

fn oracle(
    spn: &SpnGraph,
    cfg: &RunConfig,
    settings: &Settings,
    out: &mut dyn Write,
) -> Result<(), HarnessError> {
    let partitions = load_partitions(spn, &cfg.data, cfg.data.len())?;
    let rows: Vec<Vec<bool>> = partitions.concat();
    let counts = count_contributions(spn, &rows)
        .map_err(|v| HarnessError::Validation(format!("selectivity: {v}")))?;
    let learned = oracle_learn(spn, &counts, settings.alpha);
    for &i in &learned.degenerate {
        tracing::warn!(node = %spn.node(i).name, "sum node has no data, weights are uniform");
    }
    let text = write_structure(&spn.with_weights(&learned.weights));
    match &cfg.out {
        Some(path) => {
            write_file(path, &text)?;
            emit(out, weights_table(spn, &learned.weights))
        }
        None => emit(out, text),
    }
}
