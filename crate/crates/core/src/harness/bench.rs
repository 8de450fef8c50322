use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::net::CostModel;
use crate::protocols::{
    infer_marginal, learn_approximate, learn_exact, local_statistics, plan_inference,
    plan_learn_approximate, plan_learn_exact, EvidenceQuery, ShareMode, SharedWeightModel,
};
use crate::sharing::SharingParams;
use crate::spn::{load_structure, sample_rows, SpnGraph};

use super::{emit, write_file, HarnessError, RunConfig, Settings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchTask {
    LearnExact,
    LearnApprox,
    Infer,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "learn-exact")]
    pub task: BenchTask,
    /// Structures to run; `--structure` is used when empty.
    #[arg(long = "structures", value_delimiter = ',')]
    pub structures: Vec<PathBuf>,
    #[arg(long = "party-counts", value_delimiter = ',', default_values_t = [3usize, 5])]
    pub party_counts: Vec<usize>,
    /// Rows sampled from each structure's own weights, split round robin
    /// over the parties.
    #[arg(long, default_value_t = 64)]
    pub rows: usize,
    #[command(flatten)]
    pub run: RunConfig,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub structure: String,
    pub parties: usize,
    pub exercises: usize,
    pub messages: u64,
    pub bytes: u64,
    pub predicted_messages: u64,
    pub wall_ms: f64,
    /// Messages relative to the first party count of the same structure.
    pub ratio: f64,
    /// `(n / n_first)^2`, the shape of the dominating share exchanges.
    pub quadratic: f64,
}

fn with_parties(settings: &Settings, cfg: &RunConfig, n: usize) -> Result<Settings, HarnessError> {
    let sharing = match cfg.threshold {
        Some(t) => SharingParams::new(n, t, settings.field),
        None => SharingParams::with_default_degree(n, settings.field),
    }
    .map_err(|e| HarnessError::Validation(e.to_string()))?;
    Ok(Settings {
        sharing,
        ..settings.clone()
    })
}

fn measure(
    task: BenchTask,
    spn: &SpnGraph,
    settings: &Settings,
    rows: &[Vec<bool>],
) -> Result<(usize, u64, crate::net::SessionOutcome), HarnessError> {
    let n = settings.sharing.parties();
    let model = CostModel::new(n);
    let session = settings.session();
    let mut partitions = vec![Vec::new(); n];
    for (r, row) in rows.iter().enumerate() {
        partitions[r % n].push(row.clone());
    }
    Ok(match task {
        BenchTask::LearnExact => {
            let stats = local_statistics(spn, &partitions)?;
            let mut fp = settings.fixed;
            if !settings.divisor_bound_given {
                fp.divisor_bound = fp.scale.max(rows.len() as u128);
            }
            let (plan, _) = plan_learn_exact(spn, n, &fp)?;
            let outcome = learn_exact(spn, &stats, &session, &fp)?;
            (
                plan.exercises().len(),
                model.plan_messages(plan.exercises()),
                outcome.session,
            )
        }
        BenchTask::LearnApprox => {
            let stats = local_statistics(spn, &partitions)?;
            let (plan, _) = plan_learn_approximate(spn, n, spn.scale())?;
            let outcome = learn_approximate(spn, &stats, &session)?;
            (
                plan.exercises().len(),
                model.plan_messages(plan.exercises()),
                outcome.session,
            )
        }
        BenchTask::Infer => {
            let mut rng = ChaCha20Rng::seed_from_u64(settings.seed);
            let shares =
                SharedWeightModel::deal(spn, settings.sharing, ShareMode::Polynomial, &mut rng)?;
            let (plan, _) = plan_inference(spn)?;
            let outcome = infer_marginal(spn, &shares, &EvidenceQuery::default(), &session)?;
            (
                plan.exercises().len(),
                model.plan_messages(plan.exercises()),
                outcome.session,
            )
        }
    })
}

pub(super) fn run(
    args: BenchArgs,
    file: RunConfig,
    out: &mut dyn Write,
) -> Result<(), HarnessError> {
    let cfg = args.run.over(file);
    if !cfg.addresses.is_empty() {
        return Err(HarnessError::Usage(
            "bench runs every party in this process".into(),
        ));
    }
    let structures = if args.structures.is_empty() {
        vec![cfg.structure_path()?.to_path_buf()]
    } else {
        args.structures.clone()
    };
    if args.party_counts.is_empty() {
        return Err(HarnessError::Usage("no party counts given".into()));
    }
    let mut table = Vec::new();
    for path in &structures {
        let spn = load_structure(path)?;
        let base = cfg.resolve(spn.scale())?;
        let rows = sample_rows(&spn, args.rows, &mut ChaCha20Rng::seed_from_u64(base.seed));
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let first = table.len();
        for &n in &args.party_counts {
            let settings = with_parties(&base, &cfg, n)?;
            let (exercises, predicted, outcome) = measure(args.task, &spn, &settings, &rows)?;
            let messages = outcome.counters.total.messages;
            let (ratio, quadratic) = match table.get(first) {
                Some(BenchRow {
                    messages: m0,
                    parties: n0,
                    ..
                }) => (
                    messages as f64 / *m0 as f64,
                    (n as f64 / *n0 as f64).powi(2),
                ),
                None => (1.0, 1.0),
            };
            table.push(BenchRow {
                structure: name.clone(),
                parties: n,
                exercises,
                messages,
                bytes: outcome.counters.total.bytes,
                predicted_messages: predicted,
                wall_ms: outcome.wall_time.as_secs_f64() * 1e3,
                ratio,
                quadratic,
            });
        }
    }

    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:<16} {:>4} {:>9} {:>12} {:>14} {:>12} {:>11} {:>7} {:>7}",
        "structure", "n", "exercises", "messages", "bytes", "predicted", "wall ms", "ratio", "n^2"
    );
    for r in &table {
        let _ = writeln!(
            text,
            "{:<16} {:>4} {:>9} {:>12} {:>14} {:>12} {:>11.1} {:>7.3} {:>7.3}",
            r.structure,
            r.parties,
            r.exercises,
            r.messages,
            r.bytes,
            r.predicted_messages,
            r.wall_ms,
            r.ratio,
            r.quadratic
        );
    }
    if let Some(path) = &cfg.out {
        let json = serde_json::to_string_pretty(&table).expect("rows serialize");
        write_file(path, &(json + "\n"))?;
    }
    emit(out, text)
}
