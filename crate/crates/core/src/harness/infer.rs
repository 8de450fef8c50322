use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use crate::protocols::{
    build_leaf_configuration, infer_marginal, EvidenceQuery, PartyShares, ProtocolError, ShareMode,
    SharedWeightModel,
};
use crate::spn::{load_structure, LeafValues, SpnGraph};

use super::{emit, HarnessError, RunConfig};

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Query assignment x, e.g. `0=1,1=1`.
    #[arg(long, default_value = "")]
    pub query: String,
    /// Evidence assignment e; empty means no evidence.
    #[arg(long, default_value = "")]
    pub evidence: String,
    /// Share file of one party; repeat for every party. Without share files
    /// the weights in the structure are used in plaintext.
    #[arg(long = "shares")]
    pub shares: Vec<PathBuf>,
    #[command(flatten)]
    pub run: RunConfig,
}

fn plaintext(spn: &SpnGraph, query: &EvidenceQuery) -> Result<f64, HarnessError> {
    let leaves = |assign: &BTreeMap<usize, bool>| -> Result<LeafValues<f64>, HarnessError> {
        Ok(build_leaf_configuration(assign, spn.num_vars(), 1)?
            .into_iter()
            .map(|[a, b]| [a as f64, b as f64])
            .collect())
    };
    let eval = |l: &LeafValues<f64>| {
        spn.evaluate(l)
            .map_err(|e| HarnessError::Validation(e.to_string()))
    };
    let joint = eval(&leaves(&query.joint()?)?)?;
    let evidence = eval(&leaves(&query.e)?)?;
    if evidence <= 0.0 {
        return Err(ProtocolError::UndefinedConditional.into());
    }
    Ok(joint / evidence)
}

pub(super) fn run(
    args: InferArgs,
    file: RunConfig,
    out: &mut dyn Write,
) -> Result<(), HarnessError> {
    let cfg = args.run.over(file);
    let spn = load_structure(cfg.structure_path()?)?;
    let query = EvidenceQuery::parse(&args.query, &args.evidence)?;
    let settings = cfg.resolve(spn.scale())?;
    if args.shares.is_empty() && settings.addresses.is_none() {
        let p = plaintext(&spn, &query)?;
        return emit(out, format!("Pr(x | e) = {p:.6} (plaintext weights)\n"));
    }

    let model = if args.shares.is_empty() {
        SharedWeightModel {
            mode: ShareMode::Polynomial,
            sharing: settings.sharing,
            scale: spn.scale(),
            parties: BTreeMap::new(),
        }
    } else {
        let parts = args
            .shares
            .iter()
            .map(|p| PartyShares::load(&spn, p))
            .collect::<Result<Vec<_>, _>>()?;
        SharedWeightModel::from_parties(parts)?
    };
    let explicit = cfg.prime.is_some() || cfg.parties.is_some() || cfg.threshold.is_some();
    if explicit && model.sharing != settings.sharing {
        return Err(HarnessError::Validation(
            "share files were made with different field or party parameters".into(),
        ));
    }
    let mut session = settings.session();
    session.sharing = model.sharing;
    let result = infer_marginal(&spn, &model, &query, &session)?;

    let d = spn.scale();
    let layers = spn.layers();
    let mut text = String::new();
    let _ = writeln!(text, "Pr(x | e) = {:.6}", result.probability);
    let _ = writeln!(
        text,
        "S(xe) = {}, S(e) = {} at scale {d}",
        result.joint, result.evidence
    );
    let _ = writeln!(
        text,
        "fixed-point error of each root within {:.6} (2 x {layers} layers / {d})",
        2.0 * layers as f64 / d as f64
    );
    let _ = writeln!(
        text,
        "messages {}, bytes {}, wall time {:.1} ms",
        result.session.counters.total.messages,
        result.session.counters.total.bytes,
        result.session.wall_time.as_secs_f64() * 1e3
    );
    emit(out, text)
}
