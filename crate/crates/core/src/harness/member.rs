use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};

use crate::net::run_member_endpoint;
use crate::protocols::{local_statistics, local_store, PartyShares, ShareMode, SharedWeightModel};
use crate::sharing::PartyId;
use crate::spn::{load_dataset, load_structure};

use super::{emit, write_file, HarnessError, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MemberTask {
    LearnExact,
    LearnApprox,
    Infer,
}

#[derive(Args, Debug)]
pub struct MemberArgs {
    /// This member's party number (1-based).
    #[arg(long)]
    pub party: u16,
    #[arg(long, value_enum)]
    pub task: MemberTask,
    /// This member's share file, for inference.
    #[arg(long)]
    pub shares: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunConfig,
}

pub(super) fn run(
    args: MemberArgs,
    file: RunConfig,
    out: &mut dyn Write,
) -> Result<(), HarnessError> {
    let cfg = args.run.over(file);
    let spn = load_structure(cfg.structure_path()?)?;
    let settings = cfg.resolve(spn.scale())?;
    let addresses = settings
        .addresses
        .clone()
        .ok_or_else(|| HarnessError::Usage("a member needs endpoint addresses".into()))?;
    let party = PartyId::new(args.party)
        .ok()
        .filter(|p| p.index() < settings.sharing.parties())
        .ok_or_else(|| HarnessError::Usage(format!("party {} is not a member", args.party)))?;
    let mut session = settings.session();
    session.remote = None;

    let (store, with_client) = match args.task {
        MemberTask::LearnExact | MemberTask::LearnApprox => {
            let rows = match cfg.data.as_slice() {
                [] => Vec::new(),
                [path] => load_dataset(path, Some(spn.num_vars()))?,
                _ => return Err(HarnessError::Usage("a member holds one data file".into())),
            };
            let stats = local_statistics(&spn, &[rows])?;
            (local_store(&spn, &stats[0], settings.field), false)
        }
        MemberTask::Infer => {
            let path = args
                .shares
                .as_ref()
                .ok_or_else(|| HarnessError::Usage("--shares is required for inference".into()))?;
            let shares = PartyShares::load(&spn, path)?;
            if shares.party != party {
                return Err(HarnessError::Validation(format!(
                    "{} holds the shares of party {}",
                    path.display(),
                    shares.party.get()
                )));
            }
            session.sharing = shares.sharing;
            (shares.to_store(), true)
        }
    };
    let store = run_member_endpoint(&session, party, store, with_client, &addresses)
        .map_err(crate::protocols::ProtocolError::from)?;

    let learn_mode = match args.task {
        MemberTask::LearnExact => Some(ShareMode::Polynomial),
        MemberTask::LearnApprox => Some(ShareMode::Additive),
        MemberTask::Infer => None,
    };
    match (learn_mode, &cfg.out) {
        (Some(mode), Some(dir)) => {
            let model = SharedWeightModel::from_stores(
                &spn,
                &BTreeMap::from([(party, store)]),
                mode,
                settings.sharing,
            )?;
            let path = dir.join(format!("party{}.shares", party.get()));
            write_file(&path, &model.parties[&party].to_text(&spn))?;
            emit(
                out,
                format!("member {} wrote {}\n", party.get(), path.display()),
            )
        }
        _ => emit(out, format!("member {} finished\n", party.get())),
    }
}
