use std::fmt::Write as _;
use std::io::Write;

use clap::Args;

use crate::spn::{check_selectivity, load_dataset, load_structure};

use super::{emit, HarnessError, RunConfig};

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub run: RunConfig,
}

pub(super) fn run(
    args: ValidateArgs,
    file: RunConfig,
    out: &mut dyn Write,
) -> Result<(), HarnessError> {
    let cfg = args.run.over(file);
    let spn = load_structure(cfg.structure_path()?)?;
    let mut report = String::new();
    let _ = writeln!(report, "{}", spn.stats());
    let violations = spn.validate();
    for v in &violations {
        let _ = writeln!(report, "violation {v}");
    }
    let mut selectivity = 0;
    for path in &cfg.data {
        let rows = load_dataset(path, Some(spn.num_vars()))?;
        let found = check_selectivity(&spn, &rows);
        for v in &found {
            let _ = writeln!(report, "{}: {v}", path.display());
        }
        let _ = writeln!(
            report,
            "{}: {} rows, {} selectivity violations",
            path.display(),
            rows.len(),
            found.len()
        );
        selectivity += found.len();
    }
    let _ = writeln!(report, "violations {}", violations.len() + selectivity);
    emit(out, report)?;
    if violations.is_empty() && selectivity == 0 {
        Ok(())
    } else {
        Err(HarnessError::Validation(format!(
            "{} structure and {selectivity} selectivity violations",
            violations.len()
        )))
    }
}
