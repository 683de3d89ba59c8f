//! `confsets report`: render a results CSV as an aligned table.

use std::path::PathBuf;

use clap::Args;
use confsets::simharness::ExperimentTable;

use crate::{AppError, AppResult};

#[derive(Args)]
pub struct ReportArgs {
    /// Results CSV produced by `confsets simulate`.
    pub results: PathBuf,
    /// Write the rendered table here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: ReportArgs) -> AppResult<()> {
    let text = std::fs::read_to_string(&args.results).map_err(|e| {
        AppError::Input(format!(
            "cannot read results {}: {e}",
            args.results.display()
        ))
    })?;
    let table =
        ExperimentTable::from_csv_str(&text).map_err(|e| AppError::Input(e.to_string()))?;
    let rendered = table.render_text();
    if let Some(out) = &args.out {
        std::fs::write(out, &rendered)?;
    }
    print!("{rendered}");
    Ok(())
}
