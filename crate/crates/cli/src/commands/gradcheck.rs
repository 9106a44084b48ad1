use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use uafuse::tensor::gradcheck::{check_all, check_op, DEFAULT_SEEDS, DEFAULT_STEP, DEFAULT_TOLERANCE};

use crate::exit;
use crate::manifest::write_json;

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Check only this op; every registered op when omitted.
    #[arg(long)]
    pub op: Option<String>,
    #[arg(long, default_value_t = DEFAULT_SEEDS)]
    pub seeds: u64,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Also write the reports as a JSON array.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Returns the exit code: success, or a failed check.
pub fn run(args: &GradcheckArgs) -> Result<u8> {
    let reports = match &args.op {
        Some(op) => vec![check_op(op, args.seeds, args.step, args.tolerance)?],
        None => check_all(args.seeds, args.step, args.tolerance)?,
    };
    for r in &reports {
        println!(
            "{:<18} {}  max rel err {:.3e}  ({} elements, {} seeds)",
            r.op,
            if r.passed { "PASS" } else { "FAIL" },
            r.max_rel_error,
            r.elements_checked,
            r.seeds
        );
    }
    if let Some(p) = &args.json {
        write_json(p, &reports)?;
    }
    Ok(if reports.iter().all(|r| r.passed) { exit::SUCCESS } else { exit::CHECK_FAILED })
}
