use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde_json::json;
use uafuse::data::pgm::{to_gray, write_slices};
use uafuse::data::read_nifti;

use crate::manifest::RunManifest;

#[derive(Args, Debug)]
pub struct SlicesArgs {
    /// NIfTI volume; integer volumes use the class palette, float volumes are min-max scaled.
    #[arg(long)]
    pub vol: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &SlicesArgs) -> Result<()> {
    RunManifest::new("slices", None, json!({"vol": args.vol}), None, &args.out).write()?;
    let img = read_nifti(&args.vol)?;
    let written = write_slices(&to_gray(&img.data), &args.out)?;
    eprintln!("wrote {} slices to {}", written.len(), args.out.display());
    Ok(())
}
