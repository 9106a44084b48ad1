use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde_json::json;
use uafuse::data::{normalize, read_case, write_nifti, NiftiData, NiftiImage, LABEL_FILE};
use uafuse::infer::predict_volume;
use uafuse::train::load_model;
use uafuse::Error;

use crate::manifest::RunManifest;

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Case directory with `modal1.nii`, `modal2.nii`, ...
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write each stream's uncertainty as `u_modal<k>.nii`.
    #[arg(long)]
    pub emit_uncertainty: bool,
}

pub fn run(args: &PredictArgs) -> Result<()> {
    if args.out.canonicalize().ok().is_some_and(|o| args.case.canonicalize().ok() == Some(o)) {
        bail!(Error::Config("--out must differ from --case; prediction never overwrites its inputs".into()));
    }
    let model = load_model(&args.ckpt)?;
    let config = json!({"ckpt": args.ckpt, "case": args.case, "emit_uncertainty": args.emit_uncertainty, "inference": model.inference});
    RunManifest::new("predict", None, config, None, &args.out).write()?;
    let case = read_case(&args.case)?;
    let expected = model.net.config.num_modalities;
    if case.volume.modalities.len() != expected {
        bail!(Error::Config(format!("case has {} modalities, checkpoint expects {expected}", case.volume.modalities.len())));
    }
    let vol = if model.inference.normalize { normalize(&case.volume) } else { case.volume.clone() };
    let s = &model.inference;
    let pred = predict_volume(&model.net, &vol, s.patch_size, s.stride)?;
    let spacing = vol.spacing;
    write_nifti(args.out.join(LABEL_FILE), &NiftiImage { data: NiftiData::U8(pred.labels()), spacing })?;
    if args.emit_uncertainty {
        for k in 0..expected {
            let u = pred.uncertainty(k)?;
            write_nifti(args.out.join(format!("u_modal{}.nii", k + 1)), &NiftiImage { data: NiftiData::F32(u), spacing })?;
        }
    }
    eprintln!("wrote predictions for {} to {}", case.name, args.out.display());
    Ok(())
}
