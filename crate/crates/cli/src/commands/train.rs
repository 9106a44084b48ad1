use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde_json::json;
use uafuse::data::{list_cases, read_case, Case};
use uafuse::train::{save_checkpoint, train, Event, TrainConfig};
use uafuse::Error;

use crate::manifest::{read_json, write_json, RunManifest};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const STEPS_FILE: &str = "steps.jsonl";
pub const BEST_CKPT: &str = "best.uaf1";
pub const FINAL_CKPT: &str = "final.uaf1";
pub const SUMMARY_FILE: &str = "summary.json";
pub const NAN_DUMP_FILE: &str = "nan_dump.json";

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training config (JSON); omitted keys take their defaults.
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset directory holding one subdirectory per case.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn select<'a>(all: &'a [Case], names: Option<&[String]>, what: &str) -> Result<Vec<&'a Case>> {
    match names {
        None => Ok(all.iter().collect()),
        Some(names) => names
            .iter()
            .map(|n| all.iter().find(|c| &c.name == n).with_context(|| format!("{what} case '{n}' not found in the dataset")))
            .collect(),
    }
}

fn jsonl(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let cfg: TrainConfig = read_json(&args.config)?;
    cfg.validate()?;
    RunManifest::new("train", Some(&args.config), serde_json::to_value(&cfg)?, Some(cfg.seed), &args.out).write()?;
    let cases = list_cases(&args.data)?.iter().map(read_case).collect::<uafuse::Result<Vec<_>>>()?;
    if cases.is_empty() {
        bail!(Error::Config(format!("no cases found under {}", args.data.display())));
    }
    let train_set = select(&cases, cfg.train_cases.as_deref(), "training")?;
    let val_set = match &cfg.val_cases {
        Some(v) => select(&cases, Some(v), "validation")?,
        None => train_set.clone(),
    };
    let train_vols: Vec<_> = train_set.iter().map(|c| c.volume.clone()).collect();
    let val_vols: Vec<_> = val_set.iter().map(|c| c.volume.clone()).collect();

    let mut metrics = jsonl(&args.out.join(METRICS_FILE))?;
    let mut steps = jsonl(&args.out.join(STEPS_FILE))?;
    let best_path = args.out.join(BEST_CKPT);
    let outcome = train::<f32>(&cfg, &train_vols, &val_vols, &mut |event| {
        let io = |e: std::io::Error| Error::Io { path: args.out.clone(), source: e };
        match event {
            Event::Step(r) => writeln!(steps, "{}", serde_json::to_string(r)?).map_err(io)?,
            Event::Epoch(r) => {
                writeln!(metrics, "{}", serde_json::to_string(r)?).map_err(io)?;
                metrics.flush().map_err(io)?;
                steps.flush().map_err(io)?;
                let dice = r.validation.as_ref().map_or(String::new(), |v| format!("  val mean Dice {:.1}", 100.0 * v.fused.mean));
                eprintln!("epoch {:>3} stage {} loss {:.4}{dice}  ({:.1}s)", r.epoch, r.stage, r.losses.total, r.seconds);
            }
            Event::Improved { epoch, mean_dice, net, optimizer } => {
                save_checkpoint(&best_path, net, Some(optimizer), &cfg, json!({"epoch": epoch, "mean_dice": mean_dice}))?;
            }
        }
        Ok(())
    });
    let outcome = match outcome {
        Err(Error::NonFiniteLoss { epoch, batch, seed, patches }) => {
            let dump = json!({"epoch": epoch, "batch": batch, "seed": seed, "patches": patches});
            write_json(&args.out.join(NAN_DUMP_FILE), &dump)?;
            return Err(Error::NonFiniteLoss { epoch, batch, seed, patches }.into());
        }
        other => other?,
    };
    let s = &outcome.state;
    save_checkpoint(args.out.join(FINAL_CKPT), &s.net, Some(&s.optimizer), &cfg, json!({"epoch": s.epoch - 1}))?;
    let best = outcome.best.as_ref().map(|b| json!({"epoch": b.epoch, "mean_dice": b.mean_dice}));
    write_json(&args.out.join(SUMMARY_FILE), &json!({"epochs": s.epoch, "best": best}))?;
    if let Some(b) = &outcome.best {
        eprintln!("best validation mean Dice {:.1} at epoch {}", 100.0 * b.mean_dice, b.epoch);
    }
    Ok(())
}
