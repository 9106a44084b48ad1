use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use uafuse::data::{list_cases, read_nifti, Grid, LABEL_FILE};
use uafuse::train::dice_report;
use uafuse::Error;

use crate::manifest::write_json;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Prediction directory: one subdirectory per case, or a single case.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth directory laid out like `--pred`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Class count including background; inferred from the labels when omitted.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CaseScore {
    pub name: String,
    /// Foreground classes 1.., as fractions in [0, 1].
    pub dice: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_classes: usize,
    pub cases: Vec<CaseScore>,
    /// Per-class mean over cases.
    pub mean_dice: Vec<f64>,
    pub mean: f64,
}

fn labels(path: &Path) -> Result<Grid<u8>> {
    Ok(read_nifti(path)?.data.to_labels()?)
}

/// `(name, pred, truth)` label files paired by directory name.
fn pairs(pred: &Path, truth: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if truth.join(LABEL_FILE).is_file() {
        let name = truth.file_name().map_or("case".into(), |n| n.to_string_lossy().into_owned());
        return Ok(vec![(name, pred.join(LABEL_FILE), truth.join(LABEL_FILE))]);
    }
    let mut dirs: Vec<PathBuf> = list_cases(truth)?;
    if dirs.is_empty() {
        // Truth-only layouts may lack modality files; fall back to label files.
        dirs = std::fs::read_dir(truth)
            .with_context(|| format!("cannot list {}", truth.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(LABEL_FILE).is_file())
            .collect();
        dirs.sort();
    }
    if dirs.is_empty() {
        bail!(Error::Config(format!("no cases with {LABEL_FILE} under {}", truth.display())));
    }
    Ok(dirs
        .iter()
        .map(|d| {
            let name = d.file_name().unwrap_or_default().to_string_lossy().into_owned();
            (name.clone(), pred.join(&name).join(LABEL_FILE), d.join(LABEL_FILE))
        })
        .collect())
}

pub fn evaluate(args: &EvalArgs) -> Result<EvalReport> {
    let loaded = pairs(&args.pred, &args.truth)?
        .into_iter()
        .map(|(name, p, t)| {
            let p = labels(&p).with_context(|| format!("prediction for case '{name}'"))?;
            let t = labels(&t).with_context(|| format!("ground truth for case '{name}'"))?;
            if p.dims() != t.dims() {
                bail!(Error::Config(format!("case '{name}': prediction dims {:?} vs truth {:?}", p.dims(), t.dims())));
            }
            Ok((name, p, t))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_label = loaded.iter().flat_map(|(_, p, t)| p.data().iter().chain(t.data())).copied().max().unwrap_or(0);
    let num_classes = args.classes.unwrap_or((max_label as usize + 1).max(2));
    if (max_label as usize) >= num_classes {
        bail!(Error::Config(format!("label {max_label} found but --classes is {num_classes}")));
    }
    let cases = loaded
        .iter()
        .map(|(name, p, t)| {
            let r = dice_report(p.data(), t.data(), num_classes)?;
            Ok(CaseScore { name: name.clone(), dice: r.per_class, mean: r.mean })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = cases.len() as f64;
    let mean_dice: Vec<f64> = (0..num_classes - 1).map(|c| cases.iter().map(|s| s.dice[c]).sum::<f64>() / n).collect();
    let mean = cases.iter().map(|s| s.mean).sum::<f64>() / n;
    Ok(EvalReport { num_classes, cases, mean_dice, mean })
}

/// Dice as percentages with one decimal.
pub fn table(r: &EvalReport) -> String {
    let width = r.cases.iter().map(|c| c.name.len()).max().unwrap_or(4).max(4);
    let mut out = format!("{:<width$}", "case");
    for c in 1..r.num_classes {
        out += &format!(" {:>8}", format!("class{c}"));
    }
    out += &format!(" {:>8}\n", "mean");
    let row = |name: &str, dice: &[f64], mean: f64| {
        let mut s = format!("{name:<width$}");
        for d in dice {
            s += &format!(" {:>8.1}", 100.0 * d);
        }
        s + &format!(" {:>8.1}\n", 100.0 * mean)
    };
    for c in &r.cases {
        out += &row(&c.name, &c.dice, c.mean);
    }
    if r.cases.len() > 1 {
        out += &row("mean", &r.mean_dice, r.mean);
    }
    out
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let report = evaluate(args)?;
    print!("{}", table(&report));
    match &args.json {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string(&report)?),
    }
    Ok(())
}
