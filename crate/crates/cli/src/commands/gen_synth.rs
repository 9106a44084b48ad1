use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uafuse::data::{generate_phantom, write_case, PhantomSpec};

use crate::manifest::{read_json, write_json, RunManifest};

pub const DATASET_FILE: &str = "dataset.json";

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    /// Phantom spec (JSON); the built-in 64³ two-modality default when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CaseEntry {
    pub name: String,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: PhantomSpec,
    pub seed: u64,
    pub count: usize,
    pub cases: Vec<CaseEntry>,
}

/// Case `i` uses the `i`-th value drawn from a generator seeded with `seed`.
pub fn case_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

pub fn run(args: &GenSynthArgs) -> Result<()> {
    let spec: PhantomSpec = match &args.spec {
        Some(p) => read_json(p)?,
        None => PhantomSpec::default(),
    };
    spec.validate()?;
    RunManifest::new("gen-synth", args.spec.as_deref(), serde_json::to_value(&spec)?, Some(args.seed), &args.out).write()?;
    let mut cases = Vec::with_capacity(args.count);
    for (i, seed) in case_seeds(args.seed, args.count).into_iter().enumerate() {
        let name = format!("case_{i}");
        let p = generate_phantom(&spec, seed)?;
        write_case(args.out.join(&name), &p.volume, p.region.as_ref())?;
        eprintln!("wrote {name}");
        cases.push(CaseEntry { name, seed });
    }
    write_json(&args.out.join(DATASET_FILE), &DatasetManifest { spec, seed: args.seed, count: args.count, cases })
}
