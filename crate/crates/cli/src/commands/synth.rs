use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use cylseg::synth::{make_phantom_any, PhantomSpec};
use serde::{Deserialize, Serialize};

use crate::config::{ensure_parent, required, sibling, write_run_record};
use crate::RunContext;

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Phantom description (JSON).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output volume base path (`<out>.json` + `<out>.raw`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Label volume base path [default: <out>_labels].
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Noise seed [default: the seed in the description].
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SynthArgs {
    pub fn run(mut self, ctx: &RunContext) -> Result<()> {
        let spec_path = required(&self.spec, "spec")?;
        let out = required(&self.out, "out")?;
        let mut spec = PhantomSpec::load(&spec_path)?;
        let seed = *self.seed.get_or_insert(spec.seed);
        spec.seed = seed;
        let labels_path = self.labels.get_or_insert_with(|| sibling(&out, "_labels")).clone();
        log::info!("phantom {:?} with seed {seed}", spec.dims);
        let (vol, labels) = make_phantom_any(&spec)?;
        ensure_parent(&out)?;
        ensure_parent(&labels_path)?;
        vol.save(&out).with_context(|| format!("writing {}", out.display()))?;
        labels
            .save(&labels_path)
            .with_context(|| format!("writing {}", labels_path.display()))?;
        write_run_record(&out, "synth", ctx.threads, &self, None)?;
        println!("wrote {} and {}", out.display(), labels_path.display());
        Ok(())
    }
}
