use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use cylseg::dataset::{build_pool, sample_poles, PoolOptions};
use cylseg::{with_volume, AnyVolume, LabelVolume};
use serde::{Deserialize, Serialize};

use super::transform_config;
use crate::config::{required, write_run_record};
use crate::RunContext;

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SampleArgs {
    /// Input volume base path.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    /// Ground-truth label volume base path.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Poles drawn per class per slice (capped by availability).
    #[arg(long, default_value_t = 1000)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Slice step between sampled slices.
    #[arg(long, default_value_t = 3)]
    pub ds: usize,
    /// Number of sampled slices (odd).
    #[arg(long, default_value_t = 5)]
    pub slices: usize,
    /// Pool directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write only the manifest; images are regenerated from the volume on use.
    #[arg(long, default_value_t = false)]
    pub lazy: bool,
    /// Identifier recorded in the pool [default: file name of --volume].
    #[arg(long)]
    pub volume_id: Option<String>,
}

impl SampleArgs {
    pub fn run(mut self, ctx: &RunContext) -> Result<()> {
        let vol_path = required(&self.volume, "volume")?;
        let labels_path = required(&self.labels, "labels")?;
        let out = required(&self.out, "out")?;
        let cfg = transform_config(self.ds, self.slices)?;
        let volume_id = self
            .volume_id
            .get_or_insert_with(|| {
                vol_path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            })
            .clone();
        let vol = AnyVolume::load(&vol_path).with_context(|| format!("reading {}", vol_path.display()))?;
        let labels = LabelVolume::load(&labels_path).with_context(|| format!("reading {}", labels_path.display()))?;
        log::info!(
            "sampling {} poles per class per slice with seed {}",
            self.per_class,
            self.seed
        );
        let samples = sample_poles(&labels, self.per_class, self.seed)?;
        let opts = PoolOptions {
            volume_id,
            seed: Some(self.seed),
            store_images: !self.lazy,
        };
        let pool = with_volume!(&vol, v => build_pool(v, &labels, cfg, &samples, &out, &opts)?);
        write_run_record(&out, "sample", ctx.threads, &self, None)?;
        println!(
            "pool of {} samples (per class {:?}) written to {}",
            pool.len(),
            pool.class_counts(),
            out.display()
        );
        Ok(())
    }
}
