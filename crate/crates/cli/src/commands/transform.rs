use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use cylseg::transform::cylindrical_transform;
use cylseg::{with_volume, AnyVolume, OffsetTable, Pole};
use serde::{Deserialize, Serialize};

use super::transform_config;
use crate::config::{ensure_parent, required, write_run_record};
use crate::RunContext;

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    /// `<out>.f32` with a `<out>.json` header.
    Raw,
    /// 16-bit `<out>.pgm` preview.
    Pgm,
    Both,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TransformArgs {
    /// Input volume base path.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    /// Pole as `u,v,z` (row, column, slice).
    #[arg(long)]
    pub pole: Option<String>,
    /// Slice step between sampled slices.
    #[arg(long, default_value_t = 3)]
    pub ds: usize,
    /// Number of sampled slices (odd).
    #[arg(long, default_value_t = 5)]
    pub slices: usize,
    /// Output image base path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ImageFormat::Raw)]
    pub format: ImageFormat,
}

impl TransformArgs {
    pub fn run(self, ctx: &RunContext) -> Result<()> {
        let vol_path = required(&self.volume, "volume")?;
        let out = required(&self.out, "out")?;
        let pole: Pole = required(&self.pole, "pole")?.parse()?;
        let cfg = transform_config(self.ds, self.slices)?;
        let vol = AnyVolume::load(&vol_path).with_context(|| format!("reading {}", vol_path.display()))?;
        let img = with_volume!(&vol, v => {
            let table = OffsetTable::for_volume(v);
            cylindrical_transform(v, pole, cfg, &table)?.to_f32()
        });
        ensure_parent(&out)?;
        if matches!(self.format, ImageFormat::Raw | ImageFormat::Both) {
            img.save_raw(&out)?;
        }
        if matches!(self.format, ImageFormat::Pgm | ImageFormat::Both) {
            img.save_pgm(out.with_extension("pgm"))?;
        }
        write_run_record(&out, "transform", ctx.threads, &self, None)?;
        println!(
            "{}×{} image for pole {},{},{} written to {}",
            img.rows,
            img.cols,
            pole.u,
            pole.v,
            pole.z,
            out.display()
        );
        Ok(())
    }
}
