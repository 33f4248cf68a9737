use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use cylseg::segment::{segment_volume, InferenceConfig, Roi};
use cylseg::{with_volume, AnyVolume, Model};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::transform_config;
use crate::config::{ensure_parent, required, sibling, write_run_record};
use crate::RunContext;

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SegmentArgs {
    /// Input volume base path.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    /// Trained model (JSON).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Slice step between sampled slices (as used for training).
    #[arg(long, default_value_t = 3)]
    pub ds: usize,
    /// Number of sampled slices (as used for training).
    #[arg(long, default_value_t = 5)]
    pub slices: usize,
    /// In-plane stride; skipped voxels copy their nearest classified voxel.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Slice stride.
    #[arg(long, default_value_t = 1)]
    pub stride_z: usize,
    /// Region of interest `m0,m1,n0,n1,s0,s1` (half-open); voxels outside get label 0.
    #[arg(long)]
    pub roi: Option<String>,
    /// Also write per-class probability volumes `<out>_score<c>`.
    #[arg(long, default_value_t = false)]
    pub scores: bool,
    /// Output mask base path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SegmentArgs {
    pub fn run(self, ctx: &RunContext) -> Result<()> {
        let vol_path = required(&self.volume, "volume")?;
        let model_path = required(&self.model, "model")?;
        let out = required(&self.out, "out")?;
        let cfg_t = transform_config(self.ds, self.slices)?;
        let roi: Option<Roi> = self.roi.as_deref().map(str::parse).transpose()?;
        let cfg_i = InferenceConfig {
            stride_xy: self.stride,
            stride_z: self.stride_z,
            roi,
            emit_scores: self.scores,
            threads: ctx.threads,
        };
        let model = Model::<f64>::load(&model_path).with_context(|| format!("reading {}", model_path.display()))?;
        let vol = AnyVolume::load(&vol_path).with_context(|| format!("reading {}", vol_path.display()))?;
        let seg = with_volume!(&vol, v => segment_volume(v, &model, cfg_t, &cfg_i)?);
        ensure_parent(&out)?;
        seg.mask.save(&out)?;
        if let Some(scores) = &seg.scores {
            for (c, s) in scores.iter().enumerate() {
                s.save(sibling(&out, &format!("_score{c}")))?;
            }
        }
        write_run_record(
            &out,
            "segment",
            ctx.threads,
            &self,
            Some(json!({ "visited": seg.visited })),
        )?;
        println!("mask of {} classified voxels written to {}", seg.visited, out.display());
        Ok(())
    }
}
