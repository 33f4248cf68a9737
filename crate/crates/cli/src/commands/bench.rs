use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use cylseg::classifier::NormStats;
use cylseg::segment::{throughput_report, InferenceConfig, Roi};
use cylseg::{with_volume, AnyVolume, FeatureConfig, Model, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::transform_config;
use crate::config::{ensure_parent, required, write_run_record};
use crate::RunContext;

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Input volume [default: random 9×64×64 volume drawn from --seed].
    #[arg(long)]
    pub volume: Option<PathBuf>,
    /// Trained model [default: random three-class model drawn from --seed].
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Slice step between sampled slices.
    #[arg(long, default_value_t = 3)]
    pub ds: usize,
    /// Number of sampled slices (odd).
    #[arg(long, default_value_t = 5)]
    pub slices: usize,
    /// In-plane stride.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Slice stride.
    #[arg(long, default_value_t = 1)]
    pub stride_z: usize,
    /// Region of interest `m0,m1,n0,n1,s0,s1` (half-open).
    #[arg(long)]
    pub roi: Option<String>,
    /// Benchmark record (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl BenchArgs {
    pub fn run(self, ctx: &RunContext) -> Result<()> {
        let out = required(&self.out, "out")?;
        let cfg_t = transform_config(self.ds, self.slices)?;
        let roi: Option<Roi> = self.roi.as_deref().map(str::parse).transpose()?;
        let cfg_i = InferenceConfig {
            stride_xy: self.stride,
            stride_z: self.stride_z,
            roi,
            emit_scores: false,
            threads: ctx.threads,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let vol = match &self.volume {
            Some(p) => AnyVolume::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => Volume::<i16>::from_fn([9, 64, 64], |_, _, _| rng.random_range(0..1000))?.into(),
        };
        let model = match &self.model {
            Some(p) => Model::<f64>::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => {
                let fcfg = FeatureConfig::default();
                let mut m = Model::zeros(3, fcfg, NormStats::identity(fcfg.dim()));
                m.weights.iter_mut().for_each(|w| *w = rng.random_range(-0.01..0.01));
                m
            }
        };
        let record = with_volume!(&vol, v => throughput_report(v, &model, cfg_t, &cfg_i)?);
        ensure_parent(&out)?;
        std::fs::write(&out, serde_json::to_string_pretty(&record)? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
        write_run_record(&out, "bench", ctx.threads, &self, None)?;
        println!(
            "{} poles: {:.0} poles/s with a shared table, {:.2}× faster than per-pole rebuilds",
            record.poles, record.poles_per_second, record.speedup
        );
        Ok(())
    }
}
