mod bench;
mod evaluate;
mod sample;
mod segment;
mod synth;
mod train;
mod transform;

pub use bench::BenchArgs;
pub use evaluate::EvaluateArgs;
pub use sample::SampleArgs;
pub use segment::SegmentArgs;
pub use synth::SynthArgs;
pub use train::TrainArgs;
pub use transform::TransformArgs;

use anyhow::{Context, Result};
use cylseg::TransformConfig;

fn transform_config(ds: usize, slices: usize) -> Result<TransformConfig> {
    TransformConfig::new(ds, slices).context("invalid --ds/--slices")
}
