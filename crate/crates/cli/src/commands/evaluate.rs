use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use cylseg::metrics::evaluate;
use cylseg::{LabelVolume, Volume};
use serde::{Deserialize, Serialize};

use crate::config::{ensure_parent, required, sibling, write_run_record};
use crate::RunContext;

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateArgs {
    /// Predicted mask base path.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground-truth label volume base path.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Per-class probability volumes, one per class in class order (repeatable);
    /// enables ROC curves `<out stem>_roc<c>.csv` and AUC.
    #[arg(long = "scores")]
    pub scores: Vec<PathBuf>,
    /// Metrics CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EvaluateArgs {
    pub fn run(self, ctx: &RunContext) -> Result<()> {
        let pred_path = required(&self.pred, "pred")?;
        let truth_path = required(&self.truth, "truth")?;
        let out = required(&self.out, "out")?;
        let pred = LabelVolume::load(&pred_path).with_context(|| format!("reading {}", pred_path.display()))?;
        let truth = LabelVolume::load(&truth_path).with_context(|| format!("reading {}", truth_path.display()))?;
        let scores = self
            .scores
            .iter()
            .map(|p| Volume::<f32>::load(p).with_context(|| format!("reading {}", p.display())))
            .collect::<Result<Vec<_>>>()?;
        if !scores.is_empty() && scores.len() != truth.n_classes() {
            bail!("{} score volumes for {} classes", scores.len(), truth.n_classes());
        }
        let report = evaluate(&pred, &truth, (!scores.is_empty()).then_some(&scores[..]))?;
        ensure_parent(&out)?;
        report.save_csv(&out)?;
        for (c, roc) in report.roc.iter().enumerate() {
            if let Some(roc) = roc {
                let path = sibling(&out, &format!("_roc{c}.csv"));
                std::fs::write(&path, roc.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        write_run_record(&out, "evaluate", ctx.threads, &self, None)?;
        println!(
            "aggregate DSC {:.4}, accuracy {:.4}; metrics written to {}",
            report.aggregate_dsc,
            report.accuracy,
            out.display()
        );
        Ok(())
    }
}
