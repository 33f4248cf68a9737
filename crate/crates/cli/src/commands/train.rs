use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use cylseg::classifier::{pool_buffer, train, FeatureSet};
use cylseg::dataset::{split, Pool};
use cylseg::{with_volume, AnyVolume, FeatureConfig, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ensure_parent, sibling, write_run_record};
use crate::RunContext;

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Training pool directory (repeatable).
    #[arg(long = "pool", required = false)]
    pub pool: Vec<PathBuf>,
    /// Validation pool directory (repeatable). Without one, a stratified fold of
    /// the training pools is held out.
    #[arg(long = "val-pool")]
    pub val_pool: Vec<PathBuf>,
    /// Source volumes of lazy pools, one per --pool then per --val-pool, in order.
    #[arg(long = "volume")]
    pub volume: Vec<PathBuf>,
    /// Fold count for the held-out validation fold and for --cv.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Also run k-fold cross-validation and write `<out stem>.cv.csv`.
    #[arg(long, default_value_t = false)]
    pub cv: bool,
    /// Base learning rate.
    #[arg(long, default_value_t = 1e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 120)]
    pub epochs: usize,
    /// Mini-batch size.
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// L2 penalty on the weights.
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    /// Early-stopping window in epochs.
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    /// Seed for shuffling and the validation split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pooling grid rows.
    #[arg(long, default_value_t = 40)]
    pub pool_rows: usize,
    /// Pooling grid columns.
    #[arg(long, default_value_t = 16)]
    pub pool_cols: usize,
    /// Skip feature standardization.
    #[arg(long, default_value_t = false)]
    pub no_standardize: bool,
    /// Model output (JSON); the history goes to `<out stem>.history.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn features_of(pool: &Pool, vol: Option<&AnyVolume>, fcfg: &FeatureConfig) -> Result<FeatureSet<f64>> {
    let (rows, cols) = (pool.meta.image_rows(), pool.meta.image_cols());
    fcfg.check_image(rows, cols)?;
    let rows_out: Vec<Vec<f64>> = (0..pool.len())
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let img = match vol {
                Some(v) => with_volume!(v, v => pool.image(i, Some(v))?),
                None => pool.stored_image(i)?,
            };
            let mut out = vec![0.0; fcfg.dim()];
            pool_buffer(&img.data, img.rows, img.cols, fcfg, &mut out)?;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut set = FeatureSet::new(fcfg.dim(), pool.meta.n_classes);
    for (row, e) in rows_out.iter().zip(&pool.entries) {
        set.push(row, e.label);
    }
    Ok(set)
}

fn load_sets(
    dirs: &[PathBuf],
    volumes: &mut impl Iterator<Item = PathBuf>,
    fcfg: &FeatureConfig,
    reference: &mut Option<Pool>,
) -> Result<Vec<FeatureSet<f64>>> {
    let mut sets = Vec::new();
    for dir in dirs {
        let pool = Pool::load(dir).with_context(|| format!("reading pool {}", dir.display()))?;
        if let Some(first) = reference {
            let (a, b) = (&first.meta, &pool.meta);
            if (a.config, a.image_rows(), a.image_cols(), a.n_classes)
                != (b.config, b.image_rows(), b.image_cols(), b.n_classes)
            {
                bail!(
                    "pool {} differs in geometry or classes from {}",
                    dir.display(),
                    first.root.display()
                );
            }
        } else {
            *reference = Some(pool.clone());
        }
        let vol = match volumes.next() {
            Some(path) => Some(AnyVolume::load(&path).with_context(|| format!("reading {}", path.display()))?),
            None => None,
        };
        sets.push(features_of(&pool, vol.as_ref(), fcfg).with_context(|| format!("pool {}", dir.display()))?);
    }
    Ok(sets)
}

fn concat(sets: &[FeatureSet<f64>], dim: usize, n_classes: usize) -> FeatureSet<f64> {
    let mut all = FeatureSet::new(dim, n_classes);
    for s in sets {
        all.extend(s);
    }
    all
}

fn complement(folds: &[Vec<usize>], held: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != held)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    idx.sort_unstable();
    idx
}

impl TrainArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr_base: self.lr,
            l2: self.l2,
            epochs: self.epochs,
            batch: self.batch,
            early_stop_window: self.window,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn run(self, ctx: &RunContext) -> Result<()> {
        if self.pool.is_empty() {
            bail!("missing required --pool");
        }
        let out = crate::config::required(&self.out, "out")?;
        let fcfg = FeatureConfig {
            pool_rows: self.pool_rows,
            pool_cols: self.pool_cols,
            standardize: !self.no_standardize,
        };
        let tcfg = self.train_config();
        tcfg.validate()?;
        if !self.volume.is_empty() && self.volume.len() != self.pool.len() + self.val_pool.len() {
            bail!(
                "{} --volume paths for {} pools; give one per pool or none",
                self.volume.len(),
                self.pool.len() + self.val_pool.len()
            );
        }
        let mut volumes = self.volume.clone().into_iter();
        let mut reference = None;
        let train_sets = load_sets(&self.pool, &mut volumes, &fcfg, &mut reference)?;
        let val_sets = load_sets(&self.val_pool, &mut volumes, &fcfg, &mut reference)?;
        let reference = reference.expect("at least one pool");
        let n_classes = reference.meta.n_classes;
        let all_train = concat(&train_sets, fcfg.dim(), n_classes);
        log::info!(
            "{} training samples, seed {}, lr {}, batch {}, {} epochs",
            all_train.len(),
            self.seed,
            self.lr,
            self.batch,
            self.epochs
        );

        let folds = if self.val_pool.is_empty() || self.cv {
            Some(split(&all_train.labels, self.folds, self.seed)?)
        } else {
            None
        };
        let (train_set, val_set) = if self.val_pool.is_empty() {
            let folds = folds.as_ref().expect("folds computed");
            (all_train.subset(&complement(folds, 0)), all_train.subset(&folds[0]))
        } else {
            (all_train.clone(), concat(&val_sets, fcfg.dim(), n_classes))
        };

        let (model, history) = train(&train_set, &val_set, &tcfg, fcfg)?;
        ensure_parent(&out)?;
        model.save(&out)?;
        let history_path = sibling(&out, ".history.csv");
        history.save(&history_path)?;

        if self.cv {
            let folds = folds.as_ref().expect("folds computed");
            let mut csv = String::from("fold,best_epoch,val_acc\n");
            let mut sum = 0.0;
            for k in 0..folds.len() {
                let (_, h) = train(
                    &all_train.subset(&complement(folds, k)),
                    &all_train.subset(&folds[k]),
                    &tcfg,
                    fcfg,
                )?;
                sum += h.best_val_acc;
                let _ = writeln!(csv, "{k},{},{}", h.best_epoch, h.best_val_acc);
            }
            let _ = writeln!(csv, "mean,,{}", sum / folds.len() as f64);
            let cv_path = sibling(&out, ".cv.csv");
            fs::write(&cv_path, csv).with_context(|| format!("writing {}", cv_path.display()))?;
        }

        let derived = json!({
            "transform": reference.meta.config,
            "image": [reference.meta.image_rows(), reference.meta.image_cols()],
            "train_samples": train_set.len(),
            "val_samples": val_set.len(),
        });
        write_run_record(&out, "train", ctx.threads, &self, Some(derived))?;
        println!(
            "model written to {} (best epoch {}, validation accuracy {:.4}); history in {}",
            out.display(),
            history.best_epoch,
            history.best_val_acc,
            history_path.display()
        );
        Ok(())
    }
}
