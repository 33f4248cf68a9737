//! Training pools: stratified pole sampling, stored transform images, folds.
//!
//! A pool directory holds `pool.json` (source volume id, dims, transform
//! configuration, seed), `manifest.jsonl` with one sample per line and, when
//! images are stored eagerly, `images/<index>.f32` files in the raw transform
//! format. A lazy pool stores `"image": null` and regenerates on demand.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Voxel;
use crate::transform::{transform_into, OffsetTable, TransformConfig, TransformImage};
use crate::volume::{validate_pair, LabelVolume, Pole, Volume};

/// A pole and the ground-truth label of its voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoleSample {
    pub pole: Pole,
    pub label: u8,
}

/// Draws up to `per_class_per_slice` distinct poles for every class present
/// in every slice, uniformly without replacement. Output is ordered by slice,
/// then class, then draw order.
pub fn sample_poles(labels: &LabelVolume, per_class_per_slice: usize, seed: u64) -> Result<Vec<PoleSample>> {
    if per_class_per_slice == 0 {
        return Err(Error::Config("poles per class per slice must be at least 1".into()));
    }
    let [slices, rows, cols] = labels.dims();
    let n_classes = labels.n_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut seen = vec![false; n_classes];
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); n_classes];

    for s in 0..slices {
        strata.iter_mut().for_each(Vec::clear);
        for (i, &label) in labels.volume().slice(s).iter().enumerate() {
            strata[label as usize].push(i);
        }
        for (class, members) in strata.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            seen[class] = true;
            let take = per_class_per_slice.min(members.len());
            for pick in index::sample(&mut rng, members.len(), take) {
                let i = members[pick];
                out.push(PoleSample {
                    pole: Pole::new(i / cols, i % cols, s),
                    label: class as u8,
                });
            }
        }
        debug_assert!(strata.iter().map(Vec::len).sum::<usize>() == rows * cols);
    }
    for (class, present) in seen.iter().enumerate() {
        if !present {
            log::warn!("class {class} does not occur in the label volume; no poles drawn");
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolMeta {
    pub volume_id: String,
    /// `[S, M, N]` of the source volume.
    pub dims: [usize; 3],
    pub config: TransformConfig,
    pub n_classes: usize,
    pub seed: Option<u64>,
    /// Whether images are stored on disk or regenerated from the volume.
    pub stored: bool,
}

impl PoolMeta {
    pub fn image_rows(&self) -> usize {
        self.config.n_slices * self.dims[1]
    }

    pub fn image_cols(&self) -> usize {
        self.dims[2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub pole: Pole,
    pub label: u8,
    pub image: Option<String>,
}

impl ManifestEntry {
    pub fn sample(&self) -> PoleSample {
        PoleSample {
            pole: self.pole,
            label: self.label,
        }
    }
}

/// Options for [`build_pool`].
#[derive(Debug, Clone)]
pub struct PoolOptions {
    pub volume_id: String,
    pub seed: Option<u64>,
    /// Store images eagerly; otherwise the manifest alone is written.
    pub store_images: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub root: PathBuf,
    pub meta: PoolMeta,
    pub entries: Vec<ManifestEntry>,
}

const META_FILE: &str = "pool.json";
const MANIFEST_FILE: &str = "manifest.jsonl";

fn image_relpath(i: usize) -> String {
    format!("images/{i:07}.f32")
}

/// Transforms every sample and writes the pool under `out`.
pub fn build_pool<T: Voxel>(
    vol: &Volume<T>,
    labels: &LabelVolume,
    cfg: TransformConfig,
    samples: &[PoleSample],
    out: impl AsRef<Path>,
    opts: &PoolOptions,
) -> Result<Pool> {
    validate_pair(vol, labels)?;
    cfg.validate()?;
    let root = out.as_ref().to_path_buf();
    for s in samples {
        s.pole.check_bounds(vol.dims())?;
        if labels.label_at(s.pole) != Some(s.label) {
            return Err(Error::Config(format!(
                "sample label {} disagrees with ground truth at {:?}",
                s.label, s.pole
            )));
        }
    }
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;

    let entries: Vec<ManifestEntry> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| ManifestEntry {
            pole: s.pole,
            label: s.label,
            image: opts.store_images.then(|| image_relpath(i)),
        })
        .collect();

    if opts.store_images {
        let dir = root.join("images");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let table = OffsetTable::for_volume(vol);
        let len = cfg.n_slices * vol.rows() * vol.cols();
        entries
            .par_iter()
            .map_init(
                || vec![T::zero(); len],
                |buf, entry| -> Result<()> {
                    transform_into(vol, entry.pole, cfg, &table, buf)?;
                    let path = root.join(entry.image.as_deref().expect("stored entry"));
                    let bytes: Vec<u8> = buf.iter().flat_map(|v| v.to_f32_lossy().to_le_bytes()).collect();
                    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
                },
            )
            .collect::<Result<()>>()?;
    }

    let pool = Pool {
        root,
        meta: PoolMeta {
            volume_id: opts.volume_id.clone(),
            dims: vol.dims(),
            config: cfg,
            n_classes: labels.n_classes(),
            seed: opts.seed,
            stored: opts.store_images,
        },
        entries,
    };
    pool.write_metadata()?;
    Ok(pool)
}

impl Pool {
    fn write_metadata(&self) -> Result<()> {
        let meta_path = self.root.join(META_FILE);
        let text = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::json(&meta_path, e))?;
        fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))?;

        let manifest_path = self.root.join(MANIFEST_FILE);
        let file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut w = BufWriter::new(file);
        for entry in &self.entries {
            let line = serde_json::to_string(entry).map_err(|e| Error::json(&manifest_path, e))?;
            writeln!(w, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&manifest_path, e))
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let meta_path = root.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: PoolMeta = serde_json::from_str(&text).map_err(|e| Error::json(&meta_path, e))?;
        let manifest_path = root.join(MANIFEST_FILE);
        let file = fs::File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut entries = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&manifest_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| Error::json(&manifest_path, e))?);
        }
        Ok(Self { root, meta, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn samples(&self) -> Vec<PoleSample> {
        self.entries.iter().map(ManifestEntry::sample).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.meta.n_classes];
        for e in &self.entries {
            counts[e.label as usize] += 1;
        }
        counts
    }

    fn check_volume<T: Voxel>(&self, vol: &Volume<T>) -> Result<()> {
        if vol.dims() != self.meta.dims {
            return Err(Error::DimMismatch {
                left: vol.dims(),
                right: self.meta.dims,
            });
        }
        Ok(())
    }

    /// Recomputes image `i` from the source volume.
    pub fn regenerate<T: Voxel>(&self, i: usize, vol: &Volume<T>) -> Result<TransformImage<f32>> {
        self.check_volume(vol)?;
        let table = OffsetTable::for_volume(vol);
        Ok(crate::transform::cylindrical_transform(vol, self.entries[i].pole, self.meta.config, &table)?.to_f32())
    }

    /// Reads stored image `i`.
    pub fn stored_image(&self, i: usize) -> Result<TransformImage<f32>> {
        let entry = &self.entries[i];
        let rel = entry
            .image
            .as_deref()
            .ok_or_else(|| Error::Config(format!("pool entry {i} has no stored image")))?;
        let path = self.root.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (rows, cols) = (self.meta.image_rows(), self.meta.image_cols());
        if bytes.len() != rows * cols * 4 {
            return Err(Error::SizeMismatch(format!(
                "{} holds {} bytes, expected {}",
                path.display(),
                bytes.len(),
                rows * cols * 4
            )));
        }
        Ok(TransformImage {
            rows,
            cols,
            rays: self.meta.dims[1],
            data: bytes.chunks_exact(4).map(f32::read_le).collect(),
            pole: entry.pole,
            config: self.meta.config,
        })
    }

    /// Stored image when present, otherwise regenerated from `vol`.
    pub fn image<T: Voxel>(&self, i: usize, vol: Option<&Volume<T>>) -> Result<TransformImage<f32>> {
        match (&self.entries[i].image, vol) {
            (Some(_), _) => self.stored_image(i),
            (None, Some(vol)) => self.regenerate(i, vol),
            (None, None) => Err(Error::Config(
                "lazy pool needs its source volume to regenerate images".into(),
            )),
        }
    }

    /// Stratified `k`-fold split of this pool's samples.
    pub fn split(&self, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        split(&self.labels(), k, seed)
    }
}

/// Partitions sample indices into `k` folds stratified by label. Each class
/// is shuffled and dealt round-robin, continuing the deal across classes so
/// per-class and total fold sizes both differ by at most one.
pub fn split(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("fold count must be at least 2, got {k}")));
    }
    if labels.is_empty() {
        return Err(Error::Config("cannot split an empty pool".into()));
    }
    let n_classes = labels.iter().copied().max().unwrap() as usize + 1;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    if let Some(smallest) = by_class.iter().map(Vec::len).filter(|&c| c > 0).min() {
        if k > smallest {
            return Err(Error::Config(format!(
                "{k} folds exceed the smallest class count {smallest}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}
