//! Dense inference: every voxel of a lattice is used as a pole, its transform
//! image classified, and the labels assembled into a mask.
//!
//! With strides above one only a sub-lattice is classified; every other voxel
//! of the region of interest copies its nearest visited voxel (per axis, ties
//! to the smaller coordinate). Voxels outside the region get label 0.

use std::time::Instant;

use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::ImageClassifier;
use crate::error::{Error, Result};
use crate::scalar::Voxel;
use crate::transform::{transform_into, OffsetTable, TransformConfig, TransformImage};
use crate::volume::{LabelVolume, Pole, Volume};

/// Half-open box `[m0, m1) × [n0, n1) × [s0, s1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub m0: usize,
    pub m1: usize,
    pub n0: usize,
    pub n1: usize,
    pub s0: usize,
    pub s1: usize,
}

impl Roi {
    pub fn full(dims: [usize; 3]) -> Self {
        Self {
            m0: 0,
            m1: dims[1],
            n0: 0,
            n1: dims[2],
            s0: 0,
            s1: dims[0],
        }
    }

    pub fn validate(&self, dims: [usize; 3]) -> Result<()> {
        let ok = self.m0 < self.m1
            && self.m1 <= dims[1]
            && self.n0 < self.n1
            && self.n1 <= dims[2]
            && self.s0 < self.s1
            && self.s1 <= dims[0];
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "ROI {self:?} is empty or outside volume {dims:?}"
            )))
        }
    }

    fn contains(&self, m: usize, n: usize, s: usize) -> bool {
        (self.m0..self.m1).contains(&m) && (self.n0..self.n1).contains(&n) && (self.s0..self.s1).contains(&s)
    }
}

impl std::str::FromStr for Roi {
    type Err = Error;

    /// Parses `m0,m1,n0,n1,s0,s1`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("ROI {s:?} is not six comma-separated integers")))?;
        match parts[..] {
            [m0, m1, n0, n1, s0, s1] => Ok(Self { m0, m1, n0, n1, s0, s1 }),
            _ => Err(Error::Config(format!("ROI {s:?} needs six values"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub stride_xy: usize,
    pub stride_z: usize,
    pub roi: Option<Roi>,
    pub emit_scores: bool,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            stride_xy: 1,
            stride_z: 1,
            roi: None,
            emit_scores: false,
            threads: 0,
        }
    }
}

/// Visited coordinates of one axis and the nearest visited position of every
/// coordinate in the axis range.
struct AxisLattice {
    start: usize,
    points: Vec<usize>,
    nearest: Vec<usize>,
}

impl AxisLattice {
    fn new(start: usize, end: usize, stride: usize) -> Self {
        let points: Vec<usize> = (start..end).step_by(stride).collect();
        let nearest = (start..end)
            .map(|x| {
                let k = ((x - start) / stride).min(points.len() - 1);
                match points.get(k + 1) {
                    Some(&next) if next - x < x - points[k] => k + 1,
                    _ => k,
                }
            })
            .collect();
        Self { start, points, nearest }
    }

    fn nearest(&self, x: usize) -> usize {
        self.nearest[x - self.start]
    }
}

struct Lattice {
    m: AxisLattice,
    n: AxisLattice,
    s: AxisLattice,
}

impl Lattice {
    fn new(roi: &Roi, cfg: &InferenceConfig) -> Self {
        Self {
            m: AxisLattice::new(roi.m0, roi.m1, cfg.stride_xy),
            n: AxisLattice::new(roi.n0, roi.n1, cfg.stride_xy),
            s: AxisLattice::new(roi.s0, roi.s1, cfg.stride_z),
        }
    }

    fn len(&self) -> usize {
        self.m.points.len() * self.n.points.len() * self.s.points.len()
    }

    /// Poles in slice, row, column order.
    fn poles(&self) -> Vec<Pole> {
        let mut out = Vec::with_capacity(self.len());
        for &z in &self.s.points {
            for &u in &self.m.points {
                for &v in &self.n.points {
                    out.push(Pole::new(u, v, z));
                }
            }
        }
        out
    }

    fn result_index(&self, m: usize, n: usize, s: usize) -> usize {
        let (km, kn, ks) = (self.m.nearest(m), self.n.nearest(n), self.s.nearest(s));
        (ks * self.m.points.len() + km) * self.n.points.len() + kn
    }
}

/// Number of poles visited for `cfg` on a volume of `dims`.
pub fn visited_count(dims: [usize; 3], cfg: &InferenceConfig) -> Result<usize> {
    let roi = resolve_roi(dims, cfg)?;
    Ok(Lattice::new(&roi, cfg).len())
}

fn resolve_roi(dims: [usize; 3], cfg: &InferenceConfig) -> Result<Roi> {
    if cfg.stride_xy == 0 || cfg.stride_z == 0 {
        return Err(Error::Config("strides must be at least 1".into()));
    }
    let roi = cfg.roi.unwrap_or_else(|| Roi::full(dims));
    roi.validate(dims)?;
    Ok(roi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub mask: LabelVolume,
    /// One probability volume per class when requested.
    pub scores: Option<Vec<Volume<f32>>>,
    pub visited: usize,
}

#[derive(Clone, Copy)]
enum TableMode {
    Shared,
    PerPole,
}

fn in_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

fn classify_poles<T: Voxel, C: ImageClassifier>(
    vol: &Volume<T>,
    clf: &C,
    cfg_t: TransformConfig,
    poles: &[Pole],
    mode: TableMode,
) -> Result<Vec<(u8, Vec<f32>)>> {
    let shared = OffsetTable::for_volume(vol);
    let rows = cfg_t.n_slices * vol.rows();
    let cols = vol.cols();
    poles
        .par_iter()
        .map_init(
            || TransformImage {
                rows,
                cols,
                rays: vol.rows(),
                data: vec![T::zero(); rows * cols],
                pole: Pole::new(0, 0, 0),
                config: cfg_t,
            },
            |img, &pole| {
                img.pole = pole;
                match mode {
                    TableMode::Shared => transform_into(vol, pole, cfg_t, &shared, &mut img.data)?,
                    TableMode::PerPole => {
                        let table = OffsetTable::for_volume(vol);
                        transform_into(vol, pole, cfg_t, &table, &mut img.data)?
                    }
                }
                let pred = clf.classify(img)?;
                let probs = pred
                    .probabilities
                    .iter()
                    .map(|p| p.to_f32().unwrap_or(f32::NAN))
                    .collect();
                Ok((pred.label, probs))
            },
        )
        .collect()
}

/// Labels every voxel of `vol` (or of the configured lattice) with `clf`.
pub fn segment_volume<T: Voxel, C: ImageClassifier>(
    vol: &Volume<T>,
    clf: &C,
    cfg_t: TransformConfig,
    cfg_i: &InferenceConfig,
) -> Result<Segmentation> {
    segment_with(vol, clf, cfg_t, cfg_i, TableMode::Shared)
}

fn segment_with<T: Voxel, C: ImageClassifier>(
    vol: &Volume<T>,
    clf: &C,
    cfg_t: TransformConfig,
    cfg_i: &InferenceConfig,
    mode: TableMode,
) -> Result<Segmentation> {
    cfg_t.validate()?;
    let dims = vol.dims();
    let roi = resolve_roi(dims, cfg_i)?;
    let n_classes = clf.n_classes();
    if n_classes == 0 || n_classes > 256 {
        return Err(Error::Config(format!("classifier reports {n_classes} classes")));
    }
    let lattice = Lattice::new(&roi, cfg_i);
    let poles = lattice.poles();
    let results = in_pool(cfg_i.threads, || classify_poles(vol, clf, cfg_t, &poles, mode))??;

    let [slices, rows, cols] = dims;
    let len = slices * rows * cols;
    let mut mask = vec![0u8; len];
    let mut scores = cfg_i.emit_scores.then(|| vec![vec![0f32; len]; n_classes]);
    let mut idx = 0;
    for s in 0..slices {
        for m in 0..rows {
            for n in 0..cols {
                if roi.contains(m, n, s) {
                    let (label, probs) = &results[lattice.result_index(m, n, s)];
                    mask[idx] = *label;
                    if let Some(scores) = scores.as_mut() {
                        for (vol_c, &p) in scores.iter_mut().zip(probs) {
                            vol_c[idx] = p;
                        }
                    }
                }
                idx += 1;
            }
        }
    }
    let mask = LabelVolume::with_class_count(dims, mask, n_classes)?;
    let scores = scores
        .map(|s| {
            s.into_iter()
                .map(|data| Volume::new(dims, data))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    Ok(Segmentation {
        mask,
        scores,
        visited: poles.len(),
    })
}

/// Timing of dense inference with a shared offset table against rebuilding
/// the table for every pole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub dims: [usize; 3],
    pub config: TransformConfig,
    pub stride_xy: usize,
    pub stride_z: usize,
    pub threads: usize,
    pub poles: usize,
    pub shared_seconds: f64,
    pub rebuild_seconds: f64,
    pub poles_per_second: f64,
    pub speedup: f64,
    /// Whether both runs produced the same mask.
    pub masks_agree: bool,
}

pub fn throughput_report<T: Voxel, C: ImageClassifier>(
    vol: &Volume<T>,
    clf: &C,
    cfg_t: TransformConfig,
    cfg_i: &InferenceConfig,
) -> Result<BenchRecord> {
    let cfg = InferenceConfig {
        emit_scores: false,
        ..cfg_i.clone()
    };
    let start = Instant::now();
    let shared = segment_with(vol, clf, cfg_t, &cfg, TableMode::Shared)?;
    let shared_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let rebuilt = segment_with(vol, clf, cfg_t, &cfg, TableMode::PerPole)?;
    let rebuild_seconds = start.elapsed().as_secs_f64();
    Ok(BenchRecord {
        dims: vol.dims(),
        config: cfg_t,
        stride_xy: cfg.stride_xy,
        stride_z: cfg.stride_z,
        threads: if cfg.threads == 0 {
            rayon::current_num_threads()
        } else {
            cfg.threads
        },
        poles: shared.visited,
        shared_seconds,
        rebuild_seconds,
        poles_per_second: shared.visited as f64 / shared_seconds.max(f64::MIN_POSITIVE),
        speedup: rebuild_seconds / shared_seconds.max(f64::MIN_POSITIVE),
        masks_agree: shared.mask == rebuilt.mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{FeatureConfig, Model, NormStats, Prediction};
    use crate::transform::cylindrical_transform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Constant(u8);

    impl ImageClassifier for Constant {
        type Scalar = f64;

        fn n_classes(&self) -> usize {
            3
        }

        fn classify<T: Voxel>(&self, _img: &TransformImage<T>) -> Result<Prediction<f64>> {
            let mut probabilities = vec![0.0; 3];
            probabilities[self.0 as usize] = 1.0;
            Ok(Prediction {
                label: self.0,
                probabilities,
            })
        }
    }

    /// Labels by the pole value's bucket, so masks depend on the pole.
    struct PoleValue;

    impl ImageClassifier for PoleValue {
        type Scalar = f64;

        fn n_classes(&self) -> usize {
            3
        }

        fn classify<T: Voxel>(&self, img: &TransformImage<T>) -> Result<Prediction<f64>> {
            let centre = img.block(img.config.half_width())[0].to_f64().unwrap();
            let label = (centre as i64).rem_euclid(3) as u8;
            let mut probabilities = vec![0.1; 3];
            probabilities[label as usize] = 0.8;
            Ok(Prediction { label, probabilities })
        }
    }

    fn random_volume(seed: u64, dims: [usize; 3]) -> Volume<i16> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume::from_fn(dims, |_, _, _| rng.random_range(0..100)).unwrap()
    }

    #[test]
    fn constant_classifier_gives_constant_mask() {
        let vol = random_volume(1, [3, 6, 5]);
        let seg = segment_volume(
            &vol,
            &Constant(0),
            TransformConfig::new(1, 3).unwrap(),
            &InferenceConfig::default(),
        )
        .unwrap();
        assert!(seg.mask.data().iter().all(|&l| l == 0));
        assert_eq!(seg.mask.dims(), vol.dims());
        assert_eq!(seg.visited, 90);
    }

    #[test]
    fn full_roi_matches_default() {
        let vol = random_volume(2, [3, 7, 6]);
        let cfg_t = TransformConfig::new(1, 3).unwrap();
        let a = segment_volume(&vol, &PoleValue, cfg_t, &InferenceConfig::default()).unwrap();
        let with_roi = InferenceConfig {
            roi: Some(Roi::full(vol.dims())),
            ..InferenceConfig::default()
        };
        let b = segment_volume(&vol, &PoleValue, cfg_t, &with_roi).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn visited_labels_equal_direct_prediction() {
        let vol = random_volume(3, [4, 8, 8]);
        let cfg_t = TransformConfig::new(1, 3).unwrap();
        let model = {
            let fcfg = FeatureConfig {
                pool_rows: 4,
                pool_cols: 4,
                standardize: false,
            };
            let mut m = Model::<f64>::zeros(3, fcfg, NormStats::identity(16));
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            m.weights.iter_mut().for_each(|w| *w = rng.random_range(-0.1..0.1));
            m
        };
        let seg = segment_volume(
            &vol,
            &model,
            cfg_t,
            &InferenceConfig {
                emit_scores: true,
                ..InferenceConfig::default()
            },
        )
        .unwrap();
        let table = OffsetTable::for_volume(&vol);
        let scores = seg.scores.as_ref().unwrap();
        for (m, n, s) in [(0, 0, 0), (3, 5, 1), (7, 7, 3), (4, 2, 2)] {
            let img = cylindrical_transform(&vol, Pole::new(m, n, s), cfg_t, &table).unwrap();
            let pred = model.predict(&img).unwrap();
            assert_eq!(seg.mask.get(m, n, s), Some(pred.label));
            for c in 0..3 {
                assert_eq!(scores[c].get(m, n, s), Some(pred.probabilities[c] as f32));
            }
        }
    }

    #[test]
    fn strided_mask_agrees_on_visited_lattice_and_fills_nearest() {
        let vol = random_volume(4, [5, 9, 9]);
        let cfg_t = TransformConfig::new(2, 3).unwrap();
        let dense = segment_volume(&vol, &PoleValue, cfg_t, &InferenceConfig::default()).unwrap();
        let cfg = InferenceConfig {
            stride_xy: 2,
            stride_z: 2,
            ..InferenceConfig::default()
        };
        let sparse = segment_volume(&vol, &PoleValue, cfg_t, &cfg).unwrap();
        assert_eq!(sparse.visited, 5 * 5 * 3);
        for s in (0..5).step_by(2) {
            for m in (0..9).step_by(2) {
                for n in (0..9).step_by(2) {
                    assert_eq!(sparse.mask.get(m, n, s), dense.mask.get(m, n, s));
                }
            }
        }
        // (1, 1, 1) is equidistant from lattice points 0 and 2 on every axis.
        assert_eq!(sparse.mask.get(1, 1, 1), dense.mask.get(0, 0, 0));
        assert_eq!(sparse.mask.get(3, 8, 4), dense.mask.get(2, 8, 4));
    }

    #[test]
    fn axis_lattice_nearest() {
        let axis = AxisLattice::new(0, 10, 3);
        assert_eq!(axis.points, vec![0, 3, 6, 9]);
        let picked: Vec<usize> = (0..10).map(|x| axis.points[axis.nearest(x)]).collect();
        assert_eq!(picked, vec![0, 0, 3, 3, 3, 6, 6, 6, 9, 9]);
        let tail = AxisLattice::new(2, 8, 4);
        let picked: Vec<usize> = (2..8).map(|x| tail.points[tail.nearest(x)]).collect();
        assert_eq!(picked, vec![2, 2, 2, 6, 6, 6]);
    }

    #[test]
    fn roi_restricts_visits_and_zero_fills_outside() {
        let vol = random_volume(5, [4, 8, 8]);
        let cfg = InferenceConfig {
            roi: Some("2,6,1,5,1,3".parse().unwrap()),
            ..InferenceConfig::default()
        };
        let seg = segment_volume(&vol, &Constant(2), TransformConfig::new(1, 3).unwrap(), &cfg).unwrap();
        assert_eq!(seg.visited, 4 * 4 * 2);
        assert_eq!(seg.mask.data().iter().filter(|&&l| l == 2).count(), 32);
        assert_eq!(seg.mask.get(0, 0, 0), Some(0));
    }

    #[test]
    fn bad_roi_and_stride_rejected() {
        let vol = random_volume(6, [2, 4, 4]);
        let cfg_t = TransformConfig::RADIAL;
        let out_of_bounds = InferenceConfig {
            roi: Some("0,5,0,4,0,2".parse().unwrap()),
            ..InferenceConfig::default()
        };
        assert!(segment_volume(&vol, &Constant(0), cfg_t, &out_of_bounds).is_err());
        let zero_stride = InferenceConfig {
            stride_xy: 0,
            ..InferenceConfig::default()
        };
        assert!(segment_volume(&vol, &Constant(0), cfg_t, &zero_stride).is_err());
        assert!("1,2,3".parse::<Roi>().is_err());
    }

    #[test]
    fn lattice_counts() {
        let dims = [9, 64, 64];
        let count = |xy, z| {
            visited_count(
                dims,
                &InferenceConfig {
                    stride_xy: xy,
                    stride_z: z,
                    ..InferenceConfig::default()
                },
            )
            .unwrap()
        };
        assert_eq!(count(1, 1), 64 * 64 * 9);
        assert_eq!(count(3, 2), 22 * 22 * 5);
        assert_eq!(count(2, 1) / count(4, 1), 4);
    }

    #[test]
    fn thread_count_does_not_change_mask() {
        let vol = random_volume(7, [3, 10, 10]);
        let cfg_t = TransformConfig::new(1, 3).unwrap();
        let run = |threads| {
            segment_volume(
                &vol,
                &PoleValue,
                cfg_t,
                &InferenceConfig {
                    threads,
                    emit_scores: true,
                    ..InferenceConfig::default()
                },
            )
            .unwrap()
        };
        let one = run(1);
        assert_eq!(one, run(3));
    }
}
