//! The cylindrical transform.
//!
//! For a pole `O(u, v, z)` the transform casts `M` rays at angles
//! `θ_m = 2πm/M` in each of `S'` slices around `z` (spaced `Δs` apart) and
//! samples radii `r = 0..N` along every ray with nearest-neighbour rounding.
//! Ray `m` of slice slot `ŝ` becomes row `ŝ·M + m` of the output; radius `r`
//! becomes column `r`. Samples that fall outside the volume, and whole slots
//! whose slice is outside the volume, stay zero.
//!
//! The rounded ray offsets depend only on `(M, N)`, so they are tabulated once
//! in an [`OffsetTable`] and shared by every pole.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Voxel;
use crate::volume::{Pole, Volume};

/// Slice step `Δs` and slice count `S'` of a transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransformConfig {
    pub delta_s: usize,
    pub n_slices: usize,
}

impl TransformConfig {
    /// `Δs = 3`, `S' = 5`.
    pub const REFERENCE: TransformConfig = TransformConfig {
        delta_s: 3,
        n_slices: 5,
    };

    /// Single-slice configuration: the polar (radial) transform.
    pub const RADIAL: TransformConfig = TransformConfig {
        delta_s: 1,
        n_slices: 1,
    };

    pub fn new(delta_s: usize, n_slices: usize) -> Result<Self> {
        let cfg = Self { delta_s, n_slices };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta_s == 0 {
            return Err(Error::Config("slice step must be at least 1".into()));
        }
        if self.n_slices.is_multiple_of(2) {
            return Err(Error::Config(format!("slice count must be odd, got {}", self.n_slices)));
        }
        Ok(())
    }

    /// Number of slices on each side of the pole's slice.
    pub fn half_width(&self) -> usize {
        (self.n_slices - 1) / 2
    }
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self::REFERENCE
    }
}

/// The slices sampled around a pole, one slot per slice in ascending order.
/// Slots whose slice falls outside the volume are `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceSet {
    pub entries: Vec<Option<usize>>,
}

impl SliceSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.entries.iter().flatten().count()
    }
}

/// Resolves the slice set of a pole in slice `z` of a volume with `slices` slices.
pub fn slice_set(z: usize, cfg: TransformConfig, slices: usize) -> Result<SliceSet> {
    cfg.validate()?;
    if z >= slices {
        return Err(Error::Config(format!(
            "slice {z} is outside a volume of {slices} slices"
        )));
    }
    let half = cfg.half_width() as i64;
    let step = cfg.delta_s as i64;
    let entries = (-half..=half)
        .map(|j| {
            let candidate = z as i64 + j * step;
            (0..slices as i64).contains(&candidate).then_some(candidate as usize)
        })
        .collect();
    Ok(SliceSet { entries })
}

/// Rounded `(row, col)` offsets of every `(ray, radius)` sampling point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffsetTable {
    rays: usize,
    radii: usize,
    offsets: Vec<(i32, i32)>,
}

/// Replaces values that are within rounding noise of the rational cosines
/// `0, ±1/2, ±1` with the exact value, so that ties round as in exact arithmetic.
fn snap(v: f64) -> f64 {
    const TOL: f64 = 1e-12;
    for exact in [0.0, 0.5, -0.5, 1.0, -1.0] {
        if (v - exact).abs() < TOL {
            return exact;
        }
    }
    v
}

/// `(cos θ, sin θ)` for `θ = 2π·m/rays`. Quarter turns are applied exactly
/// when `rays` is a multiple of four.
fn unit_direction(m: usize, rays: usize) -> (f64, f64) {
    let (quadrant, rem, base) = if rays.is_multiple_of(4) {
        let quarter = rays / 4;
        (m / quarter, m % quarter, rays)
    } else {
        (0, m, rays)
    };
    let phi = 2.0 * PI * rem as f64 / base as f64;
    let (s, c) = phi.sin_cos();
    let (c, s) = (snap(c), snap(s));
    match quadrant {
        0 => (c, s),
        1 => (-s, c),
        2 => (-c, -s),
        _ => (s, -c),
    }
}

impl OffsetTable {
    /// Tabulates `(round(r·cos θ_m), round(r·sin(−θ_m)))` for `m < rays`,
    /// `r < radii`, rounding half away from zero.
    pub fn new(rays: usize, radii: usize) -> Result<Self> {
        if rays == 0 || radii == 0 {
            return Err(Error::Config(format!(
                "offset table needs at least one ray and one radius, got {rays}×{radii}"
            )));
        }
        let mut offsets = Vec::with_capacity(rays * radii);
        for m in 0..rays {
            let (c, s) = unit_direction(m, rays);
            for r in 0..radii {
                let r = r as f64;
                offsets.push(((r * c).round() as i32, (r * -s).round() as i32));
            }
        }
        Ok(Self { rays, radii, offsets })
    }

    /// Table matching the slice geometry of `vol`: `M` rays, `N` radii.
    pub fn for_volume<T: Voxel>(vol: &Volume<T>) -> Self {
        Self::new(vol.rows(), vol.cols()).expect("volume dims are positive")
    }

    pub fn rays(&self) -> usize {
        self.rays
    }

    pub fn radii(&self) -> usize {
        self.radii
    }

    #[inline]
    pub fn get(&self, ray: usize, radius: usize) -> (i32, i32) {
        self.offsets[ray * self.radii + radius]
    }

    pub fn ray(&self, ray: usize) -> &[(i32, i32)] {
        &self.offsets[ray * self.radii..(ray + 1) * self.radii]
    }
}

/// Shorthand for [`OffsetTable::new`].
pub fn build_offset_table(rays: usize, radii: usize) -> Result<OffsetTable> {
    OffsetTable::new(rays, radii)
}

/// A transform image: `S'·M` rows by `N` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformImage<T> {
    pub rows: usize,
    pub cols: usize,
    /// Rays per slice slot (`M`).
    pub rays: usize,
    pub data: Vec<T>,
    pub pole: Pole,
    pub config: TransformConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawImageHeader {
    rows: usize,
    cols: usize,
    rays: usize,
    dtype: String,
    pole: Pole,
    config: TransformConfig,
}

impl<T: Voxel> TransformImage<T> {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    /// Rows of slice slot `slot`.
    pub fn block(&self, slot: usize) -> &[T] {
        let len = self.rays * self.cols;
        &self.data[slot * len..(slot + 1) * len]
    }

    pub fn to_f32(&self) -> TransformImage<f32> {
        TransformImage {
            rows: self.rows,
            cols: self.cols,
            rays: self.rays,
            data: self.data.iter().map(|v| v.to_f32_lossy()).collect(),
            pole: self.pole,
            config: self.config,
        }
    }

    /// Little-endian f32 bytes of the image, row-major.
    pub fn to_f32_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_f32_lossy().to_le_bytes()).collect()
    }

    /// Writes `<base>.f32` (little-endian f32, row-major) and a `<base>.json`
    /// sidecar. This is the lossless interchange format.
    pub fn save_raw(&self, base: impl AsRef<Path>) -> Result<()> {
        let base = base.as_ref();
        let raw_path = base.with_extension("f32");
        let json_path = base.with_extension("json");
        let header = RawImageHeader {
            rows: self.rows,
            cols: self.cols,
            rays: self.rays,
            dtype: "f32".into(),
            pole: self.pole,
            config: self.config,
        };
        let mut text = serde_json::to_string_pretty(&header).map_err(|e| Error::json(&json_path, e))?;
        text.push('\n');
        fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
        fs::write(&raw_path, self.to_f32_le_bytes()).map_err(|e| Error::io(&raw_path, e))
    }

    /// Writes a 16-bit binary PGM after min-max scaling the image's own range
    /// onto `0..=65535`. A constant image maps to all zeros.
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let values: Vec<f64> = self.data.iter().map(|v| v.to_f64().unwrap_or(0.0)).collect();
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let span = hi - lo;
        let mut out = format!("P5\n{} {}\n65535\n", self.cols, self.rows).into_bytes();
        out.reserve(values.len() * 2);
        for v in values {
            let scaled = if span > 0.0 {
                ((v - lo) / span * 65535.0).round() as u16
            } else {
                0
            };
            out.extend_from_slice(&scaled.to_be_bytes());
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

impl TransformImage<f32> {
    pub fn load_raw(base: impl AsRef<Path>) -> Result<Self> {
        let base = base.as_ref();
        let raw_path = base.with_extension("f32");
        let json_path = base.with_extension("json");
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let header: RawImageHeader = serde_json::from_str(&text).map_err(|e| Error::json(&json_path, e))?;
        if header.dtype != "f32" {
            return Err(Error::UnknownDType(header.dtype));
        }
        let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
        if bytes.len() != header.rows * header.cols * 4 || header.rows != header.config.n_slices * header.rays {
            return Err(Error::SizeMismatch(format!(
                "{} bytes for a {}×{} image",
                bytes.len(),
                header.rows,
                header.cols
            )));
        }
        Ok(Self {
            rows: header.rows,
            cols: header.cols,
            rays: header.rays,
            data: bytes.chunks_exact(4).map(f32::read_le).collect(),
            pole: header.pole,
            config: header.config,
        })
    }
}

/// Writes the transform of `pole` into `out`, which must hold
/// `S'·rays·radii` values. The table's geometry need not match the slice size.
pub fn transform_into<T: Voxel>(
    vol: &Volume<T>,
    pole: Pole,
    cfg: TransformConfig,
    table: &OffsetTable,
    out: &mut [T],
) -> Result<()> {
    pole.check_bounds(vol.dims())?;
    let slices = slice_set(pole.z, cfg, vol.slices())?;
    let block_len = table.rays * table.radii;
    if out.len() != slices.len() * block_len {
        return Err(Error::SizeMismatch(format!(
            "output buffer holds {} values, transform needs {}",
            out.len(),
            slices.len() * block_len
        )));
    }
    let (rows, cols) = (vol.rows() as i64, vol.cols() as i64);
    let (u, v) = (pole.u as i64, pole.v as i64);
    for (slot, block) in slices.entries.iter().zip(out.chunks_exact_mut(block_len)) {
        let Some(z) = *slot else {
            block.fill(T::zero());
            continue;
        };
        let plane = vol.slice(z);
        for (ray, row) in block.chunks_exact_mut(table.radii).enumerate() {
            let offsets = table.ray(ray);
            // Offsets grow monotonically in magnitude along a ray, so the
            // in-bounds samples form a prefix.
            let mut written = 0;
            for (dst, &(dx, dy)) in row.iter_mut().zip(offsets) {
                let x = u + dx as i64;
                let y = v + dy as i64;
                if x < 0 || x >= rows || y < 0 || y >= cols {
                    break;
                }
                *dst = plane[(x * cols + y) as usize];
                written += 1;
            }
            row[written..].fill(T::zero());
        }
    }
    Ok(())
}

/// Like [`cylindrical_transform`] but accepts a table of any ray and radius count.
pub fn transform_with_table<T: Voxel>(
    vol: &Volume<T>,
    pole: Pole,
    cfg: TransformConfig,
    table: &OffsetTable,
) -> Result<TransformImage<T>> {
    cfg.validate()?;
    let rows = cfg.n_slices * table.rays;
    let mut data = vec![T::zero(); rows * table.radii];
    transform_into(vol, pole, cfg, table, &mut data)?;
    Ok(TransformImage {
        rows,
        cols: table.radii,
        rays: table.rays,
        data,
        pole,
        config: cfg,
    })
}

/// Cylindrical transform of `vol` about `pole`. `table` must have been built
/// for the slice size of `vol` (`M` rays, `N` radii).
pub fn cylindrical_transform<T: Voxel>(
    vol: &Volume<T>,
    pole: Pole,
    cfg: TransformConfig,
    table: &OffsetTable,
) -> Result<TransformImage<T>> {
    if table.rays != vol.rows() || table.radii != vol.cols() {
        return Err(Error::SizeMismatch(format!(
            "offset table is {}×{} but slices are {}×{}",
            table.rays,
            table.radii,
            vol.rows(),
            vol.cols()
        )));
    }
    transform_with_table(vol, pole, cfg, table)
}

/// Single-slice polar transform: the cylindrical transform with `S' = 1`.
pub fn radial_transform<T: Voxel>(vol: &Volume<T>, pole: Pole, table: &OffsetTable) -> Result<TransformImage<T>> {
    cylindrical_transform(vol, pole, TransformConfig::RADIAL, table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadrant_offsets_for_four_rays() {
        let t = OffsetTable::new(4, 2).unwrap();
        assert_eq!(t.get(0, 1), (1, 0));
        assert_eq!(t.get(1, 1), (0, -1));
        assert_eq!(t.get(2, 1), (-1, 0));
        assert_eq!(t.get(3, 1), (0, 1));
    }

    #[test]
    fn radius_zero_column_is_zero() {
        for rays in [1, 3, 7, 12, 256] {
            let t = OffsetTable::new(rays, 5).unwrap();
            assert!((0..rays).all(|m| t.get(m, 0) == (0, 0)));
        }
    }

    #[test]
    fn offsets_bounded_by_radius() {
        let t = OffsetTable::new(37, 40).unwrap();
        for m in 0..37 {
            for r in 0..40 {
                let (x, y) = t.get(m, r);
                assert!(x.unsigned_abs() as usize <= r && y.unsigned_abs() as usize <= r);
            }
        }
    }

    #[test]
    fn exact_half_ties_round_away_from_zero() {
        // 12 rays put rays at 30° multiples, where r·sin and r·cos hit exact halves.
        let t = OffsetTable::new(12, 4).unwrap();
        assert_eq!(t.get(1, 1), (1, -1)); // 30°: (cos 30°, −sin 30° = −0.5)
        assert_eq!(t.get(2, 1), (1, -1)); // 60°: (0.5, −0.866)
        assert_eq!(t.get(5, 3), (-3, -2)); // 150°: (−2.598, −1.5)
    }

    #[test]
    fn empty_table_rejected() {
        assert!(OffsetTable::new(0, 4).is_err());
        assert!(OffsetTable::new(4, 0).is_err());
    }

    #[test]
    fn slice_set_interior_and_boundary() {
        let cfg = TransformConfig::REFERENCE;
        let interior = slice_set(7, cfg, 18).unwrap();
        assert_eq!(interior.entries, vec![Some(1), Some(4), Some(7), Some(10), Some(13)]);
        let edge = slice_set(0, cfg, 18).unwrap();
        assert_eq!(edge.entries, vec![None, None, Some(0), Some(3), Some(6)]);
        assert_eq!(edge.valid_count(), 3);
        let top = slice_set(17, cfg, 18).unwrap();
        assert_eq!(top.entries, vec![Some(11), Some(14), Some(17), None, None]);
    }

    #[test]
    fn slice_set_rejects_even_count_and_bad_slice() {
        assert!(matches!(
            slice_set(
                2,
                TransformConfig {
                    delta_s: 1,
                    n_slices: 4
                },
                10
            ),
            Err(Error::Config(_))
        ));
        assert!(TransformConfig::new(0, 3).is_err());
        assert!(slice_set(10, TransformConfig::REFERENCE, 10).is_err());
    }

    fn random_volume(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Volume<i16> {
        Volume::from_fn(dims, |_, _, _| rng.random_range(-500..500)).unwrap()
    }

    #[test]
    fn constant_volume_interior_pole() {
        let vol = Volume::<u8>::new([5, 41, 41], vec![9; 5 * 41 * 41]).unwrap();
        let table = OffsetTable::new(41, 21).unwrap();
        let img =
            transform_with_table(&vol, Pole::new(20, 20, 2), TransformConfig::new(1, 5).unwrap(), &table).unwrap();
        assert!(img.data.iter().all(|&v| v == 9));
    }

    #[test]
    fn radius_zero_column_is_pole_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vol = random_volume(&mut rng, [9, 12, 10]);
        let table = OffsetTable::for_volume(&vol);
        let pole = Pole::new(4, 7, 4);
        let cfg = TransformConfig::new(2, 3).unwrap();
        let img = cylindrical_transform(&vol, pole, cfg, &table).unwrap();
        let set = slice_set(4, cfg, 9).unwrap();
        for (slot, z) in set.entries.iter().enumerate() {
            let z = z.unwrap();
            for m in 0..12 {
                assert_eq!(img.get(slot * 12 + m, 0), vol.get(4, 7, z).unwrap());
            }
        }
    }

    #[test]
    fn invalid_slots_are_zero() {
        let vol = Volume::<i16>::new([4, 6, 6], vec![5; 144]).unwrap();
        let table = OffsetTable::for_volume(&vol);
        let img = cylindrical_transform(&vol, Pole::new(2, 2, 0), TransformConfig::REFERENCE, &table).unwrap();
        assert_eq!(img.rows, 30);
        assert!(img.block(0).iter().all(|&v| v == 0));
        assert!(img.block(1).iter().all(|&v| v == 0));
        assert!(img.block(2).contains(&5));
        assert!(img.block(3).contains(&5));
    }

    #[test]
    fn reference_geometry_dims() {
        let vol = Volume::<u8>::zeros([18, 256, 256]).unwrap();
        let table = OffsetTable::for_volume(&vol);
        let img = cylindrical_transform(&vol, Pole::new(128, 128, 9), TransformConfig::REFERENCE, &table).unwrap();
        assert_eq!((img.rows, img.cols), (1280, 256));
    }

    #[test]
    fn mismatched_table_and_bad_pole_rejected() {
        let vol = Volume::<u8>::zeros([3, 8, 8]).unwrap();
        let table = OffsetTable::new(8, 7).unwrap();
        assert!(matches!(
            cylindrical_transform(&vol, Pole::new(0, 0, 0), TransformConfig::RADIAL, &table),
            Err(Error::SizeMismatch(_))
        ));
        let table = OffsetTable::for_volume(&vol);
        assert!(matches!(
            cylindrical_transform(&vol, Pole::new(8, 0, 0), TransformConfig::RADIAL, &table),
            Err(Error::PoleOutOfBounds { .. })
        ));
    }

    #[test]
    fn radial_is_single_slice_cylindrical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vol = random_volume(&mut rng, [3, 16, 16]);
        let table = OffsetTable::for_volume(&vol);
        for _ in 0..10 {
            let pole = Pole::new(rng.random_range(0..16), rng.random_range(0..16), rng.random_range(0..3));
            assert_eq!(
                radial_transform(&vol, pole, &table).unwrap(),
                cylindrical_transform(&vol, pole, TransformConfig::RADIAL, &table).unwrap()
            );
        }
    }

    #[test]
    fn raw_export_roundtrip_and_pgm_header() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vol = random_volume(&mut rng, [5, 8, 8]);
        let table = OffsetTable::for_volume(&vol);
        let img = cylindrical_transform(&vol, Pole::new(3, 3, 2), TransformConfig::new(2, 3).unwrap(), &table).unwrap();
        let base = dir.path().join("img");
        img.save_raw(&base).unwrap();
        assert_eq!(TransformImage::load_raw(&base).unwrap(), img.to_f32());

        let pgm = dir.path().join("img.pgm");
        img.save_pgm(&pgm).unwrap();
        let bytes = fs::read(&pgm).unwrap();
        let header = b"P5\n8 24\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 24 * 8 * 2);
        let pixels: Vec<u16> = bytes[header.len()..]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect();
        assert_eq!(pixels.iter().max(), Some(&65535));
        assert_eq!(pixels.iter().min(), Some(&0));
    }
}
