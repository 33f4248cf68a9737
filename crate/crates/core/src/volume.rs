//! Volumes, label volumes and the `rvol` on-disk format.
//!
//! A volume holds `S` slices of `M×N` voxels in slice-major, row-major order:
//! voxel `(m, n, s)` lives at flat index `(s·M + m)·N + n`, so every slice is
//! one contiguous block.
//!
//! An `rvol` is a pair of files sharing a base name: `<base>.json` with the
//! header and `<base>.raw` with the little-endian voxel data.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{DType, Voxel};

/// Class names of the three-class kidney use case, indexed by label id.
pub const KIDNEY_CLASSES: [&str; 3] = ["non-kidney", "left kidney", "right kidney"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    /// `[S, M, N]`: slice count, rows per slice, columns per slice.
    pub dims: [usize; 3],
    pub dtype: DType,
    /// Label id (as a decimal string) to class name.
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "classes")]
    pub class_map: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<[f64; 3]>,
}

impl VolumeHeader {
    pub fn new(dims: [usize; 3], dtype: DType) -> Self {
        Self {
            dims,
            dtype,
            class_map: None,
            spacing: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Header(format!("all dims must be positive, got {:?}", self.dims)));
        }
        if let Some(spacing) = self.spacing {
            if spacing.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::Header(format!("invalid spacing {spacing:?}")));
            }
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn byte_len(&self) -> usize {
        self.voxel_count() * self.dtype.size_of()
    }
}

/// A voxel coordinate used as the origin of a transform: row `u`, column `v`,
/// slice `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Pole {
    pub u: usize,
    pub v: usize,
    pub z: usize,
}

impl Pole {
    pub const fn new(u: usize, v: usize, z: usize) -> Self {
        Self { u, v, z }
    }

    pub fn check_bounds(&self, dims: [usize; 3]) -> Result<()> {
        let [s, m, n] = dims;
        if self.u < m && self.v < n && self.z < s {
            Ok(())
        } else {
            Err(Error::PoleOutOfBounds {
                u: self.u,
                v: self.v,
                z: self.z,
                dims,
            })
        }
    }
}

impl std::str::FromStr for Pole {
    type Err = Error;

    /// Parses `u,v,z`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("pole {s:?} is not three comma-separated integers")))?;
        match parts[..] {
            [u, v, z] => Ok(Pole { u, v, z }),
            _ => Err(Error::Config(format!("pole {s:?} needs three values"))),
        }
    }
}

impl From<[usize; 3]> for Pole {
    fn from([u, v, z]: [usize; 3]) -> Self {
        Pole { u, v, z }
    }
}

impl From<Pole> for [usize; 3] {
    fn from(p: Pole) -> Self {
        [p.u, p.v, p.z]
    }
}

/// Flat index of `(m, n, s)` in a volume of dims `[S, M, N]`.
#[inline]
pub fn flat_index(dims: [usize; 3], m: usize, n: usize, s: usize) -> usize {
    (s * dims[1] + m) * dims[2] + n
}

/// Inverse of [`flat_index`], returning `(m, n, s)`.
#[inline]
pub fn unflatten(dims: [usize; 3], index: usize) -> (usize, usize, usize) {
    let n = index % dims[2];
    let rest = index / dims[2];
    (rest % dims[1], n, rest / dims[1])
}

/// Resolves `<base>.json` and `<base>.raw` from a base path. A trailing
/// `.json` or `.raw` extension on `path` is ignored.
pub fn rvol_paths(path: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let path = path.as_ref();
    let base = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut json = base.clone().into_os_string();
    json.push(".json");
    let mut raw = base.into_os_string();
    raw.push(".raw");
    (json.into(), raw.into())
}

fn read_header(json_path: &Path) -> Result<VolumeHeader> {
    let text = fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    // Parse through a loose form first so an unknown dtype string gets its own error.
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(json_path, e))?;
    if let Some(dtype) = value.get("dtype").and_then(|d| d.as_str()) {
        dtype.parse::<DType>()?;
    }
    let header: VolumeHeader = serde_json::from_value(value).map_err(|e| Error::json(json_path, e))?;
    header.validate()?;
    Ok(header)
}

fn read_raw(raw_path: &Path, header: &VolumeHeader) -> Result<Vec<u8>> {
    let bytes = fs::read(raw_path).map_err(|e| Error::io(raw_path, e))?;
    if bytes.len() != header.byte_len() {
        return Err(Error::LengthMismatch {
            dims: header.dims,
            expected: header.byte_len(),
            actual: bytes.len(),
        });
    }
    Ok(bytes)
}

fn write_rvol(path: &Path, header: &VolumeHeader, raw: &[u8]) -> Result<()> {
    let (json_path, raw_path) = rvol_paths(path);
    if let Some(parent) = json_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(header).map_err(|e| Error::json(&json_path, e))?;
    text.push('\n');
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&raw_path, raw).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}

fn decode<T: Voxel>(bytes: &[u8]) -> Vec<T> {
    bytes.chunks_exact(T::DTYPE.size_of()).map(T::read_le).collect()
}

/// A scalar volume `X` of `S` slices, each `M×N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    header: VolumeHeader,
    data: Vec<T>,
}

impl<T: Voxel> Volume<T> {
    pub fn new(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        Self::from_header(VolumeHeader::new(dims, T::DTYPE), data)
    }

    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims, vec![T::zero(); len])
    }

    pub fn from_header(header: VolumeHeader, data: Vec<T>) -> Result<Self> {
        header.validate()?;
        if header.dtype != T::DTYPE {
            return Err(Error::DTypeMismatch {
                expected: T::DTYPE.to_string(),
                found: header.dtype.to_string(),
            });
        }
        if data.len() != header.voxel_count() {
            return Err(Error::LengthMismatch {
                dims: header.dims,
                expected: header.byte_len(),
                actual: data.len() * T::DTYPE.size_of(),
            });
        }
        Ok(Self { header, data })
    }

    /// Builds a volume by evaluating `f(m, n, s)` at every voxel.
    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        let [s_count, m_count, n_count] = dims;
        let mut data = Vec::with_capacity(s_count * m_count * n_count);
        for s in 0..s_count {
            for m in 0..m_count {
                for n in 0..n_count {
                    data.push(f(m, n, s));
                }
            }
        }
        Self::new(dims, data)
    }

    /// Loads an `rvol` whose dtype must be `T`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (json_path, raw_path) = rvol_paths(path);
        let header = read_header(&json_path)?;
        if header.dtype != T::DTYPE {
            return Err(Error::DTypeMismatch {
                expected: T::DTYPE.to_string(),
                found: header.dtype.to_string(),
            });
        }
        let bytes = read_raw(&raw_path, &header)?;
        let data = decode(&bytes);
        Self::from_header(header, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rvol(path.as_ref(), &self.header, &self.to_le_bytes())
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header.byte_len());
        for &v in &self.data {
            v.write_le(&mut out);
        }
        out
    }

    pub fn header(&self) -> &VolumeHeader {
        &self.header
    }

    pub fn header_mut(&mut self) -> &mut VolumeHeader {
        &mut self.header
    }

    pub fn dims(&self) -> [usize; 3] {
        self.header.dims
    }

    pub fn slices(&self) -> usize {
        self.header.dims[0]
    }

    pub fn rows(&self) -> usize {
        self.header.dims[1]
    }

    pub fn cols(&self) -> usize {
        self.header.dims[2]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize, s: usize) -> Option<T> {
        let [s_count, m_count, n_count] = self.header.dims;
        if m < m_count && n < n_count && s < s_count {
            Some(self.data[flat_index(self.header.dims, m, n, s)])
        } else {
            None
        }
    }

    #[inline]
    pub fn set(&mut self, m: usize, n: usize, s: usize, value: T) {
        let idx = flat_index(self.header.dims, m, n, s);
        self.data[idx] = value;
    }

    /// The contiguous `M×N` block of slice `s`.
    pub fn slice(&self, s: usize) -> &[T] {
        let len = self.rows() * self.cols();
        &self.data[s * len..(s + 1) * len]
    }
}

/// A volume of unknown-at-compile-time dtype, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    U8(Volume<u8>),
    I16(Volume<i16>),
    F32(Volume<f32>),
}

impl AnyVolume {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (json_path, raw_path) = rvol_paths(path);
        let header = read_header(&json_path)?;
        let bytes = read_raw(&raw_path, &header)?;
        Ok(match header.dtype {
            DType::U8 => AnyVolume::U8(Volume::from_header(header, bytes)?),
            DType::I16 => AnyVolume::I16(Volume::from_header(header, decode(&bytes))?),
            DType::F32 => AnyVolume::F32(Volume::from_header(header, decode(&bytes))?),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        match self {
            AnyVolume::U8(v) => v.save(path),
            AnyVolume::I16(v) => v.save(path),
            AnyVolume::F32(v) => v.save(path),
        }
    }

    pub fn header(&self) -> &VolumeHeader {
        match self {
            AnyVolume::U8(v) => v.header(),
            AnyVolume::I16(v) => v.header(),
            AnyVolume::F32(v) => v.header(),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.header().dims
    }
}

impl From<Volume<u8>> for AnyVolume {
    fn from(v: Volume<u8>) -> Self {
        AnyVolume::U8(v)
    }
}

impl From<Volume<i16>> for AnyVolume {
    fn from(v: Volume<i16>) -> Self {
        AnyVolume::I16(v)
    }
}

impl From<Volume<f32>> for AnyVolume {
    fn from(v: Volume<f32>) -> Self {
        AnyVolume::F32(v)
    }
}

/// Applies a generic expression to whichever concrete volume an [`AnyVolume`] holds.
#[macro_export]
macro_rules! with_volume {
    ($any:expr, $vol:ident => $body:expr) => {
        match $any {
            $crate::volume::AnyVolume::U8($vol) => $body,
            $crate::volume::AnyVolume::I16($vol) => $body,
            $crate::volume::AnyVolume::F32($vol) => $body,
        }
    };
}

/// Per-voxel class labels (ground truth or prediction).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    volume: Volume<u8>,
    n_classes: usize,
}

impl LabelVolume {
    /// Wraps `data` with the given class names; label `i` is named `class_names[i]`.
    pub fn new<S: AsRef<str>>(dims: [usize; 3], data: Vec<u8>, class_names: &[S]) -> Result<Self> {
        let mut header = VolumeHeader::new(dims, DType::U8);
        header.class_map = Some(
            class_names
                .iter()
                .enumerate()
                .map(|(i, name)| (i.to_string(), name.as_ref().to_string()))
                .collect(),
        );
        Self::from_volume(Volume::from_header(header, data)?)
    }

    /// Uses `class_<i>` as the name of every class.
    pub fn with_class_count(dims: [usize; 3], data: Vec<u8>, n_classes: usize) -> Result<Self> {
        let names: Vec<String> = (0..n_classes).map(|i| format!("class_{i}")).collect();
        Self::new(dims, data, &names)
    }

    pub fn from_volume(volume: Volume<u8>) -> Result<Self> {
        let class_map = volume
            .header()
            .class_map
            .as_ref()
            .ok_or_else(|| Error::Header("label volume requires a \"classes\" map".to_string()))?;
        let mut n_classes = 0usize;
        for key in class_map.keys() {
            let id: u8 = key
                .parse()
                .map_err(|_| Error::Header(format!("class id {key:?} is not a u8")))?;
            n_classes = n_classes.max(id as usize + 1);
        }
        if n_classes == 0 {
            return Err(Error::Header("label volume has an empty class map".into()));
        }
        let labels = Self { volume, n_classes };
        labels.check_labels()?;
        Ok(labels)
    }

    fn check_labels(&self) -> Result<()> {
        if let Some((index, &label)) = self
            .volume
            .data()
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= self.n_classes)
        {
            return Err(Error::LabelOutOfRange {
                label,
                index,
                n_classes: self.n_classes,
            });
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_volume(Volume::load(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.volume.save(path)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn class_names(&self) -> Vec<String> {
        let map = self.volume.header().class_map.as_ref();
        (0..self.n_classes)
            .map(|i| {
                map.and_then(|m| m.get(&i.to_string()).cloned())
                    .unwrap_or_else(|| format!("class_{i}"))
            })
            .collect()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.volume.dims()
    }

    pub fn data(&self) -> &[u8] {
        self.volume.data()
    }

    pub fn volume(&self) -> &Volume<u8> {
        &self.volume
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize, s: usize) -> Option<u8> {
        self.volume.get(m, n, s)
    }

    pub fn label_at(&self, pole: Pole) -> Option<u8> {
        self.volume.get(pole.u, pole.v, pole.z)
    }
}

/// Checks that `labels` can annotate `vol`: equal dims and in-range labels.
pub fn validate_pair<T: Voxel>(vol: &Volume<T>, labels: &LabelVolume) -> Result<()> {
    if vol.dims() != labels.dims() {
        return Err(Error::DimMismatch {
            left: vol.dims(),
            right: labels.dims(),
        });
    }
    labels.check_labels()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn reference_sized_i16_volume_loads() {
        let dir = tmp();
        let base = dir.path().join("ct");
        let header = VolumeHeader::new([18, 256, 256], DType::I16);
        write_rvol(&base, &header, &vec![0u8; 2_359_296]).unwrap();
        let vol = Volume::<i16>::load(&base).unwrap();
        assert_eq!(vol.dims(), [18, 256, 256]);
        assert_eq!((vol.slices(), vol.rows(), vol.cols()), (18, 256, 256));
    }

    #[test]
    fn minimal_volume() {
        let dir = tmp();
        let base = dir.path().join("one");
        write_rvol(&base, &VolumeHeader::new([1, 1, 1], DType::F32), &0f32.to_le_bytes()).unwrap();
        let vol = Volume::<f32>::load(&base).unwrap();
        assert_eq!(vol.data(), &[0.0]);
    }

    #[test]
    fn byte_length_mismatch_is_rejected() {
        let dir = tmp();
        let base = dir.path().join("bad");
        write_rvol(&base, &VolumeHeader::new([2, 4, 4], DType::U8), &[0u8; 100]).unwrap();
        assert!(matches!(
            AnyVolume::load(&base),
            Err(Error::LengthMismatch {
                expected: 32,
                actual: 100,
                ..
            })
        ));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let dir = tmp();
        assert!(matches!(
            AnyVolume::load(dir.path().join("nope")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn corrupted_dtype_fails_to_load() {
        let dir = tmp();
        let base = dir.path().join("v");
        Volume::<u8>::new([4, 16, 16], vec![7; 1024])
            .unwrap()
            .save(&base)
            .unwrap();
        let (json, _) = rvol_paths(&base);
        let text = fs::read_to_string(&json).unwrap().replace("\"u8\"", "\"q7\"");
        fs::write(&json, text).unwrap();
        assert!(matches!(AnyVolume::load(&base), Err(Error::UnknownDType(d)) if d == "q7"));
    }

    #[test]
    fn typed_load_rejects_other_dtype() {
        let dir = tmp();
        let base = dir.path().join("v");
        Volume::<u8>::zeros([1, 2, 2]).unwrap().save(&base).unwrap();
        assert!(matches!(Volume::<i16>::load(&base), Err(Error::DTypeMismatch { .. })));
    }

    #[test]
    fn rvol_path_resolution() {
        let (j, r) = rvol_paths("a/b/vol.json");
        assert_eq!(j, PathBuf::from("a/b/vol.json"));
        assert_eq!(r, PathBuf::from("a/b/vol.raw"));
        let (j, _) = rvol_paths("x.y");
        assert_eq!(j, PathBuf::from("x.y.json"));
    }

    #[test]
    fn validate_pair_cases() {
        let vol = Volume::<u8>::zeros([3, 8, 8]).unwrap();
        let ok = LabelVolume::with_class_count([3, 8, 8], (0..192).map(|i| (i % 3) as u8).collect(), 3).unwrap();
        validate_pair(&vol, &ok).unwrap();

        let short = LabelVolume::with_class_count([2, 8, 8], vec![0; 128], 3).unwrap();
        assert!(matches!(validate_pair(&vol, &short), Err(Error::DimMismatch { .. })));

        let mut raw = vec![0u8; 192];
        raw[5] = 3;
        assert!(matches!(
            LabelVolume::with_class_count([3, 8, 8], raw, 3),
            Err(Error::LabelOutOfRange {
                label: 3,
                index: 5,
                n_classes: 3
            })
        ));
    }

    #[test]
    fn label_volume_roundtrip_keeps_class_names() {
        let dir = tmp();
        let base = dir.path().join("lab");
        let labels = LabelVolume::new([1, 2, 2], vec![0, 1, 2, 0], &KIDNEY_CLASSES).unwrap();
        labels.save(&base).unwrap();
        let back = LabelVolume::load(&base).unwrap();
        assert_eq!(back, labels);
        assert_eq!(back.class_names()[2], "right kidney");
    }

    #[test]
    fn flat_index_is_bijective_on_small_dims() {
        let dims = [3, 4, 5];
        let mut seen = [false; 60];
        for s in 0..3 {
            for m in 0..4 {
                for n in 0..5 {
                    let i = flat_index(dims, m, n, s);
                    assert!(!seen[i]);
                    seen[i] = true;
                    assert_eq!(unflatten(dims, i), (m, n, s));
                }
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    fn dims_strategy() -> impl Strategy<Value = [usize; 3]> {
        (1usize..5, 1usize..9, 1usize..9).prop_map(|(s, m, n)| [s, m, n])
    }

    #[test]
    fn pole_parses_from_text() {
        assert_eq!("128, 128,9".parse::<Pole>().unwrap(), Pole::new(128, 128, 9));
        assert!("1,2".parse::<Pole>().is_err());
        assert!("1,x,2".parse::<Pole>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn roundtrip_u8(dims in dims_strategy(), seed in any::<u64>()) {
            let len: usize = dims.iter().product();
            let data: Vec<u8> = (0..len).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
            check_roundtrip(Volume::new(dims, data).unwrap());
        }

        #[test]
        fn roundtrip_i16(dims in dims_strategy(), data in proptest::collection::vec(any::<i16>(), 256)) {
            let len: usize = dims.iter().product();
            check_roundtrip(Volume::new(dims, data[..len].to_vec()).unwrap());
        }

        #[test]
        fn roundtrip_f32(dims in dims_strategy(), data in proptest::collection::vec(-1e6f32..1e6, 256)) {
            let len: usize = dims.iter().product();
            check_roundtrip(Volume::new(dims, data[..len].to_vec()).unwrap());
        }
    }

    fn check_roundtrip<T: Voxel>(vol: Volume<T>) {
        let dir = tmp();
        let base = dir.path().join("rt");
        vol.save(&base).unwrap();
        let back = Volume::<T>::load(&base).unwrap();
        assert_eq!(back.to_le_bytes(), vol.to_le_bytes());
        assert_eq!(back.header(), vol.header());
    }
}
