//! Scalar types that can be stored in a volume.

use std::fmt;
use std::str::FromStr;

use num_traits::{NumCast, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// On-disk element type of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "u8")]
    U8,
    #[serde(rename = "i16")]
    I16,
    #[serde(rename = "f32")]
    F32,
}

impl DType {
    pub const fn size_of(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::I16 => 2,
            DType::F32 => 4,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            DType::U8 => "u8",
            DType::I16 => "i16",
            DType::F32 => "f32",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "u8" => Ok(DType::U8),
            "i16" => Ok(DType::I16),
            "f32" => Ok(DType::F32),
            other => Err(Error::UnknownDType(other.to_string())),
        }
    }
}

/// A voxel scalar with a fixed little-endian encoding.
pub trait Voxel:
    Copy + Send + Sync + PartialEq + PartialOrd + fmt::Debug + Zero + ToPrimitive + NumCast + 'static
{
    const DTYPE: DType;

    fn write_le(self, out: &mut Vec<u8>);

    /// Decodes one value from exactly `DTYPE.size_of()` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// Rounds (integer types) and clamps to the representable range.
    fn saturating_from_f64(value: f64) -> Self;

    /// Exact widening conversion.
    fn widen(self) -> f64;

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self.to_f32().unwrap_or(0.0)
    }
}

impl Voxel for u8 {
    const DTYPE: DType = DType::U8;

    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }

    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }

    fn saturating_from_f64(value: f64) -> Self {
        if value.is_nan() {
            return 0;
        }
        value.round().clamp(0.0, u8::MAX as f64) as u8
    }
}

impl Voxel for i16 {
    const DTYPE: DType = DType::I16;

    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        i16::from_le_bytes([bytes[0], bytes[1]])
    }

    fn saturating_from_f64(value: f64) -> Self {
        if value.is_nan() {
            return 0;
        }
        value.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
    }
}

impl Voxel for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }

    fn saturating_from_f64(value: f64) -> Self {
        value as f32
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self
    }
}
