//! Labeled phantom volumes built from spheres, z-aligned cylinders and cuboids.
//!
//! A voxel `(m, n, s)` is represented by the point with those integer
//! coordinates; it belongs to a primitive iff that point satisfies the shape's
//! inequality. Later primitives overwrite earlier ones.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{DType, Voxel};
use crate::volume::{AnyVolume, LabelVolume, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Sphere {
        radius: f64,
    },
    /// Axis along the slice direction; `height` is the full extent in slices.
    Cylinder {
        radius: f64,
        height: f64,
    },
    /// Half-open box `center − size/2 ≤ p < center + size/2` on each axis.
    Cuboid {
        size: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    /// `[m, n, s]`.
    pub center: [f64; 3],
    pub intensity: f64,
    pub label: u8,
}

impl Primitive {
    #[inline]
    pub fn contains(&self, m: f64, n: f64, s: f64) -> bool {
        let [cm, cn, cs] = self.center;
        let (dm, dn, ds) = (m - cm, n - cn, s - cs);
        match self.shape {
            Shape::Sphere { radius } => dm * dm + dn * dn + ds * ds <= radius * radius,
            Shape::Cylinder { radius, height } => dm * dm + dn * dn <= radius * radius && ds.abs() <= height / 2.0,
            Shape::Cuboid { size } => [dm, dn, ds]
                .iter()
                .zip(size)
                .all(|(&d, e)| -e / 2.0 <= d && d < e / 2.0),
        }
    }

    /// Half extents along `[m, n, s]`.
    fn half_extent(&self) -> [f64; 3] {
        match self.shape {
            Shape::Sphere { radius } => [radius; 3],
            Shape::Cylinder { radius, height } => [radius, radius, height / 2.0],
            Shape::Cuboid { size } => [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0],
        }
    }

    /// Inclusive voxel ranges `[m, n, s]` that may contain members, clipped
    /// to `dims`; `None` when the primitive misses the volume entirely.
    fn voxel_bounds(&self, dims: [usize; 3]) -> Option<[(usize, usize); 3]> {
        let limits = [dims[1], dims[2], dims[0]];
        let half = self.half_extent();
        let mut out = [(0, 0); 3];
        for axis in 0..3 {
            let lo = (self.center[axis] - half[axis]).floor().max(0.0);
            let hi = (self.center[axis] + half[axis]).ceil().min(limits[axis] as f64 - 1.0);
            if lo > hi {
                return None;
            }
            out[axis] = (lo as usize, hi as usize);
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    /// `[S, M, N]`.
    pub dims: [usize; 3],
    #[serde(default = "default_dtype")]
    pub dtype: DType,
    pub n_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub background_intensity: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_dtype() -> DType {
    DType::I16
}

impl PhantomSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Config(format!("phantom dims must be positive: {:?}", self.dims)));
        }
        if self.n_classes == 0 || self.n_classes > 256 {
            return Err(Error::Config(format!("unsupported class count {}", self.n_classes)));
        }
        if let Some(names) = &self.class_names {
            if names.len() != self.n_classes {
                return Err(Error::Config(format!(
                    "{} class names for {} classes",
                    names.len(),
                    self.n_classes
                )));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("invalid noise sigma {}", self.noise_sigma)));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            if p.label as usize >= self.n_classes {
                return Err(Error::Config(format!(
                    "primitive {i} has label {} but only {} classes exist",
                    p.label, self.n_classes
                )));
            }
        }
        Ok(())
    }

    fn class_names(&self) -> Vec<String> {
        self.class_names
            .clone()
            .unwrap_or_else(|| (0..self.n_classes).map(|i| format!("class_{i}")).collect())
    }
}

/// Renders the phantom as a volume of `T` plus its noise-free label volume.
pub fn make_phantom<T: Voxel>(spec: &PhantomSpec) -> Result<(Volume<T>, LabelVolume)> {
    spec.validate()?;
    let dims = spec.dims;
    let [_, rows, cols] = dims;
    let plane = rows * cols;
    let len = dims.iter().product();
    let mut labels = vec![0u8; len];
    let mut intensity = vec![spec.background_intensity; len];

    for (i, prim) in spec.primitives.iter().enumerate() {
        let Some([(m0, m1), (n0, n1), (s0, s1)]) = prim.voxel_bounds(dims) else {
            log::warn!("primitive {i} lies entirely outside the {dims:?} volume");
            continue;
        };
        for s in s0..=s1 {
            for m in m0..=m1 {
                for n in n0..=n1 {
                    if prim.contains(m as f64, n as f64, s as f64) {
                        let idx = (s * rows + m) * cols + n;
                        labels[idx] = prim.label;
                        intensity[idx] = prim.intensity;
                    }
                }
            }
        }
    }

    // One ChaCha stream per slice keeps the noise independent of scheduling.
    let sigma = spec.noise_sigma;
    let seed = spec.seed;
    let data: Vec<T> = intensity
        .par_chunks(plane)
        .enumerate()
        .flat_map_iter(|(s, slice)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            slice
                .iter()
                .map(|&base| {
                    let noise = if sigma > 0.0 {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        sigma * z
                    } else {
                        0.0
                    };
                    T::saturating_from_f64(base + noise)
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let vol = Volume::new(dims, data)?;
    let labels = LabelVolume::new(dims, labels, &spec.class_names())?;
    Ok((vol, labels))
}

/// [`make_phantom`] with the voxel type taken from `spec.dtype`.
pub fn make_phantom_any(spec: &PhantomSpec) -> Result<(AnyVolume, LabelVolume)> {
    Ok(match spec.dtype {
        DType::U8 => {
            let (v, l) = make_phantom::<u8>(spec)?;
            (v.into(), l)
        }
        DType::I16 => {
            let (v, l) = make_phantom::<i16>(spec)?;
            (v.into(), l)
        }
        DType::F32 => {
            let (v, l) = make_phantom::<f32>(spec)?;
            (v.into(), l)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(dims: [usize; 3], primitives: Vec<Primitive>) -> PhantomSpec {
        PhantomSpec {
            dims,
            dtype: DType::I16,
            n_classes: 3,
            class_names: None,
            primitives,
            background_intensity: 0.0,
            noise_sigma: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn sphere_voxel_count_close_to_analytic_volume() {
        let sphere = Primitive {
            shape: Shape::Sphere { radius: 10.0 },
            center: [32.0, 32.0, 32.0],
            intensity: 100.0,
            label: 1,
        };
        let (_, labels) = make_phantom::<i16>(&spec([64, 64, 64], vec![sphere])).unwrap();
        let count = labels.data().iter().filter(|&&l| l == 1).count();
        // Lattice points with x²+y²+z² ≤ 100, counted independently.
        let mut expected = 0;
        for x in -10i32..=10 {
            for y in -10i32..=10 {
                for z in -10i32..=10 {
                    if x * x + y * y + z * z <= 100 {
                        expected += 1;
                    }
                }
            }
        }
        assert_eq!(count, expected);
        assert_eq!(expected, 4169);
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 1000.0;
        assert!(((count as f64 - analytic) / analytic).abs() < 0.02);
    }

    #[test]
    fn cuboid_exact_count() {
        let cube = Primitive {
            shape: Shape::Cuboid { size: [4.0; 3] },
            center: [10.0, 10.0, 10.0],
            intensity: 100.0,
            label: 2,
        };
        let (vol, labels) = make_phantom::<i16>(&spec([20, 20, 20], vec![cube])).unwrap();
        assert_eq!(vol.data().iter().filter(|&&v| v == 100).count(), 64);
        assert_eq!(vol.data().iter().filter(|&&v| v == 0).count(), 8000 - 64);
        assert_eq!(labels.data().iter().filter(|&&l| l == 2).count(), 64);
    }

    #[test]
    fn sphere_and_cylinder_share_the_equator_disc() {
        let sphere = Primitive {
            shape: Shape::Sphere { radius: 6.0 },
            center: [10.0, 10.0, 15.0],
            intensity: 100.0,
            label: 1,
        };
        let cylinder = Primitive {
            shape: Shape::Cylinder {
                radius: 6.0,
                height: 30.0,
            },
            center: [10.0, 30.0, 15.0],
            intensity: 100.0,
            label: 2,
        };
        let (vol, labels) = make_phantom::<i16>(&spec([30, 20, 40], vec![sphere, cylinder])).unwrap();
        let slice = vol.slice(15);
        for m in 0..20 {
            for n in 0..20 {
                assert_eq!(slice[m * 40 + n], slice[m * 40 + n + 20]);
            }
        }
        let above = labels.volume().slice(24);
        assert!(above.iter().all(|&l| l != 1));
        assert!(above.contains(&2));
    }

    #[test]
    fn later_primitives_overwrite() {
        let big = Primitive {
            shape: Shape::Cuboid { size: [6.0; 3] },
            center: [5.0, 5.0, 5.0],
            intensity: 10.0,
            label: 1,
        };
        let small = Primitive {
            shape: Shape::Cuboid { size: [2.0; 3] },
            center: [5.0, 5.0, 5.0],
            intensity: 20.0,
            label: 2,
        };
        let (vol, labels) = make_phantom::<u8>(&spec([10, 10, 10], vec![big, small])).unwrap();
        assert_eq!(vol.get(5, 5, 5), Some(20));
        assert_eq!(labels.get(5, 5, 5), Some(2));
        assert_eq!(labels.get(3, 3, 3), Some(1));
    }

    #[test]
    fn noise_is_deterministic_and_labels_noise_free() {
        let sphere = Primitive {
            shape: Shape::Sphere { radius: 4.0 },
            center: [8.0, 8.0, 4.0],
            intensity: 200.0,
            label: 1,
        };
        let mut s = spec([8, 16, 16], vec![sphere]);
        s.noise_sigma = 5.0;
        let (a, la) = make_phantom::<f32>(&s).unwrap();
        let (b, lb) = make_phantom::<f32>(&s).unwrap();
        assert_eq!(a.to_le_bytes(), b.to_le_bytes());
        assert_eq!(la, lb);
        s.noise_sigma = 0.0;
        let (_, clean) = make_phantom::<f32>(&s).unwrap();
        assert_eq!(clean, la);
        s.noise_sigma = 5.0;
        s.seed = 2;
        let (c, _) = make_phantom::<f32>(&s).unwrap();
        assert_ne!(a.to_le_bytes(), c.to_le_bytes());
    }

    #[test]
    fn invalid_label_and_outside_primitive() {
        let bad = Primitive {
            shape: Shape::Sphere { radius: 2.0 },
            center: [1.0, 1.0, 1.0],
            intensity: 1.0,
            label: 3,
        };
        assert!(matches!(
            make_phantom::<u8>(&spec([4, 4, 4], vec![bad])),
            Err(Error::Config(_))
        ));
        let away = Primitive {
            shape: Shape::Sphere { radius: 2.0 },
            center: [100.0, 100.0, 100.0],
            intensity: 1.0,
            label: 1,
        };
        let (_, labels) = make_phantom::<u8>(&spec([4, 4, 4], vec![away])).unwrap();
        assert!(labels.data().iter().all(|&l| l == 0));
    }

    #[test]
    fn spec_json_roundtrip() {
        let text = r#"{
            "dims": [8, 16, 16], "dtype": "u8", "n_classes": 3,
            "primitives": [
                {"shape": "sphere", "center": [8, 8, 4], "radius": 3, "intensity": 90, "label": 1},
                {"shape": "cylinder", "center": [4, 4, 4], "radius": 2, "height": 8, "intensity": 90, "label": 2},
                {"shape": "cuboid", "center": [12, 12, 4], "size": [2, 2, 2], "intensity": 50, "label": 2}
            ],
            "noise_sigma": 0
        }"#;
        let spec: PhantomSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec.dtype, DType::U8);
        assert_eq!(spec.primitives.len(), 3);
        let again: PhantomSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(again, spec);
    }
}
