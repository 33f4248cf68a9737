#![allow(dead_code)]

use std::f64::consts::PI;

use cylseg::synth::{Primitive, Shape};
use cylseg::{DType, Volume, Voxel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `cos(2π·num/den)`; the rational values `0, ±1/2, ±1` are returned exactly.
pub fn cos_turns(num: i64, den: i64) -> f64 {
    let r = num.rem_euclid(den);
    if (4 * r) % den == 0 {
        return [1.0, 0.0, -1.0, 0.0][(4 * r / den) as usize];
    }
    if (6 * r) % den == 0 {
        return [1.0, 0.5, -0.5, -1.0, -0.5, 0.5][(6 * r / den) as usize];
    }
    (2.0 * PI * r as f64 / den as f64).cos()
}

/// `sin(2π·num/den) = cos(2π·(den − 4·num)/(4·den))`.
pub fn sin_turns(num: i64, den: i64) -> f64 {
    cos_turns(den - 4 * num, 4 * den)
}

pub fn round_half_away(x: f64) -> i64 {
    if x >= 0.0 {
        (x + 0.5).floor() as i64
    } else {
        -((-x + 0.5).floor() as i64)
    }
}

/// Direct evaluation of one sampling offset.
pub fn direct_offset(m: usize, r: usize, rays: usize) -> (i64, i64) {
    let c = cos_turns(m as i64, rays as i64);
    let s = sin_turns(m as i64, rays as i64);
    (round_half_away(r as f64 * c), round_half_away(r as f64 * -s))
}

/// Textbook loop: every sample bounds-checked on its own, slices listed
/// from lowest to highest.
pub fn naive_transform<T: Voxel>(
    vol: &Volume<T>,
    (u, v, z): (usize, usize, usize),
    delta_s: usize,
    n_slices: usize,
    rays: usize,
    radii: usize,
) -> Vec<T> {
    let [slices, rows, cols] = vol.dims();
    let half = (n_slices as i64 - 1) / 2;
    let mut out = vec![T::zero(); n_slices * rays * radii];
    for s in 0..n_slices {
        let zz = z as i64 + (s as i64 - half) * delta_s as i64;
        if zz < 0 || zz >= slices as i64 {
            continue;
        }
        for m in 0..rays {
            for r in 0..radii {
                let (dx, dy) = direct_offset(m, r, rays);
                let (x, y) = (u as i64 + dx, v as i64 + dy);
                if 0 <= x && x < rows as i64 && 0 <= y && y < cols as i64 {
                    out[(s * rays + m) * radii + r] = vol.get(x as usize, y as usize, zz as usize).unwrap();
                }
            }
        }
    }
    out
}

pub fn random_i16_volume(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Volume<i16> {
    Volume::from_fn(dims, |_, _, _| rng.random_range(-2000..2000)).unwrap()
}

/// Values drawn away from zero so that a zero in a transform marks an unwritten sample.
pub fn nonzero_i16_volume(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Volume<i16> {
    Volume::from_fn(dims, |_, _, _| rng.random_range(1..1000)).unwrap()
}

/// Two same-radius, same-intensity objects: a sphere (label 1) and a
/// cylinder along the slice axis spanning every slice (label 2). In any
/// slice through the sphere both look like discs.
pub struct Family {
    pub dims: [usize; 3],
    pub background: f64,
    pub intensity: f64,
    pub noise: f64,
}

impl Family {
    pub fn spec(&self, seed: u64) -> cylseg::synth::PhantomSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [slices, rows, cols] = self.dims;
        let radius = rng.random_range(6.0..8.0);
        let phi = rng.random_range(0.0..2.0 * PI);
        let half_gap = radius + rng.random_range(3.0..4.0);
        let (cm, cn) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
        let a = [cm + half_gap * phi.cos(), cn + half_gap * phi.sin()];
        let b = [cm - half_gap * phi.cos(), cn - half_gap * phi.sin()];
        let margin = radius + 1.0;
        let sz = rng.random_range(margin..slices as f64 - 1.0 - margin);
        cylseg::synth::PhantomSpec {
            dims: self.dims,
            dtype: DType::I16,
            n_classes: 3,
            class_names: Some(vec!["background".into(), "sphere".into(), "cylinder".into()]),
            primitives: vec![
                Primitive {
                    shape: Shape::Sphere { radius },
                    center: [a[0], a[1], sz],
                    intensity: self.intensity,
                    label: 1,
                },
                Primitive {
                    shape: Shape::Cylinder {
                        radius,
                        height: 4.0 * slices as f64,
                    },
                    center: [b[0], b[1], (slices as f64 - 1.0) / 2.0],
                    intensity: self.intensity,
                    label: 2,
                },
            ],
            background_intensity: self.background,
            noise_sigma: self.noise,
            seed,
        }
    }
}
