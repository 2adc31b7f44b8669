//! Procedural omnidirectional scenes.
//!
//! Content is defined on the sphere (3-D value noise, soft horizon gradient,
//! hard-edged spherical-cap "objects" and fine texture) and sampled at ERP
//! pixel centers, so rasters show the usual horizontal stretching towards
//! the poles. Used as pristine sources for tests and demos.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{Projection, RasterImage};
use crate::sphere::SphericalPoint;

fn hash3(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let mut h = seed
        ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (iz as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Trilinear value noise in `[0, 1)`.
fn value_noise(p: [f64; 3], seed: u64) -> f64 {
    let f = [p[0].floor(), p[1].floor(), p[2].floor()];
    let i = [f[0] as i64, f[1] as i64, f[2] as i64];
    let t = [smooth(p[0] - f[0]), smooth(p[1] - f[1]), smooth(p[2] - f[2])];
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { t[0] } else { 1.0 - t[0] })
                    * (if dy == 1 { t[1] } else { 1.0 - t[1] })
                    * (if dz == 1 { t[2] } else { 1.0 - t[2] });
                acc += w * hash3(i[0] + dx, i[1] + dy, i[2] + dz, seed);
            }
        }
    }
    acc
}

/// Fractal noise with amplitude halving per octave, normalised to `[0, 1]`.
fn fbm(v: [f64; 3], base_freq: f64, octaves: usize, seed: u64) -> f64 {
    let (mut acc, mut norm, mut amp, mut freq) = (0.0, 0.0, 1.0, base_freq);
    for o in 0..octaves {
        let p = [v[0] * freq, v[1] * freq, v[2] * freq];
        acc += amp * value_noise(p, seed.wrapping_add(o as u64 * 7919));
        norm += amp;
        amp *= 0.55;
        freq *= 2.0;
    }
    acc / norm
}

/// Upright structure: a longitude/latitude box with sharp meridian edges
/// (world-vertical lines stay vertical in ERP).
struct Pillar {
    lon: f64,
    half_width: f64,
    lat_lo: f64,
    lat_hi: f64,
    color: [f64; 3],
    rows: f64,
}

struct Cap {
    center: [f64; 3],
    cos_radius: f64,
    color: [f64; 3],
    texture_freq: f64,
}

/// Deterministic procedural scene description.
pub struct SceneGenerator {
    seed: u64,
    sky: [f64; 3],
    ground: [f64; 3],
    caps: Vec<Cap>,
    pillars: Vec<Pillar>,
    detail_freq: f64,
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
    ]
}

impl SceneGenerator {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_caps = rng.random_range(6..12);
        let caps = (0..n_caps)
            .map(|_| {
                let p = SphericalPoint::new(
                    rng.random_range(-1.0f64..1.0).asin(),
                    rng.random_range(-PI..PI),
                );
                Cap {
                    center: p.to_unit_vector(),
                    cos_radius: rng.random_range(0.08f64..0.6).cos(),
                    color: random_color(&mut rng),
                    texture_freq: rng.random_range(12.0..40.0),
                }
            })
            .collect();
        let n_pillars = rng.random_range(20..40);
        let pillars = (0..n_pillars)
            .map(|_| {
                let lat_lo = rng.random_range(-0.9f64..0.0);
                Pillar {
                    lon: rng.random_range(-PI..PI),
                    half_width: rng.random_range(0.01..0.12),
                    lat_lo,
                    lat_hi: lat_lo + rng.random_range(0.2..1.2),
                    color: random_color(&mut rng),
                    rows: rng.random_range(10.0..60.0),
                }
            })
            .collect();
        Self {
            seed,
            sky: random_color(&mut rng),
            ground: random_color(&mut rng),
            caps,
            pillars,
            detail_freq: rng.random_range(40.0..80.0),
        }
    }

    /// RGB value for a unit direction.
    pub fn color(&self, v: [f64; 3]) -> [f64; 3] {
        let horizon = 0.5 + 0.5 * (4.0 * v[2]).tanh();
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = self.ground[k] + (self.sky[k] - self.ground[k]) * horizon;
        }
        let broad = fbm(v, 3.0, 5, self.seed);
        for (k, ck) in c.iter_mut().enumerate() {
            *ck *= 0.6 + 0.8 * fbm(v, 2.0, 3, self.seed + 101 + k as u64) * broad;
        }
        for cap in &self.caps {
            let d = v[0] * cap.center[0] + v[1] * cap.center[1] + v[2] * cap.center[2];
            if d > cap.cos_radius {
                let tex = fbm(v, cap.texture_freq, 3, self.seed + 977);
                for k in 0..3 {
                    c[k] = cap.color[k] * (0.7 + 0.6 * tex);
                }
            }
        }
        let p = SphericalPoint::from_vector(v);
        for pillar in &self.pillars {
            let dlon = (p.lon() - pillar.lon + PI).rem_euclid(TAU) - PI;
            if dlon.abs() < pillar.half_width && (pillar.lat_lo..pillar.lat_hi).contains(&p.lat()) {
                let shade = 0.9 + 0.2 * fbm(v, pillar.rows, 2, self.seed + 55);
                for k in 0..3 {
                    c[k] = pillar.color[k] * shade;
                }
            }
        }
        let detail = fbm(v, self.detail_freq, 3, self.seed + 31) - 0.5;
        let fine = value_noise([v[0] * 120.0, v[1] * 120.0, v[2] * 120.0], self.seed + 13) - 0.5;
        for ck in &mut c {
            *ck = 0.05 + 0.9 * (*ck + 0.35 * detail + 0.1 * fine).clamp(0.0, 1.0);
        }
        c
    }

    /// Samples the scene into an ERP raster of `2h × h`.
    pub fn render_erp(&self, height: usize) -> Result<RasterImage> {
        if height < 2 {
            return Err(Error::arg("ERP height must be at least 2"));
        }
        let width = 2 * height;
        let n = width * height;
        let mut data = vec![0.0; 3 * n];
        for j in 0..height {
            let lat = (0.5 - (j as f64 + 0.5) / height as f64) * PI;
            for i in 0..width {
                let lon = ((i as f64 + 0.5) / width as f64 - 0.5) * TAU;
                let c = self.color(SphericalPoint::new(lat, lon).to_unit_vector());
                for k in 0..3 {
                    // stored at 8-bit precision so PNG round trips are exact
                    data[k * n + j * width + i] = (c[k] * 255.0).round() / 255.0;
                }
            }
        }
        RasterImage::new(width, height, 3, data, Projection::Erp)
    }
}

/// Convenience wrapper: scene `seed` rendered at ERP height `height`.
pub fn synthetic_erp(height: usize, seed: u64) -> Result<RasterImage> {
    SceneGenerator::new(seed).render_erp(height)
}
