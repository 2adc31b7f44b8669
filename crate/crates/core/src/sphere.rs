//! Sphere ↔ raster mappings for ERP, CMP and CPP layouts, reprojection and
//! uniform sphere sampling.
//!
//! Continuous plane coordinates put pixel `(i, j)` on the square
//! `[i, i+1) × [j, j+1)`, so its center is `(i + 0.5, j + 0.5)`.
//! [`bilinear_sample`] instead takes *index* coordinates where pixel centers
//! sit on integers; convert with `index = plane - 0.5`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{Projection, RasterImage};

/// A direction on the unit sphere. Latitude is clamped to `[-π/2, π/2]`
/// and longitude wrapped to `[-π, π)` on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalPoint {
    lat: f64,
    lon: f64,
}

impl SphericalPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        let lat = lat.clamp(-FRAC_PI_2, FRAC_PI_2);
        let mut lon = (lon + PI).rem_euclid(TAU) - PI;
        if lon >= PI {
            lon -= TAU;
        }
        Self { lat, lon }
    }

    #[inline]
    pub fn lat(&self) -> f64 {
        self.lat
    }

    #[inline]
    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// `(cos φ cos λ, cos φ sin λ, sin φ)`: x forward, y right, z up.
    pub fn to_unit_vector(&self) -> [f64; 3] {
        let (sl, cl) = self.lat.sin_cos();
        let (so, co) = self.lon.sin_cos();
        [cl * co, cl * so, sl]
    }

    pub fn from_vector(v: [f64; 3]) -> Self {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let z = (v[2] / n).clamp(-1.0, 1.0);
        Self::new(z.asin(), v[1].atan2(v[0]))
    }

    /// Great-circle distance in radians.
    pub fn angular_distance(&self, other: &SphericalPoint) -> f64 {
        let a = self.to_unit_vector();
        let b = other.to_unit_vector();
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        sin.atan2(cos)
    }
}

/// Cube faces in layout order: the top row holds front, right, back and the
/// bottom row left, top, bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeFace {
    Front,
    Right,
    Back,
    Left,
    Top,
    Bottom,
}

impl CubeFace {
    pub const ALL: [CubeFace; 6] = [
        CubeFace::Front,
        CubeFace::Right,
        CubeFace::Back,
        CubeFace::Left,
        CubeFace::Top,
        CubeFace::Bottom,
    ];

    /// `(column, row)` in the 3×2 layout.
    pub fn cell(self) -> (usize, usize) {
        let i = self as usize;
        (i % 3, i / 3)
    }

    fn from_cell(col: usize, row: usize) -> Self {
        Self::ALL[row * 3 + col]
    }

    /// Face-local coordinates `(s, t) ∈ [-1, 1]²` (s right, t down) to a
    /// direction vector on the face plane.
    fn direction(self, s: f64, t: f64) -> [f64; 3] {
        match self {
            CubeFace::Front => [1.0, s, -t],
            CubeFace::Right => [-s, 1.0, -t],
            CubeFace::Back => [-1.0, -s, -t],
            CubeFace::Left => [s, -1.0, -t],
            CubeFace::Top => [t, s, 1.0],
            CubeFace::Bottom => [-t, s, -1.0],
        }
    }

    /// Gnomonic projection of a direction onto its dominant face.
    fn project(v: [f64; 3]) -> (Self, f64, f64) {
        let [x, y, z] = v;
        let (ax, ay, az) = (x.abs(), y.abs(), z.abs());
        if ax >= ay && ax >= az {
            if x > 0.0 {
                (CubeFace::Front, y / x, -z / x)
            } else {
                (CubeFace::Back, y / x, z / x)
            }
        } else if ay >= az {
            if y > 0.0 {
                (CubeFace::Right, -x / y, -z / y)
            } else {
                (CubeFace::Left, -x / y, z / y)
            }
        } else if z > 0.0 {
            (CubeFace::Top, y / z, x / z)
        } else {
            (CubeFace::Bottom, -y / z, x / z)
        }
    }
}

/// Raster dimensions for a projection. CMP rasters are `3F × 2F` for face
/// size `F`; ERP and CPP rasters are conventionally `2H × H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub width: usize,
    pub height: usize,
}

impl Geometry {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub fn cube_face(face: usize) -> Self {
        Self::new(3 * face, 2 * face)
    }

    fn validate(&self, kind: Projection) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::arg("geometry dimensions must be positive"));
        }
        if kind == Projection::Cmp && (self.width % 3 != 0 || self.width / 3 * 2 != self.height) {
            return Err(Error::arg(format!(
                "CMP rasters must be 3F x 2F, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Continuous raster position; `face` is set for CMP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanePoint {
    pub u: f64,
    pub v: f64,
    pub face: Option<CubeFace>,
}

fn sqrt_3pi() -> f64 {
    (3.0 * PI).sqrt()
}

/// Craster parabolic forward map in projection units.
///
/// `x ∈ [-√(3π), √(3π)]`, `y ∈ [-√(3π)/2, √(3π)/2]`.
pub fn cpp_forward(lat: f64, lon: f64) -> (f64, f64) {
    let x = (3.0 / PI).sqrt() * lon * (2.0 * (2.0 * lat / 3.0).cos() - 1.0);
    let y = sqrt_3pi() * (lat / 3.0).sin();
    (x, y)
}

/// Inverse Craster parabolic map; `None` outside the parabolic footprint.
pub fn cpp_inverse(x: f64, y: f64) -> Option<(f64, f64)> {
    let r = y / sqrt_3pi();
    if !(-0.5..=0.5).contains(&r) {
        return None;
    }
    let lat = 3.0 * r.asin();
    let denom = (3.0 / PI).sqrt() * (2.0 * (2.0 * lat / 3.0).cos() - 1.0);
    let lon = if denom.abs() < 1e-12 {
        if x.abs() < 1e-9 {
            0.0
        } else {
            return None;
        }
    } else {
        x / denom
    };
    if lon.abs() > PI {
        return None;
    }
    Some((lat, lon))
}

fn require_spherical(kind: Projection) -> Result<()> {
    match kind {
        Projection::Erp | Projection::Cmp | Projection::Cpp => Ok(()),
        Projection::None => Err(Error::arg("projection kind NONE has no sphere mapping")),
    }
}

/// Maps a sphere point into continuous raster coordinates.
///
/// Returns `Ok(None)` only when the point lands outside the raster.
pub fn sphere_to_plane(p: SphericalPoint, kind: Projection, geometry: Geometry) -> Result<Option<PlanePoint>> {
    require_spherical(kind)?;
    geometry.validate(kind)?;
    let (w, h) = (geometry.width as f64, geometry.height as f64);
    let pt = match kind {
        Projection::Erp => PlanePoint {
            u: (p.lon / TAU + 0.5) * w,
            v: (0.5 - p.lat / PI) * h,
            face: None,
        },
        Projection::Cmp => {
            let f = geometry.width as f64 / 3.0;
            let (face, s, t) = CubeFace::project(p.to_unit_vector());
            let (col, row) = face.cell();
            PlanePoint {
                u: (col as f64 + 0.5 * (s + 1.0)) * f,
                v: (row as f64 + 0.5 * (t + 1.0)) * f,
                face: Some(face),
            }
        }
        Projection::Cpp => {
            let (x, y) = cpp_forward(p.lat, p.lon);
            PlanePoint {
                u: (x / (2.0 * sqrt_3pi()) + 0.5) * w,
                v: (0.5 - y / sqrt_3pi()) * h,
                face: None,
            }
        }
        Projection::None => unreachable!(),
    };
    let inside = (0.0..=w).contains(&pt.u) && (0.0..=h).contains(&pt.v);
    Ok(inside.then_some(pt))
}

/// Inverse of [`sphere_to_plane`]; `Ok(None)` for positions outside the
/// raster or, for CPP, outside the parabolic footprint.
pub fn plane_to_sphere(u: f64, v: f64, kind: Projection, geometry: Geometry) -> Result<Option<SphericalPoint>> {
    require_spherical(kind)?;
    geometry.validate(kind)?;
    let (w, h) = (geometry.width as f64, geometry.height as f64);
    if !(0.0..=w).contains(&u) || !(0.0..=h).contains(&v) {
        return Ok(None);
    }
    Ok(match kind {
        Projection::Erp => Some(SphericalPoint::new((0.5 - v / h) * PI, (u / w - 0.5) * TAU)),
        Projection::Cmp => {
            let f = w / 3.0;
            let col = ((u / f).floor() as usize).min(2);
            let row = ((v / f).floor() as usize).min(1);
            let s = 2.0 * (u / f - col as f64) - 1.0;
            let t = 2.0 * (v / f - row as f64) - 1.0;
            let face = CubeFace::from_cell(col, row);
            Some(SphericalPoint::from_vector(face.direction(s, t)))
        }
        Projection::Cpp => {
            let x = (u / w - 0.5) * 2.0 * sqrt_3pi();
            let y = (0.5 - v / h) * sqrt_3pi();
            cpp_inverse(x, y).map(|(lat, lon)| SphericalPoint::new(lat, lon))
        }
        Projection::None => unreachable!(),
    })
}

/// Bilinear interpolation of a row-major plane at index coordinates
/// (pixel centers on integers). Columns wrap when `wrap_x` is set and clamp
/// otherwise; rows always clamp. `bounds` optionally restricts clamping to
/// the sub-rectangle `(x0, y0, x1, y1)` (inclusive pixel indices).
pub fn bilinear_sample(
    data: &[f64],
    width: usize,
    height: usize,
    x: f64,
    y: f64,
    wrap_x: bool,
    bounds: Option<(usize, usize, usize, usize)>,
) -> f64 {
    let (bx0, by0, bx1, by1) = bounds.unwrap_or((0, 0, width - 1, height - 1));
    let y = y.clamp(by0 as f64, by1 as f64);
    let yf = y.floor();
    let y0 = yf as usize;
    let y1 = (y0 + 1).min(by1);
    let fy = y - yf;

    let (x0, x1, fx) = if wrap_x {
        let xw = x.rem_euclid(width as f64);
        let xf = xw.floor();
        let x0 = (xf as usize).min(width - 1);
        (x0, (x0 + 1) % width, xw - xf)
    } else {
        let xc = x.clamp(bx0 as f64, bx1 as f64);
        let xf = xc.floor();
        let x0 = xf as usize;
        (x0, (x0 + 1).min(bx1), xc - xf)
    };
    let at = |xx: usize, yy: usize| data[yy * width + xx];
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear interpolation (clamped, index coordinates) that ignores
/// neighbours rejected by `valid` and renormalises the remaining weights.
/// Falls back to plain interpolation when no neighbour is valid.
pub fn bilinear_sample_masked(
    data: &[f64],
    width: usize,
    height: usize,
    x: f64,
    y: f64,
    valid: impl Fn(usize, usize) -> bool,
) -> f64 {
    let xc = x.clamp(0.0, (width - 1) as f64);
    let yc = y.clamp(0.0, (height - 1) as f64);
    let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
    let (fx, fy) = (xc - x0 as f64, yc - y0 as f64);
    let taps = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ];
    let (mut acc, mut wsum) = (0.0, 0.0);
    for &(xx, yy, w) in &taps {
        if w > 0.0 && valid(xx, yy) {
            acc += w * data[yy * width + xx];
            wsum += w;
        }
    }
    if wsum > 0.0 {
        acc / wsum
    } else {
        bilinear_sample(data, width, height, x, y, false, None)
    }
}

/// True when the center of CPP raster pixel `(i, j)` lies inside the footprint.
pub fn cpp_pixel_valid(i: usize, j: usize, width: usize, height: usize) -> bool {
    let x = ((i as f64 + 0.5) / width as f64 - 0.5) * 2.0 * sqrt_3pi();
    let y = (0.5 - (j as f64 + 0.5) / height as f64) * sqrt_3pi();
    cpp_inverse(x, y).is_some()
}

/// Samples every channel of `image` at a sphere point. Returns `None` when
/// the point has no raster position (CPP footprint / out of raster).
pub fn sample_sphere(image: &RasterImage, p: SphericalPoint, out: &mut [f64]) -> Result<bool> {
    let kind = image.projection();
    let geometry = Geometry::new(image.width(), image.height());
    let Some(pt) = sphere_to_plane(p, kind, geometry)? else {
        return Ok(false);
    };
    let (w, h) = (image.width(), image.height());
    let bounds = pt.face.map(|face| {
        let f = w / 3;
        let (col, row) = face.cell();
        (col * f, row * f, col * f + f - 1, row * f + f - 1)
    });
    let wrap = kind == Projection::Erp;
    for (c, o) in out.iter_mut().enumerate().take(image.channels()) {
        *o = if kind == Projection::Cpp {
            // zero-filled pixels outside the footprint must not bleed in
            bilinear_sample_masked(image.channel(c), w, h, pt.u - 0.5, pt.v - 0.5, |i, j| {
                cpp_pixel_valid(i, j, w, h)
            })
        } else {
            bilinear_sample(image.channel(c), w, h, pt.u - 0.5, pt.v - 0.5, wrap, bounds)
        };
    }
    Ok(true)
}

/// Output of [`reproject`]: the resampled image and its validity mask
/// (`false` where the destination pixel lies outside the projection footprint).
#[derive(Debug, Clone)]
pub struct Reprojected {
    pub image: RasterImage,
    pub mask: Vec<bool>,
}

impl Reprojected {
    pub fn valid_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }
}

/// Resamples `image` into another projection layout. Invalid destination
/// pixels are zero and masked out.
pub fn reproject(image: &RasterImage, dst_kind: Projection, dst_width: usize, dst_height: usize) -> Result<Reprojected> {
    require_spherical(image.projection())
        .map_err(|_| Error::arg("source image carries no spherical projection tag"))?;
    require_spherical(dst_kind)?;
    let geometry = Geometry::new(dst_width, dst_height);
    geometry.validate(dst_kind)?;
    if dst_kind == Projection::Erp && dst_width != 2 * dst_height {
        return Err(Error::arg("ERP destinations must be 2:1"));
    }
    let channels = image.channels();
    let n = dst_width * dst_height;

    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..dst_height)
        .into_par_iter()
        .map(|j| -> Result<(Vec<f64>, Vec<bool>)> {
            let mut values = vec![0.0; channels * dst_width];
            let mut mask = vec![false; dst_width];
            let mut px = [0.0; 3];
            for i in 0..dst_width {
                let Some(p) = plane_to_sphere(i as f64 + 0.5, j as f64 + 0.5, dst_kind, geometry)? else {
                    continue;
                };
                if sample_sphere(image, p, &mut px)? {
                    mask[i] = true;
                    for c in 0..channels {
                        values[c * dst_width + i] = px[c];
                    }
                }
            }
            Ok((values, mask))
        })
        .collect::<Result<_>>()?;

    let mut data = vec![0.0; channels * n];
    let mut mask = vec![false; n];
    for (j, (values, m)) in rows.into_iter().enumerate() {
        for c in 0..channels {
            data[c * n + j * dst_width..c * n + (j + 1) * dst_width]
                .copy_from_slice(&values[c * dst_width..(c + 1) * dst_width]);
        }
        mask[j * dst_width..(j + 1) * dst_width].copy_from_slice(&m);
    }
    Ok(Reprojected {
        image: RasterImage::new(dst_width, dst_height, channels, data, dst_kind)?,
        mask,
    })
}

/// Default geometry used when an ERP image of height `h` is converted to
/// `kind`: CMP faces are `h/2`, CPP keeps the ERP raster size.
pub fn default_geometry(erp_width: usize, erp_height: usize, kind: Projection) -> Geometry {
    match kind {
        Projection::Cmp => Geometry::cube_face((erp_height / 2).max(1)),
        _ => Geometry::new(erp_width, erp_height),
    }
}

/// ERP → `kind` → ERP at the source size, as used for projection impairments.
pub fn projection_round_trip(image: &RasterImage, kind: Projection) -> Result<RasterImage> {
    if image.projection() != Projection::Erp {
        return Err(Error::arg("projection round trips start from an ERP image"));
    }
    let g = default_geometry(image.width(), image.height(), kind);
    let there = reproject(image, kind, g.width, g.height)?;
    Ok(reproject(&there.image, Projection::Erp, image.width(), image.height())?.image)
}

/// Sample generator used by [`SampleGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleGenerator {
    Fibonacci,
}

/// Near-uniform point set on the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub points: Vec<SphericalPoint>,
    pub generator: SampleGenerator,
}

impl SampleGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Default S-PSNR sample count.
pub const DEFAULT_SPHERE_SAMPLES: usize = 655_362;

/// Spherical Fibonacci lattice: `z_i = 1 − (2i+1)/n`, longitudes advancing by
/// the golden angle.
pub fn uniform_sphere_samples(n: usize) -> Result<SampleGrid> {
    if n < 12 {
        return Err(Error::arg(format!("at least 12 sphere samples are required, got {n}")));
    }
    let golden = PI * (3.0 - 5f64.sqrt());
    let points = (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let lon = (i as f64 * golden).rem_euclid(TAU);
            SphericalPoint::new(z.asin(), lon)
        })
        .collect();
    Ok(SampleGrid {
        points,
        generator: SampleGenerator::Fibonacci,
    })
}
