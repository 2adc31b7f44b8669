//! Channel-planar floating-point images.
//!
//! Pixel values live in `[0, 1]`; 8-bit data is only an I/O format and is
//! divided by 255 on load.

use std::fmt;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sphere-to-plane projection a raster is laid out in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Projection {
    Erp,
    Cmp,
    Cpp,
    None,
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Projection::Erp => "ERP",
            Projection::Cmp => "CMP",
            Projection::Cpp => "CPP",
            Projection::None => "NONE",
        })
    }
}

impl std::str::FromStr for Projection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ERP" => Ok(Projection::Erp),
            "CMP" => Ok(Projection::Cmp),
            "CPP" => Ok(Projection::Cpp),
            "NONE" => Ok(Projection::None),
            other => Err(Error::arg(format!("unknown projection '{other}'"))),
        }
    }
}

/// A single real-valued 2-D array stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::arg(format!(
                "plane data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    /// Builds a plane from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == width), "ragged rows");
        Self {
            width,
            height,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Plane) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Channel-planar image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
    projection: Projection,
}

impl RasterImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
        projection: Projection,
    ) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::arg(format!("image must be at least 2x2, got {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::arg(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::arg(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if projection == Projection::Erp && width != 2 * height {
            return Err(Error::arg(format!(
                "ERP images must be 2:1, got {width}x{height}"
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite pixel value at flat index {bad}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            projection,
        })
    }

    pub fn from_planes(planes: Vec<Plane>, projection: Projection) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::arg("at least one plane is required"))?;
        let (w, h) = (first.width, first.height);
        if planes.iter().any(|p| p.width != w || p.height != h) {
            return Err(Error::arg("all planes must share dimensions"));
        }
        let channels = planes.len();
        let data = planes.into_iter().flat_map(|p| p.data).collect();
        Self::new(w, h, channels, data, projection)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64, projection: Projection) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels], projection)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn projection(&self) -> Projection {
        self.projection
    }

    pub fn with_projection(mut self, projection: Projection) -> Result<Self> {
        if projection == Projection::Erp && self.width != 2 * self.height {
            return Err(Error::arg("ERP images must be 2:1"));
        }
        self.projection = projection;
        Ok(self)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.channel(c).to_vec(),
        }
    }

    pub fn planes(&self) -> Vec<Plane> {
        (0..self.channels).map(|c| self.plane(c)).collect()
    }

    /// BT.601 luma; single-channel images are returned as-is.
    pub fn luma(&self) -> Plane {
        if self.channels == 1 {
            return self.plane(0);
        }
        let (r, g, b) = (self.channel(0), self.channel(1), self.channel(2));
        let data = r
            .iter()
            .zip(g)
            .zip(b)
            .map(|((r, g), b)| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect();
        Plane {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Copies the `w`×`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<RasterImage> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::arg(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * self.channels);
        for c in 0..self.channels {
            let ch = self.channel(c);
            for y in y0..y0 + h {
                data.extend_from_slice(&ch[y * self.width + x0..y * self.width + x0 + w]);
            }
        }
        RasterImage::new(w, h, self.channels, data, Projection::None)
    }

    pub fn to_dynamic(&self) -> DynamicImage {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let n = self.width * self.height;
        if self.channels == 1 {
            let buf: Vec<u8> = self.data.iter().map(|&v| q(v)).collect();
            DynamicImage::ImageLuma8(
                GrayImage::from_raw(self.width as u32, self.height as u32, buf).expect("sized buffer"),
            )
        } else {
            let mut buf = Vec::with_capacity(3 * n);
            for i in 0..n {
                for c in 0..3 {
                    buf.push(q(self.data[c * n + i]));
                }
            }
            DynamicImage::ImageRgb8(
                RgbImage::from_raw(self.width as u32, self.height as u32, buf).expect("sized buffer"),
            )
        }
    }

    pub fn from_dynamic(img: &DynamicImage, projection: Projection) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let gray = matches!(
            img,
            DynamicImage::ImageLuma8(_)
                | DynamicImage::ImageLumaA8(_)
                | DynamicImage::ImageLuma16(_)
                | DynamicImage::ImageLumaA16(_)
        );
        if gray {
            let l = img.to_luma8();
            let data = l.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
            return Self::new(w, h, 1, data, projection);
        }
        let rgb: ImageBuffer<image::Rgb<u8>, Vec<u8>> = img.to_rgb8();
        let n = w * h;
        let mut data = vec![0.0; 3 * n];
        for (i, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * n + i] = f64::from(px[c]) / 255.0;
            }
        }
        Self::new(w, h, 3, data, projection)
    }

    pub fn load(path: impl AsRef<Path>, projection: Projection) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Codec {
            context: path.display().to_string(),
            source,
        })?;
        Self::from_dynamic(&img, projection)
    }

    /// Writes the image quantised to 8 bits; the container follows the extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_dynamic().save(path).map_err(|source| Error::Codec {
            context: path.display().to_string(),
            source,
        })
    }

    pub fn max_abs_diff(&self, other: &RasterImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &RasterImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}
