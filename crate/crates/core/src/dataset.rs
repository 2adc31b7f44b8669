//! JPEG impairment, patch extraction and impaired-dataset synthesis.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use jpeg_encoder::{ChromaSubsamplingMethod, ColorType, Encoder};
use log::warn;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Projection, RasterImage};
use crate::sphere;

/// JPEG quality factors of the impairment grid.
pub const QUALITY_FACTORS: [u32; 4] = [5, 15, 35, 60];

/// Quality factor used for every projection impairment.
pub const PROJECTION_QUALITY_FACTOR: u32 = 15;

/// Encodes a 3-channel image as baseline JPEG at `quality_factor` (1..=100).
pub fn jpeg_encode(image: &RasterImage, quality_factor: u32) -> Result<Vec<u8>> {
    if !(1..=100).contains(&quality_factor) {
        return Err(Error::arg(format!("JPEG quality factor must be in 1..=100, got {quality_factor}")));
    }
    if image.channels() != 3 {
        return Err(Error::arg("JPEG impairment expects a 3-channel image"));
    }
    if image.width() > u16::MAX as usize || image.height() > u16::MAX as usize {
        return Err(Error::arg("JPEG dimensions are limited to 65535 pixels per axis"));
    }
    let rgb = image.to_dynamic().to_rgb8();
    let mut buf = Vec::new();
    // 4:2:0 box-filtered chroma below q90, IJG table scaling.
    let mut encoder = Encoder::new(&mut buf, quality_factor as u8);
    encoder.set_chroma_subsampling_method(ChromaSubsamplingMethod::Average);
    encoder
        .encode(rgb.as_raw(), image.width() as u16, image.height() as u16, ColorType::Rgb)
        .map_err(|source| Error::Encode {
            context: format!("JPEG encode at q={quality_factor}"),
            source,
        })?;
    Ok(buf)
}

pub fn jpeg_decode(bytes: &[u8], projection: Projection) -> Result<RasterImage> {
    let img = image::ImageReader::with_format(Cursor::new(bytes), image::ImageFormat::Jpeg)
        .decode()
        .map_err(|source| Error::Codec {
            context: "JPEG decode".into(),
            source,
        })?;
    RasterImage::from_dynamic(&img, projection)
}

/// Encode–decode through the JPEG codec; dimensions and projection tag are kept.
pub fn jpeg_roundtrip(image: &RasterImage, quality_factor: u32) -> Result<RasterImage> {
    let bytes = jpeg_encode(image, quality_factor)?;
    jpeg_decode(&bytes, image.projection())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchMode {
    /// `count` patches on distinct cells of an aligned grid, randomly offset.
    RandomNonOverlap,
    /// Every aligned tile, row-major.
    TileAll,
}

/// A patch and the position of its top-left corner in the source.
#[derive(Debug, Clone)]
pub struct Patch {
    pub image: RasterImage,
    pub origin: (usize, usize),
}

/// Top-left corners of the patches [`extract_patches`] would return.
pub fn patch_origins(
    width: usize,
    height: usize,
    size: usize,
    count: usize,
    seed: u64,
    mode: PatchMode,
) -> Result<Vec<(usize, usize)>> {
    if size == 0 || size > width.min(height) {
        return Err(Error::arg(format!("patch size {size} does not fit {width}x{height}")));
    }
    let (cols, rows) = (width / size, height / size);
    match mode {
        PatchMode::TileAll => Ok((0..rows)
            .flat_map(|r| (0..cols).map(move |c| (c * size, r * size)))
            .collect()),
        PatchMode::RandomNonOverlap => {
            let slots = cols * rows;
            if count > slots {
                return Err(Error::arg(format!(
                    "{count} non-overlapping {size}px patches requested but only {slots} fit in {width}x{height}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ox = rng.random_range(0..=width - cols * size);
            let oy = rng.random_range(0..=height - rows * size);
            Ok(index::sample(&mut rng, slots, count)
                .into_iter()
                .map(|s| (ox + (s % cols) * size, oy + (s / cols) * size))
                .collect())
        }
    }
}

pub fn extract_patches(
    image: &RasterImage,
    size: usize,
    count: usize,
    seed: u64,
    mode: PatchMode,
) -> Result<Vec<Patch>> {
    patch_origins(image.width(), image.height(), size, count, seed, mode)?
        .into_iter()
        .map(|(x, y)| {
            Ok(Patch {
                image: image.crop(x, y, size, size)?,
                origin: (x, y),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ImpairmentMode {
    /// ERP compressed at one of the quality factors.
    JpegOnly,
    /// Projection round trip followed by JPEG at q=15.
    Projection,
}

impl fmt::Display for ImpairmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImpairmentMode::JpegOnly => "JPEG_ONLY",
            ImpairmentMode::Projection => "PROJECTION",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImpairmentSpec {
    mode: ImpairmentMode,
    quality_factor: u32,
    projection: Projection,
}

impl ImpairmentSpec {
    pub fn new(mode: ImpairmentMode, quality_factor: u32, projection: Projection) -> Result<Self> {
        if !QUALITY_FACTORS.contains(&quality_factor) {
            return Err(Error::arg(format!(
                "quality factor {quality_factor} is not one of {QUALITY_FACTORS:?}"
            )));
        }
        match mode {
            ImpairmentMode::JpegOnly if projection != Projection::Erp => {
                Err(Error::arg("JPEG_ONLY impairments keep the ERP projection"))
            }
            ImpairmentMode::Projection if quality_factor != PROJECTION_QUALITY_FACTOR => Err(Error::arg(format!(
                "projection impairments use q={PROJECTION_QUALITY_FACTOR}"
            ))),
            ImpairmentMode::Projection if !matches!(projection, Projection::Cmp | Projection::Cpp) => {
                Err(Error::arg("projection impairments round-trip through CMP or CPP"))
            }
            _ => Ok(Self {
                mode,
                quality_factor,
                projection,
            }),
        }
    }

    pub fn jpeg(quality_factor: u32) -> Result<Self> {
        Self::new(ImpairmentMode::JpegOnly, quality_factor, Projection::Erp)
    }

    pub fn projection_round_trip(projection: Projection) -> Result<Self> {
        Self::new(ImpairmentMode::Projection, PROJECTION_QUALITY_FACTOR, projection)
    }

    pub fn mode(&self) -> ImpairmentMode {
        self.mode
    }

    pub fn quality_factor(&self) -> u32 {
        self.quality_factor
    }

    pub fn projection(&self) -> Projection {
        self.projection
    }

    /// The four JPEG levels followed by the CMP and CPP round trips.
    pub fn default_grid() -> Vec<Self> {
        let mut specs: Vec<Self> = QUALITY_FACTORS.iter().map(|&q| Self::jpeg(q).expect("valid")).collect();
        specs.push(Self::projection_round_trip(Projection::Cmp).expect("valid"));
        specs.push(Self::projection_round_trip(Projection::Cpp).expect("valid"));
        specs
    }

    /// Applies the impairment and returns the encoded JPEG bytes.
    pub fn apply(&self, source: &RasterImage) -> Result<Vec<u8>> {
        match self.mode {
            ImpairmentMode::JpegOnly => jpeg_encode(source, self.quality_factor),
            ImpairmentMode::Projection => {
                let projected = sphere::projection_round_trip(source, self.projection)?;
                jpeg_encode(&projected, self.quality_factor)
            }
        }
    }

    /// Proxy DMOS taken from the per-group medians of the reference study.
    pub fn proxy_dmos(&self) -> f64 {
        match (self.mode, self.quality_factor, self.projection) {
            (ImpairmentMode::JpegOnly, 5, _) => 76.8,
            (ImpairmentMode::JpegOnly, 15, _) => 50.5,
            (ImpairmentMode::JpegOnly, 35, _) => 36.9,
            (ImpairmentMode::JpegOnly, _, _) => 32.9,
            (ImpairmentMode::Projection, _, Projection::Cpp) => 52.0,
            (ImpairmentMode::Projection, _, _) => 49.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Split {
    Train,
    Test,
}

/// One impaired stimulus. Field order matches the on-disk JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusRecord {
    pub stimulus_id: String,
    pub source_id: String,
    pub mode: ImpairmentMode,
    pub qf: u32,
    pub projection: Projection,
    /// Relative to the manifest's directory.
    pub path: String,
    pub dmos: Option<f64>,
    pub split: Split,
}

impl StimulusRecord {
    pub fn spec(&self) -> Result<ImpairmentSpec> {
        ImpairmentSpec::new(self.mode, self.qf, self.projection)
    }
}

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub records: Vec<StimulusRecord>,
}

impl DatasetManifest {
    pub fn new(mut records: Vec<StimulusRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.stimulus_id.cmp(&b.stimulus_id));
        let m = Self {
            version: MANIFEST_VERSION,
            records,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::arg(format!("unsupported manifest version {}", self.version)));
        }
        let mut ids = BTreeSet::new();
        for r in &self.records {
            if !ids.insert(&r.stimulus_id) {
                return Err(Error::arg(format!("duplicate stimulus_id '{}'", r.stimulus_id)));
            }
            if let Some(d) = r.dmos {
                if !(0.0..=100.0).contains(&d) || !d.is_finite() {
                    return Err(Error::arg(format!("DMOS {d} of '{}' outside [0, 100]", r.stimulus_id)));
                }
            }
        }
        let train = self.source_ids(Split::Train);
        let test = self.source_ids(Split::Test);
        if let Some(shared) = train.intersection(&test).next() {
            return Err(Error::arg(format!("source '{shared}' appears in both TRAIN and TEST")));
        }
        Ok(())
    }

    pub fn source_ids(&self, split: Split) -> BTreeSet<String> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.source_id.clone())
            .collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &StimulusRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        m.validate()?;
        Ok(m)
    }

    /// Overwrites `dmos` for every record present in `dmos`; returns how many
    /// records were updated.
    pub fn merge_dmos(&mut self, dmos: &BTreeMap<String, f64>) -> Result<usize> {
        let mut n = 0;
        for r in &mut self.records {
            if let Some(&d) = dmos.get(&r.stimulus_id) {
                r.dmos = Some(d);
                n += 1;
            }
        }
        self.validate()?;
        Ok(n)
    }
}

/// Location of a source's pristine reference relative to the manifest directory.
pub fn reference_path(manifest_dir: &Path, source_id: &str) -> PathBuf {
    manifest_dir.join("references").join(format!("{source_id}.png"))
}

/// Knobs for [`build_dataset`].
#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Fraction of *sources* assigned to TRAIN, in (0, 1).
    pub split_ratio: f64,
    pub seed: u64,
    /// Fill `dmos` with [`ImpairmentSpec::proxy_dmos`] instead of leaving it null.
    pub proxy_dmos: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            split_ratio: 5.0 / 6.0,
            seed: 0,
            proxy_dmos: false,
        }
    }
}

pub fn stimulus_id(source_id: &str, spec_index: usize, spec: &ImpairmentSpec) -> String {
    format!(
        "{source_id}_{spec_index:02}_{}_q{:02}",
        spec.projection().to_string().to_lowercase(),
        spec.quality_factor()
    )
}

/// Assigns sources to TRAIN/TEST by shuffling under `seed`.
pub fn split_sources(source_ids: &[String], split_ratio: f64, seed: u64) -> Result<BTreeMap<String, Split>> {
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(Error::arg(format!("split ratio must be in (0, 1), got {split_ratio}")));
    }
    let mut ids: Vec<String> = source_ids.to_vec();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = if n < 2 {
        n
    } else {
        ((n as f64 * split_ratio).round() as usize).clamp(1, n - 1)
    };
    Ok(ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, if i < n_train { Split::Train } else { Split::Test }))
        .collect())
}

fn source_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "source".to_string())
}

/// Impairs every source with every spec, writes references (PNG), impaired
/// stimuli (JPEG) and `manifest.json` under `out_dir`.
pub fn build_dataset(
    sources: &[PathBuf],
    specs: &[ImpairmentSpec],
    options: &BuildOptions,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if specs.is_empty() {
        return Err(Error::arg("no impairment specs given"));
    }
    let mut seen = BTreeSet::new();
    for p in sources {
        let id = source_id_of(p);
        if !seen.insert(id.clone()) {
            return Err(Error::arg(format!("two sources share the id '{id}'")));
        }
    }
    let ref_dir = out_dir.join("references");
    let imp_dir = out_dir.join("impaired");
    for d in [&ref_dir, &imp_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let processed: Vec<Option<(String, Vec<(String, ImpairmentSpec, String)>)>> = sources
        .par_iter()
        .map(|path| -> Result<Option<_>> {
            let source_id = source_id_of(path);
            let image = match RasterImage::load(path, Projection::Erp) {
                Ok(img) if img.channels() == 3 => img,
                Ok(_) => {
                    warn!("skipping {}: not an RGB image", path.display());
                    return Ok(None);
                }
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    return Ok(None);
                }
            };
            image.save(reference_path(out_dir, &source_id))?;
            let mut entries = Vec::with_capacity(specs.len());
            for (i, spec) in specs.iter().enumerate() {
                let id = stimulus_id(&source_id, i, spec);
                let bytes = spec.apply(&image)?;
                let rel = format!("impaired/{id}.jpg");
                let dst = out_dir.join(&rel);
                std::fs::write(&dst, bytes).map_err(|e| Error::io(&dst, e))?;
                entries.push((id, *spec, rel));
            }
            Ok(Some((source_id, entries)))
        })
        .collect::<Result<_>>()?;

    let processed: Vec<_> = processed.into_iter().flatten().collect();
    if processed.is_empty() {
        return Err(Error::arg("no readable ERP sources; the dataset would be empty"));
    }
    let ids: Vec<String> = processed.iter().map(|(id, _)| id.clone()).collect();
    let splits = split_sources(&ids, options.split_ratio, options.seed)?;
    let records = processed
        .into_iter()
        .flat_map(|(source_id, entries)| {
            let split = splits[&source_id];
            entries.into_iter().map(move |(stimulus_id, spec, path)| StimulusRecord {
                stimulus_id,
                source_id: source_id.clone(),
                mode: spec.mode(),
                qf: spec.quality_factor(),
                projection: spec.projection(),
                path,
                dmos: options.proxy_dmos.then(|| spec.proxy_dmos()),
                split,
            })
        })
        .collect();
    let manifest = DatasetManifest::new(records)?;
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}
