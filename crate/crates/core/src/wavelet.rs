//! Orthonormal 2-D Haar transform and sub-band energy analysis.
//!
//! For each 2×2 block `[[a, b], [c, d]]` one analysis level produces
//!
//! ```text
//! LL = (a + b + c + d) / 2     low-pass both axes
//! LH = (a - b + c - d) / 2     horizontal high-pass (vertical edges)
//! HL = (a + b - c - d) / 2     vertical high-pass (horizontal edges)
//! HH = (a - b - c + d) / 2     diagonal
//! ```
//!
//! which is the separable `(x ± y) / √2` filter pair applied along both axes,
//! so the transform is orthogonal and preserves `Σ x²`.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::{Plane, RasterImage};

/// Sub-band identifiers in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Band {
    LL,
    LH,
    HL,
    HH,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::LL, Band::LH, Band::HL, Band::HH];

    pub fn name(self) -> &'static str {
        match self {
            Band::LL => "LL",
            Band::LH => "LH",
            Band::HL => "HL",
            Band::HH => "HH",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One analysis level: four coefficient planes per channel, each half the
/// source size along both axes.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet {
    pub level: usize,
    pub ll: Vec<Plane>,
    pub lh: Vec<Plane>,
    pub hl: Vec<Plane>,
    pub hh: Vec<Plane>,
}

impl SubbandSet {
    pub fn band(&self, band: Band) -> &[Plane] {
        match band {
            Band::LL => &self.ll,
            Band::LH => &self.lh,
            Band::HL => &self.hl,
            Band::HH => &self.hh,
        }
    }

    pub fn channels(&self) -> usize {
        self.ll.len()
    }

    /// Width and height of each coefficient plane.
    pub fn dims(&self) -> (usize, usize) {
        self.ll.first().map_or((0, 0), |p| (p.width(), p.height()))
    }

    pub fn band_energy(&self, band: Band) -> f64 {
        self.band(band).iter().map(Plane::energy).sum()
    }

    fn validate(&self) -> Result<()> {
        let c = self.ll.len();
        if c == 0 || self.lh.len() != c || self.hl.len() != c || self.hh.len() != c {
            return Err(Error::arg("sub-band channel counts differ or are empty"));
        }
        if self.level == 0 {
            return Err(Error::arg("sub-band level must be >= 1"));
        }
        let dims = self.dims();
        let all = self.ll.iter().chain(&self.lh).chain(&self.hl).chain(&self.hh);
        for p in all {
            if (p.width(), p.height()) != dims {
                return Err(Error::arg(format!(
                    "sub-band plane {}x{} does not match {}x{}",
                    p.width(),
                    p.height(),
                    dims.0,
                    dims.1
                )));
            }
        }
        Ok(())
    }
}

/// One analysis level over a raw row-major buffer.
///
/// `src` is `width`×`height`; each output buffer is `(width/2)`×`(height/2)`.
/// Both dimensions must be even.
pub fn haar_forward(src: &[f64], width: usize, height: usize, out: [&mut [f64]; 4]) {
    debug_assert!(width % 2 == 0 && height % 2 == 0);
    let [ll, lh, hl, hh] = out;
    let hw = width / 2;
    for y in 0..height / 2 {
        let r0 = &src[2 * y * width..(2 * y + 1) * width];
        let r1 = &src[(2 * y + 1) * width..(2 * y + 2) * width];
        for x in 0..hw {
            let (a, b) = (r0[2 * x], r0[2 * x + 1]);
            let (c, d) = (r1[2 * x], r1[2 * x + 1]);
            let i = y * hw + x;
            ll[i] = 0.5 * (a + b + c + d);
            lh[i] = 0.5 * (a - b + c - d);
            hl[i] = 0.5 * (a + b - c - d);
            hh[i] = 0.5 * (a - b - c + d);
        }
    }
}

/// Inverse of [`haar_forward`]; `dst` is `(2·half_w)`×`(2·half_h)`.
pub fn haar_inverse(bands: [&[f64]; 4], half_w: usize, half_h: usize, dst: &mut [f64]) {
    let [ll, lh, hl, hh] = bands;
    let width = 2 * half_w;
    for y in 0..half_h {
        for x in 0..half_w {
            let i = y * half_w + x;
            let (s, h, v, d) = (ll[i], lh[i], hl[i], hh[i]);
            dst[2 * y * width + 2 * x] = 0.5 * (s + h + v + d);
            dst[2 * y * width + 2 * x + 1] = 0.5 * (s - h + v - d);
            dst[(2 * y + 1) * width + 2 * x] = 0.5 * (s + h - v - d);
            dst[(2 * y + 1) * width + 2 * x + 1] = 0.5 * (s - h - v + d);
        }
    }
}

fn analyze_level(planes: &[Plane], level: usize) -> SubbandSet {
    let mut set = SubbandSet {
        level,
        ll: Vec::new(),
        lh: Vec::new(),
        hl: Vec::new(),
        hh: Vec::new(),
    };
    for p in planes {
        let (hw, hh_) = (p.width() / 2, p.height() / 2);
        let mut bufs = [
            vec![0.0; hw * hh_],
            vec![0.0; hw * hh_],
            vec![0.0; hw * hh_],
            vec![0.0; hw * hh_],
        ];
        {
            let [a, b, c, d] = &mut bufs;
            haar_forward(p.data(), p.width(), p.height(), [a, b, c, d]);
        }
        let [a, b, c, d] = bufs;
        set.ll.push(Plane::new(hw, hh_, a).expect("sized"));
        set.lh.push(Plane::new(hw, hh_, b).expect("sized"));
        set.hl.push(Plane::new(hw, hh_, c).expect("sized"));
        set.hh.push(Plane::new(hw, hh_, d).expect("sized"));
    }
    set
}

/// Multi-level analysis of a set of same-sized channel planes.
///
/// Returns one [`SubbandSet`] per level, finest first; level `k` analyses
/// the LL band of level `k - 1`.
pub fn dwt2(planes: &[Plane], levels: usize) -> Result<Vec<SubbandSet>> {
    let first = planes.first().ok_or_else(|| Error::arg("dwt2 needs at least one plane"))?;
    let (w, h) = (first.width(), first.height());
    if planes.iter().any(|p| p.width() != w || p.height() != h) {
        return Err(Error::arg("dwt2 planes must share dimensions"));
    }
    if levels == 0 {
        return Err(Error::arg("dwt2 needs levels >= 1"));
    }
    let block = 1usize
        .checked_shl(levels as u32)
        .ok_or_else(|| Error::arg("too many levels"))?;
    if w % block != 0 || h % block != 0 {
        return Err(Error::arg(format!(
            "{w}x{h} is not divisible by 2^{levels} = {block}"
        )));
    }
    let mut out = Vec::with_capacity(levels);
    let mut current = planes.to_vec();
    for level in 1..=levels {
        let set = analyze_level(&current, level);
        current = set.ll.clone();
        out.push(set);
    }
    Ok(out)
}

pub fn dwt2_plane(plane: &Plane, levels: usize) -> Result<Vec<SubbandSet>> {
    dwt2(std::slice::from_ref(plane), levels)
}

pub fn dwt2_image(image: &RasterImage, levels: usize) -> Result<Vec<SubbandSet>> {
    dwt2(&image.planes(), levels)
}

/// Inverts one analysis level, returning one plane per channel.
pub fn iwt2(set: &SubbandSet) -> Result<Vec<Plane>> {
    set.validate()?;
    let (hw, hh) = set.dims();
    Ok((0..set.channels())
        .map(|c| {
            let mut dst = vec![0.0; 4 * hw * hh];
            haar_inverse(
                [set.ll[c].data(), set.lh[c].data(), set.hl[c].data(), set.hh[c].data()],
                hw,
                hh,
                &mut dst,
            );
            Plane::new(2 * hw, 2 * hh, dst).expect("sized")
        })
        .collect())
}

/// Inverts a full multi-level decomposition (finest level first).
pub fn iwt2_multilevel(levels: &[SubbandSet]) -> Result<Vec<Plane>> {
    let mut iter = levels.iter().rev();
    let coarsest = iter.next().ok_or_else(|| Error::arg("no levels to invert"))?;
    let mut current = iwt2(coarsest)?;
    for set in iter {
        let next = SubbandSet {
            ll: current,
            ..set.clone()
        };
        current = iwt2(&next)?;
    }
    Ok(current)
}

/// Per-band energies of a decomposition: LL from the coarsest level, detail
/// bands summed over all levels.
pub fn band_energies(levels: &[SubbandSet]) -> [f64; 4] {
    let mut e = [0.0; 4];
    if let Some(last) = levels.last() {
        e[0] = last.band_energy(Band::LL);
    }
    for set in levels {
        for band in [Band::LH, Band::HL, Band::HH] {
            e[band.index()] += set.band_energy(band);
        }
    }
    e
}

/// Percentage energy loss per band, `None` where the reference band is empty.
pub fn energy_loss_percent(reference: &[f64; 4], impaired: &[f64; 4]) -> [Option<f64>; 4] {
    let mut out = [None; 4];
    for b in 0..4 {
        if reference[b] > 0.0 {
            out[b] = Some(100.0 * (reference[b] - impaired[b]).max(0.0) / reference[b]);
        }
    }
    out
}

/// Reference/impaired pair with the quality factor used to produce it.
#[derive(Debug, Clone)]
pub struct EnergyPair {
    pub reference: RasterImage,
    pub impaired: RasterImage,
    pub quality_factor: u32,
}

/// Number of histogram bins per band.
pub const HISTOGRAM_BINS: usize = 64;

#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    /// `"ref"` or the quality factor.
    pub series: String,
    pub band: Band,
    pub bin_centers: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Mean percentage energy loss per band and quality factor.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyLossReport {
    pub levels: usize,
    pub quality_factors: Vec<u32>,
    /// `loss[band][qf_index]`
    pub loss: [Vec<Option<f64>>; 4],
    pub pairs_per_qf: Vec<usize>,
    pub histograms: Vec<Histogram>,
}

impl EnergyLossReport {
    pub fn get(&self, band: Band, quality_factor: u32) -> Option<f64> {
        let i = self.quality_factors.iter().position(|&q| q == quality_factor)?;
        self.loss[band.index()][i]
    }

    /// Rows are bands, columns quality factors; undefined cells are `null`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "band")?;
        for q in &self.quality_factors {
            write!(w, ",{q}")?;
        }
        writeln!(w)?;
        for band in Band::ALL {
            write!(w, "{}", band.name())?;
            for v in &self.loss[band.index()] {
                match v {
                    Some(v) => write!(w, ",{v:.6}")?,
                    None => write!(w, ",null")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_histogram_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "series,band,bin_center,count")?;
        for h in &self.histograms {
            for (c, n) in h.bin_centers.iter().zip(&h.counts) {
                writeln!(w, "{},{},{c:.6},{n}", h.series, h.band.name())?;
            }
        }
        Ok(())
    }
}

struct PairAnalysis {
    qf: u32,
    reference: Vec<SubbandSet>,
    impaired: Vec<SubbandSet>,
    loss: [Option<f64>; 4],
}

fn band_coefficients(levels: &[SubbandSet], band: Band) -> impl Iterator<Item = f64> + '_ {
    let sets: Vec<&SubbandSet> = match band {
        Band::LL => levels.last().into_iter().collect(),
        _ => levels.iter().collect(),
    };
    sets.into_iter()
        .flat_map(move |s| s.band(band).iter().flat_map(|p| p.data().iter().copied()))
}

/// Luma sub-band energy loss of impaired images relative to their references,
/// averaged over pairs sharing a quality factor, plus coefficient histograms.
pub fn energy_loss_report(pairs: &[EnergyPair], levels: usize) -> Result<EnergyLossReport> {
    if pairs.is_empty() {
        return Err(Error::arg("energy_loss_report needs at least one pair"));
    }
    for (i, p) in pairs.iter().enumerate() {
        if (p.reference.width(), p.reference.height()) != (p.impaired.width(), p.impaired.height()) {
            return Err(Error::arg(format!("pair {i}: reference and impaired dimensions differ")));
        }
    }
    let analyses: Vec<PairAnalysis> = pairs
        .par_iter()
        .map(|p| -> Result<PairAnalysis> {
            let reference = dwt2_plane(&p.reference.luma(), levels)?;
            let impaired = dwt2_plane(&p.impaired.luma(), levels)?;
            let loss = energy_loss_percent(&band_energies(&reference), &band_energies(&impaired));
            Ok(PairAnalysis {
                qf: p.quality_factor,
                reference,
                impaired,
                loss,
            })
        })
        .collect::<Result<_>>()?;

    let mut by_qf: BTreeMap<u32, Vec<&PairAnalysis>> = BTreeMap::new();
    for a in &analyses {
        by_qf.entry(a.qf).or_default().push(a);
    }
    let quality_factors: Vec<u32> = by_qf.keys().copied().collect();
    let mut loss: [Vec<Option<f64>>; 4] = Default::default();
    let mut pairs_per_qf = Vec::new();
    for group in by_qf.values() {
        pairs_per_qf.push(group.len());
        for b in 0..4 {
            let defined: Vec<f64> = group.iter().filter_map(|a| a.loss[b]).collect();
            loss[b].push(if defined.is_empty() {
                None
            } else {
                Some(defined.iter().sum::<f64>() / defined.len() as f64)
            });
        }
    }

    // One "ref" series plus one per quality factor, all over a shared
    // symmetric range. Every pair's reference contributes to "ref".
    let mut histograms = Vec::new();
    for band in Band::ALL {
        let range = analyses
            .iter()
            .flat_map(|a| band_coefficients(&a.reference, band).chain(band_coefficients(&a.impaired, band)))
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let range = if range > 0.0 { range } else { 1.0 };
        let width = 2.0 * range / HISTOGRAM_BINS as f64;
        let centers: Vec<f64> = (0..HISTOGRAM_BINS)
            .map(|i| -range + (i as f64 + 0.5) * width)
            .collect();
        let bin = |v: f64| (((v + range) / width) as usize).min(HISTOGRAM_BINS - 1);

        let mut reference_counts = vec![0u64; HISTOGRAM_BINS];
        for a in &analyses {
            for v in band_coefficients(&a.reference, band) {
                reference_counts[bin(v)] += 1;
            }
        }
        histograms.push(Histogram {
            series: "ref".to_string(),
            band,
            bin_centers: centers.clone(),
            counts: reference_counts,
        });
        for (qf, group) in &by_qf {
            let mut counts = vec![0u64; HISTOGRAM_BINS];
            for a in group {
                for v in band_coefficients(&a.impaired, band) {
                    counts[bin(v)] += 1;
                }
            }
            histograms.push(Histogram {
                series: qf.to_string(),
                band,
                bin_centers: centers.clone(),
                counts,
            });
        }
    }

    Ok(EnergyLossReport {
        levels,
        quality_factors,
        loss,
        pairs_per_qf,
        histograms,
    })
}
