//! Full-reference metrics and the correlation protocol used to compare any
//! scorer against DMOS.

use std::fmt;
use std::io::Write;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::raster::{Plane, Projection, RasterImage};
use crate::sphere::{self, Geometry, SampleGrid};

/// PSNR value with an explicit marker for identical inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Identical,
    Db(f64),
}

impl Psnr {
    fn from_mse(mse: f64) -> Self {
        if mse == 0.0 {
            Psnr::Identical
        } else {
            Psnr::Db(10.0 * (1.0 / mse).log10())
        }
    }

    /// Finite dB value, `None` for identical inputs.
    pub fn finite(self) -> Option<f64> {
        match self {
            Psnr::Identical => None,
            Psnr::Db(v) => Some(v),
        }
    }

    /// dB value with identical inputs mapped to `+inf`.
    pub fn db(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    pub fn is_identical(self) -> bool {
        self == Psnr::Identical
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Identical => f.write_str("identical"),
            Psnr::Db(v) => write!(f, "{v:.4}"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Identical => s.serialize_str("identical"),
            Psnr::Db(v) => s.serialize_f64(*v),
        }
    }
}

fn check_pair(a: &RasterImage, b: &RasterImage) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::arg(format!(
            "image dimensions differ: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

fn require_erp(a: &RasterImage, b: &RasterImage) -> Result<()> {
    check_pair(a, b)?;
    if a.projection() != Projection::Erp || b.projection() != Projection::Erp {
        return Err(Error::arg("spherical PSNR variants need ERP-tagged inputs"));
    }
    Ok(())
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// PSNR on BT.601 luma with unit peak.
pub fn psnr(reference: &RasterImage, distorted: &RasterImage) -> Result<Psnr> {
    check_pair(reference, distorted)?;
    Ok(Psnr::from_mse(mse(reference.luma().data(), distorted.luma().data())))
}

/// Spherical PSNR: luma compared at `grid` points sampled bilinearly from the ERP rasters.
pub fn s_psnr(reference: &RasterImage, distorted: &RasterImage, grid: &SampleGrid) -> Result<Psnr> {
    require_erp(reference, distorted)?;
    let (w, h) = (reference.width(), reference.height());
    let geom = Geometry::new(w, h);
    let (ya, yb) = (reference.luma(), distorted.luma());
    let sse: f64 = grid
        .points
        .par_iter()
        .map(|&p| {
            let pt = sphere::sphere_to_plane(p, Projection::Erp, geom)
                .expect("ERP geometry")
                .expect("ERP covers the sphere");
            let (x, y) = (pt.u - 0.5, pt.v - 0.5);
            let a = sphere::bilinear_sample(ya.data(), w, h, x, y, true, None);
            let b = sphere::bilinear_sample(yb.data(), w, h, x, y, true, None);
            (a - b) * (a - b)
        })
        .sum();
    Ok(Psnr::from_mse(sse / grid.len() as f64))
}

/// CPP-PSNR. ERP inputs are resampled to a CPP raster of `cpp_dims`
/// (default: the ERP dimensions); CPP-tagged inputs are compared directly.
/// Only pixels inside the parabolic footprint count.
pub fn cpp_psnr(reference: &RasterImage, distorted: &RasterImage, cpp_dims: Option<(usize, usize)>) -> Result<Psnr> {
    check_pair(reference, distorted)?;
    match (reference.projection(), distorted.projection()) {
        (Projection::Cpp, Projection::Cpp) => {
            let (w, h) = (reference.width(), reference.height());
            let (ya, yb) = (reference.luma(), distorted.luma());
            let (mut sse, mut n) = (0.0, 0usize);
            for j in 0..h {
                for i in 0..w {
                    if sphere::cpp_pixel_valid(i, j, w, h) {
                        let d = ya.get(i, j) - yb.get(i, j);
                        sse += d * d;
                        n += 1;
                    }
                }
            }
            if n == 0 {
                return Err(Error::arg("CPP raster has no pixel inside the footprint"));
            }
            Ok(Psnr::from_mse(sse / n as f64))
        }
        (Projection::Erp, Projection::Erp) => {
            let (w, h) = cpp_dims.unwrap_or((reference.width(), reference.height()));
            let to_cpp = |img: &RasterImage| -> Result<RasterImage> {
                let luma = RasterImage::from_planes(vec![img.luma()], Projection::Erp)?;
                let r = sphere::reproject(&luma, Projection::Cpp, w, h)?;
                r.image.with_projection(Projection::Cpp)
            };
            cpp_psnr(&to_cpp(reference)?, &to_cpp(distorted)?, None)
        }
        _ => Err(Error::arg("CPP-PSNR needs two ERP or two CPP inputs")),
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" filtering: output is (w−10)×(h−10).
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM on luma over every valid 11×11 window position.
pub fn ssim(reference: &RasterImage, distorted: &RasterImage) -> Result<f64> {
    check_pair(reference, distorted)?;
    ssim_planes(&reference.luma(), &distorted.luma())
}

pub fn ssim_planes(a: &Plane, b: &Plane) -> Result<f64> {
    let (w, h) = (a.width(), a.height());
    if (w, h) != (b.width(), b.height()) {
        return Err(Error::arg("SSIM planes differ in size"));
    }
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::arg(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}")));
    }
    let k = gaussian_kernel();
    let (x, y) = (a.data(), b.data());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let [mx, my, sxx, syy, sxy] = [x, y, &xx[..], &yy[..], &xy[..]].map(|s| filter_valid(s, w, h, &k));
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

/// 1-based ranks, ties receive the average of the positions they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

fn tie_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for i in 1..=sorted.len() {
        if i < sorted.len() && sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total
}

/// Stable merge sort of `v`, returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall's τ_b in O(n log n) (Knight's algorithm).
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n0 = n * (n - 1) / 2;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tie_pairs(&xs);
    let mut n3 = 0u64;
    let mut run = 1u64;
    for i in 1..=pairs.len() {
        if i < pairs.len() && pairs[i] == pairs[i - 1] {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let swaps = merge_count(&mut ys, &mut buf);
    let n2 = tie_pairs(&ys);
    let num = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let den = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    if den == 0.0 {
        return f64::NAN;
    }
    num / den
}

/// Parameters of `f(x) = β2 + (β1 − β2) / (1 + exp(−(x − β3)/β4))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
}

impl LogisticParams {
    pub fn eval(&self, x: f64) -> f64 {
        self.beta2 + (self.beta1 - self.beta2) / (1.0 + (-(x - self.beta3) / self.beta4).exp())
    }

    fn as_array(&self) -> [f64; 4] {
        [self.beta1, self.beta2, self.beta3, self.beta4]
    }

    fn from_array(b: [f64; 4]) -> Self {
        Self {
            beta1: b[0],
            beta2: b[1],
            beta3: b[2],
            beta4: b[3],
        }
    }

    /// Partial derivatives with respect to β1..β4.
    fn gradient(&self, x: f64) -> [f64; 4] {
        let z = (x - self.beta3) / self.beta4;
        let s = 1.0 / (1.0 + (-z).exp());
        let ds = s * (1.0 - s);
        let d = self.beta1 - self.beta2;
        [s, 1.0 - s, -d * ds / self.beta4, -d * ds * z / self.beta4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub params: LogisticParams,
    pub sse: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const FIT_MAX_ITERATIONS: usize = 500;
pub const FIT_TOLERANCE: f64 = 1e-10;

/// Objective scores paired with DMOS, one entry per stimulus.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub scorer: String,
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub dmos: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(scorer: impl Into<String>, ids: Vec<String>, scores: Vec<f64>, dmos: Vec<f64>) -> Result<Self> {
        let scorer = scorer.into();
        if ids.len() != scores.len() || scores.len() != dmos.len() {
            return Err(Error::arg(format!("{scorer}: ids, scores and DMOS differ in length")));
        }
        if scores.iter().chain(&dmos).any(|v| !v.is_finite()) {
            return Err(Error::arg(format!("{scorer}: scores and DMOS must be finite")));
        }
        Ok(Self {
            scorer,
            ids,
            scores,
            dmos,
        })
    }

    /// Unnamed entries, ids are positional.
    pub fn from_pairs(scorer: impl Into<String>, scores: &[f64], dmos: &[f64]) -> Result<Self> {
        let ids = (0..scores.len()).map(|i| i.to_string()).collect();
        Self::new(scorer, ids, scores.to_vec(), dmos.to_vec())
    }

    /// Builds a series from PSNR values, dropping identical pairs.
    pub fn from_psnr(scorer: impl Into<String>, entries: Vec<(String, Psnr, f64)>) -> Result<Self> {
        let scorer = scorer.into();
        let total = entries.len();
        let kept: Vec<_> = entries.into_iter().filter_map(|(id, p, d)| p.finite().map(|v| (id, v, d))).collect();
        if kept.len() < total {
            info!("{scorer}: {} identical pair(s) excluded from fitting", total - kept.len());
        }
        let (ids, rest): (Vec<_>, Vec<_>) = kept.into_iter().map(|(i, s, d)| (i, (s, d))).unzip();
        let (scores, dmos) = rest.into_iter().unzip();
        Self::new(scorer, ids, scores, dmos)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn check_fittable(&self) -> Result<()> {
        if self.len() < 4 {
            return Err(Error::arg(format!(
                "{}: at least 4 score/DMOS pairs are needed, got {}",
                self.scorer,
                self.len()
            )));
        }
        let first = self.scores[0];
        if self.scores.iter().all(|&s| s == first) {
            return Err(Error::Degenerate(format!("scorer '{}' produced a constant score", self.scorer)));
        }
        Ok(())
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..4 {
            let f = a[r][col] / a[col][col];
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn sse_of(p: &LogisticParams, x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&xi, &yi)| (yi - p.eval(xi)).powi(2)).sum()
}

/// Levenberg–Marquardt fit of the 4-parameter logistic mapping score → DMOS.
pub fn fit_logistic(series: &ScoreSeries) -> Result<LogisticFit> {
    series.check_fittable()?;
    let (x, y) = (&series.scores, &series.dmos);
    let (smin, smax) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (dmin, dmax) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    // a decreasing relation is reached by a negative slope parameter
    let direction = if spearman(x, y) < 0.0 { -1.0 } else { 1.0 };
    let mut p = LogisticParams {
        beta1: dmax,
        beta2: dmin,
        beta3: median(x),
        beta4: direction * (smax - smin) / 4.0,
    };
    let mut sse = sse_of(&p, x, y);
    let mut lambda = 1e-3;
    let mut converged = sse == 0.0;
    let mut iterations = 0;
    while !converged && iterations < FIT_MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (&xi, &yi) in x.iter().zip(y) {
            let g = p.gradient(xi);
            let r = yi - p.eval(xi);
            for a in 0..4 {
                jtr[a] += g[a] * r;
                for b in 0..4 {
                    jtj[a][b] += g[a] * g[b];
                }
            }
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut m = jtj;
            for (a, row) in m.iter_mut().enumerate() {
                row[a] += lambda * jtj[a][a].max(1e-12);
            }
            if let Some(delta) = solve4(m, jtr) {
                let mut b = p.as_array();
                for k in 0..4 {
                    b[k] += delta[k];
                }
                let cand = LogisticParams::from_array(b);
                let cand_sse = sse_of(&cand, x, y);
                if cand.beta4 != 0.0 && cand_sse.is_finite() && cand_sse <= sse {
                    let rel = (sse - cand_sse) / sse.max(f64::MIN_POSITIVE);
                    p = cand;
                    sse = cand_sse;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    converged = rel < FIT_TOLERANCE || sse == 0.0;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no downhill step exists at any damping: a stationary point
            converged = true;
        }
    }
    Ok(LogisticFit {
        params: p,
        sse,
        iterations,
        converged,
    })
}

/// The five agreement statistics of one scorer against DMOS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub scorer: String,
    pub n: usize,
    pub plcc: f64,
    pub srocc: f64,
    pub krocc: f64,
    pub rmse: f64,
    pub mae: f64,
    pub logistic: LogisticParams,
    pub fit_converged: bool,
    pub fit_iterations: usize,
}

/// PLCC/RMSE/MAE after logistic mapping; SROCC/KROCC on raw scores.
pub fn correlation_report(series: &ScoreSeries) -> Result<CorrelationReport> {
    let fit = fit_logistic(series)?;
    let fitted: Vec<f64> = series.scores.iter().map(|&s| fit.params.eval(s)).collect();
    let n = series.len();
    let rmse = (fitted.iter().zip(&series.dmos).map(|(f, d)| (f - d).powi(2)).sum::<f64>() / n as f64).sqrt();
    let mae = fitted.iter().zip(&series.dmos).map(|(f, d)| (f - d).abs()).sum::<f64>() / n as f64;
    let mut plcc = pearson(&fitted, &series.dmos);
    if plcc.is_nan() {
        // flat fit or constant DMOS
        plcc = 0.0;
    }
    let nan0 = |v: f64| if v.is_nan() { 0.0 } else { v };
    Ok(CorrelationReport {
        scorer: series.scorer.clone(),
        n,
        plcc: plcc.clamp(-1.0, 1.0),
        srocc: nan0(spearman(&series.scores, &series.dmos)).clamp(-1.0, 1.0),
        krocc: nan0(kendall_tau_b(&series.scores, &series.dmos)).clamp(-1.0, 1.0),
        rmse,
        mae,
        logistic: fit.params,
        fit_converged: fit.converged,
        fit_iterations: fit.iterations,
    })
}

pub const REPORT_CSV_HEADER: [&str; 12] = [
    "scorer", "n", "plcc", "srocc", "krocc", "rmse", "mae", "beta1", "beta2", "beta3", "beta4", "fit_converged",
];

pub fn write_reports_csv(reports: &[CorrelationReport], w: impl Write) -> Result<()> {
    let ctx = |source| Error::Csv {
        context: "correlation report".into(),
        source,
    };
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_CSV_HEADER).map_err(ctx)?;
    for r in reports {
        out.write_record([
            r.scorer.clone(),
            r.n.to_string(),
            r.plcc.to_string(),
            r.srocc.to_string(),
            r.krocc.to_string(),
            r.rmse.to_string(),
            r.mae.to_string(),
            r.logistic.beta1.to_string(),
            r.logistic.beta2.to_string(),
            r.logistic.beta3.to_string(),
            r.logistic.beta4.to_string(),
            r.fit_converged.to_string(),
        ])
        .map_err(ctx)?;
    }
    out.flush().map_err(|e| Error::io("correlation report", e))
}

pub fn write_reports_json(reports: &[CorrelationReport], mut w: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, reports).map_err(|source| Error::Json {
        context: "correlation report".into(),
        source,
    })?;
    writeln!(w).map_err(|e| Error::io("correlation report", e))
}

/// Scatter rows `stimulus_id, objective, fitted, dmos` for one scorer.
pub fn write_scatter_csv(series: &ScoreSeries, params: &LogisticParams, w: impl Write) -> Result<()> {
    let ctx = |source| Error::Csv {
        context: format!("scatter data for {}", series.scorer),
        source,
    };
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["stimulus_id", "objective", "fitted", "dmos"]).map_err(ctx)?;
    for i in 0..series.len() {
        let s = series.scores[i];
        out.write_record([
            series.ids[i].clone(),
            s.to_string(),
            params.eval(s).to_string(),
            series.dmos[i].to_string(),
        ])
        .map_err(ctx)?;
    }
    out.flush().map_err(|e| Error::io("scatter data", e))
}
