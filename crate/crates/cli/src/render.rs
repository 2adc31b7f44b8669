//! Minimal SVG rendering of the plot CSVs: scatter with fitted logistic,
//! boxplots and coefficient histograms.

use std::fmt::Write;

use panoqa_core::metrics::{LogisticParams, ScoreSeries};
use panoqa_core::subjective::BoxStats;
use panoqa_core::wavelet::{Band, Histogram};

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Linear map from a data box onto a pixel box with y pointing up.
struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn new(x0: f64, y0: f64, w: f64, h: f64, xr: (f64, f64), yr: (f64, f64)) -> Self {
        let pad = |(a, b): (f64, f64)| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        Self {
            x0,
            y0,
            w,
            h,
            xr: pad(xr),
            yr: pad(yr),
        }
    }

    fn x(&self, v: f64) -> f64 {
        self.x0 + (v - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    fn y(&self, v: f64) -> f64 {
        self.y0 + self.h - (v - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }

    fn axes(&self, svg: &mut String, xlabel: &str, ylabel: &str) {
        let (l, r, t, b) = (self.x0, self.x0 + self.w, self.y0, self.y0 + self.h);
        let _ = write!(
            svg,
            r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            self.w, self.h
        );
        for (v, anchor, x, y) in [
            (self.xr.0, "start", l, b + 14.0),
            (self.xr.1, "end", r, b + 14.0),
        ] {
            let _ = write!(svg, r#"<text x="{x}" y="{y}" font-size="10" text-anchor="{anchor}">{v:.3}</text>"#);
        }
        for (v, y) in [(self.yr.0, b), (self.yr.1, t + 10.0)] {
            let _ = write!(
                svg,
                r#"<text x="{}" y="{y}" font-size="10" text-anchor="end">{v:.2}</text>"#,
                l - 4.0
            );
        }
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            l + self.w / 2.0,
            b + 30.0,
            escape(xlabel)
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 {} {})">{}</text>"#,
            l - 30.0,
            t + self.h / 2.0,
            l - 30.0,
            t + self.h / 2.0,
            escape(ylabel)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(width: f64, height: f64, title: &str) -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif"><rect width="100%" height="100%" fill="white"/><text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
        width / 2.0,
        escape(title)
    )
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Objective score vs DMOS with the fitted logistic curve.
pub fn scatter_svg(series: &ScoreSeries, params: &LogisticParams) -> String {
    let xr = range(series.scores.iter().copied());
    let fitted = (0..=100).map(|i| {
        let x = xr.0 + (xr.1 - xr.0) * i as f64 / 100.0;
        (x, params.eval(x))
    });
    let curve: Vec<(f64, f64)> = fitted.collect();
    let yr = range(series.dmos.iter().copied().chain(curve.iter().map(|p| p.1)));
    let f = Frame::new(MARGIN + 10.0, 32.0, W - 2.0 * MARGIN, H - 32.0 - MARGIN, xr, yr);
    let mut svg = open(W, H, &format!("{} vs DMOS", series.scorer));
    f.axes(&mut svg, &series.scorer, "DMOS");
    for (s, d) in series.scores.iter().zip(&series.dmos) {
        let _ = write!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.6"/>"#,
            f.x(*s),
            f.y(*d),
            PALETTE[0]
        );
    }
    let pts: Vec<String> = curve
        .iter()
        .filter(|p| p.1.is_finite())
        .map(|&(x, y)| format!("{:.2},{:.2}", f.x(x), f.y(y)))
        .collect();
    let _ = write!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
        pts.join(" "),
        PALETTE[1]
    );
    svg.push_str("</svg>\n");
    svg
}

/// One Tukey box per group.
pub fn boxplot_svg(title: &str, stats: &[BoxStats]) -> String {
    let yr = range(
        stats
            .iter()
            .flat_map(|s| [s.whisker_low, s.whisker_high].into_iter().chain(s.outliers.iter().copied())),
    );
    let n = stats.len().max(1) as f64;
    let f = Frame::new(MARGIN + 10.0, 32.0, W - 2.0 * MARGIN, H - 32.0 - MARGIN, (0.0, n), yr);
    let mut svg = open(W, H, title);
    f.axes(&mut svg, "", "DMOS");
    for (i, s) in stats.iter().enumerate() {
        let cx = f.x(i as f64 + 0.5);
        let half = 0.3 * f.w / n;
        let (q1, q3, med) = (f.y(s.q1), f.y(s.q3), f.y(s.median));
        let _ = write!(
            svg,
            r##"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="#444"/>"##,
            f.y(s.whisker_low),
            f.y(s.whisker_high)
        );
        let _ = write!(
            svg,
            r##"<rect x="{:.2}" y="{q3:.2}" width="{:.2}" height="{:.2}" fill="{}" fill-opacity="0.5" stroke="#444"/>"##,
            cx - half,
            2.0 * half,
            (q1 - q3).max(0.5),
            PALETTE[i % PALETTE.len()]
        );
        let _ = write!(
            svg,
            r##"<line x1="{:.2}" y1="{med:.2}" x2="{:.2}" y2="{med:.2}" stroke="#000" stroke-width="2"/>"##,
            cx - half,
            cx + half
        );
        for o in &s.outliers {
            let _ = write!(svg, r##"<circle cx="{cx:.2}" cy="{:.2}" r="2" fill="none" stroke="#444"/>"##, f.y(*o));
        }
        let _ = write!(
            svg,
            r#"<text x="{cx:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            f.y0 + f.h + 14.0,
            escape(&s.group)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// 2×2 grid of per-band histograms, one polyline per series, log-scaled counts.
pub fn histograms_svg(histograms: &[Histogram]) -> String {
    let (cw, ch) = (W, H);
    let mut svg = open(2.0 * cw, 2.0 * ch, "Wavelet coefficient histograms");
    let mut series: Vec<&str> = histograms.iter().map(|h| h.series.as_str()).collect();
    series.dedup();
    series.sort_unstable();
    series.dedup();
    for (bi, band) in Band::ALL.iter().enumerate() {
        let hs: Vec<&Histogram> = histograms.iter().filter(|h| h.band == *band).collect();
        if hs.is_empty() {
            continue;
        }
        let xr = range(hs.iter().flat_map(|h| h.bin_centers.iter().copied()));
        let yr = (0.0, range(hs.iter().flat_map(|h| h.counts.iter().map(|&c| (c as f64).ln_1p()))).1);
        let (ox, oy) = ((bi % 2) as f64 * cw, (bi / 2) as f64 * ch);
        let f = Frame::new(ox + MARGIN + 10.0, oy + 40.0, cw - 2.0 * MARGIN, ch - 40.0 - MARGIN, xr, yr);
        f.axes(&mut svg, band.name(), "ln(1 + count)");
        for h in hs {
            let color = PALETTE[series.iter().position(|s| *s == h.series).unwrap_or(0) % PALETTE.len()];
            let pts: Vec<String> = h
                .bin_centers
                .iter()
                .zip(&h.counts)
                .map(|(x, &c)| format!("{:.2},{:.2}", f.x(*x), f.y((c as f64).ln_1p())))
                .collect();
            let _ = write!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#,
                pts.join(" ")
            );
        }
    }
    for (i, s) in series.iter().enumerate() {
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" fill="{}">{}</text>"#,
            2.0 * cw - 90.0,
            40.0 + 14.0 * i as f64,
            PALETTE[i % PALETTE.len()],
            escape(s)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
