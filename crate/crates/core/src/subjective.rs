//! Raw opinion scores to MOS/DMOS, and boxplot statistics per impairment group.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, ImpairmentMode};
use crate::error::{Error, Result};

/// How DMOS is derived, recorded alongside every emitted table.
pub const DMOS_METHOD: &str =
    "per-subject difference (reference - impaired), averaged over subjects, clamped to [0, 100]; no z-scoring";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectiveRecord {
    pub subject_id: String,
    pub stimulus_id: String,
    pub score: f64,
}

/// Reads `subject_id,stimulus_id,score` rows and checks the score scale and
/// the one-score-per-(subject, stimulus) rule.
pub fn read_scores_csv(reader: impl Read, context: &str) -> Result<Vec<SubjectiveRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let records = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<SubjectiveRecord>, _>>()
        .map_err(|source| Error::Csv {
            context: context.to_string(),
            source,
        })?;
    validate_records(&records)?;
    Ok(records)
}

pub fn validate_records(records: &[SubjectiveRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !(0.0..=100.0).contains(&r.score) {
            return Err(Error::arg(format!(
                "score {} by '{}' for '{}' is outside [0, 100]",
                r.score, r.subject_id, r.stimulus_id
            )));
        }
        if !seen.insert((&r.subject_id, &r.stimulus_id)) {
            return Err(Error::arg(format!(
                "subject '{}' scored '{}' more than once",
                r.subject_id, r.stimulus_id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosEntry {
    pub mos: f64,
    pub n_subjects: usize,
}

/// Scores grouped as stimulus → subject → score.
fn by_stimulus(records: &[SubjectiveRecord]) -> BTreeMap<&str, BTreeMap<&str, f64>> {
    let mut m: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for r in records {
        m.entry(&r.stimulus_id).or_default().insert(&r.subject_id, r.score);
    }
    m
}

/// Mean opinion score per stimulus. Stimuli with fewer than two scores are
/// dropped with a warning.
pub fn compute_mos(records: &[SubjectiveRecord]) -> Result<BTreeMap<String, MosEntry>> {
    validate_records(records)?;
    let mut out = BTreeMap::new();
    for (stim, scores) in by_stimulus(records) {
        if scores.len() < 2 {
            warn!("stimulus '{stim}' has {} score(s); excluded", scores.len());
            continue;
        }
        out.insert(
            stim.to_string(),
            MosEntry {
                mos: scores.values().sum::<f64>() / scores.len() as f64,
                n_subjects: scores.len(),
            },
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosRow {
    pub stimulus_id: String,
    pub mos: f64,
    pub dmos: f64,
    pub n_subjects: usize,
    pub is_reference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosTable {
    pub method: String,
    pub rows: Vec<MosRow>,
}

impl MosTable {
    pub fn get(&self, stimulus_id: &str) -> Option<&MosRow> {
        self.rows.iter().find(|r| r.stimulus_id == stimulus_id)
    }

    /// DMOS of the impaired stimuli, keyed by stimulus id.
    pub fn dmos_map(&self) -> BTreeMap<String, f64> {
        self.rows
            .iter()
            .filter(|r| !r.is_reference)
            .map(|r| (r.stimulus_id.clone(), r.dmos))
            .collect()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r).map_err(|source| Error::Csv {
                context: "MOS table".into(),
                source,
            })?;
        }
        out.flush().map_err(|e| Error::io("MOS table", e))
    }
}

/// DMOS from raw scores. `reference_of` maps each impaired stimulus to its
/// reference stimulus; references score DMOS 0 by definition.
pub fn compute_dmos(records: &[SubjectiveRecord], reference_of: &BTreeMap<String, String>) -> Result<MosTable> {
    let mos = compute_mos(records)?;
    let scores = by_stimulus(records);
    let references: BTreeSet<&str> = reference_of.values().map(String::as_str).collect();

    let mut missing = Vec::new();
    let mut rows = Vec::new();
    for (stim, entry) in &mos {
        if references.contains(stim.as_str()) {
            rows.push(MosRow {
                stimulus_id: stim.clone(),
                mos: entry.mos,
                dmos: 0.0,
                n_subjects: entry.n_subjects,
                is_reference: true,
            });
            continue;
        }
        let Some(reference) = reference_of.get(stim) else {
            missing.push(format!("{stim} (no reference assigned)"));
            continue;
        };
        let Some(ref_scores) = scores.get(reference.as_str()) else {
            missing.push(format!("{stim} (reference '{reference}' unscored)"));
            continue;
        };
        let diffs: Vec<f64> = scores[stim.as_str()]
            .iter()
            .filter_map(|(subject, s)| ref_scores.get(subject).map(|r| r - s))
            .collect();
        if diffs.is_empty() {
            missing.push(format!("{stim} (no subject scored both it and '{reference}')"));
            continue;
        }
        let d = diffs.iter().sum::<f64>() / diffs.len() as f64;
        rows.push(MosRow {
            stimulus_id: stim.clone(),
            mos: entry.mos,
            dmos: d.clamp(0.0, 100.0),
            n_subjects: entry.n_subjects,
            is_reference: false,
        });
    }
    if !missing.is_empty() {
        return Err(Error::arg(format!("missing reference scores for: {}", missing.join(", "))));
    }
    Ok(MosTable {
        method: DMOS_METHOD.to_string(),
        rows,
    })
}

/// Impaired stimulus → reference stimulus, where a reference is scored under
/// its `source_id`.
pub fn reference_map(manifest: &DatasetManifest) -> BTreeMap<String, String> {
    manifest
        .records
        .iter()
        .map(|r| (r.stimulus_id.clone(), r.source_id.clone()))
        .collect()
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub group: String,
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Most extreme observations within 1.5·IQR of the box.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Tukey boxplot statistics; `None` for an empty sample.
pub fn box_stats(group: &str, values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.75));
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|x| (lo..=hi).contains(x)).collect();
    Some(BoxStats {
        group: group.to_string(),
        n: v.len(),
        median,
        q1,
        q3,
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        outliers: v.into_iter().filter(|x| !(lo..=hi).contains(x)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Grouping {
    /// JPEG-only stimuli grouped by quality factor.
    ByQf,
    /// Projection stimuli grouped by projection.
    ByProjection,
}

impl std::str::FromStr for Grouping {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "BY_QF" | "QF" => Ok(Grouping::ByQf),
            "BY_PROJECTION" | "PROJECTION" => Ok(Grouping::ByProjection),
            _ => Err(Error::arg(format!("unknown grouping '{s}'"))),
        }
    }
}

/// Boxplot statistics of DMOS per group, in ascending group order. Groups
/// without any DMOS are omitted with a warning.
pub fn boxplot_stats(dmos: &BTreeMap<String, f64>, manifest: &DatasetManifest, grouping: Grouping) -> Vec<BoxStats> {
    let mut groups: BTreeMap<(u32, String), Vec<f64>> = BTreeMap::new();
    for r in &manifest.records {
        let key = match (grouping, r.mode) {
            (Grouping::ByQf, ImpairmentMode::JpegOnly) => (r.qf, format!("q{}", r.qf)),
            (Grouping::ByProjection, ImpairmentMode::Projection) => (0, r.projection.to_string()),
            _ => continue,
        };
        let entry = groups.entry(key).or_default();
        if let Some(&d) = dmos.get(&r.stimulus_id) {
            entry.push(d);
        }
    }
    groups
        .into_iter()
        .filter_map(|((_, name), values)| {
            let stats = box_stats(&name, &values);
            if stats.is_none() {
                warn!("group {name} has no DMOS values; omitted");
            }
            stats
        })
        .collect()
}

pub fn write_boxplot_csv(stats: &[BoxStats], w: impl Write) -> Result<()> {
    let ctx = |source| Error::Csv {
        context: "boxplot statistics".into(),
        source,
    };
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["group", "n", "median", "q1", "q3", "whisker_low", "whisker_high", "outliers"])
        .map_err(ctx)?;
    for s in stats {
        let outliers: Vec<String> = s.outliers.iter().map(f64::to_string).collect();
        out.write_record([
            s.group.clone(),
            s.n.to_string(),
            s.median.to_string(),
            s.q1.to_string(),
            s.q3.to_string(),
            s.whisker_low.to_string(),
            s.whisker_high.to_string(),
            outliers.join(";"),
        ])
        .map_err(ctx)?;
    }
    out.flush().map_err(|e| Error::io("boxplot statistics", e))
}
