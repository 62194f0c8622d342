//! Clothing-insulation label remapping and reproducible train/test splits.
//!
//! Manifest files are UTF-8 text, one entry per line:
//! `image_path<TAB>source_label<TAB>clo_class_id`. Blank lines and lines
//! starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Add;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permkey::{Permutation, StreamSeed};

/// Four clothing categories ordered by increasing insulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum CloCategory {
    Sleeveless = 0,
    ShortSleeveShirt = 1,
    LongSleeveShirt = 2,
    Outerwear = 3,
}

impl CloCategory {
    pub const ALL: [CloCategory; 4] = [
        CloCategory::Sleeveless,
        CloCategory::ShortSleeveShirt,
        CloCategory::LongSleeveShirt,
        CloCategory::Outerwear,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Config(format!("clo class id must be 0..=3, got {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            CloCategory::Sleeveless => "sleeveless",
            CloCategory::ShortSleeveShirt => "short-sleeve shirt",
            CloCategory::LongSleeveShirt => "long-sleeve shirt",
            CloCategory::Outerwear => "outerwear",
        }
    }
}

impl TryFrom<u8> for CloCategory {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        Self::from_id(id)
    }
}

impl From<CloCategory> for u8 {
    fn from(c: CloCategory) -> u8 {
        c.id()
    }
}

impl fmt::Display for CloCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Optional user-supplied clo values, one per category.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CloValues([Option<f64>; 4]);

impl CloValues {
    pub fn new(values: [Option<f64>; 4]) -> Result<Self> {
        if let Some(v) = values.iter().flatten().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Config(format!("clo value must be positive, got {v}")));
        }
        Ok(CloValues(values))
    }

    pub fn get(&self, c: CloCategory) -> Option<f64> {
        self.0[c as usize]
    }
}

/// An image with its original dataset label, before remapping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImage {
    pub image_path: String,
    pub source_label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ManifestEntry {
    pub image_path: String,
    pub source_label: String,
    pub clo_class: CloCategory,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingRule {
    pub pattern: String,
    pub clo_class: CloCategory,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UnmatchedPolicy {
    #[default]
    Error,
    Skip,
}

impl FromStr for UnmatchedPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(UnmatchedPolicy::Error),
            "skip" => Ok(UnmatchedPolicy::Skip),
            other => Err(Error::Config(format!("unknown unmatched policy `{other}`"))),
        }
    }
}

/// Ordered label rules; a rule matches when its pattern occurs as a
/// substring of the source label, and the first matching rule wins.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MappingTable {
    rules: Vec<MappingRule>,
    pub unmatched: UnmatchedPolicy,
}

impl MappingTable {
    pub fn new(rules: Vec<MappingRule>, unmatched: UnmatchedPolicy) -> Result<Self> {
        if let Some(i) = rules.iter().position(|r| r.pattern.is_empty()) {
            return Err(Error::Config(format!("mapping rule {i} has an empty pattern")));
        }
        Ok(MappingTable { rules, unmatched })
    }

    /// Parses the JSON list `[{"pattern": .., "clo_class": ..}, ..]`.
    pub fn from_json(text: &str, unmatched: UnmatchedPolicy) -> Result<Self> {
        let rules: Vec<MappingRule> = serde_json::from_str(text)?;
        Self::new(rules, unmatched)
    }

    /// Best-effort mapping for DeepFashion in-shop category names.
    pub fn deepfashion_default(unmatched: UnmatchedPolicy) -> Self {
        Self::from_json(DEFAULT_MAPPING_JSON, unmatched).expect("bundled mapping is valid")
    }

    pub fn rules(&self) -> &[MappingRule] {
        &self.rules
    }

    pub fn classify(&self, label: &str) -> Option<CloCategory> {
        self.rules
            .iter()
            .find(|r| label.contains(r.pattern.as_str()))
            .map(|r| r.clo_class)
    }
}

pub const DEFAULT_MAPPING_JSON: &str = include_str!("../data/deepfashion_clo_mapping.json");

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RemapReport {
    pub manifest: Vec<ManifestEntry>,
    /// Unmatched source labels and how often each was skipped.
    pub skipped: BTreeMap<String, usize>,
}

impl RemapReport {
    pub fn skipped_total(&self) -> usize {
        self.skipped.values().sum()
    }
}

pub fn remap_labels(entries: &[LabeledImage], table: &MappingTable) -> Result<RemapReport> {
    let mut report = RemapReport::default();
    for e in entries {
        match table.classify(&e.source_label) {
            Some(clo_class) => report.manifest.push(ManifestEntry {
                image_path: e.image_path.clone(),
                source_label: e.source_label.clone(),
                clo_class,
            }),
            None if table.unmatched == UnmatchedPolicy::Skip => {
                *report.skipped.entry(e.source_label.clone()).or_default() += 1;
            }
            None => return Err(Error::UnmatchedLabel(e.source_label.clone())),
        }
    }
    Ok(report)
}

/// Shuffles with a seeded permutation and puts the first
/// `floor(n * train_fraction)` entries in the training set.
pub fn split(
    manifest: &[ManifestEntry],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    if manifest.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let n = manifest.len();
    let order = Permutation::generate(StreamSeed(seed), n)?;
    let mut shuffled = order.apply(manifest)?;
    let n_train = (n as f64 * train_fraction).floor() as usize;
    let test = shuffled.split_off(n_train);
    Ok((shuffled, test))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Summary {
    pub counts: [usize; 4],
}

impl Summary {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn count(&self, c: CloCategory) -> usize {
        self.counts[c as usize]
    }

    pub fn percentage(&self, c: CloCategory) -> f64 {
        match self.total() {
            0 => 0.0,
            t => 100.0 * self.count(c) as f64 / t as f64,
        }
    }
}

impl Add for Summary {
    type Output = Summary;

    fn add(self, rhs: Summary) -> Summary {
        let mut counts = self.counts;
        for (a, b) in counts.iter_mut().zip(rhs.counts) {
            *a += b;
        }
        Summary { counts }
    }
}

pub fn summarize(manifest: &[ManifestEntry]) -> Summary {
    let mut s = Summary::default();
    for e in manifest {
        s.counts[e.clo_class as usize] += 1;
    }
    s
}

/// Published per-class image counts for the DeepFashion clo categories.
pub const REFERENCE_CLASS_COUNTS: [usize; 4] = [11_033, 8_176, 4_218, 3_586];

/// Published dataset total. It is 126 lower than the sum of
/// [`REFERENCE_CLASS_COUNTS`]; both figures are reported unchanged.
pub const REFERENCE_STATED_TOTAL: usize = 26_887;

/// Human-readable summary table followed by the reference comparison.
pub fn render_summary(summary: &Summary, clo: &CloValues) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "{:<3} {:<20} {:>8} {:>8} {:>10} {:>6}", "id", "category", "count", "percent", "reference", "clo");
    for c in CloCategory::ALL {
        let clo_text = clo.get(c).map(|v| format!("{v}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<3} {:<20} {:>8} {:>7.2}% {:>10} {:>6}",
            c.id(),
            c.name(),
            summary.count(c),
            summary.percentage(c),
            REFERENCE_CLASS_COUNTS[c as usize],
            clo_text
        );
    }
    let reference_sum: usize = REFERENCE_CLASS_COUNTS.iter().sum();
    let _ = writeln!(out, "total: {}", summary.total());
    let _ = writeln!(
        out,
        "reference: per-class counts sum to {reference_sum}, stated total is {REFERENCE_STATED_TOTAL} (discrepancy {})",
        reference_sum as i64 - REFERENCE_STATED_TOTAL as i64
    );
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    content_lines(text)
        .map(|(line, raw)| {
            let fields: Vec<&str> = raw.split('\t').collect();
            let [path, label, class] = fields[..] else {
                return Err(Error::Manifest {
                    line,
                    reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            };
            let id: u8 = class.trim().parse().map_err(|_| Error::Manifest {
                line,
                reason: format!("clo class `{class}` is not an integer"),
            })?;
            let clo_class = CloCategory::from_id(id).map_err(|e| Error::Manifest {
                line,
                reason: e.to_string(),
            })?;
            Ok(ManifestEntry {
                image_path: non_empty_path(path, line)?,
                source_label: label.to_string(),
                clo_class,
            })
        })
        .collect()
}

/// Parses `image_path<TAB>source_label[<TAB>anything]` lines.
pub fn parse_labeled(text: &str) -> Result<Vec<LabeledImage>> {
    content_lines(text)
        .map(|(line, raw)| {
            let mut fields = raw.split('\t');
            let path = fields.next().unwrap_or_default();
            let label = fields.next().ok_or_else(|| Error::Manifest {
                line,
                reason: "missing source label column".into(),
            })?;
            Ok(LabeledImage {
                image_path: non_empty_path(path, line)?,
                source_label: label.to_string(),
            })
        })
        .collect()
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::with_capacity(entries.len() * 48);
    for e in entries {
        out.push_str(&e.image_path);
        out.push('\t');
        out.push_str(&e.source_label);
        out.push('\t');
        out.push_str(&e.clo_class.id().to_string());
        out.push('\n');
    }
    out
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn non_empty_path(path: &str, line: usize) -> Result<String> {
    if path.is_empty() {
        return Err(Error::Manifest {
            line,
            reason: "empty image path".into(),
        });
    }
    Ok(path.to_string())
}
