//! Review corpora: JSON-lines records, temporal and seasonal splits,
//! nested subsampling and tokenisation.

use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus_synth::Corpus;
use crate::error::{Error, Result};
use crate::fsio;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub text: String,
    /// ISO-8601 date (`YYYY-MM-DD`); a trailing time component is accepted and ignored.
    pub date: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<serde_json::Value>,
}

impl ReviewRecord {
    pub fn parsed_date(&self) -> Result<NaiveDate> {
        let head = self.date.get(..10).unwrap_or(&self.date);
        NaiveDate::parse_from_str(head, "%Y-%m-%d").map_err(|e| Error::Data(format!("bad date {:?}: {e}", self.date)))
    }

    /// Label rendered as a class name (`"5"`, `"positive"`), if any.
    pub fn label_name(&self) -> Option<String> {
        match self.label.as_ref()? {
            serde_json::Value::String(s) => Some(s.clone()),
            serde_json::Value::Null => None,
            other => Some(other.to_string()),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Data("record with empty text".into()));
        }
        self.parsed_date().map(|_| ())
    }
}

/// Parses one record per non-blank line.
pub fn parse_records(text: &str, path: &Path) -> Result<Vec<ReviewRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: ReviewRecord =
                serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            rec.validate()
                .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
            Ok(rec)
        })
        .collect()
}

pub fn load_records(path: &Path) -> Result<Vec<ReviewRecord>> {
    parse_records(&fsio::read_to_string(path)?, path)
}

pub fn records_to_jsonl(records: &[ReviewRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn nonempty_sides(
    a: Vec<ReviewRecord>,
    b: Vec<ReviewRecord>,
    what: &str,
) -> Result<(Vec<ReviewRecord>, Vec<ReviewRecord>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Split(format!(
            "{what} split leaves a side empty ({} / {} records)",
            a.len(),
            b.len()
        )));
    }
    Ok((a, b))
}

/// Records strictly before `boundary`, and on or after it, in input order.
pub fn split_by_time(records: &[ReviewRecord], boundary: NaiveDate) -> Result<(Vec<ReviewRecord>, Vec<ReviewRecord>)> {
    let mut before = Vec::new();
    let mut after = Vec::new();
    for r in records {
        if r.parsed_date()? < boundary {
            before.push(r.clone());
        } else {
            after.push(r.clone());
        }
    }
    nonempty_sides(before, after, "time")
}

pub const SUMMER_MONTHS: [u32; 3] = [6, 7, 8];
pub const WINTER_MONTHS: [u32; 3] = [12, 1, 2];

/// Summer (June to August) and winter (December to February) records; other months are dropped.
pub fn split_by_season(records: &[ReviewRecord]) -> Result<(Vec<ReviewRecord>, Vec<ReviewRecord>)> {
    let mut summer = Vec::new();
    let mut winter = Vec::new();
    for r in records {
        let month = r.parsed_date()?.month();
        if SUMMER_MONTHS.contains(&month) {
            summer.push(r.clone());
        } else if WINTER_MONTHS.contains(&month) {
            winter.push(r.clone());
        }
    }
    nonempty_sides(summer, winter, "season")
}

/// `round(pct·n)` items drawn without replacement. The draw is a prefix of
/// one seeded shuffle, so smaller percentages are subsets of larger ones; the
/// kept items stay in input order.
pub fn subsample<T: Clone>(items: &[T], pct: f64, seed: u64) -> Result<Vec<T>> {
    if !(0.0..=1.0).contains(&pct) {
        return Err(Error::InvalidConfig(format!("subsample fraction {pct} outside [0, 1]")));
    }
    let take = (pct * items.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, "subsample", 0)));
    let mut kept = order[..take].to_vec();
    kept.sort_unstable();
    Ok(kept.into_iter().map(|i| items[i].clone()).collect())
}

/// Lowercased alphanumeric runs.
pub fn tokenize_text(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// One line per review; reviews without tokens are skipped.
pub fn tokenize(records: &[ReviewRecord]) -> Corpus {
    Corpus::from_lines(
        records
            .iter()
            .map(|r| tokenize_text(&r.text))
            .filter(|t| !t.is_empty())
            .collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Time { boundary: NaiveDate },
    Season,
}

/// The three record sets of one real-data drift instance.
#[derive(Clone, Debug)]
pub struct DriftSplit {
    pub d1: Vec<ReviewRecord>,
    pub d2: Vec<ReviewRecord>,
    pub d2_small: Vec<ReviewRecord>,
}

pub fn split_records(records: &[ReviewRecord], mode: SplitMode, small_pct: f64, seed: u64) -> Result<DriftSplit> {
    if records.is_empty() {
        return Err(Error::Split("no records".into()));
    }
    let (d1, d2) = match mode {
        SplitMode::Time { boundary } => split_by_time(records, boundary)?,
        SplitMode::Season => split_by_season(records)?,
    };
    let d2_small = subsample(&d2, small_pct, seed)?;
    Ok(DriftSplit { d1, d2, d2_small })
}
