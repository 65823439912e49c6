//! JSON-lines trial records.
//!
//! One object per line with the fields `trial_id, format, workload, site,
//! orig_hex, fault_hex, re_sum, re_sum_prime, diff, guard, outcome,
//! metric_delta`. Finite floats use the shortest round-trip decimal;
//! non-finite values are written as the strings `"NaN"`, `"inf"` and
//! `"-inf"`.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::FaultSite;
use crate::fp_codec::FpFormat;
use crate::guard::GuardKind;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "SDC")]
    Sdc,
    Benign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardRecord {
    pub kind: GuardKind,
    pub detected: bool,
    pub exp_before: u32,
    pub exp_after: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub format: FpFormat,
    pub workload: String,
    pub site: FaultSite,
    pub orig_hex: String,
    pub fault_hex: String,
    #[serde(with = "json_f32")]
    pub re_sum: f32,
    #[serde(with = "json_f32")]
    pub re_sum_prime: f32,
    #[serde(with = "json_f64")]
    pub diff: f64,
    pub guard: GuardRecord,
    pub outcome: Outcome,
    pub metric_delta: Option<f64>,
}

impl TrialRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[TrialRecord]) -> io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    out.flush()
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<TrialRecord>, RecordError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|source| RecordError::Parse { line: i + 1, source })?;
        records.push(r);
    }
    Ok(records)
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum JsonFloat {
    Number(f64),
    Special(String),
}

fn special_name(v: f64) -> &'static str {
    if v.is_nan() {
        "NaN"
    } else if v > 0.0 {
        "inf"
    } else {
        "-inf"
    }
}

fn parse_special<E: serde::de::Error>(s: &str) -> Result<f64, E> {
    match s {
        "NaN" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        other => Err(E::custom(format!("invalid float `{other}`"))),
    }
}

pub(crate) mod json_f64 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(special_name(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match JsonFloat::deserialize(d)? {
            JsonFloat::Number(v) => Ok(v),
            JsonFloat::Special(s) => parse_special(&s),
        }
    }
}

pub(crate) mod json_f32 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f32, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f32(*v)
        } else {
            s.serialize_str(special_name(*v as f64))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f32, D::Error> {
        super::json_f64::deserialize(d).map(|v| v as f32)
    }
}
