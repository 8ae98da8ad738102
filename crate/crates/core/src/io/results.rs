//! Ground-truth files, line-delimited JSON results and recall summary
//! tables.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{recall, PoseRecord, VSDParams};

/// Ground truth of one annotated target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub object_id: String,
    pub pose: PoseRecord,
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

pub fn save_ground_truth(path: impl AsRef<Path>, gt: &GroundTruth) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(gt)? + "\n")?;
    Ok(())
}

#[derive(Deserialize)]
struct SixdEntry {
    cam_r_m2c: [f64; 9],
    cam_t_m2c: [f64; 3],
    obj_id: u64,
}

/// Reads a SIXD-style `gt.yml` (image id → list of `cam_R_m2c`,
/// `cam_t_m2c`, `obj_id`). Object ids become their decimal string.
pub fn parse_sixd_gt(text: &str) -> Result<BTreeMap<u64, Vec<GroundTruth>>> {
    let lowered = text.replace("cam_R_m2c", "cam_r_m2c");
    let raw: BTreeMap<u64, Vec<SixdEntry>> =
        serde_yaml::from_str(&lowered).map_err(|e| Error::InvalidParam(format!("gt.yml: {e}")))?;
    Ok(raw
        .into_iter()
        .map(|(k, v)| {
            let gts = v
                .into_iter()
                .map(|e| GroundTruth {
                    object_id: e.obj_id.to_string(),
                    pose: PoseRecord {
                        r: e.cam_r_m2c,
                        t: e.cam_t_m2c,
                    },
                })
                .collect();
            (k, gts)
        })
        .collect())
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub scene_id: String,
    pub object_id: String,
    /// `None` when nothing was detected.
    pub pose: Option<PoseRecord>,
    pub score: Option<f64>,
    pub votes: Option<u32>,
    #[serde(default)]
    pub vsd_error: Option<f64>,
    #[serde(default)]
    pub correct: Option<bool>,
}

/// Writes a metadata line `{"metadata": …}` followed by one JSON object per
/// record.
pub fn write_results(
    w: &mut impl Write,
    metadata: &serde_json::Value,
    records: &[ResultRecord],
) -> Result<()> {
    serde_json::to_writer(&mut *w, &serde_json::json!({ "metadata": metadata }))?;
    writeln!(w)?;
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Parsed results file: the last metadata block seen and every record.
pub fn read_results(r: impl BufRead) -> Result<(Option<serde_json::Value>, Vec<ResultRecord>)> {
    let mut meta = None;
    let mut records = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut v: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidParam(format!("results line {}: {e}", n + 1)))?;
        if let Some(m) = v.get_mut("metadata") {
            meta = Some(m.take());
        } else {
            records.push(
                serde_json::from_value(v)
                    .map_err(|e| Error::InvalidParam(format!("results line {}: {e}", n + 1)))?,
            );
        }
    }
    Ok((meta, records))
}

pub fn load_results(path: impl AsRef<Path>) -> Result<(Option<serde_json::Value>, Vec<ResultRecord>)> {
    read_results(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub object_id: String,
    pub targets: usize,
    pub correct: usize,
    pub recall: f64,
}

/// Per-object recall rows sorted by object id, then an `average` row with
/// the mean of the per-object recalls. Records without a VSD error count
/// as incorrect.
pub fn summarize(records: &[ResultRecord], p: &VSDParams) -> Result<Vec<SummaryRow>> {
    let mut by_obj: BTreeMap<&str, Vec<Option<f64>>> = BTreeMap::new();
    for r in records {
        let e = r.pose.and(r.vsd_error);
        by_obj.entry(&r.object_id).or_default().push(e);
    }
    if by_obj.is_empty() {
        return Err(Error::InvalidParam("no results to summarize".into()));
    }
    let mut rows = Vec::new();
    for (obj, errs) in by_obj {
        let rec = recall(&errs, p)?;
        rows.push(SummaryRow {
            object_id: obj.to_string(),
            targets: errs.len(),
            correct: (rec * errs.len() as f64).round() as usize,
            recall: rec,
        });
    }
    let n = rows.len() as f64;
    rows.push(SummaryRow {
        object_id: "average".into(),
        targets: rows.iter().map(|r| r.targets).sum(),
        correct: rows.iter().map(|r| r.correct).sum(),
        recall: rows.iter().map(|r| r.recall).sum::<f64>() / n,
    });
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("object,targets,correct,recall\n");
    for r in rows {
        s += &format!("{},{},{},{:.4}\n", r.object_id, r.targets, r.correct, r.recall);
    }
    s
}

pub fn summary_text(rows: &[SummaryRow]) -> String {
    let width = rows.iter().map(|r| r.object_id.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:<width$}  {:>7}  {:>7}  {:>6}\n", "object", "targets", "correct", "recall");
    for r in rows {
        s += &format!(
            "{:<width$}  {:>7}  {:>7}  {:>6.3}\n",
            r.object_id, r.targets, r.correct, r.recall
        );
    }
    s
}
