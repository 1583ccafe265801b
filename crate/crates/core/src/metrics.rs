//! Pose evaluation: location and angular errors, the challenge score and
//! distance-binned error reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::PoseSample;
use crate::rotation::geodesic_angle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub loc_err_m: f64,
    pub rel_loc_err: f64,
    pub ang_err_rad: f64,
    pub gt_range_m: f64,
}

pub fn evaluate_pair(sample_id: impl Into<String>, pred: &PoseSample, gt: &PoseSample) -> Result<EvalRecord> {
    let t_gt = gt.translation();
    let range = t_gt.norm();
    if !(range > 0.0) {
        return Err(Error::UndefinedRelativeError);
    }
    let loc = (pred.translation() - t_gt).norm();
    Ok(EvalRecord {
        sample_id: sample_id.into(),
        loc_err_m: loc,
        rel_loc_err: loc / range,
        ang_err_rad: geodesic_angle(&pred.q, &gt.q),
        gt_range_m: range,
    })
}

/// Order-independent mean: values are sorted, then summed pairwise.
fn stable_mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(pairwise_sum(&v) / v.len() as f64)
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean relative location error plus mean angular error in radians.
pub fn esa_score(records: &[EvalRecord]) -> Result<f64> {
    let rel = stable_mean(records.iter().map(|r| r.rel_loc_err)).ok_or(Error::EmptyRecords)?;
    let ang = stable_mean(records.iter().map(|r| r.ang_err_rad)).ok_or(Error::EmptyRecords)?;
    Ok(rel + ang)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    /// `None` for the overflow bucket.
    pub lo_m: Option<f64>,
    pub hi_m: Option<f64>,
    pub count: usize,
    pub mean_loc_err_m: Option<f64>,
    pub mean_ang_err_rad: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub bins: Vec<DistanceBin>,
    /// Records whose range lies outside every bin.
    pub overflow: DistanceBin,
}

fn summarize(lo: Option<f64>, hi: Option<f64>, records: &[&EvalRecord]) -> DistanceBin {
    DistanceBin {
        lo_m: lo,
        hi_m: hi,
        count: records.len(),
        mean_loc_err_m: stable_mean(records.iter().map(|r| r.loc_err_m)),
        mean_ang_err_rad: stable_mean(records.iter().map(|r| r.ang_err_rad)),
    }
}

/// Groups records into the half-open intervals `[edges[k], edges[k+1])`.
pub fn error_by_distance(records: &[EvalRecord], edges_m: &[f64]) -> Result<DistanceReport> {
    if edges_m.len() < 2
        || edges_m.iter().any(|e| !e.is_finite())
        || edges_m.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::InvalidEdges);
    }
    let n_bins = edges_m.len() - 1;
    let mut groups: Vec<Vec<&EvalRecord>> = vec![Vec::new(); n_bins + 1];
    for r in records {
        let k = edges_m.partition_point(|&e| e <= r.gt_range_m);
        let slot = if k == 0 || k > n_bins { n_bins } else { k - 1 };
        groups[slot].push(r);
    }
    let overflow = summarize(None, None, &groups[n_bins]);
    let bins = (0..n_bins)
        .map(|k| summarize(Some(edges_m[k]), Some(edges_m[k + 1]), &groups[k]))
        .collect();
    Ok(DistanceReport { bins, overflow })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub esa_score: f64,
    pub mean_loc_err_m: f64,
    pub mean_ang_err_deg: f64,
    pub by_distance: DistanceReport,
}

pub fn eval_report(records: &[EvalRecord], edges_m: &[f64]) -> Result<EvalReport> {
    let esa = esa_score(records)?;
    let loc = stable_mean(records.iter().map(|r| r.loc_err_m)).ok_or(Error::EmptyRecords)?;
    let ang = stable_mean(records.iter().map(|r| r.ang_err_rad)).ok_or(Error::EmptyRecords)?;
    Ok(EvalReport {
        esa_score: esa,
        mean_loc_err_m: loc,
        mean_ang_err_deg: ang.to_degrees(),
        by_distance: error_by_distance(records, edges_m)?,
    })
}
