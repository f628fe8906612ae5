//! Accuracy metrics, difficulty grouping and batch benchmarking.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use nalgebra::{Rotation3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{Scene, StrategyConfig};
use crate::error::{Error, Result};
use crate::geometry::{iou_3d, provably_disjoint, rotation_angle, RigidTransform};
use crate::pipeline::{calibrate, CalibrationResult, CalibrationStatus};

/// Default success criterion on RTE (m).
pub const SUCCESS_RTE_M: f64 = 2.0;

/// Geodesic angle between two rotations, in degrees:
/// arccos((tr(R_trueᵀ·R_est) − 1) / 2).
pub fn rre(r_true: &Rotation3<f64>, r_est: &Rotation3<f64>) -> f64 {
    rotation_angle(&(r_true.inverse() * r_est)).to_degrees()
}

/// Euclidean distance between translations (m).
pub fn rte(t_true: &Vector3<f64>, t_est: &Vector3<f64>) -> f64 {
    (t_true - t_est).norm()
}

/// Strict: an RTE equal to the threshold is a failure.
pub fn success(rte_value: f64, threshold: f64) -> bool {
    rte_value < threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Hard,
    #[default]
    Unknown,
}

impl Difficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
            Difficulty::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePairRecord {
    pub scene_inf: Scene,
    pub scene_veh: Scene,
    pub gt_extrinsic: Option<RigidTransform>,
    pub difficulty: Difficulty,
}

/// Thresholds of the easy/hard split.
///
/// A pair is easy when at least `min_common` ground-truth-aligned box pairs
/// overlap with IoU above `iou_threshold` and the sensors are no more than
/// `max_translation_m` apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DifficultyRule {
    pub min_common: usize,
    pub iou_threshold: f64,
    pub max_translation_m: f64,
}

impl Default for DifficultyRule {
    fn default() -> Self {
        DifficultyRule {
            min_common: 4,
            iou_threshold: 0.1,
            max_translation_m: 60.0,
        }
    }
}

/// Number of (infra, vehicle) box pairs whose IoU under `gt` exceeds `iou_threshold`.
pub fn count_covisible(scene_inf: &Scene, scene_veh: &Scene, gt: &RigidTransform, iou_threshold: f64) -> usize {
    let veh = scene_veh.oriented();
    scene_inf
        .transformed(gt)
        .iter()
        .map(|a| {
            veh.iter()
                .filter(|b| !provably_disjoint(a, b) && iou_3d(a, b) > iou_threshold)
                .count()
        })
        .sum()
}

/// `index` is only used to label the error.
pub fn classify_difficulty(record: &FramePairRecord, rule: &DifficultyRule, index: usize) -> Result<Difficulty> {
    let gt = record.gt_extrinsic.as_ref().ok_or(Error::MissingGroundTruth(index))?;
    let common = count_covisible(&record.scene_inf, &record.scene_veh, gt, rule.iou_threshold);
    Ok(if common >= rule.min_common && gt.translation.norm() <= rule.max_translation_m {
        Difficulty::Easy
    } else {
        Difficulty::Hard
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub index: usize,
    pub difficulty: Difficulty,
    pub status: CalibrationStatus,
    /// Absent for frames without an estimate.
    pub rre_deg: Option<f64>,
    pub rte_m: Option<f64>,
    pub success: bool,
    pub time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub frames: usize,
    pub ok_frames: usize,
    pub mean_rre_deg: Option<f64>,
    pub mean_rte_m: Option<f64>,
    pub success_rate_pct: f64,
    pub mean_time_ms: f64,
}

impl GroupSummary {
    fn from_rows<'a>(rows: impl Iterator<Item = &'a FrameRow>) -> GroupSummary {
        let rows: Vec<&FrameRow> = rows.collect();
        let ok: Vec<&&FrameRow> = rows.iter().filter(|r| r.status == CalibrationStatus::Ok).collect();
        let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        let frames = rows.len();
        GroupSummary {
            frames,
            ok_frames: ok.len(),
            mean_rre_deg: mean(ok.iter().filter_map(|r| r.rre_deg).collect()),
            mean_rte_m: mean(ok.iter().filter_map(|r| r.rte_m).collect()),
            success_rate_pct: if frames == 0 {
                0.0
            } else {
                100.0 * rows.iter().filter(|r| r.success).count() as f64 / frames as f64
            },
            mean_time_ms: mean(rows.iter().map(|r| r.time_ms).collect()).unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub strategy: StrategyConfig,
    pub success_threshold_m: f64,
    pub rows: Vec<FrameRow>,
    /// Keyed by difficulty label, plus `all`.
    pub groups: BTreeMap<String, GroupSummary>,
}

impl BenchmarkReport {
    pub fn from_rows(strategy: StrategyConfig, success_threshold_m: f64, rows: Vec<FrameRow>) -> Self {
        let mut groups = BTreeMap::new();
        groups.insert("all".to_string(), GroupSummary::from_rows(rows.iter()));
        for d in [Difficulty::Easy, Difficulty::Hard, Difficulty::Unknown] {
            if rows.iter().any(|r| r.difficulty == d) {
                groups.insert(
                    d.as_str().to_string(),
                    GroupSummary::from_rows(rows.iter().filter(|r| r.difficulty == d)),
                );
            }
        }
        BenchmarkReport {
            strategy,
            success_threshold_m,
            rows,
            groups,
        }
    }

    /// Aggregates recomputed from the per-frame rows.
    pub fn recomputed(&self) -> BenchmarkReport {
        BenchmarkReport::from_rows(self.strategy.clone(), self.success_threshold_m, self.rows.clone())
    }

    /// Same report with every timing zeroed, for byte-stable output.
    pub fn without_timings(&self) -> BenchmarkReport {
        let rows = self.rows.iter().map(|r| FrameRow { time_ms: 0.0, ..r.clone() }).collect();
        BenchmarkReport::from_rows(self.strategy.clone(), self.success_threshold_m, rows)
    }

    pub fn group(&self, name: &str) -> Option<&GroupSummary> {
        self.groups.get(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkOptions {
    pub success_threshold_m: f64,
    pub rule: DifficultyRule,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            success_threshold_m: SUCCESS_RTE_M,
            rule: DifficultyRule::default(),
        }
    }
}

/// Metrics of one calibrated frame against its ground truth.
pub fn evaluate_result(result: &CalibrationResult, gt: &RigidTransform, threshold: f64) -> (Option<f64>, Option<f64>, bool) {
    if result.status != CalibrationStatus::Ok {
        return (None, None, false);
    }
    let rot = rre(&gt.rotation, &result.extrinsic.rotation);
    let trans = rte(&gt.translation, &result.extrinsic.translation);
    (Some(rot), Some(trans), success(trans, threshold))
}

/// Calibrates every record (in parallel) and aggregates per difficulty
/// group. Records with an `Unknown` difficulty are classified first.
/// Rows come out in record order.
pub fn run_benchmark(dataset: &[FramePairRecord], config: &StrategyConfig, options: &BenchmarkOptions) -> Result<BenchmarkReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate()?;
    let rows: Vec<Result<FrameRow>> = dataset
        .par_iter()
        .enumerate()
        .map(|(index, record)| {
            let gt = record.gt_extrinsic.as_ref().ok_or(Error::MissingGroundTruth(index))?;
            let difficulty = match record.difficulty {
                Difficulty::Unknown => classify_difficulty(record, &options.rule, index)?,
                d => d,
            };
            let start = Instant::now();
            let result = calibrate(&record.scene_inf, &record.scene_veh, config);
            let time_ms = start.elapsed().as_secs_f64() * 1e3;
            let (rre_deg, rte_m, ok) = evaluate_result(&result, gt, options.success_threshold_m);
            Ok(FrameRow {
                index,
                difficulty,
                status: result.status,
                rre_deg,
                rte_m,
                success: ok,
                time_ms,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkReport::from_rows(config.clone(), options.success_threshold_m, rows))
}
