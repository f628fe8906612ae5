//! End-to-end calibration of one infrastructure/vehicle frame pair.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::affinity::{build_affinity, overall_iou, Scene, StrategyConfig};
use crate::error::{Error, Result};
use crate::extrinsics::{refine_with_trace, resolve_correspondence};
use crate::geometry::RigidTransform;
use crate::matching::{filter_matches, solve_assignment, MatchSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationStatus {
    Ok,
    NoCommonTargets,
    Degenerate,
}

impl CalibrationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CalibrationStatus::Ok => "ok",
            CalibrationStatus::NoCommonTargets => "no_common_targets",
            CalibrationStatus::Degenerate => "degenerate",
        }
    }
}

impl fmt::Display for CalibrationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Wall-clock milliseconds spent in each stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub affinity_ms: f64,
    pub matching_ms: f64,
    pub solve_ms: f64,
    pub refine_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.affinity_ms + self.matching_ms + self.solve_ms + self.refine_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    /// Infrastructure → vehicle extrinsic. Identity when `status` is not ok.
    pub extrinsic: RigidTransform,
    pub matches: MatchSet,
    /// oIoU of the full scenes under `extrinsic`.
    pub scene_oiou: f64,
    pub stage_timings: StageTimings,
    pub strategy: StrategyConfig,
    pub status: CalibrationStatus,
}

impl CalibrationResult {
    fn failed(status: CalibrationStatus, strategy: &StrategyConfig, timings: StageTimings, matches: MatchSet) -> Self {
        CalibrationResult {
            extrinsic: RigidTransform::identity(),
            matches,
            scene_oiou: 0.0,
            stage_timings: timings,
            strategy: strategy.clone(),
            status,
        }
    }
}

fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Estimates the infrastructure → vehicle extrinsic from detections alone.
///
/// Affinity construction, assignment, gating, correspondence resolution and
/// closed-form fit, optional refinement, and a final oIoU score. Failures are
/// reported through [`CalibrationResult::status`]: empty scenes, too few
/// boxes for edge affinities and an empty gated match set all mean no common
/// targets were found.
pub fn calibrate(scene_inf: &Scene, scene_veh: &Scene, config: &StrategyConfig) -> CalibrationResult {
    let mut timings = StageTimings::default();

    let t0 = Instant::now();
    let affinity = match build_affinity(scene_inf, scene_veh, config) {
        Ok(a) => a,
        Err(_) => {
            timings.affinity_ms = elapsed_ms(t0);
            return CalibrationResult::failed(CalibrationStatus::NoCommonTargets, config, timings, MatchSet::default());
        }
    };
    timings.affinity_ms = elapsed_ms(t0);

    let t1 = Instant::now();
    let assignment = solve_assignment(&affinity);
    let matches = filter_matches(&assignment, &affinity, config.oiou_gate);
    timings.matching_ms = elapsed_ms(t1);
    let matches = match matches {
        Ok(m) => m,
        Err(_) => {
            return CalibrationResult::failed(CalibrationStatus::NoCommonTargets, config, timings, MatchSet::default());
        }
    };

    let t2 = Instant::now();
    let corr = resolve_correspondence(
        &matches,
        scene_inf,
        scene_veh,
        config.square_tolerance,
        config.use_confidence_weighting,
    );
    timings.solve_ms = elapsed_ms(t2);
    let corr = match corr {
        Ok(c) => c,
        Err(Error::NoMatches) => {
            return CalibrationResult::failed(CalibrationStatus::NoCommonTargets, config, timings, matches);
        }
        Err(_) => return CalibrationResult::failed(CalibrationStatus::Degenerate, config, timings, matches),
    };

    let t3 = Instant::now();
    let extrinsic = if config.refine {
        refine_with_trace(&corr.transform, &corr.infra, &corr.vehicle, &config.refinement, corr.weights.as_deref()).transform
    } else {
        corr.transform
    };
    let scene_oiou = overall_iou(&scene_inf.transformed(&extrinsic), &scene_veh.oriented());
    timings.refine_ms = elapsed_ms(t3);

    CalibrationResult {
        extrinsic,
        matches,
        scene_oiou,
        stage_timings: timings,
        strategy: config.clone(),
        status: CalibrationStatus::Ok,
    }
}

/// Scene oIoU under the estimated extrinsic; higher means better alignment.
/// Meant to be re-evaluated on fresh frames as an online health signal.
pub fn monitor_oiou(result: &CalibrationResult, scene_inf: &Scene, scene_veh: &Scene) -> Result<f64> {
    if result.status != CalibrationStatus::Ok {
        return Err(Error::InvalidStatus(result.status.to_string()));
    }
    Ok(overall_iou(&scene_inf.transformed(&result.extrinsic), &scene_veh.oriented()))
}
