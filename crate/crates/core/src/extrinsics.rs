//! Extrinsic estimation from matched box pairs.
//!
//! Each matched pair contributes its 8 corners to an abstract point cloud.
//! Which corner of the vehicle box corresponds to which corner of the
//! infrastructure box is not known up front: a yaw-only box has a heading
//! ambiguity of π, and near-square footprints are ambiguous up to quarter
//! turns. [`resolve_correspondence`] picks the labelling, [`svd_fit`] gives
//! the closed-form least-squares transform and [`refine`] polishes it with
//! ICP restricted to each box's own corners.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::affinity::{AffinityMatrix, Scene};
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Box3D, RigidTransform};
use crate::matching::{solve_assignment, MatchSet};

/// Points of an abstract point cloud; every consecutive run of 8 comes from
/// one box.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VertexCloud {
    points: Vec<Vector3<f64>>,
}

impl VertexCloud {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Result<Self> {
        if !points.len().is_multiple_of(8) {
            return Err(Error::DimensionMismatch {
                expected: "a multiple of 8 points".into(),
                actual: format!("{} points", points.len()),
            });
        }
        Ok(VertexCloud { points })
    }

    pub fn from_boxes<'a>(boxes: impl IntoIterator<Item = &'a Box3D>) -> Self {
        VertexCloud {
            points: boxes.into_iter().flat_map(|b| b.vertices()).collect(),
        }
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn groups(&self) -> usize {
        self.points.len() / 8
    }

    pub fn group(&self, g: usize) -> &[Vector3<f64>] {
        &self.points[8 * g..8 * g + 8]
    }

    pub fn transformed(&self, t: &RigidTransform) -> VertexCloud {
        VertexCloud {
            points: self.points.iter().map(|p| t.transform_point(p)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementParams {
    pub max_iterations: usize,
    /// Stop once the RMS residual improves by less than this (m).
    pub convergence_tol: f64,
}

impl Default for RefinementParams {
    fn default() -> Self {
        RefinementParams {
            max_iterations: 30,
            convergence_tol: 1e-4,
        }
    }
}

impl RefinementParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 || !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidParams(format!(
                "refinement needs max_iterations >= 1 and convergence_tol > 0, got {} / {}",
                self.max_iterations, self.convergence_tol
            )));
        }
        Ok(())
    }
}

/// Weighted least-squares rigid fit (Kabsch / Arun): the `R`, `t` minimising
/// Σ wₖ‖R·srcₖ + t − dstₖ‖². Reflections are corrected so det R = +1.
pub fn svd_fit_weighted(src: &[Vector3<f64>], dst: &[Vector3<f64>], weights: Option<&[f64]>) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} destination points", src.len()),
            actual: format!("{} destination points", dst.len()),
        });
    }
    if src.len() < 3 {
        return Err(Error::DegenerateGeometry(format!("need at least 3 points, got {}", src.len())));
    }
    let w = |k: usize| weights.map_or(1.0, |w| w[k]);
    if let Some(ws) = weights {
        if ws.len() != src.len() || ws.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParams("weights must match the point count and be >= 0".into()));
        }
    }
    let total: f64 = (0..src.len()).map(w).sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateGeometry("all point weights are zero".into()));
    }
    let mu_src = (0..src.len()).map(|k| src[k] * w(k)).sum::<Vector3<f64>>() / total;
    let mu_dst = (0..dst.len()).map(|k| dst[k] * w(k)).sum::<Vector3<f64>>() / total;

    let mut scatter = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for k in 0..src.len() {
        let a = src[k] - mu_src;
        let b = dst[k] - mu_dst;
        scatter += a * a.transpose() * w(k);
        cross += a * b.transpose() * w(k);
    }

    let mut eig = scatter.symmetric_eigenvalues().iter().copied().collect::<Vec<_>>();
    eig.sort_by(|a, b| b.total_cmp(a));
    if eig[0] <= 0.0 || eig[1] <= 1e-12 * eig[0].max(1.0) {
        return Err(Error::DegenerateGeometry(
            "source points are collinear or coincident".into(),
        ));
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd u");
    let v = svd.v_t.expect("svd v_t").transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = Rotation3::from_matrix_unchecked(v * d * u.transpose());
    let translation = mu_dst - rotation * mu_src;
    Ok(RigidTransform::new(rotation, translation))
}

pub fn svd_fit(src: &VertexCloud, dst: &VertexCloud) -> Result<RigidTransform> {
    svd_fit_weighted(&src.points, &dst.points, None)
}

/// Root-mean-square distance between index-corresponded points under `t`.
pub fn rms_residual(t: &RigidTransform, src: &[Vector3<f64>], dst: &[Vector3<f64>], weights: Option<&[f64]>) -> f64 {
    let mut sum = 0.0;
    let mut total = 0.0;
    for (k, (p, q)) in src.iter().zip(dst).enumerate() {
        let w = weights.map_or(1.0, |w| w[k]);
        sum += w * (t.transform_point(p) - q).norm_squared();
        total += w;
    }
    if total > 0.0 {
        (sum / total).sqrt()
    } else {
        0.0
    }
}

/// The vehicle box re-labelled as if its yaw were `quarter_turns · π/2`
/// larger. Odd turns swap length and width, so the physical box is the same
/// and only the corner labelling changes.
fn relabelled_vertices(b: &Box3D, quarter_turns: u8) -> [Vector3<f64>; 8] {
    if quarter_turns == 0 {
        return b.vertices();
    }
    let size = b.size();
    let size = if quarter_turns % 2 == 1 {
        Vector3::new(size.y, size.x, size.z)
    } else {
        size
    };
    Box3D::new(b.category(), b.center(), size, b.yaw() + f64::from(quarter_turns) * FRAC_PI_2)
        .expect("re-labelling preserves validity")
        .vertices()
}

/// Outcome of the correspondence search.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub infra: VertexCloud,
    pub vehicle: VertexCloud,
    /// Per-pair quarter-turn relabelling applied to the vehicle box.
    pub selector: Vec<u8>,
    pub transform: RigidTransform,
    pub rms: f64,
    /// Per-point fit weights (confidence products), when weighting is on.
    pub weights: Option<Vec<f64>>,
}

/// Residual differences (m) below this count as ties.
const TIE_RMS: f64 = 1e-9;

/// Chooses the corner labelling of each matched vehicle box.
///
/// Candidates are scene-wide headings. Each box takes the labelling whose
/// implied yaw offset is closest to the heading. Headings come first from the
/// hypothesis extrinsics stored on the matches, then the canonical labelling,
/// then every admissible yaw offset implied by any single pair. The candidate
/// with the lowest fit residual wins; ties go to the earlier candidate.
pub fn resolve_correspondence(
    matches: &MatchSet,
    scene_inf: &Scene,
    scene_veh: &Scene,
    square_tolerance: f64,
    confidence_weighting: bool,
) -> Result<Correspondence> {
    if matches.is_empty() {
        return Err(Error::NoMatches);
    }
    let pairs: Vec<(&Box3D, &Box3D)> = matches
        .pairs
        .iter()
        .map(|p| (&scene_inf.boxes[p.infra], &scene_veh.boxes[p.vehicle]))
        .collect();
    let admissible: Vec<&[u8]> = pairs
        .iter()
        .map(|(bi, bv)| -> &[u8] {
            if bi.is_near_square(square_tolerance) && bv.is_near_square(square_tolerance) {
                &[0, 1, 2, 3]
            } else {
                &[0, 2]
            }
        })
        .collect();
    let yaw_delta: Vec<f64> = pairs.iter().map(|(bi, bv)| bv.yaw() - bi.yaw()).collect();
    let selector_for = |heading: f64| -> Vec<u8> {
        (0..pairs.len())
            .map(|b| {
                let mut best = (f64::INFINITY, 0u8);
                for &t in admissible[b] {
                    let d = normalize_angle(yaw_delta[b] + f64::from(t) * FRAC_PI_2 - heading).abs();
                    if d < best.0 {
                        best = (d, t);
                    }
                }
                best.1
            })
            .collect()
    };

    let mut candidates: Vec<Vec<u8>> = Vec::new();
    let mut push = |c: Vec<u8>| {
        if !candidates.contains(&c) {
            candidates.push(c);
        }
    };
    for h in matches.pairs.iter().filter_map(|p| p.hypothesis.as_ref()) {
        if let Some(heading) = h.yaw_only(1e-6) {
            push(selector_for(heading));
        }
    }
    push(vec![0; pairs.len()]);
    for (k, turns) in admissible.iter().enumerate() {
        for &s in *turns {
            push(selector_for(yaw_delta[k] + f64::from(s) * FRAC_PI_2));
        }
    }

    let infra = VertexCloud::from_boxes(pairs.iter().map(|(bi, _)| *bi));
    let weights = confidence_weighting.then(|| {
        pairs
            .iter()
            .flat_map(|(bi, bv)| std::iter::repeat_n(bi.confidence() * bv.confidence(), 8))
            .collect::<Vec<f64>>()
    });

    let mut best: Option<Correspondence> = None;
    for selector in candidates {
        let vehicle = VertexCloud {
            points: pairs
                .iter()
                .zip(&selector)
                .flat_map(|((_, bv), &s)| relabelled_vertices(bv, s))
                .collect(),
        };
        let transform = svd_fit_weighted(&infra.points, &vehicle.points, weights.as_deref())?;
        let rms = rms_residual(&transform, &infra.points, &vehicle.points, weights.as_deref());
        if best.as_ref().is_none_or(|b| rms < b.rms - TIE_RMS) {
            best = Some(Correspondence {
                infra: infra.clone(),
                vehicle,
                selector,
                transform,
                rms,
                weights: weights.clone(),
            });
        }
    }
    Ok(best.expect("the canonical candidate is always present"))
}

/// Refined transform plus the RMS residual after every accepted iterate
/// (entry 0 is the starting residual).
#[derive(Debug, Clone, PartialEq)]
pub struct RefineTrace {
    pub transform: RigidTransform,
    pub residuals: Vec<f64>,
}

/// Re-pairs the corners of every group under `t`: the bijection between an
/// infrastructure box's corners and its matched vehicle box's corners with
/// the least total squared distance. Returns the new targets and the RMS.
fn closest_bijection(
    t: &RigidTransform,
    infra: &VertexCloud,
    vehicle: &VertexCloud,
    weights: Option<&[f64]>,
) -> (Vec<Vector3<f64>>, f64) {
    let mut targets = Vec::with_capacity(infra.points.len());
    let mut sum = 0.0;
    let mut total = 0.0;
    for g in 0..infra.groups() {
        let moved: Vec<Vector3<f64>> = infra.group(g).iter().map(|p| t.transform_point(p)).collect();
        let group = vehicle.group(g);
        let d2: Vec<Vec<f64>> = moved
            .iter()
            .map(|p| group.iter().map(|q| (p - q).norm_squared()).collect())
            .collect();
        let worst = d2.iter().flatten().copied().fold(0.0f64, f64::max);
        let mut closeness = AffinityMatrix::zeros(8, 8);
        for (k, row) in d2.iter().enumerate() {
            for (l, d) in row.iter().enumerate() {
                closeness.set(k, l, worst - d, None);
            }
        }
        for (k, l) in solve_assignment(&closeness) {
            let w = weights.map_or(1.0, |w| w[8 * g + k]);
            sum += w * d2[k][l];
            total += w;
            targets.push(group[l]);
        }
    }
    let rms = if total > 0.0 { (sum / total).sqrt() } else { 0.0 };
    (targets, rms)
}

/// Group-restricted ICP: the corners of each infrastructure box are paired
/// one-to-one with the corners of its matched vehicle box. Stops on `convergence_tol`,
/// `max_iterations`, or the first step that would raise the residual, so
/// the RMS trace is non-increasing.
pub fn refine_with_trace(
    initial: &RigidTransform,
    infra: &VertexCloud,
    vehicle: &VertexCloud,
    params: &RefinementParams,
    weights: Option<&[f64]>,
) -> RefineTrace {
    let mut current = *initial;
    if infra.points.is_empty() || infra.groups() != vehicle.groups() {
        return RefineTrace {
            transform: current,
            residuals: Vec::new(),
        };
    }
    let (mut targets, mut rms) = closest_bijection(&current, infra, vehicle, weights);
    let mut residuals = vec![rms];
    for _ in 0..params.max_iterations {
        let Ok(candidate) = svd_fit_weighted(&infra.points, &targets, weights) else {
            break;
        };
        let (next_targets, next_rms) = closest_bijection(&candidate, infra, vehicle, weights);
        if next_rms > rms {
            break;
        }
        current = candidate;
        residuals.push(next_rms);
        let improvement = rms - next_rms;
        targets = next_targets;
        rms = next_rms;
        if improvement < params.convergence_tol {
            break;
        }
    }
    RefineTrace {
        transform: current,
        residuals,
    }
}

pub fn refine(initial: &RigidTransform, infra: &VertexCloud, vehicle: &VertexCloud, params: &RefinementParams) -> RigidTransform {
    refine_with_trace(initial, infra, vehicle, params, None).transform
}

/// How [`estimate_extrinsic`] runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationParams {
    /// `None` skips refinement and returns the closed-form fit.
    pub refinement: Option<RefinementParams>,
    pub confidence_weighting: bool,
    pub square_tolerance: f64,
}

impl Default for EstimationParams {
    fn default() -> Self {
        EstimationParams {
            refinement: Some(RefinementParams::default()),
            confidence_weighting: false,
            square_tolerance: 0.05,
        }
    }
}

/// Correspondence search, closed-form fit, then (optionally) refinement.
pub fn estimate_extrinsic(
    matches: &MatchSet,
    scene_inf: &Scene,
    scene_veh: &Scene,
    params: &EstimationParams,
) -> Result<RigidTransform> {
    let corr = resolve_correspondence(matches, scene_inf, scene_veh, params.square_tolerance, params.confidence_weighting)?;
    Ok(match &params.refinement {
        Some(rp) => refine_with_trace(&corr.transform, &corr.infra, &corr.vehicle, rp, corr.weights.as_deref()).transform,
        None => corr.transform,
    })
}
