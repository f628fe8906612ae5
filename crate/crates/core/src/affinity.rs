//! Scene-level alignment scoring and the infrastructure × vehicle affinity
//! matrix.
//!
//! The core affinity of a box pair (i, j) is obtained by pretending the two
//! boxes are the same object, deriving the extrinsic that would make them
//! coincide, carrying the whole infrastructure scene through it and scoring
//! the overlap with the vehicle scene ([`overall_iou`]). Correct pairs align
//! every other shared object as a side effect; wrong pairs only align
//! themselves.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extrinsics::RefinementParams;
use crate::geometry::{iou_3d, normalize_angle, provably_disjoint, Box3D, OrientedBox, RigidTransform};

/// One endpoint's detections for a single timestamp.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub frame_id: String,
    pub timestamp: Option<f64>,
    pub boxes: Vec<Box3D>,
}

impl Scene {
    pub fn new(frame_id: impl Into<String>, boxes: Vec<Box3D>) -> Self {
        Scene {
            frame_id: frame_id.into(),
            timestamp: None,
            boxes,
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn oriented(&self) -> Vec<OrientedBox> {
        self.boxes.iter().map(Box3D::to_oriented).collect()
    }

    /// All boxes carried through `transform`.
    pub fn transformed(&self, transform: &RigidTransform) -> Vec<OrientedBox> {
        self.boxes.iter().map(|b| transform.apply_to_box(b)).collect()
    }

    fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyScene(self.frame_id.clone()))
        } else {
            Ok(())
        }
    }
}

/// Which affinities feed the assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffinityKind {
    /// Core oIoU affinity, restricted to same-category pairs.
    CoreCategory,
    /// Core oIoU affinity over every pair regardless of category.
    CoreOnly,
    /// Relative-yaw edge affinity on top of the category mask.
    AngleCategory,
    /// Inter-center distance edge affinity on top of the category mask.
    LengthCategory,
    /// Product of the length and angle edge affinities on top of the category mask.
    LengthAngleCategory,
}

impl AffinityKind {
    pub fn uses_category(self) -> bool {
        !matches!(self, AffinityKind::CoreOnly)
    }

    pub fn uses_core(self) -> bool {
        matches!(self, AffinityKind::CoreCategory | AffinityKind::CoreOnly)
    }
}

/// Everything that selects and tunes a calibration strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub affinity_kind: AffinityKind,
    pub use_confidence_weighting: bool,
    /// Minimum affinity for an assigned pair to count as a common object.
    pub oiou_gate: f64,
    /// Weight of the edge affinities in the fused matrix, in [0, 1].
    pub edge_fusion_weight: f64,
    /// Length-affinity scale (m).
    pub sigma_length: f64,
    /// Angle-affinity scale (rad).
    pub sigma_angle: f64,
    /// Footprints with |l - w| below this (m) get quarter-turn hypotheses.
    pub square_tolerance: f64,
    pub refine: bool,
    pub refinement: RefinementParams,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig::v1()
    }
}

impl StrategyConfig {
    /// Core + category affinity, with iterative refinement.
    pub fn v1() -> Self {
        StrategyConfig {
            affinity_kind: AffinityKind::CoreCategory,
            use_confidence_weighting: false,
            oiou_gate: 0.3,
            edge_fusion_weight: 0.0,
            sigma_length: 2.0,
            sigma_angle: 0.2,
            square_tolerance: 0.05,
            refine: true,
            refinement: RefinementParams::default(),
        }
    }

    /// Core + category affinity, closed-form fit only.
    pub fn v2() -> Self {
        StrategyConfig {
            refine: false,
            ..StrategyConfig::v1()
        }
    }

    /// Length + angle + category affinity, with refinement.
    pub fn v3() -> Self {
        StrategyConfig {
            affinity_kind: AffinityKind::LengthAngleCategory,
            edge_fusion_weight: 1.0,
            ..StrategyConfig::v1()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "v1" => Some(Self::v1()),
            "v2" => Some(Self::v2()),
            "v3" => Some(Self::v3()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.oiou_gate >= 0.0) {
            return bad(format!("oiou_gate must be >= 0, got {}", self.oiou_gate));
        }
        if !(0.0..=1.0).contains(&self.edge_fusion_weight) {
            return bad(format!("edge_fusion_weight must lie in [0, 1], got {}", self.edge_fusion_weight));
        }
        if !(self.sigma_length > 0.0 && self.sigma_angle > 0.0) {
            return bad("sigma_length and sigma_angle must be > 0".into());
        }
        if !(self.square_tolerance >= 0.0) {
            return bad(format!("square_tolerance must be >= 0, got {}", self.square_tolerance));
        }
        self.refinement.validate()
    }
}

/// Rows are infrastructure boxes, columns vehicle boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    hypotheses: Vec<Option<RigidTransform>>,
}

impl AffinityMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        AffinityMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
            hypotheses: vec![None; rows * cols],
        }
    }

    /// Plain value matrix without hypotheses. Values must be finite and >= 0.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                expected: format!("{cols} columns"),
                actual: format!("{} columns", bad.len()),
            });
        }
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParams(format!("affinity values must be finite and >= 0, got {v}")));
        }
        Ok(AffinityMatrix {
            rows: rows.len(),
            cols,
            hypotheses: vec![None; values.len()],
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn hypothesis(&self, i: usize, j: usize) -> Option<&RigidTransform> {
        self.hypotheses[i * self.cols + j].as_ref()
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64, hypothesis: Option<RigidTransform>) {
        let k = i * self.cols + j;
        self.values[k] = value;
        self.hypotheses[k] = hypothesis;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.cols.max(1)).take(self.rows).map(<[f64]>::to_vec).collect()
    }

    pub fn scaled(&self, factor: f64) -> AffinityMatrix {
        AffinityMatrix {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> AffinityMatrix {
        let mut out = AffinityMatrix::zeros(self.rows, self.cols);
        for (i, &src) in perm.iter().enumerate() {
            for j in 0..self.cols {
                out.set(i, j, self.get(src, j), self.hypothesis(src, j).copied());
            }
        }
        out
    }
}

/// Scene overlap score: the sum of all pairwise IoUs divided by the larger
/// of the two box counts. Pairs whose bounding spheres do not meet are
/// skipped.
pub fn overall_iou(infra_in_vehicle_frame: &[OrientedBox], vehicle: &[OrientedBox]) -> f64 {
    let denom = infra_in_vehicle_frame.len().max(vehicle.len());
    if infra_in_vehicle_frame.is_empty() || vehicle.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for a in infra_in_vehicle_frame {
        for b in vehicle {
            if !provably_disjoint(a, b) {
                total += iou_3d(a, b);
            }
        }
    }
    total / denom as f64
}

/// Extrinsics that make `b_inf` coincide with `b_veh`.
///
/// A yaw-only box cannot tell its front from its back, so both headings are
/// returned (Δyaw and Δyaw + π). When either footprint is square within
/// `square_tolerance` the two quarter turns are added as well.
pub fn hypothesis_extrinsics(b_inf: &Box3D, b_veh: &Box3D, square_tolerance: f64) -> Vec<RigidTransform> {
    let base = b_veh.yaw() - b_inf.yaw();
    let square = b_inf.is_near_square(square_tolerance) || b_veh.is_near_square(square_tolerance);
    let offsets: &[f64] = if square {
        &[0.0, FRAC_PI_2, PI, -FRAC_PI_2]
    } else {
        &[0.0, PI]
    };
    offsets
        .iter()
        .map(|off| {
            let rot_only = RigidTransform::from_yaw(normalize_angle(base + off), Default::default());
            let translation = b_veh.center() - rot_only.rotation * b_inf.center();
            RigidTransform::new(rot_only.rotation, translation)
        })
        .collect()
}

/// Core affinity matrix: every admissible pair is scored by the scene oIoU
/// of its best hypothesis extrinsic.
pub fn core_affinity(scene_inf: &Scene, scene_veh: &Scene, config: &StrategyConfig) -> Result<AffinityMatrix> {
    scene_inf.require_non_empty()?;
    scene_veh.require_non_empty()?;
    let (m, n) = (scene_inf.len(), scene_veh.len());
    let vehicle = scene_veh.oriented();
    let use_category = config.affinity_kind.uses_category();

    let entries: Vec<(f64, Option<RigidTransform>)> = (0..m * n)
        .into_par_iter()
        .map(|k| {
            let (bi, bj) = (&scene_inf.boxes[k / n], &scene_veh.boxes[k % n]);
            if use_category && bi.category() != bj.category() {
                return (0.0, None);
            }
            let mut best: Option<(f64, RigidTransform)> = None;
            for t in hypothesis_extrinsics(bi, bj, config.square_tolerance) {
                let score = overall_iou(&scene_inf.transformed(&t), &vehicle);
                if best.as_ref().is_none_or(|(s, _)| score > *s) {
                    best = Some((score, t));
                }
            }
            let (mut score, t) = best.expect("at least two hypotheses");
            if config.use_confidence_weighting {
                score *= bi.confidence() * bj.confidence();
            }
            (score, Some(t))
        })
        .collect();

    let mut out = AffinityMatrix::zeros(m, n);
    for (k, (v, h)) in entries.into_iter().enumerate() {
        out.set(k / n, k % n, v, h);
    }
    Ok(out)
}

/// Category-only vertex affinity: 1 for same-category pairs (times the
/// confidence product when weighting is on), 0 otherwise.
pub fn category_affinity(scene_inf: &Scene, scene_veh: &Scene, config: &StrategyConfig) -> Result<AffinityMatrix> {
    scene_inf.require_non_empty()?;
    scene_veh.require_non_empty()?;
    let mut out = AffinityMatrix::zeros(scene_inf.len(), scene_veh.len());
    for (i, bi) in scene_inf.boxes.iter().enumerate() {
        for (j, bj) in scene_veh.boxes.iter().enumerate() {
            if bi.category() == bj.category() {
                let w = if config.use_confidence_weighting {
                    bi.confidence() * bj.confidence()
                } else {
                    1.0
                };
                out.set(i, j, w, None);
            }
        }
    }
    Ok(out)
}

/// Edge-pair affinities K_q(u, v) for directed edges u = (i, i′) of the
/// infrastructure graph and v = (j, j′) of the vehicle graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeAffinity {
    m: usize,
    n: usize,
    values: Vec<f64>,
}

impl EdgeAffinity {
    fn build(scene_inf: &Scene, scene_veh: &Scene, sim: impl Fn(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let (m, n) = (scene_inf.len(), scene_veh.len());
        if m < 2 || n < 2 {
            return Err(Error::InsufficientBoxes { infra: m, vehicle: n });
        }
        let mut values = vec![0.0; m * m * n * n];
        for i in 0..m {
            for i2 in (0..m).filter(|&x| x != i) {
                for j in 0..n {
                    for j2 in (0..n).filter(|&x| x != j) {
                        values[((i * m + i2) * n + j) * n + j2] = sim(i, i2, j, j2);
                    }
                }
            }
        }
        Ok(EdgeAffinity { m, n, values })
    }

    pub fn infra_nodes(&self) -> usize {
        self.m
    }

    pub fn vehicle_nodes(&self) -> usize {
        self.n
    }

    /// Affinity between infrastructure edge (i, i2) and vehicle edge (j, j2).
    pub fn get(&self, i: usize, i2: usize, j: usize, j2: usize) -> f64 {
        self.values[((i * self.m + i2) * self.n + j) * self.n + j2]
    }

    /// Element-wise product of two edge affinities over the same graphs.
    pub fn product(&self, other: &EdgeAffinity) -> Result<EdgeAffinity> {
        if (self.m, self.n) != (other.m, other.n) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} nodes", self.m, self.n),
                actual: format!("{}x{} nodes", other.m, other.n),
            });
        }
        Ok(EdgeAffinity {
            m: self.m,
            n: self.n,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
        })
    }
}

/// Compares inter-center distances: exp(-|d_inf - d_veh| / σ_len).
pub fn length_affinity(scene_inf: &Scene, scene_veh: &Scene, sigma_length: f64) -> Result<EdgeAffinity> {
    let dist = |s: &Scene, a: usize, b: usize| (s.boxes[a].center() - s.boxes[b].center()).norm();
    EdgeAffinity::build(scene_inf, scene_veh, |i, i2, j, j2| {
        let d = (dist(scene_inf, i, i2) - dist(scene_veh, j, j2)).abs();
        (-d / sigma_length).exp()
    })
}

/// Compares the relative yaw between the two boxes of an edge:
/// exp(-|Δθ_inf - Δθ_veh| / σ_ang), angles wrapped to (-π, π].
pub fn angle_affinity(scene_inf: &Scene, scene_veh: &Scene, sigma_angle: f64) -> Result<EdgeAffinity> {
    let rel = |s: &Scene, a: usize, b: usize| normalize_angle(s.boxes[b].yaw() - s.boxes[a].yaw());
    EdgeAffinity::build(scene_inf, scene_veh, |i, i2, j, j2| {
        let d = normalize_angle(rel(scene_inf, i, i2) - rel(scene_veh, j, j2)).abs();
        (-d / sigma_angle).exp()
    })
}

/// Folds edge affinities into the vertex affinity matrix:
///
/// A(i, j) = (1 - w)·K_p(i, j) + w·mean{K_q((i, i′), (j, j′))}
///
/// where the mean runs over endpoint-consistent edge pairs, i.e. those whose
/// far endpoints (i′, j′) are themselves an admissible pair (K_p(i′, j′) > 0).
/// Pairs with K_p(i, j) = 0 stay exactly 0, so the category mask survives
/// fusion. With no edge affinity, or w = 0, A = K_p.
pub fn fuse_affinity(kp: &AffinityMatrix, kq: Option<&EdgeAffinity>, weight: f64) -> Result<AffinityMatrix> {
    let Some(kq) = kq else {
        return Ok(kp.clone());
    };
    if weight == 0.0 {
        return Ok(kp.clone());
    }
    if (kq.m, kq.n) != (kp.rows, kp.cols) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} nodes", kp.rows, kp.cols),
            actual: format!("{}x{} nodes", kq.m, kq.n),
        });
    }
    let mut out = kp.clone();
    for i in 0..kp.rows {
        for j in 0..kp.cols {
            let base = kp.get(i, j);
            if base == 0.0 {
                continue;
            }
            let mut sum = 0.0;
            let mut count = 0usize;
            for i2 in (0..kp.rows).filter(|&x| x != i) {
                for j2 in (0..kp.cols).filter(|&x| x != j) {
                    if kp.get(i2, j2) > 0.0 {
                        sum += kq.get(i, i2, j, j2);
                        count += 1;
                    }
                }
            }
            let edge = if count > 0 { sum / count as f64 } else { 0.0 };
            out.set(i, j, (1.0 - weight) * base + weight * edge, kp.hypothesis(i, j).copied());
        }
    }
    Ok(out)
}

/// Builds the fused affinity matrix selected by `config.affinity_kind`.
pub fn build_affinity(scene_inf: &Scene, scene_veh: &Scene, config: &StrategyConfig) -> Result<AffinityMatrix> {
    match config.affinity_kind {
        AffinityKind::CoreCategory | AffinityKind::CoreOnly => core_affinity(scene_inf, scene_veh, config),
        kind => {
            let kp = category_affinity(scene_inf, scene_veh, config)?;
            let kq = match kind {
                AffinityKind::AngleCategory => angle_affinity(scene_inf, scene_veh, config.sigma_angle)?,
                AffinityKind::LengthCategory => length_affinity(scene_inf, scene_veh, config.sigma_length)?,
                _ => length_affinity(scene_inf, scene_veh, config.sigma_length)?
                    .product(&angle_affinity(scene_inf, scene_veh, config.sigma_angle)?)?,
            };
            fuse_affinity(&kp, Some(&kq), config.edge_fusion_weight)
        }
    }
}
