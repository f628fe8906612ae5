//! Oriented 3D boxes, rigid transforms and exact box-box IoU.
//!
//! Boxes coming out of a detector are yaw-only ([`Box3D`]). Once an
//! infrastructure box is carried into the vehicle frame by an arbitrary
//! extrinsic it may pick up roll and pitch, so the transformed form is an
//! [`OrientedBox`] with a full rotation matrix. IoU is always computed on
//! oriented boxes by clipping one box polytope against the six half-spaces
//! of the other.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intersection volumes below this (m³) count as empty.
pub const SLIVER_VOLUME: f64 = 1e-12;

/// Distance (m) under which a vertex is considered to lie on a clipping plane.
const PLANE_EPS: f64 = 1e-9;

/// Canonical corner signs in the local box frame, scaled by half the size.
///
/// Bottom face first, counter-clockwise seen from above starting at the
/// front-left corner, then the top face in the same order. The extrinsics
/// module relies on this ordering when it re-labels vertices for heading
/// flips and quarter turns.
pub const CORNER_SIGNS: [[f64; 3]; 8] = [
    [1.0, 1.0, -1.0],
    [1.0, -1.0, -1.0],
    [-1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [1.0, 1.0, 1.0],
    [1.0, -1.0, 1.0],
    [-1.0, -1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// Faces of the box polytope as indices into the canonical vertex list.
const BOX_FACES: [[usize; 4]; 6] = [
    [0, 1, 2, 3],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [1, 2, 6, 5],
    [2, 3, 7, 6],
    [3, 0, 4, 7],
];

/// Wraps an angle into (-π, π]. Angles already in range are returned unchanged.
pub fn normalize_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Object class of a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Car,
    Van,
    Truck,
    Bus,
    Pedestrian,
    Cyclist,
    Tricyclist,
    Motorcyclist,
    Other,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::Car,
        Category::Van,
        Category::Truck,
        Category::Bus,
        Category::Pedestrian,
        Category::Cyclist,
        Category::Tricyclist,
        Category::Motorcyclist,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Car => "car",
            Category::Van => "van",
            Category::Truck => "truck",
            Category::Bus => "bus",
            Category::Pedestrian => "pedestrian",
            Category::Cyclist => "cyclist",
            Category::Tricyclist => "tricyclist",
            Category::Motorcyclist => "motorcyclist",
            Category::Other => "other",
        }
    }

    /// Case-insensitive lookup; anything unrecognised is [`Category::Other`].
    pub fn from_label(label: &str) -> Category {
        let lower = label.trim().to_ascii_lowercase();
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == lower)
            .unwrap_or(Category::Other)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(Category::from_label(s))
    }
}

impl Serialize for Category {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let label = String::deserialize(d)?;
        Ok(Category::from_label(&label))
    }
}

/// A yaw-only detection box in a single sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Box3D {
    category: Category,
    center: Vector3<f64>,
    size: Vector3<f64>,
    yaw: f64,
    confidence: f64,
    track_id: Option<i64>,
}

impl Box3D {
    /// `size` is (length, width, height) along the local x, y, z axes.
    pub fn new(category: Category, center: Vector3<f64>, size: Vector3<f64>, yaw: f64) -> Result<Self> {
        if !center.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite center {center:?}")));
        }
        if !size.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidBox(format!(
                "size components must be finite and > 0, got ({}, {}, {})",
                size.x, size.y, size.z
            )));
        }
        if !yaw.is_finite() {
            return Err(Error::InvalidBox(format!("non-finite yaw {yaw}")));
        }
        Ok(Box3D {
            category,
            center,
            size,
            yaw: normalize_angle(yaw),
            confidence: 1.0,
            track_id: None,
        })
    }

    pub fn with_confidence(mut self, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidBox(format!("confidence {confidence} outside [0, 1]")));
        }
        self.confidence = confidence;
        Ok(self)
    }

    pub fn with_track_id(mut self, track_id: Option<i64>) -> Self {
        self.track_id = track_id;
        self
    }

    pub fn category(&self) -> Category {
        self.category
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    pub fn size(&self) -> Vector3<f64> {
        self.size
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn track_id(&self) -> Option<i64> {
        self.track_id
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw)
    }

    pub fn to_oriented(&self) -> OrientedBox {
        OrientedBox {
            rotation: self.rotation(),
            center: self.center,
            size: self.size,
        }
    }

    pub fn vertices(&self) -> [Vector3<f64>; 8] {
        corners(&self.rotation(), &self.center, &self.size)
    }

    /// Same box with yaw and center replaced. Used when re-expressing a box
    /// in another frame under a yaw-only transform.
    pub(crate) fn with_pose(&self, center: Vector3<f64>, yaw: f64) -> Box3D {
        Box3D {
            center,
            yaw: normalize_angle(yaw),
            ..self.clone()
        }
    }

    /// Footprint is square within `tolerance` meters (|l - w| < tolerance).
    pub fn is_near_square(&self, tolerance: f64) -> bool {
        (self.size.x - self.size.y).abs() < tolerance
    }
}

/// A box with full 3D orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedBox {
    pub rotation: Rotation3<f64>,
    pub center: Vector3<f64>,
    pub size: Vector3<f64>,
}

impl OrientedBox {
    pub fn vertices(&self) -> [Vector3<f64>; 8] {
        corners(&self.rotation, &self.center, &self.size)
    }

    pub fn volume(&self) -> f64 {
        self.size.x * self.size.y * self.size.z
    }

    /// Half of the space diagonal: radius of the circumscribed sphere.
    pub fn circumradius(&self) -> f64 {
        0.5 * self.size.norm()
    }

    pub fn contains(&self, point: &Vector3<f64>) -> bool {
        let local = self.rotation.inverse() * (point - self.center);
        (0..3).all(|k| local[k].abs() <= 0.5 * self.size[k])
    }
}

impl From<&Box3D> for OrientedBox {
    fn from(b: &Box3D) -> Self {
        b.to_oriented()
    }
}

fn corners(rotation: &Rotation3<f64>, center: &Vector3<f64>, size: &Vector3<f64>) -> [Vector3<f64>; 8] {
    let half = size * 0.5;
    CORNER_SIGNS.map(|s| {
        let local = Vector3::new(s[0] * half.x, s[1] * half.y, s[2] * half.z);
        rotation * local + center
    })
}

/// Rigid transform x ↦ R·x + t, mapping infrastructure coordinates into the
/// vehicle frame when used as an extrinsic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Rotation3::identity(),
            translation,
        }
    }

    /// Rotation about +z by `yaw` followed by `translation`.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Rotation3::from_axis_angle(&Vector3::z_axis(), yaw),
            translation,
        }
    }

    /// Builds a transform from a rotation matrix, checking that it is a
    /// proper rotation to within `tol` and re-orthonormalising it.
    pub fn from_matrix_parts(rotation: Matrix3<f64>, translation: Vector3<f64>, tol: f64) -> Result<Self> {
        let ortho_err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho_err > tol || (det - 1.0).abs() > tol {
            return Err(Error::DegenerateGeometry(format!(
                "rotation block not orthonormal (|RᵀR - I| = {ortho_err:.3e}, det = {det:.6})"
            )));
        }
        Ok(RigidTransform {
            rotation: orthonormalize(&rotation),
            translation,
        })
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rinv = self.rotation.inverse();
        RigidTransform {
            rotation: rinv,
            translation: -(rinv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Carries a detection box into the target frame. The result keeps the
    /// box's size; its orientation is `R·Rz(yaw)`.
    pub fn apply_to_box(&self, b: &Box3D) -> OrientedBox {
        OrientedBox {
            rotation: self.rotation * b.rotation(),
            center: self.transform_point(&b.center()),
            size: b.size(),
        }
    }

    pub fn apply_to_oriented(&self, b: &OrientedBox) -> OrientedBox {
        OrientedBox {
            rotation: self.rotation * b.rotation,
            center: self.transform_point(&b.center),
            size: b.size,
        }
    }

    /// Rotation angle about +z, if the rotation is yaw-only to within `tol`.
    pub fn yaw_only(&self, tol: f64) -> Option<f64> {
        let m = self.rotation.matrix();
        let z_err = (m.column(2) - Vector3::z()).norm();
        (z_err <= tol).then(|| m[(1, 0)].atan2(m[(0, 0)]))
    }

    /// Carries a yaw-only box through a yaw-only transform, staying in the
    /// [`Box3D`] representation.
    pub fn apply_yaw_only(&self, b: &Box3D) -> Option<Box3D> {
        let yaw = self.yaw_only(1e-9)?;
        Some(b.with_pose(self.transform_point(&b.center()), b.yaw() + yaw))
    }

    /// Rotation angle in radians, in [0, π].
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }
}

/// Geodesic angle of a rotation (rad), in [0, π]. Equal to
/// arccos((tr R − 1) / 2), evaluated as an atan2 of the antisymmetric and
/// trace parts so it stays accurate near 0 and π.
pub fn rotation_angle(r: &Rotation3<f64>) -> f64 {
    let m = r.matrix();
    let axis = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    (0.5 * axis.norm()).atan2(0.5 * (m.trace() - 1.0))
}

/// Tolerance used when accepting a rotation block from outside.
pub const RIGID_TOL: f64 = 1e-6;

impl RigidTransform {
    /// Row-major 4×4 homogeneous matrix.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_homogeneous();
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }

    /// Parses a row-major homogeneous matrix. The bottom row must be
    /// (0, 0, 0, 1); the rotation block must be orthonormal with det +1 to
    /// within [`RIGID_TOL`] and is re-orthonormalised.
    pub fn from_rows(rows: &[[f64; 4]; 4]) -> std::result::Result<Self, RowsError> {
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(RowsError::Malformed("non-finite entry".into()));
        }
        if rows[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(RowsError::Malformed(format!("bottom row must be [0, 0, 0, 1], got {:?}", rows[3])));
        }
        let rot = Matrix3::from_fn(|r, c| rows[r][c]);
        let t = Vector3::new(rows[0][3], rows[1][3], rows[2][3]);
        RigidTransform::from_matrix_parts(rot, t, RIGID_TOL).map_err(|e| RowsError::NotRigid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowsError {
    Malformed(String),
    NotRigid(String),
}

impl fmt::Display for RowsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowsError::Malformed(m) | RowsError::NotRigid(m) => f.write_str(m),
        }
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[f64; 4]; 4]>::deserialize(d)?;
        RigidTransform::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Nearest proper rotation in the Frobenius sense.
pub(crate) fn orthonormalize(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Rotation3::from_matrix_unchecked(u * d * v_t)
}

/// Convex polytope stored as a list of planar faces.
#[derive(Debug, Clone)]
struct Polytope {
    faces: Vec<Vec<Vector3<f64>>>,
}

impl Polytope {
    fn from_box(b: &OrientedBox) -> Self {
        let v = b.vertices();
        Polytope {
            faces: BOX_FACES.iter().map(|f| f.iter().map(|&i| v[i]).collect()).collect(),
        }
    }

    fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Keeps the part with `normal·x <= offset`.
    fn clip(self, normal: &Vector3<f64>, offset: f64) -> Polytope {
        let any_outside = self
            .faces
            .iter()
            .flatten()
            .any(|p| normal.dot(p) - offset > PLANE_EPS);
        if !any_outside {
            return self;
        }

        let mut faces = Vec::with_capacity(self.faces.len() + 1);
        let mut cap: Vec<Vector3<f64>> = Vec::new();
        for face in &self.faces {
            let mut kept = Vec::with_capacity(face.len() + 2);
            for (k, p) in face.iter().enumerate() {
                let q = &face[(k + 1) % face.len()];
                let dp = normal.dot(p) - offset;
                let dq = normal.dot(q) - offset;
                if dp <= PLANE_EPS {
                    kept.push(*p);
                    if dp >= -PLANE_EPS {
                        cap.push(*p);
                    }
                }
                if (dp < -PLANE_EPS && dq > PLANE_EPS) || (dp > PLANE_EPS && dq < -PLANE_EPS) {
                    let x = p + (q - p) * (dp / (dp - dq));
                    kept.push(x);
                    cap.push(x);
                }
            }
            if kept.len() >= 3 {
                faces.push(kept);
            }
        }
        if faces.is_empty() {
            return Polytope { faces };
        }
        if let Some(cap_face) = order_planar(cap, normal) {
            faces.push(cap_face);
        }
        Polytope { faces }
    }

    fn volume(&self) -> f64 {
        let count: usize = self.faces.iter().map(Vec::len).sum();
        if count == 0 {
            return 0.0;
        }
        let reference = self.faces.iter().flatten().sum::<Vector3<f64>>() / count as f64;
        let mut vol = 0.0;
        for face in &self.faces {
            let a = face[0] - reference;
            for w in face[1..].windows(2) {
                let b = w[0] - reference;
                let c = w[1] - reference;
                vol += a.dot(&b.cross(&c)).abs();
            }
        }
        vol / 6.0
    }
}

/// Deduplicates coplanar points and sorts them by angle around their mean.
fn order_planar(points: Vec<Vector3<f64>>, normal: &Vector3<f64>) -> Option<Vec<Vector3<f64>>> {
    let mut unique: Vec<Vector3<f64>> = Vec::with_capacity(points.len());
    for p in points {
        if !unique.iter().any(|u| (u - p).norm() <= PLANE_EPS) {
            unique.push(p);
        }
    }
    if unique.len() < 3 {
        return None;
    }
    let centroid = unique.iter().sum::<Vector3<f64>>() / unique.len() as f64;
    let helper = if normal.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = normal.cross(&helper).normalize();
    let v = normal.cross(&u);
    let mut keyed: Vec<(f64, Vector3<f64>)> = unique
        .into_iter()
        .map(|p| {
            let d = p - centroid;
            (d.dot(&v).atan2(d.dot(&u)), p)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    Some(keyed.into_iter().map(|(_, p)| p).collect())
}

/// True when the circumscribed spheres of the two boxes do not meet, which
/// certifies zero overlap.
pub fn provably_disjoint(a: &OrientedBox, b: &OrientedBox) -> bool {
    (a.center - b.center).norm() > a.circumradius() + b.circumradius()
}

/// Exact volume of `a ∩ b`.
pub fn intersection_volume(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if provably_disjoint(a, b) {
        return 0.0;
    }
    let mut poly = Polytope::from_box(a);
    let axes = b.rotation.matrix();
    for k in 0..3 {
        let n: Vector3<f64> = axes.column(k).into_owned();
        let c = n.dot(&b.center);
        let half = 0.5 * b.size[k];
        poly = poly.clip(&n, c + half);
        if poly.is_empty() {
            return 0.0;
        }
        poly = poly.clip(&-n, -c + half);
        if poly.is_empty() {
            return 0.0;
        }
    }
    let vol = poly.volume();
    if vol < SLIVER_VOLUME {
        0.0
    } else {
        vol
    }
}

/// Volumetric intersection-over-union of two oriented boxes.
pub fn iou_3d(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let inter = intersection_volume(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}
