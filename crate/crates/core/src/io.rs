//! File formats and synthetic data.
//!
//! * Scene files: JSON, either a bare array of boxes or an object
//!   `{"frame_id", "timestamp", "boxes": [...]}`. Each box is
//!   `{"category", "center": [x, y, z], "size": [l, w, h], "yaw",
//!   "confidence"?, "track_id"?}`.
//! * Extrinsic files: JSON 4×4 row-major homogeneous matrix, or the
//!   `{"rotation": 3×3, "translation": 3×1}` layout used by DAIR-V2X calib
//!   files.
//! * Datasets: a directory with `manifest.json` listing frame-pair file
//!   triples (paths relative to the directory).
//! * Merged geometry: ASCII PLY with a per-vertex `source` label.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::affinity::{Scene, StrategyConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_result, BenchmarkReport, Difficulty, FramePairRecord};
use crate::geometry::{Box3D, Category, RigidTransform, RowsError};
use crate::pipeline::{CalibrationResult, CalibrationStatus, StageTimings};

/// PRNG behind every synthetic dataset, recorded in dataset manifests.
pub const GENERATOR: &str = "ChaCha8 (rand_chacha 0.9, ChaCha8Rng::seed_from_u64)";

pub const MANIFEST_FILE: &str = "manifest.json";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_json(path: &Path, text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable value");
    s.push('\n');
    s
}

struct Fields<'a> {
    path: &'a Path,
    context: String,
    obj: &'a Map<String, Value>,
}

impl<'a> Fields<'a> {
    fn schema(&self, message: impl Into<String>) -> Error {
        Error::Schema {
            path: self.path.to_path_buf(),
            context: self.context.clone(),
            message: message.into(),
        }
    }

    fn required(&self, key: &str) -> Result<&'a Value> {
        self.obj
            .get(key)
            .filter(|v| !v.is_null())
            .ok_or_else(|| self.schema(format!("missing required field `{key}`")))
    }

    fn number(&self, key: &str, v: &Value) -> Result<f64> {
        v.as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| self.schema(format!("field `{key}` must be a number, got {v}")))
    }

    fn vec3(&self, key: &str) -> Result<Vector3<f64>> {
        let v = self.required(key)?;
        let arr = v
            .as_array()
            .filter(|a| a.len() == 3)
            .ok_or_else(|| self.schema(format!("field `{key}` must be an array of 3 numbers, got {v}")))?;
        Ok(Vector3::new(
            self.number(key, &arr[0])?,
            self.number(key, &arr[1])?,
            self.number(key, &arr[2])?,
        ))
    }

    fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.obj.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(self.schema(format!("unknown field `{k}`"))),
            None => Ok(()),
        }
    }
}

const BOX_FIELDS: [&str; 6] = ["category", "center", "size", "yaw", "confidence", "track_id"];

fn parse_box(path: &Path, index: usize, v: &Value) -> Result<Box3D> {
    let context = format!("box {index}");
    let obj = v.as_object().ok_or_else(|| Error::Schema {
        path: path.to_path_buf(),
        context: context.clone(),
        message: format!("expected an object, got {v}"),
    })?;
    let f = Fields { path, context, obj };
    f.reject_unknown(&BOX_FIELDS)?;
    let category = f
        .required("category")?
        .as_str()
        .map(Category::from_label)
        .ok_or_else(|| f.schema("field `category` must be a string"))?;
    let center = f.vec3("center")?;
    let size = f.vec3("size")?;
    if size.iter().any(|s| *s <= 0.0) {
        return Err(f.schema(format!("field `size` must be positive, got [{}, {}, {}]", size.x, size.y, size.z)));
    }
    let yaw = f.number("yaw", f.required("yaw")?)?;
    let mut b = Box3D::new(category, center, size, yaw).map_err(|e| f.schema(e.to_string()))?;
    if let Some(c) = obj.get("confidence").filter(|v| !v.is_null()) {
        let c = f.number("confidence", c)?;
        b = b.with_confidence(c).map_err(|e| f.schema(e.to_string()))?;
    }
    if let Some(t) = obj.get("track_id").filter(|v| !v.is_null()) {
        let id = t
            .as_i64()
            .ok_or_else(|| f.schema(format!("field `track_id` must be an integer, got {t}")))?;
        b = b.with_track_id(Some(id));
    }
    Ok(b)
}

/// Parses scene JSON text. `path` labels errors and, for bare arrays,
/// provides the frame id (file stem).
pub fn parse_scene(path: &Path, text: &str) -> Result<Scene> {
    let value = parse_json(path, text)?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let (frame_id, timestamp, boxes) = match &value {
        Value::Array(items) => (stem, None, items),
        Value::Object(obj) => {
            let f = Fields {
                path,
                context: "scene".into(),
                obj,
            };
            f.reject_unknown(&["frame_id", "timestamp", "boxes"])?;
            let boxes = f
                .required("boxes")?
                .as_array()
                .ok_or_else(|| f.schema("field `boxes` must be an array"))?;
            let frame_id = match obj.get("frame_id") {
                None | Some(Value::Null) => stem,
                Some(Value::String(s)) => s.clone(),
                Some(other) => return Err(f.schema(format!("field `frame_id` must be a string, got {other}"))),
            };
            let timestamp = match obj.get("timestamp") {
                None | Some(Value::Null) => None,
                Some(t) => Some(f.number("timestamp", t)?),
            };
            (frame_id, timestamp, boxes)
        }
        other => {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                context: "scene".into(),
                message: format!("expected an array of boxes or a scene object, got {other}"),
            })
        }
    };
    let boxes = boxes
        .iter()
        .enumerate()
        .map(|(k, v)| parse_box(path, k, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        frame_id,
        timestamp,
        boxes,
    })
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    parse_scene(path, &read(path)?)
}

#[derive(Serialize)]
struct BoxOut<'a> {
    category: &'a str,
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
    confidence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    track_id: Option<i64>,
}

#[derive(Serialize)]
struct SceneOut<'a> {
    frame_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<f64>,
    boxes: Vec<BoxOut<'a>>,
}

pub fn scene_to_json(scene: &Scene) -> String {
    let boxes = scene
        .boxes
        .iter()
        .map(|b| BoxOut {
            category: b.category().as_str(),
            center: b.center().into(),
            size: b.size().into(),
            yaw: b.yaw(),
            confidence: b.confidence(),
            track_id: b.track_id(),
        })
        .collect();
    to_json(&SceneOut {
        frame_id: &scene.frame_id,
        timestamp: scene.timestamp,
        boxes,
    })
}

pub fn write_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &scene_to_json(scene))
}

fn matrix_rows(path: &Path, v: &Value, rows: usize, cols: usize, what: &str) -> Result<Vec<Vec<f64>>> {
    let malformed = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        location: what.to_string(),
        message: msg,
    };
    let arr = v
        .as_array()
        .filter(|a| a.len() == rows)
        .ok_or_else(|| malformed(format!("expected {rows} rows")))?;
    arr.iter()
        .enumerate()
        .map(|(r, row)| {
            let row = row
                .as_array()
                .filter(|a| a.len() == cols)
                .ok_or_else(|| malformed(format!("row {r}: expected {cols} numbers")))?;
            row.iter()
                .map(|x| {
                    x.as_f64()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| malformed(format!("row {r}: `{x}` is not a number")))
                })
                .collect()
        })
        .collect()
}

pub fn parse_extrinsic(path: &Path, text: &str) -> Result<RigidTransform> {
    let value = parse_json(path, text)?;
    let rows: [[f64; 4]; 4] = match &value {
        Value::Object(obj) if obj.contains_key("rotation") => {
            let r = matrix_rows(path, &obj["rotation"], 3, 3, "rotation")?;
            let t = obj
                .get("translation")
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    location: "translation".into(),
                    message: "missing".into(),
                })?;
            let t = matrix_rows(path, t, 3, 1, "translation")?;
            std::array::from_fn(|i| {
                if i == 3 {
                    [0.0, 0.0, 0.0, 1.0]
                } else {
                    [r[i][0], r[i][1], r[i][2], t[i][0]]
                }
            })
        }
        _ => {
            let m = matrix_rows(path, &value, 4, 4, "matrix")?;
            std::array::from_fn(|i| std::array::from_fn(|j| m[i][j]))
        }
    };
    RigidTransform::from_rows(&rows).map_err(|e| match e {
        RowsError::Malformed(message) => Error::Parse {
            path: path.to_path_buf(),
            location: "matrix".into(),
            message,
        },
        RowsError::NotRigid(message) => Error::NotRigid {
            path: path.to_path_buf(),
            message,
        },
    })
}

/// Reads an extrinsic; the rotation block is re-orthonormalised when it is
/// within 1e-6 of a proper rotation and rejected otherwise.
pub fn load_extrinsic(path: impl AsRef<Path>) -> Result<RigidTransform> {
    let path = path.as_ref();
    parse_extrinsic(path, &read(path)?)
}

pub fn write_extrinsic(t: &RigidTransform, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &to_json(t))
}

/// Reads a DAIR-V2X label file (array of objects with `type`,
/// `3d_dimensions: {h, w, l}`, `3d_location: {x, y, z}` and `rotation`).
/// Dimensions map to size (l, w, h) and `rotation` to yaw. Numbers may be
/// given as numeric strings, as in some dataset releases.
pub fn load_dair_v2x_labels(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let value = parse_json(path, &read(path)?)?;
    let items = value.as_array().ok_or_else(|| Error::Schema {
        path: path.to_path_buf(),
        context: "labels".into(),
        message: "expected an array".into(),
    })?;
    let mut boxes = Vec::with_capacity(items.len());
    for (k, item) in items.iter().enumerate() {
        let schema = |message: String| Error::Schema {
            path: path.to_path_buf(),
            context: format!("label {k}"),
            message,
        };
        let num = |v: Option<&Value>, name: &str| -> Result<f64> {
            let v = v.ok_or_else(|| schema(format!("missing `{name}`")))?;
            v.as_f64()
                .or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| schema(format!("`{name}` is not a number: {v}")))
        };
        let dims = item.get("3d_dimensions");
        let loc = item.get("3d_location");
        let size = Vector3::new(
            num(dims.and_then(|d| d.get("l")), "3d_dimensions.l")?,
            num(dims.and_then(|d| d.get("w")), "3d_dimensions.w")?,
            num(dims.and_then(|d| d.get("h")), "3d_dimensions.h")?,
        );
        let center = Vector3::new(
            num(loc.and_then(|d| d.get("x")), "3d_location.x")?,
            num(loc.and_then(|d| d.get("y")), "3d_location.y")?,
            num(loc.and_then(|d| d.get("z")), "3d_location.z")?,
        );
        let yaw = num(item.get("rotation"), "rotation")?;
        let category = Category::from_label(item.get("type").and_then(Value::as_str).unwrap_or("other"));
        boxes.push(Box3D::new(category, center, size, yaw).map_err(|e| schema(e.to_string()))?);
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Scene::new(stem, boxes))
}

/// How the ground-truth extrinsic of a synthetic pair is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GtTransform {
    /// Fixed transform; must be a rotation about +z plus a translation.
    Fixed { matrix: RigidTransform },
    /// Yaw uniform in `yaw_range` (rad); translation norm at most
    /// `max_translation` (m) with |z| at most `max_z` (m).
    Random {
        yaw_range: [f64; 2],
        max_translation: f64,
        max_z: f64,
    },
}

/// Parameters of [`synth_scene_pair`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n_common: usize,
    pub n_infra_only: usize,
    pub n_vehicle_only: usize,
    /// Side of the square (m), centred on the infrastructure origin, in which
    /// objects are placed.
    pub area: f64,
    pub gt_transform: GtTransform,
    pub noise_center_sigma: f64,
    pub noise_yaw_sigma: f64,
    pub noise_size_sigma: f64,
    /// Relative weights over categories.
    pub category_mix: BTreeMap<Category, f64>,
    /// Extra clearance (m) between the footprint circles of any two objects.
    pub min_gap: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_common: 6,
            n_infra_only: 0,
            n_vehicle_only: 0,
            area: 60.0,
            gt_transform: GtTransform::Random {
                yaw_range: [-std::f64::consts::PI, std::f64::consts::PI],
                max_translation: 100.0,
                max_z: 2.0,
            },
            noise_center_sigma: 0.0,
            noise_yaw_sigma: 0.0,
            noise_size_sigma: 0.0,
            category_mix: default_category_mix(),
            min_gap: 1.0,
            seed: 0,
        }
    }
}

fn default_category_mix() -> BTreeMap<Category, f64> {
    [
        (Category::Car, 0.6),
        (Category::Van, 0.1),
        (Category::Truck, 0.08),
        (Category::Bus, 0.04),
        (Category::Pedestrian, 0.1),
        (Category::Cyclist, 0.08),
    ]
    .into_iter()
    .collect()
}

/// Nominal (length, width, height) per category.
fn nominal_size(c: Category) -> Vector3<f64> {
    let (l, w, h) = match c {
        Category::Car => (4.5, 1.9, 1.6),
        Category::Van => (5.2, 2.0, 2.2),
        Category::Truck => (8.5, 2.5, 3.2),
        Category::Bus => (11.5, 2.6, 3.3),
        Category::Pedestrian => (0.6, 0.6, 1.7),
        Category::Cyclist => (1.8, 0.7, 1.7),
        Category::Tricyclist => (2.6, 1.3, 1.7),
        Category::Motorcyclist => (2.1, 0.8, 1.6),
        Category::Other => (1.0, 1.0, 1.0),
    };
    Vector3::new(l, w, h)
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        for (name, v) in [
            ("noise_center_sigma", self.noise_center_sigma),
            ("noise_yaw_sigma", self.noise_yaw_sigma),
            ("noise_size_sigma", self.noise_size_sigma),
            ("min_gap", self.min_gap),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.area > 0.0) {
            return bad(format!("area must be > 0, got {}", self.area));
        }
        if self.category_mix.values().any(|w| !(*w >= 0.0)) || self.category_mix.values().sum::<f64>() <= 0.0 {
            return bad("category_mix needs non-negative weights with a positive sum".into());
        }
        match &self.gt_transform {
            GtTransform::Fixed { matrix } => {
                if matrix.yaw_only(1e-9).is_none() {
                    return bad("fixed gt_transform must rotate about +z only".into());
                }
            }
            GtTransform::Random {
                yaw_range,
                max_translation,
                max_z,
            } => {
                if !(yaw_range[0] <= yaw_range[1]) || !(*max_translation >= 0.0) || !(*max_z >= 0.0) {
                    return bad("random gt_transform needs yaw_range[0] <= yaw_range[1] and non-negative ranges".into());
                }
            }
        }
        Ok(())
    }
}

fn sample_category(rng: &mut ChaCha8Rng, mix: &BTreeMap<Category, f64>) -> Category {
    let total: f64 = mix.values().sum();
    let mut x = rng.random::<f64>() * total;
    for (c, w) in mix {
        if x < *w {
            return *c;
        }
        x -= w;
    }
    *mix.keys().next_back().expect("non-empty mix")
}

fn footprint_radius(b: &Box3D) -> f64 {
    0.5 * b.size().xy().norm()
}

const PLACEMENT_ATTEMPTS: usize = 2000;

/// Generates one frame pair. Objects are placed on the ground plane of the
/// infrastructure frame with non-overlapping footprints; common objects are
/// carried into the vehicle frame by the ground truth and perturbed by
/// independent Gaussian noise, single-end objects appear on one side only.
/// Both box lists are shuffled. Deterministic in `params` (including seed).
pub fn synth_scene_pair(params: &SynthParams) -> Result<FramePairRecord> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let gt = match &params.gt_transform {
        GtTransform::Fixed { matrix } => *matrix,
        GtTransform::Random {
            yaw_range,
            max_translation,
            max_z,
        } => {
            let yaw = yaw_range[0] + (yaw_range[1] - yaw_range[0]) * rng.random::<f64>();
            let z_max = max_z.min(*max_translation);
            let z = z_max * (2.0 * rng.random::<f64>() - 1.0);
            let radius = (max_translation * max_translation - z * z).max(0.0).sqrt() * rng.random::<f64>();
            let azimuth = 2.0 * std::f64::consts::PI * rng.random::<f64>();
            RigidTransform::from_yaw(yaw, Vector3::new(radius * azimuth.cos(), radius * azimuth.sin(), z))
        }
    };

    let total = params.n_common + params.n_infra_only + params.n_vehicle_only;
    let mut placed: Vec<Box3D> = Vec::with_capacity(total);
    let half = params.area / 2.0;
    for _ in 0..total {
        let category = sample_category(&mut rng, &params.category_mix);
        let jitter = 0.9 + 0.2 * rng.random::<f64>();
        let size = nominal_size(category) * jitter;
        let mut ok = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let x = -half + params.area * rng.random::<f64>();
            let y = -half + params.area * rng.random::<f64>();
            let yaw = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * rng.random::<f64>();
            let candidate = Box3D::new(category, Vector3::new(x, y, size.z / 2.0), size, yaw)?;
            let r = footprint_radius(&candidate);
            let clear = placed.iter().all(|other| {
                (other.center().xy() - candidate.center().xy()).norm() > r + footprint_radius(other) + params.min_gap
            });
            if clear {
                placed.push(candidate);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::PlacementFailure {
                wanted: total,
                attempts: PLACEMENT_ATTEMPTS,
            });
        }
    }

    let center_noise = Normal::new(0.0, params.noise_center_sigma).expect("validated sigma");
    let yaw_noise = Normal::new(0.0, params.noise_yaw_sigma).expect("validated sigma");
    let size_noise = Normal::new(0.0, params.noise_size_sigma).expect("validated sigma");

    let (common, rest) = placed.split_at(params.n_common);
    let (infra_only, vehicle_only) = rest.split_at(params.n_infra_only);

    let mut infra: Vec<Box3D> = common.iter().chain(infra_only).cloned().collect();
    let mut vehicle = Vec::with_capacity(params.n_common + params.n_vehicle_only);
    for b in common {
        let moved = gt.apply_yaw_only(b).expect("yaw-only ground truth");
        let noisy = if params.noise_center_sigma > 0.0 || params.noise_yaw_sigma > 0.0 || params.noise_size_sigma > 0.0 {
            let dc = Vector3::new(
                center_noise.sample(&mut rng),
                center_noise.sample(&mut rng),
                center_noise.sample(&mut rng),
            );
            let ds = Vector3::new(
                size_noise.sample(&mut rng),
                size_noise.sample(&mut rng),
                size_noise.sample(&mut rng),
            );
            let size = (moved.size() + ds).map(|s| s.max(0.05));
            Box3D::new(moved.category(), moved.center() + dc, size, moved.yaw() + yaw_noise.sample(&mut rng))?
        } else {
            moved
        };
        vehicle.push(noisy);
    }
    for b in vehicle_only {
        vehicle.push(gt.apply_yaw_only(b).expect("yaw-only ground truth"));
    }
    infra.shuffle(&mut rng);
    vehicle.shuffle(&mut rng);

    Ok(FramePairRecord {
        scene_inf: Scene::new(format!("infra_{}", params.seed), infra),
        scene_veh: Scene::new(format!("vehicle_{}", params.seed), vehicle),
        gt_extrinsic: Some(gt),
        difficulty: Difficulty::Unknown,
    })
}

/// Seed of pair `k` in a dataset generated from `base_seed`: the k-th
/// output of a ChaCha8 stream seeded with `base_seed`.
pub fn pair_seeds(base_seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    (0..n).map(|_| rng.random()).collect()
}

/// `n` frame pairs from `params`, pair k using seed `pair_seeds(params.seed, n)[k]`.
pub fn synth_dataset(params: &SynthParams, n: usize) -> Result<Vec<FramePairRecord>> {
    pair_seeds(params.seed, n)
        .into_par_iter()
        .map(|seed| synth_scene_pair(&SynthParams { seed, ..params.clone() }))
        .collect()
}

/// One frame pair in a dataset manifest. Paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub infra: PathBuf,
    pub vehicle: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// PRNG used to generate the data, for synthetic datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<SynthParams>,
    pub pairs: Vec<ManifestEntry>,
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = read(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })
}

/// Loads every frame pair listed in `dir/manifest.json`, in manifest order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Manifest, Vec<FramePairRecord>)> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    let records = manifest
        .pairs
        .iter()
        .map(|e| {
            Ok(FramePairRecord {
                scene_inf: load_scene(dir.join(&e.infra))?,
                scene_veh: load_scene(dir.join(&e.vehicle))?,
                gt_extrinsic: e.gt.as_ref().map(|g| load_extrinsic(dir.join(g))).transpose()?,
                difficulty: e.difficulty.unwrap_or_default(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, records))
}

/// Writes `records` as `pair_NNNN_{infra,vehicle,gt}.json` plus a manifest.
pub fn write_dataset(dir: impl AsRef<Path>, records: &[FramePairRecord], params: Option<&SynthParams>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut pairs = Vec::with_capacity(records.len());
    for (k, rec) in records.iter().enumerate() {
        let name = format!("pair_{k:04}");
        let infra = PathBuf::from(format!("{name}_infra.json"));
        let vehicle = PathBuf::from(format!("{name}_vehicle.json"));
        write_scene(&rec.scene_inf, dir.join(&infra))?;
        write_scene(&rec.scene_veh, dir.join(&vehicle))?;
        let gt = match &rec.gt_extrinsic {
            Some(t) => {
                let p = PathBuf::from(format!("{name}_gt.json"));
                write_extrinsic(t, dir.join(&p))?;
                Some(p)
            }
            None => None,
        };
        pairs.push(ManifestEntry {
            name,
            infra,
            vehicle,
            gt,
            difficulty: (rec.difficulty != Difficulty::Unknown).then_some(rec.difficulty),
        });
    }
    let manifest = Manifest {
        generator: params.map(|_| GENERATOR.to_string()),
        params: params.cloned(),
        pairs,
    };
    write(&dir.join(MANIFEST_FILE), &to_json(&manifest))?;
    Ok(manifest)
}

pub fn report_to_json(report: &BenchmarkReport) -> String {
    to_json(report)
}

pub fn export_report(report: &BenchmarkReport, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &report_to_json(report))
}

pub fn load_report(path: impl AsRef<Path>) -> Result<BenchmarkReport> {
    let path = path.as_ref();
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })
}

/// One accepted pair as written to result files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub infra: usize,
    pub vehicle: usize,
    pub affinity: f64,
}

/// On-disk form of a [`CalibrationResult`], optionally scored against
/// ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub status: CalibrationStatus,
    pub extrinsic: RigidTransform,
    pub scene_oiou: f64,
    pub threshold_used: f64,
    pub matches: Vec<MatchRecord>,
    pub stage_timings: StageTimings,
    pub strategy: StrategyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rre_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rte_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
}

impl ResultFile {
    /// With `gt`, failed calibrations carry `success: false` and no errors.
    pub fn new(result: &CalibrationResult, gt: Option<&RigidTransform>, success_threshold_m: f64) -> Self {
        let (rre_deg, rte_m, success) = match gt {
            Some(gt) => {
                let (r, t, ok) = evaluate_result(result, gt, success_threshold_m);
                (r, t, Some(ok))
            }
            None => (None, None, None),
        };
        ResultFile {
            status: result.status,
            extrinsic: result.extrinsic,
            scene_oiou: result.scene_oiou,
            threshold_used: result.matches.threshold_used,
            matches: result
                .matches
                .pairs
                .iter()
                .map(|p| MatchRecord {
                    infra: p.infra,
                    vehicle: p.vehicle,
                    affinity: p.affinity,
                })
                .collect(),
            stage_timings: result.stage_timings,
            strategy: result.strategy.clone(),
            rre_deg,
            rte_m,
            success,
        }
    }
}

pub fn export_result(result: &ResultFile, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &to_json(result))
}

pub fn load_result(path: impl AsRef<Path>) -> Result<ResultFile> {
    let path = path.as_ref();
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })
}

/// Vertex label written to the PLY `source` channel.
pub const SOURCE_VEHICLE: u8 = 0;
pub const SOURCE_INFRA: u8 = 1;

/// ASCII PLY of every vehicle box followed by every infrastructure box
/// carried into the vehicle frame by `result.extrinsic`: 8 vertices and 6
/// quad faces per box, each vertex tagged with its `source`.
pub fn merged_geometry_ply(result: &CalibrationResult, scene_inf: &Scene, scene_veh: &Scene) -> String {
    let mut boxes: Vec<([Vector3<f64>; 8], u8)> = scene_veh.boxes.iter().map(|b| (b.vertices(), SOURCE_VEHICLE)).collect();
    boxes.extend(
        scene_inf
            .transformed(&result.extrinsic)
            .iter()
            .map(|b| (b.vertices(), SOURCE_INFRA)),
    );
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str("comment source 0 = vehicle box, 1 = infrastructure box in vehicle frame\n");
    let _ = writeln!(out, "element vertex {}", boxes.len() * 8);
    out.push_str("property double x\nproperty double y\nproperty double z\nproperty uchar source\n");
    let _ = writeln!(out, "element face {}", boxes.len() * 6);
    out.push_str("property list uchar int vertex_indices\nend_header\n");
    for (verts, source) in &boxes {
        for v in verts {
            let _ = writeln!(out, "{} {} {} {}", v.x, v.y, v.z, source);
        }
    }
    const QUADS: [[usize; 4]; 6] = [
        [0, 3, 2, 1],
        [4, 5, 6, 7],
        [0, 1, 5, 4],
        [1, 2, 6, 5],
        [2, 3, 7, 6],
        [3, 0, 4, 7],
    ];
    for k in 0..boxes.len() {
        for q in QUADS {
            let _ = writeln!(out, "4 {} {} {} {}", 8 * k + q[0], 8 * k + q[1], 8 * k + q[2], 8 * k + q[3]);
        }
    }
    out
}

pub fn export_merged_geometry(
    result: &CalibrationResult,
    scene_inf: &Scene,
    scene_veh: &Scene,
    path: impl AsRef<Path>,
) -> Result<()> {
    write(path.as_ref(), &merged_geometry_ply(result, scene_inf, scene_veh))
}
