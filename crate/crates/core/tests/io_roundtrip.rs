mod common;

use std::fs;

use boxcalib::evaluation::{run_benchmark, BenchmarkOptions};
use boxcalib::io::{
    export_merged_geometry, export_report, load_dataset, load_extrinsic, load_report, load_scene, merged_geometry_ply,
    synth_scene_pair, write_dataset, write_extrinsic, write_scene, SynthParams,
};
use boxcalib::{calibrate, Box3D, Category, Error, Scene, StrategyConfig};
use common::*;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arb_box() -> impl Strategy<Value = Box3D> {
    (
        0usize..Category::ALL.len(),
        prop::array::uniform3(-1e3f64..1e3),
        prop::array::uniform3(0.01f64..20.0),
        -10.0f64..10.0,
        0.0f64..=1.0,
        prop::option::of(any::<i64>()),
    )
        .prop_map(|(c, center, size, yaw, conf, track)| {
            Box3D::new(Category::ALL[c], Vector3::from(center), Vector3::from(size), yaw)
                .unwrap()
                .with_confidence(conf)
                .unwrap()
                .with_track_id(track)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn scene_round_trip(boxes in prop::collection::vec(arb_box(), 0..12), ts in prop::option::of(0.0f64..1e9)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        let mut scene = Scene::new("frame_7", boxes);
        scene.timestamp = ts;
        write_scene(&scene, &path).unwrap();
        let back = load_scene(&path).unwrap();
        prop_assert_eq!(back, scene);
    }

    #[test]
    fn extrinsic_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_rigid(&mut rng, 200.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.json");
        write_extrinsic(&t, &path).unwrap();
        let back = load_extrinsic(&path).unwrap();
        prop_assert!((back.to_homogeneous() - t.to_homogeneous()).amax() < 1e-12);
    }
}

#[test]
fn missing_scene_file_names_the_path() {
    let err = load_scene("/nonexistent/scene.json").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("/nonexistent/scene.json"));
}

#[test]
fn report_round_trip() {
    let data: Vec<_> = (0..8)
        .map(|seed| {
            synth_scene_pair(&SynthParams {
                n_common: 3 + seed as usize,
                noise_center_sigma: 0.1,
                seed,
                ..Default::default()
            })
            .unwrap()
        })
        .collect();
    let report = run_benchmark(&data, &StrategyConfig::v1(), &BenchmarkOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    export_report(&report, &path).unwrap();
    let back = load_report(&path).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.recomputed().groups, report.groups);
}

#[test]
fn dataset_round_trip_and_byte_determinism() {
    let params = SynthParams {
        n_common: 5,
        n_infra_only: 1,
        noise_center_sigma: 0.1,
        seed: 9,
        ..Default::default()
    };
    let records: Vec<_> = (0..4)
        .map(|k| synth_scene_pair(&SynthParams { seed: 9 + k, ..params.clone() }).unwrap())
        .collect();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_dataset(a.path(), &records, Some(&params)).unwrap();
    write_dataset(b.path(), &records, Some(&params)).unwrap();
    for entry in fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
    }
    let (manifest, back) = load_dataset(a.path()).unwrap();
    assert_eq!(manifest.pairs.len(), 4);
    assert_eq!(back.len(), 4);
    for (x, y) in back.iter().zip(&records) {
        assert_eq!(x.scene_inf, y.scene_inf);
        assert_eq!(x.scene_veh, y.scene_veh);
        assert!((x.gt_extrinsic.unwrap().to_homogeneous() - y.gt_extrinsic.unwrap().to_homogeneous()).amax() < 1e-12);
    }
}

#[test]
fn same_seed_gives_identical_records() {
    let params = SynthParams {
        n_common: 7,
        n_infra_only: 2,
        n_vehicle_only: 2,
        noise_center_sigma: 0.2,
        noise_yaw_sigma: 0.03,
        noise_size_sigma: 0.05,
        seed: 77,
        ..Default::default()
    };
    assert_eq!(synth_scene_pair(&params).unwrap(), synth_scene_pair(&params).unwrap());
}

#[test]
fn zero_noise_common_boxes_are_exact_images() {
    let rec = synth_scene_pair(&SynthParams {
        n_common: 8,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let gt = rec.gt_extrinsic.unwrap();
    for b in &rec.scene_inf.boxes {
        let image = gt.apply_yaw_only(b).unwrap();
        assert!(rec.scene_veh.boxes.contains(&image));
    }
}

#[test]
fn merged_geometry_counts_and_coincidence() {
    let rec = synth_scene_pair(&SynthParams {
        n_common: 6,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let res = calibrate(&rec.scene_inf, &rec.scene_veh, &StrategyConfig::v1());
    let ply = merged_geometry_ply(&res, &rec.scene_inf, &rec.scene_veh);
    let k = rec.scene_inf.len() + rec.scene_veh.len();
    assert!(ply.contains(&format!("element vertex {}\n", 8 * k)));
    assert!(ply.contains(&format!("element face {}\n", 6 * k)));

    let body: Vec<&str> = ply.split("end_header\n").nth(1).unwrap().lines().collect();
    assert_eq!(body.len(), 14 * k);
    let verts: Vec<(Vector3<f64>, u8)> = body[..8 * k]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (
                Vector3::new(f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap()),
                f[3].parse().unwrap(),
            )
        })
        .collect();
    let (veh, inf): (Vec<_>, Vec<_>) = verts.iter().partition(|v| v.1 == 0);
    assert_eq!(veh.len(), inf.len());
    // every transformed infrastructure corner lands on a vehicle corner
    for (p, _) in &inf {
        let nearest = veh.iter().map(|(q, _)| (p - q).norm()).fold(f64::INFINITY, f64::min);
        assert!(nearest < 1e-6, "{nearest}");
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("merged.ply");
    export_merged_geometry(&res, &rec.scene_inf, &rec.scene_veh, &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), ply);
}
