//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use boxcalib::evaluation::{rre, run_benchmark, BenchmarkOptions, BenchmarkReport};
use boxcalib::extrinsics::svd_fit_weighted;
use boxcalib::geometry::iou_3d;
use boxcalib::io::{load_dataset, synth_dataset, SynthParams};
use boxcalib::matching::{assignment_weight, solve_assignment};
use boxcalib::pipeline::monitor_oiou;
use boxcalib::{calibrate, AffinityMatrix, CalibrationStatus, Difficulty, OrientedBox, RigidTransform, Scene, StrategyConfig};
use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn random_rotation(rng: &mut impl Rng) -> Rotation3<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let q = Quaternion::new(
        (1.0 - u1).sqrt() * (tau * u2).sin(),
        (1.0 - u1).sqrt() * (tau * u2).cos(),
        u1.sqrt() * (tau * u3).sin(),
        u1.sqrt() * (tau * u3).cos(),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix()
}

fn random_vec(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

fn quaternion_angle_deg(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
    let d = UnitQuaternion::from_rotation_matrix(a).inverse() * UnitQuaternion::from_rotation_matrix(b);
    (2.0 * d.imag().norm().atan2(d.w.abs())).to_degrees()
}

fn noisy_params() -> SynthParams {
    SynthParams {
        n_common: 6,
        n_infra_only: 2,
        n_vehicle_only: 2,
        noise_center_sigma: 0.2,
        noise_yaw_sigma: 2f64.to_radians(),
        seed: 2002,
        ..Default::default()
    }
}

fn summary(report: &BenchmarkReport) -> (f64, f64) {
    let all = report.group("all").expect("all group");
    (all.success_rate_pct, all.mean_rte_m.unwrap_or(f64::INFINITY))
}

fn c1_noiseless() -> Verdict {
    let start = Instant::now();
    let records: Vec<_> = (0..6usize)
        .flat_map(|k| {
            let params = SynthParams {
                n_common: 5 + k,
                seed: 1000 + k as u64,
                ..Default::default()
            };
            let n = if k < 2 { 34 } else { 33 };
            synth_dataset(&params, n).expect("synthetic data")
        })
        .collect();
    let report = run_benchmark(&records, &StrategyConfig::v1(), &BenchmarkOptions::default()).expect("benchmark");
    let elapsed = start.elapsed().as_secs_f64();
    let rtes: Vec<f64> = report.rows.iter().map(|r| r.rte_m.unwrap_or(f64::INFINITY)).collect();
    let rres: Vec<f64> = report.rows.iter().map(|r| r.rre_deg.unwrap_or(f64::INFINITY)).collect();
    let (rate, _) = summary(&report);
    let (m_rte, m_rre) = (median(rtes), median(rres));
    verdict(
        records.len() == 200 && rate == 100.0 && m_rte < 1e-3 && m_rre < 0.01 && elapsed < 60.0,
        format!(
            "{} pairs, success {rate:.1}%, median RTE {m_rte:.2e} m, median RRE {m_rre:.2e} deg, {elapsed:.1} s",
            records.len()
        ),
    )
}

fn c2_noise(records: &[boxcalib::FramePairRecord]) -> Verdict {
    let report = run_benchmark(records, &StrategyConfig::v1(), &BenchmarkOptions::default()).expect("benchmark");
    let (rate, mean_rte) = summary(&report);
    verdict(
        rate >= 90.0 && mean_rte <= 0.5,
        format!("success {rate:.1}% (>= 90), mean RTE {mean_rte:.3} m (<= 0.5)"),
    )
}

fn c2_external() -> Option<Verdict> {
    let dir = std::env::var_os("BOXCALIB_DAIR_DATASET")?;
    let (_, records) = match load_dataset(Path::new(&dir)) {
        Ok(d) => d,
        Err(e) => return Some(verdict(false, format!("cannot load {}: {e}", Path::new(&dir).display()))),
    };
    let report = match run_benchmark(&records, &StrategyConfig::v1(), &BenchmarkOptions::default()) {
        Ok(r) => r,
        Err(e) => return Some(verdict(false, e.to_string())),
    };
    let Some(easy) = report.group(Difficulty::Easy.as_str()) else {
        return Some(verdict(false, "no easy pairs"));
    };
    let (r, t) = (easy.mean_rre_deg.unwrap_or(f64::INFINITY), easy.mean_rte_m.unwrap_or(f64::INFINITY));
    Some(verdict(
        r <= 1.0 && t <= 0.8 && easy.success_rate_pct >= 90.0,
        format!(
            "easy group: {} pairs, RRE {r:.2} deg, RTE {t:.2} m, success {:.1}%",
            easy.frames, easy.success_rate_pct
        ),
    ))
}

fn c3_ablation(records: &[boxcalib::FramePairRecord]) -> Verdict {
    let run = |c: StrategyConfig| summary(&run_benchmark(records, &c, &BenchmarkOptions::default()).expect("benchmark"));
    let (s1, e1) = run(StrategyConfig::v1());
    let (s2, e2) = run(StrategyConfig::v2());
    let (s3, e3) = run(StrategyConfig::v3());
    verdict(
        s1 >= s2 && s1 >= s3 && e1 <= e2,
        format!("success v1 {s1:.1}% / v2 {s2:.1}% / v3 {s3:.1}%, mean RTE v1 {e1:.4} / v2 {e2:.4} / v3 {e3:.4} m"),
    )
}

fn c4_runtime() -> Verdict {
    let records = synth_dataset(
        &SynthParams {
            n_common: 12,
            n_infra_only: 3,
            n_vehicle_only: 3,
            area: 80.0,
            noise_center_sigma: 0.1,
            noise_yaw_sigma: 1f64.to_radians(),
            seed: 404,
            ..Default::default()
        },
        50,
    )
    .expect("synthetic data");
    let times: Vec<f64> = records
        .iter()
        .map(|r| {
            assert_eq!((r.scene_inf.len(), r.scene_veh.len()), (15, 15));
            let t = Instant::now();
            let res = calibrate(&r.scene_inf, &r.scene_veh, &StrategyConfig::v1());
            std::hint::black_box(res);
            t.elapsed().as_secs_f64()
        })
        .collect();
    let worst = times.iter().copied().fold(0.0, f64::max);
    let med = median(times);
    verdict(med <= 0.35, format!("m = n = 15: median {:.1} ms, max {:.1} ms over 50 pairs", med * 1e3, worst * 1e3))
}

fn monte_carlo_iou(a: &OrientedBox, b: &OrientedBox, samples: usize, rng: &mut impl Rng) -> f64 {
    let hits = (0..samples)
        .filter(|_| {
            let local = Vector3::new(
                a.size.x * (rng.random::<f64>() - 0.5),
                a.size.y * (rng.random::<f64>() - 0.5),
                a.size.z * (rng.random::<f64>() - 0.5),
            );
            b.contains(&(a.rotation * local + a.center))
        })
        .count();
    let inter = a.volume() * hits as f64 / samples as f64;
    inter / (a.volume() + b.volume() - inter)
}

fn brute_force_assignment(a: &[Vec<f64>]) -> f64 {
    let (m, n) = (a.len(), a[0].len());
    let get = |i: usize, j: usize| if m <= n { a[i][j] } else { a[j][i] };
    fn go(k: usize, small: usize, used: &mut [bool], get: &dyn Fn(usize, usize) -> f64) -> f64 {
        if k == small {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(get(k, j) + go(k + 1, small, used, get));
                used[j] = false;
            }
        }
        best
    }
    go(0, m.min(n), &mut vec![false; m.max(n)], &get)
}

fn c5_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let mut iou_err = 0.0f64;
    for _ in 0..100 {
        let mut boxes = [0.0, 1.0].map(|spread| OrientedBox {
            rotation: random_rotation(&mut rng),
            center: random_vec(&mut rng, spread),
            size: Vector3::new(
                0.5 + 4.0 * rng.random::<f64>(),
                0.5 + 2.0 * rng.random::<f64>(),
                0.5 + 2.0 * rng.random::<f64>(),
            ),
        });
        boxes[1].center += boxes[0].center;
        let mc = monte_carlo_iou(&boxes[0], &boxes[1], 1_000_000, &mut rng);
        iou_err = iou_err.max((iou_3d(&boxes[0], &boxes[1]) - mc).abs());
    }

    let mut assign_err = 0.0f64;
    for _ in 0..200 {
        let (m, n) = (rng.random_range(1..=7), rng.random_range(1..=7));
        let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let a = AffinityMatrix::from_rows(&rows).expect("matrix");
        assign_err = assign_err.max((assignment_weight(&a, &solve_assignment(&a)) - brute_force_assignment(&rows)).abs());
    }

    let mut svd_rot = 0.0f64;
    let mut svd_trans = 0.0f64;
    for _ in 0..100 {
        let t = RigidTransform::new(random_rotation(&mut rng), random_vec(&mut rng, 100.0));
        let src: Vec<_> = (0..24).map(|_| random_vec(&mut rng, 10.0)).collect();
        let dst: Vec<_> = src.iter().map(|p| t.transform_point(p)).collect();
        let est = svd_fit_weighted(&src, &dst, None).expect("fit");
        svd_rot = svd_rot.max(quaternion_angle_deg(&est.rotation, &t.rotation).to_radians());
        svd_trans = svd_trans.max((est.translation - t.translation).norm());
    }

    let mut rre_err = 0.0f64;
    for _ in 0..100 {
        let (a, b) = (random_rotation(&mut rng), random_rotation(&mut rng));
        rre_err = rre_err.max((rre(&a, &b) - quaternion_angle_deg(&a, &b)).abs());
    }

    verdict(
        iou_err < 1e-2 && assign_err < 1e-9 && svd_rot < 1e-9 && svd_trans < 1e-9 && rre_err < 1e-9,
        format!(
            "IoU vs Monte-Carlo {iou_err:.1e}, assignment vs exhaustive {assign_err:.1e}, \
             SVD rot {svd_rot:.1e} rad / trans {svd_trans:.1e} m, RRE vs quaternion {rre_err:.1e} deg"
        ),
    )
}

fn c6_equivariance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let records = synth_dataset(
        &SynthParams {
            n_common: 6,
            n_infra_only: 1,
            n_vehicle_only: 1,
            noise_center_sigma: 0.1,
            noise_yaw_sigma: 0.02,
            seed: 606,
            ..Default::default()
        },
        50,
    )
    .expect("synthetic data");
    let mut worst = 0.0f64;
    let mut status_mismatch = 0;
    for rec in &records {
        let yaw = std::f64::consts::PI * (2.0 * rng.random::<f64>() - 1.0);
        let g = RigidTransform::from_yaw(yaw, random_vec(&mut rng, 40.0));
        let moved = Scene::new("moved", rec.scene_inf.boxes.iter().map(|b| g.apply_yaw_only(b).expect("yaw-only")).collect());
        let base = calibrate(&rec.scene_inf, &rec.scene_veh, &StrategyConfig::v1());
        let other = calibrate(&moved, &rec.scene_veh, &StrategyConfig::v1());
        if base.status != other.status {
            status_mismatch += 1;
            continue;
        }
        if base.status == CalibrationStatus::Ok {
            let want = base.extrinsic.compose(&g.inverse()).to_homogeneous();
            worst = worst.max((other.extrinsic.to_homogeneous() - want).amax());
        }
    }

    let bytes_equal = jobs_byte_identical();
    verdict(
        worst < 1e-6 && status_mismatch == 0 && bytes_equal,
        format!(
            "50 trials: max deviation {worst:.1e}, status mismatches {status_mismatch}; \
             --jobs 1 vs 8 byte-identical: {bytes_equal}"
        ),
    )
}

fn jobs_byte_identical() -> bool {
    let tmp = tempfile::tempdir().expect("tempdir");
    let bin = env!("CARGO_BIN_EXE_boxcalib");
    let ds = tmp.path().join("ds");
    let ok = |args: &[&str]| Command::new(bin).args(args).output().map(|o| o.status.code()).ok().flatten();
    let path = |p: &Path| p.to_str().expect("utf-8 path").to_string();
    if ok(&["synth", "--n", "40", "--seed", "66", "--noise-center-sigma", "0.2", "--out", &path(&ds)]) != Some(0) {
        return false;
    }
    let outputs: Vec<(Vec<u8>, Vec<u8>)> = ["1", "8"]
        .iter()
        .map(|jobs| {
            let report = tmp.path().join(format!("report_{jobs}.json"));
            let result = tmp.path().join(format!("result_{jobs}.json"));
            ok(&["--jobs", jobs, "benchmark", "--dataset", &path(&ds), "--report", &path(&report), "--no-timings"]);
            ok(&[
                "--jobs",
                jobs,
                "calibrate",
                "--infra",
                &path(&ds.join("pair_0003_infra.json")),
                "--veh",
                &path(&ds.join("pair_0003_vehicle.json")),
                "--gt",
                &path(&ds.join("pair_0003_gt.json")),
                "--out",
                &path(&result),
                "--no-timings",
            ]);
            (fs::read(report).unwrap_or_default(), fs::read(result).unwrap_or_default())
        })
        .collect();
    !outputs[0].0.is_empty() && !outputs[0].1.is_empty() && outputs[0] == outputs[1]
}

fn c7_monotonicity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let records = synth_dataset(
        &SynthParams {
            n_common: 6,
            seed: 707,
            ..Default::default()
        },
        20,
    )
    .expect("synthetic data");
    let mut violations = Vec::new();
    let mut strict_first_step = 0;
    for (k, rec) in records.iter().enumerate() {
        let mut res = calibrate(&rec.scene_inf, &rec.scene_veh, &StrategyConfig::v1());
        if res.status != CalibrationStatus::Ok {
            violations.push(format!("scene {k}: {}", res.status));
            continue;
        }
        let base = res.extrinsic.translation;
        let angle = std::f64::consts::TAU * rng.random::<f64>();
        let dir = Vector3::new(angle.cos(), angle.sin(), 0.0);
        let scores: Vec<f64> = [0.0, 1.0, 2.0, 5.0]
            .iter()
            .map(|d| {
                res.extrinsic.translation = base + dir * *d;
                monitor_oiou(&res, &rec.scene_inf, &rec.scene_veh).expect("ok result")
            })
            .collect();
        if scores.windows(2).any(|w| w[1] > w[0]) || scores[3] >= scores[0] {
            violations.push(format!("scene {k}: {scores:?}"));
        }
        if scores[1] < scores[0] {
            strict_first_step += 1;
        }
    }
    verdict(
        violations.is_empty() && strict_first_step == records.len(),
        if violations.is_empty() {
            format!("{} scenes, oIoU non-increasing over 0/1/2/5 m and lower at 1 m than at 0 m in all", records.len())
        } else {
            format!("violations: {}", violations.join("; "))
        },
    )
}

fn main() {
    let noisy = synth_dataset(&noisy_params(), 200).expect("noisy suite");
    let mut results: Vec<(&str, Option<Verdict>)> = vec![
        ("1 noiseless recovery", Some(c1_noiseless())),
        ("2 noise robustness", Some(c2_noise(&noisy))),
        ("2 external dataset (easy group)", c2_external()),
        ("3 ablation ordering", Some(c3_ablation(&noisy))),
        ("4 runtime budget", Some(c4_runtime())),
        ("5 oracle suites", Some(c5_oracles())),
        ("6 equivariance and determinism", Some(c6_equivariance())),
        ("7 degradation monotonicity", Some(c7_monotonicity())),
    ];
    let mut failed = 0;
    println!();
    for (name, v) in results.drain(..) {
        match v {
            Some(v) => {
                if !v.passed {
                    failed += 1;
                }
                println!("[{}] criterion {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
            }
            None => println!("[SKIP] criterion {name}: set BOXCALIB_DAIR_DATASET to a converted dataset directory"),
        }
    }
    println!();
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
