#![allow(dead_code)]

use boxcalib::{Box3D, Category, OrientedBox, RigidTransform};
use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use rand::Rng;

pub fn random_rotation(rng: &mut impl Rng) -> Rotation3<f64> {
    // Shoemake's uniform quaternion
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let q = nalgebra::Quaternion::new(
        (1.0 - u1).sqrt() * (tau * u2).sin(),
        (1.0 - u1).sqrt() * (tau * u2).cos(),
        u1.sqrt() * (tau * u3).sin(),
        u1.sqrt() * (tau * u3).cos(),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix()
}

pub fn random_vec(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(
        scale * (2.0 * rng.random::<f64>() - 1.0),
        scale * (2.0 * rng.random::<f64>() - 1.0),
        scale * (2.0 * rng.random::<f64>() - 1.0),
    )
}

pub fn random_rigid(rng: &mut impl Rng, scale: f64) -> RigidTransform {
    RigidTransform::new(random_rotation(rng), random_vec(rng, scale))
}

pub fn random_yaw_rigid(rng: &mut impl Rng, scale: f64) -> RigidTransform {
    let yaw = std::f64::consts::PI * (2.0 * rng.random::<f64>() - 1.0);
    let mut t = random_vec(rng, scale);
    t.z *= 0.05;
    RigidTransform::from_yaw(yaw, t)
}

pub fn random_oriented(rng: &mut impl Rng, center_scale: f64) -> OrientedBox {
    OrientedBox {
        rotation: random_rotation(rng),
        center: random_vec(rng, center_scale),
        size: Vector3::new(
            0.5 + 4.0 * rng.random::<f64>(),
            0.5 + 2.0 * rng.random::<f64>(),
            0.5 + 2.0 * rng.random::<f64>(),
        ),
    }
}

pub fn car(x: f64, y: f64, yaw: f64) -> Box3D {
    Box3D::new(Category::Car, Vector3::new(x, y, 0.8), Vector3::new(4.5, 1.9, 1.6), yaw).unwrap()
}

/// Rotation error in degrees via unit quaternions: 2·atan2(|v|, |w|).
pub fn quaternion_angle_deg(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
    let qa = UnitQuaternion::from_rotation_matrix(a);
    let qb = UnitQuaternion::from_rotation_matrix(b);
    let d = qa.inverse() * qb;
    (2.0 * d.imag().norm().atan2(d.w.abs())).to_degrees()
}

pub fn transform_err(a: &RigidTransform, b: &RigidTransform) -> (f64, f64) {
    (
        quaternion_angle_deg(&a.rotation, &b.rotation),
        (a.translation - b.translation).norm(),
    )
}
