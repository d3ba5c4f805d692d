//! Pinhole camera model: projection to normalized image coordinates and
//! back-projection along the viewing ray.
//!
//! Camera frame: Z forward along the optical axis, X right, Y down. The
//! camera is rigidly mounted on the body (x forward, y left, z up), tilted
//! upward by `mount_pitch`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Pose, QuadState, Vec3};

/// Normalized image coordinates in `[-1, 1]²`.
pub type ImagePoint = Vector2<f64>;

/// Depth below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub horizontal_fov: f64,
    pub vertical_fov: f64,
    pub mount_pitch: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self::with_resolution(64, 48)
    }
}

impl CameraModel {
    /// 90° horizontal field of view, vertical field of view from the aspect ratio.
    pub fn with_resolution(image_width: u32, image_height: u32) -> Self {
        let hfov = PI / 2.0;
        let aspect = image_height as f64 / image_width as f64;
        Self {
            horizontal_fov: hfov,
            vertical_fov: 2.0 * ((hfov / 2.0).tan() * aspect).atan(),
            mount_pitch: 0.0,
            image_width,
            image_height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fov_ok = |f: f64| f > 0.0 && f < PI;
        if !fov_ok(self.horizontal_fov) || !fov_ok(self.vertical_fov) {
            return Err(invalid("camera field of view must lie in (0, π)"));
        }
        if self.image_width < 8 || self.image_height < 8 {
            return Err(invalid("camera raster must be at least 8×8"));
        }
        if !self.mount_pitch.is_finite() {
            return Err(invalid("camera mount pitch must be finite"));
        }
        Ok(())
    }

    pub fn tan_half_h(&self) -> f64 {
        (0.5 * self.horizontal_fov).tan()
    }

    pub fn tan_half_v(&self) -> f64 {
        (0.5 * self.vertical_fov).tan()
    }

    /// Rotation taking camera-frame vectors into the body frame.
    pub fn body_from_camera(&self) -> UnitQuaternion<f64> {
        // Columns: camera X, Y, Z expressed in body axes.
        let axes = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        let mount = Rotation3::from_axis_angle(&Vec3::y_axis(), -self.mount_pitch);
        UnitQuaternion::from_rotation_matrix(&(mount * Rotation3::from_matrix_unchecked(axes)))
    }

    /// World pose of the camera for a vehicle in `state`.
    pub fn pose(&self, state: &QuadState) -> Pose {
        Pose {
            position: state.position,
            attitude: state.attitude * self.body_from_camera(),
        }
    }

    /// Unit camera-frame ray through normalized image point `x`.
    pub fn ray_camera(&self, x: &ImagePoint) -> Vec3 {
        Vec3::new(x.x * self.tan_half_h(), x.y * self.tan_half_v(), 1.0).normalize()
    }
}

/// Result of projecting a world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    /// In front of the camera; coordinates clamped to `[-1, 1]²`.
    Image(ImagePoint),
    BehindCamera,
}

impl Projection {
    pub fn image(self) -> Option<ImagePoint> {
        match self {
            Projection::Image(x) => Some(x),
            Projection::BehindCamera => None,
        }
    }
}

/// Unclamped tangent-plane coordinates, `None` behind the camera.
pub fn project_unclamped(p_world: &Vec3, cam_pose: &Pose, cam: &CameraModel) -> Option<ImagePoint> {
    let pc = cam_pose.to_local(p_world);
    if pc.z <= MIN_DEPTH {
        return None;
    }
    Some(ImagePoint::new(
        pc.x / pc.z / cam.tan_half_h(),
        pc.y / pc.z / cam.tan_half_v(),
    ))
}

pub fn project_to_image(p_world: &Vec3, cam_pose: &Pose, cam: &CameraModel) -> Projection {
    match project_unclamped(p_world, cam_pose, cam) {
        Some(x) => Projection::Image(x.map(|c| c.clamp(-1.0, 1.0))),
        None => Projection::BehindCamera,
    }
}

/// Point at Euclidean distance `depth` from the camera along the ray through `x`.
pub fn back_project(x: &ImagePoint, depth: f64, cam_pose: &Pose, cam: &CameraModel) -> Vec3 {
    let ray = cam_pose.attitude * cam.ray_camera(x);
    cam_pose.position + depth * ray
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn optical_axis_projects_to_center() {
        let cam = CameraModel::default();
        let state = QuadState::at_rest(Vec3::new(1.0, 2.0, 3.0), 0.7);
        let pose = cam.pose(&state);
        let p = state.position + 5.0 * Vec3::new(0.7f64.cos(), 0.7f64.sin(), 0.0);
        let x = project_to_image(&p, &pose, &cam).image().unwrap();
        assert!(x.norm() < 1e-12);
    }

    #[test]
    fn fov_edge_maps_to_one() {
        let cam = CameraModel::default();
        let pose = Pose::identity();
        let x = project_to_image(&Vec3::new(1.0, 0.0, 1.0), &pose, &cam)
            .image()
            .unwrap();
        assert!((x.x - 1.0).abs() < 1e-12 && x.y.abs() < 1e-12);
    }

    #[test]
    fn body_axes_map_to_camera_axes() {
        let cam = CameraModel::default();
        let state = QuadState::at_rest(Vec3::zeros(), 0.0);
        let pose = cam.pose(&state);
        // Something to the left of the vehicle appears at negative image x,
        // something above at negative image y.
        let left = project_to_image(&Vec3::new(5.0, 1.0, 0.0), &pose, &cam)
            .image()
            .unwrap();
        let up = project_to_image(&Vec3::new(5.0, 0.0, 1.0), &pose, &cam)
            .image()
            .unwrap();
        assert!(left.x < 0.0 && left.y.abs() < 1e-12);
        assert!(up.y < 0.0 && up.x.abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_flagged() {
        let cam = CameraModel::default();
        let pose = Pose::identity();
        assert_eq!(
            project_to_image(&Vec3::new(0.0, 0.0, -2.0), &pose, &cam),
            Projection::BehindCamera
        );
        assert_eq!(
            project_to_image(&Vec3::new(1.0, 0.0, 0.0), &pose, &cam),
            Projection::BehindCamera
        );
    }

    #[test]
    fn back_project_center_and_edge() {
        let cam = CameraModel::default();
        let pose = Pose::identity();
        let p = back_project(&ImagePoint::zeros(), 2.0, &pose, &cam);
        assert!((p - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        let q = back_project(&ImagePoint::new(1.0, 0.0), 2f64.sqrt(), &pose, &cam);
        assert!((q - Vec3::new(1.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn mount_pitch_tilts_axis_up() {
        let mut cam = CameraModel::default();
        cam.mount_pitch = 0.3;
        let pose = cam.pose(&QuadState::at_rest(Vec3::zeros(), 0.0));
        let p = back_project(&ImagePoint::zeros(), 1.0, &pose, &cam);
        assert!((p - Vec3::new(0.3f64.cos(), 0.0, 0.3f64.sin())).norm() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(CameraModel::default().validate().is_ok());
        let mut cam = CameraModel::default();
        cam.horizontal_fov = PI;
        assert!(cam.validate().is_err());
        let mut cam = CameraModel::default();
        cam.image_width = 4;
        assert!(cam.validate().is_err());
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-20.0f64..20.0),
            prop::array::uniform3(-3.0f64..3.0),
        )
            .prop_map(|(p, r)| Pose {
                position: Vec3::from(p),
                attitude: UnitQuaternion::from_scaled_axis(Vec3::from(r)),
            })
    }

    proptest! {
        #[test]
        fn back_project_round_trip(
            pose in arb_pose(),
            x0 in -1.0f64..=1.0,
            x1 in -1.0f64..=1.0,
            d in 0.01f64..100.0,
        ) {
            let cam = CameraModel::default();
            let x = ImagePoint::new(x0, x1);
            let p = back_project(&x, d, &pose, &cam);
            let dist = (p - pose.position).norm();
            prop_assert!((dist - d).abs() <= 1e-12 * d.max(1.0));
            let y = project_to_image(&p, &pose, &cam).image().unwrap();
            prop_assert!((y - x).norm() <= 1e-9);
        }

        #[test]
        fn project_round_trip(
            pose in arb_pose(),
            lx in -1.0f64..1.0,
            ly in -0.7f64..0.7,
            depth in 0.5f64..50.0,
        ) {
            let cam = CameraModel::default();
            let local = Vec3::new(lx * depth * 0.99, ly * depth * 0.99, depth);
            let p = pose.to_world(&local);
            let x = project_to_image(&p, &pose, &cam).image().unwrap();
            let back = back_project(&x, local.norm(), &pose, &cam);
            prop_assert!((back - p).norm() <= 1e-9 * depth.max(1.0));
        }
    }
}
