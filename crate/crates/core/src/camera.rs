//! Camera models for top-down depth rendering.
//!
//! Conventions: world z is up with the table at z = 0; the camera looks along
//! -z of its own frame. Pixel x grows with world x and pixel y with world y,
//! so an angle measured from the image x-axis equals the same angle in the
//! world xy-plane. Depth values are distances from the camera plane (the
//! component along the viewing axis), not ray lengths.

use nalgebra::{Isometry3, Point2, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::bvh::Ray;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Projection {
    /// Parallel projection; `pixel_pitch` is mm per pixel on the table plane.
    Orthographic { pixel_pitch: f64 },
    /// Perspective projection with focal lengths in pixels.
    Pinhole { fx: f64, fy: f64 },
}

/// Optional explicit camera pose (camera frame to world).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSpec {
    pub translation: [f64; 3],
    /// Unit quaternion as [w, x, y, z].
    pub rotation: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    #[serde(flatten)]
    pub projection: Projection,
    /// Principal point (pixels).
    pub cx: f64,
    pub cy: f64,
    /// Height of the camera plane above the table (mm); also the depth of
    /// the table itself for the default top-down pose.
    pub distance_mm: f64,
    /// Defaults to the top-down pose at (0, 0, distance_mm).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseSpec>,
}

impl CameraModel {
    pub fn orthographic(pixel_pitch: f64, width: u32, height: u32, distance_mm: f64) -> Self {
        Self {
            projection: Projection::Orthographic { pixel_pitch },
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            distance_mm,
            pose: None,
        }
    }

    pub fn pinhole(fx: f64, fy: f64, width: u32, height: u32, distance_mm: f64) -> Self {
        Self {
            projection: Projection::Pinhole { fx, fy },
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            distance_mm,
            pose: None,
        }
    }

    /// Camera-to-world isometry.
    pub fn pose_iso(&self) -> Isometry3<f64> {
        match &self.pose {
            Some(p) => {
                let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                    p.rotation[0],
                    p.rotation[1],
                    p.rotation[2],
                    p.rotation[3],
                ));
                Isometry3::from_parts(
                    Translation3::new(p.translation[0], p.translation[1], p.translation[2]),
                    q,
                )
            }
            None => Isometry3::from_parts(
                Translation3::new(0.0, 0.0, self.distance_mm),
                UnitQuaternion::identity(),
            ),
        }
    }

    /// Viewing ray through pixel (u, v).
    pub fn pixel_ray(&self, u: f64, v: f64) -> Ray {
        let pose = self.pose_iso();
        match self.projection {
            Projection::Orthographic { pixel_pitch } => {
                let origin = pose * Point3::new((u - self.cx) * pixel_pitch, (v - self.cy) * pixel_pitch, 0.0);
                let dir = pose * Vector3::new(0.0, 0.0, -1.0);
                Ray::new(origin, dir)
            }
            Projection::Pinhole { fx, fy } => {
                let origin = pose * Point3::origin();
                let dir = pose * Vector3::new((u - self.cx) / fx, (v - self.cy) / fy, -1.0);
                Ray::new(origin, dir)
            }
        }
    }

    /// Depth (camera-plane distance) of a world point.
    pub fn depth_of(&self, world: &Point3<f64>) -> f64 {
        let cam = self.pose_iso().inverse_transform_point(world);
        -cam.z
    }

    /// Project a world point to pixel coordinates.
    pub fn project(&self, world: &Point3<f64>) -> Point2<f64> {
        let cam = self.pose_iso().inverse_transform_point(world);
        match self.projection {
            Projection::Orthographic { pixel_pitch } => {
                Point2::new(self.cx + cam.x / pixel_pitch, self.cy + cam.y / pixel_pitch)
            }
            Projection::Pinhole { fx, fy } => {
                let z = -cam.z;
                Point2::new(self.cx + fx * cam.x / z, self.cy + fy * cam.y / z)
            }
        }
    }

    /// Back-project a pixel at a known depth to a world point.
    pub fn back_project(&self, u: f64, v: f64, depth_mm: f64) -> Point3<f64> {
        let cam = match self.projection {
            Projection::Orthographic { pixel_pitch } => {
                Point3::new((u - self.cx) * pixel_pitch, (v - self.cy) * pixel_pitch, -depth_mm)
            }
            Projection::Pinhole { fx, fy } => Point3::new(
                (u - self.cx) * depth_mm / fx,
                (v - self.cy) * depth_mm / fy,
                -depth_mm,
            ),
        };
        self.pose_iso() * cam
    }

    /// Millimeters spanned by one pixel at the given depth.
    pub fn mm_per_pixel(&self, depth_mm: f64) -> f64 {
        match self.projection {
            Projection::Orthographic { pixel_pitch } => pixel_pitch,
            Projection::Pinhole { fx, fy } => depth_mm / ((fx + fy) / 2.0),
        }
    }

    /// Camera equivalent of rotating the image content CCW by `beta_deg`
    /// about the image center: the camera frame turns about its own optical
    /// axis. Assumes the principal point sits at the image center, which the
    /// constructors guarantee.
    pub fn content_rotated(&self, beta_deg: f64) -> Self {
        let rot = Isometry3::rotation(Vector3::z() * (-beta_deg.to_radians()));
        let pose = self.pose_iso() * rot;
        let q = pose.rotation;
        let mut cam = self.clone();
        cam.pose = Some(PoseSpec {
            translation: [pose.translation.x, pose.translation.y, pose.translation.z],
            rotation: [q.w, q.i, q.j, q.k],
        });
        cam
    }

    /// Intrinsics after a centered crop to `side` pixels followed by a
    /// resize to `out` pixels (used when samples are cropped to 300x300).
    pub fn cropped_resized(&self, width: u32, height: u32, side: u32, out: u32) -> Self {
        let off_x = (width as f64 - side as f64) / 2.0;
        let off_y = (height as f64 - side as f64) / 2.0;
        let s = out as f64 / side as f64;
        let mut cam = self.clone();
        cam.cx = (self.cx - off_x + 0.5) * s - 0.5;
        cam.cy = (self.cy - off_y + 0.5) * s - 0.5;
        cam.projection = match self.projection {
            Projection::Orthographic { pixel_pitch } => Projection::Orthographic { pixel_pitch: pixel_pitch / s },
            Projection::Pinhole { fx, fy } => Projection::Pinhole { fx: fx * s, fy: fy * s },
        };
        cam
    }
}
