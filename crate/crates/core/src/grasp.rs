//! Grasp and gripper types plus their JSON record format.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parallel-jaw gripper; the approach axis is fixed to -z (top-down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperModel {
    /// Maximum jaw opening in mm.
    pub max_width_mm: f64,
    /// Finger thickness in mm; informational for downstream collision
    /// models, the ray-based simulation treats fingers as points.
    pub finger_thickness_mm: f64,
}

impl Default for GripperModel {
    fn default() -> Self {
        Self { max_width_mm: 85.0, finger_thickness_mm: 10.0 }
    }
}

/// A 4DOF grasp: 3D center plus in-plane angle, with its contact pair,
/// width, and (unnormalized) wrench-space quality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspCandidate {
    pub center: Point3<f64>,
    /// Angle between the grasp axis and the image/world x-axis, degrees in [0, 360).
    pub theta_deg: f64,
    pub contact1: Point3<f64>,
    pub contact2: Point3<f64>,
    pub width_mm: f64,
    pub quality: f64,
}

impl GraspCandidate {
    /// Build from a contact pair; center, width, and theta are derived.
    pub fn from_contacts(contact1: Point3<f64>, contact2: Point3<f64>) -> Self {
        let axis = contact2 - contact1;
        let center = nalgebra::center(&contact1, &contact2);
        Self {
            center,
            theta_deg: axis.y.atan2(axis.x).to_degrees().rem_euclid(360.0),
            contact1,
            contact2,
            width_mm: axis.norm(),
            quality: 0.0,
        }
    }

    pub fn axis(&self) -> nalgebra::Vector3<f64> {
        self.contact2 - self.contact1
    }

    fn validate(&self) -> Result<()> {
        let mid = nalgebra::center(&self.contact1, &self.contact2);
        if (mid - self.center).norm() > 1e-6 {
            return Err(Error::InvalidRecord("grasp center is not the contact midpoint".into()));
        }
        if ((self.contact1 - self.contact2).norm() - self.width_mm).abs() > 1e-6 {
            return Err(Error::InvalidRecord("grasp width does not match contact distance".into()));
        }
        if !(0.0..360.0).contains(&self.theta_deg) {
            return Err(Error::InvalidRecord(format!("theta {} outside [0, 360)", self.theta_deg)));
        }
        if self.quality < 0.0 || !self.quality.is_finite() {
            return Err(Error::InvalidRecord("quality must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// On-disk JSON shape of a grasp:
/// `{center:[x,y,z], theta, contacts:[[..],[..]], width, quality}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspRecord {
    pub center: [f64; 3],
    pub theta: f64,
    pub contacts: [[f64; 3]; 2],
    pub width: f64,
    pub quality: f64,
}

impl From<&GraspCandidate> for GraspRecord {
    fn from(g: &GraspCandidate) -> Self {
        Self {
            center: g.center.coords.into(),
            theta: g.theta_deg,
            contacts: [g.contact1.coords.into(), g.contact2.coords.into()],
            width: g.width_mm,
            quality: g.quality,
        }
    }
}

impl TryFrom<&GraspRecord> for GraspCandidate {
    type Error = Error;

    fn try_from(r: &GraspRecord) -> Result<Self> {
        let g = GraspCandidate {
            center: Point3::from(r.center),
            theta_deg: r.theta,
            contact1: Point3::from(r.contacts[0]),
            contact2: Point3::from(r.contacts[1]),
            width_mm: r.width,
            quality: r.quality,
        };
        g.validate()?;
        Ok(g)
    }
}

/// Parse a JSON list of grasp records, validating each.
pub fn parse_grasp_records(bytes: &[u8]) -> Result<Vec<GraspCandidate>> {
    let records: Vec<GraspRecord> = serde_json::from_slice(bytes)?;
    records.iter().map(GraspCandidate::try_from).collect()
}

/// Serialize grasps to the JSON record list.
pub fn grasp_records_json(grasps: &[GraspCandidate]) -> Result<Vec<u8>> {
    let records: Vec<GraspRecord> = grasps.iter().map(GraspRecord::from).collect();
    Ok(serde_json::to_vec_pretty(&records)?)
}
