//! Domain-randomized tabletop scenes.
//!
//! Objects are drawn from a mesh pool, rescaled to a random volume, given a
//! uniform random rotation, and dropped onto the table plane (z = 0) at a
//! collision-free position. No dynamic settling: the resting rule is
//! "rotate, then translate so the lowest vertex touches the table".

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::bvh::TriSoup;
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::rng::substream;

/// Scene randomization parameters. JSON keys match field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    /// Uniform object volume range in cm^3.
    pub volume_range_cm3: [f64; 2],
    /// Camera standoff range in mm. The default keeps the literal published
    /// value even though it is too close for the largest objects; pipelines
    /// override it with a workable standoff.
    pub camera_distance_range: [f64; 2],
    /// Table rectangle side lengths in mm, centered at the origin.
    pub table_extent_mm: [f64; 2],
    /// Multiplicative depth-noise parameters.
    pub noise_mean: f64,
    pub noise_std: f64,
    /// Scenes producing fewer valid grasp samples than this are rejected.
    pub min_grasps_per_scene: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            volume_range_cm3: [27.0, 1000.0],
            camera_distance_range: [65.0, 75.0],
            // must stay inside the camera's field of view so every object
            // and grasp label lands in frame
            table_extent_mm: [400.0, 300.0],
            noise_mean: 1.0,
            noise_std: 0.01,
            min_grasps_per_scene: 150,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.volume_range_cm3[0] > self.volume_range_cm3[1] || self.volume_range_cm3[0] <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "volume_range_cm3 must satisfy 0 < low <= high, got {:?}",
                self.volume_range_cm3
            )));
        }
        if self.camera_distance_range[0] > self.camera_distance_range[1]
            || self.camera_distance_range[0] <= 0.0
        {
            return Err(Error::InvalidConfig(format!(
                "camera_distance_range must satisfy 0 < low <= high, got {:?}",
                self.camera_distance_range
            )));
        }
        if self.noise_std < 0.0 {
            return Err(Error::InvalidConfig("noise_std must be >= 0".into()));
        }
        if self.min_grasps_per_scene < 1 {
            return Err(Error::InvalidConfig("min_grasps_per_scene must be >= 1".into()));
        }
        if self.table_extent_mm.iter().any(|&e| e <= 0.0) {
            return Err(Error::InvalidConfig("table_extent_mm sides must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One placed object: a mesh shared from the pool plus its rigid pose.
#[derive(Debug, Clone)]
pub struct PosedObject {
    pub mesh: Arc<TriMesh>,
    pub pose: Isometry3<f64>,
}

impl PosedObject {
    pub fn transformed_vertices(&self) -> impl Iterator<Item = Point3<f64>> + '_ {
        self.mesh.vertices().iter().map(move |v| self.pose * v)
    }

    /// Centroid in world coordinates.
    pub fn world_centroid(&self) -> Point3<f64> {
        self.pose * self.mesh.centroid()
    }

    pub fn max_radius_mm(&self) -> f64 {
        self.mesh.max_radius_mm()
    }
}

/// A tabletop scene; the table plane is fixed at z = 0.
#[derive(Debug, Clone)]
pub struct Scene {
    pub objects: Vec<PosedObject>,
    pub table_extent_mm: [f64; 2],
}

impl Scene {
    /// World-space triangle soup of all posed objects.
    pub fn triangle_soup(&self) -> TriSoup {
        let mut soup = TriSoup::default();
        for (oi, obj) in self.objects.iter().enumerate() {
            for t in 0..obj.mesh.triangles().len() {
                let [a, b, c] = obj.mesh.triangle_points(t);
                soup.push([obj.pose * a, obj.pose * b, obj.pose * c], oi as u32);
            }
        }
        soup
    }

    /// Highest vertex z over all objects.
    pub fn max_height_mm(&self) -> f64 {
        self.objects
            .iter()
            .flat_map(|o| o.transformed_vertices().map(|v| v.z))
            .fold(0.0, f64::max)
    }
}

/// Uniform rotation via a normalized 4D Gaussian quaternion.
fn uniform_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let w: f64 = StandardNormal.sample(rng);
    let x: f64 = StandardNormal.sample(rng);
    let y: f64 = StandardNormal.sample(rng);
    let z: f64 = StandardNormal.sample(rng);
    UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
}

const PLACEMENT_RETRIES: usize = 20;

/// Generate a randomized scene with `count` objects from `pool`.
///
/// Deterministic in (config.seed, config, pool, count). Placement rejects
/// xy bounding-box overlaps and fails after a bounded number of retries.
pub fn randomize_scene(config: &SceneConfig, pool: &[Arc<TriMesh>], count: usize) -> Result<Scene> {
    config.validate()?;
    if pool.is_empty() {
        return Err(Error::InvalidConfig("mesh pool is empty".into()));
    }
    if count < 1 {
        return Err(Error::InvalidConfig("object count must be >= 1".into()));
    }

    let [ext_x, ext_y] = config.table_extent_mm;
    let mut objects: Vec<PosedObject> = Vec::with_capacity(count);
    let mut footprints: Vec<[f64; 4]> = Vec::new(); // x0, x1, y0, y1

    for obj_index in 0..count {
        let mut rng = substream(config.seed, "place", obj_index as u64);
        let mut placed = false;

        for _attempt in 0..=PLACEMENT_RETRIES {
            let mesh_idx = rng.random_range(0..pool.len());
            let volume = rng.random_range(config.volume_range_cm3[0]..=config.volume_range_cm3[1]);
            let rotation = uniform_rotation(&mut rng);
            let tx_frac: f64 = rng.random();
            let ty_frac: f64 = rng.random();

            let mesh = Arc::new(pool[mesh_idx].scaled_to_volume(volume)?);

            // bounds after rotation, before translation
            let mut lo = Vector3::repeat(f64::INFINITY);
            let mut hi = Vector3::repeat(f64::NEG_INFINITY);
            for v in mesh.vertices() {
                let r = rotation * v.coords;
                for k in 0..3 {
                    lo[k] = lo[k].min(r[k]);
                    hi[k] = hi[k].max(r[k]);
                }
            }

            // translation range keeping the footprint on the table
            let x_lo = -ext_x / 2.0 - lo.x;
            let x_hi = ext_x / 2.0 - hi.x;
            let y_lo = -ext_y / 2.0 - lo.y;
            let y_hi = ext_y / 2.0 - hi.y;
            if x_lo > x_hi || y_lo > y_hi {
                continue; // object larger than the table under this rotation
            }
            let tx = x_lo + tx_frac * (x_hi - x_lo);
            let ty = y_lo + ty_frac * (y_hi - y_lo);
            let tz = -lo.z; // rest on the table

            let fp = [lo.x + tx, hi.x + tx, lo.y + ty, hi.y + ty];
            let overlaps = footprints.iter().any(|other| {
                fp[0] < other[1] && other[0] < fp[1] && fp[2] < other[3] && other[2] < fp[3]
            });
            if overlaps {
                continue;
            }

            footprints.push(fp);
            objects.push(PosedObject {
                mesh,
                pose: Isometry3::from_parts(Translation3::new(tx, ty, tz), rotation),
            });
            placed = true;
            break;
        }

        if !placed {
            return Err(Error::PlacementFailure { object: obj_index, retries: PLACEMENT_RETRIES });
        }
    }

    Ok(Scene { objects, table_extent_mm: config.table_extent_mm })
}
