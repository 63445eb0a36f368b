//! Antipodal grasp sampling on tabletop scenes.
//!
//! First contacts are drawn area-uniformly over the scene surface; the
//! opposing contact comes from casting a ray through the object within the
//! friction cone around the negated surface normal. Candidates must satisfy
//! the antipodal condition under the friction coefficient, the horizontal
//! (table-parallel axis) constraint, and the gripper width limit.

use nalgebra::{Point3, Unit, Vector3};
use rand::Rng;

use crate::bvh::{Bvh, Ray, TriSoup};
use crate::error::{Error, Result};
use crate::grasp::{GraspCandidate, GripperModel};
use crate::rng::substream;
use crate::scene::Scene;

#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    /// Number of grasp samples required per scene.
    pub samples_per_scene: usize,
    /// Friction coefficient.
    pub mu: f64,
    /// Maximum angle between the grasp axis and the table plane, degrees.
    pub horizontal_tol_deg: f64,
    /// Pair attempts allowed per requested sample before the scene is rejected.
    pub budget_factor: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { samples_per_scene: 150, mu: 0.5, horizontal_tol_deg: 5.0, budget_factor: 100, seed: 0 }
    }
}

/// True iff the contact line lies inside both friction cones:
/// angle(-n1, c2-c1) <= atan(mu) and angle(-n2, c1-c2) <= atan(mu).
/// A small angular slack keeps exact-boundary constructions inclusive.
pub fn antipodal_check(
    c1: &Point3<f64>,
    c2: &Point3<f64>,
    n1: &Unit<Vector3<f64>>,
    n2: &Unit<Vector3<f64>>,
    mu: f64,
) -> bool {
    let axis = c2 - c1;
    let len = axis.norm();
    if len < 1e-9 {
        return false;
    }
    let axis = axis / len;
    let half_angle = mu.atan() + 1e-9;
    let a1 = (-n1.into_inner()).dot(&axis).clamp(-1.0, 1.0).acos();
    let a2 = (-n2.into_inner()).dot(&(-axis)).clamp(-1.0, 1.0).acos();
    a1 <= half_angle && a2 <= half_angle
}

/// True iff the grasp axis is within `tol_deg` of the table plane, i.e. the
/// top-down approach is perpendicular to the axis.
pub fn horizontal_filter(candidate: &GraspCandidate, tol_deg: f64) -> bool {
    let axis = candidate.axis();
    let len = axis.norm();
    if len < 1e-9 {
        return false;
    }
    let tilt = (axis.z.abs() / len).clamp(0.0, 1.0).asin().to_degrees();
    tilt <= tol_deg
}

struct SurfaceSampler {
    cumulative_area: Vec<f64>,
    total_area: f64,
}

impl SurfaceSampler {
    fn new(soup: &TriSoup) -> Self {
        let mut cumulative_area = Vec::with_capacity(soup.len());
        let mut acc = 0.0;
        for tri in &soup.positions {
            let area = (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm() / 2.0;
            acc += area;
            cumulative_area.push(acc);
        }
        Self { cumulative_area, total_area: acc }
    }

    /// Area-weighted surface point with its triangle index.
    fn sample(&self, soup: &TriSoup, rng: &mut impl Rng) -> (Point3<f64>, usize) {
        let target = rng.random_range(0.0..self.total_area);
        let tri = self.cumulative_area.partition_point(|&a| a < target).min(soup.len() - 1);
        let [a, b, c] = soup.positions[tri];
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let s = r1.sqrt();
        let p = a.coords * (1.0 - s) + b.coords * (s * (1.0 - r2)) + c.coords * (s * r2);
        (Point3::from(p), tri)
    }
}

fn outward_normal(soup: &TriSoup, tri: usize) -> Unit<Vector3<f64>> {
    let [a, b, c] = soup.positions[tri];
    Unit::new_normalize((b - a).cross(&(c - a)))
}

/// Direction drawn uniformly from the spherical cap of half-angle
/// atan(mu) around `axis`.
fn cone_direction(axis: &Vector3<f64>, mu: f64, rng: &mut impl Rng) -> Vector3<f64> {
    let half = mu.atan();
    let cos_min = half.cos();
    let cos_t = rng.random_range(cos_min..=1.0);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let ref_axis = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = axis.cross(&ref_axis).normalize();
    let t2 = axis.cross(&t1);
    axis * cos_t + (t1 * phi.cos() + t2 * phi.sin()) * sin_t
}

/// Sample `samples_per_scene` antipodal horizontal grasps, or reject the
/// scene if the attempt budget runs out first.
pub fn sample_antipodal(scene: &Scene, gripper: &GripperModel, cfg: &SamplerConfig) -> Result<Vec<GraspCandidate>> {
    if scene.objects.is_empty() {
        return Err(Error::InvalidConfig("scene has no objects".into()));
    }
    if cfg.mu <= 0.0 || cfg.samples_per_scene < 1 {
        return Err(Error::InvalidConfig("sampler needs mu > 0 and n >= 1".into()));
    }
    let soup = scene.triangle_soup();
    let bvh = Bvh::build(&soup);
    let surface = SurfaceSampler::new(&soup);

    let n = cfg.samples_per_scene;
    let budget = cfg.budget_factor.saturating_mul(n);
    let mut grasps = Vec::with_capacity(n);

    for attempt in 0..budget {
        if grasps.len() == n {
            break;
        }
        let mut rng = substream(cfg.seed, "grasp-attempt", attempt as u64);
        let (p1, tri1) = surface.sample(&soup, &mut rng);
        let n1 = outward_normal(&soup, tri1);
        let object = soup.object_ids[tri1];

        // close the second jaw along a direction inside the cone around -n1
        let dir = cone_direction(&(-n1.into_inner()), cfg.mu, &mut rng);
        let ray = Ray::new(p1, dir);
        let hits = bvh.intersect_all(&soup, &ray, 1e-6, gripper.max_width_mm);
        if hits.is_empty() {
            continue;
        }
        // the closing line must not touch any other object
        if hits.iter().any(|h| h.object != object) {
            continue;
        }
        let exit = hits.last().unwrap();
        let n2 = Unit::new_normalize(exit.normal);
        let candidate = GraspCandidate::from_contacts(p1, exit.point);

        if candidate.width_mm > gripper.max_width_mm {
            continue;
        }
        if !antipodal_check(&candidate.contact1, &candidate.contact2, &n1, &n2, cfg.mu) {
            continue;
        }
        if !horizontal_filter(&candidate, cfg.horizontal_tol_deg) {
            continue;
        }
        // contacts must be above the table so the fingers can reach them
        if candidate.contact1.z <= 0.0 || candidate.contact2.z <= 0.0 {
            continue;
        }
        grasps.push(candidate);
    }

    if grasps.len() < n {
        return Err(Error::SceneRejected(format!(
            "only {} of {} grasp samples found within {} attempts",
            grasps.len(),
            n,
            budget
        )));
    }
    Ok(grasps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives;
    use crate::scene::{PosedObject, Scene};
    use nalgebra::{Isometry3, Translation3, UnitQuaternion};
    use std::sync::Arc;

    fn resting_scene(mesh: crate::mesh::TriMesh) -> Scene {
        let (lo, _) = mesh.aabb();
        let pose = Isometry3::from_parts(Translation3::new(0.0, 0.0, -lo.z), UnitQuaternion::identity());
        Scene { objects: vec![PosedObject { mesh: Arc::new(mesh), pose }], table_extent_mm: [600.0, 600.0] }
    }

    #[test]
    fn antipodal_check_basic_cases() {
        let c1 = Point3::new(0.0, 0.0, 10.0);
        let c2 = Point3::new(30.0, 0.0, 10.0);
        let along = Unit::new_normalize(Vector3::new(-1.0, 0.0, 0.0));
        let against = Unit::new_normalize(Vector3::new(1.0, 0.0, 0.0));
        // opposing collinear normals: antipodal for any mu > 0
        assert!(antipodal_check(&c1, &c2, &along, &against, 0.01));
        // perpendicular normals fail for mu = 0.3 (half-angle ~16.7 deg)
        let up = Unit::new_normalize(Vector3::new(0.0, 0.0, 1.0));
        assert!(!antipodal_check(&c1, &c2, &up, &against, 0.3));
        // coincident contacts are never antipodal
        assert!(!antipodal_check(&c1, &c1, &along, &against, 1.0));
    }

    #[test]
    fn antipodal_check_threshold_straddle() {
        // normals 20 degrees off the contact axis
        let c1 = Point3::new(0.0, 0.0, 0.0);
        let c2 = Point3::new(10.0, 0.0, 0.0);
        let a = 20.0f64.to_radians();
        let n1 = Unit::new_normalize(Vector3::new(-a.cos(), a.sin(), 0.0));
        let n2 = Unit::new_normalize(Vector3::new(a.cos(), -a.sin(), 0.0));
        assert!(antipodal_check(&c1, &c2, &n1, &n2, 25.0f64.to_radians().tan()));
        assert!(!antipodal_check(&c1, &c2, &n1, &n2, 15.0f64.to_radians().tan()));
    }

    #[test]
    fn horizontal_filter_cases() {
        let flat = GraspCandidate::from_contacts(Point3::new(0.0, 0.0, 10.0), Point3::new(20.0, 0.0, 10.0));
        assert!(horizontal_filter(&flat, 0.0));
        let tilted45 = GraspCandidate::from_contacts(Point3::new(0.0, 0.0, 0.0), Point3::new(10.0, 0.0, 10.0));
        assert!(!horizontal_filter(&tilted45, 10.0));
        let z = 10.0 * 9.0f64.to_radians().tan();
        let tilted9 = GraspCandidate::from_contacts(Point3::new(0.0, 0.0, 10.0), Point3::new(10.0, 0.0, 10.0 + z));
        assert!(horizontal_filter(&tilted9, 10.0));
    }

    #[test]
    fn sphere_candidates_are_diametral() {
        let scene = resting_scene(primitives::icosphere(25.0, 2));
        let cfg = SamplerConfig { samples_per_scene: 40, seed: 5, ..SamplerConfig::default() };
        let grasps = sample_antipodal(&scene, &GripperModel::default(), &cfg).unwrap();
        let center = Point3::new(0.0, 0.0, 25.0);
        for g in &grasps {
            // the grasp line passes near the sphere center
            let axis = g.axis().normalize();
            let to_center = center - g.contact1;
            let off_axis = (to_center - axis * to_center.dot(&axis)).norm();
            assert!(off_axis < 25.0 * 0.5, "grasp line misses the center region: {off_axis}");
            assert!(g.width_mm > 25.0, "diametral width expected, got {}", g.width_mm);
        }
    }

    #[test]
    fn cube_opposing_face_pair_is_valid() {
        let c1 = Point3::new(-15.0, 0.0, 15.0);
        let c2 = Point3::new(15.0, 0.0, 15.0);
        let n1 = Unit::new_normalize(Vector3::new(-1.0, 0.0, 0.0));
        let n2 = Unit::new_normalize(Vector3::new(1.0, 0.0, 0.0));
        assert!(antipodal_check(&c1, &c2, &n1, &n2, 0.5));
        let g = GraspCandidate::from_contacts(c1, c2);
        assert!(horizontal_filter(&g, 5.0));
        assert!(g.width_mm < 85.0);
    }

    #[test]
    fn sampled_grasps_all_pass_independent_recheck() {
        let scene = resting_scene(primitives::cube(30.0));
        let cfg = SamplerConfig { samples_per_scene: 150, seed: 11, ..SamplerConfig::default() };
        let grasps = sample_antipodal(&scene, &GripperModel::default(), &cfg).unwrap();
        assert_eq!(grasps.len(), 150);
        let soup = scene.triangle_soup();
        let bvh = Bvh::build(&soup);
        for g in &grasps {
            // recover surface normals independently by casting the contact line
            let axis = g.axis().normalize();
            let ray = Ray::new(g.contact1 - axis * 1.0, axis);
            let hits = bvh.intersect_all(&soup, &ray, 1e-9, g.width_mm + 2.0);
            assert!(hits.len() >= 2, "contact line should enter and exit");
            let n1 = Unit::new_normalize(hits.first().unwrap().normal);
            let n2 = Unit::new_normalize(hits.last().unwrap().normal);
            assert!(antipodal_check(&g.contact1, &g.contact2, &n1, &n2, cfg.mu));
            assert!(horizontal_filter(g, cfg.horizontal_tol_deg));
            assert!(g.width_mm <= GripperModel::default().max_width_mm);
            // center inside the convex hull of the cube surface
            assert!(g.center.x.abs() <= 15.0 + 1e-9);
            assert!(g.center.y.abs() <= 15.0 + 1e-9);
            assert!(g.center.z >= -1e-9 && g.center.z <= 30.0 + 1e-9);
        }
    }

    #[test]
    fn oversized_object_rejects_scene() {
        // every horizontal span of a 100 mm cube exceeds the 85 mm gripper
        let scene = resting_scene(primitives::cube(100.0));
        let cfg = SamplerConfig { samples_per_scene: 20, budget_factor: 50, seed: 2, ..SamplerConfig::default() };
        match sample_antipodal(&scene, &GripperModel::default(), &cfg) {
            Err(Error::SceneRejected(_)) => {}
            other => panic!("expected scene rejection, got {other:?}"),
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let scene = resting_scene(primitives::cube(30.0));
        let cfg = SamplerConfig { samples_per_scene: 30, seed: 4, ..SamplerConfig::default() };
        let a = sample_antipodal(&scene, &GripperModel::default(), &cfg).unwrap();
        let b = sample_antipodal(&scene, &GripperModel::default(), &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.center, y.center);
            assert_eq!(x.theta_deg, y.theta_deg);
        }
    }
}
