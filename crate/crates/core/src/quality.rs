//! Force closure and the Ferrari-Canny epsilon metric over discretized
//! friction cones in 6D wrench space.
//!
//! Epsilon is the radius of the largest origin-centered ball inside the
//! grasp wrench space, approximated by minimizing the support function
//! max_i (w_i . u) over sampled unit directions with local refinement.
//! Directions are restricted to the linear span of the wrench set: a
//! two-contact grasp whose line passes exactly through the centroid spans
//! only five of the six wrench dimensions, and the metric measures the
//! disturbances the grasp can actually resist. Outside the span the support
//! is identically zero and sampling there would only report noise.

use nalgebra::{Matrix6, Point3, Unit, Vector3, Vector6};
use rand_distr::{Distribution, StandardNormal};

use crate::bvh::{Bvh, Ray, TriSoup};
use crate::error::{Error, Result};
use crate::grasp::GraspCandidate;
use crate::rng::substream;
use crate::scene::Scene;
use serde::{Deserialize, Serialize};

/// A Coulomb friction cone at a contact.
#[derive(Debug, Clone, Copy)]
pub struct FrictionCone {
    pub contact: Point3<f64>,
    /// Outward unit surface normal.
    pub normal: Unit<Vector3<f64>>,
    pub mu: f64,
    /// Number of discretization edges (>= 3).
    pub edges: usize,
}

/// Primitive contact wrenches: unit boundary forces plus torques scaled by
/// the characteristic radius rho.
#[derive(Debug, Clone)]
pub struct WrenchSet {
    pub wrenches: Vec<Vector6<f64>>,
    pub origin: Point3<f64>,
    pub rho_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityConfig {
    pub mu: f64,
    pub cone_edges: usize,
    /// Base direction samples for the support minimization.
    pub directions: usize,
    /// Local refinement steps around the running minimizer.
    pub refine_steps: usize,
    /// Seed for the shared direction set.
    pub seed: u64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self { mu: 0.5, cone_edges: 8, directions: 4096, refine_steps: 100, seed: 0 }
    }
}

/// Deterministic orthonormal tangent pair for a unit normal.
pub fn tangent_basis(n: &Unit<Vector3<f64>>) -> (Vector3<f64>, Vector3<f64>) {
    let pick = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = n.cross(&pick).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Build the 2m primitive wrenches of a contact pair (m per cone): the
/// inward normal tilted to the cone boundary around m equally spaced
/// tangent directions, each normalized to unit force.
pub fn primitive_wrenches(cones: &[FrictionCone], centroid: &Point3<f64>, rho_mm: f64) -> Result<WrenchSet> {
    if rho_mm <= 0.0 {
        return Err(Error::InvalidConfig("rho must be positive".into()));
    }
    let mut wrenches = Vec::new();
    for cone in cones {
        if cone.edges < 3 {
            return Err(Error::InvalidConfig("friction cone needs >= 3 edges".into()));
        }
        if cone.mu <= 0.0 {
            return Err(Error::InvalidConfig("mu must be positive".into()));
        }
        if cone.normal.norm() == 0.0 || !cone.normal.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidConfig("zero or non-finite contact normal".into()));
        }
        let inward = -cone.normal.into_inner();
        let (t1, t2) = tangent_basis(&cone.normal);
        let scale = 1.0 / (1.0 + cone.mu * cone.mu).sqrt();
        let arm = cone.contact - centroid;
        for j in 0..cone.edges {
            let phi = std::f64::consts::TAU * j as f64 / cone.edges as f64;
            let f = (inward + (t1 * phi.cos() + t2 * phi.sin()) * cone.mu) * scale;
            let torque = arm.cross(&f) / rho_mm;
            wrenches.push(Vector6::new(f.x, f.y, f.z, torque.x, torque.y, torque.z));
        }
    }
    Ok(WrenchSet { wrenches, origin: *centroid, rho_mm })
}

/// Wrench coordinates expressed in an orthonormal basis of their span.
struct SpanCoords {
    dim: usize,
    coords: Vec<[f64; 6]>,
}

fn project_to_span(ws: &WrenchSet) -> Option<SpanCoords> {
    if ws.wrenches.is_empty() {
        return None;
    }
    let mut gram = Matrix6::<f64>::zeros();
    for w in &ws.wrenches {
        gram += w * w.transpose();
    }
    let eig = nalgebra::SymmetricEigen::new(gram);
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if max_ev <= 0.0 {
        return None;
    }
    let mut basis: Vec<Vector6<f64>> = Vec::new();
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > 1e-12 * max_ev {
            basis.push(eig.eigenvectors.column(i).into_owned());
        }
    }
    if basis.is_empty() {
        return None;
    }
    let dim = basis.len();
    let coords = ws
        .wrenches
        .iter()
        .map(|w| {
            let mut c = [0.0f64; 6];
            for (k, b) in basis.iter().enumerate() {
                c[k] = w.dot(b);
            }
            c
        })
        .collect();
    Some(SpanCoords { dim, coords })
}

#[inline]
fn support(coords: &[[f64; 6]], dim: usize, u: &[f64; 6]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for c in coords {
        let mut dot = 0.0;
        for k in 0..dim {
            dot += c[k] * u[k];
        }
        if dot > best {
            best = dot;
        }
    }
    best
}

fn normalize_dir(u: &mut [f64; 6], dim: usize) -> bool {
    let norm = u[..dim].iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return false;
    }
    for v in &mut u[..dim] {
        *v /= norm;
    }
    true
}

/// Pattern-search polish of a support minimizer on the unit sphere: probe
/// +/- delta along tangent directions, shrink delta when stuck.
fn polish(span: &SpanCoords, mut u: [f64; 6], mut q: f64, steps: usize) -> f64 {
    let dim = span.dim;
    let mut delta = 0.25;
    for _ in 0..steps {
        let mut improved = false;
        for axis in 0..dim {
            // coordinate axis projected onto the tangent plane at u
            let mut t = [0.0f64; 6];
            t[axis] = 1.0;
            let along = u[axis];
            for k in 0..dim {
                t[k] -= along * u[k];
            }
            if !normalize_dir(&mut t, dim) {
                continue;
            }
            for sign in [1.0, -1.0] {
                let mut cand = u;
                for k in 0..dim {
                    cand[k] += sign * delta * t[k];
                }
                if !normalize_dir(&mut cand, dim) {
                    continue;
                }
                let cq = support(&span.coords, dim, &cand);
                if cq < q {
                    q = cq;
                    u = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            delta *= 0.5;
            if delta < 1e-6 {
                break;
            }
        }
    }
    q
}

const POLISH_STARTS: usize = 5;

/// Minimum of the support function over sampled unit directions in the span,
/// the best few minimizers polished by deterministic pattern search.
/// Can be negative when the origin lies outside the wrench hull.
fn min_support(span: &SpanCoords, cfg: &QualityConfig) -> f64 {
    let dim = span.dim;
    let mut rng = substream(cfg.seed, "fc-dirs", 0);
    // keep the few best sampled directions as polish starts
    let mut best: Vec<(f64, [f64; 6])> = Vec::with_capacity(POLISH_STARTS + 1);
    for _ in 0..cfg.directions.max(1) {
        let mut u = [0.0f64; 6];
        for v in &mut u[..dim] {
            *v = StandardNormal.sample(&mut rng);
        }
        if !normalize_dir(&mut u, dim) {
            continue;
        }
        let q = support(&span.coords, dim, &u);
        if best.len() < POLISH_STARTS || q < best.last().unwrap().0 {
            let at = best.partition_point(|(bq, _)| *bq < q);
            best.insert(at, (q, u));
            best.truncate(POLISH_STARTS);
        }
    }
    let mut min_q = best.first().map(|(q, _)| *q).unwrap_or(0.0);
    if cfg.refine_steps > 0 {
        for (q, u) in best {
            min_q = min_q.min(polish(span, u, q, cfg.refine_steps));
        }
    }
    min_q
}

/// Tolerance for boundary grasps: contact lines exactly on the friction
/// cone edge put the origin on a hull face, where the support minimum is
/// zero up to rounding. Matching `antipodal_check`, the boundary counts as
/// closure.
const BOUNDARY_TOL: f64 = 1e-9;

/// True iff the origin lies inside the convex hull of the wrench set,
/// judged over the span directions (boundary-inclusive within rounding).
pub fn force_closure(ws: &WrenchSet, cfg: &QualityConfig) -> bool {
    match project_to_span(ws) {
        Some(span) => min_support(&span, cfg) > -BOUNDARY_TOL,
        None => false,
    }
}

/// Ferrari-Canny epsilon: max(0, min over unit directions of the support).
pub fn ferrari_canny(ws: &WrenchSet, cfg: &QualityConfig) -> f64 {
    match project_to_span(ws) {
        Some(span) => min_support(&span, cfg).max(0.0),
        None => 0.0,
    }
}

/// Min-max normalization over a quality batch; a constant batch maps to 0.5
/// so a degenerate database still splits at the median downstream.
pub fn normalize_qualities(batch: &[f64]) -> Vec<f64> {
    assert!(!batch.is_empty(), "normalize_qualities needs a non-empty batch");
    let lo = batch.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = batch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        return vec![0.5; batch.len()];
    }
    batch.iter().map(|q| (q - lo) / (hi - lo)).collect()
}

/// Score a sampled grasp candidate on its scene: recover contact normals by
/// casting the contact line, build the cone wrenches about the owning
/// object's centroid, and evaluate epsilon. Returns 0 when the contact
/// geometry cannot be recovered.
pub fn score_candidate(
    scene: &Scene,
    soup: &TriSoup,
    bvh: &Bvh,
    candidate: &GraspCandidate,
    cfg: &QualityConfig,
) -> f64 {
    let axis = candidate.axis();
    let len = axis.norm();
    if len < 1e-9 {
        return 0.0;
    }
    let axis = axis / len;
    let ray = Ray::new(candidate.contact1 - axis * 1.0, axis);
    let hits = bvh.intersect_all(soup, &ray, 1e-9, len + 2.0);
    if hits.len() < 2 {
        return 0.0;
    }
    let first = hits.first().unwrap();
    let last = hits.last().unwrap();
    if first.object != last.object {
        return 0.0;
    }
    let object = &scene.objects[first.object as usize];
    let cones = [
        FrictionCone { contact: first.point, normal: Unit::new_normalize(first.normal), mu: cfg.mu, edges: cfg.cone_edges },
        FrictionCone { contact: last.point, normal: Unit::new_normalize(last.normal), mu: cfg.mu, edges: cfg.cone_edges },
    ];
    match primitive_wrenches(&cones, &object.world_centroid(), object.max_radius_mm()) {
        Ok(ws) => ferrari_canny(&ws, cfg),
        Err(_) => 0.0,
    }
}

/// Canonical two-contact fixture: contacts on the x-axis at +/- width/2
/// around `center`, outward normals tilted `tilt_deg` away from the axis in
/// the xz-plane, torque reference at `centroid`.
pub fn two_contact_fixture(
    center: Point3<f64>,
    width: f64,
    tilt_deg: f64,
    centroid: Point3<f64>,
    rho: f64,
    mu: f64,
    edges: usize,
) -> WrenchSet {
    let t = tilt_deg.to_radians();
    let c1 = center + Vector3::new(-width / 2.0, 0.0, 0.0);
    let c2 = center + Vector3::new(width / 2.0, 0.0, 0.0);
    let n1 = Unit::new_normalize(Vector3::new(-t.cos(), 0.0, t.sin()));
    let n2 = Unit::new_normalize(Vector3::new(t.cos(), 0.0, t.sin()));
    let cones = [
        FrictionCone { contact: c1, normal: n1, mu, edges },
        FrictionCone { contact: c2, normal: n2, mu, edges },
    ];
    primitive_wrenches(&cones, &centroid, rho).expect("valid fixture cones")
}
