//! Affordance-map grasp optimizer: depth-edge detection, contact estimation,
//! gripper width filtering, 2D antipodal checking, and orientation
//! refinement (up to the quantization half-width) before execution.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::depth::DepthImage;
use crate::error::{Error, Result};
use crate::grasp::GripperModel;
use crate::labels::{AffordanceMap, ClassLabel, OrientationBin, BIN_WIDTH_DEG};

/// Depth-gradient edges. The stored direction is the gradient direction
/// (increasing depth), which points from the object interior toward the
/// table: it is the outward in-plane contact normal.
#[derive(Debug, Clone)]
pub struct EdgeMap {
    width: u32,
    height: u32,
    /// Gradient magnitude, mm per pixel.
    magnitude: Vec<f64>,
    /// Gradient direction in radians; meaningful only where magnitude >= threshold.
    direction: Vec<f64>,
    pub threshold: f64,
}

impl EdgeMap {
    #[inline]
    pub fn is_edge(&self, x: u32, y: u32) -> bool {
        self.magnitude[(y * self.width + x) as usize] >= self.threshold
    }

    #[inline]
    pub fn magnitude_at(&self, x: u32, y: u32) -> f64 {
        self.magnitude[(y * self.width + x) as usize]
    }

    /// Outward normal direction (radians) at an edge pixel.
    #[inline]
    pub fn direction_at(&self, x: u32, y: u32) -> f64 {
        self.direction[(y * self.width + x) as usize]
    }

    pub fn edge_count(&self) -> usize {
        self.magnitude.iter().filter(|&&m| m >= self.threshold).count()
    }
}

/// Central-difference depth gradients (one-sided at the borders).
pub fn detect_edges(depth: &DepthImage, threshold: f64) -> EdgeMap {
    let (w, h) = (depth.width(), depth.height());
    let mut magnitude = vec![0.0; (w * h) as usize];
    let mut direction = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let x0 = x.saturating_sub(1);
            let x1 = (x + 1).min(w - 1);
            let y0 = y.saturating_sub(1);
            let y1 = (y + 1).min(h - 1);
            let gx = (depth.at(x1, y) - depth.at(x0, y)) / f64::from(x1 - x0).max(1.0);
            let gy = (depth.at(x, y1) - depth.at(x, y0)) / f64::from(y1 - y0).max(1.0);
            let idx = (y * w + x) as usize;
            magnitude[idx] = (gx * gx + gy * gy).sqrt();
            direction[idx] = gy.atan2(gx);
        }
    }
    EdgeMap { width: w, height: h, magnitude, direction, threshold }
}

/// March from `center` along +/- theta to the first edge pixel on each side.
pub fn find_contacts(
    center: [f64; 2],
    theta_deg: f64,
    edges: &EdgeMap,
    max_march: usize,
) -> Result<([i64; 2], [i64; 2])> {
    let t = theta_deg.to_radians();
    let dir = [t.cos(), t.sin()];
    let march = |sign: f64| -> Option<[i64; 2]> {
        for step in 1..=max_march {
            let fx = center[0] + sign * dir[0] * step as f64;
            let fy = center[1] + sign * dir[1] * step as f64;
            let (x, y) = (fx.round() as i64, fy.round() as i64);
            if x < 0 || y < 0 || x >= i64::from(edges.width) || y >= i64::from(edges.height) {
                return None;
            }
            if edges.is_edge(x as u32, y as u32) {
                return Some([x, y]);
            }
        }
        None
    };
    match (march(-1.0), march(1.0)) {
        (Some(c1), Some(c2)) => Ok((c1, c2)),
        _ => Err(Error::OpenContact {
            x: center[0].round() as i64,
            y: center[1].round() as i64,
            max_march,
        }),
    }
}

/// Back-project both contacts at their pixel depths and compare the metric
/// span against the gripper opening (strict inequality).
pub fn width_filter(c1: [i64; 2], c2: [i64; 2], depth: &DepthImage, gripper: &GripperModel) -> bool {
    contact_span_mm(c1, c2, depth) < gripper.max_width_mm
}

fn contact_span_mm(c1: [i64; 2], c2: [i64; 2], depth: &DepthImage) -> f64 {
    let p = |c: [i64; 2]| {
        let d = depth.at(c[0] as u32, c[1] as u32);
        depth.camera.back_project(c[0] as f64, c[1] as f64, d)
    };
    (p(c1) - p(c2)).norm()
}

/// 2D antipodal condition: the contact line must lie strictly inside both
/// in-plane friction cones (half-angle atan(mu)) around the inward contact
/// normals. Exactly anti-parallel normals pass for any mu >= 0; a line
/// exactly on the cone boundary does not.
pub fn antipodal_check_2d(c1: [i64; 2], c2: [i64; 2], edges: &EdgeMap, mu: f64) -> bool {
    let axis = [(c2[0] - c1[0]) as f64, (c2[1] - c1[1]) as f64];
    let len = (axis[0] * axis[0] + axis[1] * axis[1]).sqrt();
    if len < 1e-9 {
        return false;
    }
    let axis = [axis[0] / len, axis[1] / len];
    let half = mu.atan();
    let n1 = edges.direction_at(c1[0] as u32, c1[1] as u32);
    let n2 = edges.direction_at(c2[0] as u32, c2[1] as u32);
    // inward normals: -n1 should align with +axis, -n2 with -axis
    let a1 = (-(n1.cos()) * axis[0] - n1.sin() * axis[1]).clamp(-1.0, 1.0).acos();
    let a2 = (n2.cos() * axis[0] + n2.sin() * axis[1]).clamp(-1.0, 1.0).acos();
    let inside = |a: f64| a <= 1e-9 || a + 1e-9 < half;
    inside(a1) && inside(a2)
}

/// Magnitude-weighted PCA of edge pixels selected by `keep`; returns the
/// edge tangent angle and the mean gradient, or None when too few pixels.
fn edge_pca(
    edges: &EdgeMap,
    contact: [i64; 2],
    reach: i64,
    keep: impl Fn(f64, f64) -> bool,
) -> Option<(f64, [f64; 2])> {
    let g0 = edges.direction_at(contact[0] as u32, contact[1] as u32);
    let g0v = [g0.cos(), g0.sin()];
    let mut sw = 0.0;
    let mut mean = [0.0f64; 2];
    let mut grad = [0.0f64; 2];
    let mut pts: Vec<([f64; 2], f64)> = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let (x, y) = (contact[0] + dx, contact[1] + dy);
            if x < 0 || y < 0 || x >= i64::from(edges.width) || y >= i64::from(edges.height) {
                continue;
            }
            if !keep(dx as f64, dy as f64) {
                continue;
            }
            let (xu, yu) = (x as u32, y as u32);
            if !edges.is_edge(xu, yu) {
                continue;
            }
            let d = edges.direction_at(xu, yu);
            if g0v[0] * d.cos() + g0v[1] * d.sin() < 0.5 {
                continue; // a different edge (more than 60 degrees away)
            }
            let w = edges.magnitude_at(xu, yu);
            sw += w;
            mean[0] += w * x as f64;
            mean[1] += w * y as f64;
            grad[0] += w * d.cos();
            grad[1] += w * d.sin();
            pts.push(([x as f64, y as f64], w));
        }
    }
    if pts.len() < 4 || sw <= 0.0 {
        return None;
    }
    mean[0] /= sw;
    mean[1] /= sw;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (p, w) in &pts {
        let (ex, ey) = (p[0] - mean[0], p[1] - mean[1]);
        sxx += w * ex * ex;
        sxy += w * ex * ey;
        syy += w * ey * ey;
    }
    // principal axis of the scatter = edge tangent
    let tangent = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    Some((tangent, grad))
}

/// Subpixel contact normal via a two-pass edge-line fit: a square window
/// establishes the rough tangent, then a narrow band along that tangent
/// extends the lever arm without picking up neighboring edges.
fn fitted_normal(edges: &EdgeMap, contact: [i64; 2], radius: i64) -> Option<[f64; 2]> {
    let (rough, _) = edge_pca(edges, contact, radius, |_, _| true)?;
    let t = [rough.cos(), rough.sin()];
    let reach = radius * 3;
    let (tangent, grad) = edge_pca(edges, contact, reach, |dx, dy| {
        let along = dx * t[0] + dy * t[1];
        let across = -dx * t[1] + dy * t[0];
        along.abs() <= reach as f64 && across.abs() <= 2.5
    })?;
    let normal = tangent + std::f64::consts::FRAC_PI_2;
    let mut n = [normal.cos(), normal.sin()];
    if n[0] * grad[0] + n[1] * grad[1] < 0.0 {
        n = [-n[0], -n[1]];
    }
    Some(n)
}

#[derive(Debug, Clone, Copy)]
pub struct Refinement {
    pub theta_deg: f64,
    /// False when the contact normals were too far from anti-parallel (or
    /// implied more than the quantization half-width of correction) and the
    /// initial orientation was kept.
    pub refined: bool,
}

/// Neighborhood radius for the subpixel contact-normal fit.
const NORMAL_FIT_RADIUS: i64 = 6;

/// Set the grasp direction from the contact normals: the bisector of n1 and
/// -n2. Rejects normals more than 45 degrees from anti-parallel, and
/// corrections beyond the orientation-quantization half-width.
pub fn refine_direction(c1: [i64; 2], c2: [i64; 2], edges: &EdgeMap) -> Refinement {
    let axis_deg = ((c2[1] - c1[1]) as f64).atan2((c2[0] - c1[0]) as f64).to_degrees();
    let fallback = Refinement { theta_deg: axis_deg, refined: false };

    let per_pixel = |c: [i64; 2]| {
        let d = edges.direction_at(c[0] as u32, c[1] as u32);
        [d.cos(), d.sin()]
    };
    let n1v = fitted_normal(edges, c1, NORMAL_FIT_RADIUS).unwrap_or_else(|| per_pixel(c1));
    let n2v = fitted_normal(edges, c2, NORMAL_FIT_RADIUS).unwrap_or_else(|| per_pixel(c2));
    let anti = [n1v[0] - n2v[0], n1v[1] - n2v[1]]; // n1 + (-n2)
    let norm = (anti[0] * anti[0] + anti[1] * anti[1]).sqrt();
    if norm < 1e-9 {
        return fallback;
    }
    // angle between n1 and -n2
    let cos_between = (-(n1v[0] * n2v[0] + n1v[1] * n2v[1])).clamp(-1.0, 1.0);
    if cos_between.acos().to_degrees() > 45.0 {
        return fallback;
    }
    // grasp axis opposes the bisector (n1 points from c2 toward c1)
    let theta = (-anti[1] / norm).atan2(-anti[0] / norm).to_degrees();
    // compare as undirected lines
    let mut delta = (theta - axis_deg).rem_euclid(180.0);
    if delta > 90.0 {
        delta -= 180.0;
    }
    if delta.abs() > BIN_WIDTH_DEG / 2.0 + 1.0 {
        return fallback;
    }
    Refinement { theta_deg: axis_deg + delta, refined: true }
}

/// A refined, executable grasp in the unrotated sample frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizedGrasp {
    pub bin: u8,
    /// The score-map pixel the candidate came from (bin-rotated frame).
    pub map_px: [u32; 2],
    /// Grasp center pixel in the unrotated frame.
    pub center_px: [f64; 2],
    /// Back-projected grasp center (world mm).
    pub center_mm: [f64; 3],
    /// The bin's quantized orientation.
    pub theta_initial_deg: f64,
    /// Orientation after refinement, unrotated frame.
    pub theta_refined_deg: f64,
    pub contact_px1: [f64; 2],
    pub contact_px2: [f64; 2],
    pub width_mm: f64,
    pub valid: bool,
    pub refined: bool,
    /// Positive-class score at the center pixel.
    pub score: f64,
}

/// Per-pixel positive-class score in [0, 1].
#[derive(Debug, Clone)]
pub struct ScoreMap {
    width: u32,
    height: u32,
    score: Vec<f32>,
}

impl ScoreMap {
    /// Ground-truth maps score positive pixels 1.0, everything else 0.
    pub fn from_affordance(map: &AffordanceMap) -> Self {
        let score = map
            .classes()
            .iter()
            .map(|&c| if c == ClassLabel::Positive { 1.0 } else { 0.0 })
            .collect();
        Self { width: map.width(), height: map.height(), score }
    }

    /// Prediction maps: the green channel of an RGB PNG, scaled to [0, 1].
    pub fn from_rgb_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
        let rgb = img.to_rgb8();
        let (width, height) = rgb.dimensions();
        let score = rgb.pixels().map(|p| f32::from(p.0[1]) / 255.0).collect();
        Ok(Self { width, height, score })
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> f32 {
        self.score[(y * self.width + x) as usize]
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }
}

/// One orientation bin's inputs to the optimizer: the bin-rotated depth
/// image (camera rotation composed in) and its positive-class scores.
pub struct BinView {
    pub bin: OrientationBin,
    pub depth: DepthImage,
    pub score: ScoreMap,
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    pub mu: f64,
    /// Depth-gradient magnitude that counts as an edge, mm per pixel.
    pub edge_threshold: f64,
    /// Candidate pixels examined in score order.
    pub top_k: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { mu: 0.5, edge_threshold: 5.0, top_k: 20 }
    }
}

/// Rank positive pixels across all bins and return the best candidate that
/// survives contact estimation, the width filter, and the antipodal check,
/// with its orientation refined. Coordinates come back in the unrotated
/// frame defined by `base_camera`.
pub fn select_best(
    bins: &[BinView],
    base_camera: &CameraModel,
    gripper: &GripperModel,
    cfg: &OptimizerConfig,
) -> Result<OptimizedGrasp> {
    select_best_excluding(bins, base_camera, gripper, cfg, &HashSet::new())
}

/// `select_best` with a set of (bin, x, y) candidate pixels masked out;
/// the evaluation harness uses this for its regrasp rule.
pub fn select_best_excluding(
    bins: &[BinView],
    base_camera: &CameraModel,
    gripper: &GripperModel,
    cfg: &OptimizerConfig,
    exclude: &HashSet<(u8, u32, u32)>,
) -> Result<OptimizedGrasp> {
    let candidates = ranked_candidates(bins, cfg.top_k, exclude);
    if candidates.is_empty() {
        return Err(Error::NoExecutableGrasp(cfg.top_k));
    }

    let edge_maps: Vec<EdgeMap> = bins.iter().map(|b| detect_edges(&b.depth, cfg.edge_threshold)).collect();

    for (score, bi, x, y) in candidates {
        let view = &bins[bi];
        let edges = &edge_maps[bi];
        let depth = &view.depth;
        let max_march = (gripper.max_width_mm / depth.camera.mm_per_pixel(depth.background_depth_mm)).ceil() as usize + 2;

        let Ok((c1, c2)) = find_contacts([f64::from(x), f64::from(y)], 0.0, edges, max_march) else {
            continue;
        };
        if !width_filter(c1, c2, depth, gripper) {
            continue;
        }
        if !antipodal_check_2d(c1, c2, edges, cfg.mu) {
            continue;
        }
        let refinement = refine_direction(c1, c2, edges);

        // map everything back to the unrotated frame through world space
        let center_world = depth.camera.back_project(f64::from(x), f64::from(y), depth.at(x, y));
        let to_base = |c: [i64; 2]| {
            let d = depth.at(c[0] as u32, c[1] as u32);
            let world = depth.camera.back_project(c[0] as f64, c[1] as f64, d);
            let px = base_camera.project(&world);
            ([px.x, px.y], world)
        };
        let (c1_base, w1) = to_base(c1);
        let (c2_base, w2) = to_base(c2);
        let center_base = base_camera.project(&center_world);

        let theta_initial = view.bin.rotation_angle_deg();
        let theta_refined = (refinement.theta_deg + theta_initial).rem_euclid(360.0);
        return Ok(OptimizedGrasp {
            bin: view.bin.index,
            map_px: [x, y],
            center_px: [center_base.x, center_base.y],
            center_mm: center_world.coords.into(),
            theta_initial_deg: theta_initial,
            theta_refined_deg: theta_refined,
            contact_px1: c1_base,
            contact_px2: c2_base,
            width_mm: (w1 - w2).norm(),
            valid: true,
            refined: refinement.refined,
            score: f64::from(score),
        });
    }
    Err(Error::NoExecutableGrasp(cfg.top_k))
}

/// The baseline selection without the optimizer: execute the best-scored
/// map pixel directly at its bin's quantized orientation. No contact
/// estimation, width filtering, or refinement happens.
pub fn select_argmax(
    bins: &[BinView],
    base_camera: &CameraModel,
    gripper: &GripperModel,
    exclude: &HashSet<(u8, u32, u32)>,
) -> Result<OptimizedGrasp> {
    let candidates = ranked_candidates(bins, 1, exclude);
    let Some(&(score, bi, x, y)) = candidates.first() else {
        return Err(Error::NoExecutableGrasp(1));
    };
    let view = &bins[bi];
    let depth = &view.depth;
    let center_world = depth.camera.back_project(f64::from(x), f64::from(y), depth.at(x, y));
    let center_base = base_camera.project(&center_world);
    let theta = view.bin.rotation_angle_deg();
    // report the open jaw positions as nominal contacts
    let t = theta.to_radians();
    let jaw = gripper.max_width_mm / 2.0;
    let axis = nalgebra::Vector3::new(t.cos(), t.sin(), 0.0);
    let j1 = base_camera.project(&(center_world - axis * jaw));
    let j2 = base_camera.project(&(center_world + axis * jaw));
    Ok(OptimizedGrasp {
        bin: view.bin.index,
        map_px: [x, y],
        center_px: [center_base.x, center_base.y],
        center_mm: center_world.coords.into(),
        theta_initial_deg: theta,
        theta_refined_deg: theta,
        contact_px1: [j1.x, j1.y],
        contact_px2: [j2.x, j2.y],
        width_mm: gripper.max_width_mm,
        valid: true,
        refined: false,
        score: f64::from(score),
    })
}

/// Positive-scored pixels over all bins, best first; ties resolve by
/// (bin, y, x) for determinism.
fn ranked_candidates(
    bins: &[BinView],
    top_k: usize,
    exclude: &HashSet<(u8, u32, u32)>,
) -> Vec<(f32, usize, u32, u32)> {
    let mut all: Vec<(f32, usize, u32, u32)> = Vec::new();
    for (bi, view) in bins.iter().enumerate() {
        for y in 0..view.score.height() {
            for x in 0..view.score.width() {
                let s = view.score.at(x, y);
                if s > 0.0 && !exclude.contains(&(view.bin.index, x, y)) {
                    all.push((s, bi, x, y));
                }
            }
        }
    }
    all.sort_unstable_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.3.cmp(&b.3))
            .then(a.2.cmp(&b.2))
    });
    all.truncate(top_k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraModel;
    use crate::depth::render_depth;
    use crate::primitives;
    use crate::scene::{PosedObject, Scene};
    use approx::assert_relative_eq;
    use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
    use std::sync::Arc;

    fn flat_cam(side: u32) -> CameraModel {
        CameraModel::orthographic(1.0, side, side, 500.0)
    }

    /// A bar of the given xy half-sizes standing on the table, rotated by
    /// `yaw_deg` about z.
    fn bar_scene(hx: f64, hy: f64, height: f64, yaw_deg: f64) -> Scene {
        let mesh = Arc::new(primitives::cuboid(hx * 2.0, hy * 2.0, height));
        let pose = Isometry3::from_parts(
            Translation3::new(0.0, 0.0, height / 2.0),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw_deg.to_radians()),
        );
        Scene { objects: vec![PosedObject { mesh, pose }], table_extent_mm: [600.0, 600.0] }
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = DepthImage::constant(32, 32, 400.0, 500.0, flat_cam(32));
        let edges = detect_edges(&img, 5.0);
        assert_eq!(edges.edge_count(), 0);
    }

    #[test]
    fn vertical_step_gives_x_direction_edges() {
        let mut img = DepthImage::constant(32, 32, 500.0, 500.0, flat_cam(32));
        for y in 0..32 {
            for x in 16..32 {
                img.set(x, y, 470.0); // 30 mm step between columns 15 and 16
            }
        }
        let edges = detect_edges(&img, 5.0);
        for y in 1..31 {
            assert!(edges.is_edge(15, y));
            assert!(edges.is_edge(16, y));
            // gradient parallel to the x-axis
            let d = edges.direction_at(15, y);
            assert!(d.sin().abs() < 1e-12, "direction {d}");
        }
        assert!(!edges.is_edge(5, 16));
    }

    #[test]
    fn cube_edges_trace_the_silhouette() {
        let scene = bar_scene(15.0, 15.0, 30.0, 0.0);
        let cam = flat_cam(120);
        let img = render_depth(&scene, &cam, 120, 120).unwrap();
        let edges = detect_edges(&img, 5.0);
        // analytic silhouette: |x_w| = 15 or |y_w| = 15 in world mm
        for y in 0..120u32 {
            for x in 0..120u32 {
                if edges.is_edge(x, y) {
                    let w = cam.back_project(f64::from(x), f64::from(y), 500.0);
                    let dx = (w.x.abs() - 15.0).abs();
                    let dy = (w.y.abs() - 15.0).abs();
                    let on_outline = (dx <= 1.0 && w.y.abs() <= 16.0) || (dy <= 1.0 && w.x.abs() <= 16.0);
                    assert!(on_outline, "edge pixel ({x},{y}) world ({:.1},{:.1}) off outline", w.x, w.y);
                }
            }
        }
        assert!(edges.edge_count() > 0);
    }

    fn bar_edges(width_px: u32) -> (DepthImage, EdgeMap) {
        // a 20 px wide bar (columns 22..42) 30 mm above the table
        let mut img = DepthImage::constant(64, 64, 500.0, 500.0, flat_cam(64));
        let half = width_px / 2;
        for y in 0..64 {
            for x in 32 - half..32 + half {
                img.set(x, y, 470.0);
            }
        }
        let edges = detect_edges(&img, 5.0);
        (img, edges)
    }

    #[test]
    fn find_contacts_across_a_bar() {
        let (_img, edges) = bar_edges(20);
        let (c1, c2) = find_contacts([32.0, 32.0], 0.0, &edges, 30).unwrap();
        assert_eq!(c1[1], 32);
        assert_eq!(c2[1], 32);
        // contacts straddle the bar and are roughly 10 px out each side
        assert!((c1[0] - 32).abs() >= 9 && (c1[0] - 32).abs() <= 11, "{c1:?}");
        assert!((c2[0] - 32).abs() >= 9 && (c2[0] - 32).abs() <= 11, "{c2:?}");
    }

    #[test]
    fn empty_table_center_is_open_contact() {
        let img = DepthImage::constant(64, 64, 500.0, 500.0, flat_cam(64));
        let edges = detect_edges(&img, 5.0);
        assert!(matches!(
            find_contacts([32.0, 32.0], 0.0, &edges, 20),
            Err(Error::OpenContact { .. })
        ));
    }

    #[test]
    fn off_axis_center_still_finds_collinear_contacts() {
        let (_img, edges) = bar_edges(20);
        let (c1, c2) = find_contacts([35.0, 32.0], 0.0, &edges, 30).unwrap();
        // asymmetric (3 px off the bar axis) but collinear with theta
        assert_eq!(c1[1], 32);
        assert_eq!(c2[1], 32);
        assert_ne!((c1[0] - 35).abs(), (c2[0] - 35).abs());
    }

    #[test]
    fn width_filter_boundary_is_strict() {
        let img = DepthImage::constant(128, 128, 480.0, 500.0, flat_cam(128));
        let gripper = GripperModel::default(); // 85 mm
        assert!(width_filter([50, 64], [70, 64], &img, &gripper)); // 20 mm
        assert!(!width_filter([10, 64], [100, 64], &img, &gripper)); // 90 mm
        assert!(!width_filter([20, 64], [105, 64], &img, &gripper)); // exactly 85 mm
    }

    #[test]
    fn antipodal_2d_parallel_bar_edges_pass() {
        let (_img, edges) = bar_edges(20);
        let (c1, c2) = find_contacts([32.0, 32.0], 0.0, &edges, 30).unwrap();
        assert!(antipodal_check_2d(c1, c2, &edges, 0.2));
        // exactly anti-parallel normals pass even with no friction at all
        assert!(antipodal_check_2d(c1, c2, &edges, 0.0));
    }

    #[test]
    fn antipodal_2d_wedge_boundary_is_strictly_false() {
        // ramp patches give exact in-plane normal angles: the walls' normals
        // sit atan(mu) from anti-parallel on each side, putting the contact
        // line exactly on both cone boundaries
        let gamma = 20.0f64.to_radians();
        let s = 3.0; // ramp slope, mm per pixel
        let mut img = DepthImage::constant(64, 64, 500.0, 500.0, flat_cam(64));
        let ramp = |dir: f64, x: u32, y: u32| 470.0 + s * (dir.cos() * f64::from(x) + dir.sin() * f64::from(y));
        let n1_dir = std::f64::consts::PI + gamma; // outward ~ -x, tilted by gamma
        let n2_dir = -gamma; // outward ~ +x, tilted by -gamma
        for y in 0..64 {
            for x in 0..28 {
                img.set(x, y, ramp(n1_dir, x, y));
            }
            for x in 36..64 {
                img.set(x, y, ramp(n2_dir, x, y));
            }
        }
        let edges = detect_edges(&img, 1.0);
        let c1 = [10i64, 32];
        let c2 = [54i64, 32];
        assert!(edges.is_edge(10, 32) && edges.is_edge(54, 32));
        // exactly at the boundary: strictly false
        assert!(!antipodal_check_2d(c1, c2, &edges, gamma.tan()));
        // a slightly wider cone passes
        assert!(antipodal_check_2d(c1, c2, &edges, (gamma * 1.1).tan()));
        // a narrower cone clearly fails
        assert!(!antipodal_check_2d(c1, c2, &edges, (gamma * 0.9).tan()));
    }

    #[test]
    fn antipodal_2d_perpendicular_edges_fail() {
        // an L-shaped step: one vertical edge, one horizontal edge
        let mut img = DepthImage::constant(64, 64, 500.0, 500.0, flat_cam(64));
        for y in 20..64 {
            for x in 20..64 {
                img.set(x, y, 470.0);
            }
        }
        let edges = detect_edges(&img, 5.0);
        let c1 = [20, 40]; // vertical edge, normal along -x
        let c2 = [40, 20]; // horizontal edge, normal along -y
        assert!(edges.is_edge(c1[0] as u32, c1[1] as u32));
        assert!(edges.is_edge(c2[0] as u32, c2[1] as u32));
        assert!(!antipodal_check_2d(c1, c2, &edges, 0.3));
    }

    #[test]
    fn refine_recovers_bar_rotation_within_a_degree() {
        // bar at 27.5 degrees: its cross grasps (117.5) land in bin 5
        // (112.5), leaving a 5 degree quantization error for the optimizer
        // to recover in the bin frame.
        let scene = bar_scene(25.0, 8.0, 30.0, 27.5);
        let cam = flat_cam(128);
        let img = render_depth(&scene, &cam, 128, 128).unwrap();
        let rotated = crate::labels::rotate_to_bin(&img, OrientationBin::new(5));
        let edges = detect_edges(&rotated, 5.0);
        let center = rotated.camera.project(&nalgebra::Point3::new(0.0, 0.0, 30.0));
        let (c1, c2) = find_contacts([center.x, center.y], 0.0, &edges, 30).unwrap();
        let r = refine_direction(c1, c2, &edges);
        assert!(r.refined);
        let mut delta = (r.theta_deg - 5.0).rem_euclid(180.0);
        if delta > 90.0 {
            delta -= 180.0;
        }
        assert!(delta.abs() < 1.0, "refined {} vs true 5", r.theta_deg);
    }

    #[test]
    fn refine_handles_exact_permutation_bins_coarsely() {
        // a 90 degree rotation permutes pixels without interpolation, so the
        // edge stays binary; refinement still lands within a few degrees
        let scene = bar_scene(25.0, 8.0, 30.0, 5.0);
        let cam = flat_cam(128);
        let img = render_depth(&scene, &cam, 128, 128).unwrap();
        let rotated = crate::labels::rotate_to_bin(&img, OrientationBin::new(4));
        let edges = detect_edges(&rotated, 5.0);
        let center = rotated.camera.project(&nalgebra::Point3::new(0.0, 0.0, 30.0));
        let (c1, c2) = find_contacts([center.x, center.y], 0.0, &edges, 30).unwrap();
        let r = refine_direction(c1, c2, &edges);
        assert!(r.refined);
        let mut delta = (r.theta_deg - 5.0).rem_euclid(180.0);
        if delta > 90.0 {
            delta -= 180.0;
        }
        assert!(delta.abs() < 4.0, "refined {} vs true 5", r.theta_deg);
    }

    #[test]
    fn refine_keeps_axis_aligned_bar_unchanged() {
        let (_img, edges) = bar_edges(20);
        let (c1, c2) = find_contacts([32.0, 32.0], 0.0, &edges, 30).unwrap();
        let r = refine_direction(c1, c2, &edges);
        assert!(r.refined);
        assert_relative_eq!(r.theta_deg.rem_euclid(180.0), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn refine_never_exceeds_quantization_half_width() {
        let (_img, edges) = bar_edges(20);
        let (c1, c2) = find_contacts([32.0, 32.0], 0.0, &edges, 30).unwrap();
        let r = refine_direction(c1, c2, &edges);
        if r.refined {
            let axis = 0.0;
            let mut delta = (r.theta_deg - axis).rem_euclid(180.0);
            if delta > 90.0 {
                delta -= 180.0;
            }
            assert!(delta.abs() <= BIN_WIDTH_DEG / 2.0 + 1.0);
        }
    }

    /// Build bin views with positive labels at the projections of the given
    /// (bin, world point) pairs.
    fn gt_bin_views(
        scene: &Scene,
        side: u32,
        positives: &[(u8, nalgebra::Point3<f64>)],
    ) -> (Vec<BinView>, CameraModel) {
        let cam = flat_cam(side);
        let base = render_depth(scene, &cam, side, side).unwrap();
        let base_camera = base.camera.clone();
        let views = OrientationBin::all()
            .map(|bin| {
                let depth = crate::labels::rotate_to_bin(&base, bin);
                let mut map = AffordanceMap::background(side, side, bin);
                for &(b, world) in positives {
                    if b == bin.index {
                        let px = depth.camera.project(&world);
                        map.set(px.x.round() as u32, px.y.round() as u32, ClassLabel::Positive);
                    }
                }
                let score = ScoreMap::from_affordance(&map);
                BinView { bin, depth, score }
            })
            .collect();
        (views, base_camera)
    }

    #[test]
    fn select_best_grasps_bar_center() {
        // bar across x: grasp axis must be along y (bin 4 = 90 degrees)
        let scene = bar_scene(25.0, 8.0, 30.0, 0.0);
        let top = nalgebra::Point3::new(0.0, 0.0, 30.0);
        let (views, base_camera) = gt_bin_views(&scene, 128, &[(4, top)]);
        let g = select_best(&views, &base_camera, &GripperModel::default(), &OptimizerConfig::default()).unwrap();
        assert!(g.valid);
        assert_eq!(g.bin, 4);
        assert!((g.width_mm - 16.0).abs() < 3.0, "width {}", g.width_mm);
        let line = g.theta_refined_deg.rem_euclid(180.0);
        assert!((line - 90.0).abs() < 2.0, "refined line {line}");
        // center maps back near the image center in the unrotated frame
        assert!((g.center_px[0] - 63.5).abs() < 2.0 && (g.center_px[1] - 63.5).abs() < 2.0);
    }

    #[test]
    fn all_background_maps_give_no_executable_grasp() {
        let scene = bar_scene(25.0, 8.0, 30.0, 0.0);
        let (views, base_camera) = gt_bin_views(&scene, 128, &[]);
        assert!(matches!(
            select_best(&views, &base_camera, &GripperModel::default(), &OptimizerConfig::default()),
            Err(Error::NoExecutableGrasp(_))
        ));
    }

    #[test]
    fn oversized_candidate_is_skipped_for_next_valid() {
        // two bars: a 100 mm one (ungraspable) and a 16 mm one
        let wide = Arc::new(primitives::cuboid(40.0, 100.0, 30.0));
        let slim = Arc::new(primitives::cuboid(40.0, 16.0, 30.0));
        let scene = Scene {
            objects: vec![
                PosedObject {
                    mesh: wide,
                    pose: Isometry3::from_parts(Translation3::new(-60.0, 0.0, 15.0), UnitQuaternion::identity()),
                },
                PosedObject {
                    mesh: slim,
                    pose: Isometry3::from_parts(Translation3::new(60.0, 0.0, 15.0), UnitQuaternion::identity()),
                },
            ],
            table_extent_mm: [600.0, 600.0],
        };
        // wide bar center ranks first within bin 4 (smaller y, then x order),
        // slim second; both grasp across y
        let (views, base_camera) = gt_bin_views(
            &scene,
            256,
            &[
                (4, nalgebra::Point3::new(-60.0, 0.0, 30.0)),
                (4, nalgebra::Point3::new(60.0, 0.0, 30.0)),
            ],
        );
        let g = select_best(&views, &base_camera, &GripperModel::default(), &OptimizerConfig::default()).unwrap();
        // the 100 mm span fails the width filter; the slim bar wins
        assert!((g.center_mm[0] - 60.0).abs() < 3.0, "selected x {}", g.center_mm[0]);
        assert!(g.width_mm < 20.0);
    }

    #[test]
    fn coordinate_round_trip_through_bin_frames() {
        let cam = flat_cam(128);
        let base = DepthImage::constant(128, 128, 500.0, 500.0, cam.clone());
        for bin in OrientationBin::all() {
            let rotated = crate::labels::rotate_to_bin(&base, bin);
            // a pixel in the rotated frame -> world -> back to rotated frame
            let world = rotated.camera.back_project(40.0, 80.0, 470.0);
            let px = rotated.camera.project(&world);
            assert!((px.x - 40.0).abs() < 1e-9 && (px.y - 80.0).abs() < 1e-9, "bin {}", bin.index);
        }
    }
}
