//! Simulated end-to-end evaluation: execute map-selected grasps against the
//! ground-truth scene meshes and report success statistics with and without
//! the grasp optimizer.
//!
//! A grasp executes as two finger rays closing along the grasp axis at the
//! planned height. Success needs both fingers to contact the same object
//! within the gripper opening and the 3D antipodal condition to hold at the
//! mesh contacts. A failed attempt masks its map pixel and regrasps, up to
//! two retries; repeating the same failure reason ends the trial.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{Point3, Unit, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvh::{Bvh, Ray, TriSoup};
use crate::error::Result;
use crate::grasp::GripperModel;
use crate::labels::{build_affordance_map, median_threshold, quantize_orientation, LabelingConfig, OrientationBin};
use crate::mesh::TriMesh;
use crate::optimizer::{select_argmax, select_best_excluding, BinView, OptimizedGrasp, OptimizerConfig, ScoreMap};
use crate::pipeline::{bin_frame, sample_and_score, GenerateConfig};
use crate::quality::normalize_qualities;
use crate::sampler::antipodal_check;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    NoCandidate,
    WidthExceeded,
    NotForceClosure,
    MissedObject,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub scene: usize,
    pub success: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<FailureReason>,
    pub attempts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grasp: Option<OptimizedGrasp>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: PipelineVariant,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub failure_histogram: BTreeMap<FailureReason, usize>,
    pub skipped_scenes: usize,
    pub config: serde_json::Value,
    pub results: Vec<TrialResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineVariant {
    /// Full optimizer: contact estimation, width filter, antipodal check,
    /// orientation refinement.
    WithGo,
    /// Execute the argmax map pixel at its bin's quantized orientation.
    WithoutGo,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub generate: GenerateConfig,
    pub optimizer_mu: f64,
    pub edge_threshold: f64,
    pub top_k: usize,
    /// Contact-model friction used by the simulation.
    pub simulation_mu: f64,
    /// Fingers descend this far below the planned center depth.
    pub insertion_offset_mm: f64,
    pub max_attempts: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            generate: GenerateConfig {
                noise_at_generation: false,
                ..GenerateConfig::default()
            },
            optimizer_mu: 0.5,
            edge_threshold: 5.0,
            top_k: 20,
            simulation_mu: 0.5,
            insertion_offset_mm: 10.0,
            max_attempts: 3,
        }
    }
}

/// Outcome of executing one grasp in simulation.
pub fn simulate_grasp(
    soup: &TriSoup,
    bvh: &Bvh,
    grasp: &OptimizedGrasp,
    gripper: &GripperModel,
    mu: f64,
    insertion_offset_mm: f64,
) -> std::result::Result<(), FailureReason> {
    let center = Point3::from(grasp.center_mm);
    let z = (center.z - insertion_offset_mm).max(1.0);
    let exec_center = Point3::new(center.x, center.y, z);
    let t = grasp.theta_refined_deg.to_radians();
    let axis = Vector3::new(t.cos(), t.sin(), 0.0);
    let half = gripper.max_width_mm / 2.0;

    // a fingertip that starts inside an object means the object does not
    // fit the jaw opening: the first thing an outward ray sees from inside
    // a closed mesh is a backface
    let inside = |sign: f64| {
        let start = exec_center + axis * (sign * half);
        let ray = Ray::new(start, axis * sign);
        matches!(bvh.intersect(soup, &ray, 0.0, f64::INFINITY), Some(h) if !h.front_face)
    };
    if inside(1.0) || inside(-1.0) {
        return Err(FailureReason::WidthExceeded);
    }

    let finger = |sign: f64| {
        let start = exec_center + axis * (sign * half);
        let ray = Ray::new(start, axis * (-sign));
        bvh.intersect(soup, &ray, 0.0, gripper.max_width_mm)
    };
    let (h1, h2) = match (finger(1.0), finger(-1.0)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(FailureReason::MissedObject),
    };
    // partial overshoot: one jaw inside the object's silhouette
    if !h1.front_face || !h2.front_face {
        return Err(FailureReason::WidthExceeded);
    }
    if h1.object != h2.object {
        return Err(FailureReason::MissedObject);
    }
    let width = (h1.point - h2.point).norm();
    if width >= gripper.max_width_mm {
        return Err(FailureReason::WidthExceeded);
    }
    let n1 = Unit::new_normalize(h1.normal);
    let n2 = Unit::new_normalize(h2.normal);
    if !antipodal_check(&h1.point, &h2.point, &n1, &n2, mu) {
        return Err(FailureReason::NotForceClosure);
    }
    Ok(())
}

/// Ground-truth bin views for one scored scene: label maps built from the
/// sampled grasps, score = 1 on positive pixels.
pub fn ground_truth_views(
    pass: &crate::pipeline::ScenePass,
    cfg: &GenerateConfig,
) -> Result<(Vec<BinView>, crate::camera::CameraModel)> {
    let full = crate::depth::render_depth(&pass.scene, &pass.camera, cfg.render_width, cfg.render_height)?;
    let qualities: Vec<f64> = pass.grasps.iter().map(|g| g.quality).collect();
    let normalized = normalize_qualities(&qualities);
    let theta_q = median_threshold(&normalized);
    let labeling = LabelingConfig {
        quality_threshold: theta_q,
        sigma: cfg.sigma,
        augmentation_enabled: cfg.augment,
    };
    let base = bin_frame(&full, OrientationBin::new(0), cfg.out_size)?;
    let base_camera = base.camera.clone();

    let views = OrientationBin::all()
        .map(|bin| -> Result<BinView> {
            let depth = bin_frame(&full, bin, cfg.out_size)?;
            let grasps: Vec<_> = pass
                .grasps
                .iter()
                .zip(&normalized)
                .filter(|(g, _)| quantize_orientation(g.theta_deg) == bin)
                .map(|(g, &nq)| {
                    let mut l = *g;
                    l.quality = nq;
                    l
                })
                .collect();
            let map = build_affordance_map(&depth, &grasps, bin, &labeling)?;
            Ok(BinView { bin, score: ScoreMap::from_affordance(&map), depth })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((views, base_camera))
}

/// External prediction source: score PNGs per (scene, bin) under a
/// directory, named `scene_SSSS_bin_BB.png`.
#[derive(Debug, Clone)]
pub struct PredictionSource {
    pub dir: PathBuf,
}

impl PredictionSource {
    fn load(&self, scene: usize, bin: OrientationBin) -> Result<ScoreMap> {
        let path = self.dir.join(format!("scene_{scene:04}_bin_{:02}.png", bin.index));
        let bytes = std::fs::read(&path)?;
        ScoreMap::from_rgb_png(&bytes)
    }
}

/// Run one trial with the regrasp rule: a failed attempt masks its map pixel
/// and retries; two failures for the same reason (or exhausting attempts)
/// end the trial.
fn run_trial(
    scene_index: usize,
    views: &[BinView],
    base_camera: &crate::camera::CameraModel,
    soup: &TriSoup,
    bvh: &Bvh,
    cfg: &EvalConfig,
    variant: PipelineVariant,
) -> TrialResult {
    let opt_cfg = OptimizerConfig { mu: cfg.optimizer_mu, edge_threshold: cfg.edge_threshold, top_k: cfg.top_k };
    let mut exclude: HashSet<(u8, u32, u32)> = HashSet::new();
    let mut seen: Vec<FailureReason> = Vec::new();

    for attempt in 1..=cfg.max_attempts.max(1) {
        let selected = match variant {
            PipelineVariant::WithGo => {
                select_best_excluding(views, base_camera, &cfg.generate.gripper, &opt_cfg, &exclude)
            }
            PipelineVariant::WithoutGo => select_argmax(views, base_camera, &cfg.generate.gripper, &exclude),
        };
        let grasp = match selected {
            Ok(g) => g,
            Err(_) => {
                return TrialResult {
                    scene: scene_index,
                    success: false,
                    failure_reason: Some(FailureReason::NoCandidate),
                    attempts: attempt,
                    grasp: None,
                }
            }
        };
        match simulate_grasp(soup, bvh, &grasp, &cfg.generate.gripper, cfg.simulation_mu, cfg.insertion_offset_mm) {
            Ok(()) => {
                return TrialResult {
                    scene: scene_index,
                    success: true,
                    failure_reason: None,
                    attempts: attempt,
                    grasp: Some(grasp),
                }
            }
            Err(reason) => {
                exclude.insert((grasp.bin, grasp.map_px[0], grasp.map_px[1]));
                let repeated = seen.contains(&reason);
                seen.push(reason);
                if repeated || attempt == cfg.max_attempts.max(1) {
                    return TrialResult {
                        scene: scene_index,
                        success: false,
                        failure_reason: Some(reason),
                        attempts: attempt,
                        grasp: Some(grasp),
                    };
                }
            }
        }
    }
    unreachable!("trial loop always returns");
}

/// Evaluate `scenes` held-out scenes under the chosen pipeline variant.
/// Scenes rejected at generation time (too few grasps) are skipped and
/// counted separately.
pub fn run_eval(
    cfg: &EvalConfig,
    pool: &[Arc<TriMesh>],
    scenes: usize,
    variant: PipelineVariant,
    predictions: Option<&PredictionSource>,
) -> Result<EvalReport> {
    let outcomes: Vec<Option<TrialResult>> = (0..scenes)
        .into_par_iter()
        .map(|i| -> Result<Option<TrialResult>> {
            let Some(pass) = sample_and_score(&cfg.generate, pool, i)? else {
                return Ok(None);
            };
            let (mut views, base_camera) = ground_truth_views(&pass, &cfg.generate)?;
            if let Some(src) = predictions {
                for v in &mut views {
                    v.score = src.load(i, v.bin)?;
                }
            }
            let soup = pass.scene.triangle_soup();
            let bvh = Bvh::build(&soup);
            Ok(Some(run_trial(i, &views, &base_camera, &soup, &bvh, cfg, variant)))
        })
        .collect::<Result<_>>()?;

    let skipped = outcomes.iter().filter(|o| o.is_none()).count();
    let results: Vec<TrialResult> = outcomes.into_iter().flatten().collect();
    let successes = results.iter().filter(|r| r.success).count();
    let mut histogram: BTreeMap<FailureReason, usize> = BTreeMap::new();
    for r in &results {
        if let Some(reason) = r.failure_reason {
            *histogram.entry(reason).or_default() += 1;
        }
    }
    Ok(EvalReport {
        variant,
        trials: results.len(),
        successes,
        success_rate: if results.is_empty() { 0.0 } else { successes as f64 / results.len() as f64 },
        failure_histogram: histogram,
        skipped_scenes: skipped,
        config: serde_json::to_value(cfg)?,
        results,
    })
}
