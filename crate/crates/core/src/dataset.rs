//! Dataset persistence: samples on disk, the manifest, dataset mixing, and
//! import of externally annotated (real) grasp records.
//!
//! Directory layout:
//!
//! ```text
//! dataset/
//!   manifest.json
//!   depth/NNNNNN.png    # 16-bit grayscale, value = round(depth_mm * 10)
//!   labels/NNNNNN.png   # RGB classes: red negative, green positive, blue background
//!   grasps/NNNNNN.json  # grasp record list
//! ```
//!
//! Manifests never contain timestamps, so identical configs and seeds
//! reproduce byte-identical files.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::depth::{DepthImage, DEPTH_PNG_SCALE};
use crate::error::{Error, Result};
use crate::grasp::{grasp_records_json, parse_grasp_records, GraspCandidate};
use crate::labels::{
    augment_segment_px, median_threshold, quantize_orientation, AffordanceMap, ClassLabel, OrientationBin,
};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Real,
}

/// Manifest entry for one persisted sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    /// Scene index the sample came from (several bins share a scene).
    pub scene: usize,
    pub bin: u8,
    pub depth_image: String,
    pub label_map: String,
    pub grasps: String,
    pub provenance: Provenance,
    /// [background, negative, positive] pixel counts of the label map.
    pub class_counts: [u64; 3],
    pub background_depth_mm: f64,
    /// Camera of the stored (rotated, cropped) frame.
    pub camera: CameraModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub depth_scale: f64,
    pub samples: Vec<SampleEntry>,
    /// [background, negative, positive] totals over all samples.
    pub class_totals: [u64; 3],
    /// Snapshot of the generating configuration (shape depends on the
    /// producing operation).
    pub config: serde_json::Value,
}

impl DatasetManifest {
    pub fn new(config: serde_json::Value) -> Self {
        Self { version: 1, depth_scale: DEPTH_PNG_SCALE, samples: Vec::new(), class_totals: [0; 3], config }
    }

    pub fn push(&mut self, entry: SampleEntry) {
        for k in 0..3 {
            self.class_totals[k] += entry.class_counts[k];
        }
        self.samples.push(entry);
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let m: Self = serde_json::from_slice(bytes)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Structural checks: totals match entry sums, bins in range, ids unique.
    pub fn validate(&self) -> Result<()> {
        let mut totals = [0u64; 3];
        let mut ids = std::collections::HashSet::new();
        for e in &self.samples {
            if e.bin >= 16 {
                return Err(Error::InvalidRecord(format!("sample {} bin {} out of range", e.id, e.bin)));
            }
            if !ids.insert(&e.id) {
                return Err(Error::InvalidRecord(format!("duplicate sample id {}", e.id)));
            }
            for k in 0..3 {
                totals[k] += e.class_counts[k];
            }
        }
        if totals != self.class_totals {
            return Err(Error::Corrupt(format!(
                "manifest class totals {:?} do not match entry sums {:?}",
                self.class_totals, totals
            )));
        }
        Ok(())
    }
}

/// A fully loaded sample.
#[derive(Debug, Clone)]
pub struct DatasetSample {
    pub entry: SampleEntry,
    pub depth: DepthImage,
    pub map: AffordanceMap,
    pub grasps: Vec<GraspCandidate>,
}

/// Filesystem handle for one dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetStore {
    root: PathBuf,
}

pub struct SampleData<'a> {
    pub scene: usize,
    pub bin: OrientationBin,
    pub depth: &'a DepthImage,
    pub map: &'a AffordanceMap,
    pub grasps: &'a [GraspCandidate],
    pub provenance: Provenance,
}

impl DatasetStore {
    /// Create the directory layout (idempotent).
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["depth", "labels", "grasps"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self { root })
    }

    /// Open an existing dataset and load its manifest.
    pub fn open(root: impl Into<PathBuf>) -> Result<(Self, DatasetManifest)> {
        let root = root.into();
        let manifest = DatasetManifest::from_json(&std::fs::read(root.join("manifest.json"))?)?;
        Ok((Self { root }, manifest))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_manifest(&self, manifest: &DatasetManifest) -> Result<()> {
        std::fs::write(self.root.join("manifest.json"), manifest.to_json()?)?;
        Ok(())
    }

    /// Persist one sample's three files and return its manifest entry.
    pub fn write_sample(&self, index: u64, data: &SampleData) -> Result<SampleEntry> {
        if data.depth.width() != data.map.width() || data.depth.height() != data.map.height() {
            return Err(Error::DimensionMismatch(format!(
                "depth {}x{} vs label map {}x{}",
                data.depth.width(),
                data.depth.height(),
                data.map.width(),
                data.map.height()
            )));
        }
        let id = format!("{index:06}");
        let depth_rel = format!("depth/{id}.png");
        let label_rel = format!("labels/{id}.png");
        let grasp_rel = format!("grasps/{id}.json");
        std::fs::write(self.root.join(&depth_rel), data.depth.encode_png()?)?;
        std::fs::write(self.root.join(&label_rel), data.map.encode_png()?)?;
        std::fs::write(self.root.join(&grasp_rel), grasp_records_json(data.grasps)?)?;
        Ok(SampleEntry {
            id,
            scene: data.scene,
            bin: data.bin.index,
            depth_image: depth_rel,
            label_map: label_rel,
            grasps: grasp_rel,
            provenance: data.provenance,
            class_counts: data.map.class_counts(),
            background_depth_mm: data.depth.background_depth_mm,
            camera: data.depth.camera.clone(),
        })
    }

    /// Load a sample back, validating dimensions and bin consistency.
    pub fn read_sample(&self, entry: &SampleEntry) -> Result<DatasetSample> {
        let depth_bytes = std::fs::read(self.root.join(&entry.depth_image))?;
        let depth = DepthImage::decode_png(&depth_bytes, entry.background_depth_mm, entry.camera.clone())?;
        let map_bytes = std::fs::read(self.root.join(&entry.label_map))?;
        let bin = OrientationBin::new(entry.bin);
        let map = AffordanceMap::decode_png(&map_bytes, bin)?;
        if depth.width() != map.width() || depth.height() != map.height() {
            return Err(Error::DimensionMismatch(format!(
                "sample {}: depth {}x{} vs map {}x{}",
                entry.id,
                depth.width(),
                depth.height(),
                map.width(),
                map.height()
            )));
        }
        let grasps = parse_grasp_records(&std::fs::read(self.root.join(&entry.grasps))?)?;
        for g in &grasps {
            if quantize_orientation(g.theta_deg) != bin {
                return Err(Error::Corrupt(format!(
                    "sample {}: grasp theta {} does not quantize to bin {}",
                    entry.id, g.theta_deg, entry.bin
                )));
            }
        }
        Ok(DatasetSample { entry: entry.clone(), depth, map, grasps })
    }

    /// Recount every label map and check the manifest bookkeeping exactly.
    pub fn audit(&self, manifest: &DatasetManifest) -> Result<()> {
        manifest.validate()?;
        let mut totals = [0u64; 3];
        for entry in &manifest.samples {
            let bytes = std::fs::read(self.root.join(&entry.label_map))?;
            let map = AffordanceMap::decode_png(&bytes, OrientationBin::new(entry.bin))?;
            let counts = map.class_counts();
            if counts != entry.class_counts {
                return Err(Error::Corrupt(format!(
                    "sample {}: stored counts {:?} but recount gives {:?}",
                    entry.id, entry.class_counts, counts
                )));
            }
            for k in 0..3 {
                totals[k] += counts[k];
            }
        }
        if totals != manifest.class_totals {
            return Err(Error::Corrupt(format!(
                "recount totals {:?} do not match manifest {:?}",
                totals, manifest.class_totals
            )));
        }
        Ok(())
    }
}

/// Interleave two datasets so the output carries the requested expected
/// fraction of real samples. All synthetic samples are consumed in order
/// across round(S / (1 - f)) slots; each slot flips a Bernoulli(f) coin for
/// whether it takes the next (seeded-shuffled) real sample instead. Entry
/// paths are rewritten to point into the source roots.
pub fn mix_datasets(
    synthetic: &DatasetManifest,
    synthetic_root: &Path,
    real: &DatasetManifest,
    real_root: &Path,
    real_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(0.0..=1.0).contains(&real_fraction) {
        return Err(Error::InvalidConfig(format!("real_fraction {real_fraction} outside [0, 1]")));
    }
    if synthetic.samples.is_empty() || real.samples.is_empty() {
        return Err(Error::InvalidConfig("mix_datasets needs non-empty inputs".into()));
    }
    let config = serde_json::json!({
        "operation": "mix",
        "real_fraction": real_fraction,
        "seed": seed,
    });
    let mut out = DatasetManifest::new(config);

    let rebase = |entry: &SampleEntry, root: &Path, new_id: String| -> SampleEntry {
        let join = |p: &str| root.join(p).to_string_lossy().into_owned();
        SampleEntry {
            id: new_id,
            depth_image: join(&entry.depth_image),
            label_map: join(&entry.label_map),
            grasps: join(&entry.grasps),
            ..entry.clone()
        }
    };

    if real_fraction == 0.0 {
        for (i, e) in synthetic.samples.iter().enumerate() {
            out.push(rebase(e, synthetic_root, format!("{i:06}")));
        }
        return Ok(out);
    }
    if real_fraction == 1.0 {
        for (i, e) in real.samples.iter().enumerate() {
            out.push(rebase(e, real_root, format!("{i:06}")));
        }
        return Ok(out);
    }

    let slots = (synthetic.samples.len() as f64 / (1.0 - real_fraction)).round() as usize;
    let mut rng = substream(seed, "mix", 0);
    let mut real_order: Vec<usize> = (0..real.samples.len()).collect();
    real_order.shuffle(&mut rng);

    let mut syn_it = 0usize;
    let mut real_it = 0usize;
    for slot in 0..slots {
        let take_real = rng.random_range(0.0..1.0) < real_fraction;
        let entry = if take_real {
            let e = &real.samples[real_order[real_it % real_order.len()]];
            real_it += 1;
            rebase(e, real_root, format!("{slot:06}"))
        } else {
            let e = &synthetic.samples[syn_it % synthetic.samples.len()];
            syn_it += 1;
            rebase(e, synthetic_root, format!("{slot:06}"))
        };
        out.push(entry);
    }
    Ok(out)
}

/// Plain concatenation (the "sequential fine-tuning" layout).
pub fn concat_datasets(
    first: &DatasetManifest,
    first_root: &Path,
    second: &DatasetManifest,
    second_root: &Path,
) -> Result<DatasetManifest> {
    let config = serde_json::json!({ "operation": "concat" });
    let mut out = DatasetManifest::new(config);
    let mut index = 0usize;
    for (m, root) in [(first, first_root), (second, second_root)] {
        for e in &m.samples {
            let join = |p: &str| root.join(p).to_string_lossy().into_owned();
            out.push(SampleEntry {
                id: format!("{index:06}"),
                depth_image: join(&e.depth_image),
                label_map: join(&e.label_map),
                grasps: join(&e.grasps),
                ..e.clone()
            });
            index += 1;
        }
    }
    Ok(out)
}

/// One grasp annotation of an externally labeled scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealGraspRecord {
    pub center_px: [f64; 2],
    pub theta: f64,
    pub class: ClassLabel,
    /// Optional quality in [0, 1]; enables augmentation together with width_px.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
    /// Optional contact span in pixels, centered on center_px along theta.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width_px: Option<f64>,
}

/// One scene of an externally annotated dataset: a depth image plus its
/// sparse grasp list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealSceneRecord {
    /// Depth PNG path, relative to the record file.
    pub depth_image: String,
    pub background_depth_mm: f64,
    /// Camera of the stored frame; defaults to an orthographic camera with
    /// 1 mm pixel pitch at the background depth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraModel>,
    pub grasps: Vec<RealGraspRecord>,
}

impl RealSceneRecord {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let rec: Self = serde_json::from_slice(bytes)?;
        for g in &rec.grasps {
            if !(0.0..360.0).contains(&g.theta) {
                return Err(Error::InvalidRecord(format!("theta {} outside [0, 360)", g.theta)));
            }
            if let Some(q) = g.quality {
                if !(0.0..=1.0).contains(&q) {
                    return Err(Error::InvalidRecord(format!("quality {q} outside [0, 1]")));
                }
            }
            if !g.center_px.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidRecord("non-finite grasp center".into()));
            }
        }
        Ok(rec)
    }
}

/// Convert a directory of scene records (`*.json`, sorted by name) into a
/// dataset in the native format. Labels stay sparse unless `augment` is set
/// and records carry both quality and width; the quality threshold then is
/// the median of the provided qualities.
pub fn import_real(records_dir: &Path, store: &DatasetStore, augment: bool) -> Result<DatasetManifest> {
    let mut record_files: Vec<PathBuf> = std::fs::read_dir(records_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    record_files.sort();
    if record_files.is_empty() {
        return Err(Error::InvalidConfig(format!("no .json records under {}", records_dir.display())));
    }

    let config = serde_json::json!({
        "operation": "import_real",
        "augment": augment,
        "scene_count": record_files.len(),
    });
    let mut manifest = DatasetManifest::new(config);

    // median threshold over all provided qualities (augmented classification)
    let mut qualities: Vec<f64> = Vec::new();
    let mut scenes: Vec<RealSceneRecord> = Vec::new();
    for path in &record_files {
        let rec = RealSceneRecord::from_json(&std::fs::read(path)?)?;
        qualities.extend(rec.grasps.iter().filter_map(|g| g.quality));
        scenes.push(rec);
    }
    let theta_q = if qualities.is_empty() { 0.5 } else { median_threshold(&qualities) };

    let mut index = 0u64;
    for (scene_idx, (rec, path)) in scenes.iter().zip(&record_files).enumerate() {
        let depth_path = path.parent().unwrap_or(Path::new(".")).join(&rec.depth_image);
        let bytes = std::fs::read(&depth_path)?;
        let camera = rec.camera.clone().unwrap_or_else(|| {
            let (w, h, _) = crate::depth::decode_depth_png_raw(&bytes).unwrap_or((1, 1, vec![0]));
            CameraModel::orthographic(1.0, w, h, rec.background_depth_mm)
        });
        let depth = DepthImage::decode_png(&bytes, rec.background_depth_mm, camera)?;

        // group grasps by orientation bin
        let mut by_bin: std::collections::BTreeMap<u8, Vec<&RealGraspRecord>> = Default::default();
        for g in &rec.grasps {
            if g.center_px[0] < 0.0
                || g.center_px[1] < 0.0
                || g.center_px[0] >= f64::from(depth.width())
                || g.center_px[1] >= f64::from(depth.height())
            {
                return Err(Error::InvalidRecord(format!(
                    "grasp center {:?} outside {}x{} image",
                    g.center_px,
                    depth.width(),
                    depth.height()
                )));
            }
            by_bin.entry(quantize_orientation(g.theta).index).or_default().push(g);
        }

        for (bin_idx, grasps) in by_bin {
            let bin = OrientationBin::new(bin_idx);
            let rotated = crate::labels::rotate_to_bin(&depth, bin);
            let mut map = AffordanceMap::background(rotated.width(), rotated.height(), bin);
            let mut best = vec![f64::NEG_INFINITY; (rotated.width() * rotated.height()) as usize];
            for g in grasps {
                let beta = -bin.rotation_angle_deg();
                let (cx, cy) =
                    crate::depth::rotation_dest(depth.width(), depth.height(), beta, g.center_px[0], g.center_px[1]);
                let labels = match (augment, g.quality, g.width_px) {
                    (true, Some(q), Some(w)) if w > 1.0 => {
                        // in the rotated frame the grasp runs along x
                        augment_segment_px([cx - w / 2.0, cy], [cx + w / 2.0, cy], [cx, cy], q, 2.0, 0)
                    }
                    _ => {
                        let q = g.quality.unwrap_or(match g.class {
                            ClassLabel::Positive => 1.0,
                            _ => 0.0,
                        });
                        vec![crate::labels::AugmentedLabel { pixel: [cx.round() as i64, cy.round() as i64], quality: q, source_grasp: 0 }]
                    }
                };
                for l in labels {
                    let [x, y] = l.pixel;
                    if x < 0 || y < 0 || x >= i64::from(map.width()) || y >= i64::from(map.height()) {
                        continue;
                    }
                    let idx = (y as u32 * map.width() + x as u32) as usize;
                    if l.quality > best[idx] {
                        best[idx] = l.quality;
                        let class = if g.quality.is_some() {
                            if l.quality > theta_q {
                                ClassLabel::Positive
                            } else {
                                ClassLabel::Negative
                            }
                        } else {
                            g.class
                        };
                        map.set(x as u32, y as u32, class);
                    }
                }
            }
            let entry = store.write_sample(
                index,
                &SampleData {
                    scene: scene_idx,
                    bin,
                    depth: &rotated,
                    map: &map,
                    grasps: &[],
                    provenance: Provenance::Real,
                },
            )?;
            manifest.push(entry);
            index += 1;
        }
    }
    store.write_manifest(&manifest)?;
    Ok(manifest)
}
