//! Orientation quantization, label augmentation, and affordance label maps.
//!
//! Grasp orientations are quantized into 16 bins of 22.5 degrees. For each
//! bin, the depth image is rotated so that bin's grasps run parallel to the
//! image x-axis, and every grasp stamps labels along the projected segment
//! between its contacts. Label quality decays from the grasp center by
//! q(x) = exp(-((x - g) / sigma)^2) * q_original, and labels classify as
//! positive when their quality exceeds the database median.

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ImageEncoder};
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::depth::{rotate_with_padding, DepthImage, PaddingMode};
use crate::error::{Error, Result};
use crate::grasp::GraspCandidate;

pub const BIN_COUNT: u8 = 16;
pub const BIN_WIDTH_DEG: f64 = 22.5;

/// One of the 16 quantized grasp orientations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrientationBin {
    pub index: u8,
}

impl OrientationBin {
    pub fn new(index: u8) -> Self {
        assert!(index < BIN_COUNT);
        Self { index }
    }

    pub fn rotation_angle_deg(&self) -> f64 {
        f64::from(self.index) * BIN_WIDTH_DEG
    }

    /// The bin describing the same undirected grasp line.
    pub fn opposite(&self) -> Self {
        Self { index: (self.index + 8) % BIN_COUNT }
    }

    pub fn all() -> impl Iterator<Item = Self> {
        (0..BIN_COUNT).map(|index| Self { index })
    }
}

/// Quantize an angle in [0, 360) to its orientation bin. Exact midpoints
/// round toward the lower bin.
pub fn quantize_orientation(theta_deg: f64) -> OrientationBin {
    let x = theta_deg / BIN_WIDTH_DEG;
    let base = x.floor();
    let frac = x - base;
    let idx = if frac > 0.5 { base + 1.0 } else { base };
    OrientationBin { index: (idx as i64).rem_euclid(i64::from(BIN_COUNT)) as u8 }
}

/// Statistical median; even-length batches average the two central values.
pub fn median_threshold(qualities: &[f64]) -> f64 {
    assert!(!qualities.is_empty(), "median of an empty batch");
    let mut sorted = qualities.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Labeling parameters. `quality_threshold` is computed from the grasp
/// database (median quality), not chosen by the user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelingConfig {
    pub quality_threshold: f64,
    /// Denominator of the quality decay, in pixels.
    pub sigma: f64,
    pub augmentation_enabled: bool,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self { quality_threshold: 0.5, sigma: 2.0, augmentation_enabled: true }
    }
}

/// Per-pixel grasp class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum ClassLabel {
    Background = 0,
    Negative = 1,
    Positive = 2,
}

impl ClassLabel {
    pub fn rgb(self) -> [u8; 3] {
        match self {
            ClassLabel::Background => [0, 0, 255],
            ClassLabel::Negative => [255, 0, 0],
            ClassLabel::Positive => [0, 255, 0],
        }
    }

    pub fn from_rgb(px: [u8; 3]) -> Result<Self> {
        match px {
            [0, 0, 255] => Ok(ClassLabel::Background),
            [255, 0, 0] => Ok(ClassLabel::Negative),
            [0, 255, 0] => Ok(ClassLabel::Positive),
            other => Err(Error::Corrupt(format!("label pixel {other:?} is not a class color"))),
        }
    }
}

/// One augmented label: an integer pixel with its decayed quality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedLabel {
    pub pixel: [i64; 2],
    pub quality: f64,
    /// Index of the source grasp in its batch.
    pub source_grasp: usize,
}

/// Pixel-space augmentation along the projected contact segment, endpoints
/// exclusive. `g_px` is the projected grasp center; distance from it (signed,
/// along the segment) drives the quality decay. A zero-length segment yields
/// a single label at the center.
pub fn augment_segment_px(
    c1_px: [f64; 2],
    c2_px: [f64; 2],
    g_px: [f64; 2],
    q_original: f64,
    sigma: f64,
    source_grasp: usize,
) -> Vec<AugmentedLabel> {
    assert!(sigma > 0.0, "sigma must be positive");
    let dx = c2_px[0] - c1_px[0];
    let dy = c2_px[1] - c1_px[1];
    let len = (dx * dx + dy * dy).sqrt();
    let round = |v: f64| v.round() as i64;

    if len < 0.5 {
        return vec![AugmentedLabel { pixel: [round(g_px[0]), round(g_px[1])], quality: q_original, source_grasp }];
    }

    let steps = dx.abs().max(dy.abs()).ceil() as usize;
    let end1 = [round(c1_px[0]), round(c1_px[1])];
    let end2 = [round(c2_px[0]), round(c2_px[1])];
    let axis = [dx / len, dy / len];

    let mut labels: Vec<AugmentedLabel> = Vec::new();
    for t in 0..=steps {
        let f = t as f64 / steps as f64;
        let px = [round(c1_px[0] + f * dx), round(c1_px[1] + f * dy)];
        if px == end1 || px == end2 {
            continue;
        }
        if labels.last().map(|l| l.pixel) == Some(px) {
            continue;
        }
        let s = (px[0] as f64 - g_px[0]) * axis[0] + (px[1] as f64 - g_px[1]) * axis[1];
        let quality = (-(s / sigma).powi(2)).exp() * q_original;
        labels.push(AugmentedLabel { pixel: px, quality, source_grasp });
    }
    labels
}

/// Augment one grasp by projecting its contacts through the camera.
pub fn augment_grasp(grasp: &GraspCandidate, camera: &CameraModel, sigma: f64) -> Vec<AugmentedLabel> {
    let p1 = camera.project(&grasp.contact1);
    let p2 = camera.project(&grasp.contact2);
    let g = camera.project(&grasp.center);
    augment_segment_px([p1.x, p1.y], [p2.x, p2.y], [g.x, g.y], grasp.quality, sigma, 0)
}

/// An H x W per-pixel class field tied to one orientation bin.
#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceMap {
    width: u32,
    height: u32,
    classes: Vec<ClassLabel>,
    pub bin: OrientationBin,
}

impl AffordanceMap {
    pub fn background(width: u32, height: u32, bin: OrientationBin) -> Self {
        Self { width, height, classes: vec![ClassLabel::Background; (width * height) as usize], bin }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> ClassLabel {
        self.classes[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, class: ClassLabel) {
        self.classes[(y * self.width + x) as usize] = class;
    }

    pub fn classes(&self) -> &[ClassLabel] {
        &self.classes
    }

    /// Counts as [background, negative, positive].
    pub fn class_counts(&self) -> [u64; 3] {
        let mut counts = [0u64; 3];
        for c in &self.classes {
            counts[*c as usize] += 1;
        }
        counts
    }

    /// Nearest-neighbor content rotation; out-of-frame pixels become
    /// background. Labels never interpolate, so no mixed classes appear.
    pub fn rotated(&self, angle_deg: f64) -> Self {
        let mut out = Self::background(self.width, self.height, self.bin);
        for y in 0..self.height {
            for x in 0..self.width {
                let (sx, sy) = crate::depth::rotation_source(self.width, self.height, angle_deg, f64::from(x), f64::from(y));
                let (ix, iy) = (sx.round() as i64, sy.round() as i64);
                if ix >= 0 && iy >= 0 && ix < i64::from(self.width) && iy < i64::from(self.height) {
                    out.set(x, y, self.at(ix as u32, iy as u32));
                }
            }
        }
        out
    }

    /// Encode as 8-bit RGB PNG; one fully saturated channel per pixel
    /// (red = negative, green = positive, blue = background).
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut rgb = Vec::with_capacity(self.classes.len() * 3);
        for c in &self.classes {
            rgb.extend_from_slice(&c.rgb());
        }
        let mut out = Vec::new();
        let enc = PngEncoder::new(&mut out);
        enc.write_image(&rgb, self.width, self.height, image::ExtendedColorType::Rgb8)?;
        Ok(out)
    }

    pub fn decode_png(bytes: &[u8], bin: OrientationBin) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
        let rgb = match img {
            DynamicImage::ImageRgb8(buf) => buf,
            other => {
                return Err(Error::Corrupt(format!("label PNG must be 8-bit RGB, got {:?}", other.color())))
            }
        };
        let (width, height) = rgb.dimensions();
        let mut classes = Vec::with_capacity((width * height) as usize);
        for px in rgb.pixels() {
            classes.push(ClassLabel::from_rgb(px.0)?);
        }
        Ok(Self { width, height, classes, bin })
    }
}

/// Rotate a depth image so that `bin`'s grasps become parallel to the image
/// x-axis. The returned image's camera has the rotation composed in, so
/// projecting world points into the rotated frame needs no extra bookkeeping.
pub fn rotate_to_bin(depth: &DepthImage, bin: OrientationBin) -> DepthImage {
    let beta = -bin.rotation_angle_deg();
    let mut out = rotate_with_padding(depth, beta, PaddingMode::AdaptiveDepth);
    out.camera = depth.camera.content_rotated(beta);
    out
}

/// Build the affordance map for one bin from grasps already rotated into the
/// frame of `depth` (the bin-rotated, possibly cropped sample image).
///
/// Every grasp must quantize to `bin`. With augmentation, labels cover the
/// projected contact segment; otherwise only the center pixel is stamped.
/// Pixels touched by several labels keep the highest-quality one.
pub fn build_affordance_map(
    depth: &DepthImage,
    grasps: &[GraspCandidate],
    bin: OrientationBin,
    config: &LabelingConfig,
) -> Result<AffordanceMap> {
    for g in grasps {
        if quantize_orientation(g.theta_deg) != bin {
            return Err(Error::InvalidRecord(format!(
                "grasp with theta {} does not quantize to bin {}",
                g.theta_deg, bin.index
            )));
        }
    }
    let (w, h) = (depth.width(), depth.height());
    let mut map = AffordanceMap::background(w, h, bin);
    let mut best_quality = vec![f64::NEG_INFINITY; (w * h) as usize];

    for (gi, g) in grasps.iter().enumerate() {
        let labels = if config.augmentation_enabled {
            let p1 = depth.camera.project(&g.contact1);
            let p2 = depth.camera.project(&g.contact2);
            let c = depth.camera.project(&g.center);
            augment_segment_px([p1.x, p1.y], [p2.x, p2.y], [c.x, c.y], g.quality, config.sigma, gi)
        } else {
            let c = depth.camera.project(&g.center);
            vec![AugmentedLabel { pixel: [c.x.round() as i64, c.y.round() as i64], quality: g.quality, source_grasp: gi }]
        };
        for label in labels {
            let [x, y] = label.pixel;
            if x < 0 || y < 0 || x >= i64::from(w) || y >= i64::from(h) {
                continue;
            }
            let idx = (y as u32 * w + x as u32) as usize;
            if label.quality > best_quality[idx] {
                best_quality[idx] = label.quality;
                let class = if label.quality > config.quality_threshold {
                    ClassLabel::Positive
                } else {
                    ClassLabel::Negative
                };
                map.set(x as u32, y as u32, class);
            }
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::DepthImage;
    use approx::assert_relative_eq;
    use nalgebra::Point3;
    use proptest::prelude::*;

    #[test]
    fn quantize_basic_cases() {
        assert_eq!(quantize_orientation(0.0).index, 0);
        assert_eq!(quantize_orientation(185.0).index, 8); // 185 / 22.5 = 8.22
        assert_eq!(quantize_orientation(354.0).index, 0);
        // exact midpoints round toward the lower bin
        assert_eq!(quantize_orientation(11.25).index, 0);
        assert_eq!(quantize_orientation(33.75).index, 1);
    }

    #[test]
    fn quantize_round_trip_all_bins() {
        for bin in OrientationBin::all() {
            assert_eq!(quantize_orientation(bin.rotation_angle_deg()), bin);
        }
    }

    proptest! {
        #[test]
        fn opposite_angle_lands_eight_bins_away(theta in 0.0f64..180.0) {
            let a = quantize_orientation(theta);
            let b = quantize_orientation(theta + 180.0);
            prop_assert_eq!((a.index + 8) % 16, b.index);
        }

        #[test]
        fn augmented_quality_symmetric_and_bounded(d in 0.1f64..9.0, q in 0.01f64..1.0, sigma in 0.5f64..4.0) {
            let labels = augment_segment_px([0.0, 10.0], [20.0, 10.0], [10.0, 10.0], q, sigma, 0);
            // symmetry: q(g + d) = q(g - d)
            let probe = |x: f64| (-(x / sigma).powi(2)).exp() * q;
            prop_assert!((probe(d) - probe(-d)).abs() < 1e-15);
            for l in &labels {
                prop_assert!(l.quality <= q + 1e-15);
            }
            // maximum attained exactly at g
            let at_g = labels.iter().find(|l| l.pixel == [10, 10]).unwrap();
            prop_assert!((at_g.quality - q).abs() < 1e-15);
        }
    }

    #[test]
    fn median_threshold_cases() {
        assert_eq!(median_threshold(&[0.1, 0.5, 0.9]), 0.5);
        assert_eq!(median_threshold(&[0.2, 0.4, 0.6, 0.8]), 0.5);
        // half of a tie-free batch classifies strictly above the median
        let batch: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let theta_q = median_threshold(&batch);
        let above = batch.iter().filter(|&&q| q > theta_q).count();
        assert_eq!(above, 50);
    }

    #[test]
    fn eq1_values_match_hand_arithmetic() {
        let labels = augment_segment_px([10.0, 20.0], [30.0, 20.0], [20.0, 20.0], 0.8, 2.0, 0);
        assert_eq!(labels.len(), 19, "pixels 11..=29");
        let at = |x: i64| labels.iter().find(|l| l.pixel == [x, 20]).unwrap().quality;
        assert_relative_eq!(at(20), 0.8, epsilon = 1e-12);
        assert_relative_eq!(at(22), 0.8 * (-1.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(at(18), 0.8 * (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn zero_length_segment_yields_single_center_label() {
        let labels = augment_segment_px([5.0, 5.0], [5.0, 5.0], [5.0, 5.0], 0.7, 2.0, 3);
        assert_eq!(labels, vec![AugmentedLabel { pixel: [5, 5], quality: 0.7, source_grasp: 3 }]);
    }

    fn flat_depth(side: u32) -> DepthImage {
        let cam = CameraModel::orthographic(1.0, side, side, 500.0);
        DepthImage::constant(side, side, 500.0, 500.0, cam)
    }

    fn horizontal_grasp(y: f64, half_width: f64, z: f64, quality: f64) -> GraspCandidate {
        let mut g = GraspCandidate::from_contacts(
            Point3::new(-half_width, y, z),
            Point3::new(half_width, y, z),
        );
        g.quality = quality;
        g
    }

    #[test]
    fn empty_grasp_list_gives_all_background() {
        let depth = flat_depth(64);
        let map = build_affordance_map(&depth, &[], OrientationBin::new(0), &LabelingConfig::default()).unwrap();
        assert_eq!(map.class_counts(), [64 * 64, 0, 0]);
    }

    #[test]
    fn sparse_mode_stamps_one_pixel_per_grasp() {
        let depth = flat_depth(64);
        let cfg = LabelingConfig { augmentation_enabled: false, quality_threshold: 0.5, sigma: 2.0 };
        let grasps = vec![horizontal_grasp(0.0, 10.0, 10.0, 0.9), horizontal_grasp(5.0, 10.0, 10.0, 0.2)];
        let map = build_affordance_map(&depth, &grasps, OrientationBin::new(0), &cfg).unwrap();
        let counts = map.class_counts();
        assert_eq!(counts[1] + counts[2], 2);
        assert_eq!(counts[2], 1); // the 0.9 grasp is positive
    }

    #[test]
    fn augmentation_produces_band_with_negative_rim() {
        let depth = flat_depth(64);
        let cfg = LabelingConfig { augmentation_enabled: true, quality_threshold: 0.5, sigma: 2.0 };
        let grasps = vec![horizontal_grasp(0.0, 12.0, 10.0, 0.9)];
        let map = build_affordance_map(&depth, &grasps, OrientationBin::new(0), &cfg).unwrap();
        let counts = map.class_counts();
        assert!(counts[1] + counts[2] >= 3, "augmentation should add labels");
        // center positive, ends (near contacts) negative
        let c = depth.camera.project(&Point3::new(0.0, 0.0, 10.0));
        assert_eq!(map.at(c.x.round() as u32, c.y.round() as u32), ClassLabel::Positive);
        let near_contact = depth.camera.project(&Point3::new(-11.0, 0.0, 10.0));
        assert_eq!(map.at(near_contact.x.round() as u32, near_contact.y.round() as u32), ClassLabel::Negative);
    }

    #[test]
    fn overlapping_labels_keep_higher_quality() {
        let depth = flat_depth(64);
        let cfg = LabelingConfig { augmentation_enabled: false, quality_threshold: 0.5, sigma: 2.0 };
        // identical center pixel, different qualities
        let grasps = vec![horizontal_grasp(0.0, 10.0, 10.0, 0.2), horizontal_grasp(0.0, 8.0, 10.0, 0.9)];
        let map = build_affordance_map(&depth, &grasps, OrientationBin::new(0), &cfg).unwrap();
        let c = depth.camera.project(&Point3::new(0.0, 0.0, 10.0));
        assert_eq!(map.at(c.x.round() as u32, c.y.round() as u32), ClassLabel::Positive);
    }

    #[test]
    fn tie_at_threshold_classifies_negative() {
        let depth = flat_depth(32);
        let cfg = LabelingConfig { augmentation_enabled: false, quality_threshold: 0.5, sigma: 2.0 };
        let grasps = vec![horizontal_grasp(0.0, 10.0, 10.0, 0.5)];
        let map = build_affordance_map(&depth, &grasps, OrientationBin::new(0), &cfg).unwrap();
        assert_eq!(map.class_counts()[1], 1);
        assert_eq!(map.class_counts()[2], 0);
    }

    #[test]
    fn wrong_bin_grasp_is_rejected() {
        let depth = flat_depth(32);
        let mut g = horizontal_grasp(0.0, 10.0, 10.0, 0.9);
        g.theta_deg = 45.0;
        let err = build_affordance_map(&depth, &[g], OrientationBin::new(0), &LabelingConfig::default());
        assert!(err.is_err());
    }

    #[test]
    fn rotate_to_bin_makes_grasp_horizontal() {
        // grasp at theta = 22.5 becomes axis-parallel in bin 1's frame
        let cam = CameraModel::orthographic(1.0, 301, 301, 500.0);
        let depth = DepthImage::constant(301, 301, 500.0, 500.0, cam);
        let t = 22.5f64.to_radians();
        let g = GraspCandidate::from_contacts(
            Point3::new(-20.0 * t.cos(), -20.0 * t.sin(), 10.0),
            Point3::new(20.0 * t.cos(), 20.0 * t.sin(), 10.0),
        );
        assert_eq!(quantize_orientation(g.theta_deg).index, 1);
        let rotated = rotate_to_bin(&depth, OrientationBin::new(1));
        let p1 = rotated.camera.project(&g.contact1);
        let p2 = rotated.camera.project(&g.contact2);
        assert_relative_eq!(p1.y, p2.y, epsilon = 1e-9);
        assert!(p2.x > p1.x);
    }

    #[test]
    fn map_png_round_trip_preserves_classes() {
        let depth = flat_depth(48);
        let cfg = LabelingConfig { augmentation_enabled: true, quality_threshold: 0.4, sigma: 2.0 };
        let grasps = vec![horizontal_grasp(2.0, 12.0, 10.0, 0.8)];
        let map = build_affordance_map(&depth, &grasps, OrientationBin::new(0), &cfg).unwrap();
        let png = map.encode_png().unwrap();
        let back = AffordanceMap::decode_png(&png, map.bin).unwrap();
        assert_eq!(map, back);
    }

    #[test]
    fn non_class_color_is_corruption() {
        let rgb = image::RgbImage::from_pixel(2, 2, image::Rgb([7, 7, 7]));
        let mut buf = Vec::new();
        rgb.write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png).unwrap();
        assert!(matches!(
            AffordanceMap::decode_png(&buf, OrientationBin::new(0)),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn nearest_rotation_only_emits_valid_classes() {
        let depth = flat_depth(64);
        let cfg = LabelingConfig::default();
        let grasps = vec![horizontal_grasp(0.0, 12.0, 10.0, 0.9)];
        let map = build_affordance_map(&depth, &grasps, OrientationBin::new(0), &cfg).unwrap();
        let rot = map.rotated(30.0);
        let counts = rot.class_counts();
        assert_eq!(counts.iter().sum::<u64>(), 64 * 64);
    }
}
