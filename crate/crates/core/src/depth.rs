//! Depth images: raycast rendering, sensor noise, rotation with adaptive
//! padding, cropping, and the 16-bit PNG persistence format.

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ImageEncoder};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::bvh::Bvh;
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::scene::Scene;

/// Stored depth is quantized to 0.1 mm: png_value = round(depth_mm * 10).
pub const DEPTH_PNG_SCALE: f64 = 10.0;

/// An H x W depth field in millimeters (camera-plane distance).
#[derive(Debug, Clone)]
pub struct DepthImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
    pub background_depth_mm: f64,
    pub camera: CameraModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaddingMode {
    /// Fill out-of-frame pixels with the background (table) depth.
    AdaptiveDepth,
    /// Fill with zeros; kept for comparison experiments only.
    Black,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, data: Vec<f64>, background_depth_mm: f64, camera: CameraModel) -> Self {
        assert_eq!(data.len(), (width * height) as usize);
        Self { width, height, data, background_depth_mm, camera }
    }

    pub fn constant(width: u32, height: u32, value: f64, background: f64, camera: CameraModel) -> Self {
        Self::new(width, height, vec![value; (width * height) as usize], background, camera)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> f64 {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        self.data[(y * self.width + x) as usize] = v;
    }

    /// Bilinear sample at fractional pixel coordinates; out-of-frame taps
    /// read as `pad`.
    pub fn sample_bilinear(&self, x: f64, y: f64, pad: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let tap = |ix: i64, iy: i64| -> f64 {
            if ix < 0 || iy < 0 || ix >= self.width as i64 || iy >= self.height as i64 {
                pad
            } else {
                self.at(ix as u32, iy as u32)
            }
        };
        let (x0, y0) = (x0 as i64, y0 as i64);
        let v00 = tap(x0, y0);
        let v10 = tap(x0 + 1, y0);
        let v01 = tap(x0, y0 + 1);
        let v11 = tap(x0 + 1, y0 + 1);
        v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy
    }

    /// Encode as 16-bit grayscale PNG at 0.1 mm quantization.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        // the encoder takes 16-bit samples as native-endian bytes
        let mut bytes = Vec::with_capacity(self.data.len() * 2);
        for &d in &self.data {
            let v = (d * DEPTH_PNG_SCALE).round().clamp(0.0, 65535.0) as u16;
            bytes.extend_from_slice(&v.to_ne_bytes());
        }
        let mut out = Vec::new();
        let enc = PngEncoder::new(&mut out);
        enc.write_image(&bytes, self.width, self.height, image::ExtendedColorType::L16)?;
        Ok(out)
    }

    /// Decode a 16-bit grayscale PNG produced by [`encode_png`].
    pub fn decode_png(bytes: &[u8], background_depth_mm: f64, camera: CameraModel) -> Result<Self> {
        let (width, height, raw) = decode_depth_png_raw(bytes)?;
        let data = raw.iter().map(|&v| v as f64 / DEPTH_PNG_SCALE).collect();
        Ok(Self { width, height, data, background_depth_mm, camera })
    }
}

/// Decode the raw u16 samples of a 16-bit grayscale PNG.
pub fn decode_depth_png_raw(bytes: &[u8]) -> Result<(u32, u32, Vec<u16>)> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
    match img {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            Ok((w, h, buf.into_raw()))
        }
        other => Err(Error::Corrupt(format!(
            "depth PNG must be 16-bit grayscale, got {:?}",
            other.color()
        ))),
    }
}

/// Render per-pixel depth of a scene: nearest ray-triangle intersection per
/// pixel, misses filled with the table depth.
pub fn render_depth(scene: &Scene, camera: &CameraModel, width: u32, height: u32) -> Result<DepthImage> {
    let pose = camera.pose_iso();
    if pose.translation.vector.z <= 0.0 {
        return Err(Error::CameraBelowTable);
    }
    let background = camera.distance_mm;
    let soup = scene.triangle_soup();
    let bvh = Bvh::build(&soup);

    let mut data = vec![background; (width * height) as usize];
    data.par_chunks_mut(width as usize).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let ray = camera.pixel_ray(x as f64, y as f64);
            if let Some(hit) = bvh.intersect(&soup, &ray, 1e-9, f64::INFINITY) {
                *out = camera.depth_of(&hit.point);
            }
        }
    });
    Ok(DepthImage::new(width, height, data, background, camera.clone()))
}

/// Multiplicative Gaussian noise: depth' = depth * n with n ~ N(mean, std).
pub fn add_depth_noise(img: &DepthImage, mean: f64, std: f64, seed: u64) -> DepthImage {
    if std == 0.0 && mean == 1.0 {
        return img.clone();
    }
    let normal = Normal::new(mean, std).expect("std >= 0");
    let mut rng = substream(seed, "depth-noise", 0);
    let data = img.data.iter().map(|&d| d * normal.sample(&mut rng)).collect();
    DepthImage { width: img.width, height: img.height, data, background_depth_mm: img.background_depth_mm, camera: img.camera.clone() }
}

/// Source coordinate for a content rotation of `angle_deg` CCW about the
/// image center: destination pixels sample the input at the inverse rotation.
pub fn rotation_source(width: u32, height: u32, angle_deg: f64, x: f64, y: f64) -> (f64, f64) {
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let a = -angle_deg.to_radians();
    let (s, c) = a.sin_cos();
    let dx = x - cx;
    let dy = y - cy;
    (cx + c * dx - s * dy, cy + s * dx + c * dy)
}

/// Destination coordinate of a feature under the same content rotation.
pub fn rotation_dest(width: u32, height: u32, angle_deg: f64, x: f64, y: f64) -> (f64, f64) {
    rotation_source(width, height, -angle_deg, x, y)
}

/// Rotate the image content CCW by `angle_deg` about the image center.
/// Depth uses bilinear sampling; out-of-frame reads take the padding value.
pub fn rotate_with_padding(img: &DepthImage, angle_deg: f64, mode: PaddingMode) -> DepthImage {
    let pad = match mode {
        PaddingMode::AdaptiveDepth => img.background_depth_mm,
        PaddingMode::Black => 0.0,
    };
    let mut out = DepthImage::constant(img.width, img.height, pad, img.background_depth_mm, img.camera.clone());
    for y in 0..img.height {
        for x in 0..img.width {
            let (sx, sy) = rotation_source(img.width, img.height, angle_deg, x as f64, y as f64);
            out.set(x, y, img.sample_bilinear(sx, sy, pad));
        }
    }
    out
}

/// Center-crop to a square and bilinearly resize to `out_size` pixels.
/// The returned image carries adjusted camera intrinsics.
pub fn crop_resize(img: &DepthImage, out_size: u32) -> Result<DepthImage> {
    let side = img.width.min(img.height);
    if side == 0 || out_size == 0 {
        return Err(Error::DimensionMismatch("empty image in crop_resize".into()));
    }
    let off_x = (img.width as f64 - side as f64) / 2.0;
    let off_y = (img.height as f64 - side as f64) / 2.0;
    let scale = side as f64 / out_size as f64;

    let camera = img.camera.cropped_resized(img.width, img.height, side, out_size);
    let mut out = DepthImage::constant(out_size, out_size, img.background_depth_mm, img.background_depth_mm, camera);
    for y in 0..out_size {
        for x in 0..out_size {
            let sx = (x as f64 + 0.5) * scale - 0.5 + off_x;
            let sy = (y as f64 + 0.5) * scale - 0.5 + off_y;
            out.set(x, y, img.sample_bilinear(sx, sy, img.background_depth_mm));
        }
    }
    Ok(out)
}

/// Map a full-frame pixel through rotate-to-bin + crop + resize into sample
/// coordinates. Shared by label generation so labels land exactly where the
/// stored depth says they should.
pub fn full_to_sample_px(
    width: u32,
    height: u32,
    rotation_angle_deg: f64,
    out_size: u32,
    x: f64,
    y: f64,
) -> (f64, f64) {
    let (rx, ry) = rotation_dest(width, height, -rotation_angle_deg, x, y);
    let side = width.min(height);
    let off_x = (width as f64 - side as f64) / 2.0;
    let off_y = (height as f64 - side as f64) / 2.0;
    let s = out_size as f64 / side as f64;
    ((rx - off_x + 0.5) * s - 0.5, (ry - off_y + 0.5) * s - 0.5)
}
