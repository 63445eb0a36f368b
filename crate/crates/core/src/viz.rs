//! Overlay renderings for inspection: affordance classes over depth, and
//! grasp markers.

use image::{Rgb, RgbImage};

use crate::depth::DepthImage;
use crate::error::Result;
use crate::labels::{AffordanceMap, ClassLabel};
use crate::optimizer::OptimizedGrasp;

/// Depth as grayscale, near = bright.
pub fn depth_to_gray(depth: &DepthImage) -> RgbImage {
    let lo = depth.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = depth.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    let mut img = RgbImage::new(depth.width(), depth.height());
    for (x, y, px) in img.enumerate_pixels_mut() {
        let v = ((hi - depth.at(x, y)) / span * 255.0).round().clamp(0.0, 255.0) as u8;
        *px = Rgb([v, v, v]);
    }
    img
}

/// Blend grasp-class colors over the depth image; background pixels stay
/// pure depth.
pub fn overlay_map(depth: &DepthImage, map: &AffordanceMap, alpha: f64) -> Result<RgbImage> {
    let mut img = depth_to_gray(depth);
    if depth.width() != map.width() || depth.height() != map.height() {
        return Err(crate::error::Error::DimensionMismatch(format!(
            "depth {}x{} vs map {}x{}",
            depth.width(),
            depth.height(),
            map.width(),
            map.height()
        )));
    }
    for (x, y, px) in img.enumerate_pixels_mut() {
        let class = map.at(x, y);
        if class == ClassLabel::Background {
            continue;
        }
        let color = class.rgb();
        for k in 0..3 {
            px.0[k] = ((1.0 - alpha) * f64::from(px.0[k]) + alpha * f64::from(color[k])).round() as u8;
        }
    }
    Ok(img)
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(color));
    }
}

fn draw_line(img: &mut RgbImage, a: [f64; 2], b: [f64; 2], color: [u8; 3]) {
    let steps = ((b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil() as usize).max(1);
    for t in 0..=steps {
        let f = t as f64 / steps as f64;
        put(
            img,
            (a[0] + f * (b[0] - a[0])).round() as i64,
            (a[1] + f * (b[1] - a[1])).round() as i64,
            color,
        );
    }
}

/// Mark a grasp: contact line in yellow, jaw ticks in cyan, center cross in
/// white. Coordinates are unrotated-frame pixels.
pub fn draw_grasp(img: &mut RgbImage, grasp: &OptimizedGrasp) {
    draw_line(img, grasp.contact_px1, grasp.contact_px2, [255, 220, 0]);
    let t = grasp.theta_refined_deg.to_radians();
    let perp = [-t.sin(), t.cos()];
    for c in [grasp.contact_px1, grasp.contact_px2] {
        draw_line(
            img,
            [c[0] - perp[0] * 4.0, c[1] - perp[1] * 4.0],
            [c[0] + perp[0] * 4.0, c[1] + perp[1] * 4.0],
            [0, 230, 230],
        );
    }
    let c = grasp.center_px;
    draw_line(img, [c[0] - 2.0, c[1]], [c[0] + 2.0, c[1]], [255, 255, 255]);
    draw_line(img, [c[0], c[1] - 2.0], [c[0], c[1] + 2.0], [255, 255, 255]);
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraModel;
    use crate::labels::OrientationBin;

    #[test]
    fn empty_map_overlay_is_pure_depth() {
        let cam = CameraModel::orthographic(1.0, 32, 32, 500.0);
        let mut depth = DepthImage::constant(32, 32, 500.0, 500.0, cam);
        depth.set(10, 10, 470.0);
        let map = AffordanceMap::background(32, 32, OrientationBin::new(0));
        let gray = depth_to_gray(&depth);
        let overlay = overlay_map(&depth, &map, 0.4).unwrap();
        assert_eq!(gray, overlay);
    }

    #[test]
    fn labels_tint_the_overlay() {
        let cam = CameraModel::orthographic(1.0, 32, 32, 500.0);
        let depth = DepthImage::constant(32, 32, 500.0, 500.0, cam);
        let mut map = AffordanceMap::background(32, 32, OrientationBin::new(0));
        map.set(5, 5, ClassLabel::Positive);
        let overlay = overlay_map(&depth, &map, 0.5).unwrap();
        let px = overlay.get_pixel(5, 5);
        assert!(px.0[1] > px.0[0] && px.0[1] > px.0[2], "positive pixel should lean green: {px:?}");
    }
}
