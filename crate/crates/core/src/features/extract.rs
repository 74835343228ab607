use serde::{Deserialize, Serialize};

use super::{DepthImage, FeatureMap, Modality, QuantizedValue, RgbImage, BINS};
use crate::error::{Error, Result};

/// Thresholds for quantizing raw images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    /// Minimum colour gradient magnitude, in intensity units per pixel.
    pub magnitude_threshold: f64,
    /// Minimum depth gradient magnitude, in millimetres per pixel.
    pub normal_threshold: f64,
    /// Minimum HSV saturation for a hue to be significant.
    pub saturation_floor: f64,
    /// Minimum HSV value for a hue to be significant.
    pub value_floor: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            magnitude_threshold: 10.0,
            normal_threshold: 0.25,
            saturation_floor: 0.2,
            value_floor: 0.15,
        }
    }
}

/// Quantize an angle into one of 8 bins centred on multiples of
/// `period / 8`, starting at bin 1 for angle 0.
pub fn angle_bin(degrees: f64, period: f64) -> QuantizedValue {
    let width = period / BINS as f64;
    let a = degrees.rem_euclid(period);
    let bin = ((a + width / 2.0) / width).floor() as u8 % BINS;
    QuantizedValue::new_unchecked(bin + 1)
}

/// Sobel response normalised to per-pixel units. `None` on the border.
fn sobel(width: usize, height: usize, x: usize, y: usize, f: impl Fn(usize, usize) -> f64) -> Option<(f64, f64)> {
    if x == 0 || y == 0 || x + 1 >= width || y + 1 >= height {
        return None;
    }
    let gx = (f(x + 1, y - 1) + 2.0 * f(x + 1, y) + f(x + 1, y + 1))
        - (f(x - 1, y - 1) + 2.0 * f(x - 1, y) + f(x - 1, y + 1));
    let gy = (f(x - 1, y + 1) + 2.0 * f(x, y + 1) + f(x + 1, y + 1))
        - (f(x - 1, y - 1) + 2.0 * f(x, y - 1) + f(x + 1, y - 1));
    Some((gx / 8.0, gy / 8.0))
}

/// Hue angle in degrees, saturation and value of an RGB triple.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Quantize an RGB-D pair into colour gradient, surface normal and hue
/// modalities, copying the depth grid through.
///
/// Colour gradient orientation uses the channel with the strongest Sobel
/// response and is binned over 180 degrees. Surface normal direction is the
/// depth gradient direction binned over 360 degrees and is missing wherever
/// the 3x3 neighbourhood holds an invalid (zero) depth. Hue is binned over
/// 360 degrees.
pub fn extract_features(rgb: &RgbImage, depth: &DepthImage, cfg: &ExtractConfig) -> Result<FeatureMap> {
    if rgb.width != depth.width || rgb.height != depth.height {
        return Err(Error::Shape(format!(
            "rgb is {}x{} but depth is {}x{}",
            rgb.width, rgb.height, depth.width, depth.height
        )));
    }
    let (w, h) = (rgb.width, rgb.height);
    if rgb.data.len() != w * h || depth.data.len() != w * h {
        return Err(Error::Shape("image buffers do not match their dimensions".into()));
    }
    let modalities = Modality::DESCRIPTOR.to_vec();
    let mut map = FeatureMap::blank(w, h, modalities, true);

    for y in 0..h {
        for x in 0..w {
            let mut best: Option<(f64, f64, f64)> = None;
            for ch in 0..3 {
                if let Some((gx, gy)) = sobel(w, h, x, y, |px, py| rgb.get(px, py)[ch] as f64) {
                    let mag = gx.hypot(gy);
                    if best.is_none_or(|b| mag > b.0) {
                        best = Some((mag, gx, gy));
                    }
                }
            }
            if let Some((mag, gx, gy)) = best {
                if mag >= cfg.magnitude_threshold {
                    map.set_value(x, y, 0, angle_bin(gy.atan2(gx).to_degrees(), 180.0));
                }
            }

            let valid = x > 0
                && y > 0
                && x + 1 < w
                && y + 1 < h
                && (y - 1..=y + 1).all(|py| (x - 1..=x + 1).all(|px| depth.get(px, py) > 0.0));
            if valid {
                if let Some((gx, gy)) = sobel(w, h, x, y, |px, py| depth.get(px, py) as f64) {
                    if gx.hypot(gy) >= cfg.normal_threshold {
                        map.set_value(x, y, 1, angle_bin(gy.atan2(gx).to_degrees(), 360.0));
                    }
                }
            }

            let (hue, s, v) = rgb_to_hsv(rgb.get(x, y));
            if s >= cfg.saturation_floor && v >= cfg.value_floor {
                map.set_value(x, y, 2, angle_bin(hue, 360.0));
            }

            map.set_depth(x, y, depth.get(x, y));
        }
    }
    Ok(map)
}
