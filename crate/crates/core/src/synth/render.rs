use serde::{Deserialize, Serialize};

use super::{SyntheticObject, MIN_FOREGROUND_FRACTION};
use crate::error::{Error, Result};
use crate::features::extract::hsv_to_rgb;
use crate::features::{DepthImage, Grid, Mask, PoseSample, RgbImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Object distance at scale 1; distance grows as `base / scale`.
    pub base_depth_mm: f64,
    pub mm_per_px: f64,
    pub saturation: f64,
    /// Smallest foreshortening factor accepted before the view is degenerate.
    pub min_foreshortening: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            base_depth_mm: 800.0,
            mm_per_px: 2.0,
            saturation: 0.85,
            min_foreshortening: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub rgb: RgbImage,
    pub depth: DepthImage,
    pub mask: Mask,
}

/// `(cos, sin)` with exact values on multiples of 90 degrees.
fn exact_trig(degrees: f64) -> (f64, f64) {
    let d = degrees.rem_euclid(360.0);
    for (k, cs) in [(0.0, (1.0, 0.0)), (90.0, (0.0, 1.0)), (180.0, (-1.0, 0.0)), (270.0, (0.0, -1.0))] {
        if (d - k).abs() < 1e-12 {
            return cs;
        }
    }
    let r = d.to_radians();
    (r.cos(), r.sin())
}

fn inside_polygon(poly: &[(f64, f64)], p: (f64, f64)) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > p.1) != (yj > p.1) && p.0 < (xj - xi) * (p.1 - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - (a.0 + t * dx)).hypot(p.1 - (a.1 + t * dy))
}

/// Render `obj` under `pose` into its patch.
///
/// Each pixel centre is mapped back into canonical coordinates by undoing
/// the roll, then the per-axis foreshortening and the global scale. Depth is
/// the scaled base distance plus a tilt from yaw and pitch, minus the dome.
/// Pixels off the silhouette are black with invalid (zero) depth.
pub fn render_view(obj: &SyntheticObject, pose: &PoseSample, cfg: &RenderConfig) -> Result<RenderedView> {
    let (w, h) = obj.patch;
    let fx = pose.yaw.to_radians().cos();
    let fy = pose.pitch.to_radians().cos();
    if !(pose.scale > 0.0) || fx < cfg.min_foreshortening || fy < cfg.min_foreshortening {
        return Err(Error::PoseOutOfRange(format!(
            "degenerate view transform for pose {pose:?}"
        )));
    }
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (cr, sr) = exact_trig(pose.roll);
    let reach = obj
        .silhouette
        .iter()
        .map(|&(x, y)| (x * fx * pose.scale).hypot(y * fy * pose.scale))
        .fold(0.0, f64::max);
    if reach > cx.min(cy) - 0.5 {
        return Err(Error::PoseOutOfRange(format!(
            "object at scale {} does not fit its {w}x{h} patch",
            pose.scale
        )));
    }

    let base = cfg.base_depth_mm / pose.scale;
    let (tilt_x, tilt_y) = (pose.yaw.to_radians().tan(), pose.pitch.to_radians().tan());
    let hue = (obj.base_hue as f64 - 1.0) * 45.0;
    let r2 = obj.depth_profile.radius_px * obj.depth_profile.radius_px;

    let mut rgb = Grid::filled(w, h, [0u8; 3]);
    let mut depth = Grid::filled(w, h, 0.0f32);
    let mut mask = Grid::filled(w, h, false);
    let mut area = 0usize;
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let u = cr * dx + sr * dy;
            let v = -sr * dx + cr * dy;
            let q = (u / (pose.scale * fx), v / (pose.scale * fy));
            if !inside_polygon(&obj.silhouette, q) {
                continue;
            }
            area += 1;
            mask.set(x, y, true);
            let bulge = (1.0 - (q.0 * q.0 + q.1 * q.1) / r2).max(0.0);
            let z = base + (tilt_x * u + tilt_y * v) * cfg.mm_per_px
                - obj.depth_profile.dome_mm * pose.scale * bulge;
            depth.set(x, y, z.max(1.0) as f32);
            let mut brightness = 0.72 + 0.15 * bulge;
            if let Some(edge) = obj
                .texture_edges
                .iter()
                .find(|e| segment_distance(q, e.from, e.to) < 0.9)
            {
                brightness *= 1.0 + edge.contrast;
            }
            rgb.set(x, y, hsv_to_rgb(hue, cfg.saturation, brightness.clamp(0.2, 1.0)));
        }
    }
    if (area as f64) < MIN_FOREGROUND_FRACTION * (w * h) as f64 {
        return Err(Error::PoseOutOfRange(format!(
            "silhouette covers {area} of {} pixels under pose {pose:?}",
            w * h
        )));
    }
    Ok(RenderedView { rgb, depth, mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{ObjectStyle, SyntheticObject};

    fn object() -> SyntheticObject {
        SyntheticObject::generate(0, 99, (32, 32), &ObjectStyle::default()).unwrap()
    }

    #[test]
    fn identity_pose_is_the_canonical_silhouette() {
        let o = object();
        let v = render_view(&o, &PoseSample::IDENTITY, &RenderConfig::default()).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let p = (x as f64 + 0.5 - 16.0, y as f64 + 0.5 - 16.0);
                assert_eq!(v.mask.get(x, y), inside_polygon(&o.silhouette, p));
            }
        }
    }

    #[test]
    fn half_turn_of_point_symmetric_silhouette_keeps_mask() {
        let mut o = object();
        let half: Vec<(f64, f64)> = o.silhouette.iter().take(6).copied().collect();
        // mirror through the centre to get a point-symmetric polygon
        o.silhouette = half.iter().copied().chain(half.iter().map(|&(x, y)| (-x, -y))).collect();
        let mut sorted = o.silhouette.clone();
        sorted.sort_by(|a, b| a.1.atan2(a.0).total_cmp(&b.1.atan2(b.0)));
        o.silhouette = sorted;
        let cfg = RenderConfig::default();
        let a = render_view(&o, &PoseSample::IDENTITY, &cfg).unwrap();
        let b = render_view(&o, &PoseSample { roll: 180.0, ..PoseSample::IDENTITY }, &cfg).unwrap();
        assert_eq!(a.mask, b.mask);
    }

    #[test]
    fn rendering_is_deterministic() {
        let o = object();
        let pose = PoseSample { yaw: 15.0, pitch: 8.0, roll: 90.0, scale: 0.9 };
        let cfg = RenderConfig::default();
        assert_eq!(render_view(&o, &pose, &cfg).unwrap(), render_view(&o, &pose, &cfg).unwrap());
    }

    #[test]
    fn degenerate_poses_are_rejected() {
        let o = object();
        let cfg = RenderConfig::default();
        let edge_on = PoseSample { yaw: 89.0, ..PoseSample::IDENTITY };
        assert!(matches!(render_view(&o, &edge_on, &cfg), Err(Error::PoseOutOfRange(_))));
        let tiny = PoseSample { scale: 0.05, ..PoseSample::IDENTITY };
        assert!(matches!(render_view(&o, &tiny, &cfg), Err(Error::PoseOutOfRange(_))));
        let huge = PoseSample { scale: 1.5, ..PoseSample::IDENTITY };
        assert!(matches!(render_view(&o, &huge, &cfg), Err(Error::PoseOutOfRange(_))));
    }
}
