//! Procedural stand-in for CAD rendering: star-shaped objects with a dome
//! depth profile, pose grids, template sets and cluttered scenes.
//!
//! Out-of-plane rotation is approximated by anisotropic foreshortening
//! (`cos(yaw)` horizontally, `cos(pitch)` vertically) plus a depth tilt,
//! rather than a full 3D projection.

mod render;
mod scene;

pub use render::{render_view, RenderConfig, RenderedView};
pub use scene::{compose_scene, random_placements, Catalogue, GroundTruth, Placement, SceneSpec};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::features::PoseSample;
use crate::features::{
    extract_features, ExtractConfig, Layout, Modality, QuantizedValue, Template, TemplateSet, BINS,
};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Minimum share of the patch a rendered silhouette must cover.
pub const MIN_FOREGROUND_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureEdge {
    pub from: (f64, f64),
    pub to: (f64, f64),
    /// Relative brightness change along the edge.
    pub contrast: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthProfile {
    /// Height of the dome above the object base, millimetres.
    pub dome_mm: f64,
    /// Radius over which the dome falls to zero, canonical pixels.
    pub radius_px: f64,
}

/// A procedurally generated object. Geometry is in canonical patch pixels
/// relative to the patch centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticObject {
    pub object_id: u32,
    pub seed: u64,
    pub patch: (usize, usize),
    pub silhouette: Vec<(f64, f64)>,
    pub depth_profile: DepthProfile,
    /// Hue bin in `1..=8`.
    pub base_hue: u8,
    pub texture_edges: Vec<TextureEdge>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectStyle {
    /// Vertex radius range as a fraction of half the smaller patch side.
    pub radius_min: f64,
    pub radius_max: f64,
    pub vertices_min: usize,
    pub vertices_max: usize,
    pub texture_edges_min: usize,
    pub texture_edges_max: usize,
    pub dome_mm: f64,
}

impl Default for ObjectStyle {
    fn default() -> Self {
        ObjectStyle {
            radius_min: 0.78,
            radius_max: 0.94,
            vertices_min: 10,
            vertices_max: 16,
            texture_edges_min: 2,
            texture_edges_max: 4,
            dome_mm: 40.0,
        }
    }
}

impl SyntheticObject {
    pub fn generate(object_id: u32, seed: u64, patch: (usize, usize), style: &ObjectStyle) -> Result<Self> {
        if style.radius_min <= 0.0 || style.radius_max < style.radius_min || style.radius_max > 1.0 {
            return Err(Error::Config("object radius range must satisfy 0 < min <= max <= 1".into()));
        }
        if style.vertices_min < 3 || style.vertices_max < style.vertices_min {
            return Err(Error::Config("objects need at least 3 silhouette vertices".into()));
        }
        let mut rng = rng::stream(seed, tag::OBJECT, object_id as u64);
        let half = patch.0.min(patch.1) as f64 / 2.0;
        let n = rng.gen_range(style.vertices_min..=style.vertices_max);
        let step = std::f64::consts::TAU / n as f64;
        let phase = rng.gen_range(0.0..step);
        // monotone angles around the centre keep the polygon star-shaped, hence simple
        let silhouette: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let a = phase + step * (i as f64 + rng.gen_range(-0.3..0.3));
                let r = half * rng.gen_range(style.radius_min..=style.radius_max);
                (r * a.cos(), r * a.sin())
            })
            .collect();
        let mean_r = silhouette.iter().map(|p| p.0.hypot(p.1)).sum::<f64>() / n as f64;
        let n_edges = rng.gen_range(style.texture_edges_min..=style.texture_edges_max);
        let inner = half * style.radius_min * 0.6;
        let texture_edges = (0..n_edges)
            .map(|_| {
                let mut point = || {
                    let a = rng.gen_range(0.0..std::f64::consts::TAU);
                    let r = rng.gen_range(0.0..inner);
                    (r * a.cos(), r * a.sin())
                };
                let from = point();
                let to = point();
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                TextureEdge {
                    from,
                    to,
                    contrast: sign * rng.gen_range(0.35..0.5),
                }
            })
            .collect();
        Ok(SyntheticObject {
            object_id,
            seed,
            patch,
            silhouette,
            depth_profile: DepthProfile {
                dome_mm: style.dome_mm,
                radius_px: mean_r,
            },
            base_hue: rng.gen_range(1..=BINS),
            texture_edges,
        })
    }

    /// Shoelace area of the silhouette in canonical pixels.
    pub fn silhouette_area(&self) -> f64 {
        let n = self.silhouette.len();
        (0..n)
            .map(|i| {
                let (x0, y0) = self.silhouette[i];
                let (x1, y1) = self.silhouette[(i + 1) % n];
                x0 * y1 - x1 * y0
            })
            .sum::<f64>()
            .abs()
            / 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisRange {
    pub count: usize,
    pub min: f64,
    pub max: f64,
}

impl AxisRange {
    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.min],
            n => (0..n)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min.min(self.max) - 1e-9 && v <= self.max.max(self.min) + 1e-9
    }
}

/// Regular pose grid; the default is 8 yaw x 5 pitch x 4 roll x 2 scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseGrid {
    pub yaw: AxisRange,
    pub pitch: AxisRange,
    pub roll: AxisRange,
    pub scale: AxisRange,
}

impl Default for PoseGrid {
    fn default() -> Self {
        PoseGrid {
            yaw: AxisRange { count: 8, min: -35.0, max: 35.0 },
            pitch: AxisRange { count: 5, min: 0.0, max: 32.0 },
            roll: AxisRange { count: 4, min: 0.0, max: 270.0 },
            scale: AxisRange { count: 2, min: 0.9, max: 1.0 },
        }
    }
}

impl PoseGrid {
    /// Poses ordered scale, pitch, yaw, roll (roll fastest).
    pub fn poses(&self) -> Vec<PoseSample> {
        let mut out = Vec::new();
        for &scale in &self.scale.values() {
            for &pitch in &self.pitch.values() {
                for &yaw in &self.yaw.values() {
                    for &roll in &self.roll.values() {
                        out.push(PoseSample { yaw, pitch, roll, scale });
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.yaw.count * self.pitch.count * self.roll.count * self.scale.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, pose: &PoseSample) -> bool {
        self.yaw.contains(pose.yaw)
            && self.pitch.contains(pose.pitch)
            && self.scale.contains(pose.scale)
    }
}

/// Everything needed to turn rendered views into templates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    pub patch: usize,
    pub location_stride: u16,
    pub extract: ExtractConfig,
    pub render: RenderConfig,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            patch: 32,
            location_stride: 1,
            extract: ExtractConfig::default(),
            render: RenderConfig::default(),
        }
    }
}

impl TemplateConfig {
    pub fn layout(&self) -> Result<Layout> {
        let p = u16::try_from(self.patch).map_err(|_| Error::Config("patch too large".into()))?;
        Layout::grid(p, p, self.location_stride, Modality::DESCRIPTOR.to_vec())
    }
}

/// Crop a rendered view into a template: foreground coordinates carry the
/// view's features, background coordinates uniform noise in `1..=8`.
pub fn template_from_view(
    view: &RenderedView,
    layout: &Layout,
    cfg: &TemplateConfig,
    id: u32,
    object_id: u32,
    pose: PoseSample,
    seed: u64,
) -> Result<Template> {
    let features = extract_features(&view.rgb, &view.depth, &cfg.extract)?;
    let m = layout.modalities().len();
    let mut rng = rng::stream(seed, tag::TEMPLATE_BACKGROUND, id as u64);
    let mut descriptor = Vec::with_capacity(layout.descriptor_len());
    let mut fg_mask = Vec::with_capacity(layout.descriptor_len());
    let mut depth = Vec::with_capacity(layout.locations().len());
    for &(lx, ly) in layout.locations() {
        let (x, y) = (lx as usize, ly as usize);
        let fg = view.mask.get(x, y);
        for k in 0..m {
            let v = if fg {
                features.value(x, y, k)
            } else {
                QuantizedValue::new_unchecked(rng.gen_range(1..=BINS))
            };
            descriptor.push(v);
            fg_mask.push(fg);
        }
        depth.push(if fg { view.depth.get(x, y) } else { 0.0 });
    }
    Ok(Template {
        id,
        object_id,
        pose,
        descriptor,
        fg_mask,
        depth,
    })
}

/// One template per (object, pose), ids dense in object-major order.
pub fn build_template_set(
    objects: &[SyntheticObject],
    poses: &[PoseSample],
    cfg: &TemplateConfig,
    seed: u64,
) -> Result<TemplateSet> {
    if objects.is_empty() || poses.is_empty() {
        return Err(Error::Config("template set needs at least one object and one pose".into()));
    }
    let layout = cfg.layout()?;
    let jobs: Vec<(usize, &SyntheticObject, PoseSample)> = objects
        .iter()
        .flat_map(|o| poses.iter().map(move |p| (o, *p)))
        .enumerate()
        .map(|(i, (o, p))| (i, o, p))
        .collect();
    let templates = jobs
        .par_iter()
        .map(|&(i, obj, pose)| {
            let view = render_view(obj, &pose, &cfg.render)?;
            template_from_view(&view, &layout, cfg, i as u32, obj.object_id, pose, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    TemplateSet::new(layout, templates)
}

/// Re-randomize each value to a uniform bin in `1..=8` with probability
/// `rate`; a redraw may land on the old value.
pub fn add_noise<R: Rng>(values: &mut [QuantizedValue], rate: f64, rng: &mut R) {
    if rate <= 0.0 {
        return;
    }
    for v in values {
        if rng.gen_bool(rate.min(1.0)) {
            *v = QuantizedValue::new_unchecked(rng.gen_range(1..=BINS));
        }
    }
}

/// Generate `count` catalogue objects from the master seed.
pub fn generate_objects(count: usize, seed: u64, patch: usize, style: &ObjectStyle) -> Result<Vec<SyntheticObject>> {
    (0..count)
        .map(|i| SyntheticObject::generate(i as u32, seed, (patch, patch), style))
        .collect()
}
