use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{render_view, ObjectStyle, PoseGrid, RenderConfig, SyntheticObject};
use crate::error::{Error, Result};
use crate::features::{extract_features, ExtractConfig, FeatureMap, Modality, PoseSample, QuantizedValue, BINS};
use crate::rng::{self, tag};

/// Depth of the supporting plane at the top row, millimetres.
const PLANE_DEPTH_MM: f32 = 1000.0;
/// Plane depth increase per row.
const PLANE_SLOPE_MM: f32 = 0.3;
/// Depth of the far wall band.
const FAR_DEPTH_MM: f32 = 2500.0;
/// Distractor object ids start here so they never collide with the catalogue.
const DISTRACTOR_ID_BASE: u32 = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub object_id: u32,
    pub pose: PoseSample,
    /// Top-left corner of the object's patch in the scene.
    pub x: usize,
    pub y: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<u32>,
}

/// Ground truth for one placed object, identical to its placement.
pub type GroundTruth = Placement;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub placed: Vec<Placement>,
    /// Share of the scene covered by distractor clutter.
    pub clutter_density: f64,
    /// Per-coordinate probability of re-randomizing a quantized value.
    pub noise_rate: f64,
    /// Share of each object's patch hidden behind an occluder.
    pub occlusion_fraction: f64,
    /// Share of rows at the top that show a far wall outside any depth band.
    pub far_band: f64,
    pub seed: u64,
}

/// Objects available to scenes plus the rendering settings they share with
/// the template set.
#[derive(Clone, Debug)]
pub struct Catalogue {
    pub objects: Vec<SyntheticObject>,
    pub render: RenderConfig,
    pub extract: ExtractConfig,
    pub style: ObjectStyle,
}

impl Catalogue {
    pub fn object(&self, id: u32) -> Option<&SyntheticObject> {
        self.objects.iter().find(|o| o.object_id == id)
    }

    fn patch(&self) -> (usize, usize) {
        self.objects.first().map(|o| o.patch).unwrap_or((32, 32))
    }
}

fn overlaps(a: &Placement, b: &Placement, patch: (usize, usize)) -> bool {
    a.x < b.x + patch.0 && b.x < a.x + patch.0 && a.y < b.y + patch.1 && b.y < a.y + patch.1
}

impl SceneSpec {
    pub fn validate(&self, patch: (usize, usize)) -> Result<()> {
        let fail = |reason: String| Error::Scene {
            scene: self.name.clone(),
            reason,
        };
        if self.width < patch.0 || self.height < patch.1 {
            return Err(fail(format!(
                "{}x{} scene is smaller than the {}x{} patch",
                self.width, self.height, patch.0, patch.1
            )));
        }
        for (name, v) in [
            ("clutter_density", self.clutter_density),
            ("noise_rate", self.noise_rate),
            ("occlusion_fraction", self.occlusion_fraction),
            ("far_band", self.far_band),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(fail(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        for (i, p) in self.placed.iter().enumerate() {
            if p.x + patch.0 > self.width || p.y + patch.1 > self.height {
                return Err(fail(format!(
                    "placement {i} at ({}, {}) exceeds the {}x{} bounds",
                    p.x, p.y, self.width, self.height
                )));
            }
            if let Some(j) = self.placed[..i].iter().position(|q| overlaps(p, q, patch)) {
                return Err(fail(format!("placements {j} and {i} overlap")));
            }
        }
        Ok(())
    }
}

/// Draw `count` non-overlapping placements with poses from `grid`.
/// `template_id` is set assuming the template set was built object-major
/// over `grid.poses()`.
pub fn random_placements(
    scene: &str,
    count: usize,
    size: (usize, usize),
    catalogue: &Catalogue,
    grid: &PoseGrid,
    seed: u64,
) -> Result<Vec<Placement>> {
    let patch = catalogue.patch();
    let poses = grid.poses();
    if count > 0 && (catalogue.objects.is_empty() || poses.is_empty()) {
        return Err(Error::Scene {
            scene: scene.into(),
            reason: "no objects or poses to place".into(),
        });
    }
    if size.0 < patch.0 || size.1 < patch.1 {
        return Err(Error::Scene {
            scene: scene.into(),
            reason: "scene smaller than the object patch".into(),
        });
    }
    let mut rng = rng::stream(seed, tag::PLACEMENT, 0);
    let mut placed: Vec<Placement> = Vec::with_capacity(count);
    let mut attempts = 0;
    while placed.len() < count {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Scene {
                scene: scene.into(),
                reason: format!("could not fit {count} non-overlapping objects"),
            });
        }
        let oi = rng.gen_range(0..catalogue.objects.len());
        let pi = rng.gen_range(0..poses.len());
        let p = Placement {
            object_id: catalogue.objects[oi].object_id,
            pose: poses[pi],
            x: rng.gen_range(0..=size.0 - patch.0),
            y: rng.gen_range(0..=size.1 - patch.1),
            template_id: Some((oi * poses.len() + pi) as u32),
        };
        if placed.iter().all(|q| !overlaps(&p, q, patch)) {
            placed.push(p);
        }
    }
    Ok(placed)
}

fn plane_depth(y: usize, far_rows: usize) -> f32 {
    if y < far_rows {
        FAR_DEPTH_MM
    } else {
        PLANE_DEPTH_MM + PLANE_SLOPE_MM * y as f32
    }
}

fn random_bin(rng: &mut ChaCha8Rng) -> QuantizedValue {
    QuantizedValue::new_unchecked(rng.gen_range(1..=BINS))
}

/// Paste the masked pixels of a view's features and depth at `(ox, oy)`,
/// clipped to the scene. `crop` selects the source rectangle.
#[allow(clippy::too_many_arguments)]
fn paste(
    map: &mut FeatureMap,
    view: &FeatureMap,
    mask: &crate::features::Mask,
    crop: (usize, usize, usize, usize),
    ox: isize,
    oy: isize,
    depth_offset: f32,
    hue: Option<QuantizedValue>,
    mut covered: Option<&mut Vec<bool>>,
) {
    let (x0, y0, cw, ch) = crop;
    let m = map.modalities().len();
    let hue_idx = map.modalities().iter().position(|&k| k == Modality::Hue);
    for sy in y0..y0 + ch {
        for sx in x0..x0 + cw {
            if !mask.get(sx, sy) {
                continue;
            }
            let tx = ox + (sx - x0) as isize;
            let ty = oy + (sy - y0) as isize;
            if tx < 0 || ty < 0 || tx as usize >= map.width() || ty as usize >= map.height() {
                continue;
            }
            let (tx, ty) = (tx as usize, ty as usize);
            for k in 0..m {
                let mut v = view.value(sx, sy, k);
                if Some(k) == hue_idx && !v.is_missing() {
                    if let Some(h) = hue {
                        v = h;
                    }
                }
                map.set_value(tx, ty, k, v);
            }
            if let Some(z) = view.depth_at(sx, sy) {
                map.set_depth(tx, ty, z + depth_offset);
            }
            if let Some(c) = covered.as_deref_mut() {
                c[ty * map.width() + tx] = true;
            }
        }
    }
}

/// Build a scene feature map and its ground truth.
///
/// Layers, bottom to top: a featureless supporting plane (with an optional
/// far wall band), distractor clutter until `clutter_density` of the scene is
/// covered, the placed objects, occluders and finally per-coordinate noise.
/// Clutter is an even mix of random-bin noise blocks and cropped, re-hued
/// views of objects outside the catalogue lying on the plane.
pub fn compose_scene(spec: &SceneSpec, catalogue: &Catalogue) -> Result<(FeatureMap, Vec<GroundTruth>)> {
    let patch = catalogue.patch();
    spec.validate(patch)?;
    for p in &spec.placed {
        if catalogue.object(p.object_id).is_none() {
            return Err(Error::Scene {
                scene: spec.name.clone(),
                reason: format!("unknown object id {}", p.object_id),
            });
        }
    }
    let (w, h) = (spec.width, spec.height);
    let mut map = FeatureMap::blank(w, h, Modality::DESCRIPTOR.to_vec(), true);
    let far_rows = (spec.far_band * h as f64).round() as usize;
    for y in 0..h {
        for x in 0..w {
            map.set_depth(x, y, plane_depth(y, far_rows));
        }
    }
    let m = map.modalities().len();
    let mut rng = rng::stream(spec.seed, tag::SCENE, 0);

    let mut covered = vec![false; w * h];
    let mut covered_count = 0usize;
    let target = (spec.clutter_density * (w * h) as f64).ceil() as usize;
    let mut distractors = 0u32;
    let mut iterations = 0;
    while covered_count < target && iterations < 10_000 {
        iterations += 1;
        if rng.gen_bool(0.5) {
            let side = rng.gen_range(6..=20usize);
            let bx = rng.gen_range(0..w) as isize - side as isize / 2;
            let by = rng.gen_range(0..h) as isize - side as isize / 2;
            for y in by.max(0)..(by + side as isize).min(h as isize) {
                for x in bx.max(0)..(bx + side as isize).min(w as isize) {
                    let (x, y) = (x as usize, y as usize);
                    for k in 0..m {
                        let v = random_bin(&mut rng);
                        map.set_value(x, y, k, v);
                    }
                    covered[y * w + x] = true;
                }
            }
        } else {
            let id = DISTRACTOR_ID_BASE + distractors;
            distractors += 1;
            let obj = SyntheticObject::generate(
                id,
                rng::derive_seed(spec.seed, tag::DISTRACTOR, distractors as u64),
                patch,
                &catalogue.style,
            )?;
            let pose = PoseSample {
                yaw: rng.gen_range(-35.0..35.0),
                pitch: rng.gen_range(0.0..32.0),
                roll: rng.gen_range(0.0..360.0),
                scale: rng.gen_range(0.9..1.0),
            };
            let view = render_view(&obj, &pose, &catalogue.render)?;
            let feats = extract_features(&view.rgb, &view.depth, &catalogue.extract)?;
            let cw = rng.gen_range(patch.0 / 2..=patch.0);
            let ch = rng.gen_range(patch.1 / 2..=patch.1);
            let x0 = rng.gen_range(0..=patch.0 - cw);
            let y0 = rng.gen_range(0..=patch.1 - ch);
            let ox = rng.gen_range(0..w) as isize - cw as isize / 2;
            let oy = rng.gen_range(0..h) as isize - ch as isize / 2;
            let hue = random_bin(&mut rng);
            // rest the distractor on the plane
            let offset = plane_depth(oy.clamp(0, h as isize - 1) as usize, 0)
                - (catalogue.render.base_depth_mm / pose.scale) as f32;
            paste(&mut map, &feats, &view.mask, (x0, y0, cw, ch), ox, oy, offset, Some(hue), Some(&mut covered));
        }
        covered_count = covered.iter().filter(|&&c| c).count();
    }

    for p in &spec.placed {
        let obj = catalogue.object(p.object_id).expect("checked above");
        let view = render_view(obj, &p.pose, &catalogue.render)?;
        let feats = extract_features(&view.rgb, &view.depth, &catalogue.extract)?;
        paste(&mut map, &feats, &view.mask, (0, 0, patch.0, patch.1), p.x as isize, p.y as isize, 0.0, None, None);
    }

    if spec.occlusion_fraction > 0.0 {
        for p in &spec.placed {
            let area = spec.occlusion_fraction * (patch.0 * patch.1) as f64;
            let ow = (area.sqrt().round() as usize).clamp(1, patch.0);
            let oh = ((area / ow as f64).round() as usize).clamp(1, patch.1);
            let ox = p.x + rng.gen_range(0..=patch.0 - ow);
            let oy = p.y + rng.gen_range(0..=patch.1 - oh);
            for y in oy..oy + oh {
                for x in ox..ox + ow {
                    for k in 0..m {
                        let v = random_bin(&mut rng);
                        map.set_value(x, y, k, v);
                    }
                    let z = map.depth_at(x, y).unwrap_or(PLANE_DEPTH_MM);
                    map.set_depth(x, y, (z - 50.0).max(1.0));
                }
            }
        }
    }

    super::add_noise(map.values_mut(), spec.noise_rate, &mut rng);

    Ok((map, spec.placed.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_objects;

    fn catalogue(n: usize) -> Catalogue {
        let style = ObjectStyle::default();
        Catalogue {
            objects: generate_objects(n, 3, 32, &style).unwrap(),
            render: RenderConfig::default(),
            extract: ExtractConfig::default(),
            style,
        }
    }

    fn spec(placed: Vec<Placement>) -> SceneSpec {
        SceneSpec {
            name: "t".into(),
            width: 96,
            height: 80,
            placed,
            clutter_density: 0.3,
            noise_rate: 0.0,
            occlusion_fraction: 0.0,
            far_band: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn out_of_bounds_and_overlap_are_named() {
        let p = |x, y| Placement {
            object_id: 0,
            pose: PoseSample::IDENTITY,
            x,
            y,
            template_id: None,
        };
        let err = spec(vec![p(70, 0)]).validate((32, 32)).unwrap_err();
        assert!(matches!(&err, Error::Scene { scene, .. } if scene == "t"));
        assert!(spec(vec![p(0, 0), p(10, 10)]).validate((32, 32)).is_err());
        assert!(spec(vec![p(0, 0), p(32, 0)]).validate((32, 32)).is_ok());
    }

    #[test]
    fn empty_scene_has_no_ground_truth() {
        let (map, gt) = compose_scene(&spec(vec![]), &catalogue(1)).unwrap();
        assert!(gt.is_empty());
        assert_eq!(map.width(), 96);
    }

    #[test]
    fn random_placements_do_not_overlap() {
        let c = catalogue(2);
        let ps = random_placements("s", 3, (160, 120), &c, &PoseGrid::default(), 9).unwrap();
        assert_eq!(ps.len(), 3);
        let mut s = spec(ps);
        s.width = 160;
        s.height = 120;
        assert!(s.validate((32, 32)).is_ok());
    }

    #[test]
    fn scene_noise_changes_the_expected_fraction() {
        let c = catalogue(1);
        let mut s = spec(vec![]);
        s.width = 320;
        s.height = 240;
        let (clean, _) = compose_scene(&s, &c).unwrap();
        s.noise_rate = 0.1;
        let (noisy, _) = compose_scene(&s, &c).unwrap();
        let changed = clean.values().iter().zip(noisy.values()).filter(|(a, b)| a != b).count();
        let frac = changed as f64 / clean.values().len() as f64;
        // A redraw keeps the old bin 1 time in 8 (or always differs from missing).
        assert!((frac - 0.1 * 7.0 / 8.0).abs() < 0.02, "changed fraction {frac}");
    }
}
