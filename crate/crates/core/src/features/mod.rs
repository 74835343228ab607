//! Quantized multi-modal features, templates and the template similarity.

pub mod extract;
mod template;

pub use extract::{extract_features, ExtractConfig};
pub use template::{Layout, PoseSample, Template, TemplateSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest bin index. Bins are `1..=8`, `0` marks a missing feature.
pub const BINS: u8 = 8;

/// Penalty for comparing a present feature against a missing one.
pub const MISSING_PENALTY: u8 = 4;

/// Largest value `dim_distance` can return.
pub const MAX_DIM_DISTANCE: u8 = 4;

/// A quantized feature bin in `0..=8`; `0` means "not significant".
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(try_from = "u8", into = "u8")]
#[repr(transparent)]
pub struct QuantizedValue(u8);

impl QuantizedValue {
    pub const MISSING: QuantizedValue = QuantizedValue(0);

    pub const fn new(value: u8) -> Option<Self> {
        if value <= BINS {
            Some(QuantizedValue(value))
        } else {
            None
        }
    }

    /// Callers guarantee `value <= 8`.
    pub(crate) const fn new_unchecked(value: u8) -> Self {
        QuantizedValue(value)
    }

    pub const fn get(self) -> u8 {
        self.0
    }

    pub const fn is_missing(self) -> bool {
        self.0 == 0
    }
}

impl TryFrom<u8> for QuantizedValue {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, Self::Error> {
        QuantizedValue::new(value).ok_or_else(|| format!("quantized value {value} out of 0..=8"))
    }
}

impl From<QuantizedValue> for u8 {
    fn from(v: QuantizedValue) -> u8 {
        v.0
    }
}

/// One feature channel. `Depth` lives in the depth grid and is only ever
/// consulted while validating candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    ColourGradient,
    SurfaceNormal,
    Hue,
    Depth,
}

impl Modality {
    pub const DESCRIPTOR: [Modality; 3] =
        [Modality::ColourGradient, Modality::SurfaceNormal, Modality::Hue];

    pub fn code(self) -> u8 {
        match self {
            Modality::ColourGradient => 0,
            Modality::SurfaceNormal => 1,
            Modality::Hue => 2,
            Modality::Depth => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Modality::ColourGradient,
            1 => Modality::SurfaceNormal,
            2 => Modality::Hue,
            3 => Modality::Depth,
            _ => return None,
        })
    }
}

/// Per-dimension distance between two quantized values.
///
/// Circular on the 8 bins, `0` against `0` matches, and a present value
/// against a missing one costs the maximal `4`.
#[inline]
pub fn dim_distance(a: QuantizedValue, b: QuantizedValue) -> u8 {
    match (a.0, b.0) {
        (0, 0) => 0,
        (0, _) | (_, 0) => MISSING_PENALTY,
        (x, y) => {
            let d = x.abs_diff(y);
            d.min(BINS - d)
        }
    }
}

/// Dense row-major grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }
}

pub type RgbImage = Grid<[u8; 3]>;
pub type DepthImage = Grid<f32>;
pub type Mask = Grid<bool>;

/// Quantized features over a scene or a rendered view.
///
/// Values are stored pixel-major: `values[(y * width + x) * m + k]` is
/// modality `k` at `(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    modalities: Vec<Modality>,
    values: Vec<QuantizedValue>,
    depth: Option<Vec<f32>>,
}

impl FeatureMap {
    pub fn new(
        width: usize,
        height: usize,
        modalities: Vec<Modality>,
        values: Vec<QuantizedValue>,
        depth: Option<Vec<f32>>,
    ) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::Shape("feature map needs at least one modality".into()));
        }
        if modalities.contains(&Modality::Depth) {
            return Err(Error::Shape(
                "depth is carried by the depth grid, not as a quantized modality".into(),
            ));
        }
        if values.len() != width * height * modalities.len() {
            return Err(Error::Shape(format!(
                "expected {} values for {}x{}x{}, got {}",
                width * height * modalities.len(),
                width,
                height,
                modalities.len(),
                values.len()
            )));
        }
        if let Some(d) = &depth {
            if d.len() != width * height {
                return Err(Error::Shape(format!(
                    "depth grid has {} entries, expected {}",
                    d.len(),
                    width * height
                )));
            }
            if d.iter().any(|&z| !(z >= 0.0) || !z.is_finite()) {
                return Err(Error::Shape("depth values must be finite and >= 0".into()));
            }
        }
        Ok(FeatureMap {
            width,
            height,
            modalities,
            values,
            depth,
        })
    }

    pub fn blank(width: usize, height: usize, modalities: Vec<Modality>, with_depth: bool) -> Self {
        let m = modalities.len();
        FeatureMap {
            width,
            height,
            modalities,
            values: vec![QuantizedValue::MISSING; width * height * m],
            depth: with_depth.then(|| vec![0.0; width * height]),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn values(&self) -> &[QuantizedValue] {
        &self.values
    }

    pub fn depth(&self) -> Option<&[f32]> {
        self.depth.as_deref()
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize, modality: usize) -> QuantizedValue {
        self.values[(y * self.width + x) * self.modalities.len() + modality]
    }

    #[inline]
    pub fn set_value(&mut self, x: usize, y: usize, modality: usize, v: QuantizedValue) {
        let m = self.modalities.len();
        self.values[(y * self.width + x) * m + modality] = v;
    }

    #[inline]
    pub fn depth_at(&self, x: usize, y: usize) -> Option<f32> {
        self.depth.as_ref().map(|d| d[y * self.width + x])
    }

    pub fn set_depth(&mut self, x: usize, y: usize, z: f32) {
        let w = self.width;
        if let Some(d) = self.depth.as_mut() {
            d[y * w + x] = z.max(0.0);
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [QuantizedValue] {
        &mut self.values
    }

    /// Stride-2 downsample taking the modal value of each 2x2 block per
    /// modality (ties go to the first value in raster order) and the median
    /// of the valid depths.
    pub fn downsample(&self) -> FeatureMap {
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        let m = self.modalities.len();
        let mut out = FeatureMap::blank(w, h, self.modalities.clone(), self.depth.is_some());
        for y in 0..h {
            for x in 0..w {
                let block: Vec<(usize, usize)> = [(0, 0), (1, 0), (0, 1), (1, 1)]
                    .iter()
                    .map(|&(dx, dy)| (2 * x + dx, 2 * y + dy))
                    .filter(|&(px, py)| px < self.width && py < self.height)
                    .collect();
                for k in 0..m {
                    let mut counts = [0u8; 9];
                    for &(px, py) in &block {
                        counts[self.value(px, py, k).get() as usize] += 1;
                    }
                    let best = counts.iter().copied().max().unwrap_or(0);
                    let modal = block
                        .iter()
                        .map(|&(px, py)| self.value(px, py, k))
                        .find(|v| counts[v.get() as usize] == best)
                        .unwrap_or(QuantizedValue::MISSING);
                    out.set_value(x, y, k, modal);
                }
                if self.depth.is_some() {
                    let mut zs: Vec<f32> = block
                        .iter()
                        .filter_map(|&(px, py)| self.depth_at(px, py))
                        .filter(|&z| z > 0.0)
                        .collect();
                    zs.sort_by(f32::total_cmp);
                    let z = if zs.is_empty() { 0.0 } else { zs[(zs.len() - 1) / 2] };
                    out.set_depth(x, y, z);
                }
            }
        }
        out
    }
}

/// Read access to a descriptor, either stored or sampled lazily from a map.
pub trait FeatureSource {
    fn len(&self) -> usize;

    fn value(&self, coord: usize) -> QuantizedValue;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Depth in millimetres at descriptor location `location`, when known.
    fn depth(&self, _location: usize) -> Option<f32> {
        None
    }
}

impl FeatureSource for [QuantizedValue] {
    fn len(&self) -> usize {
        <[QuantizedValue]>::len(self)
    }

    #[inline]
    fn value(&self, coord: usize) -> QuantizedValue {
        self[coord]
    }
}

impl FeatureSource for Vec<QuantizedValue> {
    fn len(&self) -> usize {
        <[QuantizedValue]>::len(self)
    }

    #[inline]
    fn value(&self, coord: usize) -> QuantizedValue {
        self[coord]
    }
}

/// A stored descriptor paired with a per-location depth patch.
#[derive(Clone, Copy, Debug)]
pub struct DescriptorWithDepth<'a> {
    pub values: &'a [QuantizedValue],
    pub depth: &'a [f32],
}

impl FeatureSource for DescriptorWithDepth<'_> {
    fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    fn value(&self, coord: usize) -> QuantizedValue {
        self.values[coord]
    }

    fn depth(&self, location: usize) -> Option<f32> {
        self.depth.get(location).copied()
    }
}

/// A template-shaped window into a feature map.
///
/// `shift` is the pyramid level: location offsets are divided by `2^shift`,
/// so the same layout can be read from a downsampled map.
#[derive(Clone, Copy, Debug)]
pub struct WindowView<'a> {
    map: &'a FeatureMap,
    layout: &'a Layout,
    x: usize,
    y: usize,
    shift: u32,
}

impl<'a> WindowView<'a> {
    pub fn new(map: &'a FeatureMap, layout: &'a Layout, x: usize, y: usize) -> Result<Self> {
        Self::at_level(map, layout, x, y, 0)
    }

    pub fn at_level(
        map: &'a FeatureMap,
        layout: &'a Layout,
        x: usize,
        y: usize,
        shift: u32,
    ) -> Result<Self> {
        if map.modalities() != layout.modalities() {
            return Err(Error::Compat(format!(
                "map modalities {:?} differ from template layout {:?}",
                map.modalities(),
                layout.modalities()
            )));
        }
        let (ex, ey) = layout.extent_at_level(shift);
        if x + ex > map.width() || y + ey > map.height() {
            return Err(Error::Range(format!(
                "window at ({x}, {y}) of extent {ex}x{ey} exceeds {}x{} map",
                map.width(),
                map.height()
            )));
        }
        Ok(WindowView {
            map,
            layout,
            x,
            y,
            shift,
        })
    }

    #[inline]
    fn pixel(&self, location: usize) -> (usize, usize) {
        let (lx, ly) = self.layout.locations()[location];
        (
            self.x + (lx as usize >> self.shift),
            self.y + (ly as usize >> self.shift),
        )
    }

    /// Median of the valid depth samples under the window, if the map has a
    /// depth grid. Samples every `step`-th location.
    pub fn median_depth(&self, step: usize) -> Option<f32> {
        self.map.depth()?;
        let mut zs: Vec<f32> = (0..self.layout.locations().len())
            .step_by(step.max(1))
            .filter_map(|l| {
                let (px, py) = self.pixel(l);
                self.map.depth_at(px, py)
            })
            .collect();
        if zs.is_empty() {
            return Some(0.0);
        }
        zs.sort_by(f32::total_cmp);
        Some(zs[zs.len() / 2])
    }

    pub fn to_descriptor(&self) -> Vec<QuantizedValue> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }
}

impl FeatureSource for WindowView<'_> {
    fn len(&self) -> usize {
        self.layout.descriptor_len()
    }

    #[inline]
    fn value(&self, coord: usize) -> QuantizedValue {
        let m = self.layout.modalities().len();
        let (px, py) = self.pixel(coord / m);
        self.map.value(px, py, coord % m)
    }

    fn depth(&self, location: usize) -> Option<f32> {
        let (px, py) = self.pixel(location);
        self.map.depth_at(px, py)
    }
}

/// Sum of `dim_distance` over the foreground coordinates of `coords`,
/// together with the number of foreground coordinates visited.
pub(crate) fn foreground_distance<S: FeatureSource + ?Sized>(
    source: &S,
    template: &Template,
    coords: impl Iterator<Item = usize>,
) -> (u64, u64) {
    let mut dist = 0u64;
    let mut fg = 0u64;
    for c in coords {
        if template.fg_mask[c] {
            dist += dim_distance(template.descriptor[c], source.value(c)) as u64;
            fg += 1;
        }
    }
    (dist, fg)
}

/// Normalized similarity of `template` against a descriptor source: one
/// minus the mean foreground distance over its maximum. Background
/// coordinates are ignored entirely.
pub fn similarity_of<S: FeatureSource + ?Sized>(source: &S, template: &Template) -> f64 {
    let (dist, fg) = foreground_distance(source, template, 0..template.descriptor.len());
    if fg == 0 {
        return 0.0;
    }
    1.0 - dist as f64 / (MAX_DIM_DISTANCE as f64 * fg as f64)
}

/// Similarity of `template` placed with its top-left corner at `offset`.
pub fn similarity(
    scene: &FeatureMap,
    layout: &Layout,
    template: &Template,
    offset: (usize, usize),
) -> Result<f64> {
    let view = WindowView::new(scene, layout, offset.0, offset.1)?;
    Ok(similarity_of(&view, template))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(v: u8) -> QuantizedValue {
        QuantizedValue::new(v).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(dim_distance(q(3), q(3)), 0);
        assert_eq!(dim_distance(q(1), q(8)), 1);
        assert_eq!(dim_distance(q(0), q(5)), 4);
        assert_eq!(dim_distance(q(0), q(0)), 0);
        assert_eq!(dim_distance(q(1), q(5)), 4);
    }

    #[test]
    fn quantized_value_rejects_out_of_range() {
        assert!(QuantizedValue::new(9).is_none());
        assert!(serde_json::from_str::<QuantizedValue>("9").is_err());
        assert_eq!(serde_json::from_str::<QuantizedValue>("8").unwrap(), q(8));
    }

    #[test]
    fn feature_map_shape_checks() {
        let m = vec![Modality::Hue];
        assert!(FeatureMap::new(2, 2, m.clone(), vec![q(1); 3], None).is_err());
        assert!(FeatureMap::new(2, 2, m.clone(), vec![q(1); 4], Some(vec![1.0; 3])).is_err());
        assert!(FeatureMap::new(2, 2, m.clone(), vec![q(1); 4], Some(vec![-1.0; 4])).is_err());
        assert!(FeatureMap::new(2, 2, vec![Modality::Depth], vec![q(1); 4], None).is_err());
        assert!(FeatureMap::new(2, 2, m, vec![q(1); 4], Some(vec![0.0; 4])).is_ok());
    }

    #[test]
    fn downsample_takes_modal_value() {
        let vals = [1, 1, 2, 3, 1, 4, 5, 5].map(q).to_vec();
        // 4x2 map, one modality: blocks {1,1,1,4} and {2,3,5,5}
        let map = FeatureMap::new(4, 2, vec![Modality::Hue], vals, None).unwrap();
        let small = map.downsample();
        assert_eq!(small.width(), 2);
        assert_eq!(small.height(), 1);
        assert_eq!(small.value(0, 0, 0), q(1));
        assert_eq!(small.value(1, 0, 0), q(5));
    }

    proptest! {
        #[test]
        fn distance_is_symmetric_and_bounded(a in 0u8..=8, b in 0u8..=8) {
            let d = dim_distance(q(a), q(b));
            prop_assert_eq!(d, dim_distance(q(b), q(a)));
            prop_assert!(d <= MAX_DIM_DISTANCE);
            prop_assert_eq!(dim_distance(q(a), q(a)), 0);
        }
    }
}
