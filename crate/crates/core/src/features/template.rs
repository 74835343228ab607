use serde::{Deserialize, Serialize};

use super::{Modality, QuantizedValue};
use crate::error::{Error, Result};

/// Object pose label. Angles in degrees, `scale` dimensionless.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub scale: f64,
}

impl PoseSample {
    pub const IDENTITY: PoseSample = PoseSample {
        yaw: 0.0,
        pitch: 0.0,
        roll: 0.0,
        scale: 1.0,
    };

    /// Largest absolute per-angle difference, with roll compared on the circle.
    pub fn max_angle_error(&self, other: &PoseSample) -> f64 {
        let roll = {
            let d = (self.roll - other.roll).rem_euclid(360.0);
            d.min(360.0 - d)
        };
        (self.yaw - other.yaw)
            .abs()
            .max((self.pitch - other.pitch).abs())
            .max(roll)
    }
}

/// Descriptor layout shared by every template of a set: the patch size, the
/// sampled locations `r` and the quantized modalities.
///
/// Coordinates are location-major, modality-minor: coordinate
/// `l * modalities.len() + k` is modality `k` at location `l`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LayoutData")]
pub struct Layout {
    patch_width: u16,
    patch_height: u16,
    locations: Vec<(u16, u16)>,
    modalities: Vec<Modality>,
}

#[derive(Deserialize)]
struct LayoutData {
    patch_width: u16,
    patch_height: u16,
    locations: Vec<(u16, u16)>,
    modalities: Vec<Modality>,
}

impl TryFrom<LayoutData> for Layout {
    type Error = Error;

    fn try_from(d: LayoutData) -> Result<Self> {
        Layout::new(d.patch_width, d.patch_height, d.locations, d.modalities)
    }
}

impl Layout {
    pub fn new(
        patch_width: u16,
        patch_height: u16,
        locations: Vec<(u16, u16)>,
        modalities: Vec<Modality>,
    ) -> Result<Self> {
        if patch_width == 0 || patch_height == 0 {
            return Err(Error::Shape("patch must be non-empty".into()));
        }
        if locations.is_empty() || modalities.is_empty() {
            return Err(Error::Shape("layout needs locations and modalities".into()));
        }
        if modalities.contains(&Modality::Depth) {
            return Err(Error::Shape("depth cannot be a descriptor modality".into()));
        }
        if let Some(&(x, y)) = locations
            .iter()
            .find(|&&(x, y)| x >= patch_width || y >= patch_height)
        {
            return Err(Error::Shape(format!(
                "location ({x}, {y}) outside {patch_width}x{patch_height} patch"
            )));
        }
        Ok(Layout {
            patch_width,
            patch_height,
            locations,
            modalities,
        })
    }

    /// Regular grid of locations every `stride` pixels.
    pub fn grid(patch_width: u16, patch_height: u16, stride: u16, modalities: Vec<Modality>) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("location stride must be >= 1".into()));
        }
        let mut locations = Vec::new();
        for y in (0..patch_height).step_by(stride as usize) {
            for x in (0..patch_width).step_by(stride as usize) {
                locations.push((x, y));
            }
        }
        Layout::new(patch_width, patch_height, locations, modalities)
    }

    pub fn patch_size(&self) -> (usize, usize) {
        (self.patch_width as usize, self.patch_height as usize)
    }

    pub fn locations(&self) -> &[(u16, u16)] {
        &self.locations
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn descriptor_len(&self) -> usize {
        self.locations.len() * self.modalities.len()
    }

    pub fn location_of(&self, coord: usize) -> usize {
        coord / self.modalities.len()
    }

    /// Window extent needed to read this layout at pyramid level `shift`.
    pub fn extent_at_level(&self, shift: u32) -> (usize, usize) {
        let mx = self.locations.iter().map(|l| l.0 as usize >> shift).max().unwrap_or(0);
        let my = self.locations.iter().map(|l| l.1 as usize >> shift).max().unwrap_or(0);
        (mx + 1, my + 1)
    }
}

/// One object view: label, descriptor, foreground mask and depth patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub id: u32,
    pub object_id: u32,
    pub pose: PoseSample,
    pub descriptor: Vec<QuantizedValue>,
    /// Foreground indicator per descriptor coordinate.
    pub fg_mask: Vec<bool>,
    /// Depth in millimetres per layout location; `0` off the object.
    pub depth: Vec<f32>,
}

impl Template {
    pub fn foreground_count(&self) -> usize {
        self.fg_mask.iter().filter(|&&f| f).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        if self.fg_mask.is_empty() {
            return 0.0;
        }
        self.foreground_count() as f64 / self.fg_mask.len() as f64
    }
}

/// Templates sharing one layout; template ids are dense and equal to their
/// index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TemplateSetData")]
pub struct TemplateSet {
    layout: Layout,
    templates: Vec<Template>,
}

#[derive(Deserialize)]
struct TemplateSetData {
    layout: Layout,
    templates: Vec<Template>,
}

impl TryFrom<TemplateSetData> for TemplateSet {
    type Error = Error;

    fn try_from(d: TemplateSetData) -> Result<Self> {
        TemplateSet::new(d.layout, d.templates)
    }
}

impl TemplateSet {
    pub fn new(layout: Layout, templates: Vec<Template>) -> Result<Self> {
        let len = layout.descriptor_len();
        let m = layout.modalities().len();
        for (i, t) in templates.iter().enumerate() {
            if t.id as usize != i {
                return Err(Error::Data(format!("template ids must be dense: index {i} has id {}", t.id)));
            }
            if t.descriptor.len() != len || t.fg_mask.len() != len {
                return Err(Error::Data(format!(
                    "template {} has descriptor/mask length {}/{}, layout needs {len}",
                    t.id,
                    t.descriptor.len(),
                    t.fg_mask.len()
                )));
            }
            if t.depth.len() != layout.locations().len() {
                return Err(Error::Data(format!("template {} depth patch has wrong length", t.id)));
            }
            // all modalities of a location share its foreground flag
            if t.fg_mask.chunks(m).any(|c| c.iter().any(|&f| f != c[0])) {
                return Err(Error::Data(format!(
                    "template {} foreground mask is not per-location",
                    t.id
                )));
            }
            if t.depth.iter().any(|z| !z.is_finite() || *z < 0.0) {
                return Err(Error::Data(format!("template {} has invalid depth", t.id)));
            }
        }
        Ok(TemplateSet { layout, templates })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn get(&self, id: u32) -> Option<&Template> {
        self.templates.get(id as usize)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// A new set holding the given templates, re-numbered densely in order.
    pub fn subset(&self, ids: &[u32]) -> Result<TemplateSet> {
        let templates = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                let mut t = self
                    .get(id)
                    .ok_or_else(|| Error::Data(format!("unknown template id {id}")))?
                    .clone();
                t.id = i as u32;
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?;
        TemplateSet::new(self.layout.clone(), templates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_layout_is_location_major() {
        let l = Layout::grid(4, 2, 2, Modality::DESCRIPTOR.to_vec()).unwrap();
        assert_eq!(l.locations(), &[(0, 0), (2, 0)]);
        assert_eq!(l.descriptor_len(), 6);
        assert_eq!(l.location_of(4), 1);
        assert_eq!(l.extent_at_level(0), (3, 1));
        assert_eq!(l.extent_at_level(1), (2, 1));
    }

    #[test]
    fn pose_error_wraps_roll() {
        let a = PoseSample { roll: 350.0, ..PoseSample::IDENTITY };
        let b = PoseSample { roll: 10.0, ..PoseSample::IDENTITY };
        assert_eq!(a.max_angle_error(&b), 20.0);
    }

    #[test]
    fn set_rejects_sparse_ids() {
        let l = Layout::grid(2, 1, 1, vec![Modality::Hue]).unwrap();
        let t = Template {
            id: 3,
            object_id: 0,
            pose: PoseSample::IDENTITY,
            descriptor: vec![QuantizedValue::MISSING; 2],
            fg_mask: vec![true; 2],
            depth: vec![0.0; 2],
        };
        assert!(TemplateSet::new(l, vec![t]).is_err());
    }
}
