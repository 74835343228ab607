//! Declarative run configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::pipeline::{DetectConfig, EvalCriterion};
use crate::rng::{self, tag};
use crate::synth::{
    generate_objects, random_placements, Catalogue, ObjectStyle, Placement, PoseGrid, SceneSpec, TemplateConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub objects: usize,
    pub style: ObjectStyle,
    pub templates: TemplateConfig,
    pub poses: PoseGrid,
    pub scenes: Vec<SceneConfig>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            objects: 1,
            style: ObjectStyle::default(),
            templates: TemplateConfig::default(),
            poses: PoseGrid::default(),
            scenes: vec![SceneConfig::default()],
        }
    }
}

/// One test scene. Explicit `placed` objects win over `random_objects`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub random_objects: usize,
    pub placed: Vec<Placement>,
    pub clutter_density: f64,
    pub noise_rate: f64,
    pub occlusion_fraction: f64,
    pub far_band: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            name: "scene".into(),
            width: 160,
            height: 120,
            random_objects: 2,
            placed: Vec::new(),
            clutter_density: 0.5,
            noise_rate: 0.0,
            occlusion_fraction: 0.0,
            far_band: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Template-set sizes for the sublinearity sweep.
    pub sizes: Vec<usize>,
    /// Objects generated for the sweep; subsets are drawn from their views.
    pub sweep_objects: usize,
    /// Query windows per sweep point.
    pub queries: usize,
    /// Tree counts compared on the scene suite.
    pub tree_counts: Vec<usize>,
    /// Scenes in the suite, built from the dataset's first scene config.
    pub scenes: usize,
    pub noise_rate: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![250, 500, 1000, 2000, 4000],
            sweep_objects: 13,
            queries: 200,
            tree_counts: vec![1, 5],
            scenes: 8,
            noise_rate: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub forest: ForestConfig,
    pub detect: DetectConfig,
    pub eval: EvalCriterion,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Canonical TOML form, embedded in every artifact.
    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn check(&self) -> Result<()> {
        let d = &self.dataset;
        if d.objects == 0 {
            return Err(Error::Config("dataset.objects must be >= 1".into()));
        }
        if d.poses.is_empty() {
            return Err(Error::Config("pose grid is empty".into()));
        }
        if d.templates.patch < 4 {
            return Err(Error::Config("template patch must be at least 4 pixels".into()));
        }
        self.forest.validate()?;
        let len = d.templates.layout()?.descriptor_len();
        self.detect.validation.validate(len)?;
        if !(self.detect.nms_overlap >= 0.0 && self.detect.nms_overlap <= 1.0) {
            return Err(Error::Config("detect.nms_overlap must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn catalogue(&self) -> Result<Catalogue> {
        let d = &self.dataset;
        Ok(Catalogue {
            objects: generate_objects(d.objects, self.seed, d.templates.patch, &d.style)?,
            render: d.templates.render.clone(),
            extract: d.templates.extract.clone(),
            style: d.style.clone(),
        })
    }

    /// Resolve scene `index` into a concrete spec with placements.
    pub fn scene_spec(&self, index: usize, catalogue: &Catalogue) -> Result<SceneSpec> {
        let s = self
            .dataset
            .scenes
            .get(index)
            .ok_or_else(|| Error::Config(format!("no scene {index}")))?;
        let seed = rng::derive_seed(self.seed, tag::SCENE, index as u64);
        let placed = if s.placed.is_empty() {
            random_placements(
                &s.name,
                s.random_objects,
                (s.width, s.height),
                catalogue,
                &self.dataset.poses,
                seed,
            )?
        } else {
            s.placed.clone()
        };
        Ok(SceneSpec {
            name: s.name.clone(),
            width: s.width,
            height: s.height,
            placed,
            clutter_density: s.clutter_density,
            noise_rate: s.noise_rate,
            occlusion_fraction: s.occlusion_fraction,
            far_band: s.far_band,
            seed,
        })
    }
}
