//! Sliding-window detection over a two-level pyramid.
//!
//! Every window of the half-resolution map is sent through the forest. Each
//! coarse window that is not rejected nominates the full-resolution windows
//! in a 3x3 neighbourhood around its position; those are queried again and
//! the surviving candidates are validated. Windows that are not nominated
//! inherit the rejection depth of their coarse parent.

mod eval;

pub use eval::{evaluate, nms, EvalCriterion, Metrics};

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMap, PoseSample, TemplateSet, WindowView};
use crate::forest::{Forest, QueryCost, QueryResult};
use crate::validate::{chunk_plan, preemptive_validate, ChunkPlan, ValidationConfig, ValidationResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub validation: ValidationConfig,
    /// Windows whose median depth falls outside this band are skipped.
    pub depth_min_mm: f64,
    pub depth_max_mm: f64,
    /// Sample every n-th location when taking a window's median depth.
    pub depth_sample_step: usize,
    pub nms_overlap: f64,
    /// Query the half-resolution level first. Without it every window is
    /// queried at full resolution.
    pub pyramid: bool,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            validation: ValidationConfig::default(),
            depth_min_mm: 400.0,
            depth_max_mm: 1600.0,
            depth_sample_step: 7,
            nms_overlap: 0.5,
            pyramid: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: usize,
    pub y: usize,
    pub template_id: u32,
    pub object_id: u32,
    pub pose: PoseSample,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_at_depth: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowState {
    Rejected { depth: usize },
    Validated,
    OutOfRange,
}

/// One state per full-resolution window position, indexed by the window's
/// top-left corner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionGrid {
    pub width: usize,
    pub height: usize,
    pub states: Vec<WindowState>,
}

impl RejectionGrid {
    pub fn get(&self, x: usize, y: usize) -> WindowState {
        self.states[y * self.width + x]
    }

    /// Rejection depth per window, `-1` for windows that reached validation
    /// or were outside the depth band.
    pub fn depths(&self) -> Vec<i32> {
        self.states
            .iter()
            .map(|s| match s {
                WindowState::Rejected { depth } => *depth as i32,
                _ => -1,
            })
            .collect()
    }

    pub fn in_range(&self) -> usize {
        self.states.iter().filter(|s| **s != WindowState::OutOfRange).count()
    }

    pub fn rejected(&self) -> usize {
        self.states.iter().filter(|s| matches!(s, WindowState::Rejected { .. })).count()
    }

    /// Share of in-range windows rejected before validation.
    pub fn rejection_fraction(&self) -> f64 {
        let n = self.in_range();
        if n == 0 {
            return 1.0;
        }
        self.rejected() as f64 / n as f64
    }

    /// Binary greymap: rejected windows get lighter the deeper they were
    /// rejected, windows that reached validation or were out of range are
    /// black.
    pub fn write_pgm<W: Write>(&self, out: &mut W, max_depth: usize) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let span = max_depth.max(1) as f64;
        let px: Vec<u8> = self
            .states
            .iter()
            .map(|s| match s {
                WindowState::Rejected { depth } => (64.0 + 191.0 * (*depth as f64 / span).min(1.0)).round() as u8,
                _ => 0,
            })
            .collect();
        out.write_all(&px)
    }
}

/// Comparison counts for one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCost {
    pub coarse_windows: u64,
    pub fine_windows: u64,
    pub tree: QueryCost,
    pub validations: u64,
    pub chunk_evaluations: u64,
    pub validation_comparisons: u64,
}

impl FrameCost {
    pub fn tree_comparisons(&self) -> u64 {
        self.tree.tree_comparisons()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowTrace {
    pub x: usize,
    pub y: usize,
    pub candidates: usize,
    pub result: ValidationResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectOutput {
    /// After non-maximum suppression, best first.
    pub detections: Vec<Detection>,
    pub grid: RejectionGrid,
    pub cost: FrameCost,
    /// One record per validated window, in raster order.
    pub traces: Vec<WindowTrace>,
}

/// Validation plan shared by every window; a function of the layout and the
/// run seed only.
pub fn plan_for(store: &TemplateSet, cfg: &DetectConfig, seed: u64) -> ChunkPlan {
    chunk_plan(store.layout().descriptor_len(), cfg.validation.chunk_size, seed)
}

fn check_inputs(scene: &FeatureMap, forest: &Forest, store: &TemplateSet, cfg: &DetectConfig) -> Result<()> {
    if forest.layout != *store.layout() {
        return Err(Error::Compat("forest and template set use different descriptor layouts".into()));
    }
    if forest.template_count != store.len() {
        return Err(Error::Compat(format!(
            "forest was trained on {} templates, store has {}",
            forest.template_count,
            store.len()
        )));
    }
    if scene.modalities() != store.layout().modalities() {
        return Err(Error::Compat(format!(
            "scene modalities {:?} differ from the templates' {:?}",
            scene.modalities(),
            store.layout().modalities()
        )));
    }
    let (pw, ph) = store.layout().patch_size();
    if scene.width() < pw || scene.height() < ph {
        return Err(Error::Shape(format!(
            "{}x{} scene is smaller than the {pw}x{ph} template patch",
            scene.width(),
            scene.height()
        )));
    }
    if !(cfg.depth_min_mm < cfg.depth_max_mm) {
        return Err(Error::Config("depth band is empty".into()));
    }
    cfg.validation.validate(store.layout().descriptor_len())
}

fn in_band(view: &WindowView, cfg: &DetectConfig) -> bool {
    match view.median_depth(cfg.depth_sample_step) {
        Some(z) => (cfg.depth_min_mm..=cfg.depth_max_mm).contains(&(z as f64)),
        None => true,
    }
}

enum Fine {
    State(WindowState),
    Validate(Vec<u32>),
}

/// Detect every template of `store` in `scene`.
pub fn detect(
    scene: &FeatureMap,
    forest: &Forest,
    store: &TemplateSet,
    cfg: &DetectConfig,
    plan: &ChunkPlan,
) -> Result<DetectOutput> {
    check_inputs(scene, forest, store, cfg)?;
    let layout = store.layout();
    let (pw, ph) = layout.patch_size();
    let (gw, gh) = (scene.width() - pw + 1, scene.height() - ph + 1);
    let mut cost = FrameCost::default();

    // coarse level: None = not nominated with the given inherited depth
    let mut inherited: Vec<Option<usize>> = vec![None; gw * gh];
    let mut nominated = vec![!cfg.pyramid; gw * gh];
    if cfg.pyramid {
        let coarse = scene.downsample();
        let (ex, ey) = layout.extent_at_level(1);
        let (cw, ch) = (coarse.width() + 1 - ex, coarse.height() + 1 - ey);
        let results: Vec<(Option<QueryResult>, QueryCost)> = (0..cw * ch)
            .into_par_iter()
            .map(|i| {
                let view = WindowView::at_level(&coarse, layout, i % cw, i / cw, 1).expect("in bounds");
                if !in_band(&view, cfg) {
                    return (None, QueryCost::default());
                }
                let mut c = QueryCost::default();
                (Some(forest.query_counted(&view, &mut c)), c)
            })
            .collect();
        for (i, (r, c)) in results.iter().enumerate() {
            let (cx, cy) = (i % cw, i / cw);
            cost.tree += *c;
            if r.is_some() {
                cost.coarse_windows += 1;
            }
            match r {
                Some(QueryResult::Rejected { depth }) => {
                    for fy in 2 * cy..(2 * cy + 2).min(gh) {
                        for fx in 2 * cx..(2 * cx + 2).min(gw) {
                            inherited[fy * gw + fx] = Some(*depth);
                        }
                    }
                }
                Some(QueryResult::Candidates(_)) => {
                    let (fx, fy) = (2 * cx as isize, 2 * cy as isize);
                    for y in fy - 1..=fy + 1 {
                        for x in fx - 1..=fx + 1 {
                            if x >= 0 && y >= 0 && (x as usize) < gw && (y as usize) < gh {
                                nominated[y as usize * gw + x as usize] = true;
                            }
                        }
                    }
                }
                None => {}
            }
        }
        // Children of out-of-band coarse windows are checked at full
        // resolution; windows past the last coarse position follow the
        // nearest parent.
        for fy in 0..gh {
            for fx in 0..gw {
                let i = fy * gw + fx;
                let p = ((fx / 2).min(cw - 1), (fy / 2).min(ch - 1));
                match &results[p.1 * cw + p.0].0 {
                    None => nominated[i] = true,
                    Some(QueryResult::Rejected { depth }) if inherited[i].is_none() => inherited[i] = Some(*depth),
                    _ => {}
                }
            }
        }
    }

    let fine: Vec<(Fine, QueryCost)> = (0..gw * gh)
        .into_par_iter()
        .map(|i| {
            let view = WindowView::new(scene, layout, i % gw, i / gw).expect("in bounds");
            if !in_band(&view, cfg) {
                return (Fine::State(WindowState::OutOfRange), QueryCost::default());
            }
            if !nominated[i] {
                let depth = inherited[i].unwrap_or(0);
                return (Fine::State(WindowState::Rejected { depth }), QueryCost::default());
            }
            let mut c = QueryCost::default();
            match forest.query_counted(&view, &mut c) {
                QueryResult::Rejected { depth } => (Fine::State(WindowState::Rejected { depth }), c),
                QueryResult::Candidates(ids) => (Fine::Validate(ids), c),
            }
        })
        .collect();
    let fine_queries = fine.iter().filter(|(_, c)| c.nodes > 0).count() as u64;

    let validated: Vec<(usize, WindowTrace)> = fine
        .par_iter()
        .enumerate()
        .filter_map(|(i, (f, _))| match f {
            Fine::Validate(ids) => Some((i, ids)),
            Fine::State(_) => None,
        })
        .map(|(i, ids)| {
            let (x, y) = (i % gw, i / gw);
            let view = WindowView::new(scene, layout, x, y).expect("in bounds");
            let result = preemptive_validate(&view, ids, store, plan, &cfg.validation);
            (
                i,
                WindowTrace {
                    x,
                    y,
                    candidates: ids.len(),
                    result,
                },
            )
        })
        .collect();

    cost.fine_windows = fine_queries;
    let mut states = Vec::with_capacity(gw * gh);
    for (f, c) in &fine {
        cost.tree += *c;
        states.push(match f {
            Fine::State(s) => *s,
            Fine::Validate(_) => WindowState::Validated,
        });
    }
    let mut raw = Vec::new();
    let mut traces = Vec::with_capacity(validated.len());
    for (_, t) in validated {
        cost.validations += 1;
        cost.chunk_evaluations += t.result.chunk_evaluations;
        cost.validation_comparisons += t.result.comparisons;
        if let Some(w) = t.result.winner {
            let tpl = store.get(w.template_id).expect("validated ids come from the store");
            raw.push(Detection {
                x: t.x,
                y: t.y,
                template_id: w.template_id,
                object_id: tpl.object_id,
                pose: tpl.pose,
                score: w.score,
                rejected_at_depth: None,
            });
        }
        traces.push(t);
    }
    Ok(DetectOutput {
        detections: nms(raw, (pw, ph), cfg.nms_overlap),
        grid: RejectionGrid {
            width: gw,
            height: gh,
            states,
        },
        cost,
        traces,
    })
}
