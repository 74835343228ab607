//! Benchmark suites: search cost against template count, and detection
//! quality and cost against tree count. All figures are operation counts,
//! never wall-clock time, so reports are reproducible byte for byte.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::TemplateSet;
use crate::forest::{train_forest, ForestConfig, QueryCost};
use crate::pipeline::{detect, evaluate, plan_for};
use crate::rng::{self, tag};
use crate::synth::{add_noise, build_template_set, compose_scene, generate_objects, random_placements, SceneSpec};
use crate::validate::{full_validate, ValidationConfig};

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub templates: usize,
    pub trees: usize,
    pub queries: usize,
    /// Mean `dim_distance` evaluations in split functions per query.
    pub mean_split_comparisons: f64,
    pub mean_rejector_lookups: f64,
    pub mean_candidates: f64,
    pub rejected_queries: usize,
    /// Mean comparisons of an exhaustive scan over every template.
    pub exhaustive_comparisons: f64,
    /// Sum over the set of each template's foreground coordinates.
    pub foreground_dims: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub forest_slope: f64,
    pub exhaustive_slope: f64,
}

/// Sample `sizes` template subsets from one pool of views, train a forest on
/// each and send noisy copies of member templates through it. The
/// exhaustive baseline scores every template on the first few queries.
pub fn template_sweep(cfg: &RunConfig) -> Result<SweepReport> {
    let b = &cfg.bench;
    let d = &cfg.dataset;
    let objects = generate_objects(b.sweep_objects, cfg.seed, d.templates.patch, &d.style)?;
    let pool = build_template_set(&objects, &d.poses.poses(), &d.templates, cfg.seed)?;
    let mut rows = Vec::new();
    for (si, &size) in b.sizes.iter().enumerate() {
        if size == 0 || size > pool.len() {
            return Err(Error::Config(format!(
                "sweep size {size} outside 1..={} available templates",
                pool.len()
            )));
        }
        let mut rng = rng::stream(cfg.seed, tag::BENCH, si as u64);
        let mut ids: Vec<u32> = index::sample(&mut rng, pool.len(), size).into_iter().map(|i| i as u32).collect();
        ids.sort_unstable();
        let set = pool.subset(&ids)?;
        let forest = train_forest(&set, &cfg.forest, rng::derive_seed(cfg.seed, tag::TREE, si as u64))?;
        let queries: Vec<Vec<_>> = (0..b.queries)
            .map(|_| {
                let t = &set.templates()[rand::Rng::gen_range(&mut rng, 0..set.len())];
                let mut v = t.descriptor.clone();
                add_noise(&mut v, b.noise_rate, &mut rng);
                v
            })
            .collect();
        let results: Vec<(QueryCost, Option<usize>)> = queries
            .par_iter()
            .map(|q| {
                let mut c = QueryCost::default();
                let r = forest.query_counted(q, &mut c);
                (c, r.candidates().map(<[u32]>::len))
            })
            .collect();
        let n = b.queries.max(1) as f64;
        let all: Vec<u32> = (0..set.len() as u32).collect();
        let flat = ValidationConfig {
            use_depth: false,
            ..cfg.detect.validation.clone()
        };
        let probe = b.queries.clamp(1, 8);
        let exhaustive: u64 = queries
            .par_iter()
            .take(probe)
            .map(|q| full_validate(q, &all, &set, &flat).map_or(0, |(_, ops)| ops))
            .sum();
        rows.push(SweepRow {
            templates: size,
            trees: cfg.forest.trees,
            queries: b.queries,
            mean_split_comparisons: results.iter().map(|r| r.0.split_comparisons).sum::<u64>() as f64 / n,
            mean_rejector_lookups: results.iter().map(|r| r.0.rejector_lookups).sum::<u64>() as f64 / n,
            mean_candidates: results.iter().filter_map(|r| r.1).sum::<usize>() as f64 / n,
            rejected_queries: results.iter().filter(|r| r.1.is_none()).count(),
            exhaustive_comparisons: exhaustive as f64 / probe as f64,
            foreground_dims: set.templates().iter().map(|t| t.foreground_count() as u64).sum(),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.templates as f64).collect();
    let forest_y: Vec<f64> = rows.iter().map(|r| r.mean_split_comparisons).collect();
    let exh_y: Vec<f64> = rows.iter().map(|r| r.exhaustive_comparisons).collect();
    Ok(SweepReport {
        forest_slope: log_log_slope(&xs, &forest_y),
        exhaustive_slope: log_log_slope(&xs, &exh_y),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRow {
    pub trees: usize,
    pub scene: String,
    pub ground_truth: usize,
    pub detections: usize,
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub rejection_fraction: f64,
    pub foreground_validated: usize,
    pub tree_comparisons: u64,
    pub split_comparisons: u64,
    pub validation_comparisons: u64,
    pub chunk_evaluations: u64,
    pub validations: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub trees: usize,
    pub recall: f64,
    pub precision: f64,
    pub mean_rejection_fraction: f64,
    /// Tree comparisons over validation comparisons, summed over scenes.
    pub tree_to_validation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub rows: Vec<SceneRow>,
    pub summary: Vec<SuiteSummary>,
}

/// The scene suite: `bench.scenes` variants of the first configured scene
/// with `bench.noise_rate` noise.
pub fn suite_scenes(cfg: &RunConfig) -> Result<Vec<SceneSpec>> {
    let catalogue = cfg.catalogue()?;
    let base = cfg
        .dataset
        .scenes
        .first()
        .ok_or_else(|| Error::Config("bench needs at least one scene config".into()))?;
    (0..cfg.bench.scenes)
        .map(|i| {
            let seed = rng::derive_seed(cfg.seed, tag::BENCH, 1000 + i as u64);
            let placed = if base.placed.is_empty() {
                random_placements(
                    &base.name,
                    base.random_objects,
                    (base.width, base.height),
                    &catalogue,
                    &cfg.dataset.poses,
                    seed,
                )?
            } else {
                base.placed.clone()
            };
            Ok(SceneSpec {
                name: format!("{}_{i:03}", base.name),
                width: base.width,
                height: base.height,
                placed,
                clutter_density: base.clutter_density,
                noise_rate: cfg.bench.noise_rate,
                occlusion_fraction: base.occlusion_fraction,
                far_band: base.far_band,
                seed,
            })
        })
        .collect()
}

/// Run the scene suite once per tree count in `bench.tree_counts`.
pub fn tree_suite(cfg: &RunConfig) -> Result<SuiteReport> {
    let catalogue = cfg.catalogue()?;
    let set: TemplateSet =
        build_template_set(&catalogue.objects, &cfg.dataset.poses.poses(), &cfg.dataset.templates, cfg.seed)?;
    let scenes = suite_scenes(cfg)?
        .iter()
        .map(|s| compose_scene(s, &catalogue).map(|(m, gt)| (s.name.clone(), m, gt)))
        .collect::<Result<Vec<_>>>()?;
    let plan = plan_for(&set, &cfg.detect, cfg.seed);
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &trees in &cfg.bench.tree_counts {
        let fcfg = ForestConfig { trees, ..cfg.forest.clone() };
        let forest = train_forest(&set, &fcfg, cfg.seed)?;
        let (mut tp, mut gts, mut dets, mut tree_ops, mut val_ops, mut rej) = (0, 0, 0, 0u64, 0u64, 0.0);
        for (name, map, gt) in &scenes {
            let out = detect(map, &forest, &set, &cfg.detect, &plan)?;
            let m = evaluate(&out.detections, gt, &cfg.eval);
            let foreground_validated = gt
                .iter()
                .filter(|g| out.grid.get(g.x, g.y) == crate::pipeline::WindowState::Validated)
                .count();
            tp += m.true_positives;
            gts += m.ground_truth;
            dets += m.detections;
            tree_ops += out.cost.tree_comparisons();
            val_ops += out.cost.validation_comparisons;
            rej += out.grid.rejection_fraction();
            rows.push(SceneRow {
                trees,
                scene: name.clone(),
                ground_truth: m.ground_truth,
                detections: m.detections,
                true_positives: m.true_positives,
                precision: m.precision,
                recall: m.recall,
                rejection_fraction: out.grid.rejection_fraction(),
                foreground_validated,
                tree_comparisons: out.cost.tree_comparisons(),
                split_comparisons: out.cost.tree.split_comparisons,
                validation_comparisons: out.cost.validation_comparisons,
                chunk_evaluations: out.cost.chunk_evaluations,
                validations: out.cost.validations,
            });
        }
        summary.push(SuiteSummary {
            trees,
            recall: if gts == 0 { 1.0 } else { tp as f64 / gts as f64 },
            precision: if dets == 0 { 1.0 } else { tp as f64 / dets as f64 },
            mean_rejection_fraction: rej / scenes.len().max(1) as f64,
            tree_to_validation: tree_ops as f64 / val_ops.max(1) as f64,
        });
    }
    Ok(SuiteReport { rows, summary })
}

/// Serialize rows as CSV with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn slope_of_power_laws() {
        let xs = [250.0, 500.0, 1000.0, 2000.0, 4000.0];
        let lin: Vec<f64> = xs.iter().map(|x| 3.0 * x).collect();
        assert_abs_diff_eq!(log_log_slope(&xs, &lin), 1.0, epsilon = 1e-12);
        let sq: Vec<f64> = xs.iter().map(|x: &f64| x.sqrt()).collect();
        assert_abs_diff_eq!(log_log_slope(&xs, &sq), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rows = vec![SuiteSummary {
            trees: 1,
            recall: 0.5,
            precision: 1.0,
            mean_rejection_fraction: 0.9,
            tree_to_validation: 0.1,
        }];
        let text = to_csv(&rows).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("trees,recall"));
    }
}
