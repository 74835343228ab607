//! Breadth-first preemptive validation of leaf candidates.
//!
//! Every candidate is scored on the same sequence of coordinate chunks. After
//! each chunk only candidates whose running score beats both the median of
//! the survivors and the floor `alpha` go on, so the candidate list halves
//! per stage and the expected number of chunk evaluations is logarithmic in
//! the list length.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{dim_distance, FeatureSource, Template, TemplateSet, MAX_DIM_DISTANCE};
use crate::rng::{self, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    /// Descriptor coordinates per chunk.
    pub chunk_size: usize,
    pub alpha: f64,
    pub use_depth: bool,
    /// Depth error at which the depth term reaches zero, millimetres.
    pub depth_tolerance_mm: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            chunk_size: 16,
            alpha: 0.5,
            use_depth: true,
            depth_tolerance_mm: 30.0,
        }
    }
}

impl ValidationConfig {
    pub fn validate(&self, descriptor_len: usize) -> Result<()> {
        if self.chunk_size == 0 || self.chunk_size > descriptor_len {
            return Err(Error::Config(format!(
                "chunk_size {} must lie in [1, {descriptor_len}]",
                self.chunk_size
            )));
        }
        if !(self.depth_tolerance_mm > 0.0) {
            return Err(Error::Config("depth_tolerance_mm must be > 0".into()));
        }
        Ok(())
    }
}

/// A seeded permutation of all coordinates cut into consecutive chunks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub chunks: Vec<Vec<u32>>,
}

impl ChunkPlan {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

pub fn chunk_plan(descriptor_len: usize, chunk_size: usize, seed: u64) -> ChunkPlan {
    let mut order: Vec<u32> = (0..descriptor_len as u32).collect();
    order.shuffle(&mut rng::stream(seed, tag::CHUNK_PLAN, 0));
    ChunkPlan {
        chunks: order.chunks(chunk_size.max(1)).map(<[u32]>::to_vec).collect(),
    }
}

/// Running sums of one candidate's score. Feature and depth terms are both
/// taken per foreground coordinate, so the tally over all chunks equals the
/// full score exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Tally {
    dist: u64,
    fg: u64,
    depth: f64,
}

impl Tally {
    fn score(&self, use_depth: bool) -> f64 {
        if self.fg == 0 {
            return 0.5;
        }
        let feat = 1.0 - self.dist as f64 / (MAX_DIM_DISTANCE as f64 * self.fg as f64);
        if use_depth {
            0.5 * feat + 0.5 * self.depth / self.fg as f64
        } else {
            feat
        }
    }
}

fn depth_similarity(scene: Option<f32>, template: f32, tolerance: f64) -> f64 {
    match scene {
        Some(z) if z > 0.0 => 1.0 - ((z - template).abs() as f64 / tolerance).min(1.0),
        _ => 0.0,
    }
}

/// Add `chunk` to `tally`; returns the comparisons made.
fn accumulate<S: FeatureSource + ?Sized>(
    window: &S,
    t: &Template,
    chunk: &[u32],
    cfg: &ValidationConfig,
    tally: &mut Tally,
) -> u64 {
    let m = (t.descriptor.len() / t.depth.len().max(1)).max(1);
    let mut ops = 0;
    for &c in chunk {
        let c = c as usize;
        if !t.fg_mask[c] {
            continue;
        }
        tally.dist += dim_distance(t.descriptor[c], window.value(c)) as u64;
        tally.fg += 1;
        ops += 1;
        if cfg.use_depth {
            let l = c / m;
            tally.depth += depth_similarity(window.depth(l), t.depth[l], cfg.depth_tolerance_mm);
            ops += 1;
        }
    }
    ops
}

/// Score of `t` on one chunk. A chunk without foreground coordinates is
/// neutral (0.5).
pub fn chunk_score<S: FeatureSource + ?Sized>(window: &S, t: &Template, chunk: &[u32], cfg: &ValidationConfig) -> f64 {
    let mut tally = Tally::default();
    accumulate(window, t, chunk, cfg, &mut tally);
    tally.score(cfg.use_depth)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Winner {
    pub template_id: u32,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub winner: Option<Winner>,
    pub initial_candidates: usize,
    pub stages_run: usize,
    pub survivors_per_stage: Vec<usize>,
    /// Candidate-chunk pairs scored.
    pub chunk_evaluations: u64,
    /// Feature distances plus depth comparisons.
    pub comparisons: u64,
}

fn lookup(store: &TemplateSet, id: u32) -> &Template {
    store
        .get(id)
        .unwrap_or_else(|| panic!("candidate {id} is not in the template store"))
}

/// Staged validation of `candidates` against `window`.
///
/// A stage scores the next chunk for every survivor and keeps those whose
/// running score is strictly above `max(median, alpha)`. When that would drop
/// everyone although the best score clears `alpha` (all survivors tied), the
/// tied leaders are kept, at most half of them by lowest id. Once a single
/// candidate is left its score is completed over the remaining chunks. The
/// winner is reported only if its score exceeds `alpha`.
///
/// # Panics
/// If a candidate id is missing from `store`.
pub fn preemptive_validate<S: FeatureSource + ?Sized>(
    window: &S,
    candidates: &[u32],
    store: &TemplateSet,
    plan: &ChunkPlan,
    cfg: &ValidationConfig,
) -> ValidationResult {
    let mut ids = candidates.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut live: Vec<(u32, Tally)> = ids.iter().map(|&id| (id, Tally::default())).collect();
    let mut res = ValidationResult {
        winner: None,
        initial_candidates: ids.len(),
        stages_run: 0,
        survivors_per_stage: Vec::new(),
        chunk_evaluations: 0,
        comparisons: 0,
    };
    let mut next = 0;
    while live.len() > 1 && next < plan.len() {
        let chunk = &plan.chunks[next];
        next += 1;
        for (id, tally) in live.iter_mut() {
            res.comparisons += accumulate(window, lookup(store, *id), chunk, cfg, tally);
            res.chunk_evaluations += 1;
        }
        res.stages_run += 1;
        let mut scores: Vec<f64> = live.iter().map(|(_, t)| t.score(cfg.use_depth)).collect();
        scores.sort_by(f64::total_cmp);
        let n = scores.len();
        let median = if n % 2 == 1 {
            scores[n / 2]
        } else {
            0.5 * (scores[n / 2 - 1] + scores[n / 2])
        };
        let top = scores[n - 1];
        let bar = median.max(cfg.alpha);
        let passed: Vec<(u32, Tally)> = live.iter().copied().filter(|(_, t)| t.score(cfg.use_depth) > bar).collect();
        live = if !passed.is_empty() {
            passed
        } else if top > cfg.alpha {
            live.into_iter()
                .filter(|(_, t)| t.score(cfg.use_depth) == top)
                .take(n.div_ceil(2))
                .collect()
        } else {
            Vec::new()
        };
        res.survivors_per_stage.push(live.len());
    }

    if let [(id, tally)] = live.as_mut_slice() {
        let t = lookup(store, *id);
        for chunk in &plan.chunks[next..] {
            res.comparisons += accumulate(window, t, chunk, cfg, tally);
            res.chunk_evaluations += 1;
        }
    }
    res.winner = live
        .iter()
        .map(|(id, t)| Winner {
            template_id: *id,
            score: t.score(cfg.use_depth),
        })
        .reduce(|a, b| if b.score > a.score { b } else { a })
        .filter(|w| w.score > cfg.alpha);
    res
}

/// Exhaustive scoring of every candidate over the whole descriptor; the
/// argmax with ties to the lowest id. Also returns the comparisons made.
///
/// # Panics
/// If a candidate id is missing from `store`.
pub fn full_validate<S: FeatureSource + ?Sized>(
    window: &S,
    candidates: &[u32],
    store: &TemplateSet,
    cfg: &ValidationConfig,
) -> Option<(Winner, u64)> {
    let mut ids = candidates.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut ops = 0;
    let mut best: Option<Winner> = None;
    for id in ids {
        let t = lookup(store, id);
        let mut tally = Tally::default();
        let all: Vec<u32> = (0..t.descriptor.len() as u32).collect();
        ops += accumulate(window, t, &all, cfg, &mut tally);
        let score = tally.score(cfg.use_depth);
        if best.is_none_or(|b| score > b.score) {
            best = Some(Winner { template_id: id, score });
        }
    }
    best.map(|w| (w, ops))
}

/// Full score of a single template.
pub fn full_score<S: FeatureSource + ?Sized>(window: &S, t: &Template, cfg: &ValidationConfig) -> f64 {
    let all: Vec<u32> = (0..t.descriptor.len() as u32).collect();
    chunk_score(window, t, &all, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{DescriptorWithDepth, Layout, Modality, PoseSample, QuantizedValue};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q(v: u8) -> QuantizedValue {
        QuantizedValue::new(v).unwrap()
    }

    fn antipode(v: QuantizedValue) -> QuantizedValue {
        q((v.get() + 3) % 8 + 1)
    }

    fn no_depth() -> ValidationConfig {
        ValidationConfig {
            use_depth: false,
            ..Default::default()
        }
    }

    fn store(descriptors: Vec<Vec<QuantizedValue>>) -> TemplateSet {
        let n = descriptors[0].len();
        let layout = Layout::grid(n as u16, 1, 1, vec![Modality::Hue]).unwrap();
        let ts = descriptors
            .into_iter()
            .enumerate()
            .map(|(i, d)| Template {
                id: i as u32,
                object_id: 0,
                pose: PoseSample::IDENTITY,
                fg_mask: vec![true; d.len()],
                depth: vec![700.0; d.len()],
                descriptor: d,
            })
            .collect();
        TemplateSet::new(layout, ts).unwrap()
    }

    fn random_descriptor(rng: &mut ChaCha8Rng, n: usize) -> Vec<QuantizedValue> {
        (0..n).map(|_| q(rng.gen_range(1..=8))).collect()
    }

    #[test]
    fn plan_examples() {
        let p = chunk_plan(8, 4, 1);
        assert_eq!(p.chunks.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4]);
        let mut all: Vec<u32> = p.chunks.concat();
        all.sort_unstable();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
        let p = chunk_plan(10, 4, 1);
        assert_eq!(p.chunks.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(chunk_plan(100, 7, 3), chunk_plan(100, 7, 3));
    }

    #[test]
    fn chunk_score_examples() {
        let s = store(vec![(1..=8).map(q).collect()]);
        let t = s.get(0).unwrap();
        let chunk: Vec<u32> = (0..8).collect();
        let exact = DescriptorWithDepth { values: &t.descriptor, depth: &t.depth };
        assert_eq!(chunk_score(&exact, t, &chunk, &ValidationConfig::default()), 1.0);
        let anti: Vec<QuantizedValue> = t.descriptor.iter().map(|&v| antipode(v)).collect();
        assert_eq!(chunk_score(&anti, t, &chunk, &no_depth()), 0.0);
        let half: Vec<QuantizedValue> =
            t.descriptor.iter().enumerate().map(|(i, &v)| if i % 2 == 0 { antipode(v) } else { v }).collect();
        assert_eq!(chunk_score(&half, t, &chunk, &no_depth()), 0.5);

        let mut bg = t.clone();
        bg.fg_mask = vec![false; 8];
        assert_eq!(chunk_score(&half, &bg, &chunk, &no_depth()), 0.5);
    }

    #[test]
    fn depth_term_is_blended() {
        let s = store(vec![(1..=4).map(q).collect()]);
        let t = s.get(0).unwrap();
        let depth = [715.0f32; 4];
        let w = DescriptorWithDepth { values: &t.descriptor, depth: &depth };
        // feature term 1, depth term 1 - 15/30
        assert_abs_diff_eq!(full_score(&w, t, &ValidationConfig::default()), 0.75);
    }

    #[test]
    fn singleton_wins_and_low_scores_lose() {
        let s = store(vec![(1..=8).map(q).collect()]);
        let plan = chunk_plan(8, 2, 0);
        let r = preemptive_validate(&s.get(0).unwrap().descriptor, &[0], &s, &plan, &no_depth());
        assert_eq!(r.winner.unwrap().template_id, 0);
        assert!(r.stages_run <= plan.len());
        assert_eq!(r.chunk_evaluations, plan.len() as u64);

        let anti: Vec<QuantizedValue> = s.get(0).unwrap().descriptor.iter().map(|&v| antipode(v)).collect();
        let s2 = store(vec![s.get(0).unwrap().descriptor.clone(); 3]);
        let r = preemptive_validate(&anti, &[0, 1, 2], &s2, &plan, &no_depth());
        assert!(r.winner.is_none());
        assert_eq!(r.survivors_per_stage, vec![0]);
    }

    #[test]
    fn planted_match_among_mediocre_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 256;
        let query = random_descriptor(&mut rng, n);
        let mut ds: Vec<Vec<QuantizedValue>> = (0..16)
            .map(|_| {
                query
                    .iter()
                    .map(|&v| if rng.gen_bool(0.3) { q(rng.gen_range(1..=8)) } else { v })
                    .collect()
            })
            .collect();
        ds.insert(7, query.clone());
        let s = store(ds);
        let ids: Vec<u32> = (0..17).collect();
        let plan = chunk_plan(n, 16, 2);
        let r = preemptive_validate(&query, &ids, &s, &plan, &no_depth());
        for (k, &left) in r.survivors_per_stage.iter().enumerate() {
            assert!(left <= 16usize.div_ceil(1 << (k + 1)) + 1);
        }
        assert_eq!(r.winner.unwrap().template_id, 7);
        let (full, ops) = full_validate(&query, &ids, &s, &no_depth()).unwrap();
        assert_eq!(full.template_id, 7);
        assert_eq!(full.score, 1.0);
        assert!(r.comparisons < ops);
    }

    #[test]
    fn full_validate_ties_to_lowest_id() {
        let d: Vec<QuantizedValue> = (1..=8).map(q).collect();
        let s = store(vec![vec![q(1); 8], d.clone(), d.clone()]);
        let (w, _) = full_validate(&d, &[2, 1, 0], &s, &no_depth()).unwrap();
        assert_eq!(w.template_id, 1);
    }

    #[test]
    fn full_validate_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ds: Vec<Vec<QuantizedValue>> = (0..50).map(|_| random_descriptor(&mut rng, 40)).collect();
        let mut s = store(ds);
        let query = random_descriptor(&mut rng, 40);
        let ids: Vec<u32> = (0..50).collect();
        let templates: Vec<Template> = s
            .templates()
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.fg_mask = (0..40).map(|i| !(i + t.id as usize).is_multiple_of(3)).collect();
                t
            })
            .collect();
        s = TemplateSet::new(s.layout().clone(), templates).unwrap();
        let (w, _) = full_validate(&query, &ids, &s, &no_depth()).unwrap();
        let mut best = (0u32, -1.0f64);
        for t in s.templates() {
            let mut num = 0.0;
            let mut den = 0.0;
            for ((&fg, tv), qv) in t.fg_mask.iter().zip(&t.descriptor).zip(&query) {
                if fg {
                    let d = (tv.get() as i32 - qv.get() as i32).abs();
                    num += d.min(8 - d) as f64;
                    den += 4.0;
                }
            }
            let sc = 1.0 - num / den;
            if sc > best.1 {
                best = (t.id, sc);
            }
        }
        assert_eq!(w.template_id, best.0);
        assert_abs_diff_eq!(w.score, best.1, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn survivors_halve_and_order_is_irrelevant(seed in 0u64..1000, n in 2usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let query = random_descriptor(&mut rng, 96);
            let ds: Vec<Vec<QuantizedValue>> = (0..n)
                .map(|_| query.iter().map(|&v| if rng.gen_bool(0.25) { q(rng.gen_range(1..=8)) } else { v }).collect())
                .collect();
            let s = store(ds);
            let mut ids: Vec<u32> = (0..n as u32).collect();
            let plan = chunk_plan(96, 8, seed);
            let cfg = ValidationConfig { alpha: 0.0, ..no_depth() };
            let r = preemptive_validate(&query, &ids, &s, &plan, &cfg);
            for (k, &left) in r.survivors_per_stage.iter().enumerate() {
                prop_assert!(left <= n.div_ceil(1 << (k + 1)));
            }
            prop_assert!(r.stages_run <= (n as f64).log2().ceil() as usize + 1);
            prop_assert!(r.chunk_evaluations <= (n * plan.len()) as u64);
            ids.reverse();
            let r2 = preemptive_validate(&query, &ids, &s, &plan, &cfg);
            prop_assert_eq!(r.winner, r2.winner);
        }
    }
}
