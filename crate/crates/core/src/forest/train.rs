use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::rejector::train_rejector;
use super::split::{energy_with_routes, route, Route, SplitParams};
use super::{Forest, ForestConfig, NodeBody, TreeNode};
use crate::error::{Error, Result};
use crate::features::{dim_distance, Template, TemplateSet};
use crate::rng::{self, tag};

struct Trainer<'a> {
    cfg: &'a ForestConfig,
    max_depth: usize,
    descriptor_len: usize,
}

/// Draw one candidate split: a random exemplar from `set`, `selector_len`
/// distinct coordinates on the exemplar's object (all coordinates when it has
/// too few) and a threshold uniform between the smallest and largest
/// exemplar distance over a subsample of the set.
fn sample_split(set: &[&Template], cfg: &ForestConfig, len: usize, rng: &mut ChaCha8Rng) -> SplitParams {
    let e = set[rng.gen_range(0..set.len())];
    let fg: Vec<u32> = (0..len as u32).filter(|&c| e.fg_mask[c as usize]).collect();
    let d = cfg.selector_len.min(len);
    let selector: Vec<u32> = if fg.len() >= d {
        index::sample(rng, fg.len(), d).into_iter().map(|i| fg[i]).collect()
    } else {
        index::sample(rng, len, d).into_iter().map(|i| i as u32).collect()
    };
    let exemplar: Vec<_> = selector.iter().map(|&c| e.descriptor[c as usize]).collect();

    let k = cfg.tau_subsample.clamp(1, set.len());
    let (mut lo, mut hi) = (u32::MAX, 0u32);
    for i in index::sample(rng, set.len(), k) {
        let t = set[i];
        let dist: u32 = selector
            .iter()
            .zip(&exemplar)
            .map(|(&c, &x)| dim_distance(x, t.descriptor[c as usize]) as u32)
            .sum();
        lo = lo.min(dist);
        hi = hi.max(dist);
    }
    let tau = if hi > lo { rng.gen_range(lo as f64..hi as f64) } else { lo as f64 };
    SplitParams {
        selector,
        exemplar,
        tau,
        fuzzy_margin: cfg.fuzzy_margin,
    }
}

impl Trainer<'_> {
    fn node(&self, set: Vec<&Template>, depth: usize, rng: &mut ChaCha8Rng) -> TreeNode {
        let leaf_only = set.len() <= self.cfg.min_leaf || depth >= self.max_depth;
        let mut cands: Vec<SplitParams> = Vec::new();
        let mut best: Option<(f64, usize, Vec<Route>)> = None;
        // Fuzzy duplicates can push every candidate's gain below zero; draw
        // further rounds before giving up on the node.
        for _ in 0..=self.cfg.extra_rounds {
            let start = cands.len();
            cands.extend((0..self.cfg.candidates).map(|_| sample_split(&set, self.cfg, self.descriptor_len, rng)));
            if leaf_only {
                break;
            }
            for (i, c) in cands.iter().enumerate().skip(start) {
                let routes: Vec<Route> = set.iter().map(|t| route(t.descriptor.as_slice(), c)).collect();
                let e = energy_with_routes(&set, &c.selector, &routes);
                if best.as_ref().is_none_or(|b| e > b.0) {
                    best = Some((e, i, routes));
                }
            }
            if best.as_ref().is_some_and(|b| b.0 > 0.0) {
                break;
            }
        }
        let pool: Vec<Vec<u32>> = cands.iter().map(|c| c.selector.clone()).collect();
        let ids = || {
            let mut v: Vec<u32> = set.iter().map(|t| t.id).collect();
            v.sort_unstable();
            v
        };

        if leaf_only {
            let r = train_rejector(
                &set,
                &pool,
                self.cfg.accept_floor,
                self.cfg.density_floor,
                self.cfg.rejector_objective,
                None,
            );
            return TreeNode::leaf(r, ids());
        }

        let (energy, bi, routes) = best.expect("at least one candidate");
        let rejector = train_rejector(
            &set,
            &pool,
            self.cfg.accept_floor,
            self.cfg.density_floor,
            self.cfg.rejector_objective,
            (energy > 0.0).then_some((&cands[bi], routes.as_slice())),
        );
        if energy <= 0.0 {
            return TreeNode::leaf(rejector, ids());
        }
        let left: Vec<&Template> = set.iter().zip(&routes).filter(|(_, r)| r.goes_left()).map(|(t, _)| *t).collect();
        let right: Vec<&Template> = set.iter().zip(&routes).filter(|(_, r)| r.goes_right()).map(|(t, _)| *t).collect();
        TreeNode {
            rejector,
            body: NodeBody::Split {
                params: cands[bi].clone(),
                left: Box::new(self.node(left, depth + 1, rng)),
                right: Box::new(self.node(right, depth + 1, rng)),
            },
        }
    }
}

/// Grow one tree over every template of `set`.
pub fn train_tree(set: &TemplateSet, cfg: &ForestConfig, max_depth: usize, rng: &mut ChaCha8Rng) -> Result<TreeNode> {
    if set.is_empty() {
        return Err(Error::Data("cannot train on an empty template set".into()));
    }
    cfg.validate()?;
    let trainer = Trainer {
        cfg,
        max_depth,
        descriptor_len: set.layout().descriptor_len(),
    };
    Ok(trainer.node(set.templates().iter().collect(), 0, rng))
}

/// Train `cfg.trees` trees in parallel, tree `i` drawing from its own stream
/// of `seed`, so the result does not depend on the thread count.
pub fn train_forest(set: &TemplateSet, cfg: &ForestConfig, seed: u64) -> Result<Forest> {
    cfg.validate()?;
    let mut objects: Vec<u32> = set.templates().iter().map(|t| t.object_id).collect();
    objects.sort_unstable();
    objects.dedup();
    let max_depth = cfg.effective_max_depth(objects.len());
    let trees = (0..cfg.trees)
        .into_par_iter()
        .map(|i| train_tree(set, cfg, max_depth, &mut rng::stream(seed, tag::TREE, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest {
        layout: set.layout().clone(),
        template_count: set.len(),
        config: cfg.clone(),
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Layout, Modality, PoseSample, QuantizedValue};
    use crate::forest::{descend, QueryResult};
    use rand::SeedableRng;

    fn random_set(n: usize, len_locations: u16, seed: u64) -> TemplateSet {
        let layout = Layout::grid(len_locations, 1, 1, vec![Modality::ColourGradient]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let templates = (0..n as u32)
            .map(|id| Template {
                id,
                object_id: 0,
                pose: PoseSample::IDENTITY,
                descriptor: (0..len_locations).map(|_| QuantizedValue::new(rng.gen_range(1..=8)).unwrap()).collect(),
                fg_mask: vec![true; len_locations as usize],
                depth: vec![500.0; len_locations as usize],
            })
            .collect();
        TemplateSet::new(layout, templates).unwrap()
    }

    #[test]
    fn single_template_is_a_single_leaf() {
        let set = random_set(1, 16, 1);
        let f = train_forest(&set, &ForestConfig { trees: 2, ..Default::default() }, 3).unwrap();
        for t in &f.trees {
            assert_eq!(t.depth(), 0);
            assert_eq!(t.leaves()[0].1, &[0]);
        }
    }

    #[test]
    fn crisp_trees_partition_the_set() {
        let set = random_set(120, 24, 2);
        let cfg = ForestConfig { trees: 3, fuzzy_margin: 0.0, ..Default::default() };
        let f = train_forest(&set, &cfg, 5).unwrap();
        for t in &f.trees {
            let mut all: Vec<u32> = t.leaves().iter().flat_map(|(_, l)| l.iter().copied()).collect();
            all.sort_unstable();
            assert_eq!(all, (0..120).collect::<Vec<_>>());
            assert!(t.depth() <= 8);
        }
    }

    #[test]
    fn fuzzy_trees_keep_every_template_reachable() {
        let set = random_set(150, 24, 4);
        let f = train_forest(&set, &ForestConfig { trees: 2, ..Default::default() }, 9).unwrap();
        for tree in &f.trees {
            let total: usize = tree.leaves().iter().map(|(_, l)| l.len()).sum();
            assert!(total >= 150);
            for t in set.templates() {
                match descend(tree, t.descriptor.as_slice()) {
                    QueryResult::Candidates(c) => assert!(c.contains(&t.id)),
                    r => panic!("template {} got {r:?}", t.id),
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let set = random_set(60, 16, 7);
        let cfg = ForestConfig { trees: 3, ..Default::default() };
        assert_eq!(train_forest(&set, &cfg, 11).unwrap(), train_forest(&set, &cfg, 11).unwrap());
    }
}
