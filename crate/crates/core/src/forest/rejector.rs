use serde::{Deserialize, Serialize};

use super::split::{ValueHistogram, Route, SplitParams};
use super::QueryCost;
use crate::features::{FeatureSource, Template, BINS};

/// Which quantity the rejector minimises when choosing its coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectorObjective {
    /// Foreground entropy of the coordinate.
    #[default]
    Entropy,
    /// Information gain of the coordinate under the node's chosen split;
    /// nodes without a split fall back to entropy.
    InformationGain,
}

/// Preemptive background rejector.
///
/// `known[i]` is a bit set over the values `1..=8` seen with density above
/// `density_floor` at `selector[i]` among the node's foreground samples. A
/// query is rejected when the share of its selected values that are known
/// falls below `accept_floor`. An empty selector never rejects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectorParams {
    pub selector: Vec<u32>,
    pub known: Vec<u8>,
    pub accept_floor: f64,
    pub density_floor: f64,
}

impl RejectorParams {
    pub fn always_accept(accept_floor: f64, density_floor: f64) -> Self {
        RejectorParams {
            selector: Vec::new(),
            known: Vec::new(),
            accept_floor,
            density_floor,
        }
    }

    pub fn is_always_accept(&self) -> bool {
        self.selector.is_empty()
    }

    #[inline]
    pub fn is_known(&self, row: usize, value: u8) -> bool {
        value != 0 && value <= BINS && self.known[row] & (1 << (value - 1)) != 0
    }

    /// Share of the selected coordinates of `v` holding a known value.
    pub fn known_fraction<S: FeatureSource + ?Sized>(&self, v: &S) -> f64 {
        if self.selector.is_empty() {
            return 1.0;
        }
        let known = self
            .selector
            .iter()
            .enumerate()
            .filter(|(row, &c)| self.is_known(*row, v.value(c as usize).get()))
            .count();
        known as f64 / self.selector.len() as f64
    }
}

/// Known-value row for one coordinate: bit `i - 1` set iff `D(i) > rho`.
pub fn known_row(hist: &ValueHistogram, density_floor: f64) -> u8 {
    (1..=BINS)
        .filter(|&v| hist.get(v) > density_floor)
        .fold(0u8, |bits, v| bits | 1 << (v - 1))
}

/// Value distribution at `coord` over the templates where it is foreground.
/// Returns `None` when no template has it on the object.
pub fn foreground_distribution(templates: &[&Template], coord: u32) -> Option<ValueHistogram> {
    let mut counts = [0u32; 9];
    let mut total = 0u64;
    for t in templates {
        if t.fg_mask[coord as usize] {
            counts[t.descriptor[coord as usize].get() as usize] += 1;
            total += 1;
        }
    }
    (total > 0).then(|| ValueHistogram::from_counts(&counts, total))
}

pub fn reject<S: FeatureSource + ?Sized>(v: &S, r: &RejectorParams) -> bool {
    reject_counted(v, r, &mut QueryCost::default())
}

pub(crate) fn reject_counted<S: FeatureSource + ?Sized>(v: &S, r: &RejectorParams, cost: &mut QueryCost) -> bool {
    if r.selector.is_empty() {
        return false;
    }
    cost.rejector_lookups += r.selector.len() as u64;
    r.known_fraction(v) < r.accept_floor
}

/// Train a node's rejector from the coordinates of its candidate selector
/// pool.
///
/// Only coordinates on which every template of the node holds a known value
/// are eligible, so the rejector accepts its whole training set. Eligible
/// coordinates are ranked by the objective (lowest first, then fewest known
/// values, then pool order) and the best `selector_len` of them form the
/// selector. Without any eligible coordinate the rejector accepts everything.
pub fn train_rejector(
    templates: &[&Template],
    pool: &[Vec<u32>],
    accept_floor: f64,
    density_floor: f64,
    objective: RejectorObjective,
    split: Option<(&SplitParams, &[Route])>,
) -> RejectorParams {
    let selector_len = pool.iter().map(Vec::len).max().unwrap_or(0);
    let mut seen = std::collections::HashSet::new();
    let coords: Vec<u32> = pool.iter().flatten().copied().filter(|c| seen.insert(*c)).collect();

    let mut ranked: Vec<(f64, u32, usize, u32, u8)> = Vec::new();
    for (order, &c) in coords.iter().enumerate() {
        let Some(hist) = foreground_distribution(templates, c) else {
            continue;
        };
        let row = known_row(&hist, density_floor);
        let supported = templates.iter().all(|t| {
            let v = t.descriptor[c as usize].get();
            v != 0 && row & (1 << (v - 1)) != 0
        });
        if !supported {
            continue;
        }
        let score = match (objective, split) {
            (RejectorObjective::InformationGain, Some((_, routes))) => {
                foreground_gain(templates, routes, c, &hist)
            }
            _ => hist.entropy(),
        };
        ranked.push((score, row.count_ones(), order, c, row));
    }
    if ranked.is_empty() || selector_len == 0 {
        return RejectorParams::always_accept(accept_floor, density_floor);
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    ranked.truncate(selector_len);
    RejectorParams {
        selector: ranked.iter().map(|r| r.3).collect(),
        known: ranked.iter().map(|r| r.4).collect(),
        accept_floor,
        density_floor,
    }
}

fn foreground_gain(templates: &[&Template], routes: &[Route], coord: u32, parent: &ValueHistogram) -> f64 {
    let n = templates.len() as f64;
    let side = |pick: fn(Route) -> bool| {
        let members: Vec<&Template> = templates
            .iter()
            .zip(routes)
            .filter(|(_, r)| pick(**r))
            .map(|(t, _)| *t)
            .collect();
        let h = foreground_distribution(&members, coord).map_or(0.0, |d| d.entropy());
        members.len() as f64 * h
    };
    parent.entropy() - (side(Route::goes_left) + side(Route::goes_right)) / n
}
