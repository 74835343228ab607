use serde::{Deserialize, Serialize};

use super::QueryCost;
use crate::features::{dim_distance, FeatureSource, QuantizedValue, Template, BINS};

/// Exemplar split: the distance between a query's selected coordinates and
/// those of an exemplar template, compared with `tau`, with a fuzzy band of
/// half-width `fuzzy_margin` around the threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub selector: Vec<u32>,
    pub exemplar: Vec<QuantizedValue>,
    pub tau: f64,
    pub fuzzy_margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    LeftOnly,
    RightOnly,
    Both,
}

impl Route {
    pub fn goes_left(self) -> bool {
        matches!(self, Route::LeftOnly | Route::Both)
    }

    pub fn goes_right(self) -> bool {
        matches!(self, Route::RightOnly | Route::Both)
    }
}

pub fn split_margin<S: FeatureSource + ?Sized>(v: &S, p: &SplitParams) -> f64 {
    split_margin_counted(v, p, &mut QueryCost::default())
}

pub(crate) fn split_margin_counted<S: FeatureSource + ?Sized>(v: &S, p: &SplitParams, cost: &mut QueryCost) -> f64 {
    let d: u32 = p
        .selector
        .iter()
        .zip(&p.exemplar)
        .map(|(&c, &e)| dim_distance(e, v.value(c as usize)) as u32)
        .sum();
    cost.split_comparisons += p.selector.len() as u64;
    d as f64 - p.tau
}

pub fn route_for_margin(margin: f64, fuzzy_margin: f64) -> Route {
    if margin < -fuzzy_margin {
        Route::LeftOnly
    } else if margin > fuzzy_margin {
        Route::RightOnly
    } else {
        Route::Both
    }
}

/// Training-time routing: vectors inside the fuzzy band go to both children.
pub fn route<S: FeatureSource + ?Sized>(v: &S, p: &SplitParams) -> Route {
    route_for_margin(split_margin(v, p), p.fuzzy_margin)
}

/// Test-time routing never duplicates a query; inside the fuzzy band it
/// follows the side of the threshold it lies on, ties going left.
pub(crate) fn test_time_left(margin: f64, fuzzy_margin: f64) -> bool {
    match route_for_margin(margin, fuzzy_margin) {
        Route::LeftOnly => true,
        Route::RightOnly => false,
        Route::Both => margin <= 0.0,
    }
}

/// Empirical density of each value in `1..=8` over the selected
/// coordinates of a template set. Missing values count towards the
/// denominator but have no bin, so densities may sum to less than one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueHistogram {
    density: [f64; BINS as usize],
}

impl ValueHistogram {
    pub fn from_counts(counts: &[u32; 9], total: u64) -> Self {
        let mut density = [0.0; BINS as usize];
        if total > 0 {
            for (i, d) in density.iter_mut().enumerate() {
                *d = counts[i + 1] as f64 / total as f64;
            }
        }
        ValueHistogram { density }
    }

    /// Density of `value`; zero for the missing value.
    pub fn get(&self, value: u8) -> f64 {
        match value {
            1..=BINS => self.density[value as usize - 1],
            _ => 0.0,
        }
    }

    pub fn densities(&self) -> &[f64; BINS as usize] {
        &self.density
    }

    /// `-sum D log D` over the nonzero densities, natural log.
    pub fn entropy(&self) -> f64 {
        self.density
            .iter()
            .filter(|&&d| d > 0.0)
            .map(|&d| -d * d.ln())
            .sum()
    }
}

pub(crate) fn value_counts<'a>(templates: impl IntoIterator<Item = &'a Template>, selector: &[u32]) -> ([u32; 9], u64) {
    let mut counts = [0u32; 9];
    let mut total = 0u64;
    for t in templates {
        for &c in selector {
            counts[t.descriptor[c as usize].get() as usize] += 1;
            total += 1;
        }
    }
    (counts, total)
}

pub(crate) fn entropy_of_counts(counts: &[u32; 9], total: u64) -> f64 {
    ValueHistogram::from_counts(counts, total).entropy()
}

pub fn node_distribution(templates: &[&Template], selector: &[u32]) -> ValueHistogram {
    let (counts, total) = value_counts(templates.iter().copied(), selector);
    ValueHistogram::from_counts(&counts, total)
}

pub fn entropy(templates: &[&Template], selector: &[u32]) -> f64 {
    node_distribution(templates, selector).entropy()
}

/// Foreground-weighted information gain of a split.
///
/// The weight counts, over every template, the selected coordinates that lie
/// on the object. Templates inside the fuzzy band count in both children.
/// A split that sends the whole set to either child separates nothing and
/// scores zero.
pub fn split_energy(templates: &[&Template], p: &SplitParams) -> f64 {
    let routes: Vec<Route> = templates.iter().map(|t| route(t.descriptor.as_slice(), p)).collect();
    energy_with_routes(templates, &p.selector, &routes)
}

pub(crate) fn energy_with_routes(templates: &[&Template], selector: &[u32], routes: &[Route]) -> f64 {
    let n = templates.len();
    if n == 0 {
        return 0.0;
    }
    let n_left = routes.iter().filter(|r| r.goes_left()).count();
    let n_right = routes.iter().filter(|r| r.goes_right()).count();
    if n_left == n || n_right == n {
        return 0.0;
    }
    let weight: u64 = templates
        .iter()
        .map(|t| selector.iter().filter(|&&c| t.fg_mask[c as usize]).count() as u64)
        .sum();
    if weight == 0 {
        return 0.0;
    }
    let (all, all_total) = value_counts(templates.iter().copied(), selector);
    let (left, left_total) = value_counts(
        templates.iter().zip(routes).filter(|(_, r)| r.goes_left()).map(|(t, _)| *t),
        selector,
    );
    let (right, right_total) = value_counts(
        templates.iter().zip(routes).filter(|(_, r)| r.goes_right()).map(|(t, _)| *t),
        selector,
    );
    let gain = entropy_of_counts(&all, all_total)
        - (n_left as f64 * entropy_of_counts(&left, left_total)
            + n_right as f64 * entropy_of_counts(&right, right_total))
            / n as f64;
    weight as f64 * gain
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::PoseSample;
    use approx::assert_abs_diff_eq;

    fn q(v: u8) -> QuantizedValue {
        QuantizedValue::new(v).unwrap()
    }

    fn template(id: u32, values: &[u8], fg: &[bool]) -> Template {
        Template {
            id,
            object_id: 0,
            pose: PoseSample::IDENTITY,
            descriptor: values.iter().map(|&v| q(v)).collect(),
            fg_mask: fg.to_vec(),
            depth: vec![0.0; values.len()],
        }
    }

    fn params(exemplar: &[u8], tau: f64, xi: f64) -> SplitParams {
        SplitParams {
            selector: (0..exemplar.len() as u32).collect(),
            exemplar: exemplar.iter().map(|&v| q(v)).collect(),
            tau,
            fuzzy_margin: xi,
        }
    }

    #[test]
    fn margin_examples() {
        let p = params(&[2, 5, 7], 3.0, 0.0);
        assert_eq!(split_margin(&[q(2), q(5), q(7)][..], &p), -3.0);
        // distances (1, 4, 0) sum to 5
        let p2 = params(&[2, 5, 7], 2.0, 0.0);
        let v = [q(3), q(0), q(7)];
        let oracle: u32 = (0..3).map(|i| dim_distance(p2.exemplar[i], v[i]) as u32).sum();
        assert_eq!(oracle, 5);
        assert_eq!(split_margin(&v[..], &p2), 3.0);
        let p3 = params(&[2, 5, 7], 5.0, 0.0);
        assert_eq!(split_margin(&v[..], &p3), 0.0);
    }

    #[test]
    fn route_examples() {
        assert_eq!(route_for_margin(-5.0, 1.0), Route::LeftOnly);
        assert_eq!(route_for_margin(0.0, 0.0), Route::Both);
        assert_eq!(route_for_margin(0.5, 1.0), Route::Both);
        assert_eq!(route_for_margin(1.5, 1.0), Route::RightOnly);
        assert!(test_time_left(0.0, 1.0));
        assert!(!test_time_left(0.5, 1.0));
    }

    #[test]
    fn distribution_examples() {
        let a = template(0, &[5, 5], &[true, true]);
        let b = template(1, &[5, 5], &[true, true]);
        let d = node_distribution(&[&a, &b], &[0, 1]);
        assert_eq!(d.get(5), 1.0);
        assert_eq!(d.entropy(), 0.0);

        let u: Vec<Template> = (0..8).map(|i| template(i, &[i as u8 + 1], &[true])).collect();
        let refs: Vec<&Template> = u.iter().collect();
        let d = node_distribution(&refs, &[0]);
        for v in 1..=8 {
            assert_abs_diff_eq!(d.get(v), 0.125);
        }
        assert_abs_diff_eq!(d.entropy(), 8f64.ln(), epsilon = 1e-12);

        let a = template(0, &[3, 3], &[true, true]);
        let b = template(1, &[3, 7], &[true, true]);
        let d = node_distribution(&[&a, &b], &[0, 1]);
        assert_eq!(d.get(3), 0.75);
        assert_eq!(d.get(7), 0.25);
        let oracle = -0.75 * 0.75f64.ln() - 0.25 * 0.25f64.ln();
        assert_abs_diff_eq!(d.entropy(), oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(d.entropy(), 0.5623, epsilon = 1e-4);
    }

    #[test]
    fn missing_values_count_in_denominator_only() {
        let a = template(0, &[0, 4], &[true, true]);
        let d = node_distribution(&[&a], &[0, 1]);
        assert_eq!(d.get(4), 0.5);
        assert_eq!(d.get(0), 0.0);
    }

    #[test]
    fn energy_zero_cases() {
        let ts: Vec<Template> = (0..4).map(|i| template(i, &[i as u8 + 1, 1], &[true, true])).collect();
        let refs: Vec<&Template> = ts.iter().collect();
        // huge fuzzy band: everything goes both ways
        assert_eq!(split_energy(&refs, &params(&[1, 1], 2.0, 100.0)), 0.0);
        let bg: Vec<Template> = (0..4).map(|i| template(i, &[i as u8 + 1, 1], &[false, false])).collect();
        let bg_refs: Vec<&Template> = bg.iter().collect();
        assert_eq!(split_energy(&bg_refs, &params(&[1, 1], 1.5, 0.0)), 0.0);
        assert!(split_energy(&refs, &params(&[1, 1], 1.5, 0.0)) > 0.0);
    }
}
