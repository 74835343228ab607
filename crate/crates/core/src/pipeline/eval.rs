use serde::{Deserialize, Serialize};

use super::Detection;
use crate::synth::GroundTruth;

fn iou(a: (usize, usize), b: (usize, usize), size: (usize, usize)) -> f64 {
    let ix = (a.0 + size.0).min(b.0 + size.0).saturating_sub(a.0.max(b.0));
    let iy = (a.1 + size.1).min(b.1 + size.1).saturating_sub(a.1.max(b.1));
    let inter = (ix * iy) as f64;
    let area = (size.0 * size.1) as f64;
    inter / (2.0 * area - inter)
}

/// Greedy non-maximum suppression over equally sized windows. Detections are
/// taken by descending score (ties by template id, then position) and any
/// whose IoU with an accepted one exceeds `overlap` is dropped.
pub fn nms(mut dets: Vec<Detection>, size: (usize, usize), overlap: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.template_id.cmp(&b.template_id))
            .then((a.y, a.x).cmp(&(b.y, b.x)))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept.iter().all(|k| iou((k.x, k.y), (d.x, d.y), size) <= overlap) {
            kept.push(d);
        }
    }
    kept
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalCriterion {
    pub k_m: f64,
    /// Largest patch side of the templates, in pixels.
    pub reference_extent: f64,
    pub pose_tolerance: f64,
}

impl Default for EvalCriterion {
    fn default() -> Self {
        EvalCriterion {
            k_m: 0.1,
            reference_extent: 32.0,
            pose_tolerance: 15.0,
        }
    }
}

impl EvalCriterion {
    /// Windows share one size, so centre distance equals corner distance.
    pub fn is_correct(&self, d: &Detection, gt: &GroundTruth) -> bool {
        let dx = d.x as f64 - gt.x as f64;
        let dy = d.y as f64 - gt.y as f64;
        d.object_id == gt.object_id
            && dx.hypot(dy) <= self.k_m * self.reference_extent
            && d.pose.max_angle_error(&gt.pose) <= self.pose_tolerance
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub detections: usize,
    pub ground_truth: usize,
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
    /// `tp / (tp + fp + fn)`.
    pub accuracy: f64,
    /// Set when there were no detections and precision was reported as 1.
    pub precision_undefined: bool,
}

/// One-to-one greedy matching by descending score. Each detection takes the
/// closest still unmatched ground truth it is correct for.
pub fn evaluate(dets: &[Detection], gt: &[GroundTruth], crit: &EvalCriterion) -> Metrics {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.template_id.cmp(&b.template_id)));
    let mut used = vec![false; gt.len()];
    let mut tp = 0;
    for d in order {
        let best = gt
            .iter()
            .enumerate()
            .filter(|(i, g)| !used[*i] && crit.is_correct(d, g))
            .min_by(|(_, a), (_, b)| {
                let da = (d.x as f64 - a.x as f64).hypot(d.y as f64 - a.y as f64);
                let db = (d.x as f64 - b.x as f64).hypot(d.y as f64 - b.y as f64);
                da.total_cmp(&db)
            })
            .map(|(i, _)| i);
        if let Some(i) = best {
            used[i] = true;
            tp += 1;
        }
    }
    let (n_det, n_gt) = (dets.len(), gt.len());
    let errors = (n_det - tp) + (n_gt - tp);
    Metrics {
        detections: n_det,
        ground_truth: n_gt,
        true_positives: tp,
        precision: if n_det == 0 { 1.0 } else { tp as f64 / n_det as f64 },
        recall: if n_gt == 0 { 1.0 } else { tp as f64 / n_gt as f64 },
        accuracy: if tp + errors == 0 { 1.0 } else { tp as f64 / (tp + errors) as f64 },
        precision_undefined: n_det == 0,
    }
}
