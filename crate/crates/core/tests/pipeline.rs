use std::sync::OnceLock;

use tmforest::config::RunConfig;
use tmforest::features::{FeatureMap, TemplateSet};
use tmforest::forest::{train_forest, Forest};
use tmforest::pipeline::{detect, evaluate, plan_for, DetectConfig, DetectOutput, WindowState};
use tmforest::synth::{build_template_set, compose_scene, Catalogue, GroundTruth, Placement, SceneSpec};

struct Setup {
    cfg: RunConfig,
    cat: Catalogue,
    set: TemplateSet,
    forest: Forest,
}

fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let cfg = RunConfig::default();
        let cat = cfg.catalogue().unwrap();
        let set = build_template_set(&cat.objects, &cfg.dataset.poses.poses(), &cfg.dataset.templates, cfg.seed).unwrap();
        let forest = train_forest(&set, &cfg.forest, cfg.seed).unwrap();
        Setup { cfg, cat, set, forest }
    })
}

fn place(template: u32, x: usize, y: usize) -> Placement {
    let t = &setup().set.templates()[template as usize];
    Placement {
        object_id: t.object_id,
        pose: t.pose,
        x,
        y,
        template_id: Some(template),
    }
}

fn scene(placed: Vec<Placement>, clutter: f64, noise: f64, seed: u64) -> (FeatureMap, Vec<GroundTruth>) {
    let spec = SceneSpec {
        name: "t".into(),
        width: 160,
        height: 120,
        placed,
        clutter_density: clutter,
        noise_rate: noise,
        occlusion_fraction: 0.0,
        far_band: 0.0,
        seed,
    };
    compose_scene(&spec, &setup().cat).unwrap()
}

fn run(map: &FeatureMap, cfg: &DetectConfig) -> DetectOutput {
    let s = setup();
    detect(map, &s.forest, &s.set, cfg, &plan_for(&s.set, cfg, s.cfg.seed)).unwrap()
}

#[test]
fn uniform_noise_scene_is_rejected() {
    let s = setup();
    let cfg = DetectConfig {
        pyramid: false,
        ..s.cfg.detect.clone()
    };
    let (map, _) = scene(vec![], 0.0, 1.0, 3);
    let out = run(&map, &cfg);
    assert!(out.detections.is_empty(), "{:?}", out.detections);
    let mut in_range = 0;
    let mut before_leaf = 0;
    for y in 0..out.grid.height {
        for x in 0..out.grid.width {
            if out.grid.get(x, y) == WindowState::OutOfRange {
                continue;
            }
            in_range += 1;
            let w = tmforest::features::WindowView::new(&map, s.set.layout(), x, y).unwrap();
            before_leaf += usize::from(s.forest.rejected_before_leaf(&w));
        }
    }
    assert!(before_leaf as f64 >= 0.9 * in_range as f64, "{before_leaf}/{in_range}");
}

#[test]
fn single_object_is_found_once() {
    let (map, gt) = scene(vec![place(100, 50, 40)], 0.0, 0.0, 4);
    let out = run(&map, &setup().cfg.detect);
    assert_eq!(out.detections.len(), 1, "{:?}", out.detections);
    let d = &out.detections[0];
    assert_eq!((d.x, d.y, d.template_id), (gt[0].x, gt[0].y, 100));
    assert!(d.score > setup().cfg.detect.validation.alpha);
    assert_eq!(out.grid.get(50, 40), WindowState::Validated);
    assert_eq!(out.grid.depths()[40 * out.grid.width + 50], -1);
}

#[test]
fn two_objects_are_both_correct() {
    let s = setup();
    let (map, gt) = scene(vec![place(17, 10, 20), place(230, 100, 70)], 0.0, 0.0, 5);
    let out = run(&map, &s.cfg.detect);
    let m = evaluate(&out.detections, &gt, &s.cfg.eval);
    assert_eq!(out.detections.len(), 2, "{:?}", out.detections);
    assert_eq!(m.true_positives, 2);
}

#[test]
fn cluttered_scenes_keep_recall_and_determinism() {
    let s = setup();
    let (map, gt) = scene(vec![place(40, 10, 10), place(200, 110, 70)], 0.5, 0.0, 6);
    let a = run(&map, &s.cfg.detect);
    let b = run(&map, &s.cfg.detect);
    assert_eq!(a.detections, b.detections);
    assert_eq!(a.grid, b.grid);
    assert_eq!(a.cost, b.cost);
    assert_eq!(evaluate(&a.detections, &gt, &s.cfg.eval).true_positives, 2);
    // The pyramid changes cost, not the objects found.
    let flat = run(&map, &DetectConfig { pyramid: false, ..s.cfg.detect.clone() });
    assert_eq!(evaluate(&flat.detections, &gt, &s.cfg.eval).true_positives, 2);
    assert!(a.cost.fine_windows < flat.cost.fine_windows);
}

#[test]
fn every_window_has_one_state() {
    let s = setup();
    let (map, _) = scene(vec![place(3, 60, 40)], 0.5, 0.05, 7);
    let out = run(&map, &s.cfg.detect);
    let (pw, ph) = s.set.layout().patch_size();
    assert_eq!(out.grid.states.len(), (160 - pw + 1) * (120 - ph + 1));
    assert_eq!(
        out.grid.rejected() + out.grid.states.iter().filter(|w| **w == WindowState::Validated).count(),
        out.grid.in_range()
    );
    let mut pgm = Vec::new();
    out.grid.write_pgm(&mut pgm, 8).unwrap();
    assert!(pgm.starts_with(format!("P5\n{} {}\n255\n", out.grid.width, out.grid.height).as_bytes()));
}

#[test]
fn far_scene_is_out_of_range() {
    let s = setup();
    let spec = SceneSpec {
        name: "far".into(),
        width: 96,
        height: 80,
        placed: vec![],
        clutter_density: 0.3,
        noise_rate: 0.0,
        occlusion_fraction: 0.0,
        far_band: 1.0,
        seed: 8,
    };
    let (map, _) = compose_scene(&spec, &s.cat).unwrap();
    let out = run(&map, &s.cfg.detect);
    assert_eq!(out.grid.in_range(), 0);
    assert!(out.detections.is_empty());
}

#[test]
fn small_scene_is_a_shape_error() {
    let s = setup();
    let map = FeatureMap::blank(20, 20, s.set.layout().modalities().to_vec(), true);
    let err = detect(&map, &s.forest, &s.set, &s.cfg.detect, &plan_for(&s.set, &s.cfg.detect, 0)).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}
