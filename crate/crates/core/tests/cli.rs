use std::path::Path;
use std::process::{Command, Output};

const MIN: &str = r#"
seed = 21
[dataset.poses]
yaw = { count = 4, min = -30.0, max = 30.0 }
pitch = { count = 2, min = 0.0, max = 20.0 }
roll = { count = 2, min = 0.0, max = 90.0 }
scale = { count = 1, min = 1.0, max = 1.0 }
"#;

fn tm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmforest")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn gen(dir: &Path, cfg_text: &str) -> std::path::PathBuf {
    let cfg = write_cfg(dir, "cfg.toml", cfg_text);
    let out = dir.join("data");
    let o = tm(&["gen", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn minimal_gen_writes_three_files_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = gen(a.path(), MIN);
    let db = gen(b.path(), MIN);
    let mut names: Vec<String> = std::fs::read_dir(&da)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["scene_000.fmap", "scene_000.gt.jsonl", "templates.tpl"]);
    for n in &names {
        assert_eq!(std::fs::read(da.join(n)).unwrap(), std::fs::read(db.join(n)).unwrap(), "{n}");
    }
    // The configuration snapshot travels with the data.
    let o = tm(&["inspect", s(&da.join("templates.tpl"))]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["kind"], "templates");
    assert_eq!(v["templates"], 16);
    assert!(v["header"]["config"].as_str().unwrap().contains("seed = 21"));
}

#[test]
fn seed_flag_changes_output() {
    let a = tempfile::tempdir().unwrap();
    let cfg = write_cfg(a.path(), "cfg.toml", MIN);
    let d1 = a.path().join("x");
    let d2 = a.path().join("y");
    assert_eq!(code(&tm(&["gen", "--config", &cfg, "--out", s(&d1)])), 0);
    assert_eq!(code(&tm(&["--seed", "22", "gen", "--config", &cfg, "--out", s(&d2)])), 0);
    assert_ne!(
        std::fs::read(d1.join("templates.tpl")).unwrap(),
        std::fs::read(d2.join("templates.tpl")).unwrap()
    );
}

#[test]
fn train_and_detect_round_trip() {
    let a = tempfile::tempdir().unwrap();
    let d = gen(a.path(), MIN);
    let forest = a.path().join("f.tfo");
    let o = tm(&["train", "--templates", s(&d.join("templates.tpl")), "--out", s(&forest)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("tree ")).count(), 5);
    assert!(text.contains("depth histogram"));

    let pgm = a.path().join("r.pgm");
    let trace = a.path().join("t.jsonl");
    let (scene, tpl) = (d.join("scene_000.fmap"), d.join("templates.tpl"));
    let args = [
        "detect",
        "--scene",
        s(&scene),
        "--forest",
        s(&forest),
        "--templates",
        s(&tpl),
        "--trace",
        s(&trace),
        "--reject-map",
        s(&pgm),
    ];
    let o = tm(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = String::from_utf8(o.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines[0]["tool"].as_str().unwrap().starts_with("tmforest"));
    assert!(lines.len() >= 2, "expected detections");
    let gt: Vec<serde_json::Value> = std::fs::read_to_string(d.join("scene_000.gt.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    // Every ground-truth object is found within a pixel.
    for g in &gt {
        assert!(
            lines[1..].iter().any(|det| {
                (det["x"].as_i64().unwrap() - g["x"].as_i64().unwrap()).abs() <= 1
                    && (det["y"].as_i64().unwrap() - g["y"].as_i64().unwrap()).abs() <= 1
            }),
            "missed {g}"
        );
    }
    let pgm_bytes = std::fs::read(&pgm).unwrap();
    assert!(pgm_bytes.starts_with(b"P5\n"));
    assert!(std::fs::read_to_string(&trace).unwrap().lines().count() > 0);

    // Thread count does not change the output.
    let mut single = vec!["--threads", "1"];
    single.extend_from_slice(&args);
    assert_eq!(tm(&single).stdout, o.stdout);
}

#[test]
fn config_errors_exit_2() {
    let a = tempfile::tempdir().unwrap();
    let bad = write_cfg(a.path(), "bad.toml", "seed = 1\nunknown_key = 3\n");
    let o = tm(&["gen", "--config", &bad, "--out", s(&a.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("unknown_key"), "{}", stderr(&o));

    let zero = write_cfg(a.path(), "zero.toml", "[forest]\ntrees = 0\n");
    assert_eq!(code(&tm(&["gen", "--config", &zero, "--out", s(&a.path().join("o"))])), 2);

    // Overlapping placements: the message names the scene.
    let overlap = format!(
        "{MIN}\n[[dataset.scenes]]\nname = \"crowded\"\n\
         [[dataset.scenes.placed]]\nobject_id = 0\nx = 10\ny = 10\npose = {{ yaw = 0.0, pitch = 0.0, roll = 0.0, scale = 1.0 }}\n\
         [[dataset.scenes.placed]]\nobject_id = 0\nx = 20\ny = 20\npose = {{ yaw = 0.0, pitch = 0.0, roll = 0.0, scale = 1.0 }}\n"
    );
    let ov = write_cfg(a.path(), "overlap.toml", &overlap);
    let o = tm(&["gen", "--config", &ov, "--out", s(&a.path().join("o2"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("crowded"), "{}", stderr(&o));

    assert_eq!(code(&tm(&["no-such-command"])), 2);
    assert_eq!(code(&tm(&["--threads", "0", "inspect", "x"])), 2);
    assert_eq!(code(&tm(&["--help"])), 0);
}

#[test]
fn data_errors_exit_3() {
    let a = tempfile::tempdir().unwrap();
    let d = gen(a.path(), MIN);
    let tpl = d.join("templates.tpl");
    // Wrong container kind.
    let o = tm(&["train", "--templates", s(&d.join("scene_000.fmap")), "--out", s(&a.path().join("f"))]);
    assert_eq!(code(&o), 3);
    // Truncated container.
    let bytes = std::fs::read(&tpl).unwrap();
    let cut = a.path().join("cut.tpl");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(code(&tm(&["inspect", s(&cut)])), 3);
    // Missing file.
    assert_eq!(code(&tm(&["inspect", s(&a.path().join("absent"))])), 3);
    // Garbage.
    let junk = a.path().join("junk");
    std::fs::write(&junk, b"hello world").unwrap();
    let o = tm(&["inspect", s(&junk)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn compatibility_errors_exit_4() {
    let a = tempfile::tempdir().unwrap();
    let d = gen(a.path(), MIN);
    let tpl = d.join("templates.tpl");
    // Future format version.
    let mut bytes = std::fs::read(&tpl).unwrap();
    bytes[4] = 2;
    let v2 = a.path().join("v2.tpl");
    std::fs::write(&v2, &bytes).unwrap();
    assert_eq!(code(&tm(&["inspect", s(&v2)])), 4);

    // Forest trained on a different patch size cannot serve these templates.
    let small = a.path().join("small");
    std::fs::create_dir(&small).unwrap();
    let ds = gen(&small, &format!("{MIN}\n[dataset.templates]\npatch = 24\n"));
    let forest = a.path().join("f24.tfo");
    assert_eq!(code(&tm(&["train", "--templates", s(&ds.join("templates.tpl")), "--out", s(&forest)])), 0);
    let o = tm(&[
        "detect",
        "--scene",
        s(&d.join("scene_000.fmap")),
        "--forest",
        s(&forest),
        "--templates",
        s(&tpl),
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn bench_writes_reports() {
    let a = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        a.path(),
        "b.toml",
        "[bench]\nsizes = [20, 40, 80]\nsweep_objects = 1\nqueries = 10\nscenes = 1\n",
    );
    let out = a.path().join("bench");
    let o = tm(&["bench", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 4);
    assert!(sweep.starts_with("templates,trees"));
    assert_eq!(std::fs::read_to_string(out.join("suite.csv")).unwrap().lines().count(), 3);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("bench.json")).unwrap()).unwrap();
    assert!(report["sweep"]["forest_slope"].is_number());
    assert_eq!(report["suite"]["summary"].as_array().unwrap().len(), 2);
    // Exhaustive comparisons equal the summed foreground size of the set.
    for row in report["sweep"]["rows"].as_array().unwrap() {
        let exh = row["exhaustive_comparisons"].as_f64().unwrap();
        let fg = row["foreground_dims"].as_f64().unwrap();
        assert!((exh - fg).abs() <= 0.01 * fg, "{exh} vs {fg}");
    }
}
