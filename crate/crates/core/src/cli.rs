//! Command-line front end. `run` holds all command logic so it can be driven
//! from tests; the binary only maps errors to exit codes.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::bench;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::forest::{train_forest, TreeStats};
use crate::io::{self, Header, TOOL_VERSION};
use crate::pipeline::{detect, plan_for};
use crate::synth::{build_template_set, compose_scene};

#[derive(Debug, Parser)]
#[command(name = "tmforest", version, about = "Fuzzy decision forest template matching")]
pub struct Cli {
    /// Override the master seed of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate templates, scenes and ground truth.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a forest on a template container.
    Train {
        #[arg(long)]
        templates: PathBuf,
        /// Defaults to the configuration embedded in the templates.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect templates in a scene; detections go to stdout as JSON lines.
    Detect {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        forest: PathBuf,
        #[arg(long)]
        templates: PathBuf,
        /// Defaults to the configuration embedded in the forest.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write one validation record per validated window.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the per-window rejection depth as a greymap.
        #[arg(long = "reject-map")]
        reject_map: Option<PathBuf>,
    },
    /// Run the template-count sweep and the tree-count scene suite.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
    /// Print the header and a summary of a container as JSON.
    Inspect { file: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    All,
    Sweep,
    Trees,
}

fn load_config(path: Option<&Path>, embedded: Option<&str>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match (path, embedded) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(text)) if !text.is_empty() => RunConfig::from_toml(text)?,
        _ => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    execute(&cli, stdout, stderr)
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    // Writers are not Send; buffer inside the pool and forward afterwards.
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let result = pool.install(|| dispatch(cli, &mut out, &mut err));
    let _ = stderr.write_all(&err);
    stdout.write_all(&out).map_err(out_err)?;
    result
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Gen { config, out } => {
            let cfg = load_config(config.as_deref(), None, cli.seed)?;
            cmd_gen(&cfg, out, stderr)
        }
        Command::Train { templates, config, out } => {
            let (set, h) = io::load_templates(templates)?;
            let cfg = load_config(config.as_deref(), Some(&h.config), cli.seed)?;
            let forest = train_forest(&set, &cfg.forest, cfg.seed)?;
            io::write_file(out, &io::encode_forest(&forest, &Header::new(cfg.snapshot())))?;
            for (i, s) in forest.stats().iter().enumerate() {
                writeln!(
                    stdout,
                    "tree {i}: depth {} nodes {} leaves {} leaf size min {} mean {:.2} max {} depth histogram {:?}",
                    s.depth, s.nodes, s.leaves, s.min_leaf_size, s.mean_leaf_size, s.max_leaf_size, s.depth_histogram
                )
                .map_err(out_err)?;
            }
            Ok(())
        }
        Command::Detect {
            scene,
            forest,
            templates,
            config,
            trace,
            reject_map,
        } => {
            let (map, _) = io::load_feature_map(scene)?;
            let (forest, fh) = io::load_forest(forest)?;
            let (set, _) = io::load_templates(templates)?;
            let cfg = load_config(config.as_deref(), Some(&fh.config), cli.seed)?;
            let plan = plan_for(&set, &cfg.detect, cfg.seed);
            let result = detect(&map, &forest, &set, &cfg.detect, &plan)?;
            let meta = json!({
                "tool": TOOL_VERSION,
                "config": cfg.snapshot(),
                "detections": result.detections.len(),
                "rejection_fraction": result.grid.rejection_fraction(),
                "cost": result.cost,
            });
            writeln!(stdout, "{meta}").map_err(out_err)?;
            for d in &result.detections {
                writeln!(stdout, "{}", serde_json::to_string(d).expect("detection serializes")).map_err(out_err)?;
            }
            if let Some(path) = trace {
                let text: String = result
                    .traces
                    .iter()
                    .map(|t| serde_json::to_string(t).expect("trace serializes") + "\n")
                    .collect();
                io::write_file(path, text.as_bytes())?;
            }
            if let Some(path) = reject_map {
                let mut buf = Vec::new();
                let depth = forest.trees.iter().map(|t| t.depth()).max().unwrap_or(0);
                result.grid.write_pgm(&mut buf, depth).map_err(|e| Error::io(path, e))?;
                io::write_file(path, &buf)?;
            }
            Ok(())
        }
        Command::Bench { config, out, suite } => {
            let cfg = load_config(config.as_deref(), None, cli.seed)?;
            cmd_bench(&cfg, out, *suite, stderr)
        }
        Command::Inspect { file } => {
            let bytes = io::read_file(file)?;
            let summary = inspect(&bytes)?;
            writeln!(stdout, "{}", serde_json::to_string_pretty(&summary).expect("json")).map_err(out_err)
        }
    }
}

fn cmd_gen(cfg: &RunConfig, out: &Path, stderr: &mut dyn Write) -> Result<()> {
    cfg.check()?;
    create_dir(out)?;
    let header = Header::new(cfg.snapshot());
    let catalogue = cfg.catalogue()?;
    let set = build_template_set(&catalogue.objects, &cfg.dataset.poses.poses(), &cfg.dataset.templates, cfg.seed)?;
    io::write_file(out.join("templates.tpl"), &io::encode_templates(&set, &header))?;
    for i in 0..cfg.dataset.scenes.len() {
        let spec = cfg.scene_spec(i, &catalogue)?;
        let (map, gt) = compose_scene(&spec, &catalogue)?;
        io::write_file(out.join(format!("scene_{i:03}.fmap")), &io::encode_feature_map(&map, &header))?;
        io::write_file(out.join(format!("scene_{i:03}.gt.jsonl")), io::ground_truth_jsonl(&gt).as_bytes())?;
    }
    let _ = writeln!(
        stderr,
        "wrote {} templates and {} scenes to {}",
        set.len(),
        cfg.dataset.scenes.len(),
        out.display()
    );
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, out: &Path, suite: Suite, stderr: &mut dyn Write) -> Result<()> {
    cfg.check()?;
    create_dir(out)?;
    let mut report = serde_json::Map::new();
    report.insert("tool".into(), json!(TOOL_VERSION));
    report.insert("config".into(), json!(cfg.snapshot()));
    if suite != Suite::Trees {
        let t = std::time::Instant::now();
        let sweep = bench::template_sweep(cfg)?;
        let _ = writeln!(stderr, "template sweep: {:.2?}", t.elapsed());
        io::write_file(out.join("sweep.csv"), bench::to_csv(&sweep.rows)?.as_bytes())?;
        report.insert("sweep".into(), serde_json::to_value(&sweep).expect("json"));
    }
    if suite != Suite::Sweep {
        let t = std::time::Instant::now();
        let suite = bench::tree_suite(cfg)?;
        let _ = writeln!(stderr, "tree suite: {:.2?}", t.elapsed());
        io::write_file(out.join("suite.csv"), bench::to_csv(&suite.rows)?.as_bytes())?;
        report.insert("suite".into(), serde_json::to_value(&suite).expect("json"));
    }
    let text = serde_json::to_string_pretty(&report).expect("json") + "\n";
    io::write_file(out.join("bench.json"), text.as_bytes())
}

/// Header and summary of any container, identified by its magic.
pub fn inspect(bytes: &[u8]) -> Result<serde_json::Value> {
    let header = |h: &Header| json!({ "version": h.version, "tool": h.tool, "config": h.config });
    match bytes.get(..4) {
        Some(m) if m == io::TEMPLATES_MAGIC => {
            let (set, h) = io::decode_templates(bytes)?;
            let mut objects: Vec<u32> = set.templates().iter().map(|t| t.object_id).collect();
            objects.dedup();
            Ok(json!({
                "kind": "templates",
                "header": header(&h),
                "templates": set.len(),
                "objects": objects.len(),
                "patch": set.layout().patch_size(),
                "descriptor_len": set.layout().descriptor_len(),
            }))
        }
        Some(m) if m == io::FEATURE_MAP_MAGIC => {
            let (map, h) = io::decode_feature_map(bytes)?;
            Ok(json!({
                "kind": "feature_map",
                "header": header(&h),
                "width": map.width(),
                "height": map.height(),
                "modalities": map.modalities(),
                "depth": map.depth().is_some(),
            }))
        }
        Some(m) if m == io::FOREST_MAGIC => {
            let (f, h) = io::decode_forest(bytes)?;
            let stats: Vec<TreeStats> = f.stats();
            Ok(json!({
                "kind": "forest",
                "header": header(&h),
                "templates": f.template_count,
                "forest_config": f.config,
                "trees": stats,
            }))
        }
        _ => Err(Error::Data("not a tmforest container".into())),
    }
}
