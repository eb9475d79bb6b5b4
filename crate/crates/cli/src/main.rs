//! `rea-forge`: synthesize scenes, generate QA datasets, validate and
//! summarize them.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rea_forge::qagen::{
    generate_dataset, to_jsonl, validate_jsonl, GenConfig, QARecord, RelationPayload, TaskKind, TaskMix,
};
use rea_forge::scene::SceneModel;
use rea_forge::synth::oracle::check_against_truth;
use rea_forge::synth::{generate_scene, SynthConfig};
use serde::{Deserialize, Serialize};

const EXIT_CONFIG: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_SHORTFALL: u8 = 3;
const THREADS_ENV: &str = "REA_FORGE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "rea-forge", version, about = "Spatio-temporal QA dataset generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic scenes (JSON plus PLY) to a directory.
    Synth(Common),
    /// Generate a JSONL dataset and a generation report.
    Generate(Common),
    /// Check every record of a JSONL dataset.
    Validate(InputArgs),
    /// Per-task counts and payload histograms of a JSONL dataset.
    Stats(InputArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML or JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Records to generate (for `synth`: scenes to write).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Task fractions, e.g. `relative_direction=0.5,action_planning=0.5`.
    #[arg(long)]
    mix: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scene JSON file; repeat for several. Replaces synthetic scenes.
    #[arg(long)]
    scene: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// JSONL dataset.
    input: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene JSON files used to check referenced ids.
    #[arg(long)]
    scene: Vec<PathBuf>,
    /// Also recompute every payload from scene ground truth.
    #[arg(long)]
    oracle: bool,
}

/// Effective run configuration: file values, then flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    seed: u64,
    n: usize,
    /// Synthetic scenes to build when no scene files are given.
    scenes: usize,
    scene_files: Vec<PathBuf>,
    out: Option<PathBuf>,
    mix: TaskMix,
    generation: GenConfig,
    synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 100,
            scenes: 1,
            scene_files: Vec::new(),
            out: None,
            mix: TaskMix::default(),
            generation: GenConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    fn apply(mut self, flags: &Common) -> Result<Self> {
        if let Some(n) = flags.n {
            self.n = n;
        }
        if let Some(seed) = flags.seed {
            self.seed = seed;
        }
        if let Some(mix) = &flags.mix {
            self.mix = TaskMix::parse(mix)?;
        }
        if flags.out.is_some() {
            self.out = flags.out.clone();
        }
        if !flags.scene.is_empty() {
            self.scene_files = flags.scene.clone();
        }
        self.check()?;
        Ok(self)
    }

    fn check(&self) -> Result<()> {
        let g = &self.generation;
        let t = &g.thresholds;
        let within = |name: &str, v: f64, lo: f64, hi: f64| {
            if v.is_finite() && (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(anyhow::anyhow!("{name} = {v} is outside [{lo}, {hi}]"))
            }
        };
        within("thresholds.slope", t.slope, 0.0, 10.0)?;
        within("thresholds.navigation", t.navigation, 0.0, 50.0)?;
        within("thresholds.tie_margin", t.tie_margin, 0.0, 10.0)?;
        within("min_gap", g.min_gap, 0.0, 40.0)?;
        if g.max_attempts == 0 {
            bail!("max_attempts must be at least 1");
        }
        if let Some(k) = g.localize.trim_mad {
            within("localize.trim_mad", k, 0.0, f64::MAX)?;
        }
        if self.scenes == 0 {
            bail!("scenes must be at least 1");
        }
        self.synth.validate()?;
        Ok(())
    }

    fn log(&self) {
        match serde_json::to_string(self) {
            Ok(json) => eprintln!("effective config: {json}"),
            Err(e) => eprintln!("effective config could not be printed: {e}"),
        }
    }

    fn synth_configs(&self) -> Vec<SynthConfig> {
        (0..self.scenes as u64)
            .map(|i| {
                let seed = self.synth.seed.wrapping_add(i);
                let scene_id = match (&self.synth.scene_id, self.scenes) {
                    (Some(id), 1) => Some(id.clone()),
                    (Some(id), _) => Some(format!("{id}-{i}")),
                    (None, _) => None,
                };
                SynthConfig {
                    seed,
                    scene_id,
                    ..self.synth.clone()
                }
            })
            .collect()
    }

    fn build_scenes(&self) -> Result<Vec<SceneModel>> {
        if self.scene_files.is_empty() {
            use rayon::prelude::*;
            self.synth_configs()
                .par_iter()
                .map(|c| generate_scene(c).map_err(anyhow::Error::from))
                .collect()
        } else {
            load_scenes(&self.scene_files)
        }
    }
}

fn load_scenes(paths: &[PathBuf]) -> Result<Vec<SceneModel>> {
    paths
        .iter()
        .map(|p| SceneModel::load(p).with_context(|| format!("loading scene {}", p.display())))
        .collect()
}

/// Writes `bytes` to a temp file next to `path`, then renames it over `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got '{value}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn synth(flags: &Common) -> Result<u8> {
    let cfg = RunConfig::load(flags.config.as_deref())?;
    let mut cfg = cfg.apply(&Common { n: None, ..flags.clone() })?;
    if let Some(n) = flags.n {
        cfg.scenes = n;
    }
    cfg.check()?;
    cfg.log();
    let out = cfg.out.clone().context("synth needs --out <dir>")?;
    let scenes = cfg.build_scenes()?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    // Save into a scratch directory beside the target, then move into place.
    let scratch = tempfile::tempdir_in(&out)?;
    for s in &scenes {
        let name = format!("{}.json", s.scene_id);
        s.save(scratch.path().join(&name)).with_context(|| format!("saving {name}"))?;
        for file in [PathBuf::from(&name), PathBuf::from(&name).with_extension("ply")] {
            fs::rename(scratch.path().join(&file), out.join(&file))?;
        }
        eprintln!("wrote {}", out.join(&name).display());
    }
    Ok(0)
}

#[derive(Serialize)]
struct GenerationReport<'a> {
    config: &'a RunConfig,
    scenes: Vec<&'a str>,
    requested: BTreeMap<TaskKind, usize>,
    produced: BTreeMap<TaskKind, usize>,
    shortfalls: &'a [rea_forge::qagen::Shortfall],
}

fn report_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".report.json");
    out.with_file_name(name)
}

fn generate(flags: &Common) -> Result<u8> {
    let cfg = RunConfig::load(flags.config.as_deref()).and_then(|c| c.apply(flags))?;
    cfg.log();
    let out = cfg.out.clone().context("generate needs --out <file.jsonl>")?;
    let scenes = cfg.build_scenes()?;
    let dataset = generate_dataset(&scenes, cfg.n, &cfg.mix, cfg.seed, &cfg.generation)?;
    write_atomic(&out, to_jsonl(&dataset.records).as_bytes())?;

    let mut produced: BTreeMap<TaskKind, usize> = TaskKind::ALL.iter().map(|&t| (t, 0)).collect();
    for r in &dataset.records {
        *produced.entry(r.task).or_default() += 1;
    }
    let report = GenerationReport {
        config: &cfg,
        scenes: scenes.iter().map(|s| s.scene_id.as_str()).collect(),
        requested: TaskKind::ALL.iter().copied().zip(dataset.requested).collect(),
        produced,
        shortfalls: &dataset.shortfalls,
    };
    let report_json = serde_json::to_vec_pretty(&report)?;
    write_atomic(&report_path(&out), &report_json)?;
    eprintln!("wrote {} records to {}", dataset.records.len(), out.display());
    if dataset.is_complete() {
        Ok(0)
    } else {
        for s in &dataset.shortfalls {
            eprintln!("shortfall: {} produced {} of {} ({})", s.task, s.produced, s.requested, s.reason);
        }
        Ok(EXIT_SHORTFALL)
    }
}

fn input_scenes(args: &InputArgs) -> Result<Option<Vec<SceneModel>>> {
    if !args.scene.is_empty() {
        return load_scenes(&args.scene).map(Some);
    }
    match &args.config {
        Some(path) => {
            let cfg = RunConfig::load(Some(path))?;
            cfg.check()?;
            cfg.log();
            cfg.build_scenes().map(Some)
        }
        None => Ok(None),
    }
}

fn validate(args: &InputArgs) -> Result<u8> {
    let scenes = input_scenes(args)?;
    if args.oracle && scenes.is_none() {
        bail!("--oracle needs --scene or --config");
    }
    let text = fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let (records, mut report) = validate_jsonl(&text, scenes.as_deref());
    if scenes.is_none() {
        eprintln!("no scenes given: referenced ids were not checked");
    }
    if args.oracle {
        let scenes = scenes.as_deref().unwrap_or_default();
        for (r, check) in records.iter().zip(report.checks.iter_mut()) {
            if let Some(s) = scenes.iter().find(|s| s.scene_id == r.scene_id) {
                if let Err(e) = check_against_truth(s, r, 1e-6) {
                    check.reasons.push(format!("oracle: {e}"));
                }
            }
        }
    }
    for c in report.checks.iter().filter(|c| !c.passed()) {
        println!("FAIL {}: {}", c.record, c.reasons.join("; "));
    }
    println!("{} records: {} passed, {} failed", report.checks.len(), report.passed(), report.failed());
    Ok(if report.all_passed() { 0 } else { EXIT_INVALID })
}

#[derive(Serialize, Default)]
struct Stats {
    records: usize,
    unparseable: usize,
    tasks: BTreeMap<String, usize>,
    payload_kinds: BTreeMap<String, usize>,
    question_templates: BTreeMap<String, usize>,
    directions: BTreeMap<String, usize>,
    trends: BTreeMap<String, usize>,
    verdicts: BTreeMap<String, usize>,
    navigation: BTreeMap<String, usize>,
    changed: BTreeMap<String, usize>,
}

fn bump(map: &mut BTreeMap<String, usize>, key: impl ToString) {
    *map.entry(key.to_string()).or_default() += 1;
}

fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn tally(stats: &mut Stats, r: &QARecord) {
    use RelationPayload::*;
    stats.records += 1;
    bump(&mut stats.tasks, r.task);
    bump(&mut stats.payload_kinds, r.relation_payload.kind());
    bump(&mut stats.question_templates, r.relation_payload.question_template_id());
    match &r.relation_payload {
        HandChange { changed, .. } => bump(&mut stats.changed, format!("hand_change.{changed}")),
        DirectionChange { before, after, changed, .. } => {
            bump(&mut stats.directions, before);
            bump(&mut stats.directions, after);
            bump(&mut stats.changed, format!("direction_change.{changed}"));
        }
        SameSide { first, second, same, .. } => {
            bump(&mut stats.directions, first);
            bump(&mut stats.directions, second);
            bump(&mut stats.changed, format!("same_side.{same}"));
        }
        DistanceTrend { trend, .. } => bump(&mut stats.trends, label(trend)),
        CloserThan { verdict, .. } | ItemDelivery { verdict, .. } => bump(&mut stats.verdicts, label(verdict)),
        ItemLocation { direction, navigation, .. } => {
            bump(&mut stats.directions, direction);
            bump(&mut stats.navigation, navigation.direction.map_or("stay".into(), |d| d.to_string()));
        }
        NextObject { options, .. } => bump(&mut stats.verdicts, format!("{}_options", options.len())),
        NextStep { navigation, .. } => {
            bump(&mut stats.navigation, navigation.direction.map_or("stay".into(), |d| d.to_string()))
        }
    }
}

fn stats(args: &InputArgs) -> Result<u8> {
    let text = fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let mut s = Stats::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<QARecord>(line) {
            Ok(r) => tally(&mut s, &r),
            Err(_) => s.unparseable += 1,
        }
    }
    let json = serde_json::to_string_pretty(&s)?;
    println!("{json}");
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_CONFIG);
    }
    let outcome = match &cli.command {
        Command::Synth(flags) => synth(flags),
        Command::Generate(flags) => generate(flags),
        Command::Validate(args) => validate(args),
        Command::Stats(args) => stats(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
