//! Subcommands of the `avrobust` binary. Every stage reads its inputs from
//! files, writes its outputs under one directory together with the resolved
//! config (`config.toml`) and a `run.json` summary, and reports failures as a
//! JSON object on stderr with a stable exit code.

use std::fs;
use std::path::{Path, PathBuf};

use avrobust::ablation::{masked_only_row, ratio_grid, task_grid, Grid};
use avrobust::analysis::{analyze, AnalysisReport};
use avrobust::config::ExperimentConfig;
use avrobust::corruption::{corrupt_sequence, sample_plan, CorruptionConfig, CorruptionPlan};
use avrobust::data::{generate_corpus, generate_noise_banks, write_sequence, Manifest, ManifestEntry, PairedSequence, Split};
use avrobust::exec::{self, Exec};
use avrobust::model::{load_checkpoint, save_checkpoint, Checkpoint, ModalityMode};
use avrobust::rng;
use avrobust::training::{evaluate, finetune, uptrain, Resources, RunLog};
use avrobust::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const OUT_ENV: &str = "AVROBUST_OUT";

#[derive(Debug, Parser)]
#[command(name = "avrobust", version, about = "Corrupted audio-visual representation learning at desk scale")]
pub struct Cli {
    /// Output root; stage directories are created below it.
    #[arg(long, env = OUT_ENV, default_value = "runs", global = true)]
    pub out: PathBuf,
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Config override `section.key=value`; `--section.key=value` also works.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Run per-sequence work on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Av,
    Audio,
    Video,
}

impl From<ModeArg> for ModalityMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Av => ModalityMode::Av,
            ModeArg::Audio => ModalityMode::AudioOnly,
            ModeArg::Video => ModalityMode::VideoOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridArg {
    Tasks,
    Ratios,
}

/// Locations of the shared corpus artifacts.
#[derive(Debug, clap::Args)]
pub struct Inputs {
    /// Corpus directory (default `<out>/corpus`).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Noise-bank directory (default `<out>/noise`).
    #[arg(long)]
    pub noise: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus and noise banks.
    Corpus,
    /// Corrupt one split and log every plan.
    Corrupt {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Self-supervised uptraining.
    Uptrain {
        #[command(flatten)]
        inputs: Inputs,
        /// Start from this checkpoint instead of a random encoder.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fine-tune a recognizer; without `--init` the encoder starts random.
    Finetune {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// WER over the eval grid.
    Eval {
        #[command(flatten)]
        inputs: Inputs,
        /// Fine-tuned checkpoint (default `<out>/finetune/model.ckpt`).
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "av")]
        mode: ModeArg,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Similarity and modality-gap diagnostics.
    Analyze {
        #[command(flatten)]
        inputs: Inputs,
        /// Checkpoint (default `<out>/uptrain/model.ckpt`).
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Also render the similarity matrix as a PNG heatmap.
        #[arg(long)]
        heatmap: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run every cell of an ablation grid.
    Ablate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum)]
        grid: Option<GridArg>,
        /// Also run the masked-only reference row.
        #[arg(long)]
        with_reference: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Split `--section.key=value` overrides out of raw arguments.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        let is_override = a
            .strip_prefix("--")
            .and_then(|s| s.split_once('='))
            .is_some_and(|(k, _)| k.contains('.') && !k.starts_with('-'));
        if is_override {
            overrides.push(a[2..].to_string());
        } else {
            rest.push(a);
        }
    }
    (rest, overrides)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) => 2,
        Error::Dependency(_) | Error::Lookup(_) | Error::Format { .. } | Error::Io { .. } => 3,
        Error::Divergence { .. } => 4,
        _ => 1,
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with(args: Vec<String>) -> i32 {
    let (args, mut overrides) = split_overrides(args);
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    overrides.splice(0..0, cli.set.iter().cloned());
    match run(&cli, &overrides) {
        Ok(()) => 0,
        Err(e) => {
            let record = serde_json::json!({ "error": e.kind(), "message": e.to_string(), "exit_code": exit_code(&e) });
            eprintln!("{record}");
            exit_code(&e)
        }
    }
}

fn event(name: &str, fields: serde_json::Value) {
    let mut obj = serde_json::json!({ "event": name });
    if let (Some(o), serde_json::Value::Object(f)) = (obj.as_object_mut(), fields) {
        o.extend(f);
    }
    eprintln!("{obj}");
}

pub fn load_config(cli: &Cli, overrides: &[String]) -> Result<ExperimentConfig> {
    match &cli.config {
        Some(path) => {
            if !path.is_file() {
                return Err(Error::Dependency(format!("config file {} not found", path.display())));
            }
            ExperimentConfig::load(path, overrides)
        }
        None => ExperimentConfig::from_toml("", overrides),
    }
}

pub fn run(cli: &Cli, overrides: &[String]) -> Result<()> {
    let cfg = load_config(cli, overrides)?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let ctx = Ctx { out: cli.out.clone(), cfg, exec };
    match &cli.command {
        Command::Corpus => ctx.corpus(),
        Command::Corrupt { inputs, split, output } => ctx.corrupt(inputs, (*split).into(), output.as_deref()),
        Command::Uptrain { inputs, init, output } => ctx.uptrain(inputs, init.as_deref(), output.as_deref()),
        Command::Finetune { inputs, init, output } => ctx.finetune(inputs, init.as_deref(), output.as_deref()),
        Command::Eval { inputs, ckpt, mode, output } => ctx.eval(inputs, ckpt.as_deref(), (*mode).into(), output.as_deref()),
        Command::Analyze { inputs, ckpt, heatmap, output } => ctx.analyze(inputs, ckpt.as_deref(), *heatmap, output.as_deref()),
        Command::Ablate { inputs, grid, with_reference, output } => {
            let mut cfg = ctx.cfg.clone();
            if let Some(g) = grid {
                cfg.ablate.grid = match g {
                    GridArg::Tasks => Grid::Tasks,
                    GridArg::Ratios => Grid::Ratios,
                };
            }
            Ctx { cfg, ..ctx }.ablate(inputs, *with_reference, output.as_deref())
        }
    }
}

struct Ctx {
    out: PathBuf,
    cfg: ExperimentConfig,
    exec: Exec,
}

#[derive(Serialize)]
struct RunSummary<'a, T: Serialize> {
    stage: &'a str,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    output_hash: Option<String>,
    result: T,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Dependency(format!("{what} not found at {}", path.display())))
    }
}

/// SHA-256 over every file below `dir` (relative path and contents), in
/// sorted order, skipping `run.json`.
pub fn tree_hash(dir: &Path) -> Result<String> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(dir).unwrap_or(&f);
        if rel == Path::new("run.json") {
            continue;
        }
        h.update(rel.to_string_lossy().as_bytes());
        h.update(fs::read(&f).map_err(|e| Error::io(&f, e))?);
    }
    Ok(format!("{:x}", h.finalize()))
}

impl Ctx {
    fn stage_dir(&self, output: Option<&Path>, stage: &str) -> Result<PathBuf> {
        let dir = output.map_or_else(|| self.out.join(stage), Path::to_path_buf);
        create_dir(&dir)?;
        Ok(dir)
    }

    fn freeze(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
        write_text(&dir.join("config.toml"), &cfg.to_toml()?)
    }

    fn summary<T: Serialize>(&self, dir: &Path, stage: &str, hash: bool, result: T) -> Result<()> {
        let output_hash = if hash { Some(tree_hash(dir)?) } else { None };
        let s = RunSummary { stage, seed: self.cfg.seed, output_hash, result };
        write_json(&dir.join("run.json"), &s)?;
        event("done", serde_json::json!({ "stage": stage, "dir": dir }));
        Ok(())
    }

    fn corpus_dir(&self, inputs: &Inputs) -> PathBuf {
        inputs.corpus.clone().unwrap_or_else(|| self.out.join("corpus"))
    }

    fn noise_dir(&self, inputs: &Inputs) -> PathBuf {
        inputs.noise.clone().unwrap_or_else(|| self.out.join("noise"))
    }

    fn manifest(&self, inputs: &Inputs) -> Result<Manifest> {
        let dir = self.corpus_dir(inputs);
        require(&dir.join(avrobust::data::MANIFEST_FILE), "corpus manifest (run `corpus` first)")?;
        Manifest::load(&dir)
    }

    fn resources(&self, inputs: &Inputs) -> Result<Resources> {
        let dir = self.noise_dir(inputs);
        require(&dir, "noise banks (run `corpus` first)")?;
        Resources::load(&dir, self.cfg.seed, self.cfg.synth.video_size)
    }

    fn checkpoint(path: &Path, what: &str) -> Result<Checkpoint> {
        require(path, what)?;
        load_checkpoint(path)
    }

    fn corpus(&self) -> Result<()> {
        let c = &self.cfg;
        let corpus = self.stage_dir(None, "corpus")?;
        let noise = self.stage_dir(None, "noise")?;
        event("start", serde_json::json!({ "stage": "corpus", "seed": c.seed }));
        let m = generate_corpus(&c.synth, c.corpus.n_train, c.corpus.n_valid, c.corpus.n_test, &corpus, self.exec)?;
        generate_noise_banks(&c.synth, &c.noise, &m, &noise, self.exec)?;
        for dir in [&corpus, &noise] {
            self.freeze(dir, c)?;
        }
        self.summary(&noise, "noise", true, serde_json::json!({}))?;
        self.summary(&corpus, "corpus", true, serde_json::json!({ "sequences": m.entries.len() }))
    }

    fn corrupt(&self, inputs: &Inputs, split: Split, output: Option<&Path>) -> Result<()> {
        let manifest = self.manifest(inputs)?;
        let res = self.resources(inputs)?;
        let cfg = CorruptionConfig { split, ..self.cfg.corruption.clone() };
        let dir = self.stage_dir(output, &format!("corrupt-{}", split.as_str()))?;
        let seqs = manifest.load_split(split)?;
        let (entries, plans) = corrupt_split(&seqs, &cfg, &res, self.cfg.seed, &dir, self.exec)?;
        Manifest::new(dir.clone(), entries)?.save()?;
        let mut log = RunLog::create(&dir.join("plans.jsonl"))?;
        for (id, plan) in &plans {
            log.write(&serde_json::json!({ "id": id, "plan": plan }))?;
        }
        log.flush()?;
        let frozen = ExperimentConfig { corruption: cfg, ..self.cfg.clone() };
        write_text(&dir.join("config.toml"), &toml_of(&frozen)?)?;
        self.summary(&dir, "corrupt", true, serde_json::json!({ "split": split.as_str(), "sequences": plans.len() }))
    }

    fn uptrain(&self, inputs: &Inputs, init: Option<&Path>, output: Option<&Path>) -> Result<()> {
        let manifest = self.manifest(inputs)?;
        let res = self.resources(inputs)?;
        let init = init.map(|p| Self::checkpoint(p, "init checkpoint")).transpose()?;
        let dir = self.stage_dir(output, "uptrain")?;
        self.freeze(&dir, &self.cfg)?;
        let train = manifest.load_split(Split::Train)?;
        event("start", serde_json::json!({ "stage": "uptrain", "steps": self.cfg.uptrain.steps }));
        let mut log = RunLog::create(&dir.join("log.jsonl"))?;
        let out = uptrain(&self.cfg.uptrain, &self.cfg.model, &train, &res, init.as_ref(), self.exec, &mut log)?;
        log.flush()?;
        save_checkpoint(&dir.join("model.ckpt"), &out.checkpoint()?)?;
        let last = out.last_loss.as_ref().map(|l| l.total);
        self.summary(&dir, "uptrain", false, serde_json::json!({ "last_loss": last }))
    }

    fn finetune(&self, inputs: &Inputs, init: Option<&Path>, output: Option<&Path>) -> Result<()> {
        let manifest = self.manifest(inputs)?;
        let res = self.resources(inputs)?;
        let init = init.map(|p| Self::checkpoint(p, "init checkpoint")).transpose()?;
        let dir = self.stage_dir(output, "finetune")?;
        self.freeze(&dir, &self.cfg)?;
        let train = manifest.load_split(Split::Train)?;
        event("start", serde_json::json!({ "stage": "finetune", "steps": self.cfg.finetune.steps }));
        let mut log = RunLog::create(&dir.join("log.jsonl"))?;
        let out = finetune(&self.cfg.finetune, &self.cfg.model, &train, &res, init.as_ref(), self.exec, &mut log)?;
        log.flush()?;
        save_checkpoint(&dir.join("model.ckpt"), &out.checkpoint()?)?;
        self.summary(&dir, "finetune", false, serde_json::json!({ "last_nll": out.last_nll }))
    }

    fn eval(&self, inputs: &Inputs, ckpt: Option<&Path>, mode: ModalityMode, output: Option<&Path>) -> Result<()> {
        let path = ckpt.map_or_else(|| self.out.join("finetune").join("model.ckpt"), Path::to_path_buf);
        let model = Self::checkpoint(&path, "fine-tuned checkpoint")?.to_model(avrobust::model::DEFAULT_DTYPE)?;
        let manifest = self.manifest(inputs)?;
        let res = self.resources(inputs)?;
        let dir = self.stage_dir(output, &format!("eval-{}", mode.as_str()))?;
        self.freeze(&dir, &self.cfg)?;
        let test = manifest.load_split(Split::Test)?;
        let report = evaluate(&model, &test, &res, &self.cfg.eval, mode, self.exec)?;
        write_json(&dir.join("report.json"), &report)?;
        let table = report.render_table();
        write_text(&dir.join("table.txt"), &table)?;
        println!("{table}");
        self.summary(&dir, "eval", true, serde_json::json!({ "overall": report.overall, "clean_wer": report.clean_wer }))
    }

    fn analyze(&self, inputs: &Inputs, ckpt: Option<&Path>, heatmap: bool, output: Option<&Path>) -> Result<()> {
        let path = ckpt.map_or_else(|| self.out.join("uptrain").join("model.ckpt"), Path::to_path_buf);
        let model = Self::checkpoint(&path, "checkpoint")?.to_model(avrobust::model::DEFAULT_DTYPE)?;
        let manifest = self.manifest(inputs)?;
        let res = self.resources(inputs)?;
        let dir = self.stage_dir(output, "analyze")?;
        self.freeze(&dir, &self.cfg)?;
        let test = manifest.load_split(Split::Test)?;
        let report = analyze(&model, &test, &res, &self.cfg.analysis, self.exec)?;
        write_report_files(&dir, &report)?;
        if heatmap {
            render_heatmap(&report.similarity.matrix, &dir.join("similarity.png"))?;
        }
        let gaps: Vec<_> = report.gaps.iter().map(|g| (g.pair, g.d_avg)).collect();
        self.summary(&dir, "analyze", false, serde_json::json!({ "d_bar": report.similarity.d_bar, "gaps": gaps }))
    }

    fn ablate(&self, inputs: &Inputs, with_reference: bool, output: Option<&Path>) -> Result<()> {
        let manifest = self.manifest(inputs)?;
        let res = self.resources(inputs)?;
        let root = self.stage_dir(output, "ablate")?;
        let train = manifest.load_split(Split::Train)?;
        let test = manifest.load_split(Split::Test)?;
        let ab = &self.cfg.ablate;
        let mut cells: Vec<(String, String, ExperimentConfig)> = Vec::new();
        let mut base = self.cfg.clone();
        base.uptrain.steps = ab.uptrain_steps;
        base.finetune.steps = ab.finetune_steps.max(1);
        match ab.grid {
            Grid::Tasks => {
                let mut rows = task_grid();
                if with_reference {
                    rows.insert(0, masked_only_row());
                }
                for row in rows {
                    let mut c = base.clone();
                    c.weights = row.weights.clone();
                    c.uptrain.weights = row.weights.clone();
                    cells.push((row.slug(), row.label.clone(), c));
                }
            }
            Grid::Ratios => {
                for row in ratio_grid() {
                    let mut c = base.clone();
                    c.corruption = row.apply(&c.corruption);
                    c.uptrain.corruption = c.corruption.clone();
                    c.finetune.corruption = c.corruption.clone();
                    cells.push((row.label.clone(), row.label.clone(), c));
                }
            }
        }
        let mut results = Vec::new();
        for (slug, label, cfg) in cells {
            let cfg = cfg.resolve()?;
            let dir = root.join(&slug);
            create_dir(&dir)?;
            write_text(&dir.join("config.toml"), &cfg.to_toml()?)?;
            event("start", serde_json::json!({ "stage": "ablate", "cell": label }));
            let mut log = RunLog::create(&dir.join("log.jsonl"))?;
            let up = uptrain(&cfg.uptrain, &cfg.model, &train, &res, None, self.exec, &mut log)?;
            log.flush()?;
            let ckpt = up.checkpoint()?;
            save_checkpoint(&dir.join("model.ckpt"), &ckpt)?;
            let mut result = serde_json::json!({
                "label": label,
                "active_tasks": cfg.weights.active().iter().map(|t| t.as_str()).collect::<Vec<_>>(),
                "last_loss": up.last_loss.as_ref().map(|l| l.total),
            });
            if ab.finetune_steps > 0 {
                let mut flog = RunLog::create(&dir.join("finetune.jsonl"))?;
                let ft = finetune(&cfg.finetune, &cfg.model, &train, &res, Some(&ckpt), self.exec, &mut flog)?;
                flog.flush()?;
                let report = evaluate(&ft.model, &test, &res, &cfg.eval, ModalityMode::Av, self.exec)?;
                write_json(&dir.join("report.json"), &report)?;
                result["overall"] = serde_json::to_value(report.overall)?;
            }
            write_json(&dir.join("run.json"), &RunSummary { stage: "ablate", seed: cfg.seed, output_hash: None, result: &result })?;
            results.push(result);
        }
        self.freeze(&root, &self.cfg)?;
        self.summary(&root, "ablate", false, results)
    }
}

fn toml_of(cfg: &ExperimentConfig) -> Result<String> {
    cfg.to_toml()
}

/// Corrupt every sequence with its own `(seed, "corrupt", split, id)` stream,
/// writing the corrupted tensors below `dir`.
pub fn corrupt_split(
    seqs: &[PairedSequence],
    cfg: &CorruptionConfig,
    res: &Resources,
    seed: u64,
    dir: &Path,
    exec: Exec,
) -> Result<(Vec<ManifestEntry>, Vec<(String, CorruptionPlan)>)> {
    cfg.validate()?;
    let ctx = res.ctx();
    let split = cfg.split.as_str();
    create_dir(&dir.join(split))?;
    let done = exec::try_map(exec, seqs, |s| {
        let mut r = rng::stream_parts(seed, &["corrupt", split, &s.id]);
        let plan = sample_plan(s.len(), cfg, ctx, &mut r)?;
        let (audio, video) = corrupt_sequence(s, &plan, ctx)?;
        let rel = format!("{split}/{}", s.id);
        let out = PairedSequence { audio, video, ..s.clone() };
        write_sequence(&dir.join(&rel), &out)?;
        let entry = ManifestEntry {
            format_version: avrobust::data::MANIFEST_VERSION,
            id: s.id.clone(),
            path: rel,
            frames: s.len(),
            split: s.split,
            transcript: s.transcript.clone(),
        };
        Ok::<_, Error>((entry, (s.id.clone(), plan)))
    })?;
    Ok(done.into_iter().unzip())
}

fn write_report_files(dir: &Path, report: &AnalysisReport) -> Result<()> {
    write_json(&dir.join("analysis.json"), report)?;
    let csv_err = |path: &Path, e: csv::Error| Error::format(path, e.to_string());
    let path = dir.join("similarity.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let sim = &report.similarity;
    let header: Vec<&str> = std::iter::once("id").chain(sim.labels.iter().map(String::as_str)).collect();
    w.write_record(&header).map_err(|e| csv_err(&path, e))?;
    for (label, row) in sim.labels.iter().zip(&sim.matrix) {
        let rec: Vec<String> = std::iter::once(label.clone()).chain(row.iter().map(f64::to_string)).collect();
        w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let path = dir.join("gaps.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["x", "y", "d_avg"]).map_err(|e| csv_err(&path, e))?;
    for g in &report.gaps {
        w.write_record([g.pair.0.as_str(), g.pair.1.as_str(), &g.d_avg.to_string()])
            .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Cosine matrix as a blue (−1) / white (0) / red (+1) image, 4 px per cell.
pub fn render_heatmap(matrix: &[Vec<f64>], path: &Path) -> Result<()> {
    const CELL: u32 = 4;
    let n = matrix.len() as u32;
    if n == 0 {
        return Err(Error::Argument("empty similarity matrix".into()));
    }
    let img = image::RgbImage::from_fn(n * CELL, n * CELL, |x, y| {
        let v = matrix[(y / CELL) as usize][(x / CELL) as usize].clamp(-1.0, 1.0);
        let fade = |t: f64| (255.0 * (1.0 - t.abs())) as u8;
        if v >= 0.0 {
            image::Rgb([255, fade(v), fade(v)])
        } else {
            image::Rgb([fade(v), fade(v), 255])
        }
    });
    img.save(path).map_err(|e| Error::format(path, e.to_string()))
}
