//! Command-line front end: `preprocess`, `train`, `evaluate`, `generate`,
//! `render` and `synthdata`, sharing a flat `key = value` config file.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{debug, info, warn};

use crate::error::{Error, Result};
use crate::features::{extract_features, load_wav, FRAME_RATE};
use crate::geometry::{
    align_sequence, denormalize, normalize, read_landmark_file, write_landmark_file, LandmarkFile,
    LandmarkSequence, Pins, CANONICAL_SIDE,
};
use crate::harness::{
    build_dataset, evaluate, generate_synthetic_dataset, read_preprocessed, train_grid,
    write_preprocessed, Dataset, DatasetManifest, EvalReport, Split, SynthConfig, TrainConfig,
};
use crate::model::{parse_model_id, ModelConfig, TalkingFaceModel};
use crate::render::{render_sequence, LineStyle, RenderOptions};

/// Every accepted configuration key with its default.
const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("threads", "0"),
    ("grid", "D0-C3,D0-C5,D40-C3,D40-C5,D80-C3,D80-C5"),
    ("num_layers", "4"),
    ("hidden_size", "256"),
    ("dropout_rate", "0.2"),
    ("epochs", "50"),
    ("batch_size", "128"),
    ("learning_rate", "0.001"),
    ("sequence_length", "75"),
    ("clip_norm", "5"),
    ("parallel_grid", "false"),
    ("canvas", "600"),
    ("utterances", "8"),
    ("speakers", "4"),
    ("duration_secs", "3"),
    ("split", "auto"),
];

/// Resolved run settings: defaults, then the config file, then flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key `{key}`"))),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .values
            .get(key)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::Config(format!("bad value `{raw}` for `{key}`")))
    }

    /// `key = value` lines in key order.
    pub fn describe(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn grid(&self) -> Result<Vec<(usize, usize)>> {
        let raw: String = self.get("grid")?;
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(parse_model_id)
            .collect()
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            grid: self.grid()?,
            model: ModelConfig {
                num_layers: self.get("num_layers")?,
                hidden_size: self.get("hidden_size")?,
                dropout_rate: self.get("dropout_rate")?,
                ..ModelConfig::default()
            },
            batch_size: self.get("batch_size")?,
            learning_rate: self.get("learning_rate")?,
            epochs: self.get("epochs")?,
            seed: self.get("seed")?,
            sequence_length: self.get("sequence_length")?,
            clip_norm: self.get("clip_norm")?,
            parallel_grid: self.get("parallel_grid")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        Ok(SynthConfig {
            seed: self.get("seed")?,
            utterances: self.get("utterances")?,
            speakers: self.get("speakers")?,
            duration_secs: self.get("duration_secs")?,
            split: self
                .get::<String>("split")?
                .parse()
                .map_err(|e| Error::Config(format!("{e}")))?,
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "lark", version, about = "Talking-face landmarks from speech")]
pub struct Cli {
    /// Flat `key = value` configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for preprocessing and rendering (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Features and normalized landmark targets for every manifest entry.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fail if any entry is rejected.
        #[arg(long)]
        strict: bool,
    },
    /// Train the model grid on a preprocessed directory and report RMSEs.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: TrainFlags,
    },
    /// Score checkpoints on a preprocessed directory or a manifest.
    Evaluate {
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        data: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// train, val or test
        #[arg(long, default_value = "val")]
        split: String,
        /// Write `<out>.txt` (table) and `<out>.kv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Landmarks for a WAV file.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also render frames into this directory.
        #[arg(long)]
        render: Option<PathBuf>,
        #[arg(long)]
        canvas: Option<u32>,
    },
    /// Draw a landmark file as numbered PNG frames plus an index.
    Render {
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Second track drawn on top (e.g. prediction over ground truth).
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[arg(long)]
        canvas: Option<u32>,
        /// Dotted strokes for the overlay.
        #[arg(long)]
        dotted: bool,
        /// Pin the eye corners of non-canonical tracks before drawing.
        #[arg(long)]
        align: bool,
    },
    /// Write a deterministic synthetic corpus and its manifest.
    Synthdata {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        utterances: Option<usize>,
        #[arg(long)]
        speakers: Option<usize>,
        #[arg(long)]
        duration_secs: Option<f64>,
        #[arg(long)]
        split: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Comma-separated model ids, e.g. `D40-C5,D0-C3`.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub num_layers: Option<usize>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub dropout_rate: Option<f64>,
    #[arg(long)]
    pub parallel_grid: bool,
}

fn apply<T: std::fmt::Display>(cfg: &mut RunConfig, key: &str, v: &Option<T>) -> Result<()> {
    match v {
        Some(v) => cfg.set(key, v),
        None => Ok(()),
    }
}

/// Config file values overridden by any flags given on the command line.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply(&mut cfg, "seed", &cli.seed)?;
    apply(&mut cfg, "threads", &cli.threads)?;
    match &cli.command {
        Command::Train { opts, .. } => {
            apply(&mut cfg, "grid", &opts.grid)?;
            apply(&mut cfg, "epochs", &opts.epochs)?;
            apply(&mut cfg, "batch_size", &opts.batch_size)?;
            apply(&mut cfg, "learning_rate", &opts.learning_rate)?;
            apply(&mut cfg, "num_layers", &opts.num_layers)?;
            apply(&mut cfg, "hidden_size", &opts.hidden_size)?;
            apply(&mut cfg, "dropout_rate", &opts.dropout_rate)?;
            if opts.parallel_grid {
                cfg.set("parallel_grid", true)?;
            }
        }
        Command::Generate { canvas, .. } | Command::Render { canvas, .. } => {
            apply(&mut cfg, "canvas", canvas)?;
        }
        Command::Synthdata {
            utterances,
            speakers,
            duration_secs,
            split,
            ..
        } => {
            apply(&mut cfg, "utterances", utterances)?;
            apply(&mut cfg, "speakers", speakers)?;
            apply(&mut cfg, "duration_secs", duration_secs)?;
            apply(&mut cfg, "split", split)?;
        }
        _ => {}
    }
    Ok(cfg)
}

/// Parses arguments, runs the subcommand and returns the process exit code
/// (0 success, 1 usage, 2 data, 3 numeric failure).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    for line in cfg.describe().lines() {
        debug!("config: {line}");
    }
    let threads: usize = cfg.get("threads")?;
    if threads > 0 {
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match &cli.command {
        Command::Preprocess {
            manifest,
            out,
            strict,
        } => cmd_preprocess(manifest, out, &cfg, *strict).map(|_| ()),
        Command::Train { data, out, .. } => {
            let report = cmd_train(data, out, &cfg)?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            data,
            manifest,
            split,
            out,
        } => {
            let split: Split = split.parse().map_err(|e| Error::Argument(format!("{e}")))?;
            let source = match (data, manifest) {
                (Some(d), _) => EvalSource::Preprocessed(d),
                (None, Some(m)) => EvalSource::Manifest(m),
                (None, None) => return Err(Error::Argument("need --data or --manifest".into())),
            };
            let report = cmd_evaluate(checkpoint, source, split, &cfg)?;
            if let Some(out) = out {
                write_report(&report, out)?;
            }
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Generate {
            checkpoint,
            wav,
            out,
            render,
            ..
        } => {
            let summary = cmd_generate(checkpoint, wav, out, render.as_deref(), &cfg)?;
            println!(
                "generated {} frames for {:.3} s of audio in {:.3} s ({:.1}x real time)",
                summary.frames,
                summary.audio_secs,
                summary.inference_secs,
                summary.audio_secs / summary.inference_secs.max(1e-9)
            );
            Ok(())
        }
        Command::Render {
            landmarks,
            out,
            overlay,
            dotted,
            align,
            ..
        } => cmd_render(landmarks, out, overlay.as_deref(), *dotted, *align, &cfg).map(|_| ()),
        Command::Synthdata { out, .. } => {
            let m = generate_synthetic_dataset(out, &cfg.synth_config()?)?;
            info!("wrote {} synthetic utterances to {}", m.len(), out.display());
            Ok(())
        }
    }
}

/// Builds the dataset and writes one tensor file per entry, the mean face
/// and `rejected.tsv` (one `entry<TAB>reason` line per rejected entry).
pub fn cmd_preprocess(manifest: &Path, out: &Path, cfg: &RunConfig, strict: bool) -> Result<Dataset> {
    let m = DatasetManifest::read(manifest)?;
    let dataset = build_dataset(&m, cfg.get("seed")?, None)?;
    let paths = write_preprocessed(&dataset, out)?;
    let rejected: String = dataset
        .failures
        .iter()
        .map(|f| format!("{}\t{}\n", f.entry, f.message.replace(['\t', '\n'], " ")))
        .collect();
    let rej_path = out.join("rejected.tsv");
    std::fs::write(&rej_path, rejected).map_err(|e| Error::io(&rej_path, e))?;
    info!(
        "preprocessed {} of {} entries into {}",
        paths.len(),
        m.len(),
        out.display()
    );
    if strict && !dataset.failures.is_empty() {
        return Err(Error::Format(format!(
            "{} entries rejected (see {})",
            dataset.failures.len(),
            rej_path.display()
        )));
    }
    Ok(dataset)
}

fn write_report(report: &EvalReport, stem: &Path) -> Result<()> {
    let table = stem.with_extension("txt");
    std::fs::write(&table, report.to_table()).map_err(|e| Error::io(&table, e))?;
    let kv = stem.with_extension("kv");
    std::fs::write(&kv, report.to_key_values()).map_err(|e| Error::io(&kv, e))
}

/// Evaluation utterances: the validation split, or the training split when
/// there is no validation data.
fn eval_split(dataset: &Dataset, wanted: Split) -> Vec<&crate::harness::Utterance> {
    let chosen: Vec<_> = dataset.split(wanted).collect();
    if chosen.is_empty() && wanted == Split::Val {
        warn!("no validation utterances; reporting on the training split");
        return dataset.split(Split::Train).collect();
    }
    chosen
}

/// Trains the grid; writes `<id>.lark`, `<id>.loss.tsv`, `report.txt`,
/// `report.kv` and `config.txt` into `out`.
pub fn cmd_train(data: &Path, out: &Path, cfg: &RunConfig) -> Result<EvalReport> {
    let train_cfg = cfg.train_config()?;
    let dataset = read_preprocessed(data)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg_path = out.join("config.txt");
    std::fs::write(&cfg_path, cfg.describe()).map_err(|e| Error::io(&cfg_path, e))?;

    let eval_set = eval_split(&dataset, Split::Val);
    let mut rows = Vec::new();
    let mut first_err = None;
    for (id, res) in train_grid(&dataset, &train_cfg)? {
        match res {
            Ok(trained) => {
                trained.model.save(out.join(format!("{id}.lark")))?;
                trained.write_history(&out.join(format!("{id}.loss.tsv")))?;
                rows.push(evaluate(&trained.model, eval_set.iter().copied())?);
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if rows.is_empty() {
        return Err(first_err.unwrap_or_else(|| Error::EmptyInput("nothing trained".into())));
    }
    let report = EvalReport::new(rows)?;
    write_report(&report, &out.join("report"))?;
    Ok(report)
}

pub enum EvalSource<'a> {
    Preprocessed(&'a Path),
    /// Rebuilt with the first checkpoint's mean face.
    Manifest(&'a Path),
}

pub fn cmd_evaluate(checkpoints: &[PathBuf], source: EvalSource<'_>, split: Split, cfg: &RunConfig) -> Result<EvalReport> {
    let models = checkpoints
        .iter()
        .map(TalkingFaceModel::load)
        .collect::<Result<Vec<_>>>()?;
    let first = models
        .first()
        .ok_or_else(|| Error::Argument("no checkpoints given".into()))?;
    let dataset = match source {
        EvalSource::Preprocessed(dir) => read_preprocessed(dir)?,
        EvalSource::Manifest(m) => {
            build_dataset(&DatasetManifest::read(m)?, cfg.get("seed")?, Some(&first.mean_face))?
        }
    };
    let eval_set = eval_split(&dataset, split);
    let mut rows = Vec::new();
    for m in &models {
        if m.mean_face != dataset.mean_face {
            warn!("{}: checkpoint mean face differs from the data's", m.model_id());
        }
        rows.push(evaluate(m, eval_set.iter().copied())?);
    }
    EvalReport::new(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub frames: usize,
    pub audio_secs: f64,
    /// Wall time from reading the WAV to the finished landmark track.
    pub inference_secs: f64,
}

/// Writes the predicted track as a 600 x 600 canonical-pixel landmark file.
/// Nothing is written if the checkpoint or audio cannot be loaded.
pub fn cmd_generate(
    checkpoint: &Path,
    wav: &Path,
    out: &Path,
    render_dir: Option<&Path>,
    cfg: &RunConfig,
) -> Result<GenerateSummary> {
    let model = TalkingFaceModel::load(checkpoint)?;
    let start = Instant::now();
    let clip = load_wav(wav)?;
    let features = extract_features(&clip)?;
    let pred = model.predict(&features)?;
    let inference_secs = start.elapsed().as_secs_f64();
    info!("{}: inference took {inference_secs:.3} s", model.model_id());

    let file = LandmarkFile {
        width: CANONICAL_SIDE,
        height: CANONICAL_SIDE,
        fps: FRAME_RATE,
        mean_face: false,
        frames: pred.frames.frames().iter().map(denormalize).collect(),
    };
    write_landmark_file(out, &file)?;
    if let Some(dir) = render_dir {
        let opts = RenderOptions {
            canvas: cfg.get("canvas")?,
            ..RenderOptions::default()
        };
        let solo = RenderOptions {
            primary: opts.overlay,
            ..opts
        };
        render_sequence(&pred.frames, dir, None, &solo)?;
    }
    Ok(GenerateSummary {
        frames: pred.frames.len(),
        audio_secs: clip.duration_secs(),
        inference_secs,
    })
}

fn load_track(path: &Path, align: bool) -> Result<LandmarkSequence> {
    let seq = read_landmark_file(path)?
        .to_sequence()?
        .resample_frame_rate(FRAME_RATE)?
        .map_frames(normalize);
    if align {
        align_sequence(&seq, &Pins::canonical())
    } else {
        Ok(seq)
    }
}

pub fn cmd_render(
    landmarks: &Path,
    out: &Path,
    overlay: Option<&Path>,
    dotted: bool,
    align: bool,
    cfg: &RunConfig,
) -> Result<Vec<PathBuf>> {
    let base = load_track(landmarks, align)?;
    let top = overlay.map(|p| load_track(p, align)).transpose()?;
    let mut opts = RenderOptions {
        canvas: cfg.get("canvas")?,
        ..RenderOptions::default()
    };
    if dotted {
        opts.overlay.style = LineStyle::Dotted;
    }
    let paths = render_sequence(&base, out, top.as_ref(), &opts)?;
    info!("rendered {} frames into {}", paths.len(), out.display());
    Ok(paths)
}
