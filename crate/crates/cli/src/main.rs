//! `mvx`: dataset generation, training, chained calibration, evaluation
//! and reprojection overlays.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
//! failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mvx_core::dataset::{read_sequence, read_split, write_dataset, DatasetError, Split, INDEX_FILE};
use mvx_core::scenesim::generate_sequence;
use mvx_pipeline::calibrate::calibrate;
use mvx_pipeline::checkpoint::Model;
use mvx_pipeline::data::PreparedSequence;
use mvx_pipeline::eval::{distance_trend, evaluate};
use mvx_pipeline::predictor::RotationPredictor;
use mvx_pipeline::train::{train_stage1, train_stage2, EpochRecord, EpochSink};
use mvx_pipeline::{overlay, PipelineConfig, PipelineError};
use serde_json::json;

/// Environment variable naming the default config file.
const CONFIG_ENV: &str = "MVX_CONFIG";

#[derive(Parser)]
#[command(name = "mvx", version, about = "LiDAR-camera rotation calibration with recurrent flow and temporal aggregation")]
struct Cli {
    /// TOML run configuration. Falls back to $MVX_CONFIG, then to the
    /// built-in desk preset.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Ablation {
    /// Regress from the final frame with the stage-1 head.
    NoTemporal,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Source {
    Gt,
    Init,
    Predicted,
}

#[derive(Subcommand)]
enum Command {
    /// Print a preset configuration as TOML.
    Config {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
    },
    /// Generate a synthetic dataset with an 80/10/10 split.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Replace an existing dataset in `out`.
        #[arg(long)]
        force: bool,
    },
    /// Train one stage on the training split.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Starting checkpoint; required for stage 2.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, value_enum)]
        ablate: Option<Ablation>,
        /// Refinement iterations (stage 1 only; stage 2 inherits them).
        #[arg(long)]
        iters: Option<usize>,
        /// Per-epoch JSON-lines log; defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run the checkpoint chain on one sequence.
    Calibrate {
        #[arg(long)]
        sequence: PathBuf,
        /// Coarse to fine; repeat for each chain stage.
        #[arg(long = "ckpt", required = true)]
        ckpts: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the checkpoint chain on a dataset split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long = "ckpt", required = true)]
        ckpts: Vec<PathBuf>,
        /// Comma-separated distances in meters; defaults to the config.
        #[arg(long, value_delimiter = ',')]
        distance_thresholds: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw each frame's point cloud over its camera image.
    Overlay {
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long, value_enum)]
        source: Source,
        /// Chain used by `--source predicted`.
        #[arg(long = "ckpt")]
        ckpts: Vec<PathBuf>,
        /// Directory for `frame_NNN.png`.
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Data(m) | Self::Numeric(m) => m,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let m = e.to_string();
        match e {
            PipelineError::Config(_) => Self::Usage(m),
            PipelineError::Data(_) | PipelineError::Io(_) | PipelineError::Checkpoint(_) => Self::Data(m),
            PipelineError::Numeric(_) | PipelineError::Chain { .. } | PipelineError::Graph(_) => Self::Numeric(m),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Exists { .. } => Self::Usage(format!("{e} (use --force to replace it)")),
            _ => Self::Data(e.to_string()),
        }
    }
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    let cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::desk(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(out: Option<&Path>, value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io_failure(dir))?;
            }
            fs::write(p, text + "\n").map_err(io_failure(p))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_chain(paths: &[PathBuf]) -> Result<Vec<Model>, Failure> {
    let models = paths.iter().map(|p| Model::load(p)).collect::<Result<Vec<_>, _>>()?;
    for pair in models.windows(2) {
        if pair[1].meta.perturb_deg > pair[0].meta.perturb_deg {
            return Err(Failure::Usage(format!(
                "checkpoints must run coarse to fine: ±{}° follows ±{}°",
                pair[1].meta.perturb_deg, pair[0].meta.perturb_deg
            )));
        }
    }
    let first = &models[0].meta.net;
    if models.iter().any(|m| (m.meta.net.image_width, m.meta.net.image_height) != (first.image_width, first.image_height)) {
        return Err(Failure::Usage("chained checkpoints must share the input resolution".into()));
    }
    Ok(models)
}

fn stages(models: &[Model]) -> Vec<&dyn RotationPredictor> {
    models.iter().map(|m| m as &dyn RotationPredictor).collect()
}

fn cmd_gen(cfg: &PipelineConfig, out: &Path, count: usize, seed: u64, force: bool) -> Result<(), Failure> {
    if count == 0 {
        return Err(Failure::Usage("count must be at least 1".into()));
    }
    if out.is_dir() && fs::read_dir(out).map_err(io_failure(out))?.next().is_some() {
        if !force {
            return Err(Failure::Usage(format!("{} is not empty (use --force to replace it)", out.display())));
        }
        for entry in fs::read_dir(out).map_err(io_failure(out))? {
            let path = entry.map_err(io_failure(out))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name == INDEX_FILE {
                fs::remove_file(&path).map_err(io_failure(&path))?;
            } else if name.starts_with("seq_") && path.is_dir() {
                fs::remove_dir_all(&path).map_err(io_failure(&path))?;
            }
        }
    }
    let seqs = (0..count)
        .map(|i| generate_sequence(&cfg.data.scene, cfg.data.perturb_deg, seed, i as u64))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let index = write_dataset(out, &seqs, seed, true)?;
    eprintln!("wrote {} sequences to {}", index.sequences.len(), out.display());
    Ok(())
}

/// Log sink that tags every record with the run's ablation settings.
struct TaggedLog {
    file: fs::File,
    ablate: Option<&'static str>,
    iters: usize,
}

impl EpochSink for TaggedLog {
    fn record(&mut self, rec: &EpochRecord) -> Result<(), PipelineError> {
        let mut v = serde_json::to_value(rec).expect("record serializes");
        v["ablate"] = json!(self.ablate);
        v["iters"] = json!(self.iters);
        writeln!(self.file, "{v}")?;
        self.file.flush()?;
        eprintln!(
            "stage {} epoch {} loss {:.4} err {:.3} deg lr {:.2e} ({:.1}s)",
            rec.stage, rec.epoch, rec.loss, rec.train_error_deg, rec.lr, rec.wall_time_s
        );
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    cfg: &PipelineConfig,
    stage: u8,
    data: &Path,
    out: &Path,
    init: Option<&Path>,
    ablate: Option<Ablation>,
    iters: Option<usize>,
    log: Option<&Path>,
) -> Result<(), Failure> {
    if stage == 2 && init.is_none() {
        return Err(Failure::Usage("stage 2 needs a stage-1 checkpoint (--init)".into()));
    }
    if stage == 2 && ablate == Some(Ablation::NoTemporal) {
        return Err(Failure::Usage(
            "the no-temporal variant is the stage-1 model; train it with --stage 1 --ablate no-temporal".into(),
        ));
    }
    if iters == Some(0) {
        return Err(Failure::Usage("--iters must be at least 1".into()));
    }
    let mut model = match init {
        Some(p) => Model::load(p)?,
        None => {
            let mut net = cfg.net.clone();
            if let Some(n) = iters {
                net.refine.iterations = n;
            }
            net.validate().map_err(|e| Failure::Usage(e.0))?;
            Model::new(&net, cfg.stage1.seed)
        }
    };
    if let Some(n) = iters.filter(|&n| n != model.iterations()) {
        return Err(Failure::Usage(format!(
            "--iters {n} conflicts with the {} iterations of the initial checkpoint",
            model.iterations()
        )));
    }
    let seqs = read_split(data, Split::Train)?;
    let prepared = PreparedSequence::prepare_all(seqs, &model.meta.net)?;
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("log.jsonl"));
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_failure(dir))?;
    }
    let mut sink = TaggedLog {
        file: fs::File::create(&log_path).map_err(io_failure(&log_path))?,
        ablate: ablate.map(|_| "no-temporal"),
        iters: model.iterations(),
    };
    match stage {
        1 => train_stage1(&mut model, &prepared, &cfg.stage1, &cfg.loss, &mut sink)?,
        _ => train_stage2(&mut model, &prepared, &cfg.stage2, &cfg.loss, &mut sink)?,
    };
    model.save(out)?;
    eprintln!("saved {} and {}", out.display(), log_path.display());
    Ok(())
}

fn cmd_calibrate(sequence: &Path, ckpts: &[PathBuf], out: Option<&Path>) -> Result<(), Failure> {
    let models = load_chain(ckpts)?;
    let seq = PreparedSequence::new(read_sequence(sequence)?, &models[0].meta.net)?;
    let cal = calibrate(&seq, &stages(&models))?;
    let error_deg = mvx_core::geometry::angular_distance(&cal.deviation, &seq.seq.delta.rotation).to_degrees();
    write_json(
        out,
        &json!({
            "sequence": sequence,
            "checkpoints": ckpts,
            "calibration": cal,
            "truth": { "deviation": seq.seq.delta.rotation, "error_deg": error_deg },
        }),
    )
}

fn cmd_eval(cfg: &PipelineConfig, data: &Path, split: SplitArg, ckpts: &[PathBuf], thresholds: Option<Vec<f64>>, out: Option<&Path>) -> Result<(), Failure> {
    let thresholds = thresholds.unwrap_or_else(|| cfg.eval.distance_thresholds.clone());
    if thresholds.is_empty() || thresholds.iter().any(|d| !(*d > 0.0)) {
        return Err(Failure::Usage("distance thresholds must be positive".into()));
    }
    let models = load_chain(ckpts)?;
    let seqs = read_split(data, split.into())?;
    let prepared = PreparedSequence::prepare_all(seqs, &models[0].meta.net)?;
    let reports = evaluate(&prepared, &stages(&models), &thresholds)?;
    let trend = distance_trend(&reports);
    let split_name = serde_json::to_value(Split::from(split)).expect("split serializes");
    write_json(
        out,
        &json!({
            "split": split_name,
            "sequences": prepared.len(),
            "checkpoints": ckpts,
            "reports": reports,
            "trend_violations": trend,
        }),
    )
}

fn cmd_overlay(cfg: &PipelineConfig, sequence: &Path, source: Source, ckpts: &[PathBuf], out: &Path) -> Result<(), Failure> {
    if source == Source::Predicted && ckpts.is_empty() {
        return Err(Failure::Usage("--source predicted needs at least one --ckpt".into()));
    }
    let seq = read_sequence(sequence)?;
    let extrinsics: Vec<_> = match source {
        Source::Gt => seq.frames.iter().map(|f| f.t_lc).collect(),
        Source::Init => seq.frames.iter().map(|f| f.t_init).collect(),
        Source::Predicted => {
            let models = load_chain(ckpts)?;
            let prepared = PreparedSequence::new(seq.clone(), &models[0].meta.net)?;
            calibrate(&prepared, &stages(&models))?.extrinsics
        }
    };
    fs::create_dir_all(out).map_err(io_failure(out))?;
    for (i, (frame, ext)) in seq.frames.iter().zip(&extrinsics).enumerate() {
        let o = overlay::render(&frame.image, &frame.points, ext, &seq.camera, cfg.net.max_range);
        let img = image::RgbImage::from_raw(o.width as u32, o.height as u32, o.rgb).expect("buffer matches size");
        let path = out.join(format!("frame_{i:03}.png"));
        img.save(&path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    }
    eprintln!("wrote {} overlays to {}", seq.frames.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Command::Config { preset } = cli.cmd {
        let cfg = match preset {
            Preset::Desk => PipelineConfig::desk(),
            Preset::Full => PipelineConfig::default(),
        };
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let cfg = load_config(cli.config.as_deref())?;
    match cli.cmd {
        Command::Config { .. } => unreachable!("handled above"),
        Command::Gen { out, count, seed, force } => cmd_gen(&cfg, &out, count, seed, force),
        Command::Train {
            stage,
            data,
            out,
            init,
            ablate,
            iters,
            log,
        } => cmd_train(&cfg, stage, &data, &out, init.as_deref(), ablate, iters, log.as_deref()),
        Command::Calibrate { sequence, ckpts, out } => cmd_calibrate(&sequence, &ckpts, out.as_deref()),
        Command::Eval {
            data,
            split,
            ckpts,
            distance_thresholds,
            out,
        } => cmd_eval(&cfg, &data, split, &ckpts, distance_thresholds, out.as_deref()),
        Command::Overlay { sequence, source, ckpts, out } => cmd_overlay(&cfg, &sequence, source, &ckpts, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
