//! `sleepstage` command-line tool.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sleepstage::config::ConfigFile;
use sleepstage::metrics::{Hypnogram, Strategy};
use sleepstage::pipeline::{load_report, Pipeline, PipelineConfig, Stage, StageStatus};
use sleepstage::render::{render_svg, render_text};
use sleepstage::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sleepstage",
    version,
    about = "Sleep staging from cardio-respiratory waveforms and motion"
)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(
        long,
        short,
        global = true,
        env = "SLEEPSTAGE_CONFIG",
        default_value = "sleepstage.cfg"
    )]
    config: PathBuf,

    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct StageOpts {
    /// Rerun even when the manifest says the outputs are current.
    #[arg(long)]
    force: bool,

    /// Override `[pipeline] strategy` (2class, 3class, 4class, 5class).
    #[arg(long)]
    strategy: Option<Strategy>,

    /// Override `[pipeline] out_dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a configuration file with every setting at its default.
    Init {
        /// Where to write it (defaults to the --config path).
        path: Option<PathBuf>,
    },
    /// Generate synthetic nights.
    Synth(StageOpts),
    /// Derive heart and breathing waveforms.
    #[command(alias = "preprocess")]
    Waveforms(StageOpts),
    /// Train the transformer.
    #[command(alias = "train")]
    Pretrain(StageOpts),
    /// Extract frozen per-epoch features and direct predictions.
    Features(StageOpts),
    /// Compute motion features from flow.
    Motion(StageOpts),
    /// Fit the random-forest transfer head.
    Transfer(StageOpts),
    /// Stage the test nights with the transfer head.
    Stage(StageOpts),
    /// Write eval/report.json.
    Eval(StageOpts),
    /// Run the configured stages in order.
    Pipeline {
        #[command(flatten)]
        opts: StageOpts,
        /// Comma-separated stages to run instead of `[pipeline] stages`.
        #[arg(long)]
        stages: Option<String>,
    },
    /// Draw a hypnogram CSV as text art and, optionally, SVG.
    Render {
        hypnogram: PathBuf,
        /// Reference hypnogram drawn as a second panel.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value = "4class")]
        strategy: Strategy,
        /// Write SVG here.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Text width in characters.
        #[arg(long, default_value_t = 100)]
        width: usize,
    },
}

fn load_config(path: &Path, opts: &StageOpts) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(s) = opts.strategy {
        cfg.strategy = s;
    }
    if let Some(dir) = &opts.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.sync();
    Ok(cfg)
}

fn print_status(results: &[(Stage, StageStatus)]) {
    for (stage, status) in results {
        let s = match status {
            StageStatus::Ran => "ran",
            StageStatus::UpToDate => "up to date",
        };
        println!("{stage}: {s}");
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |x| format!("{x:.4}"))
}

fn run(cli: Cli) -> Result<()> {
    let single = |opts: &StageOpts, stage: Stage| -> Result<()> {
        let mut p = Pipeline::new(load_config(&cli.config, opts)?)?;
        let status = p.run_stage(stage, opts.force)?;
        print_status(&[(stage, status)]);
        if stage == Stage::Eval {
            let r = load_report(&p.config.out_dir)?;
            println!(
                "{}: transfer kappa_T {} (acc {}), direct kappa_T {} (acc {})",
                r.strategy,
                fmt_opt(r.transfer.kappa_total),
                fmt_opt(r.transfer.acc_total),
                fmt_opt(r.direct.kappa_total),
                fmt_opt(r.direct.acc_total)
            );
        }
        Ok(())
    };
    match &cli.command {
        Command::Init { path } => {
            let path = path.as_ref().unwrap_or(&cli.config);
            if path.exists() {
                return Err(Error::Config(format!("{} already exists", path.display())));
            }
            let mut file = ConfigFile::default();
            PipelineConfig::default().write_config(&mut file);
            fs::write(path, file.to_text())?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Synth(o) => single(o, Stage::Synth),
        Command::Waveforms(o) => single(o, Stage::Preprocess),
        Command::Pretrain(o) => single(o, Stage::Pretrain),
        Command::Features(o) => single(o, Stage::ExtractFeatures),
        Command::Motion(o) => single(o, Stage::MotionFeatures),
        Command::Transfer(o) => single(o, Stage::TransferFit),
        Command::Stage(o) => single(o, Stage::Stage),
        Command::Eval(o) => single(o, Stage::Eval),
        Command::Pipeline { opts, stages } => {
            let mut cfg = load_config(&cli.config, opts)?;
            if let Some(list) = stages {
                cfg.stages = Stage::parse_list(list)?;
            }
            let mut p = Pipeline::new(cfg)?;
            let results = p.run(opts.force)?;
            print_status(&results);
            if results.iter().any(|(s, _)| *s == Stage::Eval) {
                let r = load_report(&p.config.out_dir)?;
                println!(
                    "{}: transfer kappa_T {}, direct kappa_T {}",
                    r.strategy,
                    fmt_opt(r.transfer.kappa_total),
                    fmt_opt(r.direct.kappa_total)
                );
            }
            Ok(())
        }
        Command::Render {
            hypnogram,
            reference,
            strategy,
            svg,
            width,
        } => {
            let read = |p: &Path| -> Result<Hypnogram> {
                Hypnogram::from_csv(&fs::read_to_string(p)?, *strategy)
            };
            let h = read(hypnogram)?;
            let r = reference.as_deref().map(read).transpose()?;
            print!("{}", render_text(&h, r.as_ref(), *width)?);
            if let Some(out) = svg {
                fs::write(out, render_svg(&h, r.as_ref())?)?;
            }
            Ok(())
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidSignal(_) => "invalid_signal",
        Error::InvalidFilter(_) => "invalid_filter",
        Error::Shape(_) => "shape",
        Error::Config(_) => "config",
        Error::NonFinite(_) => "non_finite",
        Error::Undefined(_) => "undefined",
        Error::Label(_) => "label",
        Error::Format(_) => "format",
        Error::MissingArtifact { .. } => "missing_artifact",
        Error::Diverged { .. } => "diverged",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Label(_) => 2,
        Error::MissingArtifact { .. } => 3,
        Error::Diverged { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut line = json!({ "error": error_kind(&e), "message": e.to_string() });
            match &e {
                Error::MissingArtifact { path, stage } => {
                    line["path"] = json!(path.display().to_string());
                    line["run_first"] = json!(stage);
                }
                Error::Diverged { epoch, .. } => line["epoch"] = json!(epoch),
                _ => {}
            }
            eprintln!("{line}");
            ExitCode::from(exit_code(&e))
        }
    }
}
