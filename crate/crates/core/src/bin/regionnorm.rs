use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use regionnorm::inpaintnet::Architecture;
use regionnorm::masks::{CoverageInterval, MaskKind};
use regionnorm::pipeline::{
    self, DataSource, EvalOptions, EvalOutcome, ExperimentConfig, MaskMode, MaskSource, SyntheticDatasetSpec,
};
use regionnorm::Result;

#[derive(Parser)]
#[command(name = "regionnorm", version, about = "Region-normalized inpainting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Regular,
    Irregular,
    External,
}

impl From<MaskArg> for MaskMode {
    fn from(m: MaskArg) -> Self {
        match m {
            MaskArg::Regular => MaskMode::Regular,
            MaskArg::Irregular => MaskMode::Irregular,
            MaskArg::External => MaskMode::External,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one generator from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Extra `key=value` overrides applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on a directory of images.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Coverage interval `lo-hi`; repeatable. Defaults to 10% bins up to 60%.
        #[arg(long = "mask-interval")]
        mask_interval: Vec<CoverageInterval>,
        #[arg(long, value_enum, default_value = "irregular")]
        mask_kind: MaskArg,
        #[arg(long)]
        mask_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        mask_seed: u64,
        /// Comma-separated RN-L thresholds to sweep instead of per-image rows.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
    },
    /// Inpaint a single image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value = "inpainted.png")]
        out: PathBuf,
        /// Also write RN-L response maps and masks here.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
    },
    /// Measure the mean/variance shift that hole filling causes.
    ShiftAnalyze {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.1-0.2,0.2-0.3,0.3-0.4,0.4-0.5,0.5-0.6")]
        intervals: Vec<CoverageInterval>,
        /// Use the PNG masks of this directory instead of generated ones.
        #[arg(long)]
        mask_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 255.0)]
        fill: f64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "shift.csv")]
        out: PathBuf,
    },
    /// Write generated masks as PNGs.
    MaskGen {
        #[arg(long, value_enum, default_value = "irregular")]
        kind: MaskArg,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value = "0.1-0.2")]
        interval: CoverageInterval,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "masks")]
        out: PathBuf,
    },
    /// Write a synthetic image set described by a key=value spec file.
    SynthData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
    },
    /// Train baseline and arch1..arch6 under one config and tabulate them.
    Table4 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train a chosen list of architectures under one config.
    Ablation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "arch5,baseline,bn,none")]
        architectures: Vec<Architecture>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn load_config(path: &PathBuf, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut text = std::fs::read_to_string(path).map_err(|e| regionnorm::Error::Io {
        path: path.clone(),
        source: e,
    })?;
    for o in overrides {
        text.push('\n');
        text.push_str(o);
    }
    ExperimentConfig::parse(&text)
}

fn read_spec(path: &PathBuf) -> Result<SyntheticDatasetSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| regionnorm::Error::Io {
        path: path.clone(),
        source: e,
    })?;
    SyntheticDatasetSpec::parse(&text)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let r = pipeline::run_train(&cfg)?;
            println!(
                "psnr {:.3} ssim {:.4} l1 {:.3}% -> {}",
                r.psnr,
                r.ssim,
                r.l1,
                r.checkpoint.display()
            );
        }
        Command::Eval {
            checkpoint,
            dataset,
            mask_interval,
            mask_kind,
            mask_dir,
            mask_seed,
            thresholds,
            out,
        } => {
            let intervals = if mask_interval.is_empty() {
                CoverageInterval::deciles()[1..].to_vec()
            } else {
                mask_interval
            };
            let opts = EvalOptions {
                checkpoint,
                data: DataSource::Directory(dataset),
                mask_mode: mask_kind.into(),
                mask_dir,
                intervals,
                mask_seed,
                thresholds,
                out: out.clone(),
            };
            match pipeline::run_eval(&opts)? {
                EvalOutcome::Metrics(rows) => println!("{} rows -> {}", rows.len(), out.display()),
                EvalOutcome::Sweep(rows) => {
                    for r in &rows {
                        println!(
                            "t={} psnr {:.3} ssim {:.4} l1 {:.3}% rn-l coverage {:.4}",
                            r.threshold, r.psnr, r.ssim, r.l1, r.rnl_coverage_first
                        );
                    }
                }
            }
        }
        Command::Infer {
            checkpoint,
            image,
            mask,
            out,
            dump_dir,
        } => {
            pipeline::run_infer(&checkpoint, &image, &mask, &out, dump_dir.as_deref())?;
            println!("{}", out.display());
        }
        Command::ShiftAnalyze {
            dataset,
            intervals,
            mask_dir,
            fill,
            size,
            seed,
            out,
        } => {
            if !dataset.is_dir() {
                return Err(regionnorm::Error::Io {
                    path: dataset,
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
                });
            }
            let ds = pipeline::data::ingest_dataset(&dataset, size)?;
            let mode = if mask_dir.is_some() { MaskMode::External } else { MaskMode::Irregular };
            let masks = MaskSource::new(mode, size, intervals, seed, mask_dir.as_deref())?;
            let rows = pipeline::run_shift_analyze(&ds, &masks, fill, &out)?;
            println!("{} rows -> {}", rows.len(), out.display());
        }
        Command::MaskGen {
            kind,
            count,
            interval,
            size,
            seed,
            out,
        } => {
            let kind = match kind {
                MaskArg::Regular => MaskKind::Regular,
                MaskArg::Irregular => MaskKind::Irregular,
                MaskArg::External => {
                    return Err(regionnorm::Error::Config("mask-gen cannot generate external masks".into()))
                }
            };
            let cov = pipeline::run_mask_gen(kind, count, interval, size, seed, &out)?;
            let mean = cov.iter().sum::<f64>() / cov.len().max(1) as f64;
            println!("{count} masks, mean coverage {mean:.4} -> {}", out.display());
        }
        Command::SynthData { spec, out } => {
            let spec = read_spec(&spec)?;
            pipeline::run_synth_data(&spec, &out)?;
            println!("{} images -> {}", spec.count, out.display());
        }
        Command::Table4 { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            for r in pipeline::run_table4(&cfg)? {
                println!("{:<9} psnr {:.3} ssim {:.4} l1 {:.3}%", r.architecture, r.psnr, r.ssim, r.l1);
            }
        }
        Command::Ablation {
            config,
            architectures,
            overrides,
        } => {
            let cfg = load_config(&config, &overrides)?;
            for r in pipeline::run_ablation(&cfg, &architectures, "ablation.csv")? {
                println!("{:<9} psnr {:.3} ssim {:.4} l1 {:.3}%", r.architecture, r.psnr, r.ssim, r.l1);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
