use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use probmcl::checkpoint::Checkpoint;
use probmcl::data::{self, Dataset};
use probmcl::experiment::{self, ExperimentConfig, Split, SweepParam};
use probmcl::metrics::ReportDocument;
use probmcl::Error;

/// Probabilistic multi-label contrastive learning on synthetic data.
#[derive(Parser)]
#[command(name = "probmcl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Stage one: encoder and mixture head.
    TrainContrastive {
        #[command(flatten)]
        common: Common,
    },
    /// Stage two: linear classifier on the frozen encoder.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by train-contrastive.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score a classifier checkpoint and write a metric report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file to score instead of the configured synthetic split.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// train, test or all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run the whole pipeline once per value of a loss hyperparameter.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// tau, alpha, lambda or measure.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Write the configured synthetic dataset as JSON lines.
    ExportDataset {
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Lib(Error),
    SweepFailed(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Lib(Error::Io(e))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        Error::Io(_) | Error::Format { .. } => 4,
        Error::Numeric(_) => 5,
        Error::Input(_) => 1,
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Error> {
    Checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Error> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn echo_config(dir: &Path, cfg: &ExperimentConfig) -> Result<(), Error> {
    let text = format!("# config_hash={} seed={}\n{}", cfg.hash(), cfg.seed, cfg.to_toml()?);
    write(dir, "config.toml", &text)
}

fn report_json(report: &probmcl::metrics::MetricsReport, cfg: &ExperimentConfig) -> String {
    ReportDocument::new(report, &cfg.hash(), cfg.seed, cfg.threshold).to_json()
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::TrainContrastive { common } => {
            let cfg = load_config(&common)?;
            fs::create_dir_all(&common.out)?;
            let run = experiment::train_contrastive(&cfg)?;
            run.checkpoint.save(&common.out.join("contrastive.ckpt"))?;
            write(&common.out, "contrastive_loss.csv", &experiment::loss_csv(&run.curve, &cfg.hash(), cfg.seed))?;
            echo_config(&common.out, &cfg)?;
            if let Some(last) = run.curve.last() {
                println!("contrastive: {} epochs, final total {:.6} (nll {:.6}, pcl {:.6})", last.epoch, last.total, last.nll, last.pcl);
            }
        }
        Command::TrainClassifier { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let ck = load_checkpoint(&checkpoint)?;
            fs::create_dir_all(&common.out)?;
            let run = experiment::train_classifier(&cfg, &ck)?;
            run.checkpoint.save(&common.out.join("classifier.ckpt"))?;
            write(&common.out, "classifier_loss.csv", &experiment::loss_csv(&run.curve, &cfg.hash(), cfg.seed))?;
            write(&common.out, "report.json", &report_json(&run.report, &cfg))?;
            echo_config(&common.out, &cfg)?;
            println!("classifier: held-out mAP {:.4}", run.report.metrics.map);
        }
        Command::Evaluate { common, checkpoint, dataset, split } => {
            let cfg = load_config(&common)?;
            let split: Split = split.parse()?;
            let ck = load_checkpoint(&checkpoint)?;
            let ds: Option<Dataset> = match dataset {
                Some(path) => Some(data::read_dataset(BufReader::new(File::open(&path)?))?),
                None => None,
            };
            let report = experiment::evaluate(&cfg, &ck, ds.as_ref(), split)?;
            fs::create_dir_all(&common.out)?;
            write(&common.out, "report.json", &report_json(&report, &cfg))?;
            println!("mAP {:.4}", report.metrics.map);
        }
        Command::Ablate { common, param, values } => {
            let cfg = load_config(&common)?;
            let param: SweepParam = param.parse()?;
            fs::create_dir_all(&common.out)?;
            let rows = experiment::ablate(&cfg, param, &values)?;
            let name = format!("sweep_{}.csv", param.name());
            write(&common.out, &name, &experiment::sweep_csv(param, &rows, &cfg.hash(), cfg.seed))?;
            let mut failed = 0;
            for row in &rows {
                match &row.outcome {
                    Ok((_, m)) => println!("{}={}: mAP {:.4}", param.name(), row.value, m.map),
                    Err(msg) => {
                        failed += 1;
                        eprintln!("{}={}: failed: {msg}", param.name(), row.value);
                    }
                }
            }
            if failed > 0 {
                return Err(Failure::SweepFailed(failed));
            }
        }
        Command::ExportDataset { common } => {
            let cfg = load_config(&common)?;
            fs::create_dir_all(&common.out)?;
            let ds = data::generate_synthetic(&cfg.dataset)?;
            let mut w = BufWriter::new(File::create(common.out.join("dataset.jsonl"))?);
            data::write_dataset(&ds, &mut w)?;
            w.flush()?;
            println!("{} samples", ds.samples.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::SweepFailed(n)) => {
            eprintln!("error: {n} sweep run(s) failed");
            ExitCode::from(6)
        }
    }
}
