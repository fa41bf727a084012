use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gpcn::config::{RunConfig, TrainMode};
use gpcn::dose::{self, KTable};
use gpcn::phantom::{self, Split};
use gpcn::pipeline;
use gpcn::Result;

#[derive(Parser)]
#[command(name = "gpcn", version, about = "Dual-domain PET correction: data, training, evaluation and dose tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the data, model and training seeds.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let cfg = match self.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the phantom dataset described by the config.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (default: data.root from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write checkpoints plus a CSV log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Dataset directory (default: data.root from the config).
        #[arg(long)]
        data: Option<PathBuf>,
        /// joint or single
        #[arg(long)]
        mode: Option<String>,
        /// Continue from this checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on every family of a dataset split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// train or test (default: eval.split from the config).
        #[arg(long)]
        split: Option<String>,
    },
    /// Train the full model and both ablations, then tabulate them.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Effective dose from CTDIvol, scan length and an age-band k-table.
    Dose {
        /// TSV with header; columns ctdi_vol, scan_length, age_band.
        #[arg(long)]
        scans: PathBuf,
        /// TSV of age band and k factor.
        #[arg(long)]
        k_table: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export figure data (depth profile, region bias, joint histogram, spectra).
    PlotData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
    },
}

fn data_dir(flag: &Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.clone().unwrap_or_else(|| cfg.data.root.clone())
}

fn with_split(mut cfg: RunConfig, split: &Option<String>) -> Result<RunConfig> {
    if let Some(s) = split {
        Split::parse(s)?;
        cfg.eval.split = s.clone();
    }
    Ok(cfg)
}

fn run_dose(scans: &Path, k_table: &Path, out: &Path) -> Result<()> {
    let table = KTable::load(k_table)?;
    let records = dose::compute_all(&dose::parse_scans(&fs::read_to_string(scans)?)?, &table)?;
    let summary = dose::aggregate(&records)?;
    let status = if table.is_non_authoritative() { "non-authoritative" } else { "user-supplied" };
    if table.is_non_authoritative() {
        log::warn!("k-table {} is marked non-authoritative; doses are illustrative", k_table.display());
    }
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("dose_records.csv"))?;
    for r in &records {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("dose_summary.csv"))?;
    w.write_record(["n", "mean", "median", "min", "max", "k_table"])?;
    w.write_record([
        summary.n.to_string(),
        summary.mean.to_string(),
        summary.median.to_string(),
        summary.min.to_string(),
        summary.max.to_string(),
        status.to_string(),
    ])?;
    w.flush()?;
    println!("{} records, mean effective dose {:.4} mSv ({status} k-table)", summary.n, summary.mean);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, out } => {
            let cfg = common.resolve()?;
            let root = data_dir(&out, &cfg);
            let entries = phantom::make_dataset(
                &root,
                &cfg.data_families()?,
                cfg.data.count,
                cfg.data.height,
                cfg.data.width,
                cfg.data.seed,
            )?;
            cfg.write(&root.join(pipeline::CONFIG_FILE))?;
            println!("wrote {} samples to {}", entries.len(), root.display());
        }
        Command::Train { common, out, data, mode, resume } => {
            let mut cfg = common.resolve()?;
            if let Some(m) = mode {
                cfg.train.mode = TrainMode::parse(&m)?;
            }
            let r = pipeline::train(&cfg, &data_dir(&data, &cfg), &out, resume.as_deref())?;
            match r.last_loss {
                Some(l) => println!("trained {} params for {} iterations, final loss {:.6}", r.num_params, r.iterations, l.l_total),
                None => println!("no iterations run; checkpoint holds the initialization"),
            }
        }
        Command::Eval { common, checkpoint, out, data, split } => {
            let cfg = with_split(common.resolve()?, &split)?;
            let (model, _) = pipeline::load_checkpoint(&checkpoint)?;
            let report = pipeline::evaluate(&model, &data_dir(&data, &cfg), &cfg, None)?;
            pipeline::write_eval_bundle(&report, &out)?;
            cfg.write(&out.join(pipeline::CONFIG_FILE))?;
            for fe in &report.families {
                println!(
                    "{}: PSNR nasc {:.3} gpcn {:.3}",
                    fe.family,
                    fe.mean_metric(0, |m| m.psnr),
                    fe.mean_metric(1, |m| m.psnr)
                );
            }
        }
        Command::Ablate { common, out, data } => {
            let cfg = common.resolve()?;
            let r = pipeline::ablate(&cfg, &data_dir(&data, &cfg), &out)?;
            for v in gpcn::model::Variant::ALL {
                println!("{}: PSNR {:.3}", v.label(), r.mean(v, |m| m.psnr));
            }
        }
        Command::Dose { scans, k_table, out } => run_dose(&scans, &k_table, &out)?,
        Command::PlotData { common, checkpoint, out, data, split } => {
            let cfg = with_split(common.resolve()?, &split)?;
            let (model, _) = pipeline::load_checkpoint(&checkpoint)?;
            pipeline::plot_data(&model, &data_dir(&data, &cfg), &cfg, &out)?;
            cfg.write(&out.join(pipeline::CONFIG_FILE))?;
            println!("figure data written to {}", out.display());
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
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

