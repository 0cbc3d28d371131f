//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands;
use crate::config::{FeatureMode, RunConfig};
use crate::error::{CliError, CliResult, ExitKind};

#[derive(Debug, Parser)]
#[command(name = "holo", version, about = "Synthetic PET/CT pre-training, evaluation and organ atlas pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run config; missing keys take their defaults.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; the resolved config is echoed here first.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Features {
    Suv,
    Embedding,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a dataset of phantom studies (or a healthy cohort).
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of studies.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Pre-train from scratch, writing a loss log and checkpoint.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Sliding-window lesion segmentation. The predictor is a PET-uptake
    /// baseline that ignores organs with physiological uptake; a checkpoint,
    /// if given, is only validated.
    InferSeg {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score predicted masks against lesion ground truth (DSC/FNV/FPV CSV).
    EvalSeg {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Directory of `<study id>/pred` masks.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value = "holo")]
        method: String,
    },
    /// Greedy report generation from images.
    GenReport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Score generated reports (BLEU-1..4, ROUGE-L CSV).
    EvalReport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// JSON-lines file written by gen-report.
        #[arg(long)]
        reports: PathBuf,
        #[arg(long, default_value = "holo")]
        method: String,
    },
    /// Organ covariance, covariance differences, correlation network and
    /// body-system trends over a cohort.
    Atlas {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Needed for embedding features.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Minimum |r| of a network edge [config default 0.5].
        #[arg(long)]
        r_threshold: Option<f64>,
        /// FDR level of the Benjamini-Hochberg correction [config default 0.05].
        #[arg(long)]
        fdr: Option<f64>,
        /// Class name to drop before analysis; repeatable.
        #[arg(long = "exclude-organ")]
        exclude_organ: Vec<String>,
        /// Skip the extra covariance differences without the urinary bladder.
        #[arg(long)]
        no_bladder_comparison: bool,
        #[arg(long, value_enum)]
        features: Option<Features>,
        /// Split the middle age stratum after this age.
        #[arg(long)]
        split_middle_at: Option<u32>,
        /// Covariance of z-scored features.
        #[arg(long)]
        standardize: bool,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Pretrain { common, .. }
            | Command::InferSeg { common, .. }
            | Command::EvalSeg { common, .. }
            | Command::GenReport { common, .. }
            | Command::EvalReport { common, .. }
            | Command::Atlas { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Pretrain { .. } => "pretrain",
            Command::InferSeg { .. } => "infer-seg",
            Command::EvalSeg { .. } => "eval-seg",
            Command::GenReport { .. } => "gen-report",
            Command::EvalReport { .. } => "eval-report",
            Command::Atlas { .. } => "atlas",
        }
    }
}

fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{what} {} is not a directory", path.display())))
    }
}

/// Resolves the config, echoes it and runs the command.
pub fn execute(cli: Cli) -> CliResult<()> {
    let cmd = cli.command;
    let common = cmd.common();
    let (mut cfg, raw) = RunConfig::load(common.config.as_deref())?;
    let model_set = raw.get("model").is_some();
    cfg.command = cmd.name().to_string();
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = common.out.clone();
    match &cmd {
        Command::Synth { n, .. } => {
            if let Some(n) = n {
                cfg.synth.n = *n;
            }
        }
        Command::Pretrain { steps, data, .. } => {
            require_dir(data, "data directory")?;
            if let Some(s) = steps {
                cfg.train.steps = *s;
            }
        }
        Command::GenReport { max_len, .. } => {
            if let Some(m) = max_len {
                cfg.report.max_len = *m;
            }
        }
        Command::Atlas {
            r_threshold,
            fdr,
            exclude_organ,
            no_bladder_comparison,
            features,
            split_middle_at,
            standardize,
            ..
        } => {
            let a = &mut cfg.atlas;
            if let Some(r) = r_threshold {
                a.r_threshold = *r;
            }
            if let Some(f) = fdr {
                a.fdr_alpha = *f;
            }
            a.exclude_organs.extend(exclude_organ.iter().cloned());
            a.bladder_comparison &= !no_bladder_comparison;
            if let Some(f) = features {
                a.features = match f {
                    Features::Suv => FeatureMode::Suv,
                    Features::Embedding => FeatureMode::Embedding,
                };
            }
            if split_middle_at.is_some() {
                a.strata.middle_split = *split_middle_at;
            }
            a.standardize |= standardize;
        }
        _ => {}
    }
    // Checkpoints can refine the model section, so load them before echoing.
    let checkpoint = match &cmd {
        Command::InferSeg { checkpoint: Some(p), .. } | Command::Atlas { checkpoint: Some(p), .. } => Some(p),
        Command::GenReport { checkpoint, .. } => Some(checkpoint),
        _ => None,
    };
    let model = checkpoint
        .map(|p| commands::resolve_checkpoint(&mut cfg, model_set, p))
        .transpose()?;
    cfg.validate()?;
    cfg.echo(&out)?;

    match &cmd {
        Command::Synth { .. } => {
            commands::synth(&cfg, &out)?;
        }
        Command::Pretrain { data, .. } => {
            let s = commands::pretrain(&cfg, data, &out)?;
            println!("trained {} steps: total {:.6} -> {:.6}", s.steps, s.initial.total, s.last.total);
        }
        Command::InferSeg { data, .. } => {
            let n = commands::infer_seg(&cfg, data, &out)?;
            println!("segmented {n} studies");
        }
        Command::EvalSeg { data, pred, method, .. } => {
            print!("{}", commands::eval_seg(&cfg, data, pred, &out, method)?);
        }
        Command::GenReport { data, .. } => {
            let r = commands::gen_report(&cfg, model.as_ref().expect("loaded above"), data, &out)?;
            println!("generated {} reports", r.len());
        }
        Command::EvalReport { data, reports, method, .. } => {
            print!("{}", commands::eval_report(data, reports, &out, method)?);
        }
        Command::Atlas { data, .. } => {
            let s = commands::atlas(&cfg, data, &out, model.as_ref())?;
            println!(
                "atlas over {} subjects and {} organs: {} network edges",
                s.subjects,
                s.organs.len(),
                s.edges
            );
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { ExitKind::Usage as i32 } else { ExitKind::Success as i32 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => ExitKind::Success as i32,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
