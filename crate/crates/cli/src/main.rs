//! `dust`: generate synthetic corpora, pre-train, fine-tune and run
//! dropout-agreement self-training from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dust::experiment::{load_config, recovery_table, Experiment, ExperimentConfig, SUMMARY_CSV};
use dust::store;
use dust::synth::Split;
use dust::textdist::EvalReport;

#[derive(Parser)]
#[command(
    name = "dust",
    version,
    about = "Dropout-uncertainty self-training for cross-lingual CTC models"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults to the reference configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Experiment directory.
    #[arg(long, global = true, default_value = "exp")]
    exp_dir: PathBuf,
    /// Global seed; every random choice derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Filtering threshold.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Number of dropout decodes per utterance.
    #[arg(long, global = true)]
    passes: Option<usize>,
    /// Beam width for decoding.
    #[arg(long, global = true)]
    beam: Option<usize>,
    /// Number of self-training rounds.
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Start from a random initialization instead of pre-training.
    #[arg(long, global = true)]
    skip_pretrain: bool,
    /// Fine-tune on labeled source data before the target language.
    #[arg(long, global = true)]
    source_supervised_first: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic source and target corpora.
    GenCorpus,
    /// Pre-train on unlabeled source frames.
    Pretrain,
    /// Fine-tune the pre-trained model on labeled target data.
    Finetune,
    /// Build a pseudo-label set with a trained teacher.
    DustFilter {
        /// Stage whose checkpoint labels the data (default: latest target stage).
        #[arg(long)]
        teacher: Option<String>,
    },
    /// Run every missing stage: data, pre-training, fine-tuning and all rounds.
    DustRun,
    /// Score completed stages on a labeled target split.
    Evaluate {
        /// Stage to evaluate (default: every completed target stage).
        #[arg(long)]
        stage: Option<String>,
        #[arg(long, value_enum, default_value_t = SplitArg::Dev)]
        split: SplitArg,
    },
    /// Recovery of the baseline-to-topline gap, per row and averaged.
    WerrReport {
        /// Baseline error rates or report files, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        baseline: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        model: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        topline: Vec<String>,
        /// Row labels, e.g. language codes.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        /// Read CER instead of WER from report files.
        #[arg(long)]
        cer: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    LabeledTrain,
    LabeledValid,
    Dev,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::LabeledTrain => Split::LabeledTrain,
            SplitArg::LabeledValid => Split::LabeledValid,
            SplitArg::Dev => Split::Dev,
        }
    }
}

impl Common {
    /// Configuration file plus overrides. Filter overrides are left out when
    /// `with_filter` is false so that ad-hoc filtering does not alter the
    /// experiment's own configuration.
    fn experiment_config(&self, with_filter: bool) -> Result<ExperimentConfig> {
        let mut cfg = load_config(self.config.as_deref()).with_context(|| {
            format!(
                "loading configuration {}",
                self.config.as_deref().unwrap_or(Path::new("<reference>")).display()
            )
        })?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.iterations {
            cfg.iterations = n;
        }
        cfg.skip_pretrain |= self.skip_pretrain;
        cfg.source_supervised_first |= self.source_supervised_first;
        if with_filter {
            self.apply_filter(&mut cfg.dust);
        }
        Ok(cfg)
    }

    fn apply_filter(&self, f: &mut dust::dust::FilterConfig) {
        if let Some(t) = self.tau {
            f.tau = t;
        }
        if let Some(r) = self.passes {
            f.passes = r;
            if !f.seeds.is_empty() && f.seeds.len() != r {
                f.seeds.clear();
            }
        }
        if let Some(b) = self.beam {
            f.beam_width = b;
        }
    }

    fn open(&self, with_filter: bool) -> Result<Experiment> {
        let cfg = self.experiment_config(with_filter)?;
        Experiment::open(&self.exp_dir, cfg).with_context(|| format!("opening {}", self.exp_dir.display()))
    }
}

fn notice_done(exp: &Experiment, stage: &str) -> bool {
    let done = exp.dir().is_done(stage);
    if done {
        println!(
            "{stage}: already complete in {}, nothing to do",
            exp.dir().root().display()
        );
    }
    done
}

fn print_report(label: &str, r: &EvalReport) {
    println!(
        "{label:<16} WER {:>7.2}  CER {:>7.2}  ({} utterances, {} words)",
        r.wer, r.cer, r.utterance_count, r.ref_words
    );
}

fn read_rate(value: &str, cer: bool) -> Result<f64> {
    if let Ok(v) = value.trim().parse::<f64>() {
        return Ok(v);
    }
    let r: EvalReport = store::read_json(Path::new(value)).with_context(|| format!("reading report {value}"))?;
    Ok(if cer { r.cer } else { r.wer })
}

fn werr_report(baseline: &[String], model: &[String], topline: &[String], labels: &[String], cer: bool) -> Result<()> {
    let n = model.len();
    if baseline.len() != n || topline.len() != n || (!labels.is_empty() && labels.len() != n) {
        bail!("--baseline, --model, --topline (and --labels) need the same number of entries");
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let label = labels.get(i).cloned().unwrap_or_else(|| format!("{}", i + 1));
        rows.push((
            label,
            read_rate(&baseline[i], cer)?,
            read_rate(&model[i], cer)?,
            read_rate(&topline[i], cer)?,
        ));
    }
    let (table, mean) = recovery_table(&rows)?;
    let metric = if cer { "CERR" } else { "WERR" };
    println!(
        "{:<10} {:>9} {:>9} {:>9} {:>8}",
        "", "baseline", "model", "topline", metric
    );
    for r in &table {
        println!(
            "{:<10} {:>9.2} {:>9.2} {:>9.2} {:>8.1}",
            r.label, r.baseline, r.model, r.topline, r.recovery
        );
    }
    if let Some(m) = mean {
        println!("{:<10} {:>9} {:>9} {:>9} {:>8.1}", "average", "", "", "", m);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::GenCorpus => {
            let exp = common.open(true)?;
            if !exp.generate_data()? {
                println!(
                    "data: already complete in {}, nothing to do",
                    exp.dir().root().display()
                );
            }
            let cfg = exp.config();
            println!(
                "source: unlabeled {}; target: labeled_train {}, labeled_valid {}, unlabeled {}, dev {}",
                cfg.data.source_unlabeled,
                cfg.data.target.labeled_train,
                cfg.data.target.labeled_valid,
                cfg.data.target.unlabeled,
                cfg.data.target.dev
            );
        }
        Command::Pretrain => {
            let exp = common.open(true)?;
            if !notice_done(&exp, "pretrain") {
                let ckpt = exp.run_pretrain()?;
                println!("pretrain: checkpoint {}", ckpt.id());
            }
        }
        Command::Finetune => {
            let exp = common.open(true)?;
            if !notice_done(&exp, "finetune") {
                let ckpt = exp.run_finetune()?;
                println!("finetune: checkpoint {}", ckpt.id());
                print_report("finetune (dev)", &exp.evaluate_stage("finetune", Split::Dev)?);
            }
        }
        Command::DustFilter { teacher } => {
            let exp = common.open(false)?;
            let teacher = match teacher.or_else(|| exp.latest_target_stage()) {
                Some(t) => t,
                None => bail!("no fine-tuned teacher yet; run `dust finetune` first"),
            };
            let mut filter = exp.config().dust.clone();
            common.apply_filter(&mut filter);
            let (set, dir) = exp.filter_only(&teacher, &filter)?;
            let s = &set.stats;
            println!(
                "teacher {teacher}: accepted {}/{} utterances ({} entries), tau {}, R {}, pseudo-label WER {}",
                s.accepted,
                s.total,
                set.entries.len(),
                s.tau,
                s.passes,
                s.pseudo_wer.map_or("n/a".to_string(), |w| format!("{w:.2}"))
            );
            println!("wrote {}", dir.display());
        }
        Command::DustRun => {
            let exp = common.open(true)?;
            let summary = exp.run_pipeline()?;
            print!("{}", summary.to_table());
            println!("wrote {}", exp.dir().root().join(SUMMARY_CSV).display());
        }
        Command::Evaluate { stage, split } => {
            let exp = common.open(true)?;
            let split: Split = split.into();
            let stages = match stage {
                Some(s) => vec![s],
                None => {
                    let mut p = exp.config().plan();
                    p.retain(|s| s != "pretrain" && exp.dir().is_done(s));
                    p
                }
            };
            if stages.is_empty() {
                bail!("no completed stage to evaluate; run `dust finetune` first");
            }
            for s in stages {
                let report = exp.evaluate_stage(&s, split)?;
                store::write_json(
                    &exp.dir().stage_dir(&s).join(format!("eval-{}.json", split.name())),
                    &report,
                )?;
                print_report(&format!("{s} ({})", split.name()), &report);
            }
        }
        Command::WerrReport {
            baseline,
            model,
            topline,
            labels,
            cer,
        } => werr_report(&baseline, &model, &topline, &labels, cer)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
