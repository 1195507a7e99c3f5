//! End-to-end experiments: configuration, synthetic data generation and the
//! resumable pretrain → finetune → N × self-training pipeline.

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::ctc::Alphabet;
use crate::dust::{build_pseudoset, dust_iterate, evaluate, DustData, FilterConfig, PseudoLabelSet};
use crate::error::{Error, Result};
use crate::numkit::{derive_seed, Activation, EncoderModel, Matrix, ModelCheckpoint, ModelDims};
use crate::store::{self, ExperimentDir};
use crate::synth::{
    generate_language, synthesize_corpus, Corpus, LanguageConfig, NearestPrototypeDecoder, Split, SplitBudgets,
};
use crate::textdist::{mean_recovery, wer_cer, werr, EvalReport};
use crate::train::{finetune, pretrain_masked_reconstruction, TrainConfig, TrainLog, TrainingExample};

pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.json";
pub const LOG_FILE: &str = "log.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
const DATA_STAGE: &str = "data";
const ALPHABETS_FILE: &str = "alphabets.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub context: usize,
    pub hidden: usize,
    pub encoder_layers: usize,
    pub activation: Activation,
    pub dropout_p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            context: 5,
            hidden: 48,
            encoder_layers: 2,
            activation: Activation::Tanh,
            dropout_p: 0.1,
        }
    }
}

/// Utterance counts. The target splits default to a 1:10 labeled:unlabeled
/// ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source_unlabeled: usize,
    /// Only used by the source-supervised-first recipe.
    pub source_labeled_train: usize,
    pub source_labeled_valid: usize,
    pub target: SplitBudgets,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source_unlabeled: 600,
            source_labeled_train: 200,
            source_labeled_valid: 20,
            target: SplitBudgets {
                labeled_train: 30,
                labeled_valid: 20,
                unlabeled: 300,
                dev: 100,
            },
        }
    }
}

/// Optional reference WERs for recovery reporting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub baseline_wer: Option<f64>,
    pub topline_wer: Option<f64>,
}

/// Everything an experiment depends on. `Default` is the reference
/// configuration. Training seeds are overwritten from `seed` by
/// [`ExperimentConfig::resolve`], so a single number fixes every random
/// choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub iterations: usize,
    pub skip_pretrain: bool,
    pub source_supervised_first: bool,
    pub source: LanguageConfig,
    pub target: LanguageConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Also sets the beam width used for evaluation.
    pub dust: FilterConfig,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let source = LanguageConfig {
            letters: "abcdefghijkl".into(),
            frame_dim: 16,
            prototype_scale: 0.6,
            min_separation: 0.6,
            frames_per_char: (2, 4),
            noise_sigma: 0.3,
            nuisance_dims: 8,
            nuisance_sigma: 0.4,
            channel_shift: 0.0,
            channel_offset: 0.0,
            shared_fraction: 0.0,
            word_len: (2, 5),
            words_per_utterance: (2, 4),
        };
        let target = LanguageConfig {
            letters: "mnopqrstuvwx".into(),
            shared_fraction: 0.5,
            channel_shift: 0.2,
            channel_offset: 0.3,
            ..source.clone()
        };
        ExperimentConfig {
            seed: 42,
            iterations: 3,
            skip_pretrain: false,
            source_supervised_first: false,
            source,
            target,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig {
                max_lr: 3e-3,
                warmup_steps: 50,
                freeze_steps: 0,
                epochs: 10,
                mask_span: 1,
                mask_target_fraction: 0.3,
                frame_budget_per_batch: 200,
                grad_accumulation: 1,
                seed: 0,
            },
            finetune: TrainConfig {
                max_lr: 3e-3,
                warmup_steps: 50,
                freeze_steps: 20,
                epochs: 30,
                mask_span: 1,
                mask_target_fraction: 0.1,
                frame_budget_per_batch: 200,
                grad_accumulation: 1,
                seed: 0,
            },
            dust: FilterConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Validates and fills in the derived training seeds.
    pub fn resolve(mut self) -> Result<Self> {
        self.source.validate()?;
        self.target.validate()?;
        if self.source.frame_dim != self.target.frame_dim {
            return Err(Error::Config(format!(
                "source frame_dim {} differs from target frame_dim {}",
                self.source.frame_dim, self.target.frame_dim
            )));
        }
        self.pretrain.seed = derive_seed(self.seed, "pretrain");
        self.finetune.seed = derive_seed(self.seed, "finetune");
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.dust.validate()?;
        self.model_dims(2)?;
        if let (Some(b), Some(t)) = (self.report.baseline_wer, self.report.topline_wer) {
            werr(b, b, t)?;
        }
        if self.data.source_unlabeled == 0 && !self.skip_pretrain {
            return Err(Error::Config(
                "data.source_unlabeled must be positive unless pre-training is skipped".into(),
            ));
        }
        Ok(self)
    }

    fn model_dims(&self, vocab: usize) -> Result<ModelDims> {
        let dims = ModelDims {
            frame_dim: self.source.frame_dim,
            context: self.model.context,
            hidden: self.model.hidden,
            encoder_layers: self.model.encoder_layers,
            vocab,
        };
        dims.validate()?;
        Ok(dims)
    }

    /// Stage names in execution order.
    pub fn plan(&self) -> Vec<String> {
        let mut p = vec!["pretrain".to_string()];
        if self.source_supervised_first {
            p.push("source-finetune".into());
        }
        p.push("finetune".into());
        p.extend((1..=self.iterations).map(|n| format!("dust-{n}")));
        p
    }

    /// Equal apart from the iteration count, which may grow between runs.
    fn compatible_with(&self, other: &ExperimentConfig) -> bool {
        let mut a = self.clone();
        a.iterations = other.iterations;
        a.report = other.report.clone();
        &a == other
    }
}

/// Loads `path` (or the reference configuration) without resolving it.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => store::read_toml(p),
        None => Ok(ExperimentConfig::default()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alphabets {
    pub source: Alphabet,
    pub target: Alphabet,
}

/// An experiment directory bound to its resolved configuration.
pub struct Experiment {
    dir: ExperimentDir,
    cfg: ExperimentConfig,
}

fn producer(stage: &str) -> &'static str {
    match stage {
        DATA_STAGE => "gen-corpus",
        "pretrain" => "pretrain",
        "source-finetune" | "finetune" => "finetune",
        _ => "dust-run",
    }
}

impl Experiment {
    /// Opens or creates `root`. The resolved configuration is written to
    /// `config.toml` before anything else; an existing directory must have
    /// been created with a compatible configuration.
    pub fn open(root: &Path, cfg: ExperimentConfig) -> Result<Self> {
        let cfg = cfg.resolve()?;
        let dir = ExperimentDir::create(root)?;
        let path = root.join(CONFIG_FILE);
        if path.exists() {
            let existing: ExperimentConfig = store::read_toml(&path)?;
            if !cfg.compatible_with(&existing) {
                return Err(Error::Inconsistent(format!(
                    "{} was created with a different configuration; use a fresh --exp-dir",
                    root.display()
                )));
            }
        }
        store::write_toml(&path, &cfg)?;
        Ok(Experiment { dir, cfg })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn dir(&self) -> &ExperimentDir {
        &self.dir
    }

    fn data_dir(&self, language: &str) -> std::path::PathBuf {
        self.dir.stage_dir(DATA_STAGE).join(language)
    }

    /// Generates both languages and writes every split. A no-op when the
    /// data stage is already complete.
    pub fn generate_data(&self) -> Result<bool> {
        if self.dir.is_done(DATA_STAGE) {
            info!("data already generated");
            return Ok(false);
        }
        let cfg = &self.cfg;
        let src = generate_language(derive_seed(cfg.seed, "source-language"), &cfg.source, None)?;
        let tgt = generate_language(derive_seed(cfg.seed, "target-language"), &cfg.target, Some(&src))?;
        let src_budgets = SplitBudgets {
            labeled_train: if cfg.source_supervised_first {
                cfg.data.source_labeled_train
            } else {
                0
            },
            labeled_valid: if cfg.source_supervised_first {
                cfg.data.source_labeled_valid
            } else {
                0
            },
            unlabeled: cfg.data.source_unlabeled,
            dev: 0,
        };
        let src_corpus = synthesize_corpus(&src, &src_budgets, derive_seed(cfg.seed, "source-corpus"), "src")?;
        let tgt_corpus = synthesize_corpus(&tgt, &cfg.data.target, derive_seed(cfg.seed, "target-corpus"), "tgt")?;
        for split in Split::ALL {
            store::write_corpus(&self.data_dir("source"), src_corpus.split(split))?;
            store::write_corpus(&self.data_dir("target"), tgt_corpus.split(split))?;
        }
        let oracle = NearestPrototypeDecoder::new(&tgt);
        let hyps: Vec<String> = tgt_corpus
            .dev
            .utterances()
            .iter()
            .map(|u| oracle.decode(&u.frames))
            .collect();
        if !hyps.is_empty() {
            let report = wer_cer(&hyps, &tgt_corpus.dev.transcripts(), tgt.alphabet.separator())?;
            store::write_json(&self.dir.stage_dir(DATA_STAGE).join("oracle_dev.json"), &report)?;
        }
        store::write_json(
            &self.dir.stage_dir(DATA_STAGE).join(ALPHABETS_FILE),
            &Alphabets {
                source: src.alphabet,
                target: tgt.alphabet,
            },
        )?;
        self.dir.mark_done(DATA_STAGE, None)?;
        info!("generated data under {}", self.dir.stage_dir(DATA_STAGE).display());
        Ok(true)
    }

    fn require_data(&self) -> Result<()> {
        if self.dir.is_done(DATA_STAGE) {
            Ok(())
        } else {
            Err(Error::MissingStage {
                stage: DATA_STAGE.into(),
                producer: producer(DATA_STAGE).into(),
            })
        }
    }

    pub fn alphabets(&self) -> Result<Alphabets> {
        self.require_data()?;
        store::read_json(&self.dir.stage_dir(DATA_STAGE).join(ALPHABETS_FILE))
    }

    /// A target (`"target"`) or source (`"source"`) split.
    pub fn corpus(&self, language: &str, split: Split) -> Result<Corpus> {
        self.require_data()?;
        store::read_corpus(&self.data_dir(language), split)
    }

    fn examples(&self, language: &str, split: Split, alphabet: &Alphabet) -> Result<Vec<TrainingExample>> {
        self.corpus(language, split)?.training_examples(alphabet)
    }

    pub fn checkpoint(&self, stage: &str) -> Result<ModelCheckpoint> {
        self.dir.load_checkpoint(stage, producer(stage))
    }

    fn finish_stage(&self, stage: &str, ckpt: &ModelCheckpoint, log: &TrainLog) -> Result<()> {
        self.dir.save_checkpoint(stage, ckpt)?;
        store::write_json(&self.dir.stage_dir(stage).join(LOG_FILE), log)?;
        self.dir.mark_done(stage, Some(ckpt.id()))
    }

    fn write_stage_config<T: Serialize>(&self, stage: &str, value: &T) -> Result<()> {
        store::write_toml(&self.dir.stage_dir(stage).join(CONFIG_FILE), value)
    }

    /// Masked-frame reconstruction on the source unlabeled split. With
    /// `skip_pretrain` the stage stores the random initialization.
    pub fn run_pretrain(&self) -> Result<ModelCheckpoint> {
        const STAGE: &str = "pretrain";
        if self.dir.is_done(STAGE) {
            return self.checkpoint(STAGE);
        }
        self.require_data()?;
        let mut cfg = self.cfg.pretrain.clone();
        if self.cfg.skip_pretrain {
            cfg.epochs = 0;
        }
        #[derive(Serialize)]
        struct StageConfig<'a> {
            model: &'a ModelConfig,
            train: &'a TrainConfig,
        }
        self.write_stage_config(
            STAGE,
            &StageConfig {
                model: &self.cfg.model,
                train: &cfg,
            },
        )?;
        let init = EncoderModel::new(
            self.cfg.model_dims(2)?,
            self.cfg.model.activation,
            self.cfg.model.dropout_p,
            derive_seed(self.cfg.seed, "model-init"),
        )?;
        let frames: Vec<Matrix<f64>> = self
            .corpus("source", Split::Unlabeled)?
            .utterances()
            .iter()
            .map(|u| u.frames.cast())
            .collect();
        info!("pretrain: {} source utterances, {} epochs", frames.len(), cfg.epochs);
        let outcome = if frames.is_empty() && cfg.epochs == 0 {
            crate::train::PretrainOutcome {
                checkpoint: ModelCheckpoint::new(init, STAGE, None, cfg.seed, None)?,
                log: TrainLog::default(),
            }
        } else {
            pretrain_masked_reconstruction(init, &frames, &cfg)?
        };
        self.finish_stage(STAGE, &outcome.checkpoint, &outcome.log)?;
        Ok(outcome.checkpoint)
    }

    /// The initialization every target fine-tune starts from.
    pub fn f0(&self) -> Result<ModelCheckpoint> {
        if self.cfg.source_supervised_first {
            self.checkpoint("source-finetune")
        } else {
            self.checkpoint("pretrain")
        }
    }

    fn run_source_finetune(&self) -> Result<ModelCheckpoint> {
        const STAGE: &str = "source-finetune";
        if self.dir.is_done(STAGE) {
            return self.checkpoint(STAGE);
        }
        let init = self.checkpoint("pretrain")?;
        let alphabet = self.alphabets()?.source;
        let train = self.examples("source", Split::LabeledTrain, &alphabet)?;
        let valid_corpus = self.corpus("source", Split::LabeledValid)?;
        let valid = valid_corpus.training_examples(&alphabet)?;
        self.write_stage_config(STAGE, &self.cfg.finetune)?;
        info!("source-finetune: {} labeled source utterances", train.len());
        let out = finetune(&init, &train, &valid, &alphabet, &self.cfg.finetune, STAGE)?;
        if !valid_corpus.is_empty() {
            let report = evaluate(&out.checkpoint, &valid_corpus, self.cfg.dust.beam_width)?;
            store::write_json(&self.dir.stage_dir(STAGE).join(REPORT_FILE), &report)?;
        }
        self.finish_stage(STAGE, &out.checkpoint, &out.log)?;
        Ok(out.checkpoint)
    }

    fn write_dev_report(&self, stage: &str, ckpt: &ModelCheckpoint) -> Result<EvalReport> {
        let dev = self.corpus("target", Split::Dev)?;
        let report = evaluate(ckpt, &dev, self.cfg.dust.beam_width)?;
        store::write_json(&self.dir.stage_dir(stage).join(REPORT_FILE), &report)?;
        Ok(report)
    }

    /// CTC fine-tuning on the labeled target data (running the
    /// source-supervised stage first when configured).
    pub fn run_finetune(&self) -> Result<ModelCheckpoint> {
        const STAGE: &str = "finetune";
        if self.dir.is_done(STAGE) {
            return self.checkpoint(STAGE);
        }
        if self.cfg.source_supervised_first {
            self.run_source_finetune()?;
        }
        let init = self.f0()?;
        let alphabet = self.alphabets()?.target;
        let train = self.examples("target", Split::LabeledTrain, &alphabet)?;
        let valid = self.examples("target", Split::LabeledValid, &alphabet)?;
        self.write_stage_config(STAGE, &self.cfg.finetune)?;
        info!("finetune: {} labeled target utterances", train.len());
        let out = finetune(&init, &train, &valid, &alphabet, &self.cfg.finetune, STAGE)?;
        self.write_dev_report(STAGE, &out.checkpoint)?;
        self.finish_stage(STAGE, &out.checkpoint, &out.log)?;
        Ok(out.checkpoint)
    }

    /// Self-training round `n`; the teacher is the previous round's student
    /// (or the fine-tuned model for `n = 1`).
    pub fn run_dust(&self, n: usize) -> Result<ModelCheckpoint> {
        let stage = format!("dust-{n}");
        if self.dir.is_done(&stage) {
            return self.checkpoint(&stage);
        }
        let teacher_stage = if n <= 1 {
            "finetune".to_string()
        } else {
            format!("dust-{}", n - 1)
        };
        let teacher = self.checkpoint(&teacher_stage)?;
        let f0 = self.f0()?;
        let alphabet = self.alphabets()?.target;
        let train = self.examples("target", Split::LabeledTrain, &alphabet)?;
        let valid = self.examples("target", Split::LabeledValid, &alphabet)?;
        let unlabeled = self.corpus("target", Split::Unlabeled)?;
        #[derive(Serialize)]
        struct StageConfig<'a> {
            teacher: &'a str,
            train: &'a TrainConfig,
            filter: &'a FilterConfig,
        }
        self.write_stage_config(
            &stage,
            &StageConfig {
                teacher: &teacher_stage,
                train: &self.cfg.finetune,
                filter: &self.cfg.dust,
            },
        )?;
        let data = DustData {
            labeled_train: &train,
            labeled_valid: &valid,
            unlabeled: &unlabeled,
            alphabet: &alphabet,
        };
        let out = dust_iterate(&f0, &teacher, &data, &self.cfg.dust, &self.cfg.finetune, &stage)?;
        info!(
            "{stage}: accepted {}/{} utterances",
            out.pseudo.stats.accepted, out.pseudo.stats.total
        );
        store::write_pseudo_set(&self.dir.stage_dir(&stage), &out.pseudo)?;
        self.write_dev_report(&stage, &out.student.checkpoint)?;
        self.finish_stage(&stage, &out.student.checkpoint, &out.student.log)?;
        Ok(out.student.checkpoint)
    }

    /// Runs every missing stage in order, then writes the summary.
    pub fn run_pipeline(&self) -> Result<Summary> {
        self.generate_data()?;
        let resume = self.dir.resume_scan(&self.cfg.plan())?;
        if let Some(next) = &resume.next {
            info!("resuming at {next}");
        }
        self.run_pretrain()?;
        self.run_finetune()?;
        for n in 1..=self.cfg.iterations {
            self.run_dust(n)?;
        }
        self.write_summary()
    }

    /// Filters the unlabeled target split with the checkpoint of `teacher`
    /// and the given settings, writing the set under
    /// `dust-filter/<teacher>-tau<τ>-r<R>-b<beam>/`.
    pub fn filter_only(&self, teacher: &str, filter: &FilterConfig) -> Result<(PseudoLabelSet, std::path::PathBuf)> {
        let ckpt = self.checkpoint(teacher)?;
        let out = self.dir.root().join("dust-filter").join(format!(
            "{teacher}-tau{}-r{}-b{}",
            filter.tau, filter.passes, filter.beam_width
        ));
        if out.join(store::DONE_MARKER).is_file() {
            return Ok((store::read_pseudo_set(&out)?, out));
        }
        let unlabeled = self.corpus("target", Split::Unlabeled)?;
        let (set, _) = build_pseudoset(&ckpt, &unlabeled, filter)?;
        store::write_pseudo_set(&out, &set)?;
        store::atomic_write(&out.join(store::DONE_MARKER), b"")?;
        Ok((set, out))
    }

    /// Last completed target-side stage, the default teacher for filtering.
    pub fn latest_target_stage(&self) -> Option<String> {
        let mut plan = self.cfg.plan();
        plan.retain(|s| s != "pretrain" && s != "source-finetune");
        plan.into_iter().take_while(|s| self.dir.is_done(s)).last()
    }

    /// Evaluates a completed stage on a labeled target split.
    pub fn evaluate_stage(&self, stage: &str, split: Split) -> Result<EvalReport> {
        let ckpt = self.checkpoint(stage)?;
        let corpus = self.corpus("target", split)?;
        evaluate(&ckpt, &corpus, self.cfg.dust.beam_width)
    }

    /// Collects the per-stage reports into `summary.csv` and `summary.txt`.
    pub fn write_summary(&self) -> Result<Summary> {
        let mut rows = Vec::new();
        let mut stages = vec!["finetune".to_string()];
        stages.extend((1..=self.cfg.iterations).map(|n| format!("dust-{n}")));
        for (iteration, stage) in stages.iter().enumerate() {
            if !self.dir.is_done(stage) {
                break;
            }
            let dir = self.dir.stage_dir(stage);
            let dev: EvalReport = store::read_json(&dir.join(REPORT_FILE))?;
            let pseudo = if iteration > 0 {
                Some(store::read_pseudo_set(&dir)?)
            } else {
                None
            };
            let werr = match (self.cfg.report.baseline_wer, self.cfg.report.topline_wer) {
                (Some(b), Some(t)) => Some(werr(b, dev.wer, t)?),
                _ => None,
            };
            rows.push(SummaryRow {
                iteration,
                stage: stage.clone(),
                checkpoint: self.checkpoint(stage)?.id().to_string(),
                pseudo_utterances: pseudo.as_ref().map(|p| p.stats.accepted),
                pseudo_entries: pseudo.as_ref().map(|p| p.entries.len()),
                pseudo_wer: pseudo.as_ref().and_then(|p| p.stats.pseudo_wer),
                dev,
                werr,
            });
        }
        let summary = Summary { rows };
        store::atomic_write(&self.dir.root().join(SUMMARY_CSV), summary.to_csv().as_bytes())?;
        store::atomic_write(&self.dir.root().join(SUMMARY_TXT), summary.to_table().as_bytes())?;
        Ok(summary)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    /// 0 for the fine-tuned teacher, `n` for self-training round `n`.
    pub iteration: usize,
    pub stage: String,
    pub checkpoint: String,
    pub pseudo_utterances: Option<usize>,
    pub pseudo_entries: Option<usize>,
    pub pseudo_wer: Option<f64>,
    pub dev: EvalReport,
    pub werr: Option<f64>,
}

/// Dev WER per self-training round.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt2(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

impl Summary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "iteration,stage,checkpoint,pseudo_utterances,pseudo_entries,pseudo_wer,dev_wer,dev_cer,werr\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.2},{:.2},{}",
                r.iteration,
                r.stage,
                r.checkpoint,
                opt(r.pseudo_utterances),
                opt(r.pseudo_entries),
                opt2(r.pseudo_wer),
                r.dev.wer,
                r.dev.cer,
                opt2(r.werr)
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let dash = |s: String| if s.is_empty() { "-".to_string() } else { s };
        let mut out = format!(
            "{:<10} {:>6} {:>8} {:>8} {:>8} {:>8}\n",
            "Method", "|P|", "P WER", "dev WER", "dev CER", "WERR"
        );
        for r in &self.rows {
            let name = if r.iteration == 0 {
                "finetune".to_string()
            } else {
                format!("DUST{}", r.iteration)
            };
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>8} {:>8.2} {:>8.2} {:>8}",
                name,
                dash(opt(r.pseudo_utterances)),
                dash(opt2(r.pseudo_wer)),
                r.dev.wer,
                r.dev.cer,
                dash(opt2(r.werr))
            );
        }
        out
    }
}

/// One row of a recovery report.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryRow {
    pub label: String,
    pub baseline: f64,
    pub model: f64,
    pub topline: f64,
    pub recovery: f64,
}

/// Pointwise recovery per row plus, for more than one row, the plain mean
/// over rows.
pub fn recovery_table(rows: &[(String, f64, f64, f64)]) -> Result<(Vec<RecoveryRow>, Option<f64>)> {
    let out = rows
        .iter()
        .map(|(label, b, m, t)| {
            Ok(RecoveryRow {
                label: label.clone(),
                baseline: *b,
                model: *m,
                topline: *t,
                recovery: werr(*b, *m, *t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = if rows.len() > 1 {
        let triples: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r.1, r.2, r.3)).collect();
        Some(mean_recovery(&triples)?)
    } else {
        None
    };
    Ok((out, mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default().resolve().unwrap();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.clone().resolve().unwrap(), cfg);
    }

    #[test]
    fn reference_ratio_is_one_to_ten() {
        let t = ExperimentConfig::default().data.target;
        assert_eq!(t.unlabeled, 10 * t.labeled_train);
    }

    #[test]
    fn plan_lists_stages_in_order() {
        let cfg = ExperimentConfig {
            iterations: 2,
            source_supervised_first: true,
            ..Default::default()
        };
        assert_eq!(
            cfg.plan(),
            ["pretrain", "source-finetune", "finetune", "dust-1", "dust-2"]
        );
    }

    #[test]
    fn seeds_follow_the_global_seed() {
        let a = ExperimentConfig {
            seed: 1,
            ..Default::default()
        }
        .resolve()
        .unwrap();
        let b = ExperimentConfig {
            seed: 2,
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_ne!(a.pretrain.seed, b.pretrain.seed);
        assert_ne!(a.finetune.seed, a.pretrain.seed);
    }

    #[test]
    fn mismatched_frame_dims_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.target.frame_dim = 4;
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn recovery_table_averages_rows() {
        let rows = vec![("a".to_string(), 38.3, 22.3, 19.7), ("b".to_string(), 38.3, 31.9, 19.7)];
        let (table, mean) = recovery_table(&rows).unwrap();
        assert!((table[0].recovery - 86.02).abs() < 0.01);
        assert!((mean.unwrap() - (table[0].recovery + table[1].recovery) / 2.0).abs() < 1e-12);
        assert!(recovery_table(&rows[..1]).unwrap().1.is_none());
    }
}
