use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use pacl::corpus::{stratified_subsample, synthetic, Corpus, Split, Utterance};
use pacl::metrics::MetricSummary;
use pacl::model::Model;
use pacl::trainer::{
    self, build_model, evaluate_split, to_jsonl, Checkpoint, EpochRecord, Stage, StepRecord, TrainError, TrainingConfig,
};
use pacl::wordlevel::{
    build_wordlevel_dataset, default_keep_tags, pos_intent_report, write_wordlevel_jsonl, LexiconTagger, WordLevelExample,
};
use serde::{Deserialize, Serialize};

use crate::data::{load_config, read_corpus, read_wordlevel, write_corpus};
use crate::error::CliError;
use crate::manifest::Recorder;
use crate::report::{learning_curve_svg, pca_2d, scatter_svg};
use crate::{Ablation, InputFormat};

pub const STEPS_FILE: &str = "steps.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPRESENTATIONS_FILE: &str = "representations.jsonl";
pub const WORDLEVEL_FILE: &str = "wordlevel.jsonl";
pub const LEXICON_FILE: &str = "lexicon.tsv";

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

pub fn synth(
    argv: &[String],
    out: &Path,
    seed: u64,
    train: Option<usize>,
    validation: Option<usize>,
    test: Option<usize>,
) -> Result<(), CliError> {
    let mut rec = Recorder::new(argv);
    rec.seed(seed);
    let mut spec = synthetic::GrammarSpec::desk();
    spec.train_size = train.unwrap_or(spec.train_size);
    spec.validation_size = validation.unwrap_or(spec.validation_size);
    spec.test_size = test.unwrap_or(spec.test_size);
    let corpus = synthetic::generate_synthetic(&spec, seed)?;
    write_corpus(&corpus, out, &mut rec)?;
    let lexicon: String = spec.lexicon.iter().map(|(w, t)| format!("{w}\t{t}\n")).collect();
    rec.write(&out.join(LEXICON_FILE), &lexicon)?;
    rec.finish(out)?;
    Ok(())
}

#[derive(Serialize)]
struct CorpusStats {
    splits: BTreeMap<&'static str, usize>,
    intents: usize,
    slot_tags: usize,
    label_sets: usize,
    intents_per_utterance: BTreeMap<usize, usize>,
    subsample: Option<f64>,
    seed: u64,
}

pub fn prepare(
    argv: &[String],
    input: &Path,
    format: InputFormat,
    out: &Path,
    subsample: Option<f64>,
    seed: u64,
) -> Result<(), CliError> {
    let mut rec = Recorder::new(argv);
    rec.seed(seed);
    let mut corpus = read_corpus(input, format, &mut rec)?;
    if let Some(fraction) = subsample {
        corpus = stratified_subsample(&corpus, fraction, seed)?;
    }
    write_corpus(&corpus, out, &mut rec)?;
    let mut per_utterance = BTreeMap::new();
    for u in &corpus.train {
        *per_utterance.entry(u.intents().len()).or_insert(0) += 1;
    }
    let stats = CorpusStats {
        splits: [Split::Train, Split::Validation, Split::Test]
            .into_iter()
            .map(|s| (s.name(), corpus.split(s).len()))
            .collect(),
        intents: corpus.intent_vocabulary().len(),
        slot_tags: corpus.slot_vocabulary().len(),
        label_sets: corpus.train_strata().len(),
        intents_per_utterance: per_utterance,
        subsample,
        seed,
    };
    rec.write(&out.join("stats.json"), &pretty(&stats))?;
    rec.finish(out)?;
    Ok(())
}

fn load_tagger(explicit: Option<&Path>, fallback_dir: &Path, rec: &mut Recorder) -> Result<LexiconTagger, CliError> {
    let default = fallback_dir.join(LEXICON_FILE);
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None if default.is_file() => default,
        None => return Ok(LexiconTagger::default()),
    };
    let text = rec.read(&path)?;
    LexiconTagger::from_tsv(&text).map_err(|e| CliError::input(&path, e))
}

#[derive(Serialize)]
struct WordLevelReport {
    keep_tags: BTreeSet<String>,
    examples: usize,
    single_intent: usize,
    multi_intent: usize,
    pos_intent_proportions: BTreeMap<String, f64>,
    missing_indicators: Vec<BTreeMap<&'static str, String>>,
}

pub fn build_wordlevel(
    argv: &[String],
    corpus_dir: &Path,
    pos_keep: &[String],
    lexicon: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let mut rec = Recorder::new(argv);
    rec.seed(seed);
    let corpus = read_corpus(corpus_dir, InputFormat::Jsonl, &mut rec)?;
    let tagger = load_tagger(lexicon, corpus_dir, &mut rec)?;
    let keep: BTreeSet<String> = pos_keep.iter().map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect();
    let dataset = build_wordlevel_dataset(&corpus, &keep, &tagger, seed)?;
    rec.write(&out.join(WORDLEVEL_FILE), &write_wordlevel_jsonl(&dataset.examples))?;
    let single = dataset.examples.iter().filter(|e| e.intents.len() == 1).count();
    let report = WordLevelReport {
        keep_tags: keep,
        examples: dataset.examples.len(),
        single_intent: single,
        multi_intent: dataset.examples.len() - single,
        pos_intent_proportions: pos_intent_report(&corpus, &tagger)?,
        missing_indicators: dataset
            .warnings
            .iter()
            .map(|w| BTreeMap::from([("word", w.word.clone()), ("intent", w.intent.clone())]))
            .collect(),
    };
    rec.write(&out.join("wordlevel_report.json"), &pretty(&report))?;
    rec.finish(out)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RepresentationLine {
    label_key: String,
    vector: Vec<f64>,
}

fn representations(model: &Model, utterances: &[Utterance]) -> Result<String, CliError> {
    let mut lines = Vec::with_capacity(utterances.len());
    for u in utterances {
        let vector = model
            .contrastive_representation(u.tokens())
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        lines.push(RepresentationLine {
            label_key: u.label_key().as_str().to_owned(),
            vector,
        });
    }
    Ok(to_jsonl(&lines))
}

/// Logs and checkpoints of one training run.
struct RunWriter<'a> {
    dir: PathBuf,
    rec: &'a mut Recorder,
    config: TrainingConfig,
    checkpoints: bool,
    steps: Vec<StepRecord>,
    history: Vec<EpochRecord>,
}

impl<'a> RunWriter<'a> {
    fn new(dir: &Path, rec: &'a mut Recorder, config: &TrainingConfig, checkpoints: bool) -> Self {
        Self {
            dir: dir.to_path_buf(),
            rec,
            config: config.clone(),
            checkpoints,
            steps: Vec::new(),
            history: Vec::new(),
        }
    }

    fn stage(
        &mut self,
        stage: Stage,
        model: &mut Model,
        train: impl FnOnce(&mut Model, &mut trainer::EpochObserver) -> Result<trainer::StageLog, TrainError>,
    ) -> Result<(), CliError> {
        let (dir, config, checkpoints) = (self.dir.clone(), self.config.clone(), self.checkpoints);
        let mut history = self.history.clone();
        let mut written = Vec::new();
        let mut observer = |m: &Model, r: &EpochRecord| -> Result<(), TrainError> {
            history.push(r.clone());
            if checkpoints {
                let name = format!("checkpoints/{}_epoch{:03}.json", stage_name(stage), r.epoch);
                let ckpt = Checkpoint::capture(m, &config, stage, r.epoch, &history);
                written.push((dir.join(name), ckpt.to_json()?));
            }
            Ok(())
        };
        let log = train(model, &mut observer)?;
        for (path, text) in written {
            self.rec.write(&path, &text)?;
        }
        self.steps.extend(log.steps);
        self.history.extend(log.history);
        Ok(())
    }

    fn finish(self, model: &Model, validation: &[Utterance], stage: Stage) -> Result<(), CliError> {
        let epoch = self.history.last().map_or(0, |r| r.epoch);
        let ckpt = Checkpoint::capture(model, &self.config, stage, epoch, &self.history);
        self.rec.write(&self.dir.join(CHECKPOINT_FILE), &ckpt.to_json()?)?;
        self.rec.write(&self.dir.join(STEPS_FILE), &to_jsonl(&self.steps))?;
        self.rec.write(&self.dir.join(METRICS_FILE), &to_jsonl(&self.history))?;
        self.rec.write(&self.dir.join(REPRESENTATIONS_FILE), &representations(model, validation)?)?;
        Ok(())
    }
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Init => "init",
        Stage::Pretrain => "pretrain",
        Stage::Finetune => "finetune",
    }
}

fn wordlevel_path(explicit: Option<&Path>, data: &Path) -> PathBuf {
    explicit.map_or_else(|| data.join(WORDLEVEL_FILE), Path::to_path_buf)
}

pub fn pretrain(
    argv: &[String],
    config_path: Option<&Path>,
    data: &Path,
    wordlevel: Option<&Path>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let mut rec = Recorder::new(argv);
    let config = load_config(config_path, &mut rec)?;
    rec.config(config.entries());
    let corpus = read_corpus(data, InputFormat::Jsonl, &mut rec)?;
    let examples = read_wordlevel(&wordlevel_path(wordlevel, data), &mut rec)?;
    let mut model = build_model(&corpus, &config)?;
    let mut run = RunWriter::new(out_dir, &mut rec, &config, true);
    run.stage(Stage::Pretrain, &mut model, |m, obs| {
        trainer::pretrain(m, &examples, &corpus.validation, &config, obs)
    })?;
    let stage = if config.pretrain_epochs == 0 { Stage::Init } else { Stage::Pretrain };
    run.finish(&model, &corpus.validation, stage)?;
    rec.finish(out_dir)?;
    Ok(())
}

fn apply_ablation(config: &mut TrainingConfig, ablation: Ablation) {
    if ablation.no_pt {
        config.pretrain = false;
    }
    if ablation.no_rs {
        config.role_switching = false;
    }
    if ablation.no_pa {
        config.prediction_aware = false;
    }
}

fn load_checkpoint(path: &Path, rec: &mut Recorder) -> Result<Checkpoint, CliError> {
    let text = rec.read(path)?;
    Checkpoint::from_json(&text).map_err(|e| CliError::input(path, e))
}

#[allow(clippy::too_many_arguments)]
pub fn finetune(
    argv: &[String],
    config_path: Option<&Path>,
    data: &Path,
    out_dir: &Path,
    init: Option<&Path>,
    wordlevel: Option<&Path>,
    ablation: Ablation,
) -> Result<(), CliError> {
    let mut rec = Recorder::new(argv);
    let mut config = load_config(config_path, &mut rec)?;
    apply_ablation(&mut config, ablation);
    rec.config(config.entries());
    let corpus = read_corpus(data, InputFormat::Jsonl, &mut rec)?;
    let (mut model, examples) = match init {
        Some(path) => {
            let model = load_checkpoint(path, &mut rec)?.restore()?;
            (model, None)
        }
        None => {
            let examples = if config.pretrain {
                Some(read_wordlevel(&wordlevel_path(wordlevel, data), &mut rec)?)
            } else {
                None
            };
            (build_model(&corpus, &config)?, examples)
        }
    };
    let mut run = RunWriter::new(out_dir, &mut rec, &config, true);
    if let Some(examples) = &examples {
        run.stage(Stage::Pretrain, &mut model, |m, obs| {
            trainer::pretrain(m, examples, &corpus.validation, &config, obs)
        })?;
    }
    run.stage(Stage::Finetune, &mut model, |m, obs| {
        trainer::finetune(m, &corpus.train, &corpus.validation, &config, obs)
    })?;
    run.finish(&model, &corpus.validation, Stage::Finetune)?;
    let test = evaluate_split(&model, &corpus.test, config.intent_threshold)?;
    rec.write(&out_dir.join("test_metrics.json"), &pretty(&test.summary()))?;
    rec.finish(out_dir)?;
    Ok(())
}

pub fn evaluate(argv: &[String], checkpoint: &Path, data: &Path, split: &str, out: Option<&Path>) -> Result<(), CliError> {
    let mut rec = Recorder::new(argv);
    let split: Split = split.parse().map_err(|e: String| CliError::Input(e))?;
    let ckpt = load_checkpoint(checkpoint, &mut rec)?;
    rec.seed(ckpt.config.seed);
    let model = ckpt.restore()?;
    let corpus = read_corpus(data, InputFormat::Jsonl, &mut rec)?;
    let record = evaluate_split(&model, corpus.split(split), ckpt.config.intent_threshold)?;
    let text = pretty(&record.summary());
    print!("{text}");
    let out_dir = out.map_or_else(
        || {
            checkpoint
                .parent()
                .unwrap_or(Path::new("."))
                .join(format!("eval_{}", split.name()))
        },
        Path::to_path_buf,
    );
    rec.write(&out_dir.join("metrics.json"), &text)?;
    rec.finish(&out_dir)?;
    Ok(())
}

fn read_history(dir: &Path, rec: &mut Recorder) -> Result<Vec<EpochRecord>, CliError> {
    let path = dir.join(METRICS_FILE);
    if !path.is_file() {
        return Err(CliError::Input(format!("MissingLog: {} not found", path.display())));
    }
    let text = rec.read(&path)?;
    let records = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str::<EpochRecord>)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::input(&path, e))?;
    if records.is_empty() {
        return Err(CliError::Input(format!("MissingLog: {} is empty", path.display())));
    }
    let finetune: Vec<EpochRecord> = records.iter().filter(|r| r.stage == Stage::Finetune).cloned().collect();
    Ok(if finetune.is_empty() { records } else { finetune })
}

pub fn report(argv: &[String], run_dirs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut rec = Recorder::new(argv);
    if run_dirs.len() > 2 {
        return Err(CliError::Input("report takes one or two run directories".into()));
    }
    let mut series = Vec::new();
    for (i, dir) in run_dirs.iter().enumerate() {
        let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        let label = match (run_dirs.len(), i) {
            (2, 0) => format!("baseline ({name})"),
            (2, _) => format!("PACL ({name})"),
            _ => name,
        };
        series.push((label, read_history(dir, &mut rec)?));
    }
    rec.write(&out.join("learning_curve.svg"), &learning_curve_svg(&series))?;

    let last = run_dirs.last().expect("at least one run directory");
    let reps_path = last.join(REPRESENTATIONS_FILE);
    if !reps_path.is_file() {
        return Err(CliError::Input(format!("MissingLog: {} not found", reps_path.display())));
    }
    let text = rec.read(&reps_path)?;
    let lines = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str::<RepresentationLine>)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::input(&reps_path, e))?;
    let vectors: Vec<Vec<f64>> = lines.iter().map(|l| l.vector.clone()).collect();
    let labels: Vec<String> = lines.into_iter().map(|l| l.label_key).collect();
    let points = pca_2d(&vectors);
    rec.write(
        &out.join("embeddings.svg"),
        &scatter_svg(&points, &labels, "fused intent representations, first two principal components"),
    )?;
    rec.finish(out)?;
    Ok(())
}

/// Ablation-grid and baseline variants of a base configuration.
pub fn variants(base: &TrainingConfig, grid: bool) -> Vec<(String, TrainingConfig)> {
    let mut out = vec![(
        "baseline".to_owned(),
        TrainingConfig {
            lambda5: 0.0,
            pretrain: false,
            ..base.clone()
        },
    )];
    if grid {
        for pt in [false, true] {
            for rs in [false, true] {
                for pa in [false, true] {
                    let name = format!("pt{}_rs{}_pa{}", pt as u8, rs as u8, pa as u8);
                    out.push((
                        name,
                        TrainingConfig {
                            pretrain: pt,
                            role_switching: rs,
                            prediction_aware: pa,
                            ..base.clone()
                        },
                    ));
                }
            }
        }
    } else {
        out.push(("pacl".to_owned(), base.clone()));
    }
    out
}

#[derive(Serialize)]
struct VariantSummary {
    mean: MetricSummary,
    per_seed: BTreeMap<u64, MetricSummary>,
}

#[derive(Serialize)]
struct FractionSummary {
    fraction: f64,
    variants: BTreeMap<String, VariantSummary>,
    /// Seeds on which the full method's overall accuracy is at least the baseline's.
    full_method_wins: usize,
    seeds: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn experiment(
    argv: &[String],
    config_path: Option<&Path>,
    data: &Path,
    out_dir: &Path,
    seeds: &[u64],
    fractions: &[f64],
    grid: bool,
    lexicon: Option<&Path>,
) -> Result<(), CliError> {
    let mut rec = Recorder::new(argv);
    let base = load_config(config_path, &mut rec)?;
    rec.config(base.entries());
    let corpus = read_corpus(data, InputFormat::Jsonl, &mut rec)?;
    let tagger = load_tagger(lexicon, data, &mut rec)?;
    let full = if grid { "pt1_rs1_pa1" } else { "pacl" };
    let mut summaries = Vec::new();
    let mut table = String::from("fraction\tvariant\tseed\tic_acc\tsf_f1\toverall_acc\n");
    for &fraction in fractions {
        let mut per_variant: BTreeMap<String, BTreeMap<u64, MetricSummary>> = BTreeMap::new();
        for &seed in seeds {
            let sub: Corpus = if fraction < 1.0 {
                stratified_subsample(&corpus, fraction, seed)?
            } else {
                corpus.clone()
            };
            let wl: Vec<WordLevelExample> = build_wordlevel_dataset(&sub, &default_keep_tags(), &tagger, seed)?.examples;
            for (name, cfg) in variants(&TrainingConfig { seed, ..base.clone() }, grid) {
                let dir = out_dir.join(format!("f{fraction}")).join(&name).join(format!("seed{seed}"));
                let outcome = trainer::run(&sub, &wl, &cfg)?;
                let mut steps = outcome.pretrain.as_ref().map(|l| l.steps.clone()).unwrap_or_default();
                steps.extend(outcome.finetune.steps.iter().cloned());
                let mut history = outcome.pretrain.as_ref().map(|l| l.history.clone()).unwrap_or_default();
                history.extend(outcome.finetune.history.iter().cloned());
                rec.write(&dir.join(STEPS_FILE), &to_jsonl(&steps))?;
                rec.write(&dir.join(METRICS_FILE), &to_jsonl(&history))?;
                rec.write(&dir.join(REPRESENTATIONS_FILE), &representations(&outcome.model, &sub.validation)?)?;
                let test = outcome.test.summary();
                rec.write(&dir.join("test_metrics.json"), &pretty(&test))?;
                table.push_str(&format!(
                    "{fraction}\t{name}\t{seed}\t{:.4}\t{:.4}\t{:.4}\n",
                    test.ic_acc, test.sf_f1, test.overall_acc
                ));
                per_variant.entry(name).or_default().insert(seed, test);
            }
        }
        let wins = seeds
            .iter()
            .filter(|s| per_variant[full][s].overall_acc >= per_variant["baseline"][s].overall_acc)
            .count();
        let variants = per_variant
            .into_iter()
            .map(|(name, per_seed)| {
                let n = per_seed.len().max(1) as f64;
                let mean = MetricSummary {
                    ic_acc: per_seed.values().map(|m| m.ic_acc).sum::<f64>() / n,
                    sf_f1: per_seed.values().map(|m| m.sf_f1).sum::<f64>() / n,
                    overall_acc: per_seed.values().map(|m| m.overall_acc).sum::<f64>() / n,
                }
                .rounded();
                (name, VariantSummary { mean, per_seed })
            })
            .collect();
        summaries.push(FractionSummary {
            fraction,
            variants,
            full_method_wins: wins,
            seeds: seeds.len(),
        });
    }
    rec.write(&out_dir.join("summary.json"), &pretty(&summaries))?;
    rec.write(&out_dir.join("summary.tsv"), &table)?;
    for s in &summaries {
        println!(
            "fraction {}: full method overall accuracy >= baseline on {}/{} seeds",
            s.fraction, s.full_method_wins, s.seeds
        );
    }
    rec.finish(out_dir)?;
    Ok(())
}
