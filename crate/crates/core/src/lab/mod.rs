//! Experiment protocols behind the `sumlab` binary: data preparation,
//! single runs, paired ε-on/off runs, ε × vocabulary sweeps, word
//! diversity and action-word classification.

pub mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_vocabulary, encode_sequence, extract_action_word, filter_by_length_quantile,
    read_records, split_by_project, Corpus, Sample, Side, SplitTag, Vocabulary, START,
};
use crate::error::{Error, Result};
use crate::metrics::{
    classification_report, compare_metric, default_embedder, diversity_report, score_predictions,
    ComparisonResult, DiversityReport, MetricReport, Prediction, PredictionSet, DEFAULT_ALPHA,
};
use crate::models::{build_model, Arch, Example, Model, ModelConfig};
use crate::trainer::{
    load_checkpoint, save_checkpoint, train, TrainConfig, TrainOptions, TrainOutcome,
};

pub use report::{
    format_p, format_score, format_t, render_csv, render_markdown, render_report, Format,
    ReportRow, ReportTable,
};

pub const SRC_VOCAB_FILE: &str = "vocab.src.txt";
pub const TGT_VOCAB_FILE: &str = "vocab.tgt.txt";
pub const DEFAULT_SWEEP: [f64; 9] = [0.0, 0.001, 0.003, 0.007, 0.02, 0.05, 0.10, 0.25, 0.40];
pub const DEFAULT_SWEEP_VOCABS: [usize; 2] = [300, 1200];
pub const ACTION_WORD_EPSILONS: [f64; 3] = [0.0, 0.1, 0.4];
pub const PAIR_EPOCHS: usize = 10;
pub const SWEEP_EPOCHS: usize = 8;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

/// Writes `{stem}.csv`, `{stem}.md` and `{stem}.json` side by side.
fn write_table<T: Serialize>(
    dir: &Path,
    stem: &str,
    header: &[&str],
    rows: &[Vec<String>],
    raw: &T,
) -> Result<()> {
    write(&dir.join(format!("{stem}.csv")), render_csv(header, rows)?)?;
    write(
        &dir.join(format!("{stem}.md")),
        render_markdown(header, rows),
    )?;
    write_json(&dir.join(format!("{stem}.json")), raw)
}

fn write_report(dir: &Path, stem: &str, table: &ReportTable) -> Result<()> {
    write(
        &dir.join(format!("{stem}.csv")),
        render_report(table, Format::Csv)?,
    )?;
    write(
        &dir.join(format!("{stem}.md")),
        render_report(table, Format::Markdown)?,
    )?;
    write_json(&dir.join(format!("{stem}.json")), table)
}

fn check_epsilon(eps: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eps) {
        Ok(())
    } else {
        Err(Error::config(format!("epsilon {eps} outside [0, 1]")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareOptions {
    pub input: PathBuf,
    pub out: PathBuf,
    pub quantile: Option<f64>,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
}

impl PrepareOptions {
    pub fn new(input: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        PrepareOptions {
            input: input.into(),
            out: out.into(),
            quantile: None,
            ratios: (0.8, 0.1, 0.1),
            seed: 0,
            src_vocab: 2000,
            tgt_vocab: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrepareSummary {
    pub samples: usize,
    pub dropped_empty_comments: usize,
    pub dropped_by_quantile: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
}

impl fmt::Display for PrepareSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "samples {} (dropped {} empty comments, {} below quantile)\ntrain {} val {} test {}\nsrc vocab {} tgt vocab {}",
            self.samples,
            self.dropped_empty_comments,
            self.dropped_by_quantile,
            self.train,
            self.val,
            self.test,
            self.src_vocab,
            self.tgt_vocab
        )
    }
}

/// Tokenize, filter by length quantile, split by project, build vocabularies.
pub fn cmd_prepare(opts: &PrepareOptions) -> Result<PrepareSummary> {
    for size in [opts.src_vocab, opts.tgt_vocab] {
        if size < 5 {
            return Err(Error::config(format!(
                "vocabulary size {size} is below the minimum of 5"
            )));
        }
    }
    let records = read_records(&opts.input)?;
    let corpus = Corpus::from_records(&records, SplitTag::Unsplit)?;
    let samples = corpus.len();
    let corpus = corpus.drop_empty_comments();
    let dropped_empty = samples - corpus.len();
    let before = corpus.len();
    let corpus = match opts.quantile {
        Some(q) => filter_by_length_quantile(&corpus, q)?,
        None => corpus,
    };
    let dropped_q = before - corpus.len();
    let (train, val, test) = split_by_project(&corpus, opts.ratios, opts.seed)?;
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::data("project split left an empty partition"));
    }
    let src = build_vocabulary(&train, opts.src_vocab, Side::Source)?;
    let tgt = build_vocabulary(&train, opts.tgt_vocab, Side::Target)?;
    fs::create_dir_all(&opts.out).map_err(|e| Error::io(&opts.out, e))?;
    for c in [&train, &val, &test] {
        c.save(&opts.out.join(c.split_tag.file_name()))?;
    }
    write(&opts.out.join(SRC_VOCAB_FILE), src.to_text())?;
    write(&opts.out.join(TGT_VOCAB_FILE), tgt.to_text())?;
    Ok(PrepareSummary {
        samples,
        dropped_empty_comments: dropped_empty,
        dropped_by_quantile: dropped_q,
        train: train.len(),
        val: val.len(),
        test: test.len(),
        src_vocab: src.size(),
        tgt_vocab: tgt.size(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Corpus,
    pub src: Vocabulary,
    pub tgt: Vocabulary,
}

pub fn load_prepared(dir: &Path) -> Result<Prepared> {
    let split = |tag: SplitTag| -> Result<Corpus> {
        let c = Corpus::load(&dir.join(tag.file_name()), tag)?;
        if c.samples.iter().any(|s| s.comment_tokens.is_empty()) {
            return Err(Error::data(format!(
                "{} has an empty comment",
                tag.file_name()
            )));
        }
        Ok(c)
    };
    Ok(Prepared {
        train: split(SplitTag::Train)?,
        val: split(SplitTag::Val)?,
        test: split(SplitTag::Test)?,
        src: Vocabulary::load(&dir.join(SRC_VOCAB_FILE))?,
        tgt: Vocabulary::load(&dir.join(TGT_VOCAB_FILE))?,
    })
}

impl Prepared {
    pub fn split(&self, tag: SplitTag) -> Result<&Corpus> {
        match tag {
            SplitTag::Train => Ok(&self.train),
            SplitTag::Val => Ok(&self.val),
            SplitTag::Test => Ok(&self.test),
            SplitTag::Unsplit => Err(Error::config("choose train, val or test")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub arch: Arch,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    pub code_len: usize,
    pub ast_len: usize,
    pub comment_len: usize,
}

impl Default for ModelOptions {
    fn default() -> Self {
        let c = ModelConfig::new(Arch::AstAttendgru, 0, 0);
        ModelOptions {
            arch: Arch::Attendgru,
            embed_dim: c.embed_dim,
            hidden_dim: c.hidden_dim,
            heads: c.heads,
            layers: c.layers,
            dropout: c.dropout_rate,
            code_len: c.code_len,
            ast_len: c.ast_len.unwrap_or(80),
            comment_len: c.comment_len,
        }
    }
}

impl ModelOptions {
    pub fn config(&self, src_vocab: usize, tgt_vocab: usize, epsilon: f64) -> ModelConfig {
        ModelConfig {
            arch: self.arch,
            src_vocab,
            tgt_vocab,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            code_len: self.code_len,
            ast_len: self.arch.uses_ast().then_some(self.ast_len),
            comment_len: self.comment_len,
            heads: self.heads,
            layers: self.layers,
            dropout_rate: self.dropout,
            epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub model: ModelOptions,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunOptions {
            model: ModelOptions::default(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: t.seed,
            timing: false,
        }
    }
}

impl RunOptions {
    pub fn train_config(&self, epsilon: f64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            epsilon,
            ..TrainConfig::default()
        }
    }
}

/// Encodes one sample for `config`'s sequence lengths.
pub fn encode_sample(
    s: &Sample,
    src: &Vocabulary,
    tgt: &Vocabulary,
    config: &ModelConfig,
) -> Example {
    Example {
        code: encode_sequence(&s.code_tokens, src, config.code_len.max(2), false).ids,
        ast: config
            .ast_len
            .map(|n| encode_sequence(&s.ast_tokens, src, n.max(2), false).ids),
        target: encode_sequence(&s.comment_tokens, tgt, config.comment_len, true).ids,
    }
}

pub fn encode_corpus(
    c: &Corpus,
    src: &Vocabulary,
    tgt: &Vocabulary,
    config: &ModelConfig,
) -> Vec<Example> {
    c.samples
        .iter()
        .map(|s| encode_sample(s, src, tgt, config))
        .collect()
}

/// Trains one model with the given target vocabulary and smoothing mass.
pub fn run_training(
    data: &Prepared,
    tgt: &Vocabulary,
    opts: &RunOptions,
    epsilon: f64,
) -> Result<TrainOutcome> {
    check_epsilon(epsilon)?;
    let config = opts.model.config(data.src.size(), tgt.size(), epsilon);
    let model = build_model(&config, opts.seed)?;
    let train_set = encode_corpus(&data.train, &data.src, tgt, &config);
    let val_set = encode_corpus(&data.val, &data.src, tgt, &config);
    train(
        model,
        &train_set,
        &val_set,
        &opts.train_config(epsilon),
        TrainOptions {
            timing: opts.timing,
        },
    )
}

/// Greedy-decodes every sample; references are the raw comment tokens.
pub fn predict(
    model: &Model,
    corpus: &Corpus,
    src: &Vocabulary,
    tgt: &Vocabulary,
) -> Result<PredictionSet> {
    let max_len = model.config.comment_len - 1;
    let records = corpus
        .samples
        .par_iter()
        .map(|s| {
            let ex = encode_sample(s, src, tgt, &model.config);
            let out = model.greedy_decode(&ex.code, ex.ast.as_deref(), max_len)?;
            Ok(Prediction {
                id: s.id.clone(),
                reference: s.comment_tokens.clone(),
                pred: tgt.decode(&out.ids),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PredictionSet::new(records)
}

fn eps_dir(epsilon: f64) -> String {
    format!("eps-{epsilon}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainCmd {
    pub data: PathBuf,
    pub out: PathBuf,
    pub run: RunOptions,
    pub epsilon: f64,
}

/// Writes `model.json` (best checkpoint) and `history.csv` under `out`.
pub fn cmd_train(cmd: &TrainCmd) -> Result<String> {
    let data = load_prepared(&cmd.data)?;
    let outcome = run_training(&data, &data.tgt, &cmd.run, cmd.epsilon)?;
    fs::create_dir_all(&cmd.out).map_err(|e| Error::io(&cmd.out, e))?;
    save_checkpoint(&outcome.best, &cmd.out.join("model.json"))?;
    outcome.history.save(&cmd.out.join("history.csv"))?;
    let st = outcome.best.train.as_ref().expect("trained checkpoint");
    Ok(format!(
        "best epoch {} val_acc {:.4} final loss {:.4}",
        st.epoch,
        st.val_acc,
        outcome.history.records.last().map_or(0.0, |r| r.loss_nats)
    ))
}

pub fn cmd_predict(
    model_path: &Path,
    data_dir: &Path,
    split: SplitTag,
    out: &Path,
) -> Result<String> {
    let model = load_checkpoint(model_path)?.to_model()?;
    let data = load_prepared(data_dir)?;
    if model.config.src_vocab != data.src.size() || model.config.tgt_vocab != data.tgt.size() {
        return Err(Error::data(
            "checkpoint vocabulary sizes do not match the prepared data",
        ));
    }
    let preds = predict(&model, data.split(split)?, &data.src, &data.tgt)?;
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    preds.save(out)?;
    Ok(format!(
        "{} predictions written to {}",
        preds.len(),
        out.display()
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreSummary {
    pub predictions: usize,
    pub report: MetricReport,
}

/// Scores a predictions file; writes `report.json` and `report.md` into `out`.
pub fn cmd_score(predictions: &Path, out: &Path) -> Result<String> {
    let preds = PredictionSet::load(predictions)?;
    let report = score_predictions(&preds, &default_embedder())?;
    let header = ["metric", "score"];
    let rows = vec![
        vec!["BLEU".to_string(), format_score(report.corpus_bleu)],
        vec!["METEOR".to_string(), format_score(report.mean_meteor)],
        vec![
            "similarity".to_string(),
            format_score(report.mean_similarity),
        ],
    ];
    let md = render_markdown(&header, &rows);
    write_json(
        &out.join("report.json"),
        &ScoreSummary {
            predictions: preds.len(),
            report,
        },
    )?;
    write(&out.join("report.md"), &md)?;
    Ok(md)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSummary {
    pub baseline: MetricReport,
    pub candidate: MetricReport,
    pub tests: Vec<ComparisonResult>,
}

/// Paired t-tests of `candidate` against `baseline` on the sentence metrics.
pub fn cmd_compare(baseline: &Path, candidate: &Path, alpha: f64, out: &Path) -> Result<String> {
    let a = PredictionSet::load(baseline)?;
    let b = PredictionSet::load(candidate)?;
    let pairs = a.align(&b)?;
    let base = PredictionSet::new(pairs.iter().map(|(x, _)| (*x).clone()).collect())?;
    let cand = PredictionSet::new(pairs.iter().map(|(_, y)| (*y).clone()).collect())?;
    let e = default_embedder();
    let ra = score_predictions(&base, &e)?;
    let rb = score_predictions(&cand, &e)?;
    let tests = vec![
        compare_metric("METEOR", &rb.meteor, &ra.meteor, alpha)?,
        compare_metric("similarity", &rb.similarity, &ra.similarity, alpha)?,
    ];
    let header = ["metric", "baseline", "candidate", "t", "p", "significant"];
    let mut rows: Vec<Vec<String>> = tests
        .iter()
        .zip([
            (ra.mean_meteor, rb.mean_meteor),
            (ra.mean_similarity, rb.mean_similarity),
        ])
        .map(|(t, (x, y))| {
            vec![
                t.metric.clone(),
                format_score(x),
                format_score(y),
                format_t(t.t_stat),
                format_p(t.p_value),
                t.significant.to_string(),
            ]
        })
        .collect();
    rows.push(vec![
        "BLEU".into(),
        format_score(ra.corpus_bleu),
        format_score(rb.corpus_bleu),
        "-".into(),
        "-".into(),
        "-".into(),
    ]);
    let summary = CompareSummary {
        baseline: ra,
        candidate: rb,
        tests,
    };
    write_table(out, "compare", &header, &rows, &summary)?;
    Ok(render_markdown(&header, &rows))
}

/// A finished run: training outcome, test predictions and their scores.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub vocab: usize,
    pub epsilon: f64,
    pub outcome: TrainOutcome,
    pub predictions: PredictionSet,
    pub metrics: MetricReport,
}

fn full_run(
    data: &Prepared,
    tgt: &Vocabulary,
    opts: &RunOptions,
    epsilon: f64,
) -> Result<RunResult> {
    let outcome = run_training(data, tgt, opts, epsilon)?;
    let model = outcome.best.to_model()?;
    let predictions = predict(&model, &data.test, &data.src, tgt)?;
    let metrics = score_predictions(&predictions, &default_embedder())?;
    Ok(RunResult {
        vocab: tgt.size(),
        epsilon,
        outcome,
        predictions,
        metrics,
    })
}

/// Rows for `runs`, each ε > 0 row tested against the ε = 0 run of its vocabulary.
fn report_rows(runs: &[&RunResult], alpha: f64) -> Result<ReportTable> {
    let mut rows = Vec::new();
    for r in runs {
        let base = runs.iter().find(|b| b.vocab == r.vocab && b.epsilon == 0.0);
        let (mt, st) = match base {
            Some(b) if r.epsilon != 0.0 => (
                Some(compare_metric(
                    "METEOR",
                    &r.metrics.meteor,
                    &b.metrics.meteor,
                    alpha,
                )?),
                Some(compare_metric(
                    "similarity",
                    &r.metrics.similarity,
                    &b.metrics.similarity,
                    alpha,
                )?),
            ),
            _ => (None, None),
        };
        rows.push(ReportRow {
            vocab: r.vocab,
            epsilon: r.epsilon,
            meteor: r.metrics.mean_meteor,
            similarity: r.metrics.mean_similarity,
            bleu: r.metrics.corpus_bleu,
            meteor_test: mt,
            similarity_test: st,
        });
    }
    Ok(ReportTable { rows })
}

fn save_run(dir: &Path, r: &RunResult, checkpoint: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if checkpoint {
        save_checkpoint(&r.outcome.best, &dir.join("model.json"))?;
    }
    r.outcome.history.save(&dir.join("history.csv"))?;
    r.predictions.save(&dir.join("predictions.jsonl"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRunCmd {
    pub data: PathBuf,
    pub out: PathBuf,
    pub run: RunOptions,
    pub epsilon: f64,
    pub alpha: f64,
}

impl PairRunCmd {
    pub fn new(data: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        PairRunCmd {
            data: data.into(),
            out: out.into(),
            run: RunOptions {
                epochs: PAIR_EPOCHS,
                ..RunOptions::default()
            },
            epsilon: 0.1,
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// Trains with ε = 0 and with `epsilon` under one seed, then t-tests the
/// smoothed run against the baseline on METEOR and similarity.
pub fn cmd_pair_run(cmd: &PairRunCmd) -> Result<ReportTable> {
    check_epsilon(cmd.epsilon)?;
    if cmd.epsilon == 0.0 {
        return Err(Error::config(
            "pair-run needs a non-zero epsilon to compare",
        ));
    }
    let data = load_prepared(&cmd.data)?;
    let eps = [0.0, cmd.epsilon];
    let runs = eps
        .par_iter()
        .map(|&e| full_run(&data, &data.tgt, &cmd.run, e))
        .collect::<Result<Vec<_>>>()?;
    for r in &runs {
        save_run(&cmd.out.join(eps_dir(r.epsilon)), r, true)?;
    }
    let table = report_rows(&runs.iter().collect::<Vec<_>>(), cmd.alpha)?;
    write_report(&cmd.out, "report", &table)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCmd {
    pub data: PathBuf,
    pub out: PathBuf,
    pub run: RunOptions,
    pub epsilons: Vec<f64>,
    pub vocab_sizes: Vec<usize>,
    pub alpha: f64,
}

impl SweepCmd {
    pub fn new(data: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        SweepCmd {
            data: data.into(),
            out: out.into(),
            run: RunOptions {
                epochs: SWEEP_EPOCHS,
                ..RunOptions::default()
            },
            epsilons: DEFAULT_SWEEP.to_vec(),
            vocab_sizes: DEFAULT_SWEEP_VOCABS.to_vec(),
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// One run per (vocabulary size, ε); writes `sweep.{csv,md,json}`. Runs that
/// finished are written even when another diverged.
pub fn cmd_sweep(cmd: &SweepCmd) -> Result<ReportTable> {
    if cmd.epsilons.is_empty() || cmd.epsilons[0] != 0.0 {
        return Err(Error::config(
            "the epsilon grid must start with the 0 baseline",
        ));
    }
    if cmd.epsilons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("the epsilon grid must be strictly ascending"));
    }
    for &e in &cmd.epsilons {
        check_epsilon(e)?;
    }
    if cmd.vocab_sizes.is_empty() {
        return Err(Error::config("at least one vocabulary size is required"));
    }
    let data = load_prepared(&cmd.data)?;
    let vocabs = cmd
        .vocab_sizes
        .iter()
        .map(|&n| build_vocabulary(&data.train, n, Side::Target))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, f64)> = (0..vocabs.len())
        .flat_map(|v| cmd.epsilons.iter().map(move |&e| (v, e)))
        .collect();
    let results: Vec<Result<RunResult>> = jobs
        .par_iter()
        .map(|&(v, e)| full_run(&data, &vocabs[v], &cmd.run, e))
        .collect();

    let mut done = Vec::new();
    let mut first_err = None;
    for (&(v, e), r) in jobs.iter().zip(results) {
        match r {
            Ok(mut r) => {
                r.vocab = cmd.vocab_sizes[v];
                save_run(
                    &cmd.out
                        .join("runs")
                        .join(format!("vocab-{}", cmd.vocab_sizes[v]))
                        .join(eps_dir(e)),
                    &r,
                    false,
                )?;
                done.push(r);
            }
            Err(err) if first_err.is_none() => first_err = Some(err),
            Err(_) => {}
        }
    }
    let table = report_rows(&done.iter().collect::<Vec<_>>(), cmd.alpha)?;
    write_report(&cmd.out, "sweep", &table)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(table),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityRow {
    pub file: String,
    pub report: DiversityReport,
    pub delta_total: i64,
    pub delta_unique: i64,
}

/// Word counts per predictions file, with deltas against the first file.
pub fn cmd_diversity(files: &[PathBuf], out: &Path) -> Result<Vec<DiversityRow>> {
    if files.is_empty() {
        return Err(Error::config(
            "diversity needs at least one predictions file",
        ));
    }
    let reports = files
        .iter()
        .map(|f| PredictionSet::load(f).map(|p| diversity_report(&p)))
        .collect::<Result<Vec<_>>>()?;
    let base = reports[0].clone();
    let rows: Vec<DiversityRow> = files
        .iter()
        .zip(reports)
        .map(|(f, r)| DiversityRow {
            file: f.display().to_string(),
            delta_total: r.total_words as i64 - base.total_words as i64,
            delta_unique: r.unique_words as i64 - base.unique_words as i64,
            report: r,
        })
        .collect();
    let header = [
        "file",
        "total_words",
        "unique_words",
        "avg_frequency",
        "delta_total",
        "delta_unique",
    ];
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.file.clone(),
                r.report.total_words.to_string(),
                r.report.unique_words.to_string(),
                format!("{:.2}", r.report.avg_frequency),
                r.delta_total.to_string(),
                r.delta_unique.to_string(),
            ]
        })
        .collect();
    write_table(out, "diversity", &header, &cells, &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionWordRow {
    pub epsilon: f64,
    pub report: crate::metrics::ClassificationReport,
    pub unique_predicted: usize,
    pub unique_gold: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionWordCmd {
    pub data: PathBuf,
    pub out: PathBuf,
    pub run: RunOptions,
    pub epsilons: Vec<f64>,
}

impl ActionWordCmd {
    pub fn new(data: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        ActionWordCmd {
            data: data.into(),
            out: out.into(),
            run: RunOptions::default(),
            epsilons: ACTION_WORD_EPSILONS.to_vec(),
        }
    }
}

fn action_labels(c: &Corpus) -> Result<Vec<String>> {
    c.samples
        .iter()
        .map(|s| {
            extract_action_word(&s.comment_tokens)
                .map_err(|_| Error::data(format!("sample {} has an empty comment", s.id)))
        })
        .collect()
}

fn label_vocabulary(labels: &[String]) -> Result<Vocabulary> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

fn action_examples(
    c: &Corpus,
    labels: &[String],
    data: &Prepared,
    vocab: &Vocabulary,
    config: &ModelConfig,
) -> Vec<Example> {
    c.samples
        .iter()
        .zip(labels)
        .map(|(s, l)| Example {
            target: vec![START, vocab.id(l)],
            ..encode_sample(s, &data.src, vocab, config)
        })
        .collect()
}

/// Classifies the stemmed first comment word with a one-step decoder, once per ε.
pub fn cmd_actionword(cmd: &ActionWordCmd) -> Result<Vec<ActionWordRow>> {
    for &e in &cmd.epsilons {
        check_epsilon(e)?;
    }
    let data = load_prepared(&cmd.data)?;
    let train_labels = action_labels(&data.train)?;
    let val_labels = action_labels(&data.val)?;
    let test_labels = action_labels(&data.test)?;
    let vocab = label_vocabulary(&train_labels)?;
    let mut model_opts = cmd.run.model.clone();
    model_opts.comment_len = 2;

    let rows = cmd
        .epsilons
        .par_iter()
        .map(|&eps| {
            let config = model_opts.config(data.src.size(), vocab.size(), eps);
            let model = build_model(&config, cmd.run.seed)?;
            let tr = action_examples(&data.train, &train_labels, &data, &vocab, &config);
            let va = action_examples(&data.val, &val_labels, &data, &vocab, &config);
            let outcome = train(
                model,
                &tr,
                &va,
                &cmd.run.train_config(eps),
                TrainOptions {
                    timing: cmd.run.timing,
                },
            )?;
            let model = outcome.best.to_model()?;
            let te = action_examples(&data.test, &test_labels, &data, &vocab, &config);
            let predicted = te
                .iter()
                .map(|ex| {
                    let z = model.logits(&ex.code, ex.ast.as_deref(), &[START])?;
                    let row = z.row(0);
                    let mut best = 0;
                    for (k, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = k;
                        }
                    }
                    Ok(vocab.token(best).to_string())
                })
                .collect::<Result<Vec<_>>>()?;
            let report = classification_report(&test_labels, &predicted)?;
            let uniq = |xs: &[String]| xs.iter().collect::<std::collections::BTreeSet<_>>().len();
            Ok(ActionWordRow {
                epsilon: eps,
                unique_predicted: uniq(&predicted),
                unique_gold: uniq(&test_labels),
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let header = [
        "epsilon",
        "micro P",
        "micro R",
        "micro F1",
        "macro P",
        "macro R",
        "macro F1",
        "unique predicted",
        "unique gold",
    ];
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let (mi, ma) = (&r.report.micro, &r.report.macro_avg);
            vec![
                r.epsilon.to_string(),
                format_score(mi.precision),
                format_score(mi.recall),
                format_score(mi.f1),
                format_score(ma.precision),
                format_score(ma.recall),
                format_score(ma.f1),
                r.unique_predicted.to_string(),
                r.unique_gold.to_string(),
            ]
        })
        .collect();
    write_table(&cmd.out, "actionword", &header, &cells, &rows)?;
    Ok(rows)
}

/// Re-renders a saved `ReportTable` JSON file.
pub fn cmd_report(table: &Path, format: Format) -> Result<String> {
    let text = fs::read_to_string(table).map_err(|e| Error::io(table, e))?;
    let t: ReportTable = serde_json::from_str(&text)
        .map_err(|e| Error::data(format!("{}: {e}", table.display())))?;
    render_report(&t, format)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::{generate, SyntheticConfig};
    use crate::corpus::write_records;

    fn tiny_run() -> RunOptions {
        RunOptions {
            model: ModelOptions {
                embed_dim: 8,
                hidden_dim: 8,
                heads: 2,
                layers: 1,
                dropout: 0.0,
                code_len: 12,
                ast_len: 20,
                comment_len: 8,
                ..ModelOptions::default()
            },
            epochs: 2,
            batch_size: 8,
            learning_rate: 5e-3,
            seed: 3,
            timing: false,
        }
    }

    fn prepared(dir: &Path) -> PathBuf {
        let recs = generate(&SyntheticConfig {
            samples: 90,
            projects: 9,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let input = dir.join("corpus.jsonl");
        write_records(&input, &recs).unwrap();
        let out = dir.join("prep");
        let mut o = PrepareOptions::new(&input, &out);
        o.src_vocab = 60;
        o.tgt_vocab = 40;
        cmd_prepare(&o).unwrap();
        out
    }

    #[test]
    fn prepare_layout_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let out = prepared(dir.path());
        for f in [
            "train.jsonl",
            "val.jsonl",
            "test.jsonl",
            SRC_VOCAB_FILE,
            TGT_VOCAB_FILE,
        ] {
            assert!(out.join(f).exists(), "{f}");
        }
        let first: Vec<Vec<u8>> = ["train.jsonl", TGT_VOCAB_FILE]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect();
        let again = prepared(dir.path());
        for (i, f) in ["train.jsonl", TGT_VOCAB_FILE].iter().enumerate() {
            assert_eq!(fs::read(again.join(f)).unwrap(), first[i]);
        }
        let p = load_prepared(&out).unwrap();
        assert_eq!(p.tgt.size(), 40);
        assert!(p.train.len() > p.test.len());
    }

    #[test]
    fn prepare_rejects_tiny_vocab() {
        let dir = tempfile::tempdir().unwrap();
        let mut o = PrepareOptions::new(dir.path().join("missing.jsonl"), dir.path().join("o"));
        o.src_vocab = 4;
        assert!(matches!(cmd_prepare(&o), Err(Error::Config(_))));
    }

    #[test]
    fn pair_run_layout() {
        let dir = tempfile::tempdir().unwrap();
        let data = prepared(dir.path());
        let mut cmd = PairRunCmd::new(&data, dir.path().join("pair"));
        cmd.run = tiny_run();
        let t = cmd_pair_run(&cmd).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.rows[0].meteor_test.is_none());
        let c = t.rows[1].meteor_test.as_ref().unwrap();
        assert_eq!(c.significant, c.p_value < c.alpha);
        for f in [
            "report.csv",
            "report.md",
            "report.json",
            "eps-0/model.json",
            "eps-0.1/predictions.jsonl",
        ] {
            assert!(cmd.out.join(f).exists(), "{f}");
        }
        let md = fs::read_to_string(cmd.out.join("report.md")).unwrap();
        let baseline = md.lines().nth(2).unwrap();
        assert!(baseline.trim_end().ends_with("- |"), "{baseline}");
    }

    #[test]
    fn actionword_and_diversity() {
        let dir = tempfile::tempdir().unwrap();
        let data = prepared(dir.path());
        let mut cmd = ActionWordCmd::new(&data, dir.path().join("aw"));
        cmd.run = tiny_run();
        let rows = cmd_actionword(&cmd).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(
            rows.iter().map(|r| r.epsilon).collect::<Vec<_>>(),
            ACTION_WORD_EPSILONS.to_vec()
        );
        let p = load_prepared(&data).unwrap();
        let gold: std::collections::BTreeSet<String> =
            action_labels(&p.test).unwrap().into_iter().collect();
        assert_eq!(rows[0].unique_gold, gold.len());

        let a = dir.path().join("a.jsonl");
        fs::write(&a, "{\"id\":\"1\",\"ref\":[],\"pred\":[\"a\",\"b\"]}\n{\"id\":\"2\",\"ref\":[],\"pred\":[\"a\"]}\n").unwrap();
        let rows = cmd_diversity(&[a.clone(), a], &dir.path().join("div")).unwrap();
        assert_eq!(rows[1].report.total_words, 3);
        assert_eq!(rows[1].report.unique_words, 2);
        assert_eq!((rows[1].delta_total, rows[1].delta_unique), (0, 0));
    }

    #[test]
    fn sweep_grid_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cmd = SweepCmd::new(dir.path(), dir.path().join("s"));
        cmd.epsilons = vec![0.1, 0.0];
        assert!(matches!(cmd_sweep(&cmd), Err(Error::Config(_))));
        cmd.epsilons = vec![0.0, 0.1, 0.1];
        assert!(matches!(cmd_sweep(&cmd), Err(Error::Config(_))));
        assert_eq!(SweepCmd::new(".", ".").epsilons, DEFAULT_SWEEP.to_vec());
    }
}
