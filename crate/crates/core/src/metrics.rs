//! Evaluation: corpus BLEU, two-pass METEOR, embedding cosine similarity,
//! paired t-tests, word diversity and classification reports.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::corpus::{stem, SPECIAL_TOKENS, UNK};
use crate::error::{Error, Result};
use crate::tensor::Rng;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const EMBED_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    #[serde(rename = "ref")]
    pub reference: Vec<String>,
    pub pred: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionSet {
    pub records: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(records: Vec<Prediction>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::data(format!("duplicate prediction id {}", r.id)));
            }
        }
        Ok(PredictionSet { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: Prediction = serde_json::from_str(line)
                .map_err(|e| Error::data(format!("predictions line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Self::new(records)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// Scores aligned by id with `other`; errors unless both hold the same ids.
    pub fn align<'a>(
        &'a self,
        other: &'a PredictionSet,
    ) -> Result<Vec<(&'a Prediction, &'a Prediction)>> {
        let index: HashMap<&str, &Prediction> =
            other.records.iter().map(|r| (r.id.as_str(), r)).collect();
        if index.len() != self.records.len() {
            return Err(Error::data("prediction sets cover different ids"));
        }
        self.records
            .iter()
            .map(|r| {
                index
                    .get(r.id.as_str())
                    .map(|o| (r, *o))
                    .ok_or_else(|| Error::data(format!("id {} missing from second set", r.id)))
            })
            .collect()
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4 with uniform weights and the brevity penalty
/// `min(1, exp(1 - r/c))`. Any zero n-gram precision yields 0.
pub fn corpus_bleu(preds: &PredictionSet) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::data("BLEU of an empty prediction set"));
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut r, mut c) = (0usize, 0usize);
    for p in &preds.records {
        r += p.reference.len();
        c += p.pred.len();
        for n in 1..=4 {
            let cand = ngram_counts(&p.pred, n);
            let refs = ngram_counts(&p.reference, n);
            for (g, k) in cand {
                matched[n - 1] += k.min(refs.get(g).copied().unwrap_or(0));
                total[n - 1] += k;
            }
        }
    }
    if c == 0 || matched.contains(&0) {
        return Ok(0.0);
    }
    let log_p: f64 = (0..4)
        .map(|i| 0.25 * (matched[i] as f64 / total[i] as f64).ln())
        .sum();
    let bp = (1.0 - r as f64 / c as f64).exp().min(1.0);
    Ok(bp * log_p.exp())
}

/// Unigram alignment: exact matches first, then stem matches on the rest.
/// Each pred token takes the unmatched ref position that extends the
/// previous match when possible, else the leftmost. Returns `(pred, ref)` pairs.
fn align_unigrams(pred: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut ref_used = vec![false; reference.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let pred_stems: Vec<String> = pred.iter().map(|w| stem(w)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|w| stem(w)).collect();
    for stage in 0..2 {
        let mut last: Option<usize> = None;
        for i in 0..pred.len() {
            if pred_used[i] {
                last = pairs.iter().find(|p| p.0 == i).map(|p| p.1);
                continue;
            }
            let ok = |j: usize| {
                !ref_used[j]
                    && if stage == 0 {
                        pred[i] == reference[j]
                    } else {
                        pred_stems[i] == ref_stems[j]
                    }
            };
            let next = last
                .map(|l| l + 1)
                .filter(|&j| j < reference.len() && ok(j));
            let j = next.or_else(|| (0..reference.len()).find(|&j| ok(j)));
            if let Some(j) = j {
                ref_used[j] = true;
                pred_used[i] = true;
                pairs.push((i, j));
            }
            last = j;
        }
    }
    pairs.sort_unstable();
    pairs
}

/// METEOR with exact and stem passes, `F = 10PR/(R+9P)` and fragmentation
/// penalty `0.5 (chunks/m)^3`.
pub fn sentence_meteor(pred: &[String], reference: &[String]) -> f64 {
    if pred.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let pairs = align_unigrams(pred, reference);
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / pred.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let mut chunks = 1;
    for w in pairs.windows(2) {
        if !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1) {
            chunks += 1;
        }
    }
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f * (1.0 - penalty)
}

/// Fixed-length sentence vectors for the similarity metric.
pub trait SentenceEmbedder: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, tokens: &[String]) -> Vec<f64>;
}

/// Bag-of-words embedder: each token maps to a seeded pseudo-random vector
/// with unit-variance coordinates; a sentence is the mean of its tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedEmbedder {
    pub dim: usize,
    pub seed: u64,
}

pub fn default_embedder() -> HashedEmbedder {
    HashedEmbedder {
        dim: EMBED_DIM,
        seed: 0x5eed,
    }
}

/// FNV-1a, chosen for a platform-independent token hash.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl HashedEmbedder {
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = Rng::derive(self.seed, &[fnv1a(token)]);
        let a = 3f64.sqrt();
        (0..self.dim).map(|_| rng.uniform_range(-a, a)).collect()
    }
}

impl SentenceEmbedder for HashedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, tokens: &[String]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for t in tokens {
            for (o, v) in out.iter_mut().zip(self.token_vector(t)) {
                *o += v;
            }
        }
        if !tokens.is_empty() {
            for o in &mut out {
                *o /= tokens.len() as f64;
            }
        }
        out
    }
}

/// Cosine similarity clamped to `[0, 1]`; both empty gives 1, one empty 0.
pub fn sentence_similarity(
    pred: &[String],
    reference: &[String],
    embedder: &dyn SentenceEmbedder,
) -> Result<f64> {
    match (pred.is_empty(), reference.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let a = embedder.embed(pred);
    let b = embedder.embed(reference);
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::numeric(
            "zero-norm embedding of a non-empty sentence",
        ));
    }
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub corpus_bleu: f64,
    pub meteor: Vec<f64>,
    pub similarity: Vec<f64>,
    pub mean_meteor: f64,
    pub mean_similarity: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn score_predictions(
    preds: &PredictionSet,
    embedder: &dyn SentenceEmbedder,
) -> Result<MetricReport> {
    let corpus_bleu = corpus_bleu(preds)?;
    let meteor: Vec<f64> = preds
        .records
        .iter()
        .map(|p| sentence_meteor(&p.pred, &p.reference))
        .collect();
    let similarity = preds
        .records
        .iter()
        .map(|p| sentence_similarity(&p.pred, &p.reference, embedder))
        .collect::<Result<Vec<f64>>>()?;
    Ok(MetricReport {
        corpus_bleu,
        mean_meteor: mean(&meteor),
        mean_similarity: mean(&similarity),
        meteor,
        similarity,
    })
}

/// Two-sided Student-t tail probability `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn student_t_two_sided_p(t: f64, df: usize) -> Result<f64> {
    if df < 1 {
        return Err(Error::config("student t needs df >= 1"));
    }
    if t.is_nan() {
        return Err(Error::numeric("t statistic is NaN"));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let df = df as f64;
    let x = df / (df + t * t);
    Ok(beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub metric: String,
    pub t_stat: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
}

/// Paired t-test on `a - b` with n−1 degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<ComparisonResult> {
    if a.len() != b.len() {
        return Err(Error::data(format!(
            "paired t-test on {} vs {} scores",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::data("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let (t, p) = if d.iter().all(|&x| x == 0.0) {
        (0.0, 1.0)
    } else if sd == 0.0 {
        (f64::INFINITY.copysign(m), 0.0)
    } else {
        let t = m / (sd / (n as f64).sqrt());
        (t, student_t_two_sided_p(t, n - 1)?)
    };
    Ok(ComparisonResult {
        metric: String::new(),
        t_stat: t,
        p_value: p,
        alpha,
        significant: p < alpha,
    })
}

pub fn compare_metric(metric: &str, a: &[f64], b: &[f64], alpha: f64) -> Result<ComparisonResult> {
    Ok(ComparisonResult {
        metric: metric.to_string(),
        ..paired_t_test(a, b, alpha)?
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub total_words: usize,
    pub unique_words: usize,
    pub avg_frequency: f64,
}

fn is_marker(tok: &str) -> bool {
    SPECIAL_TOKENS
        .iter()
        .enumerate()
        .any(|(i, s)| i != UNK && *s == tok)
}

/// Word counts over predicted tokens, PAD/START/END excluded.
pub fn diversity_report(preds: &PredictionSet) -> DiversityReport {
    let mut total = 0;
    let mut unique = BTreeSet::new();
    for p in &preds.records {
        for t in p.pred.iter().filter(|t| !is_marker(t)) {
            total += 1;
            unique.insert(t.as_str());
        }
    }
    DiversityReport {
        total_words: total,
        unique_words: unique.len(),
        avg_frequency: if unique.is_empty() {
            0.0
        } else {
            total as f64 / unique.len() as f64
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: BTreeMap<String, ClassScores>,
    pub micro: ClassScores,
    #[serde(rename = "macro")]
    pub macro_avg: ClassScores,
    pub accuracy: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-class, micro and macro precision/recall/F1 over the union of labels.
pub fn classification_report(
    gold: &[String],
    predicted: &[String],
) -> Result<ClassificationReport> {
    if gold.len() != predicted.len() {
        return Err(Error::data(format!(
            "{} gold labels vs {} predictions",
            gold.len(),
            predicted.len()
        )));
    }
    let labels: BTreeSet<&str> = gold.iter().chain(predicted).map(String::as_str).collect();
    let mut classes = BTreeMap::new();
    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    for &label in &labels {
        let tp = gold
            .iter()
            .zip(predicted)
            .filter(|(g, p)| *g == label && *p == label)
            .count();
        let fp = gold
            .iter()
            .zip(predicted)
            .filter(|(g, p)| *g != label && *p == label)
            .count();
        let fneg = gold
            .iter()
            .zip(predicted)
            .filter(|(g, p)| *g == label && *p != label)
            .count();
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fneg);
        classes.insert(
            label.to_string(),
            ClassScores {
                precision,
                recall,
                f1: f1(precision, recall),
                support: tp + fneg,
            },
        );
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
    }
    let k = classes.len().max(1) as f64;
    let macro_avg = ClassScores {
        precision: classes.values().map(|c| c.precision).sum::<f64>() / k,
        recall: classes.values().map(|c| c.recall).sum::<f64>() / k,
        f1: classes.values().map(|c| c.f1).sum::<f64>() / k,
        support: gold.len(),
    };
    let mp = ratio(tp_all, tp_all + fp_all);
    let mr = ratio(tp_all, tp_all + fn_all);
    let correct = gold.iter().zip(predicted).filter(|(g, p)| g == p).count();
    Ok(ClassificationReport {
        classes,
        micro: ClassScores {
            precision: mp,
            recall: mr,
            f1: f1(mp, mr),
            support: gold.len(),
        },
        macro_avg,
        accuracy: ratio(correct, gold.len()),
    })
}
