//! Corpus ingestion: JSON-lines records, tokenization, vocabularies,
//! project-wise splits, length-quantile filtering and action-word labels.

mod stem;
pub mod synthetic;
mod tokenize;
mod vocab;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::astkit;
use crate::error::{Error, Result};
use crate::tensor::Rng;

pub use stem::stem;
pub use tokenize::{tokenize_code, tokenize_comment};
pub use vocab::{
    build_vocabulary, encode_sequence, Side, TokenSequence, Vocabulary, END, NUM_SPECIALS, PAD,
    SPECIAL_TOKENS, START, UNK,
};

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub project: String,
    pub code: String,
    pub comment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ast: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub project: String,
    pub code: String,
    pub comment: String,
    pub code_tokens: Vec<String>,
    pub comment_tokens: Vec<String>,
    /// S-expression AST, either supplied or parsed from `code`.
    pub ast_text: Option<String>,
    /// Structure-based traversal of `ast_text`; empty when there is no AST.
    pub ast_tokens: Vec<String>,
    pub code_char_len: usize,
}

impl Sample {
    /// Tokenizes a record. A supplied `ast` must parse; otherwise the code is
    /// run through the mini-function parser and left AST-less on failure.
    pub fn from_record(rec: &Record) -> Result<Self> {
        let code_char_len = rec.code.chars().count();
        if code_char_len == 0 {
            return Err(Error::data(format!("sample {} has empty code", rec.id)));
        }
        let tree = match &rec.ast {
            Some(text) => Some(
                astkit::import_sexpr(text)
                    .map_err(|e| Error::data(format!("sample {}: bad ast: {e}", rec.id)))?,
            ),
            None => astkit::parse_mini_function(&rec.code).ok(),
        };
        Ok(Sample {
            id: rec.id.clone(),
            project: rec.project.clone(),
            code: rec.code.clone(),
            comment: rec.comment.clone(),
            code_tokens: tokenize_code(&rec.code),
            comment_tokens: tokenize_comment(&rec.comment),
            ast_text: tree.as_ref().map(astkit::render_sexpr),
            ast_tokens: tree.as_ref().map(astkit::sbt_flatten).unwrap_or_default(),
            code_char_len,
        })
    }

    pub fn to_record(&self) -> Record {
        Record {
            id: self.id.clone(),
            project: self.project.clone(),
            code: self.code.clone(),
            comment: self.comment.clone(),
            ast: self.ast_text.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
    Unsplit,
}

impl SplitTag {
    pub fn file_name(self) -> &'static str {
        match self {
            SplitTag::Train => "train.jsonl",
            SplitTag::Val => "val.jsonl",
            SplitTag::Test => "test.jsonl",
            SplitTag::Unsplit => "corpus.jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub split_tag: SplitTag,
}

impl Corpus {
    pub fn new(samples: Vec<Sample>, split_tag: SplitTag) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::data(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Corpus { samples, split_tag })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn from_records(records: &[Record], split_tag: SplitTag) -> Result<Self> {
        let samples = records
            .iter()
            .map(Sample::from_record)
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(samples, split_tag)
    }

    pub fn load(path: &Path, split_tag: SplitTag) -> Result<Self> {
        Corpus::from_records(&read_records(path)?, split_tag)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let records: Vec<Record> = self.samples.iter().map(Sample::to_record).collect();
        write_records(path, &records)
    }

    /// Drops samples whose comment tokenizes to nothing.
    pub fn drop_empty_comments(self) -> Self {
        Corpus {
            samples: self
                .samples
                .into_iter()
                .filter(|s| !s.comment_tokens.is_empty())
                .collect(),
            split_tag: self.split_tag,
        }
    }
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text)
}

pub fn parse_records(text: &str) -> Result<Vec<Record>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| Error::data(format!("corpus line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Assigns whole projects to train/val/test. Projects are shuffled under
/// `seed`, then each goes to the split furthest (relatively) below its
/// sample-count target; ties prefer train, then val.
pub fn split_by_project(
    corpus: &Corpus,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus)> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| x <= 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &corpus.samples {
        *sizes.entry(s.project.as_str()).or_default() += 1;
    }
    if sizes.len() < 3 {
        return Err(Error::data(format!(
            "need at least 3 projects for a three-way split, found {}",
            sizes.len()
        )));
    }
    let mut projects: Vec<&str> = sizes.keys().copied().collect();
    Rng::derive(seed, &[0x5151]).shuffle(&mut projects);

    let total = corpus.len() as f64;
    let targets = r.map(|x| x * total);
    let mut counts = [0usize; 3];
    let mut assigned: BTreeMap<&str, usize> = BTreeMap::new();
    for p in projects {
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for k in 0..3 {
            let deficit = (targets[k] - counts[k] as f64) / targets[k];
            if deficit > best_deficit {
                best = k;
                best_deficit = deficit;
            }
        }
        counts[best] += sizes[p];
        assigned.insert(p, best);
    }

    let mut parts: [Vec<Sample>; 3] = Default::default();
    for s in &corpus.samples {
        parts[assigned[s.project.as_str()]].push(s.clone());
    }
    let [train, val, test] = parts;
    Ok((
        Corpus::new(train, SplitTag::Train)?,
        Corpus::new(val, SplitTag::Val)?,
        Corpus::new(test, SplitTag::Test)?,
    ))
}

/// Nearest-rank empirical quantile of sorted `values`.
fn nearest_rank(sorted: &[usize], q: f64) -> usize {
    let n = sorted.len();
    let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Keeps samples strictly longer (in characters) than the `q`-quantile.
pub fn filter_by_length_quantile(corpus: &Corpus, q: f64) -> Result<Corpus> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::config(format!("quantile {q} outside (0, 1)")));
    }
    if corpus.is_empty() {
        return Err(Error::data(
            "cannot take a length quantile of an empty corpus",
        ));
    }
    let mut lens: Vec<usize> = corpus.samples.iter().map(|s| s.code_char_len).collect();
    lens.sort_unstable();
    let cut = nearest_rank(&lens, q);
    Corpus::new(
        corpus
            .samples
            .iter()
            .filter(|s| s.code_char_len > cut)
            .cloned()
            .collect(),
        corpus.split_tag,
    )
}

/// Stem of the first comment token.
pub fn extract_action_word(comment_tokens: &[String]) -> Result<String> {
    comment_tokens
        .first()
        .map(|w| stem(w))
        .ok_or_else(|| Error::data("cannot extract an action word from an empty comment"))
}

/// Distinct project names in order of first appearance.
pub fn projects(corpus: &Corpus) -> Vec<String> {
    let mut seen = BTreeSet::new();
    corpus
        .samples
        .iter()
        .filter(|s| seen.insert(s.project.clone()))
        .map(|s| s.project.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn sample(id: &str, project: &str, len: usize) -> Sample {
        Sample::from_record(&Record {
            id: id.into(),
            project: project.into(),
            code: "x".repeat(len),
            comment: "does things".into(),
            ast: None,
        })
        .unwrap()
    }

    fn grid(projects: usize, per: usize) -> Corpus {
        let mut v = Vec::new();
        for p in 0..projects {
            for i in 0..per {
                v.push(sample(&format!("p{p}-{i}"), &format!("proj{p}"), 1 + i));
            }
        }
        Corpus::new(v, SplitTag::Unsplit).unwrap()
    }

    #[test]
    fn ten_by_ten_splits_eight_one_one() {
        for seed in 0..20 {
            let (tr, va, te) = split_by_project(&grid(10, 10), (0.8, 0.1, 0.1), seed).unwrap();
            assert_eq!(projects(&tr).len(), 8);
            assert_eq!(projects(&va).len(), 1);
            assert_eq!(projects(&te).len(), 1);
        }
    }

    #[test]
    fn split_needs_three_projects_and_valid_ratios() {
        assert!(matches!(
            split_by_project(&grid(2, 5), (0.8, 0.1, 0.1), 0),
            Err(Error::Data(_))
        ));
        assert!(split_by_project(&grid(5, 5), (0.8, 0.1, 0.2), 0).is_err());
        assert!(split_by_project(&grid(5, 5), (1.0, 0.0, 0.0), 0).is_err());
    }

    #[test]
    fn split_is_deterministic() {
        let c = grid(12, 3);
        let a = split_by_project(&c, (0.6, 0.2, 0.2), 5).unwrap();
        let b = split_by_project(&c, (0.6, 0.2, 0.2), 5).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn split_partitions_and_keeps_projects_pure(
            sizes in prop::collection::vec(1usize..8, 3..15),
            seed: u64,
        ) {
            let mut v = Vec::new();
            for (p, &n) in sizes.iter().enumerate() {
                for i in 0..n {
                    v.push(sample(&format!("{p}-{i}"), &format!("proj{p}"), 3));
                }
            }
            let c = Corpus::new(v, SplitTag::Unsplit).unwrap();
            let (a, b, t) = split_by_project(&c, (0.7, 0.15, 0.15), seed).unwrap();
            let mut ids: Vec<String> = [&a, &b, &t].iter().flat_map(|c| c.samples.iter().map(|s| s.id.clone())).collect();
            ids.sort();
            let mut want: Vec<String> = c.samples.iter().map(|s| s.id.clone()).collect();
            want.sort();
            prop_assert_eq!(ids, want);
            let pa: BTreeSet<String> = projects(&a).into_iter().collect();
            let pb: BTreeSet<String> = projects(&b).into_iter().collect();
            let pt: BTreeSet<String> = projects(&t).into_iter().collect();
            prop_assert!(pa.is_disjoint(&pb) && pa.is_disjoint(&pt) && pb.is_disjoint(&pt));
            prop_assert!(!a.is_empty() && !b.is_empty() && !t.is_empty());
        }
    }

    #[test]
    fn quantile_filter_examples() {
        let mk = |lens: &[usize]| {
            Corpus::new(
                lens.iter()
                    .enumerate()
                    .map(|(i, &l)| sample(&i.to_string(), "p", l))
                    .collect(),
                SplitTag::Unsplit,
            )
            .unwrap()
        };
        let kept = filter_by_length_quantile(&mk(&(1..=10).collect::<Vec<_>>()), 0.9).unwrap();
        assert_eq!(
            kept.samples
                .iter()
                .map(|s| s.code_char_len)
                .collect::<Vec<_>>(),
            vec![10]
        );
        let kept = filter_by_length_quantile(&mk(&[1, 2, 3, 4]), 0.75).unwrap();
        assert_eq!(
            kept.samples
                .iter()
                .map(|s| s.code_char_len)
                .collect::<Vec<_>>(),
            vec![4]
        );
        for q in [0.1, 0.5, 0.99] {
            assert!(filter_by_length_quantile(&mk(&[7; 9]), q)
                .unwrap()
                .is_empty());
        }
        let empty = Corpus::new(vec![], SplitTag::Unsplit).unwrap();
        assert!(matches!(
            filter_by_length_quantile(&empty, 0.5),
            Err(Error::Data(_))
        ));
        assert!(filter_by_length_quantile(&mk(&[1]), 1.0).is_err());
    }

    #[test]
    fn quantile_filter_matches_enumeration() {
        // Nearest-rank by brute force: smallest v with #{x ≤ v} ≥ q·n.
        let lens = [5usize, 3, 9, 9, 1, 12, 7, 3, 3, 8, 20];
        let c = Corpus::new(
            lens.iter()
                .enumerate()
                .map(|(i, &l)| sample(&i.to_string(), "p", l))
                .collect(),
            SplitTag::Unsplit,
        )
        .unwrap();
        for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let n = lens.len() as f64;
            let cut = (1..=20)
                .find(|&v| lens.iter().filter(|&&x| x <= v).count() as f64 >= q * n)
                .unwrap();
            let want: Vec<usize> = lens.iter().copied().filter(|&l| l > cut).collect();
            let got: Vec<usize> = filter_by_length_quantile(&c, q)
                .unwrap()
                .samples
                .iter()
                .map(|s| s.code_char_len)
                .collect();
            assert_eq!(got, want, "q={q}");
        }
    }

    #[test]
    fn action_words() {
        let t = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(
            extract_action_word(&t(&["deletes", "the", "file"])).unwrap(),
            "delet"
        );
        assert_eq!(
            extract_action_word(&t(&["returns", "x"])).unwrap(),
            stem("returns")
        );
        assert!(matches!(extract_action_word(&[]), Err(Error::Data(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = Corpus::new(
            vec![sample("a", "p", 1), sample("a", "q", 2)],
            SplitTag::Unsplit,
        );
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn records_parse_with_line_numbers() {
        let text = "{\"id\":\"1\",\"project\":\"p\",\"code\":\"int f(){return 1;}\",\"comment\":\"one\"}\nnot json\n";
        let err = parse_records(text).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let ok = parse_records(text.lines().next().unwrap()).unwrap();
        let s = Sample::from_record(&ok[0]).unwrap();
        assert_eq!(s.ast_tokens.first().map(String::as_str), Some("("));
    }
}
