use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{Corpus, SplitTag};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIALS: usize = 4;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Which half of each sample a vocabulary covers. The source side counts
/// code subtokens and flattened-AST tokens; the target side counts comment
/// tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// Token ↔ index map. Indices 0–3 are PAD, START, END, UNK; the rest follow
/// descending training frequency, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Encoded id sequence plus whether content was cut to fit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub truncated: bool,
}

impl Vocabulary {
    /// Builds from an ordered list of non-special tokens.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens: all, index })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens
            .get(id)
            .map_or(SPECIAL_TOKENS[UNK], String::as_str)
    }

    /// Maps ids back to tokens, dropping specials.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i >= NUM_SPECIALS)
            .map(|&i| self.token(i).to_string())
            .collect()
    }

    /// One token per line; line number = index.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < NUM_SPECIALS || lines[..NUM_SPECIALS] != SPECIAL_TOKENS {
            return Err(Error::data(
                "vocabulary file must start with the four special tokens",
            ));
        }
        Vocabulary::from_tokens(lines[NUM_SPECIALS..].iter().copied())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::from_text(&text)
    }
}

/// The `size − 4` most frequent tokens of one side of a training corpus.
/// Returns fewer when the corpus has fewer distinct tokens.
pub fn build_vocabulary(corpus: &Corpus, size: usize, side: Side) -> Result<Vocabulary> {
    if size <= NUM_SPECIALS {
        return Err(Error::config(format!(
            "vocabulary size {size} leaves no room beyond the {NUM_SPECIALS} specials (minimum 5)"
        )));
    }
    if corpus.split_tag != SplitTag::Train {
        return Err(Error::config(
            "vocabularies are built from the training split only",
        ));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &corpus.samples {
        let toks: Box<dyn Iterator<Item = &String>> = match side {
            Side::Source => Box::new(s.code_tokens.iter().chain(&s.ast_tokens)),
            Side::Target => Box::new(s.comment_tokens.iter()),
        };
        for t in toks {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, _)| !SPECIAL_TOKENS.contains(t))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Vocabulary::from_tokens(ranked.into_iter().take(size - NUM_SPECIALS).map(|(t, _)| t))
}

/// Maps tokens to ids. With `add_markers`, wraps in START/END, truncates
/// to `max_len` keeping END in the final slot, then pads with PAD; without
/// markers, truncates and pads only.
pub fn encode_sequence(
    tokens: &[String],
    vocab: &Vocabulary,
    max_len: usize,
    add_markers: bool,
) -> TokenSequence {
    assert!(max_len >= 2, "max_len must be at least 2");
    let mut ids: Vec<usize> = Vec::with_capacity(max_len);
    let body: Vec<usize> = tokens.iter().map(|t| vocab.id(t)).collect();
    let truncated;
    if add_markers {
        let room = max_len - 2;
        truncated = body.len() > room;
        ids.push(START);
        ids.extend(body.iter().take(room));
        ids.push(END);
    } else {
        truncated = body.len() > max_len;
        ids.extend(body.iter().take(max_len));
    }
    ids.resize(max_len, PAD);
    TokenSequence { ids, truncated }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Record, Sample};
    use proptest::prelude::*;

    fn corpus_with_comments(comments: &[&[&str]]) -> Corpus {
        let samples = comments
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Sample::from_record(&Record {
                    id: format!("s{i}"),
                    project: "p".into(),
                    code: "x".into(),
                    comment: c.join(" "),
                    ast: None,
                })
                .unwrap()
            })
            .collect();
        Corpus::new(samples, SplitTag::Train).unwrap()
    }

    #[test]
    fn frequency_order_and_cutoff() {
        let c = corpus_with_comments(&[&["a", "b", "c"], &["a", "b"], &["a"]]);
        let v = build_vocabulary(&c, 6, Side::Target).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<s>", "</s>", "<unk>", "a", "b"]);
        let v = build_vocabulary(&c, 5, Side::Target).unwrap();
        assert_eq!(v.tokens()[4..], ["a"]);
    }

    #[test]
    fn ties_are_lexicographic() {
        let c = corpus_with_comments(&[&["b", "a"], &["a", "b"]]);
        let v = build_vocabulary(&c, 6, Side::Target).unwrap();
        assert_eq!(v.tokens()[4..], ["a", "b"]);
    }

    #[test]
    fn too_small_or_wrong_split() {
        let c = corpus_with_comments(&[&["a"]]);
        assert!(matches!(
            build_vocabulary(&c, 4, Side::Target),
            Err(Error::Config(_))
        ));
        let mut test = c.clone();
        test.split_tag = SplitTag::Test;
        assert!(build_vocabulary(&test, 10, Side::Target).is_err());
    }

    #[test]
    fn encode_examples() {
        let v = Vocabulary::from_tokens(["a", "b", "c"]).unwrap();
        let t = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let e = encode_sequence(&t(&["foo"]), &v, 4, true);
        assert_eq!(
            e,
            TokenSequence {
                ids: vec![1, 3, 2, 0],
                truncated: false
            }
        );
        let e = encode_sequence(&t(&["a", "b", "c"]), &v, 3, true);
        assert_eq!(
            e,
            TokenSequence {
                ids: vec![1, v.id("a"), 2],
                truncated: true
            }
        );
        let e = encode_sequence(&[], &v, 2, true);
        assert_eq!(e.ids, vec![1, 2]);
        let e = encode_sequence(&t(&["a", "b", "c"]), &v, 2, false);
        assert_eq!(
            e,
            TokenSequence {
                ids: vec![4, 5],
                truncated: true
            }
        );
    }

    #[test]
    fn text_round_trip() {
        let v = Vocabulary::from_tokens(["get", "set"]).unwrap();
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
        assert!(Vocabulary::from_text("a\nb\n").is_err());
    }

    proptest! {
        #[test]
        fn index_inverts_tokens_and_encoding_bounded(
            words in prop::collection::btree_set("[a-z]{1,5}", 1..30),
            seq in prop::collection::vec("[a-z]{1,5}", 0..20),
            max_len in 2usize..12,
            markers: bool,
        ) {
            let v = Vocabulary::from_tokens(words.iter().cloned()).unwrap();
            for t in v.tokens() {
                prop_assert_eq!(v.token(v.id(t)), t.as_str());
            }
            let e = encode_sequence(&seq, &v, max_len, markers);
            prop_assert_eq!(e.ids.len(), max_len);
            prop_assert!(e.ids.iter().all(|&i| i < v.size()));
        }
    }
}
