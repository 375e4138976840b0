//! Seeded toy corpus of mini-grammar functions whose comments can be read
//! off the code. Verbs, nouns and qualifiers are drawn from Zipf laws, so
//! the comment vocabulary has a head of frequent words and a long tail.

use rand_distr::{Distribution, Zipf};

use super::Record;
use crate::error::{Error, Result};
use crate::tensor::Rng;

/// (function-name verb, comment verb)
pub const VERBS: &[(&str, &str)] = &[
    ("get", "gets"),
    ("set", "sets"),
    ("delete", "deletes"),
    ("create", "creates"),
    ("update", "updates"),
    ("remove", "removes"),
    ("add", "adds"),
    ("load", "loads"),
    ("save", "saves"),
    ("read", "reads"),
    ("write", "writes"),
    ("scan", "scans"),
    ("build", "builds"),
    ("find", "finds"),
    ("check", "checks"),
    ("close", "closes"),
    ("open", "opens"),
    ("reset", "resets"),
    ("send", "sends"),
    ("handle", "handles"),
    ("compute", "computes"),
    ("convert", "converts"),
    ("register", "registers"),
    ("copy", "copies"),
    ("print", "prints"),
    ("start", "starts"),
    ("stop", "stops"),
    ("clear", "clears"),
    ("sort", "sorts"),
    ("merge", "merges"),
];

pub const NOUNS: &[&str] = &[
    "file", "user", "name", "value", "list", "node", "item", "buffer", "path", "key", "table",
    "record", "message", "event", "config", "token", "entry", "index", "request", "reply",
    "session", "stream", "image", "label", "count", "window", "button", "cache", "query", "result",
    "channel", "socket", "thread", "task", "job", "queue", "field", "column", "row", "page",
    "panel", "color", "font", "border", "layer", "model", "view", "state", "rule", "filter",
    "schema", "handler", "listener", "packet", "frame", "block", "segment", "header", "footer",
    "vertex", "edge", "graph", "tree", "matrix", "vector", "point", "shape", "circle", "account",
    "order", "invoice", "product", "customer", "server", "client", "host", "port", "timer",
    "clock", "lock",
];

pub const QUALIFIERS: &[&str] = &[
    "current", "new", "default", "next", "first", "last", "local", "remote", "old", "main",
    "selected", "empty", "global", "temp", "parent", "child", "active", "hidden", "single",
    "total",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub samples: usize,
    pub projects: usize,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            samples: 800,
            projects: 16,
            zipf_exponent: 1.1,
            seed: 7,
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}

struct Pickers {
    verb: Zipf<f64>,
    noun: Zipf<f64>,
    qual: Zipf<f64>,
}

fn pick<T: Copy>(table: &[T], z: &Zipf<f64>, rng: &mut Rng) -> T {
    table[z.sample(rng) as usize - 1]
}

fn body(verb: &str, var: &str, other: &str, rng: &mut Rng) -> String {
    let call = format!("{verb}({var});");
    match rng.below(4) {
        0 => format!("int n = size({other});\n  {call}\n  return n;"),
        1 => format!("if ({var} == 0) {{ return 0; }}\n  {call}\n  return 1;"),
        2 => format!("int i = 0;\n  while (i < {other}) {{ {call} i = i + 1; }}\n  return i;"),
        _ => format!("{call}\n  return {other};"),
    }
}

/// Generates `config.samples` records spread over `config.projects` projects.
///
/// Comments follow the pattern `<verb>s the [qualifier] <noun> [of the
/// <noun>]`; each content word also appears in the function name or the
/// parameter list.
pub fn generate(config: &SyntheticConfig) -> Result<Vec<Record>> {
    if config.samples == 0 || config.projects == 0 {
        return Err(Error::config("synthetic corpus needs samples and projects"));
    }
    let zipf = |n: usize| {
        Zipf::new(n as f64, config.zipf_exponent)
            .map_err(|e| Error::config(format!("zipf exponent: {e}")))
    };
    let z = Pickers {
        verb: zipf(VERBS.len())?,
        noun: zipf(NOUNS.len())?,
        qual: zipf(QUALIFIERS.len())?,
    };
    let mut rng = Rng::derive(config.seed, &[0x5e7]);
    let mut out = Vec::with_capacity(config.samples);
    for i in 0..config.samples {
        let (verb, verb_s) = pick(VERBS, &z.verb, &mut rng);
        let noun = pick(NOUNS, &z.noun, &mut rng);
        let qual = (rng.uniform() < 0.4).then(|| pick(QUALIFIERS, &z.qual, &mut rng));
        let owner = (rng.uniform() < 0.5).then(|| pick(NOUNS, &z.noun, &mut rng));

        let mut fname = verb.to_string();
        let mut comment = format!("{verb_s} the");
        if let Some(q) = qual {
            fname.push_str(&capitalize(q));
            comment.push(' ');
            comment.push_str(q);
        }
        fname.push_str(&capitalize(noun));
        comment.push(' ');
        comment.push_str(noun);
        let other = match owner {
            Some(o) => {
                comment.push_str(" of the ");
                comment.push_str(o);
                o.to_string()
            }
            None => "limit".to_string(),
        };
        comment.push('.');

        let ret = if rng.uniform() < 0.5 { "int" } else { "long" };
        let code = format!(
            "{ret} {fname}(int {noun}, int {other}) {{\n  {}\n}}",
            body(verb, noun, &other, &mut rng)
        );
        out.push(Record {
            id: format!("syn{i:05}"),
            project: format!("proj{:02}", rng.below(config.projects)),
            code,
            comment,
            ast: None,
        });
    }
    Ok(out)
}
