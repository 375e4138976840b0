//! ASTs for the summarizers: a mini-function parser, s-expression import,
//! structure-based traversal (SBT) flattening and leaf-to-leaf paths.

mod parser;

use crate::error::{Error, Result};
use crate::tensor::Rng;

pub use parser::parse_mini_function;

/// Default cap on labels per leaf-to-leaf path (both leaves and pivot included).
pub const DEFAULT_MAX_PATH_LEN: usize = 8;
/// Default number of sampled paths per method.
pub const DEFAULT_PATH_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AstNode {
    pub label: String,
    pub children: Vec<AstNode>,
}

impl AstNode {
    pub fn leaf(label: impl Into<String>) -> Self {
        AstNode {
            label: label.into(),
            children: Vec::new(),
        }
    }

    pub fn node(label: impl Into<String>, children: Vec<AstNode>) -> Self {
        AstNode {
            label: label.into(),
            children,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(AstNode::node_count).sum::<usize>()
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&AstNode> {
        let mut out = Vec::new();
        fn walk<'a>(n: &'a AstNode, out: &mut Vec<&'a AstNode>) {
            if n.is_leaf() {
                out.push(n);
            }
            for c in &n.children {
                walk(c, out);
            }
        }
        walk(self, &mut out);
        out
    }
}

/// Parses `(label child...)`. A bare atom inside a list is a leaf child.
pub fn import_sexpr(text: &str) -> Result<AstNode> {
    let mut p = SexprParser {
        chars: text.chars().collect(),
        pos: 0,
        line: 1,
        col: 1,
    };
    p.skip_ws();
    let node = p.list()?;
    p.skip_ws();
    if p.pos < p.chars.len() {
        return Err(p.error("trailing input after s-expression"));
    }
    Ok(node)
}

struct SexprParser {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    col: usize,
}

impl SexprParser {
    fn error(&self, message: &str) -> Error {
        Error::Syntax {
            line: self.line,
            column: self.col,
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn atom(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if c.is_whitespace() || c == '(' || c == ')' {
                break;
            }
            s.push(c);
            self.bump();
        }
        s
    }

    fn list(&mut self) -> Result<AstNode> {
        if self.peek() != Some('(') {
            return Err(self.error("expected '('"));
        }
        self.bump();
        self.skip_ws();
        let label = self.atom();
        if label.is_empty() {
            return Err(self.error("empty list or missing head atom"));
        }
        let mut children = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return Err(self.error("unbalanced parentheses: missing ')'")),
                Some(')') => {
                    self.bump();
                    return Ok(AstNode::node(label, children));
                }
                Some('(') => children.push(self.list()?),
                Some(_) => children.push(AstNode::leaf(self.atom())),
            }
        }
    }
}

/// Inverse of [`import_sexpr`]: leaves render as `(x)`.
pub fn render_sexpr(node: &AstNode) -> String {
    let mut s = String::new();
    fn walk(n: &AstNode, s: &mut String) {
        s.push('(');
        s.push_str(&n.label);
        for c in &n.children {
            s.push(' ');
            walk(c, s);
        }
        s.push(')');
    }
    walk(node, &mut s);
    s
}

/// `SBT(n) = "(" label(n) SBT(c₁) … SBT(cₖ) ")" label(n)`.
pub fn sbt_flatten(root: &AstNode) -> Vec<String> {
    let mut out = Vec::with_capacity(4 * root.node_count());
    fn walk(n: &AstNode, out: &mut Vec<String>) {
        out.push("(".to_string());
        out.push(n.label.clone());
        for c in &n.children {
            walk(c, out);
        }
        out.push(")".to_string());
        out.push(n.label.clone());
    }
    walk(root, &mut out);
    out
}

/// Labels connecting two leaves through their lowest common ancestor.
/// `up_labels` runs from the start leaf's parent to the pivot (inclusive);
/// `down_labels` runs from just below the pivot to the end leaf's parent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AstPath {
    pub start_leaf: String,
    pub up_labels: Vec<String>,
    pub down_labels: Vec<String>,
    pub end_leaf: String,
}

impl AstPath {
    /// Labels counted against the length cap: both leaves, every
    /// intermediate node and the pivot.
    pub fn len(&self) -> usize {
        2 + self.up_labels.len() + self.down_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pivot(&self) -> &str {
        self.up_labels.last().expect("paths always have a pivot")
    }

    /// The same path walked from the other end.
    pub fn reversed(&self) -> AstPath {
        let pivot = self.pivot().to_string();
        let mut up: Vec<String> = self.down_labels.iter().rev().cloned().collect();
        up.push(pivot);
        let down: Vec<String> = self.up_labels[..self.up_labels.len() - 1]
            .iter()
            .rev()
            .cloned()
            .collect();
        AstPath {
            start_leaf: self.end_leaf.clone(),
            up_labels: up,
            down_labels: down,
            end_leaf: self.start_leaf.clone(),
        }
    }

    /// `b ↑a ↓ c` style rendering, used for path tokens.
    pub fn render(&self) -> String {
        let mut s = self.start_leaf.clone();
        for l in &self.up_labels {
            s.push('↑');
            s.push_str(l);
        }
        for l in &self.down_labels {
            s.push('↓');
            s.push_str(l);
        }
        s.push('↓');
        s.push_str(&self.end_leaf);
        s
    }
}

/// Root-to-leaf label chains plus node identities for each leaf.
fn leaf_chains(root: &AstNode) -> Vec<Vec<(usize, &str)>> {
    let mut out = Vec::new();
    let mut next_id = 0;
    fn walk<'a>(
        n: &'a AstNode,
        chain: &mut Vec<(usize, &'a str)>,
        next_id: &mut usize,
        out: &mut Vec<Vec<(usize, &'a str)>>,
    ) {
        chain.push((*next_id, n.label.as_str()));
        *next_id += 1;
        if n.is_leaf() {
            out.push(chain.clone());
        }
        for c in &n.children {
            walk(c, chain, next_id, out);
        }
        chain.pop();
    }
    walk(root, &mut Vec::new(), &mut next_id, &mut out);
    out
}

fn path_between(a: &[(usize, &str)], b: &[(usize, &str)]) -> AstPath {
    let common = a.iter().zip(b).take_while(|(x, y)| x.0 == y.0).count();
    let up = a[common - 1..a.len() - 1]
        .iter()
        .rev()
        .map(|(_, l)| l.to_string())
        .collect();
    let down = b[common..b.len() - 1]
        .iter()
        .map(|(_, l)| l.to_string())
        .collect();
    AstPath {
        start_leaf: a[a.len() - 1].1.to_string(),
        up_labels: up,
        down_labels: down,
        end_leaf: b[b.len() - 1].1.to_string(),
    }
}

/// Path from leaf `i` to leaf `j` (left-to-right leaf indices, `i ≠ j`).
pub fn leaf_path(root: &AstNode, i: usize, j: usize) -> Option<AstPath> {
    let chains = leaf_chains(root);
    if i == j || i >= chains.len() || j >= chains.len() {
        return None;
    }
    Some(path_between(&chains[i], &chains[j]))
}

/// Every leaf pair `i < j` whose path has at most `max_len` labels, ordered
/// by `(i, j)`.
pub fn enumerate_leaf_paths(root: &AstNode, max_len: usize) -> Vec<AstPath> {
    assert!(max_len >= 3, "a leaf-to-leaf path has at least 3 labels");
    let chains = leaf_chains(root);
    let mut out = Vec::new();
    for i in 0..chains.len() {
        for j in i + 1..chains.len() {
            let p = path_between(&chains[i], &chains[j]);
            if p.len() <= max_len {
                out.push(p);
            }
        }
    }
    out
}

/// Uniform sample of `k` paths without replacement, kept in input order.
pub fn sample_paths(paths: &[AstPath], k: usize, seed: u64) -> Vec<AstPath> {
    assert!(k >= 1, "sample size must be positive");
    if paths.len() <= k {
        return paths.to_vec();
    }
    let mut idx: Vec<usize> = (0..paths.len()).collect();
    let mut rng = Rng::new(seed);
    for i in 0..k {
        let j = i + rng.below(paths.len() - i);
        idx.swap(i, j);
    }
    let mut chosen = idx[..k].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| paths[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn abc() -> AstNode {
        AstNode::node("a", vec![AstNode::leaf("b"), AstNode::leaf("c")])
    }

    #[test]
    fn sexpr_examples() {
        assert_eq!(import_sexpr("(a (b) (c))").unwrap(), abc());
        assert_eq!(import_sexpr("(x)").unwrap(), AstNode::leaf("x"));
        assert_eq!(import_sexpr(" (a b (c)) ").unwrap(), abc());
        for bad in ["(a (b)", "()", "(a))", "a", ""] {
            assert!(
                matches!(import_sexpr(bad), Err(Error::Syntax { .. })),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn sbt_examples() {
        assert_eq!(sbt_flatten(&AstNode::leaf("a")), vec!["(", "a", ")", "a"]);
        assert_eq!(
            sbt_flatten(&abc()),
            vec!["(", "a", "(", "b", ")", "b", "(", "c", ")", "c", ")", "a"]
        );
    }

    #[test]
    fn path_examples() {
        let paths = enumerate_leaf_paths(&abc(), DEFAULT_MAX_PATH_LEN);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].render(), "b↑a↓c");
        assert!(enumerate_leaf_paths(&AstNode::leaf("x"), 8).is_empty());

        let sub =
            |l: &str, a: &str, b: &str| AstNode::node(l, vec![AstNode::leaf(a), AstNode::leaf(b)]);
        let full = AstNode::node("r", vec![sub("l", "w", "x"), sub("m", "y", "z")]);
        assert_eq!(enumerate_leaf_paths(&full, 8).len(), 6);
        // w→y crosses the root: w ↑l ↑r ↓m ↓ y = 5 labels
        assert_eq!(enumerate_leaf_paths(&full, 4).len(), 2);
    }

    #[test]
    fn sampling_rules() {
        let sub =
            |l: &str, a: &str, b: &str| AstNode::node(l, vec![AstNode::leaf(a), AstNode::leaf(b)]);
        let t = AstNode::node("r", vec![sub("l", "w", "x"), AstNode::leaf("q")]);
        let paths = enumerate_leaf_paths(&t, 8);
        assert_eq!(paths.len(), 3);
        assert_eq!(sample_paths(&paths, DEFAULT_PATH_SAMPLES, 1), paths);

        let wide = AstNode::node("r", (0..5).map(|i| AstNode::leaf(i.to_string())).collect());
        let paths = enumerate_leaf_paths(&wide, 8);
        assert_eq!(paths.len(), 10);
        assert_eq!(sample_paths(&paths, 10, 3), paths);
        let s1 = sample_paths(&paths, 4, 9);
        assert_eq!(s1, sample_paths(&paths, 4, 9));
        assert_eq!(s1.len(), 4);
        let pos: Vec<usize> = s1
            .iter()
            .map(|p| paths.iter().position(|q| q == p).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    /// Every ordered tree shape with exactly `n` nodes, all labels "x".
    pub(crate) fn shapes(n: usize) -> Vec<AstNode> {
        fn forests(n: usize) -> Vec<Vec<AstNode>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for first in 1..=n {
                for head in shapes(first) {
                    for mut rest in forests(n - first) {
                        rest.insert(0, head.clone());
                        out.push(rest);
                    }
                }
            }
            out
        }
        forests(n - 1)
            .into_iter()
            .map(|cs| AstNode::node("x", cs))
            .collect()
    }

    #[test]
    fn sbt_injective_on_small_shapes() {
        let mut seen = HashSet::new();
        let mut total = 0;
        for n in 1..=6 {
            let s = shapes(n);
            // Catalan(n-1) ordered trees
            assert_eq!(s.len(), [1, 1, 2, 5, 14, 42][n - 1]);
            for t in s {
                total += 1;
                assert!(seen.insert(sbt_flatten(&t)));
            }
        }
        assert_eq!(total, 65);
    }

    pub(crate) fn arb_tree() -> impl Strategy<Value = AstNode> {
        let leaf = "[a-z+*]{1,3}".prop_map(AstNode::leaf);
        leaf.prop_recursive(4, 50, 4, |inner| {
            ("[a-z]{1,3}", prop::collection::vec(inner, 1..4))
                .prop_map(|(l, cs)| AstNode::node(l, cs))
        })
    }

    proptest! {
        #[test]
        fn sbt_length_and_balance(t in arb_tree()) {
            let s = sbt_flatten(&t);
            let n = t.node_count();
            prop_assert_eq!(s.len(), 4 * n);
            prop_assert_eq!(s.iter().filter(|x| *x == "(").count(), n);
            prop_assert_eq!(s.iter().filter(|x| *x == ")").count(), n);
        }

        #[test]
        fn sexpr_round_trip(t in arb_tree()) {
            prop_assert_eq!(import_sexpr(&render_sexpr(&t)).unwrap(), t);
        }

        #[test]
        fn paths_reverse_symmetrically(t in arb_tree()) {
            let n = t.leaves().len();
            for i in 0..n {
                for j in i + 1..n {
                    let fwd = leaf_path(&t, i, j).unwrap();
                    let back = leaf_path(&t, j, i).unwrap();
                    prop_assert_eq!(fwd.reversed(), back);
                }
            }
        }
    }
}
