//! Summarization architectures: an attentional GRU encoder-decoder, its
//! two-encoder AST variant, and a post-norm transformer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{END, PAD, START};
use crate::error::{Error, Result};
use crate::smoothing::{smooth_targets, TargetDistribution};
use crate::tensor::{
    dropout_mask, finite_difference_check, positional_encoding, AttentionMask, AttentionVars,
    GradCheckReport, Gradients, Graph, ParamStore, Rng, Tensor, Var,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Attendgru,
    Transformer,
    AstAttendgru,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Attendgru => "attendgru",
            Arch::Transformer => "transformer",
            Arch::AstAttendgru => "ast-attendgru",
        }
    }

    pub fn uses_ast(self) -> bool {
        self == Arch::AstAttendgru
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attendgru" => Ok(Arch::Attendgru),
            "transformer" => Ok(Arch::Transformer),
            "ast-attendgru" | "ast_attendgru" => Ok(Arch::AstAttendgru),
            other => Err(Error::config(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub code_len: usize,
    /// Required iff `arch` is ast-attendgru.
    pub ast_len: Option<usize>,
    pub comment_len: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout_rate: f64,
    pub epsilon: f64,
}

impl ModelConfig {
    /// Toy defaults: embed/hidden 64, code 50, ast 80, comment 13, 4 heads,
    /// 2 layers, dropout 0.1, ε 0.1.
    pub fn new(arch: Arch, src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            arch,
            src_vocab,
            tgt_vocab,
            embed_dim: 64,
            hidden_dim: 64,
            code_len: 50,
            ast_len: arch.uses_ast().then_some(80),
            comment_len: 13,
            heads: 4,
            layers: 2,
            dropout_rate: 0.1,
            epsilon: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("code_len", self.code_len),
            ("comment_len", self.comment_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.tgt_vocab < 2 {
            return Err(Error::config("tgt_vocab must be at least 2"));
        }
        if self.comment_len < 2 {
            return Err(Error::config("comment_len must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config(format!(
                "epsilon {} outside [0, 1]",
                self.epsilon
            )));
        }
        match (self.arch.uses_ast(), self.ast_len) {
            (true, None) | (true, Some(0)) => {
                return Err(Error::config("ast-attendgru needs a positive ast_len"))
            }
            (false, Some(_)) => {
                return Err(Error::config(format!("ast_len set for {}", self.arch)))
            }
            _ => {}
        }
        if self.arch == Arch::Transformer {
            if self.layers == 0 {
                return Err(Error::config("transformer needs at least one layer"));
            }
            if self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
                return Err(Error::config(format!(
                    "hidden_dim {} not divisible by {} heads",
                    self.hidden_dim, self.heads
                )));
            }
            if self.embed_dim != self.hidden_dim {
                return Err(Error::config(
                    "transformer requires embed_dim == hidden_dim",
                ));
            }
            if !self.hidden_dim.is_multiple_of(2) {
                return Err(Error::config("transformer requires an even hidden_dim"));
            }
        }
        Ok(())
    }
}

/// Parameter initialization rule.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Xavier,
    Zeros,
    Ones,
}

fn gru_template(
    out: &mut Vec<(String, Vec<usize>, Init)>,
    prefix: &str,
    input: usize,
    hidden: usize,
) {
    for gate in ["z", "r", "h"] {
        out.push((
            format!("{prefix}.w{gate}"),
            vec![input, hidden],
            Init::Xavier,
        ));
        out.push((
            format!("{prefix}.u{gate}"),
            vec![hidden, hidden],
            Init::Xavier,
        ));
        out.push((format!("{prefix}.b{gate}"), vec![1, hidden], Init::Zeros));
    }
}

fn attention_template(out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, d: usize) {
    for w in ["wq", "wk", "wv", "wo"] {
        out.push((format!("{prefix}.{w}"), vec![d, d], Init::Xavier));
    }
    out.push((format!("{prefix}.bo"), vec![1, d], Init::Zeros));
}

fn norm_template(out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, d: usize) {
    out.push((format!("{prefix}.g"), vec![1, d], Init::Ones));
    out.push((format!("{prefix}.b"), vec![1, d], Init::Zeros));
}

fn ffn_template(out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, d: usize) {
    out.push((format!("{prefix}.w1"), vec![d, 2 * d], Init::Xavier));
    out.push((format!("{prefix}.b1"), vec![1, 2 * d], Init::Zeros));
    out.push((format!("{prefix}.w2"), vec![2 * d, d], Init::Xavier));
    out.push((format!("{prefix}.b2"), vec![1, d], Init::Zeros));
}

/// Names, shapes and initializers of every parameter, in initialization order.
fn param_template(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (e, h) = (c.embed_dim, c.hidden_dim);
    let mut t = Vec::new();
    t.push(("src_emb".to_string(), vec![c.src_vocab, e], Init::Xavier));
    t.push(("tgt_emb".to_string(), vec![c.tgt_vocab, e], Init::Xavier));
    match c.arch {
        Arch::Attendgru | Arch::AstAttendgru => {
            gru_template(&mut t, "enc", e, h);
            gru_template(&mut t, "dec", e, h);
            let mut features = 2 * h;
            if c.arch == Arch::AstAttendgru {
                t.push(("ast_emb".to_string(), vec![c.src_vocab, e], Init::Xavier));
                gru_template(&mut t, "ast", e, h);
                features += h;
            }
            t.push((
                "out.w".to_string(),
                vec![features, c.tgt_vocab],
                Init::Xavier,
            ));
        }
        Arch::Transformer => {
            for l in 0..c.layers {
                attention_template(&mut t, &format!("enc{l}.attn"), h);
                norm_template(&mut t, &format!("enc{l}.ln1"), h);
                ffn_template(&mut t, &format!("enc{l}.ff"), h);
                norm_template(&mut t, &format!("enc{l}.ln2"), h);
            }
            for l in 0..c.layers {
                attention_template(&mut t, &format!("dec{l}.self"), h);
                norm_template(&mut t, &format!("dec{l}.ln1"), h);
                attention_template(&mut t, &format!("dec{l}.cross"), h);
                norm_template(&mut t, &format!("dec{l}.ln2"), h);
                ffn_template(&mut t, &format!("dec{l}.ff"), h);
                norm_template(&mut t, &format!("dec{l}.ln3"), h);
            }
            t.push(("out.w".to_string(), vec![h, c.tgt_vocab], Init::Xavier));
        }
    }
    t.push(("out.b".to_string(), vec![1, c.tgt_vocab], Init::Zeros));
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// One encoded training or evaluation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub code: Vec<usize>,
    pub ast: Option<Vec<usize>>,
    /// `[START, ..., END, PAD...]`; position `i` is predicted from `target[..i]`.
    pub target: Vec<usize>,
}

impl Example {
    pub fn prefix(&self) -> &[usize] {
        &self.target[..self.target.len() - 1]
    }

    pub fn gold(&self) -> &[usize] {
        &self.target[1..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Emitted ids after START, including END when it was produced.
    pub ids: Vec<usize>,
    /// Per-step next-token distributions, when requested.
    pub distributions: Option<Vec<Vec<f64>>>,
}

/// Initializes every parameter of the architecture deterministically under `seed`.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut params = ParamStore::new();
    for (i, (name, shape, init)) in param_template(config).into_iter().enumerate() {
        let t = match init {
            Init::Zeros => Tensor::zeros(&shape),
            Init::Ones => Tensor::filled(&shape, 1.0),
            Init::Xavier => {
                let mut rng = Rng::derive(seed, &[0x1417, i as u64]);
                Tensor::xavier(shape[0], shape[1], &mut rng)
            }
        };
        params.insert(name, t)?;
    }
    Ok(Model {
        config: config.clone(),
        params,
    })
}

/// Checks that `params` holds exactly the parameters `config` calls for.
pub fn validate_params(config: &ModelConfig, params: &ParamStore) -> Result<()> {
    config.validate()?;
    let template = param_template(config);
    if template.len() != params.len() {
        return Err(Error::data(format!(
            "expected {} parameters for {}, found {}",
            template.len(),
            config.arch,
            params.len()
        )));
    }
    for (name, shape, _) in &template {
        match params.get(name) {
            None => return Err(Error::data(format!("missing parameter {name}"))),
            Some(t) if t.shape() != shape.as_slice() => {
                return Err(Error::data(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    shape
                )))
            }
            Some(t) if !t.all_finite() => {
                return Err(Error::data(format!("parameter {name} is not finite")))
            }
            _ => {}
        }
    }
    Ok(())
}

fn check_ids(ids: &[usize], vocab: usize, what: &str) -> Result<()> {
    match ids.iter().find(|&&id| id >= vocab) {
        Some(id) => Err(Error::data(format!(
            "{what} id {id} outside vocabulary of {vocab}"
        ))),
        None => Ok(()),
    }
}

struct Forward<'g, 'p> {
    g: &'g mut Graph<'p>,
    c: &'g ModelConfig,
    dropout: Option<&'g mut Rng>,
}

impl Forward<'_, '_> {
    fn drop(&mut self, x: Var) -> Var {
        let rate = self.c.dropout_rate;
        match self.dropout.as_deref_mut() {
            Some(rng) if rate > 0.0 => {
                let shape = self.g.value(x).shape().to_vec();
                let m = self.g.input(dropout_mask(&shape, rate, rng));
                self.g.mul(x, m)
            }
            _ => x,
        }
    }

    /// Runs a GRU over the rows of `x`, returning all states `[T, H]` and the last one.
    fn gru(&mut self, prefix: &str, x: Var, h0: Option<Var>) -> (Var, Var) {
        let g = &mut *self.g;
        let p = |g: &mut Graph, n: &str| g.param(&format!("{prefix}.{n}"));
        let (wz, wr, wh) = (p(g, "wz"), p(g, "wr"), p(g, "wh"));
        let (uz, ur, uh) = (p(g, "uz"), p(g, "ur"), p(g, "uh"));
        let (bz, br, bh) = (p(g, "bz"), p(g, "br"), p(g, "bh"));
        let xz = g.linear(x, wz, Some(bz));
        let xr = g.linear(x, wr, Some(br));
        let xh = g.linear(x, wh, Some(bh));
        let steps = g.value(x).rows();
        let hidden = self.c.hidden_dim;
        let mut h = match h0 {
            Some(h) => h,
            None => g.input(Tensor::zeros(&[1, hidden])),
        };
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let hz = g.matmul(h, uz);
            let az = g.row(xz, t);
            let z = g.add(az, hz);
            let z = g.sigmoid(z);
            let hr = g.matmul(h, ur);
            let ar = g.row(xr, t);
            let r = g.add(ar, hr);
            let r = g.sigmoid(r);
            let rh = g.mul(r, h);
            let c = g.matmul(rh, uh);
            let ah = g.row(xh, t);
            let c = g.add(ah, c);
            let c = g.tanh(c);
            let keep = g.affine(z, -1.0, 1.0);
            let old = g.mul(keep, h);
            let new = g.mul(z, c);
            h = g.add(old, new);
            states.push(h);
        }
        (g.stack_rows(&states), h)
    }

    /// Embeds the non-PAD positions of `ids` and encodes them with GRU `prefix`.
    fn encode_gru(&mut self, emb: &str, prefix: &str, ids: &[usize]) -> (Var, Var) {
        let mut kept: Vec<usize> = ids.iter().copied().filter(|&i| i != PAD).collect();
        if kept.is_empty() {
            kept.push(crate::corpus::UNK);
        }
        let table = self.g.param(emb);
        let x = self.g.gather(table, &kept);
        self.gru(prefix, x, None)
    }

    fn attendgru(
        &mut self,
        code: &[usize],
        ast: Option<&[usize]>,
        prefix: &[usize],
    ) -> Result<Var> {
        let (enc, enc_last) = self.encode_gru("src_emb", "enc", code);
        let ast_enc = ast.map(|ids| self.encode_gru("ast_emb", "ast", ids).0);
        let tgt = self.g.param("tgt_emb");
        let y = self.g.gather(tgt, prefix);
        let (dec, _) = self.gru("dec", y, Some(enc_last));
        let keys = vec![true; self.g.value(enc).rows()];
        let (ctx, _) = self.g.dot_attention(dec, enc, &keys)?;
        let mut parts = vec![ctx];
        if let Some(a) = ast_enc {
            let keys = vec![true; self.g.value(a).rows()];
            parts.push(self.g.dot_attention(dec, a, &keys)?.0);
        }
        parts.push(dec);
        let features = self.g.concat_cols(&parts);
        let features = self.drop(features);
        let w = self.g.param("out.w");
        let b = self.g.param("out.b");
        Ok(self.g.linear(features, w, Some(b)))
    }

    fn attn_vars(&mut self, prefix: &str) -> AttentionVars {
        let mut p = |n: &str| self.g.param(&format!("{prefix}.{n}"));
        AttentionVars {
            wq: p("wq"),
            wk: p("wk"),
            wv: p("wv"),
            wo: p("wo"),
            bo: p("bo"),
        }
    }

    fn norm(&mut self, prefix: &str, x: Var) -> Var {
        let gain = self.g.param(&format!("{prefix}.g"));
        let bias = self.g.param(&format!("{prefix}.b"));
        self.g.layer_norm(x, gain, bias)
    }

    fn ffn(&mut self, prefix: &str, x: Var) -> Var {
        let mut p = |n: &str| self.g.param(&format!("{prefix}.{n}"));
        let (w1, b1, w2, b2) = (p("w1"), p("b1"), p("w2"), p("b2"));
        let hdn = self.g.linear(x, w1, Some(b1));
        let hdn = self.g.relu(hdn);
        self.g.linear(hdn, w2, Some(b2))
    }

    fn embed_positions(&mut self, table: &str, ids: &[usize]) -> Result<Var> {
        let t = self.g.param(table);
        let x = self.g.gather(t, ids);
        let pe = self
            .g
            .input(positional_encoding(ids.len(), self.c.hidden_dim)?);
        Ok(self.g.add(x, pe))
    }

    fn transformer(&mut self, code: &[usize], prefix: &[usize]) -> Result<Var> {
        let heads = self.c.heads;
        let mut keys: Vec<bool> = code.iter().map(|&i| i != PAD).collect();
        if !keys.iter().any(|&k| k) {
            keys[0] = true;
        }
        let key_mask = AttentionMask::Keys(keys);
        let mut x = self.embed_positions("src_emb", code)?;
        for l in 0..self.c.layers {
            let w = self.attn_vars(&format!("enc{l}.attn"));
            let a = self.g.multi_head_attention(x, x, x, &w, heads, &key_mask)?;
            let a = self.drop(a);
            let s = self.g.add(x, a);
            x = self.norm(&format!("enc{l}.ln1"), s);
            let f = self.ffn(&format!("enc{l}.ff"), x);
            let s = self.g.add(x, f);
            x = self.norm(&format!("enc{l}.ln2"), s);
        }
        let memory = x;
        let mut y = self.embed_positions("tgt_emb", prefix)?;
        for l in 0..self.c.layers {
            let w = self.attn_vars(&format!("dec{l}.self"));
            let a = self
                .g
                .multi_head_attention(y, y, y, &w, heads, &AttentionMask::Causal)?;
            let a = self.drop(a);
            let s = self.g.add(y, a);
            y = self.norm(&format!("dec{l}.ln1"), s);
            let w = self.attn_vars(&format!("dec{l}.cross"));
            let a = self
                .g
                .multi_head_attention(y, memory, memory, &w, heads, &key_mask)?;
            let a = self.drop(a);
            let s = self.g.add(y, a);
            y = self.norm(&format!("dec{l}.ln2"), s);
            let f = self.ffn(&format!("dec{l}.ff"), y);
            let s = self.g.add(y, f);
            y = self.norm(&format!("dec{l}.ln3"), s);
        }
        let w = self.g.param("out.w");
        let b = self.g.param("out.b");
        Ok(self.g.linear(y, w, Some(b)))
    }
}

/// Records the forward pass and returns next-token logits `[prefix.len(), tgt_vocab]`.
pub fn logits(
    g: &mut Graph,
    config: &ModelConfig,
    code: &[usize],
    ast: Option<&[usize]>,
    prefix: &[usize],
    dropout: Option<&mut Rng>,
) -> Result<Var> {
    check_ids(code, config.src_vocab, "code")?;
    check_ids(prefix, config.tgt_vocab, "comment")?;
    if code.is_empty() || prefix.is_empty() {
        return Err(Error::data("empty code or comment prefix"));
    }
    let ast = match (config.arch.uses_ast(), ast) {
        (true, Some(a)) => {
            check_ids(a, config.src_vocab, "ast")?;
            Some(a)
        }
        (true, None) => return Err(Error::data("ast-attendgru needs ast ids")),
        (false, _) => None,
    };
    let mut f = Forward {
        g,
        c: config,
        dropout,
    };
    match config.arch {
        Arch::Transformer => f.transformer(code, prefix),
        _ => f.attendgru(code, ast, prefix),
    }
}

/// Label-smoothed targets for every gold position; PAD positions get `None`.
pub fn smoothed_targets(
    gold: &[usize],
    n_vocab: usize,
    epsilon: f64,
) -> Result<Vec<Option<TargetDistribution>>> {
    gold.iter()
        .map(|&y| {
            if y == PAD {
                Ok(None)
            } else {
                smooth_targets(y, n_vocab, epsilon).map(Some)
            }
        })
        .collect()
}

/// Summed smoothed cross-entropy over the non-PAD targets of one example,
/// the number of such targets, and the parameter gradients.
pub fn example_loss_and_grad(
    config: &ModelConfig,
    params: &ParamStore,
    ex: &Example,
    epsilon: f64,
    dropout: Option<&mut Rng>,
) -> Result<(f64, usize, Gradients)> {
    let mut g = Graph::new(params);
    let z = logits(
        &mut g,
        config,
        &ex.code,
        ex.ast.as_deref(),
        ex.prefix(),
        dropout,
    )?;
    let targets = smoothed_targets(ex.gold(), config.tgt_vocab, epsilon)?;
    let count = targets.iter().filter(|t| t.is_some()).count();
    let loss = g.smoothed_cross_entropy(z, targets)?;
    let value = g.value(loss).data()[0];
    Ok((value, count, g.backward(loss)?))
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl Model {
    /// Next-token distributions for every prefix position (dropout off).
    pub fn forward_step(
        &self,
        code: &[usize],
        ast: Option<&[usize]>,
        prefix: &[usize],
    ) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let z = logits(&mut g, &self.config, code, ast, prefix, None)?;
        let z = g.softmax(z);
        Ok(g.value(z).clone())
    }

    /// Logits for every prefix position (dropout off).
    pub fn logits(
        &self,
        code: &[usize],
        ast: Option<&[usize]>,
        prefix: &[usize],
    ) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let z = logits(&mut g, &self.config, code, ast, prefix, None)?;
        Ok(g.value(z).clone())
    }

    /// Appends the argmax token (lowest index on ties) starting from START
    /// until END or `max_len` emitted tokens.
    pub fn greedy_decode(
        &self,
        code: &[usize],
        ast: Option<&[usize]>,
        max_len: usize,
    ) -> Result<DecodeResult> {
        self.decode_with(code, ast, max_len, false)
    }

    pub fn greedy_decode_with_distributions(
        &self,
        code: &[usize],
        ast: Option<&[usize]>,
        max_len: usize,
    ) -> Result<DecodeResult> {
        self.decode_with(code, ast, max_len, true)
    }

    fn decode_with(
        &self,
        code: &[usize],
        ast: Option<&[usize]>,
        max_len: usize,
        keep: bool,
    ) -> Result<DecodeResult> {
        let mut prefix = vec![START];
        let mut ids = Vec::new();
        let mut dists = Vec::new();
        while ids.len() < max_len {
            let z = self.logits(code, ast, &prefix)?;
            let last = z.row(z.rows() - 1);
            let next = argmax(last);
            if keep {
                dists.push(crate::tensor::softmax(last));
            }
            ids.push(next);
            if next == END {
                break;
            }
            prefix.push(next);
        }
        Ok(DecodeResult {
            ids,
            distributions: keep.then_some(dists),
        })
    }

    /// Finite-difference check of the full model on one example, dropout off.
    pub fn grad_check(&self, ex: &Example, epsilon: f64) -> Result<GradCheckReport> {
        finite_difference_check(&self.params, |store| {
            let (loss, _, grads) = example_loss_and_grad(&self.config, store, ex, epsilon, None)?;
            Ok((loss, grads))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gru_step, GruWeights};
    use approx::assert_abs_diff_eq;

    fn tiny(arch: Arch) -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            hidden_dim: 4,
            code_len: 5,
            ast_len: arch.uses_ast().then_some(6),
            comment_len: 4,
            heads: 2,
            layers: 1,
            dropout_rate: 0.0,
            ..ModelConfig::new(arch, 9, 7)
        }
    }

    fn example(arch: Arch) -> Example {
        Example {
            code: vec![4, 5, 6, 0, 0],
            ast: arch.uses_ast().then(|| vec![7, 8, 4, 8, 0, 0]),
            target: vec![START, 4, 5, END],
        }
    }

    #[test]
    fn attendgru_parameter_count() {
        let cfg = ModelConfig {
            embed_dim: 8,
            hidden_dim: 8,
            ..ModelConfig::new(Arch::Attendgru, 20, 20)
        };
        let m = build_model(&cfg, 1).unwrap();
        let (v, e, h) = (20, 8, 8);
        let gru = 3 * (e * h + h * h + h);
        let expected = v * e + gru + v * e + gru + (2 * h) * v + v;
        assert_eq!(expected, 1476);
        assert_eq!(m.params.num_elements(), expected);
    }

    #[test]
    fn same_seed_same_params() {
        for arch in [Arch::Attendgru, Arch::Transformer, Arch::AstAttendgru] {
            let a = build_model(&tiny(arch), 3).unwrap();
            assert_eq!(a, build_model(&tiny(arch), 3).unwrap());
            assert_ne!(a.params, build_model(&tiny(arch), 4).unwrap().params);
        }
    }

    #[test]
    fn ast_names_extend_attendgru() {
        let a = build_model(&tiny(Arch::Attendgru), 0).unwrap();
        let b = build_model(&tiny(Arch::AstAttendgru), 0).unwrap();
        let an: Vec<&str> = a.params.names().collect();
        let bn: Vec<&str> = b.params.names().collect();
        assert!(an.iter().all(|n| bn.contains(n)));
        assert!(bn.len() > an.len());
    }

    #[test]
    fn invalid_configs() {
        let mut c = tiny(Arch::Transformer);
        c.heads = 3;
        assert!(matches!(build_model(&c, 0), Err(Error::Config(_))));
        let mut c = tiny(Arch::Attendgru);
        c.ast_len = Some(4);
        assert!(build_model(&c, 0).is_err());
        let mut c = tiny(Arch::AstAttendgru);
        c.ast_len = None;
        assert!(build_model(&c, 0).is_err());
        let mut c = tiny(Arch::Attendgru);
        c.hidden_dim = 0;
        assert!(build_model(&c, 0).is_err());
        assert!("lstm".parse::<Arch>().is_err());
        assert_eq!("ast-attendgru".parse::<Arch>().unwrap(), Arch::AstAttendgru);
    }

    #[test]
    fn distributions_normalize() {
        for arch in [Arch::Attendgru, Arch::Transformer, Arch::AstAttendgru] {
            let m = build_model(&tiny(arch), 5).unwrap();
            let ex = example(arch);
            let p = m
                .forward_step(&ex.code, ex.ast.as_deref(), ex.prefix())
                .unwrap();
            assert_eq!(p.shape(), &[3, 7]);
            for r in 0..p.rows() {
                assert_abs_diff_eq!(p.row(r).iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn out_of_range_ids_are_data_errors() {
        let m = build_model(&tiny(Arch::Attendgru), 5).unwrap();
        assert!(matches!(
            m.forward_step(&[99], None, &[START]),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            m.forward_step(&[4], None, &[70]),
            Err(Error::Data(_))
        ));
        let m = build_model(&tiny(Arch::AstAttendgru), 5).unwrap();
        assert!(matches!(
            m.forward_step(&[4], None, &[START]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn transformer_is_causal() {
        let m = build_model(&tiny(Arch::Transformer), 11).unwrap();
        let code = [4, 5, 6, 7, 0];
        let a = m.forward_step(&code, None, &[START, 4, 5, 6]).unwrap();
        let b = m.forward_step(&code, None, &[START, 4, 2, 3]).unwrap();
        for t in 0..2 {
            assert_eq!(a.row(t), b.row(t));
        }
        assert_ne!(a.row(2), b.row(2));
    }

    #[test]
    fn gru_decoder_never_peeks() {
        let m = build_model(&tiny(Arch::AstAttendgru), 12).unwrap();
        let ast = [7, 8, 4];
        let a = m
            .forward_step(&[4, 5], Some(&ast), &[START, 4, 5, 6])
            .unwrap();
        let b = m
            .forward_step(&[4, 5], Some(&ast), &[START, 4, 6, 1])
            .unwrap();
        assert_eq!(a.row(0), b.row(0));
        assert_eq!(a.row(1), b.row(1));
    }

    #[test]
    fn pad_source_positions_are_ignored() {
        for arch in [Arch::Attendgru, Arch::Transformer] {
            let m = build_model(&tiny(arch), 13).unwrap();
            let a = m.forward_step(&[4, 5, 0, 0, 0], None, &[START, 4]).unwrap();
            let b = m.forward_step(&[4, 5, 0], None, &[START, 4]).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_params_give_uniform_and_position_free_output() {
        let mut m = build_model(&tiny(Arch::Attendgru), 0).unwrap();
        m.params.for_each_mut(|_, p, _| p.data_mut().fill(0.0));
        let p = m
            .forward_step(&[4, 5], None, &[START, START, START])
            .unwrap();
        for r in 0..3 {
            assert_eq!(p.row(r), p.row(0));
            for v in p.row(r) {
                assert_abs_diff_eq!(*v, 1.0 / 7.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn graph_gru_matches_reference_step() {
        let cfg = tiny(Arch::Attendgru);
        let m = build_model(&cfg, 21).unwrap();
        let w = GruWeights::from_store(&m.params, "enc").unwrap();
        let emb = m.params.get("src_emb").unwrap();
        let ids = [4usize, 6, 5];
        let mut h = vec![0.0; 4];
        for &id in &ids {
            h = gru_step(emb.row(id), &h, &w).unwrap();
        }
        let mut g = Graph::new(&m.params);
        let mut f = Forward {
            g: &mut g,
            c: &cfg,
            dropout: None,
        };
        let (_, last) = f.encode_gru("src_emb", "enc", &ids);
        for (a, b) in g.value(last).data().iter().zip(&h) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn decode_is_deterministic_and_bounded() {
        let m = build_model(&tiny(Arch::Transformer), 2).unwrap();
        let a = m.greedy_decode(&[4, 5], None, 1).unwrap();
        assert!(a.ids.len() <= 1);
        let a = m.greedy_decode(&[4, 5], None, 6).unwrap();
        assert_eq!(a, m.greedy_decode(&[4, 5], None, 6).unwrap());
        assert!(a.ids.len() <= 6);
        if a.ids.len() < 6 {
            assert_eq!(*a.ids.last().unwrap(), END);
        }
    }

    #[test]
    fn logit_shift_keeps_decode() {
        let m = build_model(&tiny(Arch::Attendgru), 8).unwrap();
        let mut shifted = m.clone();
        for v in shifted.params.get_mut("out.b").unwrap().data_mut() {
            *v += 3.25;
        }
        assert_eq!(
            m.greedy_decode(&[4, 6], None, 5).unwrap().ids,
            shifted.greedy_decode(&[4, 6], None, 5).unwrap().ids
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        for arch in [Arch::Attendgru, Arch::Transformer, Arch::AstAttendgru] {
            let m = build_model(&tiny(arch), 17).unwrap();
            let r = m.grad_check(&example(arch), 0.1).unwrap();
            assert!(r.passes(1e-4), "{arch}: {r:?}");
            assert_eq!(r.elements_checked, m.params.num_elements());
        }
    }

    #[test]
    fn dropout_changes_training_pass_only() {
        let mut cfg = tiny(Arch::Transformer);
        cfg.dropout_rate = 0.5;
        let m = build_model(&cfg, 3).unwrap();
        let ex = example(Arch::Transformer);
        let (eval, _, _) = example_loss_and_grad(&cfg, &m.params, &ex, 0.1, None).unwrap();
        let mut rng = Rng::new(1);
        let (train, _, _) =
            example_loss_and_grad(&cfg, &m.params, &ex, 0.1, Some(&mut rng)).unwrap();
        assert_ne!(eval, train);
        let (again, _, _) = example_loss_and_grad(&cfg, &m.params, &ex, 0.1, None).unwrap();
        assert_eq!(eval, again);
    }
}
