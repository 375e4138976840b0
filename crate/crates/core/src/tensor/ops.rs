use super::graph::{AttentionMask, AttentionVars, Graph};
use super::{ParamStore, Rng, Tensor};
use crate::error::{Error, Result};

/// Max-subtracted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax restricted to `allowed` entries; the rest get weight exactly 0.
pub fn masked_softmax(x: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
    let max = x
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::numeric("softmax over a fully masked row"));
    }
    let exps: Vec<f64> = x
        .iter()
        .zip(allowed)
        .map(|(v, &a)| if a { (v - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Weights of one GRU cell, matrices oriented `[in, out]` (row-vector convention).
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub wz: Tensor,
    pub uz: Tensor,
    pub bz: Tensor,
    pub wr: Tensor,
    pub ur: Tensor,
    pub br: Tensor,
    pub wh: Tensor,
    pub uh: Tensor,
    pub bh: Tensor,
}

impl GruWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = Tensor::zeros(&[input, hidden]);
        let u = Tensor::zeros(&[hidden, hidden]);
        let b = Tensor::zeros(&[1, hidden]);
        GruWeights {
            wz: w.clone(),
            uz: u.clone(),
            bz: b.clone(),
            wr: w.clone(),
            ur: u.clone(),
            br: b.clone(),
            wh: w,
            uh: u,
            bh: b,
        }
    }

    /// Reads `{prefix}.wz`, `{prefix}.uz`, ... from a parameter store.
    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |n: &str| {
            store
                .get(&format!("{prefix}.{n}"))
                .cloned()
                .ok_or_else(|| Error::config(format!("missing parameter {prefix}.{n}")))
        };
        Ok(GruWeights {
            wz: get("wz")?,
            uz: get("uz")?,
            bz: get("bz")?,
            wr: get("wr")?,
            ur: get("ur")?,
            br: get("br")?,
            wh: get("wh")?,
            uh: get("uh")?,
            bh: get("bh")?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.wz.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.wz.cols()
    }
}

fn vec_mat(x: &[f64], m: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for (i, xv) in x.iter().enumerate() {
        for (o, w) in out.iter_mut().zip(m.row(i)) {
            *o += xv * w;
        }
    }
    out
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One GRU step:
/// `z = σ(x·Wz + h·Uz + bz)`, `r = σ(x·Wr + h·Ur + br)`,
/// `h̃ = tanh(x·Wh + (r⊙h)·Uh + bh)`, `h' = (1−z)⊙h + z⊙h̃`.
pub fn gru_step(x: &[f64], h: &[f64], w: &GruWeights) -> Result<Vec<f64>> {
    if x.len() != w.input_dim() || h.len() != w.hidden_dim() {
        return Err(Error::config(format!(
            "gru_step: got x[{}], h[{}] for a {}->{} cell",
            x.len(),
            h.len(),
            w.input_dim(),
            w.hidden_dim()
        )));
    }
    let gate = |wm: &Tensor, um: &Tensor, b: &Tensor, hh: &[f64]| -> Vec<f64> {
        let a = vec_mat(x, wm);
        let c = vec_mat(hh, um);
        a.iter()
            .zip(&c)
            .zip(b.data())
            .map(|((a, c), b)| a + c + b)
            .collect()
    };
    let z: Vec<f64> = gate(&w.wz, &w.uz, &w.bz, h)
        .into_iter()
        .map(logistic)
        .collect();
    let r: Vec<f64> = gate(&w.wr, &w.ur, &w.br, h)
        .into_iter()
        .map(logistic)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(r, h)| r * h).collect();
    let cand: Vec<f64> = gate(&w.wh, &w.uh, &w.bh, &rh)
        .into_iter()
        .map(f64::tanh)
        .collect();
    Ok(z.iter()
        .zip(h)
        .zip(&cand)
        .map(|((z, h), c)| (1.0 - z) * h + z * c)
        .collect())
}

/// Multiplicative attention of one decoder state over `encoder_states`
/// (`[T, d]`). `keys[t] = false` masks position `t` (PAD).
pub fn dot_attention(
    decoder_state: &[f64],
    encoder_states: &Tensor,
    keys: &[bool],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = encoder_states.cols();
    if decoder_state.len() != d || keys.len() != encoder_states.rows() {
        return Err(Error::config("dot_attention: dimension mismatch"));
    }
    let scores: Vec<f64> = (0..encoder_states.rows())
        .map(|t| {
            encoder_states
                .row(t)
                .iter()
                .zip(decoder_state)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    let weights = masked_softmax(&scores, keys)?;
    let mut context = vec![0.0; d];
    for (t, w) in weights.iter().enumerate() {
        for (c, e) in context.iter_mut().zip(encoder_states.row(t)) {
            *c += w * e;
        }
    }
    Ok((context, weights))
}

/// Projection weights for the free-standing [`multi_head_attention`].
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

impl AttentionWeights {
    pub fn identity(d: usize) -> Self {
        let mut eye = Tensor::zeros(&[d, d]);
        for i in 0..d {
            eye.data_mut()[i * d + i] = 1.0;
        }
        AttentionWeights {
            wq: eye.clone(),
            wk: eye.clone(),
            wv: eye.clone(),
            wo: eye,
            bo: Tensor::zeros(&[1, d]),
        }
    }
}

/// Multi-head scaled dot-product attention on plain tensors.
pub fn multi_head_attention(
    queries: &Tensor,
    keys: &Tensor,
    values: &Tensor,
    heads: usize,
    mask: &AttentionMask,
    w: &AttentionWeights,
) -> Result<Tensor> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let q = g.input(queries.clone());
    let k = g.input(keys.clone());
    let v = g.input(values.clone());
    let vars = AttentionVars {
        wq: g.input(w.wq.clone()),
        wk: g.input(w.wk.clone()),
        wv: g.input(w.wv.clone()),
        wo: g.input(w.wo.clone()),
        bo: g.input(w.bo.clone()),
    };
    let out = g.multi_head_attention(q, k, v, &vars, heads, mask)?;
    Ok(g.value(out).clone())
}

/// Sinusoidal table `PE[pos, 2i] = sin(pos / 10000^(2i/d))`,
/// `PE[pos, 2i+1] = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding(max_len: usize, d_model: usize) -> Result<Tensor> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::config(format!("d_model {d_model} must be even")));
    }
    let mut data = vec![0.0; max_len * d_model];
    for pos in 0..max_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Ok(Tensor::matrix(max_len, d_model, data))
}

/// Inverted-dropout multiplier: 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask(shape: &[usize], rate: f64, rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    let keep = 1.0 / (1.0 - rate);
    for v in t.data_mut() {
        *v = if rng.uniform() < rate { 0.0 } else { keep };
    }
    t
}

pub fn apply_dropout(x: &Tensor, rate: f64, rng: &mut Rng, training: bool) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.shape(), rate, rng);
    let data = x
        .data()
        .iter()
        .zip(mask.data())
        .map(|(a, m)| a * m)
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn softmax_uniform_and_analytic() {
        assert_eq!(softmax(&[1.0, 1.0, 1.0, 1.0]), vec![0.25; 4]);
        let p = softmax(&[0.0, 3f64.ln()]);
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.75, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn softmax_normalizes_and_keeps_argmax(xs in prop::collection::vec(-50.0f64..50.0, 1..40)) {
            let p = softmax(&xs);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            let am = |v: &[f64]| v.iter().enumerate().fold(0, |b, (i, x)| if *x > v[b] { i } else { b });
            prop_assert_eq!(am(&xs), am(&p));
        }

        #[test]
        fn gru_output_bounded(
            seed in 0u64..1000,
            h in prop::collection::vec(-3.0f64..3.0, 4),
            x in prop::collection::vec(-3.0f64..3.0, 3),
        ) {
            let mut rng = Rng::new(seed);
            let mut w = GruWeights::zeros(3, 4);
            for t in [&mut w.wz, &mut w.uz, &mut w.bz, &mut w.wr, &mut w.ur, &mut w.br, &mut w.wh, &mut w.uh, &mut w.bh] {
                for v in t.data_mut() { *v = rng.uniform_range(-2.0, 2.0); }
            }
            let out = gru_step(&x, &h, &w).unwrap();
            for (o, hv) in out.iter().zip(&h) {
                prop_assert!(o.abs() <= hv.abs().max(1.0) + 1e-12);
            }
        }
    }

    #[test]
    fn gru_zero_params_halves_state() {
        let w = GruWeights::zeros(2, 1);
        let out = gru_step(&[5.0, -1.0], &[0.4], &w).unwrap();
        assert_abs_diff_eq!(out[0], 0.2, epsilon = 1e-15);
        assert_eq!(gru_step(&[0.0, 0.0], &[0.0], &w).unwrap(), vec![0.0]);
    }

    #[test]
    fn gru_dimension_mismatch() {
        let w = GruWeights::zeros(2, 3);
        assert!(matches!(
            gru_step(&[0.0], &[0.0; 3], &w),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn attention_identical_rows_is_uniform_mean() {
        let enc = Tensor::matrix(3, 2, vec![0.5, 1.0, 0.5, 1.0, 0.5, 1.0]);
        let (ctx, w) = dot_attention(&[1.0, 2.0], &enc, &[true, true, false]).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-15);
        assert_eq!(w[2], 0.0);
        assert_abs_diff_eq!(ctx[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(ctx[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn attention_sharpens_with_scale() {
        let enc = Tensor::matrix(2, 1, vec![1.0, 0.0]);
        let (_, w1) = dot_attention(&[1.0], &enc, &[true, true]).unwrap();
        let (_, w2) = dot_attention(&[30.0], &enc, &[true, true]).unwrap();
        assert!(w2[0] > w1[0]);
        assert!(w2[0] > 1.0 - 1e-12);
    }

    #[test]
    fn single_head_identity_reduces_to_scaled_dot_attention() {
        let mut rng = Rng::new(5);
        let d = 4;
        let x = Tensor::matrix(
            3,
            d,
            (0..3 * d).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
        );
        let out = multi_head_attention(
            &x,
            &x,
            &x,
            1,
            &AttentionMask::None,
            &AttentionWeights::identity(d),
        )
        .unwrap();
        let scale = 1.0 / (d as f64).sqrt();
        for t in 0..3 {
            let q: Vec<f64> = x.row(t).iter().map(|v| v * scale).collect();
            let (ctx, _) = dot_attention(&q, &x, &[true; 3]).unwrap();
            for (j, c) in ctx.iter().enumerate() {
                assert_abs_diff_eq!(out.get(t, j), *c, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn causal_rows_ignore_future_positions() {
        let mut rng = Rng::new(8);
        let d = 4;
        let mut w = AttentionWeights::identity(d);
        for t in [&mut w.wq, &mut w.wk, &mut w.wv, &mut w.wo] {
            *t = Tensor::xavier(d, d, &mut rng);
        }
        let x = Tensor::matrix(
            4,
            d,
            (0..4 * d).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
        );
        let base = multi_head_attention(&x, &x, &x, 2, &AttentionMask::Causal, &w).unwrap();
        let mut y = x.clone();
        for j in 0..d {
            y.data_mut()[3 * d + j] += 5.0;
        }
        let pert = multi_head_attention(&y, &y, &y, 2, &AttentionMask::Causal, &w).unwrap();
        for t in 0..3 {
            assert_eq!(base.row(t), pert.row(t));
        }
        assert_ne!(base.row(3), pert.row(3));
    }

    #[test]
    fn zero_values_give_bias_only() {
        let d = 4;
        let mut w = AttentionWeights::identity(d);
        w.bo = Tensor::matrix(1, d, vec![0.1, 0.2, 0.3, 0.4]);
        let q = Tensor::filled(&[2, d], 0.3);
        let v = Tensor::zeros(&[2, d]);
        let out = multi_head_attention(&q, &q, &v, 2, &AttentionMask::None, &w).unwrap();
        assert_eq!(out.row(1), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let x = Tensor::zeros(&[2, 4]);
        let r = multi_head_attention(
            &x,
            &x,
            &x,
            3,
            &AttentionMask::None,
            &AttentionWeights::identity(4),
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn positional_table_values() {
        let pe = positional_encoding(5, 6).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_abs_diff_eq!(pe.get(1, 0), 0.841471, epsilon = 1e-6);
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(positional_encoding(3, 5).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        let x = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]);
        let mut rng = Rng::new(1);
        assert_eq!(apply_dropout(&x, 0.0, &mut rng, true).unwrap(), x);
        assert_eq!(apply_dropout(&x, 0.5, &mut rng, false).unwrap(), x);
        assert!(apply_dropout(&x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        // Each element is x·B/(1-p), B ~ Bernoulli(1-p): mean x, var x²·p/(1-p).
        let rate = 0.3;
        let x = Tensor::filled(&[1, 1], 2.0);
        let draws = 20_000;
        let mut rng = Rng::new(77);
        let mean = (0..draws)
            .map(|_| apply_dropout(&x, rate, &mut rng, true).unwrap().data()[0])
            .sum::<f64>()
            / draws as f64;
        let sigma = (4.0 * rate / (1.0 - rate) / draws as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * sigma, "mean {mean}");
    }
}
