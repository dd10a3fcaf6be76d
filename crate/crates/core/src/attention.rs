//! Attention with relative position embedding.
//!
//! Queries and keys carry sinusoidal functions of token positions so that
//! the pre-softmax score between tokens i and j depends on their features
//! and on the position difference `p_i - p_j` only — never on absolute
//! positions. The head output adds a value term and a term built from the
//! attention-weighted position differences, so outputs inherit the same
//! translation invariance.

use rand::Rng;

use crate::nn::{FeedForward, LayerNorm, Linear, ParamList, Projection};
use crate::rng::SeededRng;
use crate::tensor::{Result, Tensor, TensorError};

/// Token features paired with 2-D token positions.
#[derive(Clone)]
pub struct TokenSet {
    pub features: Tensor,
    pub positions: Tensor,
}

impl TokenSet {
    pub fn new(features: Tensor, positions: Tensor) -> Result<TokenSet> {
        let fs = features.shape();
        let ps = positions.shape();
        if fs.len() != 2 || ps.len() != 2 || ps[1] != 2 || fs[0] != ps[0] {
            return Err(TensorError::ShapeMismatch {
                op: "token_set",
                lhs: fs,
                rhs: ps,
            });
        }
        if fs[0] == 0 {
            return Err(TensorError::InvalidArg {
                op: "token_set",
                msg: "empty token set".into(),
            });
        }
        Ok(TokenSet { features, positions })
    }

    pub fn len(&self) -> usize {
        self.positions.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same features, different position stream.
    pub fn with_positions(&self, positions: Tensor) -> Result<TokenSet> {
        TokenSet::new(self.features.clone(), positions)
    }
}

/// Frequency matrix for the sinusoidal position terms: each column is a
/// random direction scaled by a log-uniform frequency matched to the
/// [-1,1] position domain.
fn frequency_matrix(dim: usize, rng: &mut SeededRng) -> Tensor {
    let lo = (std::f64::consts::PI / 2.0).ln();
    let hi = (4.0 * std::f64::consts::PI).ln();
    let mut data = vec![0.0; 2 * dim];
    for k in 0..dim {
        let omega = rng.gen_range(lo..hi).exp();
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        data[k] = omega * theta.cos();
        data[dim + k] = omega * theta.sin();
    }
    let t = Tensor::from_vec(&[2, dim], data).unwrap();
    t.set_requires_grad(true);
    t
}

/// One attention head with relative position embedding.
pub struct RelAttentionHead {
    pub wq: Projection,
    pub wk: Projection,
    pub wv: Projection,
    pub w1: Tensor,
    pub w2: Tensor,
    pub b1: Tensor,
    pub b2: Tensor,
    pub value_out: Linear,
    pub pos_out: Linear,
    pub dim: usize,
}

impl RelAttentionHead {
    pub fn new(embed_dim: usize, head_dim: usize, mlp_proj: bool, rng: &mut SeededRng) -> Self {
        RelAttentionHead {
            wq: Projection::new(embed_dim, head_dim, mlp_proj, rng),
            wk: Projection::new(embed_dim, head_dim, mlp_proj, rng),
            wv: Projection::new(embed_dim, head_dim, mlp_proj, rng),
            w1: frequency_matrix(head_dim, rng),
            w2: frequency_matrix(head_dim, rng),
            b1: Tensor::param(&[1, head_dim], vec![0.0; head_dim]).unwrap(),
            b2: Tensor::param(&[1, head_dim], vec![0.0; head_dim]).unwrap(),
            value_out: Linear::new(head_dim, embed_dim, rng),
            pos_out: Linear::new(2, embed_dim, rng),
            dim: head_dim,
        }
    }

    /// Query rows: four stacked blocks
    /// `[xWq (.) cos(pW1+b1), xWq (.) sin(pW1+b1), xWq (.) cos(pW2+b2), xWq (.) sin(pW2+b2)]`.
    pub fn queries(&self, features: &Tensor, positions: &Tensor) -> Result<Tensor> {
        let xq = self.wq.forward(features)?;
        let a1 = positions.matmul(&self.w1)?.add(&self.b1)?;
        let a2 = positions.matmul(&self.w2)?.add(&self.b2)?;
        Tensor::concat(
            &[
                xq.mul(&a1.cos()?)?,
                xq.mul(&a1.sin()?)?,
                xq.mul(&a2.cos()?)?,
                xq.mul(&a2.sin()?)?,
            ],
            1,
        )
    }

    /// Key rows: `[yWk (.) cos(pW1), yWk (.) sin(pW1), cos(pW2), sin(pW2)]`.
    /// The last two blocks carry no feature dependence.
    pub fn keys(&self, features: &Tensor, positions: &Tensor) -> Result<Tensor> {
        let yk = self.wk.forward(features)?;
        let a1 = positions.matmul(&self.w1)?;
        let a2 = positions.matmul(&self.w2)?;
        Tensor::concat(
            &[yk.mul(&a1.cos()?)?, yk.mul(&a1.sin()?)?, a2.cos()?, a2.sin()?],
            1,
        )
    }

    /// Pre-softmax scores `(q_i . k_j) / sqrt(d)`.
    pub fn raw_scores(&self, x: &TokenSet, y: &TokenSet) -> Result<Tensor> {
        let q = self.queries(&x.features, &x.positions)?;
        let k = self.keys(&y.features, &y.positions)?;
        q.matmul(&k.t()?)?.scale(1.0 / (self.dim as f64).sqrt())
    }

    /// Row-stochastic attention scores.
    pub fn scores(&self, x: &TokenSet, y: &TokenSet) -> Result<Tensor> {
        self.raw_scores(x, y)?.softmax_rows()
    }

    /// Head output: `Linear(A Y Wv) + Linear(sum_j a_ij (p_i - p_j))`.
    /// Because each score row sums to one, the weighted position difference
    /// is `p_i - A P_y`.
    pub fn output(&self, x: &TokenSet, y: &TokenSet) -> Result<Tensor> {
        let a = self.scores(x, y)?;
        let v = self.wv.forward(&y.features)?;
        let value_term = self.value_out.forward(&a.matmul(&v)?)?;
        let pos_diff = x.positions.sub(&a.matmul(&y.positions)?)?;
        let pos_term = self.pos_out.forward(&pos_diff)?;
        value_term.add(&pos_term)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        self.wq.collect_params(&format!("{prefix}.wq"), out);
        self.wk.collect_params(&format!("{prefix}.wk"), out);
        self.wv.collect_params(&format!("{prefix}.wv"), out);
        out.push((format!("{prefix}.w1"), self.w1.clone()));
        out.push((format!("{prefix}.w2"), self.w2.clone()));
        out.push((format!("{prefix}.b1"), self.b1.clone()));
        out.push((format!("{prefix}.b2"), self.b2.clone()));
        self.value_out.collect_params(&format!("{prefix}.value_out"), out);
        self.pos_out.collect_params(&format!("{prefix}.pos_out"), out);
    }
}

/// Pre-norm multi-head layer: summed head outputs with a residual
/// connection, then a feed-forward sublayer with its own residual.
/// Positions pass through unchanged.
pub struct MultiHeadBlock {
    pub heads: Vec<RelAttentionHead>,
    pub ln_attn: LayerNorm,
    pub ln_kv: LayerNorm,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl MultiHeadBlock {
    pub fn new(
        embed_dim: usize,
        n_heads: usize,
        ffn_mult: usize,
        mlp_proj: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if n_heads == 0 || embed_dim % n_heads != 0 {
            return Err(TensorError::InvalidArg {
                op: "multi_head",
                msg: format!("embed dim {} not divisible by {} heads", embed_dim, n_heads),
            });
        }
        let head_dim = embed_dim / n_heads;
        let heads = (0..n_heads)
            .map(|_| RelAttentionHead::new(embed_dim, head_dim, mlp_proj, rng))
            .collect();
        Ok(MultiHeadBlock {
            heads,
            ln_attn: LayerNorm::new(embed_dim),
            ln_kv: LayerNorm::new(embed_dim),
            ln_ffn: LayerNorm::new(embed_dim),
            ffn: FeedForward::new(embed_dim, ffn_mult * embed_dim, rng),
        })
    }

    /// `y = None` means self-attention on `x`.
    pub fn forward(&self, x: &TokenSet, y: Option<&TokenSet>) -> Result<TokenSet> {
        let xn = TokenSet::new(self.ln_attn.forward(&x.features)?, x.positions.clone())?;
        let yn = match y {
            Some(other) => TokenSet::new(self.ln_kv.forward(&other.features)?, other.positions.clone())?,
            None => xn.clone(),
        };
        let mut attn: Option<Tensor> = None;
        for head in &self.heads {
            let o = head.output(&xn, &yn)?;
            attn = Some(match attn {
                Some(acc) => acc.add(&o)?,
                None => o,
            });
        }
        let h = x.features.add(&attn.expect("at least one head"))?;
        let out = h.add(&self.ffn.forward(&self.ln_ffn.forward(&h)?)?)?;
        TokenSet::new(out, x.positions.clone())
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        for (i, head) in self.heads.iter().enumerate() {
            head.collect_params(&format!("{prefix}.head{i}"), out);
        }
        self.ln_attn.collect_params(&format!("{prefix}.ln_attn"), out);
        self.ln_kv.collect_params(&format!("{prefix}.ln_kv"), out);
        self.ln_ffn.collect_params(&format!("{prefix}.ln_ffn"), out);
        self.ffn.collect_params(&format!("{prefix}.ffn"), out);
    }
}

/// Plain scaled dot-product attention `softmax(Q K^T / sqrt(d_k)) V`.
pub fn baseline_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let qs = q.shape();
    let ks = k.shape();
    let vs = v.shape();
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] || ks[0] != vs[0] {
        return Err(TensorError::ShapeMismatch {
            op: "baseline_attention",
            lhs: qs,
            rhs: ks,
        });
    }
    let dk = qs[1] as f64;
    let scores = q.matmul(&k.t()?)?.scale(1.0 / dk.sqrt())?.softmax_rows()?;
    scores.matmul(v)
}
