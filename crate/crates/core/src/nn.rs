//! Small trainable layers shared by the attention modules and CNNs.

use rand::Rng;

use crate::rng::SeededRng;
use crate::tensor::{Result, Tensor};

/// Ordered list of named parameters; the order is the checkpoint order.
pub type ParamList = Vec<(String, Tensor)>;

pub fn push_param(out: &mut ParamList, prefix: &str, name: &str, t: &Tensor) {
    out.push((format!("{prefix}.{name}"), t.clone()));
}

fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let t = Tensor::rand_uniform(shape, -bound, bound, rng);
    t.set_requires_grad(true);
    t
}

/// Dense layer `x (L,in) -> x W + b (L,out)`.
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Linear {
        Linear {
            w: xavier(&[fan_in, fan_out], fan_in, fan_out, rng),
            b: Tensor::param(&[1, fan_out], vec![0.0; fan_out]).unwrap(),
        }
    }

    /// All-zero layer; used for displacement heads that must start at identity.
    pub fn zeros(fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: Tensor::param(&[fan_in, fan_out], vec![0.0; fan_in * fan_out]).unwrap(),
            b: Tensor::param(&[1, fan_out], vec![0.0; fan_out]).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w)?.add(&self.b)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        push_param(out, prefix, "w", &self.w);
        push_param(out, prefix, "b", &self.b);
    }
}

/// Query/key/value projection: a plain matrix per the attention equations,
/// or a two-layer MLP when configured.
pub enum Projection {
    Matrix(Tensor),
    Mlp { hidden: Linear, out: Linear },
}

impl Projection {
    pub fn new(fan_in: usize, fan_out: usize, mlp: bool, rng: &mut SeededRng) -> Projection {
        if mlp {
            Projection::Mlp {
                hidden: Linear::new(fan_in, fan_in, rng),
                out: Linear::new(fan_in, fan_out, rng),
            }
        } else {
            Projection::Matrix(xavier(&[fan_in, fan_out], fan_in, fan_out, rng))
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Projection::Matrix(w) => x.matmul(w),
            Projection::Mlp { hidden, out } => out.forward(&hidden.forward(x)?.relu()?),
        }
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        match self {
            Projection::Matrix(w) => push_param(out, prefix, "w", w),
            Projection::Mlp { hidden, out: o } => {
                hidden.collect_params(&format!("{prefix}.hidden"), out);
                o.collect_params(&format!("{prefix}.out"), out);
            }
        }
    }
}

/// Row-wise layer normalization over the feature axis.
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> LayerNorm {
        LayerNorm {
            gamma: Tensor::param(&[1, dim], vec![1.0; dim]).unwrap(),
            beta: Tensor::param(&[1, dim], vec![0.0; dim]).unwrap(),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dim = x.shape()[1] as f64;
        let mu = x.sum_axis(1)?.scale(1.0 / dim)?;
        let centered = x.sub(&mu)?;
        let var = centered.mul(&centered)?.sum_axis(1)?.scale(1.0 / dim)?;
        let denom = var.add_scalar(self.eps)?.sqrt()?;
        centered.div(&denom)?.mul(&self.gamma)?.add(&self.beta)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        push_param(out, prefix, "gamma", &self.gamma);
        push_param(out, prefix, "beta", &self.beta);
    }
}

/// Token-wise feed-forward sublayer `Linear -> ReLU -> Linear`.
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

impl FeedForward {
    pub fn new(dim: usize, hidden: usize, rng: &mut SeededRng) -> FeedForward {
        FeedForward {
            lin1: Linear::new(dim, hidden, rng),
            lin2: Linear::new(hidden, dim, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.lin2.forward(&self.lin1.forward(x)?.relu()?)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        self.lin1.collect_params(&format!("{prefix}.lin1"), out);
        self.lin2.collect_params(&format!("{prefix}.lin2"), out);
    }
}

/// Per-token MLP used by the attention-free ablation: two hidden ReLU
/// layers, no mixing across tokens.
pub struct TokenMlp {
    pub lin1: Linear,
    pub lin2: Linear,
}

impl TokenMlp {
    pub fn new(dim: usize, rng: &mut SeededRng) -> TokenMlp {
        TokenMlp {
            lin1: Linear::new(dim, dim, rng),
            lin2: Linear::new(dim, dim, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.lin1.forward(x)?.relu()?;
        x.add(&self.lin2.forward(&h)?)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        self.lin1.collect_params(&format!("{prefix}.lin1"), out);
        self.lin2.collect_params(&format!("{prefix}.lin2"), out);
    }
}

/// Fixed sinusoidal embedding of 2-D points: `sin/cos` of each coordinate
/// at `n_freqs` octave-spaced frequencies, giving `(N, 4*n_freqs)`.
pub fn sinusoidal_embed(points: &Tensor, n_freqs: usize) -> Result<Tensor> {
    let mut parts = Vec::with_capacity(4 * n_freqs);
    let x = points.slice(1, 0, 1)?;
    let y = points.slice(1, 1, 2)?;
    for k in 0..n_freqs {
        let omega = std::f64::consts::PI * (1 << k) as f64 / 2.0;
        for coord in [&x, &y] {
            let scaled = coord.scale(omega)?;
            parts.push(scaled.sin()?);
            parts.push(scaled.cos()?);
        }
    }
    Tensor::concat(&parts, 1)
}
