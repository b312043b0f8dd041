use rand::Rng;

use super::params::{glorot, ParamId, ParamStore};
use super::{ModelConfig, Session};
use crate::tensor::{Tensor, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

/// Fixed sinusoidal position table `T×d`: even columns `sin`, odd `cos`,
/// with wavelengths growing geometrically up to `10000·2π`.
pub fn positional_encoding(t: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; t * d];
    for pos in 0..t {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![t, d], data).expect("table shape")
}

#[derive(Debug, Clone)]
pub(super) struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new(
        params: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let weight = params.push(
            format!("{name}.weight"),
            glorot(rng, &[fan_in, fan_out], fan_in, fan_out),
        );
        let bias = params.push(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Self { weight, bias }
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.var(self.weight);
        let b = s.var(self.bias);
        let y = s.tape.matmul(x, w)?;
        s.tape.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    fn new(params: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: params.push(format!("{name}.gain"), Tensor::full(&[d], 1.0)),
            bias: params.push(format!("{name}.bias"), Tensor::zeros(&[d])),
        }
    }

    fn forward(&self, s: &mut Session, x: Var, eps: f64) -> Result<Var> {
        let (g, b) = (s.var(self.gain), s.var(self.bias));
        s.tape.layer_norm(x, g, b, eps)
    }
}

/// Pre-norm encoder block: `x + MHA(LN(x))` then `+ FFN(LN(·))`.
#[derive(Debug, Clone)]
pub(super) struct EncoderBlock {
    ln1: LayerNorm,
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    out: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

impl EncoderBlock {
    pub fn new(params: &mut ParamStore, rng: &mut impl Rng, name: &str, cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let ln1 = LayerNorm::new(params, &format!("{name}.ln1"), d);
        let mut proj =
            |p: &str| params.push(format!("{name}.attn.{p}"), glorot(rng, &[d, d], d, d));
        let (w_q, w_k, w_v) = (proj("w_q"), proj("w_k"), proj("w_v"));
        let out = Linear::new(params, rng, &format!("{name}.attn.out"), d, d);
        let ln2 = LayerNorm::new(params, &format!("{name}.ln2"), d);
        let ff1 = Linear::new(params, rng, &format!("{name}.ff1"), d, cfg.ffn_dim);
        let ff2 = Linear::new(params, rng, &format!("{name}.ff2"), cfg.ffn_dim, d);
        Self {
            ln1,
            w_q,
            w_k,
            w_v,
            out,
            ln2,
            ff1,
            ff2,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.ln1.gain, self.ln1.bias, self.w_q, self.w_k, self.w_v];
        ids.extend(self.out.ids());
        ids.extend([self.ln2.gain, self.ln2.bias]);
        ids.extend(self.ff1.ids());
        ids.extend(self.ff2.ids());
        ids
    }

    /// Bidirectional multi-head self-attention. Head `h` uses columns
    /// `h·d_k..(h+1)·d_k` of the Q/K/V projections.
    pub fn attention(&self, s: &mut Session, x: Var, cfg: &ModelConfig) -> Result<(Var, Vec<Var>)> {
        let d_k = cfg.d_k();
        let (wq, wk, wv) = (s.var(self.w_q), s.var(self.w_k), s.var(self.w_v));
        let q = s.tape.matmul(x, wq)?;
        let k = s.tape.matmul(x, wk)?;
        let v = s.tape.matmul(x, wv)?;
        let inv_scale = 1.0 / (d_k as f64).sqrt();
        let mut heads = Vec::with_capacity(cfg.n_heads);
        let mut weights = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let qh = s.tape.slice_cols(q, h * d_k, d_k)?;
            let kh = s.tape.slice_cols(k, h * d_k, d_k)?;
            let vh = s.tape.slice_cols(v, h * d_k, d_k)?;
            let kt = s.tape.transpose(kh)?;
            let scores = s.tape.matmul(qh, kt)?;
            let scores = s.tape.scale(scores, inv_scale);
            let attn = s.tape.softmax_rows(scores)?;
            weights.push(attn);
            heads.push(s.tape.matmul(attn, vh)?);
        }
        let cat = s.tape.concat_cols(&heads)?;
        Ok((self.out.forward(s, cat)?, weights))
    }

    pub fn forward(&self, s: &mut Session, x: Var, cfg: &ModelConfig) -> Result<Var> {
        let h = self.ln1.forward(s, x, cfg.ln_eps)?;
        let (a, _) = self.attention(s, h, cfg)?;
        let a = s.dropout(a)?;
        let x = s.tape.add(x, a)?;
        let h = self.ln2.forward(s, x, cfg.ln_eps)?;
        let f = self.ff1.forward(s, h)?;
        let f = s.tape.relu(f);
        let f = self.ff2.forward(s, f)?;
        let f = s.dropout(f)?;
        s.tape.add(x, f)
    }
}

/// Residual dilated layer: `h + P·ReLU(conv_d(h) + b)`.
#[derive(Debug, Clone)]
struct TcnLayer {
    kernel: ParamId,
    kernel_bias: ParamId,
    pointwise: Linear,
    dilation: usize,
}

/// One-stage TCN head: 1×1 input projection, dilated residual layers with
/// dilations `1, 2, 4, …`, 1×1 projection to class logits.
#[derive(Debug, Clone)]
pub(super) struct Tcn {
    input: Linear,
    layers: Vec<TcnLayer>,
    output: Linear,
}

impl Tcn {
    pub fn new(params: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let (c, k) = (cfg.tcn_channels, cfg.kernel_size);
        let input = Linear::new(params, rng, "tcn.input", cfg.d_model, c);
        let layers = cfg
            .dilations()
            .enumerate()
            .map(|(l, dilation)| TcnLayer {
                kernel: params.push(
                    format!("tcn.layer{l}.kernel"),
                    glorot(rng, &[k, c, c], k * c, k * c),
                ),
                kernel_bias: params.push(format!("tcn.layer{l}.kernel_bias"), Tensor::zeros(&[c])),
                pointwise: Linear::new(params, rng, &format!("tcn.layer{l}.pointwise"), c, c),
                dilation,
            })
            .collect();
        let output = Linear::new(params, rng, "tcn.output", c, cfg.n_classes);
        Self {
            input,
            layers,
            output,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = self.input.ids().to_vec();
        for layer in &self.layers {
            ids.extend([layer.kernel, layer.kernel_bias]);
            ids.extend(layer.pointwise.ids());
        }
        ids.extend(self.output.ids());
        ids
    }

    pub fn logits(&self, s: &mut Session, features: Var) -> Result<Var> {
        let mut h = self.input.forward(s, features)?;
        for layer in &self.layers {
            let (k, b) = (s.var(layer.kernel), s.var(layer.kernel_bias));
            let z = s.tape.conv1d(h, k, layer.dilation)?;
            let z = s.tape.add_row(z, b)?;
            let z = s.tape.relu(z);
            let z = layer.pointwise.forward(s, z)?;
            let z = s.dropout(z)?;
            h = s.tape.add(h, z)?;
        }
        self.output.forward(s, h)
    }
}

/// Two fully connected layers mapping features back to the input channels.
#[derive(Debug, Clone)]
pub(super) struct ReconHead {
    fc1: Linear,
    fc2: Linear,
}

impl ReconHead {
    pub fn new(params: &mut ParamStore, rng: &mut impl Rng, d: usize, n: usize) -> Self {
        Self {
            fc1: Linear::new(params, rng, "recon.fc1", d, d),
            fc2: Linear::new(params, rng, "recon.fc2", d, n),
        }
    }

    pub fn ids(&self) -> [ParamId; 4] {
        let [a, b] = self.fc1.ids();
        let [c, d] = self.fc2.ids();
        [a, b, c, d]
    }

    pub fn forward(&self, s: &mut Session, features: Var) -> Result<Var> {
        let h = self.fc1.forward(s, features)?;
        let h = s.tape.relu(h);
        self.fc2.forward(s, h)
    }
}
