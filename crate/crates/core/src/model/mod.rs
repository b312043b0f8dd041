//! The segmentation network: linear embedding with sinusoidal positions, a
//! stack of pre-norm Transformer encoder blocks, a dilated TCN
//! classification head and a two-layer reconstruction head. Both heads read
//! the same encoder parameters.

mod blocks;
mod config;
mod params;
mod scaler;

pub use blocks::positional_encoding;
pub use config::ModelConfig;
pub use params::{ParamId, ParamStore};
pub use scaler::InputScaler;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, Var};
use blocks::{EncoderBlock, Linear, ReconHead, Tcn};

/// Input sample rate of the inertial recordings, in Hz.
pub const SAMPLE_RATE_HZ: f64 = 100.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("window has shape {got:?}, model expects [T, {channels}]")]
    WindowShape { got: Vec<usize>, channels: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Fixed-length multichannel inertial segment: accelerometer in m/s² and
/// gyroscope in deg/s, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    pub samples: Tensor,
    pub sample_rate: f64,
}

impl SignalWindow {
    pub fn new(samples: Tensor) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE_HZ,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.samples.cols()
    }
}

/// Binding of a model's parameters onto a tape, plus the dropout state.
pub struct Session<'a> {
    pub tape: &'a mut Tape,
    vars: Vec<Var>,
    dropout: Option<(f64, &'a mut dyn RngCore)>,
}

impl<'a> Session<'a> {
    /// Training mode: parameters carry gradients and dropout is active.
    pub fn train(tape: &'a mut Tape, model: &Model, rng: &'a mut dyn RngCore) -> Self {
        let vars = model.params.bind(tape);
        let rate = model.config.dropout;
        Self {
            tape,
            vars,
            dropout: (rate > 0.0).then_some((rate, rng)),
        }
    }

    /// Parameters carry gradients, dropout disabled.
    pub fn deterministic(tape: &'a mut Tape, model: &Model) -> Self {
        let vars = model.params.bind(tape);
        Self {
            tape,
            vars,
            dropout: None,
        }
    }

    /// Inference: parameters are constants and dropout is disabled.
    pub fn eval(tape: &'a mut Tape, model: &Model) -> Self {
        let vars = model.params.bind_frozen(tape);
        Self {
            tape,
            vars,
            dropout: None,
        }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Inverted dropout; identity outside training mode.
    pub(crate) fn dropout(&mut self, x: Var) -> Result<Var, TensorError> {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return Ok(x);
        };
        let keep = 1.0 - *rate;
        let shape = self.tape.value(x).shape().to_vec();
        let n = self.tape.value(x).len();
        let mask = (0..n)
            .map(|_| {
                let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                if u < *rate {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let mask = self.tape.constant(Tensor::new(shape, mask)?);
        self.tape.mul(x, mask)
    }
}

/// Outputs of the classification route.
pub struct Classified {
    pub features: Var,
    pub probs: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    embed: Linear,
    encoder: Vec<EncoderBlock>,
    tcn: Tcn,
    recon: ReconHead,
    scaler: InputScaler,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (d, n) = (config.d_model, config.n_channels);
        let embed = Linear::new(&mut params, &mut rng, "embed", n, d);
        let encoder = (0..config.n_layers)
            .map(|l| EncoderBlock::new(&mut params, &mut rng, &format!("encoder.{l}"), &config))
            .collect();
        let tcn = Tcn::new(&mut params, &mut rng, &config);
        let recon = ReconHead::new(&mut params, &mut rng, d, n);
        Ok(Self {
            scaler: InputScaler::identity(n),
            config,
            params,
            embed,
            encoder,
            tcn,
            recon,
        })
    }

    /// Rebuilds a model from stored parameter arrays; every name must be
    /// present with the shape the config implies.
    pub fn from_parts(
        config: ModelConfig,
        stored: ParamStore,
        scaler: InputScaler,
    ) -> Result<Self, ModelError> {
        let mut model = Self::new(config, 0)?;
        if stored.len() != model.params.len() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} parameter arrays, found {}",
                model.params.len(),
                stored.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_owned();
            let src = stored
                .find(&name)
                .ok_or_else(|| ModelError::InvalidConfig(format!("missing parameter {name}")))?;
            let value = stored.get(src);
            if value.shape() != model.params.get(id).shape() {
                return Err(ModelError::InvalidConfig(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    value.shape(),
                    model.params.get(id).shape()
                )));
            }
            *model.params.get_mut(id) = value.clone();
        }
        if scaler.channels() != model.config.n_channels {
            return Err(ModelError::InvalidConfig(format!(
                "input scaler has {} channels, expected {}",
                scaler.channels(),
                model.config.n_channels
            )));
        }
        model.scaler = scaler;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn scaler(&self) -> &InputScaler {
        &self.scaler
    }

    pub fn set_scaler(&mut self, scaler: InputScaler) {
        self.scaler = scaler;
    }

    /// Parameters of the embedding and encoder stack, shared by both heads.
    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.embed.ids().to_vec();
        for block in &self.encoder {
            ids.extend(block.ids());
        }
        ids
    }

    pub fn tcn_param_ids(&self) -> Vec<ParamId> {
        self.tcn.ids()
    }

    pub fn recon_param_ids(&self) -> Vec<ParamId> {
        self.recon.ids().to_vec()
    }

    fn check_window(&self, x: &Tensor) -> Result<(), ModelError> {
        match x.shape() {
            &[t, c] if t > 0 && c == self.config.n_channels => Ok(()),
            other => Err(ModelError::WindowShape {
                got: other.to_vec(),
                channels: self.config.n_channels,
            }),
        }
    }

    /// Records a `T×N` input on the tape after validating its shape.
    pub fn input(&self, s: &mut Session, x: &Tensor) -> Result<Var, ModelError> {
        self.check_window(x)?;
        Ok(s.tape.constant(x.clone()))
    }

    /// Per-sample projection `N → d_model` plus sinusoidal positions.
    pub fn embed(&self, s: &mut Session, x: Var) -> Result<Var, ModelError> {
        let t = s.tape.value(x).rows();
        let projected = self.embed.forward(s, x)?;
        let pe = s.tape.constant(positional_encoding(t, self.config.d_model));
        Ok(s.tape.add(projected, pe)?)
    }

    /// Embedding followed by every encoder block.
    pub fn encode(&self, s: &mut Session, x: Var) -> Result<Var, ModelError> {
        let mut h = self.embed(s, x)?;
        for block in &self.encoder {
            h = block.forward(s, h, &self.config)?;
        }
        Ok(h)
    }

    /// One encoder block, exposed for block-level tests.
    pub fn encoder_block(&self, s: &mut Session, layer: usize, x: Var) -> Result<Var, ModelError> {
        Ok(self.encoder[layer].forward(s, x, &self.config)?)
    }

    /// Multi-head self-attention of block `layer` applied directly to `x`;
    /// returns the output and the per-head attention weights.
    pub fn attention(
        &self,
        s: &mut Session,
        layer: usize,
        x: Var,
    ) -> Result<(Var, Vec<Var>), ModelError> {
        Ok(self.encoder[layer].attention(s, x, &self.config)?)
    }

    /// TCN head: per-sample class probabilities `T×C`.
    pub fn tcn_classify(&self, s: &mut Session, features: Var) -> Result<Var, ModelError> {
        let logits = self.tcn.logits(s, features)?;
        Ok(s.tape.softmax_rows(logits)?)
    }

    /// TCN head pre-softmax scores.
    pub fn tcn_logits(&self, s: &mut Session, features: Var) -> Result<Var, ModelError> {
        Ok(self.tcn.logits(s, features)?)
    }

    /// Reconstruction head: `T×N` signal estimate.
    pub fn reconstruct(&self, s: &mut Session, features: Var) -> Result<Var, ModelError> {
        Ok(self.recon.forward(s, features)?)
    }

    /// Full classification route on an already-scaled window.
    pub fn classify(&self, s: &mut Session, x: &Tensor) -> Result<Classified, ModelError> {
        let input = self.input(s, x)?;
        let features = self.encode(s, input)?;
        let probs = self.tcn_classify(s, features)?;
        Ok(Classified { features, probs })
    }

    /// Full reconstruction route on an already-scaled (and masked) window.
    pub fn reconstruct_window(&self, s: &mut Session, x: &Tensor) -> Result<Var, ModelError> {
        let input = self.input(s, x)?;
        let features = self.encode(s, input)?;
        self.reconstruct(s, features)
    }

    /// Class probabilities for a raw (unscaled) window, inference mode.
    pub fn predict_proba(&self, window: &SignalWindow) -> Result<Tensor, ModelError> {
        self.check_window(&window.samples)?;
        let scaled = self.scaler.apply(&window.samples);
        let mut tape = Tape::new();
        let mut s = Session::eval(&mut tape, self);
        let out = self.classify(&mut s, &scaled)?;
        Ok(tape.value(out.probs).clone())
    }

    /// Reconstruction of a raw window in the scaled signal space.
    pub fn predict_reconstruction(&self, window: &SignalWindow) -> Result<Tensor, ModelError> {
        self.check_window(&window.samples)?;
        let scaled = self.scaler.apply(&window.samples);
        let mut tape = Tape::new();
        let mut s = Session::eval(&mut tape, self);
        let out = self.reconstruct_window(&mut s, &scaled)?;
        Ok(tape.value(out).clone())
    }
}
