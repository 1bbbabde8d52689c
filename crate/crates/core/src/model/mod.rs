//! Multimodal encoder, LSTM temporal regressor and non-negative output head.
//!
//! Fusion order is fixed: `F = [visual, textual, numeric, categorical]`, each
//! block `modality_proj_dim` wide. Text fields enter as a `5 × text_field_dim`
//! matrix in the order category, title, tags, description, user id.

mod checkpoint;
mod forward;
mod layout;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{category_vocab_size, language_vocab_size, numeric_dim};
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use forward::Batch;
pub use layout::{Init, Layout, Linear, Mlp, ParamSpec};

/// Number of text fields stacked for the convolution.
pub const TEXT_FIELDS: usize = 5;
/// Side of the square text kernel.
pub const TEXT_KERNEL: usize = 5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{kind} token {token} outside vocabulary of {size}")]
    Vocabulary { kind: &'static str, token: usize, size: usize },
    #[error("parameter contract violated: {0}")]
    Params(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub text_field_dim: usize,
    pub visual_dim: usize,
    pub modality_proj_dim: usize,
    pub cat_embed_dim: usize,
    pub lstm_hidden: usize,
    pub steps: usize,
    /// Separate temporal-encoder and output MLPs for every step.
    pub per_step_params: bool,
    pub ep_mode: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            text_field_dim: 768,
            visual_dim: 2048,
            modality_proj_dim: 128,
            cat_embed_dim: 32,
            lstm_hidden: 256,
            steps: 29,
            per_step_params: true,
            ep_mode: true,
        }
    }
}

fn mlp_count(i: usize, h: usize, o: usize) -> usize {
    i * h + h + h * o + o
}

impl ModelConfig {
    pub fn numeric_dim(&self) -> usize {
        numeric_dim(self.ep_mode)
    }

    /// Steps a model predicts on the full 30-day horizon.
    pub fn horizon_steps(ep_mode: bool) -> usize {
        if ep_mode {
            29
        } else {
            30
        }
    }

    /// Calendar day of the first predicted step.
    pub fn first_day(&self) -> usize {
        if self.ep_mode {
            2
        } else {
            1
        }
    }

    /// Number of distinct temporal-encoder / output heads.
    pub fn heads(&self) -> usize {
        if self.per_step_params {
            self.steps
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("text_field_dim", self.text_field_dim),
            ("visual_dim", self.visual_dim),
            ("modality_proj_dim", self.modality_proj_dim),
            ("cat_embed_dim", self.cat_embed_dim),
            ("lstm_hidden", self.lstm_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if self.steps < 3 {
            return Err(ModelError::Config(format!("steps must be at least 3, got {}", self.steps)));
        }
        Ok(())
    }

    /// Checks that `steps` covers the 30-day horizon for the EP setting.
    pub fn validate_horizon(&self) -> Result<(), ModelError> {
        let want = Self::horizon_steps(self.ep_mode);
        if self.steps != want {
            return Err(ModelError::Config(format!(
                "steps = {} but ep_mode = {} predicts {want} days",
                self.steps, self.ep_mode
            )));
        }
        Ok(())
    }

    /// Closed-form number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let (p, h, e) = (self.modality_proj_dim, self.lstm_hidden, self.cat_embed_dim);
        let visual = mlp_count(self.visual_dim, p, p);
        let text = TEXT_KERNEL * TEXT_KERNEL + 1 + mlp_count(self.text_field_dim, p, p);
        let numeric = mlp_count(self.numeric_dim(), p, p);
        let categorical = (category_vocab_size() + language_vocab_size()) * e + 2 * mlp_count(e, p, p);
        let state = mlp_count(4 * p, h, h);
        let lstm = p * 4 * h + h * 4 * h + 4 * h;
        let heads = self.heads() * (mlp_count(4 * p, p, p) + mlp_count(2 * h, p, 1));
        visual + text + numeric + categorical + state + lstm + heads
    }
}

/// Configured network with its parameter tensors in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    params: Vec<Tensor>,
}

impl Model {
    /// Seeded initialization; values are rounded to single precision so a
    /// checkpoint reproduces them exactly.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = Normal::new(0.0, 0.01).expect("valid normal");
        let params = layout
            .specs()
            .iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let data: Vec<f64> = match spec.init {
                    Init::Zeros => vec![0.0; n],
                    Init::Uniform { fan_in } => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        let u = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
                        (0..n).map(|_| u.sample(&mut rng)).collect()
                    }
                    Init::Embedding => (0..n).map(|_| embed.sample(&mut rng)).collect(),
                };
                let mut t = Tensor::new(spec.shape.clone(), data).expect("spec shape");
                t.round_to_f32();
                t
            })
            .collect();
        Ok(Model { config, layout, params })
    }

    /// Rebuilds a model from stored tensors, checking every shape.
    pub fn from_parts(config: ModelConfig, params: Vec<Tensor>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.specs().len() {
            return Err(ModelError::Params(format!(
                "expected {} tensors, got {}",
                layout.specs().len(),
                params.len()
            )));
        }
        for (spec, t) in layout.specs().iter().zip(&params) {
            if t.shape() != spec.shape.as_slice() {
                return Err(ModelError::Params(format!(
                    "{} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(Model { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Sets the final bias of each output head, e.g. to per-step target means.
    /// With shared heads the mean of `values` is used.
    pub fn set_output_bias(&mut self, values: &[f64]) -> Result<(), ModelError> {
        if values.len() != self.config.steps {
            return Err(ModelError::Params(format!(
                "{} output biases for {} steps",
                values.len(),
                self.config.steps
            )));
        }
        let heads: Vec<usize> = self.layout.step_out.iter().map(|m| m.l2.b).collect();
        if heads.len() == 1 {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            self.params[heads[0]].data_mut()[0] = mean as f32 as f64;
        } else {
            for (idx, v) in heads.into_iter().zip(values) {
                self.params[idx].data_mut()[0] = *v as f32 as f64;
            }
        }
        Ok(())
    }

    /// Places every parameter on `tape` as a trainable leaf.
    pub fn place(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Places every parameter as a constant; no gradients are tracked.
    pub fn place_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Predictions without gradient tracking, `batch × steps`.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let vars = self.place_frozen(&mut tape);
        let out = self.forward(&mut tape, &vars, batch)?;
        Ok(tape.value(out).clone())
    }

    /// Gradients for `vars` after a backward pass; unused parameters get zeros.
    pub fn collect_grads(&self, tape: &Tape, vars: &[Var]) -> Vec<Tensor> {
        vars.iter()
            .zip(&self.params)
            .map(|(v, p)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    }
}
