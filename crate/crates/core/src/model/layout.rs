use super::{ModelConfig, TEXT_KERNEL};
use crate::dataset::{category_vocab_size, language_vocab_size};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Zeros,
    /// `U(−1/√fan_in, 1/√fan_in)`.
    Uniform { fan_in: usize },
    /// `N(0, 0.01)`.
    Embedding,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Indices of a weight `[in, out]` and bias `[1, out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

/// Linear → ReLU → Linear.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

/// Positions of every named parameter in the flat parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    specs: Vec<ParamSpec>,
    pub visual: Mlp,
    pub text_kernel: usize,
    pub text_bias: usize,
    pub text: Mlp,
    pub numeric: Mlp,
    pub category_table: usize,
    pub language_table: usize,
    pub category_mlp: Mlp,
    pub language_mlp: Mlp,
    pub state: Mlp,
    pub step_in: Vec<Mlp>,
    pub lstm_wx: usize,
    pub lstm_wh: usize,
    pub lstm_b: usize,
    pub step_out: Vec<Mlp>,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn linear(&mut self, name: &str, i: usize, o: usize) -> Linear {
        Linear {
            w: self.add(format!("{name}.w"), vec![i, o], Init::Uniform { fan_in: i }),
            b: self.add(format!("{name}.b"), vec![1, o], Init::Zeros),
        }
    }

    fn mlp(&mut self, name: &str, i: usize, h: usize, o: usize) -> Mlp {
        Mlp {
            l1: self.linear(&format!("{name}.0"), i, h),
            l2: self.linear(&format!("{name}.1"), h, o),
        }
    }
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let (p, h, e) = (c.modality_proj_dim, c.lstm_hidden, c.cat_embed_dim);
        let mut b = Builder { specs: Vec::new() };
        let visual = b.mlp("visual", c.visual_dim, p, p);
        let k = TEXT_KERNEL;
        let text_kernel = b.add("text.kernel".into(), vec![k, k], Init::Uniform { fan_in: k * k });
        let text_bias = b.add("text.kernel_bias".into(), vec![1], Init::Zeros);
        let text = b.mlp("text", c.text_field_dim, p, p);
        let numeric = b.mlp("numeric", c.numeric_dim(), p, p);
        let category_table = b.add("category.table".into(), vec![category_vocab_size(), e], Init::Embedding);
        let language_table = b.add("language.table".into(), vec![language_vocab_size(), e], Init::Embedding);
        let category_mlp = b.mlp("category", e, p, p);
        let language_mlp = b.mlp("language", e, p, p);
        let state = b.mlp("state", 4 * p, h, h);
        let step_in = (0..c.heads()).map(|s| b.mlp(&format!("step_in.{s}"), 4 * p, p, p)).collect();
        let lstm_wx = b.add("lstm.wx".into(), vec![p, 4 * h], Init::Uniform { fan_in: p });
        let lstm_wh = b.add("lstm.wh".into(), vec![h, 4 * h], Init::Uniform { fan_in: h });
        let lstm_b = b.add("lstm.b".into(), vec![1, 4 * h], Init::Zeros);
        let step_out = (0..c.heads()).map(|s| b.mlp(&format!("step_out.{s}"), 2 * h, p, 1)).collect();
        Layout {
            specs: b.specs,
            visual,
            text_kernel,
            text_bias,
            text,
            numeric,
            category_table,
            language_table,
            category_mlp,
            language_mlp,
            state,
            step_in,
            lstm_wx,
            lstm_wh,
            lstm_b,
            step_out,
        }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }
}
