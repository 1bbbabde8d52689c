use super::layout::{Linear, Mlp};
use super::{Model, ModelError, TEXT_FIELDS, TEXT_KERNEL};
use crate::dataset::{category_vocab_size, language_vocab_size};
use crate::tensor::{Tape, Tensor, Var};

/// Model inputs for a batch of samples; row `i` of every field is sample `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[B, visual_dim]`; blank images are zero rows.
    pub visual: Tensor,
    /// `[B, 5 · text_field_dim]`, fields concatenated in fusion order.
    pub text: Tensor,
    /// `[B, numeric_dim]`, already standardized.
    pub numeric: Tensor,
    pub category: Vec<usize>,
    pub language: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.category.len()
    }

    pub fn is_empty(&self) -> bool {
        self.category.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Batch {
        Batch {
            visual: self.visual.select_rows(rows),
            text: self.text.select_rows(rows),
            numeric: self.numeric.select_rows(rows),
            category: rows.iter().map(|&r| self.category[r]).collect(),
            language: rows.iter().map(|&r| self.language[r]).collect(),
        }
    }

    fn check(&self, model: &Model) -> Result<(), ModelError> {
        let c = model.config();
        let b = self.len();
        if b == 0 {
            return Err(ModelError::Params("empty batch".into()));
        }
        let expect = [
            ("visual", &self.visual, c.visual_dim),
            ("text", &self.text, TEXT_FIELDS * c.text_field_dim),
            ("numeric", &self.numeric, c.numeric_dim()),
        ];
        for (name, t, cols) in expect {
            if t.shape() != [b, cols] {
                return Err(ModelError::Params(format!(
                    "{name} input has shape {:?}, expected [{b}, {cols}]",
                    t.shape()
                )));
            }
        }
        if self.language.len() != b {
            return Err(ModelError::Params("language tokens do not match batch size".into()));
        }
        for (kind, tokens, size) in [
            ("category", &self.category, category_vocab_size()),
            ("language", &self.language, language_vocab_size()),
        ] {
            if let Some(&token) = tokens.iter().find(|&&t| t >= size) {
                return Err(ModelError::Vocabulary { kind, token, size });
            }
        }
        Ok(())
    }
}

fn linear(tape: &mut Tape, p: &[Var], l: Linear, x: Var) -> Result<Var, ModelError> {
    let y = tape.matmul(x, p[l.w])?;
    Ok(tape.add(y, p[l.b])?)
}

fn mlp(tape: &mut Tape, p: &[Var], m: Mlp, x: Var) -> Result<Var, ModelError> {
    let h = linear(tape, p, m.l1, x)?;
    let h = tape.relu(h);
    linear(tape, p, m.l2, h)
}

impl Model {
    /// Records the forward pass on `tape` using parameters `p` (as returned by
    /// [`Model::place`]) and returns the `[B, steps]` non-negative predictions.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], batch: &Batch) -> Result<Var, ModelError> {
        if p.len() != self.params().len() {
            return Err(ModelError::Params(format!(
                "{} parameter nodes for {} tensors",
                p.len(),
                self.params().len()
            )));
        }
        batch.check(self)?;
        let c = self.config();
        let l = self.layout();
        let b = batch.len();
        let h = c.lstm_hidden;

        let visual = tape.constant(batch.visual.clone());
        let f_v = mlp(tape, p, l.visual, visual)?;

        let text = tape.constant(batch.text.clone());
        let text = tape.reshape(text, &[b, TEXT_FIELDS, c.text_field_dim])?;
        let pad = (0, TEXT_KERNEL / 2);
        let conv = tape.conv2d(text, p[l.text_kernel], pad)?;
        let conv = tape.reshape(conv, &[b, c.text_field_dim])?;
        let conv = tape.add(conv, p[l.text_bias])?;
        let f_t = mlp(tape, p, l.text, conv)?;

        let numeric = tape.constant(batch.numeric.clone());
        let f_n = mlp(tape, p, l.numeric, numeric)?;

        let e1 = tape.gather_rows(p[l.category_table], &batch.category)?;
        let e2 = tape.gather_rows(p[l.language_table], &batch.language)?;
        let c1 = mlp(tape, p, l.category_mlp, e1)?;
        let c2 = mlp(tape, p, l.language_mlp, e2)?;
        let f_c = tape.mul(c1, c2)?;

        let fused = tape.concat(&[f_v, f_t, f_n, f_c])?;
        let mut hs = mlp(tape, p, l.state, fused)?;
        let mut cs = hs;

        let mut outputs = Vec::with_capacity(c.steps);
        for s in 0..c.steps {
            let head = if c.per_step_params { s } else { 0 };
            let x = mlp(tape, p, l.step_in[head], fused)?;
            let gx = tape.matmul(x, p[l.lstm_wx])?;
            let gh = tape.matmul(hs, p[l.lstm_wh])?;
            let gates = tape.add(gx, gh)?;
            let gates = tape.add(gates, p[l.lstm_b])?;
            let i = tape.slice_cols(gates, 0, h)?;
            let f = tape.slice_cols(gates, h, 2 * h)?;
            let g = tape.slice_cols(gates, 2 * h, 3 * h)?;
            let o = tape.slice_cols(gates, 3 * h, 4 * h)?;
            let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
            let keep = tape.mul(f, cs)?;
            let write = tape.mul(i, g)?;
            cs = tape.add(keep, write)?;
            let squashed = tape.tanh(cs);
            hs = tape.mul(o, squashed)?;
            let hc = tape.concat(&[hs, cs])?;
            outputs.push(mlp(tape, p, l.step_out[head], hc)?);
        }
        let pre = tape.concat(&outputs)?;
        Ok(tape.clamp_min(pre, 0.0))
    }
}
