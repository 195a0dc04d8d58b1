//! Parameterised building blocks composed from tape primitives.

use rand::Rng;

use super::{BoundParams, ParamId, ParamStore, Tape, TensorError, Var};

/// `x W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: store.add_glorot(format!("{name}.weight"), in_dim, out_dim, rng),
            bias: store.add_zeros(format!("{name}.bias"), 1, out_dim),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, x: Var) -> Result<Var, TensorError> {
        let y = tape.matmul(x, p[self.weight])?;
        tape.add_row(y, p[self.bias])
    }
}

/// Two linear layers with a relu in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.0"), in_dim, hidden_dim, rng),
            output: Linear::new(store, &format!("{name}.1"), hidden_dim, out_dim, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, x: Var) -> Result<Var, TensorError> {
        let h = self.hidden.forward(tape, p, x)?;
        let h = tape.relu(h)?;
        self.output.forward(tape, p, h)
    }
}

/// Gated recurrent unit with fused gate weights (reset, update, candidate).
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub b_input: ParamId,
    pub b_hidden: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_input: store.add_glorot(format!("{name}.w_input"), input_dim, 3 * hidden_dim, rng),
            w_hidden: store.add_glorot(format!("{name}.w_hidden"), hidden_dim, 3 * hidden_dim, rng),
            b_input: store.add_zeros(format!("{name}.b_input"), 1, 3 * hidden_dim),
            b_hidden: store.add_zeros(format!("{name}.b_hidden"), 1, 3 * hidden_dim),
            input_dim,
            hidden_dim,
        }
    }

    /// `r = σ(x Wr + h Ur)`, `z = σ(x Wz + h Uz)`, `n = tanh(x Wn + r ⊙ (h Un))`,
    /// `h' = (1 - z) ⊙ n + z ⊙ h`, biases omitted.
    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, x: Var, h: Var) -> Result<Var, TensorError> {
        gru_cell(tape, x, h, [p[self.w_input], p[self.w_hidden], p[self.b_input], p[self.b_hidden]])
    }
}

/// Elman cell `h' = tanh(x W + h U + b)`.
#[derive(Clone, Debug)]
pub struct RnnCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl RnnCell {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_input: store.add_glorot(format!("{name}.w_input"), input_dim, hidden_dim, rng),
            w_hidden: store.add_glorot(format!("{name}.w_hidden"), hidden_dim, hidden_dim, rng),
            bias: store.add_zeros(format!("{name}.bias"), 1, hidden_dim),
            input_dim,
            hidden_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, x: Var, h: Var) -> Result<Var, TensorError> {
        rnn_cell(tape, x, h, [p[self.w_input], p[self.w_hidden], p[self.bias]])
    }
}

/// GRU step on tape variables `[w_input, w_hidden, b_input, b_hidden]`.
pub fn gru_cell(tape: &mut Tape, x: Var, h: Var, w: [Var; 4]) -> Result<Var, TensorError> {
    let [w_i, w_h, b_i, b_h] = w;
    let hid = tape.shape(h)[1];
    if tape.shape(w_h) != [hid, 3 * hid] {
        return Err(TensorError::ShapeMismatch {
            op: "gru_cell",
            lhs: tape.shape(h),
            rhs: tape.shape(w_h),
        });
    }
    let gi = tape.matmul(x, w_i)?;
    let gi = tape.add_row(gi, b_i)?;
    let gh = tape.matmul(h, w_h)?;
    let gh = tape.add_row(gh, b_h)?;

    let i_rz = tape.slice_cols(gi, 0..2 * hid)?;
    let h_rz = tape.slice_cols(gh, 0..2 * hid)?;
    let rz = tape.add(i_rz, h_rz)?;
    let rz = tape.sigmoid(rz)?;
    let r = tape.slice_cols(rz, 0..hid)?;
    let z = tape.slice_cols(rz, hid..2 * hid)?;

    let i_n = tape.slice_cols(gi, 2 * hid..3 * hid)?;
    let h_n = tape.slice_cols(gh, 2 * hid..3 * hid)?;
    let rh = tape.mul(r, h_n)?;
    let n = tape.add(i_n, rh)?;
    let n = tape.tanh(n)?;

    // h' = n + z ⊙ (h - n)
    let diff = tape.sub(h, n)?;
    let zd = tape.mul(z, diff)?;
    tape.add(n, zd)
}

/// Elman step on tape variables `[w_input, w_hidden, bias]`.
pub fn rnn_cell(tape: &mut Tape, x: Var, h: Var, w: [Var; 3]) -> Result<Var, TensorError> {
    let [w_i, w_h, b] = w;
    let a = tape.matmul(x, w_i)?;
    let c = tape.matmul(h, w_h)?;
    let s = tape.add(a, c)?;
    let s = tape.add_row(s, b)?;
    tape.tanh(s)
}

/// `max(d_pos - d_neg + margin, 0)` elementwise.
pub fn triplet_margin(tape: &mut Tape, d_pos: Var, d_neg: Var, margin: f64) -> Result<Var, TensorError> {
    let diff = tape.sub(d_pos, d_neg)?;
    let shifted = tape.add_scalar(diff, margin)?;
    tape.relu(shifted)
}
