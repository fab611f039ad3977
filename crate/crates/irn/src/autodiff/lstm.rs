//! Single-layer LSTM built from tape primitives, so backpropagation
//! through time falls out of the ordinary reverse pass.

use crate::autodiff::tape::{Tape, Val};
use crate::autodiff::tensor::{ParamId, ParamKind, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Weights for one LSTM layer. The three tensors pack all four gates in
/// i, f, g, o order (input, forget, cell candidate, output):
/// `w_ih` is [input×4·hidden], `w_hh` is [hidden×4·hidden], `bias` is
/// [4·hidden].
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    /// Registers zeroed LSTM weights under `{prefix}.w_ih`, `{prefix}.w_hh`
    /// and `{prefix}.bias`.
    pub fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize) -> Self {
        let w_ih = store.register(
            format!("{prefix}.w_ih"),
            ParamKind::Weight,
            Tensor::zeros(vec![input, 4 * hidden]),
        );
        let w_hh = store.register(
            format!("{prefix}.w_hh"),
            ParamKind::Weight,
            Tensor::zeros(vec![hidden, 4 * hidden]),
        );
        let bias = store.register(
            format!("{prefix}.bias"),
            ParamKind::Bias,
            Tensor::zeros(vec![4 * hidden]),
        );
        LstmParams {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        }
    }

    /// Runs the cell over `inputs` (each a 1×input row) from zero initial
    /// state and returns the final hidden state (1×hidden).
    pub fn forward(&self, tape: &mut Tape, inputs: &[Val]) -> Result<Val> {
        if inputs.is_empty() {
            return Err(Error::Config("LSTM needs at least one input step".into()));
        }
        let h_dim = self.hidden;
        let w_ih = tape.param(self.w_ih)?;
        let w_hh = tape.param(self.w_hh)?;
        let bias = tape.param(self.bias)?;
        let mut h = tape.constant_row(vec![0.0; h_dim]);
        let mut c = tape.constant_row(vec![0.0; h_dim]);
        for &x in inputs {
            let (xr, xc) = tape.shape(x);
            if xr != 1 || xc != self.input {
                return Err(Error::Shape {
                    op: "lstm_input",
                    lhs: vec![xr, xc],
                    rhs: vec![1, self.input],
                });
            }
            let from_x = tape.linear(x, w_ih, bias)?;
            let from_h = tape.matmul(h, w_hh)?;
            let z = tape.add(from_x, from_h)?;
            let i_pre = tape.slice_cols(z, 0, h_dim)?;
            let f_pre = tape.slice_cols(z, h_dim, h_dim)?;
            let g_pre = tape.slice_cols(z, 2 * h_dim, h_dim)?;
            let o_pre = tape.slice_cols(z, 3 * h_dim, h_dim)?;
            let i = tape.sigmoid(i_pre);
            let f = tape.sigmoid(f_pre);
            let g = tape.tanh(g_pre);
            let o = tape.sigmoid(o_pre);
            let keep = tape.mul(f, c)?;
            let write = tape.mul(i, g)?;
            c = tape.add(keep, write)?;
            let c_act = tape.tanh(c);
            h = tape.mul(o, c_act)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::Mode;

    #[test]
    fn zero_weights_produce_zero_hidden_state() {
        let mut store = ParamStore::new();
        let lstm = LstmParams::register(&mut store, "lstm", 3, 4);
        let mut tape = Tape::new(&store, Mode::Eval);
        let xs: Vec<Val> = (0..5)
            .map(|t| tape.constant_row(vec![t as f64, 1.0, -1.0]))
            .collect();
        let h = lstm.forward(&mut tape, &xs).unwrap();
        assert_eq!(tape.shape(h), (1, 4));
        assert!(tape.value(h).iter().all(|v| *v == 0.0));
    }

    /// With w_ih = 0, bias gates fixed: i = σ(bi), f = σ(bf), g = tanh(bg),
    /// o = σ(bo), and the state recursion has the closed form
    /// c_t = f·c_{t−1} + i·g. Check two steps by hand for hidden size 1.
    #[test]
    fn scalar_cell_matches_hand_recursion() {
        let mut store = ParamStore::new();
        let lstm = LstmParams::register(&mut store, "lstm", 2, 1);
        let (bi, bf, bg, bo) = (0.3, -0.2, 0.8, 0.1);
        store
            .get_mut(lstm.bias)
            .data
            .copy_from_slice(&[bi, bf, bg, bo]);
        let mut tape = Tape::new(&store, Mode::Eval);
        let xs = vec![
            tape.constant_row(vec![0.0, 0.0]),
            tape.constant_row(vec![0.0, 0.0]),
        ];
        let h = lstm.forward(&mut tape, &xs).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (i, f, g, o) = (sig(bi), sig(bf), bg.tanh(), sig(bo));
        // w_hh = 0 so the gate activations repeat each step.
        let c1 = i * g;
        let c2 = f * c1 + i * g;
        let expected = o * c2.tanh();
        assert!((tape.value(h)[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let mut store = ParamStore::new();
        let lstm = LstmParams::register(&mut store, "lstm", 3, 2);
        let mut tape = Tape::new(&store, Mode::Eval);
        let x = tape.constant_row(vec![1.0, 2.0]);
        assert!(lstm.forward(&mut tape, &[x]).is_err());
    }
}
