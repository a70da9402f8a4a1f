use super::NnError;
use crate::autodiff::Tensor;

/// Weights of one LSTM cell; gate order is input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmWeights {
    /// `[4H, in]`
    pub w_ih: Tensor,
    /// `[4H, H]`
    pub w_hh: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

impl LstmWeights {
    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }
}

/// One LSTM step over a batch: `x` is `[N, in]`, `h` and `c` are `[N, H]`.
pub fn lstm_cell(x: &Tensor, h: &Tensor, c: &Tensor, w: &LstmWeights) -> Result<(Tensor, Tensor), NnError> {
    let hid = w.hidden();
    let n = x.shape()[0];
    let ok = x.ndim() == 2
        && w.w_ih.shape() == [4 * hid, x.shape()[1]]
        && w.w_hh.shape() == [4 * hid, hid]
        && w.bias.shape() == [4 * hid]
        && h.shape() == [n, hid]
        && c.shape() == [n, hid];
    if !ok {
        return Err(NnError::ShapeMismatch(format!(
            "lstm_cell: x {:?}, h {:?}, c {:?}, w_ih {:?}, w_hh {:?}",
            x.shape(),
            h.shape(),
            c.shape(),
            w.w_ih.shape(),
            w.w_hh.shape()
        )));
    }
    let gates = x.matmul_t(&w.w_ih, false, true).add(&h.matmul_t(&w.w_hh, false, true)).add(&w.bias);
    let i = gates.narrow(1, 0, hid).sigmoid();
    let f = gates.narrow(1, hid, hid).sigmoid();
    let g = gates.narrow(1, 2 * hid, hid).tanh();
    let o = gates.narrow(1, 3 * hid, hid).sigmoid();
    let c_next = f.mul(c).add(&i.mul(&g));
    let h_next = o.mul(&c_next.tanh());
    Ok((h_next, c_next))
}
