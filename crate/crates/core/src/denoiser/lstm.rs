//! One direction of an LSTM layer over a batch, with exact backpropagation
//! through time. Sequences are `(L * B, width)` matrices with row `l * B + b`
//! holding position `l` of batch item `b`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};

use super::layers::{sigmoid, tanh};
use crate::nn::{ParamStore, TensorId};

/// Gate order inside the `4h` blocks: input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmDirection {
    pub w_ih: TensorId,
    pub w_hh: TensorId,
    pub bias: TensorId,
    pub hidden: usize,
    pub reverse: bool,
}

pub(crate) struct LstmTrace {
    /// Post-activation gates `(L * B, 4h)`.
    gates: Array2<f64>,
    cell: Array2<f64>,
    pub hidden: Array2<f64>,
}

impl LstmDirection {
    fn order(&self, len: usize) -> Vec<usize> {
        if self.reverse {
            (0..len).rev().collect()
        } else {
            (0..len).collect()
        }
    }

    pub fn forward(&self, params: &ParamStore, x: ArrayView2<f64>, len: usize, batch: usize) -> LstmTrace {
        let h = self.hidden;
        let w = 4 * h;
        let w_hh_t = params.view(self.w_hh).reversed_axes();
        let mut gates = x.dot(&params.view(self.w_ih).t());
        gates += &params.view(self.bias).row(0);
        let mut cell = Array2::zeros((len * batch, h));
        let mut hidden = Array2::zeros((len * batch, h));
        let mut prev: Option<usize> = None;
        for l in self.order(len) {
            let rows = l * batch..(l + 1) * batch;
            if let Some(p) = prev {
                let h_prev = hidden.slice(s![p * batch..(p + 1) * batch, ..]);
                let mut g = gates.slice_mut(s![rows.clone(), ..]);
                general_mat_mul(1.0, &h_prev, &w_hh_t, 1.0, &mut g);
            }
            let g = &mut gates.as_slice_mut().expect("standard layout")[rows.start * w..rows.end * w];
            let (c_all, h_all) = (
                cell.as_slice_mut().expect("standard layout"),
                hidden.as_slice_mut().expect("standard layout"),
            );
            for b in 0..batch {
                let gb = &mut g[b * w..(b + 1) * w];
                let row = (rows.start + b) * h;
                let c_prev_row = prev.map(|p| (p * batch + b) * h);
                for k in 0..h {
                    let i = sigmoid(gb[k]);
                    let f = sigmoid(gb[h + k]);
                    let cc = tanh(gb[2 * h + k]);
                    let o = sigmoid(gb[3 * h + k]);
                    gb[k] = i;
                    gb[h + k] = f;
                    gb[2 * h + k] = cc;
                    gb[3 * h + k] = o;
                    let cp = c_prev_row.map_or(0.0, |r| c_all[r + k]);
                    let c = f * cp + i * cc;
                    c_all[row + k] = c;
                    h_all[row + k] = o * tanh(c);
                }
            }
            prev = Some(l);
        }
        LstmTrace { gates, cell, hidden }
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &ParamStore,
        grads: &mut ParamStore,
        x: ArrayView2<f64>,
        trace: &LstmTrace,
        d_hidden: ArrayView2<f64>,
        len: usize,
        batch: usize,
    ) -> Array2<f64> {
        let h = self.hidden;
        let w = 4 * h;
        let w_hh = params.view(self.w_hh);
        let mut d_pre = Array2::<f64>::zeros((len * batch, w));
        let mut dh_next = Array2::<f64>::zeros((batch, h));
        let mut dc_next = vec![0.0; batch * h];
        let mut dw_hh = Array2::<f64>::zeros((w, h));
        let gates = trace.gates.as_slice().expect("standard layout");
        let cell = trace.cell.as_slice().expect("standard layout");
        let d_hidden = d_hidden.as_standard_layout();
        let dh_all = d_hidden.as_slice().expect("standard layout");
        let order = self.order(len);
        for (pos, &l) in order.iter().enumerate().rev() {
            let rows = l * batch..(l + 1) * batch;
            let prev = if pos == 0 { None } else { Some(order[pos - 1]) };
            {
                let dg = &mut d_pre.as_slice_mut().expect("standard layout")[rows.start * w..rows.end * w];
                let dhn = dh_next.as_slice().expect("standard layout");
                for b in 0..batch {
                    let row = rows.start + b;
                    let g = &gates[row * w..(row + 1) * w];
                    let dgb = &mut dg[b * w..(b + 1) * w];
                    for k in 0..h {
                        let (i, f, cc, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                        let c_prev = prev.map_or(0.0, |p| cell[(p * batch + b) * h + k]);
                        let tc = tanh(cell[row * h + k]);
                        let dh = dh_all[row * h + k] + dhn[b * h + k];
                        let d_o = dh * tc;
                        let dc = dc_next[b * h + k] + dh * o * (1.0 - tc * tc);
                        dc_next[b * h + k] = dc * f;
                        dgb[k] = dc * cc * i * (1.0 - i);
                        dgb[h + k] = dc * c_prev * f * (1.0 - f);
                        dgb[2 * h + k] = dc * i * (1.0 - cc * cc);
                        dgb[3 * h + k] = d_o * o * (1.0 - o);
                    }
                }
            }
            let dg = d_pre.slice(s![rows, ..]);
            if let Some(p) = prev {
                let h_prev = trace.hidden.slice(s![p * batch..(p + 1) * batch, ..]);
                general_mat_mul(1.0, &dg.t(), &h_prev, 1.0, &mut dw_hh);
            }
            general_mat_mul(1.0, &dg, &w_hh, 0.0, &mut dh_next);
        }
        {
            let mut gw = grads.view_mut(self.w_hh);
            gw += &dw_hh;
        }
        {
            let mut gw = grads.view_mut(self.w_ih);
            general_mat_mul(1.0, &d_pre.t(), &x, 1.0, &mut gw);
        }
        {
            let mut gb = grads.view_mut(self.bias);
            gb.row_mut(0).scaled_add(1.0, &d_pre.sum_axis(Axis(0)));
        }
        d_pre.dot(&params.view(self.w_ih))
    }
}
