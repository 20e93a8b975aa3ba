//! Single-layer GRU with a linear head, used by the metric models.
//! Sequences are `(L * B, width)` matrices, row `l * B + b`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::denoiser::layers::{sigmoid, tanh};
use crate::nn::{init_uniform, ParamStore, TensorId};

/// Gate blocks are ordered reset, update, candidate:
/// `h' = (1 - z) n + z h`, `n = tanh(W_in x + b_in + r (W_hn h + b_hn))`.
#[derive(Debug, Clone)]
pub(crate) struct GruNet {
    hidden: usize,
    w_ih: TensorId,
    w_hh: TensorId,
    b_ih: TensorId,
    b_hh: TensorId,
    head_w: TensorId,
    head_b: TensorId,
    layout: ParamStore,
}

pub(crate) struct GruTrace {
    /// Post-activation `r, z, n` per row, `(L * B, 3H)`.
    gates: Array2<f64>,
    /// `W_hn h_prev + b_hn`, `(L * B, H)`.
    hn: Array2<f64>,
    hidden: Array2<f64>,
    len: usize,
    batch: usize,
}

impl GruNet {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        let mut st = ParamStore::new();
        let w_ih = st.add("gru.w_ih", 3 * hidden, input);
        let w_hh = st.add("gru.w_hh", 3 * hidden, hidden);
        let b_ih = st.add("gru.b_ih", 1, 3 * hidden);
        let b_hh = st.add("gru.b_hh", 1, 3 * hidden);
        let head_w = st.add("head.weight", output, hidden);
        let head_b = st.add("head.bias", 1, output);
        Self {
            hidden,
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            head_w,
            head_b,
            layout: st,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut p = self.layout.zeros_like();
        let h = self.hidden;
        for id in [self.w_ih, self.w_hh, self.b_ih, self.b_hh] {
            init_uniform(&mut p, id, h, rng);
        }
        let fan_in = p.spec(self.head_w).cols;
        init_uniform(&mut p, self.head_w, fan_in, rng);
        p
    }

    /// Hidden states of every row and the head applied to each of them.
    pub fn forward(&self, params: &ParamStore, x: ArrayView2<f64>, len: usize, batch: usize) -> (GruTrace, Array2<f64>) {
        let h = self.hidden;
        let w = 3 * h;
        let mut gates = Array2::zeros((len * batch, w));
        gates.assign(&params.view(self.b_ih).row(0));
        general_mat_mul(1.0, &x, &params.view(self.w_ih).t(), 1.0, &mut gates);
        let w_hh_t = params.view(self.w_hh).reversed_axes();
        let b_hh = params.view(self.b_hh);
        let mut hn = Array2::zeros((len * batch, h));
        let mut hidden = Array2::<f64>::zeros((len * batch, h));
        let mut gh = Array2::<f64>::zeros((batch, w));
        for l in 0..len {
            gh.assign(&b_hh.broadcast((batch, w)).expect("bias row"));
            if l > 0 {
                let h_prev = hidden.slice(s![(l - 1) * batch..l * batch, ..]);
                general_mat_mul(1.0, &h_prev, &w_hh_t, 1.0, &mut gh);
            }
            let hid = hidden.as_slice_mut().expect("standard layout");
            let g_all = gates.as_slice_mut().expect("standard layout");
            let hn_all = hn.as_slice_mut().expect("standard layout");
            let ghs = gh.as_slice().expect("standard layout");
            for b in 0..batch {
                let row = l * batch + b;
                let g = &mut g_all[row * w..(row + 1) * w];
                let ghb = &ghs[b * w..(b + 1) * w];
                for k in 0..h {
                    let r = sigmoid(g[k] + ghb[k]);
                    let z = sigmoid(g[h + k] + ghb[h + k]);
                    let n = tanh(g[2 * h + k] + r * ghb[2 * h + k]);
                    let hp = if l > 0 { hid[(row - batch) * h + k] } else { 0.0 };
                    g[k] = r;
                    g[h + k] = z;
                    g[2 * h + k] = n;
                    hn_all[row * h + k] = ghb[2 * h + k];
                    hid[row * h + k] = (1.0 - z) * n + z * hp;
                }
            }
        }
        let mut out = hidden.dot(&params.view(self.head_w).t());
        out += &params.view(self.head_b).row(0);
        (
            GruTrace {
                gates,
                hn,
                hidden,
                len,
                batch,
            },
            out,
        )
    }

    /// Exact gradient of a scalar loss given `dL/d out` for every row.
    pub fn backward(&self, params: &ParamStore, x: ArrayView2<f64>, trace: &GruTrace, d_out: ArrayView2<f64>) -> ParamStore {
        let (len, batch, h) = (trace.len, trace.batch, self.hidden);
        let w = 3 * h;
        let mut grads = self.layout.zeros_like();
        grads.view_mut(self.head_w).assign(&d_out.t().dot(&trace.hidden));
        grads.view_mut(self.head_b).row_mut(0).assign(&d_out.sum_axis(Axis(0)));
        let d_hidden = d_out.dot(&params.view(self.head_w));
        let dh_up = d_hidden.as_slice().expect("standard layout");

        let w_hh = params.view(self.w_hh);
        let mut d_gi = Array2::<f64>::zeros((len * batch, w));
        let mut d_gh = Array2::<f64>::zeros((batch, w));
        let mut dh_next = Array2::<f64>::zeros((batch, h));
        let mut dw_hh = Array2::<f64>::zeros((w, h));
        let mut db_hh = Array2::<f64>::zeros((1, w));
        let gates = trace.gates.as_slice().expect("standard layout");
        let hn = trace.hn.as_slice().expect("standard layout");
        let hid = trace.hidden.as_slice().expect("standard layout");
        for l in (0..len).rev() {
            {
                let dgi = d_gi.as_slice_mut().expect("standard layout");
                let dgh = d_gh.as_slice_mut().expect("standard layout");
                let dhn = dh_next.as_slice_mut().expect("standard layout");
                for b in 0..batch {
                    let row = l * batch + b;
                    let g = &gates[row * w..(row + 1) * w];
                    for k in 0..h {
                        let (r, z, n) = (g[k], g[h + k], g[2 * h + k]);
                        let hp = if l > 0 { hid[(row - batch) * h + k] } else { 0.0 };
                        let dh = dh_up[row * h + k] + dhn[b * h + k];
                        let dan = dh * (1.0 - z) * (1.0 - n * n);
                        let daz = dh * (hp - n) * z * (1.0 - z);
                        let dar = dan * hn[row * h + k] * r * (1.0 - r);
                        dgi[row * w + k] = dar;
                        dgi[row * w + h + k] = daz;
                        dgi[row * w + 2 * h + k] = dan;
                        dgh[b * w + k] = dar;
                        dgh[b * w + h + k] = daz;
                        dgh[b * w + 2 * h + k] = dan * r;
                        dhn[b * h + k] = dh * z;
                    }
                }
            }
            db_hh.row_mut(0).scaled_add(1.0, &d_gh.sum_axis(Axis(0)));
            if l > 0 {
                let h_prev = trace.hidden.slice(s![(l - 1) * batch..l * batch, ..]);
                general_mat_mul(1.0, &d_gh.t(), &h_prev, 1.0, &mut dw_hh);
                general_mat_mul(1.0, &d_gh, &w_hh, 1.0, &mut dh_next);
            }
        }
        grads.view_mut(self.w_hh).assign(&dw_hh);
        grads.view_mut(self.b_hh).assign(&db_hh);
        grads.view_mut(self.w_ih).assign(&d_gi.t().dot(&x));
        grads.view_mut(self.b_ih).row_mut(0).assign(&d_gi.sum_axis(Axis(0)));
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradients_match_finite_differences() {
        let (len, batch) = (4, 3);
        let net = GruNet::new(2, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = net.init(&mut rng);
        let x = Array2::from_shape_simple_fn((len * batch, 2), || rng.random_range(-1.0..1.0));
        let wts = Array2::from_shape_simple_fn((len * batch, 2), || rng.random_range(-1.0..1.0));
        let loss = |p: &ParamStore| (&net.forward(p, x.view(), len, batch).1 * &wts).sum();
        let (trace, _) = net.forward(&p, x.view(), len, batch);
        let g = net.backward(&p, x.view(), &trace, wts.view());
        let h = 1e-6;
        for i in 0..p.len() {
            let mut up = p.clone();
            up.data_mut()[i] += h;
            let mut dn = p.clone();
            dn.data_mut()[i] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            let a = g.data()[i];
            // Central differences carry ~1e-10 of roundoff at this step.
            assert!((a - fd).abs() < 1e-8 + 1e-5 * a.abs().max(fd.abs()), "param {i}: {a} vs {fd}");
        }
    }

    #[test]
    fn state_carries_information_forward() {
        let net = GruNet::new(1, 4, 1);
        let p = net.init(&mut ChaCha8Rng::seed_from_u64(2));
        let mut x = Array2::zeros((5, 1));
        let (_, a) = net.forward(&p, x.view(), 5, 1);
        x[[0, 0]] = 1.0;
        let (_, b) = net.forward(&p, x.view(), 5, 1);
        assert_ne!(a[[4, 0]], b[[4, 0]]);
    }
}
