//! Time-conditional bidirectional LSTM denoiser.
//!
//! Pipeline for a batch of noisy sequences at diffusion steps `t_b`:
//!
//! 1. per time step, the numerical values and the flattened one-hot lattices
//!    are concatenated into one input vector;
//! 2. a stack of bidirectional LSTM layers produces `h_l` of width `H`
//!    (both directions concatenated);
//! 3. each `h_l` is layer-normalized;
//! 4. `h~_l * (scale + 1) + shift`, where `scale`/`shift` are the two halves
//!    of the step embedding (sinusoidal -> FC -> GeLU -> FC -> SiLU -> FC);
//! 5. a linear layer maps to `P_r + sum K_p` outputs, split into the noise
//!    prediction and per-channel category logits.

pub(crate) mod layers;
mod lstm;

use ndarray::{s, Array2, Array3, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gaussian::NumericMatrix;
use crate::multinomial::OneHotSequence;
use crate::nn::{init_uniform, ParamStore, TensorId};
use crate::{Error, Result};
use layers::{gelu, gelu_grad, layernorm, layernorm_backward, linear, silu, silu_grad};
use lstm::{LstmDirection, LstmTrace};

/// Sinusoidal embedding: entry `i < E/2` is `sin(t / 10000^(2i/E))`, entry
/// `E/2 + i` the matching cosine.
pub fn sinusoidal_embed(t: f64, width: usize) -> Result<Vec<f64>> {
    if width == 0 || !width.is_multiple_of(2) {
        return Err(Error::invalid(format!("embedding width must be even, got {width}")));
    }
    let half = width / 2;
    let mut out = vec![0.0; width];
    for i in 0..half {
        let freq = 10000f64.powf(-(2.0 * i as f64) / width as f64);
        out[i] = (t * freq).sin();
        out[half + i] = (t * freq).cos();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub numeric_channels: usize,
    /// Category count of every discrete channel.
    pub categories: Vec<usize>,
    /// Width of the concatenated (forward + backward) hidden state.
    pub hidden: usize,
    pub embed_dim: usize,
    pub layers: usize,
}

impl DenoiserConfig {
    /// Defaults: hidden width four times the input width, embedding width 128,
    /// two bidirectional layers.
    pub fn new(numeric_channels: usize, categories: Vec<usize>) -> Self {
        let width = numeric_channels + categories.iter().sum::<usize>();
        Self {
            numeric_channels,
            categories,
            hidden: 4 * width + (4 * width) % 2,
            embed_dim: 128,
            layers: 2,
        }
    }

    pub fn io_width(&self) -> usize {
        self.numeric_channels + self.categories.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.io_width() == 0 {
            return Err(Error::invalid("denoiser needs at least one channel"));
        }
        if self.hidden < 2 || !self.hidden.is_multiple_of(2) {
            return Err(Error::invalid(format!("hidden width must be even and >= 2, got {}", self.hidden)));
        }
        if self.embed_dim < 2 || !self.embed_dim.is_multiple_of(2) {
            return Err(Error::invalid(format!("embedding width must be even, got {}", self.embed_dim)));
        }
        if self.layers == 0 {
            return Err(Error::invalid("at least one recurrent layer is required"));
        }
        if self.categories.iter().any(|&k| k < 2) {
            return Err(Error::invalid("every discrete channel needs at least 2 categories"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Handles {
    fc1: (TensorId, TensorId),
    fc2: (TensorId, TensorId),
    fc3: (TensorId, TensorId),
    lstm: Vec<[LstmDirection; 2]>,
    ln_gain: TensorId,
    ln_bias: TensorId,
    out: (TensorId, TensorId),
}

/// Network structure; the weights live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Denoiser {
    config: DenoiserConfig,
    layout: ParamStore,
    ids: Handles,
}

/// Noise prediction and category logits for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub eps_pred: NumericMatrix,
    /// One `[L, K_p]` matrix per discrete channel.
    pub logits: Vec<Array2<f64>>,
}

/// Intermediate values of a forward pass, consumed by [`Denoiser::backward`].
pub struct ForwardCache {
    len: usize,
    batch: usize,
    /// Map from batch item to its row in the per-step embedding tables.
    step_row: Vec<usize>,
    emb_in: Array2<f64>,
    a1: Array2<f64>,
    h1: Array2<f64>,
    a2: Array2<f64>,
    h2: Array2<f64>,
    scale: Array2<f64>,
    layer_inputs: Vec<Array2<f64>>,
    traces: Vec<[LstmTrace; 2]>,
    xhat: Array2<f64>,
    rstd: ndarray::Array1<f64>,
    normed: Array2<f64>,
    film: Array2<f64>,
    params_len: usize,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let e = config.embed_dim;
        let hid = config.hidden;
        let half = hid / 2;
        let io = config.io_width();
        let mut st = ParamStore::new();
        let fc1 = (st.add("embed.fc1.weight", 4 * e, e), st.add("embed.fc1.bias", 1, 4 * e));
        let fc2 = (st.add("embed.fc2.weight", 4 * e, 4 * e), st.add("embed.fc2.bias", 1, 4 * e));
        let fc3 = (st.add("embed.fc3.weight", 2 * hid, 4 * e), st.add("embed.fc3.bias", 1, 2 * hid));
        let mut lstm = Vec::with_capacity(config.layers);
        for layer in 0..config.layers {
            let input = if layer == 0 { io } else { hid };
            let mut dir = |name: &str, reverse: bool| LstmDirection {
                w_ih: st.add(format!("lstm.{layer}.{name}.w_ih"), 4 * half, input),
                w_hh: st.add(format!("lstm.{layer}.{name}.w_hh"), 4 * half, half),
                bias: st.add(format!("lstm.{layer}.{name}.bias"), 1, 4 * half),
                hidden: half,
                reverse,
            };
            let fwd = dir("fwd", false);
            let bwd = dir("bwd", true);
            lstm.push([fwd, bwd]);
        }
        let ln_gain = st.add("norm.gain", 1, hid);
        let ln_bias = st.add("norm.bias", 1, hid);
        let out = (st.add("out.weight", io, hid), st.add("out.bias", 1, io));
        Ok(Self {
            config,
            layout: st,
            ids: Handles {
                fc1,
                fc2,
                fc3,
                lstm,
                ln_gain,
                ln_bias,
                out,
            },
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    /// Zero-valued store with this network's tensor layout.
    pub fn zero_params(&self) -> ParamStore {
        self.layout.zeros_like()
    }

    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    /// Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit layernorm gain.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let mut p = self.zero_params();
        for (w, _) in [self.ids.fc1, self.ids.fc2, self.ids.fc3, self.ids.out] {
            let fan_in = p.spec(w).cols;
            init_uniform(&mut p, w, fan_in, rng);
        }
        for layer in &self.ids.lstm {
            for d in layer {
                let fan_in = p.spec(d.w_ih).cols;
                init_uniform(&mut p, d.w_ih, fan_in, rng);
                init_uniform(&mut p, d.w_hh, d.hidden, rng);
            }
        }
        p.slice_mut(self.ids.ln_gain).fill(1.0);
        p
    }

    /// Tensor-name prefixes grouping parameters for gradient checks.
    pub fn param_groups(&self) -> Vec<(String, Vec<String>)> {
        let mut groups = Vec::new();
        let names = |prefix: &str| -> Vec<String> {
            self.layout
                .specs()
                .iter()
                .filter(|s| s.name.starts_with(prefix))
                .map(|s| s.name.clone())
                .collect()
        };
        for g in ["embed.fc1", "embed.fc2", "embed.fc3"] {
            groups.push((g.to_string(), names(g)));
        }
        for spec in self.layout.specs().iter().filter(|s| s.name.starts_with("lstm.")) {
            groups.push((spec.name.clone(), vec![spec.name.clone()]));
        }
        groups.push(("norm".into(), names("norm.")));
        groups.push(("out".into(), names("out.")));
        groups
    }

    fn check_params(&self, params: &ParamStore) -> Result<()> {
        if !params.same_layout(&self.layout) {
            return Err(Error::Contract("parameter store does not match the denoiser layout".into()));
        }
        Ok(())
    }

    /// Packs samples into a `(L, B, P_r + sum K_p)` input tensor.
    pub fn assemble_input(&self, samples: &[(&NumericMatrix, &OneHotSequence)]) -> Result<Array3<f64>> {
        let len = samples.first().map_or(0, |(x, _)| x.len());
        let mut input = Array3::zeros((len, samples.len(), self.config.io_width()));
        for (b, (x, c)) in samples.iter().enumerate() {
            self.check_sample(x, c, len)?;
            for l in 0..len {
                let mut row = input.slice_mut(s![l, b, ..]);
                for p in 0..x.channels() {
                    row[p] = x.0[[p, l]];
                }
                let mut col = x.channels();
                for ch in &c.channels {
                    for k in 0..ch.ncols() {
                        row[col + k] = ch[[l, k]];
                    }
                    col += ch.ncols();
                }
            }
        }
        Ok(input)
    }

    fn check_sample(&self, x: &NumericMatrix, c: &OneHotSequence, len: usize) -> Result<()> {
        let ok = x.channels() == self.config.numeric_channels
            && x.len() == len
            && c.categories() == self.config.categories
            && c.channels.iter().all(|ch| ch.nrows() == len);
        if !ok {
            return Err(Error::invalid(format!(
                "sample layout ({} numeric x {}, categories {:?}) does not match the denoiser ({} numeric, categories {:?})",
                x.channels(),
                x.len(),
                c.categories(),
                self.config.numeric_channels,
                self.config.categories
            )));
        }
        Ok(())
    }

    /// Splits output row `b` of a `(L, B, width)` tensor into its parts.
    pub fn split_output(&self, out: ArrayView3<f64>, b: usize) -> DenoiserOutput {
        let len = out.dim().0;
        let pr = self.config.numeric_channels;
        let mut eps = Array2::zeros((pr, len));
        for l in 0..len {
            for p in 0..pr {
                eps[[p, l]] = out[[l, b, p]];
            }
        }
        let mut col = pr;
        let logits = self
            .config
            .categories
            .iter()
            .map(|&k| {
                let m = out.slice(s![.., b, col..col + k]).to_owned();
                col += k;
                m
            })
            .collect();
        DenoiserOutput {
            eps_pred: NumericMatrix(eps),
            logits,
        }
    }

    /// Single-sample convenience wrapper around [`Denoiser::forward`].
    pub fn predict(
        &self,
        params: &ParamStore,
        x_t: &NumericMatrix,
        c_t: &OneHotSequence,
        t: usize,
    ) -> Result<DenoiserOutput> {
        let input = self.assemble_input(&[(x_t, c_t)])?;
        let (out, _) = self.forward(params, input.view(), &[t])?;
        Ok(self.split_output(out.view(), 0))
    }

    /// Step-embedding MLP for each distinct step; returns the table rows and
    /// the map from batch item to row.
    fn embed_steps(&self, steps: &[usize]) -> Result<(Array2<f64>, Vec<usize>)> {
        let mut unique: Vec<usize> = steps.to_vec();
        unique.sort_unstable();
        unique.dedup();
        let e = self.config.embed_dim;
        let mut emb = Array2::zeros((unique.len(), e));
        for (r, &t) in unique.iter().enumerate() {
            let v = sinusoidal_embed(t as f64, e)?;
            emb.row_mut(r).assign(&ndarray::ArrayView1::from(&v));
        }
        let rows = steps
            .iter()
            .map(|t| unique.binary_search(t).expect("step present"))
            .collect();
        Ok((emb, rows))
    }

    /// Batched forward pass over `input: (L, B, width)` with one step per item.
    pub fn forward(
        &self,
        params: &ParamStore,
        input: ArrayView3<f64>,
        steps: &[usize],
    ) -> Result<(Array3<f64>, ForwardCache)> {
        self.check_params(params)?;
        let (len, batch, width) = input.dim();
        if width != self.config.io_width() || steps.len() != batch {
            return Err(Error::invalid(format!(
                "input {:?} with {} steps does not fit io width {}",
                input.dim(),
                steps.len(),
                self.config.io_width()
            )));
        }
        let hid = self.config.hidden;
        let half = hid / 2;

        let (emb_in, step_row) = self.embed_steps(steps)?;
        let a1 = linear(emb_in.view(), params.view(self.ids.fc1.0), params.view(self.ids.fc1.1));
        let h1 = a1.mapv(gelu);
        let a2 = linear(h1.view(), params.view(self.ids.fc2.0), params.view(self.ids.fc2.1));
        let h2 = a2.mapv(silu);
        let temb = linear(h2.view(), params.view(self.ids.fc3.0), params.view(self.ids.fc3.1));
        let scale = temb.slice(s![.., ..hid]).to_owned();
        let shift = temb.slice(s![.., hid..]).to_owned();

        let flat = input
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((len * batch, width))
            .expect("contiguous input");
        let mut layer_inputs = Vec::with_capacity(self.ids.lstm.len());
        let mut traces = Vec::with_capacity(self.ids.lstm.len());
        let mut x = flat;
        for dirs in &self.ids.lstm {
            let fwd = dirs[0].forward(params, x.view(), len, batch);
            let bwd = dirs[1].forward(params, x.view(), len, batch);
            let mut h = Array2::zeros((len * batch, hid));
            h.slice_mut(s![.., ..half]).assign(&fwd.hidden);
            h.slice_mut(s![.., half..]).assign(&bwd.hidden);
            layer_inputs.push(x);
            traces.push([fwd, bwd]);
            x = h;
        }

        let (normed, xhat, rstd) = layernorm(x.view(), params.view(self.ids.ln_gain), params.view(self.ids.ln_bias));
        let mut film = normed.clone();
        for l in 0..len {
            for b in 0..batch {
                let r = step_row[b];
                let mut row = film.row_mut(l * batch + b);
                for k in 0..hid {
                    row[k] = row[k] * (scale[[r, k]] + 1.0) + shift[[r, k]];
                }
            }
        }
        let out = linear(film.view(), params.view(self.ids.out.0), params.view(self.ids.out.1));
        let out = out.into_shape_with_order((len, batch, width)).expect("output shape");
        let cache = ForwardCache {
            len,
            batch,
            step_row,
            emb_in,
            a1,
            h1,
            a2,
            h2,
            scale,
            layer_inputs,
            traces,
            xhat,
            rstd,
            normed,
            film,
            params_len: params.len(),
        };
        Ok((out, cache))
    }

    /// Exact gradient of a scalar loss given `dL/d output`.
    pub fn backward(&self, params: &ParamStore, cache: &ForwardCache, d_out: ArrayView3<f64>) -> Result<ParamStore> {
        self.check_params(params)?;
        let width = self.config.io_width();
        if d_out.dim() != (cache.len, cache.batch, width) || cache.params_len != params.len() {
            return Err(Error::Contract(format!(
                "output gradient {:?} does not match the cached forward pass ({}, {}, {width})",
                d_out.dim(),
                cache.len,
                cache.batch
            )));
        }
        let (len, batch) = (cache.len, cache.batch);
        let hid = self.config.hidden;
        let half = hid / 2;
        let mut grads = self.zero_params();
        let d_out = d_out
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((len * batch, width))
            .expect("contiguous gradient");

        let d_film = self.dense_backward(params, &mut grads, self.ids.out, cache.film.view(), d_out.view());

        // Scale/shift conditioning.
        let rows = cache.emb_in.nrows();
        let mut d_temb = Array2::<f64>::zeros((rows, 2 * hid));
        let mut d_norm = d_film.clone();
        for l in 0..len {
            for b in 0..batch {
                let r = cache.step_row[b];
                let idx = l * batch + b;
                for k in 0..hid {
                    let d = d_film[[idx, k]];
                    d_norm[[idx, k]] = d * (cache.scale[[r, k]] + 1.0);
                    d_temb[[r, k]] += d * cache.normed[[idx, k]];
                    d_temb[[r, hid + k]] += d;
                }
            }
        }

        let (mut d_h, d_gain, d_bias) =
            layernorm_backward(d_norm.view(), cache.xhat.view(), &cache.rstd, params.view(self.ids.ln_gain));
        grads.view_mut(self.ids.ln_gain).row_mut(0).scaled_add(1.0, &d_gain);
        grads.view_mut(self.ids.ln_bias).row_mut(0).scaled_add(1.0, &d_bias);

        for (layer, dirs) in self.ids.lstm.iter().enumerate().rev() {
            let x = &cache.layer_inputs[layer];
            let [tf, tb] = &cache.traces[layer];
            let dx_f = dirs[0].backward(params, &mut grads, x.view(), tf, d_h.slice(s![.., ..half]), len, batch);
            let dx_b = dirs[1].backward(params, &mut grads, x.view(), tb, d_h.slice(s![.., half..]), len, batch);
            d_h = dx_f + dx_b;
        }

        // Step-embedding MLP.
        let d_h2 = self.dense_backward(params, &mut grads, self.ids.fc3, cache.h2.view(), d_temb.view());
        let d_a2 = &d_h2 * &cache.a2.mapv(silu_grad);
        let d_h1 = self.dense_backward(params, &mut grads, self.ids.fc2, cache.h1.view(), d_a2.view());
        let d_a1 = &d_h1 * &cache.a1.mapv(gelu_grad);
        self.dense_backward(params, &mut grads, self.ids.fc1, cache.emb_in.view(), d_a1.view());
        Ok(grads)
    }

    fn dense_backward(
        &self,
        params: &ParamStore,
        grads: &mut ParamStore,
        (w, b): (TensorId, TensorId),
        x: ndarray::ArrayView2<f64>,
        dy: ndarray::ArrayView2<f64>,
    ) -> Array2<f64> {
        {
            let mut gw = grads.view_mut(w);
            gw += &dy.t().dot(&x);
        }
        {
            let mut gb = grads.view_mut(b);
            gb.row_mut(0).scaled_add(1.0, &dy.sum_axis(Axis(0)));
        }
        dy.dot(&params.view(w))
    }
}

#[cfg(test)]
mod tests;
