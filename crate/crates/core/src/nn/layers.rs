use candle_core::{Tensor, D};

use super::ParamStore;
use crate::error::{invalid, Result};
use crate::rng::SeededRng;

const NORM_EPS: f64 = 1e-5;

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = ((x.abs()?.neg()?.exp()? + 1.0)?).log()?;
    Ok((x.relu()? + tail)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x * 0.5)?.tanh()? * 0.5)?.affine(1.0, 0.5)?)
}

/// Log-softmax over the last dimension.
pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Instance normalization over the whole `(time, channel)` plane of each
/// sequence in a `(B, T, C)` batch, without affine parameters.
pub fn instance_norm_2d(x: &Tensor) -> Result<Tensor> {
    let (b, t, c) = x.dims3()?;
    let flat = x.reshape((b, t * c))?;
    let mean = flat.mean_keepdim(1)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(1)?;
    let normed = centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
    Ok(normed.reshape((b, t, c))?)
}

/// Dense layer applied over the last dimension.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut SeededRng) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        Ok(Self {
            weight: ps.uniform(format!("{name}.weight"), (input, output), bound, rng)?,
            bias: ps.uniform(format!("{name}.bias"), output, bound, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.weight)?.broadcast_add(&self.bias)?)
    }

    pub fn output_dim(&self) -> usize {
        self.bias.dims1().unwrap_or(0)
    }
}

/// 1-D convolution over time for `(B, T, C)` inputs, stride 1.
///
/// Implemented as zero-padding, a concatenation of `kernel` shifted views and one
/// matmul, so the backward pass only involves matmul and slicing.
#[derive(Debug, Clone)]
pub struct Conv1d {
    /// `(kernel, input, output)`
    weight: Tensor,
    bias: Tensor,
    kernel: usize,
    padding: usize,
}

impl Conv1d {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        padding: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let bound = 1.0 / ((input * kernel) as f64).sqrt();
        Ok(Self {
            weight: ps.uniform(format!("{name}.weight"), (kernel, input, output), bound, rng)?,
            bias: ps.uniform(format!("{name}.bias"), output, bound, rng)?,
            kernel,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, t, c) = x.dims3()?;
        let out_len = (t + 2 * self.padding + 1)
            .checked_sub(self.kernel)
            .filter(|&n| n > 0)
            .ok_or_else(|| invalid!("conv input of {t} frames is shorter than kernel {}", self.kernel))?;
        let padded = x.pad_with_zeros(1, self.padding, self.padding)?;
        let taps = (0..self.kernel)
            .map(|j| padded.narrow(1, j, out_len))
            .collect::<candle_core::Result<Vec<_>>>()?;
        let unfolded = Tensor::cat(&taps, 2)?;
        let w = self.weight.reshape((self.kernel * c, ()))?;
        Ok(unfolded.broadcast_matmul(&w)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    table: Tensor,
}

impl Embedding {
    pub fn new(ps: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            table: ps.uniform(format!("{name}.table"), (vocab, dim), 1.0, rng)?,
        })
    }

    /// `ids` is a `(B, T)` u32 tensor; returns `(B, T, dim)`.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let (b, t) = ids.dims2()?;
        let rows = self.table.index_select(&ids.flatten_all()?, 0)?;
        Ok(rows.reshape((b, t, ()))?)
    }

    pub fn vocab_size(&self) -> usize {
        self.table.dims()[0]
    }
}

/// Single-direction LSTM layer.
#[derive(Debug, Clone)]
pub struct Lstm {
    w_ih: Tensor,
    w_hh: Tensor,
    bias: Tensor,
    hidden: usize,
}

impl Lstm {
    pub fn new(ps: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut SeededRng) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            w_ih: ps.uniform(format!("{name}.w_ih"), (input, 4 * hidden), bound, rng)?,
            w_hh: ps.uniform(format!("{name}.w_hh"), (hidden, 4 * hidden), bound, rng)?,
            bias: ps.uniform(format!("{name}.bias"), 4 * hidden, bound, rng)?,
            hidden,
        })
    }

    fn project(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.w_ih)?.broadcast_add(&self.bias)?)
    }

    /// `(B, T, I) -> (B, T, H)`; `reverse` runs from the last frame to the first.
    pub fn forward(&self, x: &Tensor, reverse: bool) -> Result<Tensor> {
        let x = if reverse { reverse_time(x)? } else { x.clone() };
        let out = run_cells(&self.project(&x)?.unsqueeze(0)?, &self.w_hh.unsqueeze(0)?, self.hidden)?.squeeze(0)?;
        if reverse {
            reverse_time(&out)
        } else {
            Ok(out)
        }
    }
}

/// Per-step slices along `dim`, squeezed.
///
/// The gradient of a narrow is materialized at the full source size, so slicing one
/// step at a time would make the backward pass quadratic in length. Halving recursively
/// keeps it at `O(T log T)`.
fn split_steps(x: &Tensor, dim: usize) -> Result<Vec<Tensor>> {
    fn go(x: &Tensor, dim: usize, out: &mut Vec<Tensor>) -> Result<()> {
        let n = x.dims()[dim];
        if n == 1 {
            out.push(x.squeeze(dim)?);
            return Ok(());
        }
        let half = n / 2;
        go(&x.narrow(dim, 0, half)?, dim, out)?;
        go(&x.narrow(dim, half, n - half)?, dim, out)
    }
    let mut out = Vec::with_capacity(x.dims()[dim]);
    go(x, dim, &mut out)?;
    Ok(out)
}

fn reverse_time(x: &Tensor) -> Result<Tensor> {
    let t = x.dims()[1];
    let idx = Tensor::from_vec((0..t as u32).rev().collect::<Vec<_>>(), t, x.device())?;
    Ok(x.index_select(&idx, 1)?)
}

/// LSTM recurrences for `D` independent cells run in lockstep.
///
/// `projected` is `(D, B, T, 4H)` with gates ordered input, forget, output, cell;
/// `w_hh` is `(D, H, 4H)`. Returns `(D, B, T, H)`.
fn run_cells(projected: &Tensor, w_hh: &Tensor, h_dim: usize) -> Result<Tensor> {
    let (d, b, t, _) = projected.dims4()?;
    let mut h = Tensor::zeros((d, b, h_dim), projected.dtype(), projected.device())?;
    let mut c = h.clone();
    let mut outputs = Vec::with_capacity(t);
    for x in split_steps(projected, 2)? {
        let gates = (x + h.matmul(w_hh)?)?;
        let ifo = sigmoid(&gates.narrow(2, 0, 3 * h_dim)?)?;
        let g = gates.narrow(2, 3 * h_dim, h_dim)?.tanh()?;
        c = ((ifo.narrow(2, h_dim, h_dim)? * &c)? + (ifo.narrow(2, 0, h_dim)? * g)?)?;
        h = (ifo.narrow(2, 2 * h_dim, h_dim)? * c.tanh()?)?;
        outputs.push(h.clone());
    }
    Ok(Tensor::stack(&outputs, 2)?)
}

/// Stack of bidirectional LSTM layers; output width is `2 * hidden`.
///
/// Both directions of a layer advance together in one batched recurrence.
#[derive(Debug, Clone)]
pub struct BiLstm {
    layers: Vec<(Lstm, Lstm)>,
}

impl BiLstm {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let in_dim = if l == 0 { input } else { 2 * hidden };
            let fwd = Lstm::new(ps, &format!("{name}.l{l}.fwd"), in_dim, hidden, rng)?;
            let bwd = Lstm::new(ps, &format!("{name}.l{l}.bwd"), in_dim, hidden, rng)?;
            layers.push((fwd, bwd));
        }
        Ok(Self { layers })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (fwd, bwd) in &self.layers {
            let projected = Tensor::stack(&[fwd.project(&h)?, bwd.project(&reverse_time(&h)?)?], 0)?;
            let w_hh = Tensor::stack(&[&fwd.w_hh, &bwd.w_hh], 0)?;
            let out = run_cells(&projected, &w_hh, fwd.hidden)?;
            h = Tensor::cat(&[out.get(0)?, reverse_time(&out.get(1)?)?], 2)?;
        }
        Ok(h)
    }
}

/// Elman RNN layer with tanh activation.
#[derive(Debug, Clone)]
pub struct VanillaRnn {
    w_ih: Tensor,
    w_hh: Tensor,
    bias: Tensor,
    hidden: usize,
}

impl VanillaRnn {
    pub fn new(ps: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut SeededRng) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            w_ih: ps.uniform(format!("{name}.w_ih"), (input, hidden), bound, rng)?,
            w_hh: ps.uniform(format!("{name}.w_hh"), (hidden, hidden), bound, rng)?,
            bias: ps.uniform(format!("{name}.bias"), hidden, bound, rng)?,
            hidden,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let projected = x.broadcast_matmul(&self.w_ih)?.broadcast_add(&self.bias)?;
        let mut h = Tensor::zeros((b, self.hidden), x.dtype(), x.device())?;
        let mut outputs = Vec::with_capacity(t);
        for x in split_steps(&projected, 1)? {
            h = (x + h.matmul(&self.w_hh)?)?.tanh()?;
            outputs.push(h.clone());
        }
        Ok(Tensor::stack(&outputs, 1)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.constant(format!("{name}.gamma"), dim, 1.0)?,
            beta: ps.constant(format!("{name}.beta"), dim, 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Multi-head self-attention with separate key/value widths.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    heads: usize,
    key_dim: usize,
    value_dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        model_dim: usize,
        key_dim: usize,
        value_dim: usize,
        heads: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            query: Linear::new(ps, &format!("{name}.q"), model_dim, key_dim, rng)?,
            key: Linear::new(ps, &format!("{name}.k"), model_dim, key_dim, rng)?,
            value: Linear::new(ps, &format!("{name}.v"), model_dim, value_dim, rng)?,
            output: Linear::new(ps, &format!("{name}.o"), value_dim, model_dim, rng)?,
            heads,
            key_dim,
            value_dim,
        })
    }

    /// `key_bias` is `(B, 1, 1, N)`: 0 for real positions, a large negative value for padding.
    pub fn forward(&self, x: &Tensor, key_bias: Option<&Tensor>) -> Result<Tensor> {
        let (b, n, _) = x.dims3()?;
        let dk = self.key_dim / self.heads;
        let dv = self.value_dim / self.heads;
        let split = |t: Tensor, d: usize| -> Result<Tensor> {
            Ok(t.reshape((b, n, self.heads, d))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.query.forward(x)?, dk)?;
        let k = split(self.key.forward(x)?, dk)?;
        let v = split(self.value.forward(x)?, dv)?;
        let mut scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (dk as f64).sqrt())?;
        if let Some(bias) = key_bias {
            scores = scores.broadcast_add(bias)?;
        }
        let attn = log_softmax(&scores)?.exp()?;
        let ctx = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, n, self.value_dim))?;
        self.output.forward(&ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{device, to_vec};

    #[test]
    fn softplus_is_positive_and_matches_closed_form() {
        let x = Tensor::new(&[-800.0f64, -3.0, 0.0, 2.5, 800.0], &device()).unwrap();
        let y = to_vec(&softplus(&x).unwrap()).unwrap();
        assert!(y.iter().all(|&v| v >= 0.0 && v.is_finite()));
        assert!((y[2] - 2f64.ln()).abs() < 1e-15);
        assert!((y[3] - (1.0 + 2.5f64.exp()).ln()).abs() < 1e-12);
        assert_eq!(y[4], 800.0);
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0], [100.0, 100.0, -50.0]], &device()).unwrap();
        let y = log_softmax(&x).unwrap();
        for row in to_vec(&y.exp().unwrap().sum(1).unwrap()).unwrap() {
            assert!((row - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn recurrent_layers_preserve_length() {
        let mut ps = ParamStore::new();
        let mut rng = SeededRng::new(0);
        let bi = BiLstm::new(&mut ps, "bi", 3, 4, 2, &mut rng).unwrap();
        let rnn = VanillaRnn::new(&mut ps, "rnn", 8, 5, &mut rng).unwrap();
        let x = Tensor::new(rng.normals(2 * 7 * 3), &device()).unwrap().reshape((2, 7, 3)).unwrap();
        let h = bi.forward(&x).unwrap();
        assert_eq!(h.dims(), &[2, 7, 8]);
        assert_eq!(rnn.forward(&h).unwrap().dims(), &[2, 7, 5]);
    }

    #[test]
    fn lstm_matches_scalar_recurrence() {
        let mut ps = ParamStore::new();
        let mut rng = SeededRng::new(3);
        let lstm = Lstm::new(&mut ps, "l", 1, 1, &mut rng).unwrap();
        let w = |n: &str| to_vec(ps.get(n).unwrap().as_tensor()).unwrap();
        let (wi, wh, bias) = (w("l.w_ih"), w("l.w_hh"), w("l.bias"));
        let xs = [0.3, -1.2, 0.7];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let run = |order: &[usize]| {
            let (mut h, mut c) = (0.0, 0.0);
            let mut out = [0.0; 3];
            for &t in order {
                let z: Vec<f64> = (0..4).map(|k| xs[t] * wi[k] + h * wh[k] + bias[k]).collect();
                c = sig(z[1]) * c + sig(z[0]) * z[3].tanh();
                h = sig(z[2]) * c.tanh();
                out[t] = h;
            }
            out
        };
        let x = Tensor::new(&xs, &device()).unwrap().reshape((1, 3, 1)).unwrap();
        for (reverse, order) in [(false, [0, 1, 2]), (true, [2, 1, 0])] {
            let got = to_vec(&lstm.forward(&x, reverse).unwrap()).unwrap();
            for (a, b) in got.iter().zip(run(&order)) {
                assert!((a - b).abs() < 1e-14, "{got:?}");
            }
        }
    }

    #[test]
    fn bidirectional_lockstep_matches_separate_directions() {
        let mut ps = ParamStore::new();
        let mut rng = SeededRng::new(5);
        let bi = BiLstm::new(&mut ps, "bi", 3, 4, 1, &mut rng).unwrap();
        let x = Tensor::new(rng.normals(2 * 6 * 3), &device()).unwrap().reshape((2, 6, 3)).unwrap();
        let (fwd, bwd) = &bi.layers[0];
        let separate = Tensor::cat(&[fwd.forward(&x, false).unwrap(), bwd.forward(&x, true).unwrap()], 2).unwrap();
        let joint = bi.forward(&x).unwrap();
        for (a, b) in to_vec(&joint).unwrap().iter().zip(to_vec(&separate).unwrap()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn conv_keeps_time_length_with_matching_padding() {
        let mut ps = ParamStore::new();
        let mut rng = SeededRng::new(0);
        let conv = Conv1d::new(&mut ps, "c", 3, 6, 5, 2, &mut rng).unwrap();
        for t in [1, 4, 100] {
            let x = Tensor::zeros((2, t, 3), crate::nn::DTYPE, &device()).unwrap();
            assert_eq!(conv.forward(&x).unwrap().dims(), &[2, t, 6]);
        }
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut ps = ParamStore::new();
        let mut rng = SeededRng::new(2);
        let conv = Conv1d::new(&mut ps, "c", 2, 3, 3, 1, &mut rng).unwrap();
        let x = Tensor::from_vec(rng.normals(1 * 4 * 2), (1, 4, 2), &device()).unwrap();
        let y = crate::nn::to_vec(&conv.forward(&x).unwrap()).unwrap();
        let xv = crate::nn::to_vec(&x).unwrap();
        let w = crate::nn::to_vec(ps.get("c.weight").unwrap().as_tensor()).unwrap();
        let b = crate::nn::to_vec(ps.get("c.bias").unwrap().as_tensor()).unwrap();
        for t in 0..4 {
            for o in 0..3 {
                let mut acc = b[o];
                for j in 0..3 {
                    let src = t as isize + j as isize - 1;
                    if (0..4).contains(&src) {
                        for c in 0..2 {
                            acc += xv[src as usize * 2 + c] * w[(j * 2 + c) * 3 + o];
                        }
                    }
                }
                assert!((y[t * 3 + o] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_ignores_padded_keys() {
        let mut ps = ParamStore::new();
        let mut rng = SeededRng::new(1);
        let mha = MultiHeadAttention::new(&mut ps, "a", 8, 4, 4, 2, &mut rng).unwrap();
        let x = Tensor::new(rng.normals(5 * 8), &device()).unwrap().reshape((1, 5, 8)).unwrap();
        let bias = Tensor::new(&[0.0f64, 0.0, 0.0, -1e9, -1e9], &device()).unwrap().reshape((1, 1, 1, 5)).unwrap();
        let full = mha.forward(&x, Some(&bias)).unwrap().narrow(1, 0, 3).unwrap();
        let short = mha.forward(&x.narrow(1, 0, 3).unwrap(), None).unwrap();
        let diff = (full - short).unwrap().abs().unwrap().max_all().unwrap();
        assert!(crate::nn::scalar(&diff).unwrap() < 1e-12);
    }
}
