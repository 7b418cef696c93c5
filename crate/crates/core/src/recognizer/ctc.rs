//! Connectionist temporal classification: the training loss (with an analytic
//! backward pass) and best-path decoding.

use candle_core::{CpuStorage, CustomOp1, DType, Layout, Shape, Tensor};

use crate::corpus::Alphabet;
use crate::error::{Error, Result};

/// Per-frame class scores of one image, `frames x classes`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLogits {
    frames: usize,
    classes: usize,
    values: Vec<f32>,
}

impl FrameLogits {
    pub fn new(frames: usize, classes: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != frames * classes {
            return Err(Error::shape(format!("{frames}x{classes}"), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frame logits"));
        }
        Ok(FrameLogits {
            frames,
            classes,
            values,
        })
    }

    /// Splits a `(B, T, C)` tensor into per-image logits.
    pub fn from_batch(t: &Tensor) -> Result<Vec<Self>> {
        let (b, frames, classes) = t.dims3()?;
        let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        flat.chunks_exact(frames * classes)
            .take(b)
            .map(|c| FrameLogits::new(frames, classes, c.to_vec()))
            .collect()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.classes..(t + 1) * self.classes]
    }

    /// Per-frame argmax; ties resolve to the lowest class index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.frames)
            .map(|t| {
                let row = self.frame(t);
                let mut best = 0;
                for (k, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Collapses runs of equal labels, then removes blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Best-path decoding.
pub fn decode_greedy(logits: &FrameLogits, alphabet: &Alphabet) -> String {
    alphabet.decode(&collapse(&logits.argmax(), alphabet.blank()))
}

/// Mean CTC negative log-likelihood of `targets` under `logits` `(B, T, C)`.
///
/// Logits are unnormalized; the log-softmax is folded into the op so the
/// backward pass is the closed-form `softmax - posterior` gradient.
pub fn ctc_loss(logits: &Tensor, targets: &[Vec<usize>], blank: usize) -> Result<Tensor> {
    let (b, frames, classes) = logits.dims3()?;
    if targets.len() != b {
        return Err(Error::shape(format!("{b} targets"), targets.len()));
    }
    for tgt in targets {
        if let Some(&bad) = tgt.iter().find(|&&k| k >= classes || k == blank) {
            return Err(Error::InvalidArgument(format!(
                "invalid target label {bad}"
            )));
        }
        let repeats = tgt.windows(2).filter(|w| w[0] == w[1]).count();
        if tgt.len() + repeats > frames {
            return Err(Error::InvalidArgument(format!(
                "target of length {} cannot align to {frames} frames",
                tgt.len()
            )));
        }
    }
    let op = CtcLoss {
        targets: targets.to_vec(),
        blank,
    };
    Ok(logits.contiguous()?.apply_op1(op)?.mean_all()?)
}

struct CtcLoss {
    targets: Vec<Vec<usize>>,
    blank: usize,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_softmax_rows(x: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(classes) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    out
}

/// Log-space forward and backward variables for one sequence.
struct Lattice {
    labels: Vec<usize>,
    /// `alpha[t][s]`: paths through `s` at `t`, emission at `t` included.
    alpha: Vec<Vec<f64>>,
    /// `beta[t][s]`: completions from `s` at `t`, emission at `t` excluded.
    beta: Vec<Vec<f64>>,
    log_likelihood: f64,
}

fn lattice(logp: &[f64], frames: usize, classes: usize, target: &[usize], blank: usize) -> Lattice {
    let mut labels = Vec::with_capacity(2 * target.len() + 1);
    labels.push(blank);
    for &k in target {
        labels.push(k);
        labels.push(blank);
    }
    let s_len = labels.len();
    let emit = |t: usize, s: usize| logp[t * classes + labels[s]];
    let can_skip = |s: usize| s >= 2 && labels[s] != blank && labels[s] != labels[s - 2];

    let mut alpha = vec![vec![f64::NEG_INFINITY; s_len]; frames];
    alpha[0][0] = emit(0, 0);
    if s_len > 1 {
        alpha[0][1] = emit(0, 1);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let mut acc = alpha[t - 1][s];
            if s >= 1 {
                acc = log_add(acc, alpha[t - 1][s - 1]);
            }
            if can_skip(s) {
                acc = log_add(acc, alpha[t - 1][s - 2]);
            }
            alpha[t][s] = if acc == f64::NEG_INFINITY {
                acc
            } else {
                acc + emit(t, s)
            };
        }
    }

    let mut beta = vec![vec![f64::NEG_INFINITY; s_len]; frames];
    beta[frames - 1][s_len - 1] = 0.0;
    if s_len > 1 {
        beta[frames - 1][s_len - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[t + 1][s] + emit(t + 1, s);
            if s + 1 < s_len {
                acc = log_add(acc, beta[t + 1][s + 1] + emit(t + 1, s + 1));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = log_add(acc, beta[t + 1][s + 2] + emit(t + 1, s + 2));
            }
            beta[t][s] = acc;
        }
    }

    let last = &alpha[frames - 1];
    let log_likelihood = if s_len > 1 {
        log_add(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    };
    Lattice {
        labels,
        alpha,
        beta,
        log_likelihood,
    }
}

impl CtcLoss {
    fn losses(&self, x: &[f64], frames: usize, classes: usize) -> Vec<f64> {
        self.targets
            .iter()
            .enumerate()
            .map(|(i, tgt)| {
                let chunk = &x[i * frames * classes..(i + 1) * frames * classes];
                let logp = log_softmax_rows(chunk, classes);
                -lattice(&logp, frames, classes, tgt, self.blank).log_likelihood
            })
            .collect()
    }

    fn gradients(&self, x: &[f64], frames: usize, classes: usize) -> Vec<f64> {
        let mut grad = vec![0.0; x.len()];
        for (i, tgt) in self.targets.iter().enumerate() {
            let off = i * frames * classes;
            let logp = log_softmax_rows(&x[off..off + frames * classes], classes);
            let lat = lattice(&logp, frames, classes, tgt, self.blank);
            let ll = lat.log_likelihood;
            for t in 0..frames {
                let mut occupancy = vec![f64::NEG_INFINITY; classes];
                for (s, &k) in lat.labels.iter().enumerate() {
                    occupancy[k] = log_add(occupancy[k], lat.alpha[t][s] + lat.beta[t][s]);
                }
                for k in 0..classes {
                    grad[off + t * classes + k] =
                        logp[t * classes + k].exp() - (occupancy[k] - ll).exp();
                }
            }
        }
        grad
    }
}

fn contiguous_f64(storage: &CpuStorage, layout: &Layout) -> candle_core::Result<Vec<f64>> {
    let (start, end) = match layout.contiguous_offsets() {
        Some(o) => o,
        None => candle_core::bail!("ctc loss expects contiguous logits"),
    };
    Ok(match storage {
        CpuStorage::F32(v) => v[start..end].iter().map(|&x| x as f64).collect(),
        CpuStorage::F64(v) => v[start..end].to_vec(),
        _ => candle_core::bail!("ctc loss supports f32 and f64 logits"),
    })
}

impl CustomOp1 for CtcLoss {
    fn name(&self) -> &'static str {
        "ctc-loss"
    }

    fn cpu_fwd(
        &self,
        storage: &CpuStorage,
        layout: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (b, frames, classes) = layout.shape().dims3()?;
        let x = contiguous_f64(storage, layout)?;
        let losses = self.losses(&x, frames, classes);
        let out = match storage {
            CpuStorage::F32(_) => CpuStorage::F32(losses.iter().map(|&v| v as f32).collect()),
            _ => CpuStorage::F64(losses),
        };
        Ok((out, Shape::from(b)))
    }

    fn bwd(
        &self,
        arg: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<Option<Tensor>> {
        let (b, frames, classes) = arg.dims3()?;
        let x = arg.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let g = self.gradients(&x, frames, classes);
        let g = Tensor::from_vec(g, (b, frames, classes), arg.device())?.to_dtype(arg.dtype())?;
        let scale = grad_res.reshape((b, 1, 1))?;
        Ok(Some(g.broadcast_mul(&scale)?))
    }
}
