//! The keypose-to-keypose recurrent classifier.
//!
//! Three stacked gated-recurrent cells followed by an affine head that
//! emits `K` label logits and 5 duration logits. The input at each step
//! is a label distribution concatenated with a duration distribution
//! (`K + 5` values). Forward, backward (full backpropagation through
//! time) and the optimizer are implemented directly on a flat `f64`
//! parameter vector; everything runs in double precision so gradient
//! checks against finite differences are tight.

mod adam;
mod train;

pub use adam::{adam_step, AdamState};
pub use train::{
    next_label_accuracy, train, training_window_run, EpochStats, SchedUnit, StepTarget,
    TrainConfig, TrainData, TrainReport, WindowRun,
};

use crate::cluster::DURATION_CATEGORY_COUNT;
use crate::error::{Error, Result};
use crate::rng::RngState;

pub const GRU_LAYERS: usize = 3;
pub const DEFAULT_HIDDEN_SIZE: usize = 512;

/// Inverse-sigmoid decay for scheduled sampling: the probability of
/// teacher forcing at training index `i` is `k / (k + exp(i / k))`.
pub fn scheduled_sampling_prob(i: u64, k: f64) -> f64 {
    debug_assert!(k > 0.0);
    k / (k + (i as f64 / k).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct TensorSpec {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl TensorSpec {
    fn len(&self) -> usize {
        self.rows * self.cols
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSpec {
    in_dim: usize,
    w_ih: TensorSpec, // 3H x in_dim, rows ordered update, reset, candidate
    w_hh: TensorSpec, // 3H x H
    b_ih: TensorSpec, // 3H
    b_hh: TensorSpec, // 3H
}

#[derive(Debug, Clone)]
struct Layout {
    layers: [LayerSpec; GRU_LAYERS],
    head_w: TensorSpec, // (K+5) x H
    head_b: TensorSpec, // K+5
    total: usize,
}

fn build_layout(k: usize, h: usize) -> Layout {
    let input_dim = k + DURATION_CATEGORY_COUNT;
    let out_dim = k + DURATION_CATEGORY_COUNT;
    let mut offset = 0;
    let mut tensor = |rows: usize, cols: usize| {
        let spec = TensorSpec { offset, rows, cols };
        offset += rows * cols;
        spec
    };
    let layers = std::array::from_fn(|l| {
        let in_dim = if l == 0 { input_dim } else { h };
        LayerSpec {
            in_dim,
            w_ih: tensor(3 * h, in_dim),
            w_hh: tensor(3 * h, h),
            b_ih: tensor(3 * h, 1),
            b_hh: tensor(3 * h, 1),
        }
    });
    let head_w = tensor(out_dim, h);
    let head_b = tensor(out_dim, 1);
    Layout {
        layers,
        head_w,
        head_b,
        total: offset,
    }
}

/// Hidden state of the recurrent stack, one vector per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub layers: Vec<Vec<f64>>,
}

impl HiddenState {
    pub fn zeros(hidden_size: usize) -> Self {
        HiddenState {
            layers: vec![vec![0.0; hidden_size]; GRU_LAYERS],
        }
    }
}

/// One forward step's result: split logits plus the updated hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub label_logits: Vec<f64>,
    pub duration_logits: Vec<f64>,
    pub hidden: HiddenState,
}

#[derive(Debug, Clone)]
pub struct KeyposeNet {
    k: usize,
    hidden_size: usize,
    params: Vec<f64>,
    layout: Layout,
}

impl KeyposeNet {
    /// Fresh network with weights uniform in `±1/sqrt(H)`, biases zero.
    pub fn new(k: usize, hidden_size: usize, rng: &mut RngState) -> Result<Self> {
        if k < 1 || hidden_size < 1 {
            return Err(Error::invalid(
                "network shape",
                format!("k and hidden size must be >= 1, got k={k}, h={hidden_size}"),
            ));
        }
        let layout = build_layout(k, hidden_size);
        let mut params = vec![0.0; layout.total];
        let bound = 1.0 / (hidden_size as f64).sqrt();
        for l in &layout.layers {
            for spec in [l.w_ih, l.w_hh] {
                for p in &mut params[spec.range()] {
                    *p = (2.0 * rng.uniform() - 1.0) * bound;
                }
            }
        }
        for p in &mut params[layout.head_w.range()] {
            *p = (2.0 * rng.uniform() - 1.0) * bound;
        }
        Ok(KeyposeNet {
            k,
            hidden_size,
            params,
            layout,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn input_dim(&self) -> usize {
        self.k + DURATION_CATEGORY_COUNT
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn tensor(&self, spec: TensorSpec) -> &[f64] {
        &self.params[spec.range()]
    }

    /// One step of the stack: token in, logits and new hidden out.
    pub fn forward_step(&self, input: &[f64], hidden: &HiddenState) -> Result<StepOutput> {
        if input.len() != self.input_dim() {
            return Err(Error::invalid(
                "input token",
                format!("expected {} values, got {}", self.input_dim(), input.len()),
            ));
        }
        let trace = self.forward_trace(input, hidden);
        Ok(StepOutput {
            label_logits: trace.logits[..self.k].to_vec(),
            duration_logits: trace.logits[self.k..].to_vec(),
            hidden: HiddenState {
                layers: trace.h.to_vec(),
            },
        })
    }

    fn forward_trace(&self, input: &[f64], hidden: &HiddenState) -> StepTrace {
        let h = self.hidden_size;
        let mut z = [(); GRU_LAYERS].map(|_| vec![0.0; h]);
        let mut r = [(); GRU_LAYERS].map(|_| vec![0.0; h]);
        let mut n = [(); GRU_LAYERS].map(|_| vec![0.0; h]);
        let mut hn = [(); GRU_LAYERS].map(|_| vec![0.0; h]);
        let mut hout = [(); GRU_LAYERS].map(|_| vec![0.0; h]);

        let mut x: Vec<f64> = input.to_vec();
        for (l, spec) in self.layout.layers.iter().enumerate() {
            let h_prev = &hidden.layers[l];
            let mut a_ih = vec![0.0; 3 * h];
            let mut a_hh = vec![0.0; 3 * h];
            matvec(self.tensor(spec.w_ih), 3 * h, spec.in_dim, &x, &mut a_ih);
            add_assign(&mut a_ih, self.tensor(spec.b_ih));
            matvec(self.tensor(spec.w_hh), 3 * h, h, h_prev, &mut a_hh);
            add_assign(&mut a_hh, self.tensor(spec.b_hh));

            for i in 0..h {
                z[l][i] = sigmoid(a_ih[i] + a_hh[i]);
                r[l][i] = sigmoid(a_ih[h + i] + a_hh[h + i]);
                hn[l][i] = a_hh[2 * h + i];
                n[l][i] = (a_ih[2 * h + i] + r[l][i] * hn[l][i]).tanh();
                hout[l][i] = (1.0 - z[l][i]) * n[l][i] + z[l][i] * h_prev[i];
            }
            x = hout[l].clone();
        }

        let out_dim = self.k + DURATION_CATEGORY_COUNT;
        let mut logits = vec![0.0; out_dim];
        matvec(
            self.tensor(self.layout.head_w),
            out_dim,
            h,
            &hout[GRU_LAYERS - 1],
            &mut logits,
        );
        add_assign(&mut logits, self.tensor(self.layout.head_b));

        StepTrace {
            token: input.to_vec(),
            z,
            r,
            n,
            hn,
            h: hout,
            logits,
        }
    }
}

/// Everything the backward pass needs about one forward step.
pub(crate) struct StepTrace {
    pub(crate) token: Vec<f64>,
    z: [Vec<f64>; GRU_LAYERS],
    r: [Vec<f64>; GRU_LAYERS],
    n: [Vec<f64>; GRU_LAYERS],
    hn: [Vec<f64>; GRU_LAYERS],
    pub(crate) h: [Vec<f64>; GRU_LAYERS],
    pub(crate) logits: Vec<f64>,
}

/// Incremental unroll with cached traces; drives both training and the
/// public gradient entry points.
pub(crate) struct Unroller<'n> {
    net: &'n KeyposeNet,
    pub(crate) traces: Vec<StepTrace>,
}

impl<'n> Unroller<'n> {
    pub(crate) fn new(net: &'n KeyposeNet) -> Self {
        Unroller {
            net,
            traces: Vec::new(),
        }
    }

    pub(crate) fn hidden(&self) -> HiddenState {
        match self.traces.last() {
            Some(t) => HiddenState {
                layers: t.h.to_vec(),
            },
            None => HiddenState::zeros(self.net.hidden_size),
        }
    }

    pub(crate) fn step(&mut self, token: &[f64]) -> &StepTrace {
        let hidden = self.hidden();
        let trace = self.net.forward_trace(token, &hidden);
        self.traces.push(trace);
        self.traces.last().unwrap()
    }

    /// Cross-entropy loss over the supervised steps plus BPTT gradients
    /// for every parameter. `targets[t]` is `None` on unsupervised steps.
    /// The two cross-entropy terms are averaged over supervised steps and
    /// weighted by `w_labels` / `w_dur`.
    pub(crate) fn loss_and_backward(
        &self,
        targets: &[Option<train::StepTarget>],
        w_labels: f64,
        w_dur: f64,
    ) -> (f64, Vec<f64>) {
        let net = self.net;
        let k = net.k;
        let h = net.hidden_size;
        let steps = self.traces.len();
        debug_assert_eq!(targets.len(), steps);
        let supervised = targets.iter().flatten().count().max(1) as f64;

        let mut grads = vec![0.0; net.params.len()];
        let mut loss = 0.0;

        // gradient flowing into each layer's hidden output at step t+1
        let mut dh_next = vec![vec![0.0; h]; GRU_LAYERS];

        for t in (0..steps).rev() {
            let trace = &self.traces[t];
            let mut dh: Vec<Vec<f64>> = dh_next.clone();

            if let Some(target) = &targets[t] {
                let (label_probs, label_ce) = softmax_ce(&trace.logits[..k], target.label);
                let (dur_probs, dur_ce) = softmax_ce(&trace.logits[k..], target.duration.index());
                loss += (w_labels * label_ce + w_dur * dur_ce) / supervised;

                let mut dlogits = vec![0.0; trace.logits.len()];
                for i in 0..k {
                    dlogits[i] = w_labels / supervised
                        * (label_probs[i] - if i == target.label { 1.0 } else { 0.0 });
                }
                for i in 0..DURATION_CATEGORY_COUNT {
                    dlogits[k + i] = w_dur / supervised
                        * (dur_probs[i]
                            - if i == target.duration.index() {
                                1.0
                            } else {
                                0.0
                            });
                }

                // head: logits = W h_top + b
                let head_w = net.layout.head_w;
                let head_b = net.layout.head_b;
                let h_top = &trace.h[GRU_LAYERS - 1];
                outer_acc(&mut grads[head_w.range()], &dlogits, h_top);
                add_assign(&mut grads[head_b.range()], &dlogits);
                matvec_t_acc(
                    net.tensor(head_w),
                    head_w.rows,
                    head_w.cols,
                    &dlogits,
                    &mut dh[GRU_LAYERS - 1],
                );
            }

            for l in (0..GRU_LAYERS).rev() {
                let spec = net.layout.layers[l];
                let g = &dh[l];
                let zero_h;
                let h_prev: &[f64] = if t > 0 {
                    &self.traces[t - 1].h[l]
                } else {
                    zero_h = vec![0.0; h];
                    &zero_h
                };
                let x: &[f64] = if l == 0 {
                    &trace.token
                } else {
                    &trace.h[l - 1]
                };

                let z = &trace.z[l];
                let r = &trace.r[l];
                let n = &trace.n[l];
                let hn = &trace.hn[l];

                let mut dzpre = vec![0.0; h];
                let mut drpre = vec![0.0; h];
                let mut dnpre = vec![0.0; h];
                let mut dhn = vec![0.0; h];
                let mut dh_prev = vec![0.0; h];
                for i in 0..h {
                    let dz = g[i] * (h_prev[i] - n[i]);
                    let dn = g[i] * (1.0 - z[i]);
                    dnpre[i] = dn * (1.0 - n[i] * n[i]);
                    dhn[i] = dnpre[i] * r[i];
                    let dr = dnpre[i] * hn[i];
                    drpre[i] = dr * r[i] * (1.0 - r[i]);
                    dzpre[i] = dz * z[i] * (1.0 - z[i]);
                    dh_prev[i] = g[i] * z[i];
                }

                // pre-activation gradients stacked gate-major, matching
                // the parameter row order [update; reset; candidate]
                let mut dih = Vec::with_capacity(3 * h);
                dih.extend_from_slice(&dzpre);
                dih.extend_from_slice(&drpre);
                dih.extend_from_slice(&dnpre);
                let mut dhh = Vec::with_capacity(3 * h);
                dhh.extend_from_slice(&dzpre);
                dhh.extend_from_slice(&drpre);
                dhh.extend_from_slice(&dhn);

                outer_acc(&mut grads[spec.w_ih.range()], &dih, x);
                add_assign(&mut grads[spec.b_ih.range()], &dih);
                outer_acc(&mut grads[spec.w_hh.range()], &dhh, h_prev);
                add_assign(&mut grads[spec.b_hh.range()], &dhh);

                matvec_t_acc(net.tensor(spec.w_hh), 3 * h, h, &dhh, &mut dh_prev);
                dh_next[l] = dh_prev;

                if l > 0 {
                    let mut dx = vec![0.0; spec.in_dim];
                    matvec_t_acc(net.tensor(spec.w_ih), 3 * h, spec.in_dim, &dih, &mut dx);
                    add_assign(&mut dh[l - 1], &dx);
                }
            }
        }

        (loss, grads)
    }
}

/// Forward a fixed token window; convenience for inspection and tests.
pub fn forward_window(net: &KeyposeNet, tokens: &[Vec<f64>]) -> Result<Vec<StepOutput>> {
    let mut hidden = HiddenState::zeros(net.hidden_size());
    let mut out = Vec::with_capacity(tokens.len());
    for token in tokens {
        let step = net.forward_step(token, &hidden)?;
        hidden = step.hidden.clone();
        out.push(step);
    }
    Ok(out)
}

/// Loss and full BPTT gradient over a fixed token window. The gradient
/// vector is laid out like [`KeyposeNet::params`].
pub fn window_loss_with_grads(
    net: &KeyposeNet,
    tokens: &[Vec<f64>],
    targets: &[Option<train::StepTarget>],
    w_labels: f64,
    w_dur: f64,
) -> Result<(f64, Vec<f64>)> {
    if tokens.len() != targets.len() {
        return Err(Error::invalid(
            "window",
            format!("{} tokens vs {} targets", tokens.len(), targets.len()),
        ));
    }
    let mut unroller = Unroller::new(net);
    for token in tokens {
        if token.len() != net.input_dim() {
            return Err(Error::invalid(
                "input token",
                format!("expected {} values, got {}", net.input_dim(), token.len()),
            ));
        }
        unroller.step(token);
    }
    Ok(unroller.loss_and_backward(targets, w_labels, w_dur))
}

/// Mean cross-entropy pieces of a finished window, computed from outputs
/// alone (no gradients).
pub fn sequence_loss(
    outputs: &[StepOutput],
    targets: &[Option<train::StepTarget>],
    w_labels: f64,
    w_dur: f64,
) -> f64 {
    let supervised = targets.iter().flatten().count().max(1) as f64;
    let mut loss = 0.0;
    for (out, target) in outputs.iter().zip(targets.iter()) {
        if let Some(t) = target {
            let (_, label_ce) = softmax_ce(&out.label_logits, t.label);
            let (_, dur_ce) = softmax_ce(&out.duration_logits, t.duration.index());
            loss += (w_labels * label_ce + w_dur * dur_ce) / supervised;
        }
    }
    loss
}

/// Stable softmax plus cross-entropy against a class index.
fn softmax_ce(logits: &[f64], target: usize) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    let ce = sum.ln() - (logits[target] - max);
    (probs, ce)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn add_assign(out: &mut [f64], rhs: &[f64]) {
    debug_assert_eq!(out.len(), rhs.len());
    for (o, r) in out.iter_mut().zip(rhs.iter()) {
        *o += r;
    }
}

/// `out = W x` for row-major `W`.
fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (row, o) in out.iter_mut().enumerate() {
        let base = row * cols;
        let mut acc = 0.0;
        for c in 0..cols {
            acc += w[base + c] * x[c];
        }
        *o = acc;
    }
}

/// `out += W^T v` for row-major `W`.
fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(v.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for row in 0..rows {
        let base = row * cols;
        let vr = v[row];
        for c in 0..cols {
            out[c] += w[base + c] * vr;
        }
    }
}

/// `W += v x^T` accumulated into a row-major gradient buffer.
fn outer_acc(w: &mut [f64], v: &[f64], x: &[f64]) {
    debug_assert_eq!(w.len(), v.len() * x.len());
    for (row, &vr) in v.iter().enumerate() {
        let base = row * x.len();
        for (c, &xc) in x.iter().enumerate() {
            w[base + c] += vr * xc;
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints (.kpn): versioned decimal text.

use std::path::Path;

pub(crate) const KPN_MAGIC: &str = "KPNET v1";

pub fn save_checkpoint(net: &KeyposeNet, path: impl AsRef<Path>) -> Result<()> {
    let mut body = format!(
        "{KPN_MAGIC}\nk {}\nh {}\nlayers {GRU_LAYERS}\nparams {}\n",
        net.k,
        net.hidden_size,
        net.params.len()
    );
    for p in &net.params {
        body.push_str(&p.to_string());
        body.push('\n');
    }
    crate::io::write_atomic(path.as_ref(), body.as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<KeyposeNet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, magic) = lines.next().unwrap_or((0, ""));
    if magic != KPN_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: KPN_MAGIC.into(),
        });
    }
    let mut header = |key: &str| -> Result<usize> {
        let (idx, line) = lines.next().unwrap_or((0, ""));
        line.strip_prefix(key)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: format!("expected `{key}<count>`"),
            })
    };
    let k = header("k ")?;
    let h = header("h ")?;
    let layers = header("layers ")?;
    let n_params = header("params ")?;
    if layers != GRU_LAYERS {
        return Err(Error::invalid(
            "checkpoint",
            format!("expected {GRU_LAYERS} layers, file has {layers}"),
        ));
    }
    let layout = build_layout(k, h);
    if n_params != layout.total {
        return Err(Error::invalid(
            "checkpoint",
            format!(
                "expected {} params for k={k}, h={h}; file says {n_params}",
                layout.total
            ),
        ));
    }
    let mut params = Vec::with_capacity(n_params);
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        params.push(line.parse::<f64>().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: format!("malformed parameter {line:?}"),
        })?);
    }
    if params.len() != n_params {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 5,
            msg: format!("expected {n_params} parameters, found {}", params.len()),
        });
    }
    Ok(KeyposeNet {
        k,
        hidden_size: h,
        params,
        layout,
    })
}
