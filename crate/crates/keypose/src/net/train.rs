//! Training: windows over labeled tracks, scheduled sampling between
//! teacher forcing and self-conditioning, optional supervision on the
//! conditioning past, AdamW updates, and validation-based model
//! selection.

use crate::cluster::{
    categorize_duration, ClusterModel, DurationCategory, LabeledKeypose, LabeledTrack,
};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::token::{
    argmax, label_distribution_from_label, label_distribution_from_value,
    label_distribution_from_value_train, DurationDistribution, LabelDistribution,
};

use super::{adam_step, scheduled_sampling_prob, AdamState, KeyposeNet, Unroller};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedUnit {
    /// Scheduled-sampling index counts epochs (default).
    Epoch,
    /// Scheduled-sampling index counts optimizer iterations.
    Iteration,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub w_labels: f64,
    pub w_dur: f64,
    pub obs_keyposes: usize,
    pub pred_keyposes: usize,
    pub sched_k: f64,
    pub sched_unit: SchedUnit,
    pub past_supervision: bool,
    pub train_temperature: f64,
    pub noise_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 0.01,
            batch_size: 64,
            epochs: 100,
            w_labels: 1.0,
            w_dur: 0.1,
            obs_keyposes: 7,
            pred_keyposes: 12,
            sched_k: 10.0,
            sched_unit: SchedUnit::Epoch,
            past_supervision: true,
            train_temperature: 0.03,
            noise_std: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn window_len(&self) -> usize {
        self.obs_keyposes + self.pred_keyposes
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.weight_decay >= 0.0
            && self.batch_size >= 1
            && self.obs_keyposes >= 1
            && self.pred_keyposes >= 1
            && self.sched_k > 0.0
            && self.train_temperature > 0.0
            && self.noise_std >= 0.0;
        if !ok {
            return Err(Error::invalid("train config", "out-of-range field"));
        }
        Ok(())
    }
}

/// Per-step supervision target: the next keypose's label and duration
/// category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepTarget {
    pub label: usize,
    pub duration: DurationCategory,
}

/// Training inputs: the cluster vocabulary plus labeled, pruned tracks.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub cluster_model: &'a ClusterModel,
    pub train: &'a [LabeledTrack],
    pub val: &'a [LabeledTrack],
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub epsilon: f64,
    /// Teacher-forcing coins that came up heads this epoch / coins flipped.
    pub tf_taken: usize,
    pub tf_coins: usize,
    pub val_accuracy: Option<f64>,
}

impl EpochStats {
    pub fn tf_rate(&self) -> Option<f64> {
        (self.tf_coins > 0).then(|| self.tf_taken as f64 / self.tf_coins as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were kept (highest validation accuracy);
    /// `None` when no validation windows existed and the final epoch won.
    pub best_epoch: Option<usize>,
}

/// How one training window was actually fed, for inspection in tests.
#[derive(Debug, Clone)]
pub struct WindowRun {
    pub inputs: Vec<Vec<f64>>,
    /// Per future-input step: `Some(true)` teacher-forced, `Some(false)`
    /// self-conditioned; `None` for observed steps.
    pub teacher_forced: Vec<Option<bool>>,
    /// The `(label, duration)` argmax pair re-tokenized on
    /// self-conditioned steps.
    pub self_conditioned: Vec<Option<(usize, DurationCategory)>>,
    pub loss: f64,
}

fn token_from(label: &LabelDistribution, dur: &DurationDistribution) -> Vec<f64> {
    let mut token = Vec::with_capacity(label.probs.len() + dur.probs.len());
    token.extend_from_slice(&label.probs);
    token.extend_from_slice(&dur.probs);
    token
}

/// Tokenize a keypose whose value is known. The first keypose of a track
/// has duration 0 and is encoded as very-short.
fn value_token(
    kp: &LabeledKeypose,
    model: &ClusterModel,
    temperature: f64,
    noise_std: f64,
    rng: Option<&mut RngState>,
) -> Result<Vec<f64>> {
    let label = match rng {
        Some(rng) if noise_std > 0.0 => label_distribution_from_value_train(
            &kp.keypose.value,
            model,
            temperature,
            noise_std,
            rng,
        )?,
        _ => label_distribution_from_value(&kp.keypose.value, model, temperature)?,
    };
    let category = categorize_duration(kp.duration_frames.max(1))?;
    Ok(token_from(&label, &DurationDistribution::one_hot(category)))
}

/// Tokenize the network's own prediction: argmax label re-expanded via its
/// cluster center, argmax duration category as a one-hot.
pub(crate) fn self_token(
    label_logits: &[f64],
    duration_logits: &[f64],
    model: &ClusterModel,
    temperature: f64,
) -> Result<(Vec<f64>, usize, DurationCategory)> {
    let label = argmax(label_logits);
    let category = DurationCategory::from_index(argmax(duration_logits));
    let dist = label_distribution_from_label(label, model, temperature)?;
    Ok((
        token_from(&dist, &DurationDistribution::one_hot(category)),
        label,
        category,
    ))
}

fn window_targets(window: &[LabeledKeypose], cfg: &TrainConfig) -> Result<Vec<Option<StepTarget>>> {
    let steps = window.len() - 1;
    let mut targets = Vec::with_capacity(steps);
    for (i, kp) in window.iter().enumerate().skip(1) {
        let step = i - 1;
        let supervised = cfg.past_supervision || step >= cfg.obs_keyposes - 1;
        targets.push(if supervised {
            Some(StepTarget {
                label: kp.label,
                duration: categorize_duration(kp.duration_frames)?,
            })
        } else {
            None
        });
    }
    Ok(targets)
}

/// Unroll one window with scheduled sampling and return the loss,
/// gradients and a record of what was fed.
fn run_window(
    net: &KeyposeNet,
    model: &ClusterModel,
    window: &[LabeledKeypose],
    cfg: &TrainConfig,
    epsilon: f64,
    rng: &mut RngState,
) -> Result<(f64, Vec<f64>, WindowRun)> {
    let steps = window.len() - 1;
    let k = net.k();
    let mut unroller = Unroller::new(net);
    let mut run = WindowRun {
        inputs: Vec::with_capacity(steps),
        teacher_forced: Vec::with_capacity(steps),
        self_conditioned: Vec::with_capacity(steps),
        loss: 0.0,
    };

    for i in 0..steps {
        let (token, forced, reused) = if i < cfg.obs_keyposes {
            let token = value_token(
                &window[i],
                model,
                cfg.train_temperature,
                cfg.noise_std,
                Some(rng),
            )?;
            (token, None, None)
        } else {
            let teacher = rng.uniform() < epsilon;
            if teacher {
                let token = value_token(
                    &window[i],
                    model,
                    cfg.train_temperature,
                    cfg.noise_std,
                    Some(rng),
                )?;
                (token, Some(true), None)
            } else {
                let prev = unroller.traces.last().expect("previous step exists");
                let (token, label, category) = self_token(
                    &prev.logits[..k],
                    &prev.logits[k..],
                    model,
                    cfg.train_temperature,
                )?;
                (token, Some(false), Some((label, category)))
            }
        };
        run.inputs.push(token.clone());
        run.teacher_forced.push(forced);
        run.self_conditioned.push(reused);
        unroller.step(&token);
    }

    let targets = window_targets(window, cfg)?;
    let (loss, grads) = unroller.loss_and_backward(&targets, cfg.w_labels, cfg.w_dur);
    run.loss = loss;
    Ok((loss, grads, run))
}

/// Public variant of the window unroll for tests and diagnostics.
pub fn training_window_run(
    net: &KeyposeNet,
    model: &ClusterModel,
    window: &[LabeledKeypose],
    cfg: &TrainConfig,
    epsilon: f64,
    rng: &mut RngState,
) -> Result<WindowRun> {
    check_window(window, cfg)?;
    run_window(net, model, window, cfg, epsilon, rng).map(|(_, _, run)| run)
}

fn check_window(window: &[LabeledKeypose], cfg: &TrainConfig) -> Result<()> {
    if window.len() != cfg.window_len() {
        return Err(Error::invalid(
            "window",
            format!(
                "expected {} keyposes, got {}",
                cfg.window_len(),
                window.len()
            ),
        ));
    }
    Ok(())
}

/// All stride-1 windows over the tracks, as `(track, start)` pairs.
fn enumerate_windows(tracks: &[LabeledTrack], window_len: usize) -> Result<Vec<(usize, usize)>> {
    if tracks.is_empty() {
        return Err(Error::invalid("dataset", "no tracks"));
    }
    let mut windows = Vec::new();
    for (ti, track) in tracks.iter().enumerate() {
        if track.len() < window_len {
            return Err(Error::InsufficientKeyposes {
                have: track.len(),
                need: window_len,
            });
        }
        for start in 0..=track.len() - window_len {
            windows.push((ti, start));
        }
    }
    Ok(windows)
}

/// Train in place. Deterministic in `(net, data, cfg, rng)`: window noise
/// and teacher-forcing coins come from per-window streams derived from
/// `(epoch, window index)`, so batch order never changes them. When
/// validation windows exist, the parameters with the highest next-label
/// accuracy are restored at the end.
pub fn train(
    net: &mut KeyposeNet,
    data: &TrainData,
    cfg: &TrainConfig,
    rng: &RngState,
) -> Result<TrainReport> {
    cfg.validate()?;
    if net.k() != data.cluster_model.k() {
        return Err(Error::ClusterCountMismatch {
            net_k: net.k(),
            model_k: data.cluster_model.k(),
        });
    }
    let window_len = cfg.window_len();
    let windows = enumerate_windows(data.train, window_len)?;
    let val_windows = if data.val.is_empty() {
        Vec::new()
    } else {
        enumerate_windows(data.val, window_len)?
    };

    let mut adam = AdamState::new(net.param_count());
    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut iteration: u64 = 0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        rng.derive(0x5u64.wrapping_add((epoch as u64) << 1))
            .shuffle(&mut order);

        let mut epoch_loss = 0.0;
        let mut tf_taken = 0;
        let mut tf_coins = 0;
        let mut epoch_epsilon = scheduled_sampling_prob(epoch as u64, cfg.sched_k);

        for batch in order.chunks(cfg.batch_size) {
            let epsilon = match cfg.sched_unit {
                SchedUnit::Epoch => scheduled_sampling_prob(epoch as u64, cfg.sched_k),
                SchedUnit::Iteration => scheduled_sampling_prob(iteration, cfg.sched_k),
            };
            epoch_epsilon = epsilon;
            let mut grads_sum = vec![0.0; net.param_count()];
            for &widx in batch {
                let (ti, start) = windows[widx];
                let window = &data.train[ti].keyposes[start..start + window_len];
                let mut wrng = rng.derive(window_tag(epoch, widx));
                let (loss, grads, run) =
                    run_window(net, data.cluster_model, window, cfg, epsilon, &mut wrng)?;
                epoch_loss += loss;
                for f in run.teacher_forced.iter().flatten() {
                    tf_coins += 1;
                    if *f {
                        tf_taken += 1;
                    }
                }
                for (acc, g) in grads_sum.iter_mut().zip(grads.iter()) {
                    *acc += g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads_sum {
                *g *= scale;
            }
            adam_step(
                net.params_mut(),
                &grads_sum,
                &mut adam,
                cfg.lr,
                cfg.weight_decay,
            );
            iteration += 1;
        }

        let val_accuracy = if val_windows.is_empty() {
            None
        } else {
            Some(accuracy_over_windows(
                net,
                data.cluster_model,
                data.val,
                &val_windows,
                cfg,
            )?)
        };
        if let Some(acc) = val_accuracy {
            let improved = best.as_ref().is_none_or(|(b, _)| acc > *b);
            if improved {
                best = Some((acc, net.params().to_vec()));
                report.best_epoch = Some(epoch);
            }
        }

        report.epochs.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / windows.len() as f64,
            epsilon: epoch_epsilon,
            tf_taken,
            tf_coins,
            val_accuracy,
        });
    }

    if let Some((_, params)) = best {
        net.params_mut().copy_from_slice(&params);
    }
    Ok(report)
}

fn window_tag(epoch: usize, widx: usize) -> u64 {
    ((epoch as u64) << 32) ^ (widx as u64) ^ 0x9000_0000_0000_0001
}

/// Next-label top-1 accuracy with greedy self-conditioning: observed
/// steps are tokenized from values without noise, prediction steps feed
/// back the network's argmax. This is the validation score used for
/// model selection.
pub fn next_label_accuracy(
    net: &KeyposeNet,
    model: &ClusterModel,
    tracks: &[LabeledTrack],
    cfg: &TrainConfig,
) -> Result<f64> {
    let windows = enumerate_windows(tracks, cfg.window_len())?;
    accuracy_over_windows(net, model, tracks, &windows, cfg)
}

fn accuracy_over_windows(
    net: &KeyposeNet,
    model: &ClusterModel,
    tracks: &[LabeledTrack],
    windows: &[(usize, usize)],
    cfg: &TrainConfig,
) -> Result<f64> {
    let window_len = cfg.window_len();
    let k = net.k();
    let mut correct = 0usize;
    let mut total = 0usize;
    for &(ti, start) in windows {
        let window = &tracks[ti].keyposes[start..start + window_len];
        let mut unroller = Unroller::new(net);
        for i in 0..window_len - 1 {
            let token = if i < cfg.obs_keyposes {
                value_token(&window[i], model, cfg.train_temperature, 0.0, None)?
            } else {
                let prev = unroller.traces.last().expect("previous step exists");
                self_token(
                    &prev.logits[..k],
                    &prev.logits[k..],
                    model,
                    cfg.train_temperature,
                )?
                .0
            };
            let trace = unroller.step(&token);
            if i >= cfg.obs_keyposes - 1 {
                let predicted = argmax(&trace.logits[..k]);
                if predicted == window[i + 1].label {
                    correct += 1;
                }
                total += 1;
            }
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}
