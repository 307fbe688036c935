//! End-to-end orchestration: extract keyposes from the training split,
//! cluster them, label and prune every track, train the classifier with
//! model selection on the validation split, then forecast and score each
//! test sequence.
//!
//! Every stage writes its artifacts under the output directory and can
//! reload them (`resume`) instead of recomputing, so a run can be
//! restarted from any stage boundary with identical results. All
//! randomness derives from the single configured seed; rerunning with the
//! same seed reproduces every artifact byte for byte.
//!
//! Output layout:
//!
//! ```text
//! out/
//!   tracks/{train,val}/<name>.jsonl        extracted keypose tracks
//!   labeled/{train,val}/<name>.jsonl       labeled + pruned tracks
//!   model.kpc                              cluster centers
//!   model.kpn                              network checkpoint
//!   train_log.csv                          per-epoch stats
//!   forecasts/<name>/greedy.csv            greedy forecast sequence
//!   forecasts/<name>/sample_###.json       sampled forecasts
//!   reports/<name>.json                    per-sequence evaluation
//!   report.json                            aggregate evaluation
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::cluster::{self, kmeans_fit, label_track, prune_track, ClusterModel, LabeledTrack};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::extract::{self, extract_keyposes, KeyposeTrack};
use crate::io::{load_sequence, save_sequence, SeqFormat};
use crate::metrics::{evaluate_forecasts, EvalReport};
use crate::net::{self, train, KeyposeNet, TrainData, TrainReport};
use crate::pose::MotionSequence;
use crate::predict::{rollout, sample_futures, RolloutMode};
use crate::rng::{derive_seed, RngState};
use crate::synth::{synth_dataset, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn listing(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Val => "val.txt",
            Split::Test => "test.txt",
        }
    }
}

/// File names per split, in listing order.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn names(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn load_splits(data_dir: &Path) -> Result<Splits> {
    let read = |split: Split| -> Result<Vec<String>> {
        let path = data_dir.join(split.listing());
        if !path.exists() {
            return Err(Error::MissingSplit(path.display().to_string()));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let names: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if names.is_empty() {
            return Err(Error::MissingSplit(format!(
                "{} lists no sequences",
                path.display()
            )));
        }
        Ok(names)
    };
    Ok(Splits {
        train: read(Split::Train)?,
        val: read(Split::Val)?,
        test: read(Split::Test)?,
    })
}

fn load_split_sequences(data_dir: &Path, names: &[String]) -> Result<Vec<MotionSequence>> {
    names
        .iter()
        .map(|name| {
            let path = data_dir.join(name);
            load_sequence(&path, SeqFormat::from_path(&path))
        })
        .collect()
}

fn track_file(out_dir: &Path, split: Split, name: &str) -> PathBuf {
    out_dir
        .join("tracks")
        .join(split.dir_name())
        .join(format!("{}.jsonl", stem(name)))
}

fn labeled_file(out_dir: &Path, split: Split, name: &str) -> PathBuf {
    out_dir
        .join("labeled")
        .join(split.dir_name())
        .join(format!("{}.jsonl", stem(name)))
}

fn stem(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(s, _)| s)
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Extract keypose tracks for one split, or reload previous dumps.
pub fn stage_extract(
    cfg: &PipelineConfig,
    data_dir: &Path,
    out_dir: &Path,
    split: Split,
    names: &[String],
    resume: bool,
) -> Result<Vec<KeyposeTrack>> {
    let all_dumped = names.iter().all(|n| track_file(out_dir, split, n).exists());
    if resume && all_dumped {
        return names
            .iter()
            .map(|n| extract::load_track(track_file(out_dir, split, n)))
            .collect();
    }
    let sequences = load_split_sequences(data_dir, names)?;
    let mut tracks = Vec::with_capacity(sequences.len());
    for (name, seq) in names.iter().zip(sequences.iter()) {
        let track = extract_keyposes(seq, cfg.extract.threshold_mm)?;
        let path = track_file(out_dir, split, name);
        ensure_dir(path.parent().expect("track path has a parent"))?;
        extract::save_track(&track, &path)?;
        tracks.push(track);
    }
    Ok(tracks)
}

/// Cluster all training keyposes, or reload the dumped model.
pub fn stage_cluster(
    cfg: &PipelineConfig,
    out_dir: &Path,
    train_tracks: &[KeyposeTrack],
    resume: bool,
) -> Result<ClusterModel> {
    let model_path = out_dir.join("model.kpc");
    if resume && model_path.exists() {
        return cluster::load_model(&model_path);
    }
    let points: Vec<crate::pose::Pose> = train_tracks
        .iter()
        .flat_map(|t| t.keyposes.iter().map(|k| k.value.clone()))
        .collect();
    let mut rng = RngState::new(cfg.seed).derive(1);
    let model = kmeans_fit(
        &points,
        cfg.cluster.k,
        &mut rng,
        cfg.cluster.max_iters,
        cfg.cluster.tol,
    )?;
    cluster::save_model(&model, &model_path)?;
    Ok(model)
}

/// Label and prune one split's tracks, or reload previous dumps.
pub fn stage_label(
    model: &ClusterModel,
    out_dir: &Path,
    split: Split,
    names: &[String],
    tracks: &[KeyposeTrack],
    resume: bool,
) -> Result<Vec<LabeledTrack>> {
    let all_dumped = names
        .iter()
        .all(|n| labeled_file(out_dir, split, n).exists());
    if resume && all_dumped {
        return names
            .iter()
            .map(|n| cluster::load_labeled_track(labeled_file(out_dir, split, n)))
            .collect();
    }
    let mut labeled = Vec::with_capacity(tracks.len());
    for (name, track) in names.iter().zip(tracks.iter()) {
        let pruned = prune_track(&label_track(track, model));
        let path = labeled_file(out_dir, split, name);
        ensure_dir(path.parent().expect("labeled path has a parent"))?;
        cluster::save_labeled_track(&pruned, &path)?;
        labeled.push(pruned);
    }
    Ok(labeled)
}

/// Train the classifier (model selection on the validation split), or
/// reload the dumped checkpoint.
pub fn stage_train(
    cfg: &PipelineConfig,
    out_dir: &Path,
    model: &ClusterModel,
    train_tracks: &[LabeledTrack],
    val_tracks: &[LabeledTrack],
    resume: bool,
) -> Result<KeyposeNet> {
    let ckpt_path = out_dir.join("model.kpn");
    if resume && ckpt_path.exists() {
        return net::load_checkpoint(&ckpt_path);
    }
    let train_cfg = cfg.train_config()?;
    let window_len = train_cfg.window_len();
    let usable = |tracks: &[LabeledTrack]| -> Vec<LabeledTrack> {
        tracks
            .iter()
            .filter(|t| t.len() >= window_len)
            .cloned()
            .collect()
    };
    let train_usable = usable(train_tracks);
    if train_usable.is_empty() {
        return Err(Error::InsufficientKeyposes {
            have: train_tracks
                .iter()
                .map(LabeledTrack::len)
                .max()
                .unwrap_or(0),
            need: window_len,
        });
    }
    let val_usable = usable(val_tracks);

    let base_rng = RngState::new(cfg.seed);
    let mut net = KeyposeNet::new(model.k(), cfg.net.hidden_size, &mut base_rng.derive(2))?;
    let data = TrainData {
        cluster_model: model,
        train: &train_usable,
        val: &val_usable,
    };
    let report = train(&mut net, &data, &train_cfg, &base_rng.derive(3))?;
    write_train_log(&report, &out_dir.join("train_log.csv"))?;
    net::save_checkpoint(&net, &ckpt_path)?;
    Ok(net)
}

fn write_train_log(report: &TrainReport, path: &Path) -> Result<()> {
    let mut body = String::from("epoch,mean_loss,epsilon,tf_taken,tf_coins,val_accuracy\n");
    for s in &report.epochs {
        body.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.epoch,
            s.mean_loss,
            s.epsilon,
            s.tf_taken,
            s.tf_coins,
            s.val_accuracy.map(|a| a.to_string()).unwrap_or_default()
        ));
    }
    crate::io::write_atomic(path, body.as_bytes())
}

/// Forecast and evaluate one test sequence. Returns the per-sequence
/// report after dumping the forecasts.
fn forecast_and_evaluate(
    cfg: &PipelineConfig,
    out_dir: &Path,
    model: &ClusterModel,
    net: &KeyposeNet,
    name: &str,
    seq: &MotionSequence,
    seq_index: usize,
) -> Result<EvalReport> {
    let horizon = cfg.horizon_frames();
    if seq.len() < horizon + 2 {
        return Err(Error::SequenceTooShort {
            len: seq.len(),
            min: horizon + 2,
        });
    }
    let t0 = seq.len() - horizon;
    let past = seq.truncated(t0);
    let gt_future = seq.tail(t0);

    // observed keyposes come from the past only, with the training
    // threshold, labeled and pruned like the training tracks
    let past_track = extract_keyposes(&past, cfg.extract.threshold_mm)?;
    let observed = prune_track(&label_track(&past_track, model));
    let params = cfg.rollout_params()?;

    let greedy = rollout(net, model, &observed, &params, &RolloutMode::Greedy)?;
    let futures = sample_futures(
        net,
        model,
        &observed,
        &params,
        cfg.predict.n_samples,
        cfg.predict.sample_temperature,
        derive_seed(cfg.seed, 0x70_0000 + seq_index as u64),
    )?;

    let fdir = out_dir.join("forecasts").join(stem(name));
    ensure_dir(&fdir)?;
    save_sequence(&greedy.sequence, fdir.join("greedy.csv"), SeqFormat::Csv)?;
    crate::predict::save_forecast(&greedy, fdir.join("greedy.json"))?;
    for (i, f) in futures.iter().enumerate() {
        crate::predict::save_forecast(f, fdir.join(format!("sample_{i:03}.json")))?;
    }

    let pred_seqs: Vec<MotionSequence> = futures.iter().map(|f| f.sequence.clone()).collect();
    let report = evaluate_forecasts(&pred_seqs, &gt_future, &eval_seconds(cfg))?;
    ensure_dir(&out_dir.join("reports"))?;
    report.save(out_dir.join("reports").join(format!("{}.json", stem(name))))?;
    Ok(report)
}

/// Horizon seconds at which MPJPE is reported: 1 s plus the rounded
/// horizon, kept within the predicted range.
pub fn eval_seconds(cfg: &PipelineConfig) -> Vec<u32> {
    let horizon = cfg.horizon_frames();
    let mut seconds = Vec::new();
    for s in [1u32, cfg.predict.horizon_s.round() as u32] {
        let frame = (s as f64 * cfg.data.fps).round() as usize;
        if s >= 1 && frame >= 1 && frame <= horizon && !seconds.contains(&s) {
            seconds.push(s);
        }
    }
    if seconds.is_empty() {
        seconds.push(cfg.predict.horizon_s.ceil().max(1.0) as u32);
    }
    seconds
}

/// The full pipeline. With `resume`, stages whose artifacts already sit
/// in `out_dir` are reloaded instead of recomputed.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    data_dir: &Path,
    out_dir: &Path,
    resume: bool,
) -> Result<EvalReport> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let splits = load_splits(data_dir)?;

    let train_tracks = stage_extract(cfg, data_dir, out_dir, Split::Train, &splits.train, resume)?;
    let val_tracks = stage_extract(cfg, data_dir, out_dir, Split::Val, &splits.val, resume)?;
    let model = stage_cluster(cfg, out_dir, &train_tracks, resume)?;
    let train_labeled = stage_label(
        &model,
        out_dir,
        Split::Train,
        &splits.train,
        &train_tracks,
        resume,
    )?;
    let val_labeled = stage_label(
        &model,
        out_dir,
        Split::Val,
        &splits.val,
        &val_tracks,
        resume,
    )?;
    let net = stage_train(cfg, out_dir, &model, &train_labeled, &val_labeled, resume)?;

    let mut reports = Vec::with_capacity(splits.test.len());
    for (i, name) in splits.test.iter().enumerate() {
        let path = data_dir.join(name);
        let seq = load_sequence(&path, SeqFormat::from_path(&path))?;
        reports.push(forecast_and_evaluate(
            cfg, out_dir, &model, &net, name, &seq, i,
        )?);
    }
    let aggregate = EvalReport::mean(&reports)?;
    aggregate.save(out_dir.join("report.json"))?;
    Ok(aggregate)
}

// ---------------------------------------------------------------------------
// Synthetic dataset on disk.

/// Generate a synthetic dataset into `dir`: one CSV per sequence with the
/// action in its meta sidecar, plus train/val/test listings. Within each
/// action the last two sequences go to validation and test; tiny datasets
/// fall back to reusing sequences across splits so every listing is
/// nonempty.
pub fn write_synth_dataset(spec: &SynthSpec, seed: u64, dir: &Path) -> Result<Splits> {
    ensure_dir(dir)?;
    let mut rng = RngState::new(seed);
    let data = synth_dataset(spec, &mut rng)?;
    let mut splits = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (i, seq) in data.iter().enumerate() {
        let action = i / spec.seqs_per_action;
        let within = i % spec.seqs_per_action;
        let name = format!("seq_a{action}_{within:03}.csv");
        save_sequence(seq, dir.join(&name), SeqFormat::Csv)?;
        let n = spec.seqs_per_action;
        match (n, within) {
            (1, _) => {
                splits.train.push(name.clone());
                splits.val.push(name.clone());
                splits.test.push(name);
            }
            (2, 0) => splits.train.push(name),
            (2, 1) => {
                splits.val.push(name.clone());
                splits.test.push(name);
            }
            (_, w) if w == n - 1 => splits.test.push(name),
            (_, w) if w == n - 2 => splits.val.push(name),
            _ => splits.train.push(name),
        }
    }
    for split in Split::ALL {
        let listing: String = splits
            .names(split)
            .iter()
            .map(|n| format!("{n}\n"))
            .collect();
        crate::io::write_atomic(&dir.join(split.listing()), listing.as_bytes())?;
    }
    Ok(splits)
}
