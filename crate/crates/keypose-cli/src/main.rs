//! Command-line interface for the keypose forecasting pipeline.
//!
//! Stage subcommands (`synth`, `extract`, `cluster`, `train`, `predict`,
//! `evaluate`) chain through files on disk; `run` executes the whole
//! pipeline in one go. Every command honours `--config` (a flat
//! `[section] key = value` file) and `--seed`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use keypose::cluster::{self, label_track, prune_track, LabeledTrack};
use keypose::config::PipelineConfig;
use keypose::extract::{self, extract_keyposes};
use keypose::io::{load_sequence, save_sequence, SeqFormat};
use keypose::metrics::{evaluate_forecasts, EvalReport};
use keypose::net::{self, train, KeyposeNet, TrainData};
use keypose::pipeline::{run_pipeline, write_synth_dataset};
use keypose::predict::{rollout, sample_futures, RolloutMode};
use keypose::rng::RngState;
use keypose::synth::SynthSpec;
use keypose::MotionSequence;

#[derive(Parser)]
#[command(
    name = "keypose",
    about = "Long-term motion forecasting via keypose classification",
    version
)]
struct Cli {
    /// Configuration file; missing sections fall back to the reference
    /// defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Random seed, overriding the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic motion dataset with split listings.
    Synth {
        /// Output directory for sequences and train/val/test listings.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        n_actions: usize,
        #[arg(long, default_value_t = 4)]
        seqs_per_action: usize,
        #[arg(long, default_value_t = 250)]
        frames: usize,
        #[arg(long, default_value_t = 3)]
        joints: usize,
        /// Gaussian jitter std in millimeters.
        #[arg(long, default_value_t = 0.1)]
        noise_std: f64,
    },

    /// Extract keypose tracks from a sequence file or a dataset directory.
    Extract {
        /// Mean reconstruction error bound per segment, millimeters.
        #[arg(long)]
        threshold_mm: Option<f64>,
        #[arg(long = "in")]
        input: PathBuf,
        /// Track file (single input) or directory (dataset input).
        #[arg(long)]
        out: PathBuf,
    },

    /// Cluster extracted keyposes into a label vocabulary.
    Cluster {
        #[arg(long)]
        k: Option<usize>,
        /// Directory of track files (only those listed in train.txt, if
        /// present, are used).
        #[arg(long = "in")]
        input: PathBuf,
        /// Cluster model file (.kpc).
        #[arg(long)]
        out: PathBuf,
    },

    /// Train the keypose classifier on extracted tracks.
    Train {
        /// Directory of track files, with optional train.txt/val.txt
        /// listings.
        #[arg(long)]
        data: PathBuf,
        /// Cluster model; defaults to <data>/model.kpc.
        #[arg(long)]
        clusters: Option<PathBuf>,
        /// Checkpoint file (.kpn).
        #[arg(long)]
        out: PathBuf,
    },

    /// Forecast the future of an observed sequence.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        /// Observed (past) sequence file.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        horizon_s: Option<f64>,
        /// "greedy" or "sample".
        #[arg(long, default_value = "greedy")]
        mode: String,
        /// Number of sampled futures (sample mode).
        #[arg(long)]
        n: Option<usize>,
        /// Sampling softmax temperature (sample mode).
        #[arg(long)]
        temp: Option<f64>,
        /// Extraction threshold for the observed keyposes.
        #[arg(long)]
        threshold_mm: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },

    /// Score predicted sequences against a ground-truth future.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        /// Directory of predicted sequence files.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },

    /// Full pipeline: extract, cluster, label, train, forecast, evaluate.
    Run {
        /// Dataset directory with sequences and train/val/test listings.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for all artifacts and the report.
        #[arg(long)]
        out: PathBuf,
        /// Reload artifacts already present in the output directory
        /// instead of recomputing them.
        #[arg(long)]
        resume: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn load_config(cli_config: &Option<PathBuf>, cli_seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = match cli_config {
        Some(path) => PipelineConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli_seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.config, cli.seed)?;
    match cli.command {
        Command::Synth {
            out,
            n_actions,
            seqs_per_action,
            frames,
            joints,
            noise_std,
        } => {
            let spec = SynthSpec {
                n_actions,
                seqs_per_action,
                frames,
                joints,
                noise_std_mm: noise_std,
                frame_rate_hz: cfg.data.fps,
            };
            let splits = write_synth_dataset(&spec, cfg.seed, &out)?;
            println!(
                "wrote {} sequences ({} train / {} val / {} test) to {}",
                n_actions * seqs_per_action,
                splits.train.len(),
                splits.val.len(),
                splits.test.len(),
                out.display()
            );
        }

        Command::Extract {
            threshold_mm,
            input,
            out,
        } => {
            let threshold = threshold_mm.unwrap_or(cfg.extract.threshold_mm);
            if input.is_dir() {
                extract_directory(&input, &out, threshold)?;
            } else {
                let seq = load_sequence(&input, SeqFormat::from_path(&input))?;
                let track = extract_keyposes(&seq, threshold)?;
                if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(parent)?;
                }
                extract::save_track(&track, &out)?;
                println!(
                    "extracted {} keyposes from {} frames -> {}",
                    track.len(),
                    seq.len(),
                    out.display()
                );
            }
        }

        Command::Cluster { k, input, out } => {
            let k = k.unwrap_or(cfg.cluster.k);
            let names = listed_or_all_tracks(&input, "train.txt")?;
            let mut points = Vec::new();
            for name in &names {
                let track = extract::load_track(input.join(name))?;
                points.extend(track.keyposes.into_iter().map(|kp| kp.value));
            }
            let mut rng = RngState::new(cfg.seed).derive(1);
            let model =
                cluster::kmeans_fit(&points, k, &mut rng, cfg.cluster.max_iters, cfg.cluster.tol)?;
            cluster::save_model(&model, &out)?;
            println!(
                "clustered {} keyposes into {} centers -> {}",
                points.len(),
                k,
                out.display()
            );
        }

        Command::Train {
            data,
            clusters,
            out,
        } => {
            let clusters = clusters.unwrap_or_else(|| data.join("model.kpc"));
            let model = cluster::load_model(&clusters)?;
            let (train_names, val_names) = train_val_names(&data)?;
            let label_all = |names: &[String]| -> Result<Vec<LabeledTrack>> {
                names
                    .iter()
                    .map(|n| {
                        let track = extract::load_track(data.join(n))?;
                        Ok(prune_track(&label_track(&track, &model)))
                    })
                    .collect()
            };
            let train_cfg = cfg.train_config()?;
            let window = train_cfg.window_len();
            let train_tracks: Vec<LabeledTrack> = label_all(&train_names)?
                .into_iter()
                .filter(|t| t.len() >= window)
                .collect();
            if train_tracks.is_empty() {
                bail!("no training track has {window} keyposes after pruning");
            }
            let val_tracks: Vec<LabeledTrack> = label_all(&val_names)?
                .into_iter()
                .filter(|t| t.len() >= window)
                .collect();

            let base = RngState::new(cfg.seed);
            let mut network = KeyposeNet::new(model.k(), cfg.net.hidden_size, &mut base.derive(2))?;
            let report = train(
                &mut network,
                &TrainData {
                    cluster_model: &model,
                    train: &train_tracks,
                    val: &val_tracks,
                },
                &train_cfg,
                &base.derive(3),
            )?;
            net::save_checkpoint(&network, &out)?;
            let last = report.epochs.last();
            println!(
                "trained {} epochs on {} tracks; final loss {:.6}{} -> {}",
                report.epochs.len(),
                train_tracks.len(),
                last.map(|s| s.mean_loss).unwrap_or(f64::NAN),
                report
                    .best_epoch
                    .map(|e| format!(", best validation epoch {e}"))
                    .unwrap_or_default(),
                out.display()
            );
        }

        Command::Predict {
            model,
            clusters,
            input,
            horizon_s,
            mode,
            n,
            temp,
            threshold_mm,
            out,
        } => {
            let network = net::load_checkpoint(&model)?;
            let clusters = cluster::load_model(&clusters)?;
            let seq = load_sequence(&input, SeqFormat::from_path(&input))?;
            let threshold = threshold_mm.unwrap_or(cfg.extract.threshold_mm);
            let track = extract_keyposes(&seq, threshold)?;
            let observed = prune_track(&label_track(&track, &clusters));

            let mut params = cfg.rollout_params()?;
            params.frame_rate_hz = seq.frame_rate_hz;
            if let Some(h) = horizon_s {
                params.horizon_frames = (h * seq.frame_rate_hz).round() as usize;
            }
            fs::create_dir_all(&out)?;
            match mode.as_str() {
                "greedy" => {
                    let forecast = rollout(
                        &network,
                        &clusters,
                        &observed,
                        &params,
                        &RolloutMode::Greedy,
                    )?;
                    save_sequence(&forecast.sequence, out.join("greedy.csv"), SeqFormat::Csv)?;
                    keypose::predict::save_forecast(&forecast, out.join("greedy.json"))?;
                    println!(
                        "greedy forecast: {} keyposes over {} frames -> {}",
                        forecast.keyposes.len(),
                        forecast.sequence.len(),
                        out.display()
                    );
                }
                "sample" => {
                    let n = n.unwrap_or(cfg.predict.n_samples);
                    let temp = temp.unwrap_or(cfg.predict.sample_temperature);
                    let futures =
                        sample_futures(&network, &clusters, &observed, &params, n, temp, cfg.seed)?;
                    for (i, f) in futures.iter().enumerate() {
                        save_sequence(
                            &f.sequence,
                            out.join(format!("sample_{i:03}.csv")),
                            SeqFormat::Csv,
                        )?;
                        keypose::predict::save_forecast(
                            f,
                            out.join(format!("sample_{i:03}.json")),
                        )?;
                    }
                    println!(
                        "sampled {n} futures at temperature {temp} -> {}",
                        out.display()
                    );
                }
                other => bail!("unknown mode {other:?}: expected \"greedy\" or \"sample\""),
            }
        }

        Command::Evaluate { gt, pred, report } => {
            let gt_seq = load_sequence(&gt, SeqFormat::from_path(&gt))?;
            let preds = load_prediction_dir(&pred)?;
            let seconds = seconds_for(&gt_seq);
            let result = evaluate_forecasts(&preds, &gt_seq, &seconds)?;
            result.save(&report)?;
            print_report_summary(&result);
            println!("report -> {}", report.display());
        }

        Command::Run { data, out, resume } => {
            let report = run_pipeline(&cfg, &data, &out, resume)?;
            print_report_summary(&report);
            println!("artifacts -> {}", out.display());
        }
    }
    Ok(())
}

fn extract_directory(input: &Path, out: &Path, threshold: f64) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut names: Vec<String> = fs::read_dir(input)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".csv") || n.ends_with(".jsonl"))
        .collect();
    names.sort();
    if names.is_empty() {
        bail!("no .csv or .jsonl sequences in {}", input.display());
    }
    for name in &names {
        let path = input.join(name);
        let seq = load_sequence(&path, SeqFormat::from_path(&path))?;
        let track = extract_keyposes(&seq, threshold)?;
        let out_name = format!(
            "{}.jsonl",
            name.rsplit_once('.').map_or(name.as_str(), |(s, _)| s)
        );
        extract::save_track(&track, out.join(out_name))?;
    }
    // carry split listings over, pointing at the track files
    for listing in ["train.txt", "val.txt", "test.txt"] {
        let src = input.join(listing);
        if src.exists() {
            let rewritten: String = fs::read_to_string(&src)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(|l| format!("{}.jsonl\n", l.rsplit_once('.').map_or(l, |(s, _)| s)))
                .collect();
            fs::write(out.join(listing), rewritten)?;
        }
    }
    println!("extracted {} tracks -> {}", names.len(), out.display());
    Ok(())
}

fn listed_or_all_tracks(dir: &Path, listing: &str) -> Result<Vec<String>> {
    let listing_path = dir.join(listing);
    if listing_path.exists() {
        Ok(fs::read_to_string(&listing_path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect())
    } else {
        let mut names: Vec<String> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.ends_with(".jsonl"))
            .collect();
        names.sort();
        if names.is_empty() {
            bail!("no track files in {}", dir.display());
        }
        Ok(names)
    }
}

/// train.txt/val.txt when present; otherwise a deterministic 90/10 split
/// of the sorted track files.
fn train_val_names(data: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let train_listing = data.join("train.txt");
    if train_listing.exists() {
        let train = listed_or_all_tracks(data, "train.txt")?;
        let val = if data.join("val.txt").exists() {
            listed_or_all_tracks(data, "val.txt")?
        } else {
            Vec::new()
        };
        return Ok((train, val));
    }
    let all = listed_or_all_tracks(data, "train.txt")?;
    let n_val = (all.len() / 10).max(if all.len() > 1 { 1 } else { 0 });
    let split = all.len() - n_val;
    Ok((all[..split].to_vec(), all[split..].to_vec()))
}

fn load_prediction_dir(dir: &Path) -> Result<Vec<MotionSequence>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".csv") || n.ends_with(".jsonl"))
        .collect();
    names.sort();
    if names.is_empty() {
        bail!("no predicted sequences in {}", dir.display());
    }
    names
        .iter()
        .map(|n| {
            let path = dir.join(n);
            Ok(load_sequence(&path, SeqFormat::from_path(&path))?)
        })
        .collect()
}

fn seconds_for(gt: &MotionSequence) -> Vec<u32> {
    let n = gt.len();
    let fps = gt.frame_rate_hz;
    let mut seconds = Vec::new();
    let last = (n as f64 / fps).round() as u32;
    for s in [1, last] {
        let frame = (s as f64 * fps).round() as usize;
        if s >= 1 && frame >= 1 && frame <= n && !seconds.contains(&s) {
            seconds.push(s);
        }
    }
    if seconds.is_empty() {
        seconds.push(1);
    }
    seconds
}

fn print_report_summary(report: &EvalReport) {
    for (s, m) in &report.mpjpe_at {
        println!(
            "mpjpe @ {s}s: ave {:.2} mm, best {:.2} mm",
            m.ave_mm, m.best_mm
        );
    }
    println!(
        "pskl: gt-pred {:.6}, pred-gt {:.6}, average {:.6}, difference {:.6}",
        report.pskl.gt_pred, report.pskl.pred_gt, report.pskl.average, report.pskl.difference
    );
    println!("diversity: {:.2} mm", report.diversity);
}
