//! Keypose extraction by recursive split.
//!
//! A keypose set is grown greedily: start from the two endpoint frames,
//! and while a segment's mean reconstruction error (over frames and
//! joints, in mm) exceeds the threshold, split it at the frame whose pose
//! deviates most from the linear interpolation of the segment endpoints.
//! Segments recurse independently; ties on the maximum error go to the
//! smallest frame index. Frame indices are 1-based.
//!
//! [`oracle_extract`] replays the same rule by brute force (full-track
//! reconstruction each step, no per-segment shortcuts) and must agree
//! with [`extract_keyposes`] exactly; it guards against regressions in
//! the recursion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{lerp_pose, MotionSequence, Pose, DEFAULT_FPS};

/// Largest sequence the exhaustive oracle will accept.
pub const ORACLE_MAX_FRAMES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypose {
    /// 1-based frame index within the source sequence.
    pub frame_index: usize,
    pub value: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyposeTrack {
    pub keyposes: Vec<Keypose>,
    pub source_length: usize,
    pub threshold_mm: f64,
    pub frame_rate_hz: f64,
    pub action: Option<String>,
}

impl KeyposeTrack {
    pub fn len(&self) -> usize {
        self.keyposes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyposes.is_empty()
    }

    pub fn frame_indices(&self) -> Vec<usize> {
        self.keyposes.iter().map(|k| k.frame_index).collect()
    }
}

/// Rebuild the full sequence from a track by linear interpolation.
/// Keypose frames reproduce their stored values exactly.
pub fn reconstruct(track: &KeyposeTrack) -> MotionSequence {
    let mut frames: Vec<Pose> = Vec::with_capacity(track.source_length);
    for pair in track.keyposes.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if frames.is_empty() {
            frames.push(a.value.clone());
        }
        for t in a.frame_index + 1..=b.frame_index {
            frames.push(lerp_pose(
                &a.value,
                &b.value,
                a.frame_index,
                b.frame_index,
                t,
            ));
        }
    }
    if frames.is_empty() {
        // single-keypose track can only describe a one-frame sequence
        if let Some(k) = track.keyposes.first() {
            frames.push(k.value.clone());
        }
    }
    MotionSequence::new(frames, track.frame_rate_hz, track.action.clone())
}

pub fn extract_keyposes(seq: &MotionSequence, threshold_mm: f64) -> Result<KeyposeTrack> {
    validate(seq, threshold_mm)?;
    let t = seq.len();
    let mut indices = vec![1, t];
    split_segment(seq, 1, t, threshold_mm, &mut indices);
    indices.sort_unstable();
    indices.dedup();
    Ok(track_from_indices(seq, &indices, threshold_mm))
}

/// Recursive step: if the mean interpolation error over `[lo, hi]`
/// (inclusive, 1-based) exceeds the threshold, add the worst frame and
/// recurse into both halves.
fn split_segment(
    seq: &MotionSequence,
    lo: usize,
    hi: usize,
    threshold_mm: f64,
    out: &mut Vec<usize>,
) {
    if hi - lo < 2 {
        return;
    }
    let (mean_err, worst) = segment_error(seq, lo, hi);
    if mean_err <= threshold_mm {
        return;
    }
    let worst = worst.expect("segment with interior frames has a worst frame");
    out.push(worst);
    split_segment(seq, lo, worst, threshold_mm, out);
    split_segment(seq, worst, hi, threshold_mm, out);
}

/// Mean interpolation error over the segment (endpoints included) and the
/// interior frame with the largest error, smallest index on ties.
fn segment_error(seq: &MotionSequence, lo: usize, hi: usize) -> (f64, Option<usize>) {
    let pa = seq.frame(lo);
    let pb = seq.frame(hi);
    let mut sum = 0.0;
    let mut worst: Option<(usize, f64)> = None;
    for t in lo..=hi {
        let err = seq.frame(t).distance_mm(&lerp_pose(pa, pb, lo, hi, t));
        sum += err;
        if t > lo && t < hi {
            let better = match worst {
                Some((_, w)) => err > w,
                None => true,
            };
            if better {
                worst = Some((t, err));
            }
        }
    }
    (sum / (hi - lo + 1) as f64, worst.map(|(t, _)| t))
}

/// Brute-force re-derivation of the extraction rule for small sequences.
///
/// Keeps an explicit worklist of unresolved segments; at every step it
/// rebuilds the *entire* reconstruction from the current keypose set via
/// [`reconstruct`] and rescans the segment, rather than interpolating
/// locally. The result must match [`extract_keyposes`] exactly.
pub fn oracle_extract(seq: &MotionSequence, threshold_mm: f64) -> Result<KeyposeTrack> {
    validate(seq, threshold_mm)?;
    if seq.len() > ORACLE_MAX_FRAMES {
        return Err(Error::SequenceTooLong {
            len: seq.len(),
            max: ORACLE_MAX_FRAMES,
        });
    }

    let t = seq.len();
    let mut keyposes = vec![1, t];
    let mut open = vec![(1usize, t)];
    while let Some((lo, hi)) = open.pop() {
        if hi - lo < 2 {
            continue;
        }
        let recon = reconstruct(&track_from_indices(seq, &keyposes, threshold_mm));
        let errors: Vec<f64> = (1..=t)
            .map(|i| seq.frame(i).distance_mm(recon.frame(i)))
            .collect();
        let mean = errors[lo - 1..hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
        if mean <= threshold_mm {
            continue;
        }
        let mut worst = lo + 1;
        for i in lo + 1..hi {
            if errors[i - 1] > errors[worst - 1] {
                worst = i;
            }
        }
        keyposes.push(worst);
        keyposes.sort_unstable();
        open.push((lo, worst));
        open.push((worst, hi));
    }
    Ok(track_from_indices(seq, &keyposes, threshold_mm))
}

fn track_from_indices(seq: &MotionSequence, indices: &[usize], threshold_mm: f64) -> KeyposeTrack {
    KeyposeTrack {
        keyposes: indices
            .iter()
            .map(|&i| Keypose {
                frame_index: i,
                value: seq.frame(i).clone(),
            })
            .collect(),
        source_length: seq.len(),
        threshold_mm,
        frame_rate_hz: seq.frame_rate_hz,
        action: seq.action.clone(),
    }
}

fn validate(seq: &MotionSequence, threshold_mm: f64) -> Result<()> {
    if seq.len() < 2 {
        return Err(Error::SequenceTooShort {
            len: seq.len(),
            min: 2,
        });
    }
    if !(threshold_mm > 0.0) || !threshold_mm.is_finite() {
        return Err(Error::invalid(
            "threshold",
            format!("must be a positive finite number of millimeters, got {threshold_mm}"),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Track files: JSONL of {frame_index, joints}, sidecar carries the rest.

use std::path::Path;

#[derive(Serialize, Deserialize)]
struct JsonlKeypose {
    frame_index: usize,
    joints: Vec<[f64; 3]>,
}

pub fn save_track(track: &KeyposeTrack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut body = String::new();
    for kp in &track.keyposes {
        let rec = JsonlKeypose {
            frame_index: kp.frame_index,
            joints: kp.value.joints.clone(),
        };
        body.push_str(&serde_json::to_string(&rec).expect("keypose serializes"));
        body.push('\n');
    }
    crate::io::write_atomic(path, body.as_bytes())?;
    let meta = format!(
        "source_length={}\nthreshold_mm={}\nfps={}\n{}",
        track.source_length,
        track.threshold_mm,
        track.frame_rate_hz,
        track
            .action
            .as_deref()
            .map(|a| format!("action={a}\n"))
            .unwrap_or_default()
    );
    crate::io::write_atomic(&sidecar(path), meta.as_bytes())
}

pub fn load_track(path: impl AsRef<Path>) -> Result<KeyposeTrack> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut keyposes = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let rec: JsonlKeypose = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        keyposes.push(Keypose {
            frame_index: rec.frame_index,
            value: Pose::new(rec.joints),
        });
    }
    if keyposes.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }

    let meta_path = sidecar(path);
    let mut source_length = keyposes.last().map(|k| k.frame_index).unwrap_or(0);
    let mut threshold_mm = 0.0;
    let mut fps = DEFAULT_FPS;
    let mut action = None;
    if meta_path.exists() {
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: meta_path.clone(),
                line: idx + 1,
                msg,
            };
            match line.split_once('=') {
                Some(("source_length", v)) => {
                    source_length = v
                        .parse()
                        .map_err(|_| err(format!("bad source_length {v:?}")))?
                }
                Some(("threshold_mm", v)) => {
                    threshold_mm = v
                        .parse()
                        .map_err(|_| err(format!("bad threshold_mm {v:?}")))?
                }
                Some(("fps", v)) => fps = v.parse().map_err(|_| err(format!("bad fps {v:?}")))?,
                Some(("action", v)) => action = Some(v.to_string()),
                _ => return Err(err(format!("unknown meta entry {line:?}"))),
            }
        }
    }
    Ok(KeyposeTrack {
        keyposes,
        source_length,
        threshold_mm,
        frame_rate_hz: fps,
        action,
    })
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".meta");
    std::path::PathBuf::from(os)
}
