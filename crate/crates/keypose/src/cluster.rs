//! Keypose clustering and labeling.
//!
//! Extracted keyposes are clustered with k-means (k-means++ seeding,
//! Lloyd iterations on the flattened 3J coordinates), each keypose gets
//! the label of its nearest center, and runs of three or more equal
//! labels are pruned down to their endpoints. Durations between surviving
//! keyposes are bucketed into five categories with fixed representative
//! frame counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{Keypose, KeyposeTrack};
use crate::pose::Pose;
use crate::rng::RngState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centers: Vec<Pose>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn joint_count(&self) -> usize {
        self.centers.first().map_or(0, Pose::joint_count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledKeypose {
    pub keypose: Keypose,
    pub label: usize,
    /// Frames since the previous keypose in the track; 0 for the first.
    pub duration_frames: usize,
}

/// A labeled (and usually pruned) keypose track, the unit of training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTrack {
    pub keyposes: Vec<LabeledKeypose>,
    pub action: Option<String>,
}

impl LabeledTrack {
    pub fn len(&self) -> usize {
        self.keyposes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyposes.is_empty()
    }
}

pub const KMEANS_DEFAULT_MAX_ITERS: usize = 100;
pub const KMEANS_DEFAULT_TOL: f64 = 1e-6;

/// Lloyd's algorithm with k-means++ seeding on flattened pose vectors.
/// Deterministic given the rng; empty clusters are re-seeded to the point
/// farthest from its assigned center.
pub fn kmeans_fit(
    points: &[Pose],
    k: usize,
    rng: &mut RngState,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterModel> {
    if points.is_empty() {
        return Err(Error::invalid("kmeans input", "no points"));
    }
    if k < 1 || points.len() < k {
        return Err(Error::TooFewPoints {
            need: k.max(1),
            k,
            got: points.len(),
        });
    }
    let flats: Vec<Vec<f64>> = points.iter().map(Pose::flat).collect();
    let dim = flats[0].len();
    if flats.iter().any(|f| f.len() != dim) {
        return Err(Error::JointMismatch {
            expected: dim / 3,
            got: 0,
        });
    }

    let mut centers = seed_plus_plus(&flats, k, rng);
    let mut assignment = vec![0usize; flats.len()];
    for _ in 0..max_iters {
        // assignment step
        for (i, f) in flats.iter().enumerate() {
            assignment[i] = nearest_sq(&centers, f).0;
        }
        // update step: coordinate-wise mean per cluster
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (f, &a) in flats.iter().zip(assignment.iter()) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(f.iter()) {
                *s += v;
            }
        }
        let mut movement: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed to the point farthest from its assigned center
                let far = (0..flats.len())
                    .max_by(|&a, &b| {
                        let da = dist_sq(&flats[a], &centers[assignment[a]]);
                        let db = dist_sq(&flats[b], &centers[assignment[b]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .expect("points nonempty");
                movement += dist_sq(&centers[c], &flats[far]).sqrt();
                centers[c] = flats[far].clone();
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let mut delta = 0.0;
            for d in 0..dim {
                let nv = sums[c][d] * inv;
                let diff = nv - centers[c][d];
                delta += diff * diff;
                centers[c][d] = nv;
            }
            movement += delta.sqrt();
        }
        if movement < tol {
            break;
        }
    }

    Ok(ClusterModel {
        centers: centers.iter().map(|f| Pose::from_flat(f)).collect(),
    })
}

/// Squared-distance-weighted seeding. The first center is uniform.
fn seed_plus_plus(flats: &[Vec<f64>], k: usize, rng: &mut RngState) -> Vec<Vec<f64>> {
    let n = flats.len();
    let first = (rng.uniform() * n as f64) as usize % n;
    let mut centers = vec![flats[first].clone()];
    let mut best_d2: Vec<f64> = flats.iter().map(|f| dist_sq(f, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = best_d2.iter().sum();
        let next = if total <= 0.0 {
            // all mass on existing centers; pick uniformly
            (rng.uniform() * n as f64) as usize % n
        } else {
            let mut u = rng.uniform() * total;
            let mut pick = n - 1;
            for (i, &d) in best_d2.iter().enumerate() {
                u -= d;
                if u < 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centers.push(flats[next].clone());
        for (i, f) in flats.iter().enumerate() {
            let d = dist_sq(f, centers.last().unwrap());
            if d < best_d2[i] {
                best_d2[i] = d;
            }
        }
    }
    centers
}

fn nearest_sq(centers: &[Vec<f64>], f: &[f64]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = dist_sq(f, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum of squared flattened distances to the nearest center; Lloyd's
/// objective, non-increasing over iterations.
pub fn inertia(model: &ClusterModel, points: &[Pose]) -> f64 {
    let centers: Vec<Vec<f64>> = model.centers.iter().map(Pose::flat).collect();
    points
        .iter()
        .map(|p| nearest_sq(&centers, &p.flat()).1)
        .sum()
}

/// Index of the center with the smallest mean per-joint distance to the
/// pose; ties go to the smallest index. This is the labeling metric, kept
/// consistent with the proximity vectors fed to the network.
pub fn assign_label(model: &ClusterModel, pose: &Pose) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in model.centers.iter().enumerate() {
        let d = pose.distance_mm(c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Label every keypose of a track and attach durations (gap in frames to
/// the previous keypose; the first keypose gets 0).
pub fn label_track(track: &KeyposeTrack, model: &ClusterModel) -> LabeledTrack {
    let mut keyposes = Vec::with_capacity(track.keyposes.len());
    let mut prev_frame = None;
    for kp in &track.keyposes {
        let label = assign_label(model, &kp.value);
        let duration = prev_frame.map_or(0, |p: usize| kp.frame_index - p);
        prev_frame = Some(kp.frame_index);
        keyposes.push(LabeledKeypose {
            keypose: kp.clone(),
            label,
            duration_frames: duration,
        });
    }
    LabeledTrack {
        keyposes,
        action: track.action.clone(),
    }
}

/// Drop interior keyposes whose label equals both neighbours' labels,
/// repeating until no such keypose remains, then recompute durations from
/// the surviving frame indices. Endpoints are never removed.
pub fn prune_track(track: &LabeledTrack) -> LabeledTrack {
    let mut kept: Vec<LabeledKeypose> = track.keyposes.clone();
    loop {
        let before = kept.len();
        let mut i = 1;
        while i + 1 < kept.len() {
            if kept[i].label == kept[i - 1].label && kept[i].label == kept[i + 1].label {
                kept.remove(i);
            } else {
                i += 1;
            }
        }
        if kept.len() == before {
            break;
        }
    }
    let mut prev_frame = None;
    for kp in &mut kept {
        kp.duration_frames = prev_frame.map_or(0, |p: usize| kp.keypose.frame_index - p);
        prev_frame = Some(kp.keypose.frame_index);
    }
    LabeledTrack {
        keyposes: kept,
        action: track.action.clone(),
    }
}

// ---------------------------------------------------------------------------
// Duration categories

pub const DURATION_CATEGORY_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DurationCategory {
    VeryShort,
    Short,
    Medium,
    Long,
    VeryLong,
}

impl DurationCategory {
    pub const ALL: [DurationCategory; DURATION_CATEGORY_COUNT] = [
        DurationCategory::VeryShort,
        DurationCategory::Short,
        DurationCategory::Medium,
        DurationCategory::Long,
        DurationCategory::VeryLong,
    ];

    pub fn index(self) -> usize {
        match self {
            DurationCategory::VeryShort => 0,
            DurationCategory::Short => 1,
            DurationCategory::Medium => 2,
            DurationCategory::Long => 3,
            DurationCategory::VeryLong => 4,
        }
    }

    pub fn from_index(i: usize) -> DurationCategory {
        Self::ALL[i]
    }
}

/// Bucket a duration in frames. Upper bounds are inclusive: up to 4 is
/// very short, 5-10 short, 11-14 medium, 15-25 long, 26 and above very
/// long.
pub fn categorize_duration(d: usize) -> Result<DurationCategory> {
    if d < 1 {
        return Err(Error::invalid(
            "duration",
            format!("must be >= 1 frame, got {d}"),
        ));
    }
    Ok(match d {
        1..=4 => DurationCategory::VeryShort,
        5..=10 => DurationCategory::Short,
        11..=14 => DurationCategory::Medium,
        15..=25 => DurationCategory::Long,
        _ => DurationCategory::VeryLong,
    })
}

/// Fixed representative frame count per category: 3, 6, 12, 16, 25.
pub fn representative_duration(c: DurationCategory) -> usize {
    match c {
        DurationCategory::VeryShort => 3,
        DurationCategory::Short => 6,
        DurationCategory::Medium => 12,
        DurationCategory::Long => 16,
        DurationCategory::VeryLong => 25,
    }
}

// ---------------------------------------------------------------------------
// Model files (.kpc): versioned decimal text.

use std::path::Path;

const KPC_MAGIC: &str = "KPCLUSTER v1";

pub fn save_model(model: &ClusterModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut body = format!("{KPC_MAGIC}\nk {}\nj {}\n", model.k(), model.joint_count());
    for center in &model.centers {
        let coords: Vec<String> = center.flat().iter().map(|c| c.to_string()).collect();
        body.push_str(&coords.join(" "));
        body.push('\n');
    }
    crate::io::write_atomic(path, body.as_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ClusterModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(KPC_MAGIC) {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: KPC_MAGIC.into(),
        });
    }
    let parse_header = |line: Option<&str>, key: &str, lineno: usize| -> Result<usize> {
        line.and_then(|l| l.strip_prefix(key))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("expected `{key} <count>`"),
            })
    };
    let k = parse_header(lines.next(), "k ", 2)?;
    let j = parse_header(lines.next(), "j ", 3)?;
    let mut centers = Vec::with_capacity(k);
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let coords: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 4,
                    msg: format!("malformed number {t:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if coords.len() != j * 3 {
            return Err(Error::InconsistentColumns {
                path: path.to_path_buf(),
                line: idx + 4,
                expected: j * 3,
                got: coords.len(),
            });
        }
        centers.push(Pose::from_flat(&coords));
    }
    if centers.len() != k {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 2,
            msg: format!("expected {k} centers, found {}", centers.len()),
        });
    }
    Ok(ClusterModel { centers })
}

// ---------------------------------------------------------------------------
// Labeled track files: JSONL of {frame_index, label, duration, joints}.

#[derive(Serialize, Deserialize)]
struct JsonlLabeled {
    frame_index: usize,
    label: usize,
    duration: usize,
    joints: Vec<[f64; 3]>,
}

pub fn save_labeled_track(track: &LabeledTrack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut body = String::new();
    for kp in &track.keyposes {
        let rec = JsonlLabeled {
            frame_index: kp.keypose.frame_index,
            label: kp.label,
            duration: kp.duration_frames,
            joints: kp.keypose.value.joints.clone(),
        };
        body.push_str(&serde_json::to_string(&rec).expect("labeled keypose serializes"));
        body.push('\n');
    }
    crate::io::write_atomic(path, body.as_bytes())?;
    let meta = track
        .action
        .as_deref()
        .map(|a| format!("action={a}\n"))
        .unwrap_or_default();
    let mut meta_os = path.as_os_str().to_os_string();
    meta_os.push(".meta");
    crate::io::write_atomic(std::path::Path::new(&meta_os), meta.as_bytes())
}

pub fn load_labeled_track(path: impl AsRef<Path>) -> Result<LabeledTrack> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut keyposes = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let rec: JsonlLabeled = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        keyposes.push(LabeledKeypose {
            keypose: Keypose {
                frame_index: rec.frame_index,
                value: Pose::new(rec.joints),
            },
            label: rec.label,
            duration_frames: rec.duration,
        });
    }
    if keyposes.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    let mut meta_os = path.as_os_str().to_os_string();
    meta_os.push(".meta");
    let meta_path = std::path::PathBuf::from(meta_os);
    let mut action = None;
    if meta_path.exists() {
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        for line in text.lines() {
            if let Some(("action", v)) = line.trim().split_once('=') {
                action = Some(v.to_string());
            }
        }
    }
    Ok(LabeledTrack { keyposes, action })
}
