//! Core domain types: a single 3D pose and a fixed-rate motion sequence.
//!
//! All coordinates are millimeters. Poses are immutable once built and a
//! sequence's frames all share the same joint count.

use serde::{Deserialize, Serialize};

/// Reference capture rate; 5 seconds of motion is 125 frames.
pub const DEFAULT_FPS: f64 = 25.0;

/// One frame's joint positions, `J` joints of `[x, y, z]` millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub joints: Vec<[f64; 3]>,
}

impl Pose {
    pub fn new(joints: Vec<[f64; 3]>) -> Self {
        Pose { joints }
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|j| j.iter().all(|c| c.is_finite()))
    }

    /// Mean over joints of the per-joint Euclidean distance, in mm.
    ///
    /// This is the pose error used throughout: keypose extraction,
    /// cluster labeling, proximity vectors and MPJPE all agree on it.
    pub fn distance_mm(&self, other: &Pose) -> f64 {
        debug_assert_eq!(self.joints.len(), other.joints.len());
        let j = self.joints.len();
        let mut sum = 0.0;
        for (a, b) in self.joints.iter().zip(other.joints.iter()) {
            let dx = a[0] - b[0];
            let dy = a[1] - b[1];
            let dz = a[2] - b[2];
            sum += (dx * dx + dy * dy + dz * dz).sqrt();
        }
        sum / j as f64
    }

    /// Flattened 3J coordinate view in joint-major order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.joints.len() * 3);
        for j in &self.joints {
            out.extend_from_slice(j);
        }
        out
    }

    pub fn from_flat(coords: &[f64]) -> Self {
        debug_assert_eq!(coords.len() % 3, 0);
        let joints = coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Pose { joints }
    }
}

/// Affine interpolation between two poses at integer frame `t`, where the
/// endpoints sit at frames `a < b`. Evaluated coordinate-wise as
/// `pa + (t - a) * (pb - pa) / (b - a)`; callers that need bit-identical
/// errors (extraction and its oracle) must both go through here.
pub fn lerp_pose(pa: &Pose, pb: &Pose, a: usize, b: usize, t: usize) -> Pose {
    debug_assert!(a < b && a <= t && t <= b);
    if t == a {
        return pa.clone();
    }
    if t == b {
        return pb.clone();
    }
    let off = (t - a) as f64;
    let span = (b - a) as f64;
    let joints = pa
        .joints
        .iter()
        .zip(pb.joints.iter())
        .map(|(ja, jb)| {
            [
                ja[0] + off * (jb[0] - ja[0]) / span,
                ja[1] + off * (jb[1] - ja[1]) / span,
                ja[2] + off * (jb[2] - ja[2]) / span,
            ]
        })
        .collect();
    Pose { joints }
}

/// An ordered list of poses captured at a fixed frame rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    pub frames: Vec<Pose>,
    pub frame_rate_hz: f64,
    pub action: Option<String>,
}

impl MotionSequence {
    pub fn new(frames: Vec<Pose>, frame_rate_hz: f64, action: Option<String>) -> Self {
        MotionSequence {
            frames,
            frame_rate_hz,
            action,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.frames.first().map_or(0, Pose::joint_count)
    }

    /// Frame by 1-based index.
    pub fn frame(&self, index: usize) -> &Pose {
        &self.frames[index - 1]
    }

    /// First `t0` frames as a new sequence (the "observed past").
    pub fn truncated(&self, t0: usize) -> MotionSequence {
        MotionSequence {
            frames: self.frames[..t0.min(self.frames.len())].to_vec(),
            frame_rate_hz: self.frame_rate_hz,
            action: self.action.clone(),
        }
    }

    /// Frames after `t0` re-indexed from 1 (the "ground-truth future").
    pub fn tail(&self, t0: usize) -> MotionSequence {
        MotionSequence {
            frames: self.frames[t0.min(self.frames.len())..].to_vec(),
            frame_rate_hz: self.frame_rate_hz,
            action: self.action.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_is_mean_per_joint() {
        // one joint offset by a 3-4-5 triangle, one exact
        let a = Pose::new(vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        let b = Pose::new(vec![[3.0, 4.0, 0.0], [1.0, 1.0, 1.0]]);
        assert_eq!(a.distance_mm(&b), 2.5);
    }

    #[test]
    fn distance_symmetry_and_zero() {
        let a = Pose::new(vec![[1.0, 2.0, 3.0]]);
        let b = Pose::new(vec![[-4.0, 0.5, 9.0]]);
        assert_eq!(a.distance_mm(&b), b.distance_mm(&a));
        assert_eq!(a.distance_mm(&a), 0.0);
    }

    #[test]
    fn lerp_endpoints_exact() {
        let a = Pose::new(vec![[0.0, 0.0, 0.0]]);
        let b = Pose::new(vec![[10.0, -2.0, 7.0]]);
        assert_eq!(lerp_pose(&a, &b, 1, 9, 1), a);
        assert_eq!(lerp_pose(&a, &b, 1, 9, 9), b);
    }

    #[test]
    fn lerp_midpoint() {
        let a = Pose::new(vec![[0.0, 0.0, 0.0]]);
        let b = Pose::new(vec![[10.0, 0.0, 0.0]]);
        let m = lerp_pose(&a, &b, 0, 5, 2);
        assert_eq!(m.joints[0], [4.0, 0.0, 0.0]);
    }

    #[test]
    fn flat_round_trip() {
        let p = Pose::new(vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(Pose::from_flat(&p.flat()), p);
    }
}
