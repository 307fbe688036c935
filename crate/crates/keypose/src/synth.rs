//! Synthetic motion families for testing and desk-scale experiments.
//!
//! Each action index selects a closed-form trajectory (sinusoids plus a
//! triangle ramp, parameters derived arithmetically from the action and
//! joint indices), and sequences of that action are the family trajectory
//! plus i.i.d. Gaussian jitter. Family means are therefore known exactly,
//! which the separability tests rely on.

use crate::error::{Error, Result};
use crate::pose::{MotionSequence, Pose, DEFAULT_FPS};
use crate::rng::RngState;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_actions: usize,
    pub seqs_per_action: usize,
    pub frames: usize,
    pub joints: usize,
    pub noise_std_mm: f64,
    pub frame_rate_hz: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_actions: 2,
            seqs_per_action: 4,
            frames: 250,
            joints: 3,
            noise_std_mm: 0.1,
            frame_rate_hz: DEFAULT_FPS,
        }
    }
}

/// Distance between neighbouring family means on the x axis, mm.
pub const FAMILY_GAP_MM: f64 = 400.0;

/// The noiseless family trajectory for `action` at 1-based `frame`.
pub fn family_pose(spec: &SynthSpec, action: usize, frame: usize) -> Pose {
    let tau = (frame - 1) as f64 / spec.frame_rate_hz;
    let a = action as f64;
    let joints = (0..spec.joints)
        .map(|j| {
            let jf = j as f64;
            let f_sin = 0.5 + 0.3 * a + 0.2 * jf;
            let f_z = 0.8 + 0.2 * a + 0.1 * jf;
            let phase = 0.7 * a + 1.3 * jf;
            let ramp_period = 1.0 + 0.5 * a;
            [
                FAMILY_GAP_MM * a + 150.0 * (std::f64::consts::TAU * f_sin * tau + phase).sin(),
                100.0 * jf + 120.0 * triangle(tau / ramp_period),
                80.0 * (std::f64::consts::TAU * f_z * tau).sin(),
            ]
        })
        .collect();
    Pose::new(joints)
}

/// Triangle wave with period 1 and range [-1, 1], corner at phase 0.5.
fn triangle(u: f64) -> f64 {
    let frac = u - u.floor();
    4.0 * (frac - 0.5).abs() - 1.0
}

pub fn synth_dataset(spec: &SynthSpec, rng: &mut RngState) -> Result<Vec<MotionSequence>> {
    if spec.n_actions < 1 || spec.seqs_per_action < 1 || spec.frames < 2 || spec.joints < 1 {
        return Err(Error::invalid(
            "synth spec",
            "n_actions, seqs_per_action, joints must be >= 1 and frames >= 2",
        ));
    }
    if !(spec.noise_std_mm >= 0.0) || !(spec.frame_rate_hz > 0.0) {
        return Err(Error::invalid(
            "synth spec",
            "noise_std_mm must be >= 0 and frame_rate_hz > 0",
        ));
    }

    let mut out = Vec::with_capacity(spec.n_actions * spec.seqs_per_action);
    for action in 0..spec.n_actions {
        for _ in 0..spec.seqs_per_action {
            let frames = (1..=spec.frames)
                .map(|t| {
                    let mut pose = family_pose(spec, action, t);
                    if spec.noise_std_mm > 0.0 {
                        for joint in &mut pose.joints {
                            for c in joint.iter_mut() {
                                *c += rng.gaussian(spec.noise_std_mm);
                            }
                        }
                    }
                    pose
                })
                .collect();
            out.push(MotionSequence::new(
                frames,
                spec.frame_rate_hz,
                Some(format!("action_{action}")),
            ));
        }
    }
    Ok(out)
}
