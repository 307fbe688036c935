//! Keypose tokenization: the distributions fed to the network.
//!
//! A keypose value becomes a label distribution in three steps: proximity
//! vector (negative mean per-joint distance to every cluster center),
//! scale normalization, and a tempered softmax. Raw proximities are in
//! millimeters and would saturate the softmax at the working temperature
//! of 0.03, so [`normalized_proximities`] rescales the vector by its mean
//! absolute value first; that normalization is the one place to change if
//! a different scaling is ever wanted. Training adds Gaussian noise to
//! the normalized proximities before the temperature is applied.

use crate::cluster::{
    categorize_duration, ClusterModel, DurationCategory, DURATION_CATEGORY_COUNT,
};
use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::rng::RngState;

pub const DEFAULT_TRAIN_TEMPERATURE: f64 = 0.03;
pub const DEFAULT_NOISE_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    pub probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DurationDistribution {
    pub probs: [f64; DURATION_CATEGORY_COUNT],
}

impl DurationDistribution {
    pub fn one_hot(category: DurationCategory) -> Self {
        let mut probs = [0.0; DURATION_CATEGORY_COUNT];
        probs[category.index()] = 1.0;
        DurationDistribution { probs }
    }

    pub fn argmax_category(&self) -> DurationCategory {
        DurationCategory::from_index(argmax(&self.probs))
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Entry `j` is the negative mean per-joint Euclidean distance between
/// the pose and center `j`, in millimeters.
pub fn proximity_vector(value: &Pose, model: &ClusterModel) -> Vec<f64> {
    model
        .centers
        .iter()
        .map(|c| -value.distance_mm(c))
        .collect()
}

/// Proximities rescaled by the vector's mean absolute value so the
/// entries are O(1) regardless of skeleton scale. An all-zero vector
/// (pose equal to every center) is returned unchanged.
pub fn normalized_proximities(value: &Pose, model: &ClusterModel) -> Vec<f64> {
    let mut prox = proximity_vector(value, model);
    let mean_abs = prox.iter().map(|p| p.abs()).sum::<f64>() / prox.len() as f64;
    if mean_abs > 0.0 {
        for p in &mut prox {
            *p /= mean_abs;
        }
    }
    prox
}

/// `softmax(values / temperature)` with max subtraction for stability.
pub fn tempered_softmax(values: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(
            "temperature",
            format!("must be > 0, got {temperature}"),
        ));
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values
        .iter()
        .map(|v| ((v - max) / temperature).exp())
        .collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    Ok(out)
}

/// Label distribution from a known keypose value (observed past, teacher
/// forcing). Deterministic; the training-time variant below adds noise.
pub fn label_distribution_from_value(
    value: &Pose,
    model: &ClusterModel,
    temperature: f64,
) -> Result<LabelDistribution> {
    let prox = normalized_proximities(value, model);
    Ok(LabelDistribution {
        probs: tempered_softmax(&prox, temperature)?,
    })
}

/// Training-time tokenization: Gaussian noise with the given std is added
/// to the normalized proximities before the temperature softmax. A std of
/// zero reduces to [`label_distribution_from_value`].
pub fn label_distribution_from_value_train(
    value: &Pose,
    model: &ClusterModel,
    temperature: f64,
    noise_std: f64,
    rng: &mut RngState,
) -> Result<LabelDistribution> {
    if noise_std < 0.0 {
        return Err(Error::invalid(
            "noise std",
            format!("must be >= 0, got {noise_std}"),
        ));
    }
    let mut prox = normalized_proximities(value, model);
    if noise_std > 0.0 {
        for p in &mut prox {
            *p += rng.gaussian(noise_std);
        }
    }
    Ok(LabelDistribution {
        probs: tempered_softmax(&prox, temperature)?,
    })
}

/// Label distribution from a predicted label: the same pipeline with the
/// cluster center standing in for the unknown value. Never noisy.
pub fn label_distribution_from_label(
    label: usize,
    model: &ClusterModel,
    temperature: f64,
) -> Result<LabelDistribution> {
    if label >= model.k() {
        return Err(Error::LabelOutOfRange {
            label,
            k: model.k(),
        });
    }
    label_distribution_from_value(&model.centers[label], model, temperature)
}

/// One-hot duration encoding over the five categories.
pub fn duration_onehot(d: usize) -> Result<DurationDistribution> {
    Ok(DurationDistribution::one_hot(categorize_duration(d)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::DurationCategory;

    fn model_1d(xs: &[f64]) -> ClusterModel {
        ClusterModel {
            centers: xs.iter().map(|&x| Pose::new(vec![[x, 0.0, 0.0]])).collect(),
        }
    }

    fn assert_distribution(probs: &[f64]) {
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
        assert!(probs.iter().all(|&p| p >= 0.0 && p.is_finite()));
    }

    #[test]
    fn proximity_zero_at_own_center() {
        let model = model_1d(&[0.0, 5.0, -3.0]);
        let prox = proximity_vector(&Pose::new(vec![[5.0, 0.0, 0.0]]), &model);
        assert_eq!(prox[1], 0.0);
        assert!(prox[0] < 0.0 && prox[2] < 0.0);
    }

    #[test]
    fn proximity_345_triangle() {
        let model = ClusterModel {
            centers: vec![Pose::new(vec![[3.0, 4.0, 0.0]])],
        };
        let prox = proximity_vector(&Pose::new(vec![[0.0, 0.0, 0.0]]), &model);
        assert_eq!(prox, vec![-5.0]);
    }

    #[test]
    fn proximity_matches_direct_definition() {
        use rand::Rng;
        let mut rng = RngState::new(4);
        let centers: Vec<Pose> = (0..6)
            .map(|_| {
                Pose::new(
                    (0..2)
                        .map(|_| {
                            [
                                rng.random_range(-100.0..100.0),
                                rng.random_range(-100.0..100.0),
                                rng.random_range(-100.0..100.0),
                            ]
                        })
                        .collect(),
                )
            })
            .collect();
        let model = ClusterModel { centers };
        for _ in 0..20 {
            let pose = Pose::new(
                (0..2)
                    .map(|_| {
                        [
                            rng.random_range(-100.0..100.0),
                            rng.random_range(-100.0..100.0),
                            rng.random_range(-100.0..100.0),
                        ]
                    })
                    .collect(),
            );
            let prox = proximity_vector(&pose, &model);
            for (j, center) in model.centers.iter().enumerate() {
                // independent recomputation, raw loops
                let mut sum = 0.0;
                for (a, b) in pose.joints.iter().zip(center.joints.iter()) {
                    sum += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2))
                        .sqrt();
                }
                let expect = -sum / pose.joint_count() as f64;
                assert!((prox[j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_direct_evaluation() {
        // normalized proximities (0, -1) at temperature 1
        let probs = tempered_softmax(&[0.0, -1.0], 1.0).unwrap();
        let e = (-1.0f64).exp();
        assert!((probs[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((probs[1] - e / (1.0 + e)).abs() < 1e-12);
        assert!((probs[0] - 0.731).abs() < 1e-3);
        assert!((probs[1] - 0.269).abs() < 1e-3);
    }

    #[test]
    fn softmax_rejects_non_positive_temperature() {
        assert!(tempered_softmax(&[0.0, 1.0], 0.0).is_err());
        assert!(tempered_softmax(&[0.0, 1.0], -0.3).is_err());
    }

    #[test]
    fn value_on_center_wins_argmax() {
        let model = model_1d(&[0.0, 50.0, 120.0]);
        let dist = label_distribution_from_value(&Pose::new(vec![[50.0, 0.0, 0.0]]), &model, 0.03)
            .unwrap();
        assert_distribution(&dist.probs);
        assert_eq!(dist.argmax(), 1);
    }

    #[test]
    fn equidistant_centers_split_mass_evenly() {
        let model = model_1d(&[-10.0, 10.0]);
        let dist =
            label_distribution_from_value(&Pose::new(vec![[0.0, 0.0, 0.0]]), &model, 0.03).unwrap();
        assert!((dist.probs[0] - 0.5).abs() < 1e-12);
        assert!((dist.probs[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn from_label_argmax_is_the_label() {
        let model = model_1d(&[0.0, 30.0, -45.0, 80.0]);
        for l in 0..4 {
            let dist = label_distribution_from_label(l, &model, 0.03).unwrap();
            assert_distribution(&dist.probs);
            assert_eq!(dist.argmax(), l);
        }
    }

    #[test]
    fn from_label_k1_is_certain() {
        let model = model_1d(&[7.0]);
        let dist = label_distribution_from_label(0, &model, 0.03).unwrap();
        assert_eq!(dist.probs, vec![1.0]);
    }

    #[test]
    fn from_label_equals_from_value_at_center() {
        let model = model_1d(&[0.0, 25.0, 60.0]);
        for l in 0..3 {
            let a = label_distribution_from_label(l, &model, 0.03).unwrap();
            let b = label_distribution_from_value(&model.centers[l], &model, 0.03).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn from_label_out_of_range_errors() {
        let model = model_1d(&[0.0]);
        assert!(label_distribution_from_label(1, &model, 0.03).is_err());
    }

    #[test]
    fn noisy_with_zero_std_equals_deterministic() {
        let model = model_1d(&[0.0, 20.0, -30.0]);
        let pose = Pose::new(vec![[4.0, 1.0, -2.0]]);
        let mut rng = RngState::new(0);
        let a = label_distribution_from_value(&pose, &model, 0.03).unwrap();
        let b = label_distribution_from_value_train(&pose, &model, 0.03, 0.0, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_is_deterministic_given_rng() {
        let model = model_1d(&[0.0, 20.0, -30.0]);
        let pose = Pose::new(vec![[4.0, 1.0, -2.0]]);
        let a =
            label_distribution_from_value_train(&pose, &model, 0.03, 0.1, &mut RngState::new(5))
                .unwrap();
        let b =
            label_distribution_from_value_train(&pose, &model, 0.03, 0.1, &mut RngState::new(5))
                .unwrap();
        assert_eq!(a, b);
        assert_distribution(&a.probs);
    }

    #[test]
    fn low_temperature_concentrates_mass() {
        let model = model_1d(&[0.0, 18.0, 31.0, -40.0]);
        let pose = Pose::new(vec![[17.0, 0.0, 0.0]]);
        let dist = label_distribution_from_value(&pose, &model, 1e-4).unwrap();
        assert!(dist.probs[dist.argmax()] > 0.999);
    }

    #[test]
    fn temperature_never_moves_the_argmax() {
        let model = model_1d(&[0.0, 18.0, 31.0, -40.0]);
        let pose = Pose::new(vec![[12.0, 3.0, -1.0]]);
        let reference = label_distribution_from_value(&pose, &model, 0.03)
            .unwrap()
            .argmax();
        for temp in [1e-4, 0.03, 0.3, 1.0, 10.0] {
            let dist = label_distribution_from_value(&pose, &model, temp).unwrap();
            assert_eq!(
                dist.argmax(),
                reference,
                "argmax moved at temperature {temp}"
            );
        }
    }

    #[test]
    fn duration_onehots() {
        assert_eq!(duration_onehot(3).unwrap().probs, [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            duration_onehot(12).unwrap().probs,
            [0.0, 0.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(
            duration_onehot(26).unwrap().probs,
            [0.0, 0.0, 0.0, 0.0, 1.0]
        );
        assert!(duration_onehot(0).is_err());
        assert_eq!(
            DurationDistribution::one_hot(DurationCategory::VeryLong).argmax_category(),
            DurationCategory::VeryLong
        );
    }
}
