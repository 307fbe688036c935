//! Pipeline configuration.
//!
//! A flat `[section] key = value` text file, one section per stage. Every
//! field has a default, so an empty (or absent) file runs the reference
//! settings: 500 mm extraction threshold, 1000 clusters, hidden size 512,
//! Adam at 1e-4 with 0.01 decay, batch 64, 100 epochs, loss weights
//! 1.0/0.1, tokenization temperature 0.03 with noise 0.1, sampling
//! temperature 0.3, 7 observed / 12 predicted keyposes, scheduled
//! sampling k = 10, 5-second horizon at 25 fps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{SchedUnit, TrainConfig};
use crate::predict::{Anchor, RolloutParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataSection,
    pub extract: ExtractSection,
    pub cluster: ClusterSection,
    pub net: NetSection,
    pub train: TrainSection,
    pub predict: PredictSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    pub threshold_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub k: usize,
    pub max_iters: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub hidden_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub w_labels: f64,
    pub w_dur: f64,
    pub obs_keyposes: usize,
    pub pred_keyposes: usize,
    pub sched_k: f64,
    /// "epoch" or "iteration": what the scheduled-sampling index counts.
    pub sched_unit: String,
    pub past_supervision: bool,
    pub train_temperature: f64,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub sample_temperature: f64,
    pub horizon_s: f64,
    pub n_samples: usize,
    /// "center" interpolates from the last observed keypose's cluster
    /// center, "value" from its raw pose.
    pub anchor: String,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            fps: crate::pose::DEFAULT_FPS,
        }
    }
}

impl Default for ExtractSection {
    fn default() -> Self {
        ExtractSection {
            threshold_mm: 500.0,
        }
    }
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            k: 1000,
            max_iters: crate::cluster::KMEANS_DEFAULT_MAX_ITERS,
            tol: crate::cluster::KMEANS_DEFAULT_TOL,
        }
    }
}

impl Default for NetSection {
    fn default() -> Self {
        NetSection {
            hidden_size: crate::net::DEFAULT_HIDDEN_SIZE,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            epochs: t.epochs,
            w_labels: t.w_labels,
            w_dur: t.w_dur,
            obs_keyposes: t.obs_keyposes,
            pred_keyposes: t.pred_keyposes,
            sched_k: t.sched_k,
            sched_unit: "epoch".into(),
            past_supervision: t.past_supervision,
            train_temperature: t.train_temperature,
            noise_std: t.noise_std,
        }
    }
}

impl Default for PredictSection {
    fn default() -> Self {
        PredictSection {
            sample_temperature: crate::predict::DEFAULT_SAMPLE_TEMPERATURE,
            horizon_s: 5.0,
            n_samples: 100,
            anchor: "center".into(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e,
        })
    }

    pub fn parse(text: &str) -> std::result::Result<PipelineConfig, String> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.data.fps > 0.0) {
            return Err(Error::invalid("config", "data.fps must be > 0"));
        }
        if !(self.extract.threshold_mm > 0.0) {
            return Err(Error::invalid("config", "extract.threshold_mm must be > 0"));
        }
        if self.cluster.k < 1 {
            return Err(Error::invalid("config", "cluster.k must be >= 1"));
        }
        if self.net.hidden_size < 1 {
            return Err(Error::invalid("config", "net.hidden_size must be >= 1"));
        }
        if !(self.predict.horizon_s > 0.0) || !(self.predict.sample_temperature > 0.0) {
            return Err(Error::invalid(
                "config",
                "predict.horizon_s and predict.sample_temperature must be > 0",
            ));
        }
        if self.predict.n_samples < 1 {
            return Err(Error::invalid("config", "predict.n_samples must be >= 1"));
        }
        self.sched_unit()?;
        self.anchor()?;
        self.train_config()?.validate()?;
        Ok(())
    }

    pub fn sched_unit(&self) -> Result<SchedUnit> {
        match self.train.sched_unit.as_str() {
            "epoch" => Ok(SchedUnit::Epoch),
            "iteration" => Ok(SchedUnit::Iteration),
            other => Err(Error::invalid(
                "config",
                format!("train.sched_unit must be \"epoch\" or \"iteration\", got {other:?}"),
            )),
        }
    }

    pub fn anchor(&self) -> Result<Anchor> {
        match self.predict.anchor.as_str() {
            "center" => Ok(Anchor::LastObservedCenter),
            "value" => Ok(Anchor::LastObservedValue),
            other => Err(Error::invalid(
                "config",
                format!("predict.anchor must be \"center\" or \"value\", got {other:?}"),
            )),
        }
    }

    pub fn horizon_frames(&self) -> usize {
        (self.predict.horizon_s * self.data.fps).round() as usize
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            lr: self.train.lr,
            weight_decay: self.train.weight_decay,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            w_labels: self.train.w_labels,
            w_dur: self.train.w_dur,
            obs_keyposes: self.train.obs_keyposes,
            pred_keyposes: self.train.pred_keyposes,
            sched_k: self.train.sched_k,
            sched_unit: self.sched_unit()?,
            past_supervision: self.train.past_supervision,
            train_temperature: self.train.train_temperature,
            noise_std: self.train.noise_std,
        })
    }

    pub fn rollout_params(&self) -> Result<RolloutParams> {
        Ok(RolloutParams {
            obs_keyposes: self.train.obs_keyposes,
            horizon_frames: self.horizon_frames(),
            token_temperature: self.train.train_temperature,
            anchor: self.anchor()?,
            frame_rate_hz: self.data.fps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_reproduces_reference_settings() {
        let cfg = PipelineConfig::parse("").unwrap();
        assert_eq!(cfg.extract.threshold_mm, 500.0);
        assert_eq!(cfg.cluster.k, 1000);
        assert_eq!(cfg.net.hidden_size, 512);
        assert_eq!(cfg.train.lr, 1e-4);
        assert_eq!(cfg.train.weight_decay, 0.01);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.train.epochs, 100);
        assert_eq!(cfg.train.w_labels, 1.0);
        assert_eq!(cfg.train.w_dur, 0.1);
        assert_eq!(cfg.train.obs_keyposes, 7);
        assert_eq!(cfg.train.pred_keyposes, 12);
        assert_eq!(cfg.train.sched_k, 10.0);
        assert!(cfg.train.past_supervision);
        assert_eq!(cfg.train.train_temperature, 0.03);
        assert_eq!(cfg.train.noise_std, 0.1);
        assert_eq!(cfg.predict.sample_temperature, 0.3);
        assert_eq!(cfg.predict.horizon_s, 5.0);
        assert_eq!(cfg.predict.n_samples, 100);
        assert_eq!(cfg.data.fps, 25.0);
        assert_eq!(cfg.horizon_frames(), 125);
    }

    #[test]
    fn sections_override_fields() {
        let cfg = PipelineConfig::parse(
            "seed = 9\n\n[extract]\nthreshold_mm = 30.0\n\n[cluster]\nk = 12\n\n[train]\nepochs = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.extract.threshold_mm, 30.0);
        assert_eq!(cfg.cluster.k, 12);
        assert_eq!(cfg.train.epochs, 3);
        // untouched sections keep their defaults
        assert_eq!(cfg.net.hidden_size, 512);
    }

    #[test]
    fn dataset_presets_parse_with_expected_scales() {
        let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../..");
        let h36m = PipelineConfig::load(format!("{root}/configs/h36m.toml")).unwrap();
        assert_eq!(h36m.extract.threshold_mm, 500.0);
        assert_eq!(h36m.cluster.k, 1000);
        assert_eq!(h36m, PipelineConfig::default());

        let cmu = PipelineConfig::load(format!("{root}/configs/cmu.toml")).unwrap();
        assert_eq!(cmu.extract.threshold_mm, 250.0);
        assert_eq!(cmu.cluster.k, 100);

        PipelineConfig::load(format!("{root}/configs/desk.toml")).unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::parse("[cluster]\nclusters = 5\n").is_err());
        assert!(PipelineConfig::parse("[clustre]\nk = 5\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(PipelineConfig::parse("[extract]\nthreshold_mm = -1.0\n").is_err());
        assert!(PipelineConfig::parse("[train]\nsched_unit = \"step\"\n").is_err());
        assert!(PipelineConfig::parse("[predict]\nanchor = \"middle\"\n").is_err());
    }
}
