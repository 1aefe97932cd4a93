use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorize::{DEFAULT_MAX_ITER, DEFAULT_SCALES};
use crate::foresight::{ForesightConfig, RolloutConfig};
use crate::policy::PolicyConfig;
use crate::world::GridSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Foresight,
    Policy,
}

/// What the policy's object branch receives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Prototypes of the current frame and of every predicted frame.
    Full,
    /// Prototypes of the current frame only; no rollout.
    CurrentFrameOa,
    /// One mean-pooled token per frame (current and predicted).
    ForesightFullFrame,
    /// Empty object branch.
    NoConditioning,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::CurrentFrameOa,
        Variant::ForesightFullFrame,
        Variant::NoConditioning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::CurrentFrameOa => "current-frame-oa",
            Variant::ForesightFullFrame => "foresight-full-frame",
            Variant::NoConditioning => "no-conditioning",
        }
    }

    pub fn uses_foresight(self) -> bool {
        matches!(self, Variant::Full | Variant::ForesightFullFrame)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForesightArch {
    pub n_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for ForesightArch {
    fn default() -> Self {
        let c = ForesightConfig::default();
        ForesightArch {
            n_layers: c.n_layers,
            hidden: c.hidden,
            heads: c.heads,
            mlp_ratio: c.mlp_ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyArch {
    pub n_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub chunk_len: usize,
    pub n_tasks: usize,
}

impl Default for PolicyArch {
    fn default() -> Self {
        let c = PolicyConfig::default();
        PolicyArch {
            n_layers: c.n_layers,
            hidden: c.hidden,
            heads: c.heads,
            mlp_ratio: c.mlp_ratio,
            chunk_len: c.chunk_len,
            n_tasks: c.n_tasks,
        }
    }
}

/// How condition tokens are assembled from observed frames, shared by
/// Stage II training and closed-loop evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Conditioning {
    pub variant: Variant,
    /// Observed frames handed to the foresight model.
    pub context_frames: usize,
    /// Ticks between consecutive foresight frames.
    pub frame_stride: usize,
    pub rollout: RolloutConfig,
    pub scales: Vec<usize>,
    pub max_iter: usize,
    /// Euler steps of the action sampler.
    pub action_steps: usize,
    /// Actions executed from each sampled chunk before re-planning.
    pub execute_steps: usize,
}

impl Default for Conditioning {
    fn default() -> Self {
        Conditioning {
            variant: Variant::Full,
            context_frames: 2,
            frame_stride: 1,
            rollout: RolloutConfig::default(),
            scales: DEFAULT_SCALES.to_vec(),
            max_iter: DEFAULT_MAX_ITER,
            action_steps: 4,
            execute_steps: 8,
        }
    }
}

impl Conditioning {
    pub fn validate(&self) -> Result<()> {
        if self.context_frames == 0 || self.frame_stride == 0 {
            return Err(Error::InvalidArgument("context_frames and frame_stride must be >= 1".into()));
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return Err(Error::InvalidArgument("cluster scales must be non-empty and positive".into()));
        }
        if self.action_steps == 0 || self.execute_steps == 0 {
            return Err(Error::InvalidArgument("action_steps and execute_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Training run description; every field has a default so a config file
/// only lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    /// `None` picks the stage default.
    pub weight_decay: Option<f64>,
    pub steps: usize,
    pub batch_size: usize,
    /// Frames per Stage I training sub-sequence; also the foresight frame
    /// budget at inference.
    pub horizon: usize,
    pub foresight: ForesightArch,
    pub policy: PolicyArch,
    pub conditioning: Conditioning,
    /// Stage II uses every `sample_stride`-th tick of each demo.
    pub sample_stride: usize,
    pub precision: String,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::Foresight,
            dataset: None,
            seed: 0,
            learning_rate: 1e-4,
            lr_schedule: LrSchedule::Constant,
            weight_decay: None,
            steps: 1000,
            batch_size: 8,
            horizon: 10,
            foresight: ForesightArch::default(),
            policy: PolicyArch::default(),
            conditioning: Conditioning::default(),
            sample_stride: 1,
            precision: "f64".into(),
            log_every: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate down to zero over the run.
    Cosine,
}

impl TrainConfig {
    /// Learning rate for optimizer step `step` of `cfg.steps`.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let frac = step as f64 / self.steps.max(1) as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay.unwrap_or(match self.stage {
            Stage::Foresight => 0.0,
            Stage::Policy => 1e-5,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.precision != "f64" {
            return Err(Error::InvalidArgument(format!("precision {:?} is not supported (only \"f64\")", self.precision)));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay() >= 0.0) {
            return Err(Error::InvalidArgument("learning rate must be > 0 and weight decay >= 0".into()));
        }
        if self.batch_size == 0 || self.horizon == 0 || self.sample_stride == 0 || self.log_every == 0 {
            return Err(Error::InvalidArgument("batch_size, horizon, sample_stride and log_every must be >= 1".into()));
        }
        self.conditioning.validate()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn foresight_config(&self, grid: &GridSpec) -> ForesightConfig {
        ForesightConfig {
            n_layers: self.foresight.n_layers,
            hidden: self.foresight.hidden,
            heads: self.foresight.heads,
            mlp_ratio: self.foresight.mlp_ratio,
            max_frames: self.horizon,
            patch_rows: grid.patch_rows,
            patch_cols: grid.patch_cols,
            feat_dim: grid.feat_dim,
        }
    }

    pub fn policy_config(&self, feat_dim: usize) -> PolicyConfig {
        PolicyConfig {
            n_layers: self.policy.n_layers,
            hidden: self.policy.hidden,
            heads: self.policy.heads,
            mlp_ratio: self.policy.mlp_ratio,
            chunk_len: self.policy.chunk_len,
            action_dim: crate::world::ACTION_DIM,
            state_dim: crate::world::STATE_DIM,
            n_tasks: self.policy.n_tasks,
            feat_dim,
        }
    }
}
