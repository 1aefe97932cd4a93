use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{GridSpec, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    StaticTarget,
    MovingTarget,
}

/// One scenario in a scenario file, built from a preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub preset: Preset,
    pub task_id: usize,
    #[serde(default)]
    pub layout_seed: u64,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub episode_length: Option<usize>,
}

impl ScenarioSpec {
    pub fn build(&self) -> Result<Scenario> {
        let mut s = match self.preset {
            Preset::StaticTarget => Scenario::static_target(self.task_id, self.layout_seed),
            Preset::MovingTarget => Scenario::moving_target(self.task_id, self.layout_seed),
        };
        if let Some(g) = self.grid {
            s = s.with_grid(g, self.layout_seed)?;
        }
        if let Some(n) = self.episode_length {
            s.episode_length = n;
        }
        s.validate()?;
        Ok(s)
    }
}

/// `{"scenarios": [...], "episodes": n}`; `episodes` is used by `gen-data`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub scenarios: Vec<ScenarioSpec>,
    #[serde(default)]
    pub episodes: Option<usize>,
}

impl ScenarioFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: ScenarioFile = serde_json::from_str(&text)?;
        if f.scenarios.is_empty() {
            return Err(Error::InvalidArgument(format!("{} lists no scenarios", path.display())));
        }
        Ok(f)
    }

    pub fn build(&self) -> Result<Vec<Scenario>> {
        self.scenarios.iter().map(ScenarioSpec::build).collect()
    }
}
