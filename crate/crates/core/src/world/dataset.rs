//! Demonstration datasets and their on-disk layout.
//!
//! A dataset directory holds:
//!
//! * `manifest.json` – counts, dims and per-episode metadata ([`Manifest`]).
//! * `latents.bin`   – f32le, `[n_episodes, frames, rows*cols, feat_dim]`.
//! * `states.bin`    – f32le, `[n_episodes, frames, state_dim]`.
//! * `actions.bin`   – f32le, `[n_episodes, frames, action_dim]`; the last
//!   action of each episode is a terminal no-op.
//! * `tasks.bin`     – u32le, `[n_episodes]`.
//!
//! All arrays are row-major and episode-major with no padding or headers.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sim::{ACTION_DIM, STATE_DIM};
use super::{encode_frame, is_success, reset, scripted_expert, step, FeatureGrid, Scenario};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub task_id: usize,
    pub frames: Vec<FeatureGrid>,
    pub states: Vec<[f64; STATE_DIM]>,
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub success: bool,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub n_episodes: usize,
    pub frames_per_episode: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub feat_dim: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub dtype: String,
    pub success: Vec<bool>,
    pub seeds: Vec<u64>,
    pub task_ids: Vec<usize>,
}

impl Manifest {
    pub fn tokens(&self) -> usize {
        self.patch_rows * self.patch_cols
    }
}

/// Runs the scripted expert for one episode, recording every tick.
pub fn record_expert_episode(scenario: &Scenario, seed: u64) -> Result<EpisodeRecord> {
    let mut st = reset(scenario, seed)?;
    let n = scenario.episode_length;
    let mut rec = EpisodeRecord {
        seed,
        task_id: scenario.task_id,
        frames: Vec::with_capacity(n),
        states: Vec::with_capacity(n),
        actions: Vec::with_capacity(n),
        success: false,
    };
    for t in 0..n {
        rec.frames.push(encode_frame(&st, scenario));
        rec.states.push(st.robot_state());
        if t + 1 == n {
            rec.actions.push([0.0, 0.0, st.robot_state()[2]]);
        } else {
            let a = scripted_expert(&st, scenario);
            rec.actions.push(a);
            st = step(&st, scenario, a)?;
        }
    }
    rec.success = is_success(&st, scenario);
    Ok(rec)
}

fn push_f32(buf: &mut Vec<u8>, vals: impl IntoIterator<Item = f64>) {
    for v in vals {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Records `n_episodes` expert episodes (cycling through `scenarios`) and
/// writes them to `out`.
pub fn generate_dataset(scenarios: &[Scenario], n_episodes: usize, seed: u64, out: &Path) -> Result<Manifest> {
    if n_episodes > 0 && scenarios.is_empty() {
        return Err(Error::InvalidArgument("no scenarios given".into()));
    }
    if let Some(first) = scenarios.first() {
        if scenarios
            .iter()
            .any(|s| s.grid != first.grid || s.episode_length != first.episode_length)
        {
            return Err(Error::Geometry("all scenarios must share grid and episode length".into()));
        }
    }
    let grid = scenarios.first().map(|s| s.grid).unwrap_or_default();
    let frames = scenarios.first().map_or(0, |s| s.episode_length);
    let episodes = (0..n_episodes)
        .map(|e| record_expert_episode(&scenarios[e % scenarios.len()], derive_seed(seed, &[e as u64])))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        version: DATASET_VERSION,
        n_episodes,
        frames_per_episode: frames,
        patch_rows: grid.patch_rows,
        patch_cols: grid.patch_cols,
        feat_dim: grid.feat_dim,
        state_dim: STATE_DIM,
        action_dim: ACTION_DIM,
        dtype: "f32le".into(),
        success: episodes.iter().map(|e| e.success).collect(),
        seeds: episodes.iter().map(|e| e.seed).collect(),
        task_ids: episodes.iter().map(|e| e.task_id).collect(),
    };
    write_dataset(out, &manifest, &episodes)?;
    Ok(manifest)
}

pub fn write_dataset(out: &Path, manifest: &Manifest, episodes: &[EpisodeRecord]) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (mut lat, mut sta, mut act, mut tsk) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for ep in episodes {
        for f in &ep.frames {
            push_f32(&mut lat, f.tokens.data().iter().copied());
        }
        push_f32(&mut sta, ep.states.iter().flatten().copied());
        push_f32(&mut act, ep.actions.iter().flatten().copied());
        tsk.extend_from_slice(&(ep.task_id as u32).to_le_bytes());
    }
    let json = serde_json::to_string_pretty(manifest)?;
    write_file(&out.join("manifest.json"), json.as_bytes())?;
    write_file(&out.join("latents.bin"), &lat)?;
    write_file(&out.join("states.bin"), &sta)?;
    write_file(&out.join("actions.bin"), &act)?;
    write_file(&out.join("tasks.bin"), &tsk)
}

/// A loaded dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub episodes: Vec<EpisodeRecord>,
}

fn read_f32(path: &Path, expect: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expect * 4 {
        return Err(Error::Dataset(format!(
            "{} has {} bytes, manifest implies {}",
            path.display(),
            bytes.len(),
            expect * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

impl Dataset {
    /// Loads every episode, including failed ones.
    pub fn load_all(dir: &Path) -> Result<Dataset> {
        let mpath = dir.join("manifest.json");
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.version != DATASET_VERSION || m.dtype != "f32le" {
            return Err(Error::Dataset(format!("unsupported dataset version {} / {}", m.version, m.dtype)));
        }
        if m.state_dim != STATE_DIM || m.action_dim != ACTION_DIM {
            return Err(Error::Dataset("state/action dims do not match this build".into()));
        }
        let (n, t, l, d) = (m.n_episodes, m.frames_per_episode, m.tokens(), m.feat_dim);
        if m.success.len() != n || m.seeds.len() != n || m.task_ids.len() != n {
            return Err(Error::Dataset("per-episode metadata length mismatch".into()));
        }
        let lat = read_f32(&dir.join("latents.bin"), n * t * l * d)?;
        let sta = read_f32(&dir.join("states.bin"), n * t * STATE_DIM)?;
        let act = read_f32(&dir.join("actions.bin"), n * t * ACTION_DIM)?;
        let tpath = dir.join("tasks.bin");
        let tb = fs::read(&tpath).map_err(|e| Error::io(&tpath, e))?;
        if tb.len() != n * 4 {
            return Err(Error::Dataset("tasks.bin length mismatch".into()));
        }
        let mut episodes = Vec::with_capacity(n);
        for e in 0..n {
            let frames = (0..t)
                .map(|f| {
                    let o = (e * t + f) * l * d;
                    FeatureGrid {
                        tokens: Tensor::matrix(l, d, lat[o..o + l * d].to_vec()).expect("sized"),
                        frame_index: f,
                    }
                })
                .collect();
            let row3 = |v: &[f64], f: usize| {
                let o = (e * t + f) * 3;
                [v[o], v[o + 1], v[o + 2]]
            };
            let task = u32::from_le_bytes([tb[4 * e], tb[4 * e + 1], tb[4 * e + 2], tb[4 * e + 3]]) as usize;
            if task != m.task_ids[e] {
                return Err(Error::Dataset(format!("episode {e}: tasks.bin disagrees with manifest")));
            }
            episodes.push(EpisodeRecord {
                seed: m.seeds[e],
                task_id: task,
                frames,
                states: (0..t).map(|f| row3(&sta, f)).collect(),
                actions: (0..t).map(|f| row3(&act, f)).collect(),
                success: m.success[e],
            });
        }
        Ok(Dataset { manifest: m, episodes })
    }

    /// Loads and drops failed expert episodes.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let mut ds = Self::load_all(dir)?;
        ds.episodes.retain(|e| e.success);
        Ok(ds)
    }

    pub fn tokens(&self) -> usize {
        self.manifest.tokens()
    }

    pub fn feat_dim(&self) -> usize {
        self.manifest.feat_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dataset_has_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&[Scenario::static_target(0, 1)], 0, 3, dir.path()).unwrap();
        assert_eq!(m.n_episodes, 0);
        let ds = Dataset::load_all(dir.path()).unwrap();
        assert!(ds.episodes.is_empty());
    }

    #[test]
    fn generation_is_byte_identical() {
        let mut s = Scenario::static_target(0, 1);
        s.episode_length = 30;
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_dataset(&[s.clone()], 3, 9, a.path()).unwrap();
        generate_dataset(&[s], 3, 9, b.path()).unwrap();
        for f in ["manifest.json", "latents.bin", "states.bin", "actions.bin", "tasks.bin"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn thirty_static_demos_mostly_succeed() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&[Scenario::static_target(0, 1)], 30, 2, dir.path()).unwrap();
        assert!(m.success.iter().filter(|&&s| s).count() >= 28);
    }

    #[test]
    fn roundtrip_and_failed_filtering() {
        let mut s = Scenario::static_target(0, 1);
        s.episode_length = 12; // too short to finish
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&[s.clone()], 2, 1, dir.path()).unwrap();
        let all = Dataset::load_all(dir.path()).unwrap();
        assert_eq!(all.episodes.len(), 2);
        assert!(Dataset::load(dir.path()).unwrap().episodes.is_empty());
        let direct = record_expert_episode(&s, all.episodes[0].seed).unwrap();
        let ep = &all.episodes[0];
        assert_eq!(ep.len(), 12);
        for (a, b) in ep.frames[3].tokens.data().iter().zip(direct.frames[3].tokens.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(ep.actions[11][0], 0.0);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let mut s = Scenario::static_target(0, 1);
        s.episode_length = 5;
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&[s], 1, 1, dir.path()).unwrap();
        let p = dir.path().join("latents.bin");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(Dataset::load_all(dir.path()), Err(Error::Dataset(_))));
    }
}
