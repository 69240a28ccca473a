//! Run configuration: a JSON file selecting the backend, corpus, and a
//! dimension preset, with optional per-field overrides. Loading then
//! re-emitting the effective config (every override resolved) must
//! reproduce the identical run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use pass_pilot_core::agent::{AgentConfig, TrainLoopConfig};
use pass_pilot_core::env::{ActionSpace, CompilerEnv, EnvConfig, Program, SyntheticEffectTable};
use pass_pilot_core::eval::{split_assignment, Split};
use pass_pilot_core::model::WorldModelConfig;
use pass_pilot_core::util::{derive_seed, Prng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Synthetic,
    Real,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSettings {
    pub actions: usize,
    pub counters: usize,
    pub programs: usize,
    pub corpus_seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSettings {
    pub backend: BackendKind,
    #[serde(default)]
    pub opt_path: Option<PathBuf>,
    #[serde(default)]
    pub action_space_file: Option<PathBuf>,
    pub episode_limit: usize,
    #[serde(default)]
    pub synthetic: Option<SyntheticSettings>,
    #[serde(default)]
    pub corpus_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub total_env_steps: usize,
    pub replay_capacity: usize,
    /// Environment steps between intermediate checkpoints; 0 keeps only the
    /// final one.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default = "one")]
    pub metrics_every: usize,
    /// When set, episodes execute sequences from this file instead of policy
    /// actions and the reward loss weight defaults to 100, the recipe for
    /// training a value-prediction model.
    #[serde(default)]
    pub coreset_file: Option<PathBuf>,
}

fn one() -> usize {
    1
}

/// Every knob that may deviate from the preset. Unset fields take the
/// preset value; the effective config has all of them set.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default)]
    pub h_dim: Option<usize>,
    #[serde(default)]
    pub groups: Option<usize>,
    #[serde(default)]
    pub classes: Option<usize>,
    #[serde(default)]
    pub wm_mlp_width: Option<usize>,
    #[serde(default)]
    pub wm_mlp_hidden_layers: Option<usize>,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub exploration_steps: Option<usize>,
    #[serde(default)]
    pub train_every: Option<usize>,
    #[serde(default)]
    pub agent_mlp_width: Option<usize>,
    #[serde(default)]
    pub agent_mlp_hidden_layers: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub batch_length: Option<usize>,
    #[serde(default)]
    pub imagination_starts: Option<usize>,
    #[serde(default)]
    pub reward_loss_scale: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub preset: Preset,
    pub env: EnvSettings,
    pub train: TrainSettings,
    #[serde(default)]
    pub overrides: Overrides,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.env.episode_limit == 0 {
            bail!("episode_limit must be at least 1");
        }
        match self.env.backend {
            BackendKind::Synthetic => {
                let syn = self
                    .env
                    .synthetic
                    .as_ref()
                    .context("synthetic backend needs an env.synthetic section")?;
                if syn.actions == 0 || syn.counters == 0 || syn.programs == 0 {
                    bail!("synthetic sizes must be positive");
                }
            }
            BackendKind::Real => {
                if self.env.corpus_dir.is_none() {
                    bail!("real backend needs env.corpus_dir");
                }
            }
        }
        Ok(())
    }

    pub fn action_space(&self) -> Result<ActionSpace> {
        if let Some(file) = &self.env.action_space_file {
            return Ok(ActionSpace::from_file(file)?);
        }
        match (&self.env.backend, &self.env.synthetic) {
            (BackendKind::Synthetic, Some(syn)) => Ok(ActionSpace::new(
                (0..syn.actions).map(|i| format!("-pass{i}")).collect(),
            )?),
            _ => Ok(ActionSpace::default_autophase()),
        }
    }

    /// The environment plus the program corpus, split-tagged in a fixed
    /// deterministic order.
    pub fn build_env(&self) -> Result<(CompilerEnv, Vec<(String, Program, Split)>)> {
        let space = self.action_space()?;
        match self.env.backend {
            BackendKind::Synthetic => {
                let syn = self.env.synthetic.as_ref().unwrap();
                if space.size() != syn.actions {
                    bail!(
                        "action space has {} entries but env.synthetic.actions is {}",
                        space.size(),
                        syn.actions
                    );
                }
                let table = self.synthetic_table(syn);
                let mut cfg = EnvConfig::synthetic(table.clone(), space);
                cfg.episode_limit = self.env.episode_limit;
                let env = CompilerEnv::new(cfg)?;
                let splits = split_assignment(syn.programs);
                let corpus = (0..syn.programs)
                    .map(|i| {
                        let mut rng = Prng::seed_from_u64(derive_seed(
                            syn.corpus_seed,
                            &format!("synthetic-program-{i}"),
                        ));
                        let counters: Vec<u64> =
                            (0..syn.counters).map(|_| rng.gen_range(15..=60)).collect();
                        let baseline = table.pipeline_baseline(&counters);
                        (
                            format!("syn-{i:03}"),
                            Program::synthetic(counters, baseline),
                            splits[i],
                        )
                    })
                    .collect();
                Ok((env, corpus))
            }
            BackendKind::Real => {
                let dir = self.env.corpus_dir.as_ref().unwrap();
                let mut cfg = EnvConfig::real(self.env.opt_path.clone(), space);
                cfg.episode_limit = self.env.episode_limit;
                let env = CompilerEnv::new(cfg)?;
                let corpus = pass_pilot_core::eval::Corpus::from_dir("corpus", dir)?;
                let mut out = Vec::with_capacity(corpus.files.len());
                for f in &corpus.files {
                    let text = fs::read_to_string(&f.path)?;
                    let id = f
                        .path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| f.path.display().to_string());
                    out.push((id, Program::ir(text), f.split));
                }
                Ok((env, out))
            }
        }
    }

    fn synthetic_table(&self, syn: &SyntheticSettings) -> SyntheticEffectTable {
        let mut rng = Prng::seed_from_u64(derive_seed(syn.corpus_seed, "synthetic-table"));
        SyntheticEffectTable::random(syn.actions, syn.counters, &mut rng)
    }

    pub fn model_config(&self, obs_dim: usize, action_dim: usize) -> WorldModelConfig {
        let mut m = match self.preset {
            Preset::Desk => WorldModelConfig::desk(action_dim),
            Preset::Paper => WorldModelConfig::paper(action_dim),
        };
        m.obs_dim = obs_dim;
        let o = &self.overrides;
        if let Some(v) = o.h_dim {
            m.h_dim = v;
        }
        if let Some(v) = o.groups {
            m.groups = v;
        }
        if let Some(v) = o.classes {
            m.classes = v;
        }
        if let Some(v) = o.wm_mlp_width {
            m.mlp_width = v;
        }
        if let Some(v) = o.wm_mlp_hidden_layers {
            m.mlp_hidden_layers = v;
        }
        if let Some(v) = o.reward_loss_scale {
            m.scale_reward = v;
        } else if self.train.coreset_file.is_some() {
            m.scale_reward = 100.0;
        }
        m
    }

    pub fn agent_config(&self) -> AgentConfig {
        let mut a = match self.preset {
            Preset::Desk => AgentConfig::desk(),
            Preset::Paper => AgentConfig::paper(),
        };
        let o = &self.overrides;
        if let Some(v) = o.horizon {
            a.horizon = v;
        }
        if let Some(v) = o.exploration_steps {
            a.exploration_steps = v;
        }
        if let Some(v) = o.train_every {
            a.train_every = v;
        }
        if let Some(v) = o.agent_mlp_width {
            a.mlp_width = v;
        }
        if let Some(v) = o.agent_mlp_hidden_layers {
            a.mlp_hidden_layers = v;
        }
        a
    }

    pub fn loop_config(&self) -> TrainLoopConfig {
        let mut l = match self.preset {
            Preset::Desk => TrainLoopConfig::desk(self.train.total_env_steps),
            Preset::Paper => TrainLoopConfig::paper(self.train.total_env_steps),
        };
        l.metrics_every = self.train.metrics_every.max(1);
        let o = &self.overrides;
        if let Some(v) = o.batch_size {
            l.batch_size = v;
        }
        if let Some(v) = o.batch_length {
            l.batch_length = v;
        }
        if let Some(v) = o.imagination_starts {
            l.imagination_starts = v;
        }
        l
    }

    /// The same run with every override pinned, for reproducibility.
    pub fn effective(&self, obs_dim: usize, action_dim: usize) -> RunConfig {
        let m = self.model_config(obs_dim, action_dim);
        let a = self.agent_config();
        let l = self.loop_config();
        let mut out = self.clone();
        out.overrides = Overrides {
            h_dim: Some(m.h_dim),
            groups: Some(m.groups),
            classes: Some(m.classes),
            wm_mlp_width: Some(m.mlp_width),
            wm_mlp_hidden_layers: Some(m.mlp_hidden_layers),
            horizon: Some(a.horizon),
            exploration_steps: Some(a.exploration_steps),
            train_every: Some(a.train_every),
            agent_mlp_width: Some(a.mlp_width),
            agent_mlp_hidden_layers: Some(a.mlp_hidden_layers),
            batch_size: Some(l.batch_size),
            batch_length: Some(l.batch_length),
            imagination_starts: Some(l.imagination_starts),
            reward_loss_scale: Some(m.scale_reward),
        };
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_config() -> RunConfig {
        RunConfig {
            seed: 7,
            output_dir: PathBuf::from("out"),
            preset: Preset::Desk,
            env: EnvSettings {
                backend: BackendKind::Synthetic,
                opt_path: None,
                action_space_file: None,
                episode_limit: 10,
                synthetic: Some(SyntheticSettings {
                    actions: 4,
                    counters: 3,
                    programs: 6,
                    corpus_seed: 11,
                }),
                corpus_dir: None,
            },
            train: TrainSettings {
                total_env_steps: 100,
                replay_capacity: 10_000,
                checkpoint_every: 0,
                metrics_every: 1,
                coreset_file: None,
            },
            overrides: Overrides::default(),
        }
    }

    #[test]
    fn paper_preset_matches_published_hyperparameters() {
        let mut cfg = synthetic_config();
        cfg.preset = Preset::Paper;
        let m = cfg.model_config(60, 4);
        assert_eq!(m.h_dim, 1024);
        assert_eq!((m.groups, m.classes), (32, 32));
        assert_eq!((m.mlp_width, m.mlp_hidden_layers), (400, 4));
        assert_eq!(m.learning_rate, 1e-4);
        let a = cfg.agent_config();
        assert_eq!(a.gamma, 0.99);
        assert_eq!(a.lambda, 0.95);
        assert_eq!(a.entropy_eta, 3e-4);
        assert_eq!(a.learning_rate, 3e-5);
        assert_eq!(a.horizon, 15);
        assert_eq!(a.exploration_steps, 500);
        assert_eq!(a.train_every, 5);
        let l = cfg.loop_config();
        assert_eq!((l.batch_size, l.batch_length), (50, 50));
    }

    #[test]
    fn effective_config_round_trips_to_the_same_run() {
        let mut cfg = synthetic_config();
        cfg.overrides.h_dim = Some(32);
        cfg.overrides.batch_length = Some(8);
        let eff = cfg.effective(59, 4);
        let json = serde_json::to_string_pretty(&eff).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(
            serde_json::to_value(back.model_config(59, 4)).unwrap(),
            serde_json::to_value(cfg.model_config(59, 4)).unwrap()
        );
        assert_eq!(
            serde_json::to_value(back.agent_config()).unwrap(),
            serde_json::to_value(cfg.agent_config()).unwrap()
        );
        assert_eq!(
            serde_json::to_value(back.loop_config()).unwrap(),
            serde_json::to_value(cfg.loop_config()).unwrap()
        );
        // and the effective config is a fixed point
        let eff2 = back.effective(59, 4);
        assert_eq!(
            serde_json::to_value(&eff2).unwrap(),
            serde_json::to_value(&eff).unwrap()
        );
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_split_tagged() {
        let cfg = synthetic_config();
        let (env_a, corpus_a) = cfg.build_env().unwrap();
        let (_, corpus_b) = cfg.build_env().unwrap();
        assert_eq!(env_a.action_space().size(), 4);
        assert_eq!(corpus_a.len(), 6);
        assert!(corpus_a.iter().all(|(_, _, s)| *s == Split::Test));
        for ((ia, pa, _), (ib, pb, _)) in corpus_a.iter().zip(&corpus_b) {
            assert_eq!(ia, ib);
            assert_eq!(
                serde_json::to_value(pa).unwrap(),
                serde_json::to_value(pb).unwrap()
            );
        }
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let text = r#"{"seed":1,"output_dir":"o","preset":"desk","typo_field":3}"#;
        assert!(serde_json::from_str::<RunConfig>(text).is_err());
    }

    #[test]
    fn coreset_training_raises_the_reward_loss_weight() {
        let mut cfg = synthetic_config();
        assert_eq!(cfg.model_config(60, 4).scale_reward, 1.0);
        cfg.train.coreset_file = Some(PathBuf::from("coreset.txt"));
        assert_eq!(cfg.model_config(60, 4).scale_reward, 100.0);
        cfg.overrides.reward_loss_scale = Some(7.0);
        assert_eq!(cfg.model_config(60, 4).scale_reward, 7.0);
    }
}
