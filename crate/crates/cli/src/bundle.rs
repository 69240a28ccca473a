//! Checkpoint bundle: the world model and actor-critic parameters in one
//! file, with a header binding them to the action space they were trained
//! against so a reordered pass list cannot be evaluated silently.

use std::path::Path;

use anyhow::{bail, Context, Result};

use pass_pilot_core::agent::{ActorCritic, AgentConfig};
use pass_pilot_core::env::ActionSpace;
use pass_pilot_core::model::{WorldModel, WorldModelConfig};
use pass_pilot_core::nn::{checkpoint, ParamStore};

pub struct Bundle {
    pub wm: WorldModel<f32>,
    pub ac: ActorCritic<f32>,
    pub action_space_hash: String,
    pub env_steps: usize,
}

pub fn save(
    path: &Path,
    wm: &WorldModel<f32>,
    ac: &ActorCritic<f32>,
    space: &ActionSpace,
    env_steps: usize,
) -> Result<()> {
    let header = serde_json::json!({
        "kind": "pass-pilot",
        "version": 1,
        "action_space_hash": space.hash(),
        "action_dim": space.size(),
        "env_steps": env_steps,
        "wm": wm.cfg,
        "agent": ac.cfg,
    });
    let mut merged: ParamStore<f32> = ParamStore::new();
    for (name, t) in wm.params.iter().chain(ac.params.iter()) {
        merged.insert(name.clone(), t.clone());
    }
    checkpoint::save(path, &header, &merged)
        .with_context(|| format!("writing checkpoint {}", path.display()))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Bundle> {
    let (header, merged): (serde_json::Value, ParamStore<f32>) = checkpoint::load(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    if header["kind"] != "pass-pilot" {
        bail!("{} is not a pass-pilot checkpoint", path.display());
    }
    let wm_cfg: WorldModelConfig =
        serde_json::from_value(header["wm"].clone()).context("checkpoint world-model config")?;
    let agent_cfg: AgentConfig =
        serde_json::from_value(header["agent"].clone()).context("checkpoint agent config")?;
    let action_space_hash = header["action_space_hash"]
        .as_str()
        .context("checkpoint action-space hash")?
        .to_string();
    let env_steps = header["env_steps"].as_u64().unwrap_or(0) as usize;

    let mut wm_params: ParamStore<f32> = ParamStore::new();
    let mut ac_params: ParamStore<f32> = ParamStore::new();
    for (name, t) in merged.iter() {
        if name.starts_with("wm.") {
            wm_params.insert(name.clone(), t.clone());
        } else {
            ac_params.insert(name.clone(), t.clone());
        }
    }
    let feature_dim = wm_cfg.feature_dim();
    let action_dim = wm_cfg.action_dim;
    let wm = WorldModel::from_parts(wm_cfg, wm_params, 0)?;
    let ac = ActorCritic::from_parts(agent_cfg, feature_dim, action_dim, ac_params)?;
    Ok(Bundle {
        wm,
        ac,
        action_space_hash,
        env_steps,
    })
}
