//! Joint training loop: collect real episodes into replay, interleave world
//! model and actor-critic updates, and emit deterministic metric rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{CompilerEnv, Program};
use crate::model::{LatentSampler, LatentState, WorldModel};
use crate::nn::{Scalar, Tensor};
use crate::replay::ReplayBuffer;
use crate::util::Prng;

use super::{ActorCritic, AgentError, CoreSet, RolloutMode};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainLoopConfig {
    pub total_env_steps: usize,
    /// Environment steps already taken by a resumed run; counting starts
    /// here, so exploration scheduling survives a restart.
    pub start_step: usize,
    pub batch_size: usize,
    pub batch_length: usize,
    /// How many posterior states from each model batch seed imagination.
    pub imagination_starts: usize,
    pub max_consecutive_skips: usize,
    pub metrics_every: usize,
}

impl TrainLoopConfig {
    pub fn desk(total_env_steps: usize) -> Self {
        TrainLoopConfig {
            total_env_steps,
            start_step: 0,
            batch_size: 16,
            batch_length: 16,
            imagination_starts: 64,
            max_consecutive_skips: 10,
            metrics_every: 1,
        }
    }

    pub fn paper(total_env_steps: usize) -> Self {
        TrainLoopConfig {
            batch_size: 50,
            batch_length: 50,
            imagination_starts: 512,
            ..Self::desk(total_env_steps)
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.batch_size == 0 || self.batch_length == 0 {
            return Err(AgentError::Config("zero batch dimensions".into()));
        }
        if self.imagination_starts == 0 {
            return Err(AgentError::Config("imagination_starts must be at least 1".into()));
        }
        Ok(())
    }
}

/// One line of the training log. Contains no wall-clock fields so two runs
/// with the same seed produce byte-identical logs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env_steps: usize,
    pub updates: usize,
    pub episodes: usize,
    pub wm_loss: f64,
    pub wm_obs_loss: f64,
    pub wm_reward_loss: f64,
    pub wm_kl: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub mean_episode_reward: f64,
}

impl MetricsRow {
    pub fn csv_header() -> &'static str {
        "env_steps,updates,episodes,wm_loss,wm_obs_loss,wm_reward_loss,wm_kl,\
         actor_loss,critic_loss,entropy,mean_episode_reward"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.env_steps,
            self.updates,
            self.episodes,
            self.wm_loss,
            self.wm_obs_loss,
            self.wm_reward_loss,
            self.wm_kl,
            self.actor_loss,
            self.critic_loss,
            self.entropy,
            self.mean_episode_reward
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainStats {
    pub env_steps: usize,
    pub updates: usize,
    pub episodes: usize,
    pub skipped_updates: usize,
}

/// Runs the online loop: act in the environment (randomly during the burn-in
/// period, from the actor afterwards), push finished episodes into replay,
/// and every `train_every` environment steps draw one batch to update the
/// world model followed by one imagination update of the actor-critic.
/// Aborts when more than `max_consecutive_skips` updates in a row are
/// discarded for non-finite losses.
///
/// With `coreset` set, episodes execute sequences drawn uniformly from the
/// core set instead of policy actions, the collection mode used to train a
/// value-prediction model.
#[allow(clippy::too_many_arguments)]
pub fn train_loop<E: Scalar>(
    env: &mut CompilerEnv,
    corpus: &[(String, Program)],
    wm: &mut WorldModel<E>,
    ac: &mut ActorCritic<E>,
    replay: &mut ReplayBuffer,
    cfg: &TrainLoopConfig,
    coreset: Option<&CoreSet>,
    rng: &mut Prng,
) -> Result<(Vec<MetricsRow>, TrainStats), AgentError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(AgentError::Config("empty training corpus".into()));
    }
    let exploration_steps = ac.cfg.exploration_steps;
    let train_every = ac.cfg.train_every.max(1);
    let action_dim = env.action_space().size();
    let mut stats = TrainStats {
        env_steps: cfg.start_step,
        ..TrainStats::default()
    };
    let mut rows = Vec::new();
    let mut consecutive_skips = 0usize;
    let mut recent_episode_rewards: Vec<f64> = Vec::new();

    let obs_row = |o: &crate::env::Observation| {
        Tensor::from_rows(&[o.values.iter().map(|&v| E::from_f64(v)).collect::<Vec<E>>()])
    };

    if let Some(cs) = coreset {
        if cs.sequences.is_empty() {
            return Err(AgentError::CoreSet("empty core set".into()));
        }
    }

    let mut program_id: String;
    let mut episode_rewards: Vec<f64>;
    let mut episode_record: Option<crate::env::EpisodeRecord>;
    let mut latent: LatentState<E>;
    let mut scripted: Option<Vec<usize>>;
    let mut scripted_pos: usize;

    macro_rules! start_episode {
        () => {{
            let pick = rng.gen_range(0..corpus.len());
            program_id = corpus[pick].0.clone();
            scripted = coreset
                .map(|cs| cs.sequences[rng.gen_range(0..cs.sequences.len())].clone());
            scripted_pos = 0;
            let obs = env.reset(&corpus[pick].1)?;
            latent = wm.posterior_step(
                &wm.initial_state(1),
                None,
                &obs_row(&obs),
                &mut LatentSampler::Sampled(rng),
            );
            episode_rewards = Vec::new();
            episode_record = Some(crate::env::EpisodeRecord {
                observations: vec![obs],
                actions: Vec::new(),
                rewards: Vec::new(),
                counts: vec![env.current_count()],
                pass_failed: Vec::new(),
                initial_count: env.initial_count(),
                baseline_count: env.baseline_count(),
                reached_limit: false,
            });
        }};
    }

    start_episode!();
    while stats.env_steps < cfg.total_env_steps {
        let action = match &scripted {
            Some(seq) => {
                let a = seq[scripted_pos];
                scripted_pos += 1;
                a
            }
            None if stats.env_steps < exploration_steps => rng.gen_range(0..action_dim),
            None => ac.act(&latent.features(), RolloutMode::Sample, rng)[0],
        };
        let step = env.step(action)?;
        stats.env_steps += 1;
        episode_rewards.push(step.reward);
        {
            let rec = episode_record.as_mut().unwrap();
            rec.actions.push(action);
            rec.rewards.push(step.reward);
            rec.counts.push(step.info.instruction_count);
            rec.pass_failed.push(step.info.pass_failed);
            rec.reached_limit = step.done;
        }
        latent = wm.posterior_step(
            &latent,
            Some(&[action]),
            &obs_row(&step.observation),
            &mut LatentSampler::Sampled(rng),
        );
        episode_record
            .as_mut()
            .unwrap()
            .observations
            .push(step.observation);

        let sequence_finished = scripted
            .as_ref()
            .is_some_and(|seq| scripted_pos >= seq.len());
        if step.done || sequence_finished {
            stats.episodes += 1;
            let rec = episode_record.take().unwrap();
            recent_episode_rewards.push(rec.rewards.iter().sum());
            if recent_episode_rewards.len() > 20 {
                recent_episode_rewards.remove(0);
            }
            replay.append_record(program_id.as_str(), &rec)?;
            start_episode!();
        }

        if stats.env_steps % train_every == 0
            && replay.total_steps() >= cfg.batch_size * cfg.batch_length
        {
            let batch = match replay.sample(cfg.batch_size, cfg.batch_length, rng) {
                Ok(b) => b,
                Err(crate::replay::ReplayError::InsufficientData { .. }) => continue,
                Err(e) => return Err(e.into()),
            };
            let (wm_metrics, posterior_states) = wm.train_step(&batch, rng)?;
            let mut skipped = wm_metrics.skipped;
            let mut agent_metrics = super::AgentMetrics::default();
            if !skipped {
                let starts = subsample_states(&posterior_states, cfg.imagination_starts, rng);
                agent_metrics = ac.train_step(wm, &starts, rng)?;
                skipped = agent_metrics.skipped;
            }
            stats.updates += 1;
            if skipped {
                stats.skipped_updates += 1;
                consecutive_skips += 1;
                if consecutive_skips > cfg.max_consecutive_skips {
                    return Err(AgentError::Diverged(consecutive_skips));
                }
            } else {
                consecutive_skips = 0;
            }
            if stats.updates % cfg.metrics_every == 0 {
                let mean_ep = if recent_episode_rewards.is_empty() {
                    0.0
                } else {
                    recent_episode_rewards.iter().sum::<f64>()
                        / recent_episode_rewards.len() as f64
                };
                rows.push(MetricsRow {
                    env_steps: stats.env_steps,
                    updates: stats.updates,
                    episodes: stats.episodes,
                    wm_loss: wm_metrics.total,
                    wm_obs_loss: wm_metrics.obs_features + wm_metrics.obs_histogram,
                    wm_reward_loss: wm_metrics.reward,
                    wm_kl: wm_metrics.kl,
                    actor_loss: agent_metrics.actor_loss,
                    critic_loss: agent_metrics.critic_loss,
                    entropy: agent_metrics.entropy,
                    mean_episode_reward: mean_ep,
                });
            }
        }
    }
    Ok((rows, stats))
}

/// Picks `n` rows (with replacement when the pool is smaller) from a stacked
/// batch of latent states to seed imagination.
fn subsample_states<E: Scalar>(
    states: &LatentState<E>,
    n: usize,
    rng: &mut Prng,
) -> LatentState<E> {
    let pool = states.batch();
    let idx: Vec<usize> = if n >= pool {
        (0..pool).collect()
    } else {
        (0..n).map(|_| rng.gen_range(0..pool)).collect()
    };
    let h_rows: Vec<Vec<E>> = idx.iter().map(|&i| states.h.row_slice(i).to_vec()).collect();
    let z_rows: Vec<Vec<E>> = idx.iter().map(|&i| states.z.row_slice(i).to_vec()).collect();
    LatentState {
        h: Tensor::from_rows(&h_rows),
        z: Tensor::from_rows(&z_rows),
    }
}
