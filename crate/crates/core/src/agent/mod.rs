//! Decision-making on top of the world model: the imagination-trained
//! actor-critic, real-environment policy rollouts, sequence scoring and
//! search strategies, and the joint training loop.

pub mod search;
pub mod train;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{CompilerEnv, EnvError, EpisodeRecord, Program};
use crate::model::{ImaginedTrajectory, LatentSampler, LatentState, ModelError, WorldModel};
use crate::nn::{adam_step, AdamConfig, AdamState, Ctx, MlpDef, ParamStore, Scalar, Tensor, Var};
use crate::replay::ReplayError;
use crate::util::{derive_seed, Prng};

pub use search::{
    coreset_select, guided_search, random_search, value_predict, CoreSet, CoresetOutcome,
    Scorer, SearchBudget, SearchOutcome,
};
pub use train::{train_loop, MetricsRow, TrainLoopConfig, TrainStats};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("replay: {0}")]
    Replay(#[from] ReplayError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("bad core set: {0}")]
    CoreSet(String),
    #[error("training diverged after {0} consecutive skipped steps")]
    Diverged(usize),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_eta: f64,
    pub learning_rate: f64,
    pub horizon: usize,
    pub exploration_steps: usize,
    pub train_every: usize,
    pub mlp_width: usize,
    pub mlp_hidden_layers: usize,
    pub weight_decay: f64,
    pub grad_clip: f64,
}

impl AgentConfig {
    pub fn desk() -> Self {
        AgentConfig {
            gamma: 0.99,
            lambda: 0.95,
            entropy_eta: 3e-4,
            learning_rate: 3e-5,
            horizon: 15,
            exploration_steps: 500,
            train_every: 5,
            mlp_width: 128,
            mlp_hidden_layers: 2,
            weight_decay: 1e-5,
            grad_clip: 100.0,
        }
    }

    pub fn paper() -> Self {
        AgentConfig {
            mlp_width: 400,
            mlp_hidden_layers: 4,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if !(0.0 < self.gamma && self.gamma <= 1.0) {
            return Err(AgentError::Config(format!("gamma {} outside (0,1]", self.gamma)));
        }
        if !(0.0 < self.lambda && self.lambda <= 1.0) {
            return Err(AgentError::Config(format!(
                "lambda {} outside (0,1]",
                self.lambda
            )));
        }
        if self.horizon == 0 {
            return Err(AgentError::Config("horizon must be at least 1".into()));
        }
        if self.entropy_eta < 0.0 {
            return Err(AgentError::Config("negative entropy weight".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AgentMetrics {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub mean_value: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub skipped: bool,
}

/// Bootstrapped TD(lambda) targets computed backward from `values[H]`:
/// V_t = r_{t+1} + gamma * c_{t+1} * ((1-lambda) * v_{t+1} + lambda * V_{t+1}).
/// Returns V_0..V_{H-1}.
pub fn lambda_returns(
    rewards: &[f64],
    values: &[f64],
    continues: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>, AgentError> {
    let h = rewards.len();
    if values.len() != h + 1 || continues.len() != h {
        return Err(AgentError::Length(format!(
            "{} rewards need {} values (got {}) and {} continues (got {})",
            h,
            h + 1,
            values.len(),
            h,
            continues.len()
        )));
    }
    let mut out = vec![0.0; h];
    let mut next = values[h];
    for t in (0..h).rev() {
        let blend = (1.0 - lambda) * values[t + 1] + lambda * next;
        next = rewards[t] + gamma * continues[t] * blend;
        out[t] = next;
    }
    Ok(out)
}

/// How actions are chosen when rolling out in the real environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutMode {
    Sample,
    Argmax,
}

pub struct ActorCritic<E: Scalar> {
    pub cfg: AgentConfig,
    pub feature_dim: usize,
    pub action_dim: usize,
    pub params: ParamStore<E>,
    opt_cfg: AdamConfig,
    opt_actor: AdamState<E>,
    opt_critic: AdamState<E>,
}

impl<E: Scalar> ActorCritic<E> {
    pub fn init(
        cfg: AgentConfig,
        feature_dim: usize,
        action_dim: usize,
        seed: u64,
    ) -> Result<Self, AgentError> {
        cfg.validate()?;
        if feature_dim == 0 || action_dim == 0 {
            return Err(AgentError::Config("zero head dimension".into()));
        }
        let mut rng = Prng::seed_from_u64(derive_seed(seed, "actor-critic-init"));
        let mut params = ParamStore::new();
        Self::actor_def(&cfg, feature_dim, action_dim).init(&mut params, &mut rng);
        Self::critic_def(&cfg, feature_dim).init(&mut params, &mut rng);
        let opt_cfg = AdamConfig::new(cfg.learning_rate)
            .with_weight_decay(cfg.weight_decay)
            .with_clip(cfg.grad_clip);
        Ok(ActorCritic {
            cfg,
            feature_dim,
            action_dim,
            params,
            opt_cfg,
            opt_actor: AdamState::new(),
            opt_critic: AdamState::new(),
        })
    }

    /// Rebuilds the heads around restored parameters; names and shapes must
    /// match a fresh initialization. Optimizer moments start from zero.
    pub fn from_parts(
        cfg: AgentConfig,
        feature_dim: usize,
        action_dim: usize,
        params: ParamStore<E>,
    ) -> Result<Self, AgentError> {
        let mut ac = Self::init(cfg, feature_dim, action_dim, 0)?;
        if params.len() != ac.params.len() {
            return Err(AgentError::Config(format!(
                "restored store has {} parameters, expected {}",
                params.len(),
                ac.params.len()
            )));
        }
        for (name, expected) in ac.params.iter() {
            let got = params
                .try_get(name)
                .ok_or_else(|| AgentError::Config(format!("missing parameter {name}")))?;
            if got.shape() != expected.shape() {
                return Err(AgentError::Config(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    expected.shape()
                )));
            }
        }
        ac.params = params;
        Ok(ac)
    }

    fn actor_def(cfg: &AgentConfig, feature_dim: usize, action_dim: usize) -> MlpDef {
        let mut dims = vec![feature_dim];
        dims.extend(std::iter::repeat(cfg.mlp_width).take(cfg.mlp_hidden_layers));
        dims.push(action_dim);
        MlpDef::new("actor", dims)
    }

    fn critic_def(cfg: &AgentConfig, feature_dim: usize) -> MlpDef {
        let mut dims = vec![feature_dim];
        dims.extend(std::iter::repeat(cfg.mlp_width).take(cfg.mlp_hidden_layers));
        dims.push(1);
        MlpDef::new("critic", dims)
    }

    pub fn actor_logits_graph(&self, cx: &mut Ctx<E>, features: Var) -> Var {
        Self::actor_def(&self.cfg, self.feature_dim, self.action_dim).apply(cx, features)
    }

    pub fn critic_graph(&self, cx: &mut Ctx<E>, features: Var) -> Var {
        Self::critic_def(&self.cfg, self.feature_dim).apply(cx, features)
    }

    /// Softmax policy over actions, one row per batch row.
    pub fn policy_probs(&self, features: &Tensor<E>) -> Tensor<E> {
        let mut cx = Ctx::new(&self.params);
        let f = cx.constant(features.clone());
        let logits = self.actor_logits_graph(&mut cx, f);
        let probs = cx.tape.softmax_rows(logits);
        cx.value(probs).clone()
    }

    pub fn values(&self, features: &Tensor<E>) -> Vec<f64> {
        let mut cx = Ctx::new(&self.params);
        let f = cx.constant(features.clone());
        let v = self.critic_graph(&mut cx, f);
        cx.value(v).to_f64_vec()
    }

    /// One action per batch row, sampled or argmax.
    pub fn act(&self, features: &Tensor<E>, mode: RolloutMode, rng: &mut Prng) -> Vec<usize> {
        let probs = self.policy_probs(features);
        (0..probs.rows())
            .map(|r| {
                let row = probs.row_slice(r);
                match mode {
                    RolloutMode::Sample => crate::nn::pick_from_row(row, rng.gen::<f64>()),
                    RolloutMode::Argmax => argmax(row),
                }
            })
            .collect()
    }

    /// Imagination-based update: REINFORCE with entropy regularization for
    /// the actor, squared error to stop-gradient lambda targets for the
    /// critic. The world model only supplies data; it receives no gradient.
    pub fn train_step(
        &mut self,
        wm: &WorldModel<E>,
        start: &LatentState<E>,
        rng: &mut Prng,
    ) -> Result<AgentMetrics, AgentError> {
        let h = self.cfg.horizon;
        let traj = wm.imagine(start, h, rng, |features, rng| {
            self.act(features, RolloutMode::Sample, rng)
        });
        let b = start.batch();

        let mut values = Vec::with_capacity(h + 1);
        for feat in &traj.features {
            values.push(self.values(feat));
        }
        let mut targets = vec![vec![0.0; b]; h];
        let mut advantages = vec![vec![0.0; b]; h];
        for row in 0..b {
            let rewards: Vec<f64> = traj.rewards.iter().map(|r| r[row]).collect();
            let conts: Vec<f64> = traj.continues.iter().map(|c| c[row]).collect();
            let vals: Vec<f64> = values.iter().map(|v| v[row]).collect();
            let v = lambda_returns(&rewards, &vals, &conts, self.cfg.gamma, self.cfg.lambda)?;
            for t in 0..h {
                targets[t][row] = v[t];
                advantages[t][row] = v[t] - vals[t];
            }
        }

        let (metrics, actor_grads, critic_grads) = {
            let mut cx = Ctx::new(&self.params);
            let (actor_loss, critic_loss, entropy) =
                self.loss_graph(&mut cx, &traj, &targets, &advantages)?;
            let metrics = AgentMetrics {
                actor_loss: cx.value(actor_loss).item().to_f64(),
                critic_loss: cx.value(critic_loss).item().to_f64(),
                entropy: cx.value(entropy).item().to_f64(),
                mean_value: values
                    .iter()
                    .flat_map(|v| v.iter())
                    .sum::<f64>()
                    / (b * (h + 1)) as f64,
                actor_grad_norm: 0.0,
                critic_grad_norm: 0.0,
                skipped: false,
            };
            if !metrics.actor_loss.is_finite() || !metrics.critic_loss.is_finite() {
                return Ok(AgentMetrics {
                    skipped: true,
                    ..metrics
                });
            }
            (metrics, cx.grads(actor_loss), cx.grads(critic_loss))
        };
        if actor_grads.values().any(|g| !g.all_finite())
            || critic_grads.values().any(|g| !g.all_finite())
        {
            return Ok(AgentMetrics {
                skipped: true,
                ..metrics
            });
        }
        let mut metrics = metrics;
        metrics.actor_grad_norm =
            adam_step(&mut self.params, &actor_grads, &self.opt_cfg, &mut self.opt_actor);
        metrics.critic_grad_norm =
            adam_step(&mut self.params, &critic_grads, &self.opt_cfg, &mut self.opt_critic);
        Ok(metrics)
    }

    /// Actor and critic losses over an imagined trajectory with fixed
    /// targets and advantages (both treated as constants). Public so the
    /// losses can be gradient-checked from the outside.
    pub fn loss_graph(
        &self,
        cx: &mut Ctx<E>,
        traj: &ImaginedTrajectory<E>,
        targets: &[Vec<f64>],
        advantages: &[Vec<f64>],
    ) -> Result<(Var, Var, Var), AgentError> {
        let h = traj.horizon();
        if h == 0 || targets.len() != h || advantages.len() != h {
            return Err(AgentError::Length("trajectory/target lengths".into()));
        }
        let b = traj.features[0].rows();
        let mut policy_terms = Vec::with_capacity(h);
        let mut entropy_terms = Vec::with_capacity(h);
        let mut critic_terms = Vec::with_capacity(h);
        for t in 0..h {
            let feat = cx.constant(traj.features[t].clone());
            let logits = self.actor_logits_graph(cx, feat);
            let probs = cx.tape.softmax_rows(logits);
            let ln_probs = cx.tape.ln(probs);
            let mut mask = Tensor::zeros(b, self.action_dim);
            for (row, &a) in traj.actions[t].iter().enumerate() {
                mask.set(row, a, E::ONE);
            }
            let mask = cx.constant(mask);
            let chosen = cx.tape.mul(ln_probs, mask);
            let logp = cx.tape.row_sum(chosen);
            let adv_rows: Vec<Vec<E>> = advantages[t]
                .iter()
                .map(|&a| vec![E::from_f64(a)])
                .collect();
            let adv = cx.constant(Tensor::from_rows(&adv_rows));
            let weighted = cx.tape.mul(logp, adv);
            policy_terms.push(cx.tape.sum_all(weighted));

            let plogp = cx.tape.mul(probs, ln_probs);
            entropy_terms.push(cx.tape.sum_all(plogp));

            let v = self.critic_graph(cx, feat);
            let tgt_rows: Vec<Vec<E>> = targets[t].iter().map(|&x| vec![E::from_f64(x)]).collect();
            let tgt = cx.constant(Tensor::from_rows(&tgt_rows));
            let diff = cx.tape.sub(v, tgt);
            let sq = cx.tape.mul(diff, diff);
            critic_terms.push(cx.tape.sum_all(sq));
        }
        let norm = 1.0 / (b * h) as f64;
        let policy_sum = sum_vars(cx, &policy_terms);
        let neg_plogp_sum = sum_vars(cx, &entropy_terms);
        let reinforce = cx.tape.scale(policy_sum, E::from_f64(-norm));
        let ent_pen = cx
            .tape
            .scale(neg_plogp_sum, E::from_f64(self.cfg.entropy_eta * norm));
        let actor_loss = cx.tape.add(reinforce, ent_pen);
        let entropy = cx.tape.scale(neg_plogp_sum, E::from_f64(-norm));
        let critic_sum = sum_vars(cx, &critic_terms);
        let critic_loss = cx.tape.scale(critic_sum, E::from_f64(0.5 * norm));
        Ok((actor_loss, critic_loss, entropy))
    }
}

fn sum_vars<E: Scalar>(cx: &mut Ctx<E>, terms: &[Var]) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = cx.tape.add(acc, t);
    }
    acc
}

fn argmax<E: Scalar>(row: &[E]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Runs one real episode with posterior filtering: each observation updates
/// the latent, the actor picks the next pass.
pub fn policy_rollout<E: Scalar>(
    env: &mut CompilerEnv,
    program: &Program,
    wm: &WorldModel<E>,
    ac: &ActorCritic<E>,
    mode: RolloutMode,
    rng: &mut Prng,
) -> Result<EpisodeRecord, AgentError> {
    let obs0 = env.reset(program)?;
    let mut record = EpisodeRecord {
        observations: vec![obs0.clone()],
        actions: Vec::new(),
        rewards: Vec::new(),
        counts: vec![env.current_count()],
        pass_failed: Vec::new(),
        initial_count: env.initial_count(),
        baseline_count: env.baseline_count(),
        reached_limit: false,
    };
    let obs_row = |o: &crate::env::Observation| {
        Tensor::from_rows(&[o.values.iter().map(|&v| E::from_f64(v)).collect::<Vec<E>>()])
    };
    let sampler_state = |rng: &mut Prng, prev: &LatentState<E>, act: Option<usize>, obs: &Tensor<E>| {
        let actions_buf;
        let actions = match act {
            Some(a) => {
                actions_buf = [a];
                Some(&actions_buf[..])
            }
            None => None,
        };
        match mode {
            RolloutMode::Sample => {
                wm.posterior_step(prev, actions, obs, &mut LatentSampler::Sampled(rng))
            }
            RolloutMode::Argmax => wm.posterior_step(prev, actions, obs, &mut LatentSampler::Mode),
        }
    };
    let mut latent = sampler_state(rng, &wm.initial_state(1), None, &obs_row(&obs0));
    for _ in 0..env.episode_limit() {
        let action = ac.act(&latent.features(), mode, rng)[0];
        let step = env.step(action)?;
        record.actions.push(action);
        record.rewards.push(step.reward);
        record.counts.push(step.info.instruction_count);
        record.pass_failed.push(step.info.pass_failed);
        record.reached_limit = step.done;
        latent = sampler_state(rng, &latent, Some(action), &obs_row(&step.observation));
        record.observations.push(step.observation);
        if step.done {
            break;
        }
    }
    Ok(record)
}
