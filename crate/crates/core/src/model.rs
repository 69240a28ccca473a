//! Latent compiler model: a recurrent state-space model with categorical
//! stochastic codes, an observation decoder split into feature and histogram
//! heads, a reward head trained on smoothed rewards, and a continue head.
//! Rolls forward in latent space for imagination.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::FEATURE_COUNT;
use crate::nn::{
    adam_step, categorical_probs, categorical_straight_through, gru_init, gru_step, AdamConfig,
    AdamState, Ctx, Draw, MlpDef, ParamStore, Scalar, Tensor, Var,
};
use crate::replay::Subsequence;
use crate::util::{derive_seed, Prng};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("bad training batch: {0}")]
    BadBatch(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorldModelConfig {
    pub obs_dim: usize,
    /// Number of leading observation slots decoded by the feature head;
    /// the rest belong to the histogram head.
    pub feature_split: usize,
    pub action_dim: usize,
    pub h_dim: usize,
    pub groups: usize,
    pub classes: usize,
    pub mlp_width: usize,
    pub mlp_hidden_layers: usize,
    pub scale_obs_features: f64,
    pub scale_obs_histogram: f64,
    pub scale_reward: f64,
    pub scale_continue: f64,
    pub scale_kl: f64,
    pub kl_balance: f64,
    pub free_bits: f64,
    pub unimix: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
}

impl WorldModelConfig {
    pub fn desk(action_dim: usize) -> Self {
        WorldModelConfig {
            obs_dim: FEATURE_COUNT + action_dim,
            feature_split: FEATURE_COUNT,
            action_dim,
            h_dim: 256,
            groups: 16,
            classes: 16,
            mlp_width: 128,
            mlp_hidden_layers: 2,
            scale_obs_features: 100.0,
            scale_obs_histogram: 10.0,
            scale_reward: 1.0,
            scale_continue: 5.0,
            scale_kl: 0.1,
            kl_balance: 0.8,
            free_bits: 1.0,
            unimix: 0.01,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            grad_clip: 100.0,
        }
    }

    pub fn paper(action_dim: usize) -> Self {
        WorldModelConfig {
            h_dim: 1024,
            groups: 32,
            classes: 32,
            mlp_width: 400,
            mlp_hidden_layers: 4,
            ..Self::desk(action_dim)
        }
    }

    /// Tiny dims for gradient checks and fast unit tests.
    pub fn toy(obs_dim: usize, action_dim: usize) -> Self {
        WorldModelConfig {
            obs_dim,
            feature_split: (obs_dim / 2).max(1),
            h_dim: 12,
            groups: 3,
            classes: 4,
            mlp_width: 10,
            mlp_hidden_layers: 1,
            ..Self::desk(action_dim)
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.groups * self.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.h_dim + self.latent_dim()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.feature_split == 0 || self.feature_split >= self.obs_dim {
            return Err(ModelError::Config(format!(
                "feature split {} must leave both heads non-empty in {} slots",
                self.feature_split, self.obs_dim
            )));
        }
        if self.action_dim == 0 || self.h_dim == 0 || self.groups == 0 || self.classes == 0 {
            return Err(ModelError::Config("zero dimension".into()));
        }
        if self.mlp_width == 0 {
            return Err(ModelError::Config("zero mlp width".into()));
        }
        if !(0.0..=1.0).contains(&self.kl_balance) {
            return Err(ModelError::Config(format!(
                "kl_balance {} outside [0,1]",
                self.kl_balance
            )));
        }
        if !(0.0..1.0).contains(&self.unimix) {
            return Err(ModelError::Config(format!(
                "unimix {} outside [0,1)",
                self.unimix
            )));
        }
        for (name, s) in [
            ("obs_features", self.scale_obs_features),
            ("obs_histogram", self.scale_obs_histogram),
            ("reward", self.scale_reward),
            ("continue", self.scale_continue),
            ("kl", self.scale_kl),
        ] {
            if s < 0.0 {
                return Err(ModelError::Config(format!("negative {name} loss scale")));
            }
        }
        if self.free_bits < 0.0 {
            return Err(ModelError::Config("negative free bits".into()));
        }
        Ok(())
    }

    fn mlp_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat(self.mlp_width).take(self.mlp_hidden_layers));
        dims.push(output);
        dims
    }
}

/// How the stochastic code is produced from logits.
pub enum LatentSampler<'r> {
    /// One-hot draw with straight-through gradients (training, rollouts).
    Sampled(&'r mut Prng),
    /// One-hot argmax per group (deterministic evaluation).
    Mode,
    /// The mixed softmax probabilities themselves, kept differentiable
    /// everywhere; used by finite-difference checks.
    Soft,
}

/// Recurrent vector plus flattened one-hot codes, batch-major.
#[derive(Clone, Debug)]
pub struct LatentState<E: Scalar> {
    pub h: Tensor<E>,
    pub z: Tensor<E>,
}

impl<E: Scalar> LatentState<E> {
    pub fn batch(&self) -> usize {
        self.h.rows()
    }

    /// The [h, z] concatenation every head consumes.
    pub fn features(&self) -> Tensor<E> {
        let b = self.batch();
        let (hc, zc) = (self.h.cols(), self.z.cols());
        let mut out = Tensor::zeros(b, hc + zc);
        for r in 0..b {
            out.data_mut()[r * (hc + zc)..r * (hc + zc) + hc]
                .copy_from_slice(self.h.row_slice(r));
            out.data_mut()[r * (hc + zc) + hc..(r + 1) * (hc + zc)]
                .copy_from_slice(self.z.row_slice(r));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Decoded<E: Scalar> {
    pub obs: Tensor<E>,
    pub reward: Vec<f64>,
    pub continue_prob: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct WmMetrics {
    pub total: f64,
    pub obs_features: f64,
    pub obs_histogram: f64,
    pub reward: f64,
    pub cont: f64,
    pub kl: f64,
    pub grad_norm: f64,
    pub skipped: bool,
}

pub struct WmLossVars {
    pub total: Var,
    pub obs_features: Var,
    pub obs_histogram: Var,
    pub reward: Var,
    pub cont: Var,
    pub kl: Var,
    /// Posterior (h, z) pair per unrolled step, for imagination starts.
    pub states: Vec<(Var, Var)>,
}

/// Imagination output: `features[0]` is the start state's feature matrix and
/// `features[t]` (t >= 1) the state reached after `actions[t-1]`, whose
/// decoded reward and continue probability sit at index t-1.
#[derive(Clone, Debug)]
pub struct ImaginedTrajectory<E: Scalar> {
    pub features: Vec<Tensor<E>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<Vec<f64>>,
    pub continues: Vec<Vec<f64>>,
}

impl<E: Scalar> ImaginedTrajectory<E> {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

#[derive(Clone, Debug)]
pub struct WorldModel<E: Scalar> {
    pub cfg: WorldModelConfig,
    pub params: ParamStore<E>,
    opt_cfg: AdamConfig,
    opt: AdamState<E>,
}

impl<E: Scalar> WorldModel<E> {
    pub fn init(cfg: WorldModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = Prng::seed_from_u64(derive_seed(seed, "world-model-init"));
        let mut params = ParamStore::new();
        gru_init(
            &mut params,
            "wm.gru",
            cfg.latent_dim() + cfg.action_dim,
            cfg.h_dim,
            &mut rng,
        );
        for def in [
            MlpDef::new("wm.prior", cfg.mlp_dims(cfg.h_dim, cfg.latent_dim())),
            MlpDef::new(
                "wm.post",
                cfg.mlp_dims(cfg.h_dim + cfg.obs_dim, cfg.latent_dim()),
            ),
            MlpDef::new("wm.dec.obs", cfg.mlp_dims(cfg.feature_dim(), cfg.obs_dim)),
            MlpDef::new("wm.dec.reward", cfg.mlp_dims(cfg.feature_dim(), 1)),
            MlpDef::new("wm.dec.continue", cfg.mlp_dims(cfg.feature_dim(), 1)),
        ] {
            def.init(&mut params, &mut rng);
        }
        let opt_cfg = AdamConfig::new(cfg.learning_rate)
            .with_weight_decay(cfg.weight_decay)
            .with_clip(cfg.grad_clip);
        Ok(WorldModel {
            cfg,
            params,
            opt_cfg,
            opt: AdamState::new(),
        })
    }

    /// Rebuilds a model around restored parameters. A freshly initialized
    /// model defines the expected parameter names and shapes; every one of
    /// them must be present. Optimizer moments start from zero.
    pub fn from_parts(
        cfg: WorldModelConfig,
        params: ParamStore<E>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut model = Self::init(cfg, seed)?;
        if params.len() != model.params.len() {
            return Err(ModelError::Config(format!(
                "restored store has {} parameters, expected {}",
                params.len(),
                model.params.len()
            )));
        }
        for (name, expected) in model.params.iter() {
            let got = params
                .try_get(name)
                .ok_or_else(|| ModelError::Config(format!("missing parameter {name}")))?;
            if got.shape() != expected.shape() {
                return Err(ModelError::Config(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    expected.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn opt_steps(&self) -> u64 {
        self.opt.step_count()
    }

    pub fn initial_state(&self, batch: usize) -> LatentState<E> {
        LatentState {
            h: Tensor::zeros(batch, self.cfg.h_dim),
            z: Tensor::zeros(batch, self.cfg.latent_dim()),
        }
    }

    fn prior_def(&self) -> MlpDef {
        MlpDef::new(
            "wm.prior",
            self.cfg.mlp_dims(self.cfg.h_dim, self.cfg.latent_dim()),
        )
    }

    fn post_def(&self) -> MlpDef {
        MlpDef::new(
            "wm.post",
            self.cfg
                .mlp_dims(self.cfg.h_dim + self.cfg.obs_dim, self.cfg.latent_dim()),
        )
    }

    /// One-hot action rows; `None` encodes "no previous action" as all-zero.
    pub fn action_rows(&self, actions: Option<&[usize]>, batch: usize) -> Tensor<E> {
        let mut t = Tensor::zeros(batch, self.cfg.action_dim);
        if let Some(acts) = actions {
            assert_eq!(acts.len(), batch, "one action per batch row");
            for (r, &a) in acts.iter().enumerate() {
                assert!(a < self.cfg.action_dim, "action {a} out of range");
                t.set(r, a, E::ONE);
            }
        }
        t
    }

    pub fn recurrent_graph(&self, cx: &mut Ctx<E>, prev_h: Var, prev_z: Var, action: Var) -> Var {
        let input = cx.tape.concat_cols(&[prev_z, action]);
        gru_step(cx, "wm.gru", input, prev_h)
    }

    pub fn prior_logits_graph(&self, cx: &mut Ctx<E>, h: Var) -> Var {
        self.prior_def().apply(cx, h)
    }

    pub fn posterior_logits_graph(&self, cx: &mut Ctx<E>, h: Var, obs: Var) -> Var {
        let input = cx.tape.concat_cols(&[h, obs]);
        self.post_def().apply(cx, input)
    }

    fn latent_graph(&self, cx: &mut Ctx<E>, logits: Var, sampler: &mut LatentSampler) -> (Var, Var) {
        let (g, k, u) = (self.cfg.groups, self.cfg.classes, self.cfg.unimix);
        match sampler {
            LatentSampler::Soft => {
                let rows = cx.value(logits).rows();
                let probs = categorical_probs(cx, logits, g, k, u);
                let z = cx.tape.reshape(probs, rows, g * k);
                (z, probs)
            }
            LatentSampler::Sampled(rng) => {
                categorical_straight_through(cx, logits, g, k, u, Draw::Sample(rng))
            }
            LatentSampler::Mode => categorical_straight_through(cx, logits, g, k, u, Draw::Mode),
        }
    }

    pub fn decode_graph(&self, cx: &mut Ctx<E>, features: Var) -> (Var, Var, Var) {
        let cfg = &self.cfg;
        let obs = MlpDef::new("wm.dec.obs", cfg.mlp_dims(cfg.feature_dim(), cfg.obs_dim))
            .apply(cx, features);
        let reward =
            MlpDef::new("wm.dec.reward", cfg.mlp_dims(cfg.feature_dim(), 1)).apply(cx, features);
        let cont =
            MlpDef::new("wm.dec.continue", cfg.mlp_dims(cfg.feature_dim(), 1)).apply(cx, features);
        (obs, reward, cont)
    }

    /// Filtering step on a real observation. `actions` is the action taken
    /// before this observation arrived; `None` at the episode start.
    pub fn posterior_step(
        &self,
        prev: &LatentState<E>,
        actions: Option<&[usize]>,
        obs: &Tensor<E>,
        sampler: &mut LatentSampler,
    ) -> LatentState<E> {
        assert_eq!(obs.cols(), self.cfg.obs_dim, "observation width");
        let batch = prev.batch();
        let mut cx = Ctx::new(&self.params);
        let ph = cx.constant(prev.h.clone());
        let pz = cx.constant(prev.z.clone());
        let act = cx.constant(self.action_rows(actions, batch));
        let obs_v = cx.constant(obs.clone());
        let h = self.recurrent_graph(&mut cx, ph, pz, act);
        let logits = self.posterior_logits_graph(&mut cx, h, obs_v);
        let (z, _) = self.latent_graph(&mut cx, logits, sampler);
        LatentState {
            h: cx.value(h).clone(),
            z: cx.value(z).clone(),
        }
    }

    /// Transition step entirely in latent space.
    pub fn prior_step(
        &self,
        prev: &LatentState<E>,
        actions: &[usize],
        sampler: &mut LatentSampler,
    ) -> LatentState<E> {
        let batch = prev.batch();
        let mut cx = Ctx::new(&self.params);
        let ph = cx.constant(prev.h.clone());
        let pz = cx.constant(prev.z.clone());
        let act = cx.constant(self.action_rows(Some(actions), batch));
        let h = self.recurrent_graph(&mut cx, ph, pz, act);
        let logits = self.prior_logits_graph(&mut cx, h);
        let (z, _) = self.latent_graph(&mut cx, logits, sampler);
        LatentState {
            h: cx.value(h).clone(),
            z: cx.value(z).clone(),
        }
    }

    pub fn decode(&self, state: &LatentState<E>) -> Decoded<E> {
        let mut cx = Ctx::new(&self.params);
        let feat = cx.constant(state.features());
        let (obs, reward, cont) = self.decode_graph(&mut cx, feat);
        let cont_prob = cx.tape.sigmoid(cont);
        Decoded {
            obs: cx.value(obs).clone(),
            reward: cx.value(reward).to_f64_vec(),
            continue_prob: cx.value(cont_prob).to_f64_vec(),
        }
    }

    /// Builds the full training loss over a batch of equal-length
    /// subsequences. Each subsequence contributes L+1 posterior steps; the
    /// first encodes its opening observation with a zero previous action.
    pub fn loss_graph(
        &self,
        cx: &mut Ctx<E>,
        batch: &[Subsequence],
        sampler: &mut LatentSampler,
    ) -> Result<WmLossVars, ModelError> {
        let cfg = &self.cfg;
        if batch.is_empty() {
            return Err(ModelError::BadBatch("empty batch".into()));
        }
        let b = batch.len();
        let l = batch[0].len();
        if l == 0 {
            return Err(ModelError::BadBatch("zero-length subsequence".into()));
        }
        for sub in batch {
            if sub.len() != l {
                return Err(ModelError::BadBatch("mixed subsequence lengths".into()));
            }
            if sub.obs_dim() != cfg.obs_dim {
                return Err(ModelError::BadBatch(format!(
                    "observation width {} does not match model {}",
                    sub.obs_dim(),
                    cfg.obs_dim
                )));
            }
        }

        let mut h = cx.constant(Tensor::zeros(b, cfg.h_dim));
        let mut z = cx.constant(Tensor::zeros(b, cfg.latent_dim()));
        let mut obs_fe_terms = Vec::with_capacity(l + 1);
        let mut obs_hi_terms = Vec::with_capacity(l + 1);
        let mut reward_terms = Vec::with_capacity(l);
        let mut cont_terms = Vec::with_capacity(l);
        let mut kl_terms = Vec::with_capacity(l + 1);
        let mut states = Vec::with_capacity(l + 1);

        for t in 0..=l {
            let action = if t == 0 {
                cx.constant(self.action_rows(None, b))
            } else {
                let acts: Vec<usize> = batch.iter().map(|s| s.actions[t - 1]).collect();
                cx.constant(self.action_rows(Some(&acts), b))
            };
            h = self.recurrent_graph(cx, h, z, action);

            let obs_rows: Vec<Vec<E>> = batch
                .iter()
                .map(|s| {
                    s.observations[t]
                        .iter()
                        .map(|&v| E::from_f64(v as f64))
                        .collect()
                })
                .collect();
            let obs_target = cx.constant(Tensor::from_rows(&obs_rows));

            let prior_logits = self.prior_logits_graph(cx, h);
            let post_logits = self.posterior_logits_graph(cx, h, obs_target);
            let (z_new, post_probs) = self.latent_graph(cx, post_logits, sampler);
            let prior_probs = categorical_probs(cx, prior_logits, cfg.groups, cfg.classes, cfg.unimix);
            kl_terms.push(balanced_kl_graph(
                cx,
                post_probs,
                prior_probs,
                cfg.kl_balance,
                cfg.free_bits,
            ));
            z = z_new;
            states.push((h, z));

            let features = cx.tape.concat_cols(&[h, z]);
            let (obs_hat, reward_hat, cont_logit) = self.decode_graph(cx, features);
            let diff = cx.tape.sub(obs_hat, obs_target);
            let sq = cx.tape.mul(diff, diff);
            let fe = cx.tape.slice_cols(sq, 0, cfg.feature_split);
            let hi = cx
                .tape
                .slice_cols(sq, cfg.feature_split, cfg.obs_dim - cfg.feature_split);
            obs_fe_terms.push(cx.tape.sum_all(fe));
            obs_hi_terms.push(cx.tape.sum_all(hi));

            if t > 0 {
                let rew_rows: Vec<Vec<E>> = batch
                    .iter()
                    .map(|s| vec![E::from_f64(s.rewards_smoothed[t - 1])])
                    .collect();
                let rew_target = cx.constant(Tensor::from_rows(&rew_rows));
                let rdiff = cx.tape.sub(reward_hat, rew_target);
                let rsq = cx.tape.mul(rdiff, rdiff);
                reward_terms.push(cx.tape.sum_all(rsq));

                let cont_rows: Vec<Vec<E>> = batch
                    .iter()
                    .map(|s| vec![if s.continues[t - 1] { E::ONE } else { E::ZERO }])
                    .collect();
                let nll = cx.tape.bce_logits(cont_logit, Tensor::from_rows(&cont_rows));
                cont_terms.push(cx.tape.sum_all(nll));
            }
        }

        let per_enc = 1.0 / (b * (l + 1)) as f64;
        let per_step = 1.0 / (b * l) as f64;
        let obs_features = scaled_sum(cx, &obs_fe_terms, 0.5 * per_enc);
        let obs_histogram = scaled_sum(cx, &obs_hi_terms, 0.5 * per_enc);
        let reward = scaled_sum(cx, &reward_terms, 0.5 * per_step);
        let cont = scaled_sum(cx, &cont_terms, per_step);
        let kl = scaled_sum(cx, &kl_terms, per_enc);

        let mut total = cx.tape.scale(obs_features, E::from_f64(cfg.scale_obs_features));
        for (term, scale) in [
            (obs_histogram, cfg.scale_obs_histogram),
            (reward, cfg.scale_reward),
            (cont, cfg.scale_continue),
            (kl, cfg.scale_kl),
        ] {
            let scaled = cx.tape.scale(term, E::from_f64(scale));
            total = cx.tape.add(total, scaled);
        }
        Ok(WmLossVars {
            total,
            obs_features,
            obs_histogram,
            reward,
            cont,
            kl,
            states,
        })
    }

    /// One optimizer step. A non-finite loss or gradient skips the update
    /// and reports it in the metrics instead of failing. Returns the
    /// posterior states visited during the unroll, stacked time-major into
    /// one batch of `B*(L+1)` rows, as imagination starting points.
    pub fn train_step(
        &mut self,
        batch: &[Subsequence],
        rng: &mut Prng,
    ) -> Result<(WmMetrics, LatentState<E>), ModelError> {
        let (mut metrics, grads, states) = {
            let mut cx = Ctx::new(&self.params);
            let vars = self.loss_graph(&mut cx, batch, &mut LatentSampler::Sampled(rng))?;
            let metrics = WmMetrics {
                total: cx.value(vars.total).item().to_f64(),
                obs_features: cx.value(vars.obs_features).item().to_f64(),
                obs_histogram: cx.value(vars.obs_histogram).item().to_f64(),
                reward: cx.value(vars.reward).item().to_f64(),
                cont: cx.value(vars.cont).item().to_f64(),
                kl: cx.value(vars.kl).item().to_f64(),
                grad_norm: 0.0,
                skipped: false,
            };
            let states = self.stack_states(&cx, &vars.states);
            if !metrics.total.is_finite() {
                return Ok((
                    WmMetrics {
                        skipped: true,
                        ..metrics
                    },
                    states,
                ));
            }
            (metrics, cx.grads(vars.total), states)
        };
        if grads.values().any(|g| !g.all_finite()) {
            metrics.skipped = true;
            return Ok((metrics, states));
        }
        metrics.grad_norm = adam_step(&mut self.params, &grads, &self.opt_cfg, &mut self.opt);
        Ok((metrics, states))
    }

    fn stack_states(&self, cx: &Ctx<E>, states: &[(Var, Var)]) -> LatentState<E> {
        let per = cx.value(states[0].0).rows();
        let rows = per * states.len();
        let mut h = Tensor::zeros(rows, self.cfg.h_dim);
        let mut z = Tensor::zeros(rows, self.cfg.latent_dim());
        for (i, &(hv, zv)) in states.iter().enumerate() {
            let (hs, zs) = (cx.value(hv), cx.value(zv));
            let (hc, zc) = (self.cfg.h_dim, self.cfg.latent_dim());
            h.data_mut()[i * per * hc..(i + 1) * per * hc].copy_from_slice(hs.data());
            z.data_mut()[i * per * zc..(i + 1) * per * zc].copy_from_slice(zs.data());
        }
        LatentState { h, z }
    }

    /// Rolls the prior forward under `policy` for `horizon` steps.
    pub fn imagine<P>(
        &self,
        start: &LatentState<E>,
        horizon: usize,
        rng: &mut Prng,
        mut policy: P,
    ) -> ImaginedTrajectory<E>
    where
        P: FnMut(&Tensor<E>, &mut Prng) -> Vec<usize>,
    {
        let mut state = start.clone();
        let mut traj = ImaginedTrajectory {
            features: vec![state.features()],
            actions: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon),
            continues: Vec::with_capacity(horizon),
        };
        for _ in 0..horizon {
            let acts = policy(traj.features.last().unwrap(), rng);
            state = self.prior_step(&state, &acts, &mut LatentSampler::Sampled(rng));
            let decoded = self.decode(&state);
            traj.features.push(state.features());
            traj.actions.push(acts);
            traj.rewards.push(decoded.reward);
            traj.continues.push(decoded.continue_prob);
        }
        traj
    }
}

/// Balance-weighted symmetric-stopgrad KL with a per-group floor:
/// balance * KL(sg(post) || prior) + (1-balance) * KL(post || sg(prior)),
/// each direction clamped at `free_bits` per group before summation.
/// Probability inputs are (batch*groups, classes); the result is the sum
/// over all rows.
pub fn balanced_kl_graph<E: Scalar>(
    cx: &mut Ctx<E>,
    post_probs: Var,
    prior_probs: Var,
    balance: f64,
    free_bits: f64,
) -> Var {
    let ln_post = cx.tape.ln(post_probs);
    let ln_prior = cx.tape.ln(prior_probs);
    let sg_post = cx.tape.stop_grad(post_probs);
    let sg_ln_post = cx.tape.stop_grad(ln_post);
    let sg_ln_prior = cx.tape.stop_grad(ln_prior);

    let d1 = cx.tape.sub(sg_ln_post, ln_prior);
    let m1 = cx.tape.mul(sg_post, d1);
    let kl_dyn = cx.tape.row_sum(m1);
    let d2 = cx.tape.sub(ln_post, sg_ln_prior);
    let m2 = cx.tape.mul(post_probs, d2);
    let kl_rep = cx.tape.row_sum(m2);

    let fb = E::from_f64(free_bits);
    let c1 = cx.tape.clamp_min(kl_dyn, fb);
    let c2 = cx.tape.clamp_min(kl_rep, fb);
    let s1 = cx.tape.sum_all(c1);
    let s2 = cx.tape.sum_all(c2);
    let w1 = cx.tape.scale(s1, E::from_f64(balance));
    let w2 = cx.tape.scale(s2, E::from_f64(1.0 - balance));
    cx.tape.add(w1, w2)
}

fn scaled_sum<E: Scalar>(cx: &mut Ctx<E>, terms: &[Var], scale: f64) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = cx.tape.add(acc, t);
    }
    cx.tape.scale(acc, E::from_f64(scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::{fd_param_grads, max_rel_err};
    use rand::Rng;

    fn toy_batch(cfg: &WorldModelConfig, b: usize, l: usize, seed: u64) -> Vec<Subsequence> {
        let mut rng = Prng::seed_from_u64(seed);
        (0..b)
            .map(|_| Subsequence {
                observations: (0..=l)
                    .map(|_| (0..cfg.obs_dim).map(|_| rng.gen_range(0.0..1.0)).collect())
                    .collect(),
                actions: (0..l).map(|_| rng.gen_range(0..cfg.action_dim)).collect(),
                rewards_smoothed: (0..l).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                continues: (0..l).map(|i| i + 1 < l).collect(),
            })
            .collect()
    }

    #[test]
    fn posterior_and_prior_share_the_recurrent_state() {
        let cfg = WorldModelConfig::toy(8, 3);
        let wm: WorldModel<f32> = WorldModel::init(cfg, 1).unwrap();
        let prev = wm.initial_state(2);
        let obs = Tensor::from_rows(&vec![vec![0.3_f32; 8]; 2]);
        let mut rng = Prng::seed_from_u64(5);
        let post = wm.posterior_step(&prev, Some(&[1, 2]), &obs, &mut LatentSampler::Sampled(&mut rng));
        let prior = wm.prior_step(&prev, &[1, 2], &mut LatentSampler::Mode);
        assert_eq!(post.h.data(), prior.h.data());

        let mut rng_a = Prng::seed_from_u64(9);
        let mut rng_b = Prng::seed_from_u64(9);
        let a = wm.posterior_step(&prev, None, &obs, &mut LatentSampler::Sampled(&mut rng_a));
        let b = wm.posterior_step(&prev, None, &obs, &mut LatentSampler::Sampled(&mut rng_b));
        assert_eq!(a.z.data(), b.z.data());
    }

    #[test]
    fn sampled_latents_are_one_hot_per_group() {
        let cfg = WorldModelConfig::toy(8, 3);
        let wm: WorldModel<f32> = WorldModel::init(cfg.clone(), 2).unwrap();
        let mut rng = Prng::seed_from_u64(0);
        let mut state = wm.initial_state(4);
        for _ in 0..5 {
            state = wm.prior_step(&state, &[0, 1, 2, 0], &mut LatentSampler::Sampled(&mut rng));
            for r in 0..4 {
                let row = state.z.row_slice(r);
                for g in 0..cfg.groups {
                    let group = &row[g * cfg.classes..(g + 1) * cfg.classes];
                    let ones = group.iter().filter(|&&v| v == 1.0).count();
                    let zeros = group.iter().filter(|&&v| v == 0.0).count();
                    assert_eq!((ones, zeros), (1, cfg.classes - 1));
                }
            }
        }
    }

    #[test]
    fn untrained_posterior_is_near_uniform() {
        let cfg = WorldModelConfig::toy(8, 3);
        let wm: WorldModel<f64> = WorldModel::init(cfg.clone(), 3).unwrap();
        let mut cx = Ctx::new(&wm.params);
        let h = cx.constant(Tensor::zeros(1, cfg.h_dim));
        let obs = cx.constant(Tensor::from_rows(&[vec![0.7; 8]]));
        let hv = {
            let z = cx.constant(Tensor::zeros(1, cfg.latent_dim()));
            let a = cx.constant(Tensor::zeros(1, cfg.action_dim));
            let h2 = wm.recurrent_graph(&mut cx, h, z, a);
            h2
        };
        for logits in [
            wm.posterior_logits_graph(&mut cx, hv, obs),
            wm.prior_logits_graph(&mut cx, hv),
        ] {
            let probs = categorical_probs(&mut cx, logits, cfg.groups, cfg.classes, cfg.unimix);
            for row in 0..cfg.groups {
                let p = cx.value(probs).row_slice(row);
                let entropy: f64 = -p.iter().map(|&v| v * v.ln()).sum::<f64>();
                assert!(entropy >= 0.9 * (cfg.classes as f64).ln(), "entropy {entropy}");
            }
        }
    }

    #[test]
    fn identical_posterior_and_prior_hit_the_free_bits_floor() {
        let cfg = WorldModelConfig::toy(8, 3);
        let wm: WorldModel<f32> = WorldModel::init(cfg.clone(), 4).unwrap();
        let batch = toy_batch(&cfg, 2, 3, 7);
        let mut rng = Prng::seed_from_u64(1);
        let mut cx = Ctx::new(&wm.params);
        let vars = wm
            .loss_graph(&mut cx, &batch, &mut LatentSampler::Sampled(&mut rng))
            .unwrap();
        let kl = cx.value(vars.kl).item() as f64;
        let floor = cfg.groups as f64 * cfg.free_bits;
        assert!((kl - floor).abs() < 1e-5, "kl {kl} vs floor {floor}");
    }

    #[test]
    fn zero_targets_give_zero_reconstruction_error_at_init() {
        let cfg = WorldModelConfig::toy(8, 3);
        let wm: WorldModel<f32> = WorldModel::init(cfg.clone(), 5).unwrap();
        let mut batch = toy_batch(&cfg, 2, 2, 11);
        for sub in &mut batch {
            for o in &mut sub.observations {
                o.iter_mut().for_each(|v| *v = 0.0);
            }
            sub.rewards_smoothed.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut rng = Prng::seed_from_u64(2);
        let mut cx = Ctx::new(&wm.params);
        let vars = wm
            .loss_graph(&mut cx, &batch, &mut LatentSampler::Sampled(&mut rng))
            .unwrap();
        assert_eq!(cx.value(vars.obs_features).item(), 0.0);
        assert_eq!(cx.value(vars.obs_histogram).item(), 0.0);
        assert_eq!(cx.value(vars.reward).item(), 0.0);
        // zero-init continue head sits at probability 0.5
        let expect = -(0.5_f64.ln());
        assert!((cx.value(vars.cont).item() as f64 - expect).abs() < 1e-6);
    }

    // The KL term is excluded here: its stop-gradient balancing makes the
    // analytic gradient deliberately differ from the value's derivative.
    // Both KL directions get their own finite-difference check below.
    #[test]
    fn loss_gradients_match_finite_differences_in_soft_mode() {
        let mut cfg = WorldModelConfig::toy(6, 2);
        cfg.free_bits = 0.0;
        cfg.scale_kl = 0.0;
        let mut wm: WorldModel<f64> = WorldModel::init(cfg.clone(), 6).unwrap();
        let mut rng = Prng::seed_from_u64(13);
        let names: Vec<String> = wm.params.iter().map(|(n, _)| n.clone()).collect();
        for name in names {
            let t = wm.params.get_mut(&name);
            for v in t.data_mut() {
                *v += 0.15 * crate::nn::normal_sample(&mut rng);
            }
        }
        let batch = toy_batch(&cfg, 2, 3, 17);

        let analytic = {
            let mut cx = Ctx::new(&wm.params);
            let vars = wm
                .loss_graph(&mut cx, &batch, &mut LatentSampler::Soft)
                .unwrap();
            cx.grads(vars.total)
        };
        let wm_ref = &wm;
        let batch_ref = &batch;
        let numeric = fd_param_grads(&wm.params, |store| {
            let probe = WorldModel {
                cfg: wm_ref.cfg.clone(),
                params: store.clone(),
                opt_cfg: wm_ref.opt_cfg.clone(),
                opt: AdamState::new(),
            };
            let mut cx = Ctx::new(store);
            let vars = probe
                .loss_graph(&mut cx, batch_ref, &mut LatentSampler::Soft)
                .unwrap();
            cx.value(vars.total).item()
        });
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn kl_balance_scales_gradients_by_direction() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.insert("post.logits", Tensor::row(vec![0.4, -0.3]));
        store.insert("prior.logits", Tensor::row(vec![-0.2, 0.9]));

        let grads_at = |balance: f64| {
            let mut cx = Ctx::new(&store);
            let post_l = cx.p("post.logits");
            let prior_l = cx.p("prior.logits");
            let post_p = categorical_probs(&mut cx, post_l, 1, 2, 0.0);
            let prior_p = categorical_probs(&mut cx, prior_l, 1, 2, 0.0);
            let kl = balanced_kl_graph(&mut cx, post_p, prior_p, balance, 0.0);
            cx.grads(kl)
        };

        let full_prior = grads_at(1.0);
        let full_post = grads_at(0.0);
        let mixed = grads_at(0.8);
        let zeroed =
            |g: Option<&Tensor<f64>>| g.map_or(true, |t| t.data().iter().all(|&v| v == 0.0));
        assert!(zeroed(full_prior.get("post.logits")));
        assert!(zeroed(full_post.get("prior.logits")));
        for i in 0..2 {
            let gp = mixed.get("prior.logits").unwrap().data()[i];
            let expect_p = 0.8 * full_prior.get("prior.logits").unwrap().data()[i];
            assert!((gp - expect_p).abs() < 1e-12);
            let gq = mixed.get("post.logits").unwrap().data()[i];
            let expect_q = 0.2 * full_post.get("post.logits").unwrap().data()[i];
            assert!((gq - expect_q).abs() < 1e-12);
        }

        // each pure direction reproduces the true KL derivative on its side
        let numeric = fd_param_grads(&store, |s| {
            let mut cx = Ctx::new(s);
            let post_l = cx.p("post.logits");
            let prior_l = cx.p("prior.logits");
            let post_p = categorical_probs(&mut cx, post_l, 1, 2, 0.0);
            let prior_p = categorical_probs(&mut cx, prior_l, 1, 2, 0.0);
            let kl = balanced_kl_graph(&mut cx, post_p, prior_p, 0.5, 0.0);
            cx.value(kl).item()
        });
        for (analytic, name) in [(&full_post, "post.logits"), (&full_prior, "prior.logits")] {
            let g = analytic.get(name).unwrap();
            let n = numeric.get(name).unwrap();
            for i in 0..2 {
                assert!((g.data()[i] - n.data()[i]).abs() < 1e-6, "{name}[{i}]");
            }
        }
    }

    #[test]
    fn train_step_is_deterministic_and_frozen_at_zero_lr() {
        let cfg = WorldModelConfig::toy(8, 3);
        let batch = toy_batch(&cfg, 2, 3, 23);

        let run = |seed: u64| {
            let mut wm: WorldModel<f32> = WorldModel::init(cfg.clone(), 8).unwrap();
            let mut rng = Prng::seed_from_u64(seed);
            for _ in 0..3 {
                wm.train_step(&batch, &mut rng).unwrap();
            }
            wm.params
                .iter()
                .flat_map(|(_, t)| t.data().to_vec())
                .collect::<Vec<f32>>()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));

        let mut frozen_cfg = cfg.clone();
        frozen_cfg.learning_rate = 0.0;
        frozen_cfg.weight_decay = 0.0;
        let mut wm: WorldModel<f32> = WorldModel::init(frozen_cfg, 8).unwrap();
        let before: Vec<f32> = wm.params.iter().flat_map(|(_, t)| t.data().to_vec()).collect();
        let mut rng = Prng::seed_from_u64(0);
        let (metrics, _) = wm.train_step(&batch, &mut rng).unwrap();
        assert!(!metrics.skipped);
        assert!(metrics.grad_norm > 0.0);
        let after: Vec<f32> = wm.params.iter().flat_map(|(_, t)| t.data().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn training_reduces_the_loss_on_a_fixed_batch() {
        let cfg = WorldModelConfig {
            learning_rate: 3e-3,
            ..WorldModelConfig::toy(8, 3)
        };
        let mut wm: WorldModel<f32> = WorldModel::init(cfg.clone(), 9).unwrap();
        let batch = toy_batch(&cfg, 4, 4, 31);
        let mut rng = Prng::seed_from_u64(77);
        let mut first = 0.0;
        let mut last = 0.0;
        for step in 0..120 {
            let (m, _) = wm.train_step(&batch, &mut rng).unwrap();
            assert!(!m.skipped);
            if step == 0 {
                first = m.total;
            }
            last = m.total;
        }
        assert!(
            last < 0.7 * first,
            "loss went from {first} to {last} without improving enough"
        );
    }

    #[test]
    fn imagination_has_the_requested_shape_and_is_reproducible() {
        let cfg = WorldModelConfig::toy(8, 3);
        let wm: WorldModel<f32> = WorldModel::init(cfg, 10).unwrap();
        let start = wm.initial_state(2);

        let empty = wm.imagine(&start, 0, &mut Prng::seed_from_u64(0), |_, _| vec![0, 0]);
        assert_eq!(empty.horizon(), 0);
        assert_eq!(empty.features.len(), 1);

        let run = |seed: u64| {
            let mut rng = Prng::seed_from_u64(seed);
            let traj = wm.imagine(&start, 6, &mut rng, |feat, _| {
                (0..feat.rows()).map(|r| r % 3).collect()
            });
            (traj.actions.clone(), traj.rewards.clone(), traj.features.len())
        };
        let a = run(4);
        let b = run(4);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, 7);
    }
}
