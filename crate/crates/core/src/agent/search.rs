//! Pass-sequence search built on the learned model: scoring candidate
//! sequences entirely in latent space, ranking a fixed core set, and
//! sampling-based refinement of the greedy policy.

use std::time::Instant;

use crate::env::{ActionSpace, CompilerEnv, Observation, Program};
use crate::model::{LatentSampler, WorldModel};
use crate::nn::{Scalar, Tensor};
use crate::util::Prng;

use super::{ActorCritic, AgentError, RolloutMode};

/// A list of candidate pass sequences, ranked and replayed at compile time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoreSet {
    pub sequences: Vec<Vec<usize>>,
}

impl CoreSet {
    /// One sequence per line. Entries are comma-separated and may be action
    /// indices or pass names; `#` starts a comment.
    pub fn parse(text: &str, space: &ActionSpace) -> Result<Self, AgentError> {
        let mut sequences = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let mut seq = Vec::new();
            for entry in line.split(',') {
                let entry = entry.trim();
                if entry.is_empty() {
                    continue;
                }
                let idx = match entry.parse::<usize>() {
                    Ok(i) if i < space.size() => i,
                    Ok(i) => {
                        return Err(AgentError::CoreSet(format!(
                            "line {}: action index {} out of range ({} actions)",
                            lineno + 1,
                            i,
                            space.size()
                        )))
                    }
                    Err(_) => space.index_of(entry).ok_or_else(|| {
                        AgentError::CoreSet(format!(
                            "line {}: unknown pass {:?}",
                            lineno + 1,
                            entry
                        ))
                    })?,
                };
                seq.push(idx);
            }
            if seq.is_empty() {
                return Err(AgentError::CoreSet(format!("line {}: empty sequence", lineno + 1)));
            }
            sequences.push(seq);
        }
        if sequences.is_empty() {
            return Err(AgentError::CoreSet("no sequences".into()));
        }
        Ok(CoreSet { sequences })
    }
}

#[derive(Clone, Copy, Debug)]
pub enum SearchBudget {
    Seconds(f64),
    PassApplications(usize),
}

impl SearchBudget {
    fn tracker(self) -> BudgetTracker {
        BudgetTracker {
            budget: self,
            started: Instant::now(),
            applications: 0,
        }
    }
}

struct BudgetTracker {
    budget: SearchBudget,
    started: Instant,
    applications: usize,
}

impl BudgetTracker {
    fn spent(&self) -> bool {
        match self.budget {
            SearchBudget::Seconds(s) => self.started.elapsed().as_secs_f64() >= s,
            SearchBudget::PassApplications(n) => self.applications >= n,
        }
    }

    fn charge(&mut self) {
        self.applications += 1;
    }
}

/// Predicted cumulative normalized reward of running `sequence` from the
/// program whose first observation is `obs0`, without touching the
/// compiler: posterior-encode the start, then roll the prior with mode
/// latents and sum decoded rewards.
pub fn value_predict<E: Scalar>(wm: &WorldModel<E>, obs0: &Observation, sequence: &[usize]) -> f64 {
    let obs = Tensor::from_rows(&[obs0
        .values
        .iter()
        .map(|&v| E::from_f64(v))
        .collect::<Vec<E>>()]);
    let mut state = wm.posterior_step(&wm.initial_state(1), None, &obs, &mut LatentSampler::Mode);
    let mut total = 0.0;
    for &action in sequence {
        state = wm.prior_step(&state, &[action], &mut LatentSampler::Mode);
        total += wm.decode(&state).reward[0];
    }
    total
}

/// How candidate sequences are scored before any of them is executed.
pub enum Scorer<'a, E: Scalar> {
    /// Latent-space prediction; never runs the compiler.
    Model(&'a WorldModel<E>),
    /// Ground truth: executes the sequence and sums the rewards. Only used
    /// for calibration and tests.
    Oracle,
}

impl<'a, E: Scalar> Scorer<'a, E> {
    pub fn score(
        &self,
        env: &mut CompilerEnv,
        program: &Program,
        obs0: &Observation,
        sequence: &[usize],
    ) -> Result<f64, AgentError> {
        match self {
            Scorer::Model(wm) => Ok(value_predict(wm, obs0, sequence)),
            Scorer::Oracle => {
                env.reset(program)?;
                let mut total = 0.0;
                for &action in sequence {
                    total += env.step(action)?.reward;
                }
                Ok(total)
            }
        }
    }
}

/// Result of a search: the best pass prefix found and the instruction
/// counts that justify it.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub sequence: Vec<usize>,
    pub final_count: u64,
    pub initial_count: u64,
    pub baseline_count: u64,
    pub pass_applications: usize,
}

impl SearchOutcome {
    /// Size improvement over the fixed pipeline baseline; above one means
    /// smaller code than the baseline.
    pub fn ratio(&self) -> f64 {
        self.baseline_count as f64 / self.final_count.max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct CoresetOutcome {
    pub outcome: SearchOutcome,
    pub ranking: Vec<usize>,
    pub executed: usize,
}

/// Scores every core-set sequence, then executes them in descending score
/// order under a global pass budget, keeping the best prefix seen at any
/// point (including the untouched program).
pub fn coreset_select<E: Scalar>(
    env: &mut CompilerEnv,
    program: &Program,
    coreset: &CoreSet,
    scorer: &Scorer<E>,
    budget: SearchBudget,
) -> Result<CoresetOutcome, AgentError> {
    let obs0 = env.reset(program)?;
    let initial_count = env.initial_count();
    let baseline_count = env.baseline_count();
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(coreset.sequences.len());
    for (i, seq) in coreset.sequences.iter().enumerate() {
        scored.push((i, scorer.score(env, program, &obs0, seq)?));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let ranking: Vec<usize> = scored.iter().map(|&(i, _)| i).collect();

    let mut best_count = initial_count;
    let mut best_seq: Vec<usize> = Vec::new();
    let mut tracker = budget.tracker();
    let mut executed = 0;
    'outer: for &idx in &ranking {
        let seq = &coreset.sequences[idx];
        env.reset(program)?;
        executed += 1;
        for (pos, &action) in seq.iter().enumerate() {
            if tracker.spent() {
                break 'outer;
            }
            let step = env.step(action)?;
            tracker.charge();
            if step.info.instruction_count < best_count {
                best_count = step.info.instruction_count;
                best_seq = seq[..=pos].to_vec();
            }
            if step.done {
                break;
            }
        }
    }
    Ok(CoresetOutcome {
        outcome: SearchOutcome {
            sequence: best_seq,
            final_count: best_count,
            initial_count,
            baseline_count,
            pass_applications: tracker.applications,
        },
        ranking,
        executed,
    })
}

/// Compile-time search seeded by the trained agent. The first episode is
/// the deterministic greedy rollout, so the result never falls below it;
/// later episodes sample from the policy with occasional uniform
/// substitutions to escape its mode.
pub fn guided_search<E: Scalar>(
    env: &mut CompilerEnv,
    program: &Program,
    wm: &WorldModel<E>,
    ac: &ActorCritic<E>,
    budget: SearchBudget,
    rng: &mut Prng,
) -> Result<SearchOutcome, AgentError> {
    use rand::Rng;
    let action_dim = env.action_space().size();
    let mut tracker = budget.tracker();
    let mut best: Option<SearchOutcome> = None;
    let mut first = true;
    loop {
        let obs0 = env.reset(program)?;
        let initial_count = env.initial_count();
        let baseline_count = env.baseline_count();
        if best.is_none() {
            best = Some(SearchOutcome {
                sequence: Vec::new(),
                final_count: initial_count,
                initial_count,
                baseline_count,
                pass_applications: 0,
            });
        }
        let obs_row = |o: &Observation| {
            Tensor::from_rows(&[o.values.iter().map(|&v| E::from_f64(v)).collect::<Vec<E>>()])
        };
        let mut latent =
            wm.posterior_step(&wm.initial_state(1), None, &obs_row(&obs0), &mut LatentSampler::Mode);
        let mut prefix = Vec::new();
        for _ in 0..env.episode_limit() {
            if tracker.spent() {
                break;
            }
            let action = if first {
                ac.act(&latent.features(), RolloutMode::Argmax, rng)[0]
            } else if rng.gen::<f64>() < 0.05 {
                rng.gen_range(0..action_dim)
            } else {
                ac.act(&latent.features(), RolloutMode::Sample, rng)[0]
            };
            let step = env.step(action)?;
            tracker.charge();
            prefix.push(action);
            let b = best.as_mut().unwrap();
            if step.info.instruction_count < b.final_count {
                b.final_count = step.info.instruction_count;
                b.sequence = prefix.clone();
            }
            latent = wm.posterior_step(
                &latent,
                Some(&[action]),
                &obs_row(&step.observation),
                &mut LatentSampler::Mode,
            );
            if step.done {
                break;
            }
        }
        first = false;
        if tracker.spent() {
            break;
        }
    }
    let mut out = best.unwrap();
    out.pass_applications = tracker.applications;
    Ok(out)
}

/// Budget-matched baseline: uniformly random episodes, best prefix kept.
pub fn random_search(
    env: &mut CompilerEnv,
    program: &Program,
    budget: SearchBudget,
    rng: &mut Prng,
) -> Result<SearchOutcome, AgentError> {
    use rand::Rng;
    let action_dim = env.action_space().size();
    let mut tracker = budget.tracker();
    let mut best: Option<SearchOutcome> = None;
    loop {
        env.reset(program)?;
        if best.is_none() {
            best = Some(SearchOutcome {
                sequence: Vec::new(),
                final_count: env.initial_count(),
                initial_count: env.initial_count(),
                baseline_count: env.baseline_count(),
                pass_applications: 0,
            });
        }
        let mut prefix = Vec::new();
        for _ in 0..env.episode_limit() {
            if tracker.spent() {
                break;
            }
            let action = rng.gen_range(0..action_dim);
            let step = env.step(action)?;
            tracker.charge();
            prefix.push(action);
            let b = best.as_mut().unwrap();
            if step.info.instruction_count < b.final_count {
                b.final_count = step.info.instruction_count;
                b.sequence = prefix.clone();
            }
            if step.done {
                break;
            }
        }
        if tracker.spent() {
            break;
        }
    }
    let mut out = best.unwrap();
    out.pass_applications = tracker.applications;
    Ok(out)
}
