//! The pass-ordering environment: one optimization pass per step, normalized
//! feature observations, and reward equal to the per-step drop in instruction
//! count scaled by the program's total headroom under the baseline pipeline.

pub mod action_space;
pub mod real;
pub mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use action_space::ActionSpace;
pub use real::{resolve_opt_path, RealBackend, OPT_PATH_ENV};
pub use synthetic::{Guard, SyntheticAction, SyntheticEffectTable, SyntheticRule};

use crate::ir::{extract_autophase, parse_ir, FEATURE_COUNT};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("ir parse error: {0}")]
    Parse(#[from] crate::ir::ParseError),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("action {action} out of range for {size} actions")]
    InvalidAction { action: usize, size: usize },
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum BackendConfig {
    Real { opt_path: Option<PathBuf> },
    Synthetic(SyntheticEffectTable),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMode {
    /// Run the tool's `-Oz` pipeline on the initial program.
    OzPipeline,
    /// The caller supplies the baseline count with the program.
    ProvidedCount,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvConfig {
    pub backend: BackendConfig,
    pub action_space: ActionSpace,
    pub episode_limit: usize,
    pub baseline_mode: BaselineMode,
}

impl EnvConfig {
    pub fn synthetic(table: SyntheticEffectTable, action_space: ActionSpace) -> Self {
        EnvConfig {
            backend: BackendConfig::Synthetic(table),
            action_space,
            episode_limit: 45,
            baseline_mode: BaselineMode::ProvidedCount,
        }
    }

    pub fn real(opt_path: Option<PathBuf>, action_space: ActionSpace) -> Self {
        EnvConfig {
            backend: BackendConfig::Real { opt_path },
            action_space,
            episode_limit: 45,
            baseline_mode: BaselineMode::OzPipeline,
        }
    }
}

/// An episode's starting point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Program {
    Ir {
        text: String,
        /// Baseline count for [`BaselineMode::ProvidedCount`].
        provided_baseline: Option<u64>,
    },
    Synthetic {
        /// Overrides the table's initial counters when present.
        counters: Option<Vec<u64>>,
        /// Overrides the table's baseline count when present.
        baseline_count: Option<u64>,
    },
}

impl Program {
    pub fn ir(text: impl Into<String>) -> Self {
        Program::Ir {
            text: text.into(),
            provided_baseline: None,
        }
    }

    pub fn synthetic_default() -> Self {
        Program::Synthetic {
            counters: None,
            baseline_count: None,
        }
    }

    pub fn synthetic(counters: Vec<u64>, baseline_count: u64) -> Self {
        Program::Synthetic {
            counters: Some(counters),
            baseline_count: Some(baseline_count),
        }
    }
}

/// Normalized observation: 56 feature slots scaled by the initial
/// instruction count, then one histogram slot per action scaled by the
/// episode limit.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub values: Vec<f64>,
}

impl Observation {
    pub fn feature_part(&self) -> &[f64] {
        &self.values[..FEATURE_COUNT]
    }

    pub fn histogram_part(&self) -> &[f64] {
        &self.values[FEATURE_COUNT..]
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    pub instruction_count: u64,
    pub pass_failed: bool,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Everything produced by one full episode, in raw (unsmoothed) form.
#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub observations: Vec<Observation>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub counts: Vec<u64>,
    pub pass_failed: Vec<bool>,
    pub initial_count: u64,
    pub baseline_count: u64,
    pub reached_limit: bool,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn final_count(&self) -> u64 {
        *self.counts.last().unwrap_or(&self.initial_count)
    }
}

struct EpisodeState {
    ir_text: Option<String>,
    counters: Option<Vec<u64>>,
    features: [u64; FEATURE_COUNT],
    count: u64,
    initial_count: u64,
    baseline_count: u64,
    histogram: Vec<u64>,
    steps: usize,
    done: bool,
}

pub struct CompilerEnv {
    cfg: EnvConfig,
    real: Option<RealBackend>,
    state: Option<EpisodeState>,
}

impl CompilerEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self, EnvError> {
        if cfg.episode_limit == 0 {
            return Err(EnvError::Config("episode_limit must be at least 1".into()));
        }
        if let BackendConfig::Synthetic(table) = &cfg.backend {
            table.validate().map_err(EnvError::Config)?;
            if table.actions.len() != cfg.action_space.size() {
                return Err(EnvError::Config(format!(
                    "effect table has {} actions but action space has {}",
                    table.actions.len(),
                    cfg.action_space.size()
                )));
            }
        }
        let real = match &cfg.backend {
            BackendConfig::Real { opt_path } => {
                Some(RealBackend::new(opt_path.as_deref())?)
            }
            BackendConfig::Synthetic(_) => None,
        };
        Ok(CompilerEnv {
            cfg,
            real,
            state: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.cfg.action_space
    }

    pub fn episode_limit(&self) -> usize {
        self.cfg.episode_limit
    }

    pub fn observation_dim(&self) -> usize {
        FEATURE_COUNT + self.cfg.action_space.size()
    }

    pub fn reset(&mut self, program: &Program) -> Result<Observation, EnvError> {
        let state = match (&self.cfg.backend, program) {
            (BackendConfig::Real { .. }, Program::Ir { text, provided_baseline }) => {
                let module = parse_ir(text)?;
                let features = extract_autophase(&module).values;
                let count = features[51];
                let baseline = match self.cfg.baseline_mode {
                    BaselineMode::OzPipeline => {
                        self.real.as_ref().unwrap().oz_count(text)?
                    }
                    BaselineMode::ProvidedCount => provided_baseline.ok_or_else(|| {
                        EnvError::Config(
                            "baseline_mode ProvidedCount but program carries no baseline".into(),
                        )
                    })?,
                };
                EpisodeState {
                    ir_text: Some(text.clone()),
                    counters: None,
                    features,
                    count,
                    initial_count: count,
                    baseline_count: baseline,
                    histogram: vec![0; self.cfg.action_space.size()],
                    steps: 0,
                    done: false,
                }
            }
            (BackendConfig::Synthetic(table), Program::Synthetic { counters, baseline_count }) => {
                let counters = counters.clone().unwrap_or_else(|| table.initial.clone());
                if counters.len() != table.k {
                    return Err(EnvError::Config(format!(
                        "synthetic state has {} counters, table expects {}",
                        counters.len(),
                        table.k
                    )));
                }
                let features = SyntheticEffectTable::feature_vector(&counters);
                let count = SyntheticEffectTable::cost(&counters);
                let baseline = baseline_count.unwrap_or(table.baseline_count);
                EpisodeState {
                    ir_text: None,
                    counters: Some(counters),
                    features,
                    count,
                    initial_count: count,
                    baseline_count: baseline,
                    histogram: vec![0; self.cfg.action_space.size()],
                    steps: 0,
                    done: false,
                }
            }
            _ => {
                return Err(EnvError::Config(
                    "program kind does not match backend kind".into(),
                ))
            }
        };
        self.state = Some(state);
        Ok(self.observation())
    }

    /// Current normalized observation; panics if reset has not been called.
    pub fn observation(&self) -> Observation {
        let s = self.state.as_ref().expect("environment not reset");
        let c0 = s.initial_count.max(1) as f64;
        let limit = self.cfg.episode_limit as f64;
        let mut values = Vec::with_capacity(FEATURE_COUNT + s.histogram.len());
        values.extend(s.features.iter().map(|&f| f as f64 / c0));
        values.extend(s.histogram.iter().map(|&h| h as f64 / limit));
        Observation { values }
    }

    pub fn current_count(&self) -> u64 {
        self.state.as_ref().expect("environment not reset").count
    }

    pub fn initial_count(&self) -> u64 {
        self.state
            .as_ref()
            .expect("environment not reset")
            .initial_count
    }

    pub fn baseline_count(&self) -> u64 {
        self.state
            .as_ref()
            .expect("environment not reset")
            .baseline_count
    }

    /// Eq.-style reward denominator: the headroom under the baseline,
    /// floored at one so degenerate programs keep finite rewards.
    pub fn reward_denominator(&self) -> f64 {
        let s = self.state.as_ref().expect("environment not reset");
        denominator(s.initial_count, s.baseline_count)
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        let size = self.cfg.action_space.size();
        if action >= size {
            return Err(EnvError::InvalidAction { action, size });
        }
        let s = self.state.as_mut().ok_or_else(|| {
            EnvError::Config("step before reset".into())
        })?;
        if s.done {
            return Err(EnvError::EpisodeFinished);
        }
        let prev_count = s.count;
        let mut pass_failed = false;
        match &self.cfg.backend {
            BackendConfig::Synthetic(table) => {
                let counters = s.counters.as_ref().unwrap();
                let next = table.apply(counters, action);
                s.features = SyntheticEffectTable::feature_vector(&next);
                s.count = SyntheticEffectTable::cost(&next);
                s.counters = Some(next);
            }
            BackendConfig::Real { .. } => {
                let flag = self.cfg.action_space.flag(action);
                let text = s.ir_text.as_ref().unwrap();
                match self.real.as_ref().unwrap().run_passes(text, &[flag]) {
                    Ok(out) => match parse_ir(&out) {
                        Ok(module) => {
                            s.features = extract_autophase(&module).values;
                            s.count = s.features[51];
                            s.ir_text = Some(out);
                        }
                        Err(_) => pass_failed = true,
                    },
                    Err(_) => pass_failed = true,
                }
            }
        }
        let s = self.state.as_mut().unwrap();
        let denom = denominator(s.initial_count, s.baseline_count);
        let reward = (prev_count as f64 - s.count as f64) / denom;
        s.histogram[action] += 1;
        s.steps += 1;
        s.done = s.steps == self.cfg.episode_limit;
        let done = s.done;
        let info = StepInfo {
            instruction_count: s.count,
            pass_failed,
        };
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done,
            info,
        })
    }

    /// Plays a fixed action sequence on a freshly reset environment.
    pub fn rollout(&mut self, actions: &[usize]) -> Result<EpisodeRecord, EnvError> {
        {
            let s = self
                .state
                .as_ref()
                .ok_or_else(|| EnvError::Config("rollout before reset".into()))?;
            if s.steps != 0 {
                return Err(EnvError::Config("rollout needs a freshly reset env".into()));
            }
            if actions.len() > self.cfg.episode_limit {
                return Err(EnvError::Config(format!(
                    "sequence of {} actions exceeds episode limit {}",
                    actions.len(),
                    self.cfg.episode_limit
                )));
            }
        }
        let mut record = EpisodeRecord {
            observations: vec![self.observation()],
            actions: Vec::with_capacity(actions.len()),
            rewards: Vec::with_capacity(actions.len()),
            counts: vec![self.current_count()],
            pass_failed: Vec::with_capacity(actions.len()),
            initial_count: self.initial_count(),
            baseline_count: self.baseline_count(),
            reached_limit: false,
        };
        for &a in actions {
            let r = self.step(a)?;
            record.observations.push(r.observation);
            record.actions.push(a);
            record.rewards.push(r.reward);
            record.counts.push(r.info.instruction_count);
            record.pass_failed.push(r.info.pass_failed);
            record.reached_limit = r.done;
        }
        Ok(record)
    }

    /// Baseline count for a program without disturbing episode state.
    pub fn oz_baseline(&self, ir_text: &str) -> Result<u64, EnvError> {
        match &self.real {
            Some(backend) => backend.oz_count(ir_text),
            None => Err(EnvError::Config(
                "oz_baseline requires the real backend".into(),
            )),
        }
    }
}

fn denominator(initial: u64, baseline: u64) -> f64 {
    initial.saturating_sub(baseline).max(1) as f64
}
