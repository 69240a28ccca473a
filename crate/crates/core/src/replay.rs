//! Episode storage for world-model training: exponential reward smoothing at
//! insert time, whole-episode ring eviction, and uniform fixed-length
//! subsequence sampling that never crosses episode boundaries.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EpisodeRecord;
use crate::util::Prng;

pub const DEFAULT_SMOOTHING: f64 = 0.6;
pub const DEFAULT_CAPACITY_STEPS: usize = 2_000_000;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("smoothing factor must lie in [0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("episode invariant violated: {0}")]
    BadEpisode(String),
    #[error("buffer holds no episode of length >= {length}")]
    InsufficientData { length: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("log format error: {0}")]
    Format(#[from] serde_json::Error),
}

/// r'_t = alpha * r'_{t-1} + (1 - alpha) * r_t with r'_{-1} = 0.
///
/// The zero accumulator makes each raw reward's total smoothed contribution
/// over an infinite horizon exactly the raw value.
pub fn smooth_rewards(rewards: &[f64], alpha: f64) -> Result<Vec<f64>, ReplayError> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(ReplayError::InvalidAlpha(alpha));
    }
    let mut acc = 0.0;
    Ok(rewards
        .iter()
        .map(|&r| {
            acc = alpha * acc + (1.0 - alpha) * r;
            acc
        })
        .collect())
}

/// One stored episode. Observations hold T+1 rows; the step arrays hold T
/// entries; `continues` is false exactly at the final step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplayEpisode {
    pub program_id: String,
    pub observations: Vec<Vec<f32>>,
    pub actions: Vec<usize>,
    pub rewards_raw: Vec<f64>,
    pub rewards_smoothed: Vec<f64>,
    pub continues: Vec<bool>,
    pub counts: Vec<u64>,
}

impl ReplayEpisode {
    pub fn from_record(
        program_id: impl Into<String>,
        record: &EpisodeRecord,
        alpha: f64,
    ) -> Result<Self, ReplayError> {
        let t = record.actions.len();
        let mut continues = vec![true; t];
        if let Some(last) = continues.last_mut() {
            *last = false;
        }
        let ep = ReplayEpisode {
            program_id: program_id.into(),
            observations: record
                .observations
                .iter()
                .map(|o| o.values.iter().map(|&v| v as f32).collect())
                .collect(),
            actions: record.actions.clone(),
            rewards_raw: record.rewards.clone(),
            rewards_smoothed: smooth_rewards(&record.rewards, alpha)?,
            continues,
            counts: record.counts.clone(),
        };
        ep.validate(alpha)?;
        Ok(ep)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self, alpha: f64) -> Result<(), ReplayError> {
        let t = self.actions.len();
        if t == 0 {
            return Err(ReplayError::BadEpisode("episode has no steps".into()));
        }
        if self.observations.len() != t + 1 {
            return Err(ReplayError::BadEpisode(format!(
                "{} observations for {} steps",
                self.observations.len(),
                t
            )));
        }
        if self.counts.len() != t + 1 {
            return Err(ReplayError::BadEpisode(format!(
                "{} counts for {} steps",
                self.counts.len(),
                t
            )));
        }
        if self.rewards_raw.len() != t
            || self.rewards_smoothed.len() != t
            || self.continues.len() != t
        {
            return Err(ReplayError::BadEpisode("step array lengths differ".into()));
        }
        let dim = self.observations[0].len();
        if self.observations.iter().any(|o| o.len() != dim) {
            return Err(ReplayError::BadEpisode(
                "observation rows have mixed widths".into(),
            ));
        }
        let expect = smooth_rewards(&self.rewards_raw, alpha)?;
        if self.rewards_smoothed != expect {
            return Err(ReplayError::BadEpisode(
                "smoothed rewards do not match the recurrence".into(),
            ));
        }
        if self.continues[t - 1] || self.continues[..t - 1].iter().any(|&c| !c) {
            return Err(ReplayError::BadEpisode(
                "continue flags must be true except at the final step".into(),
            ));
        }
        Ok(())
    }
}

/// A training slice: L transitions plus the observation before each and the
/// one after the last, so `observations` has L+1 rows.
#[derive(Clone, Debug)]
pub struct Subsequence {
    pub observations: Vec<Vec<f32>>,
    pub actions: Vec<usize>,
    pub rewards_smoothed: Vec<f64>,
    pub continues: Vec<bool>,
}

impl Subsequence {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.observations[0].len()
    }
}

pub struct ReplayBuffer {
    capacity_steps: usize,
    alpha: f64,
    episodes: VecDeque<ReplayEpisode>,
    total_steps: usize,
}

impl ReplayBuffer {
    pub fn new(capacity_steps: usize, alpha: f64) -> Result<Self, ReplayError> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(ReplayError::InvalidAlpha(alpha));
        }
        Ok(ReplayBuffer {
            capacity_steps,
            alpha,
            episodes: VecDeque::new(),
            total_steps: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn append(&mut self, ep: ReplayEpisode) -> Result<(), ReplayError> {
        ep.validate(self.alpha)?;
        self.total_steps += ep.len();
        self.episodes.push_back(ep);
        while self.total_steps > self.capacity_steps {
            match self.episodes.pop_front() {
                Some(old) => self.total_steps -= old.len(),
                None => break,
            }
        }
        Ok(())
    }

    pub fn append_record(
        &mut self,
        program_id: impl Into<String>,
        record: &EpisodeRecord,
    ) -> Result<(), ReplayError> {
        let ep = ReplayEpisode::from_record(program_id, record, self.alpha)?;
        self.append(ep)
    }

    /// Draws `batch` subsequences of `length` transitions, uniformly over all
    /// valid (episode, offset) pairs. Episodes shorter than `length` are
    /// skipped, never padded.
    pub fn sample(
        &self,
        batch: usize,
        length: usize,
        rng: &mut Prng,
    ) -> Result<Vec<Subsequence>, ReplayError> {
        if length == 0 {
            return Err(ReplayError::BadEpisode("subsequence length 0".into()));
        }
        let mut pair_counts = Vec::with_capacity(self.episodes.len());
        let mut total_pairs = 0usize;
        for ep in &self.episodes {
            let pairs = (ep.len() + 1).saturating_sub(length);
            pair_counts.push(pairs);
            total_pairs += pairs;
        }
        if total_pairs == 0 {
            return Err(ReplayError::InsufficientData { length });
        }
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            let mut pick = rng.gen_range(0..total_pairs);
            let mut chosen = None;
            for (i, &pairs) in pair_counts.iter().enumerate() {
                if pick < pairs {
                    chosen = Some((i, pick));
                    break;
                }
                pick -= pairs;
            }
            let (ep_idx, offset) = chosen.expect("pair index within total");
            let ep = &self.episodes[ep_idx];
            out.push(Subsequence {
                observations: ep.observations[offset..offset + length + 1].to_vec(),
                actions: ep.actions[offset..offset + length].to_vec(),
                rewards_smoothed: ep.rewards_smoothed[offset..offset + length].to_vec(),
                continues: ep.continues[offset..offset + length].to_vec(),
            });
        }
        Ok(out)
    }
}

/// One line of the offline episode log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLogEntry {
    pub program_id: String,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub counts: Vec<u64>,
}

impl EpisodeLogEntry {
    pub fn from_record(program_id: impl Into<String>, record: &EpisodeRecord) -> Self {
        EpisodeLogEntry {
            program_id: program_id.into(),
            actions: record.actions.clone(),
            rewards: record.rewards.clone(),
            counts: record.counts.clone(),
        }
    }
}

pub fn write_log_entry(w: &mut impl Write, entry: &EpisodeLogEntry) -> Result<(), ReplayError> {
    serde_json::to_writer(&mut *w, entry)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_log(r: impl BufRead) -> Result<Vec<EpisodeLogEntry>, ReplayError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn episode(t: usize, rewards: Vec<f64>) -> ReplayEpisode {
        assert_eq!(rewards.len(), t);
        ReplayEpisode {
            program_id: "p".into(),
            observations: vec![vec![0.0_f32; 4]; t + 1],
            actions: vec![0; t],
            rewards_smoothed: smooth_rewards(&rewards, 0.6).unwrap(),
            rewards_raw: rewards,
            continues: (0..t).map(|i| i + 1 < t).collect(),
            counts: vec![7; t + 1],
        }
    }

    #[test]
    fn impulse_smoothing_matches_hand_recurrence() {
        let out = smooth_rewards(&[1.0, 0.0, 0.0], 0.6).unwrap();
        assert_eq!(out, vec![0.4, 0.24, 0.144]);
        assert_eq!(smooth_rewards(&[0.0; 5], 0.6).unwrap(), vec![0.0; 5]);
        assert!(matches!(
            smooth_rewards(&[1.0], 1.0),
            Err(ReplayError::InvalidAlpha(_))
        ));
        assert!(matches!(
            smooth_rewards(&[1.0], -0.1),
            Err(ReplayError::InvalidAlpha(_))
        ));
    }

    #[test]
    fn impulse_mass_tail_is_a_power_of_alpha() {
        let t = 45;
        for i in 0..t {
            let mut rewards = vec![0.0; t];
            rewards[i] = 1.0;
            let sum: f64 = smooth_rewards(&rewards, 0.6).unwrap().iter().sum();
            let tail = 0.6_f64.powi((t - i) as i32);
            assert!(
                ((sum - 1.0).abs() - tail).abs() < 1e-12,
                "impulse at {i}: |sum-1| = {} vs tail {tail}",
                (sum - 1.0).abs()
            );
        }
    }

    #[test]
    fn smoothing_is_linear() {
        let mut rng = Prng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(1..50);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let mixed: Vec<f64> = x.iter().zip(&y).map(|(&u, &v)| a * u + b * v).collect();
            let lhs = smooth_rewards(&mixed, 0.6).unwrap();
            let sx = smooth_rewards(&x, 0.6).unwrap();
            let sy = smooth_rewards(&y, 0.6).unwrap();
            for i in 0..n {
                assert!((lhs[i] - (a * sx[i] + b * sy[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sparse_rewards_densify_with_preserved_trend() {
        let mut rewards = vec![0.0; 45];
        for (i, v) in [(2, 0.3), (7, 0.2), (11, -0.05), (19, 0.25), (23, 0.1),
                       (30, 0.05), (37, 0.15), (41, 0.08)] {
            rewards[i] = v;
        }
        let smoothed = smooth_rewards(&rewards, 0.6).unwrap();
        let nz_raw = rewards.iter().filter(|&&r| r != 0.0).count();
        let nz_smooth = smoothed.iter().filter(|&&r| r.abs() > 1e-9).count();
        assert_eq!(nz_raw, 8);
        assert!(nz_smooth > nz_raw);
        let mut cum_raw = 0.0;
        let mut cum_smooth = 0.0;
        for i in 0..45 {
            cum_raw += rewards[i];
            cum_smooth += smoothed[i];
            assert_eq!(cum_raw > 0.0, cum_smooth > 0.0, "cumulative sign at {i}");
        }
    }

    #[test]
    fn eviction_drops_whole_oldest_episodes() {
        let mut buf = ReplayBuffer::new(100, 0.6).unwrap();
        for _ in 0..2 {
            buf.append(episode(45, vec![0.0; 45])).unwrap();
        }
        assert_eq!(buf.total_steps(), 90);
        buf.append(episode(45, vec![0.0; 45])).unwrap();
        assert_eq!(buf.total_steps(), 90);
        assert_eq!(buf.num_episodes(), 2);
    }

    #[test]
    fn append_rejects_mismatched_smoothing() {
        let mut buf = ReplayBuffer::new(1000, 0.6).unwrap();
        let mut ep = episode(3, vec![1.0, 0.0, 0.0]);
        ep.rewards_smoothed = vec![1.0, 0.0, 0.0];
        assert!(matches!(buf.append(ep), Err(ReplayError::BadEpisode(_))));
    }

    #[test]
    fn full_length_sample_is_the_episode_itself() {
        let mut buf = ReplayBuffer::new(1000, 0.6).unwrap();
        buf.append(episode(45, vec![0.5; 45])).unwrap();
        let mut rng = Prng::seed_from_u64(0);
        for sub in buf.sample(8, 45, &mut rng).unwrap() {
            assert_eq!(sub.len(), 45);
            assert_eq!(sub.observations.len(), 46);
            assert!(!sub.continues[44]);
            assert!(sub.continues[..44].iter().all(|&c| c));
        }
    }

    #[test]
    fn offsets_are_uniform_within_chi_squared_tolerance() {
        let mut buf = ReplayBuffer::new(1000, 0.6).unwrap();
        let mut ep = episode(45, vec![0.0; 45]);
        for (i, o) in ep.observations.iter_mut().enumerate() {
            o[0] = i as f32;
        }
        buf.append(ep).unwrap();
        let mut rng = Prng::seed_from_u64(3);
        let mut bins = [0u32; 36];
        for _ in 0..10_000 {
            let sub = &buf.sample(1, 10, &mut rng).unwrap()[0];
            let offset = sub.observations[0][0] as usize;
            assert!(offset <= 35);
            bins[offset] += 1;
        }
        let expected = 10_000.0 / 36.0;
        let chi2: f64 = bins
            .iter()
            .map(|&b| (b as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9th percentile of chi-squared with 35 dof is 66.6
        assert!(chi2 < 66.6, "chi2 = {chi2}");
    }

    #[test]
    fn sampling_is_reproducible_and_skips_short_episodes() {
        let mut buf = ReplayBuffer::new(1000, 0.6).unwrap();
        buf.append(episode(5, vec![0.0; 5])).unwrap();
        buf.append(episode(20, vec![0.0; 20])).unwrap();
        let a = buf
            .sample(16, 10, &mut Prng::seed_from_u64(9))
            .unwrap()
            .iter()
            .map(|s| s.observations[0][0])
            .collect::<Vec<_>>();
        let b = buf
            .sample(16, 10, &mut Prng::seed_from_u64(9))
            .unwrap()
            .iter()
            .map(|s| s.observations[0][0])
            .collect::<Vec<_>>();
        assert_eq!(a, b);
        assert!(matches!(
            buf.sample(1, 21, &mut Prng::seed_from_u64(0)),
            Err(ReplayError::InsufficientData { length: 21 })
        ));
        let empty = ReplayBuffer::new(1000, 0.6).unwrap();
        assert!(empty.sample(1, 1, &mut Prng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn log_round_trips() {
        let entry = EpisodeLogEntry {
            program_id: "prog-7".into(),
            actions: vec![3, 1, 4],
            rewards: vec![0.25, 0.0, -0.5],
            counts: vec![40, 35, 35, 45],
        };
        let mut bytes = Vec::new();
        write_log_entry(&mut bytes, &entry).unwrap();
        write_log_entry(&mut bytes, &entry).unwrap();
        let back = read_log(&bytes[..]).unwrap();
        assert_eq!(back, vec![entry.clone(), entry]);
    }
}
