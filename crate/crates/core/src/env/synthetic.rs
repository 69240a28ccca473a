//! Synthetic optimizer backend: a deterministic counter machine standing in
//! for the compiler. Guarded delta rules imitate how one pass can enable or
//! disable the effect of a later one, and the cost is the counter sum, so
//! brute-force oracles over short episodes stay cheap.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ir::FEATURE_COUNT;
use crate::util::Prng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guard {
    pub counter: usize,
    pub at_least: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRule {
    /// When absent the rule always fires.
    pub guard: Option<Guard>,
    /// Added per counter, each result floored at zero.
    pub delta: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAction {
    pub rules: Vec<SyntheticRule>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEffectTable {
    pub k: usize,
    pub initial: Vec<u64>,
    pub actions: Vec<SyntheticAction>,
    pub baseline_count: u64,
}

impl SyntheticEffectTable {
    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 || self.k > 50 {
            return Err(format!("state dimension {} out of range 1..=50", self.k));
        }
        if self.initial.len() != self.k {
            return Err("initial state length != k".into());
        }
        if self.actions.is_empty() {
            return Err("no actions".into());
        }
        for (ai, action) in self.actions.iter().enumerate() {
            for (ri, rule) in action.rules.iter().enumerate() {
                if rule.delta.len() != self.k {
                    return Err(format!("action {ai} rule {ri}: delta length != k"));
                }
                if let Some(g) = &rule.guard {
                    if g.counter >= self.k {
                        return Err(format!("action {ai} rule {ri}: guard counter out of range"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Rules run in order; each guard is evaluated against the state as
    /// already modified by earlier rules of the same action.
    pub fn apply(&self, state: &[u64], action: usize) -> Vec<u64> {
        let mut next = state.to_vec();
        for rule in &self.actions[action].rules {
            let fires = match &rule.guard {
                Some(g) => next[g.counter] >= g.at_least,
                None => true,
            };
            if fires {
                for (c, &d) in next.iter_mut().zip(&rule.delta) {
                    let v = *c as i64 + d;
                    *c = v.max(0) as u64;
                }
            }
        }
        next
    }

    pub fn cost(state: &[u64]) -> u64 {
        state.iter().sum()
    }

    /// Randomly generated table for synthetic corpora. Guarded deltas make
    /// the actions order-dependent, negative bias keeps real reductions
    /// reachable, and the baseline is the best cost seen while running the
    /// whole pipeline round-robin twice, so a searched sequence can match
    /// or beat it but rarely for free.
    pub fn random(num_actions: usize, k: usize, rng: &mut Prng) -> Self {
        assert!(num_actions >= 1 && (1..=50).contains(&k));
        let initial: Vec<u64> = (0..k).map(|_| rng.gen_range(20..=60)).collect();
        let actions = (0..num_actions)
            .map(|_| {
                let rules = (0..rng.gen_range(1..=2))
                    .map(|_| {
                        let guard = if rng.gen_bool(0.5) {
                            Some(Guard {
                                counter: rng.gen_range(0..k),
                                at_least: rng.gen_range(5..=40),
                            })
                        } else {
                            None
                        };
                        let delta = (0..k)
                            .map(|_| {
                                if rng.gen_bool(0.5) {
                                    0
                                } else {
                                    rng.gen_range(-4i64..=3)
                                }
                            })
                            .collect();
                        SyntheticRule { guard, delta }
                    })
                    .collect();
                SyntheticAction { rules }
            })
            .collect();
        let mut table = SyntheticEffectTable {
            k,
            initial: initial.clone(),
            actions,
            baseline_count: 0,
        };
        table.baseline_count = table.pipeline_baseline(&initial);
        table
    }

    /// The stand-in for a fixed size-reduction pipeline: apply every action
    /// round-robin twice and keep the best cost seen. Used as the
    /// normalization baseline for programs starting from `counters`.
    pub fn pipeline_baseline(&self, counters: &[u64]) -> u64 {
        let mut state = counters.to_vec();
        let mut best = Self::cost(&state);
        for _ in 0..2 {
            for a in 0..self.actions.len() {
                state = self.apply(&state, a);
                best = best.min(Self::cost(&state));
            }
        }
        best
    }

    /// Places the counters in the leading feature slots and the cost in the
    /// TotalInsts slot, so downstream consumers see the synthetic state
    /// through the same 56-wide layout as real programs.
    pub fn feature_vector(state: &[u64]) -> [u64; FEATURE_COUNT] {
        let mut f = [0u64; FEATURE_COUNT];
        for (i, &c) in state.iter().enumerate() {
            f[i] = c;
        }
        f[51] = Self::cost(state);
        f
    }
}
