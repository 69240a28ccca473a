//! Evaluation harness: corpus handling with content hashes and split tags,
//! the geometric-mean size-reduction metric, report generation, and the
//! brute-force enumeration oracle used to calibrate everything else.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{AgentError, SearchOutcome};
use crate::env::{CompilerEnv, EnvError, Program};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("agent: {0}")]
    Agent(#[from] AgentError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("no ratios to aggregate")]
    Empty,
    #[error("non-positive ratio {0}")]
    NonPositiveRatio(f64),
    #[error("enumeration budget exceeded: {candidates} sequences > cap {cap}")]
    BudgetExceeded { candidates: usize, cap: usize },
}

/// Geometric mean of per-program reduction ratios; above one means smaller
/// code than the baseline pipeline on average.
pub fn geomean(ratios: &[f64]) -> Result<f64, EvalError> {
    if ratios.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sum = 0.0;
    for &r in ratios {
        if r <= 0.0 || !r.is_finite() {
            return Err(EvalError::NonPositiveRatio(r));
        }
        sum += r.ln();
    }
    Ok((sum / ratios.len() as f64).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// The split convention: the first 50 programs (in the corpus's fixed
/// order) are the test set and the next 50 the validation set, with the
/// remainder for training; corpora under 100 programs are test-only.
pub fn split_assignment(count: usize) -> Vec<Split> {
    if count < 100 {
        return vec![Split::Test; count];
    }
    (0..count)
        .map(|i| {
            if i < 50 {
                Split::Test
            } else if i < 100 {
                Split::Validation
            } else {
                Split::Train
            }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusFile {
    pub path: PathBuf,
    pub sha256: String,
    pub split: Split,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub files: Vec<CorpusFile>,
}

impl Corpus {
    /// Loads every `.ll` file under `dir` (non-recursive), ordered
    /// lexicographically by file name, hashed, and split-tagged.
    pub fn from_dir(name: impl Into<String>, dir: &Path) -> Result<Self, EvalError> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map_or(false, |x| x == "ll"))
            .collect();
        paths.sort();
        let splits = split_assignment(paths.len());
        let mut files = Vec::with_capacity(paths.len());
        for (path, split) in paths.into_iter().zip(splits) {
            let bytes = fs::read(&path)?;
            files.push(CorpusFile {
                path,
                sha256: hex::encode(Sha256::digest(&bytes)),
                split,
            });
        }
        Ok(Corpus {
            name: name.into(),
            files,
        })
    }

    pub fn subset(&self, split: Split) -> Vec<&CorpusFile> {
        self.files.iter().filter(|f| f.split == split).collect()
    }

    pub fn manifest_json(&self) -> serde_json::Value {
        serde_json::json!({
            "name": self.name,
            "files": self.files,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalRow {
    pub program_id: String,
    pub initial_count: u64,
    pub oz_count: u64,
    pub final_count: u64,
    pub ratio: f64,
    pub wall_time_s: f64,
    pub sequence: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub geomean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub n: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub failures: Vec<(String, String)>,
}

impl EvalReport {
    pub fn summary(&self) -> EvalSummary {
        let ratios: Vec<f64> = self.rows.iter().map(|r| r.ratio).collect();
        let geo = geomean(&ratios).ok();
        let min = ratios.iter().cloned().fold(None, |m: Option<f64>, r| {
            Some(m.map_or(r, |m| m.min(r)))
        });
        let max = ratios.iter().cloned().fold(None, |m: Option<f64>, r| {
            Some(m.map_or(r, |m| m.max(r)))
        });
        EvalSummary {
            geomean: geo,
            min,
            max,
            n: self.rows.len(),
            failures: self.failures.len(),
        }
    }

    pub const CSV_HEADER: &'static str =
        "program_id,initial_count,oz_count,final_count,ratio,wall_time_s,sequence";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.3},{}\n",
                r.program_id,
                r.initial_count,
                r.oz_count,
                r.final_count,
                r.ratio,
                r.wall_time_s,
                r.sequence.join(" ")
            ));
        }
        out
    }
}

/// Whether report rows carry measured wall time or a fixed zero. Golden
/// fixtures need the latter: everything else in a report is deterministic
/// under a fixed seed, wall clock is not.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Timing {
    Measured,
    Zeroed,
}

/// One optimization attempt per program; failures (including a zero final
/// or baseline count, where the ratio stops being meaningful) are recorded
/// and excluded from the summary.
pub fn evaluate<F>(
    env: &mut CompilerEnv,
    programs: &[(String, Program)],
    timing: Timing,
    mut method: F,
) -> EvalReport
where
    F: FnMut(&mut CompilerEnv, &Program) -> Result<SearchOutcome, AgentError>,
{
    let names: Vec<String> = env.action_space().names().to_vec();
    let mut report = EvalReport::default();
    for (id, program) in programs {
        let started = Instant::now();
        match method(env, program) {
            Ok(out) => {
                if out.final_count == 0 || out.baseline_count == 0 {
                    report.failures.push((
                        id.clone(),
                        format!(
                            "degenerate counts: final {} baseline {}",
                            out.final_count, out.baseline_count
                        ),
                    ));
                    continue;
                }
                report.rows.push(EvalRow {
                    program_id: id.clone(),
                    initial_count: out.initial_count,
                    oz_count: out.baseline_count,
                    final_count: out.final_count,
                    ratio: out.baseline_count as f64 / out.final_count as f64,
                    wall_time_s: match timing {
                        Timing::Measured => started.elapsed().as_secs_f64(),
                        Timing::Zeroed => 0.0,
                    },
                    sequence: out.sequence.iter().map(|&a| names[a].clone()).collect(),
                });
            }
            Err(e) => report.failures.push((id.clone(), e.to_string())),
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub sequence: Vec<usize>,
    pub value: f64,
    pub final_count: u64,
    pub candidates: usize,
}

pub const ORACLE_DEFAULT_CAP: usize = 1_000_000;

/// Exhaustively enumerates every pass sequence of length 0..=`max_len`,
/// scores each by its cumulative normalized reward, and returns the
/// best; ties break toward the lexicographically smallest sequence. The
/// candidate count is checked against `cap` before any work happens.
pub fn brute_force_oracle(
    env: &mut CompilerEnv,
    program: &Program,
    max_len: usize,
    cap: usize,
) -> Result<OracleResult, EvalError> {
    let a = env.action_space().size();
    let mut candidates = 1usize;
    let mut pow = 1usize;
    for _ in 0..max_len {
        pow = pow
            .checked_mul(a)
            .ok_or(EvalError::BudgetExceeded { candidates: usize::MAX, cap })?;
        candidates = candidates
            .checked_add(pow)
            .ok_or(EvalError::BudgetExceeded { candidates: usize::MAX, cap })?;
    }
    if candidates > cap {
        return Err(EvalError::BudgetExceeded { candidates, cap });
    }

    env.reset(program)?;
    let denom = env.reward_denominator();
    let c0 = env.initial_count();
    let mut best_value = 0.0f64;
    let mut best_seq: Vec<usize> = Vec::new();
    let mut best_count = c0;
    let mut seq = Vec::with_capacity(max_len);
    for len in 1..=max_len {
        seq.clear();
        seq.resize(len, 0);
        loop {
            env.reset(program)?;
            let mut count = c0;
            for &action in &seq {
                count = env.step(action)?.info.instruction_count;
            }
            let value = (c0 as f64 - count as f64) / denom;
            if value > best_value || (value == best_value && seq < best_seq) {
                best_value = value;
                best_seq = seq.clone();
                best_count = count;
            }
            // odometer increment, most-significant digit first
            let mut pos = len;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                seq[pos] += 1;
                if seq[pos] < a {
                    break;
                }
                seq[pos] = 0;
            }
            if seq.iter().all(|&x| x == 0) {
                break;
            }
        }
    }
    Ok(OracleResult {
        sequence: best_seq,
        value: best_value,
        final_count: best_count,
        candidates,
    })
}
