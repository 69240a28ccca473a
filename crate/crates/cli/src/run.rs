//! Command implementations behind the thin clap layer in `main`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{anyhow, Context, Result};
use rand::SeedableRng;

use pass_pilot_core::agent::{
    coreset_select, guided_search, policy_rollout, random_search, train_loop, ActorCritic,
    AgentError, CoreSet, MetricsRow, RolloutMode, Scorer, SearchBudget, SearchOutcome,
    TrainLoopConfig,
};
use pass_pilot_core::env::{CompilerEnv, Program};
use pass_pilot_core::eval::{evaluate, EvalReport, Split, Timing};
use pass_pilot_core::ir::{extract_autophase, parse_ir, FEATURE_NAMES};
use pass_pilot_core::model::WorldModel;
use pass_pilot_core::replay::{ReplayBuffer, DEFAULT_SMOOTHING};
use pass_pilot_core::util::{derive_seed, sha256_hex, Prng};

use crate::bundle::{self, Bundle};
use crate::config::{BackendKind, RunConfig};

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

fn parse_failure(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn mismatch_failure(error: anyhow::Error) -> Failure {
    Failure { code: 3, error }
}

fn check_space_hash(bundle: &Bundle, env: &CompilerEnv) -> Result<(), Failure> {
    let current = env.action_space().hash();
    if bundle.action_space_hash != current {
        return Err(mismatch_failure(anyhow!(
            "checkpoint was trained against action-space hash {} but the config resolves to {}",
            bundle.action_space_hash,
            current
        )));
    }
    Ok(())
}

pub fn features(ir_path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(ir_path)
        .with_context(|| format!("reading {}", ir_path.display()))
        .map_err(parse_failure)?;
    let module = parse_ir(&text)
        .context("parsing IR")
        .map_err(parse_failure)?;
    let feats = extract_autophase(&module);
    println!("feature,value");
    for (name, value) in FEATURE_NAMES.iter().zip(feats.values.iter()) {
        println!("{name},{value}");
    }
    Ok(())
}

pub fn train(config_path: &Path, resume: Option<&Path>, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(config_path).map_err(parse_failure)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (mut env, corpus) = cfg.build_env()?;
    let obs_dim = env.observation_dim();
    let action_dim = env.action_space().size();

    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let effective = cfg.effective(obs_dim, action_dim);
    fs::write(
        cfg.output_dir.join("effective-config.json"),
        serde_json::to_string_pretty(&effective).map_err(anyhow::Error::from)? + "\n",
    )
    .map_err(anyhow::Error::from)?;
    fs::write(
        cfg.output_dir.join("corpus-manifest.json"),
        corpus_manifest(&cfg, &corpus)? + "\n",
    )
    .map_err(anyhow::Error::from)?;

    let (mut wm, mut ac, start_step) = match resume {
        Some(path) => {
            let b = bundle::load(path).map_err(parse_failure)?;
            check_space_hash(&b, &env)?;
            (b.wm, b.ac, b.env_steps)
        }
        None => {
            let wm = WorldModel::<f32>::init(cfg.model_config(obs_dim, action_dim), cfg.seed)
                .map_err(anyhow::Error::from)?;
            let ac = ActorCritic::<f32>::init(
                cfg.agent_config(),
                wm.cfg.feature_dim(),
                action_dim,
                cfg.seed,
            )
            .map_err(anyhow::Error::from)?;
            (wm, ac, 0)
        }
    };

    // training uses the train split when the corpus is big enough to have
    // one, otherwise every program
    let train_corpus: Vec<(String, Program)> = {
        let tagged: Vec<_> = corpus
            .iter()
            .filter(|(_, _, s)| *s == Split::Train)
            .map(|(id, p, _)| (id.clone(), p.clone()))
            .collect();
        if tagged.is_empty() {
            corpus.iter().map(|(id, p, _)| (id.clone(), p.clone())).collect()
        } else {
            tagged
        }
    };

    let coreset = match &cfg.train.coreset_file {
        Some(file) => {
            let text = fs::read_to_string(file)
                .with_context(|| format!("reading core set {}", file.display()))
                .map_err(parse_failure)?;
            Some(
                CoreSet::parse(&text, env.action_space())
                    .map_err(|e| parse_failure(anyhow::Error::from(e)))?,
            )
        }
        None => None,
    };

    let mut replay =
        ReplayBuffer::new(cfg.train.replay_capacity, DEFAULT_SMOOTHING).map_err(anyhow::Error::from)?;
    let mut rng = Prng::seed_from_u64(derive_seed(cfg.seed, "train-loop"));
    let loop_base = cfg.loop_config();
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut step = start_step;
    let space = env.action_space().clone();
    while step < cfg.train.total_env_steps {
        let target = if cfg.train.checkpoint_every > 0 {
            (step + cfg.train.checkpoint_every).min(cfg.train.total_env_steps)
        } else {
            cfg.train.total_env_steps
        };
        let chunk_cfg = TrainLoopConfig {
            start_step: step,
            total_env_steps: target,
            ..loop_base.clone()
        };
        let (chunk_rows, stats) = train_loop(
            &mut env,
            &train_corpus,
            &mut wm,
            &mut ac,
            &mut replay,
            &chunk_cfg,
            coreset.as_ref(),
            &mut rng,
        )
        .map_err(|e| Failure {
            code: 1,
            error: anyhow::Error::from(e).context("training aborted"),
        })?;
        rows.extend(chunk_rows);
        step = stats.env_steps;
        if cfg.train.checkpoint_every > 0 && step < cfg.train.total_env_steps {
            bundle::save(
                &cfg.output_dir.join(format!("step-{step}.ckpt")),
                &wm,
                &ac,
                &space,
                step,
            )?;
        }
    }

    let mut csv = String::from(MetricsRow::csv_header());
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    fs::write(cfg.output_dir.join("metrics.csv"), csv).map_err(anyhow::Error::from)?;
    bundle::save(&cfg.output_dir.join("final.ckpt"), &wm, &ac, &space, step)?;
    println!(
        "trained to {} env steps ({} updates), outputs in {}",
        step,
        rows.last().map_or(0, |r| r.updates),
        cfg.output_dir.display()
    );
    Ok(())
}

fn corpus_manifest(cfg: &RunConfig, corpus: &[(String, Program, Split)]) -> Result<String> {
    let files: Vec<serde_json::Value> = match cfg.env.backend {
        BackendKind::Synthetic => corpus
            .iter()
            .map(|(id, program, split)| {
                Ok(serde_json::json!({
                    "path": format!("synthetic:{id}"),
                    "sha256": sha256_hex(serde_json::to_string(program)?.as_bytes()),
                    "split": split,
                }))
            })
            .collect::<Result<_>>()?,
        BackendKind::Real => {
            let dir = cfg.env.corpus_dir.as_ref().unwrap();
            let c = pass_pilot_core::eval::Corpus::from_dir("corpus", dir)?;
            c.files
                .iter()
                .map(|f| Ok(serde_json::to_value(f)?))
                .collect::<Result<_>>()?
        }
    };
    Ok(serde_json::to_string_pretty(&serde_json::json!({
        "files": files
    }))?)
}

enum Method {
    Rollout,
    Guided(f64),
    Coreset(CoreSet),
}

impl Method {
    fn parse(mode: &str, env: &CompilerEnv) -> Result<Self, Failure> {
        if mode == "rollout" {
            return Ok(Method::Rollout);
        }
        if let Some(rest) = mode.strip_prefix("guided:") {
            let seconds: f64 = rest
                .parse()
                .map_err(|_| parse_failure(anyhow!("bad guided budget {rest:?}")))?;
            if seconds <= 0.0 {
                return Err(parse_failure(anyhow!("guided budget must be positive")));
            }
            return Ok(Method::Guided(seconds));
        }
        if let Some(file) = mode.strip_prefix("coreset:") {
            let text = fs::read_to_string(file)
                .with_context(|| format!("reading core set {file}"))
                .map_err(parse_failure)?;
            let cs = CoreSet::parse(&text, env.action_space())
                .map_err(|e| parse_failure(anyhow::Error::from(e)))?;
            return Ok(Method::Coreset(cs));
        }
        Err(parse_failure(anyhow!(
            "unknown mode {mode:?}; expected rollout, guided:<seconds>, or coreset:<file>"
        )))
    }

    fn run(
        &self,
        env: &mut CompilerEnv,
        program: &Program,
        b: &Bundle,
        rng: &mut Prng,
    ) -> Result<SearchOutcome, AgentError> {
        match self {
            Method::Rollout => {
                let rec = policy_rollout(env, program, &b.wm, &b.ac, RolloutMode::Argmax, rng)?;
                Ok(SearchOutcome {
                    pass_applications: rec.actions.len(),
                    final_count: rec.final_count(),
                    initial_count: rec.initial_count,
                    baseline_count: rec.baseline_count,
                    sequence: rec.actions,
                })
            }
            Method::Guided(seconds) => guided_search(
                env,
                program,
                &b.wm,
                &b.ac,
                SearchBudget::Seconds(*seconds),
                rng,
            ),
            Method::Coreset(cs) => {
                let budget = SearchBudget::PassApplications(env.episode_limit());
                coreset_select(env, program, cs, &Scorer::Model(&b.wm), budget)
                    .map(|r| r.outcome)
            }
        }
    }
}

fn resolve_program(
    input: &str,
    corpus: &[(String, Program, Split)],
) -> Result<(String, Program), Failure> {
    if let Some(rest) = input.strip_prefix("synthetic:") {
        let idx: usize = rest
            .parse()
            .map_err(|_| parse_failure(anyhow!("bad synthetic index {rest:?}")))?;
        let (id, program, _) = corpus
            .get(idx)
            .ok_or_else(|| parse_failure(anyhow!("corpus has {} programs", corpus.len())))?;
        return Ok((id.clone(), program.clone()));
    }
    let text = fs::read_to_string(input)
        .with_context(|| format!("reading {input}"))
        .map_err(parse_failure)?;
    let id = Path::new(input)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| input.to_string());
    Ok((id, Program::ir(text)))
}

fn print_outcome(id: &str, env: &CompilerEnv, out: &SearchOutcome) {
    let names: Vec<&str> = out
        .sequence
        .iter()
        .map(|&a| env.action_space().flag(a))
        .collect();
    println!("program: {id}");
    println!("sequence: {}", names.join(" "));
    println!(
        "counts: initial {} baseline {} final {}",
        out.initial_count, out.baseline_count, out.final_count
    );
    println!("ratio: {:.6}", out.ratio());
}

pub fn optimize(
    checkpoint: &Path,
    config_path: &Path,
    input: &str,
    mode: &str,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let cfg = RunConfig::load(config_path).map_err(parse_failure)?;
    let (mut env, corpus) = cfg.build_env()?;
    let b = bundle::load(checkpoint).map_err(parse_failure)?;
    check_space_hash(&b, &env)?;
    let method = Method::parse(mode, &env)?;
    let (id, program) = resolve_program(input, &corpus)?;
    let mut rng = Prng::seed_from_u64(derive_seed(
        seed.unwrap_or(cfg.seed),
        &format!("optimize-{id}"),
    ));
    let out = method
        .run(&mut env, &program, &b, &mut rng)
        .map_err(anyhow::Error::from)?;
    print_outcome(&id, &env, &out);
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub config: PathBuf,
    pub mode: String,
    pub split: String,
    pub baseline: Option<String>,
    pub workers: usize,
    pub seed: Option<u64>,
    pub zero_timing: bool,
    pub out: Option<PathBuf>,
}

pub fn eval(args: EvalArgs) -> Result<(), Failure> {
    let cfg = RunConfig::load(&args.config).map_err(parse_failure)?;
    let (env, corpus) = cfg.build_env()?;
    let b = bundle::load(&args.checkpoint).map_err(parse_failure)?;
    check_space_hash(&b, &env)?;
    let method = Method::parse(&args.mode, &env)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let timing = if args.zero_timing {
        Timing::Zeroed
    } else {
        Timing::Measured
    };

    let wanted: Vec<(String, Program)> = corpus
        .iter()
        .filter(|(_, _, s)| match args.split.as_str() {
            "all" => true,
            "test" => *s == Split::Test,
            "validation" => *s == Split::Validation,
            "train" => *s == Split::Train,
            _ => true,
        })
        .map(|(id, p, _)| (id.clone(), p.clone()))
        .collect();
    if !matches!(args.split.as_str(), "all" | "test" | "validation" | "train") {
        return Err(parse_failure(anyhow!("unknown split {:?}", args.split)));
    }

    let report = parallel_evaluate(&env, &wanted, args.workers, timing, |env, id, program| {
        let mut rng = Prng::seed_from_u64(derive_seed(seed, &format!("eval-{id}")));
        method.run(env, program, &b, &mut rng)
    })?;

    let out_dir = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&out_dir).map_err(anyhow::Error::from)?;
    fs::write(out_dir.join("report.csv"), report.to_csv()).map_err(anyhow::Error::from)?;
    let summary = report.summary();
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)? + "\n",
    )
    .map_err(anyhow::Error::from)?;
    print_summary("trained", &summary);

    if let Some(spec) = &args.baseline {
        let trials = spec
            .strip_prefix("random-search:")
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| {
                parse_failure(anyhow!("bad baseline {spec:?}; expected random-search:<trials>"))
            })?;
        let budget = trials * env.episode_limit();
        let baseline_report =
            parallel_evaluate(&env, &wanted, args.workers, timing, |env, id, program| {
                let mut rng = Prng::seed_from_u64(derive_seed(seed, &format!("baseline-{id}")));
                random_search(env, program, SearchBudget::PassApplications(budget), &mut rng)
            })?;
        fs::write(out_dir.join("baseline-report.csv"), baseline_report.to_csv())
            .map_err(anyhow::Error::from)?;
        let baseline_summary = baseline_report.summary();
        print_summary(&format!("random-search:{trials}"), &baseline_summary);
        if let (Some(a), Some(r)) = (summary.geomean, baseline_summary.geomean) {
            println!("advantage: {:+.6}", a - r);
        }
    }
    Ok(())
}

fn print_summary(label: &str, s: &pass_pilot_core::eval::EvalSummary) {
    match s.geomean {
        Some(g) => println!(
            "{label}: geomean {:.6} (min {:.6}, max {:.6}) over {} programs, {} failures",
            g,
            s.min.unwrap_or(f64::NAN),
            s.max.unwrap_or(f64::NAN),
            s.n,
            s.failures
        ),
        None => println!("{label}: no successful programs ({} failures)", s.failures),
    }
}

/// Splits the corpus into contiguous chunks, one worker thread per chunk,
/// each with its own environment; rows come back in corpus order so worker
/// count never changes the report.
fn parallel_evaluate<F>(
    env: &CompilerEnv,
    programs: &[(String, Program)],
    workers: usize,
    timing: Timing,
    method: F,
) -> Result<EvalReport, Failure>
where
    F: Fn(&mut CompilerEnv, &str, &Program) -> Result<SearchOutcome, AgentError> + Sync,
{
    let workers = workers.max(1).min(programs.len().max(1));
    let run_chunk = |chunk: &[(String, Program)]| -> Result<EvalReport, String> {
        let mut local = CompilerEnv::new(env.config().clone()).map_err(|e| e.to_string())?;
        let mut idx = 0;
        Ok(evaluate(&mut local, chunk, timing, |env, program| {
            let id = chunk[idx].0.as_str();
            idx += 1;
            method(env, id, program)
        }))
    };
    if workers <= 1 {
        return run_chunk(programs).map_err(|e| Failure::from(anyhow!("{e}")));
    }

    let chunk_size = programs.len().div_ceil(workers);
    let chunks: Vec<&[(String, Program)]> = programs.chunks(chunk_size).collect();
    let results: Vec<Mutex<Option<Result<EvalReport, String>>>> =
        chunks.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for (chunk, slot) in chunks.iter().zip(&results) {
            let run_chunk = &run_chunk;
            scope.spawn(move || {
                *slot.lock().unwrap() = Some(run_chunk(chunk));
            });
        }
    });
    let mut merged = EvalReport::default();
    for slot in results {
        match slot.into_inner().unwrap().expect("worker finished") {
            Ok(mut part) => {
                merged.rows.append(&mut part.rows);
                merged.failures.append(&mut part.failures);
            }
            Err(e) => return Err(Failure::from(anyhow!("worker failed: {e}"))),
        }
    }
    Ok(merged)
}

fn parse_budget(text: &str) -> Result<SearchBudget, Failure> {
    if let Some(n) = text.strip_suffix('p') {
        let n: usize = n
            .parse()
            .map_err(|_| parse_failure(anyhow!("bad pass budget {text:?}")))?;
        return Ok(SearchBudget::PassApplications(n));
    }
    if let Some(s) = text.strip_suffix('s') {
        let s: f64 = s
            .parse()
            .map_err(|_| parse_failure(anyhow!("bad time budget {text:?}")))?;
        return Ok(SearchBudget::Seconds(s));
    }
    Err(parse_failure(anyhow!(
        "budget {text:?} needs a unit: <n>p (pass applications) or <n>s (seconds)"
    )))
}

pub fn search(
    config_path: &Path,
    input: &str,
    budget: &str,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let cfg = RunConfig::load(config_path).map_err(parse_failure)?;
    let (mut env, corpus) = cfg.build_env()?;
    let budget = parse_budget(budget)?;
    let (id, program) = resolve_program(input, &corpus)?;
    let mut rng = Prng::seed_from_u64(derive_seed(
        seed.unwrap_or(cfg.seed),
        &format!("search-{id}"),
    ));
    let out = random_search(&mut env, &program, budget, &mut rng).map_err(anyhow::Error::from)?;
    print_outcome(&id, &env, &out);
    Ok(())
}

pub fn oracle(
    config_path: &Path,
    input: &str,
    max_len: usize,
    cap: usize,
) -> Result<(), Failure> {
    let cfg = RunConfig::load(config_path).map_err(parse_failure)?;
    if cfg.env.backend == BackendKind::Real {
        return Err(Failure::from(anyhow!(
            "the oracle enumerates exhaustively; only the synthetic backend is supported"
        )));
    }
    let (mut env, corpus) = cfg.build_env()?;
    let (id, program) = resolve_program(input, &corpus)?;
    let got = pass_pilot_core::eval::brute_force_oracle(&mut env, &program, max_len, cap)
        .map_err(anyhow::Error::from)?;
    let names: Vec<&str> = got
        .sequence
        .iter()
        .map(|&a| env.action_space().flag(a))
        .collect();
    println!("program: {id}");
    println!("sequence: {}", names.join(" "));
    println!("value: {:.6}", got.value);
    println!("final count: {}", got.final_count);
    println!("candidates: {}", got.candidates);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budgets_parse_with_units() {
        assert!(matches!(
            parse_budget("45p"),
            Ok(SearchBudget::PassApplications(45))
        ));
        match parse_budget("2.5s") {
            Ok(SearchBudget::Seconds(s)) => assert_eq!(s, 2.5),
            other => panic!("{:?}", other.map(|_| ()).map_err(|e| e.code)),
        }
        assert!(parse_budget("45").is_err());
        assert!(parse_budget("xp").is_err());
    }
}
