//! Shared fixtures for the criterion benchmarks.

use rand::SeedableRng;

use pass_pilot_core::env::{
    ActionSpace, CompilerEnv, EnvConfig, Program, SyntheticEffectTable,
};
use pass_pilot_core::replay::{ReplayBuffer, Subsequence, DEFAULT_SMOOTHING};
use pass_pilot_core::util::{derive_seed, Prng};

pub const ACTIONS: usize = 8;

pub fn synthetic_env(seed: u64) -> (CompilerEnv, Vec<Program>) {
    let mut rng = Prng::seed_from_u64(derive_seed(seed, "bench-table"));
    let table = SyntheticEffectTable::random(ACTIONS, 10, &mut rng);
    let space = ActionSpace::new((0..ACTIONS).map(|i| format!("-pass{i}")).collect()).unwrap();
    let env = CompilerEnv::new(EnvConfig::synthetic(table.clone(), space)).unwrap();
    let programs = (0..4)
        .map(|i| {
            let mut rng = Prng::seed_from_u64(derive_seed(seed, &format!("bench-program-{i}")));
            let counters: Vec<u64> = (0..10)
                .map(|_| rand::Rng::gen_range(&mut rng, 15..=60))
                .collect();
            let baseline = table.pipeline_baseline(&counters);
            Program::synthetic(counters, baseline)
        })
        .collect();
    (env, programs)
}

/// Fills a replay buffer with random-policy episodes and draws one batch,
/// so train-step benchmarks start from realistic data.
pub fn sampled_batch(
    env: &mut CompilerEnv,
    programs: &[Program],
    batch: usize,
    length: usize,
    seed: u64,
) -> Vec<Subsequence> {
    let mut replay = ReplayBuffer::new(4096, DEFAULT_SMOOTHING).unwrap();
    let mut rng = Prng::seed_from_u64(derive_seed(seed, "bench-episodes"));
    let action_dim = env.action_space().size();
    for (i, program) in programs.iter().enumerate() {
        for round in 0..4 {
            let obs = env.reset(program).unwrap();
            let mut record = pass_pilot_core::env::EpisodeRecord {
                observations: vec![obs],
                actions: Vec::new(),
                rewards: Vec::new(),
                counts: vec![env.current_count()],
                pass_failed: Vec::new(),
                initial_count: env.initial_count(),
                baseline_count: env.baseline_count(),
                reached_limit: false,
            };
            loop {
                let a = rand::Rng::gen_range(&mut rng, 0..action_dim);
                let step = env.step(a).unwrap();
                record.observations.push(step.observation.clone());
                record.actions.push(a);
                record.rewards.push(step.reward);
                record.counts.push(step.info.instruction_count);
                record.pass_failed.push(step.info.pass_failed);
                record.reached_limit = step.done;
                if step.done {
                    break;
                }
            }
            replay.append_record(format!("bench-{i}-{round}"), &record).unwrap();
        }
    }
    replay.sample(batch, length, &mut rng).unwrap()
}

/// A module with a few hundred instructions spread over many blocks, the
/// size range the extractor sees in practice.
pub fn medium_module_text() -> String {
    let mut text = String::from("define i32 @bench(i32 %n, ptr %p) {\nentry:\n");
    text.push_str("  %acc0 = add i32 %n, 1\n  br label %b0\n");
    for i in 0..40 {
        text.push_str(&format!("b{i}:\n"));
        text.push_str(&format!("  %l{i} = load i32, ptr %p\n"));
        text.push_str(&format!("  %m{i} = mul i32 %l{i}, 3\n"));
        text.push_str(&format!("  %c{i} = icmp slt i32 %m{i}, %n\n"));
        text.push_str(&format!("  store i32 %m{i}, ptr %p\n"));
        let next = i + 1;
        text.push_str(&format!(
            "  br i1 %c{i}, label %b{next}, label %exit\n"
        ));
    }
    text.push_str("b40:\n  br label %exit\n");
    text.push_str("exit:\n  %r = phi i32 ");
    for i in 0..=40 {
        if i > 0 {
            text.push_str(", ");
        }
        if i == 40 {
            text.push_str("[ 0, %b40 ]");
        } else {
            text.push_str(&format!("[ %m{i}, %b{i} ]"));
        }
    }
    text.push_str("\n  ret i32 %r\n}\n");
    text
}
