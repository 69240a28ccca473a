//! Regenerates the default core set (assets/coreset50.txt): epsilon-greedy
//! search over a seeded synthetic proxy corpus, one sequence per restart,
//! deduplicated. The real Coreset-NVP sequences are unpublished, so the
//! shipped file is a reproducible placeholder; rerun against your own
//! corpus to specialize it.
//!
//!     cargo run -p pass-pilot-cli --example make_coreset > assets/coreset50.txt

use rand::{Rng, SeedableRng};
use std::collections::BTreeSet;

use pass_pilot_core::env::{ActionSpace, CompilerEnv, EnvConfig, Program, SyntheticEffectTable};
use pass_pilot_core::util::{derive_seed, Prng};

const TARGET_SEQUENCES: usize = 50;
const MAX_LEN: usize = 13;
const EPSILON: f64 = 0.3;

fn main() {
    let space = ActionSpace::default_autophase();
    let n = space.size();
    let mut rng = Prng::seed_from_u64(derive_seed(2024, "coreset-proxy-table"));
    let table = SyntheticEffectTable::random(n, 20, &mut rng);
    let programs: Vec<Program> = (0..10)
        .map(|i| {
            let mut rng = Prng::seed_from_u64(derive_seed(2024, &format!("coreset-program-{i}")));
            let counters: Vec<u64> = (0..20).map(|_| rng.gen_range(15..=60)).collect();
            let baseline = table.pipeline_baseline(&counters);
            Program::synthetic(counters, baseline)
        })
        .collect();
    let mut env = CompilerEnv::new(EnvConfig::synthetic(table, space.clone())).unwrap();

    // mean instruction count across the proxy corpus after `seq`
    let mut corpus_cost = |env: &mut CompilerEnv, seq: &[usize]| -> f64 {
        let mut total = 0u64;
        for p in &programs {
            env.reset(p).unwrap();
            let mut count = env.current_count();
            for &a in seq {
                count = env.step(a).unwrap().info.instruction_count;
            }
            total += count;
        }
        total as f64 / programs.len() as f64
    };

    let mut sequences: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut restart = 0u64;
    while sequences.len() < TARGET_SEQUENCES {
        let mut rng = Prng::seed_from_u64(derive_seed(2024, &format!("coreset-run-{restart}")));
        restart += 1;
        let mut seq: Vec<usize> = Vec::new();
        let mut cost = corpus_cost(&mut env, &seq);
        let mut stale = 0;
        while seq.len() < MAX_LEN && stale < 3 {
            let action = if rng.gen::<f64>() < EPSILON {
                rng.gen_range(0..n)
            } else {
                (0..n)
                    .min_by(|&a, &b| {
                        seq.push(a);
                        let ca = corpus_cost(&mut env, &seq);
                        *seq.last_mut().unwrap() = b;
                        let cb = corpus_cost(&mut env, &seq);
                        seq.pop();
                        ca.partial_cmp(&cb).unwrap()
                    })
                    .unwrap()
            };
            seq.push(action);
            let next = corpus_cost(&mut env, &seq);
            if next < cost {
                stale = 0;
            } else {
                stale += 1;
            }
            cost = next;
        }
        if seq.len() >= 2 {
            sequences.insert(seq);
        }
    }

    let total: usize = sequences.iter().map(Vec::len).sum();
    eprintln!(
        "{} sequences, {} passes total, {} restarts",
        sequences.len(),
        total,
        restart
    );
    for seq in &sequences {
        let names: Vec<&str> = seq.iter().map(|&a| space.flag(a)).collect();
        println!("{}", names.join(","));
    }
}
