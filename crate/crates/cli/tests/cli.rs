//! End-to-end checks of the binary: exit codes, determinism of training
//! and evaluation artifacts, and the text interfaces.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pass-pilot"))
}

fn write_config(dir: &Path, name: &str, seed: u64, out_name: &str, total_steps: usize) {
    let out_dir = dir.join(out_name);
    let text = serde_json::json!({
        "seed": seed,
        "output_dir": out_dir,
        "preset": "desk",
        "env": {
            "backend": "synthetic",
            "episode_limit": 8,
            "synthetic": {"actions": 4, "counters": 3, "programs": 6, "corpus_seed": 11}
        },
        "train": {"total_env_steps": total_steps, "replay_capacity": 4096},
        "overrides": {
            "h_dim": 32, "groups": 4, "classes": 4,
            "wm_mlp_width": 32, "wm_mlp_hidden_layers": 1,
            "agent_mlp_width": 32, "agent_mlp_hidden_layers": 1,
            "horizon": 5, "exploration_steps": 48, "train_every": 8,
            "batch_size": 4, "batch_length": 8, "imagination_starts": 4
        }
    });
    fs::write(dir.join(name), serde_json::to_string_pretty(&text).unwrap()).unwrap();
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_metrics_and_checkpoint_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "a.json", 7, "out-a", 120);
    write_config(tmp.path(), "b.json", 7, "out-b", 120);
    let cfg_a = tmp.path().join("a.json");
    let cfg_b = tmp.path().join("b.json");
    assert_ok(&run(&["train", "--config", cfg_a.to_str().unwrap()]));
    assert_ok(&run(&["train", "--config", cfg_b.to_str().unwrap()]));

    let metrics_a = fs::read(tmp.path().join("out-a/metrics.csv")).unwrap();
    let metrics_b = fs::read(tmp.path().join("out-b/metrics.csv")).unwrap();
    assert!(!metrics_a.is_empty());
    assert_eq!(metrics_a, metrics_b);

    let ckpt_a = fs::read(tmp.path().join("out-a/final.ckpt")).unwrap();
    let ckpt_b = fs::read(tmp.path().join("out-b/final.ckpt")).unwrap();
    assert_eq!(ckpt_a, ckpt_b);

    // a different seed must leave a different trace
    write_config(tmp.path(), "c.json", 8, "out-c", 120);
    let cfg_c = tmp.path().join("c.json");
    assert_ok(&run(&["train", "--config", cfg_c.to_str().unwrap()]));
    let metrics_c = fs::read(tmp.path().join("out-c/metrics.csv")).unwrap();
    assert_ne!(metrics_a, metrics_c);

    // resuming continues the step count instead of restarting it
    write_config(tmp.path(), "d.json", 7, "out-d", 180);
    let cfg_d = tmp.path().join("d.json");
    let ckpt_a = tmp.path().join("out-a/final.ckpt");
    assert_ok(&run(&[
        "train",
        "--config",
        cfg_d.to_str().unwrap(),
        "--resume",
        ckpt_a.to_str().unwrap(),
    ]));
    let resumed = fs::read_to_string(tmp.path().join("out-d/metrics.csv")).unwrap();
    let first_steps: usize = resumed
        .lines()
        .nth(1)
        .and_then(|l| l.split(',').next())
        .and_then(|s| s.parse().ok())
        .expect("at least one metrics row after resuming");
    assert!(first_steps > 120, "resumed run restarted at {first_steps}");
}

#[test]
fn eval_reports_are_worker_invariant_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "cfg.json", 3, "out", 0);
    let cfg = tmp.path().join("cfg.json");
    assert_ok(&run(&["train", "--config", cfg.to_str().unwrap()]));
    let ckpt = tmp.path().join("out/final.ckpt");

    let mut reports = Vec::new();
    for (workers, dir) in [("1", "eval-1"), ("3", "eval-3"), ("1", "eval-1b")] {
        let out_dir = tmp.path().join(dir);
        assert_ok(&run(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--workers",
            workers,
            "--zero-timing",
            "--out",
            out_dir.to_str().unwrap(),
        ]));
        reports.push(fs::read(out_dir.join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);

    let text = String::from_utf8(reports[0].clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("program_id,initial_count,oz_count,final_count,ratio,wall_time_s,sequence")
    );
    assert_eq!(lines.count(), 6);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("eval-1/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["n"], 6);
    assert_eq!(summary["failures"], 0);
}

#[test]
fn eval_report_matches_the_committed_golden_file() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let tmp = tempfile::tempdir().unwrap();
    let cfg = golden.join("config.json");
    let train = bin()
        .current_dir(tmp.path())
        .args(["train", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_ok(&train);
    assert_ok(
        &bin()
            .current_dir(tmp.path())
            .args([
                "eval",
                "--checkpoint",
                "out/final.ckpt",
                "--config",
                cfg.to_str().unwrap(),
                "--workers",
                "2",
                "--zero-timing",
                "--out",
                "eval",
            ])
            .output()
            .unwrap(),
    );
    let got = fs::read(tmp.path().join("eval/report.csv")).unwrap();
    let want = fs::read(golden.join("report.csv")).unwrap();
    assert_eq!(
        String::from_utf8_lossy(&got),
        String::from_utf8_lossy(&want)
    );
}

#[test]
fn empty_corpus_yields_a_flagged_empty_report() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("space.txt"), "-p0\n-p1\n-p2\n").unwrap();
    fs::create_dir(tmp.path().join("empty")).unwrap();

    let synth = serde_json::json!({
        "seed": 1, "output_dir": tmp.path().join("out"), "preset": "desk",
        "env": {
            "backend": "synthetic", "episode_limit": 6,
            "action_space_file": tmp.path().join("space.txt"),
            "synthetic": {"actions": 3, "counters": 2, "programs": 2, "corpus_seed": 5}
        },
        "train": {"total_env_steps": 0, "replay_capacity": 512},
        "overrides": {
            "h_dim": 16, "groups": 2, "classes": 4, "wm_mlp_width": 16,
            "wm_mlp_hidden_layers": 1, "agent_mlp_width": 16,
            "agent_mlp_hidden_layers": 1, "horizon": 3
        }
    });
    fs::write(tmp.path().join("synth.json"), synth.to_string()).unwrap();
    let synth_cfg = tmp.path().join("synth.json");
    assert_ok(&run(&["train", "--config", synth_cfg.to_str().unwrap()]));

    let mut real: serde_json::Value = synth.clone();
    real["env"]["backend"] = serde_json::json!("real");
    real["env"]["corpus_dir"] = serde_json::json!(tmp.path().join("empty"));
    real["env"]["synthetic"] = serde_json::Value::Null;
    fs::write(tmp.path().join("real.json"), real.to_string()).unwrap();
    let real_cfg = tmp.path().join("real.json");

    let ckpt = tmp.path().join("out/final.ckpt");
    let out_dir = tmp.path().join("eval");
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--config",
        real_cfg.to_str().unwrap(),
        "--zero-timing",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("no successful programs"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n"], 0);
    assert!(summary["geomean"].is_null());
}

#[test]
fn exit_codes_distinguish_parse_and_checkpoint_mismatch() {
    let tmp = tempfile::tempdir().unwrap();

    // 2: unreadable config
    fs::write(tmp.path().join("broken.json"), "{not json").unwrap();
    let broken = tmp.path().join("broken.json");
    let out = run(&["train", "--config", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    // 2: IR that does not parse
    fs::write(tmp.path().join("bad.ll"), "define i32 @f( {").unwrap();
    let bad = tmp.path().join("bad.ll");
    let out = run(&["features", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    // 3: checkpoint trained against a different action space
    write_config(tmp.path(), "cfg.json", 3, "out", 0);
    let cfg = tmp.path().join("cfg.json");
    assert_ok(&run(&["train", "--config", cfg.to_str().unwrap()]));
    let ckpt = tmp.path().join("out/final.ckpt");

    let mut other: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    other["env"]["synthetic"]["actions"] = serde_json::json!(5);
    other["output_dir"] = serde_json::json!(tmp.path().join("out-5"));
    fs::write(
        tmp.path().join("cfg5.json"),
        serde_json::to_string(&other).unwrap(),
    )
    .unwrap();
    let cfg5 = tmp.path().join("cfg5.json");
    let out = run(&[
        "optimize",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--config",
        cfg5.to_str().unwrap(),
        "--input",
        "synthetic:0",
    ]);
    assert_eq!(out.status.code(), Some(3));

    // 2: unknown optimize mode
    let out = run(&[
        "optimize",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        "synthetic:0",
        "--mode",
        "telepathy",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn features_prints_every_counter_as_csv() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/diamond.ll");
    let out = run(&["features", fixture.to_str().unwrap()]);
    assert_ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "feature,value");
    assert_eq!(lines.len(), 57);
    assert!(lines.contains(&"TotalInsts,6"));
    assert!(lines.contains(&"TotalBlocks,4"));
}

#[test]
fn optimize_modes_run_and_rollout_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "cfg.json", 3, "out", 0);
    let cfg = tmp.path().join("cfg.json");
    assert_ok(&run(&["train", "--config", cfg.to_str().unwrap()]));
    let ckpt = tmp.path().join("out/final.ckpt");
    let ckpt_s = ckpt.to_str().unwrap();
    let cfg_s = cfg.to_str().unwrap();

    let base = [
        "optimize", "--checkpoint", ckpt_s, "--config", cfg_s, "--input", "synthetic:1",
    ];
    let a = run(&base);
    let b = run(&base);
    assert_ok(&a);
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.contains("ratio:"), "{text}");

    let mut guided = base.to_vec();
    guided.extend(["--mode", "guided:0.2"]);
    assert_ok(&run(&guided));

    fs::write(tmp.path().join("core.txt"), "0,1\n2\n1,0,3\n").unwrap();
    let core = tmp.path().join("core.txt");
    let mode = format!("coreset:{}", core.display());
    let mut coreset = base.to_vec();
    coreset.extend(["--mode", &mode]);
    assert_ok(&run(&coreset));
}

#[test]
fn shipped_coreset_parses_against_the_default_action_space() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/coreset50.txt");
    let text = fs::read_to_string(path).unwrap();
    let space = pass_pilot_core::env::ActionSpace::default_autophase();
    let cs = pass_pilot_core::agent::CoreSet::parse(&text, &space).unwrap();
    assert_eq!(cs.sequences.len(), 50);
    let total: usize = cs.sequences.iter().map(Vec::len).sum();
    assert!((500..=800).contains(&total), "{total} passes");
}

#[test]
fn search_and_oracle_commands_report_outcomes() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "cfg.json", 3, "out", 0);
    let cfg = tmp.path().join("cfg.json");
    let cfg_s = cfg.to_str().unwrap();

    let out = run(&[
        "search", "--config", cfg_s, "--input", "synthetic:0", "--budget", "64p",
    ]);
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("ratio:"));

    let out = run(&[
        "oracle", "--config", cfg_s, "--input", "synthetic:0", "--max-len", "2",
    ]);
    assert_ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("candidates: 21"), "{text}");

    let out = run(&[
        "search", "--config", cfg_s, "--input", "synthetic:0", "--budget", "64",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
