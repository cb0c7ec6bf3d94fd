//! End-to-end checks of the command-line surface: every subcommand, exit
//! codes on malformed input, and idempotence under a fixed seed.

use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

fn valuekit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_valuekit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = valuekit(dir, args);
    assert!(
        out.status.success(),
        "`valuekit {}` failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_cli_workflow_round_trips() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();

    // synth: gold + two models + gate for two "splits"
    ok(d, &["synth", "--n", "400", "--profile", "uniform:0.2", "--models", "2", "--gate", "--out-dir", ".", "--prefix", "val", "--seed", "5"]);
    ok(d, &["synth", "--n", "300", "--profile", "uniform:0.2", "--models", "2", "--gate", "--out-dir", ".", "--prefix", "test", "--seed", "6"]);

    // stats prints the prevalence table
    let stats = ok(d, &["stats", "--gold", "val_gold.tsv"]);
    assert!(stats.contains("value\tcount\tpercent"));
    assert!(stats.contains("presence\t"));

    // calibrate both kinds
    ok(d, &["calibrate", "--probs", "val_model1.tsv", "--gold", "val_gold.tsv", "--kind", "label-wise", "--out", "thr1.tsv"]);
    ok(d, &["calibrate", "--probs", "val_model2.tsv", "--gold", "val_gold.tsv", "--kind", "tuned-global", "--out", "thr2.tsv"]);
    let thr = std::fs::read_to_string(d.join("thr1.tsv")).unwrap();
    assert!(thr.contains("kind=label-wise"));

    // score with frozen thresholds, dumping predictions
    let report = ok(d, &["score", "--probs", "test_model1.tsv", "--gold", "test_gold.tsv", "--thresholds", "thr1.tsv", "--preds-out", "preds1.tsv"]);
    assert!(report.contains("macro-F1"));
    ok(d, &["score", "--probs", "test_model2.tsv", "--gold", "test_gold.tsv", "--thresholds", "thr2.tsv", "--preds-out", "preds2.tsv"]);

    // gate tunes a cutoff and emits gated artifacts
    let gate_line = ok(d, &["gate", "--gate-probs", "val_gate.tsv", "--value-probs", "val_model1.tsv", "--gold", "val_gold.tsv", "--thresholds", "thr1.tsv", "--out-thresholds", "thr1_gated.tsv", "--out-probs", "val_model1_gated.tsv"]);
    assert!(gate_line.contains("tau_gate"));
    assert!(std::fs::read_to_string(d.join("thr1_gated.tsv")).unwrap().contains("gate-t="));

    // scoring with the gate applied end-to-end on test
    ok(d, &["score", "--probs", "test_model1.tsv", "--gold", "test_gold.tsv", "--thresholds", "thr1_gated.tsv", "--gate-probs", "test_gate.tsv"]);

    // ensemble over the pool
    std::fs::write(
        d.join("pool.tsv"),
        "m1\tval_model1.tsv\ttest_model1.tsv\nm2\tval_model2.tsv\ttest_model2.tsv\n",
    )
    .unwrap();
    let ens = ok(d, &["ensemble", "--pool", "pool.tsv", "--gold-val", "val_gold.tsv", "--gold-test", "test_gold.tsv", "--replicates", "200", "--out-dir", "ens"]);
    assert!(ens.contains("members"));
    assert!(d.join("ens/manifest.toml").exists());
    assert!(d.join("ens/test_report.tsv").exists());

    // compare the two scored systems
    let cmp = ok(d, &["compare", "--preds-a", "preds1.tsv", "--preds-b", "preds2.tsv", "--gold", "test_gold.tsv", "--replicates", "200"]);
    assert!(cmp.contains("system_a"));
    assert!(cmp.lines().filter(|l| !l.starts_with('#')).count() >= 2 + 1 + 19);
}

#[test]
fn subcommands_are_idempotent_under_a_fixed_seed() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "250", "--profile", "validation", "--models", "1", "--out-dir", "a", "--seed", "11"]);
    ok(d, &["synth", "--n", "250", "--profile", "validation", "--models", "1", "--out-dir", "b", "--seed", "11"]);
    for name in ["synth_gold.tsv", "synth_model1.tsv"] {
        let x = std::fs::read(d.join("a").join(name)).unwrap();
        let y = std::fs::read(d.join("b").join(name)).unwrap();
        assert_eq!(x, y, "{name} differs across identical invocations");
    }

    ok(d, &["calibrate", "--probs", "a/synth_model1.tsv", "--gold", "a/synth_gold.tsv", "--kind", "label-wise", "--out", "t1.tsv"]);
    ok(d, &["calibrate", "--probs", "a/synth_model1.tsv", "--gold", "a/synth_gold.tsv", "--kind", "label-wise", "--out", "t2.tsv"]);
    assert_eq!(
        std::fs::read(d.join("t1.tsv")).unwrap(),
        std::fs::read(d.join("t2.tsv")).unwrap()
    );
}

#[test]
fn malformed_inputs_exit_nonzero_with_a_message() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();

    // missing file
    let out = valuekit(d, &["stats", "--gold", "nope.tsv"]);
    assert!(!out.status.success());

    // bad header
    std::fs::write(d.join("bad.tsv"), "Text-ID\tWRONG\n").unwrap();
    let out = valuekit(d, &["stats", "--gold", "bad.tsv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    // probability out of range, cell named in the message
    ok(d, &["synth", "--n", "30", "--profile", "uniform:0.3", "--out-dir", ".", "--seed", "3"]);
    let good = std::fs::read_to_string(d.join("synth_model1.tsv")).unwrap();
    let broken = good.replacen("\t0.", "\t1.", 1);
    std::fs::write(d.join("broken.tsv"), broken).unwrap();
    let out = valuekit(d, &["calibrate", "--probs", "broken.tsv", "--gold", "synth_gold.tsv", "--kind", "tuned-global", "--out", "t.tsv"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("outside [0,1]"), "stderr: {stderr}");

    // presence inconsistency: strict fails, lenient recovers
    let gold = std::fs::read_to_string(d.join("synth_gold.tsv")).unwrap();
    let mut lines: Vec<String> = gold.lines().map(|s| s.to_string()).collect();
    // find a data row whose presence bit is 1 and zero it out
    let flip = lines
        .iter()
        .position(|l| !l.starts_with('#') && !l.starts_with("Text-ID") && l.ends_with("\t1"))
        .expect("some presence-positive row");
    let cut = lines[flip].rfind('\t').unwrap();
    lines[flip] = format!("{}\t0", &lines[flip][..cut]);
    std::fs::write(d.join("inconsistent.tsv"), lines.join("\n") + "\n").unwrap();
    let out = valuekit(d, &["stats", "--gold", "inconsistent.tsv"]);
    assert!(!out.status.success());
    let out = valuekit(d, &["stats", "--gold", "inconsistent.tsv", "--lenient"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("recomputed"));
}

#[test]
fn stance_ingestion_collapses_flags() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    // two values attained/constrained on one sentence, nothing on the other
    let mut header = String::from("Text-ID\tSentence-ID");
    for name in valuekit::VALUE_NAMES {
        header.push_str(&format!("\t{name}:attained\t{name}:constrained"));
    }
    let mut row1 = String::from("t1\t1");
    let mut row2 = String::from("t1\t2");
    for v in 0..19 {
        row1.push_str(if v == 0 { "\t1\t0" } else if v == 2 { "\t0\t1" } else { "\t0\t0" });
        row2.push_str("\t0\t0");
    }
    std::fs::write(d.join("stance.tsv"), format!("{header}\n{row1}\n{row2}\n")).unwrap();
    let stats = ok(d, &["stats", "--gold", "stance.tsv", "--stance"]);
    assert!(stats.contains("Self-direction: thought\t1\t50.00"));
    assert!(stats.contains("Stimulation\t1\t50.00"));
    assert!(stats.contains("presence\t1\t50.00"));
}
