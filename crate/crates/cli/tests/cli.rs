use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use neurongauge_core::aggregation::{save_ratings_jsonl, RatingRecord};
use neurongauge_core::dataset::{load_activations, load_concepts, Provenance};
use neurongauge_core::estimator::PlanRecord;
use neurongauge_core::pipeline::estimate_from_labels;
use neurongauge_core::scoring::{concept_map, parse_explanation, score_explanation};
use neurongauge_core::simulator::simulate_ratings;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_neurongauge"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().unwrap()
}

/// Small benchmark workspace in `dir/ws`.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["generate", "--out", "ws", "--bench-size", "3000", "--bench-neurons", "2", "--bench-prevalence", "0.03"],
    );
    dir
}

/// Dense labels for `concept` taken from the ground-truth file.
fn write_truth_labels(dir: &Path, concept: &str, path: &str) -> PathBuf {
    let (index, cs) = load_concepts(&dir.join("ws/concepts.csv"), Provenance::GroundTruth).unwrap();
    let c = cs.iter().find(|c| c.concept_id == concept).unwrap();
    let mut text = format!("input_id,{concept}\n");
    for (i, v) in c.values.iter().enumerate() {
        text.push_str(&format!("{},{v}\n", index.id(i)));
    }
    let p = dir.join(path);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn plan_then_estimate_matches_library_and_direct_draw() {
    let dir = workspace();
    let d = dir.path();
    write_truth_labels(d, "concept0", "labels.csv");
    let summary: Value = serde_json::from_str(&ok(
        d,
        &["plan", "--activations", "ws/activations.csv", "--guide", "ws/guide.csv", "--neuron", "n0",
          "--concept", "concept0", "--n-inputs", "120", "--seed", "4", "--out", "plan.json"],
    ))
    .unwrap();
    assert_eq!(summary["n_inputs"], 120);
    let via_plan = ok(d, &["estimate", "--activations", "ws/activations.csv", "--labels", "labels.csv", "--plan", "plan.json"]);
    let direct = ok(
        d,
        &["estimate", "--activations", "ws/activations.csv", "--labels", "labels.csv", "--guide", "ws/guide.csv",
          "--neuron", "n0", "--concept", "concept0", "--strategy", "guided", "--n-inputs", "120", "--seed", "4"],
    );
    assert_eq!(via_plan, direct);
    let est: Value = serde_json::from_str(&via_plan).unwrap();
    assert_eq!(est["partial"], false);
    assert_eq!(est["n_labeled"], 120);

    let record: PlanRecord = serde_json::from_str(&std::fs::read_to_string(d.join("plan.json")).unwrap()).unwrap();
    let (_, sample) = record.restore().unwrap();
    let (_, acts) = load_activations(&d.join("ws/activations.csv")).unwrap();
    let (_, cs) = load_concepts(&d.join("ws/concepts.csv"), Provenance::GroundTruth).unwrap();
    let labels = cs[0].values.iter().copied().enumerate().collect();
    let lib = estimate_from_labels(&acts[0], &sample, &labels).unwrap();
    assert_eq!(est["rho"].as_f64().unwrap(), lib.estimate.rho);

    // A sparse label file leaves the estimate partial.
    let mut sparse = String::from("input_id,concept0\n");
    for id in summary["input_ids"].as_array().unwrap().iter().take(20) {
        let id = id.as_str().unwrap();
        let i: usize = id[1..].parse().unwrap();
        sparse.push_str(&format!("{id},{}\n", cs[0].values[i]));
    }
    std::fs::write(d.join("sparse.csv"), sparse).unwrap();
    let out = run(d, &["estimate", "--activations", "ws/activations.csv", "--labels", "sparse.csv", "--plan", "plan.json"]);
    match out.status.code().unwrap() {
        0 => {
            let v: Value = serde_json::from_slice(&out.stdout).unwrap();
            assert_eq!(v["partial"], true);
            assert!(v["n_labeled"].as_u64().unwrap() < 120);
        }
        c => assert_eq!(c, 4, "only a degenerate labeled subset may fail"),
    }
}

#[test]
fn exit_codes_follow_error_classes() {
    let dir = workspace();
    let d = dir.path();
    write_truth_labels(d, "concept0", "labels.csv");
    let missing = run(d, &["estimate", "--activations", "nope.csv", "--labels", "labels.csv"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.csv"));
    assert_eq!(
        code(d, &["estimate", "--activations", "ws/activations.csv", "--labels", "labels.csv", "--neuron", "n0", "--strategy", "guided"]),
        3
    );
    assert_eq!(
        code(d, &["estimate", "--activations", "ws/activations.csv", "--labels", "labels.csv", "--neuron", "n0", "--strategy", "oracle"]),
        3
    );
    // Constant labels on the sample: the weighted concept variance is zero.
    let (index, _) = load_activations(&d.join("ws/activations.csv")).unwrap();
    let zeros: String = std::iter::once("input_id,c\n".to_string())
        .chain(index.input_ids().iter().map(|id| format!("{id},0\n")))
        .collect();
    std::fs::write(d.join("zeros.csv"), zeros).unwrap();
    assert_eq!(
        code(d, &["estimate", "--activations", "ws/activations.csv", "--labels", "zeros.csv", "--neuron", "n0", "--strategy", "uniform"]),
        4
    );
    std::fs::write(d.join("bad.json"), r#"{"strategies": "uniform"}"#).unwrap();
    assert_eq!(code(d, &["simulate", "--config", "bad.json", "--out", "x.csv"]), 5);
    assert_eq!(code(d, &["estimate", "--bogus"]), 5);
    assert_eq!(
        code(d, &["plan", "--activations", "ws/activations.csv", "--neuron", "n0", "--strategy", "uniform", "--out", "ws/activations.csv"]),
        5
    );
    assert_eq!(code(d, &["--help"]), 0);
}

const SIM_CONFIG: &str = r#"{
  "strategies": ["uniform", "guided"],
  "aggregations": ["majority", "bayes-estimator"],
  "cells": {"grid": {"raters": [1, 2], "n_inputs": [30, 60]}},
  "base": {"n_trials": 4, "seed": 5},
  "benchmark": {"size": 3000, "neurons": 2, "prevalence": 0.03}
}"#;

#[test]
fn simulate_writes_sweep_csv_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), SIM_CONFIG).unwrap();
    ok(d, &["--jobs", "1", "simulate", "--config", "cfg.json", "--out", "a.csv"]);
    ok(d, &["--jobs", "3", "simulate", "--config", "cfg.json", "--out", "b.csv"]);
    let a = std::fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read_to_string(d.join("b.csv")).unwrap());
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "strategy,aggregation,m,n_inputs,cost_usd,rce,stderr");
    assert_eq!(lines.len(), 1 + 2 * 2 * 4);
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        let (m, n): (f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap());
        assert_eq!(f[4].parse::<f64>().unwrap(), n * m * (0.06 / 15.0));
        assert!(f[5].parse::<f64>().unwrap() >= 0.0);
    }

    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(d.join("a.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 5);
    let other: Value = serde_json::from_str(&std::fs::read_to_string(d.join("b.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"], other["inputs"]);
    assert_eq!(manifest["outputs"][0]["sha256"], other["outputs"][0]["sha256"]);
    assert_ne!(manifest["config_digest"], other["config_digest"], "the output path is part of the config");
    ok(d, &["simulate", "--config", "cfg.json", "--out", "a.csv"]);
    let again: Value = serde_json::from_str(&std::fs::read_to_string(d.join("a.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_digest"], again["config_digest"]);
}

#[test]
fn sweep_budget_and_beta_modes() {
    let dir = workspace();
    let d = dir.path();
    let common = ["--activations", "ws/activations.csv", "--concepts", "ws/concepts.csv", "--guide", "ws/guide.csv",
                  "--trials", "3"];
    let mut args = vec!["sweep"];
    args.extend(common);
    args.extend(["--strategy", "guided", "--aggregation", "majority,bayes", "--raters", "1,2,3",
                 "--n-inputs", "30,90,180", "--budget", "0.72", "--out", "sweep.csv"]);
    let picks: Value = serde_json::from_str(&ok(d, &args)).unwrap();
    let picks = picks.as_array().unwrap();
    assert_eq!(picks.len(), 2);
    for p in picks {
        assert!(p["cost_usd"].as_f64().unwrap() <= 0.72 + 1e-12);
        assert_eq!(p["budget_usd"], 0.72);
    }
    let rows = std::fs::read_to_string(d.join("sweep.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 9);

    let mut args = vec!["sweep"];
    args.extend(common);
    args.extend(["--strategy", "guided", "--raters", "2", "--n-inputs", "90", "--betas", "0.003,0.01,0.03,0.1",
                 "--out", "betas.csv"]);
    ok(d, &args);
    let text = std::fs::read_to_string(d.join("betas.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "beta,rce,stderr");
    assert_eq!(lines.len(), 5);

    let mut args = vec!["sweep"];
    args.extend(common);
    args.extend(["--strategy", "guided", "--raters", "2", "--n-inputs", "90", "--budget", "0.1", "--out", "x.csv"]);
    assert_eq!(code(d, &args), 5);
}

#[test]
fn score_matches_library() {
    let dir = workspace();
    let d = dir.path();
    let lines = [
        r#"{"neuron_id":"n0","explanation":"concept0"}"#,
        r#"{"neuron_id":"n1","explanation":"concept1 OR NOT concept0"}"#,
        r#"{"neuron_id":"n0","explanation":"2*concept0 - 0.5*concept1"}"#,
        r#"{"neuron_id":"n1","explanation":{"clusters":[{"lower":0,"upper":1,"formula":"concept0"},{"lower":1,"upper":4,"formula":"concept1"}]}}"#,
    ];
    std::fs::write(d.join("e.jsonl"), lines.join("\n")).unwrap();
    let csv = ok(d, &["score", "--explanations", "e.jsonl", "--concepts", "ws/concepts.csv", "--activations", "ws/activations.csv"]);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "neuron_id,explanation,length,score");
    assert_eq!(rows.len(), 5);

    let (_, acts) = load_activations(&d.join("ws/activations.csv")).unwrap();
    let (_, cs) = load_concepts(&d.join("ws/concepts.csv"), Provenance::GroundTruth).unwrap();
    let map = concept_map(&cs);
    for (row, (neuron, text)) in rows[1..4].iter().zip([(0, "concept0"), (1, "concept1 OR NOT concept0"), (0, "2*concept0 - 0.5*concept1")]) {
        let e = parse_explanation(text).unwrap();
        let want = score_explanation(&e, &acts[neuron], &map, None).unwrap();
        let got: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(got, want);
    }
    let score_of = |row: &str| row.rsplit(',').next().unwrap().parse::<f64>().unwrap();
    assert!(score_of(rows[1]) > 0.2);

    ok(d, &["score", "--explanations", "e.jsonl", "--concepts", "ws/concepts.csv", "--activations", "ws/activations.csv",
            "--out", "scores.csv"]);
    assert_eq!(std::fs::read_to_string(d.join("scores.csv")).unwrap(), csv);
    assert!(d.join("scores.csv.manifest.json").exists());
}

#[test]
fn aggregate_and_calibrate_ratings_log() {
    let dir = workspace();
    let d = dir.path();
    let (index, cs) = load_concepts(&d.join("ws/concepts.csv"), Provenance::GroundTruth).unwrap();
    let truth = &cs[0];
    let indices: Vec<usize> = (0..300).map(|k| k * 7).collect();
    let sets = simulate_ratings(truth, &indices, 9, 0.13, 21).unwrap();
    let mut records = Vec::new();
    for s in &sets {
        for (r, bit) in s.ratings.iter().enumerate() {
            records.push(RatingRecord {
                session: "cal".into(),
                input_id: index.id(s.input_index).into(),
                concept: "concept0".into(),
                rater: format!("r{r}"),
                rating: u8::from(*bit),
                ts: "2026-01-01T00:00:00Z".into(),
            });
        }
    }
    save_ratings_jsonl(&d.join("ratings.jsonl"), &records).unwrap();

    let cal: Value = serde_json::from_str(&ok(d, &["calibrate", "--ratings", "ratings.jsonl", "--concepts", "ws/concepts.csv"])).unwrap();
    assert_eq!(cal["total"], 2700);
    let eta = cal["eta"].as_f64().unwrap();
    let sd = (0.13f64 * 0.87 / 2700.0).sqrt();
    assert!((eta - 0.13).abs() < 4.0 * sd, "eta {eta}");

    let csv = ok(d, &["aggregate", "--ratings", "ratings.jsonl", "--activations", "ws/activations.csv", "--method", "majority"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "input_id,concept0");
    assert_eq!(lines.len(), 301);
    let agree = lines[1..]
        .iter()
        .filter(|l| {
            let (id, v) = l.split_once(',').unwrap();
            (v.parse::<f64>().unwrap() == 1.0) == (truth.values[index.position(id).unwrap()] == 1.0)
        })
        .count();
    assert!(agree >= 295, "majority of 9 at eta 0.13 agrees with truth on {agree}/300");

    assert_eq!(code(d, &["aggregate", "--ratings", "ratings.jsonl", "--activations", "ws/activations.csv"]), 3);
    ok(d, &["aggregate", "--ratings", "ratings.jsonl", "--guide", "ws/guide.csv", "--out", "labels.csv"]);
    let labels = std::fs::read_to_string(d.join("labels.csv")).unwrap();
    assert!(labels.lines().skip(1).all(|l| {
        let v: f64 = l.split_once(',').unwrap().1.parse().unwrap();
        (0.0..=1.0).contains(&v)
    }));
}

#[test]
fn generate_writes_manifest_beside_directory() {
    let dir = workspace();
    let m: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ws.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "generate");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 3);
    let sha = &m["outputs"][0]["sha256"];
    let again = workspace();
    let m2: Value =
        serde_json::from_str(&std::fs::read_to_string(again.path().join("ws.manifest.json")).unwrap()).unwrap();
    assert_eq!(sha, &m2["outputs"][0]["sha256"]);
}
