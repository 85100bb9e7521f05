use std::path::Path;
use std::process::Command;

use adamms_core::mapping::fixtures;
use adamms_core::store::{write_checkpoint, Dtype, TensorEntry};
use adamms_core::toy::ToyTaskSpec;
use serde_json::Value;

struct Run {
    code: i32,
    json: Value,
    stderr: String,
}

fn adamms(args: &[&str], cwd: &Path) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_adamms"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        json: serde_json::from_str(&stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {stdout}")),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn toy_lab(root: &Path) {
    let r = adamms(&["toy-lab", "--out-dir", "lab", "--seed", "4", "--inputs", "200"], root);
    assert_eq!(r.code, 0, "{}", r.stderr);
}

fn visual_expert_files(root: &Path, layers: usize) {
    let fx = fixtures::visual_expert(layers, 8, 3);
    write_checkpoint(fx.base, root.join("base.safetensors")).unwrap();
    write_checkpoint(fx.donor, root.join("donor.safetensors")).unwrap();
    std::fs::write(root.join("rules.json"), serde_json::to_string(&fx.rules).unwrap()).unwrap();
}

#[test]
fn merge_at_zero_reproduces_the_base_digest() {
    let dir = tempfile::tempdir().unwrap();
    toy_lab(dir.path());
    let base = adamms(&["inspect", "lab/base.safetensors"], dir.path());
    assert_eq!(base.code, 0);
    assert_eq!(base.json["tensors"][0]["name"], "toy.params");
    let merged = adamms(&["merge", "--config", "lab/config.json", "--alpha", "0"], dir.path());
    assert_eq!(merged.code, 0, "{}", merged.stderr);
    assert_eq!(merged.json["sha256"], base.json["sha256"]);
}

#[test]
fn merge_summary_counts_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    visual_expert_files(dir.path(), 3);
    let r = adamms(
        &["merge", "--base", "base.safetensors", "--donor", "donor.safetensors", "--rules", "rules.json", "--alpha", "0.3"],
        dir.path(),
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json["mapping"]["counts"]["duplicate"], 15);
    assert_eq!(r.json["mapping"]["counts"]["skip"], 2);
    assert!(dir.path().join("adamms-work/merged.safetensors").exists());
    assert!(!dir.path().join("adamms-work/.adamms.lock").exists());

    let map = adamms(&["map", "--base", "base.safetensors", "--donor", "donor.safetensors", "--rules", "rules.json"], dir.path());
    assert_eq!(map.code, 0);
    assert_eq!(map.json["coverage"]["counts"]["duplicate"], 15);
    assert_eq!(
        map.json["pairs"]["model.layers.0.mlp.vision_mlp.up_proj.weight"]["donor"],
        "model.layers.0.mlp.up_proj.weight"
    );
}

#[test]
fn ties_without_pivot_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    visual_expert_files(dir.path(), 1);
    let r = adamms(
        &["merge", "--base", "base.safetensors", "--donor", "donor.safetensors", "--strategy", "ties"],
        dir.path(),
    );
    assert_eq!(r.code, 2);
    assert_eq!(r.json["error"]["name"], "InvalidRecipe");
}

#[test]
fn data_errors_exit_3_with_subject() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk.safetensors"), b"\x10\x00\x00\x00\x00\x00\x00\x00{not json}      ").unwrap();
    let r = adamms(&["inspect", "junk.safetensors"], dir.path());
    assert_eq!(r.code, 3);
    assert_eq!(r.json["error"]["name"], "FormatError");

    let a = vec![TensorEntry::from_f32("w", Dtype::F32, vec![2], &[1.0, 2.0]).unwrap()];
    let b = vec![TensorEntry::from_f32("w", Dtype::F32, vec![3], &[1.0, 2.0, 3.0]).unwrap()];
    write_checkpoint(a, dir.path().join("a.safetensors")).unwrap();
    write_checkpoint(b, dir.path().join("b.safetensors")).unwrap();
    std::fs::write(dir.path().join("rules.json"), r#"[{"base_pattern": "w", "kind": "direct"}]"#).unwrap();
    let r = adamms(&["map", "--base", "a.safetensors", "--donor", "b.safetensors", "--rules", "rules.json"], dir.path());
    assert_eq!(r.code, 3);
    assert_eq!(r.json["error"]["name"], "ShapeMismatch");
    assert_eq!(r.json["error"]["subject"], "w -> w");
}

#[test]
fn search_defaults_and_report_rendering() {
    let dir = tempfile::tempdir().unwrap();
    toy_lab(dir.path());
    let r = adamms(&["search", "--config", "lab/config.json"], dir.path());
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.contains("selected alpha"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("lab/work/report.json")).unwrap()).unwrap();
    assert_eq!(report["grid"]["alphas"], serde_json::json!([0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
    assert_eq!(report["config"]["grid"], serde_json::json!({"lo": 0.0, "hi": 0.6, "step": 0.1}));
    assert_eq!(report["config"]["subset_n"], 100);
    assert_eq!(report["config"]["metric"], "exact");
    assert_eq!(report["subset_ids"].as_array().unwrap().len(), 100);
    assert_eq!(report["D"].as_object().unwrap().len(), 5);
    assert_eq!(r.json["selected_alpha"], report["selected_alpha"]);

    let rendered = adamms(&["report", "lab/work/report.json"], dir.path());
    assert_eq!(rendered.code, 0);
    assert_eq!(rendered.json, report);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    toy_lab(dir.path());
    let r = adamms(
        &["search", "--config", "lab/config.json", "--step", "0.05", "--subset-n", "40", "--metric", "embedding", "--report", "fine.json"],
        dir.path(),
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("fine.json")).unwrap()).unwrap();
    assert_eq!(report["grid"]["alphas"].as_array().unwrap().len(), 13);
    assert_eq!(report["subset_ids"].as_array().unwrap().len(), 40);
    assert_eq!(report["metric"], "embedding");
    assert_eq!(report["config"]["grid"]["step"], 0.05);
}

#[test]
fn constant_toy_task_selects_first_interior_alpha() {
    let dir = tempfile::tempdir().unwrap();
    toy_lab(dir.path());
    // All-zero projections: every candidate answers the first word.
    let mut spec = ToyTaskSpec::load(dir.path().join("lab/toy_spec.json")).unwrap();
    for p in &mut spec.projections {
        p.iter_mut().for_each(|v| *v = 0.0);
    }
    spec.save(dir.path().join("lab/toy_spec.json")).unwrap();
    let r = adamms(&["search", "--config", "lab/config.json"], dir.path());
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json["selected_alpha"], 0.1);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("lab/work/report.json")).unwrap()).unwrap();
    assert!(report["D"].as_object().unwrap().values().all(|v| v == 0.0));
}

#[test]
fn backend_failure_exits_4_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    toy_lab(dir.path());
    let config_path = dir.path().join("lab/config.json");
    let mut config: Value = serde_json::from_str(&std::fs::read_to_string(&config_path).unwrap()).unwrap();
    config["backend"] = serde_json::json!({
        "kind": "process",
        "command_template": "echo boom >&2; exit 9 # {checkpoint} {inputs} {out}"
    });
    std::fs::write(&config_path, config.to_string()).unwrap();
    let r = adamms(&["search", "--config", "lab/config.json"], dir.path());
    assert_eq!(r.code, 4);
    assert_eq!(r.json["error"]["name"], "BackendProcessFailed");
    assert_eq!(r.json["error"]["subject"], "alpha=0");
    assert!(r.json["error"]["message"].as_str().unwrap().contains("boom"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("lab/work/report.json")).unwrap()).unwrap();
    assert_eq!(report["complete"], false);
    assert_eq!(report["failure"]["alpha"], 0.0);
}

#[test]
fn locked_workdir_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    toy_lab(dir.path());
    std::fs::create_dir_all(dir.path().join("lab/work")).unwrap();
    std::fs::write(dir.path().join("lab/work/.adamms.lock"), "1\n").unwrap();
    let r = adamms(&["search", "--config", "lab/config.json"], dir.path());
    assert_eq!(r.code, 2);
    assert_eq!(r.json["error"]["name"], "ConfigError");
    assert!(r.json["error"]["message"].as_str().unwrap().contains("in use"));
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"granularity": 0.1}"#).unwrap();
    let r = adamms(&["search", "--config", "c.json"], dir.path());
    assert_eq!(r.code, 2);
    assert_eq!(r.json["error"]["name"], "ConfigError");
}
