use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn godnf(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_godnf"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.display().to_string()
}

#[test]
fn diffuse_writes_outputs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(
        godnf(&["diffuse", "--seed", "4"], &a).status.code(),
        Some(0)
    );
    assert_eq!(
        godnf(&["diffuse", "--seed", "4"], &b).status.code(),
        Some(0)
    );
    for f in ["trajectory.csv", "report.json", "final_state.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["steps"], 100);
    assert!(report["report"]["fixed_point_residual"].as_f64().unwrap() < 1e-6);
    let leftovers: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .ends_with(".tmp")
        })
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn seed_flag_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    godnf(&["simulate", "--seed", "1"], &a);
    godnf(&["simulate", "--seed", "2"], &b);
    assert_ne!(
        fs::read(a.join("probabilities.csv")).unwrap(),
        fs::read(b.join("probabilities.csv")).unwrap()
    );
}

#[test]
fn invalid_config_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for (name, json, field) in [
        ("alpha.json", r#"{"alpha": 1.5}"#, "alpha"),
        ("unknown.json", r#"{"alpah": 0.5}"#, "alpah"),
        (
            "sbm.json",
            r#"{"graph": {"sbm": {"p_in": 0.1, "p_out": 0.5}}}"#,
            "p_out",
        ),
    ] {
        let cfg = write_config(dir.path(), name, json);
        let o = godnf(&["diffuse", "--config", &cfg], &out);
        assert_eq!(o.status.code(), Some(2), "{name}");
        assert!(String::from_utf8_lossy(&o.stderr).contains(field), "{name}");
        assert!(!out.exists(), "{name} left outputs");
    }
    let o = godnf(&["simulate", "--config", "/nonexistent/config.json"], &out);
    assert_eq!(o.status.code(), Some(2));
    let cfg = write_config(dir.path(), "runs.json", r#"{"runs": 0}"#);
    assert_eq!(
        godnf(&["simulate", "--config", &cfg], &out).status.code(),
        Some(2)
    );
    assert!(!out.exists());
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "div.json",
        r#"{"alpha": 0.0, "lambda": 0.0, "mu": 3.0, "self_weight": 0.0, "steps": 2000}"#,
    );
    let out = dir.path().join("out");
    let o = godnf(&["diffuse", "--config", &cfg], &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step"));
    assert!(!out.exists());
}

#[test]
fn edge_list_inputs_with_parse_errors_report_lines() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("g.txt"), "0 1\n1 2\n2 x\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!(
            r#"{{"graph": {{"edges": "{}"}}}}"#,
            dir.path().join("g.txt").display()
        ),
    );
    let o = godnf(&["diffuse", "--config", &cfg], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&o.stderr).contains(":3:"),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn train_nc_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // two triangles joined by one edge
    fs::write(d.join("g.txt"), "0 1\n1 2\n0 2\n3 4\n4 5\n3 5\n2 3\n").unwrap();
    fs::write(d.join("h.csv"), "1,0\n1,0\n1,0\n0,1\n0,1\n0,1\n").unwrap();
    fs::write(d.join("y.txt"), "0\n0\n0\n1\n1\n1\n").unwrap();
    let cfg = write_config(
        d,
        "c.json",
        &format!(
            r#"{{"graph": {{"edges": "{}"}}, "features": "{}", "labels": "{}", "train": {{"epochs": 50, "split": [0.5, 0.25, 0.25]}}}}"#,
            d.join("g.txt").display(),
            d.join("h.csv").display(),
            d.join("y.txt").display()
        ),
    );
    let out = d.join("out");
    let o = godnf(&["train-nc", "--config", &cfg], &out);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_loss,val_metric,reg_loss\n"));
    assert_eq!(history.lines().count(), 51);
    let (params, _) =
        godnf_core::train::load_checkpoint(fs::File::open(out.join("model.ckpt")).unwrap())
            .unwrap();
    assert_eq!(params.lambda_logits.len(), 6);

    let missing = write_config(
        d,
        "m.json",
        &format!(
            r#"{{"graph": {{"edges": "{}"}}}}"#,
            d.join("g.txt").display()
        ),
    );
    assert_eq!(
        godnf(&["train-nc", "--config", &missing], &d.join("o2"))
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn consensus_demo_and_influence_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    assert_eq!(
        godnf(&["consensus-demo", "--threads", "2"], &out)
            .status
            .code(),
        Some(0)
    );
    let doc: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("consensus.json")).unwrap()).unwrap();
    assert_eq!(doc["scenarios"].as_array().unwrap().len(), 4);

    let cfg = write_config(
        dir.path(),
        "ie.json",
        r#"{"influence": {"runs": 500, "train": {"epochs": 50}}}"#,
    );
    let out = dir.path().join("ie");
    assert_eq!(
        godnf(&["train-ie", "--config", &cfg], &out).status.code(),
        Some(0)
    );
    let r: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(r["model_mae"].is_number() && r["baseline_mae"].is_number());
    assert!(
        fs::read_to_string(out.join("ground_truth.csv"))
            .unwrap()
            .lines()
            .count()
            > 50
    );
}

#[test]
fn bench_single_rung_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "b.json",
        r#"{"base_edges": 2000, "doublings": 0, "repeats": 3}"#,
    );
    let out = dir.path().join("b");
    assert_eq!(
        godnf(&["bench", "--config", &cfg], &out).status.code(),
        Some(0)
    );
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("m,ns_per_step\n2000,"));
}

#[test]
fn threads_zero_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        godnf(&["simulate", "--threads", "0"], &dir.path().join("o"))
            .status
            .code(),
        Some(2)
    );
}
