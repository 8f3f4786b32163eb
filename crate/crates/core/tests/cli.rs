use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic-42")
}

fn trailmark(args: &[&str], out: &Path) -> Output {
    let f = fixture();
    Command::new(env!("CARGO_BIN_EXE_trailmark"))
        .args(args)
        .arg("--config")
        .arg(f.join("pipeline.conf"))
        .arg("--trials")
        .arg(f.join("trials"))
        .arg("--labels")
        .arg(f.join("labels.csv"))
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for stage in [&["ingest"][..], &["preprocess"], &["embed"], &["cluster"], &["agree"], &["utest"], &["search", "--task", "score"]] {
        let o = trailmark(stage, out);
        assert!(o.status.success(), "{stage:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let ingest = json(&out.join("ingest.json"));
    assert_eq!(ingest["stage"], "ingest");
    assert_eq!(ingest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(ingest["result"]["trials"], 24);

    let prep = json(&out.join("preprocess.json"));
    assert_eq!(prep["result"]["shape"], serde_json::json!([24, 4, 720]));

    let cluster = json(&out.join("cluster.json"));
    assert_eq!(cluster["result"]["k"], 2);

    let agree = json(&out.join("agree.json"));
    let pa = agree["result"]["percent_agreement"].as_f64().unwrap();
    let kappa = agree["result"]["free_marginal_kappa"].as_f64().unwrap();
    assert!((kappa - (pa - 1.0 / 3.0) / (2.0 / 3.0)).abs() < 1e-12);

    let utest = json(&out.join("utest.json"));
    assert_eq!(utest["result"]["utests"]["tests"].as_array().unwrap().len(), 8);

    let model = out.join("model_score.json");
    let o = trailmark(&["predict", "--model", model.to_str().unwrap()], out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pred = json(&out.join("predictions.json"));
    assert_eq!(pred["result"].as_array().unwrap().len(), 24);
    assert!(["0", "+"].contains(&pred["result"][0]["prediction"].as_str().unwrap()));

    let log = json(&out.join("search_log_score.json"));
    assert!(log.as_array().unwrap().len() <= 300);
}

#[test]
fn pipeline_report_has_every_section() {
    let dir = tempfile::tempdir().unwrap();
    let o = trailmark(&["pipeline"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("report.json"));
    for key in ["ingest", "preprocess", "embed", "cluster", "crosstab", "agreement", "utests", "searches", "stage_seeds"] {
        assert!(!r[key].is_null(), "missing {key}");
    }
    assert!(r["crosstab"]["purity"].as_f64().unwrap() >= 0.9);
    assert!(!r["embed"]["loss_curve"].as_array().unwrap().is_empty());
    assert_eq!(r["searches"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("model_cbarq_EXC.json").exists());
}

#[test]
fn errors_are_reported_with_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_trailmark");
    let help = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("pipeline"));

    let unknown = Command::new(bin).arg("dance").output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"trial_id\": \"a\", \"fps\"").unwrap();
    let o = Command::new(bin).args(["ingest", "--trials"]).arg(dir.path()).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["stage"], "ingest");
    assert_eq!(err["error"]["kind"], "MalformedDocument");

    let o = Command::new(bin).args(["agree", "--coverage-threshold", "2"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn synth_is_byte_identical_by_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_trailmark"))
            .args(["synth", "--seed", "5", "--n-per-profile", "2", "--duration", "12", "--missing-rate", "0.1", "--profiles", "neutral,excessive,avoidant"])
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for rel in ["labels.csv", "manifest.json", "trials/syn-0001.json", "trials/syn-0006.json"] {
        assert_eq!(std::fs::read(a.join(rel)).unwrap(), std::fs::read(b.join(rel)).unwrap(), "{rel}");
    }
    let labels = std::fs::read_to_string(a.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 7);
}
