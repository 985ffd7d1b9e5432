use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seeds = 1
models = ["gcn", "nn"]
profiles = ["low"]

[synth]
n_patients = 300

[skipgram]
dim = 8
epochs = 1

[gnn]
hidden_dim = 8

[train]
epochs = 4
"#;

fn drugdis(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("config.toml");
    if !config.exists() {
        std::fs::write(&config, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_drugdis"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("run"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn all_prints_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = drugdis(dir.path(), &["all"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Model"), "{stdout}");
    assert!(dir.path().join("run/report/candidates.csv").is_file());
}

#[test]
fn embed_before_ingest_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = drugdis(dir.path(), &["embed"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ingest"));
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.toml"), "sed = 3\n").unwrap();
    assert_eq!(drugdis(dir.path(), &["synth"]).status.code(), Some(1));
}

#[test]
fn header_only_claims_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let claims = dir.path().join("claims.csv");
    std::fs::write(&claims, "patient_id,date,code_type,code\n").unwrap();
    let config = format!("claims = {:?}\n{SMALL}", claims.display().to_string());
    std::fs::write(dir.path().join("config.toml"), config).unwrap();
    let out = drugdis(dir.path(), &["ingest"]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(2), "{stderr}");
    assert!(stderr.contains("no records in"), "{stderr}");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    assert!(drugdis(dir.path(), &["--seed", "123", "synth"]).status.success());
    let manifest = std::fs::read_to_string(dir.path().join("run/manifests/synth.json")).unwrap();
    assert!(manifest.contains("\"seed\": 123"), "{manifest}");
}
