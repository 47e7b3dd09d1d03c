use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spfactor(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spfactor"))
        .args(args)
        .current_dir(dir)
        .env_remove("SPFACTOR_CONFIG")
        .env_remove("SPFACTOR_SEED")
        .env_remove("SPFACTOR_CHAINS")
        .env_remove("SPFACTOR_THREADS")
        .env_remove("SPFACTOR_OUTPUT")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SIM: &str = "seed = 3\noutput = \"out\"\n";

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), format!("{SIM}colour = 1\n")).unwrap();
    let out = spfactor(dir.path(), &["simulate", "--config", "c.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error: UnknownKey:"), "{}", stderr(&out));
}

#[test]
fn missing_seed_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "output = \"out\"\n").unwrap();
    let out = spfactor(dir.path(), &["simulate", "--config", "c.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error: MissingRequired:"), "{}", stderr(&out));
}

#[test]
fn wrong_type_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "seed = \"three\"\noutput = \"out\"\n").unwrap();
    let out = spfactor(dir.path(), &["simulate", "--config", "c.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error: TypeError:"), "{}", stderr(&out));
}

#[test]
fn fit_without_simulated_data_is_a_runtime_or_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SIM}[data]\nobservations = \"nope.csv\"\nspatial = \"nope.csv\"\ntimes = \"nope.csv\"\n");
    fs::write(dir.path().join("c.toml"), cfg).unwrap();
    let out = spfactor(dir.path(), &["fit", "--config", "c.toml"]);
    assert_ne!(out.status.code(), Some(0));
    let err = stderr(&out);
    assert!(err.starts_with("error: ") && err.trim_end().lines().count() == 1, "{err}");
}

#[test]
fn flags_and_environment_supply_seed_and_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_spfactor"))
        .args(["simulate", "--output", "flagged"])
        .current_dir(dir.path())
        .env("SPFACTOR_SEED", "11")
        .env_remove("SPFACTOR_CONFIG")
        .env_remove("SPFACTOR_OUTPUT")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("flagged/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["simulate"]["seed"], 11);
    for f in ["observations.csv", "spatial.csv", "times.csv", "truth.json"] {
        assert!(dir.path().join("flagged").join(f).exists(), "{f} missing");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = spfactor(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error: Usage:"));
    let out = spfactor(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}
