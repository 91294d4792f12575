use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn drg(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drg"))
        .env_remove("DRG_OUT_DIR")
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn cfg(name: &str) -> String {
    configs().join(name).display().to_string()
}

fn synth(out: &Path) {
    let o = drg(out, &["synth", "--model", &cfg("cstr_cascade.toml")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn synth_then_nominal_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    synth(out);
    assert!(out.join("sets").join("manifest.json").exists());
    let o = drg(
        out,
        &[
            "run",
            "--model",
            &cfg("cstr_cascade.toml"),
            "--scenario",
            &cfg("nominal.toml"),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 3 * 200);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics.is_object());
    assert!(out.join("events.csv").exists());
}

#[test]
fn runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for out in [a.path(), b.path()] {
        let o = drg(out, &["run", "--config", &cfg("run.toml"), "--auto-synth"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let ta = fs::read(a.path().join("trace.csv")).unwrap();
    let tb = fs::read(b.path().join("trace.csv")).unwrap();
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
}

#[test]
fn missing_sets_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = drg(dir.path(), &["run", "--config", &cfg("run.toml")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("drg synth"), "{}", stderr(&o));
}

#[test]
fn unreadable_config_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "schema_version = 1\nmodel = [\n").unwrap();
    let o = drg(dir.path(), &["run", "--config", &bad.display().to_string()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.toml"), "{}", stderr(&o));
}

#[test]
fn ungoverned_inadmissible_run_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = drg(
        dir.path(),
        &[
            "run",
            "--model",
            &cfg("cstr_cascade.toml"),
            "--scenario",
            &cfg("inadmissible.toml"),
            "--governor",
            "none",
            "--auto-synth",
        ],
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(dir.path().join("trace.csv").exists());
}

#[test]
fn over_tight_model_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("cstr_cascade.toml")).unwrap();
    let tight = text.replacen(
        "offsets = [0.3, 0.3, 5.0, 5.0]",
        "offsets = [0.001, 0.001, 5.0, 5.0]",
        2,
    );
    assert_ne!(tight, text);
    let model = dir.path().join("tight.toml");
    fs::write(&model, tight).unwrap();
    let o = drg(dir.path(), &["synth", "--model", &model.display().to_string()]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.contains("synthesis failed at transient tightening"), "{err}");
    assert!(err.contains("subsystem 1"), "{err}");
}

#[test]
fn verify_reports_a_corrupted_suite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    synth(out);
    let args = ["verify", "--model", &cfg("cstr_cascade.toml")];
    let o = drg(out, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let file = out.join("sets").join("subsystem_3.sets");
    let text = fs::read_to_string(&file).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // first row of the admissible set follows its header, dim and count lines
    let row = lines.iter().position(|l| l == "polytope o_eps").expect("o_eps block") + 3;
    let mut fields: Vec<String> = lines[row].split_whitespace().map(String::from).collect();
    let last = fields.last_mut().unwrap();
    *last = format!("{:e}", last.parse::<f64>().unwrap() * 1.5);
    lines[row] = fields.join(" ");
    fs::write(&file, lines.join("\n") + "\n").unwrap();

    let o = drg(out, &args);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("checksum"), "{err}");
    let o = drg(
        out,
        &[
            "run",
            "--model",
            &cfg("cstr_cascade.toml"),
            "--scenario",
            &cfg("nominal.toml"),
        ],
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn compare_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = drg(
        out,
        &[
            "compare",
            "--model",
            &cfg("cstr_cascade.toml"),
            "--scenario",
            &cfg("inadmissible.toml"),
            "--auto-synth",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert!(report.is_object());
    assert!(out.join("dct_trace.csv").exists());
    assert!(out.join("sct_trace.csv").exists());
}
