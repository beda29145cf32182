use std::path::Path;
use std::process::Command;

const TINY: &str = r#"
schema_version = 1
name = "tiny"
scenario = "A"
resolutions = [1, 2]
central_resolution = 1
neuron = "standard-ssm"
method = "FedTA-Int"
seeds = [1, 2]
rounds = 1

[model]
width = 4
hidden_layers = 1
state_dim = 2

[training]
epochs = 1
batch_size = 8
lr = 0.01
lr_dynamics = 0.001
weight_decay = 0.0
weight_decay_dynamics = 0.0

[data]
source = "synthetic"
classes = 2
channels = 4
duration = 0.1
base_window = 0.01
train_per_class = 4
test_per_class = 2

[data.profile]
segments = 2
band_width = 2
active_rate = 60.0
baseline_rate = 5.0
"#;

fn fedta(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fedta"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let out = fedta(&["run", &cfg, "--out", "r1", "--threads", "1"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "config.toml",
        "rounds.jsonl",
        "summary.csv",
        "accuracy_by_round.csv",
        "accuracy_by_energy.csv",
        "timing.json",
    ] {
        assert!(dir.path().join("r1").join(f).exists(), "{f} missing");
    }
    let lines = std::fs::read_to_string(dir.path().join("r1/rounds.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 4, "two seeds, rounds 0 and 1");
}

#[test]
fn default_output_goes_under_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let out = fedta(&["run", &cfg, "--seed-override", "7"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = std::fs::read_to_string(dir.path().join("runs/tiny/rounds.jsonl")).unwrap();
    assert!(lines.lines().all(|l| l.contains("\"seed\":7")));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_field = write(
        dir.path(),
        "a.toml",
        &TINY.replace("rounds = 1", "rounds = 1\nbogus = 3"),
    );
    let incompatible = write(dir.path(), "b.toml", &TINY.replace("FedTA-Int", "FedTA-Δ"));
    let no_seeds = write(dir.path(), "c.toml", &TINY.replace("seeds = [1, 2]", "seeds = []"));
    for cfg in [bad_field, incompatible, no_seeds, "missing.toml".into()] {
        let out = fedta(&["run", &cfg, "--out", "x"], dir.path());
        assert_eq!(
            out.status.code(),
            Some(2),
            "{cfg}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn runtime_errors_exit_with_3_and_leave_a_marker() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TINY.replace(
        "[data]\nsource = \"synthetic\"\nclasses = 2\nchannels = 4\nduration = 0.1\nbase_window = 0.01\ntrain_per_class = 4\ntest_per_class = 2\n\n[data.profile]\nsegments = 2\nband_width = 2\nactive_rate = 60.0\nbaseline_rate = 5.0\n",
        "[data]\nsource = \"frames\"\ntrain_path = \"nope.bin\"\ntest_path = \"nope.bin\"\n",
    );
    let cfg = write(dir.path(), "frames.toml", &cfg);
    let out = fedta(&["run", &cfg, "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("r/FAILED").exists());
}

#[test]
fn compare_renders_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    assert!(fedta(&["run", &cfg, "--out", "a"], dir.path()).status.success());
    let out = fedta(&["compare", "a", "--out", "table.md"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("table.md")).unwrap();
    assert!(table.contains("FedTA-Int"), "{table}");
    assert!(table.contains("**"), "single value is its row maximum: {table}");

    let missing = fedta(&["compare", "nowhere"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = fedta_core::experiment::ExperimentConfig::load(&path).unwrap();
            cfg.validate().unwrap();
            n += 1;
        }
    }
    assert!(n >= 2, "only {n} configs found");
}
