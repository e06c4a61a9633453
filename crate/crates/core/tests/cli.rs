use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn etpa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etpa"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn etpa")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synth_writes_a_500_row_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = etpa(
        dir.path(),
        &["synth", "--levels", "838", "--te-fs", "63", "--lambda0-nm", "810", "--out", "trace.csv"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "tau_fs,p_norm");
    assert_eq!(lines.len(), 501);
    let values: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.iter().copied().fold(0.0, f64::max), 1.0);
    assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
    // enough digits to survive a reload bit for bit
    let interior = lines[100].split(',').nth(1).unwrap();
    let digits = interior.trim_start_matches("0.").trim_start_matches('0').len();
    assert!(digits >= 12, "{interior}");
}

#[test]
fn synth_accepts_several_levels_and_raw_units() {
    let dir = tempfile::tempdir().unwrap();
    let o = etpa(
        dir.path(),
        &["synth", "--levels", "836,839,844", "--samples", "64", "--raw"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("tau_fs,p\n"));
    assert_eq!(text.lines().count(), 65);
}

#[test]
fn misaligned_grid_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = etpa(
        dir.path(),
        &["gen-data", "--step", "0.3", "--band-low", "835", "--band-high", "845", "--out", "d.csv"],
    );
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("--step"), "{err}");
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(!dir.path().join("d.csv").exists());
}

#[test]
fn unknown_flag_and_bad_values_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&etpa(dir.path(), &["gen-data", "--bogus", "1"])), 1);
    assert_eq!(code(&etpa(dir.path(), &["gen-data", "--per-class", "many"])), 1);
    assert_eq!(code(&etpa(dir.path(), &["frobnicate"])), 1);
    let o = etpa(dir.path(), &["synth", "--levels", "838", "--te-fs", "-3"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--te-fs"));
    let o = etpa(dir.path(), &["table", "--replicates", "1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--replicates"));
    let o = etpa(dir.path(), &["train", "--data", "d.csv", "--out", "m.txt", "--init", "zeros"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--init"));
}

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let v = etpa(dir.path(), &["--version"]);
    assert_eq!(code(&v), 0);
    assert!(String::from_utf8_lossy(&v.stdout).starts_with("etpa "));
    let h = etpa(dir.path(), &["--help"]);
    assert_eq!(code(&h), 0);
    let help = String::from_utf8_lossy(&h.stdout);
    for sub in ["synth", "gen-data", "train", "eval", "table", "check"] {
        assert!(help.contains(sub), "{sub} missing from help");
    }
    assert_eq!(code(&etpa(dir.path(), &["table", "--help"])), 0);
}

#[test]
fn missing_input_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = etpa(dir.path(), &["eval", "--model", "nope.txt", "--data", "nope.csv"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn generate_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = etpa(p, &["gen-data", "--per-class", "40", "--samples", "100", "--seed", "5", "--out", "d.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(p.join("d.csv")).unwrap().lines().count(), 161);
    assert!(p.join("d.meta.toml").exists());

    let o = etpa(p, &["train", "--data", "d.csv", "--out", "m.txt", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(fs::read_to_string(p.join("m.txt")).unwrap().starts_with("etpa-mlp v1\n"));

    let o = etpa(p, &["eval", "--model", "m.txt", "--data", "d.csv", "--subset", "test"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.starts_with("test: "), "{out}");
    assert!(out.contains("true\\pred"));

    let o = etpa(p, &["eval", "--model", "m.txt", "--data", "d.csv", "--subset", "everything"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn eval_rejects_dataset_of_other_width() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&etpa(p, &["gen-data", "--per-class", "10", "--samples", "30", "--out", "a.csv"])), 0);
    assert_eq!(code(&etpa(p, &["gen-data", "--per-class", "10", "--samples", "40", "--out", "b.csv"])), 0);
    assert_eq!(code(&etpa(p, &["train", "--data", "a.csv", "--out", "m.txt"])), 0);
    let o = etpa(p, &["eval", "--model", "m.txt", "--data", "b.csv"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--data"));
}

#[test]
fn repeated_generation_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for name in ["a.csv", "b.csv"] {
        let o = etpa(p, &["gen-data", "--per-class", "12", "--samples", "50", "--seed", "9", "--out", name]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(fs::read(p.join("a.csv")).unwrap(), fs::read(p.join("b.csv")).unwrap());
    assert_eq!(
        fs::read(p.join("a.meta.toml")).unwrap(),
        fs::read(p.join("b.meta.toml")).unwrap()
    );
    let o = etpa(p, &["gen-data", "--per-class", "12", "--samples", "50", "--seed", "10", "--out", "c.csv"]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(p.join("a.csv")).unwrap(), fs::read(p.join("c.csv")).unwrap());
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("cfg.toml"),
        "seed = 4\n[gen-data]\nper-class = 7\nsamples = 20\nout = \"from_file.csv\"\n",
    )
    .unwrap();
    let o = etpa(p, &["--config", "cfg.toml", "gen-data"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(p.join("from_file.csv")).unwrap().lines().count(), 29);
    let meta = fs::read_to_string(p.join("from_file.meta.toml")).unwrap();
    assert!(meta.contains("seed = 4"), "{meta}");

    let o = etpa(p, &["--config", "cfg.toml", "gen-data", "--per-class", "9", "--out", "flag.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(p.join("flag.csv")).unwrap().lines().count(), 37);

    fs::write(p.join("bad.toml"), "[gen-data]\nper-klass = 7\n").unwrap();
    let o = etpa(p, &["--config", "bad.toml", "gen-data", "--out", "x.csv"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--config"));
}

#[test]
fn table_writes_twelve_rows_per_entanglement_time() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = etpa(
        p,
        &[
            "table", "--te-fs", "63", "--replicates", "2", "--per-class", "8", "--samples", "20",
            "--max-epochs", "5", "--dump-replicates", "reps.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(p.join("table.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "band_low,band_high,step_nm,te_fs,mean_pct,std_pct,n_replicates");
    assert_eq!(lines.len(), 13);
    assert!(lines[1].starts_with("835,845,1,63,"));
    assert!(lines[12].starts_with("820,860,0.1,63,"));
    assert!(lines[1..].iter().all(|l| l.ends_with(",2")));
    let reps = fs::read_to_string(p.join("reps.csv")).unwrap();
    assert_eq!(reps.lines().count(), 1 + 12 * 2);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().count(), 13);
}

#[test]
fn check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = etpa(dir.path(), &["check", "--systems", "3", "--points", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 2, "{out}");
}

#[test]
fn negative_delay_bounds_are_values_not_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = etpa(
        dir.path(),
        &["synth", "--levels", "838", "--tau-start-fs", "-50", "--tau-end-fs", "50", "--samples", "3"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("-50,"), "{text}");
}
