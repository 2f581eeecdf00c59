use std::fs;
use std::process::{Command, Output};

fn mbnoma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbnoma")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_csv_files_with_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = mbnoma(&["run", "sumrate_vs_antennas", "--drops", "3", "--schemes", "proposed,oma", "--out", out, "--seed", "9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let results = fs::read_to_string(dir.path().join("sumrate_vs_antennas.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(lines.next(), Some(mbnoma::harness::RESULT_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4 * 2);
    assert!(rows.iter().all(|r| r.starts_with("sumrate_vs_antennas,")));
    assert!(dir.path().join("sumrate_vs_antennas_raw.csv").exists());
    assert!(stdout(&o).contains(&results));
}

#[test]
fn config_file_overrides_defaults_and_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(
        &cfg,
        "[drop]\nnum_users = 3\nnum_rf_chains = 2\nm_bs = 32\n\n[experiment]\ndrops = 50\ngrid = [20.0, 30.0]\nschemes = [\"oma\"]\n",
    )
    .unwrap();
    let out = dir.path().join("res");
    let o = mbnoma(&[
        "run",
        "sumrate_vs_power",
        "--config",
        cfg.to_str().unwrap(),
        "--drops",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let results = fs::read_to_string(out.join("sumrate_vs_power.csv")).unwrap();
    let rows: Vec<&str> = results.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.contains(",oma,") && r.ends_with(",2")), "{rows:?}");
}

#[test]
fn bad_input_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[drop]\nm_min = 0\n").unwrap();
    let o = mbnoma(&["run", "convergence", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("m_min"));

    fs::write(&cfg, "[drop]\nbogus = 1\n").unwrap();
    let o = mbnoma(&["run", "convergence", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = mbnoma(&["oracle", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_prints_one_line_per_gate() {
    let o = mbnoma(&["oracle", "beam_split"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("[PASS] criterion 6 beam_split:"), "{text}");
}
