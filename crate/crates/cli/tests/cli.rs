//! End-to-end runs of the `mobctl` binary on small scenarios.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

/// A coarse Dirichlet scenario that solves in well under a second.
const SMALL: &str = r#"
preset = "dirichlet-paper"
modes = 5
grid_steps = 100

[optimizer]
max_iters = 10

[output]
raster = 11
"#;

fn mobctl(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mobctl"));
    cmd.args(args);
    for var in [
        "MOBCTL_CONFIG",
        "MOBCTL_PRESET",
        "MOBCTL_BC",
        "MOBCTL_OUT",
        "MOBCTL_N_MODES",
        "MOBCTL_GRID_STEPS",
    ] {
        cmd.env_remove(var);
    }
    cmd.envs(envs.iter().copied());
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_small(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

fn hash_line(o: &Output) -> String {
    stdout(o).lines().next().unwrap().to_string()
}

/// Data lines of a CSV file (hash comment and header stripped).
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn validate_prints_hash_and_config() {
    let out = mobctl(&["validate"], &[]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.starts_with("# config_hash="));
    assert!(text.contains("modes = 13"));
    assert!(text.contains("boundary = \"dirichlet\""));
}

#[test]
fn negative_kernel_width_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(
        &path,
        "[[actuators]]\nposition = [0.5, 0.5]\nsigma = -0.05\n",
    )
    .unwrap();
    let out = mobctl(&["--config", path.to_str().unwrap(), "validate"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma"));
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    fs::write(&path, "mdoes = 7\n").unwrap();
    let out = mobctl(&["--config", path.to_str().unwrap(), "validate"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mdoes"));
}

#[test]
fn flags_and_environment_override_the_config() {
    let flag = mobctl(&["--bc", "neumann", "--n-modes", "7", "validate"], &[]);
    let env = mobctl(
        &["validate"],
        &[("MOBCTL_BC", "neumann"), ("MOBCTL_N_MODES", "7")],
    );
    assert!(flag.status.success() && env.status.success());
    assert_eq!(stdout(&flag), stdout(&env));
    assert!(stdout(&env).contains("boundary = \"neumann\""));
    assert_ne!(hash_line(&env), hash_line(&mobctl(&["validate"], &[])));
}

#[test]
fn bench_writes_normalized_table_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let out_dir = dir.path().join("bench");
    let out = mobctl(
        &[
            "--config",
            &cfg,
            "bench",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    let rows = csv_rows(&out_dir.join("table.csv"));
    assert_eq!(rows.len(), 5);
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        names,
        [
            "opt-feedback",
            "opt-open-loop",
            "semi-naive",
            "naive",
            "no-control"
        ]
    );
    assert_eq!(rows[4][4], "100");
    // Exit status mirrors the ordering check.
    let ordered = rows
        .windows(2)
        .all(|w| w[0][3].parse::<f64>().unwrap() < w[1][3].parse::<f64>().unwrap());
    assert_eq!(out.status.success(), ordered);

    let hash = hash_line(&mobctl(&["--config", &cfg, "validate"], &[]));
    let mut count = 0;
    for entry in fs::read_dir(&out_dir).unwrap() {
        let path = entry.unwrap().path();
        let first = fs::read_to_string(&path)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        assert_eq!(first, hash, "{}", path.display());
        count += 1;
    }
    // config, table, norms, 4 solution files, feedback control, metadata, 6 snapshots.
    assert_eq!(count, 15);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        mobctl(
            &["--config", &cfg, "bench", "--out", d.to_str().unwrap()],
            &[],
        );
    }
    let mut compared = 0;
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "metadata.txt" {
            continue;
        }
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
        compared += 1;
    }
    assert!(compared >= 10);
}

#[test]
fn numbers_round_trip_at_full_precision() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let out_dir = dir.path().join("solve");
    let out = mobctl(
        &[
            "--config",
            &cfg,
            "solve",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(matches!(out.status.code(), Some(0) | Some(2)));
    for name in [
        "trajectory.csv",
        "guidance.csv",
        "control.csv",
        "cost_history.csv",
    ] {
        let rows = csv_rows(&out_dir.join(name));
        assert!(!rows.is_empty(), "{name}");
        for cell in rows.iter().flatten() {
            let x: f64 = cell.parse().unwrap_or_else(|_| panic!("{name}: {cell:?}"));
            assert_eq!(format!("{x}"), *cell);
        }
    }
    // Time column of the trajectory spans the horizon on the configured grid.
    let traj = csv_rows(&out_dir.join("trajectory.csv"));
    assert_eq!(traj.len(), 101);
    assert_eq!(traj[100][0], "1");
}

#[test]
fn converge_normalizes_against_largest_size() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let out_dir = dir.path().join("conv");
    let out = mobctl(
        &[
            "--config",
            &cfg,
            "converge",
            "--min-modes",
            "3",
            "--max-modes",
            "6",
            "--polish-iters",
            "3",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = csv_rows(&out_dir.join("convergence.csv"));
    let modes: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(modes, ["3", "4", "5", "6"]);
    assert_eq!(rows.last().unwrap().last().unwrap(), "100");
}

#[test]
fn inverted_mode_range_is_an_error() {
    let out = mobctl(
        &[
            "converge",
            "--min-modes",
            "9",
            "--max-modes",
            "6",
            "--out",
            "/nonexistent",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
}
