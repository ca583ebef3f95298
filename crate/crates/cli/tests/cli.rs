use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kinksim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinksim"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const SMALL: &str = r#"
ions = 8
initial_site = 4
times = [0.0, 0.5, 1.0]
g_offsets_hz = [-15.0, 0.0, 15.0]

[coupling]
source = "power_law"
j0_hz = 150.0
alpha = 1.3
"#;

#[test]
fn run_writes_one_csv_per_section() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let out = kinksim(
        &["run", "custom", "--config", "small.toml", "--out", "o"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> = fs::read_dir(dir.path().join("o"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "custom_dynamics.csv",
            "custom_potential.csv",
            "custom_spin_flip.csv",
            "custom_summary.csv"
        ]
    );
    let dynamics = fs::read_to_string(dir.path().join("o/custom_dynamics.csv")).unwrap();
    assert!(dynamics.starts_with("# scenario=custom config_hash="));
    // Header plus 3 g offsets x 3 times x 7 sites.
    assert_eq!(dynamics.lines().count(), 2 + 3 * 3 * 7);
}

#[test]
fn sampled_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("backend = \"full\"\nnoise = true\nshots = 500\n{SMALL}");
    fs::write(dir.path().join("s.toml"), cfg).unwrap();
    for o in ["a", "b"] {
        let out = kinksim(
            &[
                "run", "custom", "--config", "s.toml", "--out", o, "--seed", "11", "--format",
                "both",
            ],
            dir.path(),
        );
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["custom_dynamics.csv", "custom_summary.csv", "custom.json"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "ions = 1\n").unwrap();
    let out = kinksim(&["run", "custom", "--config", "bad.toml"], dir.path());
    assert_eq!(code(&out), 2);
    fs::write(dir.path().join("typo.toml"), "ionz = 8\n").unwrap();
    assert_eq!(
        code(&kinksim(&["evolve", "--config", "typo.toml"], dir.path())),
        2
    );
    assert_eq!(
        code(&kinksim(
            &["evolve", "--config", "missing.toml"],
            dir.path()
        )),
        2
    );
}

#[test]
fn numerical_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let zeros = "n,mu_hz,g_hz\n3,0,0\n0,0,0\n0,0,0\n0,0,0\n";
    fs::write(dir.path().join("j.csv"), zeros).unwrap();
    let cfg = "ions = 3\n[coupling]\nsource = \"csv\"\npath = \"j.csv\"\n";
    fs::write(dir.path().join("z.toml"), cfg).unwrap();
    let out = kinksim(&["evolve", "--config", "z.toml", "--out", "o"], dir.path());
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unwritable_output_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    fs::write(dir.path().join("blocker"), "").unwrap();
    let out = kinksim(
        &[
            "run",
            "custom",
            "--config",
            "small.toml",
            "--out",
            "blocker/o",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn compare_writes_divergence_table() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let out = kinksim(
        &["compare", "--config", "small.toml", "--out", "o"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let tv: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("max_total_variation = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(tv < 0.1, "{tv}");
    let report = fs::read_to_string(dir.path().join("o/custom_divergence.csv")).unwrap();
    assert!(report.starts_with("g_offset_hz,mu_offset_hz,t_seconds"));
    assert_eq!(report.lines().count(), 1 + 3 * 3);

    // The same comparison from two stored tables.
    for b in ["effective", "full"] {
        let out = kinksim(
            &[
                "run",
                "custom",
                "--config",
                "small.toml",
                "--backend",
                b,
                "--format",
                "json",
                "--out",
                b,
            ],
            dir.path(),
        );
        assert_eq!(code(&out), 0);
    }
    let out = kinksim(
        &[
            "compare",
            "--effective",
            "effective/custom.json",
            "--full",
            "full/custom.json",
            "--out",
            "p",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read_to_string(dir.path().join("p/custom_divergence.csv")).unwrap(),
        report
    );
}

#[test]
fn modes_and_coupling_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out = kinksim(&["modes", "--out", "o"], dir.path());
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("min_spacing_um = 4.7"));
    let modes = fs::read_to_string(dir.path().join("o/modes.csv")).unwrap();
    assert!(modes.lines().count() > 21);
    let out = kinksim(&["coupling", "--out", "o"], dir.path());
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let jmax: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("jmax_hz = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((jmax - 184.0).abs() < 0.2);
}
