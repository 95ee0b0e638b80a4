use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn brinkman(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brinkman"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn predict_with_published_h_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let o = brinkman(
        dir.path(),
        &[
            "predict",
            "--model",
            "h",
            "--coefficients",
            "31.32,7635,-8.039e4",
            "--parameter",
            "1/100",
            "--q",
            "-6",
            "--out",
            "p",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    // 1e6 * (31.32e4 + 7635e2 - 8.039e4)
    assert!(
        stdout(&o).contains("alpha_max = 9.963100e11"),
        "{}",
        stdout(&o)
    );
    let csv = fs::read_to_string(dir.path().join("p/prediction.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn manifest_repeats_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "predict",
        "--model",
        "mu",
        "--coefficients",
        "2e5,1e4",
        "--parameter",
        "2",
        "--q",
        "-4,-8",
        "--out",
        "p",
    ];
    assert!(brinkman(dir.path(), &args).status.success());
    let first = fs::read(dir.path().join("p/prediction.csv")).unwrap();
    let manifest = fs::read_to_string(dir.path().join("p/manifest.toml")).unwrap();
    assert!(manifest.contains("# output: prediction.csv"));
    fs::rename(
        dir.path().join("p/manifest.toml"),
        dir.path().join("again.toml"),
    )
    .unwrap();
    fs::remove_dir_all(dir.path().join("p")).unwrap();

    let o = brinkman(dir.path(), &["--config", "again.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.path().join("p/prediction.csv")).unwrap(),
        first
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("p/manifest.toml")).unwrap(),
        manifest
    );
}

#[test]
fn config_errors_exit_before_solving() {
    let dir = tempfile::tempdir().unwrap();
    let o = brinkman(dir.path(), &["solve", "--h", "0.013"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("error[config]") && stderr(&o).contains("0.013"),
        "{}",
        stderr(&o)
    );
    assert!(!dir.path().join("out").exists());

    fs::write(dir.path().join("c.toml"), "[flow]\nviscosity = 2\n").unwrap();
    let o = brinkman(dir.path(), &["solve", "--config", "c.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("flow.viscosity"), "{}", stderr(&o));

    let o = brinkman(dir.path(), &["fit", "--table", "missing.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.csv"), "{}", stderr(&o));

    let o = brinkman(dir.path(), &["--config", "missing.toml"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("error[io]"), "{}", stderr(&o));
}

#[test]
fn solve_and_reference_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = brinkman(
        dir.path(),
        &["solve", "--h", "0.05", "--alpha-max", "1e8", "--out", "s"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("max |v_solid|"));
    let v = fs::read_to_string(dir.path().join("s/velocity.txt")).unwrap();
    // 81 x 41 velocity nodes plus the header
    assert_eq!(v.lines().count(), 81 * 41 + 1);
    assert!(dir.path().join("s/pressure.txt").is_file());
    let report = fs::read_to_string(dir.path().join("s/report.toml")).unwrap();
    assert!(report.contains("converged = true"));

    let o = brinkman(dir.path(), &["reference", "--h", "0.05", "--out", "r"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = fs::read_to_string(dir.path().join("r/velocity.txt")).unwrap();
    assert!(v.lines().count() < 81 * 41 + 1);
}

#[test]
fn sweep_fit_validate_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = brinkman(
        d,
        &[
            "sweep",
            "--param",
            "mu",
            "--values",
            "0.5,2.5,5",
            "--alpha-max-grid",
            "0,1e6..1e10",
            "--h",
            "0.05",
            "--workers",
            "2",
            "--out",
            "sw",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read(d.join("sw/sweep.csv")).unwrap();
    // header plus 3 values x 6 alphas
    assert_eq!(String::from_utf8_lossy(&table).lines().count(), 19);
    assert!(d.join("sw/metrics_02.csv").is_file());
    assert!(fs::read_to_string(d.join("sw/analysis.toml"))
        .unwrap()
        .contains("linear_region"));

    let o = brinkman(d, &["fit", "--table", "sw/sweep.csv", "--out", "fit"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mu_model"));
    let model = fs::read_to_string(d.join("fit/model.toml")).unwrap();
    assert!(model.contains("kind = \"mu_model\""));

    let o = brinkman(
        d,
        &[
            "validate",
            "--table",
            "sw/sweep.csv",
            "--model-file",
            "fit/model.toml",
            "--out",
            "val",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let val = fs::read_to_string(d.join("val/validation.csv")).unwrap();
    assert!(val.starts_with("param_value,q,alpha_data,alpha_model,rel_error"));

    for kind in ["loglog_sweep", "fit_check", "error_bars"] {
        let o = brinkman(
            d,
            &[
                "plot",
                "--plot-kind",
                kind,
                "--table",
                "sw/sweep.csv",
                "--model-file",
                "fit/model.toml",
                "--q",
                "-4,-6",
                "--out",
                "pl",
            ],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let svg = fs::read_to_string(d.join(format!("pl/{kind}.svg"))).unwrap();
        assert!(
            svg.contains("<svg")
                && svg.contains("<metadata>")
                && svg.trim_end().ends_with("</svg>")
        );
    }
    // alpha_max = 0 cannot sit on a log axis
    let svg = fs::read_to_string(d.join("pl/loglog_sweep.svg")).unwrap();
    assert!(svg.contains("skipped 1 non-positive"));

    // same config, same bytes
    fs::rename(d.join("sw/manifest.toml"), d.join("sweep.toml")).unwrap();
    let o = brinkman(d, &["--config", "sweep.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(d.join("sw/sweep.csv")).unwrap(), table);
}
