use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_spatrial");

fn run(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("SPATRIAL_OUTPUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 8 x 6 trial with 12 genotypes in 4 replicates, smooth trend plus hash noise.
fn write_trial(dir: &Path) -> PathBuf {
    let path = dir.join("trial.csv");
    let mut s = String::from("yield,geno,row,col,rep\n");
    for c in 1..=6i64 {
        for r in 1..=8i64 {
            let k = (c - 1) * 8 + (r - 1);
            let g = (k * 5 + c) % 12;
            let noise = ((k * 7919 + 13) % 101) as f64 / 50.0 - 1.0;
            let y = 10.0 + (r as f64 / 3.0).sin() * 2.0 + 0.3 * c as f64 + 0.5 * g as f64 + noise;
            let y = if k == 17 { "NA".to_string() } else { format!("{y:.4}") };
            s.push_str(&format!("{y},G{g:02},{r},{c},R{}\n", (c - 1) / 2 + 1));
        }
    }
    std::fs::write(&path, s).unwrap();
    path
}

fn fit_args<'a>(input: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "fit",
        "--input",
        input,
        "--output",
        out,
        "--response",
        "yield",
        "--genotype",
        "geno",
        "--nseg-row",
        "4",
        "--nseg-col",
        "3",
    ]
}

#[test]
fn fit_writes_bundle_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_trial(tmp.path());
    let out = tmp.path().join("out");
    let o = run(&fit_args(input.to_str().unwrap(), out.to_str().unwrap()), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "ed_table.csv",
        "variances.csv",
        "blups.csv",
        "fitted.csv",
        "trend_grid.csv",
        "summary.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(!out.join("trend.svg").exists());
    let text = stdout(&o);
    assert!(text.contains("Variance components"), "{text}");
    assert!(text.contains("Nobs"), "{text}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["n_obs"], 47);
    assert_eq!(json["n_missing"], 1);
    assert_eq!(json["converged"], true);
}

#[test]
fn svg_flag_adds_heatmaps() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_trial(tmp.path());
    let out = tmp.path().join("out");
    let mut args = fit_args(input.to_str().unwrap(), out.to_str().unwrap());
    args.push("--svg");
    let o = run(&args, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(out.join("trend.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(out.join("residuals.svg").is_file());
}

#[test]
fn missing_input_fails_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let missing = tmp.path().join("nope.csv");
    let o = run(&fit_args(missing.to_str().unwrap(), out.to_str().unwrap()), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: io:"), "{err}");
    assert!(!out.exists());
}

#[test]
fn unknown_column_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_trial(tmp.path());
    let out = tmp.path().join("out");
    let o = run(
        &[
            "fit",
            "--input",
            input.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
            "--response",
            "height",
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("height"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn bad_usage_exits_one() {
    let o = run(&["fit", "--max-iter", "many"], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: usage:"));
    let o = run(&["--help"], &[]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn unconverged_fit_exits_two_with_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_trial(tmp.path());
    let out = tmp.path().join("out");
    let mut args = fit_args(input.to_str().unwrap(), out.to_str().unwrap());
    args.extend(["--max-iter", "1"]);
    let o = run(&args, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("not converged"));
    assert!(out.join("summary.json").is_file());
}

#[test]
fn monitoring_traces_iterations() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_trial(tmp.path());
    let out = tmp.path().join("out");
    let mut args = fit_args(input.to_str().unwrap(), out.to_str().unwrap());
    args.extend(["--monitoring", "1"]);
    let o = run(&args, &[]);
    assert!(o.status.success());
    let err = stderr(&o);
    assert!(err.lines().filter(|l| l.starts_with("iter")).count() >= 2, "{err}");
}

#[test]
fn config_file_and_env_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_trial(tmp.path());
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "input = {:?}\nresponse = \"yield\"\ngenotype = \"geno\"\ngenotype_as_random = true\n\n[spatial]\nnseg_row = 4\nnseg_col = 3\n",
            input.to_str().unwrap()
        ),
    )
    .unwrap();
    let env_out = tmp.path().join("from-env");
    let o = run(
        &["fit", "--config", cfg.to_str().unwrap()],
        &[("SPATRIAL_OUTPUT_DIR", &env_out)],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(env_out.join("summary.json")).unwrap()).unwrap();
    assert!(!json["heritability"].as_array().unwrap().is_empty());
}

#[test]
fn predict_resolution_and_domain() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_trial(tmp.path());
    let out = tmp.path().join("out");
    let base = [
        "predict",
        "--input",
        input.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--response",
        "yield",
    ];
    let count = |res: &str| {
        let mut a = base.to_vec();
        a.extend(["--resolution", res]);
        let o = run(&a, &[]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read_to_string(out.join("trend_grid.csv"))
            .unwrap()
            .lines()
            .count()
            - 1
    };
    let coarse = count("8x6");
    let fine = count("16x12");
    assert_eq!(coarse, 48);
    assert_eq!(fine, 4 * coarse);

    let mut a = base.to_vec();
    a.extend(["--rows", "0:20"]);
    let o = run(&a, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn variogram_table() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_trial(tmp.path());
    let out = tmp.path().join("out");
    let o = run(
        &[
            "variogram",
            "--input",
            input.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
            "--response",
            "yield",
            "--genotype",
            "geno",
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("variogram.csv")).unwrap();
    // Displacements 0..=7 by 0..=5.
    assert_eq!(csv.lines().count() - 1, 8 * 6);
    assert!(stdout(&o).contains("d_row"));
}

#[test]
fn simulate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = |name: &str, threads: &str| {
        let out = tmp.path().join(name);
        let o = run(
            &[
                "simulate",
                "--runs",
                "3",
                "--seed",
                "7",
                "--n-rows",
                "6",
                "--n-cols",
                "8",
                "--genotypes",
                "12",
                "--replicates",
                "2",
                "--block-size",
                "4",
                "--variants",
                "spatial,row_col",
                "--threads",
                threads,
                "--output",
                out.to_str().unwrap(),
            ],
            &[],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read_to_string(out.join("simulation_runs.csv")).unwrap()
    };
    let a = sim("a", "1");
    let b = sim("b", "3");
    assert_eq!(a, b);
    assert!(a.lines().count() > 3);

    let o = run(
        &[
            "simulate",
            "--runs",
            "0",
            "--output",
            tmp.path().join("c").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(!tmp.path().join("c").exists());
}
