use std::path::Path;
use std::process::{Command, Output};

use smrls::formats::parse_codebook;

fn smrls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smrls"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn records(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

const SMALL: &[&str] = &["--users", "2", "--m-u", "4", "--n", "16", "--trials", "40"];

fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

#[test]
fn rate_reports_index_bits() {
    let o = smrls(&[
        "rate",
        "--m-u",
        "16",
        "--l-u",
        "2",
        "--constellation",
        "bpsk",
    ]);
    assert!(o.status.success());
    let rows = records(&stdout(&o));
    assert_eq!(&rows[0][..6], ["16", "2", "1", "6", "8", "0.5"]);
}

#[test]
fn encode_and_codebook_file_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cb = dir.path().join("cb.txt");
    let cbs = cb.to_str().unwrap();
    let args = [
        "encode",
        "--m-u",
        "5",
        "--l-u",
        "2",
        "--constellation",
        "bpsk",
        "--bits",
        "00110",
    ];
    let a = smrls(&with(&args, &["--write-codebook", cbs]));
    assert!(a.status.success());
    let text = std::fs::read_to_string(&cb).unwrap();
    assert!(text.starts_with("5 2 3\n"));
    assert_eq!(parse_codebook(&text).unwrap().len(), 8);
    let b = smrls(&with(&args, &["--codebook-file", cbs]));
    assert_eq!(stdout(&a), stdout(&b));
    // index 1 is antennas {1, 3}; bits 1 then 0 map to +1 then -1
    assert_eq!(
        stdout(&a),
        "antenna,re,im\n1,1,0\n2,0,0\n3,-1,0\n4,0,0\n5,0,0\n"
    );
    let bad = smrls(&with(&args[..8], &["--bits", "0011"]));
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic_and_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, serial: bool| {
        let out = dir.path().join(name);
        let mut args = with(
            SMALL,
            &[
                "simulate",
                "--retain-trials",
                "--out",
                out.to_str().unwrap(),
            ],
        );
        if serial {
            args.push("--serial");
        }
        let o = smrls(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a.csv", false);
    let b = run("b.csv", true);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.with_extension("json")).unwrap()).unwrap();
    let manifest = &summary["manifest"];
    assert_eq!(manifest["master_seed"], 1);
    assert_eq!(manifest["trial_seeds"].as_array().unwrap().len(), 40);
    assert_eq!(manifest["config"]["system"]["users"], 2);
    let result = &summary["result"];
    let per_trial: Vec<f64> = result["per_trial"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(
        per_trial.iter().sum::<f64>() / per_trial.len() as f64,
        result["mean"].as_f64().unwrap()
    );
}

#[test]
fn config_file_and_flags_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[system]\nusers = 2\nm_u = 4\nn = 16\n[detector]\nkind = \"box-lasso\"\nlambda = 0.2\n[experiment]\ntrials = 40\nseed = 9\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let from_file = smrls(&["--config", c, "simulate"]);
    let from_flags = smrls(&with(
        SMALL,
        &[
            "--detector",
            "box-lasso",
            "--lambda",
            "0.2",
            "--seed",
            "9",
            "simulate",
        ],
    ));
    assert!(from_file.status.success());
    assert_eq!(stdout(&from_file), stdout(&from_flags));
    let overridden = smrls(&["--config", c, "--seed", "10", "simulate"]);
    assert_ne!(stdout(&from_file), stdout(&overridden));
    std::fs::write(&cfg, "[system]\nantennas = 3\n").unwrap();
    assert_eq!(smrls(&["--config", c, "simulate"]).status.code(), Some(1));
}

#[test]
fn replica_csv_has_documented_columns() {
    let o = smrls(&["replica", "--detector", "box-lasso", "--lambda", "0.17"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("snr_db,lambda,c_star,q_star,residual,mse,error_rate,converged\n"));
    let row = &records(&text)[0];
    assert_eq!(row[7], "true");
    assert!(row[4].parse::<f64>().unwrap() <= 1e-10);
}

#[test]
fn unconverged_fixed_point_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[experiment]\nfp_max_iter = 2\n").unwrap();
    let o = smrls(&["--config", cfg.to_str().unwrap(), "replica"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!stdout(&o).is_empty());
}

#[test]
fn dictionary_single_point_matches_tune() {
    let args = [
        "--detector",
        "box-lasso",
        "--metric",
        "error-rate",
        "--snr-db",
        "9",
    ];
    let tuned = smrls(&with(&args, &["tune"]));
    let dict = smrls(&with(&args, &["--snr-grid", "9", "dict"]));
    assert!(tuned.status.success() && dict.status.success());
    assert_eq!(
        records(&stdout(&tuned))[0][1..],
        records(&stdout(&dict))[0][1..]
    );
}

#[test]
fn dictionary_error_falls_with_snr() {
    let o = smrls(&[
        "--detector",
        "box-lasso",
        "--metric",
        "error-rate",
        "--snr-grid",
        "5,13",
        "dict",
    ]);
    assert!(o.status.success());
    let rows = records(&stdout(&o));
    let err = |r: &Vec<String>| r[6].parse::<f64>().unwrap();
    assert!(err(&rows[1]) < err(&rows[0]));
}

#[test]
fn compare_rejects_empty_grid_and_reports_deviation() {
    let bad = smrls(&with(SMALL, &["--lambda-grid", "", "compare"]));
    assert_eq!(bad.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp.csv");
    let o = smrls(&with(
        SMALL,
        &[
            "--detector",
            "box-lasso",
            "--lambda-grid",
            "0.2,0.4",
            "--out",
            out.to_str().unwrap(),
            "compare",
        ],
    ));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(Path::new(&out.with_extension("json")).exists());
}

#[test]
fn fig_prior_tracks_reference() {
    let o = smrls(&["fig-prior", "--draws", "20000"]);
    assert!(o.status.success());
    for r in records(&stdout(&o)) {
        let (emp, reference, exact): (f64, f64, f64) = (
            r[1].parse().unwrap(),
            r[2].parse().unwrap(),
            r[3].parse().unwrap(),
        );
        assert_eq!(reference, exact);
        assert!((emp - reference).abs() < 0.02);
    }
}

#[test]
fn fig_map_bound_is_monotone_and_ordered() {
    let o = smrls(&["--snr-grid", "5,9,13", "fig-map-bound"]);
    assert!(o.status.success());
    let rows = records(&stdout(&o));
    assert_eq!(rows.len(), 9);
    let curve = |name: &str| -> Vec<f64> {
        rows.iter()
            .filter(|r| r[1] == name)
            .map(|r| r[2].parse().unwrap())
            .collect()
    };
    let (ssk, bpsk, qam) = (curve("ssk"), curve("bpsk"), curve("qam4"));
    for c in [&ssk, &bpsk, &qam] {
        assert!(c.windows(2).all(|w| w[1] <= w[0]));
    }
    for k in 0..3 {
        assert!(ssk[k] <= bpsk[k] && bpsk[k] <= qam[k]);
    }
}

#[test]
fn invalid_detector_setup_exits_with_one() {
    let o = smrls(&[
        "--detector",
        "box-lasso",
        "--upper",
        "0.5",
        "simulate",
        "--trials",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let unknown = smrls(&["no-such-command"]);
    assert_eq!(unknown.status.code(), Some(1));
}
