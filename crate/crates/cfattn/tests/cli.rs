use std::fs;
use std::path::Path;
use std::process::Command;

use cfattn::checkpoint;
use cfattn::cli::main_with_args;
use cfattn::error::exit;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cfattn"));
    c.env("RUST_LOG", "error");
    c
}

const TINY: [&str; 12] = [
    "--synth",
    "pairs=30",
    "content_vocab=6",
    "--hidden",
    "6",
    "--embedding",
    "5",
    "--steps",
    "6",
    "--batch",
    "4",
    "--seed=3",
];

fn train_tiny(dir: &Path) -> std::path::PathBuf {
    let out = dir.to_str().unwrap();
    let mut args = vec!["cfattn", "train", "--out-dir", out];
    args.extend(TINY);
    assert_eq!(main_with_args(args), exit::OK);
    dir.join("model.ckpt")
}

#[test]
fn usage_errors_exit_2() {
    let status = bin().args(["train", "--steps", "0"]).status().unwrap();
    assert_eq!(status.code(), Some(exit::USAGE));
    let output = bin().args(["train", "--set", "stepz=3"]).output().unwrap();
    assert_eq!(output.status.code(), Some(exit::USAGE));
    assert!(String::from_utf8_lossy(&output.stderr).contains("stepz"));
    let status = bin().args(["frobnicate"]).status().unwrap();
    assert_eq!(status.code(), Some(exit::USAGE));
}

#[test]
fn train_translate_analyze_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(dir.path());
    for f in ["model.ckpt", "curve.tsv", "train_summary.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let loaded = checkpoint::load(&ckpt).unwrap();
    let hash = loaded.header.config_hash.clone();
    let curve = fs::read_to_string(dir.path().join("curve.tsv")).unwrap();
    assert!(curve.contains(&hash));

    let src = dir.path().join("in.src");
    fs::write(&src, "x001 x002 ▸\nx003 x000 x004 ▸\n").unwrap();
    let out = bin()
        .args(["translate", ckpt.to_str().unwrap(), src.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);

    let analysis = dir.path().join("analysis");
    let status = bin()
        .args([
            "analyze",
            ckpt.to_str().unwrap(),
            src.to_str().unwrap(),
            "--methods",
            "uniform,zeroOutMax,randomPermute,aggregate",
            "--out-dir",
            analysis.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(analysis.join("report.txt")).unwrap();
    assert!(text.contains("Aggregate(1+2+3)"));
    assert!(!text.contains("ZeroOut "));
    let dump = fs::read_to_string(analysis.join("outcomes.tsv")).unwrap();
    assert!(dump
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("sentence\tstep\ttoken\tclass\tRandomPermute"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(analysis.join("report.json")).unwrap()).unwrap();
    assert_eq!(
        json["report"]["run"]["checkpoint_hash"],
        loaded.hash.as_str()
    );
    assert_ne!(
        json["report"]["run"]["config_hash"],
        hash.as_str(),
        "the method list is part of the analysis config"
    );

    let svg = dir.path().join("map.svg");
    for (method, step, code) in [
        ("onlyMax", "0", exit::OK),
        ("uniform", "0", exit::OK),
        ("uniform", "99", exit::USAGE),
    ] {
        let status = bin()
            .args([
                "heatmap",
                ckpt.to_str().unwrap(),
                "--sentence",
                "x001 x002 x003 x004 ▸",
                "--step",
                step,
                "--method",
                method,
                "--out",
                svg.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(code), "{method} {step}");
    }
}

#[test]
fn analyze_refuses_model_overrides_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(dir.path());
    let out = dir.path().join("a");
    let base = [
        "cfattn",
        "analyze",
        ckpt.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ];
    let mut changed = base.to_vec();
    changed.extend(["--hidden", "9"]);
    assert_eq!(main_with_args(changed.clone()), exit::USAGE);
    changed.push("--force");
    assert_eq!(main_with_args(changed), exit::OK);
    let mut methods_only = base.to_vec();
    methods_only.extend(["--methods", "all", "--min-frequency", "3"]);
    assert_eq!(main_with_args(methods_only), exit::OK);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let rows: Vec<&str> = json["report"]["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["method"].as_str().unwrap())
        .collect();
    assert_eq!(
        rows,
        [
            "RandomPermute",
            "Uniform",
            "ZeroOutMax",
            "Aggregate",
            "ZeroOut",
            "LastEncoderState",
            "OnlyMax",
            "KeepMaxUniformOthers"
        ]
    );
    assert_eq!(json["min_frequency"], 3);
}

#[test]
fn checkpoint_version_and_corruption_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(dir.path());
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[4] = 9;
    let bad = dir.path().join("v9.ckpt");
    fs::write(&bad, &bytes).unwrap();
    let status = bin()
        .args(["analyze", bad.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(exit::FORMAT));

    let truncated = dir.path().join("short.ckpt");
    let good = fs::read(&ckpt).unwrap();
    fs::write(&truncated, &good[..good.len() - 3]).unwrap();
    let status = bin()
        .args(["translate", truncated.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(exit::FORMAT));
}

#[test]
fn synth_writes_aligned_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(
        main_with_args([
            "cfattn",
            "synth",
            "--synth",
            "pairs=12",
            "seed=4",
            "--out-dir",
            out
        ]),
        exit::OK
    );
    let src = fs::read_to_string(dir.path().join("synth.src")).unwrap();
    let tgt = fs::read_to_string(dir.path().join("synth.tgt")).unwrap();
    let labels = fs::read_to_string(dir.path().join("synth.labels")).unwrap();
    assert_eq!(src.lines().count(), 12);
    for (t, l) in tgt.lines().zip(labels.lines()) {
        assert_eq!(t.split(' ').count(), l.split(' ').count());
        assert!(t.starts_with("the "));
    }
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# desk run\nsteps = 4\nbatch = 2\nhidden = 4\nembedding = 4\n[synth]\npairs = 20\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let args = [
        "cfattn",
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--steps",
        "3",
        "--out-dir",
        out.to_str().unwrap(),
    ];
    assert_eq!(main_with_args(args), exit::OK);
    let ck = checkpoint::load(&out.join("model.ckpt")).unwrap();
    assert_eq!(ck.header.config.steps, 3);
    assert_eq!(ck.header.config.batch, 2);
    assert_eq!(ck.header.dims.hidden, 4);
}
