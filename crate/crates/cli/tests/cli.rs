use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn atlasseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atlasseg"))
        .args(args)
        .env_remove("ATLASSEG_JOBS")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_all(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

/// Small phantom, preprocessed: returns `(bank, test)` directories.
fn prepared(root: &Path, seed: &str, bank_size: &str, test_size: &str) -> (PathBuf, PathBuf) {
    let ph = root.join("ph");
    ok(&atlasseg(&[
        "phantom",
        "--out",
        s(&ph),
        "--seed",
        seed,
        "--bank-size",
        bank_size,
        "--test-size",
        test_size,
        "--resolution",
        "32",
        "--deform-mag",
        "1",
    ]));
    let (bank, test) = (root.join("bank"), root.join("test"));
    ok(&atlasseg(&[
        "preprocess",
        "--input",
        s(&ph.join("bank")),
        "--out",
        s(&bank),
    ]));
    ok(&atlasseg(&[
        "preprocess",
        "--input",
        s(&ph.join("test")),
        "--out",
        s(&test),
    ]));
    (bank, test)
}

fn pipeline(root: &Path) -> Vec<u8> {
    let (bank, test) = prepared(root, "7", "5", "2");
    let seg = root.join("seg");
    ok(&atlasseg(&[
        "segment",
        "--bank",
        s(&bank),
        "--subjects",
        s(&test),
        "--out",
        s(&seg),
        "--n",
        "3",
        "--alpha",
        "0.01",
        "--jobs",
        "2",
    ]));
    let eval = root.join("eval");
    ok(&atlasseg(&[
        "evaluate",
        "--subjects",
        s(&test),
        "--predictions",
        s(&seg),
        "--out",
        s(&eval),
    ]));
    fs::read(eval.join("report.json")).unwrap()
}

#[test]
fn help_lists_module_flags() {
    let expected: &[(&str, &[&str])] = &[
        (
            "phantom",
            &["--seed", "--bank-size", "--deform-mag", "--out"],
        ),
        (
            "preprocess",
            &["--input", "--out", "--bins", "--keep-going"],
        ),
        (
            "segment",
            &[
                "--n",
                "--threshold",
                "--jobs",
                "--alpha",
                "--regularizer",
                "--levels",
                "--max-iter",
                "--tol-grad",
                "--tol-step",
                "--tol-obj",
                "--out",
            ],
        ),
        ("evaluate", &["--csf-cutoff", "--predictions", "--out"]),
        (
            "gridsearch",
            &["--n-values", "--thresholds", "--alpha", "--out"],
        ),
        (
            "compare",
            &["--truth", "--ab", "--nn", "--csf-cutoff", "--out"],
        ),
    ];
    for (cmd, flags) in expected {
        let out = atlasseg(&[cmd, "--help"]);
        ok(&out);
        let text = String::from_utf8(out.stdout).unwrap();
        for f in *flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = pipeline(a.path());
    let rb = pipeline(b.path());
    assert_eq!(ra, rb);
    assert_eq!(
        read_all(&a.path().join("seg")).len(),
        read_all(&b.path().join("seg")).len()
    );
    let report: serde_json::Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(report["records"].as_array().unwrap().len(), 2);
    assert!(report["mean_dice_full"].as_f64().unwrap() > 0.5);
    assert!(a.path().join("seg/run.json").exists());
    assert!(a.path().join("eval/report.csv").exists());
}

#[test]
fn segment_rejects_n_beyond_bank() {
    let dir = tempfile::tempdir().unwrap();
    let (bank, test) = prepared(dir.path(), "1", "3", "1");
    let out = atlasseg(&[
        "segment",
        "--bank",
        s(&bank),
        "--subjects",
        s(&test),
        "--out",
        s(&dir.path().join("seg")),
        "--n",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("n = 4 exceeds the 3 available templates"),
        "{err}"
    );
}

#[test]
fn compare_without_network_masks() {
    let dir = tempfile::tempdir().unwrap();
    let (_, test) = prepared(dir.path(), "2", "1", "2");
    // the true masks stand in for atlas predictions
    let cmp = dir.path().join("cmp");
    ok(&atlasseg(&[
        "compare",
        "--truth",
        s(&test),
        "--ab",
        s(&test),
        "--out",
        s(&cmp),
    ]));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(cmp.join("report.json")).unwrap()).unwrap();
    for row in report["rows"].as_array().unwrap() {
        assert!(row["nn"].is_null());
        assert_eq!(row["ab"]["dice_full"].as_f64(), Some(1.0));
    }
    assert!(cmp.join("report.csv").exists());
    assert!(cmp.join("run.json").exists());
}

#[test]
fn preprocess_keep_going_skips_corrupt_subject() {
    let dir = tempfile::tempdir().unwrap();
    let ph = dir.path().join("ph");
    ok(&atlasseg(&[
        "phantom",
        "--out",
        s(&ph),
        "--seed",
        "3",
        "--bank-size",
        "10",
        "--test-size",
        "0",
        "--resolution",
        "16",
    ]));
    let victim = ph.join("bank/bank_004/magnitude.f32");
    let mut bytes = fs::read(&victim).unwrap();
    bytes[5] ^= 0xff;
    fs::write(&victim, bytes).unwrap();

    let strict = dir.path().join("strict");
    let out = atlasseg(&[
        "preprocess",
        "--input",
        s(&ph.join("bank")),
        "--out",
        s(&strict),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let lenient = dir.path().join("lenient");
    let out = atlasseg(&[
        "preprocess",
        "--input",
        s(&ph.join("bank")),
        "--out",
        s(&lenient),
        "--keep-going",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let written: Vec<_> = fs::read_dir(&lenient)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(written.len(), 9);
    assert!(!lenient.join("bank_004").exists());
    let index: serde_json::Value =
        serde_json::from_slice(&fs::read(lenient.join("bank.json")).unwrap()).unwrap();
    assert_eq!(index["subjects"].as_array().unwrap().len(), 9);
}

#[test]
fn preprocess_is_idempotent_on_normalized_input() {
    let dir = tempfile::tempdir().unwrap();
    let (bank, _) = prepared(dir.path(), "4", "3", "0");
    let again = dir.path().join("again");
    ok(&atlasseg(&[
        "preprocess",
        "--input",
        s(&bank),
        "--out",
        s(&again),
    ]));
    let strip = |files: Vec<(PathBuf, Vec<u8>)>| {
        files
            .into_iter()
            .filter(|(p, _)| p != Path::new("run.json"))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(read_all(&bank)), strip(read_all(&again)));
}

#[test]
fn preprocess_reduces_gate_stacks() {
    let dir = tempfile::tempdir().unwrap();
    let ph = dir.path().join("ph");
    ok(&atlasseg(&[
        "phantom",
        "--out",
        s(&ph),
        "--seed",
        "5",
        "--bank-size",
        "2",
        "--test-size",
        "0",
        "--resolution",
        "16",
        "--emit-gates",
    ]));
    let out = dir.path().join("out");
    ok(&atlasseg(&[
        "preprocess",
        "--input",
        s(&ph.join("bank")),
        "--out",
        s(&out),
    ]));
    let f32s = |p: PathBuf| -> Vec<f32> {
        fs::read(p)
            .unwrap()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    for id in ["bank_000", "bank_001"] {
        let mean = f32s(out.join(id).join("mean_dense.f32"));
        let peak = f32s(out.join(id).join("peak_dense.f32"));
        assert_eq!(mean.len(), 256);
        assert!(mean.iter().zip(&peak).all(|(m, p)| m <= p));
    }
}

#[test]
fn config_file_is_merged_and_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"phantom": {"bank_size": 2, "test_size": 1, "resolution": 16, "seed": 9}}"#,
    )
    .unwrap();
    let ph = dir.path().join("ph");
    ok(&atlasseg(&[
        "--config",
        s(&cfg),
        "phantom",
        "--out",
        s(&ph),
        "--seed",
        "11",
    ]));
    let run: serde_json::Value =
        serde_json::from_slice(&fs::read(ph.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "phantom");
    assert_eq!(run["config"]["phantom"]["seed"], 11);
    assert_eq!(run["config"]["phantom"]["bank_size"], 2);
    assert!(run["version"].is_string());
    assert!(ph.join("bank/bank_001").exists());
    assert!(!ph.join("bank/bank_002").exists());

    fs::write(&cfg, r#"{"bogus": 1}"#).unwrap();
    let out = atlasseg(&["--config", s(&cfg), "phantom", "--out", s(&ph)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gridsearch_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (bank, _) = prepared(dir.path(), "6", "4", "0");
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&atlasseg(&[
            "gridsearch",
            "--bank",
            s(&bank),
            "--out",
            s(&out),
            "--n-values",
            "1,3",
            "--thresholds",
            "0.3,0.5",
            "--max-subjects",
            "2",
            "--alpha",
            "0.01",
        ]));
        fs::read(out.join("report.json")).unwrap()
    };
    let a = run("g1");
    assert_eq!(a, run("g2"));
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 4);
    assert_eq!(report["subjects"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_input_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = atlasseg(&[
        "evaluate",
        "--subjects",
        s(&dir.path().join("nope")),
        "--predictions",
        s(dir.path()),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
