use std::path::Path;
use std::process::{Command, Output};

fn pao(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pao-reid"))
        .args(args)
        .output()
        .expect("spawn pao-reid")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_confusable(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    let config = dir.join("synth.json");
    std::fs::write(
        &config,
        r#"{"seed": 7, "num_identities": 80, "images_per_identity": 4, "dim": 64, "camera_count": 6,
            "train_fraction": 0.5, "centroid_scale": 1.0, "signal_amplitude": 1.5,
            "feature_noise_sigma": 0.6, "attr_flip_rate": 0.0, "attr_prob_jitter": 0.1,
            "default_positive_rate": 0.3}"#,
    )
    .unwrap();
    let out = pao(&[
        "gen-synth",
        "--config",
        s(&config),
        "--confusable",
        "down black",
        "--out",
        s(&data),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data.join("manifest.json")
}

fn map_of(report: &Path) -> f64 {
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    v["report"]["map_score"].as_f64().unwrap()
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = pao(&["pipeline", "--seed", "3", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "data/manifest.json",
        "model.json",
        "thresholds.json",
        "rankings.json",
        "report.json",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("mAP"));
}

#[test]
fn sequential_and_parallel_reports_match() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&pao(&["pipeline", "--no-model", "--out", s(a.path())])),
        0
    );
    assert_eq!(
        code(&pao(&[
            "--sequential",
            "pipeline",
            "--no-model",
            "--out",
            s(b.path())
        ])),
        0
    );
    let read = |d: &Path| std::fs::read(d.join("report.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn staged_query_filter_beats_plain_knn() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_confusable(dir.path());
    let thresholds = dir.path().join("thresholds.json");
    let out = pao(&[
        "calibrate",
        "--dataset",
        s(&manifest),
        "--out",
        s(&thresholds),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let mut maps = Vec::new();
    for filter in ["none", "attr:down black"] {
        let rankings = dir.path().join("rankings.json");
        let report = dir.path().join("report.json");
        let q = pao(&[
            "query",
            "--dataset",
            s(&manifest),
            "--thresholds",
            s(&thresholds),
            "--filter",
            filter,
            "--out",
            s(&rankings),
        ]);
        assert_eq!(code(&q), 0, "{}", String::from_utf8_lossy(&q.stderr));
        let e = pao(&[
            "evaluate",
            "--dataset",
            s(&manifest),
            "--rankings",
            s(&rankings),
            "--thresholds",
            s(&thresholds),
            "--out",
            s(&report),
        ]);
        assert_eq!(code(&e), 0, "{}", String::from_utf8_lossy(&e.stderr));
        maps.push(map_of(&report));
    }
    assert!(
        maps[1] > maps[0],
        "filtered {} vs plain {}",
        maps[1],
        maps[0]
    );
}

#[test]
fn train_then_query_with_model() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_confusable(dir.path());
    let model = dir.path().join("model.json");
    let thresholds = dir.path().join("thresholds.json");
    let rankings = dir.path().join("rankings.json");
    let steps: [Vec<&str>; 3] = [
        vec![
            "train-toy",
            "--dataset",
            s(&manifest),
            "--epochs",
            "5",
            "--out",
            s(&model),
        ],
        vec![
            "calibrate",
            "--dataset",
            s(&manifest),
            "--model",
            s(&model),
            "--out",
            s(&thresholds),
        ],
        vec![
            "query",
            "--dataset",
            s(&manifest),
            "--model",
            s(&model),
            "--thresholds",
            s(&thresholds),
            "--filter",
            "region:head",
            "--order",
            "rank-first",
            "--out",
            s(&rankings),
        ],
    ];
    for args in &steps {
        let out = pao(args);
        assert_eq!(
            code(&out),
            0,
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn checksum_mismatch_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_confusable(dir.path());
    let text = std::fs::read_to_string(&manifest).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let sum = v["ontology_checksum"].as_str().unwrap();
    std::fs::write(&manifest, text.replace(sum, &"0".repeat(64))).unwrap();
    let out = pao(&[
        "calibrate",
        "--dataset",
        s(&manifest),
        "--out",
        s(&dir.path().join("t.json")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = pao(&[
        "calibrate",
        "--dataset",
        s(&dir.path().join("nope.json")),
        "--out",
        s(&dir.path().join("t.json")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn bad_arguments_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_confusable(dir.path());
    let thresholds = dir.path().join("thresholds.json");
    assert_eq!(
        code(&pao(&[
            "calibrate",
            "--dataset",
            s(&manifest),
            "--out",
            s(&thresholds)
        ])),
        0
    );
    let unknown = pao(&[
        "query",
        "--dataset",
        s(&manifest),
        "--thresholds",
        s(&thresholds),
        "--filter",
        "attr:wearing cape",
        "--out",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(code(&unknown), 1);
    assert_eq!(code(&pao(&["query", "--mask", "sometimes"])), 1);
    assert_eq!(code(&pao(&["--help"])), 0);
}
