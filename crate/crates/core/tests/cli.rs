use std::path::Path;
use std::process::{Command, Output};

fn elevnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elevnet"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = elevnet(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(elevnet(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(elevnet(&["synthgen", "--seed", "1"]).status.code(), Some(1));
    assert_eq!(elevnet(&[]).status.code(), Some(1));
    assert_eq!(elevnet(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = elevnet(&[
        "eval",
        "--checkpoint",
        "/nonexistent.ckpt",
        "--dataset",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn end_to_end_on_the_tiny_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let gen = |seed: &str, name: &str| {
        ok(&[
            "synthgen",
            "--seed",
            seed,
            "--style",
            "hilly",
            "--frames",
            "5",
            "--out",
            s(&d(name)),
            "--image-size",
            "16",
            "--rows",
            "8",
            "--cols",
            "8",
        ])
    };
    gen("3", "train");
    gen("4", "test");
    // refuses to overwrite a dataset
    assert_eq!(
        elevnet(&[
            "synthgen",
            "--seed",
            "3",
            "--style",
            "hilly",
            "--frames",
            "2",
            "--out",
            s(&d("train"))
        ])
        .status
        .code(),
        Some(2)
    );

    ok(&[
        "init-config",
        "--preset",
        "tiny",
        "--out",
        s(&d("cfg.json")),
        "--train",
        s(&d("train")),
        "--test",
        s(&d("test")),
    ]);
    let summary: serde_json::Value = serde_json::from_str(&ok(&[
        "train",
        "--config",
        s(&d("cfg.json")),
        "--out",
        s(&d("run")),
    ]))
    .unwrap();
    assert_eq!(summary["steps"], 20);
    let ckpt = d("run").join("checkpoint.ckpt");
    assert!(ckpt.exists());

    let table = ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        s(&d("test")),
        "--config",
        s(&d("cfg.json")),
        "--views",
        "front,left",
        "--out",
        s(&d("report.json")),
    ]);
    assert!(table.contains("SDR"));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d("report.json")).unwrap()).unwrap();
    assert_eq!(report["frames"], 5);

    // a config that differs from the checkpoint's is rejected
    let mut other: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d("cfg.json")).unwrap()).unwrap();
    other["loss"]["gamma"] = serde_json::json!(0.5);
    std::fs::write(d("other.json"), other.to_string()).unwrap();
    let out = elevnet(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        s(&d("test")),
        "--config",
        s(&d("other.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));

    let gt = ok(&["eval", "--dataset", s(&d("test")), "--gt-as-prediction"]);
    assert!(gt.lines().nth(1).unwrap().contains("0.000"));

    let frame = d("test").join("frames").join("000001");
    ok(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--frame",
        s(&frame),
        "--out",
        s(&d("pred")),
    ]);
    for f in ["prediction.json", "prediction.bin", "prediction.png"] {
        assert!(d("pred").join(f).exists(), "missing {f}");
    }
    let next = d("test").join("frames").join("000002");
    ok(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--frame",
        s(&next),
        "--prev",
        s(&d("pred").join("prediction.json")),
        "--out",
        s(&d("pred2")),
    ]);

    let table = ok(&[
        "ablate",
        "--config",
        s(&d("cfg.json")),
        "--out",
        s(&d("ablate")),
        "--steps",
        "2",
    ]);
    for row in ["cpe_noha", "ope_noha", "cpe_ha", "ope_ha"] {
        assert!(table.contains(row));
        assert!(d("ablate").join(row).join("checkpoint.ckpt").exists());
    }
}
