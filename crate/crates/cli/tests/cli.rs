use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use artps_core::synth::SceneSpec;
use artps_core::RunReport;

fn artps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_artps")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, spec: &SceneSpec) -> std::path::PathBuf {
    let spec_path = dir.join(format!("spec_{}.json", spec.seed));
    std::fs::write(&spec_path, serde_json::to_string(spec).unwrap()).unwrap();
    let out = dir.join(format!("scene_{}", spec.seed));
    let o = artps(&["synth", "--spec", p(&spec_path), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn read_report(dir: &Path) -> RunReport {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn synth_run_eval_train_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let mut manifest = Vec::new();
    for seed in [3, 4, 5] {
        let scene = synth(tmp.path(), &SceneSpec::standard(seed, 192, 160));
        for f in ["image.png", "depth.ard1", "depth_truth.ard1", "anomaly_mask.png", "truth.json"] {
            assert!(scene.join(f).exists(), "{f}");
        }
        let run = tmp.path().join(format!("runs/r{seed}"));
        let o = artps(&[
            "run",
            "--image",
            p(&scene.join("image.png")),
            "--depth",
            p(&scene.join("depth.ard1")),
            "--out",
            p(&run),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["report.json", "fused.png", "mask.png", "overlay.png", "overlay.json", "depth.ard1"] {
            assert!(run.join(f).exists(), "{f}");
        }
        assert!(!read_report(&run).regions.is_empty());
        manifest.push(serde_json::json!({"run": format!("r{seed}"), "truth": format!("scene_{seed}/truth.json")}));
    }
    let manifest_path = tmp.path().join("manifest.json");
    std::fs::write(&manifest_path, serde_json::json!({ "frames": manifest }).to_string()).unwrap();
    let export = tmp.path().join("training");
    let o = artps(&[
        "eval",
        "--reports",
        p(&tmp.path().join("runs")),
        "--truth",
        p(&manifest_path),
        "--export",
        p(&export),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(metrics["frames"].as_array().unwrap().len(), 3);
    assert!(metrics["mean"]["pixel_auroc"].as_f64().unwrap() > 0.8);
    assert!(metrics["mean"]["depth_rae"].as_f64().is_some());

    let model = tmp.path().join("model.json");
    let o = artps(&[
        "train",
        "--features",
        p(&export.join("features.json")),
        "--labels",
        p(&export.join("labels.json")),
        "--sweep",
        "0.001:10:5",
        "--out",
        p(&model),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let outcome: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let norms: Vec<f64> = outcome["sweep"]["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|pt| pt["alpha_norm"].as_f64().unwrap())
        .collect();
    assert_eq!(norms.len(), 5);
    assert!(norms.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{norms:?}");

    let scene = tmp.path().join("scene_3");
    let run = tmp.path().join("with_model");
    let o = artps(&["run", "--image", p(&scene.join("image.png")), "--model", p(&model), "--out", p(&run)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_depth_is_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = synth(tmp.path(), &SceneSpec::standard(8, 128, 128));
    let run = tmp.path().join("run");
    let o = artps(&["run", "--image", p(&scene.join("image.png")), "--out", p(&run)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_report(&run);
    assert!(r.depth.fallback && !r.depth.present);
    assert!(r.components.iter().all(|c| !c.name.to_string().starts_with("depth")));
    assert!(r.warnings.iter().any(|w| w.contains("depth")));
}

#[test]
fn invalid_config_fails_with_schema_message() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = synth(tmp.path(), &SceneSpec::standard(9, 64, 64));
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"fusion": {"hysteresis": {"tau_low": 0.9, "tau_high": 0.2}}}"#).unwrap();
    let o = artps(&["run", "--config", p(&cfg), "--image", p(&scene.join("image.png")), "--out", p(&tmp.path().join("o"))]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("schema"), "{err}");
    std::fs::write(&cfg, r#"{"fusion": {"tau": 0.5}}"#).unwrap();
    let o = artps(&["run", "--config", p(&cfg), "--image", p(&scene.join("image.png")), "--out", p(&tmp.path().join("o"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));
}

#[test]
fn train_rejects_empty_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let f = tmp.path().join("f.json");
    let l = tmp.path().join("l.json");
    std::fs::write(&f, "[]").unwrap();
    std::fs::write(&l, "[]").unwrap();
    let o = artps(&["train", "--features", p(&f), "--labels", p(&l), "--out", p(&tmp.path().join("m.json"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
}

#[test]
fn schema_is_printed() {
    let o = artps(&["schema"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["properties"]["fusion"].is_object());
}

#[test]
fn serve_reports_readiness_and_rejects_busy_port() {
    let tmp = tempfile::tempdir().unwrap();
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let busy = held.local_addr().unwrap().to_string();
    let o = artps(&["serve", "--addr", &busy, "--store", p(&tmp.path().join("s"))]);
    assert!(!o.status.success());

    let mut child = Command::new(env!("CARGO_BIN_EXE_artps"))
        .args(["serve", "--addr", "127.0.0.1:0", "--store", p(&tmp.path().join("s"))])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().rsplit("http://").next().unwrap().to_string();
    let health = http_get(&addr, "/api/health");
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(line.contains("listening"), "{line}");
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains("\"status\":\"ok\""), "{health}");
}

fn http_get(addr: &str, path: &str) -> String {
    use std::io::{Read, Write};
    let mut s = std::net::TcpStream::connect(addr).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}
