use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_infergate"))
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .display()
        .to_string()
}

#[test]
fn config_error_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "confidence_threshold = banana\n").unwrap();
    let out = bin()
        .args(["serve", "--listen", "127.0.0.1:0", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = bin()
        .args([
            "serve",
            "--listen",
            "127.0.0.1:0",
            "--detector",
            "micro-cnn",
            "--model",
            "/nonexistent.model",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bind_error_exits_3() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let out = bin().args(["serve", "--listen", &addr]).output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn sigterm_stops_serve_cleanly() {
    let mut child = bin()
        .args(["serve", "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let first = lines.next().unwrap().unwrap();
    assert!(first.starts_with("listening on 127.0.0.1:"), "{first}");
    let ok = Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(ok.success());
    let deadline = Instant::now() + Duration::from_secs(10);
    let status = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(Instant::now() < deadline, "serve did not exit");
        std::thread::sleep(Duration::from_millis(20));
    };
    assert_eq!(status.code(), Some(0));
    let last = lines.next().unwrap().unwrap();
    assert_eq!(
        last,
        "stats frames_in=0 inferred=0 dropped=0 mean_latency_us=- p99_latency_us=-"
    );
}

#[test]
fn init_quantize_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.model");
    let q = dir.path().join("q.model");
    assert!(bin()
        .arg("init-model")
        .arg(&m)
        .args(["--seed", "3"])
        .output()
        .unwrap()
        .status
        .success());
    let out = bin().arg("quantize").arg(&m).arg(&q).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let ratio: f64 = text.trim().rsplit('=').next().unwrap().parse().unwrap();
    assert!((3.9..=4.0).contains(&ratio), "{text}");
    let model = infergate::detector::load_model(&q).unwrap();
    use infergate::detector::Layer;
    for l in model.layers() {
        if let Layer::Conv { weights, .. } | Layer::Fc { weights, .. } = l {
            assert!(weights.is_quantized());
        }
    }

    let report = dir.path().join("report.txt");
    let out = bin()
        .args([
            "eval",
            "--records",
            &fixture("false_positive.records"),
            "--baseline",
            &fixture("table1.fixture"),
            "--out",
        ])
        .arg(&report)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("false_positive_pct 7.400\n"), "{text}");
    assert!(text.contains("| Proposed YOLOv3 for NAO Robot | 48.9 | 17 |\n"));
}
