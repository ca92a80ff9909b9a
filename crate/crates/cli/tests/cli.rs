use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn dcau(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcau"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path) {
    let out = dcau(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--num-samples",
        "40",
        "--height",
        "8",
        "--width",
        "8",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("exp.toml");
    let body = format!("initial_labeled = 6\nper_cycle_k = 4\ncycles = 2\nepochs = 2\n{extra}");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn synth_run_and_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    assert!(data.join("manifest.json").is_file());
    assert_eq!(std::fs::read_dir(data.join("masks")).unwrap().count(), 40);

    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("out");
    let o = dcau(&[
        "run",
        "--dataset",
        data.to_str().unwrap(),
        "--config",
        &cfg,
        "--strategies",
        "dcau,random",
        "--upper-bound",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("cycles_dcau.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("cycle,miou,iou_class_0,"));
    let cmp: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(cmp["strategies"].as_array().unwrap().len(), 2);
    assert!(cmp["upper_bound"]["miou"].is_number());

    let sweep = tmp.path().join("sweep.json");
    let o = dcau(&[
        "sweep",
        "--dataset",
        data.to_str().unwrap(),
        "--config",
        &cfg,
        "--axis",
        "gamma",
        "--values",
        "0,0.5,1",
        "--out",
        sweep.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&sweep).unwrap()).unwrap();
    assert_eq!(rep["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let o = dcau(&[
        "sweep",
        "--dataset",
        data.to_str().unwrap(),
        "--axis",
        "epochs",
        "--values",
        "1",
        "--out",
        "x.json",
    ]);
    assert!(!o.status.success());

    let cfg = write_config(tmp.path(), "colour = 3\n");
    let o = dcau(&["run", "--dataset", data.to_str().unwrap(), "--config", &cfg, "--out", "o"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let o = dcau(&["run", "--dataset", empty.to_str().unwrap(), "--out", "o"]);
    assert!(!o.status.success());
}

#[test]
fn ignored_parameters_warn() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let cfg = write_config(tmp.path(), "strategy = \"random\"\nalpha = 0.9\n");
    let out = tmp.path().join("out");
    let o = dcau(&["run", "--dataset", data.to_str().unwrap(), "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha"));
}

#[test]
fn serve_answers_status() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let cfg = write_config(tmp.path(), "");
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_dcau"))
        .args([
            "serve",
            "--dataset",
            data.to_str().unwrap(),
            "--config",
            &cfg,
            "--state",
            tmp.path().join("state").to_str().unwrap(),
            "--port",
            &port.to_string(),
        ])
        .env("RUST_LOG", "warn")
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(30);
    let body = loop {
        if let Ok(mut s) = TcpStream::connect(("127.0.0.1", port)) {
            s.write_all(b"GET /status HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
            let mut buf = String::new();
            s.read_to_string(&mut buf).unwrap();
            break buf;
        }
        assert!(Instant::now() < deadline, "service did not start");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    let _ = child.wait();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains("\"labeled\":6"));
    assert!(tmp.path().join("state/pool.json").is_file());
}
