use std::fs;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn ca3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ca3d")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn corpus_args(out: &std::path::Path) -> Vec<String> {
    vec![
        "--corpus".into(),
        fixtures().join("separated12").display().to_string(),
        "--format".into(),
        "plaintext".into(),
        "--labels".into(),
        fixtures().join("separated12.labels.tsv").display().to_string(),
        "--output".into(),
        out.display().to_string(),
    ]
}

#[test]
fn every_verb_has_help() {
    for verb in ["ingest", "cluster", "sweep", "serve", "export-grid"] {
        let text = ok(&ca3d(&[verb, "--help"]));
        assert!(text.contains("Usage"), "{verb}: {text}");
    }
    let top = ok(&ca3d(&["--help"]));
    for verb in ["ingest", "cluster", "sweep", "serve", "export-grid"] {
        assert!(top.contains(verb));
    }
}

#[test]
fn ingest_writes_corpus_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.json");
    let sample = fixtures().join("reuters/sample.sgm");
    ok(&ca3d(&["ingest", sample.to_str().unwrap(), "-o", path.to_str().unwrap()]));
    let corpus = ca3d::ingest::Corpus::from_json(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(corpus.len(), 3);

    let two = ok(&ca3d(&["ingest", sample.to_str().unwrap(), "--n-docs", "2"]));
    assert_eq!(ca3d::ingest::Corpus::from_json(&two).unwrap().len(), 2);
}

#[test]
fn cluster_then_export() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut args = vec!["cluster".to_string(), "--level".into(), "5".into()];
    args.extend(corpus_args(&run));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let stdout = ok(&ca3d(&refs));
    assert!(stdout.starts_with(ca3d::evaluate::MetricsRow::CSV_HEADER));

    for file in ["grid.json", "metrics.csv", "assignment.json", "run.json"] {
        assert!(run.join(file).exists(), "{file} missing");
    }

    let json = ok(&ca3d(&["export-grid", run.to_str().unwrap()]));
    let state = ca3d::ca_engine::parse_grid_state(&json).unwrap();
    assert_eq!(state.n_clusters, 3);

    let csv = ok(&ca3d(&["export-grid", run.join("grid.json").to_str().unwrap(), "--format", "csv"]));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("i,j,k,state,doc_id,cluster_id"));
    assert_eq!(lines.count(), state.cells.len());
    assert_eq!(csv.matches(",active,").count(), 12);
}

#[test]
fn export_rejects_a_broken_grid() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("grid.json");
    fs::write(&bad, r#"{"side": 2, "cells": []}"#).unwrap();
    let out = ca3d(&["export-grid", bad.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn cluster_reports_the_failing_module() {
    let dir = tempfile::tempdir().unwrap();
    let out = ca3d(&["cluster", "--corpus", dir.path().join("nope").to_str().unwrap(), "--format", "plaintext"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[ingest]"));
}

#[test]
fn sweep_covers_every_distance_and_level() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("sweep");
    let mut args = vec!["sweep".to_string()];
    args.extend(corpus_args(&run));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&ca3d(&refs));
    let rows = ca3d::pipeline::read_metrics(&run.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 30);
    assert!(rows.iter().all(|r| r.time_ms > 0.0));
    assert!(run.join("sweep.json").exists());
}

fn get(addr: &str, path: &str) -> std::io::Result<String> {
    let mut s = TcpStream::connect(addr)?;
    s.set_read_timeout(Some(Duration::from_secs(5)))?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n")?;
    let mut buf = String::new();
    s.read_to_string(&mut buf)?;
    Ok(buf)
}

#[test]
fn serve_honours_bind_env() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_ca3d"))
        .args(["serve", "--state-dir", dir.path().to_str().unwrap()])
        .env("CA3D_BIND", &addr)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    let reply = loop {
        match get(&addr, "/api/state") {
            Ok(r) => break r,
            Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(50)),
            Err(e) => {
                child.kill().ok();
                panic!("server never came up: {e}");
            }
        }
    };
    let metrics = get(&addr, "/api/metrics");
    child.kill().ok();
    child.wait().ok();
    assert!(reply.starts_with("HTTP/1.1 404"), "{reply}");
    assert!(metrics.unwrap().starts_with("HTTP/1.1 200"));
}
