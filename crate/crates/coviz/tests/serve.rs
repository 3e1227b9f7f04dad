mod common;

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::thread::sleep;
use std::time::{Duration, Instant};

use coviz_core::AgentProfile;

fn spawn_serve(root: &std::path::Path, port: u16) -> Child {
    Command::new(env!("CARGO_BIN_EXE_coviz"))
        .args(["serve", "--port", &port.to_string(), "--out", root.to_str().unwrap()])
        .env("RUST_LOG", "info")
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap()
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut text = String::new();
    stream.read_to_string(&mut text).ok()?;
    Some(text)
}

fn wait_for(port: u16, path: &str) -> String {
    let start = Instant::now();
    loop {
        if let Some(text) = http_get(port, path) {
            return text;
        }
        assert!(start.elapsed() < Duration::from_secs(20), "server did not come up");
        sleep(Duration::from_millis(50));
    }
}

fn wait_exit(child: &mut Child) -> std::process::ExitStatus {
    let start = Instant::now();
    loop {
        if let Some(status) = child.try_wait().unwrap() {
            return status;
        }
        if start.elapsed() > Duration::from_secs(20) {
            let _ = child.kill();
            panic!("server did not exit");
        }
        sleep(Duration::from_millis(50));
    }
}

#[test]
fn serve_lists_agents_and_exits_cleanly_on_interrupt() {
    let dir = tempfile::tempdir().unwrap();
    common::build_run(dir.path(), &[AgentProfile::Agent1]);
    let port = free_port();
    let mut child = spawn_serve(dir.path(), port);
    let response = wait_for(port, "/api/agents");
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"id\":\"agent1\""), "{response}");

    unsafe {
        libc::kill(child.id() as libc::pid_t, libc::SIGINT);
    }
    let status = wait_exit(&mut child);
    assert_eq!(status.code(), Some(0));
    let mut log = String::new();
    child.stderr.take().unwrap().read_to_string(&mut log).unwrap();
    assert!(log.contains("shutting down"), "{log}");
}

#[test]
fn serve_on_an_occupied_port_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let holder = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = holder.local_addr().unwrap().port();
    let mut child = spawn_serve(dir.path(), port);
    let status = wait_exit(&mut child);
    assert_eq!(status.code(), Some(4));
    drop(holder);
}

#[test]
fn serve_refuses_a_malformed_store() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("agents")).unwrap();
    std::fs::write(dir.path().join("agents/x.json"), "{}").unwrap();
    let mut child = spawn_serve(dir.path(), free_port());
    let status = wait_exit(&mut child);
    assert_eq!(status.code(), Some(3));
    let mut log = String::new();
    child.stderr.take().unwrap().read_to_string(&mut log).unwrap();
    assert!(log.contains("refusing to serve"), "{log}");
}
