#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use triplet_meta::pipeline::RunConfig;
use triplet_meta::synthetic::{planted_groups, Planted, PlantedSpec};

/// Minimal HTTP/1.1 server answering every request with the next scripted
/// `(status, body)`; the last entry repeats once the script runs out.
pub struct MockServer {
    pub url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<String>>>,
}

impl MockServer {
    pub fn start(script: Vec<(u16, String)>) -> Self {
        assert!(!script.is_empty());
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let (h, b) = (hits.clone(), bodies.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0; len];
                if reader.read_exact(&mut body).is_err() {
                    continue;
                }
                b.lock().unwrap().push(String::from_utf8_lossy(&body).into_owned());
                let n = h.fetch_add(1, Ordering::SeqCst);
                let (status, reply) = &script[n.min(script.len() - 1)];
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                    reply.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        MockServer { url, hits, bodies }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn bodies(&self) -> Vec<String> {
        self.bodies.lock().unwrap().clone()
    }
}

/// Chat-completion envelope around an answer object.
pub fn chat_reply(content: &str) -> String {
    serde_json::json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

/// Writes the default planted dataset and returns it with its path.
pub fn write_planted(dir: &Path, spec: &PlantedSpec) -> (Planted, PathBuf) {
    let p = planted_groups(spec).unwrap();
    let path = dir.join("studies.json");
    std::fs::write(&path, p.dataset.to_canonical_json()).unwrap();
    (p, path)
}

/// Gower-oracle config over the planted data, writing to `dir/out`.
pub fn planted_config(dir: &Path) -> RunConfig {
    let (_, path) = write_planted(dir, &PlantedSpec::default());
    let mut cfg = RunConfig::new(path, dir.join("out"));
    cfg.oracle.cache_dir = dir.join("cache");
    cfg
}
