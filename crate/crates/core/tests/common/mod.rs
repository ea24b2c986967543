//! Shared helpers for the integration suites: a minimal canned-response
//! HTTP/1.1 server and task/database fixture builders.

#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

use sqlturn_core::sqlenv::{open_database, SqlEnv};
use sqlturn_core::taskdata::{Difficulty, SchemaCatalog, SchemaColumn, SchemaTable, TaskInstance};

/// A one-thread HTTP server that answers each incoming request with the next
/// canned `(status, body)` pair, records what it received, and closes the
/// connection. It serves exactly as many requests as it has responses.
pub struct MockServer {
    pub url: String,
    requests: Arc<Mutex<Vec<String>>>,
}

impl MockServer {
    pub fn start(responses: Vec<(u16, String)>) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&requests);
        thread::spawn(move || {
            for (status, body) in responses {
                let Ok((mut stream, _)) = listener.accept() else { return };
                let mut raw = Vec::new();
                let mut buf = [0u8; 4096];
                // Read headers, then exactly Content-Length body bytes.
                let body_len = loop {
                    match stream.read(&mut buf) {
                        Ok(0) => break 0,
                        Ok(n) => {
                            raw.extend_from_slice(&buf[..n]);
                            if let Some(pos) = find_header_end(&raw) {
                                let headers = String::from_utf8_lossy(&raw[..pos]).to_string();
                                let want = content_length(&headers);
                                let have = raw.len() - (pos + 4);
                                if have >= want {
                                    break want;
                                }
                                // keep reading until the body is complete
                                while raw.len() - (pos + 4) < want {
                                    match stream.read(&mut buf) {
                                        Ok(0) => break,
                                        Ok(n) => raw.extend_from_slice(&buf[..n]),
                                        Err(_) => break,
                                    }
                                }
                                break want;
                            }
                        }
                        Err(_) => break 0,
                    }
                };
                let _ = body_len;
                seen.lock().unwrap().push(String::from_utf8_lossy(&raw).to_string());
                let reason = match status {
                    200 => "OK",
                    429 => "Too Many Requests",
                    500 => "Internal Server Error",
                    _ => "Status",
                };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len(),
                );
                let _ = stream.write_all(response.as_bytes());
                let _ = stream.flush();
            }
        });
        MockServer { url, requests }
    }

    /// Raw request texts received so far (start line + headers + body).
    pub fn requests(&self) -> Vec<String> {
        self.requests.lock().unwrap().clone()
    }
}

fn find_header_end(raw: &[u8]) -> Option<usize> {
    raw.windows(4).position(|w| w == b"\r\n\r\n")
}

fn content_length(headers: &str) -> usize {
    headers
        .lines()
        .find_map(|line| {
            let (name, value) = line.split_once(':')?;
            name.eq_ignore_ascii_case("content-length").then(|| value.trim().parse().ok())?
        })
        .unwrap_or(0)
}

/// A canned chat-completions success body with the given completion text.
pub fn completion_body(text: &str) -> String {
    serde_json::json!({
        "id": "cmpl-test",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]
    })
    .to_string()
}

/// Create the three-row products database as a file and return its path.
pub fn products_db_file(dir: &Path) -> PathBuf {
    let path = dir.join("products.sqlite");
    let env = open_database(&path, false).expect("create products db");
    env.execute_batch(
        "CREATE TABLE products (id INTEGER PRIMARY KEY, name TEXT, price REAL);
         INSERT INTO products VALUES (1, 'pencil', 19.99), (2, 'notebook', 24.75), (3, 'backpack', 29.51);",
    )
    .expect("seed products db");
    path
}

/// The catalog matching [`products_db_file`].
pub fn products_catalog() -> SchemaCatalog {
    SchemaCatalog {
        tables: vec![SchemaTable {
            name: "products".into(),
            columns: vec![
                SchemaColumn { name: "id".into(), decl_type: "INTEGER".into(), is_primary_key: true },
                SchemaColumn { name: "name".into(), decl_type: "TEXT".into(), is_primary_key: false },
                SchemaColumn { name: "price".into(), decl_type: "REAL".into(), is_primary_key: false },
            ],
        }],
        foreign_keys: vec![],
    }
}

/// A task over the products database.
pub fn products_task(db_path: &Path) -> TaskInstance {
    TaskInstance {
        id: "products-avg".into(),
        question: "What is the average product price?".into(),
        database_id: "products".into(),
        db_path: db_path.to_path_buf(),
        schema: products_catalog(),
        gold_sql: "SELECT AVG(price) FROM products".into(),
        difficulty: Difficulty::Simple,
        external_knowledge: None,
        engine: "SQLite".into(),
    }
}

/// An in-memory products environment for tests that don't need a file.
pub fn products_env_memory() -> SqlEnv {
    let env = sqlturn_core::sqlenv::open_in_memory().expect("open in-memory db");
    env.execute_batch(
        "CREATE TABLE products (id INTEGER PRIMARY KEY, name TEXT, price REAL);
         INSERT INTO products VALUES (1, 'pencil', 19.99), (2, 'notebook', 24.75), (3, 'backpack', 29.51);",
    )
    .expect("seed products db");
    env
}
