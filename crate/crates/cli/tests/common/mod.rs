#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use serde_json::{json, Value};

pub const BIN: &str = env!("CARGO_BIN_EXE_descrix");
pub const ADMIN: &str = "admin-token";
pub const OPERATOR: &str = "operator-token";

pub fn write_config(dir: &Path, data: &Path, sync: bool) -> PathBuf {
    let config = json!({
        "data_dir": data,
        "listen_addr": "127.0.0.1:0",
        "agents": [
            {"name": "admin", "roles": ["admin"], "token": ADMIN},
            {"name": "ann", "roles": ["operator"], "token": OPERATOR}
        ],
        "no_sync": !sync,
    });
    let path = dir.join("server.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

/// `descrix serve` as a child process.
pub struct ServerProcess {
    pub child: Child,
    pub addr: SocketAddr,
}

impl ServerProcess {
    pub fn start(config: &Path, seed: Option<u64>) -> ServerProcess {
        let mut cmd = Command::new(BIN);
        cmd.arg("serve").arg("--config").arg(config);
        if let Some(s) = seed {
            cmd.arg("--deterministic-ids").arg(s.to_string());
        }
        cmd.env("RUST_LOG", "warn").stdout(Stdio::piped()).stderr(Stdio::null());
        let mut child = cmd.spawn().expect("server starts");
        let stdout = child.stdout.take().unwrap();
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line).unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected first line `{line}`"))
            .parse()
            .unwrap();
        ServerProcess { child, addr }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// SIGKILL: no chance to flush or clean up.
    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for ServerProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", self.stdout))
    }
}

pub fn cli(server: &str, token: &str, args: &[&str]) -> Run {
    let out = Command::new(BIN)
        .args(args)
        .env("DESCRIX_SERVER", server)
        .env("DESCRIX_TOKEN", token)
        .output()
        .expect("cli runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

pub fn write_json(path: &Path, v: &Value) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::Digest;
    hex::encode(sha2::Sha256::digest(bytes))
}

pub fn approval_machine() -> Value {
    json!({"name": "Approval", "states": ["Pending", "Approved"], "initial": "Pending", "terminal": ["Approved"],
        "transitions": [{"name": "Approve", "from": "Pending", "to": "Approved", "requires_outcome": true, "role": "operator"}]})
}

pub fn grading_schema() -> Value {
    json!({"name": "Grading", "fields": [
        {"name": "grade", "kind": "string", "required": true, "constraints": {"enum": ["A", "B", "C"]}},
        {"name": "weight", "kind": "decimal", "required": false, "constraints": {"min": 0}}
    ]})
}

pub fn grading_workflow() -> Value {
    json!({"name": "Grade", "nodes": [
        {"id": "start", "type": "Start"},
        {"id": "Grade", "type": "Elementary", "schema": "Grading", "state_machine": "Approval", "role": "operator"},
        {"id": "end", "type": "End"}
    ], "edges": [{"from": "start", "to": "Grade"}, {"from": "Grade", "to": "end"}]})
}

pub fn wafer() -> Value {
    json!({"name": "Wafer", "workflow_def": "Grade",
        "property_defaults": [{"name": "Lot", "value": "unassigned", "mutable": true}],
        "collection_decls": [{"name": "dies", "member_type": "Wafer", "slot_count": 2}]})
}

/// Writes a bundle holding one state machine, one schema, one workflow and
/// one item-description.
pub fn write_bundle(dir: &Path) {
    let items = [
        ("state-machine", "Approval", approval_machine()),
        ("item-description", "Wafer", wafer()),
        ("schema", "Grading", grading_schema()),
        ("workflow-def", "Grade", grading_workflow()),
    ];
    let mut entries = Vec::new();
    for (kind, name, payload) in items {
        let file = format!("{kind}/{name}/0.json");
        let bytes = serde_json::to_vec_pretty(&payload).unwrap();
        std::fs::create_dir_all(dir.join(kind).join(name)).unwrap();
        std::fs::write(dir.join(&file), &bytes).unwrap();
        entries.push(json!({"kind": kind, "name": name, "version": 0, "file": file, "sha256": sha256_hex(&bytes)}));
    }
    write_json(&dir.join("manifest.json"), &json!({"entries": entries}));
}

/// Drops fields that legitimately differ between otherwise identical runs.
pub fn without_timestamps(v: &Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.iter()
                .filter(|(k, _)| !matches!(k.as_str(), "timestamp" | "published_at" | "prov:startTime" | "prov:endTime"))
                .map(|(k, v)| (k.clone(), without_timestamps(v)))
                .collect(),
        ),
        Value::Array(a) => Value::Array(a.iter().map(without_timestamps).collect()),
        other => other.clone(),
    }
}
