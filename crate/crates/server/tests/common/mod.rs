#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::thread::JoinHandle;

use descrix_server::{AgentConfig, Server, ServerConfig};
use serde_json::{json, Value};
use tokio::sync::oneshot;

pub const ADMIN: &str = "admin-token";
pub const OPERATOR: &str = "operator-token";
pub const VISITOR: &str = "visitor-token";

pub fn config(dir: &Path) -> ServerConfig {
    let agent = |name: &str, roles: &[&str], token: &str| AgentConfig {
        name: name.into(),
        roles: roles.iter().map(|r| r.to_string()).collect(),
        token: token.into(),
    };
    ServerConfig {
        data_dir: dir.to_owned(),
        listen_addr: "127.0.0.1:0".parse().unwrap(),
        agents: vec![
            agent("admin", &["admin"], ADMIN),
            agent("ann", &["operator"], OPERATOR),
            agent("vic", &[], VISITOR),
        ],
        forbid_breaking_publishes: false,
        deterministic_ids: Some(3),
        no_sync: true,
    }
}

/// A server running on its own runtime thread until dropped.
pub struct TestServer {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start(config: ServerConfig) -> TestServer {
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
            rt.block_on(async move {
                let server = Server::bind(&config).await.expect("server binds");
                addr_tx.send(server.local_addr()).unwrap();
                server
                    .run(async {
                        let _ = stopped.await;
                    })
                    .await
                    .unwrap();
            });
        });
        let addr = addr_rx.recv().expect("server reports its address");
        TestServer {
            addr,
            stop: Some(stop),
            thread: Some(thread),
        }
    }

    pub fn client(&self, token: &str) -> Client {
        Client::new(&format!("http://{}", self.addr), token)
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[derive(Clone)]
pub struct Client {
    base: String,
    token: String,
    agent: ureq::Agent,
}

impl Client {
    pub fn new(base: &str, token: &str) -> Client {
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Client {
            base: format!("{base}/api/v1"),
            token: token.into(),
            agent,
        }
    }

    pub fn with_token(&self, token: &str) -> Client {
        Client {
            token: token.into(),
            ..self.clone()
        }
    }

    fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> (u16, Value) {
        let mut resp = resp.expect("request reaches the server");
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap();
        let body = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap_or(Value::String(text)) };
        (status, body)
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        let auth = format!("Bearer {}", self.token);
        Self::finish(self.agent.get(format!("{}{path}", self.base)).header("Authorization", &auth).call())
    }

    pub fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let auth = format!("Bearer {}", self.token);
        Self::finish(
            self.agent
                .post(format!("{}{path}", self.base))
                .header("Authorization", &auth)
                .send_json(body),
        )
    }

    pub fn put(&self, path: &str, body: &Value) -> (u16, Value) {
        let auth = format!("Bearer {}", self.token);
        Self::finish(
            self.agent
                .put(format!("{}{path}", self.base))
                .header("Authorization", &auth)
                .send_json(body),
        )
    }

    pub fn post_raw(&self, path: &str, body: &str) -> (u16, Value) {
        let auth = format!("Bearer {}", self.token);
        Self::finish(
            self.agent
                .post(format!("{}{path}", self.base))
                .header("Authorization", &auth)
                .header("Content-Type", "application/json")
                .send(body),
        )
    }

    /// Asserts success and returns the body.
    pub fn ok(&self, (status, body): (u16, Value)) -> Value {
        assert!((200..300).contains(&status), "expected success, got {status}: {body}");
        body
    }
}

pub fn characterisation() -> Value {
    json!({"name": "Characterisation", "fields": [
        {"name": "weight", "kind": "decimal", "required": true, "constraints": {"min": 0}},
        {"name": "status", "kind": "string", "required": true, "constraints": {"enum": ["pass", "fail"]}}
    ]})
}

pub fn inspection() -> Value {
    json!({"name": "Inspection", "fields": [{"name": "clean", "kind": "boolean", "required": true}]})
}

/// Two operator activities in sequence.
pub fn workflow() -> Value {
    json!({"name": "Characterise", "nodes": [
        {"id": "start", "type": "Start"},
        {"id": "Inspect", "type": "Elementary", "schema": "Inspection", "state_machine": "Elementary", "role": "operator"},
        {"id": "Measure", "type": "Elementary", "schema": "Characterisation", "state_machine": "Elementary", "role": "operator"},
        {"id": "end", "type": "End"}
    ], "edges": [
        {"from": "start", "to": "Inspect"}, {"from": "Inspect", "to": "Measure"}, {"from": "Measure", "to": "end"}
    ]})
}

pub fn crystal() -> Value {
    json!({"name": "Crystal", "workflow_def": "Characterise",
        "property_defaults": [{"name": "Status", "value": "new", "mutable": true}],
        "collection_decls": []})
}

pub fn module() -> Value {
    json!({"name": "Module", "workflow_def": "Characterise", "property_defaults": [],
        "collection_decls": [{"name": "cells", "member_type": "Crystal", "slot_count": 3}]})
}

pub fn install(c: &Client) {
    c.ok(c.post("/descriptions/schema/Characterisation", &characterisation()));
    c.ok(c.post("/descriptions/schema/Inspection", &inspection()));
    c.ok(c.post("/descriptions/workflow-def/Characterise", &workflow()));
    c.ok(c.post("/descriptions/item-description/Crystal", &crystal()));
    c.ok(c.post("/descriptions/item-description/Module", &module()));
}

pub fn create(c: &Client, desc: &str, name: &str) -> String {
    let body = c.ok(c.post("/items", &json!({"description": desc, "name": name})));
    body["id"].as_str().unwrap().to_owned()
}

pub fn fire(c: &Client, id: &str, step: &str, transition: &str, outcome: Option<Value>) -> (u16, Value) {
    let mut body = json!({"step_path": step, "transition": transition});
    if let Some(o) = outcome {
        body["outcome"] = o;
    }
    c.post(&format!("/items/{id}/transitions"), &body)
}
