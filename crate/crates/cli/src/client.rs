use std::time::Duration;

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde_json::Value;

/// Why a command failed, and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments or unreadable local input.
    Usage(String),
    /// The server answered with an error envelope.
    Api { status: u16, envelope: Value },
    /// The server could not be reached or answered nonsense.
    Transport(String),
    /// Local content failed a check before anything was sent.
    Invalid { code: String, message: String },
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Api { status: 422, .. } | Failure::Invalid { .. } => 4,
            Failure::Api { .. } | Failure::Transport(_) => 3,
        }
    }

    pub fn code(&self) -> &str {
        match self {
            Failure::Usage(_) => "Usage",
            Failure::Api { envelope, .. } => envelope["code"].as_str().unwrap_or("ApiError"),
            Failure::Transport(_) => "Transport",
            Failure::Invalid { code, .. } => code,
        }
    }

    pub fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Transport(m) | Failure::Invalid { message: m, .. } => m.clone(),
            Failure::Api { envelope, .. } => envelope["message"].as_str().unwrap_or_default().to_owned(),
        }
    }

    /// The server's envelope when there is one, otherwise one in the same shape.
    pub fn envelope(&self) -> Value {
        match self {
            Failure::Api { envelope, .. } => envelope.clone(),
            _ => serde_json::json!({"code": self.code(), "message": self.message(), "details": {}}),
        }
    }
}

pub type Outcome<T> = Result<T, Failure>;

pub struct Client {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl Client {
    pub fn new(server: &str, token: Option<String>) -> Client {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .new_agent();
        Client {
            base: format!("{}/api/v1", server.trim_end_matches('/')),
            token,
            agent,
        }
    }

    pub fn get(&self, path: &str) -> Outcome<Value> {
        let req = self.agent.get(format!("{}{path}", self.base));
        let req = match &self.token {
            Some(t) => req.header("Authorization", &format!("Bearer {t}")),
            None => req,
        };
        Self::finish(req.call())
    }

    pub fn post(&self, path: &str, body: &Value) -> Outcome<Value> {
        self.send(self.agent.post(format!("{}{path}", self.base)), body)
    }

    pub fn put(&self, path: &str, body: &Value) -> Outcome<Value> {
        self.send(self.agent.put(format!("{}{path}", self.base)), body)
    }

    fn send(&self, req: ureq::RequestBuilder<ureq::typestate::WithBody>, body: &Value) -> Outcome<Value> {
        let req = match &self.token {
            Some(t) => req.header("Authorization", &format!("Bearer {t}")),
            None => req,
        };
        Self::finish(req.send_json(body))
    }

    fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Outcome<Value> {
        let mut resp = resp.map_err(|e| Failure::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_string()
            .map_err(|e| Failure::Transport(e.to_string()))?;
        let body: Value = serde_json::from_str(&text)
            .map_err(|_| Failure::Transport(format!("server answered {status} with a non-JSON body")))?;
        if (200..300).contains(&status) {
            Ok(body)
        } else {
            Err(Failure::Api { status, envelope: body })
        }
    }
}

const COMPONENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.').remove(b'~');

/// Escapes a path segment or query value.
pub fn encode(s: &str) -> String {
    utf8_percent_encode(s, COMPONENT).to_string()
}
