//! The `descrix` command-line client.
//!
//! Every command except `serve` talks to a running server over its HTTP API.

pub mod bundle;
pub mod client;
mod render;
pub mod script;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::client::{encode, Client, Failure, Outcome};

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:8080";

#[derive(Parser, Debug, Clone)]
#[command(name = "descrix", version, about = "Description-driven item store: server and client")]
pub struct Cli {
    /// Base URL of the server.
    #[arg(long, global = true, env = "DESCRIX_SERVER", overrides_with = "server")]
    pub server: Option<String>,
    /// Bearer token identifying the agent.
    #[arg(long, global = true, env = "DESCRIX_TOKEN", hide_env_values = true, overrides_with = "token")]
    pub token: Option<String>,
    /// Print the server's JSON responses verbatim.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Run the HTTP server.
    Serve {
        /// Configuration file; overrides DESCRIX_CONFIG.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for reproducible item ids.
        #[arg(long, value_name = "SEED")]
        deterministic_ids: Option<u64>,
    },
    /// Publish the next version of a description from a JSON file.
    Publish {
        /// schema, state-machine, workflow-def or item-description.
        kind: String,
        file: PathBuf,
        /// Defaults to the payload's `name`, then the file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Publish every description in a bundle directory, all or nothing.
    ImportBundle { dir: PathBuf },
    /// Write every published description version to a bundle directory.
    ExportBundle { dir: PathBuf },
    /// Instantiate an item from an item-description.
    CreateItem {
        description: String,
        name: String,
        /// Pin a specific item-description version instead of the latest.
        #[arg(long)]
        version: Option<u64>,
        /// Initial property, as NAME=VALUE; VALUE is read as JSON when it parses.
        #[arg(long = "property", value_name = "NAME=VALUE")]
        properties: Vec<String>,
    },
    /// Show an item.
    Show { item: String },
    /// List the activities waiting on the calling agent.
    Worklist,
    /// Fire a transition on one of an item's activities.
    Transition {
        item: String,
        step_path: String,
        transition: String,
        /// JSON outcome document.
        #[arg(long, value_name = "FILE")]
        outcome: Option<PathBuf>,
    },
    /// Fetch an outcome document through a viewpoint.
    Outcome {
        item: String,
        schema: String,
        #[arg(default_value = "last")]
        view: String,
    },
    /// List an item's events.
    History {
        item: String,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        schema: Option<String>,
    },
    /// Everything an item was assembled from.
    TraceUpstream { item: String },
    /// Export the provenance of items as a PROV-JSON document.
    ExportProv {
        items: Vec<String>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Give an item a path.
    Bind { path: String, item: String },
    /// Look up a path, or list the paths under a prefix.
    Resolve {
        #[arg(required_unless_present = "prefix")]
        path: Option<String>,
        #[arg(long, conflicts_with = "path")]
        prefix: Option<String>,
    },
    /// Run a file of commands against the server.
    RunScript {
        file: PathBuf,
        /// Carry on after a failing command.
        #[arg(long)]
        keep_going: bool,
    },
}

/// A successful command: the server's response, its human rendering, and
/// the value a script captures from it.
pub struct Reply {
    pub body: Value,
    pub text: String,
    pub capture: Option<String>,
}

impl Reply {
    fn new(body: Value, text: String) -> Reply {
        Reply {
            body,
            text,
            capture: None,
        }
    }

    fn capturing(mut self, value: impl Into<String>) -> Reply {
        self.capture = Some(value.into());
        self
    }
}

pub struct Session {
    pub server: String,
    pub token: Option<String>,
    pub json: bool,
    client: Client,
}

impl Session {
    pub fn new(server: Option<String>, token: Option<String>, json: bool) -> Session {
        let server = server.unwrap_or_else(|| DEFAULT_SERVER.to_owned());
        Session {
            client: Client::new(&server, token.clone()),
            server,
            token,
            json,
        }
    }

    /// Accepts an item id or a bound path (anything starting with `/`).
    fn item(&self, reference: &str) -> Outcome<String> {
        if reference.starts_with('/') {
            let found = self.client.get(&format!("/paths?path={}", encode(reference)))?;
            Ok(found["item"].as_str().unwrap_or_default().to_owned())
        } else {
            Ok(reference.to_owned())
        }
    }

    pub fn execute(&self, command: &Command) -> Outcome<Reply> {
        let c = &self.client;
        match command {
            Command::Serve { .. } | Command::RunScript { .. } => {
                Err(Failure::Usage("this command cannot run inside a session".into()))
            }
            Command::Publish { kind, file, name } => {
                let payload = read_json(file)?;
                let name = match name {
                    Some(n) => n.clone(),
                    None => payload["name"]
                        .as_str()
                        .map(str::to_owned)
                        .or_else(|| file.file_stem().map(|s| s.to_string_lossy().into_owned()))
                        .ok_or_else(|| Failure::Usage("cannot tell the description's name; pass --name".into()))?,
                };
                let kind = bundle::slug(kind).ok_or_else(|| Failure::Usage(format!("unknown kind `{kind}`")))?;
                let dv = c.post(&format!("/descriptions/{kind}/{}", encode(&name)), &payload)?;
                let version = dv["version"].as_u64().unwrap_or_default();
                Ok(Reply::new(dv.clone(), render::published(&dv)).capturing(version.to_string()))
            }
            Command::ImportBundle { dir } => {
                let published = bundle::import(c, dir)?;
                let text = published.iter().map(render::published).collect::<Vec<_>>().join("\n");
                Ok(Reply::new(Value::Array(published), text))
            }
            Command::ExportBundle { dir } => {
                let manifest = bundle::export(c, dir)?;
                let n = manifest["entries"].as_array().map_or(0, Vec::len);
                Ok(Reply::new(manifest, format!("exported {n} description versions to {}", dir.display())))
            }
            Command::CreateItem {
                description,
                name,
                version,
                properties,
            } => {
                let properties = properties.iter().map(|p| property(p)).collect::<Outcome<Vec<_>>>()?;
                let mut req = json!({"description": description, "name": name, "properties": properties});
                if let Some(v) = version {
                    req["version"] = json!(v);
                }
                let item = c.post("/items", &req)?;
                let id = item["id"].as_str().unwrap_or_default().to_owned();
                Ok(Reply::new(item, format!("created {description} {name} {id}")).capturing(id))
            }
            Command::Show { item } => {
                let id = self.item(item)?;
                let view = c.get(&format!("/items/{id}"))?;
                let text = render::item(&view);
                Ok(Reply::new(view, text).capturing(id))
            }
            Command::Worklist => {
                let jobs = c.get("/worklist")?;
                let text = render::worklist(&jobs);
                Ok(Reply::new(jobs, text))
            }
            Command::Transition {
                item,
                step_path,
                transition,
                outcome,
            } => {
                let id = self.item(item)?;
                let mut req = json!({"step_path": step_path, "transition": transition});
                if let Some(file) = outcome {
                    req["outcome"] = read_json(file)?;
                }
                let event = c.post(&format!("/items/{id}/transitions"), &req)?;
                let seq = event["seq"].as_u64().unwrap_or_default();
                let text = format!(
                    "{id} seq {seq}: {step_path} {transition} ({} -> {})",
                    event["state_before"].as_str().unwrap_or("?"),
                    event["state_after"].as_str().unwrap_or("?")
                );
                Ok(Reply::new(event, text).capturing(seq.to_string()))
            }
            Command::Outcome { item, schema, view } => {
                let id = self.item(item)?;
                let got = c.get(&format!("/items/{id}/outcomes/{}/{}", encode(schema), encode(view)))?;
                let text = serde_json::to_string_pretty(&got["outcome"]).unwrap_or_default();
                Ok(Reply::new(got, text))
            }
            Command::History { item, kind, schema } => {
                let id = self.item(item)?;
                let mut query = Vec::new();
                if let Some(k) = kind {
                    query.push(format!("kind={}", encode(k)));
                }
                if let Some(s) = schema {
                    query.push(format!("schema={}", encode(s)));
                }
                let path = if query.is_empty() {
                    format!("/items/{id}/history")
                } else {
                    format!("/items/{id}/history?{}", query.join("&"))
                };
                let events = c.get(&path)?;
                let text = render::history(&events);
                Ok(Reply::new(events, text))
            }
            Command::TraceUpstream { item } => {
                let id = self.item(item)?;
                let graph = c.get(&format!("/items/{id}/trace-upstream"))?;
                let text = render::graph(&graph);
                Ok(Reply::new(graph, text))
            }
            Command::ExportProv { items, output } => {
                let ids = items.iter().map(|i| self.item(i)).collect::<Outcome<Vec<_>>>()?;
                let doc = c.post("/prov/export", &json!({"items": ids}))?;
                let pretty = serde_json::to_string_pretty(&doc).unwrap_or_default();
                let text = match output {
                    Some(path) => {
                        std::fs::write(path, format!("{pretty}\n"))
                            .map_err(|e| Failure::Usage(format!("writing {}: {e}", path.display())))?;
                        format!("wrote {}", path.display())
                    }
                    None => pretty,
                };
                Ok(Reply::new(doc, text))
            }
            Command::Bind { path, item } => {
                let id = self.item(item)?;
                let bound = c.post("/paths", &json!({"path": path, "item": id}))?;
                Ok(Reply::new(bound, format!("{path} -> {id}")).capturing(id))
            }
            Command::Resolve { path, prefix } => match (path, prefix) {
                (Some(p), _) => {
                    let found = c.get(&format!("/paths?path={}", encode(p)))?;
                    let id = found["item"].as_str().unwrap_or_default().to_owned();
                    Ok(Reply::new(found, id.clone()).capturing(id))
                }
                (None, Some(prefix)) => {
                    let found = c.get(&format!("/paths?prefix={}", encode(prefix)))?;
                    let text = render::bindings(&found);
                    Ok(Reply::new(found, text))
                }
                (None, None) => Err(Failure::Usage("give a path or --prefix".into())),
            },
        }
    }
}

fn property(spec: &str) -> Outcome<Value> {
    let (name, raw) = spec
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("property `{spec}` is not NAME=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    Ok(json!({"name": name, "value": value}))
}

pub fn read_json(path: &Path) -> Outcome<Value> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{} is not JSON: {e}", path.display())))
}

fn report(session: &Session, result: Outcome<Reply>) -> i32 {
    match result {
        Ok(reply) => {
            if session.json {
                println!("{}", serde_json::to_string(&reply.body).unwrap_or_default());
            } else if !reply.text.is_empty() {
                println!("{}", reply.text);
            }
            0
        }
        Err(f) => {
            if session.json {
                eprintln!("{}", serde_json::to_string(&f.envelope()).unwrap_or_default());
            } else {
                eprintln!("error: {}: {}", f.code(), f.message());
            }
            f.exit_code()
        }
    }
}

fn serve(config: Option<&Path>, deterministic_ids: Option<u64>) -> i32 {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let loaded = descrix_server::ServerConfig::locate(config).and_then(|p| descrix_server::ServerConfig::load(&p));
    let mut config = match loaded {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return 2;
        }
    };
    if deterministic_ids.is_some() {
        config.deterministic_ids = deterministic_ids;
    }
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: starting runtime: {e}");
            return 3;
        }
    };
    match runtime.block_on(descrix_server::serve(config)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            3
        }
    }
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    match &cli.command {
        Command::Serve {
            config,
            deterministic_ids,
        } => serve(config.as_deref(), *deterministic_ids),
        Command::RunScript { file, keep_going } => {
            let session = Session::new(cli.server.clone(), cli.token.clone(), cli.json);
            script::run(&session, file, *keep_going)
        }
        command => {
            let session = Session::new(cli.server.clone(), cli.token.clone(), cli.json);
            let result = session.execute(command);
            report(&session, result)
        }
    }
}
