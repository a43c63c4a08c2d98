//! Scripted runs: one CLI command per line.
//!
//! Blank lines and lines starting with `#` are skipped. `NAME := command`
//! stores the command's result (an item id, a sequence number, a version)
//! for later lines to use as `${NAME}`.

use std::collections::HashMap;
use std::path::Path;

use clap::Parser;
use serde_json::json;

use crate::client::Failure;
use crate::{Cli, Command, Reply, Session};

/// A script line after capture and comment handling.
#[derive(Debug, PartialEq, Eq)]
pub struct Line<'a> {
    pub capture: Option<&'a str>,
    pub command: &'a str,
}

pub fn parse_line(raw: &str) -> Option<Line<'_>> {
    let line = raw.trim();
    if line.is_empty() || line.starts_with('#') {
        return None;
    }
    if let Some((name, rest)) = line.split_once(":=") {
        let name = name.trim();
        if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Some(Line {
                capture: Some(name),
                command: rest.trim(),
            });
        }
    }
    Some(Line {
        capture: None,
        command: line,
    })
}

/// Replaces every `${name}` with its captured value.
pub fn substitute(text: &str, vars: &HashMap<String, String>) -> Result<String, String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find('}').ok_or_else(|| "unterminated `${`".to_owned())?;
        let name = &after[..end];
        let value = vars.get(name).ok_or_else(|| format!("`{name}` has not been captured"))?;
        out.push_str(value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn command(session: &Session, text: &str) -> Result<Cli, Failure> {
    let words = shlex::split(text).ok_or_else(|| Failure::Usage("unbalanced quotes".into()))?;
    let mut args = vec!["descrix".to_owned(), "--server".to_owned(), session.server.clone()];
    if let Some(t) = &session.token {
        args.push("--token".into());
        args.push(t.clone());
    }
    args.extend(words);
    let cli = Cli::try_parse_from(args).map_err(|e| Failure::Usage(e.to_string().trim().to_owned()))?;
    if matches!(cli.command, Command::Serve { .. } | Command::RunScript { .. }) {
        return Err(Failure::Usage("scripts cannot start servers or other scripts".into()));
    }
    Ok(cli)
}

fn step(session: &Session, text: &str) -> Result<Reply, Failure> {
    let cli = command(session, text)?;
    let inner = Session::new(cli.server, cli.token, session.json);
    inner.execute(&cli.command)
}

/// Runs the script, printing a transcript, and returns the exit status: 0
/// when every command succeeded, otherwise that of the first failure.
pub fn run(session: &Session, file: &Path, keep_going: bool) -> i32 {
    let text = match std::fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: reading {}: {e}", file.display());
            return 2;
        }
    };
    let mut vars = HashMap::new();
    let mut status = 0;
    for (n, raw) in text.lines().enumerate() {
        let Some(line) = parse_line(raw) else { continue };
        let result = substitute(line.command, &vars)
            .map_err(Failure::Usage)
            .and_then(|cmd| step(session, &cmd));
        match result {
            Ok(reply) => {
                if let Some(name) = line.capture {
                    let value = reply.capture.clone().unwrap_or_else(|| reply.body.to_string());
                    vars.insert(name.to_owned(), value);
                }
                if session.json {
                    println!("{}", json!({"line": n + 1, "command": raw.trim(), "ok": true, "response": reply.body}));
                } else {
                    println!("ok {}: {}", n + 1, raw.trim());
                    for l in reply.text.lines() {
                        println!("  {l}");
                    }
                }
            }
            Err(f) => {
                if session.json {
                    println!("{}", json!({"line": n + 1, "command": raw.trim(), "ok": false, "error": f.envelope()}));
                } else {
                    println!("error {}: {}", n + 1, raw.trim());
                    println!("  {}: {}", f.code(), f.message());
                }
                if status == 0 {
                    status = f.exit_code();
                }
                if !keep_going {
                    break;
                }
            }
        }
    }
    status
}
