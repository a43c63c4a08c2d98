//! Description bundles: a directory of payload files plus a manifest.
//!
//! Layout: `<bundle>/<kind>/<name>/<version>.json` for each payload and
//! `<bundle>/manifest.json` listing every file with its SHA-256, in the
//! order the entries are to be published.

use std::path::{Component, Path};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::client::{encode, Client, Failure, Outcome};

pub const MANIFEST: &str = "manifest.json";

/// Kind slugs in dependency order.
pub const KINDS: [&str; 4] = ["state-machine", "schema", "workflow-def", "item-description"];

/// Canonical slug for any accepted spelling of a kind.
pub fn slug(kind: &str) -> Option<&'static str> {
    let flat: String = kind.chars().filter(|c| *c != '-' && *c != '_').collect::<String>().to_lowercase();
    KINDS.into_iter().find(|k| k.replace('-', "") == flat)
}

fn rank(kind: &str) -> usize {
    KINDS.iter().position(|k| Some(*k) == slug(kind)).unwrap_or(KINDS.len())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub kind: String,
    pub name: String,
    pub version: u64,
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<Entry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn mismatch(message: String) -> Failure {
    Failure::Invalid {
        code: "ManifestMismatch".into(),
        message,
    }
}

fn usage(context: &str, path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Usage(format!("{context} {}: {e}", path.display()))
}

/// Reads and checks a bundle without contacting the server: every listed
/// file must exist inside the bundle and hash to its manifest entry.
pub fn load(dir: &Path) -> Outcome<Vec<(Entry, Value)>> {
    let manifest_path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| usage("reading", &manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| mismatch(format!("{}: {e}", manifest_path.display())))?;
    let mut loaded = Vec::with_capacity(manifest.entries.len());
    for entry in manifest.entries {
        let rel = Path::new(&entry.file);
        if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(mismatch(format!("`{}` points outside the bundle", entry.file)));
        }
        if slug(&entry.kind).is_none() {
            return Err(mismatch(format!("`{}` has unknown kind `{}`", entry.file, entry.kind)));
        }
        let path = dir.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| mismatch(format!("{}: {e}", path.display())))?;
        let actual = sha256_hex(&bytes);
        if actual != entry.sha256 {
            return Err(mismatch(format!(
                "{} hashes to {actual}, manifest says {}",
                entry.file, entry.sha256
            )));
        }
        let payload: Value =
            serde_json::from_slice(&bytes).map_err(|e| mismatch(format!("{} is not JSON: {e}", entry.file)))?;
        loaded.push((entry, payload));
    }
    loaded.sort_by_key(|(e, _)| rank(&e.kind));
    Ok(loaded)
}

/// Publishes a bundle as one batch; a bad entry publishes nothing.
pub fn import(client: &Client, dir: &Path) -> Outcome<Vec<Value>> {
    let loaded = load(dir)?;
    let entries: Vec<Value> = loaded
        .iter()
        .map(|(e, payload)| {
            let kind = wire_kind(slug(&e.kind).unwrap_or_default());
            json!({"kind": kind, "name": e.name, "payload": payload})
        })
        .collect();
    let published = client.post("/descriptions/batch", &json!({"entries": entries}))?;
    Ok(published.as_array().cloned().unwrap_or_default())
}

/// The server's serialised form of a kind.
fn wire_kind(slug: &str) -> &'static str {
    match slug {
        "state-machine" => "StateMachine",
        "schema" => "Schema",
        "workflow-def" => "WorkflowDef",
        _ => "ItemDescription",
    }
}

/// Writes every version not published by the kernel itself.
pub fn export(client: &Client, dir: &Path) -> Outcome<Value> {
    let summaries = client.get("/descriptions")?;
    let mut versions = Vec::new();
    for d in summaries.as_array().map(Vec::as_slice).unwrap_or_default() {
        let kind = slug(d["kind"].as_str().unwrap_or_default()).unwrap_or("schema");
        let name = d["name"].as_str().unwrap_or_default();
        for v in 0..=d["latest"].as_u64().unwrap_or_default() {
            let dv = client.get(&format!("/descriptions/{kind}/{}/{v}", encode(name)))?;
            if dv["publisher"] != "system" {
                versions.push((kind, dv));
            }
        }
    }
    versions.sort_by_key(|(kind, dv)| (rank(kind), dv["published_at"].as_u64(), dv["version"].as_u64()));

    let mut entries = Vec::with_capacity(versions.len());
    for (kind, dv) in versions {
        let name = dv["name"].as_str().unwrap_or_default().to_owned();
        let version = dv["version"].as_u64().unwrap_or_default();
        let file = format!("{kind}/{name}/{version}.json");
        let path = dir.join(&file);
        let bytes = format!("{}\n", serde_json::to_string_pretty(&dv["payload"]).unwrap_or_default());
        std::fs::create_dir_all(path.parent().unwrap_or(dir)).map_err(|e| usage("creating", &path, e))?;
        std::fs::write(&path, &bytes).map_err(|e| usage("writing", &path, e))?;
        entries.push(Entry {
            kind: kind.to_owned(),
            name,
            version,
            file,
            sha256: sha256_hex(bytes.as_bytes()),
        });
    }
    let manifest = serde_json::to_value(Manifest { entries }).unwrap_or_default();
    let path = dir.join(MANIFEST);
    let text = format!("{}\n", serde_json::to_string_pretty(&manifest).unwrap_or_default());
    std::fs::write(&path, text).map_err(|e| usage("writing", &path, e))?;
    Ok(manifest)
}
