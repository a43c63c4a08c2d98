use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use descrix_core::Agent;
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "DESCRIX_CONFIG";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub name: String,
    #[serde(default)]
    pub roles: Vec<String>,
    pub token: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub data_dir: PathBuf,
    pub listen_addr: SocketAddr,
    #[serde(default)]
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub forbid_breaking_publishes: bool,
    /// Seed for reproducible item ids; random ids when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deterministic_ids: Option<u64>,
    /// Skip fsync on appends. Only sensible for throwaway stores.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_sync: bool,
}

impl ServerConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config: ServerConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if config.data_dir.is_relative() {
            if let Some(parent) = path.parent() {
                config.data_dir = parent.join(&config.data_dir);
            }
        }
        config.check()?;
        Ok(config)
    }

    /// The `--config` flag wins over the environment variable.
    pub fn locate(flag: Option<&Path>) -> anyhow::Result<PathBuf> {
        if let Some(p) = flag {
            return Ok(p.to_owned());
        }
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Ok(PathBuf::from(p)),
            _ => bail!("no configuration: pass --config or set {CONFIG_ENV}"),
        }
    }

    pub fn check(&self) -> anyhow::Result<()> {
        let mut seen = HashMap::new();
        for a in &self.agents {
            if a.token.is_empty() {
                bail!("agent `{}` has an empty token", a.name);
            }
            if let Some(other) = seen.insert(a.token.as_str(), a.name.as_str()) {
                bail!("agents `{other}` and `{}` share a token", a.name);
            }
        }
        Ok(())
    }

    pub fn tokens(&self) -> HashMap<String, Agent> {
        self.agents
            .iter()
            .map(|a| {
                (
                    a.token.clone(),
                    Agent {
                        name: a.name.clone(),
                        roles: a.roles.clone(),
                    },
                )
            })
            .collect()
    }
}
