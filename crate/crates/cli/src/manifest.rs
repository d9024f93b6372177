//! `key = value` run manifests.
//!
//! ```text
//! command = train
//! version = 0.1.0
//! seed = 7
//! config.K = 5
//! config.candidates = "grid:-0.5:0.4:0.1"
//! input = /abs/train
//! output = /abs/out/leaderboard.csv
//! ```
//!
//! Config values are JSON literals, so they round-trip exactly.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const FILE_NAME: &str = "run-manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: Map<String, Value>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Derived quantities worth keeping next to the config, ignored on replay.
    pub results: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C) -> Result<Self> {
        let config = match serde_json::to_value(config)? {
            Value::Object(map) => map,
            _ => bail!("config must serialise to an object"),
        };
        let seed = config.get("seed").and_then(Value::as_u64);
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            results: Vec::new(),
        })
    }

    pub fn config_as<C: DeserializeOwned>(&self) -> Result<C> {
        serde_json::from_value(Value::Object(self.config.clone()))
            .with_context(|| format!("manifest config does not fit command `{}`", self.command))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("command = {}\nversion = {}\n", self.command, self.version);
        if let Some(s) = self.seed {
            out.push_str(&format!("seed = {s}\n"));
        }
        for (k, v) in &self.config {
            out.push_str(&format!("config.{k} = {v}\n"));
        }
        for p in &self.inputs {
            out.push_str(&format!("input = {}\n", p.display()));
        }
        for p in &self.outputs {
            out.push_str(&format!("output = {}\n", p.display()));
        }
        for (k, v) in &self.results {
            out.push_str(&format!("result.{k} = {v}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut command = None;
        let mut version = String::new();
        let mut seed = None;
        let mut config = Map::new();
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        let mut results = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(" = ")
                .with_context(|| format!("manifest line {}: expected `key = value`", i + 1))?;
            match key {
                "command" => command = Some(value.to_string()),
                "version" => version = value.to_string(),
                "seed" => seed = Some(value.parse().context("bad seed")?),
                "input" => inputs.push(PathBuf::from(value)),
                "output" => outputs.push(PathBuf::from(value)),
                _ => {
                    if let Some(k) = key.strip_prefix("config.") {
                        let v: Value = serde_json::from_str(value)
                            .with_context(|| format!("manifest line {}: bad value for {k}", i + 1))?;
                        config.insert(k.to_string(), v);
                    } else if let Some(k) = key.strip_prefix("result.") {
                        results.push((k.to_string(), value.to_string()));
                    } else {
                        bail!("manifest line {}: unknown key `{key}`", i + 1);
                    }
                }
            }
        }
        Ok(Self {
            command: command.context("manifest has no command")?,
            version,
            seed,
            config,
            inputs,
            outputs,
            results,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(FILE_NAME);
        std::fs::write(&path, self.to_text())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Serialize, serde::Deserialize, PartialEq)]
    struct Cfg {
        seed: u64,
        h: f64,
        name: String,
        list: Vec<f64>,
        eps: Option<f64>,
    }

    #[test]
    fn round_trip() {
        let cfg = Cfg {
            seed: 3,
            h: 1.0 / 7.0,
            name: "a = b".into(),
            list: vec![1.0, -10.0, 0.1 + 0.2],
            eps: None,
        };
        let mut m = RunManifest::new("x", &cfg).unwrap();
        m.inputs.push("/in".into());
        m.outputs.push("/out/a.csv".into());
        m.results.push(("epsilon".into(), "0.5".into()));
        let back = RunManifest::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.config_as::<Cfg>().unwrap(), cfg);
        assert_eq!(back.seed, Some(3));
    }

    #[test]
    fn rejects_garbage() {
        assert!(RunManifest::parse("command = x\nwhat = 1\n").is_err());
        assert!(RunManifest::parse("seed = 1\n").is_err());
    }
}
