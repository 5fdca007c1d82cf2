//! Run manifests: enough to rerun a subcommand and verify its artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::HarnessError;

type Result<T> = std::result::Result<T, HarnessError>;

pub const FILE_NAME: &str = "manifest.txt";
const CONFIG_MARKER: &str = "[config]";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    Ok(sha256_hex(&fs::read(path).map_err(|e| HarnessError::io(path, e))?))
}

/// An input file by role, with its checksum at the time of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRecord {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: String,
    pub inputs: Vec<InputRecord>,
    /// Artifact file names relative to the output directory, with checksums.
    pub artifacts: Vec<(String, String)>,
    /// Extra arguments that are not part of the config, such as `count`.
    pub args: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            seed: config.seed,
            config: config.to_text(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            args: Vec::new(),
        }
    }

    pub fn config_sha256(&self) -> String {
        sha256_hex(self.config.as_bytes())
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.push(InputRecord {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn add_artifact(&mut self, out_dir: &Path, name: &str) -> Result<()> {
        let sha = sha256_file(out_dir.join(name))?;
        self.artifacts.push((name.to_string(), sha));
        Ok(())
    }

    pub fn input(&self, role: &str) -> Option<&InputRecord> {
        self.inputs.iter().find(|i| i.role == role)
    }

    pub fn arg(&self, key: &str) -> Option<&str> {
        self.args.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "config_sha256 = {}", self.config_sha256());
        for (k, v) in &self.args {
            let _ = writeln!(s, "arg.{k} = {v}");
        }
        for i in &self.inputs {
            let _ = writeln!(s, "input.{} = {} {}", i.role, i.sha256, i.path);
        }
        for (name, sha) in &self.artifacts {
            let _ = writeln!(s, "artifact.{name} = {sha}");
        }
        let _ = writeln!(s, "{CONFIG_MARKER}");
        s.push_str(&self.config);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| HarnessError::Config(format!("manifest: {m}"));
        let (head, config) = text
            .split_once(&format!("{CONFIG_MARKER}\n"))
            .ok_or_else(|| bad("missing [config] section".into()))?;
        let mut m = Manifest {
            command: String::new(),
            seed: 0,
            config: config.to_string(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            args: Vec::new(),
        };
        let mut config_sha = None;
        for line in head.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(" = ").ok_or_else(|| bad(format!("malformed line `{line}`")))?;
            match k {
                "command" => m.command = v.to_string(),
                "seed" => m.seed = v.parse().map_err(|_| bad(format!("bad seed `{v}`")))?,
                "config_sha256" => config_sha = Some(v.to_string()),
                _ => {
                    if let Some(role) = k.strip_prefix("input.") {
                        let (sha, path) = v.split_once(' ').ok_or_else(|| bad(format!("bad input `{v}`")))?;
                        m.inputs.push(InputRecord {
                            role: role.to_string(),
                            path: path.to_string(),
                            sha256: sha.to_string(),
                        });
                    } else if let Some(name) = k.strip_prefix("artifact.") {
                        m.artifacts.push((name.to_string(), v.to_string()));
                    } else if let Some(arg) = k.strip_prefix("arg.") {
                        m.args.push((arg.to_string(), v.to_string()));
                    } else {
                        return Err(bad(format!("unknown key `{k}`")));
                    }
                }
            }
        }
        if m.command.is_empty() {
            return Err(bad("no command recorded".into()));
        }
        if config_sha.as_deref() != Some(m.config_sha256().as_str()) {
            return Err(bad("config checksum does not match the recorded config".into()));
        }
        Ok(m)
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join(FILE_NAME);
        fs::write(&path, self.to_text()).map_err(|e| HarnessError::io(&path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?)
    }

    /// Confirms every recorded input still has its recorded checksum.
    pub fn verify_inputs(&self) -> Result<()> {
        for i in &self.inputs {
            let now = sha256_file(&i.path)?;
            if now != i.sha256 {
                return Err(HarnessError::Config(format!(
                    "input {} ({}) changed since the manifest was written",
                    i.role, i.path
                )));
            }
        }
        Ok(())
    }
}
