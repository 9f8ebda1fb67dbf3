//! Workflow manifest: the JSON document that names a deployment and where
//! its artifacts live. Relative paths resolve against the manifest's
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use tpp_core::workflow::WorkflowConfig;
use tpp_core::{BackendId, Digest};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyPaths {
    pub sensor: PathBuf,
    pub pki_root: Option<PathBuf>,
    pub device: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub workflow_id: String,
    pub backend: BackendId,
    pub threshold: i64,
    pub scale_divisor: u64,
    pub rule_id: String,
    pub batch_size: usize,
    pub sensor_id: String,
    /// Seed for reproducible key material; OS entropy when absent.
    pub seed: Option<u64>,
    pub artifact_dir: PathBuf,
    pub keys: KeyPaths,
    /// Filled in by `setup` for enclave workflows.
    pub reference_measurement: Option<Digest>,
    /// Filled in by `setup` for constraint-system workflows.
    pub verification_key_digest: Option<Digest>,
}

impl Manifest {
    pub fn new(backend: BackendId, batch_size: usize, seed: Option<u64>) -> Self {
        let c = WorkflowConfig::new(backend, batch_size);
        let enclave = backend == BackendId::Enclave;
        Manifest {
            workflow_id: c.workflow_id,
            backend,
            threshold: c.threshold,
            scale_divisor: c.scale_divisor,
            rule_id: c.rule_id,
            batch_size,
            sensor_id: c.sensor_id,
            seed,
            artifact_dir: PathBuf::from("artifacts"),
            keys: KeyPaths {
                sensor: PathBuf::from("keys/sensor.key.json"),
                pki_root: enclave.then(|| PathBuf::from("keys/pki_root.key.json")),
                device: enclave.then(|| PathBuf::from("keys/device.key.json")),
            },
            reference_measurement: None,
            verification_key_digest: None,
        }
    }

    pub fn config(&self) -> WorkflowConfig {
        WorkflowConfig {
            workflow_id: self.workflow_id.clone(),
            backend: self.backend,
            threshold: self.threshold,
            scale_divisor: self.scale_divisor,
            rule_id: self.rule_id.clone(),
            batch_size: self.batch_size,
            sensor_id: self.sensor_id.clone(),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.workflow_id.is_empty() {
            bail!("workflow_id must not be empty");
        }
        if self.batch_size == 0 {
            bail!("batch_size must be at least 1");
        }
        if self.scale_divisor == 0 {
            bail!("scale_divisor must be at least 1");
        }
        if self.backend == BackendId::Enclave && (self.keys.pki_root.is_none() || self.keys.device.is_none()) {
            bail!("enclave workflows need keys.pki_root and keys.device");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> anyhow::Result<Self> {
        let m: Manifest = serde_json::from_str(s).context("invalid manifest")?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let s = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        Self::from_json(&s).with_context(|| format!("in {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        fs::write(path, self.to_json()).with_context(|| format!("writing manifest {}", path.display()))
    }
}

/// A manifest together with the directory its relative paths resolve from.
#[derive(Clone, Debug)]
pub struct Located {
    pub path: PathBuf,
    pub manifest: Manifest,
}

impl Located {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        Ok(Located { path: path.to_owned(), manifest: Manifest::load(path)? })
    }

    fn base(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base().join(p)
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.resolve(&self.manifest.artifact_dir).join(name)
    }
}
