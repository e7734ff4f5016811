//! Run manifests: every run is identified by a hash over its command,
//! resolved configuration, input paths, seed and artifact version. Outputs
//! embed that identity; the manifest file additionally records wall-clock
//! timings and the worker count, which never influence output bytes.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use otmask_core::report::to_stable_json;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub artifact_version: String,
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pipeline_config: Option<otmask_core::pipeline::PipelineConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_config: Option<otmask_core::losses::LossConfig>,
    pub manifest_id: String,
    // execution details: not part of the identity, never echoed in outputs
    pub jobs: usize,
    pub timings_ms: BTreeMap<String, u64>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            schema_version: 1,
            artifact_version: ARTIFACT_VERSION.to_string(),
            command: command.to_string(),
            inputs: BTreeMap::new(),
            seed: None,
            pipeline_config: None,
            loss_config: None,
            manifest_id: String::new(),
            jobs: 0,
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs
            .insert(name.to_string(), path.display().to_string());
    }

    /// The deterministic identity block embedded into every output.
    pub fn identity(&self) -> Value {
        let mut v = json!({
            "schema_version": self.schema_version,
            "artifact_version": self.artifact_version,
            "command": self.command,
            "inputs": self.inputs,
        });
        let map = v.as_object_mut().unwrap();
        if let Some(seed) = self.seed {
            map.insert("seed".into(), json!(seed));
        }
        if let Some(cfg) = &self.pipeline_config {
            map.insert("pipeline_config".into(), serde_json::to_value(cfg).unwrap());
        }
        if let Some(cfg) = &self.loss_config {
            map.insert("loss_config".into(), serde_json::to_value(cfg).unwrap());
        }
        map.insert("manifest_id".into(), json!(self.manifest_id));
        v
    }

    /// Computes the id from the identity fields (excluding the id itself).
    pub fn seal(&mut self) {
        self.manifest_id.clear();
        let mut identity = self.identity();
        identity.as_object_mut().unwrap().remove("manifest_id");
        self.manifest_id = fnv1a_hex(to_stable_json(&identity).as_bytes());
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let value = serde_json::to_value(self)?;
        std::fs::write(path, to_stable_json(&value))?;
        Ok(())
    }
}

/// Millisecond stage timer feeding `timings_ms`.
pub struct StageTimer {
    start: Instant,
}

impl StageTimer {
    pub fn start() -> Self {
        Self {
            start: Instant::now(),
        }
    }

    pub fn record(&mut self, manifest: &mut RunManifest, stage: &str) {
        let elapsed = self.start.elapsed().as_millis() as u64;
        manifest.timings_ms.insert(stage.to_string(), elapsed);
        self.start = Instant::now();
    }
}

fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}
