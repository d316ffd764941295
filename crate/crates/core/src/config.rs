//! JSON run and sweep configurations with dotted-path overrides.
//!
//! `"system"` is either an inline object or a path to a system file,
//! resolved relative to the configuration file. Overrides are applied to the
//! JSON document after the system is inlined and before it is deserialized,
//! so `--set system.alpha=0.2` and `--set solver.h=0.02` both work and
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::experiments::{default_grid_values, SweepSpec};
use crate::model::BilinearSystem;
use crate::ocp::SolverOptions;
use crate::riccati::RiccatiSolution;
use crate::rhc::RhcConfig;
use crate::taylor::{PenaltyKind, PenaltySpec, TerminalPenalty};

fn default_span() -> f64 {
    5.0
}

fn default_phi() -> PenaltySpec {
    PenaltySpec::of_kind(PenaltyKind::Taylor2)
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: BilinearSystem,
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(rename = "T", default)]
    pub horizon: Option<f64>,
    #[serde(rename = "L", default = "default_span")]
    pub span: f64,
    #[serde(default = "default_phi")]
    pub phi: PenaltySpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default = "default_true")]
    pub warm_start: bool,
}

impl RunConfig {
    pub fn initial_state(&self) -> Result<DVector<f64>> {
        let y0 = self.y0.as_ref().ok_or_else(|| Error::Config("missing \"y0\"".into()))?;
        if y0.len() != self.system.dim() {
            return Err(Error::Config(format!(
                "\"y0\" has {} entries, the system has dimension {}",
                y0.len(),
                self.system.dim()
            )));
        }
        Ok(DVector::from_vec(y0.clone()))
    }

    pub fn horizon(&self) -> Result<f64> {
        self.horizon.ok_or_else(|| Error::Config("missing \"T\"".into()))
    }

    pub fn penalty(&self, ric: &RiccatiSolution) -> Result<TerminalPenalty> {
        self.phi.build(&self.system, ric)
    }

    pub fn rhc_config(&self, phi: TerminalPenalty) -> Result<RhcConfig> {
        let tau = self.tau.ok_or_else(|| Error::Config("missing \"tau\"".into()))?;
        let cfg = RhcConfig {
            tau,
            horizon: self.horizon()?,
            span: self.span,
            phi,
            opts: self.solver,
            warm_start: self.warm_start,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub system: BilinearSystem,
    pub y0: Vec<f64>,
    #[serde(default = "default_grid_values")]
    pub tau_values: Vec<f64>,
    #[serde(rename = "T_values", default = "default_grid_values")]
    pub horizon_values: Vec<f64>,
    #[serde(default = "default_orders")]
    pub orders: Vec<u32>,
    #[serde(rename = "L", default = "default_span")]
    pub span: f64,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn default_orders() -> Vec<u32> {
    vec![1, 2, 3]
}

impl SweepConfig {
    pub fn into_spec(self) -> Result<SweepSpec> {
        let spec = SweepSpec {
            y0: DVector::from_vec(self.y0),
            system: self.system,
            tau_values: self.tau_values,
            horizon_values: self.horizon_values,
            orders: self.orders,
            span: self.span,
            opts: self.solver,
        };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }
}

/// Reads a configuration file, inlines its system and applies `KEY=VALUE`
/// overrides.
pub fn load<T: DeserializeOwned>(path: &Path, overrides: &[String]) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    from_value(doc, &base, overrides)
}

/// As [`load`] for an already parsed document; relative system paths are
/// resolved against `base`.
pub fn from_value<T: DeserializeOwned>(mut doc: Value, base: &Path, overrides: &[String]) -> Result<T> {
    inline_system(&mut doc, base)?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
}

fn inline_system(doc: &mut Value, base: &Path) -> Result<()> {
    let Some(obj) = doc.as_object_mut() else {
        return Err(Error::Config("configuration must be a JSON object".into()));
    };
    if let Some(Value::String(rel)) = obj.get("system") {
        let path: PathBuf = base.join(rel);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read system file {}: {e}", path.display())))?;
        let sys: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        obj.insert("system".into(), sys);
    }
    Ok(())
}

/// `a.b.c=VALUE`; the value is parsed as JSON and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key '{key}'")));
    }
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override '{key}' does not address an object")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override '{key}' does not address an object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
