use std::path::Path;

use anyhow::Result;
use serde::Serialize;
use serde_json::{json, Value};

use margin_audit::{AuditReport, BnPolicy, BootstrapConfig, DecompositionMode, DecompositionReport, NuisanceConfig, ThresholdSpec};

/// Resolved settings of a run, echoed verbatim into the report.
#[derive(Serialize)]
pub struct ConfigEcho<'a> {
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<&'a Path>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<&'a Path>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<DecompositionMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nuisance: Option<NuisanceConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdSpec>,
    pub swap_groups: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<BnPolicy>,
}

/// `{version, config_echo, decomposition, audit?, diagnostics}`; the nuisance
/// diagnostics move from the decomposition into `diagnostics`.
pub fn build(
    echo: &ConfigEcho,
    decomposition: &DecompositionReport,
    audit: Option<&AuditReport>,
    notes: Vec<String>,
) -> Result<Value> {
    let mut dec = serde_json::to_value(decomposition)?;
    let nuisance = dec.as_object_mut().and_then(|m| m.remove("diagnostics")).unwrap_or(Value::Null);
    let mut out = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_echo": echo,
        "decomposition": dec,
    });
    if let Some(a) = audit {
        let mut a = serde_json::to_value(a)?;
        if let Some(m) = a.as_object_mut() {
            m.remove("decomposition");
            if let Some(Value::Object(mirror)) = m.get_mut("mirrored_decomposition") {
                mirror.remove("diagnostics");
            }
        }
        out["audit"] = a;
    }
    out["diagnostics"] = json!({
        "generated_at": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        "nuisance": nuisance,
        "notes": notes,
    });
    Ok(out)
}
