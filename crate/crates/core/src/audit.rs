//! Business-necessity audit: per-pathway designations checked against the
//! bootstrapped decomposition.
//!
//! | designation | checks                         |
//! |-------------|--------------------------------|
//! | none        | CE(s) = 0, CE(m) = 0           |
//! | weak        | CE(s) = CE(y), CE(m) = 0       |
//! | strong      | CE(s) = CE(y); CE(m) reported  |
//!
//! Strict mode replaces CE(y) with CE(ŷ) in the equality checks.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{SfmDataset, Target};
use crate::decompose::{DecompositionMode, DecompositionReport, EffectKind, Interval};
use crate::error::{Error, Result};
use crate::inference::{
    bootstrap_decomposition, test_equal, test_zero, BootstrapConfig, HypothesisResult, Statement, Term,
    TestOptions,
};
use crate::nuisance::NuisanceConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Designation {
    None,
    Weak,
    Strong,
}

impl Designation {
    pub fn name(self) -> &'static str {
        match self {
            Designation::None => "none",
            Designation::Weak => "weak",
            Designation::Strong => "strong",
        }
    }
}

fn default_level() -> f64 {
    0.95
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BnPolicy {
    #[serde(rename = "DE")]
    pub de: Designation,
    #[serde(rename = "IE")]
    pub ie: Designation,
    #[serde(rename = "SE")]
    pub se: Designation,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Compare CE(s) with CE(ŷ) instead of CE(y).
    #[serde(default)]
    pub strict: bool,
    /// Also audit the reversed transitions (x1 baseline).
    #[serde(default)]
    pub mirrored: bool,
}

impl BnPolicy {
    pub fn new(de: Designation, ie: Designation, se: Designation) -> Self {
        BnPolicy {
            de,
            ie,
            se,
            level: default_level(),
            epsilon: None,
            strict: false,
            mirrored: false,
        }
    }

    pub fn uniform(d: Designation) -> Self {
        Self::new(d, d, d)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: BnPolicy = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn designation(&self, kind: EffectKind) -> Designation {
        match kind {
            EffectKind::De => self.de,
            EffectKind::Ie => self.ie,
            EffectKind::Se | EffectKind::Tv => self.se,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidConfig(format!("policy level must lie in (0, 1), got {}", self.level)));
        }
        if let Some(e) = self.epsilon {
            if e.is_nan() || e < 0.0 {
                return Err(Error::InvalidConfig(format!("epsilon must be non-negative, got {e}")));
            }
        }
        Ok(())
    }

    fn needs_outcome(&self) -> bool {
        !self.strict && EffectKind::PATHWAYS.iter().any(|&k| self.designation(k) != Designation::None)
    }

    fn options(&self) -> TestOptions {
        TestOptions {
            level: self.level,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Overall {
    Success,
    Fail,
}

/// A term reported without being tested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unconstrained {
    pub term: Term,
    pub estimate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<Interval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub pathway: EffectKind,
    pub designation: Designation,
    /// True for the reversed-transition audit.
    #[serde(default)]
    pub mirrored: bool,
    pub checks: Vec<HypothesisResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unconstrained: Option<Unconstrained>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub policy: BnPolicy,
    pub verdicts: Vec<AuditVerdict>,
    pub overall: Overall,
    pub narrative: Vec<String>,
    pub decomposition: DecompositionReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirrored_decomposition: Option<DecompositionReport>,
}

impl AuditReport {
    pub fn verdict(&self, pathway: EffectKind) -> Option<&AuditVerdict> {
        self.verdicts.iter().find(|v| v.pathway == pathway && !v.mirrored)
    }

    pub fn is_success(&self) -> bool {
        self.overall == Overall::Success
    }
}

/// Bootstraps the decomposition and checks `policy` against it.
pub fn audit(
    data: &SfmDataset,
    nuisance: &NuisanceConfig,
    policy: &BnPolicy,
    bootstrap: &BootstrapConfig,
) -> Result<AuditReport> {
    policy.validate()?;
    if policy.needs_outcome() {
        data.target(Target::Y).map_err(|_| Error::MissingOutcome)?;
    }
    let report = bootstrap_decomposition(data, nuisance, DecompositionMode::Thm1, bootstrap)?;
    let mirrored = if policy.mirrored {
        Some(bootstrap_decomposition(
            &data.swap_groups(),
            nuisance,
            DecompositionMode::Thm1,
            bootstrap,
        )?)
    } else {
        None
    };
    audit_report(report, mirrored, policy)
}

fn verdict(report: &DecompositionReport, kind: EffectKind, policy: &BnPolicy, mirrored: bool) -> Result<AuditVerdict> {
    let opts = policy.options();
    let s = Term::new(kind, Target::S);
    let m = Term::new(kind, Target::M);
    let reference = Term::new(kind, if policy.strict { Target::Yhat } else { Target::Y });
    let designation = policy.designation(kind);
    let mut checks = vec![];
    let mut unconstrained = None;
    match designation {
        Designation::None => {
            checks.push(test_zero(report, s, &opts)?);
            checks.push(test_zero(report, m, &opts)?);
        }
        Designation::Weak => {
            checks.push(test_equal(report, s, reference, &opts)?);
            checks.push(test_zero(report, m, &opts)?);
        }
        Designation::Strong => {
            checks.push(test_equal(report, s, reference, &opts)?);
            let e = report
                .effect(kind, Target::M)
                .ok_or_else(|| Error::MissingReplicates(m.to_string()))?;
            unconstrained = Some(Unconstrained {
                term: m,
                estimate: e.value,
                ci: e.ci,
            });
        }
    }
    let outcome = if checks.iter().all(HypothesisResult::is_consistent) {
        Outcome::Pass
    } else {
        Outcome::Fail
    };
    Ok(AuditVerdict {
        pathway: kind,
        designation,
        mirrored,
        checks,
        unconstrained,
        outcome,
    })
}

/// Checks `policy` against already bootstrapped decompositions; `mirrored`
/// is the decomposition with the groups exchanged.
pub fn audit_report(
    report: DecompositionReport,
    mirrored: Option<DecompositionReport>,
    policy: &BnPolicy,
) -> Result<AuditReport> {
    policy.validate()?;
    let mut verdicts = vec![];
    for k in EffectKind::PATHWAYS {
        verdicts.push(verdict(&report, k, policy, false)?);
    }
    if let Some(r) = &mirrored {
        for k in EffectKind::PATHWAYS {
            verdicts.push(verdict(r, k, policy, true)?);
        }
    }
    let overall = if verdicts.iter().all(|v| v.outcome == Outcome::Pass) {
        Overall::Success
    } else {
        Overall::Fail
    };
    let mut out = AuditReport {
        policy: *policy,
        verdicts,
        overall,
        narrative: vec![],
        decomposition: report,
        mirrored_decomposition: mirrored,
    };
    out.narrative = narrative(&out);
    Ok(out)
}

/// Four decimals, without a sign on values that round to zero.
fn num(v: f64) -> String {
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

fn fmt_ci(ci: &Interval) -> String {
    format!("{:.0}% CI [{}, {}]", ci.level * 100.0, num(ci.low), num(ci.high))
}

fn narrative(report: &AuditReport) -> Vec<String> {
    let mut lines = vec![];
    for v in &report.verdicts {
        let outcome = match v.outcome {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
        };
        let tag = if v.mirrored { " (x1 baseline)" } else { "" };
        lines.push(format!("{}{tag} [{}]: {outcome}", v.pathway, v.designation.name()));
        for c in &v.checks {
            let what = match c.statement {
                Statement::Zero { .. } => "estimate",
                Statement::Equal { .. } => "difference",
            };
            let decision = if c.is_consistent() { "consistent" } else { "violated" };
            lines.push(format!(
                "  {}: {what} {}, {} -> {decision}",
                c.statement,
                num(c.estimate),
                fmt_ci(&c.ci_of_difference)
            ));
            if let (Statement::Zero { term }, false) = (c.statement, c.is_consistent()) {
                if term.target == Target::M {
                    let inherited = if v.mirrored {
                        report.mirrored_decomposition.as_ref()
                    } else {
                        Some(&report.decomposition)
                    }
                    .and_then(|r| r.value(v.pathway, Target::S))
                    .unwrap_or(0.0);
                    let word = if c.estimate * inherited >= 0.0 {
                        "amplification"
                    } else {
                        "amelioration"
                    };
                    lines.push(format!(
                        "  margin complement {word} along {}: {} on top of {} inherited from the score",
                        v.pathway,
                        num(c.estimate),
                        num(inherited)
                    ));
                }
            }
        }
        if let Some(u) = &v.unconstrained {
            let ci = u.ci.as_ref().map(|c| format!(", {}", fmt_ci(c))).unwrap_or_default();
            lines.push(format!("  {} = {}{ci} (unconstrained, reported only)", u.term, num(u.estimate)));
        }
    }
    lines
}

/// Plain-text summary of an audit.
pub fn explain(report: &AuditReport) -> String {
    let mut out = String::new();
    let overall = match report.overall {
        Overall::Success => "SUCCESS",
        Overall::Fail => "FAIL",
    };
    let p = &report.policy;
    let _ = writeln!(
        out,
        "business-necessity audit: {overall} (DE={}, IE={}, SE={}, level {}{}{})",
        p.de.name(),
        p.ie.name(),
        p.se.name(),
        p.level,
        p.epsilon.map(|e| format!(", epsilon {e}")).unwrap_or_default(),
        if p.strict { ", strict" } else { "" }
    );
    for line in &report.narrative {
        let _ = writeln!(out, "{line}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_json() {
        let p = BnPolicy::from_json(r#"{"DE": "none", "IE": "weak", "SE": "strong", "level": 0.9}"#).unwrap();
        assert_eq!(p.de, Designation::None);
        assert_eq!(p.se, Designation::Strong);
        assert_eq!(p.level, 0.9);
        assert!(!p.strict && p.epsilon.is_none());
        let d = BnPolicy::from_json(r#"{"DE": "none", "IE": "none", "SE": "none"}"#).unwrap();
        assert_eq!(d.level, 0.95);
        for bad in [
            r#"{"DE": "none", "IE": "none"}"#,
            r#"{"DE": "maybe", "IE": "none", "SE": "none"}"#,
            r#"{"DE": "none", "IE": "none", "SE": "none", "level": 2}"#,
            r#"{"DE": "none", "IE": "none", "SE": "none", "extra": 1}"#,
            "not json",
        ] {
            assert!(BnPolicy::from_json(bad).is_err(), "{bad}");
        }
    }
}
