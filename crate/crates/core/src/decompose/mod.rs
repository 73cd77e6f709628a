//! Plug-in estimators of the x-specific direct, indirect and spurious
//! effects, total variation, and the decomposition of TV(ŷ) into pathway
//! contributions inherited from S (or Y) and introduced by M.

mod idformula;
mod influence;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use idformula::{id_formula_effect, id_formula_effect_from};
pub use influence::{influence_by_stratum, sample_influence, InfluenceTable, SampleInfluence, StratumInfluence};

use crate::data::{Group, ScoreSource, SfmDataset, Target};
use crate::error::{Error, Result};
use crate::nuisance::{self, Encoded, NuisanceConfig, NuisanceDiagnostics, NuisanceSet, Propensities, PROPENSITY_FLOOR};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EffectKind {
    De,
    Ie,
    Se,
    Tv,
}

impl EffectKind {
    pub const PATHWAYS: [EffectKind; 3] = [EffectKind::De, EffectKind::Ie, EffectKind::Se];

    pub fn name(self) -> &'static str {
        match self {
            EffectKind::De => "DE",
            EffectKind::Ie => "IE",
            EffectKind::Se => "SE",
            EffectKind::Tv => "TV",
        }
    }

    /// Transition and conditioning group under the x0 baseline.
    pub fn transition(self) -> (Transition, Option<Group>) {
        match self {
            EffectKind::De => (Transition::new(Group::X0, Group::X1), Some(Group::X0)),
            EffectKind::Ie => (Transition::new(Group::X1, Group::X0), Some(Group::X0)),
            EffectKind::Se => (Transition::new(Group::X1, Group::X0), None),
            EffectKind::Tv => (Transition::new(Group::X0, Group::X1), None),
        }
    }

    /// Sign with which the term enters TV = DE - IE - SE.
    pub fn sign(self) -> f64 {
        match self {
            EffectKind::De | EffectKind::Tv => 1.0,
            EffectKind::Ie | EffectKind::Se => -1.0,
        }
    }

    pub fn parse(s: &str) -> Result<EffectKind> {
        match s.to_ascii_uppercase().as_str() {
            "DE" => Ok(EffectKind::De),
            "IE" => Ok(EffectKind::Ie),
            "SE" => Ok(EffectKind::Se),
            "TV" => Ok(EffectKind::Tv),
            _ => Err(Error::InvalidConfig(format!("unknown effect `{s}`"))),
        }
    }
}

impl fmt::Display for EffectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: Group,
    pub to: Group,
}

impl Transition {
    pub fn new(from: Group, to: Group) -> Self {
        Transition { from, to }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
    pub level: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.low <= v && v <= self.high
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub kind: EffectKind,
    pub target: Target,
    pub transition: Transition,
    pub conditioning: Option<Group>,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<Interval>,
    /// Per-row summands (without 1/n) for DE, IE and SE.
    #[serde(skip)]
    pub influences: Option<Vec<f64>>,
}

impl EffectEstimate {
    fn new(kind: EffectKind, target: Target, value: f64, influences: Option<Vec<f64>>) -> Self {
        let (transition, conditioning) = kind.transition();
        EffectEstimate {
            kind,
            target,
            transition,
            conditioning,
            value,
            ci: None,
            influences,
        }
    }

    /// `<kind>_<target>`, e.g. `de_s`.
    pub fn key(&self) -> String {
        term_key(self.kind, self.target)
    }
}

pub fn term_key(kind: EffectKind, target: Target) -> String {
    format!("{}_{}", kind.name().to_ascii_lowercase(), target.name())
}

/// Per-row summands of the three pathway estimators for one target.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct RowEffects {
    pub de: Vec<f64>,
    pub ie: Vec<f64>,
    pub se: Vec<f64>,
}

impl RowEffects {
    pub fn get(&self, kind: EffectKind) -> &[f64] {
        match kind {
            EffectKind::De => &self.de,
            EffectKind::Ie => &self.ie,
            EffectKind::Se => &self.se,
            EffectKind::Tv => unreachable!("TV has no row summands"),
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Encoded rows and propensities shared by every target.
pub(crate) struct RowContext {
    enc: Encoded,
    props: Propensities,
    p0: f64,
    p1: f64,
    /// Row multiplicities when rows sharing a stratum were merged.
    weights: Option<Vec<f64>>,
}

impl RowContext {
    pub fn new(data: &SfmDataset, nuisances: &NuisanceSet) -> Result<Self> {
        Self::build(data, nuisances, false)
    }

    /// With stratum-keyed nuisances every summand depends on the row only
    /// through its stratum, so rows can be merged when only means are needed.
    pub fn build(data: &SfmDataset, nuisances: &NuisanceSet, merge: bool) -> Result<Self> {
        let mut enc = nuisances.encode(data)?;
        let mut weights = None;
        if merge && nuisances.is_keyed() {
            let (merged, counts) = enc.collapse(nuisances.key_span());
            enc = merged;
            weights = Some(counts);
        }
        let rows = if nuisances.is_keyed() { enc.zw_keys.len() } else { data.n() };
        let props = nuisances.propensities_encoded(&enc, rows)?;
        let p1 = props.x1;
        let p0 = 1.0 - p1;
        if p0 <= PROPENSITY_FLOOR {
            return Err(Error::DegenerateAttribute(format!("P(x0) = {p0}")));
        }
        if p1 <= PROPENSITY_FLOOR {
            return Err(Error::DegenerateAttribute(format!("P(x1) = {p1}")));
        }
        Ok(RowContext {
            enc,
            props,
            p0,
            p1,
            weights,
        })
    }

    /// Means of the three summands.
    pub fn means(&self, nuisances: &NuisanceSet, target: Target) -> Result<[f64; 3]> {
        let r = self.row_effects(nuisances, target)?;
        Ok(match &self.weights {
            None => [mean(&r.de), mean(&r.ie), mean(&r.se)],
            Some(w) => {
                let total: f64 = w.iter().sum();
                let wmean = |v: &[f64]| v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
                [wmean(&r.de), wmean(&r.ie), wmean(&r.se)]
            }
        })
    }

    pub fn row_effects(&self, nuisances: &NuisanceSet, target: Target) -> Result<RowEffects> {
        let n = self.props.x1_given_z.len();
        let (f0, f1) = nuisances.predict_both_encoded(&self.enc, n, target)?;
        let (p0, p1) = (self.p0, self.p1);
        let mut out = RowEffects {
            de: Vec::with_capacity(n),
            ie: Vec::with_capacity(n),
            se: Vec::with_capacity(n),
        };
        for i in 0..n {
            let x1_zw = self.props.x1_given_zw[i];
            let x0_zw = 1.0 - x1_zw;
            let x1_z = self.props.x1_given_z[i];
            let x0_z = 1.0 - x1_z;
            let mediated = x1_zw / x1_z * x0_z / p0;
            out.de.push((f1[i] - f0[i]) * x0_zw / p0);
            out.ie.push(f1[i] * (x0_zw / p0 - mediated));
            out.se.push(f1[i] * (mediated - x1_zw / p1));
        }
        Ok(out)
    }
}

pub(crate) fn row_effects(data: &SfmDataset, nuisances: &NuisanceSet, target: Target) -> Result<RowEffects> {
    RowContext::new(data, nuisances)?.row_effects(nuisances, target)
}

/// Plug-in estimate of one pathway effect, with its per-row influences.
pub fn estimate_effect(
    data: &SfmDataset,
    nuisances: &NuisanceSet,
    kind: EffectKind,
    target: Target,
) -> Result<EffectEstimate> {
    if kind == EffectKind::Tv {
        return tv(data, target);
    }
    let rows = row_effects(data, nuisances, target)?;
    let v = rows.get(kind).to_vec();
    Ok(EffectEstimate::new(kind, target, mean(&v), Some(v)))
}

/// `mean(T | x1) - mean(T | x0)`.
pub fn tv(data: &SfmDataset, target: Target) -> Result<EffectEstimate> {
    let t = data.target(target)?;
    // centring on the first value keeps a constant column at exactly 0
    let origin = t[0];
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for (g, v) in data.x().iter().zip(t) {
        sums[g.index()] += v - origin;
        counts[g.index()] += 1;
    }
    for g in [Group::X0, Group::X1] {
        if counts[g.index()] == 0 {
            return Err(Error::DegenerateAttribute(format!("group {g} is empty")));
        }
    }
    let value = sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64;
    Ok(EffectEstimate::new(EffectKind::Tv, target, value, None))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecompositionMode {
    /// TV(ŷ) split over S and M.
    #[default]
    Thm1,
    /// TV(ŷ) split over Y and M.
    Cor1,
}

impl DecompositionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "thm1" => Ok(DecompositionMode::Thm1),
            "cor1" => Ok(DecompositionMode::Cor1),
            _ => Err(Error::InvalidConfig(format!("unknown mode `{s}` (thm1 or cor1)"))),
        }
    }

    /// Variable carrying the inherited part of the disparity.
    pub fn inherited(self) -> Target {
        match self {
            DecompositionMode::Thm1 => Target::S,
            DecompositionMode::Cor1 => Target::Y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DecompositionMode::Thm1 => "thm1",
            DecompositionMode::Cor1 => "cor1",
        }
    }
}

/// A term's signed share of TV(ŷ): DE, -IE, -SE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub kind: EffectKind,
    pub target: Target,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<Interval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInfo {
    pub replicates: usize,
    pub dropped: usize,
    pub level: f64,
    pub seed: u64,
    pub refit_nuisances: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub mode: DecompositionMode,
    pub n: usize,
    pub threshold: Option<f64>,
    pub tv_yhat: EffectEstimate,
    /// DE, IE, SE of the inherited variable and of M, in that order.
    pub terms: Vec<EffectEstimate>,
    pub contributions: Vec<Contribution>,
    /// Every kind (including TV) for every available target.
    pub effects: Vec<EffectEstimate>,
    /// `TV(ŷ) - Σ sign · term` over the six terms.
    pub additivity_residual: f64,
    /// Largest `|CE(ŷ) - CE(s) - CE(m)|` over pathways, when S is present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapInfo>,
    pub diagnostics: NuisanceDiagnostics,
    /// Per-replicate values of every effect, when bootstrapped.
    #[serde(skip)]
    pub replicates: Option<crate::inference::ReplicateMatrix>,
}

impl DecompositionReport {
    pub fn effect(&self, kind: EffectKind, target: Target) -> Option<&EffectEstimate> {
        self.effects.iter().find(|e| e.kind == kind && e.target == target)
    }

    pub fn value(&self, kind: EffectKind, target: Target) -> Option<f64> {
        self.effect(kind, target).map(|e| e.value)
    }

    /// Flat `de_s -> value` view of every effect.
    pub fn values(&self) -> BTreeMap<String, f64> {
        self.effects.iter().map(|e| (e.key(), e.value)).collect()
    }

    /// Copies intervals from `effects` onto the term, TV and contribution views.
    pub(crate) fn sync_intervals(&mut self) {
        let lookup = |k: EffectKind, t: Target, effects: &[EffectEstimate]| {
            effects.iter().find(|e| e.kind == k && e.target == t).and_then(|e| e.ci)
        };
        for term in &mut self.terms {
            term.ci = lookup(term.kind, term.target, &self.effects);
        }
        self.tv_yhat.ci = lookup(EffectKind::Tv, Target::Yhat, &self.effects);
        for c in &mut self.contributions {
            c.ci = lookup(c.kind, c.target, &self.effects).map(|ci| {
                if c.kind.sign() < 0.0 {
                    Interval {
                        low: -ci.high,
                        high: -ci.low,
                        level: ci.level,
                    }
                } else {
                    ci
                }
            });
        }
    }
}

/// Targets required by a mode; the rest are included when available.
pub(crate) fn targets_for(data: &SfmDataset, mode: DecompositionMode) -> Result<Vec<Target>> {
    for t in [mode.inherited(), Target::M, Target::Yhat] {
        data.target(t)?;
    }
    Ok(data.available_targets())
}

/// Applies the configured score source: with `outcome_fit`, S is replaced by
/// the in-sample frequency fit of Y (and Ŷ, M re-derived).
pub fn prepare(data: &SfmDataset, config: &NuisanceConfig) -> Result<SfmDataset> {
    match data.schema().score_source {
        ScoreSource::Column => Ok(data.clone()),
        ScoreSource::OutcomeFit => {
            data.target(Target::Y)?;
            nuisance::outcome_fit_score(data, config)
        }
    }
}

/// Point estimates of every kind for every target in `targets`, keyed in a
/// fixed order (pathway kinds, then TV; targets in the given order).
pub(crate) fn effect_values(
    data: &SfmDataset,
    nuisances: &NuisanceSet,
    targets: &[Target],
    keep_influences: bool,
) -> Result<Vec<EffectEstimate>> {
    let ctx = RowContext::build(data, nuisances, !keep_influences)?;
    let mut out = vec![];
    for &t in targets {
        if keep_influences {
            let rows = ctx.row_effects(nuisances, t)?;
            for k in EffectKind::PATHWAYS {
                let v = rows.get(k);
                out.push(EffectEstimate::new(k, t, mean(v), Some(v.to_vec())));
            }
        } else {
            let means = ctx.means(nuisances, t)?;
            for (k, v) in EffectKind::PATHWAYS.into_iter().zip(means) {
                out.push(EffectEstimate::new(k, t, v, None));
            }
        }
        out.push(tv(data, t)?);
    }
    Ok(out)
}

/// Decomposition of TV(ŷ) from fitted nuisances.
pub fn decompose(
    data: &SfmDataset,
    nuisances: &NuisanceSet,
    mode: DecompositionMode,
) -> Result<DecompositionReport> {
    let targets = targets_for(data, mode)?;
    let effects = effect_values(data, nuisances, &targets, true)?;
    Ok(assemble(data, mode, effects, nuisances.diagnostics().clone()))
}

/// Fits nuisances for every available target and decomposes.
pub fn decompose_with(
    data: &SfmDataset,
    config: &NuisanceConfig,
    mode: DecompositionMode,
) -> Result<DecompositionReport> {
    let data = prepare(data, config)?;
    let targets = targets_for(&data, mode)?;
    let nuisances = NuisanceSet::fit(&data, &targets, config)?;
    decompose(&data, &nuisances, mode)
}

pub(crate) fn assemble(
    data: &SfmDataset,
    mode: DecompositionMode,
    effects: Vec<EffectEstimate>,
    diagnostics: NuisanceDiagnostics,
) -> DecompositionReport {
    let get = |k: EffectKind, t: Target| {
        effects
            .iter()
            .find(|e| e.kind == k && e.target == t)
            .cloned()
            .expect("effect computed")
    };
    let a = mode.inherited();
    let mut terms = vec![];
    for k in EffectKind::PATHWAYS {
        terms.push(get(k, a));
        terms.push(get(k, Target::M));
    }
    let tv_yhat = get(EffectKind::Tv, Target::Yhat);
    let explained: f64 = terms.iter().map(|t| t.kind.sign() * t.value).sum();
    let contributions = terms
        .iter()
        .map(|t| Contribution {
            kind: t.kind,
            target: t.target,
            value: t.kind.sign() * t.value,
            ci: None,
        })
        .collect();
    let margin_residual = data.has(Target::S).then(|| {
        EffectKind::PATHWAYS
            .iter()
            .map(|&k| (get(k, Target::Yhat).value - get(k, Target::S).value - get(k, Target::M).value).abs())
            .fold(0.0, f64::max)
    });
    DecompositionReport {
        mode,
        n: data.n(),
        threshold: data.threshold(),
        additivity_residual: tv_yhat.value - explained,
        tv_yhat,
        terms,
        contributions,
        effects,
        margin_residual,
        bootstrap: None,
        diagnostics,
        replicates: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ThresholdSpec;
    use crate::scm::{BuiltinModel, ScmSpec};

    fn hiring() -> SfmDataset {
        ScmSpec::builtin(BuiltinModel::HiringBasic { p0: 0.49, p1: 0.51 })
            .unwrap()
            .sample_dataset(100_000, 42, ThresholdSpec::fixed(0.5))
            .unwrap()
    }

    #[test]
    fn hiring_basic_decomposition() {
        let d = hiring();
        let r = decompose_with(&d, &NuisanceConfig::frequency(), DecompositionMode::Thm1).unwrap();
        assert_eq!(r.tv_yhat.value, 1.0);
        assert_eq!(r.value(EffectKind::De, Target::Yhat), Some(1.0));
        assert!((r.value(EffectKind::De, Target::S).unwrap() - 0.02).abs() < 1e-9);
        assert!((r.value(EffectKind::De, Target::M).unwrap() - 0.98).abs() < 1e-9);
        for k in [EffectKind::Ie, EffectKind::Se] {
            for t in Target::ALL {
                assert_eq!(r.value(k, t), Some(0.0), "{k} {t}");
            }
        }
        assert!(r.additivity_residual.abs() <= 1e-10);
        let s_tv = tv(&d, Target::S).unwrap().value;
        assert!((s_tv - 0.02).abs() < 1e-9);
    }

    #[test]
    fn constant_target_has_zero_tv() {
        let d = hiring();
        let d = d.with_score(vec![0.7; d.n()]).unwrap();
        assert_eq!(tv(&d, Target::S).unwrap().value, 0.0);
    }

    #[test]
    fn influences_average_to_estimate() {
        let d = hiring();
        let set = NuisanceSet::fit(&d, &[Target::Y], &NuisanceConfig::frequency()).unwrap();
        for k in EffectKind::PATHWAYS {
            let e = estimate_effect(&d, &set, k, Target::Y).unwrap();
            let inf = e.influences.as_ref().unwrap();
            assert!((mean(inf) - e.value).abs() <= 1e-12);
        }
        let de = estimate_effect(&d, &set, EffectKind::De, Target::Y).unwrap();
        let inf = de.influences.unwrap();
        assert!(inf.iter().all(|v| *v == inf[0]));
    }

    #[test]
    fn cor1_requires_outcome() {
        let mut schema = crate::data::SfmSchema::new("x", "0", "1");
        schema.s_column = Some("s".into());
        schema.threshold = Some(ThresholdSpec::fixed(0.5));
        let csv = "x,s\n0,0.2\n1,0.7\n0,0.4\n1,0.9\n";
        let d = crate::data::load_dataset(csv.as_bytes(), &schema).unwrap();
        let err = decompose_with(&d, &NuisanceConfig::frequency(), DecompositionMode::Cor1).unwrap_err();
        assert_eq!(err, Error::MissingOutcome);
        assert!(decompose_with(&d, &NuisanceConfig::frequency(), DecompositionMode::Thm1).is_ok());
    }
}
