//! Nuisance quantities for the plug-in estimators: outcome regressions
//! `f(x, z, w)` and propensities `P̂(x)`, `P̂(x | z)`, `P̂(x | z, w)`.

mod encode;
mod models;
mod regression;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use models::{ModelMethod, OutcomeModel, PropensityLevel, PropensityModel, PROPENSITY_FLOOR};

use crate::data::{Group, Row, SfmDataset, Target};
use crate::error::{Error, Result};
pub(crate) use encode::Encoded;
use encode::Encoder;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NuisanceMethod {
    /// Stratum frequencies (numeric covariates binned).
    Frequency,
    /// Logistic propensities and binary targets, linear S and M.
    Logistic,
    /// Frequency when every covariate is categorical, otherwise logistic.
    #[default]
    Auto,
}

impl NuisanceMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "frequency" => Ok(NuisanceMethod::Frequency),
            "logistic" => Ok(NuisanceMethod::Logistic),
            "auto" => Ok(NuisanceMethod::Auto),
            _ => Err(Error::InvalidConfig(format!("unknown nuisance method `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuisanceConfig {
    pub method: NuisanceMethod,
    /// Pseudo-counts toward the global mean (frequency only).
    pub smoothing: f64,
    /// Equal-frequency bins for numeric covariates (frequency only).
    pub bins: usize,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            method: NuisanceMethod::Auto,
            smoothing: 0.0,
            bins: 5,
        }
    }
}

impl NuisanceConfig {
    pub fn frequency() -> Self {
        NuisanceConfig {
            method: NuisanceMethod::Frequency,
            ..Default::default()
        }
    }

    pub fn logistic() -> Self {
        NuisanceConfig {
            method: NuisanceMethod::Logistic,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::InvalidConfig("smoothing must be a finite value >= 0".into()));
        }
        if self.bins == 0 {
            return Err(Error::InvalidConfig("bins must be positive".into()));
        }
        Ok(())
    }

    fn uses_frequency(&self, data: &SfmDataset) -> bool {
        match self.method {
            NuisanceMethod::Frequency => true,
            NuisanceMethod::Logistic => false,
            NuisanceMethod::Auto => data.all_categorical(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDiagnostics {
    pub model: String,
    pub method: ModelMethod,
    pub iterations: usize,
    pub converged: bool,
    /// Training-row propensities moved onto `[ε, 1 − ε]`.
    pub floored: usize,
    /// Training-row regression predictions clamped into the target range.
    pub clamped: usize,
    /// Distinct (x, stratum) cells needed for prediction but never observed.
    pub empty_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuisanceDiagnostics {
    pub requested: NuisanceMethod,
    pub smoothing: f64,
    pub bins: usize,
    pub models: Vec<ModelDiagnostics>,
}

/// Floored propensities of every row of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Propensities {
    pub x1: f64,
    pub x1_given_z: Vec<f64>,
    pub x1_given_zw: Vec<f64>,
}

/// All nuisance models fitted on one dataset snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct NuisanceSet {
    encoder: Arc<Encoder>,
    frequency: bool,
    outcomes: Vec<OutcomeModel>,
    marginal: PropensityModel,
    given_z: PropensityModel,
    given_zw: PropensityModel,
    diagnostics: NuisanceDiagnostics,
}

fn level_name(level: PropensityLevel) -> &'static str {
    match level {
        PropensityLevel::Marginal => "propensity:marginal",
        PropensityLevel::GivenZ => "propensity:given_z",
        PropensityLevel::GivenZw => "propensity:given_zw",
    }
}

impl NuisanceSet {
    /// Fits outcome models for `targets` and propensities at all three levels.
    pub fn fit(data: &SfmDataset, targets: &[Target], config: &NuisanceConfig) -> Result<NuisanceSet> {
        config.validate()?;
        let frequency = config.uses_frequency(data);
        let encoder = Arc::new(Encoder::fit(data, config.bins)?);
        let enc = encoder.encode(data, frequency, !frequency)?;
        let n = data.n();
        let mut models = vec![];
        let mut outcomes = vec![];
        for &t in targets {
            if outcomes.iter().any(|m: &OutcomeModel| m.target() == t) {
                continue;
            }
            let method = match (frequency, t) {
                (true, _) => ModelMethod::Frequency,
                (false, Target::Y | Target::Yhat) => ModelMethod::Logistic,
                (false, Target::S | Target::M) => ModelMethod::Linear,
            };
            let model = OutcomeModel::fit(data, t, method, config.smoothing, encoder.clone(), &enc)?;
            let mut clamped = 0;
            if !frequency {
                for g in [Group::X0, Group::X1] {
                    clamped += model.predict_all(&enc, n, g)?.1;
                }
            }
            models.push(ModelDiagnostics {
                model: format!("outcome:{}", t.name()),
                method: model.method(),
                iterations: model.iterations(),
                converged: true,
                floored: 0,
                clamped,
                empty_cells: model.empty_cells(&enc),
            });
            outcomes.push(model);
        }
        let prop_method = if frequency {
            ModelMethod::Frequency
        } else {
            ModelMethod::Logistic
        };
        let mut fit_level = |level| -> Result<PropensityModel> {
            let m = PropensityModel::fit(data, level, prop_method, config.smoothing, encoder.clone(), &enc)?;
            let (_, floored) = m.predict_all(&enc, n)?;
            models.push(ModelDiagnostics {
                model: level_name(level).into(),
                method: m.method(),
                iterations: m.iterations(),
                converged: true,
                floored,
                clamped: 0,
                empty_cells: 0,
            });
            Ok(m)
        };
        let marginal = fit_level(PropensityLevel::Marginal)?;
        let given_z = fit_level(PropensityLevel::GivenZ)?;
        let given_zw = fit_level(PropensityLevel::GivenZw)?;
        Ok(NuisanceSet {
            encoder,
            frequency,
            outcomes,
            marginal,
            given_z,
            given_zw,
            diagnostics: NuisanceDiagnostics {
                requested: config.method,
                smoothing: config.smoothing,
                bins: config.bins,
                models,
            },
        })
    }

    pub fn diagnostics(&self) -> &NuisanceDiagnostics {
        &self.diagnostics
    }

    pub fn outcome(&self, target: Target) -> Result<&OutcomeModel> {
        self.outcomes
            .iter()
            .find(|m| m.target() == target)
            .ok_or_else(|| Error::MissingNuisance(format!("outcome model for {target}")))
    }

    pub fn propensity(&self, level: PropensityLevel) -> &PropensityModel {
        match level {
            PropensityLevel::Marginal => &self.marginal,
            PropensityLevel::GivenZ => &self.given_z,
            PropensityLevel::GivenZw => &self.given_zw,
        }
    }

    pub fn predict(&self, target: Target, row: &Row) -> Result<f64> {
        self.outcome(target)?.predict(row)
    }

    /// Whether every model is a function of the stratum key alone.
    pub(crate) fn is_keyed(&self) -> bool {
        self.frequency
    }

    pub(crate) fn key_span(&self) -> u64 {
        self.encoder.span()
    }

    /// Encodes `data` the way this set's models consume it.
    pub(crate) fn encode(&self, data: &SfmDataset) -> Result<Encoded> {
        self.encoder.encode(data, self.frequency, !self.frequency)
    }

    /// `f(x, z_i, w_i)` for every row of `data`, with X set to `x`.
    pub fn predict_rows(&self, data: &SfmDataset, target: Target, x: Group) -> Result<Vec<f64>> {
        let model = self.outcome(target)?;
        Ok(model.predict_all(&self.encode(data)?, data.n(), x)?.0)
    }

    /// Both counterfactual predictions `(f(x0, ·), f(x1, ·))` for every row.
    pub fn predict_both(&self, data: &SfmDataset, target: Target) -> Result<(Vec<f64>, Vec<f64>)> {
        self.predict_both_encoded(&self.encode(data)?, data.n(), target)
    }

    pub(crate) fn predict_both_encoded(&self, enc: &Encoded, n: usize, target: Target) -> Result<(Vec<f64>, Vec<f64>)> {
        let model = self.outcome(target)?;
        Ok((model.predict_all(enc, n, Group::X0)?.0, model.predict_all(enc, n, Group::X1)?.0))
    }

    pub fn propensity_rows(&self, data: &SfmDataset) -> Result<Propensities> {
        self.propensities_encoded(&self.encode(data)?, data.n())
    }

    pub(crate) fn propensities_encoded(&self, enc: &Encoded, n: usize) -> Result<Propensities> {
        let (x1, _) = self.marginal.predict_all(enc, 1)?;
        Ok(Propensities {
            x1: x1[0],
            x1_given_z: self.given_z.predict_all(enc, n)?.0,
            x1_given_zw: self.given_zw.predict_all(enc, n)?.0,
        })
    }
}

/// Replaces the score column with the in-sample frequency fit of Y at each
/// row's own (x, z, w), re-deriving Ŷ and M.
pub fn outcome_fit_score(data: &SfmDataset, config: &NuisanceConfig) -> Result<SfmDataset> {
    let cfg = NuisanceConfig {
        method: NuisanceMethod::Frequency,
        ..*config
    };
    let set = NuisanceSet::fit(data, &[Target::Y], &cfg)?;
    let (f0, f1) = set.predict_both(data, Target::Y)?;
    let s = data
        .x()
        .iter()
        .enumerate()
        .map(|(i, g)| if g.is_x1() { f1[i] } else { f0[i] })
        .collect();
    data.with_score(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Columns, Covariate, SfmSchema, ThresholdSpec};
    use crate::scm::{BuiltinModel, ScmSpec};

    fn hiring(n: usize) -> SfmDataset {
        ScmSpec::builtin(BuiltinModel::HiringBasic { p0: 0.49, p1: 0.51 })
            .unwrap()
            .sample_dataset(n, 42, ThresholdSpec::fixed(0.5))
            .unwrap()
    }

    fn random(seed: u64, n: usize) -> (ScmSpec, SfmDataset) {
        let m = ScmSpec::builtin(BuiltinModel::RandomDiscrete {
            z_levels: 3,
            w_levels: 3,
            seed,
            no_direct: false,
        })
        .unwrap();
        let d = m.sample_dataset(n, seed + 100, ThresholdSpec::fixed(0.5)).unwrap();
        (m, d)
    }

    fn row(x: Group, z: &[&str], w: &[&str]) -> Row {
        let lab = |v: &[&str]| v.iter().map(|s| crate::data::Value::Label(s.to_string())).collect();
        Row { x, z: lab(z), w: lab(w) }
    }

    #[test]
    fn hiring_frequency_outcome() {
        let n = 100_000;
        let d = hiring(n);
        let set = NuisanceSet::fit(&d, &[Target::Y], &NuisanceConfig::frequency()).unwrap();
        let tol = 4.0 / (n as f64).sqrt();
        assert!((set.predict(Target::Y, &row(Group::X1, &[], &[])).unwrap() - 0.51).abs() < tol);
        assert!((set.predict(Target::Y, &row(Group::X0, &[], &[])).unwrap() - 0.49).abs() < tol);
        let p = set.propensity(PropensityLevel::Marginal).predict(&row(Group::X0, &[], &[])).unwrap();
        assert!((p - 0.5).abs() < tol);
    }

    #[test]
    fn constant_target_every_method() {
        let (_, d) = random(1, 2000);
        let d = d.with_score(vec![0.3; d.n()]).unwrap();
        for cfg in [NuisanceConfig::frequency(), NuisanceConfig::logistic()] {
            let set = NuisanceSet::fit(&d, &[Target::S], &cfg).unwrap();
            for g in [Group::X0, Group::X1] {
                assert!(set.predict_rows(&d, Target::S, g).unwrap().iter().all(|v| *v == 0.3));
            }
        }
    }

    #[test]
    fn frequency_matches_generator_tables() {
        let (m, d) = random(3, 200_000);
        let set = NuisanceSet::fit(&d, &[Target::Y], &NuisanceConfig::frequency()).unwrap();
        let mut worst: f64 = 0.0;
        for g in [Group::X0, Group::X1] {
            for z in 0..3u32 {
                for w in 0..3u32 {
                    let r = row(g, &[&z.to_string()], &[&w.to_string()]);
                    let f = set.predict(Target::Y, &r).unwrap();
                    worst = worst.max((f - m.score(g, &[z], &[w])).abs());
                }
            }
        }
        assert!(worst <= 0.05, "worst {worst}");
    }

    #[test]
    fn propensity_given_z_matches_joint_table() {
        let (m, d) = random(5, 100_000);
        let set = NuisanceSet::fit(&d, &[], &NuisanceConfig::frequency()).unwrap();
        for z in 0..3u32 {
            let p = |g| m.xz.iter().find(|a| a.x == g && a.z == [z]).unwrap().p;
            let truth = p(Group::X1) / (p(Group::X0) + p(Group::X1));
            let r = row(Group::X0, &[&z.to_string()], &["0"]);
            let est = set.propensity(PropensityLevel::GivenZ).predict(&r).unwrap();
            assert!((est - truth).abs() < 0.05);
        }
    }

    #[test]
    fn frequency_linearity_and_total_probability() {
        let (_, d) = random(8, 20_000);
        let set = NuisanceSet::fit(&d, &Target::ALL, &NuisanceConfig::frequency()).unwrap();
        for g in [Group::X0, Group::X1] {
            let yhat = set.predict_rows(&d, Target::Yhat, g).unwrap();
            let s = set.predict_rows(&d, Target::S, g).unwrap();
            let m = set.predict_rows(&d, Target::M, g).unwrap();
            for i in 0..d.n() {
                assert!((yhat[i] - s[i] - m[i]).abs() < 1e-12);
            }
        }
        let props = set.propensity_rows(&d).unwrap();
        let total = props.x1_given_z.iter().sum::<f64>() / d.n() as f64;
        assert!((total - props.x1).abs() < 1e-12);
    }

    #[test]
    fn independence_case_propensities_flat() {
        let d = ScmSpec::builtin(BuiltinModel::HiringExtended {
            alpha: 0.2,
            beta: 0.45,
            lambda: 0.1,
        })
        .unwrap()
        .sample_dataset(100_000, 4, ThresholdSpec::fixed(0.5))
        .unwrap();
        let set = NuisanceSet::fit(&d, &[], &NuisanceConfig::frequency()).unwrap();
        let p = set.propensity_rows(&d).unwrap();
        // W depends on X here, so only P(x1 | z) with empty Z is flat
        assert!(p.x1_given_z.iter().all(|v| (v - p.x1).abs() <= 0.05));
    }

    fn tiny(z: Vec<&str>, y: Vec<f64>) -> SfmDataset {
        let n = z.len();
        let x = (0..n).map(|i| Group::from_bool(i % 2 == 1)).collect();
        let levels: Vec<String> = {
            let mut l: Vec<String> = z.iter().map(|s| s.to_string()).collect();
            l.sort();
            l.dedup();
            l
        };
        let codes = z.iter().map(|s| levels.iter().position(|l| l == s).unwrap() as u32).collect();
        let mut schema = SfmSchema::new("x", "0", "1");
        schema.z_columns = vec!["z".into()];
        schema.y_column = Some("y".into());
        SfmDataset::from_columns(
            schema,
            Columns {
                x,
                z: vec![Covariate::categorical("z", levels, codes)],
                y: Some(y),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn empty_cell_is_lazy_and_smoothing_recovers() {
        // z = "b" is only seen with x1
        let d = tiny(vec!["a", "a", "a", "b"], vec![0.0, 1.0, 1.0, 1.0]);
        let set = NuisanceSet::fit(&d, &[Target::Y], &NuisanceConfig::frequency()).unwrap();
        assert_eq!(set.predict(Target::Y, &row(Group::X0, &["a"], &[])).unwrap(), 0.5);
        let err = set.predict(Target::Y, &row(Group::X0, &["b"], &[])).unwrap_err();
        assert!(matches!(err, Error::EmptyCell { x: Group::X0, .. }));
        assert!(set.diagnostics().models[0].empty_cells > 0);
        let smooth = NuisanceConfig {
            smoothing: 1.0,
            ..NuisanceConfig::frequency()
        };
        let set = NuisanceSet::fit(&d, &[Target::Y], &smooth).unwrap();
        let unseen = set.predict(Target::Y, &row(Group::X0, &["zz"], &[])).unwrap();
        assert_eq!(unseen, 0.75);
    }

    #[test]
    fn logistic_zero_row_is_sigmoid_intercept() {
        let d = tiny(vec!["a", "b", "a", "b", "a", "b", "b", "a"], vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let set = NuisanceSet::fit(&d, &[Target::Y], &NuisanceConfig::logistic()).unwrap();
        let p = set.predict(Target::Y, &row(Group::X0, &["a"], &[])).unwrap();
        let beta = set.outcome(Target::Y).unwrap().coefficients().unwrap();
        assert_eq!(p, regression::sigmoid(beta[0]));
        assert_eq!(p, set.predict(Target::Y, &row(Group::X0, &["a"], &[])).unwrap());
        assert!(matches!(
            set.predict(Target::Y, &row(Group::X0, &["a", "b"], &[])),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn missing_nuisance_reported() {
        let d = hiring(100);
        let set = NuisanceSet::fit(&d, &[Target::Y], &NuisanceConfig::frequency()).unwrap();
        assert!(matches!(set.outcome(Target::M), Err(Error::MissingNuisance(_))));
    }
}
