//! Tabular data under the standard fairness model: protected attribute X,
//! confounders Z, mediators W, outcome Y, score S, thresholded predictor Ŷ
//! and margin complement M = Ŷ - S.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// One of the two protected-attribute groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    X0,
    X1,
}

impl Group {
    pub fn other(self) -> Group {
        match self {
            Group::X0 => Group::X1,
            Group::X1 => Group::X0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Group::X0 => 0,
            Group::X1 => 1,
        }
    }

    pub fn from_bool(is_x1: bool) -> Group {
        if is_x1 {
            Group::X1
        } else {
            Group::X0
        }
    }

    pub fn is_x1(self) -> bool {
        self == Group::X1
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::X0 => write!(f, "x0"),
            Group::X1 => write!(f, "x1"),
        }
    }
}

/// Variable whose disparity is measured or decomposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Y,
    S,
    Yhat,
    M,
}

impl Target {
    pub const ALL: [Target; 4] = [Target::Y, Target::S, Target::Yhat, Target::M];

    pub fn name(self) -> &'static str {
        match self {
            Target::Y => "y",
            Target::S => "s",
            Target::Yhat => "yhat",
            Target::M => "m",
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Target::Y | Target::Yhat)
    }

    pub fn parse(s: &str) -> Result<Target> {
        match s.to_ascii_lowercase().as_str() {
            "y" => Ok(Target::Y),
            "s" => Ok(Target::S),
            "yhat" | "ŷ" => Ok(Target::Yhat),
            "m" => Ok(Target::M),
            other => Err(Error::InvalidConfig(format!("unknown target `{other}`"))),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Fixed,
    Quantile,
}

/// How the score is cut into a 0/1 predictor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub mode: ThresholdMode,
    pub value: f64,
    /// Use `s > t` instead of the default `s >= t`.
    #[serde(default)]
    pub strict: bool,
}

impl ThresholdSpec {
    pub fn fixed(t: f64) -> Self {
        ThresholdSpec {
            mode: ThresholdMode::Fixed,
            value: t,
            strict: false,
        }
    }

    pub fn quantile(q: f64) -> Self {
        ThresholdSpec {
            mode: ThresholdMode::Quantile,
            value: q,
            strict: false,
        }
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.value > 0.0 && self.value < 1.0) {
            return Err(Error::InvalidSchema(format!(
                "threshold value must lie in (0, 1), got {}",
                self.value
            )));
        }
        Ok(())
    }
}

/// Where the score column comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// The score is observed data (a model output supplied by the user).
    #[default]
    Column,
    /// The score is the stratified frequency fit of Y on (X, Z, W); resampling
    /// procedures refit it on every replicate.
    OutcomeFit,
}

fn default_bins() -> usize {
    5
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    let v = serde_json::Value::deserialize(d)?;
    match v {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::Bool(b) => Ok(if b { "1".into() } else { "0".into() }),
        other => Err(serde::de::Error::custom(format!(
            "expected string or number, got {other}"
        ))),
    }
}

/// Column roles. The JSON form uses the keys
/// `{x, x0, x1, z, w, y, s, yhat, threshold}` plus a few optional extras.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SfmSchema {
    #[serde(rename = "x")]
    pub x_column: String,
    #[serde(rename = "x0", deserialize_with = "string_or_number")]
    pub x0_value: String,
    #[serde(rename = "x1", deserialize_with = "string_or_number")]
    pub x1_value: String,
    #[serde(rename = "z", default)]
    pub z_columns: Vec<String>,
    #[serde(rename = "w", default)]
    pub w_columns: Vec<String>,
    #[serde(rename = "y", default, skip_serializing_if = "Option::is_none")]
    pub y_column: Option<String>,
    #[serde(rename = "s", default, skip_serializing_if = "Option::is_none")]
    pub s_column: Option<String>,
    #[serde(rename = "yhat", default, skip_serializing_if = "Option::is_none")]
    pub yhat_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdSpec>,
    /// The predictor column is audited as given, not re-derived from the score.
    #[serde(default, skip_serializing_if = "is_false")]
    pub external_predictor: bool,
    #[serde(default, skip_serializing_if = "is_default_source")]
    pub score_source: ScoreSource,
    /// Z/W columns forced to numeric even when every value is an integer.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub numeric: Vec<String>,
    /// Equal-frequency bins used when numeric covariates enter frequency estimation.
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Attribute codes other than x0/x1 are folded into this group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_collapse: Option<Group>,
    /// Raw score values are divided by this before range checks (e.g. 10 for deciles).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_scale: Option<f64>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_default_source(s: &ScoreSource) -> bool {
    *s == ScoreSource::Column
}

impl SfmSchema {
    pub fn new(x: &str, x0: &str, x1: &str) -> Self {
        SfmSchema {
            x_column: x.into(),
            x0_value: x0.into(),
            x1_value: x1.into(),
            z_columns: vec![],
            w_columns: vec![],
            y_column: None,
            s_column: None,
            yhat_column: None,
            threshold: None,
            external_predictor: false,
            score_source: ScoreSource::Column,
            numeric: vec![],
            bins: default_bins(),
            x_collapse: None,
            s_scale: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: SfmSchema =
            serde_json::from_str(text).map_err(|e| Error::InvalidSchema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.x0_value == self.x1_value {
            return Err(Error::InvalidSchema("x0 and x1 must differ".into()));
        }
        if self.y_column.is_none() && self.s_column.is_none() && self.yhat_column.is_none() {
            return Err(Error::InvalidSchema(
                "at least one of y, s, yhat must be given".into(),
            ));
        }
        let mut seen = HashSet::new();
        let all = std::iter::once(&self.x_column)
            .chain(&self.z_columns)
            .chain(&self.w_columns)
            .chain(self.y_column.iter())
            .chain(self.s_column.iter())
            .chain(self.yhat_column.iter());
        for c in all {
            if !seen.insert(c.as_str()) {
                return Err(Error::InvalidSchema(format!("column `{c}` has two roles")));
            }
        }
        if let Some(t) = &self.threshold {
            t.validate()?;
        }
        if self.bins == 0 {
            return Err(Error::InvalidSchema("bins must be positive".into()));
        }
        if let Some(scale) = self.s_scale {
            if scale.is_nan() || scale <= 0.0 {
                return Err(Error::InvalidSchema("s_scale must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Values of one confounder or mediator column.
#[derive(Clone, Debug, PartialEq)]
pub enum CovariateValues {
    /// Opaque labels; `codes[i]` indexes `levels`.
    Categorical { levels: Vec<String>, codes: Vec<u32> },
    Numeric(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub values: CovariateValues,
}

impl Covariate {
    pub fn categorical(name: &str, levels: Vec<String>, codes: Vec<u32>) -> Self {
        Covariate {
            name: name.into(),
            values: CovariateValues::Categorical { levels, codes },
        }
    }

    pub fn numeric(name: &str, values: Vec<f64>) -> Self {
        Covariate {
            name: name.into(),
            values: CovariateValues::Numeric(values),
        }
    }

    pub fn len(&self) -> usize {
        match &self.values {
            CovariateValues::Categorical { codes, .. } => codes.len(),
            CovariateValues::Numeric(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.values, CovariateValues::Categorical { .. })
    }

    pub fn value(&self, i: usize) -> Value {
        match &self.values {
            CovariateValues::Categorical { levels, codes } => {
                Value::Label(levels[codes[i] as usize].clone())
            }
            CovariateValues::Numeric(v) => Value::Number(v[i]),
        }
    }

    pub fn label(&self, i: usize) -> String {
        match &self.values {
            CovariateValues::Categorical { levels, codes } => levels[codes[i] as usize].clone(),
            CovariateValues::Numeric(v) => format_number(v[i]),
        }
    }

    fn select(&self, rows: &[usize]) -> Covariate {
        let values = match &self.values {
            CovariateValues::Categorical { levels, codes } => CovariateValues::Categorical {
                levels: levels.clone(),
                codes: rows.iter().map(|&i| codes[i]).collect(),
            },
            CovariateValues::Numeric(v) => {
                CovariateValues::Numeric(rows.iter().map(|&i| v[i]).collect())
            }
        };
        Covariate {
            name: self.name.clone(),
            values,
        }
    }
}

pub(crate) fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// A single covariate value presented to a fitted model.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Label(String),
    Number(f64),
}

/// One record of (x, z, w) used for point prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub x: Group,
    pub z: Vec<Value>,
    pub w: Vec<Value>,
}

/// A validated sample under the standard fairness model. Immutable; every
/// transformation returns a new dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SfmDataset {
    schema: SfmSchema,
    x: Vec<Group>,
    z: Vec<Covariate>,
    w: Vec<Covariate>,
    y: Option<Vec<f64>>,
    s: Option<Vec<f64>>,
    yhat: Option<Vec<f64>>,
    m: Option<Vec<f64>>,
    threshold: Option<f64>,
}

/// Column bundle used to assemble a dataset in code (simulation, tests).
#[derive(Clone, Debug, Default)]
pub struct Columns {
    pub x: Vec<Group>,
    pub z: Vec<Covariate>,
    pub w: Vec<Covariate>,
    pub y: Option<Vec<f64>>,
    pub s: Option<Vec<f64>>,
    pub yhat: Option<Vec<f64>>,
}

fn indicator(s: f64, t: f64, strict: bool) -> f64 {
    let above = if strict { s > t } else { s >= t };
    if above {
        1.0
    } else {
        0.0
    }
}

impl SfmDataset {
    /// Builds a dataset from in-memory columns, applying the same validation
    /// as [`load_dataset`] and deriving Ŷ and M when a threshold is configured.
    pub fn from_columns(schema: SfmSchema, cols: Columns) -> Result<Self> {
        schema.validate()?;
        let n = cols.x.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        check_len("z/w", &cols.z, n)?;
        check_len("z/w", &cols.w, n)?;
        if cols.z.len() != schema.z_columns.len() || cols.w.len() != schema.w_columns.len() {
            return Err(Error::InvalidSchema(
                "covariate blocks do not match the schema".into(),
            ));
        }
        for (name, col) in [("y", &cols.y), ("s", &cols.s), ("yhat", &cols.yhat)] {
            if let Some(c) = col {
                if c.len() != n {
                    return Err(Error::InvalidSchema(format!("column {name} has wrong length")));
                }
            }
        }
        for (label, col) in [
            (&schema.y_column, &cols.y),
            (&schema.s_column, &cols.s),
            (&schema.yhat_column, &cols.yhat),
        ] {
            if label.is_some() != col.is_some() {
                return Err(Error::InvalidSchema(
                    "schema roles and supplied columns disagree".into(),
                ));
            }
        }
        let ds = SfmDataset {
            schema,
            x: cols.x,
            z: cols.z,
            w: cols.w,
            y: cols.y,
            s: cols.s,
            yhat: cols.yhat,
            m: None,
            threshold: None,
        };
        ds.check_values()?;
        ds.finish()
    }

    fn check_values(&self) -> Result<()> {
        let n0 = self.x.iter().filter(|g| **g == Group::X0).count();
        if n0 == 0 || n0 == self.x.len() {
            let only = if n0 == 0 { "x1" } else { "x0" };
            return Err(Error::NonBinaryAttribute(format!("only {only} present")));
        }
        let check_binary = |col: &Option<Vec<f64>>, name: &str| -> Result<()> {
            if let Some(v) = col {
                for (i, &val) in v.iter().enumerate() {
                    if val != 0.0 && val != 1.0 {
                        return Err(Error::BadValue {
                            row: i,
                            column: name.into(),
                            reason: format!("expected 0 or 1, got {val}"),
                        });
                    }
                }
            }
            Ok(())
        };
        check_binary(&self.y, self.schema.y_column.as_deref().unwrap_or("y"))?;
        check_binary(&self.yhat, self.schema.yhat_column.as_deref().unwrap_or("yhat"))?;
        if let Some(s) = &self.s {
            for (i, &val) in s.iter().enumerate() {
                if !(0.0..=1.0).contains(&val) {
                    return Err(Error::BadValue {
                        row: i,
                        column: self.schema.s_column.clone().unwrap_or_else(|| "s".into()),
                        reason: format!("score {val} outside [0, 1]"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Resolves the schema threshold (if any) and fills Ŷ and M.
    fn finish(mut self) -> Result<Self> {
        if self.s.is_none() {
            return Ok(self);
        }
        if let Some(spec) = self.schema.threshold {
            let t = self.resolve_threshold(&spec)?;
            if let (Some(s), Some(yhat)) = (&self.s, &self.yhat) {
                if !self.schema.external_predictor && spec.mode == ThresholdMode::Fixed {
                    for (i, (&si, &yi)) in s.iter().zip(yhat).enumerate() {
                        if indicator(si, t, spec.strict) != yi {
                            return Err(Error::Inconsistent {
                                row: i,
                                reason: format!(
                                    "predictor {yi} disagrees with score {si} at threshold {t}; \
                                     set external_predictor to audit it as given"
                                ),
                            });
                        }
                    }
                }
            }
            self = self.compute_margin_complement_with(t, spec.strict)?;
        } else if let (Some(yhat), Some(s)) = (&self.yhat, &self.s) {
            let m = yhat.iter().zip(s).map(|(a, b)| a - b).collect();
            self.m = Some(m);
        }
        Ok(self)
    }

    pub fn schema(&self) -> &SfmSchema {
        &self.schema
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn x(&self) -> &[Group] {
        &self.x
    }

    pub fn z(&self) -> &[Covariate] {
        &self.z
    }

    pub fn w(&self) -> &[Covariate] {
        &self.w
    }

    /// Resolved threshold used for Ŷ, if the dataset was thresholded here.
    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn group_count(&self, g: Group) -> usize {
        self.x.iter().filter(|&&x| x == g).count()
    }

    pub fn has(&self, t: Target) -> bool {
        self.column(t).is_some()
    }

    pub fn column(&self, t: Target) -> Option<&[f64]> {
        match t {
            Target::Y => self.y.as_deref(),
            Target::S => self.s.as_deref(),
            Target::Yhat => self.yhat.as_deref(),
            Target::M => self.m.as_deref(),
        }
    }

    pub fn target(&self, t: Target) -> Result<&[f64]> {
        self.column(t).ok_or_else(|| match t {
            Target::Y => Error::MissingOutcome,
            Target::S => Error::MissingScore,
            other => Error::MissingTarget(other.name().into()),
        })
    }

    pub fn available_targets(&self) -> Vec<Target> {
        Target::ALL.into_iter().filter(|t| self.has(*t)).collect()
    }

    pub fn all_categorical(&self) -> bool {
        self.z.iter().chain(&self.w).all(Covariate::is_categorical)
    }

    pub fn row(&self, i: usize) -> Row {
        Row {
            x: self.x[i],
            z: self.z.iter().map(|c| c.value(i)).collect(),
            w: self.w.iter().map(|c| c.value(i)).collect(),
        }
    }

    /// Quantile- or fixed-mode threshold on the score column.
    pub fn resolve_threshold(&self, spec: &ThresholdSpec) -> Result<f64> {
        let s = self.s.as_ref().ok_or(Error::MissingScore)?;
        spec.validate()?;
        Ok(match spec.mode {
            ThresholdMode::Fixed => spec.value,
            ThresholdMode::Quantile => stats::quantile(s, spec.value),
        })
    }

    /// Fills Ŷ = 1(S ≥ t) and M = Ŷ - S. An external predictor is kept as is.
    pub fn compute_margin_complement(&self, t: f64) -> Result<SfmDataset> {
        let strict = self.schema.threshold.map(|t| t.strict).unwrap_or(false);
        self.clone().compute_margin_complement_with(t, strict)
    }

    pub fn compute_margin_complement_with(mut self, t: f64, strict: bool) -> Result<SfmDataset> {
        let s = self.s.as_ref().ok_or(Error::MissingScore)?;
        let keep = self.schema.external_predictor && self.yhat.is_some();
        let yhat: Vec<f64> = if keep {
            self.yhat.take().unwrap()
        } else {
            s.iter().map(|&v| indicator(v, t, strict)).collect()
        };
        self.m = Some(yhat.iter().zip(s).map(|(a, b)| a - b).collect());
        self.yhat = Some(yhat);
        if self.schema.yhat_column.is_none() {
            self.schema.yhat_column = Some("yhat".into());
        }
        self.threshold = Some(t);
        Ok(self)
    }

    /// Dataset restricted to (and reordered by) `rows`; repeats allowed.
    pub fn select_rows(&self, rows: &[usize]) -> SfmDataset {
        let pick = |v: &Option<Vec<f64>>| v.as_ref().map(|v| rows.iter().map(|&i| v[i]).collect());
        SfmDataset {
            schema: self.schema.clone(),
            x: rows.iter().map(|&i| self.x[i]).collect(),
            z: self.z.iter().map(|c| c.select(rows)).collect(),
            w: self.w.iter().map(|c| c.select(rows)).collect(),
            y: pick(&self.y),
            s: pick(&self.s),
            yhat: pick(&self.yhat),
            m: pick(&self.m),
            threshold: self.threshold,
        }
    }

    /// Exchanges the roles of x0 and x1.
    pub fn swap_groups(&self) -> SfmDataset {
        let mut out = self.clone();
        std::mem::swap(&mut out.schema.x0_value, &mut out.schema.x1_value);
        out.schema.x_collapse = out.schema.x_collapse.map(Group::other);
        for g in &mut out.x {
            *g = g.other();
        }
        out
    }

    /// Replaces the score column and re-derives Ŷ and M with the current
    /// threshold configuration.
    pub fn with_score(&self, s: Vec<f64>) -> Result<SfmDataset> {
        if s.len() != self.n() {
            return Err(Error::InvalidSchema("score length does not match".into()));
        }
        let mut out = self.clone();
        if out.schema.s_column.is_none() {
            out.schema.s_column = Some("s".into());
        }
        out.s = Some(s);
        out.m = None;
        if !out.schema.external_predictor {
            out.yhat = None;
        }
        out.check_values()?;
        match (out.schema.threshold, self.threshold) {
            (Some(spec), _) => {
                let t = out.resolve_threshold(&spec)?;
                out.compute_margin_complement_with(t, spec.strict)
            }
            (None, Some(t)) => out.compute_margin_complement_with(t, false),
            (None, None) => out.finish(),
        }
    }

    pub fn with_score_source(&self, source: ScoreSource) -> SfmDataset {
        let mut out = self.clone();
        out.schema.score_source = source;
        out
    }

    pub fn stratum_labels(&self, i: usize) -> (Vec<String>, Vec<String>) {
        (
            self.z.iter().map(|c| c.label(i)).collect(),
            self.w.iter().map(|c| c.label(i)).collect(),
        )
    }

    /// Writes the dataset as CSV with its schema column names and a trailing
    /// `m` column when the margin complement is known.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec![self.schema.x_column.clone()];
        header.extend(self.z.iter().map(|c| c.name.clone()));
        header.extend(self.w.iter().map(|c| c.name.clone()));
        let mut extra: Vec<(String, &Vec<f64>, bool)> = vec![];
        if let (Some(name), Some(v)) = (&self.schema.y_column, &self.y) {
            extra.push((name.clone(), v, true));
        }
        if let (Some(name), Some(v)) = (&self.schema.s_column, &self.s) {
            extra.push((name.clone(), v, false));
        }
        if let (Some(name), Some(v)) = (&self.schema.yhat_column, &self.yhat) {
            extra.push((name.clone(), v, true));
        }
        if let Some(v) = &self.m {
            extra.push(("m".into(), v, false));
        }
        header.extend(extra.iter().map(|e| e.0.clone()));
        wtr.write_record(&header).map_err(csv_err)?;
        for i in 0..self.n() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(match self.x[i] {
                Group::X0 => self.schema.x0_value.clone(),
                Group::X1 => self.schema.x1_value.clone(),
            });
            rec.extend(self.z.iter().chain(&self.w).map(|c| c.label(i)));
            for (_, v, binary) in &extra {
                rec.push(if *binary {
                    format!("{}", v[i] as i64)
                } else {
                    format!("{}", v[i])
                });
            }
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_len(what: &str, cols: &[Covariate], n: usize) -> Result<()> {
    for c in cols {
        if c.len() != n {
            return Err(Error::InvalidSchema(format!(
                "{what} column `{}` has {} values, expected {n}",
                c.name,
                c.len()
            )));
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn parse_binary(raw: &str) -> Option<f64> {
    match raw {
        "0" | "false" | "FALSE" | "False" => Some(0.0),
        "1" | "true" | "TRUE" | "True" => Some(1.0),
        other => match other.parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => Some(v),
            _ => None,
        },
    }
}

fn is_integer_literal(raw: &str) -> bool {
    raw.parse::<i64>().is_ok()
}

/// Reads a CSV (header row required) into a validated dataset. Ŷ and M are
/// derived when the schema carries a threshold, or M alone when both the
/// score and an external predictor are present.
pub fn load_dataset<R: Read>(source: R, schema: &SfmSchema) -> Result<SfmDataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| -> Result<usize> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let x_idx = col(&schema.x_column)?;
    let z_idx: Vec<usize> = schema.z_columns.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let w_idx: Vec<usize> = schema.w_columns.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let y_idx = schema.y_column.as_deref().map(col).transpose()?;
    let s_idx = schema.s_column.as_deref().map(col).transpose()?;
    let yhat_idx = schema.yhat_column.as_deref().map(col).transpose()?;

    let mut x = vec![];
    let mut raw_cov: Vec<Vec<String>> = vec![vec![]; z_idx.len() + w_idx.len()];
    let mut y = y_idx.map(|_| vec![]);
    let mut s = s_idx.map(|_| vec![]);
    let mut yhat = yhat_idx.map(|_| vec![]);
    let scale = schema.s_scale.unwrap_or(1.0);

    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let field = |idx: usize, name: &str| -> Result<&str> {
            match rec.get(idx) {
                Some(v) if !v.is_empty() && v != "NA" => Ok(v),
                _ => Err(Error::BadValue {
                    row,
                    column: name.to_string(),
                    reason: "missing value".into(),
                }),
            }
        };
        let xv = field(x_idx, &schema.x_column)?;
        let g = if xv == schema.x0_value {
            Group::X0
        } else if xv == schema.x1_value {
            Group::X1
        } else if let Some(g) = schema.x_collapse {
            g
        } else {
            return Err(Error::BadValue {
                row,
                column: schema.x_column.clone(),
                reason: format!("attribute code `{xv}` is neither x0 nor x1"),
            });
        };
        x.push(g);
        for (k, (&idx, name)) in z_idx
            .iter()
            .zip(&schema.z_columns)
            .chain(w_idx.iter().zip(&schema.w_columns))
            .enumerate()
        {
            raw_cov[k].push(field(idx, name)?.to_string());
        }
        if let (Some(idx), Some(v), Some(name)) = (y_idx, y.as_mut(), &schema.y_column) {
            let raw = field(idx, name)?;
            v.push(parse_binary(raw).ok_or_else(|| Error::BadValue {
                row,
                column: name.clone(),
                reason: format!("expected 0/1, got `{raw}`"),
            })?);
        }
        if let (Some(idx), Some(v), Some(name)) = (yhat_idx, yhat.as_mut(), &schema.yhat_column) {
            let raw = field(idx, name)?;
            v.push(parse_binary(raw).ok_or_else(|| Error::BadValue {
                row,
                column: name.clone(),
                reason: format!("expected 0/1, got `{raw}`"),
            })?);
        }
        if let (Some(idx), Some(v), Some(name)) = (s_idx, s.as_mut(), &schema.s_column) {
            let raw = field(idx, name)?;
            let val = raw
                .parse::<f64>()
                .ok()
                .map(|v| v / scale)
                .filter(|v| (0.0..=1.0).contains(v))
                .ok_or_else(|| Error::BadValue {
                    row,
                    column: name.clone(),
                    reason: format!("score `{raw}` is not a number in [0, 1]"),
                })?;
            v.push(val);
        }
    }
    if x.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let names: Vec<&String> = schema.z_columns.iter().chain(&schema.w_columns).collect();
    let mut covs: Vec<Covariate> = raw_cov
        .into_iter()
        .zip(names)
        .map(|(raw, name)| build_covariate(name, raw, schema.numeric.contains(name)))
        .collect::<Result<_>>()?;
    let w = covs.split_off(schema.z_columns.len());
    SfmDataset::from_columns(
        schema.clone(),
        Columns {
            x,
            z: covs,
            w,
            y,
            s,
            yhat,
        },
    )
}

/// Integer or text columns become categorical; columns with any non-integer
/// decimal (or listed as numeric) pass through as reals.
fn build_covariate(name: &str, raw: Vec<String>, force_numeric: bool) -> Result<Covariate> {
    let parsed: Vec<Option<f64>> = raw.iter().map(|r| r.parse::<f64>().ok()).collect();
    let all_numbers = parsed.iter().all(Option::is_some);
    let all_integers = raw.iter().all(|r| is_integer_literal(r));
    if force_numeric || (all_numbers && !all_integers) {
        let mut vals = Vec::with_capacity(raw.len());
        for (row, (p, r)) in parsed.iter().zip(&raw).enumerate() {
            match p {
                Some(v) if v.is_finite() => vals.push(*v),
                _ => {
                    return Err(Error::BadValue {
                        row,
                        column: name.into(),
                        reason: format!("`{r}` is not a number"),
                    })
                }
            }
        }
        return Ok(Covariate::numeric(name, vals));
    }
    let distinct: BTreeSet<&str> = raw.iter().map(String::as_str).collect();
    let mut levels: Vec<String> = distinct.into_iter().map(String::from).collect();
    if all_integers {
        levels.sort_by_key(|l| l.parse::<i64>().unwrap());
    }
    let lookup: HashMap<&str, u32> = levels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i as u32))
        .collect();
    let codes = raw.iter().map(|r| lookup[r.as_str()]).collect();
    Ok(Covariate::categorical(name, levels, codes))
}
