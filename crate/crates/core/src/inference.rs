//! Nonparametric bootstrap of the decomposition and the zero / equality
//! checks built on its replicates.

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ScoreSource, SfmDataset, Target};
use crate::decompose::{
    self, effect_values, prepare, targets_for, term_key, BootstrapInfo, DecompositionMode,
    DecompositionReport, EffectKind, Interval,
};
use crate::error::{Error, Result};
use crate::nuisance::{NuisanceConfig, NuisanceSet};
use crate::stats;

/// Slack on interval endpoints when asking whether 0 is covered, so that
/// differences that are zero up to rounding count as zero.
pub const NUMERICAL_TOLERANCE: f64 = 1e-12;

/// Largest share of replicates that may fail on empty cells.
const MAX_DROPPED: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub level: f64,
    pub refit_nuisances: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 500,
            seed: 42,
            level: 0.95,
            refit_nuisances: true,
        }
    }
}

impl BootstrapConfig {
    pub fn new(replicates: usize, seed: u64) -> Self {
        BootstrapConfig {
            replicates,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::InvalidConfig("at least 2 bootstrap replicates are required".into()));
        }
        check_level(self.level)
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("level must lie in (0, 1), got {level}")));
    }
    Ok(())
}

/// Replicate values by replicate index; one column per effect key.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateMatrix {
    pub keys: Vec<String>,
    /// Indices of the replicates that were kept.
    pub index: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

impl ReplicateMatrix {
    pub fn column(&self, key: &str) -> Option<Vec<f64>> {
        let j = self.keys.iter().position(|k| k == key)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut header = vec!["replicate".to_string()];
        header.extend(self.keys.iter().cloned());
        wtr.write_record(&header).map_err(io)?;
        for (r, row) in self.index.iter().zip(&self.rows) {
            let mut rec = vec![r.to_string()];
            rec.extend(row.iter().map(|v| format!("{v}")));
            wtr.write_record(&rec).map_err(io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Percentile interval of `values` at `level` (type-7 quantiles).
pub fn percentile_interval(values: &[f64], level: f64) -> Interval {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let alpha = (1.0 - level) / 2.0;
    Interval {
        low: stats::quantile_sorted(&v, alpha),
        high: stats::quantile_sorted(&v, 1.0 - alpha),
        level,
    }
}

/// Independent stream per replicate so results do not depend on scheduling.
fn replicate_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng
}

fn replicate_values(
    data: &SfmDataset,
    rows: &[usize],
    config: &NuisanceConfig,
    fixed: Option<&NuisanceSet>,
    targets: &[Target],
) -> Result<Vec<f64>> {
    let sample = data.select_rows(rows);
    let effects = match fixed {
        Some(set) => effect_values(&sample, set, targets, false)?,
        None => {
            let sample = match data.schema().score_source {
                ScoreSource::Column => sample,
                ScoreSource::OutcomeFit => prepare(&sample, config)?,
            };
            let set = NuisanceSet::fit(&sample, targets, config)?;
            effect_values(&sample, &set, targets, false)?
        }
    };
    Ok(effects.into_iter().map(|e| e.value).collect())
}

/// Decomposition with percentile intervals on every effect. Replicates
/// that hit an empty cell (or lose a group entirely) are dropped; more than
/// 10% dropped is an error.
pub fn bootstrap_decomposition(
    data: &SfmDataset,
    nuisance: &NuisanceConfig,
    mode: DecompositionMode,
    config: &BootstrapConfig,
) -> Result<DecompositionReport> {
    config.validate()?;
    nuisance.validate()?;
    let prepared = prepare(data, nuisance)?;
    let targets = targets_for(&prepared, mode)?;
    let full = NuisanceSet::fit(&prepared, &targets, nuisance)?;
    let mut report = decompose::decompose(&prepared, &full, mode)?;
    let keys: Vec<String> = report.effects.iter().map(|e| e.key()).collect();

    // Without refitting, the score source is applied once to the full data.
    let (source, fixed) = if config.refit_nuisances {
        (data, None)
    } else {
        (&prepared, Some(&full))
    };
    let n = data.n();
    let outcomes: Vec<Result<Vec<f64>>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(config.seed, r);
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            replicate_values(source, &rows, nuisance, fixed, &targets)
        })
        .collect();

    let mut index = vec![];
    let mut rows = vec![];
    let mut dropped = 0;
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(v) => {
                index.push(r);
                rows.push(v);
            }
            Err(Error::EmptyCell { .. } | Error::DegenerateAttribute(_)) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if dropped as f64 > MAX_DROPPED * config.replicates as f64 || rows.len() < 2 {
        return Err(Error::TooManyDropped {
            dropped,
            total: config.replicates,
        });
    }
    let matrix = ReplicateMatrix { keys, index, rows };
    for (j, e) in report.effects.iter_mut().enumerate() {
        let col: Vec<f64> = matrix.rows.iter().map(|r| r[j]).collect();
        e.ci = Some(percentile_interval(&col, config.level));
    }
    report.sync_intervals();
    report.bootstrap = Some(BootstrapInfo {
        replicates: config.replicates,
        dropped,
        level: config.level,
        seed: config.seed,
        refit_nuisances: config.refit_nuisances,
    });
    report.replicates = Some(matrix);
    Ok(report)
}

/// One effect on one variable, e.g. DE(s).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub kind: EffectKind,
    pub target: Target,
}

impl Term {
    pub fn new(kind: EffectKind, target: Target) -> Self {
        Term { kind, target }
    }

    pub fn key(&self) -> String {
        term_key(self.kind, self.target)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.kind, self.target)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Statement {
    Zero { term: Term },
    Equal { a: Term, b: Term },
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Zero { term } => write!(f, "{term} = 0"),
            Statement::Equal { a, b } => write!(f, "{a} = {b}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Consistent,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisResult {
    pub statement: Statement,
    /// Point estimate of the term (or of the difference).
    pub estimate: f64,
    pub ci_of_difference: Interval,
    pub decision: Decision,
    pub level: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl HypothesisResult {
    pub fn is_consistent(&self) -> bool {
        self.decision == Decision::Consistent
    }
}

/// How intervals are turned into decisions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub level: f64,
    /// Additionally require the interval to lie inside `[-ε, ε]`.
    pub epsilon: Option<f64>,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions {
            level: 0.95,
            epsilon: None,
        }
    }
}

fn replicate_column(report: &DecompositionReport, term: Term) -> Result<Vec<f64>> {
    report
        .replicates
        .as_ref()
        .and_then(|m| m.column(&term.key()))
        .ok_or_else(|| Error::MissingReplicates(term.to_string()))
}

fn point(report: &DecompositionReport, term: Term) -> Result<f64> {
    report
        .value(term.kind, term.target)
        .ok_or_else(|| Error::MissingReplicates(term.to_string()))
}

fn decide(statement: Statement, estimate: f64, values: &[f64], options: &TestOptions) -> Result<HypothesisResult> {
    check_level(options.level)?;
    if let Some(e) = options.epsilon {
        if e.is_nan() || e < 0.0 {
            return Err(Error::InvalidConfig(format!("epsilon must be non-negative, got {e}")));
        }
    }
    let ci = percentile_interval(values, options.level);
    let covers = ci.low <= NUMERICAL_TOLERANCE && ci.high >= -NUMERICAL_TOLERANCE;
    let within = options
        .epsilon
        .is_none_or(|e| ci.low >= -e - NUMERICAL_TOLERANCE && ci.high <= e + NUMERICAL_TOLERANCE);
    Ok(HypothesisResult {
        statement,
        estimate,
        ci_of_difference: ci,
        decision: if covers && within {
            Decision::Consistent
        } else {
            Decision::Violated
        },
        level: options.level,
        epsilon: options.epsilon,
    })
}

/// Is `term` zero? Percentile interval of its replicates.
pub fn test_zero(report: &DecompositionReport, term: Term, options: &TestOptions) -> Result<HypothesisResult> {
    let values = replicate_column(report, term)?;
    decide(Statement::Zero { term }, point(report, term)?, &values, options)
}

/// Is `a = b`? Percentile interval of the paired per-replicate difference.
pub fn test_equal(report: &DecompositionReport, a: Term, b: Term, options: &TestOptions) -> Result<HypothesisResult> {
    let va = replicate_column(report, a)?;
    let vb = replicate_column(report, b)?;
    let diff: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| x - y).collect();
    let estimate = point(report, a)? - point(report, b)?;
    decide(Statement::Equal { a, b }, estimate, &diff, options)
}
