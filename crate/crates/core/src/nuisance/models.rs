use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::encode::{Encoded, Encoder, Key, Table};
use super::regression::{self, linear_predictor, sigmoid};
use crate::data::{Group, Row, SfmDataset, Target};
use crate::error::{Error, Result};

/// Floor/ceiling applied to every conditional propensity.
pub const PROPENSITY_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelMethod {
    Frequency,
    Logistic,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityLevel {
    Marginal,
    GivenZ,
    GivenZw,
}

#[derive(Clone, Debug, PartialEq)]
enum OutcomeFit {
    Constant(f64),
    Frequency {
        /// `(sum, count)` keyed by `2 * stratum + x`.
        cells: Table<(f64, usize)>,
        global: f64,
    },
    Regression {
        beta: Vec<f64>,
        logistic: bool,
    },
}

/// Fitted regression `f(x, z, w) ≈ E[T | x, z, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeModel {
    target: Target,
    method: ModelMethod,
    smoothing: f64,
    clamp: Option<(f64, f64)>,
    iterations: usize,
    encoder: Arc<Encoder>,
    fit: OutcomeFit,
}

fn group_value(x: Group) -> f64 {
    x.index() as f64
}

fn cell_key(x: Group, key: Key) -> Key {
    2 * key + x.index() as Key
}

impl OutcomeModel {
    pub(crate) fn fit(
        data: &SfmDataset,
        target: Target,
        method: ModelMethod,
        smoothing: f64,
        encoder: Arc<Encoder>,
        enc: &Encoded,
    ) -> Result<OutcomeModel> {
        let t = data.target(target)?;
        let global = t.iter().sum::<f64>() / t.len() as f64;
        let clamp = match (method, target) {
            (ModelMethod::Linear, Target::M) => Some((-1.0, 1.0)),
            (ModelMethod::Linear, _) => Some((0.0, 1.0)),
            _ => None,
        };
        let mut iterations = 0;
        let fit = if t.iter().all(|v| *v == t[0]) {
            OutcomeFit::Constant(t[0])
        } else {
            match method {
                ModelMethod::Frequency => {
                    let mut cells = Table::new(2 * encoder.span());
                    for (i, v) in t.iter().enumerate() {
                        let cell: &mut (f64, usize) = cells.entry(cell_key(data.x()[i], enc.zw_keys[i]));
                        cell.0 += v;
                        cell.1 += 1;
                    }
                    OutcomeFit::Frequency { cells, global }
                }
                ModelMethod::Logistic | ModelMethod::Linear => {
                    let x = DMatrix::from_fn(data.n(), enc.width + 2, |i, j| match j {
                        0 => 1.0,
                        1 => group_value(data.x()[i]),
                        _ => enc.features[i * enc.width + j - 2],
                    });
                    let logistic = method == ModelMethod::Logistic;
                    let f = if logistic {
                        regression::logistic(&x, t)?
                    } else {
                        regression::linear(&x, t)?
                    };
                    iterations = f.iterations;
                    OutcomeFit::Regression {
                        beta: f.beta,
                        logistic,
                    }
                }
            }
        };
        Ok(OutcomeModel {
            target,
            method,
            smoothing,
            clamp,
            iterations,
            encoder,
            fit,
        })
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn method(&self) -> ModelMethod {
        self.method
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Regression coefficients over `[1, x, features...]`, if any.
    pub fn coefficients(&self) -> Option<&[f64]> {
        match &self.fit {
            OutcomeFit::Regression { beta, .. } => Some(beta),
            _ => None,
        }
    }

    fn predict_key(&self, x: Group, key: Key) -> Result<f64> {
        match &self.fit {
            OutcomeFit::Frequency { cells, global } => match cells.get(cell_key(x, key)) {
                Some((sum, count)) => {
                    Ok((sum + self.smoothing * global) / (*count as f64 + self.smoothing))
                }
                None if self.smoothing > 0.0 => Ok(*global),
                None => Err(Error::EmptyCell {
                    x,
                    stratum: self.encoder.describe(key, false),
                }),
            },
            _ => unreachable!("keyed lookup on a regression model"),
        }
    }

    /// Prediction and whether it was clamped into the target's range.
    fn predict_features(&self, x: Group, feats: &[f64]) -> (f64, bool) {
        match &self.fit {
            OutcomeFit::Regression { beta, logistic } => {
                let eta = beta[0] + beta[1] * group_value(x) + linear_predictor(&beta[2..], feats);
                if *logistic {
                    (sigmoid(eta), false)
                } else {
                    let (lo, hi) = self.clamp.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
                    let v = eta.clamp(lo, hi);
                    (v, v != eta)
                }
            }
            _ => unreachable!("feature prediction on a frequency model"),
        }
    }

    /// Prediction at `(x, z, w)` for one row.
    pub fn predict(&self, row: &Row) -> Result<f64> {
        match &self.fit {
            OutcomeFit::Constant(c) => Ok(*c),
            OutcomeFit::Frequency { .. } => self.predict_key(row.x, self.encoder.row_key(row)?),
            OutcomeFit::Regression { .. } => {
                Ok(self.predict_features(row.x, &self.encoder.row_features(row)?).0)
            }
        }
    }

    /// Predictions at `X = x` for every row of the encoded data, plus the
    /// number of clamped values.
    pub(crate) fn predict_all(&self, enc: &Encoded, n: usize, x: Group) -> Result<(Vec<f64>, usize)> {
        match &self.fit {
            OutcomeFit::Constant(c) => Ok((vec![*c; n], 0)),
            OutcomeFit::Frequency { .. } => {
                let v = enc
                    .zw_keys
                    .iter()
                    .map(|k| self.predict_key(x, *k))
                    .collect::<Result<Vec<_>>>()?;
                Ok((v, 0))
            }
            OutcomeFit::Regression { .. } => {
                let mut clamped = 0;
                let v = (0..n)
                    .map(|i| {
                        let (p, c) =
                            self.predict_features(x, &enc.features[i * enc.width..(i + 1) * enc.width]);
                        clamped += usize::from(c);
                        p
                    })
                    .collect();
                Ok((v, clamped))
            }
        }
    }

    /// Number of distinct (x, stratum) cells reached by `enc` with no
    /// training rows (frequency models only).
    pub(crate) fn empty_cells(&self, enc: &Encoded) -> usize {
        match &self.fit {
            OutcomeFit::Frequency { cells, .. } => {
                let mut missing = std::collections::HashSet::new();
                for k in &enc.zw_keys {
                    for g in [Group::X0, Group::X1] {
                        if cells.get(cell_key(g, *k)).is_none() {
                            missing.insert((g, *k));
                        }
                    }
                }
                missing.len()
            }
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum PropensityFit {
    Share(f64),
    Frequency {
        /// `(x1 count, count)` by stratum.
        cells: Table<(usize, usize)>,
        share: f64,
    },
    Logistic(Vec<f64>),
}

/// Fitted `P̂(x1 | ·)` at one conditioning level.
#[derive(Clone, Debug, PartialEq)]
pub struct PropensityModel {
    level: PropensityLevel,
    method: ModelMethod,
    smoothing: f64,
    iterations: usize,
    encoder: Arc<Encoder>,
    fit: PropensityFit,
}

impl PropensityModel {
    /// Conditioning on an empty covariate block reduces to the marginal share.
    pub(crate) fn fit(
        data: &SfmDataset,
        level: PropensityLevel,
        method: ModelMethod,
        smoothing: f64,
        encoder: Arc<Encoder>,
        enc: &Encoded,
    ) -> Result<PropensityModel> {
        let n = data.n();
        let x1: Vec<f64> = data.x().iter().map(|g| group_value(*g)).collect();
        let share = x1.iter().sum::<f64>() / n as f64;
        let conditioning = match level {
            PropensityLevel::Marginal => false,
            PropensityLevel::GivenZ => encoder.has_z(),
            PropensityLevel::GivenZw => encoder.has_zw(),
        };
        let mut iterations = 0;
        let fit = if !conditioning {
            PropensityFit::Share(share)
        } else if method == ModelMethod::Frequency {
            let keys = if level == PropensityLevel::GivenZ {
                &enc.z_keys
            } else {
                &enc.zw_keys
            };
            let span = if level == PropensityLevel::GivenZ {
                encoder.z_span()
            } else {
                encoder.span()
            };
            let mut cells = Table::new(span);
            for (k, g) in keys.iter().zip(data.x()) {
                let c: &mut (usize, usize) = cells.entry(*k);
                c.0 += g.index();
                c.1 += 1;
            }
            PropensityFit::Frequency { cells, share }
        } else {
            let width = if level == PropensityLevel::GivenZ {
                enc.z_width
            } else {
                enc.width
            };
            let x = DMatrix::from_fn(n, width + 1, |i, j| {
                if j == 0 {
                    1.0
                } else {
                    enc.features[i * enc.width + j - 1]
                }
            });
            let f = regression::logistic(&x, &x1)?;
            iterations = f.iterations;
            PropensityFit::Logistic(f.beta)
        };
        let method = match fit {
            PropensityFit::Logistic(_) => ModelMethod::Logistic,
            _ => ModelMethod::Frequency,
        };
        Ok(PropensityModel {
            level,
            method,
            smoothing,
            iterations,
            encoder,
            fit,
        })
    }

    pub fn level(&self) -> PropensityLevel {
        self.level
    }

    pub fn method(&self) -> ModelMethod {
        self.method
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    fn raw_predict_key(&self, key: Key) -> Result<f64> {
        match &self.fit {
            PropensityFit::Share(p) => Ok(*p),
            PropensityFit::Frequency { cells, share } => match cells.get(key) {
                Some((c1, c)) => Ok((*c1 as f64 + self.smoothing * share) / (*c as f64 + self.smoothing)),
                None if self.smoothing > 0.0 => Ok(*share),
                None => Err(Error::EmptyCell {
                    x: Group::X1,
                    stratum: self
                        .encoder
                        .describe(key, self.level == PropensityLevel::GivenZ),
                }),
            },
            PropensityFit::Logistic(_) => unreachable!(),
        }
    }

    fn raw_predict_features(&self, feats: &[f64]) -> f64 {
        match &self.fit {
            PropensityFit::Logistic(beta) => {
                sigmoid(beta[0] + linear_predictor(&beta[1..], &feats[..beta.len() - 1]))
            }
            PropensityFit::Share(p) => *p,
            PropensityFit::Frequency { .. } => unreachable!(),
        }
    }

    /// Unfloored `P̂(x1 | ·)` for one row.
    pub fn predict_raw(&self, row: &Row) -> Result<f64> {
        match &self.fit {
            PropensityFit::Share(p) => Ok(*p),
            PropensityFit::Frequency { .. } => {
                let key = self.encoder.row_key(row)?;
                let key = if self.level == PropensityLevel::GivenZ {
                    self.encoder.z_part(key)
                } else {
                    key
                };
                self.raw_predict_key(key)
            }
            PropensityFit::Logistic(_) => Ok(self.raw_predict_features(&self.encoder.row_features(row)?)),
        }
    }

    /// `P̂(x1 | ·)` floored into `[ε, 1 − ε]`.
    pub fn predict(&self, row: &Row) -> Result<f64> {
        Ok(floor(self.predict_raw(row)?).0)
    }

    /// Floored predictions for every encoded row and the number floored.
    pub(crate) fn predict_all(&self, enc: &Encoded, n: usize) -> Result<(Vec<f64>, usize)> {
        let raw: Vec<f64> = match &self.fit {
            PropensityFit::Share(p) => vec![*p; n],
            PropensityFit::Frequency { .. } => {
                let keys = if self.level == PropensityLevel::GivenZ {
                    &enc.z_keys
                } else {
                    &enc.zw_keys
                };
                keys.iter().map(|k| self.raw_predict_key(*k)).collect::<Result<_>>()?
            }
            PropensityFit::Logistic(_) => (0..n)
                .map(|i| self.raw_predict_features(&enc.features[i * enc.width..(i + 1) * enc.width]))
                .collect(),
        };
        let mut floored = 0;
        let out = raw
            .into_iter()
            .map(|p| {
                let (v, f) = floor(p);
                floored += usize::from(f);
                v
            })
            .collect();
        Ok((out, floored))
    }
}

pub(crate) fn floor(p: f64) -> (f64, bool) {
    let v = p.clamp(PROPENSITY_FLOOR, 1.0 - PROPENSITY_FLOOR);
    (v, v != p)
}
