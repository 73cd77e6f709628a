//! Covariate encodings: stratum keys for frequency estimation and design
//! rows for regression.

use std::collections::HashMap;

use crate::data::{CovariateValues, Row, SfmDataset, Value};
use crate::error::{Error, Result};
use crate::stats;

/// Packed mixed-radix code of a stratum; Z columns are the most significant.
pub(crate) type Key = u64;

/// Keyed table that is a flat vector when the key space is small.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Table<T> {
    Dense(Vec<Option<T>>),
    Sparse(HashMap<Key, T>),
}

/// Largest key space stored densely.
const DENSE_LIMIT: Key = 1 << 16;

impl<T: Default> Table<T> {
    pub fn new(span: Key) -> Self {
        if span <= DENSE_LIMIT {
            Table::Dense((0..span).map(|_| None).collect())
        } else {
            Table::Sparse(HashMap::new())
        }
    }

    pub fn entry(&mut self, key: Key) -> &mut T {
        match self {
            Table::Dense(v) => v[key as usize].get_or_insert_with(T::default),
            Table::Sparse(m) => m.entry(key).or_default(),
        }
    }

    pub fn get(&self, key: Key) -> Option<&T> {
        match self {
            Table::Dense(v) => v.get(key as usize).and_then(Option::as_ref),
            Table::Sparse(m) => m.get(&key),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Coder {
    Levels(Vec<String>),
    /// Interior cut points of equal-frequency bins; a value equal to a cut
    /// belongs to the lower bin.
    Bins(Vec<f64>),
}

impl Coder {
    fn fit(values: &CovariateValues, bins: usize) -> Coder {
        match values {
            CovariateValues::Categorical { levels, .. } => Coder::Levels(levels.clone()),
            CovariateValues::Numeric(v) => {
                let mut sorted = v.clone();
                sorted.sort_by(|a, b| a.total_cmp(b));
                let mut cuts: Vec<f64> = (1..bins)
                    .map(|j| stats::quantile_sorted(&sorted, j as f64 / bins as f64))
                    .collect();
                cuts.dedup();
                Coder::Bins(cuts)
            }
        }
    }

    fn bin(cuts: &[f64], v: f64) -> u32 {
        cuts.partition_point(|c| *c < v) as u32
    }

    /// Number of codes, including one slot for labels unseen at fit time.
    fn radix(&self) -> u64 {
        match self {
            Coder::Levels(l) => l.len() as u64 + 1,
            Coder::Bins(c) => c.len() as u64 + 1,
        }
    }

    fn unseen(fitted: &[String]) -> u32 {
        fitted.len() as u32
    }

    /// Codes for a whole column, translating dataset levels to fitted levels.
    fn codes(&self, values: &CovariateValues, name: &str) -> Result<Vec<u32>> {
        match (self, values) {
            (Coder::Levels(fitted), CovariateValues::Categorical { levels, codes }) => {
                let map: Vec<u32> = levels
                    .iter()
                    .map(|l| fitted.iter().position(|f| f == l).map_or(Self::unseen(fitted), |p| p as u32))
                    .collect();
                Ok(codes.iter().map(|&c| map[c as usize]).collect())
            }
            (Coder::Bins(cuts), CovariateValues::Numeric(v)) => {
                Ok(v.iter().map(|&x| Self::bin(cuts, x)).collect())
            }
            _ => Err(Error::SchemaMismatch(format!("column `{name}` changed type"))),
        }
    }

    fn code(&self, value: &Value, name: &str) -> Result<u32> {
        match (self, value) {
            (Coder::Levels(fitted), Value::Label(l)) => {
                Ok(fitted.iter().position(|f| f == l).map_or(Self::unseen(fitted), |p| p as u32))
            }
            (Coder::Bins(cuts), Value::Number(x)) => Ok(Self::bin(cuts, *x)),
            _ => Err(Error::SchemaMismatch(format!("column `{name}` changed type"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Feature {
    /// Treatment-coded dummies; the first fitted level is the reference.
    OneHot(Vec<String>),
    Numeric,
}

impl Feature {
    fn width(&self) -> usize {
        match self {
            Feature::OneHot(levels) => levels.len().saturating_sub(1),
            Feature::Numeric => 1,
        }
    }
}

/// Fitted encodings for the Z and W blocks of one training dataset.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Encoder {
    names: Vec<String>,
    n_z: usize,
    coders: Vec<Coder>,
    features: Vec<Feature>,
    /// Product of the W radices: `z_key = zw_key / w_span`.
    w_span: Key,
    /// Number of distinct (z, w) keys.
    span: Key,
}

/// Encoded covariates for every row of a dataset.
pub(crate) struct Encoded {
    pub z_keys: Vec<Key>,
    pub zw_keys: Vec<Key>,
    /// Row-major regression features of (z, w); the first `z_width`
    /// columns belong to Z.
    pub features: Vec<f64>,
    pub z_width: usize,
    pub width: usize,
}

impl Encoded {
    /// One row per distinct (z, w) key, in order of first appearance, with
    /// multiplicities. Only meaningful for keyed encodings.
    pub fn collapse(&self, span: Key) -> (Encoded, Vec<f64>) {
        let mut slot: Table<usize> = Table::new(span);
        let mut out = Encoded {
            z_keys: vec![],
            zw_keys: vec![],
            features: vec![],
            z_width: self.z_width,
            width: self.width,
        };
        let mut counts: Vec<f64> = vec![];
        for (z, zw) in self.z_keys.iter().zip(&self.zw_keys) {
            let j = slot.entry(*zw);
            if *j == 0 {
                out.z_keys.push(*z);
                out.zw_keys.push(*zw);
                counts.push(0.0);
                *j = counts.len();
            }
            counts[*j - 1] += 1.0;
        }
        (out, counts)
    }
}

impl Encoder {
    pub fn fit(data: &SfmDataset, bins: usize) -> Result<Encoder> {
        let cols: Vec<_> = data.z().iter().chain(data.w()).collect();
        let coders: Vec<Coder> = cols.iter().map(|c| Coder::fit(&c.values, bins)).collect();
        let mut span: Key = 1;
        let mut w_span: Key = 1;
        for (j, c) in coders.iter().enumerate() {
            span = span
                .checked_mul(c.radix())
                .ok_or_else(|| Error::InvalidConfig("too many covariate strata to index".into()))?;
            if j >= data.z().len() {
                w_span *= c.radix();
            }
        }
        Ok(Encoder {
            names: cols.iter().map(|c| c.name.clone()).collect(),
            n_z: data.z().len(),
            coders,
            w_span,
            span,
            features: cols
                .iter()
                .map(|c| match &c.values {
                    CovariateValues::Categorical { levels, .. } => Feature::OneHot(levels.clone()),
                    CovariateValues::Numeric(_) => Feature::Numeric,
                })
                .collect(),
        })
    }

    fn pack(&self, codes: impl Iterator<Item = u32>) -> Key {
        codes
            .zip(&self.coders)
            .fold(0, |acc, (c, coder)| acc * coder.radix() + Key::from(c))
    }

    pub fn span(&self) -> Key {
        self.span
    }

    pub fn z_span(&self) -> Key {
        self.span / self.w_span
    }

    pub fn has_z(&self) -> bool {
        self.n_z > 0
    }

    pub fn has_zw(&self) -> bool {
        !self.coders.is_empty()
    }

    pub fn z_width(&self) -> usize {
        self.features[..self.n_z].iter().map(Feature::width).sum()
    }

    pub fn width(&self) -> usize {
        self.features.iter().map(Feature::width).sum()
    }

    fn check(&self, z: usize, w: usize) -> Result<()> {
        if z != self.n_z || z + w != self.coders.len() {
            return Err(Error::SchemaMismatch(format!(
                "expected {} confounders and {} mediators",
                self.n_z,
                self.coders.len() - self.n_z
            )));
        }
        Ok(())
    }

    pub fn encode(&self, data: &SfmDataset, keys: bool, features: bool) -> Result<Encoded> {
        self.check(data.z().len(), data.w().len())?;
        let n = data.n();
        let cols: Vec<_> = data.z().iter().chain(data.w()).collect();
        let mut z_keys = vec![];
        let mut zw_keys = vec![];
        if keys {
            let codes = cols
                .iter()
                .zip(&self.coders)
                .map(|(c, coder)| coder.codes(&c.values, &c.name))
                .collect::<Result<Vec<_>>>()?;
            zw_keys = (0..n).map(|i| self.pack(codes.iter().map(|c| c[i]))).collect();
            z_keys = zw_keys.iter().map(|k| k / self.w_span).collect();
        }
        let width = self.width();
        let mut feats = vec![];
        if features {
            feats = vec![0.0; n * width];
            let mut offset = 0;
            for (c, f) in cols.iter().zip(&self.features) {
                match (f, &c.values) {
                    (Feature::OneHot(fitted), CovariateValues::Categorical { levels, codes }) => {
                        let map: Vec<Option<usize>> = levels
                            .iter()
                            .map(|l| fitted.iter().position(|f| f == l).filter(|&p| p > 0))
                            .collect();
                        for (i, &code) in codes.iter().enumerate() {
                            if let Some(p) = map[code as usize] {
                                feats[i * width + offset + p - 1] = 1.0;
                            }
                        }
                    }
                    (Feature::Numeric, CovariateValues::Numeric(v)) => {
                        for (i, x) in v.iter().enumerate() {
                            feats[i * width + offset] = *x;
                        }
                    }
                    _ => return Err(Error::SchemaMismatch(format!("column `{}` changed type", c.name))),
                }
                offset += f.width();
            }
        }
        Ok(Encoded {
            z_keys,
            zw_keys,
            features: feats,
            z_width: self.z_width(),
            width,
        })
    }

    /// Stratum key of a single row over (z, w).
    pub fn row_key(&self, row: &Row) -> Result<Key> {
        self.check(row.z.len(), row.w.len())?;
        let codes = row
            .z
            .iter()
            .chain(&row.w)
            .zip(&self.coders)
            .zip(&self.names)
            .map(|((v, c), name)| c.code(v, name))
            .collect::<Result<Vec<u32>>>()?;
        Ok(self.pack(codes.into_iter()))
    }

    pub fn z_part(&self, key: Key) -> Key {
        key / self.w_span
    }

    /// Regression features of a single row over (z, w).
    pub fn row_features(&self, row: &Row) -> Result<Vec<f64>> {
        self.check(row.z.len(), row.w.len())?;
        let mut out = Vec::with_capacity(self.width());
        for ((v, f), name) in row.z.iter().chain(&row.w).zip(&self.features).zip(&self.names) {
            match (f, v) {
                (Feature::OneHot(levels), Value::Label(l)) => {
                    let p = levels.iter().position(|x| x == l);
                    out.extend((1..levels.len()).map(|k| if p == Some(k) { 1.0 } else { 0.0 }));
                }
                (Feature::Numeric, Value::Number(x)) => out.push(*x),
                _ => return Err(Error::SchemaMismatch(format!("column `{name}` changed type"))),
            }
        }
        Ok(out)
    }

    /// Human-readable stratum label of a (z, w) key, or of a z key when
    /// `z_only`.
    pub fn describe(&self, key: Key, z_only: bool) -> String {
        let cols = if z_only { self.n_z } else { self.coders.len() };
        let mut rest = key;
        let mut parts = vec![];
        for j in (0..cols).rev() {
            let coder = &self.coders[j];
            let code = rest % coder.radix();
            rest /= coder.radix();
            let name = &self.names[j];
            parts.push(match coder {
                Coder::Levels(l) if (code as usize) < l.len() => format!("{name}={}", l[code as usize]),
                Coder::Levels(_) => format!("{name}=<unseen>"),
                Coder::Bins(_) => format!("{name}=bin{code}"),
            });
        }
        parts.reverse();
        parts.join(",")
    }
}
