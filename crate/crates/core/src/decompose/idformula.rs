//! Effects evaluated directly from the identification expressions
//!
//!   E[T_{x1,W_{x0}} | x0] = Σ_{z,w} Ê[T | x1, z, w] P̂(w | z, x0) P̂(z | x0)
//!   E[T_{x1} | x0]        = Σ_z Ê[T | x1, z] P̂(z | x0)
//!
//! with empirical frequencies. Shares no code with the weighted estimators.

use std::collections::HashMap;

use super::EffectKind;
use crate::data::{CovariateValues, Group, SfmDataset, Target};
use crate::error::{Error, Result};
use crate::stats;

/// Stratum codes over (z, w) with numeric columns split at their quintiles.
fn strata(data: &SfmDataset, bins: usize) -> Vec<Vec<u32>> {
    let cols: Vec<Vec<u32>> = data
        .z()
        .iter()
        .chain(data.w())
        .map(|c| match &c.values {
            CovariateValues::Categorical { codes, .. } => codes.clone(),
            CovariateValues::Numeric(v) => {
                let mut s = v.clone();
                s.sort_by(|a, b| a.total_cmp(b));
                let cuts: Vec<f64> = (1..bins)
                    .map(|j| stats::quantile_sorted(&s, j as f64 / bins as f64))
                    .collect();
                v.iter().map(|x| cuts.partition_point(|c| c < x) as u32).collect()
            }
        })
        .collect();
    (0..data.n()).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

#[derive(Default)]
struct Cell {
    count: f64,
    sum: f64,
}

impl Cell {
    fn add(&mut self, v: f64) {
        self.count += 1.0;
        self.sum += v;
    }

    fn mean(&self) -> f64 {
        self.sum / self.count
    }
}

/// Same as [`id_formula_effect_from`] with baseline x0.
pub fn id_formula_effect(data: &SfmDataset, kind: EffectKind, target: Target) -> Result<f64> {
    id_formula_effect_from(data, kind, target, Group::X0)
}

/// Effect of `kind` on `target` with `baseline` in the role of x0 (so a
/// baseline of x1 yields the mirrored transitions, e.g. the direct effect
/// x1 → x0 among x1).
pub fn id_formula_effect_from(
    data: &SfmDataset,
    kind: EffectKind,
    target: Target,
    baseline: Group,
) -> Result<f64> {
    let t = data.target(target)?;
    let nz = data.z().len();
    let keys = strata(data, data.schema().bins.max(1));
    let base = baseline;
    let other = baseline.other();

    let mut group = [Cell::default(), Cell::default()];
    // Among the baseline group: counts of z and of (z, w).
    let mut z_base: HashMap<&[u32], f64> = HashMap::new();
    let mut zw_base: HashMap<&[u32], f64> = HashMap::new();
    // Among the other group: outcome means by (z, w) and by z.
    let mut zw_other: HashMap<&[u32], Cell> = HashMap::new();
    let mut z_other: HashMap<&[u32], Cell> = HashMap::new();
    for (i, g) in data.x().iter().enumerate() {
        group[g.index()].add(t[i]);
        let k = keys[i].as_slice();
        if *g == base {
            *z_base.entry(&k[..nz]).or_default() += 1.0;
            *zw_base.entry(k).or_default() += 1.0;
        } else {
            zw_other.entry(k).or_default().add(t[i]);
            z_other.entry(&k[..nz]).or_default().add(t[i]);
        }
    }
    let n_base = group[base.index()].count;
    if n_base == 0.0 || group[other.index()].count == 0.0 {
        return Err(Error::DegenerateAttribute("a group is empty".into()));
    }
    let empty = |k: &[u32]| Error::EmptyCell {
        x: other,
        stratum: format!("{k:?}"),
    };

    // E[T_{other, W_base} | base]
    let mut nested = 0.0;
    let mut zw_sorted: Vec<_> = zw_base.iter().collect();
    zw_sorted.sort_by(|a, b| a.0.cmp(b.0));
    for (k, c) in zw_sorted {
        let f = zw_other.get(k).ok_or_else(|| empty(k))?.mean();
        let pz = z_base[&k[..nz]] / n_base;
        let pw = c / z_base[&k[..nz]];
        nested += f * pw * pz;
    }
    // E[T_{other} | base]
    let mut cross = 0.0;
    let mut z_sorted: Vec<_> = z_base.iter().collect();
    z_sorted.sort_by(|a, b| a.0.cmp(b.0));
    for (k, c) in z_sorted {
        let f = z_other.get(k).ok_or_else(|| empty(k))?.mean();
        cross += f * c / n_base;
    }
    let factual_base = group[base.index()].mean();
    let factual_other = group[other.index()].mean();
    Ok(match kind {
        EffectKind::De => nested - factual_base,
        EffectKind::Ie => nested - cross,
        EffectKind::Se => cross - factual_other,
        EffectKind::Tv => factual_other - factual_base,
    })
}
