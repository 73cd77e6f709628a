use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{row_effects, EffectKind};
use crate::data::{SfmDataset, Target};
use crate::error::{Error, Result};
use crate::nuisance::NuisanceSet;
use crate::stats::Summary;

/// Per-row summands of one estimator; their mean is the estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleInfluence {
    pub kind: EffectKind,
    pub target: Target,
    #[serde(skip)]
    pub values: Vec<f64>,
    pub summary: Summary,
}

pub fn sample_influence(
    data: &SfmDataset,
    nuisances: &NuisanceSet,
    kind: EffectKind,
    target: Target,
) -> Result<SampleInfluence> {
    if kind == EffectKind::Tv {
        return Err(Error::InvalidConfig("sample influence is defined for DE, IE and SE".into()));
    }
    let rows = row_effects(data, nuisances, target)?;
    let values = rows.get(kind).to_vec();
    Ok(SampleInfluence {
        kind,
        target,
        summary: Summary::of(&values),
        values,
    })
}

/// All three influence columns for one target.
#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceTable {
    pub target: Target,
    pub de: Vec<f64>,
    pub ie: Vec<f64>,
    pub se: Vec<f64>,
}

impl InfluenceTable {
    pub fn compute(data: &SfmDataset, nuisances: &NuisanceSet, target: Target) -> Result<Self> {
        let r = row_effects(data, nuisances, target)?;
        Ok(InfluenceTable {
            target,
            de: r.de,
            ie: r.ie,
            se: r.se,
        })
    }

    /// Column of a pathway; TV has no influence column.
    pub fn get(&self, kind: EffectKind) -> &[f64] {
        match kind {
            EffectKind::De => &self.de,
            EffectKind::Ie => &self.ie,
            EffectKind::Se => &self.se,
            EffectKind::Tv => &[],
        }
    }

    /// `row_id, z..., w..., si_de, si_ie, si_se` with the dataset's labels.
    pub fn write_csv<W: Write>(&self, data: &SfmDataset, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["row_id".to_string()];
        header.extend(data.z().iter().map(|c| c.name.clone()));
        header.extend(data.w().iter().map(|c| c.name.clone()));
        header.extend(["si_de", "si_ie", "si_se"].map(String::from));
        wtr.write_record(&header).map_err(csv_err)?;
        for i in 0..data.n() {
            let (z, w) = data.stratum_labels(i);
            let mut rec = vec![i.to_string()];
            rec.extend(z);
            rec.extend(w);
            for v in [self.de[i], self.ie[i], self.se[i]] {
                rec.push(format!("{v}"));
            }
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Mean influence within each observed (z, w) stratum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumInfluence {
    pub z: Vec<String>,
    pub w: Vec<String>,
    pub count: usize,
    pub mean: f64,
}

pub fn influence_by_stratum(data: &SfmDataset, values: &[f64]) -> Vec<StratumInfluence> {
    let mut acc: BTreeMap<(Vec<String>, Vec<String>), (usize, f64)> = BTreeMap::new();
    for (i, v) in values.iter().enumerate() {
        let e = acc.entry(data.stratum_labels(i)).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += v;
    }
    acc.into_iter()
        .map(|((z, w), (count, sum))| StratumInfluence {
            z,
            w,
            count,
            mean: sum / count as f64,
        })
        .collect()
}
