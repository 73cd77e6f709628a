//! Ground-truth x-specific effects computed from potential responses.
//!
//! Exact mode partitions every exogenous source into intervals on which all
//! potential responses are constant and integrates the outcome's own source
//! in closed form. Monte Carlo mode draws units and conditions on X by
//! rejection.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Intervention, ScmSpec, Unit};
use crate::data::{Group, Target, ThresholdMode, ThresholdSpec};
use crate::error::{Error, Result};

/// (z levels, w levels)
type StratumKey = (Vec<u32>, Vec<u32>);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEffects {
    pub target: Target,
    pub de: f64,
    pub ie: f64,
    pub se: f64,
    pub tv: f64,
    /// Units drawn (0 in exact mode).
    pub mc_samples: usize,
    /// Largest standard error among the four quantities (0 in exact mode).
    pub mc_std_error: f64,
}

/// `E[T_{x1,W_{x0}} - T_{x0} | x0, z, w]` together with the density ratio
/// that links it to the direct-effect sample influence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumDirectEffect {
    pub z: Vec<u32>,
    pub w: Vec<u32>,
    pub direct_effect: f64,
    pub p_given_x0: f64,
    pub p: f64,
    /// `direct_effect * p_given_x0 / p`.
    pub influence_limit: f64,
}

const SHARD: usize = 1 << 15;

impl ScmSpec {
    /// Representative units of the exact partition with their probabilities.
    pub(crate) fn exact_cells(&self) -> Vec<(Unit, f64)> {
        let mut xz_cells = vec![];
        let mut acc = 0.0;
        for a in &self.xz {
            if a.p > 0.0 {
                xz_cells.push((acc + a.p / 2.0, a.p));
            }
            acc += a.p;
        }
        let mut w_cells: Vec<Vec<(f64, f64)>> = Vec::with_capacity(self.w.len());
        for k in 0..self.w.len() {
            let mut cuts = self.mediator_breakpoints(k);
            cuts.push(0.0);
            cuts.push(1.0);
            cuts.retain(|c| (0.0..=1.0).contains(c));
            cuts.sort_by(|a, b| a.total_cmp(b));
            cuts.dedup();
            w_cells.push(
                cuts.windows(2)
                    .filter(|p| p[1] > p[0])
                    .map(|p| ((p[0] + p[1]) / 2.0, p[1] - p[0]))
                    .collect(),
            );
        }
        let mut combos: Vec<(Vec<f64>, f64)> = vec![(vec![], 1.0)];
        for cells in &w_cells {
            combos = combos
                .iter()
                .flat_map(|(us, wt)| {
                    cells.iter().map(move |(u, len)| {
                        let mut next = us.clone();
                        next.push(*u);
                        (next, wt * len)
                    })
                })
                .collect();
        }
        let mut out = Vec::with_capacity(xz_cells.len() * combos.len());
        for (u_xz, p) in &xz_cells {
            for (u_w, wt) in &combos {
                out.push((
                    Unit {
                        u_xz: *u_xz,
                        u_w: u_w.clone(),
                        u_y: 0.5,
                    },
                    p * wt,
                ));
            }
        }
        out
    }

    fn factual(&self) -> Intervention {
        Intervention {
            x: None,
            w: vec![None; self.w.len()],
        }
    }

    fn set_x(&self, g: Group) -> Intervention {
        Intervention {
            x: Some(g),
            w: vec![None; self.w.len()],
        }
    }

    /// Threshold on the model's true score; quantile mode uses the exact
    /// population law of S (smallest s with P(S <= s) >= q).
    pub fn resolve_threshold(&self, spec: &ThresholdSpec) -> Result<f64> {
        spec.validate()?;
        if spec.mode == ThresholdMode::Fixed {
            return Ok(spec.value);
        }
        let iv = self.factual();
        let mut mass: Vec<(f64, f64)> = self
            .exact_cells()
            .into_iter()
            .map(|(u, p)| (self.respond(&u, &iv).s, p))
            .collect();
        mass.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum = 0.0;
        for (s, p) in &mass {
            cum += p;
            if cum >= spec.value - 1e-12 {
                return Ok(*s);
            }
        }
        Ok(mass.last().map(|m| m.0).unwrap_or(spec.value))
    }
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: f64,
    sum: f64,
    sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sq += v * v;
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.sum += o.sum;
        self.sq += o.sq;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    fn var_of_mean(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        let m = self.mean();
        ((self.sq - self.n * m * m) / (self.n - 1.0)).max(0.0) / self.n
    }
}

#[derive(Default, Clone, Copy)]
struct McAcc {
    de: Moments,
    ie: Moments,
    c0: Moments,
    b0: Moments,
    d1: Moments,
}

/// x-specific direct, indirect and spurious effects of X on `target`, plus TV.
pub fn oracle_effects(
    model: &ScmSpec,
    target: Target,
    threshold: &ThresholdSpec,
    mode: OracleMode,
) -> Result<OracleEffects> {
    let t = model.resolve_threshold(threshold)?;
    let strict = threshold.strict;
    let x0 = model.set_x(Group::X0);
    let x1 = model.set_x(Group::X1);
    match mode {
        OracleMode::Exact => {
            let value = |e: &super::Endogenous| ScmSpec::target_value(e, target, t, strict, true);
            let (mut p0, mut p1) = (0.0, 0.0);
            let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
            for (u, wt) in model.exact_cells() {
                let f = model.respond(&u, &model.factual());
                match f.x {
                    Group::X0 => {
                        p0 += wt;
                        a += wt * value(&model.nested_response(&u, Group::X1, Group::X0));
                        b += wt * value(&model.respond(&u, &x0));
                        c += wt * value(&model.respond(&u, &x1));
                    }
                    Group::X1 => {
                        p1 += wt;
                        d += wt * value(&model.respond(&u, &x1));
                    }
                }
            }
            if p0 <= 0.0 {
                return Err(Error::DegenerateConditioning(Group::X0));
            }
            if p1 <= 0.0 {
                return Err(Error::DegenerateConditioning(Group::X1));
            }
            let (a, b, c, d) = (a / p0, b / p0, c / p0, d / p1);
            Ok(OracleEffects {
                target,
                de: a - b,
                ie: a - c,
                se: c - d,
                tv: d - b,
                mc_samples: 0,
                mc_std_error: 0.0,
            })
        }
        OracleMode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::InvalidConfig("Monte Carlo oracle needs mc >= 1".into()));
            }
            let shards = samples.div_ceil(SHARD);
            let parts: Vec<McAcc> = (0..shards)
                .into_par_iter()
                .map(|shard| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(shard as u64);
                    let count = SHARD.min(samples - shard * SHARD);
                    let mut acc = McAcc::default();
                    let value =
                        |e: &super::Endogenous| ScmSpec::target_value(e, target, t, strict, false);
                    for _ in 0..count {
                        let u = model.draw_unit(&mut rng);
                        let f = model.respond(&u, &model.factual());
                        match f.x {
                            Group::X0 => {
                                let a = value(&model.nested_response(&u, Group::X1, Group::X0));
                                let b = value(&model.respond(&u, &x0));
                                let c = value(&model.respond(&u, &x1));
                                acc.de.push(a - b);
                                acc.ie.push(a - c);
                                acc.c0.push(c);
                                acc.b0.push(b);
                            }
                            Group::X1 => acc.d1.push(value(&model.respond(&u, &x1))),
                        }
                    }
                    acc
                })
                .collect();
            let mut acc = McAcc::default();
            for p in &parts {
                acc.de.merge(&p.de);
                acc.ie.merge(&p.ie);
                acc.c0.merge(&p.c0);
                acc.b0.merge(&p.b0);
                acc.d1.merge(&p.d1);
            }
            if acc.b0.n == 0.0 {
                return Err(Error::DegenerateConditioning(Group::X0));
            }
            if acc.d1.n == 0.0 {
                return Err(Error::DegenerateConditioning(Group::X1));
            }
            let errors = [
                acc.de.var_of_mean(),
                acc.ie.var_of_mean(),
                acc.c0.var_of_mean() + acc.d1.var_of_mean(),
                acc.d1.var_of_mean() + acc.b0.var_of_mean(),
            ];
            Ok(OracleEffects {
                target,
                de: acc.de.mean(),
                ie: acc.ie.mean(),
                se: acc.c0.mean() - acc.d1.mean(),
                tv: acc.d1.mean() - acc.b0.mean(),
                mc_samples: samples,
                mc_std_error: errors.iter().cloned().fold(0.0, f64::max).sqrt(),
            })
        }
    }
}

/// Stratum-specific direct effects `E[T_{x1,W_{x0}} - T_{x0} | x0, z, w]`
/// over every (z, w) stratum reachable in the x0 group, by exact integration.
pub fn oracle_stratum_direct_effects(
    model: &ScmSpec,
    target: Target,
    threshold: &ThresholdSpec,
) -> Result<Vec<StratumDirectEffect>> {
    let t = model.resolve_threshold(threshold)?;
    let strict = threshold.strict;
    let x0 = model.set_x(Group::X0);
    let value = |e: &super::Endogenous| ScmSpec::target_value(e, target, t, strict, true);
    // (mass in x0, effect mass in x0, total mass)
    let mut strata: BTreeMap<StratumKey, (f64, f64, f64)> = BTreeMap::new();
    let mut p0 = 0.0;
    for (u, wt) in model.exact_cells() {
        let f = model.respond(&u, &model.factual());
        let entry = strata
            .entry((f.z.clone(), f.w.clone()))
            .or_insert((0.0, 0.0, 0.0));
        entry.2 += wt;
        if f.x == Group::X0 {
            p0 += wt;
            let nested = value(&model.nested_response(&u, Group::X1, Group::X0));
            let base = value(&model.respond(&u, &x0));
            entry.0 += wt;
            entry.1 += wt * (nested - base);
        }
    }
    if p0 <= 0.0 {
        return Err(Error::DegenerateConditioning(Group::X0));
    }
    Ok(strata
        .into_iter()
        .filter(|(_, (m0, _, _))| *m0 > 0.0)
        .map(|((z, w), (m0, eff, total))| {
            let de = eff / m0;
            let p_given_x0 = m0 / p0;
            StratumDirectEffect {
                z,
                w,
                direct_effect: de,
                p_given_x0,
                p: total,
                influence_limit: de * p_given_x0 / total,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::BuiltinModel;

    fn basic() -> ScmSpec {
        BuiltinModel::HiringBasic { p0: 0.49, p1: 0.51 }.build().unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn hiring_basic_exact_effects() {
        let m = basic();
        let th = ThresholdSpec::fixed(0.5);
        let y = oracle_effects(&m, Target::Y, &th, OracleMode::Exact).unwrap();
        assert!(close(y.de, 0.02, 1e-12) && y.ie == 0.0 && y.se == 0.0 && close(y.tv, 0.02, 1e-12));
        let yhat = oracle_effects(&m, Target::Yhat, &th, OracleMode::Exact).unwrap();
        assert_eq!((yhat.de, yhat.ie, yhat.se, yhat.tv), (1.0, 0.0, 0.0, 1.0));
        let mc = oracle_effects(&m, Target::M, &th, OracleMode::Exact).unwrap();
        assert!(close(mc.de, 0.98, 1e-12));
        assert!(close(mc.de, yhat.de - y.de, 1e-12));
    }

    #[test]
    fn hiring_extended_score_effects() {
        let (alpha, beta, lambda) = (0.2, 0.45, 0.1);
        let m = BuiltinModel::HiringExtended {
            alpha,
            beta,
            lambda,
        }
        .build()
        .unwrap();
        let s = oracle_effects(&m, Target::S, &ThresholdSpec::fixed(0.5), OracleMode::Exact).unwrap();
        assert!(close(s.de, alpha, 1e-12), "{s:?}");
        assert!(close(s.ie, -lambda * beta, 1e-12), "{s:?}");
        assert!(close(s.se, 0.0, 1e-12));
    }

    #[test]
    fn exact_additivity_and_symmetry() {
        for seed in 0..10 {
            let m = BuiltinModel::RandomDiscrete {
                z_levels: 3,
                w_levels: 3,
                seed,
                no_direct: false,
            }
            .build()
            .unwrap();
            let th = ThresholdSpec::fixed(0.5);
            let y = oracle_effects(&m, Target::Y, &th, OracleMode::Exact).unwrap();
            let s = oracle_effects(&m, Target::S, &th, OracleMode::Exact).unwrap();
            for e in [&y, &s] {
                assert!(close(e.tv, e.de - e.ie - e.se, 1e-12));
            }
            assert_eq!((y.de, y.ie, y.se), (s.de, s.ie, s.se));
        }
    }

    #[test]
    fn monte_carlo_agrees_with_exact() {
        let m = basic();
        let th = ThresholdSpec::fixed(0.5);
        for target in Target::ALL {
            let exact = oracle_effects(&m, target, &th, OracleMode::Exact).unwrap();
            let mc = oracle_effects(
                &m,
                target,
                &th,
                OracleMode::MonteCarlo {
                    samples: 200_000,
                    seed: 3,
                },
            )
            .unwrap();
            let tol = 3.0 * mc.mc_std_error + 1e-12;
            assert!(close(mc.de, exact.de, tol), "{target}: {mc:?} vs {exact:?}");
            assert!(close(mc.tv, mc.de - mc.ie - mc.se, 1e-12));
        }
    }

    #[test]
    fn monte_carlo_error_shrinks() {
        let m = BuiltinModel::RandomDiscrete {
            z_levels: 2,
            w_levels: 2,
            seed: 2,
            no_direct: false,
        }
        .build()
        .unwrap();
        let th = ThresholdSpec::fixed(0.5);
        let run = |n| {
            oracle_effects(&m, Target::Y, &th, OracleMode::MonteCarlo { samples: n, seed: 1 })
                .unwrap()
                .mc_std_error
        };
        let ratio = run(200_000) / run(100_000);
        assert!((ratio - 0.5f64.sqrt()).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let m = basic();
        let mode = OracleMode::MonteCarlo {
            samples: 70_000,
            seed: 8,
        };
        let a = oracle_effects(&m, Target::Y, &ThresholdSpec::fixed(0.5), mode).unwrap();
        let b = oracle_effects(&m, Target::Y, &ThresholdSpec::fixed(0.5), mode).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quantile_threshold_on_population() {
        let m = basic();
        let t = m.resolve_threshold(&ThresholdSpec::quantile(0.5)).unwrap();
        assert_eq!(t, 0.49);
    }

    #[test]
    fn stratum_effects_single_stratum() {
        let st = oracle_stratum_direct_effects(&basic(), Target::Y, &ThresholdSpec::fixed(0.5)).unwrap();
        assert_eq!(st.len(), 1);
        assert!(close(st[0].influence_limit, 0.02, 1e-12));
    }
}
