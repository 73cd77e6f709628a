use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::{Mechanism, Origin, Parent, ScmSpec, Variable, XzAtom};
use crate::data::Group;
use crate::error::{Error, Result};

/// Named parametric model families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "kebab-case")]
pub enum BuiltinModel {
    /// `X = 1(U_X < 0.5)`, `Y = 1(U_Y < p_X)`.
    HiringBasic { p0: f64, p1: f64 },
    /// `X = 1(U_X < 0.5)`, `W = 1(U_W < 0.5 + λX)`, `Y = 1(U_Y < 0.1 + αX + βW)`.
    HiringExtended { alpha: f64, beta: f64, lambda: f64 },
    /// Random categorical model with one confounder (dependent on X) and one
    /// mediator. With `no_direct`, `P(y | x, z, w)` does not depend on x.
    RandomDiscrete {
        z_levels: u32,
        w_levels: u32,
        seed: u64,
        #[serde(default, skip_serializing_if = "is_false")]
        no_direct: bool,
    },
}

fn is_false(b: &bool) -> bool {
    !*b
}

const CLIP_LO: f64 = 0.05;
const CLIP_HI: f64 = 0.95;

/// Dirichlet(1, ..., 1) draw, clipped per cell to [0.05, 0.95] and renormalized.
fn flat_dirichlet<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    let clipped: Vec<f64> = raw
        .iter()
        .map(|v| (v / total).clamp(CLIP_LO, CLIP_HI))
        .collect();
    let total: f64 = clipped.iter().sum();
    clipped.iter().map(|v| v / total).collect()
}

fn fair_coin_x() -> Vec<XzAtom> {
    vec![
        XzAtom {
            x: Group::X1,
            z: vec![],
            p: 0.5,
        },
        XzAtom {
            x: Group::X0,
            z: vec![],
            p: 0.5,
        },
    ]
}

impl BuiltinModel {
    pub fn name(&self) -> &'static str {
        match self {
            BuiltinModel::HiringBasic { .. } => "hiring-basic",
            BuiltinModel::HiringExtended { .. } => "hiring-extended",
            BuiltinModel::RandomDiscrete { .. } => "random-discrete",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BuiltinModel::HiringBasic { p0, p1 } => {
                for (n, p) in [("p0", p0), ("p1", p1)] {
                    if !(p > 0.0 && p < 1.0) {
                        return Err(Error::InvalidParams(format!("{n} = {p} must lie in (0, 1)")));
                    }
                }
            }
            BuiltinModel::HiringExtended {
                alpha,
                beta,
                lambda,
            } => {
                if !(alpha > 0.0 && lambda > 0.0) {
                    return Err(Error::InvalidParams("alpha and lambda must be positive".into()));
                }
                let upper = (0.9 - alpha) / (1.0 + lambda);
                if !(beta > 0.4 && beta < upper) {
                    return Err(Error::InvalidParams(format!(
                        "beta = {beta} must satisfy 0.4 < beta < (0.9 - alpha)/(1 + lambda) = {upper}"
                    )));
                }
            }
            BuiltinModel::RandomDiscrete {
                z_levels, w_levels, ..
            } => {
                if z_levels < 1 || w_levels < 2 {
                    return Err(Error::InvalidParams(
                        "random-discrete needs z_levels >= 1 and w_levels >= 2".into(),
                    ));
                }
                if z_levels > 64 || w_levels > 64 {
                    return Err(Error::InvalidParams("at most 64 levels per variable".into()));
                }
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<ScmSpec> {
        self.validate()?;
        let origin = Origin::Builtin(self.clone());
        match *self {
            BuiltinModel::HiringBasic { p0, p1 } => ScmSpec::new(
                origin,
                vec![],
                vec![],
                fair_coin_x(),
                vec![],
                Mechanism::Table {
                    parents: vec![Parent::X],
                    rows: vec![vec![1.0 - p0, p0], vec![1.0 - p1, p1]],
                },
            ),
            BuiltinModel::HiringExtended {
                alpha,
                beta,
                lambda,
            } => ScmSpec::new(
                origin,
                vec![],
                vec![Variable::new("w", 2)],
                fair_coin_x(),
                vec![Mechanism::Threshold {
                    intercept: 0.5,
                    coefs: vec![(Parent::X, lambda)],
                }],
                Mechanism::Threshold {
                    intercept: 0.1,
                    coefs: vec![(Parent::X, alpha), (Parent::W(0), beta)],
                },
            ),
            BuiltinModel::RandomDiscrete {
                z_levels,
                w_levels,
                seed,
                no_direct,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let nz = z_levels as usize;
                let nw = w_levels as usize;
                let joint = flat_dirichlet(&mut rng, 2 * nz);
                let mut xz = Vec::with_capacity(2 * nz);
                for (xi, g) in [Group::X0, Group::X1].into_iter().enumerate() {
                    for z in 0..nz {
                        xz.push(XzAtom {
                            x: g,
                            z: vec![z as u32],
                            p: joint[xi * nz + z],
                        });
                    }
                }
                let w_rows: Vec<Vec<f64>> =
                    (0..2 * nz).map(|_| flat_dirichlet(&mut rng, nw)).collect();
                let draw_p = |rng: &mut ChaCha8Rng| {
                    let p = flat_dirichlet(rng, 2)[1];
                    vec![1.0 - p, p]
                };
                let y_rows: Vec<Vec<f64>> = if no_direct {
                    let shared: Vec<Vec<f64>> = (0..nz * nw).map(|_| draw_p(&mut rng)).collect();
                    shared.iter().chain(shared.iter()).cloned().collect()
                } else {
                    (0..2 * nz * nw).map(|_| draw_p(&mut rng)).collect()
                };
                ScmSpec::new(
                    origin,
                    vec![Variable::new("z", z_levels)],
                    vec![Variable::new("w", w_levels)],
                    xz,
                    vec![Mechanism::Table {
                        parents: vec![Parent::X, Parent::Z(0)],
                        rows: w_rows,
                    }],
                    Mechanism::Table {
                        parents: vec![Parent::X, Parent::Z(0), Parent::W(0)],
                        rows: y_rows,
                    },
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hiring_extended_constraint() {
        let ok = BuiltinModel::HiringExtended {
            alpha: 0.2,
            beta: 0.45,
            lambda: 0.1,
        };
        assert!(ok.validate().is_ok());
        let low_beta = BuiltinModel::HiringExtended {
            alpha: 0.2,
            beta: 0.3,
            lambda: 0.1,
        };
        assert!(matches!(low_beta.validate(), Err(Error::InvalidParams(_))));
        let high_beta = BuiltinModel::HiringExtended {
            alpha: 0.2,
            beta: 0.64,
            lambda: 0.1,
        };
        assert!(high_beta.validate().is_err());
    }

    #[test]
    fn hiring_basic_range() {
        assert!(BuiltinModel::HiringBasic { p0: 0.0, p1: 0.5 }.validate().is_err());
        assert!(BuiltinModel::HiringBasic { p0: 0.2, p1: 1.0 }.validate().is_err());
    }

    #[test]
    fn random_discrete_positivity() {
        for seed in 0..20 {
            let m = BuiltinModel::RandomDiscrete {
                z_levels: 4,
                w_levels: 4,
                seed,
                no_direct: false,
            }
            .build()
            .unwrap();
            for a in &m.xz {
                assert!(a.p > 0.0 && a.p < 1.0);
            }
            let rows = |mech: &Mechanism| match mech {
                Mechanism::Table { rows, .. } => rows.clone(),
                _ => unreachable!(),
            };
            for r in rows(&m.w_mechanisms[0]).iter().chain(&rows(&m.y_mechanism)) {
                assert!(r.iter().all(|p| *p > 0.0 && *p < 1.0));
            }
        }
    }

    #[test]
    fn no_direct_variant_ignores_x() {
        let m = BuiltinModel::RandomDiscrete {
            z_levels: 3,
            w_levels: 2,
            seed: 4,
            no_direct: true,
        }
        .build()
        .unwrap();
        for z in 0..3 {
            for w in 0..2 {
                assert_eq!(m.score(Group::X0, &[z], &[w]), m.score(Group::X1, &[z], &[w]));
            }
        }
    }
}
