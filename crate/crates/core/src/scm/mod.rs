//! Structural causal models compatible with the standard fairness model.
//!
//! Every model is expressed in one discrete form: a joint table for (X, Z)
//! driven by a single uniform source (so X and Z may be dependent), one
//! mechanism per mediator driven by its own uniform source, and a binary
//! outcome `Y = 1(U_Y < p(x, z, w))`. The true score is therefore
//! `S(x, z, w) = p(x, z, w)` exactly.

mod builtin;
mod json;
mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use builtin::BuiltinModel;
pub use json::{export_model, import_model};
pub use oracle::{
    oracle_effects, oracle_stratum_direct_effects, OracleEffects, OracleMode, StratumDirectEffect,
};

use crate::data::{Columns, Covariate, Group, SfmDataset, SfmSchema, Target, ThresholdSpec};
use crate::error::{Error, Result};

/// A categorical endogenous variable with levels `0..levels`.
#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub name: String,
    pub levels: u32,
}

impl Variable {
    pub fn new(name: &str, levels: u32) -> Self {
        Variable {
            name: name.into(),
            levels,
        }
    }
}

/// Reference to a parent of a mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parent {
    X,
    Z(usize),
    W(usize),
}

/// How a variable responds to its parents and its exogenous source.
#[derive(Clone, Debug, PartialEq)]
pub enum Mechanism {
    /// Binary: `V = 1(U < intercept + Σ coef · parent)`, probability clamped to [0, 1].
    Threshold {
        intercept: f64,
        coefs: Vec<(Parent, f64)>,
    },
    /// Conditional probability table. Rows are indexed mixed-radix by the
    /// parent values (first parent most significant); each row is a
    /// distribution over the variable's levels.
    Table {
        parents: Vec<Parent>,
        rows: Vec<Vec<f64>>,
    },
}

/// One atom of the joint (X, Z) law.
#[derive(Clone, Debug, PartialEq)]
pub struct XzAtom {
    pub x: Group,
    pub z: Vec<u32>,
    pub p: f64,
}

/// Where a model came from; built-ins keep their parameters for export.
#[derive(Clone, Debug, PartialEq)]
pub enum Origin {
    Builtin(BuiltinModel),
    Custom,
}

/// A structural causal model over (X, Z, W, Y) with independent uniform
/// exogenous sources.
#[derive(Clone, Debug, PartialEq)]
pub struct ScmSpec {
    pub origin: Origin,
    pub z: Vec<Variable>,
    pub w: Vec<Variable>,
    pub xz: Vec<XzAtom>,
    pub w_mechanisms: Vec<Mechanism>,
    pub y_mechanism: Mechanism,
    /// Evaluation order of the mediators (a topological order).
    pub(crate) w_order: Vec<usize>,
}

/// One realization of the exogenous sources.
#[derive(Clone, Debug, PartialEq)]
pub struct Unit {
    pub u_xz: f64,
    pub u_w: Vec<f64>,
    pub u_y: f64,
}

/// Values of the endogenous variables for one unit under one clause.
#[derive(Clone, Debug, PartialEq)]
pub struct Endogenous {
    pub x: Group,
    pub z: Vec<u32>,
    pub w: Vec<u32>,
    pub y: u8,
    /// True score `E[Y | x, z, w]` at the realized (x, z, w).
    pub s: f64,
}

/// Intervention clause: assignments to X and/or mediators, by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Clause {
    assignments: Vec<(String, u32)>,
}

impl Clause {
    pub fn new() -> Self {
        Clause::default()
    }

    pub fn set(mut self, var: &str, value: u32) -> Self {
        self.assignments.push((var.to_string(), value));
        self
    }

    pub fn x(group: Group) -> Self {
        Clause::new().set("x", group.index() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// Resolved clause.
#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct Intervention {
    pub x: Option<Group>,
    pub w: Vec<Option<u32>>,
}

fn clamp01(p: f64) -> f64 {
    p.clamp(0.0, 1.0)
}

/// Binary variables use `1(U < P(V = 1))`; wider ones use the inverse CDF
/// over levels in order.
fn draw(dist: &[f64], u: f64) -> u32 {
    if dist.len() == 2 {
        return u32::from(u < dist[1]);
    }
    let mut acc = 0.0;
    for (k, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return k as u32;
        }
    }
    (dist.len() - 1) as u32
}

fn breakpoints_of(dist: &[f64]) -> Vec<f64> {
    if dist.len() == 2 {
        return vec![dist[1]];
    }
    let mut acc = 0.0;
    dist.iter()
        .take(dist.len().saturating_sub(1))
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

impl ScmSpec {
    /// Assembles and validates a model. Mediators may be listed in any order;
    /// a cyclic mediator graph is rejected.
    pub fn new(
        origin: Origin,
        z: Vec<Variable>,
        w: Vec<Variable>,
        xz: Vec<XzAtom>,
        w_mechanisms: Vec<Mechanism>,
        y_mechanism: Mechanism,
    ) -> Result<Self> {
        if w_mechanisms.len() != w.len() {
            return Err(Error::Parse("one mechanism per mediator required".into()));
        }
        let w_order = topological_order(&w_mechanisms)?;
        let model = ScmSpec {
            origin,
            z,
            w,
            xz,
            w_mechanisms,
            y_mechanism,
            w_order,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parse(m));
        if self.xz.is_empty() {
            return bad("empty (x, z) table".into());
        }
        let mut total = 0.0;
        for a in &self.xz {
            if a.z.len() != self.z.len() {
                return bad("(x, z) atom has wrong arity".into());
            }
            for (v, var) in a.z.iter().zip(&self.z) {
                if *v >= var.levels {
                    return bad(format!("level {v} out of range for {}", var.name));
                }
            }
            if !(a.p >= 0.0 && a.p <= 1.0) {
                return bad(format!("(x, z) probability {} outside [0, 1]", a.p));
            }
            total += a.p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("(x, z) probabilities sum to {total}"));
        }
        for (k, mech) in self.w_mechanisms.iter().enumerate() {
            self.validate_mechanism(mech, self.w[k].levels, &self.w[k].name)?;
        }
        self.validate_mechanism(&self.y_mechanism, 2, "y")?;
        Ok(())
    }

    fn validate_mechanism(&self, mech: &Mechanism, levels: u32, name: &str) -> Result<()> {
        for p in mech.parents() {
            match p {
                Parent::Z(k) if k >= self.z.len() => {
                    return Err(Error::Parse(format!("{name}: unknown confounder parent")))
                }
                Parent::W(k) if k >= self.w.len() => {
                    return Err(Error::Parse(format!("{name}: unknown mediator parent")))
                }
                _ => {}
            }
        }
        match mech {
            Mechanism::Threshold { intercept, coefs } => {
                if levels != 2 {
                    return Err(Error::Parse(format!(
                        "{name}: threshold mechanisms are binary"
                    )));
                }
                if !intercept.is_finite() || coefs.iter().any(|(_, c)| !c.is_finite()) {
                    return Err(Error::Parse(format!("{name}: non-finite coefficient")));
                }
            }
            Mechanism::Table { parents, rows } => {
                let expected: usize = parents.iter().map(|p| self.card(*p) as usize).product();
                if rows.len() != expected {
                    return Err(Error::Parse(format!(
                        "{name}: table has {} rows, expected {expected}",
                        rows.len()
                    )));
                }
                for row in rows {
                    if row.len() != levels as usize {
                        return Err(Error::Parse(format!("{name}: row has wrong length")));
                    }
                    if row.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) {
                        return Err(Error::Parse(format!("{name}: probability outside [0, 1]")));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::Parse(format!("{name}: row sums to {sum}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn builtin(model: BuiltinModel) -> Result<Self> {
        model.build()
    }

    pub fn name(&self) -> &str {
        match &self.origin {
            Origin::Builtin(b) => b.name(),
            Origin::Custom => "custom",
        }
    }

    pub(crate) fn card(&self, p: Parent) -> u32 {
        match p {
            Parent::X => 2,
            Parent::Z(k) => self.z[k].levels,
            Parent::W(k) => self.w[k].levels,
        }
    }

    fn parent_value(p: Parent, x: Group, z: &[u32], w: &[u32]) -> u32 {
        match p {
            Parent::X => x.index() as u32,
            Parent::Z(k) => z[k],
            Parent::W(k) => w[k],
        }
    }

    fn distribution(&self, mech: &Mechanism, levels: u32, x: Group, z: &[u32], w: &[u32]) -> Vec<f64> {
        match mech {
            Mechanism::Threshold { intercept, coefs } => {
                let p = clamp01(
                    intercept
                        + coefs
                            .iter()
                            .map(|(par, c)| c * Self::parent_value(*par, x, z, w) as f64)
                            .sum::<f64>(),
                );
                vec![1.0 - p, p]
            }
            Mechanism::Table { parents, rows } => {
                let mut idx = 0usize;
                for p in parents {
                    idx = idx * self.card(*p) as usize + Self::parent_value(*p, x, z, w) as usize;
                }
                debug_assert_eq!(rows[idx].len(), levels as usize);
                rows[idx].clone()
            }
        }
    }

    /// True score `S(x, z, w) = P(Y = 1 | x, z, w)`.
    pub fn score(&self, x: Group, z: &[u32], w: &[u32]) -> f64 {
        self.distribution(&self.y_mechanism, 2, x, z, w)[1]
    }

    /// Conditional law of mediator `k` given its parents.
    pub fn mediator_distribution(&self, k: usize, x: Group, z: &[u32], w: &[u32]) -> Vec<f64> {
        self.distribution(&self.w_mechanisms[k], self.w[k].levels, x, z, w)
    }

    pub(crate) fn resolve(&self, clause: &Clause) -> Result<Intervention> {
        let mut iv = Intervention {
            x: None,
            w: vec![None; self.w.len()],
        };
        for (name, value) in &clause.assignments {
            if name == "x" {
                iv.x = Some(match value {
                    0 => Group::X0,
                    1 => Group::X1,
                    v => return Err(Error::InvalidParams(format!("x cannot be set to {v}"))),
                });
            } else if let Some(k) = self.w.iter().position(|v| &v.name == name) {
                if *value >= self.w[k].levels {
                    return Err(Error::InvalidParams(format!("{name} has no level {value}")));
                }
                iv.w[k] = Some(*value);
            } else {
                return Err(Error::UnknownVariable(name.clone()));
            }
        }
        Ok(iv)
    }

    fn draw_xz(&self, u: f64) -> (Group, Vec<u32>) {
        let mut acc = 0.0;
        for a in &self.xz {
            acc += a.p;
            if u < acc {
                return (a.x, a.z.clone());
            }
        }
        let last = self.xz.iter().rev().find(|a| a.p > 0.0).unwrap_or(&self.xz[0]);
        (last.x, last.z.clone())
    }

    pub(crate) fn respond(&self, unit: &Unit, iv: &Intervention) -> Endogenous {
        let (x_nat, z) = self.draw_xz(unit.u_xz);
        let x = iv.x.unwrap_or(x_nat);
        let mut w = vec![0u32; self.w.len()];
        for &k in &self.w_order {
            w[k] = match iv.w[k] {
                Some(v) => v,
                None => draw(&self.mediator_distribution(k, x, &z, &w), unit.u_w[k]),
            };
        }
        let s = self.score(x, &z, &w);
        let y = u8::from(unit.u_y < s);
        Endogenous { x, z, w, y, s }
    }

    /// Potential response of all endogenous variables for `unit` in the
    /// submodel where the clause's assignments replace their mechanisms.
    pub fn potential_response(&self, unit: &Unit, clause: &Clause) -> Result<Endogenous> {
        if unit.u_w.len() != self.w.len() {
            return Err(Error::InvalidParams(format!(
                "unit has {} mediator sources, model has {}",
                unit.u_w.len(),
                self.w.len()
            )));
        }
        let iv = self.resolve(clause)?;
        Ok(self.respond(unit, &iv))
    }

    /// `V_{x_outer, W_{x_inner}}(u)`: mediators evaluated under `X = x_inner`
    /// and held there while X is set to `x_outer`.
    pub fn nested_response(&self, unit: &Unit, outer: Group, inner: Group) -> Endogenous {
        let w_inner = self
            .respond(
                unit,
                &Intervention {
                    x: Some(inner),
                    w: vec![None; self.w.len()],
                },
            )
            .w;
        self.respond(
            unit,
            &Intervention {
                x: Some(outer),
                w: w_inner.into_iter().map(Some).collect(),
            },
        )
    }

    pub fn draw_unit<R: Rng>(&self, rng: &mut R) -> Unit {
        Unit {
            u_xz: rng.gen(),
            u_w: (0..self.w.len()).map(|_| rng.gen()).collect(),
            u_y: rng.gen(),
        }
    }

    /// All breakpoints of mediator `k`'s exogenous source over every parent
    /// configuration. Between consecutive breakpoints every potential
    /// response of that mediator is constant.
    pub(crate) fn mediator_breakpoints(&self, k: usize) -> Vec<f64> {
        let mech = &self.w_mechanisms[k];
        let mut cuts = vec![];
        match mech {
            Mechanism::Table { rows, .. } => {
                for r in rows {
                    cuts.extend(breakpoints_of(r));
                }
            }
            Mechanism::Threshold { intercept, coefs } => {
                let cards: Vec<u32> = coefs.iter().map(|(p, _)| self.card(*p)).collect();
                let combos: usize = cards.iter().map(|&c| c as usize).product();
                for mut idx in 0..combos {
                    let mut p = *intercept;
                    for ((_, c), card) in coefs.iter().zip(&cards).rev() {
                        let v = idx % *card as usize;
                        idx /= *card as usize;
                        p += c * v as f64;
                    }
                    cuts.push(clamp01(p));
                }
            }
        }
        cuts
    }

    /// Schema used for datasets sampled from this model.
    pub fn dataset_schema(&self, threshold: Option<ThresholdSpec>) -> SfmSchema {
        let mut schema = SfmSchema::new("x", "0", "1");
        schema.z_columns = self.z.iter().map(|v| v.name.clone()).collect();
        schema.w_columns = self.w.iter().map(|v| v.name.clone()).collect();
        schema.y_column = Some("y".into());
        schema.s_column = Some("s".into());
        schema.threshold = threshold;
        schema
    }

    /// Draws `n` i.i.d. units, evaluates the factual world, and attaches the
    /// true score, Ŷ and M. Deterministic given `seed`.
    pub fn sample_dataset(&self, n: usize, seed: u64, threshold: ThresholdSpec) -> Result<SfmDataset> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        threshold.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let iv = Intervention {
            x: None,
            w: vec![None; self.w.len()],
        };
        let mut x = Vec::with_capacity(n);
        let mut z: Vec<Vec<u32>> = vec![Vec::with_capacity(n); self.z.len()];
        let mut w: Vec<Vec<u32>> = vec![Vec::with_capacity(n); self.w.len()];
        let mut y = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        for _ in 0..n {
            let unit = self.draw_unit(&mut rng);
            let e = self.respond(&unit, &iv);
            x.push(e.x);
            for (col, v) in z.iter_mut().zip(&e.z) {
                col.push(*v);
            }
            for (col, v) in w.iter_mut().zip(&e.w) {
                col.push(*v);
            }
            y.push(e.y as f64);
            s.push(e.s);
        }
        let cov = |vars: &[Variable], codes: Vec<Vec<u32>>| -> Vec<Covariate> {
            vars.iter()
                .zip(codes)
                .map(|(v, c)| {
                    let levels = (0..v.levels).map(|l| l.to_string()).collect();
                    Covariate::categorical(&v.name, levels, c)
                })
                .collect()
        };
        SfmDataset::from_columns(
            self.dataset_schema(Some(threshold)),
            Columns {
                x,
                z: cov(&self.z, z),
                w: cov(&self.w, w),
                y: Some(y),
                s: Some(s),
                yhat: None,
            },
        )
    }

    /// Value of a target for one potential response. With `integrate_y`, the
    /// outcome's own source is integrated out (Y contributes its probability).
    pub(crate) fn target_value(
        e: &Endogenous,
        target: Target,
        t: f64,
        strict: bool,
        integrate_y: bool,
    ) -> f64 {
        let yhat = if (strict && e.s > t) || (!strict && e.s >= t) {
            1.0
        } else {
            0.0
        };
        match target {
            Target::Y if integrate_y => e.s,
            Target::Y => e.y as f64,
            Target::S => e.s,
            Target::Yhat => yhat,
            Target::M => yhat - e.s,
        }
    }
}

impl Mechanism {
    pub fn parents(&self) -> Vec<Parent> {
        match self {
            Mechanism::Threshold { coefs, .. } => coefs.iter().map(|(p, _)| *p).collect(),
            Mechanism::Table { parents, .. } => parents.clone(),
        }
    }
}

fn topological_order(mechs: &[Mechanism]) -> Result<Vec<usize>> {
    let n = mechs.len();
    let deps: Vec<Vec<usize>> = mechs
        .iter()
        .map(|m| {
            m.parents()
                .into_iter()
                .filter_map(|p| match p {
                    Parent::W(k) => Some(k),
                    _ => None,
                })
                .collect()
        })
        .collect();
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    let mut order = Vec::with_capacity(n);
    fn visit(k: usize, deps: &[Vec<usize>], state: &mut [u8], order: &mut Vec<usize>) -> Result<()> {
        if k >= deps.len() {
            return Err(Error::Parse("mechanism references an unknown mediator".into()));
        }
        match state[k] {
            2 => return Ok(()),
            1 => return Err(Error::Parse("cyclic mechanism reference among mediators".into())),
            _ => {}
        }
        state[k] = 1;
        for &d in &deps[k] {
            visit(d, deps, state, order)?;
        }
        state[k] = 2;
        order.push(k);
        Ok(())
    }
    for k in 0..n {
        visit(k, &deps, &mut state, &mut order)?;
    }
    Ok(order)
}
