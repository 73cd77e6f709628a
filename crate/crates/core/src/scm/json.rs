//! JSON form of models: `{"name", "params"}` for built-ins (plus the
//! generated tables under `"mechanisms"` for reference), or a bare
//! `{"mechanisms": ...}` document for user models.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BuiltinModel, Mechanism, Origin, Parent, ScmSpec, Variable, XzAtom};
use crate::data::Group;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mechanisms: Option<MechanismsDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MechanismsDoc {
    #[serde(default)]
    z: Vec<VariableDoc>,
    #[serde(default)]
    w: Vec<VariableDoc>,
    xz: Vec<AtomDoc>,
    #[serde(default)]
    w_mechanisms: BTreeMap<String, MechanismDoc>,
    y: MechanismDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariableDoc {
    name: String,
    levels: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomDoc {
    x: u8,
    #[serde(default)]
    z: Vec<u32>,
    p: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum MechanismDoc {
    Threshold {
        intercept: f64,
        #[serde(default)]
        coefs: Vec<(String, f64)>,
    },
    Table {
        #[serde(default)]
        parents: Vec<String>,
        rows: Vec<Vec<f64>>,
    },
}

fn parent_name(model: &ScmSpec, p: Parent) -> String {
    match p {
        Parent::X => "x".into(),
        Parent::Z(k) => model.z[k].name.clone(),
        Parent::W(k) => model.w[k].name.clone(),
    }
}

fn mechanism_doc(model: &ScmSpec, m: &Mechanism) -> MechanismDoc {
    match m {
        Mechanism::Threshold { intercept, coefs } => MechanismDoc::Threshold {
            intercept: *intercept,
            coefs: coefs
                .iter()
                .map(|(p, c)| (parent_name(model, *p), *c))
                .collect(),
        },
        Mechanism::Table { parents, rows } => MechanismDoc::Table {
            parents: parents.iter().map(|p| parent_name(model, *p)).collect(),
            rows: rows.clone(),
        },
    }
}

fn mechanisms_doc(model: &ScmSpec) -> MechanismsDoc {
    MechanismsDoc {
        z: model
            .z
            .iter()
            .map(|v| VariableDoc {
                name: v.name.clone(),
                levels: v.levels,
            })
            .collect(),
        w: model
            .w
            .iter()
            .map(|v| VariableDoc {
                name: v.name.clone(),
                levels: v.levels,
            })
            .collect(),
        xz: model
            .xz
            .iter()
            .map(|a| AtomDoc {
                x: a.x.index() as u8,
                z: a.z.clone(),
                p: a.p,
            })
            .collect(),
        w_mechanisms: model
            .w
            .iter()
            .zip(&model.w_mechanisms)
            .map(|(v, m)| (v.name.clone(), mechanism_doc(model, m)))
            .collect(),
        y: mechanism_doc(model, &model.y_mechanism),
    }
}

/// Serializes a model; built-ins round-trip through their parameters.
pub fn export_model(model: &ScmSpec) -> String {
    let doc = match &model.origin {
        Origin::Builtin(b) => {
            let tagged = serde_json::to_value(b).expect("builtin serializes");
            ModelDoc {
                name: Some(b.name().to_string()),
                params: tagged.get("params").cloned(),
                seed: None,
                mechanisms: Some(mechanisms_doc(model)),
            }
        }
        Origin::Custom => ModelDoc {
            name: None,
            params: None,
            seed: None,
            mechanisms: Some(mechanisms_doc(model)),
        },
    };
    serde_json::to_string_pretty(&doc).expect("model serializes")
}

/// Parses a model document. Built-in names take precedence over any
/// `mechanisms` block, which is then informational only.
pub fn import_model(text: &str) -> Result<ScmSpec> {
    let doc: ModelDoc = serde_json::from_str(text)?;
    if let Some(name) = doc.name {
        let mut params = doc.params.unwrap_or_else(|| serde_json::json!({}));
        if let (Some(seed), Some(obj)) = (doc.seed, params.as_object_mut()) {
            obj.entry("seed").or_insert(seed.into());
        }
        let tagged = serde_json::json!({ "name": name, "params": params });
        let builtin: BuiltinModel = serde_json::from_value(tagged)
            .map_err(|e| Error::Parse(format!("model `{name}`: {e}")))?;
        return builtin.build();
    }
    let mechs = doc
        .mechanisms
        .ok_or_else(|| Error::Parse("model needs either `name` or `mechanisms`".into()))?;
    build_custom(mechs)
}

fn build_custom(doc: MechanismsDoc) -> Result<ScmSpec> {
    let z: Vec<Variable> = doc.z.iter().map(|v| Variable::new(&v.name, v.levels)).collect();
    let w: Vec<Variable> = doc.w.iter().map(|v| Variable::new(&v.name, v.levels)).collect();
    let mut names = std::collections::HashSet::new();
    for n in ["x", "y"]
        .into_iter()
        .chain(z.iter().map(|v| v.name.as_str()))
        .chain(w.iter().map(|v| v.name.as_str()))
    {
        if !names.insert(n) {
            return Err(Error::Parse(format!("duplicate variable name `{n}`")));
        }
    }
    if let Some(v) = z.iter().chain(&w).find(|v| v.levels < 2) {
        return Err(Error::Parse(format!("{} needs at least two levels", v.name)));
    }
    let resolve = |name: &str| -> Result<Parent> {
        if name == "x" {
            return Ok(Parent::X);
        }
        if let Some(k) = z.iter().position(|v| v.name == name) {
            return Ok(Parent::Z(k));
        }
        if let Some(k) = w.iter().position(|v| v.name == name) {
            return Ok(Parent::W(k));
        }
        if name == "y" {
            return Err(Error::Parse("y cannot be a parent (cyclic reference)".into()));
        }
        Err(Error::Parse(format!("unknown parent `{name}`")))
    };
    let convert = |m: &MechanismDoc| -> Result<Mechanism> {
        Ok(match m {
            MechanismDoc::Threshold { intercept, coefs } => Mechanism::Threshold {
                intercept: *intercept,
                coefs: coefs
                    .iter()
                    .map(|(n, c)| Ok((resolve(n)?, *c)))
                    .collect::<Result<_>>()?,
            },
            MechanismDoc::Table { parents, rows } => Mechanism::Table {
                parents: parents.iter().map(|n| resolve(n)).collect::<Result<_>>()?,
                rows: rows.clone(),
            },
        })
    };
    let mut w_mechs = Vec::with_capacity(w.len());
    for v in &w {
        let m = doc
            .w_mechanisms
            .get(&v.name)
            .ok_or_else(|| Error::Parse(format!("no mechanism for mediator `{}`", v.name)))?;
        w_mechs.push(convert(m)?);
    }
    if let Some(extra) = doc.w_mechanisms.keys().find(|k| !w.iter().any(|v| &v.name == *k)) {
        return Err(Error::Parse(format!("mechanism for undeclared mediator `{extra}`")));
    }
    let y = convert(&doc.y)?;
    let xz = doc
        .xz
        .iter()
        .map(|a| {
            let x = match a.x {
                0 => Group::X0,
                1 => Group::X1,
                v => return Err(Error::Parse(format!("x atom value {v} is not 0/1"))),
            };
            Ok(XzAtom {
                x,
                z: a.z.clone(),
                p: a.p,
            })
        })
        .collect::<Result<_>>()?;
    ScmSpec::new(Origin::Custom, z, w, xz, w_mechs, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_round_trip() {
        for b in [
            BuiltinModel::HiringBasic { p0: 0.49, p1: 0.51 },
            BuiltinModel::HiringExtended {
                alpha: 0.2,
                beta: 0.45,
                lambda: 0.1,
            },
            BuiltinModel::RandomDiscrete {
                z_levels: 3,
                w_levels: 3,
                seed: 7,
                no_direct: false,
            },
        ] {
            let m = b.build().unwrap();
            let back = import_model(&export_model(&m)).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn custom_round_trip() {
        let m = BuiltinModel::RandomDiscrete {
            z_levels: 2,
            w_levels: 3,
            seed: 1,
            no_direct: false,
        }
        .build()
        .unwrap();
        let mut custom = m.clone();
        custom.origin = Origin::Custom;
        let text = export_model(&custom);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(value.get("name").is_none());
        let back = import_model(&text).unwrap();
        assert_eq!(back, custom);
    }

    #[test]
    fn invalid_beta_rejected() {
        let doc = r#"{"name":"hiring-extended","params":{"alpha":0.2,"beta":0.3,"lambda":0.1}}"#;
        assert!(matches!(import_model(doc), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn cyclic_reference_rejected() {
        let doc = r#"{"mechanisms":{
            "w":[{"name":"a","levels":2},{"name":"b","levels":2}],
            "xz":[{"x":0,"p":0.5},{"x":1,"p":0.5}],
            "w_mechanisms":{
                "a":{"type":"threshold","intercept":0.5,"coefs":[["b",0.1]]},
                "b":{"type":"threshold","intercept":0.5,"coefs":[["a",0.1]]}
            },
            "y":{"type":"threshold","intercept":0.3,"coefs":[["x",0.1]]}
        }}"#;
        assert!(matches!(import_model(doc), Err(Error::Parse(_))));
        let self_ref = doc.replace(r#"[["b",0.1]]"#, r#"[["a",0.1]]"#);
        assert!(matches!(import_model(&self_ref), Err(Error::Parse(_))));
        let y_parent = doc
            .replace(r#"[["b",0.1]]"#, r#"[["y",0.1]]"#)
            .replace(r#"[["a",0.1]]"#, "[]");
        assert!(matches!(import_model(&y_parent), Err(Error::Parse(_))));
    }

    #[test]
    fn malformed_documents() {
        assert!(matches!(import_model("{"), Err(Error::Parse(_))));
        assert!(matches!(import_model("{}"), Err(Error::Parse(_))));
        assert!(import_model(r#"{"name":"nope"}"#).is_err());
    }
}
