//! Versioned JSON document carrying a process, an optional symmetry group
//! and an optional character table.
//!
//! ```json
//! {
//!   "format": 1,
//!   "states": ["1", "2", "3"],
//!   "V": {"1": 0, "2": "3/10", "3": 0.5},
//!   "m": {"2": 2},
//!   "edges": [{"a": "1", "b": "3", "c": 2, "V_e": 1.2}],
//!   "epsilon": 0.05,
//!   "group": {
//!     "generators": [[1, 0, 2]],
//!     "structure": "z2",
//!     "representatives": ["1", "3"],
//!     "character_table": {
//!       "classes": [[], [0]],
//!       "rows": [{"label": "+", "values": [1, 1]}, {"label": "-", "values": [1, -1]}]
//!     }
//!   }
//! }
//! ```
//!
//! Numbers may be JSON numbers or strings holding a decimal or fractional
//! literal; complex character values are `[re, im]`. Generators list the
//! image of every state, by index or label.

use crate::equivariant::SymmetricSystem;
use crate::error::{Error, Result};
use crate::model::{Edge, ProcessSpec};
use crate::scalar::Scalar;
use crate::symgroup::{generate_group, table_from_classes, PermGroup, Permutation, Structure, DEFAULT_GROUP_LIMIT};
use num_complex::Complex64;
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TableInput {
    /// Class representatives as words in the generator indices.
    pub classes: Vec<Vec<usize>>,
    pub rows: Vec<(String, Vec<Complex64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupInput {
    pub generators: Vec<Permutation>,
    pub structure: Structure,
    /// Orbit representatives by state label.
    pub representatives: Option<Vec<String>>,
    pub table: Option<TableInput>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Document<S> {
    pub spec: ProcessSpec<S>,
    pub group: Option<GroupInput>,
    /// Free-form provenance, written back unchanged.
    pub meta: Option<Value>,
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn scalar<S: Scalar>(v: &Value, what: &str) -> Result<S> {
    let text = match v {
        Value::Number(n) => n.to_string(),
        Value::String(s) => s.clone(),
        _ => return Err(parse_err(format!("{what}: expected a number or literal"))),
    };
    S::parse_literal(&text).ok_or_else(|| parse_err(format!("{what}: cannot parse `{text}`")))
}

fn complex(v: &Value, what: &str) -> Result<Complex64> {
    match v {
        Value::Array(parts) if parts.len() == 2 => Ok(Complex64::new(
            scalar::<f64>(&parts[0], what)?,
            scalar::<f64>(&parts[1], what)?,
        )),
        _ => Ok(Complex64::new(scalar::<f64>(v, what)?, 0.0)),
    }
}

fn scalar_value<S: Scalar>(v: &S) -> Value {
    let text = v.to_string();
    match text.parse::<f64>() {
        Ok(x) if S::parse_literal(&text).as_ref() == Some(v) => json!(x),
        _ => Value::String(text),
    }
}

fn state_ref(v: &Value, index: &BTreeMap<String, usize>, n: usize, what: &str) -> Result<usize> {
    match v {
        Value::String(s) => index
            .get(s)
            .copied()
            .ok_or_else(|| parse_err(format!("{what}: unknown state `{s}`"))),
        Value::Number(k) => k
            .as_u64()
            .map(|k| k as usize)
            .filter(|&k| k < n)
            .ok_or_else(|| parse_err(format!("{what}: state index {k} out of range"))),
        _ => Err(parse_err(format!("{what}: expected a state label or index"))),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| parse_err(format!("missing key `{key}`")))
}

pub fn parse_document<S: Scalar>(text: &str) -> Result<Document<S>> {
    let root: Value = serde_json::from_str(text).map_err(|e| parse_err(format!("invalid JSON: {e}")))?;
    document_from_value(&root)
}

pub fn document_from_value<S: Scalar>(root: &Value) -> Result<Document<S>> {
    let obj = root
        .as_object()
        .ok_or_else(|| parse_err("document must be an object"))?;
    match field(obj, "format")?.as_u64() {
        Some(FORMAT_VERSION) => {}
        other => return Err(parse_err(format!("unsupported format version {other:?}"))),
    }
    let labels: Vec<String> = field(obj, "states")?
        .as_array()
        .ok_or_else(|| parse_err("`states` must be an array"))?
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| parse_err("state labels must be strings"))
        })
        .collect::<Result<_>>()?;
    let n = labels.len();
    let mut index = BTreeMap::new();
    for (k, l) in labels.iter().enumerate() {
        if index.insert(l.clone(), k).is_some() {
            return Err(parse_err(format!("duplicate state `{l}`")));
        }
    }
    let read_map = |key: &str, default: Option<S>| -> Result<Vec<S>> {
        let mut out: Vec<Option<S>> = vec![default.clone(); n];
        if let Some(v) = obj.get(key) {
            let m = v
                .as_object()
                .ok_or_else(|| parse_err(format!("`{key}` must be an object")))?;
            for (label, val) in m {
                let k = *index
                    .get(label)
                    .ok_or_else(|| parse_err(format!("`{key}`: unknown state `{label}`")))?;
                out[k] = Some(scalar(val, &format!("{key}[{label}]"))?);
            }
        }
        out.into_iter()
            .enumerate()
            .map(|(k, v)| v.ok_or_else(|| parse_err(format!("`{key}`: missing value for `{}`", labels[k]))))
            .collect()
    };
    let potential = read_map("V", None)?;
    let mass = read_map("m", Some(S::one()))?;
    let mut edges = Vec::new();
    for (k, e) in field(obj, "edges")?
        .as_array()
        .ok_or_else(|| parse_err("`edges` must be an array"))?
        .iter()
        .enumerate()
    {
        let what = format!("edge {k}");
        let eo = e
            .as_object()
            .ok_or_else(|| parse_err(format!("{what} must be an object")))?;
        let a = state_ref(field(eo, "a")?, &index, n, &what)?;
        let b = state_ref(field(eo, "b")?, &index, n, &what)?;
        let c = match eo.get("c") {
            Some(v) => scalar(v, &what)?,
            None => S::one(),
        };
        let saddle = scalar(field(eo, "V_e")?, &what)?;
        edges.push(Edge::new(a, b, c, saddle));
    }
    let epsilon = scalar(field(obj, "epsilon")?, "epsilon")?;
    let group = match obj.get("group") {
        None | Some(Value::Null) => None,
        Some(g) => Some(parse_group(g, &index, n)?),
    };
    Ok(Document {
        spec: ProcessSpec {
            labels,
            potential,
            mass,
            edges,
            epsilon,
        },
        group,
        meta: obj.get("meta").cloned(),
    })
}

fn parse_group(g: &Value, index: &BTreeMap<String, usize>, n: usize) -> Result<GroupInput> {
    let go = g.as_object().ok_or_else(|| parse_err("`group` must be an object"))?;
    let generators: Vec<Permutation> = field(go, "generators")?
        .as_array()
        .ok_or_else(|| parse_err("`group.generators` must be an array"))?
        .iter()
        .enumerate()
        .map(|(k, gen)| {
            let images = gen
                .as_array()
                .ok_or_else(|| parse_err(format!("generator {k} must be an array")))?;
            if images.len() != n {
                return Err(parse_err(format!(
                    "generator {k} has {} images for {n} states",
                    images.len()
                )));
            }
            images
                .iter()
                .map(|v| state_ref(v, index, n, &format!("generator {k}")))
                .collect()
        })
        .collect::<Result<_>>()?;
    let structure = match go.get("structure") {
        Some(Value::String(tag)) => Structure::parse(tag)?,
        Some(_) => return Err(parse_err("`group.structure` must be a string")),
        None if generators.is_empty() => Structure::Trivial,
        None => Structure::Opaque,
    };
    let representatives = match go.get("representatives") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_array()
                .ok_or_else(|| parse_err("`group.representatives` must be an array"))?
                .iter()
                .map(|r| {
                    let k = state_ref(r, index, n, "representatives")?;
                    Ok(r.as_str().map_or_else(|| labels_by_index(index, k), str::to_string))
                })
                .collect::<Result<_>>()?,
        ),
    };
    let table = match go.get("character_table") {
        None | Some(Value::Null) => None,
        Some(t) => Some(parse_table(t)?),
    };
    Ok(GroupInput {
        generators,
        structure,
        representatives,
        table,
    })
}

fn labels_by_index(index: &BTreeMap<String, usize>, k: usize) -> String {
    index
        .iter()
        .find(|(_, &v)| v == k)
        .map(|(l, _)| l.clone())
        .expect("index comes from the label map")
}

fn parse_table(t: &Value) -> Result<TableInput> {
    let to = t
        .as_object()
        .ok_or_else(|| parse_err("`character_table` must be an object"))?;
    let classes = field(to, "classes")?
        .as_array()
        .ok_or_else(|| parse_err("`character_table.classes` must be an array"))?
        .iter()
        .map(|w| {
            w.as_array()
                .ok_or_else(|| parse_err("class words must be arrays"))?
                .iter()
                .map(|x| {
                    x.as_u64()
                        .map(|x| x as usize)
                        .ok_or_else(|| parse_err("class words hold generator indices"))
                })
                .collect::<Result<Vec<usize>>>()
        })
        .collect::<Result<_>>()?;
    let rows = field(to, "rows")?
        .as_array()
        .ok_or_else(|| parse_err("`character_table.rows` must be an array"))?
        .iter()
        .map(|r| {
            let ro = r.as_object().ok_or_else(|| parse_err("table rows must be objects"))?;
            let label = field(ro, "label")?
                .as_str()
                .ok_or_else(|| parse_err("row labels must be strings"))?
                .to_string();
            let values = field(ro, "values")?
                .as_array()
                .ok_or_else(|| parse_err("row values must be an array"))?
                .iter()
                .map(|v| complex(v, &format!("row {label}")))
                .collect::<Result<_>>()?;
            Ok((label, values))
        })
        .collect::<Result<_>>()?;
    Ok(TableInput { classes, rows })
}

pub fn document_to_value<S: Scalar>(doc: &Document<S>) -> Value {
    let spec = &doc.spec;
    let map_of = |vals: &[S]| -> Value {
        let mut m = Map::new();
        for (l, v) in spec.labels.iter().zip(vals) {
            m.insert(l.clone(), scalar_value(v));
        }
        Value::Object(m)
    };
    let edges: Vec<Value> = spec
        .edges
        .iter()
        .map(|e| {
            json!({
                "a": spec.labels[e.a],
                "b": spec.labels[e.b],
                "c": scalar_value(&e.coupling),
                "V_e": scalar_value(&e.saddle),
            })
        })
        .collect();
    let mut root = Map::new();
    root.insert("format".into(), json!(FORMAT_VERSION));
    root.insert("states".into(), json!(spec.labels));
    root.insert("V".into(), map_of(&spec.potential));
    if spec.mass.iter().any(|m| !m.is_one()) {
        root.insert("m".into(), map_of(&spec.mass));
    }
    root.insert("edges".into(), Value::Array(edges));
    root.insert("epsilon".into(), scalar_value(&spec.epsilon));
    if let Some(g) = &doc.group {
        let mut go = Map::new();
        go.insert("generators".into(), json!(g.generators));
        go.insert("structure".into(), json!(g.structure.tag()));
        if let Some(r) = &g.representatives {
            go.insert("representatives".into(), json!(r));
        }
        if let Some(t) = &g.table {
            let rows: Vec<Value> = t
                .rows
                .iter()
                .map(|(label, vals)| {
                    let values: Vec<Value> = vals
                        .iter()
                        .map(|z| if z.im == 0.0 { json!(z.re) } else { json!([z.re, z.im]) })
                        .collect();
                    json!({"label": label, "values": values})
                })
                .collect();
            go.insert("character_table".into(), json!({"classes": t.classes, "rows": rows}));
        }
        root.insert("group".into(), Value::Object(go));
    }
    if let Some(m) = &doc.meta {
        root.insert("meta".into(), m.clone());
    }
    Value::Object(root)
}

pub fn document_to_string<S: Scalar>(doc: &Document<S>) -> String {
    let mut s = serde_json::to_string_pretty(&document_to_value(doc)).expect("document serializes");
    s.push('\n');
    s
}

impl<S: Scalar> Document<S> {
    pub fn permutation_group(&self) -> Result<Option<PermGroup>> {
        self.group
            .as_ref()
            .map(|g| generate_group(&g.generators, g.structure.clone(), DEFAULT_GROUP_LIMIT))
            .transpose()
    }

    /// Symmetric system of the document's group; `None` without a group.
    pub fn system(&self) -> Result<Option<SymmetricSystem<S>>> {
        let Some(g) = &self.group else {
            return Ok(None);
        };
        let group = generate_group(&g.generators, g.structure.clone(), DEFAULT_GROUP_LIMIT)?;
        let table = g
            .table
            .as_ref()
            .map(|t| table_from_classes(&group, &t.classes, &t.rows))
            .transpose()?;
        let reps: Option<Vec<usize>> = g
            .representatives
            .as_ref()
            .map(|r| {
                r.iter()
                    .map(|l| {
                        self.spec
                            .label_index(l)
                            .ok_or_else(|| parse_err(format!("unknown representative `{l}`")))
                    })
                    .collect()
            })
            .transpose()?;
        SymmetricSystem::new(self.spec.clone(), group, table, reps.as_deref()).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    const Z2_DOC: &str = r#"{
        "format": 1,
        "states": ["L", "M", "R"],
        "V": {"L": 0, "M": "1/2", "R": 0},
        "edges": [{"a": "L", "b": "M", "V_e": "3/4"}, {"a": "M", "b": "R", "c": 1, "V_e": "3/4"}],
        "epsilon": "1/20",
        "group": {
            "generators": [["R", "M", "L"]],
            "structure": "z2",
            "character_table": {
                "classes": [[], [0]],
                "rows": [{"label": "even", "values": [1, 1]}, {"label": "odd", "values": [1, [-1, 0]]}]
            }
        }
    }"#;

    #[test]
    fn rational_document_round_trips() {
        let doc: Document<Rational64> = parse_document(Z2_DOC).unwrap();
        assert_eq!(doc.spec.potential[1], Rational64::new(1, 2));
        assert_eq!(doc.spec.epsilon, Rational64::new(1, 20));
        assert_eq!(doc.group.as_ref().unwrap().generators, vec![vec![2, 1, 0]]);
        let text = document_to_string(&doc);
        assert!(text.contains("\"1/2\""));
        let back: Document<Rational64> = parse_document(&text).unwrap();
        assert_eq!(back, doc);
    }

    #[test]
    fn user_table_builds_a_system() {
        let doc: Document<f64> = parse_document(Z2_DOC).unwrap();
        let sys = doc.system().unwrap().unwrap();
        assert_eq!(sys.table.irreps[1].label, "odd");
        assert_eq!(sys.active.grand_total(), 3);
    }

    #[test]
    fn parse_errors_are_reported() {
        assert!(matches!(parse_document::<f64>("{"), Err(Error::Parse(_))));
        let bad_version = Z2_DOC.replace("\"format\": 1", "\"format\": 2");
        assert!(matches!(parse_document::<f64>(&bad_version), Err(Error::Parse(_))));
        let bad_state = Z2_DOC.replace("\"a\": \"L\"", "\"a\": \"Q\"");
        assert!(matches!(parse_document::<f64>(&bad_state), Err(Error::Parse(_))));
        let missing_v = Z2_DOC
            .replace("\"R\": 0}", "}")
            .replace("\"M\": \"1/2\", }", "\"M\": \"1/2\"}");
        assert!(matches!(parse_document::<f64>(&missing_v), Err(Error::Parse(_))));
    }

    #[test]
    fn float_values_stay_numbers() {
        let doc: Document<f64> = parse_document(Z2_DOC).unwrap();
        let v = document_to_value(&doc);
        assert_eq!(v["V"]["M"], json!(0.5));
        assert_eq!(v["epsilon"], json!(0.05));
        assert!(v.get("m").is_none());
    }
}
