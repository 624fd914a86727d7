//! Declarative model files.
//!
//! A model file is TOML. Every probability and parameter value is a decimal
//! string (`"0.3"`) or a fraction (`"1/3"`), so fixtures do not drift through
//! binary floating point. Kernels come either from a named builder or from
//! tables of rows; the first row that matches a history wins.
//!
//! ```toml
//! name = "example"
//! horizon = 2
//! r_dim = 1
//! counting = "visit"            # or "window"
//! dependence = "past-x-only"    # declared, then verified
//! reference = { theta = 1, psi = 0 }
//!
//! [[coordinates]]
//! name = "x"
//! symbols = ["0", "1"]
//! r_component = 0               # which R-component reveals it
//! counting = false              # 0-1 counting coordinate?
//!
//! [process]
//! theta = [["0.3"], ["0.5"]]
//! builder = "iid-bernoulli"     # or [[process.rows]]
//!
//! [mechanism]
//! psi = [["0.5", "0.5"], ["0.7", "0.4"]]
//!
//! [[mechanism.rows]]
//! t = 1
//! probs = [["0", "1"]]
//!
//! [[mechanism.rows]]
//! x = ["1", "*"]
//! probs = [["0.5", "0.5"], ["0.3", "0.7"]]
//! ```
//!
//! Process rows: `t` (optional step, 1-based), `history` (optional pattern
//! aligned to the most recent states, `"*"` matches anything), `probs` (one
//! row over X-states per θ, or a single row shared by all θ).
//!
//! Mechanism rows: `t`, `x` (optional full-length X pattern), `r_history`
//! (optional pattern over past R-values written as bit strings, component 0
//! first, aligned to the most recent step), and `probs` (one row over the
//! `2^r_dim` R-patterns per ψ, pattern `k` having component `h` equal to bit
//! `h` of `k`).
//!
//! Builders: process `iid-bernoulli`, `survival-hazard`; mechanism
//! `always-observed`, `lagged-bernoulli`, `anticipating-bernoulli`,
//! `right-censor-hazard`.
//!
//! An optional `[vertical]` table declares a coarsener:
//! `label`, `coord` (coordinate name) and `map` (symbol → coarse label).

use std::collections::BTreeMap;
use std::path::Path as FsPath;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{builders, CountingKind, DependenceClass, JointModel, MechanismKernel, ModelError, ProcessModel, VerticalCoarsener};
use crate::pathspace::{Coordinate, ParamPair, TimeGrid, XAlphabet};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid model file: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<crate::pathspace::SpaceError> for FileError {
    fn from(e: crate::pathspace::SpaceError) -> Self {
        FileError::Model(e.into())
    }
}

/// Deserializes TOML, reporting failures with a 1-based line and column.
pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T, FileError> {
    toml::from_str(text).map_err(|e| {
        let offset = e.span().map_or(0, |s| s.start);
        let before = &text[..offset.min(text.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        FileError::Parse { line, column, message: e.message().trim().to_string() }
    })
}

pub fn read_text(path: &FsPath) -> Result<String, FileError> {
    std::fs::read_to_string(path).map_err(|source| FileError::Io { path: path.display().to_string(), source })
}

fn default_r_dim() -> usize {
    1
}

fn default_counting() -> CountingKind {
    CountingKind::Window
}

fn default_dependence() -> DependenceClass {
    DependenceClass::Anticipating
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordinateSpec {
    pub name: String,
    pub symbols: Vec<String>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub r_component: usize,
    #[serde(default, skip_serializing_if = "is_false")]
    pub counting: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<String>>,
    pub probs: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    pub theta: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absorbing: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builder: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<ProcessRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_history: Option<Vec<String>>,
    pub probs: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismSpec {
    #[serde(default)]
    pub psi: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builder: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<MechanismRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerticalSpec {
    pub label: String,
    pub coord: String,
    pub map: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub horizon: usize,
    #[serde(default = "default_r_dim")]
    pub r_dim: usize,
    #[serde(default = "default_counting")]
    pub counting: CountingKind,
    #[serde(default = "default_dependence")]
    pub dependence: DependenceClass,
    #[serde(default)]
    pub reference: ParamPair,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub marks: Vec<String>,
    pub coordinates: Vec<CoordinateSpec>,
    pub process: ProcessSpec,
    pub mechanism: MechanismSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertical: Option<VerticalSpec>,
}

/// A built model plus the coarsener declared next to it, if any.
#[derive(Debug, Clone)]
pub struct LoadedModel<S> {
    pub model: JointModel<S>,
    pub vertical: Option<VerticalCoarsener>,
}

fn parse_values<S: Scalar>(values: &[String], what: &str) -> Result<Vec<S>, FileError> {
    values
        .iter()
        .map(|v| S::parse_decimal(v).ok_or_else(|| FileError::Invalid(format!("{what}: {v:?} is not a decimal number"))))
        .collect()
}

fn parse_grid<S: Scalar>(grid: &[Vec<String>], what: &str) -> Result<Vec<Vec<S>>, FileError> {
    grid.iter().map(|v| parse_values(v, what)).collect()
}

/// `probs` table → one row per grid value (broadcasting a single row).
fn parse_probs<S: Scalar>(probs: &[Vec<String>], n_grid: usize, width: usize, what: &str) -> Result<Vec<Vec<S>>, FileError> {
    if probs.len() != 1 && probs.len() != n_grid {
        return Err(FileError::Invalid(format!(
            "{what}: {} probability rows for a grid of {n_grid}",
            probs.len()
        )));
    }
    let rows: Vec<Vec<S>> = probs.iter().map(|p| parse_values(p, what)).collect::<Result<_, _>>()?;
    if let Some(r) = rows.iter().find(|r| r.len() != width) {
        return Err(FileError::Invalid(format!("{what}: row has {} entries, expected {width}", r.len())));
    }
    Ok(if rows.len() == 1 { vec![rows[0].clone(); n_grid] } else { rows })
}

#[derive(Clone)]
enum Pat<T> {
    Any,
    Is(T),
}

impl<T: PartialEq> Pat<T> {
    fn matches(&self, v: &T) -> bool {
        match self {
            Pat::Any => true,
            Pat::Is(x) => x == v,
        }
    }
}

fn suffix_matches<T: PartialEq>(pattern: &[Pat<T>], values: &[T]) -> bool {
    pattern.len() <= values.len() && pattern.iter().rev().zip(values.iter().rev()).all(|(p, v)| p.matches(v))
}

#[derive(Clone)]
struct CompiledProcessRow<S> {
    t: Option<usize>,
    history: Vec<Pat<u16>>,
    probs: Vec<Vec<S>>,
}

#[derive(Clone)]
struct CompiledMechanismRow<S> {
    t: Option<usize>,
    x: Option<Vec<Pat<u16>>>,
    r_history: Vec<Pat<u8>>,
    probs: Vec<Vec<S>>,
}

fn grid_index<S: Scalar>(grid: &[Vec<S>], value: &[S]) -> Option<usize> {
    grid.iter().position(|g| g.as_slice() == value)
}

impl ModelSpec {
    pub fn from_toml(text: &str) -> Result<Self, FileError> {
        parse_toml(text)
    }

    pub fn load(path: &FsPath) -> Result<Self, FileError> {
        Self::from_toml(&read_text(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model specs always serialize")
    }

    pub fn alphabet(&self) -> Result<XAlphabet, FileError> {
        let coords = self
            .coordinates
            .iter()
            .map(|c| Coordinate::new(c.name.clone(), c.symbols.clone()).revealed_by(c.r_component))
            .collect();
        Ok(XAlphabet::new(coords)?)
    }

    fn parse_state(&self, alphabet: &XAlphabet, label: &str, what: &str) -> Result<Pat<u16>, FileError> {
        if label == "*" {
            return Ok(Pat::Any);
        }
        alphabet
            .parse_state(label)
            .map(Pat::Is)
            .ok_or_else(|| FileError::Invalid(format!("{what}: unknown state {label:?}")))
    }

    fn parse_r(&self, label: &str, what: &str) -> Result<Pat<u8>, FileError> {
        if label == "*" {
            return Ok(Pat::Any);
        }
        if label.len() != self.r_dim || !label.chars().all(|c| c == '0' || c == '1') {
            return Err(FileError::Invalid(format!("{what}: {label:?} is not an R-value of width {}", self.r_dim)));
        }
        Ok(Pat::Is(label.chars().enumerate().fold(0u8, |acc, (h, c)| acc | u8::from(c == '1') << h)))
    }

    pub fn build<S: Scalar>(&self, cap: u64) -> Result<LoadedModel<S>, FileError> {
        let alphabet = self.alphabet()?;
        let grid = TimeGrid::new(self.horizon, self.name.clone())?;
        let process = self.build_process::<S>(&alphabet, grid)?;
        let mechanism = self.build_mechanism::<S>(&alphabet)?;
        let model = JointModel::build(process, mechanism, self.reference, cap)?.named(self.name.clone());
        let vertical = self.vertical.as_ref().map(|v| self.build_vertical(&alphabet, v)).transpose()?;
        if let Some(v) = &vertical {
            v.validate(&alphabet)?;
        }
        Ok(LoadedModel { model, vertical })
    }

    fn build_process<S: Scalar>(&self, alphabet: &XAlphabet, grid: TimeGrid) -> Result<ProcessModel<S>, FileError> {
        let thetas: Vec<Vec<S>> = parse_grid(&self.process.theta, "process.theta")?;
        let binary = alphabet.coords().len() == 1 && alphabet.size() == 2;
        let mut process = match (self.process.builder.as_deref(), self.process.rows.is_empty()) {
            (Some(_), false) => return Err(FileError::Invalid("process has both a builder and rows".into())),
            (Some(name @ ("iid-bernoulli" | "survival-hazard")), true) => {
                if !binary {
                    return Err(FileError::Invalid(format!("builder {name} needs one binary coordinate")));
                }
                if thetas.iter().any(|t| t.len() != 1) {
                    return Err(FileError::Invalid(format!("builder {name} takes a scalar θ")));
                }
                if name == "iid-bernoulli" {
                    builders::iid_bernoulli(alphabet.clone(), grid, thetas)
                } else {
                    builders::survival_hazard(alphabet.clone(), grid, thetas)
                }
            }
            (Some(other), true) => return Err(FileError::Invalid(format!("unknown process builder {other:?}"))),
            (None, true) => return Err(FileError::Invalid("process needs a builder or rows".into())),
            (None, false) => {
                let rows = self.compile_process_rows::<S>(alphabet, thetas.len())?;
                let grid_values = thetas.clone();
                ProcessModel::new(alphabet.clone(), grid, thetas, move |th, h| {
                    let Some(i) = grid_index(&grid_values, th) else {
                        return Vec::new();
                    };
                    let t = h.len() + 1;
                    rows.iter()
                        .find(|r| r.t.is_none_or(|rt| rt == t) && suffix_matches(&r.history, h))
                        .map_or_else(Vec::new, |r| r.probs[i].clone())
                })
                .grid_only()
            }
        };
        if let Some(label) = &self.process.absorbing {
            let a = alphabet
                .parse_state(label)
                .ok_or_else(|| FileError::Invalid(format!("unknown absorbing state {label:?}")))?;
            process = process.with_absorbing(a);
        }
        let declared: Vec<usize> = self.coordinates.iter().enumerate().filter(|(_, c)| c.counting).map(|(i, _)| i).collect();
        if !declared.is_empty() {
            process = process.with_counting(declared);
        }
        Ok(process)
    }

    fn compile_process_rows<S: Scalar>(&self, alphabet: &XAlphabet, n_theta: usize) -> Result<Vec<CompiledProcessRow<S>>, FileError> {
        self.process
            .rows
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let what = format!("process.rows[{k}]");
                let history = row
                    .history
                    .iter()
                    .flatten()
                    .map(|l| self.parse_state(alphabet, l, &what))
                    .collect::<Result<_, _>>()?;
                Ok(CompiledProcessRow {
                    t: row.t,
                    history,
                    probs: parse_probs(&row.probs, n_theta, alphabet.size(), &what)?,
                })
            })
            .collect()
    }

    fn build_mechanism<S: Scalar>(&self, alphabet: &XAlphabet) -> Result<MechanismKernel<S>, FileError> {
        let psis: Vec<Vec<S>> = parse_grid(&self.mechanism.psi, "mechanism.psi")?;
        let binary = alphabet.coords().len() == 1 && alphabet.size() == 2;
        let needs = |name: &str, len: usize| -> Result<(), FileError> {
            if self.r_dim != 1 || !binary {
                return Err(FileError::Invalid(format!("builder {name} needs r_dim 1 and one binary coordinate")));
            }
            if psis.is_empty() || psis.iter().any(|p| p.len() != len) {
                return Err(FileError::Invalid(format!("builder {name} takes ψ vectors of length {len}")));
            }
            Ok(())
        };
        let mut mechanism = match (self.mechanism.builder.as_deref(), self.mechanism.rows.is_empty()) {
            (Some(_), false) => return Err(FileError::Invalid("mechanism has both a builder and rows".into())),
            (Some("always-observed"), true) => MechanismKernel::always_observed(self.r_dim),
            (Some("lagged-bernoulli"), true) => {
                needs("lagged-bernoulli", 2)?;
                builders::lagged_bernoulli(psis)
            }
            (Some("anticipating-bernoulli"), true) => {
                needs("anticipating-bernoulli", 2)?;
                builders::anticipating_bernoulli(psis)
            }
            (Some("right-censor-hazard"), true) => {
                if self.r_dim != 1 {
                    return Err(FileError::Invalid("builder right-censor-hazard needs r_dim 1".into()));
                }
                if psis.is_empty() || psis.iter().any(|p| p.len() != self.horizon) {
                    return Err(FileError::Invalid("builder right-censor-hazard takes one hazard per step".into()));
                }
                builders::right_censor_hazard(psis)
            }
            (Some(other), true) => return Err(FileError::Invalid(format!("unknown mechanism builder {other:?}"))),
            (None, true) => return Err(FileError::Invalid("mechanism needs a builder or rows".into())),
            (None, false) => {
                if psis.is_empty() {
                    return Err(FileError::Invalid("mechanism.psi is empty".into()));
                }
                let rows = self.compile_mechanism_rows::<S>(alphabet, psis.len())?;
                let grid_values = psis.clone();
                MechanismKernel::new(self.r_dim, psis, self.dependence, self.counting, move |psi, x, rh| {
                    let Some(i) = grid_index(&grid_values, psi) else {
                        return Vec::new();
                    };
                    let t = rh.len() + 1;
                    rows.iter()
                        .find(|r| {
                            r.t.is_none_or(|rt| rt == t)
                                && r.x.as_ref().is_none_or(|p| p.iter().zip(x).all(|(p, v)| p.matches(v)))
                                && suffix_matches(&r.r_history, rh)
                        })
                        .map_or_else(Vec::new, |r| r.probs[i].clone())
                })
            }
        };
        mechanism.dependence_class = self.dependence;
        mechanism.counting = self.counting;
        mechanism.mark_labels = self.marks.clone();
        Ok(mechanism)
    }

    fn compile_mechanism_rows<S: Scalar>(&self, alphabet: &XAlphabet, n_psi: usize) -> Result<Vec<CompiledMechanismRow<S>>, FileError> {
        self.mechanism
            .rows
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let what = format!("mechanism.rows[{k}]");
                let x = row
                    .x
                    .as_ref()
                    .map(|labels| {
                        if labels.len() != self.horizon {
                            return Err(FileError::Invalid(format!("{what}: x pattern must have {} entries", self.horizon)));
                        }
                        labels.iter().map(|l| self.parse_state(alphabet, l, &what)).collect()
                    })
                    .transpose()?;
                let r_history = row
                    .r_history
                    .iter()
                    .flatten()
                    .map(|l| self.parse_r(l, &what))
                    .collect::<Result<_, _>>()?;
                Ok(CompiledMechanismRow {
                    t: row.t,
                    x,
                    r_history,
                    probs: parse_probs(&row.probs, n_psi, 1 << self.r_dim, &what)?,
                })
            })
            .collect()
    }

    fn build_vertical(&self, alphabet: &XAlphabet, v: &VerticalSpec) -> Result<VerticalCoarsener, FileError> {
        let coord = alphabet
            .coords()
            .iter()
            .position(|c| c.name == v.coord)
            .ok_or_else(|| FileError::Invalid(format!("vertical: unknown coordinate {:?}", v.coord)))?;
        let mut labels: Vec<String> = Vec::new();
        let map = alphabet.coords()[coord]
            .symbols
            .iter()
            .map(|s| {
                let coarse = v.map.get(s).cloned().unwrap_or_else(|| s.clone());
                let idx = labels.iter().position(|l| *l == coarse).unwrap_or_else(|| {
                    labels.push(coarse);
                    labels.len() - 1
                });
                idx as u16
            })
            .collect();
        if let Some(k) = v.map.keys().find(|k| !alphabet.coords()[coord].symbols.contains(k)) {
            return Err(FileError::Invalid(format!("vertical: unknown symbol {k:?}")));
        }
        Ok(VerticalCoarsener::new(v.label.clone(), coord, map, labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Exact;

    const M1: &str = r#"
name = "m1"
horizon = 2
counting = "visit"
dependence = "past-x-only"
reference = { theta = 1, psi = 0 }

[[coordinates]]
name = "x"
symbols = ["0", "1"]

[process]
theta = [["0.3"], ["0.5"]]
builder = "iid-bernoulli"

[mechanism]
psi = [["0.5", "0.5"], ["0.7", "0.4"]]

[[mechanism.rows]]
t = 1
probs = [["0", "1"]]

[[mechanism.rows]]
x = ["1", "*"]
probs = [["0.5", "0.5"], ["0.3", "0.7"]]

[[mechanism.rows]]
x = ["0", "*"]
probs = [["0.5", "0.5"], ["0.6", "0.4"]]
"#;

    #[test]
    fn tabular_matches_builder() {
        let tab = ModelSpec::from_toml(M1).unwrap().build::<Exact>(1000).unwrap().model;
        let mut spec = ModelSpec::from_toml(M1).unwrap();
        spec.mechanism.rows.clear();
        spec.mechanism.builder = Some("lagged-bernoulli".into());
        let built = spec.build::<Exact>(1000).unwrap().model;
        assert_eq!(tab.space().paths(), built.space().paths());
        for pair in tab.pairs() {
            assert_eq!(tab.measure(pair).probs(), built.measure(pair).probs());
        }
        assert_eq!(tab.space().len(), 8);
    }

    #[test]
    fn round_trip() {
        let spec = ModelSpec::from_toml(M1).unwrap();
        let again = ModelSpec::from_toml(&spec.to_toml()).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = ModelSpec::from_toml("name = \"x\"\nhorizon = [\n").unwrap_err();
        match err {
            FileError::Parse { line, .. } => assert!(line >= 2),
            other => panic!("unexpected {other}"),
        }
        let err = ModelSpec::from_toml("name = \"x\"\nhorizon = 2\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, FileError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn bad_values_are_invalid() {
        let spec = ModelSpec::from_toml(&M1.replace("\"0.3\"", "\"zero point three\"")).unwrap();
        assert!(matches!(spec.build::<f64>(1000), Err(FileError::Invalid(_))));
        let spec = ModelSpec::from_toml(&M1.replace("[\"0.5\", \"0.5\"], [\"0.3\", \"0.7\"]", "[\"0.5\", \"0.6\"]")).unwrap();
        assert!(matches!(spec.build::<f64>(1000), Err(FileError::Model(ModelError::InvalidKernel(_)))));
    }

    #[test]
    fn vertical_map_merges_symbols() {
        let text = format!("{M1}\n[vertical]\nlabel = \"clamp\"\ncoord = \"x\"\nmap = {{ \"0\" = \"low\", \"1\" = \"low\" }}\n");
        let loaded = ModelSpec::from_toml(&text).unwrap().build::<f64>(1000).unwrap();
        let v = loaded.vertical.unwrap();
        assert_eq!(v.map, vec![0, 0]);
        assert_eq!(v.coarse_labels, vec!["low".to_string()]);
    }
}
