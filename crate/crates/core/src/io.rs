//! Strict JSON file schemas for graphs, outcome models, estimator
//! configurations, and scenarios.
//!
//! Every schema rejects unknown fields so config drift fails loudly, and
//! every accepted file re-serializes to a canonical form: edge lists and
//! pair lists are sorted on load, so `load(save(load(f)))` equals
//! `load(f)` byte for byte. Parse errors carry the file path plus
//! serde_json's line and column.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, InstrumentSpec};
use crate::graph::{
    AnchorSubgraph, EdgeRule, EdgeRuleKind, EndogenousGraph, PairRule, UnitSets,
};
use crate::montecarlo::Scenario;
use crate::outcomes::{DeclaredBounds, ExposureWeights, OutcomeModel};

/// One potential edge and its truth table.
///
/// `depends_on` lists the randomization units the edge responds to in
/// strictly increasing order; entry `m` of `table` is the edge state when
/// bit `i` of `m` equals the assignment of `depends_on[i]`. A constant edge
/// has an empty dependency list and a one-entry table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEntry {
    pub a: usize,
    pub r: usize,
    pub depends_on: Vec<usize>,
    pub table: Vec<u8>,
}

/// On-disk form of an endogenous graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub n_a: usize,
    pub n_r: usize,
    #[serde(default)]
    pub unipartite: bool,
    /// Declared dependency class: "exogenous", "r_driven", "set_driven",
    /// or "unrestricted".
    pub kind: String,
    pub edges: Vec<EdgeEntry>,
    /// Edges observed before the experiment, for edge-shift tests.
    #[serde(default)]
    pub pre_edges: Vec<(usize, usize)>,
}

impl GraphFile {
    /// Sort edge and pair lists; idempotent.
    pub fn canonicalize(&mut self) {
        self.edges.sort_by_key(|e| (e.a, e.r));
        self.pre_edges.sort_unstable();
    }

    /// Validate and convert to the in-memory graph.
    pub fn to_graph(&self) -> Result<EndogenousGraph> {
        let kind = parse_rule_kind(&self.kind)?;
        let units = if self.unipartite {
            if self.n_a != self.n_r {
                return Err(Error::Schema(format!(
                    "unipartite graphs need n_a == n_r, got {} and {}",
                    self.n_a, self.n_r
                )));
            }
            UnitSets::unipartite(self.n_a)?
        } else {
            UnitSets::bipartite(self.n_a, self.n_r)?
        };
        let rules = self
            .edges
            .iter()
            .map(|e| PairRule::new(e.a, e.r, e.depends_on.clone(), e.table.clone()))
            .collect::<Result<Vec<_>>>()?;
        let rule = EdgeRule::new(kind, &units, rules)?;
        EndogenousGraph::new(units, rule, &self.pre_edges)
    }
}

fn parse_rule_kind(kind: &str) -> Result<EdgeRuleKind> {
    match kind {
        "exogenous" => Ok(EdgeRuleKind::Exogenous),
        "r_driven" => Ok(EdgeRuleKind::RDriven),
        "set_driven" => Ok(EdgeRuleKind::SetDriven),
        "unrestricted" => Ok(EdgeRuleKind::Unrestricted),
        other => Err(Error::Schema(format!(
            "unknown edge-rule kind {other:?}; expected one of \"exogenous\", \
             \"r_driven\", \"set_driven\", \"unrestricted\""
        ))),
    }
}

/// On-disk form of exposure weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    /// "uniform", "explicit" (dense row-major values), or
    /// "degree_normalized".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

/// On-disk form of an outcome model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomesFile {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    pub weights: WeightsFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsFile>,
}

/// Declared envelope constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsFile {
    pub outcome_bound: f64,
    pub weight_low: f64,
    pub weight_high: f64,
}

impl OutcomesFile {
    /// Validate and convert against the graph the model will be used with.
    /// Unipartite graphs force a zero weight diagonal.
    pub fn to_model(&self, graph: &EndogenousGraph) -> Result<OutcomeModel> {
        let weights = match self.weights.kind.as_str() {
            "uniform" => {
                self.forbid_values()?;
                ExposureWeights::uniform()
            }
            "degree_normalized" => {
                self.forbid_values()?;
                ExposureWeights::degree_normalized(graph)
            }
            "explicit" => {
                let values = self.weights.values.clone().ok_or_else(|| {
                    Error::Schema(
                        "weights kind \"explicit\" needs a \"values\" array of \
                         n_a * n_r row-major entries"
                            .into(),
                    )
                })?;
                ExposureWeights::dense(graph.n_a(), graph.n_r(), values)?
            }
            other => {
                return Err(Error::Schema(format!(
                    "unknown weights kind {other:?}; expected one of \"uniform\", \
                     \"explicit\", \"degree_normalized\""
                )))
            }
        };
        let weights =
            if graph.is_unipartite() { weights.with_zero_diagonal() } else { weights };
        let mut model = OutcomeModel::new(self.alpha.clone(), self.beta.clone(), weights)?;
        if let Some(gamma) = &self.gamma {
            model = model.with_gamma(gamma.clone())?;
        }
        if let Some(b) = self.bounds {
            model = model.with_bounds(DeclaredBounds {
                outcome_bound: b.outcome_bound,
                weight_low: b.weight_low,
                weight_high: b.weight_high,
            });
        }
        model.check_against(graph)?;
        Ok(model)
    }

    fn forbid_values(&self) -> Result<()> {
        if self.weights.values.is_some() {
            return Err(Error::Schema(format!(
                "weights kind {:?} does not take a \"values\" array",
                self.weights.kind
            )));
        }
        Ok(())
    }
}

/// On-disk form of the instrument block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentFile {
    /// "uniform" (spread evenly over each unit's anchor pairs) or
    /// "explicit" (listed (a, r, u) entries).
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<(usize, usize, f64)>>,
}

/// On-disk form of an estimator configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub p: f64,
    /// Always-present pairs the instrument may load on.
    pub anchor: Vec<(usize, usize)>,
    pub u: InstrumentFile,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub require_nonnegative_u: bool,
}

impl ConfigFile {
    /// Sort the anchor list and any explicit instrument entries; idempotent.
    pub fn canonicalize(&mut self) {
        self.anchor.sort_unstable();
        if let Some(entries) = &mut self.u.entries {
            entries.sort_by_key(|&(a, r, _)| (a, r));
        }
    }

    /// Validate and convert for a graph of the given shape.
    pub fn to_config(&self, n_a: usize, n_r: usize) -> Result<EstimatorConfig> {
        let anchor = AnchorSubgraph::new(n_a, n_r, &self.anchor)?;
        let instrument = match self.u.kind.as_str() {
            "uniform" => {
                if self.u.entries.is_some() {
                    return Err(Error::Schema(
                        "instrument kind \"uniform\" does not take \"entries\"".into(),
                    ));
                }
                InstrumentSpec::UniformOnAnchor
            }
            "explicit" => {
                let entries = self.u.entries.clone().ok_or_else(|| {
                    Error::Schema(
                        "instrument kind \"explicit\" needs an \"entries\" array of \
                         [a, r, u] triples"
                            .into(),
                    )
                })?;
                InstrumentSpec::Explicit(entries)
            }
            other => {
                return Err(Error::Schema(format!(
                    "unknown instrument kind {other:?}; expected \"uniform\" or \
                     \"explicit\""
                )))
            }
        };
        let config = EstimatorConfig::new(anchor, instrument, self.p);
        Ok(if self.require_nonnegative_u {
            config.with_nonnegative_instrument()
        } else {
            config
        })
    }
}

/// Parse a JSON value of type `T`, mapping parse failures to schema errors
/// labeled with `origin` (a path or a short description).
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Schema(format!("{origin}: {e}")))
}

/// Serialize any report or file struct to its canonical textual form:
/// two-space indented JSON with a trailing newline, fields in declaration
/// order.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Schema(format!("serialization failed: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Write a value at its canonical form.
pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = to_canonical_json(value)?;
    fs::write(path, text).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Load a graph file: strict parse, canonicalize, validate, convert.
pub fn load_graph(path: &Path) -> Result<(GraphFile, EndogenousGraph)> {
    let text = read_file(path)?;
    let mut file: GraphFile = parse_json(&text, &path.display().to_string())?;
    file.canonicalize();
    let graph = file.to_graph()?;
    Ok((file, graph))
}

/// Load an outcome-model file; conversion happens later against a graph.
pub fn load_outcomes(path: &Path) -> Result<OutcomesFile> {
    let text = read_file(path)?;
    parse_json(&text, &path.display().to_string())
}

/// Load an estimator configuration file.
pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = read_file(path)?;
    let mut file: ConfigFile = parse_json(&text, &path.display().to_string())?;
    file.canonicalize();
    Ok(file)
}

/// Load a scenario file and check the recipe.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = read_file(path)?;
    let scenario: Scenario = parse_json(&text, &path.display().to_string())?;
    scenario.validate()?;
    Ok(scenario)
}
