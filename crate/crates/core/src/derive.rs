//! Derivation of a Bayesian net from a quality model and an assessment plan.
//!
//! Activities in the plan's subtree become ranked nodes whose parents are
//! their sub-activities and the factors impacting them. Scanner-finding
//! measures hang below their factor as two-state indicator nodes, and a
//! numeric metric node sits below the root activity.
//!
//! Node ids carry a kind prefix: `a.` activities, `f.` factors, `m.`
//! measures, `metric.` the metric node.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::{build_net, BayesError, BayesNet, Node, NodeKind};
use crate::nptgen::{
    arithmetic_npt, partitioned_npt, ranked_npt, AffineExpr, BinScale, Npt, NptError,
    PartitionSpec, RankedScale, Scale, WmeanSpec, DEFAULT_PRIOR_MEAN, DEFAULT_RANKED_SIGMA,
    MEASURE_STATES,
};
use crate::qmodel::{
    activity_subtree, validate_model, MeasureKind, ModelError, NodeNpt, Polarity, QualityModel,
};

#[derive(Debug, Error)]
pub enum DeriveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("root activity `{0}` not found in the model")]
    RootMissing(String),
    #[error("invalid assessment plan: {0}")]
    InvalidPlan(String),
    #[error("orphan measure `{measure}`: target `{target}` has no impact path into the assessed activities")]
    OrphanMeasure { measure: String, target: String },
    #[error("factor `{factor}` impacts activity `{activity}` more than once")]
    DuplicateImpact { factor: String, activity: String },
    #[error("node `{node}`: npt type `{npt}` not applicable")]
    UnsupportedNpt { node: String, npt: &'static str },
    #[error("node `{node}`: {source}")]
    Npt {
        node: String,
        #[source]
        source: NptError,
    },
    #[error(transparent)]
    Bayes(#[from] BayesError),
}

fn default_state_count() -> usize {
    3
}
fn default_sigma() -> f64 {
    DEFAULT_RANKED_SIGMA
}
fn default_epsilon() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlanDefaults {
    #[serde(default = "default_state_count")]
    pub ranked_state_count: usize,
    #[serde(default = "default_sigma")]
    pub sigma_ranked: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon_measure: f64,
}

impl Default for PlanDefaults {
    fn default() -> Self {
        Self {
            ranked_state_count: default_state_count(),
            sigma_ranked: default_sigma(),
            epsilon_measure: default_epsilon(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricNodeSpec {
    pub name: String,
    pub range: [f64; 2],
    pub bin_count: usize,
    /// Map from the root activity's midpoint to the metric value; spans the
    /// range when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<AffineExpr>,
    pub sigma: f64,
}

impl MetricNodeSpec {
    pub fn node_id(&self) -> String {
        format!("metric.{}", slug(&self.name))
    }

    pub fn bin_scale(&self) -> Result<BinScale, NptError> {
        BinScale::new(self.range[0], self.range[1], self.bin_count)
    }

    pub fn effective_expr(&self) -> AffineExpr {
        self.expr
            .unwrap_or_else(|| AffineExpr::spanning(self.range[0], self.range[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssessmentPlan {
    pub root_activity: String,
    pub metric_node: MetricNodeSpec,
    #[serde(default)]
    pub defaults: PlanDefaults,
}

impl AssessmentPlan {
    pub fn from_json(document: &str) -> Result<Self, DeriveError> {
        serde_json::from_str(document).map_err(|e| DeriveError::InvalidPlan(e.to_string()))
    }

    fn check(&self) -> Result<(), DeriveError> {
        let d = &self.defaults;
        if d.ranked_state_count < 2 {
            return Err(DeriveError::InvalidPlan(
                "rankedStateCount must be >= 2".into(),
            ));
        }
        if !(d.sigma_ranked.is_finite() && d.sigma_ranked > 0.0) {
            return Err(DeriveError::InvalidPlan("sigmaRanked must be > 0".into()));
        }
        if !(d.epsilon_measure > 0.0 && d.epsilon_measure <= 0.5) {
            return Err(DeriveError::InvalidPlan(
                "epsilonMeasure must lie in (0, 0.5]".into(),
            ));
        }
        self.metric_node
            .bin_scale()
            .map_err(|e| DeriveError::InvalidPlan(format!("metric node: {e}")))?;
        if !(self.metric_node.sigma.is_finite() && self.metric_node.sigma > 0.0) {
            return Err(DeriveError::InvalidPlan("metric sigma must be > 0".into()));
        }
        Ok(())
    }
}

fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

/// Correspondence between net node ids and model element ids (the metric
/// node maps to the metric name).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NodeMap {
    node_to_element: BTreeMap<String, String>,
    #[serde(skip)]
    element_to_node: BTreeMap<String, String>,
}

impl NodeMap {
    fn insert(&mut self, node: String, element: String) {
        self.element_to_node.insert(element.clone(), node.clone());
        self.node_to_element.insert(node, element);
    }

    pub fn element_of(&self, node: &str) -> Option<&str> {
        self.node_to_element.get(node).map(String::as_str)
    }

    pub fn node_of(&self, element: &str) -> Option<&str> {
        self.element_to_node.get(element).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.node_to_element
            .iter()
            .map(|(n, e)| (n.as_str(), e.as_str()))
    }

    pub fn len(&self) -> usize {
        self.node_to_element.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_to_element.is_empty()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("id `{0}` is neither a node id nor a model element id")]
pub struct UnknownId(pub String);

/// Node id for an element id, or element id for a node id.
pub fn trace(map: &NodeMap, id: &str) -> Result<String, UnknownId> {
    map.element_of(id)
        .or_else(|| map.node_of(id))
        .map(str::to_string)
        .ok_or_else(|| UnknownId(id.to_string()))
}

pub fn activity_node_id(id: &str) -> String {
    format!("a.{id}")
}
pub fn factor_node_id(id: &str) -> String {
    format!("f.{id}")
}
pub fn measure_node_id(id: &str) -> String {
    format!("m.{id}")
}

pub fn derive_net(
    model: &QualityModel,
    plan: &AssessmentPlan,
) -> Result<(BayesNet, NodeMap), DeriveError> {
    let report = validate_model(model);
    if !report.is_valid() {
        return Err(ModelError::Invalid(report).into());
    }
    plan.check()?;
    let subtree = activity_subtree(model, &plan.root_activity)
        .map_err(|_| DeriveError::RootMissing(plan.root_activity.clone()))?;
    let included: BTreeSet<&str> = subtree.iter().map(String::as_str).collect();

    let ranked = RankedScale::new(plan.defaults.ranked_state_count)
        .map_err(|e| DeriveError::InvalidPlan(e.to_string()))?;
    let k = ranked.state_count();
    let npt_err = |node: &str| {
        let node = node.to_string();
        move |source| DeriveError::Npt { node, source }
    };

    let factor_ids: BTreeSet<&str> = model
        .impacts
        .iter()
        .filter(|i| included.contains(i.target.as_str()))
        .map(|i| i.source.as_str())
        .collect();

    let mut nodes = Vec::new();
    let mut map = NodeMap::default();

    for act_id in &subtree {
        let activity = model.activity(act_id).expect("subtree ids resolve");
        let node_id = activity_node_id(act_id);
        let mut parents = Vec::new();
        let mut weights = Vec::new();
        let mut polarities = Vec::new();
        for child in model.child_activities(act_id) {
            parents.push(activity_node_id(&child.id));
            weights.push(1.0);
            polarities.push(Polarity::Positive);
        }
        let mut seen = BTreeSet::new();
        for impact in model.impacts_on(act_id) {
            if !seen.insert(impact.source.as_str()) {
                return Err(DeriveError::DuplicateImpact {
                    factor: impact.source.clone(),
                    activity: act_id.clone(),
                });
            }
            parents.push(factor_node_id(&impact.source));
            weights.push(impact.weight);
            polarities.push(impact.polarity);
        }

        let parent_scales = vec![ranked.clone(); parents.len()];
        let mut spec = WmeanSpec::new(weights, polarities, plan.defaults.sigma_ranked);
        spec.prior_mean = DEFAULT_PRIOR_MEAN;
        let npt = match &activity.npt {
            None => ranked_npt(&parent_scales, &ranked, &spec),
            Some(NodeNpt::Wmean { sigma, prior_mean }) => {
                if let Some(s) = sigma {
                    spec.sigma = *s;
                }
                if let Some(m) = prior_mean {
                    spec.prior_mean = *m;
                }
                ranked_npt(&parent_scales, &ranked, &spec)
            }
            Some(NodeNpt::Explicit { rows }) => Npt::new(k, vec![k; parents.len()], rows.clone()),
            Some(NodeNpt::Partition { .. }) => {
                return Err(DeriveError::UnsupportedNpt {
                    node: node_id,
                    npt: "partition",
                })
            }
        }
        .map_err(npt_err(&node_id))?;

        nodes.push(Node {
            id: node_id.clone(),
            kind: NodeKind::Activity,
            states: ranked.labels().to_vec(),
            scale: Some(Scale::Ranked(ranked.clone())),
            parents,
            npt,
        });
        map.insert(node_id, act_id.clone());
    }

    for factor in model
        .factors
        .iter()
        .filter(|f| factor_ids.contains(f.id.as_str()))
    {
        let node_id = factor_node_id(&factor.id);
        let npt = match &factor.npt {
            None => Ok(Npt::uniform(k)),
            Some(NodeNpt::Explicit { rows }) => Npt::new(k, Vec::new(), rows.clone()),
            Some(NodeNpt::Wmean { .. }) => {
                return Err(DeriveError::UnsupportedNpt {
                    node: node_id,
                    npt: "wmean",
                })
            }
            Some(NodeNpt::Partition { .. }) => {
                return Err(DeriveError::UnsupportedNpt {
                    node: node_id,
                    npt: "partition",
                })
            }
        }
        .map_err(npt_err(&node_id))?;
        nodes.push(Node {
            id: node_id.clone(),
            kind: NodeKind::Factor,
            states: ranked.labels().to_vec(),
            scale: Some(Scale::Ranked(ranked.clone())),
            parents: Vec::new(),
            npt,
        });
        map.insert(node_id, factor.id.clone());
    }

    for measure in model
        .measures
        .iter()
        .filter(|m| m.kind == MeasureKind::ScannerFinding)
    {
        let parent = if factor_ids.contains(measure.target.as_str()) {
            factor_node_id(&measure.target)
        } else if included.contains(measure.target.as_str()) {
            activity_node_id(&measure.target)
        } else {
            return Err(DeriveError::OrphanMeasure {
                measure: measure.id.clone(),
                target: measure.target.clone(),
            });
        };
        let node_id = measure_node_id(&measure.id);
        let epsilon = measure
            .diagnosticity
            .unwrap_or(plan.defaults.epsilon_measure);
        let npt = match &measure.npt {
            None => partitioned_npt(&ranked, epsilon),
            Some(NodeNpt::Partition {
                mapping: Some(mapping),
                ..
            }) => PartitionSpec {
                mapping: mapping.clone(),
            }
            .to_npt(k),
            Some(NodeNpt::Partition {
                epsilon: e,
                mapping: None,
            }) => partitioned_npt(&ranked, e.unwrap_or(epsilon)),
            Some(NodeNpt::Explicit { rows }) => Npt::new(2, vec![k], rows.clone()),
            Some(NodeNpt::Wmean { .. }) => {
                return Err(DeriveError::UnsupportedNpt {
                    node: node_id,
                    npt: "wmean",
                })
            }
        }
        .map_err(npt_err(&node_id))?;
        nodes.push(Node {
            id: node_id.clone(),
            kind: NodeKind::Measure,
            states: MEASURE_STATES.iter().map(|s| s.to_string()).collect(),
            scale: None,
            parents: vec![parent],
            npt,
        });
        map.insert(node_id, measure.id.clone());
    }

    let metric = &plan.metric_node;
    let metric_id = metric.node_id();
    let bins = metric.bin_scale().map_err(npt_err(&metric_id))?;
    let npt = arithmetic_npt(&ranked, &bins, metric.effective_expr(), metric.sigma)
        .map_err(npt_err(&metric_id))?;
    nodes.push(Node {
        id: metric_id.clone(),
        kind: NodeKind::Metric,
        states: bins.labels(),
        scale: Some(Scale::Numeric(bins)),
        parents: vec![activity_node_id(&plan.root_activity)],
        npt,
    });
    map.insert(metric_id, metric.name.clone());

    Ok((build_net(nodes)?, map))
}
