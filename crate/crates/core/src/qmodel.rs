//! Activity-based quality model: entities, activities, factors, impacts and
//! measures, plus the JSON model file format.
//!
//! A [`QualityModel`] is plain data. [`parse_model`] only hands out models that
//! pass [`validate_model`]; [`decode_model`] skips validation so tooling can
//! report every violation of a broken file at once.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid model:\n{0}")]
    Invalid(ValidationReport),
    #[error("unknown activity `{0}`")]
    UnknownActivity(String),
}

impl ModelError {
    /// Violation codes carried by an `Invalid` error, empty otherwise.
    pub fn codes(&self) -> Vec<ViolationCode> {
        match self {
            ModelError::Invalid(report) => report.violations.iter().map(|v| v.code).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub npt: Option<NodeNpt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub id: String,
    pub entity: String,
    pub property: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub npt: Option<NodeNpt>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "+",
            Polarity::Negative => "-",
        })
    }
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Impact {
    pub id: String,
    /// Factor id.
    pub source: String,
    /// Activity id.
    pub target: String,
    pub polarity: Polarity,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    ScannerFinding,
    NumericMetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Measure {
    pub id: String,
    pub name: String,
    /// Factor id or activity id.
    pub target: String,
    pub kind: MeasureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vuln_class: Option<String>,
    /// Uncertainty band of the partitioned expression; falls back to the
    /// assessment plan default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosticity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub npt: Option<NodeNpt>,
}

/// Per-node NPT parameters as they appear in the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum NodeNpt {
    /// Weighted mean of the parents (activities).
    #[serde(rename_all = "camelCase")]
    Wmean {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prior_mean: Option<f64>,
    },
    /// Partitioned expression (measures). `mapping` gives P(yes) per parent
    /// state, lowest state first.
    Partition {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mapping: Option<Vec<f64>>,
    },
    /// Literal rows, one per parent state combination (a single row for
    /// nodes without parents).
    Explicit { rows: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityModel {
    pub goal: String,
    pub question: String,
    pub metric: String,
    #[serde(default)]
    pub entities: Vec<Entity>,
    #[serde(default)]
    pub activities: Vec<Activity>,
    #[serde(default)]
    pub factors: Vec<Factor>,
    #[serde(default)]
    pub impacts: Vec<Impact>,
    #[serde(default)]
    pub measures: Vec<Measure>,
}

impl QualityModel {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn activity(&self, id: &str) -> Option<&Activity> {
        self.activities.iter().find(|a| a.id == id)
    }

    pub fn factor(&self, id: &str) -> Option<&Factor> {
        self.factors.iter().find(|f| f.id == id)
    }

    pub fn measure(&self, id: &str) -> Option<&Measure> {
        self.measures.iter().find(|m| m.id == id)
    }

    /// Direct sub-activities of `id`, in declaration order.
    pub fn child_activities<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Activity> + 'a {
        self.activities
            .iter()
            .filter(move |a| a.parent.as_deref() == Some(id))
    }

    /// Impacts whose target is the activity `id`, in declaration order.
    pub fn impacts_on<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Impact> + 'a {
        self.impacts.iter().filter(move |i| i.target == id)
    }

    pub fn scanner_measures(&self) -> impl Iterator<Item = &Measure> {
        self.measures
            .iter()
            .filter(|m| m.kind == MeasureKind::ScannerFinding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationCode {
    NoActivities,
    EmptyId,
    DuplicateId,
    DuplicateFactor,
    DanglingReference,
    HierarchyCycle,
    InvalidWeight,
    MissingVulnClass,
    InvalidDiagnosticity,
    InvalidNpt,
}

impl ViolationCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationCode::NoActivities => "no-activities",
            ViolationCode::EmptyId => "empty-id",
            ViolationCode::DuplicateId => "duplicate-id",
            ViolationCode::DuplicateFactor => "duplicate-factor",
            ViolationCode::DanglingReference => "dangling-reference",
            ViolationCode::HierarchyCycle => "hierarchy-cycle",
            ViolationCode::InvalidWeight => "invalid-weight",
            ViolationCode::MissingVulnClass => "missing-vuln-class",
            ViolationCode::InvalidDiagnosticity => "invalid-diagnosticity",
            ViolationCode::InvalidNpt => "invalid-npt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
    /// Element ids involved, e.g. the dangling id or the ids along a cycle.
    pub ids: Vec<String>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code.as_str(), self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    fn push(&mut self, code: ViolationCode, message: String, ids: Vec<String>) {
        self.violations.push(Violation { code, message, ids });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Decode a model document without checking its invariants.
pub fn decode_model(document: &str) -> Result<QualityModel, ModelError> {
    serde_json::from_str(document).map_err(|e| ModelError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Decode and validate a model document.
pub fn parse_model(document: &str) -> Result<QualityModel, ModelError> {
    let model = decode_model(document)?;
    let report = validate_model(&model);
    if report.is_valid() {
        Ok(model)
    } else {
        Err(ModelError::Invalid(report))
    }
}

pub fn serialize_model(model: &QualityModel) -> String {
    serde_json::to_string_pretty(model).expect("quality model serializes to JSON")
}

pub fn validate_model(model: &QualityModel) -> ValidationReport {
    let mut report = ValidationReport::default();

    if model.activities.is_empty() {
        report.push(
            ViolationCode::NoActivities,
            "at least one activity required".into(),
            Vec::new(),
        );
    }

    // Ids are unique across the whole model so that traces stay unambiguous.
    let mut seen: HashMap<&str, &'static str> = HashMap::new();
    let all_ids = model
        .entities
        .iter()
        .map(|e| ("entity", e.id.as_str()))
        .chain(model.activities.iter().map(|a| ("activity", a.id.as_str())))
        .chain(model.factors.iter().map(|f| ("factor", f.id.as_str())))
        .chain(model.impacts.iter().map(|i| ("impact", i.id.as_str())))
        .chain(model.measures.iter().map(|m| ("measure", m.id.as_str())));
    for (kind, id) in all_ids {
        if id.trim().is_empty() {
            report.push(
                ViolationCode::EmptyId,
                format!("{kind} with empty id"),
                Vec::new(),
            );
            continue;
        }
        if let Some(first) = seen.insert(id, kind) {
            report.push(
                ViolationCode::DuplicateId,
                format!("id `{id}` used by {first} and {kind}"),
                vec![id.to_string()],
            );
        }
    }

    let entity_ids: BTreeSet<&str> = model.entities.iter().map(|e| e.id.as_str()).collect();
    let activity_ids: BTreeSet<&str> = model.activities.iter().map(|a| a.id.as_str()).collect();
    let factor_ids: BTreeSet<&str> = model.factors.iter().map(|f| f.id.as_str()).collect();

    let dangling = |report: &mut ValidationReport, owner: &str, field: &str, id: &str| {
        report.push(
            ViolationCode::DanglingReference,
            format!("{owner}: {field} `{id}` does not resolve"),
            vec![id.to_string()],
        );
    };

    for e in &model.entities {
        if let Some(p) = &e.parent {
            if !entity_ids.contains(p.as_str()) {
                dangling(&mut report, &format!("entity `{}`", e.id), "parent", p);
            }
        }
    }
    for a in &model.activities {
        if let Some(p) = &a.parent {
            if !activity_ids.contains(p.as_str()) {
                dangling(&mut report, &format!("activity `{}`", a.id), "parent", p);
            }
        }
    }

    let entity_parents: Vec<(&str, Option<&str>)> = model
        .entities
        .iter()
        .map(|e| (e.id.as_str(), e.parent.as_deref()))
        .collect();
    for cycle in find_cycles(&entity_parents) {
        report.push(
            ViolationCode::HierarchyCycle,
            format!("entity hierarchy cycle: {}", cycle.join(" -> ")),
            cycle,
        );
    }
    let activity_parents: Vec<(&str, Option<&str>)> = model
        .activities
        .iter()
        .map(|a| (a.id.as_str(), a.parent.as_deref()))
        .collect();
    for cycle in find_cycles(&activity_parents) {
        report.push(
            ViolationCode::HierarchyCycle,
            format!("activity hierarchy cycle: {}", cycle.join(" -> ")),
            cycle,
        );
    }

    let mut factor_keys: BTreeMap<(&str, &str), &str> = BTreeMap::new();
    for f in &model.factors {
        if !entity_ids.contains(f.entity.as_str()) {
            dangling(
                &mut report,
                &format!("factor `{}`", f.id),
                "entity",
                &f.entity,
            );
        }
        if let Some(first) = factor_keys.insert((f.entity.as_str(), f.property.as_str()), &f.id) {
            report.push(
                ViolationCode::DuplicateFactor,
                format!(
                    "factors `{first}` and `{}` share entity `{}` and property `{}`",
                    f.id, f.entity, f.property
                ),
                vec![first.to_string(), f.id.clone()],
            );
        }
        if let Some(npt) = &f.npt {
            check_npt(&mut report, &f.id, npt);
        }
    }

    for a in &model.activities {
        if let Some(npt) = &a.npt {
            check_npt(&mut report, &a.id, npt);
        }
    }

    for i in &model.impacts {
        if !factor_ids.contains(i.source.as_str()) {
            dangling(
                &mut report,
                &format!("impact `{}`", i.id),
                "source",
                &i.source,
            );
        }
        if !activity_ids.contains(i.target.as_str()) {
            dangling(
                &mut report,
                &format!("impact `{}`", i.id),
                "target",
                &i.target,
            );
        }
        if !(i.weight.is_finite() && i.weight > 0.0) {
            report.push(
                ViolationCode::InvalidWeight,
                format!(
                    "impact `{}` has weight {}; must be finite and > 0",
                    i.id, i.weight
                ),
                vec![i.id.clone()],
            );
        }
    }

    for m in &model.measures {
        if !factor_ids.contains(m.target.as_str()) && !activity_ids.contains(m.target.as_str()) {
            dangling(
                &mut report,
                &format!("measure `{}`", m.id),
                "target",
                &m.target,
            );
        }
        if m.kind == MeasureKind::ScannerFinding
            && m.vuln_class.as_deref().is_none_or(|c| c.trim().is_empty())
        {
            report.push(
                ViolationCode::MissingVulnClass,
                format!(
                    "scanner-finding measure `{}` has no vulnerability class",
                    m.id
                ),
                vec![m.id.clone()],
            );
        }
        if let Some(d) = m.diagnosticity {
            if !(d > 0.0 && d <= 0.5) {
                report.push(
                    ViolationCode::InvalidDiagnosticity,
                    format!("measure `{}` diagnosticity {d} outside (0, 0.5]", m.id),
                    vec![m.id.clone()],
                );
            }
        }
        if let Some(npt) = &m.npt {
            check_npt(&mut report, &m.id, npt);
        }
    }

    report
}

fn check_npt(report: &mut ValidationReport, owner: &str, npt: &NodeNpt) {
    let mut bad = |msg: String| {
        report.push(
            ViolationCode::InvalidNpt,
            format!("`{owner}`: {msg}"),
            vec![owner.to_string()],
        )
    };
    match npt {
        NodeNpt::Wmean { sigma, prior_mean } => {
            if let Some(s) = sigma {
                if !(s.is_finite() && *s > 0.0) {
                    bad(format!("wmean sigma {s} must be finite and > 0"));
                }
            }
            if let Some(m) = prior_mean {
                if !(0.0..=1.0).contains(m) {
                    bad(format!("wmean priorMean {m} outside [0, 1]"));
                }
            }
        }
        NodeNpt::Partition { epsilon, mapping } => {
            if let Some(e) = epsilon {
                if !(*e > 0.0 && *e <= 0.5) {
                    bad(format!("partition epsilon {e} outside (0, 0.5]"));
                }
            }
            if let Some(map) = mapping {
                if map.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    bad("partition mapping entries must lie in [0, 1]".into());
                }
            }
        }
        NodeNpt::Explicit { rows } => {
            if rows.is_empty() {
                bad("explicit npt has no rows".into());
            }
            for row in rows {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
                    bad("explicit npt rows must be probability vectors".into());
                    break;
                }
            }
        }
    }
}

/// Cycles in a parent-pointer forest, each reported once starting at its
/// smallest id.
fn find_cycles(nodes: &[(&str, Option<&str>)]) -> Vec<Vec<String>> {
    let parent: HashMap<&str, Option<&str>> = nodes.iter().copied().collect();
    let mut reported: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut cleared: BTreeSet<&str> = BTreeSet::new();

    for &(start, _) in nodes {
        if cleared.contains(start) {
            continue;
        }
        let mut path: Vec<&str> = Vec::new();
        let mut pos: HashMap<&str, usize> = HashMap::new();
        let mut cur = Some(start);
        while let Some(id) = cur {
            if cleared.contains(id) {
                break;
            }
            if let Some(&at) = pos.get(id) {
                let cycle = &path[at..];
                let min = cycle
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, id)| **id)
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                let mut canonical: Vec<String> = cycle[min..]
                    .iter()
                    .chain(cycle[..min].iter())
                    .map(|s| s.to_string())
                    .collect();
                canonical.push(canonical[0].clone());
                reported.insert(canonical);
                break;
            }
            pos.insert(id, path.len());
            path.push(id);
            cur = parent.get(id).copied().flatten();
        }
        cleared.extend(path);
    }
    reported.into_iter().collect()
}

/// Depth-first preorder of the activity subtree rooted at `root`; children
/// follow declaration order.
pub fn activity_subtree(model: &QualityModel, root: &str) -> Result<Vec<String>, ModelError> {
    if model.activity(root).is_none() {
        return Err(ModelError::UnknownActivity(root.to_string()));
    }
    let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
    for a in &model.activities {
        if let Some(p) = &a.parent {
            children.entry(p.as_str()).or_default().push(a.id.as_str());
        }
    }
    let mut out = Vec::new();
    let mut visited: BTreeSet<&str> = BTreeSet::new();
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        if !visited.insert(id) {
            continue;
        }
        out.push(id.to_string());
        if let Some(kids) = children.get(id) {
            stack.extend(kids.iter().rev());
        }
    }
    Ok(out)
}
