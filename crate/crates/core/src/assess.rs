//! End-to-end assessment: model + plan + scanner reports in, report out.
//! Also hosts what-if sessions over the derived net.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::{
    query_all, query_marginal, BayesError, BayesNet, Evidence, NodeKind, Posterior,
};
use crate::derive::{derive_net, measure_node_id, AssessmentPlan, DeriveError, NodeMap};
use crate::findings::{
    classify, scanner_diff, vote, AgreementMatrix, FindingsError, FindingsReport, ObservationSet,
    VulnTaxonomy,
};
use crate::qmodel::{validate_model, ModelError, QualityModel};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AssessError {
    #[error("validate: {0}")]
    Validate(#[source] ModelError),
    #[error("system: {0}")]
    System(String),
    #[error("derive: {0}")]
    Derive(#[source] DeriveError),
    #[error("findings: {0}")]
    Findings(#[source] FindingsError),
    #[error("vote: {0}")]
    Vote(#[source] FindingsError),
    #[error("inference: {0}")]
    Inference(#[source] BayesError),
}

impl AssessError {
    pub fn stage(&self) -> &'static str {
        match self {
            AssessError::Validate(_) => "validate",
            AssessError::System(_) => "system",
            AssessError::Derive(_) => "derive",
            AssessError::Findings(_) => "findings",
            AssessError::Vote(_) => "vote",
            AssessError::Inference(_) => "inference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemDescriptor {
    pub id: String,
    pub name: String,
    pub sloc: u64,
    pub language: String,
    pub version: String,
}

impl SystemDescriptor {
    pub fn from_json(document: &str) -> Result<Self, AssessError> {
        let s: Self =
            serde_json::from_str(document).map_err(|e| AssessError::System(e.to_string()))?;
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<(), AssessError> {
        if self.sloc == 0 {
            return Err(AssessError::System(format!(
                "`{}`: sloc must be positive",
                self.id
            )));
        }
        Ok(())
    }

    pub fn ksloc(&self) -> f64 {
        self.sloc as f64 / 1000.0
    }
}

/// Posterior of one net node, annotated for readers of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePosterior {
    pub node: String,
    pub element: String,
    pub name: String,
    pub kind: NodeKind,
    pub states: Vec<String>,
    pub probabilities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssessmentReport {
    pub schema_version: u32,
    pub goal: String,
    pub question: String,
    pub metric: String,
    pub system: SystemDescriptor,
    pub observations: ObservationSet,
    pub metric_node: String,
    pub posteriors: Vec<NodePosterior>,
    pub density_mean: f64,
    pub density_sd: f64,
    pub expected_vuln_count: f64,
    pub scanner_agreement: AgreementMatrix,
    pub unresolved_findings: usize,
    pub caveats: Vec<String>,
    pub timestamp: String,
}

impl AssessmentReport {
    pub fn posterior(&self, node: &str) -> Option<&NodePosterior> {
        self.posteriors.iter().find(|p| p.node == node)
    }
}

/// Everything produced by one pipeline run; the net and evidence seed
/// what-if sessions.
#[derive(Debug, Clone)]
pub struct Assessment {
    pub net: Arc<BayesNet>,
    pub map: Arc<NodeMap>,
    pub names: Arc<BTreeMap<String, String>>,
    pub evidence: Evidence,
    pub report: AssessmentReport,
}

impl Assessment {
    pub fn session(&self, id: impl Into<String>) -> WhatIfSession {
        WhatIfSession {
            id: id.into(),
            net: Arc::clone(&self.net),
            base: self.evidence.clone(),
            overrides: BTreeMap::new(),
        }
    }

    pub fn annotate(&self, posteriors: &[Posterior]) -> Vec<NodePosterior> {
        posteriors
            .iter()
            .map(|p| annotate(&self.net, &self.map, &self.names, p))
            .collect()
    }
}

fn annotate(
    net: &BayesNet,
    map: &NodeMap,
    names: &BTreeMap<String, String>,
    p: &Posterior,
) -> NodePosterior {
    let node = net.node(&p.node).expect("posterior of a net node");
    let element = map.element_of(&p.node).unwrap_or(&p.node).to_string();
    let name = names
        .get(&element)
        .cloned()
        .unwrap_or_else(|| element.clone());
    NodePosterior {
        node: p.node.clone(),
        element,
        name,
        kind: node.kind,
        states: node.states.clone(),
        probabilities: p.probabilities.clone(),
        mean: p.mean,
        sd: p.sd,
    }
}

fn display_names(model: &QualityModel, plan: &AssessmentPlan) -> BTreeMap<String, String> {
    let mut names = BTreeMap::new();
    for a in &model.activities {
        names.insert(a.id.clone(), a.name.clone());
    }
    for f in &model.factors {
        names.insert(f.id.clone(), f.name.clone());
    }
    for m in &model.measures {
        names.insert(m.id.clone(), m.name.clone());
    }
    names.insert(plan.metric_node.name.clone(), plan.metric_node.name.clone());
    names
}

pub fn now_timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn run_assessment(
    model: &QualityModel,
    plan: &AssessmentPlan,
    reports: &[FindingsReport],
    taxonomy: &VulnTaxonomy,
    system: &SystemDescriptor,
) -> Result<AssessmentReport, AssessError> {
    assess(model, plan, reports, taxonomy, system, now_timestamp()).map(|a| a.report)
}

/// The full pipeline with an explicit report timestamp.
pub fn assess(
    model: &QualityModel,
    plan: &AssessmentPlan,
    reports: &[FindingsReport],
    taxonomy: &VulnTaxonomy,
    system: &SystemDescriptor,
    timestamp: String,
) -> Result<Assessment, AssessError> {
    let validation = validate_model(model);
    if !validation.is_valid() {
        return Err(AssessError::Validate(ModelError::Invalid(validation)));
    }
    system.check()?;
    let (net, map) = derive_net(model, plan).map_err(AssessError::Derive)?;
    taxonomy
        .check_against(model)
        .map_err(AssessError::Findings)?;

    let own: Vec<FindingsReport> = reports
        .iter()
        .filter(|r| r.system == system.id)
        .cloned()
        .collect();
    let counts = classify(&own, taxonomy);
    let observations = vote(&counts, taxonomy, model, &system.id).map_err(AssessError::Vote)?;
    let agreement = scanner_diff(&counts);

    let mut evidence = Evidence::new();
    for (measure, v) in &observations.values {
        let node = measure_node_id(measure);
        if net.node(&node).is_some() {
            evidence.set(node, v.state_index());
        }
    }

    let metric_node = plan.metric_node.node_id();
    let posteriors = net
        .nodes()
        .iter()
        .filter(|n| n.kind != NodeKind::Measure)
        .map(|n| query_marginal(&net, &evidence, &n.id))
        .collect::<Result<Vec<_>, _>>()
        .map_err(AssessError::Inference)?;
    let density = posteriors
        .iter()
        .find(|p| p.node == metric_node)
        .expect("metric node is derived");
    let density_mean = density.mean.expect("metric node has a scale");
    let density_sd = density.sd.expect("metric node has a scale");

    let mut caveats = Vec::new();
    if observations.yes_count() == 0 {
        caveats.push("no scanner findings mapped to any measure; all observations are `no`".into());
    }
    caveats.push(
        "findings were not checked for false positives; see the scanner agreement matrix".into(),
    );
    if agreement.single_scanner > 0 {
        caveats.push(format!(
            "{} of {} class detections were reported by a single scanner",
            agreement.single_scanner,
            agreement.single_scanner + agreement.multi_scanner
        ));
    }
    if !counts.unresolved.is_empty() {
        caveats.push(format!(
            "{} findings had classes outside the taxonomy and were ignored",
            counts.unresolved.len()
        ));
    }

    let names = display_names(model, plan);
    let annotated = posteriors
        .iter()
        .map(|p| annotate(&net, &map, &names, p))
        .collect();

    let report = AssessmentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        goal: model.goal.clone(),
        question: model.question.clone(),
        metric: model.metric.clone(),
        system: system.clone(),
        observations,
        metric_node,
        posteriors: annotated,
        density_mean,
        density_sd,
        expected_vuln_count: density_mean * system.sloc as f64 / 1000.0,
        scanner_agreement: agreement,
        unresolved_findings: counts.unresolved.len(),
        caveats,
        timestamp,
    };

    Ok(Assessment {
        net: Arc::new(net),
        map: Arc::new(map),
        names: Arc::new(names),
        evidence,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

pub fn emit_report(report: &AssessmentReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Text => render_text(report),
    }
}

fn render_text(r: &AssessmentReport) -> String {
    let mut out = String::new();
    let s = &r.system;
    let _ = writeln!(
        out,
        "Quality assessment of {} {} ({}, {} SLOC)",
        s.name, s.version, s.language, s.sloc
    );
    let _ = writeln!(out, "Generated {}", r.timestamp);
    let _ = writeln!(out);
    let _ = writeln!(out, "Goal:     {}", r.goal);
    let _ = writeln!(out, "Question: {}", r.question);
    let _ = writeln!(out, "Metric:   {}", r.metric);
    let _ = writeln!(out);
    let metric_name = r
        .posterior(&r.metric_node)
        .map_or(r.metric_node.as_str(), |p| p.name.as_str());
    let _ = writeln!(
        out,
        "{metric_name}: mean {:.4}, sd {:.4}",
        r.density_mean, r.density_sd
    );
    let _ = writeln!(
        out,
        "Expected vulnerabilities: {:.3} ({:.3} KSLOC)",
        r.expected_vuln_count,
        s.ksloc()
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Measure observations (yes if any scanner reported the class):"
    );
    for (m, v) in &r.observations.values {
        let _ = writeln!(out, "  {m:<28} {}", v.as_str());
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Scanner agreement:");
    for (scanner, n) in &r.scanner_agreement.scanner_totals {
        let _ = writeln!(out, "  {scanner:<28} {n} class detections");
    }
    for (system, classes) in &r.scanner_agreement.systems {
        for (class, scanners) in classes {
            let _ = writeln!(out, "  {system}/{class}: {}", scanners.join(", "));
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Caveats:");
    for c in &r.caveats {
        let _ = writeln!(out, "  - {c}");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Posteriors:");
    for p in &r.posteriors {
        if p.kind == NodeKind::Metric {
            continue;
        }
        let dist: Vec<String> = p
            .states
            .iter()
            .zip(&p.probabilities)
            .map(|(s, q)| format!("{s} {q:.3}"))
            .collect();
        let _ = writeln!(out, "  {:<40} {}", p.name, dist.join("  "));
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum WhatIfError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{node}` has no state `{state}`")]
    UnknownState { node: String, state: String },
    #[error(transparent)]
    Inference(#[from] BayesError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "state")]
pub enum Override {
    /// Hypothetical observation of the given state.
    Observe(usize),
    /// Drop the base observation of this node.
    Retract,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WhatIfChange {
    Set { node: String, state: usize },
    Retract { node: String },
    Clear { node: String },
    ClearAll,
}

/// Base evidence of one assessment plus hypothetical overrides.
#[derive(Debug, Clone)]
pub struct WhatIfSession {
    pub id: String,
    net: Arc<BayesNet>,
    base: Evidence,
    overrides: BTreeMap<String, Override>,
}

impl WhatIfSession {
    pub fn new(id: impl Into<String>, net: Arc<BayesNet>, base: Evidence) -> Self {
        Self {
            id: id.into(),
            net,
            base,
            overrides: BTreeMap::new(),
        }
    }

    pub fn net(&self) -> &BayesNet {
        &self.net
    }

    pub fn base(&self) -> &Evidence {
        &self.base
    }

    pub fn overrides(&self) -> &BTreeMap<String, Override> {
        &self.overrides
    }

    /// Build a `Set` change from a state label.
    pub fn set_by_label(&self, node: &str, label: &str) -> Result<WhatIfChange, WhatIfError> {
        let n = self
            .net
            .node(node)
            .ok_or_else(|| WhatIfError::UnknownNode(node.to_string()))?;
        let state = n
            .state_index(label)
            .ok_or_else(|| WhatIfError::UnknownState {
                node: node.to_string(),
                state: label.to_string(),
            })?;
        Ok(WhatIfChange::Set {
            node: node.to_string(),
            state,
        })
    }

    pub fn evidence(&self) -> Evidence {
        Self::merge(&self.base, &self.overrides)
    }

    fn merge(base: &Evidence, overrides: &BTreeMap<String, Override>) -> Evidence {
        let mut ev = base.clone();
        for (node, o) in overrides {
            match o {
                Override::Observe(s) => ev.set(node.clone(), *s),
                Override::Retract => {
                    ev.remove(node);
                }
            }
        }
        ev
    }

    pub fn posteriors(&self) -> Result<Vec<Posterior>, WhatIfError> {
        Ok(query_all(&self.net, &self.evidence())?)
    }

    /// Apply `change` and return the posteriors of every node. On error the
    /// session is left as it was.
    pub fn apply(&mut self, change: WhatIfChange) -> Result<Vec<Posterior>, WhatIfError> {
        let mut next = self.overrides.clone();
        match change {
            WhatIfChange::Set { node, state } => {
                let n = self
                    .net
                    .node(&node)
                    .ok_or_else(|| WhatIfError::UnknownNode(node.clone()))?;
                if state >= n.states.len() {
                    return Err(WhatIfError::UnknownState {
                        node,
                        state: state.to_string(),
                    });
                }
                next.insert(node, Override::Observe(state));
            }
            WhatIfChange::Retract { node } => {
                self.check_node(&node)?;
                next.insert(node, Override::Retract);
            }
            WhatIfChange::Clear { node } => {
                self.check_node(&node)?;
                next.remove(&node);
            }
            WhatIfChange::ClearAll => next.clear(),
        }
        let posteriors = query_all(&self.net, &Self::merge(&self.base, &next))?;
        self.overrides = next;
        Ok(posteriors)
    }

    fn check_node(&self, node: &str) -> Result<(), WhatIfError> {
        self.net
            .node(node)
            .map(|_| ())
            .ok_or_else(|| WhatIfError::UnknownNode(node.to_string()))
    }
}

pub fn what_if(
    session: &mut WhatIfSession,
    change: WhatIfChange,
) -> Result<Vec<Posterior>, WhatIfError> {
    session.apply(change)
}
