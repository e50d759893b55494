//! Scanner findings: report ingestion, classification against a
//! vulnerability taxonomy, and pessimistic yes/no voting per measure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qmodel::{MeasureKind, QualityModel};

#[derive(Debug, Error, PartialEq)]
pub enum FindingsError {
    #[error("malformed findings document: {0}")]
    Malformed(String),
    #[error("unknown report adapter `{0}`")]
    UnknownAdapter(String),
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
    #[error("class `{class}` has findings for `{system}` but maps to no measure; map it or mark it unattributable")]
    UnmappedClass { class: String, system: String },
    #[error(
        "class `{class}` maps to `{measure}`, which is not a scanner-finding measure of the model"
    )]
    UnknownMeasure { class: String, measure: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub scanner: String,
    #[serde(rename = "class")]
    pub vuln_class: String,
    #[serde(default)]
    pub location: String,
    #[serde(default)]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingsReport {
    pub scanner: String,
    pub system: String,
    pub findings: Vec<Finding>,
}

/// Turns one scanner's native output into a [`FindingsReport`].
pub trait ReportAdapter: Send + Sync {
    fn id(&self) -> &str;
    fn parse(&self, document: &str) -> Result<FindingsReport, FindingsError>;
}

/// The canonical JSON findings format.
#[derive(Debug, Default)]
pub struct NormalizedAdapter;

#[derive(Deserialize)]
struct NormalizedDoc {
    scanner: String,
    system: String,
    findings: Vec<NormalizedFinding>,
}

#[derive(Deserialize)]
struct NormalizedFinding {
    class: String,
    #[serde(default)]
    location: String,
    #[serde(default)]
    detail: String,
}

impl ReportAdapter for NormalizedAdapter {
    fn id(&self) -> &str {
        "normalized"
    }

    fn parse(&self, document: &str) -> Result<FindingsReport, FindingsError> {
        let doc: NormalizedDoc =
            serde_json::from_str(document).map_err(|e| FindingsError::Malformed(e.to_string()))?;
        if doc.scanner.trim().is_empty() {
            return Err(FindingsError::Malformed("empty `scanner`".into()));
        }
        if doc.system.trim().is_empty() {
            return Err(FindingsError::Malformed("empty `system`".into()));
        }
        let findings = doc
            .findings
            .into_iter()
            .enumerate()
            .map(|(i, f)| {
                if f.class.trim().is_empty() {
                    return Err(FindingsError::Malformed(format!(
                        "finding {i} has an empty `class`"
                    )));
                }
                Ok(Finding {
                    scanner: doc.scanner.clone(),
                    vuln_class: f.class,
                    location: f.location,
                    detail: f.detail,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(FindingsReport {
            scanner: doc.scanner,
            system: doc.system,
            findings,
        })
    }
}

pub struct AdapterRegistry {
    adapters: BTreeMap<String, Box<dyn ReportAdapter>>,
}

impl fmt::Debug for AdapterRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.adapters.keys()).finish()
    }
}

impl AdapterRegistry {
    pub fn empty() -> Self {
        Self {
            adapters: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(NormalizedAdapter));
        r
    }

    /// Adds an adapter, replacing any previous one with the same id.
    pub fn register(&mut self, adapter: Box<dyn ReportAdapter>) {
        self.adapters.insert(adapter.id().to_string(), adapter);
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.adapters.keys().map(String::as_str)
    }

    pub fn parse(&self, document: &str, adapter: &str) -> Result<FindingsReport, FindingsError> {
        let a = self
            .adapters
            .get(adapter)
            .ok_or_else(|| FindingsError::UnknownAdapter(adapter.to_string()))?;
        let report = a.parse(document)?;
        if let Some(f) = report.findings.iter().find(|f| f.scanner != report.scanner) {
            return Err(FindingsError::Malformed(format!(
                "finding from `{}` in a `{}` report",
                f.scanner, report.scanner
            )));
        }
        Ok(report)
    }
}

impl Default for AdapterRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

/// Parse with the built-in adapters.
pub fn parse_report(document: &str, adapter: &str) -> Result<FindingsReport, FindingsError> {
    AdapterRegistry::with_builtins().parse(document, adapter)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnClass {
    pub id: String,
    pub name: String,
    pub attributable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VulnTaxonomy {
    pub classes: Vec<VulnClass>,
}

impl VulnTaxonomy {
    pub fn new(classes: Vec<VulnClass>) -> Result<Self, FindingsError> {
        let mut seen = BTreeSet::new();
        for c in &classes {
            if !seen.insert(c.id.as_str()) {
                return Err(FindingsError::Taxonomy(format!(
                    "duplicate class id `{}`",
                    c.id
                )));
            }
        }
        Ok(Self { classes })
    }

    pub fn from_json(document: &str) -> Result<Self, FindingsError> {
        let classes: Vec<VulnClass> =
            serde_json::from_str(document).map_err(|e| FindingsError::Taxonomy(e.to_string()))?;
        Self::new(classes)
    }

    pub fn class(&self, id: &str) -> Option<&VulnClass> {
        self.classes.iter().find(|c| c.id == id)
    }

    /// Every measure mapping must name a scanner-finding measure of `model`.
    pub fn check_against(&self, model: &QualityModel) -> Result<(), FindingsError> {
        for c in &self.classes {
            if let Some(m) = &c.measure {
                let ok = model
                    .measure(m)
                    .is_some_and(|m| m.kind == MeasureKind::ScannerFinding);
                if !ok {
                    return Err(FindingsError::UnknownMeasure {
                        class: c.id.clone(),
                        measure: m.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedFinding {
    pub system: String,
    pub finding: Finding,
}

/// Finding counts per system, class and scanner.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedCounts {
    /// Every scanner that contributed a report, including silent ones.
    pub scanners: BTreeSet<String>,
    pub systems: BTreeSet<String>,
    pub counts: BTreeMap<String, BTreeMap<String, BTreeMap<String, usize>>>,
    /// Findings whose class is not in the taxonomy.
    pub unresolved: Vec<UnresolvedFinding>,
}

impl ClassifiedCounts {
    pub fn count(&self, system: &str, class: &str, scanner: &str) -> usize {
        self.counts
            .get(system)
            .and_then(|c| c.get(class))
            .and_then(|s| s.get(scanner))
            .copied()
            .unwrap_or(0)
    }

    pub fn class_total(&self, system: &str, class: &str) -> usize {
        self.counts
            .get(system)
            .and_then(|c| c.get(class))
            .map_or(0, |s| s.values().sum())
    }

    pub fn counted_total(&self) -> usize {
        self.counts
            .values()
            .flat_map(|c| c.values())
            .flat_map(|s| s.values())
            .sum()
    }
}

pub fn classify(reports: &[FindingsReport], taxonomy: &VulnTaxonomy) -> ClassifiedCounts {
    let mut out = ClassifiedCounts::default();
    for report in reports {
        out.scanners.insert(report.scanner.clone());
        out.systems.insert(report.system.clone());
        for f in &report.findings {
            if taxonomy.class(&f.vuln_class).is_some() {
                *out.counts
                    .entry(report.system.clone())
                    .or_default()
                    .entry(f.vuln_class.clone())
                    .or_default()
                    .entry(f.scanner.clone())
                    .or_default() += 1;
            } else {
                out.unresolved.push(UnresolvedFinding {
                    system: report.system.clone(),
                    finding: f.clone(),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vote {
    No,
    Yes,
}

impl Vote {
    /// Index of the matching measure-node state (`no` = 0, `yes` = 1).
    pub fn state_index(self) -> usize {
        match self {
            Vote::No => 0,
            Vote::Yes => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Vote::No => "no",
            Vote::Yes => "yes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub system: String,
    pub values: BTreeMap<String, Vote>,
}

impl ObservationSet {
    pub fn yes_count(&self) -> usize {
        self.values.values().filter(|v| **v == Vote::Yes).count()
    }
}

/// A measure is `yes` as soon as any scanner reports a finding of a class
/// mapped to it; classes marked unattributable never vote.
pub fn vote(
    counts: &ClassifiedCounts,
    taxonomy: &VulnTaxonomy,
    model: &QualityModel,
    system: &str,
) -> Result<ObservationSet, FindingsError> {
    let mut values: BTreeMap<String, Vote> = model
        .scanner_measures()
        .map(|m| (m.id.clone(), Vote::No))
        .collect();

    if let Some(classes) = counts.counts.get(system) {
        for (class_id, by_scanner) in classes {
            if by_scanner.values().sum::<usize>() == 0 {
                continue;
            }
            let class = taxonomy.class(class_id).ok_or_else(|| {
                FindingsError::Taxonomy(format!("class `{class_id}` not in taxonomy"))
            })?;
            if !class.attributable {
                continue;
            }
            let measure = class
                .measure
                .as_ref()
                .ok_or_else(|| FindingsError::UnmappedClass {
                    class: class_id.clone(),
                    system: system.to_string(),
                })?;
            match values.get_mut(measure) {
                Some(v) => *v = Vote::Yes,
                None => {
                    return Err(FindingsError::UnknownMeasure {
                        class: class_id.clone(),
                        measure: measure.clone(),
                    })
                }
            }
        }
    }
    Ok(ObservationSet {
        system: system.to_string(),
        values,
    })
}

/// Which scanners found which classes, per system.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgreementMatrix {
    pub systems: BTreeMap<String, BTreeMap<String, Vec<String>>>,
    /// Number of (system, class) pairs each scanner reported.
    pub scanner_totals: BTreeMap<String, usize>,
    /// (system, class) pairs reported by exactly one scanner.
    pub single_scanner: usize,
    /// (system, class) pairs reported by two or more scanners.
    pub multi_scanner: usize,
}

impl AgreementMatrix {
    pub fn scanners_for(&self, system: &str, class: &str) -> &[String] {
        self.systems
            .get(system)
            .and_then(|c| c.get(class))
            .map_or(&[], Vec::as_slice)
    }

    /// The single scanner that found `class` on `system`, if only one did.
    pub fn unique_to(&self, system: &str, class: &str) -> Option<&str> {
        match self.scanners_for(system, class) {
            [only] => Some(only.as_str()),
            _ => None,
        }
    }
}

pub fn scanner_diff(counts: &ClassifiedCounts) -> AgreementMatrix {
    let mut m = AgreementMatrix::default();
    for s in &counts.scanners {
        m.scanner_totals.insert(s.clone(), 0);
    }
    for (system, classes) in &counts.counts {
        for (class, by_scanner) in classes {
            let found: Vec<String> = by_scanner
                .iter()
                .filter(|(_, n)| **n > 0)
                .map(|(s, _)| s.clone())
                .collect();
            if found.is_empty() {
                continue;
            }
            for s in &found {
                *m.scanner_totals.entry(s.clone()).or_default() += 1;
            }
            if found.len() == 1 {
                m.single_scanner += 1;
            } else {
                m.multi_scanner += 1;
            }
            m.systems
                .entry(system.clone())
                .or_default()
                .insert(class.clone(), found);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(scanner: &str, system: &str, classes: &[&str]) -> FindingsReport {
        FindingsReport {
            scanner: scanner.into(),
            system: system.into(),
            findings: classes
                .iter()
                .map(|c| Finding {
                    scanner: scanner.into(),
                    vuln_class: c.to_string(),
                    location: "/".into(),
                    detail: String::new(),
                })
                .collect(),
        }
    }

    fn taxonomy() -> VulnTaxonomy {
        VulnTaxonomy::new(vec![
            VulnClass {
                id: "sqli".into(),
                name: "SQL".into(),
                attributable: true,
                measure: Some("sqli".into()),
            },
            VulnClass {
                id: "noise".into(),
                name: "Noise".into(),
                attributable: false,
                measure: None,
            },
            VulnClass {
                id: "loose".into(),
                name: "Loose".into(),
                attributable: true,
                measure: None,
            },
        ])
        .unwrap()
    }

    #[test]
    fn normalized_parse() {
        let doc = r#"{"scanner":"w3af","system":"shop","findings":[
            {"class":"sqli","location":"/a","detail":"x"},{"class":"new-thing"}]}"#;
        let r = parse_report(doc, "normalized").unwrap();
        assert_eq!(r.findings.len(), 2);
        assert_eq!(r.findings[1].vuln_class, "new-thing");
        assert!(r.findings.iter().all(|f| f.scanner == "w3af"));
    }

    #[test]
    fn empty_findings_ok() {
        let r = parse_report(
            r#"{"scanner":"wapiti","system":"s","findings":[]}"#,
            "normalized",
        )
        .unwrap();
        assert!(r.findings.is_empty());
    }

    #[test]
    fn missing_scanner_is_malformed() {
        let err = parse_report(r#"{"system":"s","findings":[]}"#, "normalized").unwrap_err();
        assert!(matches!(err, FindingsError::Malformed(m) if m.contains("scanner")));
    }

    #[test]
    fn unknown_adapter() {
        assert_eq!(
            parse_report("{}", "nessus"),
            Err(FindingsError::UnknownAdapter("nessus".into()))
        );
    }

    #[test]
    fn custom_adapter_registration() {
        struct Lines;
        impl ReportAdapter for Lines {
            fn id(&self) -> &str {
                "lines"
            }
            fn parse(&self, document: &str) -> Result<FindingsReport, FindingsError> {
                Ok(report(
                    "lines",
                    "sys",
                    &document.lines().collect::<Vec<_>>(),
                ))
            }
        }
        let mut reg = AdapterRegistry::with_builtins();
        reg.register(Box::new(Lines));
        assert_eq!(reg.ids().collect::<Vec<_>>(), vec!["lines", "normalized"]);
        assert_eq!(reg.parse("a\nb", "lines").unwrap().findings.len(), 2);
    }

    #[test]
    fn unresolved_findings_are_kept() {
        let counts = classify(
            &[report("a", "s", &["sqli", "mystery", "sqli"])],
            &taxonomy(),
        );
        assert_eq!(counts.count("s", "sqli", "a"), 2);
        assert_eq!(counts.unresolved.len(), 1);
        assert_eq!(counts.unresolved[0].finding.vuln_class, "mystery");
        assert_eq!(counts.counted_total() + counts.unresolved.len(), 3);
    }

    #[test]
    fn unmapped_attributable_class_is_an_error() {
        let counts = classify(&[report("a", "s", &["loose"])], &taxonomy());
        let model = crate::qmodel::QualityModel {
            goal: String::new(),
            question: String::new(),
            metric: String::new(),
            entities: vec![],
            activities: vec![],
            factors: vec![],
            impacts: vec![],
            measures: vec![],
        };
        assert_eq!(
            vote(&counts, &taxonomy(), &model, "s"),
            Err(FindingsError::UnmappedClass {
                class: "loose".into(),
                system: "s".into()
            })
        );
    }

    #[test]
    fn duplicate_taxonomy_ids() {
        let doc = r#"[{"id":"x","name":"X","attributable":true},{"id":"x","name":"Y","attributable":false}]"#;
        assert!(matches!(
            VulnTaxonomy::from_json(doc),
            Err(FindingsError::Taxonomy(_))
        ));
    }

    #[test]
    fn single_report_diff() {
        let counts = classify(&[report("a", "s", &["sqli", "noise", "sqli"])], &taxonomy());
        let diff = scanner_diff(&counts);
        assert_eq!(diff.single_scanner, 2);
        assert_eq!(diff.multi_scanner, 0);
        assert_eq!(diff.scanner_totals["a"], 2);
        assert_eq!(diff.unique_to("s", "sqli"), Some("a"));
    }
}
