//! Shipped JSON Schemas agree with what the library reads and writes.

mod common;

use common::*;
use qa_core::assess::ReportFormat;
use qa_core::emit_report;
use serde_json::Value;

fn schema(name: &str) -> jsonschema::Validator {
    let path = fixtures_dir().join("../docs").join(name);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&doc).expect("valid schema")
}

fn check(v: &jsonschema::Validator, doc: &Value) {
    let errors: Vec<String> = v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn fixture_model_conforms() {
    let doc: Value = serde_json::from_str(&read_fixture("casestudy.qm.json")).unwrap();
    check(&schema("model-schema.json"), &doc);
    let reserialized: Value = serde_json::from_str(&qa_core::serialize_model(&model())).unwrap();
    check(&schema("model-schema.json"), &reserialized);
}

#[test]
fn emitted_and_golden_reports_conform() {
    let v = schema("report-schema.json");
    for id in SYSTEMS {
        let emitted: Value = serde_json::from_str(&emit_report(&assessment(id).report, ReportFormat::Json)).unwrap();
        check(&v, &emitted);
        let golden: Value = serde_json::from_str(&read_fixture(&format!("{id}.report.json"))).unwrap();
        check(&v, &golden);
    }
}

#[test]
fn schema_rejects_a_bad_report() {
    let mut doc: Value = serde_json::from_str(&read_fixture("phpshop.report.json")).unwrap();
    doc["observations"]["values"]["sql-injection"] = "maybe".into();
    assert!(!schema("report-schema.json").is_valid(&doc));
}
