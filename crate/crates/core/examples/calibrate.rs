//! Prints density posteriors for the fixture bundle under every
//! observation pattern. Used to check a calibration before freezing it.
//!
//! cargo run -p qa-core --release --example calibrate -- [fixtures-dir]

use std::path::{Path, PathBuf};

use qa_core::{
    derive_net, parse_model, query_marginal, AssessmentPlan, Evidence, SystemDescriptor,
};

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures"));
    let model = parse_model(&read(&dir, "casestudy.qm.json")).expect("model");
    let plan = AssessmentPlan::from_json(&read(&dir, "casestudy.plan.json")).expect("plan");
    let (net, _) = derive_net(&model, &plan).expect("derive");
    let metric = plan.metric_node.node_id();
    let measures: Vec<String> = model
        .scanner_measures()
        .map(|m| format!("m.{}", m.id))
        .collect();

    for sys in ["phpshop", "zencart"] {
        let d = SystemDescriptor::from_json(&read(&dir, &format!("{sys}.system.json"))).unwrap();
        println!("{} sloc={}", d.name, d.sloc);
    }
    println!("pattern ({})", measures.join(" "));
    for bits in 0..(1u32 << measures.len()) {
        let mut ev = Evidence::new();
        for (i, m) in measures.iter().enumerate() {
            ev.set(m, ((bits >> i) & 1) as usize);
        }
        let p = query_marginal(&net, &ev, &metric).expect("query");
        println!(
            "{:0width$b}  mean={:.6} sd={:.6}",
            bits,
            p.mean.unwrap_or(f64::NAN),
            p.sd.unwrap_or(f64::NAN),
            width = measures.len()
        );
    }
}
