//! Fixture loading and independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use qa_core::bayes::{BayesNet, Evidence};
use qa_core::{
    assess, parse_model, parse_report, Assessment, AssessmentPlan, FindingsReport, QualityModel,
    SystemDescriptor, VulnTaxonomy,
};

pub const SYSTEMS: [&str; 2] = ["phpshop", "zencart"];
pub const SCANNERS: [&str; 3] = ["w3af", "wapiti", "grendel"];
pub const FIXED_TIMESTAMP: &str = "2000-01-01T00:00:00Z";
pub const MASKED_TIMESTAMP: &str = "<masked>";

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn read_fixture(name: &str) -> String {
    let path = fixtures_dir().join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn model() -> QualityModel {
    parse_model(&read_fixture("casestudy.qm.json")).expect("fixture model")
}

pub fn plan() -> AssessmentPlan {
    AssessmentPlan::from_json(&read_fixture("casestudy.plan.json")).expect("fixture plan")
}

pub fn taxonomy() -> VulnTaxonomy {
    VulnTaxonomy::from_json(&read_fixture("taxonomy.json")).expect("fixture taxonomy")
}

pub fn system(id: &str) -> SystemDescriptor {
    SystemDescriptor::from_json(&read_fixture(&format!("{id}.system.json")))
        .expect("fixture system")
}

pub fn reports_for(id: &str) -> Vec<FindingsReport> {
    SCANNERS
        .iter()
        .map(|s| {
            parse_report(
                &read_fixture(&format!("{id}.{s}.findings.json")),
                "normalized",
            )
            .expect("fixture findings")
        })
        .collect()
}

pub fn all_reports() -> Vec<FindingsReport> {
    SYSTEMS.iter().flat_map(|s| reports_for(s)).collect()
}

pub fn assessment(id: &str) -> Assessment {
    assess(
        &model(),
        &plan(),
        &reports_for(id),
        &taxonomy(),
        &system(id),
        FIXED_TIMESTAMP.to_string(),
    )
    .expect("fixture assessment")
}

/// Report JSON with the timestamp replaced, for golden comparison.
pub fn masked(document: &str) -> String {
    let mut value: serde_json::Value = serde_json::from_str(document).expect("report json");
    value["timestamp"] = serde_json::Value::String(MASKED_TIMESTAMP.into());
    let mut out = serde_json::to_string_pretty(&value).expect("serialize");
    out.push('\n');
    out
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n.is_multiple_of(2) && n > 0);
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

pub fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// CDF of Normal(mu, sigma) truncated to [0, 1], by quadrature alone.
pub fn simpson_tnormal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    let f = |t: f64| normal_pdf(t, mu, sigma);
    // Panel count scales with how peaked the density is on [0, 1].
    let n = ((2000.0 / sigma).ceil() as usize).clamp(2000, 200_000) & !1;
    let total = simpson(f, 0.0, 1.0, n);
    let part = simpson(f, 0.0, x, n);
    part / total
}

/// Brute-force posterior: sum the full joint over every assignment of every
/// node, with no pruning or factor algebra.
pub fn brute_force_marginal(net: &BayesNet, evidence: &Evidence, target: &str) -> Vec<f64> {
    let nodes = net.nodes();
    let cards: Vec<usize> = nodes.iter().map(|n| n.states.len()).collect();
    let parent_idx: Vec<Vec<usize>> = nodes
        .iter()
        .map(|n| n.parents.iter().map(|p| net.index_of(p).unwrap()).collect())
        .collect();
    let t = net.index_of(target).expect("target");
    let mut out = vec![0.0; cards[t]];
    let mut assignment = vec![0usize; nodes.len()];
    loop {
        let consistent = nodes
            .iter()
            .enumerate()
            .all(|(i, n)| evidence.get(&n.id).is_none_or(|s| s == assignment[i]));
        if consistent {
            let mut p = 1.0;
            for (i, n) in nodes.iter().enumerate() {
                let ps: Vec<usize> = parent_idx[i].iter().map(|&j| assignment[j]).collect();
                p *= n.npt.row(&ps)[assignment[i]];
            }
            out[assignment[t]] += p;
        }
        let mut i = 0;
        loop {
            if i == nodes.len() {
                let z: f64 = out.iter().sum();
                return out.iter().map(|v| v / z).collect();
            }
            assignment[i] += 1;
            if assignment[i] < cards[i] {
                break;
            }
            assignment[i] = 0;
            i += 1;
        }
    }
}

/// A random net of up to `max_nodes` nodes with 2..=`max_states` states,
/// at most three parents per node, and strictly positive rows.
pub fn random_net(rng: &mut impl rand::Rng, max_nodes: usize, max_states: usize) -> BayesNet {
    use qa_core::bayes::{build_net, Node, NodeKind};
    use qa_core::nptgen::Npt;

    let n = rng.gen_range(1..=max_nodes);
    let cards: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=max_states)).collect();
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let mut parents: Vec<usize> = (0..i).filter(|_| rng.gen_bool(0.4)).collect();
        parents.truncate(3);
        let parent_cards: Vec<usize> = parents.iter().map(|&p| cards[p]).collect();
        let row_count: usize = parent_cards.iter().product();
        let rows = (0..row_count)
            .map(|_| {
                let raw: Vec<f64> = (0..cards[i]).map(|_| rng.gen_range(0.01..1.0)).collect();
                let z: f64 = raw.iter().sum();
                raw.iter().map(|v| v / z).collect()
            })
            .collect();
        nodes.push(Node {
            id: format!("n{i}"),
            kind: NodeKind::Activity,
            states: (0..cards[i]).map(|s| format!("s{s}")).collect(),
            scale: None,
            parents: parents.iter().map(|p| format!("n{p}")).collect(),
            npt: Npt::new(cards[i], parent_cards, rows).expect("normalized rows"),
        });
    }
    // Shuffle declaration order so the net has to sort itself.
    for i in (1..nodes.len()).rev() {
        let j = rng.gen_range(0..=i);
        nodes.swap(i, j);
    }
    build_net(nodes).expect("acyclic by construction")
}

/// Observe a random subset of nodes, excluding none in particular.
pub fn random_evidence(rng: &mut impl rand::Rng, net: &BayesNet) -> Evidence {
    let mut ev = Evidence::new();
    for node in net.nodes() {
        if rng.gen_bool(0.3) {
            ev.set(node.id.clone(), rng.gen_range(0..node.states.len()));
        }
    }
    ev
}
