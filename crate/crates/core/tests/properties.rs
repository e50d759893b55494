//! Property tests for the invariants the engine relies on.

mod common;

use common::*;
use proptest::prelude::*;
use qa_core::bayes::{query_marginal, Evidence};
use qa_core::findings::{Finding, FindingsReport, Vote};
use qa_core::nptgen::{
    arithmetic_npt, partitioned_npt, ranked_npt, tnormal_cdf, AffineExpr, BinScale, Npt,
    RankedScale, WmeanSpec, ROW_TOLERANCE,
};
use qa_core::qmodel::{decode_model, Polarity};
use qa_core::{classify, parse_model, serialize_model, vote};
use rand::rngs::StdRng;
use rand::SeedableRng;

fn rows_normalized(npt: &Npt) -> bool {
    npt.rows().iter().all(|r| {
        (r.iter().sum::<f64>() - 1.0).abs() <= ROW_TOLERANCE && r.iter().all(|p| *p >= 0.0)
    })
}

fn expectation(row: &[f64], scale: &RankedScale) -> f64 {
    row.iter().zip(scale.midpoints()).map(|(p, m)| p * m).sum()
}

fn wmean_case() -> impl Strategy<Value = (Vec<usize>, usize, Vec<f64>, Vec<bool>, f64)> {
    (1usize..=3, 2usize..=5, 0.02f64..1.0).prop_flat_map(|(n, k, sigma)| {
        (
            prop::collection::vec(2usize..=5, n),
            Just(k),
            prop::collection::vec(0.1f64..10.0, n),
            prop::collection::vec(any::<bool>(), n),
            Just(sigma),
        )
    })
}

fn build(
    cards: &[usize],
    k: usize,
    weights: &[f64],
    neg: &[bool],
    sigma: f64,
) -> (Vec<RankedScale>, RankedScale, Npt) {
    let parents: Vec<RankedScale> = cards
        .iter()
        .map(|&c| RankedScale::new(c).unwrap())
        .collect();
    let child = RankedScale::new(k).unwrap();
    let polarities = neg
        .iter()
        .map(|&n| {
            if n {
                Polarity::Negative
            } else {
                Polarity::Positive
            }
        })
        .collect();
    let spec = WmeanSpec::new(weights.to_vec(), polarities, sigma);
    let npt = ranked_npt(&parents, &child, &spec).unwrap();
    (parents, child, npt)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn tnormal_cdf_is_monotone_and_bounded(
        a in -0.2f64..1.2, b in -0.2f64..1.2, mu in -1.0f64..2.0, sigma in 0.001f64..5.0
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let f_lo = tnormal_cdf(lo, mu, sigma).unwrap();
        let f_hi = tnormal_cdf(hi, mu, sigma).unwrap();
        prop_assert!((0.0..=1.0).contains(&f_lo) && (0.0..=1.0).contains(&f_hi));
        prop_assert!(f_lo <= f_hi + 1e-15);
    }

    #[test]
    fn ranked_rows_are_normalized((cards, k, w, neg, sigma) in wmean_case()) {
        let (_, _, npt) = build(&cards, k, &w, &neg, sigma);
        prop_assert!(rows_normalized(&npt));
    }

    /// Raising one parent by a state moves the child's expectation with the
    /// parent's polarity and never against it.
    #[test]
    fn ranked_expectation_follows_polarity((cards, k, w, neg, sigma) in wmean_case()) {
        let (_, child, npt) = build(&cards, k, &w, &neg, sigma);
        for combo in npt.combos() {
            for (p, &card) in cards.iter().enumerate() {
                if combo[p] + 1 >= card {
                    continue;
                }
                let mut up = combo.clone();
                up[p] += 1;
                let before = expectation(npt.row(&combo), &child);
                let after = expectation(npt.row(&up), &child);
                if neg[p] {
                    prop_assert!(after <= before + 1e-12);
                } else {
                    prop_assert!(after >= before - 1e-12);
                }
            }
        }
    }

    /// Mirroring every parent state mirrors the child row.
    #[test]
    fn ranked_rows_are_palindromic((cards, k, w, neg, sigma) in wmean_case()) {
        let (_, _, npt) = build(&cards, k, &w, &neg, sigma);
        for combo in npt.combos() {
            let mirror: Vec<usize> = combo.iter().zip(&cards).map(|(s, c)| c - 1 - s).collect();
            let a = npt.row(&combo);
            let b = npt.row(&mirror);
            for j in 0..k {
                prop_assert!((a[j] - b[k - 1 - j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn partitioned_rows_are_normalized_and_decreasing(k in 2usize..=7, eps in 0.001f64..=0.5) {
        let npt = partitioned_npt(&RankedScale::new(k).unwrap(), eps).unwrap();
        prop_assert!(rows_normalized(&npt));
        for i in 1..k {
            prop_assert!(npt.row(&[i])[1] <= npt.row(&[i - 1])[1]);
        }
        prop_assert!((npt.row(&[0])[1] - (1.0 - eps)).abs() < 1e-12);
        prop_assert!((npt.row(&[k - 1])[1] - eps).abs() < 1e-12);
    }

    #[test]
    fn arithmetic_rows_are_normalized(
        k in 2usize..=5, bins in 2usize..=60, hi in 0.001f64..10.0,
        offset in -1.0f64..1.0, scale in -5.0f64..5.0, sigma in 1e-4f64..2.0
    ) {
        let target = BinScale::new(0.0, hi, bins).unwrap();
        let npt = arithmetic_npt(&RankedScale::new(k).unwrap(), &target, AffineExpr { offset, scale }, sigma).unwrap();
        prop_assert!(rows_normalized(&npt));
    }

    /// Adding findings can turn a vote to yes but never back to no, and the
    /// order in which reports and findings arrive does not matter.
    #[test]
    fn voting_is_monotone_and_order_free(
        extra in prop::collection::vec((0usize..6, 0usize..3), 0..12),
        seed in any::<u64>()
    ) {
        let classes = ["duplicate-session-id", "potential-csrf", "sql-injection", "code-comments", "io-flows", "unidentified"];
        let scanners = ["w3af", "Wapiti", "Grendel Scan"];
        let (m, t) = (model(), taxonomy());
        let base = reports_for("phpshop");
        let mut more = base.clone();
        for (c, s) in &extra {
            more.push(FindingsReport {
                scanner: scanners[*s].into(),
                system: "phpshop".into(),
                findings: vec![Finding {
                    scanner: scanners[*s].into(),
                    vuln_class: classes[*c].into(),
                    location: String::new(),
                    detail: String::new(),
                }],
            });
        }
        let before = vote(&classify(&base, &t), &t, &m, "phpshop").unwrap();
        let after = vote(&classify(&more, &t), &t, &m, "phpshop").unwrap();
        for (k, v) in &before.values {
            prop_assert!(!(*v == Vote::Yes && after.values[k] == Vote::No));
        }

        let mut shuffled = more.clone();
        let mut rng = StdRng::seed_from_u64(seed);
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng);
        for r in &mut shuffled {
            r.findings.shuffle(&mut rng);
        }
        let again = vote(&classify(&shuffled, &t), &t, &m, "phpshop").unwrap();
        prop_assert_eq!(after, again);
    }

    /// Every finding is either counted or listed as unresolved.
    #[test]
    fn classify_conserves_findings(
        picks in prop::collection::vec((0usize..8, 0usize..2), 0..30)
    ) {
        let classes = ["duplicate-session-id", "potential-csrf", "sql-injection", "code-comments", "io-flows", "unidentified", "xss", "path-traversal"];
        let systems = ["phpshop", "zencart"];
        let reports: Vec<FindingsReport> = picks.iter().map(|(c, s)| FindingsReport {
            scanner: "w3af".into(),
            system: systems[*s].into(),
            findings: vec![Finding {
                scanner: "w3af".into(),
                vuln_class: classes[*c].into(),
                location: String::new(),
                detail: String::new(),
            }],
        }).collect();
        let counts = classify(&reports, &taxonomy());
        prop_assert_eq!(counts.counted_total() + counts.unresolved.len(), picks.len());
        prop_assert_eq!(counts.unresolved.len(), picks.iter().filter(|(c, _)| *c >= 6).count());
    }

    #[test]
    fn random_nets_agree_with_brute_force(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let net = random_net(&mut rng, 6, 3);
        let ev = random_evidence(&mut rng, &net);
        for node in net.nodes() {
            let ve = query_marginal(&net, &ev, &node.id).unwrap().probabilities;
            let bf = brute_force_marginal(&net, &ev, &node.id);
            for (x, y) in ve.iter().zip(&bf) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn model_round_trips_with_edited_weights(weights in prop::collection::vec(0.01f64..100.0, 6)) {
        let mut m = model();
        for (impact, w) in m.impacts.iter_mut().zip(&weights) {
            impact.weight = *w;
        }
        let text = serialize_model(&m);
        prop_assert_eq!(&parse_model(&text).unwrap(), &m);
        prop_assert_eq!(decode_model(&text).unwrap(), m);
    }
}

#[test]
fn fixture_model_round_trips() {
    let m = model();
    assert_eq!(parse_model(&serialize_model(&m)).unwrap(), m);
}

#[test]
fn observed_node_yields_point_mass() {
    let a = assessment("phpshop");
    let p = query_marginal(&a.net, &a.evidence, "m.sql-injection").unwrap();
    assert_eq!(p.probabilities, vec![1.0, 0.0]);
    let empty = query_marginal(&a.net, &Evidence::new(), "a.attack").unwrap();
    assert!((empty.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}
