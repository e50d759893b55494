//! Probabilistic security quality assessment.
//!
//! An activity-based quality model is turned into a discrete Bayesian net
//! ([`derive`]), scanner findings are voted into yes/no measure observations
//! ([`findings`]), and exact inference ([`bayes`]) yields posteriors and a
//! predicted vulnerability density ([`assess`]).

pub mod assess;
pub mod bayes;
pub mod derive;
pub mod findings;
pub mod nptgen;
pub mod qmodel;

pub use assess::{
    assess, emit_report, run_assessment, what_if, AssessError, Assessment, AssessmentReport,
    ReportFormat, SystemDescriptor, WhatIfChange, WhatIfError, WhatIfSession,
};
pub use bayes::{
    build_net, joint_enumerate, posterior_stats, query_marginal, BayesError, BayesNet, Evidence,
    Node, NodeKind, Posterior,
};
pub use derive::{derive_net, trace, AssessmentPlan, DeriveError, NodeMap};
pub use findings::{
    classify, parse_report, scanner_diff, vote, FindingsError, FindingsReport, ObservationSet,
    Vote, VulnTaxonomy,
};
pub use qmodel::{parse_model, serialize_model, validate_model, ModelError, QualityModel};
