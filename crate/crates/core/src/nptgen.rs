//! Node probability table generation.
//!
//! Ranked nodes map their `k` ordinal states onto the equal-width
//! subintervals of `[0, 1]`. A child of ranked parents gets, for every parent
//! state combination, a Normal distribution centred on the weighted mean of
//! the parents' interval midpoints, truncated to `[0, 1]` and integrated over
//! the child's intervals. Measure nodes use partitioned expressions (one
//! `P(yes)` per parent state); numeric nodes use an affine expression of the
//! parent midpoint, again spread by a truncated Normal and binned.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qmodel::Polarity;

/// Tolerance for row normalization checks.
pub const ROW_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_RANKED_SIGMA: f64 = 0.2;
pub const DEFAULT_PRIOR_MEAN: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum NptError {
    #[error("non-finite argument: {0}")]
    NonFinite(&'static str),
    #[error("sigma must be > 0, got {0}")]
    NonPositiveSigma(f64),
    #[error("expected {expected} parent weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("parent weights must be finite and > 0")]
    InvalidWeight,
    #[error("epsilon {0} outside (0, 0.5]")]
    EpsilonRange(f64),
    #[error("partition mapping has {got} entries for a {expected}-state parent")]
    MappingLength { expected: usize, got: usize },
    #[error("partition probability {0} outside [0, 1]")]
    ProbabilityRange(f64),
    #[error("degenerate range [{lo}, {hi}]")]
    DegenerateRange { lo: f64, hi: f64 },
    #[error("a scale needs at least 2 states, got {0}")]
    TooFewStates(usize),
    #[error("npt shape mismatch: {0}")]
    Shape(String),
    #[error("npt row {row} is not a probability vector (sum {sum})")]
    NotNormalized { row: usize, sum: f64 },
}

/// Ordinal scale over `[0, 1]` split into equal-width intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedScale {
    labels: Vec<String>,
}

impl RankedScale {
    /// Scale with `k` states and conventional labels.
    pub fn new(k: usize) -> Result<Self, NptError> {
        if k < 2 {
            return Err(NptError::TooFewStates(k));
        }
        let labels: Vec<String> = match k {
            2 => vec!["low", "high"],
            3 => vec!["low", "medium", "high"],
            5 => vec!["very low", "low", "medium", "high", "very high"],
            _ => {
                return Ok(Self {
                    labels: (0..k).map(|i| format!("s{i}")).collect(),
                })
            }
        }
        .into_iter()
        .map(String::from)
        .collect();
        Ok(Self { labels })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self, NptError> {
        if labels.len() < 2 {
            return Err(NptError::TooFewStates(labels.len()));
        }
        Ok(Self { labels })
    }

    pub fn state_count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn interval(&self, i: usize) -> (f64, f64) {
        let k = self.state_count() as f64;
        (i as f64 / k, (i + 1) as f64 / k)
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.state_count() as f64
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.state_count()).map(|i| self.midpoint(i)).collect()
    }

    fn edges(&self) -> Vec<f64> {
        let k = self.state_count();
        (0..=k).map(|i| i as f64 / k as f64).collect()
    }
}

/// Numeric range `[lo, hi]` discretized into equal bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BinScale {
    pub lo: f64,
    pub hi: f64,
    pub bin_count: usize,
}

impl BinScale {
    pub fn new(lo: f64, hi: f64, bin_count: usize) -> Result<Self, NptError> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(NptError::NonFinite("range"));
        }
        if lo >= hi {
            return Err(NptError::DegenerateRange { lo, hi });
        }
        if bin_count < 2 {
            return Err(NptError::TooFewStates(bin_count));
        }
        Ok(Self { lo, hi, bin_count })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bin_count as f64
    }

    pub fn edge(&self, i: usize) -> f64 {
        if i == self.bin_count {
            self.hi
        } else {
            self.lo + i as f64 * self.width()
        }
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.bin_count).map(|i| self.midpoint(i)).collect()
    }

    /// Bin containing `x`, clamping to the range.
    pub fn bin_of(&self, x: f64) -> usize {
        let i = ((x - self.lo) / self.width()).floor();
        (i.max(0.0) as usize).min(self.bin_count - 1)
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.bin_count)
            .map(|i| {
                format!(
                    "[{}, {})",
                    fmt_edge(self.edge(i)),
                    fmt_edge(self.edge(i + 1))
                )
            })
            .collect()
    }

    fn edges(&self) -> Vec<f64> {
        (0..=self.bin_count).map(|i| self.edge(i)).collect()
    }
}

fn fmt_edge(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0');
    s.strip_suffix('.').unwrap_or(s).to_string()
}

/// Scale attached to a net node; statistics are taken over its midpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Scale {
    Ranked(RankedScale),
    Numeric(BinScale),
}

impl Scale {
    pub fn state_count(&self) -> usize {
        match self {
            Scale::Ranked(s) => s.state_count(),
            Scale::Numeric(s) => s.bin_count,
        }
    }

    pub fn midpoints(&self) -> Vec<f64> {
        match self {
            Scale::Ranked(s) => s.midpoints(),
            Scale::Numeric(s) => s.midpoints(),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            Scale::Ranked(s) => s.labels().to_vec(),
            Scale::Numeric(s) => s.labels(),
        }
    }
}

/// Conditional distribution of a child given each parent state combination.
///
/// Rows follow the mixed-radix enumeration of parent states with the last
/// parent varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", try_from = "NptDocument")]
pub struct Npt {
    child_states: usize,
    parent_cards: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct NptDocument {
    child_states: usize,
    parent_cards: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<NptDocument> for Npt {
    type Error = NptError;

    fn try_from(doc: NptDocument) -> Result<Self, Self::Error> {
        Npt::new(doc.child_states, doc.parent_cards, doc.rows)
    }
}

impl Npt {
    pub fn new(
        child_states: usize,
        parent_cards: Vec<usize>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, NptError> {
        let combos: usize = parent_cards.iter().product();
        if rows.len() != combos {
            return Err(NptError::Shape(format!(
                "{} rows for {combos} parent state combinations",
                rows.len()
            )));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != child_states {
                return Err(NptError::Shape(format!(
                    "row {r} has {} entries for {child_states} child states",
                    row.len()
                )));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(NptError::NotNormalized { row: r, sum });
            }
        }
        Ok(Self {
            child_states,
            parent_cards,
            rows,
        })
    }

    /// Single-row table for a node without parents.
    pub fn prior(probabilities: Vec<f64>) -> Result<Self, NptError> {
        Self::new(probabilities.len(), Vec::new(), vec![probabilities])
    }

    pub fn uniform(states: usize) -> Self {
        Self {
            child_states: states,
            parent_cards: Vec::new(),
            rows: vec![vec![1.0 / states as f64; states]],
        }
    }

    pub fn child_states(&self) -> usize {
        self.child_states
    }

    pub fn parent_cards(&self) -> &[usize] {
        &self.parent_cards
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row_index(&self, parent_states: &[usize]) -> usize {
        parent_states
            .iter()
            .zip(&self.parent_cards)
            .fold(0, |acc, (&s, &c)| acc * c + s)
    }

    pub fn row(&self, parent_states: &[usize]) -> &[f64] {
        &self.rows[self.row_index(parent_states)]
    }

    /// Parent state tuples in row order.
    pub fn combos(&self) -> Vec<Vec<usize>> {
        combos(&self.parent_cards)
    }
}

pub(crate) fn combos(cards: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = cards.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut cur = vec![0usize; cards.len()];
    for _ in 0..total {
        out.push(cur.clone());
        for d in (0..cards.len()).rev() {
            cur[d] += 1;
            if cur[d] < cards[d] {
                break;
            }
            cur[d] = 0;
        }
    }
    out
}

/// Standard Normal probability of `(za, zb)`, evaluated on whichever tail
/// keeps the subtraction well conditioned.
fn normal_mass(za: f64, zb: f64) -> f64 {
    if zb <= za {
        return 0.0;
    }
    let upper_tail = |z: f64| 0.5 * libm::erfc(z / SQRT_2);
    let mass = if za >= 0.0 {
        upper_tail(za) - upper_tail(zb)
    } else if zb <= 0.0 {
        upper_tail(-zb) - upper_tail(-za)
    } else {
        1.0 - upper_tail(-za) - upper_tail(zb)
    };
    mass.max(0.0)
}

/// Standard Normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

fn check_sigma(sigma: f64) -> Result<(), NptError> {
    if !sigma.is_finite() {
        return Err(NptError::NonFinite("sigma"));
    }
    if sigma <= 0.0 {
        return Err(NptError::NonPositiveSigma(sigma));
    }
    Ok(())
}

/// CDF at `x` of Normal(`mu`, `sigma`²) truncated to `[0, 1]`.
pub fn tnormal_cdf(x: f64, mu: f64, sigma: f64) -> Result<f64, NptError> {
    if !x.is_finite() {
        return Err(NptError::NonFinite("x"));
    }
    if !mu.is_finite() {
        return Err(NptError::NonFinite("mu"));
    }
    check_sigma(sigma)?;
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x >= 1.0 {
        return Ok(1.0);
    }
    let z0 = (0.0 - mu) / sigma;
    let total = normal_mass(z0, (1.0 - mu) / sigma);
    if total <= 0.0 {
        // All mass underflowed: the limit is a step at the nearest endpoint.
        return Ok(if x >= mu.clamp(0.0, 1.0) { 1.0 } else { 0.0 });
    }
    Ok((normal_mass(z0, (x - mu) / sigma) / total).clamp(0.0, 1.0))
}

/// Masses of a Normal truncated to `[edges[0], edges[n]]` over each interval.
fn truncated_bin_masses(edges: &[f64], mu: f64, sigma: f64) -> Vec<f64> {
    let z: Vec<f64> = edges.iter().map(|e| (e - mu) / sigma).collect();
    let mut masses: Vec<f64> = z.windows(2).map(|w| normal_mass(w[0], w[1])).collect();
    let total: f64 = masses.iter().sum();
    if total > 0.0 {
        for m in &mut masses {
            *m /= total;
        }
    } else {
        let lo = edges[0];
        let hi = edges[edges.len() - 1];
        let target = mu.clamp(lo, hi);
        let bin = edges
            .windows(2)
            .position(|w| target < w[1])
            .unwrap_or(masses.len() - 1);
        masses.iter_mut().for_each(|m| *m = 0.0);
        masses[bin] = 1.0;
    }
    masses
}

/// Weighted-mean expression for a ranked child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WmeanSpec {
    pub parent_weights: Vec<f64>,
    pub parent_polarities: Vec<Polarity>,
    pub sigma: f64,
    /// Centre of the prior row used when there are no parents.
    pub prior_mean: f64,
}

impl WmeanSpec {
    pub fn new(parent_weights: Vec<f64>, parent_polarities: Vec<Polarity>, sigma: f64) -> Self {
        Self {
            parent_weights,
            parent_polarities,
            sigma,
            prior_mean: DEFAULT_PRIOR_MEAN,
        }
    }

    /// Equal positive weights for `n` parents.
    pub fn equal(n: usize, sigma: f64) -> Self {
        Self::new(vec![1.0; n], vec![Polarity::Positive; n], sigma)
    }
}

pub fn ranked_npt(
    parents: &[RankedScale],
    child: &RankedScale,
    spec: &WmeanSpec,
) -> Result<Npt, NptError> {
    check_sigma(spec.sigma)?;
    if spec.parent_weights.len() != parents.len() {
        return Err(NptError::WeightCount {
            expected: parents.len(),
            got: spec.parent_weights.len(),
        });
    }
    if spec.parent_polarities.len() != parents.len() {
        return Err(NptError::WeightCount {
            expected: parents.len(),
            got: spec.parent_polarities.len(),
        });
    }
    if spec
        .parent_weights
        .iter()
        .any(|w| !(w.is_finite() && *w > 0.0))
    {
        return Err(NptError::InvalidWeight);
    }
    let edges = child.edges();
    if parents.is_empty() {
        if !spec.prior_mean.is_finite() {
            return Err(NptError::NonFinite("prior_mean"));
        }
        let row = truncated_bin_masses(&edges, spec.prior_mean, spec.sigma);
        return Npt::new(child.state_count(), Vec::new(), vec![row]);
    }

    let cards: Vec<usize> = parents.iter().map(RankedScale::state_count).collect();
    let total_weight: f64 = spec.parent_weights.iter().sum();
    let rows = combos(&cards)
        .into_iter()
        .map(|states| {
            let weighted: f64 = states
                .iter()
                .zip(parents)
                .zip(spec.parent_weights.iter().zip(&spec.parent_polarities))
                .map(|((&s, scale), (&w, polarity))| {
                    let v = scale.midpoint(s);
                    let v = match polarity {
                        Polarity::Positive => v,
                        Polarity::Negative => 1.0 - v,
                    };
                    w * v
                })
                .sum();
            truncated_bin_masses(&edges, weighted / total_weight, spec.sigma)
        })
        .collect();
    Npt::new(child.state_count(), cards, rows)
}

/// Labels of a measure node driven by a partitioned expression.
pub const MEASURE_STATES: [&str; 2] = ["no", "yes"];

/// Per-parent-state probability of the measure's `yes` state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub mapping: Vec<f64>,
}

impl PartitionSpec {
    /// `P(yes)` falls linearly from `1 - epsilon` at the lowest parent state
    /// to `epsilon` at the highest.
    pub fn from_epsilon(parent_states: usize, epsilon: f64) -> Result<Self, NptError> {
        if !(epsilon > 0.0 && epsilon <= 0.5) {
            return Err(NptError::EpsilonRange(epsilon));
        }
        if parent_states < 2 {
            return Err(NptError::TooFewStates(parent_states));
        }
        let span = (parent_states - 1) as f64;
        let mapping = (0..parent_states)
            .map(|i| (1.0 - epsilon) - (1.0 - 2.0 * epsilon) * i as f64 / span)
            .collect();
        Ok(Self { mapping })
    }

    pub fn to_npt(&self, parent_states: usize) -> Result<Npt, NptError> {
        if self.mapping.len() != parent_states {
            return Err(NptError::MappingLength {
                expected: parent_states,
                got: self.mapping.len(),
            });
        }
        let rows = self
            .mapping
            .iter()
            .map(|&p| {
                if (0.0..=1.0).contains(&p) {
                    Ok(vec![1.0 - p, p])
                } else {
                    Err(NptError::ProbabilityRange(p))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Npt::new(2, vec![parent_states], rows)
    }
}

pub fn partitioned_npt(parent: &RankedScale, epsilon: f64) -> Result<Npt, NptError> {
    PartitionSpec::from_epsilon(parent.state_count(), epsilon)?.to_npt(parent.state_count())
}

/// `value = offset + scale * midpoint`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineExpr {
    pub offset: f64,
    pub scale: f64,
}

impl AffineExpr {
    pub const IDENTITY: AffineExpr = AffineExpr {
        offset: 0.0,
        scale: 1.0,
    };

    /// Maps 0 to `lo` and 1 to `hi`.
    pub fn spanning(lo: f64, hi: f64) -> Self {
        Self {
            offset: lo,
            scale: hi - lo,
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.offset + self.scale * x
    }
}

pub fn arithmetic_npt(
    parent: &RankedScale,
    target: &BinScale,
    expr: AffineExpr,
    sigma: f64,
) -> Result<Npt, NptError> {
    check_sigma(sigma)?;
    if !(expr.offset.is_finite() && expr.scale.is_finite()) {
        return Err(NptError::NonFinite("expr"));
    }
    let target = BinScale::new(target.lo, target.hi, target.bin_count)?;
    let edges = target.edges();
    let rows = parent
        .midpoints()
        .into_iter()
        .map(|m| truncated_bin_masses(&edges, expr.apply(m), sigma))
        .collect();
    Npt::new(target.bin_count, vec![parent.state_count()], rows)
}
