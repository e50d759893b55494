//! Discrete Bayesian networks with exact inference.
//!
//! [`query_marginal`] runs variable elimination (min-degree ordering) over
//! the ancestors of the query and evidence nodes. [`joint_enumerate`] sums the
//! full joint distribution over the same nodes and serves as an independent
//! oracle for it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nptgen::{Npt, Scale};

/// Default bound on the number of assignments [`joint_enumerate`] may visit.
pub const DEFAULT_JOINT_LIMIT: u128 = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum BayesError {
    #[error("cycle detected: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("node `{node}` lists unknown parent `{parent}`")]
    UnknownParent { node: String, parent: String },
    #[error("node `{node}`: npt dimension mismatch ({detail})")]
    Dimension { node: String, detail: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{node}` has no state {state} (it has {count})")]
    StateOutOfRange {
        node: String,
        state: usize,
        count: usize,
    },
    #[error("node `{node}` has no state named `{state}`")]
    UnknownState { node: String, state: String },
    #[error("inconsistent evidence: the observations have zero joint probability")]
    InconsistentEvidence,
    #[error("joint state space of {size} assignments exceeds the limit of {limit}")]
    StateSpaceTooLarge { size: u128, limit: u128 },
    #[error("node `{0}` has no scale to compute statistics over")]
    MissingScale(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Activity,
    Factor,
    Measure,
    Metric,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Activity => "activity",
            NodeKind::Factor => "factor",
            NodeKind::Measure => "measure",
            NodeKind::Metric => "metric",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub states: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Scale>,
    pub parents: Vec<String>,
    pub npt: Npt,
}

impl Node {
    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }
}

/// Validated, immutable network. Node order is the construction order.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesNet {
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    topo: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct NetDocument {
    nodes: Vec<Node>,
}

impl Serialize for BayesNet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Borrowed<'a> {
            nodes: &'a [Node],
        }
        Borrowed { nodes: &self.nodes }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BayesNet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = NetDocument::deserialize(deserializer)?;
        build_net(doc.nodes).map_err(serde::de::Error::custom)
    }
}

impl BayesNet {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Node ids in topological order (parents before children, ties by
    /// construction order).
    pub fn topological_order(&self) -> Vec<&str> {
        self.topo
            .iter()
            .map(|&i| self.nodes[i].id.as_str())
            .collect()
    }

    fn card(&self, i: usize) -> usize {
        self.nodes[i].states.len()
    }

    fn resolve(&self, evidence: &Evidence) -> Result<BTreeMap<usize, usize>, BayesError> {
        evidence
            .assignments
            .iter()
            .map(|(id, &state)| {
                let i = self
                    .index_of(id)
                    .ok_or_else(|| BayesError::UnknownNode(id.clone()))?;
                let count = self.card(i);
                if state >= count {
                    return Err(BayesError::StateOutOfRange {
                        node: id.clone(),
                        state,
                        count,
                    });
                }
                Ok((i, state))
            })
            .collect()
    }

    /// Ancestral closure of `seeds`, in ascending node order.
    fn ancestors_of(&self, seeds: impl IntoIterator<Item = usize>) -> Vec<usize> {
        let mut keep = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = seeds.into_iter().collect();
        while let Some(i) = stack.pop() {
            if !keep[i] {
                keep[i] = true;
                stack.extend(&self.parents[i]);
            }
        }
        (0..self.nodes.len()).filter(|&i| keep[i]).collect()
    }

    fn posterior(&self, target: usize, probabilities: Vec<f64>) -> Posterior {
        let node = &self.nodes[target];
        let mut post = Posterior {
            node: node.id.clone(),
            probabilities,
            mean: None,
            sd: None,
        };
        if let Some(scale) = &node.scale {
            let (mean, sd) = moments(&post.probabilities, &scale.midpoints());
            post.mean = Some(mean);
            post.sd = Some(sd);
        }
        post
    }
}

pub fn build_net(nodes: Vec<Node>) -> Result<BayesNet, BayesError> {
    let mut index = HashMap::with_capacity(nodes.len());
    for (i, n) in nodes.iter().enumerate() {
        if index.insert(n.id.clone(), i).is_some() {
            return Err(BayesError::DuplicateNode(n.id.clone()));
        }
    }
    let mut parents = Vec::with_capacity(nodes.len());
    for n in &nodes {
        let ids = n
            .parents
            .iter()
            .map(|p| {
                index
                    .get(p)
                    .copied()
                    .ok_or_else(|| BayesError::UnknownParent {
                        node: n.id.clone(),
                        parent: p.clone(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        parents.push(ids);
    }

    let topo = topological_sort(&nodes, &parents)?;

    for (i, n) in nodes.iter().enumerate() {
        let dim = |detail: String| BayesError::Dimension {
            node: n.id.clone(),
            detail,
        };
        if n.states.len() < 2 {
            return Err(dim(format!(
                "{} states; at least 2 required",
                n.states.len()
            )));
        }
        if n.npt.child_states() != n.states.len() {
            return Err(dim(format!(
                "{} states but npt has {} columns",
                n.states.len(),
                n.npt.child_states()
            )));
        }
        let expected: Vec<usize> = parents[i].iter().map(|&p| nodes[p].states.len()).collect();
        if n.npt.parent_cards() != expected.as_slice() {
            return Err(dim(format!(
                "parent cardinalities {:?} but npt expects {:?}",
                expected,
                n.npt.parent_cards()
            )));
        }
        if let Some(scale) = &n.scale {
            if scale.state_count() != n.states.len() {
                return Err(dim(format!(
                    "scale has {} states, node has {}",
                    scale.state_count(),
                    n.states.len()
                )));
            }
        }
    }

    Ok(BayesNet {
        nodes,
        index,
        parents,
        topo,
    })
}

fn topological_sort(nodes: &[Node], parents: &[Vec<usize>]) -> Result<Vec<usize>, BayesError> {
    let n = nodes.len();
    let mut children = vec![Vec::new(); n];
    let mut indegree = vec![0usize; n];
    for (i, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(i);
            indegree[i] += 1;
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }

    // Walk parent links among the unsorted nodes until one repeats.
    let stuck: Vec<bool> = (0..n).map(|i| indegree[i] > 0).collect();
    let start = (0..n).find(|&i| stuck[i]).expect("unsorted node exists");
    let mut seen = HashMap::new();
    let mut path = Vec::new();
    let mut cur = start;
    loop {
        if let Some(&at) = seen.get(&cur) {
            let mut cycle: Vec<String> = path[at..]
                .iter()
                .rev()
                .map(|&i: &usize| nodes[i].id.clone())
                .collect();
            cycle.push(cycle[0].clone());
            return Err(BayesError::Cycle(cycle));
        }
        seen.insert(cur, path.len());
        path.push(cur);
        cur = *parents[cur]
            .iter()
            .find(|&&p| stuck[p])
            .expect("a node on a cycle has a parent on the cycle");
    }
}

/// Observed state per node id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub assignments: BTreeMap<String, usize>,
}

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, node: impl Into<String>, state: usize) -> Self {
        self.assignments.insert(node.into(), state);
        self
    }

    pub fn set(&mut self, node: impl Into<String>, state: usize) {
        self.assignments.insert(node.into(), state);
    }

    pub fn remove(&mut self, node: &str) -> Option<usize> {
        self.assignments.remove(node)
    }

    pub fn get(&self, node: &str) -> Option<usize> {
        self.assignments.get(node).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub node: String,
    pub probabilities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
}

impl Posterior {
    pub fn expected_value(&self, midpoints: &[f64]) -> f64 {
        self.probabilities
            .iter()
            .zip(midpoints)
            .map(|(p, m)| p * m)
            .sum()
    }
}

fn moments(probabilities: &[f64], midpoints: &[f64]) -> (f64, f64) {
    let mean: f64 = probabilities
        .iter()
        .zip(midpoints)
        .map(|(p, m)| p * m)
        .sum();
    let second: f64 = probabilities
        .iter()
        .zip(midpoints)
        .map(|(p, m)| p * m * m)
        .sum();
    (mean, (second - mean * mean).max(0.0).sqrt())
}

/// Mean and standard deviation of a posterior over the scale's midpoints.
pub fn posterior_stats(
    posterior: &Posterior,
    scale: Option<&Scale>,
) -> Result<(f64, f64), BayesError> {
    let scale = scale.ok_or_else(|| BayesError::MissingScale(posterior.node.clone()))?;
    let mids = scale.midpoints();
    if mids.len() != posterior.probabilities.len() {
        return Err(BayesError::Dimension {
            node: posterior.node.clone(),
            detail: format!(
                "posterior has {} entries, scale has {}",
                posterior.probabilities.len(),
                mids.len()
            ),
        });
    }
    Ok(moments(&posterior.probabilities, &mids))
}

/// Dense table over a sorted set of variables; the last variable varies
/// fastest.
#[derive(Debug, Clone)]
struct Factor {
    vars: Vec<usize>,
    cards: Vec<usize>,
    values: Vec<f64>,
}

impl Factor {
    fn from_node(net: &BayesNet, i: usize) -> Self {
        let node = &net.nodes[i];
        let family: Vec<usize> = net.parents[i].iter().copied().chain([i]).collect();
        let mut vars = family.clone();
        vars.sort_unstable();
        vars.dedup();
        let cards: Vec<usize> = vars.iter().map(|&v| net.card(v)).collect();
        let size: usize = cards.iter().product();
        let pos: Vec<usize> = family
            .iter()
            .map(|v| vars.binary_search(v).expect("family var in scope"))
            .collect();
        let mut values = Vec::with_capacity(size);
        let mut assign = vec![0usize; vars.len()];
        let mut parent_states = vec![0usize; family.len() - 1];
        for _ in 0..size {
            for (k, p) in pos[..family.len() - 1].iter().enumerate() {
                parent_states[k] = assign[*p];
            }
            let child = assign[pos[family.len() - 1]];
            values.push(node.npt.row(&parent_states)[child]);
            advance(&mut assign, &cards);
        }
        Factor {
            vars,
            cards,
            values,
        }
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.vars.len()];
        for d in (0..self.vars.len().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.cards[d + 1];
        }
        s
    }

    fn reduce(&self, var: usize, state: usize) -> Factor {
        let Ok(d) = self.vars.binary_search(&var) else {
            return self.clone();
        };
        let strides = self.strides();
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(d);
        cards.remove(d);
        let size: usize = cards.iter().product();
        let mut values = Vec::with_capacity(size);
        let outer: usize = self.cards[..d].iter().product();
        let inner = strides[d];
        for o in 0..outer {
            let base = o * self.cards[d] * inner + state * inner;
            values.extend_from_slice(&self.values[base..base + inner]);
        }
        Factor {
            vars,
            cards,
            values,
        }
    }

    fn product(&self, other: &Factor) -> Factor {
        let mut vars: Vec<usize> = self.vars.iter().chain(&other.vars).copied().collect();
        vars.sort_unstable();
        vars.dedup();
        let cards: Vec<usize> = vars
            .iter()
            .map(|v| match self.vars.binary_search(v) {
                Ok(d) => self.cards[d],
                Err(_) => other.cards[other.vars.binary_search(v).expect("var in one operand")],
            })
            .collect();
        let stride_in = |f: &Factor| -> Vec<usize> {
            let s = f.strides();
            vars.iter()
                .map(|v| f.vars.binary_search(v).map_or(0, |d| s[d]))
                .collect()
        };
        let sa = stride_in(self);
        let sb = stride_in(other);
        let size: usize = cards.iter().product();
        let mut values = Vec::with_capacity(size);
        let mut assign = vec![0usize; vars.len()];
        let (mut ia, mut ib) = (0usize, 0usize);
        for _ in 0..size {
            values.push(self.values[ia] * other.values[ib]);
            for d in (0..vars.len()).rev() {
                assign[d] += 1;
                ia += sa[d];
                ib += sb[d];
                if assign[d] < cards[d] {
                    break;
                }
                ia -= sa[d] * cards[d];
                ib -= sb[d] * cards[d];
                assign[d] = 0;
            }
        }
        Factor {
            vars,
            cards,
            values,
        }
    }

    fn sum_out(&self, var: usize) -> Factor {
        let Ok(d) = self.vars.binary_search(&var) else {
            return self.clone();
        };
        let strides = self.strides();
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(d);
        cards.remove(d);
        let outer: usize = self.cards[..d].iter().product();
        let inner = strides[d];
        let mut values = vec![0.0; outer * inner];
        for o in 0..outer {
            for s in 0..self.cards[d] {
                let base = o * self.cards[d] * inner + s * inner;
                for k in 0..inner {
                    values[o * inner + k] += self.values[base + k];
                }
            }
        }
        Factor {
            vars,
            cards,
            values,
        }
    }
}

fn advance(assign: &mut [usize], cards: &[usize]) {
    for d in (0..assign.len()).rev() {
        assign[d] += 1;
        if assign[d] < cards[d] {
            return;
        }
        assign[d] = 0;
    }
}

/// Exact `P(target | evidence)` by variable elimination.
pub fn query_marginal(
    net: &BayesNet,
    evidence: &Evidence,
    target: &str,
) -> Result<Posterior, BayesError> {
    let t = net
        .index_of(target)
        .ok_or_else(|| BayesError::UnknownNode(target.to_string()))?;
    let observed = net.resolve(evidence)?;
    let relevant = net.ancestors_of(observed.keys().copied().chain([t]));

    let mut factors: Vec<Factor> = relevant
        .iter()
        .map(|&i| {
            observed
                .iter()
                .fold(Factor::from_node(net, i), |f, (&v, &s)| f.reduce(v, s))
        })
        .collect();

    let mut remaining: BTreeSet<usize> = relevant
        .iter()
        .copied()
        .filter(|i| *i != t && !observed.contains_key(i))
        .collect();

    while !remaining.is_empty() {
        // Min-degree: fewest distinct neighbours in the current factor graph.
        let var = *remaining
            .iter()
            .min_by_key(|&&v| {
                let mut neighbours = BTreeSet::new();
                for f in factors.iter().filter(|f| f.vars.binary_search(&v).is_ok()) {
                    neighbours.extend(f.vars.iter().copied().filter(|&u| u != v));
                }
                (neighbours.len(), v)
            })
            .expect("non-empty");
        remaining.remove(&var);
        let (touching, rest): (Vec<Factor>, Vec<Factor>) = factors
            .into_iter()
            .partition(|f| f.vars.binary_search(&var).is_ok());
        factors = rest;
        if let Some(joined) = touching.into_iter().reduce(|a, b| a.product(&b)) {
            factors.push(joined.sum_out(var));
        }
    }

    let joint = factors
        .into_iter()
        .reduce(|a, b| a.product(&b))
        .expect("target factor present");

    if let Some(&state) = observed.get(&t) {
        let z: f64 = joint.values.iter().sum();
        if z.is_nan() || z <= 0.0 {
            return Err(BayesError::InconsistentEvidence);
        }
        let mut point = vec![0.0; net.card(t)];
        point[state] = 1.0;
        return Ok(net.posterior(t, point));
    }

    debug_assert_eq!(joint.vars, vec![t]);
    normalize(joint.values).map(|p| net.posterior(t, p))
}

fn normalize(mut values: Vec<f64>) -> Result<Vec<f64>, BayesError> {
    let z: f64 = values.iter().sum();
    if !(z > 0.0 && z.is_finite()) {
        return Err(BayesError::InconsistentEvidence);
    }
    for v in &mut values {
        *v /= z;
    }
    Ok(values)
}

/// Posteriors of every node, in node order.
pub fn query_all(net: &BayesNet, evidence: &Evidence) -> Result<Vec<Posterior>, BayesError> {
    net.nodes
        .iter()
        .map(|n| query_marginal(net, evidence, &n.id))
        .collect()
}

/// `P(target | evidence)` by summing the joint distribution.
pub fn joint_enumerate(
    net: &BayesNet,
    evidence: &Evidence,
    target: &str,
) -> Result<Posterior, BayesError> {
    joint_enumerate_with_limit(net, evidence, target, DEFAULT_JOINT_LIMIT)
}

/// As [`joint_enumerate`], with an explicit bound on visited assignments.
///
/// Nodes that are neither ancestors of the target nor of an observed node
/// are skipped since they sum out to one. When the target has no children
/// among the remaining nodes its row is folded in after the enumeration
/// instead of being enumerated itself.
pub fn joint_enumerate_with_limit(
    net: &BayesNet,
    evidence: &Evidence,
    target: &str,
    limit: u128,
) -> Result<Posterior, BayesError> {
    let t = net
        .index_of(target)
        .ok_or_else(|| BayesError::UnknownNode(target.to_string()))?;
    let observed = net.resolve(evidence)?;
    let relevant = net.ancestors_of(observed.keys().copied().chain([t]));
    let in_relevant: BTreeSet<usize> = relevant.iter().copied().collect();

    let target_free = !observed.contains_key(&t);
    let target_is_sink = !relevant.iter().any(|&i| net.parents[i].contains(&t));
    let fold_target = target_free && target_is_sink;

    let order: Vec<usize> = net
        .topo
        .iter()
        .copied()
        .filter(|i| in_relevant.contains(i) && !observed.contains_key(i))
        .filter(|&i| !(fold_target && i == t))
        .collect();

    let size: u128 = order.iter().map(|&i| net.card(i) as u128).product();
    if size > limit {
        return Err(BayesError::StateSpaceTooLarge { size, limit });
    }

    let mut assign = vec![usize::MAX; net.nodes.len()];
    for (&i, &s) in &observed {
        assign[i] = s;
    }
    let depth_of: HashMap<usize, usize> = order.iter().enumerate().map(|(d, &i)| (i, d)).collect();

    // Each relevant family enters the product once all its members are set.
    let mut ready_at: Vec<Vec<usize>> = vec![Vec::new(); order.len()];
    let mut constant = Vec::new();
    for &i in &relevant {
        if fold_target && i == t {
            continue;
        }
        let last = net.parents[i]
            .iter()
            .chain([&i])
            .filter_map(|v| depth_of.get(v).copied())
            .max();
        match last {
            Some(d) => ready_at[d].push(i),
            None => constant.push(i),
        }
    }

    let entry = |assign: &[usize], i: usize| -> f64 {
        let states: Vec<usize> = net.parents[i].iter().map(|&p| assign[p]).collect();
        net.nodes[i].npt.row(&states)[assign[i]]
    };
    let base: f64 = constant.iter().map(|&i| entry(&assign, i)).product();

    let target_parents = net.parents[t].clone();
    let target_npt = &net.nodes[t].npt;
    let mut acc: Vec<f64> = if fold_target {
        vec![0.0; target_npt.rows().len()]
    } else {
        vec![0.0; net.card(t)]
    };

    struct Walk<'a, F: Fn(&[usize], usize) -> f64> {
        net: &'a BayesNet,
        order: &'a [usize],
        ready_at: &'a [Vec<usize>],
        entry: F,
    }

    impl<F: Fn(&[usize], usize) -> f64> Walk<'_, F> {
        fn run(
            &self,
            depth: usize,
            weight: f64,
            assign: &mut [usize],
            sink: &mut dyn FnMut(&[usize], f64),
        ) {
            if depth == self.order.len() {
                sink(assign, weight);
                return;
            }
            let v = self.order[depth];
            for s in 0..self.net.card(v) {
                assign[v] = s;
                let w = self.ready_at[depth]
                    .iter()
                    .fold(weight, |w, &i| w * (self.entry)(assign, i));
                if w != 0.0 {
                    self.run(depth + 1, w, assign, sink);
                }
            }
            assign[v] = usize::MAX;
        }
    }

    let walk = Walk {
        net,
        order: &order,
        ready_at: &ready_at,
        entry,
    };
    if base != 0.0 {
        let mut sink = |assign: &[usize], w: f64| {
            if fold_target {
                let states: Vec<usize> = target_parents.iter().map(|&p| assign[p]).collect();
                acc[target_npt.row_index(&states)] += w;
            } else {
                acc[assign[t]] += w;
            }
        };
        walk.run(0, base, &mut assign, &mut sink);
    }

    let joint = if fold_target {
        let mut out = vec![0.0; net.card(t)];
        for (row, &w) in target_npt.rows().iter().zip(&acc) {
            for (o, p) in out.iter_mut().zip(row) {
                *o += w * p;
            }
        }
        out
    } else {
        acc
    };
    normalize(joint).map(|p| net.posterior(t, p))
}
