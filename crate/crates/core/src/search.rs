//! Greedy structure search by repeated splits.
//!
//! Each iteration picks a sum-to-product edge and a variable in the product's
//! scope, replaces the product under that sum by two copies conditioned on
//! the variable's two literals, and refits all parameters in closed form.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bits::Bits;
use crate::circuit::{asserted_literals, compile_clt, Circuit, Node, NodeId};
use crate::cltree::{learn_clt, pairwise_mi};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::flows::{aggregate_flows, compute_flows, log_likelihood, mle_log_params, FlowMatrix};
use crate::logspace::log_normalize;
use crate::vtree::{Vtree, VtreeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Heuristic {
    EflowVmi,
    EflowVrand,
    ErandVmi,
    ErandVrand,
}

impl Heuristic {
    pub const ALL: [Heuristic; 4] = [
        Heuristic::EflowVmi,
        Heuristic::EflowVrand,
        Heuristic::ErandVmi,
        Heuristic::ErandVrand,
    ];

    fn flow_edges(self) -> bool {
        matches!(self, Heuristic::EflowVmi | Heuristic::EflowVrand)
    }

    fn mi_vars(self) -> bool {
        matches!(self, Heuristic::EflowVmi | Heuristic::ErandVmi)
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Heuristic::EflowVmi => "eflow-vmi",
            Heuristic::EflowVrand => "eflow-vrand",
            Heuristic::ErandVmi => "erand-vmi",
            Heuristic::ErandVrand => "erand-vrand",
        })
    }
}

impl FromStr for Heuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Heuristic::ALL.into_iter().find(|h| h.to_string() == s).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown heuristic {s:?} (expected eflow-vmi, eflow-vrand, erand-vmi or erand-vrand)"
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    pub heuristic: Heuristic,
    /// Levels below the split product that are duplicated rather than shared.
    pub depth_bound: usize,
    /// Iterations without validation improvement before stopping.
    pub patience: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Pseudocount of the closed-form parameter refit.
    pub pseudocount: f64,
    /// Laplace smoothing of the initial tree and of vMI.
    pub alpha: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            heuristic: Heuristic::EflowVmi,
            depth_bound: 1,
            patience: 100,
            max_iters: 10_000,
            seed: 1337,
            pseudocount: 1.0,
            alpha: 1.0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth_bound < 1 {
            return Err(Error::InvalidArgument("depth bound must be at least 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::InvalidArgument("patience must be at least 1".into()));
        }
        if !(self.pseudocount >= 0.0 && self.pseudocount.is_finite()) {
            return Err(Error::InvalidArgument("pseudocount must be >= 0".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument("alpha must be >= 0".into()));
        }
        Ok(())
    }
}

/// A sum-to-product edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub sum: NodeId,
    pub child: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitCandidate {
    pub edge: Edge,
    pub variable: usize,
    pub score: f64,
}

/// An edge eligible for splitting, with its parameter index and the scope
/// variables it can be split on.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateEdge {
    pub edge: Edge,
    pub param: usize,
    pub variables: Vec<usize>,
}

/// Edges into products whose scope has at least two variables, at least one
/// of which the product does not already fix. Ordered by `(sum, child)`.
pub fn candidate_edges(c: &Circuit) -> Vec<CandidateEdge> {
    let scopes = c.scopes();
    let asserted = asserted_literals(c);
    let mut out = Vec::new();
    for (id, node) in c.nodes().iter().enumerate() {
        let Node::Sum { children, .. } = node else { continue };
        let off = c.param_offset(id);
        for (j, &ch) in children.iter().enumerate() {
            if !matches!(c.node(ch), Node::Product { .. }) || scopes[ch].count_ones() < 2 {
                continue;
            }
            let fixed = &asserted[ch];
            let variables: Vec<usize> = scopes[ch]
                .iter_ones()
                .filter(|v| fixed.binary_search_by(|&(x, _)| x.cmp(v)).is_err())
                .collect();
            if !variables.is_empty() {
                out.push(CandidateEdge {
                    edge: Edge { sum: id, child: ch },
                    param: off + j,
                    variables,
                });
            }
        }
    }
    out.sort_by_key(|e| e.edge);
    out
}

/// The candidate with the largest aggregate flow; ties go to the smallest
/// `(sum, child)` pair.
pub fn score_edge_eflow<'a>(candidates: &'a [CandidateEdge], counts: &[f64]) -> Result<&'a CandidateEdge> {
    let mut best: Option<&CandidateEdge> = None;
    for cand in candidates {
        let better = match best {
            None => true,
            Some(b) => {
                let (x, y) = (counts[cand.param], counts[b.param]);
                x > y || (x == y && cand.edge < b.edge)
            }
        };
        if better {
            best = Some(cand);
        }
    }
    best.ok_or(Error::SearchExhausted)
}

/// `sum_{h != k} MI(h, k)` for every variable of `vars`, with MI estimated
/// on the rows in `mask`, or on all rows when the mask is empty.
pub fn vmi_scores(d: &Dataset, vars: &[usize], mask: Option<&Bits>, alpha: f64) -> Vec<f64> {
    let mask = mask.filter(|m| m.any());
    pairwise_mi(d, vars, mask, alpha).row_sums()
}

/// Variable of `candidates` with the highest vMI score computed over `scope`;
/// ties go to the smallest variable index.
pub fn score_var_vmi(
    d: &Dataset,
    scope: &[usize],
    candidates: &[usize],
    mask: Option<&Bits>,
    alpha: f64,
) -> Result<SplitVariable> {
    let scores = vmi_scores(d, scope, mask, alpha);
    let mut best: Option<SplitVariable> = None;
    for (i, &v) in scope.iter().enumerate() {
        if !candidates.contains(&v) {
            continue;
        }
        if best.as_ref().is_none_or(|b| scores[i] > b.score) {
            best = Some(SplitVariable {
                variable: v,
                score: scores[i],
            });
        }
    }
    best.ok_or(Error::SearchExhausted)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitVariable {
    pub variable: usize,
    pub score: f64,
}

/// Uniform choice among `candidates`, deterministic per seed.
pub fn score_random<T: Clone>(candidates: &[T], seed: u64) -> Result<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pick(candidates, &mut rng)
}

fn pick<T: Clone, R: Rng>(candidates: &[T], rng: &mut R) -> Result<T> {
    if candidates.is_empty() {
        return Err(Error::SearchExhausted);
    }
    Ok(candidates[rng.gen_range(0..candidates.len())].clone())
}

struct Conditioner<'a> {
    c: &'a Circuit,
    scopes: &'a [Bits],
    var: usize,
    value: bool,
    log_marginal: Vec<f64>,
    depth_bound: usize,
    nodes: &'a mut Vec<Node>,
    vtree_ids: &'a mut Vec<VtreeId>,
    conditioned: HashMap<(NodeId, usize), Option<NodeId>>,
    copied: HashMap<(NodeId, usize), NodeId>,
}

impl Conditioner<'_> {
    fn push(&mut self, node: Node, vt: VtreeId) -> NodeId {
        self.nodes.push(node);
        self.vtree_ids.push(vt);
        self.nodes.len() - 1
    }

    fn depth_key(&self, depth: usize) -> usize {
        depth.min(self.depth_bound + 1)
    }

    /// Fresh copy down to the depth bound; deeper nodes are shared.
    fn copy(&mut self, id: NodeId, depth: usize) -> NodeId {
        if depth > self.depth_bound || matches!(self.c.node(id), Node::Literal { .. }) {
            return id;
        }
        if let Some(&done) = self.copied.get(&(id, depth)) {
            return done;
        }
        let c = self.c;
        let node = match c.node(id) {
            Node::Product { children: [l, r] } => Node::product(self.copy(*l, depth + 1), self.copy(*r, depth + 1)),
            Node::Sum { children, log_weights } => Node::Sum {
                children: children.iter().map(|&ch| self.copy(ch, depth + 1)).collect(),
                log_weights: log_weights.clone(),
            },
            Node::Literal { .. } => unreachable!(),
        };
        let new = self.push(node, c.vtree_id(id));
        self.copied.insert((id, depth), new);
        new
    }

    /// Copy of `id` conditioned on the literal, or `None` if the literal
    /// contradicts every input in its support.
    fn condition(&mut self, id: NodeId, depth: usize) -> Option<NodeId> {
        if !self.scopes[id].get(self.var) {
            return Some(self.copy(id, depth));
        }
        let key = (id, self.depth_key(depth));
        if let Some(&done) = self.conditioned.get(&key) {
            return done;
        }
        let c = self.c;
        let result = match c.node(id) {
            Node::Literal { positive, .. } => (*positive == self.value).then_some(id),
            Node::Product { children: [l, r] } => {
                match (self.condition(*l, depth + 1), self.condition(*r, depth + 1)) {
                    (Some(nl), Some(nr)) => Some(self.push(Node::product(nl, nr), c.vtree_id(id))),
                    _ => None,
                }
            }
            Node::Sum { children, log_weights } => {
                let mut kept = Vec::with_capacity(children.len());
                let mut weights = Vec::with_capacity(children.len());
                for (&ch, &w) in children.iter().zip(log_weights) {
                    if let Some(nc) = self.condition(ch, depth + 1) {
                        kept.push(nc);
                        weights.push(w + self.log_marginal[ch]);
                    }
                }
                if kept.is_empty() {
                    None
                } else {
                    log_normalize(&mut weights);
                    Some(self.push(
                        Node::Sum {
                            children: kept,
                            log_weights: weights,
                        },
                        c.vtree_id(id),
                    ))
                }
            }
        };
        self.conditioned.insert(key, result);
        result
    }
}

/// Splits `edge` on `var`: the product child is replaced under its sum by
/// two copies conditioned on `var = 1` and `var = 0`.
///
/// Nodes containing `var` are conditioned all the way down to its literal;
/// other nodes are duplicated up to `depth_bound` levels below the product
/// and shared beyond. The new weights are chosen so that the split circuit
/// represents exactly the same distribution as `c`: each copy's sums are
/// reweighted by their children's marginal probability of the literal, and
/// the sum edge is divided by the product's marginal of each value.
pub fn split(c: &Circuit, edge: Edge, var: usize, depth_bound: usize) -> Result<Circuit> {
    if depth_bound < 1 {
        return Err(Error::InvalidArgument("depth bound must be at least 1".into()));
    }
    let j = match c.nodes().get(edge.sum) {
        Some(Node::Sum { children, .. }) => children
            .iter()
            .position(|&ch| ch == edge.child)
            .ok_or_else(|| Error::InvalidArgument(format!("{edge:?} is not an edge")))?,
        _ => return Err(Error::InvalidArgument(format!("node {} is not a sum", edge.sum))),
    };
    if !matches!(c.node(edge.child), Node::Product { .. }) {
        return Err(Error::InvalidArgument(format!("node {} is not a product", edge.child)));
    }
    let scopes = c.scopes();
    let scope = &scopes[edge.child];
    if scope.count_ones() < 2 {
        return Err(Error::InvalidArgument(format!(
            "node {} has a singleton scope",
            edge.child
        )));
    }
    if var >= c.num_vars() || !scope.get(var) {
        return Err(Error::InvalidArgument(format!(
            "variable {var} is not in the scope of node {}",
            edge.child
        )));
    }

    let mut nodes = c.nodes().to_vec();
    let mut vtree_ids = c.vtree_ids().to_vec();
    let mut branches = [(0usize, 0.0f64); 2];
    for value in [true, false] {
        let log_marginal = c.log_literal_marginals(var, value);
        let lm = log_marginal[edge.child];
        let mut cond = Conditioner {
            c,
            scopes: &scopes,
            var,
            value,
            log_marginal,
            depth_bound,
            nodes: &mut nodes,
            vtree_ids: &mut vtree_ids,
            conditioned: HashMap::new(),
            copied: HashMap::new(),
        };
        let id = cond
            .condition(edge.child, 0)
            .ok_or_else(|| Error::InvalidArgument(format!("node {} already fixes variable {var}", edge.child)))?;
        branches[!value as usize] = (id, lm);
    }

    let Node::Sum { children, log_weights } = &mut nodes[edge.sum] else {
        unreachable!()
    };
    let w = log_weights[j];
    children.splice(j..=j, [branches[0].0, branches[1].0]);
    log_weights.splice(j..=j, [w + branches[0].1, w + branches[1].1]);
    log_normalize(log_weights);

    Circuit::from_unordered(nodes, vtree_ids, c.root(), c.num_vars())
}

/// Splits and refits every parameter on `train` in closed form.
pub fn split_and_refit(
    c: &Circuit,
    edge: Edge,
    var: usize,
    depth_bound: usize,
    train: &Dataset,
    pseudocount: f64,
) -> Result<(Circuit, FlowMatrix)> {
    let s = split(c, edge, var, depth_bound)?;
    let f = compute_flows(&s, train)?;
    let a = aggregate_flows(&f, train.weights());
    let refit = s.with_params(&mle_log_params(&s, &a.counts, pseudocount))?;
    Ok((refit, f))
}

/// One row of the search log.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean per-sample log-likelihoods in nats.
    pub train_ll: f64,
    pub valid_ll: f64,
    /// Product plus sum edges.
    pub edges: usize,
    pub seconds: f64,
    pub split: Option<SplitCandidate>,
}

impl IterationRecord {
    pub const CSV_HEADER: &'static str = "iteration,train_ll,valid_ll,edges,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6}",
            self.iteration, self.train_ll, self.valid_ll, self.edges, self.seconds
        )
    }
}

fn mean_ll(c: &Circuit, f: &FlowMatrix, d: &Dataset) -> Result<f64> {
    Ok(log_likelihood(c, f)?.total / d.total_weight())
}

/// Step-wise search state. [`strudel_learn`] drives it to completion.
pub struct StrudelSearch<'a> {
    cfg: SearchConfig,
    train: &'a Dataset,
    valid: &'a Dataset,
    vtree: Vtree,
    circuit: Circuit,
    train_flows: FlowMatrix,
    rng: ChaCha8Rng,
    best: Circuit,
    best_valid: f64,
    best_iteration: usize,
    since_best: usize,
    iteration: usize,
    exhausted: bool,
    start: Instant,
    history: Vec<IterationRecord>,
}

impl<'a> StrudelSearch<'a> {
    /// Learns and compiles the Chow-Liu tree of `train` and records
    /// iteration 0.
    pub fn new(train: &'a Dataset, valid: &'a Dataset, cfg: SearchConfig) -> Result<Self> {
        let start = Instant::now();
        cfg.validate()?;
        if train.num_vars() != valid.num_vars() {
            return Err(Error::VariableMismatch {
                expected: train.num_vars(),
                found: valid.num_vars(),
            });
        }
        let tree = learn_clt(train, cfg.alpha)?;
        let vtree = Vtree::from_clt(&tree);
        let circuit = compile_clt(&tree, &vtree)?;
        Self::from_circuit(train, valid, circuit, vtree, cfg, start)
    }

    /// Starts from an existing structured circuit.
    pub fn from_circuit(
        train: &'a Dataset,
        valid: &'a Dataset,
        circuit: Circuit,
        vtree: Vtree,
        cfg: SearchConfig,
        start: Instant,
    ) -> Result<Self> {
        cfg.validate()?;
        let train_flows = compute_flows(&circuit, train)?;
        let train_ll = mean_ll(&circuit, &train_flows, train)?;
        let valid_ll = mean_ll(&circuit, &compute_flows(&circuit, valid)?, valid)?;
        let record = IterationRecord {
            iteration: 0,
            train_ll,
            valid_ll,
            edges: circuit.num_edges(),
            seconds: start.elapsed().as_secs_f64(),
            split: None,
        };
        Ok(StrudelSearch {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            train,
            valid,
            vtree,
            best: circuit.clone(),
            circuit,
            train_flows,
            best_valid: valid_ll,
            best_iteration: 0,
            since_best: 0,
            iteration: 0,
            exhausted: false,
            start,
            history: vec![record],
        })
    }

    pub fn circuit(&self) -> &Circuit {
        &self.circuit
    }

    pub fn vtree(&self) -> &Vtree {
        &self.vtree
    }

    pub fn best(&self) -> &Circuit {
        &self.best
    }

    pub fn best_iteration(&self) -> usize {
        self.best_iteration
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }

    pub fn is_done(&self) -> bool {
        self.exhausted || self.iteration >= self.cfg.max_iters || self.since_best >= self.cfg.patience
    }

    /// Chooses the next edge and variable without applying the split.
    pub fn propose(&mut self) -> Result<SplitCandidate> {
        let candidates = candidate_edges(&self.circuit);
        if candidates.is_empty() {
            return Err(Error::SearchExhausted);
        }
        let chosen = if self.cfg.heuristic.flow_edges() {
            let a = aggregate_flows(&self.train_flows, self.train.weights());
            score_edge_eflow(&candidates, &a.counts)?.clone()
        } else {
            pick(&candidates, &mut self.rng)?
        };
        let (variable, score) = if self.cfg.heuristic.mi_vars() {
            let scope: Vec<usize> = self.circuit.scopes()[chosen.edge.child].iter_ones().collect();
            let mask = self.train_flows.column(chosen.param);
            let v = score_var_vmi(self.train, &scope, &chosen.variables, Some(&mask), self.cfg.alpha)?;
            (v.variable, v.score)
        } else {
            (pick(&chosen.variables, &mut self.rng)?, 0.0)
        };
        Ok(SplitCandidate {
            edge: chosen.edge,
            variable,
            score,
        })
    }

    /// Runs one split iteration. Returns `None` once the search has stopped.
    pub fn step(&mut self) -> Result<Option<&IterationRecord>> {
        if self.is_done() {
            return Ok(None);
        }
        let cand = match self.propose() {
            Ok(c) => c,
            Err(Error::SearchExhausted) => {
                self.exhausted = true;
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let (circuit, flows) = split_and_refit(
            &self.circuit,
            cand.edge,
            cand.variable,
            self.cfg.depth_bound,
            self.train,
            self.cfg.pseudocount,
        )?;
        self.iteration += 1;
        let train_ll = mean_ll(&circuit, &flows, self.train)?;
        let valid_ll = mean_ll(&circuit, &compute_flows(&circuit, self.valid)?, self.valid)?;
        if valid_ll > self.best_valid {
            self.best_valid = valid_ll;
            self.best = circuit.clone();
            self.best_iteration = self.iteration;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        log::debug!(
            "iteration {}: split {:?} on X{} train {train_ll:.6} valid {valid_ll:.6}",
            self.iteration,
            cand.edge,
            cand.variable + 1
        );
        self.history.push(IterationRecord {
            iteration: self.iteration,
            train_ll,
            valid_ll,
            edges: circuit.num_edges(),
            seconds: self.start.elapsed().as_secs_f64(),
            split: Some(cand),
        });
        self.circuit = circuit;
        self.train_flows = flows;
        Ok(self.history.last())
    }

    pub fn run(mut self) -> Result<Learned> {
        while self.step()?.is_some() {}
        Ok(Learned {
            circuit: self.best,
            vtree: self.vtree,
            best_iteration: self.best_iteration,
            history: self.history,
        })
    }
}

/// Result of a structure search.
#[derive(Clone, Debug)]
pub struct Learned {
    /// Circuit with the best validation log-likelihood seen.
    pub circuit: Circuit,
    pub vtree: Vtree,
    pub best_iteration: usize,
    pub history: Vec<IterationRecord>,
}

/// Chow-Liu start followed by greedy splits until validation likelihood
/// stops improving for `cfg.patience` iterations or `cfg.max_iters` is hit.
pub fn strudel_learn(train: &Dataset, valid: &Dataset, cfg: &SearchConfig) -> Result<Learned> {
    StrudelSearch::new(train, valid, cfg.clone())?.run()
}
