//! Probabilistic circuits over binary variables.
//!
//! A [`Circuit`] is a node array in topological order (children first, root
//! last). Leaves are indicator literals, products have exactly two children
//! and sum edges carry log-weights. Sum edges are enumerated globally in node
//! order; that enumeration is the parameter index used by flows.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::bits::Bits;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::logspace::logsumexp;
use crate::vtree::VtreeId;

mod compile;
mod structure;

pub use compile::compile_clt;
pub use structure::{asserted_literals, check_structure, Lit, StructureReport};

pub type NodeId = usize;

/// Tolerance on `logsumexp(log_weights) == 0` for every sum node.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Literal {
        var: usize,
        positive: bool,
    },
    /// `[left, right]`, matching the vtree node the product is normalized for.
    Product {
        children: [NodeId; 2],
    },
    Sum {
        children: Vec<NodeId>,
        log_weights: Vec<f64>,
    },
}

impl Node {
    pub fn product(left: NodeId, right: NodeId) -> Node {
        Node::Product {
            children: [left, right],
        }
    }

    pub fn children(&self) -> &[NodeId] {
        match self {
            Node::Literal { .. } => &[],
            Node::Product { children } => children,
            Node::Sum { children, .. } => children,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    nodes: Vec<Node>,
    vtree_ids: Vec<VtreeId>,
    num_vars: usize,
    param_offset: Vec<usize>,
    num_params: usize,
}

impl Circuit {
    /// Validates and wraps a topologically ordered node array whose last node
    /// is the root.
    pub fn new(nodes: Vec<Node>, vtree_ids: Vec<VtreeId>, num_vars: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::MalformedCircuit("no nodes".into()));
        }
        if vtree_ids.len() != nodes.len() {
            return Err(Error::MalformedCircuit("one vtree id per node required".into()));
        }
        let mut param_offset = vec![usize::MAX; nodes.len()];
        let mut num_params = 0;
        for (id, node) in nodes.iter().enumerate() {
            match node {
                Node::Literal { var, .. } => {
                    if *var >= num_vars {
                        return Err(Error::MalformedCircuit(format!(
                            "node {id}: variable {var} out of range"
                        )));
                    }
                }
                Node::Product { children } => {
                    if children.iter().any(|&c| c >= id) {
                        return Err(Error::MalformedCircuit(format!(
                            "node {id}: children must precede parents"
                        )));
                    }
                }
                Node::Sum { children, log_weights } => {
                    if children.is_empty() || children.len() != log_weights.len() {
                        return Err(Error::MalformedCircuit(format!(
                            "node {id}: sum needs one weight per child"
                        )));
                    }
                    if children.iter().any(|&c| c >= id) {
                        return Err(Error::MalformedCircuit(format!(
                            "node {id}: children must precede parents"
                        )));
                    }
                    if log_weights.iter().any(|w| w.is_nan() || *w > 0.0 && w.is_infinite()) {
                        return Err(Error::MalformedCircuit(format!("node {id}: bad weight")));
                    }
                    let z = logsumexp(log_weights);
                    if z.is_nan() || z.abs() > NORMALIZATION_TOL {
                        return Err(Error::MalformedCircuit(format!("node {id}: weights sum to exp({z})")));
                    }
                    param_offset[id] = num_params;
                    num_params += children.len();
                }
            }
        }
        Ok(Circuit {
            nodes,
            vtree_ids,
            num_vars,
            param_offset,
            num_params,
        })
    }

    /// Accepts nodes in any order (children referenced by index into
    /// `nodes`), keeps only what is reachable from `root` and renumbers in
    /// depth-first post-order.
    pub fn from_unordered(nodes: Vec<Node>, vtree_ids: Vec<VtreeId>, root: NodeId, num_vars: usize) -> Result<Self> {
        let n = nodes.len();
        let mut new_id = vec![usize::MAX; n];
        let mut order = Vec::new();
        let mut on_stack = vec![false; n];
        let mut stack = vec![(root, 0usize)];
        on_stack[root] = true;
        while let Some(top) = stack.len().checked_sub(1) {
            let (u, next) = stack[top];
            let children = nodes[u].children();
            if next < children.len() {
                let c = children[next];
                stack[top].1 += 1;
                if new_id[c] == usize::MAX {
                    if on_stack[c] {
                        return Err(Error::MalformedCircuit("cycle".into()));
                    }
                    on_stack[c] = true;
                    stack.push((c, 0));
                }
            } else {
                stack.pop();
                on_stack[u] = false;
                new_id[u] = order.len();
                order.push(u);
            }
        }
        let mut out_nodes = Vec::with_capacity(order.len());
        let mut out_vtree = Vec::with_capacity(order.len());
        for &old in &order {
            let node = match &nodes[old] {
                Node::Literal { var, positive } => Node::Literal {
                    var: *var,
                    positive: *positive,
                },
                Node::Product { children } => Node::Product {
                    children: children.map(|c| new_id[c]),
                },
                Node::Sum { children, log_weights } => Node::Sum {
                    children: children.iter().map(|&c| new_id[c]).collect(),
                    log_weights: log_weights.clone(),
                },
            };
            out_nodes.push(node);
            out_vtree.push(vtree_ids[old]);
        }
        Circuit::new(out_nodes, out_vtree, num_vars)
    }

    #[inline]
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    #[inline]
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn root(&self) -> NodeId {
        self.nodes.len() - 1
    }

    #[inline]
    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    #[inline]
    pub fn num_params(&self) -> usize {
        self.num_params
    }

    #[inline]
    pub fn vtree_id(&self, id: NodeId) -> VtreeId {
        self.vtree_ids[id]
    }

    pub fn vtree_ids(&self) -> &[VtreeId] {
        &self.vtree_ids
    }

    /// Parameter index of the first outgoing edge of sum node `id`.
    #[inline]
    pub fn param_offset(&self, id: NodeId) -> usize {
        debug_assert!(matches!(self.nodes[id], Node::Sum { .. }));
        self.param_offset[id]
    }

    /// Number of edges (product edges plus sum edges).
    pub fn num_edges(&self) -> usize {
        self.nodes.iter().map(|n| n.children().len()).sum()
    }

    /// All sum-edge log-weights in parameter order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params);
        for node in &self.nodes {
            if let Node::Sum { log_weights, .. } = node {
                out.extend_from_slice(log_weights);
            }
        }
        out
    }

    /// Same structure with new log-weights given in parameter order.
    pub fn with_params(&self, params: &[f64]) -> Result<Circuit> {
        if params.len() != self.num_params {
            return Err(Error::InvalidArgument(format!(
                "{} parameters for a circuit with {}",
                params.len(),
                self.num_params
            )));
        }
        let mut nodes = self.nodes.clone();
        for (id, node) in nodes.iter_mut().enumerate() {
            if let Node::Sum { log_weights, .. } = node {
                let off = self.param_offset[id];
                let k = log_weights.len();
                log_weights.copy_from_slice(&params[off..off + k]);
                let z = logsumexp(log_weights);
                if z.is_nan() || z.abs() > NORMALIZATION_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "weights of sum node {id} are not normalized"
                    )));
                }
            }
        }
        Ok(Circuit { nodes, ..self.clone() })
    }

    /// Variable set of every node.
    pub fn scopes(&self) -> Vec<Bits> {
        let mut scopes: Vec<Bits> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let mut s = Bits::zeros(self.num_vars);
            match node {
                Node::Literal { var, .. } => s.set(*var, true),
                _ => {
                    for &c in node.children() {
                        s.or_assign(&scopes[c]);
                    }
                }
            }
            scopes.push(s);
        }
        scopes
    }

    /// Log-probability of a complete assignment by one bottom-up pass.
    pub fn evaluate_classical(&self, x: &[bool]) -> f64 {
        let mut values = vec![0.0; self.nodes.len()];
        let mut scratch = Vec::new();
        self.evaluate_into(x, &mut values, &mut scratch, None);
        values[self.root()]
    }

    fn evaluate_into(&self, x: &[bool], values: &mut [f64], scratch: &mut Vec<f64>, params: Option<&[f64]>) {
        for (id, node) in self.nodes.iter().enumerate() {
            values[id] = match node {
                Node::Literal { var, positive } => {
                    if x[*var] == *positive {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                }
                Node::Product { children: [l, r] } => values[*l] + values[*r],
                Node::Sum { children, log_weights } => {
                    let weights = match params {
                        Some(p) => &p[self.param_offset[id]..self.param_offset[id] + children.len()],
                        None => log_weights.as_slice(),
                    };
                    scratch.clear();
                    scratch.extend(children.iter().zip(weights).map(|(&c, &w)| w + values[c]));
                    logsumexp(scratch)
                }
            };
        }
    }

    /// Per-sample log-likelihoods by bottom-up evaluation over batches of
    /// samples, optionally with replacement parameters (in parameter order).
    /// This is the float-valued baseline that flows are compared against.
    pub fn log_likelihoods_classical(&self, d: &Dataset, params: Option<&[f64]>) -> Vec<f64> {
        const BATCH: usize = 64;
        let n = d.num_rows();
        let mut out = vec![0.0; n];
        out.par_chunks_mut(BATCH).enumerate().for_each(|(b, chunk)| {
            let start = b * BATCH;
            let width = chunk.len();
            let mut values = vec![0.0f64; self.nodes.len() * width];
            for (id, node) in self.nodes.iter().enumerate() {
                let (done, rest) = values.split_at_mut(id * width);
                let slot = &mut rest[..width];
                match node {
                    Node::Literal { var, positive } => {
                        let col = d.column(*var);
                        for (s, v) in slot.iter_mut().enumerate() {
                            *v = if col.get(start + s) == *positive {
                                0.0
                            } else {
                                f64::NEG_INFINITY
                            };
                        }
                    }
                    Node::Product {
                        children: [left, right],
                    } => {
                        let l = &done[left * width..(left + 1) * width];
                        let r = &done[right * width..(right + 1) * width];
                        for s in 0..width {
                            slot[s] = l[s] + r[s];
                        }
                    }
                    Node::Sum { children, log_weights } => {
                        let weights = match params {
                            Some(p) => &p[self.param_offset[id]..self.param_offset[id] + children.len()],
                            None => log_weights.as_slice(),
                        };
                        slot.fill(f64::NEG_INFINITY);
                        let mut maxes = vec![f64::NEG_INFINITY; width];
                        for (&c, &w) in children.iter().zip(weights) {
                            let cv = &done[c * width..(c + 1) * width];
                            for s in 0..width {
                                maxes[s] = maxes[s].max(w + cv[s]);
                            }
                        }
                        let mut acc = vec![0.0f64; width];
                        for (&c, &w) in children.iter().zip(weights) {
                            let cv = &done[c * width..(c + 1) * width];
                            for s in 0..width {
                                if maxes[s] > f64::NEG_INFINITY {
                                    acc[s] += (w + cv[s] - maxes[s]).exp();
                                }
                            }
                        }
                        for s in 0..width {
                            if maxes[s] > f64::NEG_INFINITY {
                                slot[s] = maxes[s] + acc[s].ln();
                            }
                        }
                    }
                }
            }
            let root = self.nodes.len() - 1;
            chunk.copy_from_slice(&values[root * width..(root + 1) * width]);
        });
        out
    }

    /// `log p_n(X_var = value)` for every node `n`, marginalizing all other
    /// variables. Nodes whose scope excludes `var` get `0`.
    pub fn log_literal_marginals(&self, var: usize, value: bool) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes.len()];
        let mut scratch = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            out[id] = match node {
                Node::Literal { var: v, positive } => {
                    if *v == var && *positive != value {
                        f64::NEG_INFINITY
                    } else {
                        0.0
                    }
                }
                Node::Product { children: [l, r] } => out[*l] + out[*r],
                Node::Sum { children, log_weights } => {
                    scratch.clear();
                    scratch.extend(children.iter().zip(log_weights).map(|(&c, &w)| w + out[c]));
                    logsumexp(&scratch)
                }
            };
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "c circuit: {} nodes, {} parameters, {} variables",
            self.nodes.len(),
            self.num_params,
            self.num_vars
        )
        .unwrap();
        for (id, node) in self.nodes.iter().enumerate() {
            let vt = self.vtree_ids[id];
            match node {
                Node::Literal { var, positive } => {
                    let lit = (*var as i64 + 1) * if *positive { 1 } else { -1 };
                    writeln!(out, "L {id} {vt} {lit}").unwrap();
                }
                Node::Product { children: [l, r] } => {
                    writeln!(out, "P {id} {vt} {l} {r}").unwrap();
                }
                Node::Sum { children, log_weights } => {
                    write!(out, "S {id} {vt} {}", children.len()).unwrap();
                    for (c, w) in children.iter().zip(log_weights) {
                        write!(out, " {c} {w:?}").unwrap();
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    /// Parses the line format written by [`Circuit::to_text`]. The variable
    /// count is the largest literal variable.
    pub fn parse(text: &str) -> Result<Circuit> {
        let mut index: HashMap<usize, NodeId> = HashMap::new();
        let mut nodes = Vec::new();
        let mut vtree_ids = Vec::new();
        let mut num_vars = 0;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let toks: Vec<&str> = line.split_whitespace().collect();
            let Some(&tag) = toks.first() else { continue };
            if tag == "c" {
                continue;
            }
            let uint = |i: usize| -> Result<usize> {
                toks.get(i)
                    .and_then(|t| t.parse::<usize>().ok())
                    .ok_or_else(|| Error::format(line_no, format!("expected integer at field {i}")))
            };
            let child = |i: usize| -> Result<NodeId> {
                let raw = uint(i)?;
                index
                    .get(&raw)
                    .copied()
                    .ok_or_else(|| Error::format(line_no, format!("child {raw} not defined before use")))
            };
            let id = uint(1)?;
            let vt = uint(2)?;
            let node = match tag {
                "L" => {
                    if toks.len() != 4 {
                        return Err(Error::format(line_no, "expected `L <id> <vtree> <lit>`"));
                    }
                    let lit: i64 = toks[3].parse().map_err(|_| Error::format(line_no, "bad literal"))?;
                    if lit == 0 {
                        return Err(Error::format(line_no, "literal 0 is not allowed"));
                    }
                    let var = lit.unsigned_abs() as usize - 1;
                    num_vars = num_vars.max(var + 1);
                    Node::Literal { var, positive: lit > 0 }
                }
                "P" => {
                    if toks.len() != 5 {
                        return Err(Error::format(line_no, "expected `P <id> <vtree> <left> <right>`"));
                    }
                    Node::product(child(3)?, child(4)?)
                }
                "S" => {
                    let k = uint(3)?;
                    if k == 0 || toks.len() != 4 + 2 * k {
                        return Err(Error::format(line_no, "sum arity does not match its fields"));
                    }
                    let mut children = Vec::with_capacity(k);
                    let mut log_weights = Vec::with_capacity(k);
                    for j in 0..k {
                        children.push(child(4 + 2 * j)?);
                        let w: f64 = toks[5 + 2 * j]
                            .parse()
                            .map_err(|_| Error::format(line_no, "bad log-weight"))?;
                        log_weights.push(w);
                    }
                    Node::Sum { children, log_weights }
                }
                other => return Err(Error::format(line_no, format!("unknown node tag {other:?}"))),
            };
            if index.insert(id, nodes.len()).is_some() {
                return Err(Error::format(line_no, format!("duplicate node id {id}")));
            }
            nodes.push(node);
            vtree_ids.push(vt);
        }
        Circuit::new(nodes, vtree_ids, num_vars)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Circuit> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Circuit::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
