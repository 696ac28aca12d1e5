//! Variable trees: full binary trees whose leaves are the variables.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use crate::bits::Bits;
use crate::cltree::ChowLiuTree;
use crate::error::{Error, Result};

pub type VtreeId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VtreeNode {
    Leaf(usize),
    /// Children in left-to-right order. A valid vtree has exactly two.
    Internal(Vec<VtreeId>),
}

/// Nodes are stored children-first; `root` is normally the last node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vtree {
    nodes: Vec<VtreeNode>,
    root: VtreeId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VtreeViolation {
    Empty,
    NotFullBinary { node: VtreeId },
    DanglingChild { node: VtreeId, child: VtreeId },
    ChildAfterParent { node: VtreeId, child: VtreeId },
    SharedNode { node: VtreeId },
    Unreachable { node: VtreeId },
    VariableMultiplicity { var: usize },
    MissingVariable { var: usize },
}

impl fmt::Display for VtreeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use VtreeViolation::*;
        match self {
            Empty => write!(f, "empty vtree"),
            NotFullBinary { node } => write!(f, "not full binary at node {node}"),
            DanglingChild { node, child } => write!(f, "node {node} refers to missing child {child}"),
            ChildAfterParent { node, child } => {
                write!(f, "child {child} does not precede its parent {node}")
            }
            SharedNode { node } => write!(f, "node {node} has more than one parent"),
            Unreachable { node } => write!(f, "node {node} is not reachable from the root"),
            VariableMultiplicity { var } => write!(f, "variable multiplicity: {var} appears more than once"),
            MissingVariable { var } => write!(f, "variable {var} has no leaf"),
        }
    }
}

impl Vtree {
    pub fn from_nodes(nodes: Vec<VtreeNode>, root: VtreeId) -> Self {
        Vtree { nodes, root }
    }

    pub fn leaf(var: usize) -> Self {
        Vtree {
            nodes: vec![VtreeNode::Leaf(var)],
            root: 0,
        }
    }

    #[inline]
    pub fn root(&self) -> VtreeId {
        self.root
    }

    #[inline]
    pub fn nodes(&self) -> &[VtreeNode] {
        &self.nodes
    }

    #[inline]
    pub fn node(&self, id: VtreeId) -> &VtreeNode {
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

    pub fn num_vars(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, VtreeNode::Leaf(_))).count()
    }

    /// `(left, right)` of an internal node.
    pub fn children(&self, id: VtreeId) -> Option<(VtreeId, VtreeId)> {
        match &self.nodes[id] {
            VtreeNode::Internal(c) if c.len() == 2 => Some((c[0], c[1])),
            _ => None,
        }
    }

    /// Checks the full-binary, single-parent and one-leaf-per-variable
    /// invariants, reporting the first violation found.
    pub fn validate(&self) -> Result<(), VtreeViolation> {
        if self.nodes.is_empty() || self.root >= self.nodes.len() {
            return Err(VtreeViolation::Empty);
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            if let VtreeNode::Internal(children) = node {
                if children.len() != 2 {
                    return Err(VtreeViolation::NotFullBinary { node: id });
                }
                for &c in children {
                    if c >= self.nodes.len() {
                        return Err(VtreeViolation::DanglingChild { node: id, child: c });
                    }
                    if c >= id {
                        return Err(VtreeViolation::ChildAfterParent { node: id, child: c });
                    }
                    parents[c] += 1;
                    if parents[c] > 1 {
                        return Err(VtreeViolation::SharedNode { node: c });
                    }
                }
            }
        }
        if parents[self.root] != 0 {
            return Err(VtreeViolation::SharedNode { node: self.root });
        }
        let mut reached = vec![false; self.nodes.len()];
        let mut stack = vec![self.root];
        while let Some(u) = stack.pop() {
            reached[u] = true;
            if let VtreeNode::Internal(c) = &self.nodes[u] {
                stack.extend(c.iter().copied());
            }
        }
        if let Some(node) = reached.iter().position(|r| !r) {
            return Err(VtreeViolation::Unreachable { node });
        }
        let leaves = self.num_vars();
        let mut seen = vec![false; leaves];
        for node in &self.nodes {
            if let VtreeNode::Leaf(v) = *node {
                if v >= leaves {
                    // More leaves than distinct indices below `leaves` means a gap.
                    let missing = seen.iter().position(|s| !s).unwrap_or(v);
                    return Err(VtreeViolation::MissingVariable { var: missing });
                }
                if seen[v] {
                    return Err(VtreeViolation::VariableMultiplicity { var: v });
                }
                seen[v] = true;
            }
        }
        Ok(())
    }

    /// Parent of every node (`None` for the root).
    pub fn parents(&self) -> Vec<Option<VtreeId>> {
        let mut parent = vec![None; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            if let VtreeNode::Internal(c) = node {
                for &ch in c {
                    parent[ch] = Some(id);
                }
            }
        }
        parent
    }

    /// Leaf node id of every variable.
    pub fn leaf_of_var(&self) -> Vec<VtreeId> {
        let mut leaf = vec![usize::MAX; self.num_vars()];
        for (id, node) in self.nodes.iter().enumerate() {
            if let VtreeNode::Leaf(v) = *node {
                if v < leaf.len() {
                    leaf[v] = id;
                }
            }
        }
        leaf
    }

    /// Variable set below every node. Assumes children precede parents.
    pub fn scopes(&self) -> Vec<Bits> {
        let m = self.num_vars();
        let mut scopes: Vec<Bits> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let mut s = Bits::zeros(m);
            match node {
                VtreeNode::Leaf(v) => s.set(*v, true),
                VtreeNode::Internal(c) => {
                    for &ch in c {
                        s.or_assign(&scopes[ch]);
                    }
                }
            }
            scopes.push(s);
        }
        scopes
    }

    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            if let VtreeNode::Internal(c) = node {
                depth[id] = 1 + c.iter().map(|&ch| depth[ch]).max().unwrap_or(0);
            }
        }
        depth[self.root]
    }

    /// Serializes in the `L`/`I` line format with 1-based variables. Node
    /// ids are array positions, so a valid vtree is written children-first.
    pub fn to_text(&self) -> String {
        let mut out = format!("c vtree with {} nodes\n", self.nodes.len());
        let mut order: Vec<VtreeId> = (0..self.nodes.len()).filter(|&i| i != self.root).collect();
        order.push(self.root);
        for id in order {
            match &self.nodes[id] {
                VtreeNode::Leaf(v) => writeln!(out, "L {id} {}", v + 1).unwrap(),
                VtreeNode::Internal(c) => {
                    write!(out, "I {id}").unwrap();
                    for ch in c {
                        write!(out, " {ch}").unwrap();
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    /// Parses the `L`/`I` line format. Node ids must be exactly `0..n`; each
    /// node is stored at the index given by its id and the last line is the
    /// root.
    pub fn parse(text: &str) -> Result<Self> {
        let mut defined: HashMap<usize, VtreeNode> = HashMap::new();
        let mut last = None;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let mut toks = line.split_whitespace();
            let Some(tag) = toks.next() else { continue };
            if tag == "c" {
                continue;
            }
            let nums = toks
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| Error::format(line_no, format!("bad integer {t:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let node = match tag {
                "L" => match nums[..] {
                    [_, v] if v >= 1 => VtreeNode::Leaf(v - 1),
                    _ => return Err(Error::format(line_no, "expected `L <id> <var>`")),
                },
                "I" => {
                    if nums.len() < 2 {
                        return Err(Error::format(line_no, "expected `I <id> <left> <right>`"));
                    }
                    if let Some(c) = nums[1..].iter().find(|c| !defined.contains_key(c)) {
                        return Err(Error::format(line_no, format!("child {c} not defined before use")));
                    }
                    VtreeNode::Internal(nums[1..].to_vec())
                }
                other => return Err(Error::format(line_no, format!("unknown tag {other:?}"))),
            };
            let id = nums[0];
            if defined.insert(id, node).is_some() {
                return Err(Error::format(line_no, format!("duplicate node id {id}")));
            }
            last = Some(id);
        }
        let root = last.ok_or_else(|| Error::format(0, "empty vtree"))?;
        let n = defined.len();
        let mut nodes = Vec::with_capacity(n);
        for id in 0..n {
            match defined.remove(&id) {
                Some(node) => nodes.push(node),
                None => return Err(Error::format(0, format!("node ids must be 0..{n}; {id} missing"))),
            }
        }
        Ok(Vtree { nodes, root })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vtree::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Builds the vtree induced by a rooted tree: each variable with children
    /// becomes an internal node whose left branch is the variable's leaf and
    /// whose right branch covers its children, chained right-deep in
    /// ascending index order.
    pub fn from_clt(t: &ChowLiuTree) -> Self {
        let mut nodes = Vec::with_capacity(2 * t.num_vars() - 1);
        let mut subtree = vec![usize::MAX; t.num_vars()];
        let order = t.topological_order();
        for &v in order.iter().rev() {
            let children = t.children(v);
            let leaf = nodes.len();
            nodes.push(VtreeNode::Leaf(v));
            if children.is_empty() {
                subtree[v] = leaf;
                continue;
            }
            let mut acc = subtree[*children.last().unwrap()];
            for &c in children[..children.len() - 1].iter().rev() {
                nodes.push(VtreeNode::Internal(vec![subtree[c], acc]));
                acc = nodes.len() - 1;
            }
            nodes.push(VtreeNode::Internal(vec![leaf, acc]));
            subtree[v] = nodes.len() - 1;
        }
        let root = subtree[t.root()];
        Vtree { nodes, root }
    }
}
