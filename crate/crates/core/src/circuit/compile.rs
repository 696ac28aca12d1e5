use std::collections::HashMap;

use crate::bits::Bits;
use crate::cltree::ChowLiuTree;
use crate::error::{Error, Result};
use crate::vtree::{Vtree, VtreeId};

use super::{Circuit, Node, NodeId};

struct Builder {
    nodes: Vec<Node>,
    vtree_ids: Vec<VtreeId>,
    literals: HashMap<(usize, bool), NodeId>,
}

impl Builder {
    fn push(&mut self, node: Node, vtree: VtreeId) -> NodeId {
        self.nodes.push(node);
        self.vtree_ids.push(vtree);
        self.nodes.len() - 1
    }

    fn literal(&mut self, var: usize, positive: bool, vtree: VtreeId) -> NodeId {
        if let Some(&id) = self.literals.get(&(var, positive)) {
            return id;
        }
        let id = self.push(Node::Literal { var, positive }, vtree);
        self.literals.insert((var, positive), id);
        id
    }

    /// Sum over `[on_true, on_false]` weighted by `p(X=1)` and `1 - p(X=1)`.
    fn decision(&mut self, on_true: NodeId, on_false: NodeId, p_one: f64, vtree: VtreeId) -> NodeId {
        self.push(
            Node::Sum {
                children: vec![on_true, on_false],
                log_weights: vec![p_one.ln(), (1.0 - p_one).ln()],
            },
            vtree,
        )
    }
}

fn scope_names(scope: &Bits) -> String {
    let vars: Vec<String> = scope.iter_ones().map(|v| format!("X{}", v + 1)).collect();
    format!("{{{}}}", vars.join(","))
}

/// Compiles a rooted tree into a smooth, deterministic circuit normalized
/// for `v`, which must be the vtree induced by `t` (see [`Vtree::from_clt`]).
///
/// Every variable gets one decision sum per parent value; both sums share
/// the same two product children (one per value of the variable), so the
/// circuit has size linear in the number of variables.
pub fn compile_clt(t: &ChowLiuTree, v: &Vtree) -> Result<Circuit> {
    let m = t.num_vars();
    v.validate()
        .map_err(|e| Error::VtreeMismatch(format!("invalid vtree: {e}")))?;
    if v.num_vars() != m {
        return Err(Error::VariableMismatch {
            expected: m,
            found: v.num_vars(),
        });
    }
    let vt_scopes = v.scopes();
    let vt_parent = v.parents();
    let leaf_of = v.leaf_of_var();

    let order = t.topological_order();
    let mut subtree_scope: Vec<Bits> = vec![Bits::zeros(m); m];
    for &x in order.iter().rev() {
        let mut s = Bits::zeros(m);
        s.set(x, true);
        for &c in t.children(x) {
            let cs = subtree_scope[c].clone();
            s.or_assign(&cs);
        }
        subtree_scope[x] = s;
    }

    let mismatch = |node: VtreeId, expected: &Bits| {
        Error::VtreeMismatch(format!(
            "vtree node {node} covers {} but the tree needs {}",
            scope_names(&vt_scopes[node]),
            scope_names(expected)
        ))
    };

    let mut b = Builder {
        nodes: Vec::with_capacity(6 * m),
        vtree_ids: Vec::with_capacity(6 * m),
        literals: HashMap::new(),
    };
    // Decision sums of each variable for parent value false / true.
    let mut decision: Vec<[NodeId; 2]> = vec![[usize::MAX; 2]; m];
    // Vtree node covering the subtree of each variable.
    let mut subtree_vt: Vec<VtreeId> = vec![usize::MAX; m];
    let mut root_node = usize::MAX;

    for &x in order.iter().rev() {
        let leaf = leaf_of[x];
        let children = t.children(x);
        let is_root = t.parent(x).is_none();
        let (node_vt, on_true, on_false) = if children.is_empty() {
            let on_true = b.literal(x, true, leaf);
            let on_false = b.literal(x, false, leaf);
            (leaf, on_true, on_false)
        } else {
            let node_vt = vt_parent[leaf].ok_or_else(|| mismatch(leaf, &subtree_scope[x]))?;
            let (l, r) = v
                .children(node_vt)
                .ok_or_else(|| mismatch(node_vt, &subtree_scope[x]))?;
            if l != leaf {
                return Err(mismatch(node_vt, &subtree_scope[x]));
            }
            // Walk the right-deep chain over the children.
            let mut chain = Vec::with_capacity(children.len());
            let mut w = r;
            for (k, &c) in children.iter().enumerate() {
                if k + 1 == children.len() {
                    if w != subtree_vt[c] {
                        return Err(mismatch(w, &subtree_scope[c]));
                    }
                } else {
                    let (cl, cr) = v.children(w).ok_or_else(|| mismatch(w, &subtree_scope[c]))?;
                    if cl != subtree_vt[c] {
                        return Err(mismatch(cl, &subtree_scope[c]));
                    }
                    chain.push(w);
                    w = cr;
                }
            }
            let branch = |value: bool, b: &mut Builder| {
                let last = *children.last().unwrap();
                let mut acc = decision[last][value as usize];
                for (k, &c) in children[..children.len() - 1].iter().enumerate().rev() {
                    acc = b.push(Node::product(decision[c][value as usize], acc), chain[k]);
                }
                let lit = b.literal(x, value, leaf);
                b.push(Node::product(lit, acc), node_vt)
            };
            let on_true = branch(true, &mut b);
            let on_false = branch(false, &mut b);
            (node_vt, on_true, on_false)
        };
        if vt_scopes[node_vt] != subtree_scope[x] {
            return Err(mismatch(node_vt, &subtree_scope[x]));
        }
        subtree_vt[x] = node_vt;
        if is_root {
            root_node = b.decision(on_true, on_false, t.p_one(x)[0], node_vt);
        } else {
            let p = t.p_one(x);
            decision[x] = [
                b.decision(on_true, on_false, p[0], node_vt),
                b.decision(on_true, on_false, p[1], node_vt),
            ];
        }
    }
    if subtree_vt[t.root()] != v.root() {
        return Err(mismatch(v.root(), &subtree_scope[t.root()]));
    }
    debug_assert_eq!(root_node, b.nodes.len() - 1);
    Circuit::new(b.nodes, b.vtree_ids, m)
}
