use std::fmt;

use crate::bits::Bits;
use crate::vtree::{Vtree, VtreeNode};

use super::{Circuit, Node, NodeId};

/// A literal as `(variable, polarity)`.
pub type Lit = (usize, bool);

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StructureReport {
    pub smooth: bool,
    pub decomposable: bool,
    pub deterministic: bool,
    pub structured: bool,
    pub first_violation: Option<(NodeId, String)>,
}

impl StructureReport {
    pub fn all(&self) -> bool {
        self.smooth && self.decomposable && self.deterministic && self.structured
    }
}

impl fmt::Display for StructureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "smooth={} decomposable={} deterministic={} structured={}",
            self.smooth, self.decomposable, self.deterministic, self.structured
        )?;
        if let Some((node, reason)) = &self.first_violation {
            write!(f, " (node {node}: {reason})")?;
        }
        Ok(())
    }
}

/// Literals that every input in the support of each node must satisfy,
/// sorted by variable. Products take the union of their children's sets and
/// sums the intersection.
pub fn asserted_literals(c: &Circuit) -> Vec<Vec<Lit>> {
    let mut out: Vec<Vec<Lit>> = Vec::with_capacity(c.len());
    for node in c.nodes() {
        let set = match node {
            Node::Literal { var, positive } => vec![(*var, *positive)],
            Node::Product { children: [l, r] } => merge_union(&out[*l], &out[*r]),
            Node::Sum { children, .. } => {
                let mut acc = out[children[0]].clone();
                for &ch in &children[1..] {
                    if acc.is_empty() {
                        break;
                    }
                    acc = intersect(&acc, &out[ch]);
                }
                acc
            }
        };
        out.push(set);
    }
    out
}

fn merge_union(a: &[Lit], b: &[Lit]) -> Vec<Lit> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

fn intersect(a: &[Lit], b: &[Lit]) -> Vec<Lit> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// True when some variable is asserted with opposite polarities.
fn conflicting(a: &[Lit], b: &[Lit]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let (va, pa) = a[i];
        let (vb, pb) = b[j];
        if va < vb {
            i += 1;
        } else if vb < va {
            j += 1;
        } else {
            if pa != pb {
                return true;
            }
            i += 1;
            j += 1;
        }
    }
    false
}

fn is_subset(a: &Bits, b: &Bits) -> bool {
    a.words().iter().zip(b.words()).all(|(x, y)| x & !y == 0)
}

/// Checks smoothness, decomposability, structural determinism and
/// normalization for `v`.
///
/// Determinism is verified structurally: every pair of children of a sum
/// must assert complementary literals of some variable, which rules out
/// overlapping supports without enumerating inputs.
pub fn check_structure(c: &Circuit, v: &Vtree) -> StructureReport {
    let scopes = c.scopes();
    let asserted = asserted_literals(c);
    let mut smooth = true;
    let mut decomposable = true;
    let mut deterministic = true;
    let mut normalized = true;
    let mut first: Option<(NodeId, String)> = None;
    let flag = |first: &mut Option<(NodeId, String)>, id: NodeId, reason: String| {
        if first.is_none() {
            *first = Some((id, reason));
        }
    };

    let vtree_ok = v.validate();
    let vt_scopes = if vtree_ok.is_ok() && v.num_vars() == c.num_vars() {
        Some(v.scopes())
    } else {
        normalized = false;
        let reason = match vtree_ok {
            Err(e) => format!("vtree is invalid: {e}"),
            Ok(()) => format!("vtree has {} variables, circuit has {}", v.num_vars(), c.num_vars()),
        };
        flag(&mut first, c.root(), reason);
        None
    };

    if scopes[c.root()].count_ones() != c.num_vars() {
        smooth = false;
        flag(&mut first, c.root(), "root does not cover every variable".into());
    }

    for (id, node) in c.nodes().iter().enumerate() {
        match node {
            Node::Literal { var, .. } => {
                let vt = c.vtree_id(id);
                if vt_scopes.is_some() && (vt >= v.len() || !matches!(v.node(vt), VtreeNode::Leaf(x) if x == var)) {
                    normalized = false;
                    flag(&mut first, id, "literal is not annotated with its vtree leaf".into());
                }
            }
            Node::Product { children: [l, r] } => {
                if scopes[*l].and_count(&scopes[*r]) != 0 {
                    decomposable = false;
                    flag(&mut first, id, "product children share variables".into());
                }
                if let Some(vs) = &vt_scopes {
                    let vt = c.vtree_id(id);
                    match (vt < v.len()).then(|| v.children(vt)).flatten() {
                        Some((vl, vr)) => {
                            let fits = scopes[*l].any()
                                && scopes[*r].any()
                                && is_subset(&scopes[*l], &vs[vl])
                                && is_subset(&scopes[*r], &vs[vr]);
                            if !fits {
                                normalized = false;
                                flag(&mut first, id, format!("scope split does not follow vtree node {vt}"));
                            }
                        }
                        None => {
                            normalized = false;
                            flag(&mut first, id, format!("vtree node {vt} is not internal"));
                        }
                    }
                }
            }
            Node::Sum { children, .. } => {
                if children.iter().any(|&ch| scopes[ch] != scopes[children[0]]) {
                    smooth = false;
                    flag(&mut first, id, "sum children have different scopes".into());
                }
                'pairs: for (a, &ca) in children.iter().enumerate() {
                    for &cb in &children[a + 1..] {
                        if !conflicting(&asserted[ca], &asserted[cb]) {
                            deterministic = false;
                            flag(
                                &mut first,
                                id,
                                format!("children {ca} and {cb} are not separated by a literal"),
                            );
                            break 'pairs;
                        }
                    }
                }
            }
        }
    }

    StructureReport {
        smooth,
        decomposable,
        deterministic,
        structured: normalized && decomposable,
        first_violation: first,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_var_vtree() -> Vtree {
        Vtree::from_nodes(
            vec![VtreeNode::Leaf(0), VtreeNode::Leaf(1), VtreeNode::Internal(vec![0, 1])],
            2,
        )
    }

    #[test]
    fn non_deterministic_sum() {
        // Both children assert X1 = 1 on the branch variable.
        let half = 0.5f64.ln();
        let c = Circuit::new(
            vec![
                Node::Literal { var: 0, positive: true },
                Node::Literal { var: 1, positive: true },
                Node::Literal {
                    var: 1,
                    positive: false,
                },
                Node::product(0, 1),
                Node::product(0, 2),
                Node::Sum {
                    children: vec![3, 4, 3],
                    log_weights: vec![(0.25f64).ln(), half, (0.25f64).ln()],
                },
            ],
            vec![0, 1, 1, 2, 2, 2],
            2,
        )
        .unwrap();
        let r = check_structure(&c, &two_var_vtree());
        assert!(r.smooth && r.decomposable && r.structured);
        assert!(!r.deterministic);
    }

    #[test]
    fn product_against_wrong_vtree_node() {
        let c = Circuit::new(
            vec![
                Node::Literal { var: 0, positive: true },
                Node::Literal { var: 1, positive: true },
                // Left child holds X2 but the vtree puts X1 on the left.
                Node::product(1, 0),
            ],
            vec![0, 1, 2],
            2,
        )
        .unwrap();
        let r = check_structure(&c, &two_var_vtree());
        assert!(r.decomposable);
        assert!(!r.structured);
        assert_eq!(r.first_violation.as_ref().unwrap().0, 2);
    }

    #[test]
    fn non_decomposable_product() {
        let c = Circuit::new(
            vec![
                Node::Literal { var: 0, positive: true },
                Node::Literal {
                    var: 0,
                    positive: false,
                },
                Node::Literal { var: 1, positive: true },
                Node::product(0, 1),
                Node::product(3, 2),
            ],
            vec![0, 0, 1, 2, 2],
            2,
        )
        .unwrap();
        let r = check_structure(&c, &two_var_vtree());
        assert!(!r.decomposable);
        assert!(!r.structured);
    }

    #[test]
    fn set_helpers() {
        let a = [(0, true), (2, false)];
        let b = [(1, true), (2, true)];
        assert!(conflicting(&a, &b));
        assert!(!conflicting(&a, &[(2, false)]));
        assert_eq!(merge_union(&a, &b), vec![(0, true), (1, true), (2, false), (2, true)]);
        assert_eq!(intersect(&a, &[(2, false), (3, true)]), vec![(2, false)]);
    }
}
