//! Test oracles written independently of the library's evaluation code.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use strudel::{Circuit, Dataset, Node};

/// All `2^m` complete assignments, variable 0 as the lowest bit.
pub fn all_assignments(m: usize) -> Vec<Vec<bool>> {
    (0..1usize << m)
        .map(|bits| (0..m).map(|v| bits >> v & 1 == 1).collect())
        .collect()
}

pub fn random_rows<R: Rng>(rng: &mut R, m: usize, n: usize) -> Vec<Vec<bool>> {
    (0..n).map(|_| (0..m).map(|_| rng.gen_bool(0.5)).collect()).collect()
}

/// Rows with dependencies: each variable copies a random earlier one with
/// probability 0.7, otherwise flips a biased coin.
pub fn correlated_dataset<R: Rng>(rng: &mut R, m: usize, n: usize) -> Dataset {
    let src: Vec<Option<usize>> = (0..m).map(|v| (v > 0).then(|| rng.gen_range(0..v))).collect();
    let bias: Vec<f64> = (0..m).map(|_| rng.gen_range(0.15..0.85)).collect();
    let rows: Vec<Vec<bool>> = (0..n)
        .map(|_| {
            let mut x = vec![false; m];
            for v in 0..m {
                x[v] = match src[v] {
                    Some(s) if rng.gen_bool(0.7) => x[s] ^ rng.gen_bool(0.1),
                    _ => rng.gen_bool(bias[v]),
                };
            }
            x
        })
        .collect();
    Dataset::from_rows(&rows).unwrap()
}

/// Probability of `x` by plain recursion in linear space, memoized per node.
pub fn reference_prob(c: &Circuit, x: &[bool]) -> f64 {
    fn go(c: &Circuit, id: usize, x: &[bool], memo: &mut HashMap<usize, f64>) -> f64 {
        if let Some(&v) = memo.get(&id) {
            return v;
        }
        let v = match c.node(id) {
            Node::Literal { var, positive } => (x[*var] == *positive) as u8 as f64,
            Node::Product { children } => children.iter().map(|&ch| go(c, ch, x, memo)).product(),
            Node::Sum { children, log_weights } => children
                .iter()
                .zip(log_weights)
                .map(|(&ch, w)| w.exp() * go(c, ch, x, memo))
                .sum(),
        };
        memo.insert(id, v);
        v
    }
    go(c, c.root(), x, &mut HashMap::new())
}

/// Per-node values of the reference recursion.
fn node_values(c: &Circuit, x: &[bool]) -> Vec<f64> {
    let mut vals = vec![0.0; c.len()];
    for id in 0..c.len() {
        vals[id] = match c.node(id) {
            Node::Literal { var, positive } => (x[*var] == *positive) as u8 as f64,
            Node::Product { children } => children.iter().map(|&ch| vals[ch]).product(),
            Node::Sum { children, log_weights } => children
                .iter()
                .zip(log_weights)
                .map(|(&ch, w)| w.exp() * vals[ch])
                .sum(),
        };
    }
    vals
}

/// Sum-edge parameter indices active for `x`, found by walking down from
/// the root into every child with non-zero value. Edges are enumerated in
/// node order, as in the circuit file format.
pub fn reference_flow_row(c: &Circuit, x: &[bool]) -> Vec<usize> {
    let vals = node_values(c, x);
    let mut offsets = vec![usize::MAX; c.len()];
    let mut next = 0;
    for (id, node) in c.nodes().iter().enumerate() {
        if let Node::Sum { children, .. } = node {
            offsets[id] = next;
            next += children.len();
        }
    }
    let mut active = Vec::new();
    let mut seen = vec![false; c.len()];
    let mut stack = Vec::new();
    if vals[c.root()] > 0.0 {
        stack.push(c.root());
    }
    while let Some(id) = stack.pop() {
        if std::mem::replace(&mut seen[id], true) {
            continue;
        }
        match c.node(id) {
            Node::Literal { .. } => {}
            Node::Product { children } => stack.extend(children.iter().copied()),
            Node::Sum { children, .. } => {
                for (j, &ch) in children.iter().enumerate() {
                    if vals[ch] > 0.0 {
                        active.push(offsets[id] + j);
                        stack.push(ch);
                    }
                }
            }
        }
    }
    active.sort_unstable();
    active
}

/// Smoothed mutual information from an explicitly tabulated joint.
pub fn brute_mi(rows: &[Vec<bool>], i: usize, j: usize, alpha: f64) -> f64 {
    let mut joint = [[0.0f64; 2]; 2];
    for r in rows {
        joint[r[i] as usize][r[j] as usize] += 1.0;
    }
    let z = rows.len() as f64 + 4.0 * alpha;
    let p = |a: usize, b: usize| (joint[a][b] + alpha) / z;
    let pi = |a: usize| p(a, 0) + p(a, 1);
    let pj = |b: usize| p(0, b) + p(1, b);
    let mut mi = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            if p(a, b) > 0.0 {
                mi += p(a, b) * (p(a, b) / (pi(a) * pj(b))).ln();
            }
        }
    }
    mi
}

/// Every labeled tree on `n >= 2` vertices, decoded from Pruefer sequences.
pub fn labeled_trees(n: usize) -> Vec<Vec<(usize, usize)>> {
    if n == 2 {
        return vec![vec![(0, 1)]];
    }
    let count = n.pow(n as u32 - 2);
    (0..count)
        .map(|mut code| {
            let seq: Vec<usize> = (0..n - 2)
                .map(|_| {
                    let d = code % n;
                    code /= n;
                    d
                })
                .collect();
            let mut degree = vec![1usize; n];
            for &s in &seq {
                degree[s] += 1;
            }
            let mut edges = Vec::with_capacity(n - 1);
            for &s in &seq {
                let leaf = (0..n).find(|&v| degree[v] == 1).unwrap();
                edges.push((leaf.min(s), leaf.max(s)));
                degree[leaf] -= 1;
                degree[s] -= 1;
            }
            let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
            edges.push((rest[0], rest[1]));
            edges
        })
        .collect()
}

/// Training log-likelihood of the tree `edges` rooted at `root` with CPTs
/// `(count + alpha) / (parent count + 2 alpha)`, counted directly.
pub fn tree_log_likelihood(rows: &[Vec<bool>], m: usize, edges: &[(usize, usize)], root: usize, alpha: f64) -> f64 {
    let mut parent = vec![None; m];
    let mut frontier = vec![root];
    let mut seen = vec![false; m];
    seen[root] = true;
    while let Some(u) = frontier.pop() {
        for &(a, b) in edges {
            let v = if a == u {
                b
            } else if b == u {
                a
            } else {
                continue;
            };
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some(u);
                frontier.push(v);
            }
        }
    }
    let mut ll = 0.0;
    for v in 0..m {
        for r in rows {
            let matching: Vec<&Vec<bool>> = rows.iter().filter(|s| parent[v].is_none_or(|p| s[p] == r[p])).collect();
            let hits = matching.iter().filter(|s| s[v] == r[v]).count() as f64;
            ll += ((hits + alpha) / (matching.len() as f64 + 2.0 * alpha)).ln();
        }
    }
    ll
}
