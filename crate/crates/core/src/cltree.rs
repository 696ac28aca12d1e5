//! Chow-Liu trees: smoothed pairwise mutual information, a deterministic
//! maximum spanning tree, Jordan-center rooting and CPT estimation.

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;

use crate::bits::Bits;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Symmetric matrix of pairwise mutual information, in nats.
#[derive(Clone, Debug, PartialEq)]
pub struct MutualInfoMatrix {
    n: usize,
    values: Vec<f64>,
}

impl MutualInfoMatrix {
    pub fn zeros(n: usize) -> Self {
        MutualInfoMatrix {
            n,
            values: vec![0.0; n * n],
        }
    }

    /// Builds a matrix from a dense row-major table; the upper triangle wins.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = MutualInfoMatrix::zeros(n);
        for i in 0..n {
            for j in i + 1..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
        self.values[j * self.n + i] = v;
    }

    /// Row sums excluding the diagonal.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).filter(|&j| j != i).map(|j| self.get(i, j)).sum())
            .collect()
    }
}

/// Weighted one- and two-way counts over a (possibly masked) set of rows.
struct Counts<'a> {
    columns: Vec<Bits>,
    weights: Option<&'a [f64]>,
    total: f64,
}

impl<'a> Counts<'a> {
    fn new(d: &'a Dataset, vars: &[usize], mask: Option<&Bits>) -> Self {
        let columns: Vec<Bits> = vars
            .iter()
            .map(|&v| match mask {
                Some(m) => d.column(v).and(m),
                None => d.column(v).clone(),
            })
            .collect();
        let weights = d.weights();
        let total = match (mask, weights) {
            (Some(m), Some(w)) => m.weighted_count(w),
            (Some(m), None) => m.count_ones() as f64,
            (None, _) => d.total_weight(),
        };
        Counts {
            columns,
            weights,
            total,
        }
    }

    fn single(&self, i: usize) -> f64 {
        match self.weights {
            Some(w) => self.columns[i].weighted_count(w),
            None => self.columns[i].count_ones() as f64,
        }
    }

    fn pair(&self, i: usize, j: usize) -> f64 {
        match self.weights {
            Some(w) => self.columns[i].and(&self.columns[j]).weighted_count(w),
            None => self.columns[i].and_count(&self.columns[j]) as f64,
        }
    }
}

/// Joint table `[n00, n01, n10, n11]` from the marginal and pair counts.
fn joint_table(total: f64, n_i: f64, n_j: f64, n_ij: f64) -> [f64; 4] {
    let n10 = (n_i - n_ij).max(0.0);
    let n01 = (n_j - n_ij).max(0.0);
    let n00 = (total - n_i - n_j + n_ij).max(0.0);
    [n00, n01, n10, n_ij]
}

/// Mutual information of a 2x2 joint count table smoothed with `alpha` per cell.
pub fn smoothed_mi(table: [f64; 4], alpha: f64) -> f64 {
    let z: f64 = table.iter().sum::<f64>() + 4.0 * alpha;
    if z <= 0.0 {
        return 0.0;
    }
    let p: Vec<f64> = table.iter().map(|&c| (c + alpha) / z).collect();
    let pi = [p[0] + p[1], p[2] + p[3]];
    let pj = [p[0] + p[2], p[1] + p[3]];
    let mut mi = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            let pab = p[2 * a + b];
            if pab > 0.0 {
                mi += pab * (pab / (pi[a] * pj[b])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Pairwise smoothed MI among `vars`, restricted to rows set in `mask` when
/// given. Entry `(a, b)` of the result refers to `vars[a]` and `vars[b]`.
pub fn pairwise_mi(d: &Dataset, vars: &[usize], mask: Option<&Bits>, alpha: f64) -> MutualInfoMatrix {
    let counts = Counts::new(d, vars, mask);
    let n = vars.len();
    let singles: Vec<f64> = (0..n).map(|i| counts.single(i)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| {
                    let t = joint_table(counts.total, singles[i], singles[j], counts.pair(i, j));
                    smoothed_mi(t, alpha)
                })
                .collect()
        })
        .collect();
    let mut mi = MutualInfoMatrix::zeros(n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            mi.set(i, i + 1 + off, v);
        }
    }
    mi
}

/// Smoothed pairwise MI over all variables of `d`.
pub fn estimate_mi(d: &Dataset, alpha: f64) -> MutualInfoMatrix {
    let vars: Vec<usize> = (0..d.num_vars()).collect();
    pairwise_mi(d, &vars, None, alpha)
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Kruskal over the complete graph, heaviest edges first. Equal weights are
/// taken in lexicographic `(i, j)` order. Edges are returned with `i < j`.
pub fn maximum_spanning_tree(mi: &MutualInfoMatrix) -> Vec<(usize, usize)> {
    let n = mi.len();
    let mut edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    edges.sort_by(|&(a, b), &(c, d)| mi.get(c, d).total_cmp(&mi.get(a, b)).then((a, b).cmp(&(c, d))));
    let mut uf = UnionFind::new(n);
    let mut tree = Vec::with_capacity(n.saturating_sub(1));
    for (i, j) in edges {
        if uf.union(i, j) {
            tree.push((i, j));
            if tree.len() + 1 == n {
                break;
            }
        }
    }
    tree
}

fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    adj
}

fn bfs_distances(adj: &[Vec<usize>], source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Vertex of minimum eccentricity in a tree over `n` vertices; the smaller
/// index wins when the tree has two centers.
pub fn root_at_jordan_center(n: usize, edges: &[(usize, usize)]) -> usize {
    assert!(n > 0, "empty tree has no center");
    let adj = adjacency(n, edges);
    // The center lies on the midpoint of any longest path.
    let far = |src: usize| {
        let d = bfs_distances(&adj, src);
        let best = (0..n).max_by_key(|&v| (d[v], std::cmp::Reverse(v))).unwrap();
        (best, d)
    };
    let (a, _) = far(0);
    let (b, from_a) = far(a);
    let from_b = bfs_distances(&adj, b);
    let diameter = from_a[b];
    (0..n)
        .filter(|&v| from_a[v] + from_b[v] == diameter)
        .filter(|&v| {
            let ecc = from_a[v].max(from_b[v]);
            ecc == diameter.div_ceil(2)
        })
        .min()
        .unwrap()
}

/// Tree-shaped Bayesian network over binary variables.
///
/// `p_one[i][v]` is `p(X_i = 1 | X_parent = v)`. The root has no parent and
/// stores its marginal in both slots.
#[derive(Clone, Debug, PartialEq)]
pub struct ChowLiuTree {
    root: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    p_one: Vec<[f64; 2]>,
}

impl ChowLiuTree {
    pub fn new(root: usize, parent: Vec<Option<usize>>, p_one: Vec<[f64; 2]>) -> Result<Self> {
        let n = parent.len();
        if n == 0 || p_one.len() != n || root >= n {
            return Err(Error::InvalidArgument("inconsistent tree sizes".into()));
        }
        if parent[root].is_some() {
            return Err(Error::InvalidArgument("root has a parent".into()));
        }
        let mut children = vec![Vec::new(); n];
        for (v, p) in parent.iter().enumerate() {
            match *p {
                Some(p) if p >= n || p == v => return Err(Error::InvalidArgument(format!("bad parent for {v}"))),
                Some(p) => children[p].push(v),
                None if v != root => return Err(Error::InvalidArgument(format!("{v} has no parent"))),
                None => {}
            }
        }
        // Every variable must be reachable from the root exactly once.
        let mut seen = vec![false; n];
        let mut stack = vec![root];
        let mut count = 0;
        while let Some(u) = stack.pop() {
            if seen[u] {
                return Err(Error::InvalidArgument("parent links contain a cycle".into()));
            }
            seen[u] = true;
            count += 1;
            stack.extend(children[u].iter().copied());
        }
        if count != n {
            return Err(Error::InvalidArgument("parent links do not span all variables".into()));
        }
        for (v, ps) in p_one.iter().enumerate() {
            if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidArgument(format!("CPT of {v} outside [0,1]")));
            }
        }
        Ok(ChowLiuTree {
            root,
            parent,
            children,
            p_one,
        })
    }

    #[inline]
    pub fn num_vars(&self) -> usize {
        self.parent.len()
    }

    #[inline]
    pub fn root(&self) -> usize {
        self.root
    }

    #[inline]
    pub fn parent(&self, var: usize) -> Option<usize> {
        self.parent[var]
    }

    /// Children of `var` in ascending index order.
    #[inline]
    pub fn children(&self, var: usize) -> &[usize] {
        &self.children[var]
    }

    /// `p(X_var = value | X_parent = parent_value)`; `parent_value` is ignored
    /// for the root.
    #[inline]
    pub fn conditional(&self, var: usize, value: bool, parent_value: bool) -> f64 {
        let p1 = self.p_one[var][parent_value as usize];
        if value {
            p1
        } else {
            1.0 - p1
        }
    }

    pub fn p_one(&self, var: usize) -> [f64; 2] {
        self.p_one[var]
    }

    /// Variables ordered so that every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.num_vars());
        let mut queue = VecDeque::from([self.root]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            queue.extend(self.children[u].iter().copied());
        }
        order
    }

    pub fn log_prob(&self, x: &[bool]) -> f64 {
        (0..self.num_vars())
            .map(|v| {
                let pv = self.parent[v].is_some_and(|p| x[p]);
                self.conditional(v, x[v], pv).ln()
            })
            .sum()
    }

    /// Draws `n` samples by ancestral sampling.
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Dataset {
        let order = self.topological_order();
        let rows: Vec<Vec<bool>> = (0..n)
            .map(|_| {
                let mut x = vec![false; self.num_vars()];
                for &v in &order {
                    let pv = self.parent[v].is_some_and(|p| x[p]);
                    x[v] = rng.gen::<f64>() < self.p_one[v][pv as usize];
                }
                x
            })
            .collect();
        Dataset::from_rows(&rows).expect("sampled rows are rectangular")
    }

    /// Random tree over `n` variables with CPT entries drawn from
    /// `[margin, 1 - margin]`.
    pub fn random<R: Rng>(rng: &mut R, n: usize, margin: f64) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let mut parent = vec![None; n];
        for k in 1..n {
            parent[perm[k]] = Some(perm[rng.gen_range(0..k)]);
        }
        let mut draw = || rng.gen_range(margin..=1.0 - margin);
        let p_one = (0..n)
            .map(|v| {
                if v == perm[0] {
                    let p = draw();
                    [p, p]
                } else {
                    [draw(), draw()]
                }
            })
            .collect();
        ChowLiuTree::new(perm[0], parent, p_one).expect("random tree is valid")
    }
}

/// Roots the undirected tree `edges` at `root` and estimates smoothed CPTs.
pub fn fit_tree(d: &Dataset, edges: &[(usize, usize)], root: usize, alpha: f64) -> Result<ChowLiuTree> {
    let n = d.num_vars();
    let adj = adjacency(n, edges);
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some(u);
                queue.push_back(v);
            }
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let counts = Counts::new(d, &all, None);
    let ratio = |num: f64, den: f64| {
        if den + 2.0 * alpha > 0.0 {
            (num + alpha) / (den + 2.0 * alpha)
        } else {
            0.5
        }
    };
    let p_one = (0..n)
        .map(|v| match parent[v] {
            None => {
                let p = ratio(counts.single(v), counts.total);
                [p, p]
            }
            Some(p) => {
                let n_v = counts.single(v);
                let n_p = counts.single(p);
                let n_vp = counts.pair(v, p);
                [ratio(n_v - n_vp, counts.total - n_p), ratio(n_vp, n_p)]
            }
        })
        .collect();
    ChowLiuTree::new(root, parent, p_one)
}

/// Learns a Chow-Liu tree rooted at the Jordan center of the spanning tree.
pub fn learn_clt(d: &Dataset, alpha: f64) -> Result<ChowLiuTree> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
    }
    let mi = estimate_mi(d, alpha);
    let edges = maximum_spanning_tree(&mi);
    let root = root_at_jordan_center(d.num_vars(), &edges);
    fit_tree(d, &edges, root, alpha)
}
