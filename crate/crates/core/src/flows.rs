//! Circuit flows.
//!
//! For a deterministic circuit, a sample reaches each sum node through at
//! most one outgoing edge, so its path through the circuit is a set of sum
//! edges. The flow matrix stores that set for every sample as bits, one
//! column per parameter. Log-likelihoods then reduce to summing the log
//! parameters of the set bits, and maximum-likelihood estimates to counting
//! bits per column.
//!
//! Flows are computed by an upward pass of support bit-vectors (literal:
//! indicator, product: AND, sum: OR) followed by a downward pass that routes
//! each sample from the root along the children whose support contains it.
//! Samples are processed in independent blocks of machine words.

use std::cell::Cell;

use rayon::prelude::*;

use crate::bits::{word_mask, words_for, Bits, Ones, WORD_BITS};
use crate::circuit::{Circuit, Node};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::logspace::{log_normalize, logsumexp};

pub const DEFAULT_BLOCK_WORDS: usize = 16;

thread_local! {
    static FLOW_PASSES: Cell<usize> = const { Cell::new(0) };
}

/// Number of [`compute_flows`] calls made from the current thread.
pub fn flow_passes_on_this_thread() -> usize {
    FLOW_PASSES.with(Cell::get)
}

/// Packed `|D| x |theta|` boolean matrix of sum-edge flows.
///
/// Storage is block-major: samples are cut into blocks of `block_words`
/// words and each block stores all parameter columns contiguously.
#[derive(Clone, Debug)]
pub struct FlowMatrix {
    num_samples: usize,
    num_params: usize,
    block_words: usize,
    words: Vec<u64>,
    reached: Bits,
    weights: Option<Vec<f64>>,
}

impl FlowMatrix {
    #[inline]
    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    #[inline]
    pub fn num_params(&self) -> usize {
        self.num_params
    }

    /// Samples with non-zero probability under the circuit.
    pub fn reached(&self) -> &Bits {
        &self.reached
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    fn num_blocks(&self) -> usize {
        words_for(self.num_samples).div_ceil(self.block_words)
    }

    #[inline]
    fn block_column(&self, block: usize, param: usize) -> &[u64] {
        let start = (block * self.num_params + param) * self.block_words;
        &self.words[start..start + self.block_words]
    }

    #[inline]
    pub fn get(&self, sample: usize, param: usize) -> bool {
        let word = sample / WORD_BITS;
        let (block, w) = (word / self.block_words, word % self.block_words);
        self.block_column(block, param)[w] >> (sample % WORD_BITS) & 1 == 1
    }

    /// Samples flowing through edge `param`, in increasing order.
    pub fn samples_through(&self, param: usize) -> impl Iterator<Item = usize> + '_ {
        let span = self.block_words * WORD_BITS;
        (0..self.num_blocks()).flat_map(move |b| Ones::new(self.block_column(b, param)).map(move |i| b * span + i))
    }

    /// Column `param` as a bit vector over samples.
    pub fn column(&self, param: usize) -> Bits {
        let mut words = Vec::with_capacity(self.num_blocks() * self.block_words);
        for b in 0..self.num_blocks() {
            words.extend_from_slice(self.block_column(b, param));
        }
        Bits::from_words(words, self.num_samples)
    }

    /// Number of samples through edge `param`.
    pub fn column_count(&self, param: usize) -> usize {
        (0..self.num_blocks())
            .map(|b| {
                self.block_column(b, param)
                    .iter()
                    .map(|w| w.count_ones() as usize)
                    .sum::<usize>()
            })
            .sum()
    }

    /// Set parameter indices of one sample, in increasing order.
    pub fn row(&self, sample: usize) -> Vec<usize> {
        (0..self.num_params).filter(|&k| self.get(sample, k)).collect()
    }
}

pub fn compute_flows(c: &Circuit, d: &Dataset) -> Result<FlowMatrix> {
    compute_flows_with(c, d, DEFAULT_BLOCK_WORDS)
}

/// Computes flows processing `block_words * 64` samples per task. The result
/// does not depend on the block size.
pub fn compute_flows_with(c: &Circuit, d: &Dataset, block_words: usize) -> Result<FlowMatrix> {
    if d.num_vars() != c.num_vars() {
        return Err(Error::VariableMismatch {
            expected: c.num_vars(),
            found: d.num_vars(),
        });
    }
    let block_words = block_words.max(1);
    FLOW_PASSES.with(|p| p.set(p.get() + 1));
    let n = d.num_rows();
    let total_words = words_for(n);
    let num_blocks = total_words.div_ceil(block_words);
    let num_params = c.num_params();
    let block_len = num_params * block_words;
    let mut words = vec![0u64; num_blocks * block_len];
    let mut reached = vec![0u64; num_blocks * block_words];

    let results: Vec<Result<()>> = words
        .par_chunks_mut(block_len.max(1))
        .zip(reached.par_chunks_mut(block_words))
        .enumerate()
        .map(|(b, (out, root_out))| flow_block(c, d, b, block_words, total_words, out, root_out))
        .collect();
    if num_params == 0 {
        // Zero-width chunks cannot carry per-block output; recompute roots.
        for b in 0..num_blocks {
            let mut dummy = [];
            flow_block(
                c,
                d,
                b,
                block_words,
                total_words,
                &mut dummy,
                &mut reached[b * block_words..(b + 1) * block_words],
            )?;
        }
    }
    results.into_iter().collect::<Result<Vec<()>>>()?;

    Ok(FlowMatrix {
        num_samples: n,
        num_params,
        block_words,
        words,
        reached: Bits::from_words(reached, n),
        weights: d.weights().map(<[f64]>::to_vec),
    })
}

fn flow_block(
    c: &Circuit,
    d: &Dataset,
    block: usize,
    bw: usize,
    total_words: usize,
    out: &mut [u64],
    root_out: &mut [u64],
) -> Result<()> {
    let n = d.num_rows();
    let nodes = c.nodes();
    let mut support = vec![0u64; nodes.len() * bw];
    let first_word = block * bw;

    for (id, node) in nodes.iter().enumerate() {
        let (done, rest) = support.split_at_mut(id * bw);
        let slot = &mut rest[..bw];
        match node {
            Node::Literal { var, positive } => {
                let col = d.column(*var).words();
                for (w, s) in slot.iter_mut().enumerate() {
                    let gw = first_word + w;
                    if gw < total_words {
                        *s = if *positive {
                            col[gw]
                        } else {
                            !col[gw] & word_mask(n, gw)
                        };
                    }
                }
            }
            Node::Product { children: [l, r] } => {
                let (l, r) = (&done[l * bw..(l + 1) * bw], &done[r * bw..(r + 1) * bw]);
                for w in 0..bw {
                    slot[w] = l[w] & r[w];
                }
            }
            Node::Sum { children, .. } => {
                for &ch in children {
                    let cs = &done[ch * bw..(ch + 1) * bw];
                    for w in 0..bw {
                        slot[w] |= cs[w];
                    }
                }
            }
        }
    }

    let root = c.root();
    root_out.copy_from_slice(&support[root * bw..(root + 1) * bw]);

    let mut flow = vec![0u64; nodes.len() * bw];
    flow[root * bw..(root + 1) * bw].copy_from_slice(&support[root * bw..(root + 1) * bw]);
    let mut here = vec![0u64; bw];
    let mut taken = vec![0u64; bw];
    for id in (0..nodes.len()).rev() {
        here.copy_from_slice(&flow[id * bw..(id + 1) * bw]);
        if here.iter().all(|&w| w == 0) {
            continue;
        }
        match &nodes[id] {
            Node::Literal { .. } => {}
            Node::Product { children } => {
                for &ch in children {
                    let f = &mut flow[ch * bw..(ch + 1) * bw];
                    for w in 0..bw {
                        f[w] |= here[w];
                    }
                }
            }
            Node::Sum { children, .. } => {
                taken.fill(0);
                let offset = c.param_offset(id);
                for (j, &ch) in children.iter().enumerate() {
                    let cs = &support[ch * bw..(ch + 1) * bw];
                    let edge = &mut out[(offset + j) * bw..(offset + j + 1) * bw];
                    let f = &mut flow[ch * bw..(ch + 1) * bw];
                    for w in 0..bw {
                        let e = here[w] & cs[w];
                        if e & taken[w] != 0 {
                            return Err(Error::NonDeterministic { node: id });
                        }
                        taken[w] |= e;
                        edge[w] = e;
                        f[w] |= e;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Per-sample log-likelihoods and their weighted sum.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLikelihoods {
    pub per_sample: Vec<f64>,
    pub total: f64,
}

impl LogLikelihoods {
    fn from_samples(per_sample: Vec<f64>, weights: Option<&[f64]>) -> Self {
        let total = match weights {
            Some(w) => per_sample
                .iter()
                .zip(w)
                .filter(|(_, &w)| w > 0.0)
                .map(|(ll, w)| ll * w)
                .sum(),
            None => per_sample.iter().sum(),
        };
        LogLikelihoods { per_sample, total }
    }

    pub fn mean(&self) -> f64 {
        self.total / self.per_sample.len() as f64
    }
}

fn dot_log_params(f: &FlowMatrix, params: &[f64]) -> Vec<f64> {
    let mut ll = vec![0.0; f.num_samples];
    for (k, &lw) in params.iter().enumerate() {
        for h in f.samples_through(k) {
            ll[h] += lw;
        }
    }
    for (h, v) in ll.iter_mut().enumerate() {
        if !f.reached.get(h) {
            *v = f64::NEG_INFINITY;
        }
    }
    ll
}

/// Log-likelihood of every sample as the dot product of its flow row with
/// the circuit's log-parameters. The total uses the dataset weights the flows
/// were computed with.
pub fn log_likelihood(c: &Circuit, f: &FlowMatrix) -> Result<LogLikelihoods> {
    if c.num_params() != f.num_params {
        return Err(Error::InvalidArgument(
            "flows were computed for a different circuit".into(),
        ));
    }
    let ll = dot_log_params(f, &c.params());
    Ok(LogLikelihoods::from_samples(ll, f.weights()))
}

/// Per-edge (weighted) flow counts.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateFlows {
    pub counts: Vec<f64>,
}

/// Column sums of the flow matrix, weighted by `weights` when given.
pub fn aggregate_flows(f: &FlowMatrix, weights: Option<&[f64]>) -> AggregateFlows {
    let counts = (0..f.num_params)
        .into_par_iter()
        .map(|k| match weights {
            Some(w) => f.samples_through(k).map(|h| w[h]).sum(),
            None => f.column_count(k) as f64,
        })
        .collect();
    AggregateFlows { counts }
}

/// Smoothed closed-form estimates in parameter order:
/// `(a(i,j) + pseudocount) / (sum_j a(i,j) + k_i * pseudocount)`. A sum node
/// with nothing flowing in and no pseudocount gets uniform weights.
pub fn mle_log_params(c: &Circuit, counts: &[f64], pseudocount: f64) -> Vec<f64> {
    let mut params = vec![0.0; c.num_params()];
    for (id, node) in c.nodes().iter().enumerate() {
        if let Node::Sum { children, .. } = node {
            let off = c.param_offset(id);
            let k = children.len();
            let slot = &mut params[off..off + k];
            let total: f64 = counts[off..off + k].iter().sum::<f64>() + k as f64 * pseudocount;
            if total > 0.0 {
                for (p, &a) in slot.iter_mut().zip(&counts[off..off + k]) {
                    *p = ((a + pseudocount) / total).ln();
                }
                log_normalize(slot);
            } else {
                slot.fill(-(k as f64).ln());
            }
        }
    }
    params
}

pub fn mle_parameters(c: &Circuit, a: &AggregateFlows, pseudocount: f64) -> Result<Circuit> {
    if pseudocount < 0.0 || !pseudocount.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "pseudocount must be >= 0, got {pseudocount}"
        )));
    }
    if a.counts.len() != c.num_params() {
        return Err(Error::InvalidArgument(
            "aggregate flows do not match the circuit".into(),
        ));
    }
    c.with_params(&mle_log_params(c, &a.counts, pseudocount))
}

/// `|theta| x k` matrix of log-parameters, one column per mixture component,
/// stored row-major so a flow bit adds one contiguous row.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamMatrix {
    num_params: usize,
    components: usize,
    values: Vec<f64>,
}

impl ParamMatrix {
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let k = columns.len();
        if k == 0 {
            return Err(Error::InvalidArgument("no components".into()));
        }
        let p = columns[0].len();
        if columns.iter().any(|c| c.len() != p) {
            return Err(Error::InvalidArgument("columns differ in length".into()));
        }
        let mut values = vec![0.0; p * k];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                values[i * k + j] = v;
            }
        }
        Ok(ParamMatrix {
            num_params: p,
            components: k,
            values,
        })
    }

    #[inline]
    pub fn num_params(&self) -> usize {
        self.num_params
    }

    #[inline]
    pub fn components(&self) -> usize {
        self.components
    }

    #[inline]
    pub fn row(&self, param: usize) -> &[f64] {
        &self.values[param * self.components..(param + 1) * self.components]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.num_params)
            .map(|i| self.values[i * self.components + j])
            .collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.components).map(|j| self.column(j)).collect()
    }
}

/// Per-sample, per-component log-likelihoods (`|D| x k`, row-major) from
/// one shared flow matrix.
pub fn component_log_likelihoods(theta: &ParamMatrix, f: &FlowMatrix) -> Result<Vec<f64>> {
    if theta.num_params != f.num_params {
        return Err(Error::InvalidArgument(
            "parameter matrix does not match the flows".into(),
        ));
    }
    let k = theta.components;
    let mut acc = vec![0.0; f.num_samples * k];
    for p in 0..theta.num_params {
        let row = theta.row(p);
        for h in f.samples_through(p) {
            for (a, &v) in acc[h * k..(h + 1) * k].iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    for h in 0..f.num_samples {
        if !f.reached.get(h) {
            acc[h * k..(h + 1) * k].fill(f64::NEG_INFINITY);
        }
    }
    Ok(acc)
}

/// Mixture log-likelihood of every sample,
/// `logsumexp_j(flow_row . log theta_j + log w_j)`, for components that all
/// share the structure the flows were computed on.
pub fn mixture_log_likelihood(
    structure: &Circuit,
    theta: &ParamMatrix,
    log_w: &[f64],
    f: &FlowMatrix,
) -> Result<Vec<f64>> {
    if log_w.is_empty() || theta.components != log_w.len() {
        return Err(Error::InvalidArgument(format!(
            "{} mixture weights for {} components",
            log_w.len(),
            theta.components
        )));
    }
    if structure.num_params() != theta.num_params {
        return Err(Error::InvalidArgument(
            "parameter matrix does not match the structure".into(),
        ));
    }
    let k = theta.components;
    let acc = component_log_likelihoods(theta, f)?;
    let mut buf = vec![0.0; k];
    Ok((0..f.num_samples)
        .map(|h| {
            for j in 0..k {
                buf[j] = acc[h * k + j] + log_w[j];
            }
            logsumexp(&buf)
        })
        .collect())
}
