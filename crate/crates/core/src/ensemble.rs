//! Mixtures of circuits that share one structure.
//!
//! All components use the same circuit and differ only in their sum-edge
//! parameters, so one flow matrix serves every component: the E-step needs
//! one `|D| x |theta| x k` product and each M-step is a weighted count of
//! flow bits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::circuit::{Circuit, Node, NORMALIZATION_TOL};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::flows::{
    aggregate_flows, component_log_likelihoods, compute_flows, mixture_log_likelihood, mle_log_params, FlowMatrix,
    ParamMatrix,
};
use crate::logspace::{log_normalize, logsumexp};

/// Mixture weights below this are raised to it.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// Default component grid for validation-based selection.
pub const DEFAULT_GRID: [usize; 7] = [2, 5, 10, 15, 20, 25, 30];

#[derive(Clone, Debug, PartialEq)]
pub struct SharedMixture {
    structure: Circuit,
    theta: ParamMatrix,
    log_w: Vec<f64>,
}

impl SharedMixture {
    pub fn new(structure: Circuit, theta: ParamMatrix, log_w: Vec<f64>) -> Result<Self> {
        if log_w.is_empty() || log_w.len() != theta.components() {
            return Err(Error::InvalidArgument(format!(
                "{} mixture weights for {} components",
                log_w.len(),
                theta.components()
            )));
        }
        let z = logsumexp(&log_w);
        if z.is_nan() || z.abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidArgument(format!("mixture weights sum to exp({z})")));
        }
        if theta.num_params() != structure.num_params() {
            return Err(Error::InvalidArgument(
                "parameter matrix does not match the structure".into(),
            ));
        }
        for j in 0..theta.components() {
            structure.with_params(&theta.column(j))?;
        }
        Ok(SharedMixture {
            structure,
            theta,
            log_w,
        })
    }

    /// One-component mixture holding `c`'s own parameters.
    pub fn single(c: &Circuit) -> Self {
        let theta = ParamMatrix::from_columns(&[c.params()]).expect("one column");
        SharedMixture {
            structure: c.clone(),
            theta,
            log_w: vec![0.0],
        }
    }

    pub fn structure(&self) -> &Circuit {
        &self.structure
    }

    pub fn theta(&self) -> &ParamMatrix {
        &self.theta
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_w
    }

    pub fn components(&self) -> usize {
        self.log_w.len()
    }

    /// Component `j` as a standalone circuit.
    pub fn component(&self, j: usize) -> Circuit {
        self.structure
            .with_params(&self.theta.column(j))
            .expect("columns are validated on construction")
    }

    pub fn log_likelihoods_with(&self, f: &FlowMatrix) -> Result<Vec<f64>> {
        mixture_log_likelihood(&self.structure, &self.theta, &self.log_w, f)
    }

    pub fn log_likelihoods(&self, d: &Dataset) -> Result<Vec<f64>> {
        self.log_likelihoods_with(&compute_flows(&self.structure, d)?)
    }

    /// Parameter file: a `W k w_1 .. w_k` header of mixture log-weights, then
    /// one line per sum edge with its `k` component log-weights.
    pub fn params_to_text(&self) -> String {
        let k = self.components();
        let mut out = String::new();
        writeln!(
            out,
            "c mixture: {k} components over {} parameters",
            self.theta.num_params()
        )
        .unwrap();
        write!(out, "W {k}").unwrap();
        for w in &self.log_w {
            write!(out, " {w:?}").unwrap();
        }
        out.push('\n');
        for p in 0..self.theta.num_params() {
            let row: Vec<String> = self.theta.row(p).iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        out
    }

    pub fn parse_params(structure: Circuit, text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('c'));
        let (hline, header) = lines.next().ok_or_else(|| Error::format(1, "missing `W` header"))?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.first() != Some(&"W") {
            return Err(Error::format(hline + 1, "expected `W <k> <log-weights>`"));
        }
        let k: usize = toks
            .get(1)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::format(hline + 1, "bad component count"))?;
        if k == 0 || toks.len() != 2 + k {
            return Err(Error::format(hline + 1, "header does not list k weights"));
        }
        let floats = |toks: &[&str], line: usize| -> Result<Vec<f64>> {
            toks.iter()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::format(line, format!("bad number {t:?}")))
                })
                .collect()
        };
        let log_w = floats(&toks[2..], hline + 1)?;
        let mut columns = vec![Vec::with_capacity(structure.num_params()); k];
        let mut rows = 0;
        for (idx, line) in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != k {
                return Err(Error::format(idx + 1, format!("expected {k} values")));
            }
            for (col, v) in columns.iter_mut().zip(floats(&toks, idx + 1)?) {
                col.push(v);
            }
            rows += 1;
        }
        if rows != structure.num_params() {
            return Err(Error::InvalidArgument(format!(
                "{rows} parameter rows for a circuit with {}",
                structure.num_params()
            )));
        }
        SharedMixture::new(structure, ParamMatrix::from_columns(&columns)?, log_w)
    }

    pub fn save_params(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.params_to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(circuit_path: impl AsRef<Path>, params_path: impl AsRef<Path>) -> Result<Self> {
        let structure = Circuit::load(circuit_path)?;
        let path = params_path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SharedMixture::parse_params(structure, &text)
    }

    /// Concatenates mixtures over the same structure, scaling each by
    /// `1 / parts.len()`.
    pub fn concat(parts: &[SharedMixture]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no mixtures to combine".into()))?;
        let scale = -(parts.len() as f64).ln();
        let mut columns = Vec::new();
        let mut log_w = Vec::new();
        for m in parts {
            if m.structure != first.structure {
                return Err(Error::InvalidArgument("mixtures differ in structure".into()));
            }
            columns.extend(m.theta.columns());
            log_w.extend(m.log_w.iter().map(|w| w + scale));
        }
        log_normalize(&mut log_w);
        SharedMixture::new(first.structure.clone(), ParamMatrix::from_columns(&columns)?, log_w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    pub components: usize,
    pub iters: usize,
    /// Stop when the mean training log-likelihood improves by less.
    pub tol: f64,
    pub seed: u64,
    pub pseudocount: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            components: 5,
            iters: 100,
            tol: 1e-4,
            seed: 1337,
            pseudocount: 1.0,
        }
    }
}

/// Fitted mixture with the mean training log-likelihood after each E-step
/// (`trace[0]` is the initialization).
#[derive(Clone, Debug)]
pub struct EmResult {
    pub mixture: SharedMixture,
    pub trace: Vec<f64>,
}

/// Starting parameters: the single-model estimate with `U[-0.1, 0.1]` noise
/// on each log-weight, renormalized per sum node. One component gets the
/// estimate unchanged.
pub fn perturbed_init(structure: &Circuit, base: &[f64], k: usize, seed: u64) -> Vec<Vec<f64>> {
    if k == 1 {
        return vec![base.to_vec()];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            let mut col: Vec<f64> = base.iter().map(|&w| w + rng.gen_range(-0.1..=0.1)).collect();
            for (id, node) in structure.nodes().iter().enumerate() {
                if let Node::Sum { children, .. } = node {
                    let off = structure.param_offset(id);
                    log_normalize(&mut col[off..off + children.len()]);
                }
            }
            col
        })
        .collect()
}

/// EM for a `cfg.components`-component mixture over `structure`.
pub fn em_fit(structure: &Circuit, d: &Dataset, cfg: &EmConfig) -> Result<EmResult> {
    if cfg.components == 0 {
        return Err(Error::InvalidArgument("at least one component is required".into()));
    }
    let f = compute_flows(structure, d)?;
    let a = aggregate_flows(&f, d.weights());
    let base = mle_log_params(structure, &a.counts, cfg.pseudocount);
    let columns = perturbed_init(structure, &base, cfg.components, cfg.seed);
    let k = cfg.components;
    let init = SharedMixture::new(
        structure.clone(),
        ParamMatrix::from_columns(&columns)?,
        vec![-(k as f64).ln(); k],
    )?;
    em_refine(init, d, &f, cfg)
}

/// EM from a given starting mixture, reusing flows `f` of `d`.
pub fn em_refine(init: SharedMixture, d: &Dataset, f: &FlowMatrix, cfg: &EmConfig) -> Result<EmResult> {
    if !(cfg.pseudocount >= 0.0 && cfg.pseudocount.is_finite()) {
        return Err(Error::InvalidArgument("pseudocount must be >= 0".into()));
    }
    let n = d.num_rows();
    let total_weight = d.total_weight();
    let data_weight = |h: usize| d.weights().map_or(1.0, |w| w[h]);
    let mut mix = init;
    let k = mix.components();

    let (mut resp, mut ll) = e_step(&mix, f, d)?;
    let mut trace = vec![ll / total_weight];
    for _ in 0..cfg.iters {
        let structure = mix.structure.clone();
        let columns: Vec<Vec<f64>> = (0..k)
            .into_par_iter()
            .map(|j| {
                let w: Vec<f64> = (0..n).map(|h| resp[h * k + j] * data_weight(h)).collect();
                let a = aggregate_flows(f, Some(&w));
                mle_log_params(&structure, &a.counts, cfg.pseudocount)
            })
            .collect();
        let mut mass = vec![0.0; k];
        for h in 0..n {
            for j in 0..k {
                mass[j] += resp[h * k + j] * data_weight(h);
            }
        }
        let mut log_w: Vec<f64> = mass
            .iter()
            .enumerate()
            .map(|(j, &m)| {
                let w = m / total_weight;
                if w < WEIGHT_FLOOR {
                    log::warn!("mixture component {j} collapsed (weight {w:e}); flooring at {WEIGHT_FLOOR:e}");
                    WEIGHT_FLOOR.ln()
                } else {
                    w.ln()
                }
            })
            .collect();
        log_normalize(&mut log_w);
        mix = SharedMixture::new(structure, ParamMatrix::from_columns(&columns)?, log_w)?;

        let prev = ll;
        (resp, ll) = e_step(&mix, f, d)?;
        trace.push(ll / total_weight);
        if (ll - prev) / total_weight < cfg.tol {
            break;
        }
    }
    Ok(EmResult { mixture: mix, trace })
}

/// Responsibilities (`|D| x k`, row-major) and the weighted total
/// log-likelihood.
fn e_step(mix: &SharedMixture, f: &FlowMatrix, d: &Dataset) -> Result<(Vec<f64>, f64)> {
    let k = mix.components();
    let mut resp = component_log_likelihoods(&mix.theta, f)?;
    let lls: Vec<f64> = resp
        .par_chunks_mut(k)
        .map(|row| {
            for (r, w) in row.iter_mut().zip(&mix.log_w) {
                *r += w;
            }
            let z = logsumexp(row);
            for r in row.iter_mut() {
                *r = if z == f64::NEG_INFINITY { 0.0 } else { (*r - z).exp() };
            }
            z
        })
        .collect();
    let total = match d.weights() {
        Some(w) => lls.iter().zip(w).filter(|(_, &w)| w > 0.0).map(|(l, w)| l * w).sum(),
        None => lls.iter().sum(),
    };
    Ok((resp, total))
}

/// EM on `bags` bootstrap resamples of `d` (bag `b` uses seed `seed + b`),
/// combined with uniform weight per bag.
pub fn bem_fit(structure: &Circuit, d: &Dataset, bags: usize, cfg: &EmConfig) -> Result<SharedMixture> {
    if bags == 0 {
        return Err(Error::InvalidArgument("at least one bag is required".into()));
    }
    let parts = (0..bags as u64)
        .map(|b| {
            let seed = cfg.seed.wrapping_add(b);
            let bag = d.bag_resample(seed)?;
            let cfg = EmConfig { seed, ..cfg.clone() };
            Ok(em_fit(structure, &bag, &cfg)?.mixture)
        })
        .collect::<Result<Vec<_>>>()?;
    SharedMixture::concat(&parts)
}

/// Outcome of fitting one mixture per grid value.
#[derive(Clone, Debug)]
pub struct GridSelection {
    pub best_components: usize,
    pub mixture: SharedMixture,
    /// `(components, mean validation log-likelihood)` per grid value.
    pub scores: Vec<(usize, f64)>,
}

/// Fits `fit(k)` for every `k` in `grid` and keeps the mixture with the
/// best mean validation log-likelihood (the first one on ties).
pub fn select_components(
    grid: &[usize],
    valid: &Dataset,
    mut fit: impl FnMut(usize) -> Result<SharedMixture>,
) -> Result<GridSelection> {
    let mut best: Option<(usize, SharedMixture, f64)> = None;
    let mut scores = Vec::with_capacity(grid.len());
    for &k in grid {
        let m = fit(k)?;
        let ll: f64 = m.log_likelihoods(valid)?.iter().sum::<f64>() / valid.num_rows() as f64;
        log::info!("components {k}: mean validation LL {ll:.6}");
        scores.push((k, ll));
        if best.as_ref().is_none_or(|(_, _, b)| ll > *b) {
            best = Some((k, m, ll));
        }
    }
    let (best_components, mixture, _) = best.ok_or_else(|| Error::InvalidArgument("empty component grid".into()))?;
    Ok(GridSelection {
        best_components,
        mixture,
        scores,
    })
}
