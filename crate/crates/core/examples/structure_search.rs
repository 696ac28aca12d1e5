//! Greedy split search on synthetic data, comparing the four edge/variable
//! heuristics at a fixed iteration budget.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use strudel::{bits_per_dimension, check_structure, strudel_learn, ChowLiuTree, Dataset, Heuristic, SearchConfig};

/// Samples from an even mixture of two random trees, so a single tree
/// underfits. Returns `(train, valid)`.
fn synthetic(seed: u64, m: usize, n_train: usize, n_valid: usize) -> (Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trees = [
        ChowLiuTree::random(&mut rng, m, 0.05),
        ChowLiuTree::random(&mut rng, m, 0.05),
    ];
    let mut draw = |n: usize| {
        let mut rows = Vec::with_capacity(n);
        for (i, t) in trees.iter().enumerate() {
            let d = t.sample(&mut rng, n / 2 + (i == 0 && n % 2 == 1) as usize);
            rows.extend((0..d.num_rows()).map(|h| d.row(h)));
        }
        Dataset::from_rows(&rows).expect("rectangular")
    };
    (draw(n_train), draw(n_valid))
}

pub fn run_example() -> anyhow::Result<()> {
    let m = 12;
    let (train, valid) = synthetic(3, m, 2000, 500);
    for heuristic in Heuristic::ALL {
        let cfg = SearchConfig {
            heuristic,
            max_iters: 60,
            patience: 60,
            ..SearchConfig::default()
        };
        let learned = strudel_learn(&train, &valid, &cfg)?;
        let first = &learned.history[0];
        let last = learned.history.last().expect("iteration 0 is recorded");
        let n = valid.num_rows() as f64;
        println!(
            "{heuristic:<12} valid bpd {:.4} -> best {:.4}, edges {} -> {}, best at {}",
            bits_per_dimension(first.valid_ll * n, n, m),
            bits_per_dimension(learned.history[learned.best_iteration].valid_ll * n, n, m),
            first.edges,
            last.edges,
            learned.best_iteration
        );
        let report = check_structure(&learned.circuit, &learned.vtree);
        anyhow::ensure!(report.all(), "structure broken: {report}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
