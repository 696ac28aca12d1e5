//! Shared-flow mixture evaluation against per-component bottom-up
//! evaluation on a learned circuit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use strudel::cli::{bench_csv, bench_flows};
use strudel::{strudel_learn, ChowLiuTree, SearchConfig};

pub fn run_example() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let truth = ChowLiuTree::random(&mut rng, 16, 0.05);
    let train = truth.sample(&mut rng, 4000);
    let valid = truth.sample(&mut rng, 1000);
    let cfg = SearchConfig {
        max_iters: 100,
        ..SearchConfig::default()
    };
    let circuit = strudel_learn(&train, &valid, &cfg)?.circuit;
    println!("circuit: {} nodes, {} parameters", circuit.len(), circuit.num_params());
    let rows = bench_flows(&circuit, &valid, &[1, 5, 20], 2, 1)?;
    print!("{}", bench_csv(&rows));
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
