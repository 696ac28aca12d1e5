//! Learns a Chow-Liu tree from samples of a known random tree and checks
//! that the learned edges recover the generating structure.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use strudel::cltree::maximum_spanning_tree;
use strudel::{estimate_mi, learn_clt, ChowLiuTree, Vtree};

fn undirected_edges(t: &ChowLiuTree) -> BTreeSet<(usize, usize)> {
    (0..t.num_vars())
        .filter_map(|v| t.parent(v).map(|p| (v.min(p), v.max(p))))
        .collect()
}

pub fn run_example() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let truth = ChowLiuTree::random(&mut rng, 10, 0.1);
    let data = truth.sample(&mut rng, 5000);

    let mi = estimate_mi(&data, 1.0);
    let mst = maximum_spanning_tree(&mi);
    let total: f64 = mst.iter().map(|&(i, j)| mi.get(i, j)).sum();
    println!("spanning tree weight {total:.4} nats over {} edges", mst.len());

    let learned = learn_clt(&data, 1.0)?;
    let recovered = undirected_edges(&truth)
        .intersection(&undirected_edges(&learned))
        .count();
    println!(
        "root X{}, {recovered}/{} generating edges recovered",
        learned.root() + 1,
        truth.num_vars() - 1
    );

    let n = data.num_rows() as f64;
    let ll = |t: &ChowLiuTree| (0..data.num_rows()).map(|h| t.log_prob(&data.row(h))).sum::<f64>() / n;
    println!(
        "mean train LL: learned {:.4}, generating {:.4}",
        ll(&learned),
        ll(&truth)
    );

    let vtree = Vtree::from_clt(&learned);
    println!("vtree: {} nodes, depth {}", vtree.len(), vtree.depth());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
