//! Writes `<name>.train.data`, `<name>.valid.data` and `<name>.test.data`
//! sampled from a mixture of random trees, for driving the CLI without a
//! benchmark download.
//!
//! `cargo run --release --example synthetic_data -- <dir> [name] [m] [train rows]`

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use strudel::{ChowLiuTree, Dataset};

pub fn write_splits(dir: &Path, name: &str, m: usize, n_train: usize, seed: u64) -> anyhow::Result<[PathBuf; 3]> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trees: Vec<ChowLiuTree> = (0..4).map(|_| ChowLiuTree::random(&mut rng, m, 0.05)).collect();
    let sizes = [n_train, n_train / 7 + 1, n_train / 5 + 1];
    let mut paths = Vec::new();
    for (split, n) in ["train", "valid", "test"].into_iter().zip(sizes) {
        let mut rows = Vec::with_capacity(n);
        while rows.len() < n {
            let t = &trees[rows.len() % trees.len()];
            rows.push(t.sample(&mut rng, 1).row(0));
        }
        let path = dir.join(format!("{name}.{split}.data"));
        Dataset::from_rows(&rows)?.save(&path)?;
        paths.push(path);
    }
    Ok(paths.try_into().expect("three splits"))
}

pub fn run_example() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join(format!("strudel-synth-{}", std::process::id()));
    let paths = write_splits(&dir, "synth", 8, 300, 1)?;
    for p in &paths {
        let d = Dataset::load(p)?;
        println!("{}: {} rows x {} variables", p.display(), d.num_rows(), d.num_vars());
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() {
        return run_example();
    }
    let name = args.get(1).map_or("synth", String::as_str);
    let m = args.get(2).map_or(Ok(16), |s| s.parse())?;
    let n = args.get(3).map_or(Ok(16181), |s| s.parse())?;
    for p in write_splits(Path::new(&args[0]), name, m, n, 1)? {
        println!("{}", p.display());
    }
    Ok(())
}
