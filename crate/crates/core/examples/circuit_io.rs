//! Writes a compiled circuit, its vtree and a dataset to disk, reads them
//! back and drives the command-line entry point on the files.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use strudel::{compile_clt, learn_clt, ChowLiuTree, Circuit, Dataset, Vtree};

pub fn run_example() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join(format!("strudel-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = ChowLiuTree::random(&mut rng, 6, 0.1).sample(&mut rng, 200);
    let data_path = dir.join("toy.train.data");
    data.save(&data_path)?;
    anyhow::ensure!(Dataset::load(&data_path)? == data);

    let tree = learn_clt(&data, 1.0)?;
    let vtree = Vtree::from_clt(&tree);
    let circuit = compile_clt(&tree, &vtree)?;
    circuit.save(dir.join("toy.psc"))?;
    vtree.save(dir.join("toy.vtree"))?;
    let back = Circuit::load(dir.join("toy.psc"))?;
    anyhow::ensure!(back.to_text() == circuit.to_text(), "circuit text changed");
    println!("{}", circuit.to_text().lines().take(6).collect::<Vec<_>>().join("\n"));

    let path = |name: &str| dir.join(name).to_string_lossy().into_owned();
    for args in [
        vec!["validate", "--circuit", &path("toy.psc"), "--vtree", &path("toy.vtree")],
        vec!["eval", "--circuit", &path("toy.psc"), "--data", &path("toy.train.data")],
    ] {
        let code = strudel::cli::main_with(std::iter::once("strudel").chain(args));
        anyhow::ensure!(code == 0, "exit code {code}");
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
