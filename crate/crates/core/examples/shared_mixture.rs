//! EM and bagged EM over one shared structure, with the component count
//! picked on validation data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use strudel::ensemble::{select_components, EmConfig};
use strudel::flows::flow_passes_on_this_thread;
use strudel::{bem_fit, em_fit, strudel_learn, ChowLiuTree, Dataset, SearchConfig};

fn sample_mixture(seed: u64, n: usize) -> (Dataset, Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts: Vec<ChowLiuTree> = (0..3).map(|_| ChowLiuTree::random(&mut rng, 8, 0.05)).collect();
    let mut draw = |n: usize| {
        let mut rows = Vec::new();
        for (i, t) in parts.iter().enumerate() {
            let d = t.sample(&mut rng, n / 3 + (i < n % 3) as usize);
            rows.extend((0..d.num_rows()).map(|h| d.row(h)));
        }
        Dataset::from_rows(&rows).expect("rectangular")
    };
    (draw(n), draw(n / 4), draw(n / 4))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn run_example() -> anyhow::Result<()> {
    let (train, valid, test) = sample_mixture(21, 3000);
    let cfg = SearchConfig {
        max_iters: 30,
        ..SearchConfig::default()
    };
    let structure = strudel_learn(&train, &valid, &cfg)?.circuit;
    let single = structure.log_likelihoods_classical(&test, None);
    println!("single circuit: test LL {:.4}", mean(&single));

    let em = EmConfig {
        components: 4,
        iters: 50,
        ..EmConfig::default()
    };
    let before = flow_passes_on_this_thread();
    let fit = em_fit(&structure, &train, &em)?;
    println!(
        "EM k=4: {} iterations, {} flow pass, train LL {:.4} -> {:.4}",
        fit.trace.len() - 1,
        flow_passes_on_this_thread() - before,
        fit.trace[0],
        fit.trace.last().unwrap()
    );
    println!("EM k=4: test LL {:.4}", mean(&fit.mixture.log_likelihoods(&test)?));

    let bagged = bem_fit(
        &structure,
        &train,
        3,
        &EmConfig {
            components: 2,
            ..em.clone()
        },
    )?;
    println!(
        "bagged EM 3x2: {} components, test LL {:.4}",
        bagged.components(),
        mean(&bagged.log_likelihoods(&test)?)
    );

    let sel = select_components(&[1, 2, 4, 8], &valid, |k| {
        Ok(em_fit(
            &structure,
            &train,
            &EmConfig {
                components: k,
                ..em.clone()
            },
        )?
        .mixture)
    })?;
    println!(
        "validation picks k={} (scores {:?})",
        sel.best_components,
        sel.scores
            .iter()
            .map(|(k, s)| (*k, (s * 1e4).round() / 1e4))
            .collect::<Vec<_>>()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
