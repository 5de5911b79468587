//! Tiny-imbalanced-training probe: does sequential simulation preserve the
//! training image's category proportions at desk-like conditioning levels?

use rcnn_core::grid::{
    migrate_hard_data, sample_drillholes, sample_random_nodes, CategoricalGrid,
};
use rcnn_core::metrics::proportions;
use rcnn_core::rcnn::{assemble_input, train, RCNNConfig};
use rcnn_core::rng::{derive_seed, rng_from_seed};
use rcnn_core::simulate::{random_path, simulate_domains, AssignMode};

const N: usize = 20;

/// Two thin category-2 bands in a category-1 matrix, p2 = 0.25.
fn banded_ti() -> CategoricalGrid {
    let mut g = CategoricalGrid::unknown(N, N, N, 2);
    for z in 0..N {
        let band = (z % 8) < 2; // bands at z = 0..2, 8..10, 16..18
        let cat = if band { 2 } else { 1 };
        for y in 0..N {
            for x in 0..N {
                g.set(x, y, z, cat);
            }
        }
    }
    g
}

fn main() {
    let ti = banded_ti();
    println!("TI proportions {:?}", proportions(&ti).unwrap());

    let cfg = RCNNConfig {
        n_cnns: 2,
        window: rcnn_core::grid::WindowSpec::new([7, 7, 7], [3, 3, 3]).unwrap(),
        k: 2,
        conv_maps: vec![4, 4],
        pool_after: vec![false, true],
        fc_hidden: vec![32],
        epochs: 8,
        batch_size: 16,
        pairs_per_epoch: Some(512),
        early_stop: false,
        seed: 7,
        ..RCNNConfig::default()
    };
    let t0 = std::time::Instant::now();
    let model = train(&ti, cfg.clone()).unwrap();
    println!(
        "trained in {:.1} s, losses {:?}",
        t0.elapsed().as_secs_f64(),
        model
            .loss_log
            .iter()
            .map(|e| e.total())
            .collect::<Vec<_>>()
    );

    // marginal prediction on an all-unknown neighborhood, per chain member
    let dims = [N, N, N];
    let center = ti.node_index(N / 2, N / 2, N / 2);
    let empty = CategoricalGrid::unknown(N, N, N, 2);
    for i in 0..cfg.n_cnns {
        let domains: Vec<CategoricalGrid> = (0..=i).map(|_| empty.clone()).collect();
        let input = assemble_input(&domains, center, &cfg.window, cfg.k).unwrap();
        let field = model.chain[i].forward_infer(&input).unwrap();
        println!(
            "cnn {} all-unknown marginal at center: {:?}",
            i + 1,
            field.probs_at(field.center_pos())
        );
    }

    // domain-by-domain proportions, simulating from 5% drill holes
    for seed in 0..3u64 {
        let hard = sample_drillholes(&ti, 0.05, derive_seed(99, "probe-dh", seed)).unwrap();
        let (d0, _) = migrate_hard_data(&empty, &hard).unwrap();
        let path = random_path(dims, derive_seed(seed, "path", 0));
        let mut rng = rng_from_seed(derive_seed(seed, "draws", 0));
        let domains =
            simulate_domains(&model.chain, &d0, &path, &mut rng, 0.5, AssignMode::Draw).unwrap();
        let p: Vec<String> = domains[1..]
            .iter()
            .map(|d| format!("{:.3}", proportions(d).unwrap()[1]))
            .collect();
        println!("drillhole 5% seed {seed}: p2 per domain {p:?}");
    }

    // same but from the training-style anchor sample (10% random nodes)
    let anchors = sample_random_nodes(&ti, 0.10, derive_seed(cfg.seed, "train-anchors", 0)).unwrap();
    let (d0, _) = migrate_hard_data(&empty, &anchors).unwrap();
    for seed in 0..3u64 {
        let path = random_path(dims, derive_seed(seed, "path", 1));
        let mut rng = rng_from_seed(derive_seed(seed, "draws", 1));
        let domains =
            simulate_domains(&model.chain, &d0, &path, &mut rng, 0.5, AssignMode::Draw).unwrap();
        let p: Vec<String> = domains[1..]
            .iter()
            .map(|d| format!("{:.3}", proportions(d).unwrap()[1]))
            .collect();
        println!("anchors 10% seed {seed}: p2 per domain {p:?}");
    }
}
