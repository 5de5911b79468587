//! Variant sweep locating which desk ingredient breaks proportion
//! reproduction: chain depth, window size, or the surface training image.

use rcnn_core::grid::{
    migrate_hard_data, sample_drillholes, CategoricalGrid, WindowSpec,
};
use rcnn_core::metrics::proportions;
use rcnn_core::rcnn::{assemble_input, train, RCNNConfig, RCNNModel};
use rcnn_core::rng::{derive_seed, rng_from_seed};
use rcnn_core::simulate::{random_path, simulate_domains, AssignMode};
use rcnn_core::synthti::{generate_surface_model, split_sectors, SurfaceModelParams};

fn banded_ti(n: usize) -> CategoricalGrid {
    let mut g = CategoricalGrid::unknown(n, n, n, 2);
    for z in 0..n {
        let cat = if (z % 8) < 2 { 2 } else { 1 };
        for y in 0..n {
            for x in 0..n {
                g.set(x, y, z, cat);
            }
        }
    }
    g
}

fn surface_crop() -> CategoricalGrid {
    let params = SurfaceModelParams {
        seed: 11,
        ..Default::default()
    };
    let m = generate_surface_model(&params).unwrap();
    let (ti, _, _, _) = split_sectors(&m.grid).unwrap();
    ti.crop([0, 0, 0], [32, 32, 32]).unwrap()
}

fn report(tag: &str, ti: &CategoricalGrid, model: &RCNNModel) {
    let cfg = &model.config;
    let dims = ti.dims();
    let empty = CategoricalGrid::unknown(dims[0], dims[1], dims[2], 2);
    let center = ti.node_index(dims[0] / 2, dims[1] / 2, dims[2] / 2);
    let mut marginals = Vec::new();
    for i in 0..cfg.n_cnns {
        let domains: Vec<CategoricalGrid> = (0..=i).map(|_| empty.clone()).collect();
        let input = assemble_input(&domains, center, &cfg.window, cfg.k).unwrap();
        let field = model.chain[i].forward_infer(&input).unwrap();
        marginals.push(format!(
            "{:.3}",
            field.probs_at(field.center_pos())[1]
        ));
    }
    println!("[{tag}] all-unknown marginal p2 per cnn: {marginals:?}");
    for seed in 0..2u64 {
        let hard = sample_drillholes(ti, 0.05, derive_seed(99, "probe-dh", seed)).unwrap();
        let (d0, _) = migrate_hard_data(&empty, &hard).unwrap();
        let path = random_path(dims, derive_seed(seed, "path", 0));
        let mut rng = rng_from_seed(derive_seed(seed, "draws", 0));
        let domains =
            simulate_domains(&model.chain, &d0, &path, &mut rng, 0.5, AssignMode::Draw).unwrap();
        let p: Vec<String> = domains[1..]
            .iter()
            .map(|d| format!("{:.3}", proportions(d).unwrap()[1]))
            .collect();
        println!("[{tag}] sim seed {seed}: p2 per domain {p:?}");
    }
}

fn run(tag: &str, ti: &CategoricalGrid, cfg: RCNNConfig) {
    let t0 = std::time::Instant::now();
    let model = train(ti, cfg).unwrap();
    let losses: Vec<String> = model.loss_log.iter().map(|e| format!("{:.1}", e.total())).collect();
    println!(
        "[{tag}] TI p2 {:.3}, trained {:.0} s, losses {losses:?}",
        proportions(ti).unwrap()[1],
        t0.elapsed().as_secs_f64()
    );
    report(tag, ti, &model);
}

fn base() -> RCNNConfig {
    RCNNConfig {
        n_cnns: 2,
        window: WindowSpec::new([7, 7, 7], [3, 3, 3]).unwrap(),
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
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    let banded = banded_ti(20);

    if which.is_empty() || which == "v2" {
        let cfg = RCNNConfig {
            n_cnns: 4,
            conv_maps: vec![4, 4, 8, 8],
            pool_after: vec![false, true, false, true],
            ..base()
        };
        run("v2 depth4 banded", &banded, cfg);
    }
    if which.is_empty() || which == "v3" {
        let cfg = RCNNConfig {
            window: WindowSpec::new([9, 9, 9], [5, 5, 5]).unwrap(),
            ..base()
        };
        run("v3 win9/5 banded", &banded, cfg);
    }
    if which.is_empty() || which == "v4" {
        let cfg = RCNNConfig {
            n_cnns: 4,
            conv_maps: vec![4, 4, 8, 8],
            pool_after: vec![false, true, false, true],
            window: WindowSpec::new([9, 9, 9], [5, 5, 5]).unwrap(),
            ..base()
        };
        run("v4 depth4 win9/5 banded", &banded, cfg);
    }
    if which.is_empty() || which == "v5" {
        let ti = surface_crop();
        let cfg = RCNNConfig {
            n_cnns: 4,
            conv_maps: vec![4, 4, 8, 8],
            pool_after: vec![false, true, false, true],
            window: WindowSpec::new([9, 9, 9], [5, 5, 5]).unwrap(),
            ..base()
        };
        run("v5 depth4 win9/5 surface32", &ti, cfg);
    }
    if which == "v6" {
        // the desk training, verbatim, cached for later probes
        let ti = surface_crop();
        let cfg = RCNNConfig {
            n_cnns: 4,
            window: WindowSpec::new([9, 9, 9], [5, 5, 5]).unwrap(),
            k: 2,
            conv_maps: vec![8, 8, 16, 16],
            pool_after: vec![false, true, false, true],
            fc_hidden: vec![192, 128],
            epochs: 12,
            batch_size: 32,
            pairs_per_epoch: Some(1536),
            early_stop: false,
            seed: 771,
            ..RCNNConfig::default()
        };
        let path = std::path::Path::new("/tmp/probe6.ckpt");
        let model = if path.exists() {
            rcnn_core::checkpoint::load_model(path).unwrap()
        } else {
            let t0 = std::time::Instant::now();
            let m = train(&ti, cfg).unwrap();
            println!("[v6] trained in {:.0} s", t0.elapsed().as_secs_f64());
            rcnn_core::checkpoint::save_model(path, &m).unwrap();
            m
        };
        let losses: Vec<String> = model
            .loss_log
            .iter()
            .map(|e| format!("{:.1}", e.total()))
            .collect();
        println!(
            "[v6 desk-exact] TI p2 {:.3}, losses {losses:?}",
            proportions(&ti).unwrap()[1]
        );
        report("v6 desk-exact", &ti, &model);
    }
}
