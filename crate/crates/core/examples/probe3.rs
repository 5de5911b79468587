//! Post-mortem on the cached desk-scale model: per-domain proportions under
//! the exact training-epoch inputs, infer-mode vs train-mode prediction gap
//! on identical batches, and simulation drift under scatter vs drill-hole
//! conditioning.

use rcnn_core::checkpoint::load_model;
use rcnn_core::grid::{
    migrate_hard_data, sample_drillholes, sample_random_nodes, CategoricalGrid,
};
use rcnn_core::metrics::proportions;
use rcnn_core::rcnn::build_databases;
use rcnn_core::rng::{derive_seed, rng_from_seed};
use rcnn_core::simulate::{random_path, simulate_domains, AssignMode};
use rcnn_core::synthti::{generate_surface_model, split_sectors, SurfaceModelParams};

fn surface_crop() -> CategoricalGrid {
    let params = SurfaceModelParams {
        seed: 11,
        ..Default::default()
    };
    let m = generate_surface_model(&params).unwrap();
    let (ti, _, _, _) = split_sectors(&m.grid).unwrap();
    ti.crop([0, 0, 0], [32, 32, 32]).unwrap()
}

fn main() {
    let model = load_model(std::path::Path::new("/tmp/probe6.ckpt")).unwrap();
    let cfg = model.config.clone();
    let ti = surface_crop();
    let dims = ti.dims();
    println!("TI p2 {:.4}, epochs trained {}", proportions(&ti).unwrap()[1], model.trained_epochs);

    // exact epoch-12 training inputs
    let anchors = sample_random_nodes(&ti, cfg.per_dc, derive_seed(cfg.seed, "train-anchors", 0)).unwrap();
    let (d0, _) = migrate_hard_data(
        &CategoricalGrid::unknown(dims[0], dims[1], dims[2], cfg.k),
        &anchors,
    )
    .unwrap();
    let path = random_path(dims, derive_seed(cfg.seed, "train-path", 12));
    let mut sim_rng = rng_from_seed(derive_seed(cfg.seed, "train-sim", 12));
    let domains = simulate_domains(&model.chain, &d0, &path, &mut sim_rng, cfg.freeze_fraction, AssignMode::Draw).unwrap();
    let p: Vec<String> = domains[1..].iter().map(|d| format!("{:.3}", proportions(d).unwrap()[1])).collect();
    println!("epoch-12 training domains p2: {p:?}");

    let centers = &path.order()[..1536.min(path.len())];
    let dbs = build_databases(&ti, &domains, centers, cfg.window).unwrap();
    for db in &dbs {
        let ci = db.chain_index() - 1;
        let stack = &model.chain[ci];
        let mut pred_sum = 0.0;
        let mut pred_n = 0usize;
        let mut tgt_min = 0usize;
        let mut tgt_n = 0usize;
        let sample = 256.min(db.len());
        for j in 0..sample {
            let pair = db.pair(j).unwrap();
            let field = stack.forward_infer(&pair.input).unwrap();
            for pos in 0..field.positions() {
                pred_sum += field.probs_at(pos)[1];
                pred_n += 1;
            }
            for &t in &pair.target {
                if t != 0 {
                    tgt_n += 1;
                    if t == 2 {
                        tgt_min += 1;
                    }
                }
            }
        }
        // train-mode vs infer-mode on one identical batch of 32
        let mut scratch = load_model(std::path::Path::new("/tmp/probe6.ckpt")).unwrap();
        let clone = &mut scratch.chain[ci];
        let batch: Vec<_> = (0..32.min(db.len())).map(|j| db.pair(j).unwrap().input).collect();
        let (train_fields, _) = clone.forward_train(&batch).unwrap();
        let mut train_sum = 0.0;
        let mut train_n = 0usize;
        for f in &train_fields {
            for pos in 0..f.positions() {
                train_sum += f.probs_at(pos)[1];
                train_n += 1;
            }
        }
        let mut infer_sum = 0.0;
        let mut infer_n = 0usize;
        for b in &batch {
            let f = stack.forward_infer(b).unwrap();
            for pos in 0..f.positions() {
                infer_sum += f.probs_at(pos)[1];
                infer_n += 1;
            }
        }
        println!(
            "cnn{} on training db: mean infer p2 {:.3} (target minority {:.3}); batch32 train-mode {:.3} vs infer-mode {:.3}",
            ci + 1,
            pred_sum / pred_n as f64,
            tgt_min as f64 / tgt_n as f64,
            train_sum / train_n as f64,
            infer_sum / infer_n as f64
        );
    }

    // simulation drift: acceptance-style drill holes vs training-style scatter
    for (tag, hard) in [
        ("drillholes 5%", sample_drillholes(&ti, 0.05, derive_seed(99, "probe-dh", 0)).unwrap()),
        ("scatter 10%", anchors.clone()),
    ] {
        let (h0, _) = migrate_hard_data(
            &CategoricalGrid::unknown(dims[0], dims[1], dims[2], cfg.k),
            &hard,
        )
        .unwrap();
        for seed in 0..2u64 {
            let spath = random_path(dims, derive_seed(seed, "path", 1));
            let mut rng = rng_from_seed(derive_seed(seed, "draws", 1));
            let doms = simulate_domains(&model.chain, &h0, &spath, &mut rng, cfg.freeze_fraction, AssignMode::Draw).unwrap();
            let p: Vec<String> = doms[1..].iter().map(|d| format!("{:.3}", proportions(d).unwrap()[1])).collect();
            println!("[{tag}] sim seed {seed}: p2 per domain {p:?}");
        }
    }
}
