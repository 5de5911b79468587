//! Prints the desk-experiment statistics and caches the expensive artifacts
//! (trained model, ensembles) under /tmp/desk_cache for fast re-inspection.

use std::path::{Path, PathBuf};

use rcnn_core::grid::{
    migrate_hard_data, sample_drillholes, CategoricalGrid, WindowSpec, UNKNOWN,
};
use rcnn_core::metrics::{
    indicator_variance, proportions, sill_estimate, Ensemble,
};
use rcnn_core::rcnn::{self, RCNNConfig, RCNNModel};
use rcnn_core::rng::derive_seed;
use rcnn_core::simulate::{run_ensemble, AssignMode, SimulationJob};
use rcnn_core::synthti::{generate_surface_model, split_sectors, SurfaceModelParams};

const DESK_CROP: [usize; 3] = [32, 32, 32];
const DESK_REALIZATIONS: usize = 20;
const DESK_CONDITIONING: f64 = 0.05;
const DESK_SEED: u64 = 77;

fn desk_config() -> RCNNConfig {
    RCNNConfig {
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
    }
}

fn minority(grid: &CategoricalGrid) -> f64 {
    proportions(grid).unwrap()[1]
}

fn cached_model(cache: &Path, ti_crop: &CategoricalGrid) -> (RCNNModel, bool) {
    let path = cache.join("model.ckpt");
    if path.exists() {
        if let Ok(model) = rcnn_core::checkpoint::load_model(&path) {
            let want = serde_json::to_string(&desk_config()).unwrap();
            let have = serde_json::to_string(&model.config).unwrap();
            if want == have {
                println!("[model] loaded from cache");
                return (model, false);
            }
            println!("[model] cache config mismatch, retraining");
        }
    }
    let t0 = std::time::Instant::now();
    let model = rcnn::train(ti_crop, desk_config()).unwrap();
    println!("[model] trained in {:.1} s", t0.elapsed().as_secs_f64());
    rcnn_core::checkpoint::save_model(&path, &model).unwrap();
    (model, true)
}

fn cached_ensemble(
    cache: &Path,
    sector: usize,
    fresh_model: bool,
    job: &SimulationJob,
) -> Ensemble {
    let paths: Vec<PathBuf> = (0..DESK_REALIZATIONS)
        .map(|r| cache.join(format!("s{sector}_real{r:02}.gslib")))
        .collect();
    if !fresh_model && paths.iter().all(|p| p.exists()) {
        let members = paths
            .iter()
            .map(|p| CategoricalGrid::load_gslib(p, DESK_CROP, 2).unwrap())
            .collect();
        println!("[sector {sector}] ensemble loaded from cache");
        return Ensemble::new(members).unwrap();
    }
    let t0 = std::time::Instant::now();
    let ensemble = run_ensemble(job).unwrap();
    println!(
        "[sector {sector}] simulated {} members in {:.1} s",
        DESK_REALIZATIONS,
        t0.elapsed().as_secs_f64()
    );
    for (member, path) in ensemble.members().iter().zip(&paths) {
        member.save_gslib(path).unwrap();
    }
    ensemble
}

fn main() {
    let cache = PathBuf::from("/tmp/desk_cache");
    std::fs::create_dir_all(&cache).unwrap();

    // stage A: generator seed search, identical to the acceptance desk build
    let mut found = None;
    for seed in 0..64 {
        let params = SurfaceModelParams {
            seed,
            ..Default::default()
        };
        let m = generate_surface_model(&params).unwrap();
        if !m.target_met {
            continue;
        }
        let (ti, s1, s2, s3) = split_sectors(&m.grid).unwrap();
        let var = indicator_variance(&ti, 2).unwrap();
        if (var - 0.18).abs() > 0.008 {
            continue;
        }
        let crop = ti.crop([0, 0, 0], DESK_CROP).unwrap();
        let crop_var = indicator_variance(&crop, 2).unwrap();
        let crop_min = proportions(&crop).unwrap()[1];
        let spread = [&s1, &s2, &s3]
            .iter()
            .map(|g| {
                let gm = proportions(&g.crop([0, 0, 0], DESK_CROP).unwrap()).unwrap()[1];
                (gm - crop_min).abs()
            })
            .fold(0.0f64, f64::max);
        println!(
            "[seed {seed}] svar {var:.4} cvar {crop_var:.4} cmin {crop_min:.4} spread {spread:.4}"
        );
        if (crop_var - 0.18).abs() <= 0.015 && spread <= 0.05 && found.is_none() {
            found = Some((seed, ti, vec![s1, s2, s3], var));
        }
    }
    let (gen_seed, ti, sectors, ti_variance) = found.expect("no in-band seed");
    println!("\nchosen generator seed {gen_seed}, TI sector variance {ti_variance:.4}");
    println!("TI sector 50^3   minority {:.4}", minority(&ti));

    let ti_crop = ti.crop([0, 0, 0], DESK_CROP).unwrap();
    let crop_min = minority(&ti_crop);
    println!(
        "TI crop   32^3   minority {:.4}, variance {:.4}",
        crop_min,
        indicator_variance(&ti_crop, 2).unwrap()
    );
    for (s, gt) in sectors.iter().enumerate() {
        let gt_crop = gt.crop([0, 0, 0], DESK_CROP).unwrap();
        println!(
            "GT sector {s} crop minority {:.4} (full {:.4})",
            minority(&gt_crop),
            minority(gt)
        );
    }

    // stage B: train or reload
    let (model, fresh_model) = cached_model(&cache, &ti_crop);
    for entry in &model.loss_log {
        println!("{entry:?}");
    }
    let first = model.loss_log.first().unwrap().total();
    let last = model.loss_log.last().unwrap().total();
    println!(
        "loss first {first:.4} -> last {last:.4} (ratio {:.3}, need < 0.6)\n",
        last / first
    );

    // stage C: per-sector ensembles and statistics
    let mut all_minority = Vec::new();
    let mut all_sill = Vec::new();
    for (s, gt) in sectors.iter().enumerate() {
        let gt_crop = gt.crop([0, 0, 0], DESK_CROP).unwrap();
        let hard = sample_drillholes(
            &gt_crop,
            DESK_CONDITIONING,
            derive_seed(DESK_SEED, "desk-sample", s as u64),
        )
        .unwrap();
        let n_min = hard.samples.iter().filter(|smp| smp.category == 2).count();
        let empty = CategoricalGrid::unknown(DESK_CROP[0], DESK_CROP[1], DESK_CROP[2], 2);
        let (anchors, report) = migrate_hard_data(&empty, &hard).unwrap();
        let informed = (0..anchors.len())
            .filter(|&i| anchors.value_at(i) != UNKNOWN)
            .count();
        println!(
            "[sector {s}] {} samples ({} minority, {:.4}), {informed} informed nodes, {} conflicts",
            hard.len(),
            n_min,
            n_min as f64 / hard.len() as f64,
            report.conflicts
        );

        let job = SimulationJob {
            model: &model,
            hard_data: &hard,
            dims: DESK_CROP,
            realizations: DESK_REALIZATIONS,
            base_seed: derive_seed(DESK_SEED, "desk-sim", s as u64),
            mode: AssignMode::Draw,
        };
        let ensemble = cached_ensemble(&cache, s, fresh_model, &job);
        let mut sector_min = Vec::new();
        let mut sector_sill = Vec::new();
        for member in ensemble.members() {
            sector_min.push(minority(member));
            sector_sill.push(sill_estimate(member, 2).unwrap());
        }
        let m_mean = sector_min.iter().sum::<f64>() / sector_min.len() as f64;
        let s_mean = sector_sill.iter().sum::<f64>() / sector_sill.len() as f64;
        println!(
            "[sector {s}] member minority: {}",
            sector_min
                .iter()
                .map(|v| format!("{v:.3}"))
                .collect::<Vec<_>>()
                .join(" ")
        );
        println!("[sector {s}] mean minority {m_mean:.4}, mean sill {s_mean:.4}");
        all_minority.extend(sector_min);
        all_sill.extend(sector_sill);
    }

    let mean_min = all_minority.iter().sum::<f64>() / all_minority.len() as f64;
    let mean_sill = all_sill.iter().sum::<f64>() / all_sill.len() as f64;
    println!("\n==== verdicts ====");
    println!(
        "criterion 7: mean sill {mean_sill:.4} in [0.13, 0.23]? {}",
        (0.13..=0.23).contains(&mean_sill)
    );
    println!(
        "criterion 8: mean minority {mean_min:.4} vs TI crop {crop_min:.4} (|diff| {:.4}, need <= 0.10)? {}",
        (mean_min - crop_min).abs(),
        (mean_min - crop_min).abs() <= 0.10
    );
}
