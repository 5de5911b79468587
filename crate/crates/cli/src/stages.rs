//! Pipeline stage implementations behind the subcommands.
//!
//! Every stage writes through a [`StageWriter`]: files land under a
//! `.quarantine` suffix and are promoted to their final names only when the
//! whole stage succeeds, so a failed run never leaves a truncated file under
//! a final name. Each stage also echoes the resolved configuration into its
//! output directory.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rcnn_core::checkpoint::{load_model, save_model};
use rcnn_core::grid::{
    migrate_hard_data, sample_drillholes, save_real_gslib, CategoricalGrid, DrillHoleSet,
};
use rcnn_core::metrics::{
    etype, indicator_variance, indicator_variogram, proportions, sill_estimate, variance_map,
    Direction, Ensemble, VariogramResult,
};
use rcnn_core::rcnn;
use rcnn_core::rng::derive_seed;
use rcnn_core::simulate::{run_ensemble, AssignMode, SimulationJob};
use rcnn_core::synthti::{generate_surface_model, split_sectors};

use crate::config::{echo_text, resolve, RunConfig};

const QUARANTINE: &str = ".quarantine";
const CONFIG_ECHO: &str = "run_config.toml";

/// Stages output files under a quarantine suffix; `commit` promotes them.
struct StageWriter {
    dir: PathBuf,
    staged: Vec<(PathBuf, PathBuf)>,
}

impl StageWriter {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(StageWriter {
            dir,
            staged: Vec::new(),
        })
    }

    /// Quarantined path for `name`, recorded for promotion.
    fn path(&mut self, name: &str) -> PathBuf {
        let staged = self.dir.join(format!("{name}{QUARANTINE}"));
        self.staged.push((staged.clone(), self.dir.join(name)));
        staged
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    fn echo_config(&mut self, config: &RunConfig) -> Result<()> {
        self.write_text(CONFIG_ECHO, &echo_text(config)?)
    }

    fn commit(self) -> Result<()> {
        for (staged, final_path) in &self.staged {
            fs::rename(staged, final_path).with_context(|| {
                format!("promoting {} to {}", staged.display(), final_path.display())
            })?;
        }
        Ok(())
    }

    /// Writes one incremental artifact and promotes it immediately: the
    /// content is complete when `write` returns, and the file must survive a
    /// later failure of the same stage (epoch snapshots).
    fn publish(
        &self,
        name: &str,
        write: impl FnOnce(&std::path::Path) -> rcnn_core::Result<()>,
    ) -> rcnn_core::Result<()> {
        let staged = self.dir.join(format!("{name}{QUARANTINE}"));
        write(&staged)?;
        fs::rename(&staged, self.dir.join(name)).map_err(|source| {
            rcnn_core::Error::Io {
                path: staged.display().to_string(),
                source,
            }
        })
    }
}

#[derive(Serialize)]
struct GenTiReport<'a> {
    /// Master seed of the run; the generator itself uses `stage_seed`.
    seed: u64,
    stage_seed: u64,
    params: &'a rcnn_core::synthti::SurfaceModelParams,
    achieved_minority: f64,
    target_met: bool,
    offset: f64,
    attempts: usize,
    files: Vec<String>,
}

/// Generate the synthetic field and split it into the training image and the
/// three ground-truth sectors.
pub fn cmd_gen_ti(config: &RunConfig) -> Result<()> {
    let mut w = StageWriter::new(config.out.clone())?;
    let stage_seed = derive_seed(config.seed, "gen-ti", 0);
    let params = config.field.params(stage_seed);
    let model = generate_surface_model(&params).context("generating field")?;
    let (ti, s1, s2, s3) = split_sectors(&model.grid).context("splitting sectors")?;

    let files = [
        ("field.gslib", &model.grid),
        ("ti.gslib", &ti),
        ("s1.gslib", &s1),
        ("s2.gslib", &s2),
        ("s3.gslib", &s3),
    ];
    for (name, grid) in &files {
        grid.save_gslib(&w.path(name))
            .with_context(|| format!("writing {name}"))?;
    }
    let report = GenTiReport {
        seed: config.seed,
        stage_seed,
        params: &params,
        achieved_minority: model.achieved_minority,
        target_met: model.target_met,
        offset: model.offset,
        attempts: model.attempts,
        files: files.iter().map(|(n, _)| n.to_string()).collect(),
    };
    w.write_text(
        "gen_ti.json",
        &format!("{}\n", serde_json::to_string_pretty(&report)?),
    )?;
    w.echo_config(config)?;
    w.commit()?;
    if !model.target_met {
        log::warn!(
            "minority target missed; achieved {:.4}",
            model.achieved_minority
        );
    }
    println!(
        "gen-ti: wrote field + 4 sectors to {} (minority {:.4})",
        config.out.display(),
        model.achieved_minority
    );
    Ok(())
}

/// Format a fraction as a percent tag: 0.05 -> "5", 0.025 -> "2.5".
fn pct_tag(fraction: f64) -> String {
    let p = fraction * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round() as i64)
    } else {
        format!("{p}")
    }
}

/// Sample vertical drill holes from every sector at every fraction.
pub fn cmd_sample(config: &RunConfig) -> Result<()> {
    let mut w = StageWriter::new(config.out.clone())?;
    let s = &config.sample;
    if s.sectors.is_empty() || s.fractions.is_empty() {
        bail!("sample stage needs at least one sector and one fraction");
    }
    let mut written = 0usize;
    for (si, sector_path) in s.sectors.iter().enumerate() {
        let path = resolve(&config.out, sector_path);
        let grid = CategoricalGrid::load_gslib(&path, s.sector_dims, s.k)
            .with_context(|| format!("loading sector {}", path.display()))?;
        let stem = path
            .file_stem()
            .and_then(|x| x.to_str())
            .unwrap_or("sector")
            .to_string();
        for (fi, &fraction) in s.fractions.iter().enumerate() {
            let seed = derive_seed(
                config.seed,
                "sample",
                (si * s.fractions.len() + fi) as u64,
            );
            let dh = sample_drillholes(&grid, fraction, seed)
                .with_context(|| format!("sampling {stem} at {fraction}"))?;
            let name = format!("{stem}_{}pct.csv", pct_tag(fraction));
            dh.save_csv(&w.path(&name))
                .with_context(|| format!("writing {name}"))?;
            written += 1;
        }
    }
    w.echo_config(config)?;
    w.commit()?;
    println!("sample: wrote {written} drill-hole files to {}", config.out.display());
    Ok(())
}

/// Train the network chain on the training image (optionally cropped) and
/// write the checkpoint plus the per-epoch loss table.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let mut w = StageWriter::new(config.out.clone())?;
    let t = &config.train;
    let ti_path = resolve(&config.out, &t.ti);
    let mut ti = CategoricalGrid::load_gslib(&ti_path, t.ti_dims, t.model.k)
        .with_context(|| format!("loading training image {}", ti_path.display()))?;
    if let Some(crop) = t.crop {
        ti = ti
            .crop([0, 0, 0], crop)
            .context("cropping training image")?;
    }

    let mut model = match &t.resume {
        None => {
            let mut model_config = t.model.clone();
            model_config.seed = derive_seed(config.seed, "train", 0);
            rcnn::RCNNModel::new(model_config).context("building model")?
        }
        Some(resume) => {
            let resume_path = resolve(&config.out, resume);
            let mut model = load_model(&resume_path)
                .with_context(|| format!("loading checkpoint {}", resume_path.display()))?;
            model.config.epochs = t.model.epochs;
            model
        }
    };
    rcnn::train_model_with(&mut model, &ti, |m| {
        if !t.epoch_checkpoints {
            return Ok(());
        }
        w.publish(&format!("model_epoch_{:03}.ckpt", m.trained_epochs), |p| {
            save_model(p, m)
        })
    })
    .context("training")?;

    save_model(&w.path("model.ckpt"), &model).context("writing checkpoint")?;
    let mut loss = String::from("epoch,cnn_index,mean_loss\n");
    for e in &model.loss_log {
        for (i, l) in e.per_cnn.iter().enumerate() {
            loss.push_str(&format!("{},{},{}\n", e.epoch, i + 1, l));
        }
    }
    w.write_text("loss.csv", &loss)?;
    w.echo_config(config)?;
    w.commit()?;
    let last = model.loss_log.last().map(|e| e.total()).unwrap_or(f64::NAN);
    println!(
        "train: {} epochs, final mean loss {last:.4}, checkpoint in {}",
        model.trained_epochs,
        config.out.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct Manifest {
    pub model: String,
    pub hard_data: String,
    pub dims: [usize; 3],
    pub realizations: usize,
    pub base_seed: u64,
    pub mode: AssignMode,
    pub seeds: Vec<u64>,
    pub files: Vec<String>,
    pub conditioning: ConditioningReport,
}

#[derive(Serialize, Deserialize)]
pub struct ConditioningReport {
    pub samples: usize,
    pub informed_nodes: usize,
    pub conflicts: usize,
    /// Every realization was checked against the migrated hard data.
    pub audited: bool,
}

/// Simulate the requested ensemble and write one grid file per realization
/// plus an ordered manifest. Every realization is audited against the
/// migrated hard data before anything is promoted out of quarantine.
pub fn cmd_simulate(config: &RunConfig) -> Result<()> {
    let s = &config.simulate;
    let mut w = StageWriter::new(config.out.join("realizations"))?;
    let model_path = resolve(&config.out, &s.model);
    let model = load_model(&model_path)
        .with_context(|| format!("loading checkpoint {}", model_path.display()))?;

    let hard_data = if s.hard_data.as_os_str().is_empty() {
        DrillHoleSet::new(Vec::new(), 0.0).expect("empty set")
    } else {
        let p = resolve(&config.out, &s.hard_data);
        DrillHoleSet::load_csv(&p)
            .with_context(|| format!("loading hard data {}", p.display()))?
    };

    let base_seed = derive_seed(config.seed, "simulate", 0);
    let job = SimulationJob {
        model: &model,
        hard_data: &hard_data,
        dims: s.dims,
        realizations: s.realizations,
        base_seed,
        mode: s.mode,
    };
    let ensemble = run_ensemble(&job).context("simulating ensemble")?;

    // audit: conditioning data must survive in every member
    let empty = CategoricalGrid::unknown(s.dims[0], s.dims[1], s.dims[2], model.config.k);
    let (anchors, report) = migrate_hard_data(&empty, &hard_data).context("migrating hard data")?;
    for (r, grid) in ensemble.members().iter().enumerate() {
        for idx in 0..anchors.len() {
            let want = anchors.values()[idx];
            if want != rcnn_core::grid::UNKNOWN && grid.values()[idx] != want {
                bail!("realization {r} lost conditioning at node {idx}");
            }
        }
    }

    let mut files = Vec::new();
    for (r, grid) in ensemble.members().iter().enumerate() {
        let name = format!("real_{r:03}.gslib");
        grid.save_gslib(&w.path(&name))
            .with_context(|| format!("writing {name}"))?;
        files.push(name);
    }
    let manifest = Manifest {
        model: s.model.display().to_string(),
        hard_data: s.hard_data.display().to_string(),
        dims: s.dims,
        realizations: s.realizations,
        base_seed,
        mode: s.mode,
        seeds: (0..s.realizations as u64).map(|r| base_seed + r).collect(),
        files,
        conditioning: ConditioningReport {
            samples: hard_data.samples.len(),
            informed_nodes: report.informed_nodes,
            conflicts: report.conflicts,
            audited: true,
        },
    };
    w.write_text(
        "manifest.json",
        &format!("{}\n", serde_json::to_string_pretty(&manifest)?),
    )?;
    w.echo_config(config)?;
    w.commit()?;
    println!(
        "simulate: {} realizations of {:?} in {}",
        s.realizations,
        s.dims,
        config.out.join("realizations").display()
    );
    Ok(())
}

fn combined_variogram_csv(results: &[VariogramResult]) -> String {
    let mut out = String::from("direction,lag,gamma,pairs\n");
    for r in results {
        for l in &r.lags {
            out.push_str(&format!("{},{},{},{}\n", r.direction, l.lag, l.gamma, l.pairs));
        }
    }
    out
}

/// Horizontal and vertical max lags: explicit config value or half extent.
fn max_lags(config_lag: usize, dims: [usize; 3]) -> (usize, usize) {
    let auto_h = (dims[0].max(dims[1]) / 2).max(1);
    let auto_v = (dims[2] / 2).max(1);
    if config_lag > 0 {
        (config_lag, config_lag)
    } else {
        (auto_h, auto_v)
    }
}

fn both_direction_variograms(
    grid: &CategoricalGrid,
    category: u8,
    config_lag: usize,
) -> Result<Vec<VariogramResult>> {
    let (h, v) = max_lags(config_lag, grid.dims());
    Ok(vec![
        indicator_variogram(grid, category, Direction::OmniHorizontal, h)?,
        indicator_variogram(grid, category, Direction::Vertical, v)?,
    ])
}

#[derive(Serialize)]
struct GridStats {
    proportions: Vec<f64>,
    minority_proportion: f64,
    indicator_variance: f64,
    sill_estimate: f64,
}

fn grid_stats(grid: &CategoricalGrid, category: u8) -> Result<GridStats> {
    let props = proportions(grid)?;
    Ok(GridStats {
        minority_proportion: props[category as usize - 1],
        proportions: props,
        indicator_variance: indicator_variance(grid, category)?,
        sill_estimate: sill_estimate(grid, category)?,
    })
}

#[derive(Serialize)]
struct Summary {
    ensemble_size: usize,
    category: u8,
    max_lag_horizontal: usize,
    max_lag_vertical: usize,
    ti: GridStats,
    ground_truth: Option<GridStats>,
    realizations: RealizationStats,
    etype_threshold: EtypeThresholdStats,
}

#[derive(Serialize)]
struct RealizationStats {
    proportions_mean: Vec<f64>,
    minority_proportion_mean: f64,
    sill_mean: f64,
    sill_min: f64,
    sill_max: f64,
    per_realization: Vec<RealizationEntry>,
}

#[derive(Serialize)]
struct RealizationEntry {
    file: String,
    proportions: Vec<f64>,
    sill: f64,
}

#[derive(Serialize)]
struct EtypeThresholdStats {
    horizontal_gamma3: Option<f64>,
    vertical_gamma3: Option<f64>,
}

/// Validate an ensemble against the training image (and optionally a held-out
/// ground-truth sector): variogram tables for every grid, E-type and local
/// variance maps, and a summary of proportions and sills.
pub fn cmd_metrics(config: &RunConfig) -> Result<()> {
    let m = &config.metrics;
    let mut w = StageWriter::new(config.out.join("metrics"))?;

    let ti_path = resolve(&config.out, &m.ti);
    let ti = CategoricalGrid::load_gslib(&ti_path, m.ti_dims, m.k)
        .with_context(|| format!("loading training image {}", ti_path.display()))?;
    let gt = if m.ground_truth.as_os_str().is_empty() {
        None
    } else {
        let p = resolve(&config.out, &m.ground_truth);
        Some(
            CategoricalGrid::load_gslib(&p, m.ground_truth_dims, m.k)
                .with_context(|| format!("loading ground truth {}", p.display()))?,
        )
    };

    let real_dir = resolve(&config.out, &m.realizations);
    let manifest_path = real_dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(
        &fs::read_to_string(&manifest_path)
            .with_context(|| format!("reading {}", manifest_path.display()))?,
    )
    .context("decoding manifest")?;
    let mut members = Vec::with_capacity(manifest.files.len());
    for f in &manifest.files {
        members.push(
            CategoricalGrid::load_gslib(&real_dir.join(f), manifest.dims, m.k)
                .with_context(|| format!("loading realization {f}"))?,
        );
    }
    let ensemble = Ensemble::new(members).context("assembling ensemble")?;

    w.write_text(
        "variogram_ti.csv",
        &combined_variogram_csv(&both_direction_variograms(&ti, m.category, m.max_lag)?),
    )?;
    if let Some(gt) = &gt {
        w.write_text(
            "variogram_gt.csv",
            &combined_variogram_csv(&both_direction_variograms(gt, m.category, m.max_lag)?),
        )?;
    }
    let mut sills = Vec::new();
    let mut minority = Vec::new();
    let mut per_real = Vec::new();
    for (r, grid) in ensemble.members().iter().enumerate() {
        w.write_text(
            &format!("variogram_real_{r:03}.csv"),
            &combined_variogram_csv(&both_direction_variograms(grid, m.category, m.max_lag)?),
        )?;
        let sill = sill_estimate(grid, m.category)?;
        let props = proportions(grid)?;
        sills.push(sill);
        minority.push(props[m.category as usize - 1]);
        per_real.push(RealizationEntry {
            file: manifest.files[r].clone(),
            proportions: props,
            sill,
        });
    }

    let e = etype(&ensemble, m.category);
    let v = variance_map(&ensemble, m.category);
    save_real_gslib(&w.path("etype.gslib"), ensemble.dims(), "etype", &e)
        .context("writing E-type map")?;
    save_real_gslib(
        &w.path("variance_map.gslib"),
        ensemble.dims(),
        "local_variance",
        &v,
    )
    .context("writing variance map")?;

    // threshold the E-type at probability 0.5 to recover a categorical map
    let dims = ensemble.dims();
    let mut thresholded = CategoricalGrid::unknown(dims[0], dims[1], dims[2], 2);
    let other = if m.category == 2 { 1 } else { 2 };
    for (idx, &p) in e.iter().enumerate() {
        let code = if p > 0.5 { m.category } else { other };
        thresholded.set_at(idx, code);
    }
    thresholded
        .save_gslib(&w.path("etype_threshold.gslib"))
        .context("writing thresholded E-type")?;
    let et_h = indicator_variogram(&thresholded, m.category, Direction::OmniHorizontal, 3)?;
    let et_v = indicator_variogram(&thresholded, m.category, Direction::Vertical, 3)?;

    let (mlh, mlv) = max_lags(m.max_lag, dims);
    let n = sills.len() as f64;
    let summary = Summary {
        ensemble_size: ensemble.len(),
        category: m.category,
        max_lag_horizontal: mlh,
        max_lag_vertical: mlv,
        ti: grid_stats(&ti, m.category)?,
        ground_truth: gt.as_ref().map(|g| grid_stats(g, m.category)).transpose()?,
        realizations: RealizationStats {
            proportions_mean: (0..m.k)
                .map(|c| per_real.iter().map(|e| e.proportions[c]).sum::<f64>() / n)
                .collect(),
            minority_proportion_mean: minority.iter().sum::<f64>() / n,
            sill_mean: sills.iter().sum::<f64>() / n,
            sill_min: sills.iter().cloned().fold(f64::INFINITY, f64::min),
            sill_max: sills.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            per_realization: per_real,
        },
        etype_threshold: EtypeThresholdStats {
            horizontal_gamma3: et_h.gamma_at(3),
            vertical_gamma3: et_v.gamma_at(3),
        },
    };
    w.write_text(
        "summary.json",
        &format!("{}\n", serde_json::to_string_pretty(&summary)?),
    )?;
    w.echo_config(config)?;
    w.commit()?;
    println!(
        "metrics: ensemble of {}, realization sill in [{:.4}, {:.4}], tables in {}",
        summary.ensemble_size,
        summary.realizations.sill_min,
        summary.realizations.sill_max,
        config.out.join("metrics").display()
    );
    Ok(())
}
