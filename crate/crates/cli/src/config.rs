//! Run configuration: one TOML file drives every pipeline stage.
//!
//! All keys have defaults, so an empty file is a valid full-scale run. The
//! `--set section.key=value` flag patches the parsed TOML before it is
//! decoded, so every key is overridable from the command line. The resolved
//! configuration is echoed into each output directory, and relative paths in
//! the file are resolved against the output directory so stages chain without
//! repeating directories.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rcnn_core::rcnn::RCNNConfig;
use rcnn_core::simulate::AssignMode;
use rcnn_core::synthti::SurfaceModelParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Output root; relative paths inside the config resolve against it.
    pub out: PathBuf,
    /// Worker threads for ensemble simulation (0 = all cores).
    pub jobs: usize,
    pub field: FieldSection,
    pub sample: SampleSection,
    pub train: TrainSection,
    pub simulate: SimulateSection,
    pub metrics: MetricsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 20260801,
            out: PathBuf::from("out"),
            jobs: 0,
            field: FieldSection::default(),
            sample: SampleSection::default(),
            train: TrainSection::default(),
            simulate: SimulateSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

/// Synthetic field geometry; the seed is derived from the master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldSection {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub n_surfaces: usize,
    pub cosines: (usize, usize),
    pub amplitude: (f64, f64),
    pub wavelength: (f64, f64),
    pub target_minority: (f64, f64),
}

impl Default for FieldSection {
    fn default() -> Self {
        let p = SurfaceModelParams::default();
        FieldSection {
            nx: p.nx,
            ny: p.ny,
            nz: p.nz,
            n_surfaces: p.n_surfaces,
            cosines: p.cosines,
            amplitude: p.amplitude,
            wavelength: p.wavelength,
            target_minority: p.target_minority,
        }
    }
}

impl FieldSection {
    pub fn params(&self, seed: u64) -> SurfaceModelParams {
        SurfaceModelParams {
            nx: self.nx,
            ny: self.ny,
            nz: self.nz,
            n_surfaces: self.n_surfaces,
            cosines: self.cosines,
            amplitude: self.amplitude,
            wavelength: self.wavelength,
            target_minority: self.target_minority,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSection {
    /// Drill-hole fractions sampled from every sector.
    pub fractions: Vec<f64>,
    /// Sector grid files, sampled in order as s1, s2, s3.
    pub sectors: Vec<PathBuf>,
    pub sector_dims: [usize; 3],
    pub k: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection {
            fractions: vec![0.02, 0.05],
            sectors: vec!["s1.gslib".into(), "s2.gslib".into(), "s3.gslib".into()],
            sector_dims: [50, 50, 50],
            k: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub ti: PathBuf,
    pub ti_dims: [usize; 3],
    /// Optional training crop taken from the TI origin.
    pub crop: Option<[usize; 3]>,
    /// Continue training from this checkpoint instead of a fresh start; only
    /// the epoch target is taken from the config.
    pub resume: Option<PathBuf>,
    /// Also write `model_epoch_NNN.ckpt` after every epoch; each snapshot is
    /// promoted as soon as it is complete so an interrupted run keeps them.
    pub epoch_checkpoints: bool,
    /// Network chain and trainer settings; the seed is derived from the
    /// master seed.
    #[serde(flatten)]
    pub model: RCNNConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            ti: "ti.gslib".into(),
            ti_dims: [50, 50, 50],
            crop: Some([32, 32, 32]),
            resume: None,
            epoch_checkpoints: false,
            model: desk_scale_model(),
        }
    }
}

/// Chain sized for a single desktop core: four networks on a 9-cube search
/// window predicting a 5-cube inner pattern.
fn desk_scale_model() -> RCNNConfig {
    RCNNConfig {
        conv_maps: vec![8, 8, 16, 16],
        fc_hidden: vec![192, 128],
        window: rcnn_core::grid::WindowSpec::new([9, 9, 9], [5, 5, 5])
            .expect("odd window dims"),
        epochs: 12,
        pairs_per_epoch: Some(1536),
        ..RCNNConfig::default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSection {
    pub model: PathBuf,
    pub hard_data: PathBuf,
    pub dims: [usize; 3],
    pub realizations: usize,
    pub mode: AssignMode,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            model: "model.ckpt".into(),
            hard_data: "s1_5pct.csv".into(),
            dims: [50, 50, 50],
            realizations: 20,
            mode: AssignMode::Draw,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSection {
    pub ti: PathBuf,
    pub ti_dims: [usize; 3],
    /// Ground-truth sector compared alongside the TI; empty path disables.
    pub ground_truth: PathBuf,
    pub ground_truth_dims: [usize; 3],
    /// Realization directory produced by the simulate stage.
    pub realizations: PathBuf,
    /// Indicator category for variograms and proportions.
    pub category: u8,
    pub k: usize,
    /// 0 = half the grid extent per direction.
    pub max_lag: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            ti: "ti.gslib".into(),
            ti_dims: [50, 50, 50],
            ground_truth: "s1.gslib".into(),
            ground_truth_dims: [50, 50, 50],
            realizations: "realizations".into(),
            category: 2,
            k: 2,
            max_lag: 0,
        }
    }
}

/// Load the configuration: optional TOML file, then `--set` patches, then
/// flag overrides for the master seed, output root, and worker count.
pub fn load(
    config_path: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
    jobs: Option<usize>,
) -> Result<RunConfig> {
    let mut table = match config_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            text.parse::<toml::Table>()
                .with_context(|| format!("parsing config {}", p.display()))?
        }
        None => toml::Table::new(),
    };
    for patch in sets {
        apply_set(&mut table, patch)?;
    }
    let mut config: RunConfig = toml::Value::Table(table)
        .try_into()
        .context("decoding configuration")?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(o) = out {
        config.out = o.to_path_buf();
    }
    if let Some(j) = jobs {
        config.jobs = j;
    }
    Ok(config)
}

/// Patch one dotted key, e.g. `train.epochs=8`. The value is parsed as TOML;
/// anything that does not parse is taken as a bare string.
fn apply_set(table: &mut toml::Table, patch: &str) -> Result<()> {
    let (key, raw) = patch
        .split_once('=')
        .with_context(|| format!("--set {patch}: expected key=value"))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let mut node = table;
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().context("--set: empty key")?;
    for part in path {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry.as_table_mut() {
            Some(t) => t,
            None => bail!("--set {patch}: {part} is not a section"),
        };
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// Resolve a config path against the output root unless already absolute.
pub fn resolve(out: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}

/// Serialize the resolved configuration; written into every output directory.
pub fn echo_text(config: &RunConfig) -> Result<String> {
    toml::to_string_pretty(config).context("encoding configuration echo")
}
