//! Sequential recursive simulation: walk a random path over each domain in
//! chain order, predict inner patterns, and freeze a partial subset.
//!
//! One realization builds domains D^0..D^N. D^0 holds only migrated hard data
//! and is never simulated. Each D^i starts from D^0, then the shared path is
//! walked; at every still-unknown node the network for domain i reads search
//! grid windows of D^0..D^{i-1}, the center category is always assigned, and
//! each remaining in-bounds unknown inner-pattern position is frozen with
//! probability `freeze_fraction`. Passes repeat until the domain is complete.
//! The returned realization is D^N.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{migrate_hard_data, CategoricalGrid, DrillHoleSet, WindowSpec, UNKNOWN};
use crate::metrics::Ensemble;
use crate::nn::{argmax, CnnStack};
use crate::rcnn::{assemble_input, RCNNModel};
use crate::rng::{derive_seed, rng_from_seed};

/// How a category is picked from the per-node softmax probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignMode {
    /// Inverse-CDF draw from the probabilities (default; keeps realizations
    /// stochastic so ensembles carry uncertainty).
    Draw,
    /// Deterministic most-probable pick; collapses ensemble variability.
    Argmax,
}

/// A permutation of all node indices of a domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomPath {
    order: Vec<usize>,
}

impl RandomPath {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Uniform random permutation of the `dims` node indices, deterministic in
/// the seed.
pub fn random_path(dims: [usize; 3], seed: u64) -> RandomPath {
    let mut order: Vec<usize> = (0..dims[0] * dims[1] * dims[2]).collect();
    order.shuffle(&mut rng_from_seed(seed));
    RandomPath { order }
}

/// Inverse-CDF draw: returns the category code (class index + 1).
pub fn draw_category<R: Rng>(probs: &[f64], rng: &mut R) -> u8 {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return (i + 1) as u8;
        }
    }
    probs.len() as u8
}

fn pick_category<R: Rng>(probs: &[f64], mode: AssignMode, rng: &mut R) -> u8 {
    match mode {
        AssignMode::Draw => draw_category(probs, rng),
        AssignMode::Argmax => (argmax(probs) + 1) as u8,
    }
}

/// Simulate one domain on top of the already complete domains `prior`
/// (D^0..D^{i-1}); `prior[0]` also provides the hard-data initialization.
fn simulate_one_domain<R: Rng>(
    stack: &CnnStack,
    prior: &[CategoricalGrid],
    path: &RandomPath,
    rng: &mut R,
    freeze_fraction: f64,
    mode: AssignMode,
) -> Result<CategoricalGrid> {
    let cfg = stack.config();
    let window = WindowSpec::new(cfg.sg, cfg.ip)?;
    let ip = cfg.ip;
    let half = [ip[0] as isize / 2, ip[1] as isize / 2, ip[2] as isize / 2];
    let mut domain = prior[0].clone();
    let dims = domain.dims();
    let k = domain.num_categories();

    let mut unknown = domain.unknown_count();
    while unknown > 0 {
        let before = unknown;
        for &node in path.order() {
            if domain.value_at(node) != UNKNOWN {
                continue;
            }
            let input = assemble_input(prior, node, &window, k)?;
            let field = stack.forward_infer(&input)?;
            let center_pos = field.center_pos();
            let [cx, cy, cz] = domain.node_coords(node);

            domain.set_at(node, pick_category(&field.probs_at(center_pos), mode, rng));
            unknown -= 1;

            for pos in 0..field.positions() {
                if pos == center_pos {
                    continue;
                }
                let px = (pos % ip[0]) as isize - half[0];
                let py = ((pos / ip[0]) % ip[1]) as isize - half[1];
                let pz = (pos / (ip[0] * ip[1])) as isize - half[2];
                let gx = cx as isize + px;
                let gy = cy as isize + py;
                let gz = cz as isize + pz;
                if gx < 0
                    || gy < 0
                    || gz < 0
                    || gx >= dims[0] as isize
                    || gy >= dims[1] as isize
                    || gz >= dims[2] as isize
                {
                    continue;
                }
                let target = domain.node_index(gx as usize, gy as usize, gz as usize);
                if domain.value_at(target) != UNKNOWN {
                    continue;
                }
                if rng.gen::<f64>() < freeze_fraction {
                    domain.set_at(target, pick_category(&field.probs_at(pos), mode, rng));
                    unknown -= 1;
                }
            }
        }
        debug_assert!(unknown < before, "a full pass must inform at least one node");
        if unknown >= before {
            return Err(Error::State("simulation pass made no progress".into()));
        }
    }
    Ok(domain)
}

/// Simulate D^1..D^N on top of the hard-data domain `d0`, sharing one path
/// and one RNG stream. Returns the full list `[D^0, D^1, .., D^N]`.
pub fn simulate_domains<R: Rng>(
    chain: &[CnnStack],
    d0: &CategoricalGrid,
    path: &RandomPath,
    rng: &mut R,
    freeze_fraction: f64,
    mode: AssignMode,
) -> Result<Vec<CategoricalGrid>> {
    if chain.is_empty() {
        return Err(Error::InvalidArg("empty network chain".into()));
    }
    if !(freeze_fraction > 0.0 && freeze_fraction <= 1.0) {
        return Err(Error::InvalidArg(format!(
            "freeze fraction {freeze_fraction} outside (0, 1]"
        )));
    }
    if path.len() != d0.len() {
        return Err(Error::Shape(format!(
            "path covers {} nodes, domain has {}",
            path.len(),
            d0.len()
        )));
    }
    let mut domains = vec![d0.clone()];
    for stack in chain {
        let next = simulate_one_domain(stack, &domains, path, rng, freeze_fraction, mode)?;
        domains.push(next);
    }
    Ok(domains)
}

/// One conditioned realization from a trained model: migrate the hard data,
/// simulate the chain, return the last domain.
pub fn simulate_realization(
    model: &RCNNModel,
    hard_data: &DrillHoleSet,
    dims: [usize; 3],
    seed: u64,
    mode: AssignMode,
) -> Result<CategoricalGrid> {
    if model.trained_epochs == 0 {
        return Err(Error::State("model has not been trained".into()));
    }
    let ip = model.config.window.ip();
    for a in 0..3 {
        if dims[a] < ip[a] {
            return Err(Error::InvalidArg(format!(
                "domain dims {dims:?} smaller than inner pattern {ip:?}"
            )));
        }
    }
    let k = model.config.k;
    let (d0, _) = migrate_hard_data(&CategoricalGrid::unknown(dims[0], dims[1], dims[2], k), hard_data)?;
    let path = random_path(dims, derive_seed(seed, "path", 0));
    let mut rng = rng_from_seed(derive_seed(seed, "draws", 0));
    let mut domains = simulate_domains(
        &model.chain,
        &d0,
        &path,
        &mut rng,
        model.config.freeze_fraction,
        mode,
    )?;
    Ok(domains.pop().expect("chain is non-empty"))
}

/// A batch of conditioned realizations from one model.
pub struct SimulationJob<'a> {
    pub model: &'a RCNNModel,
    pub hard_data: &'a DrillHoleSet,
    pub dims: [usize; 3],
    pub realizations: usize,
    /// Realization `r` runs with seed `base_seed + r`.
    pub base_seed: u64,
    pub mode: AssignMode,
}

/// Run every realization of the job; realizations are independent and execute
/// on the rayon pool, collected in realization order.
pub fn run_ensemble(job: &SimulationJob) -> Result<Ensemble> {
    if job.realizations == 0 {
        return Err(Error::InvalidArg("ensemble of zero realizations".into()));
    }
    let grids: Vec<CategoricalGrid> = (0..job.realizations)
        .into_par_iter()
        .map(|r| {
            simulate_realization(
                job.model,
                job.hard_data,
                job.dims,
                job.base_seed + r as u64,
                job.mode,
            )
        })
        .collect::<Result<_>>()?;
    Ensemble::new(grids)
}
