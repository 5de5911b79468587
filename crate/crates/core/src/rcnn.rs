//! The recursive chain of networks: input assembly from multiple domains,
//! the summed inner-pattern cross-entropy loss, training databases, and the
//! epoch loop.
//!
//! Domains are numbered D^0..D^N. D^0 carries only hard data; network `i`
//! (1-based) reads search-grid windows of D^0..D^{i-1} and predicts the inner
//! pattern of true categories around the center, so its input has
//! `i * (K + 1)` one-hot channels. Each epoch re-simulates D^1..D^N with the
//! current weights, rebuilds the databases along a fresh path, and trains the
//! chain members in order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    extract_window, migrate_hard_data, one_hot_encode, sample_random_nodes, CategoricalGrid,
    WindowSpec, UNKNOWN,
};
use crate::nn::{
    cross_entropy, softmax_ce_grad, Activation, AdamParams, CnnStack, ScoreField, StackAdam,
    StackConfig,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::simulate::{random_path, simulate_domains, AssignMode};
use crate::tensor::TensorBlock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RCNNConfig {
    /// Number of chained networks (N).
    pub n_cnns: usize,
    pub window: WindowSpec,
    pub k: usize,
    pub conv_maps: Vec<usize>,
    pub pool_after: Vec<bool>,
    pub fc_hidden: Vec<usize>,
    pub filter: [usize; 3],
    pub activation: Activation,
    pub bn_momentum: f64,
    pub strict_final: bool,
    /// Hard-data fraction planted into the domains during training.
    pub per_dc: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub freeze_fraction: f64,
    /// Training pairs drawn per epoch: a leading slice of the fresh epoch
    /// path. `None` uses every path node.
    pub pairs_per_epoch: Option<usize>,
    /// Re-simulate D^1..D^N with current weights at every epoch (default);
    /// `false` simulates once at the first trained epoch and reuses.
    pub resimulate_each_epoch: bool,
    pub adam: AdamParams,
    pub early_stop: bool,
    pub seed: u64,
}

impl Default for RCNNConfig {
    fn default() -> Self {
        RCNNConfig {
            n_cnns: 4,
            window: WindowSpec::new([15, 15, 15], [5, 5, 5]).expect("odd dims"),
            k: 2,
            conv_maps: vec![16, 16, 32, 32],
            pool_after: vec![false, true, false, true],
            fc_hidden: vec![512, 256],
            filter: [3, 3, 3],
            activation: Activation::ReLU,
            bn_momentum: 0.99,
            strict_final: false,
            per_dc: 0.10,
            epochs: 40,
            batch_size: 32,
            freeze_fraction: 0.5,
            pairs_per_epoch: None,
            resimulate_each_epoch: true,
            adam: AdamParams::default(),
            early_stop: true,
            seed: 0,
        }
    }
}

impl RCNNConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cnns == 0 {
            return Err(Error::InvalidArg("chain needs at least one network".into()));
        }
        if !(self.per_dc > 0.0 && self.per_dc < 1.0) {
            return Err(Error::InvalidArg(format!(
                "per_dc {} outside (0, 1)",
                self.per_dc
            )));
        }
        if !(self.freeze_fraction > 0.0 && self.freeze_fraction <= 1.0) {
            return Err(Error::InvalidArg(format!(
                "freeze_fraction {} outside (0, 1]",
                self.freeze_fraction
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArg(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if self.pairs_per_epoch == Some(0) {
            return Err(Error::InvalidArg("pairs_per_epoch must be positive".into()));
        }
        // deserialized configs bypass the WindowSpec constructor
        WindowSpec::new(self.window.sg(), self.window.ip())?;
        // the stack config re-checks layer shapes
        self.stack_config(1).validate_shapes()?;
        Ok(())
    }

    /// Architecture of chain member `i` (1-based): identical layers, input
    /// width `i * (K + 1)`.
    pub fn stack_config(&self, i: usize) -> StackConfig {
        StackConfig {
            in_channels: i * (self.k + 1),
            sg: self.window.sg(),
            ip: self.window.ip(),
            k: self.k,
            conv_maps: self.conv_maps.clone(),
            pool_after: self.pool_after.clone(),
            fc_hidden: self.fc_hidden.clone(),
            filter: self.filter,
            activation: self.activation,
            bn_momentum: self.bn_momentum,
            strict_final: self.strict_final,
        }
    }
}

impl StackConfig {
    fn validate_shapes(&self) -> Result<()> {
        // constructing a stack runs every shape check
        CnnStack::new(self.clone()).map(|_| ())
    }
}

/// One input-output training example.
pub struct TrainingPair {
    /// `i * (K + 1)` one-hot channels over the search grid.
    pub input: TensorBlock,
    /// True categories over the inner pattern; contains the unknown code only
    /// where the window leaves the training image (masked in the loss).
    pub target: Vec<u8>,
    pub center: usize,
}

/// Mean loss per chain member for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub per_cnn: Vec<f64>,
}

impl EpochLoss {
    pub fn total(&self) -> f64 {
        self.per_cnn.iter().sum()
    }
}

/// The trained chain with its optimizer state and loss history.
pub struct RCNNModel {
    pub chain: Vec<CnnStack>,
    pub optimizers: Vec<StackAdam>,
    pub config: RCNNConfig,
    pub loss_log: Vec<EpochLoss>,
    pub trained_epochs: usize,
}

impl std::fmt::Debug for RCNNModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "RCNNModel({} networks, {} trained epochs)",
            self.chain.len(),
            self.trained_epochs
        )
    }
}

impl RCNNModel {
    /// Fresh chain with seeded truncated-normal parameters.
    pub fn new(config: RCNNConfig) -> Result<Self> {
        config.validate()?;
        let mut chain = Vec::with_capacity(config.n_cnns);
        for i in 1..=config.n_cnns {
            let mut stack = CnnStack::new(config.stack_config(i))?;
            let mut rng = rng_from_seed(derive_seed(config.seed, "init-cnn", i as u64));
            stack.init_parameters(&mut rng);
            chain.push(stack);
        }
        let optimizers = chain.iter().map(StackAdam::new).collect();
        Ok(RCNNModel {
            chain,
            optimizers,
            config,
            loss_log: Vec::new(),
            trained_epochs: 0,
        })
    }
}

/// Cut the search-grid window of every domain at `center`, one-hot encode,
/// and stack along channels in domain order (D^0 first).
pub fn assemble_input(
    domains: &[CategoricalGrid],
    center: usize,
    window: &WindowSpec,
    k: usize,
) -> Result<TensorBlock> {
    let first = domains
        .first()
        .ok_or_else(|| Error::InvalidArg("no domains to assemble".into()))?;
    let dims = first.dims();
    let coords = first.node_coords(center);
    let mut parts = Vec::with_capacity(domains.len());
    for d in domains {
        if d.dims() != dims {
            return Err(Error::Shape(format!(
                "domain dims {:?} differ from {:?}",
                d.dims(),
                dims
            )));
        }
        let w = extract_window(d, coords, window.sg())?;
        parts.push(one_hot_encode(&w, k)?);
    }
    TensorBlock::concat_channels(&parts)
}

/// Summed cross-entropy over every inner-pattern position; positions whose
/// target carries the unknown code (window padding outside the training
/// image) are excluded.
pub fn rcnn_loss(field: &ScoreField, target: &[u8]) -> Result<f64> {
    Ok(rcnn_loss_grad(field, target)?.0)
}

/// Loss plus its gradient w.r.t. the flat logit vector of the score field.
pub fn rcnn_loss_grad(field: &ScoreField, target: &[u8]) -> Result<(f64, Vec<f64>)> {
    if target.len() != field.positions() {
        return Err(Error::Shape(format!(
            "target length {} != inner pattern size {}",
            target.len(),
            field.positions()
        )));
    }
    let k = field.k();
    let mut loss = 0.0;
    let mut grad = vec![0.0; field.logits().len()];
    for (pos, &code) in target.iter().enumerate() {
        if code == UNKNOWN {
            continue;
        }
        if code as usize > k {
            return Err(Error::InvalidArg(format!(
                "target code {code} exceeds {k} categories"
            )));
        }
        let class = code as usize - 1;
        let p = field.probs_at(pos);
        loss += cross_entropy(&p, class);
        grad[pos * k..(pos + 1) * k].copy_from_slice(&softmax_ce_grad(&p, class));
    }
    Ok((loss, grad))
}

/// Lazy view of one training database DB^i: pairs are assembled on demand so
/// large databases never materialize.
pub struct Database<'a> {
    ti: &'a CategoricalGrid,
    domains: &'a [CategoricalGrid],
    centers: &'a [usize],
    /// Chain index i; inputs read `domains[0..i]`.
    index: usize,
    window: WindowSpec,
}

impl Database<'_> {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn chain_index(&self) -> usize {
        self.index
    }

    pub fn pair(&self, j: usize) -> Result<TrainingPair> {
        let center = self.centers[j];
        let input = assemble_input(
            &self.domains[..self.index],
            center,
            &self.window,
            self.ti.num_categories(),
        )?;
        let target = extract_window(self.ti, self.ti.node_coords(center), self.window.ip())?
            .values()
            .to_vec();
        Ok(TrainingPair {
            input,
            target,
            center,
        })
    }
}

/// One database per chain member, all sharing the path order `centers`.
pub fn build_databases<'a>(
    ti: &'a CategoricalGrid,
    domains: &'a [CategoricalGrid],
    centers: &'a [usize],
    window: WindowSpec,
) -> Result<Vec<Database<'a>>> {
    if domains.len() < 2 {
        return Err(Error::InvalidArg(
            "need the hard-data domain plus at least one simulated domain".into(),
        ));
    }
    for d in domains {
        if d.dims() != ti.dims() {
            return Err(Error::Shape(format!(
                "domain dims {:?} differ from training image {:?}",
                d.dims(),
                ti.dims()
            )));
        }
    }
    if !ti.is_fully_informed() {
        return Err(Error::State("training image has unknown nodes".into()));
    }
    Ok((1..domains.len())
        .map(|i| Database {
            ti,
            domains,
            centers,
            index: i,
            window,
        })
        .collect())
}

/// Train a fresh chain on the training image.
pub fn train(ti: &CategoricalGrid, config: RCNNConfig) -> Result<RCNNModel> {
    let mut model = RCNNModel::new(config)?;
    train_model(&mut model, ti)?;
    Ok(model)
}

/// Continue training an existing (possibly checkpointed) model up to its
/// configured epoch count. Epoch seeds derive from (config seed, epoch), so a
/// resumed run retraces the interrupted trajectory exactly.
pub fn train_model(model: &mut RCNNModel, ti: &CategoricalGrid) -> Result<()> {
    train_model_with(model, ti, |_| Ok(()))
}

/// [`train_model`] with an observer invoked after every completed epoch
/// (snapshot checkpoints, progress reporting). An observer error aborts
/// training; the model keeps the epochs finished so far.
pub fn train_model_with(
    model: &mut RCNNModel,
    ti: &CategoricalGrid,
    mut after_epoch: impl FnMut(&RCNNModel) -> Result<()>,
) -> Result<()> {
    let cfg = model.config.clone();
    if !ti.is_fully_informed() {
        return Err(Error::State("training image has unknown nodes".into()));
    }
    if ti.num_categories() != cfg.k {
        return Err(Error::InvalidArg(format!(
            "training image has {} categories, config expects {}",
            ti.num_categories(),
            cfg.k
        )));
    }
    let dims = ti.dims();
    let sg = cfg.window.sg();
    for a in 0..3 {
        if dims[a] < sg[a] {
            return Err(Error::InvalidArg(format!(
                "training image {dims:?} smaller than search grid {sg:?}"
            )));
        }
    }

    // the hard-data sample is drawn once per run and replanted every epoch
    let anchors = sample_random_nodes(ti, cfg.per_dc, derive_seed(cfg.seed, "train-anchors", 0))?;
    let (d0, _) = migrate_hard_data(
        &CategoricalGrid::unknown(dims[0], dims[1], dims[2], cfg.k),
        &anchors,
    )?;

    let mut fixed_domains: Option<Vec<CategoricalGrid>> = None;
    for epoch in (model.trained_epochs + 1)..=cfg.epochs {
        let path = random_path(dims, derive_seed(cfg.seed, "train-path", epoch as u64));
        let domains = if cfg.resimulate_each_epoch || fixed_domains.is_none() {
            let mut sim_rng = rng_from_seed(derive_seed(cfg.seed, "train-sim", epoch as u64));
            let d = simulate_domains(
                &model.chain,
                &d0,
                &path,
                &mut sim_rng,
                cfg.freeze_fraction,
                AssignMode::Draw,
            )?;
            if !cfg.resimulate_each_epoch {
                fixed_domains = Some(d.clone());
            }
            d
        } else {
            fixed_domains.clone().expect("cached domains")
        };

        let centers = match cfg.pairs_per_epoch {
            Some(p) => &path.order()[..p.min(path.len())],
            None => path.order(),
        };
        let databases = build_databases(ti, &domains, centers, cfg.window)?;

        let mut per_cnn = Vec::with_capacity(cfg.n_cnns);
        for db in &databases {
            let ci = db.chain_index() - 1;
            let mut total = 0.0;
            for start in (0..db.len()).step_by(cfg.batch_size) {
                let end = (start + cfg.batch_size).min(db.len());
                let mut inputs = Vec::with_capacity(end - start);
                let mut targets = Vec::with_capacity(end - start);
                for j in start..end {
                    let pair = db.pair(j)?;
                    inputs.push(pair.input);
                    targets.push(pair.target);
                }
                let (fields, trace) = model.chain[ci].forward_train(&inputs)?;
                let scale = 1.0 / inputs.len() as f64;
                let mut grads = Vec::with_capacity(inputs.len());
                for (field, target) in fields.iter().zip(&targets) {
                    let (loss, mut g) = rcnn_loss_grad(field, target)?;
                    total += loss;
                    for v in &mut g {
                        *v *= scale;
                    }
                    grads.push(g);
                }
                let stack_grads = model.chain[ci].backward(&trace, &grads)?;
                model.optimizers[ci].step(&mut model.chain[ci], &stack_grads, &cfg.adam)?;
            }
            per_cnn.push(total / db.len() as f64);
        }

        // re-estimate the batch-norm running moments under the epoch's final
        // weights; the exponential averages lag while the weights move, which
        // biases every inference-mode forward (epoch re-simulation included)
        for db in &databases {
            if db.is_empty() {
                continue;
            }
            let ci = db.chain_index() - 1;
            let mut recal = model.chain[ci].stats_recalibration();
            for start in (0..db.len()).step_by(cfg.batch_size) {
                let end = (start + cfg.batch_size).min(db.len());
                let mut inputs = Vec::with_capacity(end - start);
                for j in start..end {
                    inputs.push(db.pair(j)?.input);
                }
                recal.observe(&mut model.chain[ci], &inputs)?;
            }
            recal.commit(&mut model.chain[ci])?;
        }

        model.loss_log.push(EpochLoss { epoch, per_cnn });
        model.trained_epochs = epoch;
        log::info!(
            "epoch {epoch}: losses {:?}",
            model.loss_log.last().map(|l| &l.per_cnn)
        );
        after_epoch(model)?;

        warn_if_stalled(&model.loss_log);
        if cfg.early_stop && ema_converged(&model.loss_log) {
            log::info!("early stop at epoch {epoch}: loss plateau");
            break;
        }
    }
    Ok(())
}

/// Warn (never fail) when the total loss has not decreased for 10
/// consecutive epochs.
fn warn_if_stalled(log: &[EpochLoss]) {
    if log.len() < 11 {
        return;
    }
    let tail = &log[log.len() - 11..];
    if tail.windows(2).all(|w| w[1].total() >= w[0].total()) {
        log::warn!(
            "training loss has not decreased for 10 epochs (at epoch {})",
            log.last().map(|l| l.epoch).unwrap_or(0)
        );
    }
}

/// Exponential moving average (factor 0.9) of the total chain loss improved
/// by less than 0.1% over the last 5 epochs.
fn ema_converged(log: &[EpochLoss]) -> bool {
    if log.len() < 6 {
        return false;
    }
    let mut ema = Vec::with_capacity(log.len());
    for (i, l) in log.iter().enumerate() {
        let t = l.total();
        ema.push(if i == 0 { t } else { 0.9 * ema[i - 1] + 0.1 * t });
    }
    let old = ema[ema.len() - 6];
    let new = ema[ema.len() - 1];
    (old - new) / old.abs().max(1e-12) < 1e-3
}

/// Per-pair fraction of inner-pattern positions whose most probable class
/// matches the target, averaged over a database; a training-set diagnostic.
pub fn database_accuracy(model: &RCNNModel, db: &Database) -> Result<f64> {
    let stack = &model.chain[db.chain_index() - 1];
    let mut hits = 0usize;
    let mut seen = 0usize;
    for j in 0..db.len() {
        let pair = db.pair(j)?;
        let field = stack.forward_infer(&pair.input)?;
        for (pos, &code) in pair.target.iter().enumerate() {
            if code == UNKNOWN {
                continue;
            }
            seen += 1;
            if crate::nn::argmax(&field.probs_at(pos)) == code as usize - 1 {
                hits += 1;
            }
        }
    }
    if seen == 0 {
        return Err(Error::State("no scored positions".into()));
    }
    Ok(hits as f64 / seen as f64)
}

/// Random two-category layered grid for smoke tests and examples: horizontal
/// bands of alternating category with small random thickness.
pub fn layered_test_image<R: Rng>(dims: [usize; 3], rng: &mut R) -> CategoricalGrid {
    let mut g = CategoricalGrid::unknown(dims[0], dims[1], dims[2], 2);
    let mut z = 0usize;
    let mut cat = 1u8;
    while z < dims[2] {
        let thickness = rng.gen_range(2..=4).min(dims[2] - z);
        for dz in 0..thickness {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    g.set(x, y, z + dz, cat);
                }
            }
        }
        z += thickness;
        cat = if cat == 1 { 2 } else { 1 };
    }
    g
}
