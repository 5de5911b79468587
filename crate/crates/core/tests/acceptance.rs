//! Acceptance suite.
//!
//! One test per numbered criterion, each printing a single PASS/FAIL line.
//! Criteria 1-3 check the numerical kernel against finite differences and a
//! direct convolution oracle, 4-5 check the simulation contracts, and 7-10
//! run one shared desk-scale experiment (32-cube crops, 20 realizations per
//! sector) validating the learned statistics. Criterion 6, full-pipeline bit
//! determinism, lives in the command-line crate's acceptance tests.

use std::panic::AssertUnwindSafe;
use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use rcnn_core::grid::{
    migrate_hard_data, sample_drillholes, CategoricalGrid, DrillHoleSample, DrillHoleSet,
    WindowSpec, UNKNOWN,
};
use rcnn_core::metrics::{
    etype, indicator_variance, indicator_variogram, proportions, sill_estimate, variance_map,
    Direction, Ensemble,
};
use rcnn_core::nn::{
    cross_entropy, maxpool_backward, maxpool_forward, softmax, Activation, BatchNorm, CnnStack,
    ConvLayer, FcLayer, ScoreField,
};
use rcnn_core::rcnn::{self, assemble_input, rcnn_loss, rcnn_loss_grad, RCNNConfig, RCNNModel};
use rcnn_core::rng::{derive_seed, rng_from_seed};
use rcnn_core::simulate::{
    random_path, simulate_realization, AssignMode, SimulationJob,
};
use rcnn_core::tensor::TensorBlock;

fn report(n: usize, desc: &str, f: impl FnOnce()) {
    match std::panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(()) => println!("acceptance criterion {n:02} ({desc}): PASS"),
        Err(e) => {
            println!("acceptance criterion {n:02} ({desc}): FAIL");
            std::panic::resume_unwind(e);
        }
    }
}

fn rel_close(analytic: f64, fd: f64, tol: f64) -> bool {
    let scale = analytic.abs().max(fd.abs());
    scale < 1e-7 || (analytic - fd).abs() / scale < tol
}

fn rand_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

// ---------------------------------------------------------------- criterion 1

const FD_H: f64 = 1e-5;
const LAYER_TOL: f64 = 1e-4;
const E2E_TOL: f64 = 1e-3;

fn weighted_sum(out: &TensorBlock, coeffs: &[f64]) -> f64 {
    out.data().iter().zip(coeffs).map(|(a, b)| a * b).sum()
}

fn check_conv_instance<R: Rng>(rng: &mut R) {
    let cin = rng.gen_range(1..=3);
    let cout = rng.gen_range(1..=3);
    let fdims = [2, 2, 2];
    let dims = [
        rng.gen_range(2..=4),
        rng.gen_range(2..=4),
        rng.gen_range(2..=4),
    ];
    let mut layer = ConvLayer::new(cin, cout, fdims).unwrap();
    let wlen = layer.weights.len();
    layer.weights = rand_vec(rng, wlen, -1.0, 1.0);
    layer.bias = rand_vec(rng, cout, -0.5, 0.5);
    let n = dims[0] * dims[1] * dims[2];
    let input = TensorBlock::from_data(cin, dims, rand_vec(rng, cin * n, -1.0, 1.0)).unwrap();
    let coeffs = rand_vec(rng, cout * n, -1.0, 1.0);

    let grad_out = TensorBlock::from_data(cout, dims, coeffs.clone()).unwrap();
    let (grad_in, grads) = layer.backward(&input, &grad_out).unwrap();

    for _ in 0..6 {
        let wi = rng.gen_range(0..wlen);
        let mut minus = layer.clone();
        let mut plus = layer.clone();
        minus.weights[wi] -= FD_H;
        plus.weights[wi] += FD_H;
        let fd = (weighted_sum(&plus.forward(&input).unwrap(), &coeffs)
            - weighted_sum(&minus.forward(&input).unwrap(), &coeffs))
            / (2.0 * FD_H);
        assert!(
            rel_close(grads.weights[wi], fd, LAYER_TOL),
            "conv weight grad {} vs fd {fd}",
            grads.weights[wi]
        );
    }
    for bi in 0..cout {
        let mut minus = layer.clone();
        let mut plus = layer.clone();
        minus.bias[bi] -= FD_H;
        plus.bias[bi] += FD_H;
        let fd = (weighted_sum(&plus.forward(&input).unwrap(), &coeffs)
            - weighted_sum(&minus.forward(&input).unwrap(), &coeffs))
            / (2.0 * FD_H);
        assert!(rel_close(grads.bias[bi], fd, LAYER_TOL));
    }
    for _ in 0..6 {
        let xi = rng.gen_range(0..input.len());
        let mut minus = input.clone();
        let mut plus = input.clone();
        minus.data_mut()[xi] -= FD_H;
        plus.data_mut()[xi] += FD_H;
        let fd = (weighted_sum(&layer.forward(&plus).unwrap(), &coeffs)
            - weighted_sum(&layer.forward(&minus).unwrap(), &coeffs))
            / (2.0 * FD_H);
        assert!(rel_close(grad_in.data()[xi], fd, LAYER_TOL));
    }
}

fn check_bn_instance<R: Rng>(rng: &mut R) {
    let ch = rng.gen_range(1..=3);
    let dims = [2, rng.gen_range(1..=3), 2];
    let n = dims[0] * dims[1] * dims[2];
    let m = 3;
    let mut bn = BatchNorm::new(ch, 0.9);
    bn.gamma = rand_vec(rng, ch, 0.5, 1.5);
    bn.beta = rand_vec(rng, ch, -0.5, 0.5);
    let inputs: Vec<TensorBlock> = (0..m)
        .map(|_| TensorBlock::from_data(ch, dims, rand_vec(rng, ch * n, -1.0, 1.0)).unwrap())
        .collect();
    let coeffs: Vec<Vec<f64>> = (0..m).map(|_| rand_vec(rng, ch * n, -1.0, 1.0)).collect();

    let loss = |bn: &mut BatchNorm, inputs: &[TensorBlock]| -> f64 {
        let (outs, _) = bn.forward_train(inputs).unwrap();
        outs.iter()
            .zip(&coeffs)
            .map(|(o, c)| weighted_sum(o, c))
            .sum()
    };

    let (outs, trace) = bn.forward_train(&inputs).unwrap();
    let grad_out: Vec<TensorBlock> = coeffs
        .iter()
        .map(|c| TensorBlock::from_data(ch, dims, c.clone()).unwrap())
        .collect();
    let _ = outs;
    let (grad_ins, grads) = bn.backward(&trace, &grad_out).unwrap();

    for c in 0..ch {
        let keep = bn.gamma[c];
        bn.gamma[c] = keep + FD_H;
        let up = loss(&mut bn, &inputs);
        bn.gamma[c] = keep - FD_H;
        let down = loss(&mut bn, &inputs);
        bn.gamma[c] = keep;
        assert!(rel_close(grads.gamma[c], (up - down) / (2.0 * FD_H), LAYER_TOL));

        let keep = bn.beta[c];
        bn.beta[c] = keep + FD_H;
        let up = loss(&mut bn, &inputs);
        bn.beta[c] = keep - FD_H;
        let down = loss(&mut bn, &inputs);
        bn.beta[c] = keep;
        assert!(rel_close(grads.beta[c], (up - down) / (2.0 * FD_H), LAYER_TOL));
    }
    for _ in 0..6 {
        let b = rng.gen_range(0..m);
        let xi = rng.gen_range(0..ch * n);
        let mut pert = inputs.clone();
        pert[b].data_mut()[xi] += FD_H;
        let up = loss(&mut bn, &pert);
        pert[b].data_mut()[xi] -= 2.0 * FD_H;
        let down = loss(&mut bn, &pert);
        assert!(rel_close(
            grad_ins[b].data()[xi],
            (up - down) / (2.0 * FD_H),
            LAYER_TOL
        ));
    }
}

fn check_fc_instance<R: Rng>(rng: &mut R) {
    let (din, dout) = (rng.gen_range(2..=6), rng.gen_range(1..=4));
    let mut layer = FcLayer::new(din, dout);
    layer.weights = rand_vec(rng, din * dout, -1.0, 1.0);
    layer.bias = rand_vec(rng, dout, -0.5, 0.5);
    let input = TensorBlock::from_vec(rand_vec(rng, din, -1.0, 1.0));
    let coeffs = rand_vec(rng, dout, -1.0, 1.0);
    let grad_out = TensorBlock::from_vec(coeffs.clone());
    let (grad_in, grads) = layer.backward(&input, &grad_out).unwrap();

    for wi in 0..din * dout {
        let mut plus = layer.clone();
        let mut minus = layer.clone();
        plus.weights[wi] += FD_H;
        minus.weights[wi] -= FD_H;
        let fd = (weighted_sum(&plus.forward(&input).unwrap(), &coeffs)
            - weighted_sum(&minus.forward(&input).unwrap(), &coeffs))
            / (2.0 * FD_H);
        assert!(rel_close(grads.weights[wi], fd, LAYER_TOL));
    }
    for xi in 0..din {
        let mut plus = input.clone();
        let mut minus = input.clone();
        plus.data_mut()[xi] += FD_H;
        minus.data_mut()[xi] -= FD_H;
        let fd = (weighted_sum(&layer.forward(&plus).unwrap(), &coeffs)
            - weighted_sum(&layer.forward(&minus).unwrap(), &coeffs))
            / (2.0 * FD_H);
        assert!(rel_close(grad_in.data()[xi], fd, LAYER_TOL));
    }
    let _ = grads.bias;
}

fn check_pool_instance<R: Rng>(rng: &mut R) {
    let ch = rng.gen_range(1..=2);
    let dims = [
        rng.gen_range(2..=4),
        rng.gen_range(2..=4),
        rng.gen_range(2..=3),
    ];
    let n = ch * dims[0] * dims[1] * dims[2];
    // well-separated values keep finite differences away from max ties
    let mut values: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    values.shuffle(rng);
    let input = TensorBlock::from_data(ch, dims, values).unwrap();
    let (out, trace) = maxpool_forward(&input);
    let coeffs = rand_vec(rng, out.len(), -1.0, 1.0);
    let grad_out = TensorBlock::from_data(out.channels(), out.dims(), coeffs.clone()).unwrap();
    let grad_in = maxpool_backward(&trace, &grad_out).unwrap();

    for _ in 0..8 {
        let xi = rng.gen_range(0..input.len());
        let mut plus = input.clone();
        let mut minus = input.clone();
        plus.data_mut()[xi] += FD_H;
        minus.data_mut()[xi] -= FD_H;
        let fd = (weighted_sum(&maxpool_forward(&plus).0, &coeffs)
            - weighted_sum(&maxpool_forward(&minus).0, &coeffs))
            / (2.0 * FD_H);
        assert!(rel_close(grad_in.data()[xi], fd, LAYER_TOL));
    }
}

fn check_activation_instance<R: Rng>(rng: &mut R, act: Activation) {
    for _ in 0..20 {
        // stay off the ReLU kink by a wide margin relative to the step
        let x = {
            let v: f64 = rng.gen_range(0.01..2.0);
            if rng.gen::<bool>() {
                v
            } else {
                -v
            }
        };
        let fd = (act.apply(x + FD_H) - act.apply(x - FD_H)) / (2.0 * FD_H);
        assert!(rel_close(act.derivative(x), fd, LAYER_TOL));
    }
}

/// Random domain grid with a sprinkle of unknown nodes.
fn random_domain<R: Rng>(rng: &mut R, dims: [usize; 3], k: usize) -> CategoricalGrid {
    let mut g = CategoricalGrid::unknown(dims[0], dims[1], dims[2], k);
    for i in 0..g.len() {
        g.set_at(i, rng.gen_range(0..=k) as u8);
    }
    g
}

fn stack_batch_loss(
    stack: &mut CnnStack,
    inputs: &[TensorBlock],
    targets: &[Vec<u8>],
) -> f64 {
    let (fields, _) = stack.forward_train(inputs).unwrap();
    fields
        .iter()
        .zip(targets)
        .map(|(f, t)| rcnn_loss(f, t).unwrap())
        .sum::<f64>()
        / inputs.len() as f64
}

fn check_end_to_end_instance<R: Rng>(rng: &mut R, model: &mut RCNNModel, chain_index: usize) {
    let k = model.config.k;
    let window = model.config.window;
    let ip_len = window.ip_len();
    let dims = [9, 8, 9];
    let m = 2;

    let domains: Vec<CategoricalGrid> = (0..chain_index)
        .map(|_| random_domain(rng, dims, k))
        .collect();
    let n = dims[0] * dims[1] * dims[2];
    let centers: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n)).collect();
    let inputs: Vec<TensorBlock> = centers
        .iter()
        .map(|&c| assemble_input(&domains, c, &window, k).unwrap())
        .collect();
    let targets: Vec<Vec<u8>> = (0..m)
        .map(|_| (0..ip_len).map(|_| rng.gen_range(0..=k) as u8).collect())
        .collect();

    let stack = &mut model.chain[chain_index - 1];
    let (fields, trace) = stack.forward_train(&inputs).unwrap();
    let grads_per_window: Vec<Vec<f64>> = fields
        .iter()
        .zip(&targets)
        .map(|(f, t)| {
            let (_, mut g) = rcnn_loss_grad(f, t).unwrap();
            for v in &mut g {
                *v /= m as f64;
            }
            g
        })
        .collect();
    let grads = stack.backward(&trace, &grads_per_window).unwrap();
    let buffers: Vec<(String, Vec<f64>)> = grads
        .buffers()
        .into_iter()
        .map(|(name, b)| (name, b.to_vec()))
        .collect();

    for (b, (name, grad)) in buffers.iter().enumerate() {
        for _ in 0..4.min(grad.len()) {
            let c = rng.gen_range(0..grad.len());
            let poke = |stack: &mut CnnStack, delta: f64| {
                stack.param_buffers_mut()[b].1[c] += delta;
            };
            poke(stack, FD_H);
            let up = stack_batch_loss(stack, &inputs, &targets);
            poke(stack, -2.0 * FD_H);
            let down = stack_batch_loss(stack, &inputs, &targets);
            poke(stack, FD_H);
            let fd = (up - down) / (2.0 * FD_H);
            assert!(
                rel_close(grad[c], fd, E2E_TOL),
                "chain {chain_index} {name}[{c}]: analytic {} vs fd {fd}",
                grad[c]
            );
        }
    }
}

#[test]
fn criterion_01_gradient_fidelity() {
    report(1, "gradients match central finite differences", || {
        let start = Instant::now();
        let mut rng = rng_from_seed(101);
        for _ in 0..6 {
            check_conv_instance(&mut rng);
        }
        for _ in 0..4 {
            check_bn_instance(&mut rng);
        }
        for _ in 0..4 {
            check_fc_instance(&mut rng);
        }
        for _ in 0..4 {
            check_pool_instance(&mut rng);
        }
        for act in [Activation::ReLU, Activation::Sigmoid, Activation::Tanh] {
            check_activation_instance(&mut rng, act);
        }

        let config = RCNNConfig {
            n_cnns: 2,
            window: WindowSpec::new([7, 7, 7], [3, 3, 3]).unwrap(),
            k: 2,
            conv_maps: vec![2, 2],
            pool_after: vec![false, true],
            fc_hidden: vec![8],
            filter: [2, 2, 2],
            seed: 102,
            ..RCNNConfig::default()
        };
        let mut model = RCNNModel::new(config).unwrap();
        for i in 0..8 {
            check_end_to_end_instance(&mut rng, &mut model, 1 + i % 2);
        }
        assert!(
            start.elapsed().as_secs() < 120,
            "gradient checks exceeded two minutes"
        );
    });
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_02_probability_contracts() {
    report(2, "softmax and cross-entropy contracts", || {
        let mut rng = rng_from_seed(201);
        for _ in 0..200 {
            let n = rng.gen_range(2..=6);
            let logits = rand_vec(&mut rng, n, -30.0, 30.0);
            let p = softmax(&logits);
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let shift: f64 = rng.gen_range(-100.0..100.0);
            let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
            for (a, b) in p.iter().zip(softmax(&shifted)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        // perfect prediction costs nothing
        assert_eq!(cross_entropy(&[1.0, 0.0, 0.0], 0), 0.0);
        assert_eq!(cross_entropy(&[0.0, 0.0, 1.0], 2), 0.0);
        // uniform prediction over a 5-cube inner pattern, two categories
        let field = ScoreField::new([5, 5, 5], 2, vec![0.0; 250]).unwrap();
        let target = vec![1u8; 125];
        let loss = rcnn_loss(&field, &target).unwrap();
        assert!((loss - 125.0 * std::f64::consts::LN_2).abs() <= 1e-9);
    });
}

// ---------------------------------------------------------------- criterion 3

/// Plain nested-loop convolution with zero padding; the reference the fast
/// row-sliced kernel must match. Taps sit at `offset - f/2` per axis.
fn conv_oracle(
    input: &TensorBlock,
    cout: usize,
    fdims: [usize; 3],
    weights: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let cin = input.channels();
    let [nx, ny, nz] = input.dims();
    let (lx, ly, lz) = (fdims[0] / 2, fdims[1] / 2, fdims[2] / 2);
    let mut out = vec![0.0; cout * nx * ny * nz];
    for o in 0..cout {
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let mut acc = bias[o];
                    for i in 0..cin {
                        for fz in 0..fdims[2] {
                            for fy in 0..fdims[1] {
                                for fx in 0..fdims[0] {
                                    let sx = x as isize + fx as isize - lx as isize;
                                    let sy = y as isize + fy as isize - ly as isize;
                                    let sz = z as isize + fz as isize - lz as isize;
                                    if sx < 0
                                        || sy < 0
                                        || sz < 0
                                        || sx >= nx as isize
                                        || sy >= ny as isize
                                        || sz >= nz as isize
                                    {
                                        continue;
                                    }
                                    let w = weights[(((o * cin + i) * fdims[2] + fz) * fdims[1]
                                        + fy)
                                        * fdims[0]
                                        + fx];
                                    acc += w
                                        * input.at(
                                            i,
                                            sx as usize,
                                            sy as usize,
                                            sz as usize,
                                        );
                                }
                            }
                        }
                    }
                    out[((o * nz + z) * ny + y) * nx + x] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn criterion_03_convolution_oracle() {
    report(3, "convolution matches the nested-loop oracle", || {
        let mut rng = rng_from_seed(301);
        for _ in 0..50 {
            let cin = rng.gen_range(1..=3);
            let cout = rng.gen_range(1..=3);
            let fdims = [
                rng.gen_range(1..=3),
                rng.gen_range(1..=3),
                rng.gen_range(1..=3),
            ];
            let dims = [
                rng.gen_range(1..=5),
                rng.gen_range(1..=5),
                rng.gen_range(1..=5),
            ];
            let mut layer = ConvLayer::new(cin, cout, fdims).unwrap();
            let wlen = layer.weights.len();
            layer.weights = rand_vec(&mut rng, wlen, -1.0, 1.0);
            layer.bias = rand_vec(&mut rng, cout, -0.5, 0.5);
            let n = dims[0] * dims[1] * dims[2];
            let input =
                TensorBlock::from_data(cin, dims, rand_vec(&mut rng, cin * n, -1.0, 1.0)).unwrap();

            let fast = layer.forward(&input).unwrap();
            let slow = conv_oracle(&input, cout, fdims, &layer.weights, &layer.bias);
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    });
}

// ------------------------------------------------------- desk experiment (7-10)

const DESK_CROP: [usize; 3] = [32, 32, 32];
const DESK_REALIZATIONS: usize = 20;
const DESK_CONDITIONING: f64 = 0.05;
const DESK_SEED: u64 = 77;

struct SectorRun {
    anchors: CategoricalGrid,
    ensemble: Ensemble,
}

struct Desk {
    ti_variance: f64,
    ti_crop: CategoricalGrid,
    model: RCNNModel,
    sectors: Vec<SectorRun>,
}

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

fn build_desk() -> Desk {
    // First generator seed whose training-image sector sits mid-band AND
    // whose 32-cube crops stay representative: layer placement can leave a
    // lower-corner crop far from the field statistics, which would test the
    // crop lottery instead of the model.
    let mut field = None;
    for seed in 0..64 {
        let params = rcnn_core::synthti::SurfaceModelParams {
            seed,
            ..Default::default()
        };
        let m = rcnn_core::synthti::generate_surface_model(&params).unwrap();
        if !m.target_met {
            continue;
        }
        let (ti, s1, s2, s3) = rcnn_core::synthti::split_sectors(&m.grid).unwrap();
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
        if (crop_var - 0.18).abs() <= 0.015 && spread <= 0.05 {
            field = Some((ti, vec![s1, s2, s3], var));
            break;
        }
    }
    let (ti, sectors, ti_variance) = field.expect("generator seed with representative crops");

    let ti_crop = ti.crop([0, 0, 0], DESK_CROP).unwrap();
    let model = rcnn::train(&ti_crop, desk_config()).unwrap();

    let sectors = sectors
        .iter()
        .enumerate()
        .map(|(s, gt)| {
            let gt_crop = gt.crop([0, 0, 0], DESK_CROP).unwrap();
            let hard = sample_drillholes(
                &gt_crop,
                DESK_CONDITIONING,
                derive_seed(DESK_SEED, "desk-sample", s as u64),
            )
            .unwrap();
            let empty =
                CategoricalGrid::unknown(DESK_CROP[0], DESK_CROP[1], DESK_CROP[2], 2);
            let (anchors, report) = migrate_hard_data(&empty, &hard).unwrap();
            assert_eq!(report.conflicts, 0);
            let job = SimulationJob {
                model: &model,
                hard_data: &hard,
                dims: DESK_CROP,
                realizations: DESK_REALIZATIONS,
                base_seed: derive_seed(DESK_SEED, "desk-sim", s as u64),
                mode: AssignMode::Draw,
            };
            let ensemble = rcnn_core::simulate::run_ensemble(&job).unwrap();
            SectorRun { anchors, ensemble }
        })
        .collect();

    Desk {
        ti_variance,
        ti_crop,
        model,
        sectors,
    }
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(build_desk)
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_04_conditioning_honored() {
    report(4, "hard data survives in every realization", || {
        let d = desk();
        for sector in &d.sectors {
            let vmap = variance_map(&sector.ensemble, 2);
            let mut informed = 0usize;
            for (idx, &variance) in vmap.iter().enumerate() {
                let want = sector.anchors.value_at(idx);
                if want == UNKNOWN {
                    continue;
                }
                informed += 1;
                for member in sector.ensemble.members() {
                    assert_eq!(member.value_at(idx), want, "node {idx} lost its category");
                }
                assert_eq!(variance, 0.0, "variance at conditioned node {idx}");
            }
            assert!(informed > 0);
        }
    });
}

// ---------------------------------------------------------------- criterion 5

/// Single-node sequential simulator: one network pass per node, center
/// assignment only, written independently of the production path walker.
fn reference_single_node(
    model: &RCNNModel,
    hard: &DrillHoleSet,
    dims: [usize; 3],
    seed: u64,
) -> CategoricalGrid {
    let base = CategoricalGrid::unknown(dims[0], dims[1], dims[2], model.config.k);
    let (d0, _) = migrate_hard_data(&base, hard).unwrap();
    let path = random_path(dims, derive_seed(seed, "path", 0));
    let mut rng = rng_from_seed(derive_seed(seed, "draws", 0));

    let mut domains = vec![d0.clone()];
    for i in 1..=model.config.n_cnns {
        let mut cur = d0.clone();
        for &node in path.order() {
            if cur.value_at(node) != UNKNOWN {
                continue;
            }
            let input =
                assemble_input(&domains, node, &model.config.window, model.config.k).unwrap();
            let field = model.chain[i - 1].forward_infer(&input).unwrap();
            let probs = field.probs_at(field.center_pos());
            let u: f64 = rng.gen();
            let mut cum = 0.0;
            let mut code = probs.len() as u8;
            for (c, p) in probs.iter().enumerate() {
                cum += p;
                if u < cum {
                    code = (c + 1) as u8;
                    break;
                }
            }
            cur.set_at(node, code);
        }
        domains.push(cur);
    }
    domains.pop().unwrap()
}

#[test]
fn criterion_05_degeneracy_equivalence() {
    report(5, "freeze 1 with a 1-cube pattern is single-node simulation", || {
        let config = RCNNConfig {
            n_cnns: 2,
            window: WindowSpec::new([5, 5, 5], [1, 1, 1]).unwrap(),
            k: 2,
            conv_maps: vec![2, 2],
            pool_after: vec![false, true],
            fc_hidden: vec![8],
            freeze_fraction: 1.0,
            seed: 501,
            ..RCNNConfig::default()
        };
        let mut model = RCNNModel::new(config).unwrap();
        model.trained_epochs = 1; // untrained weights are fine for equivalence

        let hard = DrillHoleSet::new(
            vec![
                DrillHoleSample {
                    x: 2.0,
                    y: 3.0,
                    z: 1.0,
                    category: 1,
                },
                DrillHoleSample {
                    x: 7.0,
                    y: 5.0,
                    z: 8.0,
                    category: 2,
                },
            ],
            0.0,
        )
        .unwrap();
        let dims = [9, 9, 9];
        for seed in [4242, 4243] {
            let fast = simulate_realization(&model, &hard, dims, seed, AssignMode::Draw).unwrap();
            let slow = reference_single_node(&model, &hard, dims, seed);
            assert_eq!(fast, slow, "seed {seed}");
        }
    });
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_07_sill_reproduction() {
    report(7, "realization sill inside the published band", || {
        let d = desk();
        assert!(
            (d.ti_variance - 0.18).abs() <= 0.01,
            "training-image variance {}",
            d.ti_variance
        );
        let mut sills = Vec::new();
        for sector in &d.sectors {
            for member in sector.ensemble.members() {
                sills.push(sill_estimate(member, 2).unwrap());
            }
        }
        let mean = sills.iter().sum::<f64>() / sills.len() as f64;
        assert!(
            (0.13..=0.23).contains(&mean),
            "mean realization sill {mean} outside [0.13, 0.23]"
        );
    });
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_08_proportion_sanity() {
    report(8, "realization proportions track the training image", || {
        let d = desk();
        let ti_minority = proportions(&d.ti_crop).unwrap()[1];
        let mut minority = Vec::new();
        for sector in &d.sectors {
            for member in sector.ensemble.members() {
                minority.push(proportions(member).unwrap()[1]);
            }
        }
        let mean = minority.iter().sum::<f64>() / minority.len() as f64;
        assert!(
            (mean - ti_minority).abs() <= 0.10,
            "mean minority {mean} vs training image {ti_minority}"
        );
    });
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_09_learning_signal() {
    report(9, "training loss drops below 60% of epoch one", || {
        let d = desk();
        let log = &d.model.loss_log;
        assert!(log.len() >= 2);
        let first = log.first().unwrap().total();
        let last = log.last().unwrap().total();
        assert!(
            last < 0.6 * first,
            "final loss {last} not below 60% of first {first}"
        );
    });
}

// --------------------------------------------------------------- criterion 10

#[test]
fn criterion_10_etype_anisotropy() {
    report(10, "E-type map keeps the layered anisotropy", || {
        let d = desk();
        let ensemble = &d.sectors[0].ensemble;
        let probs = etype(ensemble, 2);
        let dims = ensemble.dims();
        let mut thresholded = CategoricalGrid::unknown(dims[0], dims[1], dims[2], 2);
        for (idx, &p) in probs.iter().enumerate() {
            thresholded.set_at(idx, if p > 0.5 { 2 } else { 1 });
        }
        let h = indicator_variogram(&thresholded, 2, Direction::OmniHorizontal, 3)
            .unwrap()
            .gamma_at(3)
            .unwrap();
        let v = indicator_variogram(&thresholded, 2, Direction::Vertical, 3)
            .unwrap()
            .gamma_at(3)
            .unwrap();
        assert!(h < v, "horizontal gamma(3) {h} not below vertical {v}");
    });
}
