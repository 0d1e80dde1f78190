//! Analytic gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankbo_core::deepset::{DeepSetParams, SupportSet};
use rankbo_core::nn::{Activation, MlpParams};
use rankbo_core::ranking::{true_rank_permutation, LossKind, WeightScheme};
use rankbo_core::{DreConfig, DreModel};

const STEP: f64 = 1e-6;
const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-6;

fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length");
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let diff = (a - n).abs();
        let rel = diff / a.abs().max(n.abs());
        assert!(
            diff <= ABS_FLOOR || rel < REL_TOL,
            "{what}[{i}]: analytic {a}, numeric {n}"
        );
    }
}

fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + STEP;
            let up = f(&probe);
            probe[i] = x[i] - STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn check_mlp(dims: &[usize], activation: Activation, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = MlpParams::init(dims, activation, seed).unwrap();
    // Non-zero biases so that the bias path is exercised.
    let mut flat = net.to_flat();
    for v in flat.iter_mut() {
        *v += rng.gen_range(-0.1..0.1);
    }
    net.set_flat(&flat).unwrap();
    let batch = 4;
    let inputs = uniform(&mut rng, batch * dims[0], 1.0);
    let out_dim = *dims.last().unwrap();
    let coef = uniform(&mut rng, batch * out_dim, 1.0);
    let loss = |net: &MlpParams, inputs: &[f64]| -> f64 {
        let (out, _) = net.forward_batch(inputs, batch).unwrap();
        out.iter().zip(&coef).map(|(o, c)| o * c).sum()
    };
    let (_, cache) = net.forward_batch(&inputs, batch).unwrap();
    let grads = net.backward(&cache, &coef).unwrap();

    let numeric = central_diff(&flat, |p| {
        let mut n = net.clone();
        n.set_flat(p).unwrap();
        loss(&n, &inputs)
    });
    assert_close(&grads.to_flat(), &numeric, "mlp parameters");
    let numeric_in = central_diff(&inputs, |x| loss(&net, x));
    assert_close(&grads.input, &numeric_in, "mlp inputs");
}

#[test]
fn mlp_reference_architecture() {
    check_mlp(&[3, 8, 8, 1], Activation::Relu, 1);
    check_mlp(&[3, 8, 8, 1], Activation::Tanh, 2);
}

#[test]
fn mlp_random_small_architectures() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..20 {
        let depth = rng.gen_range(0..=3);
        let mut dims = vec![rng.gen_range(1..=4)];
        dims.extend((0..depth).map(|_| rng.gen_range(1..=16)));
        dims.push(rng.gen_range(1..=2));
        let act = if trial % 2 == 0 { Activation::Relu } else { Activation::Tanh };
        check_mlp(&dims, act, 1000 + trial);
    }
}

#[test]
fn deepset_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (trial, activation) in [Activation::Tanh, Activation::Relu].into_iter().enumerate() {
        let ds = DeepSetParams::init(2, &[6, 6], 5, 3, activation, 10 + trial as u64, 20).unwrap();
        let xs: Vec<Vec<f64>> = (0..4).map(|_| uniform(&mut rng, 2, 1.0)).collect();
        let ys = uniform(&mut rng, 4, 1.0);
        let support = SupportSet::new(xs, ys).unwrap();
        let coef = uniform(&mut rng, 3, 1.0);
        let loss = |ds: &DeepSetParams| -> f64 {
            let (z, _) = ds.encode(&support).unwrap();
            z.z.iter().zip(&coef).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = ds.encode(&support).unwrap();
        let grads = ds.backward(&cache, &coef).unwrap();

        let inner = ds.inner().to_flat();
        let numeric = central_diff(&inner, |p| {
            let mut d = ds.clone();
            d.inner_mut().set_flat(p).unwrap();
            loss(&d)
        });
        assert_close(&grads.inner.to_flat(), &numeric, "deep set inner");

        let outer = ds.outer().to_flat();
        let numeric = central_diff(&outer, |p| {
            let mut d = ds.clone();
            d.outer_mut().set_flat(p).unwrap();
            loss(&d)
        });
        assert_close(&grads.outer.to_flat(), &numeric, "deep set outer");
    }
}

#[test]
fn every_loss_against_finite_differences() {
    let kinds = [
        (LossKind::ListwiseWeighted, WeightScheme::InverseLog),
        (LossKind::ListwiseWeighted, WeightScheme::InverseLinear),
        (LossKind::ListwiseWeighted, WeightScheme::PositionDependentAttention),
        (LossKind::ListwiseUnweighted, WeightScheme::InverseLog),
        (LossKind::Pairwise, WeightScheme::InverseLog),
        (LossKind::Pointwise, WeightScheme::InverseLog),
        (LossKind::RegressionMse, WeightScheme::InverseLog),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (kind, scheme) in kinds {
        for _ in 0..50 {
            let m = rng.gen_range(2..=8);
            let scores = uniform(&mut rng, m, 3.0);
            let targets = uniform(&mut rng, m, 1.0);
            let (_, grad) = kind.evaluate(&scores, &targets, scheme).unwrap();
            let numeric = central_diff(&scores, |s| kind.evaluate(s, &targets, scheme).unwrap().0);
            assert_close(&grad, &numeric, &format!("{kind:?}/{scheme:?}"));
        }
    }
}

#[test]
fn listwise_on_a_six_item_list() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let scores = uniform(&mut rng, 6, 2.0);
    let perm = true_rank_permutation(&uniform(&mut rng, 6, 1.0)).unwrap();
    let (_, grad) = rankbo_core::ranking::listwise_loss(&scores, &perm, WeightScheme::InverseLog).unwrap();
    let numeric = central_diff(&scores, |s| {
        rankbo_core::ranking::listwise_loss(s, &perm, WeightScheme::InverseLog)
            .unwrap()
            .0
    });
    assert_close(&grad, &numeric, "listwise M=6");
}

fn composite_model(activation: Activation, seed: u64) -> DreModel {
    let config = DreConfig {
        ensemble_size: 2,
        scorer_hidden: vec![8, 8],
        deepset_hidden: vec![6],
        deepset_pool_dim: 5,
        meta_feature_dim: 4,
        activation,
        seed,
        ..DreConfig::default()
    };
    let mut model = DreModel::new(config, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for scorer in model.scorers_mut() {
        let p: Vec<f64> = scorer.to_flat().iter().map(|v| v + rng.gen_range(-0.1..0.1)).collect();
        scorer.set_flat(&p).unwrap();
    }
    model
}

#[test]
fn composite_encoder_and_scorer() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for trial in 0..10u64 {
        let activation = if trial % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let model = composite_model(activation, trial);
        let xs: Vec<Vec<f64>> = (0..6).map(|_| uniform(&mut rng, 2, 1.0)).collect();
        let ys = uniform(&mut rng, 6, 1.0);
        let support = SupportSet::new(xs[..3].to_vec(), ys[..3].to_vec()).unwrap();
        let member = (trial % 2) as usize;
        let g = model.list_gradients(member, &xs, &ys, Some(&support)).unwrap();
        let loss = |m: &DreModel| m.list_gradients(member, &xs, &ys, Some(&support)).unwrap().loss;

        let flat = model.scorers()[member].to_flat();
        let numeric = central_diff(&flat, |p| {
            let mut m = model.clone();
            m.scorers_mut()[member].set_flat(p).unwrap();
            loss(&m)
        });
        assert_close(&g.scorer.to_flat(), &numeric, "composite scorer");

        let dg = g.deepset.as_ref().unwrap();
        let inner = model.deepset().unwrap().inner().to_flat();
        let numeric = central_diff(&inner, |p| {
            let mut m = model.clone();
            m.deepset_mut().unwrap().inner_mut().set_flat(p).unwrap();
            loss(&m)
        });
        assert_close(&dg.inner.to_flat(), &numeric, "composite encoder inner");
        let outer = model.deepset().unwrap().outer().to_flat();
        let numeric = central_diff(&outer, |p| {
            let mut m = model.clone();
            m.deepset_mut().unwrap().outer_mut().set_flat(p).unwrap();
            loss(&m)
        });
        assert_close(&dg.outer.to_flat(), &numeric, "composite encoder outer");
    }
}
