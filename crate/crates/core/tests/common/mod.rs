#![allow(dead_code)]

use bn_sharp::net::{Activation, BnNetwork, NetworkSpec};
use bn_sharp::{Batch, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Small random BN-MLP with zero variance floor, its seeded initialization
/// and a Gaussian batch.
pub fn random_bn_net(seed: u64) -> (BnNetwork, ParamVector, Batch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_in = rng.random_range(2..=3);
    let depth = rng.random_range(1..=2);
    let mut layers = vec![n_in];
    for _ in 0..depth {
        layers.push(rng.random_range(2..=5));
    }
    let classes = rng.random_range(2..=3);
    layers.push(classes);
    let mut bn: Vec<bool> = (0..depth).map(|_| rng.random_bool(0.7)).collect();
    bn[0] = true;
    let activation = if rng.random_bool(0.5) {
        Activation::Relu
    } else {
        Activation::Tanh
    };
    let net = BnNetwork::new(NetworkSpec {
        layers,
        bn,
        activation,
        eps: 0.0,
    })
    .unwrap();
    let theta = net.init(seed);
    let m = rng.random_range(12..=24);
    let inputs: Vec<f64> = (0..m * n_in).map(|_| rng.sample(StandardNormal)).collect();
    let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
    (net, theta, Batch::new(inputs, labels, n_in).unwrap())
}

/// Log-uniform factors in `[lo, hi]`, one per BN block.
pub fn random_scales(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| (rng.random_range(lo.ln()..hi.ln())).exp())
        .collect()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
