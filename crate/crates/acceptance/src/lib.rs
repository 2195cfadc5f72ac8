//! Fixtures and reporting for the acceptance run.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use bn_sharp::config::RunConfig;
use bn_sharp::data::measurement_batch;
use bn_sharp::net::{Activation, BnNetwork, NetworkSpec};
use bn_sharp::{Batch, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Outcome of one criterion.
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Runs criteria in order and prints one line per criterion.
#[derive(Default)]
pub struct Suite {
    failed: Vec<usize>,
}

impl Suite {
    pub fn run(&mut self, id: usize, name: &str, f: impl FnOnce() -> Verdict) {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        });
        let tag = if v.pass { "PASS" } else { "FAIL" };
        let line = format!(
            "criterion {id:>2} {tag} {name} ({:.1}s): {}\n",
            start.elapsed().as_secs_f64(),
            v.detail
        );
        let mut out = std::io::stdout().lock();
        out.write_all(line.as_bytes()).unwrap();
        out.flush().unwrap();
        if !v.pass {
            self.failed.push(id);
        }
    }

    pub fn finish(self) -> ! {
        if self.failed.is_empty() {
            println!("acceptance: all criteria pass");
            std::process::exit(0);
        }
        println!("acceptance: failing criteria {:?}", self.failed);
        std::process::exit(1);
    }
}

/// Shipped config directory of the core crate.
pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/configs")
        .join(name)
}

pub fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

/// Random BN-MLP with zero variance floor, its seeded initialization and a
/// Gaussian batch.
pub fn random_bn_net(seed: u64) -> (BnNetwork, ParamVector, Batch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n_in = rng.random_range(2..=4);
    let depth = rng.random_range(1..=2);
    let mut layers = vec![n_in];
    for _ in 0..depth {
        layers.push(rng.random_range(3..=12));
    }
    let classes = rng.random_range(2..=4);
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
    .expect("valid spec");
    let theta = net.init(seed);
    let m = rng.random_range(16..=48);
    let inputs: Vec<f64> = (0..m * n_in).map(|_| rng.sample(StandardNormal)).collect();
    let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
    let batch = Batch::new(inputs, labels, n_in).expect("valid batch");
    (net, theta, batch)
}

/// Log-uniform factors in `[lo, hi]`.
pub fn log_uniform(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo.ln()..hi.ln()).exp()).collect()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Network, seeded parameters and measurement batch of a BN-MLP config, as
/// the command-line tools build them.
pub fn bn_fixture(cfg: &RunConfig) -> (BnNetwork, ParamVector, Batch) {
    let net = cfg.network().expect("bn_mlp config");
    let theta = net.init(cfg.network.init_seed);
    let data = cfg.dataset().expect("dataset");
    let batch = measurement_batch(&data, cfg.train.batch_size, cfg.train.seed).expect("batch");
    (net, theta, batch)
}

/// Parses the numeric body of a CSV with a header row.
pub fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().expect("number")).collect())
        .collect()
}

/// Successive ratios `x[k+1] / x[k]`.
pub fn ratios(xs: &[f64]) -> Vec<f64> {
    xs.windows(2).map(|w| w[1] / w[0]).collect()
}

pub fn fmt_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}
