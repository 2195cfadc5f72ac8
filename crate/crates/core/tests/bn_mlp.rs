mod common;

use approx::assert_relative_eq;
use bn_sharp::net::{fd_hessian, hvp, Activation, BnNetwork, NetworkSpec};
use bn_sharp::params::scale_transform;
use bn_sharp::LossOracle;
use common::{random_bn_net, random_scales};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..10 {
        let (net, theta, batch) = random_bn_net(seed);
        let net = net.with_eps(1e-5).unwrap();
        let g = net.grad(&theta, &batch).unwrap().flat();
        let flat = theta.flat();
        let h = 1e-6;
        for k in 0..flat.len() {
            let mut up = flat.clone();
            up[k] += h;
            let mut dn = flat.clone();
            dn[k] -= h;
            let lp = net.loss(&theta.with_flat(&up).unwrap(), &batch).unwrap();
            let lm = net.loss(&theta.with_flat(&dn).unwrap(), &batch).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - g[k]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "seed {seed} coord {k}: fd {fd} vs {}",
                g[k]
            );
        }
    }
}

#[test]
fn hvp_converges_under_richardson_extrapolation() {
    let (net, theta, batch) = random_bn_net(7);
    let net = net.with_eps(1e-5).unwrap();
    let w = theta.scaled(1.0 / theta.norm());
    let coarse = hvp(&net, &theta, &batch, &w, 2e-3).unwrap();
    let fine = hvp(&net, &theta, &batch, &w, 1e-3).unwrap();
    // Central differences are second order: (4 fine - coarse) / 3 removes h^2.
    let mut extrap = fine.scaled(4.0);
    extrap.axpy(-1.0, &coarse);
    extrap.scale(1.0 / 3.0);
    let reference = hvp(&net, &theta, &batch, &w, 1e-4).unwrap();
    assert!(extrap.sub(&reference).norm() <= 1e-5 * (1.0 + reference.norm()));
    assert!(extrap.sub(&reference).norm() < fine.sub(&reference).norm());
}

#[test]
fn fd_hessian_is_symmetric_and_matches_hvp() {
    // Smooth activation, so the central differences do not straddle kinks.
    let (net, theta, batch) = random_bn_net(3);
    let net = BnNetwork::new(NetworkSpec {
        activation: Activation::Tanh,
        eps: 1e-5,
        ..net.spec().clone()
    })
    .unwrap();
    let h = fd_hessian(&net, &theta, &batch, 1e-4).unwrap();
    let e0 = {
        let mut e = vec![0.0; theta.dim()];
        e[0] = 1.0;
        theta.with_flat(&e).unwrap()
    };
    let col = hvp(&net, &theta, &batch, &e0, 1e-4).unwrap().flat();
    for i in 0..theta.dim() {
        for j in 0..i {
            assert_eq!(h[i][j], h[j][i]);
        }
        assert_relative_eq!(h[i][0], col[i], epsilon = 1e-6, max_relative = 1e-6);
    }
}

#[test]
fn loss_is_scale_invariant_and_gradient_scales_inversely() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..20 {
        let (net, theta, batch) = random_bn_net(seed);
        let a = random_scales(theta.n1(), 0.1, 10.0, &mut rng);
        let scaled = scale_transform(&theta, &a).unwrap();
        let (l0, g0) = net.loss_and_grad(&theta, &batch).unwrap();
        let (l1, g1) = net.loss_and_grad(&scaled, &batch).unwrap();
        assert_relative_eq!(l0, l1, max_relative = 1e-10);
        for i in 0..theta.num_blocks() {
            let f = if i < theta.n1() { 1.0 / a[i] } else { 1.0 };
            for (x, y) in g0.block(i).iter().zip(g1.block(i)) {
                assert_relative_eq!(x * f, *y, epsilon = 1e-10, max_relative = 1e-7);
            }
        }
    }
}

#[test]
fn bn_block_gradient_is_orthogonal_to_the_block() {
    for seed in 0..10 {
        let (net, theta, batch) = random_bn_net(seed);
        let g = net.grad(&theta, &batch).unwrap();
        for i in 0..theta.n1() {
            let d: f64 = theta.block(i).iter().zip(g.block(i)).map(|(x, y)| x * y).sum();
            assert!(d.abs() <= 1e-10 * (1.0 + g.block_norm(i) * theta.block_norm(i)), "{d}");
        }
    }
}
