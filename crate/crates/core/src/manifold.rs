//! Geometry of the product of scaled spheres that search directions live on.
//!
//! For a parameter vector `theta`, a direction `v` has one sphere factor per
//! BN block (radius `|theta_i|`) plus a single unit sphere for the
//! concatenated tail blocks. On each factor the tangent projection is
//! `P_x(eta) = eta - x (x^T eta) / r^2` and the retraction is
//! `Retr_x(eta) = r (x + eta) / |x + eta|`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::params::{dot, norm, ParamVector};

/// Floor on the projected-gradient norm in the normalized step rule.
const TINY: f64 = 1e-30;

/// Relative deviation of `|x|` from the declared radius that is still
/// accepted as "on the sphere".
const RADIUS_TOL: f64 = 1e-6;

fn check_on_sphere(x: &[f64], r: f64) -> Result<()> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("sphere radius must be positive, got {r}")));
    }
    let nx = norm(x);
    if (nx - r).abs() > RADIUS_TOL * r {
        return Err(Error::Consistency(format!(
            "point has norm {nx}, expected radius {r}"
        )));
    }
    Ok(())
}

/// Orthogonal projection of `eta` onto the tangent space at `x` of the
/// sphere of radius `r`. The radial component is removed using `|x|^2`,
/// which equals `r^2` on the sphere.
pub fn project_tangent(x: &[f64], eta: &[f64], r: f64) -> Result<Vec<f64>> {
    if x.len() != eta.len() {
        return Err(Error::Structural(format!(
            "tangent projection: point has {} entries, vector has {}",
            x.len(),
            eta.len()
        )));
    }
    check_on_sphere(x, r)?;
    let coef = dot(x, eta) / dot(x, x);
    Ok(eta.iter().zip(x).map(|(e, xi)| e - coef * xi).collect())
}

pub fn retract(x: &[f64], eta: &[f64], r: f64) -> Result<Vec<f64>> {
    if x.len() != eta.len() {
        return Err(Error::Structural(format!(
            "retraction: point has {} entries, vector has {}",
            x.len(),
            eta.len()
        )));
    }
    check_on_sphere(x, r)?;
    let sum: Vec<f64> = x.iter().zip(eta).map(|(a, b)| a + b).collect();
    let n = norm(&sum);
    if n == 0.0 {
        return Err(Error::SingularRetraction);
    }
    let s = r / n;
    Ok(sum.into_iter().map(|v| v * s).collect())
}

/// A search direction in the constraint set of some `theta`: every BN block
/// has the norm of the matching block of `theta`, and the tail blocks
/// jointly have unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction(ParamVector);

impl Direction {
    /// Accepts `v` if it satisfies the constraints of `theta` to `1e-9`
    /// relative accuracy.
    pub fn new(v: ParamVector, theta: &ParamVector) -> Result<Self> {
        theta.check_layout(&v)?;
        for i in 0..theta.n1() {
            let (got, want) = (v.block_norm(i), theta.block_norm(i));
            if want == 0.0 {
                return Err(zero_block(i));
            }
            if (got - want).abs() > 1e-9 * want {
                return Err(Error::Consistency(format!(
                    "direction block {i} has norm {got}, expected {want}"
                )));
            }
        }
        if theta.has_tail() && (v.tail_norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Consistency(format!(
                "direction tail has norm {}, expected 1",
                v.tail_norm()
            )));
        }
        Ok(Self(v))
    }

    pub(crate) fn from_params_unchecked(v: ParamVector) -> Self {
        Self(v)
    }

    pub fn params(&self) -> &ParamVector {
        &self.0
    }

    pub fn into_params(self) -> ParamVector {
        self.0
    }

    /// Apply the same per-block scaling `T_a` as the parameters; the result
    /// lies in the constraint set of `T_a(theta)`.
    pub fn scale_transform(&self, a: &[f64]) -> Result<Self> {
        crate::params::scale_transform(&self.0, a).map(Self)
    }

    /// Uniformly random direction in the constraint set of `theta`.
    pub fn random<R: Rng + ?Sized>(theta: &ParamVector, rng: &mut R) -> Result<Self> {
        let mut v = theta.zeros_like();
        for i in 0..theta.n1() {
            let r = theta.block_norm(i);
            if r == 0.0 {
                return Err(zero_block(i));
            }
            fill_sphere(v.block_mut(i), r, rng);
        }
        if theta.has_tail() {
            let mut tail = vec![0.0; tail_dim(theta)];
            fill_sphere(&mut tail, 1.0, rng);
            set_tail(&mut v, &tail);
        }
        Ok(Self(v))
    }
}

pub(crate) fn zero_block(i: usize) -> Error {
    Error::Domain(format!(
        "BN block {i} has zero norm; its direction constraint is undefined"
    ))
}

pub(crate) fn fill_sphere<R: Rng + ?Sized>(out: &mut [f64], r: f64, rng: &mut R) {
    loop {
        for x in out.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let n = norm(out);
        if n > 0.0 {
            for x in out.iter_mut() {
                *x *= r / n;
            }
            return;
        }
    }
}

pub(crate) fn tail_dim(p: &ParamVector) -> usize {
    p.blocks()[p.n1()..].iter().map(Vec::len).sum()
}

pub(crate) fn tail_of(p: &ParamVector) -> Vec<f64> {
    p.blocks()[p.n1()..].iter().flatten().copied().collect()
}

pub(crate) fn set_tail(p: &mut ParamVector, tail: &[f64]) {
    let n1 = p.n1();
    let mut offset = 0;
    for block in &mut p.blocks_mut()[n1..] {
        let n = block.len();
        block.copy_from_slice(&tail[offset..offset + n]);
        offset += n;
    }
}

/// One sphere-wise ascent step; `step_for(radius, |P(g)|)` picks the step
/// length on each factor.
fn step_factors(
    v: &Direction,
    g: &ParamVector,
    theta: &ParamVector,
    step_for: impl Fn(f64, f64) -> f64,
) -> Result<Direction> {
    theta.check_layout(v.params())?;
    theta.check_layout(g)?;
    let mut out = v.params().clone();
    let advance = |x: &[f64], grad: &[f64], r: f64| -> Result<Option<Vec<f64>>> {
        let p = project_tangent(x, grad, r)?;
        let pn = norm(&p);
        if pn == 0.0 {
            return Ok(None);
        }
        let step = step_for(r, pn);
        let eta: Vec<f64> = p.iter().map(|c| c * step).collect();
        retract(x, &eta, r).map(Some)
    };
    for i in 0..theta.n1() {
        let r = theta.block_norm(i);
        if r == 0.0 {
            return Err(zero_block(i));
        }
        if let Some(next) = advance(v.params().block(i), g.block(i), r)? {
            out.block_mut(i).copy_from_slice(&next);
        }
    }
    if theta.has_tail() {
        if let Some(next) = advance(&tail_of(v.params()), &tail_of(g), 1.0)? {
            set_tail(&mut out, &next);
        }
    }
    Ok(Direction(out))
}

/// `v_i <- Retr_{v_i}(step * P_{v_i}(g_i))` on every sphere factor with one
/// common step length.
pub fn direction_step(
    v: &Direction,
    g: &ParamVector,
    theta: &ParamVector,
    step: f64,
) -> Result<Direction> {
    if !(step > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {step}")));
    }
    step_factors(v, g, theta, |_, _| step)
}

/// Ascent step whose length on each factor is
/// `search_step * r / max(|P(g_i)|, tiny)`, i.e. every sphere turns by
/// roughly `search_step` radians regardless of gradient scale.
pub fn normalized_direction_step(
    v: &Direction,
    g: &ParamVector,
    theta: &ParamVector,
    search_step: f64,
) -> Result<Direction> {
    if !(search_step > 0.0) {
        return Err(Error::Domain(format!(
            "search_step must be positive, got {search_step}"
        )));
    }
    step_factors(v, g, theta, |r, pn| search_step * r / pn.max(TINY))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn projection_examples() {
        let x = [3.0, 4.0];
        assert!(close(&project_tangent(&x, &x, 5.0).unwrap(), &[0.0, 0.0], 1e-15));
        let perp = [-4.0, 3.0];
        assert_eq!(project_tangent(&x, &perp, 5.0).unwrap(), perp.to_vec());
        let p = project_tangent(&x, &[1.0, 0.0], 5.0).unwrap();
        assert!(close(&p, &[0.64, -0.48], 1e-15), "{p:?}");
    }

    #[test]
    fn projection_errors() {
        assert!(matches!(
            project_tangent(&[1.0, 0.0], &[0.0, 1.0], 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            project_tangent(&[1.0, 0.0], &[0.0, 1.0], 2.0),
            Err(Error::Consistency(_))
        ));
        assert!(matches!(
            project_tangent(&[1.0, 0.0], &[0.0], 1.0),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn retraction_examples() {
        let r = 2.5;
        let x = [r, 0.0];
        assert_eq!(retract(&x, &[0.0, 0.0], r).unwrap(), x.to_vec());
        let y = retract(&x, &[0.0, r], r).unwrap();
        let s = r / 2f64.sqrt();
        assert!(close(&y, &[s, s], 1e-15));
        assert!(matches!(
            retract(&x, &[-r, 0.0], r),
            Err(Error::SingularRetraction)
        ));
    }

    fn theta() -> ParamVector {
        ParamVector::new(
            vec![vec![3.0, 4.0], vec![0.0, 0.5, 0.0], vec![1.0, 2.0], vec![-1.0]],
            2,
        )
        .unwrap()
    }

    #[test]
    fn direction_membership() {
        let t = theta();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = Direction::random(&t, &mut rng).unwrap();
        assert!((v.params().block_norm(0) - 5.0).abs() < 1e-12);
        assert!((v.params().block_norm(1) - 0.5).abs() < 1e-12);
        assert!((v.params().tail_norm() - 1.0).abs() < 1e-12);
        assert!((v.params().norm() - t.phi_norm()).abs() < 1e-10);
        assert!(Direction::new(t.clone(), &t).is_err());
        let zero = ParamVector::new(vec![vec![0.0, 0.0], vec![1.0]], 1).unwrap();
        assert!(matches!(
            Direction::random(&zero, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn zero_gradient_leaves_direction_unchanged() {
        let t = theta();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = Direction::random(&t, &mut rng).unwrap();
        let out = direction_step(&v, &t.zeros_like(), &t, 0.3).unwrap();
        assert_eq!(out, v);
        let out = normalized_direction_step(&v, &t.zeros_like(), &t, 0.1).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn single_block_step_is_retract_of_projection() {
        let t = ParamVector::new(vec![vec![0.0, 2.0, 0.0]], 1).unwrap();
        let v = Direction::new(
            ParamVector::new(vec![vec![2.0, 0.0, 0.0]], 1).unwrap(),
            &t,
        )
        .unwrap();
        let g = ParamVector::new(vec![vec![0.3, 1.0, -0.2]], 1).unwrap();
        let step = 0.7;
        let out = direction_step(&v, &g, &t, step).unwrap();
        let p = project_tangent(v.params().block(0), g.block(0), 2.0).unwrap();
        let eta: Vec<f64> = p.iter().map(|x| x * step).collect();
        let expected = retract(v.params().block(0), &eta, 2.0).unwrap();
        assert_eq!(out.params().block(0), expected.as_slice());
    }

    #[test]
    fn steps_reject_bad_inputs() {
        let t = theta();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = Direction::random(&t, &mut rng).unwrap();
        assert!(direction_step(&v, &t, &t, 0.0).is_err());
        let other = ParamVector::new(vec![vec![1.0]], 0).unwrap();
        assert!(matches!(
            direction_step(&v, &other, &t, 0.1),
            Err(Error::Structural(_))
        ));
    }
}
