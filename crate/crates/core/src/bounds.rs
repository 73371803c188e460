//! Closed-form upper bounds on the reservoir transport distance and the
//! integral estimates built on it.

use serde::Serialize;
use thiserror::Error;

use crate::families::{FamilyError, FracLaplFamily};
use crate::measures::{tv_distance, weight_by_power, DiscreteMeasure, MeasureError};
use crate::numeric::{dist, integrate_with_breaks, ksum, norm, pow_p, unit_sphere_area};
use crate::transport::{distance, DualPotentials, TransportError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error("atom {index} of {which} has |z| = {radius} >= 1")]
    OutsideUnitBall { which: &'static str, index: usize, radius: f64 },
    #[error("mu - nu is not a positive measure: nu exceeds mu by {excess} at {position:?}")]
    SignedDifference { position: Vec<f64>, excess: f64 },
    #[error("radius r = {0} is outside (0, 1]")]
    InvalidRadius(f64),
    #[error("invalid radial profile: {0}")]
    InvalidProfile(String),
}

/// Shared comparison slack: `1e-8` absolute plus `1e-9` relative.
pub fn slack(reference: f64) -> f64 {
    1e-8 + 1e-9 * reference.abs()
}

fn require_unit_ball(mu: &DiscreteMeasure, which: &'static str) -> Result<(), BoundsError> {
    for (index, a) in mu.atoms().iter().enumerate() {
        let radius = a.radius();
        if radius >= 1.0 {
            return Err(BoundsError::OutsideUnitBall { which, index, radius });
        }
    }
    Ok(())
}

/// `2^{(p−1)/p} d_TV(μ_p, ν_p)^{1/p}` with `dμ_p = |z|^p dμ`; needs both
/// measures inside the open unit ball.
pub fn tv_power_bound(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64, BoundsError> {
    require_unit_ball(mu, "mu")?;
    require_unit_ball(nu, "nu")?;
    let tv = tv_distance(&weight_by_power(mu, p), &weight_by_power(nu, p))?;
    Ok(2f64.powf((p - 1.0) / p) * tv.powf(1.0 / p))
}

/// `∫ |z|^p d(μ − ν)` when `μ − ν` is a positive measure; dominates `d^p`.
pub fn positive_part_dual_bound(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64, BoundsError> {
    if mu.dim() != nu.dim() {
        return Err(MeasureError::DimensionMismatch(mu.dim(), nu.dim()).into());
    }
    let mut terms = Vec::with_capacity(mu.len());
    let mut nu_iter = nu.atoms().iter().peekable();
    for a in mu.atoms() {
        let mut w = a.weight;
        // Both atom lists are in the same canonical order.
        if let Some(b) = nu_iter.peek() {
            match cmp(&b.position, &a.position) {
                std::cmp::Ordering::Less => {
                    return Err(BoundsError::SignedDifference { position: b.position.clone(), excess: b.weight });
                }
                std::cmp::Ordering::Equal => {
                    w -= b.weight;
                    nu_iter.next();
                }
                std::cmp::Ordering::Greater => {}
            }
        }
        if w < -1e-12 * a.weight {
            return Err(BoundsError::SignedDifference { position: a.position.clone(), excess: -w });
        }
        terms.push(w.max(0.0) * pow_p(a.radius(), p));
    }
    if let Some(b) = nu_iter.next() {
        return Err(BoundsError::SignedDifference { position: b.position.clone(), excess: b.weight });
    }
    Ok(ksum(terms))
}

fn cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// `Σ_{|z| < r} |z|^p w(z)`, the cost of sending the mass inside `B_r` to
/// the reservoir; dominates `d(μ, μ|_{B_r^c})^p`.
pub fn restriction_bound(mu: &DiscreteMeasure, r: f64, p: f64) -> Result<f64, BoundsError> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(BoundsError::InvalidRadius(r));
    }
    Ok(mu.restrict_inside(r).moment(p))
}

/// `Σ_i w_i |T1(z_i) − T2(z_i)|^p`, the cost of the coupling
/// `(T1 × T2)_# base`; dominates `d((T1)_# base, (T2)_# base)^p`.
///
/// An image at the origin stands for mass absorbed by the reservoir, so the
/// formula needs no special case.
pub fn pushforward_bound<F, G>(t1: F, t2: G, base: &DiscreteMeasure, p: f64) -> f64
where
    F: Fn(&[f64]) -> Vec<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    ksum(base.atoms().iter().map(|a| a.weight * pow_p(dist(&t1(&a.position), &t2(&a.position)), p)))
}

/// Piecewise-linear radial test function `ψ(z) = f(|z|)`, zero outside its
/// breakpoint range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialProfile {
    radii: Vec<f64>,
    values: Vec<f64>,
}

impl RadialProfile {
    /// Breakpoints `(r_k, f(r_k))` with `0 < r_0 < ... < r_n <= 1` and
    /// `f(r_0) = f(r_n) = 0`, which makes `ψ` Lipschitz with compact support
    /// in `B̄_1 \ {0}`.
    pub fn new(points: &[(f64, f64)]) -> Result<Self, BoundsError> {
        if points.len() < 2 {
            return Err(BoundsError::InvalidProfile("need at least two breakpoints".into()));
        }
        if points[0].0 <= 0.0 {
            return Err(BoundsError::InvalidProfile(format!("support touches the origin (r_0 = {})", points[0].0)));
        }
        if points.iter().any(|&(r, v)| !r.is_finite() || !v.is_finite()) {
            return Err(BoundsError::InvalidProfile("non-finite breakpoint".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(BoundsError::InvalidProfile("radii must increase strictly".into()));
        }
        if points[points.len() - 1].0 > 1.0 {
            return Err(BoundsError::InvalidProfile("support leaves the closed unit ball".into()));
        }
        if points[0].1 != 0.0 || points[points.len() - 1].1 != 0.0 {
            return Err(BoundsError::InvalidProfile("profile must vanish at both ends".into()));
        }
        Ok(Self { radii: points.iter().map(|p| p.0).collect(), values: points.iter().map(|p| p.1).collect() })
    }

    /// Hat function rising from 0 at `a` to `height` at the midpoint and back
    /// to 0 at `b`.
    pub fn hat(a: f64, b: f64, height: f64) -> Result<Self, BoundsError> {
        Self::new(&[(a, 0.0), (0.5 * (a + b), height), (b, 0.0)])
    }

    pub fn eval_radius(&self, r: f64) -> f64 {
        let n = self.radii.len();
        if r <= self.radii[0] || r >= self.radii[n - 1] {
            return 0.0;
        }
        let k = self.radii.partition_point(|&x| x <= r) - 1;
        let (r0, r1) = (self.radii[k], self.radii[k + 1]);
        let (v0, v1) = (self.values[k], self.values[k + 1]);
        v0 + (v1 - v0) * (r - r0) / (r1 - r0)
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.eval_radius(norm(z))
    }

    /// Exact Lipschitz constant: the steepest segment slope.
    pub fn lipschitz(&self) -> f64 {
        self.radii
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(r, v)| ((v[1] - v[0]) / (r[1] - r[0])).abs())
            .fold(0.0, f64::max)
    }

    /// Whether `|z| = r` lies in the closed support of `ψ`: some segment
    /// containing `r` is not identically zero.
    pub fn in_support_radius(&self, r: f64) -> bool {
        self.radii
            .windows(2)
            .zip(self.values.windows(2))
            .any(|(rs, vs)| (vs[0] != 0.0 || vs[1] != 0.0) && r >= rs[0] && r <= rs[1])
    }
}

/// Both sides of `|∫ψ dμ − ∫ψ dν| <= (μ(spt ψ) + ν(spt ψ))^{(p−1)/p} [ψ]_Lip d_p(μ, ν)`.
pub fn restricted_integral_bound(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    psi: &RadialProfile,
    p: f64,
) -> Result<(f64, f64), BoundsError> {
    require_unit_ball(mu, "mu")?;
    require_unit_ball(nu, "nu")?;
    let integral = |m: &DiscreteMeasure| ksum(m.atoms().iter().map(|a| a.weight * psi.eval(&a.position)));
    let support_mass =
        |m: &DiscreteMeasure| ksum(m.atoms().iter().filter(|a| psi.in_support_radius(a.radius())).map(|a| a.weight));
    let lhs = (integral(mu) - integral(nu)).abs();
    let lip = psi.lipschitz();
    if lip == 0.0 {
        return Ok((lhs, 0.0));
    }
    let mass = support_mass(mu) + support_mass(nu);
    let rhs = mass.powf((p - 1.0) / p) * lip * distance(mu, nu, p)?;
    Ok((lhs, rhs))
}

/// Dual pair `(φ, −φ)` evaluated on the atoms; admissible for `p = 1`
/// whenever `φ` is 1-Lipschitz with `φ(0) = 0`.
pub fn lipschitz_dual_pair<F: Fn(&[f64]) -> f64>(phi: F, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> DualPotentials {
    DualPotentials {
        phi: mu.atoms().iter().map(|a| phi(&a.position)).collect(),
        psi: nu.atoms().iter().map(|a| -phi(&a.position)).collect(),
    }
}

/// Mass and first-moment variation of the middle annulus `μ̃` of the
/// fractional-Laplacian family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MutildeReport {
    /// `μ̃_x(B_1)`.
    pub mass: f64,
    /// `∫ |z| d|μ̃_x − μ̃_y|`.
    pub first_moment_variation: f64,
    /// `first_moment_variation / |x − y|` (0 when the variation vanishes).
    pub lipschitz_ratio: f64,
}

/// Quadrature of the continuum quantities behind the middle-annulus
/// hypotheses, at `1e-10` target error.
pub fn mutilde_checks(family: &FracLaplFamily, x: &[f64], y: &[f64]) -> Result<MutildeReport, BoundsError> {
    let sigma = family.sigma;
    if !(sigma > 1.0 && sigma < 2.0) {
        return Err(FamilyError::InvalidSigma(sigma, "(1, 2)").into());
    }
    let (ax, ay) = (family.coefficient(x)?, family.coefficient(y)?);
    let (rx, ry) = (ax.powf(1.0 / sigma), ay.powf(1.0 / sigma));
    let s = unit_sphere_area(family.dim);
    let tol = 1e-10;

    // Radial densities in polar form: S r^{d-1} a r^{-d-σ} = S a r^{-1-σ}.
    let mass = if ax == 0.0 || rx >= 1.0 {
        0.0
    } else {
        s * integrate_with_breaks(|r| ax * r.powf(-1.0 - sigma), rx, 1.0, &[], tol / s).value
    };

    let lo = rx.min(ry);
    let variation = if lo >= 1.0 || ax == ay {
        0.0
    } else {
        let f = |r: f64| {
            let dx = if r >= rx { ax } else { 0.0 };
            let dy = if r >= ry { ay } else { 0.0 };
            r.powf(-sigma) * (dx - dy).abs()
        };
        let lo = lo.max(f64::MIN_POSITIVE);
        s * integrate_with_breaks(f, lo, 1.0, &[rx, ry], tol / s).value
    };
    let dxy = dist(x, y);
    let lipschitz_ratio = if variation == 0.0 { 0.0 } else { variation / dxy };
    Ok(MutildeReport { mass, first_moment_variation: variation, lipschitz_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Atom;
    use crate::transport::{check_duals, dual_value, CostSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn m1(points: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::from_1d(points).unwrap()
    }

    fn d(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> f64 {
        distance(mu, nu, p).unwrap()
    }

    #[test]
    fn tv_power_examples() {
        let mu = m1(&[(0.5, 1.0)]);
        let nu = m1(&[(0.5, 2.0)]);
        assert_eq!(tv_power_bound(&mu, &mu, 1.5).unwrap(), 0.0);
        let b = tv_power_bound(&mu, &nu, 1.0).unwrap();
        assert!((b - 0.5).abs() < 1e-15);
        assert!((d(&mu, &nu, 1.0) - 0.5).abs() < 1e-15);
        let e = DiscreteMeasure::empty(1);
        let b2 = tv_power_bound(&mu, &e, 2.0).unwrap();
        assert!((b2 - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(b2 >= d(&mu, &e, 2.0));
        assert!(matches!(
            tv_power_bound(&m1(&[(1.0, 1.0)]), &e, 1.0),
            Err(BoundsError::OutsideUnitBall { index: 0, .. })
        ));
    }

    #[test]
    fn positive_part_examples() {
        let nu = m1(&[(0.5, 1.0), (-0.2, 2.0)]);
        assert_eq!(positive_part_dual_bound(&nu, &nu, 2.0).unwrap(), 0.0);
        let mu = nu.add(&m1(&[(0.3, 1.0)])).unwrap();
        let b = positive_part_dual_bound(&mu, &nu, 2.0).unwrap();
        assert!((b - 0.09).abs() < 1e-15);
        assert!(d(&mu, &nu, 2.0).powi(2) <= b + 1e-12);
        let e = DiscreteMeasure::empty(1);
        let full = positive_part_dual_bound(&mu, &e, 1.5).unwrap();
        assert!((full - d(&mu, &e, 1.5).powf(1.5)).abs() < 1e-12);
        assert!(matches!(positive_part_dual_bound(&nu, &mu, 2.0), Err(BoundsError::SignedDifference { .. })));
        assert!(positive_part_dual_bound(&m1(&[(0.5, 1.0)]), &m1(&[(0.5, 1.5)]), 1.0).is_err());
    }

    #[test]
    fn restriction_examples() {
        let mu = m1(&[(0.1, 1.0), (0.5, 1.0)]);
        assert_eq!(restriction_bound(&mu, 0.05, 2.0).unwrap(), 0.0);
        let b = restriction_bound(&mu, 0.3, 2.0).unwrap();
        assert!((b - 0.01).abs() < 1e-15);
        let rest = crate::measures::restrict_outside(&mu, 0.3);
        assert!(d(&mu, &rest, 2.0).powi(2) <= b + 1e-15);
        let single = m1(&[(0.2, 1.0)]);
        let v = restriction_bound(&single, 0.3, 1.5).unwrap();
        assert!((v - d(&single, &DiscreteMeasure::empty(1), 1.5).powf(1.5)).abs() < 1e-15);
        assert!(restriction_bound(&mu, 0.0, 1.0).is_err());
    }

    #[test]
    fn pushforward_examples() {
        let base = m1(&[(0.1, 1.0), (0.3, 1.0), (-0.4, 1.0)]);
        let id = |z: &[f64]| z.to_vec();
        assert_eq!(pushforward_bound(id, id, &base, 1.5), 0.0);
        let shift = |z: &[f64]| vec![z[0] + 0.05];
        let b = pushforward_bound(id, shift, &base, 2.0);
        assert!((b - 3.0 * 0.0025).abs() < 1e-15);
        let oracle = crate::transport::brute_force_unit(&base, &base.map_positions(1, shift), 2.0).unwrap();
        assert!(oracle <= b + 1e-15);
    }

    #[test]
    fn profile_validation_and_lipschitz() {
        assert!(RadialProfile::new(&[(0.0, 0.0), (0.5, 1.0), (0.9, 0.0)]).is_err());
        assert!(RadialProfile::new(&[(0.1, 0.0), (0.5, 1.0), (1.1, 0.0)]).is_err());
        assert!(RadialProfile::new(&[(0.1, 0.2), (0.5, 0.0)]).is_err());
        let h = RadialProfile::hat(0.2, 0.8, 0.3).unwrap();
        assert!((h.lipschitz() - 1.0).abs() < 1e-15);
        assert!((h.eval(&[0.0, -0.5]) - 0.3).abs() < 1e-15);
        assert!(!h.in_support_radius(0.1) && h.in_support_radius(0.2) && h.in_support_radius(0.8));
        // zero segments are not part of the support
        let z = RadialProfile::new(&[(0.1, 0.0), (0.3, 0.0), (0.4, 0.1), (0.5, 0.0)]).unwrap();
        assert!(!z.in_support_radius(0.2) && z.in_support_radius(0.3));
    }

    #[test]
    fn restricted_integral_examples() {
        let mu = m1(&[(0.3, 1.0), (-0.6, 2.0)]);
        let h = RadialProfile::hat(0.2, 0.8, 0.3).unwrap();
        assert_eq!(restricted_integral_bound(&mu, &mu, &h, 1.5).unwrap().0, 0.0);
        let zero = RadialProfile::new(&[(0.2, 0.0), (0.8, 0.0)]).unwrap();
        let nu = m1(&[(0.35, 1.0)]);
        assert_eq!(restricted_integral_bound(&mu, &nu, &zero, 2.0).unwrap(), (0.0, 0.0));
        let (l, r) = restricted_integral_bound(&mu, &nu, &h, 2.0).unwrap();
        assert!(l <= r + slack(r));
    }

    fn random_ball_measure(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> DiscreteMeasure {
        let atoms = (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.57..0.57)).collect();
                Atom::new(z, rng.random_range(0.05..1.5))
            })
            .collect();
        DiscreteMeasure::new(dim, atoms).unwrap()
    }

    #[test]
    fn bounds_dominate_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..40 {
            let dim = rng.random_range(1..=3);
            let p = [1.0, 1.5, 2.0][rng.random_range(0..3)];
            let (m, n) = (rng.random_range(0..12), rng.random_range(0..12));
            let mu = random_ball_measure(&mut rng, dim, m);
            let nu = random_ball_measure(&mut rng, dim, n);
            let dist = d(&mu, &nu, p);
            let b = tv_power_bound(&mu, &nu, p).unwrap();
            assert!(b >= dist - slack(dist));
            if p == 1.0 {
                let tv = tv_distance(&weight_by_power(&mu, 1.0), &weight_by_power(&nu, 1.0)).unwrap();
                assert_eq!(b, tv);
            }
        }
    }

    #[test]
    fn sayah_pairs_are_admissible_for_p_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cost = CostSpec::new(1.0).unwrap();
        for _ in 0..30 {
            let dim = rng.random_range(1..=3);
            let mu = random_ball_measure(&mut rng, dim, 8);
            let nu = random_ball_measure(&mut rng, dim, 8);
            let dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = norm(&dir).max(1e-3);
            let k = rng.random_range(0.5..3.0);
            // 1-Lipschitz and zero at the origin: a clipped linear function
            let phi = move |z: &[f64]| {
                let t: f64 = z.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() / n;
                t.clamp(-1.0 / k, 1.0 / k)
            };
            let pair = lipschitz_dual_pair(phi, &mu, &nu);
            check_duals(&pair, &mu, &nu, cost).unwrap();
            assert!(dual_value(&pair, &mu, &nu, cost).unwrap() <= d(&mu, &nu, 1.0) + 1e-12);
        }
    }

    fn closed_form_variation(ax: f64, ay: f64, sigma: f64, s: f64) -> f64 {
        let (ax, ay) = if ax <= ay { (ax, ay) } else { (ay, ax) };
        let (rx, ry) = (ax.powf(1.0 / sigma), ay.powf(1.0 / sigma));
        s * (ax * (rx.powf(1.0 - sigma) - ry.powf(1.0 - sigma)) + (ay - ax) * (ry.powf(1.0 - sigma) - 1.0)) / (sigma - 1.0)
    }

    #[test]
    fn mutilde_examples() {
        let constant = |a: f64| FracLaplFamily::new(1, 1.5, 0.0, Arc::new(move |_: &[f64]| a)).unwrap();
        let r = mutilde_checks(&constant(0.4), &[0.0], &[0.1]).unwrap();
        assert_eq!(r.lipschitz_ratio, 0.0);
        assert!((r.mass - 2.0 / 1.5 * 0.6).abs() < 1e-10);
        assert_eq!(mutilde_checks(&constant(1.0), &[0.0], &[0.1]).unwrap().mass, 0.0);

        let two = FracLaplFamily::new(1, 1.5, 1.0, Arc::new(|x: &[f64]| if x[0] < 0.5 { 0.25 } else { 0.36 })).unwrap();
        let r = mutilde_checks(&two, &[0.0], &[1.0]).unwrap();
        let exact = closed_form_variation(0.25, 0.36, 1.5, 2.0);
        assert!((r.first_moment_variation - exact).abs() < 1e-9, "{} vs {exact}", r.first_moment_variation);
        assert!((r.mass - 2.0 / 1.5 * 0.75).abs() < 1e-9);
        // the mean-value chain bounds each of the two pieces by S/(σ-1) |r_x - r_y|
        let dr = 0.36f64.powf(1.0 / 1.5) - 0.25f64.powf(1.0 / 1.5);
        assert!(r.first_moment_variation <= 2.0 * 2.0 / 0.5 * dr);
    }
}
