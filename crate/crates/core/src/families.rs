//! x-indexed families of Lévy measures: jump kernels `K(x, z) dz`, the
//! fractional-Laplacian family `a(x)|z|^{-d-σ} dz`, and push-forwards of a
//! fixed reference measure. Densities are discretized on annular grids and
//! families are probed with regularity sweeps `d(μ̂_x, μ̂_y) / |x − y|^s`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{Atom, DiscreteMeasure, MeasureError, MeasureFile};
use crate::numeric::{dist, gauss_legendre, integrate, ksum, norm, pow_p, unit_sphere_area};
use crate::transport::{distance, TransportError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FamilyError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("invalid annular grid: {0}")]
    InvalidGrid(String),
    #[error("dimension {0} is not supported (1, 2 or 3 expected)")]
    UnsupportedDimension(usize),
    #[error("density is not finite at z = {z:?}")]
    NonFiniteDensity { z: Vec<f64> },
    #[error("order sigma = {0} is outside the admissible range {1}")]
    InvalidSigma(f64, &'static str),
    #[error("coefficient a(x) = {a} at x = {x:?} is outside (0, 1]")]
    InvalidCoefficient { x: Vec<f64>, a: f64 },
    #[error("pair {index} has x = y")]
    DegeneratePair { index: usize },
    #[error("declared bound fails at x = {x:?}, z = {z:?}: {what}")]
    BoundViolation { x: Vec<f64>, z: Vec<f64>, what: String },
    #[error("invalid family config: {0}")]
    Config(String),
}

/// Geometric radial shells times angular cells, covering `r_min <= |z| < r_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnularGrid {
    pub r_min: f64,
    pub r_max: f64,
    pub n_radial: usize,
    /// Sectors per shell in d = 2, sphere points per shell in d = 3; ignored in d = 1.
    #[serde(default = "default_n_angular")]
    pub n_angular: usize,
}

fn default_n_angular() -> usize {
    8
}

/// Gauss–Legendre points per shell (in `log r`) and per planar sector.
const RADIAL_NODES: usize = 6;
const ANGULAR_NODES: usize = 4;

/// Default inner truncation radius.
pub const DEFAULT_R_MIN: f64 = 1e-3;

impl AnnularGrid {
    pub fn new(r_min: f64, r_max: f64, n_radial: usize, n_angular: usize) -> Result<Self, FamilyError> {
        let g = Self { r_min, r_max, n_radial, n_angular };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), FamilyError> {
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.r_max.is_finite()) {
            return Err(FamilyError::InvalidGrid(format!(
                "need 0 < r_min < r_max < inf, got r_min = {}, r_max = {}",
                self.r_min, self.r_max
            )));
        }
        if self.n_radial == 0 || self.n_angular == 0 {
            return Err(FamilyError::InvalidGrid("cell counts must be positive".into()));
        }
        Ok(())
    }

    /// Shell edges `r_min q^k`, `k = 0..=n_radial`.
    pub fn edges(&self) -> Vec<f64> {
        let ratio = (self.r_max / self.r_min).ln() / self.n_radial as f64;
        let mut e: Vec<f64> = (0..=self.n_radial).map(|k| self.r_min * (ratio * k as f64).exp()).collect();
        e[0] = self.r_min;
        e[self.n_radial] = self.r_max;
        e
    }

    /// Edges with extra breakpoints inserted so no shell straddles them.
    pub fn edges_with_breaks(&self, breaks: &[f64]) -> Vec<f64> {
        let mut e = self.edges();
        e.extend(breaks.iter().copied().filter(|&b| b > self.r_min && b < self.r_max));
        e.sort_by(f64::total_cmp);
        e.dedup();
        e
    }

    /// Largest shell width.
    pub fn max_shell_width(&self) -> f64 {
        self.edges().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

/// A quadrature node on the unit sphere carrying an angular weight.
#[derive(Debug, Clone)]
struct Direction {
    theta: Vec<f64>,
    weight: f64,
}

/// Angular cells, each a list of quadrature directions.
fn angular_cells(dim: usize, n_angular: usize) -> Result<Vec<Vec<Direction>>, FamilyError> {
    match dim {
        1 => Ok(vec![
            vec![Direction { theta: vec![-1.0], weight: 1.0 }],
            vec![Direction { theta: vec![1.0], weight: 1.0 }],
        ]),
        2 => {
            let (gx, gw) = gauss_legendre(ANGULAR_NODES);
            let width = 2.0 * PI / n_angular as f64;
            Ok((0..n_angular)
                .map(|k| {
                    let mid = width * (k as f64 + 0.5);
                    gx.iter()
                        .zip(&gw)
                        .map(|(x, w)| {
                            let t = mid + 0.5 * width * x;
                            Direction { theta: vec![t.cos(), t.sin()], weight: 0.5 * width * w }
                        })
                        .collect()
                })
                .collect())
        }
        3 => {
            // Fibonacci sphere: near-uniform points, equal solid angle each.
            let n = n_angular as f64;
            let golden = PI * (3.0 - 5f64.sqrt());
            Ok((0..n_angular)
                .map(|k| {
                    let zc = 1.0 - (2.0 * k as f64 + 1.0) / n;
                    let rho = (1.0 - zc * zc).max(0.0).sqrt();
                    let phi = golden * k as f64;
                    vec![Direction { theta: vec![rho * phi.cos(), rho * phi.sin(), zc], weight: 4.0 * PI / n }]
                })
                .collect())
        }
        d => Err(FamilyError::UnsupportedDimension(d)),
    }
}

/// Discretizes the measure `f(z) dz` restricted to `edges[0] <= |z| < edges[last]`.
///
/// Each (shell, angular cell) pair yields one atom carrying the cell mass,
/// placed at the mass-weighted mean radius along the mass-weighted mean
/// direction, which keeps it inside its cell's annulus.
pub fn discretize_density<F: Fn(&[f64]) -> f64>(
    dim: usize,
    density: F,
    edges: &[f64],
    n_angular: usize,
) -> Result<DiscreteMeasure, FamilyError> {
    let cells = angular_cells(dim, n_angular)?;
    let (gx, gw) = gauss_legendre(RADIAL_NODES);
    let mut atoms = Vec::new();
    let mut z = vec![0.0; dim];
    for shell in edges.windows(2) {
        let (t0, t1) = (shell[0].ln(), shell[1].ln());
        let (tm, th) = (0.5 * (t0 + t1), 0.5 * (t1 - t0));
        let radial: Vec<(f64, f64)> = gx
            .iter()
            .zip(&gw)
            .map(|(x, w)| {
                let r = (tm + th * x).exp().clamp(shell[0], shell[1]);
                // dz = r^{d-1} dr dθ = r^d dt dθ with t = ln r
                (r, th * w * r.powi(dim as i32))
            })
            .collect();
        for cell in &cells {
            let mut mass = Vec::with_capacity(cell.len() * radial.len());
            let mut r_moment = Vec::with_capacity(mass.capacity());
            let mut dir = vec![0.0; dim];
            for d in cell {
                for &(r, wr) in &radial {
                    for (zk, tk) in z.iter_mut().zip(&d.theta) {
                        *zk = r * tk;
                    }
                    let f = density(&z);
                    if !f.is_finite() || f < 0.0 {
                        return Err(FamilyError::NonFiniteDensity { z: z.clone() });
                    }
                    let m = f * wr * d.weight;
                    mass.push(m);
                    r_moment.push(m * r);
                    for (dk, tk) in dir.iter_mut().zip(&d.theta) {
                        *dk += m * tk;
                    }
                }
            }
            let total = ksum(mass);
            if total <= 0.0 {
                continue;
            }
            let r_bar = (ksum(r_moment) / total).clamp(shell[0], shell[1]);
            let dn = norm(&dir);
            let theta: Vec<f64> = if dn > 0.0 {
                dir.iter().map(|c| c / dn).collect()
            } else {
                cell[cell.len() / 2].theta.clone()
            };
            atoms.push(Atom::new(theta.iter().map(|t| r_bar * t).collect(), total));
        }
    }
    Ok(DiscreteMeasure::new(dim, atoms)?)
}

pub type Density = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type Coefficient = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type PointMap = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type RadialWeight = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Kernel family `dμ_x(z) = K(x, z) dz` with envelope `Λ_1 |z|^{-d-σ}`.
#[derive(Clone)]
pub struct KernelFamily {
    pub dim: usize,
    pub density: Density,
    pub sigma: f64,
    pub lambda1: f64,
    /// Declared Hölder exponent of `x ↦ K(x, z)` relative to the envelope.
    pub holder_gamma: Option<f64>,
}

impl std::fmt::Debug for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelFamily")
            .field("dim", &self.dim)
            .field("sigma", &self.sigma)
            .field("lambda1", &self.lambda1)
            .field("holder_gamma", &self.holder_gamma)
            .finish()
    }
}

impl KernelFamily {
    /// `K(x, z) = (c0 + c1 sin x_1) |z|^{-d-σ}` with envelope `(|c0| + |c1|) |z|^{-d-σ}`.
    pub fn sine_modulated(dim: usize, sigma: f64, c0: f64, c1: f64) -> Self {
        let density: Density = Arc::new(move |x: &[f64], z: &[f64]| {
            (c0 + c1 * x[0].sin()) * norm(z).powf(-(dim as f64) - sigma)
        });
        Self { dim, density, sigma, lambda1: c0.abs() + c1.abs(), holder_gamma: Some(1.0) }
    }

    pub fn envelope(&self, z: &[f64]) -> f64 {
        self.lambda1 * norm(z).powf(-(self.dim as f64) - self.sigma)
    }

    /// Samples `0 <= K(x, z) <= envelope(z)` and, when a Hölder exponent is
    /// declared, `|K(x, z) − K(y, z)| <= |x − y|^γ envelope(z)`.
    pub fn validate(&self, xs: &[Vec<f64>], grid: &AnnularGrid) -> Result<(), FamilyError> {
        let zs: Vec<Vec<f64>> = discretize_density(self.dim, |_| 1.0, &grid.edges(), grid.n_angular)?
            .atoms()
            .iter()
            .map(|a| a.position.clone())
            .collect();
        let tol = 1e-12;
        for x in xs {
            for z in &zs {
                let k = (self.density)(x, z);
                let env = self.envelope(z);
                if !(k >= -tol * env && k <= env * (1.0 + tol)) {
                    return Err(FamilyError::BoundViolation {
                        x: x.clone(),
                        z: z.clone(),
                        what: format!("K = {k} outside [0, {env}]"),
                    });
                }
            }
        }
        if let Some(gamma) = self.holder_gamma {
            for x in xs {
                for y in xs {
                    let h = pow_p(dist(x, y), gamma);
                    for z in &zs {
                        let diff = ((self.density)(x, z) - (self.density)(y, z)).abs();
                        let env = self.envelope(z);
                        if diff > h * env * (1.0 + tol) + tol * env {
                            return Err(FamilyError::BoundViolation {
                                x: x.clone(),
                                z: z.clone(),
                                what: format!("Hölder bound fails against y = {y:?}"),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Discretizes `K(x, ·) dz` on `grid`.
pub fn discretize_kernel(family: &KernelFamily, x: &[f64], grid: &AnnularGrid) -> Result<DiscreteMeasure, FamilyError> {
    grid.validate()?;
    discretize_density(family.dim, |z| (family.density)(x, z), &grid.edges(), grid.n_angular)
}

/// `∫_{|z| < r} |z|^p K(x, z) dz`, by radial quadrature along every
/// angular node.
pub fn kernel_inner_cost(family: &KernelFamily, x: &[f64], r: f64, p: f64, n_angular: usize) -> Result<f64, FamilyError> {
    let cells = angular_cells(family.dim, n_angular)?;
    let d = family.dim as i32;
    let mut total = Vec::new();
    for dir in cells.iter().flatten() {
        let f = |t: f64| {
            if t <= 0.0 {
                return 0.0;
            }
            let z: Vec<f64> = dir.theta.iter().map(|c| c * t).collect();
            pow_p(t, p) * t.powi(d - 1) * (family.density)(x, &z)
        };
        let v = integrate(f, 0.0, r, 1e-12).value;
        total.push(v * dir.weight);
    }
    let v = ksum(total);
    Ok(if v.is_finite() { v } else { f64::INFINITY })
}

/// Fractional-Laplacian family `dμ_x(z) = a(x) |z|^{-d-σ} dz`, `σ ∈ (1, 2)`.
#[derive(Clone)]
pub struct FracLaplFamily {
    pub dim: usize,
    pub a: Coefficient,
    pub sigma: f64,
    /// Lipschitz constant of `x ↦ a(x)^{1/σ}`.
    pub lipschitz_l: f64,
}

impl std::fmt::Debug for FracLaplFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FracLaplFamily")
            .field("dim", &self.dim)
            .field("sigma", &self.sigma)
            .field("lipschitz_l", &self.lipschitz_l)
            .finish()
    }
}

impl FracLaplFamily {
    pub fn new(dim: usize, sigma: f64, lipschitz_l: f64, a: Coefficient) -> Result<Self, FamilyError> {
        if !(sigma > 1.0 && sigma < 2.0) {
            return Err(FamilyError::InvalidSigma(sigma, "(1, 2)"));
        }
        if !(1..=3).contains(&dim) {
            return Err(FamilyError::UnsupportedDimension(dim));
        }
        Ok(Self { dim, a, sigma, lipschitz_l })
    }

    /// `a(x) = (b0 + b1 sin x_1)^σ`, so `a^{1/σ}` is `|b1|`-Lipschitz.
    pub fn sine_radius(dim: usize, sigma: f64, b0: f64, b1: f64) -> Result<Self, FamilyError> {
        let a: Coefficient = Arc::new(move |x: &[f64]| (b0 + b1 * x[0].sin()).max(0.0).powf(sigma));
        Self::new(dim, sigma, b1.abs(), a)
    }

    /// `a(x)`, checked to lie in `[0, 1]`.
    pub fn coefficient(&self, x: &[f64]) -> Result<f64, FamilyError> {
        let a = (self.a)(x);
        if !(0.0..=1.0).contains(&a) {
            return Err(FamilyError::InvalidCoefficient { x: x.to_vec(), a });
        }
        Ok(a)
    }

    /// `r_x = a(x)^{1/σ}`.
    pub fn radius(&self, x: &[f64]) -> Result<f64, FamilyError> {
        Ok(self.coefficient(x)?.powf(1.0 / self.sigma))
    }

    /// Sampled check of `|a(x)^{1/σ} − a(y)^{1/σ}| <= L |x − y|`.
    pub fn check_lipschitz(&self, xs: &[Vec<f64>]) -> Result<(), FamilyError> {
        for x in xs {
            let rx = self.radius(x)?;
            for y in xs {
                let ry = self.radius(y)?;
                if (rx - ry).abs() > self.lipschitz_l * dist(x, y) * (1.0 + 1e-12) + 1e-15 {
                    return Err(FamilyError::BoundViolation {
                        x: x.clone(),
                        z: y.clone(),
                        what: format!("|r_x - r_y| = {} exceeds L|x - y|", (rx - ry).abs()),
                    });
                }
            }
        }
        Ok(())
    }

    fn radial_density(&self, a: f64) -> impl Fn(&[f64]) -> f64 {
        let e = -(self.dim as f64) - self.sigma;
        move |z: &[f64]| a * norm(z).powf(e)
    }
}

/// The three pieces `μ̂ = μ|_{B_{r_x}}`, `μ̃ = μ|_{B_1 \ B_{r_x}}`, `μ̌ = μ|_{B_1^c}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FracLaplSplit {
    pub hat: DiscreteMeasure,
    pub tilde: DiscreteMeasure,
    pub check: DiscreteMeasure,
    pub r_x: f64,
}

/// Discretizes `μ_x` on `grid` with shells cut at `r_x` and 1, then splits.
pub fn split_fraclap(family: &FracLaplFamily, x: &[f64], grid: &AnnularGrid) -> Result<FracLaplSplit, FamilyError> {
    grid.validate()?;
    let a = family.coefficient(x)?;
    let r_x = a.powf(1.0 / family.sigma);
    let dim = family.dim;
    if a == 0.0 {
        let e = DiscreteMeasure::empty(dim);
        return Ok(FracLaplSplit { hat: e.clone(), tilde: e.clone(), check: e, r_x });
    }
    let edges = grid.edges_with_breaks(&[r_x, 1.0]);
    let full = discretize_density(dim, family.radial_density(a), &edges, grid.n_angular)?;
    // Atoms sit strictly inside their shells, so cutting by radius is exact.
    let hat = full.restrict_inside(r_x);
    let check = crate::measures::restrict_outside(&full, 1.0);
    let tilde = crate::measures::restrict_outside(&full.restrict_inside(1.0), r_x);
    Ok(FracLaplSplit { hat, tilde, check, r_x })
}

/// Discretization of the reference measure `|z|^{-d-σ} χ_{B_1} dz` truncated
/// at `grid.r_min`; `μ̂_x` is its push-forward under `z ↦ a(x)^{1/σ} z`.
pub fn fraclap_reference(family: &FracLaplFamily, grid: &AnnularGrid) -> Result<DiscreteMeasure, FamilyError> {
    grid.validate()?;
    let edges = grid.edges_with_breaks(&[1.0]);
    let inside: Vec<f64> = edges.into_iter().filter(|&r| r <= 1.0).collect();
    if inside.len() < 2 {
        return Ok(DiscreteMeasure::empty(family.dim));
    }
    discretize_density(family.dim, family.radial_density(1.0), &inside, grid.n_angular)
}

/// `μ̂_x = (T_x)_# μ` with `T_x(z) = a(x)^{1/σ} z`.
pub fn fraclap_hat(family: &FracLaplFamily, x: &[f64], reference: &DiscreteMeasure) -> Result<DiscreteMeasure, FamilyError> {
    let r = family.radius(x)?;
    Ok(reference.map_positions(family.dim, |z| z.iter().map(|c| r * c).collect()))
}

/// Push-forward family `μ_x = (T_x)_# μ` of a fixed discrete reference.
#[derive(Clone)]
pub struct LevyItoFamily {
    pub base: DiscreteMeasure,
    pub map: PointMap,
    /// `ρ` in `|T_x(z)| <= C ρ(z)` and `|T_x(z) − T_y(z)| <= C ρ(z) |x − y|`.
    pub rho: RadialWeight,
    pub c: f64,
}

impl std::fmt::Debug for LevyItoFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LevyItoFamily").field("base", &self.base).field("c", &self.c).finish()
    }
}

impl LevyItoFamily {
    /// Checks the declared `ρ` bounds on every base atom for all sampled pairs.
    pub fn validate(&self, xs: &[Vec<f64>]) -> Result<(), FamilyError> {
        for x in xs {
            for a in self.base.atoms() {
                let tx = (self.map)(x, &a.position);
                let bound = self.c * (self.rho)(&a.position);
                if norm(&tx) > bound * (1.0 + 1e-12) + 1e-15 {
                    return Err(FamilyError::BoundViolation {
                        x: x.clone(),
                        z: a.position.clone(),
                        what: format!("|T_x(z)| = {} > C rho(z) = {bound}", norm(&tx)),
                    });
                }
                for y in xs {
                    let ty = (self.map)(y, &a.position);
                    let lhs = dist(&tx, &ty);
                    if lhs > bound * dist(x, y) * (1.0 + 1e-12) + 1e-15 {
                        return Err(FamilyError::BoundViolation {
                            x: x.clone(),
                            z: a.position.clone(),
                            what: format!("|T_x(z) - T_y(z)| = {lhs} against y = {y:?}"),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// `(T_x)_# base`; images at the origin are absorbed by the reservoir.
pub fn pushforward(family: &LevyItoFamily, x: &[f64]) -> DiscreteMeasure {
    let dim = family.base.dim();
    family.base.map_positions(dim, |z| (family.map)(x, z))
}

/// Something that produces a measure for every `x`, with a split into the
/// part inside the unit ball used by regularity sweeps.
pub trait MeasureFamily: Send + Sync {
    fn x_dim(&self) -> usize;
    fn measure(&self, x: &[f64]) -> Result<DiscreteMeasure, FamilyError>;
    /// Defaults to the restriction of [`MeasureFamily::measure`] to `B_1`.
    fn hat(&self, x: &[f64]) -> Result<DiscreteMeasure, FamilyError> {
        Ok(self.measure(x)?.restrict_inside(1.0))
    }
    /// `p`-cost of the mass dropped by the discretization near the origin.
    fn truncation_cost(&self, _x: &[f64], _p: f64) -> Result<f64, FamilyError> {
        Ok(0.0)
    }
}

/// A kernel family bound to a grid.
#[derive(Debug, Clone)]
pub struct KernelSampler {
    pub family: KernelFamily,
    pub grid: AnnularGrid,
}

impl MeasureFamily for KernelSampler {
    fn x_dim(&self) -> usize {
        self.family.dim
    }
    fn measure(&self, x: &[f64]) -> Result<DiscreteMeasure, FamilyError> {
        discretize_kernel(&self.family, x, &self.grid)
    }
    fn truncation_cost(&self, x: &[f64], p: f64) -> Result<f64, FamilyError> {
        kernel_inner_cost(&self.family, x, self.grid.r_min, p, self.grid.n_angular)
    }
}

/// A fractional-Laplacian family bound to a grid; `hat` is the scaled
/// reference measure.
#[derive(Debug, Clone)]
pub struct FracLaplSampler {
    pub family: FracLaplFamily,
    pub grid: AnnularGrid,
    reference: DiscreteMeasure,
}

impl FracLaplSampler {
    pub fn new(family: FracLaplFamily, grid: AnnularGrid) -> Result<Self, FamilyError> {
        let reference = fraclap_reference(&family, &grid)?;
        Ok(Self { family, grid, reference })
    }

    pub fn reference(&self) -> &DiscreteMeasure {
        &self.reference
    }
}

impl MeasureFamily for FracLaplSampler {
    fn x_dim(&self) -> usize {
        self.family.dim
    }
    fn measure(&self, x: &[f64]) -> Result<DiscreteMeasure, FamilyError> {
        let s = split_fraclap(&self.family, x, &self.grid)?;
        Ok(s.hat.add(&s.tilde)?.add(&s.check)?)
    }
    fn hat(&self, x: &[f64]) -> Result<DiscreteMeasure, FamilyError> {
        fraclap_hat(&self.family, x, &self.reference)
    }
    /// `∫_{|z| < r_x r_min} |z|^p a(x)|z|^{-d-σ} dz`, infinite when `p <= σ`.
    fn truncation_cost(&self, x: &[f64], p: f64) -> Result<f64, FamilyError> {
        let a = self.family.coefficient(x)?;
        if a == 0.0 {
            return Ok(0.0);
        }
        let s = self.family.sigma;
        if p <= s {
            return Ok(f64::INFINITY);
        }
        let r = a.powf(1.0 / s) * self.grid.r_min;
        Ok(unit_sphere_area(self.family.dim) * a * r.powf(p - s) / (p - s))
    }
}

impl MeasureFamily for LevyItoFamily {
    fn x_dim(&self) -> usize {
        self.base.dim()
    }
    fn measure(&self, x: &[f64]) -> Result<DiscreteMeasure, FamilyError> {
        Ok(pushforward(self, x))
    }
}

/// One row of a regularity sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dist_xy: f64,
    pub distance: f64,
    pub ratio: f64,
    /// Larger of the two truncation `p`-costs at `x` and `y`.
    pub truncation_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub p: f64,
    pub s: f64,
    pub max_ratio: f64,
    pub rows: Vec<SweepRow>,
}

/// `ratio_k = d_p(μ̂_{x_k}, μ̂_{y_k}) / |x_k − y_k|^s` for every pair, in
/// parallel with rows kept in input order.
pub fn regularity_sweep<F>(family: &F, pairs: &[(Vec<f64>, Vec<f64>)], p: f64, s: f64) -> Result<SweepReport, FamilyError>
where
    F: MeasureFamily + ?Sized,
{
    if let Some(index) = pairs.iter().position(|(x, y)| x == y) {
        return Err(FamilyError::DegeneratePair { index });
    }
    let rows: Vec<SweepRow> = pairs
        .par_iter()
        .map(|(x, y)| {
            let (mx, my) = (family.hat(x)?, family.hat(y)?);
            let d = distance(&mx, &my, p)?;
            let dxy = dist(x, y);
            let tc = family.truncation_cost(x, p)?.max(family.truncation_cost(y, p)?);
            Ok(SweepRow { x: x.clone(), y: y.clone(), dist_xy: dxy, distance: d, ratio: d / dxy.powf(s), truncation_cost: tc })
        })
        .collect::<Result<_, FamilyError>>()?;
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(SweepReport { p, s, max_ratio, rows })
}

/// Sweep pairs `(x, x + δ e)`: `δ` log-spaced over `[delta_min, delta_max]`,
/// `x` uniform in `[-1, 1]^d`, `e` a uniform random unit vector.
pub fn sweep_pairs(dim: usize, n: usize, seed: u64, delta_min: f64, delta_max: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let t = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
            let delta = delta_min * (delta_max / delta_min).powf(t);
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let e = loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let n = norm(&v);
                if n > 1e-12 {
                    break v.into_iter().map(|c| c / n).collect::<Vec<f64>>();
                }
            };
            let y = x.iter().zip(&e).map(|(a, b)| a + delta * b).collect();
            (x, y)
        })
        .collect()
}

/// Empirical modulus `θ(r) = sup_x ∫_{B_r} |z|^p dμ_x` over sample points,
/// evaluated on the discretized measures.
pub fn theta_curve<F>(family: &F, xs: &[Vec<f64>], radii: &[f64], p: f64) -> Result<Vec<(f64, f64)>, FamilyError>
where
    F: MeasureFamily + ?Sized,
{
    let measures: Vec<DiscreteMeasure> = xs.iter().map(|x| family.measure(x)).collect::<Result<_, _>>()?;
    Ok(radii
        .iter()
        .map(|&r| {
            let sup = measures.iter().map(|m| m.restrict_inside(r).moment(p)).fold(0.0, f64::max);
            (r, sup)
        })
        .collect())
}

/// JSON family descriptor used by the command line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub grid: Option<AnnularGrid>,
}

fn param(v: &serde_json::Value, key: &str) -> Result<f64, FamilyError> {
    v.get(key)
        .and_then(|x| x.as_f64())
        .ok_or_else(|| FamilyError::Config(format!("missing numeric parameter `{key}`")))
}

fn param_or(v: &serde_json::Value, key: &str, default: f64) -> Result<f64, FamilyError> {
    match v.get(key) {
        None => Ok(default),
        Some(_) => param(v, key),
    }
}

fn param_dim(v: &serde_json::Value) -> Result<usize, FamilyError> {
    match v.get("dim") {
        None => Ok(1),
        Some(d) => d
            .as_u64()
            .map(|d| d as usize)
            .ok_or_else(|| FamilyError::Config("`dim` must be a positive integer".into())),
    }
}

impl FamilyConfig {
    pub fn from_json_str(text: &str) -> Result<Self, FamilyError> {
        serde_json::from_str(text).map_err(|e| {
            FamilyError::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    fn grid(&self) -> Result<AnnularGrid, FamilyError> {
        let g = self.grid.clone().unwrap_or(AnnularGrid {
            r_min: DEFAULT_R_MIN,
            r_max: 1.0,
            n_radial: 200,
            n_angular: default_n_angular(),
        });
        g.validate()?;
        Ok(g)
    }

    /// Builds the family described by the config.
    ///
    /// * `kernel`: `K(x, z) = (c0 + c1 sin x_1) |z|^{-d-σ}`, params `dim`, `c0`, `c1`.
    /// * `fraclap`: `a(x) = (b0 + b1 sin x_1)^σ`, params `dim`, `b0`, `b1`.
    /// * `levyito`: params `base` (measure JSON), `map` (`"scale"` with
    ///   `m0`, `m1`: `T_x(z) = (m0 + m1 sin x_1) z`; or `"shift"` with vector
    ///   `m`: `T_x(z) = z + m x_1`).
    pub fn build(&self) -> Result<Box<dyn MeasureFamily>, FamilyError> {
        let p = &self.params;
        match self.kind.as_str() {
            "kernel" => {
                let sigma = self.sigma.ok_or_else(|| FamilyError::Config("kernel needs `sigma`".into()))?;
                if !(sigma > 0.0 && sigma < 2.0) {
                    return Err(FamilyError::InvalidSigma(sigma, "(0, 2)"));
                }
                let dim = param_dim(p)?;
                if !(1..=3).contains(&dim) {
                    return Err(FamilyError::UnsupportedDimension(dim));
                }
                let mut family = KernelFamily::sine_modulated(dim, sigma, param_or(p, "c0", 1.0)?, param_or(p, "c1", 0.0)?);
                family.holder_gamma = self.gamma.or(family.holder_gamma);
                Ok(Box::new(KernelSampler { family, grid: self.grid()? }))
            }
            "fraclap" => {
                let sigma = self.sigma.ok_or_else(|| FamilyError::Config("fraclap needs `sigma`".into()))?;
                let family = FracLaplFamily::sine_radius(param_dim(p)?, sigma, param_or(p, "b0", 0.5)?, param_or(p, "b1", 0.25)?)?;
                Ok(Box::new(FracLaplSampler::new(family, self.grid()?)?))
            }
            "levyito" => {
                let base_v = p.get("base").ok_or_else(|| FamilyError::Config("levyito needs `base`".into()))?;
                let base_file: MeasureFile = serde_json::from_value(base_v.clone())
                    .map_err(|e| FamilyError::Config(format!("base measure: {e}")))?;
                let base = base_file.into_measure()?;
                let kind = p.get("map").and_then(|m| m.as_str()).unwrap_or("scale");
                let (map, c): (PointMap, f64) = match kind {
                    "scale" => {
                        let (m0, m1) = (param_or(p, "m0", 1.0)?, param_or(p, "m1", 0.0)?);
                        (
                            Arc::new(move |x: &[f64], z: &[f64]| z.iter().map(|c| (m0 + m1 * x[0].sin()) * c).collect()),
                            m0.abs() + m1.abs(),
                        )
                    }
                    "shift" => {
                        let m: Vec<f64> = p
                            .get("m")
                            .and_then(|m| m.as_array())
                            .ok_or_else(|| FamilyError::Config("shift map needs vector `m`".into()))?
                            .iter()
                            .map(|c| c.as_f64().ok_or_else(|| FamilyError::Config("`m` must be numeric".into())))
                            .collect::<Result<_, _>>()?;
                        if m.len() != base.dim() {
                            return Err(FamilyError::Config("`m` must match the base dimension".into()));
                        }
                        let c = norm(&m).max(1.0);
                        (Arc::new(move |x: &[f64], z: &[f64]| z.iter().zip(&m).map(|(zi, mi)| zi + mi * x[0]).collect()), c)
                    }
                    other => return Err(FamilyError::Config(format!("unknown map kind `{other}`"))),
                };
                Ok(Box::new(LevyItoFamily { base, map, rho: Arc::new(|_: &[f64]| 1.0), c }))
            }
            other => Err(FamilyError::Config(format!("unknown family type `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::distance;

    fn grid(n: usize) -> AnnularGrid {
        AnnularGrid::new(1e-3, 1.0, n, 8).unwrap()
    }

    #[test]
    fn zero_kernel_gives_empty_measure() {
        let fam = KernelFamily::sine_modulated(1, 0.5, 0.0, 0.0);
        assert!(discretize_kernel(&fam, &[0.3], &grid(10)).unwrap().is_empty());
    }

    #[test]
    fn kernel_mass_matches_antiderivative() {
        let sigma = 0.5;
        let fam = KernelFamily::sine_modulated(1, sigma, 1.0, 0.0);
        let m = discretize_kernel(&fam, &[0.0], &grid(400)).unwrap();
        let exact = 2.0 / sigma * (1e-3f64.powf(-sigma) - 1.0);
        assert!((m.total_mass() / exact - 1.0).abs() < 1e-3);
    }

    #[test]
    fn x_independent_kernel_is_x_independent() {
        let fam = KernelFamily::sine_modulated(2, 0.7, 1.0, 0.0);
        let g = grid(20);
        assert_eq!(discretize_kernel(&fam, &[0.1, 0.2], &g).unwrap(), discretize_kernel(&fam, &[-0.9, 0.5], &g).unwrap());
    }

    #[test]
    fn atoms_stay_inside_their_shells() {
        for dim in 1..=3 {
            let fam = KernelFamily::sine_modulated(dim, 0.5, 1.0, 0.5);
            let g = AnnularGrid::new(0.01, 1.0, 12, 6).unwrap();
            let edges = g.edges();
            let m = discretize_kernel(&fam, &[0.4; 3][..dim], &g).unwrap();
            assert_eq!(m.len(), 12 * if dim == 1 { 2 } else { 6 });
            for a in m.atoms() {
                let r = a.radius();
                assert!(edges.windows(2).any(|w| r >= w[0] && r <= w[1]));
            }
        }
    }

    #[test]
    fn three_dimensional_mass() {
        // ∫_{r_min}^{1} S r^{d-1} r^{-d-σ} dr = 4π (r_min^{-σ} - 1) / σ
        let fam = KernelFamily::sine_modulated(3, 0.5, 1.0, 0.0);
        let m = discretize_kernel(&fam, &[0.0], &AnnularGrid::new(0.01, 1.0, 50, 20).unwrap()).unwrap();
        let exact = 4.0 * PI * (0.01f64.powf(-0.5) - 1.0) / 0.5;
        assert!((m.total_mass() / exact - 1.0).abs() < 1e-10);
    }

    #[test]
    fn refinement_moves_the_measure_less_and_less() {
        let fam = KernelFamily::sine_modulated(1, 0.5, 1.0, 0.3);
        let fine = discretize_kernel(&fam, &[0.2], &grid(800)).unwrap();
        let ds: Vec<f64> = [25, 50, 100]
            .iter()
            .map(|&n| distance(&discretize_kernel(&fam, &[0.2], &grid(n)).unwrap(), &fine, 1.0).unwrap())
            .collect();
        assert!(ds[0] > ds[1] && ds[1] > ds[2], "{ds:?}");
    }

    #[test]
    fn kernel_validation() {
        let g = grid(20);
        let xs: Vec<Vec<f64>> = (0..5).map(|k| vec![-1.0 + 0.5 * k as f64]).collect();
        KernelFamily::sine_modulated(1, 0.5, 1.0, 0.5).validate(&xs, &g).unwrap();
        let mut bad = KernelFamily::sine_modulated(1, 0.5, 1.0, 0.5);
        bad.lambda1 = 1.0;
        assert!(bad.validate(&xs, &g).is_err());
    }

    fn closed_form_shell_mass(a: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
        // d = 1: two rays, ∫_lo^hi a r^{-1-σ} dr each
        2.0 * a * (lo.powf(-sigma) - hi.powf(-sigma)) / sigma
    }

    #[test]
    fn fraclap_split_pieces() {
        let fam = FracLaplFamily::new(1, 1.5, 1.0, Arc::new(|_: &[f64]| 0.25)).unwrap();
        let g = AnnularGrid::new(1e-3, 4.0, 60, 1).unwrap();
        let s = split_fraclap(&fam, &[0.0], &g).unwrap();
        assert!((s.r_x - 0.25f64.powf(2.0 / 3.0)).abs() < 1e-15);
        assert!((s.r_x - 0.3969).abs() < 1e-4);
        assert!(s.hat.atoms().iter().all(|a| a.radius() < s.r_x));
        assert!(s.tilde.atoms().iter().all(|a| a.radius() >= s.r_x && a.radius() < 1.0));
        assert!(s.check.atoms().iter().all(|a| a.radius() >= 1.0));
        let tol = 1e-10;
        assert!((s.hat.total_mass() / closed_form_shell_mass(0.25, 1.5, 1e-3, s.r_x) - 1.0).abs() < tol);
        assert!((s.tilde.total_mass() / closed_form_shell_mass(0.25, 1.5, s.r_x, 1.0) - 1.0).abs() < tol);
        assert!((s.check.total_mass() / closed_form_shell_mass(0.25, 1.5, 1.0, 4.0) - 1.0).abs() < tol);
        // tilde mass is (S/σ)(1 - a) apart from nothing: its shells start at r_x
        assert!((s.tilde.total_mass() - 2.0 / 1.5 * (1.0 - 0.25)).abs() < 1e-9);
    }

    #[test]
    fn fraclap_limits() {
        let g = AnnularGrid::new(1e-3, 2.0, 40, 1).unwrap();
        let one = FracLaplFamily::new(1, 1.5, 0.0, Arc::new(|_: &[f64]| 1.0)).unwrap();
        assert!(split_fraclap(&one, &[0.0], &g).unwrap().tilde.is_empty());
        let tiny = FracLaplFamily::new(1, 1.5, 0.0, Arc::new(|_: &[f64]| 1e-12)).unwrap();
        assert!(split_fraclap(&tiny, &[0.0], &g).unwrap().hat.total_mass() <= 1e-9);
        assert!(FracLaplFamily::new(1, 0.5, 0.0, Arc::new(|_: &[f64]| 1.0)).is_err());
    }

    #[test]
    fn fraclap_hat_is_scaled_reference() {
        let fam = FracLaplFamily::sine_radius(1, 1.5, 0.5, 0.25).unwrap();
        let sampler = FracLaplSampler::new(fam.clone(), grid(100)).unwrap();
        let x = [0.3];
        let hat = sampler.hat(&x).unwrap();
        let r = fam.radius(&x).unwrap();
        assert!(hat.atoms().iter().all(|a| a.radius() < r));
        // mass of a|z|^{-1-σ} on [r r_min, r) equals the reference mass times r^{-σ} a = reference mass
        let expected = sampler.reference().total_mass();
        assert!((hat.total_mass() - expected).abs() < 1e-9 * expected);
        fam.check_lipschitz(&(0..9).map(|k| vec![-1.0 + 0.25 * k as f64]).collect::<Vec<_>>()).unwrap();
    }

    #[test]
    fn pushforward_examples() {
        let base = DiscreteMeasure::from_1d(&[(1.0, 3.0)]).unwrap();
        let fam = |map: PointMap| LevyItoFamily { base: base.clone(), map, rho: Arc::new(|_: &[f64]| 1.0), c: 2.0 };
        assert_eq!(pushforward(&fam(Arc::new(|_: &[f64], z: &[f64]| z.to_vec())), &[0.0]), base);
        assert_eq!(
            pushforward(&fam(Arc::new(|_: &[f64], z: &[f64]| vec![2.0 * z[0]])), &[0.0]),
            DiscreteMeasure::from_1d(&[(2.0, 3.0)]).unwrap()
        );
        assert!(pushforward(&fam(Arc::new(|_: &[f64], _: &[f64]| vec![0.0])), &[0.0]).is_empty());
    }

    #[test]
    fn sweep_of_constant_and_translation_families() {
        let constant = KernelSampler { family: KernelFamily::sine_modulated(1, 0.5, 1.0, 0.0), grid: grid(30) };
        let pairs = sweep_pairs(1, 6, 1, 1e-3, 0.5);
        let r = regularity_sweep(&constant, &pairs, 1.0, 1.0).unwrap();
        assert!(r.rows.iter().all(|row| row.ratio == 0.0));

        let m = 0.1;
        let base = DiscreteMeasure::from_1d(&[(0.4, 1.0)]).unwrap();
        let tr = LevyItoFamily {
            base,
            map: Arc::new(move |x: &[f64], z: &[f64]| vec![z[0] + m * x[0]]),
            rho: Arc::new(|_: &[f64]| 1.0),
            c: 1.0,
        };
        let small: Vec<_> = pairs.iter().filter(|(x, y)| dist(x, y) < 0.05).cloned().collect();
        for p in [1.0, 1.5, 2.0] {
            let r = regularity_sweep(&tr, &small, p, 1.0).unwrap();
            for row in &r.rows {
                assert!((row.ratio - m).abs() < 1e-9, "{row:?}");
            }
        }
        assert!(matches!(
            regularity_sweep(&tr, &[(vec![0.1], vec![0.1])], 1.0, 1.0),
            Err(FamilyError::DegeneratePair { index: 0 })
        ));
    }

    #[test]
    fn sweep_pairs_are_seeded_and_span_the_range() {
        let a = sweep_pairs(2, 10, 4, 1e-3, 0.5);
        assert_eq!(a, sweep_pairs(2, 10, 4, 1e-3, 0.5));
        assert!((dist(&a[0].0, &a[0].1) - 1e-3).abs() < 1e-12);
        assert!((dist(&a[9].0, &a[9].1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn theta_curve_is_monotone() {
        let s = KernelSampler { family: KernelFamily::sine_modulated(1, 0.5, 1.0, 0.5), grid: grid(50) };
        let xs = vec![vec![0.0], vec![1.0]];
        let c = theta_curve(&s, &xs, &[0.01, 0.1, 0.5, 1.0], 1.0).unwrap();
        assert!(c.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn kernel_truncation_cost() {
        // ∫_{|z|<r} |z| |z|^{-1.5} dz in d = 1 is 2 · 2 r^{1/2}
        let fam = KernelFamily::sine_modulated(1, 0.5, 1.0, 0.0);
        let v = kernel_inner_cost(&fam, &[0.0], 1e-3, 1.0, 1).unwrap();
        assert!((v - 4.0 * 1e-3f64.sqrt()).abs() < 1e-8, "{v}");
    }

    #[test]
    fn config_round_trip() {
        let cfg = FamilyConfig::from_json_str(
            r#"{"type":"kernel","sigma":0.5,"params":{"dim":1,"c0":1,"c1":0.5},"grid":{"r_min":0.001,"r_max":1,"n_radial":20,"n_angular":4}}"#,
        )
        .unwrap();
        let fam = cfg.build().unwrap();
        assert_eq!(fam.x_dim(), 1);
        assert!(!fam.hat(&[0.0]).unwrap().is_empty());
        assert!(FamilyConfig::from_json_str(r#"{"type":"nope"}"#).unwrap().build().is_err());
        assert!(FamilyConfig::from_json_str(r#"{"type":"kernel","bogus":1}"#).is_err());
        let shift = FamilyConfig::from_json_str(
            r#"{"type":"levyito","params":{"base":{"dim":1,"atoms":[{"z":[0.4],"w":1}]},"map":"shift","m":[0.1]}}"#,
        )
        .unwrap()
        .build()
        .unwrap();
        assert_eq!(shift.measure(&[1.0]).unwrap(), DiscreteMeasure::from_1d(&[(0.5, 1.0)]).unwrap());
    }
}
