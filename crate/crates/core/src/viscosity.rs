//! Grid-function machinery for comparison-principle experiments:
//! sup/inf-convolutions, the smoothed penalty `ψ_κ`, nonlocal operator
//! evaluation, doubling of variables and the transport coupling inequality.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{decompose, tv_distance, DiscreteMeasure, MeasureError};
use crate::numeric::{dist, ksum, norm, pow_p};
use crate::transport::{solve, CostSpec, TransportError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ViscosityError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid value {index} is not finite")]
    NonFinite { index: usize },
    #[error("grids differ in origin, spacing or shape")]
    IncompatibleGrids,
    #[error("invalid penalization: {0}")]
    InvalidPenalization(String),
    #[error("delta = {0} must be positive")]
    InvalidDelta(f64),
    #[error("invalid equation: {0}")]
    InvalidEquation(String),
    #[error("({x_index}, {y_index}) is not a grid maximum: w = {value}, max = {max}")]
    NotGridMax { x_index: usize, y_index: usize, value: f64, max: f64 },
    #[error("atom {index} of {which} has |z| = {radius} >= 1")]
    OutsideUnitBall { which: &'static str, index: usize, radius: f64 },
    #[error("linear system is singular")]
    Singular,
}

/// Values on the nodes `lo + h·k`, `0 <= k_i < shape_i`, stored with the last
/// axis fastest. Off-node values come from multilinear interpolation and
/// outside the box from the nearest boundary point (constant continuation).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFunction {
    lo: Vec<f64>,
    h: f64,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    lo: Vec<f64>,
    h: f64,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl<'de> Deserialize<'de> for GridFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = GridFile::deserialize(d)?;
        GridFunction::new(f.lo, f.h, f.shape, f.values).map_err(serde::de::Error::custom)
    }
}

impl GridFunction {
    pub fn new(lo: Vec<f64>, h: f64, shape: Vec<usize>, values: Vec<f64>) -> Result<Self, ViscosityError> {
        if lo.is_empty() || lo.len() != shape.len() {
            return Err(ViscosityError::InvalidGrid(format!("origin has {} axes, shape has {}", lo.len(), shape.len())));
        }
        if !(h > 0.0 && h.is_finite()) || lo.iter().any(|c| !c.is_finite()) {
            return Err(ViscosityError::InvalidGrid(format!("bad spacing {h} or origin {lo:?}")));
        }
        if shape.contains(&0) {
            return Err(ViscosityError::InvalidGrid("empty axis".into()));
        }
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(ViscosityError::InvalidGrid(format!("{} values for {len} nodes", values.len())));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(ViscosityError::NonFinite { index });
        }
        Ok(Self { lo, h, shape, values })
    }

    /// Samples `f` at every node.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(lo: Vec<f64>, h: f64, shape: Vec<usize>, f: F) -> Result<Self, ViscosityError> {
        let probe = Self::new(lo.clone(), h, shape.clone(), vec![0.0; shape.iter().product()])?;
        let values = (0..probe.len()).map(|k| f(&probe.node(k))).collect();
        Self::new(lo, h, shape, values)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            idx[k] = flat % self.shape[k];
            flat /= self.shape[k];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).iter().zip(&self.lo).map(|(&i, &l)| l + self.h * i as f64).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.lo == other.lo && self.h == other.h && self.shape == other.shape
    }

    /// Same grid, values transformed pointwise.
    pub fn map_values<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        Self { lo: self.lo.clone(), h: self.h, shape: self.shape.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self { lo: self.lo.clone(), h: self.h, shape: self.shape.clone(), values }
    }

    /// Multilinear interpolation after projecting `x` onto the box.
    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "point has the wrong dimension");
        let d = self.dim();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            let n = self.shape[k];
            let t = ((x[k] - self.lo[k]) / self.h).clamp(0.0, (n - 1) as f64);
            let i = (t.floor() as usize).min(n.saturating_sub(2));
            base[k] = i;
            frac[k] = if n == 1 { 0.0 } else { t - i as f64 };
        }
        let mut acc = 0.0;
        let mut idx = vec![0usize; d];
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            for k in 0..d {
                let up = (corner >> k) & 1 == 1;
                if up && self.shape[k] == 1 {
                    weight = 0.0;
                    break;
                }
                idx[k] = base[k] + up as usize;
                weight *= if up { frac[k] } else { 1.0 - frac[k] };
            }
            if weight != 0.0 {
                acc += weight * self.values[self.flat_index(&idx)];
            }
        }
        acc
    }

    /// Second central difference along `axis` at an interior node, divided
    /// by `h²`; `None` on the boundary of that axis.
    pub fn second_difference(&self, flat: usize, axis: usize) -> Option<f64> {
        let mut idx = self.multi_index(flat);
        let i = idx[axis];
        if i == 0 || i + 1 >= self.shape[axis] {
            return None;
        }
        idx[axis] = i - 1;
        let lower = self.values[self.flat_index(&idx)];
        idx[axis] = i + 1;
        let upper = self.values[self.flat_index(&idx)];
        Some((upper - 2.0 * self.values[flat] + lower) / (self.h * self.h))
    }
}

/// Anything that can be evaluated at a point of `R^d`.
pub trait ScalarField {
    fn value_at(&self, x: &[f64]) -> f64;
}

impl ScalarField for GridFunction {
    fn value_at(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }
}

impl<F: Fn(&[f64]) -> f64> ScalarField for F {
    fn value_at(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Doubling penalty `(1/ε) ψ_κ(x − y)` with exponent `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenalizationSpec {
    pub epsilon: f64,
    pub kappa: f64,
    pub p: f64,
}

impl PenalizationSpec {
    pub fn new(epsilon: f64, kappa: f64, p: f64) -> Result<Self, ViscosityError> {
        let s = Self { epsilon, kappa, p };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ViscosityError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(ViscosityError::InvalidPenalization(format!("epsilon = {} must be positive", self.epsilon)));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(ViscosityError::InvalidPenalization(format!("kappa = {} outside (0, 1)", self.kappa)));
        }
        if !(1.0..=2.0).contains(&self.p) {
            return Err(ViscosityError::InvalidPenalization(format!("p = {} outside [1, 2]", self.p)));
        }
        Ok(())
    }
}

fn psi_radial(r2: f64, kappa: f64, p: f64) -> f64 {
    if p == 2.0 {
        return r2;
    }
    // κ^{p/2} ((1 + r²/κ)^{p/2} − 1) without cancellation for small r
    kappa.powf(0.5 * p) * (0.5 * p * (r2 / kappa).ln_1p()).exp_m1()
}

/// `ψ_κ(x) = (κ + |x|²)^{p/2} − κ^{p/2}`.
pub fn psi_kappa(x: &[f64], spec: &PenalizationSpec) -> f64 {
    psi_radial(x.iter().map(|c| c * c).sum(), spec.kappa, spec.p)
}

/// `∇ψ_κ(x) = p (κ + |x|²)^{p/2 − 1} x`.
pub fn psi_kappa_grad(x: &[f64], spec: &PenalizationSpec) -> Vec<f64> {
    let r2: f64 = x.iter().map(|c| c * c).sum();
    let f = spec.p * (spec.kappa + r2).powf(0.5 * spec.p - 1.0);
    x.iter().map(|c| f * c).collect()
}

/// `(1 + δ)^β − 1 − βδ`, by its binomial series when `δ` is small.
fn binomial_remainder(delta: f64, beta: f64) -> f64 {
    if delta.abs() < 1e-2 {
        let mut coef = beta * (beta - 1.0) / 2.0;
        let mut pow = delta * delta;
        let mut acc = 0.0;
        for k in 2..10 {
            acc += coef * pow;
            coef *= (beta - k as f64) / (k + 1) as f64;
            pow *= delta;
        }
        acc
    } else {
        (beta * delta.ln_1p()).exp_m1() - beta * delta
    }
}

/// `ψ_κ(x0 + h) − ψ_κ(x0) − ∇ψ_κ(x0)·h` without cancellation: with
/// `A = κ + |x0|²` and `δ = (2 x0·h + |h|²)/A` it equals
/// `A^β [(1+δ)^β − 1 − βδ] + β A^{β−1} |h|²`, `β = p/2`.
fn psi_taylor_remainder(x0: &[f64], h: &[f64], kappa: f64, p: f64) -> f64 {
    let beta = 0.5 * p;
    let a = kappa + x0.iter().map(|c| c * c).sum::<f64>();
    let hh: f64 = h.iter().map(|c| c * c).sum();
    let cross: f64 = x0.iter().zip(h).map(|(x, y)| x * y).sum();
    let delta = (2.0 * cross + hh) / a;
    a.powf(beta) * binomial_remainder(delta, beta) + beta * a.powf(beta - 1.0) * hh
}

/// Sampled `sup |ψ_κ(x) − ψ_κ(x0) − ∇ψ_κ(x0)·(x − x0)| / |x − x0|^p` over
/// `x0, x ∈ B_radius` and the given `κ`s.
///
/// `ψ_κ` is radial, so every pair `(x0, x)` lies in a plane through the
/// origin; sampling `x0 = (s, 0)` and `x = x0 + t(cos θ, sin θ)` covers all
/// dimensions, and `θ ∈ {0, π}` covers the collinear 1-D case.
pub fn pointwise_cp_constant(p: f64, kappas: &[f64], radius: f64) -> f64 {
    let logspace = |a: f64, b: f64, n: usize| -> Vec<f64> {
        (0..n).map(|k| (a.ln() + (b.ln() - a.ln()) * k as f64 / (n - 1) as f64).exp()).collect()
    };
    let mut offsets = vec![0.0];
    offsets.extend(logspace(1e-7 * radius, radius, 90));
    let steps = logspace(1e-7 * radius, 2.0 * radius, 90);
    let angles: Vec<f64> = (0..=32).map(|k| std::f64::consts::PI * k as f64 / 32.0).collect();
    let mut sup = 0.0f64;
    for &kappa in kappas {
        for &s in &offsets {
            for &theta in &angles {
                let (c, sn) = (theta.cos(), theta.sin());
                for &t in &steps {
                    let h = [t * c, t * sn];
                    if norm(&[s + h[0], h[1]]) > radius {
                        continue;
                    }
                    let q = psi_taylor_remainder(&[s, 0.0], &h, kappa, p).abs() / pow_p(t, p);
                    sup = sup.max(q);
                }
            }
        }
    }
    sup
}

/// The `κ` values and radius used for the default constant.
pub const CP_KAPPAS: [f64; 3] = [1e-6, 1e-3, 0.5];
pub const CP_RADIUS: f64 = 2.0;
pub const CP_SAFETY: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CpEstimate {
    pub p: f64,
    pub sampled_sup: f64,
    pub safety: f64,
    pub cp: f64,
}

/// Default coupling constant for exponent `p`: the sampled quotient on `B_2`
/// times a 1.05 safety factor. Computed once per `p`.
pub fn default_cp(p: f64) -> CpEstimate {
    static CACHE: OnceLock<Mutex<HashMap<u64, CpEstimate>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(e) = cache.lock().unwrap().get(&p.to_bits()) {
        return *e;
    }
    let sampled_sup = pointwise_cp_constant(p, &CP_KAPPAS, CP_RADIUS);
    let e = CpEstimate { p, sampled_sup, safety: CP_SAFETY, cp: CP_SAFETY * sampled_sup };
    cache.lock().unwrap().insert(p.to_bits(), e);
    e
}

/// Result of a sup- or inf-convolution: the regularized values and, per node,
/// the node achieving the extremum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Convolution {
    pub function: GridFunction,
    pub argmax: Vec<usize>,
}

/// Visits the flat indices of the index box `[lo, hi]` in increasing order.
fn for_each_in_box<F: FnMut(usize, &[usize])>(g: &GridFunction, lo: &[usize], hi: &[usize], mut f: F) {
    let d = lo.len();
    let mut idx = lo.to_vec();
    loop {
        f(g.flat_index(&idx), &idx);
        let mut k = d;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            if idx[k] < hi[k] {
                idx[k] += 1;
                break;
            }
            idx[k] = lo[k];
        }
    }
}

/// `u^δ(x) = max_y u(y) − |x − y|²/δ` over grid nodes `y`, at every node `x`.
///
/// Only nodes with `|x − y| <= (2δ‖u‖_∞)^{1/2} + h` are scanned; any node
/// further away scores below `−‖u‖_∞ <= u(x)`, so the window is exact. Ties
/// go to the smallest node index.
pub fn sup_convolution(u: &GridFunction, delta: f64) -> Result<Convolution, ViscosityError> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(ViscosityError::InvalidDelta(delta));
    }
    let reach = (2.0 * delta * u.sup_norm()).sqrt() + u.h;
    let w = (reach / u.h).ceil() as usize;
    let h2 = u.h * u.h;
    let results: Vec<(f64, usize)> = (0..u.len())
        .into_par_iter()
        .map(|x| {
            let ix = u.multi_index(x);
            let lo: Vec<usize> = ix.iter().map(|&i| i.saturating_sub(w)).collect();
            let hi: Vec<usize> = ix.iter().zip(&u.shape).map(|(&i, &n)| (i + w).min(n - 1)).collect();
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for_each_in_box(u, &lo, &hi, |y, iy| {
                let d2: f64 = ix.iter().zip(iy).map(|(&a, &b)| ((a as f64) - (b as f64)).powi(2)).sum::<f64>() * h2;
                let val = u.values[y] - d2 / delta;
                if val > best.0 {
                    best = (val, y);
                }
            });
            best
        })
        .collect();
    let (values, argmax) = results.into_iter().unzip();
    Ok(Convolution { function: u.with_values(values), argmax })
}

/// `v_δ(x) = min_y v(y) + |x − y|²/δ`, computed as `−(−v)^δ`.
pub fn inf_convolution(v: &GridFunction, delta: f64) -> Result<Convolution, ViscosityError> {
    let c = sup_convolution(&v.map_values(|a| -a), delta)?;
    Ok(Convolution { function: c.function.map_values(|a| -a), argmax: c.argmax })
}

/// `L_μ(u, x) = Σ w_i [u(x + z_i) − u(x) − χ_{B_1}(z_i) grad·z_i]`.
pub fn levy_op_eval<U: ScalarField + ?Sized>(u: &U, x: &[f64], mu: &DiscreteMeasure, grad: &[f64]) -> f64 {
    assert_eq!(x.len(), mu.dim(), "point and measure dimensions differ");
    assert_eq!(grad.len(), mu.dim(), "gradient and measure dimensions differ");
    let ux = u.value_at(x);
    let mut shifted = vec![0.0; x.len()];
    ksum(mu.atoms().iter().map(|a| {
        for (s, (xi, zi)) in shifted.iter_mut().zip(x.iter().zip(&a.position)) {
            *s = xi + zi;
        }
        let mut term = u.value_at(&shifted) - ux;
        if a.radius() < 1.0 {
            term -= grad.iter().zip(&a.position).map(|(g, z)| g * z).sum::<f64>();
        }
        a.weight * term
    }))
}

/// Maximizer of `w(x, y) = u(x) − v(y) − (1/ε) ψ_κ(x − y)` over pairs of nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoublingMax {
    pub x_index: usize,
    pub y_index: usize,
    pub x_star: Vec<f64>,
    pub y_star: Vec<f64>,
    pub value: f64,
}

/// Penalty values `(1/ε) ψ_κ(h·Δ)` for every index offset `Δ`, laid out on
/// the `(2n_k − 1)` offset box.
struct PenaltyTable {
    shape: Vec<usize>,
    center: Vec<usize>,
    values: Vec<f64>,
}

impl PenaltyTable {
    fn new(g: &GridFunction, spec: &PenalizationSpec) -> Self {
        let shape: Vec<usize> = g.shape.iter().map(|&n| 2 * n - 1).collect();
        let center: Vec<usize> = g.shape.iter().map(|&n| n - 1).collect();
        let len: usize = shape.iter().product();
        let alpha = 1.0 / spec.epsilon;
        let values = (0..len)
            .map(|mut flat| {
                let mut r2 = 0.0;
                for k in (0..shape.len()).rev() {
                    let off = (flat % shape[k]) as f64 - center[k] as f64;
                    flat /= shape[k];
                    r2 += (g.h * off).powi(2);
                }
                alpha * psi_radial(r2, spec.kappa, spec.p)
            })
            .collect();
        Self { shape, center, values }
    }

    fn get(&self, ix: &[usize], iy: &[usize]) -> f64 {
        let flat = ix.iter().zip(iy).zip(self.shape.iter().zip(&self.center)).fold(0, |acc, ((&a, &b), (&n, &c))| {
            acc * n + (a + c - b)
        });
        self.values[flat]
    }
}

fn doubling_objective(u: &GridFunction, v: &GridFunction, table: &PenaltyTable, x: usize, y: usize) -> f64 {
    u.values[x] - v.values[y] - table.get(&u.multi_index(x), &v.multi_index(y))
}

/// Exact maximum of the doubled function over the node product. Rows `x` are
/// scanned in parallel; the reduction picks the largest value and, on ties,
/// the lexicographically smallest `(x, y)`.
pub fn doubling_maximize(u: &GridFunction, v: &GridFunction, spec: &PenalizationSpec) -> Result<DoublingMax, ViscosityError> {
    spec.validate()?;
    if !u.same_grid(v) {
        return Err(ViscosityError::IncompatibleGrids);
    }
    let table = PenaltyTable::new(u, spec);
    let all: Vec<Vec<usize>> = (0..v.len()).map(|y| v.multi_index(y)).collect();
    let rows: Vec<(f64, usize)> = (0..u.len())
        .into_par_iter()
        .map(|x| {
            let ix = u.multi_index(x);
            let ux = u.values[x];
            let mut best = (f64::NEG_INFINITY, 0);
            for (y, iy) in all.iter().enumerate() {
                let w = ux - v.values[y] - table.get(&ix, iy);
                if w > best.0 {
                    best = (w, y);
                }
            }
            best
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for (x, &(w, y)) in rows.iter().enumerate() {
        if w > best.0 {
            best = (w, x, y);
        }
    }
    let (value, x_index, y_index) = best;
    Ok(DoublingMax { x_index, y_index, x_star: u.node(x_index), y_star: v.node(y_index), value })
}

/// Rounds every coordinate to the lattice `h·Z^d`; atoms landing on the origin
/// are absorbed by the reservoir.
pub fn snap_to_lattice(mu: &DiscreteMeasure, h: f64) -> DiscreteMeasure {
    assert!(h > 0.0, "lattice spacing must be positive");
    mu.map_positions(mu.dim(), |z| z.iter().map(|c| (c / h).round() * h).collect())
}

fn on_lattice(mu: &DiscreteMeasure, h: f64) -> bool {
    mu.atoms().iter().all(|a| a.position.iter().all(|c| ((c / h) - (c / h).round()).abs() <= 1e-9))
}

/// Which form of the coupling inequality to test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingVariant {
    /// Measures inside `B_1`; `rhs = C_p (1/ε) d(μ, ν)^p`.
    Singular,
    /// Any measures; adds `2‖v‖_∞ d_TV(μ̌, ν̌)` and transports only `μ̂, ν̂`.
    Full,
}

pub const COUPLING_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingReport {
    pub variant: CouplingVariant,
    pub x_star: Vec<f64>,
    pub y_star: Vec<f64>,
    pub max_value: f64,
    pub cp: f64,
    /// Common gradient `(1/ε) ∇ψ_κ(x* − y*)` from the first-order condition.
    pub gradient: Vec<f64>,
    pub gradient_source: &'static str,
    pub lhs: f64,
    pub transport_term: f64,
    pub tv_term: f64,
    pub rhs: f64,
    /// Whether all atoms lie on the grid lattice, which makes the
    /// inequality exact for grid data.
    pub lattice_aligned: bool,
    pub pass: bool,
}

/// Finds the doubling maximum and tests `L_μ(u, x*) − L_ν(v, y*) <= rhs`.
pub fn coupling_inequality_check(
    u: &GridFunction,
    v: &GridFunction,
    spec: &PenalizationSpec,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cp: f64,
    variant: CouplingVariant,
) -> Result<CouplingReport, ViscosityError> {
    let m = doubling_maximize(u, v, spec)?;
    coupling_inequality_check_at(u, v, spec, mu, nu, cp, variant, m.x_index, m.y_index)
}

/// Same as [`coupling_inequality_check`] at a caller-supplied node pair, which
/// must be a global maximum of the doubled function over the grid.
#[allow(clippy::too_many_arguments)]
pub fn coupling_inequality_check_at(
    u: &GridFunction,
    v: &GridFunction,
    spec: &PenalizationSpec,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cp: f64,
    variant: CouplingVariant,
    x_index: usize,
    y_index: usize,
) -> Result<CouplingReport, ViscosityError> {
    let best = doubling_maximize(u, v, spec)?;
    if x_index >= u.len() || y_index >= v.len() {
        return Err(ViscosityError::NotGridMax { x_index, y_index, value: f64::NAN, max: best.value });
    }
    let table = PenaltyTable::new(u, spec);
    let value = doubling_objective(u, v, &table, x_index, y_index);
    if value < best.value - 1e-12 * (1.0 + best.value.abs()) {
        return Err(ViscosityError::NotGridMax { x_index, y_index, value, max: best.value });
    }
    if mu.dim() != u.dim() || nu.dim() != u.dim() {
        return Err(MeasureError::DimensionMismatch(mu.dim(), u.dim()).into());
    }
    if variant == CouplingVariant::Singular {
        for (which, m) in [("mu", mu), ("nu", nu)] {
            if let Some((index, a)) = m.atoms().iter().enumerate().find(|(_, a)| a.radius() >= 1.0) {
                return Err(ViscosityError::OutsideUnitBall { which, index, radius: a.radius() });
            }
        }
    }

    let x_star = u.node(x_index);
    let y_star = v.node(y_index);
    let alpha = 1.0 / spec.epsilon;
    let q: Vec<f64> = x_star.iter().zip(&y_star).map(|(a, b)| a - b).collect();
    let gradient: Vec<f64> = psi_kappa_grad(&q, spec).iter().map(|g| alpha * g).collect();
    let lhs = levy_op_eval(u, &x_star, mu, &gradient) - levy_op_eval(v, &y_star, nu, &gradient);

    let cost = CostSpec::new(spec.p)?;
    let (transport_term, tv_term) = match variant {
        CouplingVariant::Singular => (cp * alpha * solve(mu, nu, cost)?.value, 0.0),
        CouplingVariant::Full => {
            let (dm, dn) = (decompose(mu), decompose(nu));
            let t = cp * alpha * solve(&dm.hat, &dn.hat, cost)?.value;
            (t, 2.0 * v.sup_norm() * tv_distance(&dm.check, &dn.check)?)
        }
    };
    let rhs = transport_term + tv_term;
    Ok(CouplingReport {
        variant,
        x_star,
        y_star,
        max_value: value,
        cp,
        gradient,
        gradient_source: "first-order",
        lhs,
        transport_term,
        tv_term,
        rhs,
        lattice_aligned: on_lattice(mu, u.h) && on_lattice(nu, u.h),
        pass: lhs <= rhs + COUPLING_TOL,
    })
}

pub type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One-dimensional linear equation `c(x) u − L u = −f` on the torus
/// `[0, 2π)` with jump measures `μ_x = δ_{m(x)}`.
#[derive(Clone)]
pub struct EquationSpec {
    pub lambda: f64,
    pub lambda1: f64,
    pub c: Fn1,
    pub f: Fn1,
    /// Jump size `m(x)`; `μ_x = δ_{m(x)}` is a probability measure.
    pub jump: Fn1,
    /// Lipschitz constant of `m`, which is also the `d_2`-Lipschitz constant
    /// of `x ↦ μ_x`.
    pub jump_lipschitz: f64,
}

impl std::fmt::Debug for EquationSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EquationSpec")
            .field("lambda", &self.lambda)
            .field("lambda1", &self.lambda1)
            .field("jump_lipschitz", &self.jump_lipschitz)
            .finish_non_exhaustive()
    }
}

impl EquationSpec {
    /// `c = 1 + 0.25 cos x`, `f = sin x + 0.5 cos 2x`, `m = 0.5 + 0.1 sin x`.
    pub fn translation_example() -> Self {
        Self {
            lambda: 0.75,
            lambda1: 1.25,
            c: Arc::new(|x| 1.0 + 0.25 * x.cos()),
            f: Arc::new(|x| x.sin() + 0.5 * (2.0 * x).cos()),
            jump: Arc::new(|x| 0.5 + 0.1 * x.sin()),
            jump_lipschitz: 0.1,
        }
    }

    /// Checks `0 < λ <= c <= λ_1` and `m != 0` on the given nodes.
    pub fn validate(&self, nodes: &[f64]) -> Result<(), ViscosityError> {
        if !(self.lambda > 0.0 && self.lambda <= self.lambda1) {
            return Err(ViscosityError::InvalidEquation(format!("need 0 < lambda <= lambda1, got {} and {}", self.lambda, self.lambda1)));
        }
        for &x in nodes {
            let c = (self.c)(x);
            if !(c >= self.lambda && c <= self.lambda1) {
                return Err(ViscosityError::InvalidEquation(format!("c({x}) = {c} outside [lambda, lambda1]")));
            }
            let m = (self.jump)(x);
            if m == 0.0 || !m.is_finite() {
                return Err(ViscosityError::InvalidEquation(format!("jump m({x}) = {m}")));
            }
            if !(self.f)(x).is_finite() {
                return Err(ViscosityError::InvalidEquation(format!("f({x}) is not finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub epsilon: f64,
    pub kappa: f64,
    pub x_star: f64,
    pub y_star: f64,
    /// `λ (u(x_ε) − v(y_ε))`.
    pub gap: f64,
    /// `(1/ε) |x_ε − y_ε|²`.
    pub penalty_term: f64,
    /// `(1/ε) d_2(μ_{x_ε}, μ_{y_ε})²`.
    pub distance_term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub nodes: usize,
    pub margin: f64,
    /// `max |c u − L_h u + f|` over the nodes for the computed solution.
    pub residual: f64,
    pub min_v_minus_u: f64,
    pub u_le_v: bool,
    pub penalty_nonincreasing: bool,
    pub final_penalty: f64,
    pub rows: Vec<ExperimentRow>,
}

/// Weight profile of the margin: 0 on `|x − π| <= 0.5`, rising linearly to 1
/// at `|x − π| = 1`.
fn margin_profile(x: f64) -> f64 {
    ((x - std::f64::consts::PI).abs() - 0.5).clamp(0.0, 0.5) / 0.5
}

/// Solves the periodic discrete equation exactly, sets `v = u + margin`
/// outside a bump around `π`, and runs the doubling maximization for each
/// `ε` with the quadratic penalty.
///
/// The jump term uses periodic linear interpolation and the compensator an
/// upwind difference, so the system matrix is a strictly diagonally dominant
/// M-matrix with row sums `c(x_i) >= λ`.
pub fn basic_idea_experiment(
    eq: &EquationSpec,
    nodes: usize,
    epsilons: &[f64],
    margin: f64,
) -> Result<ExperimentReport, ViscosityError> {
    if nodes < 3 {
        return Err(ViscosityError::InvalidGrid(format!("need at least 3 nodes, got {nodes}")));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(ViscosityError::InvalidEquation(format!("margin = {margin} must be nonnegative")));
    }
    let n = nodes;
    let two_pi = 2.0 * std::f64::consts::PI;
    let h = two_pi / n as f64;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    eq.validate(&xs)?;

    let mut a = DMatrix::<f64>::zeros(n, n);
    for (i, &x) in xs.iter().enumerate() {
        let m = (eq.jump)(x);
        a[(i, i)] += (eq.c)(x) + 1.0;
        // u(x + m) by periodic linear interpolation
        let t = (x + m).rem_euclid(two_pi) / h;
        let j = (t.floor() as usize) % n;
        let theta = t - t.floor();
        a[(i, j)] -= 1.0 - theta;
        a[(i, (j + 1) % n)] -= theta;
        if m.abs() < 1.0 {
            // −m u'(x), differenced against the direction of m
            let s = m.abs() / h;
            a[(i, i)] += s;
            let nb = if m > 0.0 { (i + n - 1) % n } else { (i + 1) % n };
            a[(i, nb)] -= s;
        }
    }
    let rhs = DVector::from_iterator(n, xs.iter().map(|&x| -(eq.f)(x)));
    let sol = a.clone().lu().solve(&rhs).ok_or(ViscosityError::Singular)?;
    let residual = (&a * &sol - &rhs).amax();

    let u_vals: Vec<f64> = sol.iter().copied().collect();
    let v_vals: Vec<f64> = u_vals.iter().zip(&xs).map(|(&u, &x)| u + margin * margin_profile(x)).collect();
    let min_v_minus_u = v_vals.iter().zip(&u_vals).map(|(v, u)| v - u).fold(f64::INFINITY, f64::min);
    let u = GridFunction::new(vec![0.0], h, vec![n], u_vals)?;
    let v = GridFunction::new(vec![0.0], h, vec![n], v_vals)?;

    let kappa = 0.5;
    let mut rows = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let spec = PenalizationSpec::new(epsilon, kappa, 2.0)?;
        let m = doubling_maximize(&u, &v, &spec)?;
        let (x, y) = (m.x_star[0], m.y_star[0]);
        let mx = DiscreteMeasure::from_1d(&[((eq.jump)(x), 1.0)])?;
        let my = DiscreteMeasure::from_1d(&[((eq.jump)(y), 1.0)])?;
        let d2 = solve(&mx, &my, CostSpec::new(2.0)?)?.value;
        rows.push(ExperimentRow {
            epsilon,
            kappa,
            x_star: x,
            y_star: y,
            gap: eq.lambda * (u.values[m.x_index] - v.values[m.y_index]),
            penalty_term: (x - y).powi(2) / epsilon,
            distance_term: d2 / epsilon,
        });
    }
    let penalty_nonincreasing = rows.windows(2).all(|w| w[1].penalty_term <= w[0].penalty_term);
    let final_penalty = rows.last().map_or(0.0, |r| r.penalty_term);
    Ok(ExperimentReport {
        nodes: n,
        margin,
        residual,
        min_v_minus_u,
        u_le_v: min_v_minus_u >= 0.0,
        penalty_nonincreasing,
        final_penalty,
        rows,
    })
}

/// `|x − y|` between grid nodes, used by reports.
pub fn node_distance(g: &GridFunction, a: usize, b: usize) -> f64 {
    dist(&g.node(a), &g.node(b))
}
