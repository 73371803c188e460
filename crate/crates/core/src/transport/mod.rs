//! Optimal transport between discrete Lévy measures with the origin acting
//! as an unlimited source/sink of mass.
//!
//! The reservoir problem is reduced to a balanced transportation problem by
//! appending one virtual atom to each side: on the `μ` side it carries `|ν|`,
//! on the `ν` side `|μ|`, and it is connected to real atoms at cost `|z|^p`
//! and to the other virtual atom at cost 0.

mod simplex;

use serde::Serialize;
use thiserror::Error;

use crate::measures::{DiscreteMeasure, MeasureError};
use crate::numeric::{dist, ksum, pow_p, KahanSum};
use simplex::{SimplexError, TransportSimplex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("exponent p = {0} is outside [1, 2]")]
    InvalidExponent(f64),
    #[error("simplex hit its iteration limit ({0})")]
    IterationLimit(usize),
    #[error("simplex returned an infeasible basis (residual {0:e})")]
    Infeasible(f64),
    #[error("dual pair violates phi[{i}] + psi[{j}] <= cost by {excess:e}")]
    PairViolation { i: usize, j: usize, excess: f64 },
    #[error("dual phi[{i}] exceeds the reservoir cost by {excess:e}")]
    PhiAboveReservoir { i: usize, excess: f64 },
    #[error("dual psi[{j}] exceeds the reservoir cost by {excess:e}")]
    PsiAboveReservoir { j: usize, excess: f64 },
    #[error("dual vectors have lengths ({phi}, {psi}), measures have ({m}, {n})")]
    DualShape { phi: usize, psi: usize, m: usize, n: usize },
    #[error("brute force needs unit weights; atom {index} has weight {weight}")]
    NonUnitWeight { index: usize, weight: f64 },
    #[error("brute force supports at most {max} atoms per side, got {got}")]
    TooManyAtoms { max: usize, got: usize },
}

impl From<SimplexError> for TransportError {
    fn from(e: SimplexError) -> Self {
        match e {
            SimplexError::IterationLimit(n) => TransportError::IterationLimit(n),
            SimplexError::Infeasible(r) => TransportError::Infeasible(r),
        }
    }
}

/// Slack used for dual feasibility and 𝒦-membership tests.
pub const DUAL_TOL: f64 = 1e-9;

/// Cost `|x − y|^p` with reservoir cost `|x|^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostSpec {
    p: f64,
}

impl CostSpec {
    pub fn new(p: f64) -> Result<Self, TransportError> {
        if !(1.0..=2.0).contains(&p) {
            return Err(TransportError::InvalidExponent(p));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn cost(&self, x: &[f64], y: &[f64]) -> f64 {
        if self.p == 2.0 {
            x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
        } else {
            pow_p(dist(x, y), self.p)
        }
    }

    pub fn reservoir_cost(&self, x: &[f64]) -> f64 {
        if self.p == 2.0 {
            x.iter().map(|a| a * a).sum()
        } else {
            pow_p(crate::numeric::norm(x), self.p)
        }
    }

    /// `min(|x − y|^p, |x|^p + |y|^p)`: the cheaper of the direct route and
    /// the route through the reservoir.
    pub fn reduced_cost(&self, x: &[f64], y: &[f64]) -> f64 {
        self.cost(x, y).min(self.reservoir_cost(x) + self.reservoir_cost(y))
    }

    /// Whether `(x, y)` lies in `{ |x − y|^p <= |x|^p + |y|^p + tol }`.
    pub fn in_k_set(&self, x: &[f64], y: &[f64], tol: f64) -> bool {
        self.cost(x, y) <= self.reservoir_cost(x) + self.reservoir_cost(y) + tol
    }
}

/// One positive entry of the direct coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanEntry {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
}

/// An admissible plan: direct flows plus flows into and out of the reservoir.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    /// Sorted by `(i, j)`; only positive masses are stored.
    pub direct_flow: Vec<PlanEntry>,
    pub to_reservoir: Vec<f64>,
    pub from_reservoir: Vec<f64>,
}

impl TransportPlan {
    /// The plan that routes everything through the reservoir.
    pub fn through_reservoir(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Self {
        Self {
            direct_flow: Vec::new(),
            to_reservoir: mu.atoms().iter().map(|a| a.weight).collect(),
            from_reservoir: nu.atoms().iter().map(|a| a.weight).collect(),
        }
    }

    /// `Σ γ_ij |x_i − y_j|^p + Σ s_i |x_i|^p + Σ t_j |y_j|^p`.
    pub fn cost(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure, cost: CostSpec) -> f64 {
        let (xa, ya) = (mu.atoms(), nu.atoms());
        let mut acc = KahanSum::new();
        for e in &self.direct_flow {
            acc.add(e.mass * cost.cost(&xa[e.i].position, &ya[e.j].position));
        }
        for (s, a) in self.to_reservoir.iter().zip(xa) {
            acc.add(s * cost.reservoir_cost(&a.position));
        }
        for (t, a) in self.from_reservoir.iter().zip(ya) {
            acc.add(t * cost.reservoir_cost(&a.position));
        }
        acc.value()
    }
}

/// Dual potentials normalized to vanish on the reservoir.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualPotentials {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl DualPotentials {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self { phi: vec![0.0; m], psi: vec![0.0; n] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub value: f64,
    pub plan: TransportPlan,
    pub duals: DualPotentials,
    pub iterations: usize,
    pub gap: f64,
}

fn check_pair(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(), TransportError> {
    if mu.dim() != nu.dim() {
        return Err(MeasureError::DimensionMismatch(mu.dim(), nu.dim()).into());
    }
    Ok(())
}

/// Solves the reservoir transport problem exactly.
pub fn solve(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cost: CostSpec) -> Result<SolveReport, TransportError> {
    check_pair(mu, nu)?;
    let (m, n) = (mu.len(), nu.len());

    if m == 0 || n == 0 || mu == nu {
        // Trivial cases: the forced reservoir plan (one side empty) or the
        // identity coupling. Zero potentials are optimal for the identity;
        // for a forced plan the reservoir costs themselves are tight duals.
        let (plan, duals) = if mu == nu {
            let direct = mu.atoms().iter().enumerate().map(|(i, a)| PlanEntry { i, j: i, mass: a.weight }).collect();
            (
                TransportPlan { direct_flow: direct, to_reservoir: vec![0.0; m], from_reservoir: vec![0.0; n] },
                DualPotentials::zeros(m, n),
            )
        } else {
            let phi = mu.atoms().iter().map(|a| cost.reservoir_cost(&a.position)).collect();
            let psi = nu.atoms().iter().map(|a| cost.reservoir_cost(&a.position)).collect();
            (TransportPlan::through_reservoir(mu, nu), DualPotentials { phi, psi })
        };
        let value = plan.cost(mu, nu, cost);
        let dual = dual_objective(&duals, mu, nu);
        return Ok(SolveReport { value, plan, duals, iterations: 0, gap: (value - dual).abs() });
    }

    let (xa, ya) = (mu.atoms(), nu.atoms());
    let nt = n + 1;
    let mut c = vec![0.0; (m + 1) * nt];
    for (i, a) in xa.iter().enumerate() {
        let row = &mut c[i * nt..(i + 1) * nt];
        for (j, b) in ya.iter().enumerate() {
            row[j] = cost.cost(&a.position, &b.position);
        }
        row[n] = cost.reservoir_cost(&a.position);
    }
    for (j, b) in ya.iter().enumerate() {
        c[m * nt + j] = cost.reservoir_cost(&b.position);
    }
    c[m * nt + n] = 0.0;

    let mass_mu = ksum(xa.iter().map(|a| a.weight));
    let mass_nu = ksum(ya.iter().map(|a| a.weight));
    let supply: Vec<f64> = xa.iter().map(|a| a.weight).chain([mass_nu]).collect();
    let demand: Vec<f64> = ya.iter().map(|a| a.weight).chain([mass_mu]).collect();

    let sol = TransportSimplex::new(&c, &supply, &demand).solve()?;

    let mut direct_flow = Vec::new();
    let mut to_reservoir = vec![0.0; m];
    let mut from_reservoir = vec![0.0; n];
    for &(i, j, f) in &sol.basis {
        if f <= 0.0 {
            continue;
        }
        match (i < m, j < n) {
            (true, true) => direct_flow.push(PlanEntry { i, j, mass: f }),
            (true, false) => to_reservoir[i] = f,
            (false, true) => from_reservoir[j] = f,
            (false, false) => {}
        }
    }
    let plan = TransportPlan { direct_flow, to_reservoir, from_reservoir };

    // Shift so the virtual atoms carry zero potential on both sides. The
    // shift keeps every real constraint feasible because u_R + v_R <= 0.
    let (u_r, v_r) = (sol.u[m], sol.v[n]);
    let mut phi: Vec<f64> = sol.u[..m].iter().map(|u| u + v_r).collect();
    let mut psi: Vec<f64> = sol.v[..n].iter().map(|v| v + u_r).collect();
    // One round of c-transforms removes rounding-level infeasibility and can
    // only raise the objective, which is already optimal.
    for i in 0..m {
        let mut best = c[i * nt + n];
        for j in 0..n {
            best = best.min(c[i * nt + j] - psi[j]);
        }
        phi[i] = best;
    }
    for j in 0..n {
        let mut best = c[m * nt + j];
        for i in 0..m {
            best = best.min(c[i * nt + j] - phi[i]);
        }
        psi[j] = best;
    }
    let duals = DualPotentials { phi, psi };
    let value = plan.cost(mu, nu, cost);
    let dual = dual_objective(&duals, mu, nu);
    Ok(SolveReport { value, plan, duals, iterations: sol.iterations, gap: (value - dual).abs() })
}

/// `solve(...).value^{1/p}`.
pub fn distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64, TransportError> {
    let cost = CostSpec::new(p)?;
    let v = solve(mu, nu, cost)?.value;
    Ok(v.max(0.0).powf(1.0 / p))
}

/// A violated marginal or sign constraint of a plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PlanViolation {
    /// Mass leaving `μ`-atom `index` differs from its weight.
    Row { index: usize, expected: f64, found: f64 },
    /// Mass arriving at `ν`-atom `index` differs from its weight.
    Column { index: usize, expected: f64, found: f64 },
    NegativeMass { i: Option<usize>, j: Option<usize>, mass: f64 },
    IndexOutOfRange { i: usize, j: usize },
    Shape { to_reservoir: usize, from_reservoir: usize },
}

/// Checks membership in the admissible set up to `1e-12` per constraint.
pub fn verify_plan(plan: &TransportPlan, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Vec<PlanViolation> {
    verify_plan_with_tol(plan, mu, nu, 1e-12)
}

pub fn verify_plan_with_tol(
    plan: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    tol: f64,
) -> Vec<PlanViolation> {
    let (m, n) = (mu.len(), nu.len());
    let mut out = Vec::new();
    if plan.to_reservoir.len() != m || plan.from_reservoir.len() != n {
        out.push(PlanViolation::Shape {
            to_reservoir: plan.to_reservoir.len(),
            from_reservoir: plan.from_reservoir.len(),
        });
        return out;
    }
    let mut rows: Vec<KahanSum> = plan.to_reservoir.iter().map(|&s| [s].into_iter().collect()).collect();
    let mut cols: Vec<KahanSum> = plan.from_reservoir.iter().map(|&t| [t].into_iter().collect()).collect();
    for (i, &s) in plan.to_reservoir.iter().enumerate() {
        if s < 0.0 {
            out.push(PlanViolation::NegativeMass { i: Some(i), j: None, mass: s });
        }
    }
    for (j, &t) in plan.from_reservoir.iter().enumerate() {
        if t < 0.0 {
            out.push(PlanViolation::NegativeMass { i: None, j: Some(j), mass: t });
        }
    }
    for e in &plan.direct_flow {
        if e.i >= m || e.j >= n {
            out.push(PlanViolation::IndexOutOfRange { i: e.i, j: e.j });
            continue;
        }
        if e.mass < 0.0 {
            out.push(PlanViolation::NegativeMass { i: Some(e.i), j: Some(e.j), mass: e.mass });
        }
        rows[e.i].add(e.mass);
        cols[e.j].add(e.mass);
    }
    for (index, (r, a)) in rows.iter().zip(mu.atoms()).enumerate() {
        let found = r.value();
        if (found - a.weight).abs() > tol {
            out.push(PlanViolation::Row { index, expected: a.weight, found });
        }
    }
    for (index, (c, a)) in cols.iter().zip(nu.atoms()).enumerate() {
        let found = c.value();
        if (found - a.weight).abs() > tol {
            out.push(PlanViolation::Column { index, expected: a.weight, found });
        }
    }
    out
}

/// A charged direct arc lying outside `𝒦`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KViolation {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
    /// `|x_i − y_j|^p − |x_i|^p − |y_j|^p`.
    pub excess: f64,
}

/// Direct arcs with mass above `tol_mass` whose cost exceeds the reservoir
/// route by more than `tol`.
pub fn k_support_check(
    plan: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: f64,
    tol: f64,
) -> Vec<KViolation> {
    k_support_check_with_mass_tol(plan, mu, nu, p, tol, 0.0)
}

pub fn k_support_check_with_mass_tol(
    plan: &TransportPlan,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: f64,
    tol: f64,
    tol_mass: f64,
) -> Vec<KViolation> {
    let cost = CostSpec { p };
    let (xa, ya) = (mu.atoms(), nu.atoms());
    plan.direct_flow
        .iter()
        .filter(|e| e.mass > tol_mass && e.i < xa.len() && e.j < ya.len())
        .filter_map(|e| {
            let (x, y) = (&xa[e.i].position, &ya[e.j].position);
            let excess = cost.cost(x, y) - cost.reservoir_cost(x) - cost.reservoir_cost(y);
            (excess > tol).then_some(KViolation { i: e.i, j: e.j, mass: e.mass, excess })
        })
        .collect()
}

fn dual_objective(duals: &DualPotentials, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let mut acc = KahanSum::new();
    for (f, a) in duals.phi.iter().zip(mu.atoms()) {
        acc.add(f * a.weight);
    }
    for (g, a) in duals.psi.iter().zip(nu.atoms()) {
        acc.add(g * a.weight);
    }
    acc.value()
}

/// Checks `(φ, ψ)` against every constraint with slack [`DUAL_TOL`]; reports
/// the most violated one.
pub fn check_duals(
    duals: &DualPotentials,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: CostSpec,
) -> Result<(), TransportError> {
    check_pair(mu, nu)?;
    let (xa, ya) = (mu.atoms(), nu.atoms());
    if duals.phi.len() != xa.len() || duals.psi.len() != ya.len() {
        return Err(TransportError::DualShape {
            phi: duals.phi.len(),
            psi: duals.psi.len(),
            m: xa.len(),
            n: ya.len(),
        });
    }
    for (i, (f, a)) in duals.phi.iter().zip(xa).enumerate() {
        let excess = f - cost.reservoir_cost(&a.position);
        if excess > DUAL_TOL || !f.is_finite() {
            return Err(TransportError::PhiAboveReservoir { i, excess });
        }
    }
    for (j, (g, b)) in duals.psi.iter().zip(ya).enumerate() {
        let excess = g - cost.reservoir_cost(&b.position);
        if excess > DUAL_TOL || !g.is_finite() {
            return Err(TransportError::PsiAboveReservoir { j, excess });
        }
    }
    let mut worst: Option<(usize, usize, f64)> = None;
    for (i, (f, a)) in duals.phi.iter().zip(xa).enumerate() {
        for (j, (g, b)) in duals.psi.iter().zip(ya).enumerate() {
            let excess = f + g - cost.cost(&a.position, &b.position);
            if excess > DUAL_TOL && worst.is_none_or(|w| excess > w.2) {
                worst = Some((i, j, excess));
            }
        }
    }
    match worst {
        Some((i, j, excess)) => Err(TransportError::PairViolation { i, j, excess }),
        None => Ok(()),
    }
}

/// Dual objective `Σ φ_i w_i + Σ ψ_j w_j` of a feasible pair.
pub fn dual_value(
    duals: &DualPotentials,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: CostSpec,
) -> Result<f64, TransportError> {
    check_duals(duals, mu, nu, cost)?;
    Ok(dual_objective(duals, mu, nu))
}

/// Maximum atoms per side accepted by [`brute_force_unit`].
pub const BRUTE_FORCE_MAX: usize = 6;

/// Exact value for unit-weight measures by enumerating every injective
/// partial matching; unmatched atoms go through the reservoir.
pub fn brute_force_unit(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64, TransportError> {
    check_pair(mu, nu)?;
    let cost = CostSpec::new(p)?;
    for m in [mu, nu] {
        if m.len() > BRUTE_FORCE_MAX {
            return Err(TransportError::TooManyAtoms { max: BRUTE_FORCE_MAX, got: m.len() });
        }
        if let Some((index, a)) = m.atoms().iter().enumerate().find(|(_, a)| a.weight != 1.0) {
            return Err(TransportError::NonUnitWeight { index, weight: a.weight });
        }
    }
    let xs: Vec<&[f64]> = mu.atoms().iter().map(|a| a.position.as_slice()).collect();
    let ys: Vec<&[f64]> = nu.atoms().iter().map(|a| a.position.as_slice()).collect();
    let rx: Vec<f64> = xs.iter().map(|x| cost.reservoir_cost(x)).collect();
    let ry: Vec<f64> = ys.iter().map(|y| cost.reservoir_cost(y)).collect();

    #[allow(clippy::too_many_arguments)]
    fn go(
        i: usize,
        used: &mut [bool],
        acc: f64,
        xs: &[&[f64]],
        ys: &[&[f64]],
        rx: &[f64],
        ry: &[f64],
        cost: CostSpec,
        best: &mut f64,
    ) {
        if i == xs.len() {
            let rest: f64 = ry.iter().zip(used.iter()).filter(|(_, &u)| !u).map(|(r, _)| r).sum();
            *best = best.min(acc + rest);
            return;
        }
        go(i + 1, used, acc + rx[i], xs, ys, rx, ry, cost, best);
        for j in 0..ys.len() {
            if !used[j] {
                used[j] = true;
                go(i + 1, used, acc + cost.cost(xs[i], ys[j]), xs, ys, rx, ry, cost, best);
                used[j] = false;
            }
        }
    }

    let mut best = f64::INFINITY;
    let mut used = vec![false; ys.len()];
    go(0, &mut used, 0.0, &xs, &ys, &rx, &ry, cost, &mut best);
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Atom;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m1(points: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::from_1d(points).unwrap()
    }

    fn c(p: f64) -> CostSpec {
        CostSpec::new(p).unwrap()
    }

    #[test]
    fn one_sided_instance_sends_everything_to_the_reservoir() {
        let r = solve(&m1(&[(1.0, 1.0)]), &DiscreteMeasure::empty(1), c(2.0)).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.plan.to_reservoir, vec![1.0]);
        assert!(r.plan.direct_flow.is_empty());
    }

    #[test]
    fn single_pair_prefers_direct_route() {
        let (mu, nu) = (m1(&[(0.3, 1.0)]), m1(&[(0.4, 1.0)]));
        let r = solve(&mu, &nu, c(1.0)).unwrap();
        assert!((r.value - 0.1).abs() < 1e-15);
        assert_eq!(r.plan.direct_flow.len(), 1);
        assert!((r.plan.direct_flow[0].mass - 1.0).abs() < 1e-15);
        assert!(k_support_check(&r.plan, &mu, &nu, 1.0, 1e-9).is_empty());
        let dv = dual_value(&r.duals, &mu, &nu, c(1.0)).unwrap();
        assert!((dv - 0.1).abs() < 1e-12);
    }

    #[test]
    fn opposite_atoms_route_through_reservoir() {
        let (mu, nu) = (m1(&[(-0.5, 2.0)]), m1(&[(0.5, 1.0)]));
        let r = solve(&mu, &nu, c(2.0)).unwrap();
        assert!((r.value - 0.75).abs() < 1e-15);
        assert!(r.plan.direct_flow.is_empty());
        assert!(k_support_check(&r.plan, &mu, &nu, 2.0, 1e-9).is_empty());
        // The unit-mass variant agrees with enumeration.
        let (mu1, nu1) = (m1(&[(-0.5, 1.0)]), m1(&[(0.5, 1.0)]));
        assert!((solve(&mu1, &nu1, c(2.0)).unwrap().value - brute_force_unit(&mu1, &nu1, 2.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn distance_examples() {
        let mu = m1(&[(0.5, 1.0), (-0.2, 3.0)]);
        assert_eq!(distance(&mu, &mu, 1.5).unwrap(), 0.0);
        assert_eq!(distance(&DiscreteMeasure::empty(2), &DiscreteMeasure::empty(2), 1.0).unwrap(), 0.0);
        let d = distance(&m1(&[(0.5, 1.0)]), &m1(&[(0.5, 2.0)]), 1.0).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let e = solve(&DiscreteMeasure::empty(1), &DiscreteMeasure::empty(2), c(1.0)).unwrap_err();
        assert_eq!(e, TransportError::Measure(MeasureError::DimensionMismatch(1, 2)));
        assert!(CostSpec::new(2.5).is_err());
    }

    #[test]
    fn verify_plan_reports_bad_rows() {
        let (mu, nu) = (m1(&[(0.3, 1.0), (0.9, 2.0)]), m1(&[(0.4, 1.0)]));
        let r = solve(&mu, &nu, c(1.0)).unwrap();
        assert!(verify_plan(&r.plan, &mu, &nu).is_empty());
        let mut bad = r.plan.clone();
        bad.to_reservoir[1] += 0.1;
        let v = verify_plan(&bad, &mu, &nu);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], PlanViolation::Row { index: 1, .. }));

        let zero = TransportPlan { direct_flow: vec![], to_reservoir: vec![0.0; 2], from_reservoir: vec![0.0; 1] };
        let v = verify_plan(&zero, &mu, &DiscreteMeasure::empty(1).add(&nu).unwrap());
        let rows = v.iter().filter(|x| matches!(x, PlanViolation::Row { .. })).count();
        assert_eq!(rows, 2);
    }

    #[test]
    fn k_check_flags_a_long_arc() {
        let (mu, nu) = (m1(&[(-0.5, 1.0)]), m1(&[(0.5, 1.0)]));
        let plan = TransportPlan {
            direct_flow: vec![PlanEntry { i: 0, j: 0, mass: 1.0 }],
            to_reservoir: vec![0.0],
            from_reservoir: vec![0.0],
        };
        let v = k_support_check(&plan, &mu, &nu, 2.0, 1e-9);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].i, v[0].j), (0, 0));
        assert!((v[0].excess - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dual_value_rejects_reservoir_violation() {
        let (mu, nu) = (m1(&[(0.3, 1.0)]), m1(&[(0.4, 1.0)]));
        assert_eq!(dual_value(&DualPotentials::zeros(1, 1), &mu, &nu, c(1.0)).unwrap(), 0.0);
        let bad = DualPotentials { phi: vec![0.5], psi: vec![0.0] };
        assert!(matches!(
            dual_value(&bad, &mu, &nu, c(1.0)),
            Err(TransportError::PhiAboveReservoir { i: 0, .. })
        ));
    }

    #[test]
    fn brute_force_basics() {
        let mu = m1(&[(0.3, 1.0), (-0.7, 1.0)]);
        assert_eq!(brute_force_unit(&mu, &mu, 1.5).unwrap(), 0.0);
        let v = brute_force_unit(&mu, &DiscreteMeasure::empty(1), 2.0).unwrap();
        assert!((v - (0.09 + 0.49)).abs() < 1e-15);
        assert!(matches!(
            brute_force_unit(&m1(&[(0.3, 2.0)]), &mu, 1.0),
            Err(TransportError::NonUnitWeight { index: 0, .. })
        ));
        let many = m1(&[(0.1, 1.0), (0.2, 1.0), (0.3, 1.0), (0.4, 1.0), (0.5, 1.0), (0.6, 1.0), (0.7, 1.0)]);
        assert!(matches!(brute_force_unit(&many, &mu, 1.0), Err(TransportError::TooManyAtoms { .. })));
    }

    fn random_measure(rng: &mut ChaCha8Rng, dim: usize, max_atoms: usize, unit: bool) -> DiscreteMeasure {
        let n = rng.random_range(0..=max_atoms);
        let atoms = (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
                let w = if unit { 1.0 } else { rng.random_range(0.05..2.0) };
                Atom::new(z, w)
            })
            .collect();
        DiscreteMeasure::new(dim, atoms).unwrap()
    }

    #[test]
    fn solver_matches_enumeration_on_unit_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..150 {
            let dim = rng.random_range(1..=3);
            let p = [1.0, 1.5, 2.0][rng.random_range(0..3)];
            let mu = random_measure(&mut rng, dim, 5, true);
            let nu = random_measure(&mut rng, dim, 5, true);
            let v = solve(&mu, &nu, c(p)).unwrap().value;
            let b = brute_force_unit(&mu, &nu, p).unwrap();
            assert!((v - b).abs() < 1e-10, "{v} vs {b}");
        }
    }

    #[test]
    fn random_weighted_instances_are_certified() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let dim = rng.random_range(1..=3);
            let p = rng.random_range(1.0..=2.0);
            let mu = random_measure(&mut rng, dim, 30, false);
            let nu = random_measure(&mut rng, dim, 30, false);
            let r = solve(&mu, &nu, c(p)).unwrap();
            assert!(r.gap <= 1e-9 * (1.0 + r.value), "gap {}", r.gap);
            assert!(verify_plan(&r.plan, &mu, &nu).is_empty());
            assert!(k_support_check(&r.plan, &mu, &nu, p, 1e-9).is_empty());
            check_duals(&r.duals, &mu, &nu, c(p)).unwrap();
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn fuzzed_feasible_duals_never_exceed_the_primal(
            seed in any::<u64>(),
            shrink in 0.0f64..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = rng.random_range(1..=2);
            let mu = random_measure(&mut rng, dim, 8, false);
            let nu = random_measure(&mut rng, dim, 8, false);
            let cost = c(1.0 + rng.random::<f64>());
            let r = solve(&mu, &nu, cost).unwrap();
            // Random feasible pair: perturb optimal duals downward, then
            // take a c-transform so the pair stays feasible.
            let phi: Vec<f64> = r.duals.phi.iter().map(|f| f - shrink * rng.random::<f64>()).collect();
            let psi: Vec<f64> = nu.atoms().iter().map(|b| {
                mu.atoms().iter().zip(&phi).fold(cost.reservoir_cost(&b.position), |acc, (a, f)| {
                    acc.min(cost.cost(&a.position, &b.position) - f)
                })
            }).collect();
            let d = DualPotentials { phi, psi };
            let v = dual_value(&d, &mu, &nu, cost).unwrap();
            prop_assert!(v <= r.value + 1e-9);
        }
    }
}
