//! Discrete Lévy measures: finitely many weighted atoms in `R^d \ {0}`.
//!
//! The origin plays the role of an infinite mass reservoir, so no atom may sit
//! there. Atoms are kept in canonical lexicographic order with duplicate
//! positions merged (bit-exact coordinate equality), which makes two measures
//! equal exactly when their atom lists are equal.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{ksum, norm, pow_p};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("atom {index} has dimension {found}, expected {expected}")]
    AtomDimension { index: usize, expected: usize, found: usize },
    #[error("atom {index} has a non-finite coordinate or weight")]
    NonFinite { index: usize },
    #[error("atom {index} has non-positive weight {weight}")]
    NonPositiveWeight { index: usize, weight: f64 },
    #[error("atom {index} sits at the origin (the reservoir)")]
    AtomAtOrigin { index: usize },
    #[error("measures live in different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("malformed measure JSON at line {line}, column {column}: {message}")]
    Json { line: usize, column: usize, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// A weighted point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub position: Vec<f64>,
    pub weight: f64,
}

impl Atom {
    pub fn new(position: Vec<f64>, weight: f64) -> Self {
        Self { position, weight }
    }

    pub fn radius(&self) -> f64 {
        norm(&self.position)
    }
}

/// A finite atomic measure on `R^d \ {0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<Atom>,
}

fn cmp_positions(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

impl DiscreteMeasure {
    /// Validates and canonicalizes a list of atoms.
    pub fn new(dim: usize, atoms: Vec<Atom>) -> Result<Self, MeasureError> {
        if dim == 0 {
            return Err(MeasureError::ZeroDimension);
        }
        for (index, a) in atoms.iter().enumerate() {
            if a.position.len() != dim {
                return Err(MeasureError::AtomDimension { index, expected: dim, found: a.position.len() });
            }
            if !a.weight.is_finite() || a.position.iter().any(|c| !c.is_finite()) {
                return Err(MeasureError::NonFinite { index });
            }
            if a.weight <= 0.0 {
                return Err(MeasureError::NonPositiveWeight { index, weight: a.weight });
            }
            if a.position.iter().all(|&c| c == 0.0) {
                return Err(MeasureError::AtomAtOrigin { index });
            }
        }
        Ok(Self::canonical(dim, atoms))
    }

    /// Sorts, normalizes `-0.0` and merges bit-identical positions.
    fn canonical(dim: usize, mut atoms: Vec<Atom>) -> Self {
        for a in &mut atoms {
            for c in &mut a.position {
                *c += 0.0;
            }
        }
        atoms.sort_by(|a, b| cmp_positions(&a.position, &b.position));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.last_mut() {
                Some(last) if cmp_positions(&last.position, &a.position) == Ordering::Equal => {
                    last.weight += a.weight;
                }
                _ => merged.push(a),
            }
        }
        Self { dim, atoms: merged }
    }

    /// Keeps atoms satisfying `keep`; the result stays canonical.
    fn filtered<F: Fn(&Atom) -> bool>(&self, keep: F) -> Self {
        Self { dim: self.dim, atoms: self.atoms.iter().filter(|a| keep(a)).cloned().collect() }
    }

    pub fn empty(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { dim, atoms: Vec::new() }
    }

    /// Convenience constructor for one-dimensional measures from `(z, w)` pairs.
    pub fn from_1d(points: &[(f64, f64)]) -> Result<Self, MeasureError> {
        Self::new(1, points.iter().map(|&(z, w)| Atom::new(vec![z], w)).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        ksum(self.atoms.iter().map(|a| a.weight))
    }

    /// `∫ |z|^p dμ`.
    pub fn moment(&self, p: f64) -> f64 {
        ksum(self.atoms.iter().map(|a| a.weight * pow_p(a.radius(), p)))
    }

    /// Applies `map` to every position. Images at the origin are dropped
    /// (their mass is absorbed by the reservoir); coinciding images merge.
    pub fn map_positions<F: Fn(&[f64]) -> Vec<f64>>(&self, out_dim: usize, map: F) -> Self {
        assert!(out_dim > 0);
        let atoms = self
            .atoms
            .iter()
            .filter_map(|a| {
                let z = map(&a.position);
                assert_eq!(z.len(), out_dim, "map returned a point of the wrong dimension");
                if z.iter().all(|&c| c == 0.0) {
                    None
                } else {
                    Some(Atom::new(z, a.weight))
                }
            })
            .collect();
        Self::canonical(out_dim, atoms)
    }

    /// Sum of two measures on the same space.
    pub fn add(&self, other: &Self) -> Result<Self, MeasureError> {
        if self.dim != other.dim {
            return Err(MeasureError::DimensionMismatch(self.dim, other.dim));
        }
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        Ok(Self::canonical(self.dim, atoms))
    }

    /// Restriction to the open ball `B_r`.
    pub fn restrict_inside(&self, r: f64) -> Self {
        self.filtered(|a| a.radius() < r)
    }

    pub fn from_json_str(text: &str) -> Result<Self, MeasureError> {
        let file: MeasureFile = serde_json::from_str(text).map_err(|e| MeasureError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        file.into_measure()
    }

    pub fn load(path: &Path) -> Result<Self, MeasureError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MeasureError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json_str(&text)
    }

    pub fn to_file(&self) -> MeasureFile {
        MeasureFile {
            dim: self.dim,
            atoms: self.atoms.iter().map(|a| AtomRecord { z: a.position.clone(), w: a.weight }).collect(),
        }
    }
}

/// On-disk form: `{ "dim": d, "atoms": [ { "z": [..], "w": .. } ] }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureFile {
    pub dim: usize,
    pub atoms: Vec<AtomRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomRecord {
    pub z: Vec<f64>,
    pub w: f64,
}

impl MeasureFile {
    pub fn into_measure(self) -> Result<DiscreteMeasure, MeasureError> {
        DiscreteMeasure::new(self.dim, self.atoms.into_iter().map(|a| Atom::new(a.z, a.w)).collect())
    }
}

/// Split of a measure into the parts inside and outside the open unit ball.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureDecomposition {
    pub hat: DiscreteMeasure,
    pub check: DiscreteMeasure,
}

/// `N_p(μ) = ∫ min(1, |z|^p) dμ`.
pub fn n_p(mu: &DiscreteMeasure, p: f64) -> f64 {
    assert!((1.0..=2.0).contains(&p), "p = {p} outside [1, 2]");
    ksum(mu.atoms.iter().map(|a| a.weight * pow_p(a.radius(), p).min(1.0)))
}

/// `μ̂ = μ|_{B_1}`, `μ̌ = μ|_{B_1^c}`; atoms on the unit sphere go to `μ̌`.
pub fn decompose(mu: &DiscreteMeasure) -> MeasureDecomposition {
    MeasureDecomposition { hat: mu.filtered(|a| a.radius() < 1.0), check: mu.filtered(|a| a.radius() >= 1.0) }
}

/// `μ_r(·) = μ(· ∩ B_r^c)`: keeps atoms with `|z| ≥ r`.
pub fn restrict_outside(mu: &DiscreteMeasure, r: f64) -> DiscreteMeasure {
    assert!(r > 0.0, "radius must be positive");
    mu.filtered(|a| a.radius() >= r)
}

/// Total variation of `μ − ν`.
pub fn tv_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64, MeasureError> {
    if mu.dim != nu.dim {
        return Err(MeasureError::DimensionMismatch(mu.dim, nu.dim));
    }
    let (a, b) = (&mu.atoms, &nu.atoms);
    let (mut i, mut j) = (0, 0);
    let mut terms = Vec::with_capacity(a.len() + b.len());
    while i < a.len() || j < b.len() {
        let ord = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => cmp_positions(&x.position, &y.position),
            (Some(_), None) => Ordering::Less,
            _ => Ordering::Greater,
        };
        match ord {
            Ordering::Less => {
                terms.push(a[i].weight);
                i += 1;
            }
            Ordering::Greater => {
                terms.push(b[j].weight);
                j += 1;
            }
            Ordering::Equal => {
                terms.push((a[i].weight - b[j].weight).abs());
                i += 1;
                j += 1;
            }
        }
    }
    Ok(ksum(terms))
}

/// `dμ_p = |z|^p dμ`.
pub fn weight_by_power(mu: &DiscreteMeasure, p: f64) -> DiscreteMeasure {
    assert!((1.0..=2.0).contains(&p), "p = {p} outside [1, 2]");
    let atoms = mu
        .atoms
        .iter()
        .map(|a| Atom::new(a.position.clone(), a.weight * pow_p(a.radius(), p)))
        .filter(|a| a.weight > 0.0)
        .collect();
    DiscreteMeasure { dim: mu.dim, atoms }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(points: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::from_1d(points).unwrap()
    }

    #[test]
    fn n_p_examples() {
        assert_eq!(n_p(&DiscreteMeasure::empty(1), 2.0), 0.0);
        assert_eq!(n_p(&m1(&[(2.0, 3.0)]), 1.0), 3.0);
        // 2·0.25 + 1·min(1, 9)
        assert_eq!(n_p(&m1(&[(0.5, 2.0), (3.0, 1.0)]), 2.0), 1.5);
    }

    #[test]
    fn decompose_boundary_goes_to_check() {
        let d = decompose(&m1(&[(0.5, 1.0), (1.0, 1.0), (2.0, 1.0)]));
        assert_eq!(d.hat, m1(&[(0.5, 1.0)]));
        assert_eq!(d.check, m1(&[(1.0, 1.0), (2.0, 1.0)]));
        let e = decompose(&DiscreteMeasure::empty(2));
        assert!(e.hat.is_empty() && e.check.is_empty());
        let inside = decompose(&m1(&[(0.1, 1.0), (-0.9, 2.0)]));
        assert!(inside.check.is_empty());
        assert_eq!(inside.hat.len(), 2);
    }

    #[test]
    fn restrict_outside_examples() {
        let mu = m1(&[(0.1, 1.0), (0.5, 1.0)]);
        assert!(restrict_outside(&mu, 10.0).is_empty());
        assert_eq!(restrict_outside(&mu, 0.01), mu);
        assert_eq!(restrict_outside(&mu, 0.3), m1(&[(0.5, 1.0)]));
    }

    #[test]
    fn tv_examples() {
        let mu = m1(&[(0.5, 1.0), (-0.2, 3.0)]);
        assert_eq!(tv_distance(&mu, &mu).unwrap(), 0.0);
        assert_eq!(tv_distance(&m1(&[(0.5, 1.0)]), &m1(&[(0.7, 2.0)])).unwrap(), 3.0);
        assert_eq!(tv_distance(&m1(&[(0.5, 1.0)]), &m1(&[(0.5, 2.0)])).unwrap(), 1.0);
        let two = DiscreteMeasure::empty(2);
        assert!(matches!(tv_distance(&mu, &two), Err(MeasureError::DimensionMismatch(1, 2))));
    }

    #[test]
    fn weight_by_power_examples() {
        assert_eq!(weight_by_power(&m1(&[(1.0, 2.0)]), 2.0), m1(&[(1.0, 2.0)]));
        assert_eq!(weight_by_power(&m1(&[(0.5, 4.0)]), 2.0), m1(&[(0.5, 1.0)]));
        assert!(weight_by_power(&DiscreteMeasure::empty(1), 2.0).is_empty());
    }

    #[test]
    fn construction_rejects_bad_atoms() {
        assert!(matches!(m1_err(&[(0.0, 1.0)]), MeasureError::AtomAtOrigin { index: 0 }));
        assert!(matches!(m1_err(&[(0.5, 1.0), (0.2, 0.0)]), MeasureError::NonPositiveWeight { index: 1, .. }));
        assert!(matches!(m1_err(&[(f64::NAN, 1.0)]), MeasureError::NonFinite { index: 0 }));
        assert!(matches!(
            DiscreteMeasure::new(2, vec![Atom::new(vec![1.0], 1.0)]),
            Err(MeasureError::AtomDimension { index: 0, expected: 2, found: 1 })
        ));
        assert!(matches!(DiscreteMeasure::new(0, vec![]), Err(MeasureError::ZeroDimension)));
    }

    fn m1_err(points: &[(f64, f64)]) -> MeasureError {
        DiscreteMeasure::from_1d(points).unwrap_err()
    }

    #[test]
    fn duplicates_merge_and_order_is_canonical() {
        let mu = m1(&[(0.5, 1.0), (-0.3, 1.0), (0.5, 2.5)]);
        assert_eq!(mu.atoms().len(), 2);
        assert_eq!(mu.atoms()[0].position, vec![-0.3]);
        assert_eq!(mu.atoms()[1].weight, 3.5);
        // -0.0 and 0.0 coordinates are the same point
        let a = DiscreteMeasure::new(2, vec![Atom::new(vec![-0.0, 1.0], 1.0), Atom::new(vec![0.0, 1.0], 1.0)])
            .unwrap();
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn json_roundtrip_and_errors() {
        let text = r#"{ "dim": 2, "atoms": [ { "z": [0.5, 0.0], "w": 1.5 }, { "z": [0.0, -2.0], "w": 1 } ] }"#;
        let mu = DiscreteMeasure::from_json_str(text).unwrap();
        assert_eq!(mu.len(), 2);
        let back = serde_json::to_string(&mu.to_file()).unwrap();
        assert_eq!(DiscreteMeasure::from_json_str(&back).unwrap(), mu);

        let origin = r#"{ "dim": 1, "atoms": [ { "z": [0.0], "w": 1 } ] }"#;
        assert!(matches!(DiscreteMeasure::from_json_str(origin), Err(MeasureError::AtomAtOrigin { .. })));
        let broken = "{ \"dim\": 1,\n  \"atoms\": [ { \"z\": [0.5] \"w\": 1 } ] }";
        match DiscreteMeasure::from_json_str(broken) {
            Err(MeasureError::Json { line, column, .. }) => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn map_positions_drops_origin_images() {
        let mu = m1(&[(1.0, 3.0), (0.5, 1.0)]);
        let doubled = mu.map_positions(1, |z| vec![2.0 * z[0]]);
        assert_eq!(doubled, m1(&[(2.0, 3.0), (1.0, 1.0)]));
        assert!(mu.map_positions(1, |_| vec![0.0]).is_empty());
        let collapsed = mu.map_positions(1, |_| vec![0.7]);
        assert_eq!(collapsed, m1(&[(0.7, 4.0)]));
    }
}
