//! Randomized invariant suites behind `verify`, with replayable reproducers.
//!
//! Instance `i` of a suite is drawn from a ChaCha8 stream keyed by
//! `(seed, i)`, so a single instance can be regenerated or replayed without
//! running the ones before it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    positive_part_dual_bound, pushforward_bound, restricted_integral_bound, restriction_bound, tv_power_bound,
    RadialProfile,
};
use crate::measures::{restrict_outside, Atom, DiscreteMeasure, MeasureFile};
use crate::transport::{brute_force_unit, check_duals, dual_value, k_support_check, solve, CostSpec};
use crate::viscosity::{
    coupling_inequality_check, default_cp, inf_convolution, node_distance, snap_to_lattice, sup_convolution,
    CouplingVariant, GridFunction, PenalizationSpec,
};

pub const SUITES: [&str; 7] = ["metric", "duality", "oracle", "ksupport", "bounds", "convolution", "coupling"];

/// Tolerance used by each check of `k`-support membership.
pub const K_TOL: f64 = 1e-9;

/// Default primary tolerance of a suite (what `--tol` overrides).
pub fn default_tol(suite: &str) -> Option<f64> {
    Some(match suite {
        "metric" => 1e-10,
        "duality" => 1e-9,
        "oracle" => 1e-10,
        "ksupport" => K_TOL,
        "bounds" => 1e-8,
        "convolution" => 1e-8,
        "coupling" => 1e-8,
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub scale: f64,
    pub shift: Vec<f64>,
}

impl Affine {
    fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.shift).map(|(a, b)| self.scale * a + b).collect()
    }
}

/// Everything needed to rerun one instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Case {
    Pair { mu: MeasureFile, nu: MeasureFile, p: f64 },
    Triple { a: MeasureFile, b: MeasureFile, c: MeasureFile, p: f64 },
    Bounds {
        mu: MeasureFile,
        nu: MeasureFile,
        extra: MeasureFile,
        p: f64,
        r: f64,
        profile: Vec<(f64, f64)>,
        t1: Affine,
        t2: Affine,
    },
    Grid { u: GridFunction },
    Coupling { u: GridFunction, v: GridFunction, spec: PenalizationSpec, mu: MeasureFile, nu: MeasureFile, cp: f64 },
}

/// One measured quantity; it passes when `value <= limit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub check: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

fn measure(check: &str, value: f64, limit: f64) -> Measurement {
    Measurement { check: check.to_string(), value, limit, pass: value <= limit }
}

fn failed(check: &str, message: String) -> Measurement {
    Measurement { check: format!("{check}: {message}"), value: f64::INFINITY, limit: 0.0, pass: false }
}

/// Self-contained failure bundle, replayable with `verify --replay`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reproducer {
    pub suite: String,
    pub seed: u64,
    pub instance: usize,
    pub tol: f64,
    pub case: Case,
    pub failed: Vec<Measurement>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckSummary {
    pub check: String,
    pub instances: usize,
    pub failures: usize,
    /// Largest `value − limit` seen.
    pub worst_margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteOutcome {
    pub suite: String,
    pub seed: u64,
    pub n: usize,
    pub tol: f64,
    pub checks: Vec<CheckSummary>,
    pub first_failure: Option<Reproducer>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.failures == 0)
    }

    pub fn check(&self, name: &str) -> Option<&CheckSummary> {
        self.checks.iter().find(|c| c.check == name)
    }
}

fn instance_rng(seed: u64, instance: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(instance as u64);
    rng
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = crate::numeric::norm(&v);
        if n > 1e-3 && n <= 1.0 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

/// `n` atoms with radii in `[r_lo, r_hi)` and weights in `[w_lo, w_hi)`;
/// `w_lo == w_hi` gives exact weights.
fn random_measure(rng: &mut ChaCha8Rng, dim: usize, n: usize, radii: (f64, f64), weights: (f64, f64)) -> DiscreteMeasure {
    let atoms = (0..n)
        .map(|_| {
            let r = rng.random_range(radii.0..radii.1);
            let z = unit_vector(rng, dim).into_iter().map(|c| r * c).collect();
            let w = if weights.0 == weights.1 { weights.0 } else { rng.random_range(weights.0..weights.1) };
            Atom::new(z, w)
        })
        .collect();
    DiscreteMeasure::new(dim, atoms).expect("generated atoms are valid")
}

const PS: [f64; 3] = [1.0, 1.5, 2.0];

/// Random pair with some shared atoms, as used by the duality and
/// `k`-support suites.
fn random_pair(rng: &mut ChaCha8Rng, max_atoms: usize) -> Case {
    let dim = rng.random_range(1..=3);
    let p = PS[rng.random_range(0..3)];
    let (m, n) = (rng.random_range(0..=max_atoms), rng.random_range(0..=max_atoms));
    let mu = random_measure(rng, dim, m, (0.02, 1.6), (0.05, 2.0));
    let mut nu = random_measure(rng, dim, n, (0.02, 1.6), (0.05, 2.0));
    if !mu.is_empty() && rng.random_bool(0.3) {
        // shared support points stress degenerate pivots
        let shared: Vec<Atom> = mu.atoms().iter().take(3).map(|a| Atom::new(a.position.clone(), rng.random_range(0.05..2.0))).collect();
        nu = nu.add(&DiscreteMeasure::new(dim, shared).unwrap()).unwrap();
    }
    Case::Pair { mu: mu.to_file(), nu: nu.to_file(), p }
}

fn random_grid(rng: &mut ChaCha8Rng, shape: Vec<usize>, noise: f64) -> GridFunction {
    let d = shape.len();
    let h = 1.0 / (shape[0] - 1) as f64;
    let waves: Vec<(Vec<f64>, f64, f64)> = (0..5)
        .map(|_| {
            let k: Vec<f64> = (0..d).map(|_| rng.random_range(-15.0..15.0)).collect();
            (k, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(-1.0..1.0))
        })
        .collect();
    let len: usize = shape.iter().product();
    let jitter: Vec<f64> = (0..len).map(|_| noise * rng.random_range(-1.0..1.0)).collect();
    let smooth = GridFunction::from_fn(vec![0.0; d], h, shape.clone(), |x| {
        waves.iter().map(|(k, ph, a)| a * (k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + ph).sin()).sum()
    })
    .unwrap();
    GridFunction::new(vec![0.0; d], h, shape, smooth.values().iter().zip(&jitter).map(|(a, b)| a + b).collect()).unwrap()
}

/// Generates instance `instance` of `suite`.
pub fn generate(suite: &str, seed: u64, instance: usize) -> Option<Case> {
    let rng = &mut instance_rng(seed, instance);
    Some(match suite {
        "duality" | "ksupport" => random_pair(rng, 40),
        "metric" => {
            let dim = rng.random_range(1..=3);
            let p = PS[rng.random_range(0..3)];
            let gen = |rng: &mut ChaCha8Rng| {
                let n = rng.random_range(0..=15);
                random_measure(rng, dim, n, (0.02, 1.6), (0.05, 2.0)).to_file()
            };
            Case::Triple { a: gen(rng), b: gen(rng), c: gen(rng), p }
        }
        "oracle" => {
            let dim = rng.random_range(1..=3);
            let p = PS[rng.random_range(0..3)];
            let (m, n) = (rng.random_range(0..=5), rng.random_range(0..=5));
            let mu = random_measure(rng, dim, m, (0.02, 1.6), (1.0, 1.0));
            let nu = random_measure(rng, dim, n, (0.02, 1.6), (1.0, 1.0));
            Case::Pair { mu: mu.to_file(), nu: nu.to_file(), p }
        }
        "bounds" => {
            let dim = rng.random_range(1..=3);
            let p = PS[rng.random_range(0..3)];
            let gen = |rng: &mut ChaCha8Rng, max: usize| {
                let n = rng.random_range(0..=max);
                random_measure(rng, dim, n, (0.01, 0.99), (0.05, 1.5))
            };
            let (mu, nu, extra) = (gen(rng, 12), gen(rng, 12), gen(rng, 6));
            let a = rng.random_range(0.02..0.5);
            let b = rng.random_range(a + 0.05..1.0);
            let mid = rng.random_range(a + 0.01..b - 0.01);
            let profile = vec![(a, 0.0), (mid, rng.random_range(-1.0..1.0)), (b, 0.0)];
            let affine = |rng: &mut ChaCha8Rng| Affine {
                scale: rng.random_range(0.5..1.5),
                shift: (0..dim).map(|_| rng.random_range(-0.2..0.2)).collect(),
            };
            let (t1, t2) = (affine(rng), affine(rng));
            Case::Bounds {
                mu: mu.to_file(),
                nu: nu.to_file(),
                extra: extra.to_file(),
                p,
                r: rng.random_range(0.05..1.0),
                profile,
                t1,
                t2,
            }
        }
        "convolution" => {
            let shape = if instance.is_multiple_of(2) { vec![512] } else { vec![64, 64] };
            Case::Grid { u: random_grid(rng, shape, 0.05) }
        }
        "coupling" => {
            let shape = if instance.is_multiple_of(2) { vec![161] } else { vec![25, 25] };
            let dim = shape.len();
            let u = random_grid(rng, shape.clone(), 0.0);
            let v = random_grid(rng, shape, 0.0);
            let p = PS[instance % 3];
            let epsilon = 10f64.powf(rng.random_range(-3.0..-0.3));
            let kappa = 10f64.powf(rng.random_range(-4.0..-0.05));
            let spec = PenalizationSpec::new(epsilon, kappa, p).unwrap();
            let gen = |rng: &mut ChaCha8Rng| {
                let n = rng.random_range(1..=6);
                snap_to_lattice(&random_measure(rng, dim, n, (0.05, 0.5), (0.1, 1.0)), u.h()).to_file()
            };
            let (mu, nu) = (gen(rng), gen(rng));
            Case::Coupling { u, v, spec, mu, nu, cp: default_cp(p).cp }
        }
        _ => return None,
    })
}

fn load(m: &MeasureFile) -> Result<DiscreteMeasure, String> {
    m.clone().into_measure().map_err(|e| e.to_string())
}

/// Runs every check of `suite` on one case.
pub fn check_case(suite: &str, case: &Case, tol: f64) -> Vec<Measurement> {
    match run_checks(suite, case, tol) {
        Ok(m) => m,
        Err(e) => vec![failed("error", e)],
    }
}

fn k_support(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64, tol: f64) -> Result<Measurement, String> {
    let r = solve(mu, nu, CostSpec::new(p).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    Ok(measure("k-support", k_support_check(&r.plan, mu, nu, p, tol).len() as f64, 0.0))
}

fn run_checks(suite: &str, case: &Case, tol: f64) -> Result<Vec<Measurement>, String> {
    let mut out = Vec::new();
    match (suite, case) {
        ("duality", Case::Pair { mu, nu, p }) => {
            let (mu, nu) = (load(mu)?, load(nu)?);
            let cost = CostSpec::new(*p).map_err(|e| e.to_string())?;
            let r = solve(&mu, &nu, cost).map_err(|e| e.to_string())?;
            let primal = r.plan.cost(&mu, &nu, cost);
            let dual = dual_value(&r.duals, &mu, &nu, cost).map_err(|e| e.to_string())?;
            out.push(measure("duality-gap", (primal - dual).abs() / (1.0 + primal), tol));
            out.push(measure("reported-value", (r.value - primal).abs() / (1.0 + primal), tol));
            out.push(measure("dual-feasible", check_duals(&r.duals, &mu, &nu, cost).is_err() as u8 as f64, 0.0));
            let plan_errors = crate::transport::verify_plan(&r.plan, &mu, &nu).len();
            out.push(measure("plan-marginals", plan_errors as f64, 0.0));
            out.push(measure("k-support", k_support_check(&r.plan, &mu, &nu, *p, K_TOL).len() as f64, 0.0));
        }
        ("ksupport", Case::Pair { mu, nu, p }) => {
            out.push(k_support(&load(mu)?, &load(nu)?, *p, tol)?);
        }
        ("oracle", Case::Pair { mu, nu, p }) => {
            let (mu, nu) = (load(mu)?, load(nu)?);
            let cost = CostSpec::new(*p).map_err(|e| e.to_string())?;
            let r = solve(&mu, &nu, cost).map_err(|e| e.to_string())?;
            let brute = brute_force_unit(&mu, &nu, *p).map_err(|e| e.to_string())?;
            out.push(measure("oracle-value", (r.value - brute).abs(), tol));
            out.push(measure("k-support", k_support_check(&r.plan, &mu, &nu, *p, K_TOL).len() as f64, 0.0));
        }
        ("metric", Case::Triple { a, b, c, p }) => {
            let (a, b, c) = (load(a)?, load(b)?, load(c)?);
            let cost = CostSpec::new(*p).map_err(|e| e.to_string())?;
            let mut k_viol = 0;
            let mut d = |x: &DiscreteMeasure, y: &DiscreteMeasure| -> Result<f64, String> {
                let r = solve(x, y, cost).map_err(|e| e.to_string())?;
                k_viol += k_support_check(&r.plan, x, y, *p, K_TOL).len();
                Ok(r.value.max(0.0).powf(1.0 / p))
            };
            let (ab, ba, bc, ac, aa) = (d(&a, &b)?, d(&b, &a)?, d(&b, &c)?, d(&a, &c)?, d(&a, &a)?);
            out.push(measure("symmetry", (ab - ba).abs(), tol));
            out.push(measure("triangle", ac - ab - bc, 1e-8));
            out.push(measure("identity", aa, 0.0));
            out.push(measure("k-support", k_viol as f64, 0.0));
        }
        ("bounds", Case::Bounds { mu, nu, extra, p, r, profile, t1, t2 }) => {
            let (mu, nu, extra) = (load(mu)?, load(nu)?, load(extra)?);
            let p = *p;
            let e = |x: crate::bounds::BoundsError| x.to_string();
            let dp = |x: &DiscreteMeasure, y: &DiscreteMeasure| -> Result<f64, String> {
                Ok(solve(x, y, CostSpec::new(p).unwrap()).map_err(|e| e.to_string())?.value)
            };
            // each value is exact − bound; the bound dominates when it is <= tol
            let d = dp(&mu, &nu)?.max(0.0).powf(1.0 / p);
            out.push(measure("tv-power", d - tv_power_bound(&mu, &nu, p).map_err(e)?, tol));
            let plus = nu.add(&extra).map_err(|e| e.to_string())?;
            out.push(measure("positive-part", dp(&plus, &nu)? - positive_part_dual_bound(&plus, &nu, p).map_err(e)?, tol));
            let rest = restrict_outside(&mu, *r);
            out.push(measure("restriction", dp(&mu, &rest)? - restriction_bound(&mu, *r, p).map_err(e)?, tol));
            let (f, g) = (|z: &[f64]| t1.apply(z), |z: &[f64]| t2.apply(z));
            let exact = dp(&mu.map_positions(mu.dim(), f), &mu.map_positions(mu.dim(), g))?;
            out.push(measure("pushforward", exact - pushforward_bound(f, g, &mu, p), tol));
            let psi = RadialProfile::new(profile).map_err(e)?;
            let (lhs, rhs) = restricted_integral_bound(&mu, &nu, &psi, p).map_err(e)?;
            out.push(measure("restricted-integral", lhs - rhs, tol));
        }
        ("convolution", Case::Grid { u }) => {
            let deltas = [1e-3, 1e-2, 1e-1];
            let norm_u = u.sup_norm();
            let mut prev: Option<(GridFunction, GridFunction)> = None;
            let (mut mono, mut order, mut semi, mut local) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for delta in deltas {
                let sup = sup_convolution(u, delta).map_err(|e| e.to_string())?;
                let inf = inf_convolution(u, delta).map_err(|e| e.to_string())?;
                let (sv, iv) = (sup.function.values(), inf.function.values());
                for k in 0..u.len() {
                    order = order.max(u.values()[k] - sv[k]).max(iv[k] - u.values()[k]);
                    let reach = (2.0 * delta * norm_u).sqrt();
                    local = local.max(node_distance(u, k, sup.argmax[k]) - reach);
                    local = local.max(node_distance(u, k, inf.argmax[k]) - reach);
                    for axis in 0..u.dim() {
                        if let Some(dd) = sup.function.second_difference(k, axis) {
                            semi = semi.max(-2.0 / delta - dd);
                        }
                        if let Some(dd) = inf.function.second_difference(k, axis) {
                            semi = semi.max(dd - 2.0 / delta);
                        }
                    }
                }
                if let Some((ps, pi)) = &prev {
                    for k in 0..u.len() {
                        mono = mono.max(ps.values()[k] - sv[k]).max(iv[k] - pi.values()[k]);
                    }
                }
                prev = Some((sup.function, inf.function));
            }
            out.push(measure("delta-monotone", mono, 0.0));
            out.push(measure("ordering", order, 0.0));
            out.push(measure("semiconvexity", semi, tol));
            out.push(measure("localization", local, 1e-12));
        }
        ("coupling", Case::Coupling { u, v, spec, mu, nu, cp }) => {
            let (mu, nu) = (load(mu)?, load(nu)?);
            let r = coupling_inequality_check(u, v, spec, &mu, &nu, *cp, CouplingVariant::Singular)
                .map_err(|e| e.to_string())?;
            out.push(measure("coupling", r.lhs - r.rhs, tol));
        }
        _ => return Err(format!("case kind does not belong to suite `{suite}`")),
    }
    Ok(out)
}

/// Runs `n` instances of `suite` (in parallel, summarized in instance
/// order). `None` for an unknown suite name.
pub fn run_suite(suite: &str, n: usize, seed: u64, tol: Option<f64>) -> Option<SuiteOutcome> {
    let tol = tol.or_else(|| default_tol(suite))?;
    let results: Vec<(usize, Vec<Measurement>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let case = generate(suite, seed, i).expect("known suite");
            (i, check_case(suite, &case, tol))
        })
        .collect();
    let mut checks: Vec<CheckSummary> = Vec::new();
    let mut first_failure = None;
    for (i, ms) in &results {
        for m in ms {
            let margin = m.value - m.limit;
            match checks.iter_mut().find(|c| c.check == m.check) {
                Some(c) => {
                    c.instances += 1;
                    c.failures += !m.pass as usize;
                    c.worst_margin = c.worst_margin.max(margin);
                }
                None => checks.push(CheckSummary {
                    check: m.check.clone(),
                    instances: 1,
                    failures: !m.pass as usize,
                    worst_margin: margin,
                }),
            }
        }
        if first_failure.is_none() && ms.iter().any(|m| !m.pass) {
            first_failure = Some(Reproducer {
                suite: suite.to_string(),
                seed,
                instance: *i,
                tol,
                case: generate(suite, seed, *i).expect("known suite"),
                failed: ms.iter().filter(|m| !m.pass).cloned().collect(),
            });
        }
    }
    Some(SuiteOutcome { suite: suite.to_string(), seed, n, tol, checks, first_failure })
}
