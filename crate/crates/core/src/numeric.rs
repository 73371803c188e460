//! Small numerical kernels shared across the crate: compensated summation,
//! Gauss–Legendre rules and adaptive Gauss–Kronrod integration.

/// Kahan–Babuška (Neumaier) compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Compensated sum of an iterator.
pub fn ksum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<KahanSum>().value()
}

/// Euclidean norm.
pub fn norm(z: &[f64]) -> f64 {
    z.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Euclidean distance.
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `r^p` with exact branches for the common exponents 1 and 2.
pub fn pow_p(r: f64, p: f64) -> f64 {
    if p == 1.0 {
        r
    } else if p == 2.0 {
        r * r
    } else if r == 0.0 {
        0.0
    } else {
        r.powf(p)
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

// Gauss–Kronrod 7/15 abscissae and weights (positive half, centre last).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

/// Globally adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// Bisects the interval with the largest local error estimate until the total
/// estimate drops below `abs_tol` or the interval budget is exhausted.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Integral {
    if a == b {
        return Integral { value: 0.0, error: 0.0, intervals: 0 };
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut pieces: Vec<(f64, f64, f64, f64)> = Vec::new();
    let (v, e) = gk15(&f, lo, hi);
    pieces.push((lo, hi, v, e));
    const MAX_INTERVALS: usize = 4000;
    loop {
        let total_err: f64 = pieces.iter().map(|p| p.3).sum();
        if total_err <= abs_tol || pieces.len() >= MAX_INTERVALS {
            break;
        }
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (l, r, _, _) = pieces.swap_remove(idx);
        let m = 0.5 * (l + r);
        if m <= l || m >= r {
            // Interval cannot be split further in floating point.
            let (v, _) = gk15(&f, l, r);
            pieces.push((l, r, v, 0.0));
            continue;
        }
        let (v1, e1) = gk15(&f, l, m);
        let (v2, e2) = gk15(&f, m, r);
        pieces.push((l, m, v1, e1));
        pieces.push((m, r, v2, e2));
    }
    pieces.sort_by(|x, y| x.0.total_cmp(&y.0));
    Integral {
        value: sign * ksum(pieces.iter().map(|p| p.2)),
        error: pieces.iter().map(|p| p.3).sum(),
        intervals: pieces.len(),
    }
}

/// Integrates over `[a, b]` after splitting at the given interior breakpoints
/// (points where the integrand has kinks or jumps).
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
) -> Integral {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&t| t > a && t < b).collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let n = pts.len() - 1;
    let mut acc = KahanSum::new();
    let mut err = 0.0;
    let mut intervals = 0;
    for w in pts.windows(2) {
        let r = integrate(&f, w[0], w[1], abs_tol / n as f64);
        acc.add(r.value);
        err += r.error;
        intervals += r.intervals;
    }
    Integral { value: acc.value(), error: err, intervals }
}

/// Surface area of the unit sphere S^{d-1} in R^d (d = 1 counts the two
/// points ±1).
pub fn unit_sphere_area(d: usize) -> f64 {
    use std::f64::consts::PI;
    match d {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => {
            // 2 π^{d/2} / Γ(d/2) via the recursion |S^{d-1}| = 2π/(d-2) |S^{d-3}|.
            2.0 * PI / (d as f64 - 2.0) * unit_sphere_area(d - 2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_recovers_small_terms() {
        let mut v = vec![1.0e16];
        v.extend(std::iter::repeat_n(1.0, 1000));
        v.push(-1.0e16);
        assert_eq!(ksum(v), 1000.0);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            // degree 2n-1 monomial with even power
            let deg = 2 * n - 2;
            let approx: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
            let exact = 2.0 / (deg as f64 + 1.0);
            assert!((approx - exact).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn gk_handles_power_law() {
        // ∫_{1e-3}^1 r^{-1.5} dr = 2 (r^{-1/2}) |... = 2(1e-3^{-1/2} - 1)
        let r = integrate(|t| t.powf(-1.5), 1e-3, 1.0, 1e-11);
        let exact = 2.0 * (1e-3f64.powf(-0.5) - 1.0);
        assert!((r.value - exact).abs() < 1e-9, "{} vs {}", r.value, exact);
    }

    #[test]
    fn gk_integrable_endpoint_singularity() {
        let r = integrate(|t| t.powf(-0.5), 0.0, 1.0, 1e-10);
        assert!((r.value - 2.0).abs() < 1e-8, "{}", r.value);
    }

    #[test]
    fn breaks_are_respected() {
        let f = |t: f64| if t < 0.3 { 1.0 } else { 2.0 };
        let r = integrate_with_breaks(f, 0.0, 1.0, &[0.3], 1e-12);
        assert!((r.value - (0.3 + 1.4)).abs() < 1e-13);
    }

    #[test]
    fn sphere_areas() {
        assert_eq!(unit_sphere_area(1), 2.0);
        assert!((unit_sphere_area(4) - 2.0 * std::f64::consts::PI.powi(2)).abs() < 1e-12);
    }
}
