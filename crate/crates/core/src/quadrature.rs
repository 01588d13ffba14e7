//! One-dimensional quadrature rules shared by the measure, density and
//! transport modules.

use std::f64::consts::PI;

/// Gauss–Hermite rule for the probabilists' weight `exp(-x²/2)/√(2π)`.
///
/// Returns `(nodes, weights)` in increasing node order with weights summing
/// to one. Nodes start from the eigenvalues of the Jacobi matrix and are
/// polished by Newton steps on the orthonormal recurrence; weights come from
/// the Christoffel function evaluated in log space, so tiny outer weights keep
/// full relative accuracy.
pub fn gauss_hermite(level: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(level >= 1, "Gauss-Hermite level must be positive");
    let n = level;
    if n == 1 {
        return (vec![0.0], vec![1.0]);
    }
    let mut diag = vec![0.0; n];
    let mut off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    off.push(0.0);
    tridiagonal_eigenvalues(&mut diag, &mut off);
    diag.sort_by(f64::total_cmp);

    let mut nodes = diag;
    let mut log_w = vec![0.0; n];
    for (x, lw) in nodes.iter_mut().zip(log_w.iter_mut()) {
        for _ in 0..8 {
            let (pn, pn1, _) = scaled_hermite(*x, n);
            // p̂_n' = √n p̂_{n-1}
            let step = pn / ((n as f64).sqrt() * pn1);
            *x -= step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        *lw = -scaled_hermite(*x, n).2;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    // symmetrise
    for i in 0..n / 2 {
        let x = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let lw = 0.5 * (log_w[i] + log_w[n - 1 - i]);
        log_w[i] = lw;
        log_w[n - 1 - i] = lw;
    }
    let mut weights: Vec<f64> = log_w.iter().map(|v| v.exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    (nodes, weights)
}

/// Orthonormal probabilists' Hermite values at `x`: returns
/// `(p̂_n, p̂_{n-1})` scaled by a common positive factor, and
/// `ln Σ_{k<n} p̂_k(x)²` unscaled.
fn scaled_hermite(x: f64, n: usize) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut log_scale = 0.0;
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
        let big = cur.abs().max(prev.abs());
        if big > 1e100 {
            cur /= big;
            prev /= big;
            sum_sq /= big * big;
            log_scale += big.ln();
        }
    }
    (cur, prev, sum_sq.ln() + 2.0 * log_scale)
}

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL.
/// `off[i]` couples rows `i` and `i + 1`; `off[n-1]` is ignored.
fn tridiagonal_eigenvalues(diag: &mut [f64], off: &mut [f64]) {
    let n = diag.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 200, "QL iteration failed to converge");
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre order must be positive");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|v| v * half).collect(),
    )
}

/// Composite Simpson nodes and weights on `[a, b]` with `nodes` points
/// (`nodes` must be odd and at least 3).
pub fn simpson(nodes: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(nodes >= 3 && nodes % 2 == 1, "Simpson needs an odd node count >= 3");
    let h = (b - a) / (nodes - 1) as f64;
    let xs = (0..nodes).map(|i| a + h * i as f64).collect();
    let ws = (0..nodes)
        .map(|i| {
            let c = if i == 0 || i == nodes - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect();
    (xs, ws)
}

/// Stable `log(Σ exp(x_i))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Stable `log(Σ w_i exp(x_i))` for nonnegative weights.
pub fn log_weighted_sum_exp(xs: &[f64], ws: &[f64]) -> f64 {
    let terms: Vec<f64> = xs
        .iter()
        .zip(ws)
        .filter(|(_, w)| **w > 0.0)
        .map(|(x, w)| x + w.ln())
        .collect();
    log_sum_exp(&terms)
}

/// `log(Φ(b) - Φ(a))` for the standard normal CDF, accurate far in the
/// tails.
pub fn log_normal_interval(a: f64, b: f64) -> f64 {
    if b <= a {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        log_diff(log_upper_tail(a), log_upper_tail(b))
    } else if b <= 0.0 {
        log_diff(log_upper_tail(-b), log_upper_tail(-a))
    } else {
        (1.0 - upper_tail(-a) - upper_tail(b)).ln()
    }
}

fn upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// `log P(Z > x)` for `x >= 0`, switching to the asymptotic Mills-ratio
/// expansion once `erfc` underflows.
pub fn log_upper_tail(x: f64) -> f64 {
    if x < 30.0 {
        return upper_tail(x).ln();
    }
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    -0.5 * x2 - x.ln() - 0.5 * (2.0 * PI).ln() + series.ln()
}

/// `log(exp(a) - exp(b))` for `a >= b`.
pub fn log_diff(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (-(b - a).exp()).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        for level in [2, 3, 8, 33, 96, 200, 400] {
            let (x, w) = gauss_hermite(level);
            let m0: f64 = w.iter().sum();
            let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
            assert!((m0 - 1.0).abs() < 1e-14, "level {level}");
            assert!((m2 - 1.0).abs() < 1e-12, "level {level}: {m2}");
            if level >= 3 {
                let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
                assert!((m4 - 3.0).abs() < 1e-11, "level {level}: {m4}");
            }
        }
    }

    #[test]
    fn hermite_matches_reference_tail() {
        // numpy.polynomial.hermite_e.hermegauss(200), normalised
        let (x, w) = gauss_hermite(200);
        assert!((x[199] - 27.349_827_752_3).abs() < 1e-8);
        assert!((w[199] / 1.257_631_33e-163 - 1.0).abs() < 1e-6);
        assert!((x[195] - 24.996_398).abs() < 1e-6);
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre_on(5, 0.0, 2.0);
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(9)).sum();
        assert!((v - 2f64.powi(10) / 10.0).abs() < 1e-10);
    }

    #[test]
    fn simpson_exact_on_cubics() {
        let (x, w) = simpson(9, 0.0, 1.0);
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(3)).sum();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn normal_tail_logs() {
        let direct = (upper_tail(1.0) - upper_tail(2.0)).ln();
        assert!((log_normal_interval(1.0, 2.0) - direct).abs() < 1e-12);
        let whole = log_normal_interval(-1.0, 1.0).exp();
        assert!((whole - 0.682_689_492_137_085_9).abs() < 1e-14);
        // continuity of the asymptotic branch
        let a = upper_tail(29.999).ln();
        let b = log_upper_tail(30.0);
        assert!((a - b).abs() < 0.05);
        assert!(log_upper_tail(1e4).is_finite());
    }
}
