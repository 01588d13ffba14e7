//! Young-type functions of Zygmund, exponential and `Φ_α` type, their
//! modulars and Luxembourg norms under the Gaussian measure.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::gaussian::{Cubature, EstimateStatus, ExpectationScheme, GaussianMeasure, NormEstimate};
use crate::par::{self, Execution};
use crate::{LabError, Result};

/// Bracket expansion stops here; beyond it the norm is reported unbounded.
pub const LAMBDA_CAP: f64 = 1e12;

/// `log⁺ t = max{1, log t}` (so `log⁺ t >= 1` for every `t`).
#[inline]
pub fn log_plus(t: f64) -> f64 {
    if t > E {
        t.ln()
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum OrliczFunction {
    /// `t (log⁺t)^r (log⁺log⁺t)^s`
    Zygmund { r: f64, s: f64 },
    /// `exp{t / (log⁺t)^γ} - 1`
    ExpLog { gamma: f64 },
    /// `t exp{(log⁺t)^α}`
    PhiAlpha { alpha: f64 },
}

impl OrliczFunction {
    pub fn zygmund(r: f64, s: f64) -> Result<Self> {
        if !(r >= 0.0 && s >= 0.0 && r.is_finite() && s.is_finite()) {
            return Err(LabError::Domain(format!("Zygmund exponents must be >= 0, got ({r}, {s})")));
        }
        Ok(Self::Zygmund { r, s })
    }

    pub fn exp_log(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(LabError::Domain(format!("gamma must be >= 0, got {gamma}")));
        }
        Ok(Self::ExpLog { gamma })
    }

    pub fn phi_alpha(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(LabError::Domain(format!("alpha must be > 0, got {alpha}")));
        }
        Ok(Self::PhiAlpha { alpha })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Zygmund { r, s } => Self::zygmund(r, s).map(|_| ()),
            Self::ExpLog { gamma } => Self::exp_log(gamma).map(|_| ()),
            Self::PhiAlpha { alpha } => Self::phi_alpha(alpha).map(|_| ()),
        }
    }

    pub fn evaluate(&self, t: f64) -> Result<f64> {
        check_arg(t)?;
        Ok(self.value(t))
    }

    /// `ln P(t)`; `-∞` where `P(t) = 0`.
    pub fn log_evaluate(&self, t: f64) -> Result<f64> {
        check_arg(t)?;
        Ok(self.log_value(t))
    }

    /// Unchecked evaluation for `t >= 0`; may return `+∞` on overflow.
    #[inline]
    pub(crate) fn value(&self, t: f64) -> f64 {
        if t > 1e100 {
            return self.log_value(t).exp();
        }
        match *self {
            Self::Zygmund { r, s } => {
                if t == 0.0 {
                    return 0.0;
                }
                let l = log_plus(t);
                t * l.powf(r) * log_plus(l).powf(s)
            }
            Self::ExpLog { gamma } => (t / log_plus(t).powf(gamma)).exp_m1(),
            Self::PhiAlpha { alpha } => t * log_plus(t).powf(alpha).exp(),
        }
    }

    #[inline]
    pub(crate) fn log_value(&self, t: f64) -> f64 {
        if t == 0.0 {
            return f64::NEG_INFINITY;
        }
        match *self {
            Self::Zygmund { r, s } => {
                let l = log_plus(t);
                t.ln() + r * l.ln() + s * log_plus(l).ln()
            }
            Self::ExpLog { gamma } => {
                let u = t / log_plus(t).powf(gamma);
                if u > 30.0 {
                    u + (-(-u).exp()).ln_1p()
                } else {
                    u.exp_m1().ln()
                }
            }
            Self::PhiAlpha { alpha } => t.ln() + log_plus(t).powf(alpha),
        }
    }
}

fn check_arg(t: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        return Err(LabError::Domain(format!("Orlicz functions take t >= 0, got {t}")));
    }
    Ok(())
}

/// `∫ P(|f|) dμ`.
pub fn modular<F>(
    p: OrliczFunction,
    f: F,
    m: &GaussianMeasure,
    scheme: &ExpectationScheme,
) -> Result<NormEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    p.validate()?;
    m.expect(
        |x| {
            let v = f(x).abs();
            if v.is_nan() {
                v
            } else {
                p.value(v)
            }
        },
        scheme,
    )
}

/// Default relative bisection tolerance for a scheme.
pub fn default_tolerance(scheme: &ExpectationScheme) -> f64 {
    if scheme.is_deterministic() {
        1e-6
    } else {
        1e-3
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormOptions {
    pub tol: f64,
    /// Classify integrability from the radial tail profile of `|f|`, so that
    /// divergent modulars are not mistaken for finite node sums.
    pub tail_probe: bool,
    pub exec: Execution,
}

impl NormOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            tail_probe: true,
            exec: Execution::Parallel,
        }
    }
}

/// Radial samples of `|f|` far from the origin.
#[derive(Debug, Clone)]
pub struct TailProfile {
    dim: usize,
    /// Per direction: `(r, |f(r u)|)` for geometrically increasing `r`.
    rays: Vec<Vec<(f64, f64)>>,
}

impl TailProfile {
    /// Probe `|f|` along axis and diagonal rays out to `r = 1e140`.
    pub fn probe<F>(dim: usize, f: &F) -> Self
    where
        F: Fn(&[f64]) -> f64 + ?Sized,
    {
        let rays = probe_directions(dim)
            .into_iter()
            .map(|u| {
                let mut ray = Vec::new();
                for k in 4..=560 {
                    let r = 10f64.powf(k as f64 / 4.0);
                    let x: Vec<f64> = u.iter().map(|c| c * r).collect();
                    let v = f(&x).abs();
                    if !v.is_finite() {
                        break;
                    }
                    ray.push((r, v));
                }
                ray
            })
            .collect();
        Self { dim, rays }
    }

    /// Whether `∫ P(|f|/λ) dμ` diverges judging by the tail.
    ///
    /// Along each ray the exponent ratio `ρ(r) = ln[P(|f|/λ) r^{n-1}] / (r²/2)`
    /// is inspected: `ρ >= 1` beyond `r = 1e3`, or a strictly increasing `ρ`
    /// whose increments decay no faster than `(ln r)^{-1.5}`, means the
    /// integrand outgrows the Gaussian weight.
    pub fn diverges(&self, p: &OrliczFunction, lambda: f64) -> bool {
        let nm1 = (self.dim as f64 - 1.0).max(0.0);
        self.rays.iter().any(|ray| {
            let rho: Vec<(f64, f64)> = ray
                .iter()
                .map(|&(r, v)| {
                    let lp = p.log_value(v / lambda);
                    (r, (lp + nm1 * r.ln()) / (0.5 * r * r))
                })
                .collect();
            if rho.iter().any(|&(r, q)| r >= 1e3 && q >= 1.0) {
                return true;
            }
            // every 20 decades from 1e20 on
            let sparse: Vec<(f64, f64)> = rho
                .iter()
                .filter(|(r, _)| {
                    let d = r.log10().round() as i64;
                    d >= 20 && d % 20 == 0 && (r.log10() - d as f64).abs() < 1e-9
                })
                .map(|&(r, q)| (r.ln(), q))
                .collect();
            if sparse.len() < 4 || sparse.iter().any(|(_, q)| !q.is_finite()) {
                return false;
            }
            let incs: Vec<(f64, f64)> = sparse
                .windows(2)
                .map(|w| (0.5 * (w[0].0 + w[1].0), w[1].1 - w[0].1))
                .collect();
            let scale = sparse.last().map(|(_, q)| q.abs()).unwrap_or(0.0).max(1e-300);
            if incs.iter().any(|&(_, d)| d <= 1e-9 * scale) {
                return false;
            }
            let n = incs.len();
            let (l0, d0) = incs[n - 3];
            let (l1, d1) = incs[n - 1];
            let decay = (d1 / d0).ln() / (l1 / l0).ln();
            decay > -1.5
        })
    }
}

pub(crate) fn probe_directions(dim: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for i in 0..dim {
        for sign in [1.0, -1.0] {
            let mut u = vec![0.0; dim];
            u[i] = sign;
            dirs.push(u);
        }
    }
    if dim >= 2 {
        let norm = (dim as f64).sqrt();
        for mask in 0..(1usize << dim.min(6)) {
            let u = (0..dim)
                .map(|i| if mask >> (i % 6) & 1 == 1 { -1.0 } else { 1.0 } / norm)
                .collect();
            dirs.push(u);
        }
    }
    dirs
}

/// Precomputed node values of `|f|` for repeated modular evaluation.
struct ModularSolver<'a> {
    p: OrliczFunction,
    cubature: &'a Cubature,
    values: Vec<f64>,
    companion: Option<Vec<f64>>,
    tail: Option<TailProfile>,
    exec: Execution,
}

impl ModularSolver<'_> {
    fn at(&self, lambda: f64) -> Result<NormEstimate> {
        if let Some(tail) = &self.tail {
            if tail.diverges(&self.p, lambda) {
                return Ok(NormEstimate::with_status(
                    f64::INFINITY,
                    self.cubature.scheme().clone(),
                    EstimateStatus::Divergent,
                ));
            }
        }
        let p = self.p;
        let main = par::map(self.exec, &self.values, |v| p.value(v / lambda));
        let comp = self
            .companion
            .as_ref()
            .map(|c| par::map(self.exec, c, |v| p.value(v / lambda)));
        self.cubature.estimate_values(&main, comp.as_deref())
    }

    fn level(&self, lambda: f64) -> Result<f64> {
        let g = self.at(lambda)?;
        Ok(if g.is_finite() { g.value } else { f64::INFINITY })
    }
}

/// Luxembourg norm `inf{λ > 0 : ∫ P(|f|/λ) dμ <= 1}` by bisection.
///
/// `G(λ) = ∫ P(|f|/λ) dμ` is nonincreasing in `λ`. The bracket starts at
/// `max(1, ∫|f| dμ)` and is doubled up to [`LAMBDA_CAP`]; past the cap the
/// result is [`EstimateStatus::Unbounded`].
pub fn luxembourg_norm<F>(
    f: F,
    p: OrliczFunction,
    m: &GaussianMeasure,
    scheme: &ExpectationScheme,
    tol: f64,
) -> Result<NormEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    luxembourg_norm_with(f, p, m, scheme, NormOptions::new(tol))
}

pub fn luxembourg_norm_with<F>(
    f: F,
    p: OrliczFunction,
    m: &GaussianMeasure,
    scheme: &ExpectationScheme,
    opts: NormOptions,
) -> Result<NormEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    p.validate()?;
    if !(opts.tol > 0.0) {
        return Err(LabError::Usage("norm tolerance must be positive".into()));
    }
    let cubature = m.cubature(scheme)?;
    let abs_vals = |c: &Cubature| -> Result<Vec<f64>> {
        let vals = par::map_range(opts.exec, c.len(), |i| f(c.point(i)).abs());
        if vals.iter().any(|v| v.is_nan()) {
            return Err(LabError::Evaluation("integrand returned NaN".into()));
        }
        Ok(vals)
    };
    let values = abs_vals(&cubature)?;
    let companion = cubature.companion().map(abs_vals).transpose()?;
    let unbounded = || NormEstimate::with_status(f64::INFINITY, scheme.clone(), EstimateStatus::Unbounded);
    if values.iter().chain(companion.iter().flatten()).any(|v| v.is_infinite()) {
        return Ok(unbounded());
    }
    if values.iter().chain(companion.iter().flatten()).all(|v| *v == 0.0) {
        return Ok(NormEstimate::exact(0.0, scheme.clone()));
    }
    let tail = opts.tail_probe.then(|| TailProfile::probe(m.dim(), &f));
    let mean_abs = crate::gaussian::weighted_sum(cubature.weights(), &values)?;
    let solver = ModularSolver {
        p,
        cubature: &cubature,
        values,
        companion,
        tail,
        exec: opts.exec,
    };

    let mut hi = mean_abs.max(1.0);
    while solver.level(hi)? > 1.0 {
        hi *= 2.0;
        if hi > LAMBDA_CAP {
            return Ok(unbounded());
        }
    }
    let mut lo = hi / 2.0;
    while solver.level(lo)? <= 1.0 {
        hi = lo;
        lo /= 2.0;
        if lo < 1e-300 {
            return Ok(NormEstimate::exact(0.0, scheme.clone()));
        }
    }
    while hi / lo - 1.0 > 0.25 * opts.tol {
        let mid = (lo * hi).sqrt();
        if solver.level(mid)? <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // Propagate the modular's error bar through the slope of G at the root.
    let g = solver.at(hi)?;
    let h = 1e-3;
    let slope = (solver.level(hi * (1.0 - h))? - solver.level(hi * (1.0 + h))?) / (2.0 * h * hi);
    let propagated = if slope > 0.0 && slope.is_finite() {
        g.abs_error / slope
    } else {
        0.0
    };
    Ok(NormEstimate {
        value: hi,
        abs_error: (hi - lo) + propagated,
        scheme: scheme.clone(),
        status: EstimateStatus::Finite,
    })
}

/// The two Orlicz pairings with the `2‖f‖‖g‖` Hölder-type bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// `L log L log log L` against `Exp(L / log L)`.
    LogLogAgainstSubexponential,
    /// `L log L` against `Exp L`.
    LogAgainstExponential,
}

impl Pairing {
    pub fn functions(self) -> (OrliczFunction, OrliczFunction) {
        match self {
            Pairing::LogLogAgainstSubexponential => (
                OrliczFunction::Zygmund { r: 1.0, s: 1.0 },
                OrliczFunction::ExpLog { gamma: 1.0 },
            ),
            Pairing::LogAgainstExponential => (
                OrliczFunction::Zygmund { r: 1.0, s: 0.0 },
                OrliczFunction::ExpLog { gamma: 0.0 },
            ),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualityReport {
    pub pairing: Pairing,
    pub lhs: NormEstimate,
    pub norm_f: NormEstimate,
    pub norm_g: NormEstimate,
    pub rhs: f64,
    pub rhs_error: f64,
    /// `false` when either norm is unbounded; `holds` is then meaningless.
    pub applicable: bool,
    pub holds: bool,
}

/// Check `∫|fg| dμ <= 2 ‖f‖_{P_f} ‖g‖_{P_g}` within error bars.
pub fn duality_bound_check<F, G>(
    f: F,
    g: G,
    pairing: Pairing,
    m: &GaussianMeasure,
    scheme: &ExpectationScheme,
) -> Result<DualityReport>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
    G: Fn(&[f64]) -> f64 + Sync + Send,
{
    let (pf, pg) = pairing.functions();
    let tol = default_tolerance(scheme);
    let norm_f = luxembourg_norm(&f, pf, m, scheme, tol)?;
    let norm_g = luxembourg_norm(&g, pg, m, scheme, tol)?;
    let lhs = m.expect(|x| (f(x) * g(x)).abs(), scheme)?;
    if !norm_f.is_finite() || !norm_g.is_finite() {
        return Ok(DualityReport {
            pairing,
            lhs,
            norm_f,
            norm_g,
            rhs: f64::INFINITY,
            rhs_error: 0.0,
            applicable: false,
            holds: false,
        });
    }
    let rhs = 2.0 * norm_f.value * norm_g.value;
    let rhs_error = 2.0 * (norm_f.abs_error * norm_g.value + norm_g.abs_error * norm_f.value);
    let holds = lhs.is_finite() && lhs.value <= rhs + rhs_error + lhs.abs_error;
    Ok(DualityReport {
        pairing,
        lhs,
        norm_f,
        norm_g,
        rhs,
        rhs_error,
        applicable: true,
        holds,
    })
}

/// `ln sup_t Zygmund(1,1)(t) / Φ_α(t)`.
///
/// Pointwise domination `Zygmund(1,1) <= C_α Φ_α` gives the modular
/// embedding `∫ Zygmund(1,1)(|f|) <= C_α ∫ Φ_α(|f|)`.
pub fn log_embedding_constant(alpha: f64) -> Result<f64> {
    OrliczFunction::phi_alpha(alpha)?;
    // t <= e: ratio is 1/e. t > e: with u = ln t, ratio u log⁺u / exp(u^α).
    let ratio = |v: f64| {
        // v = ln u
        let u = v.exp();
        v.max(0.0) + log_plus(u).ln() - u.powf(alpha)
    };
    let mut best = -1.0_f64;
    let mut best_v = 0.0;
    let steps = 200_000;
    let v_max = 700.0;
    for i in 0..=steps {
        let v = v_max * i as f64 / steps as f64;
        let r = ratio(v);
        if r > best {
            best = r;
            best_v = v;
        }
    }
    // golden-section polish around the grid maximum
    let (mut a, mut b) = (best_v - v_max / steps as f64, best_v + v_max / steps as f64);
    for _ in 0..100 {
        let c = b - 0.618_033_988_749_895 * (b - a);
        let d = a + 0.618_033_988_749_895 * (b - a);
        if ratio(c) > ratio(d) {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(best.max(ratio(0.5 * (a + b))).max(-1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gh(level: usize) -> ExpectationScheme {
        ExpectationScheme::GaussHermite { level }
    }

    #[test]
    fn evaluation_examples() {
        for alpha in [0.1, 0.5, 1.0, 3.0] {
            let p = OrliczFunction::phi_alpha(alpha).unwrap();
            assert!((p.evaluate(1.0).unwrap() - E).abs() < 1e-15);
            assert_eq!(p.evaluate(0.0).unwrap(), 0.0);
        }
        assert_eq!(OrliczFunction::exp_log(0.0).unwrap().evaluate(0.0).unwrap(), 0.0);
        let z = OrliczFunction::zygmund(1.0, 0.0).unwrap();
        let e2 = E * E;
        assert!((z.evaluate(e2).unwrap() - 2.0 * e2).abs() < 1e-12);
        assert!(z.evaluate(-1.0).is_err());
        assert!(OrliczFunction::phi_alpha(0.0).is_err());
        assert!(OrliczFunction::zygmund(-1.0, 0.0).is_err());
    }

    #[test]
    fn log_space_matches_direct() {
        let fams = [
            OrliczFunction::Zygmund { r: 1.0, s: 1.0 },
            OrliczFunction::ExpLog { gamma: 1.0 },
            OrliczFunction::ExpLog { gamma: 0.0 },
            OrliczFunction::PhiAlpha { alpha: 0.5 },
        ];
        for p in fams {
            for t in [0.3, 1.0, 2.0, 7.5, 40.0, 300.0] {
                let direct = p.evaluate(t).unwrap();
                let via_log = p.log_evaluate(t).unwrap().exp();
                assert!((direct - via_log).abs() <= 1e-12 * direct.max(1.0), "{p:?} {t}");
            }
        }
        // no overflow in log space
        let p = OrliczFunction::ExpLog { gamma: 0.0 };
        assert_eq!(p.log_evaluate(1e200).unwrap(), 1e200);
        assert_eq!(p.evaluate(1e200).unwrap(), f64::INFINITY);
    }

    #[test]
    fn norm_of_zero_and_constants() {
        let m = GaussianMeasure::new(1).unwrap();
        let p = OrliczFunction::ExpLog { gamma: 0.0 };
        let z = luxembourg_norm(|_| 0.0, p, &m, &gh(16), 1e-6).unwrap();
        assert_eq!(z.value, 0.0);
        for c in [0.5, 1.0, 3.0] {
            let n = luxembourg_norm(|_| c, p, &m, &gh(16), 1e-8).unwrap();
            let exact = c / 2f64.ln();
            assert!((n.value - exact).abs() <= 2e-8 * exact, "{c}: {}", n.value);
        }
    }

    #[test]
    fn tail_probe_classifies_known_cases() {
        let sq = TailProfile::probe(1, &|x: &[f64]| x[0] * x[0] - 1.0);
        let exp0 = OrliczFunction::ExpLog { gamma: 0.0 };
        assert!(sq.diverges(&exp0, 1.9));
        assert!(!sq.diverges(&exp0, 2.1));
        let blow = TailProfile::probe(1, &|x: &[f64]| x[0] * x[0] * (E + x[0] * x[0]).ln());
        let exp1 = OrliczFunction::ExpLog { gamma: 1.0 };
        for lambda in [2.5, 10.0, 1e6, 1e12] {
            assert!(blow.diverges(&exp0, lambda), "{lambda}");
            assert!(!blow.diverges(&exp1, lambda), "{lambda}");
        }
        let cubic = TailProfile::probe(2, &|x: &[f64]| x[0].powi(3) + x[1]);
        assert!(cubic.diverges(&exp1, 1e6));
    }

    #[test]
    fn homogeneity_and_duality_basics() {
        let m = GaussianMeasure::new(1).unwrap();
        let p = OrliczFunction::Zygmund { r: 1.0, s: 1.0 };
        let f = |x: &[f64]| 1.0 + x[0].sin();
        let a = luxembourg_norm(f, p, &m, &gh(40), 1e-7).unwrap();
        let b = luxembourg_norm(|x| 3.0 * f(x), p, &m, &gh(40), 1e-7).unwrap();
        assert!((b.value - 3.0 * a.value).abs() <= 2e-7 * b.value);

        let ones = duality_bound_check(
            |_| 1.0,
            |_| 1.0,
            Pairing::LogLogAgainstSubexponential,
            &m,
            &gh(16),
        )
        .unwrap();
        assert!((ones.lhs.value - 1.0).abs() < 1e-14);
        assert!((ones.rhs - 2.0 / 2f64.ln()).abs() < 1e-5);
        assert!(ones.holds);
        let zero = duality_bound_check(|_| 0.0, |x| x[0], Pairing::LogAgainstExponential, &m, &gh(16))
            .unwrap();
        assert!(zero.holds && zero.lhs.value == 0.0);
    }

    #[test]
    fn embedding_constant_dominates() {
        let lc = log_embedding_constant(0.5).unwrap();
        let zyg = OrliczFunction::Zygmund { r: 1.0, s: 1.0 };
        let phi = OrliczFunction::PhiAlpha { alpha: 0.5 };
        for k in 0..400 {
            let t = 10f64.powf(-3.0 + k as f64 * 0.1);
            assert!(zyg.log_value(t) <= lc + phi.log_value(t) + 1e-9, "{t}");
        }
    }
}
