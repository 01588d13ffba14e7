//! Pushforward densities `K_{s,t} = d X(s,t,·)_#μ / dμ` and `K̃_{s,t}`, their
//! integrability, the `Φ_α` thresholds and the level-set decay bound.
//!
//! All density values are kept as `log K`.

use std::f64::consts::{E, LN_2};

use serde::{Deserialize, Serialize};

use crate::field::{beta_norm, VectorField};
use crate::flow::{integrate_backward, integrate_forward, FlowOptions, TimeInterval};
use crate::gaussian::{Cubature, EstimateStatus, ExpectationScheme, GaussianMeasure, NormEstimate};
use crate::par::Execution;
use crate::quadrature::{gauss_legendre_on, log_normal_interval, simpson};
use crate::{LabError, Result};

/// `log K_{s,t}(x) = -∫_s^t div_μ b(r, X̃(r,t,x)) dr` at each point, from
/// backward integration. Points whose backward path fails are `NaN`.
pub fn log_density(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    points: &[Vec<f64>],
    tol: f64,
    exec: Execution,
) -> Result<Vec<f64>> {
    let b = integrate_backward(f, interval, points, &FlowOptions::new(tol).exec(exec))?;
    Ok(b.particles
        .iter()
        .map(|p| if p.is_ok() { -p.div_accum() } else { f64::NAN })
        .collect())
}

/// `log K̃_{s,t}(x) = ∫_s^t div_μ b(r, X(s,r,x)) dr` from forward integration.
pub fn log_density_tilde(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    points: &[Vec<f64>],
    tol: f64,
    exec: Execution,
) -> Result<Vec<f64>> {
    let b = integrate_forward(f, interval, points, &FlowOptions::new(tol).exec(exec))?;
    Ok(b.particles
        .iter()
        .map(|p| if p.is_ok() { p.div_accum() } else { f64::NAN })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExactDensity {
    pub field: String,
    pub interval: TimeInterval,
    pub tol: f64,
    pub points: Vec<Vec<f64>>,
    pub log_k: Vec<f64>,
    pub log_k_tilde: Vec<f64>,
    /// Points where a characteristic failed; excluded from aggregates.
    pub flagged: Vec<bool>,
}

impl ExactDensity {
    pub fn k(&self, i: usize) -> f64 {
        self.log_k[i].exp()
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|f| **f).count()
    }
}

/// Exact-formula densities `K_{s,t}` and `K̃_{s,t}` at `points`.
pub fn density_exact(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<ExactDensity> {
    let log_k = log_density(f, interval, points, tol, Execution::default())?;
    let log_k_tilde = log_density_tilde(f, interval, points, tol, Execution::default())?;
    let flagged = log_k.iter().zip(&log_k_tilde).map(|(a, b)| a.is_nan() || b.is_nan()).collect();
    Ok(ExactDensity {
        field: f.name(),
        interval,
        tol,
        points: points.to_vec(),
        log_k,
        log_k_tilde,
        flagged,
    })
}

/// Max over seeds of `|log K(X(s,t,x)) + log K̃(x)|`.
pub fn density_duality_gap(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    seeds: &[Vec<f64>],
    tol: f64,
) -> Result<f64> {
    let fwd = integrate_forward(f, interval, seeds, &FlowOptions::new(tol))?;
    let images = fwd.terminals();
    let log_k = log_density(f, interval, &images, tol, Execution::default())?;
    Ok(fwd
        .particles
        .iter()
        .zip(&log_k)
        .filter(|(p, lk)| p.is_ok() && lk.is_finite())
        .map(|(p, lk)| (lk + p.div_accum()).abs())
        .fold(0.0, f64::max))
}

/// `log K` on the nodes of an expectation scheme (and its companion rule).
#[derive(Debug, Clone)]
pub struct DensityOnScheme {
    pub cubature: Cubature,
    pub log_k: Vec<f64>,
    pub companion_log_k: Option<Vec<f64>>,
    pub flagged: usize,
}

impl DensityOnScheme {
    pub fn new(
        f: &(impl VectorField + ?Sized),
        interval: TimeInterval,
        scheme: &ExpectationScheme,
        tol: f64,
    ) -> Result<Self> {
        let m = GaussianMeasure::new(f.dim())?;
        let cubature = m.cubature(scheme)?;
        let log_k = log_density(f, interval, &cubature.as_points().rows(), tol, Execution::default())?;
        let companion_log_k = cubature
            .companion()
            .map(|c| log_density(f, interval, &c.as_points().rows(), tol, Execution::default()))
            .transpose()?;
        let flagged = log_k
            .iter()
            .chain(companion_log_k.iter().flatten())
            .filter(|v| v.is_nan())
            .count();
        Ok(Self {
            cubature,
            log_k,
            companion_log_k,
            flagged,
        })
    }

    fn estimate(&self, g: impl Fn(f64) -> f64) -> Result<NormEstimate> {
        // flagged points are dropped (zero contribution)
        let map = |v: &Vec<f64>| -> Vec<f64> {
            v.iter()
                .map(|&lk| if lk.is_nan() { f64::NEG_INFINITY } else { g(lk) })
                .collect()
        };
        let main = map(&self.log_k);
        let comp = self.companion_log_k.as_ref().map(map);
        self.cubature.estimate_log_values(&main, comp.as_deref())
    }
}

/// `∫ K dμ`, which should be 1.
pub fn mass_check(d: &DensityOnScheme) -> Result<NormEstimate> {
    d.estimate(|lk| lk)
}

/// `log Φ_α(K) = log K + (log⁺ K)^α`.
pub fn log_phi_alpha_of_log(log_k: f64, alpha: f64) -> f64 {
    let lp = if log_k > 1.0 { log_k } else { 1.0 };
    log_k + lp.powf(alpha)
}

/// `∫ Φ_α(K) dμ` evaluated on the scheme nodes in log space.
pub fn phi_alpha_modular(d: &DensityOnScheme, alpha: f64) -> Result<NormEstimate> {
    if !(alpha > 0.0) {
        return Err(LabError::Domain("alpha must be positive".into()));
    }
    d.estimate(|lk| log_phi_alpha_of_log(lk, alpha))
}

/// `∫ K^p dμ` in log space.
pub fn lp_moment(d: &DensityOnScheme, p: f64) -> Result<NormEstimate> {
    d.estimate(|lk| p * lk)
}

/// `log K(X(s,t,x))` at scheme nodes `x`, obtained from the forward
/// accumulator through `K(X(s,t,x)) K̃(x) = 1`.
///
/// Since `∫ g(K) K dμ = ∫ g(K(X(s,t,x))) dμ(x)`, modulars of the form
/// `∫ Φ(K) dμ` become expectations of `Φ(K)/K` at pushed-forward nodes, which
/// for the heavy-tailed densities here have far smaller variance.
#[derive(Debug, Clone)]
pub struct PushedDensity {
    pub cubature: Cubature,
    pub log_k_image: Vec<f64>,
    pub companion: Option<Vec<f64>>,
}

impl PushedDensity {
    pub fn new(
        f: &(impl VectorField + ?Sized),
        interval: TimeInterval,
        scheme: &ExpectationScheme,
        tol: f64,
    ) -> Result<Self> {
        let m = GaussianMeasure::new(f.dim())?;
        let cubature = m.cubature(scheme)?;
        let neg = |v: Vec<f64>| v.into_iter().map(|a| -a).collect::<Vec<f64>>();
        let log_k_image = neg(log_density_tilde(
            f,
            interval,
            &cubature.as_points().rows(),
            tol,
            Execution::default(),
        )?);
        let companion = cubature
            .companion()
            .map(|c| log_density_tilde(f, interval, &c.as_points().rows(), tol, Execution::default()).map(neg))
            .transpose()?;
        Ok(Self {
            cubature,
            log_k_image,
            companion,
        })
    }

    /// `∫ Φ_α(K) dμ = E_μ[exp((log⁺ K(X(s,t,x)))^α)]`.
    pub fn phi_alpha_modular(&self, alpha: f64) -> Result<NormEstimate> {
        if !(alpha > 0.0) {
            return Err(LabError::Domain("alpha must be positive".into()));
        }
        let g = |v: &Vec<f64>| -> Vec<f64> {
            v.iter()
                .map(|&lk| if lk.is_nan() { f64::NEG_INFINITY } else { log_plus_of_log(lk).powf(alpha) })
                .collect()
        };
        let main = g(&self.log_k_image);
        let comp = self.companion.as_ref().map(g);
        self.cubature.estimate_log_values(&main, comp.as_deref())
    }
}

fn log_plus_of_log(log_k: f64) -> f64 {
    log_k.max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModularRoute {
    /// `E_μ[Φ_α(K)]` at μ-distributed nodes.
    Direct,
    /// `E_μ[Φ_α(K)/K ∘ X(s,t,·)]` at pushed-forward nodes.
    Pushforward,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendReport {
    pub route: ModularRoute,
    pub alpha: f64,
    pub estimates: Vec<NormEstimate>,
    /// All three rungs finite and consecutive rungs agree within error bars.
    pub stable: bool,
}

impl TrendReport {
    pub fn divergent_trend(&self) -> bool {
        !self.stable
    }
}

/// `∫ Φ_α(K) dμ` on a refinement ladder: `N, 4N, 16N` samples for Monte
/// Carlo, levels `L, 2L, 4L` for Gauss–Hermite.
pub fn phi_alpha_trend(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    alpha: f64,
    base: &ExpectationScheme,
    tol: f64,
    route: ModularRoute,
) -> Result<TrendReport> {
    let factor = if base.is_deterministic() { 2 } else { 4 };
    let ladder = [base.clone(), base.refined(factor), base.refined(factor * factor)];
    let mut estimates = Vec::with_capacity(3);
    for scheme in &ladder {
        let est = match route {
            ModularRoute::Direct => phi_alpha_modular(&DensityOnScheme::new(f, interval, scheme, tol)?, alpha)?,
            ModularRoute::Pushforward => PushedDensity::new(f, interval, scheme, tol)?.phi_alpha_modular(alpha)?,
        };
        estimates.push(est);
    }
    let stable = estimates.iter().all(NormEstimate::is_finite) && estimates.windows(2).all(|w| w[0].agrees_with(&w[1]));
    Ok(TrendReport {
        route,
        alpha,
        estimates,
        stable,
    })
}

/// Constants `c` in thresholds `exp{-c ∫ β}` that appear in the estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdConstant {
    SixteenE,
    SixteenESquared,
    ThirtyTwoE,
    Four,
    Eight,
}

impl ThresholdConstant {
    pub const ALL: [ThresholdConstant; 5] = [
        ThresholdConstant::SixteenE,
        ThresholdConstant::SixteenESquared,
        ThresholdConstant::ThirtyTwoE,
        ThresholdConstant::Four,
        ThresholdConstant::Eight,
    ];

    pub fn value(self) -> f64 {
        match self {
            ThresholdConstant::SixteenE => 16.0 * E,
            ThresholdConstant::SixteenESquared => 16.0 * E * E,
            ThresholdConstant::ThirtyTwoE => 32.0 * E,
            ThresholdConstant::Four => 4.0,
            ThresholdConstant::Eight => 8.0,
        }
    }

    /// Which `β` the constant is paired with: `Exp(L/log L)` (γ = 1) for the
    /// `e`-constants, `Exp(L)` (γ = 0) for 4 and 8.
    pub fn gamma(self) -> f64 {
        match self {
            ThresholdConstant::Four | ThresholdConstant::Eight => 0.0,
            _ => 1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ThresholdConstant::SixteenE => "16e",
            ThresholdConstant::SixteenESquared => "16e^2",
            ThresholdConstant::ThirtyTwoE => "32e",
            ThresholdConstant::Four => "4",
            ThresholdConstant::Eight => "8",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.label() == s || format!("{c:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| LabError::Usage(format!("unknown threshold constant {s}")))
    }
}

/// `∫_s^t β(r) dr`: one norm solve times `t - s` for autonomous fields,
/// composite Simpson on 9 time nodes otherwise. Unbounded if any node is.
pub fn beta_integral(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    gamma: f64,
    scheme: &ExpectationScheme,
    tol: f64,
) -> Result<NormEstimate> {
    interval.check_within(f)?;
    let tau = interval.length();
    if tau == 0.0 {
        return Ok(NormEstimate::exact(0.0, scheme.clone()));
    }
    let (times, weights) = if f.is_autonomous() {
        (vec![interval.s], vec![tau])
    } else {
        simpson(9, interval.s, interval.t)
    };
    let mut value = 0.0;
    let mut abs_error = 0.0;
    for (r, w) in times.iter().zip(&weights) {
        let b = beta_norm(f, *r, gamma, scheme, tol)?;
        if !b.is_finite() {
            return Ok(NormEstimate::with_status(f64::INFINITY, scheme.clone(), EstimateStatus::Unbounded));
        }
        value += w * b.value;
        abs_error += w * b.abs_error;
    }
    Ok(NormEstimate {
        value,
        abs_error,
        scheme: scheme.clone(),
        status: EstimateStatus::Finite,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub constant: ThresholdConstant,
    pub gamma: f64,
    pub beta_integral: f64,
    pub beta_integral_error: f64,
    /// `exp{-c ∫β}`; zero when `β` is unbounded.
    pub threshold: f64,
}

pub fn threshold_from_integral(constant: ThresholdConstant, beta: &NormEstimate) -> ThresholdReport {
    let threshold = if beta.is_finite() {
        (-constant.value() * beta.value).exp()
    } else {
        0.0
    };
    ThresholdReport {
        constant,
        gamma: constant.gamma(),
        beta_integral: beta.value,
        beta_integral_error: beta.abs_error,
        threshold,
    }
}

/// `α₀ = exp{-c ∫_s^t β(r) dr}` for the chosen constant.
pub fn alpha_threshold(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    constant: ThresholdConstant,
    scheme: &ExpectationScheme,
    tol: f64,
) -> Result<ThresholdReport> {
    let beta = beta_integral(f, interval, constant.gamma(), scheme, tol)?;
    Ok(threshold_from_integral(constant, &beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Binning {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo < hi && lo.is_finite() && hi.is_finite() && bins > 0) {
            return Err(LabError::Usage("binning needs lo < hi and at least one bin".into()));
        }
        Ok(Self { lo, hi, bins })
    }

    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.bins as f64;
        (self.lo + w * i as f64, self.lo + w * (i + 1) as f64)
    }

    fn index(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x < self.hi) {
            return None;
        }
        let i = ((x - self.lo) / (self.hi - self.lo) * self.bins as f64) as usize;
        Some(i.min(self.bins - 1))
    }
}

/// Histogram of the first coordinate of `X(s,t,x)` for `x ~ μ`, relative to
/// the first marginal of `μ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalDensity {
    pub field: String,
    pub interval: TimeInterval,
    pub binning: Binning,
    pub n_particles: usize,
    /// Bin masses followed by the mass outside the binning.
    pub masses: Vec<f64>,
    pub log_mu_bins: Vec<f64>,
    /// `mass / μ(bin)` per bin.
    pub density: Vec<f64>,
    /// Binomial standard error of `density`.
    pub sigma: Vec<f64>,
    pub blown_up_fraction: f64,
    /// False when more than 1% of particles blew up.
    pub reliable: bool,
}

pub fn density_empirical(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    n_particles: usize,
    seed: u64,
    binning: Binning,
    tol: f64,
) -> Result<EmpiricalDensity> {
    if n_particles < 1000 {
        return Err(LabError::Usage("empirical densities need at least 1000 particles".into()));
    }
    let m = GaussianMeasure::new(f.dim())?;
    let seeds = m.sample(n_particles, seed).rows();
    let bundle = integrate_forward(f, interval, &seeds, &FlowOptions::new(tol))?;
    let mut counts = vec![0usize; binning.bins + 1];
    for p in &bundle.particles {
        let idx = if p.is_ok() { binning.index(p.terminal()[0]) } else { None };
        counts[idx.unwrap_or(binning.bins)] += 1;
    }
    let n = n_particles as f64;
    let masses: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let log_mu_bins: Vec<f64> = (0..binning.bins)
        .map(|i| {
            let (a, b) = binning.edges(i);
            log_normal_interval(a, b)
        })
        .collect();
    let density = (0..binning.bins).map(|i| masses[i] / log_mu_bins[i].exp()).collect();
    let sigma = (0..binning.bins)
        .map(|i| (masses[i] * (1.0 - masses[i]) / n).sqrt() / log_mu_bins[i].exp())
        .collect();
    let blown = bundle.blown_up_fraction();
    Ok(EmpiricalDensity {
        field: f.name(),
        interval,
        binning,
        n_particles,
        masses,
        log_mu_bins,
        density,
        sigma,
        blown_up_fraction: blown,
        reliable: blown <= 0.01,
    })
}

/// `(1/μ₁(bin)) ∫_{bin × R^{n-1}} K dμ` per bin from the exact formula:
/// Gauss–Legendre in the first coordinate, Gauss–Hermite in the rest.
pub fn exact_bin_density(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    binning: Binning,
    tol: f64,
    legendre_nodes: usize,
    hermite_level: usize,
) -> Result<Vec<f64>> {
    let n = f.dim();
    let rest = if n > 1 {
        let c = GaussianMeasure::new(n - 1)?.cubature(&ExpectationScheme::GaussHermite { level: hermite_level })?;
        Some(c)
    } else {
        None
    };
    let mut points = Vec::new();
    let mut log_w = Vec::new();
    let mut owner = Vec::new();
    for i in 0..binning.bins {
        let (a, b) = binning.edges(i);
        let (xs, ws) = gauss_legendre_on(legendre_nodes, a, b);
        for (x, w) in xs.iter().zip(&ws) {
            let lw1 = w.ln() - 0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
            match &rest {
                None => {
                    points.push(vec![*x]);
                    log_w.push(lw1);
                    owner.push(i);
                }
                Some(c) => {
                    for (j, y) in c.points().enumerate() {
                        let mut p = vec![*x];
                        p.extend_from_slice(y);
                        points.push(p);
                        log_w.push(lw1 + c.weights()[j].ln());
                        owner.push(i);
                    }
                }
            }
        }
    }
    let log_k = log_density(f, interval, &points, tol, Execution::default())?;
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); binning.bins];
    for ((lk, lw), i) in log_k.iter().zip(&log_w).zip(&owner) {
        if lk.is_nan() {
            return Err(LabError::Evaluation("backward characteristic failed at a bin node".into()));
        }
        per_bin[*i].push(lk + lw);
    }
    Ok((0..binning.bins)
        .map(|i| {
            let (a, b) = binning.edges(i);
            (crate::quadrature::log_sum_exp(&per_bin[i]) - log_normal_interval(a, b)).exp()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossMethodReport {
    pub bins_checked: usize,
    pub within_3sigma: usize,
    pub max_abs_z: f64,
}

impl CrossMethodReport {
    pub fn fraction(&self) -> f64 {
        if self.bins_checked == 0 {
            1.0
        } else {
            self.within_3sigma as f64 / self.bins_checked as f64
        }
    }
}

/// Per-bin comparison of empirical and exact densities at 3σ, restricted to
/// bins inside `window` when given and to bins with at least one particle
/// expected.
pub fn cross_method_check(emp: &EmpiricalDensity, exact: &[f64], window: Option<(f64, f64)>) -> CrossMethodReport {
    let mut checked = 0;
    let mut within = 0;
    let mut max_z: f64 = 0.0;
    for i in 0..emp.binning.bins {
        let (a, b) = emp.binning.edges(i);
        if let Some((lo, hi)) = window {
            if a < lo || b > hi {
                continue;
            }
        }
        let mu = emp.log_mu_bins[i].exp();
        let expected_mass = exact[i] * mu;
        if expected_mass * (emp.n_particles as f64) < 1.0 {
            continue;
        }
        // binomial σ from the exact mass, so empty bins are judged fairly
        let sigma = (expected_mass * (1.0 - expected_mass) / emp.n_particles as f64).sqrt() / mu;
        let z = (emp.density[i] - exact[i]).abs() / sigma;
        checked += 1;
        within += usize::from(z <= 3.0);
        max_z = max_z.max(z);
    }
    CrossMethodReport {
        bins_checked: checked,
        within_3sigma: within,
        max_abs_z: max_z,
    }
}

/// Offset in the choice of `k₀`, which must satisfy
/// `log log log 2^{k₀} > ln ln(ln 2 + e^{2e}) + 32e ∫₀^T β`.
pub fn k0_offset() -> f64 {
    (LN_2 + (2.0 * E).exp()).ln().ln()
}

/// Natural log of the smallest admissible `k₀` (may be `+∞`).
pub fn ln_k0(beta_integral_0t: f64) -> f64 {
    let a = k0_offset() + 32.0 * E * beta_integral_0t;
    // ln(k ln 2) > exp(exp(a))
    a.exp().exp() - LN_2.ln()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelSetRow {
    pub k: f64,
    pub count: usize,
    pub mu_estimate: f64,
    pub sigma: f64,
    /// `ln` of `2^{-(k-1)} exp{-(log 2^{k-1})^{exp(-16e∫β)}}`.
    pub log_bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelSetReport {
    pub beta_integral: f64,
    pub exponent: f64,
    pub ln_k0: f64,
    pub samples: usize,
    pub rows: Vec<LevelSetRow>,
    /// Every tested level set was empty in the sample.
    pub vacuous: bool,
    pub all_hold: bool,
}

/// `ln` of the level-set bound for `E_k = {2^{k-1} < K ≤ 2^k}`.
pub fn level_set_log_bound(k: f64, exponent: f64) -> f64 {
    let l = (k - 1.0) * LN_2;
    -l - l.max(0.0).powf(exponent)
}

/// Monte Carlo `μ(E_k)` from `log K` at μ-samples, against the bound with
/// exponent `exp{-16e ∫_s^t β}`.
pub fn level_set_decay_check(log_k: &[f64], ks: &[f64], beta_integral: f64, ln_k0: f64) -> LevelSetReport {
    let exponent = (-16.0 * E * beta_integral).exp();
    let valid: Vec<f64> = log_k.iter().copied().filter(|v| v.is_finite()).collect();
    let n = valid.len() as f64;
    let rows: Vec<LevelSetRow> = ks
        .iter()
        .map(|&k| {
            let lo = (k - 1.0) * LN_2;
            let hi = k * LN_2;
            let count = valid.iter().filter(|&&v| v > lo && v <= hi).count();
            let p = count as f64 / n.max(1.0);
            let sigma = (p * (1.0 - p) / n.max(1.0)).sqrt();
            let log_bound = level_set_log_bound(k, exponent);
            let holds = p <= log_bound.exp() + 3.0 * sigma;
            LevelSetRow {
                k,
                count,
                mu_estimate: p,
                sigma,
                log_bound,
                holds,
            }
        })
        .collect();
    LevelSetReport {
        beta_integral,
        exponent,
        ln_k0,
        samples: valid.len(),
        vacuous: rows.iter().all(|r| r.count == 0),
        all_hold: rows.iter().all(|r| r.holds),
        rows,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpReport {
    pub beta0_integral: f64,
    /// `1 / (1 - exp(-4 ∫β))`; infinite when `β = 0`.
    pub endpoint: f64,
    pub p: Vec<f64>,
    pub moments: Vec<NormEstimate>,
    pub all_finite: bool,
}

/// `p*` from `∫ β` with `γ = 0`.
pub fn lp_endpoint(beta0_integral: f64) -> f64 {
    1.0 / -(-4.0 * beta0_integral).exp_m1()
}

/// `∫ K^p dμ` at the given fractions of the admissible endpoint.
pub fn lp_bound_check(d: &DensityOnScheme, beta0: &NormEstimate, fractions: &[f64]) -> Result<LpReport> {
    if !beta0.is_finite() {
        return Err(LabError::Domain("L^p check needs a finite Exp(L) divergence norm".into()));
    }
    let endpoint = lp_endpoint(beta0.value);
    let p: Vec<f64> = fractions
        .iter()
        .map(|fr| if endpoint.is_finite() { fr * endpoint } else { 1.0 })
        .collect();
    let moments = p.iter().map(|&p| lp_moment(d, p)).collect::<Result<Vec<_>>>()?;
    Ok(LpReport {
        beta0_integral: beta0.value,
        endpoint,
        all_finite: moments.iter().all(NormEstimate::is_finite),
        p,
        moments,
    })
}
