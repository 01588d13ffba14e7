//! The transport equation `∂_t u + b·∇u = 0` solved by characteristics, its
//! weak formulation under `μ` and under Lebesgue measure, and the log-log
//! stability estimates for indicator data.

use std::f64::consts::{E, LN_2, PI};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::density::{beta_integral, log_density_tilde};
use crate::field::{div_mu, dot, VectorField};
use crate::flow::{integrate_particle, Direction, FlowOptions, TimeInterval};
use crate::gaussian::{Cubature, ExpectationScheme, GaussianMeasure, NormEstimate};
use crate::par::{self, Execution};
use crate::quadrature::{gauss_legendre_on, log_normal_interval, log_sum_exp};
use crate::{LabError, Result};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Datum at time 0: `u(t, x) = u₀(X̃(0, t, x))`.
    ForwardCauchy,
    /// Datum at time `t0`: `u(s, x) = u₀(X(s, t0, x))`.
    BackwardCauchy { t0: f64 },
}

pub struct TransportSolution {
    field: Arc<dyn VectorField>,
    u0: ScalarFn,
    orientation: Orientation,
    tol: f64,
}

/// Build the characteristic solution; each evaluation integrates one
/// characteristic to `tol`.
pub fn solve_characteristics(
    field: Arc<dyn VectorField>,
    u0: ScalarFn,
    orientation: Orientation,
    tol: f64,
) -> Result<TransportSolution> {
    if !(tol > 0.0) {
        return Err(LabError::Usage("integrator tolerance must be positive".into()));
    }
    if let Orientation::BackwardCauchy { t0 } = orientation {
        TimeInterval::new(0.0, t0)?.check_within(field.as_ref())?;
    }
    Ok(TransportSolution {
        field,
        u0,
        orientation,
        tol,
    })
}

impl TransportSolution {
    pub fn field(&self) -> &Arc<dyn VectorField> {
        &self.field
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    /// Foot of the characteristic through `(tau, x)` on the datum slice.
    pub fn foot(&self, tau: f64, x: &[f64]) -> Result<Vec<f64>> {
        let (dir, iv) = match self.orientation {
            Orientation::ForwardCauchy => (Direction::Backward, TimeInterval::new(0.0, tau)?),
            Orientation::BackwardCauchy { t0 } => (Direction::Forward, TimeInterval::new(tau, t0)?),
        };
        let end = match dir {
            Direction::Forward => iv.t,
            Direction::Backward => iv.s,
        };
        let p = integrate_particle(
            self.field.as_ref(),
            dir,
            iv,
            &[end],
            x,
            &FlowOptions::new(self.tol),
        );
        if !p.is_ok() {
            return Err(LabError::Evaluation(format!(
                "characteristic through ({tau}, {x:?}) ended with status {}",
                p.status.as_str()
            )));
        }
        Ok(p.terminal().to_vec())
    }

    pub fn eval(&self, tau: f64, x: &[f64]) -> Result<f64> {
        Ok((self.u0)(&self.foot(tau, x)?))
    }

    /// `u(tau, ·)` at many points, in parallel.
    pub fn eval_many(&self, tau: f64, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        par::map(Execution::default(), points, |x| self.eval(tau, x))
            .into_iter()
            .collect()
    }

    /// Same characteristics, datum `θ ∘ u₀`.
    pub fn renormalized(&self, theta: impl Fn(f64) -> f64 + Send + Sync + 'static) -> TransportSolution {
        let u0 = self.u0.clone();
        TransportSolution {
            field: self.field.clone(),
            u0: Arc::new(move |x| theta(u0(x))),
            orientation: self.orientation,
            tol: self.tol,
        }
    }
}

/// `φ(t, x) = cos²(πt / 2T) · exp(-|x - c|² / 2w²) · cos(k·x)`, which vanishes
/// at `t = T` with `∂_t φ(0, ·) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub horizon: f64,
    pub center: Vec<f64>,
    pub width: f64,
    pub wave: Vec<f64>,
}

impl TestFunction {
    pub fn bump(horizon: f64, center: Vec<f64>, width: f64) -> Self {
        let n = center.len();
        Self {
            horizon,
            center,
            width,
            wave: vec![0.0; n],
        }
    }

    pub fn modulated(horizon: f64, center: Vec<f64>, width: f64, wave: Vec<f64>) -> Self {
        Self {
            horizon,
            center,
            width,
            wave,
        }
    }

    fn chi(&self, t: f64) -> (f64, f64) {
        let a = PI * t / (2.0 * self.horizon);
        (a.cos().powi(2), -(PI / (2.0 * self.horizon)) * (2.0 * a).sin())
    }

    /// `(ψ(x), ∇ψ(x))`.
    fn psi(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let w2 = self.width * self.width;
        let r2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c).powi(2)).sum();
        let g = (-0.5 * r2 / w2).exp();
        let phase = dot(&self.wave, x);
        let (s, c) = phase.sin_cos();
        let grad = x
            .iter()
            .zip(&self.center)
            .zip(&self.wave)
            .map(|((xi, ci), ki)| g * (-(xi - ci) / w2 * c - ki * s))
            .collect();
        (g * c, grad)
    }

    /// `(φ, ∂_t φ, ∇φ)` at `(t, x)`.
    pub fn eval(&self, t: f64, x: &[f64]) -> (f64, f64, Vec<f64>) {
        let (chi, dchi) = self.chi(t);
        let (psi, grad) = self.psi(x);
        (chi * psi, dchi * psi, grad.into_iter().map(|g| chi * g).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeakForm {
    /// `-∫∫ u ∂_tφ dμ dt - ∫ u₀ φ(0) dμ - ∫∫ u (φ div_μ b + b·∇φ) dμ dt`.
    Gaussian,
    /// The same with `dx` and `div b` in place of `dμ` and `div_μ b`.
    Lebesgue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakResidual {
    pub value: f64,
    /// Sum of the time, space and ODE contributions below.
    pub error_bar: f64,
    pub time_error: f64,
    pub space_error: f64,
    pub ode_allowance: f64,
}

impl WeakResidual {
    pub fn vanishes(&self) -> bool {
        self.value.abs() <= self.error_bar
    }
}

/// Candidate solution values `u(t, x)` at a batch of points.
pub type Candidate<'a> = dyn Fn(f64, &[Vec<f64>]) -> Result<Vec<f64>> + Sync + 'a;

const TIME_NODES: usize = 16;

/// Weak-form residual of a candidate `u` with datum `u₀` at time 0, on
/// `[0, T]` with `T = test.horizon`: Gauss–Legendre with 16 nodes in time and
/// the scheme in space. Time error compares with 8 nodes; space error with
/// the companion rule.
#[allow(clippy::too_many_arguments)]
pub fn weak_residual_candidate(
    f: &(impl VectorField + ?Sized),
    u: &Candidate<'_>,
    u0: &(dyn Fn(&[f64]) -> f64 + Sync),
    test: &TestFunction,
    scheme: &ExpectationScheme,
    ode_tol: f64,
    form: WeakForm,
) -> Result<WeakResidual> {
    let n = f.dim();
    if test.center.len() != n || test.wave.len() != n {
        return Err(LabError::Usage("test function dimension differs from the field".into()));
    }
    let horizon = test.horizon;
    TimeInterval::new(0.0, horizon)?.check_within(f)?;
    let cub = GaussianMeasure::new(n)?.cubature(scheme)?;
    let (fine_t, fine_w) = gauss_legendre_on(TIME_NODES, 0.0, horizon);
    let (coarse_t, coarse_w) = gauss_legendre_on(TIME_NODES / 2, 0.0, horizon);
    let times: Vec<f64> = fine_t.iter().chain(&coarse_t).copied().collect();

    // per space rule: (residual with the fine time rule, with the coarse one, magnitude)
    let evaluate = |c: &Cubature| -> Result<(f64, f64, f64)> {
        let pts = c.as_points().rows();
        let density = |x: &[f64]| match form {
            WeakForm::Gaussian => 1.0,
            WeakForm::Lebesgue => (2.0 * PI).powf(0.5 * n as f64) * (0.5 * dot(x, x)).exp(),
        };
        let mut fine = 0.0;
        let mut coarse = 0.0;
        let mut mag = 0.0;
        for (k, &t) in times.iter().enumerate() {
            let uv = u(t, &pts)?;
            let mut slice = 0.0;
            let mut slice_mag = 0.0;
            let mut b = vec![0.0; n];
            for (j, x) in pts.iter().enumerate() {
                let (phi, dphi, grad) = test.eval(t, x);
                f.eval(t, x, &mut b);
                let dv = match form {
                    WeakForm::Gaussian => div_mu(f, t, x),
                    WeakForm::Lebesgue => f.div(t, x),
                };
                let w = c.weights()[j] * density(x);
                let term = uv[j] * (dphi + phi * dv + dot(&b, &grad));
                slice -= w * term;
                let r = crate::field::norm(x);
                slice_mag += w * (1.0 + r) * (dphi.abs() + (phi * dv).abs() + dot(&b, &grad).abs());
            }
            if k < TIME_NODES {
                fine += fine_w[k] * slice;
                mag += fine_w[k] * slice_mag;
            } else {
                coarse += coarse_w[k - TIME_NODES] * slice;
            }
        }
        let mut initial = 0.0;
        for (j, x) in pts.iter().enumerate() {
            let (phi, _, _) = test.eval(0.0, x);
            initial -= c.weights()[j] * density(x) * u0(x) * phi;
        }
        Ok((fine + initial, coarse + initial, mag))
    };
    let (main_fine, main_coarse, mag) = evaluate(&cub)?;
    let space_error = match cub.companion() {
        Some(c) => (main_fine - evaluate(c)?.0).abs(),
        None => 0.0,
    };
    let time_error = (main_fine - main_coarse).abs();
    let ode_allowance = 10.0 * ode_tol * mag;
    Ok(WeakResidual {
        value: main_fine,
        error_bar: time_error + space_error + ode_allowance,
        time_error,
        space_error,
        ode_allowance,
    })
}

/// Weak residual of a forward-Cauchy characteristic solution.
pub fn weak_residual(
    sol: &TransportSolution,
    test: &TestFunction,
    scheme: &ExpectationScheme,
    form: WeakForm,
) -> Result<WeakResidual> {
    if sol.orientation != Orientation::ForwardCauchy {
        return Err(LabError::Usage("weak residual is set up for data at time 0".into()));
    }
    let u = |t: f64, pts: &[Vec<f64>]| sol.eval_many(t, pts);
    weak_residual_candidate(sol.field.as_ref(), &u, sol.u0.as_ref(), test, scheme, sol.tol, form)
}

/// Axis-aligned box `E = Π [lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(LabError::Usage("box needs lo < hi in every coordinate".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// `log μ(E)`, exact.
    pub fn log_mu(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| log_normal_interval(*a, *b)).sum()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| v >= a && v <= b)
    }

    /// Tensor Gauss–Legendre nodes with `log(weight · φ(x))`.
    fn log_weighted_nodes(&self, q: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let rules: Vec<(Vec<f64>, Vec<f64>)> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| gauss_legendre_on(q, *a, *b))
            .collect();
        let n = self.dim();
        let total = q.pow(n as u32);
        let mut pts = Vec::with_capacity(total);
        let mut lw = Vec::with_capacity(total);
        for idx in 0..total {
            let mut rem = idx;
            let mut x = Vec::with_capacity(n);
            let mut l = 0.0;
            for (xs, ws) in &rules {
                let j = rem % q;
                rem /= q;
                x.push(xs[j]);
                l += ws[j].ln() - 0.5 * xs[j] * xs[j] - 0.5 * (2.0 * PI).ln();
            }
            pts.push(x);
            lw.push(l);
        }
        (pts, lw)
    }
}

/// `log μ(X(s,t,E)) = log ∫_E K̃_{s,t} dμ` with its error estimate (the
/// difference from half as many Gauss–Legendre nodes plus an ODE allowance).
pub fn log_image_mass(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    set: &BoxSet,
    nodes: usize,
    tol: f64,
) -> Result<(f64, f64)> {
    let mass = |q: usize| -> Result<(f64, f64)> {
        let (pts, lw) = set.log_weighted_nodes(q);
        let lk = log_density_tilde(f, interval, &pts, tol, Execution::default())?;
        if lk.iter().any(|v| v.is_nan()) {
            return Err(LabError::Evaluation("forward characteristic failed inside the set".into()));
        }
        let worst = lk.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let terms: Vec<f64> = lk.iter().zip(&lw).map(|(a, b)| a + b).collect();
        Ok((log_sum_exp(&terms), worst))
    };
    let (fine, worst) = mass(nodes)?;
    let (coarse, _) = mass((nodes / 2).max(2))?;
    Ok((fine, (fine - coarse).abs() + 10.0 * tol * (1.0 + worst)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityKind {
    TripleLog,
    DoubleLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityState {
    Holds,
    Violated,
    /// The hypotheses of the estimate are not met; nothing is asserted.
    Inapplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub kind: StabilityKind,
    pub field: String,
    pub interval: TimeInterval,
    pub p: f64,
    pub log_mu_e: f64,
    pub log_mu_image: f64,
    pub log_mu_image_error: f64,
    pub beta_integral: f64,
    pub lhs_gap: f64,
    pub budget: f64,
    pub allowance: f64,
    /// `lhs_gap / budget`, the slack of the estimate.
    pub ratio: f64,
    pub epsilon_condition: bool,
    pub state: StabilityState,
    pub reason: Option<String>,
    /// Double-log only: budget with `β` taken from `div b` instead of `div_μ b`.
    pub budget_div_b: Option<f64>,
}

/// `ln ln x` for `x = 1/m` given `ln m`; `NaN` when undefined.
fn loglog_of_inverse(log_m: f64) -> f64 {
    (-log_m).ln()
}

fn logloglog_of_inverse(log_m: f64) -> f64 {
    (-log_m).ln().ln()
}

/// Triple-log stability with `u₀ = 1_E`, `M = 1`.
pub fn stability_triple_log_check(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    set: &BoxSet,
    p: f64,
    scheme: &ExpectationScheme,
    tol: f64,
) -> Result<StabilityReport> {
    stability_check(f, interval, set, p, scheme, tol, StabilityKind::TripleLog)
}

/// Double-log stability with `u₀ = 1_E`, `M = 1`.
pub fn stability_double_log_check(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    set: &BoxSet,
    p: f64,
    scheme: &ExpectationScheme,
    tol: f64,
) -> Result<StabilityReport> {
    stability_check(f, interval, set, p, scheme, tol, StabilityKind::DoubleLog)
}

/// `‖div b‖` in `Exp_μ(L)` integrated over the interval.
fn div_b_integral(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    scheme: &ExpectationScheme,
    tol: f64,
) -> Result<NormEstimate> {
    struct DivOnly<'a, F: ?Sized>(&'a F);
    impl<F: VectorField + ?Sized> VectorField for DivOnly<'_, F> {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn eval(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        // div_μ of this wrapper is div b of the wrapped field
        fn div(&self, t: f64, x: &[f64]) -> f64 {
            self.0.div(t, x)
        }
        fn is_autonomous(&self) -> bool {
            self.0.is_autonomous()
        }
        fn horizon(&self) -> f64 {
            self.0.horizon()
        }
        fn name(&self) -> String {
            self.0.name()
        }
    }
    beta_integral(&DivOnly(f), interval, 0.0, scheme, tol)
}

#[allow(clippy::too_many_arguments)]
fn stability_check(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    set: &BoxSet,
    p: f64,
    scheme: &ExpectationScheme,
    tol: f64,
    kind: StabilityKind,
) -> Result<StabilityReport> {
    if set.dim() != f.dim() {
        return Err(LabError::Usage("set dimension differs from the field".into()));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(LabError::Domain("need 1 <= p < ∞".into()));
    }
    let gamma = match kind {
        StabilityKind::TripleLog => 1.0,
        StabilityKind::DoubleLog => 0.0,
    };
    let beta = beta_integral(f, interval, gamma, scheme, tol.max(1e-8))?;
    let log_mu_e = set.log_mu();
    let mut report = StabilityReport {
        kind,
        field: f.name(),
        interval,
        p,
        log_mu_e,
        log_mu_image: f64::NAN,
        log_mu_image_error: f64::NAN,
        beta_integral: beta.value,
        lhs_gap: f64::NAN,
        budget: f64::NAN,
        allowance: f64::NAN,
        ratio: f64::NAN,
        epsilon_condition: false,
        state: StabilityState::Inapplicable,
        reason: None,
        budget_div_b: None,
    };
    if !beta.is_finite() {
        report.reason = Some("divergence norm is unbounded".into());
        return Ok(report);
    }
    // ‖1_E‖^p = μ(E); ε is taken just above μ(E)
    let bi = beta.value + beta.abs_error;
    let (eps_ok, g): (bool, fn(f64) -> f64) = match kind {
        StabilityKind::TripleLog => {
            let lim = LN_2 + (E + 1.0).exp();
            let c = (LN_2 + (E + 1.0).exp()).ln().ln() + 32.0 * E * bi;
            (-log_mu_e > lim && logloglog_of_inverse(log_mu_e) > c, logloglog_of_inverse)
        }
        StabilityKind::DoubleLog => {
            let c = (2.0 * (E + 1.0)).ln().ln() + 8.0 * bi;
            (-log_mu_e > 1.0 && loglog_of_inverse(log_mu_e) > c, loglog_of_inverse)
        }
    };
    report.epsilon_condition = eps_ok;
    if kind == StabilityKind::DoubleLog {
        let db = div_b_integral(f, interval, scheme, tol.max(1e-8))?;
        report.budget_div_b = Some(4.0 * db.value);
    }
    if !eps_ok {
        report.reason = Some("set mass does not meet the smallness condition".into());
        return Ok(report);
    }
    let (log_img, img_err) = log_image_mass(f, interval, set, 16, tol)?;
    report.log_mu_image = log_img;
    report.log_mu_image_error = img_err;
    if !(log_img < 0.0) || !g(log_img).is_finite() {
        report.reason = Some("image mass too large for the iterated logarithm".into());
        return Ok(report);
    }
    let gap = (g(log_img) - g(log_mu_e)).abs();
    let allowance = (g(log_img - img_err) - g(log_img)).abs().max((g(log_img + img_err) - g(log_img)).abs());
    let budget = match kind {
        StabilityKind::TripleLog => 16.0 * E * beta.value,
        StabilityKind::DoubleLog => 4.0 * beta.value,
    };
    let budget_err = match kind {
        StabilityKind::TripleLog => 16.0 * E * beta.abs_error,
        StabilityKind::DoubleLog => 4.0 * beta.abs_error,
    };
    report.lhs_gap = gap;
    report.budget = budget;
    report.allowance = allowance.max(f64::EPSILON) + budget_err;
    report.ratio = if budget > 0.0 { gap / budget } else { 0.0 };
    report.state = if gap <= budget + report.allowance {
        StabilityState::Holds
    } else {
        StabilityState::Violated
    };
    Ok(report)
}
