//! Time-dependent vector fields, the Gaussian divergence
//! `div_μ b = div b - x·b`, growth and divergence norms, and
//! Ornstein–Uhlenbeck smoothing.

mod library;
mod ou;

use std::f64::consts::E;

pub use library::{
    expm, Blowup, Constant, Cubic, FieldSpec, Linear, LinearRamp, Scaled, Sum, Trig, Zero,
};
pub use ou::{ou_divergence_identity_check, smoothing_gap, OuDivergenceReport, OuNodes, OuSmoothed};

use crate::gaussian::{EstimateStatus, ExpectationScheme, GaussianMeasure, NormEstimate};
use crate::orlicz::{self, log_plus, OrliczFunction};
use crate::{LabError, Result};

/// A time-dependent velocity field `b(t, x)` on `R^n`.
///
/// Evaluators must be pure: integrators call them concurrently from many
/// particles.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Euclidean divergence; central finite differences unless overridden.
    fn div(&self, t: f64, x: &[f64]) -> f64 {
        fd_divergence(self, t, x)
    }

    fn has_analytic_div(&self) -> bool {
        false
    }

    /// Row-major Jacobian `∂b_i/∂x_j`; `false` when not available.
    fn jacobian(&self, _t: f64, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    fn is_autonomous(&self) -> bool {
        false
    }

    /// Right end `T` of the time domain `[0, T]`.
    fn horizon(&self) -> f64 {
        f64::INFINITY
    }

    fn name(&self) -> String;

    /// Closed-form forward flow `X(s, t, x)`, if known.
    fn exact_flow(&self, _s: f64, _t: f64, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Closed-form `log K_{s,t}(x)` of the pushforward density, if known.
    fn exact_log_density(&self, _s: f64, _t: f64, _x: &[f64]) -> Option<f64> {
        None
    }
}

pub fn eval_vec(f: &(impl VectorField + ?Sized), t: f64, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.dim()];
    f.eval(t, x, &mut out);
    out
}

/// Central-difference divergence with step `1e-5 (1 + |x|)`.
pub fn fd_divergence(f: &(impl VectorField + ?Sized), t: f64, x: &[f64]) -> f64 {
    let n = f.dim();
    let h = 1e-5 * (1.0 + norm(x));
    let mut y = x.to_vec();
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let mut div = 0.0;
    for i in 0..n {
        y[i] = x[i] + h;
        f.eval(t, &y, &mut plus);
        y[i] = x[i] - h;
        f.eval(t, &y, &mut minus);
        y[i] = x[i];
        div += (plus[i] - minus[i]) / (2.0 * h);
    }
    div
}

/// Central-difference Jacobian, row-major.
pub fn fd_jacobian(f: &(impl VectorField + ?Sized), t: f64, x: &[f64], out: &mut [f64]) {
    let n = f.dim();
    let h = 1e-5 * (1.0 + norm(x));
    let mut y = x.to_vec();
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    for j in 0..n {
        y[j] = x[j] + h;
        f.eval(t, &y, &mut plus);
        y[j] = x[j] - h;
        f.eval(t, &y, &mut minus);
        y[j] = x[j];
        for i in 0..n {
            out[i * n + j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// `div_μ b(t, x) = div b(t, x) - x·b(t, x)`.
pub fn div_mu(f: &(impl VectorField + ?Sized), t: f64, x: &[f64]) -> f64 {
    let mut b = vec![0.0; f.dim()];
    f.eval(t, x, &mut b);
    f.div(t, x) - dot(x, &b)
}

fn check_time(f: &(impl VectorField + ?Sized), t: f64) -> Result<()> {
    if !(t >= 0.0 && t <= f.horizon()) {
        return Err(LabError::Domain(format!(
            "time {t} outside [0, {}] for field {}",
            f.horizon(),
            f.name()
        )));
    }
    Ok(())
}

/// Lower bound for `ess sup |b(t,x)| / (1 + |x| log⁺|x|)` from a radial probe
/// grid plus the scheme's nodes.
pub fn growth_norm(
    f: &(impl VectorField + ?Sized),
    t: f64,
    scheme: &ExpectationScheme,
) -> Result<NormEstimate> {
    check_time(f, t)?;
    let n = f.dim();
    let m = GaussianMeasure::new(n)?;
    let weight = |x: &[f64]| {
        let r = norm(x);
        1.0 + r * log_plus(r)
    };
    let mut b = vec![0.0; n];
    let mut best = 0.0_f64;
    let mut consider = |x: &[f64], best: &mut f64| {
        f.eval(t, x, &mut b);
        let v = norm(&b) / weight(x);
        if v.is_finite() {
            *best = best.max(v);
        }
    };
    consider(&vec![0.0; n], &mut best);
    let mut radii: Vec<f64> = (0..=900).map(|k| 10f64.powf(-3.0 + k as f64 / 100.0)).collect();
    radii.push(E);
    for u in orlicz::probe_directions(n) {
        for &r in &radii {
            let x: Vec<f64> = u.iter().map(|c| c * r).collect();
            consider(&x, &mut best);
        }
    }
    let cub = m.cubature(scheme)?;
    for x in cub.points() {
        consider(x, &mut best);
    }
    Ok(NormEstimate {
        value: best,
        abs_error: 0.0,
        scheme: scheme.clone(),
        status: EstimateStatus::Finite,
    })
}

/// `β(t) = ‖div_μ b(t, ·)‖` in `Exp_μ(L / log^γ L)`.
pub fn beta_norm(
    f: &(impl VectorField + ?Sized),
    t: f64,
    gamma: f64,
    scheme: &ExpectationScheme,
    tol: f64,
) -> Result<NormEstimate> {
    check_time(f, t)?;
    let m = GaussianMeasure::new(f.dim())?;
    let p = OrliczFunction::exp_log(gamma)?;
    orlicz::luxembourg_norm(|x| div_mu(f, t, x), p, &m, scheme, tol)
}

/// Largest gap between analytic and finite-difference divergence over
/// `points` at time `t`, relative to `1 + |div|`.
pub fn divergence_consistency(f: &(impl VectorField + ?Sized), t: f64, points: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .map(|x| {
            let a = f.div(t, x);
            let d = fd_divergence(f, t, x);
            (a - d).abs() / (1.0 + a.abs())
        })
        .fold(0.0, f64::max)
}
