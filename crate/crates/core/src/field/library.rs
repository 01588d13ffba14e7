//! Named analytic fields addressable from experiment configs.

use std::f64::consts::{E, PI};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ou::OuSmoothed;
use super::{dot, VectorField};
use crate::gaussian::ExpectationScheme;
use crate::{LabError, Result};

/// Field description as it appears in configs: `{"name": "...", ...params}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum FieldSpec {
    Zero {
        dim: usize,
    },
    Constant {
        c: Vec<f64>,
    },
    /// `b(x) = A x`, `a` given row by row.
    Linear {
        a: Vec<Vec<f64>>,
    },
    /// `b(x) = -x`.
    LinearContraction {
        dim: usize,
    },
    /// `b(x) = ω (-x₂, x₁)`.
    Rotation {
        omega: f64,
    },
    /// `b(t, x) = -(1 + t) x`.
    LinearRamp {
        dim: usize,
    },
    /// `b(x) = κ x log(e + x²)` on the line.
    Blowup {
        kappa: f64,
    },
    /// Bounded smooth time-dependent trigonometric field with seeded modes.
    Trig {
        dim: usize,
        terms: usize,
        seed: u64,
        amplitude: f64,
    },
    /// Random polynomial of degree at most 3 in each component.
    Cubic {
        dim: usize,
        seed: u64,
        scale: f64,
    },
    /// Ornstein–Uhlenbeck smoothing `P_ε b`.
    Mollified {
        base: Box<FieldSpec>,
        eps: f64,
        scheme: ExpectationScheme,
    },
    /// `factor · b`.
    Scaled {
        base: Box<FieldSpec>,
        factor: f64,
    },
    /// `b + weight · p`.
    Sum {
        base: Box<FieldSpec>,
        perturbation: Box<FieldSpec>,
        weight: f64,
    },
}

impl FieldSpec {
    pub fn build(&self) -> Result<Arc<dyn VectorField>> {
        Ok(match self {
            FieldSpec::Zero { dim } => Arc::new(Zero::new(positive_dim(*dim)?)),
            FieldSpec::Constant { c } => {
                positive_dim(c.len())?;
                finite_all(c, "constant field")?;
                Arc::new(Constant::new(c.clone()))
            }
            FieldSpec::Linear { a } => Arc::new(Linear::new(a.clone())?),
            FieldSpec::LinearContraction { dim } => Arc::new(Linear::contraction(positive_dim(*dim)?)),
            FieldSpec::Rotation { omega } => {
                finite_all(&[*omega], "rotation rate")?;
                Arc::new(Linear::rotation(*omega))
            }
            FieldSpec::LinearRamp { dim } => Arc::new(LinearRamp::new(positive_dim(*dim)?)),
            FieldSpec::Blowup { kappa } => {
                if !(kappa.is_finite() && *kappa > 0.0) {
                    return Err(LabError::Config("blowup kappa must be positive".into()));
                }
                Arc::new(Blowup::new(*kappa))
            }
            FieldSpec::Trig {
                dim,
                terms,
                seed,
                amplitude,
            } => {
                if *terms == 0 {
                    return Err(LabError::Config("trig field needs at least one term".into()));
                }
                finite_all(&[*amplitude], "trig amplitude")?;
                Arc::new(Trig::new(positive_dim(*dim)?, *terms, *seed, *amplitude))
            }
            FieldSpec::Cubic { dim, seed, scale } => {
                finite_all(&[*scale], "cubic scale")?;
                Arc::new(Cubic::new(positive_dim(*dim)?, *seed, *scale))
            }
            FieldSpec::Mollified { base, eps, scheme } => {
                Arc::new(OuSmoothed::new(base.build()?, *eps, scheme)?)
            }
            FieldSpec::Scaled { base, factor } => {
                finite_all(&[*factor], "scale factor")?;
                Arc::new(Scaled {
                    base: base.build()?,
                    factor: *factor,
                })
            }
            FieldSpec::Sum {
                base,
                perturbation,
                weight,
            } => {
                finite_all(&[*weight], "perturbation weight")?;
                let base = base.build()?;
                let perturbation = perturbation.build()?;
                if base.dim() != perturbation.dim() {
                    return Err(LabError::Config("summed fields differ in dimension".into()));
                }
                Arc::new(Sum {
                    base,
                    perturbation,
                    weight: *weight,
                })
            }
        })
    }

    /// The standard library of fields with their default parameters.
    pub fn library() -> Vec<FieldSpec> {
        vec![
            FieldSpec::Zero { dim: 1 },
            FieldSpec::Constant { c: vec![0.5, -0.25] },
            FieldSpec::LinearContraction { dim: 1 },
            FieldSpec::LinearContraction { dim: 2 },
            FieldSpec::Rotation { omega: 1.0 },
            FieldSpec::Linear {
                a: vec![vec![-0.5, 0.3], vec![0.1, -0.2]],
            },
            FieldSpec::LinearRamp { dim: 1 },
            FieldSpec::Blowup { kappa: 1.0 },
            FieldSpec::Trig {
                dim: 2,
                terms: 4,
                seed: 11,
                amplitude: 1.0,
            },
        ]
    }

    /// Short name for reports.
    pub fn label(&self) -> String {
        match self {
            FieldSpec::Zero { .. } => "zero".into(),
            FieldSpec::Constant { .. } => "constant".into(),
            FieldSpec::Linear { .. } => "linear".into(),
            FieldSpec::LinearContraction { .. } => "linear-contraction".into(),
            FieldSpec::Rotation { .. } => "rotation".into(),
            FieldSpec::LinearRamp { .. } => "linear-ramp".into(),
            FieldSpec::Blowup { .. } => "blowup".into(),
            FieldSpec::Trig { .. } => "trig".into(),
            FieldSpec::Cubic { .. } => "cubic".into(),
            FieldSpec::Mollified { base, .. } => format!("mollified-{}", base.label()),
            FieldSpec::Scaled { base, .. } => format!("scaled-{}", base.label()),
            FieldSpec::Sum { base, .. } => format!("perturbed-{}", base.label()),
        }
    }
}

fn positive_dim(dim: usize) -> Result<usize> {
    if dim == 0 {
        return Err(LabError::Config("field dimension must be positive".into()));
    }
    Ok(dim)
}

fn finite_all(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(LabError::Config(format!("{what} must be finite")));
    }
    Ok(())
}

pub struct Zero {
    dim: usize,
}

impl Zero {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl VectorField for Zero {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn div(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }
    fn has_analytic_div(&self) -> bool {
        true
    }
    fn jacobian(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
    fn is_autonomous(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        "zero".into()
    }
    fn exact_flow(&self, _s: f64, _t: f64, x: &[f64]) -> Option<Vec<f64>> {
        Some(x.to_vec())
    }
    fn exact_log_density(&self, _s: f64, _t: f64, _x: &[f64]) -> Option<f64> {
        Some(0.0)
    }
}

pub struct Constant {
    c: Vec<f64>,
}

impl Constant {
    pub fn new(c: Vec<f64>) -> Self {
        Self { c }
    }
}

impl VectorField for Constant {
    fn dim(&self) -> usize {
        self.c.len()
    }
    fn eval(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.c);
    }
    fn div(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }
    fn has_analytic_div(&self) -> bool {
        true
    }
    fn jacobian(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
    fn is_autonomous(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        "constant".into()
    }
    fn exact_flow(&self, s: f64, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        Some(x.iter().zip(&self.c).map(|(x, c)| x + (t - s) * c).collect())
    }
    fn exact_log_density(&self, s: f64, t: f64, y: &[f64]) -> Option<f64> {
        // shift by τc: K(y) = φ(y - τc)/φ(y)
        let tau = t - s;
        let yc = dot(y, &self.c);
        let cc = dot(&self.c, &self.c);
        Some(tau * yc - 0.5 * tau * tau * cc)
    }
}

/// `b(x) = A x` with a constant matrix.
pub struct Linear {
    n: usize,
    a: Vec<f64>,
    trace: f64,
    label: &'static str,
}

impl Linear {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(LabError::Config("linear field needs a square matrix".into()));
        }
        let a: Vec<f64> = rows.concat();
        finite_all(&a, "matrix entries")?;
        Ok(Self::from_flat(n, a, "linear"))
    }

    fn from_flat(n: usize, a: Vec<f64>, label: &'static str) -> Self {
        let trace = (0..n).map(|i| a[i * n + i]).sum();
        Self { n, a, trace, label }
    }

    pub fn contraction(n: usize) -> Self {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = -1.0;
        }
        Self::from_flat(n, a, "linear-contraction")
    }

    pub fn rotation(omega: f64) -> Self {
        Self::from_flat(2, vec![0.0, -omega, omega, 0.0], "rotation")
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    fn propagator(&self, tau: f64) -> Vec<f64> {
        let scaled: Vec<f64> = self.a.iter().map(|v| v * tau).collect();
        expm(self.n, &scaled)
    }
}

impl VectorField for Linear {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        mat_vec(self.n, &self.a, x, out);
    }
    fn div(&self, _t: f64, _x: &[f64]) -> f64 {
        self.trace
    }
    fn has_analytic_div(&self) -> bool {
        true
    }
    fn jacobian(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        out.copy_from_slice(&self.a);
        true
    }
    fn is_autonomous(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        self.label.into()
    }
    fn exact_flow(&self, s: f64, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        let m = self.propagator(t - s);
        let mut out = vec![0.0; self.n];
        mat_vec(self.n, &m, x, &mut out);
        Some(out)
    }
    fn exact_log_density(&self, s: f64, t: f64, y: &[f64]) -> Option<f64> {
        // X = M x with M = e^{τA}: K(y) = φ(M⁻¹y) / (det M · φ(y))
        let tau = t - s;
        let inv = self.propagator(-tau);
        let mut z = vec![0.0; self.n];
        mat_vec(self.n, &inv, y, &mut z);
        Some(0.5 * dot(y, y) - 0.5 * dot(&z, &z) - tau * self.trace)
    }
}

/// `b(t, x) = -(1 + t) x`.
pub struct LinearRamp {
    dim: usize,
    horizon: f64,
}

impl LinearRamp {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            horizon: f64::INFINITY,
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    fn contraction(s: f64, t: f64) -> f64 {
        (-((t - s) + 0.5 * (t * t - s * s))).exp()
    }
}

impl VectorField for LinearRamp {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -(1.0 + t) * v;
        }
    }
    fn div(&self, t: f64, _x: &[f64]) -> f64 {
        -(1.0 + t) * self.dim as f64
    }
    fn has_analytic_div(&self) -> bool {
        true
    }
    fn jacobian(&self, t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        for i in 0..self.dim {
            out[i * self.dim + i] = -(1.0 + t);
        }
        true
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn name(&self) -> String {
        "linear-ramp".into()
    }
    fn exact_flow(&self, s: f64, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        let c = Self::contraction(s, t);
        Some(x.iter().map(|v| c * v).collect())
    }
    fn exact_log_density(&self, s: f64, t: f64, y: &[f64]) -> Option<f64> {
        let c = Self::contraction(s, t);
        let r2 = dot(y, y);
        Some(-(self.dim as f64) * c.ln() + 0.5 * r2 * (1.0 - 1.0 / (c * c)))
    }
}

/// Expanding 1-D field `b(x) = κ x log(e + x²)`.
///
/// `div_μ b = κ [log(e + x²) + 2x²/(e + x²) - x² log(e + x²)]` lies in
/// `Exp_μ(L / log L)` but not in `Exp_μ(L)`. Trajectories grow like
/// `x^{exp(2κt)}`, so far-out seeds leave any bounded region in finite time.
pub struct Blowup {
    kappa: f64,
}

impl Blowup {
    pub fn new(kappa: f64) -> Self {
        Self { kappa }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

impl VectorField for Blowup {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let x = x[0];
        out[0] = self.kappa * x * (E + x * x).ln();
    }
    fn div(&self, _t: f64, x: &[f64]) -> f64 {
        let x2 = x[0] * x[0];
        self.kappa * ((E + x2).ln() + 2.0 * x2 / (E + x2))
    }
    fn has_analytic_div(&self) -> bool {
        true
    }
    fn jacobian(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        out[0] = self.div(t, x);
        true
    }
    fn is_autonomous(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        "blowup".into()
    }
}

/// `b(t, x) = (1 + cos(t)/2) Σ_k a_k sin(ω_k·x + φ_k)`.
pub struct Trig {
    dim: usize,
    omega: Vec<Vec<f64>>,
    phase: Vec<f64>,
    amp: Vec<Vec<f64>>,
}

impl Trig {
    pub fn new(dim: usize, terms: usize, seed: u64, amplitude: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let norm = amplitude / (terms as f64).sqrt();
        let mut omega = Vec::with_capacity(terms);
        let mut phase = Vec::with_capacity(terms);
        let mut amp = Vec::with_capacity(terms);
        for _ in 0..terms {
            omega.push((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
            phase.push(rng.random::<f64>() * 2.0 * PI);
            amp.push(
                (0..dim)
                    .map(|_| norm * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
        }
        Self {
            dim,
            omega,
            phase,
            amp,
        }
    }

    fn modulation(t: f64) -> f64 {
        1.0 + 0.5 * t.cos()
    }
}

impl VectorField for Trig {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let m = Self::modulation(t);
        for k in 0..self.omega.len() {
            let s = (dot(&self.omega[k], x) + self.phase[k]).sin();
            for (o, a) in out.iter_mut().zip(&self.amp[k]) {
                *o += m * a * s;
            }
        }
    }
    fn div(&self, t: f64, x: &[f64]) -> f64 {
        let m = Self::modulation(t);
        (0..self.omega.len())
            .map(|k| {
                let c = (dot(&self.omega[k], x) + self.phase[k]).cos();
                m * dot(&self.amp[k], &self.omega[k]) * c
            })
            .sum()
    }
    fn has_analytic_div(&self) -> bool {
        true
    }
    fn jacobian(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        let n = self.dim;
        let m = Self::modulation(t);
        for k in 0..self.omega.len() {
            let c = m * (dot(&self.omega[k], x) + self.phase[k]).cos();
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] += self.amp[k][i] * self.omega[k][j] * c;
                }
            }
        }
        true
    }
    fn name(&self) -> String {
        "trig".into()
    }
}

/// Each component a random polynomial of total degree ≤ 3.
pub struct Cubic {
    dim: usize,
    /// `(exponents, coefficient per component)`
    terms: Vec<(Vec<u32>, Vec<f64>)>,
}

impl Cubic {
    pub fn new(dim: usize, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        for exps in monomials(dim, 3) {
            let deg: u32 = exps.iter().sum();
            let w = scale / (1.0 + deg as f64);
            let coef = (0..dim)
                .map(|_| w * rng.sample::<f64, _>(StandardNormal))
                .collect();
            terms.push((exps, coef));
        }
        Self { dim, terms }
    }
}

fn monomials(dim: usize, max_deg: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        let mut next = Vec::new();
        for e in &out {
            let used: u32 = e.iter().sum();
            for k in 0..=(max_deg - used) {
                let mut e2 = e.clone();
                e2.push(k);
                next.push(e2);
            }
        }
        out = next;
    }
    out
}

fn monomial(x: &[f64], e: &[u32]) -> f64 {
    x.iter().zip(e).map(|(x, &k)| x.powi(k as i32)).product()
}

fn monomial_partial(x: &[f64], e: &[u32], j: usize) -> f64 {
    if e[j] == 0 {
        return 0.0;
    }
    let mut e2 = e.to_vec();
    e2[j] -= 1;
    e[j] as f64 * monomial(x, &e2)
}

impl VectorField for Cubic {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (e, c) in &self.terms {
            let m = monomial(x, e);
            for (o, c) in out.iter_mut().zip(c) {
                *o += c * m;
            }
        }
    }
    fn div(&self, _t: f64, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| (0..self.dim).map(|i| c[i] * monomial_partial(x, e, i)).sum::<f64>())
            .sum()
    }
    fn has_analytic_div(&self) -> bool {
        true
    }
    fn jacobian(&self, _t: f64, x: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        let n = self.dim;
        for (e, c) in &self.terms {
            for j in 0..n {
                let d = monomial_partial(x, e, j);
                if d != 0.0 {
                    for i in 0..n {
                        out[i * n + j] += c[i] * d;
                    }
                }
            }
        }
        true
    }
    fn is_autonomous(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        "cubic".into()
    }
}

/// `factor · b`.
pub struct Scaled {
    pub base: Arc<dyn VectorField>,
    pub factor: f64,
}

impl VectorField for Scaled {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.base.eval(t, x, out);
        out.iter_mut().for_each(|v| *v *= self.factor);
    }
    fn div(&self, t: f64, x: &[f64]) -> f64 {
        self.factor * self.base.div(t, x)
    }
    fn has_analytic_div(&self) -> bool {
        self.base.has_analytic_div()
    }
    fn jacobian(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        let ok = self.base.jacobian(t, x, out);
        out.iter_mut().for_each(|v| *v *= self.factor);
        ok
    }
    fn is_autonomous(&self) -> bool {
        self.base.is_autonomous()
    }
    fn horizon(&self) -> f64 {
        self.base.horizon()
    }
    fn name(&self) -> String {
        format!("scaled-{}", self.base.name())
    }
}

/// `b + weight · p`.
pub struct Sum {
    pub base: Arc<dyn VectorField>,
    pub perturbation: Arc<dyn VectorField>,
    pub weight: f64,
}

impl VectorField for Sum {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let mut p = vec![0.0; out.len()];
        self.base.eval(t, x, out);
        self.perturbation.eval(t, x, &mut p);
        for (o, p) in out.iter_mut().zip(p) {
            *o += self.weight * p;
        }
    }
    fn div(&self, t: f64, x: &[f64]) -> f64 {
        self.base.div(t, x) + self.weight * self.perturbation.div(t, x)
    }
    fn has_analytic_div(&self) -> bool {
        self.base.has_analytic_div() && self.perturbation.has_analytic_div()
    }
    fn jacobian(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        let mut p = vec![0.0; out.len()];
        if !(self.base.jacobian(t, x, out) && self.perturbation.jacobian(t, x, &mut p)) {
            return false;
        }
        for (o, p) in out.iter_mut().zip(p) {
            *o += self.weight * p;
        }
        true
    }
    fn is_autonomous(&self) -> bool {
        self.base.is_autonomous() && self.perturbation.is_autonomous()
    }
    fn horizon(&self) -> f64 {
        self.base.horizon().min(self.perturbation.horizon())
    }
    fn name(&self) -> String {
        format!("perturbed-{}", self.base.name())
    }
}

pub(crate) fn mat_vec(n: usize, a: &[f64], x: &[f64], out: &mut [f64]) {
    for i in 0..n {
        out[i] = dot(&a[i * n..(i + 1) * n], x);
    }
}

fn mat_mul(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn expm(n: usize, a: &[f64]) -> Vec<f64> {
    let norm = (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.125 {
        (norm / 0.125).log2().ceil() as i32
    } else {
        0
    };
    let scale = 2f64.powi(-squarings);
    let a: Vec<f64> = a.iter().map(|v| v * scale).collect();
    let mut result = vec![0.0; n * n];
    let mut term = vec![0.0; n * n];
    for i in 0..n {
        result[i * n + i] = 1.0;
        term[i * n + i] = 1.0;
    }
    for k in 1..=18 {
        term = mat_mul(n, &term, &a);
        term.iter_mut().for_each(|v| *v /= k as f64);
        result.iter_mut().zip(&term).for_each(|(r, t)| *r += t);
    }
    for _ in 0..squarings {
        result = mat_mul(n, &result, &result);
    }
    result
}
