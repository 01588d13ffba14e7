//! Ornstein–Uhlenbeck smoothing `P_ε b(x) = ∫ b(e^{-ε}x + √(1-e^{-2ε}) y) dμ(y)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{div_mu, dot, VectorField};
use crate::gaussian::{ExpectationScheme, GaussianMeasure};
use crate::{LabError, Result};

/// Frozen node set for the inner Gaussian average. Monte Carlo node sets are
/// antithetic (`y` and `-y` both present) with second moments matched to the
/// identity, so odd moments vanish and the covariance is exact.
#[derive(Debug, Clone)]
pub struct OuNodes {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl OuNodes {
    pub fn new(dim: usize, scheme: &ExpectationScheme) -> Result<Self> {
        let m = GaussianMeasure::new(dim)?;
        match *scheme {
            ExpectationScheme::GaussHermite { .. } => {
                let c = m.cubature(scheme)?;
                Ok(Self {
                    dim,
                    points: c.points().flatten().copied().collect(),
                    weights: c.weights().to_vec(),
                })
            }
            ExpectationScheme::MonteCarlo { samples, seed } => {
                scheme.validate()?;
                let half = samples.div_ceil(2);
                let mut base = m.sample(half, seed).data;
                whiten(dim, &mut base);
                let mut points = base.clone();
                points.extend(base.iter().map(|v| -v));
                let n = 2 * half;
                Ok(Self {
                    dim,
                    points,
                    weights: vec![1.0 / n as f64; n],
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn node(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }
}

/// Rescale `y` so that `(1/N) Σ y yᵀ = I`, via the Cholesky factor of the
/// raw second-moment matrix.
fn whiten(dim: usize, data: &mut [f64]) {
    let n = data.len() / dim;
    let mut c = vec![0.0; dim * dim];
    for y in data.chunks_exact(dim) {
        for i in 0..dim {
            for j in 0..dim {
                c[i * dim + j] += y[i] * y[j] / n as f64;
            }
        }
    }
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * dim + k] * l[j * dim + k]).sum();
            if i == j {
                l[i * dim + i] = (c[i * dim + i] - s).sqrt();
            } else {
                l[i * dim + j] = (c[i * dim + j] - s) / l[j * dim + j];
            }
        }
    }
    if l.iter().any(|v| !v.is_finite()) || (0..dim).any(|i| l[i * dim + i] <= 0.0) {
        return;
    }
    let mut z = vec![0.0; dim];
    for y in data.chunks_exact_mut(dim) {
        // forward substitution L z = y
        for i in 0..dim {
            let s: f64 = (0..i).map(|k| l[i * dim + k] * z[k]).sum();
            z[i] = (y[i] - s) / l[i * dim + i];
        }
        y.copy_from_slice(&z);
    }
}

pub struct OuSmoothed {
    inner: Arc<dyn VectorField>,
    eps: f64,
    shrink: f64,
    spread: f64,
    nodes: OuNodes,
}

impl OuSmoothed {
    pub fn new(inner: Arc<dyn VectorField>, eps: f64, scheme: &ExpectationScheme) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(LabError::Domain(format!("smoothing time must be positive, got {eps}")));
        }
        let nodes = OuNodes::new(inner.dim(), scheme)?;
        Ok(Self {
            eps,
            shrink: (-eps).exp(),
            spread: (-(-2.0 * eps).exp_m1()).sqrt(),
            nodes,
            inner,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn inner(&self) -> &Arc<dyn VectorField> {
        &self.inner
    }

    fn shifted(&self, x: &[f64], j: usize, z: &mut [f64]) {
        for ((z, x), y) in z.iter_mut().zip(x).zip(self.nodes.node(j)) {
            *z = self.shrink * x + self.spread * y;
        }
    }

    /// `P_ε g (x)` for a scalar function `g(t, ·)`, on the frozen nodes.
    pub fn smooth_scalar(&self, x: &[f64], g: impl Fn(&[f64]) -> f64) -> f64 {
        let mut z = vec![0.0; x.len()];
        let mut acc = 0.0;
        for j in 0..self.nodes.len() {
            self.shifted(x, j, &mut z);
            acc += self.nodes.weights[j] * g(&z);
        }
        acc
    }
}

impl VectorField for OuSmoothed {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let mut z = vec![0.0; n];
        let mut b = vec![0.0; n];
        out.fill(0.0);
        for j in 0..self.nodes.len() {
            self.shifted(x, j, &mut z);
            self.inner.eval(t, &z, &mut b);
            let w = self.nodes.weights[j];
            for (o, b) in out.iter_mut().zip(&b) {
                *o += w * b;
            }
        }
    }

    /// `div P_ε b = e^{-ε} P_ε(div b)`.
    fn div(&self, t: f64, x: &[f64]) -> f64 {
        self.shrink * self.smooth_scalar(x, |z| self.inner.div(t, z))
    }

    fn has_analytic_div(&self) -> bool {
        self.inner.has_analytic_div()
    }

    fn jacobian(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        let n = x.len();
        let mut z = vec![0.0; n];
        let mut jb = vec![0.0; n * n];
        out.fill(0.0);
        for j in 0..self.nodes.len() {
            self.shifted(x, j, &mut z);
            if !self.inner.jacobian(t, &z, &mut jb) {
                return false;
            }
            let w = self.shrink * self.nodes.weights[j];
            for (o, v) in out.iter_mut().zip(&jb) {
                *o += w * v;
            }
        }
        true
    }

    fn is_autonomous(&self) -> bool {
        self.inner.is_autonomous()
    }

    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    fn name(&self) -> String {
        format!("mollified-{}", self.inner.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuDivergenceReport {
    pub eps: f64,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub probes: usize,
}

/// Compare `div_μ(P_ε b)` with `e^ε P_ε(div_μ b)` at `probes`, on the same
/// frozen nodes. The relative error is taken against the magnitude of the
/// averaged integrand, `e^ε P_ε(|div b| + |z·b|)`, so that cancellation
/// between the two terms does not inflate it.
pub fn ou_divergence_identity_check(f: &OuSmoothed, t: f64, probes: &[Vec<f64>]) -> OuDivergenceReport {
    let inner = f.inner.as_ref();
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for x in probes {
        let lhs = div_mu(f, t, x);
        let rhs = f.eps.exp() * f.smooth_scalar(x, |z| div_mu(inner, t, z));
        let scale = f.eps.exp()
            * f.smooth_scalar(x, |z| {
                let b = super::eval_vec(inner, t, z);
                inner.div(t, z).abs() + dot(z, &b).abs()
            });
        let abs = (lhs - rhs).abs();
        max_abs = max_abs.max(abs);
        if abs > 0.0 {
            // both sides vanish identically (e.g. rotations): absolute error
            max_rel = max_rel.max(abs / if scale > 0.0 { scale } else { 1.0 });
        }
    }
    OuDivergenceReport {
        eps: f.eps,
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        probes: probes.len(),
    }
}

impl OuSmoothed {
    pub fn identity_check(&self, t: f64, probes: &[Vec<f64>]) -> OuDivergenceReport {
        ou_divergence_identity_check(self, t, probes)
    }
}

/// `sup_x |P_ε b(x) - b(x)|` over `probes`.
pub fn smoothing_gap(f: &OuSmoothed, t: f64, probes: &[Vec<f64>]) -> f64 {
    let n = f.dim();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    probes
        .iter()
        .map(|x| {
            f.eval(t, x, &mut a);
            f.inner.eval(t, x, &mut b);
            let d: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a - b).collect();
            dot(&d, &d).sqrt()
        })
        .fold(0.0, f64::max)
}
