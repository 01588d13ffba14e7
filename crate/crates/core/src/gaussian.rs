//! Standard Gaussian measure on `R^n` and expectation schemes under it.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::par::{self, Execution};
use crate::quadrature::gauss_hermite;
use crate::{LabError, Result};

/// Samples drawn from one RNG stream. Stream `k` is seeded with `seed ^ k`, so
/// the sample list does not depend on the number of worker threads.
pub const SHARD_SIZE: usize = 4096;

/// Largest dimension for which tensor Gauss–Hermite grids are allowed.
pub const MAX_TENSOR_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaussianMeasure {
    dim: usize,
}

impl GaussianMeasure {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(LabError::Domain("dimension must be positive".into()));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(LabError::Domain(format!(
                "point has dimension {}, measure has {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Domain("non-finite point".into()));
        }
        let r2: f64 = x.iter().map(|v| v * v).sum();
        Ok(-0.5 * self.dim as f64 * (2.0 * PI).ln() - 0.5 * r2)
    }

    /// `(2π)^{-n/2} exp(-|x|²/2)`.
    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        self.log_pdf(x).map(f64::exp)
    }

    /// Deterministic sample of `n_samples` points, flattened row-major.
    pub fn sample(&self, n_samples: usize, seed: u64) -> Points {
        let dim = self.dim;
        let shards = n_samples.div_ceil(SHARD_SIZE);
        let chunks = par::map_range(Execution::Parallel, shards, |k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ k as u64);
            let count = SHARD_SIZE.min(n_samples - k * SHARD_SIZE);
            (0..count * dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect::<Vec<f64>>()
        });
        Points {
            dim,
            data: chunks.concat(),
        }
    }

    /// Node set realising `scheme` for this measure.
    pub fn cubature(&self, scheme: &ExpectationScheme) -> Result<Cubature> {
        scheme.validate()?;
        match *scheme {
            ExpectationScheme::GaussHermite { level } => {
                if self.dim > MAX_TENSOR_DIM {
                    return Err(LabError::Usage(format!(
                        "tensor Gauss-Hermite is limited to n <= {MAX_TENSOR_DIM}; use Monte Carlo for n = {}",
                        self.dim
                    )));
                }
                let mut main = tensor_hermite(self.dim, level);
                main.scheme = scheme.clone();
                if level >= 2 {
                    let mut companion = tensor_hermite(self.dim, level / 2);
                    companion.scheme = scheme.clone();
                    main.companion = Some(Box::new(companion));
                }
                Ok(main)
            }
            ExpectationScheme::MonteCarlo { samples, seed } => {
                let pts = self.sample(samples, seed);
                Ok(Cubature {
                    dim: self.dim,
                    weights: vec![1.0 / samples as f64; samples],
                    points: pts.data,
                    companion: None,
                    scheme: scheme.clone(),
                })
            }
        }
    }

    /// Estimate `∫ f dμ` with an error bar.
    pub fn expect<F>(&self, f: F, scheme: &ExpectationScheme) -> Result<NormEstimate>
    where
        F: Fn(&[f64]) -> f64 + Sync + Send,
    {
        self.cubature(scheme)?.estimate(Execution::Parallel, f)
    }
}

fn tensor_hermite(dim: usize, level: usize) -> Cubature {
    let (x, w) = gauss_hermite(level);
    let total = level.pow(dim as u32);
    let mut points = Vec::with_capacity(total * dim);
    let mut weights = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut weight = 1.0;
        for _ in 0..dim {
            let j = rem % level;
            rem /= level;
            points.push(x[j]);
            weight *= w[j];
        }
        weights.push(weight);
    }
    Cubature {
        dim,
        points,
        weights,
        companion: None,
        scheme: ExpectationScheme::GaussHermite { level },
    }
}

/// Flattened list of points in `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Points {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(LabError::Usage("ragged or empty point list".into()));
        }
        Ok(Self {
            dim,
            data: rows.concat(),
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExpectationScheme {
    GaussHermite { level: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

impl ExpectationScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ExpectationScheme::GaussHermite { level } if level < 2 => Err(LabError::Usage(
                "Gauss-Hermite level must be at least 2".into(),
            )),
            ExpectationScheme::MonteCarlo { samples: 0, .. } => Err(LabError::Usage(
                "Monte Carlo needs at least one sample".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, ExpectationScheme::GaussHermite { .. })
    }

    /// Same scheme with `factor` times the resolution (levels or samples).
    pub fn refined(&self, factor: usize) -> Self {
        match *self {
            ExpectationScheme::GaussHermite { level } => ExpectationScheme::GaussHermite {
                level: level * factor,
            },
            ExpectationScheme::MonteCarlo { samples, seed } => ExpectationScheme::MonteCarlo {
                samples: samples * factor,
                seed,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateStatus {
    Finite,
    /// The integrand reached `+∞` (or its tail was classified divergent).
    Divergent,
    /// No finite scale makes the modular at most one.
    Unbounded,
    /// Estimates did not stabilise under refinement.
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub abs_error: f64,
    pub scheme: ExpectationScheme,
    pub status: EstimateStatus,
}

impl NormEstimate {
    pub fn exact(value: f64, scheme: ExpectationScheme) -> Self {
        Self {
            value,
            abs_error: 0.0,
            scheme,
            status: EstimateStatus::Finite,
        }
    }

    pub fn with_status(value: f64, scheme: ExpectationScheme, status: EstimateStatus) -> Self {
        Self {
            value,
            abs_error: if status == EstimateStatus::Finite { 0.0 } else { f64::INFINITY },
            scheme,
            status,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.status == EstimateStatus::Finite
    }

    /// Whether `|self - other|` is within the combined error bars.
    pub fn agrees_with(&self, other: &NormEstimate) -> bool {
        self.is_finite()
            && other.is_finite()
            && (self.value - other.value).abs() <= self.abs_error + other.abs_error
    }
}

/// Weighted node set for a Gaussian expectation.
#[derive(Debug, Clone)]
pub struct Cubature {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    companion: Option<Box<Cubature>>,
    scheme: ExpectationScheme,
}

impl Cubature {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scheme(&self) -> &ExpectationScheme {
        &self.scheme
    }

    /// Lower-resolution rule used for the quadrature error estimate.
    pub fn companion(&self) -> Option<&Cubature> {
        self.companion.as_deref()
    }

    pub fn as_points(&self) -> Points {
        Points {
            dim: self.dim,
            data: self.points.clone(),
        }
    }

    /// Evaluate `f` at every node (and companion node) and combine.
    pub fn estimate<F>(&self, exec: Execution, f: F) -> Result<NormEstimate>
    where
        F: Fn(&[f64]) -> f64 + Sync + Send,
    {
        let values = par::map_range(exec, self.len(), |i| f(self.point(i)));
        let companion = self
            .companion
            .as_ref()
            .map(|c| par::map_range(exec, c.len(), |i| f(c.point(i))));
        self.estimate_values(&values, companion.as_deref())
    }

    /// Combine precomputed node values into an estimate.
    pub fn estimate_values(&self, values: &[f64], companion: Option<&[f64]>) -> Result<NormEstimate> {
        let value = weighted_sum(&self.weights, values)?;
        if value.is_infinite() {
            return Ok(NormEstimate::with_status(
                f64::INFINITY,
                self.scheme.clone(),
                EstimateStatus::Divergent,
            ));
        }
        let abs_error = match &self.scheme {
            ExpectationScheme::MonteCarlo { .. } => {
                let n = values.len() as f64;
                if values.len() < 2 {
                    f64::INFINITY
                } else {
                    let var = values.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (n - 1.0);
                    3.0 * var.sqrt() / n.sqrt()
                }
            }
            ExpectationScheme::GaussHermite { .. } => match (&self.companion, companion) {
                (Some(c), Some(cv)) => {
                    let coarse = weighted_sum(&c.weights, cv)?;
                    (value - coarse).abs()
                }
                _ => 0.0,
            },
        };
        Ok(NormEstimate {
            value,
            abs_error,
            scheme: self.scheme.clone(),
            status: if abs_error.is_finite() {
                EstimateStatus::Finite
            } else {
                EstimateStatus::Unstable
            },
        })
    }
}

impl Cubature {
    /// Like [`Cubature::estimate_values`] for values given as logarithms;
    /// `-∞` entries are zeros. A result beyond `f64::MAX` is divergent.
    pub fn estimate_log_values(&self, log_values: &[f64], companion: Option<&[f64]>) -> Result<NormEstimate> {
        if log_values.iter().chain(companion.into_iter().flatten()).any(|v| v.is_nan()) {
            return Err(LabError::Evaluation("NaN log-value".into()));
        }
        if log_values.iter().chain(companion.into_iter().flatten()).any(|v| *v == f64::INFINITY) {
            return Ok(NormEstimate::with_status(f64::INFINITY, self.scheme.clone(), EstimateStatus::Divergent));
        }
        let divergent = || NormEstimate::with_status(f64::INFINITY, self.scheme.clone(), EstimateStatus::Divergent);
        match &self.scheme {
            ExpectationScheme::GaussHermite { .. } => {
                let log_sum = |c: &Cubature, v: &[f64]| {
                    let lw: Vec<f64> = c.weights.iter().map(|w| w.ln()).collect();
                    let terms: Vec<f64> = v.iter().zip(&lw).map(|(a, b)| a + b).collect();
                    crate::quadrature::log_sum_exp(&terms)
                };
                let lv = log_sum(self, log_values);
                let value = lv.exp();
                if !value.is_finite() {
                    return Ok(divergent());
                }
                let abs_error = match (&self.companion, companion) {
                    (Some(c), Some(cv)) => (value - log_sum(c, cv).exp()).abs(),
                    _ => 0.0,
                };
                Ok(NormEstimate {
                    value,
                    abs_error,
                    scheme: self.scheme.clone(),
                    status: if abs_error.is_finite() {
                        EstimateStatus::Finite
                    } else {
                        EstimateStatus::Unstable
                    },
                })
            }
            ExpectationScheme::MonteCarlo { .. } => {
                let shift = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if shift == f64::NEG_INFINITY {
                    return Ok(NormEstimate::exact(0.0, self.scheme.clone()));
                }
                let scaled: Vec<f64> = log_values.iter().map(|v| (v - shift).exp()).collect();
                let mut est = self.estimate_values(&scaled, None)?;
                let factor = shift.exp();
                est.value *= factor;
                est.abs_error *= factor;
                if !est.value.is_finite() {
                    return Ok(divergent());
                }
                Ok(est)
            }
        }
    }
}

/// Compensated weighted sum; `+∞` propagates, `NaN`/`-∞` are errors.
pub fn weighted_sum(weights: &[f64], values: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut divergent = false;
    for (w, v) in weights.iter().zip(values) {
        if v.is_nan() || *v == f64::NEG_INFINITY {
            return Err(LabError::Evaluation(format!("integrand returned {v}")));
        }
        if *v == f64::INFINITY {
            divergent = true;
            continue;
        }
        let term = w * v;
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    if divergent {
        return Ok(f64::INFINITY);
    }
    Ok(sum + comp)
}
