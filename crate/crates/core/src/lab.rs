//! Experiment harness: configs, the mollification, stability and Lebesgue
//! studies, and the tables and records every subcommand emits.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::density::{
    beta_integral, lp_bound_check, mass_check, phi_alpha_modular, threshold_from_integral, DensityOnScheme,
    ThresholdConstant,
};
use crate::field::{
    beta_norm, divergence_consistency, growth_norm, ou_divergence_identity_check, FieldSpec, Linear, OuSmoothed,
    VectorField,
};
use crate::flow::{
    distance_in_measure, integrate_backward, integrate_forward, mean_sup_gap, FlowOptions, ParticleStatus,
    TimeInterval,
};
use crate::gaussian::{ExpectationScheme, GaussianMeasure, NormEstimate};
use crate::quadrature::{gauss_legendre_on, log_normal_interval, simpson};
use crate::transport::{
    solve_characteristics, stability_double_log_check, stability_triple_log_check, weak_residual, BoxSet,
    Orientation, ScalarFn, StabilityReport, TestFunction, WeakForm,
};
use crate::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Norms,
    FieldCheck,
    Flow,
    Density,
    Transport,
    Mollify,
    Stability,
    Lebesgue,
    Report,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::Norms,
        Experiment::FieldCheck,
        Experiment::Flow,
        Experiment::Density,
        Experiment::Transport,
        Experiment::Mollify,
        Experiment::Stability,
        Experiment::Lebesgue,
        Experiment::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Norms => "norms",
            Experiment::FieldCheck => "field-check",
            Experiment::Flow => "flow",
            Experiment::Density => "density",
            Experiment::Transport => "transport",
            Experiment::Mollify => "mollify",
            Experiment::Stability => "stability",
            Experiment::Lebesgue => "lebesgue",
            Experiment::Report => "report",
        }
    }
}

/// Everything an experiment needs; a run is reproducible from this alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub field: FieldSpec,
    pub interval: TimeInterval,
    pub scheme: ExpectationScheme,
    /// ODE tolerance.
    pub tol: f64,
    /// Luxembourg-norm bisection tolerance.
    pub norm_tol: f64,
    pub seed: u64,
    /// Monte Carlo sample count for the Lebesgue estimators.
    pub samples: usize,
    pub particles: usize,
    /// Explicit particle starting points; replaces sampling from `μ`.
    pub seed_points: Option<Vec<Vec<f64>>>,
    pub checkpoints: usize,
    pub alpha: f64,
    /// Orlicz exponents `γ` for divergence norms.
    pub gamma: Vec<f64>,
    /// Distance thresholds for convergence in measure.
    pub thresholds: Vec<f64>,
    /// Rungs of the mollification and stability ladders.
    pub ladder: usize,
    pub mollifier_level: usize,
    pub set: Option<BoxSet>,
    pub out: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Report,
            field: FieldSpec::LinearContraction { dim: 1 },
            interval: TimeInterval { s: 0.0, t: 0.5 },
            scheme: ExpectationScheme::GaussHermite { level: 40 },
            tol: 1e-8,
            norm_tol: 1e-6,
            seed: 20_240_917,
            samples: 10_000,
            particles: 1000,
            seed_points: None,
            checkpoints: 5,
            alpha: 0.5,
            gamma: vec![0.0, 1.0],
            thresholds: vec![0.1, 0.01],
            ladder: 6,
            mollifier_level: 16,
            set: None,
            out: "flowlab-out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Check parameters and build the field.
    pub fn validate(&self) -> Result<Arc<dyn VectorField>> {
        let bad = |m: &str| Err(LabError::Config(m.into()));
        if !(self.tol > 0.0 && self.tol < 1.0) || !(self.norm_tol > 0.0 && self.norm_tol < 1.0) {
            return bad("tolerances must lie in (0, 1)");
        }
        if self.samples == 0 || self.particles == 0 || self.checkpoints == 0 {
            return bad("samples, particles and checkpoints must be positive");
        }
        if self.ladder < 2 || self.mollifier_level < 2 {
            return bad("ladder needs at least 2 rungs and the mollifier level at least 2");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if self.gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("gamma values must be nonnegative");
        }
        if self.thresholds.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return bad("distance thresholds must be positive");
        }
        self.scheme.validate().map_err(|e| LabError::Config(e.to_string()))?;
        let f = self.field.build()?;
        let iv = TimeInterval::new(self.interval.s, self.interval.t).map_err(|e| LabError::Config(e.to_string()))?;
        iv.check_within(f.as_ref()).map_err(|e| LabError::Config(e.to_string()))?;
        if let Some(pts) = &self.seed_points {
            if pts.is_empty() || pts.iter().any(|p| p.len() != f.dim() || p.iter().any(|v| !v.is_finite())) {
                return bad("seed points must be finite and match the field dimension");
            }
        }
        if let Some(set) = &self.set {
            if set.dim() != f.dim() {
                return bad("set dimension differs from the field");
            }
        }
        Ok(f)
    }

    fn seeds(&self, dim: usize) -> Result<Vec<Vec<f64>>> {
        Ok(match &self.seed_points {
            Some(p) => p.clone(),
            None => GaussianMeasure::new(dim)?.sample(self.particles, self.seed).rows(),
        })
    }

    fn checkpoint_times(&self) -> Vec<f64> {
        let TimeInterval { s, t } = self.interval;
        (1..=self.checkpoints)
            .map(|i| s + (t - s) * i as f64 / self.checkpoints as f64)
            .collect()
    }
}

/// Library field with its default parameters, by name (`zero`, `blowup`, ...).
pub fn library_field(name: &str) -> Result<FieldSpec> {
    let mut all = FieldSpec::library();
    all.push(FieldSpec::Cubic {
        dim: 2,
        seed: 3,
        scale: 0.5,
    });
    if let Some(f) = all.iter().find(|f| f.label() == name) {
        return Ok(f.clone());
    }
    let mut names: Vec<String> = all.iter().map(FieldSpec::label).collect();
    names.dedup();
    Err(LabError::Config(format!("unknown field {name}; known: {}", names.join(", "))))
}

/// Comma-separated table with a header row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Output of one experiment.
#[derive(Debug, Clone)]
pub struct Section {
    pub name: String,
    pub table: Table,
    pub records: Vec<Value>,
    /// Set when the run hit a numerical failure state.
    pub failure: Option<String>,
}

fn num(v: f64) -> String {
    if v != 0.0 && v.is_finite() && !(1e-4..1e15).contains(&v.abs()) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn est_cells(e: &NormEstimate) -> [String; 3] {
    [num(e.value), num(e.abs_error), status_str(e)]
}

fn status_str(e: &NormEstimate) -> String {
    serde_json::to_value(e.status)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Write `<out>/<name>.csv` (first line `# config=<json>`) and
/// `<out>/<name>.jsonl` (first record `{"config": ...}`).
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, section: &Section) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let cfg_json = cfg.to_json();
    let csv_path = dir.join(format!("{}.csv", section.name));
    let jsonl_path = dir.join(format!("{}.jsonl", section.name));
    let mut csv = format!("# config={cfg_json}\n");
    csv.push_str(&section.table.to_csv());
    fs::write(&csv_path, csv)?;
    let mut jl = String::new();
    writeln!(jl, "{}", json!({ "config": serde_json::from_str::<Value>(&cfg_json)? })).unwrap();
    for r in &section.records {
        writeln!(jl, "{r}").unwrap();
    }
    fs::write(&jsonl_path, jl)?;
    Ok((csv_path, jsonl_path))
}

/// Run the experiment named in the config.
pub fn run(cfg: &ExperimentConfig) -> Result<Section> {
    match cfg.experiment {
        Experiment::Norms => run_norms(cfg),
        Experiment::FieldCheck => run_field_check(cfg),
        Experiment::Flow => run_flow(cfg),
        Experiment::Density => run_density(cfg),
        Experiment::Transport => run_transport(cfg),
        Experiment::Mollify => Ok(run_mollification_study(cfg)?.section()),
        Experiment::Stability => Ok(run_stability_study(cfg)?.section()),
        Experiment::Lebesgue => Ok(run_lebesgue_quasi_invariance(cfg)?.section()),
        Experiment::Report => run_report(cfg),
    }
}

fn run_norms(cfg: &ExperimentConfig) -> Result<Section> {
    let f = cfg.validate()?;
    let iv = cfg.interval;
    let times = if f.is_autonomous() {
        vec![iv.s]
    } else {
        simpson(9, iv.s, iv.t).0
    };
    let mut table = Table::new(&["quantity", "gamma", "time", "value", "abs_error", "status"]);
    let mut records = Vec::new();
    let mut emit = |q: &str, gamma: Option<f64>, time: Option<f64>, e: &NormEstimate| {
        let [v, a, s] = est_cells(e);
        table.push(vec![
            q.into(),
            gamma.map(num).unwrap_or_default(),
            time.map(num).unwrap_or_default(),
            v,
            a,
            s,
        ]);
        records.push(json!({
            "quantity": q, "field": f.name(), "gamma": gamma, "time": time,
            "value": e.value, "abs_error": e.abs_error, "status": e.status,
        }));
    };
    for &g in &cfg.gamma {
        for &t in &times {
            emit("beta", Some(g), Some(t), &beta_norm(f.as_ref(), t, g, &cfg.scheme, cfg.norm_tol)?);
        }
        emit("beta_integral", Some(g), None, &beta_integral(f.as_ref(), iv, g, &cfg.scheme, cfg.norm_tol)?);
    }
    emit("growth", None, Some(iv.s), &growth_norm(f.as_ref(), iv.s, &cfg.scheme)?);
    Ok(Section {
        name: "norms".into(),
        table,
        records,
        failure: None,
    })
}

fn run_field_check(cfg: &ExperimentConfig) -> Result<Section> {
    let f = cfg.validate()?;
    let probes = GaussianMeasure::new(f.dim())?.sample(cfg.particles.min(1000), cfg.seed).rows();
    let mut table = Table::new(&["check", "eps", "max_abs_error", "max_rel_error", "probes"]);
    let mut records = Vec::new();
    let dc = divergence_consistency(f.as_ref(), cfg.interval.s, &probes);
    table.push(vec!["divergence-fd".into(), String::new(), String::new(), num(dc), probes.len().to_string()]);
    records.push(json!({
        "check": "divergence-fd", "field": f.name(), "analytic": f.has_analytic_div(),
        "max_rel_error": dc, "probes": probes.len(),
    }));
    let nodes = ExpectationScheme::GaussHermite { level: cfg.mollifier_level };
    for eps in [0.5, 0.1] {
        let sm = OuSmoothed::new(f.clone(), eps, &nodes)?;
        let r = ou_divergence_identity_check(&sm, cfg.interval.s, &probes);
        table.push(vec![
            "ou-commutation".into(),
            num(eps),
            num(r.max_abs_error),
            num(r.max_rel_error),
            r.probes.to_string(),
        ]);
        records.push(json!({
            "check": "ou-commutation", "field": f.name(), "eps": eps,
            "max_abs_error": r.max_abs_error, "max_rel_error": r.max_rel_error, "probes": r.probes,
        }));
    }
    Ok(Section {
        name: "field-check".into(),
        table,
        records,
        failure: None,
    })
}

fn run_flow(cfg: &ExperimentConfig) -> Result<Section> {
    let f = cfg.validate()?;
    let seeds = cfg.seeds(f.dim())?;
    let opts = FlowOptions::new(cfg.tol).checkpoints(cfg.checkpoint_times());
    let bundle = integrate_forward(f.as_ref(), cfg.interval, &seeds, &opts)?;
    let n = f.dim();
    let mut header = vec!["particle".to_string(), "time".into()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend(["div_accum".into(), "status".into()]);
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    let mut records = Vec::new();
    for (id, p) in bundle.particles.iter().enumerate() {
        for (ci, c) in bundle.checkpoints.iter().enumerate() {
            let mut row = vec![id.to_string(), num(*c)];
            row.extend(p.path[ci].iter().map(|v| num(*v)));
            row.extend([num(p.div_path[ci]), p.status.as_str().into()]);
            table.push(row);
        }
        records.push(json!({
            "particle": id, "x0": p.x0, "terminal": p.terminal(), "div_accum": p.div_accum(),
            "status": p.status.as_str(), "accepted_steps": p.stats.accepted, "rejected_steps": p.stats.rejected,
        }));
    }
    let bad = bundle.count(ParticleStatus::BlownUp) + bundle.count(ParticleStatus::ToleranceFailure);
    let frac = bad as f64 / bundle.particles.len() as f64;
    records.push(json!({
        "summary": true, "field": f.name(), "particles": bundle.particles.len(),
        "blown_up": bundle.count(ParticleStatus::BlownUp),
        "tolerance_failures": bundle.count(ParticleStatus::ToleranceFailure),
        "failed_fraction": frac,
    }));
    let failure = (frac > 0.01).then(|| format!("{bad} of {} particles failed", bundle.particles.len()));
    Ok(Section {
        name: "flow".into(),
        table,
        records,
        failure,
    })
}

fn run_density(cfg: &ExperimentConfig) -> Result<Section> {
    let f = cfg.validate()?;
    let iv = cfg.interval;
    let d = DensityOnScheme::new(f.as_ref(), iv, &cfg.scheme, cfg.tol)?;
    let mut table = Table::new(&["quantity", "param", "value", "abs_error", "status"]);
    let mut records = Vec::new();
    let mut emit = |q: &str, param: Option<f64>, e: &NormEstimate| {
        let [v, a, s] = est_cells(e);
        table.push(vec![q.into(), param.map(num).unwrap_or_default(), v, a, s]);
        records.push(json!({
            "quantity": q, "field": f.name(), "interval": iv, "param": param,
            "value": e.value, "abs_error": e.abs_error, "state": e.status,
        }));
    };
    emit("mass", None, &mass_check(&d)?);
    emit("phi_alpha_modular", Some(cfg.alpha), &phi_alpha_modular(&d, cfg.alpha)?);
    let b0 = beta_integral(f.as_ref(), iv, 0.0, &cfg.scheme, cfg.norm_tol)?;
    let b1 = beta_integral(f.as_ref(), iv, 1.0, &cfg.scheme, cfg.norm_tol)?;
    emit("beta_integral", Some(0.0), &b0);
    emit("beta_integral", Some(1.0), &b1);
    for c in ThresholdConstant::ALL {
        let beta = if c.gamma() == 0.0 { &b0 } else { &b1 };
        let th = threshold_from_integral(c, beta);
        let mut e = NormEstimate::exact(th.threshold, cfg.scheme.clone());
        e.abs_error = th.threshold * c.value() * th.beta_integral_error;
        emit(&format!("threshold_{}", c.label()), Some(c.gamma()), &e);
    }
    if b0.is_finite() {
        let lp = lp_bound_check(&d, &b0, &[0.5, 0.9])?;
        for (p, m) in lp.p.iter().zip(&lp.moments) {
            emit("lp_moment", Some(*p), m);
        }
    }
    let total = d.log_k.len() + d.companion_log_k.as_ref().map_or(0, Vec::len);
    let failure = (d.flagged as f64 > 0.01 * total as f64)
        .then(|| format!("{} of {total} density nodes failed to integrate", d.flagged));
    Ok(Section {
        name: "density".into(),
        table,
        records,
        failure,
    })
}

/// Box `[a, a + w] × [-1, 1]^{n-1}` with `log μ` equal to `log_mass < -1`.
pub fn far_set(dim: usize, log_mass: f64) -> Result<BoxSet> {
    if !(log_mass < -1.0) || dim == 0 {
        return Err(LabError::Usage("far set needs log mass below -1".into()));
    }
    let width = |a: f64| (1.0 / a).min(0.01);
    let target = log_mass - (dim - 1) as f64 * log_normal_interval(-1.0, 1.0);
    // log μ[a, a+w] + a²/2 varies slowly in a
    let mut a = (-2.0 * target).sqrt();
    for _ in 0..50 {
        let r = log_normal_interval(a, a + width(a)) + 0.5 * a * a;
        a = (2.0 * (r - target)).max(0.0).sqrt();
    }
    let mut lo = vec![-1.0; dim];
    let mut hi = vec![1.0; dim];
    lo[0] = a;
    hi[0] = a + width(a);
    BoxSet::new(lo, hi)
}

/// The three test functions used for weak residuals.
pub fn standard_test_functions(dim: usize, horizon: f64) -> Vec<TestFunction> {
    vec![
        TestFunction::bump(horizon, vec![0.0; dim], 0.7),
        TestFunction::bump(horizon, vec![0.5; dim], 0.5),
        TestFunction::modulated(horizon, vec![0.0; dim], 0.8, vec![1.5; dim]),
    ]
}

/// Bounded smooth datum for residual checks.
pub fn smooth_datum() -> ScalarFn {
    Arc::new(|x: &[f64]| {
        let s: f64 = x.iter().enumerate().map(|(i, v)| v * (1.0 + 0.5 * i as f64)).sum();
        (1.3 * s + 0.4).sin()
    })
}

fn run_transport(cfg: &ExperimentConfig) -> Result<Section> {
    let f = cfg.validate()?;
    let n = f.dim();
    let horizon = cfg.interval.t;
    let mut table = Table::new(&["check", "case", "value", "bound", "state"]);
    let mut records = Vec::new();
    if horizon > 0.0 {
        let sol = solve_characteristics(f.clone(), smooth_datum(), Orientation::ForwardCauchy, cfg.tol)?;
        for (i, test) in standard_test_functions(n, horizon).iter().enumerate() {
            for form in [WeakForm::Gaussian, WeakForm::Lebesgue] {
                let r = weak_residual(&sol, test, &cfg.scheme, form)?;
                let case = format!(
                    "test{i}-{}",
                    match form {
                        WeakForm::Gaussian => "gaussian",
                        WeakForm::Lebesgue => "lebesgue",
                    }
                );
                let state = if r.vanishes() { "vanishes" } else { "nonzero" };
                table.push(vec!["weak-residual".into(), case.clone(), num(r.value), num(r.error_bar), state.into()]);
                records.push(json!({ "check": "weak-residual", "field": f.name(), "case": case, "residual": r }));
            }
        }
    }
    let sets = match &cfg.set {
        Some(s) => vec![s.clone()],
        None => vec![far_set(n, -69.0)?, far_set(n, -1e9)?],
    };
    for set in &sets {
        for rep in [
            stability_triple_log_check(f.as_ref(), cfg.interval, set, 1.0, &cfg.scheme, cfg.tol)?,
            stability_double_log_check(f.as_ref(), cfg.interval, set, 1.0, &cfg.scheme, cfg.tol)?,
        ] {
            push_stability(&mut table, &mut records, &rep);
        }
    }
    Ok(Section {
        name: "transport".into(),
        table,
        records,
        failure: None,
    })
}

fn push_stability(table: &mut Table, records: &mut Vec<Value>, rep: &StabilityReport) {
    let kind = serde_json::to_value(rep.kind).unwrap();
    let state = serde_json::to_value(rep.state).unwrap();
    table.push(vec![
        kind.as_str().unwrap_or_default().into(),
        format!("log_mu_e={}", rep.log_mu_e),
        num(rep.lhs_gap),
        num(rep.budget),
        state.as_str().unwrap_or_default().into(),
    ]);
    records.push(json!({
        "check": kind, "field": rep.field, "interval": rep.interval, "p": rep.p,
        "log_mu_e": rep.log_mu_e, "lhs_gap": rep.lhs_gap, "budget": rep.budget, "state": state,
        "report": rep,
    }));
}

/// `A` for fields of the form `b(x) = A x` (row-major).
pub fn linear_generator(spec: &FieldSpec) -> Option<Vec<Vec<f64>>> {
    match spec {
        FieldSpec::Zero { dim } => Some(vec![vec![0.0; *dim]; *dim]),
        FieldSpec::LinearContraction { dim } => Some(
            (0..*dim)
                .map(|i| (0..*dim).map(|j| if i == j { -1.0 } else { 0.0 }).collect())
                .collect(),
        ),
        FieldSpec::Rotation { omega } => Some(vec![vec![0.0, -omega], vec![*omega, 0.0]]),
        FieldSpec::Linear { a } => Some(a.clone()),
        _ => None,
    }
}

fn scaled_linear(a: &[Vec<f64>], c: f64) -> Result<Linear> {
    Linear::new(a.iter().map(|r| r.iter().map(|v| c * v).collect()).collect())
}

/// Mean over seeds of `sup_c |X_A(s, c, x) - X_B(s, c, x)|` for two linear fields.
fn analytic_mean_gap(a: &Linear, b: &Linear, s: f64, checkpoints: &[f64], seeds: &[Vec<f64>]) -> f64 {
    let total: f64 = seeds
        .iter()
        .map(|x| {
            checkpoints
                .iter()
                .map(|&c| {
                    let xa = a.exact_flow(s, c, x).expect("linear flow");
                    let xb = b.exact_flow(s, c, x).expect("linear flow");
                    xa.iter().zip(&xb).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
                })
                .fold(0.0, f64::max)
        })
        .sum();
    total / seeds.len() as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MollificationRow {
    pub eps_coarse: f64,
    pub eps_fine: f64,
    pub gamma: f64,
    pub sup_fraction: f64,
    pub product_fraction: f64,
    /// Binomial standard deviation of `sup_fraction`.
    pub sigma: f64,
    pub mean_gap: f64,
    /// `3σ/√N` for `mean_gap`.
    pub mean_gap_bar: f64,
    pub analytic_mean_gap: Option<f64>,
    pub excluded: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MollificationStudy {
    pub field: String,
    pub interval: TimeInterval,
    pub particles: usize,
    pub rows: Vec<MollificationRow>,
    /// Per threshold: fractions nonincreasing down the ladder within 3σ.
    pub monotone: Vec<(f64, bool)>,
    pub gap_monotone: bool,
}

impl MollificationStudy {
    pub fn all_monotone(&self) -> bool {
        self.gap_monotone && self.monotone.iter().all(|m| m.1)
    }

    pub fn section(&self) -> Section {
        let mut table = Table::new(&[
            "eps_coarse",
            "eps_fine",
            "gamma",
            "sup_fraction",
            "product_fraction",
            "sigma",
            "mean_gap",
            "mean_gap_bar",
            "analytic_mean_gap",
            "excluded",
        ]);
        let mut records = Vec::new();
        for r in &self.rows {
            table.push(vec![
                num(r.eps_coarse),
                num(r.eps_fine),
                num(r.gamma),
                num(r.sup_fraction),
                num(r.product_fraction),
                num(r.sigma),
                num(r.mean_gap),
                num(r.mean_gap_bar),
                r.analytic_mean_gap.map(num).unwrap_or_default(),
                r.excluded.to_string(),
            ]);
            records.push(json!({ "field": self.field, "row": r }));
        }
        records.push(json!({
            "summary": true, "field": self.field, "particles": self.particles,
            "monotone": self.monotone, "gap_monotone": self.gap_monotone,
        }));
        Section {
            name: "mollify".into(),
            table,
            records,
            failure: None,
        }
    }
}

fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n.max(1) as f64).sqrt()
}

/// Convergence in measure of the flows of `P_ε b` down `ε = 2^{-1}, …, 2^{-K}`.
pub fn run_mollification_study(cfg: &ExperimentConfig) -> Result<MollificationStudy> {
    let base = cfg.validate()?;
    let seeds = cfg.seeds(base.dim())?;
    let cps = cfg.checkpoint_times();
    let opts = FlowOptions::new(cfg.tol).checkpoints(cps.clone());
    let nodes = ExpectationScheme::GaussHermite { level: cfg.mollifier_level };
    let eps: Vec<f64> = (1..=cfg.ladder).map(|k| 0.5f64.powi(k as i32)).collect();
    let mut bundles = Vec::with_capacity(eps.len());
    for &e in &eps {
        let f = OuSmoothed::new(base.clone(), e, &nodes)?;
        bundles.push(integrate_forward(&f, cfg.interval, &seeds, &opts)?);
    }
    let generator = linear_generator(&cfg.field);
    let mut rows = Vec::new();
    for k in 0..eps.len() - 1 {
        let (a, b) = (&bundles[k], &bundles[k + 1]);
        let (mean_gap, mean_gap_bar, _) = mean_sup_gap(a, b)?;
        let analytic = match &generator {
            Some(g) => Some(analytic_mean_gap(
                &scaled_linear(g, (-eps[k]).exp())?,
                &scaled_linear(g, (-eps[k + 1]).exp())?,
                cfg.interval.s,
                &cps,
                &seeds,
            )),
            None => None,
        };
        for &gamma in &cfg.thresholds {
            let d = distance_in_measure(a, b, gamma)?;
            let used = seeds.len() - d.excluded;
            rows.push(MollificationRow {
                eps_coarse: eps[k],
                eps_fine: eps[k + 1],
                gamma,
                sup_fraction: d.sup_fraction,
                product_fraction: d.product_fraction,
                sigma: binomial_sigma(d.sup_fraction, used),
                mean_gap,
                mean_gap_bar,
                analytic_mean_gap: analytic,
                excluded: d.excluded,
            });
        }
    }
    let monotone = cfg
        .thresholds
        .iter()
        .map(|&g| {
            let seq: Vec<&MollificationRow> = rows.iter().filter(|r| r.gamma == g).collect();
            let ok = seq.windows(2).all(|w| {
                w[1].sup_fraction <= w[0].sup_fraction + 3.0 * w[0].sigma.hypot(w[1].sigma)
            });
            (g, ok)
        })
        .collect();
    let per_rung: Vec<&MollificationRow> = rows.iter().step_by(cfg.thresholds.len().max(1)).collect();
    let gap_monotone = per_rung
        .windows(2)
        .all(|w| w[1].mean_gap <= w[0].mean_gap + w[0].mean_gap_bar + w[1].mean_gap_bar);
    Ok(MollificationStudy {
        field: base.name(),
        interval: cfg.interval,
        particles: seeds.len(),
        rows,
        monotone,
        gap_monotone,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationSequence {
    /// `b_k = P_{1/k} b`.
    Mollified,
    /// `b_k = (1 + 1/k) b`.
    Scaled,
    /// `b_k = b + p / k` with a bounded trigonometric `p`.
    Perturbed,
}

impl PerturbationSequence {
    pub const ALL: [PerturbationSequence; 3] = [
        PerturbationSequence::Mollified,
        PerturbationSequence::Scaled,
        PerturbationSequence::Perturbed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbationSequence::Mollified => "mollified",
            PerturbationSequence::Scaled => "scaled",
            PerturbationSequence::Perturbed => "perturbed",
        }
    }

    pub fn spec(self, base: &FieldSpec, dim: usize, k: usize, mollifier_level: usize) -> FieldSpec {
        let kf = k as f64;
        match self {
            PerturbationSequence::Mollified => FieldSpec::Mollified {
                base: Box::new(base.clone()),
                eps: 1.0 / kf,
                scheme: ExpectationScheme::GaussHermite { level: mollifier_level },
            },
            PerturbationSequence::Scaled => FieldSpec::Scaled {
                base: Box::new(base.clone()),
                factor: 1.0 + 1.0 / kf,
            },
            PerturbationSequence::Perturbed => FieldSpec::Sum {
                base: Box::new(base.clone()),
                perturbation: Box::new(FieldSpec::Trig {
                    dim,
                    terms: 3,
                    seed: 5,
                    amplitude: 1.0,
                }),
                weight: 1.0 / kf,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityRow {
    pub sequence: PerturbationSequence,
    pub k: usize,
    pub mean_gap: f64,
    pub bar: f64,
    pub analytic: Option<f64>,
    pub excluded: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityStudy {
    pub field: String,
    pub interval: TimeInterval,
    pub particles: usize,
    pub rows: Vec<StabilityRow>,
    pub monotone: Vec<(PerturbationSequence, bool)>,
}

impl StabilityStudy {
    pub fn all_monotone(&self) -> bool {
        self.monotone.iter().all(|m| m.1)
    }

    pub fn section(&self) -> Section {
        let mut table = Table::new(&["sequence", "k", "mean_sup_gap", "bar", "analytic", "excluded"]);
        let mut records = Vec::new();
        for r in &self.rows {
            table.push(vec![
                r.sequence.name().into(),
                r.k.to_string(),
                num(r.mean_gap),
                num(r.bar),
                r.analytic.map(num).unwrap_or_default(),
                r.excluded.to_string(),
            ]);
            records.push(json!({ "field": self.field, "row": r }));
        }
        records.push(json!({
            "summary": true, "field": self.field, "particles": self.particles, "monotone": self.monotone,
        }));
        Section {
            name: "stability".into(),
            table,
            records,
            failure: None,
        }
    }
}

/// `E_μ sup_c |X(s, c, x) - X_k(s, c, x)|` for `k = 1..K` along each sequence.
pub fn run_stability_study(cfg: &ExperimentConfig) -> Result<StabilityStudy> {
    run_stability_sequences(cfg, &PerturbationSequence::ALL)
}

pub fn run_stability_sequences(cfg: &ExperimentConfig, sequences: &[PerturbationSequence]) -> Result<StabilityStudy> {
    let base = cfg.validate()?;
    let n = base.dim();
    let seeds = cfg.seeds(n)?;
    let cps = cfg.checkpoint_times();
    let opts = FlowOptions::new(cfg.tol).checkpoints(cps.clone());
    let reference = integrate_forward(base.as_ref(), cfg.interval, &seeds, &opts)?;
    let generator = linear_generator(&cfg.field);
    let mut rows = Vec::new();
    let mut monotone = Vec::new();
    for &seq in sequences {
        let mut seq_rows: Vec<StabilityRow> = Vec::new();
        for k in 1..=cfg.ladder {
            let fk = seq.spec(&cfg.field, n, k, cfg.mollifier_level).build()?;
            let bk = integrate_forward(fk.as_ref(), cfg.interval, &seeds, &opts)?;
            let (mean_gap, bar, excluded) = mean_sup_gap(&reference, &bk)?;
            let factor = match seq {
                PerturbationSequence::Mollified => Some((-1.0 / k as f64).exp()),
                PerturbationSequence::Scaled => Some(1.0 + 1.0 / k as f64),
                PerturbationSequence::Perturbed => None,
            };
            let analytic = match (&generator, factor) {
                (Some(g), Some(c)) => Some(analytic_mean_gap(
                    &scaled_linear(g, 1.0)?,
                    &scaled_linear(g, c)?,
                    cfg.interval.s,
                    &cps,
                    &seeds,
                )),
                _ => None,
            };
            seq_rows.push(StabilityRow {
                sequence: seq,
                k,
                mean_gap,
                bar,
                analytic,
                excluded,
            });
        }
        let ok = seq_rows
            .windows(2)
            .all(|w| w[1].mean_gap <= w[0].mean_gap + w[0].bar + w[1].bar);
        monotone.push((seq, ok));
        rows.extend(seq_rows);
    }
    Ok(StabilityStudy {
        field: base.name(),
        interval: cfg.interval,
        particles: seeds.len(),
        rows,
        monotone,
    })
}

/// Estimate with a one-standard-deviation error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledValue {
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LebesgueReport {
    pub field: String,
    pub interval: TimeInterval,
    pub set: BoxSet,
    pub bounding_box: BoxSet,
    pub samples: usize,
    /// Uniform samples on the bounding box pushed forward into the set.
    pub direct: SampledValue,
    /// `∫ (2π)^{n/2} 1_B(y) exp(|X̃(y)|²/2) K(y) dμ(y)` by sampling `μ`.
    pub weighted: SampledValue,
    /// The same integral by Gauss–Legendre on the box, with its error estimate.
    pub quadrature: (f64, f64),
    pub analytic: Option<f64>,
    pub excluded: usize,
    pub agree: bool,
    pub analytic_agree: Option<bool>,
}

impl LebesgueReport {
    pub fn section(&self) -> Section {
        let mut table = Table::new(&["estimator", "value", "sigma"]);
        table.push(vec!["direct".into(), num(self.direct.value), num(self.direct.sigma)]);
        table.push(vec!["weighted".into(), num(self.weighted.value), num(self.weighted.sigma)]);
        table.push(vec!["quadrature".into(), num(self.quadrature.0), num(self.quadrature.1)]);
        if let Some(a) = self.analytic {
            table.push(vec!["analytic".into(), num(a), "0".into()]);
        }
        Section {
            name: "lebesgue".into(),
            table,
            records: vec![serde_json::to_value(self).expect("report serializes")],
            failure: None,
        }
    }
}

/// Lebesgue volume of the preimage in closed form, for linear and constant fields.
fn analytic_preimage_volume(spec: &FieldSpec, interval: TimeInterval, set: &BoxSet) -> Option<f64> {
    let vol: f64 = set.lo.iter().zip(&set.hi).map(|(a, b)| b - a).product();
    if let FieldSpec::Constant { .. } = spec {
        return Some(vol);
    }
    let a = linear_generator(spec)?;
    let trace: f64 = (0..a.len()).map(|i| a[i][i]).sum();
    Some(vol * (-interval.length() * trace).exp())
}

/// Preimage volume `|X(s,t,·)^{-1}(B)|` for a box `B`, two ways.
pub fn run_lebesgue_quasi_invariance(cfg: &ExperimentConfig) -> Result<LebesgueReport> {
    let f = cfg.validate()?;
    let n = f.dim();
    if n > 3 {
        return Err(LabError::Usage("Lebesgue check supports n <= 3".into()));
    }
    let set = match &cfg.set {
        Some(s) => s.clone(),
        None => BoxSet::new(vec![-1.0; n], vec![1.0; n])?,
    };
    let iv = cfg.interval;
    let opts = FlowOptions::new(cfg.tol);

    // bounding box of the preimage from backward images of a grid on the box
    let grid_1d: usize = 9;
    let grid: Vec<Vec<f64>> = (0..grid_1d.pow(n as u32))
        .map(|mut idx| {
            (0..n)
                .map(|i| {
                    let j = idx % grid_1d;
                    idx /= grid_1d;
                    set.lo[i] + (set.hi[i] - set.lo[i]) * j as f64 / (grid_1d - 1) as f64
                })
                .collect()
        })
        .collect();
    let back = integrate_backward(f.as_ref(), iv, &grid, &opts)?;
    if back.particles.iter().any(|p| !p.is_ok()) {
        return Err(LabError::Evaluation("backward flow of the box failed".into()));
    }
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for p in &back.particles {
        for (i, v) in p.terminal().iter().enumerate() {
            lo[i] = lo[i].min(*v);
            hi[i] = hi[i].max(*v);
        }
    }
    for i in 0..n {
        let pad = 0.1 * (hi[i] - lo[i]) + 0.05;
        lo[i] -= pad;
        hi[i] += pad;
    }
    let bounding_box = BoxSet::new(lo, hi)?;
    let box_vol: f64 = bounding_box.lo.iter().zip(&bounding_box.hi).map(|(a, b)| b - a).product();

    let nsamp = cfg.samples;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let uniform: Vec<Vec<f64>> = (0..nsamp)
        .map(|_| {
            (0..n)
                .map(|i| rng.random_range(bounding_box.lo[i]..bounding_box.hi[i]))
                .collect()
        })
        .collect();
    let fwd = integrate_forward(f.as_ref(), iv, &uniform, &opts)?;
    let hits = fwd
        .particles
        .iter()
        .filter(|p| p.is_ok() && set.contains(p.terminal()))
        .count();
    let mut excluded = fwd.particles.iter().filter(|p| !p.is_ok()).count();
    let p = hits as f64 / nsamp as f64;
    let direct = SampledValue {
        value: box_vol * p,
        sigma: box_vol * binomial_sigma(p, nsamp),
    };

    let ys = GaussianMeasure::new(n)?.sample(nsamp, cfg.seed ^ 0x5eed);
    let inside: Vec<Vec<f64>> = ys.iter().filter(|y| set.contains(y)).map(<[f64]>::to_vec).collect();
    let bw = integrate_backward(f.as_ref(), iv, &inside, &opts)?;
    let log_norm = 0.5 * n as f64 * (2.0 * PI).ln();
    let mut vals: Vec<f64> = bw
        .particles
        .iter()
        .filter(|q| q.is_ok())
        .map(|q| {
            let x = q.terminal();
            (log_norm + 0.5 * x.iter().map(|v| v * v).sum::<f64>() - q.div_accum()).exp()
        })
        .collect();
    excluded += inside.len() - vals.len();
    vals.resize(nsamp, 0.0);
    let mean = vals.iter().sum::<f64>() / nsamp as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nsamp as f64 - 1.0).max(1.0);
    let weighted = SampledValue {
        value: mean,
        sigma: (var / nsamp as f64).sqrt(),
    };

    let quad = |q: usize| -> Result<f64> {
        let rules: Vec<(Vec<f64>, Vec<f64>)> = (0..n).map(|i| gauss_legendre_on(q, set.lo[i], set.hi[i])).collect();
        let total = q.pow(n as u32);
        let mut pts = Vec::with_capacity(total);
        let mut ws = Vec::with_capacity(total);
        for mut idx in 0..total {
            let mut x = Vec::with_capacity(n);
            let mut w = 1.0;
            for (xs, wq) in &rules {
                let j = idx % q;
                idx /= q;
                x.push(xs[j]);
                w *= wq[j];
            }
            pts.push(x);
            ws.push(w);
        }
        let b = integrate_backward(f.as_ref(), iv, &pts, &opts)?;
        if b.particles.iter().any(|p| !p.is_ok()) {
            return Err(LabError::Evaluation("backward flow failed at a quadrature node".into()));
        }
        Ok(b.particles
            .iter()
            .zip(&pts)
            .zip(&ws)
            .map(|((p, y), w)| {
                let xt = p.terminal();
                let e = 0.5 * xt.iter().map(|v| v * v).sum::<f64>() - p.div_accum() - 0.5 * y.iter().map(|v| v * v).sum::<f64>();
                w * e.exp()
            })
            .sum())
    };
    let qf = quad(16)?;
    let qc = quad(8)?;
    let quadrature = (qf, (qf - qc).abs() + 10.0 * cfg.tol * qf.abs());

    let analytic = analytic_preimage_volume(&cfg.field, iv, &set);
    let agree = (direct.value - weighted.value).abs() <= 3.0 * direct.sigma.hypot(weighted.sigma);
    let analytic_agree = analytic.map(|a| {
        (direct.value - a).abs() <= 3.0 * direct.sigma && (weighted.value - a).abs() <= 3.0 * weighted.sigma
    });
    Ok(LebesgueReport {
        field: f.name(),
        interval: iv,
        set,
        bounding_box,
        samples: nsamp,
        direct,
        weighted,
        quadrature,
        analytic,
        excluded,
        agree,
        analytic_agree,
    })
}

/// Every experiment on the configured field, in one long-format table
/// (`section,row,column,value`) and one record stream tagged by section.
fn run_report(cfg: &ExperimentConfig) -> Result<Section> {
    cfg.validate()?;
    let mut table = Table::new(&["section", "row", "column", "value"]);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for exp in Experiment::ALL {
        if exp == Experiment::Report {
            continue;
        }
        let sub = ExperimentConfig {
            experiment: exp,
            ..cfg.clone()
        };
        let sec = match run(&sub) {
            Ok(s) => s,
            Err(e) => {
                records.push(json!({ "section": exp.name(), "error": e.to_string() }));
                failures.push(format!("{}: {e}", exp.name()));
                continue;
            }
        };
        for (i, row) in sec.table.rows.iter().enumerate() {
            for (col, v) in sec.table.header.iter().zip(row) {
                table.push(vec![sec.name.clone(), i.to_string(), col.clone(), v.clone()]);
            }
        }
        for r in sec.records {
            records.push(json!({ "section": sec.name, "record": r }));
        }
        if let Some(f) = sec.failure {
            failures.push(format!("{}: {f}", sec.name));
        }
    }
    Ok(Section {
        name: "report".into(),
        table,
        records,
        failure: (!failures.is_empty()).then(|| failures.join("; ")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(field: FieldSpec) -> ExperimentConfig {
        ExperimentConfig {
            field,
            particles: 400,
            samples: 20_000,
            ladder: 4,
            ..Default::default()
        }
    }

    #[test]
    fn config_round_trip_and_errors() {
        let c = cfg(FieldSpec::Blowup { kappa: 1.0 });
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json(), c.to_json());
        let minimal = ExperimentConfig::from_json(r#"{"field": {"name": "zero", "dim": 2}}"#).unwrap();
        assert_eq!(minimal.interval, TimeInterval { s: 0.0, t: 0.5 });
        assert!(matches!(ExperimentConfig::from_json(r#"{"bogus": 1}"#), Err(LabError::Config(_))));
        let mut bad = c.clone();
        bad.tol = 0.0;
        assert!(matches!(bad.validate(), Err(LabError::Config(_))));
    }

    #[test]
    fn mollification_zero_and_linear() {
        let z = run_mollification_study(&cfg(FieldSpec::Zero { dim: 1 })).unwrap();
        assert!(z.rows.iter().all(|r| r.sup_fraction == 0.0 && r.mean_gap == 0.0));
        let c = cfg(FieldSpec::LinearContraction { dim: 2 });
        let s = run_mollification_study(&c).unwrap();
        for r in &s.rows {
            let a = r.analytic_mean_gap.unwrap();
            assert!((r.mean_gap - a).abs() < 10.0 * c.tol * 10.0, "{r:?}");
        }
        assert!(s.all_monotone());
    }

    #[test]
    fn stability_linear_analytic() {
        let c = cfg(FieldSpec::LinearContraction { dim: 1 });
        let s = run_stability_sequences(&c, &[PerturbationSequence::Scaled, PerturbationSequence::Mollified]).unwrap();
        for r in &s.rows {
            assert!((r.mean_gap - r.analytic.unwrap()).abs() < 10.0 * c.tol * 10.0, "{r:?}");
        }
        assert!(s.all_monotone());
        let z = run_stability_sequences(&cfg(FieldSpec::Zero { dim: 1 }), &[PerturbationSequence::Scaled]).unwrap();
        assert!(z.rows.iter().all(|r| r.mean_gap == 0.0));
    }

    #[test]
    fn lebesgue_linear_and_rotation() {
        let r = run_lebesgue_quasi_invariance(&cfg(FieldSpec::LinearContraction { dim: 1 })).unwrap();
        let want = 2.0 * 0.5f64.exp();
        assert!((r.analytic.unwrap() - want).abs() < 1e-12);
        assert!(r.agree && r.analytic_agree == Some(true), "{r:?}");
        assert!((r.quadrature.0 - want).abs() < 1e-6, "{r:?}");
        let rot = run_lebesgue_quasi_invariance(&cfg(FieldSpec::Rotation { omega: 1.0 })).unwrap();
        assert!(rot.agree && rot.analytic_agree == Some(true), "{rot:?}");
        assert!((rot.quadrature.0 - 4.0).abs() < 1e-6);
        let z = run_lebesgue_quasi_invariance(&cfg(FieldSpec::Zero { dim: 2 })).unwrap();
        assert!((z.quadrature.0 - 4.0).abs() < 1e-10 && z.analytic_agree == Some(true));
    }

    #[test]
    fn far_sets_have_target_mass() {
        for (n, target) in [(1, -69.0), (2, -1e9)] {
            let s = far_set(n, target).unwrap();
            assert!((s.log_mu() - target).abs() < 1e-9 * target.abs(), "{} vs {target}", s.log_mu());
        }
    }

    #[test]
    fn outputs_carry_config() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig {
            experiment: Experiment::Norms,
            field: FieldSpec::Zero { dim: 1 },
            ..Default::default()
        };
        let sec = run(&c).unwrap();
        assert!(sec.records.iter().all(|r| r["value"] == 0.0));
        let (csv, jl) = write_outputs(dir.path(), &c, &sec).unwrap();
        let csv = fs::read_to_string(csv).unwrap();
        assert!(csv.starts_with(&format!("# config={}\n", c.to_json())));
        let first: Value = serde_json::from_str(fs::read_to_string(jl).unwrap().lines().next().unwrap()).unwrap();
        assert_eq!(ExperimentConfig::deserialize(&first["config"]).unwrap(), c);
    }
}
