//! Forward and backward flow maps by adaptive Dormand–Prince 5(4)
//! integration, with the scalar accumulator `∫ div_μ b` carried as an extra
//! state component.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::field::VectorField;
use crate::par::{self, Execution};
use crate::quadrature::gauss_legendre;
use crate::{LabError, Result};

/// Particles with `|X| > BLOWUP_RADIUS` are frozen and marked blown up.
pub const BLOWUP_RADIUS: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub s: f64,
    pub t: f64,
}

impl TimeInterval {
    pub fn new(s: f64, t: f64) -> Result<Self> {
        if !(s.is_finite() && t.is_finite() && 0.0 <= s && s <= t) {
            return Err(LabError::Domain(format!("need 0 <= s <= t, got [{s}, {t}]")));
        }
        Ok(Self { s, t })
    }

    pub fn length(&self) -> f64 {
        self.t - self.s
    }

    pub(crate) fn check_within(&self, f: &(impl VectorField + ?Sized)) -> Result<()> {
        if self.t > f.horizon() {
            return Err(LabError::Domain(format!(
                "interval end {} beyond horizon {} of {}",
                self.t,
                f.horizon(),
                f.name()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// `X(s, ·, x)` started at time `s`.
    Forward,
    /// `X̃(·, t, x)` started at time `t`, running down to `s`.
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticleStatus {
    Ok,
    BlownUp,
    ToleranceFailure,
}

impl ParticleStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParticleStatus::Ok => "ok",
            ParticleStatus::BlownUp => "blown_up",
            ParticleStatus::ToleranceFailure => "tolerance_failure",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
}

impl IntegratorStats {
    fn add(&mut self, o: &IntegratorStats) {
        self.accepted += o.accepted;
        self.rejected += o.rejected;
        self.rhs_evals += o.rhs_evals;
    }
}

/// Accepted step: integration-time origin, length and state at its start.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub u: f64,
    pub h: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub x0: Vec<f64>,
    /// State at each checkpoint, in the bundle's checkpoint order.
    pub path: Vec<Vec<f64>>,
    /// Accumulated `∫ div_μ b dr` over the part of the path already run.
    pub div_path: Vec<f64>,
    pub status: ParticleStatus,
    pub stats: IntegratorStats,
    pub steps: Option<Vec<StepRecord>>,
}

impl Particle {
    pub fn is_ok(&self) -> bool {
        self.status == ParticleStatus::Ok
    }

    pub fn terminal(&self) -> &[f64] {
        self.path.last().expect("at least one checkpoint")
    }

    pub fn div_accum(&self) -> f64 {
        *self.div_path.last().expect("at least one checkpoint")
    }
}

#[derive(Debug, Clone)]
pub struct FlowOptions {
    pub tol: f64,
    /// Times in `[s, t]` at which to record the state. The terminal time is
    /// always appended.
    pub checkpoints: Vec<f64>,
    pub max_steps: usize,
    pub record_steps: bool,
    pub exec: Execution,
}

impl FlowOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            checkpoints: Vec::new(),
            max_steps: 200_000,
            record_steps: false,
            exec: Execution::default(),
        }
    }

    pub fn checkpoints(mut self, times: Vec<f64>) -> Self {
        self.checkpoints = times;
        self
    }

    pub fn record_steps(mut self, on: bool) -> Self {
        self.record_steps = on;
        self
    }

    pub fn exec(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryBundle {
    pub field: String,
    pub direction: Direction,
    pub interval: TimeInterval,
    pub tol: f64,
    /// Checkpoint times in integration order (increasing forward, decreasing
    /// backward); the last entry is the terminal time.
    pub checkpoints: Vec<f64>,
    pub particles: Vec<Particle>,
    pub stats: IntegratorStats,
}

impl TrajectoryBundle {
    pub fn count(&self, status: ParticleStatus) -> usize {
        self.particles.iter().filter(|p| p.status == status).count()
    }

    pub fn blown_up_fraction(&self) -> f64 {
        if self.particles.is_empty() {
            return 0.0;
        }
        self.count(ParticleStatus::BlownUp) as f64 / self.particles.len() as f64
    }

    pub fn terminals(&self) -> Vec<Vec<f64>> {
        self.particles.iter().map(|p| p.terminal().to_vec()).collect()
    }

    /// Largest `|X(c) - x₀ ∓ ∫ b| / max(1, |X(c)|)` over ok particles and
    /// checkpoints, re-integrating `b` along each stored step with 3-point
    /// Gauss–Legendre at states from an independent RK4 integration.
    pub fn ode_residual(&self, f: &(impl VectorField + ?Sized)) -> Result<f64> {
        let sign = match self.direction {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        };
        let origin = self.origin();
        let (gx, gw) = gauss_legendre(3);
        let n = f.dim();
        let mut worst: f64 = 0.0;
        for p in self.particles.iter().filter(|p| p.is_ok()) {
            let steps = p
                .steps
                .as_ref()
                .ok_or_else(|| LabError::Usage("bundle was integrated without step records".into()))?;
            let mut integral = vec![0.0; n];
            let mut k = 0;
            for (ci, &c) in self.checkpoints.iter().enumerate() {
                let uc = (c - origin).abs();
                while k < steps.len() && steps[k].u < uc - 1e-14 * (1.0 + uc) {
                    let st = &steps[k];
                    let mut b = vec![0.0; n];
                    for (xi, wi) in gx.iter().zip(&gw) {
                        let du = 0.5 * st.h * (xi + 1.0);
                        let y = rk4_state(f, self.direction, origin, st.u, &st.x, du);
                        f.eval(self.time_at(origin, st.u + du), &y, &mut b);
                        for (acc, bi) in integral.iter_mut().zip(&b) {
                            *acc += 0.5 * st.h * wi * sign * bi;
                        }
                    }
                    k += 1;
                }
                let xc = &p.path[ci];
                let err: f64 = xc
                    .iter()
                    .zip(&p.x0)
                    .zip(&integral)
                    .map(|((x, x0), i)| (x - x0 - i).powi(2))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(err / crate::field::norm(xc).max(1.0));
            }
        }
        Ok(worst)
    }

    fn origin(&self) -> f64 {
        match self.direction {
            Direction::Forward => self.interval.s,
            Direction::Backward => self.interval.t,
        }
    }

    fn time_at(&self, origin: f64, u: f64) -> f64 {
        match self.direction {
            Direction::Forward => origin + u,
            Direction::Backward => origin - u,
        }
    }

    /// Columnar text: optional `# config=` line, a `#` metadata line, a
    /// header row and one row per particle and checkpoint.
    pub fn write_csv(&self, w: &mut impl Write, config_json: Option<&str>) -> Result<()> {
        let mut s = String::new();
        if let Some(c) = config_json {
            writeln!(s, "# config={c}").unwrap();
        }
        writeln!(
            s,
            "# field={} direction={} s={} t={} tol={}",
            self.field,
            match self.direction {
                Direction::Forward => "forward",
                Direction::Backward => "backward",
            },
            self.interval.s,
            self.interval.t,
            self.tol
        )
        .unwrap();
        let n = self.particles.first().map(|p| p.x0.len()).unwrap_or(0);
        s.push_str("particle,time");
        for i in 0..n {
            write!(s, ",x{i}").unwrap();
        }
        s.push_str(",div_accum,status\n");
        for (id, p) in self.particles.iter().enumerate() {
            for (ci, c) in self.checkpoints.iter().enumerate() {
                write!(s, "{id},{c}").unwrap();
                for v in &p.path[ci] {
                    write!(s, ",{v}").unwrap();
                }
                writeln!(s, ",{},{}", p.div_path[ci], p.status.as_str()).unwrap();
            }
        }
        w.write_all(s.as_bytes())?;
        Ok(())
    }
}

/// Classic RK4 from `(u0, x0)` over `du`, 8 substeps; position only.
fn rk4_state(
    f: &(impl VectorField + ?Sized),
    dir: Direction,
    origin: f64,
    u0: f64,
    x0: &[f64],
    du: f64,
) -> Vec<f64> {
    let n = x0.len();
    let sign = if dir == Direction::Forward { 1.0 } else { -1.0 };
    let time = |u: f64| origin + sign * u;
    let rhs = |u: f64, y: &[f64], out: &mut [f64]| {
        f.eval(time(u), y, out);
        out.iter_mut().for_each(|v| *v *= sign);
    };
    let m = 8;
    let h = du / m as f64;
    let mut y = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut u = u0;
    for _ in 0..m {
        rhs(u, &y, &mut k1);
        axpy(&y, 0.5 * h, &k1, &mut tmp);
        rhs(u + 0.5 * h, &tmp, &mut k2);
        axpy(&y, 0.5 * h, &k2, &mut tmp);
        rhs(u + 0.5 * h, &tmp, &mut k3);
        axpy(&y, h, &k3, &mut tmp);
        rhs(u + h, &tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        u += h;
    }
    y
}

fn axpy(y: &[f64], a: f64, k: &[f64], out: &mut [f64]) {
    for ((o, y), k) in out.iter_mut().zip(y).zip(k) {
        *o = y + a * k;
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Augmented right-hand side in integration time `u`.
struct Rhs<'a, F: ?Sized> {
    f: &'a F,
    dir: Direction,
    origin: f64,
    n: usize,
}

impl<F: VectorField + ?Sized> Rhs<'_, F> {
    fn time(&self, u: f64) -> f64 {
        match self.dir {
            Direction::Forward => self.origin + u,
            Direction::Backward => self.origin - u,
        }
    }

    /// `dy/du` for `y = (x, A)`: `±b` and `div_μ b`.
    fn eval(&self, u: f64, y: &[f64], out: &mut [f64]) {
        let r = self.time(u);
        let x = &y[..self.n];
        self.f.eval(r, x, &mut out[..self.n]);
        let xb: f64 = x.iter().zip(&out[..self.n]).map(|(a, b)| a * b).sum();
        out[self.n] = self.f.div(r, x) - xb;
        if self.dir == Direction::Backward {
            out[..self.n].iter_mut().for_each(|v| *v = -*v);
        }
    }

    fn lipschitz(&self, u: f64, y: &[f64], jac: &mut [f64]) -> f64 {
        let r = self.time(u);
        let x = &y[..self.n];
        if !self.f.jacobian(r, x, jac) {
            crate::field::fd_jacobian(self.f, r, x, jac);
        }
        // infinity norm of the Jacobian
        (0..self.n)
            .map(|i| jac[i * self.n..(i + 1) * self.n].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Integrate one particle from `x` along `direction` over `interval`,
/// recording the state at `checkpoints` (integration order, terminal last).
pub fn integrate_particle(
    f: &(impl VectorField + ?Sized),
    direction: Direction,
    interval: TimeInterval,
    checkpoints: &[f64],
    x: &[f64],
    opts: &FlowOptions,
) -> Particle {
    let n = f.dim();
    let origin = match direction {
        Direction::Forward => interval.s,
        Direction::Backward => interval.t,
    };
    let targets: Vec<f64> = checkpoints.iter().map(|c| (c - origin).abs()).collect();
    let rhs = Rhs { f, dir: direction, origin, n };
    let tol = opts.tol;

    let mut y: Vec<f64> = x.iter().copied().chain([0.0]).collect();
    let mut path = Vec::with_capacity(targets.len());
    let mut div_path = Vec::with_capacity(targets.len());
    let mut stats = IntegratorStats::default();
    let mut steps = opts.record_steps.then(Vec::new);
    let mut status = ParticleStatus::Ok;

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n + 1]; 7];
    let mut stage = vec![0.0; n + 1];
    let mut y5 = vec![0.0; n + 1];
    let mut jac = vec![0.0; n * n];
    let mut u = 0.0;
    let mut h = 0.0;
    let mut err_prev: f64 = 1e-4;
    let mut fresh_k1 = false;

    if x.iter().any(|v| !v.is_finite()) {
        status = ParticleStatus::ToleranceFailure;
    }

    for &target in &targets {
        while status == ParticleStatus::Ok && u < target {
            if stats.accepted + stats.rejected >= opts.max_steps as u64 {
                status = ParticleStatus::ToleranceFailure;
                break;
            }
            if !fresh_k1 {
                rhs.eval(u, &y, &mut k[0]);
                stats.rhs_evals += 1;
                fresh_k1 = true;
            }
            let cap = 0.1 / (1.0 + rhs.lipschitz(u, &y, &mut jac));
            if h == 0.0 {
                let scale = 1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max);
                let speed = k[0].iter().map(|v| v.abs()).fold(0.0, f64::max);
                h = (0.5 * tol.powf(0.2) * scale / (speed + 1e-12)).min(0.01).max(1e-8);
            }
            h = h.min(cap);
            let last = h >= target - u;
            if last {
                h = target - u;
            }
            // stages 2..7
            for s in 1..7 {
                for i in 0..=n {
                    let mut acc = y[i];
                    for j in 0..s {
                        acc += h * A[s][j] * k[j][i];
                    }
                    stage[i] = acc;
                }
                rhs.eval(u + C[s] * h, &stage, &mut k[s]);
                stats.rhs_evals += 1;
                if s == 6 {
                    y5.copy_from_slice(&stage);
                }
            }
            let mut err_sq = 0.0;
            let mut finite = true;
            for i in 0..=n {
                let e: f64 = (0..7).map(|j| h * (B[j] - B4[j]) * k[j][i]).sum();
                let sc = tol + tol * y[i].abs().max(y5[i].abs());
                err_sq += (e / sc).powi(2);
                finite &= y5[i].is_finite() && e.is_finite();
            }
            let err = (err_sq / (n + 1) as f64).sqrt();
            if !finite {
                h *= 0.25;
                stats.rejected += 1;
                if h < 1e-14 * (1.0 + u) {
                    status = ParticleStatus::ToleranceFailure;
                }
                continue;
            }
            if err <= 1.0 {
                if let Some(st) = steps.as_mut() {
                    st.push(StepRecord {
                        u,
                        h,
                        x: y[..n].to_vec(),
                    });
                }
                y.copy_from_slice(&y5);
                u = if last { target } else { u + h };
                k.swap(0, 6);
                stats.accepted += 1;
                let fac = 0.9 * err.max(1e-10).powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
                err_prev = err.max(1e-4);
                h *= fac.clamp(0.2, 5.0);
                if crate::field::norm(&y[..n]) > BLOWUP_RADIUS {
                    status = ParticleStatus::BlownUp;
                }
            } else {
                stats.rejected += 1;
                h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                if h < 1e-14 * (1.0 + u) {
                    status = ParticleStatus::ToleranceFailure;
                }
            }
        }
        path.push(y[..n].to_vec());
        div_path.push(y[n]);
    }
    Particle {
        x0: x.to_vec(),
        path,
        div_path,
        status,
        stats,
        steps,
    }
}

fn ordered_checkpoints(direction: Direction, interval: TimeInterval, requested: &[f64]) -> Result<Vec<f64>> {
    let mut cps: Vec<f64> = requested.to_vec();
    if cps.iter().any(|c| !(c.is_finite() && *c >= interval.s && *c <= interval.t)) {
        return Err(LabError::Domain(format!(
            "checkpoints must lie in [{}, {}]",
            interval.s, interval.t
        )));
    }
    let end = match direction {
        Direction::Forward => interval.t,
        Direction::Backward => interval.s,
    };
    cps.push(end);
    cps.sort_by(|a, b| a.total_cmp(b));
    cps.dedup();
    if direction == Direction::Backward {
        cps.reverse();
    }
    Ok(cps)
}

fn integrate(
    f: &(impl VectorField + ?Sized),
    direction: Direction,
    interval: TimeInterval,
    seeds: &[Vec<f64>],
    opts: &FlowOptions,
) -> Result<TrajectoryBundle> {
    if !(opts.tol > 0.0) {
        return Err(LabError::Usage("integrator tolerance must be positive".into()));
    }
    interval.check_within(f)?;
    if let Some(bad) = seeds.iter().find(|x| x.len() != f.dim()) {
        return Err(LabError::Domain(format!(
            "seed of dimension {} for a field of dimension {}",
            bad.len(),
            f.dim()
        )));
    }
    let checkpoints = ordered_checkpoints(direction, interval, &opts.checkpoints)?;
    let particles = par::map(opts.exec, seeds, |x| {
        integrate_particle(f, direction, interval, &checkpoints, x, opts)
    });
    let mut stats = IntegratorStats::default();
    for p in &particles {
        stats.add(&p.stats);
    }
    Ok(TrajectoryBundle {
        field: f.name(),
        direction,
        interval,
        tol: opts.tol,
        checkpoints,
        particles,
        stats,
    })
}

/// `X(s, c, x)` for each seed `x` and checkpoint `c`, plus
/// `∫_s^c div_μ b(r, X(s, r, x)) dr`.
pub fn integrate_forward(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    seeds: &[Vec<f64>],
    opts: &FlowOptions,
) -> Result<TrajectoryBundle> {
    integrate(f, Direction::Forward, interval, seeds, opts)
}

/// `X̃(c, t, x)` for each seed `x` (a point at time `t`) and checkpoint `c`,
/// plus `∫_c^t div_μ b(r, X̃(r, t, x)) dr`.
pub fn integrate_backward(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    seeds: &[Vec<f64>],
    opts: &FlowOptions,
) -> Result<TrajectoryBundle> {
    integrate(f, Direction::Backward, interval, seeds, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub max_error: f64,
    pub excluded: usize,
    pub seeds: usize,
}

fn max_gap(a: &TrajectoryBundle, b: &TrajectoryBundle, target: impl Fn(usize) -> Vec<f64>) -> IdentityReport {
    let mut max_error: f64 = 0.0;
    let mut excluded = 0;
    for (i, (pa, pb)) in a.particles.iter().zip(&b.particles).enumerate() {
        if !(pa.is_ok() && pb.is_ok()) {
            excluded += 1;
            continue;
        }
        let want = target(i);
        let d: f64 = pb
            .terminal()
            .iter()
            .zip(&want)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        max_error = max_error.max(d);
    }
    IdentityReport {
        max_error,
        excluded,
        seeds: a.particles.len(),
    }
}

fn merge(a: IdentityReport, b: IdentityReport) -> IdentityReport {
    IdentityReport {
        max_error: a.max_error.max(b.max_error),
        excluded: a.excluded.max(b.excluded),
        seeds: a.seeds,
    }
}

/// `max |X(s,t,X̃(s,t,x)) - x|` and `max |X̃(s,t,X(s,t,x)) - x|`.
pub fn check_inverse_identity(
    f: &(impl VectorField + ?Sized),
    interval: TimeInterval,
    seeds: &[Vec<f64>],
    tol: f64,
) -> Result<IdentityReport> {
    let opts = FlowOptions::new(tol);
    let fwd = integrate_forward(f, interval, seeds, &opts)?;
    let back_of_fwd = integrate_backward(f, interval, &fwd.terminals(), &opts)?;
    let bwd = integrate_backward(f, interval, seeds, &opts)?;
    let fwd_of_bwd = integrate_forward(f, interval, &bwd.terminals(), &opts)?;
    Ok(merge(
        max_gap(&fwd, &back_of_fwd, |i| seeds[i].clone()),
        max_gap(&bwd, &fwd_of_bwd, |i| seeds[i].clone()),
    ))
}

/// `max |X(s,t,X(r,s,x)) - X(r,t,x)|` and the backward analogue
/// `max |X̃(r,s,X̃(s,t,x)) - X̃(r,t,x)|`.
pub fn check_semigroup(
    f: &(impl VectorField + ?Sized),
    r: f64,
    s: f64,
    t: f64,
    seeds: &[Vec<f64>],
    tol: f64,
) -> Result<IdentityReport> {
    let (rs, st, rt) = (TimeInterval::new(r, s)?, TimeInterval::new(s, t)?, TimeInterval::new(r, t)?);
    let opts = FlowOptions::new(tol);
    let a = integrate_forward(f, rs, seeds, &opts)?;
    let ab = integrate_forward(f, st, &a.terminals(), &opts)?;
    let direct = integrate_forward(f, rt, seeds, &opts)?;
    let fwd = max_gap(&a, &ab, |i| direct.particles[i].terminal().to_vec());
    let c = integrate_backward(f, st, seeds, &opts)?;
    let cd = integrate_backward(f, rs, &c.terminals(), &opts)?;
    let direct_b = integrate_backward(f, rt, seeds, &opts)?;
    let bwd = max_gap(&c, &cd, |i| direct_b.particles[i].terminal().to_vec());
    let excluded_direct = direct
        .particles
        .iter()
        .zip(&direct_b.particles)
        .filter(|(a, b)| !(a.is_ok() && b.is_ok()))
        .count();
    let mut m = merge(fwd, bwd);
    m.excluded = m.excluded.max(excluded_direct);
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureDistance {
    /// Fraction of seeds with `sup_c |X_A - X_B| > γ`.
    pub sup_fraction: f64,
    /// Fraction of `(checkpoint, seed)` pairs with `|X_A - X_B| > γ`.
    pub product_fraction: f64,
    pub excluded: usize,
}

/// Convergence-in-measure distance between bundles over shared seeds.
pub fn distance_in_measure(a: &TrajectoryBundle, b: &TrajectoryBundle, gamma: f64) -> Result<MeasureDistance> {
    if a.particles.len() != b.particles.len()
        || a.checkpoints != b.checkpoints
        || a.particles.iter().zip(&b.particles).any(|(p, q)| p.x0 != q.x0)
    {
        return Err(LabError::Usage("bundles must share seeds and checkpoint times".into()));
    }
    if !(gamma > 0.0) {
        return Err(LabError::Usage("distance threshold must be positive".into()));
    }
    let mut over_sup = 0usize;
    let mut over_pairs = 0usize;
    let mut used = 0usize;
    for (p, q) in a.particles.iter().zip(&b.particles) {
        if !(p.is_ok() && q.is_ok()) {
            continue;
        }
        used += 1;
        let mut any = false;
        for (x, y) in p.path.iter().zip(&q.path) {
            let d = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if d > gamma {
                over_pairs += 1;
                any = true;
            }
        }
        over_sup += usize::from(any);
    }
    let excluded = a.particles.len() - used;
    let (sf, pf) = if used == 0 {
        (0.0, 0.0)
    } else {
        (
            over_sup as f64 / used as f64,
            over_pairs as f64 / (used * a.checkpoints.len()) as f64,
        )
    };
    Ok(MeasureDistance {
        sup_fraction: sf,
        product_fraction: pf,
        excluded,
    })
}

/// Mean over ok seeds of `sup_c |X_A - X_B|`, with the 3σ/√N error bar.
pub fn mean_sup_gap(a: &TrajectoryBundle, b: &TrajectoryBundle) -> Result<(f64, f64, usize)> {
    if a.particles.len() != b.particles.len() || a.checkpoints != b.checkpoints {
        return Err(LabError::Usage("bundles must share seeds and checkpoint times".into()));
    }
    let gaps: Vec<f64> = a
        .particles
        .iter()
        .zip(&b.particles)
        .filter(|(p, q)| p.is_ok() && q.is_ok())
        .map(|(p, q)| {
            p.path
                .iter()
                .zip(&q.path)
                .map(|(x, y)| x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .fold(0.0, f64::max)
        })
        .collect();
    let excluded = a.particles.len() - gaps.len();
    if gaps.is_empty() {
        return Ok((0.0, 0.0, excluded));
    }
    let m = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / m;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    Ok((mean, 3.0 * (var / m).sqrt(), excluded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Blowup, Linear, Trig, Zero};
    use crate::gaussian::GaussianMeasure;
    use std::f64::consts::PI;

    fn seeds(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        GaussianMeasure::new(dim).unwrap().sample(n, seed).rows()
    }

    #[test]
    fn zero_field_is_exact() {
        let iv = TimeInterval::new(0.0, 1.0).unwrap();
        let s = seeds(2, 5, 1);
        for b in [
            integrate_forward(&Zero::new(2), iv, &s, &FlowOptions::new(1e-9)).unwrap(),
            integrate_backward(&Zero::new(2), iv, &s, &FlowOptions::new(1e-9)).unwrap(),
        ] {
            for (p, x) in b.particles.iter().zip(&s) {
                assert_eq!(p.terminal(), x.as_slice());
                assert_eq!(p.div_accum(), 0.0);
            }
        }
    }

    #[test]
    fn contraction_forward_and_backward() {
        let f = Linear::contraction(1);
        let iv = TimeInterval::new(0.0, 0.5).unwrap();
        let tol = 1e-9;
        let fw = integrate_forward(&f, iv, &[vec![1.0]], &FlowOptions::new(tol)).unwrap();
        assert!((fw.particles[0].terminal()[0] - (-0.5f64).exp()).abs() < 10.0 * tol);
        let bw = integrate_backward(&f, iv, &[vec![1.0]], &FlowOptions::new(tol)).unwrap();
        assert!((bw.particles[0].terminal()[0] - 0.5f64.exp()).abs() < 10.0 * tol);
        // backward accumulator: ∫_0^τ (e^{2(τ-r)} x² - 1) dr at x = 1
        let oracle = ((2.0 * 0.5f64).exp() - 1.0) / 2.0 - 0.5;
        assert!((bw.particles[0].div_accum() - oracle).abs() < 10.0 * tol);
    }

    #[test]
    fn rotation_quarter_turn() {
        let f = Linear::rotation(1.0);
        let iv = TimeInterval::new(0.0, PI / 2.0).unwrap();
        let b = integrate_forward(&f, iv, &[vec![1.0, 0.0]], &FlowOptions::new(1e-9)).unwrap();
        let p = &b.particles[0];
        assert!(p.terminal()[0].abs() < 1e-8 && (p.terminal()[1] - 1.0).abs() < 1e-8);
        assert_eq!(p.div_accum(), 0.0);
    }

    #[test]
    fn inverse_and_semigroup() {
        let s = seeds(1, 100, 2);
        let iv = TimeInterval::new(0.0, 0.5).unwrap();
        let f = Linear::contraction(1);
        assert!(check_inverse_identity(&f, iv, &s, 1e-9).unwrap().max_error < 1e-6);
        let r = check_semigroup(&f, 0.0, 0.3, 0.7, &s, 1e-9).unwrap();
        assert!(r.max_error < 1e-6, "{r:?}");
        let rot = Linear::rotation(1.0);
        let s2 = seeds(2, 100, 3);
        let r = check_inverse_identity(&rot, TimeInterval::new(0.0, 1.0).unwrap(), &s2, 1e-9).unwrap();
        assert!(r.max_error < 1e-6, "{r:?}");
        let trig = Trig::new(2, 4, 8, 1.0);
        let r = check_semigroup(&trig, 0.0, 0.4, 1.0, &s2, 1e-7).unwrap();
        assert!(r.max_error < 100.0 * 1e-7, "{r:?}");
    }

    #[test]
    fn checkpoints_and_residual() {
        let f = Trig::new(2, 4, 8, 1.0);
        let iv = TimeInterval::new(0.0, 1.0).unwrap();
        let cps: Vec<f64> = (1..8).map(|k| k as f64 / 8.0).collect();
        let tol = 1e-8;
        let opts = FlowOptions::new(tol).checkpoints(cps).record_steps(true);
        for b in [
            integrate_forward(&f, iv, &seeds(2, 20, 4), &opts).unwrap(),
            integrate_backward(&f, iv, &seeds(2, 20, 4), &opts).unwrap(),
        ] {
            assert_eq!(b.checkpoints.len(), 8);
            assert!(b.ode_residual(&f).unwrap() < 10.0 * tol);
        }
        let blow = Blowup::new(1.0);
        let b = integrate_forward(&blow, TimeInterval::new(0.0, 0.5).unwrap(), &seeds(1, 20, 5), &opts_half(tol)).unwrap();
        assert!(b.ode_residual(&blow).unwrap() < 10.0 * tol);
    }

    fn opts_half(tol: f64) -> FlowOptions {
        FlowOptions::new(tol)
            .checkpoints((1..8).map(|k| k as f64 / 16.0).collect())
            .record_steps(true)
    }

    #[test]
    fn blowup_freezes_far_seeds() {
        let f = Blowup::new(1.0);
        let iv = TimeInterval::new(0.0, 0.5).unwrap();
        let b = integrate_forward(&f, iv, &[vec![0.5], vec![1e6], vec![-1e7]], &FlowOptions::new(1e-6)).unwrap();
        assert!(b.particles[0].is_ok());
        assert_eq!(b.particles[1].status, ParticleStatus::BlownUp);
        assert_eq!(b.particles[2].status, ParticleStatus::BlownUp);
        assert!(b.particles[1].terminal()[0].is_finite());
    }

    #[test]
    fn distance_examples() {
        let f = Linear::contraction(1);
        let iv = TimeInterval::new(0.0, 1.0).unwrap();
        let s = seeds(1, 50, 6);
        let a = integrate_forward(&f, iv, &s, &FlowOptions::new(1e-8)).unwrap();
        let d = distance_in_measure(&a, &a.clone(), 0.1).unwrap();
        assert_eq!(d.sup_fraction, 0.0);
        let mut shifted = a.clone();
        for p in &mut shifted.particles {
            p.path.iter_mut().for_each(|x| x[0] += 0.2);
        }
        assert_eq!(distance_in_measure(&a, &shifted, 0.1).unwrap().sup_fraction, 1.0);
        let other = integrate_forward(&f, iv, &seeds(1, 50, 7), &FlowOptions::new(1e-8)).unwrap();
        assert!(distance_in_measure(&a, &other, 0.1).is_err());
    }

    #[test]
    fn sequential_matches_parallel() {
        let f = Trig::new(2, 3, 1, 1.0);
        let iv = TimeInterval::new(0.0, 1.0).unwrap();
        let s = seeds(2, 64, 9);
        let a = integrate_forward(&f, iv, &s, &FlowOptions::new(1e-8).exec(Execution::Sequential)).unwrap();
        let b = integrate_forward(&f, iv, &s, &FlowOptions::new(1e-8).exec(Execution::Parallel)).unwrap();
        assert_eq!(a.terminals(), b.terminals());
    }

    #[test]
    fn csv_layout() {
        let f = Linear::contraction(1);
        let iv = TimeInterval::new(0.0, 0.5).unwrap();
        let b = integrate_forward(&f, iv, &[vec![1.0]], &FlowOptions::new(1e-6).checkpoints(vec![0.25])).unwrap();
        let mut out = Vec::new();
        b.write_csv(&mut out, Some("{}")).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# config={}");
        assert_eq!(lines[2], "particle,time,x0,div_accum,status");
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("0,0.5,") && lines[4].ends_with(",ok"));
    }
}
