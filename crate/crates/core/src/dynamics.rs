//! Deterministic and stochastically forced consensus dynamics.
//!
//! Trajectories of `ẋ = g D(t) x + σ U(t) ẇ` are integrated in the full state
//! space; the off-consensus part is measured through the reduced coordinate
//! `y = S x`, for which `|y| = |P_{1⊥} x|`. The first two moments of `y`
//! obey linear ODEs that serve as the oracle for Monte Carlo runs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::pseudosim::{self, ReductionMap};
use crate::rng::{path_rng, PathRng};
use crate::schedule::{Coupling, CouplingSchedule, NoiseLoading};
use crate::spectral;

/// States with a Euclidean norm beyond this are reported as a blow-up.
pub const BLOW_UP_LIMIT: f64 = 1e12;

/// Paths per reduction block. Fixed so the summation order, and therefore
/// every bit of the result, is independent of the thread count.
const PATHS_PER_BLOCK: usize = 64;

/// Uniform time grid `t_k = k·h`, `h = horizon / steps`, with states recorded
/// every `record_every` steps and at the final time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    record_every: usize,
}

impl TimeGrid {
    /// Grid with step as close to `dt` as possible without exceeding it.
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let steps = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
        Ok(Self {
            horizon,
            steps,
            record_every: 1,
        })
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_every = k.max(1);
        self
    }

    /// Records roughly `count` evenly spaced states (plus the initial one).
    pub fn with_records(self, count: usize) -> Self {
        let k = self.steps.div_ceil(count.max(1));
        self.record_every(k)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, step: usize) -> f64 {
        if step == self.steps {
            self.horizon
        } else {
            step as f64 * self.dt()
        }
    }

    pub fn is_record(&self, step: usize) -> bool {
        step.is_multiple_of(self.record_every) || step == self.steps
    }

    pub fn record_steps(&self) -> Vec<usize> {
        (0..=self.steps).filter(|&k| self.is_record(k)).collect()
    }

    pub fn record_times(&self) -> Vec<f64> {
        self.record_steps().into_iter().map(|k| self.time(k)).collect()
    }
}

fn check_state(x: &[f64], time: f64) -> Result<()> {
    let norm2: f64 = x.iter().map(|v| v * v).sum();
    if !norm2.is_finite() || norm2 > BLOW_UP_LIMIT * BLOW_UP_LIMIT {
        return Err(Error::BlowUp {
            time,
            limit: BLOW_UP_LIMIT,
        });
    }
    Ok(())
}

fn check_dim(schedule: &CouplingSchedule, len: usize) -> Result<()> {
    if schedule.n() != len {
        return Err(Error::DimensionMismatch {
            expected: schedule.n(),
            got: len,
        });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// `|P_{1⊥} x(t)| = |S x(t)|`.
    pub off_consensus: Vec<f64>,
}

/// Deterministic flow `ẋ = g D(t) x`. Constant couplings step with the exact
/// propagator `exp(h g D)`; otherwise classical RK4 is used, with steps split
/// at the switching instants of piecewise-constant schedules.
pub fn integrate_deterministic(
    schedule: &CouplingSchedule,
    x0: &DVector<f64>,
    grid: TimeGrid,
) -> Result<Trajectory> {
    check_dim(schedule, x0.len())?;
    let map = ReductionMap::difference(schedule.n())?;
    let h = grid.dt();
    let mut out = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        off_consensus: Vec::new(),
    };
    let record = |t: f64, x: &DVector<f64>, out: &mut Trajectory| {
        out.times.push(t);
        out.off_consensus.push((map.s() * x).norm());
        out.states.push(x.clone());
    };
    let mut x = x0.clone();
    record(0.0, &x, &mut out);

    let propagator = match schedule.coupling() {
        Coupling::Constant(d) => Some(linalg::expm(&(d * (schedule.gain() * h)))),
        _ => None,
    };
    for k in 1..=grid.steps() {
        let t0 = grid.time(k - 1);
        let t1 = grid.time(k);
        x = match &propagator {
            Some(p) => p * &x,
            None => rk4_interval(schedule, &x, t0, t1)?,
        };
        check_state(x.as_slice(), t1)?;
        if grid.is_record(k) {
            record(t1, &x, &mut out);
        }
    }
    Ok(out)
}

/// Next switching instant strictly after `t`, if the schedule switches.
fn next_switch(schedule: &CouplingSchedule, t: f64) -> Option<f64> {
    match schedule.coupling() {
        Coupling::Switching { dwell, .. } => {
            let mut k = (t / dwell).floor() + 1.0;
            while k * dwell <= t {
                k += 1.0;
            }
            Some(k * dwell)
        }
        _ => None,
    }
}

fn rk4_interval(schedule: &CouplingSchedule, x: &DVector<f64>, t0: f64, t1: f64) -> Result<DVector<f64>> {
    let mut t = t0;
    let mut x = x.clone();
    while t < t1 {
        let end = match next_switch(schedule, t) {
            Some(s) if s < t1 - 1e-12 * t1.abs().max(1.0) => s,
            _ => t1,
        };
        x = rk4_step(schedule, &x, t, end - t)?;
        t = end;
    }
    Ok(x)
}

fn rk4_step(schedule: &CouplingSchedule, x: &DVector<f64>, t: f64, h: f64) -> Result<DVector<f64>> {
    let piecewise = matches!(schedule.coupling(), Coupling::Switching { .. });
    let at = |s: f64| {
        // Piecewise-constant couplings are sampled inside the current piece.
        schedule.effective_coupling_at(if piecewise { t + 0.5 * h } else { s })
    };
    let d0 = at(t)?;
    let dm = at(t + 0.5 * h)?;
    let d1 = at(t + h)?;
    let k1 = &d0 * x;
    let k2 = &dm * (x + &k1 * (0.5 * h));
    let k3 = &dm * (x + &k2 * (0.5 * h));
    let k4 = &d1 * (x + &k3 * h);
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Sparse `I + h g D` for the Euler–Maruyama drift.
#[derive(Clone, Debug)]
struct StepMatrix {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl StepMatrix {
    fn new(d: &DMatrix<f64>, scale: f64) -> Self {
        let n = d.nrows();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let v = d[(i, j)] * scale + if i == j { 1.0 } else { 0.0 };
                if v != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { row_ptr, cols, vals }
    }

    #[inline]
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = 0.0;
            for k in a..b {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o = acc;
        }
    }
}

enum Drift {
    Fixed(StepMatrix),
    Switching { steps: Vec<StepMatrix>, dwell: f64 },
    Sampled,
}

struct EulerMaruyama<'a> {
    schedule: &'a CouplingSchedule,
    grid: TimeGrid,
    drift: Drift,
    noise_scale: f64,
    constant_noise: Option<DMatrix<f64>>,
}

impl<'a> EulerMaruyama<'a> {
    fn new(schedule: &'a CouplingSchedule, grid: TimeGrid) -> Self {
        let scale = grid.dt() * schedule.gain();
        let drift = match schedule.coupling() {
            Coupling::Constant(d) => Drift::Fixed(StepMatrix::new(d, scale)),
            Coupling::Switching { matrices, dwell } => Drift::Switching {
                steps: matrices.iter().map(|m| StepMatrix::new(m, scale)).collect(),
                dwell: *dwell,
            },
            Coupling::Function(_) => Drift::Sampled,
        };
        let constant_noise = match schedule.noise() {
            NoiseLoading::Constant(u) => Some(u.clone()),
            _ => None,
        };
        Self {
            schedule,
            grid,
            drift,
            noise_scale: schedule.sigma() * grid.dt().sqrt(),
            constant_noise,
        }
    }

    /// Runs one path, calling `on_record(record_index, state)` on the record grid.
    fn run_path(
        &self,
        x0: &DVector<f64>,
        rng: &mut PathRng,
        mut on_record: impl FnMut(usize, &[f64]),
    ) -> Result<()> {
        let n = x0.len();
        let mut x = x0.as_slice().to_vec();
        let mut next = vec![0.0; n];
        let mut xi = Vec::new();
        let mut record = 0;
        on_record(record, &x);
        record += 1;
        let h = self.grid.dt();
        let noisy = self.noise_scale > 0.0;
        for k in 1..=self.grid.steps() {
            let t = self.grid.time(k - 1);
            match &self.drift {
                Drift::Fixed(m) => m.apply(&x, &mut next),
                Drift::Switching { steps, dwell } => {
                    let seg = ((t / dwell).floor().max(0.0) as usize) % steps.len();
                    steps[seg].apply(&x, &mut next);
                }
                Drift::Sampled => {
                    let d = self.schedule.effective_coupling_at(t)?;
                    let xv = DVector::from_column_slice(&x);
                    let dx = d * &xv * h;
                    for i in 0..n {
                        next[i] = x[i] + dx[i];
                    }
                }
            }
            if noisy {
                match (&self.constant_noise, self.schedule.noise()) {
                    (_, NoiseLoading::Identity) => {
                        for v in next.iter_mut() {
                            let z: f64 = rng.sample(StandardNormal);
                            *v += self.noise_scale * z;
                        }
                    }
                    (Some(u), _) => self.add_loaded_noise(u, rng, &mut xi, &mut next),
                    (None, _) => {
                        let u = self.schedule.noise_at(t);
                        self.add_loaded_noise(&u, rng, &mut xi, &mut next);
                    }
                }
            }
            std::mem::swap(&mut x, &mut next);
            if self.grid.is_record(k) {
                check_state(&x, self.grid.time(k))?;
                on_record(record, &x);
                record += 1;
            } else if k % 1024 == 0 {
                check_state(&x, self.grid.time(k))?;
            }
        }
        Ok(())
    }

    fn add_loaded_noise(&self, u: &DMatrix<f64>, rng: &mut PathRng, xi: &mut Vec<f64>, out: &mut [f64]) {
        xi.clear();
        xi.extend((0..u.ncols()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, z) in xi.iter().enumerate() {
                acc += u[(i, j)] * z;
            }
            *o += self.noise_scale * acc;
        }
    }

    /// Whether paths can be advanced in lockstep by `run_block`.
    fn supports_block(&self) -> bool {
        !matches!(self.drift, Drift::Sampled) && matches!(self.schedule.noise(), NoiseLoading::Identity)
    }

    /// Advances `rngs.len()` paths together, state stored as `x[i * width + p]`.
    /// Each path sees the same stream and arithmetic as in `run_path`.
    fn run_block(
        &self,
        x0: &DVector<f64>,
        rngs: &mut [PathRng],
        mut on_record: impl FnMut(usize, &[f64], usize),
    ) -> Result<()> {
        let n = x0.len();
        let width = rngs.len();
        let mut x = vec![0.0; n * width];
        for i in 0..n {
            x[i * width..(i + 1) * width].fill(x0[i]);
        }
        let mut next = vec![0.0; n * width];
        let mut z = vec![0.0; n * width];
        let noisy = self.noise_scale > 0.0;
        let mut record = 0;
        on_record(record, &x, width);
        record += 1;
        for k in 1..=self.grid.steps() {
            let m = match &self.drift {
                Drift::Fixed(m) => m,
                Drift::Switching { steps, dwell } => {
                    let t = self.grid.time(k - 1);
                    &steps[((t / dwell).floor().max(0.0) as usize) % steps.len()]
                }
                Drift::Sampled => unreachable!("sampled drift runs per path"),
            };
            for i in 0..n {
                let row = &mut next[i * width..(i + 1) * width];
                row.fill(0.0);
                for q in m.row_ptr[i]..m.row_ptr[i + 1] {
                    let (v, src) = (m.vals[q], &x[m.cols[q] * width..(m.cols[q] + 1) * width]);
                    for (o, s) in row.iter_mut().zip(src) {
                        *o += v * s;
                    }
                }
            }
            if noisy {
                // Row-major over paths so consecutive draws come from
                // independent generators; each path still draws rows in order.
                for i in 0..n {
                    for (zp, rng) in z[i * width..(i + 1) * width].iter_mut().zip(rngs.iter_mut()) {
                        *zp = rng.sample(StandardNormal);
                    }
                }
                let scale = self.noise_scale;
                for (o, zi) in next.iter_mut().zip(&z) {
                    *o += scale * zi;
                }
            }
            std::mem::swap(&mut x, &mut next);
            if (self.grid.is_record(k) || k.is_multiple_of(1024))
                && !x.iter().all(|v| v.abs() <= BLOW_UP_LIMIT)
            {
                return Err(Error::BlowUp {
                    time: self.grid.time(k),
                    limit: BLOW_UP_LIMIT,
                });
            }
            if self.grid.is_record(k) {
                on_record(record, &x, width);
                record += 1;
            }
        }
        Ok(())
    }
}

/// Recorded states of every path in an Euler–Maruyama ensemble.
#[derive(Clone, Debug)]
pub struct TrajectoryEnsemble {
    pub times: Vec<f64>,
    pub seed: u64,
    pub dt: f64,
    n: usize,
    /// `paths[p][r*n .. (r+1)*n]` is the state of path `p` at `times[r]`.
    paths: Vec<Vec<f64>>,
}

impl TrajectoryEnsemble {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn state(&self, path: usize, record: usize) -> &[f64] {
        &self.paths[path][record * self.n..(record + 1) * self.n]
    }

    /// `|P_{1⊥} x|` of one path at every recorded time.
    pub fn off_consensus(&self, path: usize, map: &ReductionMap) -> Vec<f64> {
        (0..self.times.len())
            .map(|r| (map.s() * DVector::from_column_slice(self.state(path, r))).norm())
            .collect()
    }

    pub fn statistics(&self, map: &ReductionMap) -> EnsembleStats {
        let records = self.times.len();
        let mut total = MomentAccumulator::new(records, self.n - 1);
        let mut y = vec![0.0; self.n - 1];
        for block in (0..self.paths.len()).collect::<Vec<_>>().chunks(PATHS_PER_BLOCK) {
            let mut acc = MomentAccumulator::new(records, self.n - 1);
            for &p in block {
                for r in 0..records {
                    project(map.s(), self.state(p, r), &mut y);
                    acc.add(r, &y);
                }
            }
            total.merge(&acc);
        }
        total.finish(self.times.clone())
    }
}

/// Euler–Maruyama `x_{k+1} = x_k + g D(t_k) x_k h + σ U(t_k) √h ξ_k`, with
/// `ξ_k` drawn from the stream keyed by `(seed, path)`.
pub fn integrate_sde(
    schedule: &CouplingSchedule,
    x0: &DVector<f64>,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<TrajectoryEnsemble> {
    check_dim(schedule, x0.len())?;
    if n_paths == 0 {
        return Err(Error::InvalidParameter("need at least one path".into()));
    }
    let em = EulerMaruyama::new(schedule, grid);
    let n = x0.len();
    let records = grid.record_steps().len();
    let paths = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p as u64);
            let mut buf = vec![0.0; records * n];
            em.run_path(x0, &mut rng, |r, x| buf[r * n..(r + 1) * n].copy_from_slice(x))?;
            Ok(buf)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryEnsemble {
        times: grid.record_times(),
        seed,
        dt: grid.dt(),
        n,
        paths,
    })
}

fn project(s: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    for (i, yi) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, xj) in x.iter().enumerate() {
            acc += s[(i, j)] * xj;
        }
        *yi = acc;
    }
}

/// Per-record Welford accumulators for `y`, its scatter matrix and `|y|²`.
/// Blocks combine with the pairwise update of Chan, Golub and LeVeque.
#[derive(Clone, Debug)]
struct MomentAccumulator {
    dim: usize,
    count: Vec<usize>,
    mean: Vec<f64>,
    /// Upper triangle of `Σ (y − ȳ)(y − ȳ)ᵀ`, row-major `dim × dim`.
    scatter: Vec<f64>,
    sq_mean: Vec<f64>,
    sq_scatter: Vec<f64>,
    delta: Vec<f64>,
}

impl MomentAccumulator {
    fn new(records: usize, dim: usize) -> Self {
        Self {
            dim,
            count: vec![0; records],
            mean: vec![0.0; records * dim],
            scatter: vec![0.0; records * dim * dim],
            sq_mean: vec![0.0; records],
            sq_scatter: vec![0.0; records],
            delta: vec![0.0; dim],
        }
    }

    fn add(&mut self, r: usize, y: &[f64]) {
        let d = self.dim;
        self.count[r] += 1;
        let k = self.count[r] as f64;
        let mean = &mut self.mean[r * d..(r + 1) * d];
        for i in 0..d {
            self.delta[i] = y[i] - mean[i];
            mean[i] += self.delta[i] / k;
        }
        let sc = &mut self.scatter[r * d * d..(r + 1) * d * d];
        for i in 0..d {
            for j in i..d {
                sc[i * d + j] += self.delta[i] * (y[j] - mean[j]);
            }
        }
        let q: f64 = y.iter().map(|v| v * v).sum();
        let dq = q - self.sq_mean[r];
        self.sq_mean[r] += dq / k;
        self.sq_scatter[r] += dq * (q - self.sq_mean[r]);
    }

    fn merge(&mut self, other: &Self) {
        let d = self.dim;
        for r in 0..self.count.len() {
            let (na, nb) = (self.count[r] as f64, other.count[r] as f64);
            if nb == 0.0 {
                continue;
            }
            let n = na + nb;
            let w = na * nb / n;
            let (ma, mb) = (
                &mut self.mean[r * d..(r + 1) * d],
                &other.mean[r * d..(r + 1) * d],
            );
            for i in 0..d {
                self.delta[i] = mb[i] - ma[i];
            }
            let (sa, sb) = (
                &mut self.scatter[r * d * d..(r + 1) * d * d],
                &other.scatter[r * d * d..(r + 1) * d * d],
            );
            for i in 0..d {
                for j in i..d {
                    sa[i * d + j] += sb[i * d + j] + self.delta[i] * self.delta[j] * w;
                }
            }
            for (m, delta) in ma.iter_mut().zip(&self.delta) {
                *m += delta * nb / n;
            }
            let dq = other.sq_mean[r] - self.sq_mean[r];
            self.sq_scatter[r] += other.sq_scatter[r] + dq * dq * w;
            self.sq_mean[r] += dq * nb / n;
            self.count[r] += other.count[r];
        }
    }

    fn finish(self, times: Vec<f64>) -> EnsembleStats {
        let d = self.dim;
        let records = self.count.len();
        let mut mean = Vec::with_capacity(records);
        let mut cov = Vec::with_capacity(records);
        let mut second_moment_se = Vec::with_capacity(records);
        for r in 0..records {
            let n = self.count[r] as f64;
            let denom = (n - 1.0).max(1.0);
            let sc = &self.scatter[r * d * d..(r + 1) * d * d];
            mean.push(DVector::from_column_slice(&self.mean[r * d..(r + 1) * d]));
            cov.push(DMatrix::from_fn(d, d, |i, j| sc[i.min(j) * d + i.max(j)] / denom));
            second_moment_se.push((self.sq_scatter[r] / denom / n).sqrt());
        }
        EnsembleStats {
            times,
            n_paths: self.count.first().copied().unwrap_or(0),
            mean,
            cov,
            second_moment: self.sq_mean,
            second_moment_se,
        }
    }
}

/// Empirical moments of `y = S x` across an ensemble at each record time.
#[derive(Clone, Debug)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub mean: Vec<DVector<f64>>,
    /// Unbiased sample covariance.
    pub cov: Vec<DMatrix<f64>>,
    /// `E|P_{1⊥} x|² = E|y|²`.
    pub second_moment: Vec<f64>,
    pub second_moment_se: Vec<f64>,
}

impl EnsembleStats {
    /// Standard error of mean entry `i` at record `r`.
    pub fn mean_se(&self, r: usize, i: usize) -> f64 {
        (self.cov[r][(i, i)] / self.n_paths as f64).sqrt()
    }

    /// Standard error of covariance entry `(i, j)` at record `r`, using the
    /// Gaussian fourth-moment identity (the process is Gaussian).
    pub fn cov_se(&self, r: usize, i: usize, j: usize) -> f64 {
        let c = &self.cov[r];
        ((c[(i, i)] * c[(j, j)] + c[(i, j)] * c[(i, j)]) / self.n_paths as f64).sqrt()
    }

    /// Mean of `E|P_{1⊥} x|²` over records with `t ∈ [from, to]`.
    pub fn window_mean(&self, from: f64, to: f64) -> f64 {
        let vals: Vec<f64> = self
            .times
            .iter()
            .zip(&self.second_moment)
            .filter(|(t, _)| **t >= from && **t <= to)
            .map(|(_, v)| *v)
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }

    /// Late-window stationarity estimate: mean over `t ∈ [0.8T, T]`.
    pub fn late_window_mean(&self) -> f64 {
        let end = self.times.last().copied().unwrap_or(0.0);
        self.window_mean(0.8 * end, end)
    }

    /// Trace of the sample covariance, the fluctuation part of `E|y|²`.
    pub fn cov_trace(&self, r: usize) -> f64 {
        self.cov[r].trace()
    }
}

/// Streams an Euler–Maruyama ensemble straight into moment statistics
/// without storing paths. Bit-identical for any thread count.
pub fn ensemble_statistics(
    schedule: &CouplingSchedule,
    x0: &DVector<f64>,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<EnsembleStats> {
    check_dim(schedule, x0.len())?;
    if n_paths == 0 {
        return Err(Error::InvalidParameter("need at least one path".into()));
    }
    let map = ReductionMap::difference(schedule.n())?;
    let em = EulerMaruyama::new(schedule, grid);
    let records = grid.record_steps().len();
    let dim = schedule.n() - 1;
    let blocks = n_paths.div_ceil(PATHS_PER_BLOCK);
    let partial = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = MomentAccumulator::new(records, dim);
            let mut y = vec![0.0; dim];
            let end = ((b + 1) * PATHS_PER_BLOCK).min(n_paths);
            if em.supports_block() {
                let mut rngs: Vec<PathRng> = (b * PATHS_PER_BLOCK..end)
                    .map(|p| path_rng(seed, p as u64))
                    .collect();
                let mut state = vec![0.0; dim + 1];
                em.run_block(x0, &mut rngs, |r, x, width| {
                    for p in 0..width {
                        for (i, s) in state.iter_mut().enumerate() {
                            *s = x[i * width + p];
                        }
                        project(map.s(), &state, &mut y);
                        acc.add(r, &y);
                    }
                })?;
                return Ok(acc);
            }
            for p in b * PATHS_PER_BLOCK..end {
                let mut rng = path_rng(seed, p as u64);
                em.run_path(x0, &mut rng, |r, x| {
                    project(map.s(), x, &mut y);
                    acc.add(r, &y);
                })?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = MomentAccumulator::new(records, dim);
    for acc in &partial {
        total.merge(acc);
    }
    Ok(total.finish(grid.record_times()))
}

#[derive(Clone, Debug)]
pub struct MomentTrajectory {
    pub times: Vec<f64>,
    /// `m(t) = E y(t)`.
    pub mean: Vec<DVector<f64>>,
    /// `V(t) = cov y(t)`.
    pub cov: Vec<DMatrix<f64>>,
    /// `E|P_{1⊥} x|² = mᵀm + Tr V`.
    pub off_consensus_second_moment: Vec<f64>,
}

/// RK4 integration of `ṁ = g D̂ m`, `V̇ = g(D̂V + VD̂ᵀ) + σ² S U Uᵀ Sᵀ` from
/// `m(0) = y0`, `V(0) = 0`.
pub fn integrate_moment_odes(
    schedule: &CouplingSchedule,
    y0: &DVector<f64>,
    grid: TimeGrid,
) -> Result<MomentTrajectory> {
    let map = ReductionMap::difference(schedule.n())?;
    if y0.len() != schedule.n() - 1 {
        return Err(Error::DimensionMismatch {
            expected: schedule.n() - 1,
            got: y0.len(),
        });
    }
    let sigma2 = schedule.sigma() * schedule.sigma();
    let reduced_at = |t: f64| -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let d_hat = map.s() * schedule.effective_coupling_at(t)? * map.s_plus();
        let su = map.s() * schedule.noise_at(t);
        Ok((d_hat, &su * su.transpose() * sigma2))
    };
    let rhs = |(d_hat, forcing): &(DMatrix<f64>, DMatrix<f64>), m: &DVector<f64>, v: &DMatrix<f64>| {
        let dv = d_hat * v;
        (d_hat * m, &dv + dv.transpose() + forcing)
    };
    let constant = schedule.is_constant()
        && matches!(
            schedule.noise(),
            NoiseLoading::Identity | NoiseLoading::Constant(_)
        );
    let fixed = if constant { Some(reduced_at(0.0)?) } else { None };
    let piecewise = matches!(schedule.coupling(), Coupling::Switching { .. });

    let dim = y0.len();
    let mut m = y0.clone();
    let mut v = DMatrix::zeros(dim, dim);
    let mut out = MomentTrajectory {
        times: Vec::new(),
        mean: Vec::new(),
        cov: Vec::new(),
        off_consensus_second_moment: Vec::new(),
    };
    let push = |t: f64, m: &DVector<f64>, v: &DMatrix<f64>, out: &mut MomentTrajectory| {
        out.times.push(t);
        out.off_consensus_second_moment.push(m.norm_squared() + v.trace());
        out.mean.push(m.clone());
        out.cov.push(v.clone());
    };
    push(0.0, &m, &v, &mut out);
    for k in 1..=grid.steps() {
        let t0 = grid.time(k - 1);
        let t1 = grid.time(k);
        let mut t = t0;
        while t < t1 {
            let end = match next_switch(schedule, t) {
                Some(s) if s < t1 - 1e-12 * t1.abs().max(1.0) => s,
                _ => t1,
            };
            let h = end - t;
            let (a0, am, a1) = match &fixed {
                Some(f) => (f.clone(), f.clone(), f.clone()),
                None if piecewise => {
                    let f = reduced_at(t + 0.5 * h)?;
                    (f.clone(), f.clone(), f)
                }
                None => (reduced_at(t)?, reduced_at(t + 0.5 * h)?, reduced_at(t + h)?),
            };
            let (k1m, k1v) = rhs(&a0, &m, &v);
            let (k2m, k2v) = rhs(&am, &(&m + &k1m * (0.5 * h)), &(&v + &k1v * (0.5 * h)));
            let (k3m, k3v) = rhs(&am, &(&m + &k2m * (0.5 * h)), &(&v + &k2v * (0.5 * h)));
            let (k4m, k4v) = rhs(&a1, &(&m + &k3m * h), &(&v + &k3v * h));
            m += (k1m + k2m * 2.0 + k3m * 2.0 + k4m) * (h / 6.0);
            v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
            t = end;
        }
        if !m.norm().is_finite() || m.norm() > BLOW_UP_LIMIT || v.norm() > BLOW_UP_LIMIT {
            return Err(Error::BlowUp {
                time: t1,
                limit: BLOW_UP_LIMIT,
            });
        }
        if grid.is_record(k) {
            push(t1, &m, &v, &mut out);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct StationaryPrediction {
    /// `(σ²/2)(−D̂ˢ)^{-1}`.
    #[serde(skip)]
    pub limit_cov: DMatrix<f64>,
    /// `(σ²/2) Σ_{i≥2} 1/Re μ_i`, `μ_i` the nonzero eigenvalues of `−D`.
    pub limit_second_moment: f64,
}

/// Stationary covariance and dispersion for a normal convergent coupling
/// (already multiplied by any gain).
pub fn stationary_prediction(d: &DMatrix<f64>, sigma: f64) -> Result<StationaryPrediction> {
    linalg::ensure_square(d)?;
    let comm = linalg::commutator_norm(d);
    if comm > 1e-9 * d.norm().powi(2).max(1.0) {
        return Err(Error::NotNormal(comm));
    }
    let conv = spectral::classify_convergent(d)?;
    if !conv.convergent {
        return Err(Error::NotConvergent);
    }
    let d_hat = pseudosim::reduce_default(d)?.d_hat;
    let neg_sym = -linalg::symmetric_part(&d_hat);
    let inv = neg_sym.cholesky().ok_or(Error::NotConvergent)?.inverse();
    let half_var = 0.5 * sigma * sigma;

    let mut ev = linalg::eigenvalues(&(-d))?;
    let zero = ev
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .map(|(i, _)| i)
        .ok_or(Error::DimensionTooSmall(0))?;
    ev.remove(zero);
    let resistance: f64 = ev.iter().map(|z| z.re.recip()).sum();
    Ok(StationaryPrediction {
        limit_cov: inv * half_var,
        limit_second_moment: half_var * resistance,
    })
}

/// Smallest dissipativity margin of `D̂(t)` (gain excluded) over the schedule,
/// sampled on `[0, horizon]` for function schedules.
pub fn schedule_margin(schedule: &CouplingSchedule, horizon: f64) -> Result<f64> {
    let map = ReductionMap::difference(schedule.n())?;
    let margin_of = |d: &DMatrix<f64>| spectral::dissipativity_margin(&(map.s() * d * map.s_plus()));
    Ok(match schedule.coupling() {
        Coupling::Constant(d) => margin_of(d),
        Coupling::Switching { matrices, .. } => matrices.iter().map(margin_of).fold(f64::INFINITY, f64::min),
        Coupling::Function(_) => {
            let mut worst = f64::INFINITY;
            for k in 0..=100 {
                worst = worst.min(margin_of(&schedule.coupling_at(horizon * k as f64 / 100.0)?));
            }
            worst
        }
    })
}

/// Uniform bound `(σ² n / (2 g α)) sup ‖U Uᵀ‖` on the off-consensus dispersion.
pub fn uniform_bound(schedule: &CouplingSchedule, horizon: f64) -> Result<f64> {
    let alpha = schedule_margin(schedule, horizon)?;
    if alpha <= 0.0 {
        return Err(Error::PreconditionNotDissipative(alpha));
    }
    let loading = match schedule.noise() {
        NoiseLoading::Identity => 1.0,
        NoiseLoading::Constant(u) => linalg::spectral_norm(&(u * u.transpose())),
        NoiseLoading::Function(_) => (0..=100)
            .map(|k| {
                let u = schedule.noise_at(horizon * k as f64 / 100.0);
                linalg::spectral_norm(&(&u * u.transpose()))
            })
            .fold(0.0, f64::max),
    };
    let sigma2 = schedule.sigma() * schedule.sigma();
    Ok(sigma2 * schedule.n() as f64 / (2.0 * schedule.gain() * alpha) * loading)
}

/// Checks the ensemble's off-consensus fluctuation `Tr cov(y)` against the
/// uniform bound, allowing five Monte Carlo standard errors, at every record.
pub fn uniform_bound_check(schedule: &CouplingSchedule, stats: &EnsembleStats) -> Result<bool> {
    let horizon = stats.times.last().copied().unwrap_or(0.0);
    let bound = uniform_bound(schedule, horizon)?;
    Ok((0..stats.times.len()).all(|r| stats.cov_trace(r) <= bound + 5.0 * stats.second_moment_se[r]))
}

/// Least-squares decay rate `−d ln|v| / dt` over samples with `t ∈ [from, to]`.
pub fn fit_decay_rate(times: &[f64], values: &[f64], from: f64, to: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= from && **t <= to && **v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}
