//! Time propagation of the Schrödinger equation `i da/dt = H(t) a`.
//!
//! [`evolve`] is the production path (classical fixed-step RK4).
//! [`oracle_evolve`] is a slower piecewise-constant exponential propagator
//! built on a Hermitian eigendecomposition at each step midpoint; it exists to
//! cross-check the RK4 results.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::sig9;
use crate::model::{Model, PulseSpec};

/// Norm drift above which a run is rejected as diverged.
pub const DIVERGENCE_DRIFT: f64 = 1e-4;
/// Tolerance on the norm of a state handed to the integrators.
pub const INITIAL_NORM_TOL: f64 = 1e-6;
/// Largest Hilbert-space dimension handled by the eigendecomposition oracle.
pub const ORACLE_MAX_DIM: usize = 729;

/// Complex amplitudes over the collective basis at a given time.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub amplitudes: Vec<C64>,
    pub time: f64,
}

impl StateVector {
    pub fn new(amplitudes: Vec<C64>, time: f64) -> Self {
        Self { amplitudes, time }
    }

    /// A single basis state.
    pub fn basis(dim: usize, index: usize, time: f64) -> Self {
        let mut amplitudes = vec![C64::new(0.0, 0.0); dim];
        amplitudes[index] = C64::new(1.0, 0.0);
        Self { amplitudes, time }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn population(&self, index: usize) -> f64 {
        self.amplitudes[index].norm_sqr()
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { amplitudes: self.amplitudes.iter().map(|a| a * c).collect(), time: self.time }
    }

    /// Euclidean distance between amplitude vectors.
    pub fn distance(&self, other: &StateVector) -> f64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// Step size, window and output cadence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default = "default_halvings")]
    pub convergence_halvings: usize,
    /// Number of output intervals; `samples + 1` rows are recorded.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_dt() -> f64 {
    1e-4
}

fn default_halvings() -> usize {
    6
}

fn default_samples() -> usize {
    1000
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            t_start: 0.0,
            t_end: 6.0,
            convergence_halvings: default_halvings(),
            samples: default_samples(),
        }
    }
}

impl IntegratorConfig {
    /// Window `[t_c - 3 τ0, t_c + 3 τ0]`, i.e. `[0, 6 τ0]` for `t_c = 3 τ0`.
    pub fn for_pulse(pulse: &PulseSpec) -> Self {
        Self {
            t_start: pulse.t_center - 3.0 * pulse.tau0,
            t_end: pulse.t_center + 3.0 * pulse.tau0,
            ..Self::default()
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidIntegrator(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_start < self.t_end) || !self.t_start.is_finite() || !self.t_end.is_finite() {
            return Err(Error::InvalidIntegrator(format!(
                "window must satisfy t_start < t_end, got [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        if self.samples == 0 {
            return Err(Error::InvalidIntegrator("samples must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of steps and the step actually used so the window is covered exactly.
    pub fn step_plan(&self) -> (usize, f64) {
        let span = self.t_end - self.t_start;
        let raw = span / self.dt;
        let n = if (raw - raw.round()).abs() < 1e-9 * raw.max(1.0) {
            raw.round() as usize
        } else {
            raw.ceil() as usize
        };
        let n = n.max(1);
        (n, span / n as f64)
    }
}

/// Sampled populations of a run plus the final state.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Labels of the recorded basis states.
    pub labels: Vec<String>,
    /// Basis indices of the recorded states.
    pub indices: Vec<usize>,
    /// `populations[row][col]`: population of `indices[col]` at `times[row]`.
    pub populations: Vec<Vec<f64>>,
    /// Norm of the full state at each sample.
    pub norms: Vec<f64>,
    pub final_state: StateVector,
    /// Step size actually used.
    pub dt: f64,
}

impl Trajectory {
    pub fn max_norm_drift(&self) -> f64 {
        self.norms.iter().map(|n| (n - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn column(&self, label: &str) -> Option<Vec<f64>> {
        let c = self.column_index(label)?;
        Some(self.populations.iter().map(|row| row[c]).collect())
    }

    /// Writes `t,<label_1>,...` followed by any extra named columns.
    pub fn write_csv<W: Write>(&self, mut w: W, extra: &[(String, Vec<f64>)]) -> Result<()> {
        let mut header = String::from("t");
        for l in &self.labels {
            header.push(',');
            header.push_str(l);
        }
        for (name, col) in extra {
            if col.len() != self.times.len() {
                return Err(Error::DimensionMismatch { expected: self.times.len(), got: col.len() });
            }
            header.push(',');
            header.push_str(name);
        }
        writeln!(w, "{header}")?;
        for (row, t) in self.times.iter().enumerate() {
            let mut line = sig9(*t);
            for p in &self.populations[row] {
                line.push(',');
                line.push_str(&sig9(*p));
            }
            for (_, col) in extra {
                line.push(',');
                line.push_str(&sig9(col[row]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

fn check_initial(dim: usize, initial: &StateVector) -> Result<()> {
    if initial.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: initial.dim() });
    }
    let norm = initial.norm();
    if (norm - 1.0).abs() > INITIAL_NORM_TOL {
        return Err(Error::NotNormalized(norm));
    }
    Ok(())
}

/// Step indices at which samples are recorded: `round(k n / samples)`.
fn sample_steps(n_steps: usize, samples: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = (0..=samples)
        .map(|k| ((k as f64) * n_steps as f64 / samples as f64).round() as usize)
        .collect();
    steps.dedup();
    steps
}

struct Recorder {
    indices: Vec<usize>,
    times: Vec<f64>,
    populations: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl Recorder {
    fn new(indices: Vec<usize>, capacity: usize) -> Self {
        Self {
            indices,
            times: Vec::with_capacity(capacity),
            populations: Vec::with_capacity(capacity),
            norms: Vec::with_capacity(capacity),
        }
    }

    fn record(&mut self, t: f64, psi: &[C64], dt: f64) -> Result<()> {
        let norm = psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        let drift = (norm - 1.0).abs();
        if !(drift <= DIVERGENCE_DRIFT) {
            return Err(Error::IntegrationDiverged { drift, time: t, dt });
        }
        self.times.push(t);
        self.populations.push(self.indices.iter().map(|&k| psi[k].norm_sqr()).collect());
        self.norms.push(norm);
        Ok(())
    }
}

/// Called with the time and full amplitude vector at every recorded sample.
pub type Probe<'a> = &'a mut dyn FnMut(f64, &[C64]);

/// Drives a fixed-step scheme over the configured window, sampling
/// populations. `step(t, h, psi)` advances `psi` from `t` to `t + h` in place.
pub(crate) fn integrate_fixed<S>(
    dim: usize,
    mut step: S,
    cfg: &IntegratorConfig,
    initial: &StateVector,
    labels: Vec<String>,
    indices: Vec<usize>,
    probe: Probe,
) -> Result<Trajectory>
where
    S: FnMut(f64, f64, &mut [C64]),
{
    cfg.validate()?;
    check_initial(dim, initial)?;
    let (n_steps, h) = cfg.step_plan();
    let steps = sample_steps(n_steps, cfg.samples);
    let mut rec = Recorder::new(indices, steps.len());
    let mut psi = initial.amplitudes.clone();

    let mut next_sample = 0;
    for k in 0..=n_steps {
        let t = cfg.t_start + k as f64 * h;
        if next_sample < steps.len() && steps[next_sample] == k {
            rec.record(t, &psi, h)?;
            probe(t, &psi);
            next_sample += 1;
        }
        if k == n_steps {
            break;
        }
        step(t, h, &mut psi);
    }

    Ok(Trajectory {
        times: rec.times,
        labels,
        indices: rec.indices,
        populations: rec.populations,
        norms: rec.norms,
        final_state: StateVector::new(psi, cfg.t_end),
        dt: h,
    })
}

/// Fixed-step RK4 for `da/dt = f(t, a)`, where `deriv(t, a, out)` writes `f`.
pub(crate) fn rk4_integrate<F>(
    dim: usize,
    mut deriv: F,
    cfg: &IntegratorConfig,
    initial: &StateVector,
    labels: Vec<String>,
    indices: Vec<usize>,
    probe: Probe,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[C64], &mut [C64]),
{
    let mut k1 = vec![C64::new(0.0, 0.0); dim];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();
    let step = |t: f64, h: f64, psi: &mut [C64]| {
        deriv(t, psi, &mut k1);
        for i in 0..dim {
            tmp[i] = psi[i] + k1[i] * (0.5 * h);
        }
        deriv(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = psi[i] + k2[i] * (0.5 * h);
        }
        deriv(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = psi[i] + k3[i] * h;
        }
        deriv(t + h, &tmp, &mut k4);
        for i in 0..dim {
            psi[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
        }
    };
    integrate_fixed(dim, step, cfg, initial, labels, indices, probe)
}

fn all_columns(model: &Model) -> (Vec<String>, Vec<usize>) {
    (model.basis().labels(), (0..model.dim()).collect())
}

/// Propagates `initial` with classical RK4, recording every basis population.
pub fn evolve(model: &Model, cfg: &IntegratorConfig, initial: &StateVector) -> Result<Trajectory> {
    let (labels, indices) = all_columns(model);
    evolve_recording(model, cfg, initial, labels, indices)
}

/// Like [`evolve`] but records only the given basis indices.
pub fn evolve_recording(
    model: &Model,
    cfg: &IntegratorConfig,
    initial: &StateVector,
    labels: Vec<String>,
    indices: Vec<usize>,
) -> Result<Trajectory> {
    evolve_probed(model, cfg, initial, labels, indices, &mut |_, _| {})
}

/// Like [`evolve_recording`], also handing every sampled state to `probe`.
pub fn evolve_probed(
    model: &Model,
    cfg: &IntegratorConfig,
    initial: &StateVector,
    labels: Vec<String>,
    indices: Vec<usize>,
    probe: Probe,
) -> Result<Trajectory> {
    model.pulse().validate_window(cfg.t_start, cfg.t_end)?;
    let mut diag = vec![0.0; model.dim()];
    rk4_integrate(
        model.dim(),
        |t, psi, out| model.derivative(t, psi, &mut diag, out),
        cfg,
        initial,
        labels,
        indices,
        probe,
    )
}

/// `exp(-i H dt)` for Hermitian `H`.
fn unitary_step(h: &DMatrix<C64>, dt: f64) -> DMatrix<C64> {
    let eig = h.clone().symmetric_eigen();
    let n = h.nrows();
    let phases = DVector::from_iterator(
        n,
        eig.eigenvalues.iter().map(|&lambda| C64::from_polar(1.0, -lambda * dt)),
    );
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= phases[j];
    }
    scaled * u.adjoint()
}

/// Piecewise-constant exponential propagation with `H` sampled at each step midpoint.
pub fn oracle_evolve(model: &Model, cfg: &IntegratorConfig, initial: &StateVector) -> Result<Trajectory> {
    cfg.validate()?;
    model.pulse().validate_window(cfg.t_start, cfg.t_end)?;
    let dim = model.dim();
    if dim > ORACLE_MAX_DIM {
        return Err(Error::BasisTooLarge { n_atoms: model.basis().n_atoms(), cap: 6 });
    }
    check_initial(dim, initial)?;
    let (labels, indices) = all_columns(model);
    let (n_steps, h) = cfg.step_plan();
    let steps = sample_steps(n_steps, cfg.samples);
    let mut rec = Recorder::new(indices, steps.len());

    let mut psi = DVector::from_vec(initial.amplitudes.clone());
    let mut next_sample = 0;
    for step in 0..=n_steps {
        let t = cfg.t_start + step as f64 * h;
        if next_sample < steps.len() && steps[next_sample] == step {
            rec.record(t, psi.as_slice(), h)?;
            next_sample += 1;
        }
        if step == n_steps {
            break;
        }
        let frame = model.hamiltonian(t + 0.5 * h);
        psi = unitary_step(&frame.matrix, h) * psi;
    }

    Ok(Trajectory {
        times: rec.times,
        labels,
        indices: rec.indices,
        populations: rec.populations,
        norms: rec.norms,
        final_state: StateVector::new(psi.as_slice().to_vec(), cfg.t_end),
        dt: h,
    })
}

/// Outcome of [`converge`].
#[derive(Clone, Debug)]
pub struct Converged {
    pub trajectory: Trajectory,
    pub achieved_dt: f64,
    /// `(dt, observable)` for every attempted refinement level.
    pub history: Vec<(f64, f64)>,
}

/// Change in the observable accepted as converged.
pub const CONVERGENCE_TOL: f64 = 1e-6;

/// Halves `dt` until `observable(final state)` changes by less than
/// [`CONVERGENCE_TOL`] between successive refinements.
///
/// A level that diverges counts as unconverged and is refined further.
pub fn converge<F>(
    model: &Model,
    cfg: &IntegratorConfig,
    initial: &StateVector,
    observable: F,
) -> Result<Converged>
where
    F: Fn(&StateVector) -> f64,
{
    if cfg.convergence_halvings == 0 {
        return Err(Error::InvalidIntegrator("convergence_halvings must be at least 1".into()));
    }
    let mut history = Vec::new();
    let mut previous: Option<f64> = None;
    let mut dt = cfg.dt;
    let mut last_change = f64::INFINITY;
    for _ in 0..=cfg.convergence_halvings {
        let run_cfg = cfg.clone().with_dt(dt);
        match evolve(model, &run_cfg, initial) {
            Ok(traj) => {
                let value = observable(&traj.final_state);
                history.push((traj.dt, value));
                if let Some(prev) = previous {
                    last_change = (value - prev).abs();
                    if last_change < CONVERGENCE_TOL {
                        let achieved_dt = traj.dt;
                        return Ok(Converged { trajectory: traj, achieved_dt, history });
                    }
                }
                previous = Some(value);
            }
            Err(Error::IntegrationDiverged { .. }) => {
                history.push((dt, f64::NAN));
                previous = None;
            }
            Err(e) => return Err(e),
        }
        dt *= 0.5;
    }
    Err(Error::NotConverged {
        halvings: cfg.convergence_halvings,
        last_change,
        dt: dt * 2.0,
        history,
    })
}
