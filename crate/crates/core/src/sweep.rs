//! Two-dimensional (chirp rate, peak Rabi frequency) grids of full runs.

use std::collections::{HashMap, VecDeque};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::resonance_time;
use crate::error::{Error, Result};
use crate::format::sig9;
use crate::model::{Model, ModelSettings, PulseSpec, SystemSpec};
use crate::observe::{ghz_fidelity, w_fidelity};
use crate::propagate::{evolve_recording, IntegratorConfig, StateVector};

/// Norm tolerance a cell must meet before it is accepted.
pub const CELL_NORM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Chirp switched off at the per-cell resonance time.
    Ghz,
    /// Chirp left on for the whole window.
    W,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Ghz => "ghz",
            Protocol::W => "w",
        }
    }
}

/// `steps` evenly spaced values from `min` to `max` inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl AxisRange {
    pub fn new(min: f64, max: f64, steps: usize) -> Self {
        Self { min, max, steps }
    }

    pub fn values(&self) -> Vec<f64> {
        let n = self.steps;
        (0..n)
            .map(|k| if k + 1 == n { self.max } else { self.min + (self.max - self.min) * k as f64 / (n - 1) as f64 })
            .collect()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::InvalidGrid(format!("{name} needs at least 2 steps, got {}", self.steps)));
        }
        if !self.min.is_finite() || !self.max.is_finite() || self.min == self.max {
            return Err(Error::InvalidGrid(format!("{name} range [{}, {}] is degenerate", self.min, self.max)));
        }
        Ok(())
    }
}

/// A grid over the common chirp rate `α = α1 = α2` and common peak Rabi
/// frequency `Ω0 = Ω01 = Ω02`. All other parameters come from `system` and
/// `pulse`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub alpha: AxisRange,
    pub omega: AxisRange,
    pub system: SystemSpec,
    pub pulse: PulseSpec,
    pub protocol: Protocol,
    #[serde(default)]
    pub settings: ModelSettings,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        self.alpha.validate("alpha")?;
        self.omega.validate("omega")?;
        self.system.validate()?;
        if self.system.n_atoms < 2 {
            return Err(Error::EntanglementUndefined(self.system.n_atoms));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.alpha.steps * self.omega.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pulse for one cell. Under the GHZ protocol the chirp is switched off at
    /// the resonance time; a zero chirp rate has no resonance and nothing to
    /// switch off.
    pub fn cell_pulse(&self, alpha: f64, omega: f64) -> Result<PulseSpec> {
        let mut p = self.pulse.clone();
        p.alpha1 = alpha;
        p.alpha2 = alpha;
        p.omega01 = omega;
        p.omega02 = omega;
        p.chirp_off_time = match self.protocol {
            Protocol::W => None,
            Protocol::Ghz => match resonance_time(&self.system, &p) {
                Ok(t) => Some(t),
                Err(Error::NoCrossing(_)) => None,
                Err(e) => return Err(e),
            },
        };
        Ok(p)
    }
}

/// Final-state quantities of one grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub fidelity: f64,
    /// `P_g..g - P_r..r` for GHZ, total single-ground population for W.
    pub metric: f64,
    pub norm: f64,
    pub single_ground: Vec<f64>,
    pub achieved_dt: f64,
}

impl CellResult {
    fn failed(n_atoms: usize) -> Self {
        Self {
            fidelity: f64::NAN,
            metric: f64::NAN,
            norm: f64::NAN,
            single_ground: vec![f64::NAN; n_atoms],
            achieved_dt: f64::NAN,
        }
    }
}

/// Runs one cell from the all-ground state, halving `dt` (at most
/// `cfg.convergence_halvings` times) until the norm stays within
/// [`CELL_NORM_TOL`].
pub fn run_cell(grid: &SweepGrid, cfg: &IntegratorConfig, alpha: f64, omega: f64) -> Result<CellResult> {
    let pulse = grid.cell_pulse(alpha, omega)?;
    let model = Model::with_settings(grid.system.clone(), pulse, grid.settings)?;
    let basis = model.basis().clone();
    let singles = basis.single_ground_indices();
    let mut indices = vec![basis.ground_index(), basis.rydberg_index()];
    indices.extend(&singles);
    let labels = indices.iter().map(|&k| basis.state(k).label()).collect::<Vec<_>>();
    let initial = StateVector::basis(model.dim(), basis.ground_index(), cfg.t_start);

    let mut dt = cfg.dt;
    let mut last_err = None;
    for _ in 0..=cfg.convergence_halvings {
        let run_cfg = cfg.clone().with_dt(dt);
        match evolve_recording(&model, &run_cfg, &initial, labels.clone(), indices.clone()) {
            Ok(traj) if traj.max_norm_drift() <= CELL_NORM_TOL => {
                let psi = &traj.final_state;
                let (fidelity, metric) = match grid.protocol {
                    Protocol::Ghz => (
                        ghz_fidelity(&basis, psi)?,
                        psi.population(basis.ground_index()) - psi.population(basis.rydberg_index()),
                    ),
                    Protocol::W => (w_fidelity(&basis, psi)?, singles.iter().map(|&k| psi.population(k)).sum()),
                };
                return Ok(CellResult {
                    fidelity,
                    metric,
                    norm: psi.norm(),
                    single_ground: singles.iter().map(|&k| psi.population(k)).collect(),
                    achieved_dt: traj.dt,
                });
            }
            Ok(traj) => {
                last_err = Some(Error::IntegrationDiverged {
                    drift: traj.max_norm_drift(),
                    time: cfg.t_end,
                    dt: traj.dt,
                })
            }
            Err(e @ Error::IntegrationDiverged { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
        dt *= 0.5;
    }
    Err(last_err.expect("at least one attempt"))
}

/// A cell that could not be computed.
#[derive(Clone, Debug, Serialize)]
pub struct CellFailure {
    pub alpha: f64,
    pub omega: f64,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepMetadata {
    pub protocol: Protocol,
    pub angular_convention: &'static str,
    pub rabi_coupling: &'static str,
    pub dt: f64,
    pub window: (f64, f64),
    pub alpha: AxisRange,
    pub omega: AxisRange,
    pub config_hash: String,
    pub failed_cells: usize,
}

/// Grid-ordered sweep output; cell `(i, j)` is `alphas[i]`, `omegas[j]`.
#[derive(Clone, Debug)]
pub struct SweepResult {
    pub alphas: Vec<f64>,
    pub omegas: Vec<f64>,
    pub protocol: Protocol,
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
    pub metadata: SweepMetadata,
}

/// SHA-256 over the canonical JSON of the grid and integrator settings.
pub fn config_hash(grid: &SweepGrid, cfg: &IntegratorConfig) -> Result<String> {
    let bytes = serde_json::to_vec(&(grid, cfg))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Runs every cell on a pool of `workers` threads. Output order follows the
/// grid, never completion order, so results are identical for any worker
/// count.
pub fn run_sweep(grid: &SweepGrid, cfg: &IntegratorConfig, workers: usize) -> Result<SweepResult> {
    grid.validate()?;
    cfg.validate()?;
    grid.pulse.validate()?;
    let alphas = grid.alpha.values();
    let omegas = grid.omega.values();
    let coords: Vec<(f64, f64)> = alphas.iter().flat_map(|&a| omegas.iter().map(move |&o| (a, o))).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Result<CellResult>> =
        pool.install(|| coords.par_iter().map(|&(a, o)| run_cell(grid, cfg, a, o)).collect());

    let mut cells = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for ((alpha, omega), outcome) in coords.iter().zip(outcomes) {
        match outcome {
            Ok(c) => cells.push(c),
            Err(e) => {
                failures.push(CellFailure { alpha: *alpha, omega: *omega, message: e.to_string() });
                cells.push(CellResult::failed(grid.system.n_atoms));
            }
        }
    }
    let metadata = SweepMetadata {
        protocol: grid.protocol,
        angular_convention: grid.settings.angular_convention.name(),
        rabi_coupling: grid.settings.rabi_coupling.name(),
        dt: cfg.dt,
        window: (cfg.t_start, cfg.t_end),
        alpha: grid.alpha,
        omega: grid.omega,
        config_hash: config_hash(grid, cfg)?,
        failed_cells: failures.len(),
    };
    Ok(SweepResult { alphas, omegas, protocol: grid.protocol, cells, failures, metadata })
}

impl SweepResult {
    pub fn shape(&self) -> (usize, usize) {
        (self.alphas.len(), self.omegas.len())
    }

    pub fn cell(&self, i: usize, j: usize) -> &CellResult {
        &self.cells[i * self.omegas.len() + j]
    }

    pub fn fidelity(&self, i: usize, j: usize) -> f64 {
        self.cell(i, j).fidelity
    }

    /// Field of one per-cell quantity in grid order.
    pub fn field<F: Fn(&CellResult) -> f64>(&self, f: F) -> Vec<Vec<f64>> {
        (0..self.alphas.len()).map(|i| (0..self.omegas.len()).map(|j| f(self.cell(i, j))).collect()).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "alpha,omega,fidelity,pop_diff_or_sum,norm")?;
        for (i, a) in self.alphas.iter().enumerate() {
            for (j, o) in self.omegas.iter().enumerate() {
                let c = self.cell(i, j);
                writeln!(w, "{},{},{},{},{}", sig9(*a), sig9(*o), sig9(c.fidelity), sig9(c.metric), sig9(c.norm))?;
            }
        }
        Ok(())
    }

    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "metadata": self.metadata,
            "failures": self.failures,
        })
    }

    /// Grid square `(i, j)` spanning `alphas[i..=i+1]`, `omegas[j..=j+1]` that
    /// contains the point, if any.
    pub fn square_containing(&self, alpha: f64, omega: f64) -> Option<(usize, usize)> {
        Some((bracket(&self.alphas, alpha)?, bracket(&self.omegas, omega)?))
    }
}

fn bracket(axis: &[f64], x: f64) -> Option<usize> {
    (0..axis.len().saturating_sub(1)).find(|&k| {
        let (a, b) = (axis[k].min(axis[k + 1]), axis[k].max(axis[k + 1]));
        x >= a && x <= b
    })
}

/// Grid nodes 4-connected to `seed` on which `inside` holds.
pub fn connected_region<F: Fn(usize, usize) -> bool>(shape: (usize, usize), seed: (usize, usize), inside: F) -> Vec<(usize, usize)> {
    let (ni, nj) = shape;
    if seed.0 >= ni || seed.1 >= nj || !inside(seed.0, seed.1) {
        return Vec::new();
    }
    let mut seen = vec![false; ni * nj];
    let mut queue = VecDeque::from([seed]);
    seen[seed.0 * nj + seed.1] = true;
    let mut region = Vec::new();
    while let Some((i, j)) = queue.pop_front() {
        region.push((i, j));
        let mut visit = |a: usize, b: usize| {
            if !seen[a * nj + b] && inside(a, b) {
                seen[a * nj + b] = true;
                queue.push_back((a, b));
            }
        };
        if i > 0 {
            visit(i - 1, j);
        }
        if i + 1 < ni {
            visit(i + 1, j);
        }
        if j > 0 {
            visit(i, j - 1);
        }
        if j + 1 < nj {
            visit(i, j + 1);
        }
    }
    region.sort_unstable();
    region
}

/// Contour lines in `(alpha, omega)` coordinates plus the grid squares they cross.
#[derive(Clone, Debug, Default)]
pub struct Contour {
    pub polylines: Vec<Vec<[f64; 2]>>,
    pub squares: Vec<(usize, usize)>,
}

/// Threshold on the largest pairwise single-ground population difference.
pub const EQUAL_POPULATION_THRESHOLD: f64 = 0.01;

/// Marching-squares contour where the largest pairwise difference among the
/// single-ground populations equals [`EQUAL_POPULATION_THRESHOLD`].
pub fn equal_population_contour(result: &SweepResult) -> Result<Contour> {
    if result.protocol != Protocol::W {
        return Err(Error::WrongProtocol("equal-population contour needs a W sweep".into()));
    }
    let field = result.field(|c| {
        let max = c.single_ground.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = c.single_ground.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min - EQUAL_POPULATION_THRESHOLD
    });
    Ok(marching_squares(&result.alphas, &result.omegas, &field))
}

/// Zero level set of `field[i][j]` sampled at `(xs[i], ys[j])`. Squares with a
/// NaN corner are skipped; saddles are split by the sign of the corner mean.
pub fn marching_squares(xs: &[f64], ys: &[f64], field: &[Vec<f64>]) -> Contour {
    // an edge is identified by its lower node and direction (0 along x, 1 along y)
    type EdgeKey = (usize, usize, u8);
    let point = |(i, j, d): EdgeKey| -> [f64; 2] {
        let (i2, j2) = if d == 0 { (i + 1, j) } else { (i, j + 1) };
        let (f1, f2) = (field[i][j], field[i2][j2]);
        let t = if f1 == f2 { 0.5 } else { f1 / (f1 - f2) };
        [xs[i] + t * (xs[i2] - xs[i]), ys[j] + t * (ys[j2] - ys[j])]
    };

    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    let mut squares = Vec::new();
    for i in 0..xs.len().saturating_sub(1) {
        for j in 0..ys.len().saturating_sub(1) {
            // corners counter-clockwise from (i, j)
            let v = [field[i][j], field[i + 1][j], field[i + 1][j + 1], field[i][j + 1]];
            if v.iter().any(|x| x.is_nan()) {
                continue;
            }
            let edges: [EdgeKey; 4] = [(i, j, 0), (i + 1, j, 1), (i, j + 1, 0), (i, j, 1)];
            let above: Vec<bool> = v.iter().map(|&x| x > 0.0).collect();
            let crossed: Vec<usize> = (0..4).filter(|&k| above[k] != above[(k + 1) % 4]).collect();
            match crossed.len() {
                2 => segments.push((edges[crossed[0]], edges[crossed[1]])),
                4 => {
                    let center_above = v.iter().sum::<f64>() / 4.0 > 0.0;
                    // pair each edge with the neighbour that keeps the center's side connected
                    if center_above == above[0] {
                        segments.push((edges[0], edges[1]));
                        segments.push((edges[2], edges[3]));
                    } else {
                        segments.push((edges[3], edges[0]));
                        segments.push((edges[1], edges[2]));
                    }
                }
                _ => continue,
            }
            squares.push((i, j));
        }
    }

    // chain segments into polylines through shared edges
    let mut by_edge: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        by_edge.entry(*a).or_default().push(k);
        by_edge.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut chain: VecDeque<EdgeKey> = VecDeque::from([segments[start].0, segments[start].1]);
        for forward in [true, false] {
            loop {
                let end = if forward { *chain.back().unwrap() } else { *chain.front().unwrap() };
                let next = by_edge[&end].iter().copied().find(|&k| !used[k]);
                let Some(k) = next else { break };
                used[k] = true;
                let (a, b) = segments[k];
                let other = if a == end { b } else { a };
                if forward {
                    chain.push_back(other);
                } else {
                    chain.push_front(other);
                }
            }
        }
        polylines.push(chain.into_iter().map(point).collect());
    }
    Contour { polylines, squares }
}
