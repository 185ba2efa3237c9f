//! Physical system, laser pulses and the collective Hamiltonian.
//!
//! Every atom is a three-level ladder `g -> e -> r`. The collective basis is
//! the tensor product of the single-atom levels, ordered lexicographically
//! with `g < e < r` and atom 1 the most significant digit, so that for three
//! atoms `ggg` has index 0, `gge` index 1 and `rrr` index 26.
//!
//! Frequencies are expressed in MHz-equivalent units, times in microseconds
//! and chirp rates in MHz/us. How the quoted numbers enter the equations of
//! motion is controlled by [`AngularConvention`].

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of atoms accepted by [`enumerate_basis`].
pub const MAX_ATOMS: usize = 8;

/// Single-atom level of the ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    G,
    E,
    R,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::G, Level::E, Level::R];

    fn digit(self) -> usize {
        match self {
            Level::G => 0,
            Level::E => 1,
            Level::R => 2,
        }
    }

    fn from_digit(d: usize) -> Level {
        Level::ALL[d]
    }

    pub fn symbol(self) -> char {
        match self {
            Level::G => 'g',
            Level::E => 'e',
            Level::R => 'r',
        }
    }
}

/// A collective product state such as `|grr>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisState {
    levels: Vec<Level>,
}

impl BasisState {
    pub fn new(levels: Vec<Level>) -> Self {
        Self { levels }
    }

    /// All atoms in the same level.
    pub fn uniform(n_atoms: usize, level: Level) -> Self {
        Self { levels: vec![level; n_atoms] }
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn n_atoms(&self) -> usize {
        self.levels.len()
    }

    pub fn count(&self, level: Level) -> usize {
        self.levels.iter().filter(|&&l| l == level).count()
    }

    pub fn label(&self) -> String {
        self.levels.iter().map(|l| l.symbol()).collect()
    }

    /// Same state with atom `atom` moved to `level`.
    pub fn with_level(&self, atom: usize, level: Level) -> Self {
        let mut levels = self.levels.clone();
        levels[atom] = level;
        Self { levels }
    }
}

impl fmt::Display for BasisState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|{}>", self.label())
    }
}

impl FromStr for BasisState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_start_matches('|').trim_end_matches('>');
        if s.is_empty() {
            return Err(Error::InvalidSystem("empty basis-state label".into()));
        }
        let levels = s
            .chars()
            .map(|c| match c {
                'g' => Ok(Level::G),
                'e' => Ok(Level::E),
                'r' => Ok(Level::R),
                other => Err(Error::InvalidSystem(format!(
                    "unknown level '{other}' in basis-state label"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { levels })
    }
}

/// All `3^N` collective states in the fixed lexicographic order.
#[derive(Clone, Debug)]
pub struct CollectiveBasis {
    n_atoms: usize,
    states: Vec<BasisState>,
}

impl CollectiveBasis {
    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[BasisState] {
        &self.states
    }

    pub fn state(&self, index: usize) -> &BasisState {
        &self.states[index]
    }

    /// Index of `state`, or `None` if it has the wrong number of atoms.
    pub fn index_of(&self, state: &BasisState) -> Option<usize> {
        if state.n_atoms() != self.n_atoms {
            return None;
        }
        Some(state.levels.iter().fold(0, |acc, l| acc * 3 + l.digit()))
    }

    pub fn labels(&self) -> Vec<String> {
        self.states.iter().map(BasisState::label).collect()
    }

    /// Index of `|g...g>` (always 0).
    pub fn ground_index(&self) -> usize {
        0
    }

    /// Index of `|r...r>` (always the last state).
    pub fn rydberg_index(&self) -> usize {
        self.dim() - 1
    }

    /// States with exactly one atom in `g` and every other atom in `r`,
    /// ordered by the position of the ground-state atom.
    pub fn single_ground_indices(&self) -> Vec<usize> {
        (0..self.n_atoms)
            .map(|k| {
                let s = BasisState::uniform(self.n_atoms, Level::R).with_level(k, Level::G);
                self.index_of(&s).expect("state built with the basis atom count")
            })
            .collect()
    }
}

/// Enumerates the collective basis with the default cap of [`MAX_ATOMS`].
pub fn enumerate_basis(n_atoms: usize) -> Result<CollectiveBasis> {
    enumerate_basis_capped(n_atoms, MAX_ATOMS)
}

pub fn enumerate_basis_capped(n_atoms: usize, cap: usize) -> Result<CollectiveBasis> {
    if n_atoms == 0 {
        return Err(Error::InvalidSystem("n_atoms must be at least 1".into()));
    }
    if n_atoms > cap {
        return Err(Error::BasisTooLarge { n_atoms, cap });
    }
    let dim = 3usize.pow(n_atoms as u32);
    let states = (0..dim)
        .map(|mut idx| {
            let mut levels = vec![Level::G; n_atoms];
            for slot in levels.iter_mut().rev() {
                *slot = Level::from_digit(idx % 3);
                idx /= 3;
            }
            BasisState { levels }
        })
        .collect();
    Ok(CollectiveBasis { n_atoms, states })
}

/// How quoted frequencies are inserted into the equations of motion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngularConvention {
    /// Quoted MHz values are used directly as angular frequencies in rad/us.
    #[default]
    Direct,
    /// Quoted values are cyclic; every frequency and chirp rate is scaled by 2π.
    TwoPi,
}

impl AngularConvention {
    pub fn factor(self) -> f64 {
        match self {
            AngularConvention::Direct => 1.0,
            AngularConvention::TwoPi => std::f64::consts::TAU,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AngularConvention::Direct => "direct",
            AngularConvention::TwoPi => "two_pi",
        }
    }
}

impl FromStr for AngularConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(AngularConvention::Direct),
            "two_pi" => Ok(AngularConvention::TwoPi),
            other => Err(Error::Config(format!(
                "unknown convention '{other}' (expected direct or two_pi)"
            ))),
        }
    }
}

/// Off-diagonal weight of the laser couplings.
///
/// `Full` puts `Ω(t)` on the off-diagonal, as in the truncated 27x27 matrix;
/// `Half` uses the rotating-wave `Ω(t)/2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RabiCoupling {
    #[default]
    Full,
    Half,
}

impl RabiCoupling {
    pub fn factor(self) -> f64 {
        match self {
            RabiCoupling::Full => 1.0,
            RabiCoupling::Half => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RabiCoupling::Full => "full",
            RabiCoupling::Half => "half",
        }
    }
}

/// Atom count, pair interactions and the two detunings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub n_atoms: usize,
    /// Symmetric pair-interaction matrix with zero diagonal.
    pub v: Vec<Vec<f64>>,
    /// One-photon detuning Δ.
    pub delta1: f64,
    /// Two-photon detuning δ.
    pub delta2: f64,
}

impl SystemSpec {
    pub fn new(v: Vec<Vec<f64>>, delta1: f64, delta2: f64) -> Result<Self> {
        let spec = Self { n_atoms: v.len(), v, delta1, delta2 };
        spec.validate()?;
        Ok(spec)
    }

    /// Three-atom chain with `V21 = V32 = v_nn` and `V31 = v_ends`.
    pub fn three_atom_chain(delta1: f64, delta2: f64, v_nn: f64, v_ends: f64) -> Self {
        let v = vec![
            vec![0.0, v_nn, v_ends],
            vec![v_nn, 0.0, v_nn],
            vec![v_ends, v_nn, 0.0],
        ];
        Self { n_atoms: 3, v, delta1, delta2 }
    }

    /// Non-interacting atoms.
    pub fn free(n_atoms: usize, delta1: f64, delta2: f64) -> Self {
        Self { n_atoms, v: vec![vec![0.0; n_atoms]; n_atoms], delta1, delta2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_atoms == 0 {
            return Err(Error::InvalidSystem("n_atoms must be at least 1".into()));
        }
        if self.v.len() != self.n_atoms || self.v.iter().any(|row| row.len() != self.n_atoms) {
            return Err(Error::InvalidSystem(format!(
                "interaction matrix must be {0}x{0}",
                self.n_atoms
            )));
        }
        if !self.delta1.is_finite() || !self.delta2.is_finite() {
            return Err(Error::InvalidSystem("detunings must be finite".into()));
        }
        for i in 0..self.n_atoms {
            if self.v[i][i] != 0.0 {
                return Err(Error::InvalidSystem(format!("v[{i}][{i}] must be zero")));
            }
            for j in 0..self.n_atoms {
                let vij = self.v[i][j];
                if !vij.is_finite() || vij < 0.0 {
                    return Err(Error::InvalidSystem(format!(
                        "v[{i}][{j}] = {vij} must be finite and nonnegative"
                    )));
                }
                if vij != self.v[j][i] {
                    return Err(Error::InvalidSystem(format!(
                        "interaction matrix is not symmetric: v[{i}][{j}] = {vij}, v[{j}][{i}] = {}",
                        self.v[j][i]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Sum of all distinct pair interactions (`V_max` for three atoms).
    pub fn total_interaction(&self) -> f64 {
        let n = self.n_atoms;
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| self.v[i][j]).sum()
    }

    /// Nearest-neighbour interaction `v[0][1]`, or 0 for a single atom.
    pub fn nearest_neighbor(&self) -> f64 {
        if self.n_atoms < 2 {
            0.0
        } else {
            self.v[0][1]
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            n_atoms: self.n_atoms,
            v: self.v.iter().map(|row| row.iter().map(|x| x * factor).collect()).collect(),
            delta1: self.delta1 * factor,
            delta2: self.delta2 * factor,
        }
    }
}

/// Distance measure of an equidistant one-dimensional lattice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeGeometry {
    /// Total chain length `s`; the spacing is `s / (n - 1)`.
    Length(f64),
    /// Lattice spacing `a`.
    Spacing(f64),
}

/// Power-law interactions on an equidistant chain, `V_ij = C / r_ij^p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub c_coeff: f64,
    /// 6 for van der Waals, 3 for dipole-dipole.
    pub exponent: u32,
    pub geometry: LatticeGeometry,
    pub n_atoms: usize,
}

impl LatticeSpec {
    /// Unit spacing with the coefficient chosen so nearest neighbours interact with `v_nn`.
    pub fn from_nearest_neighbor(v_nn: f64, exponent: u32, n_atoms: usize) -> Self {
        Self { c_coeff: v_nn, exponent, geometry: LatticeGeometry::Spacing(1.0), n_atoms }
    }

    pub fn spacing(&self) -> Result<f64> {
        match self.geometry {
            LatticeGeometry::Spacing(a) => Ok(a),
            LatticeGeometry::Length(s) => {
                if self.n_atoms < 2 {
                    return Err(Error::Geometry("lattice length needs at least 2 atoms".into()));
                }
                Ok(s / (self.n_atoms - 1) as f64)
            }
        }
    }
}

/// Pair-interaction matrix of a [`LatticeSpec`].
pub fn lattice_interactions(spec: &LatticeSpec) -> Result<Vec<Vec<f64>>> {
    if spec.n_atoms < 2 {
        return Err(Error::Geometry(format!(
            "a lattice needs at least 2 atoms, got {}",
            spec.n_atoms
        )));
    }
    if spec.exponent != 3 && spec.exponent != 6 {
        return Err(Error::Geometry(format!(
            "interaction exponent must be 3 or 6, got {}",
            spec.exponent
        )));
    }
    let a = spec.spacing()?;
    if !(a > 0.0 && a.is_finite()) || !(spec.c_coeff > 0.0 && spec.c_coeff.is_finite()) {
        return Err(Error::Geometry("spacing and coefficient must be positive".into()));
    }
    let n = spec.n_atoms;
    let mut v = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let r = i.abs_diff(j) as f64 * a;
                v[i][j] = spec.c_coeff / r.powi(spec.exponent as i32);
            }
        }
    }
    Ok(v)
}

/// Which of the two pulses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Beam {
    /// Couples `g <-> e`.
    First,
    /// Couples `e <-> r`.
    Second,
}

/// Two overlapping Gaussian pulses with linear chirps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub omega01: f64,
    pub omega02: f64,
    pub tau0: f64,
    pub t_center: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Both chirps freeze at this time.
    #[serde(default)]
    pub chirp_off_time: Option<f64>,
    /// Duration of a linear ramp of the chirp rate down to zero, starting at
    /// `chirp_off_time`.
    #[serde(default)]
    pub chirp_ramp: f64,
}

impl PulseSpec {
    /// Equal Rabi frequencies and equal chirps on both pulses, `t_c = 3 τ0`.
    pub fn symmetric(omega0: f64, alpha: f64, tau0: f64) -> Self {
        Self {
            omega01: omega0,
            omega02: omega0,
            tau0,
            t_center: 3.0 * tau0,
            alpha1: alpha,
            alpha2: alpha,
            chirp_off_time: None,
            chirp_ramp: 0.0,
        }
    }

    pub fn with_chirp_off(mut self, t_off: f64) -> Self {
        self.chirp_off_time = Some(t_off);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return Err(Error::InvalidPulse(format!("tau0 must be positive, got {}", self.tau0)));
        }
        let finite = [self.omega01, self.omega02, self.t_center, self.alpha1, self.alpha2];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidPulse("pulse parameters must be finite".into()));
        }
        if !(self.chirp_ramp >= 0.0 && self.chirp_ramp.is_finite()) {
            return Err(Error::InvalidPulse("chirp_ramp must be nonnegative".into()));
        }
        if let Some(t) = self.chirp_off_time {
            if !t.is_finite() {
                return Err(Error::InvalidPulse("chirp_off_time must be finite".into()));
            }
        }
        Ok(())
    }

    /// Checks that the chirp turn-off lies inside `[t_start, t_end]`.
    pub fn validate_window(&self, t_start: f64, t_end: f64) -> Result<()> {
        if let Some(t) = self.chirp_off_time {
            if t < t_start || t > t_end {
                return Err(Error::InvalidPulse(format!(
                    "chirp_off_time {t} lies outside the window [{t_start}, {t_end}]"
                )));
            }
        }
        Ok(())
    }

    pub fn peak(&self, beam: Beam) -> f64 {
        match beam {
            Beam::First => self.omega01,
            Beam::Second => self.omega02,
        }
    }

    /// Gaussian envelope value shared by both pulses, normalized to 1 at `t_c`.
    pub fn envelope_shape(&self, t: f64) -> f64 {
        let x = (t - self.t_center) / self.tau0;
        (-0.5 * x * x).exp()
    }

    /// Effective elapsed chirp time: the chirp terms equal `α · chirp_elapsed(t)`.
    ///
    /// Equals `t - t_c` while the chirp is on. After the turn-off time `T` it
    /// stays at `T - t_c` so the instantaneous frequency is continuous. With a
    /// ramp of length `R` the chirp rate falls linearly to zero over
    /// `[T, T + R]` and the value freezes at `T - t_c + R/2`.
    pub fn chirp_elapsed(&self, t: f64) -> f64 {
        let tc = self.t_center;
        match self.chirp_off_time {
            None => t - tc,
            Some(off) if t <= off => t - tc,
            Some(off) => {
                let ramp = self.chirp_ramp;
                if ramp > 0.0 && t < off + ramp {
                    let u = t - off;
                    off - tc + u - u * u / (2.0 * ramp)
                } else {
                    off - tc + 0.5 * ramp
                }
            }
        }
    }

    /// Instantaneous chirp rate multiplier in `[0, 1]`.
    pub fn chirp_rate_factor(&self, t: f64) -> f64 {
        match self.chirp_off_time {
            None => 1.0,
            Some(off) if t <= off => 1.0,
            Some(off) => {
                if self.chirp_ramp > 0.0 && t < off + self.chirp_ramp {
                    1.0 - (t - off) / self.chirp_ramp
                } else {
                    0.0
                }
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            omega01: self.omega01 * factor,
            omega02: self.omega02 * factor,
            alpha1: self.alpha1 * factor,
            alpha2: self.alpha2 * factor,
            ..self.clone()
        }
    }
}

/// `Ω0i · exp(-(t - t_c)^2 / (2 τ0^2))`.
pub fn rabi_envelope(pulse: &PulseSpec, beam: Beam, t: f64) -> f64 {
    pulse.peak(beam) * pulse.envelope_shape(t)
}

/// Single-photon and two-photon diagonal shifts `(ω2(t), ω3(t))`.
pub fn effective_detunings(system: &SystemSpec, pulse: &PulseSpec, t: f64) -> (f64, f64) {
    let s = pulse.chirp_elapsed(t);
    let w2 = system.delta1 - pulse.alpha1 * s;
    let w3 = system.delta2 - (pulse.alpha1 + pulse.alpha2) * s;
    (w2, w3)
}

/// Rydberg-Rydberg shift of a collective state.
///
/// The Hamiltonian sums `V_ij σ_rr σ_rr` over ordered pairs, so every
/// unordered pair of Rydberg atoms contributes `2 V_ij`.
pub fn interaction_shift(state: &BasisState, v: &[Vec<f64>]) -> f64 {
    let levels = state.levels();
    let mut sum = 0.0;
    for i in 0..levels.len() {
        if levels[i] != Level::R {
            continue;
        }
        for j in i + 1..levels.len() {
            if levels[j] == Level::R {
                sum += v[i][j];
            }
        }
    }
    2.0 * sum
}

/// Diagonal energy of a collective state, `n_e ω2 + n_r ω3 + shift`.
pub fn bare_energy(state: &BasisState, system: &SystemSpec, pulse: &PulseSpec, t: f64) -> f64 {
    let (w2, w3) = effective_detunings(system, pulse, t);
    state.count(Level::E) as f64 * w2
        + state.count(Level::R) as f64 * w3
        + interaction_shift(state, &system.v)
}

/// Dense Hamiltonian at one instant.
#[derive(Clone, Debug)]
pub struct HamiltonianFrame {
    pub time: f64,
    pub matrix: DMatrix<C64>,
}

impl HamiltonianFrame {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `max |H - H^†|` over all entries.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }
}

/// Assembles the Hamiltonian with the default [`RabiCoupling`].
pub fn build_hamiltonian(system: &SystemSpec, pulse: &PulseSpec, t: f64) -> Result<HamiltonianFrame> {
    Ok(Model::new(system.clone(), pulse.clone())?.hamiltonian(t))
}

/// A laser coupling between two basis states that differ on one atom.
#[derive(Clone, Copy, Debug)]
struct Edge {
    lo: usize,
    hi: usize,
    beam: Beam,
}

/// Physics settings that are not part of the quoted parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    #[serde(default)]
    pub angular_convention: AngularConvention,
    #[serde(default)]
    pub rabi_coupling: RabiCoupling,
}

/// A system and pulse pair converted to angular units, with the basis
/// structure precomputed for fast Hamiltonian application.
#[derive(Clone, Debug)]
pub struct Model {
    settings: ModelSettings,
    /// Parameters as quoted.
    system: SystemSpec,
    pulse: PulseSpec,
    /// Parameters in the units of the equations of motion.
    system_eom: SystemSpec,
    pulse_eom: PulseSpec,
    basis: CollectiveBasis,
    n_e: Vec<f64>,
    n_r: Vec<f64>,
    shift: Vec<f64>,
    edges: Vec<Edge>,
}

impl Model {
    pub fn new(system: SystemSpec, pulse: PulseSpec) -> Result<Self> {
        Self::with_settings(system, pulse, ModelSettings::default())
    }

    pub fn with_settings(system: SystemSpec, pulse: PulseSpec, settings: ModelSettings) -> Result<Self> {
        system.validate()?;
        pulse.validate()?;
        let basis = enumerate_basis(system.n_atoms)?;
        let factor = settings.angular_convention.factor();
        let system_eom = system.scaled(factor);
        let pulse_eom = pulse.scaled(factor);

        let n_e = basis.states().iter().map(|s| s.count(Level::E) as f64).collect();
        let n_r = basis.states().iter().map(|s| s.count(Level::R) as f64).collect();
        let shift = basis
            .states()
            .iter()
            .map(|s| interaction_shift(s, &system_eom.v))
            .collect();

        let mut edges = Vec::new();
        for (lo, state) in basis.states().iter().enumerate() {
            for atom in 0..basis.n_atoms() {
                let (to, beam) = match state.levels()[atom] {
                    Level::G => (Level::E, Beam::First),
                    Level::E => (Level::R, Beam::Second),
                    Level::R => continue,
                };
                let hi = basis
                    .index_of(&state.with_level(atom, to))
                    .expect("neighbour lies in the same basis");
                edges.push(Edge { lo, hi, beam });
            }
        }

        Ok(Self {
            settings,
            system,
            pulse,
            system_eom,
            pulse_eom,
            basis,
            n_e,
            n_r,
            shift,
            edges,
        })
    }

    pub fn settings(&self) -> ModelSettings {
        self.settings
    }

    pub fn system(&self) -> &SystemSpec {
        &self.system
    }

    pub fn pulse(&self) -> &PulseSpec {
        &self.pulse
    }

    pub fn basis(&self) -> &CollectiveBasis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Diagonal of `H(t)` in equation-of-motion units.
    pub fn diagonal(&self, t: f64, out: &mut [f64]) {
        let (w2, w3) = effective_detunings(&self.system_eom, &self.pulse_eom, t);
        for (k, d) in out.iter_mut().enumerate() {
            *d = self.n_e[k] * w2 + self.n_r[k] * w3 + self.shift[k];
        }
    }

    /// Off-diagonal couplings `(g<->e, e<->r)` at time `t`.
    pub fn couplings(&self, t: f64) -> (f64, f64) {
        let w = self.settings.rabi_coupling.factor() * self.pulse_eom.envelope_shape(t);
        (w * self.pulse_eom.omega01, w * self.pulse_eom.omega02)
    }

    /// `out = -i H(t) psi`.
    pub fn derivative(&self, t: f64, psi: &[C64], diag: &mut [f64], out: &mut [C64]) {
        self.diagonal(t, diag);
        for k in 0..psi.len() {
            out[k] = psi[k] * diag[k];
        }
        let (c1, c2) = self.couplings(t);
        for e in &self.edges {
            let c = match e.beam {
                Beam::First => c1,
                Beam::Second => c2,
            };
            out[e.lo] += psi[e.hi] * c;
            out[e.hi] += psi[e.lo] * c;
        }
        for o in out.iter_mut() {
            *o = C64::new(o.im, -o.re);
        }
    }

    /// Dense `H(t)`.
    pub fn hamiltonian(&self, t: f64) -> HamiltonianFrame {
        let n = self.dim();
        let mut diag = vec![0.0; n];
        self.diagonal(t, &mut diag);
        let mut m = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
        for (k, d) in diag.iter().enumerate() {
            m[(k, k)] = C64::new(*d, 0.0);
        }
        let (c1, c2) = self.couplings(t);
        for e in &self.edges {
            let c = match e.beam {
                Beam::First => c1,
                Beam::Second => c2,
            };
            m[(e.lo, e.hi)] = C64::new(c, 0.0);
            m[(e.hi, e.lo)] = C64::new(c, 0.0);
        }
        HamiltonianFrame { time: t, matrix: m }
    }

    /// Same model with another pulse (keeps the settings and basis).
    pub fn with_pulse(&self, pulse: PulseSpec) -> Result<Self> {
        Self::with_settings(self.system.clone(), pulse, self.settings)
    }
}
