//! Analytic layer: bare-state spectra, crossing times, the effective
//! two-level reduction and its dressed-state mixing angle.

use std::io::Write;

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::format::sig9;
use crate::model::{
    bare_energy, enumerate_basis, interaction_shift, AngularConvention, BasisState, Level, PulseSpec,
    SystemSpec,
};
use crate::propagate::{integrate_fixed, IntegratorConfig, StateVector, Trajectory};

/// Collective states sharing one bare-energy curve.
#[derive(Clone, Debug, Serialize)]
pub struct EnergyClass {
    pub representative: String,
    pub members: Vec<String>,
    pub degeneracy: usize,
    pub n_e: usize,
    pub n_r: usize,
}

impl EnergyClass {
    pub fn column_name(&self) -> String {
        format!("E_{}", self.members.join("_"))
    }
}

/// Groups the basis states whose bare energies coincide at every probe time.
///
/// Classes are ordered by Rydberg count, then excited count, then the basis
/// index of their first member; for three atoms this reproduces the usual
/// `E_1 ... E_12` listing.
pub fn energy_classes(system: &SystemSpec, pulse: &PulseSpec, probe_times: &[f64]) -> Result<Vec<EnergyClass>> {
    let basis = enumerate_basis(system.n_atoms)?;
    let energies: Vec<Vec<f64>> = basis
        .states()
        .iter()
        .map(|s| probe_times.iter().map(|&t| bare_energy(s, system, pulse, t)).collect())
        .collect();
    let scale = energies.iter().flatten().fold(1.0f64, |m, e| m.max(e.abs()));
    let tol = 1e-12 * scale;

    let mut groups: Vec<Vec<usize>> = Vec::new();
    for k in 0..basis.dim() {
        let found = groups.iter_mut().find(|g| {
            let rep = &energies[g[0]];
            rep.iter().zip(&energies[k]).all(|(a, b)| (a - b).abs() <= tol)
        });
        match found {
            Some(g) => g.push(k),
            None => groups.push(vec![k]),
        }
    }
    let mut classes: Vec<(usize, EnergyClass)> = groups
        .into_iter()
        .map(|g| {
            let first = basis.state(g[0]);
            let class = EnergyClass {
                representative: first.label(),
                members: g.iter().map(|&k| basis.state(k).label()).collect(),
                degeneracy: g.len(),
                n_e: first.count(Level::E),
                n_r: first.count(Level::R),
            };
            (g[0], class)
        })
        .collect();
    classes.sort_by_key(|(first, c)| (c.n_r, c.n_e, *first));
    Ok(classes.into_iter().map(|(_, c)| c).collect())
}

/// Default probe times: window edges and the pulse center.
fn probe_times(pulse: &PulseSpec, times: &[f64]) -> Vec<f64> {
    let mut probes = vec![pulse.t_center];
    if let (Some(&a), Some(&b)) = (times.first(), times.last()) {
        probes.push(a);
        probes.push(b);
        probes.push(0.37 * a + 0.63 * b);
    }
    probes
}

/// Bare energies of one representative per degeneracy class over a time grid.
#[derive(Clone, Debug)]
pub struct SpectrumTrace {
    pub times: Vec<f64>,
    pub classes: Vec<EnergyClass>,
    /// `energies[class][sample]`.
    pub energies: Vec<Vec<f64>>,
}

impl SpectrumTrace {
    pub fn series(&self, representative: &str) -> Option<&[f64]> {
        let k = self.classes.iter().position(|c| c.members.iter().any(|m| m == representative))?;
        Some(&self.energies[k])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("t");
        for c in &self.classes {
            header.push(',');
            header.push_str(&c.column_name());
        }
        writeln!(w, "{header}")?;
        for (i, t) in self.times.iter().enumerate() {
            let mut line = sig9(*t);
            for series in &self.energies {
                line.push(',');
                line.push_str(&sig9(series[i]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Degeneracy annotations for the sidecar JSON.
    pub fn annotations(&self) -> Vec<serde_json::Value> {
        self.classes
            .iter()
            .map(|c| {
                serde_json::json!({
                    "column": c.column_name(),
                    "representative": c.representative,
                    "members": c.members,
                    "degeneracy": c.degeneracy,
                })
            })
            .collect()
    }
}

pub fn spectrum_trace(system: &SystemSpec, pulse: &PulseSpec, times: &[f64]) -> Result<SpectrumTrace> {
    let classes = energy_classes(system, pulse, &probe_times(pulse, times))?;
    let energies = classes
        .iter()
        .map(|c| {
            let s: BasisState = c.representative.parse()?;
            Ok(times.iter().map(|&t| bare_energy(&s, system, pulse, t)).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(SpectrumTrace { times: times.to_vec(), classes, energies })
}

/// Time at which the all-Rydberg bare energy crosses the ground state,
/// `t_c + (N δ + 2 Σ V_ij) / (N (α1 + α2))`, ignoring any chirp turn-off.
pub fn resonance_time(system: &SystemSpec, pulse: &PulseSpec) -> Result<f64> {
    let rate = pulse.alpha1 + pulse.alpha2;
    if rate == 0.0 {
        return Err(Error::NoCrossing("alpha1 + alpha2 = 0: the Rydberg level never moves".into()));
    }
    let n = system.n_atoms as f64;
    Ok(pulse.t_center + (n * system.delta2 + 2.0 * system.total_interaction()) / (n * rate))
}

/// Times in `[t_start, t_end]` at which `bare_energy(state, t) = 0`.
///
/// The energy is linear while the chirp is on, quadratic during a turn-off
/// ramp and constant afterwards. A segment on which the energy vanishes
/// identically contributes no crossings.
pub fn crossing_times(
    system: &SystemSpec,
    pulse: &PulseSpec,
    state: &BasisState,
    window: (f64, f64),
) -> Result<Vec<f64>> {
    if state.n_atoms() != system.n_atoms {
        return Err(Error::DimensionMismatch { expected: system.n_atoms, got: state.n_atoms() });
    }
    let (t_start, t_end) = window;
    let n_e = state.count(Level::E) as f64;
    let n_r = state.count(Level::R) as f64;
    let e0 = n_e * system.delta1 + n_r * system.delta2 + interaction_shift(state, &system.v);
    let slope = -(n_e * pulse.alpha1 + n_r * (pulse.alpha1 + pulse.alpha2));
    let tc = pulse.t_center;
    let mut roots = Vec::new();
    let push = |roots: &mut Vec<f64>, t: f64, lo: f64, hi: f64| {
        if t >= lo && t <= hi && t >= t_start && t <= t_end {
            roots.push(t);
        }
    };

    let chirp_end = pulse.chirp_off_time.unwrap_or(f64::INFINITY);
    if slope != 0.0 {
        push(&mut roots, tc - e0 / slope, f64::NEG_INFINITY, chirp_end);
    }
    if let Some(off) = pulse.chirp_off_time {
        let ramp = pulse.chirp_ramp;
        let e_off = e0 + slope * (off - tc);
        if ramp > 0.0 && slope != 0.0 {
            // e_off + slope (u - u^2 / (2R)) = 0 for u in (0, R]
            let a = -slope / (2.0 * ramp);
            let b = slope;
            let c = e_off;
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                for u in [(-b + sq) / (2.0 * a), (-b - sq) / (2.0 * a)] {
                    if u > 0.0 && u <= ramp {
                        push(&mut roots, off + u, off, off + ramp);
                    }
                }
            }
        }
        // the frozen segment is constant: either never zero or identically zero
    }
    roots.sort_by(|a, b| a.partial_cmp(b).expect("finite roots"));
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    Ok(roots)
}

/// One entry of the crossing report.
#[derive(Clone, Debug, Serialize)]
pub struct CrossingRecord {
    pub state: String,
    pub time: f64,
    pub degeneracy: usize,
}

/// Crossings with the ground state for every non-ground energy class.
pub fn crossing_report(trace: &SpectrumTrace, system: &SystemSpec, pulse: &PulseSpec) -> Result<Vec<CrossingRecord>> {
    let window = match (trace.times.first(), trace.times.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Ok(Vec::new()),
    };
    let mut out = Vec::new();
    for class in &trace.classes {
        let s: BasisState = class.representative.parse()?;
        if s.count(Level::G) == s.n_atoms() {
            continue;
        }
        for time in crossing_times(system, pulse, &s, window)? {
            out.push(CrossingRecord { state: class.members.join(","), time, degeneracy: class.degeneracy });
        }
    }
    out.sort_by(|a, b| a.time.partial_cmp(&b.time).expect("finite crossing times"));
    Ok(out)
}

/// Two-level reduction onto the all-ground and all-Rydberg states.
///
/// The coupling is `Ω_eff(t) = c Ω0(t)^6 / (Δ² V³)` with `Ω0(t)` the common
/// pulse envelope and `V` the nearest-neighbour interaction. The
/// all-Rydberg diagonal is its bare energy, which under `N δ = -2 Σ V`
/// reduces to `-N (α1 + α2)(t - t_c)`.
#[derive(Clone, Debug)]
pub struct EffectiveTwoLevel {
    pub prefactor: f64,
    pub system: SystemSpec,
    pub pulse: PulseSpec,
    pub convention: AngularConvention,
}

impl EffectiveTwoLevel {
    pub fn new(system: SystemSpec, pulse: PulseSpec) -> Self {
        Self { prefactor: 1.0, system, pulse, convention: AngularConvention::Direct }
    }

    pub fn with_prefactor(mut self, c: f64) -> Self {
        self.prefactor = c;
        self
    }

    pub fn with_convention(mut self, convention: AngularConvention) -> Self {
        self.convention = convention;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.prefactor > 0.0 && self.prefactor.is_finite()) {
            return Err(Error::Singular(format!("prefactor must be positive, got {}", self.prefactor)));
        }
        if self.system.delta1 == 0.0 {
            return Err(Error::Singular("one-photon detuning is zero".into()));
        }
        if !(self.system.nearest_neighbor() > 0.0) {
            return Err(Error::Singular("nearest-neighbour interaction must be positive".into()));
        }
        Ok(())
    }

    /// All-Rydberg diagonal in quoted units.
    fn rydberg_energy(&self, t: f64) -> f64 {
        let rrr = BasisState::uniform(self.system.n_atoms, Level::R);
        bare_energy(&rrr, &self.system, &self.pulse, t)
    }

    pub fn labels(&self) -> Vec<String> {
        let n = self.system.n_atoms;
        vec!["g".repeat(n), "r".repeat(n)]
    }
}

/// `c Ω0(t)^6 / (Δ² V³)` in quoted units.
pub fn effective_rabi(model: &EffectiveTwoLevel, t: f64) -> Result<f64> {
    model.validate()?;
    let omega = model.pulse.omega01.abs() * model.pulse.envelope_shape(t);
    let delta = model.system.delta1;
    let v = model.system.nearest_neighbor();
    Ok(model.prefactor * omega.powi(6) / (delta * delta * v.powi(3)))
}

/// Integrates `H = [[0, -Ω_eff], [-Ω_eff, E_r(t)]]` from the all-ground state.
///
/// Each step applies the fourth-order Magnus propagator, exponentiated in
/// closed form, so the evolution is unitary to rounding. This matters here:
/// `E_r` reaches thousands of rad/μs under a constant chirp, where RK4 at the
/// default step bleeds norm.
pub fn evolve_effective(model: &EffectiveTwoLevel, cfg: &IntegratorConfig) -> Result<Trajectory> {
    model.validate()?;
    let factor = model.convention.factor();
    // traceless part of H(t) as Pauli coefficients (x, z); y is always zero
    let pauli = |t: f64| -> [f64; 3] {
        let omega = factor * effective_rabi(model, t).expect("validated model");
        let e = factor * model.rydberg_energy(t);
        [-omega, 0.0, -0.5 * e]
    };
    let gauss = 3f64.sqrt() / 6.0;
    let step = |t: f64, h: f64, psi: &mut [C64]| {
        let a = pauli(t + (0.5 - gauss) * h);
        let b = pauli(t + (0.5 + gauss) * h);
        // Ω4 = -i h (H1 + H2)/2 - (√3/12) h² [H2, H1]; with H = h·σ the
        // commutator is [b·σ, a·σ] = 2i (b × a)·σ, so both terms are -i(...)·σ.
        let cross = [b[1] * a[2] - b[2] * a[1], b[2] * a[0] - b[0] * a[2], b[0] * a[1] - b[1] * a[0]];
        let c = 3f64.sqrt() / 6.0 * h * h;
        let n: [f64; 3] = std::array::from_fn(|k| 0.5 * h * (a[k] + b[k]) + c * cross[k]);
        let theta = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let (cos, sinc) = if theta > 0.0 { (theta.cos(), theta.sin() / theta) } else { (1.0, 1.0) };
        // exp(-i n·σ) = cos θ - i sin θ (n̂·σ)
        let u00 = C64::new(cos, -sinc * n[2]);
        let u11 = C64::new(cos, sinc * n[2]);
        let u01 = C64::new(-sinc * n[1], -sinc * n[0]);
        let u10 = C64::new(sinc * n[1], -sinc * n[0]);
        let (p0, p1) = (psi[0], psi[1]);
        psi[0] = u00 * p0 + u01 * p1;
        psi[1] = u10 * p0 + u11 * p1;
    };
    integrate_fixed(2, step, cfg, &StateVector::basis(2, 0, cfg.t_start), model.labels(), vec![0, 1], &mut |_, _| {})
}

/// Dressed-state mixing coefficients over time.
#[derive(Clone, Debug)]
pub struct DressedAngles {
    pub times: Vec<f64>,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
    /// Sample indices at which both `Ω_eff` and the detuning vanish.
    pub undefined: Vec<usize>,
}

/// `cos Θ = (1/2 + x / (2 √(Ω_eff² + x²)))^{1/2}` and the matching `sin Θ`,
/// where `x = -E_r(t)/2` equals `3 α (t - t_c)` for three atoms on resonance.
/// After a chirp turn-off `x` is frozen with the chirp.
pub fn dressed_angles(model: &EffectiveTwoLevel, times: &[f64]) -> Result<DressedAngles> {
    model.validate()?;
    let mut out = DressedAngles {
        times: times.to_vec(),
        cos: Vec::with_capacity(times.len()),
        sin: Vec::with_capacity(times.len()),
        undefined: Vec::new(),
    };
    for (i, &t) in times.iter().enumerate() {
        let omega = effective_rabi(model, t)?;
        let x = -0.5 * model.rydberg_energy(t);
        let r = omega.hypot(x);
        if !(r > 0.0) || !r.is_finite() {
            out.undefined.push(i);
            out.cos.push(f64::NAN);
            out.sin.push(f64::NAN);
            continue;
        }
        let q = (x / (2.0 * r)).clamp(-0.5, 0.5);
        out.cos.push((0.5 + q).sqrt());
        out.sin.push((0.5 - q).sqrt());
    }
    Ok(out)
}

/// Result of fitting the effective-model prefactor.
#[derive(Clone, Debug, Serialize)]
pub struct Calibration {
    pub prefactor: f64,
    /// Sum of squared differences of the ground population over the samples.
    pub sse: f64,
    /// Largest absolute difference of the ground population over the samples.
    pub max_deviation: f64,
}

fn ground_mismatch(model: &EffectiveTwoLevel, cfg: &IntegratorConfig, reference: &[f64]) -> Result<(f64, f64)> {
    let traj = evolve_effective(model, cfg)?;
    if traj.times.len() != reference.len() {
        return Err(Error::DimensionMismatch { expected: reference.len(), got: traj.times.len() });
    }
    let mut sse = 0.0;
    let mut max: f64 = 0.0;
    for (row, r) in traj.populations.iter().zip(reference) {
        let d = row[0] - r;
        sse += d * d;
        max = max.max(d.abs());
    }
    Ok((sse, max))
}

/// Least-squares fit of the prefactor `c` to a full-model ground population.
///
/// `reference` holds `P_ground` at the sample times `cfg` produces. The
/// objective is multimodal in `c`, so a log-spaced scan over
/// `[1e-3, 1e3]` picks the basin and a golden-section search refines it.
pub fn calibrate_prefactor(model: &EffectiveTwoLevel, cfg: &IntegratorConfig, reference: &[f64]) -> Result<Calibration> {
    let eval = |log_c: f64| -> Result<(f64, f64)> {
        ground_mismatch(&model.clone().with_prefactor(log_c.exp()), cfg, reference)
    };
    let (lo, hi) = (1e-3f64.ln(), 1e3f64.ln());
    let n = 97;
    let grid: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    let values = grid.iter().map(|&x| eval(x).map(|v| v.0)).collect::<Result<Vec<f64>>>()?;
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite objective"))
        .map(|(k, _)| k)
        .expect("non-empty grid");

    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(n - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = eval(x1)?.0;
    let mut f2 = eval(x2)?.0;
    for _ in 0..40 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = eval(x1)?.0;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = eval(x2)?.0;
        }
    }
    let mut log_c = 0.5 * (a + b);
    let mut result = eval(log_c)?;
    if values[best] < result.0 {
        log_c = grid[best];
        result = eval(log_c)?;
    }
    Ok(Calibration { prefactor: log_c.exp(), sse: result.0, max_deviation: result.1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagate::rk4_integrate;
    use approx::assert_abs_diff_eq;

    fn st(s: &str) -> BasisState {
        s.parse().unwrap()
    }

    fn fig2a() -> (SystemSpec, PulseSpec) {
        let sys = SystemSpec::three_atom_chain(-1500.0, -100.0, 60.0, 30.0);
        let pulse = PulseSpec::symmetric(0.0, -150.0, 1.0);
        let t_res = resonance_time(&sys, &pulse).unwrap();
        (sys, pulse.with_chirp_off(t_res))
    }

    fn fig2b() -> (SystemSpec, PulseSpec) {
        (SystemSpec::three_atom_chain(-1500.0, -60.0, 60.0, 30.0), PulseSpec::symmetric(0.0, -60.0, 1.0))
    }

    fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn twelve_classes_for_three_atoms() {
        let (sys, pulse) = fig2a();
        let classes = energy_classes(&sys, &pulse, &[0.3, 1.7, 2.9]).unwrap();
        let deg: Vec<usize> = classes.iter().map(|c| c.degeneracy).collect();
        assert_eq!(deg, [1, 3, 3, 1, 3, 6, 3, 2, 1, 2, 1, 1]);
        assert_eq!(classes[7].members, ["grr", "rrg"]);
        assert_eq!(classes[8].members, ["rgr"]);
        assert_eq!(classes[11].members, ["rrr"]);
    }

    #[test]
    fn fig2a_rydberg_series() {
        let (sys, pulse) = fig2a();
        let times = grid(0.0, 6.0, 601);
        let trace = spectrum_trace(&sys, &pulse, &times).unwrap();
        assert_eq!(trace.classes.len(), 12);
        assert!(trace.series("ggg").unwrap().iter().all(|&e| e == 0.0));
        let rrr = trace.series("rrr").unwrap();
        assert_abs_diff_eq!(rrr[300], 0.0, epsilon = 1e-9);
        assert!(rrr[..300].iter().all(|&e| e < 0.0));
        assert!(rrr[301..].iter().all(|&e| e.abs() < 1e-9));
        let report = crossing_times(&sys, &pulse, &st("rrr"), (0.0, 6.0)).unwrap();
        assert_eq!(report.len(), 1);
        assert_abs_diff_eq!(report[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn fig2b_crossings() {
        let (sys, pulse) = fig2b();
        let grr = crossing_times(&sys, &pulse, &st("grr"), (0.0, 6.0)).unwrap();
        assert_eq!(grr.len(), 1);
        assert_abs_diff_eq!(grr[0], 3.0, epsilon = 1e-12);
        // 2δ + 2 V31 - 4α s = 0 -> s = (2δ + 2 V31) / (4α)
        let rgr = crossing_times(&sys, &pulse, &st("rgr"), (0.0, 6.0)).unwrap();
        assert_eq!(rgr.len(), 1);
        assert_abs_diff_eq!(rgr[0], 3.0 + (-120.0 + 60.0) / (4.0 * -60.0), epsilon = 1e-12);
        assert!(rgr[0] > grr[0]);
    }

    #[test]
    fn crossing_roots_are_zeros() {
        let (sys, mut pulse) = fig2a();
        pulse.chirp_off_time = Some(3.4);
        pulse.chirp_ramp = 0.1;
        pulse.alpha1 = -220.0;
        let basis = enumerate_basis(3).unwrap();
        for s in basis.states() {
            for t in crossing_times(&sys, &pulse, s, (0.0, 6.0)).unwrap() {
                assert!(bare_energy(s, &sys, &pulse, t).abs() <= 1e-9, "{s} at {t}");
            }
        }
    }

    #[test]
    fn ramp_crossing_is_found() {
        // single Rydberg atom reaching zero in the middle of a turn-off ramp
        let sys = SystemSpec::free(1, -1000.0, -5.0);
        let mut pulse = PulseSpec::symmetric(0.0, -50.0, 1.0).with_chirp_off(3.0);
        pulse.chirp_ramp = 0.2;
        // E(3 + u) = -5 + 100 (u - u^2 / 0.4) vanishes at u = (1 - 1/sqrt 2) / 5
        let roots = crossing_times(&sys, &pulse, &st("r"), (0.0, 6.0)).unwrap();
        assert_eq!(roots.len(), 1);
        assert_abs_diff_eq!(roots[0], 3.0 + (1.0 - std::f64::consts::FRAC_1_SQRT_2) / 5.0, epsilon = 1e-12);
        assert!(bare_energy(&st("r"), &sys, &pulse, roots[0]).abs() < 1e-9);
    }

    #[test]
    fn flat_line_has_no_crossing() {
        let sys = SystemSpec::three_atom_chain(-1500.0, -90.0, 60.0, 30.0);
        let pulse = PulseSpec::symmetric(100.0, 0.0, 1.0);
        assert!(crossing_times(&sys, &pulse, &st("rrr"), (0.0, 6.0)).unwrap().is_empty());
        assert!(matches!(resonance_time(&sys, &pulse), Err(Error::NoCrossing(_))));
    }

    #[test]
    fn intermediate_states_never_cross_under_ghz_protocol() {
        let sys = SystemSpec::three_atom_chain(-1500.0, -100.0, 60.0, 30.0);
        let basis = enumerate_basis(3).unwrap();
        for alpha in [-1.0, -150.0, -300.0, -600.0] {
            let p = PulseSpec::symmetric(0.0, alpha, 1.0);
            let p = p.clone().with_chirp_off(resonance_time(&sys, &p).unwrap());
            for s in basis.states().iter().filter(|s| s.count(Level::E) > 0) {
                assert!(crossing_times(&sys, &p, s, (0.0, 6.0)).unwrap().is_empty(), "{s} at {alpha}");
            }
        }
    }

    #[test]
    fn resonance_times() {
        let sys = SystemSpec::three_atom_chain(-1500.0, -100.0, 60.0, 30.0);
        for alpha in [-10.0, -176.0, -600.0] {
            let t = resonance_time(&sys, &PulseSpec::symmetric(1.0, alpha, 1.0)).unwrap();
            assert_abs_diff_eq!(t, 3.0, epsilon = 1e-15);
        }
        let v_ends = 60.0 / 64.0;
        let sys = SystemSpec::three_atom_chain(-1500.0, -80.63, 60.0, v_ends);
        let t = resonance_time(&sys, &PulseSpec::symmetric(1.0, -176.0, 1.0)).unwrap();
        assert!((t - 3.0).abs() < 1e-3, "{t}");
        let sys = SystemSpec::three_atom_chain(-1500.0, -60.0, 60.0, 30.0);
        let t = resonance_time(&sys, &PulseSpec::symmetric(1.0, -60.0, 1.0)).unwrap();
        assert_abs_diff_eq!(t, 3.0 + (-180.0 + 300.0) / (3.0 * -120.0), epsilon = 1e-14);
    }

    #[test]
    fn effective_rabi_scaling() {
        let sys = SystemSpec::three_atom_chain(-1500.0, -100.0, 60.0, 30.0);
        let pulse = PulseSpec::symmetric(158.0, -176.0, 1.0);
        let m = EffectiveTwoLevel::new(sys.clone(), pulse.clone());
        let peak = effective_rabi(&m, 3.0).unwrap();
        assert_abs_diff_eq!(peak, 158f64.powi(6) / (1500f64.powi(2) * 60f64.powi(3)), epsilon = 1e-12);
        assert!((peak - 32.0).abs() < 0.05, "{peak}");
        assert_abs_diff_eq!(effective_rabi(&m, 4.0).unwrap(), peak * (-3f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(effective_rabi(&m, 2.0).unwrap(), peak * (-3f64).exp(), epsilon = 1e-12);
        let doubled = m.clone().with_prefactor(2.0);
        assert_abs_diff_eq!(effective_rabi(&doubled, 3.0).unwrap(), 2.0 * peak, epsilon = 1e-12);
        let mut flat = sys.clone();
        flat.delta1 = 0.0;
        assert!(matches!(effective_rabi(&EffectiveTwoLevel::new(flat, pulse.clone()), 3.0), Err(Error::Singular(_))));
        let free = SystemSpec::free(3, -1500.0, -100.0);
        assert!(effective_rabi(&EffectiveTwoLevel::new(free, pulse), 3.0).is_err());
    }

    #[test]
    fn effective_model_without_coupling_stays_put() {
        let sys = SystemSpec::three_atom_chain(-1500.0, -100.0, 60.0, 30.0);
        let m = EffectiveTwoLevel::new(sys, PulseSpec::symmetric(0.0, -176.0, 1.0));
        let traj = evolve_effective(&m, &IntegratorConfig::default()).unwrap();
        assert!(traj.populations.iter().all(|row| (row[0] - 1.0).abs() < 1e-12));
    }

    #[test]
    fn effective_populations_conserved() {
        let sys = SystemSpec::three_atom_chain(-1500.0, -100.0, 60.0, 30.0);
        let pulse = PulseSpec::symmetric(158.0, -176.0, 1.0).with_chirp_off(3.0);
        let traj = evolve_effective(&EffectiveTwoLevel::new(sys, pulse), &IntegratorConfig::default()).unwrap();
        for row in &traj.populations {
            assert!((row[0] + row[1] - 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn magnus_matches_fine_rk4() {
        let sys = SystemSpec::three_atom_chain(-1500.0, -100.0, 60.0, 30.0);
        let pulse = PulseSpec::symmetric(158.0, -176.0, 1.0).with_chirp_off(3.0);
        let m = EffectiveTwoLevel::new(sys, pulse).with_prefactor(1.7);
        let cfg = IntegratorConfig::default().with_samples(60);
        let magnus = evolve_effective(&m, &cfg).unwrap();
        let fine = cfg.clone().with_dt(2e-6);
        let deriv = |t: f64, a: &[C64], out: &mut [C64]| {
            let w = effective_rabi(&m, t).unwrap();
            let e = m.rydberg_energy(t);
            out[0] = -C64::i() * (-w * a[1]);
            out[1] = -C64::i() * (-w * a[0] + e * a[1]);
        };
        let rk4 = rk4_integrate(2, deriv, &fine, &StateVector::basis(2, 0, 0.0), m.labels(), vec![0, 1], &mut |_, _| {})
            .unwrap();
        for (p, q) in magnus.populations.iter().zip(&rk4.populations) {
            assert!((p[0] - q[0]).abs() < 1e-7, "{} vs {}", p[0], q[0]);
        }
    }

    #[test]
    fn constant_chirp_transfers_fully() {
        let sys = SystemSpec::three_atom_chain(-1500.0, -100.0, 60.0, 30.0);
        let m = EffectiveTwoLevel::new(sys, PulseSpec::symmetric(158.0, -176.0, 1.0));
        let traj = evolve_effective(&m, &IntegratorConfig::default()).unwrap();
        assert!(traj.populations.last().unwrap()[1] >= 0.95);
    }

    #[test]
    fn angles() {
        let sys = SystemSpec::three_atom_chain(-1500.0, -100.0, 60.0, 30.0);
        let times = grid(0.0, 6.0, 601);
        let ghz = EffectiveTwoLevel::new(sys.clone(), PulseSpec::symmetric(158.0, -176.0, 1.0).with_chirp_off(3.0));
        let a = dressed_angles(&ghz, &times).unwrap();
        assert!(a.undefined.is_empty());
        for (c, s) in a.cos.iter().zip(&a.sin) {
            assert!((c * c + s * s - 1.0).abs() <= 1e-12);
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(a.cos[300], h, epsilon = 1e-15);
        assert_abs_diff_eq!(a.sin[300], h, epsilon = 1e-15);
        assert_abs_diff_eq!(a.cos[600], h, epsilon = 1e-15);
        assert!(a.cos[0] > 1.0 - 1e-12 && a.sin[0] < 1e-6);

        let constant = EffectiveTwoLevel::new(sys, PulseSpec::symmetric(158.0, -176.0, 1.0));
        let a = dressed_angles(&constant, &times).unwrap();
        assert!(a.cos[600] < 1e-6 && a.sin[600] > 1.0 - 1e-12);
    }

    #[test]
    fn undefined_angle_is_flagged() {
        let sys = SystemSpec::three_atom_chain(-1500.0, -100.0, 60.0, 30.0);
        let mut pulse = PulseSpec::symmetric(158.0, -176.0, 1.0);
        pulse.omega01 = 0.0;
        let m = EffectiveTwoLevel::new(sys, pulse);
        let a = dressed_angles(&m, &[2.0, 3.0]).unwrap();
        assert_eq!(a.undefined, [1]);
        assert!(a.cos[1].is_nan());
    }
}
