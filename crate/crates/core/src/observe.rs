//! Target-state fidelities and population diagnostics.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::model::{BasisState, CollectiveBasis};
use crate::propagate::StateVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetKind {
    Ghz,
    W,
    Custom,
}

/// A normalized target state over the collective basis.
#[derive(Clone, Debug)]
pub struct TargetState {
    pub kind: TargetKind,
    pub amplitudes: Vec<C64>,
}

fn require_entangleable(basis: &CollectiveBasis) -> Result<()> {
    if basis.n_atoms() < 2 {
        return Err(Error::EntanglementUndefined(basis.n_atoms()));
    }
    Ok(())
}

fn check_dim(basis: &CollectiveBasis, state: &StateVector) -> Result<()> {
    if state.dim() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), got: state.dim() });
    }
    Ok(())
}

impl TargetState {
    /// `(|g...g> + |r...r>) / √2`.
    pub fn ghz(basis: &CollectiveBasis) -> Result<Self> {
        require_entangleable(basis)?;
        let mut amplitudes = vec![C64::new(0.0, 0.0); basis.dim()];
        let a = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        amplitudes[basis.ground_index()] = a;
        amplitudes[basis.rydberg_index()] = a;
        Ok(Self { kind: TargetKind::Ghz, amplitudes })
    }

    /// Equal superposition of the `N` states with one atom in `g` and the rest in `r`.
    pub fn w(basis: &CollectiveBasis) -> Result<Self> {
        require_entangleable(basis)?;
        let mut amplitudes = vec![C64::new(0.0, 0.0); basis.dim()];
        let a = C64::new(1.0 / (basis.n_atoms() as f64).sqrt(), 0.0);
        for k in basis.single_ground_indices() {
            amplitudes[k] = a;
        }
        Ok(Self { kind: TargetKind::W, amplitudes })
    }

    pub fn custom(amplitudes: Vec<C64>) -> Result<Self> {
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { kind: TargetKind::Custom, amplitudes })
    }

    /// `<target|psi>`.
    pub fn overlap(&self, state: &StateVector) -> Result<C64> {
        if state.dim() != self.amplitudes.len() {
            return Err(Error::DimensionMismatch { expected: self.amplitudes.len(), got: state.dim() });
        }
        Ok(self.amplitudes.iter().zip(&state.amplitudes).map(|(t, a)| t.conj() * a).sum())
    }

    /// `|<target|psi>|^2`.
    pub fn fidelity(&self, state: &StateVector) -> Result<f64> {
        Ok(self.overlap(state)?.norm_sqr())
    }
}

/// `½ (|a_g|² + |a_r|² + 2 Re(a_g a_r*))` for the all-ground and all-Rydberg amplitudes.
pub fn ghz_fidelity(basis: &CollectiveBasis, state: &StateVector) -> Result<f64> {
    require_entangleable(basis)?;
    check_dim(basis, state)?;
    let ag = state.amplitudes[basis.ground_index()];
    let ar = state.amplitudes[basis.rydberg_index()];
    let f = 0.5 * (ag.norm_sqr() + ar.norm_sqr() + 2.0 * (ag * ar.conj()).re);
    Ok(f.clamp(0.0, 1.0))
}

/// Prefactor of the expanded W fidelity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WNormalization {
    /// `1/N`, so the fidelity equals `|<W|psi>|^2`.
    #[default]
    Overlap,
    /// A fixed `½` regardless of `N`. Not bounded by 1; kept only to compare
    /// against values computed that way.
    LiteralHalf,
}

/// `(1/N) |Σ_k a_k|²` expanded over the single-ground amplitudes.
pub fn w_fidelity(basis: &CollectiveBasis, state: &StateVector) -> Result<f64> {
    Ok(w_fidelity_with(basis, state, WNormalization::Overlap)?.clamp(0.0, 1.0))
}

pub fn w_fidelity_with(basis: &CollectiveBasis, state: &StateVector, norm: WNormalization) -> Result<f64> {
    require_entangleable(basis)?;
    check_dim(basis, state)?;
    let amps: Vec<C64> = basis.single_ground_indices().iter().map(|&k| state.amplitudes[k]).collect();
    let mut sum = amps.iter().map(|a| a.norm_sqr()).sum::<f64>();
    for k in 0..amps.len() {
        for m in k + 1..amps.len() {
            sum += 2.0 * (amps[k] * amps[m].conj()).re;
        }
    }
    let prefactor = match norm {
        WNormalization::Overlap => 1.0 / basis.n_atoms() as f64,
        WNormalization::LiteralHalf => 0.5,
    };
    Ok(prefactor * sum)
}

pub fn population(basis: &CollectiveBasis, state: &StateVector, which: &BasisState) -> Result<f64> {
    check_dim(basis, state)?;
    let k = basis.index_of(which).ok_or_else(|| {
        Error::InvalidSystem(format!("{which} is not a state of a {}-atom basis", basis.n_atoms()))
    })?;
    Ok(state.population(k))
}

/// `P_a - P_b`.
pub fn population_difference(
    basis: &CollectiveBasis,
    state: &StateVector,
    a: &BasisState,
    b: &BasisState,
) -> Result<f64> {
    Ok(population(basis, state, a)? - population(basis, state, b)?)
}

/// Total population of the single-ground states.
pub fn w_population_sum(basis: &CollectiveBasis, state: &StateVector) -> Result<f64> {
    require_entangleable(basis)?;
    check_dim(basis, state)?;
    Ok(basis.single_ground_indices().iter().map(|&k| state.population(k)).sum())
}

/// Largest pairwise population difference among the single-ground states.
pub fn w_population_spread(basis: &CollectiveBasis, state: &StateVector) -> Result<f64> {
    require_entangleable(basis)?;
    check_dim(basis, state)?;
    let pops: Vec<f64> = basis.single_ground_indices().iter().map(|&k| state.population(k)).collect();
    let max = pops.iter().cloned().fold(f64::MIN, f64::max);
    let min = pops.iter().cloned().fold(f64::MAX, f64::min);
    Ok(max - min)
}
