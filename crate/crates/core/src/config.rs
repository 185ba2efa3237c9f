//! JSON run configuration shared by the CLI subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::resonance_time;
use crate::error::{Error, Result};
use crate::model::{
    lattice_interactions, AngularConvention, LatticeSpec, ModelSettings, PulseSpec, RabiCoupling, SystemSpec,
};
use crate::propagate::IntegratorConfig;
use crate::sweep::{AxisRange, Protocol, SweepGrid};

/// System parameters with the interactions given either explicitly or as a
/// lattice. An explicit `v` takes precedence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_atoms: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeSpec>,
    pub delta1: f64,
    pub delta2: f64,
}

impl SystemConfig {
    pub fn resolve(&self) -> Result<SystemSpec> {
        let v = match (&self.v, &self.lattice) {
            (Some(v), _) => v.clone(),
            (None, Some(l)) => lattice_interactions(l)?,
            (None, None) => match self.n_atoms {
                Some(n) => vec![vec![0.0; n]; n],
                None => return Err(Error::Config("system needs `v`, `lattice` or `n_atoms`".into())),
            },
        };
        if let Some(n) = self.n_atoms {
            if n != v.len() {
                return Err(Error::Config(format!("n_atoms = {n} but the interaction matrix is {}x{}", v.len(), v.len())));
            }
        }
        SystemSpec::new(v, self.delta1, self.delta2)
    }
}

/// How the chirp is switched off for single runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChirpProtocol {
    /// Switch off at the resonance time.
    Ghz,
    /// Never switch off.
    W,
    /// Use `pulse.chirp_off_time` as given.
    #[default]
    AsGiven,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Ghz,
    W,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    pub alpha: AxisRange,
    pub omega: AxisRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    /// Number of time samples across the integration window.
    #[serde(default = "default_spectrum_samples")]
    pub samples: usize,
}

fn default_spectrum_samples() -> usize {
    601
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectiveConfig {
    /// Fixed prefactor; when absent it is fitted to the full run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefactor: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_stem")]
    pub stem: String,
}

fn default_stem() -> String {
    "run".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, stem: default_stem() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub system: SystemConfig,
    pub pulse: PulseSpec,
    /// Defaults to the window `t_c ± 3 τ0` with `dt = 1e-4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorConfig>,
    #[serde(default)]
    pub protocol: ChirpProtocol,
    #[serde(default)]
    pub observables: Vec<Observable>,
    #[serde(default)]
    pub angular_convention: AngularConvention,
    #[serde(default)]
    pub rabi_coupling: RabiCoupling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepAxes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective: Option<EffectiveConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parameter checks that need no integration. Model errors are reported
    /// as config errors.
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.system.resolve().map_err(as_config)?;
        self.pulse.validate().map_err(as_config)?;
        self.integrator().validate().map_err(as_config)?;
        if let Some(s) = &self.sweep {
            if self.protocol == ChirpProtocol::AsGiven {
                return Err(Error::Config("a sweep needs protocol `ghz` or `w`".into()));
            }
            self.sweep_grid_with(s).and_then(|g| g.validate()).map_err(as_config)?;
        }
        if let Some(s) = &self.spectrum {
            if s.samples < 2 {
                return Err(Error::Config("spectrum.samples must be at least 2".into()));
            }
        }
        if let Some(c) = self.effective.as_ref().and_then(|e| e.prefactor) {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("effective.prefactor must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn settings(&self) -> ModelSettings {
        ModelSettings { angular_convention: self.angular_convention, rabi_coupling: self.rabi_coupling }
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        self.system.resolve()
    }

    pub fn integrator(&self) -> IntegratorConfig {
        self.integrator.clone().unwrap_or_else(|| IntegratorConfig::for_pulse(&self.pulse))
    }

    /// Pulse with the protocol's chirp-off rule applied.
    pub fn run_pulse(&self) -> Result<PulseSpec> {
        let mut p = self.pulse.clone();
        match self.protocol {
            ChirpProtocol::AsGiven => {}
            ChirpProtocol::W => p.chirp_off_time = None,
            ChirpProtocol::Ghz => {
                p.chirp_off_time = match resonance_time(&self.system_spec()?, &p) {
                    Ok(t) => Some(t),
                    Err(Error::NoCrossing(_)) => None,
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(p)
    }

    /// Observables to report; defaults follow the protocol.
    pub fn observables(&self) -> Vec<Observable> {
        if !self.observables.is_empty() {
            return self.observables.clone();
        }
        match self.protocol {
            ChirpProtocol::Ghz => vec![Observable::Ghz],
            ChirpProtocol::W => vec![Observable::W],
            ChirpProtocol::AsGiven => vec![Observable::Ghz, Observable::W],
        }
    }

    fn sweep_grid_with(&self, axes: &SweepAxes) -> Result<SweepGrid> {
        let protocol = match self.protocol {
            ChirpProtocol::Ghz => Protocol::Ghz,
            ChirpProtocol::W => Protocol::W,
            ChirpProtocol::AsGiven => return Err(Error::Config("a sweep needs protocol `ghz` or `w`".into())),
        };
        Ok(SweepGrid {
            alpha: axes.alpha,
            omega: axes.omega,
            system: self.system_spec()?,
            pulse: self.pulse.clone(),
            protocol,
            settings: self.settings(),
        })
    }

    pub fn sweep_grid(&self) -> Result<SweepGrid> {
        let axes = self.sweep.as_ref().ok_or_else(|| Error::Config("config has no `sweep` section".into()))?;
        self.sweep_grid_with(axes)
    }

    /// SHA-256 of the canonical JSON form, after any command-line overrides.
    /// The output directory does not affect results and is left out.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output.dir = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
