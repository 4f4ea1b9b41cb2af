use serde::{Deserialize, Serialize};

use crate::energies::EnergyKind;
use crate::error::{invalid, Result};

/// When the solver stops besides hitting `max_iter`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum TerminationMode {
    /// Both error thresholds met and no flipped element.
    Default,
    /// Stop at the first flip-free iterate.
    FlipFreeOnly,
    /// Stop once flip-free with energy at or below `value`.
    TargetEnergy { value: f64 },
}

/// Penalty rescaling schedule: an event at each of the first `initial`
/// iterations, then whenever `base · growth^p` iterations have passed since
/// the last event, `p` being the number of events so far.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaleConfig {
    pub enabled: bool,
    pub initial: usize,
    pub base: f64,
    pub growth: f64,
}

impl Default for RescaleConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            initial: 5,
            base: 5.0,
            growth: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub energy: EnergyKind,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Imbalance factor that triggers penalty rescaling.
    pub rho: f64,
    pub gamma: f64,
    /// Slack `ε` in the penalty and proximal bounds.
    pub epsilon: f64,
    /// Proximal term on the rotation update.
    pub proximal: bool,
    pub termination: TerminationMode,
    pub rescale: RescaleConfig,
    /// Iterations without improvement (while flips remain) before giving up.
    pub stall_window: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::with_energy(EnergyKind::SymmetricGradient)
    }
}

impl SolverConfig {
    pub fn with_energy(energy: EnergyKind) -> Self {
        Self {
            energy,
            eps_abs: 1e-6,
            eps_rel: 1e-5,
            max_iter: 10_000,
            rho: 5.0,
            gamma: 1.0,
            epsilon: 0.0,
            proximal: true,
            termination: TerminationMode::Default,
            rescale: RescaleConfig::default(),
            stall_window: 200,
        }
    }

    /// Tighter tolerances used for handle-driven deformation.
    pub fn deformation(energy: EnergyKind) -> Self {
        Self {
            eps_abs: 5e-10,
            eps_rel: 5e-9,
            ..Self::with_energy(energy)
        }
    }

    /// Stops at the first flip-free iterate. The proximal term is off since
    /// heavily flipped inputs produce large gradient bounds that would
    /// freeze the rotations.
    pub fn unflip(energy: EnergyKind) -> Self {
        Self {
            termination: TerminationMode::FlipFreeOnly,
            proximal: false,
            ..Self::with_energy(energy)
        }
    }

    /// Volume correspondence from a harmonic initialization, which may
    /// contain inverted tetrahedra; the proximal term is off.
    pub fn volume(energy: EnergyKind) -> Self {
        Self {
            proximal: false,
            ..Self::with_energy(energy)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.energy.is_solvable() {
            return Err(invalid(format!("energy {} cannot be optimized", self.energy)));
        }
        let positive = [
            ("eps_abs", self.eps_abs),
            ("eps_rel", self.eps_rel),
            ("gamma", self.gamma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive (got {v})")));
            }
        }
        if !(self.rho > 2.0 && self.rho.is_finite()) {
            return Err(invalid(format!("rho must exceed 2 (got {})", self.rho)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid(format!("epsilon must be non-negative (got {})", self.epsilon)));
        }
        if self.rescale.enabled && !(self.rescale.base > 0.0 && self.rescale.growth >= 1.0) {
            return Err(invalid("rescale schedule needs base > 0 and growth ≥ 1"));
        }
        if let TerminationMode::TargetEnergy { value } = self.termination {
            if !value.is_finite() {
                return Err(invalid("target energy must be finite"));
            }
        }
        Ok(())
    }
}
