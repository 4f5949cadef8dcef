//! Experiment configuration: one JSON document holding the full recipe of a
//! quenched experiment (driving, fiber maps, holes, grids, schedules, seeds).

use serde::{Deserialize, Serialize};

use crate::driving::{fiber_sequence, DrivingKind, DrivingSystem, FiberOrbit};
use crate::error::{Error, Result};
use crate::evt::{HittingSettings, ObservationFunction};
use crate::maps::{MapPreset, PiecewiseLinearMap, StepFunction};
use crate::open::{HoleFamily, HoleField, HoleSpec};
use crate::perturb::geometric_schedule;
use crate::transfer::{Engine, EngineSettings, Grid};

/// Default burn-in for backward density limits.
pub const DEFAULT_BURN_IN: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitLengths {
    pub backward: usize,
    pub forward: usize,
}

/// ε values, either listed or `ε₀·2^{-j}` for `j = 0..=steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsSchedule {
    Geometric { eps0: f64, steps: usize },
    Explicit(Vec<f64>),
}

impl EpsSchedule {
    pub fn values(&self) -> Vec<f64> {
        match self {
            EpsSchedule::Geometric { eps0, steps } => geometric_schedule(*eps0, *steps),
            EpsSchedule::Explicit(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvtConfig {
    /// One observation function per fiber symbol.
    pub observation: Vec<ObservationFunction>,
    /// Scaling `t_ω` per fiber symbol.
    pub t: Vec<f64>,
    pub n_list: Vec<usize>,
    /// Curve grid with `cells_per_n · N` cells; the base grid when absent.
    #[serde(default)]
    pub cells_per_n: Option<usize>,
    /// Snap thresholds to the base grid.
    #[serde(default)]
    pub snap: bool,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub cap_multiple: Option<f64>,
    /// N used by the hitting-time run; the last entry of `n_list` when
    /// absent.
    #[serde(default)]
    pub hitting_n: Option<usize>,
    /// Exponential rate of the hitting law; estimated as θ̂ when absent.
    #[serde(default)]
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressureConfig {
    pub ts: Vec<f64>,
    pub tol: f64,
}

/// Step function given by breakpoints `0 = b_0 < … < b_m = 1` and one value
/// per piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observable {
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
}

impl Observable {
    pub fn to_step(&self) -> Result<StepFunction> {
        let b = &self.breaks;
        if b.len() != self.values.len() + 1
            || b.len() < 2
            || b[0] != 0.0
            || *b.last().unwrap() != 1.0
            || b.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(Error::InvalidConfig(format!("malformed step observable {self:?}")));
        }
        Ok(StepFunction::from_parts(b.clone(), self.values.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    pub f: Observable,
    pub h: Observable,
    pub n_max: usize,
    pub min_lag: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaccimConfig {
    /// Sites `0..=n` of the density run.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub driving: DrivingKind,
    /// One map per fiber symbol.
    pub maps: Vec<MapPreset>,
    /// Weight exponent `r` of the potential `|T'|^{-r}`.
    pub r: f64,
    pub grid: usize,
    /// One hole family per fiber symbol; the closed system when absent.
    #[serde(default)]
    pub holes: Option<Vec<HoleSpec>>,
    /// ε at which the hole family is evaluated for fixed-ε runs.
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub schedule: Option<EpsSchedule>,
    pub orbit: OrbitLengths,
    /// Birkhoff / fiber-average length.
    pub n: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub engine: EngineSettings,
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default)]
    pub evt: Option<EvtConfig>,
    #[serde(default)]
    pub pressure: Option<PressureConfig>,
    #[serde(default)]
    pub decay: Option<DecayConfig>,
    #[serde(default)]
    pub raccim: Option<RaccimConfig>,
    /// Master Monte Carlo seed.
    pub seed: u64,
    #[serde(default)]
    pub output: Option<String>,
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replace the Monte Carlo seed and, for IID driving, the driving seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        if let DrivingKind::Iid { seed: s, .. } = &mut self.driving {
            *s = seed;
        }
    }

    pub fn symbols(&self) -> usize {
        self.maps.len()
    }

    pub fn driving_system(&self) -> Result<DrivingSystem> {
        let d = DrivingSystem::new(self.driving.clone())?;
        if d.symbol_count() > self.maps.len() {
            return Err(Error::InvalidConfig(format!(
                "driving uses {} symbols but only {} maps are given",
                d.symbol_count(),
                self.maps.len()
            )));
        }
        Ok(d)
    }

    pub fn fiber_maps(&self) -> Result<Vec<PiecewiseLinearMap>> {
        self.maps.iter().cloned().map(PiecewiseLinearMap::from_preset).collect()
    }

    pub fn engine(&self) -> Result<Engine> {
        Ok(Engine::new(self.fiber_maps()?, Grid::new(self.grid)?, self.r)?.with_settings(self.engine))
    }

    pub fn fiber_orbit(&self) -> Result<FiberOrbit> {
        Ok(fiber_sequence(&self.driving_system()?, self.orbit.backward, self.orbit.forward))
    }

    pub fn hole_family(&self) -> HoleFamily {
        match &self.holes {
            Some(h) => HoleFamily { per_symbol: h.clone() },
            None => HoleFamily::none(self.symbols()),
        }
    }

    /// Holes at the configured fixed ε (any ε for fixed holes).
    pub fn fixed_holes(&self) -> Result<HoleField> {
        let family = self.hole_family();
        let needs_eps = family.per_symbol.iter().any(|h| matches!(h, HoleSpec::Ball { .. }));
        match (self.eps, needs_eps) {
            (Some(eps), _) => Ok(family.at(eps)),
            (None, false) => Ok(family.at(0.0)),
            (None, true) => Err(Error::InvalidConfig("ball holes need an explicit `eps`".into())),
        }
    }

    pub fn schedule_values(&self) -> Result<Vec<f64>> {
        self.schedule
            .as_ref()
            .map(EpsSchedule::values)
            .ok_or_else(|| Error::InvalidConfig("missing `schedule`".into()))
    }

    pub fn k_max(&self) -> Result<usize> {
        self.k_max.ok_or_else(|| Error::InvalidConfig("missing `k_max`".into()))
    }

    pub fn evt(&self) -> Result<&EvtConfig> {
        self.evt.as_ref().ok_or_else(|| Error::InvalidConfig("missing `evt` block".into()))
    }

    pub fn pressure(&self) -> Result<&PressureConfig> {
        self.pressure.as_ref().ok_or_else(|| Error::InvalidConfig("missing `pressure` block".into()))
    }

    pub fn decay(&self) -> Result<&DecayConfig> {
        self.decay.as_ref().ok_or_else(|| Error::InvalidConfig("missing `decay` block".into()))
    }

    pub fn raccim(&self) -> Result<&RaccimConfig> {
        self.raccim.as_ref().ok_or_else(|| Error::InvalidConfig("missing `raccim` block".into()))
    }

    pub fn hitting_settings(&self) -> Result<HittingSettings> {
        let evt = self.evt()?;
        Ok(HittingSettings {
            samples: evt.samples.ok_or_else(|| Error::InvalidConfig("missing `evt.samples`".into()))?,
            master_seed: self.seed,
            cap_multiple: evt
                .cap_multiple
                .ok_or_else(|| Error::InvalidConfig("missing `evt.cap_multiple`".into()))?,
        })
    }
}
