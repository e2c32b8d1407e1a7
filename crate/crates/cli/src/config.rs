//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use mlmc_parareal::costmodel::CostModelParams;
use mlmc_parareal::mlmc::{PararealOptions, SampleTarget, SamplingPolicy};
use mlmc_parareal::model::{
    Drive, Hierarchy, ModelFamily, ModelId, ParameterVector, SteinmetzFamily, SyntheticFamily, UncertainInput,
    STEINMETZ_NOMINAL, SYNTHETIC_BARS,
};
use mlmc_parareal::{Executor, Mode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Steinmetz,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    Mc,
    Mlmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSettings {
    pub n_dof: usize,
    pub source_amplitude: f64,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        Self {
            n_dof: 64,
            source_amplitude: 1.0e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySettings {
    pub warmup: usize,
    /// Target RMSE; ignored when `samples` is given.
    pub rmse_target: Option<f64>,
    /// Fixed samples per level; a single entry for Monte Carlo.
    pub samples: Option<Vec<usize>>,
}

impl Default for PolicySettings {
    fn default() -> Self {
        Self {
            warmup: 20,
            rmse_target: Some(1e-2),
            samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PararealSettings {
    pub enabled: bool,
    pub tolerance: f64,
    pub max_iterations: Option<usize>,
    /// Coarse step; the step of level `L−2` if absent.
    pub dt_coarse: Option<f64>,
    pub subintervals: Option<usize>,
}

impl Default for PararealSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            tolerance: 1e-6,
            max_iterations: None,
            dt_coarse: None,
            subintervals: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModelSettings {
    pub r: f64,
    pub levels: usize,
    pub c0: f64,
    /// Sample counts from `V_ℓ = 10^{−2ℓ}` at this RMSE unless `samples` is given.
    pub rmse_target: f64,
    pub samples: Option<Vec<usize>>,
    pub n_c_list: Vec<usize>,
    pub k_max: usize,
}

impl Default for CostModelSettings {
    fn default() -> Self {
        Self {
            r: 10.0,
            levels: 2,
            c0: 1.0,
            rmse_target: 0.017,
            samples: None,
            n_c_list: vec![180, 360, 720, 1440, 2880],
            k_max: 10,
        }
    }
}

impl CostModelSettings {
    pub fn params(&self, cores: usize) -> mlmc_parareal::Result<CostModelParams> {
        match &self.samples {
            Some(n) => {
                let v = (0..=self.levels).map(|l| 10f64.powi(-2 * l as i32)).collect();
                CostModelParams::new(self.c0, self.r, self.levels, cores, v, n.clone())
            }
            None => CostModelParams::with_variance_decay(self.c0, self.r, self.levels, cores, self.rmse_target),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelChoice,
    /// Overrides the built-in nominal parameters.
    pub nominal: Option<Vec<f64>>,
    pub halfwidth: f64,
    pub drive: Drive,
    pub synthetic: SyntheticSettings,
    /// Time steps per level, strictly decreasing.
    pub hierarchy: Vec<f64>,
    pub horizon: f64,
    pub estimator: EstimatorChoice,
    /// Level sampled by Monte Carlo; the finest if absent.
    pub level: Option<usize>,
    pub policy: PolicySettings,
    pub parareal: PararealSettings,
    pub n_c: usize,
    pub mode: Mode,
    pub seconds_per_step: f64,
    pub seed: u64,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub write_samples: bool,
    pub cost_model: CostModelSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelChoice::Steinmetz,
            nominal: None,
            halfwidth: 0.05,
            drive: Drive::default(),
            synthetic: SyntheticSettings::default(),
            hierarchy: vec![1e-3, 1e-4, 1e-5],
            horizon: 1.0,
            estimator: EstimatorChoice::Mlmc,
            level: None,
            policy: PolicySettings::default(),
            parareal: PararealSettings::default(),
            n_c: 180,
            mode: Mode::Simulated,
            seconds_per_step: 1e-6,
            seed: 0,
            workers: 1,
            output_dir: PathBuf::from("out"),
            write_samples: false,
            cost_model: CostModelSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    /// Checks everything that does not require running a solver.
    pub fn validate(&self) -> Result<(), String> {
        self.hierarchy()?;
        self.family()?;
        if self.n_c == 0 {
            return Err("n_c must be at least 1".into());
        }
        if self.workers == 0 {
            return Err("workers must be at least 1".into());
        }
        if !(self.seconds_per_step > 0.0 && self.seconds_per_step.is_finite()) {
            return Err(format!("seconds_per_step must be positive, got {}", self.seconds_per_step));
        }
        if self.parareal.enabled && self.parareal.dt_coarse.is_none() && self.hierarchy.len() < 3 {
            return Err("parareal needs at least three levels or an explicit dt_coarse".into());
        }
        if self.parareal.enabled && !(self.parareal.tolerance >= 0.0) {
            return Err(format!("parareal tolerance must be non-negative, got {}", self.parareal.tolerance));
        }
        if let Some(l) = self.level {
            if l >= self.hierarchy.len() {
                return Err(format!("level {l} outside hierarchy of {} levels", self.hierarchy.len()));
            }
        }
        match self.estimator {
            EstimatorChoice::Mc => match &self.policy.samples {
                Some(n) if n.len() == 1 && n[0] >= 1 => {}
                _ => return Err("mc needs policy.samples with exactly one positive count".into()),
            },
            EstimatorChoice::Mlmc => {
                if self.policy.warmup < 2 {
                    return Err("policy.warmup must be at least 2".into());
                }
                match (&self.policy.samples, self.policy.rmse_target) {
                    (Some(n), _) if n.len() != self.hierarchy.len() => {
                        return Err(format!(
                            "policy.samples has {} entries for {} levels",
                            n.len(),
                            self.hierarchy.len()
                        ))
                    }
                    (None, None) => return Err("mlmc needs policy.rmse_target or policy.samples".into()),
                    (None, Some(eps)) if !(eps > 0.0) => return Err(format!("rmse_target must be positive, got {eps}")),
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn hierarchy(&self) -> Result<Hierarchy, String> {
        Hierarchy::strictly_decreasing(&self.hierarchy).map_err(|e| format!("hierarchy: {e}"))
    }

    pub fn family(&self) -> Result<Box<dyn ModelFamily>, String> {
        let err = |e: mlmc_parareal::Error| format!("model: {e}");
        let family: Box<dyn ModelFamily> = match self.model {
            ModelChoice::Steinmetz => {
                let values = self.nominal.clone().unwrap_or_else(|| STEINMETZ_NOMINAL.to_vec());
                let nominal = ParameterVector::new(ModelId::Steinmetz, values).map_err(err)?;
                Box::new(SteinmetzFamily {
                    input: UncertainInput::new(nominal, self.halfwidth).map_err(err)?,
                    drive: self.drive,
                    horizon: self.horizon,
                })
            }
            ModelChoice::Synthetic => {
                let values = self.nominal.clone().unwrap_or_else(|| vec![1.0; SYNTHETIC_BARS]);
                let nominal = ParameterVector::new(ModelId::SyntheticMachine, values).map_err(err)?;
                Box::new(SyntheticFamily {
                    input: UncertainInput::new(nominal, self.halfwidth).map_err(err)?,
                    n_dof: self.synthetic.n_dof,
                    source_amplitude: self.synthetic.source_amplitude,
                    horizon: self.horizon,
                })
            }
        };
        family.build(family.input().nominal()).map_err(err)?;
        for (l, &dt) in self.hierarchy.iter().enumerate() {
            mlmc_parareal::timeint::step_count(0.0, self.horizon, dt).map_err(|e| format!("level {l}: {e}"))?;
        }
        Ok(family)
    }

    pub fn sampling_policy(&self) -> SamplingPolicy {
        let target = match (&self.policy.samples, self.policy.rmse_target) {
            (Some(n), _) => SampleTarget::Fixed(n.clone()),
            (None, eps) => SampleTarget::Rmse(eps.unwrap_or(1e-2)),
        };
        SamplingPolicy {
            warmup: self.policy.warmup,
            target,
        }
    }

    pub fn parareal_options(&self) -> Option<PararealOptions> {
        self.parareal.enabled.then(|| PararealOptions {
            tolerance: self.parareal.tolerance,
            max_iterations: self.parareal.max_iterations,
            dt_coarse: self.parareal.dt_coarse,
            subintervals: self.parareal.subintervals,
        })
    }

    pub fn executor(&self) -> Executor {
        match self.mode {
            Mode::Simulated => Executor::simulated(self.n_c).with_workers(self.workers),
            Mode::Real => Executor::real(self.n_c, self.workers),
        }
    }
}
