use nalgebra::{DMatrix, DVector};

use super::{
    build_steinmetz, build_synthetic_machine, Drive, Forcing, LinearSystemModel, ModelId,
    ParameterVector, QoiDefinition, QoiKind, UncertainInput, Waveform, STEINMETZ_NOMINAL,
};
use crate::error::Result;

/// A parametrized model: an input distribution plus a builder for each realization.
pub trait ModelFamily: Sync {
    fn input(&self) -> &UncertainInput;

    fn build(&self, params: &ParameterVector) -> Result<LinearSystemModel>;

    fn horizon(&self) -> f64;
}

#[derive(Debug, Clone)]
pub struct SteinmetzFamily {
    pub input: UncertainInput,
    pub drive: Drive,
    pub horizon: f64,
}

impl SteinmetzFamily {
    /// Nominal parameters with ±`halfwidth` relative uniform variation.
    pub fn nominal(halfwidth: f64, drive: Drive, horizon: f64) -> Result<Self> {
        let nominal = ParameterVector::new(ModelId::Steinmetz, STEINMETZ_NOMINAL.to_vec())?;
        Ok(Self {
            input: UncertainInput::new(nominal, halfwidth)?,
            drive,
            horizon,
        })
    }
}

impl ModelFamily for SteinmetzFamily {
    fn input(&self) -> &UncertainInput {
        &self.input
    }

    fn build(&self, params: &ParameterVector) -> Result<LinearSystemModel> {
        build_steinmetz(params, &self.drive, self.horizon)
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFamily {
    pub input: UncertainInput,
    pub n_dof: usize,
    pub source_amplitude: f64,
    pub horizon: f64,
}

impl SyntheticFamily {
    pub fn nominal(n_dof: usize, halfwidth: f64, source_amplitude: f64, horizon: f64) -> Result<Self> {
        let nominal = ParameterVector::new(ModelId::SyntheticMachine, vec![1.0; super::SYNTHETIC_BARS])?;
        Ok(Self {
            input: UncertainInput::new(nominal, halfwidth)?,
            n_dof,
            source_amplitude,
            horizon,
        })
    }
}

impl ModelFamily for SyntheticFamily {
    fn input(&self) -> &UncertainInput {
        &self.input
    }

    fn build(&self, params: &ParameterVector) -> Result<LinearSystemModel> {
        build_synthetic_machine(self.n_dof, params, self.source_amplitude, self.horizon)
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// `da/dt = −rate·a`, `a(0) = ξ`, with QoI `Σ a(t_{k+1})·Δt`.
///
/// The QoI is linear in `ξ`; with `rate = 0` it equals `ξ·T` on every level.
#[derive(Debug, Clone)]
pub struct ScalarToyFamily {
    pub input: UncertainInput,
    pub rate: f64,
    pub horizon: f64,
}

impl ScalarToyFamily {
    pub fn new(nominal: f64, halfwidth: f64, rate: f64, horizon: f64) -> Result<Self> {
        let nominal = ParameterVector::new(ModelId::ScalarToy, vec![nominal])?;
        Ok(Self {
            input: UncertainInput::new(nominal, halfwidth)?,
            rate,
            horizon,
        })
    }
}

impl ModelFamily for ScalarToyFamily {
    fn input(&self) -> &UncertainInput {
        &self.input
    }

    fn build(&self, params: &ParameterVector) -> Result<LinearSystemModel> {
        params.validate()?;
        LinearSystemModel::new(
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, self.rate),
            Forcing::zero(1),
            DVector::from_column_slice(params.values()),
            QoiDefinition {
                kind: QoiKind::ElectricalEnergy {
                    voltage: Waveform::Constant { value: 1.0 },
                    current_index: 0,
                },
                horizon: self.horizon,
            },
        )
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }
}
