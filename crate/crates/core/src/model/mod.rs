//! Uncertain machine models in semi-discrete form `M·da/dt + K·a = r(t)`.

mod family;
mod qoi;
mod steinmetz;
mod synthetic;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

pub use family::{ModelFamily, ScalarToyFamily, SteinmetzFamily, SyntheticFamily};
pub use qoi::evaluate_qoi;
pub use steinmetz::{build_steinmetz, Drive, STEINMETZ_NOMINAL, STEINMETZ_PARAMETERS};
pub use synthetic::{build_synthetic_machine, SIGMA_NOMINAL, SYNTHETIC_BARS};

/// Largest accepted 1-norm condition estimate of a mass matrix.
pub const MASS_CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    Steinmetz,
    SyntheticMachine,
    /// Scalar test model `da/dt = -rate·a`, `a(0) = ξ`.
    ScalarToy,
}

impl ModelId {
    pub fn name(self) -> &'static str {
        match self {
            ModelId::Steinmetz => "steinmetz",
            ModelId::SyntheticMachine => "synthetic_machine",
            ModelId::ScalarToy => "scalar_toy",
        }
    }

    pub fn parameter_count(self) -> usize {
        match self {
            ModelId::Steinmetz => STEINMETZ_PARAMETERS.len(),
            ModelId::SyntheticMachine => SYNTHETIC_BARS,
            ModelId::ScalarToy => 1,
        }
    }

    pub fn parameter_name(self, i: usize) -> String {
        match self {
            ModelId::Steinmetz => STEINMETZ_PARAMETERS[i].to_string(),
            ModelId::SyntheticMachine => format!("bar_scale[{i}]"),
            ModelId::ScalarToy => "xi".to_string(),
        }
    }
}

/// One realization of the uncertain parameters of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    model_id: ModelId,
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(model_id: ModelId, values: Vec<f64>) -> Result<Self> {
        let p = Self { model_id, values };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.model_id.parameter_count();
        if self.values.len() != expected {
            return Err(Error::ParameterCount {
                model: self.model_id.name(),
                expected,
                actual: self.values.len(),
            });
        }
        for (i, &v) in self.values.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: self.model_id.parameter_name(i),
                    value: v,
                });
            }
        }
        Ok(())
    }

    pub fn model_id(&self) -> ModelId {
        self.model_id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Independent uniform variation of every parameter around its nominal value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainInput {
    nominal: ParameterVector,
    relative_halfwidth: f64,
}

impl UncertainInput {
    pub fn new(nominal: ParameterVector, relative_halfwidth: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&relative_halfwidth) {
            return Err(Error::InvalidInput(format!(
                "relative halfwidth must lie in [0, 1), got {relative_halfwidth}"
            )));
        }
        nominal.validate()?;
        Ok(Self {
            nominal,
            relative_halfwidth,
        })
    }

    pub fn nominal(&self) -> &ParameterVector {
        &self.nominal
    }

    pub fn relative_halfwidth(&self) -> f64 {
        self.relative_halfwidth
    }
}

/// Draws `value_i = nominal_i·(1 + h·(2u_i − 1))` with `u_i ~ U[0, 1)` from the keyed stream.
pub fn draw_parameters(input: &UncertainInput, stream: &RandomStream) -> ParameterVector {
    let mut rng = stream.rng();
    let h = input.relative_halfwidth;
    let values = input
        .nominal
        .values
        .iter()
        .map(|&nominal| {
            let u: f64 = rng.gen();
            nominal * (1.0 + h * (2.0 * u - 1.0))
        })
        .collect();
    ParameterVector {
        model_id: input.nominal.model_id,
        values,
    }
}

/// Scalar time signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Waveform {
    Constant { value: f64 },
    Sine { amplitude: f64, frequency: f64, phase: f64 },
}

impl Waveform {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Waveform::Constant { value } => value,
            Waveform::Sine {
                amplitude,
                frequency,
                phase,
            } => amplitude * (2.0 * PI * frequency * t + phase).sin(),
        }
    }
}

/// Separable forcing `r(t) = w(t)·φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    pub profile: DVector<f64>,
    pub waveform: Waveform,
}

impl Forcing {
    pub fn zero(dim: usize) -> Self {
        Self {
            profile: DVector::zeros(dim),
            waveform: Waveform::Constant { value: 0.0 },
        }
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        &self.profile * self.waveform.eval(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QoiKind {
    /// `Σ_k u(t_{k+1})·x_j(t_{k+1})·Δt` for drive voltage `u` and current state `j`.
    ElectricalEnergy {
        voltage: Waveform,
        current_index: usize,
    },
    /// `(1/T)·Σ_k d_kᵀ M d_k Δt` with `d_k = (a_{k+1} − a_k)/Δt`.
    MeanJouleLoss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QoiDefinition {
    pub kind: QoiKind,
    pub horizon: f64,
}

/// The affine linear system `M·da/dt + K·a = r(t)`, `a(0) = x₀`, and its QoI.
#[derive(Debug, Clone)]
pub struct LinearSystemModel {
    mass: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    forcing: Forcing,
    initial_state: DVector<f64>,
    qoi: QoiDefinition,
    mass_is_identity: bool,
    mass_condition: f64,
}

impl LinearSystemModel {
    pub fn new(
        mass: DMatrix<f64>,
        stiffness: DMatrix<f64>,
        forcing: Forcing,
        initial_state: DVector<f64>,
        qoi: QoiDefinition,
    ) -> Result<Self> {
        let dim = initial_state.len();
        if dim == 0 {
            return Err(Error::Dimension("empty state".into()));
        }
        if mass.shape() != (dim, dim) || stiffness.shape() != (dim, dim) {
            return Err(Error::Dimension(format!(
                "mass {:?} and stiffness {:?} must be {dim}x{dim}",
                mass.shape(),
                stiffness.shape()
            )));
        }
        if forcing.profile.len() != dim {
            return Err(Error::Dimension(format!(
                "forcing has length {}, state has {dim}",
                forcing.profile.len()
            )));
        }
        if !(qoi.horizon > 0.0 && qoi.horizon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "QoI horizon must be positive, got {}",
                qoi.horizon
            )));
        }
        if let QoiKind::ElectricalEnergy { current_index, .. } = qoi.kind {
            if current_index >= dim {
                return Err(Error::Dimension(format!(
                    "current index {current_index} out of range for dim {dim}"
                )));
            }
        }
        let mass_condition = condition_estimate(&mass);
        if !(mass_condition.is_finite() && mass_condition <= MASS_CONDITION_LIMIT) {
            return Err(Error::IllConditionedMass {
                condition: mass_condition,
            });
        }
        let mass_is_identity = mass == DMatrix::identity(dim, dim);
        Ok(Self {
            mass,
            stiffness,
            forcing,
            initial_state,
            qoi,
            mass_is_identity,
            mass_condition,
        })
    }

    pub fn dim(&self) -> usize {
        self.initial_state.len()
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    pub fn forcing(&self) -> &Forcing {
        &self.forcing
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.initial_state
    }

    pub fn qoi(&self) -> &QoiDefinition {
        &self.qoi
    }

    pub fn horizon(&self) -> f64 {
        self.qoi.horizon
    }

    pub fn mass_is_identity(&self) -> bool {
        self.mass_is_identity
    }

    /// 1-norm condition estimate `‖M‖₁·‖M⁻¹‖₁` computed at construction.
    pub fn mass_condition(&self) -> f64 {
        self.mass_condition
    }
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    match m.clone().lu().try_inverse() {
        Some(inv) => one_norm(m) * one_norm(&inv),
        None => f64::INFINITY,
    }
}

/// One member of a time-step hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub level: usize,
    pub dt: f64,
}

/// Ordered time-step sizes, coarsest first.
///
/// Step sizes must be non-increasing; equal neighbours are accepted so that
/// degenerate hierarchies can be built in tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    levels: Vec<LevelSpec>,
}

impl Hierarchy {
    pub fn new(dts: &[f64]) -> Result<Self> {
        if dts.is_empty() {
            return Err(Error::InvalidInput("hierarchy needs at least one level".into()));
        }
        for (l, &dt) in dts.iter().enumerate() {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::InvalidInput(format!("dt at level {l} must be positive")));
            }
            if l > 0 && dt > dts[l - 1] {
                return Err(Error::InvalidInput(format!(
                    "dt must not increase with level (level {l}: {dt} > {})",
                    dts[l - 1]
                )));
            }
        }
        Ok(Self {
            levels: dts
                .iter()
                .enumerate()
                .map(|(level, &dt)| LevelSpec { level, dt })
                .collect(),
        })
    }

    /// As [`Hierarchy::new`] but rejects equal neighbouring step sizes.
    pub fn strictly_decreasing(dts: &[f64]) -> Result<Self> {
        let h = Self::new(dts)?;
        if dts.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidInput("dt must strictly decrease with level".into()));
        }
        Ok(h)
    }

    pub fn levels(&self) -> &[LevelSpec] {
        &self.levels
    }

    pub fn dt(&self, level: usize) -> f64 {
        self.levels[level].dt
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Index `L` of the finest level.
    pub fn finest(&self) -> usize {
        self.levels.len() - 1
    }
}
