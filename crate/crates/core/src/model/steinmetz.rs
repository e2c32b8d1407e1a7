//! Single-cage Steinmetz equivalent circuit of an induction machine.
//!
//! Topology: the stator branch (R₁, L_σ1) feeds the parallel combination of
//! the iron-loss resistor R_fe, the main inductance L_h and the rotor branch
//! (L_σ2, R₂/s). States are `x = (i₁, i₂, λ_h)`. With the magnetizing voltage
//! `v_m = R_fe·(i₁ − λ_h/L_h − i₂)`:
//!
//! ```text
//! L_σ1·di₁/dt = u − R₁·i₁ − v_m
//! L_σ2·di₂/dt = v_m − (R₂/s)·i₂
//!      dλ_h/dt = v_m
//! ```

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Forcing, LinearSystemModel, ParameterVector, QoiDefinition, QoiKind, Waveform};
use crate::error::{Error, Result};
use crate::model::ModelId;

pub const STEINMETZ_PARAMETERS: [&str; 6] = ["R1", "R2", "R_fe", "L_sigma1", "L_sigma2", "L_h"];

/// Nominal machine parameters, ordered as [`STEINMETZ_PARAMETERS`] (Ω, Ω, Ω, H, H, H).
pub const STEINMETZ_NOMINAL: [f64; 6] = [
    1.111140e-01,
    7.158602e-02,
    1.736354e+06,
    1.649983e-03,
    1.063014e-03,
    6.407774e-02,
];

/// Sinusoidal stator drive and rotor slip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Drive {
    /// Peak voltage in V.
    pub amplitude: f64,
    /// Electrical frequency in Hz.
    pub frequency: f64,
    pub slip: f64,
}

impl Default for Drive {
    fn default() -> Self {
        Self {
            amplitude: 230.0 * SQRT_2,
            frequency: 50.0,
            slip: 0.05,
        }
    }
}

impl Drive {
    pub fn voltage(&self) -> Waveform {
        Waveform::Sine {
            amplitude: self.amplitude,
            frequency: self.frequency,
            phase: 0.0,
        }
    }
}

pub fn build_steinmetz(
    params: &ParameterVector,
    drive: &Drive,
    horizon: f64,
) -> Result<LinearSystemModel> {
    if params.model_id() != ModelId::Steinmetz {
        return Err(Error::InvalidInput(format!(
            "expected steinmetz parameters, got {}",
            params.model_id().name()
        )));
    }
    params.validate()?;
    if !(drive.amplitude >= 0.0 && drive.amplitude.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "drive amplitude must be non-negative, got {}",
            drive.amplitude
        )));
    }
    if !(drive.frequency > 0.0 && drive.frequency.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "drive frequency must be positive, got {}",
            drive.frequency
        )));
    }
    if !(drive.slip > 0.0 && drive.slip <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "slip must lie in (0, 1], got {}",
            drive.slip
        )));
    }

    let &[r1, r2, r_fe, l_s1, l_s2, l_h] = params.values() else {
        unreachable!("validated length");
    };
    let r_rot = r2 / drive.slip;

    // dx/dt = A·x + b·u(t); the system form uses K = −A.
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(3, 3, &[
        -(r1 + r_fe) / l_s1,  r_fe / l_s1,              r_fe / (l_h * l_s1),
         r_fe / l_s2,        -(r_fe + r_rot) / l_s2,   -r_fe / (l_h * l_s2),
         r_fe,               -r_fe,                    -r_fe / l_h,
    ]);
    let forcing = Forcing {
        profile: DVector::from_column_slice(&[1.0 / l_s1, 0.0, 0.0]),
        waveform: drive.voltage(),
    };
    LinearSystemModel::new(
        DMatrix::identity(3, 3),
        -a,
        forcing,
        DVector::zeros(3),
        QoiDefinition {
            kind: QoiKind::ElectricalEnergy {
                voltage: drive.voltage(),
                current_index: 0,
            },
            horizon,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nominal() -> ParameterVector {
        ParameterVector::new(ModelId::Steinmetz, STEINMETZ_NOMINAL.to_vec()).unwrap()
    }

    #[test]
    fn nominal_system_shape() {
        let m = build_steinmetz(&nominal(), &Drive::default(), 1.0).unwrap();
        assert_eq!(m.dim(), 3);
        assert!(m.mass_is_identity());
        assert!(m.mass_condition().is_finite());
        assert_eq!(m.initial_state(), &DVector::zeros(3));
    }

    #[test]
    fn magnetizing_voltage_consistency() {
        // Row 3 of A is v_m itself; rows 1 and 2 follow from it.
        let p = nominal();
        let v = p.values();
        let m = build_steinmetz(&p, &Drive::default(), 1.0).unwrap();
        let x = DVector::from_column_slice(&[2.0, -1.0, 0.03]);
        let dx = -(m.stiffness() * &x);
        let vm = v[2] * (x[0] - x[2] / v[5] - x[1]);
        assert!((dx[2] - vm).abs() <= 1e-9 * vm.abs());
        let di1 = (-v[0] * x[0] - vm) / v[3];
        assert!((dx[0] - di1).abs() <= 1e-9 * di1.abs(), "{} {}", dx[0], di1);
        let di2 = (vm - v[1] / 0.05 * x[1]) / v[4];
        assert!((dx[1] - di2).abs() <= 1e-9 * di2.abs());
    }

    #[test]
    fn rejects_bad_drive() {
        let p = nominal();
        for d in [
            Drive { amplitude: -1.0, ..Drive::default() },
            Drive { frequency: 0.0, ..Drive::default() },
            Drive { slip: 0.0, ..Drive::default() },
            Drive { slip: 1.5, ..Drive::default() },
        ] {
            assert!(build_steinmetz(&p, &d, 1.0).is_err());
        }
        let stationary = Drive { slip: 1.0, ..Drive::default() };
        assert!(build_steinmetz(&p, &stationary, 1.0).is_ok());
    }

    #[test]
    fn rejects_foreign_parameters() {
        let p = ParameterVector::new(ModelId::ScalarToy, vec![1.0]).unwrap();
        assert!(build_steinmetz(&p, &Drive::default(), 1.0).is_err());
    }
}
