//! Synthetic eddy-current-like system with one uncertain conductivity per rotor bar.
//!
//! The state is split into [`SYNTHETIC_BARS`] equal blocks. Block `j` of the
//! mass matrix is the 1D linear-element mass block `h·tridiag(1/6, 2/3, 1/6)`
//! scaled by `σ_nom·s_j`. The stiffness is the fixed stencil
//! `tridiag(−1, 2, −1)/h²` with `h = 1/n`, and the source is
//! `sin(2π·50·t)·φ` with the mirror-symmetric profile `φ_i = sin(π(i + ½)/n)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{Forcing, LinearSystemModel, ModelId, ParameterVector, QoiDefinition, QoiKind, Waveform};
use crate::error::{Error, Result};

pub const SYNTHETIC_BARS: usize = 32;

/// Nominal rotor bar conductivity in S/m.
pub const SIGMA_NOMINAL: f64 = 26.7e6;

const SOURCE_FREQUENCY: f64 = 50.0;

pub fn build_synthetic_machine(
    n_dof: usize,
    bar_scales: &ParameterVector,
    source_amplitude: f64,
    horizon: f64,
) -> Result<LinearSystemModel> {
    if bar_scales.model_id() != ModelId::SyntheticMachine {
        return Err(Error::InvalidInput(format!(
            "expected synthetic machine parameters, got {}",
            bar_scales.model_id().name()
        )));
    }
    bar_scales.validate()?;
    if n_dof < 2 * SYNTHETIC_BARS || n_dof % SYNTHETIC_BARS != 0 {
        return Err(Error::InvalidInput(format!(
            "n_dof must be at least {} and divisible by {SYNTHETIC_BARS}, got {n_dof}",
            2 * SYNTHETIC_BARS
        )));
    }
    if !source_amplitude.is_finite() {
        return Err(Error::InvalidInput("source amplitude must be finite".into()));
    }

    let n = n_dof;
    let block = n / SYNTHETIC_BARS;
    let h = 1.0 / n as f64;

    let mut mass = DMatrix::zeros(n, n);
    for (j, &scale) in bar_scales.values().iter().enumerate() {
        let sigma = SIGMA_NOMINAL * scale;
        let start = j * block;
        for i in start..start + block {
            mass[(i, i)] = sigma * h * (2.0 / 3.0);
            if i + 1 < start + block {
                let off = sigma * h / 6.0;
                mass[(i, i + 1)] = off;
                mass[(i + 1, i)] = off;
            }
        }
    }

    let inv_h2 = 1.0 / (h * h);
    let mut stiffness = DMatrix::zeros(n, n);
    for i in 0..n {
        stiffness[(i, i)] = 2.0 * inv_h2;
        if i + 1 < n {
            stiffness[(i, i + 1)] = -inv_h2;
            stiffness[(i + 1, i)] = -inv_h2;
        }
    }

    let profile = DVector::from_fn(n, |i, _| (PI * (i as f64 + 0.5) / n as f64).sin());
    let forcing = Forcing {
        profile,
        waveform: Waveform::Sine {
            amplitude: source_amplitude,
            frequency: SOURCE_FREQUENCY,
            phase: 0.0,
        },
    };

    LinearSystemModel::new(
        mass,
        stiffness,
        forcing,
        DVector::zeros(n),
        QoiDefinition {
            kind: QoiKind::MeanJouleLoss,
            horizon,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scales(v: Vec<f64>) -> ParameterVector {
        ParameterVector::new(ModelId::SyntheticMachine, v).unwrap()
    }

    #[test]
    fn unit_scales_give_nominal_mass() {
        let m = build_synthetic_machine(64, &scales(vec![1.0; 32]), 1.0, 0.02).unwrap();
        let h = 1.0 / 64.0;
        assert_eq!(m.dim(), 64);
        assert_eq!(m.mass()[(0, 0)], SIGMA_NOMINAL * h * (2.0 / 3.0));
        assert_eq!(m.mass()[(0, 1)], SIGMA_NOMINAL * h / 6.0);
        // blocks of two: no coupling across the block boundary
        assert_eq!(m.mass()[(1, 2)], 0.0);
        assert_eq!(m.stiffness()[(3, 3)], 2.0 * 64.0 * 64.0);
        assert_eq!(m.stiffness()[(3, 4)], -64.0 * 64.0);
        assert!(m.mass_condition().is_finite());
    }

    #[test]
    fn perturbed_mass_within_five_percent() {
        let v: Vec<f64> = (0..32).map(|j| 0.95 + 0.1 * (j as f64) / 31.0).collect();
        let nominal = build_synthetic_machine(128, &scales(vec![1.0; 32]), 1.0, 0.02).unwrap();
        let pert = build_synthetic_machine(128, &scales(v), 1.0, 0.02).unwrap();
        for (a, b) in pert.mass().iter().zip(nominal.mass().iter()) {
            if *b != 0.0 {
                let rel = (a - b).abs() / b.abs();
                assert!(rel <= 0.05 + 1e-12, "rel {rel}");
            } else {
                assert_eq!(*a, 0.0);
            }
        }
    }

    #[test]
    fn dof_constraints() {
        let s = scales(vec![1.0; 32]);
        assert!(build_synthetic_machine(32, &s, 1.0, 0.02).is_err());
        assert!(build_synthetic_machine(65, &s, 1.0, 0.02).is_err());
        assert!(build_synthetic_machine(96, &s, 1.0, 0.02).is_ok());
    }

    #[test]
    fn stiffness_is_symmetric() {
        let m = build_synthetic_machine(64, &scales(vec![1.0; 32]), 1.0, 0.02).unwrap();
        assert_eq!(m.stiffness(), &m.stiffness().transpose());
        assert_eq!(m.mass(), &m.mass().transpose());
    }
}
