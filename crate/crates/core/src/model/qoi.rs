use super::{LinearSystemModel, QoiKind};
use crate::error::{Error, Result};
use crate::timeint::Trajectory;

const HORIZON_TOL: f64 = 1e-9;

/// Evaluates the model's quantity of interest over `[t₀, T]` of a uniform trajectory.
///
/// Steps beyond the horizon are ignored. Both rules sample the integrand at the
/// right end of each step, consistent with implicit Euler.
pub fn evaluate_qoi(model: &LinearSystemModel, trajectory: &Trajectory) -> Result<f64> {
    let horizon = model.horizon();
    let times = trajectory.times();
    let end = *times.last().expect("trajectory has at least one point");
    let tol = HORIZON_TOL * horizon.abs().max(1.0);
    if end < horizon - tol {
        return Err(Error::ShortTrajectory { end, horizon });
    }
    let steps = times[1..].iter().take_while(|&&t| t <= horizon + tol).count();
    let dt = trajectory.dt();
    let states = trajectory.states();

    let value = match &model.qoi().kind {
        QoiKind::ElectricalEnergy {
            voltage,
            current_index,
        } => (0..steps)
            .map(|k| voltage.eval(times[k + 1]) * states[k + 1][*current_index] * dt)
            .sum(),
        QoiKind::MeanJouleLoss => {
            let mass = model.mass();
            let total: f64 = (0..steps)
                .map(|k| {
                    let d = (&states[k + 1] - &states[k]) / dt;
                    d.dot(&(mass * &d)) * dt
                })
                .sum();
            total / horizon
        }
    };
    Ok(value)
}
