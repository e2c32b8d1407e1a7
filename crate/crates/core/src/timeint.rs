//! Implicit Euler on uniform grids.
//!
//! Each step solves `(M + Δt·K)·a_{k+1} = M·a_k + Δt·r(t_{k+1})`. The matrix is
//! factored once per `(model, Δt)` and reused for every step.
//!
//! When `t0` is itself a multiple of `dt`, step times are computed as
//! `(i₀ + k)·dt` from the global grid index. Solves over adjacent grid-aligned
//! intervals therefore evaluate the forcing at bitwise identical times, and
//! composing them reproduces a single solve over the union exactly.

use nalgebra::{DMatrix, DVector, LU, Dyn};

use crate::error::{Error, Result};
use crate::model::LinearSystemModel;

/// Relative tolerance for a time span to count as an integer number of steps.
pub const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    dt: f64,
}

impl Trajectory {
    /// Builds a trajectory from raw parts; used by tests and by concatenation.
    pub fn from_parts(times: Vec<f64>, states: Vec<DVector<f64>>, dt: f64) -> Self {
        assert_eq!(times.len(), states.len(), "one state per time");
        assert!(!times.is_empty(), "trajectory needs an initial point");
        Self { times, states, dt }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("non-empty")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub(crate) fn extend_from(&mut self, other: Trajectory) {
        self.times.extend(other.times.into_iter().skip(1));
        self.states.extend(other.states.into_iter().skip(1));
    }
}

/// Number of steps of size `dt` covering `[t0, t1]`, or an error if the grid does not land on `t1`.
pub fn step_count(t0: f64, t1: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Grid(format!("dt must be positive, got {dt}")));
    }
    if !(t1 >= t0) {
        return Err(Error::Grid(format!("t1 = {t1} precedes t0 = {t0}")));
    }
    let ratio = (t1 - t0) / dt;
    let n = ratio.round();
    if (ratio - n).abs() > GRID_TOL * n.max(1.0) {
        return Err(Error::Grid(format!(
            "[{t0}, {t1}] is not a whole number of steps of {dt} ({ratio} steps)"
        )));
    }
    Ok(n as usize)
}

fn grid_index(t: f64, dt: f64) -> Option<f64> {
    let ratio = t / dt;
    let i = ratio.round();
    ((ratio - i).abs() <= GRID_TOL * i.abs().max(1.0)).then_some(i)
}

/// Factored implicit Euler step for one `(model, dt)` pair.
pub struct Stepper<'a> {
    model: &'a LinearSystemModel,
    dt: f64,
    lu: LU<f64, Dyn, Dyn>,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a LinearSystemModel, dt: f64) -> Result<Self> {
        let system: DMatrix<f64> = model.mass() + model.stiffness() * dt;
        let lu = system.lu();
        if !lu.is_invertible() {
            return Err(Error::SingularStep { step: 1 });
        }
        Ok(Self { model, dt, lu })
    }

    /// Advances `a` from `t_next − dt` to `t_next`.
    pub fn step(&self, a: &DVector<f64>, t_next: f64, step: usize) -> Result<DVector<f64>> {
        let mut rhs = if self.model.mass_is_identity() {
            a.clone()
        } else {
            self.model.mass() * a
        };
        let forcing = self.model.forcing();
        let w = forcing.waveform.eval(t_next);
        if w != 0.0 {
            rhs.axpy(self.dt * w, &forcing.profile, 1.0);
        }
        if !self.lu.solve_mut(&mut rhs) {
            return Err(Error::SingularStep { step });
        }
        Ok(rhs)
    }
}

fn check_state(model: &LinearSystemModel, x0: &DVector<f64>) -> Result<()> {
    if x0.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, model has dim {}",
            x0.len(),
            model.dim()
        )));
    }
    Ok(())
}

fn step_times(t0: f64, dt: f64, n: usize) -> impl Iterator<Item = f64> {
    let base = grid_index(t0, dt);
    (1..=n).map(move |k| match base {
        Some(i0) => (i0 + k as f64) * dt,
        None => t0 + k as f64 * dt,
    })
}

pub fn implicit_euler_solve(
    model: &LinearSystemModel,
    t0: f64,
    t1: f64,
    dt: f64,
    x0: &DVector<f64>,
) -> Result<Trajectory> {
    check_state(model, x0)?;
    let n = step_count(t0, t1, dt)?;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(t0);
    states.push(x0.clone());
    if n > 0 {
        let stepper = Stepper::new(model, dt)?;
        for (k, t) in step_times(t0, dt, n).enumerate() {
            let next = stepper.step(&states[k], t, k + 1)?;
            times.push(t);
            states.push(next);
        }
    }
    Ok(Trajectory { times, states, dt })
}

/// Terminal state of [`implicit_euler_solve`] without storing the trajectory.
pub fn propagate(
    model: &LinearSystemModel,
    t_start: f64,
    t_end: f64,
    dt: f64,
    x0: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_state(model, x0)?;
    let n = step_count(t_start, t_end, dt)?;
    let mut a = x0.clone();
    if n > 0 {
        let stepper = Stepper::new(model, dt)?;
        for (k, t) in step_times(t_start, dt, n).enumerate() {
            a = stepper.step(&a, t, k + 1)?;
        }
    }
    Ok(a)
}
