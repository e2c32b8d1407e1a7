//! Parareal with implicit Euler fine and coarse propagators.
//!
//! Boundaries `T_n = t₀ + n·(t₁ − t₀)/M`. Iteration `k` (1-based):
//!
//! 1. coarse sweep on intervals `k..M−1`. For `k = 1` this is the initial
//!    prediction `U_n = C(U_{n−1})`; afterwards it is the correction
//!    `U_n ← F_n + (C(U_{n−1}^new) − C(U_{n−1}^old))`. `U_{k−1}` is set to the
//!    exact fine value `F_{k−1}` without a coarse solve.
//! 2. fine solves on intervals `k..M`, concurrently.
//! 3. convergence check on the jumps `F_n − U_n` at boundaries `k..M−1`.
//!
//! Iteration `k` therefore performs `M − k + 1` fine and `M − k` coarse solves.
//! Boundaries before `k` are frozen and equal the sequential fine solution
//! bitwise, which also bounds the iteration count by `M`.

use std::thread;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LinearSystemModel;
use crate::timeint::{implicit_euler_solve, propagate, step_count, Trajectory};

/// Lower bound on the reference norm in [`defect`].
pub const DEFECT_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PararealConfig {
    pub subintervals: usize,
    pub dt_fine: f64,
    pub dt_coarse: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Threads used for the fine sweep; does not affect results.
    pub workers: usize,
}

impl PararealConfig {
    /// Configuration with `max_iterations = subintervals` and a single worker.
    pub fn new(subintervals: usize, dt_fine: f64, dt_coarse: f64, tolerance: f64) -> Self {
        Self {
            subintervals,
            dt_fine,
            dt_coarse,
            tolerance,
            max_iterations: subintervals,
            workers: 1,
        }
    }

    pub fn with_max_iterations(mut self, k_max: usize) -> Self {
        self.max_iterations = k_max;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    /// Checks the configuration against the interval `[t0, t1]`.
    pub fn validate(&self, t0: f64, t1: f64) -> Result<()> {
        let m = self.subintervals;
        if m == 0 {
            return Err(Error::Grid("need at least one sub-interval".into()));
        }
        if !(1..=m).contains(&self.max_iterations) {
            return Err(Error::Grid(format!(
                "max_iterations must lie in 1..={m}, got {}",
                self.max_iterations
            )));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "tolerance must be non-negative, got {}",
                self.tolerance
            )));
        }
        if !(self.dt_coarse >= self.dt_fine) {
            return Err(Error::Grid(format!(
                "coarse step {} is smaller than fine step {}",
                self.dt_coarse, self.dt_fine
            )));
        }
        if !(t1 > t0) {
            return Err(Error::Grid(format!("empty interval [{t0}, {t1}]")));
        }
        let len = (t1 - t0) / m as f64;
        step_count(0.0, len, self.dt_fine)?;
        step_count(0.0, len, self.dt_coarse)?;
        Ok(())
    }

    /// Whether `[t0, t1]` splits into `subintervals` pieces that fit both grids.
    pub fn fits(&self, t0: f64, t1: f64) -> bool {
        self.validate(t0, t1).is_ok()
    }
}

/// Propagator invocations per iteration.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PararealCost {
    pub fine_solves_per_iter: Vec<usize>,
    pub coarse_solves_per_iter: Vec<usize>,
}

impl PararealCost {
    pub fn fine_solves(&self) -> usize {
        self.fine_solves_per_iter.iter().sum()
    }

    pub fn coarse_solves(&self) -> usize {
        self.coarse_solves_per_iter.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct PararealResult {
    /// `U_0 = x₀` followed by the fine end states at `T_1..T_M`.
    pub boundary_states: Vec<DVector<f64>>,
    pub fine_trajectory: Trajectory,
    pub iterations: usize,
    pub defect_history: Vec<f64>,
    pub cost: PararealCost,
}

impl PararealResult {
    pub fn final_state(&self) -> &DVector<f64> {
        self.boundary_states.last().expect("non-empty")
    }
}

/// Largest relative change `‖next_n − prev_n‖₂ / max(‖next_n‖₂, floor)` over all entries.
///
/// Callers pass the boundaries `n ≥ 1`; an empty slice yields 0.
pub fn defect(prev: &[DVector<f64>], next: &[DVector<f64>]) -> f64 {
    assert_eq!(prev.len(), next.len(), "boundary lists differ in length");
    prev.iter()
        .zip(next)
        .map(|(p, n)| (n - p).norm() / n.norm().max(DEFECT_FLOOR))
        .fold(0.0, f64::max)
}

fn boundaries(t0: f64, t1: f64, m: usize) -> Vec<f64> {
    (0..=m)
        .map(|n| {
            if n == m {
                t1
            } else {
                t0 + (t1 - t0) * (n as f64 / m as f64)
            }
        })
        .collect()
}

fn wrap(interval: usize, iteration: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Parareal {
        interval,
        iteration,
        source: Box::new(e),
    }
}

/// Fine solves on intervals `first..=m` (1-based), spread over `workers` threads.
fn fine_sweep(
    model: &LinearSystemModel,
    times: &[f64],
    starts: &[DVector<f64>],
    first: usize,
    dt: f64,
    workers: usize,
    iteration: usize,
) -> Result<Vec<Trajectory>> {
    let m = times.len() - 1;
    let intervals: Vec<usize> = (first..=m).collect();
    let solve = |n: usize| {
        implicit_euler_solve(model, times[n - 1], times[n], dt, &starts[n - 1])
            .map_err(wrap(n, iteration))
    };
    let workers = workers.clamp(1, intervals.len().max(1));
    if workers == 1 {
        return intervals.into_iter().map(solve).collect();
    }
    let mut slots: Vec<Option<Result<Trajectory>>> = vec![None; intervals.len()];
    thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let intervals = &intervals;
                let solve = &solve;
                s.spawn(move || {
                    intervals
                        .iter()
                        .enumerate()
                        .skip(w)
                        .step_by(workers)
                        .map(|(slot, &n)| (slot, solve(n)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (slot, r) in h.join().expect("fine propagator thread panicked") {
                slots[slot] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every interval solved")).collect()
}

pub fn parareal_solve(
    model: &LinearSystemModel,
    t0: f64,
    t1: f64,
    x0: &DVector<f64>,
    cfg: &PararealConfig,
) -> Result<PararealResult> {
    cfg.validate(t0, t1)?;
    if x0.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, model has dim {}",
            x0.len(),
            model.dim()
        )));
    }
    let m = cfg.subintervals;
    let times = boundaries(t0, t1, m);
    let coarse = |n: usize, start: &DVector<f64>, iteration: usize| {
        propagate(model, times[n - 1], times[n], cfg.dt_coarse, start).map_err(wrap(n, iteration))
    };

    // starts[n] = U_n, the initial value of interval n + 1.
    let mut starts: Vec<DVector<f64>> = Vec::with_capacity(m);
    starts.push(x0.clone());
    // coarse_prev[n] = C(U_{n−1}) from the sweep that produced the current U_n.
    let mut coarse_prev: Vec<DVector<f64>> = vec![DVector::zeros(0); m];
    for n in 1..m {
        let c = coarse(n, &starts[n - 1], 1)?;
        coarse_prev[n] = c.clone();
        starts.push(c);
    }

    // ends[n] = F(T_n, T_{n−1}, U_{n−1}), latest value.
    let mut ends: Vec<DVector<f64>> = vec![DVector::zeros(0); m + 1];
    ends[0] = x0.clone();
    let mut pieces: Vec<Option<Trajectory>> = vec![None; m + 1];
    let mut cost = PararealCost::default();
    let mut defect_history = Vec::new();
    let mut iterations = 0;

    for k in 1..=cfg.max_iterations {
        let mut coarse_solves = 0;
        if k == 1 {
            coarse_solves = m - 1;
        } else {
            starts[k - 1] = ends[k - 1].clone();
            for n in k..m {
                let c = coarse(n, &starts[n - 1], k)?;
                let correction = &c - &coarse_prev[n];
                starts[n] = &ends[n] + correction;
                coarse_prev[n] = c;
                coarse_solves += 1;
            }
        }

        let trajectories = fine_sweep(model, &times, &starts, k, cfg.dt_fine, cfg.workers, k)?;
        let fine_solves = trajectories.len();
        for (offset, tr) in trajectories.into_iter().enumerate() {
            let n = k + offset;
            ends[n] = tr.final_state().clone();
            pieces[n] = Some(tr);
        }
        cost.fine_solves_per_iter.push(fine_solves);
        cost.coarse_solves_per_iter.push(coarse_solves);
        iterations = k;

        let d = defect(&starts[k.min(m)..m], &ends[k.min(m)..m]);
        defect_history.push(d);
        if d <= cfg.tolerance {
            break;
        }
    }

    let mut pieces = pieces.into_iter().skip(1).map(|p| p.expect("all intervals solved"));
    let mut fine_trajectory = pieces.next().expect("at least one interval");
    for piece in pieces {
        fine_trajectory.extend_from(piece);
    }

    Ok(PararealResult {
        boundary_states: ends,
        fine_trajectory,
        iterations,
        defect_history,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::model::{Forcing, QoiDefinition, QoiKind, Waveform};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn oscillator() -> LinearSystemModel {
        LinearSystemModel::new(
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, -3.0, 3.0, 0.5]),
            Forcing {
                profile: v(&[1.0, 0.0]),
                waveform: Waveform::Sine {
                    amplitude: 1.0,
                    frequency: 1.0,
                    phase: 0.0,
                },
            },
            v(&[1.0, 0.0]),
            QoiDefinition {
                kind: QoiKind::MeanJouleLoss,
                horizon: 2.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn defect_examples() {
        assert_eq!(defect(&[v(&[1.0, 2.0])], &[v(&[1.0, 2.0])]), 0.0);
        let d = defect(&[v(&[1.0, 0.0])], &[v(&[1.0, 1.0])]);
        assert!((d - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(defect(&[], &[]), 0.0);
    }

    #[test]
    fn single_interval_is_sequential() {
        let model = oscillator();
        let cfg = PararealConfig::new(1, 1e-3, 1e-2, 1e-8);
        let r = parareal_solve(&model, 0.0, 2.0, model.initial_state(), &cfg).unwrap();
        let seq = implicit_euler_solve(&model, 0.0, 2.0, 1e-3, model.initial_state()).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.fine_trajectory, seq);
        assert_eq!(r.cost.fine_solves_per_iter, vec![1]);
        assert_eq!(r.cost.coarse_solves_per_iter, vec![0]);
    }

    #[test]
    fn exact_after_m_iterations() {
        let model = oscillator();
        let seq = implicit_euler_solve(&model, 0.0, 2.0, 1e-3, model.initial_state()).unwrap();
        for m in [2, 4, 8] {
            let cfg = PararealConfig::new(m, 1e-3, 0.25, 0.0);
            let r = parareal_solve(&model, 0.0, 2.0, model.initial_state(), &cfg).unwrap();
            assert!(r.iterations <= m);
            let steps = 2000 / m;
            for n in 1..=m {
                assert_eq!(r.boundary_states[n], seq.states()[n * steps], "m={m} n={n}");
            }
            assert_eq!(r.fine_trajectory.states(), seq.states());
        }
    }

    #[test]
    fn cost_counts_follow_iteration_structure() {
        let model = oscillator();
        let m = 8;
        let cfg = PararealConfig::new(m, 1e-3, 0.25, 0.0);
        let r = parareal_solve(&model, 0.0, 2.0, model.initial_state(), &cfg).unwrap();
        for (i, (&f, &c)) in r
            .cost
            .fine_solves_per_iter
            .iter()
            .zip(&r.cost.coarse_solves_per_iter)
            .enumerate()
        {
            let k = i + 1;
            assert_eq!(f, m - k + 1);
            assert_eq!(c, m - k);
        }
    }

    #[test]
    fn frozen_prefix_is_exact_every_iteration() {
        let model = oscillator();
        let seq = implicit_euler_solve(&model, 0.0, 2.0, 1e-3, model.initial_state()).unwrap();
        let m = 8;
        for k_max in 1..=m {
            let cfg = PararealConfig::new(m, 1e-3, 0.25, 0.0).with_max_iterations(k_max);
            let r = parareal_solve(&model, 0.0, 2.0, model.initial_state(), &cfg).unwrap();
            for n in 1..=r.iterations {
                assert_eq!(r.boundary_states[n], seq.states()[n * 250]);
            }
        }
    }

    #[test]
    fn converges_before_m_with_tolerance() {
        let model = oscillator();
        let cfg = PararealConfig::new(8, 1e-3, 1e-2, 1e-6);
        let r = parareal_solve(&model, 0.0, 2.0, model.initial_state(), &cfg).unwrap();
        assert!(r.iterations < 8, "K = {}", r.iterations);
        assert!(*r.defect_history.last().unwrap() <= 1e-6);
        let seq = implicit_euler_solve(&model, 0.0, 2.0, 1e-3, model.initial_state()).unwrap();
        let err = (r.final_state() - seq.final_state()).norm() / seq.final_state().norm();
        assert!(err < 1e-5, "err {err}");
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let model = oscillator();
        let base = PararealConfig::new(8, 1e-3, 1e-2, 1e-9);
        let r1 = parareal_solve(&model, 0.0, 2.0, model.initial_state(), &base).unwrap();
        for w in [2, 3, 8] {
            let r = parareal_solve(&model, 0.0, 2.0, model.initial_state(), &base.with_workers(w)).unwrap();
            assert_eq!(r.iterations, r1.iterations);
            assert_eq!(r.boundary_states, r1.boundary_states);
            assert_eq!(r.defect_history, r1.defect_history);
        }
    }

    #[test]
    fn incompatible_grids_rejected() {
        let model = oscillator();
        let x0 = model.initial_state().clone();
        // 2.0 / 3 is not a multiple of 1e-2
        let cfg = PararealConfig::new(3, 1e-3, 1e-2, 1e-6);
        assert!(matches!(parareal_solve(&model, 0.0, 2.0, &x0, &cfg), Err(Error::Grid(_))));
        let cfg = PararealConfig::new(4, 1e-2, 1e-3, 1e-6);
        assert!(parareal_solve(&model, 0.0, 2.0, &x0, &cfg).is_err());
        let cfg = PararealConfig::new(4, 1e-3, 1e-2, 1e-6).with_max_iterations(5);
        assert!(parareal_solve(&model, 0.0, 2.0, &x0, &cfg).is_err());
        let cfg = PararealConfig::new(4, 1e-3, 1e-2, 1e-6).with_max_iterations(0);
        assert!(parareal_solve(&model, 0.0, 2.0, &x0, &cfg).is_err());
    }

    #[test]
    fn propagator_failure_names_interval() {
        // singular coarse step: 1 + 0.5·(−2) = 0
        let model = LinearSystemModel::new(
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, -2.0),
            Forcing::zero(1),
            v(&[1.0]),
            QoiDefinition {
                kind: QoiKind::MeanJouleLoss,
                horizon: 1.0,
            },
        )
        .unwrap();
        let cfg = PararealConfig::new(2, 0.1, 0.5, 1e-6);
        match parareal_solve(&model, 0.0, 1.0, &v(&[1.0]), &cfg).unwrap_err() {
            Error::Parareal { interval, iteration, .. } => {
                assert_eq!((interval, iteration), (1, 1));
            }
            e => panic!("unexpected {e}"),
        }
    }
}
