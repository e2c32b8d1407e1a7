//! Runs sampling plans under a core budget and accounts time and effort.
//!
//! Tasks of one level are packed into batches of at most `n_c` core slots.
//! A task occupies an integral number of slots for its whole duration, and a
//! coupled pair additionally needs a *divisible* share of `C_{ℓ−1}/C_ℓ` slots
//! for its cheaper companion solve. Companion shares are packed after all
//! integral placements and may spread over batch boundaries, so a homogeneous
//! level needs exactly `⌈N·(1 + C_{ℓ−1}/C_ℓ)/n_c⌉` batches.
//!
//! * `Simulated`: task times come from cost hints, Parareal wall time and
//!   effort from the closed forms, batch wall time is the longest task in it.
//! * `Real`: tasks run on a thread pool, times are measured, effort is the
//!   number of reserved workers times the hold duration.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmodel::{parareal_effort, parareal_time};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulated,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleKey {
    pub level: usize,
    pub index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    SequentialSolve { level: usize },
    CoupledPair { level: usize },
    PararealSolve { level: usize, cores: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PararealTiming {
    /// Measured wall time of the Parareal solve.
    Measured { wall_s: f64 },
    /// Closed-form timing from the sequential coarse cost and the iteration count;
    /// `None` takes the count reported by the task.
    Modeled {
        tau_coarse: f64,
        iterations: Option<usize>,
    },
}

/// Expected durations of the solves in a task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostHint {
    /// Level-`ℓ` solve; `τ_F` for Parareal tasks.
    pub solve_s: f64,
    /// Level-`ℓ−1` companion solve, 0 if none.
    pub companion_s: f64,
    pub parareal: Option<PararealTiming>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub kind: TaskKind,
    pub key: SampleKey,
    pub cost: CostHint,
}

impl Task {
    pub fn sequential(level: usize, index: u64, solve_s: f64) -> Self {
        Self {
            kind: TaskKind::SequentialSolve { level },
            key: SampleKey { level, index },
            cost: CostHint {
                solve_s,
                companion_s: 0.0,
                parareal: None,
            },
        }
    }

    pub fn coupled(level: usize, index: u64, fine_s: f64, coarse_s: f64) -> Self {
        Self {
            kind: TaskKind::CoupledPair { level },
            key: SampleKey { level, index },
            cost: CostHint {
                solve_s: fine_s,
                companion_s: coarse_s,
                parareal: None,
            },
        }
    }

    /// Parareal solve on `cores` workers plus an optional sequential companion on its own core.
    pub fn parareal(
        level: usize,
        index: u64,
        cores: usize,
        tau_fine: f64,
        companion_s: f64,
        timing: PararealTiming,
    ) -> Self {
        Self {
            kind: TaskKind::PararealSolve { level, cores },
            key: SampleKey { level, index },
            cost: CostHint {
                solve_s: tau_fine,
                companion_s,
                parareal: Some(timing),
            },
        }
    }

    pub fn level(&self) -> usize {
        match self.kind {
            TaskKind::SequentialSolve { level }
            | TaskKind::CoupledPair { level }
            | TaskKind::PararealSolve { level, .. } => level,
        }
    }

    /// Integral core slots held for the whole task.
    pub fn width(&self) -> usize {
        match self.kind {
            TaskKind::SequentialSolve { .. } | TaskKind::CoupledPair { .. } => 1,
            TaskKind::PararealSolve { cores, .. } => cores + usize::from(self.cost.companion_s > 0.0),
        }
    }

    /// Duration of the shorter solve of a coupled pair, 0 for other kinds.
    pub fn companion_duration(&self) -> f64 {
        match self.kind {
            TaskKind::CoupledPair { .. } => self.cost.solve_s.min(self.cost.companion_s),
            _ => 0.0,
        }
    }

    /// Divisible slot share of the companion solve of a coupled pair.
    pub fn share(&self) -> f64 {
        match self.kind {
            TaskKind::CoupledPair { .. } => {
                let (a, b) = (self.cost.solve_s, self.cost.companion_s);
                let long = a.max(b);
                if long > 0.0 {
                    a.min(b) / long
                } else {
                    0.0
                }
            }
            _ => 0.0,
        }
    }
}

/// Tasks whose integral part runs in the batch, and tasks with companion share in it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub tasks: Vec<usize>,
    pub companions: Vec<usize>,
    pub load: f64,
}

const LOAD_SLACK: f64 = 1e-9;

/// Packs the tasks of one level into batches of `cores` slots.
pub fn schedule_level(tasks: &[Task], cores: usize) -> Result<Vec<Batch>> {
    if cores == 0 {
        return Err(Error::InvalidInput("need at least one core".into()));
    }
    if let Some(first) = tasks.first() {
        if tasks.iter().any(|t| t.level() != first.level()) {
            return Err(Error::InvalidInput("schedule_level needs tasks of one level".into()));
        }
    }
    let capacity = cores as f64;
    let mut batches: Vec<Batch> = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        let w = task.width();
        if w > cores {
            return Err(Error::TaskTooWide { width: w, cores });
        }
        let fits = batches
            .last()
            .is_some_and(|b| b.load + w as f64 <= capacity + LOAD_SLACK);
        if !fits {
            batches.push(Batch::default());
        }
        let b = batches.last_mut().expect("open batch");
        b.tasks.push(i);
        b.load += w as f64;
    }

    let mut open = 0;
    for (i, task) in tasks.iter().enumerate() {
        let mut remaining = task.share();
        while remaining > 0.0 {
            if open == batches.len() {
                batches.push(Batch::default());
            }
            let b = &mut batches[open];
            let spare = capacity - b.load;
            if spare <= LOAD_SLACK {
                open += 1;
                continue;
            }
            let placed = remaining.min(spare);
            b.load += placed;
            b.companions.push(i);
            remaining -= placed;
            if remaining <= LOAD_SLACK {
                remaining = 0.0;
            }
        }
    }
    Ok(batches)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelLedger {
    pub level: usize,
    pub batches: usize,
    pub wall_s: f64,
    pub effort_core_s: f64,
}

/// Wall time and core-seconds effort per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub mode: Mode,
    pub levels: Vec<LevelLedger>,
    pub total_wall_s: f64,
    pub total_effort_core_s: f64,
}

impl Ledger {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            levels: Vec::new(),
            total_wall_s: 0.0,
            total_effort_core_s: 0.0,
        }
    }

    pub fn level(&self, level: usize) -> Option<&LevelLedger> {
        self.levels.iter().find(|l| l.level == level)
    }

    pub fn record(&mut self, level: usize, batches: usize, wall_s: f64, effort_core_s: f64) {
        match self.levels.iter_mut().find(|l| l.level == level) {
            Some(entry) => {
                entry.batches += batches;
                entry.wall_s += wall_s;
                entry.effort_core_s += effort_core_s;
            }
            None => {
                self.levels.push(LevelLedger {
                    level,
                    batches,
                    wall_s,
                    effort_core_s,
                });
                self.levels.sort_by_key(|l| l.level);
            }
        }
        self.total_wall_s = self.levels.iter().map(|l| l.wall_s).sum();
        self.total_effort_core_s = self.levels.iter().map(|l| l.effort_core_s).sum();
    }

    pub fn merge(&mut self, other: &Ledger) {
        for l in &other.levels {
            self.record(l.level, l.batches, l.wall_s, l.effort_core_s);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ledger serializes")
    }
}

/// What a task's work function returns.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutput<T> {
    pub value: T,
    pub parareal_iterations: Option<usize>,
}

impl<T> TaskOutput<T> {
    pub fn new(value: T) -> Self {
        Self {
            value,
            parareal_iterations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskReport<T> {
    pub key: SampleKey,
    pub value: T,
    pub parareal_iterations: Option<usize>,
    /// Simulated or measured duration.
    pub wall_s: f64,
    pub effort_core_s: f64,
}

/// Tasks sorted by level, with the finest level of the active hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub finest_level: usize,
    pub tasks: Vec<Task>,
}

#[derive(Debug, Clone)]
pub struct RunOutput<T> {
    pub reports: Vec<TaskReport<T>>,
    pub ledger: Ledger,
}

#[derive(Debug, Clone)]
pub struct Executor {
    mode: Mode,
    cores: usize,
    workers: usize,
}

impl Executor {
    pub fn simulated(cores: usize) -> Self {
        Self {
            mode: Mode::Simulated,
            cores,
            workers: 1,
        }
    }

    pub fn real(cores: usize, workers: usize) -> Self {
        Self {
            mode: Mode::Real,
            cores,
            workers,
        }
    }

    /// Threads used to evaluate tasks; in simulated mode this only affects throughput.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn cores(&self) -> usize {
        self.cores
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn run<T, F>(&self, plan: &Plan, work: F) -> Result<RunOutput<T>>
    where
        T: Send,
        F: Fn(&Task) -> Result<TaskOutput<T>> + Sync,
    {
        validate_plan(plan)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.max(1))
            .build()
            .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;

        let mut ledger = Ledger::new(self.mode);
        let mut reports = Vec::with_capacity(plan.tasks.len());
        let mut start = 0;
        while start < plan.tasks.len() {
            let level = plan.tasks[start].level();
            let end = start
                + plan.tasks[start..]
                    .iter()
                    .take_while(|t| t.level() == level)
                    .count();
            let tasks = &plan.tasks[start..end];
            let batches = schedule_level(tasks, self.cores)?;

            let clock = Instant::now();
            let outputs: Vec<(TaskOutput<T>, f64)> = pool.install(|| {
                tasks
                    .par_iter()
                    .map(|t| {
                        let t0 = Instant::now();
                        let out = execute_with_retry(&work, t)?;
                        Ok((out, t0.elapsed().as_secs_f64()))
                    })
                    .collect::<Result<_>>()
            })?;
            let measured_wall = clock.elapsed().as_secs_f64();

            let level_reports: Vec<TaskReport<T>> = match self.mode {
                Mode::Simulated => tasks
                    .iter()
                    .zip(outputs)
                    .map(|(t, (out, _))| simulated_report(t, out))
                    .collect::<Result<_>>()?,
                Mode::Real => tasks
                    .iter()
                    .zip(outputs)
                    .map(|(t, (out, secs))| TaskReport {
                        key: t.key,
                        value: out.value,
                        parareal_iterations: out.parareal_iterations,
                        wall_s: secs,
                        effort_core_s: t.width() as f64 * secs,
                    })
                    .collect(),
            };

            let wall = match self.mode {
                Mode::Simulated => batches
                    .iter()
                    .map(|b| {
                        let integral = b.tasks.iter().map(|&i| level_reports[i].wall_s);
                        let shares = b.companions.iter().map(|&i| tasks[i].companion_duration());
                        integral.chain(shares).fold(0.0, f64::max)
                    })
                    .sum(),
                Mode::Real => measured_wall,
            };
            let effort = level_reports.iter().map(|r| r.effort_core_s).sum();
            ledger.record(level, batches.len(), wall, effort);
            reports.extend(level_reports);
            start = end;
        }
        Ok(RunOutput { reports, ledger })
    }
}

fn validate_plan(plan: &Plan) -> Result<()> {
    let mut seen = HashSet::with_capacity(plan.tasks.len());
    let mut prev_level = 0;
    for t in &plan.tasks {
        if t.level() < prev_level {
            return Err(Error::InvalidInput("plan tasks must be ordered by level".into()));
        }
        prev_level = t.level();
        if t.key.level != t.level() {
            return Err(Error::InvalidInput(format!(
                "task key level {} differs from task level {}",
                t.key.level,
                t.level()
            )));
        }
        if !seen.insert(t.key) {
            return Err(Error::DuplicateTask {
                level: t.key.level,
                index: t.key.index,
            });
        }
        match t.kind {
            TaskKind::PararealSolve { level, cores } => {
                if level != plan.finest_level {
                    return Err(Error::InvalidInput(format!(
                        "Parareal task on level {level}, finest level is {}",
                        plan.finest_level
                    )));
                }
                if cores == 0 || t.cost.parareal.is_none() {
                    return Err(Error::InvalidInput("Parareal task needs cores and timing".into()));
                }
            }
            TaskKind::CoupledPair { level: 0 } => {
                return Err(Error::InvalidInput("level 0 has no coupled coarse solve".into()));
            }
            _ => {}
        }
    }
    Ok(())
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".to_string()
    }
}

fn execute_with_retry<T, F>(work: &F, task: &Task) -> Result<TaskOutput<T>>
where
    F: Fn(&Task) -> Result<TaskOutput<T>>,
{
    let mut message = String::new();
    for _ in 0..2 {
        match catch_unwind(AssertUnwindSafe(|| work(task))) {
            Ok(Ok(out)) => return Ok(out),
            Ok(Err(e)) => message = e.to_string(),
            Err(p) => message = panic_message(p),
        }
    }
    Err(Error::Sample {
        level: task.key.level,
        index: task.key.index,
        message,
    })
}

fn simulated_report<T>(task: &Task, out: TaskOutput<T>) -> Result<TaskReport<T>> {
    let c = task.cost;
    let (wall_s, effort_core_s) = match task.kind {
        TaskKind::SequentialSolve { .. } => (c.solve_s, c.solve_s),
        TaskKind::CoupledPair { .. } => (c.solve_s.max(c.companion_s), c.solve_s + c.companion_s),
        TaskKind::PararealSolve { cores, .. } => {
            let (wall, effort) = match c.parareal.expect("validated") {
                PararealTiming::Measured { wall_s } => (wall_s, cores as f64 * wall_s),
                PararealTiming::Modeled {
                    tau_coarse,
                    iterations,
                } => {
                    let k = iterations.or(out.parareal_iterations).ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "no Parareal iteration count for sample (level {}, index {})",
                            task.key.level, task.key.index
                        ))
                    })?;
                    (
                        parareal_time(c.solve_s, tau_coarse, cores, k)?,
                        parareal_effort(c.solve_s, tau_coarse, cores, k)?,
                    )
                }
            };
            (wall.max(c.companion_s), effort + c.companion_s)
        }
    };
    Ok(TaskReport {
        key: task.key,
        value: out.value,
        parareal_iterations: out.parareal_iterations,
        wall_s,
        effort_core_s,
    })
}
