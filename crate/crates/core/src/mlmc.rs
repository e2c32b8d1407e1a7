//! Monte Carlo and multilevel Monte Carlo estimators.
//!
//! Sample `k` on level `ℓ` always draws its parameters from the stream keyed
//! by `(seed, ℓ, k)`, and per-level statistics are accumulated in index
//! order. Estimates are therefore independent of batching and worker count.

use serde::{Deserialize, Serialize};

use crate::costmodel::cores_per_sample;
use crate::error::{Error, Result};
use crate::executor::{Executor, Ledger, Mode, Plan, PararealTiming, Task, TaskKind, TaskOutput};
use crate::model::{draw_parameters, evaluate_qoi, Hierarchy, LinearSystemModel, ModelFamily, ParameterVector};
use crate::parareal::{parareal_solve, PararealConfig};
use crate::rng::RandomStream;
use crate::timeint::{implicit_euler_solve, step_count};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AllocationTarget {
    /// Sample counts reaching the given root mean square error.
    Rmse(f64),
    /// Sample counts spending about the given total cost.
    Budget(f64),
}

/// Smallest per-level sample count, so that every level has a variance estimate.
pub const MIN_SAMPLES: usize = 2;

/// `√(V_ℓ/C_ℓ)`, to which optimal sample counts are proportional.
pub fn allocation_weights(variances: &[f64], costs: &[f64]) -> Result<Vec<f64>> {
    check_allocation_inputs(variances, costs)?;
    Ok(variances.iter().zip(costs).map(|(v, c)| (v / c).sqrt()).collect())
}

fn check_allocation_inputs(variances: &[f64], costs: &[f64]) -> Result<()> {
    if variances.is_empty() || variances.len() != costs.len() {
        return Err(Error::Dimension(format!(
            "{} variances for {} costs",
            variances.len(),
            costs.len()
        )));
    }
    for (l, &v) in variances.iter().enumerate() {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: format!("V[{l}]"),
                value: v,
            });
        }
    }
    for (l, &c) in costs.iter().enumerate() {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter {
                name: format!("C[{l}]"),
                value: c,
            });
        }
    }
    Ok(())
}

/// Cost-optimal sample counts; at least [`MIN_SAMPLES`] per level.
///
/// * `Rmse(ε)`: `N_ℓ = ⌈2ε⁻²·√(V_ℓ/C_ℓ)·Σ_j √(V_j·C_j)⌉`
/// * `Budget(B)`: `N_ℓ = ⌊B·√(V_ℓ/C_ℓ) / Σ_j √(V_j·C_j)⌋`
pub fn optimal_allocation(variances: &[f64], costs: &[f64], target: AllocationTarget) -> Result<Vec<usize>> {
    let weights = allocation_weights(variances, costs)?;
    let total: f64 = variances.iter().zip(costs).map(|(v, c)| (v * c).sqrt()).sum();
    let scale = match target {
        AllocationTarget::Rmse(eps) => {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "rmse_target".into(),
                    value: eps,
                });
            }
            2.0 / (eps * eps) * total
        }
        AllocationTarget::Budget(b) => {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "budget".into(),
                    value: b,
                });
            }
            if total == 0.0 {
                0.0
            } else {
                b / total
            }
        }
    };
    Ok(weights
        .iter()
        .map(|w| {
            let n = scale * w;
            let n = match target {
                AllocationTarget::Rmse(_) => crate::costmodel::ceil_count(n),
                AllocationTarget::Budget(_) => crate::costmodel::floor_count(n),
            };
            n.max(MIN_SAMPLES)
        })
        .collect())
}

/// Running statistics of the level differences `Y = Q_ℓ − Q_{ℓ−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub samples: usize,
    pub sum_y: f64,
    pub sum_y2: f64,
    pub mean_y: f64,
    /// Unbiased sample variance, `None` below two samples.
    pub var_y: Option<f64>,
    /// Mean effort per sample in core-seconds.
    pub cost_per_sample: f64,
    #[serde(skip)]
    m2: f64,
    #[serde(skip)]
    effort: f64,
}

impl LevelStats {
    pub fn new(level: usize) -> Self {
        Self {
            level,
            samples: 0,
            sum_y: 0.0,
            sum_y2: 0.0,
            mean_y: 0.0,
            var_y: None,
            cost_per_sample: 0.0,
            m2: 0.0,
            effort: 0.0,
        }
    }

    /// Welford update; a constant stream has exactly zero variance.
    pub fn push(&mut self, y: f64, effort_core_s: f64) {
        self.samples += 1;
        self.sum_y += y;
        self.sum_y2 += y * y;
        let delta = y - self.mean_y;
        self.mean_y += delta / self.samples as f64;
        self.m2 += delta * (y - self.mean_y);
        self.var_y = (self.samples >= 2).then(|| self.m2 / (self.samples - 1) as f64);
        self.effort += effort_core_s;
        self.cost_per_sample = self.effort / self.samples as f64;
    }

    /// `V_ℓ/N_ℓ`, 0 below two samples.
    pub fn variance_of_mean(&self) -> f64 {
        self.var_y.map_or(0.0, |v| v / self.samples as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub level: usize,
    pub index: u64,
    pub q_l: f64,
    /// `None` on level 0 and for plain Monte Carlo.
    pub q_lm1: Option<f64>,
    pub cost_s: f64,
    pub parareal_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub expectation: f64,
    pub per_level: Vec<LevelStats>,
    pub rmse_estimate: f64,
    pub ledger: Ledger,
    pub samples: Vec<SampleRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledSample {
    pub q_fine: f64,
    /// `Q_{ℓ−1}`, 0 on level 0.
    pub q_coarse: f64,
    pub parareal_iterations: Option<usize>,
}

impl CoupledSample {
    pub fn difference(&self) -> f64 {
        self.q_fine - self.q_coarse
    }
}

/// QoI of one model on the grid `dt`, through Parareal if configured; also returns the iteration count.
pub fn solve_qoi(model: &LinearSystemModel, dt: f64, parareal: Option<&PararealConfig>) -> Result<(f64, Option<usize>)> {
    let x0 = model.initial_state();
    let t1 = model.horizon();
    match parareal {
        None => {
            let tr = implicit_euler_solve(model, 0.0, t1, dt, x0)?;
            Ok((evaluate_qoi(model, &tr)?, None))
        }
        Some(cfg) => {
            let res = parareal_solve(model, 0.0, t1, x0, cfg)?;
            Ok((evaluate_qoi(model, &res.fine_trajectory)?, Some(res.iterations)))
        }
    }
}

/// `(Q_ℓ, Q_{ℓ−1})` for one parameter draw; the Parareal configuration applies to the finest level only.
pub fn coupled_sample(
    family: &dyn ModelFamily,
    params: &ParameterVector,
    level: usize,
    hierarchy: &Hierarchy,
    parareal: Option<&PararealConfig>,
) -> Result<CoupledSample> {
    if level >= hierarchy.len() {
        return Err(Error::InvalidInput(format!(
            "level {level} outside hierarchy of {} levels",
            hierarchy.len()
        )));
    }
    let model = family.build(params)?;
    let parareal = parareal.filter(|_| level == hierarchy.finest());
    if let Some(cfg) = parareal {
        if cfg.dt_fine != hierarchy.dt(level) {
            return Err(Error::InvalidInput(format!(
                "Parareal fine step {} differs from level step {}",
                cfg.dt_fine,
                hierarchy.dt(level)
            )));
        }
    }
    let (q_fine, parareal_iterations) = solve_qoi(&model, hierarchy.dt(level), parareal)?;
    let q_coarse = if level == 0 {
        0.0
    } else {
        solve_qoi(&model, hierarchy.dt(level - 1), None)?.0
    };
    Ok(CoupledSample {
        q_fine,
        q_coarse,
        parareal_iterations,
    })
}

/// Modeled duration of one solve per level, `T/Δt_ℓ · seconds_per_step`.
fn solve_costs(hierarchy: &Hierarchy, horizon: f64, seconds_per_step: f64) -> Result<Vec<f64>> {
    if !(seconds_per_step > 0.0 && seconds_per_step.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "seconds_per_step".into(),
            value: seconds_per_step,
        });
    }
    hierarchy
        .levels()
        .iter()
        .map(|l| Ok(step_count(0.0, horizon, l.dt)? as f64 * seconds_per_step))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub seed: u64,
    /// Cost of one time step, used for schedule hints and simulated timing.
    pub seconds_per_step: f64,
    /// Keep one [`SampleRecord`] per sample.
    pub record_samples: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            seconds_per_step: 1e-6,
            record_samples: false,
        }
    }
}

/// Plain Monte Carlo on one level, keys `(seed, level, k)` for `k < n`.
pub fn mc_estimate(
    family: &dyn ModelFamily,
    hierarchy: &Hierarchy,
    level: usize,
    n: usize,
    executor: &Executor,
    options: &EstimatorOptions,
) -> Result<EstimatorResult> {
    if n == 0 {
        return Err(Error::InvalidInput("Monte Carlo needs at least one sample".into()));
    }
    if level >= hierarchy.len() {
        return Err(Error::InvalidInput(format!(
            "level {level} outside hierarchy of {} levels",
            hierarchy.len()
        )));
    }
    let costs = solve_costs(hierarchy, family.horizon(), options.seconds_per_step)?;
    let plan = Plan {
        finest_level: level,
        tasks: (0..n as u64).map(|k| Task::sequential(level, k, costs[level])).collect(),
    };
    let dt = hierarchy.dt(level);
    let out = executor.run(&plan, |task| {
        let params = draw_parameters(family.input(), &RandomStream::new(options.seed, level, task.key.index));
        let model = family.build(&params)?;
        Ok(TaskOutput::new(solve_qoi(&model, dt, None)?.0))
    })?;
    let mut stats = LevelStats::new(level);
    let mut samples = Vec::new();
    for r in &out.reports {
        stats.push(r.value, r.effort_core_s);
        if options.record_samples {
            samples.push(SampleRecord {
                level,
                index: r.key.index,
                q_l: r.value,
                q_lm1: None,
                cost_s: r.effort_core_s,
                parareal_k: None,
            });
        }
    }
    Ok(EstimatorResult {
        expectation: stats.mean_y,
        rmse_estimate: stats.variance_of_mean().sqrt(),
        per_level: vec![stats],
        ledger: out.ledger,
        samples,
    })
}

/// Parareal use on the finest level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PararealOptions {
    pub tolerance: f64,
    /// Defaults to the number of sub-intervals.
    pub max_iterations: Option<usize>,
    /// Defaults to the step of level `L−2`.
    pub dt_coarse: Option<f64>,
    /// Defaults to the cores available per finest-level sample.
    pub subintervals: Option<usize>,
}

impl Default for PararealOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: None,
            dt_coarse: None,
            subintervals: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SampleTarget {
    Rmse(f64),
    Budget(f64),
    /// Explicit per-level sample counts, raised to the warm-up count if smaller.
    Fixed(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub warmup: usize,
    pub target: SampleTarget,
}

impl SamplingPolicy {
    pub fn rmse(eps: f64) -> Self {
        Self {
            warmup: 20,
            target: SampleTarget::Rmse(eps),
        }
    }

    pub fn fixed(samples: Vec<usize>) -> Self {
        Self {
            warmup: MIN_SAMPLES,
            target: SampleTarget::Fixed(samples),
        }
    }

    pub fn with_warmup(mut self, warmup: usize) -> Self {
        self.warmup = warmup;
        self
    }
}

/// Parareal configuration for `samples` concurrent finest-level solves, or `None` to stay sequential.
///
/// Without explicit `subintervals`, `M` is the largest grid-compatible count
/// not exceeding the cores available per sample. Fewer than two usable
/// sub-intervals, or too few cores, fall back to sequential solves.
pub fn resolve_parareal(
    opts: &PararealOptions,
    hierarchy: &Hierarchy,
    horizon: f64,
    executor: &Executor,
    samples: usize,
) -> Result<Option<PararealConfig>> {
    let l = hierarchy.finest();
    if l == 0 || samples == 0 {
        return Ok(None);
    }
    let dt_coarse = match opts.dt_coarse {
        Some(dt) => dt,
        None if l >= 2 => hierarchy.dt(l - 2),
        None => {
            return Err(Error::InvalidInput(
                "Parareal without dt_coarse needs at least three levels".into(),
            ))
        }
    };
    let dt_fine = hierarchy.dt(l);
    let budget = match opts.subintervals {
        Some(m) => m,
        None => match cores_per_sample(executor.cores(), samples, dt_fine / hierarchy.dt(l - 1)) {
            Ok(m) => m,
            Err(Error::InsufficientCores { .. }) => return Ok(None),
            Err(e) => return Err(e),
        },
    };
    let workers = match executor.mode() {
        Mode::Simulated => 1,
        Mode::Real => executor.workers().max(1),
    };
    for m in (2..=budget).rev() {
        let base = PararealConfig::new(m, dt_fine, dt_coarse, opts.tolerance);
        if base.fits(0.0, horizon) {
            let k_max = opts.max_iterations.unwrap_or(m).clamp(1, m);
            return Ok(Some(base.with_max_iterations(k_max).with_workers(workers.min(m))));
        }
    }
    Ok(None)
}

struct LevelRunner<'a> {
    family: &'a dyn ModelFamily,
    hierarchy: &'a Hierarchy,
    executor: &'a Executor,
    options: &'a EstimatorOptions,
    parareal: Option<&'a PararealOptions>,
    costs: Vec<f64>,
}

impl LevelRunner<'_> {
    fn task(&self, level: usize, index: u64, parareal: Option<&PararealConfig>) -> Task {
        let c = &self.costs;
        match (level, parareal) {
            (0, _) => Task::sequential(0, index, c[0]),
            (l, Some(cfg)) => {
                let steps = self.family.horizon() / cfg.dt_coarse;
                let tau_coarse = steps.round() * self.options.seconds_per_step;
                Task::parareal(
                    l,
                    index,
                    cfg.subintervals,
                    c[l],
                    c[l - 1],
                    PararealTiming::Modeled {
                        tau_coarse,
                        iterations: None,
                    },
                )
            }
            (l, None) => Task::coupled(l, index, c[l], c[l - 1]),
        }
    }

    /// Runs samples `from..to` of `level`, appending to `stats` in index order.
    fn run(
        &self,
        level: usize,
        from: usize,
        to: usize,
        stats: &mut LevelStats,
        ledger: &mut Ledger,
        records: &mut Vec<SampleRecord>,
    ) -> Result<()> {
        if to <= from {
            return Ok(());
        }
        let cfg = match self.parareal {
            Some(opts) if level == self.hierarchy.finest() => {
                resolve_parareal(opts, self.hierarchy, self.family.horizon(), self.executor, to - from)?
            }
            _ => None,
        };
        let plan = Plan {
            finest_level: self.hierarchy.finest(),
            tasks: (from as u64..to as u64)
                .map(|k| self.task(level, k, cfg.as_ref()))
                .collect(),
        };
        let seed = self.options.seed;
        let out = self.executor.run(&plan, |task| {
            let params = draw_parameters(self.family.input(), &RandomStream::new(seed, level, task.key.index));
            let use_parareal = matches!(task.kind, TaskKind::PararealSolve { .. });
            let s = coupled_sample(
                self.family,
                &params,
                level,
                self.hierarchy,
                cfg.as_ref().filter(|_| use_parareal),
            )?;
            Ok(TaskOutput {
                parareal_iterations: s.parareal_iterations,
                value: s,
            })
        })?;
        ledger.merge(&out.ledger);
        for r in out.reports {
            stats.push(r.value.difference(), r.effort_core_s);
            if self.options.record_samples {
                records.push(SampleRecord {
                    level,
                    index: r.key.index,
                    q_l: r.value.q_fine,
                    q_lm1: (level > 0).then_some(r.value.q_coarse),
                    cost_s: r.effort_core_s,
                    parareal_k: r.parareal_iterations,
                });
            }
        }
        Ok(())
    }
}

/// Multilevel estimate of `E[Q_L]` by the telescoping sum of level-difference means.
///
/// Every level first draws `policy.warmup` samples; variances and per-sample
/// costs from this phase give the allocation, and each level is then topped up
/// to `max(N_ℓ, warmup)` samples.
pub fn mlmc_estimate(
    family: &dyn ModelFamily,
    hierarchy: &Hierarchy,
    policy: &SamplingPolicy,
    parareal: Option<&PararealOptions>,
    executor: &Executor,
    options: &EstimatorOptions,
) -> Result<EstimatorResult> {
    if policy.warmup < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "warm-up needs at least {MIN_SAMPLES} samples per level, got {}",
            policy.warmup
        )));
    }
    let levels = hierarchy.len();
    if let SampleTarget::Fixed(n) = &policy.target {
        if n.len() != levels {
            return Err(Error::Dimension(format!(
                "{} fixed sample counts for {levels} levels",
                n.len()
            )));
        }
    }
    let runner = LevelRunner {
        family,
        hierarchy,
        executor,
        options,
        parareal,
        costs: solve_costs(hierarchy, family.horizon(), options.seconds_per_step)?,
    };

    let mut ledger = Ledger::new(executor.mode());
    let mut stats: Vec<LevelStats> = (0..levels).map(LevelStats::new).collect();
    let mut records = Vec::new();
    for l in 0..levels {
        runner.run(l, 0, policy.warmup, &mut stats[l], &mut ledger, &mut records)?;
    }

    let variances: Vec<f64> = stats.iter().map(|s| s.var_y.unwrap_or(0.0)).collect();
    let costs: Vec<f64> = stats.iter().map(|s| s.cost_per_sample).collect();
    let allocation = match &policy.target {
        SampleTarget::Rmse(eps) => optimal_allocation(&variances, &costs, AllocationTarget::Rmse(*eps))?,
        SampleTarget::Budget(b) => optimal_allocation(&variances, &costs, AllocationTarget::Budget(*b))?,
        SampleTarget::Fixed(n) => n.clone(),
    };
    for l in 0..levels {
        let n = allocation[l].max(policy.warmup);
        runner.run(l, policy.warmup, n, &mut stats[l], &mut ledger, &mut records)?;
    }
    records.sort_by_key(|r| (r.level, r.index));

    Ok(EstimatorResult {
        expectation: stats.iter().map(|s| s.mean_y).sum(),
        rmse_estimate: stats.iter().map(LevelStats::variance_of_mean).sum::<f64>().sqrt(),
        per_level: stats,
        ledger,
        samples: records,
    })
}
