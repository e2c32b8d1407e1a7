//! Experiment driver: `estimate`, `plan`, `sample` and `figures`.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mlmc_parareal::costmodel::{self, figure_csv, figure_data, ideal_speedup, kappa, FigureSeries};
use mlmc_parareal::executor::{PararealTiming, Plan, Task, TaskOutput};
use mlmc_parareal::mlmc::{mc_estimate, mlmc_estimate, resolve_parareal, solve_qoi, EstimatorOptions, EstimatorResult};
use mlmc_parareal::model::draw_parameters;
use mlmc_parareal::timeint::step_count;
use mlmc_parareal::{Mode, RandomStream};
use serde::Serialize;

pub use config::{EstimatorChoice, ExperimentConfig, ModelChoice};

pub const SAMPLES_CSV_HEADER: &str = "level,index,Q_l,Q_lm1,cost_s,parareal_K";
pub const SAMPLE_CSV_HEADER: &str = "level,index,Q,cost_s,parareal_K";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<mlmc_parareal::Error> for CliError {
    fn from(e: mlmc_parareal::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

/// Reads and validates a config; without a path the built-in defaults are used.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_path(p).map_err(CliError::Config)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &overrides.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(w) = overrides.workers {
        cfg.workers = w;
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(&path))?;
    Ok(path)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    model: ModelChoice,
    estimator: EstimatorChoice,
    mode: Mode,
    seed: u64,
    expectation: f64,
    rmse_estimate: f64,
    per_level: &'a [mlmc_parareal::mlmc::LevelStats],
    parareal_samples: usize,
    parareal_iterations_max: Option<usize>,
}

/// Runs the configured estimator; returns it and writes `estimate.json` and `ledger.json`.
pub fn cmd_estimate(cfg: &ExperimentConfig) -> Result<EstimatorResult, CliError> {
    let family = cfg.family().map_err(CliError::Config)?;
    let hierarchy = cfg.hierarchy().map_err(CliError::Config)?;
    let executor = cfg.executor();
    let options = EstimatorOptions {
        seed: cfg.seed,
        seconds_per_step: cfg.seconds_per_step,
        record_samples: true,
    };
    let result = match cfg.estimator {
        EstimatorChoice::Mc => {
            let level = cfg.level.unwrap_or(hierarchy.finest());
            let n = cfg.policy.samples.as_ref().map_or(0, |n| n[0]);
            mc_estimate(family.as_ref(), &hierarchy, level, n, &executor, &options)?
        }
        EstimatorChoice::Mlmc => mlmc_estimate(
            family.as_ref(),
            &hierarchy,
            &cfg.sampling_policy(),
            cfg.parareal_options().as_ref(),
            &executor,
            &options,
        )?,
    };
    let iterations: Vec<usize> = result.samples.iter().filter_map(|s| s.parareal_k).collect();
    let report = EstimateReport {
        model: cfg.model,
        estimator: cfg.estimator,
        mode: cfg.mode,
        seed: cfg.seed,
        expectation: result.expectation,
        rmse_estimate: result.rmse_estimate,
        per_level: &result.per_level,
        parareal_samples: iterations.len(),
        parareal_iterations_max: iterations.iter().copied().max(),
    };
    write_file(&cfg.output_dir, "estimate.json", &to_json(&report))?;
    write_file(&cfg.output_dir, "ledger.json", &(result.ledger.to_json() + "\n"))?;
    if cfg.write_samples {
        let mut csv = String::from(SAMPLES_CSV_HEADER);
        csv.push('\n');
        for s in &result.samples {
            let k = s.parareal_k.map(|k| k.to_string()).unwrap_or_default();
            let _ = writeln!(csv, "{},{},{},{},{},{}", s.level, s.index, s.q_l, s.q_lm1.unwrap_or(0.0), s.cost_s, k);
        }
        write_file(&cfg.output_dir, "samples.csv", &csv)?;
    }
    Ok(result)
}

#[derive(Serialize)]
struct CoreCountPlan {
    n_c: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    batches: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_c_para: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    speedup_k1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    effort_ratio_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct PlanReport {
    r: f64,
    levels: usize,
    c0: f64,
    variances: Vec<f64>,
    samples: Vec<usize>,
    s_inf: f64,
    cores: Vec<CoreCountPlan>,
}

fn core_count_plan(cfg: &ExperimentConfig, n_c: usize) -> Result<CoreCountPlan, CliError> {
    let params = cfg.cost_model.params(n_c).map_err(|e| CliError::Config(e.to_string()))?;
    let batches = Some(params.batches());
    let m = match params.cores_per_sample() {
        Ok(m) => m,
        Err(e) => {
            return Ok(CoreCountPlan {
                n_c,
                batches,
                n_c_para: None,
                kappa: None,
                speedup_k1: None,
                effort_ratio_max: None,
                error: Some(e.to_string()),
            })
        }
    };
    let k = kappa(params.r, m)?;
    Ok(CoreCountPlan {
        n_c,
        batches,
        n_c_para: Some(m),
        kappa: Some(k),
        speedup_k1: Some(costmodel::finite_speedup(&params, 1)?),
        effort_ratio_max: costmodel::effort_ratio_max(&params).ok(),
        error: None,
    })
}

fn figure_series(cfg: &ExperimentConfig, k_max: Option<usize>) -> Result<Vec<FigureSeries>, CliError> {
    let params = cfg.cost_model.params(cfg.n_c).map_err(|e| CliError::Config(e.to_string()))?;
    let k_max = k_max.unwrap_or_else(|| cfg.cost_model.n_c_list.iter().copied().max().unwrap_or(1));
    Ok(figure_data(&params, &cfg.cost_model.n_c_list, 1..=k_max))
}

/// Writes `figure1.csv` (speedup, `K ≤ k_max`) and `figure2.csv` (all `K ≤ n_c,para`).
pub fn cmd_figures(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let speedup = figure_series(cfg, Some(cfg.cost_model.k_max))?;
    let effort = figure_series(cfg, None)?;
    write_file(&cfg.output_dir, "figure1.csv", &figure_csv(&speedup))?;
    write_file(&cfg.output_dir, "figure2.csv", &figure_csv(&effort))?;
    Ok(())
}

/// Writes `plan.json` with per-core-count resources, plus the figure tables.
pub fn cmd_plan(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let cm = &cfg.cost_model;
    let params = cm.params(cfg.n_c).map_err(|e| CliError::Config(e.to_string()))?;
    let cores = cm
        .n_c_list
        .iter()
        .map(|&n| core_count_plan(cfg, n))
        .collect::<Result<Vec<_>, _>>()?;
    let report = PlanReport {
        r: cm.r,
        levels: cm.levels,
        c0: cm.c0,
        variances: params.variances.clone(),
        samples: params.samples.clone(),
        s_inf: ideal_speedup(cm.r, cm.levels)?,
        cores,
    };
    write_file(&cfg.output_dir, "plan.json", &to_json(&report))?;
    cmd_figures(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRow {
    pub level: usize,
    pub index: u64,
    pub q: f64,
    pub cost_s: f64,
    pub parareal_k: Option<usize>,
}

/// Standalone solves of samples `0..count` on `level`; writes `sample.csv`.
pub fn cmd_sample(cfg: &ExperimentConfig, level: usize, count: usize) -> Result<Vec<SampleRow>, CliError> {
    let family = cfg.family().map_err(CliError::Config)?;
    let hierarchy = cfg.hierarchy().map_err(CliError::Config)?;
    if level >= hierarchy.len() {
        return Err(CliError::Config(format!(
            "level {level} outside hierarchy of {} levels",
            hierarchy.len()
        )));
    }
    let executor = cfg.executor();
    let horizon = family.horizon();
    let parareal = match cfg.parareal_options() {
        Some(opts) if level == hierarchy.finest() => resolve_parareal(&opts, &hierarchy, horizon, &executor, count)?,
        _ => None,
    };
    let dt = hierarchy.dt(level);
    let solve_s = step_count(0.0, horizon, dt)? as f64 * cfg.seconds_per_step;
    let tasks = (0..count as u64)
        .map(|k| match &parareal {
            Some(p) => {
                let tau_coarse = step_count(0.0, horizon, p.dt_coarse)? as f64 * cfg.seconds_per_step;
                let timing = PararealTiming::Modeled {
                    tau_coarse,
                    iterations: None,
                };
                Ok(Task::parareal(level, k, p.subintervals, solve_s, 0.0, timing))
            }
            None => Ok(Task::sequential(level, k, solve_s)),
        })
        .collect::<mlmc_parareal::Result<Vec<_>>>()?;
    let plan = Plan {
        finest_level: hierarchy.finest(),
        tasks,
    };
    let out = executor.run(&plan, |task| {
        let params = draw_parameters(family.input(), &RandomStream::new(cfg.seed, level, task.key.index));
        let model = family.build(&params)?;
        let (q, k) = solve_qoi(&model, dt, parareal.as_ref())?;
        Ok(TaskOutput {
            value: q,
            parareal_iterations: k,
        })
    })?;
    let rows: Vec<SampleRow> = out
        .reports
        .iter()
        .map(|r| SampleRow {
            level,
            index: r.key.index,
            q: r.value,
            cost_s: r.effort_core_s,
            parareal_k: r.parareal_iterations,
        })
        .collect();
    let mut csv = String::from(SAMPLE_CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        let k = r.parareal_k.map(|k| k.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{},{}", r.level, r.index, r.q, r.cost_s, k);
    }
    write_file(&cfg.output_dir, "sample.csv", &csv)?;
    Ok(rows)
}
