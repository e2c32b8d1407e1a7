//! Closed-form time-to-solution, effort and speedup of Parareal and of the
//! combined MLMC + Parareal method.
//!
//! Level costs follow `C_ℓ = C₀·r^ℓ`. The combined method runs Parareal only on
//! the finest level `L`, with the level `L−2` discretization as coarse
//! propagator and `M = n_c,para` sub-intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when rounding batch and core counts, so that values
/// that are integers up to round-off are not pushed to the next integer.
const ROUNDING_SLACK: f64 = 1e-12;

pub(crate) fn ceil_count(x: f64) -> usize {
    (x - ROUNDING_SLACK * x.abs().max(1.0)).ceil().max(0.0) as usize
}

pub(crate) fn floor_count(x: f64) -> usize {
    (x + ROUNDING_SLACK * x.abs().max(1.0)).floor().max(0.0) as usize
}

fn check_iterations(m: usize, k: usize) -> Result<()> {
    if k == 0 || m == 0 || k > m {
        return Err(Error::InvalidInput(format!(
            "Parareal needs 1 <= K <= M, got K = {k}, M = {m}"
        )));
    }
    Ok(())
}

/// `τ_para = (K/M)·[τ_F + (M − (K+1)/2)·τ_C]`.
pub fn parareal_time(tau_fine: f64, tau_coarse: f64, m: usize, k: usize) -> Result<f64> {
    check_iterations(m, k)?;
    let (m, k) = (m as f64, k as f64);
    Ok(k / m * (tau_fine + (m - (k + 1.0) / 2.0) * tau_coarse))
}

/// `ℰ_para = (K/M)·(M − (K+1)/2)·(τ_F + τ_C) + (K/M)·τ_F`.
pub fn parareal_effort(tau_fine: f64, tau_coarse: f64, m: usize, k: usize) -> Result<f64> {
    check_iterations(m, k)?;
    let (m, k) = (m as f64, k as f64);
    Ok(k / m * (m - (k + 1.0) / 2.0) * (tau_fine + tau_coarse) + k / m * tau_fine)
}

/// `s_∞ = (r^{L+1} − 1)/(2r^L − r^{L−1} − 1)`.
pub fn ideal_speedup(r: f64, levels: usize) -> Result<f64> {
    check_rate(r)?;
    if levels == 0 {
        return Err(Error::InvalidInput("need L >= 1".into()));
    }
    let l = levels as i32;
    Ok((r.powi(l + 1) - 1.0) / (2.0 * r.powi(l) - r.powi(l - 1) - 1.0))
}

fn check_rate(r: f64) -> Result<()> {
    if !(r > 1.0 && r.is_finite()) {
        return Err(Error::InvalidInput(format!("refinement rate must exceed 1, got {r}")));
    }
    Ok(())
}

/// Largest iteration count `κ` with `τ_para ≤ C_{L−1}` for `τ_F = C_L`, `τ_C = C_{L−2}`.
///
/// `κ = ⌊(b − √(b² − 8nr))/2⌋` with `b = 2r² + 2n − 1`. The floor is corrected
/// against the underlying quadratic inequality `K(b − K) ≤ 2nr`, so round-off
/// in the square root cannot shift the result.
pub fn kappa(r: f64, cores_per_sample: usize) -> Result<usize> {
    check_rate(r)?;
    if cores_per_sample == 0 {
        return Err(Error::InvalidInput("need n_c,para >= 1".into()));
    }
    let n = cores_per_sample as f64;
    let b = 2.0 * r * r + 2.0 * n - 1.0;
    let disc = b * b - 8.0 * n * r;
    if disc < 0.0 {
        return Err(Error::InvalidInput(format!(
            "negative discriminant {disc} for r = {r}, n = {cores_per_sample}"
        )));
    }
    let admissible = |k: f64| k * (b - k) <= 2.0 * n * r;
    let mut k = ((b - disc.sqrt()) / 2.0).floor().max(0.0);
    while k > 0.0 && !admissible(k) {
        k -= 1.0;
    }
    while admissible(k + 1.0) {
        k += 1.0;
    }
    if k > r {
        return Err(Error::InvalidInput(format!("kappa {k} exceeds r = {r}")));
    }
    Ok(k as usize)
}

/// `b_ℓ = ⌈N_ℓ·(1 + C_{ℓ−1}/C_ℓ)/n_c⌉`.
pub fn batch_count(samples: usize, cost_ratio_prev: f64, cores: usize) -> usize {
    assert!(cores >= 1, "need at least one core");
    ceil_count(samples as f64 * (1.0 + cost_ratio_prev) / cores as f64)
}

/// `n_c,para = ⌊n_c/(N_L·(1 + C_{L−1}/C_L))⌋`.
pub fn cores_per_sample(cores: usize, finest_samples: usize, cost_ratio_prev: f64) -> Result<usize> {
    if finest_samples == 0 {
        return Err(Error::InvalidInput("need N_L >= 1".into()));
    }
    let n = floor_count(cores as f64 / (finest_samples as f64 * (1.0 + cost_ratio_prev)));
    if n == 0 {
        return Err(Error::InsufficientCores {
            cores,
            samples: finest_samples,
        });
    }
    Ok(n)
}

/// Parameters of the analytic cost model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModelParams {
    /// Cost of one level-0 solve in seconds.
    pub c0: f64,
    /// Refinement rate `r = C_ℓ/C_{ℓ−1}`.
    pub r: f64,
    /// Finest level `L`.
    pub levels: usize,
    /// Total cores `n_c`.
    pub cores: usize,
    /// `V_ℓ` per level.
    pub variances: Vec<f64>,
    /// `N_ℓ` per level.
    pub samples: Vec<usize>,
}

impl CostModelParams {
    pub fn new(c0: f64, r: f64, levels: usize, cores: usize, variances: Vec<f64>, samples: Vec<usize>) -> Result<Self> {
        let p = Self {
            c0,
            r,
            levels,
            cores,
            variances,
            samples,
        };
        p.validate()?;
        Ok(p)
    }

    /// `V_ℓ = 10^{−2ℓ}` with sample counts from the optimal allocation at RMSE `eps`.
    pub fn with_variance_decay(c0: f64, r: f64, levels: usize, cores: usize, eps: f64) -> Result<Self> {
        check_rate(r)?;
        let variances: Vec<f64> = (0..=levels).map(|l| 10f64.powi(-2 * l as i32)).collect();
        let costs: Vec<f64> = (0..=levels).map(|l| c0 * r.powi(l as i32)).collect();
        let samples = crate::mlmc::optimal_allocation(
            &variances,
            &costs,
            crate::mlmc::AllocationTarget::Rmse(eps),
        )?;
        Self::new(c0, r, levels, cores, variances, samples)
    }

    pub fn validate(&self) -> Result<()> {
        check_rate(self.r)?;
        if self.levels == 0 {
            return Err(Error::InvalidInput("need L >= 1".into()));
        }
        if self.cores == 0 {
            return Err(Error::InvalidInput("need n_c >= 1".into()));
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(Error::InvalidInput(format!("C0 must be positive, got {}", self.c0)));
        }
        let expected = self.levels + 1;
        if self.samples.len() != expected || self.variances.len() != expected {
            return Err(Error::InvalidInput(format!(
                "need {expected} sample counts and variances, got {} and {}",
                self.samples.len(),
                self.variances.len()
            )));
        }
        Ok(())
    }

    /// `C_ℓ = C₀·r^ℓ`, also evaluated formally for `ℓ < 0`.
    pub fn level_cost(&self, level: i32) -> f64 {
        self.c0 * self.r.powi(level)
    }

    fn ratio(&self, level: usize) -> f64 {
        if level == 0 {
            0.0
        } else {
            1.0 / self.r
        }
    }

    /// `b_ℓ` for every level.
    pub fn batches(&self) -> Vec<usize> {
        (0..=self.levels)
            .map(|l| batch_count(self.samples[l], self.ratio(l), self.cores))
            .collect()
    }

    /// `n_c,para` for the finest level.
    pub fn cores_per_sample(&self) -> Result<usize> {
        cores_per_sample(self.cores, self.samples[self.levels], 1.0 / self.r)
    }
}

/// `ε_∞ = ℰ_comb,∞/ℰ_ref,∞` at iteration count `K`, with `M = n_c,para`.
pub fn effort_ratio_infinite(params: &CostModelParams, k: usize) -> Result<f64> {
    params.validate()?;
    let l = params.levels;
    if params.samples[l] == 0 {
        return Ok(1.0);
    }
    let m = params.cores_per_sample()?;
    let coarse: f64 = (0..l)
        .map(|j| params.samples[j] as f64 * params.level_cost(j as i32))
        .sum();
    let reference = coarse + params.samples[l] as f64 * params.level_cost(l as i32);
    let para = parareal_effort(
        params.level_cost(l as i32),
        params.level_cost(l as i32 - 2),
        m,
        k,
    )?;
    let combined = coarse + params.samples[l] as f64 * para;
    Ok(combined / reference)
}

/// `ε_∞,max`: [`effort_ratio_infinite`] at `K = κ(r, n_c,para)`.
pub fn effort_ratio_max(params: &CostModelParams) -> Result<f64> {
    let m = params.cores_per_sample()?;
    let k = kappa(params.r, m)?;
    if k == 0 {
        return Err(Error::InvalidInput(format!(
            "no iteration count reaches the optimal speedup with n_c,para = {m}"
        )));
    }
    effort_ratio_infinite(params, k)
}

/// `s_{n_c}` at iteration count `K`.
pub fn finite_speedup(params: &CostModelParams, k: usize) -> Result<f64> {
    params.validate()?;
    let l = params.levels;
    let m = params.cores_per_sample()?;
    check_iterations(m, k)?;
    let b = params.batches();
    let r = params.r;
    let coarse: f64 = (0..l).map(|j| b[j] as f64 * r.powi(j as i32)).sum();
    let numerator = coarse + b[l] as f64 * r.powi(l as i32);
    let (kf, mf) = (k as f64, m as f64);
    let para = kf / mf * (r.powi(l as i32) + (mf - (kf + 1.0) / 2.0) * r.powi(l as i32 - 2));
    Ok((params.c0 * numerator) / (params.c0 * (coarse + para)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub cores: usize,
    pub iterations: usize,
    pub speedup: f64,
    pub effort_ratio: f64,
}

/// Outcome for one core count: rows, or the reason none exist.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureSeries {
    pub cores: usize,
    pub rows: std::result::Result<Vec<FigureRow>, Error>,
}

/// Speedup and effort ratio for every `(n_c, K)` with `K ≤ n_c,para`.
pub fn figure_data(
    params: &CostModelParams,
    core_counts: &[usize],
    iterations: std::ops::RangeInclusive<usize>,
) -> Vec<FigureSeries> {
    core_counts
        .iter()
        .map(|&cores| {
            let p = CostModelParams {
                cores,
                ..params.clone()
            };
            let rows = p.cores_per_sample().and_then(|m| {
                iterations
                    .clone()
                    .filter(|&k| k >= 1 && k <= m)
                    .map(|k| {
                        Ok(FigureRow {
                            cores,
                            iterations: k,
                            speedup: finite_speedup(&p, k)?,
                            effort_ratio: effort_ratio_infinite(&p, k)?,
                        })
                    })
                    .collect()
            });
            FigureSeries { cores, rows }
        })
        .collect()
}

pub const FIGURE_CSV_HEADER: &str = "n_c,K,speedup,effort_ratio";

/// CSV with header [`FIGURE_CSV_HEADER`]; series without rows are skipped.
pub fn figure_csv(series: &[FigureSeries]) -> String {
    let mut out = String::from(FIGURE_CSV_HEADER);
    out.push('\n');
    for s in series {
        if let Ok(rows) = &s.rows {
            for row in rows {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    row.cores, row.iterations, row.speedup, row.effort_ratio
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn time_by_iterations(tf: f64, tc: f64, m: usize, k: usize) -> f64 {
        (1..=k)
            .map(|i| tf / m as f64 + (m - i) as f64 / m as f64 * tc)
            .sum()
    }

    fn effort_by_iterations(tf: f64, tc: f64, m: usize, k: usize) -> f64 {
        (1..=k)
            .map(|i| (m - i + 1) as f64 / m as f64 * tf + (m - i) as f64 / m as f64 * tc)
            .sum()
    }

    fn table2() -> CostModelParams {
        CostModelParams::new(1.0, 10.0, 2, 180, vec![1.0, 1e-2, 1e-4], vec![10303, 85, 10]).unwrap()
    }

    #[test]
    fn parareal_time_examples() {
        assert!(rel(parareal_time(100.0, 1.0, 10, 1).unwrap(), 10.9) < 1e-14);
        assert!(rel(parareal_time(100.0, 1.0, 10, 2).unwrap(), 21.7) < 1e-14);
        assert!(rel(time_by_iterations(100.0, 1.0, 10, 2), 21.7) < 1e-14);
        assert_eq!(parareal_time(100.0, 0.0, 10, 10).unwrap(), 100.0);
        assert!(parareal_time(1.0, 1.0, 3, 4).is_err());
        assert!(parareal_time(1.0, 1.0, 3, 0).is_err());
    }

    #[test]
    fn parareal_effort_examples() {
        assert!(rel(parareal_effort(100.0, 1.0, 10, 2).unwrap(), 191.7) < 1e-14);
        assert!(rel(effort_by_iterations(100.0, 1.0, 10, 2), 100.9 + 90.8) < 1e-14);
        assert_eq!(parareal_effort(100.0, 1.0, 1, 1).unwrap(), 100.0);
        let e = parareal_effort(100.0, 0.0, 10, 2).unwrap();
        assert!(rel(e, 190.0) < 1e-14);
        assert!(e > 100.0);
    }

    #[test]
    fn effort_exceeds_sequential_whenever_inequality_holds() {
        for m in 2..=20 {
            for k in 1..m {
                let e = parareal_effort(1.0, 0.0, m, k).unwrap();
                let lower = k as f64 / m as f64 * (m as f64 - (k as f64 + 1.0) / 2.0 + 1.0);
                assert!(e >= lower * (1.0 - 1e-15));
                assert!(e > k as f64 / m as f64);
                if k * (2 * m - k + 1) > 2 * m {
                    assert!(e > 1.0, "m={m} k={k}");
                }
            }
        }
    }

    #[test]
    fn ideal_speedup_examples() {
        assert!(rel(ideal_speedup(10.0, 2).unwrap(), 999.0 / 189.0) < 1e-12);
        assert!(rel(ideal_speedup(2.0, 2).unwrap(), 7.0 / 5.0) < 1e-12);
        assert!(ideal_speedup(1.0, 2).is_err());
        assert!(ideal_speedup(2.0, 0).is_err());
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(kappa(10.0, 16).unwrap(), 1);
        assert_eq!(kappa(10.0, 180).unwrap(), 6);
        assert_eq!(kappa(10.0, 1).unwrap(), 0);
        assert!(kappa(10.0, 0).is_err());
    }

    #[test]
    fn batch_and_core_examples() {
        assert_eq!(batch_count(10303, 0.0, 180), 58);
        assert_eq!(batch_count(10, 0.1, 180), 1);
        assert_eq!(batch_count(0, 0.1, 180), 0);
        assert_eq!(batch_count(180, 0.0, 180), 1);
        assert_eq!(cores_per_sample(180, 10, 0.1).unwrap(), 16);
        assert_eq!(cores_per_sample(10, 10, 0.0).unwrap(), 1);
        assert_eq!(cores_per_sample(1000, 10, 0.1).unwrap(), 90);
        assert!(matches!(
            cores_per_sample(10, 10, 0.1),
            Err(Error::InsufficientCores { .. })
        ));
    }

    #[test]
    fn table2_batches() {
        let p = table2();
        assert_eq!(p.batches(), vec![58, 1, 1]);
        assert_eq!(p.cores_per_sample().unwrap(), 16);
    }

    #[test]
    fn effort_ratio_examples() {
        let mut p = table2();
        // term by term: levels 0, 1 unchanged; level 2 uses ℰ_para(100, 1, 16, 1)
        let ref_effort = 10303.0 + 85.0 * 10.0 + 10.0 * 100.0;
        let para = 1.0 / 16.0 * (16.0 - 1.0) * 101.0 + 100.0 / 16.0;
        let expect = (10303.0 + 850.0 + 10.0 * para) / ref_effort;
        assert!(rel(effort_ratio_infinite(&p, 1).unwrap(), expect) < 1e-12);
        p.samples[2] = 0;
        assert_eq!(effort_ratio_infinite(&p, 1).unwrap(), 1.0);
    }

    #[test]
    fn finite_speedup_table2() {
        let p = table2();
        let num = 58.0 + 10.0 + 100.0;
        let den = 58.0 + 10.0 + (1.0 / 16.0) * (100.0 + 15.0);
        assert!(rel(finite_speedup(&p, 1).unwrap(), num / den) < 1e-12);
        let mut prev = f64::INFINITY;
        for k in 1..=16 {
            let s = finite_speedup(&p, k).unwrap();
            assert!(s < prev);
            prev = s;
        }
        assert!(finite_speedup(&p, 17).is_err());
    }

    #[test]
    fn single_core_per_sample_has_no_speedup() {
        let p = CostModelParams::new(1.0, 10.0, 2, 11, vec![1.0; 3], vec![100, 20, 10]).unwrap();
        assert_eq!(p.cores_per_sample().unwrap(), 1);
        assert_eq!(p.batches()[2], 1);
        assert!(rel(finite_speedup(&p, 1).unwrap(), 1.0) < 1e-15);
    }

    #[test]
    fn figure_rows_match_components() {
        let p = CostModelParams::with_variance_decay(1.0, 10.0, 2, 180, 0.017).unwrap();
        let series = figure_data(&p, &[10, 180, 360], 1..=10);
        assert!(series[0].rows.is_err());
        for s in &series[1..] {
            let rows = s.rows.as_ref().unwrap();
            assert_eq!(rows.len(), 10);
            for row in rows {
                let q = CostModelParams { cores: row.cores, ..p.clone() };
                assert_eq!(row.speedup, finite_speedup(&q, row.iterations).unwrap());
            }
        }
        let csv = figure_csv(&series);
        assert_eq!(csv.lines().next().unwrap(), FIGURE_CSV_HEADER);
        assert_eq!(csv.lines().count(), 21);
    }
}
