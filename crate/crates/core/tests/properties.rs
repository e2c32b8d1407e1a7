use mlmc_parareal::costmodel::{
    batch_count, effort_ratio_infinite, ideal_speedup, kappa, parareal_effort, parareal_time, CostModelParams,
};
use mlmc_parareal::executor::{schedule_level, Executor, Plan, Task, TaskOutput};
use mlmc_parareal::mlmc::{
    allocation_weights, mlmc_estimate, optimal_allocation, AllocationTarget, EstimatorOptions, LevelStats,
    SamplingPolicy,
};
use mlmc_parareal::model::{
    draw_parameters, Forcing, Hierarchy, LinearSystemModel, ModelFamily, QoiDefinition, QoiKind, ScalarToyFamily,
    Waveform,
};
use mlmc_parareal::parareal::{parareal_solve, PararealConfig};
use mlmc_parareal::timeint::propagate;
use mlmc_parareal::RandomStream;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn tau_k(tf: f64, tc: f64, m: usize, k: usize) -> f64 {
    tf / m as f64 + (m - k) as f64 / m as f64 * tc
}

fn effort_k(tf: f64, tc: f64, m: usize, k: usize) -> f64 {
    (m - k + 1) as f64 / m as f64 * tf + (m - k) as f64 / m as f64 * tc
}

/// Largest `K ≤ n` whose Parareal time on level 2 fits in one level-1 solve.
fn kappa_scan(r: f64, n: usize) -> usize {
    (1..=n)
        .take_while(|&k| parareal_time(r * r, 1.0, n, k).unwrap() <= r)
        .last()
        .unwrap_or(0)
}

#[test]
fn kappa_matches_scan_on_grid() {
    for r in 2..=12 {
        for n in 1..=256 {
            let r = r as f64;
            assert_eq!(kappa(r, n).unwrap(), kappa_scan(r, n), "r={r} n={n}");
        }
    }
}

fn two_state(stiffness: [f64; 4], amplitude: f64) -> LinearSystemModel {
    LinearSystemModel::new(
        DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        DMatrix::from_row_slice(2, 2, &stiffness),
        Forcing {
            profile: DVector::from_column_slice(&[1.0, -0.5]),
            waveform: Waveform::Sine {
                amplitude,
                frequency: 3.0,
                phase: 0.2,
            },
        },
        DVector::from_column_slice(&[1.0, 0.0]),
        QoiDefinition {
            kind: QoiKind::MeanJouleLoss,
            horizon: 1.0,
        },
    )
    .unwrap()
}

proptest! {
    #[test]
    fn closed_forms_equal_iteration_sums(m in 1usize..=32, kf in 0.0f64..1.0, tf in 1e-3f64..1e3, tc in 0.0f64..1e2) {
        let k = 1 + ((m - 1) as f64 * kf).round() as usize;
        let time: f64 = (1..=k).map(|i| tau_k(tf, tc, m, i)).sum();
        let effort: f64 = (1..=k).map(|i| effort_k(tf, tc, m, i)).sum();
        prop_assert!(rel(parareal_time(tf, tc, m, k).unwrap(), time) <= 1e-12);
        prop_assert!(rel(parareal_effort(tf, tc, m, k).unwrap(), effort) <= 1e-12);
    }

    #[test]
    fn parareal_rejects_k_beyond_m(m in 1usize..20, extra in 1usize..5) {
        prop_assert!(parareal_time(1.0, 1.0, m, m + extra).is_err());
        prop_assert!(parareal_effort(1.0, 1.0, m, 0).is_err());
    }

    #[test]
    fn ideal_speedup_is_sum_ratio(r in 1.01f64..50.0, levels in 1usize..8) {
        let c: Vec<f64> = (0..=levels).map(|l| r.powi(l as i32)).collect();
        let total: f64 = c.iter().sum();
        let combined: f64 = c[..levels].iter().sum::<f64>() + c[levels - 1];
        let s = ideal_speedup(r, levels).unwrap();
        prop_assert!(rel(s, total / combined) <= 1e-12);
        prop_assert!(s > 1.0);
    }

    #[test]
    fn kappa_not_above_rate(r in 1.01f64..40.0, n in 1usize..5000) {
        prop_assert!(kappa(r, n).unwrap() as f64 <= r);
    }

    #[test]
    fn effort_ratio_at_least_one(r in 2.0f64..20.0, n0 in 1usize..20000, n1 in 1usize..500, n2 in 1usize..20, k in 1usize..8) {
        let levels = 2;
        let cores = (n2 as f64 * (1.0 + 1.0 / r)).ceil() as usize * 4;
        let variances = vec![1.0, 0.01, 1e-4];
        let p = CostModelParams::new(1.0, r, levels, cores, variances, vec![n0, n1, n2]).unwrap();
        let m = p.cores_per_sample().unwrap();
        prop_assume!(k <= m);
        prop_assert!(effort_ratio_infinite(&p, k).unwrap() >= 1.0);
    }

    #[test]
    fn schedule_matches_batch_count(n in 0usize..3000, denom in 1usize..40, cores in 1usize..400) {
        let ratio = 1.0 / denom as f64;
        let tasks: Vec<Task> = (0..n as u64).map(|k| Task::coupled(1, k, 1.0, ratio)).collect();
        prop_assert_eq!(schedule_level(&tasks, cores).unwrap().len(), batch_count(n, ratio, cores));
        let single: Vec<Task> = (0..n as u64).map(|k| Task::sequential(0, k, 1.0)).collect();
        prop_assert_eq!(schedule_level(&single, cores).unwrap().len(), batch_count(n, 0.0, cores));
    }

    #[test]
    fn simulated_effort_is_sum_of_tasks(costs in prop::collection::vec(0.01f64..10.0, 1..60), cores in 1usize..16) {
        let tasks: Vec<Task> = costs.iter().enumerate().map(|(k, &c)| Task::coupled(1, k as u64, c, c / 3.0)).collect();
        let plan = Plan { finest_level: 1, tasks };
        let out = Executor::simulated(cores).run(&plan, |_| Ok(TaskOutput::new(()))).unwrap();
        let total: f64 = costs.iter().map(|c| c + c / 3.0).sum();
        prop_assert!(rel(out.ledger.total_effort_core_s, total) <= 1e-12);
        prop_assert!(out.ledger.total_effort_core_s >= out.ledger.total_wall_s);
        let seen: f64 = out.reports.iter().map(|r| r.effort_core_s).sum();
        prop_assert!(rel(seen, total) <= 1e-12);
    }

    #[test]
    fn allocation_weights_and_scaling(v in prop::collection::vec(1e-8f64..10.0, 1..6), seed in 0u64..1000, scale in 0.01f64..100.0) {
        let c: Vec<f64> = (0..v.len()).map(|l| (1.0 + seed as f64 % 7.0) * 10f64.powi(l as i32)).collect();
        let w = allocation_weights(&v, &c).unwrap();
        for l in 0..v.len() {
            prop_assert!(rel(w[l], (v[l] / c[l]).sqrt()) <= 1e-12);
        }
        let cs: Vec<f64> = c.iter().map(|x| x * scale).collect();
        let ws = allocation_weights(&v, &cs).unwrap();
        for l in 1..v.len() {
            prop_assert!(rel(ws[l] / ws[0], w[l] / w[0]) <= 1e-12);
        }
        let n = optimal_allocation(&v, &c, AllocationTarget::Rmse(0.1)).unwrap();
        prop_assert!(n.iter().all(|&x| x >= 2));
        let bias_free_var: f64 = v.iter().zip(&n).map(|(v, &n)| v / n as f64).sum();
        prop_assert!(bias_free_var <= 0.1 * 0.1 / 2.0 * (1.0 + 1e-9));
    }

    #[test]
    fn level_stats_accumulators(ys in prop::collection::vec(-1e3f64..1e3, 2..200)) {
        let mut s = LevelStats::new(0);
        for &y in &ys {
            s.push(y, 1.0);
        }
        let n = ys.len() as f64;
        let var = s.var_y.unwrap();
        prop_assert!(var >= 0.0);
        prop_assert!((s.mean_y - s.sum_y / n).abs() <= 1e-10 * (1.0 + s.sum_y.abs() / n));
        let naive = (s.sum_y2 - n * s.mean_y * s.mean_y) / (n - 1.0);
        prop_assert!((var - naive).abs() <= 1e-8 * (1.0 + s.sum_y2 / n));
    }

    #[test]
    fn draws_stay_in_support(seed in any::<u64>(), level in 0usize..8, index in 0u64..1_000_000) {
        let f = ScalarToyFamily::new(2.0, 0.05, 0.0, 1.0).unwrap();
        let p = draw_parameters(f.input(), &RandomStream::new(seed, level, index));
        let x = p.values()[0];
        prop_assert!((1.9..=2.1).contains(&x));
        let again = draw_parameters(f.input(), &RandomStream::new(seed, level, index));
        prop_assert_eq!(p, again);
    }

    #[test]
    fn parareal_frozen_prefix_and_exactness(k11 in 0.5f64..5.0, k12 in -0.5f64..0.5, amp in 0.0f64..4.0, mi in 0usize..4, kf in 0.0f64..1.0) {
        let m = [2usize, 4, 5, 10][mi];
        let model = two_state([k11, k12, k12, 2.0], amp);
        let x0 = model.initial_state().clone();
        let k_max = 1 + ((m - 1) as f64 * kf).round() as usize;
        let cfg = PararealConfig::new(m, 1e-3, 1e-2, 0.0).with_max_iterations(k_max);
        let res = parareal_solve(&model, 0.0, 1.0, &x0, &cfg).unwrap();
        prop_assert!(res.iterations <= k_max);
        for n in 1..=res.iterations {
            let t = n as f64 / m as f64;
            let seq = propagate(&model, 0.0, t, 1e-3, &x0).unwrap();
            prop_assert_eq!(&res.boundary_states[n], &seq, "boundary {}", n);
        }
        if res.iterations == m || res.defect_history.last() == Some(&0.0) {
            let seq = propagate(&model, 0.0, 1.0, 1e-3, &x0).unwrap();
            prop_assert!((res.final_state() - &seq).norm() <= 1e-12 * seq.norm().max(1e-300));
        }
    }

    #[test]
    fn estimates_independent_of_cores_and_workers(seed in 0u64..1000, cores in 1usize..64, workers in 1usize..4) {
        let f = ScalarToyFamily::new(1.0, 0.3, 2.0, 1.0).unwrap();
        let h = Hierarchy::new(&[0.25, 0.125, 0.0625]).unwrap();
        let policy = SamplingPolicy::fixed(vec![17, 6, 3]);
        let opts = EstimatorOptions { seed, ..Default::default() };
        let base = mlmc_estimate(&f, &h, &policy, None, &Executor::simulated(1), &opts).unwrap();
        let other = mlmc_estimate(&f, &h, &policy, None, &Executor::simulated(cores).with_workers(workers), &opts).unwrap();
        prop_assert_eq!(base.expectation.to_bits(), other.expectation.to_bits());
        prop_assert_eq!(&base.per_level, &other.per_level);
        let telescoped: f64 = base.per_level.iter().map(|s| s.mean_y).sum();
        prop_assert_eq!(base.expectation.to_bits(), telescoped.to_bits());
    }
}
