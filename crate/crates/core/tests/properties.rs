//! Randomized invariants of the core building blocks.

use std::sync::Arc;

use ppenkf_core::filters::{
    damped_analysis, enkf_analysis, ensemble_interpolation_operator, hybrid_analysis, local_analysis,
    parameter_background, ppenkf_analysis, ObservationBatch,
};
use ppenkf_core::geostat::{
    build_interpolation_operator, normal_score_back, normal_score_forward, taper_weight, Variogram,
};
use ppenkf_core::metrics::{compute_correlation_field, compute_overall_std, compute_rmse};
use ppenkf_core::state::ensemble_moments;
use ppenkf_core::{DynamicKind, Ensemble, Grid, Matrix, StateLayout, StateVector};
use proptest::prelude::*;

fn layout_strategy() -> impl Strategy<Value = (StateLayout, Vec<f64>)> {
    (1usize..5, 1usize..5, any::<bool>(), any::<u64>()).prop_flat_map(|(nx, ny, conc, seed)| {
        let n = nx * ny;
        let kinds = if conc {
            vec![DynamicKind::Head, DynamicKind::Concentration]
        } else {
            vec![DynamicKind::Head]
        };
        (
            Just((nx, ny, kinds, seed)),
            proptest::sample::subsequence((0..n).collect::<Vec<_>>(), 0..=n),
        )
            .prop_flat_map(|((nx, ny, kinds, _), pilots)| {
                let grid = Grid::new(nx, ny, 1.0, 1.0).unwrap();
                let layout = StateLayout::new(grid, &pilots, &kinds).unwrap();
                let n_s = layout.n_s();
                (Just(layout), proptest::collection::vec(-1e3f64..1e3, n_s))
            })
    })
}

fn ensemble_from(layout: StateLayout, n_e: usize, values: &[f64]) -> Ensemble {
    let n_s = layout.n_s();
    let members = (0..n_e)
        .map(|k| StateVector::new(values[k * n_s..(k + 1) * n_s].to_vec()))
        .collect();
    Ensemble::new(Arc::new(layout), members).unwrap()
}

/// 3×3 grid, 20 m cells, head only; observation of head at cells 4 and 0.
fn small_problem(values: &[f64], n_e: usize, pilots: &[usize]) -> (Ensemble, ObservationBatch) {
    let grid = Grid::square(3, 60.0).unwrap();
    let layout = StateLayout::new(grid, pilots, &[DynamicKind::Head]).unwrap();
    let n_s = layout.n_s();
    let mut members = Vec::new();
    for k in 0..n_e {
        let mut x = values[k * n_s..(k + 1) * n_s].to_vec();
        for c in 0..9 {
            let h = layout.dynamic_index(DynamicKind::Head, c).unwrap();
            x[h] += 2.0 * x[layout.param_index(c)];
        }
        members.push(StateVector::new(x));
    }
    let layout = Arc::new(layout);
    let idx = vec![
        layout.dynamic_index(DynamicKind::Head, 4).unwrap(),
        layout.dynamic_index(DynamicKind::Head, 0).unwrap(),
    ];
    let d = Matrix::from_fn(2, n_e, |m, k| 0.3 * m as f64 + values[(k + m) % values.len()] * 0.1);
    let obs = ObservationBatch::new(vec![0.3, 0.1], vec![0.2, 0.3], idx)
        .unwrap()
        .with_perturbed(d)
        .unwrap();
    (Ensemble::new(layout, members).unwrap(), obs)
}

fn max_member_diff(a: &Ensemble, b: &Ensemble) -> f64 {
    a.members()
        .iter()
        .zip(b.members())
        .flat_map(|(x, y)| x.as_slice().iter().zip(y.as_slice()).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_then_concat_is_identity((layout, values) in layout_strategy()) {
        let x = StateVector::new(values);
        let (p, r, d) = x.partition(&layout).unwrap();
        prop_assert_eq!(p.len(), layout.n_p());
        prop_assert_eq!(r.len(), layout.n_r());
        prop_assert_eq!(d.len(), layout.n_d());
        prop_assert_eq!(StateVector::concat(p, r, d), x.clone());
    }

    #[test]
    fn moments_match_double_loop(values in proptest::collection::vec(-10f64..10.0, 10 * 20)) {
        let grid = Grid::new(10, 1, 1.0, 1.0).unwrap();
        let layout = StateLayout::new(grid, &[0, 3, 7], &[DynamicKind::Head]).unwrap();
        let ens = ensemble_from(layout, 10, &values);
        let (mean, cov) = ensemble_moments(&ens).unwrap();
        for i in 0..20 {
            let mi: f64 = (0..10).map(|k| values[k * 20 + i]).sum::<f64>() / 10.0;
            prop_assert!((mean[i] - mi).abs() <= 1e-12 * (1.0 + mi.abs()));
            for j in 0..20 {
                let mj: f64 = (0..10).map(|k| values[k * 20 + j]).sum::<f64>() / 10.0;
                let mut c = 0.0;
                for k in 0..10 {
                    c += (values[k * 20 + i] - mi) * (values[k * 20 + j] - mj);
                }
                c /= 9.0;
                prop_assert!((cov[(i, j)] - c).abs() <= 1e-12 * (1.0 + c.abs()));
                prop_assert_eq!(cov[(i, j)], cov[(j, i)]);
            }
        }
    }

    #[test]
    fn kriging_operator_keeps_identity_blocks(
        seed_vals in proptest::collection::vec(-1f64..1.0, 12),
        n_pilots in 1usize..6,
    ) {
        let grid = Grid::square(4, 40.0).unwrap();
        let pilots: Vec<usize> = (0..n_pilots).map(|k| k * 3).collect();
        let layout = StateLayout::new(grid, &pilots, &[DynamicKind::Head]).unwrap();
        let vg = Variogram::new(0.0, 0.5, 30.0).unwrap();
        let rp = ppenkf_core::geostat::covariance_between(&grid, &vg, layout.nonpilot_cells(), &pilots);
        let pp = ppenkf_core::geostat::covariance_between(&grid, &vg, &pilots, &pilots);
        let op = build_interpolation_operator(&rp, &pp, &layout).unwrap();
        let restricted: Vec<f64> = (0..n_pilots + 16).map(|k| seed_vals[k % 12]).collect();
        let full = op.apply(&restricted).unwrap();
        prop_assert_eq!(&full[..n_pilots], &restricted[..n_pilots]);
        prop_assert_eq!(&full[layout.n_params()..], &restricted[n_pilots..]);
        // zero at pilots and dynamics maps to zero
        let mut z = restricted.clone();
        z[..n_pilots].iter_mut().for_each(|v| *v = 0.0);
        let out = op.apply(&z).unwrap();
        prop_assert!(out[n_pilots..layout.n_params()].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn taper_is_a_bounded_decreasing_weight(h1 in 0f64..1000.0, h2 in 0f64..1000.0, c in 1f64..300.0) {
        let (lo, hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
        let (wl, wh) = (taper_weight(lo, c).unwrap(), taper_weight(hi, c).unwrap());
        prop_assert!((0.0..=1.0).contains(&wl) && (0.0..=1.0).contains(&wh));
        prop_assert!(wh <= wl + 1e-15);
        if hi >= 2.0 * c {
            prop_assert_eq!(wh, 0.0);
        }
    }

    #[test]
    fn normal_score_round_trip_and_monotone(mut values in proptest::collection::vec(-50f64..50.0, 2..60)) {
        values[0] = -51.0;
        let (scores, table) = normal_score_forward(&values).unwrap();
        let back = normal_score_back(&scores, &table);
        for (a, b) in back.iter().zip(&values) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        for i in 0..values.len() {
            for j in 0..values.len() {
                if values[i] < values[j] {
                    prop_assert!(scores[i] < scores[j]);
                }
            }
        }
    }

    #[test]
    fn variants_reduce_to_enkf(values in proptest::collection::vec(-1f64..1.0, 8 * 18)) {
        let (ens, obs) = small_problem(&values, 8, &[4, 0]);
        let before = ens.clone();
        let reference = enkf_analysis(&ens, &obs).unwrap();
        prop_assert!(max_member_diff(&damped_analysis(&ens, &obs, 1.0).unwrap(), &reference) < 1e-8);
        prop_assert!(max_member_diff(&local_analysis(&ens, &obs, 1e9).unwrap(), &reference) < 1e-8);
        let bg = parameter_background(ens.layout(), 0.25);
        prop_assert!(max_member_diff(&hybrid_analysis(&ens, &obs, 1.0, &bg).unwrap(), &reference) < 1e-8);
        let all: Vec<usize> = (0..9).collect();
        let (ens_all, obs_all) = small_problem(&values, 8, &all);
        let reference_all = enkf_analysis(&ens_all, &obs_all).unwrap();
        let pp = ppenkf_analysis(&ens_all, &obs_all, &Matrix::zeros(0, 9)).unwrap();
        prop_assert!(max_member_diff(&pp, &reference_all) < 1e-8);
        // inputs are never mutated
        prop_assert_eq!(ens.members(), before.members());
    }

    #[test]
    fn ppenkf_structure_on_random_toys(values in proptest::collection::vec(-1f64..1.0, 12 * 18)) {
        let (ens, obs) = small_problem(&values, 12, &[4, 0, 8]);
        let layout = ens.layout().clone();
        let prior_rp = Matrix::from_fn(layout.n_r(), 3, |r, p| 0.05 / (1.0 + r as f64 + p as f64));
        let out = ppenkf_analysis(&ens, &obs, &prior_rp).unwrap();
        let op = ensemble_interpolation_operator(&ens, &prior_rp).unwrap();
        for k in 0..12 {
            let (x0, x1) = (&ens.members()[k], &out.members()[k]);
            let dp: Vec<f64> = (0..3).map(|p| x1[p] - x0[p]).collect();
            let dr = op.interpolate(&dp);
            for r in 0..layout.n_r() {
                prop_assert!(((x1[3 + r] - x0[3 + r]) - dr[r]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn metric_oracles(values in proptest::collection::vec(-3f64..3.0, 6 * 25), obs in proptest::collection::vec(-3f64..3.0, 6)) {
        let members: Vec<Vec<f64>> = values.chunks(25).map(<[f64]>::to_vec).collect();
        let truth = &members[0];
        let est = &members[1];
        let brute_rmse = (truth.iter().zip(est).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 25.0).sqrt();
        prop_assert!((compute_rmse(est, truth).unwrap() - brute_rmse).abs() < 1e-12);

        let mut mean_var = 0.0;
        for c in 0..25 {
            let m = members.iter().map(|f| f[c]).sum::<f64>() / 6.0;
            mean_var += members.iter().map(|f| (f[c] - m).powi(2)).sum::<f64>() / 5.0;
        }
        let brute_std = (mean_var / 25.0).sqrt();
        prop_assert!((compute_overall_std(&members).unwrap() - brute_std).abs() < 1e-12);

        let field = compute_correlation_field(&obs, &members).unwrap();
        let om = obs.iter().sum::<f64>() / 6.0;
        for c in 0..25 {
            let m = members.iter().map(|f| f[c]).sum::<f64>() / 6.0;
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for k in 0..6 {
                let (dx, dy) = (members[k][c] - m, obs[k] - om);
                sxy += dx * dy;
                sxx += dx * dx;
                syy += dy * dy;
            }
            let rho = sxy / (sxx * syy).sqrt();
            prop_assert!((field.values[c] - rho).abs() < 1e-12);
        }
    }
}
