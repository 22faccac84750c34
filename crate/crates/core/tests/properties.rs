use num_complex::Complex64;
use proptest::prelude::*;

use pass_core::channel::{effective_channel, effective_channel_product, stacked_response, waveguide_response, PinchingLayout};
use pass_core::kernel::{maxmin_quadratics_ball, time_allocation, ComplexQuadratic};
use pass_core::pdd::diagonal_beamformers;
use pass_core::rates::{dot, norm_sqr, rate_wd, rate_wm};
use pass_core::scenario::{build_scenario, Point3, Scenario, ScenarioConfig};
use pass_core::ws_unicast::mrt_beamformer;

fn scenario(n: usize) -> Scenario {
    let cfg = ScenarioConfig {
        n_pas: n,
        ..ScenarioConfig::default()
    };
    build_scenario(&cfg, 20.0).unwrap()
}

/// Feasible layout built from sorted gaps in `[0, 1)`.
fn layout_from(s: &Scenario, fractions: &[f64]) -> PinchingLayout {
    let g = &s.geometry;
    let n = g.antennas_per_waveguide;
    let slack = g.waveguide_length_m - (n - 1) as f64 * g.min_antenna_spacing_m;
    let rows = (0..g.num_waveguides)
        .map(|i| {
            let mut cuts: Vec<f64> = fractions[i * n..(i + 1) * n].iter().map(|f| f * slack).collect();
            cuts.sort_by(f64::total_cmp);
            cuts.iter().enumerate().map(|(j, c)| c + j as f64 * g.min_antenna_spacing_m).collect()
        })
        .collect();
    PinchingLayout::new(rows, g).unwrap()
}

fn complex_vec(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), len).prop_map(|v| v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn channel_forms_agree(fr in prop::collection::vec(0.0..1.0f64, 8), ux in 0.0..10.0f64, uy in -6.0..6.0f64) {
        let s = scenario(4);
        let layout = layout_from(&s, &fr);
        let user = Point3::ground(ux, uy);
        let a = effective_channel(&user, &layout, &s.geometry, &s.rf);
        let b = effective_channel_product(&user, &layout, &s.geometry, &s.rf).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).norm() <= 1e-10 * y.norm().max(1e-300));
            prop_assert!(x.norm() > 0.0);
        }
    }

    #[test]
    fn waveguide_columns_have_unit_norm(fr in prop::collection::vec(0.0..1.0f64, 12)) {
        let s = scenario(6);
        let layout = layout_from(&s, &fr);
        let g = stacked_response(&layout, &s.geometry, &s.rf).unwrap();
        for c in 0..g.ncols() {
            prop_assert!((g.column(c).norm() - 1.0).abs() < 1e-12);
        }
        let row = waveguide_response(layout.row(0), &s.rf, s.geometry.waveguide_length_m).unwrap();
        for v in row {
            prop_assert!((v.norm() - 1.0 / 6f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn antenna_distance_at_least_height(fr in prop::collection::vec(0.0..1.0f64, 8), ux in -5.0..15.0f64, uy in -10.0..10.0f64) {
        let s = scenario(4);
        let layout = layout_from(&s, &fr);
        let user = Point3::ground(ux, uy);
        for i in 0..2 {
            for n in 0..4 {
                let r = pass_core::channel::antenna_user_distance(&user, &layout, &s.geometry, i, n);
                prop_assert!(r >= s.geometry.height_m);
            }
        }
    }

    #[test]
    fn division_is_diagonal_multiplexing(seed in 0u64..1000, p0 in 0.0..1.0f64, fr in prop::collection::vec(0.0..1.0f64, 16)) {
        let s = scenario(8);
        let users = s.sample_users(seed).unwrap();
        let layout = layout_from(&s, &fr);
        let pmax = s.rf.max_transmit_power_w;
        let powers = [p0 * pmax, (1.0 - p0) * pmax];
        let wd = rate_wd(&layout, &powers, &users, &s.geometry, &s.rf);
        let wm = rate_wm(&layout, &diagonal_beamformers(&powers), &users, &s.geometry, &s.rf);
        for (a, b) in wd.rates.iter().zip(&wm.rates) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn rates_ignore_per_stream_phase(seed in 0u64..1000, w in complex_vec(4), t0 in 0.0..6.3f64, t1 in 0.0..6.3f64) {
        let s = scenario(8);
        let users = s.sample_users(seed).unwrap();
        let layout = PinchingLayout::uniform(&s.geometry);
        let bf = vec![w[..2].to_vec(), w[2..].to_vec()];
        let rot = [Complex64::from_polar(1.0, t0), Complex64::from_polar(1.0, t1)];
        let turned: Vec<Vec<Complex64>> = bf.iter().zip(rot).map(|(v, r)| v.iter().map(|c| c * r).collect()).collect();
        let a = rate_wm(&layout, &bf, &users, &s.geometry, &s.rf);
        let b = rate_wm(&layout, &turned, &users, &s.geometry, &s.rf);
        prop_assert!((a.min_rate - b.min_rate).abs() <= 1e-9 * (1.0 + a.min_rate));
    }

    #[test]
    fn more_power_never_hurts(seed in 0u64..1000, w in complex_vec(4), gain in 1.0..100.0f64) {
        let s = scenario(8);
        let users = s.sample_users(seed).unwrap();
        let layout = PinchingLayout::uniform(&s.geometry);
        let bf = vec![w[..2].to_vec(), w[2..].to_vec()];
        let louder: Vec<Vec<Complex64>> = bf.iter().map(|v| v.iter().map(|c| c * gain.sqrt()).collect()).collect();
        let a = rate_wm(&layout, &bf, &users, &s.geometry, &s.rf);
        let b = rate_wm(&layout, &louder, &users, &s.geometry, &s.rf);
        for (x, y) in a.rates.iter().zip(&b.rates) {
            prop_assert!(y >= &(x - 1e-12));
        }
    }

    #[test]
    fn time_shares_equalise_rates(rates in prop::collection::vec(0.01..20.0f64, 1..6)) {
        let (lambda, xi) = time_allocation(&rates).unwrap();
        prop_assert!((lambda.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (l, r) in lambda.iter().zip(&rates) {
            prop_assert!(*l > 0.0);
            prop_assert!((l * r - xi).abs() <= 1e-12 * xi.max(1.0));
        }
    }

    #[test]
    fn ball_kernel_stays_feasible(a in complex_vec(2), b in complex_vec(2), c in -0.5..0.5f64, p in 0.1..4.0f64) {
        let q = nalgebra::DMatrix::from_fn(2, 2, |i, j| b[i].conj() * b[j]);
        let fs = vec![
            ComplexQuadratic { a: a.clone(), q: q.clone(), c },
            ComplexQuadratic { a: a.iter().map(|v| -v).collect(), q, c: -c },
        ];
        let rep = maxmin_quadratics_ball(&fs, p, None).unwrap();
        let z = rep.complex_optimizer();
        prop_assert!(norm_sqr(&z) <= p * (1.0 + 1e-9));
        let worst = fs.iter().map(|f| f.value(&z)).fold(f64::INFINITY, f64::min);
        prop_assert!((worst - rep.gamma).abs() <= 1e-8 * (1.0 + worst.abs()));
    }

    #[test]
    fn mrt_is_never_beaten(h in complex_vec(3), v in complex_vec(3), p in 0.01..10.0f64) {
        prop_assume!(norm_sqr(&h) > 1e-6 && norm_sqr(&v) > 1e-6);
        let w = mrt_beamformer(&h, p).unwrap();
        prop_assert!((norm_sqr(&w) - p).abs() <= 1e-12 * p);
        let scale = (p / norm_sqr(&v)).sqrt();
        let v: Vec<Complex64> = v.iter().map(|c| c * scale).collect();
        prop_assert!(dot(&h, &v).norm_sqr() <= dot(&h, &w).norm_sqr() * (1.0 + 1e-12));
    }

    #[test]
    fn config_round_trips(w in 1.0..40.0f64, sx in 0.5..10.0f64, n in 1usize..13, g in 1usize..4) {
        let cfg = ScenarioConfig { w_m: w, s_x_m: sx, n_pas: n, g_users: g, ..ScenarioConfig::default() };
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &cfg);
        let tom = toml::to_string(&cfg).unwrap();
        let back: ScenarioConfig = toml::from_str(&tom).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(build_scenario(&back, 20.0).unwrap(), build_scenario(&cfg, 20.0).unwrap());
    }

    #[test]
    fn users_stay_inside_their_rectangles(seed in any::<u64>(), sx in 0.1..10.0f64, w in 1.0..40.0f64) {
        let cfg = ScenarioConfig { s_x_m: sx, w_m: w, ..ScenarioConfig::default() };
        let s = build_scenario(&cfg, 20.0).unwrap();
        let users = s.sample_users(seed).unwrap();
        for (u, p) in users.positions.iter().enumerate() {
            prop_assert!(s.regions.rects[users.group_of(u)].contains_strictly(p));
        }
    }
}
