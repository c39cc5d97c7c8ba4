use proptest::prelude::*;

use semshield::diffusion::{estimate_timestep, forward_snr, make_schedule};
use semshield::jammer::{gen_jamming, JammerProfile, Waveform};
use semshield::shield::{allocate_power, gen_gaussian_an, AllocationWeights, PowerMetrics};
use semshield::signal::{db_to_linear, measure_power, RngStream};

fn kind_waveform() -> impl Strategy<Value = Waveform> {
    prop_oneof![
        (0.05..0.95f64, prop::option::of(2usize..32)).prop_map(|(duty, period)| Waveform::Pulse { duty, period }),
        (0.0..0.5f64, 0.0..6.28f64).prop_map(|(freq, phase)| Waveform::Cw { freq, phase }),
        Just(Waveform::Noise),
        (0.0..0.5f64, 0.0..0.5f64).prop_map(|(f_start, f_end)| Waveform::Sweep {
            f_start,
            f_end,
            length: None
        }),
    ]
}

fn metrics() -> impl Strategy<Value = PowerMetrics> {
    (0.0..3.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(privacy_mi, comm_mse, percept_mse)| PowerMetrics {
        privacy_mi,
        comm_mse,
        percept_mse,
    })
}

proptest! {
    #[test]
    fn timestep_is_the_log_nearest_step(steps in 2usize..300, snr_db in -40.0..60.0f64) {
        let sch = make_schedule(steps, 1e-4, 0.05).unwrap();
        let target = db_to_linear(snr_db).ln();
        let t = estimate_timestep(db_to_linear(snr_db), &sch).unwrap();
        let d = |s: usize| (forward_snr(s, &sch).unwrap().ln() - target).abs();
        for s in 1..=steps {
            prop_assert!(d(t) <= d(s));
            if d(s) == d(t) {
                prop_assert!(s <= t);
            }
        }
    }

    #[test]
    fn timestep_decreases_with_snr(a in -40.0..60.0f64, b in -40.0..60.0f64) {
        let sch = make_schedule(200, 1e-4, 0.05).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let t_lo = estimate_timestep(db_to_linear(lo), &sch).unwrap();
        let t_hi = estimate_timestep(db_to_linear(hi), &sch).unwrap();
        prop_assert!(t_hi <= t_lo);
    }

    #[test]
    fn forward_snr_strictly_decreases(steps in 2usize..400, b0 in 1e-5..1e-2f64, span in 1e-3..0.2f64) {
        let sch = make_schedule(steps, b0, b0 + span).unwrap();
        for t in 1..steps {
            prop_assert!(forward_snr(t + 1, &sch).unwrap() < forward_snr(t, &sch).unwrap());
        }
    }

    #[test]
    fn jamming_has_exact_power(
        waveform in kind_waveform(),
        jsr_db in -20.0..50.0f64,
        dim in 8usize..160,
        seed in any::<u64>(),
    ) {
        let p = JammerProfile::new(waveform, jsr_db, seed).unwrap();
        let j = gen_jamming(&p, dim, &mut RngStream::new(seed, 1)).unwrap();
        prop_assert_eq!(j.dim(), dim);
        prop_assert!((measure_power(&j) / db_to_linear(jsr_db) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_an_scales_a_unit_draw(power in 0.0..10.0f64, dim in 1usize..200, seed in any::<u64>()) {
        let an = gen_gaussian_an(dim, power, &mut RngStream::new(seed, 2)).unwrap();
        let unit = gen_gaussian_an(dim, 1.0, &mut RngStream::new(seed, 2)).unwrap();
        for (a, u) in an.values().iter().zip(unit.values()) {
            prop_assert!((a - power.sqrt() * u).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn gaussian_an_power_concentrates(power in 0.01..10.0f64, seed in any::<u64>()) {
        // 8192 chi-square draws: relative sd of the mean is 1.6%
        let an = gen_gaussian_an(8192, power, &mut RngStream::new(seed, 3)).unwrap();
        prop_assert!((measure_power(&an) / power - 1.0).abs() < 0.08);
    }

    #[test]
    fn allocation_ignores_metric_scale(
        table in prop::collection::vec(metrics(), 2..12),
        scale in (0.01..100.0f64, 0.01..100.0f64, 0.01..100.0f64),
        shift in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
        w in (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64),
    ) {
        prop_assume!(w.0 + w.1 + w.2 > 0.05);
        let sum = w.0 + w.1 + w.2;
        let w = AllocationWeights::new(w.0 / sum, w.1 / sum, (1.0 - w.0 / sum - w.1 / sum).max(0.0)).unwrap();
        let grid: Vec<f64> = (0..table.len()).map(|i| 0.01 * (i + 1) as f64).collect();
        let at = |p: f64| table[(p / 0.01).round() as usize - 1];
        let plain = allocate_power(&grid, |p| Ok(at(p)), &w).unwrap();
        let affine = allocate_power(&grid, |p| {
            let m = at(p);
            Ok(PowerMetrics {
                privacy_mi: scale.0 * m.privacy_mi + shift.0,
                comm_mse: scale.1 * m.comm_mse + shift.1,
                percept_mse: scale.2 * m.percept_mse + shift.2,
            })
        }, &w).unwrap();
        for (a, b) in plain.table.iter().zip(&affine.table) {
            prop_assert!((a.objective - b.objective).abs() < 1e-9);
        }
        let best = plain.table.iter().map(|g| g.objective).fold(f64::INFINITY, f64::min);
        prop_assert!((plain.objective - best).abs() < 1e-12);
        prop_assert!(plain.table.iter().all(|g| g.objective > best || g.an_power >= plain.an_power));
    }
}
