//! Acceptance criteria A1..A9. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! Models are trained once with the default job configurations (the same
//! settings as `configs/*.json`). Data-driven checks recompute their
//! statistics from the raw records and cross-check the harness verdicts.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::Rng;
use semshield::codec::SemanticCodec;
use semshield::defense::{identify_jamming, Branch, IdentifiedKind};
use semshield::diffusion::{estimate_timestep, forward_diffuse, forward_snr, make_schedule};
use semshield::harness::checkpoint::{decode, encode, Model};
use semshield::harness::config::{CheckpointPaths, CodecJob, DenoiserJob, EveJob, ExperimentConfig, Scenario, SnrMode};
use semshield::harness::experiment::{run_codec_job, run_denoiser_job, run_eve_job, run_experiment, EvalSet, Models};
use semshield::harness::report::{evaluate, metrics_csv_bytes, MetricsRecord, Status};
use semshield::jammer::{
    gen_adversarial, gen_jamming, AttackSpec, JammerProfile, JammingKind, ReconstructionObjective, Waveform,
};
use semshield::shield::{allocate_power, default_an_grid, AllocationWeights, PowerMetrics};
use semshield::signal::{add_white_noise, db_to_linear, LatentSignal, RngStream};

struct Fixture {
    models: Models,
    test_images: Vec<semshield::data::ImageSample>,
}

fn train_fixture() -> Fixture {
    let t = Instant::now();
    let codec_job = CodecJob::default();
    let (codec, _) = run_codec_job(&codec_job).expect("codec training");
    let (denoiser, _) = run_denoiser_job(&DenoiserJob::default(), &codec).expect("denoiser training");
    let (eve, _) = run_eve_job(&EveJob::default(), &codec).expect("eve training");
    let test_images = codec_job.dataset.load_test().expect("test split");
    eprintln!("fixture: models trained in {:.1}s", t.elapsed().as_secs_f64());
    Fixture {
        models: Models {
            codec,
            denoiser,
            eve: Some(eve),
        },
        test_images,
    }
}

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, pass, detail }
}

fn config(scenario: Scenario, snr_db: &[f64], eval_images: usize) -> ExperimentConfig {
    ExperimentConfig {
        scenario,
        snr_db: snr_db.to_vec(),
        an_power: Vec::new(),
        eve_snr_db: None,
        jammer: None,
        an_attack: AttackSpec::default(),
        weights: AllocationWeights::default(),
        seeds: vec![1, 2, 3, 4, 5],
        eval_images,
        dataset: Default::default(),
        checkpoints: CheckpointPaths {
            codec: "unused".into(),
            denoiser: "unused".into(),
            eve: Some("unused".into()),
        },
        snr_mode: SnrMode::Genie,
    }
}

fn run(fx: &Fixture, cfg: &ExperimentConfig) -> Vec<MetricsRecord> {
    let eval = EvalSet::new(fx.test_images[..cfg.eval_images].to_vec(), &fx.models.codec);
    run_experiment(cfg, &fx.models, &eval).expect("experiment run")
}

/// Seed-mean of `f` over rows matching `scenario`, `snr` and `an_power`.
fn mean(rows: &[MetricsRecord], scenario: &str, snr: f64, an: Option<f64>, f: fn(&MetricsRecord) -> Option<f64>) -> f64 {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.scenario == scenario && r.snr_db == snr && r.an_power == an)
        .map(|r| f(r).expect("metric present"))
        .collect();
    assert!(!v.is_empty(), "no rows for {scenario} at {snr} dB, AN {an:?}");
    v.iter().sum::<f64>() / v.len() as f64
}

/// The harness's own verdict for `id` must agree with the independent
/// recomputation.
fn harness_agrees(rows: &[MetricsRecord], id: &str, pass: bool) -> bool {
    let verdicts = evaluate(rows, &AllocationWeights::default(), None).expect("verdicts");
    let v = verdicts.iter().find(|v| v.id == id).expect("verdict line");
    v.status == if pass { Status::Pass } else { Status::Fail }
}

fn a1(fx: &Fixture) -> Outcome {
    let rows = run(fx, &config(Scenario::Baseline, &[10.0], 1000));
    let m = mean(&rows, "baseline", 10.0, None, |r| r.comm_mse_undefended);
    let pass = m <= 0.02;
    let agree = harness_agrees(&rows, "A1", pass);
    outcome("A1", pass && agree, format!("held-out MSE at 10 dB = {m:.5} (bound 0.02), 5 seeds x 1000 images"))
}

fn a2() -> Outcome {
    let (b0, b1, steps) = (1e-4, 0.05, 200);
    let sch = make_schedule(steps, b0, b1).expect("schedule");
    let mut failures = Vec::new();

    let betas = sch.betas();
    if betas[0] != b0 || betas[steps - 1] != b1 {
        failures.push("beta endpoints".to_string());
    }
    if betas.windows(2).any(|w| w[1] <= w[0]) {
        failures.push("betas not increasing".into());
    }
    let mut prod = 1.0f64;
    for t in 1..=steps {
        prod *= 1.0 - betas[t - 1];
        let ab = sch.alpha_bar(t).unwrap();
        if ab != prod {
            failures.push(format!("alpha_bar({t}) != running product"));
        }
        if forward_snr(t, &sch).unwrap() != ab / (1.0 - ab) {
            failures.push(format!("forward_snr({t})"));
        }
        if estimate_timestep(ab / (1.0 - ab), &sch).unwrap() != t {
            failures.push(format!("estimate_timestep(forward_snr({t})) != {t}"));
        }
    }
    if sch.alpha_bar(0).unwrap() != 1.0 || estimate_timestep(f64::INFINITY, &sch).unwrap() != 1 {
        failures.push("t = 0 / infinite SNR conventions".into());
    }
    let x0 = LatentSignal::new((0..64).map(|i| ((i as f64) * 0.37).sin() * 1.3).collect()).unwrap();
    let zero = LatentSignal::zeros(64);
    for t in [1, 37, 200] {
        let ab = sch.alpha_bar(t).unwrap();
        let xt = forward_diffuse(&x0, t, &zero, &sch).unwrap();
        let expect: Vec<f64> = x0.values().iter().map(|v| ab.sqrt() * v).collect();
        if xt.values() != expect.as_slice() {
            failures.push(format!("noise-free forward_diffuse at t={t}"));
        }
    }

    // exhaustive log-domain scan, ties to the larger step
    let mut rng = RngStream::new(2024, 77);
    let mut scan_mismatch = 0;
    for _ in 0..100 {
        let snr_db: f64 = rng.gen_range(-30.0..50.0);
        let snr = db_to_linear(snr_db);
        let mut best = (0usize, f64::INFINITY);
        for t in 1..=steps {
            let ab = sch.alpha_bars()[t - 1];
            let d = ((ab / (1.0 - ab)).ln() - snr.ln()).abs();
            if d < best.1 || (d == best.1 && t > best.0) {
                best = (t, d);
            }
        }
        if estimate_timestep(snr, &sch).unwrap() != best.0 {
            scan_mismatch += 1;
        }
    }
    if scan_mismatch > 0 {
        failures.push(format!("{scan_mismatch}/100 scan mismatches"));
    }

    // marginal moments of x_t given x0
    let draws = 4000;
    let mut worst = 0.0f64;
    for t in [1, 50, 120, 200] {
        let ab = sch.alpha_bar(t).unwrap();
        let (mut proj, mut var) = (0.0, 0.0);
        for _ in 0..draws {
            let eps = LatentSignal::new(rng.gaussian_vec(64)).unwrap();
            let xt = forward_diffuse(&x0, t, &eps, &sch).unwrap();
            let mut p = 0.0;
            for (a, b) in xt.values().iter().zip(x0.values()) {
                p += a * b;
                let r = a - ab.sqrt() * b;
                var += r * r;
            }
            proj += p / x0.values().iter().map(|v| v * v).sum::<f64>();
        }
        let mean_scale = proj / draws as f64;
        let var = var / (draws * 64) as f64;
        worst = worst
            .max((mean_scale / ab.sqrt() - 1.0).abs())
            .max((var / (1.0 - ab) - 1.0).abs());
    }
    if worst > 0.03 {
        failures.push(format!("marginal moments off by {:.2}%", 100.0 * worst));
    }
    let detail = if failures.is_empty() {
        format!(
            "identities exact over {steps} steps; 100/100 scan matches; worst moment deviation {:.2}%",
            100.0 * worst
        )
    } else {
        failures.join("; ")
    };
    outcome("A2", failures.is_empty(), detail)
}

fn a3(fx: &Fixture) -> Outcome {
    let mut cfg = config(Scenario::EavesdropAdversarial, &[5.0, 10.0, 15.0], 2000);
    cfg.an_power = vec![0.0, 0.01, 0.02, 0.05, 0.09];
    let rows = run(fx, &cfg);
    let s = "eavesdrop_adversarial";
    let mut pass = true;
    let mut parts = Vec::new();
    for snr in [5.0, 10.0, 15.0] {
        let acc = mean(&rows, s, snr, Some(0.09), |r| r.eve_accuracy);
        let def = mean(&rows, s, snr, Some(0.09), |r| r.comm_mse);
        let und = mean(&rows, s, snr, Some(0.09), |r| r.comm_mse_undefended);
        pass &= acc <= 0.30 && def <= und;
        parts.push(format!("{snr} dB: eve acc {acc:.3}, bob {def:.5} vs undefended {und:.5}"));
    }
    let percept = rows
        .iter()
        .filter(|r| r.an_power.unwrap() <= 0.09)
        .map(|r| r.percept_mse.unwrap())
        .fold(0.0, f64::max);
    pass &= percept < 0.1;
    parts.push(format!("max percept {percept:.4}"));
    let agree = harness_agrees(&rows, "A3", pass);
    outcome("A3", pass && agree, format!("AN 0.09, 5 seeds x 2000: {}", parts.join("; ")))
}

fn a4(fx: &Fixture) -> Outcome {
    let mut cfg = config(Scenario::EavesdropGaussian, &[5.0, 10.0, 15.0], 1000);
    cfg.an_power = vec![0.0, 0.02, 0.05, 0.09, 0.2, 0.5, 1.0, 2.0, 5.0];
    let rows = run(fx, &cfg);
    let mut pass = true;
    let mut parts = Vec::new();
    for snr in [5.0, 10.0, 15.0] {
        let mi: Vec<f64> = cfg
            .an_power
            .iter()
            .map(|&p| mean(&rows, "eavesdrop_gaussian", snr, Some(p), |r| r.privacy_mi))
            .collect();
        let top = *mi.last().unwrap();
        let rise = mi.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        pass &= top <= 0.1 && rise <= 0.05;
        parts.push(format!("{snr} dB: MI {:.3} -> {top:.4} nats, largest rise {rise:.4}", mi[0]));
    }
    let agree = harness_agrees(&rows, "A4", pass);
    outcome("A4", pass && agree, format!("grid up to AN 5: {}", parts.join("; ")))
}

fn a5(fx: &Fixture) -> Outcome {
    let mut cfg = config(Scenario::JamHighpower, &[5.0, 10.0, 15.0], 1000);
    cfg.jammer = Some(JammerProfile::new(Waveform::default_for(JammingKind::Pulse), 40.0, 0).unwrap());
    let rows = run(fx, &cfg);
    let mut pass = true;
    let mut parts = Vec::new();
    for snr in [5.0, 10.0, 15.0] {
        let m = |arm: &str| mean(&rows, &format!("jam_highpower:{arm}"), snr, None, |r| r.comm_mse);
        let nj = mean(&rows, "jam_highpower:no_jamming", snr, None, |r| r.comm_mse_undefended);
        let (und, dif, cf) = (m("undefended"), m("diffusion_only"), m("coarse_fine"));
        pass &= und >= 5.0 * nj && cf < dif && dif < und && (cf - nj).abs() <= 0.2 * nj;
        parts.push(format!(
            "{snr} dB: none {nj:.5}, undefended {und:.4} ({:.0}x), diffusion {dif:.4}, coarse+fine {cf:.5} ({:+.1}%)",
            und / nj,
            100.0 * (cf / nj - 1.0)
        ));
    }
    let agree = harness_agrees(&rows, "A5", pass);
    outcome("A5", pass && agree, format!("pulse 40 dB: {}", parts.join("; ")))
}

fn a6(fx: &Fixture) -> Outcome {
    let mut cfg = config(Scenario::JamAdversarial, &[0.0, 5.0, 10.0], 1000);
    cfg.jammer = Some(JammerProfile::new(Waveform::default_for(JammingKind::Adversarial), -10.0, 0).unwrap());
    let rows = run(fx, &cfg);
    let mut pass = true;
    let mut parts = Vec::new();
    let mut gains = Vec::new();
    for snr in [0.0, 5.0, 10.0] {
        let und = mean(&rows, "jam_adversarial:undefended", snr, None, |r| r.comm_mse);
        let def = mean(&rows, "jam_adversarial:defended", snr, None, |r| r.comm_mse);
        pass &= def < und;
        gains.push(und - def);
        parts.push(format!("{snr} dB: {und:.5} -> {def:.5}"));
    }
    pass &= gains[0] >= gains[2];
    let agree = harness_agrees(&rows, "A6", pass);
    outcome(
        "A6",
        pass && agree,
        format!("pgd -10 dB: {}; gain 0 dB {:.5} vs 10 dB {:.5}", parts.join("; "), gains[0], gains[2]),
    )
}

fn a7(fx: &Fixture) -> Outcome {
    let codec = &fx.models.codec;
    let latents = codec.encode_batch(&fx.test_images[..500]);
    let noise = 1.0 / db_to_linear(10.0);
    let mut rng = RngStream::new(7, 7);
    let mut per_kind: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for kind in JammingKind::HIGH_POWER {
        for jsr in [20.0, 30.0, 40.0] {
            for (i, z) in latents.iter().enumerate() {
                let waveform = match kind {
                    JammingKind::Cw => Waveform::Cw {
                        freq: rng.gen_range(0.02..0.48),
                        phase: rng.gen_range(0.0..std::f64::consts::TAU),
                    },
                    k => Waveform::default_for(k),
                };
                let p = JammerProfile::new(waveform, jsr, i as u64).unwrap();
                let j = gen_jamming(&p, z.dim(), &mut rng).unwrap();
                let y = add_white_noise(&z.add(&j).unwrap(), noise, &mut rng).unwrap();
                let id = identify_jamming(&y, noise).unwrap();
                let expect = match kind {
                    JammingKind::Pulse => IdentifiedKind::Pulse,
                    JammingKind::Cw => IdentifiedKind::Cw,
                    JammingKind::Noise => IdentifiedKind::Noise,
                    _ => IdentifiedKind::Sweep,
                };
                let e = per_kind.entry(kind.name()).or_default();
                e.0 += usize::from(id.kind == expect && id.branch == Branch::HighPower);
                e.1 += 1;
            }
        }
    }
    let (hits, total) = per_kind.values().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let accuracy = hits as f64 / total as f64;

    let targets: Vec<&[f32]> = fx.test_images[..500].iter().map(|i| i.pixels()).collect();
    let objective = ReconstructionObjective { codec, targets };
    let adv = JammerProfile::new(Waveform::default_for(JammingKind::Adversarial), -10.0, 0).unwrap();
    let deltas = gen_adversarial(&objective, &latents, &adv, &mut rng).unwrap().deltas;
    let low = latents
        .iter()
        .zip(&deltas)
        .filter(|(z, d)| {
            let y = add_white_noise(&z.add(d).unwrap(), noise, &mut rng).unwrap();
            identify_jamming(&y, noise).unwrap().branch == Branch::LowPower
        })
        .count();
    let routed = low as f64 / latents.len() as f64;
    let kinds: Vec<String> = per_kind
        .iter()
        .map(|(k, (h, n))| format!("{k} {:.3}", *h as f64 / *n as f64))
        .collect();
    outcome(
        "A7",
        accuracy >= 0.95 && routed >= 0.99,
        format!(
            "accuracy {accuracy:.4} over {total} trials ({}); adversarial -10 dB routed low-power {routed:.3}",
            kinds.join(", ")
        ),
    )
}

fn a8(fx: &Fixture) -> Outcome {
    // real evaluator: adversarial-AN metrics at 10 dB on the default grid
    let grid = default_an_grid();
    let mut cfg = config(Scenario::EavesdropAdversarial, &[10.0], 500);
    cfg.seeds = vec![1];
    cfg.an_power = grid.clone();
    let rows = run(fx, &cfg);
    let metrics_at = |p: f64| {
        let r = rows.iter().find(|r| r.an_power == Some(p)).unwrap();
        PowerMetrics {
            privacy_mi: r.privacy_mi.unwrap(),
            comm_mse: r.comm_mse.unwrap(),
            percept_mse: r.percept_mse.unwrap(),
        }
    };
    let w = AllocationWeights::default();
    let res = allocate_power(&grid, |p| Ok(metrics_at(p)), &w).unwrap();

    // independent exhaustive re-evaluation
    let ms: Vec<PowerMetrics> = grid.iter().map(|&p| metrics_at(p)).collect();
    let norm = |f: &dyn Fn(&PowerMetrics) -> f64| -> Vec<f64> {
        let v: Vec<f64> = ms.iter().map(f).collect();
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        v.iter().map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 }).collect()
    };
    let (mi, mse, per) = (norm(&|m| m.privacy_mi), norm(&|m| m.comm_mse), norm(&|m| m.percept_mse));
    let scores: Vec<f64> = (0..grid.len())
        .map(|i| w.security() * mi[i] + w.reliability() * mse[i] + w.covertness() * per[i])
        .collect();
    let best = (0..grid.len())
        .min_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(grid[a].total_cmp(&grid[b])))
        .unwrap();
    let exact = res.an_power == grid[best] && res.objective == scores[best];

    // degenerate weights on strictly monotone metrics
    let mono = |p: f64| {
        Ok(PowerMetrics {
            privacy_mi: 2.0 / (1.0 + 10.0 * p),
            comm_mse: 0.004 + 0.01 * p,
            percept_mse: p,
        })
    };
    let min_p = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let max_p = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rel = allocate_power(&grid, mono, &AllocationWeights::new(0.0, 1.0, 0.0).unwrap()).unwrap();
    let sec = allocate_power(&grid, mono, &AllocationWeights::new(1.0, 0.0, 0.0).unwrap()).unwrap();
    let identities = rel.an_power == min_p && sec.an_power == max_p;
    outcome(
        "A8",
        exact && identities,
        format!(
            "grid search {:.5} vs exhaustive {:.5} (objective {} vs {}); (0,1,0) -> {} (min {}), (1,0,0) -> {} (max {})",
            res.an_power, grid[best], res.objective, scores[best], rel.an_power, min_p, sec.an_power, max_p
        ),
    )
}

fn a9(fx: &Fixture) -> Outcome {
    let mut failures = Vec::new();
    let mut small = |scenario: Scenario, snr: &[f64], tweak: &dyn Fn(&mut ExperimentConfig)| {
        let mut cfg = config(scenario, snr, 200);
        cfg.seeds = vec![11, 12];
        tweak(&mut cfg);
        let first = metrics_csv_bytes(&run(fx, &cfg)).unwrap();
        let second = metrics_csv_bytes(&run(fx, &cfg)).unwrap();
        if first != second {
            failures.push(scenario.name());
        }
    };
    small(Scenario::Baseline, &[5.0, 10.0], &|_| {});
    small(Scenario::EavesdropGaussian, &[10.0], &|c| c.an_power = vec![0.0, 0.5]);
    small(Scenario::EavesdropAdversarial, &[10.0], &|c| c.an_power = vec![0.0, 0.09]);
    small(Scenario::JamHighpower, &[10.0], &|c| {
        c.jammer = Some(JammerProfile::new(Waveform::default_for(JammingKind::Sweep), 30.0, 3).unwrap())
    });
    small(Scenario::JamAdversarial, &[10.0], &|c| {
        c.jammer = Some(JammerProfile::new(Waveform::default_for(JammingKind::Adversarial), -10.0, 3).unwrap())
    });
    let models = [
        Model::Codec(fx.models.codec.clone()),
        Model::Denoiser(fx.models.denoiser.clone()),
        Model::Eve(fx.models.eve.clone().unwrap()),
    ];
    let mut roundtrips = 0;
    for m in &models {
        let bytes = encode(m).unwrap();
        let back = decode(&bytes).unwrap();
        if back == *m && encode(&back).unwrap() == bytes {
            roundtrips += 1;
        }
    }
    let pass = failures.is_empty() && roundtrips == models.len();
    outcome(
        "A9",
        pass,
        format!(
            "repeated runs byte-identical for 5/5 scenarios{}; checkpoint round-trips bit-identical {roundtrips}/3",
            if failures.is_empty() { String::new() } else { format!(" except {failures:?}") }
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filters: behave like an ordinary target
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let start = Instant::now();
    let mut results = vec![a2()];
    let fx = train_fixture();
    let checks: [fn(&Fixture) -> Outcome; 8] = [a1, a3, a4, a5, a6, a7, a8, a9];
    for check in checks {
        let t = Instant::now();
        let o = check(&fx);
        eprintln!("{} evaluated in {:.1}s", o.id, t.elapsed().as_secs_f64());
        results.push(o);
    }
    results.sort_by_key(|o| o.id);
    let mut out = std::io::stdout().lock();
    writeln!(out, "\nacceptance criteria ({:.0}s)", start.elapsed().as_secs_f64()).unwrap();
    for o in &results {
        writeln!(out, "{} {}: {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.detail).unwrap();
    }
    let failed: Vec<&str> = results.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    if !failed.is_empty() {
        writeln!(out, "failed: {}", failed.join(", ")).unwrap();
        drop(out);
        std::process::exit(1);
    }
}
