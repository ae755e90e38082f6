//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use sensync::features::{audio_energy, AudioClip, EnergyBinner};
use sensync::flow::{estimate_dense_flow, reduce_flow, render_texture, FlowField, FlowParams};
use sensync::io::{read_raw_pcm, read_wav, write_wav};
use sensync::stream::{SensorKind, UniformSeries};
use sensync::sync::{
    calibrate, convergence_curve, estimate_pairs, synchronize, CalibrationTable, DelayObservation,
    EstimationConfig, SensorPair, SyncOptions,
};
use sensync::synthgen::{generate_run, GeneratedRun, RunSpec};
use sensync::xcorr::{argmax_delay, cross_correlate_fft, cross_correlate_naive};

const RELATIVE_TOL: f64 = 1e-6;
const FRACTIONAL_TOL_MS: f64 = 5.0;
const RESIDUAL_TOL_MS: f64 = 10.0;
const CALIBRATION_STD_TOL_MS: f64 = 20.0;
const FLOW_TOL_PX: f64 = 0.25;
const STILL_TOL_PX: f64 = 0.05;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn series(values: Vec<f64>) -> UniformSeries {
    UniformSeries::new(100.0, 0.0, values).unwrap()
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn correlator_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(16..=4096);
        let m = rng.gen_range(16..=4096);
        let max_lag = rng.gen_range(0..n.max(m));
        let f = series(noise(&mut rng, n));
        let g = series(noise(&mut rng, m));
        let fast = cross_correlate_fft(&f, &g, max_lag).unwrap();
        let slow = cross_correlate_naive(&f, &g, max_lag).unwrap();
        let scale = slow.values().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        for (a, b) in fast.values().iter().zip(slow.values()) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= RELATIVE_TOL && elapsed < Duration::from_secs(30),
        format!("200 pairs, worst relative error {worst:.2e}, {:.1} s", elapsed.as_secs_f64()),
    )
}

fn shift_recovery() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut exact = 0;
    for _ in 0..100 {
        let d: i64 = rng.gen_range(-1000..=1000);
        let n = 6000usize;
        let base = noise(&mut rng, n + 2000);
        // g[i] = f[i - d]
        let f: Vec<f64> = base[1000..1000 + n].to_vec();
        let g: Vec<f64> = (0..n).map(|i| base[(1000 + i as i64 - d) as usize]).collect();
        let corr = cross_correlate_fft(&series(f), &series(g), 1000).unwrap();
        if argmax_delay(&corr, false).unwrap().integer_lag == d {
            exact += 1;
        }
    }

    // Band-limited noiseless signal: a sum of slow sinusoids sampled at a
    // fractional offset.
    let tones: Vec<(f64, f64, f64)> = (0..12)
        .map(|_| (rng.gen_range(0.05..2.0), rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.5..1.5)))
        .collect();
    let signal = |t_s: f64| -> f64 {
        tones
            .iter()
            .map(|(hz, phase, amp)| amp * (std::f64::consts::TAU * hz * t_s + phase).sin())
            .sum()
    };
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let delay_ms: f64 = rng.gen_range(-500.0..500.0);
        let f: Vec<f64> = (0..6000).map(|i| signal(i as f64 / 100.0)).collect();
        let g: Vec<f64> = (0..6000).map(|i| signal((i as f64 * 10.0 - delay_ms) / 1000.0)).collect();
        let corr = cross_correlate_fft(&series(f), &series(g), 1000).unwrap();
        let est = argmax_delay(&corr, true).unwrap();
        worst = worst.max((est.delta_star_ms - delay_ms).abs());
    }
    verdict(
        exact == 100 && worst <= FRACTIONAL_TOL_MS,
        format!("{exact}/100 integer shifts exact, worst fractional error {worst:.2} ms"),
    )
}

fn spec(seed: u64) -> RunSpec {
    RunSpec {
        seed,
        ..RunSpec::default()
    }
}

fn observations(runs: &[GeneratedRun], cfg: &EstimationConfig) -> Vec<DelayObservation> {
    runs.iter()
        .flat_map(|run| {
            estimate_pairs(&run.streams, &SensorPair::standard(), cfg)
                .unwrap()
                .into_iter()
                .map(|(pair, e, _)| DelayObservation {
                    pair,
                    delta_star_ms: e.delta_star_ms,
                })
        })
        .collect()
}

fn end_to_end(table: &CalibrationTable) -> Verdict {
    let mut s = spec(7);
    let offsets = [
        (SensorKind::AudioEnergy, 1500.0),
        (SensorKind::FlowXFront, -2000.0),
        (SensorKind::FlowYFront, -2000.0),
        (SensorKind::FlowYDash, 850.0),
        (SensorKind::FlowYFace, 2000.0),
        (SensorKind::SteeringAngle, -1234.0),
    ];
    for (k, o) in offsets {
        s.sensors.get_mut(&k).unwrap().true_offset_ms = o;
    }
    let run = generate_run(&s).unwrap();
    let out = synchronize(&run.streams, Some(table), &SyncOptions::default()).unwrap();
    let mut worst = (SensorKind::AccelZ, 0.0f64);
    let mut missing = Vec::new();
    for kind in SensorKind::ALL {
        let Some(shift) = out.shifts_ms.get(&kind) else {
            missing.push(kind);
            continue;
        };
        let residual = run.ground_truth.relative_offset_ms(kind, SensorKind::AccelZ).unwrap() + shift;
        if residual.abs() > worst.1.abs() {
            worst = (kind, residual);
        }
    }
    verdict(
        missing.is_empty() && worst.1.abs() <= RESIDUAL_TOL_MS,
        format!(
            "37 min run, offsets up to 2 s, worst residual {:.2} ms ({}){}",
            worst.1,
            worst.0,
            if missing.is_empty() { String::new() } else { format!(", unresolved {missing:?}") }
        ),
    )
}

fn calibration_stability(table: &CalibrationTable, elapsed: Duration) -> Verdict {
    let stds: Vec<f64> = table.entries.iter().filter_map(|e| e.error_ms).collect();
    let worst = stds.iter().copied().fold(0.0f64, f64::max);
    verdict(
        stds.len() == 5 && worst <= CALIBRATION_STD_TOL_MS && elapsed < Duration::from_secs(300),
        format!(
            "5 seeds, per-pair std {}, {:.1} s",
            stds.iter().map(|s| format!("{s:.1}")).collect::<Vec<_>>().join("/"),
            elapsed.as_secs_f64()
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-seed mean error over the standard pairs at each duration.
fn mean_errors(run: &GeneratedRun, durations: &[f64], cfg: &EstimationConfig) -> Vec<f64> {
    let pairs = SensorPair::standard();
    let mut acc = vec![0.0; durations.len()];
    for p in &pairs {
        let curve =
            convergence_curve(&run.streams[&p.reference], &run.streams[&p.target], durations, cfg).unwrap();
        for (a, point) in acc.iter_mut().zip(&curve) {
            *a += point.error_ms / pairs.len() as f64;
        }
    }
    acc
}

fn convergence_shape(runs: &[GeneratedRun], cfg: &EstimationConfig) -> Verdict {
    let durations = [4.0, 10.0, 30.0, 37.0];
    let per_seed: Vec<Vec<f64>> = runs.iter().map(|r| mean_errors(r, &durations, cfg)).collect();
    let med: Vec<f64> = (0..durations.len())
        .map(|i| median(per_seed.iter().map(|s| s[i]).collect()))
        .collect();
    let full_exact = per_seed.iter().all(|s| s[3] == 0.0);

    let sparse: Vec<GeneratedRun> = (1..=5u64)
        .into_par_iter()
        .map(|seed| {
            let mut s = RunSpec {
                seed,
                bump_rate_per_min: 1.0,
                turn_rate_per_min: 0.5,
                ..RunSpec::default()
            };
            for sensor in s.sensors.values_mut() {
                sensor.noise_std *= 2.0;
            }
            generate_run(&s).unwrap()
        })
        .collect();
    let short_long = [4.0, 30.0];
    let sparse_errors: Vec<Vec<f64>> = sparse.iter().map(|r| mean_errors(r, &short_long, cfg)).collect();
    let m4 = median(sparse_errors.iter().map(|s| s[0]).collect());
    let m30 = median(sparse_errors.iter().map(|s| s[1]).collect());

    verdict(
        med[2] < med[1] && med[1] < med[0] && full_exact && m4 >= 10.0 * m30,
        format!(
            "median error 4/10/30/37 min = {:.2}/{:.2}/{:.2}/{:.2} ms; sparse spec 4 min {:.2} ms vs 30 min {:.2} ms ({:.0}x)",
            med[0],
            med[1],
            med[2],
            med[3],
            m4,
            m30,
            m4 / m30
        ),
    )
}

fn flow_suite() -> Verdict {
    let start = Instant::now();
    let params = FlowParams::default();
    let (w, h) = (320, 240);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut worst_anti = 0.0f64;
    let pairs = 20;
    for i in 0..pairs {
        let (vx, vy) = loop {
            let v: (f64, f64) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            if v.0.hypot(v.1) <= 3.0 {
                break v;
            }
        };
        let seed = 100 + i as u64;
        let a = render_texture(w, h, 0.0, 0.0, seed);
        let b = render_texture(w, h, vx, vy, seed);
        let (fx, fy) = reduce_flow(&estimate_dense_flow(&a, &b, &params).unwrap()).unwrap();
        let (rx, ry) = reduce_flow(&estimate_dense_flow(&b, &a, &params).unwrap()).unwrap();
        worst = worst.max((fx - vx).abs()).max((fy - vy).abs());
        worst_anti = worst_anti.max((fx + rx).abs()).max((fy + ry).abs());
    }
    let still = render_texture(w, h, 0.0, 0.0, 7);
    let field = estimate_dense_flow(&still, &still, &params).unwrap();
    let still_mag = mean_magnitude(&field);
    let elapsed = start.elapsed();
    verdict(
        worst <= FLOW_TOL_PX && worst_anti <= FLOW_TOL_PX && still_mag <= STILL_TOL_PX && elapsed < Duration::from_secs(60),
        format!(
            "{pairs} pairs at {w}x{h}: worst axis error {worst:.3} px, antisymmetry {worst_anti:.3} px, identical frames {still_mag:.4} px, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn mean_magnitude(field: &FlowField) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((dx, dy), ok) in field.dx().iter().zip(field.dy()).zip(field.valid_mask()) {
        if *ok {
            sum += dx.hypot(*dy);
            n += 1;
        }
    }
    sum / n as f64
}

/// Hand-computed energies: integer sums of squares over 2^30.
fn oracle_energy(samples: &[i16], bin: usize) -> Vec<f64> {
    samples
        .chunks_exact(bin)
        .map(|c| c.iter().map(|&s| (s as i64) * (s as i64)).sum::<i64>() as f64 / (1u64 << 30) as f64)
        .collect()
}

fn audio_bit_exact(dir: &Path) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();
    let fixtures: Vec<(&str, Vec<i16>)> = vec![
        ("half scale", vec![16384; 441]),
        ("full-scale negative", vec![i16::MIN; 882]),
        ("silence plus partial bin", vec![0; 441 * 3 + 200]),
        ("alternating extremes", (0..441 * 4).map(|i| if i % 2 == 0 { i16::MAX } else { i16::MIN }).collect()),
        ("random with partial bin", (0..441 * 50 + 17).map(|_| rng.gen()).collect()),
    ];
    for (name, samples) in &fixtures {
        let path = dir.join("fixture.wav");
        write_wav(&path, 44_100, samples).unwrap();
        let clip = read_wav(&path).unwrap();
        let energy = audio_energy(&clip, 10.0).unwrap();
        let expected = oracle_energy(samples, 441);
        let stamps: Vec<f64> = (1..=expected.len()).map(|k| k as f64 * 10.0).collect();
        if energy.values() != expected.as_slice() || energy.timestamps_ms() != stamps.as_slice() {
            failures.push(*name);
        }
    }
    // 24-bit raw PCM: scale 2^-46.
    let samples: Vec<i32> = (0..480 * 3 + 5).map(|_| rng.gen_range(-(1 << 23)..(1 << 23))).collect();
    let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()[..3].to_vec()).collect();
    std::fs::write(dir.join("raw.pcm"), bytes).unwrap();
    std::fs::write(dir.join("raw.json"), r#"{"sample_rate": 48000, "bit_depth": 24}"#).unwrap();
    let clip = read_raw_pcm(&dir.join("raw.pcm"), &dir.join("raw.json")).unwrap();
    let energy = audio_energy(&clip, 10.0).unwrap();
    let expected: Vec<f64> = samples
        .chunks_exact(480)
        .map(|c| c.iter().map(|&s| s as i128 * s as i128).sum::<i128>() as f64 / 2f64.powi(46))
        .collect();
    if energy.values() != expected.as_slice() {
        failures.push("24-bit raw");
    }
    // Streaming binner agrees with the one-shot path.
    let clip = AudioClip::from_i16(44_100, &fixtures[4].1).unwrap();
    let mut binner = EnergyBinner::new(44_100, 16, 10.0).unwrap();
    binner.extend(clip.samples().iter().copied());
    if binner.finish().unwrap() != audio_energy(&clip, 10.0).unwrap() {
        failures.push("streaming binner");
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} fixtures exact", fixtures.len() + 2)
        } else {
            format!("mismatch in {failures:?}")
        },
    )
}

fn sensync(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sensync"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism(dir: &Path) -> Verdict {
    let mut problems = Vec::new();
    let (a, b) = (dir.join("a"), dir.join("b"));
    for out in [&a, &b] {
        let o = sensync(&["generate", "--out", out.to_str().unwrap(), "--seed", "42", "--duration-s", "180"]);
        if !o.status.success() {
            problems.push(format!("generate failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
    }
    if dir_contents(&a) != dir_contents(&b) {
        problems.push("generated directories differ".into());
    }

    let report = |config: &Path, out: &Path| -> Vec<u8> {
        let o = sensync(&["sync", "--config", config.to_str().unwrap(), "--report", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    let r1 = report(&a.join("sync.toml"), &dir.join("r1.json"));
    let r2 = report(&a.join("sync.toml"), &dir.join("r2.json"));
    if r1 != r2 {
        problems.push("repeated sync reports differ".into());
    }
    let parsed: serde_json::Value = serde_json::from_slice(&r1).unwrap();
    let echoed = dir.join("echoed.json");
    std::fs::write(&echoed, serde_json::to_vec_pretty(&parsed["config"]).unwrap()).unwrap();
    let r3 = report(&echoed, &dir.join("r3.json"));
    if r1 != r3 {
        problems.push("echoed config does not reproduce the report".into());
    }
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            "generate byte-identical; sync report stable; echoed config reproduces it".into()
        } else {
            problems.join("; ")
        },
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut results: Vec<(u8, &str, Verdict)> = Vec::new();
    results.push((1, "correlator oracle equivalence", correlator_oracle()));
    results.push((2, "exact shift recovery", shift_recovery()));

    let cfg = EstimationConfig::default();
    let start = Instant::now();
    let runs: Vec<GeneratedRun> = (101..=105u64)
        .into_par_iter()
        .map(|seed| generate_run(&spec(seed)).unwrap())
        .collect();
    let table = calibrate(&observations(&runs, &cfg)).unwrap();
    let calibration_time = start.elapsed();
    results.push((3, "end-to-end synthetic synchronization", end_to_end(&table)));
    results.push((4, "calibration stability", calibration_stability(&table, calibration_time)));
    results.push((5, "convergence shape", convergence_shape(&runs, &cfg)));
    drop(runs);

    results.push((6, "optical flow translation suite", flow_suite()));
    results.push((7, "audio energy bit-exactness", audio_bit_exact(tmp.path())));
    results.push((8, "determinism and round-trip", determinism(tmp.path())));

    let mut failed = 0;
    for (id, name, v) in &results {
        println!(
            "criterion {id} {name}: {} ({})",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
