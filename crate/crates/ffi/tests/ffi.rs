use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use sensync_ffi::*;

fn last_error() -> String {
    let p = sensync_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Bumpy noise-like trace at 100 Hz.
fn trace(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed;
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

fn series(kind: u32, start_ms: f64, values: &[f64]) -> *mut SensyncSeries {
    let ts: Vec<f64> = (0..values.len()).map(|i| start_ms + i as f64 * 10.0).collect();
    let mut out = ptr::null_mut();
    let status = unsafe { sensync_series_new(kind, ts.as_ptr(), values.as_ptr(), values.len(), &mut out) };
    assert_eq!(status, SensyncStatus::Ok, "{}", last_error());
    out
}

#[test]
fn estimates_an_injected_delay() {
    let v = trace(12_000, 1);
    // Target lags the reference by 320 ms: same samples, later stamps.
    let reference = series(0, 0.0, &v);
    let target = series(6, 320.0, &v);
    assert_eq!(unsafe { sensync_series_len(reference) }, 12_000);

    let mut cfg = sensync_estimation_config_default();
    cfg.refine = false;
    let mut est = SensyncDelayEstimate {
        delta_star_ms: 0.0,
        peak_value: 0.0,
        integer_lag: 0,
        refined: true,
        second_peak_ratio: 0.0,
        rate_hz: 0.0,
    };
    let status = unsafe { sensync_estimate_pair_delay(reference, target, &cfg, &mut est) };
    assert_eq!(status, SensyncStatus::Ok, "{}", last_error());
    assert!((est.delta_star_ms - 320.0).abs() < 1e-9, "{est:?}");
    assert!(!est.refined);
    assert!(sensync_last_error_message().is_null());

    unsafe {
        sensync_series_free(reference);
        sensync_series_free(target);
        sensync_series_free(ptr::null_mut());
    }
}

#[test]
fn invalid_inputs_report_codes() {
    let ts = [0.0, 10.0, 5.0];
    let vs = [1.0, 2.0, 3.0];
    let mut out = ptr::null_mut();
    let status = unsafe { sensync_series_new(0, ts.as_ptr(), vs.as_ptr(), 3, &mut out) };
    assert_eq!(status, SensyncStatus::InvalidInput);
    assert!(out.is_null());
    assert!(last_error().starts_with("NON_MONOTONIC_TIMESTAMPS"));

    let status = unsafe { sensync_series_new(99, ts.as_ptr(), vs.as_ptr(), 3, &mut out) };
    assert_eq!(status, SensyncStatus::InvalidArgument);

    let status = unsafe { sensync_series_new(0, ptr::null(), vs.as_ptr(), 3, &mut out) };
    assert_eq!(status, SensyncStatus::NullPointer);
    assert!(last_error().contains("timestamps_ms"));

    let flat = series(0, 0.0, &[1.0; 8000]);
    let other = series(1, 0.0, &trace(8000, 2));
    let mut est = unsafe { std::mem::zeroed::<SensyncDelayEstimate>() };
    let status = unsafe { sensync_estimate_pair_delay(flat, other, ptr::null(), &mut est) };
    assert_eq!(status, SensyncStatus::ConstantSeries);
    unsafe {
        sensync_series_free(flat);
        sensync_series_free(other);
    }
}

#[test]
fn correlation_and_argmax() {
    let f = [1.0, 2.0, 3.0];
    let g = [0.0, 1.0, 2.0, 3.0];
    let mut buf = [0.0; 5];
    let status = unsafe { sensync_cross_correlate(f.as_ptr(), 3, g.as_ptr(), 4, 2, buf.as_mut_ptr(), 5) };
    assert_eq!(status, SensyncStatus::Ok, "{}", last_error());
    // value[t] = sum f[i] g[i + t]
    let expected = [0.0, 3.0, 8.0, 14.0, 8.0];
    for (a, b) in buf.iter().zip(expected) {
        assert!((a - b).abs() < 1e-9, "{buf:?}");
    }

    let status = unsafe { sensync_cross_correlate(f.as_ptr(), 3, g.as_ptr(), 4, 2, buf.as_mut_ptr(), 4) };
    assert_eq!(status, SensyncStatus::BufferTooSmall);

    let mut est = unsafe { std::mem::zeroed::<SensyncDelayEstimate>() };
    let status = unsafe { sensync_argmax_delay(buf.as_ptr(), 5, 100.0, false, &mut est) };
    assert_eq!(status, SensyncStatus::Ok);
    assert_eq!(est.integer_lag, 1);
    assert_eq!(est.delta_star_ms, 10.0);
    let status = unsafe { sensync_argmax_delay(buf.as_ptr(), 4, 100.0, false, &mut est) };
    assert_eq!(status, SensyncStatus::InvalidArgument);
}

#[test]
fn audio_energy_is_exact() {
    let samples = vec![16384i16; 441 * 2 + 100];
    let mut len = 0usize;
    let status =
        unsafe { sensync_audio_energy(samples.as_ptr(), samples.len(), 44_100, 10.0, ptr::null_mut(), 0, &mut len) };
    assert_eq!(status, SensyncStatus::Ok);
    assert_eq!(len, 2);
    let mut out = [0.0; 2];
    let status =
        unsafe { sensync_audio_energy(samples.as_ptr(), samples.len(), 44_100, 10.0, out.as_mut_ptr(), 2, &mut len) };
    assert_eq!(status, SensyncStatus::Ok);
    assert_eq!(out, [441.0 * 0.25; 2]);
    let status =
        unsafe { sensync_audio_energy(samples.as_ptr(), samples.len(), 44_100, 10.0, out.as_mut_ptr(), 1, &mut len) };
    assert_eq!(status, SensyncStatus::BufferTooSmall);
}

#[test]
fn mean_flow_of_a_shifted_texture() {
    let (w, h) = (96usize, 72usize);
    let pattern = |x: f64, y: f64| -> u8 {
        (128.0 + 50.0 * (x * 0.31).sin() * (y * 0.23).cos() + 40.0 * ((x + y) * 0.17).sin()) as u8
    };
    let a: Vec<u8> = (0..w * h).map(|i| pattern((i % w) as f64, (i / w) as f64)).collect();
    let b: Vec<u8> = (0..w * h).map(|i| pattern((i % w) as f64 - 1.0, (i / w) as f64)).collect();
    let (mut dx, mut dy) = (0.0, 0.0);
    let status = unsafe { sensync_mean_flow(a.as_ptr(), b.as_ptr(), w, h, &mut dx, &mut dy) };
    assert_eq!(status, SensyncStatus::Ok, "{}", last_error());
    assert!((dx - 1.0).abs() < 0.25 && dy.abs() < 0.25, "{dx} {dy}");

    let flat = vec![7u8; w * h];
    let status = unsafe { sensync_mean_flow(flat.as_ptr(), flat.as_ptr(), w, h, &mut dx, &mut dy) };
    assert_eq!(status, SensyncStatus::DegenerateFrame);
}

#[test]
fn calibration_and_sync_report() {
    use sensync::synthgen::{layout, write_run, RunSpec};

    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let spec = RunSpec {
        duration_s: 180.0,
        ..RunSpec::default()
    };
    write_run(&spec, &run).unwrap();

    let config = CString::new(run.join(layout::CONFIG).to_str().unwrap()).unwrap();
    let mut json = ptr::null_mut();
    let status = unsafe { sensync_sync_report_json(config.as_ptr(), &mut json) };
    assert_eq!(status, SensyncStatus::Ok, "{}", last_error());
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { sensync_string_free(json) };
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["pairs"].as_array().unwrap().len(), 5);

    let table = tmp.path().join("table.json");
    std::fs::write(
        &table,
        r#"{"entries":[{"reference":"AccelZ","target":"AudioEnergy","event_type":"Vibration",
            "normalizing_delay_ms":305.5,"error_ms":null,"run_count":1}],
            "summary":{"avg_error_ms":null,"error_std_ms":null}}"#,
    )
    .unwrap();
    let path = CString::new(table.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { sensync_calibration_load(path.as_ptr(), &mut handle) };
    assert_eq!(status, SensyncStatus::Ok, "{}", last_error());
    let (mut delay, mut err) = (0.0, 0.0);
    assert_eq!(
        unsafe { sensync_calibration_lookup(handle, 0, 1, &mut delay, &mut err) },
        SensyncStatus::Ok
    );
    assert_eq!(delay, 305.5);
    assert!(err.is_nan());
    assert_eq!(
        unsafe { sensync_calibration_lookup(handle, 0, 6, &mut delay, ptr::null_mut()) },
        SensyncStatus::NotFound
    );
    unsafe { sensync_calibration_free(handle) };

    let missing = CString::new(tmp.path().join("absent.json").to_str().unwrap()).unwrap();
    let status = unsafe { sensync_calibration_load(missing.as_ptr(), &mut handle) };
    assert_eq!(status, SensyncStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("absent.json"));
}

#[test]
fn names_and_version() {
    let name = unsafe { CStr::from_ptr(sensync_sensor_kind_name(5)) };
    assert_eq!(name.to_str().unwrap(), "FlowY_Face");
    assert!(sensync_sensor_kind_name(SENSYNC_SENSOR_KIND_COUNT).is_null());
    let version = unsafe { CStr::from_ptr(sensync_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("sensync.h")
}

fn compiler() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok()?.status.success().then_some(cc)
}

#[test]
fn header_compiles_as_c() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"sensync.h\"\n\
         int main(void) {\n\
           SensyncEstimationConfig c = sensync_estimation_config_default();\n\
           SensyncStatus s = sensync_series_new(0, 0, 0, 0, 0);\n\
           return (int)s + (int)c.refine;\n\
         }\n",
    )
    .unwrap();
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header().parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn c_program_links_against_the_static_library() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    // target/<profile>/deps/<this test> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().unwrap().parent().unwrap().join("libsensync_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <math.h>
#include <stdio.h>
#include "sensync.h"

int main(void) {
  double f[] = {1, 2, 3}, g[] = {0, 1, 2, 3}, out[5];
  if (sensync_cross_correlate(f, 3, g, 4, 2, out, 5) != SENSYNC_STATUS_OK) return 1;
  SensyncDelayEstimate est;
  if (sensync_argmax_delay(out, 5, 100.0, false, &est) != SENSYNC_STATUS_OK) return 2;
  if (est.integer_lag != 1) return 3;
  double ts[] = {0, 10, 5}, vs[] = {1, 2, 3};
  SensyncSeries *s = NULL;
  if (sensync_series_new(0, ts, vs, 3, &s) != SENSYNC_STATUS_INVALID_INPUT || s) return 4;
  printf("%s\n", sensync_last_error_message());
  return 0;
}
"#,
    )
    .unwrap();
    let bin = tmp.path().join("main");
    let out = Command::new(cc)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("NON_MONOTONIC_TIMESTAMPS"));
}
