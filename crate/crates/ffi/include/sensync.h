#ifndef SENSYNC_H
#define SENSYNC_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Sensor kind indices: 0 AccelZ, 1 AudioEnergy, 2 FlowX_Front,
// 3 FlowY_Front, 4 FlowY_Dash, 5 FlowY_Face, 6 SteeringAngle.
#define SENSYNC_SENSOR_KIND_COUNT 7

typedef enum SensyncStatus {
  SENSYNC_STATUS_OK = 0,
  SENSYNC_STATUS_NULL_POINTER = 1,
  SENSYNC_STATUS_INVALID_ARGUMENT = 2,
  // Malformed series or frames: too short, non-monotonic, non-finite,
  // mismatched lengths or dimensions.
  SENSYNC_STATUS_INVALID_INPUT = 3,
  SENSYNC_STATUS_CONSTANT_SERIES = 4,
  SENSYNC_STATUS_INSUFFICIENT_OVERLAP = 5,
  SENSYNC_STATUS_DEGENERATE_FRAME = 6,
  SENSYNC_STATUS_UNSUPPORTED_AUDIO = 7,
  SENSYNC_STATUS_MISSING_CALIBRATION_ENTRY = 8,
  SENSYNC_STATUS_INVALID_CONFIG = 9,
  SENSYNC_STATUS_IO = 10,
  SENSYNC_STATUS_FORMAT = 11,
  SENSYNC_STATUS_BUFFER_TOO_SMALL = 12,
  SENSYNC_STATUS_NOT_FOUND = 13,
  SENSYNC_STATUS_PANIC = 14,
} SensyncStatus;

// Normalizing delays loaded from a calibration JSON file.
typedef struct SensyncCalibration SensyncCalibration;

// A timestamped sensor trace.
typedef struct SensyncSeries SensyncSeries;

typedef struct SensyncEstimationConfig {
  double grid_rate_hz;
  double max_lag_s;
  bool refine;
  double min_duration_s;
} SensyncEstimationConfig;

typedef struct SensyncDelayEstimate {
  // Positive when the target lags the reference.
  double delta_star_ms;
  double peak_value;
  int64_t integer_lag;
  bool refined;
  // NaN when there is no competing peak.
  double second_peak_ratio;
  double rate_hz;
} SensyncDelayEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a
// successful one. Valid until the next call into the library.
const char *sensync_last_error_message(void);

// Static, nul-terminated version string.
const char *sensync_version(void);

// Name of a sensor kind, or null for an unknown index.
const char *sensync_sensor_kind_name(uint32_t kind);

// Copies `len` timestamps (ms, strictly increasing) and values into a new
// series handle.
//
// # Safety
// `timestamps_ms` and `values` must point to `len` readable doubles and
// `out` to writable storage for one pointer.
enum SensyncStatus sensync_series_new(uint32_t kind,
                                      const double *timestamps_ms,
                                      const double *values,
                                      size_t len,
                                      struct SensyncSeries **out);

// # Safety
// `series` must be null or a handle from [`sensync_series_new`] not yet freed.
void sensync_series_free(struct SensyncSeries *series);

// Sample count; 0 for a null handle.
//
// # Safety
// `series` must be null or a live handle.
size_t sensync_series_len(const struct SensyncSeries *series);

struct SensyncEstimationConfig sensync_estimation_config_default(void);

// Delay of `target` relative to `reference`. Sign conventions for
// negatively correlated kinds are applied. A null `config` means defaults.
//
// # Safety
// Handles must be live; `config` null or readable; `out` writable.
enum SensyncStatus sensync_estimate_pair_delay(const struct SensyncSeries *reference,
                                               const struct SensyncSeries *target,
                                               const struct SensyncEstimationConfig *config,
                                               struct SensyncDelayEstimate *out);

// Cross-correlation of two uniformly sampled arrays at lags
// `-max_lag ..= max_lag`, written to `out` (capacity `2 * max_lag + 1`).
//
// # Safety
// `f`, `g` must be readable for their lengths and `out` writable for
// `out_capacity` doubles.
enum SensyncStatus sensync_cross_correlate(const double *f,
                                           size_t f_len,
                                           const double *g,
                                           size_t g_len,
                                           size_t max_lag,
                                           double *out,
                                           size_t out_capacity);

// Best lag of a correlation array covering `-max_lag ..= max_lag`
// (`len == 2 * max_lag + 1`) sampled at `rate_hz`.
//
// # Safety
// `values` readable for `len` doubles, `out` writable.
enum SensyncStatus sensync_argmax_delay(const double *values,
                                        size_t len,
                                        double rate_hz,
                                        bool refine,
                                        struct SensyncDelayEstimate *out);

// Per-bin audio energy of 16-bit samples. Bins are `bin_ms` wide and a
// trailing partial bin is dropped. The bin count goes to `out_len`; when
// `out` is null or too small only the count is reported (with
// `BUFFER_TOO_SMALL` for a short buffer).
//
// # Safety
// `samples` readable for `len` values, `out` null or writable for
// `out_capacity` doubles, `out_len` writable.
enum SensyncStatus sensync_audio_energy(const int16_t *samples,
                                        size_t len,
                                        uint32_t sample_rate_hz,
                                        double bin_ms,
                                        double *out,
                                        size_t out_capacity,
                                        size_t *out_len);

// Mean dense optical flow between two 8-bit grayscale frames, row-major,
// with default flow parameters.
//
// # Safety
// Both frames readable for `width * height` bytes; outputs writable.
enum SensyncStatus sensync_mean_flow(const uint8_t *previous,
                                     const uint8_t *next,
                                     size_t width,
                                     size_t height,
                                     double *out_dx,
                                     double *out_dy);

// # Safety
// `path` must be a nul-terminated string, `out` writable.
enum SensyncStatus sensync_calibration_load(const char *path, struct SensyncCalibration **out);

// Normalizing delay and its error for a pair. `error_ms` receives NaN when
// the table came from a single run. Returns `NOT_FOUND` for an unknown pair.
//
// # Safety
// `table` live; outputs writable (`error_ms` may be null).
enum SensyncStatus sensync_calibration_lookup(const struct SensyncCalibration *table,
                                              uint32_t reference,
                                              uint32_t target,
                                              double *delay_ms,
                                              double *error_ms);

// # Safety
// `table` must be null or a live handle.
void sensync_calibration_free(struct SensyncCalibration *table);

// Runs synchronization for a TOML or JSON config file and returns the
// report as JSON. No files are written. Free the string with
// [`sensync_string_free`].
//
// # Safety
// `config_path` nul-terminated, `out_json` writable.
enum SensyncStatus sensync_sync_report_json(const char *config_path, char **out_json);

// # Safety
// `s` must be null or a string returned by this library.
void sensync_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SENSYNC_H */
