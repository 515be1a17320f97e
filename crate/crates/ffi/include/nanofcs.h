#ifndef NANOFCS_H
#define NANOFCS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; the nonzero library codes equal the CLI exit codes.
 */
typedef enum NfcsStatus {
  NFCS_STATUS_OK = 0,
  /**
   * Malformed or schema-violating input.
   */
  NFCS_STATUS_SCHEMA = 2,
  /**
   * Domain, configuration or data error.
   */
  NFCS_STATUS_INVALID = 3,
  /**
   * Fit did not converge or is rank deficient.
   */
  NFCS_STATUS_FIT = 4,
  NFCS_STATUS_IO = 5,
  NFCS_STATUS_NULL_POINTER = 10,
  NFCS_STATUS_INVALID_UTF8 = 11,
  NFCS_STATUS_PANIC = 12,
} NfcsStatus;

/**
 * Correlation curve.
 */
typedef struct NfcsCurve NfcsCurve;

/**
 * Photon stream.
 */
typedef struct NfcsStream NfcsStream;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a
 * success. Valid until the next call on the same thread.
 */
const char *nfcs_last_error(void);

/**
 * Library version as a static string.
 */
const char *nfcs_version(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void nfcs_string_free(char *s);

/**
 * Simulates a stream from a SimConfig JSON document.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` must be writable.
 */
enum NfcsStatus nfcs_simulate(const char *config_json, struct NfcsStream **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum NfcsStatus nfcs_stream_read(const char *path, struct NfcsStream **out);

/**
 * Writes the stream and its metadata sidecar.
 *
 * # Safety
 * `stream` must be a live handle; `path` a NUL-terminated string.
 */
enum NfcsStatus nfcs_stream_write(const struct NfcsStream *stream, const char *path);

/**
 * Number of photons, or 0 for a null handle.
 *
 * # Safety
 * `stream` must be null or a live handle.
 */
size_t nfcs_stream_len(const struct NfcsStream *stream);

/**
 * Acquisition length in seconds, or 0 for a null handle.
 *
 * # Safety
 * `stream` must be null or a live handle.
 */
double nfcs_stream_duration(const struct NfcsStream *stream);

/**
 * # Safety
 * `stream` must be null or a handle not yet freed.
 */
void nfcs_stream_free(struct NfcsStream *stream);

/**
 * Correlates `a` with `b`, or `a` with itself (cross-correlating split
 * channels) when `b` is null. `scheme_json` may be null for the default
 * multi-tau scheme.
 *
 * # Safety
 * Handles must be live or null as stated; strings NUL-terminated.
 */
enum NfcsStatus nfcs_correlate(const struct NfcsStream *a,
                               const struct NfcsStream *b,
                               const char *scheme_json,
                               struct NfcsCurve **out);

/**
 * # Safety
 * `csv` must be a NUL-terminated string; `out` must be writable.
 */
enum NfcsStatus nfcs_curve_from_csv(const char *csv, struct NfcsCurve **out);

/**
 * Number of lags, or 0 for a null handle.
 *
 * # Safety
 * `curve` must be null or a live handle.
 */
size_t nfcs_curve_len(const struct NfcsCurve *curve);

/**
 * Copies up to `cap` points into each non-null buffer; returns the number
 * copied.
 *
 * # Safety
 * Each non-null buffer must hold `cap` doubles.
 */
size_t nfcs_curve_copy(const struct NfcsCurve *curve,
                       double *lags,
                       double *g2,
                       double *stderr,
                       size_t cap);

/**
 * # Safety
 * `curve` must be a live handle; `out` must be writable.
 */
enum NfcsStatus nfcs_curve_to_csv(const struct NfcsCurve *curve, char **out);

/**
 * # Safety
 * `curve` must be null or a handle not yet freed.
 */
void nfcs_curve_free(struct NfcsCurve *curve);

/**
 * Fits the FCS model; `fixed_json` (FcsFixed, may be null) holds fixed
 * parameters. Writes the fit as JSON.
 *
 * # Safety
 * `curve` must be a live handle; strings NUL-terminated; `out` writable.
 */
enum NfcsStatus nfcs_fit_fcs(const struct NfcsCurve *curve, const char *fixed_json, char **out);

/**
 * Fits a power series given as CSV; `options_json` may be null.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` writable.
 */
enum NfcsStatus nfcs_fit_power_series(const char *csv, const char *options_json, char **out);

/**
 * Fits a decay histogram given as CSV with IRF time constant `tau0_ns`.
 *
 * # Safety
 * `csv` must be NUL-terminated; `out` writable.
 */
enum NfcsStatus nfcs_fit_lifetime(const char *csv, double tau0_ns, char **out);

/**
 * Inverts MeasuredInputs JSON into a solved column (JSON).
 *
 * # Safety
 * `inputs_json` must be NUL-terminated; `out` writable.
 */
enum NfcsStatus nfcs_solve_rates(const char *inputs_json, char **out);

/**
 * Runs the pipeline, writing artifacts under `out_dir`; `report` receives
 * the Markdown report and may be null.
 *
 * # Safety
 * Strings must be NUL-terminated; `report` null or writable.
 */
enum NfcsStatus nfcs_pipeline_run(const char *config_json, const char *out_dir, char **report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NANOFCS_H */
