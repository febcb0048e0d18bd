#ifndef BPL_H
#define BPL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum BplStatus {
  BPL_STATUS_OK = 0,
  // A required pointer was null.
  BPL_STATUS_NULL_POINTER = 1,
  // An index, length or numeric argument is out of range.
  BPL_STATUS_INVALID_ARGUMENT = 2,
  // The configuration could not be read or is invalid.
  BPL_STATUS_CONFIG = 3,
  // Scan data or the analysis failed.
  BPL_STATUS_DATA = 4,
  // Too many bootstrap resamples failed.
  BPL_STATUS_CONVERGENCE = 5,
  // File system error.
  BPL_STATUS_IO = 6,
  // Internal error.
  BPL_STATUS_PANIC = 7,
} BplStatus;

// Detection plane selector for bpl_model_rate.
typedef enum BplPlane {
  BPL_PLANE_IMAGE = 0,
  BPL_PLANE_FOURIER = 1,
} BplPlane;

typedef struct BplConfig BplConfig;

typedef struct BplReport BplReport;

typedef struct BplState BplState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the
// terminator, or 0 when the last call succeeded.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t bpl_last_error_message(char *buf, size_t len);

// Reads and validates a configuration file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum BplStatus bpl_config_load(const char *path, struct BplConfig **out);

// Parses configuration text.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum BplStatus bpl_config_parse(const char *text, struct BplConfig **out);

// # Safety
// `cfg` must be null or a handle from `bpl_config_load`/`bpl_config_parse`
// that has not been freed.
void bpl_config_free(struct BplConfig *cfg);

// Number of paths; 0 for a null handle.
//
// # Safety
// `cfg` must be null or a live handle.
size_t bpl_config_dimension(const struct BplConfig *cfg);

// Normalized pump path amplitudes. `re` and `im` must hold
// `bpl_config_dimension(cfg)` values.
//
// # Safety
// `cfg` must be a live handle; `re` and `im` must point to `len` writable doubles.
enum BplStatus bpl_config_pump_amplitudes(const struct BplConfig *cfg,
                                          double *re,
                                          double *im,
                                          size_t len);

// Biphoton path state produced by the configured source.
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
enum BplStatus bpl_config_state(const struct BplConfig *cfg, struct BplState **out);

// Biphoton path state from `n` complex amplitudes (normalized here),
// the focused waist and the path pitch.
//
// # Safety
// `re` and `im` must point to `n` readable doubles; `out` must be writable.
enum BplStatus bpl_state_new(const double *re,
                             const double *im,
                             size_t n,
                             double waist,
                             double pitch,
                             struct BplState **out);

// # Safety
// `state` must be null or a live handle.
void bpl_state_free(struct BplState *state);

// # Safety
// `state` must be null or a live handle.
size_t bpl_state_dimension(const struct BplState *state);

// Overlap of the Gaussian modes of paths `i` and `j`.
//
// # Safety
// `state` must be a live handle; `out` must be writable.
enum BplStatus bpl_state_overlap(const struct BplState *state, size_t i, size_t j, double *out);

// Image-plane joint coincidence density at detector positions `x1`, `x2`
// for a Gaussian position correlation of width `sigma`.
//
// # Safety
// `state` must be a live handle; `out` must be writable.
enum BplStatus bpl_image_joint_density(const struct BplState *state,
                                       double sigma,
                                       double x1,
                                       double x2,
                                       double *out);

// Slit-integrated coincidence rate of the configured detection model,
// with detector 1 at `x_fixed` and detector 2 at `x_scan`.
// `plane` is a `BplPlane` value.
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
enum BplStatus bpl_model_rate(const struct BplConfig *cfg,
                              uint32_t plane,
                              double x_fixed,
                              double x_scan,
                              double *out);

// Concurrence of a pure state with `n` (1 to 3) Schmidt coefficients.
//
// # Safety
// `kappa` must point to `n` readable doubles; `out` must be writable.
enum BplStatus bpl_concurrence(const double *kappa, size_t n, double *out);

// Simulates image and Fourier scans, fits them and reports the
// entanglement estimate with bootstrap uncertainties.
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
enum BplStatus bpl_pipeline_run(const struct BplConfig *cfg, uint64_t seed, struct BplReport **out);

// # Safety
// `report` must be null or a live handle.
void bpl_report_free(struct BplReport *report);

// # Safety
// `report` must be null or a live handle.
size_t bpl_report_dimension(const struct BplReport *report);

// Concurrence and its bootstrap standard deviation. `std` may be null.
//
// # Safety
// `report` must be a live handle; `value` must be writable.
enum BplStatus bpl_report_concurrence(const struct BplReport *report, double *value, double *std);

// Joint probability of paths (`i`, `j`) and its standard deviation.
// `std` may be null.
//
// # Safety
// `report` must be a live handle; `value` must be writable.
enum BplStatus bpl_report_probability(const struct BplReport *report,
                                      size_t i,
                                      size_t j,
                                      double *value,
                                      double *std);

// Schmidt coefficient `k` and its standard deviation. `std` may be null.
//
// # Safety
// `report` must be a live handle; `value` must be writable.
enum BplStatus bpl_report_schmidt(const struct BplReport *report,
                                  size_t k,
                                  double *value,
                                  double *std);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BPL_H */
