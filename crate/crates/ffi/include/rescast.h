#ifndef RESCAST_H
#define RESCAST_H

/* Generated by cbindgen from the rescast-ffi crate. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code returned by every fallible call.
enum RescastStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  // The call succeeded and all out-pointers were written.
  RESCAST_STATUS_OK = 0,
  // A required pointer argument was null.
  RESCAST_STATUS_NULL_POINTER = 1,
  // An argument value was rejected before any work started.
  RESCAST_STATUS_INVALID_ARGUMENT = 2,
  // Reading, writing, or combining data failed.
  RESCAST_STATUS_DATA_ERROR = 3,
  // A computation produced or encountered a non-finite value.
  RESCAST_STATUS_NUMERIC_ERROR = 4,
  // A string argument was not valid UTF-8.
  RESCAST_STATUS_INVALID_UTF8 = 5,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum RescastStatus RescastStatus;
#else
typedef int32_t RescastStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

// Opaque handle to a denoiser accepted by `rescast_heun_sample`.
typedef struct RescastDenoiser RescastDenoiser;

// Opaque handle to one raster field: geometry, variable tag, valid time,
// and a row-major f32 payload with NaN marking missing pixels.
typedef struct RescastGrid RescastGrid;

// Grid placement and spacing. Row 0, column 0 sits at (lat0, lon0); rows
// step north by dy_km and columns step east by dx_km.
typedef struct RescastGeometry {
  size_t ny;
  size_t nx;
  double lat0;
  double lon0;
  double dy_km;
  double dx_km;
} RescastGeometry;

// Pixel counts of a yes/no comparison at a fixed event threshold.
typedef struct RescastContingency {
  uint64_t hits;
  uint64_t false_alarms;
  uint64_t misses;
  uint64_t correct_negatives;
} RescastContingency;

// Preconditioner gains at one noise level.
typedef struct RescastEdmCoeffs {
  double c_skip;
  double c_out;
  double c_in;
  double c_noise;
} RescastEdmCoeffs;

// Noise ladder for sampling: `steps` levels from sigma_max down to
// sigma_min with warping exponent rho.
typedef struct RescastSchedule {
  double sigma_min;
  double sigma_max;
  double rho;
  size_t steps;
} RescastSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *rescast_version(void);

// Message describing the most recent failure on the calling thread, empty
// before the first failure. The pointer stays valid until the next
// failing call on the same thread.
const char *rescast_last_error_message(void);

// Read a grid file and hand back a new grid handle.
RescastStatus rescast_grid_read(const char *path, struct RescastGrid **out);

// Write a grid to a file, replacing any previous content.
RescastStatus rescast_grid_write(const struct RescastGrid *grid, const char *path);

// Build a grid from scratch. `variable` names the stored quantity (for
// example "rain" or "residual"), `valid_time` is an RFC 3339 UTC stamp
// such as "2021-06-01T05:00:00Z", and `values` holds ny*nx row-major
// samples; pass null to start with every pixel missing.
RescastStatus rescast_grid_new(const struct RescastGeometry *geometry,
                               const char *variable,
                               const char *valid_time,
                               const float *values,
                               struct RescastGrid **out);

// Release a grid handle. Null is accepted and ignored.
void rescast_grid_free(struct RescastGrid *grid);

// Copy the grid's placement and spacing into `out`.
RescastStatus rescast_grid_geometry(const struct RescastGrid *grid, struct RescastGeometry *out);

// Borrow the grid's row-major value buffer. The pointer is valid until
// the handle is freed.
RescastStatus rescast_grid_values(const struct RescastGrid *grid,
                                  const float **out_ptr,
                                  size_t *out_len);

// Fetch one pixel. Missing pixels read as NaN; coordinates outside the
// grid are rejected.
RescastStatus rescast_grid_value_at(const struct RescastGrid *grid,
                                    size_t row,
                                    size_t col,
                                    float *out);

// Write the grid's valid time into `buf` as a NUL-terminated RFC 3339
// stamp. `buf_len` must cover the stamp plus the terminator; 21 bytes is
// always enough.
RescastStatus rescast_grid_valid_time(const struct RescastGrid *grid, char *buf, size_t buf_len);

// Mean absolute error over pixels where prediction and truth are both
// present and at least one is nonzero.
RescastStatus rescast_mae_nonzero(const struct RescastGrid *pred,
                                  const struct RescastGrid *truth,
                                  double *out);

// Fractions skill score for events above `threshold` in an odd
// `neighborhood`-wide window. When neither field has any event the score
// is undefined and `out` is set to NaN.
RescastStatus rescast_fss(const struct RescastGrid *pred,
                          const struct RescastGrid *truth,
                          double threshold,
                          size_t neighborhood,
                          double *out);

// Contingency counts for events above `threshold`. With `wet_only` set,
// pixels dry in both fields are left out of the comparison.
RescastStatus rescast_contingency(const struct RescastGrid *pred,
                                  const struct RescastGrid *truth,
                                  double threshold,
                                  bool wet_only,
                                  struct RescastContingency *out);

// Probability of detection, NaN when no events were observed.
double rescast_pod(struct RescastContingency counts);

// Critical success index, NaN when nothing was observed or predicted.
double rescast_csi(struct RescastContingency counts);

// Loss weight assigned to a pixel with `rain_mm` of hourly rain, from the
// reference intensity curve.
double rescast_intensity_weight(double rain_mm);

// Preconditioner gains at noise level `sigma` for data scale `sigma_data`.
RescastStatus rescast_edm_coeffs(double sigma, double sigma_data, struct RescastEdmCoeffs *out);

// Load a trained denoiser from a checkpoint file.
RescastStatus rescast_denoiser_load(const char *path, struct RescastDenoiser **out);

// Build a denoiser whose clean estimate is everywhere `value`, regardless
// of input or conditioning. Sampling from it returns exactly that
// constant, which makes it the zero-knowledge baseline and a handy
// fixture for exercising the sampler.
RescastStatus rescast_denoiser_constant(size_t ny,
                                        size_t nx,
                                        double value,
                                        double sigma_data,
                                        struct RescastDenoiser **out);

// Number of conditioning channels the denoiser requires, or -1 when it
// accepts any conditioning stack.
RescastStatus rescast_denoiser_cond_channels(const struct RescastDenoiser *denoiser, int64_t *out);

// Release a denoiser handle. Null is accepted and ignored.
void rescast_denoiser_free(struct RescastDenoiser *denoiser);

// Draw one deterministic sample of shape ny-by-nx. `cond` holds
// `channels` row-major planes of ny*nx doubles and may be null when
// `channels` is zero. Identical arguments and seed give bit-identical
// output. The result lands in `out`, ny*nx row-major doubles, in the
// denoiser's normalized units.
RescastStatus rescast_heun_sample(const struct RescastDenoiser *denoiser,
                                  const double *cond,
                                  size_t channels,
                                  size_t ny,
                                  size_t nx,
                                  const struct RescastSchedule *schedule,
                                  double sigma_data,
                                  uint64_t seed,
                                  double *out);

// Build the three-member scenario envelope around an on-time forecast.
// `forecast_early` and `forecast_late` are the same cycle's leads one
// hour before and after `forecast_on`; `residual` is the correction valid
// with the on-time member and must carry the "residual" variable tag. On
// success three new grid handles come back: pointwise lower bound,
// corrected on-time field, and upper bound.
RescastStatus rescast_scenarios(const struct RescastGrid *forecast_early,
                                const struct RescastGrid *forecast_on,
                                const struct RescastGrid *forecast_late,
                                const struct RescastGrid *residual,
                                struct RescastGrid **out_lower,
                                struct RescastGrid **out_middle,
                                struct RescastGrid **out_upper);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RESCAST_H */
