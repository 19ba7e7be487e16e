#ifndef CODEC_ENERGY_H
#define CODEC_ENERGY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum CeStatus {
  CE_STATUS_OK = 0,
  CE_STATUS_NULL_POINTER = 1,
  CE_STATUS_INVALID_ARGUMENT = 2,
  CE_STATUS_OUT_OF_RANGE = 3,
  CE_STATUS_IO = 4,
  CE_STATUS_PARSE = 5,
  CE_STATUS_DEGENERATE = 6,
  CE_STATUS_INSUFFICIENT_DATA = 7,
  CE_STATUS_PANIC = 99,
} CeStatus;

/**
 * Opaque power trace.
 */
typedef struct CeTrace CeTrace;

/**
 * Least-squares line `energy = alpha * rate + beta`.
 */
typedef struct CeFit {
  double alpha;
  double beta;
  double r_squared;
  /**
   * Non-zero when `r_squared` is below the requested floor.
   */
  uint8_t low_fit;
} CeFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *ce_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ce_version(void);

/**
 * Maps a QP on the 0-51 scale onto 0-63.
 */
enum CeStatus ce_map_qp(int64_t qp51, uint32_t *out);

/**
 * Bitrate in kbit/s of `bytes` spread over `frames` at `fps`.
 */
enum CeStatus ce_compute_bitrate(uint64_t bytes, uint64_t frames, uint32_t fps, double *out_kbps);

/**
 * Counter increment between two raw readings, allowing one wraparound.
 */
enum CeStatus ce_counter_delta(uint64_t prev_uj,
                               uint64_t next_uj,
                               uint64_t max_range_uj,
                               uint64_t *out_uj);

/**
 * PSNR in dB of one plane, capped at 100 dB.
 */
enum CeStatus ce_psnr_plane(const uint16_t *reference,
                            const uint16_t *distorted,
                            size_t width,
                            size_t height,
                            uint8_t bit_depth,
                            double *out_db);

/**
 * Fits energy against rate; `low_fit` is set when r² is below `r2_floor`.
 */
enum CeStatus ce_fit_re_line(const double *rates_kbps,
                             const double *energies_j,
                             size_t n,
                             double r2_floor,
                             struct CeFit *out);

/**
 * Average quality gain of the test curve over the anchor on their shared
 * log-rate interval.
 */
enum CeStatus ce_bd_quality(const double *anchor_rates,
                            const double *anchor_quality,
                            size_t anchor_n,
                            const double *test_rates,
                            const double *test_quality,
                            size_t test_n,
                            double *out);

/**
 * Loads a `t_ms,pkg_w,dram_w` CSV trace.
 */
enum CeStatus ce_trace_from_csv(const char *path, double interval_ms, struct CeTrace **out);

/**
 * Builds a trace from sample arrays. `dram_w` may be NULL.
 */
enum CeStatus ce_trace_from_samples(const double *t_ms,
                                    const double *pkg_w,
                                    const double *dram_w,
                                    size_t n,
                                    double interval_ms,
                                    struct CeTrace **out);

/**
 * Number of samples, or 0 for NULL.
 */
size_t ce_trace_len(const struct CeTrace *trace);

/**
 * Trapezoidal energy of the trace in joules.
 */
enum CeStatus ce_trace_energy(const struct CeTrace *trace, double *out_j);

/**
 * Energy of the trace minus `idle_w` over its duration.
 */
enum CeStatus ce_trace_net_energy(const struct CeTrace *trace, double idle_w, double *out_j);

/**
 * Releases a trace. NULL is ignored.
 */
void ce_trace_free(struct CeTrace *trace);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CODEC_ENERGY_H */
