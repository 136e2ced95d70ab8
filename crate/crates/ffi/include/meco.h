#ifndef MECO_H
#define MECO_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  MECO_STATUS_OK = 0,
  MECO_STATUS_CONFIG = 2,
  MECO_STATUS_DATA = 3,
  MECO_STATUS_NUMERIC = 4,
  MECO_STATUS_NULL_POINTER = 10,
  MECO_STATUS_INVALID_UTF8 = 11,
  MECO_STATUS_PANIC = 12,
} MecoStatus;

/**
 * A trained model with its codecs and audio units.
 */
typedef struct MecoGenerator MecoGenerator;

/**
 * A motion clip: `frames` rows of `dim` floats.
 */
typedef struct MecoMotion MecoMotion;

/**
 * Sampling controls. `top_k == 0` with `temperature <= 0` decodes greedily;
 * `top_k == 0` with a positive temperature samples the full distribution.
 */
typedef struct {
  double beta;
  double gamma;
  uint64_t seed;
  uint32_t top_k;
  double temperature;
} MecoSamplerParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *meco_version(void);

/**
 * Message for the most recent failure on this thread; empty after a success.
 */
const char *meco_last_error(void);

/**
 * Fills `out` with the configured defaults (beta 5, gamma 0.9, greedy).
 *
 * # Safety
 * `out` must be null or point to writable memory for one struct.
 */
MecoStatus meco_sampler_defaults(MecoSamplerParams *out);

/**
 * Opens the trained artifacts of a run directory.
 *
 * # Safety
 * `run_dir` must be a NUL-terminated string; `out` must be writable.
 */
MecoStatus meco_generator_open(const char *run_dir, MecoGenerator **out);

/**
 * # Safety
 * `g` must be null or a handle from `meco_generator_open` not yet freed.
 */
void meco_generator_free(MecoGenerator *g);

/**
 * Generates motion for mono audio. `example_path` may be null for no example.
 *
 * # Safety
 * `g` must be a live generator; `samples` must hold `n_samples` floats;
 * `params` must be null (defaults) or valid; `out` must be writable.
 */
MecoStatus meco_generate(const MecoGenerator *g,
                         const float *samples,
                         size_t n_samples,
                         uint32_t sample_rate,
                         const char *example_path,
                         const MecoSamplerParams *params,
                         MecoMotion **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
MecoStatus meco_motion_load(const char *path, MecoMotion **out);

/**
 * # Safety
 * `m` must be a live motion handle; `path` a NUL-terminated string.
 */
MecoStatus meco_motion_save(const MecoMotion *m, const char *path);

/**
 * Frame count, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live motion handle.
 */
size_t meco_motion_frames(const MecoMotion *m);

/**
 * Floats per frame, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live motion handle.
 */
size_t meco_motion_dim(const MecoMotion *m);

/**
 * # Safety
 * `m` must be null or a live motion handle.
 */
float meco_motion_frame_rate(const MecoMotion *m);

/**
 * Row-major frame data, valid until the handle is freed; null for a null handle.
 *
 * # Safety
 * `m` must be null or a live motion handle.
 */
const float *meco_motion_data(const MecoMotion *m);

/**
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void meco_motion_free(MecoMotion *m);

/**
 * Beat constancy of gesture beats against audio beats (seconds).
 *
 * # Safety
 * Each array must hold its stated number of doubles; `out` must be writable.
 */
MecoStatus meco_beat_constancy(const double *gesture,
                               size_t n_gesture,
                               const double *audio,
                               size_t n_audio,
                               double sigma,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MECO_H */
