#ifndef SEMSPLAT_H
#define SEMSPLAT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every function.
typedef enum SspStatus {
  SSP_STATUS_OK = 0,
  // A required pointer argument was null.
  SSP_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  SSP_STATUS_INVALID_UTF8 = 2,
  // Bad parameter value or configuration.
  SSP_STATUS_INVALID_ARGUMENT = 3,
  // Missing, unreadable or malformed input data.
  SSP_STATUS_DATA_ERROR = 4,
  // The pipeline produced non-finite values.
  SSP_STATUS_NUMERIC_ERROR = 5,
  // An internal panic was caught at the boundary.
  SSP_STATUS_PANIC = 6,
} SspStatus;

// Pipeline configuration.
typedef struct SspConfig SspConfig;

// A Gaussian map together with its semantic palette.
typedef struct SspMap SspMap;

// Camera-to-world pose: camera center and rotation quaternion (x, y, z, w),
// as in trajectory files.
typedef struct SspPose {
  double tx;
  double ty;
  double tz;
  double qx;
  double qy;
  double qz;
  double qw;
} SspPose;

// Pinhole camera, image size in pixels.
typedef struct SspIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} SspIntrinsics;

// Caller-owned output buffers for one render, row-major. Color and semantic
// hold `3 * width * height` values, depth and silhouette `width * height`.
// Any pointer may be null to skip that channel.
typedef struct SspRenderBuffers {
  float *color;
  float *depth;
  float *semantic;
  float *silhouette;
} SspRenderBuffers;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *ssp_last_error(void);

// Library version as a static nul-terminated string.
const char *ssp_version(void);

// Creates a configuration with default values.
struct SspConfig *ssp_config_new(void);

// Loads a key-value config file into a new handle.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum SspStatus ssp_config_load(const char *path, struct SspConfig **out);

// Sets one config key from its text value.
//
// # Safety
// `cfg` must come from this library; strings must be nul-terminated.
enum SspStatus ssp_config_set(struct SspConfig *cfg, const char *key, const char *value);

// # Safety
// `cfg` must come from this library (or be null) and not be used afterwards.
void ssp_config_free(struct SspConfig *cfg);

// Runs SLAM on the sequence in `input_dir`, writing all artifacts to
// `output_dir`. A null `cfg` means defaults. `inject_gt_poses` nonzero
// bypasses tracking with the sequence's ground-truth poses.
//
// # Safety
// Strings must be nul-terminated; `cfg` must be null or from this library.
enum SspStatus ssp_run(const char *input_dir,
                       const char *output_dir,
                       const struct SspConfig *cfg,
                       uint64_t seed,
                       int32_t inject_gt_poses);

// Generates a synthetic sequence into `out_dir`. `style` is "orbit",
// "line" or "revisit"; images are 64x64.
//
// # Safety
// Strings must be nul-terminated.
enum SspStatus ssp_synth(const char *out_dir, uint64_t seed, uint32_t frames, const char *style);

// Loads a map checkpoint.
//
// # Safety
// `path` must be nul-terminated and `out` a valid pointer.
enum SspStatus ssp_map_load(const char *path, struct SspMap **out);

// # Safety
// `map` must come from this library; `path` must be nul-terminated.
enum SspStatus ssp_map_save(const struct SspMap *map, const char *path);

// Number of Gaussians, or 0 for a null handle.
//
// # Safety
// `map` must be null or come from this library.
size_t ssp_map_len(const struct SspMap *map);

// Applies an edit script (text, one command per line) in place.
//
// # Safety
// `map` must come from this library; `script` must be nul-terminated.
enum SspStatus ssp_map_edit(struct SspMap *map, const char *script);

// Renders the map from `pose` into caller-owned buffers.
//
// # Safety
// `map` must come from this library. Non-null buffer pointers must be valid
// for the sizes given in [`SspRenderBuffers`].
enum SspStatus ssp_map_render(const struct SspMap *map,
                              const struct SspPose *pose,
                              const struct SspIntrinsics *intrinsics,
                              const struct SspRenderBuffers *buffers);

// # Safety
// `map` must come from this library (or be null) and not be used afterwards.
void ssp_map_free(struct SspMap *map);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMSPLAT_H */
