#ifndef SEGLAM_H
#define SEGLAM_H

/* Generated by cbindgen from seglam-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum SeglamStatus {
  SEGLAM_STATUS_OK = 0,
  SEGLAM_STATUS_NULL_POINTER = 1,
  SEGLAM_STATUS_INVALID_UTF8 = 2,
  SEGLAM_STATUS_IO_ERROR = 3,
  SEGLAM_STATUS_PARSE_ERROR = 4,
  SEGLAM_STATUS_INVALID_ARGUMENT = 5,
  SEGLAM_STATUS_PIPELINE_ERROR = 6,
  SEGLAM_STATUS_EVAL_ERROR = 7,
  SEGLAM_STATUS_OUT_OF_RANGE = 8,
  SEGLAM_STATUS_PANIC = 9,
} SeglamStatus;

/**
 * Opaque generated scene data (observations, masks, true poses).
 */
typedef struct SeglamBundle SeglamBundle;

/**
 * Opaque pipeline result: trajectory, segmentations, and maps.
 */
typedef struct SeglamResult SeglamResult;

/**
 * Opaque scene specification.
 */
typedef struct SeglamScene SeglamScene;

/**
 * Pipeline knobs, mirroring the CLI flags. Obtain defaults from
 * `seglam_run_options_default` and override fields as needed.
 */
typedef struct SeglamRunOptions {
  /**
   * 0 = full, 1 = trackonly, 2 = baseline.
   */
  int32_t mode;
  double drop_rate;
  double dilate_rate;
  uint64_t corruption_seed;
  uint32_t keyframe_interval;
  double merge_radius;
  double match_dist_3d;
  double moving_fraction;
  double huber_delta;
  uint32_t max_iterations;
  double convergence_tol;
  double pixel_match_radius;
  double similarity_w1;
  double similarity_w2;
  double match_threshold;
} SeglamRunOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *seglam_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *seglam_version(void);

/**
 * Fills `options` with the library defaults.
 *
 * # Safety
 * `options` must point to writable memory for one `SeglamRunOptions`.
 */
enum SeglamStatus seglam_run_options_default(struct SeglamRunOptions *options);

/**
 * Parses a scene spec from TOML text.
 *
 * # Safety
 * `toml_text` must be a valid NUL-terminated string; `out` must be a valid
 * pointer slot.
 */
enum SeglamStatus seglam_scene_from_toml(const char *toml_text, struct SeglamScene **out);

/**
 * Loads a scene spec from a TOML file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be a valid
 * pointer slot.
 */
enum SeglamStatus seglam_scene_from_file(const char *path, struct SeglamScene **out);

/**
 * # Safety
 * `scene` must be null or a pointer from `seglam_scene_from_*`, not yet
 * freed.
 */
void seglam_scene_free(struct SeglamScene *scene);

/**
 * Generates scene data; `pass` 0 is the first visit, 1 the second
 * (relocated objects, offset trajectory).
 *
 * # Safety
 * `scene` must be a live scene handle; `out` must be a valid pointer slot.
 */
enum SeglamStatus seglam_bundle_generate(const struct SeglamScene *scene,
                                         uint32_t pass,
                                         struct SeglamBundle **out);

/**
 * # Safety
 * `bundle` must be null or a pointer from `seglam_bundle_generate`, not yet
 * freed.
 */
void seglam_bundle_free(struct SeglamBundle *bundle);

/**
 * Number of frames in the bundle.
 *
 * # Safety
 * `bundle` must be a live bundle handle.
 */
size_t seglam_bundle_frame_count(const struct SeglamBundle *bundle);

/**
 * True camera pose of one frame as
 * `[timestamp, tx, ty, tz, qx, qy, qz, qw]` (camera-to-world).
 *
 * # Safety
 * `bundle` must be a live bundle handle; `out_pose8` must point to 8
 * writable doubles.
 */
enum SeglamStatus seglam_bundle_true_pose(const struct SeglamBundle *bundle,
                                          size_t frame,
                                          double *out_pose8);

/**
 * Runs the frame loop over a bundle.
 *
 * # Safety
 * `bundle` must be a live bundle handle; `options` may be null (defaults);
 * `out` must be a valid pointer slot.
 */
enum SeglamStatus seglam_pipeline_run(const struct SeglamBundle *bundle,
                                      const struct SeglamRunOptions *options,
                                      struct SeglamResult **out);

/**
 * # Safety
 * `result` must be null or a pointer from a run function, not yet freed.
 */
void seglam_result_free(struct SeglamResult *result);

/**
 * Number of tracked poses in the result.
 *
 * # Safety
 * `result` must be a live result handle.
 */
size_t seglam_result_pose_count(const struct SeglamResult *result);

/**
 * Number of frames lost by tracking.
 *
 * # Safety
 * `result` must be a live result handle.
 */
size_t seglam_result_lost_count(const struct SeglamResult *result);

/**
 * Estimated pose `index` as `[timestamp, tx, ty, tz, qx, qy, qz, qw]`
 * (camera-to-world).
 *
 * # Safety
 * `result` must be a live result handle; `out_pose8` must point to 8
 * writable doubles.
 */
enum SeglamStatus seglam_result_pose(const struct SeglamResult *result,
                                     size_t index,
                                     double *out_pose8);

/**
 * ATE of the result against the bundle's true trajectory (meters).
 *
 * # Safety
 * `result` and `bundle` must be live handles; `out_rmse` must point to a
 * writable double.
 */
enum SeglamStatus seglam_result_ate_rmse(const struct SeglamResult *result,
                                         const struct SeglamBundle *bundle,
                                         double *out_rmse);

/**
 * Mean IoU of the result's segmentation against the bundle's perfect masks.
 * `refined` nonzero scores the refined output, zero the consumed input.
 *
 * # Safety
 * `result` and `bundle` must be live handles; `out_miou` must point to a
 * writable double.
 */
enum SeglamStatus seglam_result_miou(const struct SeglamResult *result,
                                     const struct SeglamBundle *bundle,
                                     int32_t refined,
                                     double *out_miou);

/**
 * Writes one of the result's maps to a file: `which` 0 is the tracking map,
 * 1 the long-term map.
 *
 * # Safety
 * `result` must be a live result handle; `path` must be a valid
 * NUL-terminated string.
 */
enum SeglamStatus seglam_result_save_map(const struct SeglamResult *result,
                                         int32_t which,
                                         const char *path);

/**
 * Relocalizes a bundle's frames against a map file, producing a result
 * whose trajectory holds the per-frame relocalized poses.
 *
 * # Safety
 * `bundle` must be a live bundle handle; `map_path` must be a valid
 * NUL-terminated string; `options` may be null; `out` must be a valid
 * pointer slot.
 */
enum SeglamStatus seglam_relocalize_against(const struct SeglamBundle *bundle,
                                            const char *map_path,
                                            const struct SeglamRunOptions *options,
                                            struct SeglamResult **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEGLAM_H */
