#ifndef KRONC_H
#define KRONC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum KroncStatus {
  KRONC_STATUS_OK = 0,
  KRONC_STATUS_NULL_POINTER = 1,
  KRONC_STATUS_INVALID_ARGUMENT = 2,
  KRONC_STATUS_IO = 3,
  KRONC_STATUS_FORMAT = 4,
  KRONC_STATUS_NO_CONSTRAINTS = 5,
  KRONC_STATUS_POSES_REQUIRED = 6,
  KRONC_STATUS_MISSING_DEPTHS = 7,
  KRONC_STATUS_NON_FINITE_LOSS = 8,
  KRONC_STATUS_DEGENERATE = 9,
  KRONC_STATUS_OUT_OF_RANGE = 10,
  KRONC_STATUS_PANIC = 11,
} KroncStatus;

typedef enum KroncProfile {
  KRONC_PROFILE_SYNTHETIC = 0,
  KRONC_PROFILE_REAL = 1,
} KroncProfile;

/*
 Opaque scene handle.
 */
typedef struct KroncScene KroncScene;

typedef struct KroncOptimizeOptions {
  size_t steps;
  double learning_rate;
  /*
   Negative selects the scene-scale default.
   */
  double lambda;
  bool freeze_depths;
} KroncOptimizeOptions;

typedef struct KroncRunReport {
  double initial_loss;
  double final_loss;
  size_t parameter_count;
  size_t unoptimized_views;
} KroncRunReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. Owned by the
 library and valid until the next call.
 */
const char *kronc_last_error(void);

/*
 Fully visible synthetic scene at its ground-truth poses.

 # Safety
 `out` must be valid for writing one pointer.
 */
enum KroncStatus kronc_synth(size_t n_views,
                             size_t n_keypoints,
                             double radius,
                             uint64_t seed,
                             struct KroncScene **out);

/*
 Parses a scene document. Missing depths are drawn with `depth_seed`.

 # Safety
 `json` must be a valid NUL-terminated string; `out` must be valid for
 writing one pointer.
 */
enum KroncStatus kronc_scene_from_json(const char *json,
                                       uint64_t depth_seed,
                                       struct KroncScene **out);

/*
 Serializes a scene; free the result with `kronc_string_free`.

 # Safety
 `scene` must be a live handle; `out` must be valid for writing one
 pointer.
 */
enum KroncStatus kronc_scene_to_json(const struct KroncScene *scene, char **out);

/*
 # Safety
 `s` must come from this library and not have been freed already.
 */
void kronc_string_free(char *s);

/*
 # Safety
 `scene` must be a live handle.
 */
enum KroncStatus kronc_scene_clone(const struct KroncScene *scene, struct KroncScene **out);

/*
 # Safety
 `scene` must be null or a handle not yet freed.
 */
void kronc_scene_free(struct KroncScene *scene);

/*
 # Safety
 `scene` must be a live handle; outputs must be writable.
 */
enum KroncStatus kronc_scene_counts(const struct KroncScene *scene,
                                    size_t *n_views,
                                    size_t *n_keypoints);

/*
 Camera-to-world rotation (row-major, 9 values) and translation (3
 values) of view `view`.

 # Safety
 `scene` must be a live handle; `rotation` and `translation` must be
 writable for 9 and 3 doubles.
 */
enum KroncStatus kronc_scene_get_pose(const struct KroncScene *scene,
                                      size_t view,
                                      double *rotation,
                                      double *translation);

/*
 Replaces the poses with noisy copies (degrees, scene units).

 # Safety
 `scene` must be a live handle.
 */
enum KroncStatus kronc_scene_perturb(struct KroncScene *scene,
                                     double sigma_rot,
                                     double sigma_trans,
                                     uint64_t seed);

/*
 Redraws every live depth from `U[ω/2, ω]`.

 # Safety
 `scene` must be a live handle.
 */
enum KroncStatus kronc_scene_init_depths(struct KroncScene *scene, uint64_t seed);

/*
 # Safety
 `scene` must be a live handle; `out` must be writable.
 */
enum KroncStatus kronc_scene_total_loss(const struct KroncScene *scene, double lambda, double *out);

struct KroncOptimizeOptions kronc_optimize_options_default(enum KroncProfile profile);

/*
 Optimizes the scene in place. On failure the scene is left unchanged.

 # Safety
 `scene` must be a live handle; `options` must point to valid options;
 `report` may be null.
 */
enum KroncStatus kronc_optimize(struct KroncScene *scene,
                                const struct KroncOptimizeOptions *options,
                                struct KroncRunReport *report);

/*
 Mean rotation error (degrees) and camera-center error (reference
 units) after similarity alignment of `estimated` onto `reference`.

 # Safety
 Both handles must be live; outputs must be writable.
 */
enum KroncStatus kronc_pose_errors(const struct KroncScene *estimated,
                                   const struct KroncScene *reference,
                                   double *eps_rot,
                                   double *eps_trans);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KRONC_H */
