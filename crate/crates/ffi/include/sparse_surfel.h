#ifndef SPARSE_SURFEL_H
#define SPARSE_SURFEL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_ARGUMENT = 2,
  SS_STATUS_IO = 3,
  SS_STATUS_FORMAT = 4,
  SS_STATUS_EMPTY = 5,
  SS_STATUS_RUNTIME = 6,
  SS_STATUS_PANIC = 7,
} SsStatus;

typedef enum SsSceneKind {
  SS_SCENE_KIND_TEXTURED_PLANE = 0,
  SS_SCENE_KIND_BOX_ROOM = 1,
  SS_SCENE_KIND_SPHERE_ROOM = 2,
} SsSceneKind;

typedef enum SsPreset {
  SS_PRESET_RE10K = 0,
  SS_PRESET_SCANNET = 1,
} SsPreset;

typedef struct SsField SsField;

typedef struct SsMesh SsMesh;

/*
 Posed views with optional pseudo ground-truth normals.
 */
typedef struct SsViews SsViews;

typedef struct SsMeshMetrics {
  double cd;
  double precision;
  double recall;
  double f1;
} SsMeshMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. The pointer
 stays valid until the next `ss_*` call on the same thread.
 */
const char *ss_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *ss_version(void);

/*
 Renders a synthetic scene with `count` cameras of `width` x `height`
 pixels (focal 0.8 * width, baseline 0.3, "scannet" near/far). `dims`
 points at three values. `gt_out` may be NULL.

 # Safety
 Pointers must be valid for the documented lengths.
 */
enum SsStatus ss_views_synthesize(enum SsSceneKind kind,
                                  const double *dims,
                                  uintptr_t width,
                                  uintptr_t height,
                                  uintptr_t count,
                                  uint64_t seed,
                                  double normal_noise_deg,
                                  struct SsViews **views_out,
                                  struct SsMesh **gt_out);

/*
 Loads a camera JSON bundle and the images it references.

 # Safety
 `path` must be a NUL-terminated string; `out` a writable pointer.
 */
enum SsStatus ss_views_load(const char *path, struct SsViews **out);

/*
 Number of views, 0 for NULL.

 # Safety
 `views` must be NULL or a live handle.
 */
uintptr_t ss_views_count(const struct SsViews *views);

/*
 Image size of view `index`.

 # Safety
 Handle and output pointers must be valid.
 */
enum SsStatus ss_views_size(const struct SsViews *views,
                            uintptr_t index,
                            uintptr_t *width,
                            uintptr_t *height);

/*
 # Safety
 `views` must be NULL or a handle not yet freed.
 */
void ss_views_free(struct SsViews *views);

/*
 Two-view forward pass on views 0 and 1, followed by `steps` optimizer
 steps when `steps > 0`. Views without normal maps get no normal targets.

 # Safety
 Handle and output pointers must be valid.
 */
enum SsStatus ss_reconstruct(const struct SsViews *views,
                             uintptr_t depth_bins,
                             uintptr_t steps,
                             uint64_t seed,
                             struct SsField **out);

/*
 # Safety
 `field` must be NULL or a live handle.
 */
uintptr_t ss_field_len(const struct SsField *field);

/*
 # Safety
 `path` must be NUL-terminated; `out` writable.
 */
enum SsStatus ss_field_read_ply(const char *path, struct SsField **out);

/*
 # Safety
 Handle and `path` must be valid.
 */
enum SsStatus ss_field_write_ply(const struct SsField *field, const char *path);

/*
 Renders the field at view `index`. `rgb` and `normal` hold
 `width * height * 3` doubles, `depth` and `acc` `width * height`, all row
 major. Any output may be NULL.

 # Safety
 Non-NULL buffers must have the lengths above.
 */
enum SsStatus ss_field_render(const struct SsField *field,
                              const struct SsViews *views,
                              uintptr_t index,
                              double *rgb,
                              double *depth,
                              double *normal,
                              double *acc);

/*
 # Safety
 `field` must be NULL or a handle not yet freed.
 */
void ss_field_free(struct SsField *field);

/*
 TSDF fusion of rendered depth and marching cubes, culled to the views.
 `voxel` and `trunc` override the preset when positive.

 # Safety
 Handles and `out` must be valid.
 */
enum SsStatus ss_extract_mesh(const struct SsField *field,
                              const struct SsViews *views,
                              enum SsPreset preset,
                              double voxel,
                              double trunc,
                              struct SsMesh **out);

/*
 Reads a `.ply` or `.obj` mesh.

 # Safety
 `path` must be NUL-terminated; `out` writable.
 */
enum SsStatus ss_mesh_read(const char *path, struct SsMesh **out);

/*
 # Safety
 Handle and `path` must be valid.
 */
enum SsStatus ss_mesh_write_ply(const struct SsMesh *mesh, const char *path);

/*
 # Safety
 `mesh` must be NULL or a live handle.
 */
uintptr_t ss_mesh_vertex_count(const struct SsMesh *mesh);

/*
 # Safety
 `mesh` must be NULL or a live handle.
 */
uintptr_t ss_mesh_face_count(const struct SsMesh *mesh);

/*
 Copies `3 * vertex_count` coordinates into `out`; `len` is its capacity.

 # Safety
 `out` must hold `len` doubles.
 */
enum SsStatus ss_mesh_vertices(const struct SsMesh *mesh, double *out, uintptr_t len);

/*
 Copies `3 * face_count` zero-based indices into `out`; `len` is its capacity.

 # Safety
 `out` must hold `len` values.
 */
enum SsStatus ss_mesh_faces(const struct SsMesh *mesh, uint32_t *out, uintptr_t len);

/*
 # Safety
 `mesh` must be NULL or a handle not yet freed.
 */
void ss_mesh_free(struct SsMesh *mesh);

/*
 Chamfer distance and F-score of `pred` against `gt`: `samples` points on
 the prediction, four times as many on the ground truth, both culled to
 the views. `SS_STATUS_EMPTY` when either side is empty after culling.

 # Safety
 Handles and `out` must be valid.
 */
enum SsStatus ss_mesh_metrics(const struct SsMesh *pred,
                              const struct SsMesh *gt,
                              const struct SsViews *views,
                              double tau,
                              uintptr_t samples,
                              uint64_t seed,
                              struct SsMeshMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPARSE_SURFEL_H */
