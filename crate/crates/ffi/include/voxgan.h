#ifndef VOXGAN_H
#define VOXGAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Fusion rule for overlapping estimates.
 */
typedef enum VgPolicy {
  VgPolicy_Average = 0,
  VgPolicy_Median = 1,
  VgPolicy_Vote = 2,
} VgPolicy;

typedef enum VgStatus {
  VgStatus_Ok = 0,
  VgStatus_NullPointer = 1,
  VgStatus_InvalidArgument = 2,
  VgStatus_Io = 3,
  VgStatus_Format = 4,
  VgStatus_Shape = 5,
  VgStatus_EmptyMask = 6,
  VgStatus_MissingArtifact = 7,
  VgStatus_Numeric = 8,
  VgStatus_Panic = 9,
} VgStatus;

typedef enum VgView {
  VgView_Axial = 0,
  VgView_Coronal = 1,
  VgView_Sagittal = 2,
} VgView;

/**
 * Opaque volume handle.
 */
typedef struct VgVolume VgVolume;

/**
 * Voxel error statistics in HU; `me` is the mean of CT minus sCT.
 */
typedef struct VgErrorStats {
  double mae;
  double me;
  size_t voxels;
} VgErrorStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *vg_version(void);

/**
 * Copies the last error message of this thread into `buf` (truncated, always NUL-terminated)
 * and returns the full message length, or 0 when there is none.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t vg_last_error(char *buf, size_t len);

/**
 * Builds a volume from `nx * ny * nz` x-fastest values. `kind` is 0 MR, 1 CT, 2 sCT, 3 label, 4 mask.
 *
 * # Safety
 * `values` must be valid for `len` floats and `out` must be writable.
 */
enum VgStatus vg_volume_new(size_t nx,
                            size_t ny,
                            size_t nz,
                            float spacing,
                            uint8_t kind,
                            const float *values,
                            size_t len,
                            struct VgVolume **out);

/**
 * # Safety
 * `v` must be null or a handle from this library that has not been freed.
 */
void vg_volume_free(struct VgVolume *v);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum VgStatus vg_volume_read(const char *path_, struct VgVolume **out);

/**
 * # Safety
 * `v` must be a live handle and `path` a NUL-terminated string.
 */
enum VgStatus vg_volume_write(const struct VgVolume *v, const char *path_);

/**
 * Writes dims to `dims[0..3]`, plus spacing and kind code when the pointers are non-null.
 *
 * # Safety
 * `v` must be a live handle; `dims` must be valid for three values.
 */
enum VgStatus vg_volume_info(const struct VgVolume *v, size_t *dims, float *spacing, uint8_t *kind);

/**
 * Copies all values into `buf`, which must hold exactly `nx * ny * nz` floats.
 *
 * # Safety
 * `v` must be a live handle and `buf` valid for `len` floats.
 */
enum VgStatus vg_volume_values(const struct VgVolume *v, float *buf, size_t len);

/**
 * Generates an aligned MR / CT / label phantom with the default anatomy.
 *
 * # Safety
 * The three output pointers must be writable.
 */
enum VgStatus vg_phantom_generate(uint64_t seed,
                                  size_t edge,
                                  bool tumor,
                                  bool artifact,
                                  struct VgVolume **mr,
                                  struct VgVolume **ct,
                                  struct VgVolume **labels);

/**
 * Largest connected foreground component of an MR volume, hole-filled and dilated.
 *
 * # Safety
 * `mr` must be a live handle and `out` writable.
 */
enum VgStatus vg_body_mask(const struct VgVolume *mr, size_t dilate, struct VgVolume **out);

/**
 * Clips MR intensities and scales them to `[0, 255]`. A `percentile` in `(0, 100]` selects the
 * dynamic policy; otherwise `static_clip` is used.
 *
 * # Safety
 * `mr` and `mask` must be live handles and `out` writable.
 */
enum VgStatus vg_standardize(const struct VgVolume *mr,
                             const struct VgVolume *mask,
                             float static_clip,
                             float percentile,
                             struct VgVolume **out);

/**
 * Estimates per voxel and view for a tiling: `ceil((P - 2c) / s)^2`.
 *
 * # Safety
 * `out` must be writable.
 */
enum VgStatus vg_estimates_per_voxel(size_t patch, size_t stride, size_t crop, size_t *out);

/**
 * Fuses `n` HU estimates of one voxel.
 *
 * # Safety
 * `values` must be valid for `n` floats and `out` writable.
 */
enum VgStatus vg_fuse_estimates(enum VgPolicy p, const float *values, size_t n, float *out);

/**
 * Tiles, translates with the noise-free label oracle and fuses the selected views.
 * `views` is a bit set: 1 axial, 2 coronal, 4 sagittal. `count` receives the estimate count map
 * when non-null.
 *
 * # Safety
 * The input handles must be live; `sct` (and `count` if non-null) must be writable.
 */
enum VgStatus vg_synthesize_oracle(const struct VgVolume *mr_net,
                                   const struct VgVolume *mask,
                                   const struct VgVolume *labels,
                                   size_t patch,
                                   size_t stride,
                                   size_t crop,
                                   uint32_t views,
                                   enum VgPolicy p,
                                   struct VgVolume **sct,
                                   struct VgVolume **count);

/**
 * MAE and ME of `sct` against `ct` over the non-zero voxels of `mask`.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum VgStatus vg_error_stats(const struct VgVolume *ct,
                             const struct VgVolume *sct,
                             const struct VgVolume *mask,
                             struct VgErrorStats *out);

/**
 * Parallel projection scaled so the brightest ray is 255. Pass a null `buf` to query
 * `width` and `height`; otherwise `len` must equal `width * height`.
 *
 * # Safety
 * `v` must be a live handle; `width` and `height` writable; `buf` null or valid for `len` floats.
 */
enum VgStatus vg_drr(const struct VgVolume *v,
                     enum VgView dir,
                     size_t *width,
                     size_t *height,
                     float *buf,
                     size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOXGAN_H */
