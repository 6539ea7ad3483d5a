#ifndef FETS_H
#define FETS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by all entry points.
 */
typedef enum FetsStatus {
  FETS_STATUS_OK = 0,
  FETS_STATUS_NULL_POINTER = 1,
  FETS_STATUS_INVALID_ARGUMENT = 2,
  FETS_STATUS_IO = 3,
  FETS_STATUS_FORMAT = 4,
  FETS_STATUS_INVALID_LABEL = 5,
  FETS_STATUS_GEOMETRY_MISMATCH = 6,
  FETS_STATUS_INTERNAL = 7,
} FetsStatus;

/**
 * Tumor sub-region selector.
 */
typedef enum FetsRegion {
  FETS_REGION_ET = 0,
  FETS_REGION_TC = 1,
  FETS_REGION_WT = 2,
} FetsRegion;

/**
 * Opaque segmentation volume.
 */
typedef struct FetsLabelVolume FetsLabelVolume;

/**
 * Scores for one case, indexed by [`FetsRegion`].
 */
typedef struct FetsCaseScores {
  double dice[3];
  double hd95[3];
} FetsCaseScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread; empty if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *fets_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fets_version(void);

/**
 * Builds a volume from `nx * ny * nz` labels in x-fastest order.
 *
 * # Safety
 * `spacing` must point to 3 doubles, `data` to `len` bytes, and `out` must
 * be writable.
 */
enum FetsStatus fets_label_volume_new(size_t nx,
                                      size_t ny,
                                      size_t nz,
                                      const double *spacing,
                                      const uint8_t *data,
                                      size_t len,
                                      struct FetsLabelVolume **out);

/**
 * Reads a uint8 NIfTI-1 segmentation.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum FetsStatus fets_label_volume_read(const char *path, struct FetsLabelVolume **out);

/**
 * Writes a volume as uint8 NIfTI-1.
 *
 * # Safety
 * `vol` must be a live handle and `path` a NUL-terminated string.
 */
enum FetsStatus fets_label_volume_write(const struct FetsLabelVolume *vol, const char *path);

/**
 * Copies dimensions and spacing out. Either pointer may be null.
 *
 * # Safety
 * `vol` must be a live handle; non-null outputs must hold 3 elements.
 */
enum FetsStatus fets_label_volume_geometry(const struct FetsLabelVolume *vol,
                                           size_t *dims,
                                           double *spacing);

/**
 * Borrows the label buffer. The pointer lives as long as the handle.
 *
 * # Safety
 * `vol` must be a live handle and `len` writable.
 */
enum FetsStatus fets_label_volume_data(const struct FetsLabelVolume *vol,
                                       const uint8_t **data,
                                       size_t *len);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `vol` must come from this library and not be freed twice.
 */
void fets_label_volume_free(struct FetsLabelVolume *vol);

/**
 * Dice of one region. Both masks empty scores 1.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum FetsStatus fets_dice(const struct FetsLabelVolume *pred,
                          const struct FetsLabelVolume *truth,
                          enum FetsRegion region,
                          double *out);

/**
 * 95th-percentile Hausdorff distance of one region, in millimeters.
 * Both masks empty scores 0; one empty scores the volume diagonal.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum FetsStatus fets_hd95(const struct FetsLabelVolume *pred,
                          const struct FetsLabelVolume *truth,
                          enum FetsRegion region,
                          double *out);

/**
 * Dice and HD95 for all three regions.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum FetsStatus fets_evaluate_case(const struct FetsLabelVolume *pred,
                                   const struct FetsLabelVolume *truth,
                                   struct FetsCaseScores *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FETS_H */
