#ifndef CAMDS_H
#define CAMDS_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CamdsStatus {
  CAMDS_STATUS_OK = 0,
  CAMDS_STATUS_NULL_POINTER = 1,
  CAMDS_STATUS_INVALID_ARGUMENT = 2,
  CAMDS_STATUS_IO = 3,
  CAMDS_STATUS_PARSE = 4,
  CAMDS_STATUS_VERSION_MISMATCH = 5,
  CAMDS_STATUS_SHAPE = 6,
  CAMDS_STATUS_UNDEFINED = 7,
  CAMDS_STATUS_BUFFER_TOO_SMALL = 8,
  CAMDS_STATUS_PANIC = 9,
  CAMDS_STATUS_INTERNAL = 10,
} CamdsStatus;

// Opaque model handle.
typedef struct CamdsModel CamdsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message on this thread, or null if the last call succeeded.
// The pointer stays valid until the next camds call on this thread.
const char *camds_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *camds_version(void);

// Loads a checkpoint file. On success `*out` owns a new handle.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum CamdsStatus camds_model_load(const char *path, struct CamdsModel **out);

// Releases a handle from [`camds_model_load`]. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void camds_model_free(struct CamdsModel *model);

// Network input side `S`; frames are planar `3 × S × S` floats in [0, 1].
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum CamdsStatus camds_model_input_size(const struct CamdsModel *model, size_t *out);

// Number of resolution stages.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum CamdsStatus camds_model_num_resolutions(const struct CamdsModel *model, size_t *out);

// Abnormal-class probabilities for `batch` frames (`batch · 3 · S · S`
// floats) written to `out_probs[0..batch]`.
//
// # Safety
// Buffers must hold the stated number of elements.
enum CamdsStatus camds_model_predict(const struct CamdsModel *model,
                                     const float *pixels,
                                     size_t batch,
                                     double *out_probs);

// Positive class activation map `max(0, cam)` of one frame at 1-based
// `resolution` for `class` (0 normal, 1 abnormal). Writes the map
// row-major into `out_map` (capacity `capacity` floats) and its size to
// `out_height`/`out_width`. If the buffer is too small nothing is written
// except the size and [`CamdsStatus::BufferTooSmall`] is returned.
//
// # Safety
// `pixels` must hold `3 · S · S` floats, `out_map` `capacity` floats.
enum CamdsStatus camds_model_cam(const struct CamdsModel *model,
                                 const float *pixels,
                                 size_t resolution,
                                 size_t class_,
                                 float *out_map,
                                 size_t capacity,
                                 size_t *out_height,
                                 size_t *out_width);

// Trapezoid ROC AUC; `labels` are 0/1 with 1 = abnormal.
//
// # Safety
// `probs` and `labels` must hold `n` elements.
enum CamdsStatus camds_auc(const double *probs, const uint8_t *labels, size_t n, double *out);

// Mean of one patient's frame probabilities (order-independent).
//
// # Safety
// `probs` must hold `n` elements.
enum CamdsStatus camds_aggregate_patient(const double *probs, size_t n, double *out);

// Nominal Krippendorff's alpha of a row-major `raters × items` grid of
// integer labels; cells equal to `missing` are absent ratings. Writes NaN
// when all pairable ratings agree on a single label.
//
// # Safety
// `ratings` must hold `raters · items` elements.
enum CamdsStatus camds_krippendorff_alpha(const int32_t *ratings,
                                          size_t raters,
                                          size_t items,
                                          int32_t missing,
                                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAMDS_H */
