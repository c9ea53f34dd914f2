#ifndef COLORLAB_H
#define COLORLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Zero is success, everything else is negative.
typedef enum ClStatus {
  CL_STATUS_OK = 0,
  CL_STATUS_NULL_POINTER = -1,
  CL_STATUS_INVALID_ARGUMENT = -2,
  CL_STATUS_IO = -3,
  CL_STATUS_CHECKPOINT = -4,
  CL_STATUS_SHAPE = -5,
  CL_STATUS_PANIC = -6,
} ClStatus;

// A loaded model. Opaque to C.
typedef struct ClModel ClModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// The message of the last failed call on this thread, or null. The
// pointer stays valid until the next call on the same thread.
const char *cl_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *cl_version(void);

// Loads a checkpoint file into a new handle stored in `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum ClStatus cl_model_load(const char *path, struct ClModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from [`cl_model_load`] and not be used afterwards.
void cl_model_free(struct ClModel *model);

// Side length of the square images the model accepts.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum ClStatus cl_model_image_size(const struct ClModel *model, size_t *out);

// Model kind ("classifier", "gan" or "generator") as a static string, or
// null for a null handle.
//
// # Safety
// `model` must be null or a live handle.
const char *cl_model_kind(const struct ClModel *model);

// Colorizes an 8-bit interleaved RGB image. Only its lightness is used, so
// gray or color input both work. `rgb_out` receives `height*width*3`
// bytes and may alias `rgb_in`.
//
// # Safety
// `model` must be a live handle; both buffers must hold
// `height*width*3` bytes.
enum ClStatus cl_colorize_rgb8(struct ClModel *model,
                               size_t height,
                               size_t width,
                               const uint8_t *rgb_in,
                               uint8_t *rgb_out);

// Scores an 8-bit prediction against ground truth: pixel accuracy at
// `eps`, PSNR in dB (infinite for identical images) and SSIM. Any output
// pointer may be null to skip that metric.
//
// # Safety
// Both images must hold `height*width*3` bytes; non-null outputs must be
// writable.
enum ClStatus cl_metrics_rgb8(size_t height,
                              size_t width,
                              const uint8_t *pred,
                              const uint8_t *real,
                              float eps,
                              double *pixel_acc,
                              double *psnr_db,
                              double *ssim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COLORLAB_H */
