#ifndef REGIONNORM_H
#define REGIONNORM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Mask shapes for [`rn_mask_generate`].
 */
typedef enum RnMaskKind {
  /**
   * Centred square covering a quarter of the image.
   */
  RN_MASK_KIND_REGULAR = 0,
  /**
   * Random brush strokes with hole ratio inside `[coverage_lo, coverage_hi]`.
   */
  RN_MASK_KIND_IRREGULAR = 1,
} RnMaskKind;

/**
 * Result of every call.
 */
typedef enum RnStatus {
  RN_STATUS_OK = 0,
  RN_STATUS_NULL_POINTER = 1,
  /**
   * Bad sizes, ranges or configuration values.
   */
  RN_STATUS_INVALID_ARGUMENT = 2,
  /**
   * File could not be read or written.
   */
  RN_STATUS_IO = 3,
  /**
   * Checkpoint file is malformed or incompatible.
   */
  RN_STATUS_CHECKPOINT = 4,
  /**
   * A computation produced NaN or infinity, or selected an empty region.
   */
  RN_STATUS_NUMERIC = 5,
  /**
   * The library panicked; this is a bug.
   */
  RN_STATUS_PANIC = 6,
} RnStatus;

/**
 * Inpainting generator loaded from a checkpoint.
 */
typedef struct RnGenerator RnGenerator;

/**
 * Moments of a feature plane before and after its holes are filled with a
 * constant, predicted from the region moments and measured directly.
 */
typedef struct RnShiftReport {
  double mu1;
  double sigma1;
  double mu_known;
  double sigma_known;
  double mu_filled_hole;
  double sigma_filled_hole;
  double mu2_analytic;
  double sigma2_analytic;
  double mu2_empirical;
  double sigma2_empirical;
  size_t hole_pixels;
  size_t known_pixels;
} RnShiftReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a
 * success. The pointer stays valid until the next call on the same thread.
 */
const char *rn_last_error_message(void);

/**
 * Loads a checkpoint written by `regionnorm train`. On success `*out`
 * owns a handle that must be released with [`rn_generator_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum RnStatus rn_generator_load(const char *path, struct RnGenerator **out);

/**
 * Releases a handle from [`rn_generator_load`]. NULL is ignored.
 *
 * # Safety
 * `generator` must come from [`rn_generator_load`] and not be used again.
 */
void rn_generator_free(struct RnGenerator *generator);

/**
 * Side length of the square images the generator expects.
 *
 * # Safety
 * `generator` must be a live handle and `out` writable.
 */
enum RnStatus rn_generator_image_size(const struct RnGenerator *generator, size_t *out);

/**
 * Sets the threshold of every learned-mask layer; must lie in (0, 1).
 *
 * # Safety
 * `generator` must be a live handle.
 */
enum RnStatus rn_generator_set_threshold(struct RnGenerator *generator, double threshold);

/**
 * Fills the holes of one RGB image. `rgb` and `out_rgb` hold
 * `size * size * 3` bytes, `mask` holds `size * size`. Known pixels are
 * copied through unchanged.
 *
 * # Safety
 * All pointers must be valid for the stated lengths.
 */
enum RnStatus rn_generator_inpaint(struct RnGenerator *generator,
                                   const uint8_t *rgb,
                                   const uint8_t *mask,
                                   size_t size,
                                   uint8_t *out_rgb);

/**
 * Normalizes each channel of `x` separately over the valid and hole
 * regions of its sample's mask, without affine parameters.
 *
 * # Safety
 * `x` and `out` hold `n * c * h * w` floats, `masks` holds `n * h * w` bytes.
 */
enum RnStatus rn_region_normalize(const float *x,
                                  size_t n,
                                  size_t c,
                                  size_t h,
                                  size_t w,
                                  const uint8_t *masks,
                                  double eps,
                                  float *out);

/**
 * Moment shift caused by filling the holes of `plane` with `fill`.
 *
 * # Safety
 * `plane` holds `len` doubles, `mask` holds `len` bytes, `out` is writable.
 */
enum RnStatus rn_shift_report(const double *plane,
                              const uint8_t *mask,
                              size_t len,
                              double fill,
                              struct RnShiftReport *out);

/**
 * PSNR in dB of two 8-bit images, capped at 100 dB for identical inputs.
 *
 * # Safety
 * `a` and `b` hold `width * height * channels` bytes; `out` is writable.
 */
enum RnStatus rn_psnr(const uint8_t *a,
                      const uint8_t *b,
                      size_t width,
                      size_t height,
                      size_t channels,
                      double *out);

/**
 * SSIM on luma with an 11x11 Gaussian window (sigma 1.5).
 *
 * # Safety
 * As for [`rn_psnr`].
 */
enum RnStatus rn_ssim(const uint8_t *a,
                      const uint8_t *b,
                      size_t width,
                      size_t height,
                      size_t channels,
                      double *out);

/**
 * Mean absolute error as a percentage of 255.
 *
 * # Safety
 * As for [`rn_psnr`].
 */
enum RnStatus rn_l1_percent(const uint8_t *a,
                            const uint8_t *b,
                            size_t width,
                            size_t height,
                            size_t channels,
                            double *out);

/**
 * Writes a `height x width` mask (1 valid, 0 hole) to `out`. The same
 * `(seed, index)` always gives the same mask.
 *
 * # Safety
 * `out` holds `height * width` bytes.
 */
enum RnStatus rn_mask_generate(enum RnMaskKind kind,
                               size_t height,
                               size_t width,
                               double coverage_lo,
                               double coverage_hi,
                               uint64_t seed,
                               uint64_t index,
                               uint8_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REGIONNORM_H */
