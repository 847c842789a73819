#ifndef TACSTEREO_H
#define TACSTEREO_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TsPattern {
  TS_PATTERN_CIRCULAR = 0,
  TS_PATTERN_HEXAGON = 1,
  TS_PATTERN_SQUARE = 2,
} TsPattern;

typedef enum TsStatus {
  TS_STATUS_OK = 0,
  TS_STATUS_NULL_POINTER = 1,
  TS_STATUS_INVALID_ARGUMENT = 2,
  // The output buffer is too small; the needed length was written.
  TS_STATUS_BUFFER_TOO_SMALL = 3,
  TS_STATUS_IO = 4,
  TS_STATUS_DETECTION = 5,
  // Markers could not be coded or matched between views.
  TS_STATUS_CODING = 6,
  TS_STATUS_GEOMETRY = 7,
  TS_STATUS_SURFACE = 8,
  TS_STATUS_INTERNAL = 9,
} TsStatus;

// Opaque inverse model holding the rest reference.
typedef struct TsReconstructor TsReconstructor;

// Opaque stereo camera rig.
typedef struct TsRig TsRig;

// Opaque reconstructed skin of one press.
typedef struct TsSurface TsSurface;

// Sensor construction and gel parameters.
typedef struct TsSensorParams {
  enum TsPattern pattern;
  // Pin height (mm).
  double pin_height;
  // Skin thickness (mm).
  double skin_thickness;
  // Marker pitch (mm).
  double marker_pitch;
  double n_gel;
  double n_air;
} TsSensorParams;

typedef struct TsPixel {
  double u;
  double v;
} TsPixel;

typedef struct TsPoint3 {
  double x;
  double y;
  double z;
} TsPoint3;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL if none.
//
// The string stays valid until the next failing call on the same thread.
const char *ts_last_error(void);

// Library version as a static NUL-terminated string.
const char *ts_version(void);

// Defaults of the reference sensor for `pattern`.
struct TsSensorParams ts_sensor_params_default(enum TsPattern pattern);

// Rectified pinhole pair with focal length in pixels and baseline in mm.
//
// # Safety
// `out_rig` must be a valid handle slot.
enum TsStatus ts_rig_ideal(double focal,
                           double baseline,
                           uint32_t width,
                           uint32_t height,
                           struct TsRig **out_rig);

// Loads a rig from a TOML calibration file.
//
// # Safety
// `path` must be a NUL-terminated string and `out_rig` a valid handle slot.
enum TsStatus ts_rig_load(const char *path, struct TsRig **out_rig);

// # Safety
// `rig` must come from a `ts_rig_*` constructor and not be freed twice.
void ts_rig_free(struct TsRig *rig);

// Triangulates one matched marker from raw (distorted) pixel centres.
//
// # Safety
// `rig` must be a live handle and `out_point` writable.
enum TsStatus ts_triangulate(const struct TsRig *rig,
                             struct TsPixel left,
                             struct TsPixel right,
                             struct TsPoint3 *out_point);

// Detects marker centres in one 8-bit grayscale view (dark markers on a
// light background, row-major, `stride` bytes per row).
//
// Writes up to `capacity` centres and always sets `out_count` to the number
// found; returns `TS_STATUS_BUFFER_TOO_SMALL` if they did not all fit.
//
// # Safety
// `pixels` must hold `stride * height` bytes; `centers` must hold
// `capacity` entries unless `capacity` is 0.
enum TsStatus ts_detect_markers(const uint8_t *pixels,
                                uintptr_t width,
                                uintptr_t height,
                                uintptr_t stride,
                                struct TsPixel *centers,
                                uintptr_t capacity,
                                uintptr_t *out_count);

// Builds the inverse model from the marker centres of the undeformed frame.
//
// # Safety
// `rig` and `params` must be valid; the point arrays must hold the given
// counts; `out_recon` must be a valid handle slot.
enum TsStatus ts_reconstructor_new(const struct TsRig *rig,
                                   const struct TsSensorParams *params,
                                   const struct TsPixel *rest_left,
                                   uintptr_t n_left,
                                   const struct TsPixel *rest_right,
                                   uintptr_t n_right,
                                   struct TsReconstructor **out_recon);

// # Safety
// `recon` must come from [`ts_reconstructor_new`] and not be freed twice.
void ts_reconstructor_free(struct TsReconstructor *recon);

// Reconstructs the skin surface of one pressed frame.
//
// # Safety
// `recon` must be live; the point arrays must hold the given counts;
// `out_surface` must be a valid handle slot.
enum TsStatus ts_reconstruct(const struct TsReconstructor *recon,
                             const struct TsPixel *left,
                             uintptr_t n_left,
                             const struct TsPixel *right,
                             uintptr_t n_right,
                             struct TsSurface **out_surface);

// # Safety
// `surface` must come from [`ts_reconstruct`] and not be freed twice.
void ts_surface_free(struct TsSurface *surface);

// Skin depth at (x, y). Fails with `TS_STATUS_INVALID_ARGUMENT` outside
// the marker footprint.
//
// # Safety
// `surface` must be live and `out_z` writable.
enum TsStatus ts_surface_eval(const struct TsSurface *surface, double x, double y, double *out_z);

// Unit normal of the skin at (x, y), oriented with positive z.
//
// # Safety
// `surface` must be live and `out_normal` writable.
enum TsStatus ts_surface_normal(const struct TsSurface *surface,
                                double x,
                                double y,
                                struct TsPoint3 *out_normal);

// Number of markers the surface was fitted to.
//
// # Safety
// `surface` must be live or NULL (returns 0).
uintptr_t ts_surface_marker_count(const struct TsSurface *surface);

// Copies the corrected marker positions and their pattern ids.
//
// # Safety
// `ids` and `points` must each hold `capacity` entries; either may be NULL
// to skip it.
enum TsStatus ts_surface_markers(const struct TsSurface *surface,
                                 uint32_t *ids,
                                 struct TsPoint3 *points,
                                 uintptr_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TACSTEREO_H */
