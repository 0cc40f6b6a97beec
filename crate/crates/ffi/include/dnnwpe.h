#ifndef DNNWPE_H
#define DNNWPE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DnnwpeWindow {
    DNNWPE_WINDOW_HANN = 0,
    DNNWPE_WINDOW_RECTANGULAR = 1,
} DnnwpeWindow;

// Result codes. Zero is success.
typedef enum DnnwpeStatus {
    DNNWPE_STATUS_OK = 0,
    DNNWPE_STATUS_NULL_POINTER = 1,
    DNNWPE_STATUS_INVALID_ARGUMENT = 2,
    DNNWPE_STATUS_SHAPE_MISMATCH = 3,
    DNNWPE_STATUS_RANK_DEFICIENT = 4,
    DNNWPE_STATUS_MISSING_MODEL = 5,
    DNNWPE_STATUS_IO = 6,
    DNNWPE_STATUS_FORMAT = 7,
    DNNWPE_STATUS_NUMERIC = 8,
    DNNWPE_STATUS_PANIC = 9,
} DnnwpeStatus;

typedef enum DnnwpeMode {
    DNNWPE_MODE_PROPOSED = 0,
    DNNWPE_MODE_WPE = 1,
    DNNWPE_MODE_WPE_MASK = 2,
    DNNWPE_MODE_ORACLE = 3,
} DnnwpeMode;

typedef struct DnnwpeEnhancer DnnwpeEnhancer;

typedef struct DnnwpeModel DnnwpeModel;

typedef struct DnnwpeSpectrogram DnnwpeSpectrogram;

typedef struct DnnwpeWaveform DnnwpeWaveform;

// STFT parameters. `sample_rate == 0` accepts any input rate.
typedef struct DnnwpeStftConfig {
    size_t frame_len;
    size_t hop;
    size_t dft_len;
    enum DnnwpeWindow window;
    uint32_t sample_rate;
} DnnwpeStftConfig;

typedef struct DnnwpeWpeConfig {
    size_t order;
    size_t delay;
    size_t iterations;
    double variance_floor;
    double diag_load;
} DnnwpeWpeConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until
// the next call into the library from the same thread.
const char *dnnwpe_last_error(void);

// Library version as a static NUL-terminated string.
const char *dnnwpe_version(void);

// 800/160/800 Hann at 16 kHz.
struct DnnwpeStftConfig dnnwpe_stft_config_default(void);

struct DnnwpeWpeConfig dnnwpe_wpe_config_default(void);

// Creates a waveform from planar samples: `channels` consecutive runs of
// `len` doubles.
//
// # Safety
// `samples` must point to `channels * len` readable doubles.
enum DnnwpeStatus dnnwpe_waveform_new(const double *samples,
                                      size_t channels,
                                      size_t len,
                                      uint32_t sample_rate,
                                      struct DnnwpeWaveform **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum DnnwpeStatus dnnwpe_waveform_read_wav(const char *path, struct DnnwpeWaveform **out);

// Writes 32-bit float WAV.
//
// # Safety
// `wav` must be a live handle; `path` a NUL-terminated string.
enum DnnwpeStatus dnnwpe_waveform_write_wav(const struct DnnwpeWaveform *wav, const char *path);

// # Safety
// `wav` must be a live handle; the out pointers may be null.
enum DnnwpeStatus dnnwpe_waveform_info(const struct DnnwpeWaveform *wav,
                                       size_t *channels,
                                       size_t *len,
                                       uint32_t *sample_rate);

// Copies channel `channel` into `buf`, which holds `capacity` doubles.
//
// # Safety
// `buf` must point to `capacity` writable doubles.
enum DnnwpeStatus dnnwpe_waveform_copy_channel(const struct DnnwpeWaveform *wav,
                                               size_t channel,
                                               double *buf,
                                               size_t capacity);

// # Safety
// `wav` must be null or a handle not yet freed.
void dnnwpe_waveform_free(struct DnnwpeWaveform *wav);

// # Safety
// `wav` and `cfg` must be valid; `out` writable.
enum DnnwpeStatus dnnwpe_analyze(const struct DnnwpeWaveform *wav,
                                 const struct DnnwpeStftConfig *cfg,
                                 struct DnnwpeSpectrogram **out);

// # Safety
// `spec` and `cfg` must be valid; `out` writable.
enum DnnwpeStatus dnnwpe_synthesize(const struct DnnwpeSpectrogram *spec,
                                    const struct DnnwpeStftConfig *cfg,
                                    uint32_t sample_rate,
                                    struct DnnwpeWaveform **out);

// # Safety
// `spec` must be a live handle; the out pointers may be null.
enum DnnwpeStatus dnnwpe_spectrogram_shape(const struct DnnwpeSpectrogram *spec,
                                           size_t *frames,
                                           size_t *bins,
                                           size_t *channels);

// Copies the coefficients as interleaved (re, im) pairs in frame, bin,
// channel order. `capacity` counts doubles.
//
// # Safety
// `buf` must point to `capacity` writable doubles.
enum DnnwpeStatus dnnwpe_spectrogram_copy(const struct DnnwpeSpectrogram *spec,
                                          double *buf,
                                          size_t capacity);

// # Safety
// `spec` must be null or a handle not yet freed.
void dnnwpe_spectrogram_free(struct DnnwpeSpectrogram *spec);

// Iterative WPE; `out` receives the single-channel desired spectrogram.
//
// # Safety
// `spec` and `cfg` must be valid; `out` writable.
enum DnnwpeStatus dnnwpe_iterative_wpe(const struct DnnwpeSpectrogram *spec,
                                       const struct DnnwpeWpeConfig *cfg,
                                       struct DnnwpeSpectrogram **out);

// One weight solve with a caller-supplied variance map of `frames * bins`
// doubles, frame-major.
//
// # Safety
// `variance` must point to `frames * bins` readable doubles.
enum DnnwpeStatus dnnwpe_oneshot_wpe(const struct DnnwpeSpectrogram *spec,
                                     const double *variance,
                                     size_t frames,
                                     size_t bins,
                                     const struct DnnwpeWpeConfig *cfg,
                                     struct DnnwpeSpectrogram **out);

// Mean cepstral distance of `estimate` against `reference` (channel 0).
//
// # Safety
// Handles and `cfg` must be valid; `out` writable.
enum DnnwpeStatus dnnwpe_cepstral_distance(const struct DnnwpeWaveform *reference,
                                           const struct DnnwpeWaveform *estimate,
                                           const struct DnnwpeStftConfig *cfg,
                                           double *out);

// # Safety
// `path` must be a NUL-terminated string; `out` writable.
enum DnnwpeStatus dnnwpe_model_load(const char *path, struct DnnwpeModel **out);

// # Safety
// `model` must be null or a handle not yet freed.
void dnnwpe_model_free(struct DnnwpeModel *model);

// Creates an enhancer. `model` may be null except in `Proposed` mode; the
// enhancer keeps its own reference, so the model handle may be freed
// afterwards.
//
// # Safety
// Pointers must be valid or null where allowed; `out` writable.
enum DnnwpeStatus dnnwpe_enhancer_new(enum DnnwpeMode mode,
                                      const struct DnnwpeModel *model,
                                      const struct DnnwpeWpeConfig *wpe,
                                      const struct DnnwpeStftConfig *stft,
                                      struct DnnwpeEnhancer **out);

// Enhances `mixture`; `clean` and `reverberant` are optional ground-truth
// references (required by `Oracle`, and by `WpeMask` without a model).
//
// # Safety
// Handles must be valid or null where allowed; `out` writable.
enum DnnwpeStatus dnnwpe_enhancer_run(const struct DnnwpeEnhancer *enhancer,
                                      const struct DnnwpeWaveform *mixture,
                                      const struct DnnwpeWaveform *clean,
                                      const struct DnnwpeWaveform *reverberant,
                                      struct DnnwpeWaveform **out);

// # Safety
// `enhancer` must be null or a handle not yet freed.
void dnnwpe_enhancer_free(struct DnnwpeEnhancer *enhancer);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DNNWPE_H */
