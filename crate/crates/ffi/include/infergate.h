#ifndef INFERGATE_H
#define INFERGATE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum IgStatus {
  IG_STATUS_OK = 0,
  IG_STATUS_NULL_POINTER = 1,
  IG_STATUS_INVALID_ARGUMENT = 2,
  /**
   * More input is needed before a whole message is available.
   */
  IG_STATUS_INCOMPLETE = 3,
  IG_STATUS_DECODE = 4,
  IG_STATUS_ENCODE = 5,
  IG_STATUS_QUANTIZE = 6,
  IG_STATUS_DETECTOR = 7,
  IG_STATUS_IO = 8,
  IG_STATUS_BUFFER_TOO_SMALL = 9,
  IG_STATUS_PANIC = 10,
} IgStatus;

/**
 * Streaming decoder: feed arbitrary chunks, take out whole messages.
 */
typedef struct IgDecoder IgDecoder;

/**
 * A micro-CNN detector. Not thread-safe; use one handle per thread.
 */
typedef struct IgDetector IgDetector;

/**
 * Accumulates frames for mAP@50, false-positive and latency figures.
 */
typedef struct IgMetrics IgMetrics;

/**
 * A calibrated int8 tensor.
 */
typedef struct IgQTensor IgQTensor;

/**
 * Decoded message header. `robot_id` is zero padded.
 */
typedef struct IgHeader {
  uint8_t msg_type;
  uint8_t robot_id[16];
  uint64_t seq;
  uint64_t timestamp_us;
  uint32_t payload_len;
} IgHeader;

typedef struct IgBox {
  uint16_t x1;
  uint16_t y1;
  uint16_t x2;
  uint16_t y2;
} IgBox;

typedef struct IgDetection {
  uint16_t label_id;
  float confidence;
  struct IgBox bbox;
} IgDetection;

typedef struct IgLabeledBox {
  uint16_t label_id;
  struct IgBox bbox;
} IgLabeledBox;

/**
 * Summary of everything added so far. Undefined figures are NaN.
 */
typedef struct IgMetricsReport {
  size_t frames;
  size_t crowded_frames;
  double map50;
  double false_positive_pct;
  double mean_latency_us;
  double p99_latency_us;
} IgMetricsReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string, truncating if needed. Returns the full message
 * length excluding the terminator.
 */
size_t ig_last_error(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ig_version(void);

/**
 * Encodes one message. `robot_id` is a NUL-terminated string of 1-16
 * bytes.
 */
enum IgStatus ig_encode_message(uint8_t msg_type,
                                const char *robot_id,
                                uint64_t seq,
                                uint64_t timestamp_us,
                                const uint8_t *payload,
                                size_t payload_len,
                                uint8_t *out,
                                size_t out_cap,
                                size_t *out_len);

struct IgDecoder *ig_decoder_new(void);

void ig_decoder_free(struct IgDecoder *d);

/**
 * Appends received bytes.
 */
enum IgStatus ig_decoder_push(struct IgDecoder *d, const uint8_t *bytes, size_t len);

/**
 * Takes the next whole message. Returns `IG_STATUS_INCOMPLETE` when more
 * bytes are needed and `IG_STATUS_DECODE` on a malformed stream (which
 * then stays failed). On `IG_STATUS_BUFFER_TOO_SMALL` the message is kept
 * and `payload_len` tells the size needed.
 */
enum IgStatus ig_decoder_next(struct IgDecoder *d,
                              struct IgHeader *header,
                              uint8_t *payload,
                              size_t payload_cap,
                              size_t *payload_len);

/**
 * Bytes pushed but not yet returned as messages.
 */
size_t ig_decoder_buffered(const struct IgDecoder *d);

/**
 * Calibrates on `values` and quantizes them. `out` receives a new handle.
 */
enum IgStatus ig_quantize(const float *values, size_t len, struct IgQTensor **out);

void ig_qtensor_free(struct IgQTensor *t);

enum IgStatus ig_qtensor_params(const struct IgQTensor *t, float *scale, int8_t *zero_point);

/**
 * Raw int8 codes.
 */
enum IgStatus ig_qtensor_data(const struct IgQTensor *t, int8_t *out, size_t cap, size_t *out_len);

/**
 * `(q - zero_point) * scale` per element.
 */
enum IgStatus ig_qtensor_dequantize(const struct IgQTensor *t,
                                    float *out,
                                    size_t cap,
                                    size_t *out_len);

/**
 * Loads a `Q8M1` model file.
 */
enum IgStatus ig_detector_load(const char *path,
                               float confidence_threshold,
                               struct IgDetector **out);

/**
 * A randomly initialised micro model, for testing integrations.
 */
enum IgStatus ig_detector_random(size_t classes,
                                 uint64_t seed,
                                 float confidence_threshold,
                                 struct IgDetector **out);

void ig_detector_free(struct IgDetector *d);

/**
 * Runs detection on a packed RGB24 image of `width * height * 3` bytes.
 */
enum IgStatus ig_detector_detect(struct IgDetector *d,
                                 uint16_t width,
                                 uint16_t height,
                                 const uint8_t *rgb,
                                 size_t rgb_len,
                                 struct IgDetection *out,
                                 size_t cap,
                                 size_t *out_len);

/**
 * Intersection over union; 0 for disjoint or zero-area boxes.
 */
double ig_iou(struct IgBox a, struct IgBox b);

struct IgMetrics *ig_metrics_new(void);

void ig_metrics_free(struct IgMetrics *m);

/**
 * Adds one answered frame. `latency_us` < 0 means unknown.
 */
enum IgStatus ig_metrics_add_frame(struct IgMetrics *m,
                                   const struct IgLabeledBox *truth,
                                   size_t n_truth,
                                   const struct IgDetection *predictions,
                                   size_t n_predictions,
                                   int64_t latency_us);

/**
 * Scores the accumulated frames. `iou_threshold` is normally 0.5 and a
 * frame is crowded when it has at least `crowded_threshold` objects.
 */
enum IgStatus ig_metrics_report(const struct IgMetrics *m,
                                double iou_threshold,
                                size_t crowded_threshold,
                                struct IgMetricsReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INFERGATE_H */
