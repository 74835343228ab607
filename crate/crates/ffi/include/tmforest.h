#ifndef TMFOREST_H
#define TMFOREST_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. Values 2 to 4 agree with the command-line exit codes.
 */
typedef enum TmStatus {
  TM_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8 or similar misuse of the API.
   */
  TM_STATUS_INVALID_ARGUMENT = 1,
  TM_STATUS_CONFIG = 2,
  TM_STATUS_DATA = 3,
  TM_STATUS_COMPAT = 4,
  /**
   * The output buffer is too small; the required count was written.
   */
  TM_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * Internal panic; the handle arguments should be considered unusable.
   */
  TM_STATUS_INTERNAL = 6,
} TmStatus;

typedef struct TmFeatureMap TmFeatureMap;

typedef struct TmForest TmForest;

typedef struct TmTemplates TmTemplates;

/**
 * One detection. `template_id` indexes the template set used for detection.
 */
typedef struct TmDetection {
  uint32_t x;
  uint32_t y;
  uint32_t template_id;
  uint32_t object_id;
  double yaw;
  double pitch;
  double roll;
  double scale;
  double score;
} TmDetection;

/**
 * Message for the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *tm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tm_version(void);

/**
 * Load a template container.
 */
enum TmStatus tm_templates_load(const char *path, struct TmTemplates **out);

/**
 * Load a scene feature-map container.
 */
enum TmStatus tm_feature_map_load(const char *path, struct TmFeatureMap **out);

/**
 * Load a forest container.
 */
enum TmStatus tm_forest_load(const char *path, struct TmForest **out);

/**
 * Release a handle. Null is ignored.
 */
void tm_templates_free(struct TmTemplates *h);

void tm_feature_map_free(struct TmFeatureMap *h);

void tm_forest_free(struct TmForest *h);

/**
 * Number of templates in the set, 0 for null.
 */
size_t tm_templates_count(const struct TmTemplates *h);

/**
 * Descriptor length (coordinates per window), 0 for null.
 */
size_t tm_forest_descriptor_len(const struct TmForest *h);

/**
 * Train a forest with default parameters except `trees`.
 */
enum TmStatus tm_forest_train(const struct TmTemplates *templates,
                              uint32_t trees,
                              uint64_t seed,
                              struct TmForest **out);

/**
 * Write a forest container to `path`.
 */
enum TmStatus tm_forest_save(const struct TmForest *forest, const char *path);

/**
 * Query a descriptor of `len` quantized values (0 = missing, 1..=8).
 *
 * On success `*rejected_depth` is -1 and the sorted candidate ids are
 * written to `ids`, or it holds the depth at which every tree rejected and
 * `*count` is 0. If `capacity` is too small, `*count` receives the needed
 * size and `BufferTooSmall` is returned.
 */
enum TmStatus tm_forest_query(const struct TmForest *forest,
                              const uint8_t *descriptor,
                              size_t len,
                              uint32_t *ids,
                              size_t capacity,
                              size_t *count,
                              int32_t *rejected_depth);

/**
 * Detect templates in a scene with default detection settings. Buffer
 * semantics as in `tm_forest_query`.
 */
enum TmStatus tm_detect(const struct TmFeatureMap *scene,
                        const struct TmForest *forest,
                        const struct TmTemplates *templates,
                        uint64_t seed,
                        struct TmDetection *out,
                        size_t capacity,
                        size_t *count);

#endif  /* TMFOREST_H */
