#ifndef HIGHLIGHTS_LRP_H
#define HIGHLIGHTS_LRP_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum HlrpStatus {
  HLRP_STATUS_OK = 0,
  HLRP_STATUS_NULL_POINTER = 1,
  HLRP_STATUS_INVALID_ARGUMENT = 2,
  HLRP_STATUS_IO = 3,
  HLRP_STATUS_PARSE = 4,
  HLRP_STATUS_SHAPE = 5,
  HLRP_STATUS_OUT_OF_RANGE = 6,
  HLRP_STATUS_ENCODE = 7,
  HLRP_STATUS_PANIC = 8,
} HlrpStatus;

typedef enum HlrpRule {
  HLRP_RULE_ARGMAX = 0,
  HLRP_RULE_ZPLUS = 1,
} HlrpRule;

typedef enum HlrpMode {
  HLRP_MODE_ONLINE = 0,
  HLRP_MODE_DIV_ONLINE = 1,
  HLRP_MODE_DIV_OFFLINE = 2,
  HLRP_MODE_RANDOM = 3,
  HLRP_MODE_FIRST = 4,
} HlrpMode;

typedef struct HlrpNetwork HlrpNetwork;

typedef struct HlrpStream HlrpStream;

typedef struct HlrpSummary HlrpSummary;

typedef struct HlrpDiagnostics {
  double dropped_relevance;
  uint64_t dropped_count;
  uint64_t nonpositive_argmax;
} HlrpDiagnostics;

/**
 * Summary parameters. `hlrp_summary_params_default` fills the offline
 * defaults.
 */
typedef struct HlrpSummaryParams {
  size_t k;
  size_t l;
  size_t interval_size;
  size_t states_after;
  /**
   * 0 = min-max importance, 1 = gap to the second-best action.
   */
  uint32_t importance;
  size_t sample_size;
  double percentile;
  uint64_t seed;
} HlrpSummaryParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *hlrp_last_error(void);

void hlrp_clear_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hlrp_version(void);

enum HlrpStatus hlrp_network_load(const char *dir, struct HlrpNetwork **out);

void hlrp_network_free(struct HlrpNetwork *net);

/**
 * Input dimensions `[h, w, c]` and action count.
 */
enum HlrpStatus hlrp_network_dims(const struct HlrpNetwork *net,
                                  size_t *dims_out,
                                  size_t *num_actions_out);

/**
 * Q-values for one `[h, w, c]` u8 state.
 */
enum HlrpStatus hlrp_network_forward(const struct HlrpNetwork *net,
                                     const uint8_t *state,
                                     size_t state_len,
                                     float *q_out,
                                     size_t q_len);

/**
 * Relevance map (`[h, w, c]`, same layout as the state) for `action`.
 * `diag` may be NULL.
 */
enum HlrpStatus hlrp_saliency(const struct HlrpNetwork *net,
                              const uint8_t *state,
                              size_t state_len,
                              size_t action,
                              enum HlrpRule rule,
                              float *map_out,
                              size_t map_len,
                              struct HlrpDiagnostics *diag);

enum HlrpStatus hlrp_stream_load(const char *dir, struct HlrpStream **out);

void hlrp_stream_free(struct HlrpStream *stream);

/**
 * Number of records; 0 for a NULL handle.
 */
size_t hlrp_stream_len(const struct HlrpStream *stream);

/**
 * Borrowed pointer to record `index`'s state bytes; valid while the stream lives.
 */
enum HlrpStatus hlrp_stream_state(const struct HlrpStream *stream,
                                  size_t index,
                                  const uint8_t **state_out,
                                  size_t *len_out);

struct HlrpSummaryParams hlrp_summary_params_default(void);

enum HlrpStatus hlrp_summarize(const struct HlrpStream *stream,
                               enum HlrpMode mode,
                               const struct HlrpSummaryParams *params,
                               struct HlrpSummary **out);

void hlrp_summary_free(struct HlrpSummary *summary);

/**
 * Number of trajectories; 0 for a NULL handle.
 */
size_t hlrp_summary_len(const struct HlrpSummary *summary);

/**
 * Base record, importance and length of trajectory `i`. Any out pointer may be NULL.
 */
enum HlrpStatus hlrp_summary_trajectory(const struct HlrpSummary *summary,
                                        size_t i,
                                        size_t *base_out,
                                        double *importance_out,
                                        size_t *len_out);

/**
 * Copies trajectory `i`'s record indices into `indices_out` (capacity `cap`).
 */
enum HlrpStatus hlrp_summary_indices(const struct HlrpSummary *summary,
                                     size_t i,
                                     size_t *indices_out,
                                     size_t cap);

/**
 * Summary as JSON; release with `hlrp_string_free`.
 */
enum HlrpStatus hlrp_summary_json(const struct HlrpSummary *summary, char **out);

void hlrp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HIGHLIGHTS_LRP_H */
