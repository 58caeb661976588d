/* C interface to the tgrag temporal graph retrieval engine. */

#ifndef TGRAG_H
#define TGRAG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of an FFI call.
 */
typedef enum TgragStatus {
  TGRAG_STATUS_OK = 0,
  /**
   * Bad input: null pointer, invalid UTF-8, unknown mode, bad config.
   */
  TGRAG_STATUS_INVALID_ARGUMENT = 1,
  TGRAG_STATUS_IO = 2,
  /**
   * Snapshot missing, truncated, or from an unsupported version.
   */
  TGRAG_STATUS_CORRUPT_SNAPSHOT = 3,
  /**
   * LLM or embedding provider failure.
   */
  TGRAG_STATUS_PROVIDER = 4,
  TGRAG_STATUS_INTERNAL = 5,
} TgragStatus;

/**
 * Opaque engine handle.
 */
typedef struct TgragEngine TgragEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failing call on this thread. The pointer is
 * valid until the next failing call on the same thread; never free it.
 */
const char *tgrag_last_error(void);

/**
 * Free a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must be a pointer previously handed out by a `tgrag_*` call and not
 * yet freed.
 */
void tgrag_string_free(char *s);

/**
 * Open an index snapshot. `config_path` may be null, in which case the
 * defaults apply (mock providers unless `TGRAG_LLM_ENDPOINT` is set).
 * On success `*out` owns the engine; release it with `tgrag_engine_close`.
 *
 * # Safety
 * `index_dir` must be a valid NUL-terminated string; `config_path` must be
 * null or valid; `out` must be a valid pointer.
 */
enum TgragStatus tgrag_engine_open(const char *index_dir,
                                   const char *config_path,
                                   struct TgragEngine **out);

/**
 * Close an engine handle. Null is a no-op.
 *
 * # Safety
 * `engine` must come from `tgrag_engine_open` and not be used afterwards.
 */
void tgrag_engine_close(struct TgragEngine *engine);

/**
 * Answer a question. `mode` is `"local"` or `"global"`; `scoring_mode` may
 * be null for the configured default. On success `*out_json` holds the
 * full answer record as JSON.
 *
 * # Safety
 * `engine` must be a live handle; string arguments as documented; out
 * pointer valid.
 */
enum TgragStatus tgrag_query(const struct TgragEngine *engine,
                             const char *question,
                             const char *mode,
                             const char *scoring_mode,
                             char **out_json);

/**
 * Index statistics as JSON.
 *
 * # Safety
 * `engine` must be a live handle; `out_json` valid.
 */
enum TgragStatus tgrag_stats(const struct TgragEngine *engine, char **out_json);

/**
 * The report text for one time node (e.g. `"2023-Q2"`), as JSON.
 *
 * # Safety
 * `engine` must be a live handle; `timestamp` a valid string; `out_json`
 * valid.
 */
enum TgragStatus tgrag_time_report(const struct TgragEngine *engine,
                                   const char *timestamp,
                                   char **out_json);

/**
 * Merge a directory of new documents into the index, persist the updated
 * snapshot, and return the update summary as JSON.
 *
 * # Safety
 * `engine` must be a live, exclusively-held handle; `docs_dir` a valid
 * string; `out_json` valid.
 */
enum TgragStatus tgrag_update_dir(struct TgragEngine *engine,
                                  const char *docs_dir,
                                  char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TGRAG_H */
