#ifndef NUDGE_ENGINE_H
#define NUDGE_ENGINE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every call.
 */
typedef enum NudgeStatus {
  NUDGE_STATUS_OK = 0,
  NUDGE_STATUS_NULL_POINTER = 1,
  NUDGE_STATUS_INVALID_UTF8 = 2,
  NUDGE_STATUS_INVALID_JSON = 3,
  NUDGE_STATUS_NOT_FOUND = 4,
  /*
   The engine refused the request: bad id, duplicate session, invalid payload.
   */
  NUDGE_STATUS_REJECTED = 5,
  NUDGE_STATUS_INTERNAL = 6,
} NudgeStatus;

/*
 Opaque engine handle.
 */
typedef struct NudgeEngine NudgeEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Builds an engine. `config_path` may be null for the shipped defaults.

 # Safety
 `config_path` is null or a valid C string; `out` is a valid pointer.
 */
enum NudgeStatus nudge_engine_new(const char *config_path, struct NudgeEngine **out);

/*
 Releases an engine. Null is ignored.

 # Safety
 `engine` is null or came from `nudge_engine_new` and is not used again.
 */
void nudge_engine_free(struct NudgeEngine *engine);

/*
 Creates a session. `request_json` may be null for an empty request.
 Writes `{"session_id": ...}`.

 # Safety
 Pointers are null or valid; strings are NUL-terminated.
 */
enum NudgeStatus nudge_session_create(const struct NudgeEngine *engine,
                                      const char *request_json,
                                      char **out_json);

/*
 Sets device and time context from `{"device", "at", "utc_offset_minutes"}`.

 # Safety
 Pointers are null or valid; strings are NUL-terminated.
 */
enum NudgeStatus nudge_session_context(const struct NudgeEngine *engine,
                                       const char *session_id,
                                       const char *context_json,
                                       char **out_json);

/*
 Ingests a JSON array of raw events as one batch.

 # Safety
 Pointers are null or valid; strings are NUL-terminated.
 */
enum NudgeStatus nudge_session_events(const struct NudgeEngine *engine,
                                      const char *session_id,
                                      const char *events_json,
                                      char **out_json);

/*
 Records one emotion frame.

 # Safety
 Pointers are null or valid; strings are NUL-terminated.
 */
enum NudgeStatus nudge_session_emotion(const struct NudgeEngine *engine,
                                       const char *session_id,
                                       const char *frame_json,
                                       char **out_json);

/*
 Runs the pipeline. `reasoner` is `"rule_based"`, `"llm_backed"` or null
 for rule-based. Writes the outcome.

 # Safety
 Pointers are null or valid; strings are NUL-terminated.
 */
enum NudgeStatus nudge_session_run(const struct NudgeEngine *engine,
                                   const char *session_id,
                                   const char *reasoner,
                                   char **out_json);

/*
 Records `{"nudge_id", "thumbs"}` feedback on a delivered nudge.

 # Safety
 Pointers are null or valid; strings are NUL-terminated.
 */
enum NudgeStatus nudge_session_feedback(const struct NudgeEngine *engine,
                                        const char *session_id,
                                        const char *feedback_json,
                                        char **out_json);

/*
 UI context of the latest delivery; `NotFound` before any delivery.

 # Safety
 Pointers are null or valid; strings are NUL-terminated.
 */
enum NudgeStatus nudge_session_ui_context(const struct NudgeEngine *engine,
                                          const char *session_id,
                                          char **out_json);

/*
 Explanation of the latest delivery; `NotFound` before any delivery.

 # Safety
 Pointers are null or valid; strings are NUL-terminated.
 */
enum NudgeStatus nudge_session_explanation(const struct NudgeEngine *engine,
                                           const char *session_id,
                                           char **out_json);

/*
 Trace records of one session, in sequence order.

 # Safety
 Pointers are null or valid; strings are NUL-terminated.
 */
enum NudgeStatus nudge_session_traces(const struct NudgeEngine *engine,
                                      const char *session_id,
                                      char **out_json);

/*
 Fairness audit over every trace the engine holds. A NaN or non-positive
 `threshold` uses the configured one.

 # Safety
 Pointers are null or valid; strings are NUL-terminated.
 */
enum NudgeStatus nudge_fairness(const struct NudgeEngine *engine,
                                const char *group_by,
                                double threshold,
                                char **out_json);

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *nudge_last_error_message(void);

/*
 Releases a string returned through an `out_json` parameter. Null is ignored.

 # Safety
 `s` is null or came from this library and is not used again.
 */
void nudge_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NUDGE_ENGINE_H */
