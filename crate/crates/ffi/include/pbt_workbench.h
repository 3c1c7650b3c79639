#ifndef PBT_WORKBENCH_H
#define PBT_WORKBENCH_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Version of this ABI. Bumped on any incompatible change.
 */
#define PBT_ABI_VERSION 1

typedef enum PbtStatus {
  PBT_STATUS_OK = 0,
  PBT_STATUS_NULL_ARGUMENT = 1,
  PBT_STATUS_INVALID_UTF8 = 2,
  PBT_STATUS_INVALID_JSON = 3,
  PBT_STATUS_PROMPT_ERROR = 4,
  PBT_STATUS_NO_CODE_FOUND = 5,
  PBT_STATUS_ASSEMBLY_ERROR = 6,
  PBT_STATUS_METRICS_ERROR = 7,
  PBT_STATUS_TEMPLATE_IO = 8,
  PBT_STATUS_PANIC = 9,
} PbtStatus;

/**
 * Opaque set of prompt templates.
 */
typedef struct PbtTemplateSet PbtTemplateSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

uint32_t pbt_abi_version(void);

/**
 * Message of the last failed call on this thread, or null. Owned by the
 * library; valid until the next call on the same thread.
 */
const char *pbt_last_error_message(void);

/**
 * # Safety
 * `s` is null or a string returned by this library and not yet freed.
 */
void pbt_string_free(char *s);

/**
 * The built-in templates. Release with [`pbt_templates_free`].
 */
struct PbtTemplateSet *pbt_templates_builtin(void);

/**
 * Built-in templates overridden by the `*.txt` files in `dir`.
 *
 * # Safety
 * `dir` is a NUL-terminated string; `out` is valid for one pointer write.
 */
enum PbtStatus pbt_templates_load(const char *dir, struct PbtTemplateSet **out);

/**
 * # Safety
 * `set` is null or a handle from this library not yet freed.
 */
void pbt_templates_free(struct PbtTemplateSet *set);

/**
 * Renders the synthesis prompt for a target and task, both JSON, into a
 * JSON array of `{role, text}` messages.
 *
 * # Safety
 * Pointers are valid for the call; `out` is valid for one pointer write.
 */
enum PbtStatus pbt_build_synthesis_prompt(const struct PbtTemplateSet *templates_set,
                                          const char *target_json,
                                          const char *task_json,
                                          char **out_json);

/**
 * Renders the user message for a mitigation action given as JSON
 * `{kind, context}`. `qualname` may be null.
 *
 * # Safety
 * Pointers are valid for the call; `out` is valid for one pointer write.
 */
enum PbtStatus pbt_build_mitigation_prompt(const struct PbtTemplateSet *templates_set,
                                           const char *action_json,
                                           const char *artifact_name,
                                           const char *qualname,
                                           char **out_json);

/**
 * Extracts the code from a model reply as plain text.
 *
 * # Safety
 * `reply` is a NUL-terminated string; `out` is valid for one pointer write.
 */
enum PbtStatus pbt_extract_code(const char *reply, char **out_source);

/**
 * Lists the assertions of a properties block as a JSON array.
 *
 * # Safety
 * `props` is a NUL-terminated string; `out` is valid for one pointer write.
 */
enum PbtStatus pbt_enumerate_properties(const char *props, char **out_json);

/**
 * Scores one evaluation. Input JSON: `{report, mutants?, mutant_results?,
 * generator_name?, thresholds?, evaluation_index?}`; mutation is scored
 * only when `mutants` is present. Output: the scorecard as JSON.
 *
 * # Safety
 * `request_json` is a NUL-terminated string; `out` is valid for one
 * pointer write.
 */
enum PbtStatus pbt_compute_scorecard(const char *request_json, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PBT_WORKBENCH_H */
