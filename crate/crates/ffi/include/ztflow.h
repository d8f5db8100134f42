#ifndef ZTFLOW_H
#define ZTFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ZtStatus {
  ZT_STATUS_OK = 0,
  ZT_STATUS_NULL_ARGUMENT = 1,
  ZT_STATUS_INVALID_UTF8 = 2,
  /**
   * Input could not be parsed (JSON, method, fault, enforcement point).
   */
  ZT_STATUS_PARSE = 3,
  /**
   * Input parsed but was rejected, such as a workflow with a cycle.
   */
  ZT_STATUS_INVALID = 4,
  /**
   * Deployment or the sweep failed.
   */
  ZT_STATUS_SIMULATION = 5,
  /**
   * Samples too small or without variance.
   */
  ZT_STATUS_STATS = 6,
  ZT_STATUS_PANIC = 7,
} ZtStatus;

typedef enum ZtVerdict {
  ZT_VERDICT_DENY = 0,
  ZT_VERDICT_ALLOW = 1,
} ZtVerdict;

/**
 * Compiled policy. Opaque to C.
 */
typedef struct ZtPolicy ZtPolicy;

typedef struct ZtTTest {
  double t;
  uint64_t df;
  double p;
  double cohen_d;
} ZtTTest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call into the library from the same thread.
 */
const char *zt_last_error(void);

/**
 * Library version as a static string.
 */
const char *zt_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void zt_string_free(char *s);

/**
 * Parses and validates a policy document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum ZtStatus zt_policy_from_json(const char *json, struct ZtPolicy **out);

/**
 * Compiles a workflow into a default-deny policy granting `method` on
 * `path_template` (with `{dst}` replaced by the destination) for each edge.
 *
 * # Safety
 * All strings must be NUL-terminated; `out` must be writable.
 */
enum ZtStatus zt_policy_compile(const char *workflow_json,
                                const char *method,
                                const char *path_template,
                                struct ZtPolicy **out);

/**
 * # Safety
 * `policy` must be null or a live handle; `out` must be writable.
 */
enum ZtStatus zt_policy_to_json(const struct ZtPolicy *policy, char **out);

/**
 * Number of permission lines in the policy, or 0 for a null handle.
 *
 * # Safety
 * `policy` must be null or a live handle.
 */
size_t zt_policy_permission_count(const struct ZtPolicy *policy);

/**
 * Decides a request from `user` at `clock_hour`. `out_reason` may be null;
 * otherwise it receives a string to free with `zt_string_free`.
 *
 * # Safety
 * Strings must be NUL-terminated; `policy` must be a live handle.
 */
enum ZtStatus zt_policy_evaluate(const struct ZtPolicy *policy,
                                 const char *user,
                                 const char *method,
                                 const char *path,
                                 uint8_t clock_hour,
                                 enum ZtVerdict *out_verdict,
                                 char **out_reason);

/**
 * # Safety
 * `policy` must be null or a handle not yet freed.
 */
void zt_policy_free(struct ZtPolicy *policy);

/**
 * Capture checks an exhaustive sweep needs: every case checks both
 * interfaces of every pod.
 */
uint64_t zt_required_capture_count(uint64_t services, uint64_t methods);

/**
 * Pooled-variance two-sample t-test of `a` against `b`.
 *
 * # Safety
 * `a` and `b` must point to `na` and `nb` readable doubles.
 */
enum ZtStatus zt_t_test(const double *a,
                        size_t na,
                        const double *b,
                        size_t nb,
                        struct ZtTTest *out);

/**
 * Deploys the workflow under `policy`, injects the newline-separated
 * `faults` (may be null), sweeps every communication with GET and POST
 * and writes the verification report as JSON to `out_report`.
 * `enforcement` is "source", "destination" or "both"; null means source.
 *
 * # Safety
 * Strings must be NUL-terminated or null where allowed; `out_report`
 * must be writable.
 */
enum ZtStatus zt_verify_sweep(const char *workflow_json,
                              const struct ZtPolicy *policy,
                              const char *path_template,
                              const char *enforcement,
                              const char *faults,
                              uint64_t seed,
                              char **out_report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ZTFLOW_H */
