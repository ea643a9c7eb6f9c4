#ifndef QDP_H
#define QDP_H

/* Generated by cbindgen from the qdp-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum QdpStatus {
  QDP_STATUS_OK = 0,
  /**
   * Bad arguments, unreadable files, or malformed configuration.
   */
  QDP_STATUS_USAGE = 1,
  /**
   * A numerical invariant or domain contract failed.
   */
  QDP_STATUS_INVARIANT = 2,
  /**
   * A resource guard refused the computation.
   */
  QDP_STATUS_GUARD = 3,
} QdpStatus;

/**
 * An instance handle: the resolved pricing model.
 */
typedef struct QdpModel QdpModel;

/**
 * A policy handle: a state-partitioned tabular policy over the counters.
 */
typedef struct QdpPolicy QdpPolicy;

/**
 * Objective decomposition of a policy evaluation.
 */
typedef struct QdpValue {
  double total;
  double revenue;
  double waiting;
  double penalty;
  double terminal_cost;
} QdpValue;

/**
 * Monte Carlo summary of a simulated policy.
 */
typedef struct QdpSimSummary {
  double mean;
  double revenue;
  double waiting;
  double terminal;
  double std_error;
  double ci_halfwidth;
  double max_violation;
  uint64_t reps;
} QdpSimSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the most recent error on this thread into `buf`
 * (NUL-terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null (then only the
 * length is returned).
 */
uintptr_t qdp_last_error_message(char *buf, uintptr_t len);

/**
 * Parses a TOML instance configuration into a model handle. Returns null
 * on failure (see `qdp_last_error_message`).
 *
 * # Safety
 * `text` must be a NUL-terminated string.
 */
struct QdpModel *qdp_model_parse(const char *text);

/**
 * Loads a TOML instance configuration file. Returns null on failure.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
struct QdpModel *qdp_model_load(const char *path);

/**
 * Frees a model handle (null is a no-op).
 *
 * # Safety
 * `model` must have been returned by a `qdp_model_*` constructor and not
 * freed before.
 */
void qdp_model_free(struct QdpModel *model);

/**
 * Number of counter values (experts) of the instance.
 *
 * # Safety
 * `model` must be a live handle.
 */
uintptr_t qdp_model_counters(const struct QdpModel *model);

/**
 * Number of decision epochs of the instance.
 *
 * # Safety
 * `model` must be a live handle.
 */
uintptr_t qdp_model_horizon(const struct QdpModel *model);

/**
 * Number of grid prices (actions) of the instance.
 *
 * # Safety
 * `model` must be a live handle.
 */
uintptr_t qdp_model_actions(const struct QdpModel *model);

/**
 * Trains a policy with exponentiated Q-ascent and writes a policy handle
 * to `out`. `max_episodes = 0` uses the default cap.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum QdpStatus qdp_train(const struct QdpModel *model,
                         double eta,
                         double epsilon,
                         uint64_t max_episodes,
                         bool adaptive,
                         struct QdpPolicy **out);

/**
 * Frees a policy handle (null is a no-op).
 *
 * # Safety
 * `policy` must have been returned by this library and not freed before.
 */
void qdp_policy_free(struct QdpPolicy *policy);

/**
 * Replaces each action pmf by a point mass on its mode (ties toward the
 * lowest price index), returning a new handle.
 *
 * # Safety
 * `policy` must be a live handle.
 */
struct QdpPolicy *qdp_policy_to_pure(const struct QdpPolicy *policy);

/**
 * The modal price index of cell `(t, z)`.
 *
 * # Safety
 * `model` and `policy` must be live handles.
 */
enum QdpStatus qdp_policy_action(const struct QdpPolicy *policy,
                                 uintptr_t t,
                                 uintptr_t z,
                                 uintptr_t *out);

/**
 * Saves a policy in the structured text format.
 *
 * # Safety
 * `policy` must be a live handle; `path` a NUL-terminated string.
 */
enum QdpStatus qdp_policy_save(const struct QdpPolicy *policy, const char *path);

/**
 * Loads a structured-text policy file against an instance.
 *
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string; `out`
 * writable.
 */
enum QdpStatus qdp_policy_load(const struct QdpModel *model,
                               const char *path,
                               struct QdpPolicy **out);

/**
 * Evaluates a policy with the deterministic forward scheme.
 *
 * # Safety
 * `model` and `policy` must be live handles; `out` writable.
 */
enum QdpStatus qdp_eval(const struct QdpModel *model,
                        const struct QdpPolicy *policy,
                        struct QdpValue *out);

/**
 * Simulates the modal (pure) projection of a policy for `reps`
 * replications with stream-keyed randomness.
 *
 * # Safety
 * `model` and `policy` must be live handles; `out` writable.
 */
enum QdpStatus qdp_simulate(const struct QdpModel *model,
                            const struct QdpPolicy *policy,
                            uint64_t reps,
                            uint64_t seed,
                            struct QdpSimSummary *out);

/**
 * ABI version of this library.
 */
int qdp_abi_version(void);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* QDP_H */
