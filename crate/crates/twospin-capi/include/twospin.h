/* C interface for the twospin library. Generated; do not edit by hand. */

#ifndef TWOSPIN_H
#define TWOSPIN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every ABI call. Non-zero values match the CLI exit codes
 * for the same failure class.
 */
typedef enum TwospinStatus {
  TWOSPIN_STATUS_OK = 0,
  TWOSPIN_STATUS_NULL_ARGUMENT = 1,
  TWOSPIN_STATUS_PARSE = 2,
  TWOSPIN_STATUS_INFEASIBLE = 3,
  TWOSPIN_STATUS_NON_CONVERGENCE = 4,
  TWOSPIN_STATUS_INTERNAL = 5,
} TwospinStatus;

/**
 * Opaque gadget expression tree.
 */
typedef struct TwospinGadget TwospinGadget;

/**
 * Opaque spin-system parameters (edge weights and vertex activity).
 */
typedef struct TwospinParams TwospinParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; do not free.
 */
const char *twospin_version(void);

/**
 * Message for the most recent failure on this thread, or null. Valid
 * until the next ABI call on the same thread; do not free.
 */
const char *twospin_last_error(void);

/**
 * Releases a string returned through an `out_json` parameter.
 *
 * # Safety
 * `s` must be null or a pointer previously returned by this library.
 */
void twospin_string_free(char *s);

/**
 * Builds antiferromagnetic parameters from decimal or `p/q` strings.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be a
 * valid destination pointer.
 */
enum TwospinStatus twospin_params_new(const char *beta,
                                      const char *gamma,
                                      const char *lambda,
                                      struct TwospinParams **out);

/**
 * # Safety
 * `p` must be null or a pointer from `twospin_params_new`, freed once.
 */
void twospin_params_free(struct TwospinParams *p);

/**
 * Parses a gadget expression from its JSON form.
 *
 * # Safety
 * `json` must be null or NUL-terminated; `out` must be valid.
 */
enum TwospinStatus twospin_gadget_parse(const char *json, struct TwospinGadget **out);

/**
 * # Safety
 * `g` must be null or a pointer from `twospin_gadget_parse`, freed once.
 */
void twospin_gadget_free(struct TwospinGadget *g);

/**
 * Serializes a gadget back to its JSON form.
 *
 * # Safety
 * `g` must be a live gadget handle; `out_json` must be valid.
 */
enum TwospinStatus twospin_gadget_to_json(const struct TwospinGadget *g, char **out_json);

/**
 * Evaluates a gadget exactly: effective field `R`, magnetization gap
 * `M`, and vertex count `size`, all as exact strings.
 *
 * # Safety
 * `g` and `p` must be live handles; `out_json` must be valid.
 */
enum TwospinStatus twospin_gadget_eval(const struct TwospinGadget *g,
                                       const struct TwospinParams *p,
                                       char **out_json);

/**
 * Critical activity and interaction strength for maximum degree
 * `delta`: the hard-core uniqueness threshold and the symmetric-model
 * threshold, both exact.
 *
 * # Safety
 * `out_json` must be valid.
 */
enum TwospinStatus twospin_critical_activity(uint32_t delta, char **out_json);

/**
 * Tree-recursion fixpoint report at maximum degree `delta`: fixpoint
 * location, derivative magnitude, interaction weight, uniqueness
 * verdict, and the two-cycle points when the verdict is non-unique.
 *
 * # Safety
 * `p` must be a live handle; `out_json` must be valid.
 */
enum TwospinStatus twospin_fixpoint(const struct TwospinParams *p,
                                    uint32_t delta,
                                    uint32_t precision,
                                    char **out_json);

/**
 * Searches for `count` gadget pairs whose fields agree within
 * `tolerance` while their gaps stay separated. Mirrors the CLI
 * `find-pair` output.
 *
 * # Safety
 * `p` must be a live handle; `tolerance` must be null or
 * NUL-terminated; `out_json` must be valid.
 */
enum TwospinStatus twospin_find_pair(const struct TwospinParams *p,
                                     const char *tolerance,
                                     uint32_t count,
                                     uint32_t precision,
                                     char **out_json);

/**
 * Exact partition function and expected occupancy of a graph given as
 * JSON, by brute-force enumeration (small graphs only).
 *
 * # Safety
 * `graph_json` must be null or NUL-terminated; `p` must be a live
 * handle; `out_json` must be valid.
 */
enum TwospinStatus twospin_oracle_summary(const char *graph_json,
                                          const struct TwospinParams *p,
                                          char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TWOSPIN_H */
