#ifndef TREESCHED_H
#define TREESCHED_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes. Values from 100 up mirror the library error variants.
 */
typedef enum TsStatus {
  TS_OK = 0,
  TS_NULL_POINTER = 1,
  TS_INVALID_UTF8 = 2,
  TS_LENGTH_MISMATCH = 3,
  TS_PANIC = 4,
  TS_CYCLE_DETECTED = 100,
  TS_DISCONNECTED = 101,
  TS_RATE_EDGE_MISMATCH = 102,
  TS_NONPOSITIVE_RATE = 103,
  TS_INVALID_SYSTEM = 104,
  TS_NOT_CRITICALLY_LOADED = 105,
  TS_NON_BASIC_ACTIVITY = 106,
  TS_NEGATIVE_ALLOCATION = 107,
  TS_MARGIN_MISMATCH = 108,
  TS_NEGATIVE_COMPONENT = 109,
  TS_MALFORMED_STATE = 110,
  TS_HYPOTHESIS_VIOLATED = 111,
  TS_GRID_TOO_SMALL = 112,
  TS_NO_CONVERGENCE = 113,
  TS_EMPTY_NEIGHBORHOOD = 114,
  TS_STEP_TOO_LARGE = 115,
  TS_INFEASIBLE_REARRANGEMENT = 116,
  TS_INVARIANT_BROKEN = 117,
  TS_NEGATIVE_POPULATION = 118,
  TS_INVALID_CONFIG = 119,
  TS_IO_FAILURE = 120,
  TS_PARSE = 121,
} TsStatus;

/*
 An HJB solution: value function, minimizing policy and the cost it was
 solved for.
 */
typedef struct TsSolution TsSolution;

/*
 A validated system together with its static fluid solution.
 */
typedef struct TsSystem TsSystem;

/*
 Outcome of one simulated replication.
 */
typedef struct TsRunSummary {
  double cost;
  double sup_mhat;
  double sup_j;
  double sup_lambda;
  uint64_t events;
  uint64_t preemptions;
  double reconstruction_error;
  double identity_error;
} TsRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *ts_last_error(void);

/*
 Library version as a static string.
 */
const char *ts_version(void);

/*
 Parses and validates a system from JSON and solves its static fluid
 problem.

 # Safety
 `json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum TsStatus ts_system_new(const char *json, struct TsSystem **out);

/*
 # Safety
 `sys` must come from [`ts_system_new`] and not be used afterwards.
 */
void ts_system_free(struct TsSystem *sys);

/*
 Number of classes, stations and activities.

 # Safety
 `sys` must be a live handle; the output pointers may be null.
 */
enum TsStatus ts_system_dims(const struct TsSystem *sys,
                             uintptr_t *classes,
                             uintptr_t *stations,
                             uintptr_t *activities);

/*
 Fluid equilibrium `x*` (one entry per class), the radius `alpha0` and the
 flow norm constant `c_g`.

 # Safety
 `x_star` must hold `len` doubles; `alpha0` and `c_g` may be null.
 */
enum TsStatus ts_system_fluid(const struct TsSystem *sys,
                              double *x_star,
                              uintptr_t len,
                              double *alpha0,
                              double *c_g);

/*
 Activity endpoints in internal order, as zero-based class and station
 indices.

 # Safety
 `classes` and `stations` must each hold `len` entries.
 */
enum TsStatus ts_system_activities(const struct TsSystem *sys,
                                   uintptr_t *classes,
                                   uintptr_t *stations,
                                   uintptr_t len);

/*
 Solves for the activity flow with class margins `alpha` and station
 margins `beta`, writing one value per activity.

 # Safety
 Buffers must hold the stated number of doubles.
 */
enum TsStatus ts_flow_solve(const struct TsSystem *sys,
                            const double *alpha,
                            uintptr_t alpha_len,
                            const double *beta,
                            uintptr_t beta_len,
                            double *psi,
                            uintptr_t psi_len);

/*
 Rounds `y` to integers with the same (integral) sum.

 # Safety
 `y` and `out` must each hold `len` entries.
 */
enum TsStatus ts_round(const double *y, uintptr_t len, int64_t *out);

/*
 Solves the HJB equation for a cost and grid given as JSON.

 # Safety
 Strings must be NUL-terminated and `out` writable.
 */
enum TsStatus ts_hjb_solve(const struct TsSystem *sys,
                           const char *cost_json,
                           const char *grid_json,
                           struct TsSolution **out);

/*
 # Safety
 `sol` must come from [`ts_hjb_solve`] and not be used afterwards.
 */
void ts_solution_free(struct TsSolution *sol);

/*
 Interpolated value at scaled state `x`, plus the final residual and
 number of grid nodes.

 # Safety
 `x` must hold `len` doubles; `residual` and `nodes` may be null.
 */
enum TsStatus ts_solution_value(const struct TsSolution *sol,
                                const double *x,
                                uintptr_t len,
                                double *value,
                                double *residual,
                                uintptr_t *nodes);

/*
 Simulates replication `rep` of `policy` ("pstar", "pprime", "ppp",
 "priority" or "fifo") at scale `n`, started from scaled state `x`.

 The cost and the tracked policy come from `sol`. A non-positive
 `horizon` is rejected.

 # Safety
 `policy` must be NUL-terminated, `x` must hold `len` doubles and `out`
 must be writable.
 */
enum TsStatus ts_simulate(const struct TsSystem *sys,
                          const struct TsSolution *sol,
                          const char *policy,
                          uint32_t n,
                          double horizon,
                          uint64_t seed,
                          uint64_t rep,
                          const double *x,
                          uintptr_t len,
                          struct TsRunSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TREESCHED_H */
