#ifndef LUNAR_RDV_H
#define LUNAR_RDV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Number of values in one run-log row, in CSV column order.
#define LRDV_ROW_LEN 14

typedef enum LrdvStatus {
  LRDV_STATUS_OK = 0,
  LRDV_STATUS_NULL_POINTER = 1,
  LRDV_STATUS_INVALID_ARGUMENT = 2,
  LRDV_STATUS_CONFIG = 3,
  LRDV_STATUS_SOLVER = 4,
  LRDV_STATUS_IO = 5,
  LRDV_STATUS_PANIC = 6,
  LRDV_STATUS_BUFFER_TOO_SMALL = 7,
} LrdvStatus;

typedef enum LrdvTermination {
  LRDV_TERMINATION_CONVERGED = 0,
  LRDV_TERMINATION_MAX_DURATION = 1,
  LRDV_TERMINATION_FAILED = 2,
} LrdvTermination;

typedef struct LrdvOrbit LrdvOrbit;

typedef struct LrdvRun LrdvRun;

typedef struct LrdvScenario LrdvScenario;

typedef struct LrdvSystem LrdvSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *lrdv_version(void);

// Length in bytes of the last error message on this thread, including
// the terminating NUL; 0 when there is none.
size_t lrdv_last_error_length(void);

// Copies the last error message into `buf`. Returns `BufferTooSmall`
// (writing a truncated, terminated message) when `len` is too short.
//
// # Safety
// `buf` must be valid for `len` bytes.
enum LrdvStatus lrdv_last_error_message(char *buf, size_t len);

// # Safety
// `out` must be a valid pointer.
enum LrdvStatus lrdv_system_new(double mu,
                                double length_unit_km,
                                double period_s,
                                struct LrdvSystem **out);

// # Safety
// `out` must be a valid pointer.
enum LrdvStatus lrdv_system_earth_moon(struct LrdvSystem **out);

// # Safety
// `sys` must come from this library and not be used afterwards. Null is ignored.
void lrdv_system_free(struct LrdvSystem *sys);

// Jacobi integral of a normalized synodic state `[x, y, z, vx, vy, vz]`.
//
// # Safety
// `state` must hold 6 values; `out` must be valid.
enum LrdvStatus lrdv_system_jacobi(const struct LrdvSystem *sys, const double *state, double *out);

// Synodic acceleration of a normalized state, written to `out[3]`.
//
// # Safety
// `state` must hold 6 values and `out` 3.
enum LrdvStatus lrdv_system_accel(const struct LrdvSystem *sys, const double *state, double *out);

// Propagates a normalized state for `duration` time units at relative and
// absolute tolerance `tolerance`, writing the final state to `out[6]`.
//
// # Safety
// `state` and `out` must hold 6 values.
enum LrdvStatus lrdv_system_propagate(const struct LrdvSystem *sys,
                                      const double *state,
                                      double duration,
                                      double tolerance,
                                      double *out);

// Default NRHO of the Earth-Moon scenario, corrected in `sys`.
//
// # Safety
// `out` must be valid.
enum LrdvStatus lrdv_orbit_default(const struct LrdvSystem *sys, struct LrdvOrbit **out);

// Loads a trajectory file written by the library.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid.
enum LrdvStatus lrdv_orbit_load(const struct LrdvSystem *sys,
                                const char *path,
                                struct LrdvOrbit **out);

// # Safety
// `orbit` must come from this library and not be used afterwards. Null is ignored.
void lrdv_orbit_free(struct LrdvOrbit *orbit);

// Normalized period.
//
// # Safety
// `out` must be valid.
enum LrdvStatus lrdv_orbit_period(const struct LrdvOrbit *orbit, double *out);

// Normalized state at `epoch` (wrapped into the period), written to `out[6]`.
//
// # Safety
// `out` must hold 6 values.
enum LrdvStatus lrdv_orbit_state_at(const struct LrdvOrbit *orbit, double epoch, double *out);

// Parses and validates a scenario file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid.
enum LrdvStatus lrdv_scenario_load(const char *path, struct LrdvScenario **out);

// Built-in rendezvous scenario with all defaults.
//
// # Safety
// `out` must be valid.
enum LrdvStatus lrdv_scenario_default(struct LrdvScenario **out);

// Caps the simulated duration, in seconds.
//
// # Safety
// `scenario` must be a live handle.
enum LrdvStatus lrdv_scenario_set_max_duration(struct LrdvScenario *scenario, double seconds);

// # Safety
// `scenario` must come from this library and not be used afterwards. Null is ignored.
void lrdv_scenario_free(struct LrdvScenario *scenario);

// Runs the closed loop. With a non-null `out_dir` the result files are
// written there as well. A run stopped by a solver failure still yields a
// handle; check [`lrdv_run_termination`].
//
// # Safety
// `out_dir` must be null or a NUL-terminated string; `out` must be valid.
enum LrdvStatus lrdv_run(const struct LrdvScenario *scenario,
                         const char *out_dir,
                         struct LrdvRun **out);

// # Safety
// `run` must come from this library and not be used afterwards. Null is ignored.
void lrdv_run_free(struct LrdvRun *run);

// Number of logged samples; 0 for a null handle.
//
// # Safety
// `run` must be null or a live handle.
size_t lrdv_run_row_count(const struct LrdvRun *run);

// Writes row `index` into `out[LRDV_ROW_LEN]` in CSV column order.
//
// # Safety
// `out` must hold `LRDV_ROW_LEN` values.
enum LrdvStatus lrdv_run_row(const struct LrdvRun *run, size_t index, double *out);

// Cumulative impulse, m/s.
//
// # Safety
// `out` must be valid.
enum LrdvStatus lrdv_run_impulse(const struct LrdvRun *run, double *out);

// # Safety
// `out` must be valid.
enum LrdvStatus lrdv_run_termination(const struct LrdvRun *run, enum LrdvTermination *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LUNAR_RDV_H */
