#ifndef FLS_H
#define FLS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FlsStatus {
  FLS_STATUS_OK = 0,
  FLS_STATUS_NULL_POINTER = 1,
  FLS_STATUS_INVALID_ARGUMENT = 2,
  FLS_STATUS_JOINT_LIMIT = 3,
  FLS_STATUS_NOT_CONVERGED = 4,
  FLS_STATUS_IO = 5,
  FLS_STATUS_PARSE = 6,
  FLS_STATUS_CONFIG = 7,
  FLS_STATUS_INTERNAL = 8,
} FlsStatus;

// Kinematic chain with a remote-center port.
typedef struct FlsChain FlsChain;

// Depth bands read from a constraints file.
typedef struct FlsConstraints FlsConstraints;

// Result of an IK solve.
typedef struct FlsIkReport {
  double residual_tip;
  double residual_port;
  uint32_t iterations;
  bool converged;
} FlsIkReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message, NUL-terminated and
// truncated to `cap` bytes. Returns the full message length excluding NUL.
//
// # Safety
// `buf` must be null or point to `cap` writable bytes.
size_t fls_last_error(char *buf, size_t cap);

// Built-in seven-joint chain with default IK settings.
//
// # Safety
// `out` must be a valid pointer.
enum FlsStatus fls_chain_new_synthetic(struct FlsChain **out);

// Chain described by a JSON file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FlsStatus fls_chain_load(const char *path, struct FlsChain **out);

// # Safety
// `chain` must be null or a handle from this library, not yet freed.
void fls_chain_free(struct FlsChain *chain);

// Number of revolute joints; joint vectors hold one more value.
//
// # Safety
// `chain` must be a live handle or null (returns 0).
size_t fls_chain_dof(const struct FlsChain *chain);

// Overrides the IK tolerances (mm) and iteration cap.
//
// # Safety
// `chain` must be a live handle.
enum FlsStatus fls_chain_set_ik_tolerance(struct FlsChain *chain,
                                          double tol_tip,
                                          double tol_port,
                                          uint32_t max_iters);

// Mid-range configuration, written to `q_out` (`dof + 1` doubles).
//
// # Safety
// `chain` must be live and `q_out` must hold `dof + 1` doubles.
enum FlsStatus fls_chain_mid_configuration(const struct FlsChain *chain, double *q_out);

// Forward kinematics. `forcep_tip` and `virtual_tip` receive three doubles
// each; either may be null.
//
// # Safety
// `chain` must be live, `q` must hold `dof + 1` doubles, outputs must be null
// or hold three doubles.
enum FlsStatus fls_fk(const struct FlsChain *chain,
                      const double *q,
                      double *forcep_tip,
                      double *virtual_tip);

// Solves for joints placing the forceps tip at `target` while the shaft
// passes through `port` (the virtual tip lands on it). `q_seed` and `q_out` hold `dof + 1` doubles and may
// alias. Returns `FLS_STATUS_NOT_CONVERGED` when the tolerances are not met;
// `q_out` and `report` are filled either way.
//
// # Safety
// Pointers must be valid for the sizes above; `report` may be null.
enum FlsStatus fls_ik_solve(const struct FlsChain *chain,
                            const double *target,
                            const double *port,
                            const double *q_seed,
                            double *q_out,
                            struct FlsIkReport *report);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FlsStatus fls_constraints_read(const char *path, struct FlsConstraints **out);

// # Safety
// `c` must be null or a handle from this library, not yet freed.
void fls_constraints_free(struct FlsConstraints *c);

// # Safety
// `c` must be a live handle or null (returns 0).
size_t fls_constraints_phase_count(const struct FlsConstraints *c);

// Band `[z_lo, z_hi]` for a 1-based phase and arm (0 left, 1 right).
//
// # Safety
// `c` must be live; `z_lo` and `z_hi` must be valid pointers.
enum FlsStatus fls_constraints_band(const struct FlsConstraints *c,
                                    size_t phase,
                                    uint32_t arm,
                                    double *z_lo,
                                    double *z_hi);

// Restoring force along z for a commanded depth, `kp` in N/mm.
//
// # Safety
// `c` must be live and `force` a valid pointer.
enum FlsStatus fls_constraints_force(const struct FlsConstraints *c,
                                     size_t phase,
                                     uint32_t arm,
                                     double z_ref,
                                     double kp,
                                     double *force);

// Number of phases detected in a demonstration log.
//
// # Safety
// `path` must be a NUL-terminated string and `count` a valid pointer.
enum FlsStatus fls_detect_phases(const char *path, double threshold, size_t n_thre, size_t *count);

// Runs every stage into `out_dir`. `config` may be null for defaults;
// a nonzero `seed` replaces the master seed.
//
// # Safety
// `out_dir` must be a NUL-terminated string; `config` null or one.
enum FlsStatus fls_pipeline_run(const char *config,
                                const char *out_dir,
                                uint64_t seed,
                                bool resume);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLS_H */
