#ifndef IGR_H
#define IGR_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define IGR_OK 0

#define IGR_INVALID_ARGUMENT 1

#define IGR_DIMENSION_MISMATCH 2

#define IGR_DIVERGENCE 3

#define IGR_FIT_REJECTED 4

#define IGR_NOT_LEAST_SQUARES 5

#define IGR_IDX 6

#define IGR_CONFIG 7

#define IGR_IO 8

#define IGR_NULL_POINTER 9

#define IGR_PANIC 10

#define IGR_ACTIVATION_RELU 0

#define IGR_ACTIVATION_TANH 1

#define IGR_TERMINATION_COMPLETED 0

#define IGR_TERMINATION_CONVERGED 1

#define IGR_TERMINATION_DIVERGED 2

#define IGR_TERMINATION_STOPPED_BY_CRITERION 3

// Inputs with labels or regression targets.
typedef struct IgrBatch IgrBatch;

// A differentiable loss.
typedef struct IgrModel IgrModel;

// Recorded rows and final state of a descent run.
typedef struct IgrTrajectory IgrTrajectory;

// Loss-surface metrics at one point.
typedef struct IgrGeometry {
  double loss;
  double r_ig;
  double lambda;
  double modified_loss;
  double slope;
  double angle;
  double metric_det;
  double normal_z;
} IgrGeometry;

// One trajectory snapshot.
typedef struct IgrRow {
  uint64_t iteration;
  double time;
  double loss;
  double r_ig;
  double slope;
  double param_norm;
} IgrRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. Valid until
// the next failing call on the same thread.
const char *igr_last_error(void);

// Two-parameter model `E(a, b) = (y − abx)²/2`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
int32_t igr_bilinear_new(double x, double y, struct IgrModel **out);

// Softmax cross-entropy MLP with layer sizes `widths[0..n_widths]`.
//
// # Safety
// `widths` must point to `n_widths` readable values; `out` must be writable.
int32_t igr_mlp_new(const uintptr_t *widths,
                    uintptr_t n_widths,
                    int32_t activation,
                    uint64_t init_seed,
                    struct IgrModel **out);

// Sum-of-squares model. `hidden == 0` selects the linear map `Θx`,
// otherwise a one-hidden-layer tanh network.
//
// # Safety
// `out` must be writable.
int32_t igr_least_squares_new(uintptr_t input_dim,
                              uintptr_t hidden,
                              uintptr_t output_dim,
                              uint64_t init_seed,
                              struct IgrModel **out);

// Number of parameters, or 0 for a NULL handle.
//
// # Safety
// `model` must be NULL or a live handle.
uintptr_t igr_model_param_count(const struct IgrModel *model);

// # Safety
// `model` must be NULL or a handle that has not been freed.
void igr_model_free(struct IgrModel *model);

// Classification batch: `inputs` is row-major `n × d`, labels in `[0, classes)`.
//
// # Safety
// `inputs` must hold `n·d` values and `labels` `n` values; `out` must be writable.
int32_t igr_batch_classes(const double *inputs,
                          uintptr_t n,
                          uintptr_t d,
                          const uintptr_t *labels,
                          uintptr_t classes,
                          struct IgrBatch **out);

// Regression batch: row-major `n × d` inputs and `n × c` targets.
//
// # Safety
// `inputs` must hold `n·d` values and `targets` `n·c`; `out` must be writable.
int32_t igr_batch_regression(const double *inputs,
                             uintptr_t n,
                             uintptr_t d,
                             const double *targets,
                             uintptr_t c,
                             struct IgrBatch **out);

// # Safety
// `batch` must be NULL or a handle that has not been freed.
void igr_batch_free(struct IgrBatch *batch);

// `E(θ)`.
//
// # Safety
// Handles must be live, `theta` must hold `m` values, `out` must be writable.
int32_t igr_loss(const struct IgrModel *model,
                 const struct IgrBatch *batch,
                 const double *theta,
                 uintptr_t m,
                 double *out);

// `∇E(θ)` into `grad_out[0..m]`.
//
// # Safety
// Handles must be live; `theta` and `grad_out` must hold `m` values.
int32_t igr_gradient(const struct IgrModel *model,
                     const struct IgrBatch *batch,
                     const double *theta,
                     uintptr_t m,
                     double *grad_out);

// Hessian-vector product `H(θ)v` into `out[0..m]`.
//
// # Safety
// Handles must be live; `theta`, `v` and `out` must hold `m` values.
int32_t igr_hvp(const struct IgrModel *model,
                const struct IgrBatch *batch,
                const double *theta,
                const double *v,
                uintptr_t m,
                double *out);

// `R_IG(θ) = ‖∇E‖²/m`.
//
// # Safety
// Handles must be live, `theta` must hold `m` values, `out` must be writable.
int32_t igr_r_ig(const struct IgrModel *model,
                 const struct IgrBatch *batch,
                 const double *theta,
                 uintptr_t m,
                 double *out);

// `E + (h/4)‖∇E‖²`.
//
// # Safety
// Handles must be live, `theta` must hold `m` values, `out` must be writable.
int32_t igr_modified_loss(const struct IgrModel *model,
                          const struct IgrBatch *batch,
                          const double *theta,
                          uintptr_t m,
                          double h,
                          double *out);

// Loss-surface geometry at `θ` for learning rate `h`.
//
// # Safety
// Handles must be live, `theta` must hold `m` values, `out` must be writable.
int32_t igr_geometry(const struct IgrModel *model,
                     const struct IgrBatch *batch,
                     const double *theta,
                     uintptr_t m,
                     double h,
                     struct IgrGeometry *out);

// Full-batch gradient descent for `max_iterations` steps, recording every
// `eval_every` iterations. A diverged run still returns `IGR_OK` with a
// trajectory whose termination is `IGR_TERMINATION_DIVERGED`.
//
// # Safety
// Handles must be live, `theta0` must hold `m` values, `out` must be writable.
int32_t igr_run_gd(const struct IgrModel *model,
                   const struct IgrBatch *batch,
                   const double *theta0,
                   uintptr_t m,
                   double h,
                   uintptr_t max_iterations,
                   uintptr_t eval_every,
                   struct IgrTrajectory **out);

// Gradient descent on `E + μ‖∇E‖²`; stops early once the update direction
// falls below `1e-10`.
//
// # Safety
// Handles must be live, `theta0` must hold `m` values, `out` must be writable.
int32_t igr_run_egr(const struct IgrModel *model,
                    const struct IgrBatch *batch,
                    const double *theta0,
                    uintptr_t m,
                    double mu,
                    double h,
                    uintptr_t max_iterations,
                    uintptr_t eval_every,
                    struct IgrTrajectory **out);

// Number of recorded rows, or 0 for a NULL handle.
//
// # Safety
// `traj` must be NULL or a live handle.
uintptr_t igr_trajectory_rows(const struct IgrTrajectory *traj);

// # Safety
// `traj` must be live and `out` writable.
int32_t igr_trajectory_row(const struct IgrTrajectory *traj, uintptr_t index, struct IgrRow *out);

// Final parameters into `out[0..m]`.
//
// # Safety
// `traj` must be live and `out` must hold `m` values.
int32_t igr_trajectory_final_params(const struct IgrTrajectory *traj, double *out, uintptr_t m);

// One of the `IGR_TERMINATION_*` values, or -1 for a NULL handle.
//
// # Safety
// `traj` must be NULL or a live handle.
int32_t igr_trajectory_termination(const struct IgrTrajectory *traj);

// # Safety
// `traj` must be NULL or a handle that has not been freed.
void igr_trajectory_free(struct IgrTrajectory *traj);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IGR_H */
