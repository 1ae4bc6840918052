#ifndef TRANSGP_H
#define TRANSGP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum TgStatus {
  TG_STATUS_OK = 0,
  /*
   Bad dimensions, indices or parameter values, or an asymmetric or
   edgeless graph where one is not allowed.
   */
  TG_STATUS_INVALID_ARGUMENT = 1,
  TG_STATUS_NULL_POINTER = 2,
  /*
   Conditioning failure, singular regularizer or violated invariant.
   */
  TG_STATUS_NUMERICAL = 3,
  /*
   Missing or malformed dataset files, disconnected generated graph.
   */
  TG_STATUS_DATA = 4,
  /*
   Invalid experiment config.
   */
  TG_STATUS_CONFIG = 5,
  /*
   A Rust panic was caught at the boundary.
   */
  TG_STATUS_PANIC = 6,
} TgStatus;

typedef enum TgBaseKernel {
  TG_BASE_KERNEL_NONE = 0,
  TG_BASE_KERNEL_RBF = 1,
  TG_BASE_KERNEL_MATERN12 = 2,
} TgBaseKernel;

typedef enum TgRegularizer {
  TG_REGULARIZER_NONE = 0,
  TG_REGULARIZER_REGULARIZED_LAPLACIAN = 1,
  TG_REGULARIZER_DIFFUSION = 2,
  TG_REGULARIZER_P_STEP_RANDOM_WALK = 3,
  TG_REGULARIZER_COSINE = 4,
  TG_REGULARIZER_GRAPH_MATERN = 5,
  TG_REGULARIZER_SOFTPLUS_POLYNOMIAL = 6,
} TgRegularizer;

/*
 Opaque dataset handle.
 */
typedef struct TgDataset TgDataset;

/*
 Opaque graph handle.
 */
typedef struct TgGraph TgGraph;

/*
 Opaque Laplacian spectrum handle.
 */
typedef struct TgSpectrum TgSpectrum;

/*
 Kernel description; the combination mode follows from which parts are
 present.
 */
typedef struct TgKernelSpec {
  enum TgBaseKernel base;
  enum TgRegularizer regularizer;
  /*
   Polynomial degree for `TG_REGULARIZER_SOFTPLUS_POLYNOMIAL`.
   */
  uintptr_t degree;
} TgKernelSpec;

/*
 Hyperparameters in natural (not log) units.
 */
typedef struct TgHyperParams {
  double sigma1_sq;
  double lengthscale;
  double sigma2_sq;
  double noise_sq;
  double alpha;
  double sigma_diff;
  uint32_t p_steps;
  double nu;
  double kappa;
  /*
   `beta_count` polynomial coefficients, lowest order first; may be null
   when `beta_count` is zero.
   */
  const double *betas;
  uintptr_t beta_count;
} TgHyperParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *tg_version(void);

/*
 Message for the last failed call on this thread, empty after a success.
 Valid until the next call into the library from the same thread.
 */
const char *tg_last_error(void);

/*
 Releases a string returned by the library.
 */
void tg_string_free(char *s);

/*
 Graph from a row-major `n x n` symmetric nonnegative adjacency matrix.
 */
enum TgStatus tg_graph_from_adjacency(const double *adjacency, uintptr_t n, struct TgGraph **out);

/*
 Unweighted union-symmetrized `k`-nearest-neighbour graph over the rows of
 a row-major `n x m` feature matrix.
 */
enum TgStatus tg_graph_knn(const double *features,
                           uintptr_t n,
                           uintptr_t m,
                           uintptr_t k,
                           struct TgGraph **out);

uintptr_t tg_graph_node_count(const struct TgGraph *g);

uintptr_t tg_graph_edge_count(const struct TgGraph *g);

/*
 Copies the row-major adjacency matrix into `out` (`n * n` doubles).
 */
enum TgStatus tg_graph_adjacency(const struct TgGraph *g, double *out, uintptr_t len);

/*
 Fraction of edges whose endpoints share a label.
 */
enum TgStatus tg_graph_homophily(const struct TgGraph *g,
                                 const uintptr_t *labels,
                                 uintptr_t n,
                                 double *out);

void tg_graph_free(struct TgGraph *g);

/*
 Eigendecomposition of the graph's normalized Laplacian.
 */
enum TgStatus tg_spectrum_new(const struct TgGraph *g, struct TgSpectrum **out);

/*
 Copies the ascending eigenvalues into `out` (`len` must equal the node
 count).
 */
enum TgStatus tg_spectrum_eigenvalues(const struct TgSpectrum *s, double *out, uintptr_t len);

void tg_spectrum_free(struct TgSpectrum *s);

/*
 Full `n x n` kernel over all nodes, written row-major into `out`.

 `features` is row-major `n x m` and may be null for graph-only specs;
 `spectrum` may be null for feature-only specs.
 */
enum TgStatus tg_kernel_matrix(const struct TgKernelSpec *spec,
                               const struct TgHyperParams *hp,
                               const double *features,
                               uintptr_t n,
                               uintptr_t m,
                               const struct TgSpectrum *spectrum,
                               double *out);

/*
 GP posterior at `test` given row-major `n_train x c` targets at `train`.
 Writes `n_test x c` means, `n_test` variances and the log marginal
 likelihood.
 */
enum TgStatus tg_gp_posterior(const double *kernel,
                              uintptr_t n,
                              const uintptr_t *train,
                              uintptr_t n_train,
                              const uintptr_t *test,
                              uintptr_t n_test,
                              const double *targets,
                              uintptr_t c,
                              double noise_sq,
                              double *mean_out,
                              double *var_out,
                              double *lml_out);

/*
 Reads a dataset directory.
 */
enum TgStatus tg_dataset_load(const char *dir, struct TgDataset **out);

/*
 Samples a connected Swiss-roll dataset.
 */
enum TgStatus tg_dataset_swiss_roll(uintptr_t n,
                                    uintptr_t k,
                                    double noise,
                                    uint64_t seed,
                                    struct TgDataset **out);

uintptr_t tg_dataset_node_count(const struct TgDataset *ds);

uintptr_t tg_dataset_feature_count(const struct TgDataset *ds);

/*
 Copies the dataset's graph into a new handle.
 */
enum TgStatus tg_dataset_graph(const struct TgDataset *ds, struct TgGraph **out);

/*
 Copies the row-major `n x m` feature matrix into `out`.
 */
enum TgStatus tg_dataset_features(const struct TgDataset *ds, double *out, uintptr_t len);

void tg_dataset_free(struct TgDataset *ds);

/*
 Runs the experiment described by a TOML config file and returns its
 report as JSON in `*json_out` (free with [`tg_string_free`]). No files
 are written.
 */
enum TgStatus tg_run_experiment(const char *config_path, char **json_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRANSGP_H */
