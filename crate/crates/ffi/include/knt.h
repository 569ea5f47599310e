#ifndef KNT_H
#define KNT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KntKernel {
  KNT_KERNEL_GAUSSIAN = 0,
  KNT_KERNEL_EXPONENTIAL = 1,
} KntKernel;

typedef enum KntModel {
  KNT_MODEL_FULL = 0,
  KNT_MODEL_KNOWN = 1,
  KNT_MODEL_KNOWN_MEAN = 2,
  KNT_MODEL_RANK = 3,
} KntModel;

typedef enum KntBootstrap {
  KNT_BOOTSTRAP_FAST = 0,
  KNT_BOOTSTRAP_SLOW = 1,
  KNT_BOOTSTRAP_BOTH = 2,
} KntBootstrap;

typedef enum KntStatus {
  KNT_STATUS_OK = 0,
  KNT_STATUS_NULL_POINTER = 1,
  KNT_STATUS_INVALID_ARGUMENT = 2,
  KNT_STATUS_INVALID_DATA = 3,
  KNT_STATUS_PRECONDITION = 4,
  KNT_STATUS_NUMERICAL = 5,
  KNT_STATUS_UNSUPPORTED = 6,
  KNT_STATUS_IO = 7,
  KNT_STATUS_PANIC = 8,
} KntStatus;

/*
 Opaque dataset handle.
 */
typedef struct KntDataset KntDataset;

/*
 Opaque test report handle.
 */
typedef struct KntReport KntReport;

/*
 Test settings. Obtain defaults from [`knt_test_config_default`].

 `sigma <= 0` selects the median heuristic. For `KNT_MODEL_KNOWN` and
 `KNT_MODEL_KNOWN_MEAN`, `known_mean` points to `known_dim` values and
 `known_cov` (known model only) to a row-major `known_dim x known_dim`
 matrix; in gram mode both are coefficients on the observations.
 */
typedef struct KntTestConfig {
  enum KntKernel kernel;
  double sigma;
  enum KntModel model;
  size_t rank;
  double alpha;
  size_t replications;
  uint64_t seed;
  enum KntBootstrap bootstrap;
  double fd_step;
  const double *known_mean;
  const double *known_cov;
  size_t known_dim;
} KntTestConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Defaults: gaussian kernel with median heuristic, full model, alpha 0.05,
 250 fast replications, seed 0, finite-difference step 1e-5.
 */
struct KntTestConfig knt_test_config_default(void);

/*
 Copy `n` row-major observations of dimension `d`.

 # Safety
 `data` must point to `n * d` doubles and `out` to writable storage for a handle.
 */
enum KntStatus knt_dataset_from_vectors(const double *data,
                                        size_t n,
                                        size_t d,
                                        struct KntDataset **out);

/*
 Copy an `n x n` row-major Gram matrix.

 # Safety
 `data` must point to `n * n` doubles and `out` to writable storage for a handle.
 */
enum KntStatus knt_dataset_from_gram(const double *data, size_t n, struct KntDataset **out);

/*
 # Safety
 `dataset` must be null or a handle from this library not yet freed.
 */
void knt_dataset_free(struct KntDataset *dataset);

/*
 Run the test on `dataset`.

 # Safety
 `dataset` must be a live handle, `config` a valid pointer (its `known_*`
 pointers as documented on [`KntTestConfig`]) and `out` writable.
 */
enum KntStatus knt_run_test(const struct KntDataset *dataset,
                            const struct KntTestConfig *config,
                            struct KntReport **out);

/*
 # Safety
 `report` must be a live handle.
 */
double knt_report_statistic(const struct KntReport *report);

/*
 # Safety
 `report` must be a live handle.
 */
double knt_report_quantile(const struct KntReport *report);

/*
 # Safety
 `report` must be a live handle.
 */
double knt_report_p_value(const struct KntReport *report);

/*
 # Safety
 `report` must be a live handle.
 */
bool knt_report_reject(const struct KntReport *report);

/*
 Borrow the decision replications; valid until the report is freed.

 # Safety
 `report` must be a live handle and `len` writable.
 */
const double *knt_report_replications(const struct KntReport *report, size_t *len);

/*
 Report as JSON; release with [`knt_string_free`]. Null on failure.

 # Safety
 `report` must be a live handle.
 */
char *knt_report_to_json(const struct KntReport *report);

/*
 # Safety
 `s` must be null or a string returned by this library not yet freed.
 */
void knt_string_free(char *s);

/*
 # Safety
 `report` must be null or a handle from this library not yet freed.
 */
void knt_report_free(struct KntReport *report);

/*
 Sequential rank selection. `alpha <= 0` uses the decreasing schedule.

 # Safety
 `dataset` must be a live handle and `r_hat` writable.
 */
enum KntStatus knt_select_rank(const struct KntDataset *dataset,
                               enum KntKernel kernel,
                               double sigma,
                               size_t r_max,
                               double alpha,
                               size_t replications,
                               uint64_t seed,
                               size_t *r_hat);

/*
 `exp(-0.125 n^0.45)`.
 */
double knt_alpha_schedule(size_t n);

/*
 Message for the last failed call on this thread, or null. Valid until the
 next call into the library from the same thread.
 */
const char *knt_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KNT_H */
