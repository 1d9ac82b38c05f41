#ifndef GMA_UNCERTAINTY_H
#define GMA_UNCERTAINTY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GmaStatus {
  GMA_STATUS_OK = 0,
  GMA_STATUS_NULL_POINTER = 1,
  GMA_STATUS_INVALID_ARGUMENT = 2,
  GMA_STATUS_IO = 3,
  GMA_STATUS_PARSE = 4,
  GMA_STATUS_SCHEMA = 5,
  GMA_STATUS_TOPOLOGY = 6,
  GMA_STATUS_CONFIG = 7,
  GMA_STATUS_CHECKPOINT = 8,
  GMA_STATUS_NON_FINITE = 9,
  GMA_STATUS_METRIC = 10,
  GMA_STATUS_PANIC = 11,
} GmaStatus;

typedef struct GmaDataset GmaDataset;

// Trained model plus the partition it was trained with.
typedef struct GmaModel GmaModel;

// Per-clip output. `hard_label` is 1 when `p_f ≥ 0.5`.
typedef struct GmaPrediction {
  double p_f;
  uint8_t hard_label;
  double mu;
  double u_e;
  double u_a;
  double sigma2;
  double p;
} GmaPrediction;

// Split-level metrics in percent; undefined values are NaN.
typedef struct GmaMetrics {
  size_t records;
  double acc;
  double sn;
  double sp;
  double auc_roc;
  double auc_ua_epistemic;
  double auc_ua_aleatoric;
  double auc_ua_total;
} GmaMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *gma_version(void);

// Copies the calling thread's last error message into `buf` (truncated and
// NUL-terminated when `cap > 0`). Returns the full message length in bytes
// excluding the terminator.
//
// # Safety
// `buf` must be null or point to `cap` writable bytes.
size_t gma_last_error(char *buf, size_t cap);

// Loads a checkpoint file.
//
// # Safety
// `path` must be a valid C string and `out` a valid pointer.
enum GmaStatus gma_model_load(const char *path, struct GmaModel **out);

// # Safety
// `model` must be null or a handle from [`gma_model_load`] not yet freed.
void gma_model_free(struct GmaModel *model);

// Joint count of the clips the model accepts, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t gma_model_joint_count(const struct GmaModel *model);

// Embedding width D, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t gma_model_embedding_dim(const struct GmaModel *model);

// Predicts one clip given as raw coordinates.
//
// # Safety
// `model` must be a live handle, `coords` must hold `frames * joints * 2`
// doubles and `out` must be valid for writes.
enum GmaStatus gma_predict(const struct GmaModel *model,
                           const double *coords,
                           size_t frames,
                           size_t joints,
                           double fps,
                           struct GmaPrediction *out);

// Predicts a clip stored as a JSON clip file.
//
// # Safety
// `model` must be a live handle, `path` a valid C string and `out` valid for
// writes.
enum GmaStatus gma_predict_file(const struct GmaModel *model,
                                const char *path,
                                struct GmaPrediction *out);

// Mean U_a at each noise level (std multiples of the per-channel clip std).
//
// # Safety
// `coords` as for [`gma_predict`]; `levels` and `out_mean_u_a` must hold
// `n_levels` doubles.
enum GmaStatus gma_noise_probe(const struct GmaModel *model,
                               const double *coords,
                               size_t frames,
                               size_t joints,
                               double fps,
                               const double *levels,
                               size_t n_levels,
                               size_t draws,
                               double *out_mean_u_a);

// Loads a dataset directory.
//
// # Safety
// `path` must be a valid C string and `out` a valid pointer.
enum GmaStatus gma_dataset_load(const char *path, struct GmaDataset **out);

// Generates a synthetic dataset with default settings apart from the sizes
// and seed given.
//
// # Safety
// `out` must be a valid pointer.
enum GmaStatus gma_dataset_generate(size_t subjects_per_class,
                                    size_t clips_per_subject,
                                    size_t frames,
                                    uint64_t seed,
                                    struct GmaDataset **out);

// Number of clips, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t gma_dataset_len(const struct GmaDataset *dataset);

// # Safety
// `dataset` must be null or a live handle not yet freed.
void gma_dataset_free(struct GmaDataset *dataset);

// Evaluates a split (`"train"`, `"val"`, `"test"` or `"all"`) of the
// checkpoint's partition.
//
// # Safety
// Handles must be live, `split` a valid C string and `out` valid for writes.
enum GmaStatus gma_evaluate(const struct GmaModel *model,
                            const struct GmaDataset *dataset,
                            const char *split,
                            struct GmaMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GMA_UNCERTAINTY_H */
