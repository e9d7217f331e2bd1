/* C interface to the modalfuse library: synthetic audio/video datasets,
 * cross-modal transformer training with missing-modality ablations, and
 * ablation-sweep evaluation. All functions report failures through an
 * mf_status; the message of the most recent failure on the calling thread is
 * available from mf_last_error(). */
#ifndef MODALFUSE_MODALFUSE_H
#define MODALFUSE_MODALFUSE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(MODALFUSE_BUILDING)
#    define MF_API __declspec(dllexport)
#  else
#    define MF_API __declspec(dllimport)
#  endif
#else
#  define MF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values double as CLI exit codes. */
typedef enum mf_status {
  MF_OK = 0,
  MF_CHECK_FAILED = 1,
  MF_INVALID_INPUT = 2,
  MF_DIMENSION_MISMATCH = 3,
  MF_INTERNAL_ERROR = 4
} mf_status;

/* Finer classification of the last failure. */
typedef enum mf_error_kind {
  MF_ERR_NONE = 0,
  MF_ERR_DIMENSION,
  MF_ERR_INVALID_ARGUMENT,
  MF_ERR_NUMERIC,
  MF_ERR_STATE,
  MF_ERR_IO,
  MF_ERR_BAD_MAGIC,
  MF_ERR_VERSION_MISMATCH,
  MF_ERR_TRUNCATED,
  MF_ERR_SHAPE_INCONSISTENCY,
  MF_ERR_INVARIANT_VIOLATION,
  MF_ERR_INTERNAL
} mf_error_kind;

typedef struct mf_dataset mf_dataset;
typedef struct mf_model mf_model;
typedef struct mf_eval_result mf_eval_result;

typedef struct mf_clip_info {
  uint32_t id;
  uint32_t fps_video;
  uint32_t frames_video;
  uint32_t dim_video;
  uint32_t fps_audio;
  uint32_t frames_audio;
  uint32_t dim_audio;
} mf_clip_info;

typedef struct mf_sweep_row {
  char strategy[16];
  char modality[8];
  double probability;
  uint64_t seed;
  double ccc_valence;
  double ccc_arousal;
} mf_sweep_row;

typedef struct mf_gradcheck_report {
  int passed;
  double max_rel_error;
  char worst_param[128];
  size_t worst_index;
  size_t checked;
} mf_gradcheck_report;

MF_API const char* mf_version(void);
MF_API const char* mf_last_error(void);
MF_API mf_error_kind mf_last_error_kind(void);

/* Datasets. config_json is either a full run config (its "data" object is
 * used) or a bare synthetic-data object. */
MF_API mf_status mf_dataset_synthesize(const char* config_json, mf_dataset** out);
MF_API mf_status mf_dataset_load(const char* path, mf_dataset** out);
MF_API mf_status mf_dataset_save(const mf_dataset* dataset, const char* path);
MF_API size_t mf_dataset_num_clips(const mf_dataset* dataset);
MF_API mf_status mf_dataset_clip_info(const mf_dataset* dataset, size_t index, mf_clip_info* out);
MF_API void mf_dataset_free(mf_dataset* dataset);

/* Training. log_path may be NULL; otherwise a per-epoch CSV is written. */
MF_API mf_status mf_train(const char* run_config_json, const mf_dataset* dataset,
                          const char* log_path, mf_model** out);

MF_API mf_status mf_model_load(const char* path, mf_model** out);
MF_API mf_status mf_model_save(const mf_model* model, const char* path);
/* Model configuration as JSON; owned by the model. */
MF_API const char* mf_model_config_json(const mf_model* model);
/* Predictions [seq_len x 2] for one model-ready input window
 * (audio [seq_len x d_audio], video [seq_len x d_video], row-major). */
MF_API mf_status mf_model_predict(const mf_model* model, const double* audio, size_t audio_len,
                                  const double* video, size_t video_len, double* out,
                                  size_t out_len);
MF_API void mf_model_free(mf_model* model);

/* Evaluates the model's validation split of `dataset` under one corruption. */
MF_API mf_status mf_evaluate(const mf_model* model, const mf_dataset* dataset,
                             const char* strategy, const char* modality, double probability,
                             uint64_t seed, mf_eval_result** out);
MF_API size_t mf_eval_result_frames(const mf_eval_result* result);
/* Row-major [frames x 2] arrays owned by the result. */
MF_API const double* mf_eval_result_predictions(const mf_eval_result* result);
MF_API const double* mf_eval_result_labels(const mf_eval_result* result);
MF_API double mf_eval_result_ccc_valence(const mf_eval_result* result);
MF_API double mf_eval_result_ccc_arousal(const mf_eval_result* result);
MF_API void mf_eval_result_free(mf_eval_result* result);

/* rows_out must hold n_probs entries. */
MF_API mf_status mf_eval_sweep(const mf_model* model, const mf_dataset* dataset,
                               const char* strategy, const char* modality, const double* probs,
                               size_t n_probs, uint64_t seed, mf_sweep_row* rows_out);
MF_API mf_status mf_sweep_write_csv(const mf_sweep_row* rows, size_t n_rows, const char* path);
/* Default grid for a strategy; returns the count and fills up to capacity. */
MF_API size_t mf_default_grid(const char* strategy, double* out, size_t capacity);

/* Returns MF_OK when the check passes, MF_CHECK_FAILED when it does not. */
MF_API mf_status mf_gradcheck(uint64_t seed, mf_gradcheck_report* out);

/* Merges sweep CSVs (labels[i] names csv_paths[i]; a previously merged CSV
 * carries its own labels). Writes the merged CSV to out_csv when non-NULL and
 * returns the aligned text table in *table_out (free with mf_string_free). */
MF_API mf_status mf_report(const char* const* labels, const char* const* csv_paths, size_t n,
                           const char* out_csv, char** table_out);
MF_API void mf_string_free(char* s);

/* Test support: scale the backward rule of an operation (e.g. "tanh"). */
MF_API mf_status mf_debug_inject_fault(const char* op, double factor);
MF_API void mf_debug_clear_faults(void);

#ifdef __cplusplus
}
#endif

#endif /* MODALFUSE_MODALFUSE_H */
