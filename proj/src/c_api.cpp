#include "modalfuse/modalfuse.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <new>
#include <string>

#include "binary_io.hpp"
#include "modalfuse/error.hpp"
#include "modalfuse/harness.hpp"

struct mf_dataset {
  modalfuse::Dataset dataset;
};

struct mf_model {
  modalfuse::Checkpoint checkpoint;
  std::string config_json;
};

struct mf_eval_result {
  modalfuse::EvalOutput output;
};

namespace {

using modalfuse::Error;
using modalfuse::ErrorKind;

thread_local std::string g_last_error;
thread_local mf_error_kind g_last_kind = MF_ERR_NONE;

mf_error_kind to_c(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return MF_ERR_DIMENSION;
    case ErrorKind::kInvalidArgument: return MF_ERR_INVALID_ARGUMENT;
    case ErrorKind::kNumeric: return MF_ERR_NUMERIC;
    case ErrorKind::kState: return MF_ERR_STATE;
    case ErrorKind::kIo: return MF_ERR_IO;
    case ErrorKind::kBadMagic: return MF_ERR_BAD_MAGIC;
    case ErrorKind::kVersionMismatch: return MF_ERR_VERSION_MISMATCH;
    case ErrorKind::kTruncated: return MF_ERR_TRUNCATED;
    case ErrorKind::kShapeInconsistency: return MF_ERR_SHAPE_INCONSISTENCY;
    case ErrorKind::kInvariantViolation: return MF_ERR_INVARIANT_VIOLATION;
  }
  return MF_ERR_INTERNAL;
}

mf_status fail(mf_status status, mf_error_kind kind, std::string message) {
  g_last_error = std::move(message);
  g_last_kind = kind;
  return status;
}

template <typename F>
mf_status guarded(F&& body) {
  try {
    g_last_error.clear();
    g_last_kind = MF_ERR_NONE;
    return body();
  } catch (const Error& e) {
    const mf_status status = e.kind() == ErrorKind::kDimension ? MF_DIMENSION_MISMATCH
                             : e.kind() == ErrorKind::kState  ? MF_INTERNAL_ERROR
                                                              : MF_INVALID_INPUT;
    return fail(status, to_c(e.kind()), std::string(to_string(e.kind())) + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(MF_INVALID_INPUT, MF_ERR_INVALID_ARGUMENT, std::string("json: ") + e.what());
  } catch (const std::bad_alloc&) {
    return fail(MF_INTERNAL_ERROR, MF_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(MF_INTERNAL_ERROR, MF_ERR_INTERNAL, e.what());
  }
}

mf_status null_argument(const char* name) {
  return fail(MF_INVALID_INPUT, MF_ERR_INVALID_ARGUMENT, std::string(name) + " is NULL");
}

nlohmann::json parse_json(const char* text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kInvalidArgument, std::string("config: invalid JSON: ") + e.what());
  }
}

mf_model* wrap(modalfuse::Checkpoint ck) {
  auto* m = new mf_model{std::move(ck), {}};
  m->config_json = modalfuse::to_json(m->checkpoint.config).dump();
  return m;
}

void copy_name(char* dst, std::size_t cap, std::string_view src) {
  const std::size_t n = std::min(cap - 1, src.size());
  std::memcpy(dst, src.data(), n);
  dst[n] = '\0';
}

}  // namespace

extern "C" {

const char* mf_version(void) { return "1.0.0"; }
const char* mf_last_error(void) { return g_last_error.c_str(); }
mf_error_kind mf_last_error_kind(void) { return g_last_kind; }

mf_status mf_dataset_synthesize(const char* config_json, mf_dataset** out) {
  if (!config_json) return null_argument("config_json");
  if (!out) return null_argument("out");
  return guarded([&] {
    const nlohmann::json j = parse_json(config_json);
    modalfuse::SyntheticConfig cfg;
    if (j.is_object() && j.contains("data")) {
      const modalfuse::RunConfig run = modalfuse::run_config_from_json(j);
      if (!run.synthetic) {
        throw Error(ErrorKind::kInvalidArgument, "data: no synthetic-data settings in config");
      }
      cfg = *run.synthetic;
    } else {
      cfg = modalfuse::synthetic_config_from_json(j);
    }
    *out = new mf_dataset{modalfuse::generate_synthetic(cfg)};
    return MF_OK;
  });
}

mf_status mf_dataset_load(const char* path, mf_dataset** out) {
  if (!path) return null_argument("path");
  if (!out) return null_argument("out");
  return guarded([&] {
    *out = new mf_dataset{modalfuse::load_dataset(path)};
    return MF_OK;
  });
}

mf_status mf_dataset_save(const mf_dataset* dataset, const char* path) {
  if (!dataset) return null_argument("dataset");
  if (!path) return null_argument("path");
  return guarded([&] {
    modalfuse::save_dataset(dataset->dataset, path);
    return MF_OK;
  });
}

size_t mf_dataset_num_clips(const mf_dataset* dataset) {
  return dataset ? dataset->dataset.clips.size() : 0;
}

mf_status mf_dataset_clip_info(const mf_dataset* dataset, size_t index, mf_clip_info* out) {
  if (!dataset) return null_argument("dataset");
  if (!out) return null_argument("out");
  if (index >= dataset->dataset.clips.size()) {
    return fail(MF_INVALID_INPUT, MF_ERR_INVALID_ARGUMENT, "clip index out of range");
  }
  const modalfuse::ClipRecord& c = dataset->dataset.clips[index];
  *out = {c.id,
          c.fps_video,
          static_cast<uint32_t>(c.video.rows()),
          static_cast<uint32_t>(c.video.cols()),
          c.fps_audio,
          static_cast<uint32_t>(c.audio.rows()),
          static_cast<uint32_t>(c.audio.cols())};
  return MF_OK;
}

void mf_dataset_free(mf_dataset* dataset) { delete dataset; }

mf_status mf_train(const char* run_config_json, const mf_dataset* dataset, const char* log_path,
                   mf_model** out) {
  if (!run_config_json) return null_argument("run_config_json");
  if (!dataset) return null_argument("dataset");
  if (!out) return null_argument("out");
  return guarded([&] {
    const modalfuse::RunConfig cfg = modalfuse::run_config_from_json(parse_json(run_config_json));
    std::ofstream log;
    if (log_path) {
      log.open(log_path, std::ios::trunc);
      if (!log) throw Error(ErrorKind::kIo, std::string("cannot open log ") + log_path);
      const std::time_t now = std::time(nullptr);
      char stamp[32];
      std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
      log << "# started " << stamp << "\n";
      log << modalfuse::epoch_log_header() << "\n" << std::flush;
    }
    modalfuse::TrainResult result =
        modalfuse::train_model(cfg, dataset->dataset, [&](const modalfuse::EpochLog& e) {
          if (log_path) log << modalfuse::epoch_log_row(e) << "\n" << std::flush;
        });
    *out = wrap(std::move(result.checkpoint));
    return MF_OK;
  });
}

mf_status mf_model_load(const char* path, mf_model** out) {
  if (!path) return null_argument("path");
  if (!out) return null_argument("out");
  return guarded([&] {
    *out = wrap(modalfuse::load_checkpoint(path));
    return MF_OK;
  });
}

mf_status mf_model_save(const mf_model* model, const char* path) {
  if (!model) return null_argument("model");
  if (!path) return null_argument("path");
  return guarded([&] {
    modalfuse::save_checkpoint(model->checkpoint, path);
    return MF_OK;
  });
}

const char* mf_model_config_json(const mf_model* model) {
  return model ? model->config_json.c_str() : nullptr;
}

mf_status mf_model_predict(const mf_model* model, const double* audio, size_t audio_len,
                           const double* video, size_t video_len, double* out, size_t out_len) {
  if (!model) return null_argument("model");
  if (!audio || !video || !out) return null_argument("buffer");
  return guarded([&] {
    const modalfuse::ModelConfig& c = model->checkpoint.config;
    if (audio_len != c.seq_len * c.d_audio || video_len != c.seq_len * c.d_video ||
        out_len != c.seq_len * 2) {
      throw Error(ErrorKind::kDimension, "predict: buffer sizes do not match the model");
    }
    const modalfuse::Tensor a({c.seq_len, c.d_audio}, std::vector<double>(audio, audio + audio_len));
    const modalfuse::Tensor v({c.seq_len, c.d_video}, std::vector<double>(video, video + video_len));
    const modalfuse::Tensor pred = modalfuse::predict(model->checkpoint.params, c, a, v);
    std::copy(pred.data().begin(), pred.data().end(), out);
    return MF_OK;
  });
}

void mf_model_free(mf_model* model) { delete model; }

mf_status mf_evaluate(const mf_model* model, const mf_dataset* dataset, const char* strategy,
                      const char* modality, double probability, uint64_t seed,
                      mf_eval_result** out) {
  if (!model) return null_argument("model");
  if (!dataset) return null_argument("dataset");
  if (!strategy || !modality) return null_argument("strategy/modality");
  if (!out) return null_argument("out");
  return guarded([&] {
    const modalfuse::Checkpoint& ck = model->checkpoint;
    const modalfuse::AblationSpec spec{modalfuse::parse_strategy(strategy),
                                       modalfuse::parse_modality(modality), probability, seed};
    spec.validate();
    const auto& clips = dataset->dataset.clips;
    for (const auto& clip : clips) {
      if (clip.audio.cols() * modalfuse::kContextFrames != ck.config.d_audio ||
          clip.video.cols() != ck.config.d_video) {
        throw Error(ErrorKind::kDimension, "dataset feature dims do not match the model");
      }
    }
    const auto splits = modalfuse::split_dataset(clips.size(), modalfuse::splits_from_checkpoint(ck));
    const auto val =
        modalfuse::prepare_split(dataset->dataset, splits.val,
                                 modalfuse::norm_stats_from_checkpoint(ck), ck.config.seq_len,
                                 modalfuse::WindowMode::kEval);
    *out = new mf_eval_result{modalfuse::evaluate(ck.params, ck.config, val, spec)};
    return MF_OK;
  });
}

size_t mf_eval_result_frames(const mf_eval_result* r) { return r ? r->output.summary.n_frames : 0; }
const double* mf_eval_result_predictions(const mf_eval_result* r) {
  return r ? r->output.predictions.data().data() : nullptr;
}
const double* mf_eval_result_labels(const mf_eval_result* r) {
  return r ? r->output.labels.data().data() : nullptr;
}
double mf_eval_result_ccc_valence(const mf_eval_result* r) {
  return r ? r->output.summary.ccc_valence : 0.0;
}
double mf_eval_result_ccc_arousal(const mf_eval_result* r) {
  return r ? r->output.summary.ccc_arousal : 0.0;
}
void mf_eval_result_free(mf_eval_result* r) { delete r; }

mf_status mf_eval_sweep(const mf_model* model, const mf_dataset* dataset, const char* strategy,
                        const char* modality, const double* probs, size_t n_probs, uint64_t seed,
                        mf_sweep_row* rows_out) {
  if (!model) return null_argument("model");
  if (!dataset) return null_argument("dataset");
  if (!strategy || !modality) return null_argument("strategy/modality");
  if (!probs || !rows_out) return null_argument("probs/rows_out");
  return guarded([&] {
    const auto rows = modalfuse::eval_sweep(
        model->checkpoint, dataset->dataset, modalfuse::parse_strategy(strategy),
        modalfuse::parse_modality(modality), std::span<const double>(probs, n_probs), seed);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      mf_sweep_row& r = rows_out[i];
      copy_name(r.strategy, sizeof r.strategy, modalfuse::to_string(rows[i].strategy));
      copy_name(r.modality, sizeof r.modality, modalfuse::to_string(rows[i].modality));
      r.probability = rows[i].probability;
      r.seed = rows[i].seed;
      r.ccc_valence = rows[i].ccc_valence;
      r.ccc_arousal = rows[i].ccc_arousal;
    }
    return MF_OK;
  });
}

mf_status mf_sweep_write_csv(const mf_sweep_row* rows, size_t n_rows, const char* path) {
  if (!rows && n_rows) return null_argument("rows");
  if (!path) return null_argument("path");
  return guarded([&] {
    std::vector<modalfuse::SweepResult> results;
    for (std::size_t i = 0; i < n_rows; ++i) {
      results.push_back({modalfuse::parse_strategy(rows[i].strategy),
                         modalfuse::parse_modality(rows[i].modality), rows[i].probability,
                         rows[i].seed, rows[i].ccc_valence, rows[i].ccc_arousal});
    }
    modalfuse::detail::write_file(path, modalfuse::sweep_csv(results));
    return MF_OK;
  });
}

size_t mf_default_grid(const char* strategy, double* out, size_t capacity) {
  modalfuse::Strategy s = modalfuse::Strategy::kFrameZero;
  try {
    if (strategy) s = modalfuse::parse_strategy(strategy);
  } catch (const Error&) {
    return 0;
  }
  const auto& grid = modalfuse::default_grid(s);
  for (std::size_t i = 0; i < grid.size() && i < capacity && out; ++i) out[i] = grid[i];
  return grid.size();
}

mf_status mf_gradcheck(uint64_t seed, mf_gradcheck_report* out) {
  if (!out) return null_argument("out");
  return guarded([&] {
    const modalfuse::GradcheckReport r = modalfuse::gradcheck(seed);
    out->passed = r.passed ? 1 : 0;
    out->max_rel_error = r.max_rel_error;
    copy_name(out->worst_param, sizeof out->worst_param, r.worst_param);
    out->worst_index = r.worst_index;
    out->checked = r.checked;
    if (!r.passed) {
      return fail(MF_CHECK_FAILED, MF_ERR_NONE,
                  "gradient check failed: worst parameter " + r.worst_param + " [" +
                      std::to_string(r.worst_index) + "] relative error " +
                      modalfuse::format_number(r.max_rel_error));
    }
    return MF_OK;
  });
}

mf_status mf_report(const char* const* labels, const char* const* csv_paths, size_t n,
                    const char* out_csv, char** table_out) {
  if (!csv_paths || !labels) return null_argument("labels/csv_paths");
  return guarded([&] {
    std::vector<modalfuse::ReportInput> inputs;
    for (std::size_t i = 0; i < n; ++i) {
      if (!csv_paths[i] || !labels[i]) throw Error(ErrorKind::kInvalidArgument, "NULL path or label");
      inputs.push_back({labels[i], modalfuse::detail::read_file(csv_paths[i])});
    }
    const modalfuse::Report report = modalfuse::merge_report(inputs);
    if (out_csv) modalfuse::detail::write_file(out_csv, report.csv);
    if (table_out) {
      *table_out = static_cast<char*>(std::malloc(report.table.size() + 1));
      if (!*table_out) throw std::bad_alloc();
      std::memcpy(*table_out, report.table.c_str(), report.table.size() + 1);
    }
    return MF_OK;
  });
}

void mf_string_free(char* s) { std::free(s); }

mf_status mf_debug_inject_fault(const char* op, double factor) {
  if (!op) return null_argument("op");
  modalfuse::ad::testing::inject_backward_fault(op, factor);
  return MF_OK;
}

void mf_debug_clear_faults(void) { modalfuse::ad::testing::clear_backward_faults(); }

}  // extern "C"
