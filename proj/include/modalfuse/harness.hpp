#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "modalfuse/augment.hpp"
#include "modalfuse/checkpoint.hpp"
#include "modalfuse/data.hpp"
#include "modalfuse/metrics.hpp"
#include "modalfuse/model.hpp"

namespace modalfuse {

struct TrainOptions {
  double lr = 1e-4;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  std::size_t seq_len = 100;
  std::uint64_t seed = 1;
};

struct SplitConfig {
  double train = 0.8;
  double val = 0.2;
};

struct RunConfig {
  ModelConfig model;
  // Input widths are normally taken from the data; when the config states
  // them they must agree with it.
  std::optional<std::size_t> d_audio;
  std::optional<std::size_t> d_video;
  TrainOptions train;
  AblationSpec ablation{Strategy::kNone, Modality::kVideo, 0.5, 0};
  bool ablation_seed_given = false;
  std::optional<SyntheticConfig> synthetic;
  std::optional<std::string> data_path;
  SplitConfig splits;

  void validate() const;
  // Seed of the training ablation stream (explicit, or derived from train.seed).
  std::uint64_t ablation_seed() const;
};

// Strict parse: unknown keys and out-of-range values raise
// Error(kInvalidArgument) naming the key path.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_text(const std::string& text);
nlohmann::json to_json(const RunConfig& config);

// Clip positions of each split, taken in dataset order.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
SplitIndices split_dataset(std::size_t n_clips, const SplitConfig& splits);

// Normalised, synchronised clips of one split with their window plan.
struct PreparedSplit {
  std::vector<SyncedClip> clips;
  WindowPlan plan;
};

PreparedSplit prepare_split(const Dataset& dataset, std::span<const std::size_t> positions,
                            const NormStats& stats, std::size_t seq_len, WindowMode mode);

struct EvalOutput {
  Tensor predictions;  // [N x 2], scored frames in window order
  Tensor labels;       // [N x 2]
  EvalSummary summary;
};

// Runs every window of the split, corrupting inputs with `corruption`
// (window k uses stream k), and scores each frame exactly once.
EvalOutput evaluate(const ParameterSet& params, const ModelConfig& config,
                    const PreparedSplit& split, const AblationSpec& corruption);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  EvalSummary val;
};

struct TrainResult {
  Checkpoint checkpoint;  // best validation epoch, values rounded to float32
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
};

// Throws Error(kDimension) when the config disagrees with the data.
TrainResult train_model(const RunConfig& config, const Dataset& dataset,
                        const std::function<void(const EpochLog&)>& on_epoch = {});

std::string epoch_log_header();
std::string epoch_log_row(const EpochLog& e);

NormStats norm_stats_from_checkpoint(const Checkpoint& ck);
SplitConfig splits_from_checkpoint(const Checkpoint& ck);

struct SweepResult {
  Strategy strategy = Strategy::kNone;
  Modality modality = Modality::kVideo;
  double probability = 0.0;
  std::uint64_t seed = 0;
  double ccc_valence = 0.0;
  double ccc_arousal = 0.0;
};

inline const std::vector<double> kClipGrid = {1.0, 0.7, 0.5, 0.3, 0.0};
inline const std::vector<double> kFrameGrid = {1.0, 0.95, 0.90, 0.85, 0.0};
const std::vector<double>& default_grid(Strategy strategy);

// Corrupts the checkpoint's validation split at each probability and scores it.
std::vector<SweepResult> eval_sweep(const Checkpoint& ck, const Dataset& dataset,
                                    Strategy strategy, Modality modality,
                                    std::span<const double> probabilities, std::uint64_t seed);

inline constexpr const char* kSweepCsvHeader =
    "strategy,modality,probability,seed,ccc_valence,ccc_arousal";
std::string sweep_csv(std::span<const SweepResult> rows);
// Shortest round-trip decimal form.
std::string format_number(double value);

struct GradcheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Compares reverse-mode gradients of the full training loss against central
// differences (h = 1e-5) for every element of every parameter of a small
// model (d_model 8, 6 frames, 1 layer).
GradcheckReport gradcheck(std::uint64_t seed, double tolerance = 1e-4);

struct ReportInput {
  std::string label;     // model label used for a plain sweep CSV
  std::string csv_text;  // a sweep CSV or a previously merged CSV
};

struct Report {
  std::string table;  // aligned plain text
  std::string csv;    // strategy,modality,probability,<label>.ccc_valence,<label>.ccc_arousal,...
};

// Merges on (strategy, modality, probability). Every model must cover the
// same keys; otherwise Error(kInvalidArgument) lists the missing ones.
Report merge_report(std::span<const ReportInput> inputs);

}  // namespace modalfuse
