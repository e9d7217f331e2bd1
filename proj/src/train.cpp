#include <algorithm>
#include <cmath>
#include <limits>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "modalfuse/adam.hpp"
#include "modalfuse/error.hpp"
#include "modalfuse/harness.hpp"
#include "modalfuse/rng.hpp"

namespace modalfuse {

namespace {

// Stream indices under train.seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStreamBase = 1000;
// Windows per forward pass during evaluation.
constexpr std::size_t kEvalBatch = 16;

struct InputDims {
  std::size_t audio_lld = 0;
  std::size_t video = 0;
};

InputDims dataset_dims(const Dataset& ds) {
  if (ds.clips.empty()) throw Error(ErrorKind::kInvalidArgument, "dataset has no clips");
  InputDims dims{ds.clips[0].audio.cols(), ds.clips[0].video.cols()};
  for (const ClipRecord& clip : ds.clips) {
    if (clip.audio.cols() != dims.audio_lld || clip.video.cols() != dims.video) {
      throw Error(ErrorKind::kDimension,
                  "clip " + std::to_string(clip.id) + " has feature dims " +
                      std::to_string(clip.audio.cols()) + "/" + std::to_string(clip.video.cols()) +
                      ", expected " + std::to_string(dims.audio_lld) + "/" +
                      std::to_string(dims.video));
    }
  }
  return dims;
}

void check_dims(const ModelConfig& mc, const InputDims& dims) {
  if (mc.d_audio != dims.audio_lld * kContextFrames || mc.d_video != dims.video) {
    throw Error(ErrorKind::kDimension,
                "model expects audio/video widths " + std::to_string(mc.d_audio) + "/" +
                    std::to_string(mc.d_video) + " but data gives " +
                    std::to_string(dims.audio_lld * kContextFrames) + "/" +
                    std::to_string(dims.video) + " (" + std::to_string(dims.audio_lld) +
                    " audio descriptors x " + std::to_string(kContextFrames) + " context frames)");
  }
}

std::vector<const ClipRecord*> select(const Dataset& ds, std::span<const std::size_t> positions) {
  std::vector<const ClipRecord*> out;
  for (std::size_t p : positions) out.push_back(&ds.clips.at(p));
  return out;
}

void adam_step_named(ParameterSet& params, const BoundParameters& bound, AdamState& state,
                     const AdamOptions& options) {
  std::vector<Tensor> values;
  std::vector<Tensor> grads;
  values.reserve(params.size());
  grads.reserve(params.size());
  for (auto& [name, t] : params) {
    values.push_back(std::move(t));
    grads.push_back(bound[name].grad());
  }
  adam_step(values, grads, state, options);
  std::size_t i = 0;
  for (auto& [name, t] : params) t = std::move(values[i++]);
}

Tensor as_f32_tensor(const std::vector<double>& v) {
  std::vector<double> data(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) data[i] = static_cast<double>(static_cast<float>(v[i]));
  return Tensor({v.size()}, std::move(data));
}

Tensor stack_rows(const std::vector<Tensor>& parts) {
  std::size_t rows = 0;
  for (const Tensor& t : parts) rows += t.rows();
  std::vector<double> data;
  data.reserve(rows * parts.front().cols());
  for (const Tensor& t : parts) data.insert(data.end(), t.data().begin(), t.data().end());
  return Tensor({rows, parts.front().cols()}, std::move(data));
}

struct StackedBatch {
  Tensor audio;
  Tensor video;
  Tensor labels;
};

StackedBatch stack_samples(std::vector<Sample>& samples) {
  std::vector<Tensor> audio, video, labels;
  for (Sample& s : samples) {
    audio.push_back(std::move(s.audio));
    video.push_back(std::move(s.video));
    labels.push_back(std::move(s.labels));
  }
  return {stack_rows(audio), stack_rows(video), stack_rows(labels)};
}

// Batch activations are large enough that glibc would otherwise mmap and
// unmap them on every step.
void keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

std::vector<double> to_vector(const Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

}  // namespace

SplitIndices split_dataset(std::size_t n_clips, const SplitConfig& splits) {
  const auto n_train = static_cast<std::size_t>(std::floor(splits.train * n_clips + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(splits.val * n_clips + 1e-9));
  if (n_train == 0 || n_val == 0 || n_train + n_val > n_clips) {
    throw Error(ErrorKind::kInvalidArgument,
                "splits leave an empty train or val split for " + std::to_string(n_clips) +
                    " clips");
  }
  SplitIndices out;
  for (std::size_t i = 0; i < n_train; ++i) out.train.push_back(i);
  for (std::size_t i = n_train; i < n_train + n_val; ++i) out.val.push_back(i);
  return out;
}

PreparedSplit prepare_split(const Dataset& dataset, std::span<const std::size_t> positions,
                            const NormStats& stats, std::size_t seq_len, WindowMode mode) {
  PreparedSplit split;
  std::vector<std::size_t> lengths;
  for (const ClipRecord* clip : select(dataset, positions)) {
    split.clips.push_back(synchronize(apply_norm(*clip, stats)));
    lengths.push_back(split.clips.back().frames());
  }
  split.plan = window_clips(lengths, seq_len, mode);
  return split;
}

EvalOutput evaluate(const ParameterSet& params, const ModelConfig& config,
                    const PreparedSplit& split, const AblationSpec& corruption) {
  std::size_t frames = 0;
  for (const Window& w : split.plan.windows) frames += w.score_end - w.score_begin;
  if (frames < 2) throw Error(ErrorKind::kInvalidArgument, "evaluation split has < 2 scored frames");
  EvalOutput out;
  out.predictions = Tensor({frames, 2}, 0.0);
  out.labels = Tensor({frames, 2}, 0.0);
  const auto& windows = split.plan.windows;
  std::size_t row = 0;
  for (std::size_t begin = 0; begin < windows.size(); begin += kEvalBatch) {
    const std::size_t end = std::min(begin + kEvalBatch, windows.size());
    std::vector<Sample> samples;
    for (std::size_t k = begin; k < end; ++k) {
      samples.push_back(make_sample(split.clips[windows[k].clip], windows[k], config.seq_len));
      apply_ablation(corruption, samples.back(), k);
    }
    const StackedBatch batch = stack_samples(samples);
    ad::Tape tape;
    const BoundParameters bound(tape, params, false);
    const Tensor& pred = model_forward_batch(tape.constant(batch.audio),
                                             tape.constant(batch.video), bound, config)
                             .value();
    for (std::size_t k = begin; k < end; ++k) {
      const Window& w = windows[k];
      const std::size_t offset = (k - begin) * config.seq_len - w.start;
      for (std::size_t f = w.score_begin; f < w.score_end; ++f, ++row) {
        for (std::size_t c = 0; c < 2; ++c) {
          out.predictions(row, c) = pred(offset + f, c);
          out.labels(row, c) = batch.labels(offset + f, c);
        }
      }
    }
  }
  out.summary = eval_summary(out.predictions, out.labels);
  return out;
}

std::string epoch_log_header() { return "epoch,train_loss,val_ccc_valence,val_ccc_arousal,val_ccc_mean"; }

std::string epoch_log_row(const EpochLog& e) {
  return std::to_string(e.epoch) + "," + format_number(e.train_loss) + "," +
         format_number(e.val.ccc_valence) + "," + format_number(e.val.ccc_arousal) + "," +
         format_number(e.val.mean());
}

TrainResult train_model(const RunConfig& config, const Dataset& dataset,
                        const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  keep_large_blocks_on_heap();
  const InputDims dims = dataset_dims(dataset);
  ModelConfig mc = config.model;
  mc.d_audio = config.d_audio.value_or(dims.audio_lld * kContextFrames);
  mc.d_video = config.d_video.value_or(dims.video);
  check_dims(mc, dims);

  const SplitIndices splits = split_dataset(dataset.clips.size(), config.splits);
  std::vector<ClipRecord> train_clips;
  for (std::size_t p : splits.train) train_clips.push_back(dataset.clips[p]);
  const NormStats stats = fit_norm(train_clips);
  train_clips.clear();

  const PreparedSplit train_split =
      prepare_split(dataset, splits.train, stats, mc.seq_len, WindowMode::kTrain);
  const PreparedSplit val_split =
      prepare_split(dataset, splits.val, stats, mc.seq_len, WindowMode::kEval);
  if (train_split.plan.windows.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "no training windows of " +
                                                 std::to_string(mc.seq_len) + " frames");
  }
  if (val_split.plan.windows.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "no validation windows of " +
                                                 std::to_string(mc.seq_len) + " frames");
  }

  ParameterSet params = init_params(mc, derive_seed(config.train.seed, kInitStream));
  AdamState adam;
  const AdamOptions adam_options{.lr = config.train.lr};
  const AblationSpec clean{Strategy::kNone, config.ablation.modality, 0.0, 0};

  TrainResult result;
  ParameterSet best_params = params;
  double best_score = -std::numeric_limits<double>::infinity();
  const std::size_t n_windows = train_split.plan.windows.size();
  std::vector<std::size_t> order(n_windows);

  for (std::size_t epoch = 1; epoch <= config.train.epochs; ++epoch) {
    for (std::size_t i = 0; i < n_windows; ++i) order[i] = i;
    Rng shuffle_rng = make_rng(config.train.seed, kShuffleStreamBase + epoch);
    for (std::size_t i = n_windows; i-- > 1;) {
      const auto j = static_cast<std::size_t>(uniform01(shuffle_rng) * static_cast<double>(i + 1));
      std::swap(order[i], order[std::min(j, i)]);
    }
    AblationSpec epoch_ablation = config.ablation;
    epoch_ablation.seed = derive_seed(config.ablation_seed(), epoch);

    double loss_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n_windows; begin += config.train.batch_size) {
      const std::size_t end = std::min(begin + config.train.batch_size, n_windows);
      ad::Tape tape;
      const BoundParameters bound(tape, params, true);
      std::vector<Sample> samples;
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t index = order[k];
        const Window& w = train_split.plan.windows[index];
        samples.push_back(make_sample(train_split.clips[w.clip], w, mc.seq_len));
        apply_ablation(epoch_ablation, samples.back(), index);
      }
      StackedBatch batch = stack_samples(samples);
      const ad::Var pred = model_forward_batch(tape.constant(std::move(batch.audio)),
                                               tape.constant(std::move(batch.video)), bound, mc);
      const ad::Var loss = ccc_loss(pred, tape.constant(std::move(batch.labels)));
      tape.backward(loss);
      adam_step_named(params, bound, adam, adam_options);
      loss_total += loss.value()[0];
      ++batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_total / static_cast<double>(batches);
    log.val = evaluate(params, mc, val_split, clean).summary;
    if (log.val.mean() > best_score) {
      best_score = log.val.mean();
      best_params = params;
      result.best_epoch = epoch;
    }
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }

  Checkpoint& ck = result.checkpoint;
  ck.config = mc;
  ck.params = round_to_f32(best_params);
  ck.aux.emplace("norm.audio.mean", as_f32_tensor(stats.audio.mean));
  ck.aux.emplace("norm.audio.std", as_f32_tensor(stats.audio.std));
  ck.aux.emplace("norm.video.mean", as_f32_tensor(stats.video.mean));
  ck.aux.emplace("norm.video.std", as_f32_tensor(stats.video.std));
  ck.meta = {{"splits", {{"train", config.splits.train}, {"val", config.splits.val}}},
             {"context_frames", kContextFrames},
             {"best_epoch", result.best_epoch},
             {"run", to_json(config)}};
  return result;
}

NormStats norm_stats_from_checkpoint(const Checkpoint& ck) {
  auto get = [&](const char* name) {
    auto it = ck.aux.find(name);
    if (it == ck.aux.end()) {
      throw Error(ErrorKind::kShapeInconsistency,
                  std::string("checkpoint lacks normalisation tensor ") + name);
    }
    return to_vector(it->second);
  };
  NormStats stats;
  stats.audio = {get("norm.audio.mean"), get("norm.audio.std")};
  stats.video = {get("norm.video.mean"), get("norm.video.std")};
  if (stats.audio.mean.size() != stats.audio.std.size() ||
      stats.video.mean.size() != stats.video.std.size() ||
      stats.audio.mean.size() * kContextFrames != ck.config.d_audio ||
      stats.video.mean.size() != ck.config.d_video) {
    throw Error(ErrorKind::kShapeInconsistency,
                "checkpoint normalisation tensors do not match the model input widths");
  }
  return stats;
}

SplitConfig splits_from_checkpoint(const Checkpoint& ck) {
  SplitConfig s;
  if (ck.meta.contains("splits")) {
    const auto& j = ck.meta.at("splits");
    s.train = j.value("train", s.train);
    s.val = j.value("val", s.val);
  }
  return s;
}

}  // namespace modalfuse
