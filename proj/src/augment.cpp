#include "modalfuse/augment.hpp"

#include <algorithm>

#include "modalfuse/error.hpp"

namespace modalfuse {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kNone: return "none";
    case Strategy::kClipZero: return "clip_zero";
    case Strategy::kFrameZero: return "frame_zero";
    case Strategy::kFrameRepeat: return "frame_repeat";
  }
  return "none";
}

std::string_view to_string(Modality m) { return m == Modality::kAudio ? "audio" : "video"; }

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::kNone, Strategy::kClipZero, Strategy::kFrameZero,
                     Strategy::kFrameRepeat}) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorKind::kInvalidArgument,
              "unknown strategy \"" + std::string(name) +
                  "\" (expected none, clip_zero, frame_zero or frame_repeat)");
}

Modality parse_modality(std::string_view name) {
  if (name == "audio") return Modality::kAudio;
  if (name == "video") return Modality::kVideo;
  throw Error(ErrorKind::kInvalidArgument,
              "unknown modality \"" + std::string(name) + "\" (expected audio or video)");
}

void AblationSpec::validate() const {
  if (!(probability >= 0.0 && probability <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument,
                "ablation probability must lie in [0, 1], got " + std::to_string(probability));
  }
}

namespace {

void check_p(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument,
                "ablation probability must lie in [0, 1], got " + std::to_string(p));
  }
}

}  // namespace

Tensor clip_zero(const Tensor& seq, double p, Rng& rng) {
  check_p(p);
  if (uniform01(rng) < p) return Tensor(seq.shape(), 0.0);
  return seq;
}

std::vector<bool> select_frames(std::size_t frames, double p, Rng& rng) {
  check_p(p);
  std::vector<bool> selected(frames);
  for (std::size_t t = 0; t < frames; ++t) selected[t] = uniform01(rng) < p;
  return selected;
}

Tensor zero_frames(const Tensor& seq, const std::vector<bool>& selected) {
  require_matrix(seq, "zero_frames");
  if (selected.size() != seq.rows()) {
    throw Error(ErrorKind::kDimension, "zero_frames: mask length does not match frame count");
  }
  Tensor out = seq;
  for (std::size_t t = 0; t < seq.rows(); ++t) {
    if (selected[t]) std::ranges::fill(out.row(t), 0.0);
  }
  return out;
}

Tensor repeat_frames(const Tensor& seq, const std::vector<bool>& selected) {
  require_matrix(seq, "repeat_frames");
  if (selected.size() != seq.rows()) {
    throw Error(ErrorKind::kDimension, "repeat_frames: mask length does not match frame count");
  }
  Tensor out = seq;
  bool have_retained = false;
  std::size_t retained = 0;
  for (std::size_t t = 0; t < seq.rows(); ++t) {
    if (!selected[t]) {
      have_retained = true;
      retained = t;
    } else if (have_retained) {
      std::ranges::copy(seq.row(retained), out.row(t).begin());
    } else {
      std::ranges::fill(out.row(t), 0.0);
    }
  }
  return out;
}

Tensor frame_zero(const Tensor& seq, double p, Rng& rng) {
  require_matrix(seq, "frame_zero");
  return zero_frames(seq, select_frames(seq.rows(), p, rng));
}

Tensor frame_repeat(const Tensor& seq, double p, Rng& rng) {
  require_matrix(seq, "frame_repeat");
  return repeat_frames(seq, select_frames(seq.rows(), p, rng));
}

void apply_ablation(const AblationSpec& spec, Sample& sample, std::uint64_t index) {
  spec.validate();
  if (spec.strategy == Strategy::kNone) return;
  Tensor& target = spec.modality == Modality::kAudio ? sample.audio : sample.video;
  Rng rng = make_rng(spec.seed, index);
  switch (spec.strategy) {
    case Strategy::kClipZero: target = clip_zero(target, spec.probability, rng); break;
    case Strategy::kFrameZero: target = frame_zero(target, spec.probability, rng); break;
    case Strategy::kFrameRepeat: target = frame_repeat(target, spec.probability, rng); break;
    case Strategy::kNone: break;
  }
}

void apply_ablation(const AblationSpec& spec, std::span<Sample> batch, std::uint64_t first_index) {
  for (std::size_t i = 0; i < batch.size(); ++i) apply_ablation(spec, batch[i], first_index + i);
}

}  // namespace modalfuse
