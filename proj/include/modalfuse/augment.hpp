#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "modalfuse/rng.hpp"
#include "modalfuse/tensor.hpp"

namespace modalfuse {

enum class Strategy { kNone, kClipZero, kFrameZero, kFrameRepeat };
enum class Modality { kAudio, kVideo };

std::string_view to_string(Strategy s);
std::string_view to_string(Modality m);
// Exact names: none, clip_zero, frame_zero, frame_repeat / audio, video.
Strategy parse_strategy(std::string_view name);
Modality parse_modality(std::string_view name);

struct AblationSpec {
  Strategy strategy = Strategy::kNone;
  Modality modality = Modality::kVideo;
  double probability = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// A model-input sequence pair with its per-frame labels.
struct Sample {
  Tensor audio;   // [T x d_audio]
  Tensor video;   // [T x d_video]
  Tensor labels;  // [T x 2]
};

// One uniform draw; the whole sequence becomes zero iff u < p.
Tensor clip_zero(const Tensor& seq, double p, Rng& rng);
// One uniform draw per frame in index order; selected iff u < p.
std::vector<bool> select_frames(std::size_t frames, double p, Rng& rng);
Tensor frame_zero(const Tensor& seq, double p, Rng& rng);
Tensor frame_repeat(const Tensor& seq, double p, Rng& rng);

// Fill rules applied to an explicit selection mask.
Tensor zero_frames(const Tensor& seq, const std::vector<bool>& selected);
// Selected frames copy the latest unselected frame; leading ones become zero.
Tensor repeat_frames(const Tensor& seq, const std::vector<bool>& selected);

// Corrupts the target modality of one sample using the stream derived from
// (spec.seed, index). Labels and the other modality are untouched.
void apply_ablation(const AblationSpec& spec, Sample& sample, std::uint64_t index);

// Batch form: sample i uses stream index first_index + i.
void apply_ablation(const AblationSpec& spec, std::span<Sample> batch,
                    std::uint64_t first_index = 0);

}  // namespace modalfuse
