#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "modalfuse/augment.hpp"
#include "modalfuse/tensor.hpp"

namespace modalfuse {

inline constexpr std::uint32_t kVideoFps = 30;
inline constexpr std::uint32_t kAudioFps = 100;
// 2 s of 30 fps context stacked into each audio model-input frame.
inline constexpr std::size_t kContextFrames = 60;
inline constexpr double kStdFloor = 1e-8;

// One paired recording: raw audio descriptors at fps_audio, video features
// and per-frame labels at fps_video.
struct ClipRecord {
  std::uint32_t id = 0;
  std::uint32_t fps_video = kVideoFps;
  std::uint32_t fps_audio = kAudioFps;
  Tensor audio;   // [T_a x D_a]
  Tensor video;   // [T_v x D_v]
  Tensor labels;  // [T_v x 2], valence and arousal in [-1, 1]

  // Throws Error(kInvariantViolation) naming the clip id.
  void validate() const;
};

struct Dataset {
  std::vector<ClipRecord> clips;
};

struct SyntheticConfig {
  std::size_t n_clips = 200;
  double clip_seconds = 30.0;
  std::size_t d_audio_lld = 16;
  std::size_t d_video = 32;
  double sigma_audio = 1.0;
  double sigma_video = 0.3;
  double rho = 0.98;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const SyntheticConfig& config);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);

// Smoothed clamped AR(1) latent as labels; video = B tanh(z) + noise at
// 30 fps, audio = A tanh(z(t)) + noise at 100 fps from the interpolated latent.
Dataset generate_synthetic(const SyntheticConfig& config);

// 100 fps -> 30 fps nearest-index map: out[i] = in[min(round(10 i / 3), T-1)].
Tensor resample_audio(const Tensor& seq);
// Row t = concat(frames t-window+1 .. t); frames before 0 repeat frame 0.
Tensor stack_context(const Tensor& seq, std::size_t window = kContextFrames);
Tensor stack_context_rows(const Tensor& seq, std::size_t begin, std::size_t count,
                          std::size_t window = kContextFrames);

struct ModalityStats {
  std::vector<double> mean;
  std::vector<double> std;  // floored at kStdFloor
};

struct NormStats {
  ModalityStats audio;
  ModalityStats video;
};

NormStats fit_norm(std::span<const ClipRecord> train);
ClipRecord apply_norm(const ClipRecord& clip, const NormStats& stats);

// Audio resampled to the video rate; both streams and labels truncated to a
// common length. More than 3 frames of disagreement is a dimension error.
struct SyncedClip {
  std::uint32_t id = 0;
  Tensor audio;   // [T x D_a], before context stacking
  Tensor video;   // [T x D_v]
  Tensor labels;  // [T x 2]

  std::size_t frames() const { return video.rows(); }
};

SyncedClip synchronize(const ClipRecord& clip);

enum class WindowMode { kTrain, kEval };

// Frames [start, start + seq_len) are fed to the model; frames
// [score_begin, score_end) of the clip are scored from this window.
struct Window {
  std::size_t clip = 0;
  std::size_t start = 0;
  std::size_t score_begin = 0;
  std::size_t score_end = 0;

  friend bool operator==(const Window&, const Window&) = default;
};

struct WindowPlan {
  std::vector<Window> windows;
  std::vector<std::size_t> skipped;  // clip positions shorter than seq_len
};

// Train: windows every `stride` frames, trailing partial window dropped.
// Eval: non-overlapping windows plus one right-aligned tail window that
// scores only frames not yet covered.
WindowPlan window_clips(std::span<const std::size_t> clip_lengths, std::size_t seq_len,
                        WindowMode mode, std::size_t stride = 0);

// Model inputs for one window; audio rows carry their stacked context.
Sample make_sample(const SyncedClip& clip, const Window& window, std::size_t seq_len);

inline constexpr char kDatasetMagic[4] = {'A', 'V', 'X', 'D'};
inline constexpr std::uint32_t kDatasetVersion = 1;

std::string encode_dataset(const Dataset& dataset);
Dataset decode_dataset(std::string_view bytes);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace modalfuse
