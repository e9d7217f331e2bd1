#include "modalfuse/data.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <random>

#include "binary_io.hpp"
#include "modalfuse/error.hpp"
#include "modalfuse/rng.hpp"

namespace modalfuse {

namespace {

std::string clip_name(std::uint32_t id) { return "clip " + std::to_string(id); }

void invariant(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorKind::kInvariantViolation, message);
}

// Stream 0 holds the dataset-wide mixing matrices; clip i uses stream i + 1.
constexpr std::uint64_t kMixingStream = 0;

}  // namespace

void ClipRecord::validate() const {
  const std::string who = clip_name(id);
  invariant(fps_video >= 1 && fps_audio >= fps_video,
            who + ": fps_audio must be >= fps_video >= 1");
  invariant(video.rank() == 2 && audio.rank() == 2 && labels.rank() == 2,
            who + ": audio, video and labels must be matrices");
  invariant(labels.cols() == 2, who + ": labels must have 2 columns");
  invariant(labels.rows() == video.rows(), who + ": label count " +
                                               std::to_string(labels.rows()) +
                                               " != video frame count " +
                                               std::to_string(video.rows()));
  for (double v : labels.data()) {
    invariant(v >= -1.0 && v <= 1.0,
              who + ": label value " + std::to_string(v) + " outside [-1, 1]");
  }
}

// ---------------------------------------------------------------------------
// synthetic data

void SyntheticConfig::validate() const {
  auto require = [](bool ok, const std::string& message) {
    if (!ok) throw Error(ErrorKind::kInvalidArgument, message);
  };
  require(n_clips >= 1, "n_clips must be ≥ 1");
  require(clip_seconds > 0.0 && std::isfinite(clip_seconds), "clip_seconds must be > 0");
  require(d_audio_lld >= 1, "d_audio_lld must be ≥ 1");
  require(d_video >= 1, "d_video must be ≥ 1");
  require(sigma_audio >= 0.0 && std::isfinite(sigma_audio), "sigma_audio must be ≥ 0");
  require(sigma_video >= 0.0 && std::isfinite(sigma_video), "sigma_video must be ≥ 0");
  require(rho > 0.0 && rho < 1.0, "rho must lie in (0, 1)");
}

nlohmann::json to_json(const SyntheticConfig& c) {
  return {{"n_clips", c.n_clips},         {"clip_seconds", c.clip_seconds},
          {"d_audio_lld", c.d_audio_lld}, {"d_video", c.d_video},
          {"sigma_audio", c.sigma_audio}, {"sigma_video", c.sigma_video},
          {"rho", c.rho},                 {"seed", c.seed}};
}

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::kInvalidArgument, "data: expected a JSON object");
  SyntheticConfig c;
  for (const auto& [key, value] : j.items()) {
    auto fail = [&](const std::string& what) {
      throw Error(ErrorKind::kInvalidArgument, key + ": " + what);
    };
    if (key == "n_clips" || key == "d_audio_lld" || key == "d_video" || key == "seed") {
      if (!value.is_number_integer() || (!value.is_number_unsigned() && value.get<std::int64_t>() < 0)) {
        fail("must be a non-negative integer");
      }
      const auto v = value.get<std::uint64_t>();
      if (key == "n_clips") c.n_clips = v;
      if (key == "d_audio_lld") c.d_audio_lld = v;
      if (key == "d_video") c.d_video = v;
      if (key == "seed") c.seed = v;
    } else if (key == "clip_seconds" || key == "sigma_audio" || key == "sigma_video" ||
               key == "rho") {
      if (!value.is_number()) fail("must be a number");
      const double v = value.get<double>();
      if (key == "clip_seconds") c.clip_seconds = v;
      if (key == "sigma_audio") c.sigma_audio = v;
      if (key == "sigma_video") c.sigma_video = v;
      if (key == "rho") c.rho = v;
    } else {
      fail("unknown key");
    }
  }
  c.validate();
  return c;
}

Dataset generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  const auto frames_video = static_cast<std::size_t>(std::llround(config.clip_seconds * kVideoFps));
  const auto frames_audio = static_cast<std::size_t>(std::llround(config.clip_seconds * kAudioFps));
  if (frames_video == 0) throw Error(ErrorKind::kInvalidArgument, "clip_seconds too small");

  std::normal_distribution<double> normal(0.0, 1.0);
  Rng mixing_rng = make_rng(config.seed, kMixingStream);
  Tensor video_mix({config.d_video, 2}, 0.0);
  Tensor audio_mix({config.d_audio_lld, 2}, 0.0);
  for (double& v : video_mix.data()) v = normal(mixing_rng);
  for (double& v : audio_mix.data()) v = normal(mixing_rng);

  const double innovation = std::sqrt(1.0 - config.rho * config.rho);
  Dataset ds;
  ds.clips.reserve(config.n_clips);
  for (std::size_t c = 0; c < config.n_clips; ++c) {
    Rng rng = make_rng(config.seed, c + 1);
    normal.reset();
    ClipRecord clip;
    clip.id = static_cast<std::uint32_t>(c);
    clip.labels = Tensor({frames_video, 2}, 0.0);
    double z[2] = {0.0, 0.0};
    for (std::size_t t = 0; t < frames_video; ++t) {
      for (int k = 0; k < 2; ++k) {
        if (t > 0) z[k] = std::clamp(config.rho * z[k] + innovation * normal(rng), -1.0, 1.0);
        clip.labels(t, k) = z[k];
      }
    }

    clip.video = Tensor({frames_video, config.d_video}, 0.0);
    for (std::size_t t = 0; t < frames_video; ++t) {
      const double l0 = std::tanh(clip.labels(t, 0)), l1 = std::tanh(clip.labels(t, 1));
      for (std::size_t d = 0; d < config.d_video; ++d) {
        clip.video(t, d) = video_mix(d, 0) * l0 + video_mix(d, 1) * l1 +
                           config.sigma_video * normal(rng);
      }
    }

    clip.audio = Tensor({frames_audio, config.d_audio_lld}, 0.0);
    for (std::size_t j = 0; j < frames_audio; ++j) {
      // audio frame j sits at video-frame position j * 30 / 100
      const double pos = static_cast<double>(j) * kVideoFps / kAudioFps;
      const auto lo = std::min(static_cast<std::size_t>(pos), frames_video - 1);
      const std::size_t hi = std::min(lo + 1, frames_video - 1);
      const double frac = std::min(pos - static_cast<double>(lo), 1.0);
      double latent[2];
      for (int k = 0; k < 2; ++k) {
        latent[k] = std::tanh((1.0 - frac) * clip.labels(lo, k) + frac * clip.labels(hi, k));
      }
      for (std::size_t d = 0; d < config.d_audio_lld; ++d) {
        clip.audio(j, d) = audio_mix(d, 0) * latent[0] + audio_mix(d, 1) * latent[1] +
                           config.sigma_audio * normal(rng);
      }
    }
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// synchronisation

Tensor resample_audio(const Tensor& seq) {
  require_matrix(seq, "resample_audio");
  const std::size_t in_frames = seq.rows();
  if (in_frames == 0) throw Error(ErrorKind::kInvalidArgument, "resample_audio: empty input");
  const std::size_t out_frames = in_frames * kVideoFps / kAudioFps;
  Tensor out({out_frames, seq.cols()}, 0.0);
  for (std::size_t i = 0; i < out_frames; ++i) {
    // round(i * 10 / 3) in exact integer arithmetic; the fraction is never 1/2
    const std::size_t src = std::min((20 * i + 3) / 6, in_frames - 1);
    std::ranges::copy(seq.row(src), out.row(i).begin());
  }
  return out;
}

Tensor stack_context_rows(const Tensor& seq, std::size_t begin, std::size_t count,
                          std::size_t window) {
  require_matrix(seq, "stack_context");
  if (window == 0) throw Error(ErrorKind::kInvalidArgument, "stack_context: window must be >= 1");
  if (begin + count > seq.rows()) {
    throw Error(ErrorKind::kDimension, "stack_context: rows [" + std::to_string(begin) + ", " +
                                           std::to_string(begin + count) + ") out of range for " +
                                           shape_to_string(seq.shape()));
  }
  const std::size_t d = seq.cols();
  Tensor out({count, window * d}, 0.0);
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t t = begin + r;
    auto dst = out.row(r).begin();
    for (std::size_t k = 0; k < window; ++k) {
      const std::size_t src = t + k + 1 >= window ? t + k + 1 - window : 0;
      std::ranges::copy(seq.row(src), dst + static_cast<std::ptrdiff_t>(k * d));
    }
  }
  return out;
}

Tensor stack_context(const Tensor& seq, std::size_t window) {
  require_matrix(seq, "stack_context");
  return stack_context_rows(seq, 0, seq.rows(), window);
}

// ---------------------------------------------------------------------------
// normalisation

namespace {

ModalityStats fit_modality(std::span<const ClipRecord> clips, bool audio) {
  const Tensor& first = audio ? clips[0].audio : clips[0].video;
  const std::size_t d = first.cols();
  ModalityStats stats;
  stats.mean.assign(d, 0.0);
  stats.std.assign(d, 0.0);
  std::size_t n = 0;
  for (const ClipRecord& clip : clips) {
    const Tensor& t = audio ? clip.audio : clip.video;
    if (t.cols() != d) {
      throw Error(ErrorKind::kDimension, clip_name(clip.id) + ": feature dim " +
                                             std::to_string(t.cols()) + " != " +
                                             std::to_string(d));
    }
    for (std::size_t r = 0; r < t.rows(); ++r) {
      auto row = t.row(r);
      for (std::size_t c = 0; c < d; ++c) stats.mean[c] += row[c];
    }
    n += t.rows();
  }
  if (n == 0) throw Error(ErrorKind::kInvalidArgument, "fit_norm: training split has no frames");
  for (double& m : stats.mean) m /= static_cast<double>(n);
  for (const ClipRecord& clip : clips) {
    const Tensor& t = audio ? clip.audio : clip.video;
    for (std::size_t r = 0; r < t.rows(); ++r) {
      auto row = t.row(r);
      for (std::size_t c = 0; c < d; ++c) {
        const double dev = row[c] - stats.mean[c];
        stats.std[c] += dev * dev;
      }
    }
  }
  for (double& s : stats.std) s = std::max(std::sqrt(s / static_cast<double>(n)), kStdFloor);
  return stats;
}

Tensor normalise(const Tensor& t, const ModalityStats& stats, const char* what, std::uint32_t id) {
  if (t.cols() != stats.mean.size()) {
    throw Error(ErrorKind::kDimension, clip_name(id) + ": " + what + " dim " +
                                           std::to_string(t.cols()) + " but stats have " +
                                           std::to_string(stats.mean.size()));
  }
  Tensor out = t;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - stats.mean[c]) / stats.std[c];
  }
  return out;
}

}  // namespace

NormStats fit_norm(std::span<const ClipRecord> train) {
  if (train.empty()) throw Error(ErrorKind::kInvalidArgument, "fit_norm: empty training split");
  return {fit_modality(train, true), fit_modality(train, false)};
}

ClipRecord apply_norm(const ClipRecord& clip, const NormStats& stats) {
  ClipRecord out = clip;
  out.audio = normalise(clip.audio, stats.audio, "audio", clip.id);
  out.video = normalise(clip.video, stats.video, "video", clip.id);
  return out;
}

SyncedClip synchronize(const ClipRecord& clip) {
  if (clip.fps_audio != kAudioFps || clip.fps_video != kVideoFps) {
    throw Error(ErrorKind::kDimension, clip_name(clip.id) + ": expected " +
                                           std::to_string(kAudioFps) + "/" +
                                           std::to_string(kVideoFps) + " fps streams");
  }
  SyncedClip out;
  out.id = clip.id;
  const Tensor audio = resample_audio(clip.audio);
  const std::size_t va = audio.rows(), vv = clip.video.rows();
  const std::size_t gap = va > vv ? va - vv : vv - va;
  if (gap > 3) {
    throw Error(ErrorKind::kDimension, clip_name(clip.id) + ": audio gives " + std::to_string(va) +
                                           " frames at 30 fps but video has " +
                                           std::to_string(vv));
  }
  const std::size_t frames = std::min(va, vv);
  auto truncate = [frames](const Tensor& t) {
    std::vector<double> data(t.data().begin(),
                             t.data().begin() + static_cast<std::ptrdiff_t>(frames * t.cols()));
    return Tensor({frames, t.cols()}, std::move(data));
  };
  out.audio = truncate(audio);
  out.video = truncate(clip.video);
  out.labels = truncate(clip.labels);
  return out;
}

// ---------------------------------------------------------------------------
// windowing

WindowPlan window_clips(std::span<const std::size_t> clip_lengths, std::size_t seq_len,
                        WindowMode mode, std::size_t stride) {
  if (seq_len == 0) throw Error(ErrorKind::kInvalidArgument, "window_clips: seq_len must be >= 1");
  if (stride == 0) stride = seq_len;
  WindowPlan plan;
  for (std::size_t c = 0; c < clip_lengths.size(); ++c) {
    const std::size_t length = clip_lengths[c];
    if (length < seq_len) {
      std::cerr << "warning: clip at position " << c << " has " << length
                << " frames (< seq_len " << seq_len << "), skipped\n";
      plan.skipped.push_back(c);
      continue;
    }
    if (mode == WindowMode::kTrain) {
      for (std::size_t s = 0; s + seq_len <= length; s += stride) {
        plan.windows.push_back({c, s, s, s + seq_len});
      }
      continue;
    }
    const std::size_t full = length / seq_len;
    for (std::size_t k = 0; k < full; ++k) {
      plan.windows.push_back({c, k * seq_len, k * seq_len, (k + 1) * seq_len});
    }
    if (length % seq_len != 0) {
      plan.windows.push_back({c, length - seq_len, full * seq_len, length});
    }
  }
  return plan;
}

Sample make_sample(const SyncedClip& clip, const Window& w, std::size_t seq_len) {
  if (w.start + seq_len > clip.frames()) {
    throw Error(ErrorKind::kDimension, clip_name(clip.id) + ": window beyond clip end");
  }
  auto rows = [&](const Tensor& t) {
    const auto first = t.data().begin() + static_cast<std::ptrdiff_t>(w.start * t.cols());
    std::vector<double> data(first, first + static_cast<std::ptrdiff_t>(seq_len * t.cols()));
    return Tensor({seq_len, t.cols()}, std::move(data));
  };
  Sample s;
  s.audio = stack_context_rows(clip.audio, w.start, seq_len);
  s.video = rows(clip.video);
  s.labels = rows(clip.labels);
  return s;
}

// ---------------------------------------------------------------------------
// file format

std::string encode_dataset(const Dataset& dataset) {
  detail::ByteWriter w;
  w.raw(std::string_view(kDatasetMagic, 4));
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(dataset.clips.size()));
  for (const ClipRecord& clip : dataset.clips) {
    clip.validate();
    w.u32(clip.id);
    w.u32(clip.fps_video);
    w.u32(static_cast<std::uint32_t>(clip.video.rows()));
    w.u32(static_cast<std::uint32_t>(clip.video.cols()));
    w.u32(clip.fps_audio);
    w.u32(static_cast<std::uint32_t>(clip.audio.rows()));
    w.u32(static_cast<std::uint32_t>(clip.audio.cols()));
    w.f32s(clip.video.data());
    w.f32s(clip.audio.data());
    w.f32s(clip.labels.data());
  }
  return w.bytes();
}

Dataset decode_dataset(std::string_view bytes) {
  detail::ByteReader r(bytes, "dataset");
  if (r.remaining() < 4 || r.take(4) != std::string_view(kDatasetMagic, 4)) {
    throw Error(ErrorKind::kBadMagic, "dataset: bad magic (expected \"AVXD\")");
  }
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw Error(ErrorKind::kVersionMismatch, "dataset: version " + std::to_string(version) +
                                                 ", expected " + std::to_string(kDatasetVersion));
  }
  const std::uint32_t n_clips = r.u32();
  Dataset ds;
  for (std::uint32_t i = 0; i < n_clips; ++i) {
    ClipRecord clip;
    clip.id = r.u32();
    clip.fps_video = r.u32();
    const std::size_t tv = r.u32(), dv = r.u32();
    clip.fps_audio = r.u32();
    const std::size_t ta = r.u32(), da = r.u32();
    if (dv == 0 || da == 0) {
      throw Error(ErrorKind::kShapeInconsistency,
                  "dataset: " + clip_name(clip.id) + " has a zero feature dimension");
    }
    const std::size_t needed = tv * dv + ta * da + tv * 2;
    if (needed > r.remaining() / 4) {
      throw Error(ErrorKind::kTruncated, "dataset: truncated inside " + clip_name(clip.id));
    }
    auto read = [&](std::size_t rows, std::size_t cols) {
      std::vector<double> data(rows * cols);
      r.f32s(data);
      return Tensor({rows, cols}, std::move(data));
    };
    clip.video = read(tv, dv);
    clip.audio = read(ta, da);
    clip.labels = read(tv, 2);
    clip.validate();
    ds.clips.push_back(std::move(clip));
  }
  if (r.remaining() != 0) {
    throw Error(ErrorKind::kShapeInconsistency,
                "dataset: " + std::to_string(r.remaining()) + " trailing bytes");
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  detail::write_file(path, encode_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) {
  return decode_dataset(detail::read_file(path));
}

}  // namespace modalfuse
