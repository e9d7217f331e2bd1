#include <gtest/gtest.h>

#include <vector>

#include "modalfuse/augment.hpp"
#include "modalfuse/error.hpp"
#include "test_support.hpp"

using modalfuse::AblationSpec;
using modalfuse::Modality;
using modalfuse::Rng;
using modalfuse::Sample;
using modalfuse::Strategy;
using modalfuse::Tensor;

namespace {

Tensor counting_frames(std::size_t frames, std::size_t dims) {
  Tensor t({frames, dims}, 0.0);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = 1.0 + static_cast<double>(i);
  return t;
}

bool row_is_zero(const Tensor& t, std::size_t r) {
  for (double v : t.row(r)) {
    if (v != 0.0) return false;
  }
  return true;
}

std::vector<Sample> make_batch(std::size_t n, std::uint64_t seed) {
  Rng rng = modalfuse::make_rng(seed, 0);
  std::vector<Sample> batch;
  for (std::size_t i = 0; i < n; ++i) {
    batch.push_back({mf_test::random_tensor({20, 4}, rng), mf_test::random_tensor({20, 3}, rng),
                     mf_test::random_tensor({20, 2}, rng)});
  }
  return batch;
}

}  // namespace

TEST(Strategies, NamesRoundTrip) {
  for (const char* name : {"none", "clip_zero", "frame_zero", "frame_repeat"}) {
    EXPECT_EQ(modalfuse::to_string(modalfuse::parse_strategy(name)), name);
  }
  EXPECT_EQ(modalfuse::parse_modality("audio"), Modality::kAudio);
  EXPECT_EQ(modalfuse::parse_modality("video"), Modality::kVideo);
  EXPECT_THROW(modalfuse::parse_strategy("clipzero"), modalfuse::Error);
  EXPECT_THROW(modalfuse::parse_modality("text"), modalfuse::Error);
}

TEST(ClipZero, ProbabilityZeroIsIdentityAndOneZeroesAll) {
  const Tensor seq = counting_frames(10, 3);
  Rng rng = modalfuse::make_rng(1, 0);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(modalfuse::clip_zero(seq, 0.0, rng), seq);
    EXPECT_EQ(modalfuse::clip_zero(seq, 1.0, rng), Tensor(seq.shape(), 0.0));
  }
}

TEST(ClipZero, SelectionRateTracksProbability) {
  const Tensor seq = counting_frames(2, 2);
  for (double p : {0.3, 0.5, 0.9}) {
    Rng rng = modalfuse::make_rng(2, static_cast<std::uint64_t>(p * 100));
    const int draws = 100000;
    int zeroed = 0;
    for (int i = 0; i < draws; ++i) zeroed += modalfuse::clip_zero(seq, p, rng)[0] == 0.0;
    EXPECT_NEAR(static_cast<double>(zeroed) / draws, p, 0.01) << p;
  }
}

TEST(FrameZero, ProbabilityZeroIsIdentityAndOneZeroesAll) {
  const Tensor seq = counting_frames(50, 3);
  Rng rng = modalfuse::make_rng(3, 0);
  EXPECT_EQ(modalfuse::frame_zero(seq, 0.0, rng), seq);
  EXPECT_EQ(modalfuse::frame_zero(seq, 1.0, rng), Tensor(seq.shape(), 0.0));
}

TEST(FrameZero, SelectionRateTracksProbability) {
  const std::size_t frames = 100000;
  const Tensor seq = counting_frames(frames, 1);
  for (double p : {0.3, 0.5, 0.9}) {
    Rng rng = modalfuse::make_rng(4, static_cast<std::uint64_t>(p * 100));
    const Tensor out = modalfuse::frame_zero(seq, p, rng);
    std::size_t zeroed = 0;
    for (std::size_t t = 0; t < frames; ++t) {
      if (out(t, 0) == 0.0) {
        ++zeroed;
      } else {
        EXPECT_EQ(out(t, 0), seq(t, 0));
      }
    }
    EXPECT_NEAR(static_cast<double>(zeroed) / frames, p, 0.01) << p;
  }
}

TEST(FrameRepeat, CarriesLatestRetainedFrameForward) {
  const Tensor seq = counting_frames(4, 2);
  const Tensor out = modalfuse::repeat_frames(seq, {false, true, true, false});
  EXPECT_EQ(out, Tensor::matrix(4, 2, {1, 2, 1, 2, 1, 2, 7, 8}));
}

TEST(FrameRepeat, LeadingSelectedFrameBecomesZero) {
  const Tensor seq = counting_frames(4, 2);
  const Tensor out = modalfuse::repeat_frames(seq, {true, false, false, false});
  EXPECT_EQ(out, Tensor::matrix(4, 2, {0, 0, 3, 4, 5, 6, 7, 8}));
}

TEST(FrameRepeat, ProbabilityOneGivesAllZero) {
  const Tensor seq = counting_frames(30, 3);
  Rng rng = modalfuse::make_rng(5, 0);
  EXPECT_EQ(modalfuse::frame_repeat(seq, 1.0, rng), Tensor(seq.shape(), 0.0));
  EXPECT_EQ(modalfuse::frame_repeat(seq, 0.0, rng), seq);
}

TEST(FrameRepeat, SelectionRateTracksProbability) {
  const std::size_t frames = 100000;
  const Tensor seq = counting_frames(frames, 1);
  for (double p : {0.3, 0.5, 0.9}) {
    Rng rng = modalfuse::make_rng(6, static_cast<std::uint64_t>(p * 100));
    const Tensor out = modalfuse::frame_repeat(seq, p, rng);
    std::size_t changed = 0;
    for (std::size_t t = 0; t < frames; ++t) changed += out(t, 0) != seq(t, 0);
    EXPECT_NEAR(static_cast<double>(changed) / frames, p, 0.01) << p;
  }
}

TEST(FrameStrategies, SelectTheSameFrames) {
  const Tensor seq = counting_frames(200, 2);
  for (double p : {0.2, 0.5, 0.8}) {
    Rng a = modalfuse::make_rng(7, 3), b = modalfuse::make_rng(7, 3), c = modalfuse::make_rng(7, 3);
    const Tensor zeroed = modalfuse::frame_zero(seq, p, a);
    const Tensor repeated = modalfuse::frame_repeat(seq, p, b);
    const std::vector<bool> mask = modalfuse::select_frames(200, p, c);
    EXPECT_EQ(zeroed, modalfuse::zero_frames(seq, mask));
    EXPECT_EQ(repeated, modalfuse::repeat_frames(seq, mask));
    for (std::size_t t = 0; t < 200; ++t) {
      EXPECT_EQ(row_is_zero(zeroed, t), static_cast<bool>(mask[t]));
    }
  }
}

TEST(FrameStrategies, RejectProbabilityOutsideUnitInterval) {
  const Tensor seq = counting_frames(3, 1);
  Rng rng = modalfuse::make_rng(8, 0);
  EXPECT_THROW(modalfuse::frame_zero(seq, 1.5, rng), modalfuse::Error);
  EXPECT_THROW(modalfuse::clip_zero(seq, -0.1, rng), modalfuse::Error);
  EXPECT_THROW(modalfuse::repeat_frames(seq, {true}), modalfuse::Error);
}

TEST(ApplyAblation, NoneLeavesBatchBitIdentical) {
  std::vector<Sample> batch = make_batch(5, 9);
  const std::vector<Sample> before = batch;
  modalfuse::apply_ablation(AblationSpec{Strategy::kNone, Modality::kVideo, 1.0, 3}, batch);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    EXPECT_EQ(batch[i].audio, before[i].audio);
    EXPECT_EQ(batch[i].video, before[i].video);
    EXPECT_EQ(batch[i].labels, before[i].labels);
  }
}

TEST(ApplyAblation, TouchesOnlyTheTargetModality) {
  for (Modality m : {Modality::kAudio, Modality::kVideo}) {
    std::vector<Sample> batch = make_batch(6, 10);
    const std::vector<Sample> before = batch;
    modalfuse::apply_ablation(AblationSpec{Strategy::kClipZero, m, 1.0, 4}, batch);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const bool video = m == Modality::kVideo;
      const Tensor& target = video ? batch[i].video : batch[i].audio;
      EXPECT_EQ(target, Tensor(target.shape(), 0.0));
      EXPECT_EQ(video ? batch[i].audio : batch[i].video,
                video ? before[i].audio : before[i].video);
      EXPECT_EQ(batch[i].labels, before[i].labels);
    }
  }
}

TEST(ApplyAblation, DeterministicAndOrderIndependent) {
  const AblationSpec spec{Strategy::kFrameRepeat, Modality::kVideo, 0.5, 77};
  std::vector<Sample> a = make_batch(8, 11), b = make_batch(8, 11);
  modalfuse::apply_ablation(spec, a);
  modalfuse::apply_ablation(spec, b);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].video, b[i].video);

  // sample 5 corrupted alone with its stream index matches the batch result
  std::vector<Sample> c = make_batch(8, 11);
  modalfuse::apply_ablation(spec, c[5], 5);
  EXPECT_EQ(c[5].video, a[5].video);
  std::vector<Sample> tail(c.begin() + 6, c.end());
  modalfuse::apply_ablation(spec, tail, 6);
  EXPECT_EQ(tail[1].video, a[7].video);
}

TEST(ApplyAblation, ShapesAndLabelsNeverChange) {
  for (Strategy s : {Strategy::kClipZero, Strategy::kFrameZero, Strategy::kFrameRepeat}) {
    std::vector<Sample> batch = make_batch(4, 12);
    const std::vector<Sample> before = batch;
    modalfuse::apply_ablation(AblationSpec{s, Modality::kAudio, 0.6, 5}, batch);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      EXPECT_EQ(batch[i].audio.shape(), before[i].audio.shape());
      EXPECT_EQ(batch[i].labels, before[i].labels);
    }
  }
}

TEST(ApplyAblation, ComposingWithProbabilityZeroIsAUnit) {
  const AblationSpec spec{Strategy::kClipZero, Modality::kVideo, 0.5, 21};
  const AblationSpec unit{Strategy::kClipZero, Modality::kVideo, 0.0, 22};
  std::vector<Sample> a = make_batch(20, 13), b = make_batch(20, 13);
  modalfuse::apply_ablation(spec, a);
  modalfuse::apply_ablation(spec, b);
  modalfuse::apply_ablation(unit, b);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].video, b[i].video);
}

TEST(ApplyAblation, ProbabilityOneZeroesEveryStrategy) {
  for (Strategy s : {Strategy::kClipZero, Strategy::kFrameZero, Strategy::kFrameRepeat}) {
    std::vector<Sample> batch = make_batch(3, 14);
    modalfuse::apply_ablation(AblationSpec{s, Modality::kVideo, 1.0, 6}, batch);
    for (const Sample& x : batch) EXPECT_EQ(x.video, Tensor(x.video.shape(), 0.0));
  }
}
