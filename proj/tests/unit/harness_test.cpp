#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "modalfuse/autodiff.hpp"
#include "modalfuse/error.hpp"
#include "modalfuse/harness.hpp"

using modalfuse::Error;
using modalfuse::ErrorKind;
using modalfuse::Modality;
using modalfuse::RunConfig;
using modalfuse::Strategy;

namespace {

const char* kTinyRun = R"({
  "model": {"num_layers": 1, "d_model": 8, "num_heads": 2, "ffn_mult": 2},
  "train": {"lr": 0.003, "epochs": 2, "batch_size": 4, "seq_len": 20, "seed": 3},
  "ablation": {"strategy": "frame_zero", "modality": "video", "probability": 0.5},
  "data": {"n_clips": 5, "clip_seconds": 3, "d_audio_lld": 2, "d_video": 3, "seed": 4},
  "splits": {"train": 0.8, "val": 0.2}
})";

std::string error_text(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidArgument) << e.what();
    return e.what();
  }
  ADD_FAILURE() << "expected modalfuse::Error";
  return {};
}

nlohmann::json tiny_json() { return nlohmann::json::parse(kTinyRun); }

modalfuse::Dataset tiny_dataset() {
  return modalfuse::generate_synthetic(*modalfuse::run_config_from_text(kTinyRun).synthetic);
}

// One trained model shared by the slower tests.
const modalfuse::TrainResult& tiny_model() {
  static const modalfuse::TrainResult result =
      modalfuse::train_model(modalfuse::run_config_from_text(kTinyRun), tiny_dataset());
  return result;
}

bool contains(const std::string& text, const std::string& needle) {
  return text.find(needle) != std::string::npos;
}

}  // namespace

TEST(RunConfigParse, ReadsEverySection) {
  const RunConfig c = modalfuse::run_config_from_text(kTinyRun);
  EXPECT_EQ(c.model.d_model, 8u);
  EXPECT_EQ(c.model.seq_len, 20u);
  EXPECT_EQ(c.train.batch_size, 4u);
  EXPECT_EQ(c.ablation.strategy, Strategy::kFrameZero);
  EXPECT_FALSE(c.ablation_seed_given);
  ASSERT_TRUE(c.synthetic.has_value());
  EXPECT_EQ(c.synthetic->d_video, 3u);
  EXPECT_EQ(modalfuse::run_config_from_json(modalfuse::to_json(c)).ablation_seed(),
            c.ablation_seed());
}

TEST(RunConfigParse, ErrorsNameTheKeyPath) {
  auto with = [](const std::string& pointer, nlohmann::json value) {
    nlohmann::json j = tiny_json();
    j[nlohmann::json::json_pointer(pointer)] = std::move(value);
    return j;
  };
  EXPECT_TRUE(contains(error_text([&] { modalfuse::run_config_from_json(with("/train/lr", -1)); }),
                       "train.lr"));
  EXPECT_TRUE(contains(
      error_text([&] { modalfuse::run_config_from_json(with("/model/d_modle", 8)); }),
      "model.d_modle"));
  EXPECT_TRUE(contains(
      error_text([&] { modalfuse::run_config_from_json(with("/ablation/strategy", "drop")); }),
      "ablation.strategy"));
  EXPECT_TRUE(contains(
      error_text([&] { modalfuse::run_config_from_json(with("/ablation/probability", 1.5)); }),
      "ablation.probability"));
  EXPECT_TRUE(contains(
      error_text([&] { modalfuse::run_config_from_json(with("/data/sigma_video", -1.0)); }),
      "sigma_video"));
  EXPECT_TRUE(contains(error_text([&] { modalfuse::run_config_from_json(with("/extra", 1)); }),
                       "extra"));
  EXPECT_TRUE(contains(
      error_text([&] { modalfuse::run_config_from_json(with("/splits/val", 0.5)); }), "splits"));
  EXPECT_TRUE(contains(error_text([] { modalfuse::run_config_from_text("{\"model\": "); }),
                       "invalid JSON"));
}

TEST(RunConfigParse, SeqLenMustAgree) {
  nlohmann::json j = tiny_json();
  j["model"]["seq_len"] = 30;
  EXPECT_TRUE(contains(error_text([&] { modalfuse::run_config_from_json(j); }), "seq_len"));
  j["train"]["seq_len"] = 30;
  EXPECT_EQ(modalfuse::run_config_from_json(j).model.seq_len, 30u);
}

TEST(Splits, ContiguousAndDisjoint) {
  const auto s = modalfuse::split_dataset(200, {0.8, 0.2});
  ASSERT_EQ(s.train.size(), 160u);
  ASSERT_EQ(s.val.size(), 40u);
  EXPECT_EQ(s.train.front(), 0u);
  EXPECT_EQ(s.val.front(), 160u);
  EXPECT_EQ(s.val.back(), 199u);
  EXPECT_THROW(modalfuse::split_dataset(3, {0.8, 0.2}), Error);
}

TEST(Sweep, GridsAndCsvFormat) {
  EXPECT_EQ(modalfuse::default_grid(Strategy::kClipZero),
            (std::vector<double>{1.0, 0.7, 0.5, 0.3, 0.0}));
  EXPECT_EQ(modalfuse::default_grid(Strategy::kFrameZero),
            (std::vector<double>{1.0, 0.95, 0.90, 0.85, 0.0}));
  EXPECT_EQ(modalfuse::default_grid(Strategy::kFrameRepeat),
            modalfuse::default_grid(Strategy::kFrameZero));
  const std::vector<modalfuse::SweepResult> rows = {
      {Strategy::kFrameZero, Modality::kVideo, 0.95, 7, 0.5, -0.25}};
  EXPECT_EQ(modalfuse::sweep_csv(rows),
            "strategy,modality,probability,seed,ccc_valence,ccc_arousal\n"
            "frame_zero,video,0.95,7,0.5,-0.25\n");
  EXPECT_EQ(modalfuse::format_number(0.1), "0.1");
  EXPECT_EQ(std::stod(modalfuse::format_number(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(Report, MergesModelsOnSharedKeys) {
  const std::vector<modalfuse::ReportInput> inputs = {
      {"base", "strategy,modality,probability,seed,ccc_valence,ccc_arousal\n"
               "clip_zero,video,1,0,0.1,0.2\n"},
      {"aug", "strategy,modality,probability,seed,ccc_valence,ccc_arousal\n"
              "clip_zero,video,1,0,0.7,0.8\n"}};
  const modalfuse::Report r = modalfuse::merge_report(inputs);
  EXPECT_EQ(r.csv,
            "strategy,modality,probability,base.ccc_valence,base.ccc_arousal,aug.ccc_valence,"
            "aug.ccc_arousal\n"
            "clip_zero,video,1,0.1,0.2,0.7,0.8\n");
  EXPECT_TRUE(contains(r.table, "base"));

  // a merged CSV merges again unchanged
  const std::vector<modalfuse::ReportInput> again = {{"ignored", r.csv}};
  EXPECT_EQ(modalfuse::merge_report(again).csv, r.csv);
}

TEST(Report, DisjointGridsAreRejected) {
  const std::vector<modalfuse::ReportInput> inputs = {
      {"a", "strategy,modality,probability,seed,ccc_valence,ccc_arousal\n"
            "clip_zero,video,1,0,0.1,0.2\n"},
      {"b", "strategy,modality,probability,seed,ccc_valence,ccc_arousal\n"
            "clip_zero,video,0.5,0,0.1,0.2\n"}};
  const std::string msg = error_text([&] { modalfuse::merge_report(inputs); });
  EXPECT_TRUE(contains(msg, "missing")) << msg;
  const std::vector<modalfuse::ReportInput> dup = {inputs[0], inputs[0]};
  EXPECT_THROW(modalfuse::merge_report(dup), Error);
}

TEST(Gradcheck, PassesAndIsDeterministic) {
  const modalfuse::GradcheckReport a = modalfuse::gradcheck(0);
  EXPECT_TRUE(a.passed) << a.worst_param << "[" << a.worst_index << "] " << a.max_rel_error;
  EXPECT_LT(a.max_rel_error, 1e-4);
  EXPECT_GT(a.checked, 1000u);
  const modalfuse::GradcheckReport b = modalfuse::gradcheck(0);
  EXPECT_EQ(a.max_rel_error, b.max_rel_error);
  EXPECT_EQ(a.worst_param, b.worst_param);
}

TEST(Gradcheck, DetectsAWrongBackwardRule) {
  for (const char* op : {"layer_norm", "attention", "linear"}) {
    modalfuse::ad::testing::inject_backward_fault(op, 1.5);
    const modalfuse::GradcheckReport r = modalfuse::gradcheck(0);
    modalfuse::ad::testing::clear_backward_faults();
    EXPECT_FALSE(r.passed) << op;
    EXPECT_GT(r.max_rel_error, 1e-2) << op;
  }
}

TEST(Training, LogsEveryEpochAndStoresNormStats) {
  const modalfuse::TrainResult& r = tiny_model();
  ASSERT_EQ(r.epochs.size(), 2u);
  EXPECT_GE(r.best_epoch, 1u);
  EXPECT_EQ(r.checkpoint.config.d_audio, 2 * modalfuse::kContextFrames);
  EXPECT_EQ(r.checkpoint.config.d_video, 3u);
  const modalfuse::NormStats stats = modalfuse::norm_stats_from_checkpoint(r.checkpoint);
  EXPECT_EQ(stats.audio.mean.size(), 2u);
  EXPECT_EQ(stats.video.std.size(), 3u);
  for (const auto& e : r.epochs) EXPECT_TRUE(std::isfinite(e.train_loss));
  const std::string header = modalfuse::epoch_log_header();
  const std::string row = modalfuse::epoch_log_row(r.epochs[0]);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
}

TEST(Training, SameSeedGivesByteIdenticalCheckpoint) {
  const modalfuse::TrainResult again =
      modalfuse::train_model(modalfuse::run_config_from_text(kTinyRun), tiny_dataset());
  EXPECT_EQ(modalfuse::encode_checkpoint(again.checkpoint),
            modalfuse::encode_checkpoint(tiny_model().checkpoint));
}

TEST(Training, ConfigWidthsMustMatchData) {
  RunConfig c = modalfuse::run_config_from_text(kTinyRun);
  c.d_video = 4;
  try {
    modalfuse::train_model(c, tiny_dataset());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
  }
}

TEST(EvalSweep, ProbabilityZeroMatchesCleanEvaluation) {
  const modalfuse::Checkpoint& ck = tiny_model().checkpoint;
  const modalfuse::Dataset ds = tiny_dataset();
  const auto splits = modalfuse::split_dataset(ds.clips.size(), modalfuse::splits_from_checkpoint(ck));
  const modalfuse::PreparedSplit val =
      modalfuse::prepare_split(ds, splits.val, modalfuse::norm_stats_from_checkpoint(ck),
                               ck.config.seq_len, modalfuse::WindowMode::kEval);
  const modalfuse::EvalSummary clean =
      modalfuse::evaluate(ck.params, ck.config, val, {Strategy::kNone, Modality::kVideo, 0.0, 0})
          .summary;
  const std::vector<double> probs = {0.0, 1.0};
  for (Strategy s : {Strategy::kClipZero, Strategy::kFrameZero, Strategy::kFrameRepeat}) {
    const auto rows = modalfuse::eval_sweep(ck, ds, s, Modality::kVideo, probs, 5);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].ccc_valence, clean.ccc_valence);
    EXPECT_EQ(rows[0].ccc_arousal, clean.ccc_arousal);
  }
  // all strategies agree at p = 1 (every frame zeroed)
  const auto cz = modalfuse::eval_sweep(ck, ds, Strategy::kClipZero, Modality::kVideo, probs, 5);
  const auto fr = modalfuse::eval_sweep(ck, ds, Strategy::kFrameRepeat, Modality::kVideo, probs, 9);
  EXPECT_EQ(cz[1].ccc_valence, fr[1].ccc_valence);
  const auto again = modalfuse::eval_sweep(ck, ds, Strategy::kClipZero, Modality::kVideo, probs, 5);
  EXPECT_EQ(modalfuse::sweep_csv(again), modalfuse::sweep_csv(cz));
}

TEST(EvalSweep, RejectsBadInputs) {
  const modalfuse::Checkpoint& ck = tiny_model().checkpoint;
  const modalfuse::Dataset ds = tiny_dataset();
  const std::vector<double> bad = {0.5, 1.2};
  EXPECT_THROW(modalfuse::eval_sweep(ck, ds, Strategy::kClipZero, Modality::kVideo, bad, 0), Error);
  const std::vector<double> none;
  EXPECT_THROW(modalfuse::eval_sweep(ck, ds, Strategy::kClipZero, Modality::kVideo, none, 0),
               Error);
  nlohmann::json j = tiny_json();
  j["data"]["d_video"] = 5;
  const modalfuse::Dataset wide =
      modalfuse::generate_synthetic(*modalfuse::run_config_from_json(j).synthetic);
  const std::vector<double> probs = {0.0};
  try {
    modalfuse::eval_sweep(ck, wide, Strategy::kClipZero, Modality::kVideo, probs, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
  }
}

TEST(EvalSweep, VideoContentIrrelevantUnderFullClipZero) {
  const modalfuse::Checkpoint& ck = tiny_model().checkpoint;
  const modalfuse::Dataset a = tiny_dataset();
  modalfuse::Dataset b = a;
  for (auto& clip : b.clips) {
    for (double& v : clip.video.data()) v = -v + 0.5;
  }
  const auto split = modalfuse::split_dataset(a.clips.size(), modalfuse::splits_from_checkpoint(ck));
  const modalfuse::NormStats stats = modalfuse::norm_stats_from_checkpoint(ck);
  const modalfuse::AblationSpec off{Strategy::kClipZero, Modality::kVideo, 1.0, 0};
  const auto pa = modalfuse::evaluate(
      ck.params, ck.config,
      modalfuse::prepare_split(a, split.val, stats, ck.config.seq_len, modalfuse::WindowMode::kEval),
      off);
  const auto pb = modalfuse::evaluate(
      ck.params, ck.config,
      modalfuse::prepare_split(b, split.val, stats, ck.config.seq_len, modalfuse::WindowMode::kEval),
      off);
  EXPECT_EQ(pa.predictions, pb.predictions);
}
