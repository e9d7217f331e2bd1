// Exercises the shared library through its C header only.
#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "modalfuse/modalfuse.h"

namespace fs = std::filesystem;

namespace {

const char* kRun = R"({
  "model": {"num_layers": 1, "d_model": 8, "num_heads": 2, "ffn_mult": 2},
  "train": {"lr": 0.003, "epochs": 1, "batch_size": 4, "seq_len": 20, "seed": 3},
  "ablation": {"strategy": "clip_zero", "modality": "video", "probability": 0.5},
  "data": {"n_clips": 5, "clip_seconds": 3, "d_audio_lld": 2, "d_video": 3, "seed": 4},
  "splits": {"train": 0.8, "val": 0.2}
})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CApi : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("mf_capi_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
    ASSERT_EQ(mf_dataset_synthesize(kRun, &ds_), MF_OK) << mf_last_error();
  }
  void TearDown() override {
    mf_dataset_free(ds_);
    fs::remove_all(dir_);
  }
  std::string path(const char* name) const { return (dir_ / name).string(); }

  fs::path dir_;
  mf_dataset* ds_ = nullptr;
};

}  // namespace

TEST_F(CApi, DatasetRoundTrip) {
  ASSERT_EQ(mf_dataset_num_clips(ds_), 5u);
  mf_clip_info info{};
  ASSERT_EQ(mf_dataset_clip_info(ds_, 1, &info), MF_OK);
  EXPECT_EQ(info.fps_video, 30u);
  EXPECT_EQ(info.frames_video, 90u);
  EXPECT_EQ(info.dim_video, 3u);
  EXPECT_EQ(info.fps_audio, 100u);
  EXPECT_EQ(info.frames_audio, 300u);
  EXPECT_EQ(info.dim_audio, 2u);
  EXPECT_EQ(mf_dataset_clip_info(ds_, 5, &info), MF_INVALID_INPUT);

  ASSERT_EQ(mf_dataset_save(ds_, path("a.avxd").c_str()), MF_OK);
  mf_dataset* back = nullptr;
  ASSERT_EQ(mf_dataset_load(path("a.avxd").c_str(), &back), MF_OK);
  ASSERT_EQ(mf_dataset_save(back, path("b.avxd").c_str()), MF_OK);
  EXPECT_EQ(slurp(path("a.avxd")), slurp(path("b.avxd")));
  mf_dataset_free(back);
}

TEST_F(CApi, ErrorsCarryStatusAndKind) {
  mf_dataset* d = nullptr;
  EXPECT_EQ(mf_dataset_load(path("missing.avxd").c_str(), &d), MF_INVALID_INPUT);
  EXPECT_EQ(mf_last_error_kind(), MF_ERR_IO);
  EXPECT_NE(std::string(mf_last_error()), "");

  std::ofstream(path("junk.avxd")) << "NOTADATASETFILE";
  EXPECT_EQ(mf_dataset_load(path("junk.avxd").c_str(), &d), MF_INVALID_INPUT);
  EXPECT_EQ(mf_last_error_kind(), MF_ERR_BAD_MAGIC);

  EXPECT_EQ(mf_dataset_synthesize("{\"n_clips\": ", &d), MF_INVALID_INPUT);
  EXPECT_EQ(mf_dataset_synthesize(nullptr, &d), MF_INVALID_INPUT);
  EXPECT_EQ(d, nullptr);

  mf_model* m = nullptr;
  std::string wrong_width = kRun;
  wrong_width.replace(wrong_width.find("\"num_layers\""), 0, "\"d_video\": 7, ");
  EXPECT_EQ(mf_train(wrong_width.c_str(), ds_, nullptr, &m), MF_DIMENSION_MISMATCH);
  EXPECT_EQ(mf_last_error_kind(), MF_ERR_DIMENSION);
  EXPECT_EQ(m, nullptr);
  EXPECT_EQ(mf_model_load(path("missing.avck").c_str(), &m), MF_INVALID_INPUT);
  EXPECT_EQ(mf_last_error_kind(), MF_ERR_IO);
}

TEST_F(CApi, TrainEvaluateSweepReport) {
  mf_model* m = nullptr;
  ASSERT_EQ(mf_train(kRun, ds_, path("log.csv").c_str(), &m), MF_OK) << mf_last_error();
  EXPECT_NE(std::string(mf_model_config_json(m)).find("\"d_model\":8"), std::string::npos);
  EXPECT_FALSE(slurp(path("log.csv")).empty());

  ASSERT_EQ(mf_model_save(m, path("m.avck").c_str()), MF_OK);
  mf_model* loaded = nullptr;
  ASSERT_EQ(mf_model_load(path("m.avck").c_str(), &loaded), MF_OK);
  ASSERT_EQ(mf_model_save(loaded, path("m2.avck").c_str()), MF_OK);
  EXPECT_EQ(slurp(path("m.avck")), slurp(path("m2.avck")));

  // predict on one window of zeros; wrong sizes are a dimension error
  std::vector<double> audio(20 * 120, 0.0), video(20 * 3, 0.0), out(40, 0.0);
  ASSERT_EQ(mf_model_predict(loaded, audio.data(), audio.size(), video.data(), video.size(),
                             out.data(), out.size()),
            MF_OK);
  for (double v : out) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(mf_model_predict(loaded, audio.data(), audio.size() - 1, video.data(), video.size(),
                             out.data(), out.size()),
            MF_DIMENSION_MISMATCH);
  EXPECT_EQ(mf_last_error_kind(), MF_ERR_DIMENSION);

  mf_eval_result* r = nullptr;
  ASSERT_EQ(mf_evaluate(loaded, ds_, "none", "video", 0.0, 0, &r), MF_OK);
  EXPECT_EQ(mf_eval_result_frames(r), 90u);
  const double clean_v = mf_eval_result_ccc_valence(r);
  EXPECT_NE(mf_eval_result_predictions(r), nullptr);
  EXPECT_NE(mf_eval_result_labels(r), nullptr);
  mf_eval_result_free(r);
  EXPECT_EQ(mf_evaluate(loaded, ds_, "blank", "video", 0.0, 0, &r), MF_INVALID_INPUT);

  double grid[8];
  ASSERT_EQ(mf_default_grid("clip_zero", grid, 8), 5u);
  EXPECT_EQ(grid[1], 0.7);
  mf_sweep_row rows[5];
  ASSERT_EQ(mf_eval_sweep(loaded, ds_, "clip_zero", "video", grid, 5, 0, rows), MF_OK);
  EXPECT_EQ(rows[4].probability, 0.0);
  EXPECT_EQ(rows[4].ccc_valence, clean_v);
  EXPECT_STREQ(rows[0].strategy, "clip_zero");
  ASSERT_EQ(mf_sweep_write_csv(rows, 5, path("a.csv").c_str()), MF_OK);
  ASSERT_EQ(mf_sweep_write_csv(rows, 5, path("b.csv").c_str()), MF_OK);

  const char* labels[] = {"one", "two"};
  const std::string a = path("a.csv"), b = path("b.csv");
  const char* paths[] = {a.c_str(), b.c_str()};
  char* table = nullptr;
  ASSERT_EQ(mf_report(labels, paths, 2, path("merged.csv").c_str(), &table), MF_OK);
  EXPECT_NE(std::string(table).find("two"), std::string::npos);
  mf_string_free(table);
  EXPECT_EQ(slurp(path("merged.csv")).rfind("strategy,modality,probability,one.ccc_valence", 0),
            0u);

  mf_model_free(loaded);
  mf_model_free(m);
}

TEST_F(CApi, GradcheckAndFaultInjection) {
  mf_gradcheck_report rep{};
  ASSERT_EQ(mf_gradcheck(0, &rep), MF_OK);
  EXPECT_EQ(rep.passed, 1);
  ASSERT_EQ(mf_debug_inject_fault("layer_norm", 1.5), MF_OK);
  EXPECT_EQ(mf_gradcheck(0, &rep), MF_CHECK_FAILED);
  EXPECT_EQ(rep.passed, 0);
  mf_debug_clear_faults();
  EXPECT_EQ(mf_gradcheck(0, nullptr), MF_INVALID_INPUT);
}
