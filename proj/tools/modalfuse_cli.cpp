// Command-line harness over the modalfuse C API.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "modalfuse/modalfuse.h"

namespace {

constexpr int kExitInvalid = 2;

int report_failure(mf_status status, const char* what) {
  std::cerr << "error: " << what << ": " << mf_last_error() << "\n";
  return static_cast<int>(status);
}

bool read_text(const std::string& path, std::string& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::ostringstream ss;
  ss << in.rdbuf();
  out = ss.str();
  return true;
}

bool parse_probs(const std::string& text, std::vector<double>& out) {
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) return false;
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (end == item.c_str() || *end != '\0') return false;
    out.push_back(v);
  }
  return !out.empty();
}

struct DatasetHandle {
  mf_dataset* p = nullptr;
  ~DatasetHandle() { mf_dataset_free(p); }
};

struct ModelHandle {
  mf_model* p = nullptr;
  ~ModelHandle() { mf_model_free(p); }
};

int cmd_synth(const std::string& config_path, const std::string& out_path) {
  std::string text;
  if (!read_text(config_path, text)) {
    std::cerr << "error: cannot read config " << config_path << "\n";
    return kExitInvalid;
  }
  DatasetHandle ds;
  if (mf_status s = mf_dataset_synthesize(text.c_str(), &ds.p); s != MF_OK) {
    return report_failure(s, "synth");
  }
  if (mf_status s = mf_dataset_save(ds.p, out_path.c_str()); s != MF_OK) {
    return report_failure(s, "synth");
  }
  const size_t n = mf_dataset_num_clips(ds.p);
  std::cout << "clips: " << n << "\n";
  if (n > 0) {
    mf_clip_info info{};
    mf_dataset_clip_info(ds.p, 0, &info);
    std::cout << "audio: " << info.dim_audio << " dims @ " << info.fps_audio << " fps\n"
              << "video: " << info.dim_video << " dims @ " << info.fps_video << " fps\n";
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_path, const std::string& log_path) {
  std::string text;
  if (!read_text(config_path, text)) {
    std::cerr << "error: cannot read config " << config_path << "\n";
    return kExitInvalid;
  }
  DatasetHandle ds;
  const mf_status loaded = data_path.empty() ? mf_dataset_synthesize(text.c_str(), &ds.p)
                                             : mf_dataset_load(data_path.c_str(), &ds.p);
  if (loaded != MF_OK) return report_failure(loaded, "train");
  ModelHandle model;
  if (mf_status s = mf_train(text.c_str(), ds.p, log_path.empty() ? nullptr : log_path.c_str(),
                             &model.p);
      s != MF_OK) {
    return report_failure(s, "train");
  }
  if (mf_status s = mf_model_save(model.p, out_path.c_str()); s != MF_OK) {
    return report_failure(s, "train");
  }
  std::cout << "saved " << out_path << "\n";
  return 0;
}

int cmd_eval_sweep(const std::string& model_path, const std::string& data_path,
                   const std::string& strategy, const std::string& modality,
                   const std::string& probs_text, uint64_t seed, const std::string& out_path) {
  std::vector<double> probs;
  if (probs_text.empty()) {
    const size_t n = mf_default_grid(strategy.c_str(), nullptr, 0);
    if (n == 0) {
      std::cerr << "error: unknown strategy '" << strategy << "'\n";
      return kExitInvalid;
    }
    probs.resize(n);
    mf_default_grid(strategy.c_str(), probs.data(), n);
  } else if (!parse_probs(probs_text, probs)) {
    std::cerr << "error: --probs must be a comma-separated list of numbers\n";
    return kExitInvalid;
  }
  ModelHandle model;
  if (mf_status s = mf_model_load(model_path.c_str(), &model.p); s != MF_OK) {
    return report_failure(s, "eval-sweep");
  }
  DatasetHandle ds;
  if (mf_status s = mf_dataset_load(data_path.c_str(), &ds.p); s != MF_OK) {
    return report_failure(s, "eval-sweep");
  }
  std::vector<mf_sweep_row> rows(probs.size());
  if (mf_status s = mf_eval_sweep(model.p, ds.p, strategy.c_str(), modality.c_str(), probs.data(),
                                  probs.size(), seed, rows.data());
      s != MF_OK) {
    return report_failure(s, "eval-sweep");
  }
  for (const auto& r : rows) {
    std::printf("%-12s %-6s p=%-5g valence=%.4f arousal=%.4f\n", r.strategy, r.modality,
                r.probability, r.ccc_valence, r.ccc_arousal);
  }
  if (mf_status s = mf_sweep_write_csv(rows.data(), rows.size(), out_path.c_str()); s != MF_OK) {
    return report_failure(s, "eval-sweep");
  }
  return 0;
}

int cmd_gradcheck(uint64_t seed) {
  mf_gradcheck_report r{};
  const mf_status s = mf_gradcheck(seed, &r);
  if (s != MF_OK && s != MF_CHECK_FAILED) return report_failure(s, "gradcheck");
  std::printf("%s: %zu gradients checked, max relative error %.3e at %s[%zu]\n",
              r.passed ? "PASS" : "FAIL", r.checked, r.max_rel_error, r.worst_param,
              r.worst_index);
  return static_cast<int>(s);
}

// Inputs are PATH or LABEL=PATH; a bare path is labelled by its file stem.
int cmd_report(const std::vector<std::string>& inputs, const std::string& out_path) {
  std::vector<std::string> labels, paths;
  for (const auto& in : inputs) {
    const auto eq = in.find('=');
    if (eq != std::string::npos && eq > 0) {
      labels.push_back(in.substr(0, eq));
      paths.push_back(in.substr(eq + 1));
    } else {
      labels.push_back(std::filesystem::path(in).stem().string());
      paths.push_back(in);
    }
  }
  std::vector<const char*> label_ptrs, path_ptrs;
  for (size_t i = 0; i < labels.size(); ++i) {
    label_ptrs.push_back(labels[i].c_str());
    path_ptrs.push_back(paths[i].c_str());
  }
  char* table = nullptr;
  if (mf_status s = mf_report(label_ptrs.data(), path_ptrs.data(), labels.size(),
                              out_path.empty() ? nullptr : out_path.c_str(), &table);
      s != MF_OK) {
    return report_failure(s, "report");
  }
  std::cout << table;
  mf_string_free(table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal transformer training and missing-modality evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", mf_version());

  std::string config, data, out, model, strategy, modality, probs, log, fault;
  uint64_t seed = 0;
  std::vector<std::string> csvs;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset file");
  synth->add_option("--config", config, "Run or synthetic-data config (JSON)")->required();
  synth->add_option("--out", out, "Dataset file to write")->required();

  auto* train = app.add_subcommand("train", "Train a model and save the best checkpoint");
  train->add_option("--config", config, "Run config (JSON)")->required();
  train->add_option("--data", data, "Dataset file (default: synthesize from config)");
  train->add_option("--out", out, "Checkpoint to write")->required();
  train->add_option("--log", log, "Per-epoch CSV log");

  auto* sweep = app.add_subcommand("eval-sweep", "Evaluate under a grid of corruption levels");
  sweep->add_option("--model", model, "Checkpoint")->required();
  sweep->add_option("--data", data, "Dataset file")->required();
  sweep->add_option("--strategy", strategy, "none|clip_zero|frame_zero|frame_repeat")->required();
  sweep->add_option("--modality", modality, "audio|video")->required();
  sweep->add_option("--probs", probs, "Comma-separated probabilities (default: strategy grid)");
  sweep->add_option("--seed", seed, "Corruption seed")->capture_default_str();
  sweep->add_option("--out", out, "Sweep CSV to write")->required();

  auto* grad = app.add_subcommand("gradcheck", "Check gradients against finite differences");
  grad->add_option("--seed", seed, "Seed")->capture_default_str();
  grad->add_option("--inject-fault", fault, "Scale the backward rule of OP")->group("");

  auto* report = app.add_subcommand("report", "Merge sweep CSVs into one table");
  report->add_option("csv", csvs, "Sweep CSVs as PATH or LABEL=PATH")->required();
  report->add_option("--out", out, "Merged CSV to write");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalid;
  }

  if (*synth) return cmd_synth(config, out);
  if (*train) return cmd_train(config, data, out, log);
  if (*sweep) return cmd_eval_sweep(model, data, strategy, modality, probs, seed, out);
  if (*grad) {
    if (!fault.empty()) mf_debug_inject_fault(fault.c_str(), 1.5);
    return cmd_gradcheck(seed);
  }
  if (*report) return cmd_report(csvs, out);
  return kExitInvalid;
}
