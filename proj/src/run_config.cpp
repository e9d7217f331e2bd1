#include <cmath>

#include "modalfuse/error.hpp"
#include "modalfuse/harness.hpp"
#include "modalfuse/rng.hpp"

namespace modalfuse {

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& what) {
  throw Error(ErrorKind::kInvalidArgument, key + ": " + what);
}

const nlohmann::json& require_object(const nlohmann::json& j, const std::string& key) {
  if (!j.is_object()) bad(key, "expected a JSON object");
  return j;
}

std::uint64_t get_count(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    bad(key, "must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

double get_number(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number()) bad(key, "must be a number");
  return v.get<double>();
}

std::string get_string(const nlohmann::json& v, const std::string& key) {
  if (!v.is_string()) bad(key, "must be a string");
  return v.get<std::string>();
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (!(train.lr > 0.0) || !std::isfinite(train.lr)) bad("train.lr", "must be > 0");
  if (train.epochs < 1) bad("train.epochs", "must be >= 1");
  if (train.batch_size < 1) bad("train.batch_size", "must be >= 1");
  if (train.seq_len < 1) bad("train.seq_len", "must be >= 1");
  if (train.seq_len != model.seq_len) {
    bad("train.seq_len", "must equal model.seq_len (" + std::to_string(model.seq_len) + ")");
  }
  if (!(ablation.probability >= 0.0 && ablation.probability <= 1.0)) {
    bad("ablation.probability", "must lie in [0, 1]");
  }
  if (!(splits.train > 0.0)) bad("splits.train", "must be > 0");
  if (!(splits.val > 0.0)) bad("splits.val", "must be > 0");
  if (splits.train + splits.val > 1.0 + 1e-12) bad("splits", "train + val must be <= 1");
  if (synthetic) synthetic->validate();
}

std::uint64_t RunConfig::ablation_seed() const {
  return ablation_seed_given ? ablation.seed : derive_seed(train.seed, 0xab1a7e);
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  require_object(j, "config");
  RunConfig c;
  bool model_seq_len = false, train_seq_len = false;
  for (const auto& [section, body] : j.items()) {
    if (section == "model") {
      require_object(body, "model");
      nlohmann::json rest = nlohmann::json::object();
      for (const auto& [key, value] : body.items()) {
        const std::string path = "model." + key;
        if (key == "d_audio") {
          c.d_audio = get_count(value, path);
        } else if (key == "d_video") {
          c.d_video = get_count(value, path);
        } else {
          if (key == "seq_len") model_seq_len = true;
          rest[key] = value;
        }
      }
      try {
        c.model = model_config_from_json(rest);
      } catch (const Error& e) {
        throw Error(ErrorKind::kInvalidArgument, std::string(e.what()));
      }
    } else if (section == "train") {
      require_object(body, "train");
      for (const auto& [key, value] : body.items()) {
        const std::string path = "train." + key;
        if (key == "lr") {
          c.train.lr = get_number(value, path);
        } else if (key == "epochs") {
          c.train.epochs = get_count(value, path);
        } else if (key == "batch_size") {
          c.train.batch_size = get_count(value, path);
        } else if (key == "seq_len") {
          c.train.seq_len = get_count(value, path);
          train_seq_len = true;
        } else if (key == "seed") {
          c.train.seed = get_count(value, path);
        } else {
          bad(path, "unknown key");
        }
      }
    } else if (section == "ablation") {
      require_object(body, "ablation");
      for (const auto& [key, value] : body.items()) {
        const std::string path = "ablation." + key;
        try {
          if (key == "strategy") {
            c.ablation.strategy = parse_strategy(get_string(value, path));
          } else if (key == "modality") {
            c.ablation.modality = parse_modality(get_string(value, path));
          } else if (key == "probability") {
            c.ablation.probability = get_number(value, path);
          } else if (key == "seed") {
            c.ablation.seed = get_count(value, path);
            c.ablation_seed_given = true;
          } else {
            bad(path, "unknown key");
          }
        } catch (const Error& e) {
          const std::string what = e.what();
          if (what.starts_with(path)) throw;
          bad(path, what);
        }
      }
    } else if (section == "data") {
      require_object(body, "data");
      if (body.contains("path")) {
        if (body.size() != 1) bad("data", "\"path\" cannot be combined with synthetic keys");
        c.data_path = get_string(body.at("path"), "data.path");
      } else {
        c.synthetic = synthetic_config_from_json(body);
      }
    } else if (section == "splits") {
      require_object(body, "splits");
      for (const auto& [key, value] : body.items()) {
        const std::string path = "splits." + key;
        if (key == "train") {
          c.splits.train = get_number(value, path);
        } else if (key == "val") {
          c.splits.val = get_number(value, path);
        } else {
          bad(path, "unknown key");
        }
      }
    } else {
      bad(section, "unknown key");
    }
  }
  if (train_seq_len && !model_seq_len) c.model.seq_len = c.train.seq_len;
  if (model_seq_len && !train_seq_len) c.train.seq_len = c.model.seq_len;
  c.validate();
  return c;
}

RunConfig run_config_from_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kInvalidArgument, std::string("config: invalid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json model = to_json(c.model);
  model.erase("d_audio");
  model.erase("d_video");
  if (c.d_audio) model["d_audio"] = *c.d_audio;
  if (c.d_video) model["d_video"] = *c.d_video;
  nlohmann::json j = {
      {"model", model},
      {"train",
       {{"lr", c.train.lr},
        {"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"seq_len", c.train.seq_len},
        {"seed", c.train.seed}}},
      {"ablation",
       {{"strategy", std::string(to_string(c.ablation.strategy))},
        {"modality", std::string(to_string(c.ablation.modality))},
        {"probability", c.ablation.probability}}},
      {"splits", {{"train", c.splits.train}, {"val", c.splits.val}}}};
  if (c.ablation_seed_given) j["ablation"]["seed"] = c.ablation.seed;
  if (c.synthetic) j["data"] = to_json(*c.synthetic);
  if (c.data_path) j["data"] = {{"path", *c.data_path}};
  return j;
}

}  // namespace modalfuse
