#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "modalfuse/error.hpp"
#include "modalfuse/harness.hpp"

namespace modalfuse {

std::string format_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

const std::vector<double>& default_grid(Strategy strategy) {
  return strategy == Strategy::kClipZero ? kClipGrid : kFrameGrid;
}

std::vector<SweepResult> eval_sweep(const Checkpoint& ck, const Dataset& dataset,
                                    Strategy strategy, Modality modality,
                                    std::span<const double> probabilities, std::uint64_t seed) {
  if (probabilities.empty()) throw Error(ErrorKind::kInvalidArgument, "empty probability list");
  for (double p : probabilities) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorKind::kInvalidArgument,
                  "probability " + format_number(p) + " outside [0, 1]");
    }
  }
  const NormStats stats = norm_stats_from_checkpoint(ck);
  if (dataset.clips.empty()) throw Error(ErrorKind::kInvalidArgument, "dataset has no clips");
  for (const ClipRecord& clip : dataset.clips) {
    if (clip.audio.cols() * kContextFrames != ck.config.d_audio ||
        clip.video.cols() != ck.config.d_video) {
      throw Error(ErrorKind::kDimension,
                  "clip " + std::to_string(clip.id) + " feature dims " +
                      std::to_string(clip.audio.cols()) + "/" + std::to_string(clip.video.cols()) +
                      " do not match the checkpoint (" +
                      std::to_string(ck.config.d_audio / kContextFrames) + "/" +
                      std::to_string(ck.config.d_video) + ")");
    }
  }
  const SplitIndices splits = split_dataset(dataset.clips.size(), splits_from_checkpoint(ck));
  const PreparedSplit val =
      prepare_split(dataset, splits.val, stats, ck.config.seq_len, WindowMode::kEval);

  std::vector<SweepResult> rows;
  for (double p : probabilities) {
    const AblationSpec spec{strategy, modality, p, seed};
    const EvalSummary s = evaluate(ck.params, ck.config, val, spec).summary;
    rows.push_back({strategy, modality, p, seed, s.ccc_valence, s.ccc_arousal});
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepResult> rows) {
  std::string out = std::string(kSweepCsvHeader) + "\n";
  for (const SweepResult& r : rows) {
    out += std::string(to_string(r.strategy)) + "," + std::string(to_string(r.modality)) + "," +
           format_number(r.probability) + "," + std::to_string(r.seed) + "," +
           format_number(r.ccc_valence) + "," + format_number(r.ccc_arousal) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// report

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& s, const std::string& context) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorKind::kInvalidArgument, context + ": not a number: \"" + s + "\"");
  }
  return v;
}

std::vector<std::string> csv_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

struct Key {
  std::string strategy, modality, probability;
  auto operator<=>(const Key&) const = default;
  std::string str() const { return strategy + "/" + modality + "/p=" + probability; }
};

struct ModelColumn {
  std::string label;
  std::map<Key, std::pair<double, double>> values;
};

constexpr std::string_view kValenceSuffix = ".ccc_valence";
constexpr std::string_view kArousalSuffix = ".ccc_arousal";

Key make_key(const std::vector<std::string>& f, const std::string& context) {
  parse_strategy(f[0]);
  parse_modality(f[1]);
  return {f[0], f[1], format_number(parse_double(f[2], context))};
}

}  // namespace

Report merge_report(std::span<const ReportInput> inputs) {
  if (inputs.empty()) throw Error(ErrorKind::kInvalidArgument, "report needs at least one CSV");
  std::vector<Key> order;
  std::vector<ModelColumn> models;
  auto note_key = [&](const Key& k) {
    if (std::find(order.begin(), order.end(), k) == order.end()) order.push_back(k);
  };
  auto model_index = [&](const std::string& label) {
    for (std::size_t i = 0; i < models.size(); ++i) {
      if (models[i].label == label) {
        throw Error(ErrorKind::kInvalidArgument, "duplicate model label \"" + label + "\"");
      }
    }
    models.push_back({label, {}});
    return models.size() - 1;
  };

  for (const ReportInput& input : inputs) {
    const auto lines = csv_lines(input.csv_text);
    if (lines.empty()) throw Error(ErrorKind::kInvalidArgument, input.label + ": empty CSV");
    const auto header = split_line(lines[0]);
    if (lines[0] == kSweepCsvHeader) {
      const std::size_t m = model_index(input.label);
      for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto f = split_line(lines[i]);
        const std::string ctx = input.label + " line " + std::to_string(i + 1);
        if (f.size() != 6) throw Error(ErrorKind::kInvalidArgument, ctx + ": expected 6 fields");
        const Key k = make_key(f, ctx);
        if (!models[m].values.emplace(k, std::pair{parse_double(f[4], ctx), parse_double(f[5], ctx)})
                 .second) {
          throw Error(ErrorKind::kInvalidArgument, ctx + ": duplicate key " + k.str());
        }
        note_key(k);
      }
      continue;
    }
    // merged form: strategy,modality,probability,<label>.ccc_valence,<label>.ccc_arousal,...
    if (header.size() < 5 || (header.size() - 3) % 2 != 0 || header[0] != "strategy" ||
        header[1] != "modality" || header[2] != "probability") {
      throw Error(ErrorKind::kInvalidArgument, input.label + ": unrecognised CSV header");
    }
    std::vector<std::size_t> cols;
    for (std::size_t c = 3; c < header.size(); c += 2) {
      const std::string& v = header[c];
      const std::string& a = header[c + 1];
      if (!v.ends_with(kValenceSuffix) || !a.ends_with(kArousalSuffix) ||
          v.substr(0, v.size() - kValenceSuffix.size()) !=
              a.substr(0, a.size() - kArousalSuffix.size())) {
        throw Error(ErrorKind::kInvalidArgument, input.label + ": malformed model columns");
      }
      cols.push_back(model_index(v.substr(0, v.size() - kValenceSuffix.size())));
    }
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto f = split_line(lines[i]);
      const std::string ctx = input.label + " line " + std::to_string(i + 1);
      if (f.size() != header.size()) {
        throw Error(ErrorKind::kInvalidArgument, ctx + ": field count mismatch");
      }
      const Key k = make_key(f, ctx);
      for (std::size_t m = 0; m < cols.size(); ++m) {
        const auto value = std::pair{parse_double(f[3 + 2 * m], ctx), parse_double(f[4 + 2 * m], ctx)};
        if (!models[cols[m]].values.emplace(k, value).second) {
          throw Error(ErrorKind::kInvalidArgument, ctx + ": duplicate key " + k.str());
        }
      }
      note_key(k);
    }
  }

  std::string missing;
  for (const ModelColumn& m : models) {
    for (const Key& k : order) {
      if (!m.values.contains(k)) missing += "\n  " + m.label + ": " + k.str();
    }
  }
  if (!missing.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "inconsistent grids, missing keys:" + missing);
  }

  Report report;
  report.csv = "strategy,modality,probability";
  for (const ModelColumn& m : models) {
    report.csv += "," + m.label + std::string(kValenceSuffix) + "," + m.label +
                  std::string(kArousalSuffix);
  }
  report.csv += "\n";
  for (const Key& k : order) {
    report.csv += k.strategy + "," + k.modality + "," + k.probability;
    for (const ModelColumn& m : models) {
      const auto& [v, a] = m.values.at(k);
      report.csv += "," + format_number(v) + "," + format_number(a);
    }
    report.csv += "\n";
  }

  // aligned text table, CCC at 4 decimals
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> head = {"strategy", "modality", "p"};
  for (const ModelColumn& m : models) {
    head.push_back(m.label + " V");
    head.push_back(m.label + " A");
  }
  cells.push_back(head);
  for (const Key& k : order) {
    std::vector<std::string> row = {k.strategy, k.modality, k.probability};
    for (const ModelColumn& m : models) {
      const auto& [v, a] = m.values.at(k);
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", v);
      row.emplace_back(buf);
      std::snprintf(buf, sizeof buf, "%.4f", a);
      row.emplace_back(buf);
    }
    cells.push_back(row);
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) line += "  ";
      const std::size_t pad = width[c] - row[c].size();
      if (c < 3) {
        line += row[c] + std::string(pad, ' ');
      } else {
        line += std::string(pad, ' ') + row[c];
      }
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    report.table += line + "\n";
  }
  return report;
}

}  // namespace modalfuse
