#include "modalfuse/model.hpp"

#include <algorithm>
#include <cmath>

#include "modalfuse/error.hpp"
#include "modalfuse/rng.hpp"

namespace modalfuse {

namespace {

constexpr const char* kAttentionNames[] = {"wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"};

void append_attention(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
                      std::size_t d) {
  for (const char* name : kAttentionNames) {
    const bool is_weight = name[0] == 'w';
    out.emplace_back(prefix + "." + name, is_weight ? Shape{d, d} : Shape{d});
  }
}

void append_branch(std::vector<std::pair<std::string, Shape>>& out, const std::string& branch,
                   std::size_t d_in, const ModelConfig& c) {
  const std::size_t d = c.d_model;
  const std::size_t hidden = c.ffn_mult * d;
  out.emplace_back(branch + ".input.weight", Shape{d_in, d});
  out.emplace_back(branch + ".input.bias", Shape{d});
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string layer = branch + ".layer" + std::to_string(l);
    append_attention(out, layer + ".self_attn", d);
    out.emplace_back(layer + ".norm1.gain", Shape{d});
    out.emplace_back(layer + ".norm1.bias", Shape{d});
    out.emplace_back(layer + ".ffn.w1", Shape{d, hidden});
    out.emplace_back(layer + ".ffn.b1", Shape{hidden});
    out.emplace_back(layer + ".ffn.w2", Shape{hidden, d});
    out.emplace_back(layer + ".ffn.b2", Shape{d});
    out.emplace_back(layer + ".norm2.gain", Shape{d});
    out.emplace_back(layer + ".norm2.bias", Shape{d});
  }
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::string join(std::string_view prefix, std::string_view name) {
  std::string s(prefix);
  s += '.';
  s += name;
  return s;
}

}  // namespace

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* rule) {
    if (!ok) throw Error(ErrorKind::kInvalidArgument, std::string(field) + " " + rule);
  };
  require(num_layers >= 1, "num_layers", "must be >= 1");
  require(d_model >= 1, "d_model", "must be >= 1");
  require(num_heads >= 1, "num_heads", "must be >= 1");
  require(ffn_mult >= 1, "ffn_mult", "must be >= 1");
  require(d_audio >= 1, "d_audio", "must be >= 1");
  require(d_video >= 1, "d_video", "must be >= 1");
  require(seq_len >= 1, "seq_len", "must be >= 1");
  require(d_model % num_heads == 0, "d_model", "must be divisible by num_heads");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers}, {"d_model", c.d_model}, {"num_heads", c.num_heads},
          {"ffn_mult", c.ffn_mult},     {"d_audio", c.d_audio}, {"d_video", c.d_video},
          {"seq_len", c.seq_len}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::kInvalidArgument, "model: expected a JSON object");
  ModelConfig c;
  const std::map<std::string, std::size_t*> fields = {
      {"num_layers", &c.num_layers}, {"d_model", &c.d_model}, {"num_heads", &c.num_heads},
      {"ffn_mult", &c.ffn_mult},     {"d_audio", &c.d_audio}, {"d_video", &c.d_video},
      {"seq_len", &c.seq_len}};
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) throw Error(ErrorKind::kInvalidArgument, "model." + key + ": unknown key");
    if (!value.is_number_integer() || value.get<long long>() < 1) {
      throw Error(ErrorKind::kInvalidArgument, "model." + key + ": must be a positive integer");
    }
    *it->second = value.get<std::size_t>();
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

void ParameterSet::insert(std::string name, Tensor value) {
  if (contains(name)) throw Error(ErrorKind::kInvalidArgument, "duplicate parameter " + name);
  tensors_.emplace(std::move(name), std::move(value));
}

Tensor& ParameterSet::at(std::string_view name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) {
    throw Error(ErrorKind::kInvalidArgument, "unknown parameter " + std::string(name));
  }
  return it->second;
}

const Tensor& ParameterSet::at(std::string_view name) const {
  return const_cast<ParameterSet*>(this)->at(name);
}

std::size_t ParameterSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.numel();
  return n;
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& c) {
  c.validate();
  std::vector<std::pair<std::string, Shape>> out;
  append_branch(out, "audio", c.d_audio, c);
  append_branch(out, "video", c.d_video, c);
  append_attention(out, "cross.audio_query", c.d_model);
  append_attention(out, "cross.video_query", c.d_model);
  out.emplace_back("fusion.alpha", Shape{1});
  out.emplace_back("fusion.beta", Shape{1});
  out.emplace_back("head.weight", Shape{c.d_model, 2});
  out.emplace_back("head.bias", Shape{2});
  return out;
}

ParameterSet init_params(const ModelConfig& config, std::uint64_t seed) {
  ParameterSet params;
  const auto layout = parameter_layout(config);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [name, shape] = layout[i];
    Tensor t(shape, 0.0);
    if (shape.size() == 2) {
      const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      Rng rng = make_rng(seed, i);
      for (double& w : t.data()) w = limit * (2.0 * uniform01(rng) - 1.0);
    } else if (ends_with(name, ".gain") || name == "fusion.alpha" || name == "fusion.beta") {
      t.fill(1.0);
    }
    params.insert(name, std::move(t));
  }
  return params;
}

ParameterSet round_to_f32(const ParameterSet& params) {
  ParameterSet out;
  for (const auto& [name, t] : params) {
    Tensor r = t;
    for (double& v : r.data()) v = static_cast<double>(static_cast<float>(v));
    out.insert(name, std::move(r));
  }
  return out;
}

PositionalEncoding::PositionalEncoding(std::size_t seq_len, std::size_t d_model)
    : table_({seq_len, d_model}, 0.0) {
  for (std::size_t t = 0; t < seq_len; ++t) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double pair = static_cast<double>(i / 2 * 2);
      const double angle =
          static_cast<double>(t) / std::pow(10000.0, pair / static_cast<double>(d_model));
      table_(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
}

// ---------------------------------------------------------------------------

BoundParameters::BoundParameters(ad::Tape& tape, const ParameterSet& params, bool requires_grad)
    : tape_(&tape) {
  for (const auto& [name, t] : params) vars_.emplace(name, tape.leaf(t, requires_grad));
}

ad::Var BoundParameters::operator[](std::string_view name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) {
    throw Error(ErrorKind::kInvalidArgument, "missing parameter " + std::string(name));
  }
  return it->second;
}

namespace {

std::size_t resolve_segment(const Tensor& x, std::size_t segment, const char* what) {
  const std::size_t rows = x.rows();
  if (segment == 0) return rows;
  if (rows % segment != 0) {
    throw Error(ErrorKind::kDimension, std::string(what) + ": " + std::to_string(rows) +
                                           " rows are not a stack of " + std::to_string(segment) +
                                           "-frame sequences");
  }
  return segment;
}

}  // namespace

ad::Var multi_head_attention(ad::Var q_src, ad::Var kv_src, const BoundParameters& p,
                             std::string_view prefix, std::size_t num_heads,
                             std::size_t segment) {
  const std::size_t d = q_src.value().cols();
  if (kv_src.shape() != q_src.shape()) {
    throw Error(ErrorKind::kDimension, "attention: query " + shape_to_string(q_src.shape()) +
                                           " vs key/value " + shape_to_string(kv_src.shape()));
  }
  if (num_heads == 0 || d % num_heads != 0) {
    throw Error(ErrorKind::kDimension, "attention: width " + std::to_string(d) +
                                           " not divisible by " + std::to_string(num_heads) +
                                           " heads");
  }
  segment = resolve_segment(q_src.value(), segment, "attention");
  const ad::Var q = ad::linear(q_src, p[join(prefix, "wq")], p[join(prefix, "bq")]);
  const ad::Var k = ad::linear(kv_src, p[join(prefix, "wk")], p[join(prefix, "bk")]);
  const ad::Var v = ad::linear(kv_src, p[join(prefix, "wv")], p[join(prefix, "bv")]);
  const ad::Var heads = ad::attention(q, k, v, num_heads, segment);
  return ad::linear(heads, p[join(prefix, "wo")], p[join(prefix, "bo")]);
}

ad::Var encoder_forward(ad::Var x, const BoundParameters& p, std::string_view branch,
                        const ModelConfig& config, std::size_t segment) {
  const std::string b(branch);
  const std::size_t expected = branch == "audio" ? config.d_audio : config.d_video;
  if (x.value().rank() != 2 || x.value().cols() != expected) {
    throw Error(ErrorKind::kDimension, b + " encoder expects [T x " + std::to_string(expected) +
                                           "], got " + shape_to_string(x.shape()));
  }
  segment = resolve_segment(x.value(), segment, "encoder");
  const PositionalEncoding pe(segment, config.d_model);
  Tensor pe_rows({x.value().rows(), config.d_model}, 0.0);
  for (std::size_t r = 0; r < pe_rows.rows(); ++r) {
    std::ranges::copy(pe.table().row(r % segment), pe_rows.row(r).begin());
  }
  ad::Var h = ad::linear(x, p[b + ".input.weight"], p[b + ".input.bias"]);
  h = ad::add(h, p.tape().constant(std::move(pe_rows)));
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string layer = b + ".layer" + std::to_string(l);
    const ad::Var attn =
        multi_head_attention(h, h, p, layer + ".self_attn", config.num_heads, segment);
    h = ad::layer_norm(ad::add(h, attn), p[layer + ".norm1.gain"], p[layer + ".norm1.bias"]);
    const ad::Var hidden = ad::relu(ad::linear(h, p[layer + ".ffn.w1"], p[layer + ".ffn.b1"]));
    const ad::Var ffn = ad::linear(hidden, p[layer + ".ffn.w2"], p[layer + ".ffn.b2"]);
    h = ad::layer_norm(ad::add(h, ffn), p[layer + ".norm2.gain"], p[layer + ".norm2.bias"]);
  }
  return h;
}

ad::Var cross_modal_fuse(ad::Var enc_audio, ad::Var enc_video, const BoundParameters& p,
                         const ModelConfig& config, std::size_t segment) {
  if (enc_audio.shape() != enc_video.shape()) {
    throw Error(ErrorKind::kDimension, "cross_modal_fuse: " + shape_to_string(enc_audio.shape()) +
                                           " vs " + shape_to_string(enc_video.shape()));
  }
  const ad::Var x_audio = multi_head_attention(enc_audio, enc_video, p, "cross.audio_query",
                                               config.num_heads, segment);
  const ad::Var x_video = multi_head_attention(enc_video, enc_audio, p, "cross.video_query",
                                               config.num_heads, segment);
  const ad::Var audio_side = ad::add(enc_audio, ad::scale_by(x_audio, p["fusion.alpha"]));
  const ad::Var video_side = ad::add(enc_video, ad::scale_by(x_video, p["fusion.beta"]));
  return ad::add(audio_side, video_side);
}

ad::Var model_forward_batch(ad::Var audio, ad::Var video, const BoundParameters& p,
                            const ModelConfig& config) {
  const std::size_t rows = audio.value().rows();
  if (audio.value().rank() != 2 || video.value().rank() != 2 || rows == 0 ||
      rows % config.seq_len != 0 || video.value().rows() != rows) {
    throw Error(ErrorKind::kDimension,
                "model_forward expects stacks of " + std::to_string(config.seq_len) +
                    " frames, got audio " + shape_to_string(audio.shape()) + " video " +
                    shape_to_string(video.shape()));
  }
  const ad::Var enc_audio = encoder_forward(audio, p, "audio", config, config.seq_len);
  const ad::Var enc_video = encoder_forward(video, p, "video", config, config.seq_len);
  const ad::Var fused = cross_modal_fuse(enc_audio, enc_video, p, config, config.seq_len);
  return ad::linear(fused, p["head.weight"], p["head.bias"]);
}

ad::Var model_forward(ad::Var audio, ad::Var video, const BoundParameters& p,
                      const ModelConfig& config) {
  if (audio.value().rank() != 2 || video.value().rank() != 2 ||
      audio.value().rows() != config.seq_len || video.value().rows() != config.seq_len) {
    throw Error(ErrorKind::kDimension,
                "model_forward expects " + std::to_string(config.seq_len) + " frames, got audio " +
                    shape_to_string(audio.shape()) + " video " + shape_to_string(video.shape()));
  }
  return model_forward_batch(audio, video, p, config);
}

Tensor predict(const ParameterSet& params, const ModelConfig& config, const Tensor& audio,
               const Tensor& video) {
  ad::Tape tape;
  const BoundParameters bound(tape, params, false);
  const ad::Var out =
      model_forward(tape.constant(audio), tape.constant(video), bound, config);
  return out.value();
}

}  // namespace modalfuse
