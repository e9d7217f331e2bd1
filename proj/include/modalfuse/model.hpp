#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "modalfuse/autodiff.hpp"
#include "modalfuse/tensor.hpp"

namespace modalfuse {

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t d_model = 512;
  std::size_t num_heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t d_audio = 3900;
  std::size_t d_video = 4096;
  std::size_t seq_len = 100;

  std::size_t head_dim() const { return d_model / num_heads; }
  // Throws Error(kInvalidArgument) naming the first offending field.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& config);
// Unknown keys are rejected; missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);

// Named learnable tensors. Names are unique and iterate in sorted order.
class ParameterSet {
 public:
  using Map = std::map<std::string, Tensor, std::less<>>;

  void insert(std::string name, Tensor value);
  bool contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;

  std::size_t size() const noexcept { return tensors_.size(); }
  std::size_t total_elements() const;
  Map::iterator begin() { return tensors_.begin(); }
  Map::iterator end() { return tensors_.end(); }
  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  Map tensors_;
};

// Expected parameter names and shapes for a configuration, in a fixed order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config);

// Glorot-uniform weight matrices, zero biases, unit norm gains and
// alpha = beta = 1. Deterministic in (config, seed).
ParameterSet init_params(const ModelConfig& config, std::uint64_t seed);

// Rounds every value through float32 (the checkpoint storage precision).
ParameterSet round_to_f32(const ParameterSet& params);

// Sinusoidal table [seq_len x d_model]: even columns sin, odd columns cos.
class PositionalEncoding {
 public:
  PositionalEncoding(std::size_t seq_len, std::size_t d_model);
  const Tensor& table() const noexcept { return table_; }

 private:
  Tensor table_;
};

// A ParameterSet copied onto a tape as leaves.
class BoundParameters {
 public:
  BoundParameters(ad::Tape& tape, const ParameterSet& params, bool requires_grad);

  ad::Var operator[](std::string_view name) const;
  ad::Tape& tape() const noexcept { return *tape_; }
  const std::map<std::string, ad::Var, std::less<>>& vars() const noexcept { return vars_; }

 private:
  ad::Tape* tape_;
  std::map<std::string, ad::Var, std::less<>> vars_;
};

// Inputs below may hold several sequences stacked along rows; `segment` is
// the length of each (0 means the whole input is one sequence). Attention
// never crosses a sequence boundary.

// softmax(Q K^T / sqrt(d_head)) V per head, Q from q_src and K, V from
// kv_src, heads concatenated and projected by <prefix>.wo.
ad::Var multi_head_attention(ad::Var q_src, ad::Var kv_src, const BoundParameters& params,
                             std::string_view prefix, std::size_t num_heads,
                             std::size_t segment = 0);

// Input projection, positional encoding and post-norm self-attention blocks
// for one branch ("audio" or "video").
ad::Var encoder_forward(ad::Var x, const BoundParameters& params, std::string_view branch,
                        const ModelConfig& config, std::size_t segment = 0);

// (enc_a + alpha * attn(enc_a -> enc_v)) + (enc_v + beta * attn(enc_v -> enc_a))
ad::Var cross_modal_fuse(ad::Var enc_audio, ad::Var enc_video, const BoundParameters& params,
                         const ModelConfig& config, std::size_t segment = 0);

// Per-frame [T x 2] (valence, arousal) predictions; T must be seq_len.
ad::Var model_forward(ad::Var audio, ad::Var video, const BoundParameters& params,
                      const ModelConfig& config);

// model_forward over B windows stacked as [B*seq_len x d] inputs. Row block b
// of the result equals model_forward on window b.
ad::Var model_forward_batch(ad::Var audio, ad::Var video, const BoundParameters& params,
                            const ModelConfig& config);

// Gradient-free convenience wrapper around model_forward.
Tensor predict(const ParameterSet& params, const ModelConfig& config, const Tensor& audio,
               const Tensor& video);

}  // namespace modalfuse
