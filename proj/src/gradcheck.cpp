#include <algorithm>
#include <cmath>

#include "modalfuse/harness.hpp"
#include "modalfuse/rng.hpp"

namespace modalfuse {

namespace {

constexpr double kStep = 1e-5;
// Gradients smaller than this are compared in absolute terms.
constexpr double kMagnitudeFloor = 1e-6;

ModelConfig gradcheck_config() {
  ModelConfig c;
  c.num_layers = 1;
  c.d_model = 8;
  c.num_heads = 2;
  c.ffn_mult = 2;
  c.d_audio = 5;
  c.d_video = 4;
  c.seq_len = 6;
  return c;
}

Tensor uniform_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols}, 0.0);
  for (double& v : t.data()) v = 2.0 * uniform01(rng) - 1.0;
  return t;
}

struct Problem {
  ModelConfig config;
  ParameterSet params;
  Tensor audio, video, gold;
};

double loss_value(const Problem& p, const ParameterSet& params) {
  ad::Tape tape;
  const BoundParameters bound(tape, params, false);
  const ad::Var pred =
      model_forward(tape.constant(p.audio), tape.constant(p.video), bound, p.config);
  return ccc_loss(pred, tape.constant(p.gold)).value()[0];
}

}  // namespace

GradcheckReport gradcheck(std::uint64_t seed, double tolerance) {
  Problem p;
  p.config = gradcheck_config();
  p.params = init_params(p.config, derive_seed(seed, 1));
  Rng rng = make_rng(seed, 2);
  // move gains, biases and fusion scalars off their symmetric initial values
  for (auto& [name, t] : p.params) {
    if (t.rank() == 1) {
      for (double& v : t.data()) v += 0.2 * (2.0 * uniform01(rng) - 1.0);
    }
  }
  p.audio = uniform_matrix(p.config.seq_len, p.config.d_audio, rng);
  p.video = uniform_matrix(p.config.seq_len, p.config.d_video, rng);
  p.gold = uniform_matrix(p.config.seq_len, 2, rng);

  ad::Tape tape;
  const BoundParameters bound(tape, p.params, true);
  const ad::Var pred =
      model_forward(tape.constant(p.audio), tape.constant(p.video), bound, p.config);
  tape.backward(ccc_loss(pred, tape.constant(p.gold)));

  GradcheckReport report;
  ParameterSet probe = p.params;
  for (const auto& [name, value] : p.params) {
    const Tensor& analytic = bound[name].grad();
    Tensor& slot = probe.at(name);
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double original = slot[i];
      slot[i] = original + kStep;
      const double up = loss_value(p, probe);
      slot[i] = original - kStep;
      const double down = loss_value(p, probe);
      slot[i] = original;
      const double numeric = (up - down) / (2.0 * kStep);
      const double a = analytic[i];
      const double scale = std::max({std::abs(a), std::abs(numeric), kMagnitudeFloor});
      const double err = std::abs(a - numeric) / scale;
      if (err > report.max_rel_error || report.checked == 0) {
        report.max_rel_error = err;
        report.worst_param = name;
        report.worst_index = i;
      }
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace modalfuse
