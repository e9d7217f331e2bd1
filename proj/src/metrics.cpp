#include "modalfuse/metrics.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "modalfuse/error.hpp"

namespace modalfuse {

namespace {

void check_pair(std::size_t nx, std::size_t ny) {
  if (nx != ny) {
    throw Error(ErrorKind::kDimension,
                "ccc: length mismatch " + std::to_string(nx) + " vs " + std::to_string(ny));
  }
  if (nx < 2) throw Error(ErrorKind::kInvalidArgument, "ccc: need at least 2 values");
}

Tensor column(const Tensor& t, std::size_t c) {
  Tensor out({t.rows(), 1}, 0.0);
  for (std::size_t r = 0; r < t.rows(); ++r) out[r] = t(r, c);
  return out;
}

ad::Var attribute_ccc(ad::Var pred, ad::Var gold) {
  ad::Tape& tape = *pred.tape();
  const ad::Var pred_mean = ad::mean(pred);
  const ad::Var gold_mean = ad::mean(gold);
  const ad::Var pred_c = ad::shift_by(pred, ad::scale(pred_mean, -1.0));
  const ad::Var gold_c = ad::shift_by(gold, ad::scale(gold_mean, -1.0));
  const ad::Var cov = ad::mean(ad::hadamard(pred_c, gold_c));
  const ad::Var var_p = ad::mean(ad::hadamard(pred_c, pred_c));
  const ad::Var var_g = ad::mean(ad::hadamard(gold_c, gold_c));
  const ad::Var gap = ad::sub(pred_mean, gold_mean);
  const ad::Var denom = ad::add(ad::add(var_p, var_g), ad::hadamard(gap, gap));
  if (denom.value()[0] == 0.0) return tape.constant(Tensor::scalar(0.0));
  return ad::divide(ad::scale(cov, 2.0), denom);
}

}  // namespace

double ccc(std::span<const double> x, std::span<const double> y) {
  check_pair(x.size(), y.size());
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  sxx /= n;
  syy /= n;
  sxy /= n;
  const double denom = sxx + syy + (mx - my) * (mx - my);
  if (denom == 0.0) return 0.0;
  return 2.0 * sxy / denom;
}

ad::Var ccc_loss(ad::Var pred, ad::Var gold) {
  const Tensor& pv = pred.value();
  const Tensor& gv = gold.value();
  if (pv.rank() != 2 || pv.cols() != 2 || pv.shape() != gv.shape()) {
    throw Error(ErrorKind::kDimension, "ccc_loss: expected matching [N x 2], got " +
                                           shape_to_string(pv.shape()) + " and " +
                                           shape_to_string(gv.shape()));
  }
  if (pv.rows() < 2) throw Error(ErrorKind::kInvalidArgument, "ccc_loss: need N >= 2 frames");
  const ad::Var valence = attribute_ccc(ad::slice_cols(pred, 0, 1), ad::slice_cols(gold, 0, 1));
  const ad::Var arousal = attribute_ccc(ad::slice_cols(pred, 1, 1), ad::slice_cols(gold, 1, 1));
  const ad::Var avg = ad::scale(ad::add(valence, arousal), -0.5);
  ad::Tape& tape = *pred.tape();
  return ad::shift_by(avg, tape.constant(Tensor::scalar(1.0)));
}

EvalSummary eval_summary(const Tensor& predictions, const Tensor& labels) {
  if (predictions.rank() != 2 || predictions.cols() != 2 ||
      predictions.shape() != labels.shape()) {
    throw Error(ErrorKind::kDimension, "eval_summary: frame count mismatch " +
                                           shape_to_string(predictions.shape()) + " vs " +
                                           shape_to_string(labels.shape()));
  }
  EvalSummary s;
  s.n_frames = predictions.rows();
  const Tensor pv = column(predictions, 0), pa = column(predictions, 1);
  const Tensor gv = column(labels, 0), ga = column(labels, 1);
  s.ccc_valence = ccc(pv.data(), gv.data());
  s.ccc_arousal = ccc(pa.data(), ga.data());
  return s;
}

}  // namespace modalfuse
