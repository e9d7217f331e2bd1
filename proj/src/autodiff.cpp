#include "modalfuse/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include "modalfuse/error.hpp"

namespace modalfuse::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

ConstMatrixMap as_matrix(const Tensor& t) {
  return ConstMatrixMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}

MatrixMap as_matrix(Tensor& t) {
  return MatrixMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

Eigen::Map<const Eigen::ArrayXd> as_flat(const Tensor& t) {
  return Eigen::Map<const Eigen::ArrayXd>(t.data().data(), static_cast<Eigen::Index>(t.numel()));
}

Eigen::Map<Eigen::ArrayXd> as_flat(Tensor& t) {
  return Eigen::Map<Eigen::ArrayXd>(t.data().data(), static_cast<Eigen::Index>(t.numel()));
}

template <typename Dst, typename Expr>
void assign_or_add(Dst&& dst, bool fresh, const Expr& expr) {
  if (fresh) {
    dst.noalias() = expr;
  } else {
    dst.noalias() += expr;
  }
}

// Adds a matrix-shaped gradient contribution into the grad of node `id`.
template <typename Expr>
void accumulate(Tape& t, std::size_t id, const Expr& expr) {
  bool fresh = false;
  Tensor& g = t.grad_sink(id, fresh);
  assign_or_add(as_matrix(g), fresh, expr);
}

std::map<std::string, double, std::less<>>& fault_table() {
  static std::map<std::string, double, std::less<>> table;
  return table;
}

void check_same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    throw Error(ErrorKind::kInvalidArgument, std::string(op) + ": operands on different tapes");
  }
}

void check_same_shape(Var a, Var b, const char* op) {
  check_same_tape(a, b, op);
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::kDimension, std::string(op) + ": shape mismatch " +
                                           shape_to_string(a.shape()) + " vs " +
                                           shape_to_string(b.shape()));
  }
}

void check_scalar(Var s, const char* op) {
  if (s.value().numel() != 1) {
    throw Error(ErrorKind::kDimension, std::string(op) + ": expected one-element factor, got " +
                                           shape_to_string(s.shape()));
  }
}

// exp(x) for -700 <= x <= 0 to within a few ulp, in a form the compiler
// vectorises.
inline double exp_nonpositive(double x) {
  constexpr double kLog2e = 1.4426950408889634;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  const double n = std::nearbyint(x * kLog2e);
  const double r = (x - n * kLn2Hi) - n * kLn2Lo;
  double p = 1.0 / 6227020800.0;
  p = p * r + 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  return p * std::bit_cast<double>((static_cast<std::int64_t>(n) + 1023) << 52);
}

// Row-wise softmax(scale * x) in place over a [rows x cols] block.
void softmax_rows(double* x, std::size_t rows, std::size_t cols, double scale) {
  const auto n = static_cast<Eigen::Index>(cols);
  for (std::size_t r = 0; r < rows; ++r, x += cols) {
    Eigen::Map<Eigen::ArrayXd> row(x, n);
    const double mx = row.maxCoeff();
    if ((row.minCoeff() - mx) * scale >= -700.0) {
      for (std::size_t c = 0; c < cols; ++c) x[c] = exp_nonpositive((x[c] - mx) * scale);
    } else {
      for (std::size_t c = 0; c < cols; ++c) x[c] = std::exp((x[c] - mx) * scale);
    }
    row *= 1.0 / row.sum();
  }
}

Var emit(Tape& tape, const char* op, Tensor value, std::vector<std::size_t> inputs,
         Tape::BackwardFn backward) {
  if (!value.all_finite()) {
    throw Error(ErrorKind::kNumeric, std::string(op) + ": produced a non-finite value");
  }
  return tape.record(op, std::move(value), std::move(inputs), std::move(backward));
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.requires_grad = requires_grad;
  if (requires_grad) node.grad = Tensor(value.shape(), 0.0);
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::vector<std::size_t> inputs,
                 BackwardFn backward) {
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                   [this](std::size_t i) { return nodes_[i].requires_grad; });
  if (node.requires_grad) {
    node.inputs = std::move(inputs);
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.numel() == 0 && node.value.numel() != 0) {
    node.grad = Tensor(node.value.shape(), 0.0);
  }
  return node.grad;
}

Tensor& Tape::grad_sink(std::size_t id, bool& fresh) {
  Node& node = nodes_[id];
  fresh = node.grad.numel() == 0 && node.value.numel() != 0;
  if (fresh) node.grad = Tensor::uninitialized(node.value.shape());
  return node.grad;
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw Error(ErrorKind::kState, "backward on empty tape");
  if (loss.tape() != this) throw Error(ErrorKind::kInvalidArgument, "loss is not on this tape");
  if (loss.value().numel() != 1) {
    throw Error(ErrorKind::kDimension,
                "backward needs a scalar loss, got " + shape_to_string(loss.shape()));
  }
  if (backward_done_) {
    throw Error(ErrorKind::kState, "backward called twice without zero_grad/reset");
  }
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;

  grad_buffer(loss.id()).fill(1.0);
  const auto& faults = fault_table();
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.numel() == 0) continue;
    if (!faults.empty()) {
      auto it = faults.find(std::string_view(node.op));
      if (it != faults.end()) {
        for (double& g : node.grad.data()) g *= it->second;
      }
    }
    node.backward(*this, i);
  }
}

void Tape::zero_grad() {
  for (Node& node : nodes_) node.grad.fill(0.0);
  backward_done_ = false;
}

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
}

// ---------------------------------------------------------------------------
// operations

Var matmul(Var a, Var b) {
  check_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw Error(ErrorKind::kDimension, "matmul: inner dimensions disagree " +
                                           shape_to_string(av.shape()) + " x " +
                                           shape_to_string(bv.shape()));
  }
  Tensor out = Tensor::uninitialized({av.rows(), bv.cols()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  const std::size_t ia = a.id(), ib = b.id();
  return emit(*a.tape(), "matmul", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    auto gy = as_matrix(t.grad(self));
    if (t.requires_grad(ia)) {
      accumulate(t, ia, gy * as_matrix(t.value(ib)).transpose());
    }
    if (t.requires_grad(ib)) {
      accumulate(t, ib, as_matrix(t.value(ia)).transpose() * gy);
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  require_matrix(av, "transpose");
  Tensor out = Tensor::uninitialized({av.cols(), av.rows()});
  as_matrix(out) = as_matrix(av).transpose();
  const std::size_t ia = a.id();
  return emit(*a.tape(), "transpose", std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    accumulate(t, ia, as_matrix(t.grad(self)).transpose());
  });
}

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return emit(*a.tape(), "add", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const auto g = as_flat(t.grad(self));
    for (std::size_t in : {ia, ib}) {
      if (!t.requires_grad(in)) continue;
      bool fresh = false;
      auto gi = as_flat(t.grad_sink(in, fresh));
      if (fresh) {
        gi = g;
      } else {
        gi += g;
      }
    }
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return emit(*a.tape(), "sub", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.grad(self).data();
    if (t.requires_grad(ia)) {
      auto ga = t.grad_buffer(ia).data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto gb = t.grad_buffer(ib).data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var hadamard(Var a, Var b) {
  check_same_shape(a, b, "hadamard");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return emit(*a.tape(), "hadamard", std::move(out), {ia, ib},
              [ia, ib](Tape& t, std::size_t self) {
                auto g = t.grad(self).data();
                if (t.requires_grad(ia)) {
                  auto ga = t.grad_buffer(ia).data();
                  auto bv = t.value(ib).data();
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                }
                if (t.requires_grad(ib)) {
                  auto gb = t.grad_buffer(ib).data();
                  auto av = t.value(ia).data();
                  for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                }
              });
}

Var divide(Var a, Var b) {
  check_same_shape(a, b, "divide");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] /= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return emit(*a.tape(), "divide", std::move(out), {ia, ib},
              [ia, ib](Tape& t, std::size_t self) {
                auto g = t.grad(self).data();
                auto bv = t.value(ib).data();
                if (t.requires_grad(ia)) {
                  auto ga = t.grad_buffer(ia).data();
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
                }
                if (t.requires_grad(ib)) {
                  auto gb = t.grad_buffer(ib).data();
                  auto av = t.value(ia).data();
                  for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                }
              });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& x : out.data()) x *= factor;
  const std::size_t ia = a.id();
  return emit(*a.tape(), "scale", std::move(out), {ia}, [ia, factor](Tape& t, std::size_t self) {
    auto g = t.grad(self).data();
    auto ga = t.grad_buffer(ia).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var scale_by(Var a, Var factor) {
  check_same_tape(a, factor, "scale_by");
  check_scalar(factor, "scale_by");
  const double f = factor.value()[0];
  Tensor out = a.value();
  for (double& x : out.data()) x *= f;
  const std::size_t ia = a.id(), ifac = factor.id();
  return emit(*a.tape(), "scale_by", std::move(out), {ia, ifac},
              [ia, ifac](Tape& t, std::size_t self) {
                auto g = t.grad(self).data();
                if (t.requires_grad(ia)) {
                  const double f = t.value(ifac)[0];
                  auto ga = t.grad_buffer(ia).data();
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * f;
                }
                if (t.requires_grad(ifac)) {
                  auto av = t.value(ia).data();
                  double acc = 0.0;
                  for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
                  t.grad_buffer(ifac)[0] += acc;
                }
              });
}

Var shift_by(Var a, Var offset) {
  check_same_tape(a, offset, "shift_by");
  check_scalar(offset, "shift_by");
  const double o = offset.value()[0];
  Tensor out = a.value();
  for (double& x : out.data()) x += o;
  const std::size_t ia = a.id(), ioff = offset.id();
  return emit(*a.tape(), "shift_by", std::move(out), {ia, ioff},
              [ia, ioff](Tape& t, std::size_t self) {
                auto g = t.grad(self).data();
                if (t.requires_grad(ia)) {
                  auto ga = t.grad_buffer(ia).data();
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
                if (t.requires_grad(ioff)) {
                  double acc = 0.0;
                  for (double v : g) acc += v;
                  t.grad_buffer(ioff)[0] += acc;
                }
              });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& x : out.data()) x = x > 0.0 ? x : 0.0;
  const std::size_t ia = a.id();
  return emit(*a.tape(), "relu", std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    auto g = t.grad(self).data();
    auto av = t.value(ia).data();
    bool fresh = false;
    auto ga = t.grad_sink(ia, fresh).data();
    // subgradient at exactly 0 is 0
    if (fresh) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = av[i] > 0.0 ? g[i] : 0.0;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += av[i] > 0.0 ? g[i] : 0.0;
    }
  });
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (double& x : out.data()) x = std::tanh(x);
  const std::size_t ia = a.id();
  return emit(*a.tape(), "tanh", std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    auto g = t.grad(self).data();
    auto y = t.value(self).data();
    auto ga = t.grad_buffer(ia).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var add_row(Var x, Var bias) {
  check_same_tape(x, bias, "add_row");
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_matrix(xv, "add_row");
  if (bv.rank() != 1 || bv.dim(0) != xv.cols()) {
    throw Error(ErrorKind::kDimension, "add_row: bias " + shape_to_string(bv.shape()) +
                                           " does not match " + shape_to_string(xv.shape()));
  }
  Tensor out = xv;
  const std::size_t cols = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < cols; ++c) row[c] += bv[c];
  }
  const std::size_t ix = x.id(), ib = bias.id();
  return emit(*x.tape(), "add_row", std::move(out), {ix, ib},
              [ix, ib](Tape& t, std::size_t self) {
                const Tensor& g = t.grad(self);
                if (t.requires_grad(ix)) {
                  auto gx = t.grad_buffer(ix).data();
                  auto gd = g.data();
                  for (std::size_t i = 0; i < gd.size(); ++i) gx[i] += gd[i];
                }
                if (t.requires_grad(ib)) {
                  Tensor& gb = t.grad_buffer(ib);
                  for (std::size_t r = 0; r < g.rows(); ++r) {
                    auto row = g.row(r);
                    for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
                  }
                }
              });
}

Var linear(Var x, Var weight, Var bias) {
  check_same_tape(x, weight, "linear");
  check_same_tape(x, bias, "linear");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  require_matrix(xv, "linear");
  require_matrix(wv, "linear");
  if (xv.cols() != wv.rows() || bv.rank() != 1 || bv.dim(0) != wv.cols()) {
    throw Error(ErrorKind::kDimension, "linear: " + shape_to_string(xv.shape()) + " x " +
                                           shape_to_string(wv.shape()) + " + " +
                                           shape_to_string(bv.shape()));
  }
  Tensor out = Tensor::uninitialized({xv.rows(), wv.cols()});
  auto om = as_matrix(out);
  om.noalias() = as_matrix(xv) * as_matrix(wv);
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data().data(),
                                                       static_cast<Eigen::Index>(bv.numel()));
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return emit(*x.tape(), "linear", std::move(out), {ix, iw, ib},
              [ix, iw, ib](Tape& t, std::size_t self) {
                auto gy = as_matrix(t.grad(self));
                if (t.requires_grad(ix)) {
                  accumulate(t, ix, gy * as_matrix(t.value(iw)).transpose());
                }
                if (t.requires_grad(iw)) {
                  accumulate(t, iw, as_matrix(t.value(ix)).transpose() * gy);
                }
                if (t.requires_grad(ib)) {
                  Tensor& gb = t.grad_buffer(ib);
                  Eigen::Map<Eigen::RowVectorXd>(gb.data().data(),
                                                 static_cast<Eigen::Index>(gb.numel())) +=
                      gy.colwise().sum();
                }
              });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  check_same_tape(x, gain, "layer_norm");
  check_same_tape(x, bias, "layer_norm");
  if (!(eps > 0.0)) throw Error(ErrorKind::kInvalidArgument, "layer_norm: eps must be > 0");
  const Tensor& xv = x.value();
  require_matrix(xv, "layer_norm");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  if (gv.shape() != Shape{cols} || bv.shape() != Shape{cols}) {
    throw Error(ErrorKind::kDimension, "layer_norm: gain/bias " + shape_to_string(gv.shape()) +
                                           "/" + shape_to_string(bv.shape()) +
                                           " do not match " + shape_to_string(xv.shape()));
  }
  Tensor out = Tensor::uninitialized({rows, cols});
  Tensor normed = Tensor::uninitialized({rows, cols});
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = xv.row(r);
    double mu = 0.0;
    for (double v : in) mu += v;
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (double v : in) var += (v - mu) * (v - mu);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    auto nr = normed.row(r);
    auto o = out.row(r);
    for (std::size_t c = 0; c < cols; ++c) {
      nr[c] = (in[c] - mu) * is;
      o[c] = nr[c] * gv[c] + bv[c];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return emit(*x.tape(), "layer_norm", std::move(out), {ix, ig, ib},
              [ix, ig, ib, normed = std::move(normed), inv_std = std::move(inv_std)](
                  Tape& t, std::size_t self) {
                const Tensor& g = t.grad(self);
                const Tensor& gv = t.value(ig);
                const std::size_t rows = g.rows(), cols = g.cols();
                if (t.requires_grad(ig) || t.requires_grad(ib)) {
                  Tensor& gg = t.grad_buffer(ig);
                  Tensor& gb = t.grad_buffer(ib);
                  for (std::size_t r = 0; r < rows; ++r) {
                    auto gr = g.row(r);
                    auto nr = normed.row(r);
                    for (std::size_t c = 0; c < cols; ++c) {
                      gg[c] += gr[c] * nr[c];
                      gb[c] += gr[c];
                    }
                  }
                }
                if (t.requires_grad(ix)) {
                  Tensor& gx = t.grad_buffer(ix);
                  std::vector<double> dn(cols);
                  for (std::size_t r = 0; r < rows; ++r) {
                    auto gr = g.row(r);
                    auto nr = normed.row(r);
                    double mean_dn = 0.0, mean_dn_n = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) {
                      dn[c] = gr[c] * gv[c];
                      mean_dn += dn[c];
                      mean_dn_n += dn[c] * nr[c];
                    }
                    mean_dn /= static_cast<double>(cols);
                    mean_dn_n /= static_cast<double>(cols);
                    auto gxr = gx.row(r);
                    for (std::size_t c = 0; c < cols; ++c) {
                      gxr[c] += inv_std[r] * (dn[c] - mean_dn - nr[c] * mean_dn_n);
                    }
                  }
                }
              });
}

namespace {

struct AxisLayout {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw Error(ErrorKind::kDimension, "softmax: axis " + std::to_string(axis) +
                                           " out of range for " + shape_to_string(shape));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace

Tensor softmax_values(const Tensor& x, std::size_t axis) {
  const AxisLayout l = axis_layout(x.shape(), axis);
  Tensor out = x;
  auto d = out.data();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.extent * l.inner + in;
      double mx = d[base];
      for (std::size_t k = 1; k < l.extent; ++k) mx = std::max(mx, d[base + k * l.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < l.extent; ++k) {
        double& v = d[base + k * l.inner];
        v = std::exp(v - mx);
        total += v;
      }
      for (std::size_t k = 0; k < l.extent; ++k) d[base + k * l.inner] /= total;
    }
  }
  return out;
}

Var softmax(Var x, std::size_t axis) {
  Tensor out = softmax_values(x.value(), axis);
  const std::size_t ix = x.id();
  return emit(*x.tape(), "softmax", std::move(out), {ix}, [ix, axis](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const AxisLayout l = axis_layout(y.shape(), axis);
    auto g = t.grad(self).data();
    auto yd = y.data();
    auto gx = t.grad_buffer(ix).data();
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.extent * l.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < l.extent; ++k) {
          const std::size_t i = base + k * l.inner;
          dot += g[i] * yd[i];
        }
        for (std::size_t k = 0; k < l.extent; ++k) {
          const std::size_t i = base + k * l.inner;
          gx[i] += yd[i] * (g[i] - dot);
        }
      }
    }
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const std::size_t ia = a.id();
  return emit(*a.tape(), "sum", Tensor::scalar(total), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad_buffer(ia).data()) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().numel();
  if (n == 0) throw Error(ErrorKind::kDimension, "mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  require_matrix(xv, "slice_cols");
  if (count == 0 || begin + count > xv.cols()) {
    throw Error(ErrorKind::kDimension, "slice_cols: columns [" + std::to_string(begin) + ", " +
                                           std::to_string(begin + count) + ") out of range for " +
                                           shape_to_string(xv.shape()));
  }
  Tensor out({xv.rows(), count}, 0.0);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto src = xv.row(r);
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(begin), count, out.row(r).begin());
  }
  const std::size_t ix = x.id();
  return emit(*x.tape(), "slice_cols", std::move(out), {ix},
              [ix, begin](Tape& t, std::size_t self) {
                const Tensor& g = t.grad(self);
                Tensor& gx = t.grad_buffer(ix);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                  auto gr = g.row(r);
                  auto dst = gx.row(r);
                  for (std::size_t c = 0; c < gr.size(); ++c) dst[begin + c] += gr[c];
                }
              });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::kInvalidArgument, "concat_cols: no inputs");
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    check_same_tape(parts[0], p, "concat_cols");
    require_matrix(p.value(), "concat_cols");
    if (p.value().rows() != rows) {
      throw Error(ErrorKind::kDimension, "concat_cols: row counts differ " +
                                             shape_to_string(parts[0].shape()) + " vs " +
                                             shape_to_string(p.shape()));
    }
    cols += p.value().cols();
    ids.push_back(p.id());
  }
  Tensor out({rows, cols}, 0.0);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(pv.row(r).begin(), pv.row(r).end(),
                out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += pv.cols();
  }
  std::vector<std::size_t> inputs = ids;
  return emit(*parts[0].tape(), "concat_cols", std::move(out), std::move(inputs),
              [ids](Tape& t, std::size_t self) {
                const Tensor& g = t.grad(self);
                std::size_t offset = 0;
                for (std::size_t id : ids) {
                  const std::size_t w = t.value(id).cols();
                  if (t.requires_grad(id)) {
                    Tensor& gp = t.grad_buffer(id);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      auto gr = g.row(r);
                      auto dst = gp.row(r);
                      for (std::size_t c = 0; c < w; ++c) dst[c] += gr[offset + c];
                    }
                  }
                  offset += w;
                }
              });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::kInvalidArgument, "concat_rows: no inputs");
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    check_same_tape(parts[0], p, "concat_rows");
    require_matrix(p.value(), "concat_rows");
    if (p.value().cols() != cols) {
      throw Error(ErrorKind::kDimension, "concat_rows: column counts differ " +
                                             shape_to_string(parts[0].shape()) + " vs " +
                                             shape_to_string(p.shape()));
    }
    rows += p.value().rows();
    ids.push_back(p.id());
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const Var& p : parts) {
    auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  std::vector<std::size_t> inputs = ids;
  return emit(*parts[0].tape(), "concat_rows", Tensor({rows, cols}, std::move(data)),
              std::move(inputs), [ids](Tape& t, std::size_t self) {
                auto g = t.grad(self).data();
                std::size_t offset = 0;
                for (std::size_t id : ids) {
                  const std::size_t n = t.value(id).numel();
                  if (t.requires_grad(id)) {
                    auto gp = t.grad_buffer(id).data();
                    for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
                  }
                  offset += n;
                }
              });
}

Var attention(Var q, Var k, Var v, std::size_t num_heads, std::size_t segment) {
  check_same_shape(q, k, "attention");
  check_same_shape(q, v, "attention");
  const Tensor& qv = q.value();
  require_matrix(qv, "attention");
  const std::size_t n = qv.rows(), d = qv.cols();
  if (num_heads == 0 || d % num_heads != 0) {
    throw Error(ErrorKind::kDimension, "attention: width " + std::to_string(d) +
                                           " not divisible by " + std::to_string(num_heads) +
                                           " heads");
  }
  if (segment == 0 || n % segment != 0) {
    throw Error(ErrorKind::kDimension, "attention: " + std::to_string(n) +
                                           " rows do not split into sequences of " +
                                           std::to_string(segment));
  }
  const auto dh = static_cast<Eigen::Index>(d / num_heads);
  const auto len = static_cast<Eigen::Index>(segment);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t blocks = (n / segment) * num_heads;

  // Attention weights of every (sequence, head) block, kept for backward.
  auto weights = std::make_shared<Storage>();
  weights->resize(blocks * segment * segment);
  Tensor out = Tensor::uninitialized({n, d});
  auto qm = as_matrix(qv);
  auto km = as_matrix(k.value());
  auto vm = as_matrix(v.value());
  auto om = as_matrix(out);
  for (std::size_t b = 0; b < blocks; ++b) {
    const auto r0 = static_cast<Eigen::Index>((b / num_heads) * segment);
    const auto c0 = static_cast<Eigen::Index>(b % num_heads) * dh;
    MatrixMap pm(weights->data() + b * segment * segment, len, len);
    pm.noalias() = qm.block(r0, c0, len, dh) * km.block(r0, c0, len, dh).transpose();
    softmax_rows(pm.data(), segment, segment, inv_sqrt);
    om.block(r0, c0, len, dh).noalias() = pm * vm.block(r0, c0, len, dh);
  }

  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return emit(*q.tape(), "attention", std::move(out), {iq, ik, iv},
              [=](Tape& t, std::size_t self) {
                auto gy = as_matrix(t.grad(self));
                auto qm = as_matrix(t.value(iq));
                auto km = as_matrix(t.value(ik));
                auto vm = as_matrix(t.value(iv));
                const bool need_q = t.requires_grad(iq), need_k = t.requires_grad(ik),
                           need_v = t.requires_grad(iv);
                // Every block is written exactly once, so a freshly allocated
                // buffer can be assigned instead of accumulated, unless two of
                // q, k, v are the same node.
                const bool distinct = iq != ik && iq != iv && ik != iv;
                bool fresh_q = false, fresh_k = false, fresh_v = false;
                Tensor* gq = nullptr;
                Tensor* gk = nullptr;
                Tensor* gv = nullptr;
                if (distinct) {
                  if (need_q) gq = &t.grad_sink(iq, fresh_q);
                  if (need_k) gk = &t.grad_sink(ik, fresh_k);
                  if (need_v) gv = &t.grad_sink(iv, fresh_v);
                } else {
                  if (need_q) gq = &t.grad_buffer(iq);
                  if (need_k) gk = &t.grad_buffer(ik);
                  if (need_v) gv = &t.grad_buffer(iv);
                }
                RowMatrix dp(len, len);
                for (std::size_t b = 0; b < blocks; ++b) {
                  const auto r0 = static_cast<Eigen::Index>((b / num_heads) * segment);
                  const auto c0 = static_cast<Eigen::Index>(b % num_heads) * dh;
                  ConstMatrixMap pm(weights->data() + b * segment * segment, len, len);
                  const auto gb = gy.block(r0, c0, len, dh);
                  if (need_v) {
                    assign_or_add(as_matrix(*gv).block(r0, c0, len, dh), fresh_v,
                                  pm.transpose() * gb);
                  }
                  if (!need_q && !need_k) continue;
                  dp.noalias() = gb * vm.block(r0, c0, len, dh).transpose();
                  for (Eigen::Index r = 0; r < len; ++r) {
                    const double dot = dp.row(r).dot(pm.row(r));
                    dp.row(r).array() = pm.row(r).array() * (dp.row(r).array() - dot) * inv_sqrt;
                  }
                  if (need_q) {
                    assign_or_add(as_matrix(*gq).block(r0, c0, len, dh), fresh_q,
                                  dp * km.block(r0, c0, len, dh));
                  }
                  if (need_k) {
                    assign_or_add(as_matrix(*gk).block(r0, c0, len, dh), fresh_k,
                                  dp.transpose() * qm.block(r0, c0, len, dh));
                  }
                }
              });
}

namespace testing {

void inject_backward_fault(std::string_view op, double factor) {
  fault_table()[std::string(op)] = factor;
}

void clear_backward_faults() { fault_table().clear(); }

}  // namespace testing

}  // namespace modalfuse::ad
