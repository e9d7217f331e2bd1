#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "modalfuse/tensor.hpp"

namespace modalfuse::ad {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// that produced it is alive and has not been reset.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Ordered record of operations. Nodes are appended as operations execute, so
// every node's inputs precede it. backward() walks the record once in reverse.
class Tape {
 public:
  // Propagates the upstream gradient of `self` into the grads of its inputs.
  using BackwardFn = std::function<void(Tape& tape, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an operation node. The node requires grad iff any input does;
  // `backward` is dropped otherwise.
  Var record(const char* op, Tensor value, std::vector<std::size_t> inputs,
             BackwardFn backward);

  // Reverse-mode pass from a scalar loss. A second call without
  // zero_grad() or reset() is an error.
  void backward(Var loss);

  void zero_grad();
  void reset();

  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of a node that requires grad; zero-filled on first use.
  Tensor& grad_buffer(std::size_t id);
  // Like grad_buffer, but a buffer allocated by this call is left
  // uninitialised and `fresh` is set; the caller must then overwrite all of it.
  Tensor& grad_sink(std::size_t id, bool& fresh);
  std::string_view op_name(std::size_t id) const { return nodes_[id].op; }

 private:
  struct Node {
    const char* op = "leaf";
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Differentiable operations. All inputs must live on the same tape.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var divide(Var a, Var b);
Var scale(Var a, double factor);
Var scale_by(Var a, Var factor);   // factor is a one-element tensor
Var shift_by(Var a, Var offset);   // offset is a one-element tensor
Var relu(Var a);
Var tanh(Var a);
Var add_row(Var x, Var bias);      // x[T x d] + bias[d] on every row
Var linear(Var x, Var weight, Var bias);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var softmax(Var x, std::size_t axis);
Var sum(Var a);                     // -> one-element tensor
Var mean(Var a);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
// Scaled dot-product attention over q, k, v [N x d] holding N / segment
// stacked sequences: for each sequence and each of num_heads column groups,
// softmax(Q K^T / sqrt(d / num_heads)) V. Heads stay concatenated.
Var attention(Var q, Var k, Var v, std::size_t num_heads, std::size_t segment);

// Forward-only softmax on a plain tensor, shared with tests and metrics code.
Tensor softmax_values(const Tensor& x, std::size_t axis);

namespace testing {
// Scales the upstream gradient of every node recorded under `op` by `factor`
// during backward. Used to prove the gradient checker detects broken rules.
void inject_backward_fault(std::string_view op, double factor = 1.5);
void clear_backward_faults();
}  // namespace testing

}  // namespace modalfuse::ad
