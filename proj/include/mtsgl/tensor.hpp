#pragma once

// Dense float64 tensors with a define-by-run reverse-mode tape.
//
// A Tape is made active for the current thread by constructing it; every op
// whose inputs require gradients records a backward closure on the active
// tape. Tape::backward replays the closures in reverse recording order, which
// is a valid reverse topological order because an op can only consume
// tensors that already exist.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtsgl/error.hpp"

namespace mtsgl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool grad_touched = false;
  std::string name;
};

class Tape;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(shape_numel(shape), 0.0);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false) {
    detail::require(values.size() == shape_numel(shape), "Tensor::from",
                    "data length ", values.size(), " does not match shape ",
                    detail::shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Parameters are updated in place by the optimizer between forward passes.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const {
    detail::require(numel() == 1, "Tensor::item", "tensor of shape ",
                    detail::shape_str(shape()), " is not a scalar");
    return impl_->data[0];
  }
  double operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->grad; }

  const std::string& name() const { return impl_->name; }
  void set_name(std::string n) { impl_->name = std::move(n); }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

namespace detail {
inline thread_local Tape* active_tape = nullptr;
}

class Tape {
 public:
  Tape() : previous_(detail::active_tape) { detail::active_tape = this; }
  ~Tape() { detail::active_tape = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return detail::active_tape; }

  std::size_t size() const { return entries_.size(); }

  void record(const Tensor& out, std::vector<std::shared_ptr<TensorImpl>> inputs,
              std::function<void()> backward) {
    out.impl()->requires_grad = true;
    entries_.push_back({out.impl(), std::move(inputs), std::move(backward)});
  }

  /// Accumulates d(loss)/d(t) into every tensor reachable on this tape.
  /// Leaves that feed the tape but do not influence `loss` end with zero grad.
  void backward(const Tensor& loss) {
    detail::require(loss.defined() && loss.numel() == 1, "backward",
                    "loss must be a scalar, got shape ",
                    loss.defined() ? detail::shape_str(loss.shape()) : "<undefined>");
    detail::require(!consumed_, "backward",
                    "tape already replayed; call reset() before another pass");
    detail::require(loss.requires_grad(), "backward",
                    "loss does not depend on any tensor that requires grad");
    clear_grads();
    consumed_ = true;
    auto& limpl = *loss.impl();
    limpl.grad.assign(1, 1.0);
    limpl.grad_touched = true;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->out->grad_touched) continue;
      for (auto& in : it->inputs) {
        if (in->requires_grad) in->grad_touched = true;
      }
      it->backward();
    }
  }

  /// Zeroes all gradients and re-arms the tape for another backward pass
  /// over the same recorded graph.
  void reset() {
    clear_grads();
    consumed_ = false;
  }

 private:
  struct Entry {
    std::shared_ptr<TensorImpl> out;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::function<void()> backward;
  };

  static void zero(TensorImpl& t) {
    t.grad.assign(t.data.size(), 0.0);
    t.grad_touched = false;
  }

  void clear_grads() {
    for (auto& e : entries_) {
      zero(*e.out);
      for (auto& in : e.inputs) {
        if (in->requires_grad) zero(*in);
      }
    }
  }

  Tape* previous_;
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

/// Flattens the gradients of `params` in the given order, row-major within
/// each tensor.
inline std::vector<double> grad_snapshot(std::span<const Tensor> params) {
  std::size_t total = 0;
  for (const auto& p : params) total += p.numel();
  std::vector<double> out;
  out.reserve(total);
  for (const auto& p : params) {
    detail::require(p.has_grad(), "grad_snapshot", "parameter '", p.name(),
                    "' has no gradient; run backward first");
    out.insert(out.end(), p.grad().begin(), p.grad().end());
  }
  return out;
}

}  // namespace mtsgl
