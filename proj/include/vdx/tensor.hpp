#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vdx/error.hpp"
#include "vdx/rng.hpp"

namespace vdx {

// Dense row-major tensor of 64-bit floats. Copying a Tensor copies the
// handle, not the buffer; the autodiff tape relies on that sharing.
struct TensorImpl {
  std::vector<size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily by the tape
  bool requires_grad = false;
  bool traced = false;  // produced by or feeding a recorded op
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<size_t> shape);
  static Tensor full(std::vector<size_t> shape, double value);
  static Tensor from(std::vector<size_t> shape, std::vector<double> data);
  static Tensor scalar(double value);
  static Tensor randn(std::vector<size_t> shape, Rng& rng, double stddev = 1.0);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<size_t>& shape() const { return impl_->shape; }
  size_t rank() const { return impl_->shape.size(); }
  size_t size() const { return impl_->data.size(); }

  // Rank-2 accessors (rank-1 tensors behave as a single row).
  size_t rows() const;
  size_t cols() const;

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& vec() { return impl_->data; }
  const std::vector<double>& vec() const { return impl_->data; }

  double item() const;  // NotScalar unless size() == 1
  double at(size_t r, size_t c) const { return impl_->data[r * cols() + c]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool b);
  bool traced() const { return impl_->traced; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const;
  double* grad_data();
  void ensure_grad();  // allocate and zero-fill
  void zero_grad() { impl_->grad.clear(); }

  Tensor clone() const;  // deep copy of values (grad not copied)

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Dynamic tape. Ops append one node per executed primitive; backward walks
// the nodes once in reverse execution order, which is a valid topological
// order by construction.
class Graph {
 public:
  static Graph& active();

  void record(std::function<void()> backprop) { nodes_.push_back(std::move(backprop)); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse. A second
  // backward without clear() is a contract violation (GraphConsumed).
  void backward(const Tensor& loss);

  void clear() {
    nodes_.clear();
    consumed_ = false;
  }

  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  static bool recording() { return recording_enabled_ && depth_ == 0; }

 private:
  friend class NoGradGuard;
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
  static bool recording_enabled_;
  static int depth_;
};

// Disables tape recording in scope (inference / finite differences).
class NoGradGuard {
 public:
  NoGradGuard() { ++Graph::depth_; }
  ~NoGradGuard() { --Graph::depth_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

#ifndef NDEBUG
void check_finite(const Tensor& t, const char* where);
#else
inline void check_finite(const Tensor&, const char*) {}
#endif

}  // namespace vdx
