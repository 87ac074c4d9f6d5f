#include "vdx/tensor.hpp"

#include <cmath>

namespace vdx {

namespace {

size_t shape_product(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

}  // namespace

Tensor Tensor::zeros(std::vector<size_t> shape) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_product(shape), 0.0);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<size_t> shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (double& x : t.impl_->data) x = value;
  return t;
}

Tensor Tensor::from(std::vector<size_t> shape, std::vector<double> data) {
  if (shape_product(shape) != data.size()) {
    throw_usage("ShapeMismatch", "tensor data length does not match shape");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::randn(std::vector<size_t> shape, Rng& rng, double stddev) {
  Tensor t = zeros(std::move(shape));
  for (double& x : t.impl_->data) x = stddev * rng.normal();
  return t;
}

size_t Tensor::rows() const { return rank() >= 2 ? impl_->shape[0] : 1; }

size_t Tensor::cols() const {
  return rank() >= 2 ? impl_->shape[rank() - 1] : impl_->shape[0];
}

double Tensor::item() const {
  if (size() != 1) throw_usage("NotScalar", "tensor has " + std::to_string(size()) + " elements");
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool b) {
  impl_->requires_grad = b;
  if (b) impl_->traced = true;
  return *this;
}

std::span<const double> Tensor::grad() const {
  return {impl_->grad.data(), impl_->grad.size()};
}

double* Tensor::grad_data() {
  ensure_grad();
  return impl_->grad.data();
}

void Tensor::ensure_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

bool Graph::recording_enabled_ = true;
int Graph::depth_ = 0;

Graph& Graph::active() {
  static Graph g;
  return g;
}

void Graph::backward(const Tensor& loss) {
  if (loss.size() != 1) throw_usage("NotScalar", "backward requires a scalar loss");
  if (nodes_.empty()) throw_usage("EmptyGraph", "backward on an empty graph");
  if (consumed_) {
    throw_usage("GraphConsumed", "second backward without clearing the graph");
  }
  Tensor l = loss;
  l.ensure_grad();
  l.grad_data()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  consumed_ = true;
}

#ifndef NDEBUG
void check_finite(const Tensor& t, const char* where) {
  for (double x : t.vec()) {
    if (!std::isfinite(x)) {
      throw_runtime("NonFinite", std::string("non-finite value entering ") + where);
    }
  }
}
#endif

}  // namespace vdx
