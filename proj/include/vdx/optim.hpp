#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vdx/tensor.hpp"

namespace vdx {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Owns every trainable tensor of a model, in creation order. Creation order
// is the checkpoint serialization order, so it must be deterministic.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    params_.push_back({name, t});
    return t;
  }

  std::span<const NamedParam> items() const { return params_; }
  size_t count() const { return params_.size(); }

  size_t total_size() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  Tensor find(const std::string& name) const {
    for (const auto& p : params_) {
      if (p.name == name) return p.tensor;
    }
    throw_usage("UnknownParam", "no parameter named " + name);
  }

  void zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  // Ensures every leaf has a gradient after backward; returns the names of
  // leaves the loss never reached (their grads are zero-filled).
  std::vector<std::string> collect_disconnected() {
    std::vector<std::string> missing;
    for (auto& p : params_) {
      if (!p.tensor.has_grad()) {
        p.tensor.ensure_grad();
        missing.push_back(p.name);
      }
    }
    return missing;
  }

 private:
  std::vector<NamedParam> params_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a ParamStore. Moment buffers match parameter
// shapes; the step counter only moves forward.
class Adam {
 public:
  Adam(ParamStore& store, AdamConfig cfg = {});

  void step();  // consumes current grads; ShapeMismatch if a grad is absent/mis-sized
  uint64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  ParamStore& store_;
  AdamConfig cfg_;
  uint64_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct GradCheckOptions {
  double h = 1e-5;
  // 0 = every coordinate; otherwise per-tensor sample size (seeded).
  size_t max_coords_per_tensor = 0;
  uint64_t coord_seed = 0;
  // Relative-error denominator floor: coordinates smaller than this are
  // compared at absolute scale rtol * denom_floor, the usual rtol/atol
  // hybrid (near-zero gradients would otherwise amplify probe noise).
  double denom_floor = 1e-2;
};

struct GradCheckEntry {
  std::string param;
  size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t coords_checked = 0;
  GradCheckEntry worst;

  bool passed(double rtol) const { return max_rel_err < rtol; }
};

// Compares analytic gradients of `loss_builder` against central finite
// differences (f(p+h) - f(p-h)) / 2h per sampled coordinate. The builder
// must be deterministic: it is re-run for every probe.
GradCheckReport check_gradients(const std::function<Tensor()>& loss_builder,
                                std::span<const NamedParam> params,
                                const GradCheckOptions& opts = {});

}  // namespace vdx
