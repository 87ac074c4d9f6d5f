#include "vdx/optim.hpp"

#include <algorithm>
#include <cmath>

namespace vdx {

Adam::Adam(ParamStore& store, AdamConfig cfg) : store_(store), cfg_(cfg) {
  m_.resize(store.count());
  v_.resize(store.count());
  for (size_t i = 0; i < store.count(); ++i) {
    const size_t n = store.items()[i].tensor.size();
    m_[i].assign(n, 0.0);
    v_[i].assign(n, 0.0);
  }
}

void Adam::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (size_t i = 0; i < store_.count(); ++i) {
    Tensor t = store_.items()[i].tensor;
    if (!t.has_grad() || t.grad().size() != t.size()) {
      throw_usage("ShapeMismatch", "adam step: gradient missing or mis-sized for " +
                                       store_.items()[i].name);
    }
    double* p = t.data();
    const std::span<const double> g = t.grad();
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (size_t j = 0; j < t.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

GradCheckReport check_gradients(const std::function<Tensor()>& loss_builder,
                                std::span<const NamedParam> params,
                                const GradCheckOptions& opts) {
  Graph& graph = Graph::active();
  graph.clear();
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  Tensor loss = loss_builder();
  if (graph.size() > 0) graph.backward(loss);  // constant losses record nothing

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    if (p.tensor.has_grad()) {
      analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
    } else {
      analytic.emplace_back(p.tensor.size(), 0.0);
    }
  }
  graph.clear();

  GradCheckReport report;
  Rng coord_rng(opts.coord_seed);
  NoGradGuard no_grad;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor t = params[pi].tensor;
    std::vector<size_t> coords;
    if (opts.max_coords_per_tensor == 0 || t.size() <= opts.max_coords_per_tensor) {
      coords.resize(t.size());
      for (size_t i = 0; i < t.size(); ++i) coords[i] = i;
    } else {
      for (size_t i = 0; i < opts.max_coords_per_tensor; ++i) {
        coords.push_back(static_cast<size_t>(coord_rng.below(t.size())));
      }
    }
    for (size_t idx : coords) {
      const double orig = t.data()[idx];
      t.data()[idx] = orig + opts.h;
      const double fp = loss_builder().item();
      t.data()[idx] = orig - opts.h;
      const double fm = loss_builder().item();
      t.data()[idx] = orig;
      const double numeric = (fp - fm) / (2.0 * opts.h);
      const double a = analytic[pi][idx];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), opts.denom_floor});
      const double rel = std::fabs(a - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = {params[pi].name, idx, a, numeric, rel};
      }
    }
  }
  return report;
}

}  // namespace vdx
