#include "vdx/ops.hpp"

#include <cmath>
#include <initializer_list>

namespace vdx {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Row-major matmul kernels, accumulate-into-C semantics.
// C[m*n] += A[m*k] * B[k*n]
void mm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[m*n] += A[m*k] * B^T where B is n*k. Four independent accumulator
// chains; a single-chain dot product cannot be auto-vectorized (FP
// reduction) and stalls on FMA latency.
void mm_nt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
      size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        acc0 += ai[p] * bj[p];
        acc1 += ai[p + 1] * bj[p + 1];
        acc2 += ai[p + 2] * bj[p + 2];
        acc3 += ai[p + 3] * bj[p + 3];
      }
      for (; p < k; ++p) acc0 += ai[p] * bj[p];
      ci[j] += ((acc0 + acc1) + (acc2 + acc3));
    }
  }
}

// C[k*n] += A^T * G where A is m*k, G is m*n
void mm_tn(const double* a, const double* g, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      double* cp = c + p * n;
      for (size_t j = 0; j < n; ++j) cp[j] += aip * gi[j];
    }
  }
}

bool want_record(std::initializer_list<const Tensor*> inputs) {
  if (!Graph::recording()) return false;
  for (const Tensor* t : inputs) {
    if (t->traced()) return true;
  }
  return false;
}

void mark_traced(Tensor& out) { out.impl()->traced = true; }

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!same_shape(a, b)) {
    throw_usage("ShapeMismatch", std::string(op) + ": operand shapes differ");
  }
}

// Grad of `out` if present, else nullptr (nothing to propagate).
const double* out_grad(const std::shared_ptr<TensorImpl>& out) {
  return out->grad.empty() ? nullptr : out->grad.data();
}

double* acc_grad(const std::shared_ptr<TensorImpl>& t) {
  if (!t->traced) return nullptr;
  if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
  return t->grad.data();
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  check_finite(a, "add");
  check_finite(b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (want_record({&a, &b})) {
    mark_traced(out);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Graph::active().record([ai, bi, oi] {
      const double* g = out_grad(oi);
      if (!g) return;
      const size_t n = oi->data.size();
      if (double* ga = acc_grad(ai)) {
        for (size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (double* gb = acc_grad(bi)) {
        for (size_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  check_finite(a, "sub");
  check_finite(b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (want_record({&a, &b})) {
    mark_traced(out);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Graph::active().record([ai, bi, oi] {
      const double* g = out_grad(oi);
      if (!g) return;
      const size_t n = oi->data.size();
      if (double* ga = acc_grad(ai)) {
        for (size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (double* gb = acc_grad(bi)) {
        for (size_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  check_finite(a, "mul");
  check_finite(b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (want_record({&a, &b})) {
    mark_traced(out);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Graph::active().record([ai, bi, oi] {
      const double* g = out_grad(oi);
      if (!g) return;
      const size_t n = oi->data.size();
      if (double* ga = acc_grad(ai)) {
        for (size_t i = 0; i < n; ++i) ga[i] += g[i] * bi->data[i];
      }
      if (double* gb = acc_grad(bi)) {
        for (size_t i = 0; i < n; ++i) gb[i] += g[i] * ai->data[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  check_finite(a, "scale");
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) out.data()[i] = s * a.data()[i];
  if (want_record({&a})) {
    mark_traced(out);
    auto ai = a.impl();
    auto oi = out.impl();
    Graph::active().record([ai, oi, s] {
      const double* g = out_grad(oi);
      if (!g) return;
      if (double* ga = acc_grad(ai)) {
        const size_t n = oi->data.size();
        for (size_t i = 0; i < n; ++i) ga[i] += s * g[i];
      }
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  const size_t m = x.rows(), n = x.cols();
  if (v.size() != n) throw_usage("ShapeMismatch", "add_rowvec: vector length != columns");
  check_finite(x, "add_rowvec");
  check_finite(v, "add_rowvec");
  Tensor out = Tensor::zeros(x.shape());
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) out.data()[i * n + j] = x.data()[i * n + j] + v.data()[j];
  }
  if (want_record({&x, &v})) {
    mark_traced(out);
    auto xi = x.impl(), vi = v.impl(), oi = out.impl();
    Graph::active().record([xi, vi, oi, m, n] {
      const double* g = out_grad(oi);
      if (!g) return;
      if (double* gx = acc_grad(xi)) {
        for (size_t i = 0; i < m * n; ++i) gx[i] += g[i];
      }
      if (double* gv = acc_grad(vi)) {
        for (size_t i = 0; i < m; ++i) {
          for (size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
        }
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2) throw_usage("ShapeMismatch", "matmul: inner dimensions differ");
  check_finite(a, "matmul");
  check_finite(b, "matmul");
  Tensor out = Tensor::zeros({m, n});
  mm_nn(a.data(), b.data(), out.data(), m, k, n);
  if (want_record({&a, &b})) {
    mark_traced(out);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Graph::active().record([ai, bi, oi, m, k, n] {
      const double* g = out_grad(oi);
      if (!g) return;
      if (double* ga = acc_grad(ai)) mm_nt(g, bi->data.data(), ga, m, n, k);
      if (double* gb = acc_grad(bi)) mm_tn(ai->data.data(), g, gb, m, k, n);
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  const size_t m = a.rows(), n = a.cols();
  check_finite(a, "transpose");
  Tensor out = Tensor::zeros({n, m});
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
  }
  if (want_record({&a})) {
    mark_traced(out);
    auto ai = a.impl();
    auto oi = out.impl();
    Graph::active().record([ai, oi, m, n] {
      const double* g = out_grad(oi);
      if (!g) return;
      if (double* ga = acc_grad(ai)) {
        for (size_t i = 0; i < m; ++i) {
          for (size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        }
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  check_finite(x, "gelu");
  Tensor out = Tensor::zeros(x.shape());
  const size_t n = x.size();
  for (size_t i = 0; i < n; ++i) {
    const double v = x.data()[i];
    out.data()[i] = v * 0.5 * (1.0 + std::erf(v * kInvSqrt2));
  }
  if (want_record({&x})) {
    mark_traced(out);
    auto xi = x.impl();
    auto oi = out.impl();
    Graph::active().record([xi, oi] {
      const double* g = out_grad(oi);
      if (!g) return;
      if (double* gx = acc_grad(xi)) {
        const size_t n = oi->data.size();
        for (size_t i = 0; i < n; ++i) {
          const double v = xi->data[i];
          const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
          gx[i] += g[i] * (cdf + v * pdf);
        }
      }
    });
  }
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  check_finite(x, "softmax");
  const size_t n = x.shape().back();
  const size_t rows = x.size() / n;
  Tensor out = Tensor::zeros(x.shape());
  for (size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * n;
    double* yr = out.data() + r * n;
    double mx = xr[0];
    for (size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    const double inv = 1.0 / z;
    for (size_t j = 0; j < n; ++j) yr[j] *= inv;
  }
  if (want_record({&x})) {
    mark_traced(out);
    auto xi = x.impl();
    auto oi = out.impl();
    Graph::active().record([xi, oi, rows, n] {
      const double* g = out_grad(oi);
      if (!g) return;
      if (double* gx = acc_grad(xi)) {
        for (size_t r = 0; r < rows; ++r) {
          const double* yr = oi->data.data() + r * n;
          const double* gr = g + r * n;
          double dot = 0.0;
          for (size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
          double* gxr = gx + r * n;
          for (size_t j = 0; j < n; ++j) gxr[j] += yr[j] * (gr[j] - dot);
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const size_t n = x.shape().back();
  const size_t rows = x.size() / n;
  if (gain.size() != n || bias.size() != n) {
    throw_usage("ShapeMismatch", "layer_norm: gain/bias length != feature dim");
  }
  check_finite(x, "layer_norm");
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  for (size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * n;
    double mean = 0.0;
    for (size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (size_t j = 0; j < n; ++j) {
      const double d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    double* hr = xhat.data() + r * n;
    double* yr = out.data() + r * n;
    for (size_t j = 0; j < n; ++j) {
      hr[j] = (xr[j] - mean) * inv;
      yr[j] = hr[j] * gain.data()[j] + bias.data()[j];
    }
  }
  if (want_record({&x, &gain, &bias})) {
    mark_traced(out);
    auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
    auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
    auto is = std::make_shared<std::vector<double>>(std::move(inv_std));
    Graph::active().record([xi, gi, bi, oi, xh, is, rows, n] {
      const double* g = out_grad(oi);
      if (!g) return;
      if (double* gg = acc_grad(gi)) {
        for (size_t r = 0; r < rows; ++r) {
          for (size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * (*xh)[r * n + j];
        }
      }
      if (double* gb = acc_grad(bi)) {
        for (size_t r = 0; r < rows; ++r) {
          for (size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
        }
      }
      if (double* gx = acc_grad(xi)) {
        const double invn = 1.0 / static_cast<double>(n);
        for (size_t r = 0; r < rows; ++r) {
          const double* gr = g + r * n;
          const double* hr = xh->data() + r * n;
          double sum_dh = 0.0, sum_dh_h = 0.0;
          for (size_t j = 0; j < n; ++j) {
            const double dh = gr[j] * gi->data[j];
            sum_dh += dh;
            sum_dh_h += dh * hr[j];
          }
          double* gxr = gx + r * n;
          for (size_t j = 0; j < n; ++j) {
            const double dh = gr[j] * gi->data[j];
            gxr[j] += (*is)[r] * (dh - invn * sum_dh - hr[j] * invn * sum_dh_h);
          }
        }
      }
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  const size_t vocab = table.rows(), dim = table.cols();
  for (int id : ids) {
    if (id < 0 || static_cast<size_t>(id) >= vocab) {
      throw_usage("OutOfVocab", "embedding id " + std::to_string(id) + " outside table of " +
                                    std::to_string(vocab));
    }
  }
  check_finite(table, "embedding");
  Tensor out = Tensor::zeros({ids.size(), dim});
  for (size_t i = 0; i < ids.size(); ++i) {
    const double* row = table.data() + static_cast<size_t>(ids[i]) * dim;
    double* orow = out.data() + i * dim;
    for (size_t j = 0; j < dim; ++j) orow[j] = row[j];
  }
  if (want_record({&table})) {
    mark_traced(out);
    auto ti = table.impl();
    auto oi = out.impl();
    std::vector<int> idv(ids.begin(), ids.end());
    Graph::active().record([ti, oi, idv, dim] {
      const double* g = out_grad(oi);
      if (!g) return;
      if (double* gt = acc_grad(ti)) {
        for (size_t i = 0; i < idv.size(); ++i) {
          double* trow = gt + static_cast<size_t>(idv[i]) * dim;
          const double* grow = g + i * dim;
          for (size_t j = 0; j < dim; ++j) trow[j] += grow[j];
        }
      }
    });
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw_usage("ShapeMismatch", "concat_rows: no inputs");
  const size_t n = parts[0].cols();
  size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != n) throw_usage("ShapeMismatch", "concat_rows: column counts differ");
    check_finite(p, "concat_rows");
    total += p.rows();
  }
  Tensor out = Tensor::zeros({total, n});
  size_t r = 0;
  for (const Tensor& p : parts) {
    const size_t cnt = p.rows() * n;
    for (size_t i = 0; i < cnt; ++i) out.data()[r * n + i] = p.data()[i];
    r += p.rows();
  }
  bool record = false;
  for (const Tensor& p : parts) record = record || p.traced();
  if (Graph::recording() && record) {
    mark_traced(out);
    std::vector<std::shared_ptr<TensorImpl>> impls;
    std::vector<size_t> row_counts;
    for (const Tensor& p : parts) {
      impls.push_back(p.impl());
      row_counts.push_back(p.rows());
    }
    auto oi = out.impl();
    Graph::active().record([impls, row_counts, oi, n] {
      const double* g = out_grad(oi);
      if (!g) return;
      size_t r = 0;
      for (size_t p = 0; p < impls.size(); ++p) {
        if (double* gp = acc_grad(impls[p])) {
          const size_t cnt = row_counts[p] * n;
          for (size_t i = 0; i < cnt; ++i) gp[i] += g[r * n + i];
        }
        r += row_counts[p];
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw_usage("ShapeMismatch", "concat_cols: no inputs");
  const size_t m = parts[0].rows();
  size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != m) throw_usage("ShapeMismatch", "concat_cols: row counts differ");
    check_finite(p, "concat_cols");
    total += p.cols();
  }
  Tensor out = Tensor::zeros({m, total});
  size_t c = 0;
  for (const Tensor& p : parts) {
    const size_t pn = p.cols();
    for (size_t i = 0; i < m; ++i) {
      for (size_t j = 0; j < pn; ++j) out.data()[i * total + c + j] = p.data()[i * pn + j];
    }
    c += pn;
  }
  bool record = false;
  for (const Tensor& p : parts) record = record || p.traced();
  if (Graph::recording() && record) {
    mark_traced(out);
    std::vector<std::shared_ptr<TensorImpl>> impls;
    std::vector<size_t> col_counts;
    for (const Tensor& p : parts) {
      impls.push_back(p.impl());
      col_counts.push_back(p.cols());
    }
    auto oi = out.impl();
    Graph::active().record([impls, col_counts, oi, m, total] {
      const double* g = out_grad(oi);
      if (!g) return;
      size_t c = 0;
      for (size_t p = 0; p < impls.size(); ++p) {
        const size_t pn = col_counts[p];
        if (double* gp = acc_grad(impls[p])) {
          for (size_t i = 0; i < m; ++i) {
            for (size_t j = 0; j < pn; ++j) gp[i * pn + j] += g[i * total + c + j];
          }
        }
        c += pn;
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, size_t c0, size_t c1) {
  const size_t m = x.rows(), n = x.cols();
  if (c0 >= c1 || c1 > n) throw_usage("ShapeMismatch", "slice_cols: bad column range");
  check_finite(x, "slice_cols");
  const size_t w = c1 - c0;
  Tensor out = Tensor::zeros({m, w});
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < w; ++j) out.data()[i * w + j] = x.data()[i * n + c0 + j];
  }
  if (want_record({&x})) {
    mark_traced(out);
    auto xi = x.impl();
    auto oi = out.impl();
    Graph::active().record([xi, oi, m, n, c0, w] {
      const double* g = out_grad(oi);
      if (!g) return;
      if (double* gx = acc_grad(xi)) {
        for (size_t i = 0; i < m; ++i) {
          for (size_t j = 0; j < w; ++j) gx[i * n + c0 + j] += g[i * w + j];
        }
      }
    });
  }
  return out;
}

Tensor mean_rows(const Tensor& x) {
  const size_t m = x.rows(), n = x.cols();
  check_finite(x, "mean_rows");
  Tensor out = Tensor::zeros({1, n});
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) out.data()[j] += x.data()[i * n + j];
  }
  const double inv = 1.0 / static_cast<double>(m);
  for (size_t j = 0; j < n; ++j) out.data()[j] *= inv;
  if (want_record({&x})) {
    mark_traced(out);
    auto xi = x.impl();
    auto oi = out.impl();
    Graph::active().record([xi, oi, m, n, inv] {
      const double* g = out_grad(oi);
      if (!g) return;
      if (double* gx = acc_grad(xi)) {
        for (size_t i = 0; i < m; ++i) {
          for (size_t j = 0; j < n; ++j) gx[i * n + j] += inv * g[j];
        }
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  check_finite(x, "sum");
  double acc = 0.0;
  for (double v : x.vec()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (want_record({&x})) {
    mark_traced(out);
    auto xi = x.impl();
    auto oi = out.impl();
    Graph::active().record([xi, oi] {
      const double* g = out_grad(oi);
      if (!g) return;
      if (double* gx = acc_grad(xi)) {
        for (size_t i = 0; i < xi->data.size(); ++i) gx[i] += g[0];
      }
    });
  }
  return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  check_finite(a, "mse");
  check_finite(b, "mse");
  const size_t n = a.size();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  if (want_record({&a, &b})) {
    mark_traced(out);
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    Graph::active().record([ai, bi, oi, n] {
      const double* g = out_grad(oi);
      if (!g) return;
      const double s = 2.0 * g[0] / static_cast<double>(n);
      if (double* ga = acc_grad(ai)) {
        for (size_t i = 0; i < n; ++i) ga[i] += s * (ai->data[i] - bi->data[i]);
      }
      if (double* gb = acc_grad(bi)) {
        for (size_t i = 0; i < n; ++i) gb[i] -= s * (ai->data[i] - bi->data[i]);
      }
    });
  }
  return out;
}

Tensor masked_frame_sse(const Tensor& pred, const Tensor& target,
                        std::span<const double> frame_mask) {
  require_same_shape(pred, target, "masked_frame_sse");
  const size_t t = pred.rows(), d = pred.cols();
  if (frame_mask.size() != t) {
    throw_usage("ShapeMismatch", "masked_frame_sse: mask length != frame count");
  }
  check_finite(pred, "masked_frame_sse");
  check_finite(target, "masked_frame_sse");
  double denom = 0.0;
  for (double m : frame_mask) denom += m;
  if (denom <= 0.0) throw_usage("ShapeMismatch", "masked_frame_sse: empty mask");
  double acc = 0.0;
  for (size_t i = 0; i < t; ++i) {
    if (frame_mask[i] == 0.0) continue;
    const double* pr = pred.data() + i * d;
    const double* tr = target.data() + i * d;
    double row = 0.0;
    for (size_t j = 0; j < d; ++j) {
      const double diff = pr[j] - tr[j];
      row += diff * diff;
    }
    acc += frame_mask[i] * row;
  }
  Tensor out = Tensor::scalar(acc / denom);
  if (want_record({&pred, &target})) {
    mark_traced(out);
    auto pi = pred.impl(), ti = target.impl(), oi = out.impl();
    std::vector<double> mask(frame_mask.begin(), frame_mask.end());
    Graph::active().record([pi, ti, oi, mask, t, d, denom] {
      const double* g = out_grad(oi);
      if (!g) return;
      const double s = 2.0 * g[0] / denom;
      if (double* gp = acc_grad(pi)) {
        for (size_t i = 0; i < t; ++i) {
          if (mask[i] == 0.0) continue;
          for (size_t j = 0; j < d; ++j) {
            gp[i * d + j] += s * mask[i] * (pi->data[i * d + j] - ti->data[i * d + j]);
          }
        }
      }
      if (double* gt = acc_grad(ti)) {
        for (size_t i = 0; i < t; ++i) {
          if (mask[i] == 0.0) continue;
          for (size_t j = 0; j < d; ++j) {
            gt[i * d + j] -= s * mask[i] * (pi->data[i * d + j] - ti->data[i * d + j]);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace vdx
