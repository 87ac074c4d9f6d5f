#include <doctest.h>

#include <cmath>
#include <cstring>

#include "vdx/ops.hpp"
#include "vdx/optim.hpp"

using namespace vdx;

namespace {

Tensor leaf(std::vector<size_t> shape, Rng& rng, double stddev = 1.0) {
  return Tensor::randn(std::move(shape), rng, stddev).set_requires_grad(true);
}

GradCheckReport fd_check(const std::function<Tensor()>& builder,
                         std::vector<NamedParam> params, double h = 1e-5) {
  GradCheckOptions opts;
  opts.h = h;
  return check_gradients(builder, params, opts);
}

}  // namespace

TEST_CASE("matmul identity leaves the matrix unchanged") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor out = matmul(a, eye);
  for (size_t i = 0; i < 4; ++i) CHECK(out.data()[i] == a.data()[i]);
}

TEST_CASE("softmax of a constant row is uniform") {
  Tensor out = softmax_lastdim(Tensor::from({3}, {0, 0, 0}));
  for (size_t i = 0; i < 3; ++i) CHECK(out.data()[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("mse of a tensor with itself is zero") {
  Rng rng(3);
  Tensor x = Tensor::randn({4, 5}, rng);
  CHECK(mse(x, x).item() == 0.0);
}

TEST_CASE("shape mismatches are rejected") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 3});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("ShapeMismatch"), Error);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), Error);
  CHECK_THROWS_AS(layer_norm(a, Tensor::zeros({4}), Tensor::zeros({3})), Error);
}

TEST_CASE("backward of w^2 at w=3 gives 6") {
  Graph::active().clear();
  Tensor w = Tensor::from({1}, {3.0}).set_requires_grad(true);
  Tensor one = Tensor::from({1}, {1.0});
  Tensor loss = mse(mul(w, one), Tensor::zeros({1}));
  Graph::active().backward(loss);
  CHECK(w.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward of sum gives an all-ones gradient") {
  Graph::active().clear();
  Rng rng(11);
  Tensor x = leaf({3, 4}, rng);
  Graph::active().backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("second backward without reset is an error") {
  Graph::active().clear();
  Tensor w = Tensor::from({1}, {2.0}).set_requires_grad(true);
  Tensor loss = mse(w, Tensor::zeros({1}));
  Graph::active().backward(loss);
  CHECK_THROWS_WITH_AS(Graph::active().backward(loss), doctest::Contains("GraphConsumed"),
                       Error);
  Graph::active().clear();
}

TEST_CASE("backward requires a scalar") {
  Graph::active().clear();
  Rng rng(5);
  Tensor x = leaf({2, 2}, rng);
  Tensor y = add(x, x);
  CHECK_THROWS_WITH_AS(Graph::active().backward(y), doctest::Contains("NotScalar"), Error);
  Graph::active().clear();
}

TEST_CASE("disconnected leaves are flagged and zero-filled") {
  Graph::active().clear();
  Rng rng(6);
  ParamStore store;
  Tensor used = store.add("used", Tensor::randn({2, 2}, rng));
  Tensor unused = store.add("unused", Tensor::randn({2, 2}, rng));
  Tensor loss = mse(used, Tensor::zeros({2, 2}));
  Graph::active().backward(loss);
  const auto missing = store.collect_disconnected();
  REQUIRE(missing.size() == 1);
  CHECK(missing[0] == "unused");
  for (double g : unused.grad()) CHECK(g == 0.0);
  Graph::active().clear();
}

TEST_CASE("every primitive matches central finite differences") {
  // rtol 1e-5 at h=1e-5 over 100 seeds, exercising the full primitive set.
  double worst = 0.0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    Tensor a = leaf({3, 4}, rng);
    Tensor b = leaf({3, 4}, rng);
    Tensor w = leaf({4, 3}, rng);
    Tensor v = leaf({1, 4}, rng);
    Tensor gain = leaf({4}, rng, 0.3);
    Tensor bias = leaf({4}, rng, 0.3);
    Tensor table = leaf({5, 3}, rng);
    Tensor target34 = Tensor::randn({3, 4}, rng);
    Tensor target33 = Tensor::randn({3, 3}, rng);
    Tensor target43 = Tensor::randn({4, 3}, rng);
    Tensor target24 = Tensor::randn({2, 4}, rng);
    Tensor target63 = Tensor::randn({6, 3}, rng);
    Tensor target14 = Tensor::randn({1, 4}, rng);
    Tensor target32 = Tensor::randn({3, 2}, rng);
    Tensor target38 = Tensor::randn({3, 8}, rng);
    const std::vector<int> ids = {0, 4, 2};
    const std::vector<double> mask = {1.0, 0.0, 1.0};

    const std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
        {"add", [&] { return mse(add(a, b), target34); }},
        {"sub", [&] { return mse(sub(a, b), target34); }},
        {"mul", [&] { return mse(mul(a, b), target34); }},
        {"scale", [&] { return mse(scale(a, -1.7), target34); }},
        {"add_rowvec", [&] { return mse(add_rowvec(a, v), target34); }},
        {"matmul", [&] { return mse(matmul(a, w), target33); }},
        {"transpose", [&] { return mse(transpose(a), target43); }},
        {"gelu", [&] { return mse(gelu(a), target34); }},
        {"softmax", [&] { return mse(softmax_lastdim(a), target34); }},
        {"layer_norm", [&] { return mse(layer_norm(a, gain, bias), target34); }},
        {"embedding", [&] { return mse(embedding(table, ids), target33); }},
        {"concat_rows",
         [&] {
           const Tensor parts[2] = {a, b};
           return mse(concat_rows(parts), Tensor::zeros({6, 4}));
         }},
        {"concat_cols",
         [&] {
           const Tensor parts[2] = {a, b};
           return mse(concat_cols(parts), target38);
         }},
        {"slice_cols", [&] { return mse(slice_cols(a, 1, 3), target32); }},
        {"mean_rows", [&] { return mse(mean_rows(a), target14); }},
        {"sum", [&] { return scale(sum(a), 0.3); }},
        {"mse", [&] { return mse(a, b); }},
        {"masked_frame_sse", [&] { return masked_frame_sse(a, b, mask); }},
    };
    for (const auto& [name, builder] : cases) {
      const NamedParam params[] = {{"a", a}, {"b", b}, {"w", w},       {"v", v},
                                   {"g", gain}, {"bi", bias}, {"tab", table}};
      const auto report = fd_check(builder, {params, params + 7});
      INFO("primitive ", std::string(name), " seed ", seed, " rel err ",
           report.max_rel_err, " worst at ", report.worst.param, "[", report.worst.index,
           "] analytic ", report.worst.analytic, " numeric ", report.worst.numeric);
      CHECK(report.passed(1e-5));
      worst = std::max(worst, report.max_rel_err);
    }
  }
  MESSAGE("worst primitive rel err: ", worst);
}

TEST_CASE("gradient check on a linear layer is tight") {
  Rng rng(42);
  Tensor w = leaf({4, 3}, rng);
  Tensor b = leaf({1, 3}, rng);
  Tensor x = Tensor::randn({5, 4}, rng);
  Tensor target = Tensor::randn({5, 3}, rng);
  const NamedParam params[] = {{"w", w}, {"b", b}};
  const auto report =
      fd_check([&] { return mse(add_rowvec(matmul(x, w), b), target); }, {params, params + 2});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("gradient check of a constant function reports zero everywhere") {
  Rng rng(43);
  Tensor w = leaf({3, 3}, rng);
  const NamedParam params[] = {{"w", w}};
  const auto report = fd_check([&] { return Tensor::scalar(2.5); }, {params, params + 1});
  CHECK(report.max_rel_err == 0.0);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(7);
  Tensor w = leaf({3, 3}, rng);
  Tensor x = Tensor::randn({2, 3}, rng);
  Tensor t1 = Tensor::randn({2, 3}, rng);
  const auto loss1 = [&] { return mse(matmul(x, w), t1); };
  const auto loss2 = [&] { return scale(sum(mul(w, w)), 0.25); };
  const double ca = 1.7, cb = -0.6;

  Graph::active().clear();
  w.zero_grad();
  Graph::active().backward(loss1());
  std::vector<double> g1(w.grad().begin(), w.grad().end());
  Graph::active().clear();
  w.zero_grad();
  Graph::active().backward(loss2());
  std::vector<double> g2(w.grad().begin(), w.grad().end());
  Graph::active().clear();
  w.zero_grad();
  Graph::active().backward(add(scale(loss1(), ca), scale(loss2(), cb)));
  for (size_t i = 0; i < w.size(); ++i) {
    CHECK(std::fabs(w.grad()[i] - (ca * g1[i] + cb * g2[i])) <= 1e-12);
  }
  Graph::active().clear();
}

TEST_CASE("identical seeds give bit-identical values and gradients") {
  const auto run = [](std::vector<double>& values, std::vector<double>& grads) {
    Graph::active().clear();
    Rng rng(99);
    Tensor w = leaf({4, 4}, rng);
    Tensor x = Tensor::randn({3, 4}, rng);
    Tensor out = softmax_lastdim(gelu(matmul(x, w)));
    Tensor loss = mse(out, Tensor::zeros({3, 4}));
    Graph::active().backward(loss);
    values.assign(out.data(), out.data() + out.size());
    grads.assign(w.grad().begin(), w.grad().end());
    Graph::active().clear();
  };
  std::vector<double> v1, g1, v2, g2;
  run(v1, g1);
  run(v2, g2);
  CHECK(std::memcmp(v1.data(), v2.data(), v1.size() * 8) == 0);
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * 8) == 0);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Rng rng(1);
  ParamStore store;
  Tensor w = store.add("w", Tensor::randn({2, 2}, rng));
  const std::vector<double> before(w.data(), w.data() + w.size());
  w.ensure_grad();
  Adam adam(store, {0.1, 0.9, 0.999, 1e-8});
  adam.step();
  for (size_t i = 0; i < w.size(); ++i) CHECK(w.data()[i] == before[i]);
}

TEST_CASE("adam: bias-corrected first step moves by about -lr") {
  ParamStore store;
  Tensor w = store.add("w", Tensor::from({1}, {0.5}));
  w.ensure_grad();
  w.grad_data()[0] = 1.0;
  Adam adam(store, {0.1, 0.9, 0.999, 1e-8});
  adam.step();
  CHECK(w.data()[0] == doctest::Approx(0.5 - 0.1).epsilon(1e-6));
  CHECK(adam.step_count() == 1);
}

TEST_CASE("adam: repeated identical gradients keep the update direction") {
  ParamStore store;
  Tensor w = store.add("w", Tensor::from({1}, {0.0}));
  Adam adam(store, {0.05, 0.9, 0.999, 1e-8});
  double prev = 0.0;
  for (int s = 0; s < 2; ++s) {
    w.zero_grad();
    w.ensure_grad();
    w.grad_data()[0] = -2.0;
    adam.step();
    CHECK(w.data()[0] > prev);  // negative gradient, parameter climbs
    prev = w.data()[0];
  }
}

TEST_CASE("adam rejects missing gradients") {
  ParamStore store;
  store.add("w", Tensor::zeros({2}));
  Adam adam(store, {});
  CHECK_THROWS_WITH_AS(adam.step(), doctest::Contains("ShapeMismatch"), Error);
}
