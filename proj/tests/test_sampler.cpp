#include <doctest.h>

#include <cmath>
#include <cstring>

#include "vdx/ops.hpp"
#include "vdx/sampler.hpp"

using namespace vdx;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.model_dim = 16;
  cfg.n_blocks = 1;
  cfg.n_heads = 2;
  cfg.ffn_mult = 2;
  cfg.duration_hidden = 8;
  return cfg;
}

LoadedClip make_clip(uint64_t seed) {
  ConditionSet c;
  Rng pick(seed);
  c.scene_type = static_cast<SceneType>(pick.below(3));
  c.gender = static_cast<Gender>(pick.below(2));
  c.age = static_cast<Age>(pick.below(3));
  c.emotion = static_cast<Emotion>(pick.below(4));
  c.conclusion = stub_conclusion(c);
  std::vector<int> tokens(3);
  for (int& t : tokens) t = static_cast<int>(pick.below(kVocabSize));
  SynthesizedClip sc = synthesize_clip(c, tokens, seed + 2000);
  LoadedClip clip;
  clip.meta.id = "s" + std::to_string(seed);
  clip.meta.split = "test";
  clip.meta.conditions = sc.conditions;
  clip.meta.script_tokens = sc.tokens;
  clip.meta.duration_frames = sc.duration_frames;
  clip.features = sc.features;
  clip.visual = sc.visual;
  return clip;
}

// Constant stub distinguishing the four guidance patterns by their null
// flags: full -> a, (phi,cc,ct) -> b, (phi,phi,ct) -> c, (phi,phi,phi) -> u.
struct PatternField : VelocityModel {
  double a = 0, b = 0, c = 0, u = 0;
  mutable size_t calls = 0;
  Tensor velocity(const Tensor& x, double, const ConditionBundle& bundle,
                  std::span<const double>) const override {
    ++calls;
    double v = 0;
    if (!bundle.visual_null) v = a;
    else if (!bundle.conclusion_null) v = b;
    else if (!bundle.script_null) v = c;
    else v = u;
    return Tensor::full(x.shape(), v);
  }
};

struct ZeroField : VelocityModel {
  Tensor velocity(const Tensor& x, double, const ConditionBundle&,
                  std::span<const double>) const override {
    return Tensor::zeros(x.shape());
  }
};

struct DecayField : VelocityModel {  // v(x) = -x
  Tensor velocity(const Tensor& x, double, const ConditionBundle&,
                  std::span<const double>) const override {
    return scale(x, -1.0);
  }
};

struct SamplerFixture {
  DubModel model = DubModel::init(tiny_config(), 33);
  LoadedClip clip = make_clip(60);
  ConditionBundle bundle;
  Tensor x;
  SamplerFixture() {
    NoGradGuard ng;
    bundle = model.encoder->encode(clip.visual, clip.meta.conditions,
                                   clip.meta.script_tokens);
    Rng rng(8);
    x = Tensor::randn({10, 8}, rng);
  }
};

}  // namespace

TEST_CASE("guided velocity with a stub net evaluates the nested formula") {
  SamplerFixture fx;
  PatternField stub;
  stub.a = 1.0;
  stub.b = 10.0;
  stub.c = 100.0;
  stub.u = 1000.0;
  NoGradGuard ng;
  Tensor out = guided_velocity(stub, fx.x, 0.3, fx.bundle, *fx.model.encoder, 2.0, 3.0, 5.0);
  // u + 2(a-b) + 3(b-c) + 5(c-u) elementwise
  const double expected = 1000.0 + 2.0 * (1.0 - 10.0) + 3.0 * (10.0 - 100.0) +
                          5.0 * (100.0 - 1000.0);
  for (size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == expected);
  CHECK(stub.calls == 4);
}

TEST_CASE("guided velocity rejects bundles with null streams") {
  SamplerFixture fx;
  ZeroField stub;
  ConditionBundle broken = fx.bundle;
  broken.visual = fx.model.encoder->null_visual();
  broken.visual_null = true;
  NoGradGuard ng;
  CHECK_THROWS_AS(
      guided_velocity(stub, fx.x, 0.3, broken, *fx.model.encoder, 1.0, 1.0, 1.0), Error);
}

TEST_CASE("zero guidance scales are bitwise the unconditional pass") {
  SamplerFixture fx;
  NoGradGuard ng;
  const size_t calls_before = fx.model.vfield->forward_calls();
  Tensor guided =
      guided_velocity(*fx.model.vfield, fx.x, 0.25, fx.bundle, *fx.model.encoder, 0, 0, 0);
  CHECK(fx.model.vfield->forward_calls() - calls_before == 4);
  Tensor uncond = fx.model.vfield->velocity(fx.x, 0.25, fx.model.encoder->null_bundle());
  REQUIRE(guided.size() == uncond.size());
  CHECK(std::memcmp(guided.data(), uncond.data(), guided.size() * 8) == 0);
}

TEST_CASE("unit guidance scales telescope to the fully conditional pass") {
  SamplerFixture fx;
  NoGradGuard ng;
  Tensor guided =
      guided_velocity(*fx.model.vfield, fx.x, 0.6, fx.bundle, *fx.model.encoder, 1, 1, 1);
  Tensor full = fx.model.vfield->velocity(fx.x, 0.6, fx.bundle);
  for (size_t i = 0; i < guided.size(); ++i) {
    CHECK(std::fabs(guided.data()[i] - full.data()[i]) <= 1e-12);
  }
}

TEST_CASE("guided velocity is affine in each scale") {
  SamplerFixture fx;
  NoGradGuard ng;
  const auto eval = [&](double lv, double lc, double lt) {
    return guided_velocity(*fx.model.vfield, fx.x, 0.4, fx.bundle, *fx.model.encoder, lv, lc,
                           lt);
  };
  for (int axis = 0; axis < 3; ++axis) {
    Tensor g0 = eval(axis == 0 ? 0 : 0.7, axis == 1 ? 0 : 0.7, axis == 2 ? 0 : 0.7);
    Tensor g1 = eval(axis == 0 ? 1 : 0.7, axis == 1 ? 1 : 0.7, axis == 2 ? 1 : 0.7);
    Tensor g2 = eval(axis == 0 ? 2 : 0.7, axis == 1 ? 2 : 0.7, axis == 2 ? 2 : 0.7);
    for (size_t i = 0; i < g0.size(); ++i) {
      const double second_diff = g2.data()[i] - 2.0 * g1.data()[i] + g0.data()[i];
      CHECK(std::fabs(second_diff) <= 1e-12);
    }
  }
}

TEST_CASE("integrating a zero field returns the initial noise") {
  SamplerFixture fx;
  ZeroField zero;
  SampleConfig cfg;
  cfg.lambda_v = cfg.lambda_c = cfg.lambda_t = 0.0;
  cfg.steps = 8;
  Rng rng(414);
  NoGradGuard ng;
  Tensor out = integrate(zero, *fx.model.encoder, fx.bundle, 12, 8, cfg, rng);
  Rng rng2(414);
  Tensor expected = Tensor::randn({12, 8}, rng2);
  for (size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == expected.data()[i]);
}

TEST_CASE("a constant field moves the state by exactly the field value") {
  PatternField stub;  // all patterns return u = 2.5 when fully null-viewed
  stub.a = stub.b = stub.c = stub.u = 2.5;
  Rng rng(5);
  Tensor x0 = Tensor::randn({6, 8}, rng);
  const VelocityFn field = [&](const Tensor& x, double tau) {
    ConditionBundle dummy;
    dummy.visual = dummy.conclusion = dummy.script = Tensor::zeros({1, 1});
    return stub.velocity(x, tau, dummy, {});
  };
  for (size_t n : {size_t{1}, size_t{4}, size_t{32}}) {
    Tensor out = integrate_field(field, x0, n, OdeScheme::Euler);
    for (size_t i = 0; i < out.size(); ++i) {
      CHECK(out.data()[i] == doctest::Approx(x0.data()[i] + 2.5).epsilon(1e-12));
    }
  }
}

TEST_CASE("euler on v = -x converges to x0/e within 1 percent") {
  DecayField decay;
  Rng rng(6);
  Tensor x0 = Tensor::randn({4, 8}, rng);
  const VelocityFn field = [&](const Tensor& x, double tau) {
    ConditionBundle dummy;
    return decay.velocity(x, tau, dummy, {});
  };
  Tensor out = integrate_field(field, x0, 1000, OdeScheme::Euler);
  const double target_factor = std::exp(-1.0);
  for (size_t i = 0; i < out.size(); ++i) {
    const double expected = x0.data()[i] * target_factor;
    CHECK(std::fabs(out.data()[i] - expected) <= std::fabs(expected) * 0.01);
  }
  // The midpoint scheme lands much closer, cross-checking both integrators.
  Tensor mid = integrate_field(field, x0, 64, OdeScheme::Midpoint);
  for (size_t i = 0; i < mid.size(); ++i) {
    const double expected = x0.data()[i] * target_factor;
    CHECK(std::fabs(mid.data()[i] - expected) <= std::fabs(expected) * 0.001);
  }
}

TEST_CASE("non-finite states abort integration with the step index") {
  struct ExplodeField : VelocityModel {
    Tensor velocity(const Tensor& x, double, const ConditionBundle&,
                    std::span<const double>) const override {
      return Tensor::full(x.shape(), std::numeric_limits<double>::infinity());
    }
  } boom;
  Rng rng(7);
  Tensor x0 = Tensor::randn({3, 8}, rng);
  const VelocityFn field = [&](const Tensor& x, double tau) {
    ConditionBundle dummy;
    return boom.velocity(x, tau, dummy, {});
  };
  CHECK_THROWS_WITH_AS(integrate_field(field, x0, 4, OdeScheme::Euler),
                       doctest::Contains("step 0"), Error);
}

TEST_CASE("generation is deterministic and clamps runaway durations") {
  SamplerFixture fx;
  SampleConfig cfg;
  cfg.steps = 4;
  cfg.seed = 99;
  GeneratedClip g1 = generate_clip(fx.model, fx.clip, cfg);
  GeneratedClip g2 = generate_clip(fx.model, fx.clip, cfg);
  CHECK(g1.features.values == g2.features.values);
  CHECK(g1.predicted_frames == g2.predicted_frames);
  CHECK(g1.predicted_frames >= kMinGeneratedFrames);
  CHECK(g1.predicted_frames <= kMaxGeneratedFrames);

  // Same seed, different scales: the initial noise is shared, so a zero
  // field would reproduce it; here we just check the duration path.
  Tensor b2 = fx.model.store->find("dur.b2");
  b2.data()[0] = 30.0;  // exp(30) frames, far beyond the clamp
  cfg.steps = 1;
  GeneratedClip clamped = generate_clip(fx.model, fx.clip, cfg);
  CHECK(clamped.duration_clamped);
  CHECK(clamped.predicted_frames == kMaxGeneratedFrames);
}

TEST_CASE("generation rejects empty scripts") {
  SamplerFixture fx;
  LoadedClip broken = fx.clip;
  broken.meta.script_tokens.clear();
  SampleConfig cfg;
  CHECK_THROWS_WITH_AS(generate_clip(fx.model, broken, cfg),
                       doctest::Contains("EmptyScript"), Error);
}
