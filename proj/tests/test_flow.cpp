#include <doctest.h>

#include <cmath>
#include <cstring>

#include "support.hpp"
#include "vdx/flow.hpp"
#include "vdx/ops.hpp"

using namespace vdx;
using vdxtest::TempDir;
using vdxtest::slurp;

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

LoadedClip make_clip(SceneType scene, size_t n_tokens, uint64_t seed) {
  ConditionSet c;
  Rng pick(seed);
  c.scene_type = scene;
  c.gender = static_cast<Gender>(pick.below(2));
  c.age = static_cast<Age>(pick.below(3));
  c.emotion = static_cast<Emotion>(pick.below(4));
  c.conclusion = stub_conclusion(c);
  std::vector<int> tokens(n_tokens);
  for (int& t : tokens) t = static_cast<int>(pick.below(kVocabSize));
  SynthesizedClip sc = synthesize_clip(c, tokens, seed + 1000);
  LoadedClip clip;
  clip.meta.id = "t" + std::to_string(seed);
  clip.meta.split = "train";
  clip.meta.conditions = sc.conditions;
  clip.meta.script_tokens = sc.tokens;
  clip.meta.duration_frames = sc.duration_frames;
  clip.features = sc.features;
  clip.visual = sc.visual;
  return clip;
}

// Field that ignores conditions and returns a fixed tensor (padded shape).
struct FixedField : VelocityModel {
  Tensor value;
  Tensor velocity(const Tensor& x, double, const ConditionBundle&,
                  std::span<const double>) const override {
    if (value.defined()) return value.clone();
    return Tensor::zeros(x.shape());
  }
};

}  // namespace

TEST_CASE("ot path endpoints and midpoint") {
  Tensor x0 = Tensor::from({2, 2}, {0, 0, 0, 0});
  Tensor x1 = Tensor::from({2, 2}, {2, 2, 2, 2});
  const PathSample at0 = ot_path_sample(x0, x1, 0.0);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(at0.x_tau.data()[i] == 0.0);
    CHECK(at0.u.data()[i] == 2.0);
  }
  const PathSample at1 = ot_path_sample(x0, x1, 1.0);
  for (size_t i = 0; i < 4; ++i) CHECK(at1.x_tau.data()[i] == 2.0);
  const PathSample mid = ot_path_sample(x0, x1, 0.5);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(mid.x_tau.data()[i] == 1.0);
    CHECK(mid.u.data()[i] == 2.0);
  }
  CHECK_THROWS_AS(ot_path_sample(Tensor::zeros({2}), Tensor::zeros({3}), 0.5), Error);
}

TEST_CASE("ot path velocity is independent of tau") {
  Rng rng(3);
  Tensor x0 = Tensor::randn({4, 3}, rng);
  Tensor x1 = Tensor::randn({4, 3}, rng);
  const PathSample ref = ot_path_sample(x0, x1, 0.0);
  for (double tau : {0.0, 0.3, 0.7, 1.0}) {
    const PathSample ps = ot_path_sample(x0, x1, tau);
    for (size_t i = 0; i < ps.u.size(); ++i) CHECK(ps.u.data()[i] == ref.u.data()[i]);
  }
}

TEST_CASE("cfm loss is zero for the perfect predictor and closed-form for zero") {
  DubModel model = DubModel::init(tiny_config(), 5);
  const LoadedClip clip = make_clip(SceneType::Dialogue, 2, 50);
  const size_t frames = clip.features.frames;

  // Replay the documented rng draw order to precompute x1 - x0.
  Rng replay(123);
  (void)replay.uniform();  // tau
  Tensor x0 = Tensor::zeros({frames, 8});
  for (size_t i = 0; i < frames * 8; ++i) x0.data()[i] = replay.normal();
  Tensor u = Tensor::zeros({frames, 8});
  double u_sq_per_frame = 0.0;
  for (size_t i = 0; i < frames * 8; ++i) {
    u.data()[i] = clip.features.values[i] - x0.data()[i];
    u_sq_per_frame += u.data()[i] * u.data()[i];
  }
  u_sq_per_frame /= static_cast<double>(frames);

  FixedField perfect;
  perfect.value = u;
  Rng rng1(123);
  const LoadedClip batch[] = {clip};
  CHECK(cfm_loss_with(perfect, *model.encoder, 8, batch, rng1, 0.0).item() == 0.0);

  FixedField zero;
  Rng rng2(123);
  const double loss = cfm_loss_with(zero, *model.encoder, 8, batch, rng2, 0.0).item();
  CHECK(loss == doctest::Approx(u_sq_per_frame).epsilon(1e-12));
}

TEST_CASE("cfm loss with a frozen rng is a pure function of parameters and batch") {
  Graph::active().clear();
  DubModel model = DubModel::init(tiny_config(), 6);
  const LoadedClip clips[] = {make_clip(SceneType::Dialogue, 2, 51),
                              make_clip(SceneType::Narration, 2, 52)};
  Rng a(9), b(9);
  const double la = cfm_loss(model, clips, a, 0.05).item();
  Graph::active().clear();
  const double lb = cfm_loss(model, clips, b, 0.05).item();
  Graph::active().clear();
  CHECK(std::memcmp(&la, &lb, 8) == 0);
}

TEST_CASE("duration loss is squared error in log-frame space") {
  DubModel model = DubModel::init(tiny_config(), 7);
  const LoadedClip clip = make_clip(SceneType::Monologue, 2, 53);
  // Rig the duration head: zero the MLP path, steer the output bias.
  Tensor w1 = model.store->find("dur.w1");
  Tensor w2 = model.store->find("dur.w2");
  Tensor b2 = model.store->find("dur.b2");
  for (size_t i = 0; i < w1.size(); ++i) w1.data()[i] = 0.0;
  for (size_t i = 0; i < w2.size(); ++i) w2.data()[i] = 0.0;
  const double log_dur = std::log(static_cast<double>(clip.meta.duration_frames));
  b2.data()[0] = log_dur;
  Graph::active().clear();
  CHECK(duration_loss(model, clip).item() == 0.0);
  b2.data()[0] = log_dur + 1.0;
  CHECK(duration_loss(model, clip).item() == doctest::Approx(1.0).epsilon(1e-12));
  Graph::active().clear();
}

TEST_CASE("total loss composes cfm and duration terms") {
  DubModel model = DubModel::init(tiny_config(), 8);
  const LoadedClip clips[] = {make_clip(SceneType::Dialogue, 2, 54),
                              make_clip(SceneType::Dialogue, 3, 55)};
  Graph::active().clear();
  Rng r1(31);
  const double cfm_only = cfm_loss(model, clips, r1, 0.05).item();
  Graph::active().clear();
  double dur_mean = 0.0;
  for (const LoadedClip& c : clips) dur_mean += duration_loss(model, c).item();
  dur_mean /= 2.0;
  Graph::active().clear();

  Rng r2(31);
  const LossParts with_weight = total_loss(model, clips, r2, 0.05, 0.7);
  CHECK(with_weight.total.item() ==
        doctest::Approx(cfm_only + 0.7 * dur_mean).epsilon(1e-12));
  Graph::active().clear();

  Rng r3(31);
  const LossParts no_weight = total_loss(model, clips, r3, 0.05, 0.0);
  CHECK(no_weight.total.item() == cfm_only);
  Graph::active().clear();
}

TEST_CASE("total loss gradients pass a finite-difference check") {
  DubModel model = DubModel::init(tiny_config(), 9);
  const LoadedClip clips[] = {make_clip(SceneType::Dialogue, 2, 56)};
  GradCheckOptions opts;
  opts.h = 1e-5;
  opts.max_coords_per_tensor = 6;
  opts.coord_seed = 17;
  const auto report = check_gradients(
      [&] {
        Rng rng(77);
        return total_loss(model, clips, rng, 0.0, 1.0).total;
      },
      model.store->items(), opts);
  INFO("max rel err ", report.max_rel_err, " at ", report.worst.param);
  CHECK(report.passed(1e-3));
}

TEST_CASE("every parameter is reachable by backward") {
  Graph::active().clear();
  DubModel model = DubModel::init(tiny_config(), 10);
  // One pass with every stream kept and one with every stream dropped, so
  // the encoder tables and the null embeddings all join the graph.
  const LoadedClip clips[] = {make_clip(SceneType::Dialogue, 2, 57)};
  Rng rng(5);
  LossParts kept = total_loss(model, clips, rng, 0.0, 1.0);
  Tensor dropped = cfm_loss(model, clips, rng, 1.0);
  Graph::active().backward(add(kept.total, dropped));
  const auto disconnected = model.store->collect_disconnected();
  for (const auto& name : disconnected) MESSAGE("disconnected: ", name);
  CHECK(disconnected.empty());
  Graph::active().clear();
}

TEST_CASE("padded frames contribute exactly zero gradient") {
  Graph::active().clear();
  DubModel model = DubModel::init(tiny_config(), 11);
  const size_t frames = 12, valid = 9;
  Rng rng(21);
  Tensor x_tau = Tensor::randn({frames, 8}, rng);
  Tensor target = Tensor::randn({frames, 8}, rng);
  std::vector<double> mask(frames, 1.0);
  for (size_t t = valid; t < frames; ++t) mask[t] = 0.0;
  ConditionBundle bundle = model.encoder->null_bundle();

  const auto grads_for = [&](const Tensor& x) {
    Graph::active().clear();
    model.store->zero_grads();
    Tensor v = model.vfield->velocity(x, 0.4, bundle, mask);
    Graph::active().backward(masked_frame_sse(v, target, mask));
    std::vector<double> all;
    for (const auto& p : model.store->items()) {
      if (p.tensor.has_grad()) {
        all.insert(all.end(), p.tensor.grad().begin(), p.tensor.grad().end());
      } else {
        all.insert(all.end(), p.tensor.size(), 0.0);
      }
    }
    Graph::active().clear();
    return all;
  };

  const auto base = grads_for(x_tau);
  Tensor perturbed = x_tau.clone();
  for (size_t t = valid; t < frames; ++t) {
    for (size_t j = 0; j < 8; ++j) perturbed.data()[t * 8 + j] += 3.5 + static_cast<double>(j);
  }
  const auto after = grads_for(perturbed);
  REQUIRE(base.size() == after.size());
  for (size_t i = 0; i < base.size(); ++i) CHECK(base[i] == after[i]);
}

TEST_CASE("velocity output matches the input sequence shape") {
  DubModel model = DubModel::init(tiny_config(), 12);
  Rng rng(3);
  Tensor x = Tensor::randn({14, 8}, rng);
  const LoadedClip clip = make_clip(SceneType::Dialogue, 2, 58);
  ConditionBundle bundle =
      model.encoder->encode(clip.visual, clip.meta.conditions, clip.meta.script_tokens);
  NoGradGuard ng;
  Tensor v = model.vfield->velocity(x, 0.2, bundle);
  CHECK(v.shape() == x.shape());
  CHECK(model.vfield->param_count() > 0);
}

TEST_CASE("training is deterministic and writes a loadable checkpoint") {
  TempDir corpus_dir("flow_corpus");
  Manifest m = generate_corpus({10, 4, corpus_dir.path(), 4, 6});
  TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.steps = 12;
  cfg.lr = 1e-3;
  cfg.seed = 2;
  ModelConfig mc = tiny_config();

  TempDir run1("flow_run1"), run2("flow_run2");
  const TrainResult r1 = train(cfg, mc, m, run1.path());
  const TrainResult r2 = train(cfg, mc, m, run2.path());
  CHECK(slurp(r1.checkpoint_path) == slurp(r2.checkpoint_path));
  CHECK(std::isfinite(r1.final_cfm));

  const Checkpoint ck = read_checkpoint(r1.checkpoint_path);
  DubModel restored = model_from_checkpoint(ck);
  CHECK(restored.store->count() == ck.params.size());
  const auto [tcfg, mcfg] = configs_from_checkpoint(ck);
  CHECK(tcfg.steps == cfg.steps);
  CHECK(mcfg.model_dim == mc.model_dim);

  // Restored parameters match the stored table bitwise.
  for (const NamedParam& p : ck.params) {
    Tensor live = restored.store->find(p.name);
    CHECK(std::memcmp(live.data(), p.tensor.data(), live.size() * 8) == 0);
  }
}

TEST_CASE("training rejects an empty train split") {
  TempDir corpus_dir("flow_empty");
  Manifest m = generate_corpus({6, 4, corpus_dir.path(), 4, 6});
  for (auto& c : m.clips) c.split = "test";
  TrainConfig cfg;
  cfg.steps = 2;
  CHECK_THROWS_WITH_AS(train(cfg, tiny_config(), m, corpus_dir.path() / "run"),
                       doctest::Contains("EmptyBatch"), Error);
}

TEST_CASE("checkpoint loader rejects foreign files") {
  TempDir dir("flow_badmagic");
  atomic_write(dir.path() / "bogus.vdxc", "NOTMAGIC????????");
  CHECK_THROWS_WITH_AS(read_checkpoint(dir.path() / "bogus.vdxc"),
                       doctest::Contains("CheckpointVersionMismatch"), Error);
}

TEST_CASE("staged schedule flag is rejected") {
  TempDir corpus_dir("flow_staged");
  Manifest m = generate_corpus({6, 4, corpus_dir.path(), 4, 6});
  TrainConfig cfg;
  cfg.staged = true;
  CHECK_THROWS_WITH_AS(train(cfg, tiny_config(), m, corpus_dir.path() / "run"),
                       doctest::Contains("BadFlag"), Error);
}
