#include "vdx/conditioning.hpp"

#include <cmath>
#include <map>

#include "vdx/ops.hpp"

namespace vdx {

Tensor positional_encoding(size_t frames, size_t dim) {
  // Hot on the velocity-net path; memoized per shape. Single-threaded use
  // only, like the rest of the training context.
  static std::map<std::pair<size_t, size_t>, Tensor> cache;
  const auto key = std::make_pair(frames, dim);
  const auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  // Three bases over the channel pairs:
  //   pair 0            normalized-position ramp and a log-length constant
  //   pairs 1..P/2      whole-cycles-per-clip harmonics sin/cos(2 pi k t/T)
  //   remaining pairs   absolute geometric frequencies
  // The fractional harmonics matter: per-clip periodic structure has a
  // length-dependent angular frequency that absolute encodings cannot
  // express with one channel. The log-length constant survives mean
  // pooling, which is all the duration head gets to see.
  constexpr double kTwoPi = 6.28318530717958647692;
  const size_t pairs = dim / 2;
  const size_t harmonic_pairs = pairs / 2;
  const size_t absolute_pairs = pairs - harmonic_pairs - 1;
  Tensor pe = Tensor::zeros({frames, dim});
  for (size_t t = 0; t < frames; ++t) {
    double* row = pe.data() + t * dim;
    const double psi = static_cast<double>(t) / static_cast<double>(frames);
    row[0] = psi - 0.5;
    row[1] = std::log(static_cast<double>(frames)) / 10.0;
    // Harmonics carry double weight: per-clip periodic structure is the
    // hardest content for the attention blocks to gate, and a larger share
    // of the per-position feature budget speeds that circuit up.
    for (size_t k = 1; k <= harmonic_pairs; ++k) {
      row[2 * k] = 2.0 * std::sin(kTwoPi * static_cast<double>(k) * psi);
      row[2 * k + 1] = 2.0 * std::cos(kTwoPi * static_cast<double>(k) * psi);
    }
    for (size_t i = 0; i < absolute_pairs; ++i) {
      const double omega =
          absolute_pairs > 1
              ? std::pow(10000.0, -static_cast<double>(i) /
                                      static_cast<double>(absolute_pairs - 1))
              : 1.0;
      row[2 * (harmonic_pairs + 1 + i)] = std::sin(omega * static_cast<double>(t));
      row[2 * (harmonic_pairs + 1 + i) + 1] = std::cos(omega * static_cast<double>(t));
    }
  }
  cache.emplace(key, pe);
  return pe;
}

ConditionEncoder::ConditionEncoder(ParamStore& store, Rng& init_rng, size_t model_dim)
    : dim_(model_dim) {
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(kVisualDim));
  visual_proj_w_ = store.add("cond.visual_proj.w",
                             Tensor::randn({kVisualDim, model_dim}, init_rng, proj_std));
  visual_proj_b_ = store.add("cond.visual_proj.b", Tensor::zeros({1, model_dim}));
  scene_table_ = store.add("cond.scene_table", Tensor::randn({3, model_dim}, init_rng, 0.5));
  gender_table_ = store.add("cond.gender_table", Tensor::randn({2, model_dim}, init_rng, 0.5));
  age_table_ = store.add("cond.age_table", Tensor::randn({3, model_dim}, init_rng, 0.5));
  emotion_table_ =
      store.add("cond.emotion_table", Tensor::randn({4, model_dim}, init_rng, 0.5));
  token_table_ = store.add("cond.token_table",
                           Tensor::randn({static_cast<size_t>(kVocabSize), model_dim},
                                         init_rng, 0.5));
  null_visual_ = store.add("cond.null_visual", Tensor::randn({1, model_dim}, init_rng, 0.5));
  null_conclusion_ =
      store.add("cond.null_conclusion", Tensor::randn({1, model_dim}, init_rng, 0.5));
  null_script_ = store.add("cond.null_script", Tensor::randn({1, model_dim}, init_rng, 0.5));
}

Tensor ConditionEncoder::encode_visual(const FeatureSeq& visual_track) const {
  if (visual_track.dim != kVisualDim) {
    throw_usage("ShapeMismatch", "visual track must have 16 dims");
  }
  if (visual_track.frames < 1) throw_usage("ShapeMismatch", "visual track is empty");
  Tensor x = Tensor::from({visual_track.frames, kVisualDim}, visual_track.values);
  Tensor projected = add_rowvec(matmul(x, visual_proj_w_), visual_proj_b_);
  return add(projected, positional_encoding(visual_track.frames, dim_));
}

Tensor ConditionEncoder::encode_conditions(const ConditionSet& c) const {
  const int scene_id = static_cast<int>(c.scene_type);
  const int gender_id = static_cast<int>(c.gender);
  const int age_id = static_cast<int>(c.age);
  const int emotion_id = static_cast<int>(c.emotion);
  const Tensor rows[4] = {
      embedding(scene_table_, std::span<const int>(&scene_id, 1)),
      embedding(gender_table_, std::span<const int>(&gender_id, 1)),
      embedding(age_table_, std::span<const int>(&age_id, 1)),
      embedding(emotion_table_, std::span<const int>(&emotion_id, 1)),
  };
  return concat_rows(rows);
}

Tensor ConditionEncoder::encode_script(std::span<const int> tokens) const {
  if (tokens.empty()) return null_script_;
  Tensor emb = embedding(token_table_, tokens);
  return add(emb, positional_encoding(tokens.size(), dim_));
}

ConditionBundle ConditionEncoder::encode(const FeatureSeq& visual_track,
                                         const ConditionSet& c,
                                         std::span<const int> tokens) const {
  ConditionBundle b;
  b.visual = encode_visual(visual_track);
  b.conclusion = encode_conditions(c);
  b.script = encode_script(tokens);
  b.script_null = tokens.empty();
  return b;
}

ConditionBundle ConditionEncoder::null_bundle() const {
  ConditionBundle b;
  b.visual = null_visual_;
  b.conclusion = null_conclusion_;
  b.script = null_script_;
  b.visual_null = b.conclusion_null = b.script_null = true;
  return b;
}

ConditionBundle ConditionEncoder::apply_dropout(const ConditionBundle& bundle, double p,
                                                Rng& rng) const {
  if (p < 0.0 || p > 1.0) throw_usage("BadFlag", "dropout probability outside [0, 1]");
  ConditionBundle out = bundle;
  const double u_visual = rng.uniform();
  const double u_conclusion = rng.uniform();
  const double u_script = rng.uniform();
  if (u_visual < p) {
    out.visual = null_visual_;
    out.visual_null = true;
  }
  if (u_conclusion < p) {
    out.conclusion = null_conclusion_;
    out.conclusion_null = true;
  }
  if (u_script < p) {
    out.script = null_script_;
    out.script_null = true;
  }
  return out;
}

}  // namespace vdx
