#pragma once

#include <span>

#include "vdx/corpus.hpp"
#include "vdx/optim.hpp"
#include "vdx/tensor.hpp"

namespace vdx {

// The three condition streams fed to the velocity net. A dropped stream is a
// length-1 learned null embedding, never zeros: zeros collide with real
// activations, a trained null token does not.
struct ConditionBundle {
  Tensor visual;      // F x d, or 1 x d null
  Tensor conclusion;  // 4 x d, or 1 x d null
  Tensor script;      // L x d, or 1 x d null
  bool visual_null = false;
  bool conclusion_null = false;
  bool script_null = false;
};

// Sinusoidal position table, rows 0..frames-1. Shared by sequence encoders
// and the velocity net.
Tensor positional_encoding(size_t frames, size_t dim);

class ConditionEncoder {
 public:
  ConditionEncoder(ParamStore& store, Rng& init_rng, size_t model_dim = 64);

  size_t dim() const { return dim_; }

  Tensor encode_visual(const FeatureSeq& visual_track) const;  // F x d
  Tensor encode_conditions(const ConditionSet& c) const;       // 4 x d
  // Empty scripts degenerate to the null stream.
  Tensor encode_script(std::span<const int> tokens) const;     // L x d

  ConditionBundle encode(const FeatureSeq& visual_track, const ConditionSet& c,
                         std::span<const int> tokens) const;
  ConditionBundle null_bundle() const;

  Tensor null_visual() const { return null_visual_; }
  Tensor null_conclusion() const { return null_conclusion_; }
  Tensor null_script() const { return null_script_; }

  // Independently replaces each stream by its null embedding with
  // probability p. Consumes exactly three rng draws, in the order
  // visual, conclusion, script, regardless of p.
  ConditionBundle apply_dropout(const ConditionBundle& bundle, double p, Rng& rng) const;

 private:
  size_t dim_;
  Tensor visual_proj_w_, visual_proj_b_;
  Tensor scene_table_, gender_table_, age_table_, emotion_table_;
  Tensor token_table_;
  Tensor null_visual_, null_conclusion_, null_script_;
};

}  // namespace vdx
