#pragma once

#include <functional>

#include "vdx/flow.hpp"

namespace vdx {

enum class OdeScheme { Euler, Midpoint };

struct SampleConfig {
  double lambda_v = 1.0;
  double lambda_c = 1.0;
  double lambda_t = 1.0;
  size_t steps = 32;
  uint64_t seed = 0;
  OdeScheme scheme = OdeScheme::Euler;
};

// Three-scale nested classifier-free guidance:
//   g = v(x,phi,phi,phi)
//     + lv * (v(x,cv,cc,ct) - v(x,phi,cc,ct))
//     + lc * (v(x,phi,cc,ct) - v(x,phi,phi,ct))
//     + lt * (v(x,phi,phi,ct) - v(x,phi,phi,phi))
// The four condition patterns are evaluated in one batched call. With all
// scales zero the result is the unconditional pass, bit for bit.
Tensor guided_velocity(const VelocityModel& net, const Tensor& x_tau, double tau,
                       const ConditionBundle& bundle, const ConditionEncoder& encoder,
                       double lambda_v, double lambda_c, double lambda_t);

// Fixed-step ODE integration of an arbitrary field from x0 at tau=0 to
// tau=1. Throws NonFinite with the failing step index.
using VelocityFn = std::function<Tensor(const Tensor& x, double tau)>;
Tensor integrate_field(const VelocityFn& field, Tensor x0, size_t n_steps, OdeScheme scheme);

// Draws x0 ~ N(0, I) from rng and integrates the guided field. The rng is
// consumed only for the initial noise.
Tensor integrate(const VelocityModel& net, const ConditionEncoder& encoder,
                 const ConditionBundle& bundle, size_t frames, size_t dim,
                 const SampleConfig& cfg, Rng& rng);

struct GeneratedClip {
  std::string id;
  FeatureSeq features;
  size_t predicted_frames = 0;
  bool duration_clamped = false;
};

// Full inference for one clip: predict the duration, clamp it to [4, 4096],
// integrate from seeded noise, return the feature sequence.
GeneratedClip generate_clip(const DubModel& model, const LoadedClip& clip,
                            const SampleConfig& cfg);

// CLI body: generates every clip of a split, writes <id>.gen.bin payloads
// plus a generations.jsonl sidecar (id, lambda triple, steps, seed,
// predicted frames) under out_dir. Per-clip rng seed is
// mix(config seed, fnv1a(id)).
void run_sampling(const DubModel& model, const Manifest& manifest, const std::string& split,
                  const SampleConfig& cfg, const std::filesystem::path& out_dir);

inline constexpr size_t kMinGeneratedFrames = 4;
inline constexpr size_t kMaxGeneratedFrames = 4096;

}  // namespace vdx
