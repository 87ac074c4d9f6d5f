#include "vdx/sampler.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "vdx/ops.hpp"

namespace vdx {

namespace {

bool all_finite(const Tensor& t) {
  for (double v : t.vec()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

Tensor guided_velocity(const VelocityModel& net, const Tensor& x_tau, double tau,
                       const ConditionBundle& bundle, const ConditionEncoder& encoder,
                       double lambda_v, double lambda_c, double lambda_t) {
  if (bundle.visual_null || bundle.conclusion_null || bundle.script_null) {
    throw_usage("ShapeMismatch",
                "guided_velocity expects a fully populated bundle; nulls are injected "
                "internally");
  }
  ConditionBundle pattern_ccc = bundle;           // (cv, cc, ct)
  ConditionBundle pattern_xcc = bundle;           // (phi, cc, ct)
  pattern_xcc.visual = encoder.null_visual();
  pattern_xcc.visual_null = true;
  ConditionBundle pattern_xxc = pattern_xcc;      // (phi, phi, ct)
  pattern_xxc.conclusion = encoder.null_conclusion();
  pattern_xxc.conclusion_null = true;
  ConditionBundle pattern_xxx = pattern_xxc;      // (phi, phi, phi)
  pattern_xxx.script = encoder.null_script();
  pattern_xxx.script_null = true;

  const ConditionBundle patterns[4] = {pattern_xxx, pattern_ccc, pattern_xcc, pattern_xxc};
  const std::vector<Tensor> v = net.velocity_batch(x_tau, tau, patterns);
  const Tensor& uncond = v[0];
  const Tensor& full = v[1];
  const Tensor& no_visual = v[2];
  const Tensor& script_only = v[3];

  // Start from a copy of the unconditional pass and only touch it for
  // nonzero scales, so lambda = (0,0,0) stays bitwise identical to it.
  Tensor out = uncond.clone();
  const size_t n = out.size();
  if (lambda_v != 0.0) {
    for (size_t i = 0; i < n; ++i) {
      out.data()[i] += lambda_v * (full.data()[i] - no_visual.data()[i]);
    }
  }
  if (lambda_c != 0.0) {
    for (size_t i = 0; i < n; ++i) {
      out.data()[i] += lambda_c * (no_visual.data()[i] - script_only.data()[i]);
    }
  }
  if (lambda_t != 0.0) {
    for (size_t i = 0; i < n; ++i) {
      out.data()[i] += lambda_t * (script_only.data()[i] - uncond.data()[i]);
    }
  }
  return out;
}

Tensor integrate_field(const VelocityFn& field, Tensor x0, size_t n_steps, OdeScheme scheme) {
  if (n_steps < 1) throw_usage("BadFlag", "ODE step count must be >= 1");
  const double h = 1.0 / static_cast<double>(n_steps);
  Tensor x = x0.clone();
  for (size_t k = 0; k < n_steps; ++k) {
    const double tau = static_cast<double>(k) * h;
    Tensor v;
    if (scheme == OdeScheme::Euler) {
      v = field(x, tau);
    } else {
      Tensor v_half = field(x, tau);
      Tensor x_mid = Tensor::zeros(x.shape());
      for (size_t i = 0; i < x.size(); ++i) {
        x_mid.data()[i] = x.data()[i] + 0.5 * h * v_half.data()[i];
      }
      v = field(x_mid, tau + 0.5 * h);
    }
    for (size_t i = 0; i < x.size(); ++i) x.data()[i] += h * v.data()[i];
    if (!all_finite(x)) {
      throw_runtime("NonFinite", "ODE state diverged at step " + std::to_string(k));
    }
  }
  return x;
}

Tensor integrate(const VelocityModel& net, const ConditionEncoder& encoder,
                 const ConditionBundle& bundle, size_t frames, size_t dim,
                 const SampleConfig& cfg, Rng& rng) {
  if (frames < 1) throw_usage("BadFlag", "sequence length must be >= 1");
  Tensor x0 = Tensor::randn({frames, dim}, rng);
  const VelocityFn field = [&](const Tensor& x, double tau) {
    return guided_velocity(net, x, tau, bundle, encoder, cfg.lambda_v, cfg.lambda_c,
                           cfg.lambda_t);
  };
  return integrate_field(field, x0, cfg.steps, cfg.scheme);
}

GeneratedClip generate_clip(const DubModel& model, const LoadedClip& clip,
                            const SampleConfig& cfg) {
  if (clip.meta.script_tokens.empty()) {
    throw_usage("EmptyScript", "generation requires a nonempty script");
  }
  NoGradGuard no_grad;
  GeneratedClip out;
  out.id = clip.meta.id;

  Tensor vis = model.encoder->encode_visual(clip.visual);
  Tensor con = model.encoder->encode_conditions(clip.meta.conditions);
  const double log_dur = model.durnet->predict_log_duration(vis, con).item();
  double frames_real = std::exp(log_dur);
  if (!std::isfinite(frames_real)) frames_real = static_cast<double>(kMaxGeneratedFrames);
  long long frames = std::llround(frames_real);
  if (frames < static_cast<long long>(kMinGeneratedFrames) ||
      frames > static_cast<long long>(kMaxGeneratedFrames)) {
    out.duration_clamped = true;
    std::fprintf(stderr, "WARN: clip %s predicted %.0f frames, clamping to [%zu, %zu]\n",
                 clip.meta.id.c_str(), frames_real, kMinGeneratedFrames,
                 kMaxGeneratedFrames);
    frames = std::clamp<long long>(frames, kMinGeneratedFrames, kMaxGeneratedFrames);
  }
  out.predicted_frames = static_cast<size_t>(frames);

  ConditionBundle bundle;
  bundle.visual = vis;
  bundle.conclusion = con;
  bundle.script = model.encoder->encode_script(clip.meta.script_tokens);

  Rng rng(mix_seed(cfg.seed, fnv1a64(clip.meta.id.data(), clip.meta.id.size())));
  Tensor x = integrate(*model.vfield, *model.encoder, bundle, out.predicted_frames,
                       model.config.input_dim, cfg, rng);
  out.features = make_seq(out.predicted_frames, model.config.input_dim);
  std::copy(x.data(), x.data() + x.size(), out.features.values.begin());
  return out;
}

void run_sampling(const DubModel& model, const Manifest& manifest, const std::string& split,
                  const SampleConfig& cfg, const std::filesystem::path& out_dir) {
  const auto clips = manifest.split(split);
  if (clips.empty()) throw_usage("EmptyBatch", "no clips in split '" + split + "'");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw_runtime("IoFailure", "cannot create " + out_dir.string());

  std::string sidecar;
  size_t done = 0;
  for (const DubbingClip* meta : clips) {
    LoadedClip clip{*meta, load_features(manifest, *meta), load_visual(manifest, *meta)};
    GeneratedClip gen = generate_clip(model, clip, cfg);
    write_payload(out_dir / (gen.id + ".gen.bin"), gen.features);
    nlohmann::ordered_json line = {{"id", gen.id},
                                   {"lambda_v", cfg.lambda_v},
                                   {"lambda_c", cfg.lambda_c},
                                   {"lambda_t", cfg.lambda_t},
                                   {"steps", cfg.steps},
                                   {"seed", cfg.seed},
                                   {"predicted_frames", gen.predicted_frames}};
    sidecar += line.dump();
    sidecar += "\n";
    ++done;
    if (done % 50 == 0) {
      std::fprintf(stderr, "[sample] %zu/%zu clips\n", done, clips.size());
    }
  }
  atomic_write(out_dir / "generations.jsonl", sidecar);
}

}  // namespace vdx
