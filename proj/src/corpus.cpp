#include "vdx/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vdx/error.hpp"

namespace vdx {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

// Least-squares fit of y(t) ~ b0 + b1*t + b2*sin(w t) + b3*cos(w t).
struct ChannelFit {
  std::array<double, 4> b{};
  double rss = 0.0;
};

struct FitBasis {
  size_t frames;
  double omega;                      // 2*pi*cycles / frames
  std::array<double, 10> gram{};     // upper triangle of X^T X
  std::vector<double> sin_t, cos_t;
};

FitBasis make_basis(size_t frames, double cycles) {
  FitBasis fb;
  fb.frames = frames;
  fb.omega = kTwoPi * cycles / static_cast<double>(frames);
  fb.sin_t.resize(frames);
  fb.cos_t.resize(frames);
  double g[4][4] = {};
  for (size_t t = 0; t < frames; ++t) {
    const double x[4] = {1.0, static_cast<double>(t), std::sin(fb.omega * t),
                         std::cos(fb.omega * t)};
    fb.sin_t[t] = x[2];
    fb.cos_t[t] = x[3];
    for (int i = 0; i < 4; ++i) {
      for (int j = i; j < 4; ++j) g[i][j] += x[i] * x[j];
    }
  }
  int k = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = i; j < 4; ++j) fb.gram[k++] = g[i][j];
  }
  return fb;
}

// Solves the 4x4 symmetric system via Gaussian elimination with pivoting.
std::array<double, 4> solve4(const std::array<double, 10>& gram_upper,
                             const std::array<double, 4>& rhs) {
  double a[4][5];
  int k = 0;
  double full[4][4];
  for (int i = 0; i < 4; ++i) {
    for (int j = i; j < 4; ++j) {
      full[i][j] = gram_upper[k];
      full[j][i] = gram_upper[k];
      ++k;
    }
  }
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) a[i][j] = full[i][j];
    a[i][4] = rhs[i];
  }
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r) {
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    }
    if (piv != col) {
      for (int j = 0; j < 5; ++j) std::swap(a[col][j], a[piv][j]);
    }
    const double d = a[col][col];
    if (d == 0.0) continue;  // degenerate basis; coefficients stay zero
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / d;
      for (int j = col; j < 5; ++j) a[r][j] -= f * a[col][j];
    }
  }
  std::array<double, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = a[i][i] != 0.0 ? a[i][4] / a[i][i] : 0.0;
  return b;
}

ChannelFit fit_channel(const FitBasis& fb, const FeatureSeq& f, size_t channel) {
  std::array<double, 4> rhs{};
  double yy = 0.0;
  for (size_t t = 0; t < fb.frames; ++t) {
    const double y = f.at(t, channel);
    rhs[0] += y;
    rhs[1] += y * static_cast<double>(t);
    rhs[2] += y * fb.sin_t[t];
    rhs[3] += y * fb.cos_t[t];
    yy += y * y;
  }
  ChannelFit out;
  out.b = solve4(fb.gram, rhs);
  double explained = 0.0;
  for (int i = 0; i < 4; ++i) explained += out.b[i] * rhs[i];
  out.rss = std::max(0.0, yy - explained);
  return out;
}

std::string clip_id(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "c%05zu", index);
  return buf;
}

nlohmann::ordered_json clip_to_json(const DubbingClip& c) {
  nlohmann::ordered_json j;
  j["id"] = c.id;
  j["split"] = c.split;
  j["scene_type"] = to_string(c.conditions.scene_type);
  j["gender"] = to_string(c.conditions.gender);
  j["age"] = to_string(c.conditions.age);
  j["emotion"] = to_string(c.conditions.emotion);
  j["conclusion"] = c.conditions.conclusion;
  j["script_tokens"] = c.script_tokens;
  j["visual_path"] = c.visual_path;
  j["features_path"] = c.features_path;
  j["duration_frames"] = c.duration_frames;
  return j;
}

}  // namespace

const char* to_string(SceneType v) {
  switch (v) {
    case SceneType::Dialogue: return "Dialogue";
    case SceneType::Narration: return "Narration";
    case SceneType::Monologue: return "Monologue";
  }
  return "?";
}
const char* to_string(Gender v) { return v == Gender::Female ? "Female" : "Male"; }
const char* to_string(Age v) {
  switch (v) {
    case Age::Child: return "Child";
    case Age::Adult: return "Adult";
    case Age::Senior: return "Senior";
  }
  return "?";
}
const char* to_string(Emotion v) {
  switch (v) {
    case Emotion::Neutral: return "Neutral";
    case Emotion::Happy: return "Happy";
    case Emotion::Sad: return "Sad";
    case Emotion::Angry: return "Angry";
  }
  return "?";
}

SceneType scene_from_string(const std::string& s) {
  if (s == "Dialogue") return SceneType::Dialogue;
  if (s == "Narration") return SceneType::Narration;
  if (s == "Monologue") return SceneType::Monologue;
  throw_runtime("ParseError", "unknown scene_type '" + s + "'");
}
Gender gender_from_string(const std::string& s) {
  if (s == "Female") return Gender::Female;
  if (s == "Male") return Gender::Male;
  throw_runtime("ParseError", "unknown gender '" + s + "'");
}
Age age_from_string(const std::string& s) {
  if (s == "Child") return Age::Child;
  if (s == "Adult") return Age::Adult;
  if (s == "Senior") return Age::Senior;
  throw_runtime("ParseError", "unknown age '" + s + "'");
}
Emotion emotion_from_string(const std::string& s) {
  if (s == "Neutral") return Emotion::Neutral;
  if (s == "Happy") return Emotion::Happy;
  if (s == "Sad") return Emotion::Sad;
  if (s == "Angry") return Emotion::Angry;
  throw_runtime("ParseError", "unknown emotion '" + s + "'");
}

std::string stub_conclusion(const ConditionSet& c) {
  std::string out = "A ";
  out += to_string(c.age);
  out += " ";
  out += to_string(c.gender);
  out += " speaker in a ";
  out += to_string(c.scene_type);
  out += " scene with ";
  out += to_string(c.emotion);
  out += " emotion.";
  return out;
}

int frames_per_token(SceneType s) {
  switch (s) {
    case SceneType::Dialogue: return 12;
    case SceneType::Narration: return 16;
    case SceneType::Monologue: return 20;
  }
  return 0;
}

double emotion_mean(Emotion e) {
  switch (e) {
    case Emotion::Neutral: return 0.0;
    case Emotion::Happy: return 1.0;
    case Emotion::Sad: return -1.0;
    case Emotion::Angry: return 2.0;
  }
  return 0.0;
}

double gender_sigma(Gender g) { return g == Gender::Female ? 0.3 : 0.6; }

double age_slope(Age a) {
  switch (a) {
    case Age::Child: return -0.5;
    case Age::Adult: return 0.0;
    case Age::Senior: return 0.5;
  }
  return 0.0;
}

double scene_wave_cycles(SceneType s) {
  switch (s) {
    case SceneType::Dialogue: return 5.0;
    case SceneType::Narration: return 3.0;
    case SceneType::Monologue: return 1.0;
  }
  return 0.0;
}

std::vector<const DubbingClip*> Manifest::split(const std::string& name) const {
  std::vector<const DubbingClip*> out;
  for (const auto& c : clips) {
    if (c.split == name) out.push_back(&c);
  }
  return out;
}

namespace {

struct GenderProto {
  double d4, d5;
};
struct AgeProto {
  double d6, d7;
};
GenderProto gender_proto(Gender g) {
  return g == Gender::Female ? GenderProto{0.8, -0.8} : GenderProto{-0.8, 0.8};
}
AgeProto age_proto(Age a) {
  switch (a) {
    case Age::Child: return {0.9, 0.0};
    case Age::Adult: return {0.0, 0.9};
    case Age::Senior: return {-0.9, -0.9};
  }
  return {0.0, 0.0};
}

// The normative synthesis rule for one clip with fixed conditions and
// script. Draw order from the rng: scene-wave phase, envelope components,
// channel 2-3 noise (frame-major), visual prototype noise (frame-major).
SynthesizedClip synthesize_with(const ConditionSet& conditions, std::span<const int> tokens,
                                Rng& rng) {
  SynthesizedClip out;
  out.conditions = conditions;
  out.conditions.conclusion = stub_conclusion(conditions);
  out.tokens.assign(tokens.begin(), tokens.end());

  const size_t n_tokens = tokens.size();
  const int rate = frames_per_token(conditions.scene_type);
  const size_t frames = n_tokens * static_cast<size_t>(rate);
  out.duration_frames = frames;
  const size_t visual_frames = frames / kFramesPerVisual;

  // Smooth aperiodic energy envelope: four sinusoids with random frequency,
  // amplitude and phase, normalized into [0.2, 0.9].
  std::array<double, 4> env_amp, env_freq, env_phase;
  double amp_total = 0.0;
  for (int k = 0; k < 4; ++k) {
    env_amp[k] = rng.uniform(0.5, 1.0);
    env_freq[k] = rng.uniform(3.0, 10.0);
    env_phase[k] = rng.uniform(0.0, kTwoPi);
    amp_total += env_amp[k];
  }

  out.features = make_seq(frames, kFeatureDim);
  FeatureSeq& f = out.features;
  const double mu = emotion_mean(conditions.emotion);
  const double sigma = gender_sigma(conditions.gender);
  const double slope = age_slope(conditions.age);
  const double cycles = scene_wave_cycles(conditions.scene_type);
  const double omega = kTwoPi * cycles / static_cast<double>(frames);
  const double mid = 0.5 * static_cast<double>(frames - 1);

  std::vector<double> envelope(frames);
  for (size_t t = 0; t < frames; ++t) {
    double mixv = 0.0;
    for (int k = 0; k < 4; ++k) {
      mixv += env_amp[k] * std::sin(kTwoPi * env_freq[k] * t / frames + env_phase[k]);
    }
    envelope[t] = 0.55 + 0.35 * (mixv / amp_total);
  }

  for (size_t t = 0; t < frames; ++t) {
    const double wave = kSceneWaveAmp * std::sin(omega * t);
    const double ramp = slope * (static_cast<double>(t) - mid) / 100.0;
    f.at(t, 0) = mu + wave;
    f.at(t, 1) = mu + wave;
    f.at(t, 2) = wave + sigma * rng.normal();
    f.at(t, 3) = wave + sigma * rng.normal();
    f.at(t, 4) = wave + ramp;
    f.at(t, 5) = wave + ramp;
    const size_t tok_idx = std::min(t / static_cast<size_t>(rate), n_tokens - 1);
    f.at(t, 6) = static_cast<double>(out.tokens[tok_idx] % 8) / 8.0;
    f.at(t, 7) = envelope[t];
  }

  out.visual = make_seq(visual_frames, kVisualDim);
  FeatureSeq& v = out.visual;
  const GenderProto gp = gender_proto(conditions.gender);
  const AgeProto ap = age_proto(conditions.age);
  for (size_t vf = 0; vf < visual_frames; ++vf) {
    v.at(vf, static_cast<size_t>(conditions.scene_type)) = 1.0;  // dim 3 unused
    v.at(vf, 4) = gp.d4 + 0.1 * rng.normal();
    v.at(vf, 5) = gp.d5 + 0.1 * rng.normal();
    v.at(vf, 6) = ap.d6 + 0.1 * rng.normal();
    v.at(vf, 7) = ap.d7 + 0.1 * rng.normal();
    double lip = 0.0;
    for (size_t k = 0; k < kFramesPerVisual; ++k) lip += envelope[vf * kFramesPerVisual + k];
    lip /= static_cast<double>(kFramesPerVisual);
    for (size_t d = 8; d < kVisualDim; ++d) v.at(vf, d) = lip;
  }
  return out;
}

}  // namespace

SynthesizedClip synthesize_clip(const ConditionSet& conditions, std::span<const int> tokens,
                                uint64_t seed) {
  if (tokens.empty()) throw_usage("EmptyScript", "synthesis needs at least one token");
  Rng rng(seed);
  return synthesize_with(conditions, tokens, rng);
}

Manifest generate_corpus(const CorpusConfig& cfg) {
  if (cfg.n_clips < 1) throw_usage("BadFlag", "corpus size must be >= 1");
  if (cfg.min_tokens < 1 || cfg.max_tokens < cfg.min_tokens) {
    throw_usage("BadFlag", "bad token count range");
  }
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir / "payloads", ec);
  if (ec) throw_runtime("IoFailure", "cannot create " + cfg.out_dir.string());

  const size_t n = cfg.n_clips;
  const size_t n_train = static_cast<size_t>(std::llround(0.6 * static_cast<double>(n)));
  const size_t n_val = static_cast<size_t>(std::llround(0.1 * static_cast<double>(n)));

  Manifest m;
  m.root = cfg.out_dir;
  std::string manifest_text;
  for (size_t i = 0; i < n; ++i) {
    // Per-clip stream: attributes and script first, then the synthesis core.
    Rng rng(mix_seed(cfg.seed, i));
    ConditionSet conditions;
    conditions.scene_type = static_cast<SceneType>(rng.below(3));
    conditions.gender = static_cast<Gender>(rng.below(2));
    conditions.age = static_cast<Age>(rng.below(3));
    conditions.emotion = static_cast<Emotion>(rng.below(4));
    std::vector<int> tokens(cfg.min_tokens + rng.below(cfg.max_tokens - cfg.min_tokens + 1));
    for (int& tok : tokens) tok = static_cast<int>(rng.below(kVocabSize));
    SynthesizedClip sc = synthesize_with(conditions, tokens, rng);

    DubbingClip meta;
    meta.id = clip_id(i);
    meta.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    meta.conditions = sc.conditions;
    meta.script_tokens = sc.tokens;
    meta.duration_frames = sc.duration_frames;
    meta.features_path = "payloads/" + meta.id + ".features.bin";
    meta.visual_path = "payloads/" + meta.id + ".visual.bin";
    write_payload(cfg.out_dir / meta.features_path, sc.features);
    write_payload(cfg.out_dir / meta.visual_path, sc.visual);
    manifest_text += clip_to_json(meta).dump();
    manifest_text += "\n";
    m.clips.push_back(std::move(meta));
  }
  atomic_write(cfg.out_dir / "manifest.jsonl", manifest_text);
  return m;
}

Manifest load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw_runtime("IoFailure", "cannot open manifest " + manifest_path.string());
  Manifest m;
  m.root = manifest_path.parent_path();
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw_runtime("ParseError",
                    "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      DubbingClip c;
      c.id = j.at("id").get<std::string>();
      c.split = j.at("split").get<std::string>();
      c.conditions.scene_type = scene_from_string(j.at("scene_type").get<std::string>());
      c.conditions.gender = gender_from_string(j.at("gender").get<std::string>());
      c.conditions.age = age_from_string(j.at("age").get<std::string>());
      c.conditions.emotion = emotion_from_string(j.at("emotion").get<std::string>());
      c.conditions.conclusion = j.at("conclusion").get<std::string>();
      c.script_tokens = j.at("script_tokens").get<std::vector<int>>();
      c.visual_path = j.at("visual_path").get<std::string>();
      c.features_path = j.at("features_path").get<std::string>();
      c.duration_frames = j.at("duration_frames").get<size_t>();
      m.clips.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw_runtime("ParseError",
                    "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return m;
}

FeatureSeq load_features(const Manifest& m, const DubbingClip& clip) {
  return read_payload(m.root / clip.features_path);
}

FeatureSeq load_visual(const Manifest& m, const DubbingClip& clip) {
  return read_payload(m.root / clip.visual_path);
}

std::vector<Violation> validate(const Manifest& m) {
  std::vector<Violation> out;
  std::set<std::string> seen;
  size_t counts[3] = {0, 0, 0};
  for (const auto& c : m.clips) {
    if (!seen.insert(c.id).second) out.push_back({c.id, "duplicate-id", ""});
    if (c.split == "train") ++counts[0];
    else if (c.split == "val") ++counts[1];
    else if (c.split == "test") ++counts[2];
    else out.push_back({c.id, "split-tag", "unknown split '" + c.split + "'"});

    if (c.conditions.conclusion != stub_conclusion(c.conditions)) {
      out.push_back({c.id, "conclusion-mismatch", ""});
    }
    for (int tok : c.script_tokens) {
      if (tok < 0 || tok >= kVocabSize) {
        out.push_back({c.id, "token-range", "token " + std::to_string(tok)});
        break;
      }
    }
    const size_t expected =
        static_cast<size_t>(std::llround(static_cast<double>(c.script_tokens.size()) *
                                         frames_per_token(c.conditions.scene_type)));
    if (c.duration_frames != expected) {
      out.push_back({c.id, "duration-rate",
                     "have " + std::to_string(c.duration_frames) + " expect " +
                         std::to_string(expected)});
    }

    FeatureSeq feats, vis;
    bool loaded = true;
    try {
      feats = load_features(m, c);
      vis = load_visual(m, c);
    } catch (const Error&) {
      out.push_back({c.id, "missing-payload", ""});
      loaded = false;
    }
    if (!loaded) continue;
    if (feats.dim != kFeatureDim || feats.frames != c.duration_frames) {
      out.push_back({c.id, "payload-shape", "features"});
    }
    if (vis.dim != kVisualDim) out.push_back({c.id, "payload-shape", "visual"});
    if (feats.frames != kFramesPerVisual * vis.frames) {
      out.push_back({c.id, "frame-alignment",
                     std::to_string(feats.frames) + " vs 4*" + std::to_string(vis.frames)});
    }
    bool finite = true;
    for (double x : feats.values) finite = finite && std::isfinite(x);
    for (double x : vis.values) finite = finite && std::isfinite(x);
    if (!finite) out.push_back({c.id, "non-finite", ""});
  }
  const size_t n = m.clips.size();
  const auto near = [](size_t have, double want) {
    return std::fabs(static_cast<double>(have) - want) <= 1.0;
  };
  if (n > 0 && (!near(counts[0], 0.6 * static_cast<double>(n)) ||
                !near(counts[1], 0.1 * static_cast<double>(n)) ||
                !near(counts[2], 0.3 * static_cast<double>(n)))) {
    out.push_back({"", "split-proportions",
                   std::to_string(counts[0]) + "/" + std::to_string(counts[1]) + "/" +
                       std::to_string(counts[2])});
  }
  return out;
}

OracleStats oracle_stats(const FeatureSeq& f) {
  if (f.frames < 20) throw_usage("TooShort", "oracle needs at least 20 frames");
  if (f.dim != kFeatureDim) throw_usage("DimMismatch", "oracle expects 8 feature channels");

  constexpr SceneType kScenes[3] = {SceneType::Dialogue, SceneType::Narration,
                                    SceneType::Monologue};
  double best_rss = 0.0;
  int best = -1;
  std::array<ChannelFit, 6> best_fits;
  for (int s = 0; s < 3; ++s) {
    const FitBasis fb = make_basis(f.frames, scene_wave_cycles(kScenes[s]));
    std::array<ChannelFit, 6> fits;
    double total = 0.0;
    for (size_t ch = 0; ch < 6; ++ch) {
      fits[ch] = fit_channel(fb, f, ch);
      total += fits[ch].rss;
    }
    if (best < 0 || total < best_rss) {
      best = s;
      best_rss = total;
      best_fits = fits;
    }
  }

  OracleStats st;
  st.scene = kScenes[best];
  const double mid = 0.5 * static_cast<double>(f.frames - 1);
  st.mean_ch0 = best_fits[0].b[0] + best_fits[0].b[1] * mid;
  st.mean_ch1 = best_fits[1].b[0] + best_fits[1].b[1] * mid;
  st.slope_ch4 = best_fits[4].b[1] * 100.0;
  st.slope_ch5 = best_fits[5].b[1] * 100.0;
  const double dof = 2.0 * static_cast<double>(f.frames) - 8.0;
  st.resid_sigma_ch2 = std::sqrt(best_fits[2].rss / (0.5 * dof));
  st.resid_sigma_ch3 = std::sqrt(best_fits[3].rss / (0.5 * dof));
  return st;
}

ConditionSet oracle_classify(const FeatureSeq& f) {
  const OracleStats st = oracle_stats(f);
  ConditionSet c;
  c.scene_type = st.scene;

  const double mu = 0.5 * (st.mean_ch0 + st.mean_ch1);
  constexpr Emotion kEmotions[4] = {Emotion::Neutral, Emotion::Happy, Emotion::Sad,
                                    Emotion::Angry};
  double best_d = 0.0;
  int best = -1;
  for (int i = 0; i < 4; ++i) {
    const double d = std::fabs(mu - emotion_mean(kEmotions[i]));
    if (best < 0 || d < best_d) {
      best = i;
      best_d = d;
    }
  }
  c.emotion = kEmotions[best];

  const double slope = 0.5 * (st.slope_ch4 + st.slope_ch5);
  constexpr Age kAges[3] = {Age::Child, Age::Adult, Age::Senior};
  best = 0;
  best_d = std::fabs(slope - age_slope(kAges[0]));
  for (int i = 1; i < 3; ++i) {
    const double d = std::fabs(slope - age_slope(kAges[i]));
    if (d < best_d) {
      best = i;
      best_d = d;
    }
  }
  c.age = kAges[best];

  // Nearest prototype in log-variance; the boundary is the geometric mean
  // 0.18 of the two variances 0.09 and 0.36. Zero variance decodes Female.
  const double var_hat =
      0.5 * (st.resid_sigma_ch2 * st.resid_sigma_ch2 + st.resid_sigma_ch3 * st.resid_sigma_ch3);
  c.gender = var_hat < 0.18 ? Gender::Female : Gender::Male;
  return c;
}

std::vector<int> decode_tokens(const FeatureSeq& f, SceneType scene) {
  const int rate = frames_per_token(scene);
  const size_t n =
      std::max<size_t>(1, static_cast<size_t>(std::llround(
                              static_cast<double>(f.frames) / static_cast<double>(rate))));
  std::vector<int> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const size_t t0 = i * static_cast<size_t>(rate);
    const size_t t1 = std::min(f.frames, (i + 1) * static_cast<size_t>(rate));
    if (t0 >= f.frames) break;
    double mean = 0.0;
    for (size_t t = t0; t < t1; ++t) mean += f.at(t, 6);
    mean /= static_cast<double>(t1 - t0);
    const int level = std::clamp(static_cast<int>(std::llround(mean * 8.0)), 0, 7);
    out.push_back(level);
  }
  return out;
}

std::vector<double> speech_energy(const FeatureSeq& f) {
  std::vector<double> e(f.frames);
  for (size_t t = 0; t < f.frames; ++t) e[t] = f.at(t, 7);
  return e;
}

std::vector<double> lip_activity(const FeatureSeq& visual) {
  std::vector<double> lip(visual.frames);
  for (size_t t = 0; t < visual.frames; ++t) {
    double acc = 0.0;
    for (size_t d = 8; d < visual.dim; ++d) acc += visual.at(t, d);
    lip[t] = acc / static_cast<double>(visual.dim - 8);
  }
  return lip;
}

}  // namespace vdx
