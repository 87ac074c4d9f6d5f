#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vdx/payload.hpp"
#include "vdx/rng.hpp"

namespace vdx {

enum class SceneType { Dialogue, Narration, Monologue };
enum class Gender { Female, Male };
enum class Age { Child, Adult, Senior };
enum class Emotion { Neutral, Happy, Sad, Angry };

const char* to_string(SceneType v);
const char* to_string(Gender v);
const char* to_string(Age v);
const char* to_string(Emotion v);
SceneType scene_from_string(const std::string& s);
Gender gender_from_string(const std::string& s);
Age age_from_string(const std::string& s);
Emotion emotion_from_string(const std::string& s);

struct ConditionSet {
  SceneType scene_type = SceneType::Dialogue;
  Gender gender = Gender::Female;
  Age age = Age::Child;
  Emotion emotion = Emotion::Neutral;
  std::string conclusion;

  bool same_attributes(const ConditionSet& other) const {
    return scene_type == other.scene_type && gender == other.gender && age == other.age &&
           emotion == other.emotion;
  }
};

// Fixed template over the four attributes; the only "understanding" text the
// downstream model ever sees.
std::string stub_conclusion(const ConditionSet& c);

// ---------------------------------------------------------------------------
// Corpus geometry and the normative synthesis rule. The oracle classifier and
// the metric embedders invert exactly these statistics, so the constants are
// shared, not duplicated.
// ---------------------------------------------------------------------------

inline constexpr int kVocabSize = 64;
inline constexpr size_t kFeatureDim = 8;
inline constexpr size_t kVisualDim = 16;
inline constexpr size_t kFramesPerVisual = 4;  // 100 Hz features vs 25 FPS video
inline constexpr double kSceneWaveAmp = 0.5;

int frames_per_token(SceneType s);    // Dialogue 12, Narration 16, Monologue 20
double emotion_mean(Emotion e);       // 0, +1, -1, +2 on channels 0-1
double gender_sigma(Gender g);        // 0.3, 0.6 noise on channels 2-3
double age_slope(Age a);              // -0.5, 0, +0.5 per 100 frames on channels 4-5
double scene_wave_cycles(SceneType s);  // 5, 3, 1 cycles per clip on channels 0-5

struct DubbingClip {
  std::string id;
  std::string split;  // train | val | test
  ConditionSet conditions;
  std::vector<int> script_tokens;
  std::string visual_path;    // relative to the manifest directory
  std::string features_path;  // relative to the manifest directory
  size_t duration_frames = 0;
};

struct Manifest {
  std::filesystem::path root;  // directory holding manifest.jsonl
  std::vector<DubbingClip> clips;

  std::vector<const DubbingClip*> split(const std::string& name) const;
};

struct CorpusConfig {
  size_t n_clips = 0;
  uint64_t seed = 0;
  std::filesystem::path out_dir;
  // 6 tokens keep the shortest Dialogue clip at 72 frames, comfortably
  // above every estimator's working range (lag window, oracle fits).
  size_t min_tokens = 6;
  size_t max_tokens = 12;
};

// Writes payloads/<id>.features.bin, payloads/<id>.visual.bin and
// manifest.jsonl under out_dir. Deterministic for a fixed (n, seed).
Manifest generate_corpus(const CorpusConfig& cfg);

// The deterministic synthesis core behind generate_corpus, exposed for
// explicit conditions (oracle calibration, margin tests).
struct SynthesizedClip {
  ConditionSet conditions;
  std::vector<int> tokens;
  size_t duration_frames = 0;
  FeatureSeq features;
  FeatureSeq visual;
};
SynthesizedClip synthesize_clip(const ConditionSet& conditions, std::span<const int> tokens,
                                uint64_t seed);

Manifest load_manifest(const std::filesystem::path& manifest_path);

struct Violation {
  std::string clip_id;  // empty for manifest-level rules
  std::string rule;
  std::string detail;
};

std::vector<Violation> validate(const Manifest& m);

FeatureSeq load_features(const Manifest& m, const DubbingClip& clip);
FeatureSeq load_visual(const Manifest& m, const DubbingClip& clip);

// Recovers the condition attributes from a feature sequence alone by
// nearest-prototype decisions on the normative statistics. The returned
// conclusion is empty. Degenerate all-zero input decodes to
// (Dialogue, Female, Adult, Neutral), the prototype nearest zero for each
// attribute. Throws TooShort for fewer than 20 frames.
ConditionSet oracle_classify(const FeatureSeq& features);

// Per-channel least-squares fits behind the oracle; exposed because the
// similarity embedders in metrics reuse them.
struct OracleStats {
  SceneType scene = SceneType::Dialogue;
  double mean_ch0 = 0.0, mean_ch1 = 0.0;   // emotion offsets
  double slope_ch4 = 0.0, slope_ch5 = 0.0; // per 100 frames
  double resid_sigma_ch2 = 0.0, resid_sigma_ch3 = 0.0;
};
OracleStats oracle_stats(const FeatureSeq& features);

// Channel-6 block decoder: mean amplitude per token span, quantized back to
// the mod-8 symbol alphabet. Stands in for ASR when scoring WER.
std::vector<int> decode_tokens(const FeatureSeq& features, SceneType scene);

// Smooth per-frame energy (channel 7) of a synthesized or generated clip.
std::vector<double> speech_energy(const FeatureSeq& features);
// Mean of visual dims 8-15: the 25 FPS lip-activity signal.
std::vector<double> lip_activity(const FeatureSeq& visual);

}  // namespace vdx
