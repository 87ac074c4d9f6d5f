#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vdx/corpus.hpp"

namespace vdx {

// DTW-aligned mel cepstral distortion. Local cost between frames i, j:
//   (10 / ln 10) * sqrt(2 * sum_{k>=1} (ref[i,k] - gen[j,k])^2)
// with coefficient 0 excluded as the energy term. Monotone steps
// {(1,0),(0,1),(1,1)}, boundary to boundary; the result is the minimum path
// cost divided by that path's node count, ties resolved toward the shorter
// path. Symmetric in its arguments.
double mcd(const FeatureSeq& ref, const FeatureSeq& gen);

// The scalar frame-pair cost above. Shared with test oracles so path-search
// comparisons stay bit-exact: both sides must add identical local costs.
double mcd_frame_cost(const FeatureSeq& ref, size_t i, const FeatureSeq& gen, size_t j);

// mcd scaled by the length ratio max(T1,T2)/min(T1,T2). The source metric is
// only named in the literature we follow, so the penalty form is local to
// this one function.
double mcd_sl(const FeatureSeq& ref, const FeatureSeq& gen);

// Levenshtein distance (unit costs) over token ids, divided by |ref|.
double wer(std::span<const int> ref_tokens, std::span<const int> hyp_tokens);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Deterministic oracle summaries standing in for learned speaker/emotion
// encoders: residual sigmas and ramp slopes for the speaker, channel 0-1
// means (plus a constant component for stability near zero) for the emotion.
std::vector<double> speaker_embedding(const FeatureSeq& features);
std::vector<double> emotion_embedding(const FeatureSeq& features);

struct SyncResult {
  int offset = 0;
  double confidence = 0.0;
};

// Zero-normalized cross-correlation between the 100 Hz speech energy and the
// 25 FPS lip activity upsampled x4 (frame repetition). offset is the argmax
// over lags in [-max_lag, max_lag]; positive offset means the speech trails
// the video. confidence = max correlation - median correlation over the lag
// window. Ties break toward the smaller |lag|, then toward the negative lag.
SyncResult sync_offset(std::span<const double> speech_energy,
                       std::span<const double> lip_activity, int max_lag = 20);

struct ClipMetrics {
  std::string id;
  double mcd = 0.0;
  double mcd_sl = 0.0;
  double wer = 0.0;
  double spk_sim = 0.0;
  double emo_sim = 0.0;
  int sync_offset = 0;
  double sync_conf = 0.0;
};

struct MetricsAggregate {
  double mcd = 0.0, mcd_sl = 0.0, wer = 0.0, spk_sim = 0.0, emo_sim = 0.0;
  double sync_offset = 0.0, sync_conf = 0.0;
  size_t count = 0;
};

struct MetricsReport {
  std::vector<ClipMetrics> clips;
  MetricsAggregate aggregate;
};

MetricsAggregate recompute_aggregate(const std::vector<ClipMetrics>& clips);

// Scores every test-split clip against <generated_dir>/<id>.gen.bin.
// Throws MissingGeneration naming the absent ids.
MetricsReport evaluate(const Manifest& manifest, const std::filesystem::path& generated_dir);

void write_report(const std::filesystem::path& path, const MetricsReport& report,
                  const std::string& manifest_path, const std::string& generated_dir);
MetricsReport read_report(const std::filesystem::path& path);

}  // namespace vdx
