#include "vdx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "vdx/error.hpp"

namespace vdx {

namespace {
constexpr double kMcdScale = 10.0 / 2.302585092994045684;  // 10 / ln 10
}

double mcd_frame_cost(const FeatureSeq& a, size_t i, const FeatureSeq& b, size_t j) {
  double acc = 0.0;
  for (size_t k = 1; k < a.dim; ++k) {  // coefficient 0 excluded
    const double d = a.at(i, k) - b.at(j, k);
    acc += d * d;
  }
  return kMcdScale * std::sqrt(2.0 * acc);
}

double mcd(const FeatureSeq& ref, const FeatureSeq& gen) {
  if (ref.dim != gen.dim) throw_usage("DimMismatch", "mcd: feature dims differ");
  if (ref.frames < 1 || gen.frames < 1) throw_usage("DimMismatch", "mcd: empty sequence");
  const size_t n = ref.frames, m = gen.frames;
  std::vector<double> cost(n * m);
  std::vector<uint32_t> len(n * m);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < m; ++j) {
      const double d = mcd_frame_cost(ref, i, gen, j);
      const size_t idx = i * m + j;
      if (i == 0 && j == 0) {
        cost[idx] = d;
        len[idx] = 1;
        continue;
      }
      // Lexicographic (cost, length) minimum over the three monotone
      // predecessors, preferring diagonal on full ties.
      double best_c = 0.0;
      uint32_t best_l = 0;
      bool have = false;
      const auto consider = [&](size_t pi, size_t pj) {
        const size_t p = pi * m + pj;
        const double c = cost[p];
        const uint32_t l = len[p];
        if (!have || c < best_c || (c == best_c && l < best_l)) {
          best_c = c;
          best_l = l;
          have = true;
        }
      };
      if (i > 0 && j > 0) consider(i - 1, j - 1);
      if (i > 0) consider(i - 1, j);
      if (j > 0) consider(i, j - 1);
      cost[idx] = best_c + d;
      len[idx] = best_l + 1;
    }
  }
  return cost[n * m - 1] / static_cast<double>(len[n * m - 1]);
}

double mcd_sl(const FeatureSeq& ref, const FeatureSeq& gen) {
  const double base = mcd(ref, gen);
  const double t1 = static_cast<double>(ref.frames), t2 = static_cast<double>(gen.frames);
  return base * std::max(t1, t2) / std::min(t1, t2);
}

double wer(std::span<const int> ref_tokens, std::span<const int> hyp_tokens) {
  if (ref_tokens.empty()) throw_usage("EmptyReference", "wer: empty reference");
  const size_t n = ref_tokens.size(), m = hyp_tokens.size();
  std::vector<size_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = j;
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= m; ++j) {
      const size_t sub = prev[j - 1] + (ref_tokens[i - 1] == hyp_tokens[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[m]) / static_cast<double>(n);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw_usage("DimMismatch", "cosine: dims differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw_usage("ZeroVector", "cosine: zero-norm input");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> speaker_embedding(const FeatureSeq& features) {
  const OracleStats st = oracle_stats(features);
  return {st.resid_sigma_ch2, st.resid_sigma_ch3, st.slope_ch4, st.slope_ch5};
}

std::vector<double> emotion_embedding(const FeatureSeq& features) {
  const OracleStats st = oracle_stats(features);
  // Leading constant keeps Neutral-vs-Neutral comparisons away from the
  // zero vector.
  return {1.0, st.mean_ch0, st.mean_ch1};
}

SyncResult sync_offset(std::span<const double> speech_energy,
                       std::span<const double> lip_activity, int max_lag) {
  const size_t t_speech = speech_energy.size();
  if (t_speech < 2 * static_cast<size_t>(max_lag) + 1 || lip_activity.empty()) {
    throw_usage("TooShort", "sync_offset needs at least 2K+1 speech frames");
  }
  std::vector<double> lip_up(lip_activity.size() * kFramesPerVisual);
  for (size_t t = 0; t < lip_up.size(); ++t) lip_up[t] = lip_activity[t / kFramesPerVisual];

  const auto zncc = [&](int lag) -> double {
    const long t0 = std::max<long>(0, lag);
    const long t1 = std::min<long>(static_cast<long>(t_speech),
                                   static_cast<long>(lip_up.size()) + lag);
    const long count = t1 - t0;
    if (count < 2) return 0.0;
    double ma = 0.0, mb = 0.0;
    for (long t = t0; t < t1; ++t) {
      ma += speech_energy[static_cast<size_t>(t)];
      mb += lip_up[static_cast<size_t>(t - lag)];
    }
    ma /= static_cast<double>(count);
    mb /= static_cast<double>(count);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (long t = t0; t < t1; ++t) {
      const double da = speech_energy[static_cast<size_t>(t)] - ma;
      const double db = lip_up[static_cast<size_t>(t - lag)] - mb;
      sab += da * db;
      saa += da * da;
      sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
  };

  std::vector<double> corr(2 * max_lag + 1);
  for (int lag = -max_lag; lag <= max_lag; ++lag) corr[lag + max_lag] = zncc(lag);

  int best_lag = -max_lag;
  double best = corr[0];
  for (int lag = -max_lag + 1; lag <= max_lag; ++lag) {
    const double c = corr[lag + max_lag];
    const bool wins = c > best ||
                      (c == best && (std::abs(lag) < std::abs(best_lag) ||
                                     (std::abs(lag) == std::abs(best_lag) && lag < best_lag)));
    if (wins) {
      best = c;
      best_lag = lag;
    }
  }
  std::vector<double> sorted = corr;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  return {best_lag, best - median};
}

MetricsAggregate recompute_aggregate(const std::vector<ClipMetrics>& clips) {
  MetricsAggregate agg;
  agg.count = clips.size();
  if (clips.empty()) return agg;
  for (const ClipMetrics& c : clips) {
    agg.mcd += c.mcd;
    agg.mcd_sl += c.mcd_sl;
    agg.wer += c.wer;
    agg.spk_sim += c.spk_sim;
    agg.emo_sim += c.emo_sim;
    agg.sync_offset += static_cast<double>(c.sync_offset);
    agg.sync_conf += c.sync_conf;
  }
  const double inv = 1.0 / static_cast<double>(clips.size());
  agg.mcd *= inv;
  agg.mcd_sl *= inv;
  agg.wer *= inv;
  agg.spk_sim *= inv;
  agg.emo_sim *= inv;
  agg.sync_offset *= inv;
  agg.sync_conf *= inv;
  return agg;
}

MetricsReport evaluate(const Manifest& manifest, const std::filesystem::path& generated_dir) {
  const auto test_clips = manifest.split("test");
  std::string missing;
  for (const DubbingClip* c : test_clips) {
    if (!std::filesystem::exists(generated_dir / (c->id + ".gen.bin"))) {
      missing += missing.empty() ? c->id : ", " + c->id;
    }
  }
  if (!missing.empty()) {
    throw_runtime("MissingGeneration", "no generated payload for: " + missing);
  }

  MetricsReport report;
  for (const DubbingClip* c : test_clips) {
    const FeatureSeq ref = load_features(manifest, *c);
    const FeatureSeq vis = load_visual(manifest, *c);
    const FeatureSeq gen = read_payload(generated_dir / (c->id + ".gen.bin"));
    ClipMetrics cm;
    cm.id = c->id;
    cm.mcd = mcd(ref, gen);
    cm.mcd_sl = mcd_sl(ref, gen);
    cm.wer = wer(decode_tokens(ref, c->conditions.scene_type),
                 decode_tokens(gen, c->conditions.scene_type));
    // The generated clip may be degenerate (zero stats or too short for the
    // lag window); score those cases as 0 rather than failing the report.
    try {
      cm.spk_sim = cosine_similarity(speaker_embedding(ref), speaker_embedding(gen));
    } catch (const Error&) {
      cm.spk_sim = 0.0;
    }
    try {
      cm.emo_sim = cosine_similarity(emotion_embedding(ref), emotion_embedding(gen));
    } catch (const Error&) {
      cm.emo_sim = 0.0;
    }
    try {
      const SyncResult sync = sync_offset(speech_energy(gen), lip_activity(vis));
      cm.sync_offset = sync.offset;
      cm.sync_conf = sync.confidence;
    } catch (const Error&) {
      cm.sync_offset = 0;
      cm.sync_conf = 0.0;
    }
    report.clips.push_back(std::move(cm));
  }
  report.aggregate = recompute_aggregate(report.clips);
  return report;
}

void write_report(const std::filesystem::path& path, const MetricsReport& report,
                  const std::string& manifest_path, const std::string& generated_dir) {
  nlohmann::ordered_json j;
  j["clips"] = nlohmann::ordered_json::array();
  for (const ClipMetrics& c : report.clips) {
    j["clips"].push_back({{"id", c.id},
                          {"mcd", c.mcd},
                          {"mcd_sl", c.mcd_sl},
                          {"wer", c.wer},
                          {"spk_sim", c.spk_sim},
                          {"emo_sim", c.emo_sim},
                          {"sync_offset", c.sync_offset},
                          {"sync_conf", c.sync_conf}});
  }
  j["aggregate"] = {{"mcd", report.aggregate.mcd},
                    {"mcd_sl", report.aggregate.mcd_sl},
                    {"wer", report.aggregate.wer},
                    {"spk_sim", report.aggregate.spk_sim},
                    {"emo_sim", report.aggregate.emo_sim},
                    {"sync_offset", report.aggregate.sync_offset},
                    {"sync_conf", report.aggregate.sync_conf},
                    {"count", report.aggregate.count}};
  j["config_echo"] = {{"manifest", manifest_path}, {"generated", generated_dir}};
  atomic_write(path, j.dump(2) + "\n");
}

MetricsReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_runtime("IoFailure", "cannot open report " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw_runtime("ParseError", std::string("report: ") + e.what());
  }
  MetricsReport report;
  for (const auto& cj : j.at("clips")) {
    ClipMetrics c;
    c.id = cj.at("id").get<std::string>();
    c.mcd = cj.at("mcd").get<double>();
    c.mcd_sl = cj.at("mcd_sl").get<double>();
    c.wer = cj.at("wer").get<double>();
    c.spk_sim = cj.at("spk_sim").get<double>();
    c.emo_sim = cj.at("emo_sim").get<double>();
    c.sync_offset = cj.at("sync_offset").get<int>();
    c.sync_conf = cj.at("sync_conf").get<double>();
    report.clips.push_back(std::move(c));
  }
  const auto& aj = j.at("aggregate");
  report.aggregate.mcd = aj.at("mcd").get<double>();
  report.aggregate.mcd_sl = aj.at("mcd_sl").get<double>();
  report.aggregate.wer = aj.at("wer").get<double>();
  report.aggregate.spk_sim = aj.at("spk_sim").get<double>();
  report.aggregate.emo_sim = aj.at("emo_sim").get<double>();
  report.aggregate.sync_offset = aj.at("sync_offset").get<double>();
  report.aggregate.sync_conf = aj.at("sync_conf").get<double>();
  report.aggregate.count = aj.at("count").get<size_t>();
  return report;
}

}  // namespace vdx
