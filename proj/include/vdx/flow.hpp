#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vdx/conditioning.hpp"
#include "vdx/corpus.hpp"
#include "vdx/optim.hpp"

namespace vdx {

struct ModelConfig {
  size_t input_dim = 8;  // feature channels of the modeled sequence
  size_t model_dim = 64;
  size_t n_blocks = 2;
  size_t n_heads = 4;
  // Wide feed-forward: the per-position MLP is what forms condition-gated
  // positional products, the slowest circuit to emerge at short budgets.
  size_t ffn_mult = 8;
  size_t duration_hidden = 64;
};

// Anything that can evaluate a velocity field over a feature sequence.
// Tests inject stub fields; the sampler only sees this interface.
class VelocityModel {
 public:
  virtual ~VelocityModel() = default;
  // x_tau: T x input_dim. frame_mask (empty = all valid) marks padded frames;
  // masked frames are excluded from attention keys.
  virtual Tensor velocity(const Tensor& x_tau, double tau, const ConditionBundle& bundle,
                          std::span<const double> frame_mask = {}) const = 0;

  // One batched call evaluating several condition patterns against the same
  // state. Defaults to a loop; kept virtual so counting stubs stay accurate.
  virtual std::vector<Tensor> velocity_batch(const Tensor& x_tau, double tau,
                                             std::span<const ConditionBundle> bundles,
                                             std::span<const double> frame_mask = {}) const;
};

// Transformer velocity network: input projection, sinusoidal tau embedding
// through a 2-layer MLP, n_blocks of self-attention + cross-attention over
// the concatenated condition streams + feed-forward, output projection.
class VectorFieldNet : public VelocityModel {
 public:
  VectorFieldNet(ParamStore& store, Rng& init_rng, const ModelConfig& cfg);

  Tensor velocity(const Tensor& x_tau, double tau, const ConditionBundle& bundle,
                  std::span<const double> frame_mask = {}) const override;

  size_t param_count() const { return param_count_; }
  size_t forward_calls() const { return forward_calls_; }

 private:
  struct Block {
    Tensor ln1_g, ln1_b, self_wq, self_bq, self_wk, self_bk, self_wv, self_bv, self_wo,
        self_bo;
    Tensor ln2_g, ln2_b, cross_wq, cross_bq, cross_wk, cross_bk, cross_wv, cross_bv,
        cross_wo, cross_bo;
    Tensor ln3_g, ln3_b, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };

  Tensor attention(const Tensor& queries_in, const Tensor& keys_in, const Tensor& wq,
                   const Tensor& bq, const Tensor& wk, const Tensor& bk, const Tensor& wv,
                   const Tensor& bv, const Tensor& wo, const Tensor& bo,
                   const Tensor* key_bias) const;

  ModelConfig cfg_;
  Tensor in_w_, in_b_, out_w_, out_b_, final_ln_g_, final_ln_b_;
  Tensor tau_w1_, tau_b1_, tau_w2_, tau_b2_;
  std::vector<Block> blocks_;
  size_t param_count_ = 0;
  mutable size_t forward_calls_ = 0;
};

// Mean-pooled visual and conclusion embeddings -> 2-layer MLP -> scalar
// log-duration in feature frames.
class DurationNet {
 public:
  DurationNet(ParamStore& store, Rng& init_rng, const ModelConfig& cfg);
  Tensor predict_log_duration(const Tensor& visual_emb, const Tensor& conclusion_emb) const;

 private:
  Tensor w1_, b1_, w2_, b2_;
};

// Every trainable piece of the pipeline plus its parameter registry.
struct DubModel {
  ModelConfig config;
  std::unique_ptr<ParamStore> store;
  std::unique_ptr<ConditionEncoder> encoder;
  std::unique_ptr<VectorFieldNet> vfield;
  std::unique_ptr<DurationNet> durnet;

  static DubModel init(const ModelConfig& cfg, uint64_t seed);
};

struct LoadedClip {
  DubbingClip meta;
  FeatureSeq features;  // T x 8
  FeatureSeq visual;    // F x 16
};

std::vector<LoadedClip> load_clips(const Manifest& m, const std::string& split);

// Linear optimal-transport path: x_tau = (1-tau) x0 + tau x1, u = x1 - x0.
struct PathSample {
  Tensor x_tau;
  Tensor u;
};
PathSample ot_path_sample(const Tensor& x0, const Tensor& x1, double tau);

// Conditional flow-matching loss over a padded batch. Per clip, the rng is
// consumed in a fixed order: tau, then T x D path noise, then the three
// dropout draws. The loss averages per-frame squared velocity error over
// unmasked frames across the whole batch.
Tensor cfm_loss(const DubModel& model, std::span<const LoadedClip> batch, Rng& rng,
                double p_dropout);

// Same loss with an arbitrary field standing in for the trained net.
Tensor cfm_loss_with(const VelocityModel& field, const ConditionEncoder& encoder,
                     size_t input_dim, std::span<const LoadedClip> batch, Rng& rng,
                     double p_dropout);

// Squared error in log-frame space: (f - log(duration))^2.
Tensor duration_loss(const DubModel& model, const LoadedClip& clip);

struct LossParts {
  Tensor total;
  double cfm_value = 0.0;
  double dur_value = 0.0;
};
LossParts total_loss(const DubModel& model, std::span<const LoadedClip> batch, Rng& rng,
                     double p_dropout, double w_dur);

struct TrainConfig {
  size_t batch_size = 8;
  size_t steps = 2000;
  double lr = 1e-3;
  double dropout_p = 0.05;
  uint64_t seed = 7;
  double w_dur = 1.0;
  bool staged = false;  // placeholder: the combined run is the only schedule
};

struct TrainResult {
  std::filesystem::path checkpoint_path;
  std::filesystem::path log_path;
  double step0_cfm = 0.0;
  double final_cfm = 0.0;
  double final_dur = 0.0;
  size_t param_count = 0;
};

// Runs the combined training loop over the train split and writes
// checkpoint.vdxc + train_log.jsonl under out_dir. Deterministic for a
// fixed seed; aborts with NonFinite (and the step number) on divergence.
TrainResult train(const TrainConfig& cfg, const ModelConfig& model_cfg, const Manifest& m,
                  const std::filesystem::path& out_dir);

// Checkpoint file: magic "VDXC0001", u32 format version, config echo (JSON),
// f64 final loss, named parameter table, final rng state.
inline constexpr char kCheckpointMagic[9] = "VDXC0001";
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_json;
  double final_loss = 0.0;
  std::array<uint64_t, 4> rng_state{};
  std::vector<NamedParam> params;
};

void write_checkpoint(const std::filesystem::path& path, const DubModel& model,
                      const std::string& config_json, double final_loss,
                      const std::array<uint64_t, 4>& rng_state);
Checkpoint read_checkpoint(const std::filesystem::path& path);
// Rebuilds a model from the checkpoint's model config and parameter table.
DubModel model_from_checkpoint(const Checkpoint& ckpt);
// Parses TrainConfig/ModelConfig back out of the config echo.
std::pair<TrainConfig, ModelConfig> configs_from_checkpoint(const Checkpoint& ckpt);

std::string train_config_to_json(const TrainConfig& t, const ModelConfig& m);

}  // namespace vdx
