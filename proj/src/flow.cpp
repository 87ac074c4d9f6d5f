#include "vdx/flow.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "vdx/ops.hpp"

namespace vdx {

namespace {

constexpr double kMaskBias = -1e30;

Tensor sinusoidal_tau_features(double tau, size_t dim) {
  Tensor feat = Tensor::zeros({1, dim});
  const size_t half = dim / 2;
  for (size_t i = 0; i < half; ++i) {
    const double omega =
        half > 1 ? std::pow(1000.0, static_cast<double>(i) / static_cast<double>(half - 1))
                 : 1.0;
    feat.data()[2 * i] = std::sin(omega * tau);
    feat.data()[2 * i + 1] = std::cos(omega * tau);
  }
  return feat;
}

// Column j of every row gets kMaskBias when frame j is padding.
Tensor key_mask_bias(size_t rows, std::span<const double> frame_mask) {
  Tensor bias = Tensor::zeros({rows, frame_mask.size()});
  for (size_t i = 0; i < rows; ++i) {
    for (size_t j = 0; j < frame_mask.size(); ++j) {
      if (frame_mask[j] == 0.0) bias.data()[i * frame_mask.size() + j] = kMaskBias;
    }
  }
  return bias;
}

bool has_padding(std::span<const double> mask) {
  for (double m : mask) {
    if (m == 0.0) return true;
  }
  return false;
}

void append_u32(std::string& b, uint32_t v) { b.append(reinterpret_cast<const char*>(&v), 4); }
void append_u64(std::string& b, uint64_t v) { b.append(reinterpret_cast<const char*>(&v), 8); }
void append_f64(std::string& b, double v) { b.append(reinterpret_cast<const char*>(&v), 8); }

struct ByteReader {
  const std::string& b;
  size_t pos = 0;
  void need(size_t n) const {
    if (pos + n > b.size()) throw_runtime("ParseError", "truncated checkpoint");
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, b.data() + pos, 4);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, b.data() + pos, 8);
    pos += 8;
    return v;
  }
  double f64() {
    need(8);
    double v;
    std::memcpy(&v, b.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = b.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

std::vector<Tensor> VelocityModel::velocity_batch(const Tensor& x_tau, double tau,
                                                  std::span<const ConditionBundle> bundles,
                                                  std::span<const double> frame_mask) const {
  std::vector<Tensor> out;
  out.reserve(bundles.size());
  for (const ConditionBundle& b : bundles) out.push_back(velocity(x_tau, tau, b, frame_mask));
  return out;
}

VectorFieldNet::VectorFieldNet(ParamStore& store, Rng& init_rng, const ModelConfig& cfg)
    : cfg_(cfg) {
  if (cfg.model_dim % cfg.n_heads != 0) {
    throw_usage("ShapeMismatch", "model_dim must be divisible by n_heads");
  }
  const size_t d = cfg.model_dim;
  const size_t before = store.total_size();
  const auto lin_init = [&](size_t fan_in, size_t fan_out, const std::string& name) {
    return store.add(name,
                     Tensor::randn({fan_in, fan_out}, init_rng,
                                   1.0 / std::sqrt(static_cast<double>(fan_in))));
  };
  in_w_ = lin_init(cfg.input_dim, d, "vfield.in.w");
  in_b_ = store.add("vfield.in.b", Tensor::zeros({1, d}));
  tau_w1_ = lin_init(d, d, "vfield.tau.w1");
  tau_b1_ = store.add("vfield.tau.b1", Tensor::zeros({1, d}));
  tau_w2_ = lin_init(d, d, "vfield.tau.w2");
  tau_b2_ = store.add("vfield.tau.b2", Tensor::zeros({1, d}));
  for (size_t i = 0; i < cfg.n_blocks; ++i) {
    const std::string p = "vfield.b" + std::to_string(i) + ".";
    Block blk;
    blk.ln1_g = store.add(p + "ln1.g", Tensor::full({1, d}, 1.0));
    blk.ln1_b = store.add(p + "ln1.b", Tensor::zeros({1, d}));
    blk.self_wq = lin_init(d, d, p + "self.wq");
    blk.self_bq = store.add(p + "self.bq", Tensor::zeros({1, d}));
    blk.self_wk = lin_init(d, d, p + "self.wk");
    blk.self_bk = store.add(p + "self.bk", Tensor::zeros({1, d}));
    blk.self_wv = lin_init(d, d, p + "self.wv");
    blk.self_bv = store.add(p + "self.bv", Tensor::zeros({1, d}));
    blk.self_wo = lin_init(d, d, p + "self.wo");
    blk.self_bo = store.add(p + "self.bo", Tensor::zeros({1, d}));
    blk.ln2_g = store.add(p + "ln2.g", Tensor::full({1, d}, 1.0));
    blk.ln2_b = store.add(p + "ln2.b", Tensor::zeros({1, d}));
    blk.cross_wq = lin_init(d, d, p + "cross.wq");
    blk.cross_bq = store.add(p + "cross.bq", Tensor::zeros({1, d}));
    blk.cross_wk = lin_init(d, d, p + "cross.wk");
    blk.cross_bk = store.add(p + "cross.bk", Tensor::zeros({1, d}));
    blk.cross_wv = lin_init(d, d, p + "cross.wv");
    blk.cross_bv = store.add(p + "cross.bv", Tensor::zeros({1, d}));
    blk.cross_wo = lin_init(d, d, p + "cross.wo");
    blk.cross_bo = store.add(p + "cross.bo", Tensor::zeros({1, d}));
    blk.ln3_g = store.add(p + "ln3.g", Tensor::full({1, d}, 1.0));
    blk.ln3_b = store.add(p + "ln3.b", Tensor::zeros({1, d}));
    blk.ffn_w1 = lin_init(d, cfg.ffn_mult * d, p + "ffn.w1");
    blk.ffn_b1 = store.add(p + "ffn.b1", Tensor::zeros({1, cfg.ffn_mult * d}));
    blk.ffn_w2 = lin_init(cfg.ffn_mult * d, d, p + "ffn.w2");
    blk.ffn_b2 = store.add(p + "ffn.b2", Tensor::zeros({1, d}));
    blocks_.push_back(blk);
  }
  final_ln_g_ = store.add("vfield.final_ln.g", Tensor::full({1, d}, 1.0));
  final_ln_b_ = store.add("vfield.final_ln.b", Tensor::zeros({1, d}));
  // Small output scale keeps the initial field near zero without making
  // gradient probes vacuous.
  out_w_ = store.add("vfield.out.w", Tensor::randn({d, cfg.input_dim}, init_rng, 0.02));
  out_b_ = store.add("vfield.out.b", Tensor::zeros({1, cfg.input_dim}));
  param_count_ = store.total_size() - before;
}

Tensor VectorFieldNet::attention(const Tensor& queries_in, const Tensor& keys_in,
                                 const Tensor& wq, const Tensor& bq, const Tensor& wk,
                                 const Tensor& bk, const Tensor& wv, const Tensor& bv,
                                 const Tensor& wo, const Tensor& bo,
                                 const Tensor* key_bias) const {
  const size_t head_dim = cfg_.model_dim / cfg_.n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Tensor q = add_rowvec(matmul(queries_in, wq), bq);
  Tensor k = add_rowvec(matmul(keys_in, wk), bk);
  Tensor v = add_rowvec(matmul(keys_in, wv), bv);
  std::vector<Tensor> heads;
  heads.reserve(cfg_.n_heads);
  for (size_t h = 0; h < cfg_.n_heads; ++h) {
    const size_t c0 = h * head_dim, c1 = (h + 1) * head_dim;
    Tensor qh = slice_cols(q, c0, c1);
    Tensor kh = slice_cols(k, c0, c1);
    Tensor vh = slice_cols(v, c0, c1);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (key_bias != nullptr) scores = add(scores, *key_bias);
    heads.push_back(matmul(softmax_lastdim(scores), vh));
  }
  Tensor merged = concat_cols(heads);
  return add_rowvec(matmul(merged, wo), bo);
}

Tensor VectorFieldNet::velocity(const Tensor& x_tau, double tau,
                                const ConditionBundle& bundle,
                                std::span<const double> frame_mask) const {
  if (x_tau.cols() != cfg_.input_dim) {
    throw_usage("ShapeMismatch", "velocity input dim != model input dim");
  }
  if (!frame_mask.empty() && frame_mask.size() != x_tau.rows()) {
    throw_usage("ShapeMismatch", "frame mask length != sequence length");
  }
  ++forward_calls_;
  const size_t frames = x_tau.rows();

  Tensor h = add(add_rowvec(matmul(x_tau, in_w_), in_b_),
                 positional_encoding(frames, cfg_.model_dim));
  Tensor tau_feat = sinusoidal_tau_features(tau, cfg_.model_dim);
  Tensor tau_emb = add_rowvec(
      matmul(gelu(add_rowvec(matmul(tau_feat, tau_w1_), tau_b1_)), tau_w2_), tau_b2_);
  h = add_rowvec(h, tau_emb);

  const Tensor cond_parts[3] = {bundle.visual, bundle.conclusion, bundle.script};
  Tensor cond = concat_rows(cond_parts);

  const bool masked = !frame_mask.empty() && has_padding(frame_mask);
  Tensor self_bias;
  if (masked) self_bias = key_mask_bias(frames, frame_mask);

  for (const Block& blk : blocks_) {
    Tensor a = layer_norm(h, blk.ln1_g, blk.ln1_b);
    h = add(h, attention(a, a, blk.self_wq, blk.self_bq, blk.self_wk, blk.self_bk,
                         blk.self_wv, blk.self_bv, blk.self_wo, blk.self_bo,
                         masked ? &self_bias : nullptr));
    a = layer_norm(h, blk.ln2_g, blk.ln2_b);
    h = add(h, attention(a, cond, blk.cross_wq, blk.cross_bq, blk.cross_wk, blk.cross_bk,
                         blk.cross_wv, blk.cross_bv, blk.cross_wo, blk.cross_bo, nullptr));
    a = layer_norm(h, blk.ln3_g, blk.ln3_b);
    Tensor f = add_rowvec(
        matmul(gelu(add_rowvec(matmul(a, blk.ffn_w1), blk.ffn_b1)), blk.ffn_w2), blk.ffn_b2);
    h = add(h, f);
  }
  h = layer_norm(h, final_ln_g_, final_ln_b_);
  return add_rowvec(matmul(h, out_w_), out_b_);
}

DurationNet::DurationNet(ParamStore& store, Rng& init_rng, const ModelConfig& cfg) {
  const size_t d = cfg.model_dim, hidden = cfg.duration_hidden;
  w1_ = store.add("dur.w1", Tensor::randn({2 * d, hidden}, init_rng,
                                          1.0 / std::sqrt(static_cast<double>(2 * d))));
  b1_ = store.add("dur.b1", Tensor::zeros({1, hidden}));
  w2_ = store.add("dur.w2", Tensor::randn({hidden, 1}, init_rng,
                                          1.0 / std::sqrt(static_cast<double>(hidden))));
  // Durations live around exp(5); starting the bias there skips the first
  // few hundred steps of drift.
  b2_ = store.add("dur.b2", Tensor::full({1, 1}, 5.0));
}

Tensor DurationNet::predict_log_duration(const Tensor& visual_emb,
                                         const Tensor& conclusion_emb) const {
  const Tensor pooled[2] = {mean_rows(visual_emb), mean_rows(conclusion_emb)};
  Tensor x = concat_cols(pooled);
  Tensor h = gelu(add_rowvec(matmul(x, w1_), b1_));
  return add_rowvec(matmul(h, w2_), b2_);
}

DubModel DubModel::init(const ModelConfig& cfg, uint64_t seed) {
  DubModel m;
  m.config = cfg;
  m.store = std::make_unique<ParamStore>();
  Rng init_rng(mix_seed(seed, 0x696e6974));  // independent init stream
  m.encoder = std::make_unique<ConditionEncoder>(*m.store, init_rng, cfg.model_dim);
  m.vfield = std::make_unique<VectorFieldNet>(*m.store, init_rng, cfg);
  m.durnet = std::make_unique<DurationNet>(*m.store, init_rng, cfg);
  return m;
}

std::vector<LoadedClip> load_clips(const Manifest& m, const std::string& split) {
  std::vector<LoadedClip> out;
  for (const DubbingClip* c : m.split(split)) {
    out.push_back({*c, load_features(m, *c), load_visual(m, *c)});
  }
  return out;
}

PathSample ot_path_sample(const Tensor& x0, const Tensor& x1, double tau) {
  if (x0.shape() != x1.shape()) {
    throw_usage("ShapeMismatch", "path endpoints have different shapes");
  }
  if (tau < 0.0 || tau > 1.0) throw_usage("BadFlag", "tau outside [0, 1]");
  PathSample ps;
  ps.x_tau = Tensor::zeros(x0.shape());
  ps.u = Tensor::zeros(x0.shape());
  const size_t n = x0.size();
  for (size_t i = 0; i < n; ++i) {
    ps.x_tau.data()[i] = (1.0 - tau) * x0.data()[i] + tau * x1.data()[i];
    ps.u.data()[i] = x1.data()[i] - x0.data()[i];
  }
  return ps;
}

Tensor cfm_loss_with(const VelocityModel& field, const ConditionEncoder& encoder,
                     size_t input_dim, std::span<const LoadedClip> batch, Rng& rng,
                     double p_dropout) {
  if (batch.empty()) throw_usage("EmptyBatch", "cfm loss over an empty batch");
  const size_t d = input_dim;
  size_t t_max = 0, total_valid = 0;
  for (const LoadedClip& c : batch) {
    if (c.features.dim != d) {
      throw_usage("ShapeMismatch", "clip feature dim != model input dim");
    }
    t_max = std::max(t_max, c.features.frames);
    total_valid += c.features.frames;
  }

  Tensor loss_acc;
  for (const LoadedClip& clip : batch) {
    const size_t t_valid = clip.features.frames;
    const double tau = rng.uniform();
    Tensor x1 = Tensor::zeros({t_max, d});
    std::copy(clip.features.values.begin(), clip.features.values.end(), x1.data());
    Tensor x0 = Tensor::zeros({t_max, d});
    for (size_t i = 0; i < t_valid * d; ++i) x0.data()[i] = rng.normal();
    const PathSample ps = ot_path_sample(x0, x1, tau);

    ConditionBundle bundle =
        encoder.encode(clip.visual, clip.meta.conditions, clip.meta.script_tokens);
    bundle = encoder.apply_dropout(bundle, p_dropout, rng);

    std::vector<double> mask(t_max, 0.0);
    std::fill(mask.begin(), mask.begin() + static_cast<long>(t_valid), 1.0);
    Tensor v = field.velocity(ps.x_tau, tau, bundle, mask);
    Tensor clip_loss = masked_frame_sse(v, ps.u, mask);
    Tensor weighted = scale(
        clip_loss, static_cast<double>(t_valid) / static_cast<double>(total_valid));
    loss_acc = loss_acc.defined() ? add(loss_acc, weighted) : weighted;
  }
  return loss_acc;
}

Tensor cfm_loss(const DubModel& model, std::span<const LoadedClip> batch, Rng& rng,
                double p_dropout) {
  return cfm_loss_with(*model.vfield, *model.encoder, model.config.input_dim, batch, rng,
                       p_dropout);
}

Tensor duration_loss(const DubModel& model, const LoadedClip& clip) {
  if (clip.meta.duration_frames < 1) {
    throw_usage("EmptyBatch", "duration loss needs at least one frame");
  }
  Tensor vis = model.encoder->encode_visual(clip.visual);
  Tensor con = model.encoder->encode_conditions(clip.meta.conditions);
  Tensor f = model.durnet->predict_log_duration(vis, con);
  const double target = std::log(static_cast<double>(clip.meta.duration_frames));
  return mse(f, Tensor::from({1, 1}, {target}));
}

LossParts total_loss(const DubModel& model, std::span<const LoadedClip> batch, Rng& rng,
                     double p_dropout, double w_dur) {
  LossParts out;
  Tensor cfm = cfm_loss(model, batch, rng, p_dropout);
  Tensor dur_sum;
  for (const LoadedClip& clip : batch) {
    Tensor dl = duration_loss(model, clip);
    dur_sum = dur_sum.defined() ? add(dur_sum, dl) : dl;
  }
  Tensor dur_mean = scale(dur_sum, 1.0 / static_cast<double>(batch.size()));
  out.cfm_value = cfm.item();
  out.dur_value = dur_mean.item();
  out.total = add(cfm, scale(dur_mean, w_dur));
  return out;
}

std::string train_config_to_json(const TrainConfig& t, const ModelConfig& m) {
  nlohmann::ordered_json j;
  j["train"] = {{"batch_size", t.batch_size}, {"steps", t.steps},         {"lr", t.lr},
                {"dropout_p", t.dropout_p},   {"seed", t.seed},           {"w_dur", t.w_dur},
                {"staged", t.staged}};
  j["model"] = {{"input_dim", m.input_dim},   {"model_dim", m.model_dim},
                {"n_blocks", m.n_blocks},     {"n_heads", m.n_heads},
                {"ffn_mult", m.ffn_mult},     {"duration_hidden", m.duration_hidden}};
  return j.dump();
}

std::pair<TrainConfig, ModelConfig> configs_from_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ckpt.config_json);
  } catch (const nlohmann::json::exception& e) {
    throw_runtime("ParseError", std::string("checkpoint config echo: ") + e.what());
  }
  TrainConfig t;
  ModelConfig m;
  const auto& jt = j.at("train");
  t.batch_size = jt.at("batch_size").get<size_t>();
  t.steps = jt.at("steps").get<size_t>();
  t.lr = jt.at("lr").get<double>();
  t.dropout_p = jt.at("dropout_p").get<double>();
  t.seed = jt.at("seed").get<uint64_t>();
  t.w_dur = jt.at("w_dur").get<double>();
  t.staged = jt.at("staged").get<bool>();
  const auto& jm = j.at("model");
  m.input_dim = jm.at("input_dim").get<size_t>();
  m.model_dim = jm.at("model_dim").get<size_t>();
  m.n_blocks = jm.at("n_blocks").get<size_t>();
  m.n_heads = jm.at("n_heads").get<size_t>();
  m.ffn_mult = jm.at("ffn_mult").get<size_t>();
  m.duration_hidden = jm.at("duration_hidden").get<size_t>();
  return {t, m};
}

void write_checkpoint(const std::filesystem::path& path, const DubModel& model,
                      const std::string& config_json, double final_loss,
                      const std::array<uint64_t, 4>& rng_state) {
  std::string b;
  b.append(kCheckpointMagic, 8);
  append_u32(b, kCheckpointVersion);
  append_u32(b, static_cast<uint32_t>(config_json.size()));
  b.append(config_json);
  append_f64(b, final_loss);
  append_u32(b, static_cast<uint32_t>(model.store->count()));
  for (const NamedParam& p : model.store->items()) {
    append_u32(b, static_cast<uint32_t>(p.name.size()));
    b.append(p.name);
    append_u32(b, static_cast<uint32_t>(p.tensor.rank()));
    for (size_t dim : p.tensor.shape()) append_u32(b, static_cast<uint32_t>(dim));
    b.append(reinterpret_cast<const char*>(p.tensor.data()), p.tensor.size() * 8);
  }
  for (uint64_t w : rng_state) append_u64(b, w);
  atomic_write(path, b);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_runtime("IoFailure", "cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader r{bytes};
  if (r.bytes(8) != std::string(kCheckpointMagic, 8)) {
    throw_runtime("CheckpointVersionMismatch", "bad checkpoint magic in " + path.string());
  }
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw_runtime("CheckpointVersionMismatch",
                  "checkpoint format version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  }
  Checkpoint ck;
  const uint32_t cfg_len = r.u32();
  ck.config_json = r.bytes(cfg_len);
  ck.final_loss = r.f64();
  const uint32_t n_params = r.u32();
  for (uint32_t i = 0; i < n_params; ++i) {
    const uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    const uint32_t rank = r.u32();
    std::vector<size_t> shape(rank);
    size_t total = 1;
    for (uint32_t k = 0; k < rank; ++k) {
      shape[k] = r.u32();
      total *= shape[k];
    }
    std::vector<double> data(total);
    for (size_t k = 0; k < total; ++k) data[k] = r.f64();
    ck.params.push_back({std::move(name), Tensor::from(std::move(shape), std::move(data))});
  }
  for (auto& w : ck.rng_state) w = r.u64();
  return ck;
}

DubModel model_from_checkpoint(const Checkpoint& ckpt) {
  auto [tcfg, mcfg] = configs_from_checkpoint(ckpt);
  DubModel model = DubModel::init(mcfg, tcfg.seed);
  if (model.store->count() != ckpt.params.size()) {
    throw_runtime("CheckpointVersionMismatch", "parameter table size mismatch");
  }
  for (const NamedParam& stored : ckpt.params) {
    Tensor live = model.store->find(stored.name);
    if (live.shape() != stored.tensor.shape()) {
      throw_runtime("CheckpointVersionMismatch", "shape mismatch for " + stored.name);
    }
    std::copy(stored.tensor.data(), stored.tensor.data() + stored.tensor.size(),
              live.data());
  }
  return model;
}

TrainResult train(const TrainConfig& cfg, const ModelConfig& model_cfg, const Manifest& m,
                  const std::filesystem::path& out_dir) {
  if (cfg.staged) {
    throw_usage("BadFlag", "staged training schedule is not available in this build");
  }
  if (cfg.batch_size < 1 || cfg.steps < 1 || cfg.lr <= 0.0 || cfg.w_dur < 0.0) {
    throw_usage("BadFlag", "train config values must be positive");
  }
  if (cfg.dropout_p < 0.0 || cfg.dropout_p > 1.0) {
    throw_usage("BadFlag", "dropout_p outside [0, 1]");
  }
  std::vector<LoadedClip> clips = load_clips(m, "train");
  if (clips.empty()) throw_usage("EmptyBatch", "train split is empty");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw_runtime("IoFailure", "cannot create " + out_dir.string());

  DubModel model = DubModel::init(model_cfg, cfg.seed);
  std::fprintf(stderr, "[train] %zu clips, %zu parameters in %zu tensors\n", clips.size(),
               model.store->total_size(), model.store->count());

  Adam adam(*model.store, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  Rng rng(mix_seed(cfg.seed, 0x747261696e));

  const size_t n = clips.size();
  const size_t batch = std::min(cfg.batch_size, n);
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  size_t cursor = n;  // force an initial shuffle

  std::string log_text;
  TrainResult result;
  Graph& graph = Graph::active();
  // Linear warmup over the first 5% of steps, then cosine decay to 10% of
  // the peak rate. Constant rates either crawl or destabilize the noisier
  // guidance branches at this step budget.
  const size_t warmup = std::max<size_t>(1, cfg.steps / 20);
  for (size_t step = 0; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    double lr_scale;
    if (step < warmup) {
      lr_scale = static_cast<double>(step + 1) / static_cast<double>(warmup);
    } else {
      const double progress = static_cast<double>(step - warmup) /
                              static_cast<double>(cfg.steps - warmup);
      lr_scale = 0.1 + 0.45 * (1.0 + std::cos(3.14159265358979323846 * progress));
    }
    adam.set_lr(cfg.lr * lr_scale);
    if (cursor + batch > n) {
      // Fisher-Yates over the manifest order; remainder clips are dropped.
      for (size_t i = n - 1; i > 0; --i) {
        const size_t j = static_cast<size_t>(rng.below(i + 1));
        std::swap(order[i], order[j]);
      }
      cursor = 0;
    }
    std::vector<LoadedClip> batch_clips;
    batch_clips.reserve(batch);
    for (size_t i = 0; i < batch; ++i) batch_clips.push_back(clips[order[cursor + i]]);
    cursor += batch;

    graph.clear();
    model.store->zero_grads();
    LossParts lp = total_loss(model, batch_clips, rng, cfg.dropout_p, cfg.w_dur);
    const double total_value = lp.total.item();
    if (!std::isfinite(total_value)) {
      throw_runtime("NonFinite", "training loss diverged at step " + std::to_string(step));
    }
    graph.backward(lp.total);
    model.store->collect_disconnected();
    adam.step();

    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    nlohmann::ordered_json line = {{"step", step},
                                   {"cfm_loss", lp.cfm_value},
                                   {"dur_loss", lp.dur_value},
                                   {"wall_ms", wall_ms}};
    log_text += line.dump();
    log_text += "\n";
    if (step == 0) result.step0_cfm = lp.cfm_value;
    result.final_cfm = lp.cfm_value;
    result.final_dur = lp.dur_value;
    if (step % 100 == 0) {
      std::fprintf(stderr, "[train] step %zu cfm %.4f dur %.4f\n", step, lp.cfm_value,
                   lp.dur_value);
    }
  }
  graph.clear();

  result.param_count = model.store->total_size();
  result.checkpoint_path = out_dir / "checkpoint.vdxc";
  result.log_path = out_dir / "train_log.jsonl";
  write_checkpoint(result.checkpoint_path, model, train_config_to_json(cfg, model_cfg),
                   result.final_cfm + cfg.w_dur * result.final_dur, rng.state());
  atomic_write(result.log_path, log_text);
  return result;
}

}  // namespace vdx
