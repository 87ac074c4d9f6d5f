// vdx: synthetic dubbing pipeline driver.
//
// Subcommands: gen-corpus, train, sample, evaluate, inspect.
// Exit codes: 0 success, 1 validation error, 2 runtime error. Errors print
// to stderr as "ERROR:<code>: message".

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "vdx/corpus.hpp"
#include "vdx/flow.hpp"
#include "vdx/metrics.hpp"
#include "vdx/sampler.hpp"

namespace fs = std::filesystem;

namespace {

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) {
    vdx::throw_usage("MissingFile", std::string(what) + " not found: " + path);
  }
}

vdx::TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) vdx::throw_usage("MissingFile", "cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    vdx::throw_usage("ParseError", "config " + path + ": " + e.what());
  }
  vdx::TrainConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "batch_size") cfg.batch_size = value.get<size_t>();
    else if (key == "steps") cfg.steps = value.get<size_t>();
    else if (key == "lr") cfg.lr = value.get<double>();
    else if (key == "dropout_p") cfg.dropout_p = value.get<double>();
    else if (key == "seed") cfg.seed = value.get<uint64_t>();
    else if (key == "w_dur") cfg.w_dur = value.get<double>();
    else if (key == "staged") cfg.staged = value.get<bool>();
    else vdx::throw_usage("UnknownKey", "config key '" + key + "' is not recognized");
  }
  return cfg;
}

int cmd_gen_corpus(size_t n, uint64_t seed, const std::string& out) {
  vdx::CorpusConfig cfg;
  cfg.n_clips = n;
  cfg.seed = seed;
  cfg.out_dir = out;
  vdx::Manifest m = vdx::generate_corpus(cfg);
  const auto violations = vdx::validate(m);
  for (const auto& v : violations) {
    std::fprintf(stderr, "WARN: %s %s %s\n", v.clip_id.c_str(), v.rule.c_str(),
                 v.detail.c_str());
  }
  std::fprintf(stderr, "[gen-corpus] %zu clips -> %s (%zu violations)\n", m.clips.size(),
               out.c_str(), violations.size());
  return violations.empty() ? 0 : 2;
}

int cmd_train(const std::string& config_path, const std::string& manifest_path,
              const std::string& out, const CLI::App* sub) {
  require_file(config_path, "config");
  require_file(manifest_path, "manifest");
  vdx::TrainConfig cfg = load_train_config(config_path);
  // Flags win over the config file.
  if (sub->count("--steps") > 0) cfg.steps = sub->get_option("--steps")->as<size_t>();
  if (sub->count("--seed") > 0) cfg.seed = sub->get_option("--seed")->as<uint64_t>();
  if (sub->count("--lr") > 0) cfg.lr = sub->get_option("--lr")->as<double>();
  if (sub->count("--batch-size") > 0) {
    cfg.batch_size = sub->get_option("--batch-size")->as<size_t>();
  }
  vdx::Manifest m = vdx::load_manifest(manifest_path);
  vdx::TrainResult r = vdx::train(cfg, vdx::ModelConfig{}, m, out);
  std::fprintf(stderr, "[train] done: cfm %.4f -> %.4f, checkpoint %s\n", r.step0_cfm,
               r.final_cfm, r.checkpoint_path.c_str());
  return 0;
}

int cmd_sample(const std::string& checkpoint, const std::string& manifest_path,
               const std::string& split, const vdx::SampleConfig& cfg,
               const std::string& out) {
  require_file(checkpoint, "checkpoint");
  require_file(manifest_path, "manifest");
  if (cfg.lambda_v < 0.0 || cfg.lambda_c < 0.0 || cfg.lambda_t < 0.0) {
    vdx::throw_usage("BadFlag", "guidance scales must be non-negative");
  }
  if (cfg.steps < 1) vdx::throw_usage("BadFlag", "--steps must be >= 1");
  if (split != "train" && split != "val" && split != "test") {
    vdx::throw_usage("BadFlag", "--split must be train, val or test");
  }
  vdx::DubModel model = vdx::model_from_checkpoint(vdx::read_checkpoint(checkpoint));
  vdx::Manifest m = vdx::load_manifest(manifest_path);
  vdx::run_sampling(model, m, split, cfg, out);
  std::fprintf(stderr, "[sample] wrote %s\n", out.c_str());
  return 0;
}

int cmd_evaluate(const std::string& manifest_path, const std::string& generated,
                 const std::string& out) {
  require_file(manifest_path, "manifest");
  if (!fs::exists(generated)) {
    vdx::throw_usage("MissingFile", "generated dir not found: " + generated);
  }
  vdx::Manifest m = vdx::load_manifest(manifest_path);
  vdx::MetricsReport report = vdx::evaluate(m, generated);
  vdx::write_report(out, report, manifest_path, generated);
  std::printf("clips=%zu mcd=%.4f mcd_sl=%.4f wer=%.4f spk_sim=%.4f emo_sim=%.4f "
              "sync_offset=%.2f sync_conf=%.4f\n",
              report.aggregate.count, report.aggregate.mcd, report.aggregate.mcd_sl,
              report.aggregate.wer, report.aggregate.spk_sim, report.aggregate.emo_sim,
              report.aggregate.sync_offset, report.aggregate.sync_conf);
  return 0;
}

int cmd_inspect(const std::string& path) {
  require_file(path, "artifact");
  std::ifstream in(path, std::ios::binary);
  char magic[8] = {};
  in.read(magic, 8);
  const std::string head(magic, in.gcount() > 0 ? static_cast<size_t>(in.gcount()) : 0);
  in.close();

  if (head.rfind("VDXF", 0) == 0) {
    const auto [frames, dim] = vdx::read_payload_header(path);
    std::printf("payload magic=%.8s frames=%u dim=%u\n", head.c_str(), frames, dim);
    return 0;
  }
  if (head.rfind("VDXC", 0) == 0) {
    const vdx::Checkpoint ck = vdx::read_checkpoint(path);
    size_t total = 0;
    for (const auto& p : ck.params) total += p.tensor.size();
    std::printf("checkpoint magic=%.8s version=%u params=%zu values=%zu final_loss=%.6f\n",
                head.c_str(), vdx::kCheckpointVersion, ck.params.size(), total,
                ck.final_loss);
    std::printf("config %s\n", ck.config_json.c_str());
    for (const auto& p : ck.params) {
      std::string shape;
      for (size_t d : p.tensor.shape()) {
        shape += (shape.empty() ? "" : "x") + std::to_string(d);
      }
      std::printf("  %-24s %s\n", p.name.c_str(), shape.c_str());
    }
    return 0;
  }
  // Structured text: a metrics report (object with "aggregate") or a
  // JSONL manifest / sidecar.
  std::ifstream text(path);
  std::string first_line;
  std::getline(text, first_line);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(first_line);
  } catch (const nlohmann::json::exception&) {
    // Multi-line JSON document (report written with indentation).
    std::ifstream whole(path);
    try {
      whole >> j;
    } catch (const nlohmann::json::exception& e) {
      vdx::throw_usage("ParseError", std::string("unrecognized artifact: ") + e.what());
    }
  }
  if (j.contains("aggregate")) {
    const vdx::MetricsReport r = vdx::read_report(path);
    std::printf("report clips=%zu mcd=%.4f wer=%.4f spk_sim=%.4f emo_sim=%.4f\n",
                r.aggregate.count, r.aggregate.mcd, r.aggregate.wer, r.aggregate.spk_sim,
                r.aggregate.emo_sim);
    return 0;
  }
  if (j.contains("id") && j.contains("split")) {
    const vdx::Manifest m = vdx::load_manifest(path);
    size_t train = 0, val = 0, test = 0, frames = 0;
    for (const auto& c : m.clips) {
      if (c.split == "train") ++train;
      else if (c.split == "val") ++val;
      else ++test;
      frames += c.duration_frames;
    }
    std::printf("manifest clips=%zu train=%zu val=%zu test=%zu total_frames=%zu\n",
                m.clips.size(), train, val, test, frames);
    return 0;
  }
  std::printf("json document: %s\n", j.dump().substr(0, 200).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic movie-dubbing pipeline (corpus, training, sampling, metrics)"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-corpus", "generate an annotated synthetic corpus");
  size_t gen_n = 0;
  uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--n", gen_n, "number of clips")->required();
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train on a corpus manifest");
  std::string tr_config, tr_manifest, tr_out;
  size_t tr_steps = 0, tr_batch = 0;
  uint64_t tr_seed = 0;
  double tr_lr = 0.0;
  tr->add_option("--config", tr_config, "train config JSON")->required();
  tr->add_option("--manifest", tr_manifest, "manifest.jsonl path")->required();
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--steps", tr_steps, "override config steps");
  tr->add_option("--seed", tr_seed, "override config seed");
  tr->add_option("--lr", tr_lr, "override config learning rate");
  tr->add_option("--batch-size", tr_batch, "override config batch size");

  auto* sa = app.add_subcommand("sample", "generate feature sequences from a checkpoint");
  std::string sa_ckpt, sa_manifest, sa_out, sa_split = "test";
  vdx::SampleConfig sa_cfg;
  sa->add_option("--checkpoint", sa_ckpt, "checkpoint path")->required();
  sa->add_option("--manifest", sa_manifest, "manifest.jsonl path")->required();
  sa->add_option("--split", sa_split, "split to sample (train|val|test)");
  sa->add_option("--lambda-v", sa_cfg.lambda_v, "visual guidance scale");
  sa->add_option("--lambda-c", sa_cfg.lambda_c, "conclusion guidance scale");
  sa->add_option("--lambda-t", sa_cfg.lambda_t, "script guidance scale");
  sa->add_option("--steps", sa_cfg.steps, "ODE steps");
  sa->add_option("--seed", sa_cfg.seed, "sampling seed");
  sa->add_option("--out", sa_out, "output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "score generated clips against the test split");
  std::string ev_manifest, ev_generated, ev_out;
  ev->add_option("--manifest", ev_manifest, "manifest.jsonl path")->required();
  ev->add_option("--generated", ev_generated, "directory of generated payloads")->required();
  ev->add_option("--out", ev_out, "report JSON path")->required();

  auto* ins = app.add_subcommand("inspect", "dump any artifact header");
  std::string ins_path;
  ins->add_option("path", ins_path, "artifact path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "ERROR:BadFlag: %s\n", e.what());
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_corpus(gen_n, gen_seed, gen_out);
    if (tr->parsed()) return cmd_train(tr_config, tr_manifest, tr_out, tr);
    if (sa->parsed()) return cmd_sample(sa_ckpt, sa_manifest, sa_split, sa_cfg, sa_out);
    if (ev->parsed()) return cmd_evaluate(ev_manifest, ev_generated, ev_out);
    if (ins->parsed()) return cmd_inspect(ins_path);
  } catch (const vdx::Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return e.kind() == vdx::ErrKind::Usage ? 1 : 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "ERROR:Internal: %s\n", e.what());
    return 2;
  }
  return 0;
}
