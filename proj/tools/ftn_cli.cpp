#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ftn/cost.hpp"
#include "ftn/image_io.hpp"
#include "ftn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t fallback_seed() {
  if (const char* env = std::getenv("FTN_SEED"))
    return std::strtoull(env, nullptr, 10);
  return 0;
}

struct TrainCliConfig {
  ftn::FtnConfig model;
  ftn::TrainSchedule sched;
};

TrainCliConfig parse_train_config(const std::string& path) {
  TrainCliConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream is(path);
  if (!is) throw ftn::Error("cannot open config '" + path + "'");
  json j = json::parse(is);

  cfg.sched.epochs = j.value("epochs", cfg.sched.epochs);
  cfg.sched.max_steps = j.value("max_steps", cfg.sched.max_steps);
  cfg.sched.warmup_epochs = j.value("warmup_epochs", cfg.sched.warmup_epochs);
  cfg.sched.lr0 = j.value("lr", cfg.sched.lr0);
  if (j.contains("lr_milestones"))
    cfg.sched.lr_milestones = j["lr_milestones"].get<std::vector<int>>();
  cfg.sched.lr_decay = j.value("lr_decay", cfg.sched.lr_decay);
  cfg.sched.ids_per_batch = j.value("ids_per_batch", cfg.sched.ids_per_batch);
  cfg.sched.imgs_per_id = j.value("imgs_per_id", cfg.sched.imgs_per_id);
  cfg.sched.triplet_margin = j.value("triplet_margin", cfg.sched.triplet_margin);
  cfg.sched.triplet_per_branch =
      j.value("triplet_per_branch", cfg.sched.triplet_per_branch);

  cfg.model.embed_dim = j.value("embed_dim", cfg.model.embed_dim);
  cfg.model.cfa_pool_factor = j.value("cfa_pool", cfg.model.cfa_pool_factor);
  cfg.model.decoder_hidden = j.value("decoder_hidden", cfg.model.decoder_hidden);
  cfg.model.decode_from_cfa = j.value("decode_from_cfa", cfg.model.decode_from_cfa);
  cfg.model.mask_channel_max = j.value("mask_channel_max", cfg.model.mask_channel_max);
  cfg.model.gmask.sigma_y_frac = j.value("sigma_y_frac", cfg.model.gmask.sigma_y_frac);
  cfg.model.gmask.sigma_x_frac = j.value("sigma_x_frac", cfg.model.gmask.sigma_x_frac);
  if (j.contains("backbone")) {
    cfg.model.backbone.stages.clear();
    for (const auto& row : j["backbone"])
      cfg.model.backbone.stages.push_back(
          {row.at(0).get<int>(), row.at(1).get<int>(), row.at(2).get<int>()});
  }
  return cfg;
}

std::unique_ptr<ftn::FtnModel<float>> model_from_checkpoint(
    const std::string& path) {
  auto tensors = ftn::load_checkpoint(path);
  ftn::FtnConfig cfg = ftn::config_from_state(tensors);
  ftn::Rng rng(0);
  auto model = std::make_unique<ftn::FtnModel<float>>(cfg, rng);
  model->load_state_tensors(tensors);
  return model;
}

int cmd_gen_data(const std::string& spec_path, std::uint64_t seed,
                 const std::string& out_dir) {
  ftn::SyntheticSpec spec;
  if (!spec_path.empty()) {
    std::ifstream is(spec_path);
    if (!is) throw ftn::Error("cannot open spec '" + spec_path + "'");
    std::string text((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
    spec = ftn::SyntheticSpec::from_json_text(text);
  }
  ftn::generate_dataset(spec, seed, out_dir);
  std::cout << "wrote " << spec.num_ids * spec.imgs_per_id << " images to "
            << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& strategy_str, std::uint64_t seed,
              const std::string& out_ckpt, std::string log_path) {
  ftn::Dataset ds = ftn::load_dataset(data_dir);
  TrainCliConfig cfg = parse_train_config(config_path);

  const bool baseline = strategy_str == "none";
  ftn::ReconStrategy strategy =
      baseline ? ftn::ReconStrategy::PlainInput : ftn::parse_strategy(strategy_str);
  cfg.model.with_cfa = strategy != ftn::ReconStrategy::NoCfaGmOnly;
  cfg.model.with_decoder = !baseline;
  cfg.sched.no_decoder = baseline;
  cfg.model.image_h = ds.height;
  cfg.model.image_w = ds.width;
  cfg.model.num_classes = static_cast<int>(ds.train_ids().size());

  ftn::Rng master(seed);
  ftn::Rng init_rng = master.fork(0);
  const std::uint64_t train_seed = master.fork(1).seed();

  ftn::FtnModel<float> model(cfg.model, init_rng);
  if (log_path.empty()) log_path = out_ckpt + ".log.jsonl";
  std::ofstream log(log_path);
  if (!log) throw ftn::Error("cannot open log '" + log_path + "'");
  ftn::TrainRunResult r = ftn::train_model(model, ds, cfg.sched, strategy,
                                           train_seed, &log);
  ftn::save_checkpoint(out_ckpt, model.state_tensors());
  std::cout << "trained " << r.steps << " steps; checkpoint " << out_ckpt
            << ", log " << log_path << "\n";
  return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt,
             const std::string& out_json, int max_rank, bool l2norm) {
  ftn::Dataset ds = ftn::load_dataset(data_dir);
  auto model = model_from_checkpoint(ckpt);
  ftn::EvalSplit split = ftn::eval_split(ds);
  auto queries = ftn::embed_dataset(*model, ds, split.query_rows);
  auto gallery = ftn::embed_dataset(*model, ds, split.gallery_rows);
  ftn::RetrievalResult res =
      ftn::evaluate(queries, gallery, max_rank, l2norm);
  std::ofstream os(out_json);
  if (!os) throw ftn::Error("cannot open '" + out_json + "' for writing");
  os << ftn::retrieval_to_json(res) << "\n";
  std::cout << "rank-1 " << res.cmc[0] << ", mAP " << res.map << " over "
            << res.num_valid_queries << " queries -> " << out_json << "\n";
  return 0;
}

int cmd_dump(const std::string& data_dir, const std::string& ckpt,
             const std::string& out_dir, int limit) {
  ftn::Dataset ds = ftn::load_dataset(data_dir);
  auto model = model_from_checkpoint(ckpt);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw ftn::Error("cannot create '" + out_dir + "': " + ec.message());

  const int H = ds.height, W = ds.width;
  ftn::write_pgm((fs::path(out_dir) / "gaussian_mask.pgm").string(), H, W,
                 model->gaussian().data().data());

  const int n = std::min<int>(limit, static_cast<int>(ds.records.size()));
  for (int i = 0; i < n; ++i) {
    ftn::Tensor<float> img = ftn::Tensor<float>::from_data(
        {1, 3, H, W}, std::vector<float>(ds.images[static_cast<size_t>(i)]));
    const std::string stem =
        fs::path(ds.records[static_cast<size_t>(i)].file).stem().string();

    auto reid = model->forward_reid(img, /*training=*/false);
    auto dump_activation = [&](const ftn::Tensor<float>& feat,
                               const std::string& tag) {
      ftn::Tensor<float> m = ftn::attention_to_mask(feat.detach(), H, W);
      ftn::write_pgm((fs::path(out_dir) / (stem + "_" + tag + ".pgm")).string(),
                     H, W, m.data().data());
    };
    if (model->config().with_cfa) dump_activation(reid.cfa.attended, "cfa");
    dump_activation(reid.f4, "stage4");

    if (model->config().with_decoder) {
      auto recon = model->forward_recon(img, /*training=*/false);
      ftn::write_ppm((fs::path(out_dir) / (stem + "_recon.ppm")).string(), H, W,
                     recon.recon.data().data());
      if (recon.masks.pam.defined())
        ftn::write_pgm((fs::path(out_dir) / (stem + "_pam.pgm")).string(), H, W,
                       recon.masks.pam.data().data());
      if (recon.masks.cam.defined())
        ftn::write_pgm((fs::path(out_dir) / (stem + "_cam.pgm")).string(), H, W,
                       recon.masks.cam.data().data());
    }
  }
  std::cout << "dumped " << n << " images to " << out_dir << "\n";
  return 0;
}

int cmd_count(const std::string& module, int channels, const std::string& hw,
              int pool) {
  const auto xpos = hw.find('x');
  if (xpos == std::string::npos)
    throw ftn::Error("--hw expects HxW, e.g. 16x8");
  const int h = std::stoi(hw.substr(0, xpos));
  const int w = std::stoi(hw.substr(xpos + 1));
  ftn::CostModel m;
  if (module == "cfa")
    m = ftn::cfa_cost(channels, pool, h, w);
  else if (module == "pamcam")
    m = ftn::pamcam_cost(channels, h, w);
  else
    throw ftn::Error("--module must be cfa or pamcam");
  std::cout << ftn::cost_report_json(m) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Foreground-guided texture-focused Re-ID sandbox"};
  app.require_subcommand(1);

  std::string spec_path, data_dir, config_path, out_path, ckpt_path, log_path;
  std::string strategy = "g", module = "cfa", hw = "16x8";
  std::uint64_t seed = fallback_seed();
  int max_rank = 10, limit = 8, channels = 1024, pool = 2;
  bool l2norm = false;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "dataset spec JSON");
  gen->add_option("--seed", seed, "rng seed (default: FTN_SEED env or 0)");
  gen->add_option("--out", out_path, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--config", config_path, "training config JSON");
  train->add_option("--strategy", strategy,
                    "reconstruction strategy a..g, or 'none' for the "
                    "no-decoder baseline");
  train->add_option("--seed", seed, "rng seed");
  train->add_option("--out", ckpt_path, "output checkpoint")->required();
  train->add_option("--log", log_path, "JSONL log path (default <out>.log.jsonl)");

  auto* eval = app.add_subcommand("eval", "evaluate retrieval");
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  eval->add_option("--out", out_path, "output JSON")->required();
  eval->add_option("--max-rank", max_rank, "CMC ranks to report");
  eval->add_flag("--l2norm", l2norm, "L2-normalise embeddings");

  auto* dump = app.add_subcommand("dump", "dump masks/reconstructions/activations");
  dump->add_option("--data", data_dir, "dataset directory")->required();
  dump->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  dump->add_option("--out", out_path, "output directory")->required();
  dump->add_option("--limit", limit, "number of images to dump");

  auto* count = app.add_subcommand("count", "print a module cost report");
  count->add_option("--module", module, "cfa or pamcam")->required();
  count->add_option("--channels", channels, "input channels");
  count->add_option("--hw", hw, "input size HxW");
  count->add_option("--pool", pool, "CFA channel pool factor");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(spec_path, seed, out_path);
    if (train->parsed())
      return cmd_train(data_dir, config_path, strategy, seed, ckpt_path,
                       log_path);
    if (eval->parsed())
      return cmd_eval(data_dir, ckpt_path, out_path, max_rank, l2norm);
    if (dump->parsed()) return cmd_dump(data_dir, ckpt_path, out_path, limit);
    if (count->parsed()) return cmd_count(module, channels, hw, pool);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
