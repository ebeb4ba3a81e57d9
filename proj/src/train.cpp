#include "adabin/train.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "adabin/error.hpp"
#include "binary_io.hpp"
#include "json.hpp"

namespace adabin {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void clip_latent_weights(Model& model, float c) {
  for (BinaryConv2d* bc : model.binary_convs()) {
    for (float& w : bc->weight.value.storage()) w = std::clamp(w, -c, c);
  }
}

void check_classes(std::size_t model_classes, const Dataset& ds) {
  if (ds.classes != model_classes) {
    throw ConfigError("model predicts " + std::to_string(model_classes) + " classes, dataset '" +
                      ds.split + "' has " + std::to_string(ds.classes));
  }
}

template <typename Forward>
EvalReport run_eval(Forward&& fwd, const Dataset& ds, std::size_t classes, std::size_t batch,
                    bool keep_logits) {
  check_classes(classes, ds);
  if (batch == 0) throw Error("evaluate: batch must be positive");
  EvalReport rep;
  rep.count = ds.size();
  rep.per_class.assign(classes, 0.0);
  rep.class_count.assign(classes, 0);
  rep.predictions.resize(ds.size());
  if (keep_logits) rep.logits = Tensor({ds.size(), classes});
  std::vector<std::size_t> correct(classes, 0);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += batch) {
    const std::size_t end = std::min(ds.size(), start + batch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = make_batch(ds, idx, nullptr);
    const Tensor logits = fwd(b.images);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const float* row = logits.data().data() + i * classes;
      const auto pred = static_cast<int>(std::max_element(row, row + classes) - row);
      rep.predictions[start + i] = pred;
      const auto label = static_cast<std::size_t>(b.labels[i]);
      ++rep.class_count[label];
      if (pred == b.labels[i]) ++correct[label];
      if (keep_logits) std::copy(row, row + classes, rep.logits.data().data() + (start + i) * classes);
    }
  }
  std::size_t total = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    total += correct[k];
    rep.per_class[k] = rep.class_count[k] ? static_cast<double>(correct[k]) / rep.class_count[k] : 0.0;
  }
  rep.top1 = rep.count ? static_cast<double>(total) / rep.count : 0.0;
  return rep;
}

std::vector<LayerQuantState> quant_states(Model& model) {
  std::vector<LayerQuantState> out;
  for (const BinaryConv2d* bc : model.binary_convs()) {
    const BinarySpec s = bc->activation_spec();
    out.push_back({bc->name(), s.alpha[0], s.beta[0]});
  }
  return out;
}

void write_text(const fs::path& p, const std::string& text) {
  io::write_file(p.string(), std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::vector<std::string> lines;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) lines.push_back(l);
  }
  return lines;
}

}  // namespace

DatasetPair apply_subsets(const RunConfig& cfg, const DatasetPair& full) {
  DatasetPair out = full;
  if (cfg.subset && cfg.subset < full.train.size()) {
    const auto idx = stratified_subset(full.train.labels, full.train.classes, cfg.subset, kSubsetSeed);
    out.train = subset(full.train, idx);
  }
  if (cfg.test_subset && cfg.test_subset < full.test.size()) {
    const auto idx =
        stratified_subset(full.test.labels, full.test.classes, cfg.test_subset, kSubsetSeed + 1);
    out.test = subset(full.test, idx);
  }
  return out;
}

DatasetPair prepare_data(const RunConfig& cfg) {
  return apply_subsets(cfg, load_dataset(cfg.dataset, cfg.data_dir, cfg.cifar_records));
}

std::string EpochMetrics::to_json() const {
  json j;
  j["epoch"] = epoch;
  j["train_loss"] = train_loss;
  j["test_acc"] = test_acc;
  j["lr"] = lr;
  json layers_j = json::array();
  for (const auto& l : layers) {
    layers_j.push_back({{"name", l.name}, {"alpha_a", l.alpha_a}, {"beta_a", l.beta_a}});
  }
  j["layers"] = layers_j;
  return j.dump();
}

std::string EvalReport::to_json() const {
  json j;
  j["count"] = count;
  j["top1"] = top1;
  j["per_class"] = per_class;
  j["class_count"] = class_count;
  return j.dump();
}

EvalReport evaluate(Model& model, const Dataset& ds, std::size_t batch, bool keep_logits) {
  return run_eval([&](const Tensor& x) { return model.forward(x, Mode::Eval); }, ds,
                  model.config().classes, batch, keep_logits);
}

EvalReport evaluate_packed(const PackedModel& pm, const Dataset& ds, std::size_t batch,
                           bool keep_logits) {
  return run_eval([&](const Tensor& x) { return pm.forward(x); }, ds, pm.classes, batch,
                  keep_logits);
}

TrainResult train(const RunConfig& cfg, const DatasetPair& data, const TrainOptions& opt) {
  validate(cfg);
  const ModelConfig mcfg = cfg.model_config();
  check_classes(mcfg.classes, data.train);
  check_classes(mcfg.classes, data.test);
  if (data.train.size() == 0) throw Error("train: empty training split");
  if (data.train.channels() != mcfg.in_channels || data.train.height() != mcfg.in_height ||
      data.train.width() != mcfg.in_width) {
    throw ConfigError("dataset images do not match the model input shape");
  }

  const fs::path out(cfg.out);
  fs::create_directories(out);
  auto model = build_model(mcfg, cfg.seed);
  DataRng rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  int start_epoch = 0;
  double best = -1.0;
  std::vector<std::string> kept_lines;

  if (opt.resume) {
    const Checkpoint ck = load_checkpoint((out / "last.ckpt").string());
    if (ck.config_text != cfg.to_text()) {
      throw ConfigError("resume: config differs from the snapshot in " + (out / "last.ckpt").string());
    }
    restore_model(ck, *model);
    restore_rng(ck, rng);
    start_epoch = static_cast<int>(ck.epoch);
    best = ck.best_accuracy;
    for (const auto& l : read_lines(out / "metrics.jsonl")) {
      if (json::parse(l).at("epoch").get<int>() <= start_epoch) kept_lines.push_back(l);
    }
  }
  write_text(out / "config.txt", cfg.to_text());
  {
    std::ofstream m(out / "metrics.jsonl", std::ios::trunc);
    for (const auto& l : kept_lines) m << l << "\n";
  }

  TrainResult result;
  result.best_acc = std::max(best, 0.0);
  const auto params = model->parameters();
  std::vector<std::size_t> order(data.train.size());
  std::vector<std::size_t> idx;
  bool first_step = true;
  int ran = 0;

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const float lr = cosine_lr(epoch, cfg.epochs, cfg.lr);
    const SgdOptions sgd{lr, cfg.momentum, cfg.weight_decay};
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch) {
      const std::size_t e = std::min(order.size(), s + cfg.batch);
      idx.assign(order.begin() + static_cast<long>(s), order.begin() + static_cast<long>(e));
      const Batch b = make_batch(data.train, idx, cfg.augment ? &rng : nullptr);
      model->zero_grad();
      const ForwardResult fr = model->forward(b.images, b.labels, Mode::Train);
      model->backward();
      sgd_step(params, sgd);
      if (cfg.latent_clip > 0.0f) clip_latent_weights(*model, cfg.latent_clip);
      loss_sum += fr.loss * static_cast<double>(idx.size());
      if (first_step) {
        result.first_step_loss = fr.loss;
        first_step = false;
      }
      result.last_step_loss = fr.loss;
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.test_acc = evaluate(*model, data.test).top1;
    m.lr = lr;
    m.layers = quant_states(*model);
    {
      std::ofstream f(out / "metrics.jsonl", std::ios::app);
      f << m.to_json() << "\n";
    }
    if (opt.log) {
      *opt.log << "epoch " << m.epoch << "/" << cfg.epochs << " lr " << lr << " loss "
               << m.train_loss << " test_acc " << m.test_acc << "\n";
      opt.log->flush();
    }
    if (m.test_acc > best) {
      best = m.test_acc;
      save_checkpoint(capture_checkpoint(cfg, *model, static_cast<std::uint32_t>(epoch + 1), best, rng),
                      (out / "best.ckpt").string());
    }
    save_checkpoint(capture_checkpoint(cfg, *model, static_cast<std::uint32_t>(epoch + 1), best, rng),
                    (out / "last.ckpt").string());
    result.history.push_back(std::move(m));
    result.final_acc = result.history.back().test_acc;
    result.best_acc = best;
    if (opt.stop_after > 0 && ++ran >= opt.stop_after) break;
  }
  return result;
}

}  // namespace adabin
