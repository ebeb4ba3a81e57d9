// Command-line entry point: train, eval, bench, export, inspect.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "adabin/bundle.hpp"
#include "adabin/checkpoint.hpp"
#include "adabin/config.hpp"
#include "adabin/costmodel.hpp"
#include "adabin/error.hpp"
#include "adabin/report.hpp"
#include "adabin/train.hpp"

using namespace adabin;

namespace {

struct CommonFlags {
  std::string config;
  std::string data_dir;
  std::string out;
  std::string alpha_grad;
  std::string profile;
  std::string model;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key=value config file");
  cmd->add_option("--data-dir", f.data_dir, "dataset root (default: $ADABIN_DATA)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--alpha-grad", f.alpha_grad, "alpha gradient form")
      ->check(CLI::IsMember({"consistent", "paper"}));
  cmd->add_option("--profile", f.profile, "schedule profile")->check(CLI::IsMember({"paper", "desk"}));
  cmd->add_option("--model", f.model, "architecture id");
  cmd->add_option("--set", f.sets, "extra key=value override (repeatable)");
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&f](const std::uint64_t& s) { f.seed = s; f.seed_given = true; }, "run seed");
}

RunConfig build_config(const CommonFlags& f) {
  ConfigAssignments a;
  if (!f.config.empty()) a = read_config_file(f.config);
  std::string overrides;
  for (const auto& s : f.sets) overrides += s + "\n";
  for (auto& kv : parse_config_text(overrides, "--set")) a.push_back(kv);
  if (!f.profile.empty()) a.emplace_back("profile", f.profile);
  if (!f.model.empty()) a.emplace_back("model", f.model);
  if (!f.data_dir.empty()) a.emplace_back("data_dir", f.data_dir);
  if (!f.out.empty()) a.emplace_back("out", f.out);
  if (!f.alpha_grad.empty()) a.emplace_back("alpha_grad", f.alpha_grad);
  if (f.seed_given) a.emplace_back("seed", std::to_string(f.seed));
  RunConfig cfg = make_run_config(a);
  if (cfg.data_dir.empty()) {
    if (const char* env = std::getenv("ADABIN_DATA")) cfg.data_dir = env;
  }
  return cfg;
}

// Data directory for eval: explicit flag, then the environment, then the
// directory recorded in the checkpoint.
void resolve_data_dir(RunConfig& cfg, const std::string& flag) {
  if (!flag.empty()) {
    cfg.data_dir = flag;
  } else if (const char* env = std::getenv("ADABIN_DATA")) {
    cfg.data_dir = env;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AdaBin binary neural network trainer and packed inference tools"};
  app.require_subcommand(1);

  CommonFlags train_f;
  bool resume = false;
  auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoints + metrics");
  add_common(train_cmd, train_f);
  train_cmd->add_flag("--resume", resume, "continue from <out>/last.ckpt");

  std::string eval_ckpt, eval_bundle, eval_data, eval_logits;
  std::size_t eval_subset = 0;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or packed bundle");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--bundle", eval_bundle, "also evaluate this packed bundle");
  eval_cmd->add_option("--data-dir", eval_data, "dataset root (default: $ADABIN_DATA)");
  eval_cmd->add_option("--test-subset", eval_subset, "stratified test subset size");
  eval_cmd->add_option("--logits", eval_logits, "write logits as CSV");

  CommonFlags bench_f;
  std::string bench_ckpt;
  bool bench_json = false;
  auto* bench_cmd = app.add_subcommand("bench", "report operation and parameter costs");
  add_common(bench_cmd, bench_f);
  bench_cmd->add_option("--checkpoint", bench_ckpt, "take the model from a checkpoint");
  bench_cmd->add_flag("--json", bench_json, "emit JSON lines instead of a table");

  std::string export_ckpt, export_out;
  auto* export_cmd = app.add_subcommand("export", "pack a checkpoint into an inference bundle");
  export_cmd->add_option("--checkpoint", export_ckpt, "checkpoint file")->required();
  export_cmd->add_option("--out", export_out, "bundle path")->required();

  std::string inspect_ckpt;
  CommonFlags inspect_f;
  auto* inspect_cmd = app.add_subcommand("inspect", "dump quantizer parameters as JSON");
  inspect_cmd->add_option("--checkpoint", inspect_ckpt, "checkpoint file (default: fresh model)");
  add_common(inspect_cmd, inspect_f);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const RunConfig cfg = build_config(train_f);
      const DatasetPair data = prepare_data(cfg);
      std::cout << "training " << cfg.model_config().id() << " on " << data.train.size()
                << " examples, " << cfg.epochs << " epochs -> " << cfg.out << "\n";
      TrainOptions opt;
      opt.resume = resume;
      opt.log = &std::cout;
      const TrainResult r = train(cfg, data, opt);
      std::cout << "final test_acc " << r.final_acc << " best " << r.best_acc << "\n";
    } else if (*eval_cmd) {
      const Checkpoint ck = load_checkpoint(eval_ckpt);
      RunConfig cfg = ck.config();
      resolve_data_dir(cfg, eval_data);
      cfg.subset = 0;
      cfg.test_subset = eval_subset ? eval_subset : cfg.test_subset;
      const DatasetPair data = prepare_data(cfg);
      auto model = model_from_checkpoint(ck);
      const EvalReport rep = evaluate(*model, data.test, 250, !eval_logits.empty());
      nlohmann::json doc = nlohmann::json::parse(rep.to_json());
      if (!eval_bundle.empty()) {
        const PackedModel pm = load_bundle(eval_bundle);
        const EvalReport prep = evaluate_packed(pm, data.test);
        std::size_t same = 0;
        for (std::size_t i = 0; i < prep.count; ++i) same += prep.predictions[i] == rep.predictions[i];
        doc["bundle_top1"] = prep.top1;
        doc["matching_predictions"] = same;
      }
      std::cout << doc.dump() << "\n";
      if (!eval_logits.empty()) {
        std::ofstream f(eval_logits);
        const std::size_t k = rep.logits.dim(1);
        for (std::size_t i = 0; i < rep.count; ++i) {
          f << data.test.labels[i];
          for (std::size_t j = 0; j < k; ++j) f << "," << rep.logits[i * k + j];
          f << "\n";
        }
      }
    } else if (*bench_cmd) {
      std::unique_ptr<Model> model;
      if (!bench_ckpt.empty()) {
        model = model_from_checkpoint(load_checkpoint(bench_ckpt));
      } else {
        model = build_model(build_config(bench_f).model_config(), 0);
      }
      const ModelCostReport rep = model_cost(*model);
      const OverheadClaims canon = adabin_overhead();
      std::cout << (bench_json ? bench_json_lines(rep, canon) : bench_text(rep, canon));
    } else if (*export_cmd) {
      auto model = model_from_checkpoint(load_checkpoint(export_ckpt));
      const PackedModel pm = export_packed_model(*model);
      save_bundle(pm, export_out);
      std::cout << "wrote " << export_out << " (" << std::filesystem::file_size(export_out)
                << " bytes, " << pm.binary_layers() << " binary layers)\n";
    } else if (*inspect_cmd) {
      std::unique_ptr<Model> model;
      if (!inspect_ckpt.empty()) {
        model = model_from_checkpoint(load_checkpoint(inspect_ckpt));
      } else {
        const RunConfig cfg = build_config(inspect_f);
        model = build_model(cfg.model_config(), cfg.seed);
      }
      std::cout << inspect_json(*model) << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
