#include "adabin/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace adabin {

using nlohmann::json;

namespace {

json cost_json(const LayerCost& c) {
  return {{"float_ops", c.float_ops},
          {"binary_ops", c.binary_ops},
          {"params_bits", c.params_bits},
          {"extra_float_ops", c.extra_float_ops},
          {"extra_binary_ops", c.extra_binary_ops},
          {"extra_param_bits", c.extra_param_bits},
          {"ops", c.ops()}};
}

json stats_json(const std::vector<float>& v) {
  if (v.empty()) return nullptr;
  double sum = 0.0;
  for (float x : v) sum += x;
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  return {{"min", *mn}, {"max", *mx}, {"mean", sum / static_cast<double>(v.size())}};
}

std::string line(const char* fmt, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, fmt, a, b, c);
  return buf;
}

}  // namespace

std::string bench_text(const ModelCostReport& rep, const OverheadClaims& canonical) {
  std::ostringstream o;
  char buf[200];
  o << "model " << rep.model_id << "\n";
  std::snprintf(buf, sizeof buf, "%-24s %-16s %14s %14s %12s %14s\n", "layer", "kind", "FLOPs",
                "BOPs", "param bits", "OPs");
  o << buf;
  for (const auto& l : rep.layers) {
    const LayerCost& c = l.cost;
    std::snprintf(buf, sizeof buf, "%-24s %-16s %14llu %14llu %12llu %14.0f\n", l.name.c_str(),
                  l.kind.c_str(),
                  static_cast<unsigned long long>(c.float_ops + c.extra_float_ops),
                  static_cast<unsigned long long>(c.binary_ops + c.extra_binary_ops),
                  static_cast<unsigned long long>(c.total_param_bits()), c.ops());
    o << buf;
  }
  o << line("total OPs %.0f (float network %.0f)\n", rep.total_ops, rep.float_model_ops);
  o << line("speedup %.2fx, memory saving %.2fx, parameters %.0f bytes\n", rep.speedup,
            rep.memory_saving, rep.params_bytes);
  o << "canonical layer n=c=256 k=3 14x14 vs sign-binary:\n";
  o << line("  extra ops %.3f%%, extra params %.3f%%\n", canonical.extra_ops_pct,
            canonical.extra_params_pct);
  o << line("  speedup %.2fx, memory saving %.2fx vs float\n", canonical.speedup,
            canonical.memory_saving);
  return o.str();
}

std::string bench_json_lines(const ModelCostReport& rep, const OverheadClaims& canonical) {
  std::ostringstream o;
  for (const auto& l : rep.layers) {
    json j = {{"row", "layer"}, {"name", l.name}, {"kind", l.kind}, {"cost", cost_json(l.cost)},
              {"float_equivalent", cost_json(l.float_equivalent)}};
    o << j.dump() << "\n";
  }
  json total = {{"row", "model"},
                {"model", rep.model_id},
                {"total", cost_json(rep.total)},
                {"total_ops", rep.total_ops},
                {"float_model_ops", rep.float_model_ops},
                {"speedup", rep.speedup},
                {"memory_saving", rep.memory_saving},
                {"params_bytes", rep.params_bytes}};
  o << total.dump() << "\n";
  json canon = {{"row", "canonical"},
                {"n", 256}, {"c", 256}, {"k", 3}, {"out_h", 14}, {"out_w", 14},
                {"extra_ops_pct", canonical.extra_ops_pct},
                {"extra_params_pct", canonical.extra_params_pct},
                {"speedup", canonical.speedup},
                {"memory_saving", canonical.memory_saving}};
  o << canon.dump() << "\n";
  return o.str();
}

std::string inspect_json(Model& model) {
  json layers = json::array();
  json flagged = json::array();
  for (const BinaryConv2d* bc : model.binary_convs()) {
    const BinarySpec as = bc->activation_spec();
    const BinarySpec ws = bc->weight_spec();
    const bool all_positive = as.beta[0] - as.alpha[0] > 0.0f;
    json j = {{"name", bc->name()},
              {"weight_mode", weight_mode_name(bc->weight_mode())},
              {"activation_mode", activation_mode_name(bc->activation_mode())},
              {"alpha_a", as.alpha[0]},
              {"beta_a", as.beta[0]},
              {"binary_set", {as.lower(), as.upper()}},
              {"all_positive", all_positive},
              {"alpha_w", stats_json(ws.alpha)},
              {"beta_w", stats_json(ws.beta)}};
    layers.push_back(j);
    if (all_positive) flagged.push_back(bc->name());
  }
  json slopes = json::array();
  for (const auto& lp : model.layers()) {
    const Maxout* m = nullptr;
    if (const auto* u = dynamic_cast<const ResidualUnit*>(lp.get())) {
      m = dynamic_cast<const Maxout*>(u->act());
    } else {
      m = dynamic_cast<const Maxout*>(lp.get());
    }
    if (!m) continue;
    slopes.push_back({{"name", m->name()},
                      {"learn_plus", m->learns_plus()},
                      {"learn_minus", m->learns_minus()},
                      {"gamma_plus", stats_json(m->gamma_plus.value.storage())},
                      {"gamma_minus", stats_json(m->gamma_minus.value.storage())}});
  }
  json doc = {{"model", model.config().id()},
              {"binary_layers", layers},
              {"maxout", slopes},
              {"all_positive_layers", flagged}};
  return doc.dump(2);
}

}  // namespace adabin
