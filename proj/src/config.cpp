#include "adabin/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "adabin/error.hpp"
#include "binary_io.hpp"

namespace adabin {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw ConfigError("invalid value '" + v + "' for key '" + key + "'");
  }
  return out;
}

float parse_float(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const float f = std::stof(v, &used);
    if (used != v.size() || !std::isfinite(f)) throw std::invalid_argument(v);
    return f;
  } catch (const std::exception&) {
    throw ConfigError("invalid value '" + v + "' for key '" + key + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("invalid boolean '" + v + "' for key '" + key + "'");
}

std::string fmt_float(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void apply_profile(RunConfig& c, Profile p) {
  c.profile = p;
  if (p == Profile::Paper) {
    c.epochs = 400;
    c.batch = 256;
    c.lr = 0.1f;
    c.subset = 0;
  } else {
    c.epochs = 30;
    c.batch = 256;
    c.lr = 0.1f;
    c.subset = 10000;
  }
}

Profile profile_from_name(const std::string& s) {
  if (s == "paper") return Profile::Paper;
  if (s == "desk") return Profile::Desk;
  throw ConfigError("unknown profile '" + s + "'; valid: paper desk");
}

void apply_key(RunConfig& c, const std::string& key, const std::string& v) {
  if (key == "model") {
    model_config_from_id(v);
    c.model = v;
  } else if (key == "weight") {
    if (!v.empty()) weight_mode_from_name(v);
    c.weight = v;
  } else if (key == "activation") {
    if (!v.empty()) activation_mode_from_name(v);
    c.activation = v;
  } else if (key == "nonlinearity") {
    if (!v.empty()) nonlinearity_from_name(v);
    c.nonlinearity = v;
  } else if (key == "float_first") {
    c.float_first = parse_bool(key, v);
  } else if (key == "float_last") {
    c.float_last = parse_bool(key, v);
  } else if (key == "width") {
    c.width = parse_float(key, v);
  } else if (key == "dataset") {
    c.dataset = dataset_kind_from_name(v);
  } else if (key == "data_dir") {
    c.data_dir = v;
  } else if (key == "subset") {
    c.subset = parse_number<std::size_t>(key, v);
  } else if (key == "test_subset") {
    c.test_subset = parse_number<std::size_t>(key, v);
  } else if (key == "cifar_records") {
    c.cifar_records = parse_number<std::size_t>(key, v);
  } else if (key == "augment") {
    c.augment = parse_bool(key, v);
  } else if (key == "profile") {
    c.profile = profile_from_name(v);
  } else if (key == "epochs") {
    c.epochs = parse_number<int>(key, v);
  } else if (key == "batch") {
    c.batch = parse_number<std::size_t>(key, v);
  } else if (key == "lr") {
    c.lr = parse_float(key, v);
  } else if (key == "momentum") {
    c.momentum = parse_float(key, v);
  } else if (key == "weight_decay") {
    c.weight_decay = parse_float(key, v);
  } else if (key == "latent_clip") {
    c.latent_clip = parse_float(key, v);
  } else if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(key, v);
  } else if (key == "alpha_grad") {
    c.alpha_grad = alpha_grad_from_name(v);
  } else if (key == "out") {
    c.out = v;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

}  // namespace

const char* profile_name(Profile p) { return p == Profile::Paper ? "paper" : "desk"; }

AlphaGradMode alpha_grad_from_name(const std::string& s) {
  if (s == "consistent") return AlphaGradMode::Consistent;
  if (s == "paper") return AlphaGradMode::Paper;
  throw ConfigError("unknown alpha-gradient mode '" + s + "'; valid: consistent paper");
}

const char* alpha_grad_name(AlphaGradMode m) {
  return m == AlphaGradMode::Paper ? "paper" : "consistent";
}

WeightMode weight_mode_from_name(const std::string& s) {
  if (s == "scaled-sign") return WeightMode::ScaledSign;
  if (s == "adabin") return WeightMode::Adabin;
  if (s == "adabin-learnable") return WeightMode::AdabinLearnable;
  throw ConfigError("unknown weight mode '" + s + "'; valid: scaled-sign adabin adabin-learnable");
}

ActivationMode activation_mode_from_name(const std::string& s) {
  if (s == "sign") return ActivationMode::Sign;
  if (s == "adabin") return ActivationMode::Adabin;
  throw ConfigError("unknown activation mode '" + s + "'; valid: sign adabin");
}

Nonlinearity nonlinearity_from_name(const std::string& s) {
  // "a+b" lists are accepted so that contradictory combinations can be
  // reported as such rather than as unknown names.
  std::set<std::string> parts;
  std::stringstream ss(s);
  for (std::string p; std::getline(ss, p, '+');) parts.insert(trim(p));
  for (const auto& p : parts) {
    if (p != "none" && p != "prelu" && p != "maxout-pos" && p != "maxout") {
      throw ConfigError("unknown nonlinearity '" + p + "'; valid: none prelu maxout-pos maxout");
    }
  }
  if (parts.size() > 1) {
    throw ConfigError("contradictory nonlinearity '" + s + "': choose exactly one of none, prelu, "
                      "maxout-pos, maxout");
  }
  const std::string& p = *parts.begin();
  if (p == "none") return Nonlinearity::None;
  if (p == "prelu") return Nonlinearity::PReLU;
  if (p == "maxout-pos") return Nonlinearity::MaxoutPos;
  return Nonlinearity::Maxout;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m = model_config_from_id(model);
  if (!weight.empty()) m.weight = weight_mode_from_name(weight);
  if (!activation.empty()) m.activation = activation_mode_from_name(activation);
  if (!nonlinearity.empty()) m.nonlinearity = nonlinearity_from_name(nonlinearity);
  m.float_first = float_first;
  m.float_last = float_last;
  m.width = width;
  m.alpha_grad = alpha_grad;
  if (dataset == DatasetKind::Mnist) {
    m.in_channels = 1;
    m.in_height = 28;
    m.in_width = 28;
  }
  return m;
}

std::string RunConfig::to_text() const {
  std::ostringstream o;
  o << "model=" << model << "\n"
    << "weight=" << weight << "\n"
    << "activation=" << activation << "\n"
    << "nonlinearity=" << nonlinearity << "\n"
    << "float_first=" << (float_first ? "true" : "false") << "\n"
    << "float_last=" << (float_last ? "true" : "false") << "\n"
    << "width=" << fmt_float(width) << "\n"
    << "dataset=" << dataset_kind_name(dataset) << "\n"
    << "data_dir=" << data_dir << "\n"
    << "subset=" << subset << "\n"
    << "test_subset=" << test_subset << "\n"
    << "cifar_records=" << cifar_records << "\n"
    << "augment=" << (augment ? "true" : "false") << "\n"
    << "profile=" << profile_name(profile) << "\n"
    << "epochs=" << epochs << "\n"
    << "batch=" << batch << "\n"
    << "lr=" << fmt_float(lr) << "\n"
    << "momentum=" << fmt_float(momentum) << "\n"
    << "weight_decay=" << fmt_float(weight_decay) << "\n"
    << "latent_clip=" << fmt_float(latent_clip) << "\n"
    << "seed=" << seed << "\n"
    << "alpha_grad=" << alpha_grad_name(alpha_grad) << "\n"
    << "out=" << out << "\n";
  return o.str();
}

ConfigAssignments parse_config_text(const std::string& text, const std::string& origin) {
  ConfigAssignments out;
  std::map<std::string, std::pair<std::string, int>> seen;
  std::stringstream ss(text);
  int lineno = 0;
  for (std::string line; std::getline(ss, line);) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" +
                        line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    const auto it = seen.find(key);
    if (it != seen.end() && it->second.first != value) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": key '" + key +
                        "' contradicts line " + std::to_string(it->second.second) + " ('" +
                        it->second.first + "' vs '" + value + "')");
    }
    seen[key] = {value, lineno};
    out.emplace_back(key, value);
  }
  return out;
}

ConfigAssignments read_config_file(const std::string& path) {
  const auto bytes = io::read_file(path);
  return parse_config_text(std::string(bytes.begin(), bytes.end()), path);
}

RunConfig make_run_config(const ConfigAssignments& assignments) {
  RunConfig c;
  for (const auto& [k, v] : assignments) {
    if (k == "profile") apply_profile(c, profile_from_name(v));
  }
  for (const auto& [k, v] : assignments) {
    if (k != "profile") apply_key(c, k, v);
  }
  validate(c);
  return c;
}

void validate(const RunConfig& c) {
  const ModelConfig base = model_config_from_id(c.model);
  if (!base.binarize && (!c.weight.empty() || !c.activation.empty())) {
    throw ConfigError("model '" + c.model + "' is real-valued; weight/activation quantizer "
                      "toggles contradict it");
  }
  if (!c.nonlinearity.empty()) nonlinearity_from_name(c.nonlinearity);
  if (c.epochs <= 0) throw ConfigError("epochs must be positive");
  if (c.batch == 0) throw ConfigError("batch must be positive");
  if (c.lr < 0.0f) throw ConfigError("lr must be non-negative");
  if (c.momentum < 0.0f || c.momentum >= 1.0f) throw ConfigError("momentum must be in [0, 1)");
  if (c.weight_decay < 0.0f) throw ConfigError("weight_decay must be non-negative");
  if (c.latent_clip < 0.0f) throw ConfigError("latent_clip must be non-negative");
  if (c.width <= 0.0) throw ConfigError("width must be positive");
  if (c.out.empty()) throw ConfigError("out must name a directory");
}

}  // namespace adabin
